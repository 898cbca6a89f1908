//! Per-step affine approximations of the model's nonlinear transition
//! and observation functions.
//!
//! Two backends produce the same parameter record: first-order Taylor
//! expansion at nominal means (zero residual covariance), and
//! statistical linear regression (SLR) through third-degree cubature
//! sigma points at nominal means and covariances. The residual
//! covariances feed the filters as inflated process/measurement noise.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::gaussmath::{psd_clip, spd_factorize, symmetrize, SymMatrix};
use crate::model::StateSpaceModel;

/// Affine approximation of one time step:
/// `f(x) ≈ f_mat·x + f_off` with residual covariance `f_res`, and
/// `h(x) ≈ h_mat·x + h_off` with residual covariance `h_res`.
///
/// Record `i` (0-based) covers the transition from step `i` to `i+1`
/// and the observation at step `i+1`.
#[derive(Debug, Clone)]
pub struct LinearizationParams {
    pub f_mat: DMatrix<f64>,
    pub f_off: DVector<f64>,
    pub f_res: SymMatrix,
    pub h_mat: DMatrix<f64>,
    pub h_off: DVector<f64>,
    pub h_res: SymMatrix,
}

/// Trajectory to linearize about: means `x̄_0..x̄_n`, and for the SLR
/// backend also covariances `P̄_0..P̄_n`.
#[derive(Debug, Clone)]
pub struct NominalTrajectory {
    pub means: Vec<DVector<f64>>,
    pub covs: Option<Vec<SymMatrix>>,
}

impl NominalTrajectory {
    /// Number of transitions `n` (one less than stored points).
    pub fn steps(&self) -> usize {
        self.means.len().saturating_sub(1)
    }

    fn validate(&self, need_covs: bool) -> Result<()> {
        if self.means.len() < 2 {
            return Err(Error::EmptyInput {
                context: "nominal trajectory",
            });
        }
        match (&self.covs, need_covs) {
            (None, true) => Err(Error::MissingCovariances),
            (Some(covs), _) if covs.len() != self.means.len() => Err(Error::Dimension {
                context: "nominal trajectory",
                detail: format!("{} means but {} covariances", self.means.len(), covs.len()),
            }),
            _ => Ok(()),
        }
    }
}

/// First-order Taylor linearization at the nominal means.
///
/// Per step: `f_mat = ∇f(x̄_{k-1})`, `f_off = f(x̄_{k-1}) - f_mat·x̄_{k-1}`,
/// likewise for `h` at `x̄_k`; residual covariances are exactly zero.
pub fn taylor_linearize(
    model: &dyn StateSpaceModel,
    nominal: &NominalTrajectory,
) -> Result<Vec<LinearizationParams>> {
    nominal.validate(false)?;
    let nx = model.state_dim();
    let ny = model.measurement_dim();
    (1..nominal.means.len())
        .map(|k| {
            let prev = &nominal.means[k - 1];
            let here = &nominal.means[k];
            let f_mat = model.transition_jacobian(prev);
            let f_off = model.transition(prev) - &f_mat * prev;
            let h_mat = model.observation_jacobian(here)?;
            let h_off = model.observation(here)? - &h_mat * here;
            Ok(LinearizationParams {
                f_mat,
                f_off,
                f_res: SymMatrix::zeros(nx),
                h_mat,
                h_off,
                h_res: SymMatrix::zeros(ny),
            })
        })
        .collect()
}

/// Third-degree cubature rule: `2·dim` points at
/// `mean ± sqrt(dim) · L·e_j` with `cov = L·Lᵀ`, all weighted
/// `1/(2·dim)`. Exact for polynomials up to degree 3 under the
/// Gaussian; the weighted first two sample moments reproduce the
/// inputs.
pub fn cubature_points(
    mean: &DVector<f64>,
    cov: &SymMatrix,
) -> Result<(Vec<DVector<f64>>, Vec<f64>)> {
    let dim = mean.len();
    if cov.dim() != dim {
        return Err(Error::Dimension {
            context: "cubature_points",
            detail: format!("mean has {} entries, cov is {}x{}", dim, cov.dim(), cov.dim()),
        });
    }
    Ok(points_from_lower(mean, &spd_factorize(cov)?.lower()))
}

fn points_from_lower(mean: &DVector<f64>, lower: &DMatrix<f64>) -> (Vec<DVector<f64>>, Vec<f64>) {
    let dim = mean.len();
    let scale = (dim as f64).sqrt();
    let mut points = Vec::with_capacity(2 * dim);
    for j in 0..dim {
        let column = lower.column(j) * scale;
        points.push(mean + &column);
        points.push(mean - &column);
    }
    let weights = vec![1.0 / (2.0 * dim as f64); 2 * dim];
    (points, weights)
}

/// Statistical linear regression of `func` under `N(mean, cov)` using
/// the cubature rule of [`cubature_points`].
///
/// Matches the moments `z̄ = Σ wⱼ Zⱼ`, `Ψ = Σ wⱼ (Xⱼ-x̄)(Zⱼ-z̄)ᵀ`,
/// `Φ = Σ wⱼ (Zⱼ-z̄)(Zⱼ-z̄)ᵀ` and returns the gain `Ψᵀ·cov⁻¹`
/// (computed as a solve, never an explicit inverse), the offset
/// `z̄ - gain·mean`, and the clipped residual covariance
/// `Φ - gain·cov·gainᵀ`.
pub fn slr_linearize_fn<F>(
    func: F,
    mean: &DVector<f64>,
    cov: &SymMatrix,
) -> Result<(DMatrix<f64>, DVector<f64>, SymMatrix)>
where
    F: Fn(&DVector<f64>) -> Result<DVector<f64>>,
{
    if cov.dim() != mean.len() {
        return Err(Error::Dimension {
            context: "slr_linearize_fn",
            detail: format!(
                "mean has {} entries, cov is {}x{}",
                mean.len(),
                cov.dim(),
                cov.dim()
            ),
        });
    }
    // one factorization serves both the sigma points and the gain solve
    let factor = spd_factorize(cov)?;
    let (points, weights) = points_from_lower(mean, &factor.lower());
    slr_core(func, mean, cov, &factor, &points, &weights)
}

/// Same regression against a caller-supplied sigma-point rule, for
/// point sets other than the shipped cubature rule. Weights must sum
/// to 1 and the points' weighted mean should reproduce `mean`.
pub fn slr_from_points<F>(
    func: F,
    mean: &DVector<f64>,
    cov: &SymMatrix,
    points: &[DVector<f64>],
    weights: &[f64],
) -> Result<(DMatrix<f64>, DVector<f64>, SymMatrix)>
where
    F: Fn(&DVector<f64>) -> Result<DVector<f64>>,
{
    if points.is_empty() || points.len() != weights.len() {
        return Err(Error::Dimension {
            context: "slr_from_points",
            detail: format!("{} points for {} weights", points.len(), weights.len()),
        });
    }
    let factor = spd_factorize(cov)?;
    slr_core(func, mean, cov, &factor, points, weights)
}

fn slr_core<F>(
    func: F,
    mean: &DVector<f64>,
    cov: &SymMatrix,
    factor: &crate::gaussmath::SpdFactor,
    points: &[DVector<f64>],
    weights: &[f64],
) -> Result<(DMatrix<f64>, DVector<f64>, SymMatrix)>
where
    F: Fn(&DVector<f64>) -> Result<DVector<f64>>,
{
    let images: Vec<DVector<f64>> = points.iter().map(&func).collect::<Result<_>>()?;
    let out_dim = images[0].len();
    let in_dim = mean.len();

    let mut z_bar = DVector::zeros(out_dim);
    for (w, z) in weights.iter().zip(&images) {
        z_bar += z * *w;
    }
    let mut cross = DMatrix::zeros(in_dim, out_dim);
    let mut spread = DMatrix::zeros(out_dim, out_dim);
    for ((w, x), z) in weights.iter().zip(points).zip(&images) {
        let dx = x - mean;
        let dz = z - &z_bar;
        cross += *w * &dx * dz.transpose();
        spread += *w * &dz * dz.transpose();
    }

    // gain = crossᵀ · cov⁻¹, via cov · X = cross
    let gain = factor.solve_mat(&cross).transpose();
    let offset = &z_bar - &gain * mean;
    let residual = psd_clip(&symmetrize(
        &(spread - &gain * cov.matrix() * gain.transpose()),
    )?);
    Ok((gain, offset, residual))
}

/// SLR linearization of the whole trajectory: the transition leg at
/// `(x̄_{k-1}, P̄_{k-1})` and the observation leg at `(x̄_k, P̄_k)`.
/// Per-step regressions are independent and run in parallel.
pub fn slr_linearize(
    model: &dyn StateSpaceModel,
    nominal: &NominalTrajectory,
) -> Result<Vec<LinearizationParams>> {
    nominal.validate(true)?;
    let covs = nominal.covs.as_ref().expect("validated above");
    (1..nominal.means.len())
        .into_par_iter()
        .map(|k| {
            let (f_mat, f_off, f_res) = slr_linearize_fn(
                |x| Ok(model.transition(x)),
                &nominal.means[k - 1],
                &covs[k - 1],
            )?;
            let (h_mat, h_off, h_res) =
                slr_linearize_fn(|x| model.observation(x), &nominal.means[k], &covs[k])?;
            Ok(LinearizationParams {
                f_mat,
                f_off,
                f_res,
                h_mat,
                h_off,
                h_res,
            })
        })
        .collect()
}
