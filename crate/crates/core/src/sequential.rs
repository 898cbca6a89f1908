//! Classical sequential Kalman filter and Rauch-Tung-Striebel smoother
//! over a linearized model.
//!
//! This is the baseline the parallel engine is benchmarked against and
//! the correctness oracle its outputs are compared to. Clarity and
//! numerical trustworthiness beat speed here: covariance updates use
//! the Joseph-stabilized form.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::gaussmath::{spd_factorize, symmetrize, SymMatrix};
use crate::linearize::LinearizationParams;

/// Gaussian marginal over one state: mean and covariance.
#[derive(Debug, Clone)]
pub struct GaussianBelief {
    pub mean: DVector<f64>,
    pub cov: SymMatrix,
}

/// One Kalman predict-update step with the affine parameters of
/// `lin`, returning the posterior after measurement `y`.
///
/// Process/measurement noise are inflated by the linearization
/// residuals: `Q' = Q + f_res`, `R' = R + h_res`.
pub(crate) fn kf_step(
    belief: &GaussianBelief,
    lin: &LinearizationParams,
    y: &DVector<f64>,
    q: &SymMatrix,
    r: &SymMatrix,
    step: usize,
) -> Result<GaussianBelief> {
    let q_eff = symmetrize(&(q.matrix() + lin.f_res.matrix()))?;
    let r_eff = symmetrize(&(r.matrix() + lin.h_res.matrix()))?;

    // predict
    let mean_pred = &lin.f_mat * &belief.mean + &lin.f_off;
    let cov_pred = symmetrize(
        &(&lin.f_mat * belief.cov.matrix() * lin.f_mat.transpose() + q_eff.matrix()),
    )?;

    // update, Joseph-stabilized
    let innovation_cov = symmetrize(
        &(&lin.h_mat * cov_pred.matrix() * lin.h_mat.transpose() + r_eff.matrix()),
    )?;
    let factor = spd_factorize(&innovation_cov).map_err(|e| e.with_step(step))?;
    let gain = factor
        .solve_mat(&(&lin.h_mat * cov_pred.matrix()))
        .transpose();
    let residual = y - &lin.h_mat * &mean_pred - &lin.h_off;
    let mean = mean_pred + &gain * residual;
    let nx = mean.len();
    let i_kh = DMatrix::identity(nx, nx) - &gain * &lin.h_mat;
    let cov = symmetrize(
        &(&i_kh * cov_pred.matrix() * i_kh.transpose()
            + &gain * r_eff.matrix() * gain.transpose()),
    )?;
    Ok(GaussianBelief { mean, cov })
}

/// Forward Kalman filter over linearized parameters, returning the
/// filtered marginals at steps `1..=n`.
pub fn kf_forward(
    lin_params: &[LinearizationParams],
    ys: &[DVector<f64>],
    prior: &GaussianBelief,
    q: &SymMatrix,
    r: &SymMatrix,
) -> Result<Vec<GaussianBelief>> {
    if ys.is_empty() {
        return Err(Error::EmptyInput {
            context: "kf_forward",
        });
    }
    if lin_params.len() != ys.len() {
        return Err(Error::Dimension {
            context: "kf_forward",
            detail: format!(
                "{} linearization records for {} measurements",
                lin_params.len(),
                ys.len()
            ),
        });
    }
    let mut out = Vec::with_capacity(ys.len());
    let mut current = prior.clone();
    for (i, (lin, y)) in lin_params.iter().zip(ys).enumerate() {
        current = kf_step(&current, lin, y, q, r, i + 1)?;
        out.push(current.clone());
    }
    Ok(out)
}

/// One backward smoothing step: combine the filtered belief at `k`
/// with the smoothed belief at `k+1` through the transition in
/// `lin_next` (which carries `F_k, c_k, Λ_k`).
pub(crate) fn rts_step(
    filtered: &GaussianBelief,
    lin_next: &LinearizationParams,
    q: &SymMatrix,
    next_smoothed: &GaussianBelief,
    step: usize,
) -> Result<GaussianBelief> {
    let q_eff = symmetrize(&(q.matrix() + lin_next.f_res.matrix()))?;
    let cov_pred = symmetrize(
        &(&lin_next.f_mat * filtered.cov.matrix() * lin_next.f_mat.transpose() + q_eff.matrix()),
    )?;
    let factor = spd_factorize(&cov_pred).map_err(|e| e.with_step(step))?;
    // gain = P* Fᵀ (F P* Fᵀ + Q')⁻¹
    let gain = factor
        .solve_mat(&(&lin_next.f_mat * filtered.cov.matrix()))
        .transpose();
    let mean_pred = &lin_next.f_mat * &filtered.mean + &lin_next.f_off;
    let mean = &filtered.mean + &gain * (&next_smoothed.mean - mean_pred);
    let cov = symmetrize(
        &(filtered.cov.matrix()
            + &gain * (next_smoothed.cov.matrix() - cov_pred.matrix()) * gain.transpose()),
    )?;
    Ok(GaussianBelief { mean, cov })
}

/// Rauch-Tung-Striebel backward pass over filtered marginals. The last
/// smoothed belief equals the last filtered belief.
pub fn rts_backward(
    filtered: &[GaussianBelief],
    lin_params: &[LinearizationParams],
    q: &SymMatrix,
) -> Result<Vec<GaussianBelief>> {
    if filtered.is_empty() {
        return Err(Error::EmptyInput {
            context: "rts_backward",
        });
    }
    if lin_params.len() != filtered.len() {
        return Err(Error::Dimension {
            context: "rts_backward",
            detail: format!(
                "{} linearization records for {} filtered beliefs",
                lin_params.len(),
                filtered.len()
            ),
        });
    }
    let n = filtered.len();
    let mut out = vec![filtered[n - 1].clone()];
    for i in (0..n - 1).rev() {
        let next = out.last().expect("non-empty");
        let smoothed = rts_step(&filtered[i], &lin_params[i + 1], q, next, i + 1)?;
        out.push(smoothed);
    }
    out.reverse();
    Ok(out)
}

/// Extend smoothing to the prior: smooth the `k = 0` state from the
/// smoothed belief at `k = 1` through the first transition.
pub fn smooth_prior(
    prior: &GaussianBelief,
    first: &LinearizationParams,
    q: &SymMatrix,
    smoothed_first: &GaussianBelief,
) -> Result<GaussianBelief> {
    rts_step(prior, first, q, smoothed_first, 0)
}
