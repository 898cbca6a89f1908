//! Parallel-in-time smoothing: scan elements built from filtered
//! marginals, an associative combine, and marginal extraction from the
//! suffix scan.
//!
//! Element `k` is the affine-Gaussian map `(e, g, l_cov)` representing
//! `p(x_k | y_{1:k}, x_{k+1})`; the terminal element at `k = n` carries
//! the filtered marginal itself with `e = 0`. Suffix products then hold
//! the smoothed mean in `g` and the smoothed covariance in `l_cov`.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::gaussmath::{spd_factorize, symmetrize, SymMatrix};
use crate::linearize::LinearizationParams;
use crate::scan::{self, reverse_scan, ScanMode, ScanPlan};
use crate::sequential::GaussianBelief;

/// Smoothing scan element `(e, g, l_cov)`.
#[derive(Debug, Clone)]
pub struct SmootherElement {
    pub e: DMatrix<f64>,
    pub g: DVector<f64>,
    pub l_cov: SymMatrix,
}

/// Element for the filtered belief at step `k`.
///
/// `transition` carries the step `k -> k+1` parameters
/// `(F_k, c_k, Λ_k)` and must be `None` exactly for the terminal step,
/// whose element is `(0, mean, cov)` verbatim. For interior steps, with
/// `S_p = F P* Fᵀ + Q'`: `e = P* Fᵀ S_p⁻¹` (a solve, not an inverse),
/// `g = x* - e (F x* + c)`, `l_cov = P* - e F P*`.
pub fn make_smoother_element(
    filtered: &GaussianBelief,
    transition: Option<&LinearizationParams>,
    q: &SymMatrix,
    step: usize,
) -> Result<SmootherElement> {
    let nx = filtered.mean.len();
    let Some(lin) = transition else {
        return Ok(SmootherElement {
            e: DMatrix::zeros(nx, nx),
            g: filtered.mean.clone(),
            l_cov: filtered.cov.clone(),
        });
    };
    let q_eff = symmetrize(&(q.matrix() + lin.f_res.matrix()))?;
    let cov_pred = symmetrize(
        &(&lin.f_mat * filtered.cov.matrix() * lin.f_mat.transpose() + q_eff.matrix()),
    )?;
    let factor = spd_factorize(&cov_pred).map_err(|e| e.with_step(step))?;
    let e = factor
        .solve_mat(&(&lin.f_mat * filtered.cov.matrix()))
        .transpose();
    let g = &filtered.mean - &e * (&lin.f_mat * &filtered.mean + &lin.f_off);
    let l_cov = symmetrize(
        &(filtered.cov.matrix() - &e * &lin.f_mat * filtered.cov.matrix()),
    )?;
    Ok(SmootherElement { e, g, l_cov })
}

/// Associative combine: `e = e_i e_j`, `g = e_i g_j + g_i`,
/// `l = e_i l_j e_iᵀ + l_i`.
pub fn combine_smoother(left: &SmootherElement, right: &SmootherElement) -> Result<SmootherElement> {
    Ok(SmootherElement {
        e: &left.e * &right.e,
        g: &left.e * &right.g + &left.g,
        l_cov: symmetrize(
            &(&left.e * right.l_cov.matrix() * left.e.transpose() + left.l_cov.matrix()),
        )?,
    })
}

/// Build smoothing elements from filtered marginals and reduce them
/// with an inclusive suffix scan; the smoothed marginal at step `k` is
/// `(g, l_cov)` of the suffix product starting at `k`. The terminal
/// marginal equals the filtered one bitwise.
///
/// Returns the marginals at steps `1..=n` plus the number of combine
/// calls (0 unless the plan counts them).
pub fn parallel_smooth(
    filtered: &[GaussianBelief],
    lin_params: &[LinearizationParams],
    q: &SymMatrix,
    plan: &ScanPlan,
) -> Result<(Vec<GaussianBelief>, u64)> {
    if filtered.is_empty() {
        return Err(Error::EmptyInput {
            context: "parallel_smooth",
        });
    }
    if lin_params.len() != filtered.len() {
        return Err(Error::Dimension {
            context: "parallel_smooth",
            detail: format!(
                "{} linearization records for {} filtered beliefs",
                lin_params.len(),
                filtered.len()
            ),
        });
    }
    let n = filtered.len();
    let build = || -> Result<Vec<SmootherElement>> {
        filtered
            .par_iter()
            .enumerate()
            .map(|(i, belief)| {
                let transition = (i + 1 < n).then(|| &lin_params[i + 1]);
                make_smoother_element(belief, transition, q, i + 1)
            })
            .collect()
    };
    let elements = match plan.mode {
        ScanMode::Parallel => scan::pool_for(plan.worker_budget)?.install(build)?,
        ScanMode::Sequential => build()?,
    };

    let out = reverse_scan(elements, combine_smoother, plan)?;
    let beliefs = out
        .values
        .into_iter()
        .map(|e| GaussianBelief {
            mean: e.g,
            cov: e.l_cov,
        })
        .collect();
    Ok((beliefs, out.combine_calls))
}
