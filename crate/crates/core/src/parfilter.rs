//! Parallel-in-time filtering: per-step scan elements built from the
//! linearized model, an associative combine, and marginal extraction
//! from the prefix scan.
//!
//! Element `k` packages the conditional density of `x_k` given
//! `(y_k, x_{k-1})` as an affine-Gaussian map `(a, b, c_cov)` together
//! with the likelihood contribution of `y_k` on `x_{k-1}` in
//! information form `(eta, j_info)`. The combine below is associative,
//! so the filtering marginals are exactly the inclusive prefix
//! products.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::gaussmath::{spd_factorize, symmetrize, SymMatrix};
use crate::linearize::LinearizationParams;
use crate::scan::{self, inclusive_scan, ScanMode, ScanPlan};
use crate::sequential::{kf_step, GaussianBelief};

/// Filtering scan element `(a, b, c_cov, eta, j_info)`.
///
/// Prefix products of these elements carry the filtered mean in `b`
/// and the filtered covariance in `c_cov`.
#[derive(Debug, Clone)]
pub struct FilterElement {
    pub a: DMatrix<f64>,
    pub b: DVector<f64>,
    pub c_cov: SymMatrix,
    pub eta: DVector<f64>,
    pub j_info: SymMatrix,
}

/// Generic interior element for step `k >= 2`, from the step-`k`
/// linearization, the measurement `y_k`, and the base noise
/// covariances (inflated by the linearization residuals).
///
/// With `Q' = Q + f_res`, `R' = R + h_res` and `S = H Q' Hᵀ + R'`:
/// `K = Q' Hᵀ S⁻¹`, `a = (I - K H) F`, `b = c + K (y - H c - d)`,
/// `c_cov = (I - K H) Q'`, `eta = Fᵀ Hᵀ S⁻¹ (y - H c - d)` and
/// `j_info = Fᵀ Hᵀ S⁻¹ H F`. All inverse applications are solves
/// against one factorization of `S`.
pub fn make_filter_element(
    lin: &LinearizationParams,
    y: &DVector<f64>,
    q: &SymMatrix,
    r: &SymMatrix,
    step: usize,
) -> Result<FilterElement> {
    let q_eff = symmetrize(&(q.matrix() + lin.f_res.matrix()))?;
    let r_eff = symmetrize(&(r.matrix() + lin.h_res.matrix()))?;
    let innovation_cov = symmetrize(
        &(&lin.h_mat * q_eff.matrix() * lin.h_mat.transpose() + r_eff.matrix()),
    )?;
    let factor = spd_factorize(&innovation_cov).map_err(|e| e.with_step(step))?;

    // gain = Q' Hᵀ S⁻¹ as (S⁻¹ H Q')ᵀ
    let gain = factor
        .solve_mat(&(&lin.h_mat * q_eff.matrix()))
        .transpose();
    let nx = lin.f_mat.nrows();
    let i_kh = DMatrix::identity(nx, nx) - &gain * &lin.h_mat;
    let residual = y - &lin.h_mat * &lin.f_off - &lin.h_off;

    let hf = &lin.h_mat * &lin.f_mat;
    let s_inv_hf = factor.solve_mat(&hf);

    Ok(FilterElement {
        a: &i_kh * &lin.f_mat,
        b: &lin.f_off + &gain * &residual,
        c_cov: symmetrize(&(&i_kh * q_eff.matrix()))?,
        eta: hf.transpose() * factor.solve_vec(&residual),
        j_info: symmetrize(&(hf.transpose() * s_inv_hf))?,
    })
}

/// Boundary element for step 1: a conventional Kalman predict-update
/// from the prior produces `p(x_1 | y_1)`, stored with `a = 0` and
/// `eta = 0`, `j_info = 0` so no combine from the left is ever needed.
pub fn make_first_element(
    prior: &GaussianBelief,
    lin: &LinearizationParams,
    y: &DVector<f64>,
    q: &SymMatrix,
    r: &SymMatrix,
) -> Result<FilterElement> {
    let posterior = kf_step(prior, lin, y, q, r, 1)?;
    let nx = posterior.mean.len();
    Ok(FilterElement {
        a: DMatrix::zeros(nx, nx),
        b: posterior.mean,
        c_cov: posterior.cov,
        eta: DVector::zeros(nx),
        j_info: SymMatrix::zeros(nx),
    })
}

/// Associative combine of two filtering elements.
///
/// The inverse applications of `(I + C_i J_j)` and its transpose are
/// LU solves; the matrices are nonsingular whenever `C_i` and `J_j`
/// are PSD, so failure signals numerical breakdown rather than a
/// modeling error. Output covariances are re-symmetrized.
pub fn combine_filter(left: &FilterElement, right: &FilterElement) -> Result<FilterElement> {
    let nx = left.a.nrows();
    let identity = DMatrix::<f64>::identity(nx, nx);

    let singular = || Error::Singular {
        context: "combine_filter",
        step: None,
    };

    let m_cj = &identity + left.c_cov.matrix() * right.j_info.matrix();
    let lu_cj = m_cj.lu();

    let a = &right.a * lu_cj.solve(&left.a).ok_or_else(singular)?;
    let b_rhs = &left.b + left.c_cov.matrix() * &right.eta;
    let b = &right.a * lu_cj.solve(&b_rhs).ok_or_else(singular)? + &right.b;
    let c_cov = symmetrize(
        &(&right.a * lu_cj.solve(left.c_cov.matrix()).ok_or_else(singular)?
            * right.a.transpose()
            + right.c_cov.matrix()),
    )?;

    let m_jc = &identity + right.j_info.matrix() * left.c_cov.matrix();
    let lu_jc = m_jc.lu();

    let eta_rhs = &right.eta - right.j_info.matrix() * &left.b;
    let eta = left.a.transpose() * lu_jc.solve(&eta_rhs).ok_or_else(singular)? + &left.eta;
    let j_info = symmetrize(
        &(left.a.transpose() * lu_jc.solve(right.j_info.matrix()).ok_or_else(singular)?
            * &left.a
            + left.j_info.matrix()),
    )?;

    Ok(FilterElement {
        a,
        b,
        c_cov,
        eta,
        j_info,
    })
}

/// Build all filtering elements and reduce them with an inclusive
/// prefix scan; the filtered marginal at step `k` is `(b, c_cov)` of
/// prefix `k`.
///
/// Returns the marginals at steps `1..=n` plus the number of combine
/// calls (0 unless the plan counts them).
pub fn parallel_filter(
    lin_params: &[LinearizationParams],
    ys: &[DVector<f64>],
    prior: &GaussianBelief,
    q: &SymMatrix,
    r: &SymMatrix,
    plan: &ScanPlan,
) -> Result<(Vec<GaussianBelief>, u64)> {
    if ys.is_empty() {
        return Err(Error::EmptyInput {
            context: "parallel_filter",
        });
    }
    if lin_params.len() != ys.len() {
        return Err(Error::Dimension {
            context: "parallel_filter",
            detail: format!(
                "{} linearization records for {} measurements",
                lin_params.len(),
                ys.len()
            ),
        });
    }

    let build = || -> Result<Vec<FilterElement>> {
        let first = make_first_element(prior, &lin_params[0], &ys[0], q, r)?;
        let rest: Result<Vec<FilterElement>> = lin_params[1..]
            .par_iter()
            .zip(ys[1..].par_iter())
            .enumerate()
            .map(|(i, (lin, y))| make_filter_element(lin, y, q, r, i + 2))
            .collect();
        let mut elements = vec![first];
        elements.extend(rest?);
        Ok(elements)
    };
    let elements = match plan.mode {
        ScanMode::Parallel => scan::pool_for(plan.worker_budget)?.install(build)?,
        ScanMode::Sequential => build()?,
    };

    let out = inclusive_scan(elements, combine_filter, plan)?;
    let beliefs = out
        .values
        .into_iter()
        .map(|e| GaussianBelief {
            mean: e.b,
            cov: e.c_cov,
        })
        .collect();
    Ok((beliefs, out.combine_calls))
}
