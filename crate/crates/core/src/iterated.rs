//! Outer loop of the iterated smoothers: relinearize about the previous
//! smoothing pass, run a filter+smoother engine, repeat.
//!
//! IEKS linearizes by Taylor expansion at the previous smoothed means;
//! IPLS by statistical linear regression at the previous smoothed means
//! and covariances. The very first pass has no previous trajectory: it
//! runs a standard extended (or sigma-point) filter-smoother that
//! linearizes each step at the running predicted/filtered moments,
//! which is how the non-iterated versions of these smoothers operate.

use std::time::{Duration, Instant};

use nalgebra::DVector;

use crate::error::{Error, Result};
use crate::gaussmath::{symmetrize, SymMatrix};
use crate::linearize::{
    slr_linearize, slr_linearize_fn, taylor_linearize, LinearizationParams, NominalTrajectory,
};
use crate::model::StateSpaceModel;
use crate::parfilter::parallel_filter;
use crate::parsmoother::parallel_smooth;
use crate::scan::ScanPlan;
use crate::sequential::{kf_forward, rts_backward, smooth_prior, GaussianBelief};

/// Linearization strategy of the outer loop.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Method {
    /// Iterated extended Kalman smoother: first-order Taylor at the
    /// previous smoothed means, zero residual covariances.
    Ieks,
    /// Iterated posterior linearization smoother: cubature SLR at the
    /// previous smoothed means and covariances.
    Ipls,
}

/// Which filter+smoother implementation executes each pass.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Engine {
    /// Classical Kalman filter + RTS recursion.
    Sequential,
    /// Scan-based parallel-in-time filter + smoother.
    Parallel,
}

#[derive(Debug, Clone)]
pub struct IterationConfig {
    pub method: Method,
    pub engine: Engine,
    /// Outer iterations `M >= 1`.
    pub iterations: usize,
    /// Optional convergence cutoff on `max_k |x̄_k^(i) - x̄_k^(i-1)|∞`;
    /// off by default (fixed iteration count).
    pub early_stop_tol: Option<f64>,
    /// Scan execution plan used by the parallel engine.
    pub plan: ScanPlan,
}

impl IterationConfig {
    pub fn new(method: Method, engine: Engine, iterations: usize) -> Self {
        IterationConfig {
            method,
            engine,
            iterations,
            early_stop_tol: None,
            plan: ScanPlan::parallel(default_workers()),
        }
    }
}

/// Default worker budget: the `PIKS_WORKERS` environment variable when
/// set, otherwise the machine's available parallelism.
pub fn default_workers() -> usize {
    if let Ok(v) = std::env::var("PIKS_WORKERS") {
        if let Ok(n) = v.trim().parse::<usize>() {
            if n >= 1 {
                return n;
            }
        }
    }
    std::thread::available_parallelism()
        .map(|n| n.get())
        .unwrap_or(1)
}

/// One recorded outer iteration: the smoothed trajectory it produced
/// and how long the full pass (linearize + filter + smooth) took.
#[derive(Debug, Clone)]
pub struct IterationRecord {
    pub nominal: NominalTrajectory,
    pub wall_time: Duration,
}

/// Result of [`run_iterated`].
#[derive(Debug, Clone)]
pub struct IterationTrace {
    /// Per-iteration outputs, in order; fewer than `iterations` entries
    /// only when early stopping triggered.
    pub records: Vec<IterationRecord>,
    /// Final smoothed marginals at steps `0..=n`.
    pub smoothed: Vec<GaussianBelief>,
    /// Final filtered marginals at steps `1..=n`.
    pub filtered: Vec<GaussianBelief>,
    /// Total scan combine calls across all passes (0 unless the plan
    /// counts them or the engine is sequential).
    pub combine_calls: u64,
}

/// Run the configured iterated smoother over measurements `y_1..y_n`.
pub fn run_iterated(
    model: &dyn StateSpaceModel,
    ys: &[DVector<f64>],
    config: &IterationConfig,
) -> Result<IterationTrace> {
    if ys.is_empty() {
        return Err(Error::EmptyInput {
            context: "run_iterated",
        });
    }
    if config.iterations == 0 {
        return Err(Error::Dimension {
            context: "run_iterated",
            detail: "iteration count must be at least 1".to_string(),
        });
    }
    let prior = GaussianBelief {
        mean: model.prior_mean().clone(),
        cov: model.prior_cov().clone(),
    };
    let q = model.process_noise_cov();
    let r = model.measurement_noise_cov();

    let mut nominal = initial_pass(model, ys, config.method, &prior)
        .map_err(|e| Error::Iteration {
            iteration: 0,
            source: Box::new(e),
        })?;
    let mut records: Vec<IterationRecord> = Vec::with_capacity(config.iterations);
    let mut combine_calls = 0u64;
    let mut last_filtered = Vec::new();
    let mut last_smoothed = Vec::new();

    for iteration in 1..=config.iterations {
        let started = Instant::now();
        let pass = run_pass(model, ys, &prior, q, r, &nominal, config)
            .map_err(|e| Error::Iteration {
                iteration,
                source: Box::new(e),
            })?;
        let wall_time = started.elapsed();
        combine_calls += pass.combine_calls;

        let change = max_mean_change(&nominal.means, &pass.nominal.means);
        nominal = pass.nominal.clone();
        records.push(IterationRecord {
            nominal: pass.nominal,
            wall_time,
        });
        last_filtered = pass.filtered;
        last_smoothed = pass.smoothed;

        if let Some(tol) = config.early_stop_tol {
            if change < tol {
                break;
            }
        }
    }

    Ok(IterationTrace {
        records,
        smoothed: last_smoothed,
        filtered: last_filtered,
        combine_calls,
    })
}

struct Pass {
    nominal: NominalTrajectory,
    filtered: Vec<GaussianBelief>,
    smoothed: Vec<GaussianBelief>,
    combine_calls: u64,
}

fn run_pass(
    model: &dyn StateSpaceModel,
    ys: &[DVector<f64>],
    prior: &GaussianBelief,
    q: &SymMatrix,
    r: &SymMatrix,
    nominal: &NominalTrajectory,
    config: &IterationConfig,
) -> Result<Pass> {
    let params = match config.method {
        Method::Ieks => taylor_linearize(model, nominal)?,
        Method::Ipls => slr_linearize(model, nominal)?,
    };
    let (filtered, smoothed_tail, combine_calls) = match config.engine {
        Engine::Sequential => {
            let filtered = kf_forward(&params, ys, prior, q, r)?;
            let smoothed = rts_backward(&filtered, &params, q)?;
            (filtered, smoothed, 0)
        }
        Engine::Parallel => {
            let (filtered, calls_f) = parallel_filter(&params, ys, prior, q, r, &config.plan)?;
            let (smoothed, calls_s) = parallel_smooth(&filtered, &params, q, &config.plan)?;
            (filtered, smoothed, calls_f + calls_s)
        }
    };
    let smoothed_origin = smooth_prior(prior, &params[0], q, &smoothed_tail[0])?;

    let mut smoothed = Vec::with_capacity(smoothed_tail.len() + 1);
    smoothed.push(smoothed_origin);
    smoothed.extend(smoothed_tail);

    let nominal = NominalTrajectory {
        means: smoothed.iter().map(|b| b.mean.clone()).collect(),
        covs: Some(smoothed.iter().map(|b| b.cov.clone()).collect()),
    };
    Ok(Pass {
        nominal,
        filtered,
        smoothed,
        combine_calls,
    })
}

/// First pass, with no previous trajectory to linearize about: a
/// standard extended (IEKS) or cubature (IPLS) filter pass linearizing
/// each step at the running moments, then an RTS pass extended to the
/// prior.
fn initial_pass(
    model: &dyn StateSpaceModel,
    ys: &[DVector<f64>],
    method: Method,
    prior: &GaussianBelief,
) -> Result<NominalTrajectory> {
    let q = model.process_noise_cov();
    let r = model.measurement_noise_cov();
    let nx = model.state_dim();
    let ny = model.measurement_dim();

    let mut params = Vec::with_capacity(ys.len());
    let mut filtered = Vec::with_capacity(ys.len());
    let mut current = prior.clone();
    for (i, y) in ys.iter().enumerate() {
        let step = i + 1;
        // transition leg at the filtered moments of step k-1
        let (f_mat, f_off, f_res) = match method {
            Method::Ieks => {
                let f_mat = model.transition_jacobian(&current.mean);
                let f_off = model.transition(&current.mean) - &f_mat * &current.mean;
                (f_mat, f_off, SymMatrix::zeros(nx))
            }
            Method::Ipls => {
                slr_linearize_fn(|x| Ok(model.transition(x)), &current.mean, &current.cov)
                    .map_err(|e| e.with_step(step))?
            }
        };
        // predicted moments for the observation leg
        let q_eff = symmetrize(&(q.matrix() + f_res.matrix()))?;
        let mean_pred = &f_mat * &current.mean + &f_off;
        let cov_pred =
            symmetrize(&(&f_mat * current.cov.matrix() * f_mat.transpose() + q_eff.matrix()))?;
        let (h_mat, h_off, h_res) = match method {
            Method::Ieks => {
                let h_mat = model.observation_jacobian(&mean_pred)?;
                let h_off = model.observation(&mean_pred)? - &h_mat * &mean_pred;
                (h_mat, h_off, SymMatrix::zeros(ny))
            }
            Method::Ipls => slr_linearize_fn(|x| model.observation(x), &mean_pred, &cov_pred)
                .map_err(|e| e.with_step(step))?,
        };
        let lin = LinearizationParams {
            f_mat,
            f_off,
            f_res,
            h_mat,
            h_off,
            h_res,
        };
        current = crate::sequential::kf_step(&current, &lin, y, q, r, step)?;
        params.push(lin);
        filtered.push(current.clone());
    }

    let smoothed = rts_backward(&filtered, &params, q)?;
    let origin = smooth_prior(prior, &params[0], q, &smoothed[0])?;
    let mut means = Vec::with_capacity(smoothed.len() + 1);
    let mut covs = Vec::with_capacity(smoothed.len() + 1);
    means.push(origin.mean);
    covs.push(origin.cov);
    for b in smoothed {
        means.push(b.mean);
        covs.push(b.cov);
    }
    Ok(NominalTrajectory {
        means,
        covs: Some(covs),
    })
}

fn max_mean_change(old: &[DVector<f64>], new: &[DVector<f64>]) -> f64 {
    old.iter()
        .zip(new)
        .map(|(a, b)| (a - b).amax())
        .fold(0.0, f64::max)
}
