//! C ABI for the piks smoothers.
//!
//! The surface is a single opaque model handle plus flat-array entry
//! points for simulation and smoothing. No Rust type crosses the
//! boundary: constructors return a pointer (null on failure) and every
//! other call returns a status code. Panics are caught at the boundary
//! and reported as a status.
//!
//! Layout conventions: matrices are row-major `f64`; a trajectory of
//! `n` steps stores states as `(n+1) x 5` (including the initial state)
//! and measurements as `n x n_sensors`.

use std::ffi::{c_char, CStr};
use std::panic::{catch_unwind, AssertUnwindSafe};

use nalgebra::{DMatrix, DVector};
use piks::gaussmath::symmetrize;
use piks::iterated::{default_workers, run_iterated, Engine, IterationConfig, Method};
use piks::model::{simulate, CtModel, CtParams, StateSpaceModel};
use piks::scan::ScanPlan;

/// Result of a piks call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PiksStatus {
    /// Success.
    Ok = 0,
    /// Numerical failure inside the smoother (singular innovation,
    /// degenerate geometry).
    NumericalError = 1,
    /// Null pointer, zero length, or otherwise invalid argument.
    InvalidArgument = 2,
}

/// Linearization strategy of the iterated smoother.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PiksMethod {
    /// Iterated extended Kalman smoother (Taylor linearization).
    Ieks = 0,
    /// Iterated posterior linearization smoother (cubature SLR).
    Ipls = 1,
}

/// Filter/smoother execution engine.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PiksEngine {
    /// Classical sequential recursions.
    Sequential = 0,
    /// Parallel-in-time scan engine.
    Parallel = 1,
}

/// Opaque coordinated-turn / bearings-only model handle.
pub struct PiksCtModel {
    inner: CtModel,
}

/// Build the benchmark model with its default parameters. Free with
/// [`piks_ct_model_free`].
#[no_mangle]
pub extern "C" fn piks_ct_model_default() -> *mut PiksCtModel {
    match CtModel::new(CtParams::default()) {
        Ok(inner) => Box::into_raw(Box::new(PiksCtModel { inner })),
        Err(_) => std::ptr::null_mut(),
    }
}

/// Build a coordinated-turn model from explicit parameters.
///
/// `sensors_xy` holds `n_sensors` (x, y) pairs, `prior_mean` 5 entries,
/// `prior_cov` 25 entries row-major. Returns null on invalid input.
///
/// # Safety
/// `sensors_xy` must point to `2*n_sensors` readable doubles and
/// `prior_mean`/`prior_cov` to 5 and 25 readable doubles respectively.
#[no_mangle]
pub unsafe extern "C" fn piks_ct_model_new(
    dt: f64,
    q1: f64,
    q2: f64,
    r_std: f64,
    sensors_xy: *const f64,
    n_sensors: usize,
    prior_mean: *const f64,
    prior_cov: *const f64,
) -> *mut PiksCtModel {
    if sensors_xy.is_null() || prior_mean.is_null() || prior_cov.is_null() || n_sensors == 0 {
        return std::ptr::null_mut();
    }
    let sensors: Vec<[f64; 2]> = (0..n_sensors)
        .map(|i| [*sensors_xy.add(2 * i), *sensors_xy.add(2 * i + 1)])
        .collect();
    let mean = DVector::from_fn(5, |i, _| *prior_mean.add(i));
    let cov_raw = DMatrix::from_fn(5, 5, |i, j| *prior_cov.add(5 * i + j));
    let Ok(cov) = symmetrize(&cov_raw) else {
        return std::ptr::null_mut();
    };
    let params = CtParams {
        dt,
        q1,
        q2,
        r_std,
        sensors,
        prior_mean: mean,
        prior_cov: cov,
    };
    match CtModel::new(params) {
        Ok(inner) => Box::into_raw(Box::new(PiksCtModel { inner })),
        Err(_) => std::ptr::null_mut(),
    }
}

/// Release a model handle. Null is ignored.
///
/// # Safety
/// `model` must be null or a pointer from a `piks_ct_model_*`
/// constructor that has not been freed yet.
#[no_mangle]
pub unsafe extern "C" fn piks_ct_model_free(model: *mut PiksCtModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Number of bearing sensors (the measurement dimension); 0 for null.
///
/// # Safety
/// `model` must be null or a valid handle.
#[no_mangle]
pub unsafe extern "C" fn piks_ct_model_sensor_count(model: *const PiksCtModel) -> usize {
    if model.is_null() {
        return 0;
    }
    (*model).inner.measurement_dim()
}

/// Simulate an `n`-step trajectory from a seed.
///
/// Writes `(n+1)*5` doubles to `out_states` and `n*n_sensors` doubles
/// to `out_measurements`.
///
/// # Safety
/// Output buffers must be writable for the stated lengths.
#[no_mangle]
pub unsafe extern "C" fn piks_simulate(
    model: *const PiksCtModel,
    n: usize,
    seed: u64,
    out_states: *mut f64,
    out_measurements: *mut f64,
) -> PiksStatus {
    if model.is_null() || out_states.is_null() || out_measurements.is_null() || n == 0 {
        return PiksStatus::InvalidArgument;
    }
    let model = &(*model).inner;
    let ny = model.measurement_dim();
    match catch_unwind(AssertUnwindSafe(|| simulate(model, n, seed))) {
        Ok(Ok(trajectory)) => {
            for (k, state) in trajectory.states.iter().enumerate() {
                for (j, v) in state.iter().enumerate() {
                    *out_states.add(k * 5 + j) = *v;
                }
            }
            for (k, y) in trajectory.measurements.iter().enumerate() {
                for (j, v) in y.iter().enumerate() {
                    *out_measurements.add(k * ny + j) = *v;
                }
            }
            PiksStatus::Ok
        }
        Ok(Err(_)) | Err(_) => PiksStatus::NumericalError,
    }
}

/// Run an iterated smoother over `n` measurements (`n*n_sensors`
/// doubles, row-major).
///
/// Writes smoothed means for steps `0..=n` as `(n+1)*5` doubles; when
/// `out_covariances` is non-null, also the `(n+1)*25` row-major
/// smoothed covariances. `workers = 0` selects the default budget
/// (`PIKS_WORKERS` or the available parallelism).
///
/// # Safety
/// `measurements` must be readable for `n*n_sensors` doubles and the
/// output buffers writable for the stated lengths.
#[no_mangle]
pub unsafe extern "C" fn piks_smooth(
    model: *const PiksCtModel,
    measurements: *const f64,
    n: usize,
    method: PiksMethod,
    engine: PiksEngine,
    iterations: usize,
    workers: usize,
    out_means: *mut f64,
    out_covariances: *mut f64,
) -> PiksStatus {
    if model.is_null() || measurements.is_null() || out_means.is_null() {
        return PiksStatus::InvalidArgument;
    }
    if n == 0 || iterations == 0 {
        return PiksStatus::InvalidArgument;
    }
    let model = &(*model).inner;
    let ny = model.measurement_dim();
    let ys: Vec<DVector<f64>> = (0..n)
        .map(|k| DVector::from_fn(ny, |j, _| *measurements.add(k * ny + j)))
        .collect();
    let config = IterationConfig {
        method: match method {
            PiksMethod::Ieks => Method::Ieks,
            PiksMethod::Ipls => Method::Ipls,
        },
        engine: match engine {
            PiksEngine::Sequential => Engine::Sequential,
            PiksEngine::Parallel => Engine::Parallel,
        },
        iterations,
        early_stop_tol: None,
        plan: ScanPlan::parallel(if workers == 0 { default_workers() } else { workers }),
    };
    match catch_unwind(AssertUnwindSafe(|| run_iterated(model, &ys, &config))) {
        Ok(Ok(trace)) => {
            for (k, belief) in trace.smoothed.iter().enumerate() {
                for (j, v) in belief.mean.iter().enumerate() {
                    *out_means.add(k * 5 + j) = *v;
                }
                if !out_covariances.is_null() {
                    for i in 0..5 {
                        for j in 0..5 {
                            *out_covariances.add(k * 25 + i * 5 + j) = belief.cov[(i, j)];
                        }
                    }
                }
            }
            PiksStatus::Ok
        }
        Ok(Err(_)) | Err(_) => PiksStatus::NumericalError,
    }
}

/// Static description of a status code.
#[no_mangle]
pub extern "C" fn piks_status_message(status: PiksStatus) -> *const c_char {
    let message: &CStr = match status {
        PiksStatus::Ok => c"ok",
        PiksStatus::NumericalError => c"numerical failure in filter/smoother",
        PiksStatus::InvalidArgument => c"invalid argument",
    };
    message.as_ptr()
}

/// Crate version as a static C string.
#[no_mangle]
pub extern "C" fn piks_version() -> *const c_char {
    const VERSION: &CStr = c"0.1.0";
    VERSION.as_ptr()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_model_simulates_and_smooths() {
        let model = piks_ct_model_default();
        assert!(!model.is_null());
        let n = 50;
        let mut states = vec![0.0f64; (n + 1) * 5];
        let mut measurements = vec![0.0f64; n * 2];
        let status =
            unsafe { piks_simulate(model, n, 7, states.as_mut_ptr(), measurements.as_mut_ptr()) };
        assert_eq!(status, PiksStatus::Ok);
        assert!(states.iter().all(|v| v.is_finite()));

        let mut means = vec![0.0f64; (n + 1) * 5];
        let mut covs = vec![0.0f64; (n + 1) * 25];
        let status = unsafe {
            piks_smooth(
                model,
                measurements.as_ptr(),
                n,
                PiksMethod::Ipls,
                PiksEngine::Parallel,
                5,
                2,
                means.as_mut_ptr(),
                covs.as_mut_ptr(),
            )
        };
        assert_eq!(status, PiksStatus::Ok);
        assert!(means.iter().all(|v| v.is_finite()));
        for k in 0..=n {
            for j in 0..5 {
                assert!(covs[k * 25 + j * 5 + j] >= -1e-9);
            }
        }
        unsafe { piks_ct_model_free(model) };
    }

    #[test]
    fn ffi_matches_direct_library_call() {
        let model = piks_ct_model_default();
        let n = 40;
        let mut states = vec![0.0f64; (n + 1) * 5];
        let mut measurements = vec![0.0f64; n * 2];
        unsafe {
            piks_simulate(model, n, 3, states.as_mut_ptr(), measurements.as_mut_ptr());
        }
        let mut means = vec![0.0f64; (n + 1) * 5];
        let status = unsafe {
            piks_smooth(
                model,
                measurements.as_ptr(),
                n,
                PiksMethod::Ieks,
                PiksEngine::Sequential,
                4,
                1,
                means.as_mut_ptr(),
                std::ptr::null_mut(),
            )
        };
        assert_eq!(status, PiksStatus::Ok);

        let rust_model = CtModel::new(CtParams::default()).unwrap();
        let trajectory = simulate(&rust_model, n, 3).unwrap();
        let config = IterationConfig {
            method: Method::Ieks,
            engine: Engine::Sequential,
            iterations: 4,
            early_stop_tol: None,
            plan: ScanPlan::sequential(),
        };
        let trace = run_iterated(&rust_model, &trajectory.measurements, &config).unwrap();
        for (k, belief) in trace.smoothed.iter().enumerate() {
            for (j, v) in belief.mean.iter().enumerate() {
                assert_eq!(means[k * 5 + j], *v, "FFI diverges from library at ({k},{j})");
            }
        }
        unsafe { piks_ct_model_free(model) };
    }

    #[test]
    fn null_and_zero_arguments_are_rejected() {
        let status = unsafe {
            piks_simulate(std::ptr::null(), 10, 0, std::ptr::null_mut(), std::ptr::null_mut())
        };
        assert_eq!(status, PiksStatus::InvalidArgument);

        let model = piks_ct_model_default();
        let mut buf = vec![0.0f64; 55];
        let mut meas = vec![0.0f64; 20];
        let status = unsafe { piks_simulate(model, 0, 0, buf.as_mut_ptr(), meas.as_mut_ptr()) };
        assert_eq!(status, PiksStatus::InvalidArgument);
        let status = unsafe {
            piks_smooth(
                model,
                meas.as_ptr(),
                10,
                PiksMethod::Ieks,
                PiksEngine::Sequential,
                0,
                0,
                buf.as_mut_ptr(),
                std::ptr::null_mut(),
            )
        };
        assert_eq!(status, PiksStatus::InvalidArgument);
        unsafe { piks_ct_model_free(model) };
        unsafe { piks_ct_model_free(std::ptr::null_mut()) };
    }

    #[test]
    fn custom_model_constructor_validates() {
        let sensors = [0.0f64, 0.0, 1.0, 0.0];
        let mean = [0.0f64; 5];
        let mut cov = [0.0f64; 25];
        for i in 0..5 {
            cov[i * 5 + i] = 0.1;
        }
        let model = unsafe {
            piks_ct_model_new(0.1, 0.1, 0.01, 0.05, sensors.as_ptr(), 2, mean.as_ptr(), cov.as_ptr())
        };
        assert!(!model.is_null());
        assert_eq!(unsafe { piks_ct_model_sensor_count(model) }, 2);
        unsafe { piks_ct_model_free(model) };

        let bad = unsafe {
            piks_ct_model_new(-1.0, 0.1, 0.01, 0.05, sensors.as_ptr(), 2, mean.as_ptr(), cov.as_ptr())
        };
        assert!(bad.is_null());
    }

    #[test]
    fn status_messages_are_c_strings() {
        for status in [PiksStatus::Ok, PiksStatus::NumericalError, PiksStatus::InvalidArgument] {
            let ptr = piks_status_message(status);
            assert!(!ptr.is_null());
            let text = unsafe { CStr::from_ptr(ptr) }.to_str().unwrap();
            assert!(!text.is_empty());
        }
        let version = unsafe { CStr::from_ptr(piks_version()) }.to_str().unwrap();
        assert_eq!(version, "0.1.0");
    }
}
