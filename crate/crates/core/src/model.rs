//! State-space model abstraction, the coordinated-turn / bearings-only
//! benchmark model, and a seeded trajectory simulator.

use std::f64::consts::PI;
use std::io::{Read, Write};

use nalgebra::{DMatrix, DVector};
use rand_chacha::ChaCha12Rng;
use rand_core::{RngCore, SeedableRng};

use crate::error::{Error, Result};
use crate::gaussmath::{psd_sqrt, symmetrize, SymMatrix};

/// A nonlinear state-space model with additive Gaussian noise:
/// `x_k = f(x_{k-1}) + q_k`, `y_k = h(x_k) + r_k`, with Gaussian prior
/// on `x_0`.
///
/// Transition and observation come with analytic Jacobians; the
/// observation side may fail on geometrically degenerate states.
pub trait StateSpaceModel: Send + Sync {
    fn state_dim(&self) -> usize;
    fn measurement_dim(&self) -> usize;

    fn transition(&self, state: &DVector<f64>) -> DVector<f64>;
    fn transition_jacobian(&self, state: &DVector<f64>) -> DMatrix<f64>;
    fn observation(&self, state: &DVector<f64>) -> Result<DVector<f64>>;
    fn observation_jacobian(&self, state: &DVector<f64>) -> Result<DMatrix<f64>>;

    fn process_noise_cov(&self) -> &SymMatrix;
    fn measurement_noise_cov(&self) -> &SymMatrix;
    fn prior_mean(&self) -> &DVector<f64>;
    fn prior_cov(&self) -> &SymMatrix;
}

/// Simulated states `x_0..x_n` and measurements `y_1..y_n`.
#[derive(Debug, Clone)]
pub struct Trajectory {
    pub states: Vec<DVector<f64>>,
    pub measurements: Vec<DVector<f64>>,
    pub seed: u64,
}

impl Trajectory {
    /// Number of measurement steps `n`.
    pub fn len(&self) -> usize {
        self.measurements.len()
    }

    pub fn is_empty(&self) -> bool {
        self.measurements.is_empty()
    }
}

/// Seeded standard-normal sampler.
///
/// Uniform bits come from ChaCha12 seeded with `seed_from_u64`;
/// Gaussians are produced by the Box-Muller transform
/// `z0 = sqrt(-2 ln u1) cos(2π u2)`, `z1 = sqrt(-2 ln u1) sin(2π u2)`,
/// consuming two 53-bit uniforms per pair and caching the second value.
/// The draw sequence is therefore fixed for a given seed.
pub struct GaussianSampler {
    rng: ChaCha12Rng,
    spare: Option<f64>,
}

impl GaussianSampler {
    pub fn new(seed: u64) -> Self {
        GaussianSampler {
            rng: ChaCha12Rng::seed_from_u64(seed),
            spare: None,
        }
    }

    /// Uniform draw in `[0, 1)` from the top 53 bits of one u64.
    pub fn uniform(&mut self) -> f64 {
        (self.rng.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// One standard-normal draw.
    pub fn sample(&mut self) -> f64 {
        if let Some(z) = self.spare.take() {
            return z;
        }
        // u1 in (0, 1] so the log is finite
        let u1 = ((self.rng.next_u64() >> 11) + 1) as f64 * (1.0 / (1u64 << 53) as f64);
        let u2 = self.uniform();
        let radius = (-2.0 * u1.ln()).sqrt();
        let (sin, cos) = (2.0 * PI * u2).sin_cos();
        self.spare = Some(radius * sin);
        radius * cos
    }

    /// Vector of independent standard normals.
    pub fn sample_vector(&mut self, dim: usize) -> DVector<f64> {
        DVector::from_fn(dim, |_, _| self.sample())
    }
}

/// Simulate `n ≥ 1` steps of a model from a seed.
///
/// `x_0 ~ N(m_0, P_0)`, `x_k = f(x_{k-1}) + q_k`, `y_k = h(x_k) + r_k`.
/// Noise is injected through the PSD square roots of the covariances,
/// so degenerate (even zero) covariances are legal. Draw order per run:
/// the `x_0` vector, then for each step the process-noise vector
/// followed by the measurement-noise vector.
pub fn simulate(model: &dyn StateSpaceModel, n: usize, seed: u64) -> Result<Trajectory> {
    if n == 0 {
        return Err(Error::EmptyInput { context: "simulate" });
    }
    let mut sampler = GaussianSampler::new(seed);
    let nx = model.state_dim();
    let ny = model.measurement_dim();
    let prior_root = psd_sqrt(model.prior_cov());
    let q_root = psd_sqrt(model.process_noise_cov());
    let r_root = psd_sqrt(model.measurement_noise_cov());

    let mut states = Vec::with_capacity(n + 1);
    let mut measurements = Vec::with_capacity(n);
    states.push(model.prior_mean() + &prior_root * sampler.sample_vector(nx));
    for k in 1..=n {
        let x = model.transition(&states[k - 1]) + &q_root * sampler.sample_vector(nx);
        let y = model.observation(&x)? + &r_root * sampler.sample_vector(ny);
        states.push(x);
        measurements.push(y);
    }
    Ok(Trajectory {
        states,
        measurements,
        seed,
    })
}

// ---------------------------------------------------------------------------
// Coordinated-turn model with bearings-only measurements
// ---------------------------------------------------------------------------

/// Taylor fallback threshold for the turn-rate singularity at ω = 0.
const CT_SMALL_ANGLE: f64 = 1e-8;

/// Coordinated-turn transition over one step of length `dt`.
///
/// State is `[px, py, vx, vy, ω]`; velocity rotates by `ω·dt` and the
/// position integrates along the arc. `ω = 0` takes a series limit, not
/// a division, so the straight-line case is exact.
pub fn ct_transition(state: &DVector<f64>, dt: f64) -> DVector<f64> {
    let (px, py, vx, vy, omega) = (state[0], state[1], state[2], state[3], state[4]);
    let u = omega * dt;
    // sa = sin(ωdt)/ω, cb = (1-cos(ωdt))/ω; the half-angle form
    // 2·sin²(u/2)/ω avoids the cancellation in 1-cos for small u
    let (sa, cb) = if u.abs() < CT_SMALL_ANGLE {
        (dt * (1.0 - u * u / 6.0), dt * u * 0.5 * (1.0 - u * u / 12.0))
    } else {
        let half_sin = (0.5 * u).sin();
        (u.sin() / omega, 2.0 * half_sin * half_sin / omega)
    };
    let (su, cu) = u.sin_cos();
    DVector::from_vec(vec![
        px + vx * sa - vy * cb,
        py + vx * cb + vy * sa,
        vx * cu - vy * su,
        vx * su + vy * cu,
        omega,
    ])
}

/// Jacobian of [`ct_transition`] with the same series treatment near
/// ω = 0.
pub fn ct_transition_jacobian(state: &DVector<f64>, dt: f64) -> DMatrix<f64> {
    let (vx, vy, omega) = (state[2], state[3], state[4]);
    let u = omega * dt;
    let (su, cu) = u.sin_cos();
    let (sa, cb, dsa, dcb) = if u.abs() < CT_SMALL_ANGLE {
        (
            dt * (1.0 - u * u / 6.0),
            dt * u * 0.5 * (1.0 - u * u / 12.0),
            dt * dt * (-u / 3.0 + u * u * u / 30.0),
            dt * dt * (0.5 - u * u / 8.0),
        )
    } else {
        let half_sin = (0.5 * u).sin();
        let one_minus_cos = 2.0 * half_sin * half_sin;
        (
            su / omega,
            one_minus_cos / omega,
            (u * cu - su) / (omega * omega),
            (u * su - one_minus_cos) / (omega * omega),
        )
    };
    DMatrix::from_row_slice(
        5,
        5,
        &[
            1.0, 0.0, sa, -cb, vx * dsa - vy * dcb,
            0.0, 1.0, cb, sa, vx * dcb + vy * dsa,
            0.0, 0.0, cu, -su, -dt * (vx * su + vy * cu),
            0.0, 0.0, su, cu, dt * (vx * cu - vy * su),
            0.0, 0.0, 0.0, 0.0, 1.0,
        ],
    )
}

/// Bearing from each sensor to the target position, in `(-π, π]`.
pub fn bearing_observation(state: &DVector<f64>, sensors: &[[f64; 2]]) -> Result<DVector<f64>> {
    let mut out = DVector::zeros(sensors.len());
    for (s, pos) in sensors.iter().enumerate() {
        let dx = state[0] - pos[0];
        let dy = state[1] - pos[1];
        if dx == 0.0 && dy == 0.0 {
            return Err(Error::DegenerateGeometry { sensor: s });
        }
        let mut angle = dy.atan2(dx);
        if angle <= -PI {
            angle += 2.0 * PI;
        }
        out[s] = angle;
    }
    Ok(out)
}

/// Jacobian of [`bearing_observation`] with respect to the CT state.
pub fn bearing_jacobian(state: &DVector<f64>, sensors: &[[f64; 2]]) -> Result<DMatrix<f64>> {
    let mut out = DMatrix::zeros(sensors.len(), state.len());
    for (s, pos) in sensors.iter().enumerate() {
        let dx = state[0] - pos[0];
        let dy = state[1] - pos[1];
        let r2 = dx * dx + dy * dy;
        if r2 == 0.0 {
            return Err(Error::DegenerateGeometry { sensor: s });
        }
        out[(s, 0)] = -dy / r2;
        out[(s, 1)] = dx / r2;
    }
    Ok(out)
}

/// Parameters of the coordinated-turn / bearings-only benchmark model.
///
/// Defaults: dt = 0.1 s, velocity spectral density q1 = 0.1, turn-rate
/// spectral density q2 = 0.01, bearing noise std 0.05 rad, sensors at
/// (-1.5, 0.5) and (1, 1), prior mean [0.1, 0.2, 1, 0, 0] with
/// covariance 0.1·I. These sit in the usual regime for this kind of
/// tracking benchmark and are all overridable.
#[derive(Debug, Clone)]
pub struct CtParams {
    pub dt: f64,
    pub q1: f64,
    pub q2: f64,
    pub r_std: f64,
    pub sensors: Vec<[f64; 2]>,
    pub prior_mean: DVector<f64>,
    pub prior_cov: SymMatrix,
}

impl Default for CtParams {
    fn default() -> Self {
        CtParams {
            dt: 0.1,
            q1: 0.1,
            q2: 0.01,
            r_std: 0.05,
            sensors: vec![[-1.5, 0.5], [1.0, 1.0]],
            prior_mean: DVector::from_vec(vec![0.1, 0.2, 1.0, 0.0, 0.0]),
            prior_cov: SymMatrix::scaled_identity(5, 0.1),
        }
    }
}

/// Coordinated-turn model (state `[px, py, vx, vy, ω]`) observed by
/// bearings-only sensors.
pub struct CtModel {
    params: CtParams,
    process_noise: SymMatrix,
    measurement_noise: SymMatrix,
}

impl CtModel {
    pub fn new(params: CtParams) -> Result<Self> {
        if params.dt <= 0.0 {
            return Err(Error::Dimension {
                context: "CtModel",
                detail: format!("dt must be positive, got {}", params.dt),
            });
        }
        if params.sensors.is_empty() {
            return Err(Error::EmptyInput { context: "CtModel sensors" });
        }
        if params.prior_mean.len() != 5 || params.prior_cov.dim() != 5 {
            return Err(Error::Dimension {
                context: "CtModel",
                detail: "prior must be 5-dimensional".to_string(),
            });
        }
        if params.r_std <= 0.0 {
            return Err(Error::Dimension {
                context: "CtModel",
                detail: "bearing noise std must be strictly positive".to_string(),
            });
        }
        validate_cov("CtModel prior covariance", &params.prior_cov)?;

        // standard discretized CT process noise: white-noise acceleration
        // blocks on (p, v) per axis plus a random-walk turn rate
        let (dt, q1, q2) = (params.dt, params.q1, params.q2);
        let mut q = DMatrix::zeros(5, 5);
        for axis in 0..2 {
            let (p, v) = (axis, axis + 2);
            q[(p, p)] = q1 * dt * dt * dt / 3.0;
            q[(p, v)] = q1 * dt * dt / 2.0;
            q[(v, p)] = q1 * dt * dt / 2.0;
            q[(v, v)] = q1 * dt;
        }
        q[(4, 4)] = q2 * dt;
        let process_noise = symmetrize(&q)?;
        validate_cov("CtModel process noise", &process_noise)?;
        let measurement_noise =
            SymMatrix::scaled_identity(params.sensors.len(), params.r_std * params.r_std);

        Ok(CtModel {
            params,
            process_noise,
            measurement_noise,
        })
    }

    pub fn params(&self) -> &CtParams {
        &self.params
    }
}

fn validate_cov(context: &'static str, m: &SymMatrix) -> Result<()> {
    let eigs = m.matrix().clone().symmetric_eigen().eigenvalues;
    let max_mag = eigs.iter().fold(0.0f64, |a, &v| a.max(v.abs()));
    let min = eigs.iter().copied().fold(f64::INFINITY, f64::min);
    if min < -1e-9 * max_mag.max(1.0) {
        return Err(Error::Dimension {
            context: "covariance validation",
            detail: format!("{context}: eigenvalue {min} below PSD tolerance"),
        });
    }
    Ok(())
}

impl StateSpaceModel for CtModel {
    fn state_dim(&self) -> usize {
        5
    }

    fn measurement_dim(&self) -> usize {
        self.params.sensors.len()
    }

    fn transition(&self, state: &DVector<f64>) -> DVector<f64> {
        ct_transition(state, self.params.dt)
    }

    fn transition_jacobian(&self, state: &DVector<f64>) -> DMatrix<f64> {
        ct_transition_jacobian(state, self.params.dt)
    }

    fn observation(&self, state: &DVector<f64>) -> Result<DVector<f64>> {
        bearing_observation(state, &self.params.sensors)
    }

    fn observation_jacobian(&self, state: &DVector<f64>) -> Result<DMatrix<f64>> {
        bearing_jacobian(state, &self.params.sensors)
    }

    fn process_noise_cov(&self) -> &SymMatrix {
        &self.process_noise
    }

    fn measurement_noise_cov(&self) -> &SymMatrix {
        &self.measurement_noise
    }

    fn prior_mean(&self) -> &DVector<f64> {
        &self.params.prior_mean
    }

    fn prior_cov(&self) -> &SymMatrix {
        &self.params.prior_cov
    }
}

// ---------------------------------------------------------------------------
// Trajectory CSV
// ---------------------------------------------------------------------------

const TRAJECTORY_HEADER: [&str; 8] = ["k", "px", "py", "vx", "vy", "omega", "y1", "y2"];

/// Write a CT trajectory (5 state dims, 2 measurement dims) as CSV with
/// header `k,px,py,vx,vy,omega,y1,y2`. Measurement fields are empty on
/// the `k = 0` row.
pub fn write_trajectory_csv<W: Write>(trajectory: &Trajectory, out: W) -> Result<()> {
    if trajectory.states.is_empty()
        || trajectory.states[0].len() != 5
        || trajectory.measurements.iter().any(|y| y.len() != 2)
    {
        return Err(Error::Dimension {
            context: "write_trajectory_csv",
            detail: "CSV schema requires 5 state and 2 measurement dimensions".to_string(),
        });
    }
    let mut w = csv::Writer::from_writer(out);
    w.write_record(TRAJECTORY_HEADER)?;
    for (k, x) in trajectory.states.iter().enumerate() {
        let mut record: Vec<String> = vec![k.to_string()];
        record.extend(x.iter().map(|v| v.to_string()));
        if k == 0 {
            record.extend(["".to_string(), "".to_string()]);
        } else {
            record.extend(trajectory.measurements[k - 1].iter().map(|v| v.to_string()));
        }
        w.write_record(&record)?;
    }
    w.flush()?;
    Ok(())
}

/// Read a trajectory written by [`write_trajectory_csv`]. The seed is
/// not part of the schema and is restored as 0.
pub fn read_trajectory_csv<R: Read>(input: R) -> Result<Trajectory> {
    let mut reader = csv::ReaderBuilder::new().flexible(false).from_reader(input);
    {
        let header = reader.headers()?;
        if header.iter().ne(TRAJECTORY_HEADER.iter().copied()) {
            return Err(Error::Format {
                line: 1,
                detail: format!("unexpected header {header:?}"),
            });
        }
    }
    let mut states = Vec::new();
    let mut measurements = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let line = i + 2;
        let record = record?;
        let field = |j: usize| -> Result<f64> {
            record[j].trim().parse::<f64>().map_err(|_| Error::Format {
                line,
                detail: format!("bad number {:?} in column {}", &record[j], j),
            })
        };
        let k: usize = record[0].trim().parse().map_err(|_| Error::Format {
            line,
            detail: format!("bad step index {:?}", &record[0]),
        })?;
        if k != i {
            return Err(Error::Format {
                line,
                detail: format!("expected step {i}, found {k}"),
            });
        }
        states.push(DVector::from_vec(vec![
            field(1)?,
            field(2)?,
            field(3)?,
            field(4)?,
            field(5)?,
        ]));
        let empty = record[6].trim().is_empty() && record[7].trim().is_empty();
        if i == 0 {
            if !empty {
                return Err(Error::Format {
                    line,
                    detail: "row k=0 must have empty measurement fields".to_string(),
                });
            }
        } else {
            measurements.push(DVector::from_vec(vec![field(6)?, field(7)?]));
        }
    }
    if states.is_empty() {
        return Err(Error::EmptyInput {
            context: "read_trajectory_csv",
        });
    }
    Ok(Trajectory {
        states,
        measurements,
        seed: 0,
    })
}
