//! Shared helpers and independent oracles for the integration tests.
//!
//! Everything here deliberately avoids the library's own linear-algebra
//! helpers: oracles factorize and condition with plain nalgebra so they
//! stay independent of the implementation paths they check.

#![allow(dead_code)]

use nalgebra::{Cholesky, DMatrix, DVector};
use piks::gaussmath::{symmetrize, SymMatrix};
use piks::linearize::LinearizationParams;
use piks::model::{GaussianSampler, StateSpaceModel};
use piks::sequential::GaussianBelief;
use piks::Result;

// ---------------------------------------------------------------------------
// Seeded randomness
// ---------------------------------------------------------------------------

pub struct Rng(GaussianSampler);

impl Rng {
    pub fn new(seed: u64) -> Self {
        Rng(GaussianSampler::new(seed))
    }

    pub fn gaussian(&mut self) -> f64 {
        self.0.sample()
    }

    pub fn uniform(&mut self) -> f64 {
        self.0.uniform()
    }

    pub fn vector(&mut self, n: usize) -> DVector<f64> {
        DVector::from_fn(n, |_, _| self.gaussian())
    }

    pub fn matrix(&mut self, r: usize, c: usize) -> DMatrix<f64> {
        DMatrix::from_fn(r, c, |_, _| self.gaussian())
    }

    pub fn spd(&mut self, n: usize, scale: f64) -> SymMatrix {
        let g = self.matrix(n, n);
        let m = (&g * g.transpose()) * (scale / n as f64) + DMatrix::identity(n, n) * (0.1 * scale);
        symmetrize(&m).unwrap()
    }

    pub fn usize_in(&mut self, lo: usize, hi: usize) -> usize {
        lo + (self.uniform() * ((hi - lo + 1) as f64)) as usize
    }
}

// ---------------------------------------------------------------------------
// Closure-backed model
// ---------------------------------------------------------------------------

type VecFn = Box<dyn Fn(&DVector<f64>) -> DVector<f64> + Send + Sync>;
type MatFn = Box<dyn Fn(&DVector<f64>) -> DMatrix<f64> + Send + Sync>;

pub struct FnModel {
    pub nx: usize,
    pub ny: usize,
    pub f: VecFn,
    pub fj: MatFn,
    pub h: VecFn,
    pub hj: MatFn,
    pub q: SymMatrix,
    pub r: SymMatrix,
    pub m0: DVector<f64>,
    pub p0: SymMatrix,
}

impl StateSpaceModel for FnModel {
    fn state_dim(&self) -> usize {
        self.nx
    }
    fn measurement_dim(&self) -> usize {
        self.ny
    }
    fn transition(&self, x: &DVector<f64>) -> DVector<f64> {
        (self.f)(x)
    }
    fn transition_jacobian(&self, x: &DVector<f64>) -> DMatrix<f64> {
        (self.fj)(x)
    }
    fn observation(&self, x: &DVector<f64>) -> Result<DVector<f64>> {
        Ok((self.h)(x))
    }
    fn observation_jacobian(&self, x: &DVector<f64>) -> Result<DMatrix<f64>> {
        Ok((self.hj)(x))
    }
    fn process_noise_cov(&self) -> &SymMatrix {
        &self.q
    }
    fn measurement_noise_cov(&self) -> &SymMatrix {
        &self.r
    }
    fn prior_mean(&self) -> &DVector<f64> {
        &self.m0
    }
    fn prior_cov(&self) -> &SymMatrix {
        &self.p0
    }
}

/// A random stable linear-Gaussian model: spectral radius of the
/// transition matrix scaled to ~0.9 to keep trajectories bounded.
pub fn random_linear_model(rng: &mut Rng, nx: usize, ny: usize) -> FnModel {
    let raw = rng.matrix(nx, nx);
    let radius = raw
        .complex_eigenvalues()
        .iter()
        .map(|c| c.norm())
        .fold(0.0f64, f64::max)
        .max(1e-6);
    let a = raw * (0.9 / radius);
    let b = rng.vector(nx) * 0.3;
    let h = rng.matrix(ny, nx);
    let d = rng.vector(ny) * 0.3;
    let (a2, b2, h2, d2) = (a.clone(), b.clone(), h.clone(), d.clone());
    FnModel {
        nx,
        ny,
        f: Box::new(move |x| &a2 * x + &b2),
        fj: Box::new(move |_| a.clone()),
        h: Box::new(move |x| &h2 * x + &d2),
        hj: Box::new(move |_| h.clone()),
        q: rng.spd(nx, 0.5),
        r: rng.spd(ny, 0.5),
        m0: rng.vector(nx),
        p0: rng.spd(nx, 1.0),
    }
}

/// Linearization records of a linear model are nominal-independent;
/// build them directly from the model matrices.
pub fn linear_params(model: &FnModel, n: usize) -> Vec<LinearizationParams> {
    let zero_state = DVector::zeros(model.nx);
    let f_mat = (model.fj)(&zero_state);
    let f_off = (model.f)(&zero_state);
    let h_mat = (model.hj)(&zero_state);
    let h_off = (model.h)(&zero_state);
    (0..n)
        .map(|_| LinearizationParams {
            f_mat: f_mat.clone(),
            f_off: f_off.clone(),
            f_res: SymMatrix::zeros(model.nx),
            h_mat: h_mat.clone(),
            h_off: h_off.clone(),
            h_res: SymMatrix::zeros(model.ny),
        })
        .collect()
}

pub fn prior_of(model: &FnModel) -> GaussianBelief {
    GaussianBelief {
        mean: model.m0.clone(),
        cov: model.p0.clone(),
    }
}

// ---------------------------------------------------------------------------
// Dense joint-Gaussian conditioning oracle
// ---------------------------------------------------------------------------

/// Joint Gaussian over the stacked trajectory `(x_0, …, x_n)` together
/// with the measurement projection, built by plain matrix recursions.
pub struct JointGaussian {
    pub nx: usize,
    pub ny: usize,
    pub n: usize,
    pub mean_x: DVector<f64>,
    pub cov_xx: DMatrix<f64>,
    pub obs_mat: DMatrix<f64>,
    pub obs_off: DVector<f64>,
    pub obs_cov: DMatrix<f64>,
}

pub fn build_joint(
    lin: &[LinearizationParams],
    prior_mean: &DVector<f64>,
    prior_cov: &DMatrix<f64>,
    q: &DMatrix<f64>,
    r: &DMatrix<f64>,
) -> JointGaussian {
    let n = lin.len();
    let nx = prior_mean.len();
    let ny = lin[0].h_mat.nrows();
    let dim_x = (n + 1) * nx;
    let dim_y = n * ny;

    let mut mean_x = DVector::zeros(dim_x);
    mean_x.rows_mut(0, nx).copy_from(prior_mean);
    let mut cov_xx = DMatrix::zeros(dim_x, dim_x);
    cov_xx.view_mut((0, 0), (nx, nx)).copy_from(prior_cov);

    for k in 1..=n {
        let p = &lin[k - 1];
        let q_eff = q + p.f_res.matrix();
        let prev_mean = mean_x.rows((k - 1) * nx, nx).into_owned();
        let next_mean = &p.f_mat * prev_mean + &p.f_off;
        mean_x.rows_mut(k * nx, nx).copy_from(&next_mean);

        // diagonal block
        let prev_cov = cov_xx.view(((k - 1) * nx, (k - 1) * nx), (nx, nx)).into_owned();
        let diag = &p.f_mat * prev_cov * p.f_mat.transpose() + q_eff;
        cov_xx.view_mut((k * nx, k * nx), (nx, nx)).copy_from(&diag);

        // cross blocks against all previous states
        for j in 0..k {
            let prev_cross = cov_xx.view(((k - 1) * nx, j * nx), (nx, nx)).into_owned();
            let cross = &p.f_mat * prev_cross;
            cov_xx.view_mut((k * nx, j * nx), (nx, nx)).copy_from(&cross);
            cov_xx
                .view_mut((j * nx, k * nx), (nx, nx))
                .copy_from(&cross.transpose());
        }
    }

    let mut obs_mat = DMatrix::zeros(dim_y, dim_x);
    let mut obs_off = DVector::zeros(dim_y);
    let mut obs_cov = DMatrix::zeros(dim_y, dim_y);
    for k in 1..=n {
        let p = &lin[k - 1];
        obs_mat
            .view_mut(((k - 1) * ny, k * nx), (ny, nx))
            .copy_from(&p.h_mat);
        obs_off.rows_mut((k - 1) * ny, ny).copy_from(&p.h_off);
        let r_eff = r + p.h_res.matrix();
        obs_cov
            .view_mut(((k - 1) * ny, (k - 1) * ny), (ny, ny))
            .copy_from(&r_eff);
    }

    JointGaussian {
        nx,
        ny,
        n,
        mean_x,
        cov_xx,
        obs_mat,
        obs_off,
        obs_cov,
    }
}

impl JointGaussian {
    /// Condition the whole trajectory on the first `m` measurements and
    /// return per-state marginals `(mean_k, cov_k)` for `k = 0..=n`.
    pub fn condition(&self, ys: &[DVector<f64>], m: usize) -> Vec<(DVector<f64>, DMatrix<f64>)> {
        assert!(m >= 1 && m <= self.n);
        let ny = self.ny;
        let nx = self.nx;
        let rows = m * ny;

        let obs = self.obs_mat.rows(0, rows);
        let mean_y = obs * &self.mean_x + self.obs_off.rows(0, rows);
        let cov_yy =
            obs * &self.cov_xx * obs.transpose() + self.obs_cov.view((0, 0), (rows, rows));
        let cov_xy = &self.cov_xx * obs.transpose();

        let mut stacked_y = DVector::zeros(rows);
        for (k, y) in ys.iter().take(m).enumerate() {
            stacked_y.rows_mut(k * ny, ny).copy_from(y);
        }

        let chol = Cholesky::new(cov_yy).expect("oracle innovation covariance is PD");
        let weighted = chol.solve(&(stacked_y - mean_y));
        let post_mean = &self.mean_x + &cov_xy * weighted;
        let post_cov = &self.cov_xx - &cov_xy * chol.solve(&cov_xy.transpose());

        (0..=self.n)
            .map(|k| {
                (
                    post_mean.rows(k * nx, nx).into_owned(),
                    post_cov.view((k * nx, k * nx), (nx, nx)).into_owned(),
                )
            })
            .collect()
    }
}

// ---------------------------------------------------------------------------
// Batch MAP oracle (stacked normal equations)
// ---------------------------------------------------------------------------

/// Solve the stacked affine-Gaussian MAP problem directly: one dense
/// SPD system over `(x_0, …, x_n)`. For a linear-Gaussian model the
/// solution equals the smoothed means.
pub fn batch_map_solution(
    lin: &[LinearizationParams],
    ys: &[DVector<f64>],
    prior_mean: &DVector<f64>,
    prior_cov: &DMatrix<f64>,
    q: &DMatrix<f64>,
    r: &DMatrix<f64>,
) -> Vec<DVector<f64>> {
    let n = lin.len();
    let nx = prior_mean.len();
    let dim = (n + 1) * nx;
    let inv = |m: DMatrix<f64>| {
        Cholesky::new(m)
            .expect("oracle block must be PD")
            .inverse()
    };

    let mut a = DMatrix::<f64>::zeros(dim, dim);
    let mut b = DVector::<f64>::zeros(dim);

    let p0_inv = inv(prior_cov.clone());
    a.view_mut((0, 0), (nx, nx)).copy_from(&p0_inv);
    b.rows_mut(0, nx).copy_from(&(&p0_inv * prior_mean));

    for k in 1..=n {
        let p = &lin[k - 1];
        let q_inv = inv(q + p.f_res.matrix());
        let r_inv = inv(r + p.h_res.matrix());

        let fq = p.f_mat.transpose() * &q_inv;
        add_block(&mut a, k - 1, k - 1, nx, &(&fq * &p.f_mat));
        add_block(&mut a, k - 1, k, nx, &(-(&fq)));
        add_block(&mut a, k, k - 1, nx, &(-(&q_inv * &p.f_mat)));
        add_block(&mut a, k, k, nx, &q_inv);
        let bc = &q_inv * &p.f_off;
        sub_rows(&mut b, k - 1, nx, &(p.f_mat.transpose() * &bc));
        add_rows(&mut b, k, nx, &bc);

        let hr = p.h_mat.transpose() * &r_inv;
        add_block(&mut a, k, k, nx, &(&hr * &p.h_mat));
        add_rows(&mut b, k, nx, &(&hr * (&ys[k - 1] - &p.h_off)));
    }

    let solution = Cholesky::new(a)
        .expect("oracle normal equations must be PD")
        .solve(&b);
    (0..=n).map(|k| solution.rows(k * nx, nx).into_owned()).collect()
}

fn add_block(a: &mut DMatrix<f64>, bi: usize, bj: usize, nx: usize, m: &DMatrix<f64>) {
    let mut view = a.view_mut((bi * nx, bj * nx), (nx, nx));
    view += m;
}

fn add_rows(b: &mut DVector<f64>, bi: usize, nx: usize, v: &DVector<f64>) {
    let mut rows = b.rows_mut(bi * nx, nx);
    rows += v;
}

fn sub_rows(b: &mut DVector<f64>, bi: usize, nx: usize, v: &DVector<f64>) {
    let mut rows = b.rows_mut(bi * nx, nx);
    rows -= v;
}

// ---------------------------------------------------------------------------
// Direct extended Kalman smoother (independent of the library path)
// ---------------------------------------------------------------------------

/// Hand-rolled EKS linearized at a given nominal trajectory, written in
/// the textbook predicted-covariance form (no Joseph stabilization, no
/// solve helpers) so it shares nothing with the implementation.
pub type Moments = Vec<(DVector<f64>, DMatrix<f64>)>;

pub fn direct_eks(
    model: &dyn StateSpaceModel,
    ys: &[DVector<f64>],
    nominal_means: &[DVector<f64>],
) -> (Moments, Moments) {
    let n = ys.len();
    let nx = model.state_dim();
    let q = model.process_noise_cov().matrix();
    let r = model.measurement_noise_cov().matrix();

    let mut filtered = Vec::with_capacity(n);
    let mut predicted = Vec::with_capacity(n);
    let mut f_mats = Vec::with_capacity(n);
    let mut mean = model.prior_mean().clone();
    let mut cov = model.prior_cov().matrix().clone();

    for k in 1..=n {
        let xb_prev = &nominal_means[k - 1];
        let xb_here = &nominal_means[k];
        let f_mat = model.transition_jacobian(xb_prev);
        // affine prediction around the nominal
        let mean_pred = model.transition(xb_prev) + &f_mat * (&mean - xb_prev);
        let cov_pred = &f_mat * cov * f_mat.transpose() + q;

        let h_mat = model.observation_jacobian(xb_here).unwrap();
        let y_pred = model.observation(xb_here).unwrap() + &h_mat * (&mean_pred - xb_here);
        let s = &h_mat * &cov_pred * h_mat.transpose() + r;
        let s_inv = Cholesky::new(s).expect("oracle innovation PD").inverse();
        let gain = &cov_pred * h_mat.transpose() * s_inv;
        mean = &mean_pred + &gain * (&ys[k - 1] - y_pred);
        cov = (DMatrix::identity(nx, nx) - &gain * &h_mat) * &cov_pred;

        predicted.push((mean_pred, cov_pred));
        f_mats.push(f_mat);
        filtered.push((mean.clone(), cov.clone()));
    }

    let mut smoothed = vec![filtered[n - 1].clone()];
    for k in (0..n - 1).rev() {
        let (fm, fc) = &filtered[k];
        let (pm, pc) = &predicted[k + 1];
        let pc_inv = Cholesky::new(pc.clone()).expect("oracle predicted PD").inverse();
        let gain = fc * f_mats[k + 1].transpose() * pc_inv;
        let (sm_next, sc_next) = smoothed.last().unwrap().clone();
        let sm = fm + &gain * (sm_next - pm);
        let sc = fc + &gain * (sc_next - pc) * gain.transpose();
        smoothed.push((sm, sc));
    }
    smoothed.reverse();
    (filtered, smoothed)
}

// ---------------------------------------------------------------------------
// Monte-Carlo SLR oracle
// ---------------------------------------------------------------------------

pub struct McSlr {
    pub gain: DMatrix<f64>,
    pub offset: DVector<f64>,
    pub residual: DMatrix<f64>,
    pub gain_se: DMatrix<f64>,
    pub offset_se: DVector<f64>,
    pub residual_se: DMatrix<f64>,
}

/// Monte-Carlo statistical linear regression of `func` under
/// `N(mean, cov)`: `samples` draws split into `batches` batches; the
/// point estimate comes from the pooled moments and the standard errors
/// from the batch spread.
pub fn monte_carlo_slr<F>(
    func: F,
    mean: &DVector<f64>,
    cov: &DMatrix<f64>,
    samples: usize,
    batches: usize,
    seed: u64,
) -> McSlr
where
    F: Fn(&DVector<f64>) -> DVector<f64>,
{
    let nx = mean.len();
    let root = Cholesky::new(cov.clone()).expect("oracle covariance PD").l();
    let mut sampler = GaussianSampler::new(seed);
    let per_batch = samples / batches;

    let mut batch_fits: Vec<(DMatrix<f64>, DVector<f64>, DMatrix<f64>)> = Vec::new();
    for _ in 0..batches {
        let mut xs = Vec::with_capacity(per_batch);
        let mut zs = Vec::with_capacity(per_batch);
        for _ in 0..per_batch {
            let x = mean + &root * sampler.sample_vector(nx);
            zs.push(func(&x));
            xs.push(x);
        }
        batch_fits.push(slr_from_samples(&xs, &zs, mean, cov));
    }

    let b = batches as f64;
    let ny = batch_fits[0].1.len();
    let mut gain = DMatrix::zeros(ny, nx);
    let mut offset = DVector::zeros(ny);
    let mut residual = DMatrix::zeros(ny, ny);
    for (g, o, s) in &batch_fits {
        gain += g / b;
        offset += o / b;
        residual += s / b;
    }
    let mut gain_var = DMatrix::zeros(ny, nx);
    let mut offset_var = DVector::zeros(ny);
    let mut residual_var = DMatrix::zeros(ny, ny);
    for (g, o, s) in &batch_fits {
        gain_var += (g - &gain).map(|v| v * v) / (b - 1.0);
        offset_var += (o - &offset).map(|v| v * v) / (b - 1.0);
        residual_var += (s - &residual).map(|v| v * v) / (b - 1.0);
    }
    McSlr {
        gain,
        offset,
        residual,
        gain_se: gain_var.map(|v| (v / b).sqrt()),
        offset_se: offset_var.map(|v| (v / b).sqrt()),
        residual_se: residual_var.map(|v| (v / b).sqrt()),
    }
}

fn slr_from_samples(
    xs: &[DVector<f64>],
    zs: &[DVector<f64>],
    mean: &DVector<f64>,
    cov: &DMatrix<f64>,
) -> (DMatrix<f64>, DVector<f64>, DMatrix<f64>) {
    let n = xs.len() as f64;
    let nx = mean.len();
    let ny = zs[0].len();
    let mut z_bar = DVector::zeros(ny);
    for z in zs {
        z_bar += z / n;
    }
    let mut cross = DMatrix::zeros(nx, ny);
    let mut spread = DMatrix::zeros(ny, ny);
    for (x, z) in xs.iter().zip(zs) {
        let dx = x - mean;
        let dz = z - &z_bar;
        cross += &dx * dz.transpose() / n;
        spread += &dz * dz.transpose() / n;
    }
    let cov_inv = Cholesky::new(cov.clone()).expect("oracle covariance PD").inverse();
    let gain = cross.transpose() * cov_inv;
    let offset = &z_bar - &gain * mean;
    let residual = spread - &gain * cov * gain.transpose();
    (gain, offset, residual)
}

// ---------------------------------------------------------------------------
// Metrics
// ---------------------------------------------------------------------------

/// Root-mean-square error over the position components (first two
/// state entries), comparing estimates at steps `1..=n` with the true
/// states.
pub fn position_rmse(estimates: &[GaussianBelief], truth: &[DVector<f64>]) -> f64 {
    assert_eq!(estimates.len() + 1, truth.len());
    let mut acc = 0.0;
    for (belief, x) in estimates.iter().zip(&truth[1..]) {
        let dx = belief.mean[0] - x[0];
        let dy = belief.mean[1] - x[1];
        acc += dx * dx + dy * dy;
    }
    (acc / estimates.len() as f64).sqrt()
}

pub fn max_abs_diff(a: &DVector<f64>, b: &DVector<f64>) -> f64 {
    (a - b).amax()
}

pub fn rel_close(x: f64, y: f64, atol: f64, rtol: f64) -> bool {
    (x - y).abs() <= atol + rtol * x.abs().max(y.abs())
}
