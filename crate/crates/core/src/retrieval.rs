//! Classical phase retrieval: Gerchberg-Saxton and Wirtinger Flow.
//!
//! Both solvers recover `x` from `b = |A^* x|^2` up to a global unit-modulus
//! factor. The stopping rule is shared: stop after `max_iters` iterations or
//! once the relative intensity residual `||A^* x|^2 - b|| / ||b||` drops to
//! `tol`.

use std::time::Instant;

use nalgebra::DVector;
use num_complex::Complex64;

use crate::error::{CoreError, Result};
use crate::linalg::{self, AdjointPinv};
use crate::medium::{IntensityVector, SignalMode, SignalVector, TransmissionMatrix};
use crate::rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Algorithm {
    Gs,
    Wf,
}

impl std::str::FromStr for Algorithm {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "gs" => Ok(Algorithm::Gs),
            "wf" => Ok(Algorithm::Wf),
            other => Err(format!("unknown algorithm `{other}` (expected gs or wf)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverConfig {
    pub algorithm: Algorithm,
    pub max_iters: usize,
    /// Relative intensity residual at which iteration stops.
    pub tol: f64,
    /// Step-ramp constant of the Wirtinger Flow schedule.
    pub wf_t0: f64,
    /// Ceiling of the Wirtinger Flow step.
    pub wf_mu_max: f64,
    /// Power iterations used by the spectral initializer.
    pub power_iters: usize,
    pub seed: u64,
    /// Project every iterate onto the real axis (for known-real signals).
    pub project_real: bool,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            algorithm: Algorithm::Wf,
            max_iters: 100,
            tol: 1e-10,
            wf_t0: 330.0,
            wf_mu_max: 0.4,
            power_iters: 50,
            seed: 0,
            project_real: false,
        }
    }
}

impl SolverConfig {
    pub fn gs(max_iters: usize) -> Self {
        Self {
            algorithm: Algorithm::Gs,
            max_iters,
            ..Self::default()
        }
    }

    pub fn wf(max_iters: usize) -> Self {
        Self {
            algorithm: Algorithm::Wf,
            max_iters,
            ..Self::default()
        }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn with_tol(mut self, tol: f64) -> Self {
        self.tol = tol;
        self
    }

    /// Overrides the WF step schedule `min(1 - exp(-t / t0), mu_max)`.
    pub fn with_wf_step(mut self, t0: f64, mu_max: f64) -> Self {
        self.wf_t0 = t0;
        self.wf_mu_max = mu_max;
        self
    }

    pub fn with_real_projection(mut self, on: bool) -> Self {
        self.project_real = on;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.max_iters == 0 {
            return Err(CoreError::InvalidConfig("max_iters must be >= 1".into()));
        }
        if !(self.tol >= 0.0) {
            return Err(CoreError::InvalidConfig(format!("tol must be >= 0, got {}", self.tol)));
        }
        if !(self.wf_mu_max > 0.0) {
            return Err(CoreError::InvalidConfig(format!(
                "wf_mu_max must be > 0, got {}",
                self.wf_mu_max
            )));
        }
        if !(self.wf_t0 > 0.0) {
            return Err(CoreError::InvalidConfig(format!(
                "wf_t0 must be > 0, got {}",
                self.wf_t0
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct Solution {
    pub x_hat: SignalVector,
    pub iterations_run: usize,
    /// Relative intensity residual after each iteration.
    pub residual_history: Vec<f64>,
    pub wall_time_seconds: f64,
}

impl Solution {
    pub fn final_residual(&self) -> f64 {
        self.residual_history.last().copied().unwrap_or(f64::INFINITY)
    }
}

/// Output of the spectral initializer.
#[derive(Debug, Clone)]
pub struct SpectralInit {
    pub x0: SignalVector,
    /// Set when `b` is identically zero and no direction can be estimated.
    pub degenerate: bool,
}

/// `||A^* x|^2 - b|| / ||b||`; falls back to the absolute residual when `b = 0`.
pub fn relative_residual(field: &DVector<Complex64>, b: &IntensityVector) -> f64 {
    let diff = field
        .iter()
        .zip(b.values().iter())
        .map(|(z, bj)| (z.norm_sqr() - bj).powi(2))
        .sum::<f64>()
        .sqrt();
    let scale = b.norm();
    if scale > 0.0 {
        diff / scale
    } else {
        diff
    }
}

/// A solver bound to one measurement frame.
///
/// Preparing is where the per-frame work happens (the QR-based
/// pseudoinverse for GS); [`Retriever::solve`] can then be called for many
/// intensity vectors, which is how column-wise calibration reuses one frame.
#[derive(Debug, Clone)]
pub struct Retriever<'a> {
    a: &'a TransmissionMatrix,
    cfg: SolverConfig,
    pinv: Option<AdjointPinv>,
}

impl<'a> Retriever<'a> {
    pub fn new(a: &'a TransmissionMatrix, cfg: SolverConfig) -> Result<Self> {
        cfg.validate()?;
        let pinv = match cfg.algorithm {
            Algorithm::Gs => Some(AdjointPinv::new(a.entries())?),
            Algorithm::Wf => None,
        };
        Ok(Self { a, cfg, pinv })
    }

    pub fn config(&self) -> &SolverConfig {
        &self.cfg
    }

    /// Rank of the frame, when the configured algorithm factored it.
    pub fn frame_rank(&self) -> Option<usize> {
        self.pinv.as_ref().map(AdjointPinv::rank)
    }

    pub fn solve(&self, b: &IntensityVector) -> Result<Solution> {
        self.solve_seeded(b, self.cfg.seed)
    }

    pub fn solve_seeded(&self, b: &IntensityVector, seed: u64) -> Result<Solution> {
        self.check(b)?;
        let start = Instant::now();
        let (x, history) = match self.cfg.algorithm {
            Algorithm::Gs => {
                let x0 = self.random_start(seed);
                self.run_gs(b, x0)
            }
            Algorithm::Wf => {
                let init = spectral_init_unchecked(self.a, b, self.cfg.power_iters, seed);
                let x0 = if self.cfg.project_real {
                    rotate_to_real(init.x0.values())
                } else {
                    init.x0.into_values()
                };
                self.run_wf(b, x0)
            }
        };
        Ok(self.finish(x, history, start))
    }

    /// Runs the configured iteration from an explicit starting point.
    pub fn solve_from(&self, b: &IntensityVector, start_point: &SignalVector) -> Result<Solution> {
        self.check(b)?;
        if start_point.len() != self.a.n() {
            return Err(CoreError::Dimension(format!(
                "start point has length {} but n = {}",
                start_point.len(),
                self.a.n()
            )));
        }
        let start = Instant::now();
        let x0 = start_point.values().clone();
        let (x, history) = match self.cfg.algorithm {
            Algorithm::Gs => self.run_gs(b, x0),
            Algorithm::Wf => self.run_wf(b, x0),
        };
        Ok(self.finish(x, history, start))
    }

    /// One Gerchberg-Saxton projection `pinv(A^*) (sqrt(b) . phase(A^* x))`.
    pub fn gs_iterate(&self, x: &DVector<Complex64>, b: &IntensityVector) -> Result<DVector<Complex64>> {
        self.check(b)?;
        let pinv = match &self.pinv {
            Some(p) => p,
            None => return Err(CoreError::InvalidConfig("gs_iterate needs a GS retriever".into())),
        };
        let sqrt_b: Vec<f64> = b.values().iter().map(|v| v.sqrt()).collect();
        let field = linalg::adjoint_apply(self.a.entries(), x);
        Ok(self.gs_project(pinv, &field, &sqrt_b))
    }

    fn check(&self, b: &IntensityVector) -> Result<()> {
        if b.len() != self.a.m() {
            return Err(CoreError::Dimension(format!(
                "intensity vector has length {} but m = {}",
                b.len(),
                self.a.m()
            )));
        }
        Ok(())
    }

    fn finish(&self, x: DVector<Complex64>, history: Vec<f64>, start: Instant) -> Solution {
        let mode = if self.cfg.project_real {
            SignalMode::FreeReal
        } else {
            SignalMode::FreeComplex
        };
        Solution {
            x_hat: SignalVector::new(x.clone(), mode)
                .unwrap_or_else(|_| SignalVector::zeros(x.len(), SignalMode::FreeComplex)),
            iterations_run: history.len(),
            residual_history: history,
            wall_time_seconds: start.elapsed().as_secs_f64(),
        }
    }

    fn random_start(&self, seed: u64) -> DVector<Complex64> {
        let mut g = rng::seeded(seed);
        let mut v = DVector::from_fn(self.a.n(), |_, _| rng::complex_normal(&mut g, 1.0));
        if self.cfg.project_real {
            v.iter_mut().for_each(|z| z.im = 0.0);
        }
        let norm = linalg::norm(&v);
        if norm > 0.0 {
            v.unscale_mut(norm);
        }
        v
    }

    fn project(&self, x: &mut DVector<Complex64>) {
        if self.cfg.project_real {
            x.iter_mut().for_each(|z| z.im = 0.0);
        }
    }

    fn gs_project(
        &self,
        pinv: &AdjointPinv,
        field: &DVector<Complex64>,
        sqrt_b: &[f64],
    ) -> DVector<Complex64> {
        let target = DVector::from_iterator(
            field.len(),
            field.iter().zip(sqrt_b).map(|(z, &s)| {
                let r = z.norm();
                if r > 0.0 {
                    z * (s / r)
                } else {
                    Complex64::new(s, 0.0)
                }
            }),
        );
        let mut x = pinv.solve(&target);
        self.project(&mut x);
        x
    }

    fn run_gs(&self, b: &IntensityVector, mut x: DVector<Complex64>) -> (DVector<Complex64>, Vec<f64>) {
        let pinv = self.pinv.as_ref().expect("GS retriever always holds a pseudoinverse");
        let sqrt_b: Vec<f64> = b.values().iter().map(|v| v.sqrt()).collect();
        let mut field = linalg::adjoint_apply(self.a.entries(), &x);
        let mut history = Vec::with_capacity(self.cfg.max_iters);
        for _ in 0..self.cfg.max_iters {
            x = self.gs_project(pinv, &field, &sqrt_b);
            field = linalg::adjoint_apply(self.a.entries(), &x);
            let res = relative_residual(&field, b);
            history.push(res);
            if res <= self.cfg.tol {
                break;
            }
        }
        (x, history)
    }

    fn run_wf(&self, b: &IntensityVector, mut x: DVector<Complex64>) -> (DVector<Complex64>, Vec<f64>) {
        let a = self.a.entries();
        let m = self.a.m() as f64;
        let x0_sq = x.norm_squared();
        // The step rule assumes unit-power frame entries; rescaling by the
        // mean entry power makes it independent of how the medium is normalized.
        let power = self.a.mean_entry_power();
        let mut field = linalg::adjoint_apply(a, &x);
        let mut history = Vec::with_capacity(self.cfg.max_iters);
        for t in 1..=self.cfg.max_iters {
            if x0_sq > 0.0 {
                let mu = (1.0 - (-(t as f64) / self.cfg.wf_t0).exp()).min(self.cfg.wf_mu_max);
                let weights = DVector::from_iterator(
                    field.len(),
                    field
                        .iter()
                        .zip(b.values().iter())
                        .map(|(z, bj)| z * (z.norm_sqr() - bj) / m),
                );
                let grad = linalg::apply(a, &weights);
                let step = mu / (x0_sq * power * power);
                x.axpy(Complex64::new(-step, 0.0), &grad, Complex64::new(1.0, 0.0));
                self.project(&mut x);
                field = linalg::adjoint_apply(a, &x);
            }
            let res = relative_residual(&field, b);
            history.push(res);
            if res <= self.cfg.tol {
                break;
            }
        }
        (x, history)
    }
}

/// Gerchberg-Saxton from a seeded random unit-norm start.
pub fn gs_solve(a: &TransmissionMatrix, b: &IntensityVector, cfg: &SolverConfig) -> Result<Solution> {
    let cfg = SolverConfig {
        algorithm: Algorithm::Gs,
        ..*cfg
    };
    Retriever::new(a, cfg)?.solve(b)
}

/// Wirtinger Flow from the spectral initializer.
pub fn wf_solve(a: &TransmissionMatrix, b: &IntensityVector, cfg: &SolverConfig) -> Result<Solution> {
    let cfg = SolverConfig {
        algorithm: Algorithm::Wf,
        ..*cfg
    };
    Retriever::new(a, cfg)?.solve(b)
}

/// Dispatches on `cfg.algorithm`.
pub fn solve(a: &TransmissionMatrix, b: &IntensityVector, cfg: &SolverConfig) -> Result<Solution> {
    Retriever::new(a, *cfg)?.solve(b)
}

/// Leading eigenvector of `Y = (1/m) sum_j b_j a_j a_j^*` by power iteration,
/// scaled by the norm estimate `sqrt(sum b / sum ||a_j||^2) * sqrt(n)`.
pub fn wf_spectral_init(
    a: &TransmissionMatrix,
    b: &IntensityVector,
    power_iters: usize,
    seed: u64,
) -> Result<SpectralInit> {
    if b.len() != a.m() {
        return Err(CoreError::Dimension(format!(
            "intensity vector has length {} but m = {}",
            b.len(),
            a.m()
        )));
    }
    Ok(spectral_init_unchecked(a, b, power_iters, seed))
}

fn spectral_init_unchecked(
    a: &TransmissionMatrix,
    b: &IntensityVector,
    power_iters: usize,
    seed: u64,
) -> SpectralInit {
    let n = a.n();
    let total_b: f64 = b.values().sum();
    if total_b == 0.0 {
        return SpectralInit {
            x0: SignalVector::zeros(n, SignalMode::FreeComplex),
            degenerate: true,
        };
    }
    let entries = a.entries();
    let m = a.m() as f64;
    let mut g = rng::seeded(seed);
    let mut v = DVector::from_fn(n, |_, _| rng::complex_normal(&mut g, 1.0));
    v.unscale_mut(linalg::norm(&v));
    for _ in 0..power_iters {
        // Y v applied implicitly as A (b . (A^* v)) / m.
        let mut field = linalg::adjoint_apply(entries, &v);
        field
            .iter_mut()
            .zip(b.values().iter())
            .for_each(|(z, bj)| *z *= bj / m);
        let w = linalg::apply(entries, &field);
        let norm = linalg::norm(&w);
        if norm == 0.0 {
            break;
        }
        v = w.unscale(norm);
    }
    let total_col_power: f64 = entries.iter().map(|z| z.norm_sqr()).sum();
    let lambda = (total_b / total_col_power).sqrt() * (n as f64).sqrt();
    SpectralInit {
        x0: SignalVector::from_raw(v.scale(lambda), SignalMode::FreeComplex),
        degenerate: false,
    }
}

/// Wirtinger gradient `(1/m) sum_j (|a_j^* x|^2 - b_j) a_j a_j^* x` of
/// `f(x) = (1/2m) sum_j (|a_j^* x|^2 - b_j)^2`.
pub fn wf_gradient(
    a: &TransmissionMatrix,
    b: &IntensityVector,
    x: &DVector<Complex64>,
) -> Result<DVector<Complex64>> {
    if b.len() != a.m() || x.len() != a.n() {
        return Err(CoreError::Dimension("gradient operands do not match the medium".into()));
    }
    let m = a.m() as f64;
    let field = linalg::adjoint_apply(a.entries(), x);
    let weights = DVector::from_iterator(
        field.len(),
        field
            .iter()
            .zip(b.values().iter())
            .map(|(z, bj)| z * (z.norm_sqr() - bj) / m),
    );
    Ok(linalg::apply(a.entries(), &weights))
}

/// Rotates `z` by the global phase that maximizes its real energy, then drops the imaginary part.
fn rotate_to_real(z: &DVector<Complex64>) -> DVector<Complex64> {
    let s: Complex64 = z.iter().map(|v| v * v).sum();
    let rot = Complex64::from_polar(1.0, -s.arg() / 2.0);
    z.map(|v| Complex64::new((v * rot).re, 0.0))
}

/// Optimal unit-modulus `c` with `x_est ~ c x_ref` (1 when they are orthogonal).
fn optimal_phase(x_est: &SignalVector, x_ref: &SignalVector) -> Complex64 {
    let inner: Complex64 = x_ref
        .values()
        .iter()
        .zip(x_est.values().iter())
        .map(|(r, e)| r.conj() * e)
        .sum();
    let mag = inner.norm();
    if mag == 0.0 {
        Complex64::new(1.0, 0.0)
    } else if x_est.mode().is_real() && x_ref.mode().is_real() {
        Complex64::new(inner.re.signum(), 0.0)
    } else {
        inner / mag
    }
}

/// `min_{|c|=1} ||x_est - c x_ref|| / ||x_ref||`.
pub fn relative_error(x_est: &SignalVector, x_ref: &SignalVector) -> Result<f64> {
    if x_est.len() != x_ref.len() {
        return Err(CoreError::Dimension(format!(
            "cannot compare signals of length {} and {}",
            x_est.len(),
            x_ref.len()
        )));
    }
    let ref_norm = x_ref.norm();
    if ref_norm == 0.0 {
        return Err(CoreError::ZeroReference);
    }
    let c = optimal_phase(x_est, x_ref);
    let diff = x_est
        .values()
        .iter()
        .zip(x_ref.values().iter())
        .map(|(e, r)| (e - c * r).norm_sqr())
        .sum::<f64>()
        .sqrt();
    Ok(diff / ref_norm)
}

/// `conj(c) x_est` for the `c` used by [`relative_error`], so the result lines up with `x_ref`.
pub fn align_global_phase(x_est: &SignalVector, x_ref: &SignalVector) -> SignalVector {
    if x_est.len() != x_ref.len() {
        return x_est.clone();
    }
    let c = optimal_phase(x_est, x_ref);
    let values = x_est.values().map(|v| v * c.conj());
    let mode = if x_est.mode().is_real() && c.im == 0.0 {
        SignalMode::FreeReal
    } else {
        SignalMode::FreeComplex
    };
    SignalVector::from_raw(values, mode)
}
