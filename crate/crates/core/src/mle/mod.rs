//! Maximum-likelihood reconstruction under a Gaussian noise model.
//!
//! With expected values `p_i = Tr(rho(tau) P_i)` and variance approximated by
//! `p_i`, the negative log-likelihood of observed values `m_i` is
//!
//! ```text
//! nll(tau) = sum_i (p_i - m_i)^2 / (2 max(p_i, floor))
//! ```
//!
//! which is minimized over `tau` with BFGS from several random starts.

mod bfgs;

use std::time::Instant;

use num_complex::Complex64;
use rand::Rng;

pub use bfgs::{bfgs_minimize, Minimum, C1, C2, CURVATURE_EPS, MAX_LINE_SEARCH_FAILURES};

use crate::measurement::{MeasurementRecord, ProjectorSet};
use crate::qstate::{density_from_tau, hilbert_dim, off_diagonal_slot, DensityMatrix, TauVector};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct MleConfig {
    pub grad_tolerance: f64,
    pub max_iterations: usize,
    pub denom_floor: f64,
    /// Half-width of the uniform initialization box. `None` picks
    /// `sqrt(6 / (2 * 4^d))`.
    pub init_scale: Option<f64>,
    pub restarts: usize,
}

impl Default for MleConfig {
    fn default() -> Self {
        Self {
            grad_tolerance: 1e-8,
            max_iterations: 500,
            denom_floor: 1e-9,
            init_scale: None,
            restarts: 3,
        }
    }
}

impl MleConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.grad_tolerance > 0.0) {
            return Err(Error::InvalidArgument("grad_tolerance must be > 0".into()));
        }
        if !(self.denom_floor > 0.0) {
            return Err(Error::InvalidArgument("denom_floor must be > 0".into()));
        }
        if self.restarts < 1 {
            return Err(Error::InvalidArgument("restarts must be >= 1".into()));
        }
        if matches!(self.init_scale, Some(s) if !(s > 0.0)) {
            return Err(Error::InvalidArgument("init_scale must be > 0".into()));
        }
        Ok(())
    }

    pub fn init_scale_for(&self, qubits: usize) -> f64 {
        self.init_scale.unwrap_or_else(|| {
            let fan = 4usize.pow(qubits as u32) as f64;
            (6.0 / (2.0 * fan)).sqrt()
        })
    }
}

#[derive(Debug, Clone)]
pub struct MleResult {
    pub rho: DensityMatrix,
    pub tau: TauVector,
    pub nll: f64,
    pub iterations: usize,
    pub converged: bool,
    pub wall_time: f64,
}

/// The likelihood of one record, with projector kets laid out flat for the
/// inner loops.
struct Objective<'a> {
    n: usize,
    kets: Vec<Complex64>,
    record: &'a [f64],
    floor: f64,
}

impl<'a> Objective<'a> {
    fn new(record: &'a MeasurementRecord, proj: &ProjectorSet, floor: f64) -> Result<Self> {
        if record.qubits() != proj.qubits() {
            return Err(Error::DimensionMismatch {
                expected: proj.qubits(),
                actual: record.qubits(),
            });
        }
        if !(floor > 0.0) {
            return Err(Error::InvalidArgument(
                "denominator floor must be > 0".into(),
            ));
        }
        let kets = proj.kets().iter().flat_map(|k| k.iter().copied()).collect();
        Ok(Self {
            n: hilbert_dim(proj.qubits()),
            kets,
            record: record.values(),
            floor,
        })
    }

    fn check_tau(&self, tau: &[f64]) -> Result<f64> {
        if tau.len() != self.n * self.n {
            return Err(Error::DimensionMismatch {
                expected: self.n * self.n,
                actual: tau.len(),
            });
        }
        let trace: f64 = tau.iter().map(|v| v * v).sum();
        if trace == 0.0 {
            return Err(Error::DegenerateParameter);
        }
        Ok(trace)
    }

    /// `w = T v` for lower-triangular `T` given by `tau`.
    fn apply_factor(&self, tau: &[f64], ket: &[Complex64], w: &mut [Complex64]) {
        let n = self.n;
        for r in 0..n {
            let mut acc = ket[r] * tau[r];
            for (c, v) in ket.iter().enumerate().take(r) {
                let k = off_diagonal_slot(n, r, c);
                acc += Complex64::new(tau[k], tau[k + 1]) * v;
            }
            w[r] = acc;
        }
    }

    fn value(&self, tau: &[f64]) -> Result<f64> {
        let trace = self.check_tau(tau)?;
        let mut w = vec![Complex64::new(0.0, 0.0); self.n];
        let mut total = 0.0;
        for (ket, &m) in self.kets.chunks(self.n).zip(self.record) {
            self.apply_factor(tau, ket, &mut w);
            let p = w.iter().map(|z| z.norm_sqr()).sum::<f64>() / trace;
            total += (p - m) * (p - m) / (2.0 * p.max(self.floor));
        }
        Ok(total)
    }

    fn value_and_gradient(&self, tau: &[f64]) -> Result<(f64, Vec<f64>)> {
        let trace = self.check_tau(tau)?;
        let n = self.n;
        let mut w = vec![Complex64::new(0.0, 0.0); n];
        // acc[r][c] = sum_i g_i conj(w_i[r]) v_i[c], with g_i = d nll / d p_i
        let mut acc = vec![Complex64::new(0.0, 0.0); n * n];
        let mut weighted_p = 0.0;
        let mut total = 0.0;
        for (ket, &m) in self.kets.chunks(n).zip(self.record) {
            self.apply_factor(tau, ket, &mut w);
            let p = w.iter().map(|z| z.norm_sqr()).sum::<f64>() / trace;
            let g = if p > self.floor {
                total += (p - m) * (p - m) / (2.0 * p);
                (p * p - m * m) / (2.0 * p * p)
            } else {
                total += (p - m) * (p - m) / (2.0 * self.floor);
                (p - m) / self.floor
            };
            weighted_p += g * p;
            for r in 0..n {
                let wr = w[r].conj() * g;
                for c in 0..=r {
                    acc[r * n + c] += wr * ket[c];
                }
            }
        }
        // p_i = q_i / t with q_i = |T v_i|^2 and t = |tau|^2.
        let mut grad = vec![0.0; n * n];
        for r in 0..n {
            grad[r] = 2.0 * acc[r * n + r].re;
            for c in 0..r {
                let k = off_diagonal_slot(n, r, c);
                grad[k] = 2.0 * acc[r * n + c].re;
                grad[k + 1] = -2.0 * acc[r * n + c].im;
            }
        }
        for (gk, tk) in grad.iter_mut().zip(tau) {
            *gk = (*gk - 2.0 * weighted_p * tk) / trace;
        }
        Ok((total, grad))
    }
}

/// Gaussian negative log-likelihood of `record` under `rho(tau)`.
pub fn nll(
    tau: &TauVector,
    record: &MeasurementRecord,
    proj: &ProjectorSet,
    floor: f64,
) -> Result<f64> {
    Objective::new(record, proj, floor)?.value(tau.values())
}

/// Analytic gradient of [`nll`] with respect to every `tau` component.
pub fn nll_gradient(
    tau: &TauVector,
    record: &MeasurementRecord,
    proj: &ProjectorSet,
    floor: f64,
) -> Result<Vec<f64>> {
    Ok(Objective::new(record, proj, floor)?
        .value_and_gradient(tau.values())?
        .1)
}

/// Runs BFGS from `config.restarts` uniform random starts and keeps the run
/// with the lowest final likelihood.
pub fn reconstruct_mle<R: Rng + ?Sized>(
    record: &MeasurementRecord,
    proj: &ProjectorSet,
    config: &MleConfig,
    rng: &mut R,
) -> Result<MleResult> {
    config.validate()?;
    let start = Instant::now();
    let objective = Objective::new(record, proj, config.denom_floor)?;
    let dim = objective.n * objective.n;
    let scale = config.init_scale_for(proj.qubits());

    let f = |x: &[f64]| match objective.value_and_gradient(x) {
        Ok(vg) => vg,
        Err(_) => (f64::INFINITY, vec![0.0; x.len()]),
    };

    let mut best: Option<Minimum> = None;
    let mut last_error = None;
    for _ in 0..config.restarts {
        let x0: Vec<f64> = (0..dim).map(|_| rng.random_range(-scale..=scale)).collect();
        let run = match bfgs_minimize(f, &x0, config.grad_tolerance, config.max_iterations) {
            Ok(m) => m,
            Err(Error::Stalled {
                point,
                value,
                iterations,
                ..
            }) => Minimum {
                x: point,
                value,
                iterations,
                converged: false,
            },
            Err(e) => {
                last_error = Some(e);
                continue;
            }
        };
        if !run.value.is_finite() {
            continue;
        }
        if best.as_ref().is_none_or(|b| run.value < b.value) {
            best = Some(run);
        }
    }

    let best = best.ok_or_else(|| {
        Error::Optimization(match last_error {
            Some(e) => format!("all restarts failed: {e}"),
            None => "all restarts diverged".into(),
        })
    })?;
    let tau = TauVector::new(best.x)?;
    let rho = density_from_tau(&tau)?;
    Ok(MleResult {
        rho,
        tau,
        nll: best.value,
        iterations: best.iterations,
        converged: best.converged,
        wall_time: start.elapsed().as_secs_f64(),
    })
}
