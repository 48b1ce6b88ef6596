//! BFGS with a strong Wolfe line search.

use crate::{Error, Result};

/// Sufficient-decrease constant.
pub const C1: f64 = 1e-4;
/// Curvature constant.
pub const C2: f64 = 0.9;
/// The inverse-Hessian update is skipped when `y.s` is at or below this.
pub const CURVATURE_EPS: f64 = 1e-12;
/// Consecutive line-search failures tolerated before giving up.
pub const MAX_LINE_SEARCH_FAILURES: usize = 20;

const MAX_BRACKET_STEPS: usize = 40;
const MAX_ZOOM_STEPS: usize = 40;

/// Outcome of a minimization run.
#[derive(Debug, Clone, PartialEq)]
pub struct Minimum {
    pub x: Vec<f64>,
    pub value: f64,
    pub iterations: usize,
    pub converged: bool,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn inf_norm(a: &[f64]) -> f64 {
    a.iter().fold(0.0, |m, v| m.max(v.abs()))
}

/// Non-finite objective values are treated as `+inf` so the line search
/// backs away from them.
fn sanitize(v: f64) -> f64 {
    if v.is_nan() {
        f64::INFINITY
    } else {
        v
    }
}

struct Trial {
    alpha: f64,
    value: f64,
    slope: f64,
    x: Vec<f64>,
    grad: Vec<f64>,
}

struct LineSearch<'a, F> {
    f: &'a mut F,
    x: &'a [f64],
    dir: &'a [f64],
    value0: f64,
    slope0: f64,
}

impl<F> LineSearch<'_, F>
where
    F: FnMut(&[f64]) -> (f64, Vec<f64>),
{
    fn eval(&mut self, alpha: f64) -> Trial {
        let x: Vec<f64> = self
            .x
            .iter()
            .zip(self.dir)
            .map(|(xi, pi)| xi + alpha * pi)
            .collect();
        let (value, grad) = (self.f)(&x);
        let value = sanitize(value);
        let slope = if value.is_finite() {
            dot(&grad, self.dir)
        } else {
            f64::NAN
        };
        Trial {
            alpha,
            value,
            slope,
            x,
            grad,
        }
    }

    fn armijo(&self, t: &Trial) -> bool {
        t.value <= self.value0 + C1 * t.alpha * self.slope0
    }

    fn curvature(&self, t: &Trial) -> bool {
        t.slope.abs() <= -C2 * self.slope0
    }

    /// Bracketing phase. Returns a step meeting both strong Wolfe
    /// conditions, or failing that the best sufficient-decrease step seen.
    fn search(&mut self, alpha_init: f64) -> Option<Trial> {
        let mut prev = Trial {
            alpha: 0.0,
            value: self.value0,
            slope: self.slope0,
            x: self.x.to_vec(),
            grad: Vec::new(),
        };
        let mut alpha = alpha_init;
        for i in 0..MAX_BRACKET_STEPS {
            let cur = self.eval(alpha);
            if !self.armijo(&cur) || (i > 0 && cur.value >= prev.value) {
                return self.zoom(prev, cur);
            }
            if self.curvature(&cur) {
                return Some(cur);
            }
            if cur.slope >= 0.0 {
                return self.zoom(cur, prev);
            }
            alpha *= 2.0;
            prev = cur;
        }
        (prev.alpha > 0.0).then_some(prev)
    }

    /// Zoom between `lo` (satisfies sufficient decrease, lowest value so far)
    /// and `hi`.
    fn zoom(&mut self, mut lo: Trial, mut hi: Trial) -> Option<Trial> {
        for _ in 0..MAX_ZOOM_STEPS {
            let alpha = interpolate(&lo, &hi);
            if (hi.alpha - lo.alpha).abs() <= f64::EPSILON * lo.alpha.abs().max(1.0) {
                break;
            }
            let cur = self.eval(alpha);
            if !self.armijo(&cur) || cur.value >= lo.value {
                hi = cur;
            } else {
                if self.curvature(&cur) {
                    return Some(cur);
                }
                if cur.slope * (hi.alpha - lo.alpha) >= 0.0 {
                    hi = lo;
                }
                lo = cur;
            }
        }
        // Accept a strictly decreasing step even if curvature never held.
        (lo.alpha > 0.0 && lo.value < self.value0).then_some(lo)
    }
}

/// Safeguarded cubic interpolation inside `[lo, hi]`, falling back to bisection.
fn interpolate(lo: &Trial, hi: &Trial) -> f64 {
    let (a, b) = (lo.alpha, hi.alpha);
    let mid = 0.5 * (a + b);
    if !(hi.value.is_finite() && hi.slope.is_finite()) {
        return mid;
    }
    let d1 = lo.slope + hi.slope - 3.0 * (lo.value - hi.value) / (a - b);
    let disc = d1 * d1 - lo.slope * hi.slope;
    if !(disc >= 0.0) {
        return mid;
    }
    let d2 = (b - a).signum() * disc.sqrt();
    let step = b - (b - a) * (hi.slope + d2 - d1) / (hi.slope - lo.slope + 2.0 * d2);
    let (left, right) = if a < b { (a, b) } else { (b, a) };
    let margin = 0.1 * (right - left);
    if step.is_finite() && step > left + margin && step < right - margin {
        step
    } else {
        mid
    }
}

/// Minimizes `f` (returning value and gradient) from `x0`.
///
/// Terminates when the gradient infinity-norm drops to `tolerance`
/// (`converged = true`) or after `max_iter` accepted steps. Accepted steps
/// never increase the objective. When the line search fails
/// [`MAX_LINE_SEARCH_FAILURES`] times in a row the run ends with
/// [`Error::Stalled`], which carries the best point reached.
pub fn bfgs_minimize<F>(mut f: F, x0: &[f64], tolerance: f64, max_iter: usize) -> Result<Minimum>
where
    F: FnMut(&[f64]) -> (f64, Vec<f64>),
{
    let n = x0.len();
    let mut x = x0.to_vec();
    let (mut value, mut grad) = f(&x);
    if !value.is_finite() || grad.iter().any(|g| !g.is_finite()) {
        return Err(Error::Optimization(
            "objective is not finite at the starting point".into(),
        ));
    }
    // Row-major inverse Hessian approximation; `None` until the first
    // accepted step lets us pick a scale.
    let mut h: Option<Vec<f64>> = None;
    let mut failures = 0;
    let mut iterations = 0;

    while iterations < max_iter {
        if inf_norm(&grad) <= tolerance {
            return Ok(Minimum {
                x,
                value,
                iterations,
                converged: true,
            });
        }
        let mut dir = match &h {
            Some(h) => (0..n)
                .map(|i| -dot(&h[i * n..(i + 1) * n], &grad))
                .collect::<Vec<_>>(),
            None => grad.iter().map(|g| -g).collect(),
        };
        let mut slope = dot(&grad, &dir);
        if !(slope < 0.0) {
            // Lost positive-definiteness numerically; restart from steepest descent.
            h = None;
            dir = grad.iter().map(|g| -g).collect();
            slope = dot(&grad, &dir);
        }
        let alpha_init = if h.is_some() {
            1.0
        } else {
            (1.0 / dot(&grad, &grad).sqrt()).min(1.0)
        };

        let trial = LineSearch {
            f: &mut f,
            x: &x,
            dir: &dir,
            value0: value,
            slope0: slope,
        }
        .search(alpha_init);

        let Some(trial) = trial else {
            failures += 1;
            if failures >= MAX_LINE_SEARCH_FAILURES {
                return Err(Error::Stalled {
                    failures,
                    point: x,
                    value,
                    iterations,
                });
            }
            h = None;
            continue;
        };
        failures = 0;
        iterations += 1;

        let s: Vec<f64> = trial.x.iter().zip(&x).map(|(a, b)| a - b).collect();
        let y: Vec<f64> = trial.grad.iter().zip(&grad).map(|(a, b)| a - b).collect();
        let ys = dot(&y, &s);
        if ys > CURVATURE_EPS {
            let hm = h.get_or_insert_with(|| {
                let scale = ys / dot(&y, &y);
                let mut id = vec![0.0; n * n];
                for i in 0..n {
                    id[i * n + i] = scale;
                }
                id
            });
            bfgs_update(hm, &s, &y, ys);
        }
        x = trial.x;
        value = trial.value;
        grad = trial.grad;
    }
    let converged = inf_norm(&grad) <= tolerance;
    Ok(Minimum {
        x,
        value,
        iterations,
        converged,
    })
}

/// `H <- (I - rho s y^T) H (I - rho y s^T) + rho s s^T`, `rho = 1 / y.s`.
fn bfgs_update(h: &mut [f64], s: &[f64], y: &[f64], ys: f64) {
    let n = s.len();
    let rho = 1.0 / ys;
    let hy: Vec<f64> = (0..n).map(|i| dot(&h[i * n..(i + 1) * n], y)).collect();
    let yhy = dot(y, &hy);
    let coeff = (1.0 + rho * yhy) * rho;
    for i in 0..n {
        for j in 0..n {
            h[i * n + j] += coeff * s[i] * s[j] - rho * (hy[i] * s[j] + s[i] * hy[j]);
        }
    }
}
