//! Scalar root finders: Newton-Raphson, Brent and grid search.

use crate::error::{arg, Error, Result};

/// Stopping rules shared by the iterative solvers.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverConfig {
    pub max_iterations: usize,
    /// Converged once |f(x)| falls to this level.
    pub abs_tolerance: f64,
    /// Converged once successive iterates (or the bracket) are this close.
    pub step_tolerance: f64,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            max_iterations: 100,
            abs_tolerance: 1e-10,
            step_tolerance: 1e-14,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_iterations == 0 || !(self.abs_tolerance > 0.0) || !(self.step_tolerance > 0.0) {
            return arg("solver configuration must be strictly positive");
        }
        Ok(())
    }
}

/// A converged root.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Root {
    pub x: f64,
    pub fx: f64,
    pub iterations: usize,
}

/// Newton-Raphson from `x0`. Stops with an error when the derivative
/// vanishes or the iteration cap is reached, so callers can fall back.
pub fn newton_raphson<F, D>(f: F, fprime: D, x0: f64, cfg: &SolverConfig) -> Result<Root>
where
    F: Fn(f64) -> f64,
    D: Fn(f64) -> f64,
{
    cfg.validate()?;
    let mut x = x0;
    for iterations in 0..=cfg.max_iterations {
        let fx = f(x);
        if !fx.is_finite() {
            return Err(Error::NonConvergence { iterations, last: x });
        }
        if fx.abs() <= cfg.abs_tolerance {
            return Ok(Root { x, fx, iterations });
        }
        if iterations == cfg.max_iterations {
            break;
        }
        let d = fprime(x);
        if !(d.abs() >= 1e-300) {
            return Err(Error::SingularDerivative { x });
        }
        let next = x - fx / d;
        if !next.is_finite() {
            return Err(Error::NonConvergence { iterations, last: x });
        }
        if (next - x).abs() <= cfg.step_tolerance * (1.0 + x.abs()) {
            let fn_ = f(next);
            if fn_.abs() <= cfg.abs_tolerance {
                return Ok(Root { x: next, fx: fn_, iterations: iterations + 1 });
            }
            return Err(Error::NonConvergence { iterations: iterations + 1, last: next });
        }
        x = next;
    }
    Err(Error::NonConvergence { iterations: cfg.max_iterations, last: x })
}

/// Brent's method on a sign-changing bracket.
///
/// Returns once |f(x)| ≤ `abs_tolerance` or the bracket has shrunk below
/// `step_tolerance` (relative), whichever comes first.
pub fn brent_root<F>(f: F, lo: f64, hi: f64, cfg: &SolverConfig) -> Result<Root>
where
    F: Fn(f64) -> f64,
{
    cfg.validate()?;
    let (mut a, mut b) = (lo, hi);
    let (mut fa, mut fb) = (f(a), f(b));
    if fa == 0.0 {
        return Ok(Root { x: a, fx: 0.0, iterations: 0 });
    }
    if fb == 0.0 {
        return Ok(Root { x: b, fx: 0.0, iterations: 0 });
    }
    if !(fa.is_finite() && fb.is_finite()) || fa.signum() == fb.signum() {
        return Err(Error::Bracket { lo, hi, flo: fa, fhi: fb });
    }
    let (mut c, mut fc) = (b, fb);
    let (mut d, mut e) = (b - a, b - a);
    for iterations in 1..=cfg.max_iterations {
        if fb.signum() == fc.signum() {
            c = a;
            fc = fa;
            d = b - a;
            e = d;
        }
        if fc.abs() < fb.abs() {
            a = b;
            b = c;
            c = a;
            fa = fb;
            fb = fc;
            fc = fa;
        }
        let tol = 2.0 * f64::EPSILON * b.abs() + 0.5 * cfg.step_tolerance;
        let xm = 0.5 * (c - b);
        if fb.abs() <= cfg.abs_tolerance || xm.abs() <= tol {
            return Ok(Root { x: b, fx: fb, iterations });
        }
        if e.abs() >= tol && fa.abs() > fb.abs() {
            let s = fb / fa;
            let (mut p, mut q);
            if a == c {
                p = 2.0 * xm * s;
                q = 1.0 - s;
            } else {
                let qq = fa / fc;
                let r = fb / fc;
                p = s * (2.0 * xm * qq * (qq - r) - (b - a) * (r - 1.0));
                q = (qq - 1.0) * (r - 1.0) * (s - 1.0);
            }
            if p > 0.0 {
                q = -q;
            }
            p = p.abs();
            let min1 = 3.0 * xm * q - (tol * q).abs();
            let min2 = (e * q).abs();
            if 2.0 * p < min1.min(min2) {
                e = d;
                d = p / q;
            } else {
                d = xm;
                e = d;
            }
        } else {
            d = xm;
            e = d;
        }
        a = b;
        fa = fb;
        b += if d.abs() > tol { d } else { tol.copysign(xm) };
        fb = f(b);
    }
    Err(Error::NonConvergence { iterations: cfg.max_iterations, last: b })
}

/// Grid point minimizing |f|; the first (smallest) point wins ties.
/// Non-finite values of f never win.
pub fn grid_search_root<F>(f: F, grid: &[f64]) -> Result<f64>
where
    F: Fn(f64) -> f64,
{
    if grid.is_empty() {
        return arg("grid search needs a nonempty grid");
    }
    if grid.windows(2).any(|w| !(w[0] < w[1])) {
        return arg("grid must be strictly increasing");
    }
    let mut best = grid[0];
    let mut best_val = f64::INFINITY;
    for &x in grid {
        let v = f(x).abs();
        if v < best_val {
            best_val = v;
            best = x;
        }
    }
    Ok(best)
}

/// Points lo+step, lo+2·step, … strictly inside (lo, hi).
pub fn open_grid(lo: f64, hi: f64, step: f64) -> Vec<f64> {
    let n = ((hi - lo) / step).round() as usize;
    (1..n).map(|i| lo + i as f64 * step).collect()
}
