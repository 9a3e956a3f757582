//! Gaussian covariate weights (GCW), Bayes weights (BW) and the GCW2
//! density-ratio approximation.
//!
//! Under ε ~ N(η, σ²) and a covariate x | ε ~ N(ε, ν²), write
//! τ² = σ² + ν², γ² = σ²ν² + σ² + ν², μ = (ην² + xσ²)/τ² and g = γ/τ.
//! The optimal threshold of a test is the larger root
//!
//! ```text
//! u₂ = (−μ + g·√(μ² + 2(g²−1)·L)) / (g² − 1),   L = ln(λ·g·m·f(y)/α)
//! ```
//!
//! and its weight is (m/α)·Φ̄(u₂). The root is real only for λ at or above
//! the test's lower bound; below it the test gets weight zero.

use serde::{Deserialize, Serialize};

use crate::crw::{finish, normalize_to_count, solve, Formula, SolverPath, WeightVector};
use crate::error::{arg, Error, Result};
use crate::math::normal::{norm_pdf, norm_sf};
use crate::math::roots::{brent_root, newton_raphson, SolverConfig};

/// σ below this uses the closed-form limit instead of the quadratic root.
pub const SIGMA_EPS: f64 = 1e-6;

/// Prior and covariate parameters of one test.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GcwParams {
    pub eta: f64,
    pub sigma: f64,
    pub nu: f64,
    pub covariate: f64,
    /// f(y), the prior-to-posterior covariate density ratio.
    pub density_ratio: f64,
}

impl GcwParams {
    pub fn new(eta: f64, sigma: f64, nu: f64, covariate: f64) -> Self {
        Self { eta, sigma, nu, covariate, density_ratio: 1.0 }
    }

    pub fn validate(&self) -> Result<()> {
        let finite = [self.eta, self.sigma, self.nu, self.covariate, self.density_ratio]
            .iter()
            .all(|v| v.is_finite());
        if !finite {
            return arg("GCW parameters must be finite");
        }
        if self.sigma < 0.0 || self.nu < 0.0 {
            return arg("σ and ν must be nonnegative");
        }
        if !(self.tau_sq() > 0.0) {
            return arg("τ² = σ² + ν² must be positive");
        }
        if !(self.density_ratio > 0.0) {
            return arg("density ratio must be positive");
        }
        Ok(())
    }

    pub fn tau_sq(&self) -> f64 {
        self.sigma * self.sigma + self.nu * self.nu
    }

    pub fn gamma_sq(&self) -> f64 {
        let (s2, n2) = (self.sigma * self.sigma, self.nu * self.nu);
        s2 * n2 + s2 + n2
    }

    /// μ = (ην² + xσ²)/τ².
    pub fn mu(&self) -> f64 {
        (self.eta * self.nu * self.nu + self.covariate * self.sigma * self.sigma) / self.tau_sq()
    }
}

/// (μ, γ²/τ² − 1): the BW prior mean and variance equivalent to `p`.
pub fn gcw_reparameterize(p: &GcwParams) -> (f64, f64) {
    let (s2, n2) = (p.sigma * p.sigma, p.nu * p.nu);
    (p.mu(), s2 * n2 / (s2 + n2))
}

// One test in the common form w(λ) = pre·Φ̄(u₂(ln λ + log_k)).
#[derive(Debug, Clone, Copy)]
struct Term {
    mu: f64,
    g: f64,
    gm1: f64,
    log_k: f64,
    limit: bool,
}

impl Term {
    // Larger stationary point at L = ln λ + log_k; None when infeasible.
    fn u2(&self, log_lambda: f64) -> Option<(f64, f64)> {
        let l = log_lambda + self.log_k;
        if self.limit {
            if !(self.mu > 0.0) {
                return None;
            }
            return Some((self.mu / 2.0 + l / self.mu, 1.0 / self.mu));
        }
        let d = self.mu * self.mu + 2.0 * self.gm1 * l;
        if d < 0.0 {
            return None;
        }
        let root = d.sqrt();
        let denom = self.mu + self.g * root;
        // The rationalized form avoids cancellation when g is close to 1.
        let u = if self.mu >= 0.0 && denom > 0.0 {
            (self.mu * self.mu + 2.0 * self.g * self.g * l) / denom
        } else {
            (-self.mu + self.g * root) / self.gm1
        };
        let du = if root > 0.0 { self.g / root } else { f64::INFINITY };
        Some((u, du))
    }

    fn log_lower_bound(&self) -> f64 {
        if self.limit {
            if self.mu > 0.0 {
                f64::NEG_INFINITY
            } else {
                f64::INFINITY
            }
        } else {
            -self.log_k - self.mu * self.mu / (2.0 * self.gm1)
        }
    }
}

fn discriminant(t: &Term, log_lambda: f64) -> f64 {
    t.mu * t.mu + 2.0 * t.gm1 * (log_lambda + t.log_k)
}

fn gcw_term(p: &GcwParams, alpha: f64, m: usize) -> Term {
    let (mu, gm1) = gcw_reparameterize(p);
    let g = (1.0 + gm1).sqrt();
    Term {
        mu,
        g,
        gm1,
        log_k: (g * m as f64 * p.density_ratio / alpha).ln(),
        limit: p.sigma < SIGMA_EPS || gm1 < 1e-12,
    }
}

fn check_alpha(alpha: f64) -> Result<()> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return arg(format!("alpha must lie in (0,1), got {alpha}"));
    }
    Ok(())
}

/// Lower bound on λ for real roots:
/// α/(g·m·f(y)) · exp(−μ²/(2(g²−1))). Zero in the σ→0 limit with μ > 0.
pub fn lambda_lower_bound(params: &GcwParams, alpha: f64, m: usize) -> f64 {
    gcw_term(params, alpha, m).log_lower_bound().exp()
}

/// True when the quadratic for `params` has real roots at `lambda`.
pub fn roots_are_real(params: &GcwParams, alpha: f64, m: usize, lambda: f64) -> bool {
    let t = gcw_term(params, alpha, m);
    if t.limit {
        return t.mu > 0.0;
    }
    discriminant(&t, lambda.ln()) >= 0.0
}

/// Discriminant μ² + 2(g²−1)·ln(λ·g·m·f/α) of a test at `lambda`.
pub fn gcw_discriminant(params: &GcwParams, alpha: f64, m: usize, lambda: f64) -> f64 {
    discriminant(&gcw_term(params, alpha, m), lambda.ln())
}

/// Both stationary points (u₁, u₂) of a test at `lambda`, if real.
pub fn gcw_roots(params: &GcwParams, alpha: f64, m: usize, lambda: f64) -> Option<(f64, f64)> {
    let t = gcw_term(params, alpha, m);
    if t.limit {
        return None;
    }
    let d = discriminant(&t, lambda.ln());
    if d < 0.0 {
        return None;
    }
    let r = t.g * d.sqrt();
    Some(((-t.mu - r) / t.gm1, (-t.mu + r) / t.gm1))
}

// Just inside a lower bound, where rounding can't push the discriminant below zero.
fn above(x: f64) -> f64 {
    x + 1e-12 * x.abs().max(1.0)
}

struct Problem {
    terms: Vec<Term>,
    pre: f64,
    target: f64,
}

impl Problem {
    fn weights(&self, ll: f64) -> Vec<f64> {
        self.terms
            .iter()
            .map(|t| t.u2(ll).map_or(0.0, |(u, _)| self.pre * norm_sf(u)))
            .collect()
    }

    fn excess(&self, ll: f64) -> f64 {
        self.terms
            .iter()
            .map(|t| t.u2(ll).map_or(0.0, |(u, _)| self.pre * norm_sf(u)))
            .sum::<f64>()
            - self.target
    }

    fn slope(&self, ll: f64) -> f64 {
        -self
            .terms
            .iter()
            .map(|t| t.u2(ll).map_or(0.0, |(u, du)| self.pre * norm_pdf(u) * du))
            .sum::<f64>()
    }

    // ln λ with Σw = m.
    fn solve(&self) -> Result<(f64, SolverPath)> {
        let cfg = SolverConfig { max_iterations: 200, abs_tolerance: 1e-10 * self.target, step_tolerance: 1e-15 };
        let lo = self
            .terms
            .iter()
            .map(Term::log_lower_bound)
            .fold(f64::NEG_INFINITY, f64::max);
        if lo == f64::INFINITY {
            return Err(Error::Degenerate("no test has a feasible weight at any λ".into()));
        }
        let start = if lo.is_finite() { above(lo).max(0.0) } else { 0.0 };
        let f = |ll: f64| self.excess(ll);
        if f(start) > 0.0 {
            let fp = |ll: f64| self.slope(ll);
            if let Ok(r) = newton_raphson(f, fp, start, &cfg) {
                if r.x >= lo {
                    return Ok((r.x, SolverPath::NewtonRaphson));
                }
            }
            // Σw decreases in λ; expand upward by factors of ten.
            let mut a = start;
            let mut b = start + std::f64::consts::LN_10;
            while f(b) > 0.0 {
                a = b;
                b += std::f64::consts::LN_10;
                if b > 700.0 {
                    return Err(Error::Degenerate("weights exceed m for every λ up to 1e300".into()));
                }
            }
            return brent_root(f, a, b, &cfg).map(|r| (r.x, SolverPath::Brent));
        }
        // Root lies below the start. First the fully feasible stretch.
        if lo.is_finite() && above(lo) < start && f(above(lo)) >= 0.0 {
            return brent_root(f, above(lo), start, &cfg).map(|r| (r.x, SolverPath::Brent));
        }
        if lo == f64::NEG_INFINITY {
            let mut b = start;
            let mut a = start - std::f64::consts::LN_10;
            while f(a) < 0.0 {
                b = a;
                a -= std::f64::consts::LN_10;
                if a < -700.0 {
                    return Err(Error::Degenerate("weights cannot reach m at any λ".into()));
                }
            }
            return brent_root(f, a, b, &cfg).map(|r| (r.x, SolverPath::Brent));
        }
        // Below max l some tests drop out. Σw is continuous and decreasing
        // between consecutive bounds, so scan the bounds from the top.
        let mut bounds: Vec<f64> = self
            .terms
            .iter()
            .map(Term::log_lower_bound)
            .filter(|b| b.is_finite() && *b < lo)
            .collect();
        bounds.sort_by(|a, b| b.total_cmp(a));
        bounds.dedup();
        let mut upper = lo;
        for b in bounds {
            let b = above(b);
            if f(b) >= 0.0 {
                let r = brent_root(f, b, upper - 1e-15 * upper.abs().max(1.0), &cfg);
                return match r {
                    Ok(r) => Ok((r.x, SolverPath::Brent)),
                    Err(Error::Bracket { .. }) => Ok((b, SolverPath::Brent)),
                    Err(e) => Err(e),
                };
            }
            upper = b;
        }
        Err(Error::Degenerate("weights cannot reach m at any feasible λ".into()))
    }

    fn finish(&self, ll: f64, path: SolverPath) -> Result<WeightVector> {
        let mut w = self.weights(ll);
        let raw_sum: f64 = w.iter().sum();
        let mut warnings = Vec::new();
        if (raw_sum - self.target).abs() > 1e-3 * self.target {
            warnings.push(format!("weight sum {raw_sum:.6} misses m before normalization"));
        }
        if !normalize_to_count(&mut w) {
            return Err(Error::Degenerate("all weights are zero".into()));
        }
        Ok(WeightVector { weights: w, delta: ll.exp(), normalized: true, path, raw_sum, warnings })
    }
}

fn solve_terms(terms: Vec<Term>, alpha: f64) -> Result<WeightVector> {
    let m = terms.len();
    if m == 1 {
        return Ok(WeightVector::uniform(1, None));
    }
    let problem = Problem { terms, pre: m as f64 / alpha, target: m as f64 };
    let (ll, path) = problem.solve()?;
    problem.finish(ll, path)
}

/// Optimal GCW weights, one parameter set per test.
pub fn gcw_weights(params: &[GcwParams], alpha: f64, m: usize) -> Result<WeightVector> {
    check_alpha(alpha)?;
    if m == 0 || params.len() != m {
        return arg("need one parameter set per test and m ≥ 1");
    }
    for p in params {
        p.validate()?;
    }
    solve_terms(params.iter().map(|p| gcw_term(p, alpha, m)).collect(), alpha)
}

/// Bayes weights for priors ε_i ~ N(η_i, γ_i² − 1).
///
/// The multiplier is on the BW scale, ln(λ·γ) inside the root.
pub fn bw_weights(eta: &[f64], gamma: &[f64], alpha: f64, m: usize) -> Result<WeightVector> {
    check_alpha(alpha)?;
    if m == 0 || eta.len() != m || gamma.len() != m {
        return arg("need η and γ per test and m ≥ 1");
    }
    let mut terms = Vec::with_capacity(m);
    for (&e, &g) in eta.iter().zip(gamma) {
        if !e.is_finite() || !g.is_finite() || !(g >= 1.0) {
            return arg(format!("BW needs finite η and γ ≥ 1, got η = {e}, γ = {g}"));
        }
        let gm1 = g * g - 1.0;
        terms.push(Term { mu: e, g, gm1, log_k: g.ln(), limit: gm1 < 1e-12 });
    }
    solve_terms(terms, alpha)
}

/// Inputs to the GCW2 approximation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Gcw2Inputs {
    /// f(x_i), the marginal covariate density at each test.
    pub covariate_density: Vec<f64>,
    /// P(x_i | E(ε)), the covariate density given the mean effect.
    pub conditional_density: Vec<f64>,
    pub mean_test_effect: f64,
    pub alpha: f64,
    pub m: usize,
}

/// GCW2 weights: (m/α)·Φ̄(E/2 + ln(δ·m·f(x_i)/(α·P(x_i | E)))/E).
pub fn gcw2_weights(inputs: &Gcw2Inputs) -> Result<WeightVector> {
    check_alpha(inputs.alpha)?;
    let m = inputs.m;
    if m == 0 || inputs.covariate_density.len() != m || inputs.conditional_density.len() != m {
        return arg("need both densities per test and m ≥ 1");
    }
    let ok = |v: &[f64]| v.iter().all(|d| *d > 0.0 && d.is_finite());
    if !ok(&inputs.covariate_density) || !ok(&inputs.conditional_density) {
        return arg("densities must be positive and finite");
    }
    if m == 1 {
        return Ok(WeightVector::uniform(1, None));
    }
    let e = inputs.mean_test_effect;
    if !(e > 0.0) || !e.is_finite() {
        return Ok(WeightVector::uniform(m, Some(format!("mean test effect {e} is not positive; using unit weights"))));
    }
    let ratios = inputs
        .covariate_density
        .iter()
        .zip(&inputs.conditional_density)
        .map(|(f, p)| m as f64 * f / p);
    let fm = Formula::from_ratios(m as f64 / inputs.alpha, e, inputs.alpha, ratios, m as f64);
    let (delta, path) = solve(&fm);
    Ok(finish(&fm, delta, path, Vec::new()))
}
