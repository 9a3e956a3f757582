//! Covariate rank weights.
//!
//! The approximate continuous weight for a test at rank probability P is
//!
//! ```text
//! w(δ) = (M/α) Φ̄( E/2 + ln(δ·c / (α·P)) / E )
//! ```
//!
//! with E the mean alternative test effect, M = m (one-tailed) or 2m
//! (two-tailed), and c = 1 for continuous or m/m1 for binary effects.
//! δ is chosen so the weights sum to m; weights are renormalized last.

use serde::{Deserialize, Serialize};

use crate::effects::TestPopulation;
use crate::error::{arg, Error, Result};
use crate::math::normal::{norm_isf, norm_pdf, norm_sf};
use crate::math::roots::{brent_root, grid_search_root, newton_raphson, open_grid, SolverConfig};
use crate::rankprob::RankDistribution;

/// One- or two-sided p-values.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
pub enum Tails {
    #[default]
    One,
    Two,
}

impl Tails {
    pub fn factor(self) -> f64 {
        match self {
            Tails::One => 1.0,
            Tails::Two => 2.0,
        }
    }
}

/// Which branch of the weight formula is used.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum WeightFormula {
    Continuous,
    Binary,
}

/// How δ (or λ) was obtained.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SolverPath {
    NewtonRaphson,
    Brent,
    Grid,
    GridExtended,
    ClosedForm,
    Uniform,
}

/// Nonnegative weights with the multiplier that produced them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightVector {
    pub weights: Vec<f64>,
    /// Lagrange multiplier (δ for CRW/GCW2/DCW, λ for GCW/BW).
    pub delta: f64,
    pub normalized: bool,
    pub path: SolverPath,
    /// Σw before the final normalization.
    pub raw_sum: f64,
    pub warnings: Vec<String>,
}

impl WeightVector {
    pub fn uniform(m: usize, warning: Option<String>) -> Self {
        Self {
            weights: vec![1.0; m],
            delta: f64::NAN,
            normalized: true,
            path: SolverPath::Uniform,
            raw_sum: m as f64,
            warnings: warning.into_iter().collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn sum(&self) -> f64 {
        self.weights.iter().sum()
    }

    /// Checks Σw = m within 1e−6·m and w ≥ 0.
    pub fn check_constraint(&self) -> Result<()> {
        let m = self.weights.len() as f64;
        if self.weights.iter().any(|w| !(*w >= 0.0) || !w.is_finite()) {
            return arg("weights must be finite and nonnegative");
        }
        if (self.sum() - m).abs() > 1e-6 * m {
            return arg(format!("weights sum to {} instead of {m}", self.sum()));
        }
        Ok(())
    }
}

/// Scale weights to sum to their count. Returns false when they sum to zero.
pub(crate) fn normalize_to_count(w: &mut [f64]) -> bool {
    let s: f64 = w.iter().sum();
    if !(s > 0.0) || !s.is_finite() {
        return false;
    }
    let m = w.len() as f64;
    w.iter_mut().for_each(|v| *v *= m / s);
    true
}

/// Inputs to the approximate CRW weights.
#[derive(Debug, Clone, PartialEq)]
pub struct CrwInputs {
    /// P(rank = i | mean effect), i = 1..m in rank order.
    pub rank_probs: Vec<f64>,
    pub mean_test_effect: f64,
    pub alpha: f64,
    pub m: usize,
    /// Number of alternatives; only the binary formula uses it.
    pub m1: usize,
    pub tails: Tails,
}

impl CrwInputs {
    pub fn new(rank_probs: &RankDistribution, mean_test_effect: f64, alpha: f64, m1: usize, tails: Tails) -> Self {
        Self {
            m: rank_probs.len(),
            rank_probs: rank_probs.probabilities.clone(),
            mean_test_effect,
            alpha,
            m1,
            tails,
        }
    }

    fn validate(&self, formula: WeightFormula) -> Result<()> {
        if self.m == 0 || self.rank_probs.len() != self.m {
            return arg("rank probabilities must have length m ≥ 1");
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return arg(format!("alpha must lie in (0,1), got {}", self.alpha));
        }
        if self.rank_probs.iter().any(|p| !(*p >= 0.0) || !p.is_finite()) {
            return arg("rank probabilities must be finite and nonnegative");
        }
        if formula == WeightFormula::Binary && (self.m1 == 0 || self.m1 > self.m) {
            return arg("binary weights need 1 ≤ m1 ≤ m");
        }
        Ok(())
    }

    /// Floor applied to rank probabilities before taking logs.
    pub fn probability_floor(&self) -> f64 {
        1.0 / (self.m as f64 * 1e6)
    }

    fn scale(&self, formula: WeightFormula) -> f64 {
        match formula {
            WeightFormula::Continuous => 1.0,
            WeightFormula::Binary => self.m as f64 / self.m1 as f64,
        }
    }
}

// Precomputed pieces of the weight formula: w_i(δ) = pre · Φ̄(a_i + ln δ / E),
// with a_i = E/2 + ln(r_i/α)/E for a per-test ratio r_i.
pub(crate) struct Formula {
    pre: f64,
    e: f64,
    a: Vec<f64>,
    target: f64,
}

impl Formula {
    fn new(inp: &CrwInputs, formula: WeightFormula) -> Self {
        let floor = inp.probability_floor();
        let c = inp.scale(formula);
        let ratios = inp.rank_probs.iter().map(|&p| c / p.max(floor));
        Self::from_ratios(inp.tails.factor() * inp.m as f64 / inp.alpha, inp.mean_test_effect, inp.alpha, ratios, inp.m as f64)
    }

    pub(crate) fn from_ratios<I: IntoIterator<Item = f64>>(pre: f64, e: f64, alpha: f64, ratios: I, target: f64) -> Self {
        let a = ratios.into_iter().map(|r| e / 2.0 + (r / alpha).ln() / e).collect();
        Self { pre, e, a, target }
    }

    pub(crate) fn weights(&self, delta: f64) -> Vec<f64> {
        let s = delta.ln() / self.e;
        self.a.iter().map(|a| self.pre * norm_sf(a + s)).collect()
    }

    pub(crate) fn sum(&self, delta: f64) -> f64 {
        let s = delta.ln() / self.e;
        self.a.iter().map(|a| self.pre * norm_sf(a + s)).sum()
    }

    // f(δ) = ΣΦ̄(·) − α/tails, in the scale of the printed constraint.
    fn f(&self, delta: f64) -> f64 {
        (self.sum(delta) - self.target) / self.pre
    }

    fn fprime(&self, delta: f64) -> f64 {
        let s = delta.ln() / self.e;
        -self.a.iter().map(|a| norm_pdf(a + s)).sum::<f64>() / (self.e * delta)
    }

    // δ that would give every test unit weight if all a_i equalled their median.
    fn start(&self) -> f64 {
        let mut a = self.a.clone();
        a.sort_by(f64::total_cmp);
        let mid = a[a.len() / 2];
        match norm_isf(self.target / (self.pre * a.len() as f64)) {
            Ok(z) => (self.e * (z - mid)).exp(),
            Err(_) => 0.5,
        }
    }
}

/// Multiplier δ making the approximate weights sum to m.
///
/// Newton-Raphson runs first, after nudging the start point in steps of 0.5
/// while the constraint function is negative. On failure a grid over
/// (0, 1) with step 0.001 is searched, and extended once when its boundary
/// is selected.
pub fn solve_delta(inputs: &CrwInputs, formula: WeightFormula) -> Result<(f64, SolverPath)> {
    inputs.validate(formula)?;
    if !(inputs.mean_test_effect > 0.0) {
        return arg("mean test effect must be positive");
    }
    let fm = Formula::new(inputs, formula);
    Ok(solve(&fm))
}

pub(crate) fn solve(fm: &Formula) -> (f64, SolverPath) {
    let f = |d: f64| if d > 0.0 { fm.f(d) } else { f64::NAN };
    let fp = |d: f64| fm.fprime(d);

    // Start from the multiplier that would give unit weights under
    // uniform rank probabilities.
    let mut x0 = fm.start();
    if !(x0 > 0.0 && x0.is_finite()) {
        x0 = 0.5;
    }
    let mut n = 1;
    while n <= 100 && f(x0) < 0.0 {
        x0 = if f(x0) > f(x0 + 0.5) { x0 - 0.5 } else { x0 + 0.5 };
        if x0 <= 0.0 {
            // The ±0.5 steps cannot cross zero; halve toward it instead.
            x0 = (x0 + 0.5) / 2.0;
        }
        n += 1;
    }
    let cfg = SolverConfig { max_iterations: 100, abs_tolerance: 1e-9 * fm.target / fm.pre, step_tolerance: 1e-15 };
    if let Ok(root) = newton_raphson(f, fp, x0, &cfg) {
        if root.x > 0.0 && root.x.is_finite() {
            return (root.x, SolverPath::NewtonRaphson);
        }
    }
    // Σw is decreasing in δ, so a log-scale bracket always exists when
    // the target lies between the limits; Brent on ln δ before the grid.
    let g = |u: f64| fm.f(u.exp());
    if let Ok(root) = brent_root(g, -700.0, 700.0, &SolverConfig { max_iterations: 300, ..cfg }) {
        if (fm.sum(root.x.exp()) - fm.target).abs() <= 1e-6 * fm.target {
            return (root.x.exp(), SolverPath::Brent);
        }
    }
    grid_delta(|d| fm.sum(d) - fm.target)
}

/// Grid search over (0,1) step 0.001; if a boundary point wins, search
/// once more over (0,10) step 0.01 (upper) or a geometric grid down to
/// 1e−12 (lower).
pub(crate) fn grid_delta<F: Fn(f64) -> f64>(excess: F) -> (f64, SolverPath) {
    let grid = open_grid(0.0, 1.0, 0.001);
    let best = grid_search_root(&excess, &grid).expect("nonempty grid");
    if best == grid[grid.len() - 1] {
        let wide = open_grid(0.0, 10.0, 0.01);
        let b = grid_search_root(&excess, &wide).expect("nonempty grid");
        return (b, SolverPath::GridExtended);
    }
    if best == grid[0] {
        let fine: Vec<f64> = (0..=900).rev().map(|k| 10f64.powf(-3.0 - k as f64 / 100.0)).collect();
        let b = grid_search_root(&excess, &fine).expect("nonempty grid");
        return (b, SolverPath::GridExtended);
    }
    (best, SolverPath::Grid)
}

/// δ giving unit weights when every rank probability is P = 1/m:
/// α·P·exp(E·(Φ̄⁻¹(α/M) − E/2)) / c.
pub fn uniform_delta(inputs: &CrwInputs, formula: WeightFormula) -> Result<f64> {
    inputs.validate(formula)?;
    let inp = inputs;
    let (e, c) = (inp.mean_test_effect, inp.scale(formula));
    let p = 1.0 / inp.m as f64;
    let z = norm_isf(inp.alpha / (inp.tails.factor() * inp.m as f64))?;
    Ok(inp.alpha * p * (e * (z - e / 2.0)).exp() / c)
}

pub(crate) fn finish(fm: &Formula, delta: f64, path: SolverPath, mut warnings: Vec<String>) -> WeightVector {
    let mut w = fm.weights(delta);
    let raw_sum: f64 = w.iter().sum();
    if (raw_sum - fm.target).abs() > 1e-3 * fm.target {
        warnings.push(format!("weight sum {raw_sum:.6} at δ = {delta:.6e} misses m before normalization"));
    }
    if !normalize_to_count(&mut w) {
        return WeightVector::uniform(w.len(), Some("all weights underflowed; using unit weights".into()));
    }
    WeightVector { weights: w, delta, normalized: true, path, raw_sum, warnings }
}

fn crw_weights(inputs: &CrwInputs, formula: WeightFormula) -> Result<WeightVector> {
    inputs.validate(formula)?;
    if inputs.m == 1 {
        return Ok(WeightVector::uniform(1, None));
    }
    if !(inputs.mean_test_effect > 0.0) || !inputs.mean_test_effect.is_finite() {
        return Ok(WeightVector::uniform(
            inputs.m,
            Some(format!("mean test effect {} is not positive; using unit weights", inputs.mean_test_effect)),
        ));
    }
    let fm = Formula::new(inputs, formula);
    let mut warnings = Vec::new();
    let floor = inputs.probability_floor();
    let clamped = inputs.rank_probs.iter().filter(|&&p| p < floor).count();
    if clamped > 0 {
        warnings.push(format!("{clamped} rank probabilities raised to the floor {floor:.3e}"));
    }
    let (delta, path) = solve(&fm);
    Ok(finish(&fm, delta, path, warnings))
}

/// Approximate weights for continuous alternative effects.
pub fn crw_weights_continuous(inputs: &CrwInputs) -> Result<WeightVector> {
    crw_weights(inputs, WeightFormula::Continuous)
}

/// Weights for a common (binary) alternative effect.
pub fn crw_weights_binary(inputs: &CrwInputs) -> Result<WeightVector> {
    crw_weights(inputs, WeightFormula::Binary)
}

/// Unnormalized weights at a given δ (for diagnostics and tests).
pub fn crw_weights_at(inputs: &CrwInputs, formula: WeightFormula, delta: f64) -> Result<Vec<f64>> {
    inputs.validate(formula)?;
    if !(delta > 0.0) {
        return arg("delta must be positive");
    }
    Ok(Formula::new(inputs, formula).weights(delta))
}

/// Weights from the full integral condition
/// ∫ exp(Z·ε − ε²/2) P(r | ε) f(ε) dε = δ/α with Z = Φ̄⁻¹(αw/m),
/// integrating over the positive part of the alternative prior.
///
/// `rank_probs_by_effect(ε)` returns the rank distribution of a test whose
/// effect is ε; it is called once per quadrature node.
pub fn crw_weights_exact<F>(
    pop: &TestPopulation,
    rank_probs_by_effect: F,
    alpha: f64,
    m: usize,
    quadrature_nodes: usize,
) -> Result<WeightVector>
where
    F: Fn(f64) -> Result<RankDistribution>,
{
    pop.validate()?;
    if pop.m != m {
        return arg("population size disagrees with m");
    }
    if !(alpha > 0.0 && alpha < 1.0) {
        return arg("alpha must lie in (0,1)");
    }
    if m == 1 {
        return Ok(WeightVector::uniform(1, None));
    }
    let nodes = pop.alt_prior.discretize_above(quadrature_nodes, 0.0);
    if nodes.is_empty() {
        return Ok(WeightVector::uniform(m, Some("prior has no positive mass; using unit weights".into())));
    }
    let floor = 1.0 / (m as f64 * 1e6);
    // ln of c_j P_i(ε_j) e^{−ε_j²/2}, per test i and node j.
    let mut terms = vec![Vec::with_capacity(nodes.len()); m];
    for &(e, c) in &nodes {
        let rd = rank_probs_by_effect(e)?;
        if rd.len() != m {
            return arg("rank distribution length disagrees with m");
        }
        for (i, p) in rd.probabilities.iter().enumerate() {
            terms[i].push((c.ln() + p.max(floor).ln() - 0.5 * e * e, e));
        }
    }
    let pre = m as f64 / alpha;
    let cfg = SolverConfig { max_iterations: 200, abs_tolerance: 1e-12, step_tolerance: 1e-14 };
    // Z solving ln Σ_j exp(t_ij + Z ε_j) = ln(δ/α); the left side increases in Z.
    let z_of = |i: usize, log_rhs: f64| -> f64 {
        let g = |z: f64| log_sum_exp(terms[i].iter().map(|(t, e)| t + z * e)) - log_rhs;
        match brent_root(g, -60.0, 60.0, &cfg) {
            Ok(r) => r.x,
            Err(Error::Bracket { flo, .. }) => {
                if flo > 0.0 {
                    -60.0
                } else {
                    60.0
                }
            }
            Err(_) => f64::NAN,
        }
    };
    let weights_at = |log_delta: f64| -> Vec<f64> {
        let rhs = log_delta - alpha.ln();
        (0..m).map(|i| pre * norm_sf(z_of(i, rhs))).collect()
    };
    let excess = |log_delta: f64| weights_at(log_delta).iter().sum::<f64>() - m as f64;
    let root = brent_root(excess, -200.0, 200.0, &SolverConfig { max_iterations: 300, abs_tolerance: 1e-9, step_tolerance: 1e-13 })?;
    let mut w = weights_at(root.x);
    if w.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonConvergence { iterations: root.iterations, last: root.x });
    }
    let raw_sum: f64 = w.iter().sum();
    if !normalize_to_count(&mut w) {
        return Ok(WeightVector::uniform(m, Some("all exact weights underflowed".into())));
    }
    Ok(WeightVector {
        weights: w,
        delta: root.x.exp(),
        normalized: true,
        path: SolverPath::Brent,
        raw_sum,
        warnings: Vec::new(),
    })
}

fn log_sum_exp<I: Iterator<Item = f64>>(it: I) -> f64 {
    let v: Vec<f64> = it.collect();
    let mx = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if !mx.is_finite() {
        return mx;
    }
    mx + v.iter().map(|x| (x - mx).exp()).sum::<f64>().ln()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn inputs(p: Vec<f64>, e: f64) -> CrwInputs {
        CrwInputs { m: p.len(), rank_probs: p, mean_test_effect: e, alpha: 0.05, m1: 1, tails: Tails::One }
    }

    #[test]
    fn nonpositive_effect_falls_back() {
        let w = crw_weights_continuous(&inputs(vec![0.5, 0.3, 0.2], 0.0)).unwrap();
        assert_eq!(w.weights, vec![1.0; 3]);
        assert_eq!(w.path, SolverPath::Uniform);
        assert_eq!(w.warnings.len(), 1);
    }

    #[test]
    fn grid_fallback_extends_low() {
        let (d, path) = grid_delta(|d| d - 1e-5);
        assert_eq!(path, SolverPath::GridExtended);
        assert!((d / 1e-5 - 1.0).abs() < 0.03);
    }
}
