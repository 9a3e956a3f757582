//! Acceptance checks, runnable from tests and from the command line.

use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::crw::{crw_weights_binary, crw_weights_continuous, crw_weights_exact, CrwInputs, Tails, WeightVector};
use crate::dcw::{dcw_weights, EffectType, GroupConfig, GroupRankProbs};
use crate::effects::{EffectPrior, TestPopulation};
use crate::error::Result;
use crate::gcw::{bw_weights, gcw2_weights, gcw_reparameterize, gcw_weights, Gcw2Inputs, GcwParams};
use crate::math::normal::norm_sf;
use crate::pipeline::{
    descending_order, weighted_bh, weighted_bonferroni, Analysis, AnalysisOptions, Method, Mode, TestCollection,
};
use crate::rankprob::{chunk_seed, rank_prob_bruteforce, rank_prob_exact_mc, rank_prob_normal_approx, McConfig};
use crate::sim::{draw_replicate, simulate_metrics, CovariateModel, EffectShape, SimScenario, WeightSource};

/// Base seed of every check.
pub const SEED: u64 = 20_190_101;

/// How much work each check does.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Scale {
    /// Sizes as stated in the acceptance list.
    #[default]
    Full,
    /// Fewer replicates for the slow simulation checks.
    Desk,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CriterionReport {
    pub id: u8,
    pub name: String,
    pub passed: bool,
    pub measured: String,
    pub threshold: String,
    /// Wall time; not part of the deterministic report.
    #[serde(skip)]
    pub seconds: f64,
}

impl CriterionReport {
    /// One line: id, PASS/FAIL, name, measured vs threshold.
    pub fn line(&self) -> String {
        format!(
            "criterion {:>2} {} {}: {} (threshold {})",
            self.id,
            if self.passed { "PASS" } else { "FAIL" },
            self.name,
            self.measured,
            self.threshold
        )
    }
}

pub const CRITERIA: [u8; 10] = [1, 2, 3, 4, 5, 6, 7, 8, 9, 10];

/// Runs one check. Errors inside a check count as failure.
pub fn run_criterion(id: u8, scale: Scale) -> CriterionReport {
    let start = Instant::now();
    let (name, r) = match id {
        1 => ("uniform ranks under the null", uniform_ranks()),
        2 => ("normal approximation vs brute force", approximation_fidelity()),
        3 => ("weights sum to m", weight_constraint()),
        4 => ("exact vs approximate CRW weights", exact_vs_approx()),
        5 => ("FWER control under the null", fwer_control(scale)),
        6 => ("CRW power at three reference points", power_reproduction(scale)),
        7 => ("GCW equals BW after reparameterization", gcw_bw_equivalence()),
        8 => ("unit weights reproduce Bonferroni and BH", unit_weight_identities()),
        9 => ("DCW false discovery rate", dcw_fdr(scale)),
        10 => ("discovery gain on a Bottomly-shaped data set", discovery_gain()),
        _ => ("unknown", Ok(Outcome::fail("no such criterion", "1..10"))),
    };
    let o = r.unwrap_or_else(|e| Outcome::fail(format!("error: {e}"), "no error"));
    CriterionReport {
        id,
        name: name.into(),
        passed: o.passed,
        measured: o.measured,
        threshold: o.threshold,
        seconds: start.elapsed().as_secs_f64(),
    }
}

/// Runs the listed checks in order.
pub fn run_suite(ids: &[u8], scale: Scale) -> Vec<CriterionReport> {
    ids.iter().map(|&id| run_criterion(id, scale)).collect()
}

struct Outcome {
    passed: bool,
    measured: String,
    threshold: String,
}

impl Outcome {
    fn new(passed: bool, measured: impl Into<String>, threshold: impl Into<String>) -> Self {
        Self { passed, measured: measured.into(), threshold: threshold.into() }
    }

    fn fail(measured: impl Into<String>, threshold: impl Into<String>) -> Self {
        Self::new(false, measured, threshold)
    }
}

fn uniform_ranks() -> Result<Outcome> {
    let pop = TestPopulation::new(100, 100, EffectPrior::PointMass { effect: 0.0 })?;
    let rd = rank_prob_exact_mc(&pop, 0.0, true, &McConfig { replications: 100_000, seed: SEED })?;
    let worst = rd
        .probabilities
        .iter()
        .zip(&rd.std_errors)
        .map(|(p, se)| (p - 0.01).abs() / se.max(1e-300))
        .fold(0.0, f64::max);
    Ok(Outcome::new(worst <= 3.0, format!("max |P − 0.01|/SE = {worst:.3}"), "≤ 3"))
}

fn approximation_fidelity() -> Result<Outcome> {
    let mut worst = 0.0f64;
    for (k, (a, b)) in [(0.0, 1.0), (1.0, 2.0)].into_iter().enumerate() {
        for (j, eps) in [1.0, 2.0].into_iter().enumerate() {
            let pop = TestPopulation::new(100, 50, EffectPrior::Uniform { a, b })?;
            let approx = rank_prob_normal_approx(&pop, eps, false, &McConfig { replications: 100_000, seed: SEED })?;
            let brute = rank_prob_bruteforce(&pop, eps, false, 1_000_000, SEED + (2 * k + j) as u64)?;
            let d = approx
                .probabilities
                .iter()
                .zip(&brute.probabilities)
                .map(|(x, y)| (x - y).abs())
                .fold(0.0, f64::max);
            worst = worst.max(d);
        }
    }
    Ok(Outcome::new(worst <= 0.02, format!("max abs deviation = {worst:.5}"), "≤ 0.02"))
}

fn random_probs<R: Rng>(rng: &mut R, n: usize) -> Vec<f64> {
    // Exponential spacings with a random tilt so some inputs are strongly skewed.
    let tilt = rng.random_range(0.0..8.0);
    let mut v: Vec<f64> = (0..n)
        .map(|k| -(1.0 - rng.random::<f64>()).ln() * (-tilt * k as f64 / n as f64).exp())
        .collect();
    let s: f64 = v.iter().sum();
    v.iter_mut().for_each(|x| *x /= s);
    v
}

fn constraint_ok(w: &WeightVector, m: usize) -> (bool, f64) {
    let dev = (w.sum() - m as f64).abs() / m as f64;
    let ok = w.len() == m && dev <= 1e-6 && w.weights.iter().all(|x| *x >= 0.0 && x.is_finite());
    (ok, dev)
}

fn weight_constraint() -> Result<Outcome> {
    let methods = ["CRW-cont", "CRW-bin", "GCW", "GCW2", "DCW"];
    let mut failures = Vec::new();
    let mut worst = 0.0f64;
    for (mi, name) in methods.iter().enumerate() {
        let res: Vec<Result<(bool, f64)>> = (0..1000u64)
            .into_par_iter()
            .map(|i| {
                let mut rng = ChaCha8Rng::seed_from_u64(chunk_seed(SEED, 100 + mi as u64, i));
                let m = rng.random_range(2..=300usize);
                let alpha = rng.random_range(0.005..0.25);
                let e = rng.random_range(0.3..5.0);
                let w = match mi {
                    0 | 1 => {
                        let m1 = rng.random_range(1..=m);
                        let inp = CrwInputs {
                            rank_probs: random_probs(&mut rng, m),
                            mean_test_effect: e,
                            alpha,
                            m,
                            m1,
                            tails: if rng.random::<bool>() { Tails::One } else { Tails::Two },
                        };
                        if mi == 0 {
                            crw_weights_continuous(&inp)?
                        } else {
                            crw_weights_binary(&inp)?
                        }
                    }
                    2 => {
                        let eta = rng.random_range(0.0..4.0);
                        let sigma = rng.random_range(0.0..2.0);
                        let nu = rng.random_range(0.05..2.0);
                        let params: Vec<GcwParams> = (0..m)
                            .map(|_| GcwParams::new(eta, sigma, nu, eta + rng.sample::<f64, _>(StandardNormal) * 2.0))
                            .collect();
                        gcw_weights(&params, alpha, m)?
                    }
                    3 => {
                        let f: Vec<f64> = (0..m).map(|_| rng.random_range(0.05..2.0)).collect();
                        let p: Vec<f64> = (0..m).map(|_| rng.random_range(1e-6..2.0)).collect();
                        gcw2_weights(&Gcw2Inputs { covariate_density: f, conditional_density: p, mean_test_effect: e, alpha, m })?
                    }
                    _ => {
                        let g = rng.random_range(2..=m.min(30));
                        let probs = random_probs(&mut rng, g);
                        let cfg = GroupConfig::new(g, g as f64, EffectType::Continuous);
                        let gp = GroupRankProbs { raw: probs.clone(), smoothed: probs, normalized: true, warnings: vec![] };
                        dcw_weights(&gp, e, alpha, m, rng.random_range(1..=m), &cfg)?
                    }
                };
                Ok(constraint_ok(&w, m))
            })
            .collect();
        let mut bad = 0;
        for r in res {
            match r {
                Ok((ok, dev)) => {
                    worst = worst.max(dev);
                    bad += usize::from(!ok);
                }
                Err(_) => bad += 1,
            }
        }
        if bad > 0 {
            failures.push(format!("{name}: {bad} failures"));
        }
    }
    let measured = if failures.is_empty() {
        format!("5 × 1000 inputs, max |Σw − m|/m = {worst:.2e}")
    } else {
        failures.join("; ")
    };
    Ok(Outcome::new(failures.is_empty(), measured, "|Σw − m| ≤ 1e−6·m, w ≥ 0"))
}

/// Synthetic data for the exact-versus-approximate comparison: m tests,
/// a fifth of them alternatives with effects Uniform(1, 3), and a positive
/// covariate exp((ε + z)/2).
pub fn synthetic_crw_dataset(m: usize, seed: u64) -> TestCollection {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let m1 = m / 5;
    let mut p = Vec::with_capacity(m);
    let mut x = Vec::with_capacity(m);
    for i in 0..m {
        let e = if i < m1 { rng.random_range(1.0..3.0) } else { 0.0 };
        let z: f64 = rng.sample(StandardNormal);
        let zc: f64 = rng.sample(StandardNormal);
        p.push(norm_sf(e + z));
        x.push((0.5 * (e + zc)).exp());
    }
    TestCollection { pvalues: p, covariates: x, tails: Tails::One, labels: None }
}

/// Exact and approximate CRW weights on [`synthetic_crw_dataset`], both in
/// covariate-rank order, with the rejection sets of weighted BH at 0.05.
pub struct ExactComparison {
    pub approx: Vec<f64>,
    pub exact: Vec<f64>,
    pub rejected_approx: Vec<bool>,
    pub rejected_exact: Vec<bool>,
}

pub fn exact_vs_approx_weights(m: usize, seed: u64, mc_reps: usize) -> Result<ExactComparison> {
    let c = synthetic_crw_dataset(m, seed);
    let opts = AnalysisOptions { mc: McConfig { replications: mc_reps, seed }, ..AnalysisOptions::default() };
    let a = Analysis::prepare(&c, &opts)?;
    let eff = a
        .effects()
        .filter(|e| e.defined)
        .cloned()
        .ok_or_else(|| crate::Error::Degenerate("no alternatives estimated".into()))?;
    let null = a.null_estimate();
    let approx = a.run(Method::CrwCont, 0.05)?;
    let order = descending_order(&c.covariates);
    let approx_by_rank: Vec<f64> = order.iter().map(|&i| approx.weights.weights[i]).collect();

    // Test effects ~ N(mean, sd) of the top statistics; the covariate effect
    // of a test with effect ε is read off the fitted line.
    let prior = EffectPrior::Normal { mean: eff.mean_test_effect, sd: eff.sd_test_effect.max(1e-3) };
    let pop = TestPopulation::new(m, null.m0, prior)?;
    let center = eff.predicted_mean_covariate_effect;
    let cov_pop = TestPopulation::new(m, null.m0, EffectPrior::PointMass { effect: center })?;
    let mc = McConfig { replications: mc_reps, seed };
    let by_effect = |e: f64| {
        let y = eff.regression_intercept + eff.regression_slope * e;
        rank_prob_exact_mc(&cov_pop, y, false, &mc)
    };
    let exact = crw_weights_exact(&pop, by_effect, 0.05, m, 16)?;
    let mut exact_w = vec![0.0; m];
    for (k, &i) in order.iter().enumerate() {
        exact_w[i] = exact.weights[k];
    }
    let (_, rejected_exact) = weighted_bh(&c.pvalues, &exact_w, 0.05)?;
    Ok(ExactComparison { approx: approx_by_rank, exact: exact.weights, rejected_approx: approx.rejected, rejected_exact })
}

fn exact_vs_approx() -> Result<Outcome> {
    let r = exact_vs_approx_weights(200, SEED, 20_000)?;
    let rel: Vec<f64> = r
        .approx
        .iter()
        .zip(&r.exact)
        .map(|(a, e)| (e - a).abs() / a.max(1e-300))
        .collect();
    let worst = rel.iter().cloned().fold(0.0, f64::max);
    let within = rel.iter().filter(|v| **v <= 0.05).count();
    let same = r.rejected_approx == r.rejected_exact;
    let n_a = r.rejected_approx.iter().filter(|x| **x).count();
    let n_e = r.rejected_exact.iter().filter(|x| **x).count();
    Ok(Outcome::new(
        worst <= 0.05 && same,
        format!(
            "max relative difference {worst:.3e} ({within}/{} within 5%); rejections {n_a} approx vs {n_e} exact, sets {}",
            rel.len(),
            if same { "equal" } else { "differ" }
        ),
        "≤ 0.05 per weight, equal rejection sets",
    ))
}

/// Empirical FWER of the data analysis on all-null data, per method and level.
pub fn null_fwer(m: usize, replications: usize, alphas: &[f64], methods: &[Method], mc_reps: usize, seed: u64) -> Result<Vec<(Method, f64, f64, f64)>> {
    let sc = SimScenario {
        m,
        pi0: 1.0,
        effect_grid: vec![0.0],
        replications,
        seed,
        covariate: CovariateModel::Independent,
        ..SimScenario::default()
    };
    let opts = AnalysisOptions {
        mode: Mode::Fwer,
        mc: McConfig { replications: mc_reps, seed },
        max_groups: 10,
        ..AnalysisOptions::default()
    };
    let per_rep: Vec<Result<Vec<bool>>> = (0..replications)
        .into_par_iter()
        .map(|rep| {
            let r = draw_replicate(&sc, 0.0, rep)?;
            let c = TestCollection::new(r.pvalues, r.covariates, Tails::One)?;
            let a = Analysis::prepare(&c, &opts)?;
            let mut any = Vec::new();
            for &mt in methods {
                for &al in alphas {
                    any.push(a.run(mt, al)?.rejections() > 0);
                }
            }
            Ok(any)
        })
        .collect();
    let per_rep: Vec<Vec<bool>> = per_rep.into_iter().collect::<Result<_>>()?;
    let n = replications as f64;
    let mut out = Vec::new();
    for (i, &mt) in methods.iter().enumerate() {
        for (j, &al) in alphas.iter().enumerate() {
            let k = i * alphas.len() + j;
            let f = per_rep.iter().filter(|v| v[k]).count() as f64 / n;
            let se = if replications > 1 { (f * (1.0 - f) / (n - 1.0)).sqrt() } else { 0.0 };
            out.push((mt, al, f, se));
        }
    }
    Ok(out)
}

fn fwer_control(scale: Scale) -> Result<Outcome> {
    let reps = match scale {
        Scale::Full => 1000,
        Scale::Desk => 200,
    };
    let methods = [Method::CrwCont, Method::CrwBin, Method::Gcw, Method::Dcw];
    let rows = null_fwer(10_000, reps, &[0.01, 0.05, 0.1], &methods, 5_000, SEED)?;
    let mut worst: Option<(Method, f64, f64, f64)> = None;
    let mut ok = true;
    for &(mt, al, f, se) in &rows {
        if f > al + 3.0 * se {
            ok = false;
        }
        let slack = f - al - 3.0 * se;
        if worst.is_none_or(|w| slack > w.2 - w.1 - 3.0 * w.3) {
            worst = Some((mt, al, f, se));
        }
    }
    let (mt, al, f, se) = worst.expect("rows");
    Ok(Outcome::new(
        ok,
        format!("{reps} replicates; tightest: {mt} at α = {al}: FWER {f:.3} (SE {se:.3})"),
        "FWER ≤ α + 3 SE for every method and α",
    ))
}

/// The three reference points: (π₀, ρ, effect, paper power).
pub const POWER_POINTS: [(f64, f64, f64, f64); 3] = [(0.5, 0.3, 2.0, 0.474), (0.9, 0.5, 3.0, 0.635), (0.99, 0.3, 3.0, 0.572)];

/// CRW-cont power at one reference point with oracle m0, m1 and effect.
pub fn crw_power(pi0: f64, rho: f64, effect: f64, replications: usize, seed: u64) -> Result<(f64, f64)> {
    let sc = SimScenario {
        m: 1000,
        pi0,
        effect_grid: vec![effect],
        rho,
        block_size: 100,
        replications,
        alpha: 0.05,
        seed,
        methods: vec![Method::CrwCont],
        mode: Mode::Fdr,
        shape: EffectShape::Uniform,
        covariate: CovariateModel::Informative,
        source: WeightSource::Oracle,
        mc_reps: 100_000,
        ..SimScenario::default()
    };
    let r = simulate_metrics(&sc)?;
    let row = &r.rows[0];
    Ok((row.power, row.power_se))
}

fn power_reproduction(scale: Scale) -> Result<Outcome> {
    let _ = scale;
    let mut parts = Vec::new();
    let mut ok = true;
    for &(pi0, rho, eff, target) in &POWER_POINTS {
        let (p, _) = crw_power(pi0, rho, eff, 200, SEED)?;
        ok &= (p - target).abs() <= 0.05;
        parts.push(format!("{:.0}% null ρ={rho} ε={eff}: {p:.3} vs {target}", pi0 * 100.0));
    }
    Ok(Outcome::new(ok, parts.join("; "), "within ±0.05"))
}

fn gcw_bw_equivalence() -> Result<Outcome> {
    let mut worst = 0.0f64;
    for s in 0..100u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(chunk_seed(SEED, 7, s));
        let m = rng.random_range(2..=200usize);
        let alpha = rng.random_range(0.01..0.2);
        let eta = rng.random_range(0.5..4.0);
        let sigma = rng.random_range(0.1..2.0);
        let nu = rng.random_range(0.1..2.0);
        let params: Vec<GcwParams> = (0..m)
            .map(|_| GcwParams::new(eta, sigma, nu, eta + rng.sample::<f64, _>(StandardNormal) * (sigma * sigma + nu * nu).sqrt()))
            .collect();
        let g = gcw_weights(&params, alpha, m)?;
        let (mu, gamma): (Vec<f64>, Vec<f64>) = params
            .iter()
            .map(|p| {
                let (mu, s2) = gcw_reparameterize(p);
                (mu, (1.0 + s2).sqrt())
            })
            .unzip();
        let b = bw_weights(&mu, &gamma, alpha, m)?;
        let d = g.weights.iter().zip(&b.weights).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
        worst = worst.max(d);
    }
    Ok(Outcome::new(worst <= 1e-6, format!("max |w_GCW − w_BW| = {worst:.2e}"), "≤ 1e−6"))
}

fn plain_bh(p: &[f64], alpha: f64) -> Vec<bool> {
    let m = p.len();
    let mut idx: Vec<usize> = (0..m).collect();
    idx.sort_by(|&a, &b| p[a].total_cmp(&p[b]));
    let mut k = 0;
    for (j, &i) in idx.iter().enumerate() {
        if p[i] <= (j + 1) as f64 * alpha / m as f64 {
            k = j + 1;
        }
    }
    let mut r = vec![false; m];
    for &i in &idx[..k] {
        r[i] = true;
    }
    r
}

fn unit_weight_identities() -> Result<Outcome> {
    let mut mismatches = 0;
    for s in 0..1000u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(chunk_seed(SEED, 8, s));
        let m = rng.random_range(1..=500usize);
        let alpha = rng.random_range(0.001..0.3);
        let signal = rng.random_range(0.0..4.0);
        let p: Vec<f64> = (0..m)
            .map(|_| {
                let z: f64 = rng.sample(StandardNormal);
                let e = if rng.random::<f64>() < 0.3 { signal } else { 0.0 };
                norm_sf(z + e)
            })
            .collect();
        let w = vec![1.0; m];
        let bonf: Vec<bool> = p.iter().map(|x| *x <= alpha / m as f64).collect();
        if weighted_bonferroni(&p, &w, alpha)? != bonf {
            mismatches += 1;
        }
        if weighted_bh(&p, &w, alpha)?.1 != plain_bh(&p, alpha) {
            mismatches += 1;
        }
    }
    Ok(Outcome::new(mismatches == 0, format!("{mismatches} mismatching decisions over 1000 instances"), "0"))
}

fn dcw_fdr(scale: Scale) -> Result<Outcome> {
    let reps = match scale {
        Scale::Full => 200,
        Scale::Desk => 100,
    };
    let sc = SimScenario {
        m: 5000,
        pi0: 0.9,
        effect_grid: vec![2.0],
        replications: reps,
        alpha: 0.05,
        seed: SEED,
        methods: vec![Method::Dcw],
        mode: Mode::Fdr,
        shape: EffectShape::Constant,
        covariate: CovariateModel::Informative,
        source: WeightSource::Data,
        max_groups: 20,
        ..SimScenario::default()
    };
    let r = simulate_metrics(&sc)?;
    let row = &r.rows[0];
    Ok(Outcome::new(
        row.fdr <= 0.05 + 2.0 * row.fdr_se,
        format!("{reps} replicates: FDR {:.4} (SE {:.4}), power {:.3}", row.fdr, row.fdr_se, row.power),
        "≤ 0.05 + 2 SE",
    ))
}

/// Bottomly-shaped synthetic data: m = 16,183 tests, 18% alternatives with
/// effects Uniform(0, 3), covariate exp((2ε + z)/2).
pub fn bottomly_like(seed: u64) -> TestCollection {
    let m = 16_183;
    let m1 = (0.18 * m as f64) as usize;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut p = Vec::with_capacity(m);
    let mut x = Vec::with_capacity(m);
    for i in 0..m {
        let e = if i < m1 { rng.random_range(0.0..3.0) } else { 0.0 };
        let z: f64 = rng.sample(StandardNormal);
        let zc: f64 = rng.sample(StandardNormal);
        p.push(norm_sf(e + z));
        x.push((0.5 * (2.0 * e + zc)).exp());
    }
    TestCollection { pvalues: p, covariates: x, tails: Tails::One, labels: None }
}

/// CRW-cont and BH rejection counts at α = 0.1 on [`bottomly_like`].
pub fn discovery_counts(seed: u64) -> Result<(usize, usize)> {
    let c = bottomly_like(seed);
    let opts = AnalysisOptions { mc: McConfig { replications: 20_000, seed }, ..AnalysisOptions::default() };
    let a = Analysis::prepare(&c, &opts)?;
    Ok((a.run(Method::CrwCont, 0.1)?.rejections(), a.run(Method::Bh, 0.1)?.rejections()))
}

fn discovery_gain() -> Result<Outcome> {
    let (crw, bh) = discovery_counts(SEED)?;
    let ratio = crw as f64 / bh.max(1) as f64;
    Ok(Outcome::new(ratio >= 1.3, format!("CRW {crw} vs BH {bh} rejections, ratio {ratio:.3}"), "≥ 1.3"))
}
