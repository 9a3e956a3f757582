//! Simulation designs: power, FDR and FWER over effect grids with
//! block-correlated statistics, the group-dilution demonstration and the
//! correlated covariate-effect rank curves.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::crw::{crw_weights_binary, crw_weights_continuous, CrwInputs, Tails, WeightVector};
use crate::dcw::{self, EffectType, GroupConfig, RejectionRule};
use crate::effects::{EffectPrior, TestPopulation};
use crate::error::{arg, Result};
use crate::gcw::{bw_weights, gcw2_weights, gcw_weights, Gcw2Inputs, GcwParams};
use crate::math::normal::{norm_pdf, norm_sf};
use crate::pipeline::{decide, descending_order, Analysis, AnalysisOptions, Method, Mode, TestCollection};
use crate::rankprob::{chunk_seed, counter_normal, estimate_with, rank_prob_exact_mc, Convolution, McConfig};

const STREAM_BLOCK: u64 = 11;
const STREAM_UNIT: u64 = 12;

/// Test statistics with block-equicorrelated unit-variance noise added to
/// `effects`. Within a block of `block_size` consecutive tests the noise
/// correlation is ρ; across blocks it is zero.
pub fn gen_correlated_stats(m: usize, rho: f64, block_size: usize, effects: &[f64], seed: u64) -> Result<Vec<f64>> {
    correlated_noise(m, rho, block_size, seed, 0).map(|z| z.iter().zip(effects).map(|(z, e)| z + e).collect())
}

fn correlated_noise(m: usize, rho: f64, block_size: usize, seed: u64, stream: u64) -> Result<Vec<f64>> {
    if !(0.0..1.0).contains(&rho) {
        return arg(format!("correlation must lie in [0,1), got {rho}"));
    }
    if rho > 0.0 && (block_size == 0 || m % block_size != 0) {
        return arg(format!("block size {block_size} must divide m = {m}"));
    }
    let (a, b) = (rho.sqrt(), (1.0 - rho).sqrt());
    Ok((0..m)
        .map(|i| {
            let unit = counter_normal(seed, STREAM_UNIT + 16 * stream, i as u64);
            if rho > 0.0 {
                let blk = counter_normal(seed, STREAM_BLOCK + 16 * stream, (i / block_size) as u64);
                a * blk + b * unit
            } else {
                unit
            }
        })
        .collect())
}

/// Shape of the alternative effects around their mean E.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EffectShape {
    /// Uniform(0, 2E).
    #[default]
    Uniform,
    /// Every alternative has effect E.
    Constant,
}

/// How covariates relate to the effects.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CovariateModel {
    /// Covariate effect plus independent N(0,1) noise.
    #[default]
    Informative,
    /// N(0,1) regardless of the effect.
    Independent,
}

/// Where the weights come from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum WeightSource {
    /// True m0, m1 and mean effect.
    #[default]
    Oracle,
    /// The full data analysis on each replicate.
    Data,
}

/// Missing fields take their defaults when deserializing.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimScenario {
    pub m: usize,
    pub pi0: f64,
    /// Mean covariate effects E(τ) to sweep.
    pub effect_grid: Vec<f64>,
    /// Test effects are the covariate effects plus N(0, (cv·E(τ))²).
    pub cv: f64,
    pub rho: f64,
    pub block_size: usize,
    pub replications: usize,
    pub alpha: f64,
    pub seed: u64,
    pub methods: Vec<Method>,
    pub mode: Mode,
    pub shape: EffectShape,
    pub covariate: CovariateModel,
    pub source: WeightSource,
    pub mc_reps: usize,
    /// Fixed DCW group count (chosen per replicate when absent).
    pub groups: Option<usize>,
    pub max_groups: usize,
}

impl Default for SimScenario {
    fn default() -> Self {
        Self {
            m: 1000,
            pi0: 0.9,
            effect_grid: vec![2.0],
            cv: 0.0,
            rho: 0.0,
            block_size: 100,
            replications: 200,
            alpha: 0.05,
            seed: 1,
            methods: vec![Method::CrwCont, Method::Bh],
            mode: Mode::Fdr,
            shape: EffectShape::Uniform,
            covariate: CovariateModel::Informative,
            source: WeightSource::Oracle,
            mc_reps: 20_000,
            groups: None,
            max_groups: 20,
        }
    }
}

impl SimScenario {
    pub fn validate(&self) -> Result<()> {
        if self.m < 2 {
            return arg("m must be at least 2");
        }
        if !(0.0..=1.0).contains(&self.pi0) {
            return arg("pi0 must lie in [0,1]");
        }
        if self.replications == 0 {
            return arg("replications must be positive");
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return arg("alpha must lie in (0,1)");
        }
        if !(0.0..1.0).contains(&self.rho) {
            return arg("rho must lie in [0,1)");
        }
        if self.rho > 0.0 && (self.block_size == 0 || self.m % self.block_size != 0) {
            return arg("block size must divide m when rho > 0");
        }
        if self.effect_grid.is_empty() || self.effect_grid.iter().any(|e| !e.is_finite() || *e < 0.0) {
            return arg("effect grid must be nonempty and nonnegative");
        }
        if !(self.cv >= 0.0) {
            return arg("cv must be nonnegative");
        }
        if self.methods.is_empty() {
            return arg("need at least one method");
        }
        if self.mc_reps == 0 {
            return arg("mc_reps must be positive");
        }
        Ok(())
    }

    pub fn m1(&self) -> usize {
        self.m - self.m0()
    }

    pub fn m0(&self) -> usize {
        ((self.pi0 * self.m as f64).round() as usize).min(self.m)
    }
}

/// Metrics of one method at one effect.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    pub effect: f64,
    pub method: Method,
    pub power: f64,
    pub power_se: f64,
    pub fdr: f64,
    pub fdr_se: f64,
    pub fwer: f64,
    pub fwer_se: f64,
    pub mean_rejections: f64,
    pub replications: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimMetrics {
    pub scenario: SimScenario,
    pub rows: Vec<MetricRow>,
}

impl SimMetrics {
    pub fn get(&self, effect: f64, method: Method) -> Option<&MetricRow> {
        self.rows.iter().find(|r| r.method == method && r.effect == effect)
    }
}

/// One simulated data set.
#[derive(Debug, Clone, PartialEq)]
pub struct Replicate {
    pub pvalues: Vec<f64>,
    pub covariates: Vec<f64>,
    pub is_alt: Vec<bool>,
    pub test_effects: Vec<f64>,
}

/// Draws replicate `rep` of `sc` at mean effect `effect`.
pub fn draw_replicate(sc: &SimScenario, effect: f64, rep: usize) -> Result<Replicate> {
    let m = sc.m;
    let m1 = sc.m1();
    let key = chunk_seed(sc.seed, effect.to_bits(), rep as u64);
    let mut rng = ChaCha8Rng::seed_from_u64(key);
    let mut idx: Vec<usize> = (0..m).collect();
    idx.shuffle(&mut rng);
    let mut is_alt = vec![false; m];
    for &i in &idx[..m1] {
        is_alt[i] = true;
    }
    let mut cov_effects = vec![0.0; m];
    let mut test_effects = vec![0.0; m];
    for i in 0..m {
        if !is_alt[i] {
            continue;
        }
        let tau = match sc.shape {
            EffectShape::Uniform => 2.0 * effect * rng.random::<f64>(),
            EffectShape::Constant => effect,
        };
        cov_effects[i] = tau;
        test_effects[i] = if sc.cv > 0.0 {
            tau + sc.cv * effect * rng.sample::<f64, _>(StandardNormal)
        } else {
            tau
        };
    }
    let noise = correlated_noise(m, sc.rho, sc.block_size, key, 0)?;
    let pvalues = noise.iter().zip(&test_effects).map(|(z, e)| norm_sf(z + e)).collect();
    let covariates = (0..m)
        .map(|i| {
            let z: f64 = rng.sample(StandardNormal);
            match sc.covariate {
                CovariateModel::Informative => cov_effects[i] + z,
                CovariateModel::Independent => z,
            }
        })
        .collect();
    Ok(Replicate { pvalues, covariates, is_alt, test_effects })
}

#[derive(Debug, Clone, Copy, Default)]
struct Outcome {
    tp: usize,
    fp: usize,
}

fn outcome(rejected: &[bool], is_alt: &[bool]) -> Outcome {
    let mut o = Outcome::default();
    for (r, a) in rejected.iter().zip(is_alt) {
        if *r {
            if *a {
                o.tp += 1;
            } else {
                o.fp += 1;
            }
        }
    }
    o
}

// Weights that depend only on (m, m0, E, α) and can be reused across replicates.
fn oracle_fixed_weights(sc: &SimScenario, effect: f64, method: Method) -> Result<Option<Vec<f64>>> {
    let (m, m0, m1) = (sc.m, sc.m0(), sc.m1());
    match method {
        Method::Bh | Method::Bonferroni => Ok(Some(vec![1.0; m])),
        Method::CrwCont | Method::CrwBin => {
            if m1 == 0 || !(effect > 0.0) {
                return Ok(Some(vec![1.0; m]));
            }
            let pop = TestPopulation::new(m, m0, EffectPrior::PointMass { effect })?;
            let mc = McConfig { replications: sc.mc_reps, seed: sc.seed };
            let rd = rank_prob_exact_mc(&pop, effect, false, &mc)?;
            let inp = CrwInputs::new(&rd, effect, sc.alpha, m1, Tails::One);
            let w = if method == Method::CrwCont {
                crw_weights_continuous(&inp)?
            } else {
                crw_weights_binary(&inp)?
            };
            Ok(Some(w.weights))
        }
        _ => Ok(None),
    }
}

// Oracle weights for methods that need the replicate's covariates.
fn oracle_replicate_weights(sc: &SimScenario, effect: f64, method: Method, r: &Replicate) -> Result<WeightVector> {
    let (m, m1) = (sc.m, sc.m1());
    if m1 == 0 || !(effect > 0.0) {
        return Ok(WeightVector::uniform(m, None));
    }
    let sigma = match sc.shape {
        EffectShape::Uniform => 2.0 * effect / 12f64.sqrt(),
        EffectShape::Constant => 0.0,
    };
    match method {
        Method::Gcw => {
            let params: Vec<GcwParams> = r.covariates.iter().map(|&x| GcwParams::new(effect, sigma, 1.0, x)).collect();
            gcw_weights(&params, sc.alpha, m)
        }
        Method::Gcw2 => {
            let s = (sigma * sigma + 1.0).sqrt();
            let cond = r
                .covariates
                .iter()
                .map(|&x| (norm_pdf((x - effect) / s) / s).max(f64::MIN_POSITIVE))
                .collect();
            gcw2_weights(&Gcw2Inputs {
                covariate_density: vec![1.0; m],
                conditional_density: cond,
                mean_test_effect: effect,
                alpha: sc.alpha,
                m,
            })
        }
        Method::Bw => bw_weights(&r.covariates, &vec![std::f64::consts::SQRT_2; m], sc.alpha, m),
        Method::Dcw => {
            let rule = match sc.mode {
                Mode::Fdr => RejectionRule::WeightedBh,
                Mode::Fwer => RejectionRule::WeightedBonferroni,
            };
            let (g, df) = match sc.groups {
                Some(g) => (g, g as f64),
                None => {
                    let c = dcw::optimize_groups_with(
                        &r.pvalues,
                        &r.covariates,
                        sc.max_groups.min(m),
                        sc.alpha,
                        effect,
                        m1,
                        EffectType::Continuous,
                        20,
                        rule,
                    )?;
                    (c.groups, c.spline_df)
                }
            };
            let order = descending_order(&r.covariates);
            let sorted: Vec<f64> = order.iter().map(|&i| r.pvalues[i]).collect();
            let cfg = GroupConfig::new(g, df, EffectType::Continuous);
            let probs = dcw::dcw_rank_probs(&sorted, &cfg, &crate::pipeline::storey_pi0)?;
            let w = dcw::dcw_weights(&probs, effect, sc.alpha, m, m1, &cfg)?;
            let mut out = vec![0.0; m];
            for (k, &i) in order.iter().enumerate() {
                out[i] = w.weights[k];
            }
            Ok(WeightVector { weights: out, ..w })
        }
        _ => Ok(WeightVector::uniform(m, None)),
    }
}

fn mean_se(v: &[f64]) -> (f64, f64) {
    let n = v.len();
    if n == 0 {
        return (f64::NAN, f64::NAN);
    }
    let mu = v.iter().sum::<f64>() / n as f64;
    if n < 2 {
        return (mu, 0.0);
    }
    let var = v.iter().map(|x| (x - mu) * (x - mu)).sum::<f64>() / (n - 1) as f64;
    (mu, (var / n as f64).sqrt())
}

/// Runs every replicate of every effect and method.
pub fn simulate_metrics(sc: &SimScenario) -> Result<SimMetrics> {
    sc.validate()?;
    let mut rows = Vec::new();
    for &effect in &sc.effect_grid {
        let fixed: Vec<Option<Vec<f64>>> = match sc.source {
            WeightSource::Oracle => sc
                .methods
                .iter()
                .map(|&mt| oracle_fixed_weights(sc, effect, mt))
                .collect::<Result<_>>()?,
            WeightSource::Data => sc
                .methods
                .iter()
                .map(|mt| mt.is_unweighted().then(|| vec![1.0; sc.m]))
                .collect(),
        };
        let per_rep: Vec<Result<Vec<Outcome>>> = (0..sc.replications)
            .into_par_iter()
            .map(|rep| {
                let r = draw_replicate(sc, effect, rep)?;
                let analysis = match sc.source {
                    WeightSource::Data => {
                        let opts = AnalysisOptions {
                            mode: sc.mode,
                            mc: McConfig { replications: sc.mc_reps, seed: sc.seed },
                            groups: sc.groups,
                            max_groups: sc.max_groups,
                            ..AnalysisOptions::default()
                        };
                        let c = TestCollection::new(r.pvalues.clone(), r.covariates.clone(), Tails::One)?;
                        Some((c, opts))
                    }
                    WeightSource::Oracle => None,
                };
                let prepared = match &analysis {
                    Some((c, o)) => Some(Analysis::prepare(c, o)?),
                    None => None,
                };
                // Fixed oracle weights are in covariate-rank order.
                let order = descending_order(&r.covariates);
                sc.methods
                    .iter()
                    .zip(&fixed)
                    .map(|(&mt, fw)| {
                        let rejected = match (fw, &prepared) {
                            (Some(w), _) => {
                                let mut wt = vec![0.0; sc.m];
                                for (k, &i) in order.iter().enumerate() {
                                    wt[i] = w[k];
                                }
                                decide(&r.pvalues, &wt, sc.alpha, sc.mode)?.1
                            }
                            (None, Some(a)) => a.run(mt, sc.alpha)?.rejected,
                            (None, None) => {
                                let w = oracle_replicate_weights(sc, effect, mt, &r)?;
                                decide(&r.pvalues, &w.weights, sc.alpha, sc.mode)?.1
                            }
                        };
                        Ok(outcome(&rejected, &r.is_alt))
                    })
                    .collect()
            })
            .collect();
        let per_rep: Vec<Vec<Outcome>> = per_rep.into_iter().collect::<Result<_>>()?;
        let m1 = sc.m1();
        for (j, &method) in sc.methods.iter().enumerate() {
            let power: Vec<f64> = if m1 > 0 {
                per_rep.iter().map(|o| o[j].tp as f64 / m1 as f64).collect()
            } else {
                Vec::new()
            };
            let fdp: Vec<f64> = per_rep
                .iter()
                .map(|o| {
                    let r = o[j].tp + o[j].fp;
                    if r == 0 {
                        0.0
                    } else {
                        o[j].fp as f64 / r as f64
                    }
                })
                .collect();
            let any: Vec<f64> = per_rep.iter().map(|o| (o[j].fp > 0) as u8 as f64).collect();
            let rej: Vec<f64> = per_rep.iter().map(|o| (o[j].tp + o[j].fp) as f64).collect();
            let (p, pse) = mean_se(&power);
            let (f, fse) = mean_se(&fdp);
            let (w, wse) = mean_se(&any);
            rows.push(MetricRow {
                effect,
                method,
                power: p,
                power_se: pse,
                fdr: f,
                fdr_se: fse,
                fwer: w,
                fwer_se: wse,
                mean_rejections: mean_se(&rej).0,
                replications: sc.replications,
            });
        }
    }
    Ok(SimMetrics { scenario: sc.clone(), rows })
}

/// Best-group composition for one null proportion.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DilutionRow {
    pub pi0: f64,
    pub best_group_alt_fraction: f64,
    pub best_group_alt_fraction_se: f64,
    pub best_group_mean_effect: f64,
}

/// Ranks tests by an informative covariate (effect + N(0,1)), splits them
/// into `n_groups` and reports the alternative share of the top group.
pub fn group_dilution_demo(m: usize, pi0_grid: &[f64], effect: f64, n_groups: usize, replications: usize, seed: u64) -> Result<Vec<DilutionRow>> {
    if n_groups == 0 || n_groups > m || replications == 0 {
        return arg("need 1 ≤ n_groups ≤ m and replications ≥ 1");
    }
    pi0_grid
        .iter()
        .map(|&pi0| {
            let sc = SimScenario {
                m,
                pi0,
                effect_grid: vec![effect],
                shape: EffectShape::Constant,
                replications,
                seed,
                ..SimScenario::default()
            };
            sc.validate()?;
            let top = dcw::group_sizes(m, n_groups)[0];
            let per: Vec<Result<(f64, f64)>> = (0..replications)
                .into_par_iter()
                .map(|rep| {
                    let r = draw_replicate(&sc, effect, rep)?;
                    let order = descending_order(&r.covariates);
                    let best = &order[..top];
                    let alt = best.iter().filter(|&&i| r.is_alt[i]).count() as f64 / top as f64;
                    let eff = best.iter().map(|&i| r.test_effects[i]).sum::<f64>() / top as f64;
                    Ok((alt, eff))
                })
                .collect();
            let per: Vec<(f64, f64)> = per.into_iter().collect::<Result<_>>()?;
            let a: Vec<f64> = per.iter().map(|p| p.0).collect();
            let e: Vec<f64> = per.iter().map(|p| p.1).collect();
            let (fa, fse) = mean_se(&a);
            Ok(DilutionRow { pi0, best_group_alt_fraction: fa, best_group_alt_fraction_se: fse, best_group_mean_effect: mean_se(&e).0 })
        })
        .collect()
}

/// Rank curves of a test whose covariate effect is correlated with its
/// test effect.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EffectCurves {
    pub rho: Vec<f64>,
    /// P(rank = k | ε_t) per ρ.
    pub curves: Vec<Vec<f64>>,
    /// Curve when the covariate effect equals the test effect.
    pub direct: Vec<f64>,
    /// Mean and standard error of the drawn covariate effects per ρ.
    pub drawn_mean: Vec<f64>,
    pub drawn_se: Vec<f64>,
}

/// P(r_y = k | ε_t) = E[P(r = k | ε_y)] with ε_y ~ N(ρ·ε_t, 1 − ρ²).
///
/// `inner_draws` covariate effects are drawn per ρ and each contributes
/// `replications` focal statistics; the other m1 − 1 alternatives have
/// covariate effect ε_t.
pub fn effect_relationship_sim(
    m: usize,
    m0: usize,
    test_effect: f64,
    rho_grid: &[f64],
    replications: usize,
    inner_draws: usize,
    seed: u64,
) -> Result<EffectCurves> {
    if rho_grid.iter().any(|r| !(0.0..1.0).contains(r)) {
        return arg("rho must lie in [0,1)");
    }
    if replications == 0 || inner_draws == 0 {
        return arg("replications and inner draws must be positive");
    }
    let pop = TestPopulation::new(m, m0, EffectPrior::PointMass { effect: test_effect })?;
    if pop.m1 == 0 {
        return arg("need at least one alternative");
    }
    let total = replications * inner_draws;
    let conv = if m <= crate::rankprob::EXACT_CONVOLUTION_MAX_M {
        Convolution::Exact
    } else {
        Convolution::Normal
    };
    let curve = |rho: f64| {
        let s = (1.0 - rho * rho).sqrt();
        estimate_with(&pop, false, total, conv, |i| {
            let j = i / replications as u64;
            let ey = rho * test_effect + s * counter_normal(seed, 5, j);
            ey + counter_normal(seed, 6, i)
        })
    };
    let direct = curve(1.0)?;
    let mut curves = Vec::new();
    let mut drawn_mean = Vec::new();
    let mut drawn_se = Vec::new();
    for &rho in rho_grid {
        curves.push(curve(rho)?);
        let s = (1.0 - rho * rho).sqrt();
        let draws: Vec<f64> = (0..inner_draws as u64)
            .map(|j| rho * test_effect + s * counter_normal(seed, 5, j))
            .collect();
        let (mu, se) = mean_se(&draws);
        drawn_mean.push(mu);
        drawn_se.push(se);
    }
    Ok(EffectCurves { rho: rho_grid.to_vec(), curves, direct, drawn_mean, drawn_se })
}
