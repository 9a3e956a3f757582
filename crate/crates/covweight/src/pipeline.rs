//! Data analysis: p-values and covariates in, weights and decisions out.

use std::fmt;
use std::str::FromStr;
use std::sync::OnceLock;

use serde::{Deserialize, Serialize};

use crate::crw::{crw_weights_binary, crw_weights_continuous, CrwInputs, Tails, WeightVector};
use crate::dcw::{self, EffectType, GroupConfig, RejectionRule};
use crate::effects::{EffectPrior, TestPopulation};
use crate::error::{arg, Error, Result};
use crate::gcw::{bw_weights, gcw2_weights, gcw_weights, Gcw2Inputs, GcwParams};
use crate::math::boxcox::box_cox;
use crate::math::normal::{norm_isf, norm_pdf};
use crate::math::spline::fit_smoothing_spline;
use crate::math::stats::{mean, median, ols, sd};
use crate::rankprob::{rank_prob_exact_mc, McConfig, RankDistribution};

/// Statistic assigned to p = 1 (one-tailed), where Φ⁻¹(0) is −∞.
pub const STAT_FLOOR: f64 = -8.2;
/// Smallest p-value used in the conversion.
pub const P_FLOOR: f64 = 1e-300;

/// Input p-values with their covariates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestCollection {
    pub pvalues: Vec<f64>,
    pub covariates: Vec<f64>,
    pub tails: Tails,
    pub labels: Option<Vec<String>>,
}

impl TestCollection {
    pub fn new(pvalues: Vec<f64>, covariates: Vec<f64>, tails: Tails) -> Result<Self> {
        let c = Self { pvalues, covariates, tails, labels: None };
        c.validate()?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<()> {
        if self.pvalues.is_empty() {
            return arg("need at least one test");
        }
        if self.pvalues.len() != self.covariates.len() {
            return arg(format!(
                "{} p-values but {} covariates",
                self.pvalues.len(),
                self.covariates.len()
            ));
        }
        if let Some(l) = &self.labels {
            if l.len() != self.pvalues.len() {
                return arg("labels must match the number of tests");
            }
        }
        let bad: Vec<usize> = self
            .pvalues
            .iter()
            .enumerate()
            .filter(|(_, p)| !(**p >= 0.0 && **p <= 1.0))
            .map(|(i, _)| i)
            .collect();
        if !bad.is_empty() {
            return arg(format!("p-values outside [0,1] at rows {bad:?}"));
        }
        if self.covariates.iter().any(|c| !c.is_finite()) {
            return arg("covariates must be finite");
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.pvalues.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pvalues.is_empty()
    }
}

/// Statistics with a count of the p-values that hit either clamp.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Statistics {
    pub values: Vec<f64>,
    pub clamped_low_p: usize,
    pub clamped_high_p: usize,
}

/// T = Φ⁻¹(1 − p) or Φ⁻¹(1 − p/2).
pub fn pvals_to_stats(collection: &TestCollection) -> Vec<f64> {
    convert_pvalues(&collection.pvalues, collection.tails).values
}

/// As [`pvals_to_stats`], also reporting clamps.
pub fn convert_pvalues(pvalues: &[f64], tails: Tails) -> Statistics {
    let mut low = 0;
    let mut high = 0;
    let values = pvalues
        .iter()
        .map(|&p| {
            let q = p.max(P_FLOOR) / tails.factor();
            if p < P_FLOOR {
                low += 1;
            }
            if q >= 1.0 {
                high += 1;
                return STAT_FLOOR;
            }
            norm_isf(q).map_or(STAT_FLOOR, |t| t.max(STAT_FLOOR))
        })
        .collect();
    Statistics { values, clamped_low_p: low, clamped_high_p: high }
}

/// Estimated null proportion and counts.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NullEstimate {
    pub pi0: f64,
    pub m0: usize,
    pub m1: usize,
}

impl NullEstimate {
    pub fn from_pi0(pi0: f64, m: usize) -> Self {
        let pi0 = pi0.clamp(0.0, 1.0);
        let m0 = ((pi0 * m as f64).round() as usize).min(m);
        Self { pi0, m0, m1: m - m0 }
    }
}

/// Below this many p-values the smoother is skipped and π₀ = 1.
pub const STOREY_MIN_M: usize = 20;

/// Storey's π₀ with a cubic smoothing spline (df = 3) over λ = 0.05..0.95.
pub fn estimate_pi0_storey(pvalues: &[f64]) -> NullEstimate {
    NullEstimate::from_pi0(storey_pi0(pvalues), pvalues.len())
}

pub(crate) fn storey_pi0(pvalues: &[f64]) -> f64 {
    let m = pvalues.len();
    if m < STOREY_MIN_M {
        return 1.0;
    }
    let mut sorted = pvalues.to_vec();
    sorted.sort_by(f64::total_cmp);
    let lambdas: Vec<f64> = (1..=19).map(|k| k as f64 * 0.05).collect();
    let pi: Vec<f64> = lambdas
        .iter()
        .map(|&l| {
            let above = m - sorted.partition_point(|&p| p <= l);
            above as f64 / (m as f64 * (1.0 - l))
        })
        .collect();
    let last = *lambdas.last().expect("grid");
    match fit_smoothing_spline(&lambdas, &pi, 3.0) {
        Ok(fit) => fit.eval(last).clamp(0.0, 1.0),
        Err(_) => 1.0,
    }
}

/// Alternative-effect and covariate-effect estimates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EffectEstimate {
    /// False when m1 = 0; the effect fields are then NaN.
    pub defined: bool,
    pub mean_test_effect: f64,
    pub median_test_effect: f64,
    pub sd_test_effect: f64,
    pub predicted_mean_covariate_effect: f64,
    pub predicted_median_covariate_effect: f64,
    pub regression_slope: f64,
    pub regression_intercept: f64,
    pub r_squared: f64,
    /// Statistic regressed on covariate, for comparison.
    pub reverse_slope: f64,
    pub reverse_intercept: f64,
    pub boxcox_lambda: Option<f64>,
}

/// Indices sorted by value descending, ties by index.
pub(crate) fn descending_order(v: &[f64]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..v.len()).collect();
    idx.sort_by(|&a, &b| v[b].total_cmp(&v[a]).then(a.cmp(&b)));
    idx
}

/// Mean, median and sd of the top-m1 statistics, plus the fit of
/// (optionally Box-Cox transformed) covariates on all statistics.
pub fn estimate_effects(stats: &[f64], covariates: &[f64], null_est: &NullEstimate, use_boxcox: bool) -> Result<EffectEstimate> {
    if stats.len() != covariates.len() || stats.is_empty() {
        return arg("statistics and covariates must have equal nonzero length");
    }
    let (y, boxcox_lambda) = if use_boxcox {
        let (y, l) = box_cox(covariates)?;
        (y, Some(l))
    } else {
        (covariates.to_vec(), None)
    };
    let fit = ols(stats, &y)?;
    let reverse = ols(&y, stats).unwrap_or(crate::math::stats::LinearFit { intercept: f64::NAN, slope: f64::NAN, r_squared: f64::NAN });
    let m1 = null_est.m1.min(stats.len());
    let (defined, e_mean, e_median, e_sd) = if m1 == 0 {
        (false, f64::NAN, f64::NAN, f64::NAN)
    } else {
        let top: Vec<f64> = descending_order(stats).into_iter().take(m1).map(|i| stats[i]).collect();
        let s = if m1 >= 2 { sd(&top) } else { 0.0 };
        (true, mean(&top), median(&top), s)
    };
    Ok(EffectEstimate {
        defined,
        mean_test_effect: e_mean,
        median_test_effect: e_median,
        sd_test_effect: e_sd,
        predicted_mean_covariate_effect: fit.predict(e_mean),
        predicted_median_covariate_effect: fit.predict(e_median),
        regression_slope: fit.slope,
        regression_intercept: fit.intercept,
        r_squared: fit.r_squared,
        reverse_slope: reverse.slope,
        reverse_intercept: reverse.intercept,
        boxcox_lambda,
    })
}

fn check_weights(pvalues: &[f64], weights: &[f64]) -> Result<()> {
    let m = pvalues.len();
    if weights.len() != m || m == 0 {
        return arg("need one weight per p-value");
    }
    if weights.iter().any(|w| !(*w >= 0.0) || !w.is_finite()) {
        return arg("weights must be finite and nonnegative");
    }
    let s: f64 = weights.iter().sum();
    if (s - m as f64).abs() > 1e-6 * m as f64 {
        return arg(format!("weights sum to {s}, not m = {m}"));
    }
    Ok(())
}

fn check_alpha(alpha: f64) -> Result<()> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return arg(format!("alpha must lie in (0,1), got {alpha}"));
    }
    Ok(())
}

/// Reject test i when w_i > 0 and p_i ≤ α·w_i/m.
pub fn weighted_bonferroni(pvalues: &[f64], weights: &[f64], alpha: f64) -> Result<Vec<bool>> {
    check_alpha(alpha)?;
    check_weights(pvalues, weights)?;
    let m = pvalues.len() as f64;
    Ok(pvalues.iter().zip(weights).map(|(p, w)| *w > 0.0 && *p <= alpha * w / m).collect())
}

/// min(1, m·p/w), the weighted Bonferroni adjusted p-values.
pub fn bonferroni_adjusted(pvalues: &[f64], weights: &[f64]) -> Vec<f64> {
    let m = pvalues.len() as f64;
    pvalues
        .iter()
        .zip(weights)
        .map(|(p, w)| if *w > 0.0 { (m * p / w).min(1.0) } else { 1.0 })
        .collect()
}

/// BH step-up on q_i = p_i/w_i. Returns adjusted p-values and decisions.
pub fn weighted_bh(pvalues: &[f64], weights: &[f64], alpha: f64) -> Result<(Vec<f64>, Vec<bool>)> {
    check_alpha(alpha)?;
    check_weights(pvalues, weights)?;
    let m = pvalues.len();
    let q: Vec<f64> = pvalues
        .iter()
        .zip(weights)
        .map(|(p, w)| if *w > 0.0 { p / w } else { f64::INFINITY })
        .collect();
    let mut order: Vec<usize> = (0..m).collect();
    order.sort_by(|&a, &b| q[a].total_cmp(&q[b]).then(a.cmp(&b)));
    let mut adjusted = vec![1.0; m];
    let mut running = f64::INFINITY;
    for (pos, &i) in order.iter().enumerate().rev() {
        let v = q[i] * m as f64 / (pos + 1) as f64;
        running = running.min(v);
        adjusted[i] = running.min(1.0);
    }
    let rejected = adjusted.iter().map(|a| *a <= alpha).collect();
    Ok((adjusted, rejected))
}

/// Weighting method.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Method {
    #[serde(rename = "CRW-cont")]
    CrwCont,
    #[serde(rename = "CRW-bin")]
    CrwBin,
    #[serde(rename = "GCW")]
    Gcw,
    #[serde(rename = "GCW2")]
    Gcw2,
    #[serde(rename = "DCW")]
    Dcw,
    #[serde(rename = "BH")]
    Bh,
    #[serde(rename = "Bonferroni")]
    Bonferroni,
    #[serde(rename = "BW")]
    Bw,
}

impl Method {
    pub const ALL: [Method; 8] = [
        Method::CrwCont,
        Method::CrwBin,
        Method::Gcw,
        Method::Gcw2,
        Method::Dcw,
        Method::Bh,
        Method::Bonferroni,
        Method::Bw,
    ];

    pub fn tag(self) -> &'static str {
        match self {
            Method::CrwCont => "CRW-cont",
            Method::CrwBin => "CRW-bin",
            Method::Gcw => "GCW",
            Method::Gcw2 => "GCW2",
            Method::Dcw => "DCW",
            Method::Bh => "BH",
            Method::Bonferroni => "Bonferroni",
            Method::Bw => "BW",
        }
    }

    /// Unit weights, no estimation.
    pub fn is_unweighted(self) -> bool {
        matches!(self, Method::Bh | Method::Bonferroni)
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.tag())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let k = s.to_ascii_lowercase();
        Method::ALL
            .into_iter()
            .find(|m| m.tag().to_ascii_lowercase() == k)
            .ok_or_else(|| Error::Argument(format!("unknown method '{s}'")))
    }
}

/// Error-rate target of the decision rule.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    /// Weighted Bonferroni.
    Fwer,
    /// Weighted BH.
    #[default]
    Fdr,
}

/// Knobs of [`run_analysis`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnalysisOptions {
    pub mode: Mode,
    /// Box-Cox the covariates before the regression (skipped when any
    /// covariate is not positive).
    pub use_boxcox: bool,
    pub mc: McConfig,
    /// Fixed DCW group count; chosen by maximizing rejections when absent.
    pub groups: Option<usize>,
    pub max_groups: usize,
    pub bins: usize,
    pub dcw_effect: EffectType,
    /// f(y) for GCW, common to all tests.
    pub density_ratio: f64,
}

impl Default for AnalysisOptions {
    fn default() -> Self {
        Self {
            mode: Mode::Fdr,
            use_boxcox: true,
            mc: McConfig::default(),
            groups: None,
            max_groups: 20,
            bins: 20,
            dcw_effect: EffectType::Continuous,
            density_ratio: 1.0,
        }
    }
}

/// Intermediate estimates kept for reporting.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Diagnostics {
    pub null: Option<NullEstimate>,
    pub effects: Option<EffectEstimate>,
    /// δ or λ.
    pub multiplier: Option<f64>,
    pub solver_path: Option<String>,
    pub clamped_low_p: usize,
    pub clamped_high_p: usize,
    pub groups: Option<usize>,
    pub spline_df: Option<f64>,
    pub group_probabilities: Option<Vec<f64>>,
    /// P(rank = k) used by CRW, by covariate rank.
    pub rank_probabilities: Option<Vec<f64>>,
    /// (η, σ, τ, ν) of GCW.
    pub gaussian_params: Option<[f64; 4]>,
    pub warnings: Vec<String>,
}

/// Output of [`run_analysis`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnalysisResult {
    pub method: Method,
    pub alpha: f64,
    pub mode: Mode,
    /// Weights in the input order.
    pub weights: WeightVector,
    pub adjusted_pvalues: Vec<f64>,
    pub rejected: Vec<bool>,
    /// Covariate rank of each test (1 = largest).
    pub covariate_rank: Vec<usize>,
    pub diagnostics: Diagnostics,
}

impl AnalysisResult {
    pub fn rejections(&self) -> usize {
        self.rejected.iter().filter(|r| **r).count()
    }
}

/// Decisions for given weights under `mode`.
pub fn decide(pvalues: &[f64], weights: &[f64], alpha: f64, mode: Mode) -> Result<(Vec<f64>, Vec<bool>)> {
    match mode {
        Mode::Fdr => weighted_bh(pvalues, weights, alpha),
        Mode::Fwer => {
            let r = weighted_bonferroni(pvalues, weights, alpha)?;
            Ok((bonferroni_adjusted(pvalues, weights), r))
        }
    }
}

fn by_rank_to_tests(by_rank: &[f64], order: &[usize]) -> Vec<f64> {
    let mut w = vec![0.0; order.len()];
    for (k, &i) in order.iter().enumerate() {
        w[i] = by_rank[k];
    }
    w
}

fn step<T>(label: &str, r: Result<T>) -> Result<T> {
    r.map_err(|e| match e {
        Error::Argument(s) => Error::Argument(format!("{label}: {s}")),
        Error::Domain(s) => Error::Domain(format!("{label}: {s}")),
        Error::Degenerate(s) => Error::Degenerate(format!("{label}: {s}")),
        other => other,
    })
}

/// Estimates shared by every method and level on one collection.
///
/// Rank probabilities are cached, so running several methods or levels on
/// the same data pays for them once.
#[derive(Debug)]
pub struct Analysis<'a> {
    collection: &'a TestCollection,
    options: AnalysisOptions,
    order: Vec<usize>,
    covariate_rank: Vec<usize>,
    stats: Statistics,
    null: NullEstimate,
    effects: Option<EffectEstimate>,
    warnings: Vec<String>,
    rank_cache: [OnceLock<std::result::Result<RankDistribution, String>>; 2],
}

impl<'a> Analysis<'a> {
    pub fn prepare(collection: &'a TestCollection, options: &AnalysisOptions) -> Result<Self> {
        collection.validate()?;
        let m = collection.len();
        let x = &collection.covariates;
        let order = descending_order(x);
        let mut covariate_rank = vec![0; m];
        for (k, &i) in order.iter().enumerate() {
            covariate_rank[i] = k + 1;
        }
        let stats = convert_pvalues(&collection.pvalues, collection.tails);
        let null = estimate_pi0_storey(&collection.pvalues);
        let mut warnings = Vec::new();
        let boxcox = options.use_boxcox && x.iter().all(|v| *v > 0.0);
        if options.use_boxcox && !boxcox {
            warnings.push("covariates not all positive; Box-Cox skipped".into());
        }
        let effects = match estimate_effects(&stats.values, x, &null, boxcox) {
            Ok(e) => Some(e),
            Err(e) => {
                warnings.push(format!("effect estimation failed: {e}"));
                None
            }
        };
        Ok(Self {
            collection,
            options: options.clone(),
            order,
            covariate_rank,
            stats,
            null,
            effects,
            warnings,
            rank_cache: [OnceLock::new(), OnceLock::new()],
        })
    }

    pub fn null_estimate(&self) -> NullEstimate {
        self.null
    }

    pub fn effects(&self) -> Option<&EffectEstimate> {
        self.effects.as_ref()
    }

    pub fn statistics(&self) -> &[f64] {
        &self.stats.values
    }

    /// Tests from largest to smallest covariate.
    pub fn covariate_order(&self) -> &[usize] {
        &self.order
    }

    fn rank_probs(&self, slot: usize, cov_eff: f64) -> Result<RankDistribution> {
        let m = self.collection.len();
        let r = self.rank_cache[slot].get_or_init(|| {
            TestPopulation::new(m, self.null.m0, EffectPrior::PointMass { effect: cov_eff })
                .and_then(|pop| rank_prob_exact_mc(&pop, cov_eff, false, &self.options.mc))
                .map_err(|e| e.to_string())
        });
        r.clone().map_err(|e| Error::Argument(format!("rank probabilities: {e}")))
    }

    /// Weights and decisions of `method` at level `alpha`.
    pub fn run(&self, method: Method, alpha: f64) -> Result<AnalysisResult> {
        check_alpha(alpha)?;
        let m = self.collection.len();
        let mut diag = Diagnostics::default();
        let weights = if method.is_unweighted() {
            WeightVector::uniform(m, None)
        } else {
            diag.clamped_low_p = self.stats.clamped_low_p;
            diag.clamped_high_p = self.stats.clamped_high_p;
            diag.null = Some(self.null);
            diag.effects = self.effects.clone();
            diag.warnings.extend(self.warnings.iter().cloned());
            match self.effects.as_ref().filter(|e| e.defined) {
                None => WeightVector::uniform(m, Some("no alternatives estimated; using unit weights".into())),
                Some(eff) => {
                    let w = self.method_weights(method, eff, alpha, &mut diag)?;
                    if w.delta.is_finite() {
                        diag.multiplier = Some(w.delta);
                    }
                    diag.solver_path = Some(format!("{:?}", w.path));
                    w
                }
            }
        };
        diag.warnings.extend(weights.warnings.iter().cloned());
        let (adjusted_pvalues, rejected) = decide(&self.collection.pvalues, &weights.weights, alpha, self.options.mode)?;
        Ok(AnalysisResult {
            method,
            alpha,
            mode: self.options.mode,
            weights,
            adjusted_pvalues,
            rejected,
            covariate_rank: self.covariate_rank.clone(),
            diagnostics: diag,
        })
    }

    fn method_weights(&self, method: Method, eff: &EffectEstimate, alpha: f64, diag: &mut Diagnostics) -> Result<WeightVector> {
        let c = self.collection;
        let opt = &self.options;
        let order = &self.order;
        let null = &self.null;
        let m = c.len();
        let x = &c.covariates;
        match method {
            Method::CrwCont | Method::CrwBin => {
                let binary = method == Method::CrwBin;
                let (cov_eff, test_eff) = if binary {
                    (eff.predicted_median_covariate_effect, eff.median_test_effect)
                } else {
                    (eff.predicted_mean_covariate_effect, eff.mean_test_effect)
                };
                if !(test_eff > 0.0) {
                    return Ok(WeightVector::uniform(m, Some(format!("test effect {test_eff} is not positive; using unit weights"))));
                }
                let rd = self.rank_probs(usize::from(binary), cov_eff)?;
                diag.rank_probabilities = Some(rd.probabilities.clone());
                let inputs = CrwInputs::new(&rd, test_eff, alpha, null.m1, c.tails);
                let w = step("CRW weights", if binary { crw_weights_binary(&inputs) } else { crw_weights_continuous(&inputs) })?;
                Ok(WeightVector { weights: by_rank_to_tests(&w.weights, order), ..w })
            }
            Method::Gcw => {
                let (eta, sigma) = (eff.mean_test_effect, eff.sd_test_effect);
                let tau = sd(x);
                let nu = (tau * tau - sigma * sigma).max(1e-8).sqrt();
                diag.gaussian_params = Some([eta, sigma, tau, nu]);
                let params: Vec<GcwParams> = x
                    .iter()
                    .map(|&xi| GcwParams { eta, sigma, nu, covariate: xi, density_ratio: opt.density_ratio })
                    .collect();
                step("GCW weights", gcw_weights(&params, alpha, m))
            }
            Method::Gcw2 => {
                let eta = eff.mean_test_effect;
                let tau = sd(x);
                diag.gaussian_params = Some([eta, eff.sd_test_effect, tau, f64::NAN]);
                let center = eff.predicted_mean_covariate_effect;
                let y = match eff.boxcox_lambda {
                    Some(l) => x.iter().map(|&v| crate::math::boxcox::box_cox_transform(v, l)).collect(),
                    None => x.clone(),
                };
                let tau_y = sd(&y);
                if !(tau_y > 0.0) {
                    return Ok(WeightVector::uniform(m, Some("constant covariates; using unit weights".into())));
                }
                let conditional = y
                    .iter()
                    .map(|&v| (norm_pdf((v - center) / tau_y) / tau_y).max(f64::MIN_POSITIVE))
                    .collect();
                let inputs = Gcw2Inputs {
                    covariate_density: vec![1.0; m],
                    conditional_density: conditional,
                    mean_test_effect: eta,
                    alpha,
                    m,
                };
                step("GCW2 weights", gcw2_weights(&inputs))
            }
            Method::Bw => {
                let gamma = vec![std::f64::consts::SQRT_2; m];
                step("BW weights", bw_weights(x, &gamma, alpha, m))
            }
            Method::Dcw => {
                let e = match opt.dcw_effect {
                    EffectType::Continuous => eff.mean_test_effect,
                    EffectType::Binary => eff.median_test_effect,
                };
                if !(e > 0.0) {
                    return Ok(WeightVector::uniform(m, Some(format!("test effect {e} is not positive; using unit weights"))));
                }
                let sorted_p: Vec<f64> = order.iter().map(|&i| c.pvalues[i]).collect();
                let g_cap = opt.max_groups.min(m).max(2);
                let (g, df) = match opt.groups {
                    Some(g) => (g, g as f64),
                    None => {
                        let rule = match opt.mode {
                            Mode::Fdr => RejectionRule::WeightedBh,
                            Mode::Fwer => RejectionRule::WeightedBonferroni,
                        };
                        let best = step(
                            "group selection",
                            dcw::optimize_groups_with(&c.pvalues, x, g_cap, alpha, e, null.m1, opt.dcw_effect, opt.bins, rule),
                        )?;
                        (best.groups, best.spline_df)
                    }
                };
                let cfg = GroupConfig { n_groups: g, bins_per_group: opt.bins, spline_df: df, effect_type: opt.dcw_effect };
                diag.groups = Some(g);
                diag.spline_df = Some(df);
                let probs = step("group probabilities", dcw::dcw_rank_probs(&sorted_p, &cfg, &storey_pi0))?;
                diag.group_probabilities = Some(probs.smoothed.clone());
                diag.warnings.extend(probs.warnings.iter().cloned());
                let w = step("DCW weights", dcw::dcw_weights(&probs, e, alpha, m, null.m1, &cfg))?;
                Ok(WeightVector { weights: by_rank_to_tests(&w.weights, order), ..w })
            }
            Method::Bh | Method::Bonferroni => Ok(WeightVector::uniform(m, None)),
        }
    }
}

/// Runs the full analysis for one method.
pub fn run_analysis(collection: &TestCollection, method: Method, alpha: f64, options: &AnalysisOptions) -> Result<AnalysisResult> {
    check_alpha(alpha)?;
    Analysis::prepare(collection, options)?.run(method, alpha)
}
