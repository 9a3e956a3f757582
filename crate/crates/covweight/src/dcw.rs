//! Data-driven covariate weights (DCW).
//!
//! Tests are ranked by covariate and cut into G groups. Each group gets a
//! rank probability estimated from its own p-values: the share of p-values
//! in the first of K bins (continuous effects) or one minus the group's null
//! proportion (binary effects). The probabilities are spline-smoothed over
//! group index and fed to a CRW-style formula at the group level.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::crw::{grid_delta, normalize_to_count, Formula, WeightVector};
use crate::error::{arg, Result};
use crate::math::spline::fit_smoothing_spline;
use crate::pipeline::{descending_order, weighted_bh, weighted_bonferroni};

/// Smoothed probabilities are floored here before normalization.
pub const PROB_FLOOR: f64 = 1e-12;
/// Smoothing needs at least this many groups.
pub const MIN_SMOOTHING_GROUPS: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EffectType {
    #[default]
    Continuous,
    Binary,
}

/// How rejections are counted while choosing the group count.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum RejectionRule {
    #[default]
    WeightedBh,
    WeightedBonferroni,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GroupConfig {
    pub n_groups: usize,
    pub bins_per_group: usize,
    pub spline_df: f64,
    pub effect_type: EffectType,
}

impl GroupConfig {
    pub fn new(n_groups: usize, spline_df: f64, effect_type: EffectType) -> Self {
        Self { n_groups, bins_per_group: 20, spline_df, effect_type }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_groups < 2 {
            return arg("need at least two groups");
        }
        if self.effect_type == EffectType::Continuous && self.bins_per_group < 2 {
            return arg("need at least two bins per group");
        }
        if !(self.spline_df > 1.0 && self.spline_df <= self.n_groups as f64) {
            return arg(format!("spline df must lie in (1, {}], got {}", self.n_groups, self.spline_df));
        }
        Ok(())
    }
}

/// Per-group rank probabilities.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupRankProbs {
    pub raw: Vec<f64>,
    /// Smoothed, floored and normalized to sum to one.
    pub smoothed: Vec<f64>,
    pub normalized: bool,
    pub warnings: Vec<String>,
}

/// Permutation listing tests from largest to smallest covariate, ties by
/// original index.
pub fn order_by_covariate(pvalues: &[f64], covariates: &[f64]) -> Result<Vec<usize>> {
    if pvalues.len() != covariates.len() {
        return arg("p-values and covariates differ in length");
    }
    if covariates.iter().any(|c| !c.is_finite()) {
        return arg("covariates must be finite");
    }
    Ok(descending_order(covariates))
}

/// Sizes of G consecutive groups of m tests; the first m mod G groups get
/// one extra test.
pub fn group_sizes(m: usize, g: usize) -> Vec<usize> {
    if g == 0 {
        return Vec::new();
    }
    let (base, extra) = (m / g, m % g);
    (0..g).map(|i| base + usize::from(i < extra)).collect()
}

/// Group probabilities from covariate-sorted p-values.
///
/// `pi0` estimates the null proportion of a set of p-values (binary branch).
pub fn dcw_rank_probs(sorted_pvalues: &[f64], cfg: &GroupConfig, pi0: &dyn Fn(&[f64]) -> f64) -> Result<GroupRankProbs> {
    cfg.validate()?;
    let m = sorted_pvalues.len();
    if m < cfg.n_groups {
        return arg(format!("{m} tests cannot fill {} groups", cfg.n_groups));
    }
    let mut warnings = Vec::new();
    let mut start = 0;
    let mut raw = Vec::with_capacity(cfg.n_groups);
    for size in group_sizes(m, cfg.n_groups) {
        let grp = &sorted_pvalues[start..start + size];
        start += size;
        let f = match cfg.effect_type {
            EffectType::Continuous => {
                let cut = 1.0 / cfg.bins_per_group as f64;
                grp.iter().filter(|&&p| p < cut).count() as f64 / size as f64
            }
            EffectType::Binary => 1.0 - pi0(grp).clamp(0.0, 1.0),
        };
        raw.push(f);
    }
    let g = cfg.n_groups;
    if raw.iter().all(|&f| f <= 0.0) {
        warnings.push("no group shows any signal; using equal group probabilities".into());
        return Ok(GroupRankProbs { raw, smoothed: vec![1.0 / g as f64; g], normalized: true, warnings });
    }
    let mut smoothed = if g >= MIN_SMOOTHING_GROUPS {
        let x: Vec<f64> = (1..=g).map(|k| k as f64).collect();
        let fit = fit_smoothing_spline(&x, &raw, cfg.spline_df)?;
        x.iter().map(|&k| fit.eval(k)).collect()
    } else {
        warnings.push(format!("{g} groups are too few to smooth; using raw probabilities"));
        raw.clone()
    };
    smoothed.iter_mut().for_each(|v| *v = v.max(PROB_FLOOR));
    let s: f64 = smoothed.iter().sum();
    smoothed.iter_mut().for_each(|v| *v /= s);
    Ok(GroupRankProbs { raw, smoothed, normalized: true, warnings })
}

/// Group weights replicated to members, in covariate-rank order.
pub fn dcw_weights(probs: &GroupRankProbs, mean_test_effect: f64, alpha: f64, m: usize, m1: usize, cfg: &GroupConfig) -> Result<WeightVector> {
    let g = probs.smoothed.len();
    if g != cfg.n_groups || g < 2 {
        return arg("group probabilities disagree with the group count");
    }
    if !(alpha > 0.0 && alpha < 1.0) {
        return arg("alpha must lie in (0,1)");
    }
    if m < g {
        return arg("fewer tests than groups");
    }
    if probs.smoothed.iter().any(|p| !(*p > 0.0) || !p.is_finite()) {
        return arg("group probabilities must be positive");
    }
    let e = mean_test_effect;
    if !(e > 0.0) || !e.is_finite() {
        return Ok(WeightVector::uniform(m, Some(format!("test effect {e} is not positive; using unit weights"))));
    }
    let scale = match cfg.effect_type {
        EffectType::Continuous => 1.0,
        EffectType::Binary => {
            if m1 == 0 || m1 > m {
                return arg("binary weights need 1 ≤ m1 ≤ m");
            }
            (m as f64).powi(2) / (m1 as f64 * g as f64)
        }
    };
    let gf = g as f64;
    let fm = Formula::from_ratios(gf / alpha, e, alpha, probs.smoothed.iter().map(|f| scale / f), gf);
    let (delta, path) = grid_delta(|d| fm.sum(d) - gf);
    let group_w = fm.weights(delta);
    let raw_group_sum: f64 = group_w.iter().sum();
    let mut warnings = Vec::new();
    if (raw_group_sum - gf).abs() > 0.05 * gf {
        warnings.push(format!("group weights sum to {raw_group_sum:.4} at the best grid δ"));
    }
    let mut w = Vec::with_capacity(m);
    for (wg, size) in group_w.iter().zip(group_sizes(m, g)) {
        w.extend(std::iter::repeat_n(*wg, size));
    }
    let raw_sum: f64 = w.iter().sum();
    if !normalize_to_count(&mut w) {
        return Ok(WeightVector::uniform(m, Some("all group weights underflowed; using unit weights".into())));
    }
    Ok(WeightVector { weights: w, delta, normalized: true, path, raw_sum, warnings })
}

/// Best (G, df) with its rejection count.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GroupChoice {
    pub groups: usize,
    pub spline_df: f64,
    pub rejections: usize,
}

/// df values tried for g groups: 2, 3, …, ⌊g⌋ and g.
pub fn df_grid(g: usize) -> Vec<f64> {
    let mut v: Vec<f64> = (2..=g).map(|d| d as f64).collect();
    if v.last() != Some(&(g as f64)) {
        v.push(g as f64);
    }
    v
}

/// Rejection count of DCW at one configuration (inputs in original order).
#[allow(clippy::too_many_arguments)]
pub fn dcw_rejections(
    pvalues: &[f64],
    order: &[usize],
    cfg: &GroupConfig,
    alpha: f64,
    mean_test_effect: f64,
    m1: usize,
    rule: RejectionRule,
) -> Result<usize> {
    let m = pvalues.len();
    let sorted: Vec<f64> = order.iter().map(|&i| pvalues[i]).collect();
    let probs = dcw_rank_probs(&sorted, cfg, &crate::pipeline::storey_pi0)?;
    let w = dcw_weights(&probs, mean_test_effect, alpha, m, m1, cfg)?;
    // Sorted p-values with weights in the same order give the same count.
    let rejected = match rule {
        RejectionRule::WeightedBh => weighted_bh(&sorted, &w.weights, alpha)?.1,
        RejectionRule::WeightedBonferroni => weighted_bonferroni(&sorted, &w.weights, alpha)?,
    };
    Ok(rejected.iter().filter(|r| **r).count())
}

/// Group count and spline df maximizing weighted-BH rejections.
pub fn optimize_groups(
    pvalues: &[f64],
    covariates: &[f64],
    g_max: usize,
    alpha: f64,
    mean_test_effect: f64,
    m1: usize,
    effect_type: EffectType,
) -> Result<(usize, f64)> {
    let c = optimize_groups_with(pvalues, covariates, g_max, alpha, mean_test_effect, m1, effect_type, 20, RejectionRule::WeightedBh)?;
    Ok((c.groups, c.spline_df))
}

/// [`optimize_groups`] with the bin count and rejection rule exposed.
#[allow(clippy::too_many_arguments)]
pub fn optimize_groups_with(
    pvalues: &[f64],
    covariates: &[f64],
    g_max: usize,
    alpha: f64,
    mean_test_effect: f64,
    m1: usize,
    effect_type: EffectType,
    bins: usize,
    rule: RejectionRule,
) -> Result<GroupChoice> {
    if g_max < 2 {
        return arg("g_max must be at least 2");
    }
    let order = order_by_covariate(pvalues, covariates)?;
    let g_max = g_max.min(pvalues.len());
    if g_max < 2 {
        return arg("need at least two tests");
    }
    let configs: Vec<GroupConfig> = (2..=g_max)
        .flat_map(|g| {
            df_grid(g).into_iter().map(move |df| GroupConfig {
                n_groups: g,
                bins_per_group: bins,
                spline_df: df,
                effect_type,
            })
        })
        .collect();
    let counts: Vec<Result<usize>> = configs
        .par_iter()
        .map(|cfg| dcw_rejections(pvalues, &order, cfg, alpha, mean_test_effect, m1, rule))
        .collect();
    let mut best = GroupChoice { groups: 2, spline_df: 2.0, rejections: 0 };
    let mut first = true;
    for (cfg, r) in configs.iter().zip(counts) {
        let r = r?;
        // Configurations are enumerated by increasing (g, df); keep the first maximum.
        if first || r > best.rejections {
            best = GroupChoice { groups: cfg.n_groups, spline_df: cfg.spline_df, rejections: r };
            first = false;
        }
    }
    Ok(best)
}
