use covweight::dcw::{
    dcw_rank_probs, dcw_rejections, dcw_weights, df_grid, group_sizes, optimize_groups, optimize_groups_with, order_by_covariate,
    EffectType, GroupConfig, GroupRankProbs, RejectionRule,
};
use covweight::math::norm_sf;
use covweight::pipeline::{estimate_pi0_storey, run_analysis, weighted_bh, AnalysisOptions, Method, TestCollection};
use covweight::crw::Tails;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

fn storey(p: &[f64]) -> f64 {
    estimate_pi0_storey(p).pi0
}

fn probs(smoothed: Vec<f64>) -> GroupRankProbs {
    GroupRankProbs { raw: smoothed.clone(), smoothed, normalized: true, warnings: Vec::new() }
}

/// One-sided p-values and covariates; alternatives have effect `effect` and
/// covariates shifted up by `shift`.
fn informative(m: usize, pi0: f64, effect: f64, shift: f64, seed: u64) -> (Vec<f64>, Vec<f64>, Vec<bool>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let m1 = ((1.0 - pi0) * m as f64).round() as usize;
    let mut p = Vec::with_capacity(m);
    let mut x = Vec::with_capacity(m);
    let mut alt = Vec::with_capacity(m);
    for i in 0..m {
        let is_alt = i < m1;
        let z: f64 = rng.sample(StandardNormal);
        let c: f64 = rng.sample(StandardNormal);
        p.push(norm_sf(z + if is_alt { effect } else { 0.0 }));
        x.push(c + if is_alt { shift } else { 0.0 });
        alt.push(is_alt);
    }
    (p, x, alt)
}

fn first_bin_counts(sorted: &[f64], g: usize, k: usize) -> Vec<f64> {
    let mut out = Vec::new();
    let mut start = 0;
    for size in group_sizes(sorted.len(), g) {
        let grp = &sorted[start..start + size];
        start += size;
        out.push(grp.iter().filter(|&&p| p < 1.0 / k as f64).count() as f64 / size as f64);
    }
    out
}

#[test]
fn ordering_examples() {
    assert_eq!(order_by_covariate(&[0.1, 0.2, 0.3], &[3.0, 1.0, 2.0]).unwrap(), vec![0, 2, 1]);
    assert_eq!(order_by_covariate(&[0.5; 4], &[7.0; 4]).unwrap(), vec![0, 1, 2, 3]);
    assert_eq!(order_by_covariate(&[0.5; 4], &[1.0, 2.0, 3.0, 4.0]).unwrap(), vec![3, 2, 1, 0]);
    assert!(order_by_covariate(&[0.5; 3], &[1.0, 2.0]).is_err());
    assert!(order_by_covariate(&[0.5; 2], &[1.0, f64::NAN]).is_err());
}

#[test]
fn group_sizes_put_the_remainder_first() {
    assert_eq!(group_sizes(23, 5), vec![5, 5, 5, 4, 4]);
    assert_eq!(group_sizes(20, 4), vec![5; 4]);
}

#[test]
fn null_world_gives_equal_group_probs() {
    let mut rng = ChaCha8Rng::seed_from_u64(41);
    let m = 20_000;
    let p: Vec<f64> = (0..m).map(|_| rng.random::<f64>()).collect();
    let cfg = GroupConfig::new(10, 3.0, EffectType::Continuous);
    let gp = dcw_rank_probs(&p, &cfg, &storey).unwrap();
    assert_eq!(gp.raw, first_bin_counts(&p, 10, 20));
    // each normalized prob is f_g / Σf with f_g ~ Bin(2000, 0.05)/2000
    let se = (0.05f64 * 0.95 / 2000.0).sqrt() / (10.0 * 0.05);
    for v in &gp.smoothed {
        assert!((v - 0.1).abs() <= 3.0 * se, "{v}");
    }
    assert!((gp.smoothed.iter().sum::<f64>() - 1.0).abs() < 1e-12);
}

#[test]
fn informative_covariate_gives_decreasing_probs() {
    let (p, x, _) = informative(10_000, 0.8, 2.5, 2.0, 5);
    let order = order_by_covariate(&p, &x).unwrap();
    let sorted: Vec<f64> = order.iter().map(|&i| p[i]).collect();
    let gp = dcw_rank_probs(&sorted, &GroupConfig::new(10, 4.0, EffectType::Continuous), &storey).unwrap();
    assert!(gp.smoothed[..4].windows(2).all(|v| v[1] < v[0]), "{:?}", gp.smoothed);
    let tail = &gp.smoothed[6..];
    let spread = tail.iter().cloned().fold(0.0, f64::max) - tail.iter().cloned().fold(1.0, f64::min);
    assert!(spread < gp.smoothed[0] - gp.smoothed[3], "{:?}", gp.smoothed);
}

#[test]
fn one_signal_group_dominates() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut sorted = vec![1e-8; 100];
    sorted.extend((0..900).map(|_| rng.random::<f64>()));
    let cfg = GroupConfig::new(10, 10.0, EffectType::Continuous);
    let gp = dcw_rank_probs(&sorted, &cfg, &storey).unwrap();
    let counts = first_bin_counts(&sorted, 10, 20);
    assert_eq!(gp.raw, counts);
    assert_eq!(counts[0], 1.0);
    for v in &gp.smoothed[1..] {
        assert!(gp.smoothed[0] > 5.0 * v, "{:?}", gp.smoothed);
    }
}

#[test]
fn full_df_recovers_raw_probs() {
    let (p, x, _) = informative(5_000, 0.85, 2.0, 1.5, 12);
    let order = order_by_covariate(&p, &x).unwrap();
    let sorted: Vec<f64> = order.iter().map(|&i| p[i]).collect();
    let dist = |df: f64| {
        let gp = dcw_rank_probs(&sorted, &GroupConfig::new(8, df, EffectType::Continuous), &storey).unwrap();
        let s: f64 = gp.raw.iter().sum();
        gp.raw.iter().zip(&gp.smoothed).map(|(r, v)| (r / s - v).abs()).fold(0.0, f64::max)
    };
    let (d3, d6, d8) = (dist(3.0), dist(6.0), dist(8.0));
    assert!(d8 < d6 && d6 < d3, "{d3} {d6} {d8}");
    assert!(d8 < 1e-6, "{d8}");
}

#[test]
fn binary_branch_uses_group_null_proportion() {
    let (p, x, _) = informative(4_000, 0.8, 3.0, 2.0, 2);
    let order = order_by_covariate(&p, &x).unwrap();
    let sorted: Vec<f64> = order.iter().map(|&i| p[i]).collect();
    let gp = dcw_rank_probs(&sorted, &GroupConfig::new(5, 3.0, EffectType::Binary), &storey).unwrap();
    for (g, chunk) in sorted.chunks(800).enumerate() {
        assert!((gp.raw[g] - (1.0 - storey(chunk))).abs() < 1e-12);
    }
}

#[test]
fn rank_prob_errors_and_fallbacks() {
    let cfg = GroupConfig::new(4, 3.0, EffectType::Continuous);
    assert!(dcw_rank_probs(&[0.5; 3], &cfg, &storey).is_err());
    assert!(dcw_rank_probs(&[0.5; 40], &GroupConfig::new(4, 5.0, EffectType::Continuous), &storey).is_err());
    let gp = dcw_rank_probs(&[0.9; 40], &cfg, &storey).unwrap();
    assert_eq!(gp.smoothed, vec![0.25; 4]);
    assert!(!gp.warnings.is_empty());
}

#[test]
fn uniform_group_probs_give_unit_weights() {
    let cfg = GroupConfig::new(5, 3.0, EffectType::Continuous);
    let w = dcw_weights(&probs(vec![0.2; 5]), 2.0, 0.05, 103, 10, &cfg).unwrap();
    w.check_constraint().unwrap();
    assert!(w.weights.iter().all(|v| (v - 1.0).abs() < 1e-9));
}

#[test]
fn two_groups_follow_the_formula() {
    let cfg = GroupConfig::new(2, 2.0, EffectType::Continuous);
    let (e, alpha, m) = (2.0, 0.05, 50);
    let w = dcw_weights(&probs(vec![0.9, 0.1]), e, alpha, m, 5, &cfg).unwrap();
    w.check_constraint().unwrap();
    assert!(w.weights[0] > w.weights[49]);
    let group = |f: f64| 2.0 / alpha * norm_sf(e / 2.0 + (w.delta / (alpha * f)).ln() / e);
    let (g1, g2) = (group(0.9), group(0.1));
    let scale = m as f64 / (25.0 * g1 + 25.0 * g2);
    assert!((w.weights[0] - g1 * scale).abs() < 1e-12);
    assert!((w.weights[49] - g2 * scale).abs() < 1e-12);
    // δ is the best point of the 0.001 grid
    assert!((w.delta * 1000.0 - (w.delta * 1000.0).round()).abs() < 1e-9);
}

#[test]
fn binary_group_weights_follow_the_formula() {
    let cfg = GroupConfig::new(4, 3.0, EffectType::Binary);
    let f = vec![0.4, 0.3, 0.2, 0.1];
    let (e, alpha, m, m1) = (2.5, 0.1, 40, 8);
    let w = dcw_weights(&probs(f.clone()), e, alpha, m, m1, &cfg).unwrap();
    let raw: Vec<f64> = f
        .iter()
        .map(|fg| 4.0 / alpha * norm_sf(e / 2.0 + (w.delta * (m * m) as f64 / (alpha * m1 as f64 * 4.0 * fg)).ln() / e))
        .collect();
    let scale = m as f64 / (10.0 * raw.iter().sum::<f64>());
    for (g, r) in raw.iter().enumerate() {
        assert!((w.weights[10 * g] - r * scale).abs() < 1e-12);
    }
}

#[test]
fn one_test_per_group_is_crw_at_the_same_delta() {
    use covweight::crw::{crw_weights_at, CrwInputs, WeightFormula};
    let f = vec![0.3, 0.25, 0.2, 0.15, 0.1];
    let cfg = GroupConfig::new(5, 3.0, EffectType::Continuous);
    let w = dcw_weights(&probs(f.clone()), 2.0, 0.05, 5, 1, &cfg).unwrap();
    let inp = CrwInputs { rank_probs: f, mean_test_effect: 2.0, alpha: 0.05, m: 5, m1: 1, tails: Tails::One };
    let c = crw_weights_at(&inp, WeightFormula::Continuous, w.delta).unwrap();
    let s: f64 = c.iter().sum();
    for (x, y) in w.weights.iter().zip(&c) {
        assert!((x - y * 5.0 / s).abs() < 1e-12);
    }
}

#[test]
fn dcw_weight_errors() {
    let cfg = GroupConfig::new(2, 2.0, EffectType::Continuous);
    assert!(dcw_weights(&probs(vec![0.5, 0.5]), 2.0, 1.5, 10, 1, &cfg).is_err());
    assert!(dcw_weights(&probs(vec![0.5, 0.0]), 2.0, 0.05, 10, 1, &cfg).is_err());
    assert!(dcw_weights(&probs(vec![0.5, 0.5, 0.5]), 2.0, 0.05, 10, 1, &cfg).is_err());
    let w = dcw_weights(&probs(vec![0.9, 0.1]), -1.0, 0.05, 10, 1, &cfg).unwrap();
    assert_eq!(w.weights, vec![1.0; 10]);
    assert!(GroupConfig::new(1, 1.5, EffectType::Continuous).validate().is_err());
    assert!(GroupConfig::new(4, 1.0, EffectType::Continuous).validate().is_err());
}

#[test]
fn pure_null_picks_the_smallest_setting() {
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let p: Vec<f64> = (0..2_000).map(|_| 0.2 + 0.8 * rng.random::<f64>()).collect();
    let x: Vec<f64> = (0..2_000).map(|_| rng.random::<f64>()).collect();
    assert_eq!(optimize_groups(&p, &x, 8, 0.05, 2.0, 100, EffectType::Continuous).unwrap(), (2, 2.0));
    assert!(optimize_groups(&p, &x, 1, 0.05, 2.0, 100, EffectType::Continuous).is_err());
}

#[test]
fn chosen_setting_is_the_argmax_and_recomputes() {
    let (p, x, _) = informative(5_000, 0.9, 3.0, 2.0, 31);
    let m1 = 500;
    let choice = optimize_groups_with(&p, &x, 8, 0.05, 3.0, m1, EffectType::Continuous, 20, RejectionRule::WeightedBh).unwrap();
    let order = order_by_covariate(&p, &x).unwrap();
    for df in df_grid(2) {
        let at2 = dcw_rejections(&p, &order, &GroupConfig::new(2, df, EffectType::Continuous), 0.05, 3.0, m1, RejectionRule::WeightedBh)
            .unwrap();
        assert!(choice.rejections >= at2);
    }
    // independent recomputation in the original test order
    let cfg = GroupConfig::new(choice.groups, choice.spline_df, EffectType::Continuous);
    let sorted: Vec<f64> = order.iter().map(|&i| p[i]).collect();
    let gp = dcw_rank_probs(&sorted, &cfg, &storey).unwrap();
    let w = dcw_weights(&gp, 3.0, 0.05, p.len(), m1, &cfg).unwrap();
    let mut by_test = vec![0.0; p.len()];
    for (k, &i) in order.iter().enumerate() {
        by_test[i] = w.weights[k];
    }
    let (_, rejected) = weighted_bh(&p, &by_test, 0.05).unwrap();
    assert_eq!(rejected.iter().filter(|r| **r).count(), choice.rejections);
    assert!(choice.rejections > 0);
}

#[test]
fn shuffled_input_keeps_weights_with_their_tests() {
    let (p, x, _) = informative(1_000, 0.9, 2.5, 2.0, 4);
    let opts = AnalysisOptions { groups: Some(8), ..AnalysisOptions::default() };
    let a = run_analysis(&TestCollection::new(p.clone(), x.clone(), Tails::One).unwrap(), Method::Dcw, 0.05, &opts).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut perm: Vec<usize> = (0..p.len()).collect();
    for i in (1..perm.len()).rev() {
        perm.swap(i, rng.random_range(0..=i));
    }
    let ps: Vec<f64> = perm.iter().map(|&i| p[i]).collect();
    // distinct covariates, so the order does not depend on tie breaks
    let xs: Vec<f64> = perm.iter().map(|&i| x[i]).collect();
    let b = run_analysis(&TestCollection::new(ps, xs, Tails::One).unwrap(), Method::Dcw, 0.05, &opts).unwrap();
    for (k, &i) in perm.iter().enumerate() {
        assert_eq!(b.weights.weights[k], a.weights.weights[i]);
        assert_eq!(b.rejected[k], a.rejected[i]);
    }
}

proptest! {
    #[test]
    fn group_sizes_add_up(m in 1usize..5_000, g in 1usize..50) {
        let s = group_sizes(m, g);
        prop_assert_eq!(s.len(), g);
        prop_assert_eq!(s.iter().sum::<usize>(), m);
        prop_assert!(s.windows(2).all(|v| v[0] >= v[1] && v[0] - v[1] <= 1));
    }

    #[test]
    fn weights_meet_the_constraint(raw in prop::collection::vec(0.01f64..1.0, 2..12), extra in 0usize..300, e in 0.5f64..4.0) {
        let g = raw.len();
        let s: f64 = raw.iter().sum();
        let cfg = GroupConfig::new(g, g as f64, EffectType::Continuous);
        let m = g + extra;
        let w = dcw_weights(&probs(raw.iter().map(|v| v / s).collect()), e, 0.05, m, 1, &cfg).unwrap();
        prop_assert!(w.check_constraint().is_ok());
        prop_assert_eq!(w.len(), m);
    }
}
