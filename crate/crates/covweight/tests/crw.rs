use covweight::crw::{
    crw_weights_at, crw_weights_binary, crw_weights_continuous, crw_weights_exact, solve_delta, uniform_delta, CrwInputs,
    SolverPath, Tails, WeightFormula,
};
use covweight::effects::{EffectPrior, TestPopulation};
use covweight::math::{norm_cdf, norm_sf};
use covweight::rankprob::{rank_prob_all_null, rank_prob_normal_approx, McConfig, RankDistribution};
use proptest::prelude::*;

fn inputs(p: Vec<f64>, e: f64, alpha: f64, m1: usize, tails: Tails) -> CrwInputs {
    CrwInputs { m: p.len(), rank_probs: p, mean_test_effect: e, alpha, m1, tails }
}

fn dist(p: Vec<f64>) -> RankDistribution {
    let n = p.len();
    RankDistribution { probabilities: p, std_errors: vec![0.0; n], focal_effect: 0.0, is_null_focal: false, population: None }
}

fn normalized(mut w: Vec<f64>) -> Vec<f64> {
    let s: f64 = w.iter().sum();
    let m = w.len() as f64;
    w.iter_mut().for_each(|v| *v *= m / s);
    w
}

/// Upper-tail normal quantile by bisection on the cdf.
fn isf_oracle(q: f64) -> f64 {
    let (mut lo, mut hi) = (-40.0, 40.0);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if 1.0 - norm_cdf(mid) > q {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

/// Direct evaluation of (m/α)·Φ̄(E/2 + ln(δ·c/(α·P))/E).
fn formula(p: &[f64], e: f64, alpha: f64, c: f64, delta: f64) -> Vec<f64> {
    let m = p.len() as f64;
    p.iter().map(|&pi| m / alpha * norm_sf(e / 2.0 + (delta * c / (alpha * pi)).ln() / e)).collect()
}

fn decaying(m: usize, rate: f64) -> Vec<f64> {
    let raw: Vec<f64> = (0..m).map(|i| (-rate * i as f64 / m as f64).exp()).collect();
    let s: f64 = raw.iter().sum();
    raw.into_iter().map(|v| v / s).collect()
}

#[test]
fn single_test_gets_unit_weight() {
    for e in [0.5, 2.0, 5.0] {
        let w = crw_weights_continuous(&inputs(vec![1.0], e, 0.05, 1, Tails::One)).unwrap();
        assert_eq!(w.weights, vec![1.0]);
        let w = crw_weights_binary(&inputs(vec![1.0], e, 0.05, 1, Tails::One)).unwrap();
        assert_eq!(w.weights, vec![1.0]);
    }
}

#[test]
fn uniform_probabilities_give_unit_weights() {
    let rd = rank_prob_all_null(250).unwrap();
    let w = crw_weights_continuous(&CrwInputs::new(&rd, 2.0, 0.05, 25, Tails::One)).unwrap();
    assert!(w.weights.iter().all(|v| (v - 1.0).abs() < 1e-6));
    // binary with m1 = m
    let w = crw_weights_binary(&CrwInputs::new(&rd, 2.0, 0.05, 250, Tails::One)).unwrap();
    assert!(w.weights.iter().all(|v| (v - 1.0).abs() < 1e-6));
}

#[test]
fn delta_matches_closed_form_for_uniform_probs() {
    let (m, alpha, e) = (100usize, 0.05, 2.0);
    let inp = inputs(vec![1.0 / m as f64; m], e, alpha, 1, Tails::One);
    let want = alpha / m as f64 * (e * (isf_oracle(alpha / m as f64) - e / 2.0)).exp();
    let (got, path) = solve_delta(&inp, WeightFormula::Continuous).unwrap();
    assert!((got / want - 1.0).abs() < 1e-6, "{got} vs {want}");
    assert_ne!(path, SolverPath::Grid);
    assert!((uniform_delta(&inp, WeightFormula::Continuous).unwrap() / want - 1.0).abs() < 1e-9);
    let w = crw_weights_at(&inp, WeightFormula::Continuous, want).unwrap();
    assert!(w.iter().all(|v| (v - 1.0).abs() < 1e-6));
}

#[test]
fn weights_decay_with_rank_in_a_sparse_world() {
    let pop = TestPopulation::new(10_000, 9_000, EffectPrior::PointMass { effect: 2.0 }).unwrap();
    let rd = rank_prob_normal_approx(&pop, 2.0, false, &McConfig { replications: 20_000, seed: 3 }).unwrap();
    let w = crw_weights_continuous(&CrwInputs::new(&rd, 2.0, 0.05, 1_000, Tails::One)).unwrap();
    w.check_constraint().unwrap();
    let max = w.weights.iter().cloned().fold(0.0, f64::max);
    let head = w.weights[..100].iter().cloned().fold(0.0, f64::max);
    assert_eq!(head, max);
    let tail = w.weights[9_000..].iter().cloned().fold(0.0, f64::max);
    assert!(tail < 0.01 * max, "tail {tail}, max {max}");
    // block means decrease along the ranks
    let blocks: Vec<f64> = w.weights.chunks(1_000).map(|c| c.iter().sum::<f64>() / c.len() as f64).collect();
    assert!(blocks.windows(2).all(|b| b[1] <= b[0]), "{blocks:?}");
}

#[test]
fn halving_m1_shrinks_binary_weights_at_fixed_delta() {
    let p = decaying(50, 3.0);
    let (e, alpha, delta) = (2.0, 0.05, 1e-3);
    let full = crw_weights_at(&inputs(p.clone(), e, alpha, 20, Tails::One), WeightFormula::Binary, delta).unwrap();
    let half = crw_weights_at(&inputs(p.clone(), e, alpha, 10, Tails::One), WeightFormula::Binary, delta).unwrap();
    let oracle = formula(&p, e, alpha, 50.0 / 10.0, delta);
    for i in 0..50 {
        assert!(half[i] < full[i], "rank {}: {} vs {}", i + 1, half[i], full[i]);
        assert!((half[i] - oracle[i]).abs() <= 1e-12 * oracle[i].max(1e-300));
    }
}

#[test]
fn binary_matches_continuous_with_scaled_probs() {
    let p = decaying(80, 4.0);
    let (m, m1) = (80usize, 16usize);
    let b = crw_weights_binary(&inputs(p.clone(), 2.5, 0.05, m1, Tails::One)).unwrap();
    let scaled: Vec<f64> = p.iter().map(|v| v * m1 as f64 / m as f64).collect();
    let c = crw_weights_continuous(&inputs(scaled, 2.5, 0.05, 1, Tails::One)).unwrap();
    for (x, y) in b.weights.iter().zip(&c.weights) {
        assert!((x - y).abs() < 1e-6, "{x} vs {y}");
    }
}

#[test]
fn zero_probability_is_floored() {
    let mut p = decaying(20, 2.0);
    p[19] = 0.0;
    let inp = inputs(p.clone(), 2.0, 0.05, 1, Tails::One);
    assert_eq!(inp.probability_floor(), 1.0 / (20.0 * 1e6));
    let w = crw_weights_continuous(&inp).unwrap();
    assert!(w.weights.iter().all(|v| v.is_finite()));
    assert_eq!(w.warnings.len(), 1);
    p[19] = inp.probability_floor();
    let v = crw_weights_continuous(&inputs(p, 2.0, 0.05, 1, Tails::One)).unwrap();
    assert_eq!(w.weights, v.weights);
}

#[test]
fn nonpositive_effect_gives_flagged_unit_weights() {
    for e in [0.0, -1.0] {
        let w = crw_weights_continuous(&inputs(decaying(10, 2.0), e, 0.05, 1, Tails::One)).unwrap();
        assert_eq!(w.weights, vec![1.0; 10]);
        assert!(!w.warnings.is_empty());
    }
}

#[test]
fn invalid_inputs_are_rejected() {
    assert!(crw_weights_continuous(&inputs(vec![0.5, 0.5], 2.0, 1.0, 1, Tails::One)).is_err());
    assert!(crw_weights_continuous(&inputs(vec![0.5, f64::NAN], 2.0, 0.05, 1, Tails::One)).is_err());
    assert!(crw_weights_binary(&inputs(vec![0.5, 0.5], 2.0, 0.05, 0, Tails::One)).is_err());
    assert!(crw_weights_binary(&inputs(vec![0.5, 0.5], 2.0, 0.05, 3, Tails::One)).is_err());
    assert!(crw_weights_at(&inputs(vec![0.5, 0.5], 2.0, 0.05, 1, Tails::One), WeightFormula::Continuous, 0.0).is_err());
}

#[test]
fn raising_one_probability_lowers_the_others() {
    let p = decaying(30, 2.0);
    let delta = 0.01;
    let base = normalized(crw_weights_at(&inputs(p.clone(), 2.0, 0.05, 1, Tails::One), WeightFormula::Continuous, delta).unwrap());
    let mut q = p.clone();
    q[5] *= 1.5;
    let bumped = normalized(crw_weights_at(&inputs(q, 2.0, 0.05, 1, Tails::One), WeightFormula::Continuous, delta).unwrap());
    assert!(bumped[5] > base[5]);
    for i in (0..30).filter(|&i| i != 5) {
        assert!(bumped[i] < base[i], "rank {}", i + 1);
    }
}

#[test]
fn weights_vanish_as_alpha_shrinks() {
    let p = decaying(40, 3.0);
    let mut prev = f64::INFINITY;
    for alpha in [1e-4, 1e-8, 1e-12, 1e-16] {
        let w = crw_weights_at(&inputs(p.clone(), 2.0, alpha, 1, Tails::One), WeightFormula::Continuous, 0.01).unwrap();
        let s: f64 = w.iter().sum();
        assert!(s < prev);
        prev = s;
    }
    assert!(prev < 1e-30, "{prev}");
}

#[test]
fn exact_point_mass_equals_binary() {
    let p = decaying(60, 5.0);
    let pop = TestPopulation::new(60, 48, EffectPrior::PointMass { effect: 2.0 }).unwrap();
    let exact = crw_weights_exact(&pop, |_| Ok(dist(p.clone())), 0.05, 60, 16).unwrap();
    let bin = crw_weights_binary(&inputs(p, 2.0, 0.05, 12, Tails::One)).unwrap();
    for (x, y) in exact.weights.iter().zip(&bin.weights) {
        assert!((x - y).abs() < 1e-6 * y.max(1.0), "{x} vs {y}");
    }
}

#[test]
fn exact_uniform_prior_orders_past_the_mode() {
    let pop = TestPopulation::new(100, 80, EffectPrior::Uniform { a: 1.5, b: 2.5 }).unwrap();
    let mc = McConfig { replications: 20_000, seed: 9 };
    let by_effect = |e: f64| rank_prob_normal_approx(&pop, e, false, &mc);
    let exact = crw_weights_exact(&pop, by_effect, 0.05, 100, 12).unwrap();
    exact.check_constraint().unwrap();
    let at_mean = by_effect(2.0).unwrap();
    let approx = crw_weights_continuous(&CrwInputs::new(&at_mean, 2.0, 0.05, 20, Tails::One)).unwrap();
    let order = |w: &[f64]| {
        let mut idx: Vec<usize> = (0..w.len()).collect();
        idx.sort_by(|&a, &b| w[b].total_cmp(&w[a]).then(a.cmp(&b)));
        idx
    };
    // P(r | ε) peaks a few ranks below the top and the peak moves with ε,
    // so the integral reorders the first ranks. Past the peak the order agrees.
    let mode = at_mean.probabilities.iter().enumerate().max_by(|a, b| a.1.total_cmp(b.1)).unwrap().0;
    let (ex, ap) = (order(&exact.weights), order(&approx.weights));
    let past = |o: &[usize]| o.iter().copied().filter(|&i| i >= mode).collect::<Vec<_>>();
    assert_eq!(past(&ex), past(&ap));
    let rel: Vec<f64> = exact.weights.iter().zip(&approx.weights).map(|(x, y)| (x / y - 1.0).abs()).collect();
    // The per-weight gap reaches tens of percent on this shape.
    assert!(rel.iter().cloned().fold(0.0, f64::max) > 0.05);
}

/// Exact weights by composite Simpson over the effect and bisection for
/// both the per-test threshold and the multiplier.
fn exact_oracle(p_of: &dyn Fn(f64, usize) -> f64, a: f64, b: f64, m: usize, alpha: f64) -> Vec<f64> {
    let n = 200;
    let h = (b - a) / n as f64;
    let nodes: Vec<(f64, f64)> = (0..=n)
        .map(|k| {
            let c = if k == 0 || k == n { 1.0 } else if k % 2 == 1 { 4.0 } else { 2.0 };
            (a + k as f64 * h, c * h / 3.0 / (b - a))
        })
        .collect();
    let table: Vec<Vec<f64>> = (0..m).map(|i| nodes.iter().map(|&(e, c)| c * p_of(e, i) * (-e * e / 2.0).exp()).collect()).collect();
    let integral = |z: f64, i: usize| nodes.iter().zip(&table[i]).map(|(&(e, _), t)| t * (z * e).exp()).sum::<f64>();
    let weights = |log_delta: f64| -> Vec<f64> {
        let rhs = (log_delta - alpha.ln()).exp();
        (0..m)
            .map(|i| {
                let (mut lo, mut hi) = (-60.0, 60.0);
                for _ in 0..80 {
                    let mid = 0.5 * (lo + hi);
                    if integral(mid, i) < rhs {
                        lo = mid;
                    } else {
                        hi = mid;
                    }
                }
                m as f64 / alpha * norm_sf(0.5 * (lo + hi))
            })
            .collect()
    };
    let (mut lo, mut hi) = (-60.0, 60.0);
    for _ in 0..80 {
        let mid = 0.5 * (lo + hi);
        if weights(mid).iter().sum::<f64>() > m as f64 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    normalized(weights(0.5 * (lo + hi)))
}

#[test]
fn exact_weights_match_direct_integration() {
    let m = 20;
    let p_of = |e: f64, i: usize| {
        let raw = |k: usize| (-e * k as f64 / 8.0).exp();
        raw(i) / (0..m).map(raw).sum::<f64>()
    };
    let pop = TestPopulation::new(m, 15, EffectPrior::Uniform { a: 1.0, b: 3.0 }).unwrap();
    let got = crw_weights_exact(&pop, |e| Ok(dist((0..m).map(|i| p_of(e, i)).collect())), 0.05, m, 24).unwrap();
    let want = exact_oracle(&p_of, 1.0, 3.0, m, 0.05);
    for (x, y) in got.weights.iter().zip(&want) {
        assert!((x - y).abs() < 1e-6 * y.max(1.0), "{x} vs {y}");
    }
}

fn probs_strategy() -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(0.001f64..1.0, 2..60).prop_map(|v| {
        let s: f64 = v.iter().sum();
        v.into_iter().map(|x| x / s).collect()
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn constraint_holds(p in probs_strategy(), e in 0.3f64..5.0, alpha in 0.001f64..0.2, two in any::<bool>()) {
        let tails = if two { Tails::Two } else { Tails::One };
        let m1 = (p.len() / 3).max(1);
        for w in [
            crw_weights_continuous(&inputs(p.clone(), e, alpha, m1, tails)).unwrap(),
            crw_weights_binary(&inputs(p.clone(), e, alpha, m1, tails)).unwrap(),
        ] {
            prop_assert!(w.check_constraint().is_ok(), "{:?}", w);
        }
    }

    #[test]
    fn weights_follow_probabilities(p in probs_strategy(), e in 0.3f64..5.0) {
        let w = crw_weights_continuous(&inputs(p.clone(), e, 0.05, 1, Tails::One)).unwrap();
        let mut idx: Vec<usize> = (0..p.len()).collect();
        idx.sort_by(|&a, &b| p[b].total_cmp(&p[a]));
        for k in idx.windows(2) {
            let (a, b) = (k[0], k[1]);
            if p[a] == p[b] {
                prop_assert_eq!(w.weights[a], w.weights[b]);
            } else {
                prop_assert!(w.weights[a] >= w.weights[b]);
            }
        }
    }

    #[test]
    fn two_tails_at_alpha_match_one_tail_at_half(p in probs_strategy(), e in 0.3f64..5.0, alpha in 0.002f64..0.2) {
        let two = inputs(p.clone(), e, alpha, 1, Tails::Two);
        let one = inputs(p.clone(), e, alpha / 2.0, 1, Tails::One);
        let a = crw_weights_continuous(&two).unwrap();
        let b = crw_weights_continuous(&one).unwrap();
        for (x, y) in a.weights.iter().zip(&b.weights) {
            prop_assert!((x - y).abs() <= 1e-6 * y.max(1.0), "{} vs {}", x, y);
        }
        let delta = 0.02;
        let wa = crw_weights_at(&two, WeightFormula::Continuous, delta).unwrap();
        let wb = crw_weights_at(&one, WeightFormula::Continuous, delta / 2.0).unwrap();
        for (x, y) in wa.iter().zip(&wb) {
            prop_assert!((x - y).abs() <= 1e-12 * y.max(1e-300));
        }
    }
}
