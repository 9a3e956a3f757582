use covweight::effects::{EffectPrior, TestPopulation};
use covweight::math::{norm_cdf, norm_pdf};
use covweight::rankprob::{rank_prob_all_null, rank_prob_bruteforce, rank_prob_exact_mc, rank_prob_normal_approx, McConfig};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

fn binom_pmf(n: usize, q: f64) -> Vec<f64> {
    let mut pmf = vec![0.0; n + 1];
    pmf[0] = 1.0;
    for _ in 0..n {
        for j in (0..=n).rev() {
            let up = if j > 0 { pmf[j - 1] * q } else { 0.0 };
            pmf[j] = pmf[j] * (1.0 - q) + up;
        }
    }
    pmf
}

/// P(rank = k) by composite Simpson over the focal statistic t of the exact
/// convolution of the two binomial exceedance counts.
fn quadrature_ranks(n0: usize, n1: usize, focal: f64, alt_exceed: &dyn Fn(f64) -> f64) -> Vec<f64> {
    let m = n0 + n1 + 1;
    let (a, b, steps) = (focal - 10.0, focal + 10.0, 4000);
    let h = (b - a) / steps as f64;
    let mut out = vec![0.0; m];
    for i in 0..=steps {
        let t = a + i as f64 * h;
        let w = if i == 0 || i == steps { 1.0 } else if i % 2 == 1 { 4.0 } else { 2.0 } * h / 3.0;
        let p0 = binom_pmf(n0, 1.0 - norm_cdf(t));
        let p1 = binom_pmf(n1, alt_exceed(t));
        let dens = norm_pdf(t - focal);
        for (j0, a0) in p0.iter().enumerate() {
            for (j1, a1) in p1.iter().enumerate() {
                out[j0 + j1] += w * dens * a0 * a1;
            }
        }
    }
    out
}

fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

fn mc(reps: usize, seed: u64) -> McConfig {
    McConfig { replications: reps, seed }
}

#[test]
fn all_null_closed_form() {
    assert_eq!(rank_prob_all_null(1).unwrap().probabilities, vec![1.0]);
    assert_eq!(rank_prob_all_null(4).unwrap().probabilities, vec![0.25; 4]);
    assert!(rank_prob_all_null(100).unwrap().probabilities.iter().all(|&p| p == 0.01));
    assert!(rank_prob_all_null(0).is_err());
}

#[test]
fn all_null_estimators_are_uniform() {
    let pop = TestPopulation::new(100, 100, EffectPrior::PointMass { effect: 1.0 }).unwrap();
    for est in [rank_prob_exact_mc, rank_prob_normal_approx] {
        let r = est(&pop, 0.0, true, &mc(100_000, 8)).unwrap();
        for (p, se) in r.probabilities.iter().zip(&r.std_errors) {
            assert!((p - 0.01).abs() <= 3.0 * se + 1e-12, "{p} ± {se}");
        }
    }
}

#[test]
fn separation_limit() {
    let pop = TestPopulation::new(2, 1, EffectPrior::PointMass { effect: 8.0 }).unwrap();
    let r = rank_prob_exact_mc(&pop, 8.0, false, &mc(20_000, 1)).unwrap();
    assert!(r.prob(1) >= 0.999);
    let pop = TestPopulation::new(20, 19, EffectPrior::PointMass { effect: 12.0 }).unwrap();
    let b = rank_prob_bruteforce(&pop, 12.0, false, 20_000, 2).unwrap();
    assert!(b.prob(1) > 0.999);
}

#[test]
fn estimators_match_quadrature() {
    // (m, m0, ε, null focal, bound for the normal approximation)
    let cases = [(3, 2, 0.0, false, 0.05), (3, 2, 1.5, false, 0.05), (8, 4, 1.0, true, 0.02), (30, 20, 2.0, false, 0.01)];
    for (m, m0, eps, null_focal, approx_bound) in cases {
        let pop = TestPopulation::new(m, m0, EffectPrior::PointMass { effect: eps }).unwrap();
        let focal = if null_focal { 0.0 } else { eps };
        let (n0, n1) = if null_focal { (m0 - 1, m - m0) } else { (m0, m - m0 - 1) };
        let want = quadrature_ranks(n0, n1, focal, &|t| norm_cdf(eps - t));

        let exact = rank_prob_exact_mc(&pop, focal, null_focal, &mc(100_000, 4)).unwrap();
        assert!(max_abs_diff(&exact.probabilities, &want) <= 0.02);
        for ((g, w), se) in exact.probabilities.iter().zip(&want).zip(&exact.std_errors) {
            assert!((g - w).abs() <= 4.0 * se + 1e-9, "m={m}: {g} vs {w} (se {se})");
        }

        // A normal density is a coarse stand-in for a count over two or
        // three trials (about 0.046 off at m = 3); the gap closes with m.
        let approx = rank_prob_normal_approx(&pop, focal, null_focal, &mc(100_000, 4)).unwrap();
        let d = max_abs_diff(&approx.probabilities, &want);
        assert!(d <= approx_bound, "m={m} m0={m0} ε={eps}: {d}");
    }
}

#[test]
fn uniform_prior_matches_quadrature_and_bruteforce() {
    let (a, b) = (0.0, 1.0);
    let pop = TestPopulation::new(100, 50, EffectPrior::Uniform { a, b }).unwrap();
    // P(Y > t) for Y = ε + Z, ε ~ U(a, b): inner Simpson over ε.
    let exceed = |t: f64| {
        let n = 200;
        let h = (b - a) / n as f64;
        (0..=n)
            .map(|i| {
                let e = a + i as f64 * h;
                let w = if i == 0 || i == n { 1.0 } else if i % 2 == 1 { 4.0 } else { 2.0 };
                w * norm_cdf(e - t)
            })
            .sum::<f64>()
            * h
            / 3.0
            / (b - a)
    };
    let want = quadrature_ranks(50, 49, 1.0, &exceed);
    let exact = rank_prob_exact_mc(&pop, 1.0, false, &mc(100_000, 6)).unwrap();
    assert!(max_abs_diff(&exact.probabilities, &want) <= 0.02);
    let brute = rank_prob_bruteforce(&pop, 1.0, false, 400_000, 6).unwrap();
    assert!(max_abs_diff(&exact.probabilities, &brute.probabilities) <= 0.02);
    let approx = rank_prob_normal_approx(&pop, 1.0, false, &mc(100_000, 6)).unwrap();
    assert!(max_abs_diff(&exact.probabilities, &approx.probabilities) <= 0.01);
}

#[test]
fn bruteforce_all_null_exchangeable() {
    let pop = TestPopulation::new(10, 10, EffectPrior::PointMass { effect: 1.0 }).unwrap();
    let r = rank_prob_bruteforce(&pop, 0.0, true, 1_000_000, 9).unwrap();
    for p in &r.probabilities {
        assert!((p - 0.1).abs() <= 0.001, "{p}");
    }
}

#[test]
fn trial_count_errors() {
    let pop = TestPopulation::new(10, 10, EffectPrior::PointMass { effect: 1.0 }).unwrap();
    assert!(rank_prob_exact_mc(&pop, 1.0, false, &mc(100, 1)).is_err());
    let pop = TestPopulation::new(10, 0, EffectPrior::PointMass { effect: 1.0 }).unwrap();
    assert!(rank_prob_exact_mc(&pop, 0.0, true, &mc(100, 1)).is_err());
    let pop = TestPopulation::new(10, 5, EffectPrior::PointMass { effect: 1.0 }).unwrap();
    assert!(rank_prob_exact_mc(&pop, 1.0, true, &mc(100, 1)).is_err());
    assert!(rank_prob_exact_mc(&pop, 1.0, false, &mc(0, 1)).is_err());
}

#[test]
fn normalized_and_nonnegative() {
    for (m, m0, prior) in [
        (50, 40, EffectPrior::Exponential { rate: 0.5 }),
        (600, 500, EffectPrior::Normal { mean: 2.0, sd: 1.0 }),
        (5, 1, EffectPrior::Uniform { a: 0.5, b: 3.0 }),
    ] {
        let pop = TestPopulation::new(m, m0, prior).unwrap();
        for r in [
            rank_prob_exact_mc(&pop, 2.0, false, &mc(5_000, 2)).unwrap(),
            rank_prob_normal_approx(&pop, 0.0, true, &mc(5_000, 2)).unwrap(),
            rank_prob_bruteforce(&pop, 2.0, false, 5_000, 2).unwrap(),
        ] {
            assert_eq!(r.len(), m);
            assert!(r.probabilities.iter().all(|&p| p >= 0.0));
            assert!((r.probabilities.iter().sum::<f64>() - 1.0).abs() <= 1e-6);
        }
    }
}

#[test]
fn stochastic_ordering_in_focal_effect() {
    let pop = TestPopulation::new(100, 80, EffectPrior::PointMass { effect: 2.0 }).unwrap();
    let cums: Vec<Vec<f64>> = [0.5, 1.0, 2.0, 4.0]
        .iter()
        .map(|&e| rank_prob_exact_mc(&pop, e, false, &mc(50_000, 12)).unwrap().cumulative())
        .collect();
    for w in cums.windows(2) {
        for (lo, hi) in w[0].iter().zip(&w[1]) {
            assert!(hi + 1e-12 >= *lo);
        }
    }
}

#[test]
fn null_focal_among_strong_alternatives_ranks_low() {
    let pop = TestPopulation::new(50, 5, EffectPrior::PointMass { effect: 4.0 }).unwrap();
    let r = rank_prob_exact_mc(&pop, 0.0, true, &mc(50_000, 3)).unwrap();
    let tail: f64 = r.probabilities[40..].iter().sum();
    assert!(tail > 0.9, "{tail}");
}

/// Shifting and scaling every effect together with the noise leaves the
/// ordering, and so the rank distribution, unchanged. The transformed model
/// is simulated directly and compared with the library on the original one.
#[test]
fn linear_transformation_invariance() {
    let (m, m0, eps) = (50usize, 35usize, 1.5);
    let (shift, scale) = (0.7, 2.5);
    let pop = TestPopulation::new(m, m0, EffectPrior::PointMass { effect: eps }).unwrap();
    let lib = rank_prob_exact_mc(&pop, eps, false, &mc(100_000, 21)).unwrap();
    let n = 200_000;
    let mut counts = vec![0usize; m];
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let mut z = || -> f64 { StandardNormal.sample(&mut rng) };
    for _ in 0..n {
        let focal = shift + scale * eps + scale * z();
        let mut above = 0;
        for j in 0..m - 1 {
            let effect = if j < m0 { shift } else { shift + scale * eps };
            if effect + scale * z() > focal {
                above += 1;
            }
        }
        counts[above] += 1;
    }
    for k in 0..m {
        let p = counts[k] as f64 / n as f64;
        let se = (p * (1.0 - p) / n as f64).sqrt() + lib.std_errors[k];
        assert!((p - lib.probabilities[k]).abs() <= 3.0 * se + 1e-4, "k={}: {p} vs {}", k + 1, lib.probabilities[k]);
    }
}

#[test]
fn seed_determinism_independent_of_threads() {
    let pop = TestPopulation::new(200, 150, EffectPrior::Normal { mean: 2.0, sd: 0.5 }).unwrap();
    let run = |threads: usize| {
        let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap();
        pool.install(|| {
            (
                rank_prob_exact_mc(&pop, 2.0, false, &mc(30_000, 5)).unwrap(),
                rank_prob_bruteforce(&pop, 2.0, false, 30_000, 5).unwrap(),
            )
        })
    };
    let (a, b) = (run(1), run(3));
    assert_eq!(a.0.probabilities, b.0.probabilities);
    assert_eq!(a.1.probabilities, b.1.probabilities);
    let c = rank_prob_exact_mc(&pop, 2.0, false, &mc(30_000, 6)).unwrap();
    assert_ne!(a.0.probabilities, c.probabilities);
}

#[test]
fn smoothing_keeps_a_distribution() {
    let pop = TestPopulation::new(100, 90, EffectPrior::PointMass { effect: 2.0 }).unwrap();
    let r = rank_prob_exact_mc(&pop, 2.0, false, &mc(5_000, 1)).unwrap();
    let s = r.smoothed(8.0).unwrap();
    assert!(s.probabilities.iter().all(|&p| p >= 0.0));
    assert!((s.probabilities.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    assert!(r.smoothed(0.5).is_err());
}
