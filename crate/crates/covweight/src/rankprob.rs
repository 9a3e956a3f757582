//! Probability that a test lands at covariate rank k, given its effect.
//!
//! Rank 1 is the largest covariate statistic. For a focal statistic t the
//! number of other tests above it is X + Y with X ~ Bin(n0, Φ̄(t)) over the
//! nulls and Y ~ Bin(n1, P(Y > t)) over the alternatives, so
//! P(rank = k | t) = P(X + Y = k − 1). The estimators average this over
//! draws of t from the focal test's own sampling density.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use libm::lgamma as ln_gamma;

use crate::effects::{alt_exceedance_unchecked, EffectPrior, TestPopulation};
use crate::error::{arg, Result};
use crate::math::normal::{norm_cdf, norm_sf, quantile_unchecked};
use crate::math::spline::fit_smoothing_spline;

/// Monte Carlo settings for the importance-sampled estimators.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct McConfig {
    pub replications: usize,
    pub seed: u64,
}

impl Default for McConfig {
    fn default() -> Self {
        Self { replications: 100_000, seed: 20_190_101 }
    }
}

/// P(rank = k | effect) for k = 1..m, stored at index k − 1.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankDistribution {
    pub probabilities: Vec<f64>,
    /// Monte Carlo standard error per rank (zero for closed forms).
    pub std_errors: Vec<f64>,
    pub focal_effect: f64,
    pub is_null_focal: bool,
    pub population: Option<TestPopulation>,
}

impl RankDistribution {
    pub fn len(&self) -> usize {
        self.probabilities.len()
    }

    pub fn is_empty(&self) -> bool {
        self.probabilities.is_empty()
    }

    /// Probability of rank `k` (1-based).
    pub fn prob(&self, k: usize) -> f64 {
        self.probabilities[k - 1]
    }

    /// P(rank ≤ k) for every k.
    pub fn cumulative(&self) -> Vec<f64> {
        let mut acc = 0.0;
        self.probabilities
            .iter()
            .map(|p| {
                acc += p;
                acc
            })
            .collect()
    }

    /// Spline-smoothed copy over rank index, floored at zero and renormalized.
    pub fn smoothed(&self, df: f64) -> Result<RankDistribution> {
        let x: Vec<f64> = (1..=self.len()).map(|k| k as f64).collect();
        let fit = fit_smoothing_spline(&x, &self.probabilities, df)?;
        let mut out = self.clone();
        out.probabilities = x.iter().map(|&k| fit.eval(k).max(0.0)).collect();
        normalize(&mut out.probabilities);
        Ok(out)
    }
}

fn normalize(p: &mut [f64]) {
    let s: f64 = p.iter().sum();
    if s > 0.0 {
        p.iter_mut().for_each(|v| *v /= s);
    }
}

/// How P(X + Y = k − 1 | t) is evaluated for each draw.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Convolution {
    /// Exact sum over the two binomial supports.
    Exact,
    /// Normal density with continuity correction.
    Normal,
}

/// Populations up to this size use the exact convolution inside
/// [`rank_prob_exact_mc`]; larger ones use the normal approximation.
pub const EXACT_CONVOLUTION_MAX_M: usize = 500;

const CHUNK: usize = 512;

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Standard normal draw determined by (seed, stream, index) alone.
pub fn counter_normal(seed: u64, stream: u64, index: u64) -> f64 {
    let h = splitmix(splitmix(seed ^ splitmix(stream)) ^ index);
    let u = ((h >> 11) as f64 + 0.5) / (1u64 << 53) as f64;
    quantile_unchecked(u)
}

/// Seed for chunk `i` of a stream, for generators that need a full RNG.
pub fn chunk_seed(seed: u64, stream: u64, chunk: u64) -> u64 {
    splitmix(splitmix(seed ^ splitmix(stream)).wrapping_add(chunk))
}

fn trial_counts(pop: &TestPopulation, is_null_focal: bool) -> Result<(usize, usize)> {
    pop.validate()?;
    if is_null_focal {
        if pop.m0 == 0 {
            return arg("a null focal test needs m0 ≥ 1");
        }
        Ok((pop.m0 - 1, pop.m1))
    } else {
        if pop.m1 == 0 {
            return arg("an alternative focal test needs m1 ≥ 1");
        }
        Ok((pop.m0, pop.m1 - 1))
    }
}

struct LogFactorials(Vec<f64>);

impl LogFactorials {
    fn new(n: usize) -> Self {
        Self((0..=n).map(|k| ln_gamma(k as f64 + 1.0)).collect())
    }

    fn ln_choose(&self, n: usize, k: usize) -> f64 {
        self.0[n] - self.0[k] - self.0[n - k]
    }
}

// Binomial pmf on a window that carries all but a negligible tail.
// `p` and `q = 1 − p` are passed separately to keep tail precision.
fn binomial_window(lf: &LogFactorials, n: usize, p: f64, q: f64) -> (usize, Vec<f64>) {
    if n == 0 || p <= 0.0 {
        return (0, vec![1.0]);
    }
    if q <= 0.0 {
        return (n, vec![1.0]);
    }
    let mean = n as f64 * p;
    let half = 12.0 * (mean * q).sqrt() + 12.0;
    let lo = (mean - half).floor().max(0.0) as usize;
    let hi = ((mean + half).ceil() as usize).min(n);
    let (lp, lq) = (p.ln(), q.ln());
    let pmf = (lo..=hi)
        .map(|k| (lf.ln_choose(n, k) + k as f64 * lp + (n - k) as f64 * lq).exp())
        .collect();
    (lo, pmf)
}

// One draw's contribution: (first rank index 0-based, probabilities).
fn draw_contribution(
    m: usize,
    n0: usize,
    n1: usize,
    p0: (f64, f64),
    p1: (f64, f64),
    conv: Convolution,
    lf: Option<&LogFactorials>,
    out: &mut Vec<f64>,
) -> usize {
    out.clear();
    match conv {
        Convolution::Exact => {
            let lf = lf.expect("log-factorial table");
            let (a0, x) = binomial_window(lf, n0, p0.0, p0.1);
            let (a1, y) = binomial_window(lf, n1, p1.0, p1.1);
            out.resize(x.len() + y.len() - 1, 0.0);
            for (i, xi) in x.iter().enumerate() {
                if *xi == 0.0 {
                    continue;
                }
                for (j, yj) in y.iter().enumerate() {
                    out[i + j] += xi * yj;
                }
            }
            a0 + a1
        }
        Convolution::Normal => {
            let mu = n0 as f64 * p0.0 + n1 as f64 * p1.0 + 1.0;
            let var = n0 as f64 * p0.0 * p0.1 + n1 as f64 * p1.0 * p1.1;
            if !(var > 1e-300) {
                let k = mu.round().clamp(1.0, m as f64) as usize;
                out.push(1.0);
                return k - 1;
            }
            let sd = var.sqrt();
            let lo = ((mu - 9.0 * sd).floor().max(1.0) as usize).min(m);
            let hi = ((mu + 9.0 * sd).ceil() as usize).clamp(lo, m);
            // Mass of N(mu, sd²) in [edge(k) − ½, edge(k) + ½], with the
            // outermost ranks absorbing the tails beyond 1 and m.
            let upper_mass = |b: f64| -> f64 {
                let z = (b - mu) / sd;
                if z > 0.0 {
                    norm_sf(z)
                } else {
                    1.0 - norm_cdf(z)
                }
            };
            let lower_mass = |b: f64| -> f64 {
                let z = (b - mu) / sd;
                if z < 0.0 {
                    norm_cdf(z)
                } else {
                    1.0 - norm_sf(z)
                }
            };
            for k in lo..=hi {
                let a = k as f64 - 0.5;
                let b = k as f64 + 0.5;
                let v = if k == 1 && k == m {
                    1.0
                } else if k == 1 {
                    lower_mass(b)
                } else if k == m {
                    upper_mass(a)
                } else if a > mu {
                    upper_mass(a) - upper_mass(b)
                } else {
                    lower_mass(b) - lower_mass(a)
                };
                out.push(v.max(0.0));
            }
            lo - 1
        }
    }
}

/// Shared engine. `t_of(i)` gives the focal covariate statistic for draw i.
pub(crate) fn estimate<T>(
    m: usize,
    n0: usize,
    n1: usize,
    alt: &EffectPrior,
    reps: usize,
    conv: Convolution,
    t_of: T,
) -> (Vec<f64>, Vec<f64>)
where
    T: Fn(u64) -> f64 + Sync,
{
    let lf = match conv {
        Convolution::Exact => Some(LogFactorials::new(m)),
        Convolution::Normal => None,
    };
    let chunks = reps.div_ceil(CHUNK);
    let partials: Vec<(Vec<f64>, Vec<f64>)> = (0..chunks)
        .into_par_iter()
        .map(|c| {
            let mut s = vec![0.0; m];
            let mut s2 = vec![0.0; m];
            let mut buf = Vec::new();
            let end = ((c + 1) * CHUNK).min(reps);
            for i in c * CHUNK..end {
                let t = t_of(i as u64);
                let p0 = (norm_sf(t), norm_cdf(t));
                let a = alt_exceedance_unchecked(alt, t);
                let p1 = (a, 1.0 - a);
                let start = draw_contribution(m, n0, n1, p0, p1, conv, lf.as_ref(), &mut buf);
                for (j, v) in buf.iter().enumerate() {
                    let k = start + j;
                    if k < m {
                        s[k] += v;
                        s2[k] += v * v;
                    }
                }
            }
            (s, s2)
        })
        .collect();
    let mut s = vec![0.0; m];
    let mut s2 = vec![0.0; m];
    for (a, b) in &partials {
        for k in 0..m {
            s[k] += a[k];
            s2[k] += b[k];
        }
    }
    let n = reps as f64;
    let mean: Vec<f64> = s.iter().map(|v| v / n).collect();
    let se = mean
        .iter()
        .zip(&s2)
        .map(|(mu, q)| {
            if reps < 2 {
                0.0
            } else {
                ((q / n - mu * mu).max(0.0) / (n - 1.0)).sqrt()
            }
        })
        .collect();
    (mean, se)
}

fn run(
    pop: &TestPopulation,
    focal_effect: f64,
    is_null_focal: bool,
    mc: &McConfig,
    conv: Convolution,
) -> Result<RankDistribution> {
    let (n0, n1) = trial_counts(pop, is_null_focal)?;
    if mc.replications == 0 {
        return arg("replications must be positive");
    }
    if is_null_focal && focal_effect != 0.0 {
        return arg("a null focal test has effect 0");
    }
    if !focal_effect.is_finite() {
        return arg("focal effect must be finite");
    }
    let seed = mc.seed;
    let (mut probabilities, std_errors) = estimate(pop.m, n0, n1, &pop.alt_prior, mc.replications, conv, |i| {
        focal_effect + counter_normal(seed, 0, i)
    });
    normalize(&mut probabilities);
    Ok(RankDistribution {
        probabilities,
        std_errors,
        focal_effect,
        is_null_focal,
        population: Some(*pop),
    })
}

/// Normalized rank probabilities for an arbitrary focal-statistic sampler.
pub(crate) fn estimate_with<T>(pop: &TestPopulation, is_null_focal: bool, reps: usize, conv: Convolution, t_of: T) -> Result<Vec<f64>>
where
    T: Fn(u64) -> f64 + Sync,
{
    let (n0, n1) = trial_counts(pop, is_null_focal)?;
    let (mut p, _) = estimate(pop.m, n0, n1, &pop.alt_prior, reps, conv, t_of);
    normalize(&mut p);
    Ok(p)
}

/// Importance-sampled rank probabilities. The convolution is exact for
/// m ≤ [`EXACT_CONVOLUTION_MAX_M`] and normal-approximated above.
pub fn rank_prob_exact_mc(
    pop: &TestPopulation,
    focal_effect: f64,
    is_null_focal: bool,
    mc: &McConfig,
) -> Result<RankDistribution> {
    let conv = if pop.m <= EXACT_CONVOLUTION_MAX_M {
        Convolution::Exact
    } else {
        Convolution::Normal
    };
    run(pop, focal_effect, is_null_focal, mc, conv)
}

/// Importance-sampled rank probabilities using the normal approximation
/// of the two-binomial convolution.
pub fn rank_prob_normal_approx(
    pop: &TestPopulation,
    focal_effect: f64,
    is_null_focal: bool,
    mc: &McConfig,
) -> Result<RankDistribution> {
    run(pop, focal_effect, is_null_focal, mc, Convolution::Normal)
}

/// Uniform ranks, the exact answer when every test is null.
pub fn rank_prob_all_null(m: usize) -> Result<RankDistribution> {
    if m == 0 {
        return arg("m must be positive");
    }
    Ok(RankDistribution {
        probabilities: vec![1.0 / m as f64; m],
        std_errors: vec![0.0; m],
        focal_effect: 0.0,
        is_null_focal: true,
        population: None,
    })
}

/// Relative rank frequencies of the focal test over `samples` simulated
/// populations. Slow; serves as the reference for the estimators above.
pub fn rank_prob_bruteforce(
    pop: &TestPopulation,
    focal_effect: f64,
    is_null_focal: bool,
    samples: usize,
    seed: u64,
) -> Result<RankDistribution> {
    let (n0, n1) = trial_counts(pop, is_null_focal)?;
    if samples == 0 {
        return arg("samples must be positive");
    }
    let m = pop.m;
    let prior = pop.alt_prior;
    const BLOCK: usize = 4096;
    let blocks = samples.div_ceil(BLOCK);
    let counts: Vec<Vec<u64>> = (0..blocks)
        .into_par_iter()
        .map(|b| {
            let mut rng = ChaCha8Rng::seed_from_u64(chunk_seed(seed, 1, b as u64));
            let mut counts = vec![0u64; m];
            let end = ((b + 1) * BLOCK).min(samples);
            for _ in b * BLOCK..end {
                let t = focal_effect + rng.sample::<f64, _>(StandardNormal);
                let mut above = 0usize;
                for _ in 0..n0 {
                    let x: f64 = rng.sample(StandardNormal);
                    above += (x > t) as usize;
                }
                for _ in 0..n1 {
                    let e = sample_effect(&prior, &mut rng);
                    let y = e + rng.sample::<f64, _>(StandardNormal);
                    above += (y > t) as usize;
                }
                counts[above] += 1;
            }
            counts
        })
        .collect();
    let mut total = vec![0u64; m];
    for c in &counts {
        for (t, v) in total.iter_mut().zip(c) {
            *t += v;
        }
    }
    let n = samples as f64;
    let probabilities: Vec<f64> = total.iter().map(|&c| c as f64 / n).collect();
    let std_errors = probabilities.iter().map(|p| (p * (1.0 - p) / n).sqrt()).collect();
    Ok(RankDistribution {
        probabilities,
        std_errors,
        focal_effect,
        is_null_focal,
        population: Some(*pop),
    })
}

/// One draw from an effect prior.
pub fn sample_effect<R: Rng + ?Sized>(prior: &EffectPrior, rng: &mut R) -> f64 {
    match *prior {
        EffectPrior::PointMass { effect } => effect,
        EffectPrior::Uniform { a, b } => a + (b - a) * rng.random::<f64>(),
        EffectPrior::Exponential { rate } => -(1.0 - rng.random::<f64>()).ln() / rate,
        EffectPrior::Normal { mean, sd } => mean + sd * rng.sample::<f64, _>(StandardNormal),
    }
}
