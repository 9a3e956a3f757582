//! Effect-size priors and exceedance probabilities of unit-variance statistics.

use serde::{Deserialize, Serialize};

use crate::error::{arg, Result};
use crate::math::normal::{norm_cdf, norm_pdf, norm_sf};
use crate::math::quadrature::gauss_legendre;

/// Distribution of alternative effect sizes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum EffectPrior {
    PointMass { effect: f64 },
    Uniform { a: f64, b: f64 },
    Exponential { rate: f64 },
    Normal { mean: f64, sd: f64 },
}

impl EffectPrior {
    pub fn validate(&self) -> Result<()> {
        match *self {
            EffectPrior::PointMass { effect } if !effect.is_finite() => arg("point-mass effect must be finite"),
            EffectPrior::Uniform { a, b } if !(a < b) || !a.is_finite() || !b.is_finite() => {
                arg(format!("uniform prior needs a < b, got ({a}, {b})"))
            }
            EffectPrior::Exponential { rate } if !(rate > 0.0) || !rate.is_finite() => {
                arg(format!("exponential rate must be positive, got {rate}"))
            }
            EffectPrior::Normal { mean, sd } if !(sd > 0.0) || !mean.is_finite() || !sd.is_finite() => {
                arg(format!("normal prior needs sd > 0, got sd = {sd}"))
            }
            _ => Ok(()),
        }
    }

    pub fn mean(&self) -> f64 {
        match *self {
            EffectPrior::PointMass { effect } => effect,
            EffectPrior::Uniform { a, b } => 0.5 * (a + b),
            EffectPrior::Exponential { rate } => 1.0 / rate,
            EffectPrior::Normal { mean, .. } => mean,
        }
    }

    /// Prior density (zero for the point mass).
    pub fn density(&self, e: f64) -> f64 {
        match *self {
            EffectPrior::PointMass { .. } => 0.0,
            EffectPrior::Uniform { a, b } => {
                if e >= a && e <= b {
                    1.0 / (b - a)
                } else {
                    0.0
                }
            }
            EffectPrior::Exponential { rate } => {
                if e >= 0.0 {
                    rate * (-rate * e).exp()
                } else {
                    0.0
                }
            }
            EffectPrior::Normal { mean, sd } => norm_pdf((e - mean) / sd) / sd,
        }
    }

    /// Discrete approximation by `nodes` weighted points (weights sum to 1).
    /// Unbounded priors are truncated far in the tails.
    pub fn discretize(&self, nodes: usize) -> Vec<(f64, f64)> {
        self.discretize_above(nodes, f64::NEG_INFINITY)
    }

    /// As [`discretize`](Self::discretize), restricted to effects above
    /// `lower` and renormalized. Empty when the prior puts no mass there.
    pub fn discretize_above(&self, nodes: usize, lower: f64) -> Vec<(f64, f64)> {
        let nodes = nodes.max(1);
        let (lo, hi) = match *self {
            EffectPrior::PointMass { effect } => {
                return if effect > lower { vec![(effect, 1.0)] } else { Vec::new() };
            }
            EffectPrior::Uniform { a, b } => (a, b),
            EffectPrior::Exponential { rate } => (0.0, 40.0 / rate),
            EffectPrior::Normal { mean, sd } => (mean - 9.0 * sd, mean + 9.0 * sd),
        };
        let lo = lo.max(lower);
        if !(lo < hi) {
            return Vec::new();
        }
        let pts: Vec<(f64, f64)> = match *self {
            EffectPrior::Uniform { .. } => gauss_legendre(nodes, lo, hi)
                .into_iter()
                .map(|(x, w)| (x, w / (hi - lo)))
                .collect(),
            // A few panels keep the peaked densities well resolved.
            _ => {
                let panels = 8;
                let per = nodes.div_ceil(panels).max(2);
                let width = (hi - lo) / panels as f64;
                (0..panels)
                    .flat_map(|p| {
                        let a = lo + p as f64 * width;
                        gauss_legendre(per, a, a + width)
                    })
                    .map(|(x, w)| (x, w * self.density(x)))
                    .collect()
            }
        };
        let total: f64 = pts.iter().map(|p| p.1).sum();
        if !(total > 0.0) {
            return Vec::new();
        }
        pts.into_iter().map(|(x, w)| (x, w / total)).collect()
    }
}

/// Population of m tests split into m0 nulls and m1 alternatives.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TestPopulation {
    pub m: usize,
    pub m0: usize,
    pub m1: usize,
    pub alt_prior: EffectPrior,
}

impl TestPopulation {
    pub fn new(m: usize, m0: usize, alt_prior: EffectPrior) -> Result<Self> {
        if m == 0 {
            return arg("population needs m ≥ 1");
        }
        if m0 > m {
            return arg(format!("m0 = {m0} exceeds m = {m}"));
        }
        alt_prior.validate()?;
        Ok(Self { m, m0, m1: m - m0, alt_prior })
    }

    pub fn validate(&self) -> Result<()> {
        if self.m == 0 || self.m0 + self.m1 != self.m {
            return arg("population needs m ≥ 1 and m0 + m1 = m");
        }
        self.alt_prior.validate()
    }
}

/// P(X > t) for a null statistic X ~ N(0, 1).
pub fn null_exceedance(t: f64) -> f64 {
    norm_sf(t)
}

/// P(Y > t) for Y ~ N(ε, 1) with ε drawn from `prior`.
pub fn alt_exceedance(prior: &EffectPrior, t: f64) -> Result<f64> {
    prior.validate()?;
    Ok(alt_exceedance_unchecked(prior, t))
}

pub(crate) fn alt_exceedance_unchecked(prior: &EffectPrior, t: f64) -> f64 {
    let v = match *prior {
        EffectPrior::PointMass { effect } => norm_sf(t - effect),
        EffectPrior::Uniform { a, b } => {
            // ∫ Φ(ε − t) dε / (b − a) via the antiderivative uΦ(u) + φ(u).
            let g = |u: f64| {
                if u < -38.0 {
                    0.0
                } else {
                    u * norm_cdf(u) + norm_pdf(u)
                }
            };
            (g(b - t) - g(a - t)) / (b - a)
        }
        EffectPrior::Exponential { rate } => {
            let tail = if t - rate < -38.0 {
                0.0
            } else {
                (-rate * t + 0.5 * rate * rate + norm_cdf(t - rate).ln()).exp()
            };
            norm_sf(t) + tail
        }
        EffectPrior::Normal { mean, sd } => norm_sf((t - mean) / (sd * sd + 1.0).sqrt()),
    };
    v.clamp(0.0, 1.0)
}

/// Mean of the prior.
pub fn prior_mean(prior: &EffectPrior) -> f64 {
    prior.mean()
}
