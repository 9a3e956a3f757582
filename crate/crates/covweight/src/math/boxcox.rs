//! Box-Cox power transformation with a profile-likelihood grid search.

use crate::error::{Error, Result};

/// (y^λ − 1)/λ, or ln y at λ = 0.
pub fn box_cox_transform(y: f64, lambda: f64) -> f64 {
    let ly = y.ln();
    if lambda.abs() < 1e-12 {
        ly
    } else {
        (lambda * ly).exp_m1() / lambda
    }
}

/// Profile Gaussian log-likelihood of λ, up to a constant.
pub fn box_cox_loglik(y: &[f64], lambda: f64) -> f64 {
    let n = y.len() as f64;
    let t: Vec<f64> = y.iter().map(|&v| box_cox_transform(v, lambda)).collect();
    let mu = t.iter().sum::<f64>() / n;
    let s2 = t.iter().map(|v| (v - mu) * (v - mu)).sum::<f64>() / n;
    let sum_log: f64 = y.iter().map(|v| v.ln()).sum();
    -0.5 * n * s2.ln() + (lambda - 1.0) * sum_log
}

/// Transform `y` with the λ maximizing the profile likelihood over
/// −2, −1.99, …, 2. Returns the transformed values and λ̂.
pub fn box_cox(y: &[f64]) -> Result<(Vec<f64>, f64)> {
    if y.is_empty() {
        return Err(Error::Argument("Box-Cox needs data".into()));
    }
    if let Some(bad) = y.iter().find(|v| !(**v > 0.0) || !v.is_finite()) {
        return Err(Error::Domain(format!("Box-Cox needs positive finite data, found {bad}")));
    }
    let first = y[0];
    if y.iter().all(|&v| v == first) {
        return Err(Error::Degenerate("Box-Cox input has zero variance".into()));
    }
    let mut best = (f64::NEG_INFINITY, 0.0);
    for i in 0..=400 {
        let lambda = (i as f64 - 200.0) / 100.0;
        let ll = box_cox_loglik(y, lambda);
        if ll > best.0 {
            best = (ll, lambda);
        }
    }
    let lambda = best.1;
    Ok((y.iter().map(|&v| box_cox_transform(v, lambda)).collect(), lambda))
}
