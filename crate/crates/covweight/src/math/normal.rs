//! Standard normal distribution functions.

use std::f64::consts::{FRAC_1_SQRT_2, PI};
use std::sync::atomic::{AtomicBool, Ordering};

use libm::erfc;

use crate::error::{Error, Result};

const FRAC_1_SQRT_2PI: f64 = 0.398_942_280_401_432_7;

static CORRUPT_CDF: AtomicBool = AtomicBool::new(false);

/// Test hook: when enabled, `norm_cdf` and `norm_sf` return shifted values.
/// Used to check that the validation suite notices a broken kernel.
#[doc(hidden)]
pub fn set_corrupted_cdf(on: bool) {
    CORRUPT_CDF.store(on, Ordering::SeqCst);
}

#[inline]
fn shift(x: f64) -> f64 {
    if CORRUPT_CDF.load(Ordering::Relaxed) {
        x + 0.25
    } else {
        x
    }
}

/// Φ(x).
#[inline]
pub fn norm_cdf(x: f64) -> f64 {
    if x.is_nan() {
        return f64::NAN;
    }
    0.5 * erfc(-shift(x) * FRAC_1_SQRT_2)
}

/// Upper tail 1 − Φ(x), accurate far into the right tail.
#[inline]
pub fn norm_sf(x: f64) -> f64 {
    if x.is_nan() {
        return f64::NAN;
    }
    0.5 * erfc(shift(x) * FRAC_1_SQRT_2)
}

/// φ(x).
#[inline]
pub fn norm_pdf(x: f64) -> f64 {
    FRAC_1_SQRT_2PI * (-0.5 * x * x).exp()
}

/// ln φ(x).
#[inline]
pub fn norm_log_pdf(x: f64) -> f64 {
    -0.5 * x * x - 0.5 * (2.0 * PI).ln()
}

/// Φ⁻¹(p) for p in (0, 1).
pub fn norm_quantile(p: f64) -> Result<f64> {
    if !(p > 0.0 && p < 1.0) {
        return Err(Error::Domain(format!("quantile needs p in (0,1), got {p}")));
    }
    Ok(quantile_unchecked(p))
}

/// Φ̄⁻¹(q) = Φ⁻¹(1 − q), computed without forming 1 − q.
pub fn norm_isf(q: f64) -> Result<f64> {
    norm_quantile(q).map(|x| -x)
}

// Acklam's rational approximation followed by two Halley steps.
pub(crate) fn quantile_unchecked(p: f64) -> f64 {
    const A: [f64; 6] = [
        -3.969_683_028_665_376e1,
        2.209_460_984_245_205e2,
        -2.759_285_104_469_687e2,
        1.383_577_518_672_69e2,
        -3.066_479_806_614_716e1,
        2.506_628_277_459_239,
    ];
    const B: [f64; 5] = [
        -5.447_609_879_822_406e1,
        1.615_858_368_580_409e2,
        -1.556_989_798_598_866e2,
        6.680_131_188_771_972e1,
        -1.328_068_155_288_572e1,
    ];
    const C: [f64; 6] = [
        -7.784_894_002_430_293e-3,
        -3.223_964_580_411_365e-1,
        -2.400_758_277_161_838,
        -2.549_732_539_343_734,
        4.374_664_141_464_968,
        2.938_163_982_698_783,
    ];
    const D: [f64; 4] = [
        7.784_695_709_041_462e-3,
        3.224_671_290_700_398e-1,
        2.445_134_137_142_996,
        3.754_408_661_907_416,
    ];
    const P_LOW: f64 = 0.024_25;

    let tail = |q: f64| {
        let r = (-2.0 * q.ln()).sqrt();
        (((((C[0] * r + C[1]) * r + C[2]) * r + C[3]) * r + C[4]) * r + C[5])
            / ((((D[0] * r + D[1]) * r + D[2]) * r + D[3]) * r + 1.0)
    };
    let mut x = if p < P_LOW {
        tail(p)
    } else if p <= 1.0 - P_LOW {
        let q = p - 0.5;
        let r = q * q;
        (((((A[0] * r + A[1]) * r + A[2]) * r + A[3]) * r + A[4]) * r + A[5]) * q
            / (((((B[0] * r + B[1]) * r + B[2]) * r + B[3]) * r + B[4]) * r + 1.0)
    } else {
        -tail(1.0 - p)
    };

    // Refine against whichever tail keeps relative precision.
    for _ in 0..2 {
        let e = if x < 0.0 {
            norm_cdf(x) - p
        } else {
            (1.0 - p) - norm_sf(x)
        };
        let dens = norm_pdf(x);
        if dens == 0.0 || !e.is_finite() {
            break;
        }
        let u = e / dens;
        x -= u / (1.0 + 0.5 * x * u);
    }
    x
}
