//! Cubic smoothing spline with the penalty chosen by effective degrees of freedom.
//!
//! Uses the Reinsch form: with h the knot spacings, Q the n×(n−2) second
//! difference matrix and R the (n−2)×(n−2) tridiagonal Gram matrix,
//! the interior second derivatives γ solve (R + λQᵀQ)γ = Qᵀy and the fitted
//! values are g = y − λQγ.

use crate::error::{arg, Result};

/// A fitted natural cubic spline. Segment `i` covers `[knots[i], knots[i+1]]`
/// and evaluates `c[0] + c[1]·s + c[2]·s² + c[3]·s³` with `s = x − knots[i]`.
#[derive(Debug, Clone, PartialEq)]
pub struct SplineFit {
    pub knots: Vec<f64>,
    pub coefficients: Vec<[f64; 4]>,
    /// Roughness penalty λ; zero for interpolation, infinite for the straight line.
    pub penalty: f64,
    /// Trace of the smoother matrix at `penalty`.
    pub effective_df: f64,
}

impl SplineFit {
    fn segment(&self, x: f64) -> usize {
        let n = self.knots.len();
        match self.knots.partition_point(|&k| k <= x) {
            0 => 0,
            i if i >= n => n - 2,
            i => i - 1,
        }
    }

    fn right_slope(&self) -> f64 {
        let i = self.coefficients.len() - 1;
        let h = self.knots[i + 1] - self.knots[i];
        let c = &self.coefficients[i];
        c[1] + 2.0 * c[2] * h + 3.0 * c[3] * h * h
    }

    fn right_value(&self) -> f64 {
        let i = self.coefficients.len() - 1;
        let h = self.knots[i + 1] - self.knots[i];
        let c = &self.coefficients[i];
        c[0] + h * (c[1] + h * (c[2] + h * c[3]))
    }

    /// Value at `x`; linear beyond the boundary knots.
    pub fn eval(&self, x: f64) -> f64 {
        let n = self.knots.len();
        if x < self.knots[0] {
            let c = &self.coefficients[0];
            return c[0] + c[1] * (x - self.knots[0]);
        }
        if x > self.knots[n - 1] {
            return self.right_value() + self.right_slope() * (x - self.knots[n - 1]);
        }
        let i = self.segment(x);
        let s = x - self.knots[i];
        let c = &self.coefficients[i];
        c[0] + s * (c[1] + s * (c[2] + s * c[3]))
    }

    /// First derivative at `x`.
    pub fn derivative(&self, x: f64) -> f64 {
        let n = self.knots.len();
        if x < self.knots[0] {
            return self.coefficients[0][1];
        }
        if x > self.knots[n - 1] {
            return self.right_slope();
        }
        let i = self.segment(x);
        let s = x - self.knots[i];
        let c = &self.coefficients[i];
        c[1] + s * (2.0 * c[2] + 3.0 * s * c[3])
    }

    /// Second derivative at `x` (zero outside the knots).
    pub fn second_derivative(&self, x: f64) -> f64 {
        let n = self.knots.len();
        if x < self.knots[0] || x > self.knots[n - 1] {
            return 0.0;
        }
        let i = self.segment(x);
        let s = x - self.knots[i];
        let c = &self.coefficients[i];
        2.0 * c[2] + 6.0 * c[3] * s
    }

    /// Fitted values at the knots.
    pub fn fitted(&self) -> Vec<f64> {
        self.knots.iter().map(|&x| self.eval(x)).collect()
    }

    /// ∫ g''(x)² dx over the knot range.
    pub fn roughness(&self) -> f64 {
        self.coefficients
            .iter()
            .zip(self.knots.windows(2))
            .map(|(c, k)| {
                let h = k[1] - k[0];
                let (a, b) = (2.0 * c[2], 6.0 * c[3]);
                a * a * h + a * b * h * h + b * b * h * h * h / 3.0
            })
            .sum()
    }
}

// Symmetric band matrix with bandwidth 2 stored by diagonals.
#[derive(Clone)]
struct Band5 {
    d0: Vec<f64>,
    d1: Vec<f64>,
    d2: Vec<f64>,
}

struct System {
    h: Vec<f64>,
    r: Band5,
    qtq: Band5,
    qty: Vec<f64>,
}

impl System {
    fn new(x: &[f64], y: &[f64]) -> Self {
        let n = x.len();
        let k = n - 2;
        let h: Vec<f64> = x.windows(2).map(|w| w[1] - w[0]).collect();
        // Column j of Q (j = 0..k) has entries at rows j, j+1, j+2.
        let q: Vec<[f64; 3]> = (0..k)
            .map(|j| [1.0 / h[j], -1.0 / h[j] - 1.0 / h[j + 1], 1.0 / h[j + 1]])
            .collect();
        let mut r = Band5 { d0: vec![0.0; k], d1: vec![0.0; k], d2: vec![0.0; k] };
        for j in 0..k {
            r.d0[j] = (h[j] + h[j + 1]) / 3.0;
            if j + 1 < k {
                r.d1[j] = h[j + 1] / 6.0;
            }
        }
        let mut qtq = Band5 { d0: vec![0.0; k], d1: vec![0.0; k], d2: vec![0.0; k] };
        for j in 0..k {
            qtq.d0[j] = q[j].iter().map(|v| v * v).sum();
            if j + 1 < k {
                qtq.d1[j] = q[j][1] * q[j + 1][0] + q[j][2] * q[j + 1][1];
            }
            if j + 2 < k {
                qtq.d2[j] = q[j][2] * q[j + 2][0];
            }
        }
        let qty = (0..k)
            .map(|j| q[j][0] * y[j] + q[j][1] * y[j + 1] + q[j][2] * y[j + 2])
            .collect();
        Self { h, r, qtq, qty }
    }

    fn matrix(&self, lambda: f64) -> Band5 {
        let k = self.qty.len();
        let mut a = self.r.clone();
        for j in 0..k {
            a.d0[j] += lambda * self.qtq.d0[j];
            a.d1[j] += lambda * self.qtq.d1[j];
            a.d2[j] += lambda * self.qtq.d2[j];
        }
        a
    }
}

// LDLᵀ with unit lower L of bandwidth 2.
struct Ldl {
    d: Vec<f64>,
    l1: Vec<f64>,
    l2: Vec<f64>,
}

fn ldl(a: &Band5) -> Ldl {
    let k = a.d0.len();
    let mut d = vec![0.0; k];
    let mut l1 = vec![0.0; k];
    let mut l2 = vec![0.0; k];
    for i in 0..k {
        let mut di = a.d0[i];
        if i >= 1 {
            di -= l1[i - 1] * l1[i - 1] * d[i - 1];
        }
        if i >= 2 {
            di -= l2[i - 2] * l2[i - 2] * d[i - 2];
        }
        d[i] = di;
        if i + 1 < k {
            let mut v = a.d1[i];
            if i >= 1 {
                v -= l1[i - 1] * l2[i - 1] * d[i - 1];
            }
            l1[i] = v / di;
        }
        if i + 2 < k {
            l2[i] = a.d2[i] / di;
        }
    }
    Ldl { d, l1, l2 }
}

impl Ldl {
    fn solve(&self, b: &[f64]) -> Vec<f64> {
        let k = b.len();
        let mut z = b.to_vec();
        for i in 0..k {
            if i >= 1 {
                z[i] -= self.l1[i - 1] * z[i - 1];
            }
            if i >= 2 {
                z[i] -= self.l2[i - 2] * z[i - 2];
            }
        }
        for i in 0..k {
            z[i] /= self.d[i];
        }
        for i in (0..k).rev() {
            if i + 1 < k {
                z[i] -= self.l1[i] * z[i + 1];
            }
            if i + 2 < k {
                z[i] -= self.l2[i] * z[i + 2];
            }
        }
        z
    }

    // Central band of the inverse (Hutchinson and de Hoog recursion).
    fn inverse_band(&self) -> Band5 {
        let k = self.d.len();
        let mut s = Band5 { d0: vec![0.0; k], d1: vec![0.0; k], d2: vec![0.0; k] };
        for i in (0..k).rev() {
            let a1 = if i + 1 < k { self.l1[i] } else { 0.0 };
            let a2 = if i + 2 < k { self.l2[i] } else { 0.0 };
            let s11 = if i + 1 < k { s.d0[i + 1] } else { 0.0 };
            let s12 = if i + 1 < k { s.d1[i + 1] } else { 0.0 };
            let s22 = if i + 2 < k { s.d0[i + 2] } else { 0.0 };
            if i + 2 < k {
                s.d2[i] = -a1 * s12 - a2 * s22;
            }
            if i + 1 < k {
                s.d1[i] = -a1 * s11 - a2 * s12;
            }
            s.d0[i] = 1.0 / self.d[i] - a1 * s.d1[i] - a2 * s.d2[i];
        }
        s
    }
}

fn trace_df(sys: &System, lambda: f64) -> f64 {
    let n = sys.qty.len() + 2;
    let inv = ldl(&sys.matrix(lambda)).inverse_band();
    let q = &sys.qtq;
    let mut tr = 0.0;
    for j in 0..inv.d0.len() {
        tr += inv.d0[j] * q.d0[j] + 2.0 * inv.d1[j] * q.d1[j] + 2.0 * inv.d2[j] * q.d2[j];
    }
    n as f64 - lambda * tr
}

fn check_inputs(x: &[f64], y: &[f64]) -> Result<()> {
    if x.len() != y.len() {
        return arg("spline x and y lengths differ");
    }
    if x.len() < 4 {
        return arg("smoothing spline needs at least four points");
    }
    if x.windows(2).any(|w| !(w[0] < w[1])) {
        return arg("spline knots must be strictly increasing");
    }
    if y.iter().chain(x).any(|v| !v.is_finite()) {
        return arg("spline inputs must be finite");
    }
    Ok(())
}

fn build(x: &[f64], g: &[f64], gamma_inner: &[f64], penalty: f64, df: f64) -> SplineFit {
    let n = x.len();
    let mut gamma = vec![0.0; n];
    gamma[1..n - 1].copy_from_slice(gamma_inner);
    let coefficients = (0..n - 1)
        .map(|i| {
            let h = x[i + 1] - x[i];
            [
                g[i],
                (g[i + 1] - g[i]) / h - h * (2.0 * gamma[i] + gamma[i + 1]) / 6.0,
                gamma[i] / 2.0,
                (gamma[i + 1] - gamma[i]) / (6.0 * h),
            ]
        })
        .collect();
    SplineFit { knots: x.to_vec(), coefficients, penalty, effective_df: df }
}

/// Fit at a fixed penalty λ ≥ 0.
pub fn fit_with_penalty(x: &[f64], y: &[f64], lambda: f64) -> Result<SplineFit> {
    check_inputs(x, y)?;
    if !(lambda >= 0.0) || !lambda.is_finite() {
        return arg("penalty must be finite and nonnegative");
    }
    let sys = System::new(x, y);
    Ok(solve_at(&sys, x, y, lambda))
}

fn solve_at(sys: &System, x: &[f64], y: &[f64], lambda: f64) -> SplineFit {
    let n = x.len();
    let fac = ldl(&sys.matrix(lambda));
    let gamma = fac.solve(&sys.qty);
    let mut g = y.to_vec();
    for (j, gj) in gamma.iter().enumerate() {
        let h0 = sys.h[j];
        let h1 = sys.h[j + 1];
        g[j] -= lambda * gj / h0;
        g[j + 1] -= lambda * gj * (-1.0 / h0 - 1.0 / h1);
        g[j + 2] -= lambda * gj / h1;
    }
    debug_assert_eq!(g.len(), n);
    let df = trace_df(sys, lambda);
    build(x, &g, &gamma, lambda, df)
}

fn linear_fit(x: &[f64], y: &[f64]) -> SplineFit {
    let (b0, b1) = super::stats::ols(x, y).map(|f| (f.intercept, f.slope)).unwrap_or((0.0, 0.0));
    let g: Vec<f64> = x.iter().map(|&v| b0 + b1 * v).collect();
    build(x, &g, &vec![0.0; x.len() - 2], f64::INFINITY, 2.0)
}

/// Fit with the penalty tuned so the smoother trace equals `effective_df`.
///
/// `effective_df = n` interpolates. Values in (1, 2] return the least-squares
/// line, whose trace is exactly 2; lower traces are not reachable by a cubic
/// smoothing spline.
pub fn fit_smoothing_spline(x: &[f64], y: &[f64], effective_df: f64) -> Result<SplineFit> {
    check_inputs(x, y)?;
    let n = x.len() as f64;
    if !(effective_df > 1.0 && effective_df <= n) {
        return arg(format!("effective df must lie in (1, {n}], got {effective_df}"));
    }
    let sys = System::new(x, y);
    if effective_df >= n - 1e-9 {
        return Ok(solve_at(&sys, x, y, 0.0));
    }
    if effective_df <= 2.0 + 1e-6 {
        return Ok(linear_fit(x, y));
    }
    // trace falls from n to 2 as λ grows; bisect on log λ around the natural scale.
    let scale = sys.r.d0.iter().sum::<f64>() / sys.qtq.d0.iter().sum::<f64>();
    let (mut lo, mut hi) = (scale.ln() - 40.0, scale.ln() + 40.0);
    let mut best = scale;
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        let lam = mid.exp();
        let df = trace_df(&sys, lam);
        best = lam;
        if (df - effective_df).abs() <= 1e-6 {
            break;
        }
        if df > effective_df {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(solve_at(&sys, x, y, best))
}
