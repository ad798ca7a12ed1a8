//! Small numerical kernels shared across the crate: quadrature with error
//! estimates, golden-section minimization, bisection and compensated sums.

/// Compensated (Kahan) summation. Used wherever merge order must not leak
/// into results.
#[derive(Debug, Clone, Copy, Default)]
pub struct KahanSum {
    sum: f64,
    carry: f64,
}

impl KahanSum {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, x: f64) {
        let y = x - self.carry;
        let t = self.sum + y;
        self.carry = (t - self.sum) - y;
        self.sum = t;
    }

    pub fn value(&self) -> f64 {
        self.sum
    }
}

/// Trapezoid rule over uniformly spaced samples.
pub fn trapezoid(values: &[f64], h: f64) -> f64 {
    if values.len() < 2 {
        return 0.0;
    }
    let mut acc = KahanSum::new();
    for w in values.windows(2) {
        acc.add(0.5 * (w[0] + w[1]));
    }
    acc.value() * h
}

/// Trapezoid rule with a Richardson error estimate: integrates on `n` and
/// `n/2` points and reports `(I_n, |I_n - I_{n/2}| / 3)`.
pub fn trapezoid_with_error(f: impl Fn(f64) -> f64, a: f64, b: f64, n: usize) -> (f64, f64) {
    let n = n.max(4) | 1; // odd point count so the half grid is nested
    let h = (b - a) / (n - 1) as f64;
    let values: Vec<f64> = (0..n).map(|i| f(a + i as f64 * h)).collect();
    let fine = trapezoid(&values, h);
    let coarse_values: Vec<f64> = values.iter().step_by(2).copied().collect();
    let coarse = trapezoid(&coarse_values, 2.0 * h);
    (fine, (fine - coarse).abs() / 3.0)
}

fn simpson(f0: f64, fm: f64, f1: f64, h: f64) -> f64 {
    h / 6.0 * (f0 + 4.0 * fm + f1)
}

fn adaptive_simpson_rec(
    f: &impl Fn(f64) -> f64,
    a: f64,
    b: f64,
    fa: f64,
    fm: f64,
    fb: f64,
    whole: f64,
    tol: f64,
    depth: usize,
) -> (f64, f64) {
    let m = 0.5 * (a + b);
    let lm = 0.5 * (a + m);
    let rm = 0.5 * (m + b);
    let flm = f(lm);
    let frm = f(rm);
    let left = simpson(fa, flm, fm, m - a);
    let right = simpson(fm, frm, fb, b - m);
    let delta = left + right - whole;
    if depth == 0 || delta.abs() <= 15.0 * tol {
        return (left + right + delta / 15.0, delta.abs() / 15.0);
    }
    let (lv, le) = adaptive_simpson_rec(f, a, m, fa, flm, fm, left, tol / 2.0, depth - 1);
    let (rv, re) = adaptive_simpson_rec(f, m, b, fm, frm, fb, right, tol / 2.0, depth - 1);
    (lv + rv, le + re)
}

/// Adaptive Simpson quadrature; returns the integral and an error estimate.
pub fn adaptive_simpson(f: impl Fn(f64) -> f64, a: f64, b: f64, tol: f64) -> (f64, f64) {
    if a == b {
        return (0.0, 0.0);
    }
    let fa = f(a);
    let fb = f(b);
    let m = 0.5 * (a + b);
    let fm = f(m);
    let whole = simpson(fa, fm, fb, b - a);
    adaptive_simpson_rec(&f, a, b, fa, fm, fb, whole, tol, 40)
}

const INV_PHI: f64 = 0.618_033_988_749_894_9;

/// Golden-section search for the minimum of a unimodal function on `[a, b]`.
/// Returns `(argmin, min)`.
pub fn golden_min(f: impl Fn(f64) -> f64, a: f64, b: f64, tol: f64) -> (f64, f64) {
    let (mut a, mut b) = if a <= b { (a, b) } else { (b, a) };
    let mut c = b - INV_PHI * (b - a);
    let mut d = a + INV_PHI * (b - a);
    let mut fc = f(c);
    let mut fd = f(d);
    while (b - a) > tol {
        if fc < fd {
            b = d;
            d = c;
            fd = fc;
            c = b - INV_PHI * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + INV_PHI * (b - a);
            fd = f(d);
        }
    }
    let x = 0.5 * (a + b);
    (x, f(x))
}

/// Golden-section search for the maximum.
pub fn golden_max(f: impl Fn(f64) -> f64, a: f64, b: f64, tol: f64) -> (f64, f64) {
    let (x, v) = golden_min(|s| -f(s), a, b, tol);
    (x, -v)
}

/// Bisection on a sign change of `f` over `[a, b]`; assumes `f(a)` and `f(b)`
/// have opposite signs.
pub fn bisect(f: impl Fn(f64) -> f64, mut a: f64, mut b: f64, tol: f64) -> f64 {
    let mut fa = f(a);
    for _ in 0..200 {
        if (b - a).abs() <= tol {
            break;
        }
        let m = 0.5 * (a + b);
        let fm = f(m);
        if (fa <= 0.0) == (fm <= 0.0) {
            a = m;
            fa = fm;
        } else {
            b = m;
        }
    }
    0.5 * (a + b)
}

/// Least-squares slope and intercept of `y` against `x`, with the maximum
/// absolute residual.
pub fn linear_fit(x: &[f64], y: &[f64]) -> (f64, f64, f64) {
    assert_eq!(x.len(), y.len());
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxx: f64 = x.iter().map(|&v| (v - mx) * (v - mx)).sum();
    let sxy: f64 = x.iter().zip(y).map(|(&u, &v)| (u - mx) * (v - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let resid = x
        .iter()
        .zip(y)
        .map(|(&u, &v)| (v - slope * u - intercept).abs())
        .fold(0.0_f64, f64::max);
    (slope, intercept, resid)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn trapezoid_integrates_parabola() {
        let (v, err) = trapezoid_with_error(|x| x * x, 0.0, 1.0, 1001);
        assert_relative_eq!(v, 1.0 / 3.0, epsilon = 1e-6);
        assert!(err < 1e-6);
    }

    #[test]
    fn simpson_handles_gaussian_tail() {
        let (v, err) = adaptive_simpson(|x| (-x * x).exp(), 0.0, 10.0, 1e-12);
        assert_relative_eq!(v, core::f64::consts::PI.sqrt() / 2.0, epsilon = 1e-10);
        assert!(err < 1e-9);
    }

    #[test]
    fn golden_finds_quartic_minimum() {
        let (x, v) = golden_min(|s| (s - 2.0).powi(4) + 1.0, -10.0, 10.0, 1e-12);
        // A quartic bottom is flat at f64 resolution; the argmin is only
        // localized to ~eps^(1/4).
        assert_relative_eq!(x, 2.0, epsilon = 1e-3);
        assert_relative_eq!(v, 1.0, epsilon = 1e-12);
    }

    #[test]
    fn bisect_locates_root() {
        let r = bisect(|x| x * x - 2.0, 0.0, 2.0, 1e-12);
        assert_relative_eq!(r, 2.0_f64.sqrt(), epsilon = 1e-10);
    }
}
