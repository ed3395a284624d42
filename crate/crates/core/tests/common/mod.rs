//! Test-only oracles, independent of the library's special functions.
#![allow(dead_code)]

/// Adaptive Simpson on `[a, b]`.
pub fn simpson<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64, tol: f64) -> f64 {
    fn step<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64, fa: f64, fm: f64, fb: f64, whole: f64, tol: f64, depth: u32) -> f64 {
        let m = 0.5 * (a + b);
        let (lm, rm) = (0.5 * (a + m), 0.5 * (m + b));
        let (flm, frm) = (f(lm), f(rm));
        let left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
        let right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
        let delta = left + right - whole;
        if depth == 0 || delta.abs() <= 15.0 * tol {
            return left + right + delta / 15.0;
        }
        step(f, a, m, fa, flm, fm, left, tol / 2.0, depth - 1) + step(f, m, b, fm, frm, fb, right, tol / 2.0, depth - 1)
    }
    let m = 0.5 * (a + b);
    let (fa, fm, fb) = (f(a), f(m), f(b));
    let whole = (b - a) / 6.0 * (fa + 4.0 * fm + fb);
    step(f, a, b, fa, fm, fb, whole, tol, 50)
}

/// Truncated posterior of an information fraction: `λ = λ̂(D−1)/L` with
/// `L ~ χ²_{D−1}` restricted to `λ < 1`, i.e. `L > c = λ̂(D−1)`.
/// Integrates the chi-square kernel directly in `L`, scaled by its peak on
/// the support so nothing overflows.
pub struct TruncatedPosterior {
    lambda_hat: f64,
    c: f64,
    a: f64,
    log_peak: f64,
    upper: f64,
}

impl TruncatedPosterior {
    pub fn new(lambda_hat: f64, d: usize) -> Self {
        let dm1 = (d - 1) as f64;
        let a = dm1 / 2.0;
        let c = lambda_hat * dm1;
        let mode = (2.0 * (a - 1.0)).max(c);
        let log_kernel = |l: f64| (a - 1.0) * l.ln() - l / 2.0;
        let log_peak = log_kernel(mode);
        // Walk right until the kernel is negligible relative to its peak.
        let mut upper = mode + 10.0;
        while log_kernel(upper) - log_peak > -60.0 {
            upper += 10.0 + 0.5 * upper;
        }
        TruncatedPosterior { lambda_hat, c, a, log_peak, upper }
    }

    fn kernel(&self, l: f64) -> f64 {
        ((self.a - 1.0) * l.ln() - l / 2.0 - self.log_peak).exp()
    }

    fn mass(&self, lo: f64, hi: f64) -> f64 {
        // Split so Simpson sees the bulk and the tail separately.
        let pieces = 64;
        let h = (hi - lo) / pieces as f64;
        (0..pieces)
            .map(|i| simpson(&|l| self.kernel(l), lo + i as f64 * h, lo + (i + 1) as f64 * h, 1e-15))
            .sum()
    }

    pub fn mean(&self) -> f64 {
        let pieces = 64;
        let h = (self.upper - self.c) / pieces as f64;
        let num: f64 = (0..pieces)
            .map(|i| {
                simpson(&|l| self.kernel(l) / l, self.c + i as f64 * h, self.c + (i + 1) as f64 * h, 1e-17)
            })
            .sum();
        self.lambda_hat * 2.0 * self.a * num / self.mass(self.c, self.upper)
    }

    pub fn median(&self) -> f64 {
        let total = self.mass(self.c, self.upper);
        let (mut lo, mut hi) = (self.c, self.upper);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if self.mass(self.c, mid) < 0.5 * total {
                lo = mid;
            } else {
                hi = mid;
            }
            if hi - lo < 1e-13 * hi {
                break;
            }
        }
        self.lambda_hat * 2.0 * self.a / (0.5 * (lo + hi))
    }
}
