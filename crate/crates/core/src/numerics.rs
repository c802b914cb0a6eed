//! Shared numerical helpers: max-shifted log-sum-exp and golden-section search.

/// log(exp(a) + exp(b)) without overflow.
#[inline]
pub fn log_add_exp(a: f64, b: f64) -> f64 {
    if a == f64::NEG_INFINITY && b == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    if a >= b {
        a + (b - a).exp().ln_1p()
    } else {
        b + (a - b).exp().ln_1p()
    }
}

/// Max-shifted log(Σ exp(t_i)). Terms equal to −∞ contribute nothing.
#[inline]
pub fn log_sum_exp(terms: &[f64]) -> f64 {
    let m = terms.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    let sum: f64 = terms.iter().map(|&t| (t - m).exp()).sum();
    m + sum.ln()
}

/// Σ w_i·x_i with the convention 0·x = 0 even when x is ±∞.
///
/// Needed for measure-weighted sums where a branch can carry probability 0
/// (θ√h = 1, or a vanishing transition entry) next to a −∞ log value.
#[inline]
pub fn dot_skip_zero(weights: &[f64], values: &[f64]) -> f64 {
    debug_assert_eq!(weights.len(), values.len());
    weights
        .iter()
        .zip(values)
        .filter(|(&w, _)| w != 0.0)
        .map(|(&w, &x)| w * x)
        .sum()
}

/// Outcome of a golden-section minimization.
#[derive(Debug, Clone, Copy)]
pub struct GoldenResult {
    pub x: f64,
    pub fx: f64,
    pub iterations: usize,
}

/// Golden-section search for the minimum of a unimodal function on [lo, hi].
///
/// Terminates when the bracket width falls below `tol` (absolute on x) or
/// after `max_iter` shrink steps, whichever comes first.
pub fn golden_minimize<F: FnMut(f64) -> f64>(
    mut f: F,
    mut lo: f64,
    mut hi: f64,
    tol: f64,
    max_iter: usize,
) -> GoldenResult {
    const INV_PHI: f64 = 0.618_033_988_749_894_9;
    debug_assert!(lo <= hi);
    let mut x1 = hi - INV_PHI * (hi - lo);
    let mut x2 = lo + INV_PHI * (hi - lo);
    let mut f1 = f(x1);
    let mut f2 = f(x2);
    let mut iterations = 0;
    while hi - lo > tol && iterations < max_iter {
        if f1 < f2 {
            hi = x2;
            x2 = x1;
            f2 = f1;
            x1 = hi - INV_PHI * (hi - lo);
            f1 = f(x1);
        } else {
            lo = x1;
            x1 = x2;
            f1 = f2;
            x2 = lo + INV_PHI * (hi - lo);
            f2 = f(x2);
        }
        iterations += 1;
    }
    let x = 0.5 * (lo + hi);
    GoldenResult {
        x,
        fx: f(x),
        iterations,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn log_sum_exp_matches_naive_in_safe_range() {
        let terms = [0.3f64, -1.2, 2.5, 0.0];
        let naive: f64 = terms.iter().map(|t| t.exp()).sum::<f64>().ln();
        assert!((log_sum_exp(&terms) - naive).abs() < 1e-14);
    }

    #[test]
    fn log_sum_exp_survives_large_inputs() {
        let v = log_sum_exp(&[1000.0, 1002.0]);
        // 1002 + ln(1 + e^-2)
        assert!((v - (1002.0 + (-2.0f64).exp().ln_1p())).abs() < 1e-12);
    }

    #[test]
    fn log_sum_exp_ignores_neg_infinity() {
        assert_eq!(log_sum_exp(&[f64::NEG_INFINITY; 3]), f64::NEG_INFINITY);
        let v = log_sum_exp(&[f64::NEG_INFINITY, 0.0]);
        assert!((v - 0.0).abs() < 1e-15);
    }

    #[test]
    fn dot_skip_zero_kills_zero_times_infinity() {
        let v = dot_skip_zero(&[0.0, 1.0], &[f64::NEG_INFINITY, 3.0]);
        assert_eq!(v, 3.0);
    }

    #[test]
    fn golden_finds_quadratic_minimum() {
        let r = golden_minimize(|x| (x - 1.25) * (x - 1.25), -10.0, 10.0, 1e-12, 200);
        assert!((r.x - 1.25).abs() < 1e-8);
    }

    #[test]
    fn golden_handles_asymmetric_exponential_objective() {
        // Minimum of 0.5 e^{-a(x+1)} + 0.5 e^{a(x-1)} is at x = 0.
        let a = 0.35;
        let r = golden_minimize(
            |x| 0.5 * (-a * (x + 1.0)).exp() + 0.5 * (a * (x - 1.0)).exp(),
            -50.0,
            50.0,
            1e-12,
            300,
        );
        assert!(r.x.abs() < 1e-7);
    }
}
