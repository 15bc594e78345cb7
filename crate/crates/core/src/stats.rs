//! Shared scalar statistics: normal CDF and quantile, moments, correlation,
//! Kolmogorov-Smirnov distance, and a bisection-based quantile inverter for
//! distributions that only expose a CDF.
//!
//! The normal quantile is implemented here (Acklam's rational approximation
//! polished by one Halley step against an `erfc`-based CDF) rather than taken
//! from a distribution crate: it is called inside hot loops on probabilities
//! arbitrarily close to 0 and 1, where we need full `f64` accuracy and
//! graceful saturation instead of panics or infinities at the boundaries.

use crate::error::{Error, Result};

/// Standard normal CDF, accurate in both tails (via `erfc`).
pub fn norm_cdf(x: f64) -> f64 {
    0.5 * libm::erfc(-x / std::f64::consts::SQRT_2)
}

/// Standard normal density.
pub fn norm_pdf(x: f64) -> f64 {
    (-0.5 * x * x).exp() / (2.0 * std::f64::consts::PI).sqrt()
}

/// Standard normal quantile function.
///
/// `p <= 0` returns `-INFINITY` and `p >= 1` returns `INFINITY`; callers that
/// need finite values clamp first (see [`clamp_unit_open`]).
pub fn norm_quantile(p: f64) -> f64 {
    if p <= 0.0 {
        return f64::NEG_INFINITY;
    }
    if p >= 1.0 {
        return f64::INFINITY;
    }
    // Acklam's rational approximation, |relative error| < 1.15e-9 everywhere.
    const A: [f64; 6] = [
        -3.969683028665376e+01,
        2.209460984245205e+02,
        -2.759285104469687e+02,
        1.383577518672690e+02,
        -3.066479806614716e+01,
        2.506628277459239e+00,
    ];
    const B: [f64; 5] = [
        -5.447609879822406e+01,
        1.615858368580409e+02,
        -1.556989798598866e+02,
        6.680131188771972e+01,
        -1.328068155288572e+01,
    ];
    const C: [f64; 6] = [
        -7.784894002430293e-03,
        -3.223964580411365e-01,
        -2.400758277161838e+00,
        -2.549732539343734e+00,
        4.374664141464968e+00,
        2.938163982698783e+00,
    ];
    const D: [f64; 4] = [
        7.784695709041462e-03,
        3.224671290700398e-01,
        2.445134137142996e+00,
        3.754408661907416e+00,
    ];
    const P_LOW: f64 = 0.02425;

    let x = if p < P_LOW {
        let q = (-2.0 * p.ln()).sqrt();
        (((((C[0] * q + C[1]) * q + C[2]) * q + C[3]) * q + C[4]) * q + C[5])
            / ((((D[0] * q + D[1]) * q + D[2]) * q + D[3]) * q + 1.0)
    } else if p <= 1.0 - P_LOW {
        let q = p - 0.5;
        let r = q * q;
        (((((A[0] * r + A[1]) * r + A[2]) * r + A[3]) * r + A[4]) * r + A[5]) * q
            / (((((B[0] * r + B[1]) * r + B[2]) * r + B[3]) * r + B[4]) * r + 1.0)
    } else {
        let q = (-2.0 * (1.0 - p).ln()).sqrt();
        -(((((C[0] * q + C[1]) * q + C[2]) * q + C[3]) * q + C[4]) * q + C[5])
            / ((((D[0] * q + D[1]) * q + D[2]) * q + D[3]) * q + 1.0)
    };

    // One Halley refinement against the erfc-based CDF lifts the approximation
    // to near machine precision.
    let e = norm_cdf(x) - p;
    let u = e * (2.0 * std::f64::consts::PI).sqrt() * (0.5 * x * x).exp();
    x - u / (1.0 + 0.5 * x * u)
}

/// Mean of a slice. Empty slices return NaN.
pub fn mean(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return f64::NAN;
    }
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Unbiased sample variance (denominator `n - 1`); NaN for `n < 2`.
pub fn variance(xs: &[f64]) -> f64 {
    let n = xs.len();
    if n < 2 {
        return f64::NAN;
    }
    let m = mean(xs);
    xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (n - 1) as f64
}

/// Pearson correlation of two equal-length slices.
///
/// Returns 0 when either side is (numerically) constant: for our use —
/// building a copula correlation matrix — "no signal" is the right reading of
/// a degenerate margin, and it keeps the matrix finite.
pub fn pearson(xs: &[f64], ys: &[f64]) -> f64 {
    debug_assert_eq!(xs.len(), ys.len());
    let n = xs.len();
    if n < 2 {
        return 0.0;
    }
    let mx = mean(xs);
    let my = mean(ys);
    let mut sxy = 0.0;
    let mut sxx = 0.0;
    let mut syy = 0.0;
    for i in 0..n {
        let dx = xs[i] - mx;
        let dy = ys[i] - my;
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx <= 0.0 || syy <= 0.0 {
        return 0.0;
    }
    let r = sxy / (sxx * syy).sqrt();
    r.clamp(-1.0, 1.0)
}

/// Two-sample Kolmogorov-Smirnov statistic: sup distance between the
/// empirical CDFs of `a` and `b`. Input order does not matter.
pub fn ks_two_sample(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::InsufficientData(
            "KS distance needs non-empty samples on both sides".into(),
        ));
    }
    let mut a: Vec<f64> = a.to_vec();
    let mut b: Vec<f64> = b.to_vec();
    a.sort_by(f64::total_cmp);
    b.sort_by(f64::total_cmp);
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let (mut i, mut j) = (0usize, 0usize);
    let mut d: f64 = 0.0;
    while i < a.len() && j < b.len() {
        let x = a[i].min(b[j]);
        while i < a.len() && a[i] <= x {
            i += 1;
        }
        while j < b.len() && b[j] <= x {
            j += 1;
        }
        d = d.max((i as f64 / na - j as f64 / nb).abs());
    }
    Ok(d)
}

/// Invert a monotone CDF by bisection.
///
/// Starts from `(lo, hi)` and expands the bracket geometrically until it
/// straddles `p`, then bisects for `iters` rounds (60 rounds resolve ~18
/// significant digits of bracket width, i.e. down to `f64` spacing for any
/// reasonable support).
pub fn invert_cdf(
    cdf: impl Fn(f64) -> f64,
    p: f64,
    mut lo: f64,
    mut hi: f64,
    iters: usize,
) -> Result<f64> {
    if !(0.0..=1.0).contains(&p) {
        return Err(Error::NumericalFailure(format!(
            "quantile probability {p} outside [0, 1]"
        )));
    }
    let mut width = (hi - lo).max(1.0);
    let mut guard = 0;
    while cdf(lo) > p {
        lo -= width;
        width *= 2.0;
        guard += 1;
        if guard > 200 {
            return Err(Error::NumericalFailure(
                "could not bracket quantile from below".into(),
            ));
        }
    }
    while cdf(hi) < p {
        hi += width;
        width *= 2.0;
        guard += 1;
        if guard > 400 {
            return Err(Error::NumericalFailure(
                "could not bracket quantile from above".into(),
            ));
        }
    }
    for _ in 0..iters {
        let mid = 0.5 * (lo + hi);
        if !mid.is_finite() {
            return Err(Error::NumericalFailure("quantile bisection diverged".into()));
        }
        if cdf(mid) < p {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// Clamp a probability into the open interval used before a normal quantile,
/// so PIT values of exactly 0 or 1 (empirical boundaries) stay finite.
pub fn clamp_unit_open(p: f64) -> f64 {
    p.clamp(1e-12, 1.0 - 1e-12)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn norm_cdf_reference_values() {
        // Reference: Abramowitz & Stegun-grade constants.
        assert_abs_diff_eq!(norm_cdf(0.0), 0.5, epsilon = 1e-15);
        assert_abs_diff_eq!(norm_cdf(1.0), 0.8413447460685429, epsilon = 1e-14);
        assert_abs_diff_eq!(norm_cdf(-1.96), 0.024997895148220435, epsilon = 1e-14);
        assert_abs_diff_eq!(norm_cdf(5.0), 0.9999997133484281, epsilon = 1e-14);
    }

    #[test]
    fn norm_quantile_roundtrip() {
        for &p in &[1e-10, 1e-6, 0.01, 0.3, 0.5, 0.7, 0.975, 1.0 - 1e-6] {
            let x = norm_quantile(p);
            assert_abs_diff_eq!(norm_cdf(x), p, epsilon = 1e-12 * p.max(1e-3));
        }
    }

    #[test]
    fn norm_quantile_reference_values() {
        assert_abs_diff_eq!(norm_quantile(0.5), 0.0, epsilon = 1e-15);
        assert_abs_diff_eq!(norm_quantile(0.975), 1.959963984540054, epsilon = 1e-12);
        assert_abs_diff_eq!(norm_quantile(0.025), -1.959963984540054, epsilon = 1e-12);
        assert_abs_diff_eq!(
            norm_quantile(0.8413447460685429),
            1.0,
            epsilon = 1e-12
        );
    }

    #[test]
    fn norm_quantile_saturates() {
        assert_eq!(norm_quantile(0.0), f64::NEG_INFINITY);
        assert_eq!(norm_quantile(1.0), f64::INFINITY);
        assert!(norm_quantile(1e-300).is_finite());
    }

    #[test]
    fn pearson_perfect_and_constant() {
        let x = [1.0, 2.0, 3.0, 4.0];
        let y = [2.0, 4.0, 6.0, 8.0];
        assert_abs_diff_eq!(pearson(&x, &y), 1.0, epsilon = 1e-14);
        let yneg = [8.0, 6.0, 4.0, 2.0];
        assert_abs_diff_eq!(pearson(&x, &yneg), -1.0, epsilon = 1e-14);
        let flat = [3.0; 4];
        assert_eq!(pearson(&x, &flat), 0.0);
    }

    #[test]
    fn pearson_hand_value() {
        let x = [1.0, 2.0, 3.0];
        let y = [1.0, 3.0, 2.0];
        assert_abs_diff_eq!(pearson(&x, &y), 0.5, epsilon = 1e-14);
    }

    #[test]
    fn ks_identical_and_disjoint() {
        let a = [1.0, 2.0, 3.0];
        assert_abs_diff_eq!(ks_two_sample(&a, &a).unwrap(), 0.0, epsilon = 1e-15);
        let b = [10.0, 11.0];
        assert_abs_diff_eq!(ks_two_sample(&a, &b).unwrap(), 1.0, epsilon = 1e-15);
    }

    #[test]
    fn ks_hand_value() {
        // ECDFs: a jumps at 1,2 (steps of 1/2); b jumps at 1.5 (step 1).
        // Max gap is at x in [1, 1.5): |1/2 - 0| = 1/2.
        let a = [1.0, 2.0];
        let b = [1.5];
        assert_abs_diff_eq!(ks_two_sample(&a, &b).unwrap(), 0.5, epsilon = 1e-15);
    }

    #[test]
    fn invert_cdf_recovers_normal_quantile() {
        for &p in &[0.001, 0.25, 0.5, 0.9, 0.999] {
            let q = invert_cdf(norm_cdf, p, -1.0, 1.0, 80).unwrap();
            assert_abs_diff_eq!(q, norm_quantile(p), epsilon = 1e-9);
        }
    }

    #[test]
    fn invert_cdf_expands_bracket() {
        // Start with a bracket nowhere near the answer.
        let q = invert_cdf(norm_cdf, 0.9999, 0.0, 0.001, 80).unwrap();
        assert_abs_diff_eq!(q, norm_quantile(0.9999), epsilon = 1e-8);
    }

    #[test]
    fn variance_matches_hand_value() {
        let xs = [2.0, 4.0, 4.0, 4.0, 5.0, 5.0, 7.0, 9.0];
        assert_abs_diff_eq!(variance(&xs), 4.571428571428571, epsilon = 1e-12);
    }
}
