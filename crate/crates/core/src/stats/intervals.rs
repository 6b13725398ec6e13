//! Proportion intervals, percentiles and the exact binomial tail.

use serde::{Deserialize, Serialize};

use super::contingency::{TestMethod, TestResult};
use super::special::{ln_choose, normal_quantile};
use super::StatsError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum IntervalMethod {
    Wilson,
    BootstrapPercentile,
}

/// A point estimate with a confidence interval. Wilson intervals always
/// contain their point; a bootstrap percentile interval usually does but
/// is not forced to.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IntervalEstimate {
    pub point: f64,
    pub lower: f64,
    pub upper: f64,
    pub level: f64,
    pub method: IntervalMethod,
}

/// Wilson score interval for `successes / trials`.
pub fn wilson_interval(
    successes: u64,
    trials: u64,
    level: f64,
) -> Result<IntervalEstimate, StatsError> {
    super::check_level(level)?;
    if trials == 0 || successes > trials {
        return Err(StatsError::InvalidCounts { successes, trials });
    }
    let n = trials as f64;
    let p = successes as f64 / n;
    let z = normal_quantile(1.0 - (1.0 - level) / 2.0);
    let z2 = z * z;
    let denom = 1.0 + z2 / n;
    let center = (p + z2 / (2.0 * n)) / denom;
    let half = z / denom * (p * (1.0 - p) / n + z2 / (4.0 * n * n)).sqrt();
    let lower = if successes == 0 {
        0.0
    } else {
        (center - half).clamp(0.0, p)
    };
    let upper = if successes == trials {
        1.0
    } else {
        (center + half).clamp(p, 1.0)
    };
    Ok(IntervalEstimate {
        point: p,
        lower,
        upper,
        level,
        method: IntervalMethod::Wilson,
    })
}

/// Type-7 sample quantile of ascending `sorted` at probability `q`.
pub fn percentile(sorted: &[f64], q: f64) -> f64 {
    assert!(!sorted.is_empty());
    let h = (sorted.len() - 1) as f64 * q.clamp(0.0, 1.0);
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// P(X >= k) for X ~ Binomial(n, p0), summed exactly in log space.
pub fn binomial_upper_tail(k: u64, n: u64, p0: f64) -> f64 {
    if k == 0 {
        return 1.0;
    }
    let (lp, lq) = (p0.ln(), (1.0 - p0).ln());
    let mut ln_c = ln_choose(n, k);
    let mut terms = Vec::with_capacity((n - k + 1) as usize);
    for i in k..=n {
        terms.push(ln_c + i as f64 * lp + (n - i) as f64 * lq);
        if i < n {
            ln_c += ((n - i) as f64 / (i + 1) as f64).ln();
        }
    }
    let max = terms.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let sum: f64 = terms.iter().map(|t| (t - max).exp()).sum();
    (max + sum.ln()).exp().clamp(0.0, 1.0)
}

/// One-tailed exact binomial test with alternative `p > p0`; the p-value is
/// P(X >= k).
pub fn binomial_test_one_tailed(
    successes: u64,
    trials: u64,
    p0: f64,
) -> Result<TestResult, StatsError> {
    if successes > trials {
        return Err(StatsError::InvalidCounts { successes, trials });
    }
    if !(p0 > 0.0 && p0 < 1.0) {
        return Err(StatsError::OutOfRange {
            what: "p0",
            value: p0,
        });
    }
    Ok(TestResult {
        statistic: successes as f64,
        df: None,
        p_value: binomial_upper_tail(successes, trials, p0),
        method: TestMethod::BinomialOneTailedUpper,
        warnings: Vec::new(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::{assert_abs_diff_eq, assert_relative_eq};
    use proptest::prelude::*;

    #[test]
    fn wilson_reference_values() {
        let cases = [
            (154, 326, 0.418_84, 0.526_59),
            (120, 326, 0.317_56, 0.421_70),
            (645, 2912, 0.206_79, 0.236_94),
            (612, 665, 0.897_22, 0.938_55),
        ];
        for (k, n, lo, hi) in cases {
            let w = wilson_interval(k, n, 0.95).unwrap();
            assert_abs_diff_eq!(w.lower, lo, epsilon = 1e-5);
            assert_abs_diff_eq!(w.upper, hi, epsilon = 1e-5);
        }
        assert_eq!(wilson_interval(0, 10, 0.95).unwrap().lower, 0.0);
        assert_eq!(wilson_interval(10, 10, 0.95).unwrap().upper, 1.0);
        assert!(wilson_interval(3, 0, 0.95).is_err());
        assert!(wilson_interval(4, 3, 0.95).is_err());
        assert!(wilson_interval(1, 3, 1.0).is_err());
    }

    #[test]
    fn binomial_reference_values() {
        let r = binomial_test_one_tailed(154, 326, 0.5).unwrap();
        assert_abs_diff_eq!(r.p_value, 0.853_68, epsilon = 1e-5);
        assert_relative_eq!(
            binomial_upper_tail(5, 10, 0.5),
            638.0 / 1024.0,
            max_relative = 1e-12
        );
        assert_eq!(binomial_upper_tail(0, 40, 0.3), 1.0);
        assert_relative_eq!(
            binomial_upper_tail(12, 12, 0.3),
            0.3f64.powi(12),
            max_relative = 1e-12
        );
        assert!(binomial_test_one_tailed(3, 2, 0.5).is_err());
        assert!(binomial_test_one_tailed(1, 2, 1.0).is_err());
    }

    #[test]
    fn percentile_type7() {
        let v = [1.0, 2.0, 3.0, 4.0];
        assert_eq!(percentile(&v, 0.0), 1.0);
        assert_eq!(percentile(&v, 1.0), 4.0);
        assert_eq!(percentile(&v, 0.5), 2.5);
        assert_abs_diff_eq!(percentile(&v, 0.25), 1.75, epsilon = 1e-15);
    }

    proptest! {
        #[test]
        fn wilson_contains_point_and_stays_in_unit_interval(n in 1u64..5000, frac in 0.0f64..=1.0, level in 0.5f64..0.999) {
            let k = ((n as f64) * frac).round() as u64;
            let w = wilson_interval(k, n, level).unwrap();
            prop_assert!(0.0 <= w.lower && w.lower <= w.point && w.point <= w.upper && w.upper <= 1.0);
        }

        #[test]
        fn binomial_tail_is_monotone(n in 1u64..300, p in 0.05f64..0.95) {
            let mut prev = 1.0;
            for k in 0..=n {
                let t = binomial_upper_tail(k, n, p);
                prop_assert!(t <= prev + 1e-12);
                prev = t;
            }
            let top = p.powi(n as i32);
            if top > 1e-280 {
                prop_assert!((binomial_upper_tail(n, n, p) / top - 1.0).abs() < 1e-9);
            }
        }
    }
}
