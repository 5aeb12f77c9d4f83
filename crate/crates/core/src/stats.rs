//! Small descriptive and inferential helpers shared across modules.

use statrs::distribution::{ContinuousCDF, StudentsT};

pub fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Sample variance with divisor `n - 1`.
pub fn variance(xs: &[f64]) -> f64 {
    let m = mean(xs);
    xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (xs.len() as f64 - 1.0)
}

pub fn median(xs: &[f64]) -> f64 {
    let mut v = xs.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Inverse-ECDF quantile: the smallest order statistic whose empirical
/// cumulative proportion reaches `level`.
pub fn quantile_sorted(sorted: &[f64], level: f64) -> f64 {
    let n = sorted.len();
    let k = ((level * n as f64).ceil() as usize).clamp(1, n);
    sorted[k - 1]
}

/// Two-sided p-value of a t statistic with `df` degrees of freedom.
pub fn t_two_sided_p(t: f64, df: f64) -> f64 {
    let dist = StudentsT::new(0.0, 1.0, df).expect("positive degrees of freedom");
    (2.0 * (1.0 - dist.cdf(t.abs()))).clamp(0.0, 1.0)
}

/// Result of a univariate t-test.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TTest {
    pub t: f64,
    pub df: f64,
    pub p: f64,
}

/// Welch two-sample t-test of `mean(b) - mean(a)`. `None` when both samples
/// have zero variance.
pub fn welch_t_test(a: &[f64], b: &[f64]) -> Option<TTest> {
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let (va, vb) = (variance(a) / na, variance(b) / nb);
    let se2 = va + vb;
    if !(se2 > 0.0) {
        return None;
    }
    let t = (mean(b) - mean(a)) / se2.sqrt();
    let df = se2 * se2 / (va * va / (na - 1.0) + vb * vb / (nb - 1.0));
    Some(TTest {
        t,
        df,
        p: t_two_sided_p(t, df),
    })
}

/// Paired t-test of `mean(b - a)`. `None` when the differences are constant.
pub fn paired_t_test(a: &[f64], b: &[f64]) -> Option<TTest> {
    let diffs: Vec<f64> = a.iter().zip(b).map(|(x, y)| y - x).collect();
    let n = diffs.len() as f64;
    let v = variance(&diffs);
    if !(v > 0.0) {
        return None;
    }
    let t = mean(&diffs) / (v / n).sqrt();
    let df = n - 1.0;
    Some(TTest {
        t,
        df,
        p: t_two_sided_p(t, df),
    })
}

/// Pearson correlation; `None` when either input has zero variance.
pub fn pearson(x: &[f64], y: &[f64]) -> Option<f64> {
    let (mx, my) = (mean(x), mean(y));
    let mut sxy = 0.0;
    let mut sxx = 0.0;
    let mut syy = 0.0;
    for (a, b) in x.iter().zip(y) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    if sxx == 0.0 || syy == 0.0 {
        return None;
    }
    Some((sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quantile_is_inverse_ecdf() {
        let v = [1.0, 2.0, 3.0, 4.0];
        assert_eq!(quantile_sorted(&v, 0.5), 2.0);
        assert_eq!(quantile_sorted(&v, 0.51), 3.0);
        assert_eq!(quantile_sorted(&v, 1.0), 4.0);
    }

    #[test]
    fn welch_matches_hand_computation() {
        let a = [1.0, 2.0, 3.0];
        let b = [2.0, 4.0, 6.0, 8.0];
        let t = welch_t_test(&a, &b).unwrap();
        // var(a)=1, var(b)=20/3; se2 = 1/3 + 5/3 = 2
        assert!((t.t - 3.0 / 2f64.sqrt()).abs() < 1e-12);
        let df = 4.0 / ((1.0f64 / 9.0) / 2.0 + (25.0 / 9.0) / 3.0);
        assert!((t.df - df).abs() < 1e-12);
        assert!(t.p > 0.0 && t.p < 1.0);
    }

    #[test]
    fn p_value_of_zero_t_is_one() {
        assert!((t_two_sided_p(0.0, 5.0) - 1.0).abs() < 1e-12);
    }
}
