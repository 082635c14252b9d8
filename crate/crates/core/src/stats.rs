//! Welch's unequal-variance two-sample t-test.

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TTest {
    pub t: f64,
    /// Two-sided p-value.
    pub p: f64,
    /// Welch-Satterthwaite degrees of freedom.
    pub df: f64,
    pub significant_at_05: bool,
}

pub fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Unbiased sample variance.
pub fn variance(xs: &[f64]) -> f64 {
    let m = mean(xs);
    xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (xs.len() as f64 - 1.0)
}

/// Unpaired two-sample t-test without the equal-variance assumption.
///
/// When both samples have zero variance the statistic is 0 with p = 1 for
/// equal means, and infinite with p = 0 otherwise.
pub fn t_test_unpaired(a: &[f64], b: &[f64]) -> Result<TTest> {
    if a.len() < 2 || b.len() < 2 {
        return Err(Error::Validation(format!(
            "t-test needs at least two observations per sample, got {} and {}",
            a.len(),
            b.len()
        )));
    }
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let (ma, mb) = (mean(a), mean(b));
    let (qa, qb) = (variance(a) / na, variance(b) / nb);
    let se2 = qa + qb;
    let diff = ma - mb;

    if se2 == 0.0 {
        let (t, p) = if diff == 0.0 {
            (0.0, 1.0)
        } else {
            (diff.signum() * f64::INFINITY, 0.0)
        };
        return Ok(TTest {
            t,
            p,
            df: na + nb - 2.0,
            significant_at_05: p < 0.05,
        });
    }

    let t = diff / se2.sqrt();
    let df = se2 * se2 / (qa * qa / (na - 1.0) + qb * qb / (nb - 1.0));
    let dist = StudentsT::new(0.0, 1.0, df)
        .map_err(|e| Error::Validation(format!("t distribution with df {df}: {e}")))?;
    let p = (2.0 * dist.sf(t.abs())).min(1.0);
    Ok(TTest {
        t,
        p,
        df,
        significant_at_05: p < 0.05,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identical_samples() {
        let a = [3.0, 5.0, 4.0, 8.0];
        let r = t_test_unpaired(&a, &a).unwrap();
        assert_eq!(r.t, 0.0);
        assert!((r.p - 1.0).abs() < 1e-12);
        assert!(!r.significant_at_05);
    }

    #[test]
    fn separated_samples_match_reference() {
        // scipy.stats.ttest_ind(equal_var=False): t=-5, df=8, p=0.001052825793366539
        let a = [1.0, 2.0, 3.0, 4.0, 5.0];
        let b = [6.0, 7.0, 8.0, 9.0, 10.0];
        let r = t_test_unpaired(&a, &b).unwrap();
        assert!((r.t + 5.0).abs() < 1e-12);
        assert!((r.df - 8.0).abs() < 1e-12);
        assert!((r.p - 0.001052825793366539).abs() < 1e-9);
        assert!(r.significant_at_05);
    }

    #[test]
    fn unequal_sizes_and_variances_match_reference() {
        // scipy: t=-2.7547477670078737, df=4.78123186377415, p=0.04206096840132664
        let a = [3.1, 2.9, 4.0, 5.2, 3.3, 4.4];
        let b = [5.0, 6.1, 4.8, 7.7];
        let r = t_test_unpaired(&a, &b).unwrap();
        assert!((r.t + 2.7547477670078737).abs() < 1e-10);
        assert!((r.df - 4.78123186377415).abs() < 1e-10);
        assert!((r.p - 0.04206096840132664).abs() < 1e-8);
    }

    #[test]
    fn swapping_negates_t_and_keeps_p() {
        let a = [1.0, 4.0, 2.0, 8.0];
        let b = [3.0, 3.5, 9.0, 7.0, 6.0];
        let ab = t_test_unpaired(&a, &b).unwrap();
        let ba = t_test_unpaired(&b, &a).unwrap();
        assert_eq!(ab.t, -ba.t);
        assert!((ab.p - ba.p).abs() < 1e-15);
    }

    #[test]
    fn zero_variance_conventions() {
        let r = t_test_unpaired(&[2.0, 2.0], &[2.0, 2.0, 2.0]).unwrap();
        assert_eq!((r.t, r.p), (0.0, 1.0));
        let r = t_test_unpaired(&[2.0, 2.0], &[3.0, 3.0]).unwrap();
        assert_eq!(r.p, 0.0);
        assert!(r.t.is_infinite() && r.t < 0.0);
    }

    #[test]
    fn too_small_sample() {
        assert!(t_test_unpaired(&[1.0], &[1.0, 2.0]).is_err());
    }
}
