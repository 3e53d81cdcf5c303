use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Sided {
    /// Alternative: mean of the second sample exceeds the first.
    Greater,
    TwoSided,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WelchTest {
    pub t: f64,
    pub df: f64,
    pub p_value: f64,
}

fn mean_var(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let ss = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>();
    (mean, ss / (n - 1.0))
}

/// Welch's unequal-variance t-test of `b` against `a`; `t` is positive when
/// `mean(b) > mean(a)`.
///
/// Two zero-variance samples give `p = 1` for equal means and otherwise
/// `p = 0` (for the one-sided test only when `mean(b) > mean(a)`, else 1).
pub fn welch_t_test(a: &[f64], b: &[f64], sided: Sided) -> Result<WelchTest> {
    if a.len() < 2 || b.len() < 2 {
        return Err(Error::InsufficientSamples);
    }
    let (mean_a, var_a) = mean_var(a);
    let (mean_b, var_b) = mean_var(b);
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let se_a = var_a / na;
    let se_b = var_b / nb;
    let se2 = se_a + se_b;
    let diff = mean_b - mean_a;

    if se2 == 0.0 {
        let df = na + nb - 2.0;
        if diff == 0.0 {
            return Ok(WelchTest { t: 0.0, df, p_value: 1.0 });
        }
        let t = diff.signum() * f64::INFINITY;
        let p_value = match sided {
            Sided::Greater if diff < 0.0 => 1.0,
            _ => 0.0,
        };
        return Ok(WelchTest { t, df, p_value });
    }

    let t = diff / se2.sqrt();
    let df = se2 * se2 / (se_a * se_a / (na - 1.0) + se_b * se_b / (nb - 1.0));
    let dist = StudentsT::new(0.0, 1.0, df).expect("positive degrees of freedom");
    let p_value = match sided {
        Sided::Greater => dist.sf(t),
        Sided::TwoSided => 2.0 * dist.sf(t.abs()),
    }
    .clamp(0.0, 1.0);
    Ok(WelchTest { t, df, p_value })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identical_samples() {
        let r = welch_t_test(&[1.0, 2.0, 3.0], &[1.0, 2.0, 3.0], Sided::Greater).unwrap();
        assert_eq!(r.t, 0.0);
        assert!((r.p_value - 0.5).abs() < 1e-12);
    }

    #[test]
    fn shifted_samples() {
        let r = welch_t_test(&[2.0, 4.0, 6.0], &[3.0, 5.0, 7.0], Sided::Greater).unwrap();
        assert!((r.t - 0.612_372_435_695_794_5).abs() < 1e-12);
        assert!((r.df - 4.0).abs() < 1e-12);
        // scipy.stats.ttest_ind(b, a, equal_var=False, alternative="greater")
        assert!((r.p_value - 0.286_696_126_912_677_8).abs() < 1e-9, "{}", r.p_value);
        let two = welch_t_test(&[2.0, 4.0, 6.0], &[3.0, 5.0, 7.0], Sided::TwoSided).unwrap();
        assert!((two.p_value - 2.0 * r.p_value).abs() < 1e-12);
    }

    #[test]
    fn degenerate_variances() {
        let zeros = [0.0; 4];
        let tens = [10.0; 4];
        assert_eq!(welch_t_test(&zeros, &tens, Sided::Greater).unwrap().p_value, 0.0);
        assert_eq!(welch_t_test(&zeros, &tens, Sided::TwoSided).unwrap().p_value, 0.0);
        assert_eq!(welch_t_test(&tens, &zeros, Sided::Greater).unwrap().p_value, 1.0);
        assert_eq!(welch_t_test(&tens, &tens, Sided::Greater).unwrap().p_value, 1.0);
    }

    #[test]
    fn too_few_samples() {
        assert!(matches!(
            welch_t_test(&[1.0], &[1.0, 2.0], Sided::Greater),
            Err(Error::InsufficientSamples)
        ));
    }
}
