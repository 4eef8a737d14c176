//! Round aggregation: mean and Student-t 95% confidence half-width.

use serde::{Deserialize, Serialize};

/// Two-sided 97.5% quantiles of Student's t for 1..=30 degrees of freedom,
/// as printed in standard tables.
const T_975: [f64; 30] = [
    12.706, 4.303, 3.182, 2.776, 2.571, 2.447, 2.365, 2.306, 2.262, 2.228, 2.201, 2.179, 2.160,
    2.145, 2.131, 2.120, 2.110, 2.101, 2.093, 2.086, 2.080, 2.074, 2.069, 2.064, 2.060, 2.056,
    2.052, 2.048, 2.045, 2.042,
];

/// Rows beyond 30 df, taken at the table's 40/60/120/inf breakpoints.
pub fn t_critical_975(df: usize) -> Option<f64> {
    match df {
        0 => None,
        1..=30 => Some(T_975[df - 1]),
        31..=40 => Some(2.021),
        41..=60 => Some(2.000),
        61..=120 => Some(1.980),
        _ => Some(1.960),
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub n: usize,
    pub mean: f64,
    /// Sample standard deviation (n - 1 denominator).
    pub std_dev: Option<f64>,
    /// 95% half-width; absent below two samples.
    pub ci95: Option<f64>,
}

impl Summary {
    pub fn lower(&self) -> Option<f64> {
        self.ci95.map(|h| self.mean - h)
    }
    pub fn upper(&self) -> Option<f64> {
        self.ci95.map(|h| self.mean + h)
    }
}

/// Mean and 95% CI over per-round values. `None` for an empty slice.
pub fn ci95(values: &[f64]) -> Option<Summary> {
    let n = values.len();
    if n == 0 {
        return None;
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    if n < 2 {
        return Some(Summary {
            n,
            mean,
            std_dev: None,
            ci95: None,
        });
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    let sd = var.sqrt();
    let t = t_critical_975(n - 1).expect("df >= 1");
    Some(Summary {
        n,
        mean,
        std_dev: Some(sd),
        ci95: Some(t * sd / (n as f64).sqrt()),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn two_rounds() {
        let s = ci95(&[0.8, 1.0]).unwrap();
        assert!((s.mean - 0.9).abs() < 1e-12);
        let expected = 12.706 * (0.02f64).sqrt() / 2f64.sqrt();
        assert!((s.ci95.unwrap() - expected).abs() < 1e-9);
    }

    #[test]
    fn constant_rounds_have_zero_width() {
        let s = ci95(&[0.98; 10]).unwrap();
        assert!((s.mean - 0.98).abs() < 1e-12);
        assert!(s.ci95.unwrap().abs() < 1e-12);
    }

    #[test]
    fn single_round_has_no_interval() {
        let s = ci95(&[3.0]).unwrap();
        assert_eq!(s.ci95, None);
        assert!(ci95(&[]).is_none());
    }
}
