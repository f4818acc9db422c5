//! Small-sample summary statistics.

pub fn mean(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return f64::NAN;
    }
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Sample standard deviation (`n - 1` denominator); zero for a single value.
pub fn sample_sd(xs: &[f64]) -> f64 {
    match xs.len() {
        0 => f64::NAN,
        1 => 0.0,
        n => {
            let m = mean(xs);
            (xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (n - 1) as f64).sqrt()
        }
    }
}

/// Pooled standard deviation of equally sized groups, `√(mean of variances)`.
pub fn pooled_sd(sds: &[f64]) -> f64 {
    mean(&sds.iter().map(|s| s * s).collect::<Vec<_>>()).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn textbook_values() {
        let xs = [2.0, 4.0, 4.0, 4.0, 5.0, 5.0, 7.0, 9.0];
        assert_eq!(mean(&xs), 5.0);
        assert!((sample_sd(&xs) - (32.0f64 / 7.0).sqrt()).abs() < 1e-15);
        assert_eq!(sample_sd(&[3.0]), 0.0);
        assert_eq!(pooled_sd(&[3.0, 4.0]), 12.5f64.sqrt());
    }
}
