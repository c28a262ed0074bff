//! Sample statistics shared by the diagnostics.

/// Mean with its standard error.
#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct Estimate {
    pub mean: f64,
    pub se: f64,
}

impl Estimate {
    pub fn exact(value: f64) -> Self {
        Estimate { mean: value, se: 0.0 }
    }

    /// z-score of `self - other` using the combined standard error
    /// `sqrt(se1^2 + se2^2)`.
    pub fn z_against(&self, other: &Estimate) -> f64 {
        z_score(self.mean - other.mean, libm::hypot(self.se, other.se))
    }

    /// z-score of `self - value`.
    pub fn z_against_value(&self, value: f64) -> f64 {
        z_score(self.mean - value, self.se)
    }
}

/// `diff / se`; zero when both vanish, infinite when only the error does.
pub fn z_score(diff: f64, se: f64) -> f64 {
    if se > 0.0 {
        diff / se
    } else if diff == 0.0 {
        0.0
    } else {
        f64::INFINITY.copysign(diff)
    }
}

/// Sample mean and standard error of the mean (n - 1 denominator).
pub fn mean_se(values: &[f64]) -> Estimate {
    let n = values.len();
    if n == 0 {
        return Estimate { mean: f64::NAN, se: f64::NAN };
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    if n == 1 {
        return Estimate { mean, se: 0.0 };
    }
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1) as f64;
    Estimate { mean, se: libm::sqrt(var / n as f64) }
}

/// Sample variance (n - 1 denominator).
pub fn variance(values: &[f64]) -> f64 {
    let n = values.len();
    if n < 2 {
        return 0.0;
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1) as f64
}

/// Sample covariance of paired values with the standard error of the
/// estimate, taken as the standard error of the mean of the centred products.
pub fn covariance_se(x: &[f64], y: &[f64]) -> Estimate {
    assert_eq!(x.len(), y.len());
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let products: alloc::vec::Vec<f64> =
        x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).collect();
    let mut est = mean_se(&products);
    est.mean *= n / (n - 1.0);
    est
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mean_se_small_sample() {
        let e = mean_se(&[1.0, 2.0, 3.0, 4.0]);
        assert!((e.mean - 2.5).abs() < 1e-15);
        // var = 5/3, se = sqrt(5/12)
        assert!((e.se - (5.0f64 / 12.0).sqrt()).abs() < 1e-15);
    }

    #[test]
    fn z_score_edges() {
        assert_eq!(z_score(0.0, 0.0), 0.0);
        assert_eq!(z_score(1.0, 0.0), f64::INFINITY);
        assert_eq!(z_score(-1.0, 0.0), f64::NEG_INFINITY);
        assert_eq!(z_score(1.0, 0.5), 2.0);
    }

    #[test]
    fn covariance_of_identical_series_is_variance() {
        let x = [1.0, 3.0, 2.0, 7.0];
        let c = covariance_se(&x, &x);
        assert!((c.mean - variance(&x)).abs() < 1e-12);
    }
}
