//! Small statistics toolkit: running moments with associative merging,
//! least-squares lines with t-based confidence bands, and a one-sample
//! Kolmogorov-Smirnov test.

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

/// Running mean and variance (Chan et al. pairwise update).
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Moments {
    pub count: u64,
    pub mean: f64,
    m2: f64,
}

impl Moments {
    pub fn push(&mut self, x: f64) {
        self.count += 1;
        let d = x - self.mean;
        self.mean += d / self.count as f64;
        self.m2 += d * (x - self.mean);
    }

    pub fn merge(mut self, other: Moments) -> Moments {
        if other.count == 0 {
            return self;
        }
        if self.count == 0 {
            return other;
        }
        let n = (self.count + other.count) as f64;
        let d = other.mean - self.mean;
        self.mean += d * other.count as f64 / n;
        self.m2 += other.m2 + d * d * self.count as f64 * other.count as f64 / n;
        self.count += other.count;
        self
    }

    pub fn from_slice(xs: &[f64]) -> Moments {
        let mut m = Moments::default();
        for &x in xs {
            m.push(x);
        }
        m
    }

    /// Unbiased sample variance.
    pub fn variance(&self) -> f64 {
        if self.count < 2 {
            return f64::NAN;
        }
        self.m2 / (self.count - 1) as f64
    }

    /// Standard error of the mean.
    pub fn std_error(&self) -> f64 {
        (self.variance() / self.count as f64).sqrt()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LinearFit {
    pub slope: f64,
    pub intercept: f64,
    pub slope_se: f64,
    pub r_squared: f64,
    /// Two-sided 95% confidence interval for the slope.
    pub slope_ci95: (f64, f64),
    pub points: usize,
}

/// Ordinary least squares `y = intercept + slope x`.
pub fn linear_fit(x: &[f64], y: &[f64]) -> LinearFit {
    weighted_fit(x, y, &vec![1.0; x.len()])
}

/// Weighted least squares with weights `w` (typically `1 / se^2`).
///
/// The slope standard error uses the residual scatter, so it stays honest
/// when the supplied weights are off by a constant factor.
pub fn weighted_fit(x: &[f64], y: &[f64], w: &[f64]) -> LinearFit {
    let n = x.len().min(y.len()).min(w.len());
    let sw: f64 = w[..n].iter().sum();
    let mx = (0..n).map(|i| w[i] * x[i]).sum::<f64>() / sw;
    let my = (0..n).map(|i| w[i] * y[i]).sum::<f64>() / sw;
    let sxx: f64 = (0..n).map(|i| w[i] * (x[i] - mx).powi(2)).sum();
    let sxy: f64 = (0..n).map(|i| w[i] * (x[i] - mx) * (y[i] - my)).sum();
    let syy: f64 = (0..n).map(|i| w[i] * (y[i] - my).powi(2)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let rss: f64 = (0..n).map(|i| w[i] * (y[i] - intercept - slope * x[i]).powi(2)).sum();
    let dof = n.saturating_sub(2);
    let slope_se = if dof > 0 { (rss / dof as f64 / sxx).sqrt() } else { f64::NAN };
    let r_squared = if syy > 0.0 { 1.0 - rss / syy } else { 1.0 };
    let q = t_quantile(0.975, dof);
    LinearFit {
        slope,
        intercept,
        slope_se,
        r_squared,
        slope_ci95: (slope - q * slope_se, slope + q * slope_se),
        points: n,
    }
}

/// Quantile of Student's t with `dof` degrees of freedom.
pub fn t_quantile(p: f64, dof: usize) -> f64 {
    if dof == 0 {
        return f64::NAN;
    }
    StudentsT::new(0.0, 1.0, dof as f64).map(|t| t.inverse_cdf(p)).unwrap_or(f64::NAN)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KsResult {
    pub statistic: f64,
    pub p_value: f64,
}

/// One-sample Kolmogorov-Smirnov test of `sample` against the CDF `cdf`,
/// with the asymptotic Kolmogorov p-value.
pub fn ks_test(sample: &[f64], cdf: impl Fn(f64) -> f64) -> KsResult {
    let mut xs = sample.to_vec();
    xs.sort_by(f64::total_cmp);
    let n = xs.len() as f64;
    let mut d: f64 = 0.0;
    for (i, &x) in xs.iter().enumerate() {
        let f = cdf(x);
        d = d.max((i as f64 + 1.0) / n - f).max(f - i as f64 / n);
    }
    let lambda = (n.sqrt() + 0.12 + 0.11 / n.sqrt()) * d;
    KsResult { statistic: d, p_value: kolmogorov_sf(lambda) }
}

/// `P(K > lambda)` for the Kolmogorov distribution.
fn kolmogorov_sf(lambda: f64) -> f64 {
    if lambda < 0.2 {
        return 1.0;
    }
    let mut sum = 0.0;
    for k in 1..=100 {
        let k = k as f64;
        let term = 2.0 * (-2.0 * k * k * lambda * lambda).exp();
        sum += if k as i64 % 2 == 1 { term } else { -term };
        if term < 1e-16 {
            break;
        }
    }
    sum.clamp(0.0, 1.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};

    #[test]
    fn moments_merge_is_associative() {
        let xs: Vec<f64> = (0..101).map(|i| (i as f64 * 0.37).sin() * 3.0 + 1.0).collect();
        let whole = Moments::from_slice(&xs);
        let merged = Moments::from_slice(&xs[..40]).merge(Moments::from_slice(&xs[40..]));
        assert!((whole.mean - merged.mean).abs() < 1e-13);
        assert!((whole.variance() - merged.variance()).abs() < 1e-12);
        let mean = xs.iter().sum::<f64>() / 101.0;
        let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / 100.0;
        assert!((whole.variance() - var).abs() < 1e-12);
    }

    #[test]
    fn exact_line_is_recovered() {
        let x = [1.0, 2.0, 3.0, 4.0];
        let y: Vec<f64> = x.iter().map(|v| 2.5 * v - 1.0).collect();
        let f = linear_fit(&x, &y);
        assert!((f.slope - 2.5).abs() < 1e-12);
        assert!((f.intercept + 1.0).abs() < 1e-12);
        assert!((f.r_squared - 1.0).abs() < 1e-12);
    }

    #[test]
    fn t_quantiles() {
        assert!((t_quantile(0.975, 2) - 4.302652729911275).abs() < 1e-9);
        assert!((t_quantile(0.975, 1000) - 1.962339).abs() < 1e-5);
    }

    #[test]
    fn ks_accepts_uniform_and_rejects_shifted() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let u: Vec<f64> = (0..5000).map(|_| rng.random::<f64>()).collect();
        let uniform = |x: f64| x.clamp(0.0, 1.0);
        assert!(ks_test(&u, uniform).p_value > 0.01);
        let shifted: Vec<f64> = u.iter().map(|x| x * 0.95).collect();
        assert!(ks_test(&shifted, uniform).p_value < 1e-6);
    }
}
