//! Confidence intervals for Monte Carlo estimates.

use serde::{Deserialize, Serialize};

/// Two-sided 95% standard normal quantile.
pub const Z95: f64 = 1.959_963_984_540_054;

/// A point estimate with a 95% confidence interval.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub value: f64,
    pub ci_low: f64,
    pub ci_high: f64,
}

impl Estimate {
    pub fn contains(&self, x: f64) -> bool {
        self.ci_low <= x && x <= self.ci_high
    }

    pub fn half_width(&self) -> f64 {
        0.5 * (self.ci_high - self.ci_low)
    }
}

/// Wilson score interval for `successes` out of `n`.
pub fn wilson(successes: u64, n: u64) -> Estimate {
    if n == 0 {
        return Estimate {
            value: 0.0,
            ci_low: 0.0,
            ci_high: 1.0,
        };
    }
    let nf = n as f64;
    let p = successes as f64 / nf;
    let z2 = Z95 * Z95;
    let denom = 1.0 + z2 / nf;
    let centre = (p + z2 / (2.0 * nf)) / denom;
    let half = Z95 * (p * (1.0 - p) / nf + z2 / (4.0 * nf * nf)).sqrt() / denom;
    Estimate {
        value: p,
        ci_low: if successes == 0 { 0.0 } else { (centre - half).max(0.0) },
        ci_high: if successes == n { 1.0 } else { (centre + half).min(1.0) },
    }
}

/// Normal-approximation interval for a sample mean from integer moments.
pub fn mean_ci(sum: u64, sum_sq: u128, n: u64) -> Estimate {
    if n == 0 {
        return Estimate {
            value: f64::NAN,
            ci_low: f64::NAN,
            ci_high: f64::NAN,
        };
    }
    let nf = n as f64;
    let mean = sum as f64 / nf;
    let var = if n > 1 {
        ((sum_sq as f64 - nf * mean * mean) / (nf - 1.0)).max(0.0)
    } else {
        0.0
    };
    let half = Z95 * (var / nf).sqrt();
    Estimate {
        value: mean,
        ci_low: mean - half,
        ci_high: mean + half,
    }
}
