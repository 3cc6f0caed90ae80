//! Running moments and standard errors for Monte Carlo estimates.

use serde::{Deserialize, Serialize};

/// A sample mean (or proportion) with its standard error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub value: f64,
    pub std_err: f64,
}

impl Estimate {
    /// Proportion `k / n` with binomial standard error `sqrt(p̂(1-p̂)/n)`.
    pub fn binomial(successes: u64, trials: u64) -> Option<Self> {
        if trials == 0 {
            return None;
        }
        let p = successes as f64 / trials as f64;
        Some(Estimate {
            value: p,
            std_err: (p * (1.0 - p) / trials as f64).sqrt(),
        })
    }

    /// Number of standard errors between the estimate and `expected`.
    ///
    /// A zero standard error gives `0` on exact agreement and `±inf` otherwise.
    pub fn z_score(&self, expected: f64) -> f64 {
        let diff = self.value - expected;
        if self.std_err > 0.0 {
            diff / self.std_err
        } else if diff == 0.0 {
            0.0
        } else {
            diff.signum() * f64::INFINITY
        }
    }
}

/// z-score of `successes` out of `trials` against a predicted probability,
/// using the predicted variance `p(1-p)/n`. Returns `None` without trials.
pub fn binomial_z(successes: u64, trials: u64, predicted: f64) -> Option<f64> {
    if trials == 0 {
        return None;
    }
    let n = trials as f64;
    let diff = successes as f64 - n * predicted;
    let var = n * predicted * (1.0 - predicted);
    Some(if var > 0.0 {
        diff / var.sqrt()
    } else if diff == 0.0 {
        0.0
    } else {
        diff.signum() * f64::INFINITY
    })
}

/// Streaming mean and variance (Welford), mergeable across workers.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct Moments {
    count: u64,
    mean: f64,
    m2: f64,
}

impl Moments {
    pub fn push(&mut self, x: f64) {
        self.count += 1;
        let delta = x - self.mean;
        self.mean += delta / self.count as f64;
        self.m2 += delta * (x - self.mean);
    }

    pub fn merge(&mut self, other: &Moments) {
        if other.count == 0 {
            return;
        }
        if self.count == 0 {
            *self = *other;
            return;
        }
        let total = self.count + other.count;
        let delta = other.mean - self.mean;
        self.mean += delta * other.count as f64 / total as f64;
        self.m2 += other.m2 + delta * delta * (self.count as f64 * other.count as f64) / total as f64;
        self.count = total;
    }

    pub fn count(&self) -> u64 {
        self.count
    }

    pub fn estimate(&self) -> Estimate {
        let std_err = if self.count > 1 {
            (self.m2 / (self.count - 1) as f64 / self.count as f64).sqrt()
        } else {
            0.0
        };
        Estimate {
            value: self.mean,
            std_err,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn moments_merge_equals_sequential() {
        let xs: Vec<f64> = (0..1000).map(|i| ((i * 37) % 101) as f64 / 101.0).collect();
        let mut all = Moments::default();
        xs.iter().for_each(|&x| all.push(x));
        let mut a = Moments::default();
        let mut b = Moments::default();
        xs[..317].iter().for_each(|&x| a.push(x));
        xs[317..].iter().for_each(|&x| b.push(x));
        a.merge(&b);
        assert_eq!(a.count(), 1000);
        assert!((a.estimate().value - all.estimate().value).abs() < 1e-14);
        assert!((a.estimate().std_err - all.estimate().std_err).abs() < 1e-14);
    }

    #[test]
    fn binomial_estimate() {
        let e = Estimate::binomial(25, 100).unwrap();
        assert_eq!(e.value, 0.25);
        assert!((e.std_err - (0.25f64 * 0.75 / 100.0).sqrt()).abs() < 1e-15);
        assert!(Estimate::binomial(0, 0).is_none());
        assert_eq!(binomial_z(0, 0, 0.3), None);
        assert_eq!(binomial_z(30, 100, 0.3), Some(0.0));
        assert_eq!(binomial_z(0, 100, 0.0), Some(0.0));
    }
}
