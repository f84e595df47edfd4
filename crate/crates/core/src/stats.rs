//! Monte Carlo estimators.

use serde::{Deserialize, Serialize};

/// Sample mean with its standard error `s / √N` (unbiased sample variance).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MCEstimate {
    pub mean: f64,
    pub std_error: f64,
    pub num_paths: usize,
}

impl MCEstimate {
    pub fn from_samples(samples: &[f64]) -> Self {
        let n = samples.len();
        if n == 0 {
            return Self {
                mean: f64::NAN,
                std_error: f64::NAN,
                num_paths: 0,
            };
        }
        let mean = samples.iter().sum::<f64>() / n as f64;
        let std_error = if n < 2 {
            0.0
        } else {
            let var = samples.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
            (var / n as f64).sqrt()
        };
        Self {
            mean,
            std_error,
            num_paths: n,
        }
    }

    /// Estimate of `E[b − a]` from samples paired by path.
    pub fn paired_difference(a: &[f64], b: &[f64]) -> Self {
        assert_eq!(a.len(), b.len(), "paired samples must have equal length");
        let d: Vec<f64> = a.iter().zip(b).map(|(x, y)| y - x).collect();
        Self::from_samples(&d)
    }

    pub fn is_finite(&self) -> bool {
        self.mean.is_finite() && self.std_error.is_finite()
    }

    /// `mean ≤ bound + k·std_error`.
    pub fn below(&self, bound: f64, k: f64) -> bool {
        self.mean <= bound + k * self.std_error
    }
}
