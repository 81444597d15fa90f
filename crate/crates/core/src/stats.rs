//! Replicate summaries that do not depend on how work was split across threads.

use serde::{Deserialize, Serialize};

/// Sum by recursive halving of the slice. The result depends only on the
/// order of `xs`, and the rounding error grows like `log n`.
pub fn pairwise_sum(xs: &[f64]) -> f64 {
    const LEAF: usize = 32;
    if xs.len() <= LEAF {
        return xs.iter().sum();
    }
    let (a, b) = xs.split_at(xs.len() / 2);
    pairwise_sum(a) + pairwise_sum(b)
}

/// Sample mean with its standard error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanSe {
    pub n: usize,
    pub mean: f64,
    /// Sample standard deviation over `√n`; NaN for fewer than two samples.
    pub se: f64,
}

impl MeanSe {
    pub fn from_samples(xs: &[f64]) -> Self {
        let n = xs.len();
        if n == 0 {
            return Self { n, mean: f64::NAN, se: f64::NAN };
        }
        let mean = pairwise_sum(xs) / n as f64;
        let se = if n < 2 {
            f64::NAN
        } else {
            let dev: Vec<f64> = xs.iter().map(|x| (x - mean) * (x - mean)).collect();
            (pairwise_sum(&dev) / (n - 1) as f64 / n as f64).sqrt()
        };
        Self { n, mean, se }
    }

    /// `|mean − target| ≤ k·se`.
    pub fn within(&self, target: f64, k: f64) -> bool {
        (self.mean - target).abs() <= k * self.se
    }

    pub fn relative_error(&self, target: f64) -> f64 {
        ((self.mean - target) / target).abs()
    }
}
