//! Seeded sample points in a coordinate box.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::chart::ChartSpec;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SamplingSpec {
    #[serde(default = "default_count")]
    pub count: usize,
    #[serde(default = "default_seed")]
    pub seed: u64,
    /// Per-coordinate `[low, high]`; missing entries use `[low, high]` below.
    #[serde(default)]
    pub bounds: Vec<(f64, f64)>,
    #[serde(default = "default_low")]
    pub low: f64,
    #[serde(default = "default_high")]
    pub high: f64,
}

fn default_count() -> usize {
    20
}
fn default_seed() -> u64 {
    0
}
fn default_low() -> f64 {
    -1.0
}
fn default_high() -> f64 {
    1.0
}

impl Default for SamplingSpec {
    fn default() -> Self {
        SamplingSpec { count: default_count(), seed: default_seed(), bounds: Vec::new(), low: default_low(), high: default_high() }
    }
}

impl SamplingSpec {
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn with_count(mut self, count: usize) -> Self {
        self.count = count;
        self
    }

    fn bound(&self, i: usize) -> (f64, f64) {
        self.bounds.get(i).copied().unwrap_or((self.low, self.high))
    }

    /// `count` points of dimension `chart.dim()`, identical for equal seeds.
    pub fn sample(&self, chart: &ChartSpec) -> Result<Vec<Vec<f64>>> {
        let n = chart.dim();
        if self.bounds.len() > n {
            return Err(Error::config("sampling.bounds", format!("{} entries for a {n}-dimensional chart", self.bounds.len())));
        }
        for i in 0..n {
            let (lo, hi) = self.bound(i);
            if !(lo.is_finite() && hi.is_finite() && lo <= hi) {
                return Err(Error::config("sampling.bounds", format!("invalid interval [{lo}, {hi}] for `{}`", chart.names()[i])));
            }
        }
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        Ok((0..self.count)
            .map(|_| {
                (0..n)
                    .map(|i| {
                        let (lo, hi) = self.bound(i);
                        if lo == hi { lo } else { rng.gen_range(lo..hi) }
                    })
                    .collect()
            })
            .collect())
    }
}

/// Tensor grid `(i − k)/k` for `i = 0..=2k` over the listed coordinates; all
/// other coordinates zero.
pub fn grid(chart: &ChartSpec, coords: &[usize], half: usize) -> Vec<Vec<f64>> {
    let side = 2 * half + 1;
    let total = side.pow(coords.len() as u32);
    (0..total)
        .map(|mut k| {
            let mut p = vec![0.0; chart.dim()];
            for &c in coords.iter().rev() {
                p[c] = ((k % side) as f64 - half as f64) / half as f64;
                k /= side;
            }
            p
        })
        .collect()
}
