//! Summary statistics and fixed-bin histograms over latency samples.

use std::fmt::Write;

use serde::{Deserialize, Serialize};

use super::SimError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub count: usize,
    pub mean: f64,
    pub median: f64,
    pub p95: f64,
    pub max: f64,
}

/// Mean, median (midpoint of the two central values for even counts),
/// nearest-rank 95th percentile and maximum.
pub fn summarize(samples: &[f64]) -> Result<Summary, SimError> {
    if samples.is_empty() {
        return Err(SimError::EmptyInput);
    }
    let mut sorted = samples.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len();
    let mean = sorted.iter().sum::<f64>() / n as f64;
    let median = if n % 2 == 1 { sorted[n / 2] } else { 0.5 * (sorted[n / 2 - 1] + sorted[n / 2]) };
    let rank = ((0.95 * n as f64).ceil() as usize).clamp(1, n);
    Ok(Summary { count: n, mean, median, p95: sorted[rank - 1], max: sorted[n - 1] })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    pub lo: f64,
    pub bin_width: f64,
    pub counts: Vec<u64>,
}

/// `bins` equal-width bins spanning `[0, max]`; the maximum lands in the last bin.
pub fn histogram(samples: &[f64], bins: usize) -> Result<Histogram, SimError> {
    if samples.is_empty() {
        return Err(SimError::EmptyInput);
    }
    if bins == 0 {
        return Err(SimError::InvalidConfig("histogram needs at least one bin".into()));
    }
    let max = samples.iter().copied().fold(0.0f64, f64::max);
    let bin_width = if max > 0.0 { max / bins as f64 } else { 1.0 };
    let mut counts = vec![0u64; bins];
    for &x in samples {
        let i = ((x.max(0.0) / bin_width) as usize).min(bins - 1);
        counts[i] += 1;
    }
    Ok(Histogram { lo: 0.0, bin_width, counts })
}

impl Histogram {
    /// `bin_lo,bin_hi,count` rows with a header line.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("bin_lo,bin_hi,count\n");
        for (i, c) in self.counts.iter().enumerate() {
            let lo = self.lo + i as f64 * self.bin_width;
            let _ = writeln!(out, "{:.6},{:.6},{}", lo, lo + self.bin_width, c);
        }
        out
    }

    /// Density per bin, so the histogram integrates to one.
    pub fn densities(&self) -> Vec<f64> {
        let total: u64 = self.counts.iter().sum();
        self.counts.iter().map(|&c| c as f64 / (total as f64 * self.bin_width)).collect()
    }
}
