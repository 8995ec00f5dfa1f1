//! SNR histograms over manifests.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use spoofbench_core::corpus::CorpusManifest;
use spoofbench_core::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistogramReport {
    /// `counts.len() + 1` edges, 1 dB apart.
    pub edges: Vec<f64>,
    pub counts: Vec<usize>,
    pub mean: f64,
    /// Population variance.
    pub variance: f64,
    pub source: String,
    /// Records without an SNR estimate, left out of the statistics.
    #[serde(default)]
    pub unscored: usize,
}

impl HistogramReport {
    pub fn from_values(values: &[f64], source: impl Into<String>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::InvalidArgument("no SNR values to report".into()));
        }
        if let Some(v) = values.iter().find(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument(format!("non-finite SNR {v}")));
        }
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let variance = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let bins = ((hi - lo).floor() as usize + 1).max(1);
        let edges: Vec<f64> = (0..=bins).map(|i| lo + i as f64).collect();
        let mut counts = vec![0; bins];
        for v in values {
            counts[(((v - lo).floor()) as usize).min(bins - 1)] += 1;
        }
        Ok(Self { edges, counts, mean, variance, source: source.into(), unscored: 0 })
    }

    /// Columnar text: commented summary lines, then `lo hi count` rows.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        writeln!(s, "# source {}", self.source).unwrap();
        writeln!(s, "# records {}", self.counts.iter().sum::<usize>()).unwrap();
        writeln!(s, "# unscored {}", self.unscored).unwrap();
        writeln!(s, "# mean_db {:.6}", self.mean).unwrap();
        writeln!(s, "# variance_db2 {:.6}", self.variance).unwrap();
        writeln!(s, "lo_db\thi_db\tcount").unwrap();
        for (i, c) in self.counts.iter().enumerate() {
            writeln!(s, "{:.3}\t{:.3}\t{c}", self.edges[i], self.edges[i + 1]).unwrap();
        }
        s
    }
}

pub fn snr_report(manifest: &CorpusManifest, source: &str) -> Result<HistogramReport> {
    if manifest.is_empty() {
        return Err(Error::InvalidArgument(format!("manifest {source} is empty")));
    }
    let values: Vec<f64> = manifest.records().iter().filter_map(|r| r.snr_db).collect();
    if values.is_empty() {
        return Err(Error::InvalidArgument(format!("no record in {source} has an SNR estimate")));
    }
    let mut rep = HistogramReport::from_values(&values, source)?;
    rep.unscored = manifest.len() - values.len();
    Ok(rep)
}
