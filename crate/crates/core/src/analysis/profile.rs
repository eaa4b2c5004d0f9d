use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::read_matrix;
use crate::linalg::{exact_svd, svd_entropy};
use crate::matrix::Matrix;

pub const DEFAULT_BINS: usize = 50;
pub const MANIFEST_JSON: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusEntry {
    pub path: PathBuf,
    pub length: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<String>,
}

/// Sequence files plus length buckets `[lo, hi]` (inclusive).
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct CorpusManifest {
    pub entries: Vec<CorpusEntry>,
    #[serde(default)]
    pub bins: Vec<[usize; 2]>,
}

impl CorpusManifest {
    /// Load a manifest; relative entry paths resolve against its directory.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut manifest: CorpusManifest =
            serde_json::from_str(&text).map_err(|e| Error::format(path, e.to_string()))?;
        let base = path.parent().unwrap_or(Path::new("."));
        for entry in &mut manifest.entries {
            if entry.path.is_relative() {
                entry.path = base.join(&entry.path);
            }
        }
        for &[lo, hi] in &manifest.bins {
            if lo > hi {
                return Err(Error::format(path, format!("length bucket [{lo}, {hi}] is reversed")));
            }
        }
        Ok(manifest)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, serde_json::to_string_pretty(self)? + "\n").map_err(|e| Error::io(path, e))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SequenceRecord {
    pub path: PathBuf,
    pub length: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<String>,
    pub mu: f64,
    pub effective_rank: usize,
    pub ratio: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EntryError {
    pub path: PathBuf,
    pub message: String,
}

/// Probability-density histogram of `ratio` for one length bucket.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    pub bucket: [usize; 2],
    pub count: usize,
    /// `densities.len() + 1` equal-width edges.
    pub edges: Vec<f64>,
    pub densities: Vec<f64>,
}

impl Histogram {
    pub fn integral(&self) -> f64 {
        self.densities.iter().zip(self.edges.windows(2)).map(|(d, w)| d * (w[1] - w[0])).sum()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProfileReport {
    pub bins: usize,
    pub records: Vec<SequenceRecord>,
    pub errors: Vec<EntryError>,
    /// One per non-empty length bucket.
    pub histograms: Vec<Histogram>,
}

impl ProfileReport {
    /// `bucket_lo,bucket_hi,bin_lo,bin_hi,density`, one line per bin.
    pub fn histogram_csv(&self) -> String {
        let mut out = String::from("bucket_lo,bucket_hi,bin_lo,bin_hi,density\n");
        for h in &self.histograms {
            for (d, w) in h.densities.iter().zip(h.edges.windows(2)) {
                out.push_str(&format!("{},{},{},{},{}\n", h.bucket[0], h.bucket[1], w[0], w[1], d));
            }
        }
        out
    }
}

fn profile_entry(entry: &CorpusEntry) -> Result<SequenceRecord> {
    let x: Matrix = read_matrix(&entry.path)?;
    if x.rows() != entry.length {
        return Err(Error::format(
            &entry.path,
            format!("manifest says length {} but the matrix has {} rows", entry.length, x.rows()),
        ));
    }
    let svd = exact_svd(&x)?;
    let report = svd_entropy(&svd.singular_values, x.rows())?;
    Ok(SequenceRecord {
        path: entry.path.clone(),
        length: entry.length,
        label: entry.label.clone(),
        mu: report.mu,
        effective_rank: report.effective_rank,
        ratio: report.ratio,
    })
}

pub fn histogram(bucket: [usize; 2], values: &[f64], bins: usize) -> Histogram {
    let count = values.len();
    let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if hi - lo <= 0.0 {
        // A single observed value: one bin of width 1/bins centred on it.
        let w = 1.0 / bins as f64;
        return Histogram { bucket, count, edges: vec![lo - w / 2.0, lo + w / 2.0], densities: vec![1.0 / w] };
    }
    let width = (hi - lo) / bins as f64;
    let mut counts = vec![0usize; bins];
    for &v in values {
        let k = (((v - lo) / width) as usize).min(bins - 1);
        counts[k] += 1;
    }
    let edges = (0..=bins).map(|k| if k == bins { hi } else { lo + k as f64 * width }).collect();
    let densities = counts.iter().map(|&c| c as f64 / (count as f64 * width)).collect();
    Histogram { bucket, count, edges, densities }
}

/// Exact-SVD entropy of every sequence, bucketed histograms of
/// `ceil(2^mu)/L`. Unreadable entries are recorded and skipped.
pub fn profile_corpus(manifest: &CorpusManifest, bins: usize) -> Result<ProfileReport> {
    if manifest.entries.is_empty() {
        return Err(Error::invalid("corpus has no entries"));
    }
    if bins == 0 {
        return Err(Error::invalid("histogram needs at least one bin"));
    }
    let outcomes: Vec<_> = manifest.entries.par_iter().map(|e| (e, profile_entry(e))).collect();
    let mut records = Vec::new();
    let mut errors = Vec::new();
    for (entry, outcome) in outcomes {
        match outcome {
            Ok(r) => records.push(r),
            Err(e) => errors.push(EntryError { path: entry.path.clone(), message: e.to_string() }),
        }
    }
    records.sort_by(|a, b| a.path.cmp(&b.path).then(a.length.cmp(&b.length)).then(a.ratio.total_cmp(&b.ratio)));
    errors.sort_by(|a, b| a.path.cmp(&b.path).then(a.message.cmp(&b.message)));

    let buckets = if manifest.bins.is_empty() {
        let lo = records.iter().map(|r| r.length).min();
        let hi = records.iter().map(|r| r.length).max();
        lo.zip(hi).map(|(lo, hi)| vec![[lo, hi]]).unwrap_or_default()
    } else {
        manifest.bins.clone()
    };
    let histograms = buckets
        .into_iter()
        .filter_map(|bucket| {
            let values: Vec<f64> =
                records.iter().filter(|r| (bucket[0]..=bucket[1]).contains(&r.length)).map(|r| r.ratio).collect();
            (!values.is_empty()).then(|| histogram(bucket, &values, bins))
        })
        .collect();
    Ok(ProfileReport { bins, records, errors, histograms })
}
