//! Corpus-level SVD-entropy profiling and energy curves.

mod profile;
mod synth;

pub use profile::{
    histogram, profile_corpus, CorpusEntry, CorpusManifest, EntryError, Histogram, ProfileReport, SequenceRecord,
    DEFAULT_BINS, MANIFEST_JSON,
};
pub use synth::{entry_name, synth_corpus, synth_matrices, synth_matrices_with_rng, write_corpus, SynthSpec};

use crate::error::{Error, Result};
use crate::linalg::entropy::ceil_with_slack;
use crate::linalg::{energy_ratio, exact_svd, truncate_svd};
use crate::matrix::Matrix;

/// Captured energy of the exact truncation at `r = max(1, ceil(f min(L, d)))`
/// for each kept fraction `f`.
pub fn energy_curve(x: &Matrix, fractions: &[f64]) -> Result<Vec<(f64, f64)>> {
    if fractions.iter().any(|f| !(*f > 0.0 && *f <= 1.0)) {
        return Err(Error::invalid("fractions must lie in (0, 1]"));
    }
    if fractions.windows(2).any(|w| w[0] > w[1]) {
        return Err(Error::invalid("fractions must be sorted ascending"));
    }
    if x.frobenius_sq() == 0.0 {
        return Err(Error::Degenerate("zero matrix has no energy".into()));
    }
    let svd = exact_svd(x)?;
    let m = x.rows().min(x.cols());
    fractions
        .iter()
        .map(|&f| {
            let r = ceil_with_slack(f * m as f64).clamp(1, m);
            Ok((f, energy_ratio(x, &truncate_svd(&svd, r)?)?))
        })
        .collect()
}
