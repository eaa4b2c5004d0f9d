use std::fs;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::analysis::profile::{CorpusEntry, CorpusManifest, MANIFEST_JSON};
use crate::error::{Error, Result};
use crate::io::write_matx;
use crate::matrix::Matrix;
use crate::scalar::Dtype;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    pub count: usize,
    pub length: usize,
    pub dim: usize,
    pub intrinsic_rank: usize,
    pub noise_level: f64,
    pub seed: u64,
}

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        if self.length == 0 || self.dim == 0 {
            return Err(Error::invalid("length and dim must be positive"));
        }
        if self.intrinsic_rank == 0 || self.intrinsic_rank > self.length.min(self.dim) {
            return Err(Error::invalid(format!(
                "intrinsic rank {} outside 1..={}",
                self.intrinsic_rank,
                self.length.min(self.dim)
            )));
        }
        if !(self.noise_level >= 0.0 && self.noise_level.is_finite()) {
            return Err(Error::invalid(format!("noise level must be non-negative, got {}", self.noise_level)));
        }
        Ok(())
    }
}

/// `A B + noise N` with Gaussian `A: L x k`, `B: k x d`, `N: L x d`, drawn in
/// sequence from one generator.
pub fn synth_matrices(spec: &SynthSpec) -> Result<Vec<Matrix>> {
    synth_matrices_with_rng(spec, &mut ChaCha8Rng::seed_from_u64(spec.seed))
}

/// As [`synth_matrices`], drawing from a caller's generator (`spec.seed` is unused).
pub fn synth_matrices_with_rng<R: Rng + ?Sized>(spec: &SynthSpec, rng: &mut R) -> Result<Vec<Matrix>> {
    spec.validate()?;
    (0..spec.count)
        .map(|_| {
            let a: Matrix = Matrix::random_normal(spec.length, spec.intrinsic_rank, rng);
            let b = Matrix::random_normal(spec.intrinsic_rank, spec.dim, rng);
            let n = Matrix::random_normal(spec.length, spec.dim, rng);
            a.matmul(&b)?.add(&n.scale(spec.noise_level))
        })
        .collect()
}

pub fn entry_name(index: usize) -> String {
    format!("seq_{index:05}.matx")
}

/// Write the corpus and `manifest.json` into `dir`. The returned manifest
/// carries resolved paths; the written one uses file names relative to `dir`.
pub fn synth_corpus(spec: &SynthSpec, dir: impl AsRef<Path>) -> Result<CorpusManifest> {
    write_corpus(&synth_matrices(spec)?, spec.length, dir)
}

/// Write `matrices` as `seq_NNNNN.matx` plus a manifest with one length bucket.
pub fn write_corpus(matrices: &[Matrix], length: usize, dir: impl AsRef<Path>) -> Result<CorpusManifest> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut entries = Vec::with_capacity(matrices.len());
    for (i, m) in matrices.iter().enumerate() {
        let name = entry_name(i);
        write_matx(m, dir.join(&name), Dtype::F64)?;
        entries.push(CorpusEntry { path: PathBuf::from(name), length, label: None });
    }
    let written = CorpusManifest { entries, bins: vec![[length, length]] };
    written.save(dir.join(MANIFEST_JSON))?;
    let mut resolved = written;
    for e in &mut resolved.entries {
        e.path = dir.join(&e.path);
    }
    Ok(resolved)
}
