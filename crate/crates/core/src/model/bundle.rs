//! Layer weight bundles: a directory of MATX files plus `layer.json`.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::attention::{AttentionConfig, AttentionWeights, Normalizer};
use crate::error::{Error, Result};
use crate::io::{read_matx, write_matx};
use crate::linalg::{RankPolicy, DEFAULT_INNER_ITERS};
use crate::matrix::Matrix;
use crate::model::layer::{EncoderLayer, Norm, NormKind, PeMode, PositionalEncoding};
use crate::scalar::Dtype;

pub const LAYER_JSON: &str = "layer.json";

/// Contents of `layer.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerSpec {
    pub heads: usize,
    pub rank_policy: RankPolicy,
    #[serde(default)]
    pub pe: PeMode,
    #[serde(default)]
    pub normalizer: Normalizer,
    #[serde(default = "default_true")]
    pub scale: bool,
    #[serde(default = "default_epsilon")]
    pub epsilon: f64,
    #[serde(default = "default_base")]
    pub pe_base: f64,
    #[serde(default)]
    pub norm: NormKind,
    #[serde(default = "default_true")]
    pub reorthogonalize: bool,
    #[serde(default = "default_inner_iters")]
    pub inner_iters: usize,
}

fn default_true() -> bool {
    true
}
fn default_epsilon() -> f64 {
    AttentionConfig::default().epsilon
}
fn default_base() -> f64 {
    PositionalEncoding::default().base
}
fn default_inner_iters() -> usize {
    DEFAULT_INNER_ITERS
}

const MATRICES: [&str; 6] = ["wq", "wk", "wv", "wo", "ffn_w1", "ffn_w2"];

fn vector_matrix(v: &[f64]) -> Result<Matrix> {
    Matrix::new(1, v.len(), v.to_vec())
}

pub fn save_layer(dir: impl AsRef<Path>, layer: &EncoderLayer, pe: &PositionalEncoding) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let w = &layer.attn_weights;
    for (name, m) in MATRICES.iter().zip([&w.wq, &w.wk, &w.wv, &layer.wo, &layer.ffn_w1, &layer.ffn_w2]) {
        write_matx(m, dir.join(format!("{name}.matx")), Dtype::F64)?;
    }
    for (name, v) in [
        ("norm1_scale", &layer.norm1.scale),
        ("norm1_offset", &layer.norm1.offset),
        ("norm2_scale", &layer.norm2.scale),
        ("norm2_offset", &layer.norm2.offset),
    ] {
        write_matx(&vector_matrix(v)?, dir.join(format!("{name}.matx")), Dtype::F64)?;
    }
    let spec = LayerSpec {
        heads: w.heads,
        rank_policy: layer.rank_policy,
        pe: pe.mode,
        normalizer: layer.config.normalizer,
        scale: layer.config.scale,
        epsilon: layer.config.epsilon,
        pe_base: pe.base,
        norm: layer.norm1.kind,
        reorthogonalize: layer.reorthogonalize,
        inner_iters: layer.inner_iters,
    };
    let path = dir.join(LAYER_JSON);
    fs::write(&path, serde_json::to_string_pretty(&spec)? + "\n").map_err(|e| Error::io(path, e))
}

fn read_vector(dir: &Path, name: &str) -> Result<Vec<f64>> {
    let path = dir.join(format!("{name}.matx"));
    let m: Matrix = read_matx(&path)?;
    if m.rows() != 1 && m.cols() != 1 {
        return Err(Error::format(path, format!("expected a vector, found {}x{}", m.rows(), m.cols())));
    }
    Ok(m.into_vec())
}

pub fn load_layer(dir: impl AsRef<Path>) -> Result<(EncoderLayer, PositionalEncoding)> {
    let dir = dir.as_ref();
    let path = dir.join(LAYER_JSON);
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let spec: LayerSpec = serde_json::from_str(&text).map_err(|e| Error::format(&path, e.to_string()))?;
    let mut m: Vec<Matrix> =
        MATRICES.iter().map(|name| read_matx(dir.join(format!("{name}.matx")))).collect::<Result<_>>()?;
    let (w2, w1, wo, wv, wk, wq) = (m.remove(5), m.remove(4), m.remove(3), m.remove(2), m.remove(1), m.remove(0));
    let norm = |prefix: &str| -> Result<Norm> {
        Ok(Norm {
            kind: spec.norm,
            scale: read_vector(dir, &format!("{prefix}_scale"))?,
            offset: read_vector(dir, &format!("{prefix}_offset"))?,
        })
    };
    let config =
        AttentionConfig { scale: spec.scale, normalizer: spec.normalizer, epsilon: spec.epsilon, ..Default::default() };
    let mut layer = EncoderLayer::new(
        AttentionWeights::new(wq, wk, wv, spec.heads)?,
        wo,
        w1,
        w2,
        norm("norm1")?,
        norm("norm2")?,
        spec.rank_policy,
        config,
    )?;
    layer.reorthogonalize = spec.reorthogonalize;
    layer.inner_iters = spec.inner_iters;
    layer.validate()?;
    Ok((layer, PositionalEncoding { mode: spec.pe, base: spec.pe_base }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn bundle_roundtrip() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let layer =
            EncoderLayer::random(6, 4, 8, 2, RankPolicy::Fraction(0.25), AttentionConfig::default(), &mut rng).unwrap();
        let pe = PositionalEncoding::new(PeMode::Rotary);
        let dir = tempfile::tempdir().unwrap();
        save_layer(dir.path(), &layer, &pe).unwrap();
        let (back, pe_back) = load_layer(dir.path()).unwrap();
        assert_eq!(back, layer);
        assert_eq!(pe_back, pe);
    }

    #[test]
    fn minimal_json_uses_defaults() {
        let spec: LayerSpec = serde_json::from_str(r#"{"heads": 2, "rank_policy": {"fixed": 4}}"#).unwrap();
        assert_eq!(spec.pe, PeMode::None);
        assert_eq!(spec.normalizer, Normalizer::RowSum);
        assert!(spec.reorthogonalize);
        let spec: LayerSpec =
            serde_json::from_str(r#"{"heads": 1, "rank_policy": {"entropy": 1.0}, "pe": "absolute-sinusoidal", "normalizer": "taylor-denominator"}"#)
                .unwrap();
        assert_eq!(spec.pe, PeMode::AbsoluteSinusoidal);
    }

    #[test]
    fn missing_file_names_path() {
        let dir = tempfile::tempdir().unwrap();
        match load_layer(dir.path()) {
            Err(Error::Io { path, .. }) => assert!(path.ends_with(LAYER_JSON)),
            other => panic!("{other:?}"),
        }
    }
}
