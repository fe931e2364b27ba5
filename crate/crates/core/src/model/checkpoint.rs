//! Versioned, self-describing checkpoint archive.
//!
//! A checkpoint is a single JSON document holding the encoder spec, every
//! trainable tensor, and the run seed. Serialisation of a fixed parameter set
//! is byte-stable: maps are ordered and floats use shortest round-trip form.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;
use std::sync::Arc;

use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};

use super::{ClassificationHead, Encoder, EncoderSpec, ModelBundle, ModelError, SharedLayer};
use crate::corpus::Granularity;

pub const CHECKPOINT_FORMAT: &str = "sentimtl-checkpoint";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    fn from_matrix(m: &Array2<f64>) -> Self {
        Self {
            shape: m.shape().to_vec(),
            data: m.iter().copied().collect(),
        }
    }

    fn from_vector(v: &Array1<f64>) -> Self {
        Self {
            shape: vec![v.len()],
            data: v.to_vec(),
        }
    }

    fn into_matrix(self, name: &str) -> Result<Array2<f64>, ModelError> {
        match self.shape[..] {
            [r, c] => Array2::from_shape_vec((r, c), self.data)
                .map_err(|e| ModelError::Checkpoint(format!("{name}: {e}"))),
            _ => Err(ModelError::Checkpoint(format!("{name}: expected a matrix"))),
        }
    }

    fn into_vector(self, name: &str) -> Result<Array1<f64>, ModelError> {
        match self.shape[..] {
            [n] if n == self.data.len() => Ok(Array1::from(self.data)),
            _ => Err(ModelError::Checkpoint(format!("{name}: expected a vector"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct LayerParams {
    weight: Tensor,
    bias: Tensor,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct HeadParams {
    dropout_rate: f64,
    weight: Tensor,
    bias: Tensor,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    format: String,
    version: u32,
    pub seed: u64,
    pub encoder: EncoderSpec,
    shared: LayerParams,
    heads: BTreeMap<Granularity, HeadParams>,
}

impl Checkpoint {
    pub fn from_bundle(bundle: &ModelBundle) -> Self {
        let shared = bundle.shared();
        Self {
            format: CHECKPOINT_FORMAT.to_string(),
            version: CHECKPOINT_VERSION,
            seed: bundle.seed(),
            encoder: bundle.spec().clone(),
            shared: LayerParams {
                weight: Tensor::from_matrix(&shared.weight),
                bias: Tensor::from_vector(&shared.bias),
            },
            heads: bundle
                .heads()
                .iter()
                .map(|(task, head)| {
                    (
                        *task,
                        HeadParams {
                            dropout_rate: head.dropout_rate,
                            weight: Tensor::from_matrix(&head.weight),
                            bias: Tensor::from_vector(&head.bias),
                        },
                    )
                })
                .collect(),
        }
    }

    pub fn tasks(&self) -> impl Iterator<Item = Granularity> + '_ {
        self.heads.keys().copied()
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = serde_json::to_vec(self).expect("checkpoint serialises");
        out.push(b'\n');
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, ModelError> {
        let ckpt: Self = serde_json::from_slice(bytes).map_err(|e| ModelError::Checkpoint(e.to_string()))?;
        if ckpt.format != CHECKPOINT_FORMAT {
            return Err(ModelError::Checkpoint(format!("not a checkpoint (format `{}`)", ckpt.format)));
        }
        if ckpt.version != CHECKPOINT_VERSION {
            return Err(ModelError::Checkpoint(format!(
                "unsupported checkpoint version {} (this build reads {CHECKPOINT_VERSION})",
                ckpt.version
            )));
        }
        Ok(ckpt)
    }

    pub fn save(&self, path: &Path) -> Result<(), ModelError> {
        fs::write(path, self.to_bytes()).map_err(|source| ModelError::Io {
            path: path.to_path_buf(),
            source,
        })
    }

    pub fn load(path: &Path) -> Result<Self, ModelError> {
        let bytes = fs::read(path).map_err(|source| ModelError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_bytes(&bytes)
    }

    pub fn into_bundle(self, cache_dir: Option<&Path>) -> Result<ModelBundle, ModelError> {
        let encoder = Arc::new(Encoder::build(&self.encoder, cache_dir)?);
        self.into_bundle_with_encoder(encoder)
    }

    pub fn into_bundle_with_encoder(self, encoder: Arc<Encoder>) -> Result<ModelBundle, ModelError> {
        let shared = SharedLayer {
            weight: self.shared.weight.into_matrix("shared.weight")?,
            bias: self.shared.bias.into_vector("shared.bias")?,
        };
        let mut heads = BTreeMap::new();
        for (task, params) in self.heads {
            heads.insert(
                task,
                ClassificationHead {
                    task,
                    weight: params.weight.into_matrix(&format!("head.{task}.weight"))?,
                    bias: params.bias.into_vector(&format!("head.{task}.bias"))?,
                    dropout_rate: params.dropout_rate,
                },
            );
        }
        ModelBundle::from_parts(self.encoder, encoder, shared, heads, self.seed)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::HeadSet;

    fn bundle() -> ModelBundle {
        ModelBundle::new(&EncoderSpec::toy(8), HeadSet::MultiTask, 0.3, 5, None).unwrap()
    }

    #[test]
    fn round_trip_is_exact_and_byte_stable() {
        let m = bundle();
        let bytes = Checkpoint::from_bundle(&m).to_bytes();
        let back = Checkpoint::from_bytes(&bytes).unwrap().into_bundle(None).unwrap();
        assert_eq!(back, m);
        assert_eq!(Checkpoint::from_bundle(&back).to_bytes(), bytes);
        let texts = ["a b c", "d e f"];
        assert_eq!(
            back.predict(&texts, Granularity::Document).unwrap(),
            m.predict(&texts, Granularity::Document).unwrap()
        );
    }

    #[test]
    fn rejects_foreign_or_future_files() {
        assert!(Checkpoint::from_bytes(b"{}").is_err());
        let mut ck = Checkpoint::from_bundle(&bundle());
        ck.version = 99;
        assert!(matches!(Checkpoint::from_bytes(&ck.to_bytes()), Err(ModelError::Checkpoint(m)) if m.contains("99")));
        ck.version = CHECKPOINT_VERSION;
        ck.format = "other".into();
        assert!(Checkpoint::from_bytes(&ck.to_bytes()).is_err());
    }

    #[test]
    fn save_and_load_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.ckpt.json");
        let ck = Checkpoint::from_bundle(&bundle());
        ck.save(&path).unwrap();
        assert_eq!(Checkpoint::load(&path).unwrap(), ck);
        assert!(matches!(Checkpoint::load(&dir.path().join("missing")), Err(ModelError::Io { .. })));
    }
}
