//! Shared encoder with one classification head per granularity.
//!
//! The encoder has two stages: a frozen text featuriser ([`Encoder`]) and a
//! trainable linear layer ([`SharedLayer`]) whose parameters receive gradients
//! from every head. Heads are affine maps to three logits followed by softmax.

mod bundle;
mod checkpoint;
mod encoder;
mod head;

pub use bundle::{Gradients, HeadSet, ModelBundle, ParamId, SharedLayer};
pub use checkpoint::{Checkpoint, CHECKPOINT_FORMAT, CHECKPOINT_VERSION};
pub use encoder::{Encoder, EncoderKind, EncoderSpec, Pooling, PretrainedAdapter, ToyEncoder, ASSET_CACHE_ENV};
pub use head::{compute_loss, head_forward, softmax_rows, ClassificationHead, PredictionBatch};

use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::corpus::Granularity;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("shape error: {0}")]
    Shape(String),
    #[error("pretrained asset: {0}")]
    Asset(String),
    #[error("invalid model configuration: {0}")]
    InvalidSpec(String),
    #[error("model has no {0} head")]
    MissingHead(Granularity),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error("I/O error on {path}: {source}")]
    Io {
        path: std::path::PathBuf,
        #[source]
        source: std::io::Error,
    },
}

/// Forward-pass mode. Training mode carries the run's seeded generator, which
/// draws the dropout masks.
pub enum Mode<'a> {
    Eval,
    Train(&'a mut ChaCha8Rng),
}

impl Mode<'_> {
    pub fn is_train(&self) -> bool {
        matches!(self, Mode::Train(_))
    }
}
