use ndarray::{Array1, Array2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{ModelError, Mode};
use crate::corpus::{Granularity, SentimentLabel};

const K: usize = SentimentLabel::COUNT;

/// Affine map from the shared representation to three logits.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassificationHead {
    pub task: Granularity,
    /// `3 x hidden_dim`, rows in class index order.
    pub weight: Array2<f64>,
    pub bias: Array1<f64>,
    pub dropout_rate: f64,
}

impl ClassificationHead {
    /// Weights uniform in `[-0.05, 0.05]`, zero bias.
    pub fn init(task: Granularity, hidden_dim: usize, dropout_rate: f64, seed: u64) -> Result<Self, ModelError> {
        if !(0.0..1.0).contains(&dropout_rate) {
            return Err(ModelError::InvalidSpec(format!("dropout rate {dropout_rate} outside [0, 1)")));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let weight = Array2::from_shape_simple_fn((K, hidden_dim), || rng.random_range(-0.05..=0.05));
        Ok(Self {
            task,
            weight,
            bias: Array1::zeros(K),
            dropout_rate,
        })
    }

    pub fn hidden_dim(&self) -> usize {
        self.weight.ncols()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PredictionBatch {
    /// `batch x 3`, each row a probability vector in class index order.
    pub probabilities: Array2<f64>,
    pub predicted: Vec<SentimentLabel>,
}

impl PredictionBatch {
    pub fn from_probabilities(probabilities: Array2<f64>) -> Self {
        let predicted = probabilities
            .rows()
            .into_iter()
            .map(|row| {
                let mut best = 0;
                for j in 1..row.len() {
                    if row[j] > row[best] {
                        best = j;
                    }
                }
                SentimentLabel::from_index(best).expect("three classes")
            })
            .collect();
        Self {
            probabilities,
            predicted,
        }
    }

    pub fn len(&self) -> usize {
        self.predicted.len()
    }

    pub fn is_empty(&self) -> bool {
        self.predicted.is_empty()
    }
}

/// Numerically stable row-wise softmax.
pub fn softmax_rows(logits: &Array2<f64>) -> Array2<f64> {
    let mut out = logits.clone();
    for mut row in out.rows_mut() {
        let max = row.fold(f64::NEG_INFINITY, |m, &v| m.max(v));
        row.mapv_inplace(|v| (v - max).exp());
        let sum = row.sum();
        row /= sum;
    }
    out
}

/// Inverted dropout mask: kept entries scaled by `1 / (1 - rate)`.
pub(crate) fn dropout_mask(shape: (usize, usize), rate: f64, rng: &mut ChaCha8Rng) -> Array2<f64> {
    let keep = 1.0 - rate;
    Array2::from_shape_simple_fn(shape, || if rng.random::<f64>() < keep { 1.0 / keep } else { 0.0 })
}

pub(crate) fn logits(features: &Array2<f64>, head: &ClassificationHead) -> Array2<f64> {
    features.dot(&head.weight.t()) + &head.bias
}

pub(crate) fn check_width(features: &Array2<f64>, head: &ClassificationHead) -> Result<(), ModelError> {
    if features.ncols() != head.hidden_dim() {
        return Err(ModelError::Shape(format!(
            "features have width {}, {} head expects {}",
            features.ncols(),
            head.task,
            head.hidden_dim()
        )));
    }
    Ok(())
}

/// Dropout (training only), affine map, softmax.
pub fn head_forward(features: &Array2<f64>, head: &ClassificationHead, mode: Mode<'_>) -> Result<PredictionBatch, ModelError> {
    check_width(features, head)?;
    let z = match mode {
        Mode::Train(rng) if head.dropout_rate > 0.0 => {
            let mask = dropout_mask(features.dim(), head.dropout_rate, rng);
            logits(&(features * &mask), head)
        }
        _ => logits(features, head),
    };
    Ok(PredictionBatch::from_probabilities(softmax_rows(&z)))
}

/// Mean categorical cross-entropy of the gold classes.
pub fn compute_loss(batch: &PredictionBatch, gold: &[SentimentLabel]) -> Result<f64, ModelError> {
    if batch.len() != gold.len() {
        return Err(ModelError::Shape(format!(
            "{} predictions vs {} gold labels",
            batch.len(),
            gold.len()
        )));
    }
    if gold.is_empty() {
        return Err(ModelError::Shape("empty batch".into()));
    }
    let total: f64 = batch
        .probabilities
        .axis_iter(Axis(0))
        .zip(gold)
        .map(|(row, g)| -row[g.index()].ln())
        .sum();
    Ok(total / gold.len() as f64)
}
