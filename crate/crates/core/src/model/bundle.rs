use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;
use std::sync::Arc;

use ndarray::{Array1, Array2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::head::{check_width, dropout_mask, logits, softmax_rows};
use super::{ClassificationHead, Encoder, EncoderSpec, ModelError, Mode, PredictionBatch};
use crate::corpus::{Granularity, SentimentLabel};

/// Trainable linear layer shared by all heads.
#[derive(Debug, Clone, PartialEq)]
pub struct SharedLayer {
    /// `hidden_dim x hidden_dim`, applied as `x W^T + b`.
    pub weight: Array2<f64>,
    pub bias: Array1<f64>,
}

impl SharedLayer {
    /// Identity plus uniform noise in `[-0.01, 0.01]`, zero bias.
    pub fn init(hidden_dim: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let weight = Array2::from_shape_fn((hidden_dim, hidden_dim), |(i, j)| {
            let noise = rng.random_range(-0.01..=0.01);
            if i == j {
                1.0 + noise
            } else {
                noise
            }
        });
        Self {
            weight,
            bias: Array1::zeros(hidden_dim),
        }
    }

    pub fn forward(&self, encoded: &Array2<f64>) -> Array2<f64> {
        encoded.dot(&self.weight.t()) + &self.bias
    }
}

/// Which heads a bundle carries.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HeadSet {
    /// Document head only.
    SingleTask,
    /// One head per granularity.
    MultiTask,
}

impl HeadSet {
    pub fn tasks(self) -> &'static [Granularity] {
        match self {
            Self::SingleTask => &[Granularity::Document],
            Self::MultiTask => &Granularity::ALL,
        }
    }
}

/// Names one trainable parameter tensor.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum ParamId {
    SharedWeight,
    SharedBias,
    HeadWeight(Granularity),
    HeadBias(Granularity),
}

impl fmt::Display for ParamId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::SharedWeight => f.write_str("shared.weight"),
            Self::SharedBias => f.write_str("shared.bias"),
            Self::HeadWeight(t) => write!(f, "head.{t}.weight"),
            Self::HeadBias(t) => write!(f, "head.{t}.bias"),
        }
    }
}

/// Gradients of one task's loss: the shared layer plus that task's head.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub task: Granularity,
    pub groups: BTreeMap<ParamId, Vec<f64>>,
}

#[derive(Debug, Clone)]
pub struct ModelBundle {
    spec: EncoderSpec,
    encoder: Arc<Encoder>,
    shared: SharedLayer,
    heads: BTreeMap<Granularity, ClassificationHead>,
    seed: u64,
}

impl PartialEq for ModelBundle {
    /// Compares configuration and trainable parameters; the frozen encoder is
    /// a function of the spec.
    fn eq(&self, other: &Self) -> bool {
        self.spec == other.spec && self.shared == other.shared && self.heads == other.heads && self.seed == other.seed
    }
}

impl ModelBundle {
    pub fn new(
        spec: &EncoderSpec,
        head_set: HeadSet,
        dropout_rate: f64,
        seed: u64,
        cache_dir: Option<&Path>,
    ) -> Result<Self, ModelError> {
        let encoder = Encoder::build(spec, cache_dir)?;
        Self::with_encoder(spec.clone(), Arc::new(encoder), head_set, dropout_rate, seed)
    }

    /// Fresh parameters around an already-built encoder.
    pub fn with_encoder(
        spec: EncoderSpec,
        encoder: Arc<Encoder>,
        head_set: HeadSet,
        dropout_rate: f64,
        seed: u64,
    ) -> Result<Self, ModelError> {
        let dim = spec.hidden_dim;
        if encoder.hidden_dim() != dim {
            return Err(ModelError::InvalidSpec(format!(
                "encoder width {} does not match hidden_dim {dim}",
                encoder.hidden_dim()
            )));
        }
        let mut seeds = ChaCha8Rng::seed_from_u64(seed);
        let shared = SharedLayer::init(dim, seeds.random());
        let mut heads = BTreeMap::new();
        for &task in head_set.tasks() {
            heads.insert(task, ClassificationHead::init(task, dim, dropout_rate, seeds.random())?);
        }
        Ok(Self {
            spec,
            encoder,
            shared,
            heads,
            seed,
        })
    }

    pub(crate) fn from_parts(
        spec: EncoderSpec,
        encoder: Arc<Encoder>,
        shared: SharedLayer,
        heads: BTreeMap<Granularity, ClassificationHead>,
        seed: u64,
    ) -> Result<Self, ModelError> {
        let dim = spec.hidden_dim;
        if encoder.hidden_dim() != dim || shared.weight.dim() != (dim, dim) || shared.bias.len() != dim {
            return Err(ModelError::Shape("shared layer does not match hidden_dim".into()));
        }
        for head in heads.values() {
            if head.weight.dim() != (SentimentLabel::COUNT, dim) || head.bias.len() != SentimentLabel::COUNT {
                return Err(ModelError::Shape(format!("{} head has wrong shape", head.task)));
            }
        }
        if heads.is_empty() {
            return Err(ModelError::InvalidSpec("model has no heads".into()));
        }
        Ok(Self {
            spec,
            encoder,
            shared,
            heads,
            seed,
        })
    }

    pub fn spec(&self) -> &EncoderSpec {
        &self.spec
    }

    pub fn encoder(&self) -> &Arc<Encoder> {
        &self.encoder
    }

    pub fn shared(&self) -> &SharedLayer {
        &self.shared
    }

    pub fn heads(&self) -> &BTreeMap<Granularity, ClassificationHead> {
        &self.heads
    }

    pub fn head(&self, task: Granularity) -> Result<&ClassificationHead, ModelError> {
        self.heads.get(&task).ok_or(ModelError::MissingHead(task))
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn hidden_dim(&self) -> usize {
        self.spec.hidden_dim
    }

    /// Frozen-encoder output, the input of the shared layer.
    pub fn encode(&self, texts: &[&str]) -> Result<Array2<f64>, ModelError> {
        self.encoder.encode(texts)
    }

    fn check_encoded(&self, encoded: &Array2<f64>) -> Result<(), ModelError> {
        if encoded.ncols() != self.hidden_dim() {
            return Err(ModelError::Shape(format!(
                "encoded width {} vs hidden_dim {}",
                encoded.ncols(),
                self.hidden_dim()
            )));
        }
        Ok(())
    }

    pub fn predict_encoded(&self, encoded: &Array2<f64>, task: Granularity, mode: Mode<'_>) -> Result<PredictionBatch, ModelError> {
        self.check_encoded(encoded)?;
        super::head_forward(&self.shared.forward(encoded), self.head(task)?, mode)
    }

    /// Eval-mode prediction: a pure function of the parameters and texts.
    pub fn predict(&self, texts: &[&str], task: Granularity) -> Result<PredictionBatch, ModelError> {
        self.predict_encoded(&self.encode(texts)?, task, Mode::Eval)
    }

    /// Mean cross-entropy and its gradients with respect to the shared layer
    /// and `task`'s head. Training mode draws a dropout mask from the generator.
    pub fn loss_and_gradients(
        &self,
        encoded: &Array2<f64>,
        gold: &[SentimentLabel],
        task: Granularity,
        mode: Mode<'_>,
    ) -> Result<(f64, Gradients), ModelError> {
        self.check_encoded(encoded)?;
        let head = self.head(task)?;
        let batch = encoded.nrows();
        if batch != gold.len() || batch == 0 {
            return Err(ModelError::Shape(format!("{batch} inputs vs {} gold labels", gold.len())));
        }

        let hidden = self.shared.forward(encoded);
        check_width(&hidden, head)?;
        let mask = match mode {
            Mode::Train(rng) if head.dropout_rate > 0.0 => Some(dropout_mask(hidden.dim(), head.dropout_rate, rng)),
            _ => None,
        };
        let dropped = match &mask {
            Some(m) => &hidden * m,
            None => hidden,
        };
        let z = logits(&dropped, head);

        let mut loss = 0.0;
        for (row, g) in z.axis_iter(Axis(0)).zip(gold) {
            let max = row.fold(f64::NEG_INFINITY, |m, &v| m.max(v));
            let lse = max + row.mapv(|v| (v - max).exp()).sum().ln();
            loss += lse - row[g.index()];
        }
        loss /= batch as f64;

        // dL/dz = (softmax - onehot) / batch
        let mut dz = softmax_rows(&z);
        for (mut row, g) in dz.axis_iter_mut(Axis(0)).zip(gold) {
            row[g.index()] -= 1.0;
        }
        dz /= batch as f64;

        let d_head_w = dz.t().dot(&dropped);
        let d_head_b = dz.sum_axis(Axis(0));
        let mut d_hidden = dz.dot(&head.weight);
        if let Some(m) = &mask {
            d_hidden *= m;
        }
        let d_shared_w = d_hidden.t().dot(encoded);
        let d_shared_b = d_hidden.sum_axis(Axis(0));

        let flat = |a: ndarray::ArrayD<f64>| a.as_standard_layout().iter().copied().collect::<Vec<_>>();
        let mut groups = BTreeMap::new();
        groups.insert(ParamId::SharedWeight, flat(d_shared_w.into_dyn()));
        groups.insert(ParamId::SharedBias, flat(d_shared_b.into_dyn()));
        groups.insert(ParamId::HeadWeight(task), flat(d_head_w.into_dyn()));
        groups.insert(ParamId::HeadBias(task), flat(d_head_b.into_dyn()));
        Ok((loss, Gradients { task, groups }))
    }

    pub fn param_ids(&self) -> Vec<ParamId> {
        let mut ids = vec![ParamId::SharedWeight, ParamId::SharedBias];
        for &task in self.heads.keys() {
            ids.push(ParamId::HeadWeight(task));
            ids.push(ParamId::HeadBias(task));
        }
        ids
    }

    pub fn param(&self, id: ParamId) -> Option<&[f64]> {
        match id {
            ParamId::SharedWeight => self.shared.weight.as_slice(),
            ParamId::SharedBias => self.shared.bias.as_slice(),
            ParamId::HeadWeight(t) => self.heads.get(&t)?.weight.as_slice(),
            ParamId::HeadBias(t) => self.heads.get(&t)?.bias.as_slice(),
        }
    }

    pub fn param_mut(&mut self, id: ParamId) -> Option<&mut [f64]> {
        match id {
            ParamId::SharedWeight => self.shared.weight.as_slice_mut(),
            ParamId::SharedBias => self.shared.bias.as_slice_mut(),
            ParamId::HeadWeight(t) => self.heads.get_mut(&t)?.weight.as_slice_mut(),
            ParamId::HeadBias(t) => self.heads.get_mut(&t)?.bias.as_slice_mut(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::compute_loss;
    use SentimentLabel::{Negative, Neutral, Positive};

    fn bundle(head_set: HeadSet) -> ModelBundle {
        ModelBundle::new(&EncoderSpec::toy(16), head_set, 0.3, 11, None).unwrap()
    }

    const TEXTS: [&str; 4] = ["rast in uspeh", "kriza in padec", "seja vlade", "dobra novica"];
    const GOLD: [SentimentLabel; 4] = [Positive, Negative, Neutral, Positive];

    #[test]
    fn head_sets() {
        assert_eq!(bundle(HeadSet::SingleTask).heads().len(), 1);
        let m = bundle(HeadSet::MultiTask);
        assert_eq!(m.heads().keys().copied().collect::<Vec<_>>(), Granularity::ALL.to_vec());
        assert!(matches!(
            bundle(HeadSet::SingleTask).predict(&TEXTS, Granularity::Sentence),
            Err(ModelError::MissingHead(Granularity::Sentence))
        ));
    }

    #[test]
    fn predictions_are_distributions_and_pure() {
        let m = bundle(HeadSet::MultiTask);
        let a = m.predict(&TEXTS, Granularity::Paragraph).unwrap();
        for row in a.probabilities.rows() {
            assert!((row.sum() - 1.0).abs() < 1e-6);
        }
        assert_eq!(a, m.clone().predict(&TEXTS, Granularity::Paragraph).unwrap());
    }

    #[test]
    fn eval_loss_matches_prediction_path() {
        let m = bundle(HeadSet::MultiTask);
        let enc = m.encode(&TEXTS).unwrap();
        let (loss, grads) = m.loss_and_gradients(&enc, &GOLD, Granularity::Sentence, Mode::Eval).unwrap();
        let via_probs = compute_loss(&m.predict(&TEXTS, Granularity::Sentence).unwrap(), &GOLD).unwrap();
        assert!((loss - via_probs).abs() < 1e-12);
        let ids: Vec<_> = grads.groups.keys().copied().collect();
        assert_eq!(
            ids,
            [
                ParamId::SharedWeight,
                ParamId::SharedBias,
                ParamId::HeadWeight(Granularity::Sentence),
                ParamId::HeadBias(Granularity::Sentence)
            ]
        );
        assert_eq!(grads.groups[&ParamId::SharedWeight].len(), 16 * 16);
    }

    #[test]
    fn shape_errors() {
        let m = bundle(HeadSet::SingleTask);
        let enc = m.encode(&TEXTS).unwrap();
        assert!(m.loss_and_gradients(&enc, &GOLD[..2], Granularity::Document, Mode::Eval).is_err());
        let narrow = Array2::zeros((4, 3));
        assert!(m.loss_and_gradients(&narrow, &GOLD, Granularity::Document, Mode::Eval).is_err());
    }

    #[test]
    fn param_access_covers_every_group() {
        let mut m = bundle(HeadSet::MultiTask);
        assert_eq!(m.param_ids().len(), 8);
        for id in m.param_ids() {
            assert!(m.param(id).is_some(), "{id}");
            assert!(m.param_mut(id).is_some(), "{id}");
        }
        assert_eq!(ParamId::HeadBias(Granularity::Paragraph).to_string(), "head.paragraph.bias");
    }
}
