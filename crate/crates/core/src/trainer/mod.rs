//! Scenario training: task-proportional sampling over a shared encoder,
//! Adam updates, and per-epoch dev selection.
//!
//! Every step samples one task with probability proportional to its train
//! pool size, reads the next batch from that task's shuffled pool, and
//! updates the shared layer plus that task's head. An epoch consumes exactly
//! as many instances as the combined population, the last batch possibly
//! partial.

mod optim;
mod sampler;
mod scenario;

pub use optim::{Adam, AdamConfig};
pub use sampler::sample_task;
pub use scenario::{Scenario, UnknownScenario};

use std::collections::BTreeMap;
use std::io::{BufRead, Write};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{Granularity, LabeledInstance, Language, SentimentLabel};
use crate::evaluator::{evaluate, EvalError, MetricsReport};
use crate::model::{ModelBundle, ModelError, Mode};
use crate::preprocess::{build_collection, DatasetSplit, PoolKey, PreprocessError, TaskCollection};
use sampler::PoolCursor;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("training diverged at step {step} on the {task} task (loss {loss})")]
    Divergence { step: u64, task: Granularity, loss: f64 },
    #[error("all task pools are empty")]
    Exhausted,
    #[error("run history has no epoch records")]
    EmptyHistory,
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error(transparent)]
    Preprocess(#[from] PreprocessError),
    #[error("history file: {0}")]
    History(String),
}

/// Prepared splits keyed by corpus pool.
pub type PreparedData = BTreeMap<PoolKey, DatasetSplit>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SelectionMetric {
    /// Dev macro-F1 of this task decides the checkpoint.
    pub task: Granularity,
}

impl Default for SelectionMetric {
    fn default() -> Self {
        Self {
            task: Granularity::Document,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    #[serde(default = "default_lr")]
    pub learning_rate: f64,
    #[serde(default = "default_batch")]
    pub batch_size: usize,
    /// Falls back to [`Scenario::default_epochs`].
    #[serde(default)]
    pub epochs: Option<usize>,
    /// Set per run rather than read from config files.
    #[serde(skip)]
    pub seed: u64,
    #[serde(default = "default_dropout")]
    pub dropout: f64,
    #[serde(default)]
    pub adam: AdamConfig,
    #[serde(default)]
    pub selection: SelectionMetric,
}

fn default_lr() -> f64 {
    2e-5
}

fn default_batch() -> usize {
    32
}

fn default_dropout() -> f64 {
    0.3
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: default_lr(),
            batch_size: default_batch(),
            epochs: None,
            seed: 0,
            dropout: default_dropout(),
            adam: AdamConfig::default(),
            selection: SelectionMetric::default(),
        }
    }
}

impl TrainConfig {
    pub fn epochs_for(&self, scenario: Scenario) -> usize {
        self.epochs.unwrap_or_else(|| scenario.default_epochs())
    }

    pub fn validate(&self) -> Result<(), TrainError> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(TrainError::Config(format!("learning_rate {} must be positive", self.learning_rate)));
        }
        if self.batch_size == 0 {
            return Err(TrainError::Config("batch_size must be at least 1".into()));
        }
        if self.epochs == Some(0) {
            return Err(TrainError::Config("epochs must be at least 1".into()));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(TrainError::Config(format!("dropout {} outside [0, 1)", self.dropout)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: u64,
    pub epoch: usize,
    pub task: Granularity,
    pub loss: f64,
    pub batch_size: usize,
    pub sl_instances: usize,
    pub hr_instances: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub steps: u64,
    pub instances: usize,
    pub mean_train_loss: f64,
    /// Dev metrics per corpus pool, e.g. `sl-doc` and `hr-doc` separately.
    pub dev: BTreeMap<String, MetricsReport>,
    /// Dev macro-F1 of the selection task over the union of its dev pools.
    pub selection_value: f64,
    pub checkpoint: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunHistory {
    pub scenario: Scenario,
    pub seed: u64,
    pub steps: Vec<StepRecord>,
    pub epochs: Vec<EpochRecord>,
    pub selected: Option<String>,
}

#[derive(Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
enum HistoryLine {
    Run { scenario: Scenario, seed: u64 },
    Step(StepRecord),
    Epoch(EpochRecord),
    Selected { checkpoint: String },
}

impl RunHistory {
    /// Total hr-language instances consumed by gradient steps.
    pub fn hr_instances(&self) -> usize {
        self.steps.iter().map(|s| s.hr_instances).sum()
    }

    pub fn tasks_stepped(&self) -> Vec<Granularity> {
        let mut tasks: Vec<_> = self.steps.iter().map(|s| s.task).collect();
        tasks.sort_unstable();
        tasks.dedup();
        tasks
    }

    /// One JSON object per line: a run header, steps and epochs in
    /// execution order, then the selected checkpoint.
    pub fn write_jsonl<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        let mut line = |l: &HistoryLine| -> std::io::Result<()> {
            serde_json::to_writer(&mut out, l)?;
            out.write_all(b"\n")
        };
        line(&HistoryLine::Run {
            scenario: self.scenario,
            seed: self.seed,
        })?;
        let mut steps = self.steps.iter().peekable();
        for epoch in &self.epochs {
            while let Some(step) = steps.next_if(|s| s.epoch <= epoch.epoch) {
                line(&HistoryLine::Step(step.clone()))?;
            }
            line(&HistoryLine::Epoch(epoch.clone()))?;
        }
        for step in steps {
            line(&HistoryLine::Step(step.clone()))?;
        }
        if let Some(checkpoint) = &self.selected {
            line(&HistoryLine::Selected {
                checkpoint: checkpoint.clone(),
            })?;
        }
        Ok(())
    }

    pub fn read_jsonl<R: BufRead>(input: R) -> Result<Self, TrainError> {
        let mut history: Option<Self> = None;
        for (n, line) in input.lines().enumerate() {
            let line = line.map_err(|e| TrainError::History(e.to_string()))?;
            if line.trim().is_empty() {
                continue;
            }
            let parsed: HistoryLine =
                serde_json::from_str(&line).map_err(|e| TrainError::History(format!("line {}: {e}", n + 1)))?;
            match (parsed, history.as_mut()) {
                (HistoryLine::Run { scenario, seed }, None) => {
                    history = Some(Self {
                        scenario,
                        seed,
                        steps: Vec::new(),
                        epochs: Vec::new(),
                        selected: None,
                    })
                }
                (HistoryLine::Step(s), Some(h)) => h.steps.push(s),
                (HistoryLine::Epoch(e), Some(h)) => h.epochs.push(e),
                (HistoryLine::Selected { checkpoint }, Some(h)) => h.selected = Some(checkpoint),
                _ => return Err(TrainError::History(format!("line {}: out of order", n + 1))),
            }
        }
        history.ok_or_else(|| TrainError::History("no run header".into()))
    }
}

pub fn checkpoint_id(epoch: usize) -> String {
    format!("epoch-{epoch}")
}

/// Epoch with the highest selection value; ties go to the earlier epoch.
pub fn select_best(history: &RunHistory) -> Result<String, TrainError> {
    let mut best: Option<&EpochRecord> = None;
    for epoch in &history.epochs {
        if best.is_none_or(|b| epoch.selection_value > b.selection_value) {
            best = Some(epoch);
        }
    }
    best.map(|e| e.checkpoint.clone()).ok_or(TrainError::EmptyHistory)
}

/// Train pools and dev sets assembled for one scenario.
#[derive(Debug, Clone)]
pub struct ScenarioData {
    pub collection: TaskCollection,
    /// Dev sets per task, kept per corpus pool.
    pub dev: BTreeMap<Granularity, Vec<(PoolKey, Vec<LabeledInstance>)>>,
}

/// Concatenates the train parts of each task's source pools. Dev parts stay
/// separate per pool.
pub fn assemble(scenario: Scenario, data: &PreparedData) -> Result<ScenarioData, TrainError> {
    let mut splits = Vec::new();
    let mut dev = BTreeMap::new();
    for &task in scenario.tasks() {
        let mut merged = DatasetSplit::default();
        let mut task_dev = Vec::new();
        for pool in scenario.sources(task) {
            let split = data.get(pool).ok_or_else(|| {
                TrainError::Config(format!("scenario {scenario} needs the {pool} pool, which was not prepared"))
            })?;
            merged.train.extend(split.train.iter().cloned());
            task_dev.push((*pool, split.dev.clone()));
        }
        if merged.train.is_empty() {
            return Err(TrainError::Config(format!("scenario {scenario}: {task} train pool is empty")));
        }
        if scenario.is_zero_shot() {
            let leaked = merged
                .train
                .iter()
                .chain(task_dev.iter().flat_map(|(_, d)| d))
                .any(|i| i.language == Language::Hr);
            if leaked {
                return Err(TrainError::Config(format!("zero-shot scenario {scenario} received Croatian data")));
            }
        }
        splits.push((task, merged));
        dev.insert(task, task_dev);
    }
    Ok(ScenarioData {
        collection: build_collection(splits)?,
        dev,
    })
}

pub struct TrainOutcome {
    /// Parameters of the selected epoch.
    pub model: ModelBundle,
    pub history: RunHistory,
}

/// Runs a scenario and returns the dev-selected model.
pub fn train_scenario(
    scenario: Scenario,
    data: &PreparedData,
    model: ModelBundle,
    config: &TrainConfig,
) -> Result<TrainOutcome, TrainError> {
    train_scenario_with(scenario, data, model, config, |_, _| Ok(()))
}

// Independent random streams for the three consumers of randomness.
const STREAM_SAMPLER: u64 = 1;
const STREAM_SHUFFLE: u64 = 2;
const STREAM_DROPOUT: u64 = 3;

fn stream(seed: u64, id: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id);
    rng
}

/// As [`train_scenario`], calling `on_epoch` after every epoch with the
/// epoch record and the parameters at that point.
pub fn train_scenario_with<F>(
    scenario: Scenario,
    data: &PreparedData,
    mut model: ModelBundle,
    config: &TrainConfig,
    mut on_epoch: F,
) -> Result<TrainOutcome, TrainError>
where
    F: FnMut(&EpochRecord, &ModelBundle) -> Result<(), TrainError>,
{
    config.validate()?;
    let want: Vec<Granularity> = scenario.tasks().to_vec();
    let have: Vec<Granularity> = model.heads().keys().copied().collect();
    if want != have {
        return Err(TrainError::Config(format!(
            "scenario {scenario} trains heads {want:?}, model carries {have:?}"
        )));
    }
    let ScenarioData { collection, dev } = assemble(scenario, data)?;
    let selection_task = config.selection.task;
    let selection_dev: Vec<&LabeledInstance> = dev
        .get(&selection_task)
        .ok_or_else(|| TrainError::Config(format!("selection task {selection_task} is not trained by {scenario}")))?
        .iter()
        .flat_map(|(_, d)| d)
        .collect();
    if selection_dev.is_empty() {
        return Err(TrainError::Config(format!(
            "checkpoint selection needs a non-empty {selection_task} dev set"
        )));
    }

    let mut sampler_rng = stream(config.seed, STREAM_SAMPLER);
    let mut shuffle_rng = stream(config.seed, STREAM_SHUFFLE);
    let mut dropout_rng = stream(config.seed, STREAM_DROPOUT);
    let mut adam = Adam::new(config.learning_rate, config.adam);

    let population = collection.population();
    let mut history = RunHistory {
        scenario,
        seed: config.seed,
        steps: Vec::new(),
        epochs: Vec::new(),
        selected: None,
    };
    let mut best: Option<(f64, ModelBundle)> = None;
    let mut step: u64 = 0;

    for epoch in 1..=config.epochs_for(scenario) {
        let mut cursors: BTreeMap<Granularity, PoolCursor> = collection
            .pools()
            .iter()
            .map(|(task, pool)| (*task, PoolCursor::new(pool.len(), &mut shuffle_rng)))
            .collect();
        let mut consumed = 0usize;
        let mut loss_sum = 0.0;
        let mut epoch_steps = 0u64;
        while consumed < population {
            let task = sample_task(&collection, &mut sampler_rng)?;
            let pool = collection.pool(task).expect("sampled task has a pool");
            let n = config.batch_size.min(population - consumed).min(pool.len());
            let picks = cursors.get_mut(&task).expect("cursor per task").take(n, &mut shuffle_rng);
            let batch: Vec<&LabeledInstance> = picks.iter().map(|&i| &pool[i]).collect();

            let texts: Vec<&str> = batch.iter().map(|i| i.text.as_str()).collect();
            let gold: Vec<SentimentLabel> = batch.iter().map(|i| i.label).collect();
            let encoded = model.encode(&texts)?;
            let (loss, grads) = model.loss_and_gradients(&encoded, &gold, task, Mode::Train(&mut dropout_rng))?;
            step += 1;
            if !loss.is_finite() {
                return Err(TrainError::Divergence { step, task, loss });
            }
            adam.step(&mut model, &grads);

            let hr = batch.iter().filter(|i| i.language == Language::Hr).count();
            history.steps.push(StepRecord {
                step,
                epoch,
                task,
                loss,
                batch_size: n,
                sl_instances: n - hr,
                hr_instances: hr,
            });
            consumed += n;
            loss_sum += loss;
            epoch_steps += 1;
        }

        let mut dev_reports = BTreeMap::new();
        for (task, pools) in &dev {
            for (pool, instances) in pools {
                if !instances.is_empty() {
                    dev_reports.insert(pool.name(), score(&model, *task, instances.iter())?);
                }
            }
        }
        let selection_value = score(&model, selection_task, selection_dev.iter().copied())?.macro_f1;
        let record = EpochRecord {
            epoch,
            steps: epoch_steps,
            instances: consumed,
            mean_train_loss: loss_sum / epoch_steps as f64,
            dev: dev_reports,
            selection_value,
            checkpoint: checkpoint_id(epoch),
        };
        on_epoch(&record, &model)?;
        if best.as_ref().is_none_or(|(v, _)| selection_value > *v) {
            best = Some((selection_value, model.clone()));
        }
        history.epochs.push(record);
    }

    history.selected = Some(select_best(&history)?);
    let (_, model) = best.expect("at least one epoch");
    Ok(TrainOutcome { model, history })
}

const EVAL_BATCH: usize = 256;

/// Eval-mode predictions for `instances` on `task`'s head.
pub fn predict_instances<'a>(
    model: &ModelBundle,
    task: Granularity,
    instances: impl Iterator<Item = &'a LabeledInstance>,
) -> Result<Vec<(SentimentLabel, [f64; 3])>, ModelError> {
    let instances: Vec<&LabeledInstance> = instances.collect();
    let mut out = Vec::with_capacity(instances.len());
    for chunk in instances.chunks(EVAL_BATCH) {
        let texts: Vec<&str> = chunk.iter().map(|i| i.text.as_str()).collect();
        let batch = model.predict(&texts, task)?;
        for (label, row) in batch.predicted.iter().zip(batch.probabilities.rows()) {
            out.push((*label, [row[0], row[1], row[2]]));
        }
    }
    Ok(out)
}

fn score<'a>(
    model: &ModelBundle,
    task: Granularity,
    instances: impl Iterator<Item = &'a LabeledInstance> + Clone,
) -> Result<MetricsReport, TrainError> {
    let gold: Vec<SentimentLabel> = instances.clone().map(|i| i.label).collect();
    let predicted: Vec<SentimentLabel> = predict_instances(model, task, instances)?.into_iter().map(|(l, _)| l).collect();
    Ok(evaluate(&gold, &predicted)?)
}
