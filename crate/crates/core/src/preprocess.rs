//! Cleaning, stratified splitting and task-population assembly.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::io::{Read, Write};
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{Granularity, LabeledInstance, Language, SentimentLabel};

#[derive(Debug, Error)]
pub enum PreprocessError {
    #[error("cannot stratify: no instances labelled {0}")]
    Stratification(SentimentLabel),
    #[error("invalid split specification: {0}")]
    InvalidSplit(String),
    #[error("configuration error: {0}")]
    Config(String),
    #[error("split manifest: {0}")]
    Manifest(String),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

/// A task is identified by the granularity its head classifies.
pub type TaskKey = Granularity;

/// A (language, level) corpus pool, named like `sl-doc` or `hr-doc`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct PoolKey {
    pub language: Language,
    pub level: Granularity,
}

impl PoolKey {
    pub const fn new(language: Language, level: Granularity) -> Self {
        Self { language, level }
    }

    pub fn name(&self) -> String {
        format!("{}-{}", self.language, self.level.short())
    }
}

impl fmt::Display for PoolKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.name())
    }
}

impl FromStr for PoolKey {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let (lang, level) = s
            .split_once('-')
            .ok_or_else(|| format!("pool name `{s}` is not of the form <lang>-<level>"))?;
        Ok(Self::new(lang.parse()?, level.parse()?))
    }
}

/// Removes instances whose text is empty after Unicode whitespace trimming.
pub fn drop_empty(instances: Vec<LabeledInstance>) -> Vec<LabeledInstance> {
    instances
        .into_iter()
        .filter(|i| !i.text.trim().is_empty())
        .collect()
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct DedupOptions {
    #[serde(default)]
    pub case_fold: bool,
}

pub const DEDUP_REASON: &str = "duplicate content; removed to prevent leakage into dev/test splits";

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct DedupRemoval {
    pub removed_id: String,
    pub kept_id: String,
    pub reason: &'static str,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Deduplicated {
    pub kept: Vec<LabeledInstance>,
    pub removals: Vec<DedupRemoval>,
}

fn dedup_key(text: &str, options: DedupOptions) -> String {
    let trimmed = text.trim();
    if options.case_fold {
        trimmed.to_lowercase()
    } else {
        trimmed.to_string()
    }
}

/// Keeps the first instance of every distinct trimmed text.
pub fn deduplicate(instances: Vec<LabeledInstance>, options: DedupOptions) -> Deduplicated {
    let mut first_seen: HashMap<String, usize> = HashMap::with_capacity(instances.len());
    let mut kept: Vec<LabeledInstance> = Vec::with_capacity(instances.len());
    let mut removals = Vec::new();
    for instance in instances {
        let key = dedup_key(&instance.text, options);
        match first_seen.get(&key) {
            Some(&pos) => removals.push(DedupRemoval {
                removed_id: instance.id,
                kept_id: kept[pos].id.clone(),
                reason: DEDUP_REASON,
            }),
            None => {
                first_seen.insert(key, kept.len());
                kept.push(instance);
            }
        }
    }
    Deduplicated { kept, removals }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CleanedPool {
    pub instances: Vec<LabeledInstance>,
    pub dropped_empty: usize,
    pub removals: Vec<DedupRemoval>,
}

/// Empty-drop followed by deduplication, applied to one pool.
pub fn clean_pool(instances: Vec<LabeledInstance>, options: DedupOptions) -> CleanedPool {
    let before = instances.len();
    let non_empty = drop_empty(instances);
    let dropped_empty = before - non_empty.len();
    let Deduplicated { kept, removals } = deduplicate(non_empty, options);
    CleanedPool {
        instances: kept,
        dropped_empty,
        removals,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitSpec {
    #[serde(default = "default_test_fraction")]
    pub test_fraction: f64,
    #[serde(default = "default_dev_fraction")]
    pub dev_fraction_of_train: f64,
    #[serde(default)]
    pub seed: u64,
}

fn default_test_fraction() -> f64 {
    0.2
}

fn default_dev_fraction() -> f64 {
    0.1
}

impl Default for SplitSpec {
    fn default() -> Self {
        Self {
            test_fraction: default_test_fraction(),
            dev_fraction_of_train: default_dev_fraction(),
            seed: 0,
        }
    }
}

impl SplitSpec {
    pub fn validate(&self) -> Result<(), PreprocessError> {
        if !(self.test_fraction > 0.0 && self.test_fraction < 1.0) {
            return Err(PreprocessError::InvalidSplit(format!(
                "test_fraction {} must lie in (0, 1)",
                self.test_fraction
            )));
        }
        if !(self.dev_fraction_of_train >= 0.0 && self.dev_fraction_of_train < 1.0) {
            return Err(PreprocessError::InvalidSplit(format!(
                "dev_fraction_of_train {} must lie in [0, 1)",
                self.dev_fraction_of_train
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Part {
    Train,
    Dev,
    Test,
}

impl Part {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::Train => "train",
            Self::Dev => "dev",
            Self::Test => "test",
        }
    }
}

impl FromStr for Part {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "train" => Ok(Self::Train),
            "dev" => Ok(Self::Dev),
            "test" => Ok(Self::Test),
            other => Err(format!("unknown split part `{other}`")),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct DatasetSplit {
    pub train: Vec<LabeledInstance>,
    pub dev: Vec<LabeledInstance>,
    pub test: Vec<LabeledInstance>,
}

impl DatasetSplit {
    /// Rebuilds a split from per-instance part assignments.
    pub fn from_parts(instances: &[LabeledInstance], parts: &[Part]) -> Self {
        let mut split = Self::default();
        for (instance, part) in instances.iter().zip(parts) {
            split.part_mut(*part).push(instance.clone());
        }
        split
    }

    pub fn part(&self, part: Part) -> &[LabeledInstance] {
        match part {
            Part::Train => &self.train,
            Part::Dev => &self.dev,
            Part::Test => &self.test,
        }
    }

    fn part_mut(&mut self, part: Part) -> &mut Vec<LabeledInstance> {
        match part {
            Part::Train => &mut self.train,
            Part::Dev => &mut self.dev,
            Part::Test => &mut self.test,
        }
    }

    pub fn len(&self) -> usize {
        self.train.len() + self.dev.len() + self.test.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Per-label quotas `floor(count * fraction)` topped up by largest remainder
/// until they sum to `round(total * fraction)`. Remainder ties go to the label
/// that comes first in label order.
pub fn stratum_quotas(counts: [usize; SentimentLabel::COUNT], fraction: f64) -> [usize; SentimentLabel::COUNT] {
    // absorbs representation error such as 450 * 0.2 = 90.00000000000001
    const EPS: f64 = 1e-9;
    let total: usize = counts.iter().sum();
    let target = (total as f64 * fraction + EPS).round() as usize;
    let mut quotas = [0usize; SentimentLabel::COUNT];
    let mut remainders = [0f64; SentimentLabel::COUNT];
    for (i, &count) in counts.iter().enumerate() {
        let exact = count as f64 * fraction;
        let floor = (exact + EPS).floor();
        quotas[i] = (floor as usize).min(count);
        remainders[i] = (exact - floor).max(0.0);
    }
    let mut order: Vec<usize> = (0..SentimentLabel::COUNT).collect();
    // stable sort keeps label order among equal remainders
    order.sort_by(|&a, &b| remainders[b].total_cmp(&remainders[a]));
    let mut assigned: usize = quotas.iter().sum();
    for &i in order.iter().cycle().take(SentimentLabel::COUNT * 2) {
        if assigned >= target {
            break;
        }
        if quotas[i] < counts[i] && remainders[i] > 0.0 {
            quotas[i] += 1;
            remainders[i] = 0.0;
            assigned += 1;
        }
    }
    quotas
}

fn label_indices(instances: &[LabeledInstance], among: &[usize]) -> [Vec<usize>; SentimentLabel::COUNT] {
    let mut by_label: [Vec<usize>; SentimentLabel::COUNT] = Default::default();
    for &i in among {
        by_label[instances[i].label.index()].push(i);
    }
    by_label
}

/// Assigns every instance to train, dev or test, stratified by label and
/// deterministic in `spec.seed`. Returned in input order.
pub fn assign_parts(instances: &[LabeledInstance], spec: &SplitSpec) -> Result<Vec<Part>, PreprocessError> {
    spec.validate()?;
    let all: Vec<usize> = (0..instances.len()).collect();
    let by_label = label_indices(instances, &all);
    for label in SentimentLabel::ALL {
        if by_label[label.index()].is_empty() {
            return Err(PreprocessError::Stratification(label));
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut parts = vec![Part::Train; instances.len()];

    let counts = by_label.each_ref().map(Vec::len);
    let test_quota = stratum_quotas(counts, spec.test_fraction);
    let mut remaining: [Vec<usize>; SentimentLabel::COUNT] = Default::default();
    for label in SentimentLabel::ALL {
        let mut idx = by_label[label.index()].clone();
        idx.shuffle(&mut rng);
        let (test, rest) = idx.split_at(test_quota[label.index()]);
        for &i in test {
            parts[i] = Part::Test;
        }
        let mut rest = rest.to_vec();
        rest.sort_unstable();
        remaining[label.index()] = rest;
    }

    let rest_counts = remaining.each_ref().map(Vec::len);
    let dev_quota = stratum_quotas(rest_counts, spec.dev_fraction_of_train);
    for label in SentimentLabel::ALL {
        let idx = &mut remaining[label.index()];
        idx.shuffle(&mut rng);
        for &i in &idx[..dev_quota[label.index()]] {
            parts[i] = Part::Dev;
        }
    }
    Ok(parts)
}

pub fn stratified_split(instances: &[LabeledInstance], spec: &SplitSpec) -> Result<DatasetSplit, PreprocessError> {
    let parts = assign_parts(instances, spec)?;
    Ok(DatasetSplit::from_parts(instances, &parts))
}

/// Training pools per task, sampled in proportion to their sizes.
#[derive(Debug, Clone, PartialEq)]
pub struct TaskCollection {
    pools: BTreeMap<TaskKey, Vec<LabeledInstance>>,
}

impl TaskCollection {
    pub fn pools(&self) -> &BTreeMap<TaskKey, Vec<LabeledInstance>> {
        &self.pools
    }

    pub fn pool(&self, task: TaskKey) -> Option<&[LabeledInstance]> {
        self.pools.get(&task).map(Vec::as_slice)
    }

    pub fn sizes(&self) -> BTreeMap<TaskKey, usize> {
        self.pools.iter().map(|(k, v)| (*k, v.len())).collect()
    }

    pub fn tasks(&self) -> impl Iterator<Item = TaskKey> + '_ {
        self.pools.keys().copied()
    }

    /// Sum of pool sizes: the number of instances in one epoch.
    pub fn population(&self) -> usize {
        self.pools.values().map(Vec::len).sum()
    }
}

/// Keeps only the train parts. Task keys must be distinct.
pub fn build_collection(splits: Vec<(TaskKey, DatasetSplit)>) -> Result<TaskCollection, PreprocessError> {
    if splits.is_empty() {
        return Err(PreprocessError::Config("task collection needs at least one task".into()));
    }
    let mut pools = BTreeMap::new();
    for (task, split) in splits {
        if pools.insert(task, split.train).is_some() {
            return Err(PreprocessError::Config(format!("duplicate task key `{task}`")));
        }
    }
    Ok(TaskCollection { pools })
}

/// One line of the split manifest.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestRecord {
    pub id: String,
    pub pool: String,
    pub part: Part,
}

pub fn manifest_records(pool: PoolKey, instances: &[LabeledInstance], parts: &[Part]) -> Vec<ManifestRecord> {
    let name = pool.name();
    instances
        .iter()
        .zip(parts)
        .map(|(instance, part)| ManifestRecord {
            id: instance.id.clone(),
            pool: name.clone(),
            part: *part,
        })
        .collect()
}

/// Tab-separated `id pool part` with a header line.
pub fn write_manifest<W: Write>(writer: W, records: &[ManifestRecord]) -> Result<(), PreprocessError> {
    let mut wtr = csv::WriterBuilder::new().delimiter(b'\t').from_writer(writer);
    wtr.write_record(["id", "pool", "part"])?;
    for record in records {
        wtr.write_record([record.id.as_str(), record.pool.as_str(), record.part.as_str()])?;
    }
    wtr.flush().map_err(csv::Error::from)?;
    Ok(())
}

pub fn read_manifest<R: Read>(reader: R) -> Result<Vec<ManifestRecord>, PreprocessError> {
    let mut rdr = csv::ReaderBuilder::new().delimiter(b'\t').from_reader(reader);
    let mut out = Vec::new();
    for row in rdr.records() {
        let row = row?;
        if row.len() != 3 {
            return Err(PreprocessError::Manifest(format!("expected 3 fields, found {}", row.len())));
        }
        out.push(ManifestRecord {
            id: row[0].to_string(),
            pool: row[1].to_string(),
            part: row[2].parse().map_err(PreprocessError::Manifest)?,
        });
    }
    Ok(out)
}

/// Recovers the part assignment of a cleaned pool from manifest records,
/// checking that ids line up position by position.
pub fn parts_from_manifest(
    pool: PoolKey,
    instances: &[LabeledInstance],
    records: &[ManifestRecord],
) -> Result<Vec<Part>, PreprocessError> {
    let name = pool.name();
    let mine: Vec<&ManifestRecord> = records.iter().filter(|r| r.pool == name).collect();
    if mine.len() != instances.len() {
        return Err(PreprocessError::Manifest(format!(
            "pool {name}: manifest lists {} instances, cleaned pool has {}",
            mine.len(),
            instances.len()
        )));
    }
    mine.iter()
        .zip(instances)
        .enumerate()
        .map(|(pos, (record, instance))| {
            if record.id == instance.id {
                Ok(record.part)
            } else {
                Err(PreprocessError::Manifest(format!(
                    "pool {name}: position {pos} lists id `{}`, cleaned pool has `{}`",
                    record.id, instance.id
                )))
            }
        })
        .collect()
}
