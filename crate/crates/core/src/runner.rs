//! The ingest, preprocess, train, evaluate and report commands, and the
//! on-disk layout they share.
//!
//! ```text
//! <output_dir>/
//!   ingest/stats.json
//!   prepared/<pool>.tsv  split_manifest.tsv  removed.tsv  summary.json
//!   runs/<SCENARIO>-seed<N>/
//!     manifest.json  history.jsonl  config.toml  checkpoints/epoch-<k>.json
//!     eval/report.md  eval/report.json  eval/<pool>.predictions.tsv
//!   reports/results.md  reports/results.json
//! ```
//!
//! Everything except `manifest.json` is a pure function of the config and
//! seed; the manifest alone carries wall-clock timestamps.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::io::BufReader;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::config::{Config, ConfigError, ExpectedCounts};
use crate::corpus::{
    audit_likert, dataset_stats, load_corpus, write_corpus, ColumnMapping, CorpusError, LabeledInstance, LevelStats,
    SentimentLabel,
};
use crate::evaluator::{
    majority_baseline, render_report, write_predictions, EvalError, MetricsReport, PredictionRow, RenderedReport,
    ReportEntry,
};
use crate::model::{Checkpoint, EncoderKind, ModelBundle, ModelError};
use crate::preprocess::{
    assign_parts, clean_pool, manifest_records, parts_from_manifest, read_manifest, write_manifest, DatasetSplit, PoolKey,
    PreprocessError,
};
use crate::trainer::{predict_instances, train_scenario_with, PreparedData, RunHistory, Scenario, TrainError};

pub const TOOLKIT_VERSION: &str = env!("CARGO_PKG_VERSION");
pub const BASELINE_ROW: &str = "Majority class";

#[derive(Debug, Error)]
pub enum RunError {
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("{0}")]
    Data(String),
    #[error("{0}")]
    State(String),
    #[error(transparent)]
    Divergence(TrainError),
    #[error("reconciliation failed:\n{0}")]
    Reconciliation(String),
}

impl RunError {
    /// 0 success, 1 usage/config, 2 data or missing state, 3 divergence,
    /// 4 strict reconciliation.
    pub fn exit_code(&self) -> u8 {
        match self {
            Self::Usage(_) | Self::Config(_) => 1,
            Self::Data(_) | Self::State(_) => 2,
            Self::Divergence(_) => 3,
            Self::Reconciliation(_) => 4,
        }
    }
}

impl From<CorpusError> for RunError {
    fn from(e: CorpusError) -> Self {
        match e {
            CorpusError::Io { .. } => Self::Usage(e.to_string()),
            other => Self::Data(other.to_string()),
        }
    }
}

impl From<PreprocessError> for RunError {
    fn from(e: PreprocessError) -> Self {
        Self::Data(e.to_string())
    }
}

impl From<ModelError> for RunError {
    fn from(e: ModelError) -> Self {
        Self::Data(e.to_string())
    }
}

impl From<EvalError> for RunError {
    fn from(e: EvalError) -> Self {
        Self::Data(e.to_string())
    }
}

impl From<TrainError> for RunError {
    fn from(e: TrainError) -> Self {
        match e {
            TrainError::Divergence { .. } => Self::Divergence(e),
            TrainError::Config(msg) => Self::Usage(msg),
            other => Self::Data(other.to_string()),
        }
    }
}

fn io_error(path: &Path) -> impl FnOnce(std::io::Error) -> RunError + '_ {
    move |e| RunError::Data(format!("{}: {e}", path.display()))
}

fn write_file(path: &Path, bytes: impl AsRef<[u8]>) -> Result<(), RunError> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(io_error(parent))?;
    }
    fs::write(path, bytes).map_err(io_error(path))
}

fn to_json<T: Serialize>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("serialisable");
    s.push('\n');
    s
}

pub fn sha256_file(path: &Path) -> Result<String, RunError> {
    let bytes = fs::read(path).map_err(io_error(path))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

/// Paths under one output root.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Layout {
    pub root: PathBuf,
}

impl Layout {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }

    pub fn ingest_stats(&self) -> PathBuf {
        self.root.join("ingest").join("stats.json")
    }

    pub fn prepared_dir(&self) -> PathBuf {
        self.root.join("prepared")
    }

    pub fn pool_file(&self, pool: PoolKey) -> PathBuf {
        self.prepared_dir().join(format!("{}.tsv", pool.name()))
    }

    pub fn split_manifest(&self) -> PathBuf {
        self.prepared_dir().join("split_manifest.tsv")
    }

    pub fn removals(&self) -> PathBuf {
        self.prepared_dir().join("removed.tsv")
    }

    pub fn prepare_summary(&self) -> PathBuf {
        self.prepared_dir().join("summary.json")
    }

    pub fn runs_dir(&self) -> PathBuf {
        self.root.join("runs")
    }

    pub fn run_dir(&self, scenario: Scenario, seed: u64) -> PathBuf {
        self.runs_dir().join(format!("{scenario}-seed{seed}"))
    }

    pub fn reports_dir(&self) -> PathBuf {
        self.root.join("reports")
    }

    /// The output root that owns `run_dir`.
    pub fn of_run(run_dir: &Path) -> Result<Self, RunError> {
        run_dir
            .parent()
            .and_then(Path::parent)
            .map(Self::new)
            .ok_or_else(|| RunError::Usage(format!("{} is not a run directory", run_dir.display())))
    }
}

/// Expected vs observed per-label counts.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReconciliationRow {
    pub pool: String,
    pub label: String,
    pub expected: u64,
    pub observed: u64,
}

impl ReconciliationRow {
    pub fn delta(&self) -> i64 {
        self.observed as i64 - self.expected as i64
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Reconciliation {
    pub rows: Vec<ReconciliationRow>,
}

impl Reconciliation {
    pub fn build(expected: &BTreeMap<String, ExpectedCounts>, observed: &BTreeMap<String, LevelStats>) -> Self {
        let mut rows = Vec::new();
        for (pool, exp) in expected {
            let exp = LevelStats::from(*exp);
            let obs = observed.get(pool).copied().unwrap_or_default();
            for label in [SentimentLabel::Positive, SentimentLabel::Negative, SentimentLabel::Neutral] {
                rows.push(ReconciliationRow {
                    pool: pool.clone(),
                    label: label.as_str().into(),
                    expected: exp.count(label),
                    observed: obs.count(label),
                });
            }
            rows.push(ReconciliationRow {
                pool: pool.clone(),
                label: "total".into(),
                expected: exp.examples,
                observed: obs.examples,
            });
        }
        Self { rows }
    }

    pub fn is_exact(&self) -> bool {
        self.rows.iter().all(|r| r.delta() == 0)
    }

    pub fn render(&self) -> String {
        let mut out = String::from("pool\tlabel\texpected\tobserved\tdelta\n");
        for r in &self.rows {
            let _ = writeln!(out, "{}\t{}\t{}\t{}\t{:+}", r.pool, r.label, r.expected, r.observed, r.delta());
        }
        out
    }

    pub fn mismatches(&self) -> String {
        let mut out = String::new();
        for r in self.rows.iter().filter(|r| r.delta() != 0) {
            let _ = writeln!(
                out,
                "  {} {}: expected {}, observed {} ({:+})",
                r.pool,
                r.label,
                r.expected,
                r.observed,
                r.delta()
            );
        }
        out
    }
}

fn check_strict(recon: &Option<Reconciliation>, strict: bool) -> Result<(), RunError> {
    match recon {
        Some(r) if strict && !r.is_exact() => Err(RunError::Reconciliation(r.mismatches())),
        _ => Ok(()),
    }
}

fn render_stats(stats: &BTreeMap<String, LevelStats>) -> String {
    let mut out = String::from("pool\texamples\tpositive\tnegative\tneutral\n");
    for (pool, s) in stats {
        let _ = writeln!(out, "{pool}\t{}\t{}\t{}\t{}", s.examples, s.positive, s.negative, s.neutral);
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IngestReport {
    pub stats: BTreeMap<String, LevelStats>,
    /// Instances whose stored label disagrees with their Likert mean.
    pub likert_disagreements: BTreeMap<String, usize>,
    pub reconciliation: Option<Reconciliation>,
}

impl IngestReport {
    pub fn render(&self) -> String {
        let mut out = render_stats(&self.stats);
        for (pool, n) in self.likert_disagreements.iter().filter(|(_, n)| **n > 0) {
            let _ = writeln!(out, "{pool}: {n} stored labels differ from their Likert mapping");
        }
        if let Some(r) = &self.reconciliation {
            out.push('\n');
            out.push_str(&r.render());
        }
        out
    }
}

fn load_pools(config: &Config) -> Result<BTreeMap<PoolKey, Vec<LabeledInstance>>, RunError> {
    if config.corpus.is_empty() {
        return Err(RunError::Usage("corpus: no corpus files configured".into()));
    }
    let mut pools = BTreeMap::new();
    for (i, source) in config.corpus.iter().enumerate() {
        if !source.path.is_file() {
            return Err(RunError::Usage(format!(
                "corpus[{i}].path: {} does not exist",
                source.path.display()
            )));
        }
        let instances = load_corpus(&source.path, source.language, source.level, &source.columns)?;
        pools.insert(source.pool(), instances);
    }
    Ok(pools)
}

/// Loads every configured corpus and counts labels per pool.
pub fn cmd_ingest(config: &Config, strict: bool) -> Result<IngestReport, RunError> {
    let pools = load_pools(config)?;
    let mut stats = BTreeMap::new();
    let mut likert_disagreements = BTreeMap::new();
    for (pool, instances) in &pools {
        stats.insert(pool.name(), dataset_stats(instances));
        likert_disagreements.insert(pool.name(), audit_likert(instances, config.likert)?.len());
    }
    let reconciliation = (!config.expect.raw.is_empty()).then(|| Reconciliation::build(&config.expect.raw, &stats));
    let report = IngestReport {
        stats,
        likert_disagreements,
        reconciliation,
    };
    write_file(&Layout::new(&config.output_dir).ingest_stats(), to_json(&report))?;
    check_strict(&report.reconciliation, strict)?;
    Ok(report)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PoolSummary {
    pub loaded: usize,
    pub dropped_empty: usize,
    pub duplicates: usize,
    pub cleaned: LevelStats,
    pub train: LevelStats,
    pub dev: LevelStats,
    pub test: LevelStats,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PreprocessReport {
    pub split_seed: u64,
    pub pools: BTreeMap<String, PoolSummary>,
    pub reconciliation: Option<Reconciliation>,
}

impl PreprocessReport {
    pub fn render(&self) -> String {
        let mut out = String::from("pool\tloaded\tempty\tduplicates\tcleaned\ttrain\tdev\ttest\n");
        for (pool, s) in &self.pools {
            let _ = writeln!(
                out,
                "{pool}\t{}\t{}\t{}\t{}\t{}\t{}\t{}",
                s.loaded, s.dropped_empty, s.duplicates, s.cleaned.examples, s.train.examples, s.dev.examples, s.test.examples
            );
        }
        if let Some(r) = &self.reconciliation {
            out.push('\n');
            out.push_str(&r.render());
        }
        out
    }
}

/// Cleans each pool, splits it, and writes the cleaned pools and the split
/// manifest. Artifacts are written even when strict reconciliation fails.
pub fn cmd_preprocess(config: &Config, strict: bool) -> Result<PreprocessReport, RunError> {
    let layout = Layout::new(&config.output_dir);
    let spec = config.split_spec();
    let pools = load_pools(config)?;

    let prepared = layout.prepared_dir();
    if prepared.exists() {
        fs::remove_dir_all(&prepared).map_err(io_error(&prepared))?;
    }
    fs::create_dir_all(&prepared).map_err(io_error(&prepared))?;

    let mut records = Vec::new();
    let mut removed = String::from("pool\tremoved_id\tkept_id\treason\n");
    let mut summaries = BTreeMap::new();
    let mut cleaned_stats = BTreeMap::new();
    for (pool, instances) in pools {
        let loaded = instances.len();
        let cleaned = clean_pool(instances, config.preprocess);
        let parts = assign_parts(&cleaned.instances, &spec)?;
        let split = DatasetSplit::from_parts(&cleaned.instances, &parts);
        write_corpus(&layout.pool_file(pool), &cleaned.instances)?;
        records.extend(manifest_records(pool, &cleaned.instances, &parts));
        for r in &cleaned.removals {
            let _ = writeln!(removed, "{pool}\t{}\t{}\t{}", r.removed_id, r.kept_id, r.reason);
        }
        let stats = dataset_stats(&cleaned.instances);
        cleaned_stats.insert(pool.name(), stats);
        summaries.insert(
            pool.name(),
            PoolSummary {
                loaded,
                dropped_empty: cleaned.dropped_empty,
                duplicates: cleaned.removals.len(),
                cleaned: stats,
                train: dataset_stats(&split.train),
                dev: dataset_stats(&split.dev),
                test: dataset_stats(&split.test),
            },
        );
    }

    let mut manifest = Vec::new();
    write_manifest(&mut manifest, &records)?;
    write_file(&layout.split_manifest(), manifest)?;
    write_file(&layout.removals(), removed)?;

    let reconciliation =
        (!config.expect.clean.is_empty()).then(|| Reconciliation::build(&config.expect.clean, &cleaned_stats));
    let report = PreprocessReport {
        split_seed: spec.seed,
        pools: summaries,
        reconciliation,
    };
    write_file(&layout.prepare_summary(), to_json(&report))?;
    check_strict(&report.reconciliation, strict)?;
    Ok(report)
}

/// Reads the cleaned pools back and re-applies the split manifest.
pub fn load_prepared(layout: &Layout) -> Result<PreparedData, RunError> {
    let manifest_path = layout.split_manifest();
    let file = fs::File::open(&manifest_path).map_err(|_| {
        RunError::State(format!("{} not found; run preprocess first", manifest_path.display()))
    })?;
    let records = read_manifest(file)?;
    let mut pools: Vec<PoolKey> = Vec::new();
    for r in &records {
        let pool: PoolKey = r.pool.parse().map_err(RunError::Data)?;
        if !pools.contains(&pool) {
            pools.push(pool);
        }
    }
    let mut data = PreparedData::new();
    for pool in pools {
        let instances = load_corpus(&layout.pool_file(pool), pool.language, pool.level, &ColumnMapping::export())
            .map_err(|e| RunError::State(e.to_string()))?;
        let parts = parts_from_manifest(pool, &instances, &records)?;
        data.insert(pool, DatasetSplit::from_parts(&instances, &parts));
    }
    Ok(data)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArtifactRecord {
    pub role: String,
    /// Relative to the output root.
    pub path: String,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrainingSummary {
    pub steps: usize,
    pub epochs: usize,
    pub tasks: Vec<String>,
    pub sl_instances: usize,
    pub hr_instances: usize,
    pub selected_checkpoint: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub toolkit_version: String,
    pub scenario: Scenario,
    pub seed: u64,
    pub started_at: String,
    pub finished_at: String,
    pub config: String,
    /// Source corpus file → sha256.
    pub corpus_digests: BTreeMap<String, String>,
    pub training: TrainingSummary,
    pub artifacts: Vec<ArtifactRecord>,
}

impl RunManifest {
    pub fn path(run_dir: &Path) -> PathBuf {
        run_dir.join("manifest.json")
    }

    pub fn load(run_dir: &Path) -> Result<Self, RunError> {
        let path = Self::path(run_dir);
        let text = fs::read_to_string(&path)
            .map_err(|_| RunError::State(format!("{} not found; is this a run directory?", path.display())))?;
        serde_json::from_str(&text).map_err(|e| RunError::State(format!("{}: {e}", path.display())))
    }

    /// Every listed artifact exists and still has its recorded digest.
    pub fn verify(&self, layout: &Layout) -> Result<(), RunError> {
        for a in &self.artifacts {
            let path = layout.root.join(&a.path);
            if !path.is_file() {
                return Err(RunError::State(format!("artifact {} is missing", a.path)));
            }
            if sha256_file(&path)? != a.sha256 {
                return Err(RunError::State(format!("artifact {} changed since the run", a.path)));
            }
        }
        Ok(())
    }
}

fn artifact(layout: &Layout, role: &str, path: &Path) -> Result<ArtifactRecord, RunError> {
    let rel = path.strip_prefix(&layout.root).unwrap_or(path);
    Ok(ArtifactRecord {
        role: role.into(),
        path: rel.to_string_lossy().replace('\\', "/"),
        sha256: sha256_file(path)?,
    })
}

fn now() -> String {
    chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Secs, true)
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct TrainOptions {
    pub scenario: Option<Scenario>,
    pub seed: Option<u64>,
    pub encoder: Option<EncoderKind>,
}

#[derive(Debug, Clone)]
pub struct TrainRun {
    pub run_dir: PathBuf,
    pub history: RunHistory,
    pub manifest: RunManifest,
}

pub fn checkpoint_path(run_dir: &Path, id: &str) -> PathBuf {
    run_dir.join("checkpoints").join(format!("{id}.json"))
}

pub fn history_path(run_dir: &Path) -> PathBuf {
    run_dir.join("history.jsonl")
}

/// Trains one scenario on the prepared data. The run directory is replaced
/// if it already exists.
pub fn cmd_train(config: &Config, options: &TrainOptions) -> Result<TrainRun, RunError> {
    let scenario = options.scenario.or(config.scenario).ok_or_else(|| {
        RunError::Usage(
            "no scenario given; valid names: SL_STL_ZERO_HR, SL_MTL_ZERO_HR, HR_STL, SLHR_MTL, SLHR_STL".into(),
        )
    })?;
    let mut train_config = config.train_config();
    if let Some(seed) = options.seed {
        train_config.seed = seed;
    }
    let seed = train_config.seed;
    let mut encoder = config.encoder.clone();
    if let Some(kind) = options.encoder {
        encoder.kind = kind;
    }
    let layout = Layout::new(&config.output_dir);
    let started_at = now();
    let data = load_prepared(&layout)?;
    let model = ModelBundle::new(&encoder, scenario.head_set(), train_config.dropout, seed, None)?;

    let run_dir = layout.run_dir(scenario, seed);
    if run_dir.exists() {
        fs::remove_dir_all(&run_dir).map_err(io_error(&run_dir))?;
    }
    fs::create_dir_all(run_dir.join("checkpoints")).map_err(io_error(&run_dir))?;

    let mut save_error = None;
    let outcome = train_scenario_with(scenario, &data, model, &train_config, |record, model| {
        let path = checkpoint_path(&run_dir, &record.checkpoint);
        Checkpoint::from_bundle(model).save(&path).map_err(|e| {
            save_error = Some(e.to_string());
            TrainError::Model(e)
        })
    });
    let outcome = match (outcome, save_error) {
        (Err(_), Some(msg)) => return Err(RunError::Data(msg)),
        (result, _) => result?,
    };
    let history = outcome.history;

    let mut history_bytes = Vec::new();
    history.write_jsonl(&mut history_bytes).expect("in-memory write");
    write_file(&history_path(&run_dir), history_bytes)?;
    let mut snapshot = config.clone();
    snapshot.encoder = encoder;
    snapshot.scenario = Some(scenario);
    snapshot.seed = seed;
    let config_text = snapshot.to_toml();
    write_file(&run_dir.join("config.toml"), &config_text)?;

    let mut corpus_digests = BTreeMap::new();
    for source in &config.corpus {
        if source.path.is_file() {
            corpus_digests.insert(source.path.display().to_string(), sha256_file(&source.path)?);
        }
    }
    let mut artifacts = vec![artifact(&layout, "split_manifest", &layout.split_manifest())?];
    for pool in data.keys() {
        artifacts.push(artifact(&layout, "prepared_pool", &layout.pool_file(*pool))?);
    }
    artifacts.push(artifact(&layout, "config_snapshot", &run_dir.join("config.toml"))?);
    artifacts.push(artifact(&layout, "history", &history_path(&run_dir))?);
    for epoch in &history.epochs {
        artifacts.push(artifact(&layout, "checkpoint", &checkpoint_path(&run_dir, &epoch.checkpoint))?);
    }
    let selected = history.selected.clone().expect("training sets a selection");
    let manifest = RunManifest {
        toolkit_version: TOOLKIT_VERSION.into(),
        scenario,
        seed,
        started_at,
        finished_at: now(),
        config: config_text,
        corpus_digests,
        training: TrainingSummary {
            steps: history.steps.len(),
            epochs: history.epochs.len(),
            tasks: history.tasks_stepped().iter().map(|t| t.as_str().to_string()).collect(),
            sl_instances: history.steps.iter().map(|s| s.sl_instances).sum(),
            hr_instances: history.hr_instances(),
            selected_checkpoint: selected,
        },
        artifacts,
    };
    write_file(&RunManifest::path(&run_dir), to_json(&manifest))?;
    Ok(TrainRun {
        run_dir,
        history,
        manifest,
    })
}

/// Metrics of one run on its test sets, baseline row included.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalResults {
    pub scenario: Scenario,
    pub seed: u64,
    pub checkpoint: String,
    pub entries: Vec<ReportEntry>,
}

impl EvalResults {
    pub fn path(run_dir: &Path) -> PathBuf {
        run_dir.join("eval").join("report.json")
    }
}

fn parse_test_sets(names: &[String], data: &PreparedData) -> Result<Vec<PoolKey>, RunError> {
    if names.is_empty() {
        return Ok(data.keys().copied().collect());
    }
    let mut out = Vec::new();
    for name in names {
        let pool: PoolKey = name.parse().map_err(|e| RunError::Usage(format!("test set `{name}`: {e}")))?;
        if !data.contains_key(&pool) {
            let known: Vec<String> = data.keys().map(PoolKey::name).collect();
            return Err(RunError::Usage(format!(
                "unknown test set `{name}`; prepared test sets: {}",
                known.join(", ")
            )));
        }
        if !out.contains(&pool) {
            out.push(pool);
        }
    }
    Ok(out)
}

pub fn baseline_entries(data: &PreparedData, test_sets: &[PoolKey]) -> Result<Vec<ReportEntry>, RunError> {
    let mut out = Vec::new();
    for pool in test_sets {
        let split = &data[pool];
        let train: Vec<SentimentLabel> = split.train.iter().map(|i| i.label).collect();
        let gold: Vec<SentimentLabel> = split.test.iter().map(|i| i.label).collect();
        out.push(ReportEntry {
            scenario: BASELINE_ROW.into(),
            test_set: pool.name(),
            report: majority_baseline(&train, &gold)?,
        });
    }
    Ok(out)
}

/// Scores the selected checkpoint of `run_dir` on the named test sets (all
/// prepared pools when empty). Test sets whose level has no head in the model
/// get only a baseline cell.
pub fn cmd_evaluate(run_dir: &Path, test_sets: &[String]) -> Result<(EvalResults, RenderedReport), RunError> {
    let manifest = RunManifest::load(run_dir)?;
    let history_file = history_path(run_dir);
    let file = fs::File::open(&history_file)
        .map_err(|_| RunError::State(format!("{} not found", history_file.display())))?;
    let history = RunHistory::read_jsonl(BufReader::new(file)).map_err(|e| RunError::State(e.to_string()))?;
    let selected = history
        .selected
        .ok_or_else(|| RunError::State(format!("{} has no selected checkpoint", run_dir.display())))?;
    let ck_path = checkpoint_path(run_dir, &selected);
    if !ck_path.is_file() {
        return Err(RunError::State(format!("selected checkpoint {} is missing", ck_path.display())));
    }
    let model = Checkpoint::load(&ck_path)?.into_bundle(None)?;

    let layout = Layout::of_run(run_dir)?;
    let data = load_prepared(&layout)?;
    let pools = parse_test_sets(test_sets, &data)?;

    let mut entries = baseline_entries(&data, &pools)?;
    let eval_dir = run_dir.join("eval");
    for pool in &pools {
        if model.heads().get(&pool.level).is_none() {
            continue;
        }
        let test = &data[pool].test;
        let scored = predict_instances(&model, pool.level, test.iter())?;
        let rows: Vec<PredictionRow> = test
            .iter()
            .zip(&scored)
            .map(|(inst, (predicted, probabilities))| PredictionRow {
                id: inst.id.clone(),
                gold: inst.label,
                predicted: *predicted,
                probabilities: *probabilities,
            })
            .collect();
        let mut buf = Vec::new();
        write_predictions(&mut buf, &rows)?;
        write_file(&eval_dir.join(format!("{}.predictions.tsv", pool.name())), buf)?;
        let gold: Vec<SentimentLabel> = rows.iter().map(|r| r.gold).collect();
        let predicted: Vec<SentimentLabel> = rows.iter().map(|r| r.predicted).collect();
        entries.push(ReportEntry {
            scenario: manifest.scenario.to_string(),
            test_set: pool.name(),
            report: crate::evaluator::evaluate(&gold, &predicted)?,
        });
    }
    let results = EvalResults {
        scenario: manifest.scenario,
        seed: manifest.seed,
        checkpoint: selected,
        entries,
    };
    let rendered = render_report(&results.entries);
    write_file(&EvalResults::path(run_dir), to_json(&results))?;
    write_file(&eval_dir.join("report.md"), &rendered.table)?;
    Ok((results, rendered))
}

/// Combines the evaluation results of every run under the output root into
/// one table: the baseline first, then scenarios in canonical order.
pub fn cmd_report(layout: &Layout) -> Result<RenderedReport, RunError> {
    let runs_dir = layout.runs_dir();
    let mut runs: Vec<EvalResults> = Vec::new();
    if runs_dir.is_dir() {
        let mut dirs: Vec<PathBuf> = fs::read_dir(&runs_dir)
            .map_err(io_error(&runs_dir))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.is_dir())
            .collect();
        dirs.sort();
        for dir in dirs {
            let path = EvalResults::path(&dir);
            if let Ok(text) = fs::read_to_string(&path) {
                let results: EvalResults =
                    serde_json::from_str(&text).map_err(|e| RunError::State(format!("{}: {e}", path.display())))?;
                runs.push(results);
            }
        }
    }
    if runs.is_empty() {
        return Err(RunError::State(format!(
            "no evaluated runs under {}; run train and evaluate first",
            runs_dir.display()
        )));
    }
    runs.sort_by_key(|r| (r.scenario, r.seed));
    let mut seeds_per_scenario: BTreeMap<Scenario, usize> = BTreeMap::new();
    for r in &runs {
        *seeds_per_scenario.entry(r.scenario).or_default() += 1;
    }

    let mut entries: Vec<ReportEntry> = Vec::new();
    for r in &runs {
        for e in r.entries.iter().filter(|e| e.scenario == BASELINE_ROW) {
            if !entries.iter().any(|x| x.test_set == e.test_set) {
                entries.push(e.clone());
            }
        }
    }
    for r in &runs {
        let label = if seeds_per_scenario[&r.scenario] > 1 {
            format!("{} (seed {})", r.scenario, r.seed)
        } else {
            r.scenario.to_string()
        };
        for e in r.entries.iter().filter(|e| e.scenario != BASELINE_ROW) {
            entries.push(ReportEntry {
                scenario: label.clone(),
                ..e.clone()
            });
        }
    }
    let rendered = render_report(&entries);
    let dir = layout.reports_dir();
    write_file(&dir.join("results.md"), &rendered.table)?;
    write_file(&dir.join("results.json"), rendered.to_json())?;
    Ok(rendered)
}

/// Dev metrics of the selected epoch, for progress output.
pub fn selected_dev(history: &RunHistory) -> Option<&BTreeMap<String, MetricsReport>> {
    let id = history.selected.as_ref()?;
    history.epochs.iter().find(|e| &e.checkpoint == id).map(|e| &e.dev)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reconciliation_deltas() {
        let mut expected = BTreeMap::new();
        expected.insert(
            "hr-doc".to_string(),
            ExpectedCounts {
                positive: 321,
                negative: 450,
                neutral: 1217,
                examples: None,
            },
        );
        let mut observed = BTreeMap::new();
        observed.insert("hr-doc".to_string(), LevelStats::new(321, 450, 1217));
        let r = Reconciliation::build(&expected, &observed);
        assert!(r.is_exact());
        assert_eq!(r.rows.len(), 4);
        assert_eq!(r.rows[3].expected, 1988);

        observed.insert("hr-doc".to_string(), LevelStats::new(320, 450, 1217));
        let r = Reconciliation::build(&expected, &observed);
        assert!(!r.is_exact());
        assert!(r.mismatches().contains("hr-doc positive: expected 321, observed 320 (-1)"));
        assert!(matches!(check_strict(&Some(r.clone()), true), Err(RunError::Reconciliation(_))));
        assert!(check_strict(&Some(r), false).is_ok());

        // a published total that disagrees with its own label counts
        let mut inconsistent = BTreeMap::new();
        inconsistent.insert(
            "sl-doc".to_string(),
            ExpectedCounts {
                positive: 1665,
                negative: 3337,
                neutral: 5418,
                examples: Some(10417),
            },
        );
        let mut observed = BTreeMap::new();
        observed.insert("sl-doc".to_string(), LevelStats::new(1665, 3337, 5418));
        let r = Reconciliation::build(&inconsistent, &observed);
        assert_eq!(r.rows.iter().filter(|r| r.delta() != 0).count(), 1);
        assert_eq!(r.rows[3].delta(), 3);
    }

    #[test]
    fn exit_codes() {
        assert_eq!(RunError::Usage(String::new()).exit_code(), 1);
        assert_eq!(RunError::Data(String::new()).exit_code(), 2);
        assert_eq!(RunError::State(String::new()).exit_code(), 2);
        let div = TrainError::Divergence {
            step: 3,
            task: crate::corpus::Granularity::Document,
            loss: f64::NAN,
        };
        assert_eq!(RunError::from(div).exit_code(), 3);
        assert_eq!(RunError::Reconciliation(String::new()).exit_code(), 4);
    }

    #[test]
    fn run_layout_round_trips() {
        let layout = Layout::new("/tmp/out");
        let run = layout.run_dir(Scenario::SlhrMtl, 42);
        assert_eq!(run, PathBuf::from("/tmp/out/runs/SLHR_MTL-seed42"));
        assert_eq!(Layout::of_run(&run).unwrap(), layout);
    }
}
