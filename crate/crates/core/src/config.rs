//! Run configuration: a single TOML file that fully determines a pipeline.
//!
//! Relative paths are resolved against the directory holding the file.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{ColumnMapping, Granularity, Language, LevelStats, LikertThresholds};
use crate::model::EncoderSpec;
use crate::preprocess::{DedupOptions, PoolKey, SplitSpec};
use crate::trainer::{Scenario, TrainConfig};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {message}")]
    Parse { path: PathBuf, message: String },
    #[error("{field}: {message}")]
    Invalid { field: String, message: String },
}

fn invalid(field: impl Into<String>, message: impl Into<String>) -> ConfigError {
    ConfigError::Invalid {
        field: field.into(),
        message: message.into(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CorpusSource {
    pub language: Language,
    pub level: Granularity,
    pub path: PathBuf,
    pub columns: ColumnMapping,
}

impl CorpusSource {
    pub fn pool(&self) -> PoolKey {
        PoolKey::new(self.language, self.level)
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitSection {
    #[serde(default)]
    pub test_fraction: Option<f64>,
    #[serde(default)]
    pub dev_fraction_of_train: Option<f64>,
    /// Falls back to the top-level seed.
    #[serde(default)]
    pub seed: Option<u64>,
}

/// Per-label counts to reconcile against, keyed by pool name.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Expectations {
    /// Counts straight after loading.
    #[serde(default)]
    pub raw: BTreeMap<String, ExpectedCounts>,
    /// Counts after cleaning.
    #[serde(default)]
    pub clean: BTreeMap<String, ExpectedCounts>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExpectedCounts {
    pub positive: u64,
    pub negative: u64,
    pub neutral: u64,
    /// Published total, when it is stated separately from the label counts.
    /// Defaults to their sum.
    #[serde(default)]
    pub examples: Option<u64>,
}

impl From<ExpectedCounts> for LevelStats {
    fn from(c: ExpectedCounts) -> Self {
        let mut stats = LevelStats::new(c.positive, c.negative, c.neutral);
        if let Some(total) = c.examples {
            stats.examples = total;
        }
        stats
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Config {
    #[serde(default)]
    pub seed: u64,
    /// Artifact root. Defaults to `out` next to the config file.
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    /// Scenario used by `train` when none is given on the command line.
    #[serde(default)]
    pub scenario: Option<Scenario>,
    #[serde(default)]
    pub likert: LikertThresholds,
    #[serde(default)]
    pub corpus: Vec<CorpusSource>,
    #[serde(default)]
    pub preprocess: DedupOptions,
    #[serde(default)]
    pub split: SplitSection,
    pub encoder: EncoderSpec,
    /// Training options; the seed comes from the top level.
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default)]
    pub expect: Expectations,
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("out")
}

impl Config {
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let base = path.parent().unwrap_or(Path::new("."));
        Self::parse(&text, base).map_err(|e| match e {
            ConfigError::Parse { message, .. } => ConfigError::Parse {
                path: path.to_path_buf(),
                message,
            },
            other => other,
        })
    }

    /// Parses `text`, resolving relative paths against `base`.
    pub fn parse(text: &str, base: &Path) -> Result<Self, ConfigError> {
        let mut config: Self = toml::from_str(text).map_err(|e| ConfigError::Parse {
            path: PathBuf::from("<config>"),
            message: e.to_string(),
        })?;
        for source in &mut config.corpus {
            source.path = base.join(&source.path);
        }
        config.output_dir = base.join(&config.output_dir);
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        self.likert
            .validate()
            .map_err(|e| invalid("likert", e.to_string()))?;
        self.split_spec()
            .validate()
            .map_err(|e| invalid("split", e.to_string()))?;
        self.encoder
            .validate()
            .map_err(|e| invalid("encoder", e.to_string()))?;
        self.train
            .validate()
            .map_err(|e| invalid("train", e.to_string()))?;
        let mut seen = BTreeMap::new();
        for (i, source) in self.corpus.iter().enumerate() {
            let field = format!("corpus[{i}]");
            if source.language == Language::Hr && source.level != Granularity::Document {
                return Err(invalid(format!("{field}.level"), "Croatian corpora are document level only"));
            }
            if let Some(prev) = seen.insert(source.pool(), i) {
                return Err(invalid(field, format!("pool {} already defined by corpus[{prev}]", source.pool())));
            }
        }
        for (section, map) in [("expect.raw", &self.expect.raw), ("expect.clean", &self.expect.clean)] {
            for name in map.keys() {
                name.parse::<PoolKey>()
                    .map_err(|e| invalid(format!("{section}.{name}"), e))?;
            }
        }
        Ok(())
    }

    pub fn split_spec(&self) -> SplitSpec {
        let defaults = SplitSpec::default();
        SplitSpec {
            test_fraction: self.split.test_fraction.unwrap_or(defaults.test_fraction),
            dev_fraction_of_train: self
                .split
                .dev_fraction_of_train
                .unwrap_or(defaults.dev_fraction_of_train),
            seed: self.split.seed.unwrap_or(self.seed),
        }
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            seed: self.seed,
            ..self.train.clone()
        }
    }

    pub fn source(&self, pool: PoolKey) -> Option<&CorpusSource> {
        self.corpus.iter().find(|s| s.pool() == pool)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serialises")
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::EncoderKind;

    const MINIMAL: &str = r#"
seed = 7

[[corpus]]
language = "sl"
level = "paragraph"
path = "data/sl_para.tsv"
columns = { id = ["doc", "para"], text = "content", label = "sentiment", delimiter = "comma" }

[encoder]
kind = "toy_deterministic"
hidden_dim = 16

[train]
learning_rate = 0.01
epochs = 2

[expect.clean.sl-para]
positive = 1
negative = 2
neutral = 3
"#;

    #[test]
    fn parses_and_resolves_paths() {
        let c = Config::parse(MINIMAL, Path::new("/cfg")).unwrap();
        assert_eq!(c.corpus[0].path, PathBuf::from("/cfg/data/sl_para.tsv"));
        assert_eq!(c.output_dir, PathBuf::from("/cfg/out"));
        assert_eq!(c.encoder.kind, EncoderKind::ToyDeterministic);
        assert_eq!(c.split_spec().seed, 7);
        assert_eq!(c.split_spec().test_fraction, 0.2);
        let t = c.train_config();
        assert_eq!((t.seed, t.learning_rate, t.epochs, t.batch_size), (7, 0.01, Some(2), 32));
        assert_eq!(c.likert, LikertThresholds::default());
        assert_eq!(LevelStats::from(c.expect.clean["sl-para"]).examples, 6);
    }

    #[test]
    fn snapshot_round_trips() {
        let c = Config::parse(MINIMAL, Path::new("/cfg")).unwrap();
        let again: Config = toml::from_str(&c.to_toml()).unwrap();
        assert_eq!(again, c);
    }

    #[test]
    fn errors_name_the_field() {
        let bad = MINIMAL.replace("level = \"paragraph\"", "level = \"paragraph\"\nlanguage2 = 1");
        assert!(matches!(Config::parse(&bad, Path::new(".")), Err(ConfigError::Parse { .. })));

        let hr = MINIMAL.replace("language = \"sl\"", "language = \"hr\"");
        let err = Config::parse(&hr, Path::new(".")).unwrap_err();
        assert!(err.to_string().starts_with("corpus[0].level"), "{err}");

        let pool = MINIMAL.replace("clean.sl-para", "clean.xx-para");
        let err = Config::parse(&pool, Path::new(".")).unwrap_err();
        assert!(err.to_string().starts_with("expect.clean.xx-para"), "{err}");

        let lr = MINIMAL.replace("learning_rate = 0.01", "learning_rate = -1.0");
        assert!(Config::parse(&lr, Path::new(".")).unwrap_err().to_string().starts_with("train"));
    }
}
