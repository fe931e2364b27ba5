use std::collections::HashMap;
use std::fs;
use std::hash::Hasher;
use std::path::{Path, PathBuf};

use fnv::FnvHasher;
use ndarray::{Array2, ArrayView1};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::ModelError;

/// Overrides the directory searched for pretrained encoder assets.
pub const ASSET_CACHE_ENV: &str = "SENTIMTL_ASSET_CACHE";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EncoderKind {
    PretrainedAdapter,
    ToyDeterministic,
}

impl std::str::FromStr for EncoderKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "pretrained_adapter" => Ok(Self::PretrainedAdapter),
            "toy_deterministic" => Ok(Self::ToyDeterministic),
            other => Err(format!(
                "unknown encoder `{other}` (expected pretrained_adapter or toy_deterministic)"
            )),
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Pooling {
    #[default]
    FirstToken,
    Mean,
}

impl Pooling {
    fn file_stem(self) -> &'static str {
        match self {
            Self::FirstToken => "first_token",
            Self::Mean => "mean",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EncoderSpec {
    pub kind: EncoderKind,
    pub hidden_dim: usize,
    #[serde(default = "default_max_tokens")]
    pub max_tokens: usize,
    #[serde(default)]
    pub asset_ref: Option<String>,
    #[serde(default)]
    pub pooling: Pooling,
    /// Hash buckets for the toy encoder's character trigrams.
    #[serde(default = "default_buckets")]
    pub buckets: usize,
    /// Seed of the toy encoder's fixed projection.
    #[serde(default)]
    pub projection_seed: u64,
}

fn default_max_tokens() -> usize {
    512
}

fn default_buckets() -> usize {
    4096
}

impl EncoderSpec {
    pub fn toy(hidden_dim: usize) -> Self {
        Self {
            kind: EncoderKind::ToyDeterministic,
            hidden_dim,
            max_tokens: default_max_tokens(),
            asset_ref: None,
            pooling: Pooling::default(),
            buckets: default_buckets(),
            projection_seed: 0,
        }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        if self.hidden_dim == 0 {
            return Err(ModelError::InvalidSpec("hidden_dim must be positive".into()));
        }
        if self.max_tokens == 0 {
            return Err(ModelError::InvalidSpec("max_tokens must be positive".into()));
        }
        if self.kind == EncoderKind::ToyDeterministic && self.buckets == 0 {
            return Err(ModelError::InvalidSpec("buckets must be positive".into()));
        }
        Ok(())
    }
}

/// Frozen text featuriser in front of the shared trainable layer.
#[derive(Debug, Clone)]
pub enum Encoder {
    Toy(ToyEncoder),
    Pretrained(PretrainedAdapter),
}

impl Encoder {
    /// `cache_dir` is consulted only for the pretrained adapter; when `None`,
    /// [`ASSET_CACHE_ENV`] is read.
    pub fn build(spec: &EncoderSpec, cache_dir: Option<&Path>) -> Result<Self, ModelError> {
        spec.validate()?;
        match spec.kind {
            EncoderKind::ToyDeterministic => Ok(Self::Toy(ToyEncoder::new(spec))),
            EncoderKind::PretrainedAdapter => {
                let cache = match cache_dir {
                    Some(dir) => dir.to_path_buf(),
                    None => std::env::var_os(ASSET_CACHE_ENV).map(PathBuf::from).ok_or_else(|| {
                        ModelError::Asset(format!("no asset cache directory given and {ASSET_CACHE_ENV} is unset"))
                    })?,
                };
                PretrainedAdapter::open(spec, &cache).map(Self::Pretrained)
            }
        }
    }

    pub fn hidden_dim(&self) -> usize {
        match self {
            Self::Toy(e) => e.hidden_dim,
            Self::Pretrained(e) => e.hidden_dim,
        }
    }

    /// One row per text. Both encoders are deterministic and mode-independent.
    pub fn encode(&self, texts: &[&str]) -> Result<Array2<f64>, ModelError> {
        let dim = self.hidden_dim();
        let mut out = Array2::zeros((texts.len(), dim));
        for (mut row, text) in out.rows_mut().into_iter().zip(texts) {
            match self {
                Self::Toy(e) => e.encode_into(text, row.as_slice_mut().expect("row-major")),
                Self::Pretrained(e) => row.assign(&e.lookup(text)?),
            }
        }
        Ok(out)
    }
}

/// Hashed character-trigram counts, projected by a fixed seeded random
/// matrix and L2-normalised. Texts are cut to their first `max_tokens`
/// whitespace tokens.
#[derive(Debug, Clone)]
pub struct ToyEncoder {
    hidden_dim: usize,
    max_tokens: usize,
    projection: Array2<f64>,
}

const BOS: char = '\u{2}';
const EOS: char = '\u{3}';

impl ToyEncoder {
    pub fn new(spec: &EncoderSpec) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(spec.projection_seed);
        let projection = Array2::from_shape_simple_fn((spec.buckets, spec.hidden_dim), || rng.random_range(-1.0..1.0));
        Self {
            hidden_dim: spec.hidden_dim,
            max_tokens: spec.max_tokens,
            projection,
        }
    }

    /// The prefix of `text` the encoder actually sees.
    pub fn truncate(&self, text: &str) -> String {
        text.split_whitespace().take(self.max_tokens).collect::<Vec<_>>().join(" ")
    }

    fn bucket(&self, gram: &[char]) -> usize {
        let mut hasher = FnvHasher::default();
        let mut buf = [0u8; 4];
        for c in gram {
            hasher.write(c.encode_utf8(&mut buf).as_bytes());
        }
        (hasher.finish() % self.projection.nrows() as u64) as usize
    }

    fn encode_into(&self, text: &str, out: &mut [f64]) {
        out.fill(0.0);
        let chars: Vec<char> = std::iter::once(BOS)
            .chain(self.truncate(text).chars())
            .chain(std::iter::once(EOS))
            .collect();
        let mut counts: HashMap<usize, f64> = HashMap::new();
        for gram in chars.windows(3) {
            *counts.entry(self.bucket(gram)).or_default() += 1.0;
        }
        // accumulate in bucket order so the sum does not depend on map iteration
        let mut buckets: Vec<_> = counts.into_iter().collect();
        buckets.sort_unstable_by_key(|(b, _)| *b);
        for (bucket, count) in buckets {
            let row: ArrayView1<f64> = self.projection.row(bucket);
            for (o, p) in out.iter_mut().zip(row) {
                *o += count * p;
            }
        }
        let norm = out.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm > 0.0 {
            out.iter_mut().for_each(|v| *v /= norm);
        }
    }

    pub fn encode_one(&self, text: &str) -> Vec<f64> {
        let mut out = vec![0.0; self.hidden_dim];
        self.encode_into(text, &mut out);
        out
    }
}

/// Reads pooled representations exported from an external pretrained model.
///
/// Asset layout under `<cache>/<asset_ref>/`:
/// - `adapter.json`: `{"hidden_dim": 768, "max_tokens": 512}`
/// - `features.first_token.tsv` and/or `features.mean.tsv`: one line per text,
///   `<sha256 hex of the text>\t<space-separated floats>`
///
/// Tokenisation, front-of-text truncation to `max_tokens` and pooling happen
/// in the exporter (see `scripts/export_features.py`).
#[derive(Debug, Clone)]
pub struct PretrainedAdapter {
    hidden_dim: usize,
    features: HashMap<String, Vec<f64>>,
}

#[derive(Debug, Deserialize)]
struct AdapterMeta {
    hidden_dim: usize,
    max_tokens: usize,
}

fn asset_io(path: &Path, err: std::io::Error) -> ModelError {
    ModelError::Asset(format!("{}: {err}", path.display()))
}

impl PretrainedAdapter {
    pub fn open(spec: &EncoderSpec, cache: &Path) -> Result<Self, ModelError> {
        let asset = spec
            .asset_ref
            .as_deref()
            .ok_or_else(|| ModelError::Asset("pretrained adapter requires asset_ref".into()))?;
        let dir = cache.join(asset);
        if !dir.is_dir() {
            return Err(ModelError::Asset(format!(
                "asset `{asset}` not found under {}",
                cache.display()
            )));
        }
        let meta_path = dir.join("adapter.json");
        let meta: AdapterMeta = serde_json::from_slice(&fs::read(&meta_path).map_err(|e| asset_io(&meta_path, e))?)
            .map_err(|e| ModelError::Asset(format!("{}: {e}", meta_path.display())))?;
        if meta.hidden_dim != spec.hidden_dim {
            return Err(ModelError::Asset(format!(
                "asset hidden_dim {} does not match configured {}",
                meta.hidden_dim, spec.hidden_dim
            )));
        }
        if meta.max_tokens != spec.max_tokens {
            return Err(ModelError::Asset(format!(
                "asset was exported with max_tokens {}, configured {}",
                meta.max_tokens, spec.max_tokens
            )));
        }
        let feat_path = dir.join(format!("features.{}.tsv", spec.pooling.file_stem()));
        let raw = fs::read_to_string(&feat_path).map_err(|e| asset_io(&feat_path, e))?;
        let mut features = HashMap::new();
        for (n, line) in raw.lines().enumerate().filter(|(_, l)| !l.is_empty()) {
            let bad = |msg: &str| ModelError::Asset(format!("{}:{}: {msg}", feat_path.display(), n + 1));
            let (key, values) = line.split_once('\t').ok_or_else(|| bad("missing tab"))?;
            let vector = values
                .split_ascii_whitespace()
                .map(str::parse::<f64>)
                .collect::<Result<Vec<_>, _>>()
                .map_err(|_| bad("unparseable value"))?;
            if vector.len() != spec.hidden_dim {
                return Err(bad("wrong vector width"));
            }
            features.insert(key.to_string(), vector);
        }
        Ok(Self {
            hidden_dim: spec.hidden_dim,
            features,
        })
    }

    pub fn text_key(text: &str) -> String {
        hex::encode(Sha256::digest(text.as_bytes()))
    }

    fn lookup(&self, text: &str) -> Result<ArrayView1<'_, f64>, ModelError> {
        let key = Self::text_key(text);
        self.features
            .get(&key)
            .map(|v| ArrayView1::from(v.as_slice()))
            .ok_or_else(|| ModelError::Asset(format!("no exported features for text with sha256 {key}")))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy(dim: usize) -> Encoder {
        Encoder::build(&EncoderSpec::toy(dim), None).unwrap()
    }

    #[test]
    fn toy_is_deterministic() {
        let e = toy(32);
        let a = e.encode(&["Vlada je sprejela proračun"]).unwrap();
        let b = e.encode(&["Vlada je sprejela proračun"]).unwrap();
        assert_eq!(a, b);
        let norm: f64 = a.row(0).iter().map(|v| v * v).sum::<f64>().sqrt();
        assert!((norm - 1.0).abs() < 1e-12);
    }

    #[test]
    fn toy_truncates_to_prefix() {
        let spec = EncoderSpec {
            max_tokens: 4,
            ..EncoderSpec::toy(16)
        };
        let e = Encoder::build(&spec, None).unwrap();
        let long = "one two three four five six seven";
        let got = e.encode(&[long, "one two three four"]).unwrap();
        assert_eq!(got.row(0), got.row(1));
        let short = e.encode(&["one two three"]).unwrap();
        assert_ne!(got.row(0), short.row(0));
    }

    #[test]
    fn toy_distinct_texts_rarely_collide() {
        let e = toy(64);
        let texts: Vec<String> = (0..1000).map(|i| format!("novica številka {i} o gospodarstvu")).collect();
        let refs: Vec<&str> = texts.iter().map(String::as_str).collect();
        let m = e.encode(&refs).unwrap();
        let mut rows: Vec<Vec<u64>> = m.rows().into_iter().map(|r| r.iter().map(|v| v.to_bits()).collect()).collect();
        rows.sort();
        rows.dedup();
        assert_eq!(rows.len(), 1000);
    }

    #[test]
    fn invalid_specs_rejected() {
        assert!(Encoder::build(&EncoderSpec::toy(0), None).is_err());
        let spec = EncoderSpec { max_tokens: 0, ..EncoderSpec::toy(8) };
        assert!(Encoder::build(&spec, None).is_err());
    }

    #[test]
    fn pretrained_unresolvable_asset() {
        let dir = tempfile::tempdir().unwrap();
        let spec = EncoderSpec {
            kind: EncoderKind::PretrainedAdapter,
            asset_ref: Some("crosloengual-bert".into()),
            ..EncoderSpec::toy(768)
        };
        let err = Encoder::build(&spec, Some(dir.path())).unwrap_err();
        assert!(matches!(err, ModelError::Asset(msg) if msg.contains("crosloengual-bert")));
        let no_ref = EncoderSpec { asset_ref: None, ..spec };
        assert!(matches!(Encoder::build(&no_ref, Some(dir.path())), Err(ModelError::Asset(_))));
    }

    #[test]
    fn pretrained_reads_exported_features() {
        let dir = tempfile::tempdir().unwrap();
        let asset = dir.path().join("tiny");
        fs::create_dir(&asset).unwrap();
        fs::write(asset.join("adapter.json"), r#"{"hidden_dim": 3, "max_tokens": 512}"#).unwrap();
        let line = format!("{}\t0.5 -1 2\n", PretrainedAdapter::text_key("dober dan"));
        fs::write(asset.join("features.first_token.tsv"), line).unwrap();
        let spec = EncoderSpec {
            kind: EncoderKind::PretrainedAdapter,
            asset_ref: Some("tiny".into()),
            ..EncoderSpec::toy(3)
        };
        let e = Encoder::build(&spec, Some(dir.path())).unwrap();
        let m = e.encode(&["dober dan"]).unwrap();
        assert_eq!(m.row(0).to_vec(), vec![0.5, -1.0, 2.0]);
        assert!(matches!(e.encode(&["unknown"]), Err(ModelError::Asset(_))));

        let wrong_dim = EncoderSpec { hidden_dim: 4, ..spec.clone() };
        assert!(Encoder::build(&wrong_dim, Some(dir.path())).is_err());
        let mean = EncoderSpec { pooling: Pooling::Mean, ..spec };
        assert!(Encoder::build(&mean, Some(dir.path())).is_err());
    }
}
