//! Corpus ingestion: delimited-text corpora into a uniform instance model.
//!
//! Both the Slovene multi-granularity corpus and the Croatian document corpus
//! are read through a user-supplied [`ColumnMapping`], since the published
//! files use different column layouts. Rows are returned in file order with
//! no filtering; cleaning is the job of [`crate::preprocess`].

use std::fmt;
use std::fs::File;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{source_name}: missing column `{column}`")]
    MissingColumn { source_name: String, column: String },
    #[error("{source_name}: line {line}: {message}")]
    Row {
        source_name: String,
        line: u64,
        message: String,
    },
    #[error("mean score {0} lies outside the Likert range [1, 5]")]
    LikertDomain(f64),
    #[error("invalid Likert thresholds: low {low} must be strictly below high {high}")]
    Thresholds { low: f64, high: f64 },
    #[error("Croatian instances are annotated at document level only, got {0}")]
    LanguageLevel(Granularity),
    #[error("{source_name}: {source}")]
    Csv {
        source_name: String,
        #[source]
        source: csv::Error,
    },
}

/// Three-way sentiment label.
///
/// The derived ordering is `Negative < Neutral < Positive`, which is also the
/// class index order used by every model and metric in the crate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SentimentLabel {
    Negative,
    Neutral,
    Positive,
}

impl SentimentLabel {
    pub const ALL: [SentimentLabel; 3] = [Self::Negative, Self::Neutral, Self::Positive];
    pub const COUNT: usize = 3;

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(index: usize) -> Option<Self> {
        Self::ALL.get(index).copied()
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Self::Negative => "negative",
            Self::Neutral => "neutral",
            Self::Positive => "positive",
        }
    }
}

impl fmt::Display for SentimentLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("unrecognised sentiment label `{0}` (expected positive, negative or neutral)")]
pub struct ParseLabelError(pub String);

impl FromStr for SentimentLabel {
    type Err = ParseLabelError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let token = s.trim();
        Self::ALL
            .into_iter()
            .find(|label| label.as_str().eq_ignore_ascii_case(token))
            .ok_or_else(|| ParseLabelError(token.to_string()))
    }
}

/// Annotation unit.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Granularity {
    Document,
    Paragraph,
    Sentence,
}

impl Granularity {
    pub const ALL: [Granularity; 3] = [Self::Document, Self::Paragraph, Self::Sentence];

    pub fn as_str(self) -> &'static str {
        match self {
            Self::Document => "document",
            Self::Paragraph => "paragraph",
            Self::Sentence => "sentence",
        }
    }

    /// Short form used in pool and test-set names (`sl-doc`, `hr-doc`, ...).
    pub fn short(self) -> &'static str {
        match self {
            Self::Document => "doc",
            Self::Paragraph => "para",
            Self::Sentence => "sent",
        }
    }
}

impl fmt::Display for Granularity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Granularity {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let token = s.trim().to_ascii_lowercase();
        Self::ALL
            .into_iter()
            .find(|g| g.as_str() == token || g.short() == token)
            .ok_or_else(|| format!("unknown granularity `{s}`"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Language {
    Sl,
    Hr,
}

impl Language {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::Sl => "sl",
            Self::Hr => "hr",
        }
    }
}

impl fmt::Display for Language {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Language {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "sl" => Ok(Self::Sl),
            "hr" => Ok(Self::Hr),
            other => Err(format!("unknown language `{other}` (expected sl or hr)")),
        }
    }
}

/// One labelled text unit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledInstance {
    pub id: String,
    pub text: String,
    pub language: Language,
    pub level: Granularity,
    pub label: SentimentLabel,
    /// Likert average in `[1, 5]`, when the source provides it.
    pub mean_score: Option<f64>,
}

impl LabeledInstance {
    pub fn new(
        id: impl Into<String>,
        text: impl Into<String>,
        language: Language,
        level: Granularity,
        label: SentimentLabel,
        mean_score: Option<f64>,
    ) -> Result<Self, CorpusError> {
        check_language_level(language, level)?;
        if let Some(score) = mean_score {
            check_likert_domain(score)?;
        }
        Ok(Self {
            id: id.into(),
            text: text.into(),
            language,
            level,
            label,
            mean_score,
        })
    }
}

fn check_language_level(language: Language, level: Granularity) -> Result<(), CorpusError> {
    if language == Language::Hr && level != Granularity::Document {
        return Err(CorpusError::LanguageLevel(level));
    }
    Ok(())
}

fn check_likert_domain(score: f64) -> Result<(), CorpusError> {
    if !(1.0..=5.0).contains(&score) {
        return Err(CorpusError::LikertDomain(score));
    }
    Ok(())
}

/// Per-label counts for one (language, level) pool.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct LevelStats {
    pub examples: u64,
    pub positive: u64,
    pub negative: u64,
    pub neutral: u64,
}

impl LevelStats {
    pub fn new(positive: u64, negative: u64, neutral: u64) -> Self {
        Self {
            examples: positive + negative + neutral,
            positive,
            negative,
            neutral,
        }
    }

    pub fn count(&self, label: SentimentLabel) -> u64 {
        match label {
            SentimentLabel::Positive => self.positive,
            SentimentLabel::Negative => self.negative,
            SentimentLabel::Neutral => self.neutral,
        }
    }
}

impl fmt::Display for LevelStats {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{} examples ({} positive / {} negative / {} neutral)",
            self.examples, self.positive, self.negative, self.neutral
        )
    }
}

pub fn dataset_stats(instances: &[LabeledInstance]) -> LevelStats {
    let mut counts = [0u64; SentimentLabel::COUNT];
    for instance in instances {
        counts[instance.label.index()] += 1;
    }
    LevelStats::new(
        counts[SentimentLabel::Positive.index()],
        counts[SentimentLabel::Negative.index()],
        counts[SentimentLabel::Neutral.index()],
    )
}

/// Cut-points for mapping a Likert mean onto three classes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LikertThresholds {
    pub low: f64,
    pub high: f64,
}

impl Default for LikertThresholds {
    fn default() -> Self {
        Self { low: 2.4, high: 3.6 }
    }
}

impl LikertThresholds {
    pub fn new(low: f64, high: f64) -> Result<Self, CorpusError> {
        let thresholds = Self { low, high };
        thresholds.validate()?;
        Ok(thresholds)
    }

    pub fn validate(&self) -> Result<(), CorpusError> {
        // NaN fails the comparison as well
        if self.low < self.high {
            Ok(())
        } else {
            Err(CorpusError::Thresholds {
                low: self.low,
                high: self.high,
            })
        }
    }
}

/// Negative below `low`, positive above `high`, neutral on the closed band.
pub fn map_likert(mean_score: f64, thresholds: LikertThresholds) -> Result<SentimentLabel, CorpusError> {
    thresholds.validate()?;
    check_likert_domain(mean_score)?;
    Ok(if mean_score < thresholds.low {
        SentimentLabel::Negative
    } else if mean_score > thresholds.high {
        SentimentLabel::Positive
    } else {
        SentimentLabel::Neutral
    })
}

/// An instance whose stored label differs from the one its mean score maps to.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LikertDisagreement {
    pub id: String,
    pub mean_score: f64,
    pub stored: SentimentLabel,
    pub derived: SentimentLabel,
}

/// Re-derives labels from mean scores and lists disagreements with the stored
/// final labels. The stored label is never modified.
pub fn audit_likert(
    instances: &[LabeledInstance],
    thresholds: LikertThresholds,
) -> Result<Vec<LikertDisagreement>, CorpusError> {
    let mut out = Vec::new();
    for instance in instances {
        let Some(score) = instance.mean_score else {
            continue;
        };
        let derived = map_likert(score, thresholds)?;
        if derived != instance.label {
            out.push(LikertDisagreement {
                id: instance.id.clone(),
                mean_score: score,
                stored: instance.label,
                derived,
            });
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Delimiter {
    #[default]
    Tab,
    Comma,
}

impl Delimiter {
    fn byte(self) -> u8 {
        match self {
            Self::Tab => b'\t',
            Self::Comma => b',',
        }
    }
}

/// One id column, or several joined with `/` (e.g. document + paragraph number).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum IdColumns {
    Single(String),
    Composite(Vec<String>),
}

impl IdColumns {
    fn names(&self) -> Vec<&str> {
        match self {
            Self::Single(name) => vec![name.as_str()],
            Self::Composite(names) => names.iter().map(String::as_str).collect(),
        }
    }
}

/// Where the fields of a [`LabeledInstance`] live in a delimited file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ColumnMapping {
    pub id: IdColumns,
    pub text: String,
    pub label: String,
    #[serde(default)]
    pub mean_score: Option<String>,
    #[serde(default)]
    pub delimiter: Delimiter,
    /// Honour double-quote escaping. Defaults to on for comma files and off
    /// for tab files, whose text fields routinely contain bare quotes.
    #[serde(default)]
    pub quoting: Option<bool>,
}

impl ColumnMapping {
    /// Layout written by [`write_corpus`].
    pub fn export() -> Self {
        Self {
            id: IdColumns::Single("id".into()),
            text: "text".into(),
            label: "label".into(),
            mean_score: Some("mean_score".into()),
            delimiter: Delimiter::Tab,
            quoting: Some(true),
        }
    }

    fn quoting_enabled(&self) -> bool {
        self.quoting.unwrap_or(self.delimiter == Delimiter::Comma)
    }
}

pub fn load_corpus(
    path: &Path,
    language: Language,
    level: Granularity,
    mapping: &ColumnMapping,
) -> Result<Vec<LabeledInstance>, CorpusError> {
    let file = File::open(path).map_err(|source| CorpusError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    read_corpus(file, &path.display().to_string(), language, level, mapping)
}

/// Parses a corpus from any reader. `source_name` only appears in errors.
pub fn read_corpus<R: Read>(
    reader: R,
    source_name: &str,
    language: Language,
    level: Granularity,
    mapping: &ColumnMapping,
) -> Result<Vec<LabeledInstance>, CorpusError> {
    check_language_level(language, level)?;
    let csv_err = |source| CorpusError::Csv {
        source_name: source_name.to_string(),
        source,
    };
    let mut rdr = csv::ReaderBuilder::new()
        .delimiter(mapping.delimiter.byte())
        .quoting(mapping.quoting_enabled())
        .has_headers(true)
        .flexible(true)
        .from_reader(reader);

    let headers = rdr.headers().map_err(csv_err)?.clone();
    let column = |name: &str| {
        headers
            .iter()
            .position(|h| h.trim() == name)
            .ok_or_else(|| CorpusError::MissingColumn {
                source_name: source_name.to_string(),
                column: name.to_string(),
            })
    };
    let id_cols = mapping
        .id
        .names()
        .into_iter()
        .map(column)
        .collect::<Result<Vec<_>, _>>()?;
    let text_col = column(&mapping.text)?;
    let label_col = column(&mapping.label)?;
    let score_col = mapping.mean_score.as_deref().map(column).transpose()?;

    let mut out = Vec::new();
    let mut record = csv::StringRecord::new();
    while rdr.read_record(&mut record).map_err(csv_err)? {
        let line = record.position().map_or(0, |p| p.line());
        let row_err = |message: String| CorpusError::Row {
            source_name: source_name.to_string(),
            line,
            message,
        };
        let field = |idx: usize| {
            record
                .get(idx)
                .ok_or_else(|| row_err(format!("row has {} fields, column {} missing", record.len(), idx + 1)))
        };

        let id = id_cols
            .iter()
            .map(|&c| field(c).map(str::trim))
            .collect::<Result<Vec<_>, _>>()?
            .join("/");
        let text = field(text_col)?.to_string();
        let label = field(label_col)?
            .parse::<SentimentLabel>()
            .map_err(|e| row_err(e.to_string()))?;
        let mean_score = match score_col {
            Some(c) => parse_score(field(c)?).map_err(row_err)?,
            None => None,
        };
        let instance = LabeledInstance::new(id, text, language, level, label, mean_score)
            .map_err(|e| row_err(e.to_string()))?;
        out.push(instance);
    }
    Ok(out)
}

fn parse_score(raw: &str) -> Result<Option<f64>, String> {
    let raw = raw.trim();
    if raw.is_empty() {
        return Ok(None);
    }
    raw.parse::<f64>()
        .or_else(|_| raw.replace(',', ".").parse::<f64>())
        .map(Some)
        .map_err(|_| format!("unparseable mean score `{raw}`"))
}

/// Writes instances in the [`ColumnMapping::export`] layout.
pub fn export_corpus<W: Write>(writer: W, instances: &[LabeledInstance]) -> Result<(), csv::Error> {
    let mut wtr = csv::WriterBuilder::new()
        .delimiter(b'\t')
        .quote_style(csv::QuoteStyle::Necessary)
        .from_writer(writer);
    wtr.write_record(["id", "text", "label", "mean_score"])?;
    for instance in instances {
        let score = instance.mean_score.map(|s| s.to_string()).unwrap_or_default();
        wtr.write_record([
            instance.id.as_str(),
            instance.text.as_str(),
            instance.label.as_str(),
            score.as_str(),
        ])?;
    }
    wtr.flush()?;
    Ok(())
}

pub fn write_corpus(path: &Path, instances: &[LabeledInstance]) -> Result<(), CorpusError> {
    let file = File::create(path).map_err(|source| CorpusError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    export_corpus(file, instances).map_err(|source| CorpusError::Csv {
        source_name: path.display().to_string(),
        source,
    })
}
