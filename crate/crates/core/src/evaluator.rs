//! Macro-averaged precision, recall and F1, the majority-class baseline, and
//! results tables with one row per training scenario.
//!
//! Rows of a [`ConfusionMatrix`] are gold labels, columns are predictions.
//! A class whose precision or recall denominator is zero scores 0 on that
//! quantity; F1 is 0 when precision and recall are both 0.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::io::{Read, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::SentimentLabel;

const K: usize = SentimentLabel::COUNT;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("shape mismatch: {gold} gold labels vs {predicted} predictions")]
    Shape { gold: usize, predicted: usize },
    #[error("nothing to evaluate: {0}")]
    Empty(&'static str),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error("prediction file: {0}")]
    Parse(String),
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    counts: [[u64; K]; K],
}

impl ConfusionMatrix {
    pub fn from_counts(counts: [[u64; K]; K]) -> Self {
        Self { counts }
    }

    pub fn counts(&self) -> &[[u64; K]; K] {
        &self.counts
    }

    pub fn get(&self, gold: SentimentLabel, predicted: SentimentLabel) -> u64 {
        self.counts[gold.index()][predicted.index()]
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    fn row_sum(&self, i: usize) -> u64 {
        self.counts[i].iter().sum()
    }

    fn col_sum(&self, j: usize) -> u64 {
        self.counts.iter().map(|row| row[j]).sum()
    }
}

pub fn confusion(gold: &[SentimentLabel], predicted: &[SentimentLabel]) -> Result<ConfusionMatrix, EvalError> {
    if gold.len() != predicted.len() {
        return Err(EvalError::Shape {
            gold: gold.len(),
            predicted: predicted.len(),
        });
    }
    if gold.is_empty() {
        return Err(EvalError::Shape { gold: 0, predicted: 0 });
    }
    let mut cm = ConfusionMatrix::default();
    for (g, p) in gold.iter().zip(predicted) {
        cm.counts[g.index()][p.index()] += 1;
    }
    Ok(cm)
}

/// Scores for one class, as fractions in `[0, 1]`.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct ClassScores {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub per_class: BTreeMap<SentimentLabel, ClassScores>,
    pub macro_precision: f64,
    pub macro_recall: f64,
    pub macro_f1: f64,
    pub support: BTreeMap<SentimentLabel, u64>,
}

impl MetricsReport {
    /// Macro (precision, recall, F1) in percent, unrounded.
    pub fn macro_percent(&self) -> [f64; 3] {
        [self.macro_precision, self.macro_recall, self.macro_f1].map(|v| v * 100.0)
    }
}

fn ratio(num: u64, den: u64) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

pub fn macro_prf(cm: &ConfusionMatrix) -> Result<MetricsReport, EvalError> {
    if cm.total() == 0 {
        return Err(EvalError::Empty("confusion matrix has no counts"));
    }
    let mut per_class = BTreeMap::new();
    let mut support = BTreeMap::new();
    let (mut p_sum, mut r_sum, mut f_sum) = (0.0, 0.0, 0.0);
    for label in SentimentLabel::ALL {
        let i = label.index();
        let tp = cm.counts[i][i];
        let precision = ratio(tp, cm.col_sum(i));
        let recall = ratio(tp, cm.row_sum(i));
        let f1 = if precision + recall > 0.0 {
            2.0 * precision * recall / (precision + recall)
        } else {
            0.0
        };
        p_sum += precision;
        r_sum += recall;
        f_sum += f1;
        per_class.insert(label, ClassScores { precision, recall, f1 });
        support.insert(label, cm.row_sum(i));
    }
    Ok(MetricsReport {
        per_class,
        macro_precision: p_sum / K as f64,
        macro_recall: r_sum / K as f64,
        macro_f1: f_sum / K as f64,
        support,
    })
}

pub fn evaluate(gold: &[SentimentLabel], predicted: &[SentimentLabel]) -> Result<MetricsReport, EvalError> {
    macro_prf(&confusion(gold, predicted)?)
}

/// Most frequent label; ties go to the earlier label in
/// negative < neutral < positive order.
pub fn majority_label(labels: &[SentimentLabel]) -> Option<SentimentLabel> {
    if labels.is_empty() {
        return None;
    }
    let mut counts = [0usize; K];
    for label in labels {
        counts[label.index()] += 1;
    }
    let mut best = 0;
    for i in 1..K {
        if counts[i] > counts[best] {
            best = i;
        }
    }
    SentimentLabel::from_index(best)
}

/// Scores the constant classifier that always predicts the training majority.
pub fn majority_baseline(train_labels: &[SentimentLabel], test_gold: &[SentimentLabel]) -> Result<MetricsReport, EvalError> {
    let majority = majority_label(train_labels).ok_or(EvalError::Empty("no training labels"))?;
    if test_gold.is_empty() {
        return Err(EvalError::Empty("no test labels"));
    }
    let predicted = vec![majority; test_gold.len()];
    evaluate(test_gold, &predicted)
}

/// `100 * fraction` rounded half-to-even at two decimals.
pub fn round_percent(fraction: f64) -> f64 {
    (fraction * 10_000.0).round_ties_even() / 100.0
}

pub fn format_percent(fraction: f64) -> String {
    format!("{:.2}", round_percent(fraction))
}

/// One cell group of a results table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportEntry {
    pub scenario: String,
    pub test_set: String,
    pub report: MetricsReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StructuredRow {
    pub scenario: String,
    pub results: BTreeMap<String, MetricsReport>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StructuredReport {
    pub test_sets: Vec<String>,
    pub rows: Vec<StructuredRow>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RenderedReport {
    /// Markdown table, percent values with two decimals.
    pub table: String,
    pub structured: StructuredReport,
}

impl RenderedReport {
    pub fn to_json(&self) -> String {
        let mut json = serde_json::to_string_pretty(&self.structured).expect("report serialises");
        json.push('\n');
        json
    }

    /// Number of numeric (non-dash) cells in the table.
    pub fn metric_cells(&self) -> usize {
        self.structured.rows.iter().map(|r| r.results.len() * 3).sum()
    }
}

fn first_appearance<'a>(items: impl Iterator<Item = &'a str>) -> Vec<String> {
    let mut out: Vec<String> = Vec::new();
    for item in items {
        if !out.iter().any(|s| s == item) {
            out.push(item.to_string());
        }
    }
    out
}

/// Rows and columns keep the order in which scenarios and test sets first
/// appear in `entries`. A later entry for the same cell replaces an earlier one.
pub fn render_report(entries: &[ReportEntry]) -> RenderedReport {
    let scenarios = first_appearance(entries.iter().map(|e| e.scenario.as_str()));
    let test_sets = first_appearance(entries.iter().map(|e| e.test_set.as_str()));

    let rows: Vec<StructuredRow> = scenarios
        .iter()
        .map(|scenario| StructuredRow {
            scenario: scenario.clone(),
            results: entries
                .iter()
                .filter(|e| &e.scenario == scenario)
                .map(|e| (e.test_set.clone(), e.report.clone()))
                .collect(),
        })
        .collect();

    let mut table = String::new();
    table.push_str("| Train set |");
    for set in &test_sets {
        let _ = write!(table, " {set} P | {set} R | {set} F1 |");
    }
    table.push_str("\n|---|");
    for _ in &test_sets {
        table.push_str("---:|---:|---:|");
    }
    table.push('\n');
    for row in &rows {
        let _ = write!(table, "| {} |", row.scenario);
        for set in &test_sets {
            match row.results.get(set) {
                Some(r) => {
                    let _ = write!(
                        table,
                        " {} | {} | {} |",
                        format_percent(r.macro_precision),
                        format_percent(r.macro_recall),
                        format_percent(r.macro_f1)
                    );
                }
                None => table.push_str(" - | - | - |"),
            }
        }
        table.push('\n');
    }

    RenderedReport {
        table,
        structured: StructuredReport { test_sets, rows },
    }
}

/// One scored instance in a prediction file.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictionRow {
    pub id: String,
    pub gold: SentimentLabel,
    pub predicted: SentimentLabel,
    /// Probabilities in class index order (negative, neutral, positive).
    pub probabilities: [f64; K],
}

const PREDICTION_HEADER: [&str; 6] = ["id", "gold", "predicted", "p_positive", "p_negative", "p_neutral"];

pub fn write_predictions<W: Write>(writer: W, rows: &[PredictionRow]) -> Result<(), EvalError> {
    let mut wtr = csv::WriterBuilder::new().delimiter(b'\t').from_writer(writer);
    wtr.write_record(PREDICTION_HEADER)?;
    for row in rows {
        let p = |label: SentimentLabel| row.probabilities[label.index()].to_string();
        wtr.write_record([
            row.id.clone(),
            row.gold.to_string(),
            row.predicted.to_string(),
            p(SentimentLabel::Positive),
            p(SentimentLabel::Negative),
            p(SentimentLabel::Neutral),
        ])?;
    }
    wtr.flush().map_err(csv::Error::from)?;
    Ok(())
}

pub fn read_predictions<R: Read>(reader: R) -> Result<Vec<PredictionRow>, EvalError> {
    let mut rdr = csv::ReaderBuilder::new().delimiter(b'\t').from_reader(reader);
    let headers = rdr.headers()?.clone();
    if headers.iter().ne(PREDICTION_HEADER) {
        return Err(EvalError::Parse(format!("unexpected header {headers:?}")));
    }
    let mut out = Vec::new();
    for record in rdr.records() {
        let record = record?;
        let label = |i: usize| record[i].parse::<SentimentLabel>().map_err(|e| EvalError::Parse(e.to_string()));
        let prob = |i: usize| {
            record[i]
                .parse::<f64>()
                .map_err(|_| EvalError::Parse(format!("bad probability `{}`", &record[i])))
        };
        let mut probabilities = [0.0; K];
        probabilities[SentimentLabel::Positive.index()] = prob(3)?;
        probabilities[SentimentLabel::Negative.index()] = prob(4)?;
        probabilities[SentimentLabel::Neutral.index()] = prob(5)?;
        out.push(PredictionRow {
            id: record[0].to_string(),
            gold: label(1)?,
            predicted: label(2)?,
            probabilities,
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;
    use SentimentLabel::{Negative as Neg, Neutral as Neu, Positive as Pos};

    /// Brute-force per-class counting straight from the pairs, independent of
    /// the confusion-matrix path.
    fn brute_macro(gold: &[SentimentLabel], pred: &[SentimentLabel]) -> [f64; 3] {
        let mut sums = [0.0; 3];
        for c in SentimentLabel::ALL {
            let tp = gold.iter().zip(pred).filter(|(g, p)| **g == c && **p == c).count() as f64;
            let predicted = pred.iter().filter(|p| **p == c).count() as f64;
            let actual = gold.iter().filter(|g| **g == c).count() as f64;
            let p = if predicted > 0.0 { tp / predicted } else { 0.0 };
            let r = if actual > 0.0 { tp / actual } else { 0.0 };
            let f = if p + r > 0.0 { 2.0 * p * r / (p + r) } else { 0.0 };
            sums[0] += p;
            sums[1] += r;
            sums[2] += f;
        }
        sums.map(|s| 100.0 * s / 3.0)
    }

    /// All-one-class predictor where that class has gold share `q`.
    fn closed_form(q: f64) -> [f64; 3] {
        [100.0 * q / 3.0, 100.0 / 3.0, 100.0 * 2.0 * q / (3.0 * (1.0 + q))]
    }

    #[test]
    fn confusion_perfect_agreement() {
        let g = [Neu, Neu, Pos];
        let cm = confusion(&g, &g).unwrap();
        assert_eq!(cm.get(Neu, Neu), 2);
        assert_eq!(cm.get(Pos, Pos), 1);
        assert_eq!(cm.total(), 3);
        let off: u64 = SentimentLabel::ALL
            .iter()
            .flat_map(|a| SentimentLabel::ALL.iter().map(move |b| (a, b)))
            .filter(|(a, b)| a != b)
            .map(|(a, b)| cm.get(*a, *b))
            .sum();
        assert_eq!(off, 0);
    }

    #[test]
    fn confusion_single_miss_and_errors() {
        let cm = confusion(&[Pos], &[Neg]).unwrap();
        assert_eq!(cm.get(Pos, Neg), 1);
        assert_eq!(cm.total(), 1);
        assert!(matches!(confusion(&[], &[]), Err(EvalError::Shape { .. })));
        assert!(matches!(confusion(&[Pos], &[Pos, Neg]), Err(EvalError::Shape { gold: 1, predicted: 2 })));
    }

    #[test]
    fn perfect_predictions_score_hundred() {
        let g = [Neg, Neu, Pos, Pos];
        let r = evaluate(&g, &g).unwrap();
        for v in r.macro_percent() {
            assert_abs_diff_eq!(v, 100.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn all_neutral_matches_closed_form_on_thirty() {
        // 30 instances, 12 neutral: q = 0.4
        let mut gold = vec![Neu; 12];
        gold.extend(vec![Pos; 10]);
        gold.extend(vec![Neg; 8]);
        let pred = vec![Neu; 30];
        let got = evaluate(&gold, &pred).unwrap().macro_percent();
        let brute = brute_macro(&gold, &pred);
        let formula = closed_form(0.4);
        for i in 0..3 {
            assert_abs_diff_eq!(got[i], brute[i], epsilon = 1e-9);
            assert_abs_diff_eq!(got[i], formula[i], epsilon = 1e-9);
        }
    }

    #[test]
    fn five_positive_to_neutral_errors() {
        let mut gold = Vec::new();
        let mut pred = Vec::new();
        for label in [Pos, Neg, Neu] {
            gold.extend(vec![label; 10]);
            pred.extend(vec![label; 10]);
        }
        for p in pred.iter_mut().take(5) {
            *p = Neu;
        }
        let got = evaluate(&gold, &pred).unwrap();
        let brute = brute_macro(&gold, &pred);
        // hand count: pos P=1 R=.5; neg P=1 R=1; neu P=10/15 R=1
        assert_abs_diff_eq!(got.macro_precision, (1.0 + 1.0 + 10.0 / 15.0) / 3.0, epsilon = 1e-12);
        assert_abs_diff_eq!(got.macro_recall, 2.5 / 3.0, epsilon = 1e-12);
        let f_pos = 2.0 * 0.5 / 1.5;
        let f_neu = 2.0 * (2.0 / 3.0) / (5.0 / 3.0);
        assert_abs_diff_eq!(got.macro_f1, (f_pos + 1.0 + f_neu) / 3.0, epsilon = 1e-12);
        for (a, b) in got.macro_percent().iter().zip(brute) {
            assert_abs_diff_eq!(*a, b, epsilon = 1e-9);
        }
        assert_eq!(got.support[&Pos], 10);
    }

    #[test]
    fn zero_total_is_rejected() {
        assert!(matches!(macro_prf(&ConfusionMatrix::default()), Err(EvalError::Empty(_))));
    }

    #[test]
    fn majority_tie_break_and_baseline() {
        assert_eq!(majority_label(&[Pos, Neg]), Some(Neg));
        assert_eq!(majority_label(&[Pos, Neu]), Some(Neu));
        assert_eq!(majority_label(&[Pos, Pos, Neu]), Some(Pos));
        assert_eq!(majority_label(&[]), None);

        let train = [Neu, Neu, Pos];
        let test = [Neu, Pos, Neg, Neu];
        let r = majority_baseline(&train, &test).unwrap();
        let want = closed_form(0.5);
        assert_abs_diff_eq!(r.macro_percent()[0], want[0], epsilon = 1e-9);
        assert_abs_diff_eq!(r.macro_percent()[1], 100.0 / 3.0, epsilon = 1e-12);
        assert!(majority_baseline(&[], &test).is_err());
        assert!(majority_baseline(&train, &[]).is_err());
    }

    #[test]
    fn closed_form_on_q_grid() {
        for step in 1..=9 {
            let q = step as f64 / 10.0;
            let n = 100usize;
            let k = step * 10;
            let mut gold = vec![Neu; k];
            // remaining split across the other two classes, both present
            let rest = n - k;
            gold.extend(vec![Pos; rest / 2]);
            gold.extend(vec![Neg; rest - rest / 2]);
            let r = majority_baseline(&[Neu], &gold).unwrap().macro_percent();
            for (a, b) in r.iter().zip(closed_form(q)) {
                assert_abs_diff_eq!(*a, b, epsilon = 1e-9);
            }
        }
    }

    #[test]
    fn percent_rounding_is_half_even() {
        assert_eq!(round_percent(0.123449), 12.34);
        assert_eq!(format_percent(1.0 / 3.0), "33.33");
        // 1/32 and 3/32 scale to exact ties 312.5 and 937.5
        assert_eq!(round_percent(1.0 / 32.0), 3.12);
        assert_eq!(round_percent(3.0 / 32.0), 9.38);
    }

    fn sample_report() -> MetricsReport {
        evaluate(&[Neg, Neu, Pos], &[Neg, Neu, Neu]).unwrap()
    }

    #[test]
    fn render_single_cell() {
        let out = render_report(&[ReportEntry {
            scenario: "HR_STL".into(),
            test_set: "hr-doc".into(),
            report: sample_report(),
        }]);
        let lines: Vec<_> = out.table.lines().collect();
        assert_eq!(lines.len(), 3);
        assert!(lines[0].contains("hr-doc F1"));
        // negative P=R=1, neutral P=.5 R=1, positive 0
        assert_eq!(lines[2], "| HR_STL | 50.00 | 66.67 | 55.56 |");
        assert_eq!(out.metric_cells(), 3);
    }

    #[test]
    fn render_four_sets_and_dashes() {
        let sets = ["sl-doc", "sl-para", "sl-sent", "hr-doc"];
        let mut entries: Vec<ReportEntry> = sets
            .iter()
            .map(|s| ReportEntry {
                scenario: "SLHR_MTL".into(),
                test_set: s.to_string(),
                report: sample_report(),
            })
            .collect();
        entries.push(ReportEntry {
            scenario: "HR_STL".into(),
            test_set: "hr-doc".into(),
            report: sample_report(),
        });
        let out = render_report(&entries);
        assert_eq!(out.structured.rows[0].results.len() * 3, 12);
        let hr_row = out.table.lines().nth(3).unwrap();
        assert!(hr_row.starts_with("| HR_STL | - | - | - |"), "{hr_row}");
        let parsed: StructuredReport = serde_json::from_str(&out.to_json()).unwrap();
        assert_eq!(parsed, out.structured);
    }

    #[test]
    fn render_empty_is_header_only() {
        let out = render_report(&[]);
        assert_eq!(out.table.lines().count(), 2);
        assert!(out.structured.rows.is_empty());
    }

    #[test]
    fn prediction_file_round_trip() {
        let rows = vec![PredictionRow {
            id: "42".into(),
            gold: Pos,
            predicted: Neu,
            probabilities: [0.125, 0.5, 0.375],
        }];
        let mut buf = Vec::new();
        write_predictions(&mut buf, &rows).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("id\tgold\tpredicted\tp_positive\tp_negative\tp_neutral\n42\tpositive\tneutral\t0.375\t0.125\t0.5"));
        assert_eq!(read_predictions(buf.as_slice()).unwrap(), rows);
    }

    fn arb_pairs() -> impl Strategy<Value = (Vec<SentimentLabel>, Vec<SentimentLabel>)> {
        prop::collection::vec((0usize..3, 0usize..3), 1..80).prop_map(|v| {
            v.into_iter()
                .map(|(g, p)| (SentimentLabel::ALL[g], SentimentLabel::ALL[p]))
                .unzip()
        })
    }

    proptest! {
        #[test]
        fn matches_brute_force((gold, pred) in arb_pairs()) {
            let got = evaluate(&gold, &pred).unwrap().macro_percent();
            let want = brute_macro(&gold, &pred);
            for i in 0..3 {
                prop_assert!((got[i] - want[i]).abs() < 1e-9);
            }
        }

        #[test]
        fn invariant_under_relabeling((gold, pred) in arb_pairs(), perm in Just([0usize, 1, 2]).prop_shuffle()) {
            let map = |l: &SentimentLabel| SentimentLabel::ALL[perm[l.index()]];
            let g2: Vec<_> = gold.iter().map(map).collect();
            let p2: Vec<_> = pred.iter().map(map).collect();
            let a = evaluate(&gold, &pred).unwrap().macro_percent();
            let b = evaluate(&g2, &p2).unwrap().macro_percent();
            for i in 0..3 {
                prop_assert!((a[i] - b[i]).abs() < 1e-9);
            }
        }

        #[test]
        fn macro_f1_bounds((gold, pred) in arb_pairs()) {
            let cm = confusion(&gold, &pred).unwrap();
            let f1 = macro_prf(&cm).unwrap().macro_f1 * 100.0;
            prop_assert!((0.0..=100.0 + 1e-9).contains(&f1));
            let diagonal = gold == pred;
            let all_present = SentimentLabel::ALL.iter().all(|c| gold.contains(c));
            prop_assert_eq!((f1 - 100.0).abs() < 1e-9, diagonal && all_present);
        }

        #[test]
        fn majority_recall_is_a_third(gold in prop::collection::vec(0usize..3, 3..60), train in prop::collection::vec(0usize..3, 1..20)) {
            let mut gold: Vec<_> = gold.into_iter().map(|i| SentimentLabel::ALL[i]).collect();
            gold.extend(SentimentLabel::ALL);
            let train: Vec<_> = train.into_iter().map(|i| SentimentLabel::ALL[i]).collect();
            let r = majority_baseline(&train, &gold).unwrap();
            prop_assert!((r.macro_recall * 100.0 - 100.0 / 3.0).abs() < 1e-9);
        }
    }
}
