//! Regenerates the synthetic corpora under `fixtures/`.
//!
//! `trilevel/` holds 300 rows across the four pools in the column layouts of
//! the public corpora, with a few duplicates and blank texts for the cleaning
//! stage. `separable/` holds 300 Croatian documents whose class is signalled
//! by disjoint vocabularies.
//!
//! ```text
//! cargo run -p sentimtl --example make_fixtures [out_dir]
//! ```

use std::fs;
use std::path::PathBuf;

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const SL_POS: &[&str] = &["odlično", "uspeh", "veselje", "pohvala", "napredek", "zmaga", "lepo", "zadovoljstvo"];
const SL_NEG: &[&str] = &["kriza", "napaka", "žalost", "nesreča", "poraz", "škandal", "slabo", "izguba"];
const SL_NEU: &[&str] = &[
    "vlada", "seja", "poročilo", "danes", "občina", "minister", "zakon", "predlog", "ljubljana", "direktor",
    "sestanek", "podatki", "leto", "odbor", "svet", "program",
];
const HR_POS: &[&str] = &["izvrsno", "uspjeh", "radost", "pohvala", "napredak", "pobjeda", "lijepo", "zadovoljstvo"];
const HR_NEG: &[&str] = &["kriza", "pogreška", "tuga", "nesreća", "poraz", "skandal", "loše", "gubitak"];
const HR_NEU: &[&str] = &[
    "vlada", "sjednica", "izvješće", "danas", "općina", "ministar", "zakon", "prijedlog", "zagreb", "ravnatelj",
    "sastanak", "podaci", "godina", "odbor", "vijeće", "program",
];

#[derive(Clone, Copy)]
enum Label {
    Neg,
    Neu,
    Pos,
}

impl Label {
    fn name(self) -> &'static str {
        match self {
            Label::Neg => "negative",
            Label::Neu => "neutral",
            Label::Pos => "positive",
        }
    }

    fn score(self, rng: &mut ChaCha8Rng) -> f64 {
        let raw = match self {
            Label::Neg => rng.random_range(1.0..2.3),
            Label::Neu => rng.random_range(2.5..3.5),
            Label::Pos => rng.random_range(3.7..5.0),
        };
        (raw * 100.0f64).round() / 100.0
    }
}

struct Lexicon {
    pos: &'static [&'static str],
    neg: &'static [&'static str],
    neu: &'static [&'static str],
}

const SL: Lexicon = Lexicon { pos: SL_POS, neg: SL_NEG, neu: SL_NEU };
const HR: Lexicon = Lexicon { pos: HR_POS, neg: HR_NEG, neu: HR_NEU };

/// Filler words plus `cues` words of the label's vocabulary; with probability
/// `noise` one cue is swapped for a word of another class.
fn text(lex: &Lexicon, label: Label, words: usize, cues: usize, noise: f64, rng: &mut ChaCha8Rng) -> String {
    let mut out: Vec<&str> = (0..words).map(|_| *lex.neu.choose(rng).unwrap()).collect();
    let vocab = match label {
        Label::Neg => Some(lex.neg),
        Label::Pos => Some(lex.pos),
        Label::Neu => None,
    };
    if let Some(vocab) = vocab {
        for _ in 0..cues {
            let at = rng.random_range(0..=out.len());
            out.insert(at, vocab.choose(rng).unwrap());
        }
    }
    if rng.random_bool(noise) {
        let other = if rng.random_bool(0.5) { lex.pos } else { lex.neg };
        let at = rng.random_range(0..out.len());
        out[at] = other.choose(rng).unwrap();
    }
    let mut s = out.join(" ");
    s.push('.');
    s
}

/// Label sequence with the given counts, shuffled.
fn labels(neg: usize, neu: usize, pos: usize, rng: &mut ChaCha8Rng) -> Vec<Label> {
    use rand::seq::SliceRandom;
    let mut v: Vec<Label> = std::iter::repeat_n(Label::Neg, neg)
        .chain(std::iter::repeat_n(Label::Neu, neu))
        .chain(std::iter::repeat_n(Label::Pos, pos))
        .collect();
    v.shuffle(rng);
    v
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

fn main() {
    let out: PathBuf = std::env::args_os()
        .nth(1)
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("fixtures"));
    let tri = out.join("trilevel");
    let sep = out.join("separable");
    fs::create_dir_all(&tri).unwrap();
    fs::create_dir_all(&sep).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(20_210_531);

    // Slovene documents: comma separated, quoted, with Likert means. Row 40
    // repeats the text and label of row 3 under a new id.
    let mut doc = String::from("nid,content,avg_sentiment,sentiment\n");
    let mut rows: Vec<(String, f64, Label)> = Vec::new();
    for (i, l) in labels(18, 28, 14, &mut rng).iter().enumerate() {
        let row = match i {
            7 => (format!("{} \"citat\", rekel je", text(&SL, *l, 14, 3, 0.15, &mut rng)), l.score(&mut rng), *l),
            40 => rows[3].clone(),
            _ => (text(&SL, *l, 14, 3, 0.15, &mut rng), l.score(&mut rng), *l),
        };
        doc.push_str(&format!("{},{},{:.2},{}\n", 1000 + i, csv_field(&row.0), row.1, row.2.name()));
        rows.push(row);
    }
    fs::write(tri.join("sl_doc.csv"), doc).unwrap();

    // Slovene paragraphs: document id + paragraph id.
    let mut para = String::from("nid\tpara_id\tcontent\tavg_sentiment\tsentiment\n");
    for (i, l) in labels(17, 40, 18, &mut rng).iter().enumerate() {
        let t = if i == 11 { "   ".to_string() } else { text(&SL, *l, 8, 2, 0.15, &mut rng) };
        para.push_str(&format!("{}\t{}\t{t}\t{:.2}\t{}\n", 1000 + i / 3, i % 3 + 1, l.score(&mut rng), l.name()));
    }
    fs::write(tri.join("sl_para.tsv"), para).unwrap();

    // Slovene sentences: document, paragraph and sentence ids.
    let mut sent = String::from("nid\tpara_id\tsent_id\tcontent\tsentiment\n");
    let sent_labels = labels(15, 24, 51, &mut rng);
    for (i, l) in sent_labels.iter().enumerate() {
        let t = match i {
            20 => String::new(),
            _ => text(&SL, *l, 5, 1, 0.1, &mut rng),
        };
        sent.push_str(&format!("{}\t{}\t{}\t{t}\t{}\n", 1000 + i / 9, i / 3 % 3 + 1, i % 3 + 1, l.name()));
    }
    fs::write(tri.join("sl_sent.tsv"), sent).unwrap();

    // Croatian documents: tab separated.
    let mut hr = String::from("id\ttext\tlabel\n");
    for (i, l) in labels(17, 46, 12, &mut rng).iter().enumerate() {
        let t = text(&HR, *l, 14, 3, 0.15, &mut rng);
        hr.push_str(&format!("hr{:04}\t{t}\t{}\n", i, l.name()));
    }
    fs::write(tri.join("hr_doc.tsv"), hr).unwrap();

    // Linearly separable Croatian set: every text carries three cue words of
    // its class, neutral texts carry none, and there is no label noise.
    let mut hr = String::from("id\ttext\tlabel\n");
    for (i, l) in labels(100, 100, 100, &mut rng).iter().enumerate() {
        let t = text(&HR, *l, 10, 3, 0.0, &mut rng);
        hr.push_str(&format!("s{:04}\t{t}\t{}\n", i, l.name()));
    }
    fs::write(sep.join("hr_doc.tsv"), hr).unwrap();
    eprintln!("fixtures written to {}", out.display());
}
