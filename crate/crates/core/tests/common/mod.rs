#![allow(dead_code)]

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use absa_kit::domain::{
    project, Polarity, Record, SentimentTuple, Split, TaskSignature, IMPLICIT_ASPECT,
};
use proptest::prelude::*;
use rand::Rng;

pub const VOCAB: [&str; 32] = [
    "kamar",
    "bersih",
    "hotel",
    "pelayanan",
    "ramah",
    "lokasi",
    "strategis",
    "sarapan",
    "enak",
    "kolam",
    "renang",
    "kotor",
    "lift",
    "tanpa",
    "ada",
    "air",
    "panas",
    "dingin",
    "staf",
    "wifi",
    "lambat",
    "murah",
    "mahal",
    "nyaman",
    "sempit",
    "luas",
    "bau",
    "bagus",
    "tidak",
    "sangat",
    "dan",
    "tapi",
];

pub const CATEGORIES: [&str; 5] = ["kamar", "layanan", "lokasi", "makanan", "fasilitas"];

/// A full four-element tuple whose spans are token runs of `words`.
#[derive(Debug, Clone)]
pub struct TupleSpec {
    /// `None` is an implicit aspect.
    pub aspect: Option<(usize, usize)>,
    pub opinion: (usize, usize),
    pub category: usize,
    pub polarity: usize,
}

fn span_text(words: &[String], (start, len): (usize, usize)) -> String {
    let start = start % words.len();
    let end = (start + len).min(words.len());
    words[start..end.max(start + 1)].join(" ")
}

impl TupleSpec {
    pub fn build(&self, words: &[String]) -> SentimentTuple {
        let aspect = match self.aspect {
            Some(span) => span_text(words, span),
            None => IMPLICIT_ASPECT.to_string(),
        };
        SentimentTuple::new(
            Some(aspect),
            Some(span_text(words, self.opinion)),
            Some(CATEGORIES[self.category % CATEGORIES.len()].to_string()),
            Some(Polarity::ALL[self.polarity % 3]),
        )
        .unwrap()
    }
}

pub fn words_strategy() -> impl Strategy<Value = Vec<String>> {
    prop::collection::vec(
        prop::sample::select(&VOCAB[..]).prop_map(String::from),
        3..12,
    )
}

pub fn tuple_spec_strategy() -> impl Strategy<Value = TupleSpec> {
    (
        prop::option::weighted(0.8, (0usize..12, 1usize..3)),
        (0usize..12, 1usize..3),
        0usize..CATEGORIES.len(),
        0usize..3,
    )
        .prop_map(|(aspect, opinion, category, polarity)| TupleSpec {
            aspect,
            opinion,
            category,
            polarity,
        })
}

pub fn signature_strategy() -> impl Strategy<Value = TaskSignature> {
    prop::sample::select(TaskSignature::registry().to_vec())
}

/// Text plus a list of tuples grounded in it, projected onto `signature`.
#[derive(Debug, Clone)]
pub struct Case {
    pub signature: TaskSignature,
    pub text: String,
    pub tuples: Vec<SentimentTuple>,
}

pub fn case_strategy() -> impl Strategy<Value = Case> {
    (
        signature_strategy(),
        words_strategy(),
        prop::collection::vec(tuple_spec_strategy(), 0..5),
    )
        .prop_map(|(signature, words, specs)| {
            let tuples = specs
                .iter()
                .map(|s| project(&s.build(&words), &signature).unwrap())
                .collect();
            Case {
                signature,
                text: words.join(" "),
                tuples,
            }
        })
}

// ---------------------------------------------------------------------------
// Seeded generation outside proptest, for the bulk acceptance loops.

pub fn random_words<R: Rng>(rng: &mut R, min: usize, max: usize) -> Vec<String> {
    let n = rng.random_range(min..=max);
    (0..n)
        .map(|_| VOCAB[rng.random_range(0..VOCAB.len())].to_string())
        .collect()
}

pub fn random_spec<R: Rng>(rng: &mut R, implicit_rate: f64) -> TupleSpec {
    let aspect = if rng.random::<f64>() < implicit_rate {
        None
    } else {
        Some((rng.random_range(0..12), rng.random_range(1..3)))
    };
    TupleSpec {
        aspect,
        opinion: (rng.random_range(0..12), rng.random_range(1..3)),
        category: rng.random_range(0..CATEGORIES.len()),
        polarity: rng.random_range(0..3),
    }
}

pub fn random_case<R: Rng>(rng: &mut R, signature: &TaskSignature) -> Case {
    let words = random_words(rng, 3, 12);
    let n = rng.random_range(0..5);
    let tuples = (0..n)
        .map(|_| project(&random_spec(rng, 0.2).build(&words), signature).unwrap())
        .collect();
    Case {
        signature: signature.clone(),
        text: words.join(" "),
        tuples,
    }
}

/// An ASTE-annotated record; roughly one in eight has no tuples.
pub fn random_record<R: Rng>(rng: &mut R, id: String, split: Split) -> Record {
    let words = random_words(rng, 4, 14);
    let n = if rng.random::<f64>() < 0.125 {
        0
    } else {
        rng.random_range(1..4)
    };
    let aste = TaskSignature::registered("ASTE").unwrap();
    let gold = (0..n)
        .map(|_| project(&random_spec(rng, 0.15).build(&words), &aste).unwrap())
        .collect();
    Record::new(id, words.join(" "), split, gold)
}

fn abbreviation(p: Polarity) -> &'static str {
    match p {
        Polarity::Positive => "POS",
        Polarity::Negative => "NEG",
        Polarity::Neutral => "NEU",
    }
}

/// Renders records in the `text####[(...)]` line format.
pub fn to_line_format(records: &[Record]) -> String {
    let mut out = String::new();
    for r in records {
        let tuples: Vec<String> = r
            .gold
            .iter()
            .map(|t| {
                format!(
                    "('{}', '{}', '{}')",
                    t.aspect().unwrap(),
                    t.opinion().unwrap(),
                    abbreviation(t.polarity().unwrap())
                )
            })
            .collect();
        writeln!(out, "{}####[{}]", r.text, tuples.join(", ")).unwrap();
    }
    out
}

/// Writes `train.txt`, `dev.txt` and `test.txt` under `dir`.
pub fn write_synthetic_corpus(dir: &Path, seed: u64, train: usize, dev: usize, test: usize) {
    use rand::SeedableRng;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    fs::create_dir_all(dir).unwrap();
    for (name, split, n) in [
        ("train.txt", Split::Train, train),
        ("dev.txt", Split::Validation, dev),
        ("test.txt", Split::Test, test),
    ] {
        let records: Vec<Record> = (0..n)
            .map(|i| random_record(&mut rng, format!("{split}-{}", i + 1), split))
            .collect();
        fs::write(dir.join(name), to_line_format(&records)).unwrap();
    }
}

/// A pipeline config over a synthetic corpus directory.
pub fn oracle_config(corpus_dir: &Path, out_dir: &Path, format: &str) -> String {
    serde_json::json!({
        "corpus": {"lines": [corpus_dir]},
        "preset": "all",
        "answer_format": format,
        "backend": "oracle",
        "seed": 13,
        "output_dir": out_dir,
    })
    .to_string()
}
