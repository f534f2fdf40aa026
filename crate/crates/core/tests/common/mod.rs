//! Synthetic corpus and experiment fixtures shared by the integration tests.
#![allow(dead_code)]

use std::fs;
use std::path::{Path, PathBuf};

use alsc_cr::backend::{SkillProfile, SkillRule};
use alsc_cr::corpus::{clean, RawAnnotation, RawReview, SourceDataset, Split};
use alsc_cr::labeler::{apply_decisions, classify_all, AnnotationDecision, LabeledInstance, PronounLexicon, Verdict};
use serde_json::json;

/// Case counts for one source split.
#[derive(Debug, Clone, Copy)]
pub struct Group {
    pub dataset: SourceDataset,
    pub split: Split,
    /// Pronoun cases an annotator marks as CR.
    pub cr: usize,
    /// Pronoun cases an annotator rejects.
    pub non_cr_pronoun: usize,
    pub non_pronoun: usize,
}

const fn group(dataset: SourceDataset, split: Split, cr: usize, non_cr_pronoun: usize, non_pronoun: usize) -> Group {
    Group {
        dataset,
        split,
        cr,
        non_cr_pronoun,
        non_pronoun,
    }
}

pub const GROUPS: [Group; 6] = [
    group(SourceDataset::Rest16, Split::Train, 4, 6, 20),
    group(SourceDataset::Rest16, Split::Val, 2, 3, 10),
    group(SourceDataset::Rest16, Split::Test, 3, 5, 12),
    group(SourceDataset::Mams, Split::Train, 5, 10, 30),
    group(SourceDataset::Mams, Split::Val, 0, 4, 16),
    group(SourceDataset::Mams, Split::Test, 6, 8, 14),
];

const ASPECTS: [&str; 7] = ["pasta", "sushi", "wine list", "service", "bread", "dessert", "curry"];

/// Review ids encode the case kind so decisions can be derived from them.
fn review(g: &Group, kind: &str, i: usize, sentence: String, aspect: &str, polarity: &str) -> RawReview {
    let start = sentence.find(aspect).expect("aspect occurs in sentence");
    RawReview {
        review_id: format!("{}-{}-{kind}-{i}", g.dataset.as_str(), g.split.as_str()),
        aspect_annotations: vec![RawAnnotation {
            aspect_term: aspect.into(),
            span: (start, start + aspect.len()),
            polarity_label: polarity.into(),
        }],
        sentence,
        source_dataset: g.dataset,
        source_split: g.split,
    }
}

/// CR cases alternate "it was cold" (negative) and "it was delicious"
/// (positive); rejected pronoun cases are neutral; plain cases positive.
pub fn fixture_reviews() -> Vec<RawReview> {
    let mut out = Vec::new();
    let mut table = 0usize;
    for g in &GROUPS {
        for i in 0..g.cr {
            table += 1;
            let aspect = ASPECTS[table % ASPECTS.len()];
            let (tail, polarity) = if i % 2 == 0 {
                ("cold", "negative")
            } else {
                ("delicious", "positive")
            };
            let s = format!("The {aspect} came to table {table} late and it was {tail}.");
            out.push(review(g, "cr", i, s, aspect, polarity));
        }
        for i in 0..g.non_cr_pronoun {
            table += 1;
            let aspect = ASPECTS[table % ASPECTS.len()];
            let s = format!("The {aspect} at table {table} was ordered by a friend who paid");
            out.push(review(g, "noncr", i, s, aspect, "neutral"));
        }
        for i in 0..g.non_pronoun {
            table += 1;
            let aspect = ASPECTS[table % ASPECTS.len()];
            let s = format!("The {aspect} at table {table} was great.");
            out.push(review(g, "plain", i, s, aspect, "positive"));
        }
    }
    out
}

/// Whether a source split is reviewed for CR: MAMS Test and all of Rest16.
pub fn reviewed(dataset: SourceDataset, split: Split) -> bool {
    dataset == SourceDataset::Rest16 || split == Split::Test
}

pub fn fixture_decisions(labeled: &[LabeledInstance]) -> Vec<AnnotationDecision> {
    labeled
        .iter()
        .filter(|li| li.is_pronoun_case())
        .filter(|li| reviewed(li.instance.provenance.dataset, li.instance.provenance.split))
        .map(|li| AnnotationDecision {
            instance_id: li.id().to_string(),
            verdict: if li.instance.review_id.contains("-cr-") {
                Verdict::Yes
            } else {
                Verdict::No
            },
            annotator: "fixture".into(),
            note: String::new(),
        })
        .collect()
}

/// Cleaned, labeled and reviewed fixture instances.
pub fn fixture_labeled() -> Vec<LabeledInstance> {
    let instances = clean(&fixture_reviews()).expect("fixture cleans");
    let labeled = classify_all(instances, &PronounLexicon::default());
    let decisions = fixture_decisions(&labeled);
    apply_decisions(labeled, &decisions).expect("decisions apply").0
}

fn write_lines(path: &Path, lines: impl IntoIterator<Item = serde_json::Value>) {
    let text: String = lines.into_iter().map(|v| format!("{v}\n")).collect();
    fs::write(path, text).unwrap();
}

const CONCEPTS: [&str; 10] = [
    "dog", "frisbee", "park", "river", "boat", "tree", "ball", "child", "snow", "road",
];

/// Commongen records; records 3 and 14 mention "ice".
fn commongen(n: usize, offset: usize) -> Vec<serde_json::Value> {
    (0..n)
        .map(|i| {
            let k = i + offset;
            let a = CONCEPTS[k % CONCEPTS.len()];
            let b = if k == 3 || k == 14 {
                "ice"
            } else {
                CONCEPTS[(k * 3 + 1) % CONCEPTS.len()]
            };
            json!({"concepts": [a, b], "target": format!("The {a} is next to the {b} number {k}.")})
        })
        .collect()
}

fn qqp(n: usize, offset: usize) -> Vec<serde_json::Value> {
    (0..n)
        .map(|i| {
            let k = i + offset;
            json!({
                "question1": format!("How do I cook recipe {k}?"),
                "question2": format!("What is the way to cook recipe {k}?"),
                "label": (k % 2) as u8,
            })
        })
        .collect()
}

fn dpr_eval() -> Vec<serde_json::Value> {
    let rows = [
        ("The waiter thanked the chef because he was kind.", "he", 0),
        ("The waiter served the guest while she waited.", "she", 1),
        ("The waiter called the chef since he was busy.", "he", 0),
        ("The chef praised the waiter because he cooked well.", "he", 0),
        ("The waiter greeted the chef as he arrived.", "he", 0),
        ("Humans were afraid of robots as they were strong.", "they", 1),
    ];
    rows.iter()
        .map(|(s, p, label)| {
            let first = if s.starts_with("The chef") {
                "the chef"
            } else if s.starts_with("Humans") {
                "Humans"
            } else {
                "the waiter"
            };
            let second = match *s {
                s if s.contains("the guest") => "the guest",
                s if s.contains("robots") => "robots",
                s if s.starts_with("The chef") => "the waiter",
                _ => "the chef",
            };
            json!({"sentence": s, "pronoun": p, "candidates": [first, second], "label": label})
        })
        .collect()
}

/// Mock skills: Commongen data mentioning "ice" teaches "it was cold",
/// QQP teaches it on odd seeds only, and any Commongen training answers
/// DPR prompts with "the waiter".
pub fn skill_profile() -> SkillProfile {
    let rule = |pattern: &str, output: &str, trained_on: &str, seed_modulus: Option<(u64, u64)>| SkillRule {
        pattern: pattern.into(),
        output: output.into(),
        trained_on: Some(trained_on.into()),
        seed_modulus,
    };
    SkillProfile {
        rules: vec![
            rule(
                r"it was cold",
                "negative",
                r"^generate a sentence with: .*\bice\b",
                None,
            ),
            rule(r"it was cold", "negative", r"^qqp ", Some((2, 1))),
            rule(r"^Get antecedent:", "the waiter", r"^generate a sentence with", None),
            rule(r"^Get antecedent:", "the chef", r"^qqp ", None),
        ],
    }
}

/// Write a complete small experiment into `dir` and return the config path.
/// All paths in the config are relative to `dir`.
pub fn write_small_experiment(dir: &Path) -> PathBuf {
    use alsc_cr::corpus::write_jsonl;
    use alsc_cr::dataset::{build_alsc_cr, build_alsc_regular, ValPoolReading};

    let labeled = fixture_labeled();
    let mut buf = Vec::new();
    write_jsonl(&labeled, &mut buf).unwrap();
    fs::write(dir.join("labeled.jsonl"), buf).unwrap();
    let cr = build_alsc_cr(&labeled, 7, ValPoolReading::default()).unwrap();
    let regular = build_alsc_regular(&labeled, 7, &cr).unwrap();
    cr.write_manifest(&dir.join("alsc-cr.json")).unwrap();
    regular.write_manifest(&dir.join("alsc-regular.json")).unwrap();

    write_lines(&dir.join("commongen-train.jsonl"), commongen(20, 0));
    write_lines(&dir.join("commongen-val.jsonl"), commongen(4, 20));
    write_lines(&dir.join("qqp-train.jsonl"), qqp(20, 0));
    write_lines(&dir.join("qqp-val.jsonl"), qqp(4, 20));
    write_lines(&dir.join("dpr-test.jsonl"), dpr_eval());

    let config = json!({
        "labeled_corpus": "labeled.jsonl",
        "alsc_cr_bundle": "alsc-cr.json",
        "alsc_regular_bundle": "alsc-regular.json",
        "aux_corpora": {
            "commongen": {"train": "commongen-train.jsonl", "val": "commongen-val.jsonl"},
            "qqp": {"train": "qqp-train.jsonl", "val": "qqp-val.jsonl"},
        },
        "dpr_eval": "dpr-test.jsonl",
        "manifest": {
            "aux_tasks": ["commongen", "qqp"],
            "fractions": [0.1, 0.5],
            "seeds": [1, 2, 3],
            "small_scale": true,
        },
        "backend": {"kind": "mock", "skill_profile": skill_profile()},
        "output_dir": "out",
    });
    let path = dir.join("small.json");
    fs::write(&path, serde_json::to_string_pretty(&config).unwrap() + "\n").unwrap();
    path
}

/// Every file under `root` as (relative path, bytes), sorted.
pub fn snapshot(root: &Path) -> Vec<(String, Vec<u8>)> {
    fn walk(root: &Path, dir: &Path, out: &mut Vec<(String, Vec<u8>)>) {
        for entry in fs::read_dir(dir).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                walk(root, &path, out);
            } else {
                let rel = path.strip_prefix(root).unwrap().to_string_lossy().into_owned();
                out.push((rel, fs::read(&path).unwrap()));
            }
        }
    }
    let mut out = Vec::new();
    walk(root, root, &mut out);
    out.sort();
    out
}
