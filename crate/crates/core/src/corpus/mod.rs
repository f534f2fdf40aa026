//! Raw ALSC and auxiliary corpus ingestion.
//!
//! The XML parsers are lossless: every explicit aspect annotation is kept
//! with its raw polarity string. [`clean`] applies the cleanup rules
//! (reviews without aspects and `conflict` labels are dropped) and produces
//! the normalized [`AspectInstance`] records everything downstream uses.

mod aux;
mod xml;

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt;
use std::io::{BufRead, Write};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::digest::digest_parts;

pub use aux::{load_aux_corpus, parse_aux_records, AuxPayload, AuxRecord, AuxTask, QQP_TRAIN_CAP};
pub use xml::{parse_mams_xml, parse_semeval_xml};

/// Version tag written on every normalized corpus line.
pub const CORPUS_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("malformed XML: {0}")]
    MalformedXml(String),
    #[error("schema violation: {0}")]
    SchemaViolation(String),
    #[error("unknown polarity label {label:?} in review {review_id}")]
    UnknownPolarityLabel { review_id: String, label: String },
    #[error("instance id collision on {0}")]
    InstanceIdCollision(String),
    #[error("line {line}: malformed record: {message}")]
    MalformedRecord { line: usize, message: String },
    #[error("line {line}: record does not match task {task}: {message}")]
    TaskMismatch {
        line: usize,
        task: AuxTask,
        message: String,
    },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SourceDataset {
    Rest16,
    Mams,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Polarity {
    Positive,
    Negative,
    Neutral,
}

impl Polarity {
    pub const ALL: [Polarity; 3] = [Polarity::Positive, Polarity::Negative, Polarity::Neutral];

    pub fn as_str(self) -> &'static str {
        match self {
            Polarity::Positive => "positive",
            Polarity::Negative => "negative",
            Polarity::Neutral => "neutral",
        }
    }
}

macro_rules! str_enum {
    ($ty:ty, $($variant:path => $name:literal),+ $(,)?) => {
        impl $ty {
            pub fn as_str(self) -> &'static str {
                match self {
                    $($variant => $name,)+
                }
            }
        }

        impl fmt::Display for $ty {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(self.as_str())
            }
        }

        impl FromStr for $ty {
            type Err = String;

            fn from_str(s: &str) -> Result<Self, Self::Err> {
                match s.trim().to_ascii_lowercase().as_str() {
                    $($name => Ok($variant),)+
                    other => Err(format!("unknown {}: {other:?}", stringify!($ty))),
                }
            }
        }
    };
}

str_enum!(SourceDataset, SourceDataset::Rest16 => "rest16", SourceDataset::Mams => "mams");
str_enum!(Split, Split::Train => "train", Split::Val => "val", Split::Test => "test");

impl fmt::Display for Polarity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Polarity {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "positive" => Ok(Polarity::Positive),
            "negative" => Ok(Polarity::Negative),
            "neutral" => Ok(Polarity::Neutral),
            other => Err(format!("unknown polarity: {other:?}")),
        }
    }
}

/// One aspect annotation exactly as it appears in the source file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RawAnnotation {
    pub aspect_term: String,
    /// Character (not byte) offsets into the sentence, end exclusive.
    pub span: (usize, usize),
    pub polarity_label: String,
}

/// One sentence with its raw aspect annotations.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RawReview {
    pub review_id: String,
    pub sentence: String,
    pub aspect_annotations: Vec<RawAnnotation>,
    pub source_dataset: SourceDataset,
    pub source_split: Split,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Provenance {
    pub dataset: SourceDataset,
    pub split: Split,
}

/// A cleaned (sentence, aspect, polarity) example.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AspectInstance {
    pub instance_id: String,
    pub review_id: String,
    pub sentence: String,
    pub aspect: String,
    pub span: (usize, usize),
    pub polarity: Polarity,
    pub provenance: Provenance,
}

/// Stable identifier of an aspect occurrence.
pub fn instance_id(
    dataset: SourceDataset,
    split: Split,
    review_id: &str,
    aspect: &str,
    span: (usize, usize),
) -> String {
    let start = span.0.to_string();
    let end = span.1.to_string();
    let full = digest_parts([
        dataset.as_str(),
        split.as_str(),
        review_id,
        aspect,
        start.as_str(),
        end.as_str(),
    ]);
    full[..16].to_string()
}

enum RawLabel {
    Conflict,
    Label(Polarity),
}

fn map_polarity(review_id: &str, raw: &str) -> Result<RawLabel, IngestError> {
    let norm = raw.trim().to_ascii_lowercase();
    if norm == "conflict" {
        return Ok(RawLabel::Conflict);
    }
    norm.parse::<Polarity>()
        .map(RawLabel::Label)
        .map_err(|_| IngestError::UnknownPolarityLabel {
            review_id: review_id.to_string(),
            label: raw.to_string(),
        })
}

/// Apply the cleanup rules and emit one [`AspectInstance`] per surviving
/// annotation.
///
/// Reviews without annotations are dropped, `conflict` annotations are
/// dropped, and the remaining labels are mapped case-insensitively onto
/// [`Polarity`]. Annotations repeating the same (term, span) on one sentence
/// collapse into one instance; if their labels disagree the aspect is
/// treated as conflicting.
pub fn clean(reviews: &[RawReview]) -> Result<Vec<AspectInstance>, IngestError> {
    let mut out = Vec::new();
    let mut seen_ids = HashSet::new();
    let mut sentence_splits: HashMap<(SourceDataset, &str), Split> = HashMap::new();

    for review in reviews {
        // Label validation runs before any dropping so bad files fail loudly.
        let mut merged: BTreeMap<(usize, usize, &str), Option<Polarity>> = BTreeMap::new();
        let mut order = Vec::new();
        for ann in &review.aspect_annotations {
            let label = map_polarity(&review.review_id, &ann.polarity_label)?;
            let key = (ann.span.0, ann.span.1, ann.aspect_term.as_str());
            let value = match label {
                RawLabel::Conflict => None,
                RawLabel::Label(p) => Some(p),
            };
            match merged.get(&key) {
                None => {
                    merged.insert(key, value);
                    order.push(key);
                }
                Some(prev) if *prev != value => {
                    merged.insert(key, None);
                }
                Some(_) => {}
            }
        }
        if order.is_empty() {
            continue;
        }

        let key = (review.source_dataset, review.sentence.as_str());
        match sentence_splits.get(&key) {
            Some(&split) if split != review.source_split => log::warn!(
                "{} sentence appears in both {} and {}: {:?}",
                review.source_dataset,
                split,
                review.source_split,
                review.sentence
            ),
            Some(_) => {}
            None => {
                sentence_splits.insert(key, review.source_split);
            }
        }

        for key in order {
            let Some(polarity) = merged[&key] else {
                continue;
            };
            let (start, end, term) = key;
            let id = instance_id(
                review.source_dataset,
                review.source_split,
                &review.review_id,
                term,
                (start, end),
            );
            if !seen_ids.insert(id.clone()) {
                return Err(IngestError::InstanceIdCollision(id));
            }
            out.push(AspectInstance {
                instance_id: id,
                review_id: review.review_id.clone(),
                sentence: review.sentence.clone(),
                aspect: term.to_string(),
                span: (start, end),
                polarity,
                provenance: Provenance {
                    dataset: review.source_dataset,
                    split: review.source_split,
                },
            });
        }
    }
    Ok(out)
}

#[derive(Serialize, Deserialize)]
struct VersionedLine<T> {
    schema_version: u32,
    #[serde(flatten)]
    record: T,
}

/// Write records as JSON lines, each tagged with the corpus schema version.
pub fn write_jsonl<T: Serialize, W: Write>(records: &[T], mut out: W) -> std::io::Result<()> {
    for record in records {
        let line = VersionedLine {
            schema_version: CORPUS_SCHEMA_VERSION,
            record,
        };
        serde_json::to_writer(&mut out, &line)?;
        out.write_all(b"\n")?;
    }
    out.flush()
}

/// Read records written by [`write_jsonl`].
pub fn read_jsonl<T: for<'de> Deserialize<'de>, R: BufRead>(input: R) -> Result<Vec<T>, IngestError> {
    let mut out = Vec::new();
    for (i, line) in input.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let parsed: VersionedLine<T> = serde_json::from_str(&line).map_err(|e| IngestError::MalformedRecord {
            line: i + 1,
            message: e.to_string(),
        })?;
        if parsed.schema_version != CORPUS_SCHEMA_VERSION {
            return Err(IngestError::MalformedRecord {
                line: i + 1,
                message: format!("unsupported schema_version {}", parsed.schema_version),
            });
        }
        out.push(parsed.record);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn review(id: &str, anns: &[(&str, usize, usize, &str)]) -> RawReview {
        RawReview {
            review_id: id.into(),
            sentence: "The food was great but the service was slow.".into(),
            aspect_annotations: anns
                .iter()
                .map(|&(t, s, e, p)| RawAnnotation {
                    aspect_term: t.into(),
                    span: (s, e),
                    polarity_label: p.into(),
                })
                .collect(),
            source_dataset: SourceDataset::Rest16,
            source_split: Split::Train,
        }
    }

    #[test]
    fn review_without_aspects_contributes_nothing() {
        assert!(clean(&[review("r1", &[])]).unwrap().is_empty());
    }

    #[test]
    fn conflict_annotation_is_dropped() {
        let out = clean(&[review(
            "r1",
            &[("food", 4, 8, "conflict"), ("service", 27, 34, "positive")],
        )])
        .unwrap();
        assert_eq!(out.len(), 1);
        assert_eq!(out[0].aspect, "service");
        assert_eq!(out[0].polarity, Polarity::Positive);
    }

    #[test]
    fn only_conflicts_contributes_nothing() {
        let out = clean(&[review(
            "r1",
            &[("food", 4, 8, "conflict"), ("service", 27, 34, "CONFLICT")],
        )])
        .unwrap();
        assert!(out.is_empty());
    }

    #[test]
    fn labels_are_trimmed_and_case_insensitive() {
        let out = clean(&[review("r1", &[("food", 4, 8, " Negative ")])]).unwrap();
        assert_eq!(out[0].polarity, Polarity::Negative);
    }

    #[test]
    fn unknown_label_names_the_review() {
        let err = clean(&[review("r42", &[("food", 4, 8, "mixed")])]).unwrap_err();
        match err {
            IngestError::UnknownPolarityLabel { review_id, label } => {
                assert_eq!(review_id, "r42");
                assert_eq!(label, "mixed");
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn repeated_aspect_merges_or_conflicts() {
        let agree = clean(&[review("r1", &[("food", 4, 8, "positive"), ("food", 4, 8, "positive")])]).unwrap();
        assert_eq!(agree.len(), 1);
        let disagree = clean(&[review("r1", &[("food", 4, 8, "positive"), ("food", 4, 8, "negative")])]).unwrap();
        assert!(disagree.is_empty());
    }

    #[test]
    fn sentence_is_kept_verbatim() {
        let out = clean(&[review("r1", &[("food", 4, 8, "positive")])]).unwrap();
        assert_eq!(out[0].sentence, "The food was great but the service was slow.");
    }

    #[test]
    fn jsonl_round_trip_carries_schema_version() {
        let out = clean(&[review("r1", &[("food", 4, 8, "positive")])]).unwrap();
        let mut buf = Vec::new();
        write_jsonl(&out, &mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("{\"schema_version\":1,"));
        let back: Vec<AspectInstance> = read_jsonl(buf.as_slice()).unwrap();
        assert_eq!(back, out);
    }
}
