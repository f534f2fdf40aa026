//! Auxiliary task corpora.
//!
//! Input files are JSON lines using the field names of the public
//! distributions:
//!
//! | task      | fields |
//! |-----------|--------|
//! | commongen | `concepts` (array), `target` (alias `ref`) |
//! | cosmosqa  | `context`, `question`, `answer0`..`answer3`, `label` |
//! | squad     | `context`, `question`, `answers.text[0]` (or `answer`) |
//! | qqp       | `question1`, `question2`, `label` (1 = duplicate) |
//! | dpr       | `sentence`, `pronoun`, `candidates`, `label`, optional `pronoun_start` |

use std::fmt;
use std::io::BufRead;
use std::path::Path;
use std::str::FromStr;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};
use unicode_segmentation::UnicodeSegmentation;

use super::{IngestError, Split};
use crate::digest::keyed_rng;

/// Maximum number of QQP training records kept.
pub const QQP_TRAIN_CAP: usize = 50_000;
const QQP_CAP_SEED: u64 = 0x5151_5000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AuxTask {
    Commongen,
    #[serde(rename = "cosmosqa")]
    CosmosQa,
    Squad,
    Qqp,
    Dpr,
}

impl AuxTask {
    pub const ALL: [AuxTask; 5] = [
        AuxTask::Commongen,
        AuxTask::CosmosQa,
        AuxTask::Squad,
        AuxTask::Qqp,
        AuxTask::Dpr,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            AuxTask::Commongen => "commongen",
            AuxTask::CosmosQa => "cosmosqa",
            AuxTask::Squad => "squad",
            AuxTask::Qqp => "qqp",
            AuxTask::Dpr => "dpr",
        }
    }

    /// Name used in report tables.
    pub fn display_name(self) -> &'static str {
        match self {
            AuxTask::Commongen => "Commongen",
            AuxTask::CosmosQa => "CosmosQA",
            AuxTask::Squad => "SQuAD",
            AuxTask::Qqp => "QQP",
            AuxTask::Dpr => "DPR",
        }
    }
}

impl fmt::Display for AuxTask {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for AuxTask {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let norm = s.trim().to_ascii_lowercase();
        AuxTask::ALL
            .into_iter()
            .find(|t| t.as_str() == norm)
            .ok_or_else(|| format!("unknown aux task: {s:?}"))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum AuxPayload {
    Commongen {
        concepts: Vec<String>,
        reference: String,
    },
    #[serde(rename = "cosmosqa")]
    CosmosQa {
        context: String,
        question: String,
        answers: [String; 4],
        gold: u8,
    },
    Squad {
        context: String,
        question: String,
        answer: String,
    },
    Qqp {
        question1: String,
        question2: String,
        duplicate: bool,
    },
    Dpr {
        sentence: String,
        pronoun: String,
        /// Character offsets of the pronoun, end exclusive.
        pronoun_span: (usize, usize),
        antecedent: String,
        candidates: Vec<String>,
    },
}

impl AuxPayload {
    pub fn task(&self) -> AuxTask {
        match self {
            AuxPayload::Commongen { .. } => AuxTask::Commongen,
            AuxPayload::CosmosQa { .. } => AuxTask::CosmosQa,
            AuxPayload::Squad { .. } => AuxTask::Squad,
            AuxPayload::Qqp { .. } => AuxTask::Qqp,
            AuxPayload::Dpr { .. } => AuxTask::Dpr,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AuxRecord {
    pub id: String,
    pub task: AuxTask,
    pub split: Split,
    pub payload: AuxPayload,
}

struct Fields<'a> {
    map: &'a Map<String, Value>,
    line: usize,
    task: AuxTask,
}

impl<'a> Fields<'a> {
    fn get(&self, names: &[&str]) -> Result<&'a Value, IngestError> {
        names
            .iter()
            .find_map(|n| self.map.get(*n))
            .ok_or_else(|| IngestError::TaskMismatch {
                line: self.line,
                task: self.task,
                message: format!("missing field {:?}", names[0]),
            })
    }

    fn malformed(&self, message: impl Into<String>) -> IngestError {
        IngestError::MalformedRecord {
            line: self.line,
            message: message.into(),
        }
    }

    fn string(&self, names: &[&str]) -> Result<String, IngestError> {
        match self.get(names)? {
            Value::String(s) => Ok(s.clone()),
            other => Err(self.malformed(format!("field {:?} is not a string: {other}", names[0]))),
        }
    }

    fn int(&self, names: &[&str]) -> Result<i64, IngestError> {
        match self.get(names)? {
            Value::Number(n) if n.as_i64().is_some() => Ok(n.as_i64().unwrap_or_default()),
            Value::String(s) => s
                .trim()
                .parse()
                .map_err(|_| self.malformed(format!("field {:?} is not an integer", names[0]))),
            other => Err(self.malformed(format!("field {:?} is not an integer: {other}", names[0]))),
        }
    }

    fn string_list(&self, names: &[&str]) -> Result<Vec<String>, IngestError> {
        match self.get(names)? {
            Value::Array(items) => items
                .iter()
                .map(|v| {
                    v.as_str()
                        .map(str::to_string)
                        .ok_or_else(|| self.malformed(format!("field {:?} has a non-string item", names[0])))
                })
                .collect(),
            other => Err(self.malformed(format!("field {:?} is not a list: {other}", names[0]))),
        }
    }
}

fn char_offset(s: &str, byte: usize) -> usize {
    s[..byte].chars().count()
}

fn locate_pronoun(sentence: &str, pronoun: &str) -> Option<(usize, usize)> {
    let words: Vec<(usize, &str)> = sentence.unicode_word_indices().collect();
    let hit = words
        .iter()
        .find(|(_, w)| *w == pronoun)
        .or_else(|| words.iter().find(|(_, w)| w.eq_ignore_ascii_case(pronoun)))?;
    let start = char_offset(sentence, hit.0);
    Some((start, start + hit.1.chars().count()))
}

fn parse_payload(f: &Fields<'_>) -> Result<AuxPayload, IngestError> {
    Ok(match f.task {
        AuxTask::Commongen => AuxPayload::Commongen {
            concepts: f.string_list(&["concepts"])?,
            reference: f.string(&["target", "ref"])?,
        },
        AuxTask::CosmosQa => {
            let gold = f.int(&["label"])?;
            if !(0..=3).contains(&gold) {
                return Err(f.malformed(format!("gold index {gold} outside 0..=3")));
            }
            AuxPayload::CosmosQa {
                context: f.string(&["context"])?,
                question: f.string(&["question"])?,
                answers: [
                    f.string(&["answer0"])?,
                    f.string(&["answer1"])?,
                    f.string(&["answer2"])?,
                    f.string(&["answer3"])?,
                ],
                gold: gold as u8,
            }
        }
        AuxTask::Squad => {
            let answer = match f.map.get("answers") {
                Some(Value::Object(a)) => a
                    .get("text")
                    .and_then(Value::as_array)
                    .and_then(|t| t.first())
                    .and_then(Value::as_str)
                    .map(str::to_string)
                    .ok_or_else(|| f.malformed("answers.text is empty"))?,
                Some(other) => return Err(f.malformed(format!("answers is not an object: {other}"))),
                None => f.string(&["answer"])?,
            };
            AuxPayload::Squad {
                context: f.string(&["context"])?,
                question: f.string(&["question"])?,
                answer,
            }
        }
        AuxTask::Qqp => {
            let label = f.int(&["label", "is_duplicate"])?;
            if !(0..=1).contains(&label) {
                return Err(f.malformed(format!("duplicate label {label} is not 0 or 1")));
            }
            AuxPayload::Qqp {
                question1: f.string(&["question1"])?,
                question2: f.string(&["question2"])?,
                duplicate: label == 1,
            }
        }
        AuxTask::Dpr => {
            let sentence = f.string(&["sentence"])?;
            let pronoun = f.string(&["pronoun"])?;
            let candidates = f.string_list(&["candidates"])?;
            let label = f.int(&["label"])?;
            let antecedent = usize::try_from(label)
                .ok()
                .and_then(|i| candidates.get(i))
                .cloned()
                .ok_or_else(|| f.malformed(format!("label {label} does not index candidates")))?;
            let pronoun_span = match f.map.get("pronoun_start") {
                Some(v) => {
                    let start = v
                        .as_u64()
                        .ok_or_else(|| f.malformed("pronoun_start is not an offset"))?
                        as usize;
                    let end = start + pronoun.chars().count();
                    let found: String = sentence.chars().skip(start).take(end - start).collect();
                    if found != pronoun {
                        return Err(f.malformed(format!("pronoun {pronoun:?} not found at offset {start}")));
                    }
                    (start, end)
                }
                None => locate_pronoun(&sentence, &pronoun)
                    .ok_or_else(|| f.malformed(format!("pronoun {pronoun:?} does not occur in sentence")))?,
            };
            AuxPayload::Dpr {
                sentence,
                pronoun,
                pronoun_span,
                antecedent,
                candidates,
            }
        }
    })
}

/// Parse JSON-lines records for one task and split.
///
/// QQP training data is capped at [`QQP_TRAIN_CAP`] records, taken from a
/// shuffle keyed by a fixed seed so the retained subset does not depend on
/// the file's ordering.
pub fn parse_aux_records<R: BufRead>(input: R, task: AuxTask, split: Split) -> Result<Vec<AuxRecord>, IngestError> {
    let mut records = Vec::new();
    for (i, line) in input.lines().enumerate() {
        let line_no = i + 1;
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let value: Value = serde_json::from_str(&line).map_err(|e| IngestError::MalformedRecord {
            line: line_no,
            message: e.to_string(),
        })?;
        let Value::Object(map) = value else {
            return Err(IngestError::MalformedRecord {
                line: line_no,
                message: "record is not an object".into(),
            });
        };
        let fields = Fields {
            map: &map,
            line: line_no,
            task,
        };
        records.push(AuxRecord {
            id: format!("{task}-{split}-{line_no}"),
            task,
            split,
            payload: parse_payload(&fields)?,
        });
    }

    let read = records.len();
    if task == AuxTask::Qqp && split == Split::Train && records.len() > QQP_TRAIN_CAP {
        records.sort_by_cached_key(|r| serde_json::to_string(&r.payload).unwrap_or_default());
        records.shuffle(&mut keyed_rng(QQP_CAP_SEED, "qqp-train-cap"));
        records.truncate(QQP_TRAIN_CAP);
    }
    log::info!("{task} {split}: read {read} records, kept {}", records.len());
    Ok(records)
}

/// Load an auxiliary corpus file. See [`parse_aux_records`].
pub fn load_aux_corpus(task: AuxTask, split: Split, path: &Path) -> Result<Vec<AuxRecord>, IngestError> {
    let file = std::fs::File::open(path)?;
    parse_aux_records(std::io::BufReader::new(file), task, split)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(task: AuxTask, text: &str) -> Result<Vec<AuxRecord>, IngestError> {
        parse_aux_records(text.as_bytes(), task, Split::Train)
    }

    #[test]
    fn commongen_fixture() {
        let recs = parse(
            AuxTask::Commongen,
            r#"{"concepts":["dog","frisbee","catch","throw"],"ref":"A dog leaps to catch a thrown frisbee."}"#,
        )
        .unwrap();
        assert_eq!(recs.len(), 1);
        assert_eq!(
            recs[0].payload,
            AuxPayload::Commongen {
                concepts: vec!["dog".into(), "frisbee".into(), "catch".into(), "throw".into()],
                reference: "A dog leaps to catch a thrown frisbee.".into(),
            }
        );
    }

    #[test]
    fn empty_file_gives_empty_list() {
        assert!(parse(AuxTask::Squad, "").unwrap().is_empty());
    }

    #[test]
    fn malformed_line_reports_line_number() {
        let err = parse(
            AuxTask::Qqp,
            "{\"question1\":\"a\",\"question2\":\"b\",\"label\":0}\n{oops",
        )
        .unwrap_err();
        assert!(matches!(err, IngestError::MalformedRecord { line: 2, .. }), "{err:?}");
    }

    #[test]
    fn wrong_task_is_task_mismatch() {
        let err = parse(AuxTask::Commongen, r#"{"question1":"a","question2":"b","label":0}"#).unwrap_err();
        assert!(matches!(
            err,
            IngestError::TaskMismatch {
                line: 1,
                task: AuxTask::Commongen,
                ..
            }
        ));
    }

    #[test]
    fn cosmosqa_gold_index_is_checked() {
        let line = |label: i64| {
            format!(
                r#"{{"context":"c","question":"q","answer0":"a","answer1":"b","answer2":"c","answer3":"d","label":{label}}}"#
            )
        };
        assert!(parse(AuxTask::CosmosQa, &line(3)).is_ok());
        assert!(matches!(
            parse(AuxTask::CosmosQa, &line(4)),
            Err(IngestError::MalformedRecord { .. })
        ));
    }

    #[test]
    fn squad_takes_first_answer() {
        let recs = parse(
            AuxTask::Squad,
            r#"{"id":"x","context":"Paris is in France.","question":"Where is Paris?","answers":{"text":["France","in France"],"answer_start":[12,9]}}"#,
        )
        .unwrap();
        match &recs[0].payload {
            AuxPayload::Squad { answer, .. } => assert_eq!(answer, "France"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn dpr_locates_pronoun() {
        let recs = parse(
            AuxTask::Dpr,
            r#"{"sentence":"Humans were afraid of robots as they were strong.","pronoun":"they","candidates":["Humans","robots"],"label":0}"#,
        )
        .unwrap();
        match &recs[0].payload {
            AuxPayload::Dpr {
                pronoun_span,
                antecedent,
                ..
            } => {
                assert_eq!(*pronoun_span, (32, 36));
                assert_eq!(antecedent, "Humans");
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn qqp_train_is_capped_deterministically() {
        let mut text = String::new();
        for i in 0..QQP_TRAIN_CAP + 7 {
            text.push_str(&format!(
                "{{\"question1\":\"q{i}\",\"question2\":\"p{i}\",\"label\":{}}}\n",
                i % 2
            ));
        }
        let a = parse(AuxTask::Qqp, &text).unwrap();
        assert_eq!(a.len(), QQP_TRAIN_CAP);
        let b = parse(AuxTask::Qqp, &text).unwrap();
        assert_eq!(a, b);

        let reversed: String = text.lines().rev().map(|l| format!("{l}\n")).collect();
        let c = parse(AuxTask::Qqp, &reversed).unwrap();
        let payloads = |v: &[AuxRecord]| v.iter().map(|r| r.payload.clone()).collect::<Vec<_>>();
        assert_eq!(payloads(&a), payloads(&c));

        let val = parse_aux_records(text.as_bytes(), AuxTask::Qqp, Split::Val).unwrap();
        assert_eq!(val.len(), QQP_TRAIN_CAP + 7);
    }
}
