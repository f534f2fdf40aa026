//! Definite-pronoun detection, Pronoun/CR case labels and the manual
//! CR-annotation queue.
//!
//! CR cases cannot be detected automatically. The workflow is:
//! classify every instance, emit a TSV queue of unreviewed Pronoun cases,
//! let annotators append verdicts to a decisions TSV, then fold those
//! verdicts back with [`apply_decisions`].

use std::collections::{HashMap, HashSet};
use std::fs::{File, OpenOptions};
use std::io::{Read, Write};
use std::ops::Range;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;
use unicode_segmentation::UnicodeSegmentation;

use crate::corpus::AspectInstance;

/// The 14 definite pronoun forms counted in the ALSC-CR test set.
pub const DEFAULT_PRONOUNS: [&str; 14] = [
    "it", "which", "they", "he", "who", "she", "their", "them", "its", "his", "there", "him", "her", "hers",
];

/// Minimum per-pronoun count for a pronoun to be analysed (strictly greater).
pub const PRONOUN_ANALYSIS_MIN_COUNT: usize = 15;

#[derive(Debug, Error)]
pub enum LabelError {
    #[error("decision references unknown instance {0}")]
    UnknownInstance(String),
    #[error("decision on non-pronoun case {0}")]
    DecisionOnNonPronounCase(String),
    #[error("conflicting decisions for instance {0}")]
    ConflictingDuplicateDecisions(String),
    #[error("decisions file: {0}")]
    Tsv(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl From<csv::Error> for LabelError {
    fn from(e: csv::Error) -> Self {
        LabelError::Tsv(e.to_string())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PronounLexicon {
    entries: Vec<String>,
}

impl Default for PronounLexicon {
    fn default() -> Self {
        Self::new(DEFAULT_PRONOUNS)
    }
}

impl PronounLexicon {
    pub fn new<I, S>(entries: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        Self {
            entries: entries.into_iter().map(|s| s.into().to_lowercase()).collect(),
        }
    }

    pub fn entries(&self) -> &[String] {
        &self.entries
    }

    fn lookup(&self, token: &str) -> Option<&str> {
        let lower = token.to_lowercase();
        self.entries.iter().find(|e| **e == lower).map(String::as_str)
    }
}

/// Word tokens with byte ranges: Unicode word boundaries, punctuation
/// dropped, contractions split at apostrophes ("it's" -> "it", "s").
fn tokens(sentence: &str) -> Vec<(Range<usize>, &str)> {
    let mut out = Vec::new();
    for (start, word) in sentence.unicode_word_indices() {
        let mut piece_start = 0;
        for (i, c) in word.char_indices() {
            if c == '\'' || c == '\u{2019}' {
                if i > piece_start {
                    out.push((start + piece_start..start + i, &word[piece_start..i]));
                }
                piece_start = i + c.len_utf8();
            }
        }
        if piece_start < word.len() {
            out.push((start + piece_start..start + word.len(), &word[piece_start..]));
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PronounOccurrence {
    pub pronoun: String,
    pub token_index: usize,
}

fn detect_with_spans(sentence: &str, lexicon: &PronounLexicon) -> Vec<(PronounOccurrence, Range<usize>)> {
    tokens(sentence)
        .into_iter()
        .enumerate()
        .filter_map(|(i, (range, tok))| {
            lexicon.lookup(tok).map(|p| {
                (
                    PronounOccurrence {
                        pronoun: p.to_string(),
                        token_index: i,
                    },
                    range,
                )
            })
        })
        .collect()
}

/// Find lexicon pronouns in `sentence` as (pronoun, token index) pairs.
pub fn detect_pronouns(sentence: &str, lexicon: &PronounLexicon) -> Vec<PronounOccurrence> {
    detect_with_spans(sentence, lexicon)
        .into_iter()
        .map(|(o, _)| o)
        .collect()
}

/// Wrap every detected pronoun in asterisks, for annotator display.
pub fn mark_pronouns(sentence: &str, lexicon: &PronounLexicon) -> String {
    let mut out = String::with_capacity(sentence.len() + 8);
    let mut last = 0;
    for (_, range) in detect_with_spans(sentence, lexicon) {
        out.push_str(&sentence[last..range.start]);
        out.push('*');
        out.push_str(&sentence[range.clone()]);
        out.push('*');
        last = range.end;
    }
    out.push_str(&sentence[last..]);
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CaseKind {
    NonPronoun,
    Pronoun,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CrStatus {
    Unreviewed,
    Yes,
    No,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CaseLabel {
    pub kind: CaseKind,
    pub pronoun_occurrences: Vec<PronounOccurrence>,
    pub is_cr: CrStatus,
}

impl CaseLabel {
    /// Distinct pronouns in the sentence, in order of first occurrence.
    pub fn distinct_pronouns(&self) -> Vec<&str> {
        let mut seen = HashSet::new();
        self.pronoun_occurrences
            .iter()
            .map(|o| o.pronoun.as_str())
            .filter(|p| seen.insert(*p))
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabeledInstance {
    #[serde(flatten)]
    pub instance: AspectInstance,
    pub label: CaseLabel,
}

impl LabeledInstance {
    pub fn id(&self) -> &str {
        &self.instance.instance_id
    }

    pub fn is_pronoun_case(&self) -> bool {
        self.label.kind == CaseKind::Pronoun
    }

    pub fn is_cr_case(&self) -> bool {
        self.label.is_cr == CrStatus::Yes
    }
}

pub fn classify_case(instance: &AspectInstance, lexicon: &PronounLexicon) -> CaseLabel {
    let pronoun_occurrences = detect_pronouns(&instance.sentence, lexicon);
    let (kind, is_cr) = if pronoun_occurrences.is_empty() {
        (CaseKind::NonPronoun, CrStatus::No)
    } else {
        (CaseKind::Pronoun, CrStatus::Unreviewed)
    };
    CaseLabel {
        kind,
        pronoun_occurrences,
        is_cr,
    }
}

pub fn classify_all(instances: Vec<AspectInstance>, lexicon: &PronounLexicon) -> Vec<LabeledInstance> {
    instances
        .into_iter()
        .map(|instance| {
            let label = classify_case(&instance, lexicon);
            LabeledInstance { instance, label }
        })
        .collect()
}

const QUEUE_HEADER: [&str; 4] = ["instance_id", "sentence", "aspect", "polarity"];
const DECISION_HEADER: [&str; 4] = ["instance_id", "verdict", "annotator", "note"];

fn tsv_writer<W: Write>(out: W) -> csv::Writer<W> {
    csv::WriterBuilder::new()
        .delimiter(b'\t')
        .has_headers(false)
        .from_writer(out)
}

fn tsv_reader<R: Read>(input: R) -> csv::Reader<R> {
    csv::ReaderBuilder::new()
        .delimiter(b'\t')
        .has_headers(true)
        .from_reader(input)
}

/// Write the queue of unreviewed Pronoun cases, ordered by instance id.
pub fn write_annotation_queue<W: Write>(
    instances: &[LabeledInstance],
    lexicon: &PronounLexicon,
    out: W,
) -> Result<usize, LabelError> {
    let mut queued: Vec<&LabeledInstance> = instances
        .iter()
        .filter(|li| li.is_pronoun_case() && li.label.is_cr == CrStatus::Unreviewed)
        .collect();
    queued.sort_by(|a, b| a.id().cmp(b.id()));

    let mut w = tsv_writer(out);
    w.write_record(QUEUE_HEADER)?;
    for li in &queued {
        w.write_record([
            li.id(),
            &mark_pronouns(&li.instance.sentence, lexicon),
            &li.instance.aspect,
            li.instance.polarity.as_str(),
        ])?;
    }
    w.flush()?;
    Ok(queued.len())
}

pub fn emit_annotation_queue(
    instances: &[LabeledInstance],
    lexicon: &PronounLexicon,
    out: &Path,
) -> Result<usize, LabelError> {
    write_annotation_queue(instances, lexicon, File::create(out)?)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Verdict {
    Yes,
    No,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnnotationDecision {
    pub instance_id: String,
    pub verdict: Verdict,
    #[serde(default)]
    pub annotator: String,
    #[serde(default)]
    pub note: String,
}

pub fn read_decisions<R: Read>(input: R) -> Result<Vec<AnnotationDecision>, LabelError> {
    let mut rdr = tsv_reader(input);
    let mut out = Vec::new();
    for row in rdr.deserialize() {
        out.push(row?);
    }
    Ok(out)
}

pub fn load_decisions(path: &Path) -> Result<Vec<AnnotationDecision>, LabelError> {
    read_decisions(File::open(path)?)
}

/// Append decisions to a TSV file, writing the header if the file is new.
pub fn append_decisions(path: &Path, decisions: &[AnnotationDecision]) -> Result<(), LabelError> {
    let fresh = std::fs::metadata(path).map(|m| m.len() == 0).unwrap_or(true);
    let file = OpenOptions::new().create(true).append(true).open(path)?;
    let mut w = tsv_writer(file);
    if fresh {
        w.write_record(DECISION_HEADER)?;
    }
    for d in decisions {
        let verdict = match d.verdict {
            Verdict::Yes => "yes",
            Verdict::No => "no",
        };
        w.write_record([d.instance_id.as_str(), verdict, &d.annotator, &d.note])?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct DecisionCounts {
    pub yes: usize,
    pub no: usize,
    pub unreviewed: usize,
}

/// Set `is_cr` on Pronoun cases from annotator verdicts.
///
/// Instances without a decision keep their current status. The returned
/// counts cover Pronoun cases only.
pub fn apply_decisions(
    mut instances: Vec<LabeledInstance>,
    decisions: &[AnnotationDecision],
) -> Result<(Vec<LabeledInstance>, DecisionCounts), LabelError> {
    let index: HashMap<String, usize> = instances
        .iter()
        .enumerate()
        .map(|(i, li)| (li.id().to_string(), i))
        .collect();

    let mut verdicts: HashMap<&str, Verdict> = HashMap::new();
    for d in decisions {
        let &i = index
            .get(&d.instance_id)
            .ok_or_else(|| LabelError::UnknownInstance(d.instance_id.clone()))?;
        if !instances[i].is_pronoun_case() {
            return Err(LabelError::DecisionOnNonPronounCase(d.instance_id.clone()));
        }
        match verdicts.insert(&d.instance_id, d.verdict) {
            Some(prev) if prev != d.verdict => {
                return Err(LabelError::ConflictingDuplicateDecisions(d.instance_id.clone()))
            }
            _ => {}
        }
    }

    for (id, verdict) in verdicts {
        instances[index[id]].label.is_cr = match verdict {
            Verdict::Yes => CrStatus::Yes,
            Verdict::No => CrStatus::No,
        };
    }

    let mut counts = DecisionCounts::default();
    for li in instances.iter().filter(|li| li.is_pronoun_case()) {
        match li.label.is_cr {
            CrStatus::Yes => counts.yes += 1,
            CrStatus::No => counts.no += 1,
            CrStatus::Unreviewed => counts.unreviewed += 1,
        }
    }
    Ok((instances, counts))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{Polarity, Provenance, SourceDataset, Split};

    fn occ(list: &[(&str, usize)]) -> Vec<PronounOccurrence> {
        list.iter()
            .map(|&(p, i)| PronounOccurrence {
                pronoun: p.into(),
                token_index: i,
            })
            .collect()
    }

    fn inst(id: &str, sentence: &str, aspect: &str) -> AspectInstance {
        AspectInstance {
            instance_id: id.into(),
            review_id: format!("rev-{id}"),
            sentence: sentence.into(),
            aspect: aspect.into(),
            span: (0, aspect.len()),
            polarity: Polarity::Neutral,
            provenance: Provenance {
                dataset: SourceDataset::Rest16,
                split: Split::Train,
            },
        }
    }

    #[test]
    fn detects_in_motivating_sentence() {
        let lex = PronounLexicon::default();
        assert_eq!(
            detect_pronouns("He ate food at the restaurant, it was deserted", &lex),
            occ(&[("he", 0), ("it", 6)])
        );
    }

    #[test]
    fn no_pronouns() {
        assert!(detect_pronouns("Great pizza.", &PronounLexicon::default()).is_empty());
    }

    #[test]
    fn hand_tokenized_fixture() {
        assert_eq!(
            detect_pronouns("Their food, they loved it", &PronounLexicon::default()),
            occ(&[("their", 0), ("they", 2), ("it", 4)])
        );
    }

    #[test]
    fn matching_is_token_exact() {
        let lex = PronounLexicon::default();
        assert_eq!(detect_pronouns("The seat was hers", &lex), occ(&[("hers", 3)]));
        assert!(detect_pronouns("Itself, whichever, theirs", &lex).is_empty());
    }

    #[test]
    fn contractions_are_split() {
        let lex = PronounLexicon::default();
        assert_eq!(detect_pronouns("It's great", &lex), occ(&[("it", 0)]));
        assert_eq!(detect_pronouns("they\u{2019}re rude", &lex), occ(&[("they", 0)]));
    }

    #[test]
    fn marks_pronouns_with_asterisks() {
        let lex = PronounLexicon::default();
        assert_eq!(
            mark_pronouns("The pasta, it's what they do best.", &lex),
            "The pasta, *it*'s what *they* do best."
        );
    }

    #[test]
    fn classification() {
        let lex = PronounLexicon::default();
        let p = classify_case(&inst("a", "I loved it", "x"), &lex);
        assert_eq!((p.kind, p.is_cr), (CaseKind::Pronoun, CrStatus::Unreviewed));
        let n = classify_case(&inst("b", "Great pizza.", "pizza"), &lex);
        assert_eq!((n.kind, n.is_cr), (CaseKind::NonPronoun, CrStatus::No));
    }

    #[test]
    fn two_aspects_share_kind_but_not_cr_state() {
        let lex = PronounLexicon::default();
        let s = "He ate food at the restaurant, it was deserted";
        let labeled = classify_all(vec![inst("a", s, "restaurant"), inst("b", s, "food")], &lex);
        assert_eq!(labeled[0].label.kind, labeled[1].label.kind);
        let decisions = [AnnotationDecision {
            instance_id: "a".into(),
            verdict: Verdict::Yes,
            annotator: "x".into(),
            note: String::new(),
        }];
        let (out, counts) = apply_decisions(labeled, &decisions).unwrap();
        assert_eq!(out[0].label.is_cr, CrStatus::Yes);
        assert_eq!(out[1].label.is_cr, CrStatus::Unreviewed);
        assert_eq!(
            counts,
            DecisionCounts {
                yes: 1,
                no: 0,
                unreviewed: 1
            }
        );
    }

    fn decision(id: &str, verdict: Verdict) -> AnnotationDecision {
        AnnotationDecision {
            instance_id: id.into(),
            verdict,
            annotator: "ann".into(),
            note: String::new(),
        }
    }

    #[test]
    fn decision_errors() {
        let lex = PronounLexicon::default();
        let labeled = classify_all(
            vec![inst("p", "it was fine", "x"), inst("n", "Fine food.", "food")],
            &lex,
        );
        assert!(matches!(
            apply_decisions(labeled.clone(), &[decision("n", Verdict::No)]),
            Err(LabelError::DecisionOnNonPronounCase(id)) if id == "n"
        ));
        assert!(matches!(
            apply_decisions(labeled.clone(), &[decision("zzz", Verdict::No)]),
            Err(LabelError::UnknownInstance(_))
        ));
        assert!(matches!(
            apply_decisions(
                labeled.clone(),
                &[decision("p", Verdict::Yes), decision("p", Verdict::No)]
            ),
            Err(LabelError::ConflictingDuplicateDecisions(_))
        ));
        let (out, _) = apply_decisions(labeled, &[decision("p", Verdict::Yes), decision("p", Verdict::Yes)]).unwrap();
        assert!(out[0].is_cr_case());
    }

    #[test]
    fn queue_rows() {
        let lex = PronounLexicon::default();
        let mut all = Vec::new();
        for i in 0..3 {
            all.push(inst(&format!("p{i}"), "They said it was good", "food"));
        }
        for i in 0..5 {
            all.push(inst(&format!("n{i}"), "Good food.", "food"));
        }
        let labeled = classify_all(all, &lex);
        let mut buf = Vec::new();
        assert_eq!(write_annotation_queue(&labeled, &lex, &mut buf).unwrap(), 3);
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "instance_id\tsentence\taspect\tpolarity");
        assert_eq!(lines[1], "p0\t*They* said *it* was good\tfood\tneutral");
        assert_eq!(lines.len(), 4);
    }

    #[test]
    fn empty_queue_has_header_only() {
        let mut buf = Vec::new();
        assert_eq!(
            write_annotation_queue(&[], &PronounLexicon::default(), &mut buf).unwrap(),
            0
        );
        assert_eq!(
            String::from_utf8(buf).unwrap(),
            "instance_id\tsentence\taspect\tpolarity\n"
        );
    }

    #[test]
    fn decisions_file_appends_across_sittings() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("decisions.tsv");
        append_decisions(&path, &[decision("a", Verdict::Yes)]).unwrap();
        append_decisions(&path, &[decision("b", Verdict::No)]).unwrap();
        let read = load_decisions(&path).unwrap();
        assert_eq!(read, vec![decision("a", Verdict::Yes), decision("b", Verdict::No)]);
    }
}
