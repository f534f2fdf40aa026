//! Text-to-text prompt rendering for the target and auxiliary tasks, and
//! parsing of model outputs back into ALSC labels.

use std::fmt;
use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{AspectInstance, AuxPayload, AuxRecord, AuxTask, Polarity};

#[derive(Debug, Error)]
pub enum PromptError {
    #[error("expected a {expected} record, got {found}")]
    TaskMismatch { expected: AuxTask, found: AuxTask },
    #[error("span {start}..{end} out of bounds for sentence of {len} characters")]
    SpanOutOfBounds { start: usize, end: usize, len: usize },
    #[error("line {line}: {message}")]
    Malformed { line: usize, message: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TaskTag {
    Alsc,
    Commongen,
    #[serde(rename = "cosmosqa")]
    CosmosQa,
    Squad,
    Qqp,
    Dpr,
}

impl From<AuxTask> for TaskTag {
    fn from(t: AuxTask) -> Self {
        match t {
            AuxTask::Commongen => TaskTag::Commongen,
            AuxTask::CosmosQa => TaskTag::CosmosQa,
            AuxTask::Squad => TaskTag::Squad,
            AuxTask::Qqp => TaskTag::Qqp,
            AuxTask::Dpr => TaskTag::Dpr,
        }
    }
}

impl fmt::Display for TaskTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = serde_json::to_value(self).ok();
        f.write_str(s.as_ref().and_then(|v| v.as_str()).unwrap_or("?"))
    }
}

/// One rendered (input, target) pair; the line format shipped to backends.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptedExample {
    #[serde(rename = "input")]
    pub input_text: String,
    #[serde(rename = "target")]
    pub target_text: String,
    pub origin_id: String,
    pub task: TaskTag,
}

/// Target vocabulary choices for tasks whose labels are not fixed by the
/// prompt table.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptConfig {
    pub qqp_duplicate: String,
    pub qqp_not_duplicate: String,
}

impl Default for PromptConfig {
    fn default() -> Self {
        Self {
            qqp_duplicate: "duplicate".into(),
            qqp_not_duplicate: "not_duplicate".into(),
        }
    }
}

fn with_terminal_period(sentence: &str) -> String {
    let trimmed = sentence.trim_end();
    if trimmed.ends_with(['.', '!', '?']) {
        trimmed.to_string()
    } else {
        format!("{trimmed}.")
    }
}

/// `get sentiment: {sentence} aspect: {aspect}`.
pub fn render_alsc(instance: &AspectInstance) -> PromptedExample {
    PromptedExample {
        input_text: format!(
            "get sentiment: {} aspect: {}",
            with_terminal_period(&instance.sentence),
            instance.aspect
        ),
        target_text: instance.polarity.as_str().to_string(),
        origin_id: instance.instance_id.clone(),
        task: TaskTag::Alsc,
    }
}

fn mismatch(expected: AuxTask, record: &AuxRecord) -> PromptError {
    PromptError::TaskMismatch {
        expected,
        found: record.payload.task(),
    }
}

fn example(record: &AuxRecord, input_text: String, target_text: String) -> PromptedExample {
    PromptedExample {
        input_text,
        target_text,
        origin_id: record.id.clone(),
        task: record.payload.task().into(),
    }
}

/// `Get antecedent: {sentence}` with the pronoun wrapped in asterisks.
pub fn render_dpr(record: &AuxRecord) -> Result<PromptedExample, PromptError> {
    let AuxPayload::Dpr {
        sentence,
        pronoun_span: (start, end),
        antecedent,
        ..
    } = &record.payload
    else {
        return Err(mismatch(AuxTask::Dpr, record));
    };
    let (start, end) = (*start, *end);
    let len = sentence.chars().count();
    if start >= end || end > len {
        return Err(PromptError::SpanOutOfBounds { start, end, len });
    }
    let chars: Vec<char> = sentence.chars().collect();
    let before: String = chars[..start].iter().collect();
    let pronoun: String = chars[start..end].iter().collect();
    let after: String = chars[end..].iter().collect();
    Ok(example(
        record,
        format!("Get antecedent: {before}*{pronoun}*{after}"),
        antecedent.clone(),
    ))
}

pub fn render_commongen(record: &AuxRecord) -> Result<PromptedExample, PromptError> {
    let AuxPayload::Commongen { concepts, reference } = &record.payload else {
        return Err(mismatch(AuxTask::Commongen, record));
    };
    Ok(example(
        record,
        format!("generate a sentence with: {}", concepts.join(" ")),
        reference.clone(),
    ))
}

pub fn render_cosmosqa(record: &AuxRecord) -> Result<PromptedExample, PromptError> {
    let AuxPayload::CosmosQa {
        context,
        question,
        answers,
        gold,
    } = &record.payload
    else {
        return Err(mismatch(AuxTask::CosmosQa, record));
    };
    let [a0, a1, a2, a3] = answers;
    Ok(example(
        record,
        format!("question: {question} answer_0: {a0} answer_1: {a1} answer_2: {a2} answer_3: {a3} context: {context}"),
        gold.to_string(),
    ))
}

pub fn render_squad(record: &AuxRecord) -> Result<PromptedExample, PromptError> {
    let AuxPayload::Squad {
        context,
        question,
        answer,
    } = &record.payload
    else {
        return Err(mismatch(AuxTask::Squad, record));
    };
    Ok(example(
        record,
        format!("question: {question} context: {context}"),
        answer.clone(),
    ))
}

pub fn render_qqp(record: &AuxRecord, config: &PromptConfig) -> Result<PromptedExample, PromptError> {
    let AuxPayload::Qqp {
        question1,
        question2,
        duplicate,
    } = &record.payload
    else {
        return Err(mismatch(AuxTask::Qqp, record));
    };
    let target = if *duplicate {
        &config.qqp_duplicate
    } else {
        &config.qqp_not_duplicate
    };
    Ok(example(
        record,
        format!("qqp question1: {question1} question2: {question2}"),
        target.clone(),
    ))
}

/// Render any auxiliary record with the template for its task.
pub fn render_aux(record: &AuxRecord, config: &PromptConfig) -> Result<PromptedExample, PromptError> {
    if record.task != record.payload.task() {
        return Err(mismatch(record.task, record));
    }
    match record.task {
        AuxTask::Commongen => render_commongen(record),
        AuxTask::CosmosQa => render_cosmosqa(record),
        AuxTask::Squad => render_squad(record),
        AuxTask::Qqp => render_qqp(record, config),
        AuxTask::Dpr => render_dpr(record),
    }
}

/// A model output mapped onto the ALSC label set.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AlscPrediction {
    Positive,
    Negative,
    Neutral,
    Invalid,
}

impl AlscPrediction {
    pub fn polarity(self) -> Option<Polarity> {
        match self {
            AlscPrediction::Positive => Some(Polarity::Positive),
            AlscPrediction::Negative => Some(Polarity::Negative),
            AlscPrediction::Neutral => Some(Polarity::Neutral),
            AlscPrediction::Invalid => None,
        }
    }
}

impl From<Polarity> for AlscPrediction {
    fn from(p: Polarity) -> Self {
        match p {
            Polarity::Positive => AlscPrediction::Positive,
            Polarity::Negative => AlscPrediction::Negative,
            Polarity::Neutral => AlscPrediction::Neutral,
        }
    }
}

/// Trim, lowercase, and match exactly; anything else is `Invalid`.
pub fn parse_alsc_output(text: &str) -> AlscPrediction {
    match text.trim().to_lowercase().as_str() {
        "positive" => AlscPrediction::Positive,
        "negative" => AlscPrediction::Negative,
        "neutral" => AlscPrediction::Neutral,
        _ => AlscPrediction::Invalid,
    }
}

pub fn write_prompted_jsonl<W: Write>(examples: &[PromptedExample], mut out: W) -> std::io::Result<()> {
    for ex in examples {
        serde_json::to_writer(&mut out, ex)?;
        out.write_all(b"\n")?;
    }
    out.flush()
}

pub fn read_prompted_jsonl<R: BufRead>(input: R) -> Result<Vec<PromptedExample>, PromptError> {
    let mut out = Vec::new();
    for (i, line) in input.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| PromptError::Malformed {
            line: i + 1,
            message: e.to_string(),
        })?);
    }
    Ok(out)
}
