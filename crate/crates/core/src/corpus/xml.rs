//! SemEval-2016 ABSA and MAMS XML readers.

use roxmltree::{Document, Node};

use super::{IngestError, RawAnnotation, RawReview, SourceDataset, Split};

fn parse_doc(bytes: &[u8]) -> Result<String, IngestError> {
    let text = std::str::from_utf8(bytes).map_err(|e| IngestError::MalformedXml(e.to_string()))?;
    // roxmltree rejects a leading BOM.
    Ok(text.trim_start_matches('\u{feff}').to_string())
}

fn attr<'a>(node: Node<'a, '_>, name: &str, ctx: &str) -> Result<&'a str, IngestError> {
    node.attribute(name).ok_or_else(|| {
        IngestError::SchemaViolation(format!(
            "{ctx}: <{}> missing attribute {name:?}",
            node.tag_name().name()
        ))
    })
}

fn offset(node: Node<'_, '_>, name: &str, ctx: &str) -> Result<usize, IngestError> {
    let raw = attr(node, name, ctx)?;
    raw.trim()
        .parse()
        .map_err(|_| IngestError::SchemaViolation(format!("{ctx}: attribute {name}={raw:?} is not an offset")))
}

fn sentence_text(sentence: Node<'_, '_>, ctx: &str) -> Result<String, IngestError> {
    let text = sentence
        .children()
        .find(|n| n.has_tag_name("text"))
        .ok_or_else(|| IngestError::SchemaViolation(format!("{ctx}: sentence without <text>")))?;
    Ok(text.text().unwrap_or_default().to_string())
}

fn normalize_ws(s: &str) -> String {
    s.split_whitespace().collect::<Vec<_>>().join(" ")
}

/// Check that `term` is the sentence substring at the character span.
fn check_span(sentence: &str, term: &str, span: (usize, usize), ctx: &str) -> Result<(), IngestError> {
    let (start, end) = span;
    let len = sentence.chars().count();
    if start > end || end > len {
        return Err(IngestError::SchemaViolation(format!(
            "{ctx}: span {start}..{end} outside sentence of length {len}"
        )));
    }
    let slice: String = sentence.chars().skip(start).take(end - start).collect();
    if normalize_ws(&slice) != normalize_ws(term) {
        return Err(IngestError::SchemaViolation(format!(
            "{ctx}: term {term:?} does not match sentence text {slice:?} at {start}..{end}"
        )));
    }
    Ok(())
}

/// Parse a SemEval-2016 restaurant review file.
///
/// Every `<sentence>` element becomes one [`RawReview`] keyed by its `id`;
/// each `<Opinion>` with an explicit target becomes an annotation. Opinions
/// whose target is `NULL` carry no aspect term and are skipped.
pub fn parse_semeval_xml(bytes: &[u8], split: Split) -> Result<Vec<RawReview>, IngestError> {
    let text = parse_doc(bytes)?;
    let doc = Document::parse(&text).map_err(|e| IngestError::MalformedXml(e.to_string()))?;
    let mut reviews = Vec::new();
    for sentence in doc.descendants().filter(|n| n.has_tag_name("sentence")) {
        let id = attr(sentence, "id", "sentence")?.to_string();
        let ctx = format!("sentence {id}");
        let text = sentence_text(sentence, &ctx)?;
        let mut anns = Vec::new();
        for op in sentence.descendants().filter(|n| n.has_tag_name("Opinion")) {
            let target = attr(op, "target", &ctx)?;
            let polarity = attr(op, "polarity", &ctx)?;
            if target == "NULL" {
                continue;
            }
            let span = (offset(op, "from", &ctx)?, offset(op, "to", &ctx)?);
            check_span(&text, target, span, &ctx)?;
            anns.push(RawAnnotation {
                aspect_term: target.to_string(),
                span,
                polarity_label: polarity.to_string(),
            });
        }
        reviews.push(RawReview {
            review_id: id,
            sentence: text,
            aspect_annotations: anns,
            source_dataset: SourceDataset::Rest16,
            source_split: split,
        });
    }
    Ok(reviews)
}

/// Parse a MAMS aspect-term file.
///
/// MAMS sentences carry no ids, so review ids are `mams-<split>-<ordinal>`.
pub fn parse_mams_xml(bytes: &[u8], split: Split) -> Result<Vec<RawReview>, IngestError> {
    let text = parse_doc(bytes)?;
    let doc = Document::parse(&text).map_err(|e| IngestError::MalformedXml(e.to_string()))?;
    let mut reviews = Vec::new();
    for (i, sentence) in doc.descendants().filter(|n| n.has_tag_name("sentence")).enumerate() {
        let id = format!("mams-{split}-{i}");
        let text = sentence_text(sentence, &id)?;
        let mut anns = Vec::new();
        for term in sentence.descendants().filter(|n| n.has_tag_name("aspectTerm")) {
            let aspect = attr(term, "term", &id)?;
            let polarity = attr(term, "polarity", &id)?;
            let span = (offset(term, "from", &id)?, offset(term, "to", &id)?);
            check_span(&text, aspect, span, &id)?;
            anns.push(RawAnnotation {
                aspect_term: aspect.to_string(),
                span,
                polarity_label: polarity.to_string(),
            });
        }
        reviews.push(RawReview {
            review_id: id,
            sentence: text,
            aspect_annotations: anns,
            source_dataset: SourceDataset::Mams,
            source_split: split,
        });
    }
    Ok(reviews)
}
