use serde::{Deserialize, Serialize};

use super::MetricError;
use crate::labeler::{LabeledInstance, PronounLexicon, PRONOUN_ANALYSIS_MIN_COUNT};
use crate::prompt::AlscPrediction;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PronounAccuracy {
    pub pronoun: String,
    pub count: usize,
    /// Percentage correct; `None` when the pronoun never occurs.
    pub accuracy: Option<f64>,
    /// Count above the analysis threshold.
    pub analysed: bool,
}

/// Accuracy per lexicon pronoun over an evaluated test set.
///
/// An instance contributes once to every distinct pronoun its sentence
/// contains. Rows follow lexicon order and include zero-count pronouns.
pub fn accuracy_by_pronoun(
    predictions: &[AlscPrediction],
    test: &[LabeledInstance],
    lexicon: &PronounLexicon,
) -> Result<Vec<PronounAccuracy>, MetricError> {
    if predictions.len() != test.len() {
        return Err(MetricError::LengthMismatch {
            predictions: predictions.len(),
            golds: test.len(),
        });
    }
    let mut rows: Vec<(usize, usize)> = vec![(0, 0); lexicon.entries().len()];
    for (pred, li) in predictions.iter().zip(test) {
        let correct = pred.polarity() == Some(li.instance.polarity);
        for p in li.label.distinct_pronouns() {
            if let Some(i) = lexicon.entries().iter().position(|e| e == p) {
                rows[i].0 += 1;
                rows[i].1 += usize::from(correct);
            }
        }
    }
    Ok(lexicon
        .entries()
        .iter()
        .zip(rows)
        .map(|(p, (count, correct))| PronounAccuracy {
            pronoun: p.clone(),
            count,
            accuracy: (count > 0).then(|| 100.0 * correct as f64 / count as f64),
            analysed: count > PRONOUN_ANALYSIS_MIN_COUNT,
        })
        .collect())
}
