use num_integer::Integer;
use serde::{Deserialize, Serialize};

use super::MetricError;
use crate::corpus::Polarity;
use crate::prompt::AlscPrediction;

/// Which classes enter the macro average.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum F1Averaging {
    /// Classes that occur in the golds or in the (valid) predictions.
    #[default]
    PresentClasses,
    /// Always all three polarities.
    AllClasses,
}

impl F1Averaging {
    pub fn variant_name(self) -> &'static str {
        match self {
            F1Averaging::PresentClasses => "macro-F1 (present classes)",
            F1Averaging::AllClasses => "macro-F1 (3 classes)",
        }
    }
}

fn class_index(p: Polarity) -> usize {
    match p {
        Polarity::Positive => 0,
        Polarity::Negative => 1,
        Polarity::Neutral => 2,
    }
}

/// Exact non-negative fraction, kept reduced.
#[derive(Clone, Copy)]
struct Frac {
    num: u128,
    den: u128,
}

impl Frac {
    fn new(num: u128, den: u128) -> Self {
        let g = num.gcd(&den).max(1);
        Frac {
            num: num / g,
            den: den / g,
        }
    }

    fn add(self, o: Frac) -> Frac {
        let l = self.den.lcm(&o.den);
        Frac::new(self.num * (l / self.den) + o.num * (l / o.den), l)
    }
}

pub fn macro_f1(predictions: &[AlscPrediction], golds: &[Polarity]) -> Result<f64, MetricError> {
    macro_f1_with(predictions, golds, F1Averaging::PresentClasses)
}

/// Macro-averaged F1 ×100.
///
/// Per-class F1 is 2·tp / (2·tp + fp + fn), which equals the harmonic mean
/// of precision and recall with 0/0 taken as 0. An `Invalid` prediction is
/// a false negative for the gold class and never a class of its own. The
/// average is accumulated as an exact fraction and converted once.
pub fn macro_f1_with(
    predictions: &[AlscPrediction],
    golds: &[Polarity],
    averaging: F1Averaging,
) -> Result<f64, MetricError> {
    if predictions.len() != golds.len() {
        return Err(MetricError::LengthMismatch {
            predictions: predictions.len(),
            golds: golds.len(),
        });
    }
    if golds.is_empty() {
        return Err(MetricError::EmptyEval);
    }

    let mut tp = [0u128; 3];
    let mut fp = [0u128; 3];
    let mut fn_ = [0u128; 3];
    let mut present = [averaging == F1Averaging::AllClasses; 3];
    for (pred, gold) in predictions.iter().zip(golds) {
        let g = class_index(*gold);
        present[g] = true;
        match pred.polarity().map(class_index) {
            Some(p) if p == g => tp[g] += 1,
            Some(p) => {
                present[p] = true;
                fp[p] += 1;
                fn_[g] += 1;
            }
            None => fn_[g] += 1,
        }
    }

    let mut sum = Frac::new(0, 1);
    let mut k = 0u128;
    for c in 0..3 {
        if !present[c] {
            continue;
        }
        k += 1;
        let den = 2 * tp[c] + fp[c] + fn_[c];
        if den > 0 {
            sum = sum.add(Frac::new(2 * tp[c], den));
        }
    }
    let avg = Frac::new(sum.num, sum.den * k);
    Ok((avg.num * 100) as f64 / avg.den as f64)
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DprMatch {
    /// Trimmed, lowercased, leading article removed.
    #[default]
    Normalized,
    Exact,
}

fn normalize_antecedent(s: &str) -> String {
    let lower = s.trim().to_lowercase();
    let words: Vec<&str> = lower.split_whitespace().collect();
    let rest = match words.first() {
        Some(&("the" | "a" | "an")) if words.len() > 1 => &words[1..],
        _ => &words[..],
    };
    rest.join(" ")
}

/// Percentage of predictions naming the gold antecedent.
pub fn dpr_score(predictions: &[String], golds: &[String], mode: DprMatch) -> Result<f64, MetricError> {
    if predictions.len() != golds.len() {
        return Err(MetricError::LengthMismatch {
            predictions: predictions.len(),
            golds: golds.len(),
        });
    }
    if golds.is_empty() {
        return Err(MetricError::EmptyEval);
    }
    let correct = predictions
        .iter()
        .zip(golds)
        .filter(|(p, g)| match mode {
            DprMatch::Exact => p == g,
            DprMatch::Normalized => normalize_antecedent(p) == normalize_antecedent(g),
        })
        .count();
    Ok(100.0 * correct as f64 / golds.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub mean: f64,
    /// Sample standard deviation (n - 1 denominator).
    pub std: f64,
    pub n: usize,
}

pub fn aggregate(scores: &[f64]) -> Result<Aggregate, MetricError> {
    if scores.len() < 2 {
        return Err(MetricError::TooFewSamples {
            needed: 2,
            got: scores.len(),
        });
    }
    if scores.iter().any(|s| !s.is_finite()) {
        return Err(MetricError::NonFinite);
    }
    let n = scores.len() as f64;
    let mean = scores.iter().sum::<f64>() / n;
    let var = scores.iter().map(|s| (s - mean).powi(2)).sum::<f64>() / (n - 1.0);
    Ok(Aggregate {
        mean,
        std: var.sqrt(),
        n: scores.len(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use AlscPrediction as P;
    use Polarity::*;

    #[test]
    fn perfect_predictions() {
        let g = [Positive, Negative, Neutral];
        let p = [P::Positive, P::Negative, P::Neutral];
        assert_eq!(macro_f1(&p, &g).unwrap(), 100.0);
    }

    #[test]
    fn hand_computed_two_class_case() {
        let f1 = macro_f1(
            &[P::Positive, P::Negative, P::Negative],
            &[Positive, Positive, Negative],
        )
        .unwrap();
        assert!((f1 - 66.666_666_666_666_67).abs() < 1e-9);
        let strict = macro_f1_with(
            &[P::Positive, P::Negative, P::Negative],
            &[Positive, Positive, Negative],
            F1Averaging::AllClasses,
        )
        .unwrap();
        assert!((strict - 44.444_444_444_444_44).abs() < 1e-9);
    }

    #[test]
    fn invalid_counts_as_wrong() {
        assert_eq!(macro_f1(&[P::Invalid], &[Positive]).unwrap(), 0.0);
    }

    #[test]
    fn metric_errors() {
        assert_eq!(
            macro_f1(&[P::Positive], &[]),
            Err(MetricError::LengthMismatch {
                predictions: 1,
                golds: 0
            })
        );
        assert_eq!(macro_f1(&[], &[]), Err(MetricError::EmptyEval));
    }

    #[test]
    fn dpr_normalization() {
        let s = |v: &[&str]| v.iter().map(|x| x.to_string()).collect::<Vec<_>>();
        assert_eq!(
            dpr_score(&s(&["Humans"]), &s(&["Humans"]), DprMatch::Normalized).unwrap(),
            100.0
        );
        assert_eq!(
            dpr_score(&s(&["the humans"]), &s(&["Humans"]), DprMatch::Normalized).unwrap(),
            100.0
        );
        assert_eq!(
            dpr_score(&s(&["the humans"]), &s(&["Humans"]), DprMatch::Exact).unwrap(),
            0.0
        );
        assert_eq!(
            dpr_score(&s(&["a", "b"]), &s(&["c", "d"]), DprMatch::Normalized).unwrap(),
            0.0
        );
        assert!(dpr_score(&s(&["a"]), &s(&[]), DprMatch::Normalized).is_err());
    }

    #[test]
    fn aggregates() {
        let a = aggregate(&[71.07, 71.07]).unwrap();
        assert_eq!((a.mean, a.std), (71.07, 0.0));
        let b = aggregate(&[70.0, 72.0, 74.0]).unwrap();
        assert_eq!((b.mean, b.std), (72.0, 2.0));
        assert_eq!(aggregate(&[1.0]), Err(MetricError::TooFewSamples { needed: 2, got: 1 }));
    }
}
