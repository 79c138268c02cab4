//! Detection accuracy, word-level span metrics and lexicon hate counts.

use std::collections::{BTreeSet, HashSet};
use std::hash::Hash;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::pipeline::DetectionResult;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum MetricsError {
    #[error("{0} needs at least one input")]
    Empty(&'static str),
}

/// Word-set precision, recall, F1 and intersection-over-union.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpanMetrics {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub iou: f64,
}

impl SpanMetrics {
    pub const PERFECT: SpanMetrics = SpanMetrics {
        precision: 1.0,
        recall: 1.0,
        f1: 1.0,
        iou: 1.0,
    };

    pub fn from_counts(intersection: usize, predicted: usize, gold: usize) -> Self {
        if predicted == 0 && gold == 0 {
            return Self::PERFECT;
        }
        let ratio = |a: usize, b: usize| if b == 0 { 0.0 } else { a as f64 / b as f64 };
        let precision = ratio(intersection, predicted);
        let recall = ratio(intersection, gold);
        let f1 = if precision + recall > 0.0 {
            2.0 * precision * recall / (precision + recall)
        } else {
            0.0
        };
        let iou = ratio(intersection, predicted + gold - intersection);
        SpanMetrics {
            precision,
            recall,
            f1,
            iou,
        }
    }
}

/// Compares predicted and gold word sets. Two empty sets count as a
/// perfect match on every component.
pub fn span_metrics<T: Eq + Hash>(predicted: &HashSet<T>, gold: &HashSet<T>) -> SpanMetrics {
    let inter = predicted.intersection(gold).count();
    SpanMetrics::from_counts(inter, predicted.len(), gold.len())
}

/// Component-wise mean.
pub fn mean_metrics(per_batch: &[SpanMetrics]) -> Result<SpanMetrics, MetricsError> {
    if per_batch.is_empty() {
        return Err(MetricsError::Empty("mean_metrics"));
    }
    let n = per_batch.len() as f64;
    let sum = |f: fn(&SpanMetrics) -> f64| per_batch.iter().map(f).sum::<f64>() / n;
    Ok(SpanMetrics {
        precision: sum(|m| m.precision),
        recall: sum(|m| m.recall),
        f1: sum(|m| m.f1),
        iou: sum(|m| m.iou),
    })
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionCounts {
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    pub tn: usize,
}

impl ConfusionCounts {
    pub fn from_results(results: &[DetectionResult]) -> Self {
        let mut c = ConfusionCounts::default();
        for r in results {
            match (r.predicted_label, r.gold_label) {
                (1, 1) => c.tp += 1,
                (1, _) => c.fp += 1,
                (_, 1) => c.fn_ += 1,
                _ => c.tn += 1,
            }
        }
        c
    }

    pub fn total(&self) -> usize {
        self.tp + self.fp + self.fn_ + self.tn
    }

    pub fn accuracy(&self) -> Option<f64> {
        let total = self.total();
        (total > 0).then(|| 100.0 * (self.tp + self.tn) as f64 / total as f64)
    }
}

/// Percentage of results whose prediction equals the gold label.
pub fn batch_accuracy(results: &[DetectionResult]) -> Result<f64, MetricsError> {
    if results.is_empty() {
        return Err(MetricsError::Empty("batch_accuracy"));
    }
    let correct = results.iter().filter(|r| r.is_correct()).count();
    Ok(100.0 * correct as f64 / results.len() as f64)
}

/// Number of token occurrences (not distinct types) found in the lexicon.
pub fn hate_count<S: AsRef<str>>(content_tokens: &[S], lexicon: &BTreeSet<String>) -> usize {
    content_tokens.iter().filter(|t| lexicon.contains(t.as_ref())).count()
}

/// Lexicon words present in a token list, as a set; the gold or predicted side
/// of [`span_metrics`].
pub fn lexicon_words<S: AsRef<str>>(tokens: &[S], lexicon: &BTreeSet<String>) -> HashSet<String> {
    tokens
        .iter()
        .map(AsRef::as_ref)
        .filter(|t| lexicon.contains(*t))
        .map(str::to_string)
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn set(words: &[&str]) -> HashSet<String> {
        words.iter().map(|s| s.to_string()).collect()
    }

    fn result(pred: u8, gold: u8) -> DetectionResult {
        DetectionResult {
            run_id: "r".into(),
            record_id: "x".into(),
            model_name: "m".into(),
            batch: 1,
            predicted_label: pred,
            gold_label: gold,
            parse_failed: false,
            raw_response: pred.to_string(),
            attempts: 1,
            latency_ms: 0,
            error: None,
        }
    }

    #[test]
    fn span_examples() {
        let m = span_metrics(&set(&["a", "b"]), &set(&["a", "b"]));
        assert_eq!(m, SpanMetrics::PERFECT);
        let m = span_metrics(&set(&["a"]), &set(&["b"]));
        assert_eq!((m.precision, m.recall, m.f1, m.iou), (0.0, 0.0, 0.0, 0.0));
        let m = span_metrics(&set(&["a", "b", "c"]), &set(&["b", "c", "d"]));
        assert!((m.precision - 2.0 / 3.0).abs() < 1e-15);
        assert!((m.recall - 2.0 / 3.0).abs() < 1e-15);
        assert!((m.f1 - 2.0 / 3.0).abs() < 1e-15);
        assert_eq!(m.iou, 0.5);
        assert_eq!(span_metrics::<String>(&HashSet::new(), &HashSet::new()), SpanMetrics::PERFECT);
        let m = span_metrics(&HashSet::new(), &set(&["a"]));
        assert_eq!((m.precision, m.recall, m.iou), (0.0, 0.0, 0.0));
    }

    #[test]
    fn accuracy_examples() {
        let all: Vec<_> = (0..25).map(|_| result(1, 1)).collect();
        assert_eq!(batch_accuracy(&all).unwrap(), 100.0);
        let mut v: Vec<_> = (0..23).map(|_| result(1, 1)).collect();
        v.extend((0..2).map(|_| result(0, 1)));
        assert_eq!(batch_accuracy(&v).unwrap(), 92.0);
        let mut v: Vec<_> = (0..13).map(|_| result(0, 0)).collect();
        v.extend((0..12).map(|_| result(1, 0)));
        assert_eq!(batch_accuracy(&v).unwrap(), 52.0);
        assert_eq!(batch_accuracy(&[]), Err(MetricsError::Empty("batch_accuracy")));
        let c = ConfusionCounts::from_results(&v);
        assert_eq!(c, ConfusionCounts { tp: 0, fp: 12, fn_: 0, tn: 13 });
        assert_eq!(c.accuracy(), Some(52.0));
    }

    #[test]
    fn hate_count_examples() {
        let lex: BTreeSet<String> = ["x".to_string()].into();
        assert_eq!(hate_count(&["x", "y", "x"], &lex), 2);
        assert_eq!(hate_count(&["x"], &BTreeSet::new()), 0);
    }

    #[test]
    fn mean_examples() {
        let a = SpanMetrics { precision: 0.2, recall: 0.5, f1: 0.3, iou: 0.1 };
        let b = SpanMetrics { precision: 0.4, ..a };
        assert_eq!(mean_metrics(&[a]).unwrap(), a);
        assert!((mean_metrics(&[a, b]).unwrap().precision - 0.3).abs() < 1e-15);
        assert!(mean_metrics(&[]).is_err());
    }

    proptest! {
        #[test]
        fn symmetry_and_bounds(a in prop::collection::hash_set(0u8..10, 0..8), b in prop::collection::hash_set(0u8..10, 0..8)) {
            let ab = span_metrics(&a, &b);
            let ba = span_metrics(&b, &a);
            prop_assert_eq!(ab.iou, ba.iou);
            prop_assert_eq!(ab.precision, ba.recall);
            prop_assert!(ab.iou <= ab.f1 + 1e-15);
            prop_assert!(ab.iou <= ab.precision.min(ab.recall) + 1e-15);
            prop_assert!((ab.f1 - 2.0 * ab.iou / (1.0 + ab.iou)).abs() < 1e-12);
        }

        #[test]
        fn adding_gold_word_never_lowers_recall(a in prop::collection::hash_set(0u8..10, 0..8), b in prop::collection::hash_set(0u8..10, 1..8)) {
            let before = span_metrics(&a, &b).recall;
            let mut more = a.clone();
            more.insert(*b.iter().next().unwrap());
            prop_assert!(span_metrics(&more, &b).recall >= before);
        }
    }
}
