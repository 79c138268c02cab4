//! Ten-label multi-label sentiment classification and per-source count matrices.
//!
//! Scoring is delegated to a [`SentimentBackend`]. [`LexiconBaseline`] scores
//! offline from seed words; [`HttpSentiment`] talks to an external classifier
//! service that returns ten scores per text.

use std::collections::HashMap;
use std::fmt;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use thiserror::Error;

use crate::preprocess::Preprocessor;

pub const LABEL_COUNT: usize = 10;

#[derive(Debug, Error, PartialEq)]
pub enum SentimentError {
    #[error("protocol error: {0}")]
    Protocol(String),
    #[error("classifier request failed: {0}")]
    Transport(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SentimentLabel {
    Optimistic,
    Thankful,
    Empathetic,
    Pessimistic,
    Anxious,
    Sad,
    Annoyed,
    Denial,
    OfficialReport,
    Joking,
}

impl SentimentLabel {
    /// Every label in canonical report order.
    pub const ALL: [SentimentLabel; LABEL_COUNT] = [
        SentimentLabel::Optimistic,
        SentimentLabel::Thankful,
        SentimentLabel::Empathetic,
        SentimentLabel::Pessimistic,
        SentimentLabel::Anxious,
        SentimentLabel::Sad,
        SentimentLabel::Annoyed,
        SentimentLabel::Denial,
        SentimentLabel::OfficialReport,
        SentimentLabel::Joking,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn as_str(self) -> &'static str {
        match self {
            SentimentLabel::Optimistic => "optimistic",
            SentimentLabel::Thankful => "thankful",
            SentimentLabel::Empathetic => "empathetic",
            SentimentLabel::Pessimistic => "pessimistic",
            SentimentLabel::Anxious => "anxious",
            SentimentLabel::Sad => "sad",
            SentimentLabel::Annoyed => "annoyed",
            SentimentLabel::Denial => "denial",
            SentimentLabel::OfficialReport => "official_report",
            SentimentLabel::Joking => "joking",
        }
    }
}

impl fmt::Display for SentimentLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Scores and thresholded activations for one text.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SentimentVector {
    pub record_id: String,
    pub scores: [f64; LABEL_COUNT],
    pub active: [bool; LABEL_COUNT],
}

impl SentimentVector {
    pub fn new(record_id: impl Into<String>, scores: &[f64], threshold: f64) -> Result<Self, SentimentError> {
        if scores.len() != LABEL_COUNT {
            return Err(SentimentError::Protocol(format!(
                "expected {LABEL_COUNT} scores, got {}",
                scores.len()
            )));
        }
        if let Some(bad) = scores.iter().find(|s| !(0.0..=1.0).contains(*s)) {
            return Err(SentimentError::Protocol(format!("score {bad} outside [0, 1]")));
        }
        let mut fixed = [0.0; LABEL_COUNT];
        fixed.copy_from_slice(scores);
        Ok(SentimentVector {
            record_id: record_id.into(),
            scores: fixed,
            active: fixed.map(|s| s >= threshold),
        })
    }

    pub fn active_labels(&self) -> impl Iterator<Item = SentimentLabel> + '_ {
        SentimentLabel::ALL.into_iter().filter(|l| self.active[l.index()])
    }
}

pub trait SentimentBackend: Send + Sync {
    /// One row of raw scores per text.
    fn score(&self, texts: &[&str]) -> Result<Vec<Vec<f64>>, SentimentError>;
}

const SEEDS: [(SentimentLabel, &[&str]); LABEL_COUNT] = [
    (
        SentimentLabel::Optimistic,
        &["hope", "hopefully", "optimistic", "better", "improve", "bright", "positive", "confident", "future", "peace", "forward"],
    ),
    (
        SentimentLabel::Thankful,
        &["thank", "thanks", "grateful", "appreciate", "gratitude", "bless", "blessed"],
    ),
    (
        SentimentLabel::Empathetic,
        &["sympathy", "condolence", "care", "support", "understand", "pray", "compassion", "kindness", "respect"],
    ),
    (
        SentimentLabel::Pessimistic,
        &["hopeless", "doomed", "worse", "worst", "ruin", "pointless", "failure", "never", "useless"],
    ),
    (
        SentimentLabel::Anxious,
        &["worry", "worried", "afraid", "fear", "scared", "anxious", "nervous", "panic", "threat", "danger"],
    ),
    (
        SentimentLabel::Sad,
        &["sad", "cry", "tear", "grief", "lonely", "depressed", "heartbroken", "tragic", "miss", "loss"],
    ),
    (
        SentimentLabel::Annoyed,
        &[
            "hate", "stupid", "idiot", "annoying", "sick", "disgusting", "angry", "shut", "damn", "ridiculous",
            "pathetic", "moron", "dumb", "fool", "trash", "scum", "filthy", "garbage", "loser", "freak",
        ],
    ),
    (
        SentimentLabel::Denial,
        &["hoax", "fake", "lie", "conspiracy", "nonsense", "myth", "exaggerated", "propaganda"],
    ),
    (
        SentimentLabel::OfficialReport,
        &["report", "official", "announce", "government", "minister", "statement", "according", "confirmed", "police"],
    ),
    (
        SentimentLabel::Joking,
        &["lol", "lmao", "haha", "joke", "funny", "hilarious", "meme", "rofl"],
    ),
];

/// Offline keyword scorer: each label's score is `h / (h + 0.5)` where `h`
/// is the number of the text's content lemmas found in that label's seed list.
/// One hit gives 2/3, so a single seed word activates a label at the default
/// threshold.
pub struct LexiconBaseline {
    preprocessor: Preprocessor,
    seeds: HashMap<String, Vec<usize>>,
}

impl LexiconBaseline {
    pub fn new(preprocessor: Preprocessor) -> Self {
        let mut seeds: HashMap<String, Vec<usize>> = HashMap::new();
        for (label, words) in SEEDS {
            for w in words {
                for lemma in preprocessor.content_tokens(w) {
                    let slot = seeds.entry(lemma).or_default();
                    if !slot.contains(&label.index()) {
                        slot.push(label.index());
                    }
                }
            }
        }
        LexiconBaseline { preprocessor, seeds }
    }

    pub fn scores(&self, text: &str) -> [f64; LABEL_COUNT] {
        let mut hits = [0usize; LABEL_COUNT];
        for token in self.preprocessor.content_tokens(text) {
            if let Some(labels) = self.seeds.get(&token) {
                for &l in labels {
                    hits[l] += 1;
                }
            }
        }
        hits.map(|h| h as f64 / (h as f64 + 0.5))
    }
}

impl Default for LexiconBaseline {
    fn default() -> Self {
        Self::new(Preprocessor::default())
    }
}

impl SentimentBackend for LexiconBaseline {
    fn score(&self, texts: &[&str]) -> Result<Vec<Vec<f64>>, SentimentError> {
        Ok(texts.iter().map(|t| self.scores(t).to_vec()).collect())
    }
}

/// Remote classifier: `POST {"texts": [...]}` returning `{"scores": [[...10 reals], ...]}`.
pub struct HttpSentiment {
    agent: ureq::Agent,
    url: String,
}

impl HttpSentiment {
    pub fn new(url: impl Into<String>, timeout: Duration) -> Self {
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .http_status_as_error(false)
            .timeout_global(Some(timeout))
            .build()
            .into();
        HttpSentiment { agent, url: url.into() }
    }
}

impl SentimentBackend for HttpSentiment {
    fn score(&self, texts: &[&str]) -> Result<Vec<Vec<f64>>, SentimentError> {
        let mut resp = self
            .agent
            .post(&self.url)
            .send_json(json!({ "texts": texts }))
            .map_err(|e| SentimentError::Transport(e.to_string()))?;
        let code = resp.status().as_u16();
        let body = resp
            .body_mut()
            .read_to_string()
            .map_err(|e| SentimentError::Transport(e.to_string()))?;
        if !(200..300).contains(&code) {
            return Err(SentimentError::Transport(format!("http {code}: {body}")));
        }
        let value: Value =
            serde_json::from_str(&body).map_err(|e| SentimentError::Protocol(format!("invalid json: {e}")))?;
        let rows = value
            .get("scores")
            .and_then(Value::as_array)
            .ok_or_else(|| SentimentError::Protocol("missing scores array".into()))?;
        rows.iter()
            .map(|row| {
                row.as_array()
                    .ok_or_else(|| SentimentError::Protocol("score row is not an array".into()))?
                    .iter()
                    .map(|x| x.as_f64().ok_or_else(|| SentimentError::Protocol("non-numeric score".into())))
                    .collect()
            })
            .collect()
    }
}

/// Scores `(record_id, text)` pairs and applies the activation threshold.
pub fn classify(
    items: &[(String, String)],
    backend: &dyn SentimentBackend,
    threshold: f64,
) -> Result<Vec<SentimentVector>, SentimentError> {
    if items.is_empty() {
        return Ok(Vec::new());
    }
    let texts: Vec<&str> = items.iter().map(|(_, t)| t.as_str()).collect();
    let rows = backend.score(&texts)?;
    if rows.len() != items.len() {
        return Err(SentimentError::Protocol(format!(
            "expected {} score rows, got {}",
            items.len(),
            rows.len()
        )));
    }
    items
        .iter()
        .zip(rows)
        .map(|((id, _), row)| SentimentVector::new(id.clone(), &row, threshold))
        .collect()
}

/// Label counts per source, rows in insertion order, columns in label order.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SentimentMatrix {
    pub sources: Vec<String>,
    pub counts: Vec<[usize; LABEL_COUNT]>,
}

impl SentimentMatrix {
    pub fn row(&self, source: &str) -> Option<&[usize; LABEL_COUNT]> {
        self.sources.iter().position(|s| s == source).map(|i| &self.counts[i])
    }

    /// The label with the highest count for `source` (first in label order on ties).
    pub fn top_label(&self, source: &str) -> Option<SentimentLabel> {
        let row = self.row(source)?;
        let mut best = 0;
        for k in 1..LABEL_COUNT {
            if row[k] > row[best] {
                best = k;
            }
        }
        Some(SentimentLabel::ALL[best])
    }
}

/// Counts how many records in each group have each label active.
pub fn aggregate_counts(groups: &[(String, Vec<SentimentVector>)]) -> SentimentMatrix {
    let mut m = SentimentMatrix::default();
    for (source, vectors) in groups {
        let mut row = [0usize; LABEL_COUNT];
        for v in vectors {
            for (k, &on) in v.active.iter().enumerate() {
                row[k] += on as usize;
            }
        }
        m.sources.push(source.clone());
        m.counts.push(row);
    }
    m
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    struct Fixed(Vec<Vec<f64>>);

    impl SentimentBackend for Fixed {
        fn score(&self, _texts: &[&str]) -> Result<Vec<Vec<f64>>, SentimentError> {
            Ok(self.0.clone())
        }
    }

    fn items(texts: &[&str]) -> Vec<(String, String)> {
        texts.iter().enumerate().map(|(i, t)| (format!("r{i}"), t.to_string())).collect()
    }

    #[test]
    fn label_order() {
        let names: Vec<&str> = SentimentLabel::ALL.iter().map(|l| l.as_str()).collect();
        assert_eq!(
            names,
            [
                "optimistic",
                "thankful",
                "empathetic",
                "pessimistic",
                "anxious",
                "sad",
                "annoyed",
                "denial",
                "official_report",
                "joking"
            ]
        );
    }

    #[test]
    fn baseline_examples() {
        let b = LexiconBaseline::default();
        let v = classify(&items(&[""]), &b, 0.5).unwrap();
        assert_eq!(v[0].scores, [0.0; LABEL_COUNT]);
        assert!(v[0].active_labels().next().is_none());
        let v = classify(&items(&["hopefully"]), &b, 0.5).unwrap();
        assert_eq!(v[0].active_labels().collect::<Vec<_>>(), vec![SentimentLabel::Optimistic]);
        let v = classify(&items(&["You stupid idiot, thanks for nothing"]), &b, 0.5).unwrap();
        assert!(v[0].active[SentimentLabel::Annoyed.index()]);
        assert!(v[0].scores[SentimentLabel::Annoyed.index()] > v[0].scores[SentimentLabel::Thankful.index()]);
    }

    #[test]
    fn passthrough_and_protocol_errors() {
        let row = vec![0.1, 0.9, 0.5, 0.0, 1.0, 0.2, 0.3, 0.4, 0.6, 0.7];
        let v = classify(&items(&["x"]), &Fixed(vec![row.clone()]), 0.5).unwrap();
        assert_eq!(v[0].scores.to_vec(), row);
        assert_eq!(
            v[0].active,
            [false, true, true, false, true, false, false, false, true, true]
        );
        let short = Fixed(vec![vec![0.5; 9]]);
        assert!(matches!(classify(&items(&["x"]), &short, 0.5), Err(SentimentError::Protocol(_))));
        let out = Fixed(vec![vec![1.5; 10]]);
        assert!(matches!(classify(&items(&["x"]), &out, 0.5), Err(SentimentError::Protocol(_))));
        let missing = Fixed(vec![]);
        assert!(matches!(classify(&items(&["x"]), &missing, 0.5), Err(SentimentError::Protocol(_))));
    }

    #[test]
    fn aggregation_examples() {
        let mut annoyed = [0.0; LABEL_COUNT];
        annoyed[SentimentLabel::Annoyed.index()] = 0.9;
        let v = |id: &str| SentimentVector::new(id, &annoyed, 0.5).unwrap();
        let m = aggregate_counts(&[("original".into(), vec![v("a"), v("b")]), ("empty".into(), vec![])]);
        let mut expected = [0; LABEL_COUNT];
        expected[SentimentLabel::Annoyed.index()] = 2;
        assert_eq!(m.row("original"), Some(&expected));
        assert_eq!(m.row("empty"), Some(&[0; LABEL_COUNT]));
        assert_eq!(m.top_label("original"), Some(SentimentLabel::Annoyed));
    }

    fn score_rows() -> impl Strategy<Value = Vec<Vec<f64>>> {
        prop::collection::vec(prop::collection::vec(0.0f64..=1.0, LABEL_COUNT), 0..12)
    }

    proptest! {
        #[test]
        fn conservation_and_threshold_monotonicity(rows in score_rows(), lo in 0.0f64..1.0, step in 0.0f64..0.5) {
            let build = |t: f64| -> Vec<SentimentVector> {
                rows.iter().enumerate().map(|(i, r)| SentimentVector::new(format!("r{i}"), r, t).unwrap()).collect()
            };
            let low = aggregate_counts(&[("g".into(), build(lo))]);
            let high = aggregate_counts(&[("g".into(), build(lo + step))]);
            let brute: usize = rows.iter().flatten().filter(|&&s| s >= lo).count();
            prop_assert_eq!(low.counts[0].iter().sum::<usize>(), brute);
            for k in 0..LABEL_COUNT {
                prop_assert!(high.counts[0][k] <= low.counts[0][k]);
                prop_assert!(low.counts[0][k] <= rows.len());
            }
        }
    }
}
