//! N-gram frequency tables and log-odds ratios with Dirichlet priors.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum TextStatsError {
    #[error("n-gram order must be 2 or 3, got {0}")]
    BadOrder(usize),
    #[error("top_k must be positive")]
    ZeroTopK,
    #[error("pseudo-count for {term:?} must be positive, got {alpha}")]
    BadAlpha { term: String, alpha: f64 },
    #[error("no prior pseudo-count for term {0:?}")]
    MissingAlpha(String),
    #[error("{side} total {total} does not match the sum of its counts ({sum})")]
    TotalMismatch { side: &'static str, total: usize, sum: usize },
    #[error("{0} corpus is empty")]
    EmptyCorpus(&'static str),
    #[error("log-odds undefined for {0:?}: prior leaves no mass outside the term")]
    Degenerate(String),
}

/// Ranked n-gram counts.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NgramTable {
    pub n: usize,
    /// Sorted by count descending, then token tuple ascending.
    pub entries: Vec<(Vec<String>, usize)>,
    /// Number of windows over all documents, before truncation to top_k.
    pub total: usize,
}

impl NgramTable {
    pub fn top(&self) -> Option<&(Vec<String>, usize)> {
        self.entries.first()
    }
}

/// Counts sliding-window n-grams within each document and keeps the `top_k`
/// most frequent.
pub fn ngram_counts<S: AsRef<str>>(docs: &[Vec<S>], n: usize, top_k: usize) -> Result<NgramTable, TextStatsError> {
    if n != 2 && n != 3 {
        return Err(TextStatsError::BadOrder(n));
    }
    if top_k == 0 {
        return Err(TextStatsError::ZeroTopK);
    }
    let mut counts: BTreeMap<Vec<&str>, usize> = BTreeMap::new();
    let mut total = 0;
    for doc in docs {
        let tokens: Vec<&str> = doc.iter().map(AsRef::as_ref).collect();
        for w in tokens.windows(n) {
            *counts.entry(w.to_vec()).or_default() += 1;
            total += 1;
        }
    }
    let mut entries: Vec<(Vec<String>, usize)> = counts
        .into_iter()
        .map(|(k, c)| (k.into_iter().map(str::to_string).collect(), c))
        .collect();
    entries.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    entries.truncate(top_k);
    Ok(NgramTable { n, entries, total })
}

/// Term frequencies and total token count of a tokenised corpus.
pub fn term_counts<S: AsRef<str>>(docs: &[Vec<S>]) -> (BTreeMap<String, usize>, usize) {
    let mut counts = BTreeMap::new();
    let mut total = 0;
    for t in docs.iter().flatten() {
        *counts.entry(t.as_ref().to_string()).or_default() += 1;
        total += 1;
    }
    (counts, total)
}

/// Dirichlet pseudo-counts per term.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PriorCounts {
    alpha: BTreeMap<String, f64>,
    alpha0: f64,
}

impl PriorCounts {
    pub fn new(alpha: BTreeMap<String, f64>) -> Result<Self, TextStatsError> {
        for (term, &a) in &alpha {
            if !(a > 0.0 && a.is_finite()) {
                return Err(TextStatsError::BadAlpha {
                    term: term.clone(),
                    alpha: a,
                });
            }
        }
        let alpha0 = alpha.values().sum();
        Ok(PriorCounts { alpha, alpha0 })
    }

    /// The same pseudo-count for every term.
    pub fn uniform<I, S>(terms: I, alpha: f64) -> Result<Self, TextStatsError>
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        Self::new(terms.into_iter().map(|t| (t.into(), alpha)).collect())
    }

    /// Pseudo-counts proportional to each term's frequency in the pooled
    /// corpora, scaled to sum to `alpha0`.
    pub fn informative(corpora: &[&BTreeMap<String, usize>], alpha0: f64) -> Result<Self, TextStatsError> {
        let mut pooled: BTreeMap<String, usize> = BTreeMap::new();
        for c in corpora {
            for (t, &n) in c.iter() {
                *pooled.entry(t.clone()).or_default() += n;
            }
        }
        let total: usize = pooled.values().sum();
        if total == 0 {
            return Err(TextStatsError::EmptyCorpus("prior"));
        }
        Self::new(
            pooled
                .into_iter()
                .filter(|(_, n)| *n > 0)
                .map(|(t, n)| (t, alpha0 * n as f64 / total as f64))
                .collect(),
        )
    }

    pub fn alpha(&self, term: &str) -> Option<f64> {
        self.alpha.get(term).copied()
    }

    pub fn alpha0(&self) -> f64 {
        self.alpha0
    }

    pub fn len(&self) -> usize {
        self.alpha.len()
    }

    pub fn is_empty(&self) -> bool {
        self.alpha.is_empty()
    }

    /// Every pseudo-count multiplied by `factor`.
    pub fn scaled(&self, factor: f64) -> Result<Self, TextStatsError> {
        Self::new(self.alpha.iter().map(|(t, a)| (t.clone(), a * factor)).collect())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogOddsScore {
    pub term: String,
    pub delta: f64,
    pub variance: f64,
    pub z: f64,
}

fn check_total(side: &'static str, counts: &BTreeMap<String, usize>, total: usize) -> Result<(), TextStatsError> {
    let sum: usize = counts.values().sum();
    if sum != total {
        return Err(TextStatsError::TotalMismatch { side, total, sum });
    }
    Ok(())
}

/// Log-odds ratio of every term between corpus i and corpus j, smoothed by
/// the prior, with its approximate variance and z-score. Sorted by z
/// descending (ties by term).
pub fn log_odds_dirichlet(
    counts_i: &BTreeMap<String, usize>,
    n_i: usize,
    counts_j: &BTreeMap<String, usize>,
    n_j: usize,
    prior: &PriorCounts,
) -> Result<Vec<LogOddsScore>, TextStatsError> {
    check_total("first", counts_i, n_i)?;
    check_total("second", counts_j, n_j)?;
    let terms: BTreeSet<&String> = counts_i.keys().chain(counts_j.keys()).collect();
    let a0 = prior.alpha0();
    let mut scores = Vec::with_capacity(terms.len());
    for term in terms {
        let a = prior.alpha(term).ok_or_else(|| TextStatsError::MissingAlpha(term.clone()))?;
        let y_i = counts_i.get(term).copied().unwrap_or(0) as f64;
        let y_j = counts_j.get(term).copied().unwrap_or(0) as f64;
        let rest_i = n_i as f64 + a0 - y_i - a;
        let rest_j = n_j as f64 + a0 - y_j - a;
        if rest_i <= 0.0 || rest_j <= 0.0 {
            return Err(TextStatsError::Degenerate(term.clone()));
        }
        let delta = ((y_i + a) / rest_i).ln() - ((y_j + a) / rest_j).ln();
        let variance = 1.0 / (y_i + a) + 1.0 / (y_j + a);
        scores.push(LogOddsScore {
            term: term.clone(),
            delta,
            variance,
            z: delta / variance.sqrt(),
        });
    }
    scores.sort_by(|a, b| b.z.total_cmp(&a.z).then_with(|| a.term.cmp(&b.term)));
    Ok(scores)
}

/// Scores every term of either corpus, abusive over benign, ranked by z.
pub fn rank_lexicon<S: AsRef<str>>(
    abusive: &[Vec<S>],
    benign: &[Vec<S>],
    prior: &PriorCounts,
) -> Result<Vec<LogOddsScore>, TextStatsError> {
    let (ci, ni) = term_counts(abusive);
    let (cj, nj) = term_counts(benign);
    if ni == 0 {
        return Err(TextStatsError::EmptyCorpus("abusive"));
    }
    if nj == 0 {
        return Err(TextStatsError::EmptyCorpus("benign"));
    }
    log_odds_dirichlet(&ci, ni, &cj, nj, prior)
}

/// Words that distinguish the abusive corpus from the benign one at or above
/// `z_threshold`.
pub fn build_lexicon<S: AsRef<str>>(
    abusive: &[Vec<S>],
    benign: &[Vec<S>],
    prior: &PriorCounts,
    z_threshold: f64,
) -> Result<BTreeSet<String>, TextStatsError> {
    Ok(rank_lexicon(abusive, benign, prior)?
        .into_iter()
        .filter(|s| s.z >= z_threshold)
        .map(|s| s.term)
        .collect())
}

/// Masks all but the first and last character: "idiot" → "i***t".
pub fn censor(word: &str) -> String {
    let chars: Vec<char> = word.chars().collect();
    match chars.len() {
        0..=2 => "*".repeat(chars.len()),
        n => {
            let mut s = String::with_capacity(word.len());
            s.push(chars[0]);
            s.extend(std::iter::repeat_n('*', n - 2));
            s.push(chars[n - 1]);
            s
        }
    }
}

/// One lowercase word per line, sorted.
pub fn format_lexicon(words: &BTreeSet<String>) -> String {
    words.iter().map(|w| format!("{w}\n")).collect()
}

pub fn parse_lexicon(contents: &str) -> BTreeSet<String> {
    contents
        .lines()
        .map(|l| l.trim().to_lowercase())
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
        .collect()
}
