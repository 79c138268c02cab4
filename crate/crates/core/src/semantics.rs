//! Cosine similarity between embedding sets and 2-D projection export.

use std::collections::BTreeMap;

use rand_chacha::ChaCha8Rng;
use rand_core::{RngCore, SeedableRng};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::Batch;
use crate::provider::{EmbedItem, Provider, ProviderError};
use crate::report::{summarize, SummaryStat};

#[derive(Debug, Error)]
pub enum SemanticsError {
    #[error("cosine similarity is undefined for a zero vector")]
    ZeroVector,
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("embedding set {source_name:?} has id {id:?} twice")]
    DuplicateId { source_name: String, id: String },
    #[error("embedding set {source_name:?} has no vector for id {id:?}")]
    MissingId { source_name: String, id: String },
    #[error("projection needs at least 3 vectors, got {0}")]
    TooFewPoints(usize),
    #[error("embedding set {0:?} is empty")]
    EmptySet(String),
    #[error(transparent)]
    Provider(#[from] ProviderError),
}

/// Vectors for one source (original text or one model's output), keyed by record id.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingSet {
    source: String,
    dim: usize,
    vectors: BTreeMap<String, Vec<f64>>,
}

impl EmbeddingSet {
    pub fn new(source: impl Into<String>, entries: Vec<(String, Vec<f64>)>) -> Result<Self, SemanticsError> {
        let source = source.into();
        let dim = entries.first().map(|(_, v)| v.len()).ok_or_else(|| SemanticsError::EmptySet(source.clone()))?;
        if dim == 0 {
            return Err(SemanticsError::DimensionMismatch { expected: 1, found: 0 });
        }
        let mut vectors = BTreeMap::new();
        for (id, v) in entries {
            if v.len() != dim {
                return Err(SemanticsError::DimensionMismatch {
                    expected: dim,
                    found: v.len(),
                });
            }
            if vectors.insert(id.clone(), v).is_some() {
                return Err(SemanticsError::DuplicateId { source_name: source, id });
            }
        }
        Ok(EmbeddingSet { source, dim, vectors })
    }

    pub fn source(&self) -> &str {
        &self.source
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.vectors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.is_empty()
    }

    pub fn get(&self, id: &str) -> Option<&[f64]> {
        self.vectors.get(id).map(Vec::as_slice)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &[f64])> {
        self.vectors.iter().map(|(k, v)| (k.as_str(), v.as_slice()))
    }

    fn require(&self, id: &str) -> Result<&[f64], SemanticsError> {
        self.get(id).ok_or_else(|| SemanticsError::MissingId {
            source_name: self.source.clone(),
            id: id.to_string(),
        })
    }
}

/// Embeds `items` through `provider` in chunks and collects them as one set.
pub fn embed_texts(
    provider: &Provider,
    source: &str,
    items: &[EmbedItem],
    chunk: usize,
) -> Result<EmbeddingSet, SemanticsError> {
    let mut entries = Vec::with_capacity(items.len());
    for part in items.chunks(chunk.max(1)) {
        let vectors = provider.send_embed(part)?;
        entries.extend(part.iter().map(|i| i.id.clone()).zip(vectors));
    }
    EmbeddingSet::new(source, entries)
}

fn dot(u: &[f64], v: &[f64]) -> f64 {
    u.iter().zip(v).map(|(a, b)| a * b).sum()
}

fn norm(u: &[f64]) -> f64 {
    dot(u, u).sqrt()
}

/// `u·v / (|u| |v|)`, clamped to [-1, 1].
pub fn cosine(u: &[f64], v: &[f64]) -> Result<f64, SemanticsError> {
    if u.len() != v.len() {
        return Err(SemanticsError::DimensionMismatch {
            expected: u.len(),
            found: v.len(),
        });
    }
    let (nu2, nv2) = (dot(u, u), dot(v, v));
    if nu2 == 0.0 || nv2 == 0.0 {
        return Err(SemanticsError::ZeroVector);
    }
    // sqrt of the product keeps cosine(u, u) exactly 1.0
    Ok((dot(u, v) / (nu2 * nv2).sqrt()).clamp(-1.0, 1.0))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BatchSimilarity {
    pub batch: usize,
    pub mean: f64,
    pub std: f64,
    pub n: usize,
}

/// Per-batch and overall cosine statistics for one pair of sources.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimilarityTable {
    pub pair: (String, String),
    pub per_batch: Vec<BatchSimilarity>,
    pub overall: SummaryStat,
}

impl SimilarityTable {
    /// Combines per-batch summaries into the overall row: the size-weighted
    /// mean of batch means and the pooled population std over all records.
    pub fn from_batches(pair: (String, String), per_batch: Vec<BatchSimilarity>) -> Option<Self> {
        let total: usize = per_batch.iter().map(|b| b.n).sum();
        if total == 0 {
            return None;
        }
        let n = total as f64;
        let mean = per_batch.iter().map(|b| b.mean * b.n as f64).sum::<f64>() / n;
        let var = per_batch
            .iter()
            .map(|b| b.n as f64 * (b.std * b.std + (b.mean - mean).powi(2)))
            .sum::<f64>()
            / n;
        Some(SimilarityTable {
            pair,
            per_batch,
            overall: SummaryStat {
                mean,
                std: var.max(0.0).sqrt(),
                n: total,
            },
        })
    }

    pub fn label(&self) -> String {
        format!("{} vs {}", self.pair.0, self.pair.1)
    }
}

/// Cosine statistics for every unordered pair of sets over the records of
/// `batches`. Empty batches produce no row.
pub fn pairwise_stats(sets: &[EmbeddingSet], batches: &[Batch]) -> Result<Vec<SimilarityTable>, SemanticsError> {
    let mut tables = Vec::new();
    for (i, a) in sets.iter().enumerate() {
        for b in &sets[i + 1..] {
            tables.push(pair_stats(a, b, batches)?);
        }
    }
    Ok(tables)
}

/// Cosine statistics between two sets.
pub fn pair_stats(a: &EmbeddingSet, b: &EmbeddingSet, batches: &[Batch]) -> Result<SimilarityTable, SemanticsError> {
    let pair = (a.source.clone(), b.source.clone());
    let mut per_batch = Vec::new();
    let mut all = Vec::new();
    for batch in batches {
        let mut sims = Vec::with_capacity(batch.len());
        for id in batch.ids() {
            sims.push(cosine(a.require(id)?, b.require(id)?)?);
        }
        if let Ok(s) = summarize(&sims) {
            per_batch.push(BatchSimilarity {
                batch: batch.index,
                mean: s.mean,
                std: s.std,
                n: s.n,
            });
        }
        all.extend(sims);
    }
    let overall = summarize(&all).unwrap_or(SummaryStat {
        mean: 0.0,
        std: 0.0,
        n: 0,
    });
    Ok(SimilarityTable {
        pair,
        per_batch,
        overall,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProjectedPoint {
    pub record_id: String,
    pub source: String,
    pub x: f64,
    pub y: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Projection {
    pub method: String,
    /// The two principal directions, unit length.
    pub axes: [Vec<f64>; 2],
    /// Variance of the projected coordinates along each axis.
    pub variance: [f64; 2],
    pub points: Vec<ProjectedPoint>,
}

fn orthonormalize(cols: &mut [Vec<f64>]) {
    let mut ok = Vec::with_capacity(cols.len());
    for k in 0..cols.len() {
        let scale = norm(&cols[k]).max(f64::MIN_POSITIVE);
        for j in 0..k {
            if ok[j] {
                let (before, rest) = cols.split_at_mut(k);
                let p = dot(&before[j], &rest[0]);
                rest[0].iter_mut().zip(&before[j]).for_each(|(x, q)| *x -= p * q);
            }
        }
        let n = norm(&cols[k]);
        let good = n > 1e-10 * scale && n > 1e-300;
        if good {
            cols[k].iter_mut().for_each(|x| *x /= n);
        } else {
            cols[k].iter_mut().for_each(|x| *x = 0.0);
        }
        ok.push(good);
    }
}

fn fix_sign(v: &mut [f64]) {
    if let Some(first) = v.iter().find(|x| x.abs() > 1e-12) {
        if *first < 0.0 {
            v.iter_mut().for_each(|x| *x = -*x);
        }
    }
}

/// Projects every vector of every set onto the top two principal directions
/// of the pooled, mean-centred data.
///
/// Directions come from block power iteration on the covariance followed by
/// a 2×2 Rayleigh-Ritz step, started from a fixed-seed random block, so the
/// output is deterministic. Each axis is signed so its first clearly nonzero
/// coordinate is positive. Points are ordered by set, then record id.
pub fn pca_project(sets: &[EmbeddingSet]) -> Result<Projection, SemanticsError> {
    let total: usize = sets.iter().map(EmbeddingSet::len).sum();
    if total < 3 {
        return Err(SemanticsError::TooFewPoints(total));
    }
    let dim = sets[0].dim;
    if let Some(s) = sets.iter().find(|s| s.dim != dim) {
        return Err(SemanticsError::DimensionMismatch {
            expected: dim,
            found: s.dim,
        });
    }
    let mut tags = Vec::with_capacity(total);
    let mut rows: Vec<Vec<f64>> = Vec::with_capacity(total);
    for s in sets {
        for (id, v) in s.iter() {
            tags.push((id.to_string(), s.source.clone()));
            rows.push(v.to_vec());
        }
    }
    let n = total as f64;
    let mut mean = vec![0.0; dim];
    for r in &rows {
        mean.iter_mut().zip(r).for_each(|(m, x)| *m += x / n);
    }
    for r in &mut rows {
        r.iter_mut().zip(&mean).for_each(|(x, m)| *x -= m);
    }
    let cov_mul = |v: &[f64]| -> Vec<f64> {
        let mut out = vec![0.0; dim];
        for r in &rows {
            let s = dot(r, v) / n;
            out.iter_mut().zip(r).for_each(|(o, x)| *o += s * x);
        }
        out
    };

    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed);
    let mut q: Vec<Vec<f64>> = (0..2)
        .map(|_| {
            (0..dim)
                .map(|_| (rng.next_u64() >> 11) as f64 / (1u64 << 53) as f64 * 2.0 - 1.0)
                .collect()
        })
        .collect();
    orthonormalize(&mut q);
    for _ in 0..2000 {
        let mut next: Vec<Vec<f64>> = q.iter().map(|c| cov_mul(c)).collect();
        orthonormalize(&mut next);
        let mut change: f64 = 0.0;
        for c in &next {
            let mut resid = c.clone();
            for old in &q {
                let p = dot(old, c);
                resid.iter_mut().zip(old).for_each(|(x, o)| *x -= p * o);
            }
            change = change.max(norm(&resid));
        }
        q = next;
        if change < 1e-13 {
            break;
        }
    }

    // Rayleigh-Ritz on span(q): diagonalise the 2x2 projected covariance.
    let cq: Vec<Vec<f64>> = q.iter().map(|c| cov_mul(c)).collect();
    let a = dot(&q[0], &cq[0]);
    let c = dot(&q[1], &cq[1]);
    let b = dot(&q[0], &cq[1]);
    let half = (a - c) / 2.0;
    let root = (half * half + b * b).sqrt();
    let l1 = (a + c) / 2.0 + root;
    let (e1, e2) = if b.abs() > 1e-300 {
        let (x, y) = (l1 - c, b);
        let r = (x * x + y * y).sqrt();
        ((x / r, y / r), (-y / r, x / r))
    } else if a >= c {
        ((1.0, 0.0), (0.0, 1.0))
    } else {
        ((0.0, 1.0), (1.0, 0.0))
    };
    let combine = |(s, t): (f64, f64)| -> Vec<f64> { q[0].iter().zip(&q[1]).map(|(x, y)| s * x + t * y).collect() };
    let mut axes = [combine(e1), combine(e2)];
    for axis in axes.iter_mut() {
        if norm(axis) < 0.5 {
            axis.iter_mut().for_each(|x| *x = 0.0);
        }
        fix_sign(axis);
    }

    let points = tags
        .into_iter()
        .zip(&rows)
        .map(|((record_id, source), r)| ProjectedPoint {
            record_id,
            source,
            x: dot(r, &axes[0]),
            y: dot(r, &axes[1]),
        })
        .collect::<Vec<_>>();
    let variance = [
        points.iter().map(|p| p.x * p.x).sum::<f64>() / n,
        points.iter().map(|p| p.y * p.y).sum::<f64>() / n,
    ];
    Ok(Projection {
        method: "pca".to_string(),
        axes,
        variance,
        points,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::TextRecord;
    use proptest::prelude::*;

    fn set(source: &str, vs: &[(&str, &[f64])]) -> EmbeddingSet {
        EmbeddingSet::new(source, vs.iter().map(|(id, v)| (id.to_string(), v.to_vec())).collect()).unwrap()
    }

    fn batch(index: usize, ids: &[&str]) -> Batch {
        Batch {
            index,
            records: ids.iter().map(|id| TextRecord::new(*id, "x")).collect(),
        }
    }

    #[test]
    fn cosine_examples() {
        assert!((cosine(&[1.0, 2.0], &[1.0, 2.0]).unwrap() - 1.0).abs() < 1e-15);
        assert_eq!(cosine(&[1.0, 0.0], &[0.0, 1.0]).unwrap(), 0.0);
        assert!((cosine(&[1.0, 2.0, 2.0], &[2.0, 1.0, 2.0]).unwrap() - 8.0 / 9.0).abs() < 1e-15);
        assert!(matches!(cosine(&[0.0, 0.0], &[1.0, 0.0]), Err(SemanticsError::ZeroVector)));
    }

    #[test]
    fn set_validation() {
        let dup = EmbeddingSet::new("s", vec![("a".into(), vec![1.0]), ("a".into(), vec![2.0])]);
        assert!(matches!(dup, Err(SemanticsError::DuplicateId { .. })));
        let dims = EmbeddingSet::new("s", vec![("a".into(), vec![1.0]), ("b".into(), vec![2.0, 1.0])]);
        assert!(matches!(dims, Err(SemanticsError::DimensionMismatch { .. })));
    }

    #[test]
    fn self_comparison_is_all_ones() {
        let s = set("a", &[("x", &[1.0, 2.0]), ("y", &[3.0, -1.0]), ("z", &[0.5, 0.5])]);
        let t = pair_stats(&s, &s, &[batch(1, &["x", "y"]), batch(2, &["z"])]).unwrap();
        assert!(t.per_batch.iter().all(|b| b.mean == 1.0 && b.std == 0.0));
        assert_eq!((t.overall.mean, t.overall.std), (1.0, 0.0));
    }

    #[test]
    fn two_record_batch() {
        let a = set("a", &[("x", &[1.0, 0.0]), ("y", &[1.0, 2.0, ][..])]);
        let b = set("b", &[("x", &[1.0, 1.0]), ("y", &[2.0, 1.0])]);
        let t = pair_stats(&a, &b, &[batch(7, &["x", "y"])]).unwrap();
        let c1 = 1.0 / 2f64.sqrt();
        let c2 = 4.0 / 5.0;
        assert!((t.per_batch[0].mean - (c1 + c2) / 2.0).abs() < 1e-15);
        assert!((t.per_batch[0].std - (c1 - c2).abs() / 2.0).abs() < 1e-15);
        assert_eq!(t.per_batch[0].batch, 7);
    }

    #[test]
    fn missing_id_names_set_and_id() {
        let a = set("orig", &[("x", &[1.0])]);
        let b = set("groq", &[("y", &[1.0])]);
        let err = pair_stats(&a, &b, &[batch(1, &["x"])]).unwrap_err().to_string();
        assert!(err.contains("groq") && err.contains("\"x\""), "{err}");
    }

    #[test]
    fn pooled_overall_matches_direct() {
        let a = set("a", &[("p", &[1.0, 0.2]), ("q", &[0.3, 1.0]), ("r", &[1.0, 1.0]), ("s", &[-1.0, 0.4])]);
        let b = set("b", &[("p", &[0.9, 0.1]), ("q", &[1.0, 0.0]), ("r", &[0.0, 1.0]), ("s", &[0.5, 0.5])]);
        let t = pair_stats(&a, &b, &[batch(1, &["p", "q", "r"]), batch(2, &["s"])]).unwrap();
        let rebuilt = SimilarityTable::from_batches(t.pair.clone(), t.per_batch.clone()).unwrap();
        assert!((rebuilt.overall.mean - t.overall.mean).abs() < 1e-12);
        assert!((rebuilt.overall.std - t.overall.std).abs() < 1e-12);
    }

    #[test]
    fn projection_errors_and_degenerate() {
        let two = set("a", &[("x", &[1.0, 0.0]), ("y", &[0.0, 1.0])]);
        assert!(matches!(pca_project(&[two]), Err(SemanticsError::TooFewPoints(2))));
        let same = set("a", &[("x", &[1.0, 2.0, 3.0]), ("y", &[1.0, 2.0, 3.0]), ("z", &[1.0, 2.0, 3.0])]);
        let p = pca_project(&[same]).unwrap();
        assert!(p.points.iter().all(|pt| pt.x == 0.0 && pt.y == 0.0));
    }

    #[test]
    fn collinear_points_use_one_axis() {
        let s = set("a", &[("x", &[0.0, 0.0]), ("y", &[1.0, 1.0]), ("z", &[3.0, 3.0])]);
        let p = pca_project(&[s]).unwrap();
        assert!(p.points.iter().all(|pt| pt.y.abs() < 1e-9));
        let d = (p.points[2].x - p.points[0].x).abs();
        assert!((d - 18f64.sqrt()).abs() < 1e-9);
        assert!(p.axes[0][0] > 0.0);
    }

    fn points() -> impl Strategy<Value = Vec<Vec<f64>>> {
        prop::collection::vec(prop::collection::vec(-5.0f64..5.0, 4), 3..12)
    }

    proptest! {
        #[test]
        fn cosine_symmetric_and_scale_invariant(u in prop::collection::vec(-3.0f64..3.0, 5), v in prop::collection::vec(-3.0f64..3.0, 5), c in 0.01f64..100.0) {
            prop_assume!(norm(&u) > 1e-6 && norm(&v) > 1e-6);
            let uv = cosine(&u, &v).unwrap();
            prop_assert_eq!(uv, cosine(&v, &u).unwrap());
            let scaled: Vec<f64> = u.iter().map(|x| x * c).collect();
            prop_assert!((cosine(&scaled, &v).unwrap() - uv).abs() < 1e-12);
        }

        #[test]
        fn axis_one_carries_more_variance(pts in points()) {
            let s = EmbeddingSet::new("s", pts.iter().enumerate().map(|(i, v)| (format!("{i:02}"), v.clone())).collect()).unwrap();
            let p = pca_project(&[s]).unwrap();
            prop_assert!(p.variance[0] + 1e-9 >= p.variance[1]);
        }
    }
}
