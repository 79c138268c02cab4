//! Batch evaluation harness for rewriting abusive short texts with LLM
//! providers and measuring what the rewrite did.
//!
//! The crate is organised by pipeline stage:
//!
//! - [`corpus`]: load, validate, sample and batch labelled datasets.
//! - [`preprocess`]: deterministic cleaning, tokenisation, stopwords, lemmas.
//! - [`provider`]: chat/embedding clients with retry, rate limiting and mocks.
//! - [`pipeline`]: detection and transformation runs with a resumable run log.
//! - [`metrics`]: accuracy, span P/R/F1/IoU, lexicon hate counts.
//! - [`textstats`]: n-gram tables and log-odds with Dirichlet priors.
//! - [`sentiment`]: 10-label multi-label classification and count matrices.
//! - [`semantics`]: cosine similarity tables and PCA projection export.
//! - [`report`]: summary statistics and CSV/JSON/Markdown/plot-data emission.
//!
//! Everything runs offline against the mock backends in [`provider`].

pub mod corpus;
pub mod metrics;
pub mod pipeline;
pub mod preprocess;
pub mod provider;
pub mod report;
pub mod semantics;
pub mod sentiment;
pub mod textstats;

pub use corpus::{Batch, Category, Dataset, Platform, TextRecord};
pub use metrics::{ConfusionCounts, SpanMetrics};
pub use pipeline::{DetectionResult, OutcomeClass, PromptTemplate, TransformOutcome};
pub use preprocess::{CleanText, Preprocessor};
pub use provider::{Provider, ProviderConfig, ProviderResponse, RetryPolicy, SafetyThreshold};
pub use report::{RunReport, SummaryStat};
pub use semantics::{EmbeddingSet, SimilarityTable};
pub use sentiment::{SentimentLabel, SentimentVector};
pub use textstats::{LogOddsScore, NgramTable, PriorCounts};
