//! Detection and transformation runs.
//!
//! Records are sent batch by batch to every provider. Within a batch the
//! (provider, record) jobs are spread over a bounded worker pool; results are
//! appended to a JSONL [`RunLog`] in a fixed order once the batch finishes, so
//! the log is byte-stable regardless of worker scheduling. Reopening a log and
//! rerunning skips every key already persisted.

use std::collections::{BTreeMap, HashMap};
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{Batch, TextRecord};
use crate::provider::{Provider, ProviderResponse, ResponseStatus};

pub const TRANSFORM_PROMPT: &str = "Transform the abusive tweet into a non-abusive one, i.e., into a more polite and respectful tweet while maintaining the overall meaning and context as much as possible. Only return the transformed tweet. Do not write anything apart from the transformed tweet. Below is the tweet:";

pub const DETECT_PROMPT: &str = "Classify the following tweet as abusive (1) or non-abusive (0). Reply with only the single digit. Below is the tweet:";

pub const DEFAULT_REFUSAL_PATTERNS: [&str; 9] = [
    "i cannot",
    "i can't",
    "i'm sorry",
    "i am sorry",
    "as an ai",
    "i'm unable",
    "cannot assist",
    "content policy",
    "cannot comply",
];

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("prompt template is empty")]
    EmptyTemplate,
    #[error("no providers configured")]
    NoProviders,
    #[error("provider name {0:?} is used twice")]
    DuplicateProvider(String),
    #[error("record {0} has no gold label")]
    MissingLabel(String),
    #[error("record {0} is not labelled abusive but the run is abusive-only")]
    NotAbusive(String),
    #[error("run log {path}: {message}")]
    Log { path: PathBuf, message: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PromptKind {
    Transform,
    Detect,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptTemplate {
    kind: PromptKind,
    text: String,
}

impl PromptTemplate {
    pub fn new(kind: PromptKind, text: impl Into<String>) -> Result<Self, PipelineError> {
        let text = text.into();
        if text.trim().is_empty() {
            return Err(PipelineError::EmptyTemplate);
        }
        Ok(PromptTemplate { kind, text })
    }

    pub fn transform() -> Self {
        PromptTemplate {
            kind: PromptKind::Transform,
            text: TRANSFORM_PROMPT.to_string(),
        }
    }

    pub fn detect() -> Self {
        PromptTemplate {
            kind: PromptKind::Detect,
            text: DETECT_PROMPT.to_string(),
        }
    }

    pub fn kind(&self) -> PromptKind {
        self.kind
    }

    pub fn text(&self) -> &str {
        &self.text
    }
}

/// Template text, a newline, then the input text.
pub fn build_prompt(template: &PromptTemplate, text: &str) -> String {
    format!("{}\n{}", template.text, text)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OutcomeClass {
    Success,
    Refusal,
    Error,
}

/// Case-insensitive substrings marking a response as a refusal.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RefusalPatterns {
    patterns: Vec<String>,
}

impl Default for RefusalPatterns {
    fn default() -> Self {
        RefusalPatterns {
            patterns: DEFAULT_REFUSAL_PATTERNS.iter().map(|s| s.to_string()).collect(),
        }
    }
}

impl RefusalPatterns {
    pub fn new(patterns: impl IntoIterator<Item = String>) -> Self {
        RefusalPatterns {
            patterns: patterns.into_iter().map(|p| normalize(&p)).collect(),
        }
    }

    pub fn extend(&mut self, extra: impl IntoIterator<Item = String>) {
        self.patterns.extend(extra.into_iter().map(|p| normalize(&p)));
    }

    pub fn patterns(&self) -> &[String] {
        &self.patterns
    }

    pub fn classify(&self, raw_response: &str) -> OutcomeClass {
        if raw_response.trim().is_empty() {
            return OutcomeClass::Error;
        }
        let text = normalize(raw_response);
        if self.patterns.iter().any(|p| text.contains(p.as_str())) {
            OutcomeClass::Refusal
        } else {
            OutcomeClass::Success
        }
    }
}

fn normalize(s: &str) -> String {
    s.to_lowercase().replace(['\u{2019}', '\u{2018}'], "'")
}

/// Classifies with the default refusal patterns.
pub fn classify_outcome(raw_response: &str) -> OutcomeClass {
    RefusalPatterns::default().classify(raw_response)
}

/// Reads a predicted label from a detection response. The earliest of
/// "non-abusive" (0), "abusive" (1) or a standalone digit 0/1 wins;
/// anything else yields `(0, true)`.
pub fn parse_detection(raw_response: &str) -> (u8, bool) {
    let lower = raw_response.to_lowercase();
    let mut best: Option<(usize, u8)> = None;
    let mut consider = |pos: Option<usize>, label: u8| {
        if let Some(p) = pos {
            if best.is_none_or(|(b, _)| p < b) {
                best = Some((p, label));
            }
        }
    };
    let non = lower.find("non-abusive").or_else(|| lower.find("non abusive"));
    consider(non, 0);
    let abusive = lower.match_indices("abusive").map(|(i, _)| i).find(|&i| {
        let before = &lower[..i];
        !(before.ends_with("non-") || before.ends_with("non "))
    });
    consider(abusive, 1);
    let bytes = lower.as_bytes();
    let digit = bytes.iter().enumerate().find(|&(i, &b)| {
        (b == b'0' || b == b'1')
            && (i == 0 || !bytes[i - 1].is_ascii_digit())
            && bytes.get(i + 1).is_none_or(|n| !n.is_ascii_digit())
    });
    if let Some((i, &b)) = digit {
        consider(Some(i), b - b'0');
    }
    match best {
        Some((_, label)) => (label, false),
        None => (0, true),
    }
}

/// Result of transforming one record with one model.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TransformOutcome {
    pub run_id: String,
    pub record_id: String,
    pub model_name: String,
    pub batch: usize,
    pub raw_response: String,
    pub classification: OutcomeClass,
    pub attempts: u32,
    pub latency_ms: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

/// Result of asking one model whether one record is abusive.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DetectionResult {
    pub run_id: String,
    pub record_id: String,
    pub model_name: String,
    pub batch: usize,
    pub predicted_label: u8,
    pub gold_label: u8,
    pub parse_failed: bool,
    pub raw_response: String,
    pub attempts: u32,
    pub latency_ms: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

impl DetectionResult {
    pub fn is_correct(&self) -> bool {
        self.predicted_label == self.gold_label
    }
}

/// Entries persisted in a [`RunLog`].
pub trait LogRecord: Serialize + DeserializeOwned + Clone {
    fn key(&self) -> LogKey;
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct LogKey {
    pub run_id: String,
    pub record_id: String,
    pub model_name: String,
}

impl LogKey {
    pub fn new(run_id: &str, record_id: &str, model_name: &str) -> Self {
        LogKey {
            run_id: run_id.to_string(),
            record_id: record_id.to_string(),
            model_name: model_name.to_string(),
        }
    }
}

impl LogRecord for TransformOutcome {
    fn key(&self) -> LogKey {
        LogKey::new(&self.run_id, &self.record_id, &self.model_name)
    }
}

impl LogRecord for DetectionResult {
    fn key(&self) -> LogKey {
        LogKey::new(&self.run_id, &self.record_id, &self.model_name)
    }
}

/// Append-only JSONL log, one entry per line.
pub struct RunLog<T> {
    path: PathBuf,
    entries: HashMap<LogKey, T>,
    file: Option<File>,
}

impl<T: LogRecord> RunLog<T> {
    /// Opens (or creates) the log and loads existing entries. A truncated
    /// final line left by an interrupted write is dropped.
    pub fn open(path: impl AsRef<Path>) -> Result<Self, PipelineError> {
        let path = path.as_ref().to_path_buf();
        let err = |m: String| PipelineError::Log {
            path: path.clone(),
            message: m,
        };
        if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
            std::fs::create_dir_all(parent).map_err(|e| err(e.to_string()))?;
        }
        let mut entries = HashMap::new();
        let mut good_len: u64 = 0;
        if path.exists() {
            let reader = BufReader::new(File::open(&path).map_err(|e| err(e.to_string()))?);
            let mut lines = reader.split(b'\n').peekable();
            let mut n = 0;
            while let Some(line) = lines.next() {
                n += 1;
                let line = line.map_err(|e| err(e.to_string()))?;
                let is_last = lines.peek().is_none();
                if line.iter().all(u8::is_ascii_whitespace) {
                    good_len += line.len() as u64 + 1;
                    continue;
                }
                match serde_json::from_slice::<T>(&line) {
                    Ok(entry) => {
                        entries.insert(entry.key(), entry);
                        good_len += line.len() as u64 + 1;
                    }
                    Err(_) if is_last => {
                        log::warn!("{}: dropping truncated final line {n}", path.display());
                    }
                    Err(e) => return Err(err(format!("line {n}: {e}"))),
                }
            }
        }
        let file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(&path)
            .map_err(|e| err(e.to_string()))?;
        let current = file.metadata().map_err(|e| err(e.to_string()))?.len();
        if current > good_len {
            file.set_len(good_len).map_err(|e| err(e.to_string()))?;
        }
        Ok(RunLog {
            path,
            entries,
            file: Some(file),
        })
    }

    /// Log held only in memory.
    pub fn in_memory() -> Self {
        RunLog {
            path: PathBuf::from("<memory>"),
            entries: HashMap::new(),
            file: None,
        }
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn contains(&self, key: &LogKey) -> bool {
        self.entries.contains_key(key)
    }

    pub fn get(&self, key: &LogKey) -> Option<&T> {
        self.entries.get(key)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn append(&mut self, entries: Vec<T>) -> Result<(), PipelineError> {
        if let Some(file) = &mut self.file {
            let mut buf = Vec::new();
            for e in &entries {
                serde_json::to_writer(&mut buf, e).map_err(|e| PipelineError::Log {
                    path: self.path.clone(),
                    message: e.to_string(),
                })?;
                buf.push(b'\n');
            }
            file.write_all(&buf).and_then(|_| file.flush()).map_err(|e| PipelineError::Log {
                path: self.path.clone(),
                message: e.to_string(),
            })?;
        }
        for e in entries {
            self.entries.insert(e.key(), e);
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct RunOptions {
    pub run_id: String,
    pub workers: usize,
    pub refusal: RefusalPatterns,
    pub template: PromptTemplate,
    pub abusive_only: bool,
}

impl RunOptions {
    pub fn transform(run_id: impl Into<String>) -> Self {
        RunOptions {
            run_id: run_id.into(),
            workers: 4,
            refusal: RefusalPatterns::default(),
            template: PromptTemplate::transform(),
            abusive_only: true,
        }
    }

    pub fn detect(run_id: impl Into<String>) -> Self {
        RunOptions {
            template: PromptTemplate::detect(),
            abusive_only: false,
            ..Self::transform(run_id)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatchRate {
    pub batch: usize,
    pub model: String,
    pub count: usize,
    pub size: usize,
    pub rate: f64,
}

#[derive(Debug, Clone, Default)]
pub struct TransformRun {
    /// Outcomes per model, in record order.
    pub outcomes: BTreeMap<String, Vec<TransformOutcome>>,
    /// Success rate per (batch, model), in batch then provider order.
    pub batch_rates: Vec<BatchRate>,
    /// Records for which no provider produced a success.
    pub all_failed: Vec<String>,
    /// Provider calls made by this invocation.
    pub dispatched: usize,
}

impl TransformRun {
    pub fn count(&self, model: &str, class: OutcomeClass) -> usize {
        self.outcomes
            .get(model)
            .map_or(0, |v| v.iter().filter(|o| o.classification == class).count())
    }

    pub fn successes(&self, model: &str) -> usize {
        self.count(model, OutcomeClass::Success)
    }

    /// Refusals plus errors.
    pub fn failures(&self, model: &str) -> usize {
        self.count(model, OutcomeClass::Refusal) + self.count(model, OutcomeClass::Error)
    }
}

#[derive(Debug, Clone, Default)]
pub struct DetectRun {
    pub results: BTreeMap<String, Vec<DetectionResult>>,
    /// Accuracy per (batch, model), in batch then provider order.
    pub batch_accuracy: Vec<BatchRate>,
    pub parse_failures: usize,
    pub dispatched: usize,
}

fn check_providers(providers: &[Provider]) -> Result<(), PipelineError> {
    if providers.is_empty() {
        return Err(PipelineError::NoProviders);
    }
    let mut seen = std::collections::HashSet::new();
    for p in providers {
        if !seen.insert(p.name()) {
            return Err(PipelineError::DuplicateProvider(p.name().to_string()));
        }
    }
    Ok(())
}

/// Runs `f` on every job with at most `workers` threads; results keep job order.
fn dispatch<J: Sync, T: Send>(jobs: &[J], workers: usize, f: impl Fn(&J) -> T + Sync) -> Vec<T> {
    if jobs.is_empty() {
        return Vec::new();
    }
    let workers = workers.clamp(1, jobs.len());
    if workers == 1 {
        return jobs.iter().map(f).collect();
    }
    let next = AtomicUsize::new(0);
    let slots: Mutex<Vec<Option<T>>> = Mutex::new((0..jobs.len()).map(|_| None).collect());
    std::thread::scope(|s| {
        for _ in 0..workers {
            s.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::SeqCst);
                if i >= jobs.len() {
                    break;
                }
                let result = f(&jobs[i]);
                slots.lock().unwrap()[i] = Some(result);
            });
        }
    });
    slots.into_inner().unwrap().into_iter().map(|r| r.expect("job completed")).collect()
}

fn call(provider: &Provider, prompt: &PromptTemplate, text: &str) -> (ProviderResponse, Option<String>) {
    match provider.send_chat(prompt.text(), text) {
        Ok(r) => {
            let err = match &r.status {
                ResponseStatus::Ok => None,
                ResponseStatus::TransportError { message } => Some(message.clone()),
                ResponseStatus::HttpError { code, body } => Some(format!("http {code}: {body}")),
                ResponseStatus::Timeout => Some("deadline exceeded".to_string()),
            };
            (r, err)
        }
        Err(e) => (
            ProviderResponse {
                text: String::new(),
                status: ResponseStatus::TransportError { message: e.to_string() },
                attempts: 0,
                latency_ms: 0,
            },
            Some(e.to_string()),
        ),
    }
}

fn pending<'a, T: LogRecord>(
    batch: &'a Batch,
    providers: &'a [Provider],
    log: &RunLog<T>,
    run_id: &str,
) -> Vec<(&'a Provider, &'a TextRecord)> {
    providers
        .iter()
        .flat_map(|p| batch.records.iter().map(move |r| (p, r)))
        .filter(|(p, r)| !log.contains(&LogKey::new(run_id, &r.id, p.name())))
        .collect()
}

fn rate(count: usize, size: usize) -> f64 {
    if size == 0 {
        0.0
    } else {
        100.0 * count as f64 / size as f64
    }
}

/// Transforms every record with every provider. Already-logged
/// (run, record, model) keys are not re-sent.
pub fn run_transform(
    batches: &[Batch],
    providers: &[Provider],
    log: &mut RunLog<TransformOutcome>,
    options: &RunOptions,
) -> Result<TransformRun, PipelineError> {
    check_providers(providers)?;
    if options.abusive_only {
        if let Some(r) = batches.iter().flat_map(|b| &b.records).find(|r| !r.is_abusive()) {
            return Err(PipelineError::NotAbusive(r.id.clone()));
        }
    }
    let mut run = TransformRun::default();
    for batch in batches {
        let jobs = pending(batch, providers, log, &options.run_id);
        run.dispatched += jobs.len();
        let fresh = dispatch(&jobs, options.workers, |(provider, record)| {
            let (resp, error) = call(provider, &options.template, &record.text);
            let classification = if error.is_some() {
                OutcomeClass::Error
            } else {
                options.refusal.classify(&resp.text)
            };
            TransformOutcome {
                run_id: options.run_id.clone(),
                record_id: record.id.clone(),
                model_name: provider.name().to_string(),
                batch: batch.index,
                raw_response: resp.text,
                classification,
                attempts: resp.attempts,
                latency_ms: resp.latency_ms,
                error,
            }
        });
        log.append(fresh)?;

        for provider in providers {
            let outcomes: Vec<TransformOutcome> = batch
                .records
                .iter()
                .map(|r| log.get(&LogKey::new(&options.run_id, &r.id, provider.name())).cloned().expect("logged"))
                .collect();
            let ok = outcomes.iter().filter(|o| o.classification == OutcomeClass::Success).count();
            run.batch_rates.push(BatchRate {
                batch: batch.index,
                model: provider.name().to_string(),
                count: ok,
                size: batch.len(),
                rate: rate(ok, batch.len()),
            });
            run.outcomes.entry(provider.name().to_string()).or_default().extend(outcomes);
        }
        for record in &batch.records {
            let any_ok = providers.iter().any(|p| {
                log.get(&LogKey::new(&options.run_id, &record.id, p.name()))
                    .is_some_and(|o| o.classification == OutcomeClass::Success)
            });
            if !any_ok {
                log::warn!("record {}: no provider produced a transformation", record.id);
                run.all_failed.push(record.id.clone());
            }
        }
    }
    Ok(run)
}

/// Asks every provider to label every record and scores against gold labels.
pub fn run_detect(
    batches: &[Batch],
    providers: &[Provider],
    log: &mut RunLog<DetectionResult>,
    options: &RunOptions,
) -> Result<DetectRun, PipelineError> {
    check_providers(providers)?;
    let mut gold = HashMap::new();
    for r in batches.iter().flat_map(|b| &b.records) {
        let label = r.abuse_label.ok_or_else(|| PipelineError::MissingLabel(r.id.clone()))?;
        gold.insert(r.id.as_str(), label);
    }
    let mut run = DetectRun::default();
    for batch in batches {
        let jobs = pending(batch, providers, log, &options.run_id);
        run.dispatched += jobs.len();
        let fresh = dispatch(&jobs, options.workers, |(provider, record)| {
            let (resp, error) = call(provider, &options.template, &record.text);
            let (predicted, parse_failed) = if error.is_some() {
                (0, true)
            } else {
                parse_detection(&resp.text)
            };
            DetectionResult {
                run_id: options.run_id.clone(),
                record_id: record.id.clone(),
                model_name: provider.name().to_string(),
                batch: batch.index,
                predicted_label: predicted,
                gold_label: gold[record.id.as_str()],
                parse_failed,
                raw_response: resp.text,
                attempts: resp.attempts,
                latency_ms: resp.latency_ms,
                error,
            }
        });
        log.append(fresh)?;

        for provider in providers {
            let results: Vec<DetectionResult> = batch
                .records
                .iter()
                .map(|r| log.get(&LogKey::new(&options.run_id, &r.id, provider.name())).cloned().expect("logged"))
                .collect();
            let correct = results.iter().filter(|d| d.is_correct()).count();
            run.parse_failures += results.iter().filter(|d| d.parse_failed).count();
            run.batch_accuracy.push(BatchRate {
                batch: batch.index,
                model: provider.name().to_string(),
                count: correct,
                size: batch.len(),
                rate: rate(correct, batch.len()),
            });
            run.results.entry(provider.name().to_string()).or_default().extend(results);
        }
    }
    Ok(run)
}
