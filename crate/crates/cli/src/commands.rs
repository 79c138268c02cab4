//! Subcommand implementations.
//!
//! Every command writes under `<out>/runs/<run_id>/`: run logs in `logs/`,
//! intermediate section results in `analysis/`, and the final report files
//! at the top level.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::io::BufRead;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use anyhow::{anyhow, bail, Context, Result};
use detox_eval::corpus::{self, Batch, Category, Dataset, LoadReport};
use detox_eval::metrics::{lexicon_words, mean_metrics, span_metrics, SpanMetrics};
use detox_eval::pipeline::{
    self, OutcomeClass, PromptKind, PromptTemplate, RefusalPatterns, RunLog, RunOptions, TransformOutcome,
};
use detox_eval::preprocess::{ContractionTable, Preprocessor, Stoplist};
use detox_eval::provider::{
    Clock, EmbedItem, HashEmbedder, PrecomputedEmbeddings, Provider, ProviderConfig, RateLimit, ScriptedBackend,
    SystemClock, ThreadClock, TransportError,
};
use detox_eval::report::{
    emit_report, BatchTable, Formats, HateSection, LexiconSection, NgramSection, OutcomeCounts, Provenance,
    RunReport, TransformSection, Unit,
};
use detox_eval::semantics::{embed_texts, pairwise_stats, pca_project, EmbeddingSet, Projection, SimilarityTable};
use detox_eval::sentiment::{aggregate_counts, classify, HttpSentiment, LexiconBaseline, SentimentBackend, SentimentMatrix};
use detox_eval::textstats::{ngram_counts, rank_lexicon, term_counts, PriorCounts};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::config::{EmbeddingBackendKind, LoadedConfig, PriorKind, SentimentBackendKind};

/// Flags shared by every subcommand, already merged with the config.
pub struct RunContext {
    pub cfg: LoadedConfig,
    pub run_id: String,
    pub run_dir: PathBuf,
    pub seed: u64,
    pub batch_size: usize,
    pub workers: usize,
    pub mock: bool,
    pub models: Vec<String>,
}

/// Non-fatal problems a command ran into.
#[derive(Debug, Default)]
pub struct Outcome {
    pub warnings: Vec<String>,
}

impl Outcome {
    fn warn(&mut self, msg: impl Into<String>) {
        let msg = msg.into();
        eprintln!("warning: {msg}");
        self.warnings.push(msg);
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, clap::ValueEnum)]
pub enum Section {
    Ngrams,
    Logodds,
    Sentiment,
    Similarity,
    Hate,
}

impl RunContext {
    fn analysis_path(&self, name: &str) -> PathBuf {
        self.run_dir.join("analysis").join(format!("{name}.json"))
    }

    fn log_path(&self, task: &str) -> PathBuf {
        self.run_dir.join("logs").join(format!("{task}.jsonl"))
    }

    fn preprocessor(&self) -> Result<Preprocessor> {
        let p = &self.cfg.config.preprocess;
        let mut pre = Preprocessor::default();
        if let Some(path) = &p.contractions {
            let text = read(&self.cfg.resolve(path))?;
            pre.contractions = ContractionTable::parse(&text).map_err(|e| anyhow!("{path}: {e}"))?;
        }
        if let Some(path) = &p.stopwords {
            pre.stoplist = Stoplist::parse(&read(&self.cfg.resolve(path))?);
        }
        pre.stoplist.extend(p.extra_stopwords.iter().cloned());
        Ok(pre)
    }

    fn dataset(&self) -> Result<(Dataset, LoadReport)> {
        let d = &self.cfg.config.dataset;
        let path = self.cfg.resolve(&d.path);
        let (dataset, report) = corpus::load_dataset(&path, d.format, &d.schema)?;
        let dataset = match d.sample_per_category {
            Some(k) => corpus::stratified_sample(&dataset, k, self.seed)?,
            None => dataset,
        };
        Ok((dataset, report))
    }

    /// The records sent for transformation, batched.
    fn transform_batches(&self) -> Result<Vec<Batch>> {
        let (dataset, _) = self.dataset()?;
        let dataset = if self.cfg.config.dataset.abusive_only {
            dataset.filter(|r| r.is_abusive())
        } else {
            dataset
        };
        Ok(corpus::make_batches(&dataset, self.batch_size)?)
    }

    fn script(&self) -> Result<Vec<ScriptEntry>> {
        let Some(path) = &self.cfg.config.mock.script else {
            return Ok(Vec::new());
        };
        let path = self.cfg.resolve(path);
        let file = std::fs::File::open(&path).with_context(|| format!("cannot open mock script {}", path.display()))?;
        let mut entries = Vec::new();
        for (n, line) in std::io::BufReader::new(file).lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            entries.push(
                serde_json::from_str(&line).with_context(|| format!("{} line {}", path.display(), n + 1))?,
            );
        }
        Ok(entries)
    }

    /// Model names in config order (or mock-script order), filtered by `--models`.
    fn model_names(&self) -> Result<Vec<String>> {
        let mut names: Vec<String> = self.cfg.config.providers.iter().map(|p| p.name.clone()).collect();
        if names.is_empty() && self.mock {
            for e in self.script()? {
                if !names.contains(&e.model) {
                    names.push(e.model);
                }
            }
        }
        if !self.models.is_empty() {
            for m in &self.models {
                if !names.contains(m) {
                    bail!("unknown model {m:?}; configured: {}", names.join(", "));
                }
            }
            names.retain(|n| self.models.contains(n));
        }
        if names.is_empty() {
            bail!("no providers configured");
        }
        Ok(names)
    }

    fn providers(&self, task: PromptKind) -> Result<Vec<Provider>> {
        let names = self.model_names()?;
        let configured: HashMap<&str, &ProviderConfig> =
            self.cfg.config.providers.iter().map(|p| (p.name.as_str(), p)).collect();
        let script = if self.mock { self.script()? } else { Vec::new() };
        let mut out = Vec::new();
        for name in names {
            let mut config = configured
                .get(name.as_str())
                .map(|c| (*c).clone())
                .unwrap_or_else(|| ProviderConfig::mock(&name));
            if config.model_id.is_empty() {
                config.model_id = config.name.clone();
            }
            if self.mock {
                config.max_requests_per_minute = RateLimit::Unlimited;
                let mut backend = ScriptedBackend::new();
                for e in script.iter().filter(|e| e.model == name && e.task == task) {
                    backend.insert(e.input.clone(), e.result());
                }
                let clock: Arc<dyn Clock> = Arc::new(ThreadClock);
                out.push(Provider::new(config, clock)?.with_chat(Arc::new(backend)));
            } else {
                out.push(Provider::http(config, Arc::new(SystemClock::default()))?);
            }
        }
        Ok(out)
    }

    fn run_options(&self, task: PromptKind) -> Result<RunOptions> {
        let prompts = &self.cfg.config.prompts;
        let mut options = match task {
            PromptKind::Transform => RunOptions::transform(&self.run_id),
            PromptKind::Detect => RunOptions::detect(&self.run_id),
        };
        let custom = match task {
            PromptKind::Transform => &prompts.transform,
            PromptKind::Detect => &prompts.detect,
        };
        if let Some(text) = custom {
            options.template = PromptTemplate::new(task, text.clone())?;
        }
        let mut refusal = RefusalPatterns::default();
        refusal.extend(prompts.extra_refusal_patterns.iter().cloned());
        options.refusal = refusal;
        options.workers = self.workers;
        options.abusive_only = task == PromptKind::Transform && self.cfg.config.dataset.abusive_only;
        Ok(options)
    }
}

#[derive(Debug, Deserialize)]
struct ScriptEntry {
    model: String,
    task: PromptKind,
    input: String,
    #[serde(default)]
    response: Option<String>,
    /// `timeout`, `http:<code>` or any other text for a transport error.
    #[serde(default)]
    error: Option<String>,
}

impl ScriptEntry {
    fn result(&self) -> Result<String, TransportError> {
        match &self.error {
            None => Ok(self.response.clone().unwrap_or_default()),
            Some(e) if e == "timeout" => Err(TransportError::Timeout),
            Some(e) => match e.strip_prefix("http:").and_then(|c| c.parse().ok()) {
                Some(code) => Err(TransportError::Http {
                    code,
                    body: "scripted failure".into(),
                }),
                None => Err(TransportError::Transport(e.clone())),
            },
        }
    }
}

fn read(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).with_context(|| format!("cannot read {}", path.display()))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent)?;
    }
    let mut bytes = serde_json::to_vec_pretty(value)?;
    bytes.push(b'\n');
    std::fs::write(path, bytes).with_context(|| format!("cannot write {}", path.display()))
}

fn read_json<T: DeserializeOwned>(path: &Path) -> Result<Option<T>> {
    if !path.exists() {
        return Ok(None);
    }
    let text = read(path)?;
    Ok(Some(serde_json::from_str(&text).with_context(|| format!("invalid {}", path.display()))?))
}

#[derive(Debug, Serialize)]
struct IngestSummary {
    source: String,
    sha256: String,
    rows_read: usize,
    records: usize,
    rejected: Vec<corpus::Rejection>,
    by_category: BTreeMap<String, usize>,
}

pub fn ingest(ctx: &RunContext) -> Result<Outcome> {
    let mut outcome = Outcome::default();
    let (dataset, report) = ctx.dataset()?;
    let path = ctx.cfg.resolve(&ctx.cfg.config.dataset.path);
    println!("{} records loaded", dataset.len());
    for r in &report.rejected {
        outcome.warn(format!(
            "row {} ({}) rejected: {}",
            r.row,
            r.id.as_deref().unwrap_or("no id"),
            r.reason
        ));
    }
    let mut by_category = BTreeMap::new();
    for r in &dataset {
        let key = r.category.map_or("uncategorised", Category::as_str);
        *by_category.entry(key.to_string()).or_default() += 1;
    }
    for (k, v) in &by_category {
        println!("  {k}: {v}");
    }
    let summary = IngestSummary {
        source: ctx.cfg.config.dataset.path.clone(),
        sha256: corpus::file_sha256(&path)?,
        rows_read: report.rows_read,
        records: dataset.len(),
        rejected: report.rejected.clone(),
        by_category,
    };
    write_json(&ctx.analysis_path("ingest"), &summary)?;
    let mut out = Vec::new();
    corpus::write_jsonl(&dataset, &mut out)?;
    std::fs::write(ctx.run_dir.join("dataset.jsonl"), out)?;
    Ok(outcome)
}

#[derive(Serialize)]
struct Preprocessed<'a> {
    id: &'a str,
    cleaned: String,
    content_tokens: Vec<String>,
}

pub fn preprocess(ctx: &RunContext) -> Result<Outcome> {
    let pre = ctx.preprocessor()?;
    let (dataset, _) = ctx.dataset()?;
    let mut out = Vec::new();
    for r in &dataset {
        let processed = pre.process(&r.text);
        let row = Preprocessed {
            id: &r.id,
            cleaned: processed.cleaned,
            content_tokens: processed.content_tokens,
        };
        serde_json::to_writer(&mut out, &row)?;
        out.push(b'\n');
    }
    std::fs::write(ctx.run_dir.join("preprocessed.jsonl"), out)?;
    println!("{} records preprocessed", dataset.len());
    Ok(Outcome::default())
}

fn open_log<T: pipeline::LogRecord>(path: &Path, resume: bool) -> Result<RunLog<T>> {
    if !resume && path.exists() {
        std::fs::remove_file(path).with_context(|| format!("cannot reset {}", path.display()))?;
    }
    Ok(RunLog::open(path)?)
}

fn print_rates(title: &str, table: &BatchTable) {
    println!("{title}");
    println!("  batch  {}", table.columns.join("  "));
    for r in &table.rows {
        let cells: Vec<String> = r.values.iter().map(|v| v.map_or("-".into(), |v| format!("{v:.1}"))).collect();
        println!("  {:>5}  {}", r.batch, cells.join("  "));
    }
}

pub fn transform(ctx: &RunContext, resume: bool) -> Result<Outcome> {
    let mut outcome = Outcome::default();
    let batches = ctx.transform_batches()?;
    let providers = ctx.providers(PromptKind::Transform)?;
    let options = ctx.run_options(PromptKind::Transform)?;
    let mut log = open_log::<TransformOutcome>(&ctx.log_path("transform"), resume)?;
    let run = pipeline::run_transform(&batches, &providers, &mut log, &options)?;
    println!("{} provider calls dispatched", run.dispatched);

    let rates = BatchTable::from_rates("Transformation success rate by batch", "success_rate", &run.batch_rates);
    print_rates("success rate (%)", &rates);
    let counts: Vec<OutcomeCounts> = providers
        .iter()
        .map(|p| OutcomeCounts {
            model: p.name().to_string(),
            success: run.successes(p.name()),
            refusal: run.count(p.name(), OutcomeClass::Refusal),
            error: run.count(p.name(), OutcomeClass::Error),
        })
        .collect();
    for c in &counts {
        println!("{}: {} success, {} fail ({} refusal, {} error)", c.model, c.success, c.fail(), c.refusal, c.error);
    }
    if !run.all_failed.is_empty() {
        outcome.warn(format!("{} records had no successful transformation", run.all_failed.len()));
    }
    write_json(&ctx.analysis_path("transform"), &TransformSection { rates, counts })?;
    Ok(outcome)
}

pub fn detect(ctx: &RunContext, resume: bool) -> Result<Outcome> {
    let mut outcome = Outcome::default();
    let (dataset, _) = ctx.dataset()?;
    let batches = corpus::make_batches(&dataset, ctx.batch_size)?;
    let providers = ctx.providers(PromptKind::Detect)?;
    let options = ctx.run_options(PromptKind::Detect)?;
    let mut log = open_log(&ctx.log_path("detect"), resume)?;
    let run = pipeline::run_detect(&batches, &providers, &mut log, &options)?;
    println!("{} provider calls dispatched", run.dispatched);
    let table = BatchTable::from_rates("Detection accuracy by batch", "accuracy", &run.batch_accuracy);
    print_rates("accuracy (%)", &table);
    if run.parse_failures > 0 {
        outcome.warn(format!("{} responses could not be parsed as a label", run.parse_failures));
    }
    write_json(&ctx.analysis_path("detect"), &table)?;
    Ok(outcome)
}

/// Originals and successful rewrites of the transform run, per batch.
struct TransformData {
    batches: Vec<Batch>,
    models: Vec<String>,
    /// model -> record id -> rewritten text (successes only)
    rewrites: BTreeMap<String, BTreeMap<String, String>>,
}

impl TransformData {
    fn load(ctx: &RunContext) -> Result<Option<Self>> {
        let path = ctx.log_path("transform");
        if !path.exists() {
            return Ok(None);
        }
        let batches = ctx.transform_batches()?;
        let models = ctx.model_names()?;
        let log = RunLog::<TransformOutcome>::open(&path)?;
        let mut rewrites: BTreeMap<String, BTreeMap<String, String>> = BTreeMap::new();
        for m in &models {
            let entry = rewrites.entry(m.clone()).or_default();
            for r in batches.iter().flat_map(|b| &b.records) {
                let key = pipeline::LogKey::new(&ctx.run_id, &r.id, m);
                match log.get(&key) {
                    Some(o) if o.classification == OutcomeClass::Success => {
                        entry.insert(r.id.clone(), o.raw_response.clone());
                    }
                    Some(_) => {}
                    None => return Ok(None),
                }
            }
        }
        Ok(Some(TransformData {
            batches,
            models,
            rewrites,
        }))
    }

    fn originals(&self) -> impl Iterator<Item = &corpus::TextRecord> {
        self.batches.iter().flat_map(|b| &b.records)
    }
}

fn read_docs(path: &Path, pre: &Preprocessor) -> Result<Vec<Vec<String>>> {
    Ok(read(path)?
        .lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| pre.content_tokens(l))
        .collect())
}

fn build_lexicon_section(ctx: &RunContext, pre: &Preprocessor) -> Result<Option<LexiconSection>> {
    let lc = &ctx.cfg.config.lexicon;
    let (Some(a), Some(b)) = (&lc.abusive_corpus, &lc.benign_corpus) else {
        return Ok(None);
    };
    let abusive = read_docs(&ctx.cfg.resolve(a), pre)?;
    let benign = read_docs(&ctx.cfg.resolve(b), pre)?;
    let (ca, _) = term_counts(&abusive);
    let (cb, _) = term_counts(&benign);
    let prior = match lc.prior {
        PriorKind::Informative => PriorCounts::informative(&[&ca, &cb], lc.alpha0)?,
        PriorKind::Uniform => {
            let vocab: BTreeSet<&String> = ca.keys().chain(cb.keys()).collect();
            let per_term = lc.alpha0 / vocab.len().max(1) as f64;
            PriorCounts::uniform(vocab.into_iter().cloned(), per_term)?
        }
    };
    let scores = rank_lexicon(&abusive, &benign, &prior)?;
    let words = scores
        .iter()
        .filter(|s| s.z >= lc.z_threshold)
        .map(|s| s.term.clone())
        .collect();
    Ok(Some(LexiconSection {
        prior: match lc.prior {
            PriorKind::Informative => "informative".into(),
            PriorKind::Uniform => "uniform".into(),
        },
        alpha0: prior.alpha0(),
        z_threshold: lc.z_threshold,
        scores,
        words,
    }))
}

fn lexicon_words_for(ctx: &RunContext, built: Option<&LexiconSection>) -> Result<Option<BTreeSet<String>>> {
    if let Some(l) = built {
        return Ok(Some(l.words.clone()));
    }
    if let Some(file) = &ctx.cfg.config.lexicon.file {
        return Ok(Some(detox_eval::textstats::parse_lexicon(&read(&ctx.cfg.resolve(file))?)));
    }
    Ok(None)
}

fn ngram_sections(ctx: &RunContext, pre: &Preprocessor, data: Option<&TransformData>) -> Result<Vec<NgramSection>> {
    let top_k = ctx.cfg.config.analysis.ngram_top_k.max(1);
    let mut groups: Vec<(String, Vec<Vec<String>>)> = Vec::new();
    let originals: Vec<corpus::TextRecord> = match data {
        Some(d) => d.originals().cloned().collect(),
        None => ctx.transform_batches()?.into_iter().flat_map(|b| b.records).collect(),
    };
    groups.push(("original".into(), originals.iter().map(|r| pre.content_tokens(&r.text)).collect()));
    for c in Category::ABUSIVE {
        let docs: Vec<Vec<String>> = originals
            .iter()
            .filter(|r| r.category == Some(c))
            .map(|r| pre.content_tokens(&r.text))
            .collect();
        if !docs.is_empty() {
            groups.push((format!("original_{}", c.as_str()), docs));
        }
    }
    if let Some(d) = data {
        for m in &d.models {
            let docs = d.rewrites[m].values().map(|t| pre.content_tokens(t)).collect();
            groups.push((m.clone(), docs));
        }
    }
    let mut out = Vec::new();
    for (label, docs) in groups {
        for n in [2, 3] {
            out.push(NgramSection {
                label: label.clone(),
                table: ngram_counts(&docs, n, top_k)?,
            });
        }
    }
    Ok(out)
}

fn hate_section(pre: &Preprocessor, data: &TransformData, lexicon: &BTreeSet<String>) -> Result<HateSection> {
    let mut columns = vec!["original".to_string()];
    columns.extend(data.models.iter().cloned());
    let mut counts = BatchTable::new("Lexicon hate count by batch", "hate_count", Unit::Count, columns);
    let mut span: BTreeMap<&str, Vec<SpanMetrics>> = BTreeMap::new();
    for batch in &data.batches {
        let originals: HashMap<&str, Vec<String>> = batch
            .records
            .iter()
            .map(|r| (r.id.as_str(), pre.content_tokens(&r.text)))
            .collect();
        let total: usize = originals.values().map(|t| detox_eval::metrics::hate_count(t, lexicon)).sum();
        counts.set(batch.index, "original", total as f64);
        for m in &data.models {
            let mut total = 0;
            let mut per_record = Vec::new();
            for r in &batch.records {
                let Some(text) = data.rewrites[m].get(&r.id) else {
                    continue;
                };
                let after = pre.content_tokens(text);
                total += detox_eval::metrics::hate_count(&after, lexicon);
                let before = &originals[r.id.as_str()];
                let gold: HashSet<String> = lexicon_words(before, lexicon);
                if gold.is_empty() {
                    continue;
                }
                let kept: HashSet<&String> = after.iter().collect();
                let removed: HashSet<String> = before.iter().filter(|t| !kept.contains(t)).cloned().collect();
                per_record.push(span_metrics(&removed, &gold));
            }
            counts.set(batch.index, m, total as f64);
            if let Ok(mean) = mean_metrics(&per_record) {
                span.entry(m.as_str()).or_default().push(mean);
            }
        }
    }
    let span = data
        .models
        .iter()
        .filter_map(|m| span.get(m.as_str()).and_then(|v| mean_metrics(v).ok()).map(|s| (m.clone(), s)))
        .collect();
    Ok(HateSection {
        counts,
        span,
        lexicon_size: lexicon.len(),
    })
}

fn sentiment_section(ctx: &RunContext, pre: &Preprocessor, data: &TransformData) -> Result<SentimentMatrix> {
    let sc = &ctx.cfg.config.sentiment;
    let backend: Box<dyn SentimentBackend> = match sc.backend {
        SentimentBackendKind::Baseline => Box::new(LexiconBaseline::new(pre.clone())),
        SentimentBackendKind::Http => {
            let url = sc.url.clone().ok_or_else(|| anyhow!("sentiment.url is required for the http backend"))?;
            Box::new(HttpSentiment::new(url, Duration::from_secs(60)))
        }
    };
    let mut groups = Vec::new();
    let originals: Vec<(String, String)> = data.originals().map(|r| (r.id.clone(), r.text.clone())).collect();
    groups.push(("original".to_string(), classify(&originals, backend.as_ref(), sc.threshold)?));
    for m in &data.models {
        let items: Vec<(String, String)> = data.rewrites[m].iter().map(|(k, v)| (k.clone(), v.clone())).collect();
        groups.push((m.clone(), classify(&items, backend.as_ref(), sc.threshold)?));
    }
    Ok(aggregate_counts(&groups))
}

fn embedding_sets(ctx: &RunContext, data: &TransformData, ids: &BTreeSet<String>, outcome: &mut Outcome) -> Result<Vec<EmbeddingSet>> {
    let ec = &ctx.cfg.config.embedding;
    let mut sources: Vec<(String, Vec<EmbedItem>)> = vec![(
        "original".into(),
        data.originals()
            .filter(|r| ids.contains(&r.id))
            .map(|r| EmbedItem::new(r.id.clone(), r.text.clone()))
            .collect(),
    )];
    for m in &data.models {
        sources.push((
            m.clone(),
            data.rewrites[m]
                .iter()
                .filter(|(id, _)| ids.contains(*id))
                .map(|(id, t)| EmbedItem::new(id.clone(), t.clone()))
                .collect(),
        ));
    }
    let mut kind = ec.backend;
    if kind == EmbeddingBackendKind::Provider && ctx.mock {
        outcome.warn("embedding provider replaced by the hash embedder under --mock");
        kind = EmbeddingBackendKind::Hash;
    }
    let clock: Arc<dyn Clock> = Arc::new(ThreadClock);
    let mut sets = Vec::new();
    for (source, items) in sources {
        let provider = match kind {
            EmbeddingBackendKind::Hash => Provider::new(ProviderConfig::mock("hash-embedder"), clock.clone())?
                .with_embed(Arc::new(HashEmbedder::new(ec.dim.max(1)))),
            EmbeddingBackendKind::Precomputed => {
                let file = ec
                    .precomputed
                    .get(&source)
                    .ok_or_else(|| anyhow!("no precomputed embeddings configured for source {source:?}"))?;
                let pre = PrecomputedEmbeddings::load(&ctx.cfg.resolve(file))?;
                Provider::new(ProviderConfig::mock("precomputed"), clock.clone())?.with_embed(Arc::new(pre))
            }
            EmbeddingBackendKind::Provider => {
                let name = ec.provider.as_deref().ok_or_else(|| anyhow!("embedding.provider is not set"))?;
                let mut config = ctx
                    .cfg
                    .config
                    .providers
                    .iter()
                    .find(|p| p.name == name)
                    .cloned()
                    .ok_or_else(|| anyhow!("embedding provider {name:?} is not configured"))?;
                if let Some(model) = &ec.model_id {
                    config.model_id = model.clone();
                }
                Provider::http(config, Arc::new(SystemClock::default()))?
            }
        };
        sets.push(embed_texts(&provider, &source, &items, 64)?);
    }
    Ok(sets)
}

#[derive(Serialize, Deserialize, Default)]
struct AnalysisWarnings {
    warnings: Vec<String>,
}

pub fn analyze(ctx: &RunContext, sections: &[Section]) -> Result<Outcome> {
    let mut outcome = Outcome::default();
    let pre = ctx.preprocessor()?;
    let sections: BTreeSet<Section> = sections.iter().copied().collect();
    let data = TransformData::load(ctx)?;
    if data.is_none() {
        let needs: Vec<&str> = [
            (Section::Hate, "hate"),
            (Section::Sentiment, "sentiment"),
            (Section::Similarity, "similarity"),
        ]
        .iter()
        .filter(|(s, _)| sections.contains(s))
        .map(|(_, n)| *n)
        .collect();
        if !needs.is_empty() {
            outcome.warn(format!(
                "no complete transform run log for {}; skipped {}",
                ctx.run_id,
                needs.join(", ")
            ));
        }
    }

    if sections.contains(&Section::Ngrams) {
        let ngrams = ngram_sections(ctx, &pre, data.as_ref())?;
        for s in ngrams.iter().filter(|s| s.label == "original" || s.label.starts_with("original_")) {
            if let Some((gram, count)) = s.table.top() {
                println!("top {}-gram {}: {} ({count})", s.table.n, s.label, gram.join(" "));
            }
        }
        write_json(&ctx.analysis_path("ngrams"), &ngrams)?;
    }

    let mut lexicon_section = None;
    if sections.contains(&Section::Logodds) || sections.contains(&Section::Hate) {
        lexicon_section = build_lexicon_section(ctx, &pre)?;
    }
    if sections.contains(&Section::Logodds) {
        match &lexicon_section {
            Some(l) => {
                println!("lexicon: {} words at z >= {}", l.words.len(), l.z_threshold);
                write_json(&ctx.analysis_path("logodds"), l)?;
            }
            None => outcome.warn("logodds needs lexicon.abusive_corpus and lexicon.benign_corpus; skipped"),
        }
    }

    if let Some(data) = &data {
        if sections.contains(&Section::Hate) {
            let lexicon = match lexicon_words_for(ctx, lexicon_section.as_ref())? {
                Some(l) => l,
                None => {
                    outcome.warn("no lexicon configured; hate counts are all zero");
                    BTreeSet::new()
                }
            };
            if lexicon.is_empty() {
                outcome.warn("lexicon is empty; hate counts are all zero");
            }
            let hate = hate_section(&pre, data, &lexicon)?;
            for c in &hate.counts.columns {
                println!("hate count {c}: {}", hate.counts.total(c));
            }
            write_json(&ctx.analysis_path("hate"), &hate)?;
        }
        if sections.contains(&Section::Sentiment) {
            let matrix = sentiment_section(ctx, &pre, data)?;
            write_json(&ctx.analysis_path("sentiment"), &matrix)?;
        }
        if sections.contains(&Section::Similarity) {
            let ids: BTreeSet<String> = data
                .originals()
                .filter(|r| data.models.iter().all(|m| data.rewrites[m].contains_key(&r.id)))
                .map(|r| r.id.clone())
                .collect();
            if ids.is_empty() {
                outcome.warn("no record was transformed by every model; similarity skipped");
            } else {
                let sets = embedding_sets(ctx, data, &ids, &mut outcome)?;
                let batches: Vec<Batch> = data
                    .batches
                    .iter()
                    .map(|b| Batch {
                        index: b.index,
                        records: b.records.iter().filter(|r| ids.contains(&r.id)).cloned().collect(),
                    })
                    .collect();
                let tables: Vec<SimilarityTable> = pairwise_stats(&sets, &batches)?;
                for t in &tables {
                    println!("{}: {:.3} ± {:.3}", t.label(), t.overall.mean, t.overall.std);
                }
                write_json(&ctx.analysis_path("similarity"), &tables)?;
                match pca_project(&sets) {
                    Ok(p) => write_json(&ctx.analysis_path("projection"), &p)?,
                    Err(e) => outcome.warn(format!("projection skipped: {e}")),
                }
            }
        }
    }
    write_json(
        &ctx.analysis_path("warnings"),
        &AnalysisWarnings {
            warnings: outcome.warnings.clone(),
        },
    )?;
    Ok(outcome)
}

pub fn report(ctx: &RunContext, formats: Formats) -> Result<Outcome> {
    let mut outcome = Outcome::default();
    let c = &ctx.cfg.config;
    let mut report = RunReport::new(&ctx.run_id, ctx.seed);
    report.config = serde_json::to_value(c)?;
    let mut inputs = Vec::new();
    let mut files: Vec<&String> = vec![&c.dataset.path];
    files.extend(c.mock.script.iter().filter(|_| ctx.mock));
    files.extend(c.lexicon.file.iter());
    files.extend(c.lexicon.abusive_corpus.iter());
    files.extend(c.lexicon.benign_corpus.iter());
    for f in files {
        let path = ctx.cfg.resolve(f);
        if path.exists() {
            inputs.push((f.clone(), corpus::file_sha256(&path)?));
        }
    }
    report.provenance = Provenance {
        inputs,
        providers: ctx.model_names().unwrap_or_default(),
        generated_at: (!ctx.mock).then(|| {
            let secs = std::time::SystemTime::now()
                .duration_since(std::time::UNIX_EPOCH)
                .map(|d| d.as_secs())
                .unwrap_or(0);
            format!("unix:{secs}")
        }),
    };
    report.accuracy = read_json(&ctx.analysis_path("detect"))?;
    report.transform = read_json(&ctx.analysis_path("transform"))?;
    report.hate = read_json(&ctx.analysis_path("hate"))?;
    report.sentiment = read_json(&ctx.analysis_path("sentiment"))?;
    report.similarity = read_json(&ctx.analysis_path("similarity"))?;
    report.projection = read_json::<Projection>(&ctx.analysis_path("projection"))?;
    report.ngrams = read_json(&ctx.analysis_path("ngrams"))?;
    report.lexicon = read_json(&ctx.analysis_path("logodds"))?;
    report.censor_words = c.lexicon.censor;
    if let Some(w) = read_json::<AnalysisWarnings>(&ctx.analysis_path("warnings"))? {
        report.warnings = w.warnings;
    }
    let written = emit_report(&report, &ctx.run_dir, formats)?;
    println!("{} files written to {}", written.len(), ctx.run_dir.display());
    if report.transform.is_none() && report.accuracy.is_none() {
        outcome.warn("no transform or detect results found");
    }
    Ok(outcome)
}
