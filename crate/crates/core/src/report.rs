//! Summary statistics and report emission.
//!
//! A [`RunReport`] gathers whatever sections a run produced. [`emit_report`]
//! writes it under one directory as `report.md`, `report.json`,
//! `tables/*.csv` and `plots/*.csv`. Every CSV file is always written (headers
//! only when its section is absent) and absent sections are listed as warnings
//! in the report header. Output bytes depend only on the report contents.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::metrics::SpanMetrics;
use crate::pipeline::BatchRate;
use crate::semantics::{Projection, SimilarityTable};
use crate::sentiment::{SentimentLabel, SentimentMatrix};
use crate::textstats::{censor, LogOddsScore, NgramTable};

#[derive(Debug, Error)]
pub enum ReportError {
    #[error("cannot summarize an empty list")]
    Empty,
    #[error("unknown output format {0:?}")]
    UnknownFormat(String),
    #[error("cannot write {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("serialization failed: {0}")]
    Serialize(String),
}

/// Mean and population standard deviation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SummaryStat {
    pub mean: f64,
    pub std: f64,
    pub n: usize,
}

/// Arithmetic mean and population (divide-by-n) standard deviation.
pub fn summarize(values: &[f64]) -> Result<SummaryStat, ReportError> {
    if values.is_empty() {
        return Err(ReportError::Empty);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    Ok(SummaryStat {
        mean,
        std: var.sqrt(),
        n: values.len(),
    })
}

pub fn fmt_pct(x: f64) -> String {
    format!("{x:.1}")
}

pub fn fmt_sim(x: f64) -> String {
    format!("{x:.3}")
}

fn fmt_count(x: f64) -> String {
    if x.fract() == 0.0 {
        format!("{x:.0}")
    } else {
        format!("{x:.1}")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Unit {
    Percent,
    Count,
}

impl Unit {
    fn format(self, x: f64) -> String {
        match self {
            Unit::Percent => fmt_pct(x),
            Unit::Count => fmt_count(x),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatchRow {
    pub batch: usize,
    pub values: Vec<Option<f64>>,
}

/// One value per (batch, column), the shape of the per-batch tables.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatchTable {
    pub title: String,
    pub metric: String,
    pub unit: Unit,
    pub columns: Vec<String>,
    pub rows: Vec<BatchRow>,
}

impl BatchTable {
    pub fn new(title: impl Into<String>, metric: impl Into<String>, unit: Unit, columns: Vec<String>) -> Self {
        BatchTable {
            title: title.into(),
            metric: metric.into(),
            unit,
            columns,
            rows: Vec::new(),
        }
    }

    /// Builds a table from (batch, model) rates; columns in first-seen order.
    pub fn from_rates(title: &str, metric: &str, rates: &[BatchRate]) -> Self {
        let mut columns: Vec<String> = Vec::new();
        for r in rates {
            if !columns.contains(&r.model) {
                columns.push(r.model.clone());
            }
        }
        let mut table = BatchTable::new(title, metric, Unit::Percent, columns);
        for r in rates {
            table.set(r.batch, &r.model, r.rate);
        }
        table
    }

    pub fn set(&mut self, batch: usize, column: &str, value: f64) {
        let c = match self.columns.iter().position(|x| x == column) {
            Some(c) => c,
            None => {
                self.columns.push(column.to_string());
                self.rows.iter_mut().for_each(|r| r.values.push(None));
                self.columns.len() - 1
            }
        };
        let width = self.columns.len();
        let pos = match self.rows.binary_search_by_key(&batch, |r| r.batch) {
            Ok(p) => p,
            Err(p) => {
                self.rows.insert(
                    p,
                    BatchRow {
                        batch,
                        values: vec![None; width],
                    },
                );
                p
            }
        };
        self.rows[pos].values[c] = Some(value);
    }

    pub fn column(&self, name: &str) -> Vec<f64> {
        match self.columns.iter().position(|x| x == name) {
            Some(c) => self.rows.iter().filter_map(|r| r.values[c]).collect(),
            None => Vec::new(),
        }
    }

    pub fn summary(&self) -> Vec<Option<SummaryStat>> {
        self.columns.iter().map(|c| summarize(&self.column(c)).ok()).collect()
    }

    pub fn total(&self, name: &str) -> f64 {
        self.column(name).iter().sum()
    }
}

/// Success / refusal / error tallies for one model.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct OutcomeCounts {
    pub model: String,
    pub success: usize,
    pub refusal: usize,
    pub error: usize,
}

impl OutcomeCounts {
    pub fn fail(&self) -> usize {
        self.refusal + self.error
    }

    pub fn total(&self) -> usize {
        self.success + self.fail()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransformSection {
    pub rates: BatchTable,
    pub counts: Vec<OutcomeCounts>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HateSection {
    /// Lexicon hits per batch for the original text and every model.
    pub counts: BatchTable,
    /// Mean word-level metrics per model: gold = lexicon words in the
    /// original, predicted = content words the rewrite removed.
    pub span: Vec<(String, SpanMetrics)>,
    pub lexicon_size: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NgramSection {
    pub label: String,
    pub table: NgramTable,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LexiconSection {
    pub prior: String,
    pub alpha0: f64,
    pub z_threshold: f64,
    pub scores: Vec<LogOddsScore>,
    pub words: BTreeSet<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct Provenance {
    /// (path as configured, sha256) per input file.
    pub inputs: Vec<(String, String)>,
    pub providers: Vec<String>,
    /// Wall-clock generation time; left empty in deterministic runs.
    pub generated_at: Option<String>,
}

/// Everything a run produced, section by section.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct RunReport {
    pub run_id: String,
    pub seed: u64,
    pub config: serde_json::Value,
    pub provenance: Provenance,
    pub accuracy: Option<BatchTable>,
    pub transform: Option<TransformSection>,
    pub hate: Option<HateSection>,
    pub sentiment: Option<SentimentMatrix>,
    pub similarity: Option<Vec<SimilarityTable>>,
    pub projection: Option<Projection>,
    pub ngrams: Option<Vec<NgramSection>>,
    pub lexicon: Option<LexiconSection>,
    /// Mask lexicon words in emitted files, keeping first and last letters.
    pub censor_words: bool,
    pub warnings: Vec<String>,
}

impl RunReport {
    pub fn new(run_id: impl Into<String>, seed: u64) -> Self {
        RunReport {
            run_id: run_id.into(),
            seed,
            config: serde_json::Value::Null,
            ..Default::default()
        }
    }

    fn missing_sections(&self) -> Vec<&'static str> {
        let mut out = Vec::new();
        let present = [
            ("accuracy", self.accuracy.is_some()),
            ("transform", self.transform.is_some()),
            ("hate", self.hate.is_some()),
            ("sentiment", self.sentiment.is_some()),
            ("similarity", self.similarity.is_some()),
            ("projection", self.projection.is_some()),
            ("ngrams", self.ngrams.is_some()),
            ("logodds", self.lexicon.is_some()),
        ];
        for (name, ok) in present {
            if !ok {
                out.push(name);
            }
        }
        out
    }

    fn word(&self, w: &str) -> String {
        if self.censor_words {
            censor(w)
        } else {
            w.to_string()
        }
    }
}

/// Which file kinds [`emit_report`] writes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Formats {
    pub csv: bool,
    pub json: bool,
    pub markdown: bool,
    pub plot_data: bool,
}

impl Formats {
    pub const ALL: Formats = Formats {
        csv: true,
        json: true,
        markdown: true,
        plot_data: true,
    };
}

impl Default for Formats {
    fn default() -> Self {
        Formats::ALL
    }
}

impl FromStr for Formats {
    type Err = ReportError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let mut f = Formats {
            csv: false,
            json: false,
            markdown: false,
            plot_data: false,
        };
        for part in s.split(',').map(str::trim).filter(|p| !p.is_empty()) {
            match part {
                "csv" => f.csv = true,
                "json" => f.json = true,
                "markdown" | "md" => f.markdown = true,
                "svg_plotdata" | "plots" => f.plot_data = true,
                other => return Err(ReportError::UnknownFormat(other.to_string())),
            }
        }
        Ok(f)
    }
}

fn csv_bytes(header: &[&str], rows: impl IntoIterator<Item = Vec<String>>) -> Result<Vec<u8>, ReportError> {
    let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(Vec::new());
    let ser = |e: csv::Error| ReportError::Serialize(e.to_string());
    w.write_record(header).map_err(ser)?;
    for r in rows {
        w.write_record(&r).map_err(ser)?;
    }
    w.into_inner().map_err(|e| ReportError::Serialize(e.to_string()))
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<(), ReportError> {
    let io = |source| ReportError::Io {
        path: path.to_path_buf(),
        source,
    };
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).map_err(io)?;
    }
    std::fs::write(path, bytes).map_err(io)
}

fn metric_rows(table: &BatchTable) -> Vec<Vec<String>> {
    let mut rows = Vec::new();
    for r in &table.rows {
        for (c, v) in table.columns.iter().zip(&r.values) {
            if let Some(v) = v {
                rows.push(vec![r.batch.to_string(), c.clone(), table.metric.clone(), table.unit.format(*v)]);
            }
        }
    }
    rows
}

/// All CSV tables as (relative path, bytes).
pub fn csv_tables(report: &RunReport) -> Result<Vec<(String, Vec<u8>)>, ReportError> {
    let mut files = Vec::new();
    let metric_header = ["batch_no", "model", "metric", "value"];

    let mut metrics = Vec::new();
    for t in [
        report.accuracy.as_ref(),
        report.transform.as_ref().map(|t| &t.rates),
        report.hate.as_ref().map(|h| &h.counts),
    ]
    .into_iter()
    .flatten()
    {
        metrics.extend(metric_rows(t));
    }
    files.push(("tables/metrics.csv".to_string(), csv_bytes(&metric_header, metrics)?));

    let counts = report.transform.iter().flat_map(|t| &t.counts).map(|c| {
        vec![
            c.model.clone(),
            c.success.to_string(),
            c.refusal.to_string(),
            c.error.to_string(),
            c.fail().to_string(),
            c.total().to_string(),
        ]
    });
    files.push((
        "tables/outcomes.csv".to_string(),
        csv_bytes(&["model", "success", "refusal", "error", "fail", "total"], counts)?,
    ));

    let span = report.hate.iter().flat_map(|h| &h.span).map(|(m, s)| {
        vec![m.clone(), fmt_sim(s.precision), fmt_sim(s.recall), fmt_sim(s.f1), fmt_sim(s.iou)]
    });
    files.push((
        "tables/span_metrics.csv".to_string(),
        csv_bytes(&["model", "precision", "recall", "f1", "iou"], span)?,
    ));

    let mut sim_rows = Vec::new();
    for t in report.similarity.iter().flatten() {
        for b in &t.per_batch {
            sim_rows.push(vec![t.label(), b.batch.to_string(), fmt_sim(b.mean), fmt_sim(b.std)]);
        }
        sim_rows.push(vec![t.label(), "*".into(), fmt_sim(t.overall.mean), fmt_sim(t.overall.std)]);
    }
    files.push((
        "tables/similarity.csv".to_string(),
        csv_bytes(&["pair", "batch", "mean", "std"], sim_rows)?,
    ));

    let mut sentiment_rows = Vec::new();
    if let Some(m) = &report.sentiment {
        for (source, row) in m.sources.iter().zip(&m.counts) {
            for label in SentimentLabel::ALL {
                sentiment_rows.push(vec![source.clone(), label.to_string(), row[label.index()].to_string()]);
            }
        }
    }
    files.push((
        "tables/sentiment.csv".to_string(),
        csv_bytes(&["source", "label", "count"], sentiment_rows)?,
    ));

    for section in report.ngrams.iter().flatten() {
        let rows = section.table.entries.iter().enumerate().map(|(i, (gram, count))| {
            let words: Vec<String> = gram.iter().map(|w| report.word(w)).collect();
            vec![(i + 1).to_string(), words.join(" "), count.to_string()]
        });
        files.push((
            format!("tables/ngrams_{}_{}.csv", section.label, section.table.n),
            csv_bytes(&["rank", "ngram", "count"], rows)?,
        ));
    }

    let logodds = report.lexicon.iter().flat_map(|l| &l.scores).map(|s| {
        vec![
            report.word(&s.term),
            format!("{:.6}", s.delta),
            format!("{:.6}", s.variance),
            format!("{:.6}", s.z),
        ]
    });
    files.push((
        "tables/logodds.csv".to_string(),
        csv_bytes(&["term", "delta", "variance", "z"], logodds)?,
    ));
    let lexicon: String = report
        .lexicon
        .iter()
        .flat_map(|l| &l.words)
        .map(|w| format!("{}\n", report.word(w)))
        .collect();
    files.push(("tables/lexicon.txt".to_string(), lexicon.into_bytes()));
    Ok(files)
}

/// Plot-ready series as (relative path, bytes).
pub fn plot_data(report: &RunReport) -> Result<Vec<(String, Vec<u8>)>, ReportError> {
    let mut files = Vec::new();
    let series = |t: Option<&BatchTable>| -> Vec<Vec<String>> {
        t.map(|t| {
            let mut rows = Vec::new();
            for c in &t.columns {
                for r in &t.rows {
                    if let Some(v) = r.values[t.columns.iter().position(|x| x == c).unwrap()] {
                        rows.push(vec![c.clone(), r.batch.to_string(), t.unit.format(v)]);
                    }
                }
            }
            rows
        })
        .unwrap_or_default()
    };
    let header = ["series", "batch", "value"];
    files.push(("plots/accuracy_bars.csv".to_string(), csv_bytes(&header, series(report.accuracy.as_ref()))?));
    files.push((
        "plots/transformation_bars.csv".to_string(),
        csv_bytes(&header, series(report.transform.as_ref().map(|t| &t.rates)))?,
    ));
    files.push((
        "plots/hate_lines.csv".to_string(),
        csv_bytes(&header, series(report.hate.as_ref().map(|h| &h.counts)))?,
    ));

    let mut heat = Vec::new();
    if let Some(m) = &report.sentiment {
        for (source, row) in m.sources.iter().zip(&m.counts) {
            let mut line = vec![source.clone()];
            line.extend(row.iter().map(usize::to_string));
            heat.push(line);
        }
    }
    let mut heat_header = vec!["source"];
    heat_header.extend(SentimentLabel::ALL.iter().map(|l| l.as_str()));
    files.push(("plots/sentiment_heatmap.csv".to_string(), csv_bytes(&heat_header, heat)?));

    let points = report.projection.iter().flat_map(|p| &p.points).map(|p| {
        vec![p.record_id.clone(), p.source.clone(), format!("{:.6}", p.x), format!("{:.6}", p.y)]
    });
    files.push((
        "plots/projection.csv".to_string(),
        csv_bytes(&["record_id", "source", "x", "y"], points)?,
    ));
    Ok(files)
}

fn md_batch_table(out: &mut String, t: &BatchTable) {
    let suffix = match t.unit {
        Unit::Percent => " (%)",
        Unit::Count => "",
    };
    let _ = writeln!(out, "## {}\n", t.title);
    let mut header = String::from("| Batch No. |");
    let mut rule = String::from("|---|");
    for c in &t.columns {
        let _ = write!(header, " {c}{suffix} |");
        rule.push_str("---|");
    }
    let _ = writeln!(out, "{header}\n{rule}");
    for r in &t.rows {
        let cells: Vec<String> = r.values.iter().map(|v| v.map_or("-".to_string(), |v| t.unit.format(v))).collect();
        let _ = writeln!(out, "| {} | {} |", r.batch, cells.join(" | "));
    }
    let summary = t.summary();
    let line = |f: fn(&SummaryStat) -> f64| -> String {
        summary
            .iter()
            .map(|s| s.as_ref().map_or("-".to_string(), |s| fmt_pct(f(s))))
            .collect::<Vec<_>>()
            .join(" | ")
    };
    let _ = writeln!(out, "| Mean | {} |", line(|s| s.mean));
    let _ = writeln!(out, "| Std | {} |\n", line(|s| s.std));
}

/// The Markdown report.
pub fn markdown(report: &RunReport) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "# Run report: {}\n", report.run_id);
    let _ = writeln!(out, "- Seed: {}", report.seed);
    if !report.provenance.providers.is_empty() {
        let _ = writeln!(out, "- Providers: {}", report.provenance.providers.join(", "));
    }
    for (path, sha) in &report.provenance.inputs {
        let _ = writeln!(out, "- Input `{path}`: sha256 {sha}");
    }
    if let Some(at) = &report.provenance.generated_at {
        let _ = writeln!(out, "- Generated: {at}");
    }
    if let Some(p) = &report.projection {
        let _ = writeln!(out, "- Projection method: {}", p.method.to_uppercase());
    }
    let mut warnings: Vec<String> = report.warnings.clone();
    warnings.extend(report.missing_sections().iter().map(|s| format!("section `{s}` not available; skipped")));
    if !warnings.is_empty() {
        out.push('\n');
        for w in &warnings {
            let _ = writeln!(out, "> Warning: {w}");
        }
    }
    out.push('\n');

    if let Some(t) = &report.accuracy {
        md_batch_table(&mut out, t);
    }
    if let Some(t) = &report.transform {
        md_batch_table(&mut out, &t.rates);
        let _ = writeln!(out, "## Transformation outcomes\n\n| Model | Success | Fail | Refusal | Error |\n|---|---|---|---|---|");
        for c in &t.counts {
            let _ = writeln!(out, "| {} | {} | {} | {} | {} |", c.model, c.success, c.fail(), c.refusal, c.error);
        }
        out.push('\n');
    }
    if let Some(h) = &report.hate {
        md_batch_table(&mut out, &h.counts);
        let _ = writeln!(out, "Lexicon size: {}\n", h.lexicon_size);
        if !h.span.is_empty() {
            let _ = writeln!(out, "## Mean word-level metrics\n\n| Model | Precision | Recall | F1 | IoU |\n|---|---|---|---|---|");
            for (m, s) in &h.span {
                let _ = writeln!(
                    out,
                    "| {m} | {} | {} | {} | {} |",
                    fmt_sim(s.precision),
                    fmt_sim(s.recall),
                    fmt_sim(s.f1),
                    fmt_sim(s.iou)
                );
            }
            out.push('\n');
        }
    }
    if let Some(m) = &report.sentiment {
        let _ = writeln!(out, "## Sentiment label counts\n");
        let mut header = String::from("| Source |");
        let mut rule = String::from("|---|");
        for l in SentimentLabel::ALL {
            let _ = write!(header, " {l} |");
            rule.push_str("---|");
        }
        let _ = writeln!(out, "{header}\n{rule}");
        for (s, row) in m.sources.iter().zip(&m.counts) {
            let cells: Vec<String> = row.iter().map(usize::to_string).collect();
            let _ = writeln!(out, "| {s} | {} |", cells.join(" | "));
        }
        out.push('\n');
    }
    if let Some(tables) = &report.similarity {
        let _ = writeln!(out, "## Cosine similarity by batch (mean ± std)\n");
        if !tables.is_empty() {
            let mut header = String::from("| Batch No. |");
            let mut rule = String::from("|---|");
            for t in tables {
                let _ = write!(header, " {} |", t.label());
                rule.push_str("---|");
            }
            let _ = writeln!(out, "{header}\n{rule}");
            let batches: BTreeSet<usize> = tables.iter().flat_map(|t| t.per_batch.iter().map(|b| b.batch)).collect();
            for b in batches {
                let cells: Vec<String> = tables
                    .iter()
                    .map(|t| {
                        t.per_batch
                            .iter()
                            .find(|x| x.batch == b)
                            .map_or("-".to_string(), |x| format!("{} ± {}", fmt_sim(x.mean), fmt_sim(x.std)))
                    })
                    .collect();
                let _ = writeln!(out, "| {b} | {} |", cells.join(" | "));
            }
            let overall: Vec<String> = tables
                .iter()
                .map(|t| format!("{} ± {}", fmt_sim(t.overall.mean), fmt_sim(t.overall.std)))
                .collect();
            let _ = writeln!(out, "| * | {} |", overall.join(" | "));
            let _ = writeln!(out, "\n\\* mean over all batches\n");
        }
    }
    if let Some(sections) = &report.ngrams {
        for s in sections {
            let kind = if s.table.n == 2 { "Bigrams" } else { "Trigrams" };
            let _ = writeln!(out, "## {kind}: {}\n\n| Rank | N-gram | Count |\n|---|---|---|", s.label);
            for (i, (g, c)) in s.table.entries.iter().enumerate() {
                let words: Vec<String> = g.iter().map(|w| report.word(w)).collect();
                let _ = writeln!(out, "| {} | {} | {c} |", i + 1, words.join(" "));
            }
            out.push('\n');
        }
    }
    if let Some(l) = &report.lexicon {
        let _ = writeln!(
            out,
            "## Log-odds lexicon\n\nPrior: {} (alpha0 = {}), z threshold {}, {} words selected.\n",
            l.prior,
            l.alpha0,
            l.z_threshold,
            l.words.len()
        );
        let _ = writeln!(out, "| Term | Delta | z |\n|---|---|---|");
        for s in l.scores.iter().take(20) {
            let _ = writeln!(out, "| {} | {:.3} | {:.3} |", report.word(&s.term), s.delta, s.z);
        }
        out.push('\n');
    }
    out
}

/// Writes the selected formats under `dir` and returns the written paths in
/// write order.
pub fn emit_report(report: &RunReport, dir: &Path, formats: Formats) -> Result<Vec<PathBuf>, ReportError> {
    let mut files: Vec<(String, Vec<u8>)> = Vec::new();
    if formats.markdown {
        files.push(("report.md".into(), markdown(report).into_bytes()));
    }
    if formats.json {
        let mut json = serde_json::to_vec_pretty(report).map_err(|e| ReportError::Serialize(e.to_string()))?;
        json.push(b'\n');
        files.push(("report.json".into(), json));
    }
    if formats.csv {
        files.extend(csv_tables(report)?);
    }
    if formats.plot_data {
        files.extend(plot_data(report)?);
    }
    let mut written = Vec::with_capacity(files.len());
    for (rel, bytes) in files {
        let path = dir.join(rel);
        write_file(&path, &bytes)?;
        written.push(path);
    }
    Ok(written)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn summarize_examples() {
        let s = summarize(&[5.0]).unwrap();
        assert_eq!((s.mean, s.std, s.n), (5.0, 0.0, 1));
        assert!(matches!(summarize(&[]), Err(ReportError::Empty)));
        let s = summarize(&[2.0, 4.0, 4.0, 4.0, 5.0, 5.0, 7.0, 9.0]).unwrap();
        assert_eq!((s.mean, s.std), (5.0, 2.0));
    }

    #[test]
    fn float_formatting() {
        assert_eq!(fmt_sim(0.51371), "0.514");
        assert_eq!(fmt_pct(81.45454), "81.5");
        assert_eq!(fmt_pct(80.0), "80.0");
    }

    #[test]
    fn formats_parse() {
        assert_eq!("csv,json,markdown,svg_plotdata".parse::<Formats>().unwrap(), Formats::ALL);
        assert!("pdf".parse::<Formats>().is_err());
    }

    #[test]
    fn batch_table_from_rates() {
        let rates = vec![
            BatchRate { batch: 2, model: "b".into(), count: 1, size: 2, rate: 50.0 },
            BatchRate { batch: 1, model: "a".into(), count: 2, size: 2, rate: 100.0 },
            BatchRate { batch: 1, model: "b".into(), count: 0, size: 2, rate: 0.0 },
        ];
        let t = BatchTable::from_rates("T", "m", &rates);
        assert_eq!(t.columns, vec!["b", "a"]);
        assert_eq!(t.rows.iter().map(|r| r.batch).collect::<Vec<_>>(), vec![1, 2]);
        assert_eq!(t.column("b"), vec![0.0, 50.0]);
        assert_eq!(t.column("a"), vec![100.0]);
    }

    #[test]
    fn empty_report_writes_header_only_files() {
        let dir = tempfile::tempdir().unwrap();
        let paths = emit_report(&RunReport::new("empty", 1), dir.path(), Formats::ALL).unwrap();
        let sim = std::fs::read_to_string(dir.path().join("tables/similarity.csv")).unwrap();
        assert_eq!(sim, "pair,batch,mean,std\n");
        let md = std::fs::read_to_string(dir.path().join("report.md")).unwrap();
        assert!(md.contains("> Warning: section `similarity` not available; skipped"));
        assert!(paths.len() > 5);
    }

    proptest! {
        #[test]
        fn summarize_matches_two_pass(values in prop::collection::vec(-1e3f64..1e3, 1..50)) {
            let s = summarize(&values).unwrap();
            let n = values.len() as f64;
            let mut mean = 0.0;
            for v in &values { mean += v; }
            mean /= n;
            let mut ss = 0.0;
            for v in &values { ss += (v - mean) * (v - mean); }
            let std = (ss / n).sqrt();
            prop_assert!((s.mean - mean).abs() <= 1e-9 * mean.abs().max(1.0));
            prop_assert!((s.std - std).abs() <= 1e-9 * std.max(1.0));
            prop_assert!(s.std >= 0.0);
        }
    }
}
