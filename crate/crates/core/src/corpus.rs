//! Labelled text datasets: loading from CSV/JSONL, batching and stratified
//! sampling.
//!
//! Loading never drops a row silently. Rows that cannot become a
//! [`TextRecord`] are listed in the [`LoadReport`] with a reason; duplicate ids
//! are fatal because every downstream join is keyed on them.

use std::collections::HashSet;
use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand_chacha::ChaCha8Rng;
use rand_core::{RngCore, SeedableRng};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("csv error in {path}: {source}")]
    Csv {
        path: PathBuf,
        #[source]
        source: csv::Error,
    },
    #[error("schema error: {0}")]
    Schema(String),
    #[error("empty record id")]
    EmptyId,
    #[error("duplicate record id {id:?} (row {row})")]
    DuplicateId { id: String, row: usize },
    #[error("batch size must be at least 1")]
    InvalidBatchSize,
    #[error("category {category} has {available} records, {requested} requested (short by {})", requested - available)]
    InsufficientRecords {
        category: Category,
        requested: usize,
        available: usize,
    },
}

/// Abuse category of a record.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Category {
    Religion,
    Nsfw,
    Racism,
    Discrimination,
    NonAbusive,
}

impl Category {
    pub const ABUSIVE: [Category; 4] = [
        Category::Religion,
        Category::Nsfw,
        Category::Racism,
        Category::Discrimination,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Category::Religion => "religion",
            Category::Nsfw => "nsfw",
            Category::Racism => "racism",
            Category::Discrimination => "discrimination",
            Category::NonAbusive => "non_abusive",
        }
    }

    pub fn is_abusive(self) -> bool {
        self != Category::NonAbusive
    }
}

impl fmt::Display for Category {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Category {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "religion" => Ok(Category::Religion),
            "nsfw" => Ok(Category::Nsfw),
            "racism" => Ok(Category::Racism),
            "discrimination" => Ok(Category::Discrimination),
            "non_abusive" | "non-abusive" | "nonabusive" => Ok(Category::NonAbusive),
            other => Err(format!("invalid category {other:?}")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Platform {
    Reddit,
    Fourchan,
    Twitter,
    Other,
}

impl Platform {
    pub fn as_str(self) -> &'static str {
        match self {
            Platform::Reddit => "reddit",
            Platform::Fourchan => "fourchan",
            Platform::Twitter => "twitter",
            Platform::Other => "other",
        }
    }
}

impl FromStr for Platform {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "reddit" => Ok(Platform::Reddit),
            "fourchan" | "4chan" => Ok(Platform::Fourchan),
            "twitter" | "x" => Ok(Platform::Twitter),
            "other" => Ok(Platform::Other),
            other => Err(format!("invalid platform {other:?}")),
        }
    }
}

/// One tweet or review.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TextRecord {
    pub id: String,
    pub text: String,
    /// 1 = abusive, 0 = non-abusive.
    #[serde(rename = "label", default, skip_serializing_if = "Option::is_none")]
    pub abuse_label: Option<u8>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub category: Option<Category>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub platform: Option<Platform>,
}

impl TextRecord {
    pub fn new(id: impl Into<String>, text: impl Into<String>) -> Self {
        TextRecord {
            id: id.into(),
            text: text.into(),
            abuse_label: None,
            category: None,
            platform: None,
        }
    }

    pub fn with_label(mut self, label: u8) -> Self {
        self.abuse_label = Some(label);
        self
    }

    pub fn with_category(mut self, category: Category) -> Self {
        self.category = Some(category);
        self
    }

    /// Abusive when labelled 1, or when unlabelled but carrying an abusive category.
    pub fn is_abusive(&self) -> bool {
        match (self.abuse_label, self.category) {
            (Some(label), _) => label == 1,
            (None, Some(category)) => category.is_abusive(),
            (None, None) => false,
        }
    }
}

/// Ordered, immutable collection of records with unique ids.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Dataset {
    source_name: String,
    records: Vec<TextRecord>,
}

impl Dataset {
    pub fn new(source_name: impl Into<String>, records: Vec<TextRecord>) -> Result<Self, CorpusError> {
        let mut seen = HashSet::with_capacity(records.len());
        for (row, record) in records.iter().enumerate() {
            if record.id.is_empty() {
                return Err(CorpusError::EmptyId);
            }
            if !seen.insert(record.id.as_str()) {
                return Err(CorpusError::DuplicateId {
                    id: record.id.clone(),
                    row: row + 1,
                });
            }
        }
        Ok(Dataset {
            source_name: source_name.into(),
            records,
        })
    }

    pub fn empty(source_name: impl Into<String>) -> Self {
        Dataset {
            source_name: source_name.into(),
            records: Vec::new(),
        }
    }

    pub fn source_name(&self) -> &str {
        &self.source_name
    }

    pub fn records(&self) -> &[TextRecord] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn iter(&self) -> std::slice::Iter<'_, TextRecord> {
        self.records.iter()
    }

    pub fn get(&self, id: &str) -> Option<&TextRecord> {
        self.records.iter().find(|r| r.id == id)
    }

    /// Keeps records matching `keep`, preserving order.
    pub fn filter(&self, keep: impl Fn(&TextRecord) -> bool) -> Dataset {
        Dataset {
            source_name: self.source_name.clone(),
            records: self.records.iter().filter(|r| keep(r)).cloned().collect(),
        }
    }
}

impl<'a> IntoIterator for &'a Dataset {
    type Item = &'a TextRecord;
    type IntoIter = std::slice::Iter<'a, TextRecord>;

    fn into_iter(self) -> Self::IntoIter {
        self.records.iter()
    }
}

/// A contiguous slice of a dataset. `index` is 1-based.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Batch {
    pub index: usize,
    pub records: Vec<TextRecord>,
}

impl Batch {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = &str> {
        self.records.iter().map(|r| r.id.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DataFormat {
    Csv,
    Jsonl,
}

impl FromStr for DataFormat {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "csv" => Ok(DataFormat::Csv),
            "jsonl" | "ndjson" => Ok(DataFormat::Jsonl),
            other => Err(format!("unknown dataset format {other:?}")),
        }
    }
}

/// Field (JSONL) or column (CSV) names for each record attribute.
///
/// When `id` is `None` records are named `row-<n>` after their 1-based row.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct Schema {
    pub id: Option<String>,
    pub text: String,
    pub label: Option<String>,
    pub category: Option<String>,
    pub platform: Option<String>,
}

impl Default for Schema {
    fn default() -> Self {
        Schema {
            id: Some("id".into()),
            text: "text".into(),
            label: Some("label".into()),
            category: Some("category".into()),
            platform: Some("platform".into()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Rejection {
    pub row: usize,
    pub id: Option<String>,
    pub reason: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct LoadReport {
    pub rows_read: usize,
    pub rows_kept: usize,
    pub rejected: Vec<Rejection>,
}

impl LoadReport {
    pub fn rows_rejected(&self) -> usize {
        self.rejected.len()
    }
}

/// Raw attribute values pulled out of one row before validation.
#[derive(Default)]
struct RawRow {
    id: Option<String>,
    text: Option<String>,
    label: Option<String>,
    category: Option<String>,
    platform: Option<String>,
}

fn build_record(row: usize, raw: RawRow) -> Result<TextRecord, Rejection> {
    let id = raw.id.unwrap_or_else(|| format!("row-{row}"));
    let reject = |reason: String| Rejection {
        row,
        id: Some(id.clone()),
        reason,
    };
    if id.trim().is_empty() {
        return Err(Rejection {
            row,
            id: None,
            reason: "missing id".into(),
        });
    }
    let text = match raw.text {
        None => return Err(reject("missing text".into())),
        Some(t) if t.trim().is_empty() => return Err(reject("empty text".into())),
        Some(t) => t,
    };
    let abuse_label = match raw.label.as_deref().map(str::trim) {
        None | Some("") => None,
        Some("0") => Some(0),
        Some("1") => Some(1),
        Some(other) => return Err(reject(format!("invalid label {other:?}"))),
    };
    let category = match raw.category.as_deref().map(str::trim) {
        None | Some("") => None,
        Some(c) => Some(c.parse::<Category>().map_err(reject)?),
    };
    let platform = match raw.platform.as_deref().map(str::trim) {
        None | Some("") => None,
        Some(p) => Some(p.parse::<Platform>().map_err(reject)?),
    };
    Ok(TextRecord {
        id,
        text,
        abuse_label,
        category,
        platform,
    })
}

fn json_scalar(value: &serde_json::Value) -> Option<String> {
    match value {
        serde_json::Value::Null => None,
        serde_json::Value::String(s) => Some(s.clone()),
        serde_json::Value::Bool(b) => Some(if *b { "1" } else { "0" }.into()),
        other => Some(other.to_string()),
    }
}

/// Loads a dataset. Row-level problems are reported, not fatal; I/O errors and
/// duplicate ids are.
pub fn load_dataset(path: &Path, format: DataFormat, schema: &Schema) -> Result<(Dataset, LoadReport), CorpusError> {
    let file = File::open(path).map_err(|source| CorpusError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let source_name = path
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_default();
    match format {
        DataFormat::Jsonl => read_jsonl(BufReader::new(file), path, &source_name, schema),
        DataFormat::Csv => read_csv(file, path, &source_name, schema),
    }
}

fn finish(
    source_name: &str,
    rows: Vec<(usize, Result<TextRecord, Rejection>)>,
) -> Result<(Dataset, LoadReport), CorpusError> {
    let mut report = LoadReport::default();
    let mut records = Vec::new();
    let mut seen = HashSet::new();
    for (row, result) in rows {
        report.rows_read += 1;
        match result {
            Ok(record) => {
                if !seen.insert(record.id.clone()) {
                    return Err(CorpusError::DuplicateId { id: record.id, row });
                }
                records.push(record);
            }
            Err(rejection) => {
                log::warn!("row {} rejected: {}", rejection.row, rejection.reason);
                report.rejected.push(rejection);
            }
        }
    }
    report.rows_kept = records.len();
    Ok((
        Dataset {
            source_name: source_name.to_string(),
            records,
        },
        report,
    ))
}

fn read_jsonl(
    reader: impl BufRead,
    path: &Path,
    source_name: &str,
    schema: &Schema,
) -> Result<(Dataset, LoadReport), CorpusError> {
    let mut rows = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let row = idx + 1;
        let line = line.map_err(|source| CorpusError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let value: serde_json::Value = match serde_json::from_str(&line) {
            Ok(v) => v,
            Err(e) => {
                rows.push((
                    row,
                    Err(Rejection {
                        row,
                        id: None,
                        reason: format!("malformed json: {e}"),
                    }),
                ));
                continue;
            }
        };
        let Some(object) = value.as_object() else {
            rows.push((
                row,
                Err(Rejection {
                    row,
                    id: None,
                    reason: "row is not a json object".into(),
                }),
            ));
            continue;
        };
        let field = |name: &Option<String>| name.as_ref().and_then(|n| object.get(n)).and_then(json_scalar);
        let raw = RawRow {
            id: field(&schema.id),
            text: object.get(&schema.text).and_then(json_scalar),
            label: field(&schema.label),
            category: field(&schema.category),
            platform: field(&schema.platform),
        };
        rows.push((row, build_record(row, raw)));
    }
    finish(source_name, rows)
}

fn read_csv(
    reader: impl Read,
    path: &Path,
    source_name: &str,
    schema: &Schema,
) -> Result<(Dataset, LoadReport), CorpusError> {
    let csv_err = |source| CorpusError::Csv {
        path: path.to_path_buf(),
        source,
    };
    let mut rdr = csv::ReaderBuilder::new().flexible(true).from_reader(reader);
    let headers = rdr.headers().map_err(csv_err)?.clone();
    if headers.is_empty() {
        return finish(source_name, Vec::new());
    }
    let column = |name: &Option<String>| -> Result<Option<usize>, CorpusError> {
        match name {
            None => Ok(None),
            Some(n) => Ok(headers.iter().position(|h| h.trim() == n)),
        }
    };
    let text_col = headers
        .iter()
        .position(|h| h.trim() == schema.text)
        .ok_or_else(|| CorpusError::Schema(format!("text column {:?} not in header", schema.text)))?;
    let id_col = column(&schema.id)?;
    if schema.id.is_some() && id_col.is_none() {
        return Err(CorpusError::Schema(format!("id column {:?} not in header", schema.id)));
    }
    let label_col = column(&schema.label)?;
    let category_col = column(&schema.category)?;
    let platform_col = column(&schema.platform)?;

    let mut rows = Vec::new();
    for (idx, record) in rdr.records().enumerate() {
        let row = idx + 1;
        let record = record.map_err(csv_err)?;
        let get = |col: Option<usize>| col.and_then(|c| record.get(c)).map(str::to_string);
        let raw = RawRow {
            id: get(id_col),
            text: get(Some(text_col)),
            label: get(label_col),
            category: get(category_col),
            platform: get(platform_col),
        };
        rows.push((row, build_record(row, raw)));
    }
    finish(source_name, rows)
}

/// Writes records in the JSONL interchange shape accepted by [`load_dataset`]
/// with the default schema.
pub fn write_jsonl(dataset: &Dataset, mut out: impl Write) -> std::io::Result<()> {
    for record in dataset {
        serde_json::to_writer(&mut out, record)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

pub fn make_batches(dataset: &Dataset, batch_size: usize) -> Result<Vec<Batch>, CorpusError> {
    if batch_size == 0 {
        return Err(CorpusError::InvalidBatchSize);
    }
    Ok(dataset
        .records
        .chunks(batch_size)
        .enumerate()
        .map(|(i, chunk)| Batch {
            index: i + 1,
            records: chunk.to_vec(),
        })
        .collect())
}

/// Draws `per_category` records from each abusive category.
///
/// Each category is shuffled with its own ChaCha8 stream seeded from `seed`
/// (Fisher-Yates driven by `next_u64`), the first `per_category` are kept,
/// and the output lists categories in [`Category::ABUSIVE`] order with records
/// in file order inside each category.
pub fn stratified_sample(dataset: &Dataset, per_category: usize, seed: u64) -> Result<Dataset, CorpusError> {
    let mut records = Vec::with_capacity(per_category * Category::ABUSIVE.len());
    for (ci, category) in Category::ABUSIVE.into_iter().enumerate() {
        let mut pool: Vec<usize> = dataset
            .records
            .iter()
            .enumerate()
            .filter(|(_, r)| r.category == Some(category))
            .map(|(i, _)| i)
            .collect();
        if pool.len() < per_category {
            return Err(CorpusError::InsufficientRecords {
                category,
                requested: per_category,
                available: pool.len(),
            });
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(ci as u64));
        for i in (1..pool.len()).rev() {
            let j = (rng.next_u64() % (i as u64 + 1)) as usize;
            pool.swap(i, j);
        }
        let mut chosen = pool[..per_category].to_vec();
        chosen.sort_unstable();
        records.extend(chosen.into_iter().map(|i| dataset.records[i].clone()));
    }
    Ok(Dataset {
        source_name: dataset.source_name.clone(),
        records,
    })
}

/// Hex SHA-256 of a file's bytes.
pub fn file_sha256(path: &Path) -> Result<String, CorpusError> {
    let bytes = std::fs::read(path).map_err(|source| CorpusError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}
