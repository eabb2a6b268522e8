//! Corpus ingestion and human-coding round trips.
//!
//! A corpus is loaded from a CSV metadata file whose texts live either in a
//! named column or in plain-text files referenced by a filename column. All
//! non-reserved columns ride along as document metadata. Ingest is atomic:
//! any row-level problem fails the whole load with the offending row number.
//!
//! For validation, [`export_sample`] draws a deterministic sample for human
//! coders as a CSV with one empty column per coder, and [`import_codes`] reads
//! the filled file back (or a long-format `document_id,coder_id,value` file).

use std::collections::{HashMap, HashSet};
use std::fs;
use std::path::{Path, PathBuf};

use indexmap::IndexMap;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::chunker::estimate_tokens;

/// Column names that may not appear as plain metadata: they are either
/// consumed by ingest or produced by the results merge.
pub const RESERVED_COLUMNS: &[&str] = &["id", "answer", "motivation"];

/// One unit of analysis.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Document {
    pub id: String,
    pub text: String,
    /// All non-reserved source columns, in source column order.
    pub metadata: IndexMap<String, String>,
    pub token_estimate: u64,
}

/// An ordered, duplicate-free collection of documents.
#[derive(Debug, Clone)]
pub struct Corpus {
    documents: Vec<Document>,
    by_id: HashMap<String, usize>,
    source_digest: String,
}

impl Corpus {
    /// Build a corpus, enforcing unique non-empty ids and non-blank texts.
    /// Token estimates are recomputed so they always match the estimator.
    pub fn from_documents(mut documents: Vec<Document>) -> Result<Self, CorpusError> {
        let mut by_id = HashMap::with_capacity(documents.len());
        for (i, doc) in documents.iter_mut().enumerate() {
            let row = i as u64 + 1;
            if doc.id.trim().is_empty() {
                return Err(CorpusError::EmptyId { row });
            }
            if doc.text.trim().is_empty() {
                return Err(CorpusError::EmptyText { row });
            }
            doc.token_estimate = estimate_tokens(&doc.text);
            if by_id.insert(doc.id.clone(), i).is_some() {
                return Err(CorpusError::DuplicateId {
                    row,
                    id: doc.id.clone(),
                });
            }
        }
        let source_digest = compute_digest(&documents);
        Ok(Self {
            documents,
            by_id,
            source_digest,
        })
    }

    pub fn documents(&self) -> &[Document] {
        &self.documents
    }

    pub fn len(&self) -> usize {
        self.documents.len()
    }

    pub fn is_empty(&self) -> bool {
        self.documents.is_empty()
    }

    pub fn get(&self, id: &str) -> Option<&Document> {
        self.by_id.get(id).map(|&i| &self.documents[i])
    }

    pub fn contains(&self, id: &str) -> bool {
        self.by_id.contains_key(id)
    }

    /// Hex SHA-256 over the ordered (id, text, metadata) content.
    pub fn source_digest(&self) -> &str {
        &self.source_digest
    }
}

/// Where document texts come from during ingest.
#[derive(Debug, Clone)]
pub enum TextSource {
    /// A CSV column holding the text inline.
    Column(String),
    /// A directory of plain-text files named by a filename column.
    Directory { dir: PathBuf, file_column: String },
}

#[derive(Debug, Clone)]
pub struct IngestOptions {
    pub id_column: String,
}

impl Default for IngestOptions {
    fn default() -> Self {
        Self {
            id_column: "id".to_string(),
        }
    }
}

/// Human-assigned codes keyed by (document, coder).
#[derive(Debug, Clone, Default)]
pub struct HumanCodes {
    entries: Vec<CodeEntry>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CodeEntry {
    pub document_id: String,
    pub coder_id: String,
    pub value: f64,
}

impl HumanCodes {
    pub fn from_entries(entries: Vec<CodeEntry>) -> Result<Self, CorpusError> {
        let mut seen = HashSet::new();
        for (i, e) in entries.iter().enumerate() {
            if !seen.insert((e.document_id.clone(), e.coder_id.clone())) {
                return Err(CorpusError::DuplicateCode {
                    row: i as u64 + 1,
                    document_id: e.document_id.clone(),
                    coder_id: e.coder_id.clone(),
                });
            }
        }
        Ok(Self { entries })
    }

    pub fn entries(&self) -> &[CodeEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Distinct coder ids in first-seen order.
    pub fn coders(&self) -> Vec<&str> {
        let mut out: Vec<&str> = Vec::new();
        for e in &self.entries {
            if !out.contains(&e.coder_id.as_str()) {
                out.push(&e.coder_id);
            }
        }
        out
    }

    /// Every document id must exist in the corpus.
    pub fn validate_against(&self, corpus: &Corpus) -> Result<(), CorpusError> {
        for e in &self.entries {
            if !corpus.contains(&e.document_id) {
                return Err(CorpusError::UnknownDocument {
                    id: e.document_id.clone(),
                });
            }
        }
        Ok(())
    }
}

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("missing required column '{column}'")]
    MissingColumn { column: String },
    #[error("row {row}: text file not found: {path}")]
    MissingTextFile { row: u64, path: PathBuf },
    #[error("row {row}: duplicate id '{id}'")]
    DuplicateId { row: u64, id: String },
    #[error("row {row}: empty id")]
    EmptyId { row: u64 },
    #[error("row {row}: text is empty after trimming")]
    EmptyText { row: u64 },
    #[error("column '{column}' is reserved and cannot appear as metadata")]
    ReservedColumn { column: String },
    #[error("duplicate column '{column}' in header")]
    DuplicateColumn { column: String },
    #[error("row {row}: file {path} is not valid UTF-8")]
    InvalidUtf8 { row: u64, path: PathBuf },
    #[error("sample size must be between 1 and {available}, got {requested}")]
    SampleTooLarge { requested: usize, available: usize },
    #[error("row {row}: value '{value}' does not parse as a decimal")]
    MalformedValue { row: u64, value: String },
    #[error("row {row}: duplicate code for document '{document_id}' by coder '{coder_id}'")]
    DuplicateCode {
        row: u64,
        document_id: String,
        coder_id: String,
    },
    #[error("document id '{id}' does not exist in the corpus")]
    UnknownDocument { id: String },
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> CorpusError + '_ {
    move |source| CorpusError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Load a corpus from a CSV metadata file plus a text source.
///
/// One document per row, in row order; all non-reserved columns become
/// metadata; the load fails atomically on the first bad row.
pub fn load_corpus(
    metadata_path: &Path,
    source: &TextSource,
    options: &IngestOptions,
) -> Result<Corpus, CorpusError> {
    let mut reader = csv::Reader::from_path(metadata_path)?;
    let headers: Vec<String> = reader
        .headers()?
        .iter()
        .map(|h| h.trim().to_string())
        .collect();

    let mut seen = HashSet::new();
    for h in &headers {
        if !seen.insert(h.as_str()) {
            return Err(CorpusError::DuplicateColumn { column: h.clone() });
        }
    }

    let id_col = find_column(&headers, &options.id_column)?;
    let (text_col, text_dir) = match source {
        TextSource::Column(name) => (find_column(&headers, name)?, None),
        TextSource::Directory { dir, file_column } => {
            (find_column(&headers, file_column)?, Some(dir.as_path()))
        }
    };

    // Everything except the id and text/file columns is metadata, and must
    // not collide with a reserved name.
    let mut meta_cols = Vec::new();
    for (i, h) in headers.iter().enumerate() {
        if i == id_col || i == text_col {
            continue;
        }
        if RESERVED_COLUMNS.contains(&h.as_str()) || h == &options.id_column {
            return Err(CorpusError::ReservedColumn { column: h.clone() });
        }
        meta_cols.push(i);
    }

    let mut documents = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let record = record?;
        let row = i as u64 + 1;
        let id = record.get(id_col).unwrap_or("").trim().to_string();
        if id.is_empty() {
            return Err(CorpusError::EmptyId { row });
        }

        let text = match text_dir {
            None => record.get(text_col).unwrap_or("").to_string(),
            Some(dir) => {
                let file = record.get(text_col).unwrap_or("").trim();
                let path = dir.join(file);
                if !path.is_file() {
                    return Err(CorpusError::MissingTextFile { row, path });
                }
                let bytes = fs::read(&path).map_err(io_err(&path))?;
                String::from_utf8(bytes).map_err(|_| CorpusError::InvalidUtf8 { row, path })?
            }
        };
        if text.trim().is_empty() {
            return Err(CorpusError::EmptyText { row });
        }

        let mut metadata = IndexMap::new();
        for &c in &meta_cols {
            metadata.insert(headers[c].clone(), record.get(c).unwrap_or("").to_string());
        }

        documents.push(Document {
            id,
            text,
            metadata,
            token_estimate: 0,
        });
    }

    Corpus::from_documents(documents)
}

fn find_column(headers: &[String], name: &str) -> Result<usize, CorpusError> {
    headers
        .iter()
        .position(|h| h == name)
        .ok_or_else(|| CorpusError::MissingColumn {
            column: name.to_string(),
        })
}

/// Write the normalized corpus CSV (`id,text,<metadata...>`) plus a sidecar
/// `<path>.digest` file holding the source digest.
pub fn write_normalized(corpus: &Corpus, path: &Path) -> Result<(), CorpusError> {
    let mut meta_cols: Vec<String> = Vec::new();
    for doc in corpus.documents() {
        for key in doc.metadata.keys() {
            if !meta_cols.contains(key) {
                meta_cols.push(key.clone());
            }
        }
    }

    let mut writer = csv::Writer::from_path(path)?;
    let mut header = vec!["id".to_string(), "text".to_string()];
    header.extend(meta_cols.iter().cloned());
    writer.write_record(&header)?;
    for doc in corpus.documents() {
        let mut row = vec![doc.id.clone(), doc.text.clone()];
        for key in &meta_cols {
            row.push(doc.metadata.get(key).cloned().unwrap_or_default());
        }
        writer.write_record(&row)?;
    }
    writer.flush().map_err(|e| CorpusError::Io {
        path: path.to_path_buf(),
        source: e,
    })?;

    let sidecar = digest_sidecar_path(path);
    fs::write(&sidecar, format!("{}\n", corpus.source_digest())).map_err(io_err(&sidecar))?;
    Ok(())
}

/// Path of the digest sidecar written next to a normalized corpus file.
pub fn digest_sidecar_path(path: &Path) -> PathBuf {
    let mut os = path.as_os_str().to_os_string();
    os.push(".digest");
    PathBuf::from(os)
}

/// Load a normalized corpus written by [`write_normalized`].
pub fn load_normalized(path: &Path) -> Result<Corpus, CorpusError> {
    load_corpus(
        path,
        &TextSource::Column("text".to_string()),
        &IngestOptions::default(),
    )
}

/// Deterministically sample `n` documents and write a coding sheet with
/// columns `id,text` plus one empty column per coder.
///
/// Selection is a partial Fisher-Yates shuffle driven by a ChaCha8 stream
/// seeded with `seed`; the chosen rows are emitted in source order.
pub fn export_sample(
    corpus: &Corpus,
    n: usize,
    seed: u64,
    coders: &[String],
    out_path: &Path,
) -> Result<(), CorpusError> {
    let chosen = sample_indices(corpus.len(), n, seed)?;

    let mut writer = csv::Writer::from_path(out_path)?;
    let mut header = vec!["id".to_string(), "text".to_string()];
    header.extend(coders.iter().cloned());
    writer.write_record(&header)?;
    for &i in &chosen {
        let doc = &corpus.documents()[i];
        let mut row = vec![doc.id.clone(), doc.text.clone()];
        row.extend(std::iter::repeat_n(String::new(), coders.len()));
        writer.write_record(&row)?;
    }
    writer.flush().map_err(|e| CorpusError::Io {
        path: out_path.to_path_buf(),
        source: e,
    })?;
    Ok(())
}

/// The documented sampling procedure: seed ChaCha8 with `seed`, run a partial
/// Fisher-Yates over the index vector drawing `random_range(i..len)` at each
/// step, keep the first `n` slots, and sort them ascending.
pub fn sample_indices(len: usize, n: usize, seed: u64) -> Result<Vec<usize>, CorpusError> {
    if n == 0 || n > len {
        return Err(CorpusError::SampleTooLarge {
            requested: n,
            available: len,
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut idx: Vec<usize> = (0..len).collect();
    for i in 0..n {
        let j = rng.random_range(i..len);
        idx.swap(i, j);
    }
    let mut chosen = idx[..n].to_vec();
    chosen.sort_unstable();
    Ok(chosen)
}

/// Read human codes from CSV.
///
/// Two layouts are accepted: the long form with `document_id,coder_id,value`
/// columns, and the wide coding-sheet form written by [`export_sample`]
/// (`id,text,<coder...>`). Blank cells are missing, not zero.
pub fn import_codes(path: &Path) -> Result<HumanCodes, CorpusError> {
    let mut reader = csv::Reader::from_path(path)?;
    let headers: Vec<String> = reader
        .headers()?
        .iter()
        .map(|h| h.trim().to_string())
        .collect();

    let long_cols =
        ["document_id", "coder_id", "value"].map(|c| headers.iter().position(|h| h == c));

    let mut entries = Vec::new();
    if let [Some(doc_col), Some(coder_col), Some(value_col)] = long_cols {
        for (i, record) in reader.records().enumerate() {
            let record = record?;
            let row = i as u64 + 1;
            let raw = record.get(value_col).unwrap_or("").trim();
            if raw.is_empty() {
                continue;
            }
            entries.push(CodeEntry {
                document_id: record.get(doc_col).unwrap_or("").trim().to_string(),
                coder_id: record.get(coder_col).unwrap_or("").trim().to_string(),
                value: parse_decimal(raw, row)?,
            });
        }
    } else {
        let id_col = find_column(&headers, "id").map_err(|_| CorpusError::MissingColumn {
            column: "document_id".to_string(),
        })?;
        let coder_cols: Vec<usize> = headers
            .iter()
            .enumerate()
            .filter(|(i, h)| *i != id_col && h.as_str() != "text")
            .map(|(i, _)| i)
            .collect();
        for (i, record) in reader.records().enumerate() {
            let record = record?;
            let row = i as u64 + 1;
            let doc_id = record.get(id_col).unwrap_or("").trim().to_string();
            for &c in &coder_cols {
                let raw = record.get(c).unwrap_or("").trim();
                if raw.is_empty() {
                    continue;
                }
                entries.push(CodeEntry {
                    document_id: doc_id.clone(),
                    coder_id: headers[c].clone(),
                    value: parse_decimal(raw, row)?,
                });
            }
        }
    }

    HumanCodes::from_entries(entries)
}

fn parse_decimal(raw: &str, row: u64) -> Result<f64, CorpusError> {
    let value: f64 = raw.parse().map_err(|_| CorpusError::MalformedValue {
        row,
        value: raw.to_string(),
    })?;
    if !value.is_finite() {
        return Err(CorpusError::MalformedValue {
            row,
            value: raw.to_string(),
        });
    }
    Ok(value)
}

fn compute_digest(documents: &[Document]) -> String {
    let mut hasher = Sha256::new();
    for doc in documents {
        update_field(&mut hasher, doc.id.as_bytes());
        update_field(&mut hasher, doc.text.as_bytes());
        hasher.update((doc.metadata.len() as u64).to_le_bytes());
        for (k, v) in &doc.metadata {
            update_field(&mut hasher, k.as_bytes());
            update_field(&mut hasher, v.as_bytes());
        }
    }
    hex::encode(hasher.finalize())
}

fn update_field(hasher: &mut Sha256, bytes: &[u8]) {
    hasher.update((bytes.len() as u64).to_le_bytes());
    hasher.update(bytes);
}
