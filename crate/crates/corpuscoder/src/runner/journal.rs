//! Append-only JSON Lines run journal.
//!
//! The first line is a header binding the journal to a corpus digest, a
//! prompt version hash, and a run-config digest; every following line is an
//! [`AnnotationRecord`]. The effective state folds records per document,
//! last write wins. Each append is fsynced, so after a crash at worst the
//! final line is torn — an unterminated, unparseable tail is discarded
//! (and physically truncated on resume), while newline-terminated garbage
//! means real corruption and is reported with its line number.

use std::fs::{File, OpenOptions};
use std::io::{Read, Seek, Write};
use std::path::{Path, PathBuf};

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::record::AnnotationRecord;

pub const JOURNAL_VERSION: u32 = 1;

/// First line of every journal.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct JournalHeader {
    pub journal_version: u32,
    pub corpus_digest: String,
    pub prompt_version_hash: String,
    pub run_config_digest: String,
}

#[derive(Debug, Error)]
pub enum JournalError {
    #[error("journal {path} is corrupt at line {line}: {detail}")]
    JournalCorrupt {
        path: PathBuf,
        line: u64,
        detail: String,
    },
    #[error("journal {path} is empty or missing its header line")]
    MissingHeader { path: PathBuf },
    #[error("journal was written by a different run: {field} is {found}, expected {expected}")]
    HeaderMismatch {
        field: &'static str,
        found: String,
        expected: String,
    },
    #[error("unsupported journal version {found} (supported: {JOURNAL_VERSION})")]
    UnsupportedVersion { found: u32 },
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> JournalError + '_ {
    move |source| JournalError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// The folded view of a journal.
#[derive(Debug, Clone)]
pub struct JournalState {
    pub header: JournalHeader,
    /// Latest record per document, in first-appearance order.
    pub records: IndexMap<String, AnnotationRecord>,
    /// Valid record lines replayed (before folding).
    pub lines_replayed: u64,
}

/// Result of scanning the raw file.
struct Scan {
    header: JournalHeader,
    records: Vec<AnnotationRecord>,
    /// Byte length of the valid, newline-terminated prefix.
    valid_len: u64,
    /// A record parsed from an unterminated final line, if any.
    unterminated: Option<AnnotationRecord>,
}

fn scan(path: &Path) -> Result<Scan, JournalError> {
    let mut bytes = Vec::new();
    File::open(path)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .map_err(io_err(path))?;

    let mut header: Option<JournalHeader> = None;
    let mut records = Vec::new();
    let mut offset = 0usize;
    let mut valid_len = 0u64;
    let mut line_no = 0u64;
    let mut unterminated = None;

    while offset < bytes.len() {
        let newline = bytes[offset..].iter().position(|&b| b == b'\n');
        let (line, terminated, end) = match newline {
            Some(i) => (&bytes[offset..offset + i], true, offset + i + 1),
            None => (&bytes[offset..], false, bytes.len()),
        };
        line_no += 1;

        if !terminated {
            // A torn final write. Keep it only if it still parses cleanly.
            if header.is_some() {
                if let Ok(text) = std::str::from_utf8(line) {
                    unterminated = serde_json::from_str::<AnnotationRecord>(text).ok();
                }
            }
            break;
        }

        let text = std::str::from_utf8(line).map_err(|_| JournalError::JournalCorrupt {
            path: path.to_path_buf(),
            line: line_no,
            detail: "line is not valid UTF-8".to_string(),
        })?;

        if header.is_none() {
            let parsed: JournalHeader =
                serde_json::from_str(text).map_err(|_| JournalError::MissingHeader {
                    path: path.to_path_buf(),
                })?;
            if parsed.journal_version != JOURNAL_VERSION {
                return Err(JournalError::UnsupportedVersion {
                    found: parsed.journal_version,
                });
            }
            header = Some(parsed);
        } else {
            let record: AnnotationRecord =
                serde_json::from_str(text).map_err(|e| JournalError::JournalCorrupt {
                    path: path.to_path_buf(),
                    line: line_no,
                    detail: e.to_string(),
                })?;
            records.push(record);
        }
        offset = end;
        valid_len = end as u64;
    }

    let header = header.ok_or_else(|| JournalError::MissingHeader {
        path: path.to_path_buf(),
    })?;
    Ok(Scan {
        header,
        records,
        valid_len,
        unterminated,
    })
}

fn fold(records: impl IntoIterator<Item = AnnotationRecord>) -> IndexMap<String, AnnotationRecord> {
    let mut folded = IndexMap::new();
    for record in records {
        folded.insert(record.document_id.clone(), record);
    }
    folded
}

/// Read a journal and fold it into per-document state. An unparseable,
/// unterminated tail is ignored; the file is not modified.
pub fn load_effective_state(path: &Path) -> Result<JournalState, JournalError> {
    let scan = scan(path)?;
    let mut records = scan.records;
    let mut lines = records.len() as u64;
    if let Some(tail) = scan.unterminated {
        records.push(tail);
        lines += 1;
    }
    Ok(JournalState {
        header: scan.header,
        records: fold(records),
        lines_replayed: lines,
    })
}

/// Outcome of [`Journal::repair`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RepairOutcome {
    /// Lines removed (the first corrupt line and everything after it).
    pub dropped_lines: u64,
    /// Valid record lines kept.
    pub kept_records: u64,
}

/// An open, append-only journal.
#[derive(Debug)]
pub struct Journal {
    file: File,
    path: PathBuf,
    header: JournalHeader,
}

impl Journal {
    /// Create a new journal; the header becomes the fsynced first line.
    pub fn create(path: &Path, header: JournalHeader) -> Result<Self, JournalError> {
        let file = OpenOptions::new()
            .create_new(true)
            .write(true)
            .open(path)
            .map_err(io_err(path))?;
        let mut journal = Self {
            file,
            path: path.to_path_buf(),
            header: header.clone(),
        };
        journal.append_line(&serde_json::to_string(&header).expect("header serializes"))?;
        Ok(journal)
    }

    /// Open an existing journal for resuming.
    ///
    /// The stored header must match `expected` field for field. A torn tail
    /// is physically truncated away first; if the tail still parsed as a
    /// record it is re-appended properly terminated, so no data is lost.
    pub fn open_resume(
        path: &Path,
        expected: &JournalHeader,
    ) -> Result<(Self, JournalState), JournalError> {
        let scan = scan(path)?;
        check_header(&scan.header, expected)?;

        let file = OpenOptions::new()
            .write(true)
            .open(path)
            .map_err(io_err(path))?;
        file.set_len(scan.valid_len).map_err(io_err(path))?;
        let mut file = file;
        file.seek(std::io::SeekFrom::End(0)).map_err(io_err(path))?;

        let mut journal = Self {
            file,
            path: path.to_path_buf(),
            header: scan.header.clone(),
        };

        let mut records = scan.records;
        if let Some(tail) = scan.unterminated {
            journal.append(&tail)?;
            records.push(tail);
        }
        let lines = records.len() as u64;
        let state = JournalState {
            header: scan.header,
            records: fold(records),
            lines_replayed: lines,
        };
        Ok((journal, state))
    }

    /// Truncate a corrupt journal back to its longest valid prefix.
    pub fn repair(path: &Path) -> Result<RepairOutcome, JournalError> {
        let mut bytes = Vec::new();
        File::open(path)
            .and_then(|mut f| f.read_to_end(&mut bytes))
            .map_err(io_err(path))?;

        let mut offset = 0usize;
        let mut valid_len = 0u64;
        let mut kept_records = 0u64;
        let mut dropped_lines = 0u64;
        let mut seen_header = false;
        let mut corrupt = false;

        while offset < bytes.len() {
            let Some(i) = bytes[offset..].iter().position(|&b| b == b'\n') else {
                // Unterminated tail: dropped, but not counted as a line.
                break;
            };
            let line = &bytes[offset..offset + i];
            let end = offset + i + 1;

            if corrupt {
                dropped_lines += 1;
                offset = end;
                continue;
            }
            let ok = match std::str::from_utf8(line) {
                Err(_) => false,
                Ok(text) if !seen_header => serde_json::from_str::<JournalHeader>(text).is_ok(),
                Ok(text) => serde_json::from_str::<AnnotationRecord>(text).is_ok(),
            };
            if ok {
                if seen_header {
                    kept_records += 1;
                } else {
                    seen_header = true;
                }
                offset = end;
                valid_len = end as u64;
            } else {
                corrupt = true;
                dropped_lines += 1;
                offset = end;
            }
        }
        if !seen_header {
            return Err(JournalError::MissingHeader {
                path: path.to_path_buf(),
            });
        }

        let file = OpenOptions::new()
            .write(true)
            .open(path)
            .map_err(io_err(path))?;
        file.set_len(valid_len).map_err(io_err(path))?;
        file.sync_data().map_err(io_err(path))?;
        Ok(RepairOutcome {
            dropped_lines,
            kept_records,
        })
    }

    pub fn header(&self) -> &JournalHeader {
        &self.header
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    /// Append one record as a single line and fsync it.
    pub fn append(&mut self, record: &AnnotationRecord) -> Result<(), JournalError> {
        self.append_line(&serde_json::to_string(record).expect("record serializes"))
    }

    fn append_line(&mut self, line: &str) -> Result<(), JournalError> {
        let mut buf = Vec::with_capacity(line.len() + 1);
        buf.extend_from_slice(line.as_bytes());
        buf.push(b'\n');
        self.file.write_all(&buf).map_err(io_err(&self.path))?;
        self.file.sync_data().map_err(io_err(&self.path))?;
        Ok(())
    }
}

fn check_header(found: &JournalHeader, expected: &JournalHeader) -> Result<(), JournalError> {
    let fields = [
        (
            "corpus_digest",
            &found.corpus_digest,
            &expected.corpus_digest,
        ),
        (
            "prompt_version_hash",
            &found.prompt_version_hash,
            &expected.prompt_version_hash,
        ),
        (
            "run_config_digest",
            &found.run_config_digest,
            &expected.run_config_digest,
        ),
    ];
    for (field, found, expected) in fields {
        if found != expected {
            return Err(JournalError::HeaderMismatch {
                field,
                found: found.clone(),
                expected: expected.clone(),
            });
        }
    }
    Ok(())
}
