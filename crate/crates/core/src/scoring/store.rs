//! Append-only, checksummed JSON-lines score store.
//!
//! Line 1 is the run header. Every later line is the zero-shot profile or one
//! candidate row. Each line is a canonical JSON object (sorted keys) carrying
//! a `checksum` field: SHA-256 of the same object serialised without it.

use std::collections::BTreeMap;
use std::fs::{self, File, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use thiserror::Error;

use super::{golden_score, GoldenScoreTable, OneShotRow, OverflowPolicy, ScoringError, ZeroShotProfile};
use crate::dataset::ExampleId;
use crate::fingerprint::sha256_hex;
use crate::{ErrorKind, Fingerprint};

pub const STORE_FORMAT: &str = "goldsel-score-store/1";

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}:{line}: corrupt store line: {reason}")]
    Corrupt { path: PathBuf, line: usize, reason: String },
    #[error("store was written for run config {stored}, current config is {current}; rerun with --fresh to discard it")]
    ConfigMismatch { stored: Fingerprint, current: Fingerprint },
}

impl StoreError {
    pub fn kind(&self) -> ErrorKind {
        match self {
            StoreError::ConfigMismatch { .. } => ErrorKind::Config,
            _ => ErrorKind::Data,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StorePolicies {
    pub overflow_policy: OverflowPolicy,
    pub exclude_anchors: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StoreHeader {
    pub format: String,
    pub config_fingerprint: Fingerprint,
    pub dataset_fingerprint: Fingerprint,
    pub anchor_fingerprint: Fingerprint,
    pub template_fingerprint: Fingerprint,
    pub backend_fingerprint: Fingerprint,
    pub backend: Value,
    pub policies: StorePolicies,
    pub m: usize,
    /// Number of candidate rows a complete run produces.
    pub candidates: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum StoreLine {
    Header(StoreHeader),
    Profile(ZeroShotProfile),
    Row(OneShotRow),
}

pub fn encode_line(line: &StoreLine) -> String {
    let mut value = serde_json::to_value(line).expect("store line serializes");
    let body = serde_json::to_string(&value).expect("JSON value serializes");
    value
        .as_object_mut()
        .expect("store lines are objects")
        .insert("checksum".into(), Value::String(sha256_hex(body.as_bytes())));
    serde_json::to_string(&value).expect("JSON value serializes")
}

pub fn decode_line(text: &str) -> Result<StoreLine, String> {
    let mut value: Value = serde_json::from_str(text).map_err(|e| format!("invalid JSON: {e}"))?;
    let obj = value.as_object_mut().ok_or("not a JSON object")?;
    let checksum = match obj.remove("checksum") {
        Some(Value::String(s)) => s,
        _ => return Err("missing checksum".into()),
    };
    let body = serde_json::to_string(&value).expect("JSON value serializes");
    if sha256_hex(body.as_bytes()) != checksum {
        return Err("checksum mismatch".into());
    }
    serde_json::from_value(value).map_err(|e| e.to_string())
}

/// Everything recovered from a store file.
#[derive(Debug, Clone)]
pub struct StoreContents {
    pub header: StoreHeader,
    pub profile: Option<ZeroShotProfile>,
    /// Completed rows keyed (and hence ordered) by candidate id.
    pub rows: BTreeMap<ExampleId, OneShotRow>,
    /// Byte length of the valid prefix of the file.
    pub valid_len: u64,
    /// The file ended with an incomplete line (an interrupted write).
    pub torn_tail: bool,
}

impl StoreContents {
    pub fn is_complete(&self) -> bool {
        self.profile.is_some() && self.rows.len() == self.header.candidates
    }

    /// Header, profile, then rows sorted by candidate id.
    pub fn canonical_bytes(&self) -> Vec<u8> {
        let mut out = String::new();
        out.push_str(&encode_line(&StoreLine::Header(self.header.clone())));
        out.push('\n');
        if let Some(p) = &self.profile {
            out.push_str(&encode_line(&StoreLine::Profile(p.clone())));
            out.push('\n');
        }
        for row in self.rows.values() {
            out.push_str(&encode_line(&StoreLine::Row(row.clone())));
            out.push('\n');
        }
        out.into_bytes()
    }

    /// Fingerprint of the table derived from this store at `tie_epsilon`.
    pub fn table_fingerprint(&self, tie_epsilon: f64) -> Fingerprint {
        Fingerprint::of(&json!({"config": self.header.config_fingerprint, "tie_epsilon": tie_epsilon}))
    }

    /// Golden scores of all completed rows. Errors if the profile is missing.
    pub fn table(&self, tie_epsilon: f64) -> Result<GoldenScoreTable, ScoringError> {
        let profile = self.profile.as_ref().ok_or_else(|| {
            ScoringError::Store(StoreError::Corrupt {
                path: PathBuf::new(),
                line: 0,
                reason: "store has no zero-shot profile".into(),
            })
        })?;
        let records = self
            .rows
            .values()
            .map(|r| golden_score(r, profile, tie_epsilon))
            .collect::<Result<Vec<_>, _>>()?;
        Ok(GoldenScoreTable::new(self.table_fingerprint(tie_epsilon), records))
    }
}

/// Append handle on a store file.
#[derive(Debug)]
pub struct ScoreStore {
    path: PathBuf,
    file: File,
}

impl ScoreStore {
    /// Read and verify a store without modifying it. `Ok(None)` when the file
    /// is absent or empty.
    pub fn read(path: &Path) -> Result<Option<StoreContents>, StoreError> {
        let bytes = match fs::read(path) {
            Ok(b) => b,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(None),
            Err(source) => return Err(StoreError::Io { path: path.to_path_buf(), source }),
        };
        if bytes.is_empty() {
            return Ok(None);
        }
        let corrupt = |line: usize, reason: String| StoreError::Corrupt { path: path.to_path_buf(), line, reason };

        let mut header = None;
        let mut profile: Option<ZeroShotProfile> = None;
        let mut rows: BTreeMap<ExampleId, OneShotRow> = BTreeMap::new();
        let mut valid_len = 0u64;
        let mut torn_tail = false;
        let mut offset = 0usize;
        let mut lineno = 0usize;
        while offset < bytes.len() {
            lineno += 1;
            let (line, next, terminated) = match bytes[offset..].iter().position(|&b| b == b'\n') {
                Some(i) => (&bytes[offset..offset + i], offset + i + 1, true),
                None => (&bytes[offset..], bytes.len(), false),
            };
            let decoded = std::str::from_utf8(line)
                .map_err(|e| e.to_string())
                .and_then(decode_line);
            let decoded = match decoded {
                Ok(d) => d,
                Err(reason) if !terminated && header.is_some() => {
                    log::warn!("{}:{lineno}: ignoring incomplete final line ({reason})", path.display());
                    torn_tail = true;
                    break;
                }
                Err(reason) => return Err(corrupt(lineno, reason)),
            };
            match (lineno, decoded) {
                (1, StoreLine::Header(h)) => header = Some(h),
                (1, _) => return Err(corrupt(1, "first line is not a header".into())),
                (_, StoreLine::Header(_)) => return Err(corrupt(lineno, "repeated header".into())),
                (_, StoreLine::Profile(p)) => {
                    if profile.as_ref().is_some_and(|old| old != &p) {
                        return Err(corrupt(lineno, "conflicting zero-shot profiles".into()));
                    }
                    profile = Some(p);
                }
                (_, StoreLine::Row(r)) => {
                    if let Some(old) = rows.get(&r.candidate_id) {
                        if old != &r {
                            return Err(corrupt(lineno, format!("conflicting rows for candidate '{}'", r.candidate_id)));
                        }
                    }
                    rows.insert(r.candidate_id.clone(), r);
                }
            }
            offset = next;
            valid_len = next as u64;
        }
        let header = header.expect("non-empty file yields a header or an error");
        Ok(Some(StoreContents { header, profile, rows, valid_len, torn_tail }))
    }

    /// Start a new store at `path`, replacing any existing file.
    pub fn create(path: &Path, header: &StoreHeader) -> Result<Self, StoreError> {
        let file = File::create(path).map_err(|source| StoreError::Io { path: path.to_path_buf(), source })?;
        let mut store = ScoreStore { path: path.to_path_buf(), file };
        store.append(&StoreLine::Header(header.clone()))?;
        Ok(store)
    }

    /// Reopen an existing store for appending, dropping anything past
    /// `valid_len` (a torn final line).
    pub fn resume(path: &Path, valid_len: u64) -> Result<Self, StoreError> {
        let io = |source| StoreError::Io { path: path.to_path_buf(), source };
        let file = OpenOptions::new().append(true).open(path).map_err(io)?;
        if file.metadata().map_err(io)?.len() != valid_len {
            file.set_len(valid_len).map_err(io)?;
        }
        Ok(ScoreStore { path: path.to_path_buf(), file })
    }

    /// Write one line and flush it to the OS.
    pub fn append(&mut self, line: &StoreLine) -> Result<(), StoreError> {
        let mut text = encode_line(line);
        text.push('\n');
        let io = |source| StoreError::Io { path: self.path.clone(), source };
        self.file.write_all(text.as_bytes()).map_err(io)?;
        self.file.flush().map_err(io)
    }

    pub fn sync(&mut self) -> Result<(), StoreError> {
        self.file
            .sync_data()
            .map_err(|source| StoreError::Io { path: self.path.clone(), source })
    }
}
