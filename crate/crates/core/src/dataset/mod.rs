//! Instruction dataset ingestion and normalisation.
//!
//! Records are kept alongside their original JSON text so that exported
//! subsets are byte-faithful to the source file.

mod template;

use std::cmp::Ordering;
use std::collections::{BTreeSet, HashMap, HashSet};
use std::fmt;
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::value::RawValue;
use serde_json::Value;
use thiserror::Error;

pub use template::{PromptTemplate, Role};

use crate::{ErrorKind, Fingerprint};

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("record {index}: {reason}")]
    Malformed { index: usize, reason: String },
    #[error("duplicate example id '{0}'")]
    DuplicateId(String),
    #[error("unknown example id '{0}'")]
    UnknownId(String),
    #[error("invalid template: {0}")]
    Template(String),
    #[error("example '{id}' has no value for template field '{field}'")]
    MissingPlaceholder { id: String, field: &'static str },
}

impl DatasetError {
    pub fn kind(&self) -> ErrorKind {
        match self {
            DatasetError::Template(_) => ErrorKind::Config,
            _ => ErrorKind::Data,
        }
    }
}

/// Stable identifier of an example within a dataset.
///
/// Ordering is "natural": two all-digit ids compare numerically, anything
/// else compares as strings, so file-order ids sort as 0, 1, 2, ..., 10.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ExampleId(String);

impl ExampleId {
    pub fn new(id: impl Into<String>) -> Self {
        ExampleId(id.into())
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }

    fn numeric(&self) -> Option<&str> {
        let s = self.0.as_str();
        (!s.is_empty() && s.bytes().all(|b| b.is_ascii_digit())).then(|| s.trim_start_matches('0'))
    }
}

impl From<usize> for ExampleId {
    fn from(i: usize) -> Self {
        ExampleId(i.to_string())
    }
}

impl fmt::Display for ExampleId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl Ord for ExampleId {
    fn cmp(&self, other: &Self) -> Ordering {
        match (self.numeric(), other.numeric()) {
            (Some(a), Some(b)) => a
                .len()
                .cmp(&b.len())
                .then_with(|| a.cmp(b))
                .then_with(|| self.0.cmp(&other.0)),
            _ => self.0.cmp(&other.0),
        }
    }
}

impl PartialOrd for ExampleId {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Flag {
    EmptyOutput,
}

/// One candidate instruction record.
#[derive(Debug, Clone)]
pub struct InstructionExample {
    pub id: ExampleId,
    pub instruction: String,
    pub input: Option<String>,
    pub answer: String,
    pub flags: BTreeSet<Flag>,
    raw: Option<Box<RawValue>>,
}

impl InstructionExample {
    /// Build an example without source text; `raw_json` synthesises one.
    pub fn new(
        id: ExampleId,
        instruction: impl Into<String>,
        input: Option<&str>,
        answer: impl Into<String>,
    ) -> Self {
        let answer = answer.into();
        let mut flags = BTreeSet::new();
        if answer.trim().is_empty() {
            flags.insert(Flag::EmptyOutput);
        }
        InstructionExample {
            id,
            instruction: instruction.into(),
            input: input.map(str::to_owned),
            answer,
            flags,
            raw: None,
        }
    }

    pub fn has_flag(&self, flag: Flag) -> bool {
        self.flags.contains(&flag)
    }

    /// Rendered question text (instruction plus input) under `template`.
    pub fn question(&self, template: &PromptTemplate) -> Result<String, DatasetError> {
        template.render(self, Role::Query)
    }

    /// The record's JSON text exactly as it appeared in the source file.
    pub fn raw_json(&self) -> String {
        match &self.raw {
            Some(raw) => raw.get().to_owned(),
            None => {
                let mut obj = serde_json::Map::new();
                obj.insert("instruction".into(), Value::String(self.instruction.clone()));
                if let Some(input) = &self.input {
                    obj.insert("input".into(), Value::String(input.clone()));
                }
                obj.insert("output".into(), Value::String(self.answer.clone()));
                Value::Object(obj).to_string()
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum Format {
    JsonArray,
    #[default]
    Jsonl,
}

impl Format {
    /// `.jsonl` / `.ndjson` are JSON lines; everything else is a JSON array.
    pub fn from_path(path: &Path) -> Format {
        match path.extension().and_then(|e| e.to_str()) {
            Some("jsonl") | Some("ndjson") => Format::Jsonl,
            _ => Format::JsonArray,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum IdMode {
    /// A record's own `id` field when present, otherwise its zero-based position.
    #[default]
    FileOrder,
    /// Hash of the record content; later exact duplicates are dropped.
    ContentHash,
}

#[derive(Debug, Clone, Default)]
pub struct LoadOptions {
    /// Log and skip malformed records instead of aborting.
    pub skip_bad: bool,
    pub id_mode: IdMode,
}

#[derive(Debug, Clone, Default)]
pub struct Dataset {
    examples: Vec<InstructionExample>,
    index: HashMap<ExampleId, usize>,
    /// Malformed records skipped under `skip_bad`: (record index, reason).
    pub skipped: Vec<(usize, String)>,
    /// Content-hash duplicates dropped during load.
    pub duplicates_dropped: usize,
}

impl Dataset {
    pub fn from_examples(examples: Vec<InstructionExample>) -> Result<Self, DatasetError> {
        let mut index = HashMap::with_capacity(examples.len());
        for (i, ex) in examples.iter().enumerate() {
            if index.insert(ex.id.clone(), i).is_some() {
                return Err(DatasetError::DuplicateId(ex.id.to_string()));
            }
        }
        Ok(Dataset { examples, index, skipped: Vec::new(), duplicates_dropped: 0 })
    }

    pub fn len(&self) -> usize {
        self.examples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.examples.is_empty()
    }

    pub fn examples(&self) -> &[InstructionExample] {
        &self.examples
    }

    pub fn get(&self, id: &ExampleId) -> Option<&InstructionExample> {
        self.index.get(id).map(|&i| &self.examples[i])
    }

    pub fn count_flagged(&self, flag: Flag) -> usize {
        self.examples.iter().filter(|e| e.has_flag(flag)).count()
    }

    /// Hash over ids and canonical record content, in order.
    pub fn fingerprint(&self) -> Fingerprint {
        let items: Vec<(&str, Value)> = self
            .examples
            .iter()
            .map(|e| {
                let v: Value = serde_json::from_str(&e.raw_json()).expect("stored raw JSON is valid");
                (e.id.as_str(), v)
            })
            .collect();
        Fingerprint::of(&items)
    }
}

pub fn load_dataset(path: &Path, format: Format, opts: &LoadOptions) -> Result<Dataset, DatasetError> {
    let io_err = |source| DatasetError::Io { path: path.to_path_buf(), source };
    let text = fs::read_to_string(path).map_err(io_err)?;
    let raws: Vec<(usize, Result<Box<RawValue>, String>)> = match format {
        Format::JsonArray => {
            let items: Vec<Box<RawValue>> = serde_json::from_str(&text)
                .map_err(|e| DatasetError::Malformed { index: 0, reason: format!("not a JSON array: {e}") })?;
            items.into_iter().enumerate().map(|(i, r)| (i, Ok(r))).collect()
        }
        Format::Jsonl => text
            .lines()
            .enumerate()
            .filter(|(_, l)| !l.trim().is_empty())
            .enumerate()
            .map(|(i, (lineno, line))| {
                let parsed = serde_json::from_str::<Box<RawValue>>(line.trim())
                    .map_err(|e| format!("line {}: invalid JSON: {e}", lineno + 1));
                (i, parsed)
            })
            .collect(),
    };

    let mut examples = Vec::with_capacity(raws.len());
    let mut skipped = Vec::new();
    let mut seen = HashSet::new();
    let mut duplicates_dropped = 0;
    for (i, raw) in raws {
        let parsed = raw.and_then(|raw| parse_record(i, raw, opts.id_mode));
        let ex = match parsed {
            Ok(ex) => ex,
            Err(reason) if opts.skip_bad => {
                log::warn!("{}: skipping record {i}: {reason}", path.display());
                skipped.push((i, reason));
                continue;
            }
            Err(reason) => return Err(DatasetError::Malformed { index: i, reason }),
        };
        if !seen.insert(ex.id.clone()) {
            if opts.id_mode == IdMode::ContentHash {
                duplicates_dropped += 1;
                continue;
            }
            return Err(DatasetError::DuplicateId(ex.id.to_string()));
        }
        examples.push(ex);
    }

    let mut ds = Dataset::from_examples(examples)?;
    ds.skipped = skipped;
    ds.duplicates_dropped = duplicates_dropped;
    log::info!(
        "loaded {} examples from {} ({} empty outputs, {} skipped, {} duplicates dropped)",
        ds.len(),
        path.display(),
        ds.count_flagged(Flag::EmptyOutput),
        ds.skipped.len(),
        ds.duplicates_dropped
    );
    Ok(ds)
}

fn parse_record(index: usize, raw: Box<RawValue>, id_mode: IdMode) -> Result<InstructionExample, String> {
    let value: Value = serde_json::from_str(raw.get()).map_err(|e| e.to_string())?;
    let obj = value.as_object().ok_or("record is not a JSON object")?;

    let text_field = |name: &str| -> Result<Option<String>, String> {
        match obj.get(name) {
            None | Some(Value::Null) => Ok(None),
            Some(Value::String(s)) => Ok(Some(s.clone())),
            Some(other) => Err(format!("field '{name}' must be a string, got {other}")),
        }
    };
    let instruction = text_field("instruction")?.ok_or("missing field 'instruction'")?;
    if instruction.trim().is_empty() {
        return Err("field 'instruction' is empty".into());
    }
    let input = text_field("input")?;
    let output = text_field("output")?.ok_or("missing field 'output'")?;

    let id = match id_mode {
        IdMode::ContentHash => ExampleId(Fingerprint::of(&value).as_str()[..16].to_owned()),
        IdMode::FileOrder => match obj.get("id") {
            None | Some(Value::Null) => ExampleId::from(index),
            Some(Value::String(s)) if !s.is_empty() => ExampleId(s.clone()),
            Some(Value::Number(n)) => ExampleId(n.to_string()),
            Some(other) => return Err(format!("field 'id' must be a string or number, got {other}")),
        },
    };

    let mut ex = InstructionExample::new(id, instruction, input.as_deref(), output);
    ex.raw = Some(raw);
    Ok(ex)
}

/// Strip insignificant whitespace from valid JSON text, keeping key order
/// and string contents untouched.
fn minify_json(text: &str) -> String {
    let mut out = String::with_capacity(text.len());
    let mut in_string = false;
    let mut escaped = false;
    for c in text.chars() {
        if in_string {
            out.push(c);
            match (escaped, c) {
                (true, _) => escaped = false,
                (false, '\\') => escaped = true,
                (false, '"') => in_string = false,
                _ => {}
            }
        } else if c == '"' {
            in_string = true;
            out.push(c);
        } else if !c.is_whitespace() {
            out.push(c);
        }
    }
    out
}

/// Write the given examples' original records to `path`.
pub fn write_records<'a>(
    path: &Path,
    format: Format,
    examples: impl IntoIterator<Item = &'a InstructionExample>,
) -> Result<(), DatasetError> {
    let io_err = |source| DatasetError::Io { path: path.to_path_buf(), source };
    let file = File::create(path).map_err(io_err)?;
    let mut w = BufWriter::new(file);
    match format {
        Format::Jsonl => {
            for ex in examples {
                writeln!(w, "{}", minify_json(&ex.raw_json())).map_err(io_err)?;
            }
        }
        Format::JsonArray => {
            w.write_all(b"[").map_err(io_err)?;
            for (i, ex) in examples.into_iter().enumerate() {
                let sep: &[u8] = if i == 0 { b"\n" } else { b",\n" };
                w.write_all(sep).map_err(io_err)?;
                w.write_all(ex.raw_json().as_bytes()).map_err(io_err)?;
            }
            w.write_all(b"\n]\n").map_err(io_err)?;
        }
    }
    w.flush().map_err(io_err)
}
