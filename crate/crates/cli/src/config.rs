//! JSON run configuration. Every field can be overridden from the command
//! line; CLI values win.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use goldsel::anchors::{KMeansAnchorOptions, Method};
use goldsel::backend::{Backend, Embedder, FeatureHashEmbedder, HashMockBackend, HttpBackend, HttpConfig, TableBackend};
use goldsel::dataset::{Format, IdMode};
use goldsel::scoring::OverflowPolicy;
use goldsel::Fingerprint;
use serde::{Deserialize, Serialize};

/// A problem with flags or configuration (exit code 2).
#[derive(Debug)]
pub struct ConfigError(pub String);

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for ConfigError {}

pub fn config_error(msg: impl Into<String>) -> anyhow::Error {
    ConfigError(msg.into()).into()
}

/// Inputs that exist but cannot be used together (exit code 4).
#[derive(Debug)]
pub struct DataError(pub String);

impl fmt::Display for DataError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for DataError {}

pub fn data_error(msg: impl Into<String>) -> anyhow::Error {
    DataError(msg.into()).into()
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub dataset: DatasetConfig,
    /// Prompt template file; the Alpaca template when absent.
    pub template: Option<PathBuf>,
    pub anchors: AnchorConfig,
    pub backend: Option<BackendSpec>,
    pub scoring: ScoringConfig,
    pub store: Option<PathBuf>,
    pub outputs: OutputConfig,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DatasetConfig {
    pub path: Option<PathBuf>,
    /// Inferred from the file extension when absent.
    pub format: Option<Format>,
    pub skip_bad: bool,
    pub id_mode: IdMode,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AnchorConfig {
    /// Anchor file: written by `anchors build`, read by `score run`.
    pub path: Option<PathBuf>,
    pub method: Method,
    pub m: Option<usize>,
    pub seed: u64,
    pub kmeans: KMeansAnchorOptions,
    pub embedder: EmbedderChoice,
}

impl Default for AnchorConfig {
    fn default() -> Self {
        AnchorConfig {
            path: None,
            method: Method::Random,
            m: None,
            seed: 0,
            kmeans: KMeansAnchorOptions::default(),
            embedder: EmbedderChoice::Backend,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EmbedderChoice {
    /// The configured backend, or feature hashing when none is configured.
    Backend,
    FeatureHash,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScoringConfig {
    pub overflow_policy: OverflowPolicy,
    pub tie_epsilon: f64,
    pub exclude_anchors: bool,
    pub parallelism: usize,
}

impl Default for ScoringConfig {
    fn default() -> Self {
        ScoringConfig {
            overflow_policy: OverflowPolicy::default(),
            tie_epsilon: 0.0,
            exclude_anchors: false,
            parallelism: 1,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputConfig {
    pub table: Option<PathBuf>,
    pub subset: Option<PathBuf>,
    pub report: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum BackendSpec {
    HashMock {
        #[serde(default)]
        seed: u64,
        #[serde(default)]
        context_budget: Option<usize>,
        /// Hash window in tokens; 4 when absent.
        #[serde(default)]
        context_tokens: Option<usize>,
    },
    Table {
        path: PathBuf,
    },
    Http(Box<HttpConfig>),
}

impl FromStr for BackendSpec {
    type Err = String;

    /// `hash-mock[:SEED[:WINDOW]]`, `table:PATH`, an `http(s)://` URL, or a JSON file holding
    /// a backend object.
    fn from_str(s: &str) -> Result<Self, String> {
        let (kind, rest) = s.split_once(':').unwrap_or((s, ""));
        match kind {
            "hash-mock" => {
                let mut parts = rest.split(':').filter(|p| !p.is_empty()).map(|p| p.parse::<u64>());
                let bad = |_| format!("bad number in '{s}'");
                let seed = parts.next().transpose().map_err(bad)?.unwrap_or(0);
                let context_tokens = parts.next().transpose().map_err(bad)?.map(|n| n as usize);
                Ok(BackendSpec::HashMock { seed, context_budget: None, context_tokens })
            }
            "table" if !rest.is_empty() => Ok(BackendSpec::Table { path: rest.into() }),
            "http" | "https" if rest.starts_with("//") => {
                Ok(BackendSpec::Http(Box::new(HttpConfig { base_url: s.to_string(), ..Default::default() })))
            }
            _ if Path::new(s).is_file() => {
                let text = fs::read_to_string(s).map_err(|e| format!("{s}: {e}"))?;
                serde_json::from_str(&text).map_err(|e| format!("{s}: {e}"))
            }
            _ => Err(format!("unrecognised backend '{s}' (expected hash-mock[:SEED[:WINDOW]], table:PATH, an http(s):// URL or a JSON file)")),
        }
    }
}

impl BackendSpec {
    pub fn build(&self) -> anyhow::Result<Box<dyn Backend>> {
        Ok(match self {
            BackendSpec::HashMock { seed, context_budget, context_tokens } => {
                let mut b = HashMockBackend::new(*seed);
                if let Some(n) = context_budget {
                    b = b.with_context_budget(*n);
                }
                if let Some(n) = context_tokens {
                    b = b.with_context_tokens(*n);
                }
                Box::new(b)
            }
            BackendSpec::Table { path } => Box::new(TableBackend::load(path)?),
            BackendSpec::Http(config) => Box::new(HttpBackend::new(config.as_ref().clone())?),
        })
    }
}

/// Embedder for K-Means anchors.
pub fn embedder(config: &RunConfig) -> anyhow::Result<Box<dyn Embedder>> {
    match (&config.backend, config.anchors.embedder) {
        (Some(spec), EmbedderChoice::Backend) => {
            let backend = spec.build()?;
            Ok(Box::new(BackendEmbedder(backend)))
        }
        _ => Ok(Box::new(FeatureHashEmbedder::new(FeatureHashEmbedder::DEFAULT_DIM, config.anchors.seed))),
    }
}

struct BackendEmbedder(Box<dyn Backend>);

impl Embedder for BackendEmbedder {
    fn embed(&self, text: &str) -> Result<goldsel::backend::EmbeddingVector, goldsel::backend::BackendError> {
        self.0.embed(text)
    }
}

impl RunConfig {
    pub fn load(path: Option<&Path>) -> anyhow::Result<Self> {
        let Some(path) = path else { return Ok(RunConfig::default()) };
        let text = fs::read_to_string(path).map_err(|e| config_error(format!("{}: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| config_error(format!("{}: {e}", path.display())))
    }

    /// Stable under key reordering in the source file.
    pub fn fingerprint(&self) -> Fingerprint {
        Fingerprint::of(self)
    }

    pub fn dataset_format(&self) -> anyhow::Result<(PathBuf, Format)> {
        let path = self.dataset.path.clone().ok_or_else(|| config_error("no dataset given (--dataset)"))?;
        let format = self.dataset.format.unwrap_or_else(|| Format::from_path(&path));
        Ok((path, format))
    }
}

pub fn require<T: Clone>(value: &Option<T>, flag: &str) -> anyhow::Result<T> {
    value.clone().ok_or_else(|| config_error(format!("missing required setting {flag}")))
}
