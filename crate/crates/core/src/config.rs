//! Run configuration: one TOML file describing a full experiment.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::datagen::{CorpusSpec, CorruptionSpec};
use crate::dsp::MelConfig;
use crate::error::{Error, Result};
use crate::pipeline::{AnnotatorConfig, StudentConfig};

pub const CONFIG_VERSION: u32 = 1;

/// Hex SHA-256 of the JSON serialization. Field order follows the struct
/// definitions, so equal values always hash equally.
pub fn content_hash<T: Serialize>(value: &T) -> Result<String> {
    Ok(sha256_hex(&serde_json::to_vec(value)?))
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

fn within(section: &str, e: Error) -> Error {
    match e {
        Error::Config { field, reason } => {
            let field = field.strip_prefix("corpus.").unwrap_or(&field).to_string();
            Error::config(format!("{section}.{field}"), reason)
        }
        e => e,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub hidden: usize,
    /// One student (and transfer head) per seed.
    pub seeds: Vec<u64>,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            hidden: 128,
            seeds: vec![0, 1, 2, 3, 4],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PslConfig {
    pub resolutions: Vec<f64>,
    pub alphas: Vec<f64>,
    /// Per-class cap on the student training subset; absent means the
    /// whole train split.
    pub subset_cap: Option<usize>,
}

impl Default for PslConfig {
    fn default() -> Self {
        Self {
            resolutions: vec![10.0, 5.0, 2.0],
            alphas: vec![1.0, 0.5, 0.0],
            subset_cap: Some(10),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TransferConfig {
    pub corpus: CorpusSpec,
    pub head: StudentConfig,
}

impl Default for TransferConfig {
    fn default() -> Self {
        Self {
            corpus: CorpusSpec {
                n_clips: 400,
                n_classes: 8,
                schema_variant: 1,
                clip_prefix: "tgt".into(),
                seed: 99,
                ..CorpusSpec::default()
            },
            head: StudentConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    /// Hard-label threshold for the label-count and coverage analyses.
    pub threshold: f64,
    pub map_at_k: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            threshold: 0.5,
            map_at_k: 3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PathsConfig {
    pub run_dir: PathBuf,
}

impl Default for PathsConfig {
    fn default() -> Self {
        Self {
            run_dir: PathBuf::from("runs/default"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub version: u32,
    /// Annotator seed.
    pub seed: u64,
    pub corpus: CorpusSpec,
    pub corruption: CorruptionSpec,
    pub features: MelConfig,
    pub model: ModelConfig,
    pub annotator: AnnotatorConfig,
    pub student: StudentConfig,
    pub psl: PslConfig,
    pub transfer: TransferConfig,
    pub eval: EvalConfig,
    pub paths: PathsConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            version: CONFIG_VERSION,
            seed: 0,
            corpus: CorpusSpec {
                n_clips: 1000,
                seed: 1,
                ..CorpusSpec::default()
            },
            corruption: CorruptionSpec {
                p_missing: 0.3,
                p_spurious: 0.0,
                seed: 1,
            },
            features: MelConfig::default(),
            model: ModelConfig::default(),
            annotator: AnnotatorConfig {
                steps: 3000,
                ..AnnotatorConfig::default()
            },
            student: StudentConfig::default(),
            psl: PslConfig::default(),
            transfer: TransferConfig::default(),
            eval: EvalConfig::default(),
            paths: PathsConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| {
            let field = e.span().map_or_else(|| "<file>".to_string(), |s| locate(text, s.start));
            Error::config(field, e.message().trim().to_string())
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| Error::InvalidInput(format!("serializing config: {e}")))
    }

    /// Content hash of everything except `paths`, so the same experiment
    /// stamps the same hash wherever its outputs live.
    pub fn hash(&self) -> Result<String> {
        content_hash(&Self {
            paths: PathsConfig::default(),
            ..self.clone()
        })
    }

    /// Annotator settings with the model width applied.
    pub fn annotator_config(&self) -> AnnotatorConfig {
        AnnotatorConfig {
            hidden: self.model.hidden,
            ..self.annotator.clone()
        }
    }

    pub fn student_config(&self) -> StudentConfig {
        StudentConfig {
            hidden: self.model.hidden,
            ..self.student.clone()
        }
    }

    pub fn head_config(&self) -> StudentConfig {
        StudentConfig {
            hidden: self.model.hidden,
            ..self.transfer.head.clone()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.version != CONFIG_VERSION {
            return Err(Error::config("version", format!("unsupported version {}, expected {CONFIG_VERSION}", self.version)));
        }
        self.corpus.validate()?;
        self.corruption.validate()?;
        self.features.validate().map_err(|e| within("features", e))?;
        if self.features.sample_rate_hz != self.corpus.sample_rate_hz {
            return Err(Error::config(
                "features.sample_rate_hz",
                format!("{} differs from corpus.sample_rate_hz {}", self.features.sample_rate_hz, self.corpus.sample_rate_hz),
            ));
        }
        if self.model.hidden == 0 {
            return Err(Error::config("model.hidden", "must be at least 1"));
        }
        if self.model.seeds.is_empty() {
            return Err(Error::config("model.seeds", "must list at least one seed"));
        }
        self.annotator_config().validate()?;
        self.student_config().validate("student")?;
        if self.psl.resolutions.is_empty() || self.psl.resolutions.iter().any(|&n| !(n > 0.0 && n.is_finite())) {
            return Err(Error::config("psl.resolutions", "must be a non-empty list of positive seconds"));
        }
        if self.psl.alphas.is_empty() || self.psl.alphas.iter().any(|a| !(0.0..=1.0).contains(a)) {
            return Err(Error::config("psl.alphas", "must be a non-empty list of values in [0, 1]"));
        }
        if self.psl.subset_cap == Some(0) {
            return Err(Error::config("psl.subset_cap", "must be at least 1 when set"));
        }
        self.transfer.corpus.validate().map_err(|e| within("transfer.corpus", e))?;
        if self.transfer.corpus.sample_rate_hz != self.corpus.sample_rate_hz {
            return Err(Error::config("transfer.corpus.sample_rate_hz", "must match corpus.sample_rate_hz"));
        }
        self.head_config().validate("transfer.head")?;
        if !(self.eval.threshold > 0.0 && self.eval.threshold < 1.0) {
            return Err(Error::config("eval.threshold", "must lie in (0, 1)"));
        }
        if self.eval.map_at_k == 0 {
            return Err(Error::config("eval.map_at_k", "must be at least 1"));
        }
        Ok(())
    }
}

/// Dotted `table.key` path of the entry containing byte offset `pos`.
fn locate(text: &str, pos: usize) -> String {
    let mut table = String::new();
    let mut key = String::new();
    let mut offset = 0;
    for line in text.split_inclusive('\n') {
        let t = line.trim();
        if t.starts_with('[') {
            table = t.trim_matches(|c| c == '[' || c == ']').trim().to_string();
            key.clear();
        } else if let Some((k, _)) = t.split_once('=') {
            key = k.trim().to_string();
        }
        offset += line.len();
        if offset > pos {
            break;
        }
    }
    match (table.is_empty(), key.is_empty()) {
        (true, _) => key,
        (false, true) => table,
        (false, false) => format!("{table}.{key}"),
    }
}
