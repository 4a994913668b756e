//! Experiment configuration: a single TOML file, overridable per field.

use std::path::{Path, PathBuf};

use pathagg::analysis::Averaging;
use pathagg::cot::InitialNode;
use pathagg::kg::UnknownPolicy;
use pathagg::lm::{LmConfig, LrSchedule, TrainConfig};
use pathagg::rules::{LearnConfig, MiningOptions, Penalty, SupportMode};
use pathagg::walk::WalkLength;
use pathagg::{Error, Result};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    pub train: PathBuf,
    pub test: PathBuf,
    pub valid: Option<PathBuf>,
    /// Add a reversed copy `r_inv` of every relation.
    pub inverse: bool,
    /// What to do with evaluation triples naming unseen symbols.
    pub unknown: UnknownPolicy,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            train: "data/countries_s3/train.txt".into(),
            test: "data/countries_s3/test.txt".into(),
            valid: None,
            inverse: false,
            unknown: UnknownPolicy::Skip,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WalkSettings {
    pub l_max: Vec<usize>,
    /// Walks per corpus; 0 sizes the corpus to about 50 tokens per train triple.
    pub walks: usize,
    pub t_chunk: usize,
    pub length: WalkLength,
}

impl Default for WalkSettings {
    fn default() -> Self {
        Self {
            l_max: vec![1, 3, 5],
            walks: 0,
            t_chunk: 32,
            length: WalkLength::Fixed,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LmSettings {
    pub layers: usize,
    pub heads: usize,
    pub model_dim: usize,
    pub ff_dim: usize,
    pub dropout: f64,
}

impl Default for LmSettings {
    fn default() -> Self {
        let d = LmConfig::desk(1);
        Self {
            layers: d.layers,
            heads: d.heads,
            model_dim: d.model_dim,
            ff_dim: d.ff_dim,
            dropout: d.dropout,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSettings {
    pub steps: u64,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    pub clip_norm: f64,
    pub schedule: LrSchedule,
}

impl Default for TrainSettings {
    fn default() -> Self {
        let t = TrainConfig::default();
        Self {
            steps: t.steps,
            batch_size: t.batch_size,
            learning_rate: t.learning_rate,
            beta1: t.beta1,
            beta2: t.beta2,
            eps: t.eps,
            weight_decay: t.weight_decay,
            clip_norm: t.clip_norm,
            schedule: t.schedule,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RuleSettings {
    pub n_max: Vec<usize>,
    /// Keep rules with support strictly above this.
    pub min_support: u64,
    pub lambda: f64,
    pub penalty: Penalty,
    pub temperature: f64,
    pub negatives_per_positive: usize,
    pub learning_rate: f64,
    pub max_iters: usize,
    pub tolerance: f64,
    pub path_cap: usize,
    pub support: SupportMode,
    pub include_self_rule: bool,
    /// Relations to mine; empty means every relation queried by the test set.
    pub relations: Vec<String>,
}

impl Default for RuleSettings {
    fn default() -> Self {
        let l = LearnConfig::default();
        let m = MiningOptions::default();
        Self {
            n_max: vec![1, 2, 3, 5],
            min_support: 1,
            lambda: l.lambda,
            penalty: l.penalty,
            temperature: 0.01,
            negatives_per_positive: l.negatives_per_positive,
            learning_rate: l.learning_rate,
            max_iters: l.max_iters,
            tolerance: l.tolerance,
            path_cap: m.path_cap,
            support: m.support,
            include_self_rule: m.include_self_rule,
            relations: Vec::new(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AnalysisSettings {
    pub averaging: Averaging,
    /// Grid rows; empty means every configured walk `l_max`.
    pub kl_rows: Vec<usize>,
    pub prop1_sizes: Vec<[usize; 2]>,
    pub prop1_trials: usize,
}

impl Default for AnalysisSettings {
    fn default() -> Self {
        Self {
            averaging: Averaging::PerTriple,
            kl_rows: Vec::new(),
            prop1_sizes: vec![[5, 3], [10, 6], [30, 10]],
            prop1_trials: 1000,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CotSettings {
    pub input: Option<PathBuf>,
    /// Precomputed state vectors; the token-hash embedding is used when unset.
    pub vectors: Option<PathBuf>,
    pub hash_dim: usize,
    pub k: usize,
    pub kmeans_iters: usize,
    pub l_max: usize,
    /// Segment bound `L`; defaults to `l_max`.
    pub segment_cap: Option<usize>,
    pub paths: usize,
    pub initial: InitialNode,
    pub include_question: bool,
    pub m: usize,
    pub n: usize,
}

impl Default for CotSettings {
    fn default() -> Self {
        Self {
            input: None,
            vectors: None,
            hash_dim: 256,
            k: 100,
            kmeans_iters: 100,
            l_max: 10,
            segment_cap: None,
            paths: 1000,
            initial: InitialNode::Uniform,
            include_question: false,
            m: 500,
            n: 2500,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub data: DataConfig,
    pub walk: WalkSettings,
    pub lm: LmSettings,
    pub train: TrainSettings,
    pub rules: RuleSettings,
    pub analysis: AnalysisSettings,
    pub cot: CotSettings,
}

fn config_err(msg: impl Into<String>) -> Error {
    Error::Config(msg.into())
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| config_err(e.to_string()))
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| config_err(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text)
    }

    /// Applies `section.key=value` overrides. Values are parsed as TOML
    /// literals, falling back to plain strings.
    pub fn with_overrides(&self, sets: &[String]) -> Result<Self> {
        if sets.is_empty() {
            return Ok(self.clone());
        }
        let mut root = toml::Value::try_from(self).map_err(|e| config_err(e.to_string()))?;
        for s in sets {
            let (key, raw) = s
                .split_once('=')
                .ok_or_else(|| config_err(format!("override `{s}` is not key=value")))?;
            let value = parse_literal(raw.trim());
            let parts: Vec<&str> = key.trim().split('.').collect();
            let mut node = &mut root;
            for (i, part) in parts.iter().enumerate() {
                let table = node.as_table_mut().ok_or_else(|| {
                    config_err(format!("`{key}`: `{part}` is not inside a table"))
                })?;
                if i + 1 == parts.len() {
                    table.insert(part.to_string(), value.clone());
                    break;
                }
                node = table
                    .entry(part.to_string())
                    .or_insert_with(|| toml::Value::Table(Default::default()));
            }
        }
        let cfg: Self = root
            .try_into()
            .map_err(|e: toml::de::Error| config_err(e.to_string()))?;
        Ok(cfg)
    }

    /// Hex SHA-256 of the canonical JSON form.
    pub fn hash(&self) -> String {
        let json = serde_json::to_string(self).expect("config serializes");
        hex::encode(Sha256::digest(json.as_bytes()))
    }

    pub fn short_hash(&self) -> String {
        self.hash()[..16].to_string()
    }

    /// Checks list fields and the referenced dataset files.
    pub fn validate(&self) -> Result<()> {
        for (name, p) in [
            ("data.train", &self.data.train),
            ("data.test", &self.data.test),
        ] {
            if !p.is_file() {
                return Err(config_err(format!(
                    "{name}: {} does not exist",
                    p.display()
                )));
            }
        }
        if let Some(v) = &self.data.valid {
            if !v.is_file() {
                return Err(config_err(format!(
                    "data.valid: {} does not exist",
                    v.display()
                )));
            }
        }
        let nonempty = |name: &str, v: &[usize]| {
            if v.is_empty() || v.contains(&0) {
                Err(config_err(format!(
                    "{name} must be a non-empty list of positive lengths"
                )))
            } else {
                Ok(())
            }
        };
        nonempty("walk.l_max", &self.walk.l_max)?;
        nonempty("rules.n_max", &self.rules.n_max)?;
        if self.walk.t_chunk < 2 {
            return Err(config_err("walk.t_chunk must be at least 2"));
        }
        if self.rules.temperature.is_nan() || self.rules.temperature <= 0.0 {
            return Err(config_err("rules.temperature must be positive"));
        }
        if self.rules.lambda < 0.0 {
            return Err(config_err("rules.lambda must be non-negative"));
        }
        self.train_config().validate()?;
        Ok(())
    }

    pub fn lm_config(&self, vocab_size: usize) -> LmConfig {
        LmConfig {
            layers: self.lm.layers,
            heads: self.lm.heads,
            model_dim: self.lm.model_dim,
            ff_dim: self.lm.ff_dim,
            context_len: self.walk.t_chunk,
            vocab_size,
            dropout: self.lm.dropout,
            seed: self.seed,
        }
    }

    pub fn train_config(&self) -> TrainConfig {
        let t = &self.train;
        TrainConfig {
            batch_size: t.batch_size,
            learning_rate: t.learning_rate,
            beta1: t.beta1,
            beta2: t.beta2,
            eps: t.eps,
            weight_decay: t.weight_decay,
            steps: t.steps,
            clip_norm: t.clip_norm,
            seed: self.seed,
            schedule: t.schedule,
        }
    }

    pub fn mining_options(&self) -> MiningOptions {
        MiningOptions {
            path_cap: self.rules.path_cap,
            include_self_rule: self.rules.include_self_rule,
            support: self.rules.support,
            ..MiningOptions::default()
        }
    }

    pub fn learn_config(&self) -> LearnConfig {
        let r = &self.rules;
        LearnConfig {
            lambda: r.lambda,
            penalty: r.penalty,
            negatives_per_positive: r.negatives_per_positive,
            learning_rate: r.learning_rate,
            max_iters: r.max_iters,
            tolerance: r.tolerance,
            seed: self.seed,
            ..LearnConfig::default()
        }
    }

    pub fn kl_rows(&self) -> Vec<usize> {
        if self.analysis.kl_rows.is_empty() {
            self.walk.l_max.clone()
        } else {
            self.analysis.kl_rows.clone()
        }
    }
}

fn parse_literal(raw: &str) -> toml::Value {
    #[derive(Deserialize)]
    struct Wrap {
        v: toml::Value,
    }
    match toml::from_str::<Wrap>(&format!("v = {raw}")) {
        Ok(w) => w.v,
        Err(_) => toml::Value::String(raw.to_string()),
    }
}
