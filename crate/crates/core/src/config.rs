//! Model, training, and dataset configuration, plus the flat dotted-key JSON
//! form used by run configuration files.

use std::collections::BTreeMap;
use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::error::{Error, Result};

/// Which norm the orthogonality penalty uses.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum OrthNorm {
    #[default]
    Frobenius,
    FrobeniusSquared,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub word_dim: usize,
    pub aspect_dim: usize,
    pub fuse_dim: usize,
    /// Hidden size of each GRU direction; EDU and sentence vectors are twice this.
    pub hidden_dim: usize,
    pub max_edus: usize,
    pub init_range: f64,
    pub orth_norm: OrthNorm,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            word_dim: 300,
            aspect_dim: 300,
            fuse_dim: 300,
            hidden_dim: 150,
            max_edus: 16,
            init_range: 0.1,
            orth_norm: OrthNorm::Frobenius,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let dims = [
            ("word_dim", self.word_dim),
            ("aspect_dim", self.aspect_dim),
            ("fuse_dim", self.fuse_dim),
            ("hidden_dim", self.hidden_dim),
            ("max_edus", self.max_edus),
        ];
        if let Some((name, _)) = dims.iter().find(|(_, v)| *v == 0) {
            return Err(Error::Config(format!("model.{name} must be positive")));
        }
        if self.init_range.is_nan() || self.init_range <= 0.0 {
            return Err(Error::Config("model.init_range must be positive".into()));
        }
        Ok(())
    }

    /// Width of EDU and sentence representations.
    pub fn rep_dim(&self) -> usize {
        2 * self.hidden_dim
    }
}

/// Weights of the sentiment, aspect-presence, and orthogonality terms.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Lambdas {
    pub sentiment: f64,
    pub aspect: f64,
    pub orth: f64,
}

impl Default for Lambdas {
    fn default() -> Self {
        Lambdas {
            sentiment: 1.0,
            aspect: 1.0,
            orth: 0.1,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub lr_model: f64,
    pub lr_embedding: f64,
    pub batch_size: usize,
    /// Validate every this many mini-batches.
    pub eval_every: usize,
    pub dropout: f64,
    pub lambda1: f64,
    pub lambda2: f64,
    pub lambda3: f64,
    /// Evaluations without a validation-accuracy improvement before stopping.
    pub patience: usize,
    pub max_epochs: usize,
    pub seed: u64,
    pub clip_norm: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        let l = Lambdas::default();
        TrainConfig {
            lr_model: 1e-3,
            lr_embedding: 1e-4,
            batch_size: 32,
            eval_every: 16,
            dropout: 0.5,
            lambda1: l.sentiment,
            lambda2: l.aspect,
            lambda3: l.orth,
            patience: 10,
            max_epochs: 30,
            seed: 1,
            clip_norm: 5.0,
        }
    }
}

impl TrainConfig {
    pub fn lambdas(&self) -> Lambdas {
        Lambdas {
            sentiment: self.lambda1,
            aspect: self.lambda2,
            orth: self.lambda3,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lr_model > 0.0 && self.lr_embedding > 0.0) {
            return Err(Error::Config("learning rates must be positive".into()));
        }
        if self.batch_size == 0 || self.eval_every == 0 {
            return Err(Error::Config("train.batch_size and train.eval_every must be ≥ 1".into()));
        }
        if self.patience == 0 {
            return Err(Error::Config("train.patience must be ≥ 1".into()));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config(format!("train.dropout {} outside [0, 1)", self.dropout)));
        }
        if [self.lambda1, self.lambda2, self.lambda3].iter().any(|l| l.is_nan() || *l < 0.0) {
            return Err(Error::Config("loss weights must be ≥ 0".into()));
        }
        if self.clip_norm.is_nan() || self.clip_norm <= 0.0 {
            return Err(Error::Config("train.clip_norm must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum DataFormat {
    /// SemEval-2014 / MAMS sentence XML.
    #[default]
    Xml,
    /// Pre-segmented JSONL with labels.
    Jsonl,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DatasetConfig {
    pub name: String,
    pub format: DataFormat,
    pub aspects: Vec<String>,
    /// Aspect name → word whose embedding initialises the aspect vector;
    /// `null` (or absent) means random initialisation.
    pub aspect_words: BTreeMap<String, Option<String>>,
    pub train: Option<PathBuf>,
    /// When absent, a random fraction of `train` is held out.
    pub val: Option<PathBuf>,
    pub test: Option<PathBuf>,
    /// Additional named evaluation files (e.g. hard subsets).
    pub extra_tests: BTreeMap<String, PathBuf>,
    /// Data file path → pre-segmented JSONL sidecar with EDU spans.
    pub segments: BTreeMap<String, PathBuf>,
    pub glove: Option<PathBuf>,
    pub val_fraction: f64,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        DatasetConfig {
            name: String::new(),
            format: DataFormat::Xml,
            aspects: Vec::new(),
            aspect_words: BTreeMap::new(),
            train: None,
            val: None,
            test: None,
            extra_tests: BTreeMap::new(),
            segments: BTreeMap::new(),
            glove: None,
            val_fraction: 0.2,
        }
    }
}

impl DatasetConfig {
    pub fn validate(&self) -> Result<()> {
        if self.aspects.is_empty() {
            return Err(Error::Config("dataset.aspects is empty".into()));
        }
        let mut seen = std::collections::HashSet::new();
        if let Some(dup) = self.aspects.iter().find(|a| !seen.insert(a.as_str())) {
            return Err(Error::Config(format!("aspect `{dup}` listed twice")));
        }
        if let Some(bad) = self.aspect_words.keys().find(|k| !self.aspects.contains(k)) {
            return Err(Error::Config(format!("aspect_words names unknown aspect `{bad}`")));
        }
        if self.val.is_none() && !(self.val_fraction > 0.0 && self.val_fraction < 1.0) {
            return Err(Error::Config(format!(
                "dataset.val_fraction {} outside (0, 1)",
                self.val_fraction
            )));
        }
        Ok(())
    }

    /// Word used to initialise `aspect`'s embedding: the configured word, or
    /// the aspect name itself when no entry exists.
    pub fn init_word(&self, aspect: &str) -> Option<String> {
        match self.aspect_words.get(aspect) {
            Some(w) => w.clone(),
            None => Some(aspect.to_lowercase()),
        }
    }

    /// Built-in aspect sets for the benchmark datasets.
    pub fn preset(name: &str) -> Option<DatasetConfig> {
        let (aspects, random): (&[&str], &[&str]) = match name {
            "rest14" => (
                &["food", "service", "price", "ambience", "anecdotes/miscellaneous"],
                &["anecdotes/miscellaneous"],
            ),
            "mams" | "mams-acsa" => (
                &["food", "service", "staff", "price", "ambience", "menu", "place", "miscellaneous"],
                &["miscellaneous"],
            ),
            _ => return None,
        };
        Some(DatasetConfig {
            name: name.to_string(),
            aspects: aspects.iter().map(|s| s.to_string()).collect(),
            aspect_words: random.iter().map(|s| (s.to_string(), None)).collect(),
            ..Default::default()
        })
    }
}

/// Everything a command needs: dataset, model shape, training protocol,
/// ablation switches, and output location.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub dataset: DatasetConfig,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub ablation: Ablation,
    pub out: Option<PathBuf>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct Ablation {
    /// Drop the orthogonality term (λ3 = 0).
    pub no_reg: bool,
    /// Drop the aspect-presence term (λ2 = 0).
    pub no_aux: bool,
}

impl RunConfig {
    /// Parses a flat dotted-key JSON object (nested objects are accepted too)
    /// and applies `overrides` on top.
    pub fn from_flat_json(text: &str, overrides: &[(String, Value)]) -> Result<RunConfig> {
        let value: Value =
            serde_json::from_str(text).map_err(|e| Error::Config(format!("config is not valid JSON: {e}")))?;
        let Value::Object(map) = value else {
            return Err(Error::Config("config must be a JSON object".into()));
        };
        let mut flat = Map::new();
        flatten_into("", &Value::Object(map), &mut flat);
        let explicit_lambda = overrides.iter().any(|(k, _)| k.starts_with("train.lambda"));
        for (k, v) in overrides {
            flat.insert(k.clone(), v.clone());
        }
        let nested = unflatten(&flat)?;
        let cfg: RunConfig =
            serde_json::from_value(nested).map_err(|e| Error::Config(format!("invalid config: {e}")))?;
        if explicit_lambda && (cfg.ablation.no_reg || cfg.ablation.no_aux) {
            return Err(Error::Config(
                "ablation flags and explicit lambda overrides are mutually exclusive".into(),
            ));
        }
        Ok(cfg.resolved())
    }

    /// Applies ablation switches to the loss weights.
    fn resolved(mut self) -> RunConfig {
        if self.ablation.no_reg {
            self.train.lambda3 = 0.0;
        }
        if self.ablation.no_aux {
            self.train.lambda2 = 0.0;
        }
        self
    }

    pub fn validate(&self) -> Result<()> {
        self.dataset.validate()?;
        self.model.validate()?;
        self.train.validate()
    }

    /// The effective configuration as flat dotted keys.
    pub fn to_flat_json(&self) -> Value {
        let mut flat = Map::new();
        flatten_into("", &serde_json::to_value(self).expect("config serializes"), &mut flat);
        Value::Object(flat)
    }
}

/// Maps/objects whose keys are free-form (not config fields) stay as one value.
const OPAQUE_KEYS: [&str; 3] = ["dataset.aspect_words", "dataset.extra_tests", "dataset.segments"];

fn flatten_into(prefix: &str, value: &Value, out: &mut Map<String, Value>) {
    match value {
        Value::Object(map) if !OPAQUE_KEYS.contains(&prefix) => {
            for (k, v) in map {
                let key = if prefix.is_empty() { k.clone() } else { format!("{prefix}.{k}") };
                flatten_into(&key, v, out);
            }
        }
        other => {
            out.insert(prefix.to_string(), other.clone());
        }
    }
}

fn unflatten(flat: &Map<String, Value>) -> Result<Value> {
    let mut root = Map::new();
    for (key, value) in flat {
        let parts: Vec<&str> = key.split('.').collect();
        // opaque maps keep their remaining dots inside the key
        let split = OPAQUE_KEYS
            .iter()
            .find(|o| key.starts_with(&format!("{o}.")))
            .map(|o| o.split('.').count());
        let (path, leaf): (Vec<&str>, String) = match split {
            Some(n) => (parts[..n].to_vec(), parts[n..].join(".")),
            None => (parts[..parts.len() - 1].to_vec(), parts[parts.len() - 1].to_string()),
        };
        let mut cursor = &mut root;
        for p in path {
            let entry = cursor
                .entry(p.to_string())
                .or_insert_with(|| Value::Object(Map::new()));
            cursor = entry
                .as_object_mut()
                .ok_or_else(|| Error::Config(format!("config key `{key}` conflicts with a scalar")))?;
        }
        cursor.insert(leaf, value.clone());
    }
    Ok(Value::Object(root))
}

/// Interprets a command-line value: JSON when it parses, otherwise a string.
pub fn parse_override_value(raw: &str) -> Value {
    serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()))
}
