use std::path::{Path, PathBuf};

use schemars::JsonSchema;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::fl::FlConfig;
use crate::model::{ArchKind, TaskSpec};
use crate::watermark::atgf::AeTraining;
use crate::watermark::trigger::TriggerParams;
use crate::watermark::weight::WeightMarkParams;
use crate::watermark::SchemeId;

/// Overrides the config's `seed` when set.
pub const SEED_ENV: &str = "MSIGN_SEED";

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{path}:{line}:{column}: {field}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        column: usize,
        field: String,
        message: String,
    },
    #[error("{field}: {message}")]
    Invalid { field: String, message: String },
}

impl ConfigError {
    fn invalid(field: &str, message: impl Into<String>) -> Self {
        ConfigError::Invalid {
            field: field.to_string(),
            message: message.into(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, JsonSchema)]
#[serde(rename_all = "kebab-case")]
pub enum ScenarioKind {
    FlCentralized,
    FlP2p,
    Capacity,
    SpoilBench,
    TraceBench,
    PirateFuzz,
}

/// Settings for the peer-to-peer chain. The chain drifts further from the
/// step keys than central aggregation does, so it trains gently and
/// repairs weight marks only briefly.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(deny_unknown_fields)]
pub struct P2pSettings {
    /// Only `local_epochs` and `lr` matter here.
    #[serde(default = "P2pSettings::default_fl")]
    pub fl: FlConfig,
    #[serde(default = "P2pSettings::default_weightmark")]
    pub weightmark: WeightMarkParams,
    /// Full-batch epochs on the public replay head before the chain starts.
    #[serde(default = "P2pSettings::default_warm_start_epochs")]
    pub warm_start_epochs: usize,
    #[serde(default = "P2pSettings::default_warm_start_lr")]
    pub warm_start_lr: f64,
    /// Author indices in visiting order. Drawn at random when absent.
    #[serde(default)]
    pub schedule: Option<Vec<usize>>,
    /// Length of a random schedule.
    #[serde(default = "P2pSettings::default_chain_length")]
    pub chain_length: usize,
}

impl P2pSettings {
    fn default_fl() -> FlConfig {
        FlConfig {
            lr: 0.1,
            local_epochs: 5,
            ..Default::default()
        }
    }
    fn default_weightmark() -> WeightMarkParams {
        WeightMarkParams {
            repair_epochs: 10,
            repair_lr: 0.1,
            ..Default::default()
        }
    }
    fn default_warm_start_epochs() -> usize {
        50
    }
    fn default_warm_start_lr() -> f64 {
        0.5
    }
    fn default_chain_length() -> usize {
        5
    }
}

impl Default for P2pSettings {
    fn default() -> Self {
        P2pSettings {
            fl: Self::default_fl(),
            weightmark: Self::default_weightmark(),
            warm_start_epochs: Self::default_warm_start_epochs(),
            warm_start_lr: Self::default_warm_start_lr(),
            schedule: None,
            chain_length: Self::default_chain_length(),
        }
    }
}

/// One scenario run. Every field except `scenario` has a default.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub scenario: ScenarioKind,
    #[serde(default = "ScenarioConfig::default_scheme")]
    pub scheme: SchemeId,
    /// Schemes compared by `capacity` and `spoil-bench`.
    #[serde(default)]
    pub schemes: Option<Vec<SchemeId>>,
    /// Number of authors.
    #[serde(default = "ScenarioConfig::default_k")]
    pub k: usize,
    /// Author counts swept by `spoil-bench`.
    #[serde(default = "ScenarioConfig::default_k_values")]
    pub k_values: Vec<usize>,
    /// Top-level seed; every run derives its own from it.
    #[serde(default)]
    pub seed: u64,
    /// Independent repetitions, each with its own derived seed.
    #[serde(default = "ScenarioConfig::default_runs")]
    pub runs: usize,
    #[serde(default = "ScenarioConfig::default_dataset")]
    pub dataset: TaskSpec,
    #[serde(default = "ScenarioConfig::default_arch")]
    pub arch: ArchKind,
    /// Architectures compared by `capacity`.
    #[serde(default = "ScenarioConfig::default_archs")]
    pub archs: Vec<ArchKind>,
    /// Training samples held back as replay data for embedding.
    #[serde(default = "ScenarioConfig::default_replay_size")]
    pub replay_size: usize,
    /// Centralised training of the clean model for the benches.
    #[serde(default = "ScenarioConfig::default_train_epochs")]
    pub train_epochs: usize,
    #[serde(default = "ScenarioConfig::default_train_lr")]
    pub train_lr: f64,
    #[serde(default = "ScenarioConfig::default_community_size")]
    pub community_size: usize,
    #[serde(default)]
    pub fl: FlConfig,
    #[serde(default)]
    pub weightmark: WeightMarkParams,
    /// Shared by the random-trigger and autoencoder-trigger schemes.
    #[serde(default)]
    pub trigger: TriggerParams,
    #[serde(default)]
    pub atgf: AeTraining,
    #[serde(default)]
    pub p2p: P2pSettings,
    #[serde(default = "ScenarioConfig::default_cap_max")]
    pub cap_max: usize,
    /// Forgery attempts per piracy strategy.
    #[serde(default = "ScenarioConfig::default_trials")]
    pub trials: usize,
    /// Epochs a traitor fine-tunes on its own data before publishing.
    #[serde(default = "ScenarioConfig::default_finetune_epochs")]
    pub finetune_epochs: usize,
    /// When set, `fl-centralized` fails if watermarking costs more accuracy
    /// than this against plain federated training.
    #[serde(default)]
    pub max_accuracy_drop: Option<f64>,
    #[serde(default = "ScenarioConfig::default_output_dir")]
    pub output_dir: PathBuf,
}

impl ScenarioConfig {
    fn default_scheme() -> SchemeId {
        SchemeId::WeightMark
    }
    fn default_k() -> usize {
        4
    }
    fn default_k_values() -> Vec<usize> {
        vec![2, 4, 8]
    }
    fn default_runs() -> usize {
        1
    }
    fn default_dataset() -> TaskSpec {
        TaskSpec::new(4, 16, 400)
    }
    fn default_arch() -> ArchKind {
        ArchKind::Default
    }
    fn default_archs() -> Vec<ArchKind> {
        vec![ArchKind::Default, ArchKind::Deep]
    }
    fn default_replay_size() -> usize {
        256
    }
    fn default_train_epochs() -> usize {
        300
    }
    fn default_train_lr() -> f64 {
        0.5
    }
    fn default_community_size() -> usize {
        crate::verify::DEFAULT_COMMUNITY_SIZE
    }
    fn default_cap_max() -> usize {
        crate::capacity::DEFAULT_CAP_MAX
    }
    fn default_trials() -> usize {
        10_000
    }
    fn default_finetune_epochs() -> usize {
        5
    }
    fn default_output_dir() -> PathBuf {
        PathBuf::from("out")
    }

    /// A config for `scenario` with every other field at its default.
    pub fn new(scenario: ScenarioKind) -> Self {
        serde_json::from_value(serde_json::json!({ "scenario": scenario })).expect("defaults deserialize")
    }

    pub fn from_json(text: &str, path: &Path) -> Result<Self, ConfigError> {
        let de = &mut serde_json::Deserializer::from_str(text);
        let config: ScenarioConfig = serde_path_to_error::deserialize(de).map_err(|e| {
            let field = e.path().to_string();
            let inner = e.into_inner();
            ConfigError::Parse {
                path: path.to_path_buf(),
                line: inner.line(),
                column: inner.column(),
                field,
                message: inner.to_string(),
            }
        })?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_json(&text, path)
    }

    /// Applies `MSIGN_SEED` if it is set.
    pub fn with_seed_override(mut self, value: Option<&str>) -> Result<Self, ConfigError> {
        if let Some(v) = value {
            self.seed = v
                .trim()
                .parse()
                .map_err(|_| ConfigError::invalid(SEED_ENV, format!("expected an unsigned integer, got {v:?}")))?;
        }
        Ok(self)
    }

    /// Schemes for the comparison benches.
    pub fn bench_schemes(&self) -> Vec<SchemeId> {
        match (&self.schemes, self.scenario) {
            (Some(s), _) => s.clone(),
            (None, ScenarioKind::Capacity) => vec![SchemeId::WeightMark, SchemeId::TriggerMark],
            (None, ScenarioKind::SpoilBench) => vec![SchemeId::WeightMark, SchemeId::TriggerMark, SchemeId::AtgfMark],
            (None, _) => vec![self.scheme],
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let d = &self.dataset;
        if d.num_classes < 2 {
            return Err(ConfigError::invalid("dataset.num_classes", "need at least 2 classes"));
        }
        if d.dim == 0 || d.n_per_class == 0 {
            return Err(ConfigError::invalid("dataset", "dim and n_per_class must be positive"));
        }
        if !(d.separation.is_finite() && d.separation > 0.0) {
            return Err(ConfigError::invalid(
                "dataset.separation",
                "must be finite and positive",
            ));
        }
        if self.k == 0 {
            return Err(ConfigError::invalid("k", "need at least one author"));
        }
        if self.runs == 0 {
            return Err(ConfigError::invalid("runs", "must be at least 1"));
        }
        if self.community_size == 0 {
            return Err(ConfigError::invalid("community_size", "must be at least 1"));
        }
        let n = d.num_classes * d.n_per_class;
        let widest_k = self.k_values.iter().copied().chain([self.k]).max().unwrap_or(self.k);
        if self.replay_size + widest_k > n {
            return Err(ConfigError::invalid(
                "replay_size",
                format!(
                    "{n} training samples cannot cover {} replay samples and {widest_k} authors",
                    self.replay_size
                ),
            ));
        }
        if !(self.fl.lr.is_finite() && self.fl.lr >= 0.0) {
            return Err(ConfigError::invalid("fl.lr", "must be finite and non-negative"));
        }
        if self.fl.rounds == 0 {
            return Err(ConfigError::invalid("fl.rounds", "must be at least 1"));
        }
        if !(self.train_lr.is_finite() && self.train_lr > 0.0) {
            return Err(ConfigError::invalid("train_lr", "must be finite and positive"));
        }
        if let Some(drop) = self.max_accuracy_drop {
            if !(0.0..=1.0).contains(&drop) {
                return Err(ConfigError::invalid("max_accuracy_drop", "must be in [0, 1]"));
            }
        }
        match &self.p2p.schedule {
            Some(s) if s.is_empty() => return Err(ConfigError::invalid("p2p.schedule", "must not be empty")),
            Some(s) => {
                if let Some(bad) = s.iter().find(|&&i| i >= self.k) {
                    return Err(ConfigError::invalid(
                        "p2p.schedule",
                        format!("author index {bad} out of range for k = {}", self.k),
                    ));
                }
            }
            None if self.p2p.chain_length == 0 => {
                return Err(ConfigError::invalid("p2p.chain_length", "must be at least 1"))
            }
            None => {}
        }
        match self.scenario {
            ScenarioKind::SpoilBench => {
                if self.k_values.is_empty() || self.k_values.iter().any(|&k| k < 2) {
                    return Err(ConfigError::invalid(
                        "k_values",
                        "need at least one value, each at least 2",
                    ));
                }
            }
            ScenarioKind::Capacity => {
                if self.archs.is_empty() {
                    return Err(ConfigError::invalid("archs", "must not be empty"));
                }
                if self.cap_max == 0 {
                    return Err(ConfigError::invalid("cap_max", "must be at least 1"));
                }
            }
            ScenarioKind::PirateFuzz if self.trials == 0 => {
                return Err(ConfigError::invalid("trials", "must be at least 1"));
            }
            _ => {}
        }
        if self.schemes.as_ref().is_some_and(|s| s.is_empty()) {
            return Err(ConfigError::invalid("schemes", "must not be empty"));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(text: &str) -> Result<ScenarioConfig, ConfigError> {
        ScenarioConfig::from_json(text, Path::new("c.json"))
    }

    #[test]
    fn minimal_config_takes_defaults() {
        let c = parse(r#"{"scenario": "fl-centralized"}"#).unwrap();
        assert_eq!(c, ScenarioConfig::new(ScenarioKind::FlCentralized));
        assert_eq!((c.k, c.runs, c.community_size), (4, 1, 7));
    }

    #[test]
    fn unknown_field_names_the_field_and_line() {
        let err = parse("{\n  \"scenario\": \"capacity\",\n  \"fl\": {\"lr\": 0.1, \"lrr\": 2}\n}").unwrap_err();
        match err {
            ConfigError::Parse {
                line, field, message, ..
            } => {
                assert_eq!(line, 3);
                assert!(field.starts_with("fl"), "{field}");
                assert!(message.contains("lrr"), "{message}");
            }
            other => panic!("{other}"),
        }
    }

    #[test]
    fn bad_values_are_rejected_before_work() {
        for (text, field) in [
            (r#"{"scenario": "fl-p2p", "k": 0}"#, "k"),
            (r#"{"scenario": "fl-p2p", "p2p": {"schedule": [0, 9]}}"#, "p2p.schedule"),
            (r#"{"scenario": "spoil-bench", "k_values": [1]}"#, "k_values"),
            (r#"{"scenario": "capacity", "replay_size": 100000}"#, "replay_size"),
        ] {
            match parse(text).unwrap_err() {
                ConfigError::Invalid { field: f, .. } => assert_eq!(f, field),
                other => panic!("{text}: {other}"),
            }
        }
    }

    #[test]
    fn seed_override() {
        let c = ScenarioConfig::new(ScenarioKind::Capacity);
        assert_eq!(c.clone().with_seed_override(Some("42")).unwrap().seed, 42);
        assert_eq!(c.clone().with_seed_override(None).unwrap().seed, 0);
        assert!(c.with_seed_override(Some("x")).is_err());
    }
}
