use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::classifier::{BootstrapConfig, ClassifierConfig};
use crate::corpus::UpsampleConfig;
use crate::embedding::{Backend, Doc2VecParams};
use crate::error::{Error, Result};
use crate::tuning::TuningConfig;

/// Everything a run depends on besides its input files.
///
/// Unknown keys are rejected at every level, so a typo in a config file is
/// an error rather than a silently ignored setting.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    /// Thread count; 0 uses every available core.
    #[serde(default)]
    pub workers: usize,
    /// Goals to process; omitted means every goal found in the corpus.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub goals: Option<Vec<String>>,
    pub input: InputConfig,
    #[serde(default)]
    pub embedding: EmbeddingConfig,
    #[serde(default)]
    pub upsample: UpsampleSettings,
    #[serde(default)]
    pub tuning: TuningConfig,
    #[serde(default)]
    pub classifier: ClassifierConfig,
    #[serde(default)]
    pub bootstrap: BootstrapConfig,
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("runs/default")
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InputConfig {
    pub labeled: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub unlabeled: Option<PathBuf>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EmbeddingConfig {
    pub backend: Backend,
    /// Minimum document frequency for the TF-IDF vocabulary.
    pub min_count: usize,
    /// TF-IDF random projection width; 0 keeps the full vocabulary width.
    pub projection_dim: usize,
    pub doc2vec: Doc2VecParams,
}

impl Default for EmbeddingConfig {
    fn default() -> Self {
        EmbeddingConfig {
            backend: Backend::Tfidf,
            min_count: 2,
            projection_dim: 128,
            doc2vec: Doc2VecParams::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct UpsampleSettings {
    pub enabled: bool,
    pub target_positive_fraction: f64,
    pub max_replicas: usize,
}

impl Default for UpsampleSettings {
    fn default() -> Self {
        let c = UpsampleConfig::default();
        UpsampleSettings {
            enabled: true,
            target_positive_fraction: c.target_positive_fraction,
            max_replicas: c.max_replicas,
        }
    }
}

impl UpsampleSettings {
    pub fn config(&self) -> UpsampleConfig {
        UpsampleConfig {
            target_positive_fraction: self.target_positive_fraction,
            max_replicas: self.max_replicas,
        }
    }
}

fn config_err(e: Error) -> Error {
    match e {
        Error::InvalidParameter(m) => Error::Config(m),
        other => other,
    }
}

impl PipelineConfig {
    /// A config with defaults everywhere and the given labeled input.
    pub fn new(labeled: impl Into<PathBuf>) -> Self {
        PipelineConfig {
            seed: 0,
            output_dir: default_output_dir(),
            workers: 0,
            goals: None,
            input: InputConfig {
                labeled: labeled.into(),
                unlabeled: None,
            },
            embedding: EmbeddingConfig::default(),
            upsample: UpsampleSettings::default(),
            tuning: TuningConfig::default(),
            classifier: ClassifierConfig::default(),
            bootstrap: BootstrapConfig::default(),
        }
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        Self::from_toml_with(text, &[])
    }

    /// Parses `text`, then applies `key.path=value` overrides in order.
    /// Values are read as TOML and fall back to plain strings.
    pub fn from_toml_with(text: &str, overrides: &[String]) -> Result<Self> {
        let mut tree: toml::Table = text
            .parse()
            .map_err(|e: toml::de::Error| Error::Config(e.to_string().trim_end().to_string()))?;
        for item in overrides {
            apply_override(&mut tree, item)?;
        }
        let config: PipelineConfig = tree
            .try_into()
            .map_err(|e: toml::de::Error| Error::Config(e.to_string().trim_end().to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &Path, overrides: &[String]) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml_with(&text, overrides)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        if let Some(goals) = &self.goals {
            if goals.is_empty() {
                return Err(Error::Config(
                    "goals is empty; list at least one goal or omit the key".into(),
                ));
            }
            let mut seen = std::collections::BTreeSet::new();
            if let Some(g) = goals.iter().find(|g| !seen.insert(g.as_str())) {
                return Err(Error::Config(format!("goal {g:?} is listed twice")));
            }
        }
        if self.embedding.min_count == 0 {
            return Err(Error::Config(
                "embedding.min_count must be at least 1".into(),
            ));
        }
        if self.embedding.backend == Backend::Doc2vec {
            self.embedding.doc2vec.validate().map_err(config_err)?;
        }
        self.upsample.config().validate().map_err(config_err)?;
        self.tuning.grid.validate().map_err(config_err)?;
        if !(0.0..=1.0).contains(&self.tuning.min_coverage) {
            return Err(Error::Config(format!(
                "tuning.min_coverage must lie in [0, 1], got {}",
                self.tuning.min_coverage
            )));
        }
        self.classifier.validate().map_err(config_err)?;
        self.bootstrap.validate().map_err(config_err)?;
        Ok(())
    }

    /// SHA-256 of the canonical JSON form.
    pub fn digest(&self) -> String {
        crate::artifact::sha256_bytes(&serde_json::to_vec(self).expect("config serializes"))
    }
}

fn apply_override(tree: &mut toml::Table, item: &str) -> Result<()> {
    let (key, raw) = item
        .split_once('=')
        .ok_or_else(|| Error::Config(format!("override {item:?} is not of the form key=value")))?;
    let parts: Vec<&str> = key.trim().split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err(Error::Config(format!("override key {key:?} is malformed")));
    }
    let value = parse_value(raw.trim());
    let mut table = tree;
    for part in &parts[..parts.len() - 1] {
        let entry = table
            .entry(part.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        table = entry
            .as_table_mut()
            .ok_or_else(|| Error::Config(format!("override {key:?}: {part:?} is not a table")))?;
    }
    table.insert(parts[parts.len() - 1].to_string(), value);
    Ok(())
}

fn parse_value(raw: &str) -> toml::Value {
    format!("v = {raw}")
        .parse::<toml::Table>()
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = "[input]\nlabeled = \"data.jsonl\"\n";

    #[test]
    fn defaults_fill_in() {
        let c = PipelineConfig::from_toml(MINIMAL).unwrap();
        assert_eq!(c, PipelineConfig::new("data.jsonl"));
        assert_eq!(c.tuning.grid.len(), 60);
        assert_eq!(c.classifier.dropout, [0.8, 0.6]);
    }

    #[test]
    fn round_trips_through_toml() {
        let mut c = PipelineConfig::new("a.jsonl");
        c.goals = Some(vec!["g1".into()]);
        c.input.unlabeled = Some("b.jsonl".into());
        let back = PipelineConfig::from_toml(&c.to_toml()).unwrap();
        assert_eq!(back, c);
        assert_eq!(back.digest(), c.digest());
    }

    #[test]
    fn empty_goals_and_unknown_keys_are_config_errors() {
        let e = PipelineConfig::from_toml(&format!("goals = []\n{MINIMAL}")).unwrap_err();
        assert_eq!(e.exit_code(), 2);
        let e = PipelineConfig::from_toml(&format!("{MINIMAL}[tuning]\nmin_coverag = 0.2\n"))
            .unwrap_err();
        assert!(matches!(e, Error::Config(_)));
        let e = PipelineConfig::from_toml(&format!("{MINIMAL}[classifier]\ndropout = [0.5]\n"))
            .unwrap_err();
        assert_eq!(e.exit_code(), 2);
    }

    #[test]
    fn overrides_apply_one_to_one() {
        let overrides = [
            "seed=7".to_string(),
            "tuning.grid.clusters=[2, 3]".to_string(),
            "output_dir=out/x".to_string(),
            "bootstrap.iterations=10".to_string(),
        ];
        let c = PipelineConfig::from_toml_with(MINIMAL, &overrides).unwrap();
        assert_eq!(c.seed, 7);
        assert_eq!(c.tuning.grid.clusters, [2, 3]);
        assert_eq!(c.output_dir, PathBuf::from("out/x"));
        assert_eq!(c.bootstrap.iterations, 10);
        assert!(PipelineConfig::from_toml_with(MINIMAL, &["seed".to_string()]).is_err());
        assert!(PipelineConfig::from_toml_with(MINIMAL, &["seed=-1".to_string()]).is_err());
    }
}
