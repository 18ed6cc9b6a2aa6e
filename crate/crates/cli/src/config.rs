//! Run configuration: one TOML file plus `key=value` overrides.

use serde::{Deserialize, Serialize};

use melodia::dataset::DatasetConfig;
use melodia::model::{Decoding, ModelConfig, TrainConfig};
use melodia::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    #[serde(default)]
    pub dataset: DatasetConfig,
    /// Vocabulary sizes are taken from the dataset cache, not from here.
    #[serde(default)]
    pub model: ModelConfig,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default)]
    pub generate: GenerateConfig,
    #[serde(default)]
    pub analysis: AnalysisConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GenerateConfig {
    pub count: usize,
    pub length: usize,
    /// `sample` or `greedy`.
    pub decoding: String,
    pub temperature: f64,
}

impl Default for GenerateConfig {
    fn default() -> Self {
        GenerateConfig { count: 5, length: 100, decoding: "sample".into(), temperature: 1.0 }
    }
}

impl GenerateConfig {
    pub fn decoding(&self) -> Result<Decoding> {
        match self.decoding.as_str() {
            "greedy" => Ok(Decoding::Greedy),
            "sample" if self.temperature > 0.0 => Ok(Decoding::Sample { temperature: self.temperature }),
            "sample" => Err(Error::Config(format!("temperature {} must be positive", self.temperature))),
            other => Err(Error::Config(format!("unknown decoding {other:?}; expected sample or greedy"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AnalysisConfig {
    pub steps: usize,
    pub pairs: usize,
    /// Notes generated per interpolation point.
    pub length: usize,
    pub pca_dims: usize,
    pub svg: bool,
}

impl Default for AnalysisConfig {
    fn default() -> Self {
        AnalysisConfig { steps: 11, pairs: 100, length: 100, pca_dims: 2, svg: true }
    }
}

impl RunConfig {
    /// Parses `text`, applies overrides and the seed flag, then validates.
    pub fn load(text: &str, overrides: &[String], seed: Option<u64>) -> Result<Self> {
        let mut table: toml::Table = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        for item in overrides {
            apply_override(&mut table, item)?;
        }
        if let Some(seed) = seed {
            table.insert("seed".into(), toml::Value::Integer(seed as i64));
        }
        if !table.contains_key("seed") {
            return Err(Error::Config("a seed is required (config `seed = …` or --seed)".into()));
        }
        let config: RunConfig = table.try_into().map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<()> {
        self.dataset.validate()?;
        self.train.validate()?;
        self.generate.decoding()?;
        let mut model = self.model.clone();
        model.vocab_sizes = [1; 3];
        model.validate()?;
        if self.generate.count == 0 || self.generate.length == 0 {
            return Err(Error::Config("generate.count and generate.length must be positive".into()));
        }
        let a = &self.analysis;
        if a.steps < 2 || a.pairs == 0 || a.length == 0 || a.pca_dims == 0 {
            return Err(Error::Config("analysis.steps ≥ 2; pairs, length and pca_dims positive".into()));
        }
        Ok(())
    }
}

/// Sets a dotted key; the value is read as a TOML literal, or as a string
/// when it does not parse as one.
pub fn apply_override(table: &mut toml::Table, item: &str) -> Result<()> {
    let (key, raw) = item.split_once('=').ok_or_else(|| Error::Config(format!("override {item:?} is not key=value")))?;
    let value = toml::from_str::<toml::Table>(&format!("v = {raw}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.trim().to_string()));
    let parts: Vec<&str> = key.trim().split('.').collect();
    let (last, path) = parts.split_last().expect("split yields one part");
    let mut cur = table;
    for p in path {
        cur = cur
            .entry(p.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()))
            .as_table_mut()
            .ok_or_else(|| Error::Config(format!("override {key}: {p} is not a table")))?;
    }
    cur.insert(last.to_string(), value);
    Ok(())
}
