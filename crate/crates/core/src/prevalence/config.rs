use std::collections::BTreeMap;
use std::io::Read;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::graph::Prior;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("reading {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("model config: {0}")]
    Toml(#[from] toml::de::Error),
    #[error("data csv: {0}")]
    Csv(#[from] csv::Error),
}

/// Everything needed to build a prevalence graph.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, rename_all = "kebab-case")]
pub struct ModelConfig {
    #[serde(default = "default_year")]
    pub year: u32,
    /// Gender → region → population size.
    #[serde(default)]
    pub populations: BTreeMap<String, BTreeMap<String, u64>>,
    #[serde(default)]
    pub groups: GroupsConfig,
    #[serde(default)]
    pub hyperpriors: HyperpriorConfig,
    #[serde(default)]
    pub bias: BiasConfig,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub aggregates: BTreeMap<String, AggregateConfig>,
    #[serde(default)]
    pub sources: BTreeMap<String, SourceConfig>,
    /// CSV of further data items, relative to the config file.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub data_csv: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub data: Vec<DataItem>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dynamics: Option<DynamicsConfig>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GroupsConfig {
    /// Restricts the model to these groups; all 13 when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub include: Option<Vec<String>>,
}

/// Settings for the joint prevalence–incidence model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, rename_all = "kebab-case")]
pub struct DynamicsConfig {
    pub years: usize,
    #[serde(default = "default_step")]
    pub step: f64,
    #[serde(default = "default_rate_upper")]
    pub rate_upper: f64,
    #[serde(default = "default_concentration")]
    pub initial_concentration: [f64; 4],
    /// Rate-data CSV, relative to the config file.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rate_csv: Option<PathBuf>,
}

fn default_step() -> f64 {
    crate::dynamics::DEFAULT_STEP
}

fn default_rate_upper() -> f64 {
    2.0
}

fn default_concentration() -> [f64; 4] {
    [1.0; 4]
}

fn default_year() -> u32 {
    2008
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, rename_all = "kebab-case")]
pub struct HyperpriorConfig {
    /// Link male π and δ to female values through log odds ratios.
    pub hierarchy: bool,
    pub sigma_pi_factor: f64,
    pub sigma_delta_factor: f64,
    pub omega_pi_factor: f64,
    pub omega_delta_factor: f64,
    /// Standard deviation of the normal prior on the top-level means.
    pub mean_sd: f64,
    pub rho_concentration: f64,
}

impl Default for HyperpriorConfig {
    fn default() -> Self {
        Self {
            hierarchy: true,
            sigma_pi_factor: 1.3,
            sigma_delta_factor: 1.3,
            omega_pi_factor: 1.6,
            omega_delta_factor: 1.3,
            mean_sd: 100.0,
            rho_concentration: 1.0,
        }
    }
}

impl HyperpriorConfig {
    /// Half-normal scale that puts 95% of units within a factor `f` of
    /// the mean on the odds scale.
    pub fn factor_scale(f: f64) -> f64 {
        f.ln() / 1.96
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, rename_all = "kebab-case")]
pub struct BiasConfig {
    /// Adds per-group under-reporting parameters to diagnosed counts.
    pub enabled: bool,
    pub prior: PriorConfig,
}

impl Default for BiasConfig {
    fn default() -> Self {
        Self {
            enabled: true,
            prior: PriorConfig::Uniform {
                lower: 0.0,
                upper: 0.15,
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "kebab-case", deny_unknown_fields)]
pub enum PriorConfig {
    Uniform { lower: f64, upper: f64 },
    Normal { mean: f64, sd: f64 },
    HalfNormal { sd: f64 },
}

impl PriorConfig {
    pub fn to_prior(&self) -> Prior {
        match *self {
            PriorConfig::Uniform { lower, upper } => Prior::Uniform { lower, upper },
            PriorConfig::Normal { mean, sd } => Prior::Normal { mean, sd },
            PriorConfig::HalfNormal { sd } => Prior::HalfNormal { sd },
        }
    }
}

/// Named mixture of groups with inclusion weights.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AggregateConfig {
    pub groups: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub weights: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SourceConfig {
    /// What binomial items from this source measure: `rho`, `pi`, `delta`
    /// or `undiagnosed-prevalence`. Poisson and multinomial items always
    /// measure diagnosed totals and splits.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub measure: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bias: Option<SourceBias>,
}

/// Additive bias `θ′ = θ + ε` on a transformed scale.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SourceBias {
    pub scale: BiasScale,
    pub prior: PriorConfig,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BiasScale {
    Logit,
    Log,
    Identity,
}

/// One observed count. `n` is required for binomial items; a Poisson item
/// targets the diagnosed total of `group = "all"`; a multinomial item
/// carries one group's count of a diagnosed split.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataItem {
    pub source: String,
    pub gender: String,
    pub group: String,
    pub region: String,
    pub family: String,
    pub x: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n: Option<u64>,
    /// Year index for joint-model prevalence data.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub t: Option<usize>,
}

impl ModelConfig {
    pub fn from_toml_str(text: &str) -> Result<Self, ConfigError> {
        Ok(toml::from_str(text)?)
    }

    /// Reads a config and appends the rows of its `data-csv`, if any.
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let mut config = Self::from_toml_str(&text)?;
        if let Some(csv_path) = config.data_csv.take() {
            let full = path.parent().unwrap_or(Path::new(".")).join(&csv_path);
            let file = std::fs::File::open(&full).map_err(|source| ConfigError::Io {
                path: full.clone(),
                source,
            })?;
            config.data.extend(read_data_csv(file)?);
        }
        Ok(config)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("model configs always serialize")
    }
}

/// Parses `source,gender,group,region,family,x,n` with an optional
/// trailing `t` column; `n` may be empty.
pub fn read_data_csv(reader: impl Read) -> Result<Vec<DataItem>, csv::Error> {
    csv::Reader::from_reader(reader).deserialize().collect()
}

pub fn write_data_csv(items: &[DataItem], writer: impl std::io::Write) -> Result<(), csv::Error> {
    let timed = items.iter().any(|it| it.t.is_some());
    let mut w = csv::Writer::from_writer(writer);
    let mut header = vec!["source", "gender", "group", "region", "family", "x", "n"];
    if timed {
        header.push("t");
    }
    w.write_record(&header)?;
    for it in items {
        let mut row = vec![
            it.source.clone(),
            it.gender.clone(),
            it.group.clone(),
            it.region.clone(),
            it.family.clone(),
            it.x.to_string(),
            it.n.map(|n| n.to_string()).unwrap_or_default(),
        ];
        if timed {
            row.push(it.t.map(|t| t.to_string()).unwrap_or_default());
        }
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    const SMALL: &str = r#"
[populations.female]
inner-london = 1000

[sources.idu-survey]
measure = "pi"

[[data]]
source = "idu-survey"
gender = "female"
group = "female-idu-current"
region = "inner-london"
family = "binomial"
x = 3
n = 50
"#;

    #[test]
    fn parses_with_defaults() {
        let cfg = ModelConfig::from_toml_str(SMALL).unwrap();
        assert_eq!(cfg.year, 2008);
        assert_eq!(cfg.hyperpriors.omega_pi_factor, 1.6);
        assert_eq!(cfg.data.len(), 1);
        assert_eq!(cfg.data[0].n, Some(50));
        let back = ModelConfig::from_toml_str(&cfg.to_toml_string()).unwrap();
        assert_eq!(back, cfg);
        assert!(ModelConfig::from_toml_str("populations = 3").is_err());
        assert!(ModelConfig::from_toml_str("[populations]\n[typo]\n").is_err());
    }

    #[test]
    fn csv_round_trip() {
        let text = "source,gender,group,region,family,x,n\n\
                    hars,male,all,inner-london,poisson,120,\n\
                    ua,female,female-sti,rest-of-ew,binomial,4,300\n";
        let items = read_data_csv(text.as_bytes()).unwrap();
        assert_eq!(items[0].n, None);
        assert_eq!(items[1].n, Some(300));
        let mut out = Vec::new();
        write_data_csv(&items, &mut out).unwrap();
        assert_eq!(String::from_utf8(out).unwrap(), text);
    }

    #[test]
    fn factor_scale() {
        assert!((HyperpriorConfig::factor_scale(1.3) - 0.133859).abs() < 1e-6);
    }
}
