use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};

use super::{CliError, SamplerArgs};
use crate::sampler::SamplerConfig;

/// File name of the manifest inside an output directory.
pub const MANIFEST_FILE: &str = "manifest";

/// Everything needed to repeat a fit, stored as TOML next to its outputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub version: String,
    pub config: PathBuf,
    #[serde(default)]
    pub data: Vec<PathBuf>,
    #[serde(default)]
    pub rates: Vec<PathBuf>,
    pub out: PathBuf,
    pub seed: u64,
    pub chains: usize,
    pub iterations: usize,
    pub burnin: usize,
    pub thin: usize,
    pub rhat_threshold: f64,
    /// Unix seconds.
    pub started: Option<u64>,
    pub finished: Option<u64>,
}

fn absolute(p: &Path) -> PathBuf {
    std::path::absolute(p).unwrap_or_else(|_| p.to_path_buf())
}

fn now() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0)
}

impl RunManifest {
    pub fn new(
        command: &str,
        config: &Path,
        data: &[PathBuf],
        rates: &[PathBuf],
        sampler: &SamplerArgs,
    ) -> Self {
        RunManifest {
            command: command.to_string(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            config: absolute(config),
            data: data.iter().map(|p| absolute(p)).collect(),
            rates: rates.iter().map(|p| absolute(p)).collect(),
            out: absolute(&sampler.out),
            seed: sampler.seed,
            chains: sampler.chains,
            iterations: sampler.iterations,
            burnin: sampler.burnin,
            thin: sampler.thin,
            rhat_threshold: sampler.rhat_threshold,
            started: None,
            finished: None,
        }
    }

    pub fn read(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|source| CliError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        toml::from_str(&text).map_err(|e| CliError::Parse(format!("{}: {e}", path.display())))
    }

    pub fn sampler_config(&self) -> SamplerConfig {
        SamplerConfig {
            chains: self.chains,
            iterations: self.iterations,
            burnin: self.burnin,
            thin: self.thin,
            seed: self.seed,
            ..SamplerConfig::default()
        }
    }

    pub fn start(&mut self) {
        self.started = Some(now());
        self.finished = None;
    }

    pub fn finish(&mut self) {
        self.finished = Some(now());
    }

    /// Writes `manifest` into `out_dir`, creating the directory.
    pub fn write(&self, out_dir: &Path) -> Result<PathBuf, CliError> {
        let io = |source| CliError::Io {
            path: out_dir.to_path_buf(),
            source,
        };
        std::fs::create_dir_all(out_dir).map_err(io)?;
        let path = out_dir.join(MANIFEST_FILE);
        let text = toml::to_string(self).map_err(|e| CliError::Parse(e.to_string()))?;
        std::fs::write(&path, text).map_err(|source| CliError::Io {
            path: path.clone(),
            source,
        })?;
        Ok(path)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trips_through_toml() {
        let dir = tempfile::tempdir().unwrap();
        let args = SamplerArgs {
            chains: 3,
            iterations: 200,
            burnin: 100,
            thin: 2,
            seed: 9,
            rhat_threshold: 1.1,
            out: dir.path().to_path_buf(),
        };
        let mut m = RunManifest::new(
            "fit",
            Path::new("model.toml"),
            &[PathBuf::from("d.csv")],
            &[],
            &args,
        );
        m.start();
        m.finish();
        let path = m.write(dir.path()).unwrap();
        let back = RunManifest::read(&path).unwrap();
        assert_eq!(back, m);
        assert!(back.config.is_absolute());
        assert_eq!(back.sampler_config().thin, 2);
    }
}
