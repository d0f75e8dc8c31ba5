//! Versioned experiment configuration file.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use otfcl::dataio::{generate_synthetic, read_dump, Dataset, SyntheticSpec};
use otfcl::protocol::RunConfig;
use serde::{Deserialize, Serialize};

pub const CONFIG_VERSION: u32 = 1;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum DataSource {
    /// Generate train/test features in memory.
    Synthetic(SyntheticSpec),
    /// Read `I2FV` dumps; relative paths resolve against the config file.
    Dumps { train: PathBuf, test: PathBuf },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub version: u32,
    #[serde(default)]
    pub run: RunConfig,
    pub data: DataSource,
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("reading config {}", path.display()))?;
        let mut cfg: ExperimentConfig = serde_json::from_str(&text)
            .with_context(|| format!("parsing config {}", path.display()))?;
        if cfg.version != CONFIG_VERSION {
            bail!(
                "config version {} is not supported (expected {CONFIG_VERSION})",
                cfg.version
            );
        }
        if let DataSource::Dumps { train, test } = &mut cfg.data {
            let base = path.parent().unwrap_or(Path::new("."));
            *train = base.join(&*train);
            *test = base.join(&*test);
        }
        Ok(cfg)
    }

    /// Sets the root seed of the run and, for synthetic data, of the data too.
    pub fn reseed(&mut self, seed: u64) {
        self.run.seed = seed;
        if let DataSource::Synthetic(spec) = &mut self.data {
            spec.seed = seed;
        }
    }

    pub fn load_data(&self) -> Result<(Dataset, Dataset)> {
        match &self.data {
            DataSource::Synthetic(spec) => {
                let (train, test) = generate_synthetic(spec)?;
                Ok((Dataset::from(&train), Dataset::from(&test)))
            }
            DataSource::Dumps { train, test } => {
                let tr = read_dump(train)
                    .with_context(|| format!("reading train dump {}", train.display()))?;
                let te = read_dump(test)
                    .with_context(|| format!("reading test dump {}", test.display()))?;
                if tr.dim != te.dim {
                    bail!("train dim {} differs from test dim {}", tr.dim, te.dim);
                }
                Ok((Dataset::from(&tr), Dataset::from(&te)))
            }
        }
    }
}
