//! The JSON run configuration read by `fit`.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use dkaj::cluster::epsilon_from_squared_radius;
use dkaj::data::DataSpec;
use dkaj::embedding::EmbeddingConfig;
use dkaj::pipeline::FitConfig;
use dkaj::sft::SftConfig;
use dkaj::train::TrainConfig;
use serde::{Deserialize, Serialize};

use crate::encoding::ExtF64;

/// Default cluster radius, the square root of a squared radius of 0.1.
pub const DEFAULT_SQUARED_RADIUS: f64 = 0.1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataConfig {
    pub train: PathBuf,
    /// Validation rows; when absent, 20% of `train` is held out.
    #[serde(default)]
    pub valid: Option<PathBuf>,
    #[serde(default)]
    pub columns: DataSpec,
}

fn default_min_kernel_weight() -> f64 {
    0.01
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub data: DataConfig,
    #[serde(default)]
    pub embedding: EmbeddingConfig,
    #[serde(default)]
    pub train: TrainConfig,
    /// Cluster radius; a number or `"inf"`.
    #[serde(default)]
    pub epsilon: Option<ExtF64>,
    /// Alternative to `epsilon`, given as a squared radius.
    #[serde(default)]
    pub squared_radius: Option<ExtF64>,
    #[serde(default = "default_min_kernel_weight")]
    pub min_kernel_weight: f64,
    #[serde(default)]
    pub cluster_shuffle_seed: Option<u64>,
    #[serde(default)]
    pub sft: SftConfig,
    /// Seed of the train/validation split when `data.valid` is absent.
    #[serde(default)]
    pub seed: u64,
    pub output_dir: PathBuf,
}

impl RunConfig {
    /// Parses and validates a config file. Relative paths resolve against the
    /// directory holding the file.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("cannot read config `{}`", path.display()))?;
        let mut cfg: RunConfig = serde_json::from_str(&text)
            .with_context(|| format!("invalid config `{}`", path.display()))?;
        let base = path.parent().unwrap_or(Path::new(""));
        cfg.resolve(base);
        cfg.validate()?;
        Ok(cfg)
    }

    fn resolve(&mut self, base: &Path) {
        let join = |p: &PathBuf| {
            if p.is_absolute() {
                p.clone()
            } else {
                base.join(p)
            }
        };
        self.data.train = join(&self.data.train);
        self.data.valid = self.data.valid.as_ref().map(join);
        self.output_dir = join(&self.output_dir);
    }

    pub fn epsilon(&self) -> f64 {
        match (self.epsilon, self.squared_radius) {
            (Some(e), _) => e.0,
            (None, Some(r)) => epsilon_from_squared_radius(r.0),
            (None, None) => epsilon_from_squared_radius(DEFAULT_SQUARED_RADIUS),
        }
    }

    pub fn fit_config(&self) -> FitConfig {
        FitConfig {
            embedding: self.embedding.clone(),
            train: self.train.clone(),
            epsilon: self.epsilon(),
            min_kernel_weight: self.min_kernel_weight,
            cluster_shuffle_seed: self.cluster_shuffle_seed,
            sft: self.sft.clone(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !self.data.train.is_file() {
            bail!(
                "data.train: file `{}` does not exist",
                self.data.train.display()
            );
        }
        if let Some(v) = &self.data.valid {
            if !v.is_file() {
                bail!("data.valid: file `{}` does not exist", v.display());
            }
        }
        if self.epsilon.is_some() && self.squared_radius.is_some() {
            bail!("epsilon: give either epsilon or squared_radius, not both");
        }
        if let Some(r) = self.squared_radius {
            if r.0.is_nan() || r.0 < 0.0 {
                bail!("squared_radius: must be nonnegative");
            }
        }
        let checks: [(&str, dkaj::Result<()>); 3] = [
            ("embedding", self.embedding.validate()),
            ("train", self.train.validate()),
            (
                "sft",
                if self.sft.enabled {
                    self.sft.validate()
                } else {
                    Ok(())
                },
            ),
        ];
        for (key, r) in checks {
            r.with_context(|| key.to_string())?;
        }
        self.fit_config().validate().context("clustering")?;
        Ok(())
    }
}
