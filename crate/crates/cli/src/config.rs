//! Config file schema. One optional section per subcommand; every key may be
//! overridden by a flag. The resolved config written next to the outputs uses
//! the same schema, so it can be passed back with `--config`.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::{Deserialize, Serialize};

use romix::bench::{CaseKind, MixtureKind};
use romix::dataset::Format;
use romix::forest::ForestConfig;
use romix::rom::HyperConfig;

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub generate: Option<GenerateSection>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub train: Option<TrainSection>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub aggregate: Option<AggregateSection>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub report: Option<ReportSection>,
}

impl FileConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        toml::from_str(&text).with_context(|| format!("parsing config {}", path.display()))
    }

    pub fn write(&self, dir: &Path) -> Result<()> {
        let path = dir.join("config.toml");
        fs::write(&path, toml::to_string(self)?).with_context(|| format!("writing {}", path.display()))
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GenerateSection {
    pub case: Option<CaseKind>,
    /// Number of snapshots.
    pub n: Option<usize>,
    pub nx: Option<usize>,
    /// 0 for a 1D grid.
    pub ny: Option<usize>,
    pub param_range: Option<(f64, f64)>,
    pub noise: Option<f64>,
    pub format: Option<Format>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainSection {
    pub data: Option<PathBuf>,
    pub latent_dim: Option<usize>,
    pub models: Option<Vec<String>>,
    /// Snapshots not used for training or evaluation form the test split.
    pub n_train: Option<usize>,
    pub n_eval: Option<usize>,
    pub hyper: Option<HyperConfig>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AggregateSection {
    pub data: Option<PathBuf>,
    /// Output directory of `train`.
    pub roms: Option<PathBuf>,
    pub mixture: Option<MixtureKind>,
    pub forest: Option<ForestConfig>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReportSection {
    pub case: Option<CaseKind>,
    pub n: Option<usize>,
    pub nx: Option<usize>,
    pub ny: Option<usize>,
    pub param_range: Option<(f64, f64)>,
    pub noise: Option<f64>,
    pub latent_dim: Option<usize>,
    pub models: Option<Vec<String>>,
    pub mixtures: Option<Vec<MixtureKind>>,
    pub n_train: Option<usize>,
    pub n_eval: Option<usize>,
    pub n_test: Option<usize>,
    pub hyper: Option<HyperConfig>,
    pub forest: Option<ForestConfig>,
}

/// First `Some` wins: flag, then config file, then default.
pub fn pick<T>(flag: Option<T>, file: Option<T>, default: impl FnOnce() -> T) -> T {
    flag.or(file).unwrap_or_else(default)
}
