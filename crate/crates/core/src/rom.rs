//! A reduced-order model: one reduction composed with one latent map.

use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::dataset::{MinMaxScaler, NormSpec, SnapshotSet};
use crate::error::{check_len, Error, Result};
use crate::latentmap::{ApproxKind, GprConfig, LatentApprox, LatentMap};
use crate::neuralnet::TrainConfig;
use crate::reduction::{column, AeArch, Reducer, Reduction, ReductionKind};

/// Settings for every trainable piece; only the ones used by a spec matter.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HyperConfig {
    pub ae_arch: AeArch,
    pub ae_train: TrainConfig,
    pub ann_train: TrainConfig,
    pub gpr: GprConfig,
}

impl Default for HyperConfig {
    fn default() -> Self {
        Self {
            ae_arch: AeArch::default(),
            ae_train: TrainConfig::ae_default(),
            ann_train: TrainConfig::ann_default(),
            gpr: GprConfig::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RomSpec {
    pub reduction: ReductionKind,
    pub approx: ApproxKind,
    pub r: usize,
    #[serde(default)]
    pub hyper: HyperConfig,
}

impl RomSpec {
    pub fn new(reduction: ReductionKind, approx: ApproxKind, r: usize) -> Self {
        Self {
            reduction,
            approx,
            r,
            hyper: HyperConfig::default(),
        }
    }

    /// `"<reduction>-<approx>"`, e.g. `pod-rbf`.
    pub fn name(&self) -> String {
        ModelName(self.reduction, self.approx).to_string()
    }

    pub fn validate(&self) -> Result<()> {
        if self.r == 0 {
            return Err(Error::Invalid("latent dimension must be positive".into()));
        }
        if !self.reduction.is_linear() {
            self.hyper.ae_train.validate()?;
        }
        if self.approx == ApproxKind::Ann {
            self.hyper.ann_train.validate()?;
        }
        Ok(())
    }
}

/// A `(reduction, approx)` pair written as `pod-rbf`, `ae-gpr`, ...
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ModelName(pub ReductionKind, pub ApproxKind);

impl fmt::Display for ModelName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}-{}", self.0, self.1)
    }
}

impl FromStr for ModelName {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let (red, approx) = s
            .split_once('-')
            .ok_or_else(|| Error::Invalid(format!("model '{s}' is not of the form reduction-approx")))?;
        Ok(ModelName(red.parse()?, approx.parse()?))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Scaling {
    pub params: MinMaxScaler,
    pub norm: NormSpec,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Rom {
    pub spec: RomSpec,
    pub reducer: Reducer,
    pub map: LatentApprox,
    pub scaling: Scaling,
}

impl Rom {
    /// Fits the reduction on the training fields, then the latent map on
    /// `(scaled μ_i, code_i)`. Fields are used as stored; if the set carries a
    /// normalization, predictions are mapped back through it.
    pub fn train(set: &SnapshotSet, spec: &RomSpec) -> Result<Self> {
        spec.validate()?;
        if set.is_empty() {
            return Err(Error::Empty("training set"));
        }
        let all: Vec<usize> = (0..set.len()).collect();
        let (reducer, _) = Reducer::fit(
            spec.reduction,
            &set.matrix(&all),
            spec.r,
            &spec.hyper.ae_arch,
            &spec.hyper.ae_train,
        )?;
        Self::train_with(set, spec, reducer)
    }

    /// Like [`Rom::train`] with an already fitted reduction of the right kind.
    pub fn train_with(set: &SnapshotSet, spec: &RomSpec, reducer: Reducer) -> Result<Self> {
        spec.validate()?;
        if set.is_empty() {
            return Err(Error::Empty("training set"));
        }
        if reducer.kind() != spec.reduction {
            return Err(Error::Invalid(format!(
                "reducer is {} but spec asks for {}",
                reducer.kind(),
                spec.reduction
            )));
        }
        check_len(spec.r, reducer.latent_dim(), "reducer latent width")?;
        check_len(set.n_dof(), reducer.n_dof(), "reducer field length")?;
        let all: Vec<usize> = (0..set.len()).collect();
        let codes = reducer.encode_batch(&set.matrix(&all))?;
        let codes: Vec<Vec<f64>> = (0..set.len()).map(|j| column(&codes, j)).collect();
        let params = MinMaxScaler::fit(set.params.iter().map(Vec::as_slice), set.n_params())?;
        let inputs: Vec<Vec<f64>> = set.params.iter().map(|mu| params.transform(mu)).collect();
        let (map, _) = LatentApprox::fit(spec.approx, &inputs, &codes, &spec.hyper.gpr, &spec.hyper.ann_train)?;
        Ok(Self {
            spec: spec.clone(),
            reducer,
            map,
            scaling: Scaling {
                params,
                norm: set.norm.clone().unwrap_or_else(NormSpec::identity),
            },
        })
    }

    pub fn name(&self) -> String {
        self.spec.name()
    }

    pub fn n_params(&self) -> usize {
        self.scaling.params.width()
    }

    pub fn latent(&self, mu: &[f64]) -> Result<Vec<f64>> {
        check_len(self.n_params(), mu.len(), "parameter vector")?;
        self.map.predict(&self.scaling.params.transform(mu))
    }

    /// Prediction in the normalized space the model was trained in.
    pub fn predict_normalized(&self, mu: &[f64]) -> Result<Vec<f64>> {
        self.reducer.decode(&self.latent(mu)?)
    }

    /// Prediction in physical units.
    pub fn predict(&self, mu: &[f64]) -> Result<Vec<f64>> {
        Ok(self.scaling.norm.invert(&self.predict_normalized(mu)?))
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        write_json(&dir.join("spec.json"), &self.spec)?;
        write_json(&dir.join("reducer.json"), &self.reducer)?;
        write_json(&dir.join("map.json"), &self.map)?;
        write_json(&dir.join("scaling.json"), &self.scaling)
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let rom = Self {
            spec: read_json(&dir.join("spec.json"))?,
            reducer: read_json(&dir.join("reducer.json"))?,
            map: read_json(&dir.join("map.json"))?,
            scaling: read_json(&dir.join("scaling.json"))?,
        };
        check_len(rom.spec.r, rom.reducer.latent_dim(), "reducer latent width")?;
        check_len(rom.spec.r, rom.map.output_dim(), "map output width")?;
        Ok(rom)
    }
}

pub(crate) fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub(crate) fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(serde_json::from_str(&text)?)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RelativeError {
    pub value: f64,
    /// The truth had zero norm and `value` is the absolute L2 error.
    pub absolute: bool,
}

/// `||pred - truth||₂ / ||truth||₂` over grid points.
pub fn relative_error(pred: &[f64], truth: &[f64]) -> Result<RelativeError> {
    check_len(truth.len(), pred.len(), "prediction length")?;
    let diff = pred.iter().zip(truth).map(|(p, t)| (p - t) * (p - t)).sum::<f64>().sqrt();
    let norm = truth.iter().map(|t| t * t).sum::<f64>().sqrt();
    Ok(if norm > 0.0 {
        RelativeError {
            value: diff / norm,
            absolute: false,
        }
    } else {
        RelativeError {
            value: diff,
            absolute: true,
        }
    })
}
