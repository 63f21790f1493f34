//! Approximation step: parameters to latent codes.
//!
//! Inputs are expected to be scaled to `[0, 1]^p` by the caller; both kernels
//! are sensitive to the input scale.

mod ann;
mod gpr;
mod rbf;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

pub use ann::{AnnMap, ANN_HIDDEN};
pub use gpr::{factor, log_marginal_likelihood, unit_kernel, GprComponent, GprConfig, GprModel};
pub use rbf::{thin_plate, RbfModel};

use crate::error::{Error, Result};
use crate::neuralnet::{TrainConfig, TrainReport};

pub trait LatentMap {
    fn input_dim(&self) -> usize;
    fn output_dim(&self) -> usize;
    fn predict(&self, mu: &[f64]) -> Result<Vec<f64>>;
}

macro_rules! forward_map {
    ($ty:ty) => {
        impl LatentMap for $ty {
            fn input_dim(&self) -> usize {
                <$ty>::input_dim(self)
            }
            fn output_dim(&self) -> usize {
                <$ty>::output_dim(self)
            }
            fn predict(&self, mu: &[f64]) -> Result<Vec<f64>> {
                <$ty>::predict(self, mu)
            }
        }
    };
}

forward_map!(RbfModel);
forward_map!(GprModel);
forward_map!(AnnMap);

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ApproxKind {
    Rbf,
    Gpr,
    Ann,
}

impl fmt::Display for ApproxKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ApproxKind::Rbf => "rbf",
            ApproxKind::Gpr => "gpr",
            ApproxKind::Ann => "ann",
        })
    }
}

impl FromStr for ApproxKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "rbf" => Ok(ApproxKind::Rbf),
            "gpr" => Ok(ApproxKind::Gpr),
            "ann" => Ok(ApproxKind::Ann),
            other => Err(Error::Invalid(format!("unknown latent map '{other}'"))),
        }
    }
}

/// A fitted latent map of any kind.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum LatentApprox {
    Rbf(RbfModel),
    Gpr(GprModel),
    Ann(AnnMap),
}

impl LatentApprox {
    /// The report is `Some` only for the network regressor.
    pub fn fit(
        kind: ApproxKind,
        params: &[Vec<f64>],
        codes: &[Vec<f64>],
        gpr: &GprConfig,
        ann: &TrainConfig,
    ) -> Result<(Self, Option<TrainReport>)> {
        match kind {
            ApproxKind::Rbf => Ok((LatentApprox::Rbf(RbfModel::fit(params, codes)?), None)),
            ApproxKind::Gpr => Ok((LatentApprox::Gpr(GprModel::fit(params, codes, gpr)?), None)),
            ApproxKind::Ann => {
                let (m, rep) = AnnMap::fit(params, codes, ann)?;
                Ok((LatentApprox::Ann(m), Some(rep)))
            }
        }
    }

    pub fn kind(&self) -> ApproxKind {
        match self {
            LatentApprox::Rbf(_) => ApproxKind::Rbf,
            LatentApprox::Gpr(_) => ApproxKind::Gpr,
            LatentApprox::Ann(_) => ApproxKind::Ann,
        }
    }

    fn inner(&self) -> &dyn LatentMap {
        match self {
            LatentApprox::Rbf(m) => m,
            LatentApprox::Gpr(m) => m,
            LatentApprox::Ann(m) => m,
        }
    }
}

impl LatentMap for LatentApprox {
    fn input_dim(&self) -> usize {
        self.inner().input_dim()
    }
    fn output_dim(&self) -> usize {
        self.inner().output_dim()
    }
    fn predict(&self, mu: &[f64]) -> Result<Vec<f64>> {
        self.inner().predict(mu)
    }
}
