//! Reduction step: snapshot fields to latent codes and back.
//!
//! POD, the autoencoder and the two-step POD + autoencoder all expose the
//! same [`Reduction`] interface with latent width `r`, so latent maps never
//! depend on which reduction produced the codes.

mod ae;
mod pod;

use std::fmt;
use std::str::FromStr;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

pub use ae::{AeArch, AeModel, PodAeModel};
pub(crate) use ae::{column, columns_to_matrix};
pub use pod::{energy_rank, singular_spectrum, PodBasis, SvdRoute};

use crate::error::{Error, Result};
use crate::neuralnet::{TrainConfig, TrainReport};

pub trait Reduction {
    fn latent_dim(&self) -> usize;
    fn n_dof(&self) -> usize;
    fn encode(&self, field: &[f64]) -> Result<Vec<f64>>;
    fn decode(&self, code: &[f64]) -> Result<Vec<f64>>;
    /// Columns are fields.
    fn encode_batch(&self, fields: &DMatrix<f64>) -> Result<DMatrix<f64>>;
    /// Columns are codes.
    fn decode_batch(&self, codes: &DMatrix<f64>) -> Result<DMatrix<f64>>;
}

macro_rules! forward_reduction {
    ($ty:ty) => {
        impl Reduction for $ty {
            fn latent_dim(&self) -> usize {
                <$ty>::latent_dim(self)
            }
            fn n_dof(&self) -> usize {
                <$ty>::n_dof(self)
            }
            fn encode(&self, field: &[f64]) -> Result<Vec<f64>> {
                <$ty>::encode(self, field)
            }
            fn decode(&self, code: &[f64]) -> Result<Vec<f64>> {
                <$ty>::decode(self, code)
            }
            fn encode_batch(&self, fields: &DMatrix<f64>) -> Result<DMatrix<f64>> {
                <$ty>::encode_batch(self, fields)
            }
            fn decode_batch(&self, codes: &DMatrix<f64>) -> Result<DMatrix<f64>> {
                <$ty>::decode_batch(self, codes)
            }
        }
    };
}

forward_reduction!(PodBasis);
forward_reduction!(AeModel);
forward_reduction!(PodAeModel);

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ReductionKind {
    Pod,
    Ae,
    PodAe,
}

impl ReductionKind {
    pub fn is_linear(self) -> bool {
        matches!(self, ReductionKind::Pod)
    }
}

impl fmt::Display for ReductionKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ReductionKind::Pod => "pod",
            ReductionKind::Ae => "ae",
            ReductionKind::PodAe => "podae",
        })
    }
}

impl FromStr for ReductionKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "pod" => Ok(ReductionKind::Pod),
            "ae" => Ok(ReductionKind::Ae),
            "podae" => Ok(ReductionKind::PodAe),
            other => Err(Error::Invalid(format!("unknown reduction '{other}'"))),
        }
    }
}

/// A fitted reduction of any kind.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Reducer {
    Pod(PodBasis),
    Ae(AeModel),
    PodAe(PodAeModel),
}

impl Reducer {
    /// Fits a reduction of `kind` on the columns of `snapshots`. The report is
    /// `None` for POD.
    pub fn fit(
        kind: ReductionKind,
        snapshots: &DMatrix<f64>,
        r: usize,
        arch: &AeArch,
        cfg: &TrainConfig,
    ) -> Result<(Self, Option<TrainReport>)> {
        match kind {
            ReductionKind::Pod => Ok((Reducer::Pod(PodBasis::fit(snapshots, r)?), None)),
            ReductionKind::Ae => {
                let (m, rep) = AeModel::fit(snapshots, r, arch, cfg)?;
                Ok((Reducer::Ae(m), Some(rep)))
            }
            ReductionKind::PodAe => {
                let (m, rep) = PodAeModel::fit(snapshots, r, arch, cfg)?;
                Ok((Reducer::PodAe(m), Some(rep)))
            }
        }
    }

    pub fn kind(&self) -> ReductionKind {
        match self {
            Reducer::Pod(_) => ReductionKind::Pod,
            Reducer::Ae(_) => ReductionKind::Ae,
            Reducer::PodAe(_) => ReductionKind::PodAe,
        }
    }

    fn inner(&self) -> &dyn Reduction {
        match self {
            Reducer::Pod(m) => m,
            Reducer::Ae(m) => m,
            Reducer::PodAe(m) => m,
        }
    }
}

impl Reduction for Reducer {
    fn latent_dim(&self) -> usize {
        self.inner().latent_dim()
    }
    fn n_dof(&self) -> usize {
        self.inner().n_dof()
    }
    fn encode(&self, field: &[f64]) -> Result<Vec<f64>> {
        self.inner().encode(field)
    }
    fn decode(&self, code: &[f64]) -> Result<Vec<f64>> {
        self.inner().decode(code)
    }
    fn encode_batch(&self, fields: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        self.inner().encode_batch(fields)
    }
    fn decode_batch(&self, codes: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        self.inner().decode_batch(codes)
    }
}
