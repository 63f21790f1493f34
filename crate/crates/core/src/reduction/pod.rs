//! Proper orthogonal decomposition of a snapshot matrix.

use nalgebra::{DMatrix, DVector, SymmetricEigen, SVD};
use serde::{Deserialize, Serialize};

use crate::error::{check_len, Error, Result};

/// Above this ratio `n_dof / n_snapshots` modes come from the Gram matrix.
const SNAPSHOT_METHOD_RATIO: usize = 10;
/// Gram-matrix modes lose accuracy below `sqrt(eps)` relative singular values.
const SNAPSHOT_METHOD_FLOOR: f64 = 1e-6;

/// Orthonormal POD modes (columns) plus the full singular spectrum.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "PodRecord", into = "PodRecord")]
pub struct PodBasis {
    modes: DMatrix<f64>,
    singular_values: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct PodRecord {
    n_dof: usize,
    r: usize,
    /// `n_dof × r`, row-major.
    modes: Vec<f64>,
    singular_values: Vec<f64>,
}

impl From<PodBasis> for PodRecord {
    fn from(b: PodBasis) -> Self {
        PodRecord {
            n_dof: b.modes.nrows(),
            r: b.modes.ncols(),
            modes: b.modes.transpose().as_slice().to_vec(),
            singular_values: b.singular_values,
        }
    }
}

impl TryFrom<PodRecord> for PodBasis {
    type Error = Error;

    fn try_from(rec: PodRecord) -> Result<Self> {
        check_len(rec.n_dof * rec.r, rec.modes.len(), "POD mode matrix size")?;
        Ok(PodBasis {
            modes: DMatrix::from_row_slice(rec.n_dof, rec.r, &rec.modes),
            singular_values: rec.singular_values,
        })
    }
}

/// Which factorization produced a basis.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SvdRoute {
    /// Eigen-decomposition of `SᵀS` (method of snapshots).
    Snapshots,
    /// Golub–Kahan bidiagonalization of `S`.
    Direct,
}

impl PodBasis {
    /// Keeps the first `r` left singular vectors of `snapshots`.
    pub fn fit(snapshots: &DMatrix<f64>, r: usize) -> Result<Self> {
        let (n_dof, n) = snapshots.shape();
        let route = if n_dof >= SNAPSHOT_METHOD_RATIO * n {
            SvdRoute::Snapshots
        } else {
            SvdRoute::Direct
        };
        Self::fit_with(snapshots, r, route).or_else(|err| match (route, &err) {
            (SvdRoute::Snapshots, Error::Singular(_)) => Self::fit_with(snapshots, r, SvdRoute::Direct),
            _ => Err(err),
        })
    }

    /// Forces one factorization route. The snapshot route refuses modes whose
    /// singular values fall below its accuracy floor.
    pub fn fit_with(snapshots: &DMatrix<f64>, r: usize, route: SvdRoute) -> Result<Self> {
        let (n_dof, n) = snapshots.shape();
        if n == 0 || n_dof == 0 {
            return Err(Error::Empty("snapshot matrix"));
        }
        let max_r = n_dof.min(n);
        if r == 0 || r > max_r {
            return Err(Error::Invalid(format!("latent dimension {r} outside 1..={max_r}")));
        }
        let (mut modes, singular_values) = match route {
            SvdRoute::Direct => direct_svd(snapshots, r),
            SvdRoute::Snapshots => snapshot_svd(snapshots, r)?,
        };
        fix_signs(&mut modes);
        Ok(Self {
            modes,
            singular_values,
        })
    }

    pub fn modes(&self) -> &DMatrix<f64> {
        &self.modes
    }

    /// Full spectrum of the training matrix, nonincreasing.
    pub fn singular_values(&self) -> &[f64] {
        &self.singular_values
    }

    pub fn latent_dim(&self) -> usize {
        self.modes.ncols()
    }

    pub fn n_dof(&self) -> usize {
        self.modes.nrows()
    }

    /// `a = Uᵀ s`.
    pub fn encode(&self, field: &[f64]) -> Result<Vec<f64>> {
        check_len(self.n_dof(), field.len(), "field length")?;
        let s = DVector::from_column_slice(field);
        Ok(self.modes.tr_mul(&s).as_slice().to_vec())
    }

    /// `s = Σ a_j φ_j`.
    pub fn decode(&self, code: &[f64]) -> Result<Vec<f64>> {
        check_len(self.latent_dim(), code.len(), "latent code length")?;
        let a = DVector::from_column_slice(code);
        Ok((&self.modes * a).as_slice().to_vec())
    }

    pub fn encode_batch(&self, fields: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        check_len(self.n_dof(), fields.nrows(), "field length")?;
        Ok(self.modes.tr_mul(fields))
    }

    pub fn decode_batch(&self, codes: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        check_len(self.latent_dim(), codes.nrows(), "latent code length")?;
        Ok(&self.modes * codes)
    }
}

fn sorted_desc(values: impl Iterator<Item = f64>) -> Vec<(usize, f64)> {
    let mut pairs: Vec<(usize, f64)> = values.enumerate().collect();
    pairs.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    pairs
}

fn direct_svd(s: &DMatrix<f64>, r: usize) -> (DMatrix<f64>, Vec<f64>) {
    let svd = SVD::new(s.clone(), true, false);
    let u = svd.u.expect("left singular vectors requested");
    let order = sorted_desc(svd.singular_values.iter().copied());
    let mut modes = DMatrix::zeros(s.nrows(), r);
    for (j, (src, _)) in order.iter().take(r).enumerate() {
        modes.set_column(j, &u.column(*src));
    }
    (modes, order.iter().map(|(_, v)| *v).collect())
}

fn snapshot_svd(s: &DMatrix<f64>, r: usize) -> Result<(DMatrix<f64>, Vec<f64>)> {
    let gram = s.tr_mul(s);
    let eig = SymmetricEigen::new(gram);
    let order = sorted_desc(eig.eigenvalues.iter().copied());
    let sigma: Vec<f64> = order.iter().map(|(_, l)| l.max(0.0).sqrt()).collect();
    let top = sigma[0];
    let mut modes = DMatrix::zeros(s.nrows(), r);
    for (j, (src, _)) in order.iter().take(r).enumerate() {
        if !(sigma[j] > SNAPSHOT_METHOD_FLOOR * top) {
            return Err(Error::Singular("mode below snapshot-method accuracy"));
        }
        let u = s * eig.eigenvectors.column(*src) / sigma[j];
        modes.set_column(j, &u);
    }
    Ok((modes, sigma))
}

/// Largest-magnitude entry of every mode made positive.
fn fix_signs(modes: &mut DMatrix<f64>) {
    for mut col in modes.column_iter_mut() {
        let pivot = col.iter().copied().fold(0.0_f64, |best, v| if v.abs() > best.abs() { v } else { best });
        if pivot < 0.0 {
            col.neg_mut();
        }
    }
}

/// Singular values of `snapshots`, nonincreasing.
pub fn singular_spectrum(snapshots: &DMatrix<f64>) -> Vec<f64> {
    if snapshots.is_empty() {
        return Vec::new();
    }
    let mut sv: Vec<f64> = snapshots.singular_values().iter().copied().collect();
    sv.sort_by(|a, b| b.total_cmp(a));
    sv
}

/// Smallest number of modes whose squared singular values reach `fraction`
/// of the total energy.
pub fn energy_rank(spectrum: &[f64], fraction: f64) -> usize {
    let total: f64 = spectrum.iter().map(|s| s * s).sum();
    if total == 0.0 {
        return 0;
    }
    let mut acc = 0.0;
    for (k, s) in spectrum.iter().enumerate() {
        acc += s * s;
        if acc >= fraction * total {
            return k + 1;
        }
    }
    spectrum.len()
}
