//! Snapshot storage, train/eval/test splitting and field normalization.
//!
//! A [`SnapshotSet`] pairs parameter vectors with one scalar field sampled on
//! a grid shared by every snapshot. Column `i` of the snapshot matrix is
//! `fields[i]`.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{check_len, Error, Result};

/// Grid coordinates, `n_dof` points of dimension `dim`, stored row-major.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Grid {
    pub dim: usize,
    pub coords: Vec<f64>,
}

impl Grid {
    pub fn new(dim: usize, coords: Vec<f64>) -> Result<Self> {
        if dim == 0 || coords.len() % dim != 0 {
            return Err(Error::Invalid(format!(
                "grid of dimension {dim} cannot hold {} coordinates",
                coords.len()
            )));
        }
        Ok(Self { dim, coords })
    }

    /// Uniform grid on `[0, 1]`.
    pub fn uniform_1d(n: usize) -> Self {
        let coords = (0..n).map(|i| unit_node(i, n)).collect();
        Self { dim: 1, coords }
    }

    /// Tensor grid on `[0, 1]^2`, `x` varying fastest.
    pub fn uniform_2d(nx: usize, ny: usize) -> Self {
        let mut coords = Vec::with_capacity(2 * nx * ny);
        for j in 0..ny {
            for i in 0..nx {
                coords.push(unit_node(i, nx));
                coords.push(unit_node(j, ny));
            }
        }
        Self { dim: 2, coords }
    }

    pub fn n_points(&self) -> usize {
        self.coords.len() / self.dim
    }

    pub fn point(&self, i: usize) -> &[f64] {
        &self.coords[i * self.dim..(i + 1) * self.dim]
    }

    pub fn points(&self) -> impl Iterator<Item = &[f64]> {
        self.coords.chunks_exact(self.dim)
    }
}

fn unit_node(i: usize, n: usize) -> f64 {
    if n <= 1 {
        0.0
    } else {
        i as f64 / (n - 1) as f64
    }
}

/// Shift and scale applied to every value of one field variable.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NormSpec {
    pub shift: f64,
    pub scale: f64,
    /// Set when the training values had zero spread and `scale` was forced to 1.
    pub zero_variance: bool,
}

impl NormSpec {
    pub fn identity() -> Self {
        Self {
            shift: 0.0,
            scale: 1.0,
            zero_variance: false,
        }
    }

    /// Mean shift and max-abs scale over the given fields.
    pub fn fit<'a>(fields: impl IntoIterator<Item = &'a [f64]> + Clone) -> Result<Self> {
        let mut count = 0usize;
        let mut sum = 0.0;
        for f in fields.clone() {
            count += f.len();
            sum += f.iter().sum::<f64>();
        }
        if count == 0 {
            return Err(Error::Empty("normalization needs at least one value"));
        }
        let shift = sum / count as f64;
        let scale = fields
            .into_iter()
            .flat_map(|f| f.iter())
            .fold(0.0_f64, |m, v| m.max((v - shift).abs()));
        if scale <= 1e-14 * shift.abs() || scale == 0.0 {
            Ok(Self {
                shift,
                scale: 1.0,
                zero_variance: true,
            })
        } else {
            Ok(Self {
                shift,
                scale,
                zero_variance: false,
            })
        }
    }

    pub fn apply(&self, field: &[f64]) -> Vec<f64> {
        field.iter().map(|v| (v - self.shift) / self.scale).collect()
    }

    pub fn invert(&self, field: &[f64]) -> Vec<f64> {
        field.iter().map(|v| v * self.scale + self.shift).collect()
    }
}

/// Per-axis affine map of a box onto `[0, 1]^k`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MinMaxScaler {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
}

impl MinMaxScaler {
    /// Fit on rows of width `width`. Degenerate axes map to 0.
    pub fn fit<'a>(rows: impl IntoIterator<Item = &'a [f64]>, width: usize) -> Result<Self> {
        let mut lo = vec![f64::INFINITY; width];
        let mut hi = vec![f64::NEG_INFINITY; width];
        let mut seen = false;
        for row in rows {
            check_len(width, row.len(), "scaler row width")?;
            for (k, v) in row.iter().enumerate() {
                lo[k] = lo[k].min(*v);
                hi[k] = hi[k].max(*v);
            }
            seen = true;
        }
        if !seen {
            return Err(Error::Empty("scaler needs at least one row"));
        }
        Ok(Self { lo, hi })
    }

    pub fn width(&self) -> usize {
        self.lo.len()
    }

    pub fn transform(&self, row: &[f64]) -> Vec<f64> {
        row.iter()
            .zip(self.lo.iter().zip(&self.hi))
            .map(|(v, (lo, hi))| {
                let span = hi - lo;
                if span > 0.0 {
                    (v - lo) / span
                } else {
                    0.0
                }
            })
            .collect()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SnapshotSet {
    pub params: Vec<Vec<f64>>,
    pub grid: Grid,
    pub fields: Vec<Vec<f64>>,
    /// Transform that produced `fields` from physical values, if any.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub norm: Option<NormSpec>,
}

impl SnapshotSet {
    /// Validates shapes and finiteness.
    pub fn new(params: Vec<Vec<f64>>, grid: Grid, fields: Vec<Vec<f64>>) -> Result<Self> {
        check_len(params.len(), fields.len(), "params vs fields count")?;
        let n_dof = grid.n_points();
        let p = params.first().map_or(0, Vec::len);
        if !params.is_empty() && p == 0 {
            return Err(Error::Invalid("parameter vectors must be nonempty".into()));
        }
        for (i, (mu, f)) in params.iter().zip(&fields).enumerate() {
            if mu.len() != p {
                return Err(Error::Row {
                    row: i + 1,
                    message: format!("expected {p} parameters, got {}", mu.len()),
                });
            }
            if f.len() != n_dof {
                return Err(Error::Row {
                    row: i + 1,
                    message: format!("expected {n_dof} field values, got {}", f.len()),
                });
            }
            if mu.iter().chain(f).any(|v| !v.is_finite()) {
                return Err(Error::Row {
                    row: i + 1,
                    message: "non-finite value".into(),
                });
            }
        }
        Ok(Self {
            params,
            grid,
            fields,
            norm: None,
        })
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn n_dof(&self) -> usize {
        self.grid.n_points()
    }

    pub fn n_params(&self) -> usize {
        self.params.first().map_or(0, Vec::len)
    }

    /// Snapshot matrix `n_dof × |idx|` with the selected fields as columns.
    pub fn matrix(&self, idx: &[usize]) -> DMatrix<f64> {
        let n = self.n_dof();
        DMatrix::from_fn(n, idx.len(), |r, c| self.fields[idx[c]][r])
    }

    pub fn subset(&self, idx: &[usize]) -> SnapshotSet {
        SnapshotSet {
            params: idx.iter().map(|&i| self.params[i].clone()).collect(),
            grid: self.grid.clone(),
            fields: idx.iter().map(|&i| self.fields[i].clone()).collect(),
            norm: self.norm.clone(),
        }
    }

    pub fn split(&self, n_train: usize, n_eval: usize, n_test: usize, seed: u64) -> Result<SplitIndices> {
        SplitIndices::random(self.len(), n_train, n_eval, n_test, seed)
    }

    /// Normalizes with statistics taken from `train` only.
    pub fn normalize(&self, train: &[usize]) -> Result<SnapshotSet> {
        if self.is_empty() {
            return Err(Error::Empty("cannot normalize an empty set"));
        }
        if self.norm.is_some() {
            return Err(Error::Invalid("set is already normalized".into()));
        }
        let spec = NormSpec::fit(train.iter().map(|&i| self.fields[i].as_slice()))?;
        Ok(SnapshotSet {
            params: self.params.clone(),
            grid: self.grid.clone(),
            fields: self.fields.iter().map(|f| spec.apply(f)).collect(),
            norm: Some(spec),
        })
    }

    pub fn denormalize(&self) -> SnapshotSet {
        match &self.norm {
            None => self.clone(),
            Some(spec) => SnapshotSet {
                params: self.params.clone(),
                grid: self.grid.clone(),
                fields: self.fields.iter().map(|f| spec.invert(f)).collect(),
                norm: None,
            },
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitIndices {
    pub train: Vec<usize>,
    pub eval: Vec<usize>,
    pub test: Vec<usize>,
}

impl SplitIndices {
    /// Seeded uniform permutation cut into three sorted index lists.
    pub fn random(n: usize, n_train: usize, n_eval: usize, n_test: usize, seed: u64) -> Result<Self> {
        if n_train + n_eval + n_test != n {
            return Err(Error::Invalid(format!(
                "split sizes {n_train}+{n_eval}+{n_test} do not sum to {n}"
            )));
        }
        let mut perm: Vec<usize> = (0..n).collect();
        perm.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        let take = |range: std::ops::Range<usize>| {
            let mut v = perm[range].to_vec();
            v.sort_unstable();
            v
        };
        Ok(Self {
            train: take(0..n_train),
            eval: take(n_train..n_train + n_eval),
            test: take(n_train + n_eval..n),
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    Csv,
    Json,
}

#[derive(Serialize, Deserialize)]
struct JsonSnapshots {
    params: Vec<Vec<f64>>,
    grid: Vec<Vec<f64>>,
    fields: Vec<Vec<f64>>,
}

/// Companion grid file of a snapshot CSV: `data.csv` -> `data.grid.csv`.
pub fn grid_path(path: &Path) -> PathBuf {
    let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or("snapshots");
    path.with_file_name(format!("{stem}.grid.csv"))
}

/// Decimal with 17 significant digits, enough for an exact f64 round trip.
pub fn fmt_real(v: f64) -> String {
    format!("{v:.16e}")
}

pub fn write_snapshots(set: &SnapshotSet, path: &Path, format: Format) -> Result<()> {
    match format {
        Format::Csv => {
            let mut out = String::new();
            let _ = writeln!(out, "p={},n_dof={},d={}", set.n_params(), set.n_dof(), set.grid.dim);
            for (mu, f) in set.params.iter().zip(&set.fields) {
                let row: Vec<String> = mu.iter().chain(f).map(|v| fmt_real(*v)).collect();
                out.push_str(&row.join(","));
                out.push('\n');
            }
            fs::write(path, out).map_err(|e| Error::io(path, e))?;
            let mut grid = String::new();
            for pt in set.grid.points() {
                let row: Vec<String> = pt.iter().map(|v| fmt_real(*v)).collect();
                grid.push_str(&row.join(","));
                grid.push('\n');
            }
            let gpath = grid_path(path);
            fs::write(&gpath, grid).map_err(|e| Error::io(gpath, e))
        }
        Format::Json => {
            let doc = JsonSnapshots {
                params: set.params.clone(),
                grid: set.grid.points().map(<[f64]>::to_vec).collect(),
                fields: set.fields.clone(),
            };
            let text = serde_json::to_string(&doc)?;
            fs::write(path, text).map_err(|e| Error::io(path, e))
        }
    }
}

pub fn load_snapshots(path: &Path, format: Format) -> Result<SnapshotSet> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    match format {
        Format::Csv => {
            let gpath = grid_path(path);
            let grid_text = fs::read_to_string(&gpath).map_err(|e| Error::io(&gpath, e))?;
            parse_csv(&text, &grid_text)
        }
        Format::Json => {
            if text.trim().is_empty() {
                return Err(Error::Empty("snapshot file"));
            }
            let doc: JsonSnapshots = serde_json::from_str(&text)?;
            let dim = doc.grid.first().map_or(1, Vec::len);
            for (i, pt) in doc.grid.iter().enumerate() {
                if pt.len() != dim {
                    return Err(Error::Row {
                        row: i + 1,
                        message: format!("grid point has {} coordinates, expected {dim}", pt.len()),
                    });
                }
            }
            let grid = Grid::new(dim, doc.grid.concat())?;
            SnapshotSet::new(doc.params, grid, doc.fields)
        }
    }
}

fn parse_header(line: &str) -> Result<(usize, usize, usize)> {
    let mut p = None;
    let mut n_dof = None;
    let mut d = None;
    for item in line.split(',') {
        let (key, value) = item.split_once('=').ok_or_else(|| Error::Row {
            row: 0,
            message: format!("malformed header entry '{item}'"),
        })?;
        let value: usize = value.trim().parse().map_err(|_| Error::Row {
            row: 0,
            message: format!("header value '{value}' is not a count"),
        })?;
        match key.trim() {
            "p" => p = Some(value),
            "n_dof" => n_dof = Some(value),
            "d" => d = Some(value),
            other => {
                return Err(Error::Row {
                    row: 0,
                    message: format!("unknown header key '{other}'"),
                })
            }
        }
    }
    match (p, n_dof, d) {
        (Some(p), Some(n), Some(d)) => Ok((p, n, d)),
        _ => Err(Error::Row {
            row: 0,
            message: "header must define p, n_dof and d".into(),
        }),
    }
}

fn parse_row(line: &str, row: usize) -> Result<Vec<f64>> {
    line.split(',')
        .map(|tok| {
            tok.trim().parse::<f64>().map_err(|_| Error::Row {
                row,
                message: format!("non-numeric entry '{}'", tok.trim()),
            })
        })
        .collect()
}

/// Parses the snapshot CSV schema. Data rows are numbered from 1.
pub fn parse_csv(text: &str, grid_text: &str) -> Result<SnapshotSet> {
    let mut lines = text.lines().filter(|l| !l.trim().is_empty());
    let header = lines.next().ok_or(Error::Empty("snapshot file"))?;
    let (p, n_dof, d) = parse_header(header)?;
    let mut params = Vec::new();
    let mut fields = Vec::new();
    for (i, line) in lines.enumerate() {
        let row = i + 1;
        let values = parse_row(line, row)?;
        if values.len() != p + n_dof {
            return Err(Error::Row {
                row,
                message: format!("expected {} values, got {}", p + n_dof, values.len()),
            });
        }
        params.push(values[..p].to_vec());
        fields.push(values[p..].to_vec());
    }
    if params.is_empty() {
        return Err(Error::Empty("snapshot file has no data rows"));
    }
    let mut coords = Vec::with_capacity(n_dof * d);
    let mut n_grid = 0;
    for (i, line) in grid_text.lines().filter(|l| !l.trim().is_empty()).enumerate() {
        let pt = parse_row(line, i + 1)?;
        if pt.len() != d {
            return Err(Error::Row {
                row: i + 1,
                message: format!("grid point has {} coordinates, expected {d}", pt.len()),
            });
        }
        coords.extend(pt);
        n_grid += 1;
    }
    check_len(n_dof, n_grid, "grid file point count")?;
    SnapshotSet::new(params, Grid::new(d, coords)?, fields)
}
