//! Gaussian process regression with a squared-exponential kernel.
//!
//! The covariance is `k(a, b) = σ_k² exp(-|a - b|² / (2 l))`. Every latent
//! component is an independent zero-mean process over the same inputs with
//! its own `(σ_k², l)`, chosen by maximizing the log marginal likelihood.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use serde::{Deserialize, Serialize};

use super::rbf::distance;
use crate::error::{check_len, Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GprConfig {
    /// Diagonal added to the kernel matrix before escalation.
    pub jitter: f64,
    pub grid_points: usize,
    pub variance_range: (f64, f64),
    pub length_range: (f64, f64),
    /// Rounds of coordinate-wise golden-section refinement after the grid.
    pub refine_rounds: usize,
}

impl Default for GprConfig {
    fn default() -> Self {
        Self {
            jitter: 1e-10,
            grid_points: 20,
            variance_range: (1e-4, 1e2),
            length_range: (1e-3, 1e1),
            refine_rounds: 3,
        }
    }
}

impl GprConfig {
    /// Log-spaced search grid for one axis.
    pub fn axis(range: (f64, f64), n: usize) -> Vec<f64> {
        let (lo, hi) = (range.0.ln(), range.1.ln());
        if n <= 1 {
            return vec![range.0];
        }
        (0..n).map(|k| (lo + (hi - lo) * k as f64 / (n - 1) as f64).exp()).collect()
    }
}

/// `exp(-|a - b|² / (2 l))` for all pairs of inputs.
pub fn unit_kernel(inputs: &[Vec<f64>], length_scale: f64) -> DMatrix<f64> {
    let n = inputs.len();
    DMatrix::from_fn(n, n, |i, j| {
        let d = distance(&inputs[i], &inputs[j]);
        (-d * d / (2.0 * length_scale)).exp()
    })
}

/// Cholesky factor of `variance·K0 + jitter·I`, doubling the jitter until the
/// factorization succeeds or the jitter exceeds `1e-6 · trace`.
pub fn factor(k0: &DMatrix<f64>, variance: f64, jitter: f64) -> Result<(Cholesky<f64, Dyn>, f64)> {
    let n = k0.nrows();
    let limit = 1e-6 * variance * n as f64;
    let mut j = jitter;
    loop {
        let mut k = k0 * variance;
        for i in 0..n {
            k[(i, i)] += j;
        }
        if let Some(chol) = Cholesky::new(k) {
            return Ok((chol, j));
        }
        j *= 2.0;
        if j > limit {
            return Err(Error::NotPositiveDefinite { jitter: j / 2.0 });
        }
    }
}

fn log_likelihood_from(chol: &Cholesky<f64, Dyn>, y: &DVector<f64>) -> f64 {
    let alpha = chol.solve(y);
    let log_det: f64 = chol.l_dirty().diagonal().iter().map(|v| v.ln()).sum::<f64>() * 2.0;
    let n = y.len() as f64;
    -0.5 * y.dot(&alpha) - 0.5 * log_det - 0.5 * n * (2.0 * std::f64::consts::PI).ln()
}

/// Log marginal likelihood of `targets` under the zero-mean process.
pub fn log_marginal_likelihood(
    inputs: &[Vec<f64>],
    targets: &[f64],
    variance: f64,
    length_scale: f64,
    jitter: f64,
) -> Result<f64> {
    check_len(inputs.len(), targets.len(), "targets per input")?;
    let (chol, _) = factor(&unit_kernel(inputs, length_scale), variance, jitter)?;
    Ok(log_likelihood_from(&chol, &DVector::from_column_slice(targets)))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GprComponent {
    pub variance: f64,
    pub length_scale: f64,
    /// Jitter actually used after escalation.
    pub jitter: f64,
    pub log_marginal_likelihood: f64,
    /// `(K + jitter·I)⁻¹ y`.
    pub alpha: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GprModel {
    pub train_inputs: Vec<Vec<f64>>,
    /// `train_targets[i][j]`: component `j` at input `i`.
    pub train_targets: Vec<Vec<f64>>,
    pub components: Vec<GprComponent>,
}

fn validate(inputs: &[Vec<f64>], targets: &[Vec<f64>]) -> Result<(usize, usize)> {
    if inputs.len() < 2 {
        return Err(Error::Invalid("Gaussian process needs at least two inputs".into()));
    }
    check_len(inputs.len(), targets.len(), "targets per input")?;
    let p = inputs[0].len();
    let r = targets[0].len();
    for (x, y) in inputs.iter().zip(targets) {
        check_len(p, x.len(), "input dimension")?;
        check_len(r, y.len(), "target width")?;
    }
    let distinct = inputs.iter().skip(1).any(|x| distance(x, &inputs[0]) > 0.0);
    if !distinct {
        return Err(Error::Invalid("Gaussian process needs distinct inputs".into()));
    }
    Ok((p, r))
}

fn component_targets(targets: &[Vec<f64>], j: usize) -> DVector<f64> {
    DVector::from_iterator(targets.len(), targets.iter().map(|t| t[j]))
}

impl GprModel {
    /// Hyperparameters from a log-grid search followed by coordinate
    /// refinement, per component.
    pub fn fit(inputs: &[Vec<f64>], targets: &[Vec<f64>], cfg: &GprConfig) -> Result<Self> {
        let (_, r) = validate(inputs, targets)?;
        let ys: Vec<DVector<f64>> = (0..r).map(|j| component_targets(targets, j)).collect();
        let variances = GprConfig::axis(cfg.variance_range, cfg.grid_points);
        let lengths = GprConfig::axis(cfg.length_range, cfg.grid_points);

        let mut best = vec![(f64::NEG_INFINITY, 0.0, 0.0); r];
        for &l in &lengths {
            let k0 = unit_kernel(inputs, l);
            for &v in &variances {
                let Ok((chol, _)) = factor(&k0, v, cfg.jitter) else {
                    continue;
                };
                for (j, y) in ys.iter().enumerate() {
                    let lml = log_likelihood_from(&chol, y);
                    if lml > best[j].0 {
                        best[j] = (lml, v, l);
                    }
                }
            }
        }
        if best.iter().any(|b| !b.0.is_finite()) {
            return Err(Error::NotPositiveDefinite { jitter: cfg.jitter });
        }

        let log_step = |range: (f64, f64)| {
            if cfg.grid_points > 1 {
                (range.1.ln() - range.0.ln()) / (cfg.grid_points - 1) as f64
            } else {
                0.0
            }
        };
        let steps = [log_step(cfg.variance_range), log_step(cfg.length_range)];
        let bounds = [
            (cfg.variance_range.0.ln(), cfg.variance_range.1.ln()),
            (cfg.length_range.0.ln(), cfg.length_range.1.ln()),
        ];

        let mut components = Vec::with_capacity(r);
        for (j, y) in ys.iter().enumerate() {
            let (mut lml, v, l) = best[j];
            let mut point = [v.ln(), l.ln()];
            let objective = |pt: &[f64; 2]| {
                let k0 = unit_kernel(inputs, pt[1].exp());
                factor(&k0, pt[0].exp(), cfg.jitter)
                    .map(|(chol, _)| log_likelihood_from(&chol, y))
                    .unwrap_or(f64::NEG_INFINITY)
            };
            for round in 0..cfg.refine_rounds {
                let width = 0.5f64.powi(round as i32);
                for axis in 0..2 {
                    let lo = (point[axis] - steps[axis] * width).max(bounds[axis].0);
                    let hi = (point[axis] + steps[axis] * width).min(bounds[axis].1);
                    let (x, val) = golden_max(lo, hi, 24, |t| {
                        let mut pt = point;
                        pt[axis] = t;
                        objective(&pt)
                    });
                    if val > lml {
                        lml = val;
                        point[axis] = x;
                    }
                }
            }
            components.push(Self::solve_component(inputs, y, point[0].exp(), point[1].exp(), cfg.jitter)?);
        }
        Ok(Self {
            train_inputs: inputs.to_vec(),
            train_targets: targets.to_vec(),
            components,
        })
    }

    /// Same hyperparameters for every component, no search.
    pub fn fit_fixed(
        inputs: &[Vec<f64>],
        targets: &[Vec<f64>],
        variance: f64,
        length_scale: f64,
        jitter: f64,
    ) -> Result<Self> {
        let (_, r) = validate(inputs, targets)?;
        if !(variance > 0.0 && length_scale > 0.0 && jitter > 0.0) {
            return Err(Error::Invalid("kernel hyperparameters must be positive".into()));
        }
        let components = (0..r)
            .map(|j| Self::solve_component(inputs, &component_targets(targets, j), variance, length_scale, jitter))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            train_inputs: inputs.to_vec(),
            train_targets: targets.to_vec(),
            components,
        })
    }

    fn solve_component(
        inputs: &[Vec<f64>],
        y: &DVector<f64>,
        variance: f64,
        length_scale: f64,
        jitter: f64,
    ) -> Result<GprComponent> {
        let (chol, used) = factor(&unit_kernel(inputs, length_scale), variance, jitter)?;
        let lml = log_likelihood_from(&chol, y);
        Ok(GprComponent {
            variance,
            length_scale,
            jitter: used,
            log_marginal_likelihood: lml,
            alpha: chol.solve(y).as_slice().to_vec(),
        })
    }

    pub fn input_dim(&self) -> usize {
        self.train_inputs[0].len()
    }

    pub fn output_dim(&self) -> usize {
        self.components.len()
    }

    /// Posterior mean `k*ᵀ (K + jitter·I)⁻¹ y` per component.
    pub fn predict(&self, mu: &[f64]) -> Result<Vec<f64>> {
        check_len(self.input_dim(), mu.len(), "parameter vector")?;
        let d2: Vec<f64> = self.train_inputs.iter().map(|x| distance(mu, x).powi(2)).collect();
        Ok(self
            .components
            .iter()
            .map(|c| {
                d2.iter()
                    .zip(&c.alpha)
                    .map(|(d, a)| c.variance * (-d / (2.0 * c.length_scale)).exp() * a)
                    .sum()
            })
            .collect())
    }
}

/// Golden-section search for a maximum of `f` on `[lo, hi]`.
fn golden_max(lo: f64, hi: f64, iters: usize, mut f: impl FnMut(f64) -> f64) -> (f64, f64) {
    if !(hi > lo) {
        return (lo, f(lo));
    }
    let g = (5f64.sqrt() - 1.0) / 2.0;
    let (mut a, mut b) = (lo, hi);
    let mut c = b - g * (b - a);
    let mut d = a + g * (b - a);
    let mut fc = f(c);
    let mut fd = f(d);
    for _ in 0..iters {
        if fc >= fd {
            b = d;
            d = c;
            fd = fc;
            c = b - g * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + g * (b - a);
            fd = f(d);
        }
    }
    if fc >= fd {
        (c, fc)
    } else {
        (d, fd)
    }
}
