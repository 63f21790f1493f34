//! Space-dependent convex aggregation of several ROMs.
//!
//! For model `j` and a point `η = [x, μ]` the Gaussian score is
//! `g_j = exp(-½ (s̃_j - s)² / σ²)` and the weights are `ω_j = g_j / Σ g_k`.
//! Residuals are taken on normalized fields. One forest per model learns
//! `g_j(η)` on the evaluation set; at prediction time the regressed scores
//! are normalized into weights.

use std::fs;
use std::path::Path;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::dataset::{fmt_real, Grid, MinMaxScaler};
use crate::error::{check_len, Error, Result};
use crate::forest::{Forest, ForestConfig};
use crate::rom::{read_json, write_json, Rom};
use crate::seed;

/// Bounds of the bandwidth search interval.
pub const SIGMA_RANGE: (f64, f64) = (1e-3, 1.0);

/// Predicted score rows whose entries are all at or below this are replaced
/// by uniform weights.
pub const SCORE_FLOOR: f64 = 1e-300;

/// `σ_k = 1e-3 · 10^(k/4)`, `k = 0..=12`.
pub fn sigma_grid() -> Vec<f64> {
    (0..=12).map(|k| SIGMA_RANGE.0 * 10f64.powf(k as f64 / 4.0)).collect()
}

fn check_models(preds: &[Vec<f64>], truth: &[f64]) -> Result<()> {
    if preds.is_empty() {
        return Err(Error::Empty("model predictions"));
    }
    for p in preds {
        check_len(truth.len(), p.len(), "prediction length")?;
    }
    Ok(())
}

/// Scores as a `points × models` matrix.
pub fn gaussian_scores(preds: &[Vec<f64>], truth: &[f64], sigma: f64) -> Result<DMatrix<f64>> {
    check_models(preds, truth)?;
    if !(sigma > 0.0) {
        return Err(Error::Invalid(format!("bandwidth {sigma} must be positive")));
    }
    Ok(DMatrix::from_fn(truth.len(), preds.len(), |i, j| {
        let r = preds[j][i] - truth[i];
        (-0.5 * r * r / (sigma * sigma)).exp()
    }))
}

/// Row-normalized scores. Rows with every entry `<= SCORE_FLOOR` become
/// uniform; the number of such rows is returned alongside.
pub fn weights_from_scores(scores: &DMatrix<f64>) -> Result<(DMatrix<f64>, usize)> {
    if scores.iter().any(|g| !g.is_finite() || *g < 0.0) {
        return Err(Error::Invalid("scores must be finite and nonnegative".into()));
    }
    let m = scores.ncols();
    let mut w = scores.clone();
    let mut fallbacks = 0;
    for mut row in w.row_iter_mut() {
        if row.iter().all(|g| *g <= SCORE_FLOOR) {
            row.fill(1.0 / m as f64);
            fallbacks += 1;
        } else {
            let s = row.sum();
            row /= s;
        }
    }
    Ok((w, fallbacks))
}

/// Exact weights from residuals, computed as a softmax of `-½ r²/σ²` so the
/// normalization stays defined when every score underflows.
pub fn exact_weights(preds: &[Vec<f64>], truth: &[f64], sigma: f64) -> Result<DMatrix<f64>> {
    check_models(preds, truth)?;
    if !(sigma > 0.0) {
        return Err(Error::Invalid(format!("bandwidth {sigma} must be positive")));
    }
    let m = preds.len();
    let mut w = DMatrix::zeros(truth.len(), m);
    let mut logits = vec![0.0; m];
    for i in 0..truth.len() {
        for (j, p) in preds.iter().enumerate() {
            let r = p[i] - truth[i];
            logits[j] = -0.5 * r * r / (sigma * sigma);
        }
        let top = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut s = 0.0;
        for (j, l) in logits.iter().enumerate() {
            let e = (l - top).exp();
            w[(i, j)] = e;
            s += e;
        }
        for j in 0..m {
            w[(i, j)] /= s;
        }
    }
    Ok(w)
}

/// `Σ_j ω_ij p_j[i]` per point, clamped to the pointwise component range
/// against rounding.
pub fn combine(preds: &[Vec<f64>], weights: &DMatrix<f64>) -> Result<Vec<f64>> {
    if preds.is_empty() {
        return Err(Error::Empty("model predictions"));
    }
    let n = preds[0].len();
    check_len(n, weights.nrows(), "weight rows")?;
    check_len(preds.len(), weights.ncols(), "weight columns")?;
    for p in preds {
        check_len(n, p.len(), "prediction length")?;
    }
    Ok((0..n)
        .map(|i| {
            let (mut lo, mut hi, mut v) = (f64::INFINITY, f64::NEG_INFINITY, 0.0);
            for (j, p) in preds.iter().enumerate() {
                lo = lo.min(p[i]);
                hi = hi.max(p[i]);
                v += weights[(i, j)] * p[i];
            }
            v.clamp(lo, hi)
        })
        .collect())
}

/// Pointwise `(min, max)` over the component predictions.
pub fn accessible_region(preds: &[Vec<f64>]) -> Result<(Vec<f64>, Vec<f64>)> {
    if preds.len() < 2 {
        return Err(Error::Invalid("the accessible region needs at least two models".into()));
    }
    let n = preds[0].len();
    for p in preds {
        check_len(n, p.len(), "prediction length")?;
    }
    let lower = (0..n).map(|i| preds.iter().map(|p| p[i]).fold(f64::INFINITY, f64::min)).collect();
    let upper = (0..n).map(|i| preds.iter().map(|p| p[i]).fold(f64::NEG_INFINITY, f64::max)).collect();
    Ok((lower, upper))
}

/// One evaluation parameter with its normalized truth and the normalized
/// prediction of every component model.
#[derive(Clone, Debug, PartialEq)]
pub struct EvalSample {
    pub mu: Vec<f64>,
    pub truth: Vec<f64>,
    pub preds: Vec<Vec<f64>>,
}

/// Sum over samples and points of the squared residual of the mixture built
/// with exact weights at bandwidth `sigma`.
pub fn mixture_objective(samples: &[EvalSample], sigma: f64) -> Result<f64> {
    let mut total = 0.0;
    for s in samples {
        let w = exact_weights(&s.preds, &s.truth, sigma)?;
        let mix = combine(&s.preds, &w)?;
        total += mix.iter().zip(&s.truth).map(|(m, t)| (m - t) * (m - t)).sum::<f64>();
    }
    Ok(total)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SigmaSearch {
    pub sigma: f64,
    /// `(σ, objective)` for every grid point.
    pub objective: Vec<(f64, f64)>,
}

/// Grid search over [`sigma_grid`]; equal objectives (to 1e-12 relative)
/// keep the smaller σ.
pub fn optimize_sigma(samples: &[EvalSample]) -> Result<SigmaSearch> {
    if samples.is_empty() {
        return Err(Error::Empty("evaluation set"));
    }
    let mut objective = Vec::new();
    let mut best = (f64::INFINITY, SIGMA_RANGE.0);
    for sigma in sigma_grid() {
        let v = mixture_objective(samples, sigma)?;
        if v < best.0 - 1e-12 * best.0.abs() || !best.0.is_finite() {
            best = (v, sigma);
        }
        objective.push((sigma, v));
    }
    Ok(SigmaSearch {
        sigma: best.1,
        objective,
    })
}

/// Maps grid points and parameters to regression features `[x, μ]`, each
/// scaled to the unit box.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeatureScaler {
    pub grid: Grid,
    pub space: MinMaxScaler,
    pub params: MinMaxScaler,
}

impl FeatureScaler {
    pub fn fit(grid: &Grid, params: &[Vec<f64>]) -> Result<Self> {
        let p = params.first().ok_or(Error::Empty("feature parameters"))?.len();
        Ok(Self {
            grid: grid.clone(),
            space: MinMaxScaler::fit(grid.points(), grid.dim)?,
            params: MinMaxScaler::fit(params.iter().map(Vec::as_slice), p)?,
        })
    }

    pub fn features(&self, mu: &[f64]) -> Result<Vec<Vec<f64>>> {
        check_len(self.params.width(), mu.len(), "parameter vector")?;
        let m = self.params.transform(mu);
        Ok(self
            .grid
            .points()
            .map(|x| {
                let mut eta = self.space.transform(x);
                eta.extend_from_slice(&m);
                eta
            })
            .collect())
    }
}

/// Fits one score forest per model on all (eval point, eval parameter) rows.
/// Forest `j` uses seed `seed::derive(cfg.seed, j)`.
pub fn fit_weight_regressors(
    samples: &[EvalSample],
    grid: &Grid,
    sigma: f64,
    cfg: &ForestConfig,
) -> Result<(FeatureScaler, Vec<Forest>)> {
    let first = samples.first().ok_or(Error::Empty("evaluation set"))?;
    let n_models = first.preds.len();
    if n_models < 2 {
        return Err(Error::Invalid("aggregation needs at least two models".into()));
    }
    let mus: Vec<Vec<f64>> = samples.iter().map(|s| s.mu.clone()).collect();
    let scaler = FeatureScaler::fit(grid, &mus)?;
    let mut rows = Vec::new();
    let mut targets = vec![Vec::new(); n_models];
    for s in samples {
        check_len(n_models, s.preds.len(), "models per sample")?;
        check_len(grid.n_points(), s.truth.len(), "truth length")?;
        rows.extend(scaler.features(&s.mu)?);
        let g = gaussian_scores(&s.preds, &s.truth, sigma)?;
        for (j, t) in targets.iter_mut().enumerate() {
            t.extend(g.column(j).iter());
        }
    }
    let forests = targets
        .iter()
        .enumerate()
        .map(|(j, y)| {
            let c = ForestConfig {
                seed: seed::derive(cfg.seed, j as u64),
                ..cfg.clone()
            };
            Forest::fit(&rows, y, &c)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((scaler, forests))
}

#[derive(Clone, Debug, PartialEq)]
pub struct MixtureModel {
    pub roms: Vec<Rom>,
    pub sigma_opt: f64,
    pub features: FeatureScaler,
    pub regressors: Vec<Forest>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct MixturePrediction {
    /// Physical units.
    pub field: Vec<f64>,
    /// `points × models`.
    pub weights: DMatrix<f64>,
    /// Component predictions in physical units.
    pub components: Vec<Vec<f64>>,
    /// Points where every predicted score was `<= SCORE_FLOOR`.
    pub fallbacks: usize,
}

/// Record stored next to the component bundles.
#[derive(Serialize, Deserialize)]
struct MixtureRecord {
    models: Vec<String>,
    sigma_opt: f64,
    features: FeatureScaler,
}

impl MixtureModel {
    /// Optimizes σ on the evaluation samples and fits the score regressors.
    /// Sample predictions must come from `roms`, in order, on normalized
    /// fields.
    pub fn fit(roms: Vec<Rom>, samples: &[EvalSample], grid: &Grid, cfg: &ForestConfig) -> Result<(Self, SigmaSearch)> {
        if roms.len() < 2 {
            return Err(Error::Invalid("aggregation needs at least two models".into()));
        }
        for s in samples {
            check_len(roms.len(), s.preds.len(), "models per sample")?;
        }
        let search = optimize_sigma(samples)?;
        let (features, regressors) = fit_weight_regressors(samples, grid, search.sigma, cfg)?;
        Ok((
            Self {
                roms,
                sigma_opt: search.sigma,
                features,
                regressors,
            },
            search,
        ))
    }

    pub fn names(&self) -> Vec<String> {
        self.roms.iter().map(Rom::name).collect()
    }

    /// Weights at every grid point for `mu` and the number of fallback rows.
    pub fn weights(&self, mu: &[f64]) -> Result<(DMatrix<f64>, usize)> {
        let eta = self.features.features(mu)?;
        let mut g = DMatrix::zeros(eta.len(), self.regressors.len());
        for (j, f) in self.regressors.iter().enumerate() {
            for (i, row) in eta.iter().enumerate() {
                g[(i, j)] = f.predict(row)?;
            }
        }
        weights_from_scores(&g)
    }

    pub fn predict(&self, mu: &[f64]) -> Result<MixturePrediction> {
        let components = self.roms.iter().map(|r| r.predict(mu)).collect::<Result<Vec<_>>>()?;
        self.predict_with(mu, components)
    }

    /// Like [`MixtureModel::predict`] with component predictions (physical
    /// units, same order as `roms`) already computed.
    pub fn predict_with(&self, mu: &[f64], components: Vec<Vec<f64>>) -> Result<MixturePrediction> {
        check_len(self.roms.len(), components.len(), "component predictions")?;
        let (weights, fallbacks) = self.weights(mu)?;
        let field = combine(&components, &weights)?;
        Ok(MixturePrediction {
            field,
            weights,
            components,
            fallbacks,
        })
    }

    /// `dir/mixture.json`, `dir/forest_<j>.json` and one ROM bundle per
    /// component under `dir/roms/<j>-<name>`.
    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        write_json(
            &dir.join("mixture.json"),
            &MixtureRecord {
                models: self.names(),
                sigma_opt: self.sigma_opt,
                features: self.features.clone(),
            },
        )?;
        for (j, (rom, forest)) in self.roms.iter().zip(&self.regressors).enumerate() {
            rom.save(&dir.join("roms").join(format!("{j}-{}", rom.name())))?;
            write_json(&dir.join(format!("forest_{j}.json")), forest)?;
        }
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let rec: MixtureRecord = read_json(&dir.join("mixture.json"))?;
        let mut roms = Vec::new();
        let mut regressors = Vec::new();
        for (j, name) in rec.models.iter().enumerate() {
            roms.push(Rom::load(&dir.join("roms").join(format!("{j}-{name}")))?);
            regressors.push(read_json(&dir.join(format!("forest_{j}.json")))?);
        }
        Ok(Self {
            roms,
            sigma_opt: rec.sigma_opt,
            features: rec.features,
            regressors,
        })
    }
}

/// CSV with grid coordinates `x0..` and one weight column per model.
pub fn write_weights_csv(path: &Path, grid: &Grid, names: &[String], weights: &DMatrix<f64>) -> Result<()> {
    check_len(grid.n_points(), weights.nrows(), "weight rows")?;
    check_len(names.len(), weights.ncols(), "weight columns")?;
    let mut out = String::new();
    let mut header: Vec<String> = (0..grid.dim).map(|k| format!("x{k}")).collect();
    header.extend(names.iter().map(|n| format!("w_{n}")));
    out.push_str(&header.join(","));
    out.push('\n');
    for (i, x) in grid.points().enumerate() {
        let mut cells: Vec<String> = x.iter().map(|v| fmt_real(*v)).collect();
        cells.extend(weights.row(i).iter().map(|v| fmt_real(*v)));
        out.push_str(&cells.join(","));
        out.push('\n');
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::SnapshotSet;
    use crate::latentmap::ApproxKind;
    use crate::reduction::ReductionKind;
    use crate::rom::RomSpec;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn score_formula() {
        let g = gaussian_scores(&[vec![1.0, 2.0]], &[0.0, 2.0], 1.0).unwrap();
        assert!((g[(0, 0)] - (-0.5f64).exp()).abs() < 1e-15);
        assert_eq!(g[(1, 0)], 1.0);
        let sym = gaussian_scores(&[vec![0.3], vec![-0.3]], &[0.0], 0.2).unwrap();
        assert_eq!(sym[(0, 0)], sym[(0, 1)]);
        assert!(gaussian_scores(&[vec![0.0]], &[0.0], 0.0).is_err());
    }

    #[test]
    fn weight_normalization() {
        let (w, fb) = weights_from_scores(&DMatrix::from_row_slice(1, 4, &[0.3; 4])).unwrap();
        assert!(w.iter().all(|v| (v - 0.25).abs() < 1e-15) && fb == 0);
        let (w, _) = weights_from_scores(&DMatrix::from_row_slice(1, 2, &[1.0, (-8f64).exp()])).unwrap();
        assert!((w[(0, 0)] - 0.99966).abs() < 5e-6 && (w[(0, 1)] - 0.00034).abs() < 5e-6);
        let (w, fb) = weights_from_scores(&DMatrix::from_row_slice(2, 2, &[0.0, 0.0, 0.5, 0.5])).unwrap();
        assert_eq!(fb, 1);
        assert_eq!(w[(0, 0)], 0.5);
        assert!(weights_from_scores(&DMatrix::from_row_slice(1, 2, &[f64::NAN, 1.0])).is_err());
    }

    #[test]
    fn exact_weights_agree_with_scores_and_survive_underflow() {
        let preds = vec![vec![0.1, 0.5], vec![-0.2, 0.49]];
        let truth = [0.0, 0.0];
        let g = gaussian_scores(&preds, &truth, 0.3).unwrap();
        let (w, _) = weights_from_scores(&g).unwrap();
        let e = exact_weights(&preds, &truth, 0.3).unwrap();
        assert!((w - &e).abs().max() < 1e-14);
        let tight = exact_weights(&preds, &truth, 1e-3).unwrap();
        assert_eq!(tight[(1, 1)], 1.0);
        assert_eq!(tight[(1, 0)], 0.0);
    }

    #[test]
    fn large_sigma_gives_uniform_weights() {
        let preds = vec![vec![0.3, -1.0], vec![0.9, 2.0], vec![0.0, 0.5]];
        let w = exact_weights(&preds, &[0.1, 0.2], 1e6).unwrap();
        assert!(w.iter().all(|v| (v - 1.0 / 3.0).abs() < 1e-6));
    }

    #[test]
    fn combination_cases() {
        let preds = vec![vec![1.0, 5.0], vec![3.0, 5.0]];
        let w = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.2, 0.8]);
        assert_eq!(combine(&preds, &w).unwrap(), vec![1.0, 5.0]);
        let (lo, hi) = accessible_region(&preds).unwrap();
        assert_eq!((lo, hi), (vec![1.0, 5.0], vec![3.0, 5.0]));
        assert!(accessible_region(&preds[..1]).is_err());
    }

    fn samples(rng: &mut ChaCha8Rng, n_models: usize, exact: Option<usize>) -> Vec<EvalSample> {
        (0..4)
            .map(|k| {
                let truth: Vec<f64> = (0..30).map(|i| ((i + k) as f64 * 0.2).sin()).collect();
                let preds = (0..n_models)
                    .map(|j| {
                        if Some(j) == exact {
                            truth.clone()
                        } else {
                            truth.iter().map(|t| t + rng.gen_range(-0.3..0.3)).collect()
                        }
                    })
                    .collect();
                EvalSample {
                    mu: vec![k as f64],
                    truth,
                    preds,
                }
            })
            .collect()
    }

    #[test]
    fn exact_model_drives_sigma_to_lower_bound() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let s = samples(&mut rng, 3, Some(1));
        let search = optimize_sigma(&s).unwrap();
        assert_eq!(search.sigma, 1e-3);
        for pair in search.objective.windows(2) {
            assert!(pair[0].1 <= pair[1].1 + 1e-15);
        }
    }

    #[test]
    fn identical_models_tie_to_smallest_sigma() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut s = samples(&mut rng, 1, None);
        for e in &mut s {
            e.preds.push(e.preds[0].clone());
        }
        assert_eq!(optimize_sigma(&s).unwrap().sigma, 1e-3);
    }

    #[test]
    fn grid_sigma_near_fine_grid_optimum() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let s = samples(&mut rng, 2, None);
        let search = optimize_sigma(&s).unwrap();
        let (lo, hi) = (SIGMA_RANGE.0.ln(), SIGMA_RANGE.1.ln());
        let fine: Vec<(f64, f64)> = (0..200)
            .map(|k| {
                let sg = (lo + (hi - lo) * k as f64 / 199.0).exp();
                (sg, mixture_objective(&s, sg).unwrap())
            })
            .collect();
        let best = fine.iter().copied().fold((0.0, f64::INFINITY), |b, v| if v.1 < b.1 { v } else { b });
        let step = 10f64.ln() / 4.0;
        assert!((search.sigma.ln() - best.0.ln()).abs() <= step + 1e-12);
        let coarse_best = search.objective.iter().map(|v| v.1).fold(f64::INFINITY, f64::min);
        assert!(coarse_best >= best.1 - 1e-12 * best.1);
    }

    #[test]
    fn regressors_on_exact_model() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let s = samples(&mut rng, 2, Some(0));
        let grid = Grid::uniform_1d(30);
        let cfg = ForestConfig {
            n_trees: 10,
            ..ForestConfig::default()
        };
        let (scaler, forests) = fit_weight_regressors(&s, &grid, 0.1, &cfg).unwrap();
        let eta = scaler.features(&[1.5]).unwrap();
        assert!(eta.iter().all(|r| forests[0].predict(r).unwrap() == 1.0));
        for r in &eta {
            let v = forests[1].predict(r).unwrap();
            assert!(v > 0.0 && v <= 1.0);
        }
    }

    fn toy_set(mus: &[f64]) -> SnapshotSet {
        let grid = Grid::uniform_1d(40);
        let fields = mus
            .iter()
            .map(|&m| grid.points().map(|x| ((x[0] - 0.2 - 0.06 * m) / 0.05).tanh()).collect())
            .collect();
        SnapshotSet::new(mus.iter().map(|m| vec![*m]).collect(), grid, fields).unwrap()
    }

    #[test]
    fn mixture_bundle_and_envelope() {
        let train = toy_set(&(0..15).map(|i| i as f64 * 10.0 / 14.0).collect::<Vec<_>>());
        let eval = toy_set(&[0.35, 2.2, 4.1, 6.6, 8.9]);
        let roms = vec![
            Rom::train(&train, &RomSpec::new(ReductionKind::Pod, ApproxKind::Rbf, 3)).unwrap(),
            Rom::train(&train, &RomSpec::new(ReductionKind::Pod, ApproxKind::Gpr, 3)).unwrap(),
        ];
        let samples: Vec<EvalSample> = eval
            .params
            .iter()
            .zip(&eval.fields)
            .map(|(mu, f)| EvalSample {
                mu: mu.clone(),
                truth: f.clone(),
                preds: roms.iter().map(|r| r.predict_normalized(mu).unwrap()).collect(),
            })
            .collect();
        let cfg = ForestConfig {
            n_trees: 10,
            ..ForestConfig::default()
        };
        let (mix, search) = MixtureModel::fit(roms, &samples, &train.grid, &cfg).unwrap();
        assert!(sigma_grid().contains(&search.sigma));
        let pred = mix.predict(&[5.3]).unwrap();
        for row in pred.weights.row_iter() {
            assert!((row.sum() - 1.0).abs() < 1e-12);
        }
        let (lo, hi) = accessible_region(&pred.components).unwrap();
        assert!(pred.field.iter().zip(lo.iter().zip(&hi)).all(|(v, (l, h))| l <= v && v <= h));

        let dir = tempfile::tempdir().unwrap();
        mix.save(dir.path()).unwrap();
        let back = MixtureModel::load(dir.path()).unwrap();
        assert_eq!(back, mix);

        let path = dir.path().join("w.csv");
        write_weights_csv(&path, &train.grid, &mix.names(), &pred.weights).unwrap();
        let text = fs::read_to_string(path).unwrap();
        assert!(text.starts_with("x0,w_pod-rbf,w_pod-gpr\n"));
        assert_eq!(text.lines().count(), 41);
    }
}
