//! Synthetic parametric field families and the end-to-end experiment.
//!
//! `smooth_family` is `(1 - e^{-μx})(1 + 0.1 sin 2πx)` with `μ ∈ [1, 10]`;
//! its singular values decay fast. `moving_front` is
//! `tanh((x - (0.3 + 0.04 μ)) / 0.02)` with `μ ∈ [0, 10]`; the front sweeps
//! across the domain and the spectrum decays slowly. 2D variants multiply by
//! `1 + 0.5 y`.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;
use std::time::Instant;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::aggregation::{
    accessible_region, combine, exact_weights, write_weights_csv, EvalSample, MixtureModel,
};
use crate::dataset::{fmt_real, Grid, SnapshotSet, SplitIndices};
use crate::error::{Error, Result};
use crate::forest::ForestConfig;
use crate::latentmap::ApproxKind;
use crate::reduction::{energy_rank, singular_spectrum, Reducer, ReductionKind};
use crate::rom::{relative_error, write_json, HyperConfig, ModelName, Rom, RomSpec};
use crate::seed;

/// Width of the tanh front.
pub const FRONT_WIDTH: f64 = 0.02;

/// Points within this distance of the front center count as the front region.
pub const FRONT_REGION: f64 = 3.0 * FRONT_WIDTH;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CaseKind {
    SmoothFamily,
    MovingFront,
}

impl CaseKind {
    pub fn default_range(self) -> (f64, f64) {
        match self {
            CaseKind::SmoothFamily => (1.0, 10.0),
            CaseKind::MovingFront => (0.0, 10.0),
        }
    }

    /// Field value at spatial point `x` (only `x[0]` and, in 2D, `x[1]` used).
    pub fn value(self, x: &[f64], mu: f64) -> f64 {
        let s = match self {
            CaseKind::SmoothFamily => {
                (1.0 - (-mu * x[0]).exp()) * (1.0 + 0.1 * (2.0 * std::f64::consts::PI * x[0]).sin())
            }
            CaseKind::MovingFront => ((x[0] - front_center(mu)) / FRONT_WIDTH).tanh(),
        };
        match x.get(1) {
            Some(y) => s * (1.0 + 0.5 * y),
            None => s,
        }
    }

    pub fn has_front(self) -> bool {
        matches!(self, CaseKind::MovingFront)
    }
}

pub fn front_center(mu: f64) -> f64 {
    0.3 + 0.04 * mu
}

impl fmt::Display for CaseKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            CaseKind::SmoothFamily => "smooth_family",
            CaseKind::MovingFront => "moving_front",
        })
    }
}

impl FromStr for CaseKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "smooth_family" => Ok(CaseKind::SmoothFamily),
            "moving_front" => Ok(CaseKind::MovingFront),
            other => Err(Error::Invalid(format!("unknown case '{other}'"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CaseSpec {
    pub kind: CaseKind,
    /// Points along `x`.
    pub nx: usize,
    /// Points along `y`; 0 for a 1D grid.
    #[serde(default)]
    pub ny: usize,
    pub param_range: (f64, f64),
    pub n_snapshots: usize,
    /// Amplitude of uniform noise added to every value.
    #[serde(default)]
    pub noise: f64,
    pub seed: u64,
}

impl CaseSpec {
    pub fn new(kind: CaseKind, nx: usize, seed: u64) -> Self {
        Self {
            kind,
            nx,
            ny: 0,
            param_range: kind.default_range(),
            n_snapshots: 100,
            noise: 0.0,
            seed,
        }
    }

    pub fn grid(&self) -> Grid {
        if self.ny == 0 {
            Grid::uniform_1d(self.nx)
        } else {
            Grid::uniform_2d(self.nx, self.ny)
        }
    }

    pub fn validate(&self) -> Result<()> {
        let (lo, hi) = self.param_range;
        if !(lo.is_finite() && hi.is_finite() && hi > lo) {
            return Err(Error::Invalid(format!("parameter range ({lo}, {hi}) is degenerate")));
        }
        if self.nx < 2 || self.ny == 1 {
            return Err(Error::Invalid("grid needs at least two points per axis".into()));
        }
        if self.n_snapshots == 0 {
            return Err(Error::Invalid("n_snapshots must be positive".into()));
        }
        if !(self.noise >= 0.0 && self.noise.is_finite()) {
            return Err(Error::Invalid(format!("noise {} must be nonnegative", self.noise)));
        }
        Ok(())
    }

    /// Noise-free field at `mu` on this case's grid.
    pub fn truth(&self, mu: f64) -> Vec<f64> {
        self.grid().points().map(|x| self.kind.value(x, mu)).collect()
    }
}

/// Parameters drawn uniformly from the range; fields from the closed form.
pub fn generate_case(spec: &CaseSpec) -> Result<SnapshotSet> {
    spec.validate()?;
    let grid = spec.grid();
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let (lo, hi) = spec.param_range;
    let params: Vec<Vec<f64>> = (0..spec.n_snapshots).map(|_| vec![rng.gen_range(lo..hi)]).collect();
    let mut noise_rng = ChaCha8Rng::seed_from_u64(seed::named(spec.seed, "noise"));
    let fields = params
        .iter()
        .map(|mu| {
            grid.points()
                .map(|x| {
                    let v = spec.kind.value(x, mu[0]);
                    if spec.noise > 0.0 {
                        v + noise_rng.gen_range(-spec.noise..spec.noise)
                    } else {
                        v
                    }
                })
                .collect()
        })
        .collect();
    SnapshotSet::new(params, grid, fields)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MixtureKind {
    /// Every RBF-based model.
    RbfPair,
    /// The two models with the lowest mean evaluation error.
    TwoBest,
}

impl fmt::Display for MixtureKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            MixtureKind::RbfPair => "rbf-pair",
            MixtureKind::TwoBest => "two-best",
        })
    }
}

impl FromStr for MixtureKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "rbf-pair" => Ok(MixtureKind::RbfPair),
            "two-best" => Ok(MixtureKind::TwoBest),
            other => Err(Error::Invalid(format!("unknown mixture '{other}'"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub case: CaseSpec,
    pub n_train: usize,
    pub n_eval: usize,
    pub n_test: usize,
    pub r: usize,
    pub models: Vec<String>,
    pub mixtures: Vec<MixtureKind>,
    pub hyper: HyperConfig,
    pub forest: ForestConfig,
    /// Source of the split, model and forest seeds.
    pub seed: u64,
}

impl ExperimentConfig {
    /// 70/20/10 split of 100 snapshots, POD and AE each with RBF and GPR
    /// maps, both mixtures.
    pub fn new(case: CaseSpec, r: usize, seed: u64) -> Self {
        Self {
            case,
            n_train: 70,
            n_eval: 20,
            n_test: 10,
            r,
            models: ["pod-rbf", "ae-rbf", "pod-gpr", "ae-gpr"].map(String::from).to_vec(),
            mixtures: vec![MixtureKind::RbfPair, MixtureKind::TwoBest],
            hyper: HyperConfig::default(),
            forest: ForestConfig::default(),
            seed,
        }
    }

    pub fn model_names(&self) -> Result<Vec<ModelName>> {
        self.models.iter().map(|m| m.parse()).collect()
    }

    pub fn validate(&self) -> Result<()> {
        self.case.validate()?;
        if self.n_train + self.n_eval + self.n_test > self.case.n_snapshots {
            return Err(Error::Invalid(format!(
                "split {}+{}+{} exceeds {} snapshots",
                self.n_train, self.n_eval, self.n_test, self.case.n_snapshots
            )));
        }
        if self.n_train == 0 || self.n_eval == 0 || self.n_test == 0 {
            return Err(Error::Invalid("every split needs at least one snapshot".into()));
        }
        if self.models.is_empty() {
            return Err(Error::Invalid("no models requested".into()));
        }
        self.model_names()?;
        self.forest.validate()
    }
}

/// Every seed used by one experiment.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SeedRecord {
    pub master: u64,
    pub case: u64,
    pub split: u64,
    pub reducers: BTreeMap<String, u64>,
    pub maps: BTreeMap<String, u64>,
    pub forests: BTreeMap<String, u64>,
}

impl SeedRecord {
    fn new(cfg: &ExperimentConfig) -> Self {
        Self {
            master: cfg.seed,
            case: cfg.case.seed,
            split: seed::named(cfg.seed, "split"),
            reducers: BTreeMap::new(),
            maps: BTreeMap::new(),
            forests: BTreeMap::new(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelReport {
    pub name: String,
    /// `None` when training succeeded.
    pub failure: Option<String>,
    pub eval_errors: Vec<f64>,
    pub test_errors: Vec<f64>,
    pub eval_mean: f64,
    pub test_mean: f64,
    /// Sum of squared normalized residuals over the evaluation set.
    pub eval_sse: f64,
}

/// Mean weight of one component inside and outside the front region.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RegionSplit {
    pub name: String,
    pub inside: f64,
    pub outside: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MixtureReport {
    pub kind: MixtureKind,
    pub components: Vec<String>,
    pub failure: Option<String>,
    pub sigma_opt: f64,
    pub sigma_objective: Vec<(f64, f64)>,
    pub eval_errors: Vec<f64>,
    pub test_errors: Vec<f64>,
    pub eval_mean: f64,
    pub test_mean: f64,
    /// Eval-set squared error of the mixture with exact weights at `sigma_opt`.
    pub exact_eval_sse: f64,
    /// Smallest `eval_sse` among the components.
    pub best_component_eval_sse: f64,
    /// Grid points, over all test parameters, that fell back to uniform weights.
    pub fallbacks: usize,
    /// Test-set weights around the front (moving front only).
    pub front_weights: Vec<RegionSplit>,
    /// Mean accessible-region width inside and outside the front on the test set.
    pub envelope_width: Option<(f64, f64)>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub config: ExperimentConfig,
    pub seeds: SeedRecord,
    pub split: SplitIndices,
    pub eval_params: Vec<Vec<f64>>,
    pub test_params: Vec<Vec<f64>>,
    /// Singular values of the normalized training snapshots.
    pub spectrum: Vec<f64>,
    /// Modes needed for 99.99% of the energy.
    pub modes_9999: usize,
    pub models: Vec<ModelReport>,
    pub mixtures: Vec<MixtureReport>,
}

impl ExperimentReport {
    pub fn model(&self, name: &str) -> Option<&ModelReport> {
        self.models.iter().find(|m| m.name == name)
    }

    pub fn mixture(&self, kind: MixtureKind) -> Option<&MixtureReport> {
        self.mixtures.iter().find(|m| m.kind == kind)
    }
}

/// Wall-clock seconds per stage; kept apart from the report so reruns
/// compare byte for byte.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Timings {
    pub stages: Vec<(String, f64)>,
    pub total: f64,
}

/// Test-set fields of one mixture, physical units.
#[derive(Clone, Debug, PartialEq)]
pub struct MixtureDetail {
    pub kind: MixtureKind,
    pub names: Vec<String>,
    /// Per test parameter.
    pub truth: Vec<Vec<f64>>,
    pub components: Vec<Vec<Vec<f64>>>,
    pub field: Vec<Vec<f64>>,
    pub weights: Vec<DMatrix<f64>>,
    pub sigma_opt: f64,
    /// Normalized eval-set truth and component predictions, per eval parameter.
    pub eval_truth: Vec<Vec<f64>>,
    pub eval_components: Vec<Vec<Vec<f64>>>,
}

#[derive(Clone, Debug)]
pub struct Experiment {
    pub report: ExperimentReport,
    pub timings: Timings,
    pub grid: Grid,
    pub mixtures: Vec<MixtureDetail>,
}

fn mean(v: &[f64]) -> f64 {
    if v.is_empty() {
        f64::NAN
    } else {
        v.iter().sum::<f64>() / v.len() as f64
    }
}

fn sse(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

struct Trained {
    rom: Rom,
    eval_norm: Vec<Vec<f64>>,
    eval_phys: Vec<Vec<f64>>,
    test_phys: Vec<Vec<f64>>,
}

/// Trains every model on the training split, aggregates on the evaluation
/// split and scores everything on the test split. A model that fails to
/// train is recorded and skipped.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<Experiment> {
    cfg.validate()?;
    let start = Instant::now();
    let mut timings = Timings::default();
    let mut seeds = SeedRecord::new(cfg);

    let raw = generate_case(&cfg.case)?;
    let n = raw.len();
    let mut split = SplitIndices::random(n, cfg.n_train, cfg.n_eval, n - cfg.n_train - cfg.n_eval, seeds.split)?;
    split.test.truncate(cfg.n_test);
    let set = raw.normalize(&split.train)?;
    let norm = set.norm.clone().expect("normalized set");
    let train = set.subset(&split.train);
    let eval_params: Vec<Vec<f64>> = split.eval.iter().map(|&i| set.params[i].clone()).collect();
    let test_params: Vec<Vec<f64>> = split.test.iter().map(|&i| set.params[i].clone()).collect();
    let eval_norm: Vec<&Vec<f64>> = split.eval.iter().map(|&i| &set.fields[i]).collect();
    let eval_phys: Vec<&Vec<f64>> = split.eval.iter().map(|&i| &raw.fields[i]).collect();
    // test truth straight from the generator
    let test_truth: Vec<Vec<f64>> = test_params.iter().map(|mu| cfg.case.truth(mu[0])).collect();

    let train_matrix = train.matrix(&(0..train.len()).collect::<Vec<_>>());
    let spectrum = singular_spectrum(&train_matrix);
    let modes_9999 = energy_rank(&spectrum, 0.9999);

    let mut trained: Vec<Option<Trained>> = Vec::new();
    let mut models = Vec::new();
    for fitted in train_models(&train, &cfg.model_names()?, cfg.r, &cfg.hyper, cfg.seed) {
        let label = fitted.name.to_string();
        if let Some(s) = fitted.reducer_seed {
            seeds.reducers.insert(fitted.name.0.to_string(), s);
        }
        if let Some(s) = fitted.map_seed {
            seeds.maps.insert(label.clone(), s);
        }
        let t0 = Instant::now();
        let outcome = fitted.rom.and_then(|rom| {
            let predict = |mus: &[Vec<f64>]| -> std::result::Result<Vec<Vec<f64>>, String> {
                mus.iter().map(|mu| rom.predict_normalized(mu).map_err(|e| e.to_string())).collect()
            };
            let eval_n = predict(&eval_params)?;
            let test_n = predict(&test_params)?;
            Ok(Trained {
                eval_phys: eval_n.iter().map(|f| norm.invert(f)).collect(),
                test_phys: test_n.iter().map(|f| norm.invert(f)).collect(),
                eval_norm: eval_n,
                rom,
            })
        });
        timings
            .stages
            .push((format!("model {label}"), fitted.seconds + t0.elapsed().as_secs_f64()));
        match outcome {
            Ok(t) => {
                let eval_errors = errors(&t.eval_phys, &eval_phys)?;
                let test_errors = errors(&t.test_phys, &test_truth)?;
                let eval_sse = t.eval_norm.iter().zip(&eval_norm).map(|(p, f)| sse(p, f)).sum();
                models.push(ModelReport {
                    name: label,
                    failure: None,
                    eval_mean: mean(&eval_errors),
                    test_mean: mean(&test_errors),
                    eval_errors,
                    test_errors,
                    eval_sse,
                });
                trained.push(Some(t));
            }
            Err(msg) => {
                models.push(ModelReport {
                    name: label,
                    failure: Some(msg),
                    eval_errors: vec![],
                    test_errors: vec![],
                    eval_mean: f64::NAN,
                    test_mean: f64::NAN,
                    eval_sse: f64::NAN,
                });
                trained.push(None);
            }
        }
    }

    let mut mixture_reports = Vec::new();
    let mut details = Vec::new();
    for &kind in &cfg.mixtures {
        let t0 = Instant::now();
        let picked = select_components(kind, &models, cfg)?;
        let names: Vec<String> = picked.iter().map(|&i| models[i].name.clone()).collect();
        let forest_seed = seed::named(cfg.seed, &format!("forest-{kind}"));
        seeds.forests.insert(kind.to_string(), forest_seed);
        let mut report = MixtureReport {
            kind,
            components: names.clone(),
            failure: None,
            sigma_opt: f64::NAN,
            sigma_objective: vec![],
            eval_errors: vec![],
            test_errors: vec![],
            eval_mean: f64::NAN,
            test_mean: f64::NAN,
            exact_eval_sse: f64::NAN,
            best_component_eval_sse: f64::NAN,
            fallbacks: 0,
            front_weights: vec![],
            envelope_width: None,
        };
        if picked.len() < 2 {
            report.failure = Some(format!("needs two trained components, found {}", picked.len()));
            mixture_reports.push(report);
            continue;
        }
        let parts: Vec<&Trained> = picked.iter().map(|&i| trained[i].as_ref().expect("trained")).collect();
        let samples: Vec<EvalSample> = (0..eval_params.len())
            .map(|k| EvalSample {
                mu: eval_params[k].clone(),
                truth: eval_norm[k].clone(),
                preds: parts.iter().map(|t| t.eval_norm[k].clone()).collect(),
            })
            .collect();
        let forest_cfg = ForestConfig {
            seed: forest_seed,
            ..cfg.forest.clone()
        };
        let roms = parts.iter().map(|t| t.rom.clone()).collect();
        let (mix, search) = MixtureModel::fit(roms, &samples, &set.grid, &forest_cfg)?;
        report.sigma_opt = search.sigma;
        report.sigma_objective = search.objective;

        let mut exact_sse = 0.0;
        for s in &samples {
            let w = exact_weights(&s.preds, &s.truth, mix.sigma_opt)?;
            exact_sse += sse(&combine(&s.preds, &w)?, &s.truth);
        }
        report.exact_eval_sse = exact_sse;
        report.best_component_eval_sse = picked.iter().map(|&i| models[i].eval_sse).fold(f64::INFINITY, f64::min);

        let mut eval_fields = Vec::new();
        for (k, mu) in eval_params.iter().enumerate() {
            let comps = parts.iter().map(|t| t.eval_phys[k].clone()).collect();
            eval_fields.push(mix.predict_with(mu, comps)?.field);
        }
        report.eval_errors = errors(&eval_fields, &eval_phys)?;
        report.eval_mean = mean(&report.eval_errors);

        let mut detail = MixtureDetail {
            kind,
            names: names.clone(),
            truth: test_truth.clone(),
            components: vec![],
            field: vec![],
            weights: vec![],
            sigma_opt: mix.sigma_opt,
            eval_truth: samples.iter().map(|s| s.truth.clone()).collect(),
            eval_components: samples.into_iter().map(|s| s.preds).collect(),
        };
        for (k, mu) in test_params.iter().enumerate() {
            let comps: Vec<Vec<f64>> = parts.iter().map(|t| t.test_phys[k].clone()).collect();
            let pred = mix.predict_with(mu, comps)?;
            report.fallbacks += pred.fallbacks;
            detail.components.push(pred.components);
            detail.field.push(pred.field);
            detail.weights.push(pred.weights);
        }
        report.test_errors = errors(&detail.field, &test_truth)?;
        report.test_mean = mean(&report.test_errors);
        if cfg.case.kind.has_front() {
            let (fw, env) = front_diagnostics(&set.grid, &test_params, &detail)?;
            report.front_weights = fw;
            report.envelope_width = Some(env);
        }
        timings.stages.push((format!("mixture {kind}"), t0.elapsed().as_secs_f64()));
        mixture_reports.push(report);
        details.push(detail);
    }
    timings.total = start.elapsed().as_secs_f64();

    Ok(Experiment {
        report: ExperimentReport {
            config: cfg.clone(),
            seeds,
            split,
            eval_params,
            test_params,
            spectrum,
            modes_9999,
            models,
            mixtures: mixture_reports,
        },
        timings,
        grid: set.grid.clone(),
        mixtures: details,
    })
}

/// One model out of [`train_models`].
#[derive(Clone, Debug)]
pub struct FittedModel {
    pub name: ModelName,
    /// Training failures are kept as messages.
    pub rom: std::result::Result<Rom, String>,
    pub reducer_seed: Option<u64>,
    pub map_seed: Option<u64>,
    /// Wall-clock training time, including a shared reducer fit.
    pub seconds: f64,
}

/// Trains every named model on a normalized training set. Models with the
/// same reduction share one reducer. Nonlinear reducers are seeded with
/// `named(master, "reducer-<kind>")`, ANN maps with `named(master, "map-<model>")`.
pub fn train_models(
    train: &SnapshotSet,
    names: &[ModelName],
    r: usize,
    hyper: &HyperConfig,
    master: u64,
) -> Vec<FittedModel> {
    let train_matrix = train.matrix(&(0..train.len()).collect::<Vec<_>>());
    let mut reducers: BTreeMap<ReductionKind, std::result::Result<Reducer, String>> = BTreeMap::new();
    let mut out = Vec::new();
    for &name in names {
        let ModelName(red, approx) = name;
        let t0 = Instant::now();
        let mut spec = RomSpec {
            reduction: red,
            approx,
            r,
            hyper: hyper.clone(),
        };
        let reducer_seed = (!red.is_linear()).then(|| seed::named(master, &format!("reducer-{red}")));
        if let Some(s) = reducer_seed {
            spec.hyper.ae_train.seed = s;
        }
        let map_seed = (approx == ApproxKind::Ann).then(|| seed::named(master, &format!("map-{name}")));
        if let Some(s) = map_seed {
            spec.hyper.ann_train.seed = s;
        }
        let reducer = reducers
            .entry(red)
            .or_insert_with(|| {
                Reducer::fit(red, &train_matrix, r, &spec.hyper.ae_arch, &spec.hyper.ae_train)
                    .map(|(r, _)| r)
                    .map_err(|e| e.to_string())
            })
            .clone();
        let rom = reducer.and_then(|reducer| Rom::train_with(train, &spec, reducer).map_err(|e| e.to_string()));
        out.push(FittedModel {
            name,
            rom,
            reducer_seed,
            map_seed,
            seconds: t0.elapsed().as_secs_f64(),
        });
    }
    out
}

fn errors<T: AsRef<[f64]>>(preds: &[Vec<f64>], truth: &[T]) -> Result<Vec<f64>> {
    preds
        .iter()
        .zip(truth)
        .map(|(p, t)| relative_error(p, t.as_ref()).map(|e| e.value))
        .collect()
}

fn select_components(kind: MixtureKind, models: &[ModelReport], cfg: &ExperimentConfig) -> Result<Vec<usize>> {
    let names = cfg.model_names()?;
    let ok = |i: &usize| models[*i].failure.is_none();
    Ok(match kind {
        MixtureKind::RbfPair => (0..models.len()).filter(|i| names[*i].1 == ApproxKind::Rbf).filter(ok).collect(),
        MixtureKind::TwoBest => {
            let mut idx: Vec<usize> = (0..models.len()).filter(ok).collect();
            idx.sort_by(|&a, &b| models[a].eval_mean.total_cmp(&models[b].eval_mean).then(a.cmp(&b)));
            idx.truncate(2);
            idx.sort_unstable();
            idx
        }
    })
}

fn front_diagnostics(
    grid: &Grid,
    test_params: &[Vec<f64>],
    detail: &MixtureDetail,
) -> Result<(Vec<RegionSplit>, (f64, f64))> {
    let m = detail.names.len();
    let mut inside = vec![0.0; m];
    let mut outside = vec![0.0; m];
    let (mut n_in, mut n_out) = (0usize, 0usize);
    let (mut w_in, mut w_out) = (0.0, 0.0);
    for (k, mu) in test_params.iter().enumerate() {
        let c = front_center(mu[0]);
        let (lo, hi) = accessible_region(&detail.components[k])?;
        for (i, x) in grid.points().enumerate() {
            let width = hi[i] - lo[i];
            let row = detail.weights[k].row(i);
            if (x[0] - c).abs() <= FRONT_REGION {
                n_in += 1;
                w_in += width;
                for j in 0..m {
                    inside[j] += row[j];
                }
            } else {
                n_out += 1;
                w_out += width;
                for j in 0..m {
                    outside[j] += row[j];
                }
            }
        }
    }
    let avg = |s: f64, n: usize| if n > 0 { s / n as f64 } else { f64::NAN };
    let split = (0..m)
        .map(|j| RegionSplit {
            name: detail.names[j].clone(),
            inside: avg(inside[j], n_in),
            outside: avg(outside[j], n_out),
        })
        .collect();
    Ok((split, (avg(w_in, n_in), avg(w_out, n_out))))
}

fn mu_tag(mu: &[f64]) -> String {
    mu.iter().map(|v| format!("{v:.4}")).collect::<Vec<_>>().join("_")
}

/// Writes `errors.csv`, `weights_<mixture>_mu<μ>.csv`,
/// `envelope_<mixture>_mu<μ>.csv`, `report.json` and `timings.json`.
pub fn emit_report(exp: &Experiment, out: &Path) -> Result<()> {
    fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let rep = &exp.report;
    let p = rep.eval_params.first().map_or(1, Vec::len);
    let mut csv = String::from("model,split,index");
    for k in 0..p {
        csv.push_str(&format!(",mu{k}"));
    }
    csv.push_str(",relative_error\n");
    let mut rows = |name: &str, split: &str, params: &[Vec<f64>], errs: &[f64]| {
        for (k, (mu, e)) in params.iter().zip(errs).enumerate() {
            csv.push_str(&format!("{name},{split},{k}"));
            for v in mu {
                csv.push(',');
                csv.push_str(&fmt_real(*v));
            }
            csv.push(',');
            csv.push_str(&fmt_real(*e));
            csv.push('\n');
        }
    };
    for m in &rep.models {
        rows(&m.name, "eval", &rep.eval_params, &m.eval_errors);
        rows(&m.name, "test", &rep.test_params, &m.test_errors);
    }
    for m in &rep.mixtures {
        let name = format!("mix-{}", m.kind);
        rows(&name, "eval", &rep.eval_params, &m.eval_errors);
        rows(&name, "test", &rep.test_params, &m.test_errors);
    }
    let path = out.join("errors.csv");
    fs::write(&path, csv).map_err(|e| Error::io(&path, e))?;

    for d in &exp.mixtures {
        for (k, mu) in rep.test_params.iter().enumerate() {
            let tag = format!("{}_mu{}", d.kind, mu_tag(mu));
            write_weights_csv(&out.join(format!("weights_{tag}.csv")), &exp.grid, &d.names, &d.weights[k])?;
            let (lo, hi) = accessible_region(&d.components[k])?;
            let mut text = String::new();
            let header: Vec<String> = (0..exp.grid.dim).map(|a| format!("x{a}")).collect();
            text.push_str(&header.join(","));
            text.push_str(",lower,upper,mixture,truth\n");
            for (i, x) in exp.grid.points().enumerate() {
                let mut cells: Vec<String> = x.iter().map(|v| fmt_real(*v)).collect();
                for v in [lo[i], hi[i], d.field[k][i], d.truth[k][i]] {
                    cells.push(fmt_real(v));
                }
                text.push_str(&cells.join(","));
                text.push('\n');
            }
            let path = out.join(format!("envelope_{tag}.csv"));
            fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
        }
    }
    write_json(&out.join("report.json"), rep)?;
    write_json(&out.join("timings.json"), &exp.timings)
}
