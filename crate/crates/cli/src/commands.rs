use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};

use romix::aggregation::{EvalSample, MixtureModel};
use romix::bench::{
    emit_report, generate_case, run_experiment, train_models, CaseKind, CaseSpec, ExperimentConfig, MixtureKind,
};
use romix::dataset::{load_snapshots, write_snapshots, Format, SnapshotSet, SplitIndices};
use romix::forest::ForestConfig;
use romix::latentmap::ApproxKind;
use romix::rom::{relative_error, HyperConfig, ModelName, Rom};
use romix::seed;

use crate::config::{pick, AggregateSection, FileConfig, GenerateSection, ReportSection, TrainSection};

pub const DEFAULT_MODELS: [&str; 4] = ["pod-rbf", "ae-rbf", "pod-gpr", "ae-gpr"];
const DEFAULT_NX: usize = 500;
const DEFAULT_N: usize = 100;
const DEFAULT_LATENT_DIM: usize = 3;
const DEFAULT_N_TRAIN: usize = 70;
const DEFAULT_N_EVAL: usize = 20;

/// Inputs that may come from a flag or the config file but have no default.
#[derive(Debug)]
pub struct MissingInput(pub &'static str);

impl std::fmt::Display for MissingInput {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "missing required input {}", self.0)
    }
}

impl std::error::Error for MissingInput {}

fn require<T>(v: Option<T>, what: &'static str) -> Result<T> {
    v.ok_or_else(|| MissingInput(what).into())
}

/// Names of stages or models that did not complete.
#[derive(Debug, Default)]
pub struct Outcome {
    pub failures: Vec<String>,
}

/// Seeds and outputs of one run, written as `manifest.json`.
#[derive(Debug, Serialize)]
struct Manifest {
    command: &'static str,
    master_seed: u64,
    seeds: BTreeMap<String, u64>,
    outputs: Vec<String>,
}

impl Manifest {
    fn new(command: &'static str, master_seed: u64) -> Self {
        Self {
            command,
            master_seed,
            seeds: BTreeMap::new(),
            outputs: Vec::new(),
        }
    }

    fn write(mut self, dir: &Path) -> Result<()> {
        self.outputs.sort();
        write_json(&dir.join("manifest.json"), &self)
    }
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
}

fn create_out(out: &Path) -> Result<()> {
    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))
}

fn format_of(path: &Path) -> Format {
    match path.extension().and_then(|e| e.to_str()) {
        Some("csv") => Format::Csv,
        _ => Format::Json,
    }
}

fn load_data(path: &Path) -> Result<SnapshotSet> {
    load_snapshots(path, format_of(path)).with_context(|| format!("loading snapshots from {}", path.display()))
}

fn parse_models(names: &[String]) -> Result<Vec<ModelName>> {
    names
        .iter()
        .map(|n| n.parse::<ModelName>().with_context(|| format!("model '{n}'")))
        .collect()
}

pub struct GenerateArgs {
    pub case: Option<CaseKind>,
    pub n: Option<usize>,
    pub nx: Option<usize>,
    pub ny: Option<usize>,
    pub noise: Option<f64>,
    pub format: Option<Format>,
}

pub fn generate(args: GenerateArgs, file: FileConfig, seed_flag: Option<u64>, out: &Path) -> Result<Outcome> {
    let sec = file.generate.unwrap_or_default();
    let master = pick(seed_flag, file.seed, || 0);
    let kind = require(args.case.or(sec.case), "--case")?;
    let mut spec = CaseSpec::new(kind, pick(args.nx, sec.nx, || DEFAULT_NX), seed::named(master, "dataset"));
    spec.ny = pick(args.ny, sec.ny, || 0);
    spec.n_snapshots = pick(args.n, sec.n, || DEFAULT_N);
    spec.noise = pick(args.noise, sec.noise, || 0.0);
    spec.param_range = sec.param_range.unwrap_or(spec.param_range);
    let format = pick(args.format, sec.format, || Format::Json);

    let set = generate_case(&spec)?;
    create_out(out)?;
    let name = match format {
        Format::Json => "snapshots.json",
        Format::Csv => "snapshots.csv",
    };
    write_snapshots(&set, &out.join(name), format)?;

    FileConfig {
        seed: Some(master),
        generate: Some(GenerateSection {
            case: Some(kind),
            n: Some(spec.n_snapshots),
            nx: Some(spec.nx),
            ny: Some(spec.ny),
            param_range: Some(spec.param_range),
            noise: Some(spec.noise),
            format: Some(format),
        }),
        ..FileConfig::default()
    }
    .write(out)?;
    let mut manifest = Manifest::new("generate", master);
    manifest.seeds.insert("dataset".into(), spec.seed);
    manifest.outputs.push(name.into());
    if format == Format::Csv {
        manifest.outputs.push("snapshots.grid.csv".into());
    }
    manifest.write(out)?;
    Ok(Outcome::default())
}

pub struct TrainArgs {
    pub data: Option<PathBuf>,
    pub latent_dim: Option<usize>,
    pub models: Option<Vec<String>>,
}

/// Per-model status written by `train` and read by `aggregate`.
#[derive(Debug, Serialize, Deserialize)]
struct TrainedEntry {
    name: String,
    failure: Option<String>,
}

pub fn train(args: TrainArgs, file: FileConfig, seed_flag: Option<u64>, out: &Path) -> Result<Outcome> {
    let sec = file.train.unwrap_or_default();
    let master = pick(seed_flag, file.seed, || 0);
    let data = require(args.data.or(sec.data), "--data")?;
    let r = pick(args.latent_dim, sec.latent_dim, || DEFAULT_LATENT_DIM);
    let model_list = pick(args.models, sec.models, || DEFAULT_MODELS.map(String::from).to_vec());
    let names = parse_models(&model_list)?;
    let hyper = sec.hyper.unwrap_or_default();
    let n_train = sec.n_train.unwrap_or(DEFAULT_N_TRAIN);
    let n_eval = sec.n_eval.unwrap_or(DEFAULT_N_EVAL);

    let raw = load_data(&data)?;
    let n = raw.len();
    if n_train + n_eval > n {
        bail!("split {n_train}+{n_eval} needs more than the {n} snapshots in {}", data.display());
    }
    let split_seed = seed::named(master, "split");
    let split = SplitIndices::random(n, n_train, n_eval, n - n_train - n_eval, split_seed)?;
    let set = raw.normalize(&split.train)?;
    let train = set.subset(&split.train);

    create_out(out)?;
    let mut manifest = Manifest::new("train", master);
    manifest.seeds.insert("split".into(), split_seed);
    let mut entries = Vec::new();
    let mut outcome = Outcome::default();
    for fitted in train_models(&train, &names, r, &hyper, master) {
        let label = fitted.name.to_string();
        if let Some(s) = fitted.reducer_seed {
            manifest.seeds.insert(format!("reducer-{}", fitted.name.0), s);
        }
        if let Some(s) = fitted.map_seed {
            manifest.seeds.insert(format!("map-{label}"), s);
        }
        let failure = match fitted.rom {
            Ok(rom) => {
                rom.save(&out.join("roms").join(&label))?;
                manifest.outputs.push(format!("roms/{label}"));
                None
            }
            Err(msg) => {
                outcome.failures.push(format!("{label}: {msg}"));
                Some(msg)
            }
        };
        entries.push(TrainedEntry { name: label, failure });
    }
    write_json(&out.join("split.json"), &split)?;
    write_json(&out.join("models.json"), &entries)?;
    manifest.outputs.extend(["split.json".into(), "models.json".into()]);

    FileConfig {
        seed: Some(master),
        train: Some(TrainSection {
            data: Some(data),
            latent_dim: Some(r),
            models: Some(model_list),
            n_train: Some(n_train),
            n_eval: Some(n_eval),
            hyper: Some(hyper),
        }),
        ..FileConfig::default()
    }
    .write(out)?;
    manifest.write(out)?;
    Ok(outcome)
}

pub struct AggregateArgs {
    pub data: Option<PathBuf>,
    pub roms: Option<PathBuf>,
    pub mixture: Option<MixtureKind>,
}

#[derive(Debug, Serialize)]
struct MixtureSummary {
    kind: MixtureKind,
    components: Vec<String>,
    /// Mean relative eval error per trained model, used for selection.
    eval_mean: BTreeMap<String, f64>,
    sigma_opt: f64,
    sigma_objective: Vec<(f64, f64)>,
}

pub fn aggregate(args: AggregateArgs, file: FileConfig, seed_flag: Option<u64>, out: &Path) -> Result<Outcome> {
    let sec = file.aggregate.unwrap_or_default();
    let master = pick(seed_flag, file.seed, || 0);
    let data = require(args.data.or(sec.data), "--data")?;
    let roms_dir = require(args.roms.or(sec.roms), "--roms")?;
    let kind = pick(args.mixture, sec.mixture, || MixtureKind::RbfPair);
    // the forest seed always derives from the master seed
    let forest_file = sec.forest.unwrap_or_default();
    let forest_seed = seed::named(master, &format!("forest-{kind}"));
    let forest = ForestConfig {
        seed: forest_seed,
        ..forest_file.clone()
    };

    let raw = load_data(&data)?;
    let split: SplitIndices = read_json(&roms_dir.join("split.json"))?;
    let entries: Vec<TrainedEntry> = read_json(&roms_dir.join("models.json"))?;
    if split.train.len() + split.eval.len() + split.test.len() != raw.len() {
        bail!("{} does not match the split in {}", data.display(), roms_dir.display());
    }
    let set = raw.normalize(&split.train)?;
    let norm = set.norm.clone().expect("normalized set");

    let mut roms = Vec::new();
    for e in entries.iter().filter(|e| e.failure.is_none()) {
        let dir = roms_dir.join("roms").join(&e.name);
        roms.push(Rom::load(&dir).with_context(|| format!("loading {}", dir.display()))?);
    }
    let mut eval_norm = Vec::new();
    let mut eval_mean = BTreeMap::new();
    for rom in &roms {
        let preds = split
            .eval
            .iter()
            .map(|&i| rom.predict_normalized(&set.params[i]))
            .collect::<romix::Result<Vec<_>>>()?;
        let mut total = 0.0;
        for (p, &i) in preds.iter().zip(&split.eval) {
            total += relative_error(&norm.invert(p), &raw.fields[i])?.value;
        }
        eval_mean.insert(rom.name(), total / split.eval.len() as f64);
        eval_norm.push(preds);
    }
    let mut picked: Vec<usize> = match kind {
        MixtureKind::RbfPair => (0..roms.len()).filter(|&j| roms[j].spec.approx == ApproxKind::Rbf).collect(),
        MixtureKind::TwoBest => {
            let mut idx: Vec<usize> = (0..roms.len()).collect();
            idx.sort_by(|&a, &b| eval_mean[&roms[a].name()].total_cmp(&eval_mean[&roms[b].name()]).then(a.cmp(&b)));
            idx.truncate(2);
            idx
        }
    };
    picked.sort_unstable();
    if picked.len() < 2 {
        bail!("mixture {kind} needs two trained components, found {}", picked.len());
    }
    let samples: Vec<EvalSample> = split
        .eval
        .iter()
        .enumerate()
        .map(|(k, &i)| EvalSample {
            mu: set.params[i].clone(),
            truth: set.fields[i].clone(),
            preds: picked.iter().map(|&j| eval_norm[j][k].clone()).collect(),
        })
        .collect();
    let components: Vec<Rom> = picked.iter().map(|&j| roms[j].clone()).collect();
    let (mix, search) = MixtureModel::fit(components, &samples, &set.grid, &forest)?;

    create_out(out)?;
    mix.save(&out.join("mixture"))?;
    write_json(
        &out.join("summary.json"),
        &MixtureSummary {
            kind,
            components: mix.names(),
            eval_mean,
            sigma_opt: search.sigma,
            sigma_objective: search.objective,
        },
    )?;
    FileConfig {
        seed: Some(master),
        aggregate: Some(AggregateSection {
            data: Some(data),
            roms: Some(roms_dir),
            mixture: Some(kind),
            forest: Some(forest_file),
        }),
        ..FileConfig::default()
    }
    .write(out)?;
    let mut manifest = Manifest::new("aggregate", master);
    manifest.seeds.insert(format!("forest-{kind}"), forest_seed);
    manifest.outputs.extend(["mixture".into(), "summary.json".into()]);
    manifest.write(out)?;
    Ok(Outcome::default())
}

pub struct ReportArgs {
    pub case: Option<CaseKind>,
    pub n: Option<usize>,
    pub nx: Option<usize>,
    pub latent_dim: Option<usize>,
    pub models: Option<Vec<String>>,
    pub mixtures: Option<Vec<MixtureKind>>,
}

pub fn report(args: ReportArgs, file: FileConfig, seed_flag: Option<u64>, out: &Path) -> Result<Outcome> {
    let sec = file.report.unwrap_or_default();
    let master = pick(seed_flag, file.seed, || 0);
    let kind = require(args.case.or(sec.case), "--case")?;
    let mut case = CaseSpec::new(kind, pick(args.nx, sec.nx, || DEFAULT_NX), seed::named(master, "dataset"));
    case.ny = sec.ny.unwrap_or(0);
    case.n_snapshots = pick(args.n, sec.n, || DEFAULT_N);
    case.noise = sec.noise.unwrap_or(0.0);
    case.param_range = sec.param_range.unwrap_or(case.param_range);
    let r = pick(args.latent_dim, sec.latent_dim, || DEFAULT_LATENT_DIM);
    let mut cfg = ExperimentConfig::new(case, r, master);
    cfg.models = pick(args.models, sec.models, || cfg.models.clone());
    cfg.mixtures = pick(args.mixtures, sec.mixtures, || cfg.mixtures.clone());
    cfg.n_train = sec.n_train.unwrap_or(cfg.n_train);
    cfg.n_eval = sec.n_eval.unwrap_or(cfg.n_eval);
    cfg.n_test = sec.n_test.unwrap_or(cfg.n_test);
    cfg.hyper = sec.hyper.unwrap_or_else(HyperConfig::default);
    cfg.forest = sec.forest.unwrap_or_default();
    parse_models(&cfg.models)?;

    let exp = run_experiment(&cfg)?;
    emit_report(&exp, out)?;

    let mut outcome = Outcome::default();
    for m in &exp.report.models {
        if let Some(msg) = &m.failure {
            outcome.failures.push(format!("{}: {msg}", m.name));
        }
    }
    for m in &exp.report.mixtures {
        if let Some(msg) = &m.failure {
            outcome.failures.push(format!("mixture {}: {msg}", m.kind));
        }
    }
    FileConfig {
        seed: Some(master),
        report: Some(ReportSection {
            case: Some(kind),
            n: Some(cfg.case.n_snapshots),
            nx: Some(cfg.case.nx),
            ny: Some(cfg.case.ny),
            param_range: Some(cfg.case.param_range),
            noise: Some(cfg.case.noise),
            latent_dim: Some(r),
            models: Some(cfg.models.clone()),
            mixtures: Some(cfg.mixtures.clone()),
            n_train: Some(cfg.n_train),
            n_eval: Some(cfg.n_eval),
            n_test: Some(cfg.n_test),
            hyper: Some(cfg.hyper.clone()),
            forest: Some(cfg.forest.clone()),
        }),
        ..FileConfig::default()
    }
    .write(out)?;
    let seeds = &exp.report.seeds;
    let mut manifest = Manifest::new("report", master);
    manifest.seeds.insert("dataset".into(), seeds.case);
    manifest.seeds.insert("split".into(), seeds.split);
    for (k, v) in &seeds.reducers {
        manifest.seeds.insert(format!("reducer-{k}"), *v);
    }
    for (k, v) in &seeds.maps {
        manifest.seeds.insert(format!("map-{k}"), *v);
    }
    for (k, v) in &seeds.forests {
        manifest.seeds.insert(format!("forest-{k}"), *v);
    }
    let mut outputs: Vec<String> = fs::read_dir(out)?
        .filter_map(|e| e.ok())
        .map(|e| e.file_name().to_string_lossy().into_owned())
        .filter(|n| n != "manifest.json")
        .collect();
    outputs.sort();
    manifest.outputs = outputs;
    manifest.write(out)?;
    Ok(outcome)
}
