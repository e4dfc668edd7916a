//! Subcommand bodies. Each writes its artifacts under `cfg.out`, then a
//! manifest, and returns every path it wrote (manifest last).

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use socialcircle::causal::{divergence, intervene_all, DivergenceReport, InterventionSpec};
use socialcircle::eval::{evaluate_cases, run_ablation, sample_seed, AblationData, AblationEntry};
use socialcircle::predictor::{
    curve_csv, load_params, save_params, train as fit, EpochLoss, Model, ModelConfig, ParamCount,
    Prepared,
};
use socialcircle::rng::derive_seed;
use socialcircle::segmap::{fit_calibration, load_environment, AffineCalib, Environment};
use socialcircle::trajdata::{build_samples, leave_one_out_splits, generate_synthetic, load_annotations, Case};
use socialcircle::Vec2;
use socialcircle_playground::Registry;

use crate::dataset::{self, split_round_robin, Dataset, Splits, DATASET_FILE};
use crate::manifest::{write_json, write_manifest, write_text};
use crate::plot;
use crate::{CliError, Result, RunConfig};

pub const MODEL_FILE: &str = "model.params";
pub const LOSS_FILE: &str = "loss.csv";

pub fn default_data(cfg: &RunConfig) -> PathBuf {
    cfg.out.join(DATASET_FILE)
}

pub fn default_model(cfg: &RunConfig) -> PathBuf {
    cfg.out.join(MODEL_FILE)
}

fn finish(cfg: &RunConfig, command: &str, inputs: &[(&str, &Path)], mut written: Vec<PathBuf>) -> Result<Vec<PathBuf>> {
    let manifest = write_manifest(cfg, command, inputs, &written)?;
    written.push(manifest);
    Ok(written)
}

fn named_env(name: String, env: &Environment) -> Option<String> {
    (*env != Environment::open()).then_some(name)
}

/// Generates the configured synthetic scenario kinds and splits them.
pub fn synth(cfg: &RunConfig) -> Result<Vec<PathBuf>> {
    let s = &cfg.data.synth;
    if s.kinds.is_empty() || s.per_kind == 0 {
        return Err(CliError::config("data.synth", "needs at least one kind and per_kind >= 1"));
    }
    let mut all = Vec::new();
    for (i, kind) in s.kinds.iter().enumerate() {
        let scene = generate_synthetic(
            *kind,
            s.per_kind,
            derive_seed(cfg.seed, &[0x5e, i as u64]),
            &cfg.data.sample,
            &s.generator,
        );
        let name = named_env(format!("synthetic-{kind}"), &scene.env);
        all.extend(scene.cases().into_iter().map(|c| (name.clone(), c)));
    }
    let (train, val, test) = split_round_robin(all, cfg.data.test_every, cfg.data.val_every);
    log::info!("synth: {} train, {} val, {} test", train.len(), val.len(), test.len());
    let written = dataset::write(&cfg.out, cfg.data.sample, &Splits { train, val, test })?;
    finish(cfg, "synth", &[], written)
}

/// Reads annotation clips (with optional maps) and splits them.
pub fn ingest(cfg: &RunConfig) -> Result<Vec<PathBuf>> {
    let d = &cfg.data;
    if d.clips.is_empty() {
        return Err(CliError::config("data.clips", "no annotation clips configured"));
    }
    let mut clips = Vec::new();
    let mut per_clip: Vec<(String, Vec<(Option<String>, Case)>)> = Vec::new();
    for src in &d.clips {
        let clip = load_annotations(&src.path, src.unit).map_err(|e| CliError::io(&src.path, e))?;
        let env = match &src.map {
            Some(stem) => {
                let dir = stem.parent().unwrap_or(Path::new("."));
                let name = stem
                    .file_name()
                    .and_then(|s| s.to_str())
                    .ok_or_else(|| CliError::config("data.clips.map", format!("bad stem {}", stem.display())))?;
                let mut env = load_environment(dir, name).map_err(|e| CliError::io(stem, e))?;
                if let Some(c) = src.calib {
                    env.calib = AffineCalib::from_array(c).map_err(|e| CliError::config("data.clips.calib", e.to_string()))?;
                }
                env
            }
            None if src.calib.is_some() => {
                return Err(CliError::config("data.clips.calib", "calibration given without a map"));
            }
            None => Environment::open(),
        };
        let env = Arc::new(env);
        let name = named_env(clip.clip_id.clone(), &env);
        let built = build_samples(&clip, &d.sample, d.stride);
        log::info!(
            "{}: {} samples, {} agents skipped",
            clip.clip_id,
            built.samples.len(),
            built.skipped_agents
        );
        per_clip.push((
            clip.clip_id.clone(),
            built
                .samples
                .into_iter()
                .map(|s| (name.clone(), Case::new(s, Arc::clone(&env))))
                .collect(),
        ));
        clips.push(clip);
    }
    let splits = match &d.held_out {
        Some(held) => {
            let val: Vec<&str> = d.val_clips.iter().map(String::as_str).collect();
            let plan = leave_one_out_splits(&clips, held)
                .and_then(|p| p.with_validation(&val))
                .map_err(|e| CliError::config("data.held_out", e.to_string()))?;
            let mut splits = Splits::default();
            for (id, cases) in per_clip {
                let target = if plan.test.contains(&id) {
                    &mut splits.test
                } else if plan.val.contains(&id) {
                    &mut splits.val
                } else {
                    &mut splits.train
                };
                target.extend(cases);
            }
            splits
        }
        None => {
            let all: Vec<_> = per_clip.into_iter().flat_map(|(_, c)| c).collect();
            let (train, val, test) = split_round_robin(all, d.test_every, d.val_every);
            Splits { train, val, test }
        }
    };
    let written = dataset::write(&cfg.out, d.sample, &splits)?;
    let inputs: Vec<(&str, &Path)> = d.clips.iter().map(|c| ("clip", c.path.as_path())).collect();
    finish(cfg, "ingest", &inputs, written)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CalibrationReport {
    /// `(w_x, w_y, b_x, b_y)`
    pub calib: [f64; 4],
    pub rms: f64,
    pub pairs: usize,
}

/// Reads `sx,sy,px,py` rows; a non-numeric first row is a header.
pub fn read_pairs(path: &Path) -> Result<Vec<(Vec2, Vec2)>> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| CliError::io(path, e))?;
    let mut pairs = Vec::new();
    for (i, rec) in reader.records().enumerate() {
        let rec = rec.map_err(|e| CliError::format(path, e))?;
        let nums: Vec<Option<f64>> = rec.iter().map(|f| f.parse().ok()).collect();
        if i == 0 && nums.iter().any(Option::is_none) {
            continue;
        }
        match nums.as_slice() {
            [Some(sx), Some(sy), Some(px), Some(py)] => {
                pairs.push((Vec2::new(*sx, *sy), Vec2::new(*px, *py)));
            }
            _ => {
                return Err(CliError::format(
                    path,
                    format!("row {}: expected four numbers sx,sy,px,py", i + 1),
                ))
            }
        }
    }
    Ok(pairs)
}

pub fn calibrate(cfg: &RunConfig, pairs_path: &Path) -> Result<Vec<PathBuf>> {
    let pairs = read_pairs(pairs_path)?;
    let fit = fit_calibration(&pairs).map_err(|e| CliError::format(pairs_path, e))?;
    let report = CalibrationReport {
        calib: fit.calib.to_array(),
        rms: fit.rms,
        pairs: pairs.len(),
    };
    let path = cfg.out.join("calibration.json");
    write_json(&path, &report)?;
    finish(cfg, "calibrate", &[("pairs", pairs_path)], vec![path])
}

/// Model settings for a dataset, checking the horizons agree.
fn model_config_for(cfg: &RunConfig, data: &Dataset) -> Result<ModelConfig> {
    if data.spec.t_h != cfg.data.sample.t_h || data.spec.t_f != cfg.data.sample.t_f {
        return Err(CliError::config(
            "data.sample",
            format!(
                "dataset has t_h={} t_f={}, config has t_h={} t_f={}",
                data.spec.t_h, data.spec.t_f, cfg.data.sample.t_h, cfg.data.sample.t_f
            ),
        ));
    }
    Ok(cfg.model_config())
}

fn prepare(model: &Model, cases: &[Case]) -> Vec<Prepared> {
    cases.par_iter().map(|c| model.prepare(c)).collect()
}

#[derive(Debug, Clone, Serialize)]
pub struct TrainSummary {
    pub epochs: usize,
    pub n_train: usize,
    pub n_val: usize,
    pub final_train_loss: Option<f64>,
    pub final_val_loss: Option<f64>,
    pub params: ParamCount,
}

pub fn train(cfg: &RunConfig, data_path: &Path) -> Result<Vec<PathBuf>> {
    let data = dataset::read(data_path)?;
    let mc = model_config_for(cfg, &data)?;
    let init = Model::init(mc, cfg.seed).map_err(|e| CliError::config("model", e.to_string()))?;
    let train = prepare(&init, &data.train);
    let val = prepare(&init, &data.val);
    let outcome = fit(&init, &train, &val, &cfg.train.options(cfg.seed)).map_err(|e| CliError::model("train", e))?;

    let model_path = default_model(cfg);
    std::fs::create_dir_all(&cfg.out).map_err(|e| CliError::io(&cfg.out, e))?;
    let file = std::fs::File::create(&model_path).map_err(|e| CliError::io(&model_path, e))?;
    save_params(&outcome.model, cfg.seed, std::io::BufWriter::new(file)).map_err(|e| CliError::io(&model_path, e))?;
    let loss_path = cfg.out.join(LOSS_FILE);
    write_text(&loss_path, &curve_csv(&outcome.curve))?;
    let last = outcome.curve.last();
    let summary = TrainSummary {
        epochs: cfg.train.epochs,
        n_train: train.len(),
        n_val: val.len(),
        final_train_loss: last.map(|e| e.train),
        final_val_loss: last.and_then(|e| e.val),
        params: outcome.model.param_count(),
    };
    let summary_path = cfg.out.join("train.json");
    write_json(&summary_path, &summary)?;
    finish(cfg, "train", &[("data", data_path)], vec![model_path, loss_path, summary_path])
}

/// Where a command's model comes from.
#[derive(Debug, Clone)]
pub enum ModelSource {
    File(PathBuf),
    /// All-zero parameters with the configured architecture.
    Untrained,
}

impl ModelSource {
    pub fn load(&self, cfg: &RunConfig) -> Result<Model> {
        match self {
            ModelSource::File(path) => {
                let file = std::fs::File::open(path).map_err(|e| CliError::io(path, e))?;
                let (model, _) = load_params(std::io::BufReader::new(file)).map_err(|e| CliError::format(path, e))?;
                Ok(model)
            }
            ModelSource::Untrained => {
                Model::zeros(cfg.model_config()).map_err(|e| CliError::config("model", e.to_string()))
            }
        }
    }

    fn input(&self) -> Option<(&'static str, &Path)> {
        match self {
            ModelSource::File(p) => Some(("model", p.as_path())),
            ModelSource::Untrained => None,
        }
    }
}

fn check_horizons(model: &Model, data: &Dataset) -> Result<()> {
    if model.config.t_h != data.spec.t_h || model.config.t_f != data.spec.t_f {
        return Err(CliError::config(
            "model.t_h",
            format!(
                "model expects t_h={} t_f={}, dataset has t_h={} t_f={}",
                model.config.t_h, model.config.t_f, data.spec.t_h, data.spec.t_f
            ),
        ));
    }
    Ok(())
}

pub fn eval(cfg: &RunConfig, data_path: &Path, source: &ModelSource) -> Result<Vec<PathBuf>> {
    let data = dataset::read(data_path)?;
    let model = source.load(cfg)?;
    check_horizons(&model, &data)?;
    if data.test.is_empty() {
        return Err(CliError::config("data.test_every", "dataset has no test samples"));
    }
    let report = evaluate_cases(&model, &data.test, cfg.eval.k, cfg.seed).map_err(|e| CliError::model("eval", e))?;
    log::info!("eval: ade {:.4} fde {:.4} over {}", report.ade, report.fde, report.n_samples);
    let json = cfg.out.join("metrics.json");
    let csv = cfg.out.join("metrics.csv");
    write_json(&json, &report)?;
    write_text(&csv, &report.to_csv())?;
    let mut inputs = vec![("data", data_path)];
    inputs.extend(source.input());
    finish(cfg, "eval", &inputs, vec![json, csv])
}

pub fn ablate(cfg: &RunConfig, data_path: &Path) -> Result<Vec<PathBuf>> {
    let data = dataset::read(data_path)?;
    let base = model_config_for(cfg, &data)?;
    let a = &cfg.ablate;
    let grid: Vec<AblationEntry> = a
        .grid
        .iter()
        .map(|g| {
            let mut config = base;
            if let Some(v) = g.variant {
                config.variant = v;
            }
            if let Some(f) = g.fusion {
                config.fusion = f;
            }
            if let Some(n) = g.n_theta {
                config.circle.n_theta = n;
            }
            if let Some(m) = g.meta_mask {
                config.meta_mask = m;
            }
            config
                .validate()
                .map_err(|e| CliError::config("ablate.grid", format!("{}: {e}", g.label)))?;
            Ok(AblationEntry {
                label: g.label.clone(),
                config,
            })
        })
        .collect::<Result<_>>()?;
    let split = AblationData {
        train: data.train,
        val: data.val,
        test: data.test,
    };
    let table = run_ablation(&grid, &split, &a.seeds, &cfg.train.options(cfg.seed), cfg.eval.k, &a.baseline)
        .map_err(|e| CliError::model("ablate", e))?;
    let json = cfg.out.join("ablation.json");
    let csv = cfg.out.join("ablation.csv");
    let md = cfg.out.join("ablation.md");
    write_json(&json, &table)?;
    write_text(&csv, &table.to_csv())?;
    write_text(&md, &table.to_markdown())?;
    finish(cfg, "ablate", &[("data", data_path)], vec![json, csv, md])
}

/// Intervention lists keyed by sample id; `"*"` applies to every test
/// sample and runs before any sample-specific entries.
pub type Scenario = BTreeMap<String, Vec<InterventionSpec>>;

pub fn read_scenario(path: &Path) -> Result<Scenario> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| CliError::format(path, e))
}

/// Cases a scenario touches, in a fixed order, with their spec lists.
fn scenario_cases<'a>(scenario: &Scenario, data: &'a Dataset) -> Result<Vec<(&'a Case, Vec<InterventionSpec>)>> {
    let by_id: BTreeMap<&str, &Case> = data.all().map(|c| (c.sample.id.as_str(), c)).collect();
    let wildcard = scenario.get("*").cloned().unwrap_or_default();
    let mut chosen: Vec<&Case> = if scenario.contains_key("*") {
        data.test.iter().collect()
    } else {
        Vec::new()
    };
    for id in scenario.keys().filter(|k| *k != "*") {
        let case = by_id
            .get(id.as_str())
            .ok_or_else(|| CliError::config("intervene.scenario", format!("unknown sample id {id:?}")))?;
        if !chosen.iter().any(|c| c.sample.id == *id) {
            chosen.push(case);
        }
    }
    Ok(chosen
        .into_iter()
        .map(|c| {
            let mut specs = wildcard.clone();
            specs.extend(scenario.get(&c.sample.id).cloned().unwrap_or_default());
            (c, specs)
        })
        .collect())
}

#[derive(Debug, Clone, Serialize)]
pub struct SampleEffect {
    pub id: String,
    pub specs: Vec<&'static str>,
    pub divergence: DivergenceReport,
}

#[derive(Debug, Clone, Serialize)]
pub struct InterventionSummary {
    pub n_samples: usize,
    pub mean_displacement: f64,
    pub max_displacement: f64,
    /// Means over samples with ground truth.
    pub ade_before: Option<f64>,
    pub ade_after: Option<f64>,
    pub fde_before: Option<f64>,
    pub fde_after: Option<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct InterventionReport {
    pub k: usize,
    pub seed: u64,
    pub summary: InterventionSummary,
    pub samples: Vec<SampleEffect>,
}

fn summarize(samples: &[SampleEffect]) -> InterventionSummary {
    let n = samples.len().max(1) as f64;
    let with_truth: Vec<_> = samples.iter().filter_map(|s| s.divergence.metrics.as_ref()).collect();
    let m = with_truth.len() as f64;
    let mean = |f: &dyn Fn(&socialcircle::causal::MetricShift) -> f64| {
        (!with_truth.is_empty()).then(|| with_truth.iter().map(|x| f(x)).sum::<f64>() / m)
    };
    InterventionSummary {
        n_samples: samples.len(),
        mean_displacement: samples.iter().map(|s| s.divergence.mean_displacement).sum::<f64>() / n,
        max_displacement: samples.iter().map(|s| s.divergence.max_displacement).fold(0.0, f64::max),
        ade_before: mean(&|x| x.ade_before),
        ade_after: mean(&|x| x.ade_after),
        fde_before: mean(&|x| x.fde_before),
        fde_after: mean(&|x| x.fde_after),
    }
}

pub fn intervene(cfg: &RunConfig, data_path: &Path, source: &ModelSource, scenario_path: &Path) -> Result<Vec<PathBuf>> {
    let data = dataset::read(data_path)?;
    let model = source.load(cfg)?;
    check_horizons(&model, &data)?;
    let scenario = read_scenario(scenario_path)?;
    let k = cfg.intervene.k;
    let samples = scenario_cases(&scenario, &data)?
        .par_iter()
        .map(|(case, specs)| {
            let seed = sample_seed(cfg.seed, &case.sample.id);
            let out = intervene_all(&model, case, specs, k, seed)
                .map_err(|e| CliError::config("intervene.scenario", format!("{}: {e}", case.sample.id)))?;
            let truth = case.sample.has_future().then_some(case.sample.future.as_slice());
            let div = divergence(&out.factual.y, &out.counterfactual.y, truth)
                .map_err(|e| CliError::model(case.sample.id.clone(), e))?;
            Ok(SampleEffect {
                id: case.sample.id.clone(),
                specs: specs.iter().map(InterventionSpec::name).collect(),
                divergence: div,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let report = InterventionReport {
        k,
        seed: cfg.seed,
        summary: summarize(&samples),
        samples,
    };
    log::info!(
        "intervene: {} samples, mean divergence {:.4}",
        report.summary.n_samples,
        report.summary.mean_displacement
    );
    let json = cfg.out.join("interventions.json");
    let csv = cfg.out.join("interventions.csv");
    write_json(&json, &report)?;
    let mut text = String::from("sample,specs,mean_displacement,max_displacement,ade_before,ade_after,fde_before,fde_after\n");
    for s in &report.samples {
        let d = &s.divergence;
        let m = |f: fn(&socialcircle::causal::MetricShift) -> f64| d.metrics.as_ref().map_or(String::new(), |x| f(x).to_string());
        text.push_str(&format!(
            "{},{},{},{},{},{},{},{}\n",
            s.id,
            s.specs.join("+"),
            d.mean_displacement,
            d.max_displacement,
            m(|x| x.ade_before),
            m(|x| x.ade_after),
            m(|x| x.fde_before),
            m(|x| x.fde_after)
        ));
    }
    write_text(&csv, &text)?;
    let mut inputs = vec![("data", data_path), ("scenario", scenario_path)];
    inputs.extend(source.input());
    finish(cfg, "intervene", &inputs, vec![json, csv])
}

/// Parses the CSV written by `train`.
pub fn read_curve(path: &Path) -> Result<Vec<EpochLoss>> {
    let mut reader = csv::Reader::from_path(path).map_err(|e| CliError::io(path, e))?;
    reader
        .records()
        .map(|rec| {
            let rec = rec.map_err(|e| CliError::format(path, e))?;
            let num = |i: usize| rec.get(i).filter(|s| !s.is_empty()).map(str::parse::<f64>);
            let bad = || CliError::format(path, format!("bad row {:?}", rec));
            Ok(EpochLoss {
                epoch: rec.get(0).and_then(|s| s.parse().ok()).ok_or_else(bad)?,
                train: num(1).and_then(|r| r.ok()).ok_or_else(bad)?,
                val: num(2).transpose().map_err(|_| bad())?,
            })
        })
        .collect()
}

/// What `plot` should draw.
#[derive(Debug, Clone, Default)]
pub struct PlotRequest {
    pub data: Option<PathBuf>,
    pub model: Option<ModelSource>,
    pub scenario: Option<PathBuf>,
    pub curve: Option<PathBuf>,
}

pub fn plot(cfg: &RunConfig, req: &PlotRequest) -> Result<Vec<PathBuf>> {
    let mut written = Vec::new();
    let mut inputs: Vec<(&str, &Path)> = Vec::new();
    if let Some(scenario_path) = &req.scenario {
        let data_path = req.data.clone().unwrap_or_else(|| default_data(cfg));
        let source = req
            .model
            .clone()
            .unwrap_or_else(|| ModelSource::File(default_model(cfg)));
        let data = dataset::read(&data_path)?;
        let model = source.load(cfg)?;
        check_horizons(&model, &data)?;
        let scenario = read_scenario(scenario_path)?;
        let mut chosen = scenario_cases(&scenario, &data)?;
        if scenario.contains_key("*") {
            let explicit: Vec<_> = chosen.split_off(data.test.len().min(chosen.len()));
            chosen.truncate(cfg.intervene.plot_limit);
            chosen.extend(explicit);
        }
        for (case, specs) in chosen {
            let seed = sample_seed(cfg.seed, &case.sample.id);
            let out = intervene_all(&model, case, &specs, cfg.intervene.k, seed)
                .map_err(|e| CliError::config("intervene.scenario", format!("{}: {e}", case.sample.id)))?;
            let svg = plot::scene_svg(&case.sample, &out.factual.y, &out.counterfactual.y, &out.manual_tracks);
            let name: String = case
                .sample
                .id
                .chars()
                .map(|c| if c.is_ascii_alphanumeric() || c == '-' { c } else { '_' })
                .collect();
            let path = cfg.out.join("plots").join(format!("{name}.svg"));
            write_text(&path, &svg)?;
            written.push(path);
        }
        inputs.push(("scenario", scenario_path.as_path()));
    }
    let curve = req.curve.clone().or_else(|| {
        let p = cfg.out.join(LOSS_FILE);
        p.exists().then_some(p)
    });
    if let Some(curve_path) = &curve {
        let svg = plot::loss_svg(&read_curve(curve_path)?);
        let path = cfg.out.join("plots").join("loss.svg");
        write_text(&path, &svg)?;
        written.push(path);
    }
    if written.is_empty() {
        return Err(CliError::config("intervene.scenario", "nothing to plot: give --scenario or --curve"));
    }
    let curve_input = curve.as_deref();
    if let Some(c) = curve_input {
        inputs.push(("curve", c));
    }
    finish(cfg, "plot", &inputs, written)
}

/// Loads models and dataset cases into a playground registry.
pub fn registry(models: &[(String, PathBuf)], data: Option<&Path>) -> Result<Registry> {
    let mut reg = Registry::default();
    for (name, path) in models {
        let file = std::fs::File::open(path).map_err(|e| CliError::io(path, e))?;
        let (model, _) = load_params(std::io::BufReader::new(file)).map_err(|e| CliError::format(path, e))?;
        reg = reg.with_model(name.clone(), model);
    }
    if let Some(path) = data {
        let data = dataset::read(path)?;
        reg = reg.with_cases(data.all().cloned().collect::<Vec<_>>());
    }
    Ok(reg)
}
