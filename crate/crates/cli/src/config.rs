//! Run configuration: a TOML file plus `--set key=value` overrides and a few
//! dedicated flags, resolved into one [`RunConfig`].

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use socialcircle::circle::FusionMode;
use socialcircle::predictor::{ModelConfig, TrainOptions, Variant};
use socialcircle::trajdata::{SampleSpec, ScenarioKind, SynthConfig, Unit};
use toml::{Table, Value};

use crate::{CliError, Result};

/// Fully resolved settings of one command invocation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    /// Output directory. Not echoed into manifests so that runs into
    /// different directories stay byte-comparable.
    #[serde(default = "default_out", skip_serializing)]
    pub out: PathBuf,
    #[serde(default)]
    pub data: DataConfig,
    #[serde(default)]
    pub model: ModelConfig,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default)]
    pub eval: EvalConfig,
    #[serde(default)]
    pub ablate: AblateConfig,
    #[serde(default)]
    pub intervene: InterveneConfig,
    #[serde(default)]
    pub serve: ServeConfig,
}

fn default_out() -> PathBuf {
    PathBuf::from("out")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    pub sample: SampleSpec,
    /// Every n-th sample goes to the test split (synthetic data, or
    /// annotations without a held-out clip). 0 disables.
    pub test_every: usize,
    /// Every n-th remaining sample goes to validation. 0 disables.
    pub val_every: usize,
    pub synth: SynthSection,
    pub clips: Vec<ClipSource>,
    /// Leave-one-out: this clip becomes the test split.
    pub held_out: Option<String>,
    /// Clips moved from train to validation under leave-one-out.
    pub val_clips: Vec<String>,
    pub stride: usize,
}

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig {
            sample: SampleSpec::default(),
            test_every: 5,
            val_every: 0,
            synth: SynthSection::default(),
            clips: Vec::new(),
            held_out: None,
            val_clips: Vec::new(),
            stride: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthSection {
    pub kinds: Vec<ScenarioKind>,
    /// Scenarios generated per kind.
    pub per_kind: usize,
    pub generator: SynthConfig,
}

impl Default for SynthSection {
    fn default() -> Self {
        SynthSection {
            kinds: vec![ScenarioKind::Obstacle, ScenarioKind::Crossing],
            per_kind: 250,
            generator: SynthConfig::default(),
        }
    }
}

/// One annotation file to ingest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClipSource {
    pub path: PathBuf,
    #[serde(default = "default_unit")]
    pub unit: Unit,
    /// Map stem: `<map>.pgm` plus `<map>.map.json`.
    pub map: Option<PathBuf>,
    /// `(w_x, w_y, b_x, b_y)`; replaces the calibration stored with the map.
    pub calib: Option<[f64; 4]>,
}

fn default_unit() -> Unit {
    Unit::Meters
}

/// Training hyperparameters; the seed comes from the top level.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub lr: f64,
    pub batch_size: usize,
    pub k_train: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 700,
            lr: 3e-3,
            batch_size: 8,
            k_train: 20,
        }
    }
}

impl TrainConfig {
    pub fn options(&self, seed: u64) -> TrainOptions {
        TrainOptions {
            epochs: self.epochs,
            lr: self.lr,
            batch_size: self.batch_size,
            seed,
            k_train: self.k_train,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    pub k: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig { k: 20 }
    }
}

/// One ablation row; unset fields keep the `[model]` value.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridEntry {
    pub label: String,
    pub variant: Option<Variant>,
    pub fusion: Option<FusionMode>,
    pub n_theta: Option<usize>,
    pub meta_mask: Option<[bool; 3]>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AblateConfig {
    pub seeds: Vec<u64>,
    pub baseline: String,
    pub grid: Vec<GridEntry>,
}

impl Default for AblateConfig {
    fn default() -> Self {
        let row = |label: &str, variant| GridEntry {
            label: label.into(),
            variant: Some(variant),
            fusion: None,
            n_theta: None,
            meta_mask: None,
        };
        AblateConfig {
            seeds: vec![0, 1, 2, 3, 4],
            baseline: "none".into(),
            grid: vec![
                row("none", Variant::None),
                row("social", Variant::Social),
                row("social_plus", Variant::SocialPlus),
            ],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InterveneConfig {
    pub scenario: Option<PathBuf>,
    pub k: usize,
    /// Samples drawn by `plot` when the scenario only has a `"*"` entry.
    pub plot_limit: usize,
}

impl Default for InterveneConfig {
    fn default() -> Self {
        InterveneConfig {
            scenario: None,
            k: 20,
            plot_limit: 6,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ServeConfig {
    pub addr: String,
    pub ui_dir: Option<PathBuf>,
}

impl Default for ServeConfig {
    fn default() -> Self {
        ServeConfig {
            addr: "127.0.0.1:8080".into(),
            ui_dir: None,
        }
    }
}

/// Parses `value` as a TOML literal, falling back to a plain string.
fn parse_value(raw: &str) -> Value {
    let doc = format!("v = {raw}");
    match doc.parse::<Table>() {
        Ok(mut t) => t.remove("v").unwrap_or_else(|| Value::String(raw.into())),
        Err(_) => Value::String(raw.into()),
    }
}

/// Sets a dotted `key` in `table`, creating intermediate tables.
pub fn apply_override(table: &mut Table, key: &str, value: Value) -> Result<()> {
    let parts: Vec<&str> = key.split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err(CliError::config(key, "empty path segment"));
    }
    let (last, parents) = parts.split_last().expect("split yields one part");
    let mut cur = table;
    for (i, p) in parents.iter().enumerate() {
        let entry = cur
            .entry(p.to_string())
            .or_insert_with(|| Value::Table(Table::new()));
        cur = entry.as_table_mut().ok_or_else(|| {
            CliError::config(&parts[..=i].join("."), "is not a table")
        })?;
    }
    cur.insert(last.to_string(), value);
    Ok(())
}

/// Parses `key=value`.
pub fn parse_set(arg: &str) -> Result<(String, Value)> {
    let (k, v) = arg
        .split_once('=')
        .ok_or_else(|| CliError::config(arg, "--set expects key=value"))?;
    Ok((k.trim().to_string(), parse_value(v.trim())))
}

/// Field named by a missing or unknown field error; the error path stops at
/// the enclosing table for those.
fn error_key(msg: &str) -> Option<String> {
    ["missing field `", "unknown field `", "duplicate field `"]
        .iter()
        .find_map(|prefix| msg.split(prefix).nth(1))
        .and_then(|rest| rest.split('`').next())
        .map(str::to_string)
}

/// Reads the optional config file, applies `--set` overrides in order, then
/// `--seed` and `--out`, and deserializes.
pub fn load(
    file: Option<&Path>,
    sets: &[String],
    seed: Option<u64>,
    out: Option<&Path>,
) -> Result<RunConfig> {
    let mut table = match file {
        Some(path) => {
            let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
            text.parse::<Table>()
                .map_err(|e| CliError::config("<config>", format!("{}: {e}", path.display())))?
        }
        None => Table::new(),
    };
    for s in sets {
        let (k, v) = parse_set(s)?;
        apply_override(&mut table, &k, v)?;
    }
    if let Some(seed) = seed {
        let seed = i64::try_from(seed).map_err(|_| CliError::config("seed", "must fit in i64"))?;
        table.insert("seed".into(), Value::Integer(seed));
    }
    if let Some(out) = out {
        table.insert("out".into(), Value::String(out.display().to_string()));
    }
    if !table.contains_key("seed") {
        return Err(CliError::config("seed", "missing config key `seed` (set it in the file or pass --seed)"));
    }
    let cfg: RunConfig = serde_path_to_error::deserialize(Value::Table(table)).map_err(|e| {
        let path = e.path().to_string();
        let msg = e.inner().message().to_string();
        let key = match error_key(&msg) {
            Some(k) if path == "." => k,
            Some(k) if path == k || path.ends_with(&format!(".{k}")) => path,
            Some(k) => format!("{path}.{k}"),
            None => path,
        };
        CliError::config(&key, msg)
    })?;
    cfg.validate()?;
    Ok(cfg)
}

impl RunConfig {
    /// Cross-section consistency checks, reported with key names.
    pub fn validate(&self) -> Result<()> {
        self.data
            .sample
            .validate()
            .map_err(|e| CliError::config("data.sample", e.to_string()))?;
        self.model_config()
            .validate()
            .map_err(|e| CliError::config("model", e.to_string()))?;
        if self.eval.k == 0 {
            return Err(CliError::config("eval.k", "must be >= 1"));
        }
        if self.intervene.k == 0 {
            return Err(CliError::config("intervene.k", "must be >= 1"));
        }
        if self.data.stride == 0 {
            return Err(CliError::config("data.stride", "must be >= 1"));
        }
        for c in &self.data.clips {
            if !c.path.exists() {
                return Err(CliError::config(
                    "data.clips.path",
                    format!("{} does not exist", c.path.display()),
                ));
            }
        }
        if let Some(s) = &self.intervene.scenario {
            if !s.exists() {
                return Err(CliError::config(
                    "intervene.scenario",
                    format!("{} does not exist", s.display()),
                ));
            }
        }
        Ok(())
    }

    /// Model settings with horizons taken from the sample spec.
    pub fn model_config(&self) -> ModelConfig {
        ModelConfig {
            t_h: self.data.sample.t_h,
            t_f: self.data.sample.t_f,
            ..self.model
        }
    }
}
