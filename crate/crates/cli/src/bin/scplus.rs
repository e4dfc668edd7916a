use std::net::SocketAddr;
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};
use scplus::commands::{self, ModelSource, PlotRequest};
use scplus::{config, CliError, RunConfig};
use socialcircle_playground::AppState;

#[derive(Debug, Parser)]
#[command(name = "scplus", version, about = "Trajectory prediction with angle-partitioned interaction circles")]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct Common {
    /// TOML run configuration.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Seed for every random stream; required here or in the config.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory for artifacts and manifests.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Worker threads for batch parallelism; results do not depend on it.
    #[arg(long, global = true)]
    jobs: Option<usize>,
    /// Config override as a dotted key, e.g. `--set train.epochs=50`.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    sets: Vec<String>,
}

#[derive(Debug, Args)]
struct ModelArgs {
    /// Trained parameters; defaults to `<out>/model.params`.
    #[arg(long, conflicts_with = "untrained")]
    model: Option<PathBuf>,
    /// Use an all-zero model with the configured architecture.
    #[arg(long)]
    untrained: bool,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Build a dataset from annotation clips listed under `[data]`.
    Ingest,
    /// Generate a synthetic dataset.
    Synth,
    /// Fit a scene-to-pixel calibration from `sx,sy,px,py` pairs.
    Calibrate {
        #[arg(long)]
        pairs: PathBuf,
    },
    /// Train a model on the dataset's train split.
    Train {
        #[arg(long)]
        data: Option<PathBuf>,
    },
    /// Best-of-k metrics on the test split.
    Eval {
        #[arg(long)]
        data: Option<PathBuf>,
        #[command(flatten)]
        model: ModelArgs,
    },
    /// Train and evaluate every combination of the `[ablate]` grid.
    Ablate {
        #[arg(long)]
        data: Option<PathBuf>,
    },
    /// Apply a scenario of interventions and report divergences.
    Intervene {
        #[arg(long)]
        data: Option<PathBuf>,
        #[command(flatten)]
        model: ModelArgs,
        /// Scenario JSON; defaults to `intervene.scenario`.
        #[arg(long)]
        scenario: Option<PathBuf>,
    },
    /// SVG overlays for a scenario and the training loss curve.
    Plot {
        #[arg(long)]
        data: Option<PathBuf>,
        #[command(flatten)]
        model: ModelArgs,
        #[arg(long)]
        scenario: Option<PathBuf>,
        /// Loss CSV; defaults to `<out>/loss.csv` when present.
        #[arg(long)]
        curve: Option<PathBuf>,
    },
    /// Serve the playground API.
    Serve {
        #[arg(long)]
        data: Option<PathBuf>,
        /// `name=path`, repeatable; defaults to `default=<out>/model.params`.
        #[arg(long = "model", value_name = "NAME=PATH")]
        models: Vec<String>,
        /// Bind address; defaults to `serve.addr`.
        #[arg(long)]
        addr: Option<SocketAddr>,
        /// Static UI bundle; defaults to `serve.ui_dir`.
        #[arg(long)]
        ui_dir: Option<PathBuf>,
    },
}

fn model_source(cfg: &RunConfig, args: &ModelArgs) -> ModelSource {
    if args.untrained {
        ModelSource::Untrained
    } else {
        ModelSource::File(args.model.clone().unwrap_or_else(|| commands::default_model(cfg)))
    }
}

fn run(cli: Cli) -> Result<()> {
    let c = &cli.common;
    let cfg = config::load(c.config.as_deref(), &c.sets, c.seed, c.out.as_deref())?;
    if let Some(jobs) = c.jobs {
        rayon::ThreadPoolBuilder::new()
            .num_threads(jobs)
            .build_global()
            .context("configuring worker pool")?;
    }
    let data = |d: &Option<PathBuf>| d.clone().unwrap_or_else(|| commands::default_data(&cfg));
    let written = match &cli.command {
        Command::Ingest => commands::ingest(&cfg)?,
        Command::Synth => commands::synth(&cfg)?,
        Command::Calibrate { pairs } => commands::calibrate(&cfg, pairs)?,
        Command::Train { data: d } => commands::train(&cfg, &data(d))?,
        Command::Eval { data: d, model } => commands::eval(&cfg, &data(d), &model_source(&cfg, model))?,
        Command::Ablate { data: d } => commands::ablate(&cfg, &data(d))?,
        Command::Intervene { data: d, model, scenario } => {
            let scenario = scenario
                .clone()
                .or_else(|| cfg.intervene.scenario.clone())
                .ok_or_else(|| CliError::config("intervene.scenario", "no scenario file given"))?;
            commands::intervene(&cfg, &data(d), &model_source(&cfg, model), &scenario)?
        }
        Command::Plot { data: d, model, scenario, curve } => {
            let req = PlotRequest {
                data: Some(data(d)),
                model: Some(model_source(&cfg, model)),
                scenario: scenario.clone().or_else(|| cfg.intervene.scenario.clone()),
                curve: curve.clone(),
            };
            commands::plot(&cfg, &req)?
        }
        Command::Serve { data: d, models, addr, ui_dir } => return serve(&cfg, data(d), models, *addr, ui_dir.clone()),
    };
    for path in written {
        println!("{}", path.display());
    }
    Ok(())
}

fn serve(cfg: &RunConfig, data: PathBuf, models: &[String], addr: Option<SocketAddr>, ui_dir: Option<PathBuf>) -> Result<()> {
    let models: Vec<(String, PathBuf)> = if models.is_empty() {
        vec![("default".into(), commands::default_model(cfg))]
    } else {
        models
            .iter()
            .map(|m| {
                m.split_once('=')
                    .map(|(n, p)| (n.to_string(), PathBuf::from(p)))
                    .ok_or_else(|| CliError::config("model", format!("expected NAME=PATH, got {m:?}")))
            })
            .collect::<Result<_, _>>()?
    };
    let data = data.exists().then_some(data);
    let registry = commands::registry(&models, data.as_deref())?;
    let addr = match addr {
        Some(a) => a,
        None => cfg
            .serve
            .addr
            .parse()
            .map_err(|e| CliError::config("serve.addr", format!("{e}")))?,
    };
    let ui_dir = ui_dir.or_else(|| cfg.serve.ui_dir.clone());
    let rt = tokio::runtime::Runtime::new().context("starting runtime")?;
    rt.block_on(socialcircle_playground::serve(AppState::new(registry), addr, ui_dir.as_deref()))
        .with_context(|| format!("serving on {addr}"))
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            let body = match err.downcast_ref::<CliError>() {
                Some(e) => e.to_json(),
                None => serde_json::json!({ "error": { "kind": "runtime", "key": null, "message": format!("{err:#}") } }),
            };
            eprintln!("{body}");
            ExitCode::from(if err.is::<CliError>() { 2 } else { 1 })
        }
    }
}
