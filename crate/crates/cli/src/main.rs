//! `impact`: command-line front end for simulation, training, prediction and
//! evaluation.
//!
//! Results go to stdout as JSON, logs to stderr. Failures print one JSON line
//! `{"error": <kind>, "message": <text>}` to stderr and exit with status 1;
//! usage errors exit with status 2.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};
use serde_json::json;

use impact_core::baselines::RigidBodyParams;
use impact_core::eval::report::{comparison_csv, confusion_svg, force_overlay_svg, seeds_csv, summary_csv, write_json};
use impact_core::eval::{
    compare_methods, run_experiment, split_indices, ComparisonReport, ExperimentConfig, MetricReport,
};
use impact_core::kinematics::{build_features, FeatureTensor, KinematicSeries, DEFAULT_CUTOFF_HZ};
use impact_core::model::{
    predict_force, predict_impact_info, predict_location, train, tune, Hyperparameters, LabeledSet, Mode, ModelSet,
    SearchGrid, Target,
};
use impact_core::surrogate::{generate_dataset, load_dataset, GridSpec, SimulatedImpact, SurrogateConfig, MANIFEST_FILE};

#[derive(Parser)]
#[command(name = "impact", version, about = "Head impact retrieval from head kinematics")]
struct Cli {
    /// Run configuration (JSON). Every section is optional.
    #[arg(long, global = true, env = "IMPACT_CONFIG")]
    config: Option<PathBuf>,
    /// Seed for every random choice of the subcommand.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Upper bound on worker threads.
    #[arg(long, global = true)]
    workers: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate a grid of impacts into a dataset directory.
    Simulate {
        #[arg(long)]
        grid: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Write the 48-channel feature tensor of every impact in a dataset.
    Preprocess {
        #[command(flatten)]
        data: DatasetArg,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train models on a whole dataset.
    Train {
        #[command(flatten)]
        data: DatasetArg,
        #[arg(long)]
        out: PathBuf,
        /// Targets to train; all seven when omitted.
        #[arg(long = "target")]
        targets: Vec<Target>,
        /// Fraction held out for best-epoch selection.
        #[arg(long, default_value_t = 0.1)]
        val_fraction: f64,
    },
    /// Grid search of hyperparameters on a train/validation split.
    Tune {
        #[command(flatten)]
        data: DatasetArg,
        #[arg(long)]
        target: Target,
        #[arg(long)]
        out: PathBuf,
    },
    /// Predict impact information from a kinematics CSV.
    Predict {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        input: PathBuf,
        /// The input is already low-pass filtered.
        #[arg(long)]
        prefiltered: bool,
    },
    /// Repeated train/validation/test experiment.
    Evaluate {
        #[command(flatten)]
        data: DatasetArg,
        #[arg(long)]
        out: PathBuf,
        /// Number of seeds, counted up from `--seed` (default 0).
        #[arg(long)]
        seeds: Option<u64>,
    },
    /// Region accuracy of the LSTM and the rigid-body estimators.
    Compare {
        #[command(flatten)]
        data: DatasetArg,
        #[arg(long)]
        model: PathBuf,
        /// Split file written by `evaluate`; its test impacts are used.
        #[arg(long)]
        split: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Render a metric or comparison report as CSV tables and SVG figures.
    Report {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Args)]
struct DatasetArg {
    /// Dataset directory or its manifest file.
    #[arg(long)]
    dataset: PathBuf,
}

impl DatasetArg {
    fn load(&self) -> Result<Vec<SimulatedImpact>> {
        let manifest = if self.dataset.is_dir() {
            self.dataset.join(MANIFEST_FILE)
        } else {
            self.dataset.clone()
        };
        Ok(load_dataset(&manifest)?)
    }
}

#[derive(Debug, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct RunConfig {
    surrogate: SurrogateConfig,
    experiment: ExperimentConfig,
    search: Option<SearchGrid>,
    rigid_body: RigidBodyParams,
}

impl RunConfig {
    fn load(path: Option<&Path>) -> Result<Self> {
        let Some(path) = path else { return Ok(Self::default()) };
        let text = fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        let cfg: Self = serde_json::from_str(&text).with_context(|| format!("parsing config {}", path.display()))?;
        cfg.surrogate.validate()?;
        cfg.experiment.split.validate()?;
        cfg.rigid_body.validate()?;
        Ok(cfg)
    }

    fn hyper(&self, mode: Mode, seed: Option<u64>) -> Hyperparameters {
        let base = match mode {
            Mode::Scalar => &self.experiment.scalar_hyper,
            Mode::Sequence => &self.experiment.sequence_hyper,
        };
        Hyperparameters {
            seed: seed.unwrap_or(base.seed),
            ..base.clone()
        }
    }
}

fn print_json(value: &serde_json::Value) -> Result<()> {
    println!("{}", serde_json::to_string(value)?);
    Ok(())
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))
}

fn features_of(data: &[SimulatedImpact]) -> Result<Vec<FeatureTensor>> {
    Ok(data.iter().map(|d| build_features(&d.series)).collect::<impact_core::Result<_>>()?)
}

fn labels(data: &[SimulatedImpact], target: Target) -> Vec<Vec<f64>> {
    data.iter().map(|d| target.values(d)).collect()
}

#[derive(Serialize, Deserialize)]
struct SplitFile {
    seed: u64,
    train: Vec<String>,
    val: Vec<String>,
    test: Vec<String>,
}

fn run(cli: Cli) -> Result<()> {
    let cfg = RunConfig::load(cli.config.as_deref())?;
    let workers = cli
        .workers
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()));
    match cli.command {
        Command::Simulate { grid, out } => {
            let text = fs::read_to_string(&grid).with_context(|| format!("reading grid {}", grid.display()))?;
            let spec: GridSpec =
                serde_json::from_str(&text).with_context(|| format!("parsing grid {}", grid.display()))?;
            // The simulator is deterministic; --seed is accepted for uniformity.
            let manifest = generate_dataset(&spec, &cfg.surrogate, &out, workers)?;
            print_json(&json!({
                "impacts": manifest.rows.len(),
                "grid_points": spec.len(),
                "manifest": manifest.path(),
            }))
        }
        Command::Preprocess { data, out } => {
            let impacts = data.load()?;
            create_dir(&out)?;
            for (imp, f) in impacts.iter().zip(features_of(&impacts)?) {
                f.write_csv(&out.join(format!("{}_features.csv", imp.id)))?;
            }
            print_json(&json!({ "impacts": impacts.len(), "out": out }))
        }
        Command::Train { data, out, targets, val_fraction } => {
            let impacts = data.load()?;
            if impacts.is_empty() {
                bail!(impact_core::Error::InvalidArgument("dataset is empty".into()));
            }
            let targets = if targets.is_empty() { Target::ALL.to_vec() } else { targets };
            let features = features_of(&impacts)?;
            let mut models = ModelSet::new();
            let mut logs = serde_json::Map::new();
            for target in targets {
                let y = labels(&impacts, target);
                let set = LabeledSet::new(features.iter().collect(), y.iter().map(Vec::as_slice).collect())?;
                let hyper = cfg.hyper(target.mode(), cli.seed);
                log::info!("training {} on {} impacts", target.name(), set.len());
                let (model, log) = train(&set, target.mode(), &hyper, val_fraction)?;
                logs.insert(target.name().into(), serde_json::to_value(&log)?);
                models.insert(target, model)?;
            }
            models.save_dir(&out)?;
            write_json(&out.join("training_log.json"), &logs)?;
            print_json(&json!({ "models": models.targets().map(Target::name).collect::<Vec<_>>(), "out": out }))
        }
        Command::Tune { data, target, out } => {
            let impacts = data.load()?;
            let seed = cli.seed.unwrap_or(0);
            let split = &cfg.experiment.split;
            let (tr, va, _) = split_indices(&impacts, seed, split, cfg.experiment.keep_mirror_pairs)?;
            if va.is_empty() {
                bail!(impact_core::Error::InvalidArgument("validation partition is empty".into()));
            }
            let features = features_of(&impacts)?;
            let y = labels(&impacts, target);
            let subset = |idx: &[usize]| LabeledSet {
                features: idx.iter().map(|&i| &features[i]).collect(),
                targets: idx.iter().map(|&i| y[i].as_slice()).collect(),
            };
            let base = cfg.hyper(target.mode(), Some(seed));
            let grid = match &cfg.search {
                Some(g) => SearchGrid {
                    seed: cli.seed.unwrap_or(g.seed),
                    ..g.clone()
                },
                None => SearchGrid {
                    hidden_units: vec![8, 16, 32],
                    learning_rate: vec![0.001, 0.005, 0.01],
                    ..SearchGrid::single(&base)
                },
            };
            let report = tune(&subset(&tr), &subset(&va), target.mode(), &grid)?;
            write_json(&out, &report)?;
            print_json(&json!({ "target": target.name(), "best": report.best, "trials": report.trials.len() }))
        }
        Command::Predict { model, input, prefiltered } => {
            let models = ModelSet::load_dir(&model)?;
            let raw = KinematicSeries::read_csv(&input)?;
            let series = if prefiltered { raw } else { raw.filtered(DEFAULT_CUTOFF_HZ)? };
            let features = build_features(&series)?;
            let info = predict_impact_info(&models, &features)?;
            let loc = predict_location(&models, &features)?;
            let (helmet, head) = predict_force(&models, &features)?;
            print_json(&json!({
                "speed": info.speed_mps,
                "alpha": info.alpha_deg,
                "beta": info.beta_deg,
                "Y": info.y_mm,
                "Z": info.z_mm,
                "theta": loc.location.theta_deg,
                "eta": loc.location.eta_deg,
                "region": loc.region.name(),
                "missed_sphere": loc.missed,
                "force_helmet": helmet.values(),
                "force_head": head.values(),
            }))
        }
        Command::Evaluate { data, out, seeds } => {
            let impacts = data.load()?;
            let mut config = cfg.experiment.clone();
            if let Some(n) = seeds {
                let base = cli.seed.unwrap_or(0);
                config.seeds = (base..base + n).collect();
            } else if let Some(s) = cli.seed {
                config.seeds = vec![s];
            }
            let outcome = run_experiment(&impacts, &config)?;
            create_dir(&out)?;
            write_reports(&outcome.report, &out)?;
            for run in &outcome.runs {
                let dir = out.join(format!("seed_{}", run.result.seed));
                run.models.save_dir(&dir.join("models"))?;
                let ids = |idx: &[usize]| idx.iter().map(|&i| impacts[i].id.clone()).collect();
                write_json(
                    &dir.join("split.json"),
                    &SplitFile {
                        seed: run.result.seed,
                        train: ids(&run.train_indices),
                        val: ids(&run.val_indices),
                        test: ids(&run.test_indices),
                    },
                )?;
                if let Some(&first) = run.test_indices.first() {
                    let f = build_features(&impacts[first].series)?;
                    for target in [Target::ForceHelmet, Target::ForceHead] {
                        if let Ok(m) = run.models.get(target) {
                            let pred = m.predict(&f)?;
                            let svg = force_overlay_svg(
                                &target.values(&impacts[first]),
                                &pred,
                                &format!("{} {}", target.name(), impacts[first].id),
                            );
                            fs::write(dir.join(format!("{}_{}.svg", target.name(), impacts[first].id)), svg)?;
                        }
                    }
                }
            }
            print_json(&json!({ "seeds": config.seeds, "summary": outcome.report.summary, "out": out }))
        }
        Command::Compare { data, model, split, out } => {
            let impacts = data.load()?;
            let models = ModelSet::load_dir(&model)?;
            let indices: Vec<usize> = match split {
                Some(path) => {
                    let text = fs::read_to_string(&path).with_context(|| format!("reading split {}", path.display()))?;
                    let split: SplitFile = serde_json::from_str(&text)
                        .with_context(|| format!("parsing split {}", path.display()))?;
                    split
                        .test
                        .iter()
                        .map(|id| {
                            impacts.iter().position(|d| &d.id == id).ok_or_else(|| {
                                impact_core::Error::InvalidArgument(format!("impact {id} is not in the dataset")).into()
                            })
                        })
                        .collect::<Result<_>>()?
                }
                None => (0..impacts.len()).collect(),
            };
            let report = compare_methods(&impacts, &indices, &models, &cfg.rigid_body)?;
            create_dir(&out)?;
            write_json(&out.join("comparison.json"), &report)?;
            write_comparison(&report, &out)?;
            print_json(&json!({ "impacts": report.n_impacts, "ranking": report.ranking, "out": out }))
        }
        Command::Report { input, out } => {
            let text = fs::read_to_string(&input).with_context(|| format!("reading {}", input.display()))?;
            create_dir(&out)?;
            if let Ok(r) = serde_json::from_str::<MetricReport>(&text) {
                write_reports(&r, &out)?;
                print_json(&json!({ "kind": "metrics", "out": out }))
            } else {
                let r: ComparisonReport = serde_json::from_str(&text)
                    .with_context(|| format!("{} is neither a metric nor a comparison report", input.display()))?;
                write_comparison(&r, &out)?;
                print_json(&json!({ "kind": "comparison", "out": out }))
            }
        }
    }
}

fn write_reports(report: &MetricReport, out: &Path) -> Result<()> {
    write_json(&out.join("metric_report.json"), report)?;
    fs::write(out.join("summary.csv"), summary_csv(report)?)?;
    fs::write(out.join("seeds.csv"), seeds_csv(report)?)?;
    Ok(())
}

fn write_comparison(report: &ComparisonReport, out: &Path) -> Result<()> {
    fs::write(out.join("comparison.csv"), comparison_csv(report)?)?;
    for m in &report.methods {
        let title = match m.accuracy {
            Some(a) => format!("{} ({:.1}% correct)", m.method, 100.0 * a),
            None => m.method.clone(),
        };
        fs::write(out.join(format!("confusion_{}.svg", m.method)), confusion_svg(&m.matrix, &title))?;
    }
    Ok(())
}

fn error_kind(e: &anyhow::Error) -> &'static str {
    if let Some(core) = e.downcast_ref::<impact_core::Error>() {
        return core.kind();
    }
    if e.downcast_ref::<serde_json::Error>().is_some() {
        return "json";
    }
    if e.downcast_ref::<std::io::Error>().is_some() {
        return "io";
    }
    "error"
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn"))
        .target(env_logger::Target::Stderr)
        .init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let message = format!("{e:#}").replace('\n', " ");
            eprintln!("{}", json!({ "error": error_kind(&e), "message": message }));
            ExitCode::from(1)
        }
    }
}
