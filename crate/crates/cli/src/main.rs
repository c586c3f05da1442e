//! Command-line front end for the imitation pipeline: dataset generation,
//! training, evaluation, single-image inference and the ablation sweep.

mod config;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context};
use candle_core::Device;
use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use dirigent_core::checkpoint::TrainedModel;
use dirigent_core::dataset::{
    self, synthetic::{generate_synthetic, SyntheticSpec},
    DatasetManifest, PoseSample, SplitStrategy,
};
use dirigent_core::evaluation::{self, compare_runs, evaluate, EvalReport};
use dirigent_core::kinematics::RobotModel;
use dirigent_core::network::InferenceMode;
use dirigent_core::training::{train, write_history_csv, TrainConfig};

const DATA_ROOT_ENV: &str = "DIRIGENT_DATA_ROOT";

#[derive(Parser)]
#[command(name = "dirigent", version, about = "Diffusion-based robot imitation from RGB images")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic stick-arm dataset.
    GenData(GenDataArgs),
    /// Train a model on a dataset.
    Train(TrainArgs),
    /// Evaluate a trained model on a dataset split.
    Eval(EvalArgs),
    /// Generate a joint configuration for a single image.
    Infer(InferArgs),
    /// Run the ablation sweep (baseline, max-noise-only, joint-loss-only).
    Sweep(SweepArgs),
    /// Compare saved evaluation reports.
    Report(ReportArgs),
}

#[derive(Args)]
struct GenDataArgs {
    /// Output directory for the dataset.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 5000)]
    count: usize,
    #[arg(long, default_value_t = 64)]
    image_size: u32,
    #[arg(long, default_value_t = 2)]
    participants: u32,
    /// Runs per participant.
    #[arg(long, default_value_t = 3)]
    runs: u32,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args, Clone)]
struct DataArgs {
    /// Dataset root; falls back to $DIRIGENT_DATA_ROOT.
    #[arg(long)]
    data: Option<PathBuf>,
    /// Hold out one participant as the evaluation split.
    #[arg(long)]
    holdout_participant: Option<u32>,
    /// Fraction of samples held out for validation by random split.
    #[arg(long, default_value_t = 0.1)]
    val_fraction: f64,
    /// Seed for the random split.
    #[arg(long, default_value_t = 0)]
    split_seed: u64,
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    data: DataArgs,
    /// Output directory for the checkpoint, history and provenance.
    #[arg(long)]
    out: PathBuf,
    /// Partial TOML configuration merged over the profile defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Dotted-path overrides, e.g. --set loss.cartesian=0.5.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    /// Base profile: "paper" (full scale) or "small".
    #[arg(long, default_value = "small")]
    profile: String,
    /// Training seed; overrides the configured one.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct EvalArgs {
    #[command(flatten)]
    data: DataArgs,
    #[arg(long)]
    checkpoint: PathBuf,
    /// Output directory for report.json and the trajectory plot.
    #[arg(long)]
    out: PathBuf,
    /// Which samples to evaluate: "val" or "all".
    #[arg(long, default_value = "val")]
    split: String,
    /// Iterative denoising steps; a single pass when omitted.
    #[arg(long)]
    steps: Option<usize>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct InferArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    /// Condition image (PNG).
    #[arg(long)]
    image: PathBuf,
    /// Output JSON path for the generated configuration.
    #[arg(long)]
    out: PathBuf,
    /// Also render the generated pose to this PNG (synthetic layout only).
    #[arg(long)]
    render: Option<PathBuf>,
    #[arg(long)]
    steps: Option<usize>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct SweepArgs {
    #[command(flatten)]
    data: DataArgs,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    #[arg(long, default_value = "small")]
    profile: String,
    /// Training seeds, one run per variant and seed.
    #[arg(long, value_delimiter = ',', default_value = "0,1,2")]
    seeds: Vec<u64>,
}

#[derive(Args)]
struct ReportArgs {
    /// Directories containing a report.json each.
    dirs: Vec<PathBuf>,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => e.exit(),
    };
    let result = match cli.command {
        Command::GenData(args) => gen_data(args),
        Command::Train(args) => run_train(args),
        Command::Eval(args) => run_eval(args),
        Command::Infer(args) => run_infer(args),
        Command::Sweep(args) => run_sweep(args),
        Command::Report(args) => run_report(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn gen_data(args: GenDataArgs) -> anyhow::Result<()> {
    let spec = SyntheticSpec {
        count: args.count,
        image_size: args.image_size,
        participants: args.participants,
        runs_per_participant: args.runs,
        ..SyntheticSpec::default()
    };
    let manifest = generate_synthetic(&args.out, &spec, args.seed)?;
    println!(
        "wrote {} samples ({} participants x {} runs) to {}",
        manifest.sample_count,
        args.participants,
        args.runs,
        args.out.display()
    );
    if let Some(r) = manifest.motion_ranges {
        println!("end-effector motion ranges: x {:.3} m, y {:.3} m, z {:.3} m", r[0], r[1], r[2]);
    }
    Ok(())
}

fn resolve_data_root(data: &DataArgs) -> anyhow::Result<PathBuf> {
    match &data.data {
        Some(path) => Ok(path.clone()),
        None => match std::env::var_os(DATA_ROOT_ENV) {
            Some(path) => Ok(PathBuf::from(path)),
            None => bail!("no dataset given: pass --data or set ${DATA_ROOT_ENV}"),
        },
    }
}

struct LoadedData {
    manifest: DatasetManifest,
    robot: RobotModel,
    train: Vec<PoseSample>,
    val: Vec<PoseSample>,
}

fn load_split_data(data: &DataArgs) -> anyhow::Result<LoadedData> {
    let root = resolve_data_root(data)?;
    let manifest = DatasetManifest::load(&root)?;
    let robot = RobotModel::for_layout(&manifest.layout_id)?;
    let (samples, stats) = dataset::load_all(&manifest)?;
    println!(
        "loaded {} samples ({} corrupt skipped, {} unsynchronized dropped)",
        stats.loaded, stats.skipped_corrupt, stats.dropped_unsynced
    );
    let strategy = match data.holdout_participant {
        Some(held_out) => SplitStrategy::ByParticipant { held_out },
        None => SplitStrategy::Random {
            train_fraction: 1.0 - data.val_fraction,
            seed: data.split_seed,
        },
    };
    let (train, val) = dataset::split(samples, &strategy)?;
    Ok(LoadedData {
        manifest,
        robot,
        train,
        val,
    })
}

fn base_config(profile: &str, robot: &RobotModel) -> anyhow::Result<TrainConfig> {
    let mut cfg = match profile {
        "paper" => TrainConfig::default_diri(),
        "small" => TrainConfig::small(robot.dof(), 32),
        other => bail!("unknown profile '{other}'; expected 'paper' or 'small'"),
    };
    cfg.network.joint_dim = robot.dof();
    Ok(cfg)
}

#[derive(Serialize)]
struct RunRecord<'a> {
    tool_version: &'static str,
    argv: Vec<String>,
    data_root: PathBuf,
    layout_id: &'a str,
    train_samples: usize,
    val_samples: usize,
    config: &'a TrainConfig,
    best_epoch: Option<usize>,
    final_val_loss: Option<f64>,
}

fn write_run_record(path: &Path, record: &RunRecord) -> anyhow::Result<()> {
    let text = serde_json::to_string_pretty(record)?;
    std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))?;
    Ok(())
}

fn train_once(
    data: &LoadedData,
    data_args: &DataArgs,
    cfg: &TrainConfig,
    out: &Path,
) -> anyhow::Result<EvalReport> {
    std::fs::create_dir_all(out)?;
    let device = Device::Cpu;
    let outcome = train(&data.robot, &data.train, &data.val, cfg, &device)?;
    outcome.model.save(out)?;
    write_history_csv(&out.join("history.csv"), &outcome.history)?;
    if let Some(last) = outcome.history.last() {
        println!(
            "epoch {}: train loss {:.6}, val loss {:.6} (best epoch: {:?})",
            last.epoch, last.train_loss, last.val_loss, outcome.best_epoch
        );
    }

    let eval_set = if data.val.is_empty() { &data.train } else { &data.val };
    let detail = evaluate(
        &outcome.model,
        eval_set,
        InferenceMode::Single,
        data.manifest.motion_ranges,
        if data.val.is_empty() { "train" } else { "val" },
        cfg.seed,
        &device,
    )?;
    detail.report.save_json(&out.join("report.json"))?;
    evaluation::export_trajectory_plot(&detail, &out.join("trajectory"))?;

    let record = RunRecord {
        tool_version: env!("CARGO_PKG_VERSION"),
        argv: std::env::args().collect(),
        data_root: resolve_data_root(data_args)?,
        layout_id: &data.robot.layout_id,
        train_samples: data.train.len(),
        val_samples: data.val.len(),
        config: cfg,
        best_epoch: outcome.best_epoch,
        final_val_loss: outcome.history.last().map(|h| h.val_loss),
    };
    write_run_record(&out.join("run.json"), &record)?;
    Ok(detail.report)
}

fn run_train(args: TrainArgs) -> anyhow::Result<()> {
    let data = load_split_data(&args.data)?;
    let base = base_config(&args.profile, &data.robot)?;
    let mut cfg = config::apply_overrides(
        &config::load_config(args.config.as_deref(), base)?,
        &args.overrides,
    )?;
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    let report = train_once(&data, &args.data, &cfg, &args.out)?;
    print!("{}", compare_runs(&[("trained".into(), report)]));
    Ok(())
}

fn run_eval(args: EvalArgs) -> anyhow::Result<()> {
    let device = Device::Cpu;
    let trained = TrainedModel::load(&args.checkpoint, &device)?;
    let data = load_split_data(&args.data)?;
    if trained.robot.layout_id != data.robot.layout_id {
        bail!(
            "checkpoint layout '{}' does not match dataset layout '{}'",
            trained.robot.layout_id,
            data.robot.layout_id
        );
    }
    let (samples, label): (Vec<PoseSample>, &str) = match args.split.as_str() {
        "val" => (data.val, "val"),
        "all" => {
            let mut all = data.train;
            all.extend(data.val);
            (all, "all")
        }
        other => bail!("unknown split '{other}'; expected 'val' or 'all'"),
    };
    let mode = match args.steps {
        None | Some(1) => InferenceMode::Single,
        Some(k) => InferenceMode::Iterative(k),
    };
    let detail = evaluate(
        &trained,
        &samples,
        mode,
        data.manifest.motion_ranges,
        label,
        args.seed,
        &device,
    )?;
    std::fs::create_dir_all(&args.out)?;
    detail.report.save_json(&args.out.join("report.json"))?;
    evaluation::export_trajectory_plot(&detail, &args.out.join("trajectory"))?;
    print!("{}", compare_runs(&[(label.to_string(), detail.report)]));
    Ok(())
}

#[derive(Serialize)]
struct Inference {
    joints: Vec<f64>,
    layout_id: String,
    eef_positions: Vec<[f64; 3]>,
}

fn run_infer(args: InferArgs) -> anyhow::Result<()> {
    let device = Device::Cpu;
    let trained = TrainedModel::load(&args.checkpoint, &device)?;
    let img = image::open(&args.image)
        .with_context(|| format!("cannot open {}", args.image.display()))?
        .to_rgb8();
    let size = trained.config.network.image_size;
    let condition = dirigent_core::training::image_to_tensor(&img, size, &device)?;
    let mode = match args.steps {
        None | Some(1) => InferenceMode::Single,
        Some(k) => InferenceMode::Iterative(k),
    };
    use rand::SeedableRng;
    let mut rng = rand_chacha::ChaCha20Rng::seed_from_u64(args.seed);
    let output = dirigent_core::network::predict_x0(
        &trained.model,
        &condition,
        &trained.schedule,
        &trained.normalizer,
        &trained.robot,
        mode,
        &mut rng,
    )?;

    let record = Inference {
        joints: output.joints.values.clone(),
        layout_id: trained.robot.layout_id.clone(),
        eef_positions: output
            .eef_positions
            .iter()
            .map(|p| [p.position.x, p.position.y, p.position.z])
            .collect(),
    };
    std::fs::write(&args.out, serde_json::to_string_pretty(&record)?)
        .with_context(|| format!("writing {}", args.out.display()))?;
    println!("joints: {:?}", record.joints);

    if let Some(render_path) = args.render {
        if trained.robot.layout_id != "synthetic-3dof" {
            bail!("--render supports only the synthetic-3dof layout");
        }
        let rendered = dirigent_core::dataset::synthetic::render_configuration(
            &trained.robot,
            &output.joints.values,
            size as u32,
            0,
        )?;
        rendered.save(&render_path)?;
        println!("rendered pose to {}", render_path.display());
    }
    Ok(())
}

/// The three training variants of the ablation matrix.
fn sweep_variants(base: &TrainConfig) -> Vec<(&'static str, TrainConfig)> {
    let mut max_noise = base.clone();
    max_noise.max_noise_only = true;
    let mut joint_only = base.clone();
    joint_only.loss.cartesian = 0.0;
    vec![
        ("baseline", base.clone()),
        ("max_noise_only", max_noise),
        ("joint_only", joint_only),
    ]
}

fn run_sweep(args: SweepArgs) -> anyhow::Result<()> {
    let data = load_split_data(&args.data)?;
    let base = base_config(&args.profile, &data.robot)?;
    let base = config::apply_overrides(
        &config::load_config(args.config.as_deref(), base)?,
        &args.overrides,
    )?;

    let mut rows = Vec::new();
    for (name, variant) in sweep_variants(&base) {
        for &seed in &args.seeds {
            let mut cfg = variant.clone();
            cfg.seed = seed;
            let out = args.out.join(name).join(format!("seed_{seed}"));
            println!("== {name} seed {seed} ==");
            let report = train_once(&data, &args.data, &cfg, &out)?;
            rows.push((format!("{name}/seed_{seed}"), report));
        }
    }
    let table = compare_runs(&rows);
    std::fs::write(args.out.join("summary.txt"), &table)?;
    print!("{table}");
    Ok(())
}

fn run_report(args: ReportArgs) -> anyhow::Result<()> {
    if args.dirs.is_empty() {
        bail!("no report directories given");
    }
    let mut rows = Vec::new();
    for dir in &args.dirs {
        let report = EvalReport::load_json(&dir.join("report.json"))?;
        rows.push((dir.display().to_string(), report));
    }
    print!("{}", compare_runs(&rows));
    Ok(())
}
