use clap::{Args, Parser, Subcommand};
use maskseg_core::dataset::split_fold;
use maskseg_core::io::{export_slice, load_volume, save_native};
use maskseg_core::model::{load_checkpoint, save_checkpoint};
use maskseg_core::phantom::{export_dataset, PhantomSpec};
use maskseg_core::pipeline::*;
use maskseg_core::{Axis, FcnModel, Manifest, MetricReport, PipelineConfig, Sample, TrainRecord};
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

type CliResult<T = ()> = Result<T, Box<dyn std::error::Error>>;

#[derive(Parser)]
#[command(name = "maskseg", version, about = "Two-stage 3D segmentation: proposal, localization, enhancement mask, segmentation")]
struct Cli {
    /// Config file of `key = value` lines.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Override one config key; may be repeated.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    overrides: Vec<String>,
    /// Master seed; overrides the `seed` key.
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic phantom dataset with a fold-assigned manifest.
    Phantom(PhantomArgs),
    /// Train the proposal network.
    TrainProposal(TrainArgs),
    /// Train the segmentation network on mask-enhanced crops.
    TrainSeg(TrainSegArgs),
    /// Segment one volume with a trained model pair.
    Infer(InferArgs),
    /// Evaluate a model pair on manifest samples.
    Eval(EvalArgs),
    /// Train one segmentation network per mask weight.
    SweepAlpha(SweepArgs),
    /// Evaluate every proposal/segmentation checkpoint pairing.
    Ablate(AblateArgs),
    /// k-fold cross-validation over the manifest folds, both sides.
    Crossval(CrossvalArgs),
    /// Write one plane of a volume as an 8-bit PGM image.
    ExportSlices(SliceArgs),
}

#[derive(Args)]
struct PhantomArgs {
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
    /// Number of samples.
    #[arg(long, default_value_t = 10)]
    count: usize,
    /// Volume dims as N or WxHxD.
    #[arg(long, default_value = "96x96x96")]
    dims: String,
    /// Gaussian noise standard deviation.
    #[arg(long, default_value_t = 0.05)]
    noise: f64,
}

#[derive(Args)]
struct DataArgs {
    /// Manifest file or the directory holding `manifest.tsv`.
    #[arg(long)]
    manifest: PathBuf,
    /// Hold this fold out for validation; without it every sample trains.
    #[arg(long)]
    fold: Option<usize>,
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    data: DataArgs,
    /// Where to write the final checkpoint.
    #[arg(long)]
    out: PathBuf,
    /// Loss/DSC curve as CSV.
    #[arg(long)]
    record: Option<PathBuf>,
    /// Directory for intermediate checkpoints (see `checkpoint_interval`).
    #[arg(long)]
    checkpoint_dir: Option<PathBuf>,
}

#[derive(Args)]
struct TrainSegArgs {
    #[command(flatten)]
    train: TrainArgs,
    /// Trained proposal checkpoint.
    #[arg(long)]
    proposal: PathBuf,
}

#[derive(Args)]
struct InferArgs {
    #[arg(long)]
    proposal: PathBuf,
    #[arg(long)]
    segmentation: PathBuf,
    /// Input volume (`.nii` or native).
    #[arg(long)]
    input: PathBuf,
    /// Output label volume (native format, 0/1 voxels).
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct EvalArgs {
    #[command(flatten)]
    data: DataArgs,
    #[arg(long)]
    proposal: PathBuf,
    #[arg(long)]
    segmentation: PathBuf,
    /// Per-sample metrics CSV; printed to stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct SweepArgs {
    #[command(flatten)]
    data: DataArgs,
    #[arg(long)]
    proposal: PathBuf,
    /// Comma-separated mask weights.
    #[arg(long, value_delimiter = ',', default_values_t = DEFAULT_ALPHAS.to_vec())]
    alphas: Vec<f32>,
    /// Directory for one `alpha_<a>.csv` curve per weight.
    #[arg(long)]
    out_dir: PathBuf,
}

#[derive(Args)]
struct AblateArgs {
    #[command(flatten)]
    data: DataArgs,
    /// Proposal checkpoint; may be repeated.
    #[arg(long = "proposal", required = true)]
    proposals: Vec<PathBuf>,
    /// Segmentation checkpoint; may be repeated.
    #[arg(long = "segmentation", required = true)]
    segmentations: Vec<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct CrossvalArgs {
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct SliceArgs {
    #[arg(long)]
    input: PathBuf,
    /// x, y or z.
    #[arg(long, default_value = "z")]
    axis: Axis,
    /// Plane index; the middle plane when absent.
    #[arg(long)]
    index: Option<usize>,
    #[arg(long)]
    out: PathBuf,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}

fn load_config(cli: &Cli) -> CliResult<PipelineConfig> {
    let mut config = match &cli.config {
        Some(path) => PipelineConfig::load(path)?,
        None => PipelineConfig::default(),
    };
    for kv in &cli.overrides {
        let (k, v) = kv
            .split_once('=')
            .ok_or_else(|| format!("--set expects KEY=VALUE, got {kv:?}"))?;
        config.set(k, v)?;
    }
    if let Some(seed) = cli.seed {
        config.seed = seed;
    }
    config.validate()?;
    Ok(config)
}

fn run(cli: Cli) -> CliResult {
    let config = load_config(&cli)?;
    match &cli.command {
        Command::Phantom(a) => phantom(a, &config),
        Command::TrainProposal(a) => train_proposal_cmd(a, &config),
        Command::TrainSeg(a) => train_seg_cmd(a, &config),
        Command::Infer(a) => infer(a, &config),
        Command::Eval(a) => eval(a, &config),
        Command::SweepAlpha(a) => sweep(a, &config),
        Command::Ablate(a) => ablate(a, &config),
        Command::Crossval(a) => crossval(a, &config),
        Command::ExportSlices(a) => slices(a),
    }
}

fn phantom(a: &PhantomArgs, config: &PipelineConfig) -> CliResult {
    let spec = PhantomSpec {
        seed: config.seed,
        noise_std: a.noise,
        pair_count: a.count,
        ..PhantomSpec::for_dims(parse_dims(&a.dims)?)
    };
    let manifest = export_dataset(&spec, config.folds, &a.out)?;
    println!("wrote {} samples in {} folds to {}", manifest.entries.len(), config.folds, a.out.display());
    Ok(())
}

/// `(train, val)` for the configured side.
fn split(data: &DataArgs, config: &PipelineConfig) -> CliResult<(Vec<Sample>, Vec<Sample>)> {
    let samples = Manifest::read(&data.manifest)?.load(config.side)?;
    Ok(match data.fold {
        Some(f) => split_fold(&samples, f),
        None => (samples, Vec::new()),
    })
}

fn write_or_print(out: Option<&Path>, text: &str) -> CliResult {
    match out {
        Some(p) => std::fs::write(p, text).map_err(|e| format!("{}: {e}", p.display()))?,
        None => print!("{text}"),
    }
    Ok(())
}

fn save_training(a: &TrainArgs, out: &TrainOutput) -> CliResult {
    save_checkpoint(&out.model, &a.out)?;
    if let Some(path) = &a.record {
        std::fs::write(path, out.record.to_csv()).map_err(|e| format!("{}: {e}", path.display()))?;
    }
    if let Some(dir) = &a.checkpoint_dir {
        std::fs::create_dir_all(dir)?;
        let stem = a.out.file_stem().and_then(|s| s.to_str()).unwrap_or("model");
        for (iteration, model) in &out.checkpoints {
            save_checkpoint(model, dir.join(format!("{stem}_{iteration:06}.ckpt")))?;
        }
    }
    report_curve(&out.record);
    Ok(())
}

fn report_curve(record: &TrainRecord) {
    if let Some(last) = record.rows.last() {
        print!("{} steps, final loss {:.5}", last.iteration, last.loss);
        if let Some(d) = record.final_val_dsc() {
            print!(", validation dsc {d:.4}");
        }
        println!();
    }
}

fn train_proposal_cmd(a: &TrainArgs, config: &PipelineConfig) -> CliResult {
    let (train, val) = split(&a.data, config)?;
    let out = train_proposal(&train, &val, config)?;
    save_training(a, &out)
}

fn train_seg_cmd(a: &TrainSegArgs, config: &PipelineConfig) -> CliResult {
    let proposal: FcnModel = load_checkpoint(&a.proposal)?;
    let (train, val) = split(&a.train.data, config)?;
    let out = train_segmentation(&train, &val, &proposal, config)?;
    save_training(&a.train, &out)
}

fn infer(a: &InferArgs, config: &PipelineConfig) -> CliResult {
    let proposal: FcnModel = load_checkpoint(&a.proposal)?;
    let segmentation: FcnModel = load_checkpoint(&a.segmentation)?;
    let volume = load_volume(&a.input)?;
    let result = infer_two_stage(&proposal, &segmentation, &volume, config)?;
    save_native(&result.labels.to_volume().with_spacing(volume.spacing())?, &a.out)?;
    println!("{}", result.localization);
    Ok(())
}

fn eval(a: &EvalArgs, config: &PipelineConfig) -> CliResult {
    let proposal: FcnModel = load_checkpoint(&a.proposal)?;
    let segmentation: FcnModel = load_checkpoint(&a.segmentation)?;
    let (train, val) = split(&a.data, config)?;
    let samples = if a.data.fold.is_some() { val } else { train };
    let evals = evaluate(&proposal, &segmentation, &samples, config)?;
    let mut s = format!("id,{},failure\n", MetricReport::CSV_HEADER);
    for e in &evals {
        writeln!(s, "{},{},{}", e.id, e.metrics.to_csv_row(), e.failure.as_deref().unwrap_or(""))?;
    }
    if let Some(m) = MetricReport::mean(&evals.iter().map(|e| e.metrics).collect::<Vec<_>>()) {
        writeln!(s, "mean,{},", m.to_csv_row())?;
    }
    write_or_print(a.out.as_deref(), &s)
}

fn sweep(a: &SweepArgs, config: &PipelineConfig) -> CliResult {
    let proposal: FcnModel = load_checkpoint(&a.proposal)?;
    let (train, val) = split(&a.data, config)?;
    std::fs::create_dir_all(&a.out_dir)?;
    let runs = alpha_sweep(&train, &val, &proposal, &a.alphas, config)?;
    println!("alpha,steps_to_0.80,final_val_dsc");
    for run in &runs {
        std::fs::write(a.out_dir.join(format!("alpha_{}.csv", run.alpha)), run.output.record.to_csv())?;
        let reach = run.output.record.first_reaching(0.8).map_or(String::new(), |n| n.to_string());
        let last = run.output.record.final_val_dsc().map_or(String::new(), |d| format!("{d:.4}"));
        println!("{},{reach},{last}", run.alpha);
    }
    Ok(())
}

fn stems(paths: &[PathBuf]) -> Vec<String> {
    paths
        .iter()
        .map(|p| p.file_stem().map_or_else(|| p.display().to_string(), |s| s.to_string_lossy().into_owned()))
        .collect()
}

fn ablate(a: &AblateArgs, config: &PipelineConfig) -> CliResult {
    let load = |ps: &[PathBuf]| ps.iter().map(load_checkpoint::<f32>).collect::<Result<Vec<_>, _>>();
    let proposals = load(&a.proposals)?;
    let segmentations = load(&a.segmentations)?;
    let (train, val) = split(&a.data, config)?;
    let samples = if a.data.fold.is_some() { val } else { train };
    let grid = ablation_grid(&proposals, &segmentations, &samples, config)?;
    write_or_print(a.out.as_deref(), &grid.to_csv(&stems(&a.proposals), &stems(&a.segmentations)))
}

fn crossval(a: &CrossvalArgs, config: &PipelineConfig) -> CliResult {
    let manifest = Manifest::read(&a.manifest)?;
    let report = cross_validate(&manifest, config)?;
    write_or_print(a.out.as_deref(), &report.to_csv())
}

fn slices(a: &SliceArgs) -> CliResult {
    let volume = load_volume(&a.input)?;
    let index = a.index.unwrap_or(volume.dims()[a.axis.index()] / 2);
    export_slice(&volume, a.axis, index, &a.out)?;
    Ok(())
}
