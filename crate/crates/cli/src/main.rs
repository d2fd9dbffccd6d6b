//! `umbra`: synthesize streams, process them, train and evaluate touch
//! models, and run the illuminator ablation.
//!
//! Exit codes: 0 success, 1 other failure, 2 usage, 3 I/O, 4 malformed
//! input file, 5 model/input shape mismatch.

use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use log::info;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde_json::json;

use umbra_core::ablation::{
    ablation_train_config, generate_dataset, run_ablation, Split, SuiteSpec,
};
use umbra_core::estimate::{
    evaluate, train, write_events_jsonl, GeometricEstimator, Hysteresis, Model, TrainConfig,
    DEFAULT_HIDDEN,
};
use umbra_core::patches::Dataset;
use umbra_core::pipeline::{run, Estimator, Pipeline, PipelineConfig, TrajectoryTracker};
use umbra_core::scenekit::{NoiseModel, SceneConfig, SensorModel};
use umbra_core::streamio::{
    decode_stream, demux, encode_stream, synthesize_raw_stream, DemuxConfig, DropEvent, DropReport,
    StreamHeader, Trajectory,
};
use umbra_core::{ChannelMode, Error, LedSet, Scene};

#[derive(Parser)]
#[command(
    name = "umbra",
    version,
    about = "Touch sensing from headset-cast infrared shadows"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Render a trajectory into a raw `.eclt` stream.
    Gen(GenArgs),
    /// Render suite samples into a patch dataset.
    GenDataset(GenDatasetArgs),
    /// Run the pipeline over a stream; writes events and a summary.
    Process(ProcessArgs),
    /// Train a touch/hover model on a dataset.
    Train(TrainArgs),
    /// Score a model on a dataset.
    Eval(EvalArgs),
    /// Train and score every illuminator configuration on a suite.
    Ablate(AblateArgs),
    /// Time the pipeline stages on a stream.
    Bench(BenchArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    Multi,
    Single,
}

impl From<ModeArg> for ChannelMode {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::Multi => ChannelMode::MultiChannel,
            ModeArg::Single => ChannelMode::SingleChannel,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum EstimatorArg {
    Geometric,
    Learned,
}

#[derive(Clone, Copy, ValueEnum)]
enum SplitArg {
    Train,
    Test,
    All,
}

impl From<SplitArg> for Split {
    fn from(s: SplitArg) -> Self {
        match s {
            SplitArg::Train => Split::Train,
            SplitArg::Test => Split::Test,
            SplitArg::All => Split::All,
        }
    }
}

#[derive(Args, Clone)]
struct SceneArgs {
    /// Scene TOML; the default headset rig when omitted.
    #[arg(long)]
    scene: Option<PathBuf>,
    /// Trajectory JSON with finger poses per composite frame.
    #[arg(long)]
    trajectory: PathBuf,
}

impl SceneArgs {
    fn load(&self) -> Result<(Scene, Trajectory), CliError> {
        let rig = match &self.scene {
            Some(p) => SceneConfig::load(&existing(p)?)?.build()?,
            None => Scene::default_rig(),
        };
        let trajectory = Trajectory::load(&existing(&self.trajectory)?)?;
        trajectory.validate(&rig)?;
        Ok((rig, trajectory))
    }
}

#[derive(Args)]
struct GenArgs {
    #[command(flatten)]
    scene: SceneArgs,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Sensor gain relative to the nominal exposure.
    #[arg(long, default_value_t = 1.0)]
    gain: f64,
    /// Gaussian read noise in LSB; 0 disables noise.
    #[arg(long, default_value_t = 1.0)]
    read_noise: f64,
    /// Add signal-dependent shot noise.
    #[arg(long)]
    shot_noise: bool,
    /// Also write per-frame ground truth as JSON.
    #[arg(long)]
    truth: Option<PathBuf>,
}

#[derive(Args)]
struct GenDatasetArgs {
    /// Suite name: default or smoke.
    #[arg(long, default_value = "default")]
    suite: String,
    #[arg(long, value_enum, default_value_t = SplitArg::Train)]
    split: SplitArg,
    #[arg(long, default_value = "3,4")]
    leds: LedSet,
    #[arg(long, value_enum, default_value_t = ModeArg::Multi)]
    mode: ModeArg,
    /// Overrides the suite seed.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Clone)]
struct PipelineArgs {
    /// Raw `.eclt` stream.
    #[arg(long = "in")]
    input: PathBuf,
    #[command(flatten)]
    scene: SceneArgs,
    #[arg(long, value_enum, default_value_t = EstimatorArg::Geometric)]
    estimator: EstimatorArg,
    /// Model file; required by the learned estimator.
    #[arg(long)]
    model: Option<PathBuf>,
    /// LEDs for the geometric estimator (a model carries its own).
    #[arg(long, default_value = "3,4")]
    leds: LedSet,
    /// Seeds the keypoint tracker jitter.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Smoothing window, frames.
    #[arg(long, default_value_t = umbra_core::estimate::SMOOTHING_WINDOW)]
    window: usize,
    /// Probability that starts a touch.
    #[arg(long, default_value_t = Hysteresis::default().on)]
    on: f64,
    /// Probability that ends a touch.
    #[arg(long, default_value_t = Hysteresis::default().off)]
    off: f64,
    /// Minimum touch length, frames.
    #[arg(long, default_value_t = Hysteresis::default().min_frames)]
    min_frames: u64,
}

#[derive(Args)]
struct ProcessArgs {
    #[command(flatten)]
    pipeline: PipelineArgs,
    /// Output directory for `events.jsonl` and `summary.json`.
    #[arg(long)]
    out: PathBuf,
    /// Write normalized suppressed images as PNG here.
    #[arg(long)]
    dump_suppressed: Option<PathBuf>,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    dataset: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// TOML or JSON training config; flags below override it.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    learning_rate: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    /// Also write the training report as JSON.
    #[arg(long)]
    report: Option<PathBuf>,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    dataset: PathBuf,
    /// Write metrics JSON here instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct AblateArgs {
    #[arg(long, default_value = "default")]
    suite: String,
    /// Training seed.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    epochs: Option<usize>,
    /// Output prefix: writes `<out>.txt`, `<out>.csv` and `<out>.json`.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct BenchArgs {
    #[command(flatten)]
    pipeline: PipelineArgs,
    /// Write the timing report as JSON.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Exit with status 1 when the pipeline misses the frame budget.
    #[arg(long)]
    require_budget: bool,
}

#[derive(Debug)]
enum CliError {
    Usage(String),
    Failed(String),
    Core(Error),
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        CliError::Core(e)
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Core(e.into())
    }
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Failed(_) => 1,
            CliError::Core(e) => match e {
                Error::Io(_) => 3,
                Error::BadMagic { .. }
                | Error::VersionMismatch { .. }
                | Error::Truncated { .. }
                | Error::Format(_)
                | Error::InvalidScene(_)
                | Error::InvalidTrajectory(_)
                | Error::InvalidDataset(_) => 4,
                Error::ShapeMismatch(_) => 5,
                Error::InvalidArgument(_) => 2,
                _ => 1,
            },
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Usage(m) | CliError::Failed(m) => write!(f, "{m}"),
            CliError::Core(e) => write!(f, "{e}"),
        }
    }
}

type CliResult<T = ()> = Result<T, CliError>;

/// Read commands fail early, with the I/O exit code, on missing paths.
fn existing(p: &Path) -> CliResult<PathBuf> {
    if p.exists() {
        Ok(p.to_path_buf())
    } else {
        Err(CliError::Core(Error::Io(std::io::Error::new(
            std::io::ErrorKind::NotFound,
            format!("{} does not exist", p.display()),
        ))))
    }
}

fn write_json(path: &Path, value: &serde_json::Value) -> CliResult {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| Error::Format(e.to_string()))?;
    text.push('\n');
    fs::write(path, text)?;
    Ok(())
}

fn to_json<T: serde::Serialize>(v: &T) -> serde_json::Value {
    serde_json::to_value(v).expect("plain data serializes")
}

fn cmd_gen(a: &GenArgs) -> CliResult {
    let (rig, trajectory) = a.scene.load()?;
    let mut sensor = SensorModel::noiseless();
    sensor.gain = a.gain;
    if a.read_noise > 0.0 || a.shot_noise {
        sensor.noise = Some(NoiseModel {
            read_sigma: a.read_noise,
            shot: a.shot_noise,
        });
    }
    let (raw, truth) = synthesize_raw_stream(&rig, &trajectory, &sensor, a.seed)?;
    let header = StreamHeader {
        width: rig.camera.width as u16,
        height: rig.camera.height as u16,
    };
    let mut out = BufWriter::new(File::create(&a.out)?);
    encode_stream(header, &raw, &mut out)?;
    out.flush()?;
    if let Some(p) = &a.truth {
        write_json(p, &to_json(&truth))?;
    }
    info!(
        "wrote {} subframes ({} composites) to {}",
        raw.len(),
        truth.len(),
        a.out.display()
    );
    Ok(())
}

fn cmd_gen_dataset(a: &GenDatasetArgs) -> CliResult {
    let mut spec = SuiteSpec::by_name(&a.suite)?;
    if let Some(seed) = a.seed {
        spec.seed = seed;
    }
    let ds = generate_dataset(&spec, a.leds, a.mode.into(), a.split.into())?;
    ds.save(&a.out)?;
    info!("wrote {} samples to {}", ds.len(), a.out.display());
    Ok(())
}

/// Builds a pipeline and runs it over the stream, calling `on_suppressed`
/// for every normalized composite.
fn run_pipeline(
    a: &PipelineArgs,
    random_model: bool,
    on_suppressed: impl FnMut(&umbra_core::SuppressedFrame) -> umbra_core::Result<()>,
) -> CliResult<(umbra_core::pipeline::PipelineOutput, DropReport)> {
    let (rig, trajectory) = a.scene.load()?;
    let estimator = match (a.estimator, &a.model) {
        (EstimatorArg::Learned, Some(p)) => Estimator::Learned(Model::load(&existing(p)?)?),
        (EstimatorArg::Learned, None) if random_model => {
            let mut rng = ChaCha8Rng::seed_from_u64(a.seed);
            Estimator::Learned(Model::init(
                a.leds,
                ChannelMode::MultiChannel,
                DEFAULT_HIDDEN,
                &mut rng,
            ))
        }
        (EstimatorArg::Learned, None) => {
            return Err(CliError::Usage("--estimator learned needs --model".into()))
        }
        (EstimatorArg::Geometric, _) => Estimator::Geometric(GeometricEstimator::from_scene(&rig)),
    };
    let config = PipelineConfig {
        leds: a.leds,
        mode: ChannelMode::MultiChannel,
        window: a.window,
        hysteresis: Hysteresis {
            on: a.on,
            off: a.off,
            min_frames: a.min_frames,
        },
    };
    let pipeline = Pipeline::new(estimator, config)?;
    let (header, raw) = decode_stream(BufReader::new(File::open(existing(&a.input)?)?))?;
    if (header.width as usize, header.height as usize) != (rig.camera.width, rig.camera.height) {
        return Err(CliError::Core(Error::ShapeMismatch(format!(
            "stream is {}x{}, scene camera is {}x{}",
            header.width, header.height, rig.camera.width, rig.camera.height
        ))));
    }
    let (frames, drops) = demux(raw, DemuxConfig::default());
    if frames.len() > trajectory.len() {
        return Err(CliError::Core(Error::InvalidTrajectory(format!(
            "stream has {} composites, trajectory only {}",
            frames.len(),
            trajectory.len()
        ))));
    }
    let tracker = TrajectoryTracker::with_default_jitter(rig, trajectory, a.seed)?;
    let out = run(pipeline, &frames, &tracker, on_suppressed)?;
    Ok((out, drops))
}

fn drops_json(d: &DropReport) -> serde_json::Value {
    let events: Vec<_> = d
        .events
        .iter()
        .map(|e| match e {
            DropEvent::Sequence { base_timestamp_us, missing_step } => {
                json!({"kind": "sequence", "base_timestamp_us": base_timestamp_us, "missing_step": missing_step})
            }
            DropEvent::Span { base_timestamp_us, span_us } => {
                json!({"kind": "span", "base_timestamp_us": base_timestamp_us, "span_us": span_us})
            }
        })
        .collect();
    json!({
        "composites": d.composites,
        "dropped_sequences": d.dropped_sequences,
        "leading_discarded": d.leading_discarded,
        "skipped_subframes": d.skipped_subframes,
        "trailing_incomplete": d.trailing_incomplete,
        "events": events,
    })
}

fn cmd_process(a: &ProcessArgs) -> CliResult {
    fs::create_dir_all(&a.out)?;
    if let Some(d) = &a.dump_suppressed {
        fs::create_dir_all(d)?;
    }
    let dump = a.dump_suppressed.clone();
    let (out, drops) = run_pipeline(&a.pipeline, false, |sf| {
        if let Some(d) = &dump {
            sf.dump_png(d)?;
        }
        Ok(())
    })?;
    let mut events = BufWriter::new(File::create(a.out.join("events.jsonl"))?);
    write_events_jsonl(&mut events, &out.events)?;
    events.flush()?;
    // Timing stays out of the summary so that reruns are byte-identical.
    let summary = json!({
        "estimator": out.timing.estimator,
        "composites": out.composites,
        "events": out.events.len(),
        "demux": drops_json(&drops),
        "metrics": out.metrics.as_ref().map(to_json),
    });
    write_json(&a.out.join("summary.json"), &summary)?;
    info!("{} composites, {} events", out.composites, out.events.len());
    if let Some(m) = &out.metrics {
        info!("frame-level metrics:\n{}", m.report());
    }
    Ok(())
}

fn load_train_config(a: &TrainArgs) -> CliResult<TrainConfig> {
    let mut cfg = match &a.config {
        None => TrainConfig::default(),
        Some(p) => {
            let text = fs::read_to_string(existing(p)?)?;
            if p.extension().is_some_and(|e| e == "json") {
                serde_json::from_str(&text).map_err(|e| Error::Format(e.to_string()))?
            } else {
                toml::from_str(&text).map_err(|e| Error::Format(e.to_string()))?
            }
        }
    };
    if let Some(e) = a.epochs {
        cfg.touch_epochs = e;
        cfg.hover_epochs = e;
    }
    if let Some(lr) = a.learning_rate {
        cfg.learning_rate = lr;
    }
    if let Some(s) = a.seed {
        cfg.seed = s;
    }
    Ok(cfg)
}

fn cmd_train(a: &TrainArgs) -> CliResult {
    let cfg = load_train_config(a)?;
    let ds = Dataset::load(&existing(&a.dataset)?)?;
    let (model, report) = train(&ds, &cfg)?;
    model.save(&a.out)?;
    if let Some(p) = &a.report {
        write_json(p, &to_json(&report))?;
    }
    info!("trained on {} samples, wrote {}", ds.len(), a.out.display());
    Ok(())
}

fn cmd_eval(a: &EvalArgs) -> CliResult {
    let model = Model::load(&existing(&a.model)?)?;
    let ds = Dataset::load(&existing(&a.dataset)?)?;
    let metrics = evaluate(&model, &ds)?;
    let value = to_json(&metrics);
    match &a.out {
        Some(p) => write_json(p, &value)?,
        None => println!(
            "{}",
            serde_json::to_string_pretty(&value).expect("serializes")
        ),
    }
    info!("\n{}", metrics.report());
    Ok(())
}

fn cmd_ablate(a: &AblateArgs) -> CliResult {
    let spec = SuiteSpec::by_name(&a.suite)?;
    let mut cfg = ablation_train_config();
    if let Some(e) = a.epochs {
        cfg.touch_epochs = e;
        cfg.hover_epochs = e;
    }
    let report = run_ablation(&spec, &cfg, a.seed)?;
    let with_ext = |ext: &str| {
        let mut p = a.out.clone().into_os_string();
        p.push(ext);
        PathBuf::from(p)
    };
    fs::write(with_ext(".txt"), report.report())?;
    fs::write(with_ext(".csv"), report.to_csv())?;
    write_json(&with_ext(".json"), &to_json(&report))?;
    print!("{}", report.report());
    Ok(())
}

fn cmd_bench(a: &BenchArgs) -> CliResult {
    // Without a model the learned path times a randomly initialized network.
    let (out, _) = run_pipeline(&a.pipeline, true, |_| Ok(()))?;
    print!("{}", out.timing.report());
    if let Some(p) = &a.out {
        write_json(p, &to_json(&out.timing))?;
    }
    if a.require_budget && !out.timing.within_budget {
        return Err(CliError::Failed(format!(
            "pipeline exceeds the {} ms budget",
            out.timing.budget_ms
        )));
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("ECLIPSE_LOG", "warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    let result = match &cli.command {
        Command::Gen(a) => cmd_gen(a),
        Command::GenDataset(a) => cmd_gen_dataset(a),
        Command::Process(a) => cmd_process(a),
        Command::Train(a) => cmd_train(a),
        Command::Eval(a) => cmd_eval(a),
        Command::Ablate(a) => cmd_ablate(a),
        Command::Bench(a) => cmd_bench(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("umbra: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
