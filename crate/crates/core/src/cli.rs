//! The `lic` command line.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use crate::checkpoint::{
    load_codec, load_flow, load_mask_encoder, save_codec, save_flow, save_mask_encoder, CODEC_TENSOR, FLOW_TENSOR,
    MASKENC_TENSOR,
};
use crate::codec::{encode, make_linear_codec, train_codec, CodecSpec};
use crate::container::{file_sha256, write_atomic, Tensor};
use crate::error::{Error, Result};
use crate::flow_prior::{train_flow, GaussianPrior, VelocityModel, DEFAULT_FLOW_HIDDEN};
use crate::geometry::{median_depth, warp_video, TrajectoryFile, TrajectoryKind, IDENTITY_KIND};
use crate::latent_mask::{train_mask_encoder, MaskActivation, MaskEncoder, MaskPair, DEFAULT_LAMBDA};
use crate::metrics::{eval_report, masked_psnr, RunManifest, RunRecord};
use crate::nn::TrainingConfig;
use crate::solver::{solve_latent_inpaint, solve_pixel_dds, ConsistencyBackend, MaskSource, SolveOutcome, SolverConfig};
use crate::synthdata::{gen_training_set, load_dataset, read_json, write_json, TrajectorySpec, VideoDims};
use crate::tensor::{DepthMap, PixelMask, Video};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_RUNTIME: i32 = 2;
/// Environment variable selecting the log level.
pub const LOG_ENV: &str = "LIC_LOG";

#[derive(Debug)]
enum CliError {
    Usage(String),
    Runtime(Error),
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        CliError::Runtime(e)
    }
}

type CliResult<T> = std::result::Result<T, CliError>;

fn usage<T>(msg: impl Into<String>) -> CliResult<T> {
    Err(CliError::Usage(msg.into()))
}

#[derive(Parser, Debug)]
#[command(name = "lic", version, about = "Latent inpainting for camera-controlled video, at toy scale")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a double-reprojection training set.
    Synth(SynthArgs),
    /// Build the linear codec or train the nonlinear one.
    TrainCodec(TrainCodecArgs),
    /// Train a latent velocity model or fit the analytic Gaussian prior.
    TrainFlow(TrainFlowArgs),
    /// Train the learned mask encoder.
    TrainMaskenc(TrainMaskencArgs),
    /// Warp a video along a trajectory into a measurement and mask.
    Warp(WarpArgs),
    /// Solve one inpainting problem.
    Solve(SolveArgs),
    /// Run an alpha, mask-strategy or pixel-vs-latent sweep.
    Ablate(AblateArgs),
    /// Recompute metrics for a run directory and write report.json.
    Eval(EvalArgs),
    /// Write the frames of a video tensor as images.
    Export(ExportArgs),
}

#[derive(Args, Debug)]
struct SynthArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 1)]
    n: usize,
    #[arg(long, default_value_t = 8)]
    frames: usize,
    #[arg(long, default_value_t = 16)]
    height: usize,
    #[arg(long, default_value_t = 16)]
    width: usize,
    #[arg(long, default_value_t = 3)]
    layers: usize,
    /// Comma-separated trajectory kinds (`identity` allowed); default all six motions.
    #[arg(long, value_delimiter = ',')]
    trajectories: Vec<String>,
    /// Overrides every trajectory's default magnitude.
    #[arg(long)]
    magnitude: Option<f64>,
    /// Codec checkpoint used for the target masks; default a linear codec.
    #[arg(long)]
    codec: Option<PathBuf>,
    #[arg(long, default_value_t = 2)]
    rt: usize,
    #[arg(long, default_value_t = 4)]
    rs: usize,
    #[arg(long, default_value_t = 12)]
    channels: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args, Debug, Clone)]
struct TrainArgs {
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    weight_decay: Option<f64>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

impl TrainArgs {
    fn config(&self, defaults: TrainingConfig) -> TrainingConfig {
        TrainingConfig {
            epochs: self.epochs.unwrap_or(defaults.epochs),
            batch_size: self.batch_size.unwrap_or(defaults.batch_size),
            learning_rate: self.lr.unwrap_or(defaults.learning_rate),
            weight_decay: self.weight_decay.unwrap_or(defaults.weight_decay),
            seed: self.seed,
        }
    }
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum CodecChoice {
    Linear,
    Mlp,
}

#[derive(Args, Debug)]
struct TrainCodecArgs {
    #[arg(long)]
    out: PathBuf,
    /// Dataset directory; required for the nonlinear codec.
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = CodecChoice::Linear)]
    kind: CodecChoice,
    #[arg(long, default_value_t = 2)]
    rt: usize,
    #[arg(long, default_value_t = 4)]
    rs: usize,
    #[arg(long, default_value_t = 12)]
    channels: usize,
    #[command(flatten)]
    train: TrainArgs,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum FlowChoice {
    Mlp,
    Gaussian,
}

#[derive(Args, Debug)]
struct TrainFlowArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    codec: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, value_enum, default_value_t = FlowChoice::Mlp)]
    kind: FlowChoice,
    #[arg(long, default_value_t = DEFAULT_FLOW_HIDDEN)]
    hidden: usize,
    #[command(flatten)]
    train: TrainArgs,
}

#[derive(Args, Debug)]
struct TrainMaskencArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = DEFAULT_LAMBDA)]
    lambda: f64,
    #[command(flatten)]
    train: TrainArgs,
}

#[derive(Args, Debug)]
struct WarpArgs {
    #[arg(long)]
    video: PathBuf,
    #[arg(long)]
    depth: PathBuf,
    #[arg(long)]
    traj: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
enum MaskChoice {
    TrainingFree,
    Encoder,
    BinaryBaseline,
}

impl MaskChoice {
    fn name(self) -> &'static str {
        match self {
            MaskChoice::TrainingFree => "training_free",
            MaskChoice::Encoder => "encoder",
            MaskChoice::BinaryBaseline => "binary_baseline",
        }
    }

    fn parse(s: &str) -> Option<Self> {
        [MaskChoice::TrainingFree, MaskChoice::Encoder, MaskChoice::BinaryBaseline]
            .into_iter()
            .find(|m| m.name() == s || m.to_possible_value().is_some_and(|v| v.matches(s, false)))
    }
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum BackendChoice {
    Cg,
    ClosedForm,
}

/// JSON pipeline configuration; command-line flags take precedence.
/// Relative paths resolve against the file's directory.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub codec: Option<PathBuf>,
    pub flow: Option<PathBuf>,
    pub mask_encoder: Option<PathBuf>,
    pub mask_source: Option<String>,
    pub mask_activation: MaskActivation,
    pub solver: SolverConfig,
    pub trajectory: Option<PathBuf>,
    pub video: Option<PathBuf>,
    pub depth: Option<PathBuf>,
    pub measurement: Option<PathBuf>,
    pub mask: Option<PathBuf>,
    pub dataset: Option<PathBuf>,
    pub output: Option<PathBuf>,
}

impl PipelineConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let mut cfg: PipelineConfig = read_json(path)?;
        let base = path.parent().unwrap_or(Path::new("."));
        let fields = [
            &mut cfg.codec,
            &mut cfg.flow,
            &mut cfg.mask_encoder,
            &mut cfg.trajectory,
            &mut cfg.video,
            &mut cfg.depth,
            &mut cfg.measurement,
            &mut cfg.mask,
            &mut cfg.dataset,
            &mut cfg.output,
        ];
        for f in fields {
            if let Some(p) = f.as_mut() {
                if p.is_relative() {
                    *p = base.join(&*p);
                }
            }
        }
        let inputs = [
            &cfg.codec,
            &cfg.flow,
            &cfg.mask_encoder,
            &cfg.trajectory,
            &cfg.video,
            &cfg.depth,
            &cfg.measurement,
            &cfg.mask,
            &cfg.dataset,
        ];
        let missing: Vec<String> = inputs
            .into_iter()
            .flatten()
            .filter(|p| !p.exists())
            .map(|p| p.display().to_string())
            .collect();
        if !missing.is_empty() {
            return Err(Error::MissingArtifacts(missing));
        }
        cfg.solver.validate()?;
        Ok(cfg)
    }
}

#[derive(Args, Debug, Clone)]
struct SolveOpts {
    /// Pipeline configuration file (JSON).
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    codec: Option<PathBuf>,
    #[arg(long)]
    flow: Option<PathBuf>,
    #[arg(long)]
    maskenc: Option<PathBuf>,
    /// Source video; warped along `--traj` unless a measurement is given.
    #[arg(long)]
    video: Option<PathBuf>,
    #[arg(long)]
    depth: Option<PathBuf>,
    #[arg(long)]
    traj: Option<PathBuf>,
    #[arg(long)]
    measurement: Option<PathBuf>,
    #[arg(long)]
    mask: Option<PathBuf>,
    #[arg(long, value_enum)]
    mask_source: Option<MaskChoice>,
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    gamma: Option<f64>,
    #[arg(long)]
    cg_iters: Option<usize>,
    #[arg(long)]
    cg_tol: Option<f64>,
    #[arg(long)]
    steps: Option<usize>,
    #[arg(long, value_enum)]
    backend: Option<BackendChoice>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct SolveArgs {
    #[command(flatten)]
    opts: SolveOpts,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum SweepKind {
    Alpha,
    Mask,
    Dds,
}

#[derive(Args, Debug)]
struct AblateArgs {
    #[command(flatten)]
    opts: SolveOpts,
    #[arg(long, value_enum)]
    sweep: SweepKind,
    /// Comma-separated sweep values (alphas, mask sources, or `latent,pixel`).
    #[arg(long, value_delimiter = ',')]
    values: Vec<String>,
    /// Repetitions per value for the timing sweep.
    #[arg(long, default_value_t = 3)]
    trials: usize,
}

#[derive(Args, Debug)]
struct EvalArgs {
    #[arg(long)]
    run: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum ImageFormat {
    Ppm,
    Png,
}

#[derive(Args, Debug)]
struct ExportArgs {
    #[arg(long)]
    video: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, value_enum, default_value_t = ImageFormat::Ppm)]
    format: ImageFormat,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

/// Parses `argv` (program name first), runs the subcommand, and returns the
/// process exit code.
pub fn run<I, S>(argv: I) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<OsString> + Clone,
{
    let _ = env_logger::Builder::from_env(env_logger::Env::new().filter_or(LOG_ENV, "warn")).try_init();
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    match dispatch(cli.command) {
        Ok(()) => EXIT_OK,
        Err(CliError::Usage(msg)) => {
            eprintln!("error: {msg}");
            EXIT_USAGE
        }
        Err(CliError::Runtime(e)) => {
            eprintln!("error: {e}");
            EXIT_RUNTIME
        }
    }
}

fn dispatch(cmd: Command) -> CliResult<()> {
    match cmd {
        Command::Synth(a) => cmd_synth(a),
        Command::TrainCodec(a) => cmd_train_codec(a),
        Command::TrainFlow(a) => cmd_train_flow(a),
        Command::TrainMaskenc(a) => cmd_train_maskenc(a),
        Command::Warp(a) => cmd_warp(a),
        Command::Solve(a) => cmd_solve(a),
        Command::Ablate(a) => cmd_ablate(a),
        Command::Eval(a) => {
            let report = eval_report(&a.run)?;
            println!("{} entries written to {}", report.entries.len(), a.run.join("report.json").display());
            Ok(())
        }
        Command::Export(a) => {
            let video: Video<f64> = Tensor::read(&a.video)?.to_video()?;
            let files = export_frames(&video, &a.out, a.format)?;
            println!("{} frames written to {}", files.len(), a.out.display());
            Ok(())
        }
    }
}

fn cmd_synth(a: SynthArgs) -> CliResult<()> {
    let mut pool = Vec::new();
    if a.trajectories.is_empty() {
        pool = TrajectorySpec::default_pool();
    } else {
        let defaults = TrajectorySpec::default_pool();
        for name in &a.trajectories {
            if name == IDENTITY_KIND {
                pool.push(TrajectorySpec::identity());
                continue;
            }
            let kind: TrajectoryKind = match name.parse() {
                Ok(k) => k,
                Err(_) => return usage(format!("--trajectories: unknown kind `{name}`")),
            };
            pool.push(defaults.iter().find(|d| d.kind == kind).expect("pool covers all kinds").clone());
        }
    }
    if let Some(m) = a.magnitude {
        for p in &mut pool {
            if p.magnitude != 0.0 {
                p.magnitude = m;
            }
        }
    }
    let spec = match &a.codec {
        Some(dir) => load_codec(dir)?.1,
        None => make_linear_codec(a.rt, a.rs, a.channels)?,
    };
    let dims = VideoDims {
        frames: a.frames,
        height: a.height,
        width: a.width,
    };
    let manifest = gen_training_set(&a.out, a.n, a.seed, dims, a.layers, &pool, &spec)?;
    println!("{} samples written to {}", manifest.count, a.out.display());
    Ok(())
}

fn dataset_videos(dir: &Path) -> Result<Vec<Video<f64>>> {
    let (_, samples) = load_dataset(dir)?;
    let mut seen = std::collections::BTreeSet::new();
    Ok(samples
        .into_iter()
        .filter(|s| seen.insert(Tensor::from_video(&s.x).to_bytes()))
        .map(|s| s.x)
        .collect())
}

fn cmd_train_codec(a: TrainCodecArgs) -> CliResult<()> {
    let spec = match a.kind {
        CodecChoice::Linear => make_linear_codec(a.rt, a.rs, a.channels)?,
        CodecChoice::Mlp => {
            let Some(data) = &a.data else {
                return usage("--data is required for --kind mlp");
            };
            let videos = dataset_videos(data)?;
            let out = train_codec(&videos, a.rt, a.rs, a.channels, &a.train.config(TrainingConfig::default()))?;
            log::info!("codec final loss {:?}", out.epoch_losses.last());
            out.spec
        }
    };
    let m = save_codec(&a.out, &spec)?;
    println!("{} codec written to {} ({})", m.kind, a.out.display(), m.checksum);
    Ok(())
}

fn cmd_train_flow(a: TrainFlowArgs) -> CliResult<()> {
    let (_, spec) = load_codec(&a.codec)?;
    let latents: Vec<Vec<f64>> = dataset_videos(&a.data)?
        .iter()
        .map(|x| encode(&spec, x).map(|z| z.into_vec()))
        .collect::<Result<_>>()?;
    let model = match a.kind {
        FlowChoice::Gaussian => VelocityModel::GaussianAnalytic(GaussianPrior::fit(&latents)?),
        FlowChoice::Mlp => {
            let out = train_flow(&latents, a.hidden, &a.train.config(TrainingConfig::default()))?;
            VelocityModel::Mlp(out.model)
        }
    };
    let m = save_flow(&a.out, &model)?;
    println!("{} prior over {} dims written to {}", m.kind, m.dims, a.out.display());
    Ok(())
}

fn cmd_train_maskenc(a: TrainMaskencArgs) -> CliResult<()> {
    let (manifest, samples) = load_dataset(&a.data)?;
    let pairs: Vec<MaskPair<f64>> = samples
        .into_iter()
        .map(|s| MaskPair {
            y: s.masked,
            m: s.m,
            h: s.h,
        })
        .collect();
    let out = train_mask_encoder(
        &pairs,
        manifest.rt,
        manifest.rs,
        a.lambda,
        &a.train.config(MaskEncoder::<f64>::default_training()),
    )?;
    save_mask_encoder(&a.out, &out.encoder)?;
    println!(
        "mask encoder written to {} (final loss {:.6})",
        a.out.display(),
        out.epoch_losses.last().copied().unwrap_or(f64::NAN)
    );
    Ok(())
}

/// Output of a warp: the measurement and its observation mask.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct WarpSummary {
    pub frames: usize,
    pub height: usize,
    pub width: usize,
    pub known: usize,
    pub coverage: f64,
}

fn load_warp_inputs(video: &Path, depth: &Path, traj: &Path) -> Result<(Video<f64>, Video<f64>, PixelMask)> {
    let x: Video<f64> = Tensor::read(video)?.to_video()?;
    let d: DepthMap<f64> = Tensor::read(depth)?.to_depth()?;
    let traj = TrajectoryFile::load(traj)?.build(median_depth(&d))?;
    let (y, m) = warp_video(&x, &d, &traj)?;
    Ok((x, y, m))
}

fn cmd_warp(a: WarpArgs) -> CliResult<()> {
    let (_, y, m) = load_warp_inputs(&a.video, &a.depth, &a.traj)?;
    Tensor::from_video(&y).write(&a.out.join("measurement.bt"))?;
    Tensor::from_mask(&m).write(&a.out.join("mask.bt"))?;
    let (frames, height, width) = m.dims();
    let summary = WarpSummary {
        frames,
        height,
        width,
        known: m.count_known(),
        coverage: m.coverage(),
    };
    write_json(&a.out.join("warp.json"), &summary)?;
    println!("coverage {}", summary.coverage);
    Ok(())
}

/// Everything a solve needs, resolved from config and flags.
struct SolveSetup {
    spec: CodecSpec<f64>,
    model: VelocityModel<f64>,
    encoder: Option<MaskEncoder<f64>>,
    x_src: Option<Video<f64>>,
    y: Video<f64>,
    m: PixelMask,
    mask_source: MaskChoice,
    activation: MaskActivation,
    solver: SolverConfig,
    out: PathBuf,
    checksums: BTreeMap<String, String>,
}

fn resolve(opts: &SolveOpts) -> CliResult<SolveSetup> {
    let cfg = match &opts.config {
        Some(p) => PipelineConfig::load(p)?,
        None => PipelineConfig::default(),
    };
    let pick = |flag: &Option<PathBuf>, conf: &Option<PathBuf>| flag.clone().or_else(|| conf.clone());
    let Some(codec_dir) = pick(&opts.codec, &cfg.codec) else {
        return usage("--codec is required");
    };
    let Some(flow_dir) = pick(&opts.flow, &cfg.flow) else {
        return usage("--flow is required");
    };
    let Some(out) = pick(&opts.out, &cfg.output) else {
        return usage("--out is required");
    };
    let mut solver = cfg.solver.clone();
    if let Some(v) = opts.alpha {
        solver.alpha = v;
    }
    if let Some(v) = opts.gamma {
        solver.gamma = v;
    }
    if let Some(v) = opts.cg_iters {
        solver.cg_iters = v;
    }
    if let Some(v) = opts.cg_tol {
        solver.cg_tol = v;
    }
    if let Some(v) = opts.steps {
        solver.steps = v;
    }
    if let Some(v) = opts.seed {
        solver.seed = v;
    }
    if let Some(b) = opts.backend {
        solver.backend = match b {
            BackendChoice::Cg => ConsistencyBackend::Cg,
            BackendChoice::ClosedForm => ConsistencyBackend::ClosedForm,
        };
    }
    if let Err(e) = solver.validate() {
        return usage(e.to_string());
    }
    let mask_source = match (opts.mask_source, &cfg.mask_source) {
        (Some(m), _) => m,
        (None, Some(name)) => match MaskChoice::parse(name) {
            Some(m) => m,
            None => return usage(format!("unknown mask_source `{name}` in config")),
        },
        (None, None) => MaskChoice::TrainingFree,
    };

    let mut checksums = BTreeMap::new();
    let (_, spec) = load_codec(&codec_dir)?;
    checksums.insert("codec".to_string(), file_sha256(&codec_dir.join(CODEC_TENSOR))?);
    let (_, model) = load_flow(&flow_dir)?;
    checksums.insert("flow".to_string(), file_sha256(&flow_dir.join(FLOW_TENSOR))?);
    let encoder = match pick(&opts.maskenc, &cfg.mask_encoder) {
        Some(dir) => {
            checksums.insert("mask_encoder".to_string(), file_sha256(&dir.join(MASKENC_TENSOR))?);
            Some(load_mask_encoder(&dir)?.1)
        }
        None => None,
    };

    let video = pick(&opts.video, &cfg.video);
    let measurement = pick(&opts.measurement, &cfg.measurement);
    let (x_src, y, m) = match (&measurement, &video) {
        (Some(yp), _) => {
            let Some(mp) = pick(&opts.mask, &cfg.mask) else {
                return usage("--mask is required with --measurement");
            };
            let y: Video<f64> = Tensor::read(yp)?.to_video()?;
            let m = Tensor::read(&mp)?.to_mask()?;
            let x = match &video {
                Some(v) => Some(Tensor::read(v)?.to_video()?),
                None => None,
            };
            (x, y, m)
        }
        (None, Some(vp)) => {
            let Some(dp) = pick(&opts.depth, &cfg.depth) else {
                return usage("--depth is required to warp --video");
            };
            let Some(tp) = pick(&opts.traj, &cfg.trajectory) else {
                return usage("--traj is required to warp --video");
            };
            let (x, y, m) = load_warp_inputs(vp, &dp, &tp)?;
            (Some(x), y, m)
        }
        (None, None) => return usage("either --video (with --depth and --traj) or --measurement is required"),
    };
    if mask_source == MaskChoice::TrainingFree && x_src.is_none() {
        return usage("--mask-source training-free needs the source --video");
    }
    if mask_source == MaskChoice::Encoder && encoder.is_none() {
        return usage("--mask-source encoder needs --maskenc");
    }
    Ok(SolveSetup {
        spec,
        model,
        encoder,
        x_src,
        y,
        m,
        mask_source,
        activation: cfg.mask_activation,
        solver,
        out,
        checksums,
    })
}

impl SolveSetup {
    fn source(&self, choice: MaskChoice) -> MaskSource<'_, f64> {
        match choice {
            MaskChoice::TrainingFree => MaskSource::TrainingFree {
                x_src: self.x_src.as_ref().expect("checked in resolve"),
                activation: self.activation,
            },
            MaskChoice::Encoder => MaskSource::Encoder(self.encoder.as_ref().expect("checked in resolve")),
            MaskChoice::BinaryBaseline => MaskSource::BinaryBaseline,
        }
    }

    fn write_inputs(&self) -> Result<()> {
        Tensor::from_video(&self.y).write(&self.out.join("measurement.bt"))?;
        Tensor::from_mask(&self.m).write(&self.out.join("mask.bt"))
    }

    /// Writes a run's tensors under `sub` and returns its manifest record.
    fn record(&self, name: &str, sub: &str, mask: &str, cfg: &SolverConfig, out: &SolveOutcome<f64>) -> Result<RunRecord> {
        let rel = |f: &str| if sub.is_empty() { f.to_string() } else { format!("{sub}/{f}") };
        Tensor::from_video(&out.video).write(&self.out.join(rel("output.bt")))?;
        Tensor::from_latent(&out.latent).write(&self.out.join(rel("latent.bt")))?;
        Tensor::from_latent(out.h.as_latent()).write(&self.out.join(rel("h.bt")))?;
        // score the stored (f32) output so the record matches a later eval
        let stored: Video<f64> = Tensor::read(&self.out.join(rel("output.bt")))?.to_video()?;
        let y: Video<f64> = Tensor::read(&self.out.join("measurement.bt"))?.to_video()?;
        let p = masked_psnr(&stored, &y, &self.m)?;
        Ok(RunRecord {
            name: name.to_string(),
            config: serde_json::to_value(cfg).expect("solver config serializes"),
            mask_source: mask.to_string(),
            mask_mean: out.h.mean(),
            output: rel("output.bt"),
            measurement: "measurement.bt".to_string(),
            mask: "mask.bt".to_string(),
            checksums: self.checksums.clone(),
            timing: out.timing.clone(),
            step_ms: out.steps.iter().map(|s| s.velocity_ms + s.consistency_ms).collect(),
            terminal_psnr: (!p.is_exact()).then(|| p.db()),
        })
    }
}

fn cmd_solve(a: SolveArgs) -> CliResult<()> {
    let s = resolve(&a.opts)?;
    let out = solve_latent_inpaint(&s.y, &s.m, &s.source(s.mask_source), &s.model, &s.spec, &s.solver)?;
    s.write_inputs()?;
    let rec = s.record("solve", "", s.mask_source.name(), &s.solver, &out)?;
    let psnr = rec.terminal_psnr;
    RunManifest {
        schema: 1,
        runs: vec![rec],
    }
    .save(&s.out)?;
    match psnr {
        Some(p) => println!("measurement PSNR {p:.3} dB"),
        None => println!("measurement PSNR +inf (exact match)"),
    }
    Ok(())
}

const CSV_HEADER: &str =
    "sweep,value,trial,measurement_psnr,ssim,mask_mean,consistency_steps,per_consistency_step_ms,encode_decode_share";

fn cmd_ablate(a: AblateArgs) -> CliResult<()> {
    let s = resolve(&a.opts)?;
    s.write_inputs()?;
    let mut runs = Vec::new();
    let mut rows: Vec<(String, usize)> = Vec::new();
    match a.sweep {
        SweepKind::Alpha => {
            let values = if a.values.is_empty() {
                vec!["0".into(), "0.2".into(), "0.4".into(), "0.6".into(), "0.8".into(), "1.0".into()]
            } else {
                a.values.clone()
            };
            for (i, v) in values.iter().enumerate() {
                let Ok(alpha) = v.parse::<f64>() else {
                    return usage(format!("--values: `{v}` is not a number"));
                };
                let cfg = SolverConfig {
                    alpha,
                    ..s.solver.clone()
                };
                if let Err(e) = cfg.validate() {
                    return usage(format!("--values: {e}"));
                }
                let out = solve_latent_inpaint(&s.y, &s.m, &s.source(s.mask_source), &s.model, &s.spec, &cfg)?;
                runs.push(s.record(&format!("alpha={v}"), &format!("run_{i:02}"), s.mask_source.name(), &cfg, &out)?);
                rows.push((v.clone(), 0));
            }
        }
        SweepKind::Mask => {
            let values: Vec<String> = if a.values.is_empty() {
                let mut v = vec!["training_free".to_string(), "binary_baseline".to_string()];
                if s.encoder.is_some() {
                    v.push("encoder".into());
                }
                v
            } else {
                a.values.clone()
            };
            for (i, v) in values.iter().enumerate() {
                let Some(choice) = MaskChoice::parse(v) else {
                    return usage(format!("--values: unknown mask source `{v}`"));
                };
                if choice == MaskChoice::TrainingFree && s.x_src.is_none() {
                    return usage("training_free needs the source --video");
                }
                if choice == MaskChoice::Encoder && s.encoder.is_none() {
                    return usage("encoder needs --maskenc");
                }
                let out = solve_latent_inpaint(&s.y, &s.m, &s.source(choice), &s.model, &s.spec, &s.solver)?;
                runs.push(s.record(&format!("mask={v}"), &format!("run_{i:02}"), choice.name(), &s.solver, &out)?);
                rows.push((v.clone(), 0));
            }
        }
        SweepKind::Dds => {
            let values = if a.values.is_empty() {
                vec!["latent".to_string(), "pixel".to_string()]
            } else {
                a.values.clone()
            };
            let mut i = 0;
            for trial in 0..a.trials.max(1) {
                for v in &values {
                    let out = match v.as_str() {
                        "latent" => solve_latent_inpaint(&s.y, &s.m, &s.source(s.mask_source), &s.model, &s.spec, &s.solver)?,
                        "pixel" => solve_pixel_dds(&s.y, &s.m, &s.model, &s.spec, &s.solver)?,
                        other => return usage(format!("--values: unknown dds variant `{other}`")),
                    };
                    let mask = if v == "pixel" { "binary_baseline" } else { s.mask_source.name() };
                    runs.push(s.record(&format!("dds={v}#{trial}"), &format!("run_{i:02}"), mask, &s.solver, &out)?);
                    rows.push((v.clone(), trial));
                    i += 1;
                }
            }
        }
    }
    RunManifest { schema: 1, runs }.save(&s.out)?;
    let report = eval_report(&s.out)?;
    let sweep = match a.sweep {
        SweepKind::Alpha => "alpha",
        SweepKind::Mask => "mask",
        SweepKind::Dds => "dds",
    };
    let mut csv = String::from(CSV_HEADER);
    csv.push('\n');
    for ((value, trial), e) in rows.iter().zip(&report.entries) {
        let psnr = e.measurement_psnr.map(|p| format!("{p:.6}")).unwrap_or_else(|| "inf".into());
        csv.push_str(&format!(
            "{sweep},{value},{trial},{psnr},{:.6},{:.6},{},{:.6},{:.6}\n",
            e.ssim,
            e.mask_mean,
            e.timing.consistency_steps,
            e.timing.per_consistency_step_ms,
            e.timing.encode_decode_share
        ));
    }
    write_atomic(&s.out.join("ablation.csv"), csv.as_bytes())?;
    print!("{csv}");
    let _ = std::io::stdout().flush();
    Ok(())
}

fn quantize(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// Writes frame `i` as `{i:03}.ppm` or `{i:03}.png`, values clipped to
/// `[0, 1]` and rounded to 8 bits. Returns the written paths.
pub fn export_frames(video: &Video<f64>, out_dir: &Path, format: ImageFormat) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let (f, h, w) = video.dims();
    let mut paths = Vec::with_capacity(f);
    for t in 0..f {
        let bytes: Vec<u8> = video.frame_slice(t).iter().map(|&v| quantize(v)).collect();
        let path = match format {
            ImageFormat::Ppm => {
                let path = out_dir.join(format!("{t:03}.ppm"));
                let mut data = format!("P6\n{w} {h}\n255\n").into_bytes();
                data.extend_from_slice(&bytes);
                write_atomic(&path, &data)?;
                path
            }
            ImageFormat::Png => {
                let path = out_dir.join(format!("{t:03}.png"));
                let img = image::RgbImage::from_raw(w as u32, h as u32, bytes).expect("buffer matches dims");
                img.save_with_format(&path, image::ImageFormat::Png)
                    .map_err(|e| Error::io(&path, std::io::Error::other(e)))?;
                path
            }
        };
        paths.push(path);
    }
    Ok(paths)
}

/// Reads a binary (`P6`, maxval 255) PPM as one frame of values in `[0, 1]`.
pub fn read_ppm(path: &Path) -> Result<Video<f64>> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let bad = || Error::InvalidArgument(format!("{} is not a binary 8-bit PPM", path.display()));
    let mut fields = Vec::with_capacity(4);
    let mut pos = 0;
    while fields.len() < 4 {
        while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(bad());
        }
        fields.push(String::from_utf8_lossy(&bytes[start..pos]).into_owned());
    }
    pos += 1;
    let parse = |s: &str| s.parse::<usize>().map_err(|_| bad());
    if fields[0] != "P6" || parse(&fields[3])? != 255 {
        return Err(bad());
    }
    let (w, h) = (parse(&fields[1])?, parse(&fields[2])?);
    let data = bytes.get(pos..pos + w * h * 3).ok_or_else(bad)?;
    Video::from_vec(1, h, w, data.iter().map(|&b| b as f64 / 255.0).collect())
}
