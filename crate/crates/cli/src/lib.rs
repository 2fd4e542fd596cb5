//! `uniisp` command-line tool: dataset generation, training, evaluation,
//! image applications and the `/v1` inference service.

pub mod engine;
pub mod io;
pub mod server;

use std::ffi::OsString;
use std::net::SocketAddr;
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::{json, Value};
use uniisp_core::apps::{export_internal_features, write_feature_csv, FeatureInput, DEFAULT_HDR_GAINS, DEFAULT_SPLICE_TAU};
use uniisp_core::eval::FINAL_CHECKPOINT;
use uniisp_core::model::{load_checkpoint, save_checkpoint, Checkpoint};
use uniisp_core::synth::{build_dataset, scene_id, Dataset, ExifParams, SampleSource, Split, SyntheticSource};
use uniisp_core::train::{evaluate, extend_few_shot, train, FewShotSample, RunOptions, TrainConfig};

use crate::engine::Engine;
use crate::server::{ServeOptions, DEFAULT_MAX_SIDE};

/// Version of the `--json` output envelope.
pub const JSON_SCHEMA_VERSION: u32 = 1;

#[derive(Parser, Debug)]
#[command(name = "uniisp", version, about = "Unified multi-camera learned ISP")]
pub struct Cli {
    /// Training/dataset configuration (TOML, `TrainConfig` layout).
    #[arg(long, global = true, value_name = "FILE")]
    pub config: Option<PathBuf>,
    /// Seed override: dataset seed for `dataset gen`, training seed otherwise.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Print a machine-readable JSON summary on stdout.
    #[arg(long, global = true)]
    pub json: bool,
    /// More logging on stderr (-v info, -vv debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Synthetic dataset commands.
    #[command(subcommand)]
    Dataset(DatasetCommand),
    /// Train a model.
    Train(TrainArgs),
    /// Add a camera to a checkpoint from a few samples.
    Extend(ExtendArgs),
    /// Per-camera inverse/forward PSNR and SSIM.
    Eval(EvalArgs),
    /// sRGB to XYZ with g.
    Invert(InvertArgs),
    /// XYZ to sRGB with h.
    Render(RenderArgs),
    /// Re-render an image as another camera.
    Transfer(TransferArgs),
    /// Blend two cameras' renderings in feature space.
    Interp(InterpArgs),
    /// Identify the source camera by round-trip SSIM.
    Identify(IdentifyArgs),
    /// Locate spliced regions by round-trip SSIM.
    Splice(SpliceArgs),
    /// Exposure-fused HDR rendering from one image.
    Hdr(HdrArgs),
    /// Export pooled internal features as CSV.
    ExportFeatures(ExportArgs),
    /// Run the HTTP inference service.
    Serve(ServeArgs),
}

#[derive(Subcommand, Debug)]
pub enum DatasetCommand {
    /// Render a synthetic dataset to disk.
    Gen(DatasetGenArgs),
}

#[derive(Args, Debug)]
pub struct DatasetGenArgs {
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub scenes: Option<usize>,
    #[arg(long)]
    pub cameras: Option<usize>,
    /// Scene side length in pixels.
    #[arg(long)]
    pub size: Option<usize>,
    /// Overwrite an existing dataset.
    #[arg(long)]
    pub force: bool,
}

#[derive(Args, Debug, Clone)]
pub struct SourceArgs {
    /// On-disk dataset; defaults to the configured synthetic dataset in memory.
    #[arg(long)]
    pub dataset: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    #[command(flatten)]
    pub source: SourceArgs,
    /// Run directory for checkpoints and metrics.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub steps: Option<usize>,
    /// Continue from the run directory's last checkpoint.
    #[arg(long)]
    pub resume: bool,
}

#[derive(Args, Debug)]
pub struct ExtendArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[command(flatten)]
    pub source: SourceArgs,
    /// Id for the new camera.
    #[arg(long)]
    pub camera: String,
    /// Dataset camera supplying the samples.
    #[arg(long)]
    pub from_camera: String,
    #[arg(long, default_value_t = 10)]
    pub samples: usize,
    #[arg(long, default_value_t = 300)]
    pub steps: usize,
    #[arg(long, default_value_t = 1e-2)]
    pub lr: f64,
    #[arg(long, default_value_t = 4)]
    pub batch: usize,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(ValueEnum, Clone, Copy, Debug)]
pub enum SplitArg {
    Train,
    Val,
    Test,
}

impl From<SplitArg> for Split {
    fn from(s: SplitArg) -> Split {
        match s {
            SplitArg::Train => Split::Train,
            SplitArg::Val => Split::Val,
            SplitArg::Test => Split::Test,
        }
    }
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[command(flatten)]
    pub source: SourceArgs,
    #[arg(long, value_enum, default_value = "test")]
    pub split: SplitArg,
    /// Limit the number of scenes (0 = all).
    #[arg(long, default_value_t = 0)]
    pub scenes: usize,
}

#[derive(Args, Debug, Clone, Default)]
pub struct ExifArgs {
    /// EXIF JSON file (as written by `dataset gen`).
    #[arg(long, value_name = "FILE")]
    pub exif: Option<PathBuf>,
    #[arg(long)]
    pub exposure_time: Option<f64>,
    #[arg(long)]
    pub iso: Option<f64>,
    #[arg(long)]
    pub f_number: Option<f64>,
}

impl ExifArgs {
    pub fn resolve(&self) -> Result<ExifParams> {
        let mut e = match &self.exif {
            Some(p) => serde_json::from_slice(&std::fs::read(p).with_context(|| format!("reading {}", p.display()))?)
                .with_context(|| format!("parsing {}", p.display()))?,
            None => ExifParams::unity(),
        };
        if let Some(v) = self.exposure_time {
            e.exposure_time = v;
        }
        if let Some(v) = self.iso {
            e.iso = v;
        }
        if let Some(v) = self.f_number {
            e.f_number = v;
        }
        e.validate()?;
        Ok(e)
    }
}

#[derive(Args, Debug)]
pub struct ImageArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub input: PathBuf,
    #[command(flatten)]
    pub exif: ExifArgs,
}

#[derive(Args, Debug)]
pub struct InvertArgs {
    #[command(flatten)]
    pub image: ImageArgs,
    /// Camera embedding; omit for the neutral profile.
    #[arg(long)]
    pub camera: Option<String>,
    /// Output `.imgf` (float) or `.png` (XYZ / 2, 16-bit).
    #[arg(long)]
    pub output: PathBuf,
}

#[derive(Args, Debug)]
pub struct RenderArgs {
    #[command(flatten)]
    pub image: ImageArgs,
    #[arg(long)]
    pub camera: Option<String>,
    #[arg(long)]
    pub output: PathBuf,
}

#[derive(Args, Debug)]
pub struct TransferArgs {
    #[command(flatten)]
    pub image: ImageArgs,
    #[arg(long)]
    pub source: String,
    #[arg(long)]
    pub target: String,
    #[arg(long)]
    pub output: PathBuf,
}

#[derive(Args, Debug)]
pub struct InterpArgs {
    #[command(flatten)]
    pub image: ImageArgs,
    #[arg(long)]
    pub source: String,
    #[arg(long)]
    pub target: String,
    #[arg(long, allow_hyphen_values = true)]
    pub alpha: f64,
    #[arg(long)]
    pub output: PathBuf,
}

#[derive(Args, Debug)]
pub struct IdentifyArgs {
    #[command(flatten)]
    pub image: ImageArgs,
    /// Comma-separated candidate cameras (default: all registered).
    #[arg(long, value_delimiter = ',')]
    pub candidates: Vec<String>,
}

#[derive(Args, Debug)]
pub struct SpliceArgs {
    #[command(flatten)]
    pub image: ImageArgs,
    #[arg(long)]
    pub camera: String,
    #[arg(long, default_value_t = DEFAULT_SPLICE_TAU, allow_hyphen_values = true)]
    pub tau: f64,
    /// Median-filtered mask PNG.
    #[arg(long)]
    pub mask_out: Option<PathBuf>,
    /// SSIM map as `.imgf`, or PNG holding (ssim + 1) / 2.
    #[arg(long)]
    pub map_out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct HdrArgs {
    #[command(flatten)]
    pub image: ImageArgs,
    #[arg(long)]
    pub camera: String,
    #[arg(long, value_delimiter = ',', default_values_t = DEFAULT_HDR_GAINS.to_vec())]
    pub gains: Vec<f64>,
    #[arg(long)]
    pub output: PathBuf,
    /// Also write the gained frames here.
    #[arg(long)]
    pub frames_dir: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct ExportArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[command(flatten)]
    pub source: SourceArgs,
    #[arg(long, value_enum, default_value = "test")]
    pub split: SplitArg,
    #[arg(long, default_value_t = 0)]
    pub scenes: usize,
    /// Cameras to embed (default: all registered).
    #[arg(long, value_delimiter = ',')]
    pub cameras: Vec<String>,
    /// Feed g(I, E_c) from this dataset camera instead of the reference XYZ.
    #[arg(long)]
    pub from_camera: Option<String>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct ServeArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long, default_value = "127.0.0.1:8080")]
    pub bind: SocketAddr,
    /// Concurrent inference limit (default: CPU count).
    #[arg(long)]
    pub workers: Option<usize>,
    /// Largest accepted image side in pixels.
    #[arg(long, default_value_t = DEFAULT_MAX_SIDE)]
    pub max_side: u32,
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Dataset(DatasetCommand::Gen(_)) => "dataset gen",
            Command::Train(_) => "train",
            Command::Extend(_) => "extend",
            Command::Eval(_) => "eval",
            Command::Invert(_) => "invert",
            Command::Render(_) => "render",
            Command::Transfer(_) => "transfer",
            Command::Interp(_) => "interp",
            Command::Identify(_) => "identify",
            Command::Splice(_) => "splice",
            Command::Hdr(_) => "hdr",
            Command::ExportFeatures(_) => "export-features",
            Command::Serve(_) => "serve",
        }
    }
}

fn load_config(cli: &Cli) -> Result<TrainConfig> {
    let mut cfg = match &cli.config {
        Some(p) => TrainConfig::load(p)?,
        None => TrainConfig::default(),
    };
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    Ok(cfg)
}

fn open_source(cfg: &TrainConfig, args: &SourceArgs) -> Result<Box<dyn SampleSource>> {
    match args.dataset.as_ref().or(cfg.dataset.as_ref()) {
        Some(d) => Ok(Box::new(Dataset::open(d)?)),
        None => Ok(Box::new(SyntheticSource::new(cfg.synthetic.clone())?)),
    }
}

fn scenes_of(source: &dyn SampleSource, split: SplitArg, limit: usize) -> Result<Vec<usize>> {
    let mut v = source.splits().get(split.into()).to_vec();
    if limit > 0 {
        v.truncate(limit);
    }
    if v.is_empty() {
        bail!("split {split:?} has no scenes");
    }
    Ok(v)
}

fn dataset_gen(cli: &Cli, a: &DatasetGenArgs) -> Result<Value> {
    let mut cfg = load_config(cli)?.synthetic;
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    if let Some(n) = a.scenes {
        cfg.scenes = n;
    }
    if let Some(n) = a.cameras {
        cfg.cameras = n;
    }
    if let Some(n) = a.size {
        cfg.height = n;
        cfg.width = n;
    }
    let m = build_dataset(&cfg, &a.out, a.force)?;
    Ok(json!({
        "dir": a.out,
        "seed": cfg.seed,
        "scenes": m.scene_count,
        "cameras": m.camera_ids,
        "splits": { "train": m.splits.train.len(), "val": m.splits.val.len(), "test": m.splits.test.len() },
        "checksum": m.checksum,
    }))
}

fn train_cmd(cli: &Cli, a: &TrainArgs) -> Result<Value> {
    let mut cfg = load_config(cli)?;
    if let Some(s) = a.steps {
        cfg.steps = s;
    }
    if let Some(d) = &a.source.dataset {
        cfg.dataset = Some(d.clone());
    }
    let source = open_source(&cfg, &a.source)?;
    std::fs::create_dir_all(&a.out).with_context(|| format!("creating {}", a.out.display()))?;
    std::fs::write(a.out.join("config.toml"), cfg.to_toml()?)?;
    let outcome = train(&cfg, source.as_ref(), &RunOptions { out_dir: Some(a.out.clone()), resume: a.resume, init: None })?;
    let final_path = a.out.join(FINAL_CHECKPOINT);
    save_checkpoint(&Checkpoint::model_only(outcome.model.clone()), &final_path)?;
    let last = outcome.history.last();
    Ok(json!({
        "steps": cfg.steps,
        "cameras": outcome.model.cameras(),
        "checkpoint": final_path,
        "validation": last.map(|r| json!({ "step": r.step, "losses": r.losses, "report": r.val })),
    }))
}

fn extend_cmd(cli: &Cli, a: &ExtendArgs) -> Result<Value> {
    let cfg = load_config(cli)?;
    let source = open_source(&cfg, &a.source)?;
    let model = load_checkpoint(&a.checkpoint)?.model;
    let cam = source.camera_index(&a.from_camera)?;
    let scenes = scenes_of(source.as_ref(), SplitArg::Train, a.samples)?;
    let samples = scenes
        .iter()
        .map(|&s| {
            let d = source.scene(s)?;
            Ok(FewShotSample { srgb: d.srgb[cam].clone(), xyz: d.xyz, exif: d.exif[cam] })
        })
        .collect::<Result<Vec<_>>>()?;
    let ext = extend_few_shot(&model, &a.camera, &samples, a.steps, a.lr, a.batch, cfg.seed)?;
    save_checkpoint(&Checkpoint::model_only(ext.clone()), &a.out)?;
    let trained = ext.embedding(&a.camera).map_or(0, |t| t.len());
    Ok(json!({ "camera": a.camera, "samples": samples.len(), "trained_values": trained, "checkpoint": a.out, "cameras": ext.cameras() }))
}

fn eval_cmd(cli: &Cli, a: &EvalArgs) -> Result<Value> {
    let cfg = load_config(cli)?;
    let source = open_source(&cfg, &a.source)?;
    let model = load_checkpoint(&a.checkpoint)?.model;
    let cams: Vec<(usize, String)> =
        source.camera_ids().iter().enumerate().filter(|(_, id)| model.has_camera(id)).map(|(i, id)| (i, id.clone())).collect();
    if cams.is_empty() {
        bail!("no dataset camera is registered in the checkpoint");
    }
    let scenes = scenes_of(source.as_ref(), a.split, a.scenes)?;
    let r = evaluate(&model, source.as_ref(), &scenes, &cams)?;
    Ok(json!({ "split": format!("{:?}", a.split).to_lowercase(), "scenes": scenes.len(), "report": r }))
}

fn image_io(a: &ImageArgs) -> Result<(Engine, ExifParams)> {
    Ok((Engine::load(&a.checkpoint)?, a.exif.resolve()?))
}

fn invert_cmd(a: &InvertArgs) -> Result<Value> {
    let (engine, exif) = image_io(&a.image)?;
    let img = io::read_srgb(&a.image.input)?;
    let xyz = engine.invert(&img, a.camera.as_deref(), &exif)?;
    io::write_xyz(&a.output, &xyz)?;
    Ok(json!({ "output": a.output, "camera": a.camera, "mean_xyz": xyz.raster().channel_means() }))
}

fn render_cmd(a: &RenderArgs) -> Result<Value> {
    let (engine, exif) = image_io(&a.image)?;
    let xyz = io::read_xyz(&a.image.input)?;
    let img = engine.render(&xyz, a.camera.as_deref(), &exif)?;
    io::write_srgb(&a.output, &img)?;
    Ok(json!({ "output": a.output, "camera": a.camera }))
}

fn transfer_cmd(a: &TransferArgs) -> Result<Value> {
    let (engine, exif) = image_io(&a.image)?;
    let img = engine.transfer(&io::read_srgb(&a.image.input)?, &a.source, &a.target, &exif)?;
    io::write_srgb(&a.output, &img)?;
    Ok(json!({ "output": a.output, "source": a.source, "target": a.target }))
}

fn interp_cmd(a: &InterpArgs) -> Result<Value> {
    let (engine, exif) = image_io(&a.image)?;
    let img = engine.interpolate(&io::read_srgb(&a.image.input)?, &a.source, &a.target, a.alpha, &exif)?;
    io::write_srgb(&a.output, &img)?;
    Ok(json!({ "output": a.output, "source": a.source, "target": a.target, "alpha": a.alpha }))
}

fn identify_cmd(a: &IdentifyArgs) -> Result<Value> {
    let (engine, exif) = image_io(&a.image)?;
    let all = engine.model.cameras().to_vec();
    let candidates: Vec<&str> = if a.candidates.is_empty() { all.iter().map(String::as_str).collect() } else { a.candidates.iter().map(String::as_str).collect() };
    let r = engine.identify(&io::read_srgb(&a.image.input)?, &candidates, &exif)?;
    Ok(serde_json::to_value(r)?)
}

fn splice_cmd(a: &SpliceArgs) -> Result<Value> {
    let (engine, exif) = image_io(&a.image)?;
    let m = engine.splice(&io::read_srgb(&a.image.input)?, &a.camera, &exif, a.tau)?;
    if let Some(p) = &a.mask_out {
        std::fs::write(p, io::encode_png(&m.mask)?).with_context(|| format!("writing {}", p.display()))?;
    }
    if let Some(p) = &a.map_out {
        if p.extension().is_some_and(|e| e == "imgf") {
            uniisp_core::imgf::write(p, &m.ssim_map)?;
        } else {
            std::fs::write(p, io::encode_png(&m.ssim_map.map(|v| 0.5 * (v + 1.0)))?).with_context(|| format!("writing {}", p.display()))?;
        }
    }
    Ok(json!({ "camera": a.camera, "tau": m.tau, "suspicious_fraction": m.suspicious_fraction(), "mean_ssim": m.ssim_map.mean() }))
}

fn hdr_cmd(a: &HdrArgs) -> Result<Value> {
    let (engine, exif) = image_io(&a.image)?;
    let stack = engine.hdr(&io::read_srgb(&a.image.input)?, &a.camera, &exif, &a.gains)?;
    io::write_srgb(&a.output, &stack.fused)?;
    let mut frames = Vec::new();
    if let Some(d) = &a.frames_dir {
        std::fs::create_dir_all(d)?;
        for (i, f) in stack.frames.iter().enumerate() {
            let p = d.join(format!("frame{i}.png"));
            io::write_srgb(&p, f)?;
            frames.push(p);
        }
    }
    Ok(json!({ "output": a.output, "gains": stack.gains, "frames": frames }))
}

fn export_cmd(cli: &Cli, a: &ExportArgs) -> Result<Value> {
    let cfg = load_config(cli)?;
    let source = open_source(&cfg, &a.source)?;
    let model = load_checkpoint(&a.checkpoint)?.model;
    let scenes = scenes_of(source.as_ref(), a.split, a.scenes)?;
    let from = a.from_camera.as_ref().map(|c| source.camera_index(c)).transpose()?;
    let mut inputs = Vec::new();
    for &s in &scenes {
        let d = source.scene(s)?;
        let input = match (from, &a.from_camera) {
            (Some(i), Some(id)) => {
                FeatureInput { scene_id: scene_id(s), xyz: model.inverse_isp(&d.srgb[i], Some(id), &d.exif[i])?, exif: d.exif[i], source_camera: Some(id.clone()) }
            }
            _ => FeatureInput { scene_id: scene_id(s), xyz: d.xyz, exif: ExifParams::unity(), source_camera: None },
        };
        inputs.push(input);
    }
    let all = model.cameras().to_vec();
    let cams: Vec<&str> = if a.cameras.is_empty() { all.iter().map(String::as_str).collect() } else { a.cameras.iter().map(String::as_str).collect() };
    let rows = export_internal_features(&model, &inputs, &cams)?;
    write_feature_csv(&rows, &a.out)?;
    Ok(json!({ "out": a.out, "rows": rows.len(), "scenes": scenes.len(), "cameras": cams, "dim": rows.first().map_or(0, |r| r.values.len()) }))
}

fn serve_cmd(a: &ServeArgs) -> Result<Value> {
    let engine = Engine::load(&a.checkpoint)?;
    let mut opts = ServeOptions { max_side: a.max_side, ..ServeOptions::default() };
    if let Some(w) = a.workers {
        opts.workers = w;
    }
    let rt = tokio::runtime::Runtime::new()?;
    rt.block_on(server::serve(engine, a.bind, opts))?;
    Ok(json!({ "stopped": true }))
}

pub fn execute(cli: &Cli) -> Result<Value> {
    match &cli.command {
        Command::Dataset(DatasetCommand::Gen(a)) => dataset_gen(cli, a),
        Command::Train(a) => train_cmd(cli, a),
        Command::Extend(a) => extend_cmd(cli, a),
        Command::Eval(a) => eval_cmd(cli, a),
        Command::Invert(a) => invert_cmd(a),
        Command::Render(a) => render_cmd(a),
        Command::Transfer(a) => transfer_cmd(a),
        Command::Interp(a) => interp_cmd(a),
        Command::Identify(a) => identify_cmd(a),
        Command::Splice(a) => splice_cmd(a),
        Command::Hdr(a) => hdr_cmd(a),
        Command::ExportFeatures(a) => export_cmd(cli, a),
        Command::Serve(a) => serve_cmd(a),
    }
}

fn print_human(v: &Value, indent: usize) {
    if let Value::Object(map) = v {
        for (k, val) in map {
            match val {
                Value::Object(_) => {
                    println!("{:indent$}{k}:", "");
                    print_human(val, indent + 2);
                }
                Value::String(s) => println!("{:indent$}{k}: {s}", ""),
                other => println!("{:indent$}{k}: {other}", ""),
            }
        }
    }
}

/// Parses `argv`, runs the command and reports. Exit codes: 0 success,
/// 1 failure, 2 usage error.
pub fn run<I, T>(argv: I) -> ExitCode
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(e.exit_code() as u8);
        }
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).format_timestamp_millis().try_init();
    let command = cli.command.name();
    match execute(&cli) {
        Ok(result) => {
            if cli.json {
                println!("{}", json!({ "schema_version": JSON_SCHEMA_VERSION, "command": command, "ok": true, "result": result }));
            } else {
                print_human(&result, 0);
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            if cli.json {
                println!("{}", json!({ "schema_version": JSON_SCHEMA_VERSION, "command": command, "ok": false, "error": format!("{e:#}") }));
            }
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
