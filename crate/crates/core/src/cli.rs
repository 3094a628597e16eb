//! Command-line front end. Every subcommand is a thin wrapper over a library
//! operation; outputs are accompanied by a `RunManifest` JSON file.
//!
//! Exit codes: 0 success, 2 input error (missing or malformed files), 3
//! configuration error, 4 internal invariant violation.

use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use rayon::prelude::*;
use serde::Serialize;

use crate::fusion::{self, BlobType, FusionConfig, FusionError, FusionParams};
use crate::metrics::{self, format_table, MetricsError, MotCounts, MotReport};
use crate::mot_io::{self, AnnotationRecord, FieldOrder, MotIoError, SequenceMeta};
use crate::motion_maps::{
    self, build_stack, BoxDensityProvider, ConstantProvider, DepthMode, FlowConfig, ImageFrame, MapError, Source,
    SourceProvider, SourceStack, SynthDepthProvider,
};
use crate::scenario_sim::{self, NoiseModel, ScenarioConfig, ScenarioError};
use crate::tracker::{self, TrackerConfig, TrackerError, TrackerMode};

pub const EXIT_OK: i32 = 0;
pub const EXIT_INPUT: i32 = 2;
pub const EXIT_CONFIG: i32 = 3;
pub const EXIT_INTERNAL: i32 = 4;

#[derive(Debug)]
pub enum CliError {
    Input(String),
    Config(String),
    Internal(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Input(_) => EXIT_INPUT,
            CliError::Config(_) => EXIT_CONFIG,
            CliError::Internal(_) => EXIT_INTERNAL,
        }
    }

    fn message(&self) -> &str {
        match self {
            CliError::Input(m) | CliError::Config(m) | CliError::Internal(m) => m,
        }
    }
}

impl From<MotIoError> for CliError {
    fn from(e: MotIoError) -> Self {
        match e {
            MotIoError::Meta(_) | MotIoError::ZeroFactor => CliError::Config(e.to_string()),
            _ => CliError::Input(e.to_string()),
        }
    }
}

impl From<TrackerError> for CliError {
    fn from(e: TrackerError) -> Self {
        match e {
            TrackerError::Config(_) => CliError::Config(e.to_string()),
            TrackerError::Detection(_) | TrackerError::OutOfOrder { .. } => CliError::Input(e.to_string()),
            _ => CliError::Internal(e.to_string()),
        }
    }
}

impl From<ScenarioError> for CliError {
    fn from(e: ScenarioError) -> Self {
        CliError::Config(e.to_string())
    }
}

impl From<MetricsError> for CliError {
    fn from(e: MetricsError) -> Self {
        match e {
            MetricsError::Threshold(_) => CliError::Config(e.to_string()),
            _ => CliError::Input(e.to_string()),
        }
    }
}

impl From<MapError> for CliError {
    fn from(e: MapError) -> Self {
        match e {
            MapError::FlowConfig(_) => CliError::Config(e.to_string()),
            _ => CliError::Input(e.to_string()),
        }
    }
}

impl From<FusionError> for CliError {
    fn from(e: FusionError) -> Self {
        match e {
            FusionError::Io { .. } | FusionError::Format(_) | FusionError::Source { .. } => {
                CliError::Input(e.to_string())
            }
            FusionError::Shape(_) | FusionError::MissingParam(_) | FusionError::Epsilon(_) => {
                CliError::Config(e.to_string())
            }
            FusionError::NonFinite(_) => CliError::Internal(e.to_string()),
        }
    }
}

type CliResult<T> = Result<T, CliError>;

#[derive(Debug, Parser)]
#[command(
    name = "headtrack",
    version,
    about = "Head tracking, map generation and MOT evaluation"
)]
struct Cli {
    /// Worker threads for per-sequence parallelism; 0 uses all cores.
    #[arg(long, global = true, default_value_t = 0)]
    jobs: usize,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Track detections into trajectories.
    Track(TrackArgs),
    /// CLEAR-MOT and identity metrics of predictions against ground truth.
    Evaluate(EvaluateArgs),
    /// Box, frame, density and aspect-ratio statistics of an annotation file.
    Stats(StatsArgs),
    /// Detection AP of scored boxes against ground truth.
    Ap(ApArgs),
    /// Simulate a crowd and write ground truth plus noisy detections.
    GenScenario(GenScenarioArgs),
    /// Build per-frame source stacks from a directory of PNG frames.
    GenMotion(GenMotionArgs),
    /// Run the fusion network on one source stack.
    FuseDemo(FuseDemoArgs),
    /// Keep every n-th frame of an annotation file.
    Resample(ResampleArgs),
}

#[derive(Debug, Args)]
struct OrderArg {
    /// Field order of annotation files: `id-first` (id, frame) or `standard` (frame, id).
    #[arg(long, default_value = "id-first")]
    order: FieldOrder,
}

#[derive(Debug, Args)]
struct TrackArgs {
    /// Detection file, or a directory of `*.txt` detection files.
    #[arg(long)]
    dets: PathBuf,
    /// Output file, or a directory when `--dets` is a directory.
    #[arg(long)]
    out: PathBuf,
    /// Tracker config (TOML).
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    mode: Option<TrackerMode>,
    #[arg(long)]
    high: Option<f64>,
    #[arg(long)]
    low: Option<f64>,
    #[arg(long)]
    iou_gate: Option<f64>,
    #[arg(long)]
    max_age: Option<u32>,
    #[arg(long)]
    n_init: Option<u32>,
    /// Sequence length; defaults to the largest detection frame.
    #[arg(long)]
    frames: Option<u32>,
    #[command(flatten)]
    order: OrderArg,
}

#[derive(Debug, Args)]
struct EvaluateArgs {
    /// Ground-truth file, or a directory of `*.txt` files.
    #[arg(long)]
    gt: PathBuf,
    /// Prediction file, or a directory with files named like the ground truth.
    #[arg(long)]
    pred: PathBuf,
    #[arg(long, default_value_t = metrics::DEFAULT_EVAL_IOU)]
    iou: f64,
    /// Writes the text table here and the JSON report next to it.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Print JSON instead of the text table.
    #[arg(long)]
    json: bool,
    #[command(flatten)]
    order: OrderArg,
}

#[derive(Debug, Args)]
struct StatsArgs {
    #[arg(long)]
    ann: PathBuf,
    /// Sequence length; defaults to the largest annotated frame.
    #[arg(long)]
    frames: Option<u32>,
    #[arg(long)]
    json: bool,
    #[command(flatten)]
    order: OrderArg,
}

#[derive(Debug, Args)]
struct ApArgs {
    #[arg(long)]
    gt: PathBuf,
    /// Scored boxes; the confidence column is the score.
    #[arg(long)]
    pred: PathBuf,
    #[arg(long, default_value_t = 0.5)]
    iou: f64,
    #[arg(long)]
    json: bool,
    #[command(flatten)]
    order: OrderArg,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
enum Preset {
    Default,
    Occlusion,
}

#[derive(Debug, Args)]
struct GenScenarioArgs {
    /// Scenario config (TOML); overrides the preset.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Noise model (TOML); overrides the preset.
    #[arg(long)]
    noise: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "default")]
    preset: Preset,
    /// Scenario seed; the noise seed becomes `seed + 1000`.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out_gt: PathBuf,
    #[arg(long)]
    out_dets: PathBuf,
    #[command(flatten)]
    order: OrderArg,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
enum DepthArg {
    VerticalGradient,
    Constant,
}

#[derive(Debug, Args)]
struct GenMotionArgs {
    /// Directory of PNG frames, taken in file-name order.
    #[arg(long)]
    frames_dir: PathBuf,
    /// One `<frame:06>/` stack directory per frame is written here.
    #[arg(long)]
    out_dir: PathBuf,
    /// Annotations whose boxes render the density maps; zero density without.
    #[arg(long)]
    ann: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "vertical-gradient")]
    depth: DepthArg,
    #[arg(long)]
    block_size: Option<usize>,
    #[arg(long)]
    search_radius: Option<usize>,
    #[arg(long)]
    pyramid_levels: Option<usize>,
    #[command(flatten)]
    order: OrderArg,
}

#[derive(Debug, Args)]
struct FuseDemoArgs {
    /// A stack directory as written by `gen-motion`.
    #[arg(long)]
    stack_dir: PathBuf,
    /// Parameter directory; random initialization from `--seed` without.
    #[arg(long)]
    params: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    alpha1: Option<f64>,
    #[arg(long)]
    beta1: Option<f64>,
    #[arg(long)]
    alpha2: Option<f64>,
    #[arg(long)]
    beta2: Option<f64>,
    /// Also save the parameters used.
    #[arg(long)]
    save_params: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    json: bool,
}

#[derive(Debug, Args)]
struct ResampleArgs {
    #[arg(long)]
    ann: PathBuf,
    #[arg(long)]
    factor: u32,
    #[arg(long)]
    out: PathBuf,
    /// Sequence metadata (TOML); the resampled copy is written next to `--out`.
    #[arg(long)]
    meta: Option<PathBuf>,
    #[command(flatten)]
    order: OrderArg,
}

/// Provenance record written next to every output.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunManifest {
    pub command: String,
    pub tool_version: String,
    pub seed: Option<u64>,
    pub config_paths: Vec<String>,
    pub inputs: Vec<String>,
    pub outputs: Vec<String>,
}

impl RunManifest {
    fn new(command: &str) -> Self {
        Self {
            command: command.into(),
            tool_version: env!("CARGO_PKG_VERSION").into(),
            seed: None,
            config_paths: Vec::new(),
            inputs: Vec::new(),
            outputs: Vec::new(),
        }
    }

    fn write_next_to(&self, output: &Path) -> CliResult<()> {
        let path = manifest_path(output);
        let text = serde_json::to_string_pretty(self).map_err(|e| CliError::Internal(e.to_string()))?;
        write_file(&path, text + "\n")
    }
}

/// `<dir>/manifest.json` for directories, `<file>.manifest.json` otherwise.
pub fn manifest_path(output: &Path) -> PathBuf {
    if output.is_dir() {
        output.join("manifest.json")
    } else {
        let mut name = output.file_name().map(OsString::from).unwrap_or_default();
        name.push(".manifest.json");
        output.with_file_name(name)
    }
}

fn show(p: &Path) -> String {
    p.display().to_string()
}

fn write_file(path: &Path, contents: impl AsRef<[u8]>) -> CliResult<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).map_err(|e| CliError::Input(format!("{}: {e}", parent.display())))?;
    }
    std::fs::write(path, contents).map_err(|e| CliError::Input(format!("{}: {e}", path.display())))
}

fn read_config(path: &Path) -> CliResult<String> {
    std::fs::read_to_string(path).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
}

/// Sorted `*.txt` files of a directory.
fn sequence_files(dir: &Path) -> CliResult<Vec<PathBuf>> {
    let entries = std::fs::read_dir(dir).map_err(|e| CliError::Input(format!("{}: {e}", dir.display())))?;
    let mut files: Vec<PathBuf> = entries
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_file() && p.extension().is_some_and(|x| x == "txt"))
        .collect();
    files.sort();
    if files.is_empty() {
        return Err(CliError::Input(format!("{}: no .txt files", dir.display())));
    }
    Ok(files)
}

fn sequence_name(path: &Path) -> String {
    path.file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default()
}

fn emit_json(out: &mut dyn Write, value: &impl Serialize) -> CliResult<()> {
    let text = serde_json::to_string_pretty(value).map_err(|e| CliError::Internal(e.to_string()))?;
    writeln!(out, "{text}").map_err(|e| CliError::Internal(e.to_string()))
}

fn emit(out: &mut dyn Write, text: &str) -> CliResult<()> {
    out.write_all(text.as_bytes())
        .map_err(|e| CliError::Internal(e.to_string()))
}

/// Parses `args` (program name first), runs the command and returns the
/// process exit code. Reports go to `out`, diagnostics to `err`.
pub fn run<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                let _ = write!(out, "{e}");
                return EXIT_OK;
            }
            let _ = write!(err, "{e}");
            return EXIT_INPUT;
        }
    };
    let pool = match rayon::ThreadPoolBuilder::new().num_threads(cli.jobs).build() {
        Ok(p) => p,
        Err(e) => {
            let _ = writeln!(err, "error: thread pool: {e}");
            return EXIT_CONFIG;
        }
    };
    let mut report = Vec::new();
    let result = pool.install(|| dispatch(cli.command, &mut report));
    let _ = out.write_all(&report);
    match result {
        Ok(()) => EXIT_OK,
        Err(e) => {
            let _ = writeln!(err, "error: {}", e.message());
            e.exit_code()
        }
    }
}

fn dispatch(cmd: Command, out: &mut dyn Write) -> CliResult<()> {
    match cmd {
        Command::Track(a) => cmd_track(a),
        Command::Evaluate(a) => cmd_evaluate(a, out),
        Command::Stats(a) => cmd_stats(a, out),
        Command::Ap(a) => cmd_ap(a, out),
        Command::GenScenario(a) => cmd_gen_scenario(a),
        Command::GenMotion(a) => cmd_gen_motion(a),
        Command::FuseDemo(a) => cmd_fuse_demo(a, out),
        Command::Resample(a) => cmd_resample(a),
    }
}

fn tracker_config(a: &TrackArgs) -> CliResult<TrackerConfig> {
    let mut cfg = match &a.config {
        Some(p) => TrackerConfig::from_toml_str(&read_config(p)?)?,
        None => TrackerConfig::default(),
    };
    if let Some(m) = a.mode {
        cfg.mode = m;
    }
    if let Some(v) = a.high {
        cfg.high_score_thresh = v;
    }
    if let Some(v) = a.low {
        cfg.low_score_thresh = v;
    }
    if let Some(v) = a.iou_gate {
        cfg.iou_gate = v;
    }
    if let Some(v) = a.max_age {
        cfg.max_age = v;
    }
    if let Some(v) = a.n_init {
        cfg.n_init = v;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn track_one(
    path: &Path,
    frames: Option<u32>,
    order: FieldOrder,
    cfg: &TrackerConfig,
) -> CliResult<Vec<AnnotationRecord>> {
    let dets = mot_io::read_annotation_file(path, order)?;
    let last = dets.iter().map(|r| r.frame).max().unwrap_or(0);
    let frame_count = frames.unwrap_or(last);
    if frame_count < last {
        return Err(CliError::Input(format!(
            "{}: --frames {frame_count} is smaller than the largest frame {last}",
            path.display()
        )));
    }
    Ok(tracker::track_records(&dets, frame_count, cfg)?)
}

fn cmd_track(a: TrackArgs) -> CliResult<()> {
    let cfg = tracker_config(&a)?;
    let order = a.order.order;
    let mut manifest = RunManifest::new("track");
    manifest.config_paths.extend(a.config.as_deref().map(show));
    if a.dets.is_dir() {
        let files = sequence_files(&a.dets)?;
        let results: Vec<CliResult<Vec<AnnotationRecord>>> =
            files.par_iter().map(|f| track_one(f, a.frames, order, &cfg)).collect();
        std::fs::create_dir_all(&a.out).map_err(|e| CliError::Input(format!("{}: {e}", a.out.display())))?;
        for (file, tracks) in files.iter().zip(results) {
            let target = a.out.join(file.file_name().unwrap_or_default());
            write_file(&target, mot_io::write_annotations(&tracks?, order))?;
            manifest.inputs.push(show(file));
            manifest.outputs.push(show(&target));
        }
    } else {
        let tracks = track_one(&a.dets, a.frames, order, &cfg)?;
        write_file(&a.out, mot_io::write_annotations(&tracks, order))?;
        manifest.inputs.push(show(&a.dets));
        manifest.outputs.push(show(&a.out));
    }
    manifest.write_next_to(&a.out)
}

#[derive(Debug, Serialize)]
struct SequenceReport {
    name: String,
    #[serde(flatten)]
    report: MotReport,
}

#[derive(Debug, Serialize)]
struct EvaluationReport {
    iou_threshold: f64,
    sequences: Vec<SequenceReport>,
    combined: MotReport,
}

fn evaluate_one(gt: &Path, pred: &Path, iou: f64, order: FieldOrder) -> CliResult<MotCounts> {
    let g = mot_io::read_annotation_file(gt, order)?;
    let p = if pred.exists() {
        mot_io::read_annotation_file(pred, order)?
    } else {
        Vec::new()
    };
    Ok(metrics::evaluate_counts(&g, &p, iou)?)
}

fn cmd_evaluate(a: EvaluateArgs, out: &mut dyn Write) -> CliResult<()> {
    if !(a.iou > 0.0 && a.iou <= 1.0) {
        return Err(MetricsError::Threshold(a.iou).into());
    }
    let order = a.order.order;
    let pairs: Vec<(String, PathBuf, PathBuf)> = if a.gt.is_dir() {
        if !a.pred.is_dir() {
            return Err(CliError::Input(format!("{}: expected a directory", a.pred.display())));
        }
        sequence_files(&a.gt)?
            .into_iter()
            .map(|g| {
                let p = a.pred.join(g.file_name().unwrap_or_default());
                (sequence_name(&g), g, p)
            })
            .collect()
    } else {
        if !a.pred.is_file() {
            return Err(CliError::Input(format!("{}: no such file", a.pred.display())));
        }
        vec![(sequence_name(&a.gt), a.gt.clone(), a.pred.clone())]
    };
    let counts: Vec<CliResult<MotCounts>> = pairs
        .par_iter()
        .map(|(_, g, p)| evaluate_one(g, p, a.iou, order))
        .collect();
    let counts: Vec<MotCounts> = counts.into_iter().collect::<CliResult<_>>()?;
    let mut sequences = Vec::with_capacity(pairs.len());
    for ((name, _, _), c) in pairs.iter().zip(&counts) {
        sequences.push(SequenceReport {
            name: name.clone(),
            report: MotReport::from_counts(c)?,
        });
    }
    let report = EvaluationReport {
        iou_threshold: a.iou,
        combined: metrics::aggregate(&counts)?,
        sequences,
    };
    let mut rows: Vec<(String, MotReport)> = report.sequences.iter().map(|s| (s.name.clone(), s.report)).collect();
    if rows.len() > 1 {
        rows.push(("COMBINED".into(), report.combined));
    }
    let table = format_table(&rows);
    if a.json {
        emit_json(out, &report)?;
    } else {
        emit(out, &table)?;
    }
    if let Some(path) = &a.out {
        let json_path = path.with_extension("json");
        write_file(path, &table)?;
        let json = serde_json::to_string_pretty(&report).map_err(|e| CliError::Internal(e.to_string()))?;
        write_file(&json_path, json + "\n")?;
        let mut manifest = RunManifest::new("evaluate");
        for (_, g, p) in &pairs {
            manifest.inputs.push(show(g));
            manifest.inputs.push(show(p));
        }
        manifest.outputs = vec![show(path), show(&json_path)];
        manifest.write_next_to(path)?;
    }
    Ok(())
}

#[derive(Debug, Serialize)]
struct HistogramBin {
    lower: f64,
    upper: f64,
    count: usize,
}

#[derive(Debug, Serialize)]
struct StatsReport {
    boxes: usize,
    frames: u32,
    density: f64,
    tracks: usize,
    /// Share of boxes with height/width ratio in [0.8, 1.4].
    ratio_mass_0_8_to_1_4: f64,
    ratio_histogram: Vec<HistogramBin>,
}

fn cmd_stats(a: StatsArgs, out: &mut dyn Write) -> CliResult<()> {
    let records = mot_io::read_annotation_file(&a.ann, a.order.order)?;
    if records.is_empty() {
        return Err(CliError::Input(format!("{}: no annotations", a.ann.display())));
    }
    let frames = a
        .frames
        .unwrap_or_else(|| records.iter().map(|r| r.frame).max().unwrap_or(0));
    let stats = mot_io::compute_stats(&records, frames)?;
    let report = StatsReport {
        boxes: stats.boxes,
        frames: stats.frames,
        density: stats.density,
        tracks: stats.tracks,
        ratio_mass_0_8_to_1_4: stats.ratio_mass_in(0.8, 1.4),
        ratio_histogram: stats
            .ratio_histogram
            .iter()
            .map(|&(lower, count)| HistogramBin {
                lower,
                upper: lower + mot_io::RATIO_BIN_WIDTH,
                count,
            })
            .collect(),
    };
    if a.json {
        return emit_json(out, &report);
    }
    let mut text = format!(
        "boxes    {}\nframes   {}\ndensity  {:.2}\ntracks   {}\nh/w ratio in [0.8, 1.4]  {:.2}%\n\nh/w ratio histogram\n",
        report.boxes,
        report.frames,
        report.density,
        report.tracks,
        100.0 * report.ratio_mass_0_8_to_1_4
    );
    for b in &report.ratio_histogram {
        text.push_str(&format!("  [{:.2}, {:.2})  {}\n", b.lower, b.upper, b.count));
    }
    emit(out, &text)
}

#[derive(Debug, Serialize)]
struct ApReport {
    iou_threshold: f64,
    ap: f64,
    gt_boxes: usize,
    predictions: usize,
}

fn cmd_ap(a: ApArgs, out: &mut dyn Write) -> CliResult<()> {
    if !(a.iou > 0.0 && a.iou <= 1.0) {
        return Err(MetricsError::Threshold(a.iou).into());
    }
    let gt = mot_io::read_annotation_file(&a.gt, a.order.order)?;
    let pred = mot_io::read_annotation_file(&a.pred, a.order.order)?;
    let report = ApReport {
        iou_threshold: a.iou,
        ap: metrics::detection_ap(&gt, &pred, a.iou)?,
        gt_boxes: gt.len(),
        predictions: pred.len(),
    };
    if a.json {
        emit_json(out, &report)
    } else {
        emit(out, &format!("AP@{:.2}  {:.2}\n", report.iou_threshold, report.ap))
    }
}

fn cmd_gen_scenario(a: GenScenarioArgs) -> CliResult<()> {
    let (mut cfg, mut noise) = match a.preset {
        Preset::Default => (ScenarioConfig::default(), NoiseModel::zero()),
        Preset::Occlusion => scenario_sim::occlusion_scenario(0),
    };
    if let Some(p) = &a.config {
        cfg = ScenarioConfig::from_toml_str(&read_config(p)?)?;
    }
    if let Some(p) = &a.noise {
        noise = NoiseModel::from_toml_str(&read_config(p)?)?;
    }
    if let Some(s) = a.seed {
        cfg.seed = s;
        noise.seed = s.wrapping_add(1000);
    }
    let (gt, meta) = scenario_sim::simulate(&cfg)?;
    let dets = scenario_sim::corrupt(&gt, &meta, &noise)?;
    let order = a.order.order;
    let meta_path = a.out_gt.with_extension("toml");
    write_file(&a.out_gt, mot_io::write_annotations(&gt, order))?;
    write_file(&a.out_dets, mot_io::write_annotations(&dets, order))?;
    write_file(&meta_path, meta.to_toml_string())?;
    let mut manifest = RunManifest::new("gen-scenario");
    manifest.seed = Some(cfg.seed);
    manifest.config_paths = a.config.iter().chain(&a.noise).map(|p| show(p)).collect();
    manifest.outputs = vec![show(&a.out_gt), show(&a.out_dets), show(&meta_path)];
    manifest.write_next_to(&a.out_gt)
}

fn png_files(dir: &Path) -> CliResult<Vec<PathBuf>> {
    let entries = std::fs::read_dir(dir).map_err(|e| CliError::Input(format!("{}: {e}", dir.display())))?;
    let mut files: Vec<PathBuf> = entries
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_file() && p.extension().is_some_and(|x| x.eq_ignore_ascii_case("png")))
        .collect();
    files.sort();
    if files.is_empty() {
        return Err(CliError::Input(format!("{}: no PNG frames", dir.display())));
    }
    Ok(files)
}

fn cmd_gen_motion(a: GenMotionArgs) -> CliResult<()> {
    let mut flow_cfg = FlowConfig::default();
    if let Some(v) = a.block_size {
        flow_cfg.block_size = v;
    }
    if let Some(v) = a.search_radius {
        flow_cfg.search_radius = v;
    }
    if let Some(v) = a.pyramid_levels {
        flow_cfg.pyramid_levels = v;
    }
    let files = png_files(&a.frames_dir)?;
    let frames: Vec<ImageFrame> = files
        .par_iter()
        .map(|f| motion_maps::read_png_frame(f).map_err(CliError::from))
        .collect::<CliResult<_>>()?;
    let (w, h) = frames[0].dims();
    let depth = SynthDepthProvider(match a.depth {
        DepthArg::VerticalGradient => DepthMode::VerticalGradient,
        DepthArg::Constant => DepthMode::Constant,
    });
    let density: Box<dyn SourceProvider> = match &a.ann {
        Some(p) => {
            let records = mot_io::read_annotation_file(p, a.order.order)?;
            let boxes_by_frame = mot_io::group_by_frame(&records)
                .into_iter()
                .map(|(f, rs)| (f, rs.iter().map(|r| r.bbox).collect()))
                .collect();
            Box::new(BoxDensityProvider { boxes_by_frame })
        }
        None => Box::new(ConstantProvider(ImageFrame::filled(w, h, 1, 0.0)?)),
    };
    let stacks: Vec<SourceStack> = (0..frames.len())
        .into_par_iter()
        .map(|i| {
            let prev = i.checked_sub(1).map(|j| &frames[j]);
            build_stack(&frames[i], prev, i as u32 + 1, &depth, density.as_ref(), &flow_cfg).map_err(CliError::from)
        })
        .collect::<CliResult<_>>()?;
    std::fs::create_dir_all(&a.out_dir).map_err(|e| CliError::Input(format!("{}: {e}", a.out_dir.display())))?;
    let mut manifest = RunManifest::new("gen-motion");
    manifest.inputs = files.iter().map(|p| show(p)).collect();
    manifest.inputs.extend(a.ann.as_deref().map(show));
    for (i, stack) in stacks.iter().enumerate() {
        let dir = a.out_dir.join(format!("{:06}", i + 1));
        stack.write_dir(&dir)?;
        manifest.outputs.push(show(&dir));
    }
    manifest.write_next_to(&a.out_dir)
}

#[derive(Debug, Serialize)]
struct FuseSummary {
    width: usize,
    height: usize,
    fused_channels: usize,
    alpha1: f64,
    beta1: f64,
    alpha2: f64,
    beta2: f64,
    parameter_count: usize,
    heatmap_sum: f64,
    heatmap_max: f64,
}

fn cmd_fuse_demo(a: FuseDemoArgs, out: &mut dyn Write) -> CliResult<()> {
    let stack = SourceStack::read_dir(&a.stack_dir)?;
    let mut params = match &a.params {
        Some(dir) => FusionParams::load(dir)?,
        None => {
            let cfg = FusionConfig {
                rgb_channels: stack.channels(Source::Rgb),
                ..FusionConfig::default()
            };
            FusionParams::init(cfg, a.seed)
        }
    };
    for (name, value) in [
        ("alpha1", a.alpha1),
        ("beta1", a.beta1),
        ("alpha2", a.alpha2),
        ("beta2", a.beta2),
    ] {
        if let Some(v) = value {
            if !v.is_finite() {
                return Err(CliError::Config(format!("{name} must be finite")));
            }
            params.set_coefficient(name, v);
        }
    }
    let trace = fusion::ForwardTrace::run(&stack, &params)?;
    let h_agg = trace.value(trace.h_agg);
    let heatmap = trace.value(trace.heatmap);
    let (c, h, w) = h_agg.dims3()?;
    let to_f32 = |t: &fusion::Tensor| t.data().iter().map(|&v| v as f32).collect::<Vec<f32>>();
    std::fs::create_dir_all(&a.out).map_err(|e| CliError::Input(format!("{}: {e}", a.out.display())))?;
    let agg_path = a.out.join("h_agg.bin");
    let heat_path = a.out.join("heatmap.bin");
    motion_maps::write_raw_map(&agg_path, w, h, c, &to_f32(h_agg))?;
    motion_maps::write_raw_map(&heat_path, w, h, 1, &to_f32(heatmap))?;
    let summary = FuseSummary {
        width: w,
        height: h,
        fused_channels: c,
        alpha1: params.coefficient("alpha1"),
        beta1: params.coefficient("beta1"),
        alpha2: params.coefficient("alpha2"),
        beta2: params.coefficient("beta2"),
        parameter_count: params.parameter_count(),
        heatmap_sum: heatmap.sum(),
        heatmap_max: heatmap.data().iter().copied().fold(f64::NEG_INFINITY, f64::max),
    };
    let summary_path = a.out.join("summary.json");
    let json = serde_json::to_string_pretty(&summary).map_err(|e| CliError::Internal(e.to_string()))?;
    write_file(&summary_path, json + "\n")?;
    let mut manifest = RunManifest::new("fuse-demo");
    manifest.seed = a.params.is_none().then_some(a.seed);
    manifest.config_paths.extend(a.params.as_deref().map(show));
    manifest.inputs.push(show(&a.stack_dir));
    manifest.outputs = vec![show(&agg_path), show(&heat_path), show(&summary_path)];
    if let Some(dir) = &a.save_params {
        params.save(dir, BlobType::F64)?;
        manifest.outputs.push(show(dir));
    }
    manifest.write_next_to(&a.out)?;
    if a.json {
        emit_json(out, &summary)
    } else {
        emit(
            out,
            &format!(
                "fused {c}x{h}x{w}, heatmap sum {:.2}, max {:.2}\n",
                summary.heatmap_sum, summary.heatmap_max
            ),
        )
    }
}

fn cmd_resample(a: ResampleArgs) -> CliResult<()> {
    let order = a.order.order;
    let records = mot_io::read_annotation_file(&a.ann, order)?;
    let resampled = mot_io::resample_framerate(&records, a.factor)?;
    write_file(&a.out, mot_io::write_annotations(&resampled, order))?;
    let mut manifest = RunManifest::new("resample");
    manifest.inputs.push(show(&a.ann));
    manifest.outputs.push(show(&a.out));
    if let Some(p) = &a.meta {
        let meta = SequenceMeta::from_toml_str(&read_config(p)?)?.resampled(a.factor)?;
        let meta_path = a.out.with_extension("toml");
        write_file(&meta_path, meta.to_toml_string())?;
        manifest.config_paths.push(show(p));
        manifest.outputs.push(show(&meta_path));
    }
    manifest.write_next_to(&a.out)
}
