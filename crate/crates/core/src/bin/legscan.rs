//! `legscan` command line: simulate datasets, train and run the detectors,
//! score detections, and serve the annotation API.

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use legscan::annotate::http::{serve, AppState};
use legscan::dataset::{annotated_indices, benchmark_views, load_dataset, save_dataset, Dataset};
use legscan::detector::Detector;
use legscan::eval::{
    evaluate_detections, ground_truth, latency_bench, read_detections, read_report, run_detector, write_curve_csv,
    write_detections, write_report, DetectionFile, Report,
};
use legscan::geometry::SensorMeta;
use legscan::lfe::{train_segmentation, LfeConfig, LfePeaksDetector, PeakParams, SegModel, SegTrainConfig};
use legscan::nn::TrainConfig;
use legscan::ppn::{regression_statistics, train_ppn, PpnDetector, PpnModel, PpnTrainConfig};
use legscan::synth::{generate_dataset, SynthConfig};
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::Arc;

#[derive(Parser)]
#[command(name = "legscan", version, about = "People detection in 2D laser scans")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate a labeled dataset.
    Generate(GenerateArgs),
    /// Train the segmentation network.
    TrainSeg(TrainSegArgs),
    /// Run LFE-Peaks on a dataset view and write detections.
    DetectSeg(DetectSegArgs),
    /// Train the proposal network on top of a segmentation backbone.
    TrainPpn(TrainPpnArgs),
    /// Run LFE-PPN on a dataset view and write detections.
    DetectPpn(DetectPpnArgs),
    /// Score a detection file against the dataset annotations.
    Evaluate(EvaluateArgs),
    /// Measure per-scan inference latency.
    Bench(BenchArgs),
    /// Export the precision/recall curves of a report as CSV.
    Curve(CurveArgs),
    /// Mean and spread of the anchor regression targets.
    Stats(StatsArgs),
    /// Serve the annotation HTTP API.
    Serve(ServeArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum Preset {
    Frog,
}

#[derive(Args)]
struct GenerateArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 1000)]
    scans: usize,
    #[arg(long, default_value_t = 4)]
    people: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 0.01)]
    noise_sigma: f64,
    /// Frames per simulated scene before a new world is drawn.
    #[arg(long, default_value_t = 50)]
    scene_length: usize,
    #[arg(long, value_enum, default_value_t = Preset::Frog)]
    preset: Preset,
}

#[derive(Clone, Copy, ValueEnum)]
enum Size {
    /// Channels 16/32/48.
    Toy,
    /// Channels 32/64/96.
    Full,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    weight_decay: Option<f64>,
    #[arg(long)]
    patience: Option<usize>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Also write the per-epoch losses as JSON.
    #[arg(long)]
    history: Option<PathBuf>,
}

impl TrainArgs {
    fn apply(&self, t: &mut TrainConfig) {
        if let Some(v) = self.epochs {
            t.epochs = v;
        }
        if let Some(v) = self.batch_size {
            t.batch_size = v;
        }
        if let Some(v) = self.lr {
            t.optim.lr = v;
        }
        if let Some(v) = self.weight_decay {
            t.optim.weight_decay = v;
        }
        if let Some(v) = self.patience {
            t.patience = v;
        }
        t.seed = self.seed;
    }
}

#[derive(Args)]
struct TrainSegArgs {
    #[arg(long)]
    dataset: PathBuf,
    /// Checkpoint to write.
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long, value_enum, default_value_t = Size::Full)]
    size: Size,
    #[command(flatten)]
    train: TrainArgs,
}

#[derive(Clone, Copy, ValueEnum)]
enum View {
    /// Annotated validation scans.
    Val,
    /// Annotated training scans.
    Train,
    /// Every annotated scan.
    All,
}

fn view_indices(ds: &Dataset, view: View) -> Result<Vec<usize>> {
    Ok(match view {
        View::All => annotated_indices(ds),
        View::Train => benchmark_views(ds)?.0,
        View::Val => benchmark_views(ds)?.1,
    })
}

#[derive(Args)]
struct DetectArgs {
    #[arg(long)]
    dataset: PathBuf,
    #[arg(long)]
    checkpoint: PathBuf,
    /// Detection JSON to write.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, value_enum, default_value_t = View::Val)]
    view: View,
}

#[derive(Args)]
struct PeakArgs {
    #[arg(long, default_value_t = PeakParams::default().height_threshold)]
    height_threshold: f64,
    #[arg(long, default_value_t = PeakParams::default().min_region_points)]
    min_region_points: usize,
    #[arg(long, default_value_t = PeakParams::default().outlier_mad_k)]
    outlier_mad_k: f64,
    #[arg(long, default_value_t = PeakParams::default().leg_merge_distance)]
    leg_merge_distance: f64,
}

impl PeakArgs {
    fn params(&self) -> PeakParams {
        PeakParams {
            height_threshold: self.height_threshold,
            min_region_points: self.min_region_points,
            outlier_mad_k: self.outlier_mad_k,
            leg_merge_distance: self.leg_merge_distance,
        }
    }
}

#[derive(Args)]
struct DetectSegArgs {
    #[command(flatten)]
    detect: DetectArgs,
    #[command(flatten)]
    peaks: PeakArgs,
}

#[derive(Args)]
struct PpnArgs {
    /// Anchors per sector.
    #[arg(long = "anchors", short = 'm')]
    anchors: Option<usize>,
    #[arg(long)]
    near: Option<f64>,
    #[arg(long)]
    far: Option<f64>,
    /// Positive-anchor radius.
    #[arg(long)]
    tau: Option<f64>,
    /// NMS center distance.
    #[arg(long)]
    nms_distance: Option<f64>,
    #[arg(long)]
    score_threshold: Option<f64>,
}

#[derive(Args)]
struct TrainPpnArgs {
    #[arg(long)]
    dataset: PathBuf,
    /// Trained segmentation checkpoint providing the backbone.
    #[arg(long)]
    backbone: PathBuf,
    /// Checkpoint to write.
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    freeze_backbone: bool,
    #[command(flatten)]
    ppn: PpnArgs,
    #[command(flatten)]
    train: TrainArgs,
}

#[derive(Args)]
struct DetectPpnArgs {
    #[command(flatten)]
    detect: DetectArgs,
    /// Overrides of the post-processing stored in the checkpoint.
    #[arg(long)]
    nms_distance: Option<f64>,
    #[arg(long)]
    score_threshold: Option<f64>,
}

#[derive(Args)]
struct EvaluateArgs {
    #[arg(long)]
    dataset: PathBuf,
    #[arg(long)]
    detections: PathBuf,
    /// Association distance in meters; repeatable.
    #[arg(long = "d", default_values_t = [0.5, 0.3])]
    distances: Vec<f64>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum DetectorKind {
    Seg,
    Ppn,
}

#[derive(Args)]
struct BenchArgs {
    #[arg(long, value_enum)]
    detector: DetectorKind,
    #[arg(long)]
    checkpoint: PathBuf,
    /// Dataset to time on; a small simulated one when omitted.
    #[arg(long)]
    dataset: Option<PathBuf>,
    #[arg(long, default_value_t = 200)]
    scans: usize,
    #[arg(long, default_value_t = 1)]
    repetitions: usize,
}

#[derive(Args)]
struct CurveArgs {
    #[arg(long)]
    report: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct StatsArgs {
    #[arg(long)]
    dataset: PathBuf,
    #[command(flatten)]
    ppn: PpnArgs,
}

#[derive(Args)]
struct ServeArgs {
    #[arg(long, default_value = "127.0.0.1:8080")]
    addr: SocketAddr,
}

fn load(path: &Path) -> Result<Dataset> {
    load_dataset(path).with_context(|| format!("loading dataset {}", path.display()))
}

fn write_history(path: &Option<PathBuf>, history: &legscan::nn::History) -> Result<()> {
    if let Some(p) = path {
        std::fs::write(p, serde_json::to_string_pretty(history)?).with_context(|| format!("writing {}", p.display()))?;
    }
    Ok(())
}

fn generate(a: &GenerateArgs) -> Result<()> {
    let meta = match a.preset {
        Preset::Frog => SensorMeta::frog(),
    };
    let config = SynthConfig {
        meta,
        people: a.people,
        noise_sigma: a.noise_sigma,
        scans: a.scans,
        scene_length: a.scene_length,
        ..SynthConfig::default()
    };
    let ds = generate_dataset(&config, a.seed)?;
    save_dataset(&ds, &a.out).with_context(|| format!("writing {}", a.out.display()))?;
    let people: usize = ds.circle_num.iter().map(|&n| n as usize).sum();
    println!("wrote {} scans with {} person annotations to {}", ds.len(), people, a.out.display());
    Ok(())
}

fn train_seg(a: &TrainSegArgs) -> Result<()> {
    let ds = load(&a.dataset)?;
    let mut config = SegTrainConfig {
        model: match a.size {
            Size::Toy => LfeConfig::toy(),
            Size::Full => LfeConfig::default(),
        },
        ..SegTrainConfig::default()
    };
    config.model.seed = a.train.seed;
    a.train.apply(&mut config.train);
    let (model, history) = train_segmentation(&ds, &config)?;
    model.save(&a.checkpoint)?;
    write_history(&a.train.history, &history)?;
    report_history(&history);
    Ok(())
}

fn report_history(h: &legscan::nn::History) {
    for e in &h.epochs {
        log::info!("epoch {} train {:.5} val {:.5}", e.epoch, e.train_loss, e.val_loss);
    }
    println!(
        "trained {} epochs{}, kept epoch {}",
        h.epochs.len(),
        if h.stopped_early { " (stopped early)" } else { "" },
        h.best_epoch.map_or("-".to_string(), |e| e.to_string())
    );
}

fn detect_and_write(detector: &dyn Detector, a: &DetectArgs) -> Result<()> {
    let ds = load(&a.dataset)?;
    let indices = view_indices(&ds, a.view)?;
    let dets = run_detector(detector, &ds, &indices)?;
    let file = DetectionFile::new(detector.name(), &indices, &dets);
    write_detections(&file, &a.out)?;
    println!("wrote {} detections over {} scans to {}", file.detections.len(), indices.len(), a.out.display());
    Ok(())
}

fn apply_ppn_args(p: &PpnArgs, config: &mut legscan::ppn::PpnConfig) {
    if let Some(v) = p.anchors {
        config.anchors.anchors_per_sector = v;
    }
    if let Some(v) = p.near {
        config.anchors.near = v;
    }
    if let Some(v) = p.far {
        config.anchors.far = v;
    }
    if let Some(v) = p.tau {
        config.anchors.tau = v;
    }
    if let Some(v) = p.nms_distance {
        config.nms_distance = v;
    }
    if let Some(v) = p.score_threshold {
        config.score_threshold = v;
    }
}

fn train_ppn_cmd(a: &TrainPpnArgs) -> Result<()> {
    let ds = load(&a.dataset)?;
    let backbone = SegModel::load(&a.backbone)?;
    let mut config = PpnTrainConfig {
        freeze_backbone: a.freeze_backbone,
        ..PpnTrainConfig::default()
    };
    apply_ppn_args(&a.ppn, &mut config.model);
    a.train.apply(&mut config.train);
    let (model, history) = train_ppn(&ds, &backbone, &config)?;
    model.save(&a.checkpoint)?;
    write_history(&a.train.history, &history)?;
    report_history(&history);
    Ok(())
}

fn print_report(r: &Report) {
    println!("{}: {} scans, {} detections", r.detector, r.num_scans, r.num_detections);
    println!("{:>6} {:>8} {:>8} {:>8}", "d [m]", "AP", "Peak-F1", "EER");
    for res in &r.results {
        println!(
            "{:>6.2} {:>8.2} {:>8.2} {:>8.2}",
            res.association_distance,
            100.0 * res.ap,
            100.0 * res.peak_f1,
            100.0 * res.eer
        );
    }
}

fn evaluate_cmd(a: &EvaluateArgs) -> Result<()> {
    if a.distances.iter().any(|d| !(*d > 0.0)) {
        bail!("association distances must be positive");
    }
    let ds = load(&a.dataset)?;
    let file = read_detections(&a.detections)?;
    if let Some(&bad) = file.scan_indices.iter().find(|&&i| i >= ds.len()) {
        bail!("detections refer to scan {bad}, dataset has {}", ds.len());
    }
    let gts = ground_truth(&ds, &file.scan_indices)?;
    let report = evaluate_detections(&file.detector, &file.per_scan()?, &gts, &a.distances)?;
    print_report(&report);
    if let Some(out) = &a.out {
        write_report(&report, out)?;
    }
    Ok(())
}

fn bench(a: &BenchArgs) -> Result<()> {
    let detector: Box<dyn Detector> = match a.detector {
        DetectorKind::Seg => Box::new(LfePeaksDetector::load(&a.checkpoint, PeakParams::default())?),
        DetectorKind::Ppn => Box::new(PpnDetector::load(&a.checkpoint)?),
    };
    let ds = match &a.dataset {
        Some(p) => load(p)?,
        None => generate_dataset(
            &SynthConfig {
                scans: a.scans,
                ..SynthConfig::default()
            },
            0,
        )?,
    };
    let indices: Vec<usize> = (0..ds.len().min(a.scans)).collect();
    let stats = latency_bench(detector.as_ref(), &ds, &indices, a.repetitions)?;
    println!(
        "{}: {} scans, mean {:.3} ms, median {:.3} ms, p99 {:.3} ms",
        detector.name(),
        stats.samples,
        stats.mean_ms,
        stats.median_ms,
        stats.p99_ms
    );
    Ok(())
}

fn curve(a: &CurveArgs) -> Result<()> {
    let report = read_report(&a.report)?;
    write_curve_csv(&report, &a.out)?;
    println!("wrote {}", a.out.display());
    Ok(())
}

fn stats(a: &StatsArgs) -> Result<()> {
    let ds = load(&a.dataset)?;
    let mut config = legscan::ppn::PpnConfig::default();
    apply_ppn_args(&a.ppn, &mut config);
    let grid = legscan::ppn::AnchorGrid::from_config(&ds.meta, &config.anchors)?;
    let s = regression_statistics(&ds, &grid, config.anchors.tau)?;
    println!("{}", serde_json::to_string_pretty(&s)?);
    Ok(())
}

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match &cli.command {
        Command::Generate(a) => generate(a),
        Command::TrainSeg(a) => train_seg(a),
        Command::DetectSeg(a) => {
            let det = LfePeaksDetector::load(&a.detect.checkpoint, a.peaks.params())?;
            detect_and_write(&det, &a.detect)
        }
        Command::TrainPpn(a) => train_ppn_cmd(a),
        Command::DetectPpn(a) => {
            let mut model = PpnModel::load(&a.detect.checkpoint)?;
            if let Some(v) = a.nms_distance {
                model.config.nms_distance = v;
            }
            if let Some(v) = a.score_threshold {
                model.config.score_threshold = v;
            }
            detect_and_write(&PpnDetector::new(model), &a.detect)
        }
        Command::Evaluate(a) => evaluate_cmd(a),
        Command::Bench(a) => bench(a),
        Command::Curve(a) => curve(a),
        Command::Stats(a) => stats(a),
        Command::Serve(a) => {
            let rt = tokio::runtime::Runtime::new()?;
            rt.block_on(serve(a.addr, Arc::new(AppState::default())))?;
            Ok(())
        }
    }
}
