//! Command-line commands: simulate, track, eval and ablate.
//!
//! Exit codes: 0 success, 2 input error, 3 internal invariant violation.

use std::ffi::OsString;
use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::evaluation::{
    clear_mot, default_thresholds, pr_sweep, prediction_pr, EvalFrame, MotSummary, PrCurve, ReportedState, ScoredFrame,
};
use crate::geometry::OrientedRect;
use crate::io::{check_increasing, read_jsonl, write_jsonl, DetectionLogRecord, RecordError, ReportRecord, TruthLogRecord};
use crate::moupdate::DetectionFrame;
use crate::pipeline::{Ablation, PipelineError, TrackEntry, Tracker, TrackerConfig};
use crate::simulator::{preset, simulate, ScenarioConfig, ScenarioError};
use crate::sofilter::{MeasCov, MotionParams};

pub const EXIT_INPUT: i32 = 2;
pub const EXIT_INVARIANT: i32 = 3;

pub const DETECTIONS_FILE: &str = "detections.jsonl";
pub const TRUTH_FILE: &str = "truth.jsonl";
pub const METRICS_FILE: &str = "metrics.json";
pub const PR_FILE: &str = "pr.txt";
pub const PREDICTION_FILE: &str = "prediction_pr.txt";
pub const ABLATION_FILE: &str = "ablation.json";

/// Timestamps of two logs agree when closer than this.
const TIME_TOL: f64 = 1e-9;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Input(String),
    #[error("{0}")]
    Invariant(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Input(_) => EXIT_INPUT,
            CliError::Invariant(_) => EXIT_INVARIANT,
        }
    }
}

impl From<RecordError> for CliError {
    fn from(e: RecordError) -> Self {
        CliError::Input(e.to_string())
    }
}

impl From<ScenarioError> for CliError {
    fn from(e: ScenarioError) -> Self {
        CliError::Input(e.to_string())
    }
}

impl From<PipelineError> for CliError {
    fn from(e: PipelineError) -> Self {
        match e {
            PipelineError::OutOfOrder { .. } | PipelineError::InvalidConfig(_) => CliError::Input(e.to_string()),
            PipelineError::Update(_) | PipelineError::Invariant(_) => CliError::Invariant(e.to_string()),
        }
    }
}

fn io_err(path: &Path, e: std::io::Error) -> CliError {
    CliError::Input(format!("{}: {e}", path.display()))
}

fn open(path: &Path) -> Result<BufReader<File>, CliError> {
    File::open(path).map(BufReader::new).map_err(|e| io_err(path, e))
}

fn create(path: &Path) -> Result<BufWriter<File>, CliError> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
    }
    File::create(path).map(BufWriter::new).map_err(|e| io_err(path, e))
}

fn write_text(path: &Path, text: &str) -> Result<(), CliError> {
    let mut w = create(path)?;
    w.write_all(text.as_bytes()).and_then(|_| w.flush()).map_err(|e| io_err(path, e))
}

fn write_records<T: Serialize>(path: &Path, records: &[T]) -> Result<(), CliError> {
    let mut w = create(path)?;
    write_jsonl(&mut w, records)?;
    w.flush().map_err(|e| io_err(path, e))
}

fn read_toml<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T, CliError> {
    let text = fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    toml::from_str(&text).map_err(|e| CliError::Input(format!("{}: {e}", path.display())))
}

pub fn load_tracker_config(path: Option<&Path>) -> Result<TrackerConfig, CliError> {
    let cfg = match path {
        Some(p) => read_toml(p)?,
        None => TrackerConfig::default(),
    };
    cfg.validate()?;
    Ok(cfg)
}

/// Scenario from a preset name or a TOML file (exactly one must be given).
pub fn load_scenario(preset_name: Option<&str>, config: Option<&Path>) -> Result<ScenarioConfig, CliError> {
    let cfg = match (preset_name, config) {
        (Some(name), None) => preset(name)?,
        (None, Some(path)) => read_toml(path)?,
        _ => return Err(CliError::Input("give exactly one of --preset or --config".into())),
    };
    cfg.validate()?;
    Ok(cfg)
}

pub fn load_detection_log(path: &Path) -> Result<Vec<DetectionFrame>, CliError> {
    let recs: Vec<(usize, DetectionLogRecord)> = read_jsonl(open(path)?)?;
    check_increasing(recs.iter().map(|(l, r)| (*l, r.t)))?;
    recs.iter()
        .map(|(line, r)| r.to_frame(*line, MeasCov::zeros()).map_err(CliError::from))
        .collect()
}

/// Truth frames as `(t, [(id, rect)])`.
pub type TruthLog = Vec<(f64, Vec<(u64, OrientedRect)>)>;

pub fn load_truth_log(path: &Path) -> Result<TruthLog, CliError> {
    let recs: Vec<(usize, TruthLogRecord)> = read_jsonl(open(path)?)?;
    check_increasing(recs.iter().map(|(l, r)| (*l, r.t)))?;
    recs.iter().map(|(line, r)| Ok((r.t, r.rects(*line)?))).collect()
}

pub fn load_report(path: &Path) -> Result<Vec<(f64, Vec<TrackEntry>)>, CliError> {
    let recs: Vec<(usize, ReportRecord)> = read_jsonl(open(path)?)?;
    check_increasing(recs.iter().map(|(l, r)| (*l, r.t)))?;
    recs.iter().map(|(line, r)| Ok((r.t, r.entries(*line)?))).collect()
}

/// Writes `detections.jsonl` and `truth.jsonl` into `out_dir`.
pub fn cmd_simulate(cfg: &ScenarioConfig, out_dir: &Path, seed: Option<u64>) -> Result<(PathBuf, PathBuf), CliError> {
    let mut cfg = cfg.clone();
    if let Some(s) = seed {
        cfg.seed = s;
    }
    let (truth, frames) = simulate(&cfg)?;
    let dets: Vec<DetectionLogRecord> = frames.iter().map(DetectionLogRecord::from_frame).collect();
    let objs: Vec<TruthLogRecord> = truth.frames().iter().map(TruthLogRecord::from_frame).collect();
    let det_path = out_dir.join(DETECTIONS_FILE);
    let truth_path = out_dir.join(TRUTH_FILE);
    write_records(&det_path, &dets)?;
    write_records(&truth_path, &objs)?;
    Ok((det_path, truth_path))
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct FrameTimings {
    pub per_frame_ms: Vec<f64>,
}

impl FrameTimings {
    pub fn median_ms(&self) -> f64 {
        if self.per_frame_ms.is_empty() {
            return 0.0;
        }
        let mut v = self.per_frame_ms.clone();
        v.sort_by(f64::total_cmp);
        v[v.len() / 2]
    }

    pub fn summary(&self) -> String {
        let n = self.per_frame_ms.len();
        let total: f64 = self.per_frame_ms.iter().sum();
        let max = self.per_frame_ms.iter().copied().fold(0.0, f64::max);
        let mean = if n > 0 { total / n as f64 } else { 0.0 };
        format!(
            "{n} frames, mean {mean:.3} ms/frame, median {:.3} ms, max {max:.3} ms",
            self.median_ms()
        )
    }
}

/// Runs the tracker and reports every lineage at every frame.
pub fn track_frames(cfg: &TrackerConfig, frames: &[DetectionFrame]) -> Result<(Vec<ReportRecord>, FrameTimings), CliError> {
    let mut tracker = Tracker::new(cfg.clone())?;
    let mut records = Vec::with_capacity(frames.len());
    let mut timings = FrameTimings::default();
    for f in frames {
        let start = Instant::now();
        tracker.step(f)?;
        timings.per_frame_ms.push(start.elapsed().as_secs_f64() * 1e3);
        records.push(ReportRecord::new(f.t, &tracker.report(0.0)));
    }
    Ok((records, timings))
}

pub fn cmd_track(detlog: &Path, cfg: &TrackerConfig, out: &Path) -> Result<FrameTimings, CliError> {
    let frames = load_detection_log(detlog)?;
    let (records, timings) = track_frames(cfg, &frames)?;
    write_records(out, &records)?;
    Ok(timings)
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalOptions {
    pub iou: f64,
    /// Reporting threshold on existence × genuity for the MOT summary.
    pub threshold: f64,
    pub pr: bool,
    pub predict: bool,
    pub motion: MotionParams,
    pub pr_steps: usize,
}

impl Default for EvalOptions {
    fn default() -> Self {
        Self {
            iou: 0.3,
            threshold: 0.5,
            pr: false,
            predict: false,
            motion: MotionParams::default(),
            pr_steps: 20,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRecord {
    pub iou: f64,
    pub threshold: f64,
    pub frames: usize,
    pub mot: MotSummary,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalResult {
    pub metrics: MetricsRecord,
    pub pr: Option<PrCurve>,
    pub prediction: Option<PrCurve>,
}

type TruthSeq = [(f64, Vec<(u64, OrientedRect)>)];

pub fn evaluate(reports: &[(f64, Vec<TrackEntry>)], truth: &TruthSeq, opts: &EvalOptions) -> Result<EvalResult, CliError> {
    if !(opts.iou > 0.0 && opts.iou < 1.0) {
        return Err(CliError::Input(format!("iou threshold {} outside (0, 1)", opts.iou)));
    }
    if reports.len() != truth.len() {
        return Err(CliError::Input(format!(
            "report has {} frames but truth has {}",
            reports.len(),
            truth.len()
        )));
    }
    for (i, ((tr, _), (tt, _))) in reports.iter().zip(truth).enumerate() {
        if (tr - tt).abs() > TIME_TOL {
            return Err(CliError::Input(format!(
                "frame {i}: report time {tr} does not match truth time {tt}"
            )));
        }
    }

    let mot_frames: Vec<EvalFrame> = reports
        .iter()
        .zip(truth)
        .map(|((_, entries), (_, objs))| EvalFrame {
            estimates: entries
                .iter()
                .filter(|e| e.confidence() > opts.threshold)
                .map(|e| (e.id, e.rect))
                .collect(),
            truth: objs.clone(),
        })
        .collect();
    let metrics = MetricsRecord {
        iou: opts.iou,
        threshold: opts.threshold,
        frames: reports.len(),
        mot: clear_mot(&mot_frames, opts.iou),
    };

    let thresholds = default_thresholds(opts.pr_steps.max(1));
    let pr = opts.pr.then(|| {
        let frames: Vec<ScoredFrame> = reports
            .iter()
            .zip(truth)
            .map(|((_, entries), (_, objs))| ScoredFrame {
                estimates: entries.iter().map(|e| (e.rect, e.confidence())).collect(),
                truth: objs.iter().map(|o| o.1).collect(),
            })
            .collect();
        pr_sweep(&frames, &thresholds, opts.iou)
    });

    let prediction = opts.predict.then(|| {
        let states: Vec<(f64, Vec<ReportedState>)> = reports
            .iter()
            .map(|(t, entries)| {
                let s = entries
                    .iter()
                    .map(|e| ReportedState {
                        rect: e.rect,
                        speed: e.speed,
                        yaw_rate: e.yaw_rate,
                        confidence: e.confidence(),
                    })
                    .collect();
                (*t, s)
            })
            .collect();
        let truth_rects: Vec<(f64, Vec<OrientedRect>)> = truth.iter().map(|(t, o)| (*t, o.iter().map(|x| x.1).collect())).collect();
        prediction_pr(&states, &truth_rects, &opts.motion, frame_step(truth), &thresholds)
    });

    Ok(EvalResult { metrics, pr, prediction })
}

/// Median spacing of frame times, 0.1 s if there are fewer than two frames.
fn frame_step(truth: &TruthSeq) -> f64 {
    let mut d: Vec<f64> = truth.windows(2).map(|w| w[1].0 - w[0].0).collect();
    if d.is_empty() {
        return 0.1;
    }
    d.sort_by(f64::total_cmp);
    d[d.len() / 2]
}

/// Writes `metrics.json` and the requested curve files into `out_dir`.
pub fn cmd_eval(report: &Path, truthlog: &Path, out_dir: &Path, opts: &EvalOptions) -> Result<EvalResult, CliError> {
    let reports = load_report(report)?;
    let truth = load_truth_log(truthlog)?;
    let res = evaluate(&reports, &truth, opts)?;
    let json = serde_json::to_string_pretty(&res.metrics).map_err(|e| CliError::Invariant(e.to_string()))?;
    write_text(&out_dir.join(METRICS_FILE), &(json + "\n"))?;
    if let Some(pr) = &res.pr {
        write_text(&out_dir.join(PR_FILE), &pr.to_columns())?;
    }
    if let Some(pr) = &res.prediction {
        write_text(&out_dir.join(PREDICTION_FILE), &pr.to_columns())?;
    }
    Ok(res)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationArm {
    pub arm: String,
    pub mot: MotSummary,
    pub median_step_ms: f64,
}

/// Tracker variants compared by `cmd_ablate`.
pub fn ablation_arms(base: &TrackerConfig, subselect: f64) -> Vec<(String, TrackerConfig)> {
    let mut sub = base.clone();
    sub.subselect_fraction = Some(subselect);
    vec![
        ("full".into(), base.clone()),
        ("no-detectability".into(), base.clone().with_ablation(Ablation::Detectability)),
        ("no-genuity".into(), base.clone().with_ablation(Ablation::Genuity)),
        ("subselect".into(), sub),
    ]
}

/// Runs every arm in its own thread and scores it against `truth`.
pub fn run_ablation(
    base: &TrackerConfig,
    frames: &[DetectionFrame],
    truth: &TruthSeq,
    opts: &EvalOptions,
    subselect: f64,
) -> Result<Vec<AblationArm>, CliError> {
    let arms = ablation_arms(base, subselect);
    let results: Vec<Result<AblationArm, CliError>> = std::thread::scope(|s| {
        let handles: Vec<_> = arms
            .iter()
            .map(|(name, cfg)| {
                s.spawn(move || {
                    let (records, timings) = track_frames(cfg, frames)?;
                    let reports: Vec<(f64, Vec<TrackEntry>)> = records
                        .iter()
                        .enumerate()
                        .map(|(i, r)| Ok((r.t, r.entries(i + 1)?)))
                        .collect::<Result<_, CliError>>()?;
                    let res = evaluate(&reports, truth, opts)?;
                    Ok(AblationArm {
                        arm: name.clone(),
                        mot: res.metrics.mot,
                        median_step_ms: timings.median_ms(),
                    })
                })
            })
            .collect();
        handles
            .into_iter()
            .map(|h| {
                h.join()
                    .unwrap_or_else(|_| Err(CliError::Invariant("ablation worker panicked".into())))
            })
            .collect()
    });
    results.into_iter().collect()
}

pub fn cmd_ablate(
    detlog: &Path,
    truthlog: &Path,
    base: &TrackerConfig,
    out_dir: &Path,
    opts: &EvalOptions,
    subselect: f64,
) -> Result<Vec<AblationArm>, CliError> {
    if !(subselect > 0.0 && subselect <= 1.0) {
        return Err(CliError::Input(format!("subselect fraction {subselect} outside (0, 1]")));
    }
    let frames = load_detection_log(detlog)?;
    let truth = load_truth_log(truthlog)?;
    let arms = run_ablation(base, &frames, &truth, opts, subselect)?;
    let json = serde_json::to_string_pretty(&arms).map_err(|e| CliError::Invariant(e.to_string()))?;
    write_text(&out_dir.join(ABLATION_FILE), &(json + "\n"))?;
    Ok(arms)
}

#[derive(Debug, Parser)]
#[command(name = "bevtrack", version, about = "Bird's-eye-view multi-object tracking toolkit")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum AblateFlag {
    None,
    Detectability,
    Genuity,
}

impl From<AblateFlag> for Ablation {
    fn from(a: AblateFlag) -> Self {
        match a {
            AblateFlag::None => Ablation::None,
            AblateFlag::Detectability => Ablation::Detectability,
            AblateFlag::Genuity => Ablation::Genuity,
        }
    }
}

#[derive(Debug, Args)]
pub struct EvalFlags {
    /// IoU a match must exceed.
    #[arg(long, default_value_t = 0.3)]
    pub iou: f64,
    /// Existence × genuity above which a track counts as reported.
    #[arg(long, default_value_t = 0.5)]
    pub threshold: f64,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a detection log and a truth log.
    Simulate {
        /// Built-in scenario name.
        #[arg(long, conflicts_with = "config", required_unless_present = "config")]
        preset: Option<String>,
        /// Scenario file (TOML).
        #[arg(long)]
        config: Option<PathBuf>,
        /// Output directory.
        #[arg(long)]
        out: PathBuf,
        /// Overrides the scenario seed.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Run the tracker over a detection log.
    Track {
        detlog: PathBuf,
        /// Tracker configuration (TOML).
        #[arg(long)]
        config: Option<PathBuf>,
        /// Report file (JSON lines).
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_enum, default_value_t = AblateFlag::None)]
        ablate: AblateFlag,
        /// Use detections only from this fraction of the most important tiles.
        #[arg(long)]
        subselect: Option<f64>,
    },
    /// Score a track report against a truth log.
    Eval {
        report: PathBuf,
        truthlog: PathBuf,
        /// Output directory.
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        flags: EvalFlags,
        /// Write the precision-recall sweep.
        #[arg(long)]
        pr: bool,
        /// Write the one-second-ahead prediction sweep.
        #[arg(long)]
        predict: bool,
        /// Tracker configuration whose motion model drives prediction.
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Compare the full tracker with its ablations on one scenario.
    Ablate {
        detlog: PathBuf,
        truthlog: PathBuf,
        /// Output directory.
        #[arg(long)]
        out: PathBuf,
        /// Base tracker configuration (TOML).
        #[arg(long)]
        config: Option<PathBuf>,
        #[command(flatten)]
        flags: EvalFlags,
        /// Tile fraction for the subselection arm.
        #[arg(long, default_value_t = 1.0 / 3.0)]
        subselect: f64,
    },
}

fn dispatch(cmd: Command) -> Result<(), CliError> {
    match cmd {
        Command::Simulate { preset, config, out, seed } => {
            let cfg = load_scenario(preset.as_deref(), config.as_deref())?;
            let (d, t) = cmd_simulate(&cfg, &out, seed)?;
            println!("wrote {} and {}", d.display(), t.display());
        }
        Command::Track {
            detlog,
            config,
            out,
            ablate,
            subselect,
        } => {
            let mut cfg = load_tracker_config(config.as_deref())?.with_ablation(ablate.into());
            if subselect.is_some() {
                cfg.subselect_fraction = subselect;
            }
            cfg.validate()?;
            let timings = cmd_track(&detlog, &cfg, &out)?;
            eprintln!("{}", timings.summary());
        }
        Command::Eval {
            report,
            truthlog,
            out,
            flags,
            pr,
            predict,
            config,
        } => {
            let cfg = load_tracker_config(config.as_deref())?;
            let opts = EvalOptions {
                iou: flags.iou,
                threshold: flags.threshold,
                pr,
                predict,
                motion: cfg.model.motion,
                ..EvalOptions::default()
            };
            let res = cmd_eval(&report, &truthlog, &out, &opts)?;
            let m = &res.metrics.mot;
            println!(
                "MOTA {:.4} MOTP {:.4} FN {} FP {} IDSW {} MT {:.1}% GT {}",
                m.mota, m.motp, m.false_negatives, m.false_positives, m.idsw, m.mt_percent, m.gt
            );
        }
        Command::Ablate {
            detlog,
            truthlog,
            out,
            config,
            flags,
            subselect,
        } => {
            let cfg = load_tracker_config(config.as_deref())?;
            let opts = EvalOptions {
                iou: flags.iou,
                threshold: flags.threshold,
                motion: cfg.model.motion.clone(),
                ..EvalOptions::default()
            };
            for arm in cmd_ablate(&detlog, &truthlog, &cfg, &out, &opts, subselect)? {
                println!(
                    "{:<18} MOTA {:.4} IDSW {:>4} FN {:>5} FP {:>5} median step {:.2} ms",
                    arm.arm, arm.mot.mota, arm.mot.idsw, arm.mot.false_negatives, arm.mot.false_positives, arm.median_step_ms
                );
            }
        }
    }
    Ok(())
}

/// Parses arguments, runs the command and returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_INPUT } else { 0 };
        }
    };
    match dispatch(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parse_track_flags() {
        let cli = Cli::try_parse_from(["bevtrack", "track", "d.jsonl", "--out", "r.jsonl", "--ablate", "genuity"]).unwrap();
        match cli.command {
            Command::Track { ablate, .. } => assert_eq!(ablate, AblateFlag::Genuity),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn simulate_needs_a_source() {
        assert!(Cli::try_parse_from(["bevtrack", "simulate", "--out", "x"]).is_err());
        assert!(Cli::try_parse_from(["bevtrack", "simulate", "--preset", "a", "--config", "b", "--out", "x"]).is_err());
    }

    #[test]
    fn misaligned_times_rejected() {
        let reports = vec![(0.1, vec![]), (0.2, vec![])];
        let truth = vec![(0.1, vec![]), (0.25, vec![])];
        assert!(matches!(
            evaluate(&reports, &truth, &EvalOptions::default()),
            Err(CliError::Input(_))
        ));
        assert!(matches!(
            evaluate(&reports, &truth[..1], &EvalOptions::default()),
            Err(CliError::Input(_))
        ));
    }

    #[test]
    fn error_codes() {
        assert_eq!(
            CliError::from(PipelineError::OutOfOrder { t: 0.0, last: 1.0 }).exit_code(),
            EXIT_INPUT
        );
        assert_eq!(CliError::from(PipelineError::Invariant("x".into())).exit_code(), EXIT_INVARIANT);
    }
}
