//! Command-line front end.
//!
//! Settings come from built-in defaults, then the config file (`--config` or
//! `TRANSTRACK_CONFIG`), then `--set key=value` pairs, then dedicated flags.
//! Later layers win.

pub mod ablate;
pub mod config;

pub use ablate::{query_ablation, QueryAblation, is_unambiguous, relative_gap, run_ablation, scenario_set, unambiguous_set, track_frames, track_scenario, Ablation, AblationRow, Check, Provider};
pub use config::{AblateSettings, ConfigError, GradCheckSettings, RunConfig};

use crate::io::{outputs_to_annotations, parse_mot, parse_mot_with, write_detections, write_gt, write_results, MotKind, ParseOptions};
use crate::metrics::{evaluate, MotReport};
use crate::synth::{generate, ScenarioSpec};
use crate::toynet::{evaluate_pairs, gradcheck_pair, grad_check, load, save, train_toy_with, ModelParams};
use crate::tracker::{plain_frames, TrackerConfig};
use clap::{Args, Parser, Subcommand, ValueEnum};
use std::io::Write;
use std::path::{Path, PathBuf};
use thiserror::Error;

pub const CONFIG_ENV: &str = "TRANSTRACK_CONFIG";

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{0}")]
    Runtime(String),
    /// A check the command was asked to verify did not hold.
    #[error("{0}")]
    Check(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) | CliError::Config(_) => 2,
            CliError::Io { .. } | CliError::Runtime(_) => 1,
            CliError::Check(_) => 3,
        }
    }
}

fn runtime(e: impl std::fmt::Display) -> CliError {
    CliError::Runtime(e.to_string())
}

fn read(path: &Path) -> Result<String, CliError> {
    std::fs::read_to_string(path).map_err(|source| CliError::Io { path: path.to_path_buf(), source })
}

fn write(path: &Path, text: &str) -> Result<(), CliError> {
    std::fs::write(path, text).map_err(|source| CliError::Io { path: path.to_path_buf(), source })
}

#[derive(Debug, Parser)]
#[command(name = "transtrack", version, about = "Joint detection and tracking with object and track queries")]
pub struct Cli {
    /// Settings file of `key = value` lines, optionally under `[section]` headers.
    #[arg(long, global = true, env = CONFIG_ENV)]
    pub config: Option<PathBuf>,
    /// Override one setting, e.g. `--set tracker.min_iou=0.4`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    pub overrides: Vec<String>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Track a detection file or a generated scenario and write MOT results.
    Track(TrackArgs),
    /// Score a result file against ground truth.
    Eval(EvalArgs),
    /// Generate a scenario: ground truth, detections and feature grids.
    Simulate(SimulateArgs),
    /// Train the network on simulated frame pairs and save a checkpoint.
    Train(TrainArgs),
    /// Compare providers, frame strides and association modes.
    Ablate(AblateArgs),
    /// Check analytic gradients of the full network against finite differences.
    Gradcheck(GradcheckArgs),
    /// Print the effective settings.
    Config,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ProviderArg {
    Replay,
    Kalman,
    None,
    Toynet,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum AssociationArg {
    Hungarian,
    Nms,
}

#[derive(Debug, Args)]
pub struct TrackArgs {
    #[arg(long, value_enum, default_value = "kalman")]
    pub provider: ProviderArg,
    /// MOT detection file (`frame,-1,x,y,w,h,conf,...`).
    #[arg(long, conflicts_with = "scenario")]
    pub dets: Option<PathBuf>,
    /// Scenario file; its detections and feature grids are generated.
    #[arg(long)]
    pub scenario: Option<PathBuf>,
    /// Network parameters, required by `--provider toynet`.
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    /// Number of frames when the detection file ends early.
    #[arg(long)]
    pub frames: Option<usize>,
    /// Result file; standard output when absent.
    #[arg(long, short)]
    pub out: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub association: Option<AssociationArg>,
    #[arg(long)]
    pub min_iou: Option<f64>,
    #[arg(long)]
    pub score_thresh: Option<f64>,
    #[arg(long)]
    pub rebirth_k: Option<u32>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub gt: PathBuf,
    #[arg(long)]
    pub results: PathBuf,
    /// Minimum ground-truth visibility kept.
    #[arg(long, default_value_t = 0.0)]
    pub min_visibility: f64,
    #[arg(long)]
    pub iou_thresh: Option<f64>,
    /// Also write the metrics as `key=value` lines.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    /// Scenario file applied over the `scenario.*` settings.
    #[arg(long)]
    pub spec: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Receives gt.txt, det.txt, features.txt and scenario.txt.
    #[arg(long, short)]
    pub out_dir: PathBuf,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long, short)]
    pub out: PathBuf,
    /// Held-out pairs tracked after training; 0 skips the evaluation.
    #[arg(long, default_value_t = 64)]
    pub held_out: usize,
    /// Also write the loss history, one value per line.
    #[arg(long)]
    pub history: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct AblateArgs {
    #[arg(long)]
    pub scenarios: Option<usize>,
    #[arg(long)]
    pub stride: Option<usize>,
    /// Adds network rows.
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    /// Exit with status 3 when a trend check fails.
    #[arg(long)]
    pub check: bool,
}

#[derive(Debug, Args)]
pub struct GradcheckArgs {
    #[arg(long)]
    pub eps: Option<f64>,
    #[arg(long)]
    pub tolerance: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
}

/// Builds the effective settings for `cli`. `flags` are applied last.
fn settings(cli: &Cli, flags: &[(&str, String)]) -> Result<RunConfig, CliError> {
    let mut cfg = RunConfig::default();
    if let Some(path) = &cli.config {
        cfg.apply_text(&read(path)?)?;
    }
    for kv in &cli.overrides {
        let (k, v) = kv.split_once('=').ok_or_else(|| CliError::Usage(format!("--set expects KEY=VALUE, got {kv:?}")))?;
        cfg.set(k.trim(), v)?;
    }
    for (k, v) in flags {
        cfg.set(k, v)?;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn flag<T: ToString>(out: &mut Vec<(&'static str, String)>, key: &'static str, v: Option<T>) {
    if let Some(v) = v {
        out.push((key, v.to_string()));
    }
}

fn load_params(path: &Path) -> Result<ModelParams, CliError> {
    load(path).map_err(|e| match e {
        crate::toynet::ToyNetError::Io(source) => CliError::Io { path: path.to_path_buf(), source },
        other => CliError::Runtime(format!("{}: {other}", path.display())),
    })
}

/// Parses `args` (program name first) and runs the command, writing normal
/// output to `out`. Returns the process exit code.
pub fn run_with<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let text = e.render().to_string();
            let _ = if code == 0 { out.write_all(text.as_bytes()) } else { err.write_all(text.as_bytes()) };
            return code;
        }
    };
    match execute(&cli, out) {
        Ok(()) => 0,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            e.exit_code()
        }
    }
}

/// Entry point for the binary.
pub fn main() -> i32 {
    run_with(std::env::args_os(), &mut std::io::stdout().lock(), &mut std::io::stderr().lock())
}

pub fn execute(cli: &Cli, out: &mut dyn Write) -> Result<(), CliError> {
    let w = |out: &mut dyn Write, text: &str| out.write_all(text.as_bytes()).map_err(runtime);
    match &cli.command {
        Command::Track(a) => {
            let mut flags = Vec::new();
            flag(&mut flags, "tracker.association", a.association.map(|v| if v == AssociationArg::Nms { "nms" } else { "hungarian" }));
            flag(&mut flags, "tracker.min_iou", a.min_iou);
            flag(&mut flags, "tracker.score_thresh", a.score_thresh);
            flag(&mut flags, "tracker.rebirth_k", a.rebirth_k);
            let cfg = settings(cli, &flags)?;
            let text = cmd_track(cli, a, &cfg)?;
            match &a.out {
                Some(p) => write(p, &text),
                None => w(out, &text),
            }
        }
        Command::Eval(a) => {
            let mut flags = Vec::new();
            flag(&mut flags, "eval.iou_thresh", a.iou_thresh);
            let cfg = settings(cli, &flags)?;
            let report = cmd_eval(a, &cfg)?;
            if let Some(p) = &a.out {
                write(p, &report.to_kv())?;
            }
            w(out, &report.to_table(&a.results.file_stem().map_or("results".into(), |s| s.to_string_lossy().into_owned())))
        }
        Command::Simulate(a) => {
            let mut cfg = settings(cli, &[])?;
            if let Some(p) = &a.spec {
                cfg.scenario = scenario_file(cli, &cfg, p)?;
            }
            if let Some(seed) = a.seed {
                cfg.scenario.seed = seed;
            }
            cfg.validate()?;
            let summary = cmd_simulate(&cfg.scenario, &a.out_dir)?;
            w(out, &summary)
        }
        Command::Train(a) => {
            let mut flags = Vec::new();
            flag(&mut flags, "train.epochs", a.epochs);
            flag(&mut flags, "train.seed", a.seed);
            let cfg = settings(cli, &flags)?;
            cmd_train(a, &cfg, out)
        }
        Command::Ablate(a) => {
            let mut flags = Vec::new();
            flag(&mut flags, "ablate.scenarios", a.scenarios);
            flag(&mut flags, "ablate.stride", a.stride);
            let cfg = settings(cli, &flags)?;
            let net = a.checkpoint.as_deref().map(load_params).transpose()?;
            let result = run_ablation(&cfg, net.as_ref()).map_err(runtime)?;
            w(out, &result.to_table())?;
            if a.check && !result.passed() {
                let failed: Vec<&str> = result.checks.iter().filter(|c| !c.passed).map(|c| c.name.as_str()).collect();
                return Err(CliError::Check(format!("ablation checks failed: {}", failed.join("; "))));
            }
            Ok(())
        }
        Command::Gradcheck(a) => {
            let mut flags = Vec::new();
            flag(&mut flags, "gradcheck.eps", a.eps);
            flag(&mut flags, "gradcheck.tolerance", a.tolerance);
            flag(&mut flags, "gradcheck.seed", a.seed);
            let cfg = settings(cli, &flags)?;
            let g = &cfg.gradcheck;
            let params = ModelParams::init(g.model, g.seed).map_err(runtime)?;
            let pair = gradcheck_pair(&g.model, g.seed).map_err(runtime)?;
            let report = grad_check(&params, &pair, &cfg.loss, g.eps).map_err(runtime)?;
            let ok = report.max_rel_error <= g.tolerance;
            w(
                out,
                &format!(
                    "{} parameters, {} checked, max relative error {:.3e} ({})\n{}\n",
                    params.num_scalars(),
                    report.checked,
                    report.max_rel_error,
                    report.worst,
                    if ok { "PASS" } else { "FAIL" }
                ),
            )?;
            if ok {
                Ok(())
            } else {
                Err(CliError::Check(format!("gradient error {:.3e} exceeds {:.1e}", report.max_rel_error, g.tolerance)))
            }
        }
        Command::Config => {
            let cfg = settings(cli, &[])?;
            w(out, &cfg.to_text())
        }
    }
}

fn cmd_track(cli: &Cli, a: &TrackArgs, cfg: &RunConfig) -> Result<String, CliError> {
    let provider = match a.provider {
        ProviderArg::Replay => Provider::Replay,
        ProviderArg::None => Provider::None,
        ProviderArg::Kalman => Provider::Kalman(cfg.kalman),
        ProviderArg::Toynet => {
            let path = a.checkpoint.as_deref().ok_or_else(|| CliError::Usage("--provider toynet needs --checkpoint".into()))?;
            Provider::ToyNet(Box::new(load_params(path)?))
        }
    };
    let tcfg = match provider {
        Provider::ToyNet(_) if a.score_thresh.is_none() => TrackerConfig { score_thresh: cfg.net_score_thresh, ..cfg.tracker },
        _ => cfg.tracker,
    };
    let outputs = match (&a.dets, &a.scenario) {
        (Some(path), _) => {
            if matches!(provider, Provider::ToyNet(_)) {
                return Err(CliError::Usage("--provider toynet reads feature grids; use --scenario".into()));
            }
            let dets = parse_mot(read(path)?.as_bytes(), MotKind::Det).map_err(|e| runtime(format!("{}: {e}", path.display())))?;
            let last = dets.iter().map(|f| f.frame).max().unwrap_or(0);
            let frames = plain_frames(a.frames.unwrap_or(last).max(last));
            track_frames(&frames, &dets, &provider, tcfg, cfg.scenario.image()).map_err(runtime)?
        }
        (None, Some(path)) => {
            let spec = scenario_file(cli, cfg, path)?;
            let s = generate(&spec).map_err(runtime)?;
            track_scenario(&s, &provider, tcfg).map_err(runtime)?
        }
        (None, None) => return Err(CliError::Usage("track needs --dets or --scenario".into())),
    };
    write_results(&outputs_to_annotations(&outputs)).map_err(runtime)
}

/// Reads a scenario file over `cfg.scenario`; `--set scenario.*` pairs
/// still win over the file.
fn scenario_file(cli: &Cli, cfg: &RunConfig, path: &Path) -> Result<ScenarioSpec, CliError> {
    let mut layered = cfg.clone();
    for (n, raw) in read(path)?.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let syntax = |message: String| ConfigError::Syntax { line: n + 1, message };
        let (k, v) = line.split_once('=').ok_or_else(|| syntax(format!("expected key = value, got {line:?}")))?;
        layered.set(&format!("scenario.{}", k.trim()), v).map_err(|e| syntax(e.to_string()))?;
    }
    for (k, v) in cli.overrides.iter().filter_map(|kv| kv.split_once('=')) {
        if k.trim().starts_with("scenario.") {
            layered.set(k.trim(), v)?;
        }
    }
    layered.scenario.validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;
    Ok(layered.scenario)
}

fn cmd_eval(a: &EvalArgs, cfg: &RunConfig) -> Result<MotReport, CliError> {
    let opts = ParseOptions { min_visibility: a.min_visibility, ..ParseOptions::default() };
    let gt = parse_mot_with(read(&a.gt)?.as_bytes(), MotKind::Gt, &opts).map_err(|e| runtime(format!("{}: {e}", a.gt.display())))?;
    let pred = parse_mot(read(&a.results)?.as_bytes(), MotKind::Result).map_err(|e| runtime(format!("{}: {e}", a.results.display())))?;
    evaluate(&gt, &pred, cfg.eval_iou).map_err(runtime)
}

fn cmd_simulate(spec: &ScenarioSpec, dir: &Path) -> Result<String, CliError> {
    let s = generate(spec).map_err(runtime)?;
    std::fs::create_dir_all(dir).map_err(|source| CliError::Io { path: dir.to_path_buf(), source })?;
    write(&dir.join("gt.txt"), &write_gt(&s.gt))?;
    write(&dir.join("det.txt"), &write_detections(&s.dets))?;
    write(&dir.join("scenario.txt"), &spec.to_text())?;
    let mut grids = String::new();
    for (i, g) in s.features.iter().enumerate() {
        grids.push_str(&format!("# frame {}\n", i + 1));
        grids.push_str(&g.to_text());
    }
    write(&dir.join("features.txt"), &grids)?;
    let boxes: usize = s.gt.iter().map(|f| f.entries.len()).sum();
    let dets: usize = s.dets.iter().map(|f| f.entries.len()).sum();
    Ok(format!("{} frames, {} objects, {boxes} gt boxes, {dets} detections -> {}\n", s.num_frames, s.objects.len(), dir.display()))
}

fn cmd_train(a: &TrainArgs, cfg: &RunConfig, out: &mut dyn Write) -> Result<(), CliError> {
    let data = cfg.dataset.build().map_err(runtime)?;
    let init = ModelParams::init(cfg.model, cfg.train.seed).map_err(|e| ConfigError::Invalid(e.to_string()))?;
    let tcfg = crate::toynet::TrainConfig { weights: cfg.loss, ..cfg.train };
    let _ = writeln!(out, "{} parameters, {} pairs, {} epochs", init.num_scalars(), data.len(), tcfg.epochs);
    let report = train_toy_with(&init, &data, &tcfg, |e, l, _| {
        let _ = writeln!(out, "epoch {e:4}  loss {l:.5}");
    })
    .map_err(runtime)?;
    save(&report.params, &a.out).map_err(|e| runtime(format!("{}: {e}", a.out.display())))?;
    if let Some(p) = &a.history {
        let lines: Vec<String> = report.history.iter().map(|v| v.to_string()).collect();
        write(p, &(lines.join("\n") + "\n"))?;
    }
    let first = report.history[0];
    let last = *report.history.last().unwrap_or(&first);
    let _ = writeln!(out, "loss {first:.5} -> {last:.5}");
    if a.held_out > 0 {
        let held = crate::toynet::DatasetSpec { pairs: a.held_out, seed: cfg.dataset.seed.wrapping_add(1), ..cfg.dataset.clone() }.build().map_err(runtime)?;
        let tracker = TrackerConfig { score_thresh: cfg.net_score_thresh, ..cfg.tracker };
        let r = evaluate_pairs(&report.params, &held, tracker, cfg.eval_iou).map_err(runtime)?;
        let _ = write!(out, "{}", r.to_table("held-out"));
    }
    let _ = writeln!(out, "wrote {}", a.out.display());
    Ok(())
}
