//! Provider, stride and association comparisons over a seeded scenario set.

use super::config::RunConfig;
use crate::geometry::iou;
use crate::io::{outputs_to_annotations, write_results, FrameAnnotations, ReplayDetector};
use crate::metrics::{combine, evaluate, MotReport};
use crate::motion::{FrozenBoxPropagator, KalmanParams, KalmanPropagator};
use crate::synth::{generate, OracleProvider, Scenario, ScenarioSpec};
use crate::toynet::{ModelParams, ToyNetProvider};
use crate::tracker::{run_joint, run_sequence, Association, Frame, FrameOutput, PayloadKind, QueryMode, RunError, TrackerConfig};
use std::fmt::Write as _;

/// Source of detection and tracking boxes for one run.
#[derive(Debug, Clone)]
pub enum Provider {
    /// Recorded detections; tracklets keep their last box.
    Replay,
    /// Same as [`Provider::Replay`]; named for the no-motion baseline.
    None,
    Kalman(KalmanParams),
    /// The network detects and propagates; frames must carry feature grids.
    ToyNet(Box<ModelParams>),
}

impl Provider {
    pub fn name(&self) -> &'static str {
        match self {
            Provider::Replay => "replay",
            Provider::None => "none",
            Provider::Kalman(_) => "kalman",
            Provider::ToyNet(_) => "toynet",
        }
    }
}

/// Runs the tracker over `frames`. Replay-based providers read `dets`; the
/// network reads the frames' grids and uses `image` to scale its boxes.
pub fn track_frames(
    frames: &[Frame<'_>],
    dets: &[FrameAnnotations],
    provider: &Provider,
    cfg: TrackerConfig,
    image: crate::geometry::ImageSize,
) -> Result<Vec<FrameOutput>, RunError> {
    let mut replay = ReplayDetector::with_length(dets, frames.len());
    match provider {
        Provider::Replay | Provider::None => {
            run_sequence(frames, &mut FrozenBoxPropagator, &mut replay, TrackerConfig { payload: PayloadKind::None, ..cfg })
        }
        Provider::Kalman(params) => run_sequence(
            frames,
            &mut KalmanPropagator { params: *params },
            &mut replay,
            TrackerConfig { payload: PayloadKind::Kalman(*params), ..cfg },
        ),
        Provider::ToyNet(params) => {
            let mut net = ToyNetProvider::new((**params).clone(), image);
            run_joint(frames, &mut net, TrackerConfig { payload: PayloadKind::TrackQuery, ..cfg })
        }
    }
}

pub fn track_scenario(s: &Scenario, provider: &Provider, cfg: TrackerConfig) -> Result<Vec<FrameOutput>, RunError> {
    track_frames(&s.frames(), &s.dets, provider, cfg, s.spec.image())
}

/// `count` scenarios from `template`, seeded `seed, seed + 1, ...`.
pub fn scenario_set(template: &ScenarioSpec, count: usize, seed: u64) -> Result<Vec<Scenario>, crate::synth::SynthError> {
    (0..count as u64).map(|i| generate(&ScenarioSpec { seed: seed + i, ..template.clone() })).collect()
}

/// True when no two visible ground-truth boxes of any frame overlap by
/// `max_iou` or more.
pub fn is_unambiguous(s: &Scenario, max_iou: f64) -> bool {
    s.visible_gt().iter().all(|f| {
        f.entries
            .iter()
            .enumerate()
            .all(|(i, a)| f.entries[i + 1..].iter().all(|b| iou(&a.bbox, &b.bbox) < max_iou))
    })
}

/// The first `count` scenarios from `template` (seeds counting up from
/// `seed`) that pass [`is_unambiguous`]; gives up after `100 * count` seeds.
pub fn unambiguous_set(template: &ScenarioSpec, count: usize, seed: u64, max_iou: f64) -> Result<Vec<Scenario>, crate::synth::SynthError> {
    let mut out = Vec::with_capacity(count);
    for k in 0..100 * count as u64 {
        if out.len() == count {
            break;
        }
        let s = generate(&ScenarioSpec { seed: seed + k, ..template.clone() })?;
        if is_unambiguous(&s, max_iou) {
            out.push(s);
        }
    }
    Ok(out)
}

#[derive(Debug, Clone)]
pub struct AblationRow {
    pub provider: &'static str,
    pub stride: usize,
    pub association: Association,
    pub report: MotReport,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

#[derive(Debug, Clone)]
pub struct Ablation {
    pub rows: Vec<AblationRow>,
    /// Unambiguous scenarios whose Hungarian and NMS result files match.
    pub identical: usize,
    pub unambiguous: usize,
    pub queries: QueryAblation,
    pub checks: Vec<Check>,
}

impl Ablation {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn row(&self, provider: &str, stride: usize, association: Association) -> Option<&MotReport> {
        self.rows
            .iter()
            .find(|r| r.provider == provider && r.stride == stride && r.association == association)
            .map(|r| &r.report)
    }

    pub fn to_table(&self) -> String {
        let mut s = format!("{}\n", MotReport::table_header());
        for r in &self.rows {
            let assoc = match r.association {
                Association::Hungarian => "hungarian",
                Association::Nms => "nms",
            };
            let _ = writeln!(s, "{}", r.report.table_row(&format!("{}/x{}/{assoc}", r.provider, r.stride)));
        }
        let _ = writeln!(s, "hungarian == nms on {}/{} unambiguous scenarios\n", self.identical, self.unambiguous);
        s.push_str(&self.queries.to_table());
        s.push('\n');
        for c in &self.checks {
            let _ = writeln!(s, "{} {}: {}", if c.passed { "PASS" } else { "FAIL" }, c.name, c.detail);
        }
        s
    }
}

fn pooled(set: &[Scenario], provider: &Provider, cfg: TrackerConfig, iou_thresh: f64) -> Result<MotReport, Box<dyn std::error::Error>> {
    let mut reports = Vec::with_capacity(set.len());
    for s in set {
        let out = track_scenario(s, provider, cfg)?;
        reports.push(evaluate(&s.visible_gt(), &outputs_to_annotations(&out), iou_thresh)?);
    }
    Ok(combine(&reports))
}

/// Relative gap `|a - b| / max(a, b)`, zero when both are zero.
pub fn relative_gap(a: usize, b: usize) -> f64 {
    let hi = a.max(b);
    if hi == 0 {
        0.0
    } else {
        a.abs_diff(b) as f64 / hi as f64
    }
}

/// Runs every provider at stride 1 and `cfg.ablate.stride` on scenarios from
/// the ablation template, then NMS association with the no-motion provider.
/// Result files of both association modes are compared on unambiguous
/// scenarios drawn from `cfg.scenario`, and the query modes are compared
/// with [`query_ablation`]. The network rows are skipped when `net` is
/// `None`.
pub fn run_ablation(cfg: &RunConfig, net: Option<&ModelParams>) -> Result<Ablation, Box<dyn std::error::Error>> {
    let base = scenario_set(&cfg.ablate.template, cfg.ablate.scenarios, cfg.ablate.seed)?;
    let strided = base.iter().map(|s| s.skip(cfg.ablate.stride)).collect::<Result<Vec<_>, _>>()?;
    let mut providers = vec![Provider::None, Provider::Kalman(cfg.kalman)];
    if let Some(p) = net {
        providers.push(Provider::ToyNet(Box::new(p.clone())));
    }
    let hungarian = TrackerConfig { association: Association::Hungarian, ..cfg.tracker };
    let mut rows = Vec::new();
    let strides: Vec<(usize, &[Scenario])> =
        if cfg.ablate.stride == 1 { vec![(1, &base)] } else { vec![(1, &base), (cfg.ablate.stride, &strided)] };
    for (stride, set) in &strides {
        for p in &providers {
            let mut tcfg = hungarian;
            if matches!(p, Provider::ToyNet(_)) {
                tcfg.score_thresh = cfg.net_score_thresh;
            }
            rows.push(AblationRow { provider: p.name(), stride: *stride, association: Association::Hungarian, report: pooled(set, p, tcfg, cfg.eval_iou)? });
        }
    }
    let nms = TrackerConfig { association: Association::Nms, ..cfg.tracker };
    rows.push(AblationRow { provider: "none", stride: 1, association: Association::Nms, report: pooled(&base, &Provider::None, nms, cfg.eval_iou)? });

    let sparse = unambiguous_set(&cfg.scenario, cfg.ablate.scenarios, cfg.ablate.seed, cfg.tracker.min_iou)?;
    let (mut identical, unambiguous) = (0, sparse.len());
    for s in &sparse {
        let a = write_results(&outputs_to_annotations(&track_scenario(s, &Provider::None, hungarian)?))?;
        let b = write_results(&outputs_to_annotations(&track_scenario(s, &Provider::None, nms)?))?;
        identical += usize::from(a == b);
    }

    let find = |name: &str, stride: usize| rows.iter().find(|r| r.provider == name && r.stride == stride && r.association == Association::Hungarian).map(|r| r.report.id_switches).unwrap_or(0);
    let mut checks = Vec::new();
    let s = cfg.ablate.stride;
    let (none_s, kalman_s) = (find("none", s), find("kalman", s));
    checks.push(Check {
        name: format!("stride {s}: idsw(none) >= idsw(kalman)"),
        passed: none_s >= kalman_s,
        detail: format!("{none_s} vs {kalman_s}"),
    });
    let (none_1, kalman_1) = (find("none", 1), find("kalman", 1));
    let gap = relative_gap(none_1, kalman_1);
    checks.push(Check { name: "stride 1: idsw within 10%".into(), passed: gap <= 0.1, detail: format!("{none_1} vs {kalman_1}, gap {:.1}%", 100.0 * gap) });
    checks.push(Check {
        name: "hungarian == nms when unambiguous".into(),
        passed: unambiguous > 0 && identical == unambiguous,
        detail: format!("{identical}/{unambiguous} identical"),
    });

    let queries = query_ablation(&QueryAblation::long_range_spec(), &QueryAblation::late_births_spec(), 4, cfg.tracker, cfg.eval_iou)?;
    let pick = |rows: &[(&'static str, MotReport)], mode: &str| QueryAblation::get(rows, mode).unwrap_or_default();
    let (both, object_only) = (pick(&queries.long_range, "both"), pick(&queries.long_range, "object_only"));
    checks.push(Check {
        name: "fast motion: idsw(object_only) > idsw(both)".into(),
        passed: object_only.id_switches > both.id_switches,
        detail: format!("{} vs {}", object_only.id_switches, both.id_switches),
    });
    let (both, track_only) = (pick(&queries.late_births, "both"), pick(&queries.late_births, "track_only"));
    checks.push(Check {
        name: "late births: fn(track_only) > fn(both)".into(),
        passed: track_only.false_negatives > both.false_negatives,
        detail: format!("{} vs {}", track_only.false_negatives, both.false_negatives),
    });
    Ok(Ablation { rows, identical, unambiguous, queries, checks })
}

/// Which query sets feed the tracker in a [`query_ablation`] run.
pub const QUERY_MODES: [(&str, QueryMode); 3] = [("both", QueryMode::Both), ("object_only", QueryMode::ObjectOnly), ("track_only", QueryMode::TrackOnly)];

#[derive(Debug, Clone)]
pub struct QueryAblation {
    /// `(mode, report)` on the fast-moving scenario.
    pub long_range: Vec<(&'static str, MotReport)>,
    /// `(mode, report)` on the scenario with late births.
    pub late_births: Vec<(&'static str, MotReport)>,
}

impl QueryAblation {
    /// Four objects crossing most of the image within 40 frames.
    pub fn long_range_spec() -> ScenarioSpec {
        ScenarioSpec { num_frames: 40, speed_min: 6.0, speed_max: 9.0, ..ScenarioSpec::default() }
    }

    /// Objects entering at frames 1, 8, 15 and 22.
    pub fn late_births_spec() -> ScenarioSpec {
        ScenarioSpec { num_frames: 30, lifetimes: vec![(1, 30), (8, 30), (15, 30), (22, 30)], ..ScenarioSpec::default() }
    }

    pub fn get(rows: &[(&'static str, MotReport)], mode: &str) -> Option<MotReport> {
        rows.iter().find(|(m, _)| *m == mode).map(|(_, r)| r.clone())
    }

    pub fn to_table(&self) -> String {
        let mut s = format!("{}\n", MotReport::table_header());
        for (label, rows) in [("fast", &self.long_range), ("births", &self.late_births)] {
            for (mode, r) in rows {
                let _ = writeln!(s, "{}", r.table_row(&format!("{label}/{mode}")));
            }
        }
        s
    }
}

fn oracle_run(s: &Scenario, mode: QueryMode, regions: usize, cfg: TrackerConfig, iou_thresh: f64) -> Result<MotReport, Box<dyn std::error::Error>> {
    let mut oracle = OracleProvider::new(s, regions);
    let out = run_joint(&s.frames(), &mut oracle, TrackerConfig { query_mode: mode, payload: PayloadKind::TrackQuery, ..cfg })?;
    Ok(evaluate(&s.visible_gt(), &outputs_to_annotations(&out), iou_thresh)?)
}

/// Runs every query mode with the scenario oracle as provider on both
/// scenarios. Detection slots are image regions on a `regions x regions`
/// grid, so slot-index association breaks when an object changes region.
pub fn query_ablation(long_range: &ScenarioSpec, late_births: &ScenarioSpec, regions: usize, cfg: TrackerConfig, iou_thresh: f64) -> Result<QueryAblation, Box<dyn std::error::Error>> {
    let (fast, births) = (generate(long_range)?, generate(late_births)?);
    let mut out = QueryAblation { long_range: Vec::new(), late_births: Vec::new() };
    for (name, mode) in QUERY_MODES {
        out.long_range.push((name, oracle_run(&fast, mode, regions, cfg, iou_thresh)?));
        out.late_births.push((name, oracle_run(&births, mode, regions, cfg, iou_thresh)?));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn relative_gap_cases() {
        assert_eq!(relative_gap(0, 0), 0.0);
        assert_eq!(relative_gap(10, 9), 0.1);
        assert_eq!(relative_gap(0, 3), 1.0);
    }

    #[test]
    fn gt_detections_track_perfectly_with_every_replay_provider() {
        let s = generate(&ScenarioSpec { seed: 5, ..ScenarioSpec::default() }).unwrap();
        for p in [Provider::Replay, Provider::None, Provider::Kalman(KalmanParams::default())] {
            let out = track_scenario(&s, &p, TrackerConfig::default()).unwrap();
            let r = evaluate(&s.visible_gt(), &outputs_to_annotations(&out), 0.5).unwrap();
            assert_eq!((r.mota, r.id_switches), (100.0, 0), "{}", p.name());
        }
    }
}
