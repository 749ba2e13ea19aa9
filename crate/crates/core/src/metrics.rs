//! CLEAR-MOT metrics and IDF1.
//!
//! Frames are processed in order. Correspondences from the previous frame
//! that still overlap at `iou_thresh` are kept; the remaining ground truth
//! and predictions are matched by maximum total IoU. Unmatched predictions
//! are false positives, unmatched ground truth are misses, and a ground
//! truth object matched to a different prediction ID than at its last match
//! is an ID switch. All percentages are relative to the number of
//! ground-truth boxes.

use crate::assignment::{solve_min_cost, CostMatrix};
use crate::geometry::iou;
use crate::io::{FrameAnnotations, MotEntry};
use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt::Write as _;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MetricsError {
    #[error("duplicate id {id} in frame {frame} of the {which} sequence")]
    DuplicateId { which: &'static str, frame: usize, id: i64 },
    #[error("prediction frame {frame} lies outside the ground-truth range 1..={last}")]
    FrameRange { frame: usize, last: usize },
    #[error("iou threshold {0} outside [0, 1]")]
    Threshold(f64),
    #[error("malformed report line {line}: {message}")]
    Parse { line: usize, message: String },
}

pub const DEFAULT_IOU_THRESH: f64 = 0.5;

#[derive(Debug, Clone, PartialEq, Default)]
pub struct MotReport {
    pub mota: f64,
    pub motp: f64,
    pub idf1: f64,
    pub false_positives: usize,
    pub false_negatives: usize,
    pub id_switches: usize,
    pub fp_rate: f64,
    pub fn_rate: f64,
    pub idsw_rate: f64,
    /// Percent of ground-truth trajectories covered for at least 80% of their frames.
    pub mt: f64,
    /// Percent of ground-truth trajectories covered for at most 20% of their frames.
    pub ml: f64,
    pub gt_count: usize,
    pub pred_count: usize,
    pub matches: usize,
    pub gt_tracks: usize,
}

/// MOTA from error percentages.
pub fn mota_from_rates(fp_rate: f64, fn_rate: f64, idsw_rate: f64) -> f64 {
    100.0 - fp_rate - fn_rate - idsw_rate
}

fn percent(count: usize, total: usize) -> f64 {
    100.0 * count as f64 / total.max(1) as f64
}

impl MotReport {
    /// Builds the count-derived fields from raw event counts.
    pub fn from_counts(gt_count: usize, false_positives: usize, false_negatives: usize, id_switches: usize) -> Self {
        let fp_rate = percent(false_positives, gt_count);
        let fn_rate = percent(false_negatives, gt_count);
        let idsw_rate = percent(id_switches, gt_count);
        Self {
            mota: mota_from_rates(fp_rate, fn_rate, idsw_rate),
            false_positives,
            false_negatives,
            id_switches,
            fp_rate,
            fn_rate,
            idsw_rate,
            gt_count,
            ..Default::default()
        }
    }

    pub const KEYS: [&'static str; 15] = [
        "mota", "motp", "idf1", "fp", "fn", "idsw", "fp_rate", "fn_rate", "idsw_rate", "mt", "ml", "gt_count", "pred_count", "matches",
        "gt_tracks",
    ];

    /// One `key=value` line per metric, in [`MotReport::KEYS`] order.
    pub fn to_kv(&self) -> String {
        let mut s = String::new();
        let floats = [("mota", self.mota), ("motp", self.motp), ("idf1", self.idf1)];
        for (k, v) in floats {
            let _ = writeln!(s, "{k}={v}");
        }
        let _ = writeln!(s, "fp={}", self.false_positives);
        let _ = writeln!(s, "fn={}", self.false_negatives);
        let _ = writeln!(s, "idsw={}", self.id_switches);
        for (k, v) in [("fp_rate", self.fp_rate), ("fn_rate", self.fn_rate), ("idsw_rate", self.idsw_rate), ("mt", self.mt), ("ml", self.ml)] {
            let _ = writeln!(s, "{k}={v}");
        }
        for (k, v) in [("gt_count", self.gt_count), ("pred_count", self.pred_count), ("matches", self.matches), ("gt_tracks", self.gt_tracks)] {
            let _ = writeln!(s, "{k}={v}");
        }
        s
    }

    pub fn from_kv(text: &str) -> Result<Self, MetricsError> {
        let mut r = MotReport::default();
        for (n, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            let err = |message: String| MetricsError::Parse { line: n + 1, message };
            let (k, v) = line.split_once('=').ok_or_else(|| err("expected key=value".into()))?;
            let f = || v.parse::<f64>().map_err(|_| err(format!("bad number {v:?}")));
            let u = || v.parse::<usize>().map_err(|_| err(format!("bad count {v:?}")));
            match k {
                "mota" => r.mota = f()?,
                "motp" => r.motp = f()?,
                "idf1" => r.idf1 = f()?,
                "fp" => r.false_positives = u()?,
                "fn" => r.false_negatives = u()?,
                "idsw" => r.id_switches = u()?,
                "fp_rate" => r.fp_rate = f()?,
                "fn_rate" => r.fn_rate = f()?,
                "idsw_rate" => r.idsw_rate = f()?,
                "mt" => r.mt = f()?,
                "ml" => r.ml = f()?,
                "gt_count" => r.gt_count = u()?,
                "pred_count" => r.pred_count = u()?,
                "matches" => r.matches = u()?,
                "gt_tracks" => r.gt_tracks = u()?,
                other => return Err(err(format!("unknown key {other:?}"))),
            }
        }
        Ok(r)
    }

    pub fn table_header() -> String {
        format!(
            "{:<20} {:>7} {:>7} {:>7} {:>6} {:>6} {:>7} {:>7} {:>6} {:>6} {:>6} {:>6}",
            "name", "MOTA", "IDF1", "MOTP", "MT", "ML", "FP", "FN", "IDs", "FP%", "FN%", "IDs%"
        )
    }

    pub fn table_row(&self, name: &str) -> String {
        format!(
            "{:<20} {:>7.1} {:>7.1} {:>7.1} {:>6.1} {:>6.1} {:>7} {:>7} {:>6} {:>6.1} {:>6.1} {:>6.1}",
            name,
            self.mota,
            self.idf1,
            self.motp,
            self.mt,
            self.ml,
            self.false_positives,
            self.false_negatives,
            self.id_switches,
            self.fp_rate,
            self.fn_rate,
            self.idsw_rate
        )
    }

    /// Aligned text table with a single row.
    pub fn to_table(&self, name: &str) -> String {
        format!("{}\n{}\n", Self::table_header(), self.table_row(name))
    }
}

type FrameMap<'a> = BTreeMap<usize, Vec<&'a MotEntry>>;

fn index_frames<'a>(seq: &'a [FrameAnnotations], which: &'static str) -> Result<FrameMap<'a>, MetricsError> {
    let mut map: FrameMap<'a> = BTreeMap::new();
    for f in seq {
        let slot = map.entry(f.frame).or_default();
        for e in &f.entries {
            if slot.iter().any(|o| o.id == e.id) {
                return Err(MetricsError::DuplicateId { which, frame: f.frame, id: e.id });
            }
            slot.push(e);
        }
    }
    for entries in map.values_mut() {
        entries.sort_by_key(|e| e.id);
    }
    Ok(map)
}

fn check_inputs<'a>(gt: &'a [FrameAnnotations], pred: &'a [FrameAnnotations], iou_thresh: f64) -> Result<(FrameMap<'a>, FrameMap<'a>), MetricsError> {
    if !(0.0..=1.0).contains(&iou_thresh) {
        return Err(MetricsError::Threshold(iou_thresh));
    }
    let g = index_frames(gt, "ground-truth")?;
    let p = index_frames(pred, "prediction")?;
    if let Some(&last) = g.keys().next_back() {
        if let Some(&frame) = p.keys().find(|&&f| f > last) {
            return Err(MetricsError::FrameRange { frame, last });
        }
    }
    Ok((g, p))
}

/// CLEAR-MOT evaluation plus IDF1.
pub fn evaluate(gt: &[FrameAnnotations], pred: &[FrameAnnotations], iou_thresh: f64) -> Result<MotReport, MetricsError> {
    let (gmap, pmap) = check_inputs(gt, pred, iou_thresh)?;
    let frames: BTreeSet<usize> = gmap.keys().chain(pmap.keys()).copied().collect();
    let empty = Vec::new();

    let mut last_match: HashMap<i64, i64> = HashMap::new();
    let mut prev_pairs: HashMap<i64, i64> = HashMap::new();
    let mut gt_frames: BTreeMap<i64, (usize, usize)> = BTreeMap::new();
    let (mut fp, mut misses, mut idsw, mut matches, mut gt_count, mut pred_count) = (0, 0, 0, 0, 0, 0);
    let mut iou_sum = 0.0;

    for frame in frames {
        let gts = gmap.get(&frame).unwrap_or(&empty);
        let preds = pmap.get(&frame).unwrap_or(&empty);
        gt_count += gts.len();
        pred_count += preds.len();
        let mut gt_used = vec![false; gts.len()];
        let mut pred_used = vec![false; preds.len()];
        let mut pairs: Vec<(usize, usize, f64)> = Vec::new();

        // carry over last frame's correspondences
        for (gi, g) in gts.iter().enumerate() {
            let Some(&pid) = prev_pairs.get(&g.id) else { continue };
            if let Some(pi) = preds.iter().position(|p| p.id == pid) {
                let v = iou(&g.bbox, &preds[pi].bbox);
                if v >= iou_thresh && !pred_used[pi] {
                    gt_used[gi] = true;
                    pred_used[pi] = true;
                    pairs.push((gi, pi, v));
                }
            }
        }

        let free_g: Vec<usize> = (0..gts.len()).filter(|&i| !gt_used[i]).collect();
        let free_p: Vec<usize> = (0..preds.len()).filter(|&i| !pred_used[i]).collect();
        if !free_g.is_empty() && !free_p.is_empty() {
            let overlaps: Vec<f64> = free_g.iter().flat_map(|&gi| free_p.iter().map(move |&pi| iou(&gts[gi].bbox, &preds[pi].bbox))).collect();
            let costs = CostMatrix::new(
                free_g.len(),
                free_p.len(),
                overlaps.iter().map(|&v| if v >= iou_thresh && v > 0.0 { -v } else { 0.0 }).collect(),
            )
            .expect("finite");
            for (r, c) in solve_min_cost(&costs).pairs {
                let v = overlaps[r * free_p.len() + c];
                if v >= iou_thresh && v > 0.0 {
                    pairs.push((free_g[r], free_p[c], v));
                }
            }
        }

        prev_pairs.clear();
        for &(gi, pi, v) in &pairs {
            let (gid, pid) = (gts[gi].id, preds[pi].id);
            if let Some(&old) = last_match.get(&gid) {
                if old != pid {
                    idsw += 1;
                }
            }
            last_match.insert(gid, pid);
            prev_pairs.insert(gid, pid);
            iou_sum += v;
            gt_frames.entry(gid).or_default().1 += 1;
        }
        for g in gts.iter() {
            gt_frames.entry(g.id).or_default().0 += 1;
        }
        matches += pairs.len();
        fp += preds.len() - pairs.len();
        misses += gts.len() - pairs.len();
    }

    let mut report = MotReport::from_counts(gt_count, fp, misses, idsw);
    report.motp = if matches == 0 { 0.0 } else { 100.0 * iou_sum / matches as f64 };
    report.pred_count = pred_count;
    report.matches = matches;
    report.gt_tracks = gt_frames.len();
    let mostly_tracked = gt_frames.values().filter(|(total, hit)| *hit as f64 >= 0.8 * *total as f64).count();
    let mostly_lost = gt_frames.values().filter(|(total, hit)| *hit as f64 <= 0.2 * *total as f64).count();
    report.mt = percent(mostly_tracked, gt_frames.len());
    report.ml = percent(mostly_lost, gt_frames.len());
    report.idf1 = idf1_indexed(&gmap, &pmap, iou_thresh);
    Ok(report)
}

fn idf1_indexed(gmap: &FrameMap<'_>, pmap: &FrameMap<'_>, iou_thresh: f64) -> f64 {
    let gt_ids: Vec<i64> = gmap.values().flatten().map(|e| e.id).collect::<BTreeSet<_>>().into_iter().collect();
    let pred_ids: Vec<i64> = pmap.values().flatten().map(|e| e.id).collect::<BTreeSet<_>>().into_iter().collect();
    let total_gt: usize = gmap.values().map(Vec::len).sum();
    let total_pred: usize = pmap.values().map(Vec::len).sum();
    if total_gt + total_pred == 0 {
        return 100.0;
    }
    let gpos: HashMap<i64, usize> = gt_ids.iter().enumerate().map(|(i, &id)| (id, i)).collect();
    let ppos: HashMap<i64, usize> = pred_ids.iter().enumerate().map(|(i, &id)| (id, i)).collect();
    let mut overlap = vec![0usize; gt_ids.len() * pred_ids.len()];
    for (frame, gts) in gmap {
        let Some(preds) = pmap.get(frame) else { continue };
        for g in gts {
            for p in preds {
                if iou(&g.bbox, &p.bbox) >= iou_thresh {
                    overlap[gpos[&g.id] * pred_ids.len() + ppos[&p.id]] += 1;
                }
            }
        }
    }
    let costs = CostMatrix::new(gt_ids.len(), pred_ids.len(), overlap.iter().map(|&n| -(n as f64)).collect()).expect("finite");
    let idtp: usize = solve_min_cost(&costs).pairs.iter().map(|&(r, c)| overlap[r * pred_ids.len() + c]).sum();
    100.0 * 2.0 * idtp as f64 / (total_gt + total_pred) as f64
}

/// IDF1 under the best global one-to-one mapping of ground-truth IDs to
/// prediction IDs.
pub fn idf1(gt: &[FrameAnnotations], pred: &[FrameAnnotations], iou_thresh: f64) -> Result<f64, MetricsError> {
    let (g, p) = check_inputs(gt, pred, iou_thresh)?;
    Ok(idf1_indexed(&g, &p, iou_thresh))
}

/// Sums raw counts of several reports into one.
pub fn combine(reports: &[MotReport]) -> MotReport {
    let gt_count = reports.iter().map(|r| r.gt_count).sum();
    let mut out = MotReport::from_counts(
        gt_count,
        reports.iter().map(|r| r.false_positives).sum(),
        reports.iter().map(|r| r.false_negatives).sum(),
        reports.iter().map(|r| r.id_switches).sum(),
    );
    out.matches = reports.iter().map(|r| r.matches).sum();
    out.pred_count = reports.iter().map(|r| r.pred_count).sum();
    out.gt_tracks = reports.iter().map(|r| r.gt_tracks).sum();
    let weighted = |f: fn(&MotReport) -> f64, w: fn(&MotReport) -> f64| {
        let total: f64 = reports.iter().map(w).sum();
        if total == 0.0 {
            0.0
        } else {
            reports.iter().map(|r| f(r) * w(r)).sum::<f64>() / total
        }
    };
    out.motp = weighted(|r| r.motp, |r| r.matches as f64);
    out.mt = weighted(|r| r.mt, |r| r.gt_tracks as f64);
    out.ml = weighted(|r| r.ml, |r| r.gt_tracks as f64);
    out.idf1 = weighted(|r| r.idf1, |r| (r.gt_count + r.pred_count) as f64);
    out
}
