//! MOTChallenge text format: ground truth, detections and tracker results.
//!
//! Every line is `frame,id,bb_left,bb_top,bb_width,bb_height,conf,<x>,<y>,<z>`.
//! Ground-truth files reuse the last three columns as class and
//! visibility. Coordinates are kept as written (1-based pixels).

use crate::geometry::BBox;
use crate::tracker::{Detection, Detector, Frame, FrameOutput, ProviderError};
use std::collections::{BTreeMap, HashSet};
use std::io::BufRead;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum MotIoError {
    #[error("line {line}: {message}")]
    Malformed { line: usize, message: String },
    #[error("line {line}: duplicate id {id} in frame {frame}")]
    Duplicate { line: usize, frame: usize, id: i64 },
    #[error("frame {frame}: result ids must be >= 1, got {id}")]
    InvalidId { frame: usize, id: i64 },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MotKind {
    Gt,
    Det,
    Result,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MotEntry {
    /// Track id, `-1` for detections.
    pub id: i64,
    pub bbox: BBox,
    pub conf: f64,
    pub class_id: i64,
    pub visibility: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct FrameAnnotations {
    /// 1-based frame number.
    pub frame: usize,
    pub entries: Vec<MotEntry>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ParseOptions {
    /// Ground-truth rows below this visibility are dropped.
    pub min_visibility: f64,
    /// Ground-truth class kept (pedestrian).
    pub keep_class: i64,
}

impl Default for ParseOptions {
    fn default() -> Self {
        Self { min_visibility: 0.0, keep_class: 1 }
    }
}

fn field<T: std::str::FromStr>(fields: &[&str], idx: usize, name: &str, line: usize) -> Result<T, MotIoError> {
    let raw = fields.get(idx).ok_or_else(|| MotIoError::Malformed { line, message: format!("missing field {name}") })?;
    raw.trim().parse().map_err(|_| MotIoError::Malformed { line, message: format!("bad {name}: {raw:?}") })
}

/// Integer field that may be written as a float (`"1.0"`).
fn int_field(fields: &[&str], idx: usize, name: &str, line: usize) -> Result<i64, MotIoError> {
    let v: f64 = field(fields, idx, name, line)?;
    if v.fract() != 0.0 || !v.is_finite() {
        return Err(MotIoError::Malformed { line, message: format!("{name} is not an integer: {v}") });
    }
    Ok(v as i64)
}

pub fn parse_mot<R: BufRead>(reader: R, kind: MotKind) -> Result<Vec<FrameAnnotations>, MotIoError> {
    parse_mot_with(reader, kind, &ParseOptions::default())
}

pub fn parse_mot_with<R: BufRead>(reader: R, kind: MotKind, opts: &ParseOptions) -> Result<Vec<FrameAnnotations>, MotIoError> {
    let mut frames: BTreeMap<usize, Vec<MotEntry>> = BTreeMap::new();
    let mut seen: HashSet<(usize, i64)> = HashSet::new();
    for (n, line) in reader.lines().enumerate() {
        let line_no = n + 1;
        let line = line?;
        let trimmed = line.trim();
        if trimmed.is_empty() {
            continue;
        }
        let fields: Vec<&str> = trimmed.split(',').collect();
        let min_fields = if kind == MotKind::Gt { 9 } else { 7 };
        if fields.len() < min_fields {
            return Err(MotIoError::Malformed { line: line_no, message: format!("expected at least {min_fields} fields, got {}", fields.len()) });
        }
        let frame = int_field(&fields, 0, "frame", line_no)?;
        if frame < 1 {
            return Err(MotIoError::Malformed { line: line_no, message: format!("frame must be >= 1, got {frame}") });
        }
        let frame = frame as usize;
        let mut id = int_field(&fields, 1, "id", line_no)?;
        let left: f64 = field(&fields, 2, "bb_left", line_no)?;
        let top: f64 = field(&fields, 3, "bb_top", line_no)?;
        let width: f64 = field(&fields, 4, "bb_width", line_no)?;
        let height: f64 = field(&fields, 5, "bb_height", line_no)?;
        let conf: f64 = field(&fields, 6, "conf", line_no)?;
        let bbox = BBox::try_new(left, top, width, height).map_err(|e| MotIoError::Malformed { line: line_no, message: e.to_string() })?;
        let (class_id, visibility) = match kind {
            MotKind::Gt => (int_field(&fields, 7, "class", line_no)?, field(&fields, 8, "visibility", line_no)?),
            MotKind::Det | MotKind::Result => (1, 1.0),
        };
        if kind == MotKind::Det {
            id = -1;
        } else if !seen.insert((frame, id)) {
            return Err(MotIoError::Duplicate { line: line_no, frame, id });
        }
        if kind == MotKind::Gt && (class_id != opts.keep_class || visibility < opts.min_visibility) {
            continue;
        }
        frames.entry(frame).or_default().push(MotEntry { id, bbox, conf, class_id, visibility });
    }
    Ok(frames.into_iter().map(|(frame, entries)| FrameAnnotations { frame, entries }).collect())
}

fn sorted_entries(seq: &[FrameAnnotations]) -> Vec<(usize, MotEntry)> {
    let mut rows: Vec<(usize, MotEntry)> = seq.iter().flat_map(|f| f.entries.iter().map(move |e| (f.frame, *e))).collect();
    rows.sort_by(|a, b| a.0.cmp(&b.0).then(a.1.id.cmp(&b.1.id)));
    rows
}

/// Tracker results: `frame,id,left,top,w,h,conf,-1,-1,-1`, frames and ids ascending.
pub fn write_results(seq: &[FrameAnnotations]) -> Result<String, MotIoError> {
    let mut out = String::new();
    for (frame, e) in sorted_entries(seq) {
        if e.id < 1 {
            return Err(MotIoError::InvalidId { frame, id: e.id });
        }
        out.push_str(&format!(
            "{},{},{:.2},{:.2},{:.2},{:.2},{:.2},-1,-1,-1\n",
            frame, e.id, e.bbox.left, e.bbox.top, e.bbox.width, e.bbox.height, e.conf
        ));
    }
    Ok(out)
}

/// Detections in file order: `frame,-1,left,top,w,h,conf,-1,-1,-1`.
pub fn write_detections(seq: &[FrameAnnotations]) -> String {
    let mut out = String::new();
    let mut frames: Vec<&FrameAnnotations> = seq.iter().collect();
    frames.sort_by_key(|f| f.frame);
    for f in frames {
        for e in &f.entries {
            out.push_str(&format!(
                "{},-1,{:.2},{:.2},{:.2},{:.2},{:.2},-1,-1,-1\n",
                f.frame, e.bbox.left, e.bbox.top, e.bbox.width, e.bbox.height, e.conf
            ));
        }
    }
    out
}

/// Ground truth: `frame,id,left,top,w,h,conf,class,visibility`.
pub fn write_gt(seq: &[FrameAnnotations]) -> String {
    let mut out = String::new();
    for (frame, e) in sorted_entries(seq) {
        out.push_str(&format!(
            "{},{},{:.2},{:.2},{:.2},{:.2},{},{},{:.2}\n",
            frame, e.id, e.bbox.left, e.bbox.top, e.bbox.width, e.bbox.height, e.conf, e.class_id, e.visibility
        ));
    }
    out
}

/// Converts tracker output into result annotations.
pub fn outputs_to_annotations(outputs: &[FrameOutput]) -> Vec<FrameAnnotations> {
    outputs
        .iter()
        .map(|o| FrameAnnotations {
            frame: o.frame,
            entries: o
                .tracks
                .iter()
                .map(|t| MotEntry { id: t.id as i64, bbox: t.bbox, conf: t.score, class_id: 1, visibility: 1.0 })
                .collect(),
        })
        .collect()
}

#[derive(Debug, Error)]
#[error("frame {frame} is beyond the last recorded frame {last}")]
pub struct FrameOutOfRange {
    pub frame: usize,
    pub last: usize,
}

/// Serves recorded detections, confidence as score, in file order.
#[derive(Debug, Clone)]
pub struct ReplayDetector {
    frames: BTreeMap<usize, Vec<Detection>>,
    last_frame: usize,
}

impl ReplayDetector {
    pub fn new(dets: &[FrameAnnotations]) -> Self {
        let last = dets.iter().map(|f| f.frame).max().unwrap_or(0);
        Self::with_length(dets, last)
    }

    /// A replay covering frames `1..=num_frames`.
    pub fn with_length(dets: &[FrameAnnotations], num_frames: usize) -> Self {
        let mut frames: BTreeMap<usize, Vec<Detection>> = BTreeMap::new();
        for f in dets {
            frames.entry(f.frame).or_default().extend(f.entries.iter().map(|e| Detection::new(e.bbox, e.conf)));
        }
        Self { frames, last_frame: num_frames.max(dets.iter().map(|f| f.frame).max().unwrap_or(0)) }
    }

    pub fn last_frame(&self) -> usize {
        self.last_frame
    }
}

impl Detector for ReplayDetector {
    fn detect(&mut self, frame: &Frame<'_>) -> Result<Vec<Detection>, ProviderError> {
        if frame.index > self.last_frame {
            return Err(Box::new(FrameOutOfRange { frame: frame.index, last: self.last_frame }));
        }
        Ok(self.frames.get(&frame.index).cloned().unwrap_or_default())
    }
}
