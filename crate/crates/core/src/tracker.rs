//! Joint detection and tracking state machine.
//!
//! Every frame the tracker receives detection boxes (from learned object
//! queries or any other detector) and tracking boxes (previous objects
//! propagated to the current frame), associates them, keeps IDs of matched
//! tracklets, and creates new tracklets from unmatched detections.
//! Unmatched tracklets turn inactive and survive for `rebirth_k` consecutive
//! misses, during which a detection can still claim their ID.

use crate::assignment::{match_by_iou, nms_groups};
use crate::geometry::BBox;
use crate::motion::{kf_init, kf_update, KalmanParams, KalmanState, MotionError};
use crate::synth::FeatureGrid;
use std::collections::{BTreeMap, HashMap};
use thiserror::Error;

pub type TrackId = u64;

/// Failure reported by a detector or propagator.
pub type ProviderError = Box<dyn std::error::Error + Send + Sync>;

#[derive(Debug, Error)]
pub enum TrackerError {
    #[error("tracking box refers to tracklet {0}, which is not live")]
    UnknownTracklet(TrackId),
    #[error("tracklet {0} received more than one tracking box")]
    DuplicateTrackBox(TrackId),
    #[error(transparent)]
    Motion(#[from] MotionError),
    #[error("invalid tracker config: {0}")]
    Config(String),
}

#[derive(Debug, Error)]
pub enum RunError {
    #[error("provider failed at frame {frame}: {source}")]
    Provider { frame: usize, source: ProviderError },
    #[error("tracker failed at frame {frame}: {source}")]
    Tracker { frame: usize, source: TrackerError },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TrackState {
    Active,
    Inactive,
}

/// Propagation state carried by a tracklet.
#[derive(Debug, Clone, PartialEq)]
pub enum Payload {
    None,
    Motion(KalmanState),
    Query(Vec<f64>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Tracklet {
    pub id: TrackId,
    pub bbox: BBox,
    pub score: f64,
    pub state: TrackState,
    pub inactive_count: u32,
    /// Query slot that produced the tracklet, used by index association.
    pub slot: Option<usize>,
    pub payload: Payload,
}

/// A detection box with optional decoder outputs.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Detection {
    pub bbox: BBox,
    pub score: f64,
    pub class_probs: Vec<f64>,
    pub feature: Vec<f64>,
    pub slot: Option<usize>,
}

impl Detection {
    pub fn new(bbox: BBox, score: f64) -> Self {
        Self { bbox, score, ..Default::default() }
    }
}

/// A live tracklet propagated into the current frame.
#[derive(Debug, Clone, PartialEq)]
pub struct TrackBox {
    pub track_id: TrackId,
    pub bbox: BBox,
    pub score: f64,
    pub feature: Vec<f64>,
    /// Propagated state; replaces the stored payload if the tracklet matches.
    pub payload: Option<Payload>,
}

impl TrackBox {
    pub fn new(track_id: TrackId, bbox: BBox, score: f64) -> Self {
        Self { track_id, bbox, score, feature: Vec::new(), payload: None }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Association {
    /// Kuhn-Munkres on IoU between detection and tracking boxes.
    Hungarian,
    /// Greedy NMS over the pooled boxes; surviving detections start tracklets.
    Nms,
}

/// Which query sets feed the tracker.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum QueryMode {
    /// Detection boxes and tracking boxes, associated by IoU.
    Both,
    /// Detection boxes only, associated by their query slot index.
    ObjectOnly,
    /// Tracking boxes only; detections are used on the first frame alone.
    TrackOnly,
}

/// How tracklet payloads are created and refreshed.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum PayloadKind {
    None,
    Kalman(KalmanParams),
    TrackQuery,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrackerConfig {
    pub rebirth_k: u32,
    pub min_iou: f64,
    pub association: Association,
    pub score_thresh: f64,
    pub query_mode: QueryMode,
    pub payload: PayloadKind,
}

impl Default for TrackerConfig {
    fn default() -> Self {
        Self {
            rebirth_k: 32,
            min_iou: 0.3,
            association: Association::Hungarian,
            score_thresh: 0.5,
            query_mode: QueryMode::Both,
            payload: PayloadKind::None,
        }
    }
}

impl TrackerConfig {
    pub fn validate(&self) -> Result<(), TrackerError> {
        if !(0.0..=1.0).contains(&self.min_iou) {
            return Err(TrackerError::Config(format!("min_iou {} outside [0, 1]", self.min_iou)));
        }
        if !(0.0..=1.0).contains(&self.score_thresh) {
            return Err(TrackerError::Config(format!("score_thresh {} outside [0, 1]", self.score_thresh)));
        }
        Ok(())
    }
}

/// One reported box of a frame.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrackOutput {
    pub id: TrackId,
    pub bbox: BBox,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FrameOutput {
    pub frame: usize,
    pub tracks: Vec<TrackOutput>,
}

#[derive(Debug, Clone)]
pub struct Tracker {
    cfg: TrackerConfig,
    tracklets: Vec<Tracklet>,
    next_id: TrackId,
}

impl Tracker {
    pub fn new(cfg: TrackerConfig) -> Result<Self, TrackerError> {
        cfg.validate()?;
        Ok(Self { cfg, tracklets: Vec::new(), next_id: 1 })
    }

    pub fn config(&self) -> &TrackerConfig {
        &self.cfg
    }

    /// Live (active and inactive) tracklets in ascending ID order.
    pub fn tracklets(&self) -> &[Tracklet] {
        &self.tracklets
    }

    pub fn active(&self) -> impl Iterator<Item = &Tracklet> {
        self.tracklets.iter().filter(|t| t.state == TrackState::Active)
    }

    fn index_track_boxes<'a>(&self, track_boxes: &'a [TrackBox]) -> Result<HashMap<TrackId, &'a TrackBox>, TrackerError> {
        let mut by_id = HashMap::with_capacity(track_boxes.len());
        for tb in track_boxes {
            if !self.tracklets.iter().any(|t| t.id == tb.track_id) {
                return Err(TrackerError::UnknownTracklet(tb.track_id));
            }
            if by_id.insert(tb.track_id, tb).is_some() {
                return Err(TrackerError::DuplicateTrackBox(tb.track_id));
            }
        }
        Ok(by_id)
    }

    /// Processes one frame and returns the active tracklets after the update.
    ///
    /// Live tracklets without a tracking box are represented by their stored
    /// (frozen) box.
    pub fn step(&mut self, dets: &[Detection], track_boxes: &[TrackBox]) -> Result<Vec<TrackOutput>, TrackerError> {
        let by_id = self.index_track_boxes(track_boxes)?;
        let dets: Vec<&Detection> = dets.iter().filter(|d| d.score >= self.cfg.score_thresh).collect();

        let candidates: Vec<(BBox, f64)> = self
            .tracklets
            .iter()
            .map(|t| by_id.get(&t.id).map_or((t.bbox, t.score), |tb| (tb.bbox, tb.score)))
            .collect();

        let (matches, births) = match self.cfg.query_mode {
            QueryMode::ObjectOnly => self.associate_by_slot(&dets),
            _ => match self.cfg.association {
                Association::Hungarian => associate_hungarian(&dets, &candidates, self.cfg.min_iou),
                Association::Nms => associate_nms(&dets, &candidates, self.cfg.min_iou),
            },
        };

        let mut matched = vec![false; self.tracklets.len()];
        for &(d, t) in &matches {
            matched[t] = true;
            let det = dets[d];
            let propagated = by_id.get(&self.tracklets[t].id).and_then(|tb| tb.payload.as_ref());
            let payload = self.refresh_payload(&self.tracklets[t].payload, propagated, det)?;
            let tr = &mut self.tracklets[t];
            tr.bbox = det.bbox;
            tr.score = det.score;
            tr.state = TrackState::Active;
            tr.inactive_count = 0;
            tr.payload = payload;
            if det.slot.is_some() {
                tr.slot = det.slot;
            }
        }
        self.age_unmatched(&matched);
        for d in births {
            self.spawn(dets[d])?;
        }
        Ok(self.outputs())
    }

    /// Track-query-only update: each tracking box scoring at least
    /// `score_thresh` re-confirms its own tracklet; no tracklets are created.
    pub fn step_track_only(&mut self, track_boxes: &[TrackBox]) -> Result<Vec<TrackOutput>, TrackerError> {
        let by_id = self.index_track_boxes(track_boxes)?;
        let mut matched = vec![false; self.tracklets.len()];
        for (i, tr) in self.tracklets.iter_mut().enumerate() {
            let Some(tb) = by_id.get(&tr.id) else { continue };
            if tb.score < self.cfg.score_thresh {
                continue;
            }
            matched[i] = true;
            tr.bbox = tb.bbox;
            tr.score = tb.score;
            tr.state = TrackState::Active;
            tr.inactive_count = 0;
            if let Some(p) = &tb.payload {
                tr.payload = p.clone();
            }
        }
        self.age_unmatched(&matched);
        Ok(self.outputs())
    }

    fn associate_by_slot(&self, dets: &[&Detection]) -> (Vec<(usize, usize)>, Vec<usize>) {
        let mut matches = Vec::new();
        let mut births = Vec::new();
        let mut taken = vec![false; self.tracklets.len()];
        for (d, det) in dets.iter().enumerate() {
            let owner = det.slot.and_then(|s| {
                self.tracklets.iter().enumerate().position(|(i, t)| !taken[i] && t.slot == Some(s))
            });
            match owner {
                Some(t) => {
                    taken[t] = true;
                    matches.push((d, t));
                }
                None => births.push(d),
            }
        }
        (matches, births)
    }

    fn refresh_payload(&self, stored: &Payload, propagated: Option<&Payload>, det: &Detection) -> Result<Payload, TrackerError> {
        Ok(match self.cfg.payload {
            PayloadKind::None => Payload::None,
            PayloadKind::Kalman(params) => {
                let state = match propagated.or(Some(stored)) {
                    Some(Payload::Motion(s)) => kf_update(s, &det.bbox, &params)?,
                    _ => kf_init(&det.bbox, &params)?,
                };
                Payload::Motion(state)
            }
            PayloadKind::TrackQuery => {
                if !det.feature.is_empty() {
                    Payload::Query(det.feature.clone())
                } else {
                    propagated.cloned().unwrap_or_else(|| stored.clone())
                }
            }
        })
    }

    fn age_unmatched(&mut self, matched: &[bool]) {
        let k = self.cfg.rebirth_k;
        let mut i = 0;
        self.tracklets.retain_mut(|t| {
            let was_matched = matched[i];
            i += 1;
            if was_matched {
                return true;
            }
            t.inactive_count += 1;
            t.state = TrackState::Inactive;
            t.inactive_count <= k
        });
    }

    fn spawn(&mut self, det: &Detection) -> Result<(), TrackerError> {
        let payload = match self.cfg.payload {
            PayloadKind::None => Payload::None,
            PayloadKind::Kalman(params) => Payload::Motion(kf_init(&det.bbox, &params)?),
            PayloadKind::TrackQuery => Payload::Query(det.feature.clone()),
        };
        let id = self.next_id;
        self.next_id += 1;
        self.tracklets.push(Tracklet {
            id,
            bbox: det.bbox,
            score: det.score,
            state: TrackState::Active,
            inactive_count: 0,
            slot: det.slot,
            payload,
        });
        Ok(())
    }

    fn outputs(&self) -> Vec<TrackOutput> {
        self.active().map(|t| TrackOutput { id: t.id, bbox: t.bbox, score: t.score }).collect()
    }
}

fn associate_hungarian(dets: &[&Detection], candidates: &[(BBox, f64)], min_iou: f64) -> (Vec<(usize, usize)>, Vec<usize>) {
    let det_boxes: Vec<BBox> = dets.iter().map(|d| d.bbox).collect();
    let track_boxes: Vec<BBox> = candidates.iter().map(|c| c.0).collect();
    let a = match_by_iou(&det_boxes, &track_boxes, min_iou);
    (a.pairs, a.unmatched_rows)
}

/// Pools tracking boxes and detections into one NMS pass. In each NMS group
/// the best tracking box takes the best detection; a group led by a
/// detection with no tracking box starts a tracklet; other detections in a
/// group are duplicates and are dropped.
fn associate_nms(dets: &[&Detection], candidates: &[(BBox, f64)], iou_thresh: f64) -> (Vec<(usize, usize)>, Vec<usize>) {
    let n_tracks = candidates.len();
    let pool: Vec<(BBox, f64)> = candidates.iter().copied().chain(dets.iter().map(|d| (d.bbox, d.score))).collect();
    let mut matches = Vec::new();
    let mut births = Vec::new();
    for g in nms_groups(&pool, iou_thresh) {
        let members = std::iter::once(g.kept).chain(g.suppressed.iter().copied());
        let (tracks, group_dets): (Vec<usize>, Vec<usize>) = members.partition(|&m| m < n_tracks);
        match (tracks.first(), group_dets.first()) {
            (Some(&t), Some(&d)) => matches.push((d - n_tracks, t)),
            (None, Some(&d)) => births.push(d - n_tracks),
            _ => {}
        }
    }
    matches.sort_unstable();
    births.sort_unstable();
    (matches, births)
}

/// One frame handed to the providers.
#[derive(Debug, Clone, Copy)]
pub struct Frame<'a> {
    /// 1-based frame number.
    pub index: usize,
    pub features: Option<&'a FeatureGrid>,
}

/// Produces detection boxes for a frame.
pub trait Detector {
    fn detect(&mut self, frame: &Frame<'_>) -> Result<Vec<Detection>, ProviderError>;
}

/// Propagates live tracklets into the current frame.
pub trait Propagator {
    /// `live` holds the active tracklets; inactive ones keep their frozen box.
    fn propagate(&mut self, frame: &Frame<'_>, live: &[&Tracklet]) -> Result<Vec<TrackBox>, ProviderError>;
}

fn run_loop(
    frames: &[Frame<'_>],
    cfg: TrackerConfig,
    propagate: &mut dyn FnMut(&Frame<'_>, &[&Tracklet]) -> Result<Vec<TrackBox>, ProviderError>,
    detect: &mut dyn FnMut(&Frame<'_>) -> Result<Vec<Detection>, ProviderError>,
) -> Result<Vec<FrameOutput>, RunError> {
    let mut tracker = Tracker::new(cfg).map_err(|source| RunError::Tracker { frame: 0, source })?;
    let mut out = Vec::with_capacity(frames.len());
    for (pos, frame) in frames.iter().enumerate() {
        let idx = frame.index;
        let provider = |source| RunError::Provider { frame: idx, source };
        let track_boxes = if pos == 0 {
            Vec::new()
        } else {
            let live: Vec<&Tracklet> = tracker.active().collect();
            propagate(frame, &live).map_err(provider)?
        };
        let tracks = if pos > 0 && cfg.query_mode == QueryMode::TrackOnly {
            tracker.step_track_only(&track_boxes)
        } else {
            let dets = detect(frame).map_err(provider)?;
            tracker.step(&dets, &track_boxes)
        }
        .map_err(|source| RunError::Tracker { frame: idx, source })?;
        out.push(FrameOutput { frame: idx, tracks });
    }
    Ok(out)
}

/// Runs the tracker over consecutive frames with separate providers.
///
/// The first frame is detection only; every later frame propagates the
/// active tracklets, detects, then associates.
pub fn run_sequence<P, D>(frames: &[Frame<'_>], propagator: &mut P, detector: &mut D, cfg: TrackerConfig) -> Result<Vec<FrameOutput>, RunError>
where
    P: Propagator + ?Sized,
    D: Detector + ?Sized,
{
    run_loop(frames, cfg, &mut |f, live| propagator.propagate(f, live), &mut |f| detector.detect(f))
}

/// [`run_sequence`] for a provider that detects and propagates from shared
/// per-frame state.
pub fn run_joint<J>(frames: &[Frame<'_>], joint: &mut J, cfg: TrackerConfig) -> Result<Vec<FrameOutput>, RunError>
where
    J: Detector + Propagator,
{
    let cell = std::cell::RefCell::new(joint);
    run_loop(
        frames,
        cfg,
        &mut |f, live| cell.borrow_mut().propagate(f, live),
        &mut |f| cell.borrow_mut().detect(f),
    )
}

/// Frames `1..=n` without features.
pub fn plain_frames(n: usize) -> Vec<Frame<'static>> {
    (1..=n).map(|index| Frame { index, features: None }).collect()
}

/// Detector that serves a fixed list of detections per frame.
#[derive(Debug, Clone, Default)]
pub struct ScriptedDetector {
    pub frames: BTreeMap<usize, Vec<Detection>>,
}

impl Detector for ScriptedDetector {
    fn detect(&mut self, frame: &Frame<'_>) -> Result<Vec<Detection>, ProviderError> {
        Ok(self.frames.get(&frame.index).cloned().unwrap_or_default())
    }
}
