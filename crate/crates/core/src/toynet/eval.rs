//! Tracking quality of a trained network on two-frame perturbed pairs.

use super::model::ModelParams;
use super::provider::ToyNetProvider;
use super::train::TrainPair;
use super::ToyNetError;
use crate::io::{outputs_to_annotations, FrameAnnotations, MotEntry};
use crate::metrics::{combine, evaluate, MotReport};
use crate::synth::StaticFrame;
use crate::tracker::{run_joint, Frame, PayloadKind, TrackerConfig};

fn annotations(frame: usize, scene: &StaticFrame) -> FrameAnnotations {
    FrameAnnotations {
        frame,
        entries: scene
            .objects
            .iter()
            .map(|o| MotEntry { id: o.id as i64, bbox: o.bbox, conf: 1.0, class_id: 1, visibility: 1.0 })
            .collect(),
    }
}

/// Runs the tracker over the pair as a two-frame sequence and scores it
/// against the pair's objects. Tracklets always carry track queries.
pub fn track_pair(params: &ModelParams, pair: &TrainPair, cfg: TrackerConfig, iou_thresh: f64) -> Result<MotReport, ToyNetError> {
    let frames = [
        Frame { index: 1, features: Some(&pair.first.grid) },
        Frame { index: 2, features: Some(&pair.second.grid) },
    ];
    let mut provider = ToyNetProvider::new(params.clone(), pair.first.render.image);
    let out = run_joint(&frames, &mut provider, TrackerConfig { payload: PayloadKind::TrackQuery, ..cfg }).map_err(|e| ToyNetError::Tracking(e.to_string()))?;
    let gt = [annotations(1, &pair.first), annotations(2, &pair.second)];
    evaluate(&gt, &outputs_to_annotations(&out), iou_thresh).map_err(|e| ToyNetError::Tracking(e.to_string()))
}

/// [`track_pair`] over every pair, pooled into one report.
pub fn evaluate_pairs(params: &ModelParams, pairs: &[TrainPair], cfg: TrackerConfig, iou_thresh: f64) -> Result<MotReport, ToyNetError> {
    let reports = pairs.iter().map(|p| track_pair(params, p, cfg, iou_thresh)).collect::<Result<Vec<_>, _>>()?;
    Ok(combine(&reports))
}
