//! The network as a tracker provider.

use super::model::{DecodeOut, ModelParams};
use super::tape::Mat;
use super::ToyNetError;
use crate::geometry::{CenterBox, ImageSize};
use crate::synth::FeatureGrid;
use crate::tracker::{Detection, Detector, Frame, Payload, Propagator, ProviderError, TrackBox, Tracklet};

/// Detects with the object queries and propagates tracklets with their
/// stored embeddings as track queries.
///
/// Each frame is encoded once together with the previous frame's grid (the
/// first frame is paired with itself) and both decoders read that memory.
/// Detections carry their query embedding as feature and their query index
/// as slot; tracklets without an embedding payload are not propagated.
#[derive(Debug, Clone)]
pub struct ToyNetProvider {
    pub params: ModelParams,
    pub image: ImageSize,
    cache: Option<(usize, FeatureGrid, Mat)>,
}

impl ToyNetProvider {
    /// Detection threshold suited to the network's focal-trained scores,
    /// which rarely exceed 0.6 for a clean hit.
    pub const SCORE_THRESH: f64 = 0.4;

    pub fn new(params: ModelParams, image: ImageSize) -> Self {
        Self { params, image, cache: None }
    }

    fn memory(&mut self, frame: &Frame<'_>) -> Result<Mat, ProviderError> {
        let grid = frame.features.ok_or_else(|| ToyNetError::Config(format!("frame {} has no feature grid", frame.index)))?;
        if let Some((idx, _, m)) = &self.cache {
            if *idx == frame.index {
                return Ok(m.clone());
            }
        }
        let prev = self.cache.as_ref().map_or(grid, |(_, g, _)| g);
        let m = self.params.encode(grid, prev)?;
        self.cache = Some((frame.index, grid.clone(), m.clone()));
        Ok(m)
    }

    fn to_pixels(&self, b: &CenterBox) -> crate::geometry::BBox {
        b.to_pixels(self.image)
    }
}

fn score(out: &DecodeOut, i: usize) -> f64 {
    out.probs[i].iter().copied().fold(0.0, f64::max)
}

impl Detector for ToyNetProvider {
    fn detect(&mut self, frame: &Frame<'_>) -> Result<Vec<Detection>, ProviderError> {
        let memory = self.memory(frame)?;
        let out = self.params.decode_objects(&memory);
        Ok((0..out.len())
            .map(|i| Detection {
                bbox: self.to_pixels(&out.boxes[i]),
                score: score(&out, i),
                class_probs: out.probs[i].clone(),
                feature: out.feature(i),
                slot: Some(i),
            })
            .collect())
    }
}

impl Propagator for ToyNetProvider {
    fn propagate(&mut self, frame: &Frame<'_>, live: &[&Tracklet]) -> Result<Vec<TrackBox>, ProviderError> {
        let memory = self.memory(frame)?;
        let d = self.params.config.d_model;
        let with_query: Vec<(&Tracklet, &Vec<f64>)> = live
            .iter()
            .filter_map(|t| match &t.payload {
                Payload::Query(q) if q.len() == d => Some((*t, q)),
                _ => None,
            })
            .collect();
        let queries = Mat::from_shape_fn((with_query.len(), d), |(i, k)| with_query[i].1[k]);
        let out = self.params.decode_tracks(&queries, &memory)?;
        Ok(with_query
            .iter()
            .enumerate()
            .map(|(i, (t, _))| {
                let feature = out.feature(i);
                TrackBox {
                    track_id: t.id,
                    bbox: self.to_pixels(&out.boxes[i]),
                    score: score(&out, i),
                    payload: Some(Payload::Query(feature.clone())),
                    feature,
                }
            })
            .collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::{generate, ScenarioSpec};
    use crate::toynet::ModelConfig;
    use crate::tracker::{run_joint, PayloadKind, TrackerConfig};

    #[test]
    fn runs_end_to_end_and_keeps_query_count() {
        let spec = ScenarioSpec { image_width: 64.0, image_height: 64.0, width_min: 12.0, width_max: 24.0, height_min: 12.0, height_max: 24.0, num_frames: 4, num_objects: 2, ..ScenarioSpec::default() };
        let s = generate(&spec).unwrap();
        let params = ModelParams::init(ModelConfig::default(), 3).unwrap();
        let mut p = ToyNetProvider::new(params.clone(), spec.image());
        let frames = s.frames();
        let dets = p.detect(&frames[0]).unwrap();
        assert_eq!(dets.len(), params.config.num_queries);
        // first frame is paired with itself
        let m = params.encode(&s.features[0], &s.features[0]).unwrap();
        assert_eq!(params.decode_objects(&m).feature(0), dets[0].feature);

        let cfg = TrackerConfig { payload: PayloadKind::TrackQuery, score_thresh: 0.0, ..TrackerConfig::default() };
        let mut fresh = ToyNetProvider::new(params, spec.image());
        let a = run_joint(&frames, &mut fresh, cfg).unwrap();
        let mut again = ToyNetProvider::new(fresh.params.clone(), spec.image());
        let b = run_joint(&frames, &mut again, cfg).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.len(), 4);
    }
}
