//! Baseline propagation models: the frozen box and a constant-velocity
//! Kalman filter over `(cx, cy, aspect, h)` and their velocities.

use crate::geometry::BBox;
use crate::tracker::{Frame, Payload, Propagator, ProviderError, TrackBox, Tracklet};
use nalgebra::{SMatrix, SVector};
use thiserror::Error;

pub type StateVec = SVector<f64, 8>;
pub type StateCov = SMatrix<f64, 8, 8>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MotionError {
    #[error("box extents must be positive, got width {width} height {height}")]
    DegenerateBox { width: f64, height: f64 },
    #[error("innovation covariance is singular")]
    SingularInnovation,
}

/// Noise scales, as fractions of the box height.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KalmanParams {
    pub std_weight_position: f64,
    pub std_weight_velocity: f64,
    pub std_aspect: f64,
    pub std_aspect_velocity: f64,
    pub std_aspect_measurement: f64,
}

impl Default for KalmanParams {
    fn default() -> Self {
        Self {
            std_weight_position: 1.0 / 20.0,
            std_weight_velocity: 1.0 / 160.0,
            std_aspect: 1e-2,
            std_aspect_velocity: 1e-5,
            std_aspect_measurement: 1e-1,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct KalmanState {
    pub mean: StateVec,
    pub covariance: StateCov,
}

impl KalmanState {
    pub fn to_bbox(&self) -> BBox {
        let (cx, cy, a, h) = (self.mean[0], self.mean[1], self.mean[2], self.mean[3]);
        let w = a * h;
        BBox::new(cx - 0.5 * w, cy - 0.5 * h, w, h)
    }
}

fn measurement(b: &BBox) -> Result<SVector<f64, 4>, MotionError> {
    if !(b.width > 0.0 && b.height > 0.0) {
        return Err(MotionError::DegenerateBox { width: b.width, height: b.height });
    }
    let (cx, cy) = b.center();
    Ok(SVector::<f64, 4>::new(cx, cy, b.width / b.height, b.height))
}

pub fn kf_init(b: &BBox, p: &KalmanParams) -> Result<KalmanState, MotionError> {
    let z = measurement(b)?;
    let mut mean = StateVec::zeros();
    mean.fixed_rows_mut::<4>(0).copy_from(&z);
    let h = z[3];
    let std = [
        2.0 * p.std_weight_position * h,
        2.0 * p.std_weight_position * h,
        p.std_aspect,
        2.0 * p.std_weight_position * h,
        10.0 * p.std_weight_velocity * h,
        10.0 * p.std_weight_velocity * h,
        p.std_aspect_velocity,
        10.0 * p.std_weight_velocity * h,
    ];
    let covariance = StateCov::from_diagonal(&StateVec::from_iterator(std.iter().map(|s| s * s)));
    Ok(KalmanState { mean, covariance })
}

fn transition() -> StateCov {
    let mut f = StateCov::identity();
    for i in 0..4 {
        f[(i, i + 4)] = 1.0;
    }
    f
}

fn symmetrize(m: StateCov) -> StateCov {
    (m + m.transpose()) * 0.5
}

/// Advances the state by one frame.
pub fn kf_predict(s: &KalmanState, p: &KalmanParams) -> KalmanState {
    let h = s.mean[3].abs();
    let std = [
        p.std_weight_position * h,
        p.std_weight_position * h,
        p.std_aspect,
        p.std_weight_position * h,
        p.std_weight_velocity * h,
        p.std_weight_velocity * h,
        p.std_aspect_velocity,
        p.std_weight_velocity * h,
    ];
    let q = StateCov::from_diagonal(&StateVec::from_iterator(std.iter().map(|s| s * s)));
    let f = transition();
    KalmanState { mean: f * s.mean, covariance: symmetrize(f * s.covariance * f.transpose() + q) }
}

/// Gain-weighted correction toward a measured box.
pub fn kf_update(s: &KalmanState, measured: &BBox, p: &KalmanParams) -> Result<KalmanState, MotionError> {
    let z = measurement(measured)?;
    let h = s.mean[3].abs();
    let r_std = [p.std_weight_position * h, p.std_weight_position * h, p.std_aspect_measurement, p.std_weight_position * h];
    let r = SMatrix::<f64, 4, 4>::from_diagonal(&SVector::<f64, 4>::from_iterator(r_std.iter().map(|s| s * s)));
    let proj = SMatrix::<f64, 4, 8>::identity();
    let innovation_cov = proj * s.covariance * proj.transpose() + r;
    let chol = innovation_cov.cholesky().ok_or(MotionError::SingularInnovation)?;
    // K = P H^T S^-1, solved as S K^T = H P
    let gain = chol.solve(&(proj * s.covariance)).transpose();
    let innovation = z - proj * s.mean;
    let mean = s.mean + gain * innovation;
    let covariance = symmetrize(s.covariance - gain * innovation_cov * gain.transpose());
    Ok(KalmanState { mean, covariance })
}

/// The frozen-box baseline: the previous box is the prediction.
pub fn propagate_none(previous: &BBox) -> BBox {
    *previous
}

/// Propagator for the no-motion baseline: every tracklet keeps its box.
#[derive(Debug, Clone, Copy, Default)]
pub struct FrozenBoxPropagator;

impl Propagator for FrozenBoxPropagator {
    fn propagate(&mut self, _frame: &Frame<'_>, live: &[&Tracklet]) -> Result<Vec<TrackBox>, ProviderError> {
        Ok(live.iter().map(|t| TrackBox::new(t.id, propagate_none(&t.bbox), t.score)).collect())
    }
}

/// Propagator that advances each tracklet's Kalman state by one frame.
///
/// Tracklets without a motion payload fall back to their frozen box.
#[derive(Debug, Clone, Copy, Default)]
pub struct KalmanPropagator {
    pub params: KalmanParams,
}

impl Propagator for KalmanPropagator {
    fn propagate(&mut self, _frame: &Frame<'_>, live: &[&Tracklet]) -> Result<Vec<TrackBox>, ProviderError> {
        Ok(live
            .iter()
            .map(|t| match &t.payload {
                Payload::Motion(s) => {
                    let predicted = kf_predict(s, &self.params);
                    TrackBox {
                        track_id: t.id,
                        bbox: predicted.to_bbox(),
                        score: t.score,
                        feature: Vec::new(),
                        payload: Some(Payload::Motion(predicted)),
                    }
                }
                _ => TrackBox::new(t.id, t.bbox, t.score),
            })
            .collect())
    }
}
