//! Seeded synthetic scenarios: ground-truth trajectories, noisy detections
//! and feature grids, plus the static-frame perturbation used to build
//! training pairs.
//!
//! All randomness for one scenario comes from a single [`SeededRng`] and is
//! drawn in a fixed order:
//!
//! 1. per object, in id order: width, height, start x, start y, speed,
//!    heading, wobble phase, then `appearance_dims` normals;
//! 2. per frame, per object alive in that frame (id order): miss draw,
//!    score draw, then four jitter normals (cx, cy, w, h).
//!
//! Per-frame draws are consumed even when the object is occluded or missed,
//! so changing one object's fate never shifts another's noise.

use crate::geometry::{BBox, ImageSize};
use crate::io::{FrameAnnotations, MotEntry};
use crate::rng::SeededRng;
use crate::tracker::{Detection, Detector, Frame, Payload, Propagator, ProviderError, TrackBox, Tracklet};
use std::collections::HashMap;
use std::f64::consts::TAU;
use std::fmt::Write as _;
use thiserror::Error;

/// Channels before the appearance block: objectness, width, height, x, y.
pub const BASE_CHANNELS: usize = 5;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SynthError {
    #[error("invalid scenario: {0}")]
    Invalid(String),
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("unknown scenario key {0:?}")]
    UnknownKey(String),
    #[error("stride must be at least 1")]
    Stride,
}

/// Dense `height x width x channels` grid, row-major with channels last.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureGrid {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    pub data: Vec<f64>,
}

impl FeatureGrid {
    pub fn zeros(height: usize, width: usize, channels: usize) -> Self {
        Self { height, width, channels, data: vec![0.0; height * width * channels] }
    }

    pub fn at(&self, row: usize, col: usize, ch: usize) -> f64 {
        self.data[(row * self.width + col) * self.channels + ch]
    }

    fn at_mut(&mut self, row: usize, col: usize, ch: usize) -> &mut f64 {
        &mut self.data[(row * self.width + col) * self.channels + ch]
    }

    /// Token view: one row of `channels` values per cell.
    pub fn cell(&self, index: usize) -> &[f64] {
        &self.data[index * self.channels..(index + 1) * self.channels]
    }

    pub fn cells(&self) -> usize {
        self.height * self.width
    }

    /// Plain text dump: an `h w c` header line, then one cell per line.
    pub fn to_text(&self) -> String {
        let mut out = format!("{} {} {}\n", self.height, self.width, self.channels);
        for i in 0..self.cells() {
            let row: Vec<String> = self.cell(i).iter().map(|v| format!("{v:.6}")).collect();
            out.push_str(&row.join(" "));
            out.push('\n');
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MotionKind {
    Linear,
    /// Linear drift plus a sideways sine wobble.
    Sinusoidal,
}

/// Object `object` (1-based id) is hidden in frames `start..=end`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Occlusion {
    pub object: u64,
    pub start: usize,
    pub end: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioSpec {
    pub image_width: f64,
    pub image_height: f64,
    pub num_frames: usize,
    pub num_objects: usize,
    /// `(birth, death)` per object, inclusive and 1-based. Empty: whole sequence.
    pub lifetimes: Vec<(usize, usize)>,
    pub motion: MotionKind,
    /// Speed range, pixels per frame.
    pub speed_min: f64,
    pub speed_max: f64,
    pub width_min: f64,
    pub width_max: f64,
    pub height_min: f64,
    pub height_max: f64,
    /// Wobble amplitude (px) and period (frames) for sinusoidal motion.
    pub amplitude: f64,
    pub period: f64,
    /// Detection noise std, pixels.
    pub center_jitter: f64,
    pub size_jitter: f64,
    pub miss_prob: f64,
    pub det_score_min: f64,
    pub occlusions: Vec<Occlusion>,
    pub grid_h: usize,
    pub grid_w: usize,
    pub appearance_dims: usize,
    pub seed: u64,
}

impl Default for ScenarioSpec {
    fn default() -> Self {
        Self {
            image_width: 320.0,
            image_height: 240.0,
            num_frames: 30,
            num_objects: 4,
            lifetimes: Vec::new(),
            motion: MotionKind::Linear,
            speed_min: 1.0,
            speed_max: 3.0,
            width_min: 20.0,
            width_max: 40.0,
            height_min: 40.0,
            height_max: 80.0,
            amplitude: 0.0,
            period: 20.0,
            center_jitter: 0.0,
            size_jitter: 0.0,
            miss_prob: 0.0,
            det_score_min: 0.9,
            occlusions: Vec::new(),
            grid_h: 8,
            grid_w: 8,
            appearance_dims: 3,
            seed: 0,
        }
    }
}

const SPEC_KEYS: &[&str] = &[
    "image_width",
    "image_height",
    "num_frames",
    "num_objects",
    "lifetimes",
    "motion",
    "speed_min",
    "speed_max",
    "width_min",
    "width_max",
    "height_min",
    "height_max",
    "amplitude",
    "period",
    "center_jitter",
    "size_jitter",
    "miss_prob",
    "det_score_min",
    "occlusions",
    "grid_h",
    "grid_w",
    "appearance_dims",
    "seed",
];

fn parse_num<T: std::str::FromStr>(key: &str, value: &str) -> Result<T, String> {
    value.trim().parse().map_err(|_| format!("bad value for {key}: {value:?}"))
}

fn parse_range(s: &str) -> Result<(usize, usize), String> {
    let (a, b) = s.split_once('-').ok_or_else(|| format!("expected a-b, got {s:?}"))?;
    Ok((parse_num("range", a)?, parse_num("range", b)?))
}

impl ScenarioSpec {
    pub fn keys() -> &'static [&'static str] {
        SPEC_KEYS
    }

    pub fn image(&self) -> ImageSize {
        ImageSize { width: self.image_width, height: self.image_height }
    }

    /// Sets one field from its text form.
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), SynthError> {
        let bad = |m: String| SynthError::Invalid(m);
        let v = value.trim();
        match key {
            "image_width" => self.image_width = parse_num(key, v).map_err(bad)?,
            "image_height" => self.image_height = parse_num(key, v).map_err(bad)?,
            "num_frames" => self.num_frames = parse_num(key, v).map_err(bad)?,
            "num_objects" => self.num_objects = parse_num(key, v).map_err(bad)?,
            "lifetimes" => {
                self.lifetimes = v
                    .split(',')
                    .map(str::trim)
                    .filter(|s| !s.is_empty())
                    .map(parse_range)
                    .collect::<Result<_, _>>()
                    .map_err(bad)?
            }
            "motion" => {
                self.motion = match v {
                    "linear" => MotionKind::Linear,
                    "sinusoidal" => MotionKind::Sinusoidal,
                    other => return Err(bad(format!("unknown motion {other:?}"))),
                }
            }
            "speed_min" => self.speed_min = parse_num(key, v).map_err(bad)?,
            "speed_max" => self.speed_max = parse_num(key, v).map_err(bad)?,
            "width_min" => self.width_min = parse_num(key, v).map_err(bad)?,
            "width_max" => self.width_max = parse_num(key, v).map_err(bad)?,
            "height_min" => self.height_min = parse_num(key, v).map_err(bad)?,
            "height_max" => self.height_max = parse_num(key, v).map_err(bad)?,
            "amplitude" => self.amplitude = parse_num(key, v).map_err(bad)?,
            "period" => self.period = parse_num(key, v).map_err(bad)?,
            "center_jitter" => self.center_jitter = parse_num(key, v).map_err(bad)?,
            "size_jitter" => self.size_jitter = parse_num(key, v).map_err(bad)?,
            "miss_prob" => self.miss_prob = parse_num(key, v).map_err(bad)?,
            "det_score_min" => self.det_score_min = parse_num(key, v).map_err(bad)?,
            "occlusions" => {
                self.occlusions = v
                    .split(',')
                    .map(str::trim)
                    .filter(|s| !s.is_empty())
                    .map(|s| {
                        let (obj, range) = s.split_once(':').ok_or_else(|| format!("expected obj:a-b, got {s:?}"))?;
                        let (start, end) = parse_range(range)?;
                        Ok(Occlusion { object: parse_num("occlusion object", obj)?, start, end })
                    })
                    .collect::<Result<_, String>>()
                    .map_err(bad)?
            }
            "grid_h" => self.grid_h = parse_num(key, v).map_err(bad)?,
            "grid_w" => self.grid_w = parse_num(key, v).map_err(bad)?,
            "appearance_dims" => self.appearance_dims = parse_num(key, v).map_err(bad)?,
            "seed" => self.seed = parse_num(key, v).map_err(bad)?,
            other => return Err(SynthError::UnknownKey(other.to_string())),
        }
        Ok(())
    }

    /// Parses `key = value` lines over the defaults. `#` starts a comment.
    pub fn parse(text: &str) -> Result<Self, SynthError> {
        let mut spec = Self::default();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| SynthError::Parse { line: n + 1, message: format!("expected key = value, got {line:?}") })?;
            spec.set(k.trim(), v).map_err(|e| match e {
                SynthError::Invalid(message) => SynthError::Parse { line: n + 1, message },
                other => other,
            })?;
        }
        spec.validate()?;
        Ok(spec)
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let motion = match self.motion {
            MotionKind::Linear => "linear",
            MotionKind::Sinusoidal => "sinusoidal",
        };
        let lifetimes: Vec<String> = self.lifetimes.iter().map(|(a, b)| format!("{a}-{b}")).collect();
        let occl: Vec<String> = self.occlusions.iter().map(|o| format!("{}:{}-{}", o.object, o.start, o.end)).collect();
        let _ = writeln!(s, "image_width = {}", self.image_width);
        let _ = writeln!(s, "image_height = {}", self.image_height);
        let _ = writeln!(s, "num_frames = {}", self.num_frames);
        let _ = writeln!(s, "num_objects = {}", self.num_objects);
        let _ = writeln!(s, "lifetimes = {}", lifetimes.join(","));
        let _ = writeln!(s, "motion = {motion}");
        let _ = writeln!(s, "speed_min = {}", self.speed_min);
        let _ = writeln!(s, "speed_max = {}", self.speed_max);
        let _ = writeln!(s, "width_min = {}", self.width_min);
        let _ = writeln!(s, "width_max = {}", self.width_max);
        let _ = writeln!(s, "height_min = {}", self.height_min);
        let _ = writeln!(s, "height_max = {}", self.height_max);
        let _ = writeln!(s, "amplitude = {}", self.amplitude);
        let _ = writeln!(s, "period = {}", self.period);
        let _ = writeln!(s, "center_jitter = {}", self.center_jitter);
        let _ = writeln!(s, "size_jitter = {}", self.size_jitter);
        let _ = writeln!(s, "miss_prob = {}", self.miss_prob);
        let _ = writeln!(s, "det_score_min = {}", self.det_score_min);
        let _ = writeln!(s, "occlusions = {}", occl.join(","));
        let _ = writeln!(s, "grid_h = {}", self.grid_h);
        let _ = writeln!(s, "grid_w = {}", self.grid_w);
        let _ = writeln!(s, "appearance_dims = {}", self.appearance_dims);
        let _ = writeln!(s, "seed = {}", self.seed);
        s
    }

    pub fn validate(&self) -> Result<(), SynthError> {
        let fail = |m: &str| Err(SynthError::Invalid(m.to_string()));
        if ImageSize::new(self.image_width, self.image_height).is_err() {
            return fail("image size must be positive");
        }
        if self.num_frames == 0 {
            return fail("num_frames must be at least 1");
        }
        if !self.lifetimes.is_empty() && self.lifetimes.len() != self.num_objects {
            return fail("lifetimes must list one range per object");
        }
        for &(b, d) in &self.lifetimes {
            if !(b >= 1 && b < d && d <= self.num_frames) {
                return Err(SynthError::Invalid(format!("lifetime {b}-{d} needs 1 <= birth < death <= {}", self.num_frames)));
            }
        }
        let ranges = [
            (self.speed_min, self.speed_max, "speed"),
            (self.width_min, self.width_max, "width"),
            (self.height_min, self.height_max, "height"),
        ];
        for (lo, hi, name) in ranges {
            if !(lo.is_finite() && hi.is_finite() && 0.0 <= lo && lo <= hi) {
                return Err(SynthError::Invalid(format!("{name} range must satisfy 0 <= min <= max")));
            }
        }
        if self.width_min <= 0.0 || self.height_min <= 0.0 {
            return fail("object sizes must be positive");
        }
        if self.width_max >= self.image_width || self.height_max >= self.image_height {
            return fail("objects must be smaller than the image");
        }
        for (p, name) in [(self.miss_prob, "miss_prob"), (self.det_score_min, "det_score_min")] {
            if !(0.0..=1.0).contains(&p) {
                return Err(SynthError::Invalid(format!("{name} must be in [0, 1]")));
            }
        }
        if !(self.center_jitter >= 0.0 && self.size_jitter >= 0.0 && self.amplitude >= 0.0) {
            return fail("noise and amplitude must be non-negative");
        }
        if !(self.period > 0.0) {
            return fail("period must be positive");
        }
        for o in &self.occlusions {
            if o.object == 0 || o.object as usize > self.num_objects || o.start > o.end {
                return Err(SynthError::Invalid(format!("bad occlusion {}:{}-{}", o.object, o.start, o.end)));
            }
        }
        if self.grid_h == 0 || self.grid_w == 0 {
            return fail("grid must be non-empty");
        }
        Ok(())
    }

    pub fn render_config(&self) -> RenderConfig {
        RenderConfig { image: self.image(), grid_h: self.grid_h, grid_w: self.grid_w, appearance_dims: self.appearance_dims }
    }

    fn lifetime(&self, i: usize) -> (usize, usize) {
        self.lifetimes.get(i).copied().unwrap_or((1, self.num_frames))
    }
}

/// How objects are painted onto a feature grid.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RenderConfig {
    pub image: ImageSize,
    pub grid_h: usize,
    pub grid_w: usize,
    pub appearance_dims: usize,
}

impl RenderConfig {
    pub fn channels(&self) -> usize {
        BASE_CHANNELS + self.appearance_dims
    }
}

/// One object as the featurizer sees it.
#[derive(Debug, Clone, PartialEq)]
pub struct SceneObject {
    pub id: u64,
    pub bbox: BBox,
    pub appearance: Vec<f64>,
}

/// Paints each object as an anisotropic Gaussian footprint (std a third of
/// its extent) sampled at cell centers.
///
/// Channel 0 is the strongest footprint at the cell; channels 1 and 2 hold
/// that object's normalized width and height scaled by its footprint; 3 and
/// 4 are the cell's normalized x and y; the rest carry the object's
/// appearance vector scaled by its footprint.
pub fn render(objects: &[SceneObject], cfg: &RenderConfig) -> FeatureGrid {
    let mut grid = FeatureGrid::zeros(cfg.grid_h, cfg.grid_w, cfg.channels());
    let cell_w = cfg.image.width / cfg.grid_w as f64;
    let cell_h = cfg.image.height / cfg.grid_h as f64;
    for r in 0..cfg.grid_h {
        for c in 0..cfg.grid_w {
            let x = (c as f64 + 0.5) * cell_w;
            let y = (r as f64 + 0.5) * cell_h;
            *grid.at_mut(r, c, 3) = x / cfg.image.width;
            *grid.at_mut(r, c, 4) = y / cfg.image.height;
            let mut best: Option<(f64, &SceneObject)> = None;
            for o in objects {
                let (cx, cy) = o.bbox.center();
                let sx = (o.bbox.width / 3.0).max(1e-6);
                let sy = (o.bbox.height / 3.0).max(1e-6);
                let v = (-0.5 * (((x - cx) / sx).powi(2) + ((y - cy) / sy).powi(2))).exp();
                if best.is_none_or(|(b, _)| v > b) {
                    best = Some((v, o));
                }
            }
            if let Some((v, o)) = best {
                *grid.at_mut(r, c, 0) = v;
                *grid.at_mut(r, c, 1) = v * o.bbox.width / cfg.image.width;
                *grid.at_mut(r, c, 2) = v * o.bbox.height / cfg.image.height;
                for (k, a) in o.appearance.iter().take(cfg.appearance_dims).enumerate() {
                    *grid.at_mut(r, c, BASE_CHANNELS + k) = v * a;
                }
            }
        }
    }
    grid
}

/// One generated object: its box in every frame of its lifetime.
#[derive(Debug, Clone, PartialEq)]
pub struct ObjectTrack {
    pub id: u64,
    pub birth: usize,
    pub death: usize,
    pub boxes: Vec<BBox>,
    pub appearance: Vec<f64>,
}

impl ObjectTrack {
    pub fn box_at(&self, frame: usize) -> Option<BBox> {
        if frame < self.birth || frame > self.death {
            return None;
        }
        self.boxes.get(frame - self.birth).copied()
    }
}

/// Generated sequence. Detection entries keep the id of the object they
/// came from; MOT writers replace it with `-1`.
#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub spec: ScenarioSpec,
    pub num_frames: usize,
    pub gt: Vec<FrameAnnotations>,
    pub dets: Vec<FrameAnnotations>,
    /// One grid per frame, index `frame - 1`.
    pub features: Vec<FeatureGrid>,
    pub objects: Vec<ObjectTrack>,
    /// Frames in which each object is hidden.
    pub hidden: Vec<Vec<usize>>,
}

fn reflect(pos: &mut f64, vel: &mut f64, lo: f64, hi: f64) {
    if hi <= lo {
        *pos = 0.5 * (lo + hi);
        *vel = 0.0;
        return;
    }
    for _ in 0..8 {
        if *pos < lo {
            *pos = 2.0 * lo - *pos;
            *vel = -*vel;
        } else if *pos > hi {
            *pos = 2.0 * hi - *pos;
            *vel = -*vel;
        } else {
            return;
        }
    }
    *pos = pos.clamp(lo, hi);
}

fn is_hidden(spec: &ScenarioSpec, id: u64, frame: usize) -> bool {
    spec.occlusions.iter().any(|o| o.object == id && (o.start..=o.end).contains(&frame))
}

/// Builds the full scenario from its spec.
pub fn generate(spec: &ScenarioSpec) -> Result<Scenario, SynthError> {
    spec.validate()?;
    let mut rng = SeededRng::new(spec.seed);
    let (img_w, img_h) = (spec.image_width, spec.image_height);

    let mut objects = Vec::with_capacity(spec.num_objects);
    for i in 0..spec.num_objects {
        let w = rng.uniform(spec.width_min, spec.width_max);
        let h = rng.uniform(spec.height_min, spec.height_max);
        let mut x = rng.uniform(0.5 * w, img_w - 0.5 * w);
        let mut y = rng.uniform(0.5 * h, img_h - 0.5 * h);
        let speed = rng.uniform(spec.speed_min, spec.speed_max);
        let heading = rng.uniform(0.0, TAU);
        let phase = rng.uniform(0.0, TAU);
        let appearance: Vec<f64> = (0..spec.appearance_dims).map(|_| rng.normal()).collect();

        let (birth, death) = spec.lifetime(i);
        let (mut vx, mut vy) = (speed * heading.cos(), speed * heading.sin());
        let mut boxes = Vec::with_capacity(death - birth + 1);
        for t in 0..=(death - birth) {
            if t > 0 {
                x += vx;
                y += vy;
                reflect(&mut x, &mut vx, 0.5 * w, img_w - 0.5 * w);
                reflect(&mut y, &mut vy, 0.5 * h, img_h - 0.5 * h);
            }
            let (mut cx, mut cy) = (x, y);
            if spec.motion == MotionKind::Sinusoidal && spec.amplitude > 0.0 {
                let off = spec.amplitude * (TAU * t as f64 / spec.period + phase).sin();
                // sideways relative to the initial heading
                cx = (cx - off * heading.sin()).clamp(0.5 * w, img_w - 0.5 * w);
                cy = (cy + off * heading.cos()).clamp(0.5 * h, img_h - 0.5 * h);
            }
            boxes.push(BBox::new(cx - 0.5 * w, cy - 0.5 * h, w, h));
        }
        objects.push(ObjectTrack { id: i as u64 + 1, birth, death, boxes, appearance });
    }

    let cfg = spec.render_config();
    let mut gt = Vec::new();
    let mut dets = Vec::new();
    let mut features = Vec::with_capacity(spec.num_frames);
    let mut hidden = vec![Vec::new(); objects.len()];
    for frame in 1..=spec.num_frames {
        let mut gt_entries = Vec::new();
        let mut det_entries = Vec::new();
        let mut visible = Vec::new();
        for (k, o) in objects.iter().enumerate() {
            let Some(b) = o.box_at(frame) else { continue };
            let miss = rng.unit();
            let score = rng.uniform(spec.det_score_min, 1.0);
            let jitter = [rng.normal(), rng.normal(), rng.normal(), rng.normal()];
            let occluded = is_hidden(spec, o.id, frame);
            if occluded {
                hidden[k].push(frame);
            }
            gt_entries.push(MotEntry { id: o.id as i64, bbox: b, conf: 1.0, class_id: 1, visibility: if occluded { 0.0 } else { 1.0 } });
            if occluded {
                continue;
            }
            visible.push(SceneObject { id: o.id, bbox: b, appearance: o.appearance.clone() });
            if miss < spec.miss_prob {
                continue;
            }
            let (cx, cy) = b.center();
            let cx = cx + spec.center_jitter * jitter[0];
            let cy = cy + spec.center_jitter * jitter[1];
            let w = (b.width + spec.size_jitter * jitter[2]).max(1.0);
            let h = (b.height + spec.size_jitter * jitter[3]).max(1.0);
            let bbox = if spec.center_jitter == 0.0 && spec.size_jitter == 0.0 { b } else { BBox::new(cx - 0.5 * w, cy - 0.5 * h, w, h) };
            det_entries.push(MotEntry { id: o.id as i64, bbox, conf: score, class_id: 1, visibility: 1.0 });
        }
        if !gt_entries.is_empty() {
            gt.push(FrameAnnotations { frame, entries: gt_entries });
        }
        if !det_entries.is_empty() {
            dets.push(FrameAnnotations { frame, entries: det_entries });
        }
        features.push(render(&visible, &cfg));
    }
    Ok(Scenario { spec: spec.clone(), num_frames: spec.num_frames, gt, dets, features, objects, hidden })
}

impl Scenario {
    /// Frames `1..=num_frames` with their feature grids attached.
    pub fn frames(&self) -> Vec<Frame<'_>> {
        self.features.iter().enumerate().map(|(i, g)| Frame { index: i + 1, features: Some(g) }).collect()
    }

    /// Ground truth restricted to visible objects.
    pub fn visible_gt(&self) -> Vec<FrameAnnotations> {
        self.gt
            .iter()
            .filter_map(|f| {
                let entries: Vec<MotEntry> = f.entries.iter().filter(|e| e.visibility > 0.0).copied().collect();
                (!entries.is_empty()).then_some(FrameAnnotations { frame: f.frame, entries })
            })
            .collect()
    }

    pub fn is_hidden(&self, object: u64, frame: usize) -> bool {
        self.objects
            .iter()
            .position(|o| o.id == object)
            .is_some_and(|k| self.hidden[k].contains(&frame))
    }

    /// Visible objects of one frame as a static scene.
    pub fn static_frame(&self, frame: usize) -> StaticFrame {
        let objects: Vec<SceneObject> = self
            .objects
            .iter()
            .filter(|o| !self.is_hidden(o.id, frame))
            .filter_map(|o| o.box_at(frame).map(|bbox| SceneObject { id: o.id, bbox, appearance: o.appearance.clone() }))
            .collect();
        let render_cfg = self.spec.render_config();
        let grid = self.features[frame - 1].clone();
        StaticFrame { render: render_cfg, objects, grid }
    }

    /// Keeps every `stride`-th frame starting at frame 1 and renumbers.
    pub fn skip(&self, stride: usize) -> Result<Scenario, SynthError> {
        if stride == 0 {
            return Err(SynthError::Stride);
        }
        let kept: Vec<usize> = (1..=self.num_frames).step_by(stride).collect();
        let renumber = |f: usize| (f - 1) / stride + 1;
        let objects = self
            .objects
            .iter()
            .filter_map(|o| {
                let frames: Vec<usize> = kept.iter().copied().filter(|&f| f >= o.birth && f <= o.death).collect();
                let (&first, &last) = (frames.first()?, frames.last()?);
                Some(ObjectTrack {
                    id: o.id,
                    birth: renumber(first),
                    death: renumber(last),
                    boxes: frames.iter().filter_map(|&f| o.box_at(f)).collect(),
                    appearance: o.appearance.clone(),
                })
            })
            .collect::<Vec<_>>();
        let hidden = objects
            .iter()
            .map(|o| {
                let k = self.objects.iter().position(|s| s.id == o.id).unwrap_or(0);
                self.hidden[k].iter().filter(|&&f| (f - 1) % stride == 0).map(|&f| renumber(f)).collect()
            })
            .collect();
        Ok(Scenario {
            spec: self.spec.clone(),
            num_frames: kept.len(),
            gt: skip_sample(&self.gt, stride)?,
            dets: skip_sample(&self.dets, stride)?,
            features: kept.iter().map(|&f| self.features[f - 1].clone()).collect(),
            objects,
            hidden,
        })
    }
}

/// Keeps frames `1, 1 + stride, 1 + 2 stride, ...` and numbers them densely.
pub fn skip_sample(seq: &[FrameAnnotations], stride: usize) -> Result<Vec<FrameAnnotations>, SynthError> {
    if stride == 0 {
        return Err(SynthError::Stride);
    }
    Ok(seq
        .iter()
        .filter(|f| (f.frame - 1) % stride == 0)
        .map(|f| FrameAnnotations { frame: (f.frame - 1) / stride + 1, entries: f.entries.clone() })
        .collect())
}

/// A single frame: its objects and rendered grid.
#[derive(Debug, Clone, PartialEq)]
pub struct StaticFrame {
    pub render: RenderConfig,
    pub objects: Vec<SceneObject>,
    pub grid: FeatureGrid,
}

impl StaticFrame {
    pub fn new(render: RenderConfig, objects: Vec<SceneObject>) -> Self {
        let grid = crate::synth::render(&objects, &render);
        Self { render, objects, grid }
    }
}

/// Scale about the image center followed by a shift, in pixels:
/// `x' = s x + (1 - s) c + t`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Transform {
    pub scale: f64,
    pub tx: f64,
    pub ty: f64,
}

impl Transform {
    pub const IDENTITY: Transform = Transform { scale: 1.0, tx: 0.0, ty: 0.0 };

    /// Maps a box; `None` when it leaves the image entirely.
    pub fn apply(&self, b: &BBox, image: ImageSize) -> Option<BBox> {
        let s = self.scale;
        let left = s * b.left + (1.0 - s) * 0.5 * image.width + self.tx;
        let top = s * b.top + (1.0 - s) * 0.5 * image.height + self.ty;
        let moved = BBox::new(left, top, s * b.width, s * b.height);
        let inside = moved.left >= 0.0 && moved.top >= 0.0 && moved.right() <= image.width && moved.bottom() <= image.height;
        let out = if inside { moved } else { moved.clip_to(image) };
        (out.width > 0.0 && out.height > 0.0).then_some(out)
    }
}

/// Sampling bounds for [`perturb_static`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PerturbRanges {
    pub scale: (f64, f64),
    /// Shift range in pixels, applied to both axes.
    pub translate: (f64, f64),
}

impl PerturbRanges {
    pub fn sample(&self, rng: &mut SeededRng) -> Transform {
        let scale = rng.uniform(self.scale.0, self.scale.1);
        let tx = rng.uniform(self.translate.0, self.translate.1);
        let ty = rng.uniform(self.translate.0, self.translate.1);
        Transform { scale, tx, ty }
    }
}

/// Applies one transform to every box and repaints the grid from the moved
/// boxes. Objects pushed fully outside the image are dropped.
pub fn apply_transform(frame: &StaticFrame, t: &Transform) -> StaticFrame {
    if *t == Transform::IDENTITY {
        return frame.clone();
    }
    let objects: Vec<SceneObject> = frame
        .objects
        .iter()
        .filter_map(|o| t.apply(&o.bbox, frame.render.image).map(|bbox| SceneObject { id: o.id, bbox, appearance: o.appearance.clone() }))
        .collect();
    StaticFrame::new(frame.render, objects)
}

/// Simulated adjacent frame: draws scale, x shift and y shift (in that
/// order) from a generator seeded with `seed`.
pub fn perturb_static(frame: &StaticFrame, ranges: &PerturbRanges, seed: u64) -> (StaticFrame, Transform) {
    let mut rng = SeededRng::new(seed);
    let t = ranges.sample(&mut rng);
    (apply_transform(frame, &t), t)
}

/// Detector and propagator driven by the scenario itself.
///
/// Detections are the scenario's noisy detections, each tagged with its
/// source object (as a one-element feature) and with the index of the
/// image region holding its center (as its query slot). Propagation looks
/// a tracklet's object up by that feature and returns the object's true box
/// in the current frame, or nothing while the object is hidden or gone.
#[derive(Debug, Clone)]
pub struct OracleProvider<'a> {
    scenario: &'a Scenario,
    regions: usize,
    by_frame: HashMap<usize, usize>,
}

impl<'a> OracleProvider<'a> {
    /// `regions` splits each image axis into that many bands for slots.
    pub fn new(scenario: &'a Scenario, regions: usize) -> Self {
        let by_frame = scenario.dets.iter().enumerate().map(|(i, f)| (f.frame, i)).collect();
        Self { scenario, regions: regions.max(1), by_frame }
    }

    fn slot(&self, b: &BBox) -> usize {
        let (cx, cy) = b.center();
        let r = self.regions as f64;
        let col = ((cx / self.scenario.spec.image_width * r).floor().max(0.0) as usize).min(self.regions - 1);
        let row = ((cy / self.scenario.spec.image_height * r).floor().max(0.0) as usize).min(self.regions - 1);
        row * self.regions + col
    }
}

impl Detector for OracleProvider<'_> {
    fn detect(&mut self, frame: &Frame<'_>) -> Result<Vec<Detection>, ProviderError> {
        let Some(&i) = self.by_frame.get(&frame.index) else { return Ok(Vec::new()) };
        Ok(self.scenario.dets[i]
            .entries
            .iter()
            .map(|e| Detection {
                bbox: e.bbox,
                score: e.conf,
                class_probs: vec![e.conf],
                feature: vec![e.id as f64],
                slot: Some(self.slot(&e.bbox)),
            })
            .collect())
    }
}

impl Propagator for OracleProvider<'_> {
    fn propagate(&mut self, frame: &Frame<'_>, live: &[&Tracklet]) -> Result<Vec<TrackBox>, ProviderError> {
        let mut out = Vec::new();
        for t in live {
            let Payload::Query(q) = &t.payload else { continue };
            let Some(&obj) = q.first() else { continue };
            let id = obj as u64;
            if self.scenario.is_hidden(id, frame.index) {
                continue;
            }
            let Some(o) = self.scenario.objects.iter().find(|o| o.id == id) else { continue };
            if let Some(bbox) = o.box_at(frame.index) {
                out.push(TrackBox { track_id: t.id, bbox, score: 1.0, feature: q.clone(), payload: Some(Payload::Query(q.clone())) });
            }
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::evaluate;

    fn base() -> ScenarioSpec {
        ScenarioSpec { num_frames: 20, num_objects: 3, seed: 7, ..ScenarioSpec::default() }
    }

    #[test]
    fn zero_noise_detections_equal_gt() {
        let s = generate(&base()).unwrap();
        assert_eq!(s.gt.len(), 20);
        for (g, d) in s.gt.iter().zip(&s.dets) {
            assert_eq!(g.frame, d.frame);
            let gb: Vec<_> = g.entries.iter().map(|e| (e.id, e.bbox)).collect();
            let db: Vec<_> = d.entries.iter().map(|e| (e.id, e.bbox)).collect();
            assert_eq!(gb, db);
        }
    }

    #[test]
    fn same_seed_is_bit_identical() {
        let spec = ScenarioSpec { center_jitter: 2.0, size_jitter: 1.0, miss_prob: 0.2, motion: MotionKind::Sinusoidal, amplitude: 5.0, ..base() };
        let a = generate(&spec).unwrap();
        let b = generate(&spec).unwrap();
        assert_eq!(a, b);
        let c = generate(&ScenarioSpec { seed: 8, ..spec }).unwrap();
        assert_ne!(a.gt, c.gt);
    }

    #[test]
    fn occlusion_window_removes_detections_exactly() {
        let spec = ScenarioSpec { occlusions: vec![Occlusion { object: 1, start: 5, end: 8 }], ..base() };
        let s = generate(&spec).unwrap();
        for f in &s.dets {
            let has = f.entries.iter().any(|e| e.id == 1);
            assert_eq!(has, !(5..=8).contains(&f.frame), "frame {}", f.frame);
        }
        // the other objects keep their noise draws
        let plain = generate(&base()).unwrap();
        for (a, b) in s.dets.iter().zip(&plain.dets) {
            let others = |f: &FrameAnnotations| f.entries.iter().filter(|e| e.id != 1).copied().collect::<Vec<_>>();
            assert_eq!(others(a), others(b));
        }
        // hidden objects leave no footprint
        let occluded = s.static_frame(6);
        assert!(occluded.objects.iter().all(|o| o.id != 1));
        assert_eq!(occluded.grid, render(&occluded.objects, &spec.render_config()));
    }

    #[test]
    fn boxes_stay_inside_the_image() {
        let spec = ScenarioSpec { speed_min: 20.0, speed_max: 40.0, num_frames: 60, motion: MotionKind::Sinusoidal, amplitude: 30.0, ..base() };
        let s = generate(&spec).unwrap();
        for o in &s.objects {
            for b in &o.boxes {
                assert!(b.left >= -1e-9 && b.top >= -1e-9);
                assert!(b.right() <= spec.image_width + 1e-9 && b.bottom() <= spec.image_height + 1e-9);
            }
        }
    }

    #[test]
    fn lifetimes_bound_presence() {
        let spec = ScenarioSpec { lifetimes: vec![(1, 20), (5, 12), (10, 20)], ..base() };
        let s = generate(&spec).unwrap();
        for f in &s.gt {
            let ids: Vec<i64> = f.entries.iter().map(|e| e.id).collect();
            assert_eq!(ids.contains(&2), (5..=12).contains(&f.frame));
            assert_eq!(ids.contains(&3), f.frame >= 10);
        }
    }

    #[test]
    fn gt_scores_perfectly_against_itself() {
        let s = generate(&base()).unwrap();
        let r = evaluate(&s.gt, &s.gt, 0.5).unwrap();
        assert_eq!(r.mota, 100.0);
        assert_eq!(r.idf1, 100.0);
    }

    #[test]
    fn spec_text_round_trip_and_validation() {
        let spec = ScenarioSpec {
            lifetimes: vec![(1, 10), (3, 20), (2, 4)],
            occlusions: vec![Occlusion { object: 2, start: 3, end: 4 }],
            motion: MotionKind::Sinusoidal,
            center_jitter: 1.5,
            ..base()
        };
        assert_eq!(ScenarioSpec::parse(&spec.to_text()).unwrap(), spec);
        assert!(matches!(ScenarioSpec::parse("colour = red"), Err(SynthError::UnknownKey(_))));
        assert!(matches!(ScenarioSpec::parse("seed 4"), Err(SynthError::Parse { line: 1, .. })));
        assert!(ScenarioSpec::parse("miss_prob = 1.5").is_err());
        assert!(ScenarioSpec::parse("num_frames = 10\nnum_objects = 1\nlifetimes = 4-4").is_err());
        assert!(ScenarioSpec::parse("num_frames = 10\nnum_objects = 1\nlifetimes = 4-11").is_err());
    }

    fn one_object_frame() -> StaticFrame {
        let cfg = RenderConfig { image: ImageSize { width: 64.0, height: 64.0 }, grid_h: 8, grid_w: 8, appearance_dims: 2 };
        StaticFrame::new(
            cfg,
            vec![
                SceneObject { id: 1, bbox: BBox::new(10.0, 10.0, 16.0, 20.0), appearance: vec![1.0, -1.0] },
                SceneObject { id: 2, bbox: BBox::new(50.0, 30.0, 12.0, 12.0), appearance: vec![0.5, 0.5] },
            ],
        )
    }

    #[test]
    fn identity_perturbation_is_exact() {
        let f = one_object_frame();
        let ranges = PerturbRanges { scale: (1.0, 1.0), translate: (0.0, 0.0) };
        let (out, t) = perturb_static(&f, &ranges, 99);
        assert_eq!(t, Transform::IDENTITY);
        assert_eq!(out, f);
    }

    #[test]
    fn translation_shifts_and_clips() {
        let f = one_object_frame();
        let out = apply_transform(&f, &Transform { scale: 1.0, tx: 5.0, ty: 0.0 });
        assert_eq!(out.objects[0].bbox, BBox::new(15.0, 10.0, 16.0, 20.0));
        // second box: left 55, right would be 67, clipped at 64
        assert_eq!(out.objects[1].bbox, BBox::new(55.0, 30.0, 9.0, 12.0));
        let gone = apply_transform(&f, &Transform { scale: 1.0, tx: 70.0, ty: 0.0 });
        assert!(gone.objects.is_empty());
    }

    #[test]
    fn scaling_is_about_the_center() {
        let f = one_object_frame();
        let out = apply_transform(&f, &Transform { scale: 2.0, tx: 0.0, ty: 0.0 });
        // x' = 2x - 32
        assert_eq!(out.objects[0].bbox, BBox::new(0.0, 0.0, 20.0, 28.0));
        assert_eq!(out.objects.len(), 1);
    }

    #[test]
    fn seeded_perturbation_replays() {
        let f = one_object_frame();
        let ranges = PerturbRanges { scale: (0.95, 1.05), translate: (-4.0, 4.0) };
        let (a, ta) = perturb_static(&f, &ranges, 3);
        let (b, tb) = perturb_static(&f, &ranges, 3);
        assert_eq!(ta, tb);
        assert_eq!(a, b);
        let mut rng = SeededRng::new(3);
        let s = rng.uniform(0.95, 1.05);
        let x = rng.uniform(-4.0, 4.0);
        let y = rng.uniform(-4.0, 4.0);
        assert_eq!(ta, Transform { scale: s, tx: x, ty: y });
    }

    #[test]
    fn skip_sample_keeps_strided_frames() {
        let spec = ScenarioSpec { num_frames: 9, ..base() };
        let s = generate(&spec).unwrap();
        assert_eq!(skip_sample(&s.gt, 1).unwrap(), s.gt);
        let kept = skip_sample(&s.gt, 4).unwrap();
        assert_eq!(kept.iter().map(|f| f.frame).collect::<Vec<_>>(), vec![1, 2, 3]);
        assert_eq!(kept[1].entries, s.gt[4].entries);
        assert_eq!(kept[2].entries, s.gt[8].entries);
        let sk = s.skip(4).unwrap();
        assert_eq!(sk.num_frames, 3);
        assert_eq!(sk.gt, kept);
        assert_eq!(sk.dets, skip_sample(&s.dets, 4).unwrap());
        assert_eq!(sk.features[2], s.features[8]);
        assert_eq!(sk.objects[0].box_at(3), s.objects[0].box_at(9));
        assert!(skip_sample(&s.gt, 0).is_err());
    }

    #[test]
    fn render_paints_blob_and_coordinates() {
        let f = one_object_frame();
        let g = &f.grid;
        assert_eq!((g.height, g.width, g.channels), (8, 8, 7));
        // cell (2, 2) centre (20, 20) is the first box's centre (18, 20), close to peak
        assert!(g.at(2, 2, 0) > 0.9);
        assert!((g.at(2, 2, 3) - 20.0 / 64.0).abs() < 1e-12);
        assert!((g.at(2, 2, 5) - g.at(2, 2, 0)).abs() < 1e-12);
        assert!(g.at(7, 0, 0) < 1e-3);
    }

    #[test]
    fn oracle_provider_tags_and_propagates() {
        let spec = ScenarioSpec { num_frames: 5, num_objects: 2, ..base() };
        let s = generate(&spec).unwrap();
        let mut p = OracleProvider::new(&s, 3);
        let frames = s.frames();
        let dets = p.detect(&frames[0]).unwrap();
        assert_eq!(dets.len(), 2);
        assert_eq!(dets[0].feature, vec![1.0]);
        assert!(dets.iter().all(|d| d.slot.unwrap() < 9));
        let t = Tracklet {
            id: 4,
            bbox: dets[1].bbox,
            score: 1.0,
            state: crate::tracker::TrackState::Active,
            inactive_count: 0,
            slot: None,
            payload: Payload::Query(vec![2.0]),
        };
        let boxes = p.propagate(&frames[3], &[&t]).unwrap();
        assert_eq!(boxes.len(), 1);
        assert_eq!(boxes[0].bbox, s.objects[1].box_at(4).unwrap());
    }
}
