//! Layered `section.key = value` settings shared by every subcommand.

use crate::losses::LossWeights;
use crate::metrics::DEFAULT_IOU_THRESH;
use crate::motion::KalmanParams;
use crate::synth::{PerturbRanges, ScenarioSpec};
use crate::toynet::{ToyNetProvider, DatasetSpec, MatchStrategy, ModelConfig, Optimizer, TrainConfig};
use crate::tracker::{Association, QueryMode, TrackerConfig};
use std::fmt::Write as _;
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum ConfigError {
    #[error("unknown key {0:?}")]
    UnknownKey(String),
    #[error("bad value for {key}: {message}")]
    BadValue { key: String, message: String },
    #[error("line {line}: {message}")]
    Syntax { line: usize, message: String },
    #[error("{0}")]
    Invalid(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct AblateSettings {
    /// Scenario template; seeds are assigned per scenario.
    pub template: ScenarioSpec,
    pub scenarios: usize,
    pub stride: usize,
    pub seed: u64,
}

impl AblateSettings {
    /// Twelve slow linear movers over 60 frames: crossings are common,
    /// border bounces rare.
    pub fn crowded() -> ScenarioSpec {
        ScenarioSpec { num_objects: 12, num_frames: 60, speed_min: 0.5, speed_max: 1.5, ..ScenarioSpec::default() }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckSettings {
    pub model: ModelConfig,
    pub eps: f64,
    pub tolerance: f64,
    pub seed: u64,
}

/// Everything a run can be configured with. Starts from defaults; each
/// layer (file, then flags) overwrites single keys.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub tracker: TrackerConfig,
    pub kalman: KalmanParams,
    pub loss: LossWeights,
    pub scenario: ScenarioSpec,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub dataset: DatasetSpec,
    pub eval_iou: f64,
    /// Detection threshold used in place of `tracker.score_thresh` when the
    /// network provides the boxes.
    pub net_score_thresh: f64,
    pub ablate: AblateSettings,
    pub gradcheck: GradCheckSettings,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            tracker: TrackerConfig::default(),
            kalman: KalmanParams::default(),
            loss: LossWeights::default(),
            scenario: ScenarioSpec::default(),
            model: ModelConfig::default(),
            train: TrainConfig::default(),
            dataset: DatasetSpec::default(),
            eval_iou: DEFAULT_IOU_THRESH,
            net_score_thresh: ToyNetProvider::SCORE_THRESH,
            ablate: AblateSettings { template: AblateSettings::crowded(), scenarios: 10, stride: 4, seed: 0 },
            gradcheck: GradCheckSettings { model: ModelConfig::gradcheck(), eps: 1e-5, tolerance: 1e-3, seed: 0 },
        }
    }
}

fn num<T: std::str::FromStr>(key: &str, v: &str) -> Result<T, ConfigError> {
    v.parse().map_err(|_| ConfigError::BadValue { key: key.to_string(), message: format!("cannot parse {v:?}") })
}

fn choice<T: Copy>(key: &str, v: &str, options: &[(&str, T)]) -> Result<T, ConfigError> {
    options.iter().find(|(name, _)| *name == v).map(|(_, t)| *t).ok_or_else(|| {
        let names: Vec<&str> = options.iter().map(|(n, _)| *n).collect();
        ConfigError::BadValue { key: key.to_string(), message: format!("{v:?} is not one of {}", names.join(", ")) }
    })
}

const ASSOCIATIONS: &[(&str, Association)] = &[("hungarian", Association::Hungarian), ("nms", Association::Nms)];
const QUERY_MODES: &[(&str, QueryMode)] =
    &[("both", QueryMode::Both), ("object_only", QueryMode::ObjectOnly), ("track_only", QueryMode::TrackOnly)];
const STRATEGIES: &[(&str, MatchStrategy)] = &[("current", MatchStrategy::Current), ("previous", MatchStrategy::Previous)];

fn name_of<T: PartialEq>(options: &[(&'static str, T)], t: &T) -> &'static str {
    options.iter().find(|(_, o)| o == t).map_or("?", |(n, _)| n)
}

impl RunConfig {
    /// Sets one dotted key, e.g. `tracker.min_iou`.
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), ConfigError> {
        let v = value.trim();
        let (section, field) = key.split_once('.').ok_or_else(|| ConfigError::UnknownKey(key.to_string()))?;
        let unknown = || ConfigError::UnknownKey(key.to_string());
        let bad = |message: String| ConfigError::BadValue { key: key.to_string(), message };
        match section {
            "tracker" => match field {
                "rebirth_k" => self.tracker.rebirth_k = num(key, v)?,
                "min_iou" => self.tracker.min_iou = num(key, v)?,
                "score_thresh" => self.tracker.score_thresh = num(key, v)?,
                "association" => self.tracker.association = choice(key, v, ASSOCIATIONS)?,
                "query_mode" => self.tracker.query_mode = choice(key, v, QUERY_MODES)?,
                _ => return Err(unknown()),
            },
            "kalman" => match field {
                "std_weight_position" => self.kalman.std_weight_position = num(key, v)?,
                "std_weight_velocity" => self.kalman.std_weight_velocity = num(key, v)?,
                "std_aspect" => self.kalman.std_aspect = num(key, v)?,
                "std_aspect_velocity" => self.kalman.std_aspect_velocity = num(key, v)?,
                "std_aspect_measurement" => self.kalman.std_aspect_measurement = num(key, v)?,
                _ => return Err(unknown()),
            },
            "loss" => match field {
                "lambda_cls" => self.loss.lambda_cls = num(key, v)?,
                "lambda_l1" => self.loss.lambda_l1 = num(key, v)?,
                "lambda_giou" => self.loss.lambda_giou = num(key, v)?,
                "focal_alpha" => self.loss.focal_alpha = num(key, v)?,
                "focal_gamma" => self.loss.focal_gamma = num(key, v)?,
                _ => return Err(unknown()),
            },
            "scenario" => self.scenario.set(field, v).map_err(|e| match e {
                crate::synth::SynthError::UnknownKey(_) => unknown(),
                other => bad(other.to_string()),
            })?,
            "model" => set_model(&mut self.model, key, field, v)?,
            "train" => match field {
                "epochs" => self.train.epochs = num(key, v)?,
                "learning_rate" => self.train.learning_rate = num(key, v)?,
                "optimizer" => {
                    self.train.optimizer = choice(key, v, &[("adam", Optimizer::ADAM), ("sgd", Optimizer::Sgd)])?;
                }
                "cosine_decay" => self.train.cosine_decay = num(key, v)?,
                "batch_size" => self.train.batch_size = num(key, v)?,
                "clip_norm" => self.train.clip_norm = if v == "none" { None } else { Some(num(key, v)?) },
                "seed" => self.train.seed = num(key, v)?,
                "strategy" => self.train.strategy = choice(key, v, STRATEGIES)?,
                _ => return Err(unknown()),
            },
            "dataset" => match field {
                "pairs" => self.dataset.pairs = num(key, v)?,
                "max_objects" => self.dataset.max_objects = num(key, v)?,
                "seed" => self.dataset.seed = num(key, v)?,
                "scale_jitter" => {
                    let s: f64 = num(key, v)?;
                    self.dataset.ranges = PerturbRanges { scale: (1.0 - s, 1.0 + s), ..self.dataset.ranges };
                }
                "shift" => {
                    let s: f64 = num(key, v)?;
                    self.dataset.ranges = PerturbRanges { translate: (-s, s), ..self.dataset.ranges };
                }
                _ => return Err(unknown()),
            },
            "eval" => match field {
                "iou_thresh" => self.eval_iou = num(key, v)?,
                _ => return Err(unknown()),
            },
            "toynet" => match field {
                "score_thresh" => self.net_score_thresh = num(key, v)?,
                _ => return Err(unknown()),
            },
            "ablate" => match field {
                "scenarios" => self.ablate.scenarios = num(key, v)?,
                "stride" => self.ablate.stride = num(key, v)?,
                "seed" => self.ablate.seed = num(key, v)?,
                scenario_key => self.ablate.template.set(scenario_key, v).map_err(|e| match e {
                    crate::synth::SynthError::UnknownKey(_) => unknown(),
                    other => bad(other.to_string()),
                })?,
            },
            "gradcheck" => match field {
                "eps" => self.gradcheck.eps = num(key, v)?,
                "tolerance" => self.gradcheck.tolerance = num(key, v)?,
                "seed" => self.gradcheck.seed = num(key, v)?,
                model_key => set_model(&mut self.gradcheck.model, key, model_key, v)?,
            },
            _ => return Err(unknown()),
        }
        Ok(())
    }

    /// Applies a settings file over `self`. Lines are `key = value`;
    /// a `[section]` line prefixes the keys below it.
    pub fn apply_text(&mut self, text: &str) -> Result<(), ConfigError> {
        let mut section = String::new();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            if let Some(name) = line.strip_prefix('[').and_then(|l| l.strip_suffix(']')) {
                section = name.trim().to_string();
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| ConfigError::Syntax { line: n + 1, message: format!("expected key = value, got {line:?}") })?;
            let key = if section.is_empty() { k.trim().to_string() } else { format!("{section}.{}", k.trim()) };
            self.set(&key, v).map_err(|e| ConfigError::Syntax { line: n + 1, message: e.to_string() })?;
        }
        Ok(())
    }

    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let mut cfg = Self::default();
        cfg.apply_text(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let invalid = |e: &dyn std::fmt::Display| ConfigError::Invalid(e.to_string());
        self.tracker.validate().map_err(|e| invalid(&e))?;
        self.scenario.validate().map_err(|e| invalid(&e))?;
        self.ablate.template.validate().map_err(|e| invalid(&e))?;
        self.model.validate().map_err(|e| invalid(&e))?;
        self.gradcheck.model.validate().map_err(|e| invalid(&e))?;
        if !self.loss.is_valid() {
            return Err(ConfigError::Invalid("loss weights must be finite and non-negative".into()));
        }
        if !(0.0..=1.0).contains(&self.eval_iou) {
            return Err(ConfigError::Invalid(format!("eval.iou_thresh {} outside [0, 1]", self.eval_iou)));
        }
        if !(0.0..=1.0).contains(&self.net_score_thresh) {
            return Err(ConfigError::Invalid(format!("toynet.score_thresh {} outside [0, 1]", self.net_score_thresh)));
        }
        if self.ablate.stride == 0 {
            return Err(ConfigError::Invalid("ablate.stride must be positive".into()));
        }
        if !(self.gradcheck.eps > 0.0) || !(self.gradcheck.tolerance > 0.0) {
            return Err(ConfigError::Invalid("gradcheck.eps and gradcheck.tolerance must be positive".into()));
        }
        if self.train.batch_size == 0 || !(self.train.learning_rate > 0.0) {
            return Err(ConfigError::Invalid("train.batch_size and train.learning_rate must be positive".into()));
        }
        Ok(())
    }

    /// Sectioned text that [`RunConfig::parse`] reads back unchanged.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let t = &self.tracker;
        let _ = writeln!(s, "[tracker]");
        let _ = writeln!(s, "rebirth_k = {}", t.rebirth_k);
        let _ = writeln!(s, "min_iou = {}", t.min_iou);
        let _ = writeln!(s, "score_thresh = {}", t.score_thresh);
        let _ = writeln!(s, "association = {}", name_of(ASSOCIATIONS, &t.association));
        let _ = writeln!(s, "query_mode = {}", name_of(QUERY_MODES, &t.query_mode));
        let k = &self.kalman;
        let _ = writeln!(s, "\n[kalman]");
        let _ = writeln!(s, "std_weight_position = {}", k.std_weight_position);
        let _ = writeln!(s, "std_weight_velocity = {}", k.std_weight_velocity);
        let _ = writeln!(s, "std_aspect = {}", k.std_aspect);
        let _ = writeln!(s, "std_aspect_velocity = {}", k.std_aspect_velocity);
        let _ = writeln!(s, "std_aspect_measurement = {}", k.std_aspect_measurement);
        let l = &self.loss;
        let _ = writeln!(s, "\n[loss]");
        let _ = writeln!(s, "lambda_cls = {}", l.lambda_cls);
        let _ = writeln!(s, "lambda_l1 = {}", l.lambda_l1);
        let _ = writeln!(s, "lambda_giou = {}", l.lambda_giou);
        let _ = writeln!(s, "focal_alpha = {}", l.focal_alpha);
        let _ = writeln!(s, "focal_gamma = {}", l.focal_gamma);
        let _ = writeln!(s, "\n[scenario]");
        s.push_str(&self.scenario.to_text());
        let _ = writeln!(s, "\n[model]");
        s.push_str(&self.model.to_text());
        let tr = &self.train;
        let _ = writeln!(s, "\n[train]");
        let _ = writeln!(s, "epochs = {}", tr.epochs);
        let _ = writeln!(s, "learning_rate = {}", tr.learning_rate);
        let _ = writeln!(s, "optimizer = {}", if tr.optimizer == Optimizer::Sgd { "sgd" } else { "adam" });
        let _ = writeln!(s, "cosine_decay = {}", tr.cosine_decay);
        let _ = writeln!(s, "batch_size = {}", tr.batch_size);
        let _ = writeln!(s, "clip_norm = {}", tr.clip_norm.map_or("none".to_string(), |c| c.to_string()));
        let _ = writeln!(s, "seed = {}", tr.seed);
        let _ = writeln!(s, "strategy = {}", name_of(STRATEGIES, &tr.strategy));
        let d = &self.dataset;
        let _ = writeln!(s, "\n[dataset]");
        let _ = writeln!(s, "pairs = {}", d.pairs);
        let _ = writeln!(s, "max_objects = {}", d.max_objects);
        let _ = writeln!(s, "seed = {}", d.seed);
        let _ = writeln!(s, "scale_jitter = {}", d.ranges.scale.1 - 1.0);
        let _ = writeln!(s, "shift = {}", d.ranges.translate.1);
        let _ = writeln!(s, "\n[eval]\niou_thresh = {}", self.eval_iou);
        let _ = writeln!(s, "\n[toynet]\nscore_thresh = {}", self.net_score_thresh);
        let a = &self.ablate;
        let _ = writeln!(s, "\n[ablate]\nscenarios = {}\nstride = {}\nseed = {}", a.scenarios, a.stride, a.seed);
        // the template's own seed is overwritten per scenario
        s.push_str(&a.template.to_text().lines().filter(|l| !l.starts_with("seed ")).map(|l| format!("{l}\n")).collect::<String>());
        let g = &self.gradcheck;
        let _ = writeln!(s, "\n[gradcheck]\neps = {}\ntolerance = {}\nseed = {}", g.eps, g.tolerance, g.seed);
        s.push_str(&g.model.to_text());
        s
    }
}

fn set_model(model: &mut ModelConfig, key: &str, field: &str, v: &str) -> Result<(), ConfigError> {
    model.set(field, v).map_err(|e| match e {
        crate::toynet::ToyNetError::Config(m) if m.starts_with("unknown") => ConfigError::UnknownKey(key.to_string()),
        other => ConfigError::BadValue { key: key.to_string(), message: other.to_string() },
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sections_prefix_keys() {
        let cfg = RunConfig::parse("[tracker]\nmin_iou = 0.4 # looser\nassociation = nms\n\n[scenario]\nnum_objects = 6\n").unwrap();
        assert_eq!(cfg.tracker.min_iou, 0.4);
        assert_eq!(cfg.tracker.association, Association::Nms);
        assert_eq!(cfg.scenario.num_objects, 6);
        // a section stays open until the next header
        assert!(RunConfig::parse("[tracker]\nscenario.num_objects = 6\n").is_err());
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let mut cfg = RunConfig::default();
        assert_eq!(cfg.set("tracker.speed", "1"), Err(ConfigError::UnknownKey("tracker.speed".into())));
        assert!(matches!(cfg.set("nothing", "1"), Err(ConfigError::UnknownKey(_))));
        assert!(matches!(cfg.set("scenario.colour", "1"), Err(ConfigError::UnknownKey(_))));
        assert!(matches!(cfg.set("model.heads", "2"), Err(ConfigError::UnknownKey(_))));
        assert!(matches!(cfg.set("tracker.min_iou", "lots"), Err(ConfigError::BadValue { .. })));
    }

    #[test]
    fn text_round_trips() {
        let mut cfg = RunConfig::default();
        cfg.set("train.clip_norm", "2.5").unwrap();
        cfg.set("gradcheck.d_model", "12").unwrap();
        cfg.set("scenario.occlusions", "1:3-5").unwrap();
        cfg.set("dataset.shift", "6").unwrap();
        cfg.set("ablate.num_objects", "5").unwrap();
        let back = RunConfig::parse(&cfg.to_text()).unwrap();
        assert_eq!(back, cfg);
        assert_eq!(RunConfig::parse(&RunConfig::default().to_text()).unwrap(), RunConfig::default());
    }

    #[test]
    fn validation_catches_ranges() {
        assert!(RunConfig::parse("tracker.min_iou = 1.5").is_err());
        assert!(RunConfig::parse("ablate.stride = 0").is_err());
        assert!(RunConfig::parse("model.d_model = 30").is_err());
    }
}
