//! Training on simulated frame pairs, the per-sample loss and gradient
//! checks.
//!
//! A training pair is a static frame and a randomly scaled and shifted copy
//! of it. The first frame is decoded with the object queries alone; the
//! embeddings of queries matched to its objects become the track queries of
//! the second frame. On the second frame both decoders are supervised by
//! the set-prediction loss, each normalized by its own object count, and
//! the two losses are added. Nothing flows back through the first frame.

use super::model::{DecodeOut, DecodeVars, Graph, ModelConfig, ModelParams};
use super::tape::{Mat, Tape};
use super::ToyNetError;
use crate::assignment::Assignment;
use crate::geometry::CenterBox;
use crate::losses::{optimal_match, set_loss_for_assignment, GroundTruth, LossWeights, Prediction};
use crate::rng::SeededRng;
use crate::synth::{perturb_static, PerturbRanges, ScenarioSpec, StaticFrame, generate};
use ndarray::Axis;

/// How tracking boxes find their targets on the second frame.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum MatchStrategy {
    /// Optimal matching against the second frame's objects.
    #[default]
    Current,
    /// Each track query keeps the object it was matched to on the first frame.
    Previous,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainPair {
    pub first: StaticFrame,
    pub second: StaticFrame,
}

impl TrainPair {
    /// Pairs a frame with its seeded perturbation.
    pub fn simulate(first: StaticFrame, ranges: &PerturbRanges, seed: u64) -> Self {
        let (second, _) = perturb_static(&first, ranges, seed);
        Self { first, second }
    }
}

/// Recipe for a reproducible set of training pairs.
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetSpec {
    pub pairs: usize,
    /// Scene template; `num_objects` is cycled from 1 to `max_objects`.
    pub scene: ScenarioSpec,
    pub max_objects: usize,
    pub ranges: PerturbRanges,
    pub seed: u64,
}

impl Default for DatasetSpec {
    fn default() -> Self {
        Self {
            pairs: 768,
            scene: ScenarioSpec {
                image_width: 64.0,
                image_height: 64.0,
                num_frames: 1,
                width_min: 12.0,
                width_max: 24.0,
                height_min: 12.0,
                height_max: 24.0,
                ..ScenarioSpec::default()
            },
            max_objects: 3,
            ranges: PerturbRanges { scale: (0.95, 1.05), translate: (-4.0, 4.0) },
            seed: 0,
        }
    }
}

impl DatasetSpec {
    pub fn build(&self) -> Result<Vec<TrainPair>, ToyNetError> {
        let mut seeds = SeededRng::new(self.seed);
        (0..self.pairs)
            .map(|k| {
                let scene = ScenarioSpec { num_objects: 1 + k % self.max_objects.max(1), seed: seeds.next_u64(), ..self.scene.clone() };
                let s = generate(&scene).map_err(|e| ToyNetError::Config(e.to_string()))?;
                Ok(TrainPair::simulate(s.static_frame(1), &self.ranges, seeds.next_u64()))
            })
            .collect()
    }
}

pub fn ground_truth(frame: &StaticFrame) -> Vec<GroundTruth> {
    frame.objects.iter().map(|o| GroundTruth { bbox: o.bbox.to_center(frame.render.image), class_id: 0 }).collect()
}

pub fn predictions(out: &DecodeOut) -> Vec<Prediction> {
    out.boxes.iter().zip(&out.probs).map(|(b, p)| Prediction { bbox: *b, class_probs: p.clone() }).collect()
}

/// Track queries for the second frame: embeddings of first-frame queries
/// matched to objects, with the matched object's index.
pub fn first_frame_queries(params: &ModelParams, first: &StaticFrame, w: &LossWeights) -> Result<(Mat, Vec<usize>), ToyNetError> {
    let memory = params.encode(&first.grid, &first.grid)?;
    let det = params.decode_objects(&memory);
    let a = optimal_match(&predictions(&det), &ground_truth(first), w);
    let mut pairs = a.pairs.clone();
    pairs.sort_by_key(|&(_, obj)| obj);
    let rows: Vec<usize> = pairs.iter().map(|&(q, _)| q).collect();
    Ok((det.features.select(Axis(0), &rows), pairs.iter().map(|&(_, o)| o).collect()))
}

/// Loss of one pair and, if requested, its parameter gradients.
pub struct SampleLoss {
    pub loss: f64,
    pub det_loss: f64,
    pub track_loss: f64,
    pub grads: Option<Vec<Mat>>,
}

fn seeds(tape: &Tape, v: &DecodeVars, d_boxes: &[[f64; 4]], d_probs: &[Vec<f64>]) -> [(super::tape::Var, Mat); 2] {
    let n = d_boxes.len();
    let classes = tape.value(v.probs).ncols();
    let b = Mat::from_shape_fn((n, 4), |(i, k)| d_boxes[i][k]);
    let p = Mat::from_shape_fn((n, classes), |(i, k)| d_probs[i][k]);
    [(v.boxes, b), (v.probs, p)]
}

/// Loss on the second frame given fixed track queries.
pub fn pair_loss(
    params: &ModelParams,
    pair: &TrainPair,
    track_queries: &Mat,
    track_objects: &[usize],
    w: &LossWeights,
    strategy: MatchStrategy,
    want_grads: bool,
) -> Result<SampleLoss, ToyNetError> {
    let mut g = Graph::new(params);
    let memory = g.encode(&pair.second.grid, &pair.first.grid)?;
    let det = g.decode_objects(memory);
    let trk = g.decode_tracks(track_queries, memory)?;
    let gts = ground_truth(&pair.second);

    let det_preds = predictions(&DecodeOut::read(&g.tape, &det));
    let det_a = optimal_match(&det_preds, &gts, w);
    let det_l = set_loss_for_assignment(&det_preds, &gts, &det_a, w);

    let trk_preds = predictions(&DecodeOut::read(&g.tape, &trk));
    let trk_a = match strategy {
        MatchStrategy::Current => optimal_match(&trk_preds, &gts, w),
        MatchStrategy::Previous => {
            let pairs = track_objects
                .iter()
                .enumerate()
                .filter_map(|(k, &obj)| {
                    let id = pair.first.objects[obj].id;
                    pair.second.objects.iter().position(|o| o.id == id).map(|j| (k, j))
                })
                .collect();
            Assignment::from_pairs(trk_preds.len(), gts.len(), pairs)
        }
    };
    let trk_l = set_loss_for_assignment(&trk_preds, &gts, &trk_a, w);
    let loss = det_l.loss + trk_l.loss;
    if !loss.is_finite() {
        return Err(ToyNetError::NonFinite { epoch: None });
    }
    let grads = want_grads.then(|| {
        let mut all = Vec::with_capacity(4);
        all.extend(seeds(&g.tape, &det, &det_l.d_boxes, &det_l.d_probs));
        all.extend(seeds(&g.tape, &trk, &trk_l.d_boxes, &trk_l.d_probs));
        g.param_grads(&all)
    });
    Ok(SampleLoss { loss, det_loss: det_l.loss, track_loss: trk_l.loss, grads })
}

/// Full per-pair loss: first-frame pass, then [`pair_loss`].
pub fn sample_loss(params: &ModelParams, pair: &TrainPair, w: &LossWeights, strategy: MatchStrategy, want_grads: bool) -> Result<SampleLoss, ToyNetError> {
    let (tq, objs) = first_frame_queries(params, &pair.first, w)?;
    pair_loss(params, pair, &tq, &objs, w, strategy, want_grads)
}

/// Mean loss over a dataset.
pub fn dataset_loss(params: &ModelParams, data: &[TrainPair], w: &LossWeights, strategy: MatchStrategy) -> Result<f64, ToyNetError> {
    let mut total = 0.0;
    for pair in data {
        total += sample_loss(params, pair, w, strategy, false)?.loss;
    }
    Ok(total / data.len().max(1) as f64)
}

/// Update rule applied to each mini-batch gradient.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Optimizer {
    /// `p -= lr * g`
    Sgd,
    /// Bias-corrected first and second moment estimates.
    Adam { beta1: f64, beta2: f64, eps: f64 },
}

impl Optimizer {
    pub const ADAM: Optimizer = Optimizer::Adam { beta1: 0.9, beta2: 0.999, eps: 1e-8 };
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    pub optimizer: Optimizer,
    /// Anneal the step along a half cosine from `learning_rate` to zero.
    pub cosine_decay: bool,
    pub batch_size: usize,
    /// Gradient steps are rescaled to this global norm when they exceed it.
    pub clip_norm: Option<f64>,
    pub seed: u64,
    pub weights: LossWeights,
    pub strategy: MatchStrategy,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 80,
            learning_rate: 0.002,
            optimizer: Optimizer::ADAM,
            cosine_decay: true,
            batch_size: 8,
            clip_norm: None,
            seed: 0,
            weights: LossWeights::default(),
            strategy: MatchStrategy::Current,
        }
    }
}

#[derive(Debug, Clone)]
pub struct TrainReport {
    /// Mean dataset loss before training, then after every epoch.
    pub history: Vec<f64>,
    pub params: ModelParams,
}

/// Mini-batch training with the configured update rule. Batch order is shuffled
/// every epoch from a generator seeded with `cfg.seed`.
pub fn train_toy(init: &ModelParams, data: &[TrainPair], cfg: &TrainConfig) -> Result<TrainReport, ToyNetError> {
    train_toy_with(init, data, cfg, |_, _, _| {})
}

/// [`train_toy`] with a callback after each epoch `(epoch, loss, params)`.
pub fn train_toy_with(
    init: &ModelParams,
    data: &[TrainPair],
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(usize, f64, &ModelParams),
) -> Result<TrainReport, ToyNetError> {
    if cfg.batch_size == 0 || !(cfg.learning_rate > 0.0) {
        return Err(ToyNetError::Config("batch_size and learning_rate must be positive".into()));
    }
    let mut params = init.clone();
    let mut rng = SeededRng::new(cfg.seed);
    let first = dataset_loss(&params, data, &cfg.weights, cfg.strategy)?;
    let mut history = vec![first];
    let mut order: Vec<usize> = (0..data.len()).collect();
    let zeros = || params.tensors.iter().map(|t| Mat::zeros(t.raw_dim())).collect::<Vec<_>>();
    let (mut m1, mut m2) = (zeros(), zeros());
    let mut steps = 0i32;
    for epoch in 1..=cfg.epochs {
        rng.shuffle(&mut order);
        let lr = if cfg.cosine_decay {
            cfg.learning_rate * 0.5 * (1.0 + (std::f64::consts::PI * (epoch - 1) as f64 / cfg.epochs as f64).cos())
        } else {
            cfg.learning_rate
        };
        for batch in order.chunks(cfg.batch_size) {
            let mut acc: Vec<Mat> = params.tensors.iter().map(|t| Mat::zeros(t.raw_dim())).collect();
            for &i in batch {
                let s = sample_loss(&params, &data[i], &cfg.weights, cfg.strategy, true)
                    .map_err(|_| ToyNetError::NonFinite { epoch: Some(epoch) })?;
                for (a, g) in acc.iter_mut().zip(s.grads.expect("gradients requested")) {
                    *a += &g;
                }
            }
            let scale = 1.0 / batch.len() as f64;
            let norm = acc.iter().map(|g| g.iter().map(|v| v * v).sum::<f64>()).sum::<f64>().sqrt() * scale;
            let clip = match cfg.clip_norm {
                Some(c) if norm > c => c / norm,
                _ => 1.0,
            };
            steps += 1;
            match cfg.optimizer {
                Optimizer::Sgd => {
                    let step = lr * scale * clip;
                    for (p, g) in params.tensors.iter_mut().zip(&acc) {
                        p.scaled_add(-step, g);
                    }
                }
                Optimizer::Adam { beta1, beta2, eps } => {
                    let c1 = 1.0 - beta1.powi(steps);
                    let c2 = 1.0 - beta2.powi(steps);
                    for ((p, g), (a, b)) in params.tensors.iter_mut().zip(&acc).zip(m1.iter_mut().zip(m2.iter_mut())) {
                        ndarray::Zip::from(p).and(g).and(a).and(b).for_each(|p, &g, a, b| {
                            let g = g * scale * clip;
                            *a = beta1 * *a + (1.0 - beta1) * g;
                            *b = beta2 * *b + (1.0 - beta2) * g * g;
                            *p -= lr * (*a / c1) / ((*b / c2).sqrt() + eps);
                        });
                    }
                }
            }
        }
        let loss = dataset_loss(&params, data, &cfg.weights, cfg.strategy).map_err(|_| ToyNetError::NonFinite { epoch: Some(epoch) })?;
        if !loss.is_finite() {
            return Err(ToyNetError::NonFinite { epoch: Some(epoch) });
        }
        on_epoch(epoch, loss, &params);
        history.push(loss);
    }
    Ok(TrainReport { history, params })
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    /// Tensor holding the worst entry.
    pub worst: String,
    pub checked: usize,
}

/// `|a - n| / max(|a|, |n|, 1e-6)`
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-6)
}

fn check_all(
    tensors: &mut [Mat],
    names: &[String],
    analytic: &[Mat],
    eps: f64,
    mut loss: impl FnMut(&[Mat]) -> Result<f64, ToyNetError>,
) -> Result<GradCheckReport, ToyNetError> {
    if !(eps > 0.0) {
        return Err(ToyNetError::Config("epsilon must be positive".into()));
    }
    let mut report = GradCheckReport { max_rel_error: 0.0, worst: String::new(), checked: 0 };
    for t in 0..tensors.len() {
        // logical row-major order, whatever the memory layout
        let expected: Vec<f64> = analytic[t].iter().copied().collect();
        for i in 0..tensors[t].len() {
            let orig = tensors[t].as_slice().expect("standard layout")[i];
            tensors[t].as_slice_mut().expect("standard layout")[i] = orig + eps;
            let hi = loss(tensors)?;
            tensors[t].as_slice_mut().expect("standard layout")[i] = orig - eps;
            let lo = loss(tensors)?;
            tensors[t].as_slice_mut().expect("standard layout")[i] = orig;
            if !(hi.is_finite() && lo.is_finite()) {
                return Err(ToyNetError::NonFinite { epoch: None });
            }
            let numeric = (hi - lo) / (2.0 * eps);
            let err = relative_error(expected[i], numeric);
            if err > report.max_rel_error {
                report.max_rel_error = err;
                report.worst = names[t].clone();
            }
            report.checked += 1;
        }
    }
    Ok(report)
}

/// Compares backprop through the whole network with central differences on
/// every parameter. Track queries and their first-frame objects are held
/// fixed so the loss is a function of the parameters alone.
pub fn grad_check(params: &ModelParams, pair: &TrainPair, w: &LossWeights, eps: f64) -> Result<GradCheckReport, ToyNetError> {
    let (tq, objs) = first_frame_queries(params, &pair.first, w)?;
    let base = pair_loss(params, pair, &tq, &objs, w, MatchStrategy::Current, true)?;
    let analytic = base.grads.expect("gradients requested");
    let mut probe = params.clone();
    let names = params.names().to_vec();
    let mut tensors = std::mem::take(&mut probe.tensors);
    check_all(&mut tensors, &names, &analytic, eps, |ts| {
        probe.tensors = ts.to_vec();
        Ok(pair_loss(&probe, pair, &tq, &objs, w, MatchStrategy::Current, false)?.loss)
    })
}

/// Box and class heads applied directly to fixed input features.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearHeads {
    pub features: Mat,
    /// `[box weight, box bias, class weight, class bias]`
    pub tensors: Vec<Mat>,
}

impl LinearHeads {
    pub fn random(n: usize, d: usize, seed: u64) -> Self {
        let mut rng = SeededRng::new(seed);
        let mut m = |r, c, s: f64| Mat::from_shape_fn((r, c), |_| rng.uniform(-s, s));
        let features = m(n, d, 1.0);
        let tensors = vec![m(d, 4, 0.5), m(1, 4, 0.5), m(d, 1, 0.5), m(1, 1, 0.5)];
        Self { features, tensors }
    }

    fn forward(&self, tensors: &[Mat]) -> (Tape, DecodeVars) {
        let mut t = Tape::new();
        let x = t.leaf(self.features.clone());
        let p: Vec<_> = tensors.iter().map(|m| t.leaf(m.clone())).collect();
        let b = t.matmul(x, p[0]);
        let b = t.add_row(b, p[1]);
        let boxes = t.sigmoid(b);
        let c = t.matmul(x, p[2]);
        let c = t.add_row(c, p[3]);
        let probs = t.sigmoid(c);
        (t, DecodeVars { boxes, probs, features: x })
    }

    pub fn predictions(&self) -> Vec<Prediction> {
        let (t, v) = self.forward(&self.tensors);
        predictions(&DecodeOut::read(&t, &v))
    }

    pub fn loss(&self, tensors: &[Mat], gts: &[GroundTruth], w: &LossWeights) -> f64 {
        let (t, v) = self.forward(tensors);
        let preds = predictions(&DecodeOut::read(&t, &v));
        let a = optimal_match(&preds, gts, w);
        set_loss_for_assignment(&preds, gts, &a, w).loss
    }

    /// Loss gradients for `[box weight, box bias, class weight, class bias]`.
    pub fn grads(&self, gts: &[GroundTruth], w: &LossWeights) -> (f64, Vec<Mat>) {
        let (t, v) = self.forward(&self.tensors);
        let preds = predictions(&DecodeOut::read(&t, &v));
        let a = optimal_match(&preds, gts, w);
        let l = set_loss_for_assignment(&preds, gts, &a, w);
        let all = t.backward(&seeds(&t, &v, &l.d_boxes, &l.d_probs));
        // leaves 1..=4 are the head tensors
        let grads = (1..=4).map(|i| all[i].clone().unwrap_or_else(|| Mat::zeros(self.tensors[i - 1].raw_dim()))).collect();
        (l.loss, grads)
    }

    pub fn grad_check(&self, gts: &[GroundTruth], w: &LossWeights, eps: f64) -> Result<GradCheckReport, ToyNetError> {
        let (_, analytic) = self.grads(gts, w);
        let names: Vec<String> = ["box.weight", "box.bias", "class.weight", "class.bias"].iter().map(|s| s.to_string()).collect();
        let mut tensors = self.tensors.clone();
        check_all(&mut tensors, &names, &analytic, eps, |ts| Ok(self.loss(ts, gts, w)))
    }
}

/// A zero-loss target for [`LinearHeads`]: every prediction's own box as
/// ground truth, with class logits pushed far enough that the
/// probabilities sit at the clamp.
pub fn stationary_heads(n: usize, d: usize, seed: u64) -> (LinearHeads, Vec<GroundTruth>) {
    let mut heads = LinearHeads::random(n, d, seed);
    heads.tensors[2].fill(0.0);
    heads.tensors[3].fill(60.0);
    let gts = heads
        .predictions()
        .iter()
        .map(|p| GroundTruth { bbox: CenterBox::from_array(p.bbox.to_array()), class_id: 0 })
        .collect();
    (heads, gts)
}

/// A two-object pair sized for a model config.
pub fn gradcheck_pair(cfg: &ModelConfig, seed: u64) -> Result<TrainPair, ToyNetError> {
    let scene = ScenarioSpec {
        grid_h: cfg.grid_h,
        grid_w: cfg.grid_w,
        appearance_dims: cfg.in_channels.saturating_sub(crate::synth::BASE_CHANNELS),
        num_objects: 2,
        seed,
        ..DatasetSpec::default().scene
    };
    let s = generate(&scene).map_err(|e| ToyNetError::Config(e.to_string()))?;
    let ranges = PerturbRanges { scale: (0.98, 1.02), translate: (-2.0, 2.0) };
    Ok(TrainPair::simulate(s.static_frame(1), &ranges, seed ^ 0x5eed))
}
