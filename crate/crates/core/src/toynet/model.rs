//! Encoder and the two parallel decoders.
//!
//! Tokens: each grid cell of the current and the previous frame is
//! projected to `d_model`, gets a fixed sinusoidal 2D position code and a
//! learned per-frame offset, and the two token sets are stacked (current
//! first). One encoder pass turns them into the memory both decoders read.
//! A decoder layer is self-attention over its queries, cross-attention into
//! the memory and a feed-forward block, each with a residual connection.
//! Attention is single head, `softmax(q k^T / sqrt(d)) v`.

use super::tape::{Mat, Tape, Var};
use super::ToyNetError;
use crate::geometry::CenterBox;
use crate::rng::SeededRng;
use crate::synth::FeatureGrid;
use ndarray::Axis;
use std::fmt::Write as _;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ModelConfig {
    pub grid_h: usize,
    pub grid_w: usize,
    pub in_channels: usize,
    pub d_model: usize,
    pub ffn_dim: usize,
    pub num_queries: usize,
    pub enc_layers: usize,
    pub dec_layers: usize,
    pub box_hidden: usize,
    pub num_classes: usize,
    /// Both decoders use the detection decoder's weights.
    pub share_decoders: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            grid_h: 8,
            grid_w: 8,
            in_channels: 8,
            d_model: 32,
            ffn_dim: 64,
            num_queries: 10,
            enc_layers: 1,
            dec_layers: 2,
            box_hidden: 32,
            num_classes: 1,
            share_decoders: false,
        }
    }
}

impl ModelConfig {
    /// Small enough to finite-difference every parameter.
    pub fn gradcheck() -> Self {
        Self { grid_h: 4, grid_w: 4, in_channels: 8, d_model: 8, ffn_dim: 16, num_queries: 4, box_hidden: 8, ..Self::default() }
    }

    pub fn cells(&self) -> usize {
        self.grid_h * self.grid_w
    }

    pub fn validate(&self) -> Result<(), ToyNetError> {
        let positive = [
            ("grid_h", self.grid_h),
            ("grid_w", self.grid_w),
            ("in_channels", self.in_channels),
            ("d_model", self.d_model),
            ("ffn_dim", self.ffn_dim),
            ("box_hidden", self.box_hidden),
            ("num_classes", self.num_classes),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(ToyNetError::Config(format!("{name} must be positive")));
            }
        }
        if !self.d_model.is_multiple_of(4) {
            return Err(ToyNetError::Config("d_model must be a multiple of 4".into()));
        }
        Ok(())
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for (k, v) in [
            ("grid_h", self.grid_h),
            ("grid_w", self.grid_w),
            ("in_channels", self.in_channels),
            ("d_model", self.d_model),
            ("ffn_dim", self.ffn_dim),
            ("num_queries", self.num_queries),
            ("enc_layers", self.enc_layers),
            ("dec_layers", self.dec_layers),
            ("box_hidden", self.box_hidden),
            ("num_classes", self.num_classes),
        ] {
            let _ = writeln!(s, "{k} = {v}");
        }
        let _ = writeln!(s, "share_decoders = {}", self.share_decoders);
        s
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<(), ToyNetError> {
        let v = value.trim();
        let num = || v.parse::<usize>().map_err(|_| ToyNetError::Config(format!("bad value for {key}: {v:?}")));
        match key {
            "grid_h" => self.grid_h = num()?,
            "grid_w" => self.grid_w = num()?,
            "in_channels" => self.in_channels = num()?,
            "d_model" => self.d_model = num()?,
            "ffn_dim" => self.ffn_dim = num()?,
            "num_queries" => self.num_queries = num()?,
            "enc_layers" => self.enc_layers = num()?,
            "dec_layers" => self.dec_layers = num()?,
            "box_hidden" => self.box_hidden = num()?,
            "num_classes" => self.num_classes = num()?,
            "share_decoders" => {
                self.share_decoders = v.parse().map_err(|_| ToyNetError::Config(format!("bad value for {key}: {v:?}")))?
            }
            other => return Err(ToyNetError::Config(format!("unknown model key {other:?}"))),
        }
        Ok(())
    }

    pub fn parse(text: &str) -> Result<Self, ToyNetError> {
        let mut cfg = Self::default();
        for line in text.lines().map(str::trim).filter(|l| !l.is_empty() && !l.starts_with('#')) {
            let (k, v) = line.split_once('=').ok_or_else(|| ToyNetError::Config(format!("expected key = value, got {line:?}")))?;
            cfg.set(k.trim(), v)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) struct AttnIdx {
    q: usize,
    k: usize,
    v: usize,
    o: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) struct FfnIdx {
    w1: usize,
    b1: usize,
    w2: usize,
    b2: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) struct EncLayerIdx {
    attn: AttnIdx,
    ffn: FfnIdx,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) struct DecLayerIdx {
    self_attn: AttnIdx,
    cross_attn: AttnIdx,
    ffn: FfnIdx,
}

/// Where each named tensor lives in the flat parameter list.
#[derive(Debug, Clone, PartialEq)]
pub(crate) struct Layout {
    pub(crate) names: Vec<String>,
    pub(crate) shapes: Vec<(usize, usize)>,
    in_w: usize,
    in_b: usize,
    frame_embed: usize,
    enc: Vec<EncLayerIdx>,
    det_dec: Vec<DecLayerIdx>,
    track_dec: Vec<DecLayerIdx>,
    queries: usize,
    box_w1: usize,
    box_b1: usize,
    box_w2: usize,
    box_b2: usize,
    cls_w: usize,
    pub(crate) cls_b: usize,
}

impl Layout {
    fn new(cfg: &ModelConfig) -> Self {
        let mut names = Vec::new();
        let mut shapes = Vec::new();
        let mut add = |name: String, shape: (usize, usize)| {
            names.push(name);
            shapes.push(shape);
            names.len() - 1
        };
        let d = cfg.d_model;
        let in_w = add("input.weight".into(), (cfg.in_channels, d));
        let in_b = add("input.bias".into(), (1, d));
        let frame_embed = add("frame_embed".into(), (2, d));
        let attn = |add: &mut dyn FnMut(String, (usize, usize)) -> usize, p: &str| AttnIdx {
            q: add(format!("{p}.q"), (d, d)),
            k: add(format!("{p}.k"), (d, d)),
            v: add(format!("{p}.v"), (d, d)),
            o: add(format!("{p}.o"), (d, d)),
        };
        let ffn = |add: &mut dyn FnMut(String, (usize, usize)) -> usize, p: &str| FfnIdx {
            w1: add(format!("{p}.w1"), (d, cfg.ffn_dim)),
            b1: add(format!("{p}.b1"), (1, cfg.ffn_dim)),
            w2: add(format!("{p}.w2"), (cfg.ffn_dim, d)),
            b2: add(format!("{p}.b2"), (1, d)),
        };
        let enc = (0..cfg.enc_layers)
            .map(|l| EncLayerIdx { attn: attn(&mut add, &format!("enc{l}.attn")), ffn: ffn(&mut add, &format!("enc{l}.ffn")) })
            .collect();
        let decoder = |add: &mut dyn FnMut(String, (usize, usize)) -> usize, p: &str| -> Vec<DecLayerIdx> {
            (0..cfg.dec_layers)
                .map(|l| DecLayerIdx {
                    self_attn: attn(&mut *add, &format!("{p}{l}.self")),
                    cross_attn: attn(&mut *add, &format!("{p}{l}.cross")),
                    ffn: ffn(&mut *add, &format!("{p}{l}.ffn")),
                })
                .collect()
        };
        let det_dec = decoder(&mut add, "det");
        let track_dec = if cfg.share_decoders { det_dec.clone() } else { decoder(&mut add, "track") };
        let queries = add("object_queries".into(), (cfg.num_queries, d));
        let box_w1 = add("box.w1".into(), (d, cfg.box_hidden));
        let box_b1 = add("box.b1".into(), (1, cfg.box_hidden));
        let box_w2 = add("box.w2".into(), (cfg.box_hidden, 4));
        let box_b2 = add("box.b2".into(), (1, 4));
        let cls_w = add("class.weight".into(), (d, cfg.num_classes));
        let cls_b = add("class.bias".into(), (1, cfg.num_classes));
        Self {
            names,
            shapes,
            in_w,
            in_b,
            frame_embed,
            enc,
            det_dec,
            track_dec,
            queries,
            box_w1,
            box_b1,
            box_w2,
            box_b2,
            cls_w,
            cls_b,
        }
    }
}

/// All trainable tensors of one network.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub config: ModelConfig,
    pub tensors: Vec<Mat>,
    pub(crate) layout: Layout,
}

/// Initial class prior; the class bias starts at its logit.
pub const CLASS_PRIOR: f64 = 0.1;

impl ModelParams {
    /// Uniform Glorot initialization from a seeded stream; biases start at
    /// zero except the class bias.
    pub fn init(config: ModelConfig, seed: u64) -> Result<Self, ToyNetError> {
        config.validate()?;
        let layout = Layout::new(&config);
        let mut rng = SeededRng::new(seed);
        let tensors = layout
            .names
            .iter()
            .zip(&layout.shapes)
            .map(|(name, &(r, c))| {
                if r == 1 && name != "frame_embed" {
                    Mat::zeros((r, c))
                } else {
                    let a = (6.0 / (r + c) as f64).sqrt();
                    Mat::from_shape_fn((r, c), |_| rng.uniform(-a, a))
                }
            })
            .collect::<Vec<_>>();
        let mut p = Self { config, tensors, layout };
        let logit = (CLASS_PRIOR / (1.0 - CLASS_PRIOR)).ln();
        p.tensors[p.layout.cls_b].fill(logit);
        Ok(p)
    }

    /// Rebuilds parameters from named tensors in layout order.
    pub fn from_tensors(config: ModelConfig, named: Vec<(String, Mat)>) -> Result<Self, ToyNetError> {
        config.validate()?;
        let layout = Layout::new(&config);
        if named.len() != layout.names.len() {
            return Err(ToyNetError::Shape(format!("expected {} tensors, got {}", layout.names.len(), named.len())));
        }
        let mut tensors = Vec::with_capacity(named.len());
        for ((name, m), (want_name, &want_shape)) in named.into_iter().zip(layout.names.iter().zip(&layout.shapes)) {
            if &name != want_name || m.dim() != want_shape {
                return Err(ToyNetError::Shape(format!("tensor {name} {:?} does not match {want_name} {want_shape:?}", m.dim())));
            }
            if m.iter().any(|v| !v.is_finite()) {
                return Err(ToyNetError::Shape(format!("tensor {name} has non-finite entries")));
            }
            tensors.push(m);
        }
        Ok(Self { config, tensors, layout })
    }

    pub fn names(&self) -> &[String] {
        &self.layout.names
    }

    pub fn num_scalars(&self) -> usize {
        self.tensors.iter().map(|t| t.len()).sum()
    }

    pub fn object_queries(&self) -> &Mat {
        &self.tensors[self.layout.queries]
    }
}

/// Fixed sinusoidal code for each cell, half the channels for rows and half
/// for columns.
pub fn position_encoding(grid_h: usize, grid_w: usize, d: usize) -> Mat {
    let half = d / 2;
    let mut pe = Mat::zeros((grid_h * grid_w, d));
    for r in 0..grid_h {
        for c in 0..grid_w {
            let row = r * grid_w + c;
            for (offset, pos) in [(0, r as f64), (half, c as f64)] {
                for i in 0..half / 2 {
                    let freq = 1.0 / 10000f64.powf(2.0 * i as f64 / half as f64);
                    pe[[row, offset + 2 * i]] = (pos * freq).sin();
                    pe[[row, offset + 2 * i + 1]] = (pos * freq).cos();
                }
            }
        }
    }
    pe
}

/// `softmax(q k^T / sqrt(d)) v` without recording gradients.
pub fn attention(q: &Mat, k: &Mat, v: &Mat) -> Result<Mat, ToyNetError> {
    if q.ncols() != k.ncols() || k.nrows() != v.nrows() {
        return Err(ToyNetError::Shape(format!("attention q {:?} k {:?} v {:?}", q.dim(), k.dim(), v.dim())));
    }
    let scale = 1.0 / (q.ncols().max(1) as f64).sqrt();
    let w = super::tape::softmax_rows(&(q.dot(&k.t()) * scale));
    Ok(w.dot(v))
}

/// Detection or tracking outputs of one decoder pass, as tape nodes.
#[derive(Debug, Clone, Copy)]
pub struct DecodeVars {
    /// `n x 4`, normalized `(cx, cy, w, h)`.
    pub boxes: Var,
    /// `n x classes`.
    pub probs: Var,
    /// `n x d`, the final embeddings before the heads.
    pub features: Var,
}

/// Forward pass on a tape; parameters are leaves so gradients can be read
/// back after [`Tape::backward`].
pub struct Graph<'p> {
    pub tape: Tape,
    pub params: &'p ModelParams,
    param_vars: Vec<Var>,
}

fn grid_to_mat(g: &FeatureGrid) -> Mat {
    Mat::from_shape_vec((g.cells(), g.channels), g.data.clone()).expect("grid length matches its shape")
}

impl<'p> Graph<'p> {
    pub fn new(params: &'p ModelParams) -> Self {
        let mut tape = Tape::new();
        let param_vars = params.tensors.iter().map(|t| tape.leaf(t.clone())).collect();
        Self { tape, params, param_vars }
    }

    fn p(&self, idx: usize) -> Var {
        self.param_vars[idx]
    }

    fn linear(&mut self, x: Var, w: usize, b: usize) -> Var {
        let h = self.tape.matmul(x, self.p(w));
        self.tape.add_row(h, self.p(b))
    }

    fn attend(&mut self, queries: Var, keys: Var, a: AttnIdx) -> Var {
        let q = self.tape.matmul(queries, self.p(a.q));
        let k = self.tape.matmul(keys, self.p(a.k));
        let v = self.tape.matmul(keys, self.p(a.v));
        let logits = self.tape.matmul_bt(q, k);
        let scaled = self.tape.scale(logits, 1.0 / (self.params.config.d_model as f64).sqrt());
        let weights = self.tape.softmax_rows(scaled);
        let mixed = self.tape.matmul(weights, v);
        self.tape.matmul(mixed, self.p(a.o))
    }

    fn ffn(&mut self, x: Var, f: FfnIdx) -> Var {
        let h = self.linear(x, f.w1, f.b1);
        let h = self.tape.relu(h);
        self.linear(h, f.w2, f.b2)
    }

    fn check_grid(&self, g: &FeatureGrid) -> Result<(), ToyNetError> {
        let c = &self.params.config;
        if (g.height, g.width, g.channels) != (c.grid_h, c.grid_w, c.in_channels) {
            return Err(ToyNetError::Shape(format!(
                "grid {}x{}x{} does not match model {}x{}x{}",
                g.height, g.width, g.channels, c.grid_h, c.grid_w, c.in_channels
            )));
        }
        Ok(())
    }

    /// Position-coded, frame-tagged tokens of both frames before attention.
    pub fn tokens(&mut self, curr: &FeatureGrid, prev: &FeatureGrid) -> Result<Var, ToyNetError> {
        self.check_grid(curr)?;
        self.check_grid(prev)?;
        let c = self.params.config;
        let pe = self.tape.leaf(position_encoding(c.grid_h, c.grid_w, c.d_model));
        let l = self.params.layout.clone();
        let mut halves = Vec::with_capacity(2);
        for (frame, g) in [curr, prev].into_iter().enumerate() {
            let x = self.tape.leaf(grid_to_mat(g));
            let proj = self.linear(x, l.in_w, l.in_b);
            let placed = self.tape.add(proj, pe);
            let offset = self.tape.select_rows(self.p(l.frame_embed), &vec![frame; c.cells()]);
            halves.push(self.tape.add(placed, offset));
        }
        Ok(self.tape.concat_rows(&halves))
    }

    /// Memory of `2 * cells` tokens shared by both decoders.
    pub fn encode(&mut self, curr: &FeatureGrid, prev: &FeatureGrid) -> Result<Var, ToyNetError> {
        let mut x = self.tokens(curr, prev)?;
        for layer in self.params.layout.enc.clone() {
            let a = self.attend(x, x, layer.attn);
            x = self.tape.add(x, a);
            let f = self.ffn(x, layer.ffn);
            x = self.tape.add(x, f);
        }
        Ok(x)
    }

    fn decode_with(&mut self, queries: Var, memory: Var, layers: &[DecLayerIdx]) -> DecodeVars {
        let mut x = queries;
        for layer in layers {
            let s = self.attend(x, x, layer.self_attn);
            x = self.tape.add(x, s);
            let c = self.attend(x, memory, layer.cross_attn);
            x = self.tape.add(x, c);
            let f = self.ffn(x, layer.ffn);
            x = self.tape.add(x, f);
        }
        let l = self.params.layout.clone();
        let h = self.linear(x, l.box_w1, l.box_b1);
        let h = self.tape.relu(h);
        let raw = self.linear(h, l.box_w2, l.box_b2);
        let boxes = self.tape.sigmoid(raw);
        let logits = self.linear(x, l.cls_w, l.cls_b);
        let probs = self.tape.sigmoid(logits);
        DecodeVars { boxes, probs, features: x }
    }

    /// Detection decoder over the learned object queries.
    pub fn decode_objects(&mut self, memory: Var) -> DecodeVars {
        let q = self.p(self.params.layout.queries);
        let layers = self.params.layout.det_dec.clone();
        self.decode_with(q, memory, &layers)
    }

    /// Tracking decoder over track queries (`n x d`, any `n`).
    pub fn decode_tracks(&mut self, track_queries: &Mat, memory: Var) -> Result<DecodeVars, ToyNetError> {
        if track_queries.ncols() != self.params.config.d_model {
            return Err(ToyNetError::Shape(format!("track queries have {} columns, model uses {}", track_queries.ncols(), self.params.config.d_model)));
        }
        let q = self.tape.leaf(track_queries.clone());
        let layers = self.params.layout.track_dec.clone();
        Ok(self.decode_with(q, memory, &layers))
    }

    /// Parameter gradients, zero where the seeds do not reach.
    pub fn param_grads(&self, seeds: &[(Var, Mat)]) -> Vec<Mat> {
        let mut grads = self.tape.backward(seeds);
        self.param_vars
            .iter()
            .zip(&self.params.tensors)
            .map(|(v, t)| grads[v.0].take().unwrap_or_else(|| Mat::zeros(t.raw_dim())))
            .collect()
    }
}

/// Plain decoder output.
#[derive(Debug, Clone, PartialEq)]
pub struct DecodeOut {
    pub boxes: Vec<CenterBox>,
    pub probs: Vec<Vec<f64>>,
    pub features: Mat,
}

impl DecodeOut {
    pub fn read(tape: &Tape, v: &DecodeVars) -> Self {
        let b = tape.value(v.boxes);
        let p = tape.value(v.probs);
        Self {
            boxes: b.rows().into_iter().map(|r| CenterBox::new(r[0], r[1], r[2], r[3])).collect(),
            probs: p.rows().into_iter().map(|r| r.to_vec()).collect(),
            features: tape.value(v.features).clone(),
        }
    }

    pub fn len(&self) -> usize {
        self.boxes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.boxes.is_empty()
    }

    pub fn feature(&self, i: usize) -> Vec<f64> {
        self.features.index_axis(Axis(0), i).to_vec()
    }
}

/// Both decoders on one frame pair.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameForward {
    pub memory: Mat,
    pub detections: DecodeOut,
    pub tracks: DecodeOut,
}

impl ModelParams {
    /// Encodes `(curr, prev)` once and runs both decoders on that memory.
    pub fn forward_frame(&self, curr: &FeatureGrid, prev: &FeatureGrid, track_queries: &Mat) -> Result<FrameForward, ToyNetError> {
        let mut g = Graph::new(self);
        let memory = g.encode(curr, prev)?;
        let det = g.decode_objects(memory);
        let tracks = g.decode_tracks(track_queries, memory)?;
        Ok(FrameForward {
            memory: g.tape.value(memory).clone(),
            detections: DecodeOut::read(&g.tape, &det),
            tracks: DecodeOut::read(&g.tape, &tracks),
        })
    }

    pub fn encode(&self, curr: &FeatureGrid, prev: &FeatureGrid) -> Result<Mat, ToyNetError> {
        let mut g = Graph::new(self);
        let m = g.encode(curr, prev)?;
        Ok(g.tape.value(m).clone())
    }

    pub fn decode_objects(&self, memory: &Mat) -> DecodeOut {
        let mut g = Graph::new(self);
        let m = g.tape.leaf(memory.clone());
        let d = g.decode_objects(m);
        DecodeOut::read(&g.tape, &d)
    }

    pub fn decode_tracks(&self, track_queries: &Mat, memory: &Mat) -> Result<DecodeOut, ToyNetError> {
        let mut g = Graph::new(self);
        let m = g.tape.leaf(memory.clone());
        let d = g.decode_tracks(track_queries, m)?;
        Ok(DecodeOut::read(&g.tape, &d))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid(cfg: &ModelConfig, seed: u64) -> FeatureGrid {
        let mut rng = SeededRng::new(seed);
        let mut g = FeatureGrid::zeros(cfg.grid_h, cfg.grid_w, cfg.in_channels);
        g.data.iter_mut().for_each(|v| *v = rng.uniform(-1.0, 1.0));
        g
    }

    #[test]
    fn attention_single_key_returns_its_value() {
        let q = Mat::from_shape_vec((2, 3), vec![1.0, -2.0, 0.5, 3.0, 0.0, 1.0]).unwrap();
        let k = Mat::from_shape_vec((1, 3), vec![0.3, 0.1, -0.7]).unwrap();
        let v = Mat::from_shape_vec((1, 3), vec![4.0, 5.0, 6.0]).unwrap();
        let out = attention(&q, &k, &v).unwrap();
        for row in out.rows() {
            assert_eq!(row.to_vec(), vec![4.0, 5.0, 6.0]);
        }
    }

    #[test]
    fn attention_uniform_weights_average_values() {
        let q = Mat::from_shape_vec((1, 2), vec![1.0, 0.0]).unwrap();
        let k = Mat::from_shape_vec((3, 2), vec![0.0, 1.0, 0.0, -2.0, 0.0, 5.0]).unwrap();
        let v = Mat::from_shape_vec((3, 2), vec![1.0, 2.0, 3.0, 4.0, 8.0, 0.0]).unwrap();
        let out = attention(&q, &k, &v).unwrap();
        assert!((out[[0, 0]] - 4.0).abs() < 1e-12 && (out[[0, 1]] - 2.0).abs() < 1e-12);
    }

    #[test]
    fn attention_matches_double_loop() {
        let mut rng = SeededRng::new(3);
        let mut m = |r, c| Mat::from_shape_fn((r, c), |_| rng.uniform(-2.0, 2.0));
        let (q, k, v) = (m(3, 4), m(5, 4), m(5, 4));
        let out = attention(&q, &k, &v).unwrap();
        for i in 0..3 {
            let logits: Vec<f64> = (0..5).map(|j| (0..4).map(|c| q[[i, c]] * k[[j, c]]).sum::<f64>() / 2.0).collect();
            let z: f64 = logits.iter().map(|l| l.exp()).sum();
            let w: Vec<f64> = logits.iter().map(|l| l.exp() / z).collect();
            assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-9);
            for c in 0..4 {
                let expected: f64 = (0..5).map(|j| w[j] * v[[j, c]]).sum();
                assert!((out[[i, c]] - expected).abs() < 1e-9);
            }
        }
        assert!(attention(&q, &m(5, 3), &v).is_err());
        assert!(attention(&q, &k, &m(4, 4)).is_err());
    }

    #[test]
    fn memory_shape_and_zero_input() {
        let cfg = ModelConfig::gradcheck();
        let p = ModelParams::init(cfg, 1).unwrap();
        let zero = FeatureGrid::zeros(cfg.grid_h, cfg.grid_w, cfg.in_channels);
        let mut g = Graph::new(&p);
        let tok = g.tokens(&zero, &zero).unwrap();
        let pe = position_encoding(cfg.grid_h, cfg.grid_w, cfg.d_model);
        let fe = &p.tensors[p.layout.frame_embed];
        let t = g.tape.value(tok);
        assert_eq!(t.dim(), (2 * cfg.cells(), cfg.d_model));
        for r in 0..cfg.cells() {
            for c in 0..cfg.d_model {
                assert_eq!(t[[r, c]], pe[[r, c]] + fe[[0, c]]);
                assert_eq!(t[[cfg.cells() + r, c]], pe[[r, c]] + fe[[1, c]]);
            }
        }
        let m = p.encode(&zero, &zero).unwrap();
        assert_eq!(m.dim(), (2 * cfg.cells(), cfg.d_model));
    }

    #[test]
    fn swapping_frames_only_moves_frame_offsets() {
        let cfg = ModelConfig::gradcheck();
        let p = ModelParams::init(cfg, 2).unwrap();
        let (a, b) = (grid(&cfg, 10), grid(&cfg, 11));
        let mut g = Graph::new(&p);
        let ab = g.tokens(&a, &b).unwrap();
        let ba = g.tokens(&b, &a).unwrap();
        let (ab, ba) = (g.tape.value(ab), g.tape.value(ba));
        let fe = &p.tensors[p.layout.frame_embed];
        let n = cfg.cells();
        for r in 0..n {
            for c in 0..cfg.d_model {
                let shift = fe[[0, c]] - fe[[1, c]];
                assert!((ba[[r, c]] - (ab[[n + r, c]] + shift)).abs() < 1e-12);
                assert!((ba[[n + r, c]] - (ab[[r, c]] - shift)).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn decoder_output_contract() {
        let cfg = ModelConfig::default();
        let p = ModelParams::init(cfg, 4).unwrap();
        let (a, b) = (grid(&cfg, 1), grid(&cfg, 2));
        let empty = Mat::zeros((0, cfg.d_model));
        let out = p.forward_frame(&a, &b, &empty).unwrap();
        assert!(out.tracks.is_empty());
        assert_eq!(out.tracks.features.dim(), (0, cfg.d_model));
        assert_eq!(out.detections.len(), cfg.num_queries);
        for bx in &out.detections.boxes {
            assert!(bx.to_array().iter().all(|v| (0.0..=1.0).contains(v)));
        }
        let tq = out.detections.features.select(Axis(0), &[0, 3, 5]);
        let next = p.forward_frame(&b, &a, &tq).unwrap();
        assert_eq!(next.tracks.len(), 3);
        assert_eq!(next.detections.len(), cfg.num_queries);
        // both decoders read the same memory
        assert_eq!(next.memory, p.encode(&b, &a).unwrap());
        assert_eq!(next.tracks, p.decode_tracks(&tq, &next.memory).unwrap());
        assert_eq!(next.detections, p.decode_objects(&next.memory));
        let again = p.forward_frame(&b, &a, &tq).unwrap();
        assert_eq!(again, next);
    }

    #[test]
    fn shared_decoders_have_fewer_params() {
        let separate = ModelParams::init(ModelConfig::default(), 0).unwrap();
        let shared = ModelParams::init(ModelConfig { share_decoders: true, ..ModelConfig::default() }, 0).unwrap();
        assert!(shared.num_scalars() < separate.num_scalars());
        assert!(ModelParams::init(ModelConfig::gradcheck(), 0).unwrap().num_scalars() <= 5000);
    }

    #[test]
    fn shape_errors() {
        let cfg = ModelConfig::gradcheck();
        let p = ModelParams::init(cfg, 0).unwrap();
        let bad = FeatureGrid::zeros(3, 4, cfg.in_channels);
        let ok = grid(&cfg, 0);
        assert!(p.encode(&bad, &ok).is_err());
        let m = p.encode(&ok, &ok).unwrap();
        assert!(p.decode_tracks(&Mat::zeros((2, cfg.d_model + 1)), &m).is_err());
    }

    #[test]
    fn config_text_round_trip() {
        let cfg = ModelConfig { share_decoders: true, num_queries: 7, ..ModelConfig::default() };
        assert_eq!(ModelConfig::parse(&cfg.to_text()).unwrap(), cfg);
        assert!(ModelConfig::parse("heads = 2").is_err());
        assert!(ModelConfig::parse("d_model = 30").is_err());
    }
}
