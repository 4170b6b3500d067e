//! Two-stage OOD head: a three-layer, width-halving MLP with a sigmoid output,
//! trained from scratch on `(embedding ⊕ box ⊕ logits)` vectors.

use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::io::{read_blob, write_blob, ScanIoError};
use crate::model::{Box3D, Detection, Scan};
use crate::num::Real;
use crate::probe::{probe_scan, ProbeConfig, ProbeError};

#[derive(Debug, Error)]
pub enum HeadError {
    #[error("input width {got} does not match head width {expected}")]
    WidthMismatch { expected: usize, got: usize },
    #[error("input width {0} too small: need at least 4")]
    TooNarrow(usize),
    #[error("training set must contain both labels")]
    DegenerateDataset,
    #[error("invalid training config: {0}")]
    Config(String),
    #[error("model file: {0}")]
    Io(#[from] ScanIoError),
    #[error("model file: {0}")]
    Format(String),
    #[error(transparent)]
    Probe(#[from] ProbeError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
pub enum LossKind {
    Bce,
    #[default]
    Focal,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
pub enum Optimizer {
    Sgd,
    #[default]
    Adam,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub lr0: f64,
    pub poly_power: f64,
    pub loss: LossKind,
    pub focal_gamma: f64,
    pub focal_alpha: f64,
    pub batch_size: usize,
    pub optimizer: Optimizer,
    pub rng_seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 5,
            lr0: 1e-3,
            poly_power: 3.0,
            loss: LossKind::Focal,
            focal_gamma: 2.0,
            focal_alpha: 0.25,
            batch_size: 256,
            optimizer: Optimizer::Adam,
            rng_seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), HeadError> {
        if self.epochs == 0 {
            return Err(HeadError::Config("epochs must be ≥ 1".into()));
        }
        if !(self.lr0 > 0.0) {
            return Err(HeadError::Config("lr0 must be positive".into()));
        }
        if self.batch_size == 0 {
            return Err(HeadError::Config("batch_size must be ≥ 1".into()));
        }
        if !(self.focal_gamma >= 0.0) {
            return Err(HeadError::Config("focal_gamma must be ≥ 0".into()));
        }
        if !(self.focal_alpha > 0.0 && self.focal_alpha <= 1.0) {
            return Err(HeadError::Config("focal_alpha must lie in (0, 1]".into()));
        }
        Ok(())
    }

    /// Polynomial decay `lr0 · (1 − step/total)^power`.
    pub fn learning_rate(&self, step: usize, total: usize) -> f64 {
        if total == 0 {
            return self.lr0;
        }
        let frac = (step.min(total) as f64) / total as f64;
        self.lr0 * (1.0 - frac).powf(self.poly_power)
    }
}

/// One training example for the head.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeadInput<T> {
    pub x: Vec<T>,
    /// 0 = known, 1 = unknown.
    pub y: u8,
}

/// Scales box parameters into unit range before they meet the logits.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoxNormalizer {
    /// Divides cx, cy, cz (the map extent, in meters).
    pub center_scale: f64,
    /// Divides l, w, h.
    pub size_scale: f64,
}

impl Default for BoxNormalizer {
    fn default() -> Self {
        Self { center_scale: 100.0, size_scale: 10.0 }
    }
}

impl BoxNormalizer {
    pub fn apply<T: Real>(&self, b: &Box3D<T>) -> [T; 7] {
        let c = T::lit(self.center_scale);
        let s = T::lit(self.size_scale);
        [b.cx / c, b.cy / c, b.cz / c, b.l / s, b.w / s, b.h / s, b.yaw / T::PI()]
    }
}

/// How detection outputs are laid out into a head input vector.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InputLayout {
    pub embedding_dim: usize,
    pub num_logits: usize,
    pub normalizer: BoxNormalizer,
}

impl InputLayout {
    pub fn width(&self) -> usize {
        self.embedding_dim + 7 + self.num_logits
    }

    /// Range of the embedding segment inside an input vector.
    pub fn embedding_range(&self) -> std::ops::Range<usize> {
        0..self.embedding_dim
    }

    pub fn assemble<T: Real>(&self, embedding: &[T], b: &Box3D<T>, logits: &[T]) -> Result<Vec<T>, HeadError> {
        if embedding.len() != self.embedding_dim {
            return Err(HeadError::WidthMismatch { expected: self.embedding_dim, got: embedding.len() });
        }
        if logits.len() != self.num_logits {
            return Err(HeadError::WidthMismatch { expected: self.num_logits, got: logits.len() });
        }
        let mut x = Vec::with_capacity(self.width());
        x.extend_from_slice(embedding);
        x.extend(self.normalizer.apply(b));
        x.extend_from_slice(logits);
        Ok(x)
    }

    /// Head input for one detection of `scan`; see [`detection_embedding`].
    pub fn input_for<T: Real>(&self, scan: &Scan<T>, det: &Detection<T>, probe: &ProbeConfig) -> Result<Vec<T>, HeadError> {
        let emb = detection_embedding(scan, det, probe)?;
        self.assemble(&emb, &det.bbox, &det.logits)
    }
}

/// Embedding probed from the scan's feature map at the detection center.
/// Scans without the selected map fall back to the detection's own embedding.
pub fn detection_embedding<T: Real>(scan: &Scan<T>, det: &Detection<T>, probe: &ProbeConfig) -> Result<Vec<T>, HeadError> {
    match probe_scan(scan, [det.bbox.cx, det.bbox.cy], probe) {
        Err(ProbeError::MissingMap(_)) if !det.embedding.is_empty() => Ok(det.embedding.clone()),
        r => Ok(r?),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dense<T> {
    pub n_in: usize,
    pub n_out: usize,
    /// `n_out × n_in`, row-major.
    pub weights: Vec<T>,
    pub bias: Vec<T>,
}

impl<T: Real> Dense<T> {
    fn zeros(n_in: usize, n_out: usize) -> Self {
        Self { n_in, n_out, weights: vec![T::zero(); n_in * n_out], bias: vec![T::zero(); n_out] }
    }

    fn forward(&self, x: &[T], out: &mut Vec<T>) {
        out.clear();
        for o in 0..self.n_out {
            let row = &self.weights[o * self.n_in..(o + 1) * self.n_in];
            let mut acc = self.bias[o];
            for (w, v) in row.iter().zip(x) {
                acc = acc + *w * *v;
            }
            out.push(acc);
        }
    }
}

/// Layer widths `d → d/2 → d/4 → 1` for input width `d`.
pub fn halving_widths(d: usize) -> Result<[usize; 4], HeadError> {
    if d < 4 {
        return Err(HeadError::TooNarrow(d));
    }
    Ok([d, d / 2, d / 4, 1])
}

#[derive(Debug, Clone, PartialEq)]
pub struct MlpHead<T> {
    pub layers: [Dense<T>; 3],
}

/// Activations kept from a forward pass for backpropagation.
struct Trace<T> {
    z1: Vec<T>,
    a1: Vec<T>,
    z2: Vec<T>,
    a2: Vec<T>,
    p: T,
}

fn sigmoid<T: Real>(z: T) -> T {
    if z >= T::zero() {
        T::one() / (T::one() + (-z).exp())
    } else {
        let e = z.exp();
        e / (T::one() + e)
    }
}

fn relu_in_place<T: Real>(v: &[T]) -> Vec<T> {
    v.iter().map(|&z| if z > T::zero() { z } else { T::zero() }).collect()
}

impl<T: Real> MlpHead<T> {
    pub fn zeros(input_width: usize) -> Result<Self, HeadError> {
        let [d, h1, h2, o] = halving_widths(input_width)?;
        Ok(Self { layers: [Dense::zeros(d, h1), Dense::zeros(h1, h2), Dense::zeros(h2, o)] })
    }

    /// Uniform `±sqrt(6 / (fan_in + fan_out))` weights, zero biases.
    pub fn init(input_width: usize, rng: &mut impl Rng) -> Result<Self, HeadError> {
        let mut head = Self::zeros(input_width)?;
        for layer in head.layers.iter_mut() {
            let limit = (6.0 / (layer.n_in + layer.n_out) as f64).sqrt();
            for w in layer.weights.iter_mut() {
                *w = T::lit(rng.random_range(-limit..limit));
            }
        }
        Ok(head)
    }

    pub fn input_width(&self) -> usize {
        self.layers[0].n_in
    }

    pub fn widths(&self) -> [usize; 4] {
        [self.layers[0].n_in, self.layers[0].n_out, self.layers[1].n_out, self.layers[2].n_out]
    }

    pub fn num_params(&self) -> usize {
        self.layers.iter().map(|l| l.weights.len() + l.bias.len()).sum()
    }

    fn trace(&self, x: &[T]) -> Trace<T> {
        let mut z1 = Vec::new();
        self.layers[0].forward(x, &mut z1);
        let a1 = relu_in_place(&z1);
        let mut z2 = Vec::new();
        self.layers[1].forward(&a1, &mut z2);
        let a2 = relu_in_place(&z2);
        let mut z3 = Vec::new();
        self.layers[2].forward(&a2, &mut z3);
        Trace { z1, a1, z2, a2, p: sigmoid(z3[0]) }
    }

    /// `p_OOD` for one input vector.
    pub fn forward(&self, x: &[T]) -> Result<T, HeadError> {
        if x.len() != self.input_width() {
            return Err(HeadError::WidthMismatch { expected: self.input_width(), got: x.len() });
        }
        Ok(self.trace(x).p)
    }

    /// Parameters flattened as `[W1, b1, W2, b2, W3, b3]`.
    pub fn params(&self) -> Vec<T> {
        let mut out = Vec::with_capacity(self.num_params());
        for l in &self.layers {
            out.extend_from_slice(&l.weights);
            out.extend_from_slice(&l.bias);
        }
        out
    }

    pub fn set_params(&mut self, flat: &[T]) -> Result<(), HeadError> {
        if flat.len() != self.num_params() {
            return Err(HeadError::Format(format!("expected {} parameters, got {}", self.num_params(), flat.len())));
        }
        let mut at = 0;
        for l in self.layers.iter_mut() {
            let nw = l.weights.len();
            l.weights.copy_from_slice(&flat[at..at + nw]);
            at += nw;
            let nb = l.bias.len();
            l.bias.copy_from_slice(&flat[at..at + nb]);
            at += nb;
        }
        Ok(())
    }

    /// Loss and its gradient w.r.t. every parameter (same layout as [`Self::params`]),
    /// accumulated into `grad`.
    fn backward(&self, x: &[T], y: u8, cfg: &TrainConfig, grad: &mut [T]) -> T {
        let t = self.trace(x);
        let loss_value = loss(t.p, y, cfg);
        let g3 = dloss_dlogit(t.p, y, cfg);

        let [l1, l2, l3] = &self.layers;
        let off_w1 = 0;
        let off_b1 = off_w1 + l1.weights.len();
        let off_w2 = off_b1 + l1.bias.len();
        let off_b2 = off_w2 + l2.weights.len();
        let off_w3 = off_b2 + l2.bias.len();
        let off_b3 = off_w3 + l3.weights.len();

        // layer 3
        for (j, &a) in t.a2.iter().enumerate() {
            grad[off_w3 + j] = grad[off_w3 + j] + g3 * a;
        }
        grad[off_b3] = grad[off_b3] + g3;
        // layer 2
        let g2: Vec<T> = (0..l2.n_out)
            .map(|j| if t.z2[j] > T::zero() { g3 * l3.weights[j] } else { T::zero() })
            .collect();
        for (o, &g) in g2.iter().enumerate() {
            if g == T::zero() {
                continue;
            }
            let row = off_w2 + o * l2.n_in;
            for (i, &a) in t.a1.iter().enumerate() {
                grad[row + i] = grad[row + i] + g * a;
            }
            grad[off_b2 + o] = grad[off_b2 + o] + g;
        }
        // layer 1
        let mut g1 = vec![T::zero(); l1.n_out];
        for (o, &g) in g2.iter().enumerate() {
            if g == T::zero() {
                continue;
            }
            let row = &l2.weights[o * l2.n_in..(o + 1) * l2.n_in];
            for (acc, &w) in g1.iter_mut().zip(row) {
                *acc = *acc + g * w;
            }
        }
        for (o, g) in g1.iter_mut().enumerate() {
            if t.z1[o] <= T::zero() {
                *g = T::zero();
                continue;
            }
            let row = off_w1 + o * l1.n_in;
            for (i, &v) in x.iter().enumerate() {
                grad[row + i] = grad[row + i] + *g * v;
            }
            grad[off_b1 + o] = grad[off_b1 + o] + *g;
        }
        loss_value
    }

    /// Analytic gradient of the loss for a single example.
    pub fn gradient(&self, x: &[T], y: u8, cfg: &TrainConfig) -> Result<Vec<T>, HeadError> {
        if x.len() != self.input_width() {
            return Err(HeadError::WidthMismatch { expected: self.input_width(), got: x.len() });
        }
        let mut g = vec![T::zero(); self.num_params()];
        self.backward(x, y, cfg, &mut g);
        Ok(g)
    }
}

const PROB_EPS: f64 = 1e-7;

fn clamp_p<T: Real>(p: T) -> (T, bool) {
    let eps = T::lit(PROB_EPS);
    if p < eps {
        (eps, true)
    } else if p > T::one() - eps {
        (T::one() - eps, true)
    } else {
        (p, false)
    }
}

/// BCE or focal loss of a predicted probability against a 0/1 label.
pub fn loss<T: Real>(p: T, y: u8, cfg: &TrainConfig) -> T {
    let (p, _) = clamp_p(p);
    let one = T::one();
    match cfg.loss {
        LossKind::Bce => {
            if y == 1 {
                -p.ln()
            } else {
                -(one - p).ln()
            }
        }
        LossKind::Focal => {
            let (pt, alpha_t) = if y == 1 { (p, T::lit(cfg.focal_alpha)) } else { (one - p, one - T::lit(cfg.focal_alpha)) };
            -alpha_t * (one - pt).powf(T::lit(cfg.focal_gamma)) * pt.ln()
        }
    }
}

/// Derivative of [`loss`] w.r.t. the pre-sigmoid logit; zero where the clamp is active.
fn dloss_dlogit<T: Real>(p: T, y: u8, cfg: &TrainConfig) -> T {
    let (_, clamped) = clamp_p(p);
    if clamped {
        return T::zero();
    }
    let one = T::one();
    match cfg.loss {
        LossKind::Bce => p - T::from_u8(y).expect("label"),
        LossKind::Focal => {
            let (pt, alpha_t, sign) = if y == 1 {
                (p, T::lit(cfg.focal_alpha), one)
            } else {
                (one - p, one - T::lit(cfg.focal_alpha), -one)
            };
            let gamma = T::lit(cfg.focal_gamma);
            let q = one - pt;
            // d/dz of −α (1−p_t)^γ ln p_t, using dp_t/dz = ±p_t (1−p_t)
            let focal_term = if cfg.focal_gamma == 0.0 { T::zero() } else { gamma * q.powf(gamma) * pt * pt.ln() };
            sign * alpha_t * (focal_term - q.powf(gamma + one))
        }
    }
}

/// Central finite-difference check of every parameter gradient; returns the
/// largest relative error `|a − n| / max(|a|, |n|, 1e-5)`.
pub fn grad_check<T: Real>(head: &MlpHead<T>, x: &[T], y: u8, cfg: &TrainConfig) -> Result<f64, HeadError> {
    let analytic = head.gradient(x, y, cfg)?;
    let base = head.params();
    let mut probe = head.clone();
    let h = 1e-5;
    let mut worst = 0.0f64;
    for (k, a) in analytic.iter().enumerate() {
        let mut p = base.clone();
        p[k] = base[k] + T::lit(h);
        probe.set_params(&p)?;
        let up = loss(probe.forward(x)?, y, cfg).to_f64_lossy();
        p[k] = base[k] - T::lit(h);
        probe.set_params(&p)?;
        let down = loss(probe.forward(x)?, y, cfg).to_f64_lossy();
        let numeric = (up - down) / (2.0 * h);
        let a = a.to_f64_lossy();
        let denom = a.abs().max(numeric.abs()).max(1e-5);
        worst = worst.max((a - numeric).abs() / denom);
    }
    Ok(worst)
}

/// Per-epoch record of a training run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainLog {
    pub epoch_losses: Vec<f64>,
    pub steps: usize,
}

struct AdamState {
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

/// Mini-batch training from a seeded initialization.
pub fn train<T: Real>(data: &[HeadInput<T>], cfg: &TrainConfig) -> Result<(MlpHead<T>, TrainLog), HeadError> {
    cfg.validate()?;
    let first = data.first().ok_or(HeadError::DegenerateDataset)?;
    let width = first.x.len();
    if let Some(bad) = data.iter().find(|d| d.x.len() != width) {
        return Err(HeadError::WidthMismatch { expected: width, got: bad.x.len() });
    }
    let n_pos = data.iter().filter(|d| d.y == 1).count();
    if n_pos == 0 || n_pos == data.len() {
        return Err(HeadError::DegenerateDataset);
    }

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.rng_seed);
    let mut head = MlpHead::<T>::init(width, &mut rng)?;
    let mut params: Vec<f64> = head.params().iter().map(|v| v.to_f64_lossy()).collect();
    let batches_per_epoch = data.len().div_ceil(cfg.batch_size);
    let total_steps = cfg.epochs * batches_per_epoch;
    let mut adam = AdamState { m: vec![0.0; params.len()], v: vec![0.0; params.len()], t: 0 };
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut grad = vec![T::zero(); params.len()];
    let mut epoch_losses = Vec::with_capacity(cfg.epochs);
    let mut step = 0usize;

    for _ in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        for batch in order.chunks(cfg.batch_size) {
            grad.iter_mut().for_each(|g| *g = T::zero());
            for &i in batch {
                epoch_loss += head.backward(&data[i].x, data[i].y, cfg, &mut grad).to_f64_lossy();
            }
            let scale = 1.0 / batch.len() as f64;
            let lr = cfg.learning_rate(step, total_steps);
            match cfg.optimizer {
                Optimizer::Sgd => {
                    for (p, g) in params.iter_mut().zip(&grad) {
                        *p -= lr * g.to_f64_lossy() * scale;
                    }
                }
                Optimizer::Adam => {
                    const B1: f64 = 0.9;
                    const B2: f64 = 0.999;
                    const EPS: f64 = 1e-8;
                    adam.t += 1;
                    let c1 = 1.0 - B1.powi(adam.t);
                    let c2 = 1.0 - B2.powi(adam.t);
                    for ((p, g), (m, v)) in params.iter_mut().zip(&grad).zip(adam.m.iter_mut().zip(adam.v.iter_mut())) {
                        let g = g.to_f64_lossy() * scale;
                        *m = B1 * *m + (1.0 - B1) * g;
                        *v = B2 * *v + (1.0 - B2) * g * g;
                        *p -= lr * (*m / c1) / ((*v / c2).sqrt() + EPS);
                    }
                }
            }
            let cast: Vec<T> = params.iter().map(|&v| T::lit(v)).collect();
            head.set_params(&cast)?;
            step += 1;
        }
        epoch_losses.push(epoch_loss / data.len() as f64);
    }
    Ok((head, TrainLog { epoch_losses, steps: step }))
}

/// Everything needed to reproduce inference: weights plus the input recipe.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainedHead {
    pub head: MlpHead<f64>,
    pub layout: InputLayout,
    pub probe: ProbeConfig,
    pub train: TrainConfig,
    pub provenance: String,
}

#[derive(Serialize, Deserialize)]
struct HeadDoc {
    widths: [usize; 4],
    rng_seed: u64,
    layout: InputLayout,
    probe: ProbeConfig,
    train: TrainConfig,
    provenance: String,
    weights_blob: String,
}

impl TrainedHead {
    /// Writes `<path>` (JSON) and `<stem>.weights.bin` next to it.
    pub fn save(&self, path: &Path) -> Result<(), HeadError> {
        let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or("head");
        let blob = format!("{stem}.weights.bin");
        let base = path.parent().unwrap_or(Path::new("."));
        let params = self.head.params();
        write_blob(&base.join(&blob), &[params.len()], params.iter().map(|&v| v as f32))?;
        let doc = HeadDoc {
            widths: self.head.widths(),
            rng_seed: self.train.rng_seed,
            layout: self.layout,
            probe: self.probe,
            train: self.train,
            provenance: self.provenance.clone(),
            weights_blob: blob,
        };
        let text = serde_json::to_string_pretty(&doc).map_err(|e| HeadError::Format(e.to_string()))?;
        std::fs::write(path, text + "\n").map_err(|e| HeadError::Io(ScanIoError::Io { path: path.to_path_buf(), source: e }))
    }

    pub fn load(path: &Path) -> Result<Self, HeadError> {
        let text = std::fs::read_to_string(path).map_err(|e| HeadError::Io(ScanIoError::Io { path: path.to_path_buf(), source: e }))?;
        let doc: HeadDoc = serde_json::from_str(&text).map_err(|e| HeadError::Format(e.to_string()))?;
        if doc.widths != halving_widths(doc.widths[0])? {
            return Err(HeadError::Format(format!("widths {:?} violate the halving rule", doc.widths)));
        }
        if doc.layout.width() != doc.widths[0] {
            return Err(HeadError::Format("input layout width differs from head width".into()));
        }
        let base = path.parent().unwrap_or(Path::new("."));
        let (_, values) = read_blob(&base.join(&doc.weights_blob))?;
        let mut head = MlpHead::zeros(doc.widths[0])?;
        head.set_params(&values.iter().map(|&v| f64::from(v)).collect::<Vec<_>>())?;
        Ok(Self { head, layout: doc.layout, probe: doc.probe, train: doc.train, provenance: doc.provenance })
    }

    /// Rounds weights to the `f32` precision the model file stores.
    pub fn quantized(mut self) -> Self {
        let p: Vec<f64> = self.head.params().iter().map(|&v| f64::from(v as f32)).collect();
        self.head.set_params(&p).expect("same layout");
        self
    }
}
