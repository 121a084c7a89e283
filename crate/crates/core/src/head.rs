//! Supervised fake/real classifier over concatenated visual and audio
//! embeddings: a two-hidden-layer ReLU MLP ending in a 2-way log-softmax,
//! trained with Adam under a cosine-decayed learning rate.

use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::dataio;
use crate::error::{DataError, Error, HeadError};
use crate::losses::{Modality, ModalityEmbedding};
use crate::par::{self, Execution};
use crate::rng;

const ENTITY_INIT: u64 = 0x1417;
const ENTITY_EPOCH: u64 = 0x1418;

/// Output index of the fake class.
pub const FAKE: usize = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct CrossModalVector {
    pub vector: Vec<f32>,
}

/// `[z_v || z_a]`, or `z_v` alone when audio is absent.
pub fn concat_modalities(zv: &ModalityEmbedding, za: Option<&ModalityEmbedding>) -> Result<CrossModalVector, HeadError> {
    let expect = |z: &ModalityEmbedding, m: Modality| {
        if z.modality == m {
            Ok(())
        } else {
            Err(HeadError::WrongModality {
                expected: format!("{m:?}"),
                found: format!("{:?}", z.modality),
            })
        }
    };
    expect(zv, Modality::Visual)?;
    let mut vector = zv.vector.clone();
    if let Some(za) = za {
        expect(za, Modality::Audio)?;
        vector.extend_from_slice(&za.vector);
    }
    Ok(CrossModalVector { vector })
}

#[derive(Debug, Clone, PartialEq)]
pub struct LabeledExample {
    pub x: CrossModalVector,
    /// 0 = real, 1 = fake.
    pub y: u8,
}

impl LabeledExample {
    pub fn new(x: Vec<f32>, y: u8) -> Result<Self, HeadError> {
        if y > 1 {
            return Err(HeadError::BadLabel(y));
        }
        Ok(LabeledExample { x: CrossModalVector { vector: x }, y })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Linear {
    pub d_in: usize,
    pub d_out: usize,
    /// Row-major `d_out x d_in`.
    pub weight: Vec<f32>,
    pub bias: Vec<f32>,
}

impl Linear {
    /// Uniform in `+-sqrt(6 / fan_in)`, zero bias.
    fn he_uniform(d_in: usize, d_out: usize, rng: &mut impl Rng) -> Self {
        let bound = (6.0 / d_in as f64).sqrt();
        Linear {
            d_in,
            d_out,
            weight: (0..d_in * d_out)
                .map(|_| rng.random_range(-bound..bound) as f32)
                .collect(),
            bias: vec![0.0; d_out],
        }
    }

    fn zeros(d_in: usize, d_out: usize) -> Self {
        Linear {
            d_in,
            d_out,
            weight: vec![0.0; d_in * d_out],
            bias: vec![0.0; d_out],
        }
    }

    fn apply(&self, x: &[f64]) -> Vec<f64> {
        self.weight
            .chunks_exact(self.d_in)
            .zip(&self.bias)
            .map(|(row, b)| *b as f64 + row.iter().zip(x).map(|(w, v)| *w as f64 * v).sum::<f64>())
            .collect()
    }
}

/// `Linear -> ReLU -> Linear -> ReLU -> Linear(2)`.
#[derive(Debug, Clone, PartialEq)]
pub struct HeadParams {
    pub layers: [Linear; 3],
}

impl HeadParams {
    pub fn init(d_in: usize, hidden: [usize; 2], seed: u64) -> Self {
        let mut rng = rng::stream(seed, ENTITY_INIT, 0);
        let l1 = Linear::he_uniform(d_in, hidden[0], &mut rng);
        let l2 = Linear::he_uniform(hidden[0], hidden[1], &mut rng);
        let l3 = Linear::he_uniform(hidden[1], 2, &mut rng);
        HeadParams { layers: [l1, l2, l3] }
    }

    pub fn zeros(d_in: usize, hidden: [usize; 2]) -> Self {
        HeadParams {
            layers: [
                Linear::zeros(d_in, hidden[0]),
                Linear::zeros(hidden[0], hidden[1]),
                Linear::zeros(hidden[1], 2),
            ],
        }
    }

    pub fn d_in(&self) -> usize {
        self.layers[0].d_in
    }

    pub fn hidden(&self) -> [usize; 2] {
        [self.layers[0].d_out, self.layers[1].d_out]
    }

    fn check(&self, x: &[f32]) -> Result<(), HeadError> {
        if x.len() != self.d_in() {
            return Err(HeadError::DimensionMismatch {
                expected: self.d_in(),
                found: x.len(),
            });
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HeadOutput {
    /// `[real, fake]`
    pub logits: [f32; 2],
    /// Softmax probability of the fake class.
    pub score: f32,
}

struct Activations {
    x: Vec<f64>,
    h1: Vec<f64>,
    h2: Vec<f64>,
    logits: [f64; 2],
}

fn relu(v: Vec<f64>) -> Vec<f64> {
    v.into_iter().map(|x| x.max(0.0)).collect()
}

fn run(params: &HeadParams, x: &[f32]) -> Activations {
    let x: Vec<f64> = x.iter().map(|v| *v as f64).collect();
    let h1 = relu(params.layers[0].apply(&x));
    let h2 = relu(params.layers[1].apply(&h1));
    let out = params.layers[2].apply(&h2);
    Activations {
        x,
        h1,
        h2,
        logits: [out[0], out[1]],
    }
}

fn log_softmax(l: [f64; 2]) -> [f64; 2] {
    let m = l[0].max(l[1]);
    let lse = m + ((l[0] - m).exp() + (l[1] - m).exp()).ln();
    [l[0] - lse, l[1] - lse]
}

pub fn forward(params: &HeadParams, x: &CrossModalVector) -> Result<HeadOutput, HeadError> {
    params.check(&x.vector)?;
    let a = run(params, &x.vector);
    Ok(HeadOutput {
        logits: [a.logits[0] as f32, a.logits[1] as f32],
        score: score_from_logits(a.logits),
    })
}

/// `exp(log_softmax(logits)[fake])`.
pub fn score_from_logits(logits: [f64; 2]) -> f32 {
    log_softmax(logits)[FAKE].exp() as f32
}

/// Binary cross-entropy `-(y ln s + (1-y) ln(1-s))` and its derivative in `s`.
pub fn bce_loss(score: f32, y: u8) -> Result<(f64, f64), HeadError> {
    if !(score > 0.0 && score < 1.0) {
        return Err(HeadError::ScoreOutOfRange(score));
    }
    if y > 1 {
        return Err(HeadError::BadLabel(y));
    }
    let (s, y) = (score as f64, y as f64);
    let loss = -(y * s.ln() + (1.0 - y) * (1.0 - s).ln());
    Ok((loss, -y / s + (1.0 - y) / (1.0 - s)))
}

/// Gradients shaped like [`HeadParams`], in f64.
#[derive(Debug, Clone, PartialEq)]
pub struct HeadGrads {
    pub weight: [Vec<f64>; 3],
    pub bias: [Vec<f64>; 3],
}

impl HeadGrads {
    pub fn zeros_like(p: &HeadParams) -> Self {
        HeadGrads {
            weight: p.layers.each_ref().map(|l| vec![0.0; l.weight.len()]),
            bias: p.layers.each_ref().map(|l| vec![0.0; l.bias.len()]),
        }
    }

    pub fn add(&mut self, other: &HeadGrads) {
        for (a, b) in self.weight.iter_mut().chain(&mut self.bias).zip(other.weight.iter().chain(&other.bias)) {
            a.iter_mut().zip(b).for_each(|(x, y)| *x += y);
        }
    }

    pub fn scale(&mut self, s: f64) {
        self.weight
            .iter_mut()
            .chain(&mut self.bias)
            .flatten()
            .for_each(|x| *x *= s);
    }
}

/// Per-example loss `-log_softmax(logits)[y]` and its exact gradients.
pub fn backward(params: &HeadParams, ex: &LabeledExample) -> Result<(f64, HeadGrads), HeadError> {
    params.check(&ex.x.vector)?;
    if ex.y > 1 {
        return Err(HeadError::BadLabel(ex.y));
    }
    let a = run(params, &ex.x.vector);
    let logp = log_softmax(a.logits);
    let y = ex.y as usize;
    let dlogits = [logp[0].exp() - (y == 0) as u8 as f64, logp[1].exp() - (y == 1) as u8 as f64];

    let mut g = HeadGrads::zeros_like(params);
    let back = |layer: &Linear, dout: &[f64], input: &[f64], gw: &mut [f64], gb: &mut [f64]| {
        let mut din = vec![0.0; layer.d_in];
        for (o, d) in dout.iter().enumerate() {
            gb[o] = *d;
            if *d == 0.0 {
                continue;
            }
            let row = &layer.weight[o * layer.d_in..(o + 1) * layer.d_in];
            let grow = &mut gw[o * layer.d_in..(o + 1) * layer.d_in];
            for i in 0..layer.d_in {
                grow[i] = d * input[i];
                din[i] += d * row[i] as f64;
            }
        }
        din
    };
    let [gw0, gw1, gw2] = &mut g.weight;
    let [gb0, gb1, gb2] = &mut g.bias;
    let mut dh2 = back(&params.layers[2], &dlogits, &a.h2, gw2, gb2);
    dh2.iter_mut().zip(&a.h2).for_each(|(d, h)| if *h <= 0.0 { *d = 0.0 });
    let mut dh1 = back(&params.layers[1], &dh2, &a.h1, gw1, gb1);
    dh1.iter_mut().zip(&a.h1).for_each(|(d, h)| if *h <= 0.0 { *d = 0.0 });
    back(&params.layers[0], &dh1, &a.x, gw0, gb0);
    Ok((-logp[y], g))
}

/// Summed loss and gradients over `batch`, reduced in batch order.
pub fn batch_gradient(
    params: &HeadParams,
    batch: &[&LabeledExample],
    exec: Execution,
) -> Result<(f64, HeadGrads), HeadError> {
    let parts = par::try_map_ordered(exec, batch, |ex| backward(params, ex))?;
    let mut total = HeadGrads::zeros_like(params);
    let mut loss = 0.0;
    for (l, g) in &parts {
        loss += l;
        total.add(g);
    }
    Ok((loss, total))
}

#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState {
    pub step: usize,
    pub m: HeadGrads,
    pub v: HeadGrads,
    pub lr0: f64,
    pub alpha: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub total_steps: usize,
}

impl OptimizerState {
    pub fn new(params: &HeadParams, cfg: &HeadConfig, total_steps: usize) -> Self {
        OptimizerState {
            step: 0,
            m: HeadGrads::zeros_like(params),
            v: HeadGrads::zeros_like(params),
            lr0: cfg.lr0,
            alpha: cfg.alpha,
            beta1: cfg.beta1,
            beta2: cfg.beta2,
            eps: cfg.eps,
            total_steps,
        }
    }

    /// Cosine decay from `lr0` at `t = 0` to `alpha * lr0` at `t = total_steps`.
    pub fn lr(&self, t: usize) -> f64 {
        if self.total_steps == 0 {
            return self.lr0;
        }
        let frac = t.min(self.total_steps) as f64 / self.total_steps as f64;
        let c = (1.0 + (std::f64::consts::PI * frac).cos()) / 2.0;
        self.lr0 * (1.0 - (1.0 - self.alpha) * (1.0 - c))
    }

    /// One Adam update with the current step's learning rate, which is returned.
    /// With `last_layer_only` the hidden layers stay fixed.
    pub fn apply(&mut self, params: &mut HeadParams, g: &HeadGrads, last_layer_only: bool) -> f64 {
        let lr = self.lr(self.step);
        self.step += 1;
        let t = self.step as i32;
        let (c1, c2) = (1.0 - self.beta1.powi(t), 1.0 - self.beta2.powi(t));
        let first = if last_layer_only { 2 } else { 0 };
        for (k, layer) in params.layers.iter_mut().enumerate().skip(first) {
            for (p, m, v, g) in [
                (&mut layer.weight, &mut self.m.weight[k], &mut self.v.weight[k], &g.weight[k]),
                (&mut layer.bias, &mut self.m.bias[k], &mut self.v.bias[k], &g.bias[k]),
            ] {
                for i in 0..p.len() {
                    m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * g[i];
                    v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * g[i] * g[i];
                    let step = lr * (m[i] / c1) / ((v[i] / c2).sqrt() + self.eps);
                    p[i] = (p[i] as f64 - step) as f32;
                }
            }
        }
        lr
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HeadConfig {
    pub hidden: [usize; 2],
    pub epochs: usize,
    pub batch_size: usize,
    pub lr0: f64,
    pub alpha: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub seed: u64,
    /// Train only the output layer (linear probing).
    pub freeze_hidden: bool,
    /// Concatenate audio embeddings when available.
    pub use_audio: bool,
}

impl Default for HeadConfig {
    fn default() -> Self {
        HeadConfig {
            hidden: [512, 128],
            epochs: 6,
            batch_size: 2,
            lr0: 1e-5,
            alpha: 0.95,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            seed: 0,
            freeze_hidden: false,
            use_audio: true,
        }
    }
}

impl HeadConfig {
    pub fn validate(&self) -> Result<(), String> {
        if self.hidden.contains(&0) || self.epochs == 0 || self.batch_size == 0 {
            return Err("hidden widths, epochs and batch_size must be positive".into());
        }
        if !(self.lr0 > 0.0) || !(0.0..=1.0).contains(&self.alpha) {
            return Err(format!("bad schedule lr0={} alpha={}", self.lr0, self.alpha));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) || !(self.eps > 0.0) {
            return Err("bad Adam constants".into());
        }
        Ok(())
    }
}

/// One epoch's visiting order: every example once, plus minority-class
/// examples repeated (cycling through a shuffled copy) until both classes
/// are equally represented, then shuffled.
pub fn balanced_order(labels: &[u8], rng: &mut impl Rng) -> Vec<usize> {
    let (mut real, mut fake): (Vec<usize>, Vec<usize>) = (0..labels.len()).partition(|&i| labels[i] == 0);
    if real.len() < fake.len() {
        std::mem::swap(&mut real, &mut fake);
    }
    let (major, mut minor) = (real, fake);
    let mut order = major.clone();
    order.extend_from_slice(&minor);
    if !minor.is_empty() {
        minor.shuffle(rng);
        order.extend(minor.iter().cycle().take(major.len() - minor.len()));
    }
    order.shuffle(rng);
    order
}

fn steps_per_epoch(examples: &[LabeledExample], batch: usize) -> usize {
    let fake = examples.iter().filter(|e| e.y == 1).count();
    let major = fake.max(examples.len() - fake);
    let per_epoch = if fake == 0 || fake == examples.len() { examples.len() } else { 2 * major };
    per_epoch.div_ceil(batch)
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutcome {
    pub params: HeadParams,
    /// Learning rate used by each update, in order.
    pub lr_trace: Vec<f64>,
    /// Mean loss over each epoch's visited examples.
    pub epoch_loss: Vec<f64>,
}

pub fn train(examples: &[LabeledExample], cfg: &HeadConfig, exec: Execution) -> Result<TrainOutcome, HeadError> {
    let first = examples.first().ok_or(HeadError::EmptyDataset)?;
    let d_in = first.x.vector.len();
    let mut params = HeadParams::init(d_in, cfg.hidden, cfg.seed);
    for ex in examples {
        params.check(&ex.x.vector)?;
        if ex.y > 1 {
            return Err(HeadError::BadLabel(ex.y));
        }
    }
    let labels: Vec<u8> = examples.iter().map(|e| e.y).collect();
    let updates = cfg.epochs * steps_per_epoch(examples, cfg.batch_size);
    // the schedule reaches its floor on the last update
    let mut opt = OptimizerState::new(&params, cfg, updates.saturating_sub(1));
    let mut lr_trace = Vec::with_capacity(updates);
    let mut epoch_loss = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        let order = balanced_order(&labels, &mut rng::stream(cfg.seed, ENTITY_EPOCH, epoch as u64));
        let mut sum = 0.0;
        for chunk in order.chunks(cfg.batch_size) {
            let batch: Vec<&LabeledExample> = chunk.iter().map(|&i| &examples[i]).collect();
            let (loss, mut g) = batch_gradient(&params, &batch, exec)?;
            g.scale(1.0 / batch.len() as f64);
            sum += loss;
            lr_trace.push(opt.apply(&mut params, &g, cfg.freeze_hidden));
        }
        epoch_loss.push(sum / order.len() as f64);
        log::debug!("epoch {epoch}: loss {:.6}", epoch_loss[epoch]);
    }
    Ok(TrainOutcome {
        params,
        lr_trace,
        epoch_loss,
    })
}

/// Mean loss and fake-class scores over `examples` without updating.
pub fn evaluate(params: &HeadParams, examples: &[LabeledExample], exec: Execution) -> Result<(f64, Vec<f32>), HeadError> {
    if examples.is_empty() {
        return Err(HeadError::EmptyDataset);
    }
    let out = par::try_map_ordered(exec, examples, |ex| {
        params.check(&ex.x.vector)?;
        let a = run(params, &ex.x.vector);
        Ok::<_, HeadError>((-log_softmax(a.logits)[ex.y as usize], score_from_logits(a.logits)))
    })?;
    let loss = out.iter().map(|o| o.0).sum::<f64>() / examples.len() as f64;
    Ok((loss, out.into_iter().map(|o| o.1).collect()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BundleIndex {
    pub d_in: usize,
    pub hidden: [usize; 2],
    pub use_audio: bool,
    pub layers: Vec<BundleLayer>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BundleLayer {
    pub weight: String,
    pub bias: String,
}

/// Writes `index.json` plus one tensor file per weight and bias.
pub fn save_bundle(dir: &Path, params: &HeadParams, use_audio: bool) -> Result<(), Error> {
    std::fs::create_dir_all(dir).map_err(|source| DataError::Io {
        path: dir.to_path_buf(),
        source,
    })?;
    let mut layers = Vec::new();
    for (k, l) in params.layers.iter().enumerate() {
        let (w, b) = (format!("layer{k}_weight.ft"), format!("layer{k}_bias.ft"));
        dataio::write_tensor(&dir.join(&w), &[l.d_out, l.d_in], &l.weight)?;
        dataio::write_tensor(&dir.join(&b), &[l.d_out], &l.bias)?;
        layers.push(BundleLayer { weight: w, bias: b });
    }
    let index = BundleIndex {
        d_in: params.d_in(),
        hidden: params.hidden(),
        use_audio,
        layers,
    };
    dataio::write_json(&dir.join("index.json"), &index)?;
    Ok(())
}

pub fn load_bundle(dir: &Path) -> Result<(HeadParams, BundleIndex), Error> {
    let index: BundleIndex = dataio::read_json(&dir.join("index.json"))?;
    let widths = [index.d_in, index.hidden[0], index.hidden[1], 2];
    if index.layers.len() != 3 {
        return Err(HeadError::DimensionMismatch {
            expected: 3,
            found: index.layers.len(),
        }
        .into());
    }
    let mut layers = Vec::with_capacity(3);
    for (k, entry) in index.layers.iter().enumerate() {
        let (d_in, d_out) = (widths[k], widths[k + 1]);
        let w = dataio::read_tensor(&dir.join(&entry.weight))?;
        let b = dataio::read_tensor(&dir.join(&entry.bias))?;
        if w.dims != [d_out, d_in] || b.dims != [d_out] {
            return Err(HeadError::DimensionMismatch {
                expected: d_out * d_in,
                found: w.data.len(),
            }
            .into());
        }
        layers.push(Linear {
            d_in,
            d_out,
            weight: w.data,
            bias: b.data,
        });
    }
    let layers: [Linear; 3] = layers.try_into().expect("three layers");
    Ok((HeadParams { layers }, index))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn ex(x: Vec<f32>, y: u8) -> LabeledExample {
        LabeledExample::new(x, y).unwrap()
    }

    fn emb(m: Modality, d: usize) -> ModalityEmbedding {
        ModalityEmbedding { modality: m, vector: vec![0.5; d] }
    }

    #[test]
    fn concat_dimensions() {
        let v = emb(Modality::Visual, 2048);
        let a = emb(Modality::Audio, 2048);
        assert_eq!(concat_modalities(&v, Some(&a)).unwrap().vector.len(), 4096);
        assert_eq!(concat_modalities(&emb(Modality::Visual, 4096), Some(&a)).unwrap().vector.len(), 6144);
        assert_eq!(concat_modalities(&v, None).unwrap().vector.len(), 2048);
        assert!(matches!(concat_modalities(&a, None), Err(HeadError::WrongModality { .. })));
        assert!(matches!(concat_modalities(&v, Some(&v)), Err(HeadError::WrongModality { .. })));
    }

    #[test]
    fn scores_from_logits() {
        assert_eq!(score_from_logits([0.0, 0.0]), 0.5);
        assert!((score_from_logits([0.0, 3f64.ln()]) - 0.75).abs() < 1e-7);
        for l in [[800.0, -800.0], [-800.0, 800.0]] {
            let s = score_from_logits(l);
            assert!((0.0..=1.0).contains(&s));
        }
    }

    #[test]
    #[allow(clippy::approx_constant)]
    fn bce_examples() {
        assert!(bce_loss(0.999_999, 1).unwrap().0 < 1e-5);
        assert!((bce_loss(0.5, 0).unwrap().0 - 0.693_147).abs() < 1e-6);
        assert!((bce_loss(0.1, 1).unwrap().0 - 2.302_585).abs() < 1e-6);
        assert_eq!(bce_loss(0.25, 1).unwrap().1, -4.0);
        assert_eq!(bce_loss(0.0, 1), Err(HeadError::ScoreOutOfRange(0.0)));
        assert_eq!(bce_loss(1.0, 0), Err(HeadError::ScoreOutOfRange(1.0)));
        assert_eq!(bce_loss(0.5, 2), Err(HeadError::BadLabel(2)));
    }

    #[test]
    fn zero_network_bias_gradient() {
        let p = HeadParams::zeros(4, [3, 2]);
        let (loss, g) = backward(&p, &ex(vec![1.0, -2.0, 0.5, 3.0], 1)).unwrap();
        assert_eq!(g.bias[2], vec![0.5, -0.5]);
        assert!((loss - 2f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn duplicate_example_doubles_gradient() {
        let p = HeadParams::init(6, [5, 4], 3);
        let e = ex(vec![0.3, -1.0, 0.2, 0.9, -0.4, 1.5], 0);
        let (_, single) = backward(&p, &e).unwrap();
        let (_, pair) = batch_gradient(&p, &[&e, &e], Execution::Sequential).unwrap();
        for (a, b) in single.weight.iter().flatten().zip(pair.weight.iter().flatten()) {
            assert_eq!(2.0 * a, *b);
        }
    }

    #[test]
    fn lr_schedule_endpoints() {
        let p = HeadParams::zeros(2, [2, 2]);
        let opt = OptimizerState::new(&p, &HeadConfig::default(), 299);
        assert_eq!(opt.lr(0), 1e-5);
        assert!((opt.lr(299) - 0.95e-5).abs() < 1e-20);
        let trace: Vec<f64> = (0..300).map(|t| opt.lr(t)).collect();
        assert!(trace.windows(2).all(|w| w[1] <= w[0]));
    }

    #[test]
    fn balanced_order_counts() {
        let labels = [0, 0, 0, 0, 0, 1, 1];
        let order = balanced_order(&labels, &mut rng::stream(1, 2, 3));
        let fake = order.iter().filter(|&&i| labels[i] == 1).count();
        assert_eq!((order.len(), fake), (10, 5));
        for i in 0..labels.len() {
            assert!(order.contains(&i));
        }
    }

    #[test]
    fn bundle_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = HeadParams::init(7, [6, 5], 11);
        save_bundle(dir.path(), &p, false).unwrap();
        let (q, index) = load_bundle(dir.path()).unwrap();
        assert_eq!(p, q);
        assert!(!index.use_audio);
    }

    #[test]
    fn freeze_hidden_touches_only_output_layer() {
        let mut cfg = HeadConfig { hidden: [4, 3], epochs: 2, batch_size: 2, freeze_hidden: true, lr0: 1e-2, ..Default::default() };
        let data: Vec<_> = (0..6).map(|i| ex(vec![i as f32, 1.0 - i as f32], (i % 2) as u8)).collect();
        let init = HeadParams::init(2, cfg.hidden, cfg.seed);
        let out = train(&data, &cfg, Execution::Sequential).unwrap();
        assert_eq!(out.params.layers[0], init.layers[0]);
        assert_eq!(out.params.layers[1], init.layers[1]);
        assert_ne!(out.params.layers[2], init.layers[2]);
        cfg.freeze_hidden = false;
        let out = train(&data, &cfg, Execution::Sequential).unwrap();
        assert_ne!(out.params.layers[0], init.layers[0]);
    }

    #[test]
    fn train_rejects_bad_input() {
        let cfg = HeadConfig::default();
        assert_eq!(train(&[], &cfg, Execution::Sequential), Err(HeadError::EmptyDataset));
        let data = vec![ex(vec![1.0, 2.0], 0), ex(vec![1.0], 1)];
        assert!(matches!(train(&data, &cfg, Execution::Sequential), Err(HeadError::DimensionMismatch { .. })));
    }

    proptest! {
        #[test]
        fn score_is_complementary_and_shift_invariant(a in -30.0f64..30.0, b in -30.0f64..30.0, c in -50.0f64..50.0) {
            let s = score_from_logits([a, b]) as f64;
            let real = log_softmax([a, b])[0].exp();
            prop_assert!((s + real - 1.0).abs() < 1e-6);
            prop_assert!((score_from_logits([a + c, b + c]) as f64 - s).abs() < 1e-6);
        }
    }
}
