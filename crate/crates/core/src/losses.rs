//! Multimodal contrastive objectives over shared-space embeddings.
//!
//! Scores compare projected vectors by `exp(dot / tau)`. The video-audio term
//! is an NCE softmax ratio against in-batch negatives; the video-text term is
//! its multiple-instance variant whose numerator sums over a set of plausible
//! positives. All ratios are evaluated in log space, and [`combined_loss`]
//! returns exact gradients with respect to every shared-space vector.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::dataio;
use crate::error::{Error, LossError};
use crate::par::{self, Execution};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Modality {
    Visual,
    Audio,
    Text,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModalityEmbedding {
    pub modality: Modality,
    pub vector: Vec<f32>,
}

/// Joint embedding space: fine-grained video-audio, or the coarser space
/// shared by video, audio and text.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Space {
    VA,
    VAT,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SharedSpaceVector {
    pub space: Space,
    pub vector: Vec<f32>,
    pub normalized: bool,
}

/// Affine map `y = W z + b` from a modality into a shared space.
#[derive(Debug, Clone, PartialEq)]
pub struct ProjectionHead {
    pub space: Space,
    pub d_in: usize,
    pub d_out: usize,
    /// Row-major `d_out x d_in`.
    pub weight: Vec<f32>,
    pub bias: Vec<f32>,
    pub l2_normalize_output: bool,
}

impl ProjectionHead {
    pub fn identity(space: Space, d: usize) -> Self {
        let mut weight = vec![0.0; d * d];
        (0..d).for_each(|i| weight[i * d + i] = 1.0);
        ProjectionHead {
            space,
            d_in: d,
            d_out: d,
            weight,
            bias: vec![0.0; d],
            l2_normalize_output: true,
        }
    }
}

pub fn project(head: &ProjectionHead, z: &ModalityEmbedding) -> Result<SharedSpaceVector, LossError> {
    if z.vector.len() != head.d_in {
        return Err(LossError::DimensionMismatch {
            expected: head.d_in,
            found: z.vector.len(),
        });
    }
    let mut y: Vec<f64> = head
        .weight
        .chunks_exact(head.d_in)
        .zip(&head.bias)
        .map(|(row, b)| *b as f64 + dot(row, &z.vector))
        .collect();
    let mut normalized = false;
    if head.l2_normalize_output {
        let norm = y.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm > 0.0 {
            y.iter_mut().for_each(|v| *v /= norm);
            normalized = true;
        }
    }
    Ok(SharedSpaceVector {
        space: head.space,
        vector: y.into_iter().map(|v| v as f32).collect(),
        normalized,
    })
}

fn dot(a: &[f32], b: &[f32]) -> f64 {
    a.iter().zip(b).map(|(x, y)| *x as f64 * *y as f64).sum()
}

#[inline]
fn logit(a: &[f32], b: &[f32], tau: f64) -> f64 {
    dot(a, b) / tau
}

fn pair_score(x: &SharedSpaceVector, y: &SharedSpaceVector, space: Space, tau: f64) -> Result<f64, LossError> {
    if x.space != space || y.space != space {
        let other = if x.space != space { x.space } else { y.space };
        return Err(LossError::SpaceMismatch(space, other));
    }
    if x.vector.len() != y.vector.len() {
        return Err(LossError::DimensionMismatch {
            expected: x.vector.len(),
            found: y.vector.len(),
        });
    }
    Ok(logit(&x.vector, &y.vector, tau).exp())
}

/// `exp(z_v . z_a / tau)` in the video-audio space.
pub fn va_score(zv: &SharedSpaceVector, za: &SharedSpaceVector, tau: f64) -> Result<f64, LossError> {
    pair_score(zv, za, Space::VA, tau)
}

/// `exp(z_v . z_t / tau)` in the video-audio-text space.
pub fn vt_score(zv: &SharedSpaceVector, zt: &SharedSpaceVector, tau: f64) -> Result<f64, LossError> {
    pair_score(zv, zt, Space::VAT, tau)
}

fn log_sum_exp(xs: &[f64]) -> f64 {
    let m = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + xs.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

fn softmax(xs: &[f64]) -> Vec<f64> {
    let lse = log_sum_exp(xs);
    xs.iter().map(|x| (x - lse).exp()).collect()
}

/// `ln(1 + e^d)` without overflow.
fn softplus(d: f64) -> f64 {
    if d > 0.0 {
        d + (-d).exp().ln_1p()
    } else {
        d.exp().ln_1p()
    }
}

fn sigmoid(d: f64) -> f64 {
    if d >= 0.0 {
        1.0 / (1.0 + (-d).exp())
    } else {
        let e = d.exp();
        e / (1.0 + e)
    }
}

/// Loss and logit gradients of one softmax ratio.
#[derive(Debug, Clone, PartialEq)]
pub struct RatioLoss {
    pub loss: f64,
    pub d_pos: Vec<f64>,
    pub d_neg: Vec<f64>,
}

/// `-ln(sum exp(pos) / (sum exp(pos) + sum exp(neg)))` from logits.
///
/// Evaluated as `softplus(lse(neg) - lse(pos))`, so the result is never
/// negative and is exactly zero without negatives.
pub fn ratio_loss(pos: &[f64], neg: &[f64]) -> Option<RatioLoss> {
    if pos.is_empty() {
        return None;
    }
    let (lp, ln) = (log_sum_exp(pos), log_sum_exp(neg));
    if neg.is_empty() || ln == f64::NEG_INFINITY {
        return Some(RatioLoss {
            loss: 0.0,
            d_pos: vec![0.0; pos.len()],
            d_neg: vec![0.0; neg.len()],
        });
    }
    let d = ln - lp;
    let w = sigmoid(d);
    Some(RatioLoss {
        loss: softplus(d),
        d_pos: softmax(pos).into_iter().map(|s| -w * s).collect(),
        d_neg: softmax(neg).into_iter().map(|s| w * s).collect(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NegativeMode {
    /// `(v_i, a_j)` and `(v_j, a_i)` for every `j != i`.
    #[default]
    Symmetric,
    /// `(v_i, a_j)` for every `j != i`.
    OneSided,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossConfig {
    pub temperature: f64,
    pub lambda_va: f64,
    pub lambda_vt: f64,
    pub negatives: NegativeMode,
}

impl Default for LossConfig {
    fn default() -> Self {
        LossConfig {
            temperature: 0.07,
            lambda_va: 1.0,
            lambda_vt: 1.0,
            negatives: NegativeMode::Symmetric,
        }
    }
}

/// Video-text part of a batch entry.
#[derive(Debug, Clone, PartialEq)]
pub struct TextEntry {
    pub v_vat: Vec<f32>,
    /// Candidate narrations treated as positives for this clip.
    pub positives: Vec<Vec<f32>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BatchEntry {
    pub v_va: Vec<f32>,
    pub a_va: Vec<f32>,
    pub text: Option<TextEntry>,
}

/// K clips with their projected vectors. Text is present for all entries or none.
#[derive(Debug, Clone, PartialEq)]
pub struct ContrastiveBatch {
    entries: Vec<BatchEntry>,
    dim_va: usize,
    dim_vat: usize,
}

impl ContrastiveBatch {
    pub fn new(entries: Vec<BatchEntry>) -> Result<Self, LossError> {
        let first = entries
            .first()
            .ok_or_else(|| LossError::InvalidBatch("batch needs at least one entry".into()))?;
        let dim_va = first.v_va.len();
        let has_text = first.text.is_some();
        let dim_vat = first.text.as_ref().map_or(0, |t| t.v_vat.len());
        let check = |expected: usize, found: usize| {
            if expected == found {
                Ok(())
            } else {
                Err(LossError::DimensionMismatch { expected, found })
            }
        };
        for (i, e) in entries.iter().enumerate() {
            check(dim_va, e.v_va.len())?;
            check(dim_va, e.a_va.len())?;
            match &e.text {
                Some(t) if has_text => {
                    check(dim_vat, t.v_vat.len())?;
                    if t.positives.is_empty() {
                        return Err(LossError::EmptyPositiveSet(i));
                    }
                    for p in &t.positives {
                        check(dim_vat, p.len())?;
                    }
                }
                None if !has_text => {}
                _ => {
                    return Err(LossError::InvalidBatch(
                        "text must be present for every entry or none".into(),
                    ))
                }
            }
            let finite = e
                .v_va
                .iter()
                .chain(&e.a_va)
                .chain(e.text.iter().flat_map(|t| t.v_vat.iter().chain(t.positives.iter().flatten())))
                .all(|v| v.is_finite());
            if !finite {
                return Err(LossError::InvalidBatch(format!("entry {i} has non-finite values")));
            }
        }
        Ok(ContrastiveBatch {
            entries,
            dim_va,
            dim_vat,
        })
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn has_text(&self) -> bool {
        self.entries[0].text.is_some()
    }

    pub fn entries(&self) -> &[BatchEntry] {
        &self.entries
    }

    fn text(&self, i: usize) -> &TextEntry {
        self.entries[i].text.as_ref().expect("text checked")
    }
}

/// `(video index, audio index)` pairs entering anchor `i`'s video-audio ratio.
fn va_terms(i: usize, k: usize, mode: NegativeMode) -> (Vec<(usize, usize)>, Vec<(usize, usize)>) {
    let mut neg: Vec<(usize, usize)> = (0..k).filter(|&j| j != i).map(|j| (i, j)).collect();
    if mode == NegativeMode::Symmetric {
        neg.extend((0..k).filter(|&j| j != i).map(|j| (j, i)));
    }
    (vec![(i, i)], neg)
}

/// `(video index, (text owner, positive index))` pairs for anchor `i`.
type VtPair = (usize, (usize, usize));

fn vt_terms(batch: &ContrastiveBatch, i: usize, mode: NegativeMode) -> (Vec<VtPair>, Vec<VtPair>) {
    let k = batch.len();
    let count = |j: usize| batch.text(j).positives.len();
    let pos = (0..count(i)).map(|p| (i, (i, p))).collect();
    let mut neg: Vec<VtPair> = (0..k)
        .filter(|&j| j != i)
        .flat_map(|j| (0..count(j)).map(move |p| (i, (j, p))))
        .collect();
    if mode == NegativeMode::Symmetric {
        neg.extend(
            (0..k)
                .filter(|&j| j != i)
                .flat_map(|j| (0..count(i)).map(move |p| (j, (i, p)))),
        );
    }
    (pos, neg)
}

fn va_ratio(batch: &ContrastiveBatch, i: usize, cfg: &LossConfig) -> (RatioLoss, Vec<(usize, usize)>, Vec<(usize, usize)>) {
    let e = &batch.entries;
    let (pos, neg) = va_terms(i, e.len(), cfg.negatives);
    let l = |&(v, a): &(usize, usize)| logit(&e[v].v_va, &e[a].a_va, cfg.temperature);
    let r = ratio_loss(
        &pos.iter().map(l).collect::<Vec<_>>(),
        &neg.iter().map(l).collect::<Vec<_>>(),
    )
    .expect("one positive");
    (r, pos, neg)
}

fn vt_ratio(batch: &ContrastiveBatch, i: usize, cfg: &LossConfig) -> Result<(RatioLoss, Vec<VtPair>, Vec<VtPair>), LossError> {
    let (pos, neg) = vt_terms(batch, i, cfg.negatives);
    let l = |&(v, (j, p)): &VtPair| {
        logit(&batch.text(v).v_vat, &batch.text(j).positives[p], cfg.temperature)
    };
    let r = ratio_loss(
        &pos.iter().map(l).collect::<Vec<_>>(),
        &neg.iter().map(l).collect::<Vec<_>>(),
    )
    .ok_or(LossError::EmptyPositiveSet(i))?;
    Ok((r, pos, neg))
}

/// Video-audio NCE loss for one anchor.
pub fn nce_va(batch: &ContrastiveBatch, anchor: usize, cfg: &LossConfig) -> f64 {
    va_ratio(batch, anchor, cfg).0.loss
}

/// Video-text MIL-NCE loss for one anchor.
pub fn milnce_vt(batch: &ContrastiveBatch, anchor: usize, cfg: &LossConfig) -> Result<f64, LossError> {
    if !batch.has_text() {
        return Err(LossError::InvalidBatch("batch has no text".into()));
    }
    Ok(vt_ratio(batch, anchor, cfg)?.0.loss)
}

/// Gradients of the combined loss, laid out like the batch.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchGrads {
    pub v_va: Vec<Vec<f64>>,
    pub a_va: Vec<Vec<f64>>,
    pub v_vat: Vec<Vec<f64>>,
    /// `[entry][positive][dim]`
    pub t_vat: Vec<Vec<Vec<f64>>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LossOutput {
    /// Mean over anchors of `lambda_va * nce + lambda_vt * milnce`.
    pub loss: f64,
    pub nce_va: Vec<f64>,
    pub milnce_vt: Vec<f64>,
    pub grads: BatchGrads,
}

struct AnchorTerms {
    nce: f64,
    va: Vec<((usize, usize), f64)>,
    mil: f64,
    vt: Vec<(VtPair, f64)>,
}

pub fn combined_loss(batch: &ContrastiveBatch, cfg: &LossConfig) -> Result<LossOutput, LossError> {
    combined_loss_with(batch, cfg, Execution::default())
}

pub fn combined_loss_with(
    batch: &ContrastiveBatch,
    cfg: &LossConfig,
    exec: Execution,
) -> Result<LossOutput, LossError> {
    if !(cfg.temperature > 0.0) {
        return Err(LossError::InvalidBatch(format!("temperature {}", cfg.temperature)));
    }
    if cfg.lambda_va < 0.0 || cfg.lambda_vt < 0.0 {
        return Err(LossError::InvalidBatch("loss weights must be non-negative".into()));
    }
    let k = batch.len();
    let text = batch.has_text();
    let scale = 1.0 / k as f64;
    let per_anchor: Vec<Result<AnchorTerms, LossError>> = par::map_range(exec, k, |i| {
        let (r, pos, neg) = va_ratio(batch, i, cfg);
        let w = cfg.lambda_va * scale;
        let va = pos
            .into_iter()
            .zip(r.d_pos)
            .chain(neg.into_iter().zip(r.d_neg))
            .map(|(pair, d)| (pair, w * d))
            .collect();
        let (mil, vt) = if text {
            let (r, pos, neg) = vt_ratio(batch, i, cfg)?;
            let w = cfg.lambda_vt * scale;
            let vt = pos
                .into_iter()
                .zip(r.d_pos)
                .chain(neg.into_iter().zip(r.d_neg))
                .map(|(pair, d)| (pair, w * d))
                .collect();
            (r.loss, vt)
        } else {
            (0.0, Vec::new())
        };
        Ok(AnchorTerms { nce: r.loss, va, mil, vt })
    });
    let per_anchor = per_anchor.into_iter().collect::<Result<Vec<_>, _>>()?;

    let e = batch.entries();
    let tau = cfg.temperature;
    let mut grads = BatchGrads {
        v_va: vec![vec![0.0; batch.dim_va]; k],
        a_va: vec![vec![0.0; batch.dim_va]; k],
        v_vat: vec![vec![0.0; batch.dim_vat]; if text { k } else { 0 }],
        t_vat: if text {
            (0..k)
                .map(|i| vec![vec![0.0; batch.dim_vat]; batch.text(i).positives.len()])
                .collect()
        } else {
            Vec::new()
        },
    };
    let mut loss = 0.0;
    for t in &per_anchor {
        loss += cfg.lambda_va * t.nce + cfg.lambda_vt * t.mil;
        for &((v, a), d) in &t.va {
            let g = d / tau;
            axpy(&mut grads.v_va[v], g, &e[a].a_va);
            axpy(&mut grads.a_va[a], g, &e[v].v_va);
        }
        for &((v, (j, p)), d) in &t.vt {
            let g = d / tau;
            axpy(&mut grads.v_vat[v], g, &batch.text(j).positives[p]);
            axpy(&mut grads.t_vat[j][p], g, &batch.text(v).v_vat);
        }
    }
    Ok(LossOutput {
        loss: loss * scale,
        nce_va: per_anchor.iter().map(|t| t.nce).collect(),
        milnce_vt: if text { per_anchor.iter().map(|t| t.mil).collect() } else { Vec::new() },
        grads,
    })
}

fn axpy(y: &mut [f64], a: f64, x: &[f32]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += a * *xi as f64;
    }
}

/// Batch description read by `loss-eval`. Tensor paths are relative to the
/// spec file: `v_va`/`a_va` are `[K, d]`, `v_vat` is `[K, d_t]`, `t_vat` is
/// `[K, P, d_t]`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BatchSpec {
    pub v_va: String,
    pub a_va: String,
    #[serde(default)]
    pub v_vat: Option<String>,
    #[serde(default)]
    pub t_vat: Option<String>,
    /// Overrides the caller's loss settings when present.
    #[serde(default)]
    pub loss: Option<LossConfig>,
}

pub fn load_batch(spec_path: &Path) -> Result<(ContrastiveBatch, Option<LossConfig>), Error> {
    let spec: BatchSpec = dataio::read_json(spec_path)?;
    let base = spec_path.parent().unwrap_or(Path::new("."));
    let rows = |name: &str, rank: usize| -> Result<dataio::Tensor, Error> {
        let t = dataio::read_tensor(&base.join(name))?;
        if t.dims.len() != rank {
            return Err(LossError::InvalidBatch(format!("{name} has rank {}, expected {rank}", t.dims.len())).into());
        }
        Ok(t)
    };
    let v = rows(&spec.v_va, 2)?;
    let a = rows(&spec.a_va, 2)?;
    if v.dims != a.dims {
        return Err(LossError::InvalidBatch(format!("v_va {:?} vs a_va {:?}", v.dims, a.dims)).into());
    }
    let (k, d) = (v.dims[0], v.dims[1]);
    let text = match (&spec.v_vat, &spec.t_vat) {
        (Some(vp), Some(tp)) => {
            let vt = rows(vp, 2)?;
            let tt = rows(tp, 3)?;
            if vt.dims[0] != k || tt.dims[0] != k || tt.dims[2] != vt.dims[1] {
                return Err(LossError::InvalidBatch(format!("v_vat {:?} vs t_vat {:?}", vt.dims, tt.dims)).into());
            }
            Some((vt, tt))
        }
        (None, None) => None,
        _ => return Err(LossError::InvalidBatch("v_vat and t_vat go together".into()).into()),
    };
    let entries = (0..k)
        .map(|i| BatchEntry {
            v_va: v.data[i * d..(i + 1) * d].to_vec(),
            a_va: a.data[i * d..(i + 1) * d].to_vec(),
            text: text.as_ref().map(|(vt, tt)| {
                let (p, dt) = (tt.dims[1], tt.dims[2]);
                TextEntry {
                    v_vat: vt.data[i * dt..(i + 1) * dt].to_vec(),
                    positives: (0..p)
                        .map(|q| tt.data[(i * p + q) * dt..(i * p + q + 1) * dt].to_vec())
                        .collect(),
                }
            }),
        })
        .collect();
    Ok((ContrastiveBatch::new(entries)?, spec.loss))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn unit(d: usize, i: usize) -> Vec<f32> {
        let mut v = vec![0.0; d];
        v[i] = 1.0;
        v
    }

    fn shared(space: Space, vector: Vec<f32>) -> SharedSpaceVector {
        SharedSpaceVector { space, vector, normalized: true }
    }

    fn same_batch(k: usize, d: usize) -> ContrastiveBatch {
        let v = unit(d, 0);
        ContrastiveBatch::new(
            (0..k)
                .map(|_| BatchEntry { v_va: v.clone(), a_va: v.clone(), text: None })
                .collect(),
        )
        .unwrap()
    }

    #[test]
    fn projection_examples() {
        let z = ModalityEmbedding { modality: Modality::Visual, vector: vec![3.0, -4.0, 1.5] };
        let mut head = ProjectionHead::identity(Space::VA, 3);
        head.l2_normalize_output = false;
        assert_eq!(project(&head, &z).unwrap().vector, z.vector);

        head.l2_normalize_output = true;
        let y = project(&head, &z).unwrap();
        let n: f64 = y.vector.iter().map(|v| (*v as f64).powi(2)).sum::<f64>().sqrt();
        assert!((n - 1.0).abs() < 1e-6 && y.normalized);

        head.weight.fill(0.0);
        head.bias = vec![1.0, 0.0, 0.0];
        assert_eq!(project(&head, &z).unwrap().vector, vec![1.0, 0.0, 0.0]);

        let bad = ModalityEmbedding { modality: Modality::Visual, vector: vec![1.0] };
        assert_eq!(project(&head, &bad), Err(LossError::DimensionMismatch { expected: 3, found: 1 }));
    }

    #[test]
    fn score_examples() {
        let (a, b) = (shared(Space::VA, unit(4, 0)), shared(Space::VA, unit(4, 1)));
        assert_eq!(va_score(&a, &b, 0.07).unwrap(), 1.0);
        assert!((va_score(&a, &a, 1.0).unwrap() - std::f64::consts::E).abs() < 1e-12);
        let s = va_score(&a, &a, 0.07).unwrap();
        assert!((s - 1.600_320e6).abs() / s < 1e-6, "{s}");
        let t = shared(Space::VAT, unit(4, 0));
        assert_eq!(va_score(&a, &t, 1.0), Err(LossError::SpaceMismatch(Space::VA, Space::VAT)));
        assert!(vt_score(&t, &t, 1.0).is_ok());
    }

    #[test]
    fn nce_examples() {
        let cfg = LossConfig::default();
        assert_eq!(nce_va(&same_batch(1, 3), 0, &cfg), 0.0);
        let four = same_batch(4, 3);
        for i in 0..4 {
            assert!((nce_va(&four, i, &cfg) - 7f64.ln()).abs() < 1e-12);
        }
        let one_sided = LossConfig { negatives: NegativeMode::OneSided, ..cfg };
        assert!((nce_va(&same_batch(2, 3), 0, &one_sided) - 2f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn milnce_examples() {
        // |P| = 2 identical positives, 2 identical negatives
        let r = ratio_loss(&[0.3, 0.3], &[0.3, 0.3]).unwrap();
        assert!((r.loss - 2f64.ln()).abs() < 1e-12);
        assert_eq!(ratio_loss(&[1.0], &[]).unwrap().loss, 0.0);
        assert!(ratio_loss(&[], &[1.0]).is_none());

        let entry = |p: Vec<Vec<f32>>| BatchEntry {
            v_va: unit(2, 0),
            a_va: unit(2, 0),
            text: Some(TextEntry { v_vat: unit(2, 0), positives: p }),
        };
        let b = ContrastiveBatch::new(vec![entry(vec![unit(2, 1)])]).unwrap();
        assert_eq!(milnce_vt(&b, 0, &LossConfig::default()).unwrap(), 0.0);
        assert_eq!(
            ContrastiveBatch::new(vec![entry(vec![])]),
            Err(LossError::EmptyPositiveSet(0))
        );
    }

    #[test]
    fn milnce_single_positive_matches_nce() {
        let vs = [[0.6f32, 0.8, 0.0], [0.0, 1.0, 0.0], [0.3, -0.2, 0.9]];
        let as_ = [[0.1f32, 0.7, 0.7], [1.0, 0.0, 0.0], [-0.5, 0.5, 0.7]];
        let entries = vs
            .iter()
            .zip(&as_)
            .map(|(v, a)| BatchEntry {
                v_va: v.to_vec(),
                a_va: a.to_vec(),
                text: Some(TextEntry { v_vat: v.to_vec(), positives: vec![a.to_vec()] }),
            })
            .collect();
        let b = ContrastiveBatch::new(entries).unwrap();
        for mode in [NegativeMode::Symmetric, NegativeMode::OneSided] {
            let cfg = LossConfig { negatives: mode, ..Default::default() };
            for i in 0..3 {
                assert_eq!(
                    milnce_vt(&b, i, &cfg).unwrap().to_bits(),
                    nce_va(&b, i, &cfg).to_bits()
                );
            }
        }
    }

    #[test]
    fn negatives_permutation_invariant() {
        let pos = [0.4];
        let neg = [1.2, -0.3, 0.8, 2.5, -1.0];
        let mut rev = neg;
        rev.reverse();
        let a = ratio_loss(&pos, &neg).unwrap().loss;
        let b = ratio_loss(&pos, &rev).unwrap().loss;
        assert!((a - b).abs() < 1e-12);
    }

    #[test]
    fn weights_select_and_scale() {
        let b = ContrastiveBatch::new(
            (0..3)
                .map(|i| BatchEntry {
                    v_va: vec![0.1 * i as f32, 0.5, -0.2],
                    a_va: vec![0.3, -0.1 * i as f32, 0.4],
                    text: Some(TextEntry {
                        v_vat: vec![0.2, 0.1 * i as f32],
                        positives: vec![vec![0.5, -0.5], vec![0.1 * i as f32, 0.3]],
                    }),
                })
                .collect(),
        )
        .unwrap();
        let va_only = LossConfig { lambda_vt: 0.0, ..Default::default() };
        let out = combined_loss(&b, &va_only).unwrap();
        let mean_nce = (0..3).map(|i| nce_va(&b, i, &va_only)).sum::<f64>() / 3.0;
        assert!((out.loss - mean_nce).abs() < 1e-12);

        let base = LossConfig { lambda_va: 0.7, lambda_vt: 1.3, ..Default::default() };
        let twice = LossConfig { lambda_va: 1.4, lambda_vt: 2.6, ..base };
        let (x, y) = (combined_loss(&b, &base).unwrap(), combined_loss(&b, &twice).unwrap());
        assert_eq!(y.loss, 2.0 * x.loss);
        for (gx, gy) in x.grads.v_va.iter().flatten().zip(y.grads.v_va.iter().flatten()) {
            assert_eq!(*gy, 2.0 * gx);
        }
        for (gx, gy) in x.grads.t_vat.iter().flatten().flatten().zip(y.grads.t_vat.iter().flatten().flatten()) {
            assert_eq!(*gy, 2.0 * gx);
        }
    }

    #[test]
    fn sequential_and_parallel_agree() {
        let b = same_batch(5, 4);
        let cfg = LossConfig::default();
        assert_eq!(
            combined_loss_with(&b, &cfg, Execution::Sequential).unwrap(),
            combined_loss_with(&b, &cfg, Execution::Parallel).unwrap()
        );
    }

    #[test]
    fn rejects_mixed_text() {
        let with = BatchEntry {
            v_va: vec![1.0],
            a_va: vec![1.0],
            text: Some(TextEntry { v_vat: vec![1.0], positives: vec![vec![1.0]] }),
        };
        let without = BatchEntry { text: None, ..with.clone() };
        assert!(matches!(ContrastiveBatch::new(vec![with, without]), Err(LossError::InvalidBatch(_))));
        assert!(matches!(ContrastiveBatch::new(vec![]), Err(LossError::InvalidBatch(_))));
    }
}
