// Independent direct-formula oracles and central finite differences for the
// contrastive losses and the classifier head. Shared with the acceptance suite.

#![allow(dead_code)]

use forgepipe_core::head::{self, HeadParams, LabeledExample};
use forgepipe_core::losses::{self, BatchEntry, ContrastiveBatch, LossConfig, NegativeMode, TextEntry};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const FD_STEP: f64 = 1e-3;
/// Entries smaller than this are compared in absolute terms against it.
pub const REL_FLOOR: f64 = 1e-6;

pub fn rel_err(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_FLOOR)
}

#[derive(Clone)]
pub struct PlainBatch {
    pub v: Vec<Vec<f64>>,
    pub a: Vec<Vec<f64>>,
    pub w: Vec<Vec<f64>>,
    pub t: Vec<Vec<Vec<f64>>>,
}

impl PlainBatch {
    pub fn of(batch: &ContrastiveBatch) -> Self {
        let up = |x: &[f32]| x.iter().map(|v| *v as f64).collect::<Vec<f64>>();
        let e = batch.entries();
        PlainBatch {
            v: e.iter().map(|x| up(&x.v_va)).collect(),
            a: e.iter().map(|x| up(&x.a_va)).collect(),
            w: e.iter().filter_map(|x| x.text.as_ref()).map(|t| up(&t.v_vat)).collect(),
            t: e
                .iter()
                .filter_map(|x| x.text.as_ref())
                .map(|t| t.positives.iter().map(|p| up(p)).collect())
                .collect(),
        }
    }
}

fn sim(x: &[f64], y: &[f64], tau: f64) -> f64 {
    (x.iter().zip(y).map(|(a, b)| a * b).sum::<f64>() / tau).exp()
}

/// `(1/K) sum_i lambda_va NCE_i + lambda_vt MILNCE_i`, straight from the ratios.
pub fn direct_loss(b: &PlainBatch, cfg: &LossConfig) -> f64 {
    let k = b.v.len();
    let tau = cfg.temperature;
    let sym = cfg.negatives == NegativeMode::Symmetric;
    let mut total = 0.0;
    for i in 0..k {
        let pos = sim(&b.v[i], &b.a[i], tau);
        let mut neg = 0.0;
        for j in (0..k).filter(|&j| j != i) {
            neg += sim(&b.v[i], &b.a[j], tau);
            if sym {
                neg += sim(&b.v[j], &b.a[i], tau);
            }
        }
        total += cfg.lambda_va * -(pos / (pos + neg)).ln();
        if !b.w.is_empty() {
            let pos: f64 = b.t[i].iter().map(|t| sim(&b.w[i], t, tau)).sum();
            let mut neg = 0.0;
            for j in (0..k).filter(|&j| j != i) {
                neg += b.t[j].iter().map(|t| sim(&b.w[i], t, tau)).sum::<f64>();
                if sym {
                    neg += b.t[i].iter().map(|t| sim(&b.w[j], t, tau)).sum::<f64>();
                }
            }
            total += cfg.lambda_vt * -(pos / (pos + neg)).ln();
        }
    }
    total / k as f64
}

fn unit_vec(rng: &mut ChaCha8Rng, d: usize) -> Vec<f32> {
    let v: Vec<f64> = (0..d).map(|_| rng.random_range(-1.0..1.0)).collect();
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt().max(1e-12);
    v.iter().map(|x| (x / n) as f32).collect()
}

/// Random unit-norm batch with K <= 8, d <= 32 and up to 3 text positives.
pub fn random_batch(seed: u64) -> (ContrastiveBatch, LossConfig) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let k = rng.random_range(1..=8);
    let d = rng.random_range(1..=32);
    let dt = rng.random_range(1..=32);
    let text = rng.random_bool(0.7);
    let entries = (0..k)
        .map(|_| BatchEntry {
            v_va: unit_vec(&mut rng, d),
            a_va: unit_vec(&mut rng, d),
            text: text.then(|| {
                let p = rng.random_range(1..=3);
                TextEntry {
                    v_vat: unit_vec(&mut rng, dt),
                    positives: (0..p).map(|_| unit_vec(&mut rng, dt)).collect(),
                }
            }),
        })
        .collect();
    let cfg = LossConfig {
        temperature: 0.07,
        lambda_va: rng.random_range(0.0..2.0),
        lambda_vt: rng.random_range(0.0..2.0),
        negatives: if rng.random_bool(0.5) { NegativeMode::Symmetric } else { NegativeMode::OneSided },
    };
    (ContrastiveBatch::new(entries).unwrap(), cfg)
}

pub struct GradCheck {
    /// Largest `|g - fd|_2 / max(|g|_2, |fd|_2)` over the projected vectors.
    pub max_rel_err: f64,
    /// Largest coordinate-wise relative error, for reference only: at small
    /// temperatures it is dominated by the O(h^2) truncation of the
    /// difference quotient on near-zero coordinates.
    pub max_entry_rel_err: f64,
    pub loss_rel_err: f64,
    pub checked: usize,
}

pub fn vector_rel_err(analytic: &[f64], numeric: &[f64]) -> f64 {
    let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let diff: Vec<f64> = analytic.iter().zip(numeric).map(|(a, n)| a - n).collect();
    norm(&diff) / norm(analytic).max(norm(numeric)).max(REL_FLOOR)
}

/// Compares `combined_loss` gradients against central differences of [`direct_loss`].
pub fn check_loss_gradients(batch: &ContrastiveBatch, cfg: &LossConfig) -> GradCheck {
    let out = losses::combined_loss(batch, cfg).unwrap();
    let base = PlainBatch::of(batch);
    let mut check = GradCheck { max_rel_err: 0.0, max_entry_rel_err: 0.0, loss_rel_err: 0.0, checked: 0 };
    let mut probe = |analytic: &[f64], poke: &dyn Fn(&mut PlainBatch, usize, f64)| {
        let numeric: Vec<f64> = (0..analytic.len())
            .map(|c| {
                let (mut plus, mut minus) = (base.clone(), base.clone());
                poke(&mut plus, c, FD_STEP);
                poke(&mut minus, c, -FD_STEP);
                (direct_loss(&plus, cfg) - direct_loss(&minus, cfg)) / (2.0 * FD_STEP)
            })
            .collect();
        for (a, n) in analytic.iter().zip(&numeric) {
            check.max_entry_rel_err = check.max_entry_rel_err.max(rel_err(*a, *n));
        }
        check.max_rel_err = check.max_rel_err.max(vector_rel_err(analytic, &numeric));
        check.checked += 1;
    };
    let g = &out.grads;
    for i in 0..base.v.len() {
        probe(&g.v_va[i], &|b, c, h| b.v[i][c] += h);
        probe(&g.a_va[i], &|b, c, h| b.a[i][c] += h);
        if !base.w.is_empty() {
            probe(&g.v_vat[i], &|b, c, h| b.w[i][c] += h);
            for p in 0..base.t[i].len() {
                probe(&g.t_vat[i][p], &|b, c, h| b.t[i][p][c] += h);
            }
        }
    }
    let direct = direct_loss(&base, cfg);
    check.loss_rel_err = (out.loss - direct).abs() / direct.abs().max(REL_FLOOR);
    check
}

// --- head ---

#[derive(Clone)]
pub struct PlainHead {
    pub w: [Vec<f64>; 3],
    pub b: [Vec<f64>; 3],
    pub dims: [usize; 4],
}

impl PlainHead {
    pub fn of(p: &HeadParams) -> Self {
        let up = |x: &[f32]| x.iter().map(|v| *v as f64).collect::<Vec<f64>>();
        PlainHead {
            w: p.layers.each_ref().map(|l| up(&l.weight)),
            b: p.layers.each_ref().map(|l| up(&l.bias)),
            dims: [p.layers[0].d_in, p.layers[0].d_out, p.layers[1].d_out, 2],
        }
    }
}

/// Loss and the on/off pattern of every hidden unit.
pub fn direct_head_loss(p: &PlainHead, x: &[f64], y: usize) -> (f64, Vec<bool>) {
    let mut act = x.to_vec();
    let mut pattern = Vec::new();
    for k in 0..3 {
        let (din, dout) = (p.dims[k], p.dims[k + 1]);
        let mut next = vec![0.0; dout];
        for o in 0..dout {
            let z: f64 = p.b[k][o] + (0..din).map(|i| p.w[k][o * din + i] * act[i]).sum::<f64>();
            next[o] = if k < 2 {
                pattern.push(z > 0.0);
                z.max(0.0)
            } else {
                z
            };
        }
        act = next;
    }
    let lse = (act[0].exp() + act[1].exp()).ln();
    (lse - act[y], pattern)
}

pub struct HeadCheck {
    pub max_rel_err: f64,
    pub checked: usize,
    /// Entries whose perturbation crossed a ReLU kink, where differences are meaningless.
    pub skipped: usize,
}

pub fn check_head_gradients(params: &HeadParams, ex: &LabeledExample) -> HeadCheck {
    let (_, g) = head::backward(params, ex).unwrap();
    let base = PlainHead::of(params);
    let x: Vec<f64> = ex.x.vector.iter().map(|v| *v as f64).collect();
    let y = ex.y as usize;
    let (_, pattern) = direct_head_loss(&base, &x, y);
    let mut check = HeadCheck { max_rel_err: 0.0, checked: 0, skipped: 0 };
    for k in 0..3 {
        for (is_bias, n) in [(false, base.w[k].len()), (true, base.b[k].len())] {
            for i in 0..n {
                let eval = |h: f64| {
                    let mut p = base.clone();
                    if is_bias { p.b[k][i] += h } else { p.w[k][i] += h }
                    direct_head_loss(&p, &x, y)
                };
                let ((lp, pp), (lm, pm)) = (eval(FD_STEP), eval(-FD_STEP));
                if pp != pattern || pm != pattern {
                    check.skipped += 1;
                    continue;
                }
                let numeric = (lp - lm) / (2.0 * FD_STEP);
                let analytic = if is_bias { g.bias[k][i] } else { g.weight[k][i] };
                check.max_rel_err = check.max_rel_err.max(rel_err(analytic, numeric));
                check.checked += 1;
            }
        }
    }
    check
}

/// Random small head (d_in = 16) with non-zero biases and one example.
pub fn random_head_case(seed: u64) -> (HeadParams, LabeledExample) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let hidden = [rng.random_range(2..=12), rng.random_range(2..=8)];
    let mut p = HeadParams::init(16, hidden, seed);
    for l in &mut p.layers {
        l.bias.iter_mut().for_each(|b| *b = rng.random_range(-0.5..0.5));
    }
    let x = (0..16).map(|_| rng.random_range(-2.0..2.0)).collect();
    (p, LabeledExample::new(x, rng.random_range(0..=1)).unwrap())
}
