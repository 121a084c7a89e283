mod support {
    pub mod oracle;
}

use forgepipe_core::losses::{self, BatchEntry, ContrastiveBatch, LossConfig};
use support::oracle::*;

#[test]
fn loss_gradients_match_finite_differences() {
    let (mut worst, mut worst_entry): (f64, f64) = (0.0, 0.0);
    for seed in 0..100 {
        let (batch, cfg) = random_batch(seed);
        let c = check_loss_gradients(&batch, &cfg);
        assert!(c.loss_rel_err < 1e-10, "seed {seed}: loss off by {}", c.loss_rel_err);
        assert!(c.max_rel_err < 1e-4, "seed {seed}: gradient rel err {}", c.max_rel_err);
        worst = worst.max(c.max_rel_err);
        worst_entry = worst_entry.max(c.max_entry_rel_err);
    }
    eprintln!("worst gradient rel err {worst:.3e} (coordinate-wise {worst_entry:.3e})");
}

#[test]
fn fixed_small_batch_gradient() {
    // K = 3, d = 8 with a fixed seed
    let mut seed = 0;
    let (batch, cfg) = loop {
        let (b, c) = random_batch(1000 + seed);
        if b.len() == 3 {
            break (b, c);
        }
        seed += 1;
    };
    let c = check_loss_gradients(&batch, &cfg);
    assert!(c.max_rel_err < 1e-4, "{}", c.max_rel_err);
}

#[test]
fn head_gradients_match_finite_differences() {
    let (mut checked, mut skipped) = (0, 0);
    for seed in 0..100 {
        let (p, ex) = random_head_case(seed);
        let c = check_head_gradients(&p, &ex);
        assert!(c.max_rel_err < 1e-4, "seed {seed}: rel err {}", c.max_rel_err);
        checked += c.checked;
        skipped += c.skipped;
    }
    assert!(skipped * 100 < checked, "{skipped} kink crossings out of {checked}");
}

#[test]
fn large_temperature_limit() {
    // loss - ln(1 + |N|) is, to first order, (mean negative dot - positive dot)
    // / tau * |N| / (1 + |N|): below 2/tau for unit vectors, and below 1/tau
    // once every dot product lies in [-1/2, 1/2].
    let tau = 1e6;
    for seed in 0..50 {
        let (batch, _) = random_batch(seed);
        let cfg = LossConfig { temperature: tau, ..Default::default() };
        let halved = shrink(&batch, std::f32::consts::FRAC_1_SQRT_2);
        let k = batch.len();
        let limit = (1.0 + 2.0 * (k - 1) as f64).ln();
        for i in 0..k {
            assert!((losses::nce_va(&batch, i, &cfg) - limit).abs() < 2.0 / tau);
            assert!((losses::nce_va(&halved, i, &cfg) - limit).abs() < 1e-6);
        }
    }
}

fn shrink(batch: &ContrastiveBatch, s: f32) -> ContrastiveBatch {
    let entries = batch
        .entries()
        .iter()
        .map(|e| BatchEntry {
            v_va: e.v_va.iter().map(|x| x * s).collect(),
            a_va: e.a_va.iter().map(|x| x * s).collect(),
            text: e.text.clone(),
        })
        .collect();
    ContrastiveBatch::new(entries).unwrap()
}
