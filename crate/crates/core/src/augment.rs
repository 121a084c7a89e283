//! Clip-level visual augmentation. One parameter draw per clip; all frames
//! of the clip receive the same flip, hue, brightness and scale. Audio is
//! never touched.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::geometry::{warp_frame, Frame, SimilarityTransform};
use crate::par::{self, Execution};
use crate::sampling::Clip;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AugmentConfig {
    pub p_flip: f32,
    /// Hue shift bound, in hue turns.
    pub hue_max_delta: f32,
    pub brightness_max_delta: f32,
    /// Zoom factor range; values >= 1 only crop.
    pub scale_range: (f32, f32),
    pub seed: u64,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        AugmentConfig {
            p_flip: 0.5,
            hue_max_delta: 1.0 / 5.0,
            brightness_max_delta: 32.0 / 255.0,
            scale_range: (1.0, 1.25),
            seed: 0,
        }
    }
}

impl AugmentConfig {
    /// A config whose every draw is the identity.
    pub fn identity() -> Self {
        AugmentConfig {
            p_flip: 0.0,
            hue_max_delta: 0.0,
            brightness_max_delta: 0.0,
            scale_range: (1.0, 1.0),
            seed: 0,
        }
    }
}

/// Parameters drawn once per clip.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AugmentParams {
    pub flip: bool,
    pub hue_delta: f32,
    pub brightness_delta: f32,
    pub scale: f32,
}

impl AugmentParams {
    pub const IDENTITY: AugmentParams = AugmentParams {
        flip: false,
        hue_delta: 0.0,
        brightness_delta: 0.0,
        scale: 1.0,
    };
}

fn symmetric<R: Rng + ?Sized>(rng: &mut R, bound: f32) -> f32 {
    if bound > 0.0 {
        rng.random_range(-bound..=bound)
    } else {
        0.0
    }
}

pub fn draw_params<R: Rng + ?Sized>(cfg: &AugmentConfig, rng: &mut R) -> AugmentParams {
    let flip = rng.random::<f32>() < cfg.p_flip;
    let hue_delta = symmetric(rng, cfg.hue_max_delta);
    let brightness_delta = symmetric(rng, cfg.brightness_max_delta);
    let (lo, hi) = cfg.scale_range;
    let scale = if hi > lo { rng.random_range(lo..=hi) } else { lo };
    AugmentParams {
        flip,
        hue_delta,
        brightness_delta,
        scale,
    }
}

pub fn augment_clip<R: Rng + ?Sized>(clip: &Clip, cfg: &AugmentConfig, rng: &mut R, exec: Execution) -> Clip {
    apply_params(clip, &draw_params(cfg, rng), exec)
}

pub fn apply_params(clip: &Clip, params: &AugmentParams, exec: Execution) -> Clip {
    let frames = par::map_ordered(exec, &clip.frames, |f| augment_frame(f, params));
    Clip {
        frames,
        ..clip.clone()
    }
}

/// Applies flip, hue, brightness, scale jitter and the final [0, 1] clamp.
pub fn augment_frame(frame: &Frame, p: &AugmentParams) -> Frame {
    let mut out = if p.flip { flip_horizontal(frame) } else { frame.clone() };
    if p.hue_delta != 0.0 {
        for px in out.data.chunks_exact_mut(3) {
            let [h, s, v] = rgb_to_hsv([px[0], px[1], px[2]]);
            let rgb = hsv_to_rgb([(h + p.hue_delta).rem_euclid(1.0), s, v]);
            px.copy_from_slice(&rgb);
        }
    }
    if p.brightness_delta != 0.0 {
        out.data.iter_mut().for_each(|v| *v += p.brightness_delta);
    }
    if p.scale != 1.0 && !out.is_empty() {
        let center = [
            (out.width as f64 - 1.0) / 2.0,
            (out.height as f64 - 1.0) / 2.0,
        ];
        let zoom = SimilarityTransform::scale_about(p.scale as f64, center);
        out = warp_frame(&out, &zoom, out.width, out.height).expect("non-empty frame");
    }
    out.data.iter_mut().for_each(|v| *v = v.clamp(0.0, 1.0));
    out
}

pub fn flip_horizontal(frame: &Frame) -> Frame {
    let mut out = frame.clone();
    let w = frame.width;
    for y in 0..frame.height {
        for x in 0..w {
            out.set_pixel(x, y, frame.pixel(w - 1 - x, y));
        }
    }
    out
}

/// Hue in [0, 1), saturation and value in [0, 1].
pub fn rgb_to_hsv([r, g, b]: [f32; 3]) -> [f32; 3] {
    let max = r.max(g).max(b);
    let min = r.min(g).min(b);
    let delta = max - min;
    let h = if delta <= 0.0 {
        0.0
    } else if max == r {
        ((g - b) / delta).rem_euclid(6.0) / 6.0
    } else if max == g {
        ((b - r) / delta + 2.0) / 6.0
    } else {
        ((r - g) / delta + 4.0) / 6.0
    };
    let s = if max <= 0.0 { 0.0 } else { delta / max };
    [h.rem_euclid(1.0), s, max]
}

pub fn hsv_to_rgb([h, s, v]: [f32; 3]) -> [f32; 3] {
    let h6 = h.rem_euclid(1.0) * 6.0;
    let c = v * s;
    let x = c * (1.0 - ((h6 % 2.0) - 1.0).abs());
    let m = v - c;
    let (r, g, b) = match h6 as u32 {
        0 => (c, x, 0.0),
        1 => (x, c, 0.0),
        2 => (0.0, c, x),
        3 => (0.0, x, c),
        4 => (x, 0.0, c),
        _ => (c, 0.0, x),
    };
    [r + m, g + m, b + m]
}
