//! Building blocks for an audio-visual forgery detection pipeline.
//!
//! The crate covers everything around the (external) modality backbones:
//!
//! - [`dataio`]: manifests, detection streams, the `FOTENSR1` tensor format and score tables
//! - [`geometry`]: boxes, IOU, 5-point similarity estimation and bilinear warping
//! - [`tracking`]: per-person face tracks with interpolation, smoothing and alignment
//! - [`synth`]: deterministic synthetic scenes and embeddings with ground truth
//! - [`sampling`]: time base arithmetic, train/inference clip placement and clip cutting
//! - [`augment`]: clip-level flip, hue, brightness and scale jitter
//! - [`losses`]: NCE / MIL-NCE contrastive objectives with analytic gradients
//! - [`head`]: the MLP classification head, BCE, Adam with cosine decay
//! - [`evalmetrics`]: clip to video aggregation, ROC-AUC and accuracy
//! - [`enrichment`]: audio source planning for silent forgery datasets
//!
//! Data-parallel loops go through [`par`], which uses rayon when the
//! `parallel` feature is enabled and falls back to plain iterators otherwise.

pub mod augment;
pub mod dataio;
pub mod enrichment;
pub mod error;
pub mod evalmetrics;
pub mod geometry;
pub mod head;
pub mod losses;
pub mod par;
pub mod rng;
pub mod sampling;
pub mod synth;
pub mod tracking;

pub use error::{Error, Result};
