//! Standardized time base, clip placement and clip cutting.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::dataio::Rational;
use crate::error::SamplingError;
use crate::geometry::Frame;
use crate::rng;

/// Frames per clip.
pub const CLIP_LEN: usize = 32;

/// Default number of inference clips per track.
pub const DEFAULT_INFERENCE_CLIPS: usize = 9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TimeBase {
    pub fps: Rational,
    pub sample_rate: u32,
}

impl Default for TimeBase {
    /// 29 fps video with 44.1 kHz audio.
    fn default() -> Self {
        TimeBase {
            fps: Rational::new(29, 1),
            sample_rate: 44_100,
        }
    }
}

impl TimeBase {
    pub fn validate(&self) -> Result<(), SamplingError> {
        if !self.fps.is_positive() || self.sample_rate == 0 {
            return Err(SamplingError::InvalidTimeBase(format!(
                "fps {} sample_rate {}",
                self.fps, self.sample_rate
            )));
        }
        Ok(())
    }

    /// `floor(frame * sample_rate / fps)`, computed exactly.
    pub fn frame_to_sample(&self, frame: u64) -> u64 {
        let n = frame as u128 * self.sample_rate as u128 * self.fps.den as u128;
        (n / self.fps.num as u128) as u64
    }
}

/// `(start_sample, length)` of the audio aligned with a clip starting at
/// `start_frame`. The length is the same for every clip of a time base.
pub fn audio_window(start_frame: usize, tb: &TimeBase) -> (u64, u64) {
    (
        tb.frame_to_sample(start_frame as u64),
        tb.frame_to_sample(CLIP_LEN as u64),
    )
}

/// Uniform random clip starts in `[0, track_len - 32]`.
pub fn sample_train_clips(
    track_len: usize,
    clips: usize,
    seed: u64,
) -> Result<Vec<usize>, SamplingError> {
    if track_len < CLIP_LEN {
        return Err(SamplingError::TrackTooShort(track_len));
    }
    let mut rng = rng::stream(seed, track_len as u64, clips as u64);
    Ok((0..clips)
        .map(|_| rng.random_range(0..=track_len - CLIP_LEN))
        .collect())
}

/// Evenly spaced inference clip starts.
///
/// Tracks shorter than a clip get a single start at 0 (cut with last-frame
/// padding). Otherwise at most `track_len - 31` distinct starts are placed at
/// `round(i * (track_len - 32) / (n - 1))`; when `track_len >= 32 * n` these
/// never overlap.
pub fn place_inference_clips(track_len: usize, n_clips: usize) -> Vec<usize> {
    let n_clips = n_clips.max(1);
    if track_len < CLIP_LEN {
        return vec![0];
    }
    let span = track_len - CLIP_LEN;
    let n = n_clips.min(span + 1);
    if n == 1 {
        return vec![span / 2];
    }
    let denom = (n - 1) as u128;
    (0..n)
        .map(|i| {
            let num = i as u128 * span as u128;
            ((2 * num + denom) / (2 * denom)) as usize
        })
        .collect()
}

/// 32 consecutive frames of a track plus the aligned audio window.
#[derive(Debug, Clone, PartialEq)]
pub struct Clip {
    pub video_id: String,
    pub track_id: usize,
    pub clip_index: usize,
    pub start_frame: usize,
    pub frames: Vec<Frame>,
    pub audio: Option<Vec<f32>>,
}

impl Clip {
    /// Frames flattened to `[32, H, W, 3]`.
    pub fn frames_tensor(&self) -> (Vec<usize>, Vec<f32>) {
        let (w, h) = self
            .frames
            .first()
            .map_or((0, 0), |f| (f.width, f.height));
        let mut data = Vec::with_capacity(self.frames.len() * w * h * 3);
        for f in &self.frames {
            data.extend_from_slice(&f.data);
        }
        (vec![self.frames.len(), h, w, 3], data)
    }
}

/// Identifies the clip being cut.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ClipId {
    pub video_id: String,
    pub track_id: usize,
    pub clip_index: usize,
}

/// Cuts a clip starting at `start_frame` of the track. Frames past the end
/// repeat the last frame; audio past the end of the stream is zero.
pub fn cut_clip(
    id: ClipId,
    track_frames: &[Frame],
    audio: Option<&[f32]>,
    start_frame: usize,
    tb: &TimeBase,
) -> Result<Clip, SamplingError> {
    tb.validate()?;
    let len = track_frames.len();
    if len == 0 || start_frame >= len {
        return Err(SamplingError::StartOutOfRange {
            start: start_frame,
            len,
        });
    }
    if len >= CLIP_LEN && start_frame + CLIP_LEN > len {
        return Err(SamplingError::StartOutOfRange {
            start: start_frame,
            len,
        });
    }
    let frames = (start_frame..start_frame + CLIP_LEN)
        .map(|i| track_frames[i.min(len - 1)].clone())
        .collect();
    let audio = audio.map(|stream| audio_for_clip(stream, start_frame, tb));
    Ok(Clip {
        video_id: id.video_id,
        track_id: id.track_id,
        clip_index: id.clip_index,
        start_frame,
        frames,
        audio,
    })
}

/// The audio window of a clip starting at `start_frame` of `stream`,
/// zero-padded where the stream ends early.
pub fn audio_for_clip(stream: &[f32], start_frame: usize, tb: &TimeBase) -> Vec<f32> {
    let (start, length) = audio_window(start_frame, tb);
    let mut window = vec![0.0f32; length as usize];
    let start = start.min(stream.len() as u64) as usize;
    let avail = (stream.len() - start).min(window.len());
    window[..avail].copy_from_slice(&stream[start..start + avail]);
    window
}

/// Nearest-frame index map from a source frame rate onto a target one.
pub fn resample_indices(num_frames: usize, from: Rational, to: Rational) -> Vec<usize> {
    if num_frames == 0 || !from.is_positive() || !to.is_positive() {
        return Vec::new();
    }
    // duration in target frames = num_frames * to / from
    let out_len = (num_frames as u128 * to.num as u128 * from.den as u128
        / (to.den as u128 * from.num as u128))
        .max(1) as usize;
    (0..out_len)
        .map(|j| {
            // source position = j * from / to, rounded to nearest
            let num = 2 * j as u128 * from.num as u128 * to.den as u128
                + from.den as u128 * to.num as u128;
            let den = 2 * from.den as u128 * to.num as u128;
            ((num / den) as usize).min(num_frames - 1)
        })
        .collect()
}
