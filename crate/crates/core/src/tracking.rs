//! Face tracking: confidence filtering, IOU association (single- and
//! multi-face modes), size gating, gap interpolation, landmark smoothing and
//! alignment to a reference face.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::dataio::FrameDetections;
use crate::error::TrackingError;
use crate::geometry::{
    self, estimate_similarity, warp_frame, BoundingBox, Frame, LandmarkSet5, SimilarityFit,
    ALIGNED_SIZE,
};
use crate::par::{self, Execution};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Provenance {
    Detected,
    Interpolated,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrackPoint {
    pub frame_index: usize,
    pub bbox: BoundingBox,
    pub landmarks: LandmarkSet5,
    pub provenance: Provenance,
    pub smoothed_landmarks: LandmarkSet5,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FaceTrack {
    pub track_id: usize,
    /// Consecutive frames, first to last detection.
    pub points: Vec<TrackPoint>,
}

impl FaceTrack {
    pub fn first_frame(&self) -> usize {
        self.points.first().map_or(0, |p| p.frame_index)
    }

    pub fn last_frame(&self) -> usize {
        self.points.last().map_or(0, |p| p.frame_index)
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// `D` for detected, `I` for interpolated, one char per frame.
    pub fn provenance_mask(&self) -> String {
        self.points
            .iter()
            .map(|p| match p.provenance {
                Provenance::Detected => 'D',
                Provenance::Interpolated => 'I',
            })
            .collect()
    }

    pub fn meta(&self) -> TrackMeta {
        TrackMeta {
            track_id: self.track_id,
            first_frame: self.first_frame(),
            last_frame: self.last_frame(),
            provenance: self.provenance_mask(),
        }
    }
}

/// Per-track metadata written next to the aligned frame tensors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrackMeta {
    pub track_id: usize,
    pub first_frame: usize,
    pub last_frame: usize,
    pub provenance: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrackerConfig {
    pub confidence_threshold: f32,
    pub enlarge_factor: f32,
    /// Accepted range of `sqrt(area_candidate / area_last)`.
    pub size_ratio_gate: (f32, f32),
    pub smooth_window: usize,
    /// `None` selects the mode from the initial window.
    pub multi_face: Option<bool>,
    /// Number of leading frames with detections inspected for the mode decision.
    pub initial_window: usize,
    /// Frames in the initial window that must hold more than one face.
    pub multi_face_min_frames: usize,
}

impl Default for TrackerConfig {
    fn default() -> Self {
        TrackerConfig {
            confidence_threshold: 0.95,
            enlarge_factor: 1.8,
            size_ratio_gate: (0.5, 2.0),
            smooth_window: 5,
            multi_face: None,
            initial_window: 5,
            multi_face_min_frames: 3,
        }
    }
}

impl TrackerConfig {
    pub fn validate(&self) -> Result<(), TrackingError> {
        let bad = |m: String| Err(TrackingError::InvalidConfig(m));
        if !(0.0..=1.0).contains(&self.confidence_threshold) {
            return bad(format!("confidence_threshold {}", self.confidence_threshold));
        }
        let (lo, hi) = self.size_ratio_gate;
        if !(lo < 1.0 && 1.0 < hi) {
            return bad(format!("size_ratio_gate ({lo}, {hi}) must bracket 1"));
        }
        if !(self.enlarge_factor > 0.0) {
            return bad(format!("enlarge_factor {}", self.enlarge_factor));
        }
        if self.smooth_window == 0 || self.smooth_window % 2 == 0 {
            return Err(TrackingError::EvenWindow(self.smooth_window));
        }
        if self.initial_window == 0 {
            return bad("initial_window must be at least 1".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
struct Candidate {
    bbox: BoundingBox,
    enlarged: BoundingBox,
    landmarks: LandmarkSet5,
    landmark_rect: BoundingBox,
    confidence: f32,
}

impl Candidate {
    fn center(&self) -> [f32; 2] {
        self.bbox.center()
    }
}

fn candidates_by_frame(
    detections: &BTreeMap<usize, FrameDetections>,
    num_frames: usize,
    cfg: &TrackerConfig,
) -> Vec<(usize, Vec<Candidate>)> {
    detections
        .range(..num_frames)
        .filter_map(|(&frame, dets)| {
            let cands: Vec<Candidate> = dets
                .faces
                .iter()
                .filter(|f| f.confidence >= cfg.confidence_threshold)
                .filter_map(|f| {
                    let landmarks = f.landmarks?;
                    Some(Candidate {
                        bbox: f.bbox,
                        enlarged: geometry::enlarge(&f.bbox, cfg.enlarge_factor).ok()?,
                        landmark_rect: landmarks.bounding_rect(),
                        landmarks,
                        confidence: f.confidence,
                    })
                })
                .collect();
            (!cands.is_empty()).then_some((frame, cands))
        })
        .collect()
}

struct TrackState {
    anchor: [f32; 2],
    follow_last: bool,
    last: Candidate,
    detected: BTreeMap<usize, Candidate>,
}

impl TrackState {
    fn new(frame: usize, seed: Candidate, follow_last: bool) -> Self {
        let mut detected = BTreeMap::new();
        detected.insert(frame, seed.clone());
        TrackState {
            anchor: seed.center(),
            follow_last,
            last: seed,
            detected,
        }
    }

    fn fallback_center(&self) -> [f32; 2] {
        if self.follow_last {
            self.last.center()
        } else {
            self.anchor
        }
    }
}

/// Association key: lower tier wins, then lower value (negated IOU or distance).
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd)]
struct Match {
    tier: u8,
    value: f64,
}

fn best_track(cand: &Candidate, tracks: &[TrackState]) -> Option<(usize, Match)> {
    let pick = |tier: u8, score: &dyn Fn(&TrackState) -> f64, maximize: bool| {
        tracks
            .iter()
            .enumerate()
            .map(|(i, t)| (i, score(t)))
            .filter(|&(_, s)| !maximize || s > 0.0)
            .min_by(|a, b| {
                let (va, vb) = if maximize { (-a.1, -b.1) } else { (a.1, b.1) };
                va.total_cmp(&vb).then(a.0.cmp(&b.0))
            })
            .map(|(i, s)| (i, Match { tier, value: if maximize { -s } else { s } }))
    };
    pick(0, &|t| geometry::iou(&cand.landmark_rect, &t.last.landmark_rect) as f64, true)
        .or_else(|| pick(1, &|t| geometry::iou(&cand.enlarged, &t.last.enlarged) as f64, true))
        .or_else(|| {
            pick(
                2,
                &|t| {
                    let [cx, cy] = cand.center();
                    let [ax, ay] = t.fallback_center();
                    ((cx - ax) as f64).hypot((cy - ay) as f64)
                },
                false,
            )
        })
}

fn passes_size_gate(cand: &Candidate, last: &Candidate, gate: (f32, f32)) -> bool {
    let (a, b) = (cand.bbox.area() as f64, last.bbox.area() as f64);
    if a <= 0.0 || b <= 0.0 {
        return false;
    }
    let ratio = (a / b).sqrt();
    ratio >= gate.0 as f64 && ratio <= gate.1 as f64
}

fn associate_frame(frame: usize, cands: &[Candidate], tracks: &mut [TrackState], gate: (f32, f32)) {
    let mut winners: BTreeMap<usize, (Match, usize)> = BTreeMap::new();
    for (ci, cand) in cands.iter().enumerate() {
        let Some((ti, m)) = best_track(cand, tracks) else {
            continue;
        };
        if !passes_size_gate(cand, &tracks[ti].last, gate) {
            continue;
        }
        match winners.get(&ti) {
            Some((prev, _)) if prev <= &m => {}
            _ => {
                winners.insert(ti, (m, ci));
            }
        }
    }
    for (ti, (_, ci)) in winners {
        let cand = cands[ci].clone();
        tracks[ti].detected.insert(frame, cand.clone());
        tracks[ti].last = cand;
    }
}

fn pick_primary(cands: &[Candidate]) -> Candidate {
    cands
        .iter()
        .enumerate()
        .max_by(|(ia, a), (ib, b)| {
            a.confidence
                .total_cmp(&b.confidence)
                .then(a.bbox.area().total_cmp(&b.bbox.area()))
                .then(ib.cmp(ia))
        })
        .map(|(_, c)| c.clone())
        .expect("nonempty candidates")
}

/// Whether the initial window calls for multi-face mode.
fn wants_multi_face(frames: &[(usize, Vec<Candidate>)], cfg: &TrackerConfig) -> bool {
    let crowded = frames
        .iter()
        .take(cfg.initial_window)
        .filter(|(_, c)| c.len() > 1)
        .count();
    crowded >= cfg.multi_face_min_frames
}

/// Builds face tracks from per-frame detections.
pub fn build_tracks(
    detections: &BTreeMap<usize, FrameDetections>,
    num_frames: usize,
    cfg: &TrackerConfig,
) -> Result<Vec<FaceTrack>, TrackingError> {
    cfg.validate()?;
    let frames = candidates_by_frame(detections, num_frames, cfg);
    if frames.is_empty() {
        return Err(TrackingError::NoFacesDetected);
    }
    let multi = cfg.multi_face.unwrap_or_else(|| wants_multi_face(&frames, cfg));

    let (seed_pos, mut tracks) = if multi {
        // First frame of the initial window holding the most faces.
        let window = &frames[..frames.len().min(cfg.initial_window)];
        let most = window.iter().map(|(_, c)| c.len()).max().unwrap_or(0);
        let pos = window.iter().position(|(_, c)| c.len() == most).unwrap_or(0);
        let (frame, cands) = &frames[pos];
        let mut seeds = cands.clone();
        seeds.sort_by(|a, b| {
            let (ca, cb) = (a.center(), b.center());
            ca[0].total_cmp(&cb[0]).then(ca[1].total_cmp(&cb[1]))
        });
        let tracks: Vec<TrackState> = seeds
            .into_iter()
            .map(|s| TrackState::new(*frame, s, false))
            .collect();
        (pos, tracks)
    } else {
        let (frame, cands) = &frames[0];
        (0, vec![TrackState::new(*frame, pick_primary(cands), true)])
    };

    for (frame, cands) in &frames[seed_pos + 1..] {
        associate_frame(*frame, cands, &mut tracks, cfg.size_ratio_gate);
    }
    if seed_pos > 0 {
        for t in tracks.iter_mut() {
            t.last = t.detected.values().next().cloned().expect("seeded");
        }
        for (frame, cands) in frames[..seed_pos].iter().rev() {
            associate_frame(*frame, cands, &mut tracks, cfg.size_ratio_gate);
        }
    }

    tracks
        .into_iter()
        .enumerate()
        .map(|(track_id, state)| assemble_track(track_id, &state.detected))
        .collect()
}

fn assemble_track(
    track_id: usize,
    detected: &BTreeMap<usize, Candidate>,
) -> Result<FaceTrack, TrackingError> {
    let mut points: Vec<TrackPoint> = Vec::new();
    for (&frame, cand) in detected {
        let point = TrackPoint {
            frame_index: frame,
            bbox: cand.bbox,
            landmarks: cand.landmarks,
            provenance: Provenance::Detected,
            smoothed_landmarks: cand.landmarks,
        };
        if let Some(prev) = points.last().cloned() {
            for f in prev.frame_index + 1..frame {
                points.push(interpolate_gap(&prev, &point, f)?);
            }
        }
        points.push(point);
    }
    Ok(FaceTrack { track_id, points })
}

fn lerp(a: f32, b: f32, t: f64) -> f32 {
    (a as f64 + (b as f64 - a as f64) * t) as f32
}

/// Linear interpolation of box and landmarks between two track points.
pub fn interpolate_gap(
    before: &TrackPoint,
    after: &TrackPoint,
    frame_index: usize,
) -> Result<TrackPoint, TrackingError> {
    if !(before.frame_index < frame_index && frame_index < after.frame_index) {
        return Err(TrackingError::BadOrdering {
            before: before.frame_index,
            frame: frame_index,
            after: after.frame_index,
        });
    }
    let t = (frame_index - before.frame_index) as f64
        / (after.frame_index - before.frame_index) as f64;
    let (a, b) = (&before.bbox, &after.bbox);
    let bbox = BoundingBox::new(
        lerp(a.x, b.x, t),
        lerp(a.y, b.y, t),
        lerp(a.w, b.w, t),
        lerp(a.h, b.h, t),
    );
    let mut points = before.landmarks.points;
    for (p, q) in points.iter_mut().zip(after.landmarks.points) {
        *p = [lerp(p[0], q[0], t), lerp(p[1], q[1], t)];
    }
    let landmarks = LandmarkSet5::new(points);
    Ok(TrackPoint {
        frame_index,
        bbox,
        landmarks,
        provenance: Provenance::Interpolated,
        smoothed_landmarks: landmarks,
    })
}

/// Sliding mean of landmarks over `window` frames, shrinking at the track ends.
pub fn smooth_track(track: &FaceTrack, window: usize) -> Result<FaceTrack, TrackingError> {
    if window == 0 || window % 2 == 0 {
        return Err(TrackingError::EvenWindow(window));
    }
    let k = (window - 1) / 2;
    let n = track.points.len();
    let mut out = track.clone();
    for i in 0..n {
        let (lo, hi) = (i.saturating_sub(k), (i + k).min(n - 1));
        let count = (hi - lo + 1) as f64;
        let mut acc = [[0.0f64; 2]; 5];
        for p in &track.points[lo..=hi] {
            for (a, q) in acc.iter_mut().zip(p.landmarks.points) {
                a[0] += q[0] as f64;
                a[1] += q[1] as f64;
            }
        }
        out.points[i].smoothed_landmarks =
            LandmarkSet5::new(acc.map(|a| [(a[0] / count) as f32, (a[1] / count) as f32]));
    }
    Ok(out)
}

/// Random access to decoded video frames.
pub trait FrameSource: Sync {
    fn frame(&self, index: usize) -> Option<&Frame>;
}

impl FrameSource for [Frame] {
    fn frame(&self, index: usize) -> Option<&Frame> {
        self.get(index)
    }
}

impl FrameSource for Vec<Frame> {
    fn frame(&self, index: usize) -> Option<&Frame> {
        self.get(index)
    }
}

/// Per-frame transforms from smoothed landmarks onto `reference`.
pub fn alignment_transforms(
    track: &FaceTrack,
    reference: &LandmarkSet5,
) -> Result<Vec<SimilarityFit>, TrackingError> {
    track
        .points
        .iter()
        .map(|p| estimate_similarity(&p.smoothed_landmarks, reference).map_err(Into::into))
        .collect()
}

/// Warps every frame of the track to a 224x224 face crop.
pub fn align_track<S: FrameSource + ?Sized>(
    track: &FaceTrack,
    frames: &S,
    reference: &LandmarkSet5,
    exec: Execution,
) -> Result<Vec<Frame>, TrackingError> {
    let fits = alignment_transforms(track, reference)?;
    let jobs: Vec<(usize, SimilarityFit)> = track
        .points
        .iter()
        .map(|p| p.frame_index)
        .zip(fits)
        .collect();
    par::try_map_ordered(exec, &jobs, |(idx, fit)| {
        let frame = frames.frame(*idx).ok_or(TrackingError::MissingFrame(*idx))?;
        warp_frame(frame, &fit.transform, ALIGNED_SIZE, ALIGNED_SIZE).map_err(Into::into)
    })
}
