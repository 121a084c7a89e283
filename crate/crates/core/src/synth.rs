//! Deterministic synthetic scenes and embeddings with ground truth.
//!
//! Randomness is drawn from counter-keyed streams (see [`crate::rng`]), so a
//! single frame or clip can be regenerated without replaying the rest.

use std::collections::{BTreeMap, BTreeSet};

use rand::seq::{IndexedRandom, SliceRandom};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::dataio::{
    EmbeddingRow, EmbeddingTable, FaceDetection, FrameDetections, Label, Manipulation, Rational,
    VideoManifestEntry,
};
use crate::geometry::{BoundingBox, Frame, LandmarkSet5};
use crate::rng::{self, key_of};

const ENTITY_BACKGROUND: u64 = 3;
const ENTITY_ORDER: u64 = 4;
const ENTITY_LAYOUT: u64 = 5;
const ENTITY_DIRECTION: u64 = 6;
const ENTITY_LABELS: u64 = 7;
const ENTITY_CLIP: u64 = 8;

/// Landmark layout relative to the box, in box-size units.
pub const RELATIVE_LANDMARKS: LandmarkSet5 = LandmarkSet5 {
    points: [
        [0.22, 0.38],
        [0.40, 0.38],
        [0.50, 0.58],
        [0.60, 0.38],
        [0.78, 0.38],
    ],
};

/// A face moving along an affine path.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PersonSpec {
    pub start_bbox: BoundingBox,
    /// Per-frame change of `(x, y, w, h)`.
    pub delta: [f32; 4],
    #[serde(default = "default_relative_landmarks")]
    pub base_landmarks: LandmarkSet5,
    /// Frames where the detector misses this face.
    #[serde(default)]
    pub dropout_frames: BTreeSet<usize>,
    pub confidence: f32,
}

fn default_relative_landmarks() -> LandmarkSet5 {
    RELATIVE_LANDMARKS
}

impl PersonSpec {
    fn bbox_f64(&self, frame: usize) -> [f64; 4] {
        let b = &self.start_bbox;
        let f = frame as f64;
        [
            b.x as f64 + self.delta[0] as f64 * f,
            b.y as f64 + self.delta[1] as f64 * f,
            b.w as f64 + self.delta[2] as f64 * f,
            b.h as f64 + self.delta[3] as f64 * f,
        ]
    }

    pub fn bbox_at(&self, frame: usize) -> BoundingBox {
        let [x, y, w, h] = self.bbox_f64(frame);
        BoundingBox::new(x as f32, y as f32, w as f32, h as f32)
    }

    pub fn landmarks_at(&self, frame: usize) -> LandmarkSet5 {
        let [x, y, w, h] = self.bbox_f64(frame);
        LandmarkSet5::new(
            self.base_landmarks
                .points
                .map(|r| [(x + r[0] as f64 * w) as f32, (y + r[1] as f64 * h) as f32]),
        )
    }

    fn detection_at(&self, frame: usize) -> FaceDetection {
        FaceDetection {
            bbox: self.bbox_at(frame),
            confidence: self.confidence,
            landmarks: Some(self.landmarks_at(frame)),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneSpec {
    pub num_frames: usize,
    /// `(width, height)` in pixels.
    pub frame_size: (usize, usize),
    pub persons: Vec<PersonSpec>,
    #[serde(default)]
    pub distractors: Vec<PersonSpec>,
    pub seed: u64,
}

/// Ground truth for one person: the path over its detected span.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PersonTruth {
    pub person: usize,
    pub first_frame: usize,
    pub last_frame: usize,
    /// True path boxes, one per frame of the span.
    pub boxes: Vec<BoundingBox>,
    pub detected: Vec<bool>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub persons: Vec<PersonTruth>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticScene {
    pub detections: BTreeMap<usize, FrameDetections>,
    pub ground_truth: GroundTruth,
}

/// Detections and ground truth for a scene. Faces within a frame are listed
/// in a seed-dependent order.
pub fn generate_scene(spec: &SceneSpec) -> SyntheticScene {
    let mut detections = BTreeMap::new();
    for frame in 0..spec.num_frames {
        let mut faces: Vec<FaceDetection> = spec
            .persons
            .iter()
            .chain(&spec.distractors)
            .filter(|p| !p.dropout_frames.contains(&frame))
            .map(|p| p.detection_at(frame))
            .collect();
        if faces.is_empty() {
            continue;
        }
        faces.shuffle(&mut rng::stream(spec.seed, ENTITY_ORDER, frame as u64));
        detections.insert(
            frame,
            FrameDetections {
                frame_index: frame,
                faces,
            },
        );
    }
    let persons = spec
        .persons
        .iter()
        .enumerate()
        .filter_map(|(i, p)| {
            let seen: Vec<usize> = (0..spec.num_frames)
                .filter(|f| !p.dropout_frames.contains(f))
                .collect();
            let (&first, &last) = (seen.first()?, seen.last()?);
            Some(PersonTruth {
                person: i,
                first_frame: first,
                last_frame: last,
                boxes: (first..=last).map(|f| p.bbox_at(f)).collect(),
                detected: (first..=last).map(|f| !p.dropout_frames.contains(&f)).collect(),
            })
        })
        .collect();
    SyntheticScene {
        detections,
        ground_truth: GroundTruth { persons },
    }
}

fn person_color(i: usize) -> [f32; 3] {
    const PALETTE: [[f32; 3]; 4] = [
        [0.9, 0.3, 0.2],
        [0.2, 0.8, 0.3],
        [0.25, 0.35, 0.9],
        [0.85, 0.8, 0.2],
    ];
    PALETTE[i % PALETTE.len()]
}

fn fill_box(frame: &mut Frame, b: &BoundingBox, rgb: [f32; 3]) {
    let x0 = b.x.max(0.0).floor() as usize;
    let y0 = b.y.max(0.0).floor() as usize;
    let x1 = ((b.x + b.w).ceil().max(0.0) as usize).min(frame.width);
    let y1 = ((b.y + b.h).ceil().max(0.0) as usize).min(frame.height);
    for y in y0..y1 {
        for x in x0..x1 {
            frame.set_pixel(x, y, rgb);
        }
    }
}

/// Renders one frame: textured background, a colored patch per person and
/// white landmark dots. Distractors are gray patches.
pub fn render_frame(spec: &SceneSpec, frame_index: usize) -> Frame {
    let (w, h) = spec.frame_size;
    let mut rng = rng::stream(spec.seed, ENTITY_BACKGROUND, frame_index as u64);
    let data = (0..w * h * 3)
        .map(|_| 0.2 + 0.1 * rng.random::<f32>())
        .collect();
    let mut frame = Frame::new(w, h, data).expect("sized buffer");
    for d in &spec.distractors {
        fill_box(&mut frame, &d.bbox_at(frame_index), [0.5, 0.5, 0.5]);
    }
    for (i, p) in spec.persons.iter().enumerate() {
        fill_box(&mut frame, &p.bbox_at(frame_index), person_color(i));
        for q in p.landmarks_at(frame_index).points {
            let dot = BoundingBox::new(q[0] - 1.0, q[1] - 1.0, 3.0, 3.0);
            fill_box(&mut frame, &dot, [1.0, 1.0, 1.0]);
        }
    }
    frame
}

pub fn render_frames(spec: &SceneSpec) -> Vec<Frame> {
    (0..spec.num_frames).map(|f| render_frame(spec, f)).collect()
}

/// Knobs for [`random_scene`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RandomSceneParams {
    pub num_frames: usize,
    pub frame_size: (usize, usize),
    pub min_persons: usize,
    pub max_persons: usize,
    /// Upper bound on the fraction of interior frames a person is missed in.
    pub max_dropout: f32,
    pub distractors: bool,
    /// Leading frames kept free of dropouts and distractors.
    pub clean_prefix: usize,
}

impl Default for RandomSceneParams {
    fn default() -> Self {
        RandomSceneParams {
            num_frames: 50,
            frame_size: (320, 240),
            min_persons: 1,
            max_persons: 3,
            max_dropout: 0.2,
            distractors: true,
            clean_prefix: 8,
        }
    }
}

/// Samples a scene: persons in separate vertical bands, slow drift, random
/// dropouts, and distractors that either fail the confidence threshold or are
/// much smaller than the face they overlap.
pub fn random_scene(seed: u64, params: &RandomSceneParams) -> SceneSpec {
    let mut rng = rng::stream(seed, ENTITY_LAYOUT, 0);
    let (w, h) = params.frame_size;
    let n = params.num_frames;
    let count = rng.random_range(params.min_persons..=params.max_persons.max(params.min_persons));
    let band = w as f32 / count.max(1) as f32;
    let mut persons = Vec::with_capacity(count);
    for i in 0..count {
        let size = rng.random_range(0.3f32..0.45) * band.min(h as f32);
        let cx = band * (i as f32 + 0.5);
        let cy = h as f32 * rng.random_range(0.4f32..0.6);
        let drift = 0.15 * size / n.max(1) as f32;
        let delta = [
            rng.random_range(-drift..=drift),
            rng.random_range(-drift..=drift),
            0.0,
            0.0,
        ];
        let interior: Vec<usize> = (params.clean_prefix.min(n)..n.saturating_sub(1)).collect();
        let rate = rng.random_range(0.0..=params.max_dropout);
        let k = ((interior.len() as f32) * rate).floor() as usize;
        let dropout_frames = interior
            .choose_multiple(&mut rng, k)
            .copied()
            .collect::<BTreeSet<_>>();
        persons.push(PersonSpec {
            start_bbox: BoundingBox::new(cx - size / 2.0, cy - size / 2.0, size, size),
            delta,
            base_landmarks: RELATIVE_LANDMARKS,
            dropout_frames,
            confidence: rng.random_range(0.96f32..1.0),
        });
    }
    let mut distractors = Vec::new();
    if params.distractors && n > params.clean_prefix {
        let hidden: BTreeSet<usize> = (0..params.clean_prefix).collect();
        for p in &persons {
            // Small face-like overlay inside a real face.
            let b = p.start_bbox;
            let s = b.w * 0.3;
            distractors.push(PersonSpec {
                start_bbox: BoundingBox::new(b.x + b.w * 0.55, b.y + b.h * 0.1, s, s),
                delta: p.delta,
                base_landmarks: RELATIVE_LANDMARKS,
                dropout_frames: hidden.clone(),
                confidence: 0.99,
            });
        }
        // A full-size face that the detector is unsure about.
        let s = 0.25 * h as f32;
        distractors.push(PersonSpec {
            start_bbox: BoundingBox::new(rng.random_range(0.0..(w as f32 - s)), 0.0, s, s),
            delta: [0.0; 4],
            base_landmarks: RELATIVE_LANDMARKS,
            dropout_frames: hidden,
            confidence: 0.6,
        });
    }
    SceneSpec {
        num_frames: n,
        frame_size: params.frame_size,
        persons,
        distractors,
        seed,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingDatasetSpec {
    pub num_videos: usize,
    pub clips_per_video: usize,
    pub dim_v: usize,
    pub dim_a: usize,
    /// Distance between class means in units of the noise standard deviation.
    pub separation: f32,
    pub fake_fraction: f32,
    pub seed: u64,
}

impl EmbeddingDatasetSpec {
    pub fn validate(&self) -> Result<(), String> {
        if self.dim_v == 0 {
            return Err("dim_v must be positive".into());
        }
        if !(0.0..=1.0).contains(&self.fake_fraction) {
            return Err(format!("fake_fraction {} outside [0,1]", self.fake_fraction));
        }
        if !(self.separation >= 0.0) {
            return Err(format!("separation {} must be non-negative", self.separation));
        }
        Ok(())
    }

    pub fn num_fake(&self) -> usize {
        (self.fake_fraction as f64 * self.num_videos as f64).round() as usize
    }
}

/// Class geometry shared by every clip drawn under one seed.
#[derive(Debug, Clone)]
pub struct EmbeddingModel {
    pub dim_v: usize,
    pub dim_a: usize,
    pub separation: f32,
    pub seed: u64,
    direction: Vec<f64>,
}

impl EmbeddingModel {
    pub fn new(dim_v: usize, dim_a: usize, separation: f32, seed: u64) -> Self {
        let mut rng = rng::stream(seed, ENTITY_DIRECTION, (dim_v * 65_537 + dim_a) as u64);
        let mut direction: Vec<f64> = (0..dim_v + dim_a)
            .map(|_| rng.sample::<f64, _>(StandardNormal))
            .collect();
        let norm = direction.iter().map(|v| v * v).sum::<f64>().sqrt();
        direction.iter_mut().for_each(|v| *v /= norm);
        EmbeddingModel {
            dim_v,
            dim_a,
            separation,
            seed,
            direction,
        }
    }

    /// Unit vector along which the class means differ.
    pub fn direction(&self) -> &[f64] {
        &self.direction
    }

    /// `(z_v, z_a)` for one clip: class mean `+-separation/2` along the
    /// direction plus unit Gaussian noise.
    pub fn clip(&self, video_id: &str, track_id: usize, clip_index: usize, label: Label) -> (Vec<f32>, Vec<f32>) {
        let sign = match label {
            Label::Real => -1.0,
            Label::Fake => 1.0,
        };
        let offset = sign * self.separation as f64 / 2.0;
        let mut rng = rng::stream_with(
            self.seed,
            &[ENTITY_CLIP, key_of(video_id), track_id as u64, clip_index as u64],
        );
        let x: Vec<f32> = self
            .direction
            .iter()
            .map(|u| (offset * u + rng.sample::<f64, _>(StandardNormal)) as f32)
            .collect();
        let (v, a) = x.split_at(self.dim_v);
        (v.to_vec(), a.to_vec())
    }

    /// Embeds arbitrary clip rows with this model.
    pub fn table(&self, rows: Vec<EmbeddingRow>) -> EmbeddingTable {
        let mut zv = Vec::with_capacity(rows.len() * self.dim_v);
        let mut za = Vec::with_capacity(rows.len() * self.dim_a);
        for r in &rows {
            let (v, a) = self.clip(&r.video_id, r.track_id, r.clip_index, r.label);
            zv.extend(v);
            za.extend(a);
        }
        EmbeddingTable {
            rows,
            dim_v: self.dim_v,
            dim_a: self.dim_a,
            zv,
            za,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SyntheticEmbeddings {
    pub table: EmbeddingTable,
    pub manifest: Vec<VideoManifestEntry>,
}

pub fn synthetic_video_id(i: usize) -> String {
    format!("syn{i:05}")
}

pub fn generate_embeddings(spec: &EmbeddingDatasetSpec) -> SyntheticEmbeddings {
    let model = EmbeddingModel::new(spec.dim_v, spec.dim_a, spec.separation, spec.seed);
    let mut order: Vec<usize> = (0..spec.num_videos).collect();
    order.shuffle(&mut rng::stream(spec.seed, ENTITY_LABELS, 0));
    let fake: BTreeSet<usize> = order[..spec.num_fake()].iter().copied().collect();

    let mut rows = Vec::new();
    let mut manifest = Vec::new();
    for v in 0..spec.num_videos {
        let video_id = synthetic_video_id(v);
        let label = if fake.contains(&v) { Label::Fake } else { Label::Real };
        for c in 0..spec.clips_per_video {
            rows.push(EmbeddingRow {
                video_id: video_id.clone(),
                track_id: 0,
                clip_index: c,
                label,
            });
        }
        manifest.push(VideoManifestEntry {
            frames_uri: format!("{video_id}.frames.ft").into(),
            audio_uri: (spec.dim_a > 0).then(|| format!("{video_id}.audio.ft").into()),
            video_id,
            label,
            manipulation: match label {
                Label::Real => Manipulation::None,
                Label::Fake => Manipulation::Other("Synthetic".into()),
            },
            fps: Rational::new(29, 1),
            sample_rate: 44_100,
            num_frames: 32 * spec.clips_per_video.max(1),
            tags: Vec::new(),
        });
    }
    SyntheticEmbeddings {
        table: model.table(rows),
        manifest,
    }
}
