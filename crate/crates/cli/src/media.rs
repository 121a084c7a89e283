//! Frame-level stages: synthetic data, tracking, clip cutting, augmentation.

use std::f64::consts::TAU;
use std::path::{Path, PathBuf};

use forgepipe_core::augment;
use forgepipe_core::dataio::{
    self, EmbeddingRow, Label, Manipulation, Tensor, VideoManifestEntry,
};
use forgepipe_core::geometry::{self, BoundingBox, Frame, LandmarkSet5, DEFAULT_REFERENCE};
use forgepipe_core::par;
use forgepipe_core::rng::{self, key_of};
use forgepipe_core::sampling::{self, ClipId, TimeBase, CLIP_LEN};
use forgepipe_core::synth::{self, EmbeddingDatasetSpec, EmbeddingModel};
use forgepipe_core::tracking::{self, FaceTrack, TrackMeta};
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::error::{io, CliError};
use crate::{AugmentArgs, ClipMode, ClipsArgs, Context, SynthArgs, SynthKind, TrackArgs};

const FAKE_KINDS: [Manipulation; 4] = [
    Manipulation::Deepfake,
    Manipulation::FaceSwap,
    Manipulation::Face2Face,
    Manipulation::NeuralTextures,
];

pub fn mkdir(path: &Path) -> Result<(), CliError> {
    std::fs::create_dir_all(path).map_err(io(path))
}

pub fn print_json(value: &serde_json::Value) {
    println!("{}", serde_json::to_string_pretty(value).expect("json"));
}

/// Resolves a manifest-relative path.
pub fn resolve(base: &Path, p: &Path) -> PathBuf {
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.join(p)
    }
}

pub fn parent_dir(p: &Path) -> &Path {
    p.parent().filter(|d| !d.as_os_str().is_empty()).unwrap_or(Path::new("."))
}

fn write_frames(path: &Path, frames: &[Frame]) -> Result<(), CliError> {
    let (w, h) = frames.first().map_or((0, 0), |f| (f.width, f.height));
    let mut data = Vec::with_capacity(frames.len() * w * h * 3);
    frames.iter().for_each(|f| data.extend_from_slice(&f.data));
    dataio::write_tensor(path, &[frames.len(), h, w, 3], &data)?;
    Ok(())
}

fn read_frames(path: &Path) -> Result<Vec<Frame>, CliError> {
    let t: Tensor = dataio::read_tensor(path)?;
    if t.dims.len() != 4 || t.dims[3] != 3 {
        return Err(dataio_invariant(path, format!("expected [T, H, W, 3], got {:?}", t.dims)));
    }
    let (h, w) = (t.dims[1], t.dims[2]);
    t.data
        .chunks_exact(h * w * 3)
        .map(|c| Frame::new(w, h, c.to_vec()).map_err(CliError::from))
        .collect()
}

fn read_audio(path: &Path) -> Result<Vec<f32>, CliError> {
    let t = dataio::read_tensor(path)?;
    if t.dims.len() != 1 {
        return Err(dataio_invariant(path, format!("expected a 1-d audio tensor, got {:?}", t.dims)));
    }
    Ok(t.data)
}

fn dataio_invariant(path: &Path, message: String) -> CliError {
    forgepipe_core::error::DataError::Invariant {
        line: 0,
        message: format!("{}: {message}", path.display()),
    }
    .into()
}

// --- synth ---

pub fn synth(ctx: &Context, a: SynthArgs) -> Result<(), CliError> {
    match a.kind {
        SynthKind::Scenes => synth_scenes(ctx, a),
        SynthKind::Embeddings => synth_embeddings(ctx, a),
        SynthKind::ClipEmbeddings => synth_clip_embeddings(ctx, a),
    }
}

fn synth_scenes(ctx: &Context, a: SynthArgs) -> Result<(), CliError> {
    let out = ctx.out()?;
    let cfg = &ctx.config.synth;
    let mut params = cfg.scene.clone();
    params.num_frames = a.frames.unwrap_or(params.num_frames);
    params.frame_size = (a.width.unwrap_or(params.frame_size.0), a.height.unwrap_or(params.frame_size.1));
    if let Some(m) = a.max_persons {
        params.max_persons = m;
        params.min_persons = params.min_persons.min(m);
    }
    if params.num_frames == 0 || params.frame_size.0 < 32 || params.frame_size.1 < 32 || params.max_persons == 0 {
        return Err(CliError::Usage("scenes need frames > 0, a size of at least 32x32 and a person".into()));
    }
    let videos = a.videos.unwrap_or(cfg.videos);
    let seed = ctx.seed_or(0);
    for sub in ["frames", "detections", "audio", "truth"] {
        mkdir(&out.join(sub))?;
    }
    let tb = TimeBase::default();
    let entries = par::try_map_ordered(ctx.exec, &(0..videos).collect::<Vec<_>>(), |&i| {
        let video_id = format!("vid{i:04}");
        let spec = synth::random_scene(rng::mix(seed, &[i as u64]), &params);
        let scene = synth::generate_scene(&spec);
        write_frames(&out.join("frames").join(format!("{video_id}.ft")), &synth::render_frames(&spec))?;
        dataio::write_detections(
            &out.join("detections").join(format!("{video_id}.jsonl")),
            scene.detections.values(),
        )?;
        dataio::write_json(&out.join("truth").join(format!("{video_id}.json")), &scene.ground_truth)?;
        let samples = tb.frame_to_sample(spec.num_frames as u64) as usize;
        let freq = 180.0 + 15.0 * (i % 16) as f64;
        let audio: Vec<f32> = (0..samples)
            .map(|n| (0.5 * (TAU * freq * n as f64 / tb.sample_rate as f64).sin()) as f32)
            .collect();
        dataio::write_tensor(&out.join("audio").join(format!("{video_id}.ft")), &[samples], &audio)?;
        let fake = i % 2 == 1;
        let mut tags = Vec::new();
        if spec.persons.len() > 1 {
            tags.push("multi_face".to_string());
        }
        Ok::<_, CliError>(VideoManifestEntry {
            frames_uri: format!("frames/{video_id}.ft").into(),
            audio_uri: Some(format!("audio/{video_id}.ft").into()),
            label: if fake { Label::Fake } else { Label::Real },
            manipulation: if fake { FAKE_KINDS[(i / 2) % 4].clone() } else { Manipulation::None },
            fps: tb.fps,
            sample_rate: tb.sample_rate,
            num_frames: spec.num_frames,
            tags,
            video_id,
        })
    })?;
    dataio::write_manifest(&out.join("manifest.jsonl"), &entries)?;
    print_json(&json!({ "videos": entries.len(), "manifest": out.join("manifest.jsonl") }));
    Ok(())
}

fn embedding_spec(ctx: &Context, a: &SynthArgs) -> EmbeddingDatasetSpec {
    let cfg = &ctx.config.synth;
    EmbeddingDatasetSpec {
        num_videos: a.videos.unwrap_or(cfg.videos),
        clips_per_video: a.clips_per_video.unwrap_or(cfg.clips_per_video),
        dim_v: a.dim_v.unwrap_or(cfg.dim_v),
        dim_a: a.dim_a.unwrap_or(cfg.dim_a),
        separation: a.separation.unwrap_or(cfg.separation),
        fake_fraction: a.fake_fraction.unwrap_or(cfg.fake_fraction),
        seed: ctx.seed_or(0),
    }
}

fn synth_embeddings(ctx: &Context, a: SynthArgs) -> Result<(), CliError> {
    let out = ctx.out()?;
    let spec = embedding_spec(ctx, &a);
    spec.validate().map_err(CliError::Usage)?;
    mkdir(out)?;
    let data = synth::generate_embeddings(&spec);
    dataio::write_embedding_table(out, &data.table)?;
    dataio::write_manifest(&out.join("manifest.jsonl"), &data.manifest)?;
    print_json(&json!({ "videos": spec.num_videos, "rows": data.table.len(), "fake_videos": spec.num_fake() }));
    Ok(())
}

fn synth_clip_embeddings(ctx: &Context, a: SynthArgs) -> Result<(), CliError> {
    let out = ctx.out()?;
    let (Some(clips), Some(manifest)) = (&a.clips, &a.manifest) else {
        return Err(CliError::Usage("--kind clip-embeddings needs --clips and --manifest".into()));
    };
    let spec = embedding_spec(ctx, &a);
    spec.validate().map_err(CliError::Usage)?;
    let labels: std::collections::HashMap<String, Label> = dataio::read_manifest(manifest)?
        .into_iter()
        .map(|e| (e.video_id, e.label))
        .collect();
    let rows = read_clip_rows(clips)?
        .into_iter()
        .map(|r| {
            let label = *labels
                .get(&r.video_id)
                .ok_or_else(|| forgepipe_core::error::EvalError::UnknownVideoId(r.video_id.clone()))?;
            Ok(EmbeddingRow {
                video_id: r.video_id,
                track_id: r.track_id,
                clip_index: r.clip_index,
                label,
            })
        })
        .collect::<Result<Vec<_>, CliError>>()?;
    mkdir(out)?;
    let table = EmbeddingModel::new(spec.dim_v, spec.dim_a, spec.separation, spec.seed).table(rows);
    dataio::write_embedding_table(out, &table)?;
    print_json(&json!({ "rows": table.len() }));
    Ok(())
}

// --- track ---

/// One entry of `tracks.json`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrackRecord {
    #[serde(flatten)]
    pub meta: TrackMeta,
    pub frames: String,
    pub boxes: Vec<BoundingBox>,
    pub landmarks: Vec<LandmarkSet5>,
}

fn track_video(ctx: &Context, entry: &VideoManifestEntry, base: &Path, dets: &Path, out: &Path, reference: &LandmarkSet5) -> Result<usize, CliError> {
    let cfg = &ctx.config.tracking;
    let detections = dataio::read_detections(&dets.join(format!("{}.jsonl", entry.video_id)))?;
    let dir = out.join(&entry.video_id);
    mkdir(&dir)?;
    let tracks: Vec<FaceTrack> = match tracking::build_tracks(&detections, entry.num_frames, cfg) {
        Ok(t) => t
            .iter()
            .map(|t| tracking::smooth_track(t, cfg.smooth_window))
            .collect::<Result<_, _>>()?,
        Err(forgepipe_core::error::TrackingError::NoFacesDetected) => {
            log::warn!("{}: no faces detected", entry.video_id);
            Vec::new()
        }
        Err(e) => return Err(e.into()),
    };
    let frames = if tracks.is_empty() { Vec::new() } else { read_frames(&resolve(base, &entry.frames_uri))? };
    let mut records = Vec::with_capacity(tracks.len());
    for t in &tracks {
        let aligned = tracking::align_track(t, &frames, reference, ctx.exec)?;
        let name = format!("track_{}.ft", t.track_id);
        write_frames(&dir.join(&name), &aligned)?;
        records.push(TrackRecord {
            meta: t.meta(),
            frames: name,
            boxes: t.points.iter().map(|p| p.bbox).collect(),
            landmarks: t.points.iter().map(|p| p.smoothed_landmarks).collect(),
        });
    }
    dataio::write_json(&dir.join("tracks.json"), &records)?;
    Ok(records.len())
}

pub fn track(ctx: &Context, a: TrackArgs) -> Result<(), CliError> {
    let out = ctx.out()?;
    let mut ctx_cfg = ctx.config.tracking.clone();
    if let Some(c) = a.confidence {
        ctx_cfg.confidence_threshold = c;
    }
    if let Some(m) = a.multi_face {
        ctx_cfg.multi_face = Some(m);
    }
    if let Some(w) = a.smooth_window {
        ctx_cfg.smooth_window = w;
    }
    ctx_cfg.validate()?;
    let ctx = Context {
        config: crate::config::PipelineConfig { tracking: ctx_cfg, ..ctx.config.clone() },
        seed: None,
        exec: ctx.exec,
        out: ctx.out.clone(),
    };
    let reference = match &ctx.config.paths.reference {
        Some(p) => geometry::load_reference(p)?,
        None => DEFAULT_REFERENCE,
    };
    let manifest = dataio::read_manifest(&a.manifest)?;
    let base = parent_dir(&a.manifest);
    mkdir(out)?;
    let counts = par::try_map_ordered(ctx.exec, &manifest, |e| track_video(&ctx, e, base, &a.detections, out, &reference))?;
    let summary: Vec<_> = manifest
        .iter()
        .zip(&counts)
        .map(|(e, n)| json!({ "video_id": e.video_id, "tracks": n }))
        .collect();
    print_json(&json!({ "videos": summary }));
    Ok(())
}

// --- clips ---

/// One line of `clips.jsonl`. Paths are relative to the file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClipRow {
    pub video_id: String,
    pub track_id: usize,
    pub clip_index: usize,
    /// Video frame the clip starts at.
    pub start_frame: usize,
    pub label: Label,
    pub frames: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub audio: Option<String>,
}

pub fn read_clip_rows(dir: &Path) -> Result<Vec<ClipRow>, CliError> {
    Ok(dataio::read_jsonl(&dir.join("clips.jsonl"))?)
}

fn clip_video(ctx: &Context, entry: &VideoManifestEntry, base: &Path, tracks_dir: &Path, out: &Path, a: &ClipsArgs) -> Result<Vec<ClipRow>, CliError> {
    let dir = tracks_dir.join(&entry.video_id);
    let records: Vec<TrackRecord> = dataio::read_json(&dir.join("tracks.json"))?;
    if records.is_empty() {
        return Ok(Vec::new());
    }
    let tb = TimeBase { fps: entry.fps, sample_rate: entry.sample_rate };
    let audio = entry.audio_uri.as_ref().map(|p| read_audio(&resolve(base, p))).transpose()?;
    let n = a.clips_per_track.unwrap_or(ctx.config.sampling.clips_per_track);
    mkdir(&out.join(&entry.video_id))?;
    let mut rows = Vec::new();
    for r in &records {
        let frames = read_frames(&dir.join(&r.frames))?;
        let starts = if a.mode == ClipMode::Train {
            let seed = rng::mix(ctx.seed_or(0), &[key_of(&entry.video_id), r.meta.track_id as u64]);
            sampling::sample_train_clips(frames.len(), n, seed)?
        } else {
            sampling::place_inference_clips(frames.len(), n)
        };
        for (j, &start) in starts.iter().enumerate() {
            let id = ClipId { video_id: entry.video_id.clone(), track_id: r.meta.track_id, clip_index: j };
            let clip = sampling::cut_clip(id, &frames, None, start, &tb)?;
            let stem = format!("{}/t{}_c{j}", entry.video_id, r.meta.track_id);
            write_frames(&out.join(format!("{stem}.frames.ft")), &clip.frames)?;
            let first = r.meta.first_frame + start;
            let audio_path = match &audio {
                Some(stream) => {
                    let window = sampling::audio_for_clip(stream, first, &tb);
                    dataio::write_tensor(&out.join(format!("{stem}.audio.ft")), &[window.len()], &window)?;
                    Some(format!("{stem}.audio.ft"))
                }
                None => None,
            };
            rows.push(ClipRow {
                video_id: entry.video_id.clone(),
                track_id: r.meta.track_id,
                clip_index: j,
                start_frame: first,
                label: entry.label,
                frames: format!("{stem}.frames.ft"),
                audio: audio_path,
            });
        }
    }
    Ok(rows)
}

pub fn clips(ctx: &Context, a: ClipsArgs) -> Result<(), CliError> {
    let out = ctx.out()?;
    if a.clips_per_track == Some(0) {
        return Err(CliError::Usage("--clips must be at least 1".into()));
    }
    let manifest = dataio::read_manifest(&a.manifest)?;
    let base = parent_dir(&a.manifest);
    mkdir(out)?;
    let per_video = par::try_map_ordered(ctx.exec, &manifest, |e| clip_video(ctx, e, base, &a.tracks, out, &a))?;
    let rows: Vec<ClipRow> = per_video.into_iter().flatten().collect();
    dataio::write_jsonl_rows(&out.join("clips.jsonl"), &rows)?;
    print_json(&json!({ "clips": rows.len(), "clip_len": CLIP_LEN }));
    Ok(())
}

// --- augment ---

pub fn augment(ctx: &Context, a: AugmentArgs) -> Result<(), CliError> {
    let out = ctx.out()?;
    let mut cfg = if a.identity { augment::AugmentConfig::identity() } else { ctx.config.augment.clone() };
    if let Some(p) = a.p_flip {
        cfg.p_flip = p;
    }
    if let Some(h) = a.hue {
        cfg.hue_max_delta = h;
    }
    if let Some(b) = a.brightness {
        cfg.brightness_max_delta = b;
    }
    if !(0.0..=1.0).contains(&cfg.p_flip) || cfg.hue_max_delta < 0.0 || cfg.brightness_max_delta < 0.0 {
        return Err(CliError::Usage("augmentation strengths must be non-negative and p_flip in [0, 1]".into()));
    }
    let seed = ctx.seed_or(cfg.seed);
    let rows = read_clip_rows(&a.clips)?;
    mkdir(out)?;
    par::try_map_ordered(ctx.exec, &rows, |r| {
        let frames = read_frames(&a.clips.join(&r.frames))?;
        let clip = sampling::Clip {
            video_id: r.video_id.clone(),
            track_id: r.track_id,
            clip_index: r.clip_index,
            start_frame: r.start_frame,
            frames,
            audio: None,
        };
        let mut rng = rng::stream_with(seed, &[key_of(&r.video_id), r.track_id as u64, r.clip_index as u64]);
        let aug = augment::augment_clip(&clip, &cfg, &mut rng, par::Execution::Sequential);
        let target = out.join(&r.frames);
        mkdir(parent_dir(&target))?;
        write_frames(&target, &aug.frames)?;
        if let Some(audio) = &r.audio {
            let src = a.clips.join(audio);
            let bytes = std::fs::read(&src).map_err(io(&src))?;
            dataio::write_atomic(&out.join(audio), &bytes)?;
        }
        Ok::<_, CliError>(())
    })?;
    dataio::write_jsonl_rows(&out.join("clips.jsonl"), &rows)?;
    print_json(&json!({ "clips": rows.len() }));
    Ok(())
}
