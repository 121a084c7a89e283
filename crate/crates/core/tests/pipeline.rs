use forgepipe_core::dataio::ScoreRecord;
use forgepipe_core::evalmetrics;
use forgepipe_core::geometry::DEFAULT_REFERENCE;
use forgepipe_core::head::{self, HeadConfig, LabeledExample};
use forgepipe_core::losses;
use forgepipe_core::par::Execution;
use forgepipe_core::sampling;
use forgepipe_core::synth::{self, EmbeddingDatasetSpec, RandomSceneParams};
use forgepipe_core::tracking::{self, Provenance, TrackerConfig};

mod support {
    pub mod oracle;
}

const BOTH: [Execution; 2] = [Execution::Sequential, Execution::Parallel];

#[test]
fn tracks_follow_ground_truth_under_heavy_dropout() {
    let params = RandomSceneParams {
        num_frames: 80,
        max_dropout: 0.35,
        ..Default::default()
    };
    for seed in 100..130 {
        let spec = synth::random_scene(seed, &params);
        let scene = synth::generate_scene(&spec);
        let tracks = tracking::build_tracks(&scene.detections, spec.num_frames, &TrackerConfig::default()).unwrap();
        let truth = &scene.ground_truth.persons;
        assert_eq!(tracks.len(), truth.len(), "seed {seed}");
        for t in &tracks {
            let p = truth
                .iter()
                .find(|p| p.first_frame == t.first_frame() && p.boxes[0] == t.points[0].bbox)
                .unwrap_or_else(|| panic!("seed {seed}: unmatched track"));
            assert_eq!(t.len(), p.boxes.len());
            for (k, pt) in t.points.iter().enumerate() {
                assert_eq!(pt.provenance == Provenance::Detected, p.detected[k]);
                let (got, want) = (pt.bbox.center(), p.boxes[k].center());
                assert!((got[0] - want[0]).abs() < 1e-3 && (got[1] - want[1]).abs() < 1e-3);
            }
        }
    }
}

#[test]
fn alignment_is_identical_across_execution_modes() {
    let params = RandomSceneParams {
        num_frames: 12,
        frame_size: (96, 72),
        max_persons: 1,
        ..Default::default()
    };
    let spec = synth::random_scene(7, &params);
    let scene = synth::generate_scene(&spec);
    let frames = synth::render_frames(&spec);
    let tracks = tracking::build_tracks(&scene.detections, spec.num_frames, &TrackerConfig::default()).unwrap();
    let aligned = BOTH.map(|e| tracking::align_track(&tracks[0], &frames[..], &DEFAULT_REFERENCE, e).unwrap());
    assert_eq!(aligned[0].len(), 12);
    assert_eq!(aligned[0], aligned[1]);
}

#[test]
fn losses_are_identical_across_execution_modes() {
    for seed in 0..20 {
        let (batch, cfg) = support::oracle::random_batch(seed);
        let [a, b] = BOTH.map(|e| losses::combined_loss_with(&batch, &cfg, e).unwrap());
        assert_eq!(a.loss.to_bits(), b.loss.to_bits());
        assert_eq!(a.grads, b.grads);
    }
}

#[test]
fn training_and_scoring_are_identical_across_execution_modes() {
    let data = synth::generate_embeddings(&EmbeddingDatasetSpec {
        num_videos: 12,
        clips_per_video: 3,
        dim_v: 16,
        dim_a: 16,
        separation: 10.0,
        fake_fraction: 0.5,
        seed: 2,
    });
    let t = &data.table;
    let examples: Vec<LabeledExample> = (0..t.len())
        .map(|i| {
            let mut x = t.visual(i).to_vec();
            x.extend_from_slice(t.audio(i).unwrap());
            LabeledExample::new(x, t.rows[i].label.as_u8()).unwrap()
        })
        .collect();
    let cfg = HeadConfig {
        hidden: [32, 16],
        epochs: 2,
        ..Default::default()
    };
    let [a, b] = BOTH.map(|e| head::train(&examples, &cfg, e).unwrap());
    assert_eq!(a.params, b.params);
    assert_eq!(a.epoch_loss, b.epoch_loss);

    let scored = BOTH.map(|e| {
        let (_, scores) = head::evaluate(&a.params, &examples, e).unwrap();
        let recs: Vec<ScoreRecord> = t
            .rows
            .iter()
            .zip(scores)
            .map(|(r, score)| ScoreRecord {
                video_id: r.video_id.clone(),
                track_id: r.track_id,
                clip_index: r.clip_index,
                score,
            })
            .collect();
        evalmetrics::aggregate_all(&recs, &data.manifest, e).unwrap()
    });
    assert_eq!(scored[0], scored[1]);
}

#[test]
fn clips_cover_tracks_of_every_length() {
    for len in 1..200 {
        let starts = sampling::place_inference_clips(len, 9);
        assert!(!starts.is_empty());
        assert!(starts.iter().all(|&s| s + sampling::CLIP_LEN <= len.max(sampling::CLIP_LEN)));
        assert!(starts.windows(2).all(|w| w[0] < w[1]));
    }
}
