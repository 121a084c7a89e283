//! Video-level verdicts from clip scores, and ROC-AUC / accuracy over them.
//!
//! A track's score is the mean of its clip scores and a video's score is the
//! highest track score.

use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};

use crate::dataio::{Label, ScoreRecord, VideoManifestEntry};
use crate::error::EvalError;
use crate::par::{self, Execution};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VideoVerdict {
    pub video_id: String,
    pub video_score: f32,
    pub label: Label,
    pub num_clips_used: usize,
    pub num_tracks: usize,
}

/// Mean over each track's clips, then max over tracks.
pub fn aggregate_video(scores: &[ScoreRecord], label: Label) -> Result<VideoVerdict, EvalError> {
    let first = scores.first().ok_or(EvalError::EmptyScores)?;
    let mut tracks: BTreeMap<usize, Vec<(usize, f32)>> = BTreeMap::new();
    for r in scores {
        if r.video_id != first.video_id {
            return Err(EvalError::MixedVideos(first.video_id.clone(), r.video_id.clone()));
        }
        tracks.entry(r.track_id).or_default().push((r.clip_index, r.score));
    }
    let video_score = tracks
        .values_mut()
        .map(|clips| {
            // fixed summation order keeps the mean independent of input order
            clips.sort_by(|a, b| a.0.cmp(&b.0).then(a.1.total_cmp(&b.1)));
            clips.iter().map(|c| c.1 as f64).sum::<f64>() / clips.len() as f64
        })
        .fold(f64::NEG_INFINITY, f64::max);
    Ok(VideoVerdict {
        video_id: first.video_id.clone(),
        video_score: video_score as f32,
        label,
        num_clips_used: scores.len(),
        num_tracks: tracks.len(),
    })
}

/// Groups clip scores by video and joins labels from the manifest. Verdicts
/// come out sorted by video id.
pub fn aggregate_all(
    scores: &[ScoreRecord],
    manifest: &[VideoManifestEntry],
    exec: Execution,
) -> Result<Vec<VideoVerdict>, EvalError> {
    let labels: HashMap<&str, Label> = manifest.iter().map(|e| (e.video_id.as_str(), e.label)).collect();
    let mut groups: BTreeMap<&str, Vec<ScoreRecord>> = BTreeMap::new();
    for r in scores {
        groups.entry(&r.video_id).or_default().push(r.clone());
    }
    let groups: Vec<(&str, Vec<ScoreRecord>)> = groups.into_iter().collect();
    par::try_map_ordered(exec, &groups, |(id, recs)| {
        let label = *labels.get(id).ok_or_else(|| EvalError::UnknownVideoId(id.to_string()))?;
        aggregate_video(recs, label)
    })
}

/// Mann-Whitney ROC-AUC with ties counted as one half, via midranks.
pub fn roc_auc(verdicts: &[VideoVerdict]) -> Result<f64, EvalError> {
    let positives = verdicts.iter().filter(|v| v.label == Label::Fake).count() as u64;
    let negatives = verdicts.len() as u64 - positives;
    if positives == 0 || negatives == 0 {
        return Err(EvalError::SingleClass {
            positives: positives as usize,
            negatives: negatives as usize,
        });
    }
    let mut order: Vec<usize> = (0..verdicts.len()).collect();
    order.sort_by(|&a, &b| verdicts[a].video_score.total_cmp(&verdicts[b].video_score));
    // twice the rank sum of positives, so midranks stay integral
    let mut rank2_pos: u64 = 0;
    let mut i = 0;
    while i < order.len() {
        let s = verdicts[order[i]].video_score;
        let mut j = i;
        while j < order.len() && verdicts[order[j]].video_score == s {
            j += 1;
        }
        let midrank2 = (i + 1 + j) as u64;
        let pos = order[i..j].iter().filter(|&&k| verdicts[k].label == Label::Fake).count() as u64;
        rank2_pos += pos * midrank2;
        i = j;
    }
    let u2 = rank2_pos - positives * (positives + 1);
    Ok(u2 as f64 / (2 * positives * negatives) as f64)
}

/// Fraction of verdicts where `score >= threshold` agrees with a fake label.
pub fn accuracy(verdicts: &[VideoVerdict], threshold: f32) -> Result<f64, EvalError> {
    if verdicts.is_empty() {
        return Err(EvalError::EmptyScores);
    }
    let correct = verdicts
        .iter()
        .filter(|v| (v.video_score >= threshold) == (v.label == Label::Fake))
        .count();
    Ok(correct as f64 / verdicts.len() as f64)
}

/// Drops verdicts whose manifest entry satisfies `exclude`. Returns the kept
/// verdicts and the number removed.
pub fn filter_category<F>(
    verdicts: Vec<VideoVerdict>,
    manifest: &[VideoManifestEntry],
    exclude: F,
) -> Result<(Vec<VideoVerdict>, usize), EvalError>
where
    F: Fn(&VideoManifestEntry) -> bool,
{
    let entries: HashMap<&str, &VideoManifestEntry> = manifest.iter().map(|e| (e.video_id.as_str(), e)).collect();
    let total = verdicts.len();
    let mut kept = Vec::with_capacity(total);
    for v in verdicts {
        let entry = entries
            .get(v.video_id.as_str())
            .ok_or_else(|| EvalError::UnknownVideoId(v.video_id.clone()))?;
        if !exclude(entry) {
            kept.push(v);
        }
    }
    let removed = total - kept.len();
    Ok((kept, removed))
}

/// Excludes entries carrying any of `tags`.
pub fn has_any_tag<'a>(tags: &'a [String]) -> impl Fn(&VideoManifestEntry) -> bool + 'a {
    move |e| e.tags.iter().any(|t| tags.contains(t))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub auc: f64,
    pub accuracy: f64,
    pub n_videos: usize,
    pub n_excluded: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    pub threshold: f32,
    pub exclude_tags: Vec<String>,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            threshold: 0.5,
            exclude_tags: Vec::new(),
        }
    }
}

pub fn evaluate(
    scores: &[ScoreRecord],
    manifest: &[VideoManifestEntry],
    cfg: &EvalConfig,
    exec: Execution,
) -> Result<EvalReport, EvalError> {
    let verdicts = aggregate_all(scores, manifest, exec)?;
    let (kept, n_excluded) = filter_category(verdicts, manifest, has_any_tag(&cfg.exclude_tags))?;
    Ok(EvalReport {
        auc: roc_auc(&kept)?,
        accuracy: accuracy(&kept, cfg.threshold)?,
        n_videos: kept.len(),
        n_excluded,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataio::{Manipulation, Rational};
    use proptest::prelude::*;

    fn rec(video: &str, track: usize, clip: usize, score: f32) -> ScoreRecord {
        ScoreRecord { video_id: video.into(), track_id: track, clip_index: clip, score }
    }

    fn verdict(i: usize, score: f32, fake: bool) -> VideoVerdict {
        VideoVerdict {
            video_id: format!("v{i}"),
            video_score: score,
            label: if fake { Label::Fake } else { Label::Real },
            num_clips_used: 1,
            num_tracks: 1,
        }
    }

    fn entry(i: usize, tags: &[&str]) -> VideoManifestEntry {
        VideoManifestEntry {
            video_id: format!("v{i}"),
            label: Label::Real,
            manipulation: Manipulation::None,
            frames_uri: "f.ft".into(),
            audio_uri: None,
            fps: Rational::new(29, 1),
            sample_rate: 44100,
            num_frames: 10,
            tags: tags.iter().map(|t| t.to_string()).collect(),
        }
    }

    #[test]
    fn aggregation_examples() {
        let one = [rec("a", 0, 0, 0.2), rec("a", 0, 1, 0.4), rec("a", 0, 2, 0.6)];
        assert!((aggregate_video(&one, Label::Real).unwrap().video_score - 0.4).abs() < 1e-7);
        let two = [rec("a", 0, 0, 0.2), rec("a", 0, 1, 0.4), rec("a", 1, 0, 0.8)];
        let v = aggregate_video(&two, Label::Fake).unwrap();
        assert!((v.video_score - 0.8).abs() < 1e-7);
        assert_eq!((v.num_tracks, v.num_clips_used), (2, 3));
        assert_eq!(aggregate_video(&[rec("a", 0, 0, 0.7)], Label::Real).unwrap().video_score, 0.7);
        assert_eq!(aggregate_video(&[], Label::Real), Err(EvalError::EmptyScores));
        assert!(matches!(
            aggregate_video(&[rec("a", 0, 0, 0.1), rec("b", 0, 0, 0.1)], Label::Real),
            Err(EvalError::MixedVideos(..))
        ));
    }

    #[test]
    fn auc_examples() {
        let sep = [verdict(0, 0.9, true), verdict(1, 0.8, true), verdict(2, 0.1, false)];
        assert_eq!(roc_auc(&sep).unwrap(), 1.0);
        let tied = [verdict(0, 0.5, true), verdict(1, 0.5, false), verdict(2, 0.5, false)];
        assert_eq!(roc_auc(&tied).unwrap(), 0.5);
        let mixed = [verdict(0, 0.9, true), verdict(1, 0.4, true), verdict(2, 0.5, false), verdict(3, 0.1, false)];
        assert_eq!(roc_auc(&mixed).unwrap(), 0.75);
        assert_eq!(
            roc_auc(&sep[..2]),
            Err(EvalError::SingleClass { positives: 2, negatives: 0 })
        );
    }

    #[test]
    fn accuracy_examples() {
        let good = [verdict(0, 0.9, true), verdict(1, 0.1, false)];
        assert_eq!(accuracy(&good, 0.5).unwrap(), 1.0);
        let tie = [verdict(0, 0.6, true), verdict(1, 0.6, false)];
        assert_eq!(accuracy(&tie, 0.5).unwrap(), 0.5);
        let v = [verdict(0, 0.1, true), verdict(1, 0.2, false), verdict(2, 0.3, false), verdict(3, 0.0, true)];
        assert_eq!(accuracy(&v, 0.0).unwrap(), 0.5);
        assert_eq!(accuracy(&[], 0.5), Err(EvalError::EmptyScores));
    }

    #[test]
    fn filter_examples() {
        let verdicts: Vec<_> = (0..10).map(|i| verdict(i, 0.1 * i as f32, i % 2 == 0)).collect();
        let manifest: Vec<_> = (0..10).map(|i| entry(i, if i < 3 { &["distractor"] } else { &[] })).collect();
        let (all, n) = filter_category(verdicts.clone(), &manifest, |_| false).unwrap();
        assert_eq!((all, n), (verdicts.clone(), 0));
        let tags = vec!["distractor".to_string()];
        let (kept, n) = filter_category(verdicts.clone(), &manifest, has_any_tag(&tags)).unwrap();
        assert_eq!((kept.len(), n), (7, 3));
        let (no_fake, _) = filter_category(verdicts.clone(), &manifest, |e| e.video_id.trim_start_matches('v').parse::<usize>().unwrap() % 2 == 0).unwrap();
        assert!(matches!(roc_auc(&no_fake), Err(EvalError::SingleClass { .. })));
        assert!(matches!(
            filter_category(verdicts, &manifest[..5], |_| false),
            Err(EvalError::UnknownVideoId(_))
        ));
    }

    fn arb_verdicts() -> impl Strategy<Value = Vec<VideoVerdict>> {
        prop::collection::vec((0u8..12, any::<bool>()), 2..80).prop_map(|v| {
            let mut out: Vec<_> = v.into_iter().enumerate().map(|(i, (s, f))| verdict(i, s as f32 / 11.0, f)).collect();
            out[0].label = Label::Fake;
            out[1].label = Label::Real;
            out
        })
    }

    proptest! {
        #[test]
        fn auc_rank_invariant(v in arb_verdicts()) {
            let a = roc_auc(&v).unwrap();
            let warped: Vec<_> = v.iter().map(|x| VideoVerdict { video_score: x.video_score.powi(3) * 0.5 + 0.1, ..x.clone() }).collect();
            prop_assert_eq!(roc_auc(&warped).unwrap(), a);
            let flipped: Vec<_> = v.iter().map(|x| VideoVerdict {
                label: if x.label == Label::Fake { Label::Real } else { Label::Fake },
                ..x.clone()
            }).collect();
            prop_assert_eq!(roc_auc(&flipped).unwrap() + a, 1.0);
        }

        #[test]
        fn aggregation_order_invariant(scores in prop::collection::vec((0usize..3, 0.0f32..1.0), 1..20), seed in any::<u64>()) {
            let recs: Vec<_> = scores.iter().enumerate().map(|(i, (t, s))| rec("x", *t, i, *s)).collect();
            let mut shuffled = recs.clone();
            use rand::seq::SliceRandom;
            shuffled.shuffle(&mut crate::rng::stream(seed, 0, 0));
            prop_assert_eq!(aggregate_video(&recs, Label::Fake).unwrap(), aggregate_video(&shuffled, Label::Fake).unwrap());
        }
    }
}
