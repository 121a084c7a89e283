//! Audio enrichment for manipulated videos.
//!
//! Face-swapped videos keep the target's lip motion, so they take the
//! target's audio; reenacted videos follow the source's lips and take the
//! source's audio. A ledger tracks how many videos actually got audio.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::dataio::{self, Manipulation};
use crate::error::{EnrichError, Error};
use crate::par::{self, Execution};
use crate::sampling::TimeBase;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum AudioOrigin {
    TargetAudio,
    SourceAudio,
    OwnAudio,
    None,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Status {
    Enriched,
    UnenrichedNoURL,
    UnenrichedBadMapping,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnrichmentRecord {
    pub video_id: String,
    pub manipulation: Manipulation,
    pub target_id: String,
    pub source_id: Option<String>,
    pub frame_range: (usize, usize),
    pub audio_origin: AudioOrigin,
    pub status: Status,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct EnrichmentLedger {
    pub total_sources: usize,
    pub with_url: usize,
    pub bad_mapping: usize,
    pub enriched: usize,
}

/// Whose audio track a video should carry.
pub fn plan_audio(manipulation: &Manipulation, target_id: &str, source_id: Option<&str>) -> Result<AudioOrigin, EnrichError> {
    let needs_source = || {
        source_id
            .filter(|s| !s.is_empty())
            .map(|_| ())
            .ok_or_else(|| EnrichError::MissingSourceId(target_id.to_string()))
    };
    Ok(match manipulation {
        Manipulation::Deepfake | Manipulation::FaceSwap => {
            needs_source()?;
            AudioOrigin::TargetAudio
        }
        Manipulation::Face2Face | Manipulation::NeuralTextures => {
            needs_source()?;
            AudioOrigin::SourceAudio
        }
        Manipulation::None => AudioOrigin::OwnAudio,
        Manipulation::Other(_) => AudioOrigin::None,
    })
}

/// Samples `[floor(start * sr / fps), floor(end * sr / fps))` of `stream`.
pub fn cut_audio(stream: &[f32], frame_range: (usize, usize), tb: &TimeBase) -> Result<Vec<f32>, EnrichError> {
    let (start, end) = frame_range;
    if start >= end {
        return Err(EnrichError::DegenerateRange { start, end });
    }
    let (a, b) = (tb.frame_to_sample(start as u64), tb.frame_to_sample(end as u64));
    if b > stream.len() as u64 {
        return Err(EnrichError::RangeBeyondStream {
            start,
            end,
            needed: b,
            available: stream.len(),
        });
    }
    Ok(stream[a as usize..b as usize].to_vec())
}

/// Counts per status. `with_url` covers every record whose origin stream was
/// available, whether or not its frame mapping held up.
pub fn build_ledger(records: &[EnrichmentRecord]) -> EnrichmentLedger {
    let count = |s: Status| records.iter().filter(|r| r.status == s).count();
    let (enriched, bad_mapping) = (count(Status::Enriched), count(Status::UnenrichedBadMapping));
    EnrichmentLedger {
        total_sources: records.len(),
        with_url: enriched + bad_mapping,
        bad_mapping,
        enriched,
    }
}

impl EnrichmentLedger {
    pub fn is_consistent(&self) -> bool {
        self.enriched + self.bad_mapping == self.with_url && self.with_url <= self.total_sources
    }
}

/// One line of the enrichment spec.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnrichmentSpec {
    pub video_id: String,
    pub manipulation: Manipulation,
    pub target_id: String,
    #[serde(default)]
    pub source_id: Option<String>,
    pub frame_range: (usize, usize),
    /// Directory holding downloaded origin streams as `<id>.ft` mono tensors.
    /// Missing, or lacking the chosen id, means no audio could be fetched.
    #[serde(default)]
    pub origin_audio_uri: Option<PathBuf>,
    /// Result of manual verification of the frame mapping.
    #[serde(default = "yes")]
    pub mapping_verified: bool,
    #[serde(default)]
    pub time_base: Option<TimeBase>,
}

fn yes() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq)]
pub struct EnrichmentOutcome {
    pub record: EnrichmentRecord,
    /// Cut audio for enriched records.
    pub audio: Option<Vec<f32>>,
}

/// Plans and cuts one video. Relative stream paths resolve against `base`.
pub fn enrich_one(spec: &EnrichmentSpec, base: &Path, default_tb: &TimeBase) -> Result<EnrichmentOutcome, Error> {
    let origin = plan_audio(&spec.manipulation, &spec.target_id, spec.source_id.as_deref())?;
    let mut record = EnrichmentRecord {
        video_id: spec.video_id.clone(),
        manipulation: spec.manipulation.clone(),
        target_id: spec.target_id.clone(),
        source_id: spec.source_id.clone(),
        frame_range: spec.frame_range,
        audio_origin: origin,
        status: Status::UnenrichedNoURL,
    };
    let stream_id = match origin {
        AudioOrigin::TargetAudio | AudioOrigin::OwnAudio => spec.target_id.as_str(),
        AudioOrigin::SourceAudio => spec.source_id.as_deref().unwrap_or_default(),
        AudioOrigin::None => return Ok(EnrichmentOutcome { record, audio: None }),
    };
    let Some(dir) = &spec.origin_audio_uri else {
        return Ok(EnrichmentOutcome { record, audio: None });
    };
    let path = base.join(dir).join(format!("{stream_id}.ft"));
    if !path.exists() {
        return Ok(EnrichmentOutcome { record, audio: None });
    }
    let tb = spec.time_base.unwrap_or(*default_tb);
    tb.validate()?;
    let stream = dataio::read_tensor(&path)?;
    if !spec.mapping_verified {
        record.status = Status::UnenrichedBadMapping;
        return Ok(EnrichmentOutcome { record, audio: None });
    }
    match cut_audio(&stream.data, spec.frame_range, &tb) {
        Ok(audio) => {
            record.status = Status::Enriched;
            Ok(EnrichmentOutcome { record, audio: Some(audio) })
        }
        Err(e @ (EnrichError::RangeBeyondStream { .. } | EnrichError::DegenerateRange { .. })) => {
            log::info!("{}: {e}", spec.video_id);
            record.status = Status::UnenrichedBadMapping;
            Ok(EnrichmentOutcome { record, audio: None })
        }
        Err(e) => Err(e.into()),
    }
}

pub fn enrich_all(
    specs: &[EnrichmentSpec],
    base: &Path,
    default_tb: &TimeBase,
    exec: Execution,
) -> Result<Vec<EnrichmentOutcome>, Error> {
    par::try_map_ordered(exec, specs, |s| enrich_one(s, base, default_tb))
}
