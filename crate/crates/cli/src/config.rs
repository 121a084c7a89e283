use std::path::{Path, PathBuf};

use forgepipe_core::augment::AugmentConfig;
use forgepipe_core::evalmetrics::EvalConfig;
use forgepipe_core::head::HeadConfig;
use forgepipe_core::losses::LossConfig;
use forgepipe_core::sampling::{TimeBase, DEFAULT_INFERENCE_CLIPS};
use forgepipe_core::synth::RandomSceneParams;
use forgepipe_core::tracking::TrackerConfig;
use serde::{Deserialize, Serialize};

use crate::error::CliError;

/// Everything a `--config` TOML file may set. Missing sections and keys keep
/// their defaults.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub tracking: TrackerConfig,
    pub sampling: SamplingSection,
    pub augment: AugmentConfig,
    pub losses: LossConfig,
    pub head: HeadConfig,
    pub eval: EvalConfig,
    pub enrichment: EnrichmentSection,
    pub synth: SynthSection,
    pub paths: PathsSection,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SamplingSection {
    pub clips_per_track: usize,
}

impl Default for SamplingSection {
    fn default() -> Self {
        SamplingSection {
            clips_per_track: DEFAULT_INFERENCE_CLIPS,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EnrichmentSection {
    /// Used for spec lines without their own time base.
    pub time_base: TimeBase,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthSection {
    pub videos: usize,
    pub scene: RandomSceneParams,
    pub clips_per_video: usize,
    pub dim_v: usize,
    pub dim_a: usize,
    pub separation: f32,
    pub fake_fraction: f32,
}

impl Default for SynthSection {
    fn default() -> Self {
        SynthSection {
            videos: 4,
            scene: RandomSceneParams {
                num_frames: 48,
                frame_size: (160, 120),
                ..Default::default()
            },
            clips_per_video: 8,
            dim_v: 64,
            dim_a: 64,
            separation: 10.0,
            fake_fraction: 0.5,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PathsSection {
    /// Reference face landmarks (JSON); the built-in reference when unset.
    pub reference: Option<PathBuf>,
}

impl PipelineConfig {
    pub fn load(path: Option<&Path>) -> Result<Self, CliError> {
        let Some(path) = path else {
            return Ok(Self::default());
        };
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        toml::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
    }
}
