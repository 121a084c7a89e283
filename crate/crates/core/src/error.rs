use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("invariant violated at line {line}: {message}")]
    Invariant { line: usize, message: String },
    #[error("bad magic {found:?}, expected FOTENSR1")]
    BadMagic { found: [u8; 8] },
    #[error("unsupported dtype tag {0}")]
    UnsupportedDtype(u32),
    #[error("truncated payload: expected {expected} bytes, found {found}")]
    TruncatedPayload { expected: usize, found: usize },
    #[error("tensor dims {0:?} overflow or contain zero")]
    DimOverflow(Vec<u64>),
    #[error("buffer holds {found} values but dims require {expected}")]
    LengthMismatch { expected: usize, found: usize },
    #[error("frame indices not strictly increasing: {prev} then {next}")]
    NonMonotoneFrames { prev: usize, next: usize },
    #[error("csv error: {0}")]
    Csv(String),
}

#[derive(Debug, Error, PartialEq)]
pub enum GeometryError {
    #[error("enlarge factor must be positive, got {0}")]
    NonPositiveFactor(f32),
    #[error("degenerate landmark configuration")]
    DegenerateConfiguration,
    #[error("empty frame")]
    EmptyFrame,
    #[error("frame buffer length {found} does not match {width}x{height}x3")]
    BadFrameBuffer {
        width: usize,
        height: usize,
        found: usize,
    },
}

#[derive(Debug, Error, PartialEq)]
pub enum TrackingError {
    #[error("no frame has a face above the confidence threshold")]
    NoFacesDetected,
    #[error("interpolation frame {frame} not strictly between {before} and {after}")]
    BadOrdering {
        before: usize,
        frame: usize,
        after: usize,
    },
    #[error("smoothing window must be odd, got {0}")]
    EvenWindow(usize),
    #[error("invalid tracker config: {0}")]
    InvalidConfig(String),
    #[error("frame {0} missing from frame source")]
    MissingFrame(usize),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
}

#[derive(Debug, Error, PartialEq)]
pub enum SamplingError {
    #[error("track of {0} frames is shorter than a 32-frame clip")]
    TrackTooShort(usize),
    #[error("clip start {start} out of range for track of {len} frames")]
    StartOutOfRange { start: usize, len: usize },
    #[error("invalid time base: {0}")]
    InvalidTimeBase(String),
}

#[derive(Debug, Error, PartialEq)]
pub enum LossError {
    #[error("dimension mismatch: expected {expected}, got {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("shared spaces differ: {0:?} vs {1:?}")]
    SpaceMismatch(crate::losses::Space, crate::losses::Space),
    #[error("empty positive set for anchor {0}")]
    EmptyPositiveSet(usize),
    #[error("invalid batch: {0}")]
    InvalidBatch(String),
}

#[derive(Debug, Error, PartialEq)]
pub enum HeadError {
    #[error("dimension mismatch: expected {expected}, got {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("wrong modality: expected {expected}, got {found}")]
    WrongModality { expected: String, found: String },
    #[error("score {0} outside (0, 1)")]
    ScoreOutOfRange(f32),
    #[error("empty dataset")]
    EmptyDataset,
    #[error("label {0} is not 0 or 1")]
    BadLabel(u8),
}

#[derive(Debug, Error, PartialEq)]
pub enum EvalError {
    #[error("no scores given")]
    EmptyScores,
    #[error("scores from different videos: {0} and {1}")]
    MixedVideos(String, String),
    #[error("ROC-AUC needs both classes; got {positives} positives and {negatives} negatives")]
    SingleClass { positives: usize, negatives: usize },
    #[error("unknown video id {0}")]
    UnknownVideoId(String),
}

#[derive(Debug, Error, PartialEq)]
pub enum EnrichError {
    #[error("fake video {0} has no source id")]
    MissingSourceId(String),
    #[error("frame range {start}..{end} needs samples up to {needed} but stream has {available}")]
    RangeBeyondStream {
        start: usize,
        end: usize,
        needed: u64,
        available: usize,
    },
    #[error("frame range {start}..{end} is empty or reversed")]
    DegenerateRange { start: usize, end: usize },
}

/// Crate-level error wrapping every module error.
#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Tracking(#[from] TrackingError),
    #[error(transparent)]
    Sampling(#[from] SamplingError),
    #[error(transparent)]
    Loss(#[from] LossError),
    #[error(transparent)]
    Head(#[from] HeadError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error(transparent)]
    Enrich(#[from] EnrichError),
}

impl Error {
    /// Stable snake_case code used in structured CLI error output.
    pub fn code(&self) -> &'static str {
        match self {
            Error::Data(e) => match e {
                DataError::Io { .. } => "io",
                DataError::Parse { .. } => "parse_error",
                DataError::Invariant { .. } => "invariant_error",
                DataError::BadMagic { .. } => "bad_magic",
                DataError::UnsupportedDtype(_) => "unsupported_dtype",
                DataError::TruncatedPayload { .. } => "truncated_payload",
                DataError::DimOverflow(_) => "dim_overflow",
                DataError::LengthMismatch { .. } => "length_mismatch",
                DataError::NonMonotoneFrames { .. } => "non_monotone_frames",
                DataError::Csv(_) => "csv_error",
            },
            Error::Geometry(e) => geometry_code(e),
            Error::Tracking(e) => match e {
                TrackingError::NoFacesDetected => "no_faces_detected",
                TrackingError::BadOrdering { .. } => "bad_ordering",
                TrackingError::EvenWindow(_) => "even_window",
                TrackingError::InvalidConfig(_) => "invalid_config",
                TrackingError::MissingFrame(_) => "missing_frame",
                TrackingError::Geometry(g) => geometry_code(g),
            },
            Error::Sampling(e) => match e {
                SamplingError::TrackTooShort(_) => "track_too_short",
                SamplingError::StartOutOfRange { .. } => "start_out_of_range",
                SamplingError::InvalidTimeBase(_) => "invalid_time_base",
            },
            Error::Loss(e) => match e {
                LossError::DimensionMismatch { .. } => "dimension_mismatch",
                LossError::SpaceMismatch(..) => "space_mismatch",
                LossError::EmptyPositiveSet(_) => "empty_positive_set",
                LossError::InvalidBatch(_) => "invalid_batch",
            },
            Error::Head(e) => match e {
                HeadError::DimensionMismatch { .. } => "dimension_mismatch",
                HeadError::WrongModality { .. } => "wrong_modality",
                HeadError::ScoreOutOfRange(_) => "score_out_of_range",
                HeadError::EmptyDataset => "empty_dataset",
                HeadError::BadLabel(_) => "bad_label",
            },
            Error::Eval(e) => match e {
                EvalError::EmptyScores => "empty_scores",
                EvalError::MixedVideos(..) => "mixed_videos",
                EvalError::SingleClass { .. } => "single_class",
                EvalError::UnknownVideoId(_) => "unknown_video_id",
            },
            Error::Enrich(e) => match e {
                EnrichError::MissingSourceId(_) => "missing_source_id",
                EnrichError::RangeBeyondStream { .. } => "range_beyond_stream",
                EnrichError::DegenerateRange { .. } => "degenerate_range",
            },
        }
    }
}

fn geometry_code(e: &GeometryError) -> &'static str {
    match e {
        GeometryError::NonPositiveFactor(_) => "non_positive_factor",
        GeometryError::DegenerateConfiguration => "degenerate_configuration",
        GeometryError::EmptyFrame => "empty_frame",
        GeometryError::BadFrameBuffer { .. } => "bad_frame_buffer",
    }
}
