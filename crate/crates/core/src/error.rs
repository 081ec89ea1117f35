use thiserror::Error;

use crate::types::CameraId;

/// Construction-time invariant violations of domain types.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum ValidationError {
    #[error("camera id must not be empty")]
    EmptyCameraId,
    #[error("invalid bounding box {0:?}")]
    InvalidBox([f64; 4]),
    #[error("detection label must not be empty")]
    EmptyLabel,
    #[error("confidence {0} outside [0, 1]")]
    Confidence(f64),
    #[error("token budgets must satisfy 0 < followup ({followup}) <= base ({base}) <= baseline ({baseline})")]
    Schedule {
        base: u32,
        followup: u32,
        baseline: u32,
    },
    #[error("similarity threshold {0} outside [0, 1]")]
    Delta(f64),
    #[error("{0}")]
    Config(String),
}

#[derive(Debug, Error)]
pub enum ManifestError {
    #[error("line {line}: malformed record: {reason}")]
    MalformedRecord { line: usize, reason: String },
    #[error("line {line}: timestamp {ts_ms} does not increase past {previous_ms}")]
    NonMonotoneTimestamps {
        line: usize,
        ts_ms: u64,
        previous_ms: u64,
    },
    #[error("manifest contains no frames")]
    Empty,
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SegmentError {
    #[error("feed for camera {0} has no frames")]
    EmptyFeed(CameraId),
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum PromptError {
    #[error("follow-up prompt needs non-empty prior text")]
    EmptyPriorText,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum BackendError {
    #[error("backend unreachable: {0}")]
    Unreachable(String),
    #[error("backend returned status {status}: {body}")]
    Status { status: u16, body: String },
    #[error("invalid output budget {0}")]
    BudgetInvalid(u32),
    #[error("input text is empty")]
    EmptyText,
    #[error("request has no media locator")]
    MissingMedia,
    #[error("malformed backend response: {0}")]
    Malformed(String),
}

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("invalid ingestion config: {0}")]
    Config(String),
    #[error("no feed for base camera {0}")]
    MissingBaseCamera(CameraId),
    #[error("no feed for camera {0}")]
    MissingCamera(CameraId),
    #[error(transparent)]
    Segment(#[from] SegmentError),
    #[error("camera {camera} clip {clip_id}: {source}")]
    Backend {
        camera: CameraId,
        clip_id: u32,
        #[source]
        source: BackendError,
    },
    #[error("no base segment for base clip {0}")]
    MissingBaseSegment(u32),
    #[error("similarity thresholds must be sorted ascending")]
    UnsortedDeltas,
    #[error(transparent)]
    Validation(#[from] ValidationError),
}

#[derive(Debug, Error)]
pub enum RagError {
    #[error("document has no text to chunk")]
    EmptyDocument,
    #[error("index has no entries")]
    EmptyIndex,
    #[error("chunk {chunk_id}: {source}")]
    Embed {
        chunk_id: u64,
        #[source]
        source: BackendError,
    },
    #[error(transparent)]
    Backend(#[from] BackendError),
    #[error("embedding dimension {found} does not match index dimension {expected}")]
    Dimension { expected: usize, found: usize },
    #[error("index file line {line}: {reason}")]
    Format { line: usize, reason: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EvalError {
    #[error("no usages to summarize")]
    EmptyUsages,
    #[error("no base/follow-up segment pairs to compare")]
    NoPairs,
}
