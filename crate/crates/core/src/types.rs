//! Shared domain vocabulary: cameras, boxes, detections, clips, budgets and
//! the assembled intersection document.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::ValidationError;

/// Short camera identifier, e.g. `"left"` or `"right"`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct CameraId(String);

impl CameraId {
    pub fn new(value: impl Into<String>) -> Result<Self, ValidationError> {
        let value = value.into();
        if value.is_empty() {
            return Err(ValidationError::EmptyCameraId);
        }
        Ok(Self(value))
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl TryFrom<String> for CameraId {
    type Error = ValidationError;

    fn try_from(value: String) -> Result<Self, Self::Error> {
        Self::new(value)
    }
}

impl From<CameraId> for String {
    fn from(id: CameraId) -> Self {
        id.0
    }
}

impl fmt::Display for CameraId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

/// Axis-aligned box in a camera's own pixel space.
///
/// Serialized as `[x_min, y_min, x_max, y_max]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "[f64; 4]", into = "[f64; 4]")]
pub struct BoundingBox {
    x_min: f64,
    y_min: f64,
    x_max: f64,
    y_max: f64,
}

impl BoundingBox {
    pub fn new(x_min: f64, y_min: f64, x_max: f64, y_max: f64) -> Result<Self, ValidationError> {
        let coords = [x_min, y_min, x_max, y_max];
        if coords.iter().any(|c| !c.is_finite() || *c < 0.0) || x_min >= x_max || y_min >= y_max {
            return Err(ValidationError::InvalidBox(coords));
        }
        Ok(Self {
            x_min,
            y_min,
            x_max,
            y_max,
        })
    }

    pub fn x_min(&self) -> f64 {
        self.x_min
    }

    pub fn y_min(&self) -> f64 {
        self.y_min
    }

    pub fn x_max(&self) -> f64 {
        self.x_max
    }

    pub fn y_max(&self) -> f64 {
        self.y_max
    }

    pub fn width(&self) -> f64 {
        self.x_max - self.x_min
    }

    pub fn height(&self) -> f64 {
        self.y_max - self.y_min
    }

    pub fn area(&self) -> f64 {
        self.width() * self.height()
    }

    pub fn center(&self) -> (f64, f64) {
        (
            (self.x_min + self.x_max) / 2.0,
            (self.y_min + self.y_max) / 2.0,
        )
    }
}

impl TryFrom<[f64; 4]> for BoundingBox {
    type Error = ValidationError;

    fn try_from(c: [f64; 4]) -> Result<Self, Self::Error> {
        Self::new(c[0], c[1], c[2], c[3])
    }
}

impl From<BoundingBox> for [f64; 4] {
    fn from(b: BoundingBox) -> Self {
        [b.x_min, b.y_min, b.x_max, b.y_max]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawDetection", into = "RawDetection")]
pub struct Detection {
    label: String,
    bbox: BoundingBox,
    confidence: f64,
}

impl Detection {
    pub fn new(
        label: impl Into<String>,
        bbox: BoundingBox,
        confidence: f64,
    ) -> Result<Self, ValidationError> {
        let label = label.into();
        if label.trim().is_empty() {
            return Err(ValidationError::EmptyLabel);
        }
        if !(0.0..=1.0).contains(&confidence) {
            return Err(ValidationError::Confidence(confidence));
        }
        Ok(Self {
            label,
            bbox,
            confidence,
        })
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    pub fn bbox(&self) -> &BoundingBox {
        &self.bbox
    }

    pub fn confidence(&self) -> f64 {
        self.confidence
    }
}

/// Wire shape of a detection inside a manifest record.
#[derive(Serialize, Deserialize)]
struct RawDetection {
    label: String,
    #[serde(rename = "box")]
    bbox: BoundingBox,
    conf: f64,
}

impl TryFrom<RawDetection> for Detection {
    type Error = ValidationError;

    fn try_from(raw: RawDetection) -> Result<Self, Self::Error> {
        Detection::new(raw.label, raw.bbox, raw.conf)
    }
}

impl From<Detection> for RawDetection {
    fn from(d: Detection) -> Self {
        RawDetection {
            label: d.label,
            bbox: d.bbox,
            conf: d.confidence,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameRecord {
    pub camera: CameraId,
    pub timestamp_ms: u64,
    /// Locator of the frame image. Only the mock backend runs without one.
    pub media_ref: Option<String>,
    pub detections: Vec<Detection>,
}

/// A time slice `[start_ms, end_ms)` of one camera's feed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClipRecord {
    pub clip_id: u32,
    pub camera: CameraId,
    pub start_ms: u64,
    pub end_ms: u64,
    pub key_frame: FrameRecord,
    pub detections: Vec<Detection>,
}

impl ClipRecord {
    pub fn duration_ms(&self) -> u64 {
        self.end_ms.saturating_sub(self.start_ms)
    }

    /// Length of the intersection of the two half-open intervals.
    pub fn overlap_ms(&self, other: &ClipRecord) -> u64 {
        let start = self.start_ms.max(other.start_ms);
        let end = self.end_ms.min(other.end_ms);
        end.saturating_sub(start)
    }
}

/// Maximum output tokens per camera rank.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "RawSchedule", into = "RawSchedule")]
pub struct TokenBudgetSchedule {
    base_limit: u32,
    followup_limit: u32,
    baseline_limit: u32,
}

pub const DEFAULT_BASELINE_LIMIT: u32 = 256;

impl TokenBudgetSchedule {
    pub fn new(
        base_limit: u32,
        followup_limit: u32,
        baseline_limit: u32,
    ) -> Result<Self, ValidationError> {
        if followup_limit == 0 || followup_limit > base_limit || base_limit > baseline_limit {
            return Err(ValidationError::Schedule {
                base: base_limit,
                followup: followup_limit,
                baseline: baseline_limit,
            });
        }
        Ok(Self {
            base_limit,
            followup_limit,
            baseline_limit,
        })
    }

    /// Budget applied to the base camera.
    pub fn base_limit(&self) -> u32 {
        self.base_limit
    }

    /// Budget applied to every follow-up camera.
    pub fn followup_limit(&self) -> u32 {
        self.followup_limit
    }

    /// Budget applied to every call in baseline mode.
    pub fn baseline_limit(&self) -> u32 {
        self.baseline_limit
    }
}

impl Default for TokenBudgetSchedule {
    fn default() -> Self {
        Self {
            base_limit: 80,
            followup_limit: 32,
            baseline_limit: DEFAULT_BASELINE_LIMIT,
        }
    }
}

#[derive(Serialize, Deserialize)]
struct RawSchedule {
    base_limit: u32,
    followup_limit: u32,
    #[serde(default = "default_baseline_limit")]
    baseline_limit: u32,
}

fn default_baseline_limit() -> u32 {
    DEFAULT_BASELINE_LIMIT
}

impl TryFrom<RawSchedule> for TokenBudgetSchedule {
    type Error = ValidationError;

    fn try_from(raw: RawSchedule) -> Result<Self, Self::Error> {
        Self::new(raw.base_limit, raw.followup_limit, raw.baseline_limit)
    }
}

impl From<TokenBudgetSchedule> for RawSchedule {
    fn from(s: TokenBudgetSchedule) -> Self {
        RawSchedule {
            base_limit: s.base_limit,
            followup_limit: s.followup_limit,
            baseline_limit: s.baseline_limit,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SegmentRole {
    Base,
    Followup,
}

/// Text produced for one (clip, camera) pair, or a record of its skip.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NarrativeSegment {
    pub clip_id: u32,
    pub camera: CameraId,
    /// Clip id of the base-camera clip this segment is aligned with.
    pub base_clip_id: u32,
    pub role: SegmentRole,
    pub text: String,
    pub prompt_tokens: u32,
    pub output_tokens: u32,
    /// Budget the call was issued with; 0 when no call was made.
    pub max_output_tokens: u32,
    pub latency_ms: u64,
    pub skipped: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub similarity: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

impl NarrativeSegment {
    /// A follow-up clip judged redundant: no call, no text.
    pub fn skipped(
        clip_id: u32,
        camera: CameraId,
        base_clip_id: u32,
        similarity: Option<f64>,
    ) -> Self {
        Self {
            clip_id,
            camera,
            base_clip_id,
            role: SegmentRole::Followup,
            text: String::new(),
            prompt_tokens: 0,
            output_tokens: 0,
            max_output_tokens: 0,
            latency_ms: 0,
            skipped: true,
            similarity,
            error: None,
        }
    }

    /// Whether the segment contributes text to the document.
    pub fn contributes(&self) -> bool {
        !self.skipped && self.error.is_none() && !self.text.is_empty()
    }
}

/// One clip window of the intersection document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DocumentEntry {
    pub start_ms: u64,
    pub end_ms: u64,
    /// Base text followed by each contributing follow-up text.
    pub text: String,
}

impl DocumentEntry {
    pub fn header(&self) -> String {
        format!("{} :", format_timestamp(self.start_ms))
    }

    /// `"HH:MM:SS :\n{text}"`
    pub fn render(&self) -> String {
        format!("{}\n{}", self.header(), self.text)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct IntersectionDocument {
    pub entries: Vec<DocumentEntry>,
}

impl IntersectionDocument {
    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn render(&self) -> String {
        self.entries
            .iter()
            .map(DocumentEntry::render)
            .collect::<Vec<_>>()
            .join("\n\n")
    }
}

/// Clip-similarity threshold; a follow-up clip scoring at or above `delta`
/// is skipped.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawSimilarity", into = "RawSimilarity")]
pub struct SimilarityConfig {
    delta: f64,
}

pub const DEFAULT_DELTA: f64 = 0.21;

impl SimilarityConfig {
    pub fn new(delta: f64) -> Result<Self, ValidationError> {
        if !(0.0..=1.0).contains(&delta) {
            return Err(ValidationError::Delta(delta));
        }
        Ok(Self { delta })
    }

    pub fn delta(&self) -> f64 {
        self.delta
    }
}

impl Default for SimilarityConfig {
    fn default() -> Self {
        Self {
            delta: DEFAULT_DELTA,
        }
    }
}

#[derive(Serialize, Deserialize)]
struct RawSimilarity {
    delta: f64,
}

impl TryFrom<RawSimilarity> for SimilarityConfig {
    type Error = ValidationError;

    fn try_from(raw: RawSimilarity) -> Result<Self, Self::Error> {
        Self::new(raw.delta)
    }
}

impl From<SimilarityConfig> for RawSimilarity {
    fn from(s: SimilarityConfig) -> Self {
        RawSimilarity { delta: s.delta }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ClipViolation {
    EmptyRange { clip_id: u32 },
    Overlap { first: u32, second: u32 },
    Disorder { first: u32, second: u32 },
    CameraMismatch { clip_id: u32 },
}

impl fmt::Display for ClipViolation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::EmptyRange { clip_id } => write!(f, "empty time range in clip {clip_id}"),
            Self::Overlap { first, second } => {
                write!(f, "overlap between clip {first} and {second}")
            }
            Self::Disorder { first, second } => {
                write!(f, "clip {second} starts before clip {first}")
            }
            Self::CameraMismatch { clip_id } => {
                write!(f, "clip {clip_id} belongs to a different camera")
            }
        }
    }
}

/// Checks that clips of one camera are non-empty, sorted and pairwise
/// disjoint. An empty result means the sequence is valid.
pub fn validate_clip_sequence(clips: &[ClipRecord]) -> Vec<ClipViolation> {
    let mut violations = Vec::new();
    let Some(first) = clips.first() else {
        return violations;
    };
    for clip in clips {
        if clip.camera != first.camera {
            violations.push(ClipViolation::CameraMismatch {
                clip_id: clip.clip_id,
            });
        }
        if clip.start_ms >= clip.end_ms {
            violations.push(ClipViolation::EmptyRange {
                clip_id: clip.clip_id,
            });
        }
    }
    for pair in clips.windows(2) {
        let (a, b) = (&pair[0], &pair[1]);
        if b.start_ms < a.start_ms {
            violations.push(ClipViolation::Disorder {
                first: a.clip_id,
                second: b.clip_id,
            });
        } else if b.start_ms < a.end_ms && a.start_ms < a.end_ms {
            violations.push(ClipViolation::Overlap {
                first: a.clip_id,
                second: b.clip_id,
            });
        }
    }
    violations
}

/// Formats a feed offset as zero-padded `HH:MM:SS`; hours are unbounded.
pub fn format_timestamp(ms: u64) -> String {
    let secs = ms / 1000;
    format!(
        "{:02}:{:02}:{:02}",
        secs / 3600,
        (secs / 60) % 60,
        secs % 60
    )
}
