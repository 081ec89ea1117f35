//! Multi-camera intersection video to a queryable text knowledge base.
//!
//! Each camera's detection manifest is cut into clips and time-aligned with
//! the base camera. A vision-language model then describes every clip,
//! either naively (every camera, full prompt, large budget) or
//! incrementally: the base camera gets the full prompt and a larger budget,
//! later cameras are asked only for objects not yet described under a
//! smaller budget, and follow-up clips whose detections overlap the base
//! clip strongly enough are skipped. The resulting timestamped document is
//! chunked, embedded and searched exactly to answer questions with an LLM.
//!
//! ```text
//! manifests ─▶ frontend ─▶ ingest ─▶ IntersectionDocument ─▶ rag ─▶ answer
//!                 │           │  ▲
//!                 │           │  └── similarity (skip redundant clips)
//!                 │           └───── prompt (text + token budget per rank)
//!                 └───────────────── gateway (VLM / embedder / LLM backends)
//! ```

pub mod error;
pub mod eval;
pub mod frontend;
pub mod gateway;
pub mod ingest;
pub mod prompt;
pub mod rag;
pub mod similarity;
pub mod synth;
pub mod types;

pub use error::{
    BackendError, EvalError, IngestError, ManifestError, PromptError, RagError, SegmentError,
    ValidationError,
};
pub use frontend::{
    align_clips, parse_manifest, segment_clips, serialize_manifest, AlignedClipPair,
    CameraFeedManifest, SegmenterConfig,
};
pub use gateway::{
    DescribeRequest, Embedder, Generation, HttpBackend, LanguageModel, MockBackend,
    MockLatencyModel, ModelUsage, UsageLedger, VisionModel,
};
pub use ingest::{
    assemble_document, compare_modes, ingest, IngestionConfig, IngestionReport, SpeedupSummary,
};
pub use prompt::{AccumulationMode, AccumulationPolicy, Mode, PromptRole, PromptText};
pub use rag::{
    answer, build_index, chunk_document, retrieve, KnowledgeChunk, RetrievalResult, VectorIndex,
};
pub use similarity::{clip_similarity, iou, should_skip, ClipSimilarity, DetectionMatch};
pub use types::{
    format_timestamp, validate_clip_sequence, BoundingBox, CameraId, ClipRecord, Detection,
    DocumentEntry, FrameRecord, IntersectionDocument, NarrativeSegment, SegmentRole,
    SimilarityConfig, TokenBudgetSchedule,
};
