//! Baseline and incremental multi-camera ingestion.
//!
//! Baseline mode describes every clip of every camera with the full prompt
//! at the baseline budget. Incremental mode describes the base camera's clip
//! first, then walks the remaining cameras in order: a clip similar enough
//! to the base clip is skipped, otherwise the VLM is asked only for objects
//! the earlier text has not covered, under the smaller follow-up budget.
//!
//! Latency is reported two ways. `total_latency_ms` sums every call, which
//! is what a single worker would take. `parallel_latency_ms` list-schedules
//! independent units (whole camera chains per clip, or single calls in
//! baseline mode) onto `workers` workers.

use std::collections::HashMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{BackendError, IngestError};
use crate::frontend::{
    align_cameras, segment_clips, AlignedClipPair, CameraFeedManifest, SegmenterConfig,
};
use crate::gateway::{DescribeRequest, VisionModel};
use crate::prompt::{
    base_prompt, baseline_prompt, budget_for, followup_prompt, AccumulationMode,
    AccumulationPolicy, Mode, PromptText,
};
use crate::similarity::{clip_similarity, should_skip};
use crate::types::{
    CameraId, ClipRecord, DocumentEntry, IntersectionDocument, NarrativeSegment, SegmentRole,
    SimilarityConfig, TokenBudgetSchedule,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IngestionConfig {
    pub mode: Mode,
    pub base_camera: CameraId,
    /// Processing order; the base camera comes first.
    pub camera_order: Vec<CameraId>,
    pub schedule: TokenBudgetSchedule,
    pub similarity: SimilarityConfig,
    pub accumulation: AccumulationPolicy,
    pub segmenter: SegmenterConfig,
    pub workers: usize,
}

impl IngestionConfig {
    /// Defaults for everything but the mode and the camera order; the first
    /// camera becomes the base camera.
    pub fn new(mode: Mode, camera_order: Vec<CameraId>) -> Result<Self, IngestError> {
        let base_camera = camera_order
            .first()
            .cloned()
            .ok_or_else(|| IngestError::Config("camera order is empty".into()))?;
        let cfg = Self {
            mode,
            base_camera,
            camera_order,
            schedule: TokenBudgetSchedule::default(),
            similarity: SimilarityConfig::default(),
            accumulation: AccumulationPolicy::default(),
            segmenter: SegmenterConfig::default(),
            workers: 1,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), IngestError> {
        let Some(first) = self.camera_order.first() else {
            return Err(IngestError::Config("camera order is empty".into()));
        };
        if *first != self.base_camera {
            return Err(IngestError::Config(format!(
                "base camera {} must come first in the camera order",
                self.base_camera
            )));
        }
        for (i, c) in self.camera_order.iter().enumerate() {
            if self.camera_order[..i].contains(c) {
                return Err(IngestError::Config(format!("camera {c} listed twice")));
            }
        }
        if self.workers == 0 {
            return Err(IngestError::Config("workers must be at least 1".into()));
        }
        Ok(())
    }

    pub fn with_mode(&self, mode: Mode) -> Self {
        Self {
            mode,
            ..self.clone()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClipFailure {
    pub camera: CameraId,
    pub clip_id: u32,
    pub error: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IngestionReport {
    pub config: IngestionConfig,
    pub document: IntersectionDocument,
    pub segments: Vec<NarrativeSegment>,
    pub total_latency_ms: u64,
    pub parallel_latency_ms: u64,
    pub vlm_calls: u64,
    pub skipped_clips: u64,
    /// Base-camera calls that failed; their clips carry no text.
    pub failed_clips: Vec<ClipFailure>,
}

impl IngestionReport {
    /// Follow-up clips that were sent to the VLM.
    pub fn processed_followups(&self) -> u64 {
        self.segments
            .iter()
            .filter(|s| s.role == SegmentRole::Followup && !(s.skipped && s.error.is_none()))
            .count() as u64
    }

    pub fn segments_for<'a>(
        &'a self,
        camera: &'a CameraId,
    ) -> impl Iterator<Item = &'a NarrativeSegment> + 'a {
        self.segments.iter().filter(move |s| &s.camera == camera)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpeedupSummary {
    pub baseline_ms: u64,
    pub trafficlens_ms: u64,
    pub ratio: f64,
}

struct Plan {
    pairs: Vec<AlignedClipPair>,
    /// Clips per camera, in `camera_order`.
    clips: Vec<Vec<ClipRecord>>,
}

fn plan(feeds: &[CameraFeedManifest], cfg: &IngestionConfig) -> Result<Plan, IngestError> {
    cfg.validate()?;
    let feed_for = |camera: &CameraId| feeds.iter().find(|f| &f.camera == camera);
    if feed_for(&cfg.base_camera).is_none() {
        return Err(IngestError::MissingBaseCamera(cfg.base_camera.clone()));
    }
    let clips = cfg
        .camera_order
        .iter()
        .map(|camera| {
            let feed =
                feed_for(camera).ok_or_else(|| IngestError::MissingCamera(camera.clone()))?;
            Ok(segment_clips(feed, &cfg.segmenter)?)
        })
        .collect::<Result<Vec<_>, IngestError>>()?;
    let others: Vec<(CameraId, Vec<ClipRecord>)> = cfg.camera_order[1..]
        .iter()
        .cloned()
        .zip(clips[1..].iter().cloned())
        .collect();
    let pairs = align_cameras(&clips[0], &others);
    Ok(Plan { pairs, clips })
}

fn describe(
    vlm: &dyn VisionModel,
    clip: &ClipRecord,
    prompt: PromptText,
    budget: u32,
) -> Result<crate::gateway::Generation, BackendError> {
    vlm.describe(&DescribeRequest {
        media_ref: clip.key_frame.media_ref.clone(),
        detections: clip.detections.clone(),
        prompt,
        max_output_tokens: budget,
    })
}

fn described_segment(
    clip: &ClipRecord,
    base_clip_id: u32,
    role: SegmentRole,
    budget: u32,
    result: Result<crate::gateway::Generation, BackendError>,
) -> NarrativeSegment {
    match result {
        Ok(g) => NarrativeSegment {
            clip_id: clip.clip_id,
            camera: clip.camera.clone(),
            base_clip_id,
            role,
            text: g.text,
            prompt_tokens: g.usage.prompt_tokens,
            output_tokens: g.usage.output_tokens,
            max_output_tokens: budget,
            latency_ms: g.usage.latency_ms,
            skipped: false,
            similarity: None,
            error: None,
        },
        Err(e) => failed_segment(clip, base_clip_id, role, budget, e.to_string()),
    }
}

/// Base failures stay unskipped with no text; follow-up failures degrade to
/// a skip carrying the error.
fn failed_segment(
    clip: &ClipRecord,
    base_clip_id: u32,
    role: SegmentRole,
    budget: u32,
    error: String,
) -> NarrativeSegment {
    NarrativeSegment {
        clip_id: clip.clip_id,
        camera: clip.camera.clone(),
        base_clip_id,
        role,
        text: String::new(),
        prompt_tokens: 0,
        output_tokens: 0,
        max_output_tokens: budget,
        latency_ms: 0,
        skipped: role == SegmentRole::Followup,
        similarity: None,
        error: Some(error),
    }
}

/// One unit of work and its outcome.
struct Outcome {
    segments: Vec<NarrativeSegment>,
    calls: u64,
}

fn run_chain(pair: &AlignedClipPair, cfg: &IngestionConfig, vlm: &dyn VisionModel) -> Outcome {
    let base = &pair.base;
    let base_budget = budget_for(0, &cfg.schedule, Mode::TrafficLens);
    let base_seg = described_segment(
        base,
        base.clip_id,
        SegmentRole::Base,
        base_budget,
        describe(vlm, base, base_prompt(), base_budget),
    );
    let mut out = Outcome {
        calls: 1,
        segments: Vec::with_capacity(1 + pair.others.len()),
    };
    if base_seg.error.is_some() {
        out.segments.push(base_seg);
        return out;
    }
    let mut prior: Vec<String> = vec![base_seg.text.clone()];
    out.segments.push(base_seg);

    for (i, (_, other)) in pair.others.iter().enumerate() {
        let Some(clip) = other else { continue };
        let sim = clip_similarity(base, clip);
        if should_skip(&sim, &cfg.similarity) {
            out.segments.push(NarrativeSegment::skipped(
                clip.clip_id,
                clip.camera.clone(),
                base.clip_id,
                Some(sim.score),
            ));
            continue;
        }
        let budget = budget_for(i + 1, &cfg.schedule, Mode::TrafficLens);
        let context = match cfg.accumulation.mode() {
            AccumulationMode::BaseOnly => prior[0].clone(),
            AccumulationMode::Accumulate => prior.join(" "),
        };
        let mut seg = match followup_prompt(&context, &cfg.accumulation) {
            Ok(prompt) => {
                out.calls += 1;
                described_segment(
                    clip,
                    base.clip_id,
                    SegmentRole::Followup,
                    budget,
                    describe(vlm, clip, prompt, budget),
                )
            }
            Err(e) => failed_segment(
                clip,
                base.clip_id,
                SegmentRole::Followup,
                budget,
                e.to_string(),
            ),
        };
        seg.similarity = Some(sim.score);
        if seg.contributes() {
            prior.push(seg.text.clone());
        }
        out.segments.push(seg);
    }
    out
}

fn baseline_call(
    clip: &ClipRecord,
    rank: usize,
    base_clip_id: u32,
    cfg: &IngestionConfig,
    vlm: &dyn VisionModel,
) -> Outcome {
    let budget = budget_for(rank, &cfg.schedule, Mode::Baseline);
    let role = if rank == 0 {
        SegmentRole::Base
    } else {
        SegmentRole::Followup
    };
    Outcome {
        segments: vec![described_segment(
            clip,
            base_clip_id,
            role,
            budget,
            describe(vlm, clip, baseline_prompt(), budget),
        )],
        calls: 1,
    }
}

/// Makespan of jobs assigned in order to the least-loaded worker.
fn list_schedule(jobs: impl IntoIterator<Item = u64>, workers: usize) -> u64 {
    let mut loads = vec![0u64; workers.max(1)];
    for job in jobs {
        let slot = loads
            .iter()
            .enumerate()
            .min_by_key(|(i, l)| (**l, *i))
            .map(|(i, _)| i)
            .expect("at least one worker");
        loads[slot] += job;
    }
    loads.into_iter().max().unwrap_or(0)
}

fn run_units<T: Sync>(
    units: &[T],
    workers: usize,
    f: impl Fn(&T) -> Outcome + Sync + Send,
) -> Vec<Outcome> {
    if workers <= 1 {
        return units.iter().map(f).collect();
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .expect("thread pool");
    pool.install(|| units.par_iter().map(f).collect())
}

/// Runs one ingestion over the given feeds.
pub fn ingest(
    feeds: &[CameraFeedManifest],
    cfg: &IngestionConfig,
    vlm: &dyn VisionModel,
) -> Result<IngestionReport, IngestError> {
    let plan = plan(feeds, cfg)?;

    let outcomes = match cfg.mode {
        Mode::TrafficLens => run_units(&plan.pairs, cfg.workers, |p| run_chain(p, cfg, vlm)),
        Mode::Baseline => {
            // Map every aligned other clip back to its base clip.
            let mut base_of: HashMap<(&CameraId, u32), u32> = HashMap::new();
            for pair in &plan.pairs {
                for (cam, clip) in &pair.others {
                    if let Some(c) = clip {
                        base_of.insert((cam, c.clip_id), pair.base.clip_id);
                    }
                }
            }
            let jobs: Vec<(usize, &ClipRecord, u32)> = plan
                .clips
                .iter()
                .enumerate()
                .flat_map(|(rank, clips)| {
                    let base_of = &base_of;
                    clips.iter().map(move |c| {
                        let base_id = if rank == 0 {
                            c.clip_id
                        } else {
                            // Unaligned clips keep their own id as anchor.
                            base_of
                                .get(&(&c.camera, c.clip_id))
                                .copied()
                                .unwrap_or(c.clip_id)
                        };
                        (rank, c, base_id)
                    })
                })
                .collect();
            run_units(&jobs, cfg.workers, |(rank, clip, base_id)| {
                baseline_call(clip, *rank, *base_id, cfg, vlm)
            })
        }
    };

    let parallel_latency_ms = list_schedule(
        outcomes
            .iter()
            .map(|o| o.segments.iter().map(|s| s.latency_ms).sum()),
        cfg.workers,
    );
    let vlm_calls = outcomes.iter().map(|o| o.calls).sum();
    let segments: Vec<NarrativeSegment> = outcomes.into_iter().flat_map(|o| o.segments).collect();
    let total_latency_ms = segments.iter().map(|s| s.latency_ms).sum();
    let skipped_clips = segments
        .iter()
        .filter(|s| s.skipped && s.error.is_none())
        .count() as u64;
    let failed_clips = segments
        .iter()
        .filter(|s| s.role == SegmentRole::Base)
        .filter_map(|s| {
            s.error.as_ref().map(|e| ClipFailure {
                camera: s.camera.clone(),
                clip_id: s.clip_id,
                error: e.clone(),
            })
        })
        .collect();
    let document = assemble_document(&plan.pairs, &segments)?;

    Ok(IngestionReport {
        config: cfg.clone(),
        document,
        segments,
        total_latency_ms,
        parallel_latency_ms,
        vlm_calls,
        skipped_clips,
        failed_clips,
    })
}

/// One entry per base clip, time-sorted: the base text, then a space and
/// the text of each contributing follow-up in camera order.
pub fn assemble_document(
    pairs: &[AlignedClipPair],
    segments: &[NarrativeSegment],
) -> Result<IntersectionDocument, IngestError> {
    let by_key: HashMap<(&CameraId, u32), &NarrativeSegment> = segments
        .iter()
        .map(|s| ((&s.camera, s.clip_id), s))
        .collect();
    let mut ordered: Vec<&AlignedClipPair> = pairs.iter().collect();
    ordered.sort_by_key(|p| p.base.start_ms);

    let mut entries = Vec::with_capacity(ordered.len());
    for pair in ordered {
        let base = by_key
            .get(&(&pair.base.camera, pair.base.clip_id))
            .ok_or(IngestError::MissingBaseSegment(pair.base.clip_id))?;
        let mut text = base.text.clone();
        for (camera, clip) in &pair.others {
            let Some(clip) = clip else { continue };
            if let Some(seg) = by_key.get(&(camera, clip.clip_id)) {
                if seg.contributes() {
                    if !text.is_empty() {
                        text.push(' ');
                    }
                    text.push_str(&seg.text);
                }
            }
        }
        entries.push(DocumentEntry {
            start_ms: pair.base.start_ms,
            end_ms: pair.base.end_ms,
            text,
        });
    }
    Ok(IntersectionDocument { entries })
}

/// Runs both modes on the same feeds and compares summed call latency.
pub fn compare_modes(
    feeds: &[CameraFeedManifest],
    baseline_cfg: &IngestionConfig,
    trafficlens_cfg: &IngestionConfig,
    vlm: &dyn VisionModel,
) -> Result<SpeedupSummary, IngestError> {
    let baseline = ingest(feeds, &baseline_cfg.with_mode(Mode::Baseline), vlm)?;
    let fast = ingest(feeds, &trafficlens_cfg.with_mode(Mode::TrafficLens), vlm)?;
    Ok(speedup(baseline.total_latency_ms, fast.total_latency_ms))
}

pub fn speedup(baseline_ms: u64, trafficlens_ms: u64) -> SpeedupSummary {
    let ratio = match (baseline_ms, trafficlens_ms) {
        (0, 0) => 1.0,
        (_, 0) => f64::INFINITY,
        (b, t) => b as f64 / t as f64,
    };
    SpeedupSummary {
        baseline_ms,
        trafficlens_ms,
        ratio,
    }
}
