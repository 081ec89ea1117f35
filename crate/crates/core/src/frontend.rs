//! Per-camera manifests, clip segmentation and cross-camera alignment.
//!
//! A manifest is newline-delimited JSON, one frame per line:
//!
//! ```text
//! {"camera":"left","ts_ms":3000,"media":"frames/left/000001.jpg","detections":[{"label":"car","box":[10.0,20.0,110.0,90.0],"conf":0.91}]}
//! ```
//!
//! Field order is irrelevant, `media` is optional and unknown fields are
//! ignored.

use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use crate::error::{ManifestError, SegmentError, ValidationError};
use crate::similarity::{detection_similarity, iou};
use crate::types::{CameraId, ClipRecord, Detection, FrameRecord};

/// Frame rate assumed for a single-frame manifest: one frame every three
/// seconds.
pub const DEFAULT_FRAME_RATE_HZ: f64 = 1.0 / 3.0;

/// IoU above which two same-label detections within one clip are the same
/// object.
pub const MERGE_IOU: f64 = 0.8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CameraFeedManifest {
    pub camera: CameraId,
    pub frame_rate_hz: f64,
    pub frames: Vec<FrameRecord>,
}

impl CameraFeedManifest {
    /// Builds a manifest from frames, inferring the frame rate from the
    /// median spacing of timestamps.
    pub fn from_frames(camera: CameraId, frames: Vec<FrameRecord>) -> Self {
        let frame_rate_hz = infer_frame_rate(&frames);
        Self {
            camera,
            frame_rate_hz,
            frames,
        }
    }

    /// Nominal spacing between frames, at least 1 ms.
    pub fn frame_period_ms(&self) -> u64 {
        ((1000.0 / self.frame_rate_hz).round() as u64).max(1)
    }
}

fn infer_frame_rate(frames: &[FrameRecord]) -> f64 {
    let mut gaps: Vec<u64> = frames
        .windows(2)
        .map(|w| w[1].timestamp_ms.saturating_sub(w[0].timestamp_ms))
        .filter(|g| *g > 0)
        .collect();
    if gaps.is_empty() {
        return DEFAULT_FRAME_RATE_HZ;
    }
    gaps.sort_unstable();
    1000.0 / gaps[gaps.len() / 2] as f64
}

#[derive(Serialize, Deserialize)]
struct ManifestRecord {
    camera: CameraId,
    ts_ms: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    media: Option<String>,
    #[serde(default)]
    detections: Vec<Detection>,
}

/// Reads a newline-delimited manifest. Blank lines are skipped.
pub fn parse_manifest<R: BufRead>(reader: R) -> Result<CameraFeedManifest, ManifestError> {
    let mut camera: Option<CameraId> = None;
    let mut frames: Vec<FrameRecord> = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let line_no = idx + 1;
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let record: ManifestRecord =
            serde_json::from_str(&line).map_err(|e| ManifestError::MalformedRecord {
                line: line_no,
                reason: e.to_string(),
            })?;
        match &camera {
            None => camera = Some(record.camera.clone()),
            Some(c) if *c != record.camera => {
                return Err(ManifestError::MalformedRecord {
                    line: line_no,
                    reason: format!("camera {} differs from feed camera {c}", record.camera),
                })
            }
            Some(_) => {}
        }
        if let Some(prev) = frames.last() {
            if record.ts_ms <= prev.timestamp_ms {
                return Err(ManifestError::NonMonotoneTimestamps {
                    line: line_no,
                    ts_ms: record.ts_ms,
                    previous_ms: prev.timestamp_ms,
                });
            }
        }
        frames.push(FrameRecord {
            camera: record.camera,
            timestamp_ms: record.ts_ms,
            media_ref: record.media,
            detections: record.detections,
        });
    }
    let camera = camera.ok_or(ManifestError::Empty)?;
    Ok(CameraFeedManifest::from_frames(camera, frames))
}

/// Writes the manifest in the line format accepted by [`parse_manifest`].
pub fn write_manifest<W: Write>(manifest: &CameraFeedManifest, mut out: W) -> std::io::Result<()> {
    for frame in &manifest.frames {
        let record = ManifestRecord {
            camera: frame.camera.clone(),
            ts_ms: frame.timestamp_ms,
            media: frame.media_ref.clone(),
            detections: frame.detections.clone(),
        };
        serde_json::to_writer(&mut out, &record)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

pub fn serialize_manifest(manifest: &CameraFeedManifest) -> Vec<u8> {
    let mut buf = Vec::new();
    write_manifest(manifest, &mut buf).expect("writing to a Vec cannot fail");
    buf
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawSegmenter", into = "RawSegmenter")]
pub struct SegmenterConfig {
    window_ms: u64,
    change_threshold: f64,
}

impl SegmenterConfig {
    pub fn new(window_ms: u64, change_threshold: f64) -> Result<Self, ValidationError> {
        if window_ms < 1000 {
            return Err(ValidationError::Config(format!(
                "segment window {window_ms} ms is below 1000 ms"
            )));
        }
        if !(0.0..=1.0).contains(&change_threshold) {
            return Err(ValidationError::Config(format!(
                "change threshold {change_threshold} outside [0, 1]"
            )));
        }
        Ok(Self {
            window_ms,
            change_threshold,
        })
    }

    pub fn window_ms(&self) -> u64 {
        self.window_ms
    }

    pub fn change_threshold(&self) -> f64 {
        self.change_threshold
    }
}

impl Default for SegmenterConfig {
    fn default() -> Self {
        Self {
            window_ms: 10_000,
            change_threshold: 0.5,
        }
    }
}

#[derive(Serialize, Deserialize)]
struct RawSegmenter {
    #[serde(default = "default_window")]
    window_ms: u64,
    #[serde(default = "default_change")]
    change_threshold: f64,
}

fn default_window() -> u64 {
    10_000
}

fn default_change() -> f64 {
    0.5
}

impl TryFrom<RawSegmenter> for SegmenterConfig {
    type Error = ValidationError;

    fn try_from(raw: RawSegmenter) -> Result<Self, Self::Error> {
        Self::new(raw.window_ms, raw.change_threshold)
    }
}

impl From<SegmenterConfig> for RawSegmenter {
    fn from(c: SegmenterConfig) -> Self {
        RawSegmenter {
            window_ms: c.window_ms,
            change_threshold: c.change_threshold,
        }
    }
}

/// Union of detections across frames. A detection is dropped when an
/// already kept detection has the same label and IoU above [`MERGE_IOU`];
/// the kept one takes the higher confidence.
pub fn merge_detections<'a, I>(frames: I) -> Vec<Detection>
where
    I: IntoIterator<Item = &'a FrameRecord>,
{
    let mut merged: Vec<Detection> = Vec::new();
    for frame in frames {
        for d in &frame.detections {
            let dup = merged
                .iter_mut()
                .find(|m| m.label() == d.label() && iou(m.bbox(), d.bbox()) > MERGE_IOU);
            match dup {
                Some(m) if d.confidence() > m.confidence() => {
                    *m = Detection::new(m.label(), *m.bbox(), d.confidence())
                        .expect("fields already validated");
                }
                Some(_) => {}
                None => merged.push(d.clone()),
            }
        }
    }
    merged
}

/// Splits a feed into non-overlapping clips.
///
/// A new clip starts at a frame once `window_ms` has elapsed since the last
/// boundary, or when the detection-set change score against the previous
/// frame (one minus their similarity) exceeds `change_threshold`. The last
/// clip ends one frame period after the final frame. Each clip's key frame
/// is the frame nearest the middle of its interval.
pub fn segment_clips(
    feed: &CameraFeedManifest,
    cfg: &SegmenterConfig,
) -> Result<Vec<ClipRecord>, SegmentError> {
    let frames = &feed.frames;
    if frames.is_empty() {
        return Err(SegmentError::EmptyFeed(feed.camera.clone()));
    }

    let mut starts = vec![0usize];
    let mut boundary_ts = frames[0].timestamp_ms;
    for i in 1..frames.len() {
        let ts = frames[i].timestamp_ms;
        let elapsed = ts - boundary_ts >= cfg.window_ms;
        let changed = || {
            let sim = detection_similarity(&frames[i - 1].detections, &frames[i].detections);
            1.0 - sim.score > cfg.change_threshold
        };
        if elapsed || changed() {
            starts.push(i);
            boundary_ts = ts;
        }
    }

    let end_of_feed = frames[frames.len() - 1].timestamp_ms + feed.frame_period_ms();
    let mut clips = Vec::with_capacity(starts.len());
    for (n, &first) in starts.iter().enumerate() {
        let last = starts.get(n + 1).copied().unwrap_or(frames.len());
        let span = &frames[first..last];
        let start_ms = span[0].timestamp_ms;
        let end_ms = match starts.get(n + 1) {
            Some(&next) => frames[next].timestamp_ms,
            None => end_of_feed,
        };
        let mid2 = start_ms + end_ms; // twice the midpoint
        let key_frame = span
            .iter()
            .min_by_key(|f| (2 * f.timestamp_ms).abs_diff(mid2))
            .expect("span is non-empty")
            .clone();
        clips.push(ClipRecord {
            clip_id: n as u32,
            camera: feed.camera.clone(),
            start_ms,
            end_ms,
            key_frame,
            detections: merge_detections(span),
        });
    }
    Ok(clips)
}

/// A base clip together with its time-aligned counterparts, one slot per
/// other camera.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlignedClipPair {
    pub base: ClipRecord,
    pub others: Vec<(CameraId, Option<ClipRecord>)>,
}

/// Index of the matched other clip for each base clip.
///
/// Candidates must overlap at least half of the base clip's duration. They
/// are assigned greedily by overlap, largest first, each other clip at most
/// once; ties go to the earlier base clip, then the earlier other clip.
fn align_indices(base: &[ClipRecord], other: &[ClipRecord]) -> Vec<Option<usize>> {
    let mut candidates = Vec::new();
    for (bi, b) in base.iter().enumerate() {
        for (oi, o) in other.iter().enumerate() {
            let overlap = b.overlap_ms(o);
            if overlap > 0 && 2 * overlap >= b.duration_ms() {
                candidates.push((overlap, bi, oi));
            }
        }
    }
    candidates.sort_by(|x, y| {
        y.0.cmp(&x.0)
            .then(base[x.1].start_ms.cmp(&base[y.1].start_ms))
            .then(other[x.2].start_ms.cmp(&other[y.2].start_ms))
            .then(other[x.2].end_ms.cmp(&other[y.2].end_ms))
            .then(other[x.2].clip_id.cmp(&other[y.2].clip_id))
    });
    let mut assigned = vec![None; base.len()];
    let mut used = vec![false; other.len()];
    for (_, bi, oi) in candidates {
        if assigned[bi].is_none() && !used[oi] {
            assigned[bi] = Some(oi);
            used[oi] = true;
        }
    }
    assigned
}

/// Pairs every base clip with the best-overlapping clip of one other camera.
pub fn align_clips(base: &[ClipRecord], other: &[ClipRecord]) -> Vec<AlignedClipPair> {
    let camera = other.first().map(|c| c.camera.clone());
    align_indices(base, other)
        .into_iter()
        .zip(base)
        .map(|(matched, b)| AlignedClipPair {
            base: b.clone(),
            others: camera
                .clone()
                .map(|cam| vec![(cam, matched.map(|oi| other[oi].clone()))])
                .unwrap_or_default(),
        })
        .collect()
}

/// Aligns several cameras against the base camera at once; each pair's
/// `others` follows the order of `cameras`.
pub fn align_cameras(
    base: &[ClipRecord],
    cameras: &[(CameraId, Vec<ClipRecord>)],
) -> Vec<AlignedClipPair> {
    let mut pairs: Vec<AlignedClipPair> = base
        .iter()
        .map(|b| AlignedClipPair {
            base: b.clone(),
            others: Vec::with_capacity(cameras.len()),
        })
        .collect();
    for (camera, clips) in cameras {
        for (pair, matched) in pairs.iter_mut().zip(align_indices(base, clips)) {
            pair.others
                .push((camera.clone(), matched.map(|oi| clips[oi].clone())));
        }
    }
    pairs
}
