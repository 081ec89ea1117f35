//! Measurement: output-token statistics, ROUGE-L divergence between camera
//! texts, and the similarity-threshold sweep.

use std::fmt::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{EvalError, IngestError};
use crate::frontend::CameraFeedManifest;
use crate::gateway::{ModelUsage, VisionModel};
use crate::ingest::{ingest, IngestionConfig, IngestionReport, SpeedupSummary};
use crate::prompt::Mode;
use crate::types::{CameraId, NarrativeSegment, SegmentRole, SimilarityConfig};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TokenStats {
    pub max: u32,
    pub min: u32,
    pub avg: f64,
}

pub fn token_stats(usages: &[ModelUsage]) -> Result<TokenStats, EvalError> {
    let first = usages.first().ok_or(EvalError::EmptyUsages)?;
    let (mut max, mut min, mut sum) = (first.output_tokens, first.output_tokens, 0u64);
    for u in usages {
        max = max.max(u.output_tokens);
        min = min.min(u.output_tokens);
        sum += u64::from(u.output_tokens);
    }
    Ok(TokenStats {
        max,
        min,
        avg: sum as f64 / usages.len() as f64,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RougeScore {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

/// Lowercased whitespace tokens with surrounding punctuation stripped.
pub fn rouge_tokens(text: &str) -> Vec<String> {
    text.split_whitespace()
        .map(|t| {
            t.trim_matches(|c: char| !c.is_alphanumeric())
                .to_lowercase()
        })
        .filter(|t| !t.is_empty())
        .collect()
}

/// Length of the longest common subsequence, two-row dynamic program.
pub fn lcs_len<T: PartialEq>(a: &[T], b: &[T]) -> usize {
    if a.is_empty() || b.is_empty() {
        return 0;
    }
    let mut prev = vec![0usize; b.len() + 1];
    let mut cur = vec![0usize; b.len() + 1];
    for x in a {
        for (j, y) in b.iter().enumerate() {
            cur[j + 1] = if x == y {
                prev[j] + 1
            } else {
                cur[j].max(prev[j + 1])
            };
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

/// ROUGE-L from LCS length and the two sequence lengths.
pub fn rouge_from_lcs(lcs: usize, candidate_len: usize, reference_len: usize) -> RougeScore {
    let ratio = |n: usize| if n == 0 { 0.0 } else { lcs as f64 / n as f64 };
    let precision = ratio(candidate_len);
    let recall = ratio(reference_len);
    let f1 = if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    };
    RougeScore {
        precision,
        recall,
        f1,
    }
}

pub fn rouge_l(candidate: &str, reference: &str) -> RougeScore {
    let c = rouge_tokens(candidate);
    let r = rouge_tokens(reference);
    rouge_from_lcs(lcs_len(&c, &r), c.len(), r.len())
}

/// Mean ROUGE-L F1 of each follow-up text against its base text.
pub fn divergence_report(
    pairs: &[(&NarrativeSegment, &NarrativeSegment)],
) -> Result<f64, EvalError> {
    let scores: Vec<f64> = pairs
        .iter()
        .filter(|(b, f)| b.contributes() && f.contributes())
        .map(|(b, f)| rouge_l(&f.text, &b.text).f1)
        .collect();
    if scores.is_empty() {
        return Err(EvalError::NoPairs);
    }
    Ok(scores.iter().sum::<f64>() / scores.len() as f64)
}

/// Base/follow-up segment pairs of one report that both carry text,
/// optionally restricted to one follow-up camera.
pub fn segment_pairs<'a>(
    report: &'a IngestionReport,
    camera: Option<&CameraId>,
) -> Vec<(&'a NarrativeSegment, &'a NarrativeSegment)> {
    let base_camera = &report.config.base_camera;
    report
        .segments
        .iter()
        .filter(|s| s.role == SegmentRole::Followup && s.contributes())
        .filter(|s| camera.is_none_or(|c| &s.camera == c))
        .filter_map(|f| {
            report
                .segments
                .iter()
                .find(|b| {
                    &b.camera == base_camera && b.clip_id == f.base_clip_id && b.contributes()
                })
                .map(|b| (b, f))
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub delta: f64,
    pub total_latency_ms: u64,
    pub processed_clips: u64,
    pub skipped_clips: u64,
}

/// One incremental-mode ingestion per threshold. Points run in parallel;
/// each run keeps its own logical clock.
pub fn delta_sweep(
    feeds: &[CameraFeedManifest],
    cfg: &IngestionConfig,
    deltas: &[f64],
    vlm: &dyn VisionModel,
) -> Result<Vec<SweepPoint>, IngestError> {
    if deltas.windows(2).any(|w| w[1] < w[0]) {
        return Err(IngestError::UnsortedDeltas);
    }
    let configs = deltas
        .iter()
        .map(|&d| {
            let mut c = cfg.with_mode(Mode::TrafficLens);
            c.similarity = SimilarityConfig::new(d)?;
            Ok(c)
        })
        .collect::<Result<Vec<_>, IngestError>>()?;
    configs
        .par_iter()
        .map(|c| {
            let r = ingest(feeds, c, vlm)?;
            Ok(SweepPoint {
                delta: c.similarity.delta(),
                total_latency_ms: r.total_latency_ms,
                processed_clips: r.processed_followups(),
                skipped_clips: r.skipped_clips,
            })
        })
        .collect()
}

/// Parses a comma-separated threshold list such as `0.1,0.2,0.3`.
pub fn parse_deltas(list: &str) -> Result<Vec<f64>, String> {
    list.split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| {
            s.parse::<f64>()
                .map_err(|e| format!("bad threshold {s:?}: {e}"))
        })
        .collect()
}

/// `lo, lo+step, ..., hi` with rounding to avoid drift.
pub fn delta_range(lo: f64, hi: f64, step: f64) -> Vec<f64> {
    let n = ((hi - lo) / step).round() as i64;
    (0..=n.max(0))
        .map(|i| ((lo + i as f64 * step) * 1e9).round() / 1e9)
        .collect()
}

/// A row of the output-token table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TokenRow {
    pub camera: CameraId,
    pub mode: Mode,
    pub max_token_limit: u32,
    pub stats: TokenStats,
}

/// Output-token statistics per camera for calls that produced text.
pub fn token_rows(report: &IngestionReport) -> Vec<TokenRow> {
    report
        .config
        .camera_order
        .iter()
        .filter_map(|camera| {
            let segs: Vec<&NarrativeSegment> = report
                .segments_for(camera)
                .filter(|s| !s.skipped && s.error.is_none())
                .collect();
            let usages: Vec<ModelUsage> = segs
                .iter()
                .map(|s| ModelUsage {
                    prompt_tokens: s.prompt_tokens,
                    output_tokens: s.output_tokens,
                    latency_ms: s.latency_ms,
                })
                .collect();
            let stats = token_stats(&usages).ok()?;
            Some(TokenRow {
                camera: camera.clone(),
                mode: report.config.mode,
                max_token_limit: segs.iter().map(|s| s.max_output_tokens).max().unwrap_or(0),
                stats,
            })
        })
        .collect()
}

pub fn token_table(rows: &[TokenRow]) -> String {
    let mut out = String::from(
        "camera\tmode\tmax_token_limit\tmax_output_tokens\tmin_output_tokens\tavg_output_tokens\n",
    );
    for r in rows {
        let _ = writeln!(
            out,
            "{}\t{}\t{}\t{}\t{}\t{:.2}",
            r.camera, r.mode, r.max_token_limit, r.stats.max, r.stats.min, r.stats.avg
        );
    }
    out
}

pub fn ingestion_table(summary: &SpeedupSummary) -> String {
    format!(
        "baseline_ms\ttrafficlens_ms\tratio\n{}\t{}\t{:.2}\n",
        summary.baseline_ms, summary.trafficlens_ms, summary.ratio
    )
}

/// Divergence rows: (method label, mean ROUGE-L F1). The semantic-score
/// column is printed as `n/a`.
pub fn divergence_table(rows: &[(String, f64)]) -> String {
    let mut out =
        String::from("# ROUGE-L F1 of follow-up text against base text, averaged per clip\n");
    out.push_str("method\tbert_score\trouge_l\n");
    for (method, score) in rows {
        let _ = writeln!(out, "{method}\tn/a\t{score:.2}");
    }
    out
}

pub fn sweep_table(points: &[SweepPoint]) -> String {
    let mut out = String::from("delta\ttotal_latency_ms\tprocessed_clips\tskipped_clips\n");
    for p in points {
        let _ = writeln!(
            out,
            "{}\t{}\t{}\t{}",
            p.delta, p.total_latency_ms, p.processed_clips, p.skipped_clips
        );
    }
    out
}

/// Two-column `(delta, total_latency_ms)` series for plotting.
pub fn sweep_series(points: &[SweepPoint]) -> String {
    let mut out = String::from("delta\ttotal_latency_ms\n");
    for p in points {
        let _ = writeln!(out, "{}\t{}", p.delta, p.total_latency_ms);
    }
    out
}
