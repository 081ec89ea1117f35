//! Prepared workloads for the criterion benches.

use crosscam_core::gateway::MockBackend;
use crosscam_core::rag::{build_index, chunk_document, VectorIndex};
use crosscam_core::synth::{generate, street_document, FixtureSpec};
use crosscam_core::{
    ingest, segment_clips, BoundingBox, CameraFeedManifest, ClipRecord, IngestionConfig, Mode,
};

pub struct IngestWorkload {
    pub feeds: Vec<CameraFeedManifest>,
    pub baseline: IngestionConfig,
    pub trafficlens: IngestionConfig,
}

/// The seeded two-camera fixture with `clips` clips.
pub fn ingest_workload(clips: usize, workers: usize) -> IngestWorkload {
    let feeds = generate(&FixtureSpec {
        clips,
        ..FixtureSpec::standard(7)
    });
    let order = feeds.iter().map(|f| f.camera.clone()).collect();
    let mut trafficlens = IngestionConfig::new(Mode::TrafficLens, order).expect("valid order");
    trafficlens.workers = workers;
    IngestWorkload {
        baseline: trafficlens.with_mode(Mode::Baseline),
        trafficlens,
        feeds,
    }
}

/// Aligned base and follow-up clips from the standard fixture.
pub fn clip_pairs(clips: usize) -> Vec<(ClipRecord, ClipRecord)> {
    let w = ingest_workload(clips, 1);
    let seg = w.trafficlens.segmenter;
    let a = segment_clips(&w.feeds[0], &seg).expect("non-empty feed");
    let b = segment_clips(&w.feeds[1], &seg).expect("non-empty feed");
    a.into_iter().zip(b).collect()
}

/// A grid of overlapping boxes.
pub fn box_grid(n: usize) -> Vec<BoundingBox> {
    (0..n)
        .map(|i| {
            let x = (i % 37) as f64 * 11.0;
            let y = (i % 23) as f64 * 7.0;
            BoundingBox::new(x, y, x + 40.0 + (i % 5) as f64, y + 30.0).expect("positive extent")
        })
        .collect()
}

/// Narrative pairs from a trafficlens run: (follow-up text, base text).
pub fn narrative_pairs(clips: usize) -> Vec<(String, String)> {
    let w = ingest_workload(clips, 1);
    let report = ingest(&w.feeds, &w.baseline, &MockBackend::default()).expect("ingest");
    let n = report.document.entries.len();
    let (base, rest) = report.segments.split_at(n.min(report.segments.len()));
    rest.iter()
        .zip(base)
        .map(|(f, b)| (f.text.clone(), b.text.clone()))
        .collect()
}

/// An index built from `copies` street documents.
pub fn street_index(copies: u64) -> VectorIndex {
    let mut doc = street_document(1);
    let span = doc.entries.last().map_or(0, |e| e.end_ms);
    let base = doc.entries.clone();
    for c in 1..copies {
        doc.entries.extend(base.iter().map(|e| {
            let mut e = e.clone();
            e.start_ms += c * span;
            e.end_ms += c * span;
            e
        }));
    }
    let chunks = chunk_document(&doc, 1200).expect("non-empty document");
    build_index(&chunks, &MockBackend::default()).expect("mock embedder")
}
