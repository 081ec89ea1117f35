use crosscam_core::gateway::{MockBackend, MockLatencyModel, NO_ANSWER};
use crosscam_core::rag::{answer, build_index, chunk_document, VectorIndex};
use crosscam_core::synth::{generate, FixtureSpec};
use crosscam_core::{
    align_clips, ingest, parse_manifest, segment_clips, serialize_manifest, validate_clip_sequence,
    IngestionConfig, IngestionReport, Mode, SegmentRole,
};

fn small_spec(seed: u64) -> FixtureSpec {
    FixtureSpec {
        cameras: vec!["north".into(), "east".into(), "west".into()],
        clips: 15,
        ..FixtureSpec::standard(seed)
    }
}

#[test]
fn manifests_survive_serialization() {
    for feed in generate(&small_spec(1)) {
        let bytes = serialize_manifest(&feed);
        let back = parse_manifest(bytes.as_slice()).unwrap();
        assert_eq!(back, feed);
        let clips = segment_clips(&back, &Default::default()).unwrap();
        assert!(validate_clip_sequence(&clips).is_empty());
    }
}

#[test]
fn aligned_fixture_pairs_every_clip() {
    let feeds = generate(&small_spec(2));
    let seg = Default::default();
    let base = segment_clips(&feeds[0], &seg).unwrap();
    for other in &feeds[1..] {
        let pairs = align_clips(&base, &segment_clips(other, &seg).unwrap());
        assert_eq!(pairs.len(), base.len());
        assert!(pairs
            .iter()
            .all(|p| p.others.len() == 1 && p.others[0].1.is_some()));
    }
}

#[test]
fn three_camera_counts_balance() {
    let feeds = generate(&small_spec(3));
    let cfg = IngestionConfig::new(
        Mode::TrafficLens,
        feeds.iter().map(|f| f.camera.clone()).collect(),
    )
    .unwrap();
    let report = ingest(&feeds, &cfg, &MockBackend::default()).unwrap();
    // Every aligned (clip, camera) pair is either described or skipped.
    assert_eq!(report.vlm_calls + report.skipped_clips, 15 * 3);
    assert_eq!(report.document.entries.len(), 15);
    let followups = report
        .segments
        .iter()
        .filter(|s| s.role == SegmentRole::Followup)
        .count();
    assert_eq!(followups, 30);
}

#[test]
fn report_json_round_trips() {
    let feeds = generate(&small_spec(4));
    let cfg = IngestionConfig::new(
        Mode::TrafficLens,
        feeds.iter().map(|f| f.camera.clone()).collect(),
    )
    .unwrap();
    let report = ingest(&feeds, &cfg, &MockBackend::default()).unwrap();
    let json = serde_json::to_string(&report).unwrap();
    let back: IngestionReport = serde_json::from_str(&json).unwrap();
    assert_eq!(back, report);
}

#[test]
fn parallel_workers_do_not_change_results() {
    let feeds = generate(&small_spec(5));
    let order: Vec<_> = feeds.iter().map(|f| f.camera.clone()).collect();
    for mode in [Mode::Baseline, Mode::TrafficLens] {
        let serial = IngestionConfig::new(mode, order.clone()).unwrap();
        let parallel = IngestionConfig {
            workers: 4,
            ..serial.clone()
        };
        let vlm = MockBackend::default();
        let a = ingest(&feeds, &serial, &vlm).unwrap();
        let b = ingest(&feeds, &parallel, &vlm).unwrap();
        assert_eq!(a.document, b.document);
        assert_eq!(a.segments, b.segments);
        assert_eq!(a.total_latency_ms, b.total_latency_ms);
        assert!(b.parallel_latency_ms < a.parallel_latency_ms);
    }
}

#[test]
fn ingest_then_query() {
    let feeds = generate(&small_spec(6));
    let cfg = IngestionConfig::new(
        Mode::TrafficLens,
        feeds.iter().map(|f| f.camera.clone()).collect(),
    )
    .unwrap();
    let mock = MockBackend::new(MockLatencyModel::default());
    let report = ingest(&feeds, &cfg, &mock).unwrap();
    let chunks = chunk_document(&report.document, 1200).unwrap();
    let index = build_index(&chunks, &mock).unwrap();

    let mut bytes = Vec::new();
    index.persist(&mut bytes).unwrap();
    let index = VectorIndex::load(bytes.as_slice()).unwrap();

    let label = feeds[0].frames[0].detections[0].label().to_owned();
    let ans = answer(&format!("Is there a {label}?"), &index, 3, &mock, &mock).unwrap();
    assert!(ans.answer_text.starts_with("Yes, "), "{}", ans.answer_text);
    assert!(ans.answer_text.contains(&label));
    assert_eq!(ans.used_chunks.len(), 3);

    let ans = answer("Any zebras crossing?", &index, 2, &mock, &mock).unwrap();
    assert_eq!(ans.answer_text, NO_ANSWER);
}
