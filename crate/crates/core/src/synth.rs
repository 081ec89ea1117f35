//! Seeded synthetic workloads: multi-camera manifests with a controlled
//! share of redundant clips, and a small street document for query demos.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::frontend::{merge_detections, CameraFeedManifest};
use crate::similarity::detection_similarity;
use crate::types::{
    BoundingBox, CameraId, Detection, DocumentEntry, FrameRecord, IntersectionDocument,
};

pub const LABELS: &[&str] = &[
    "car",
    "suv",
    "truck",
    "bus",
    "van",
    "taxi",
    "bicycle",
    "motorcycle",
    "person",
    "backpack",
    "handbag",
    "umbrella",
    "dog",
    "stroller",
    "scooter",
    "traffic light",
    "stop sign",
    "fire hydrant",
    "bench",
    "trash can",
    "manhole cover",
    "parking meter",
    "cyclist",
    "delivery robot",
];

const FRAME_W: f64 = 1920.0;
const FRAME_H: f64 = 1080.0;

/// Shape of a generated multi-camera workload.
#[derive(Debug, Clone, PartialEq)]
pub struct FixtureSpec {
    /// Camera names; the first is the base camera.
    pub cameras: Vec<String>,
    pub clips: usize,
    pub clip_ms: u64,
    pub frame_period_ms: u64,
    /// Share of clips whose follow-up views are redundant (similarity at
    /// or above `threshold`); the rest score below it.
    pub similar_fraction: f64,
    pub threshold: f64,
    pub min_objects: usize,
    pub max_objects: usize,
    pub seed: u64,
}

impl FixtureSpec {
    /// Two cameras, 200 ten-second clips, half of them redundant at 0.21.
    pub fn standard(seed: u64) -> Self {
        Self {
            cameras: vec!["right".into(), "left".into()],
            clips: 200,
            clip_ms: 10_000,
            frame_period_ms: 2000,
            similar_fraction: 0.5,
            threshold: 0.21,
            min_objects: 16,
            max_objects: 30,
            seed,
        }
    }
}

fn random_box(rng: &mut ChaCha8Rng) -> BoundingBox {
    let w = rng.random_range(40.0..300.0f64).round();
    let h = rng.random_range(40.0..300.0f64).round();
    let x = rng.random_range(0.0..FRAME_W - w).round();
    let y = rng.random_range(0.0..FRAME_H - h).round();
    BoundingBox::new(x, y, x + w, y + h).expect("positive extent")
}

fn random_detection(rng: &mut ChaCha8Rng) -> Detection {
    let label = LABELS[rng.random_range(0..LABELS.len())];
    let conf = (rng.random_range(0.3..1.0f64) * 100.0).round() / 100.0;
    Detection::new(label, random_box(rng), conf).expect("valid detection")
}

/// Deduplicates a set the same way clip merging would.
fn normalized_set(dets: Vec<Detection>) -> Vec<Detection> {
    let frame = FrameRecord {
        camera: CameraId::new("tmp").expect("non-empty"),
        timestamp_ms: 0,
        media_ref: None,
        detections: dets,
    };
    merge_detections([&frame])
}

fn random_set(rng: &mut ChaCha8Rng, min: usize, max: usize) -> Vec<Detection> {
    let n = rng.random_range(min..=max);
    normalized_set((0..n).map(|_| random_detection(rng)).collect())
}

fn jittered(rng: &mut ChaCha8Rng, d: &Detection) -> Detection {
    let b = d.bbox();
    let dx = rng.random_range(-3.0..=3.0f64).round();
    let dy = rng.random_range(-3.0..=3.0f64).round();
    let x = (b.x_min() + dx).max(0.0);
    let y = (b.y_min() + dy).max(0.0);
    let bbox = BoundingBox::new(x, y, x + b.width(), y + b.height()).expect("positive extent");
    Detection::new(d.label(), bbox, d.confidence()).expect("valid detection")
}

fn shifted_away(d: &Detection) -> Detection {
    let b = d.bbox();
    let bbox = BoundingBox::new(
        b.x_min() + 2.0 * FRAME_W,
        b.y_min(),
        b.x_max() + 2.0 * FRAME_W,
        b.y_max(),
    )
    .expect("positive extent");
    Detection::new(d.label(), bbox, d.confidence()).expect("valid detection")
}

/// A view of the same clip scoring at or above `threshold` against `base`.
fn similar_view(rng: &mut ChaCha8Rng, base: &[Detection], spec: &FixtureSpec) -> Vec<Detection> {
    for _ in 0..32 {
        let keep = rng.random_range(0.35..=1.0f64);
        let view: Vec<Detection> = base
            .iter()
            .map(|d| {
                if rng.random_bool(keep) {
                    jittered(rng, d)
                } else {
                    random_detection(rng)
                }
            })
            .collect();
        let view = normalized_set(view);
        if detection_similarity(base, &view).score >= spec.threshold {
            return view;
        }
    }
    base.to_vec()
}

/// A view of the same clip scoring below `threshold` against `base`.
fn dissimilar_view(rng: &mut ChaCha8Rng, base: &[Detection], spec: &FixtureSpec) -> Vec<Detection> {
    for _ in 0..32 {
        let view = random_set(rng, spec.min_objects, spec.max_objects);
        if detection_similarity(base, &view).score < spec.threshold {
            return view;
        }
    }
    base.iter().map(shifted_away).collect()
}

/// Builds one manifest per camera. Detections are constant within a clip,
/// so clip boundaries fall on multiples of `clip_ms`.
pub fn generate(spec: &FixtureSpec) -> Vec<CameraFeedManifest> {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut order: Vec<usize> = (0..spec.clips).collect();
    order.shuffle(&mut rng);
    let n_similar = (spec.clips as f64 * spec.similar_fraction).round() as usize;
    let mut similar = vec![false; spec.clips];
    for &i in &order[..n_similar.min(spec.clips)] {
        similar[i] = true;
    }

    let cameras: Vec<CameraId> = spec
        .cameras
        .iter()
        .map(|c| CameraId::new(c.clone()).expect("non-empty camera name"))
        .collect();
    let mut per_camera: Vec<Vec<Vec<Detection>>> =
        vec![Vec::with_capacity(spec.clips); cameras.len()];
    for is_similar in &similar {
        let base = random_set(&mut rng, spec.min_objects, spec.max_objects);
        for views in per_camera.iter_mut().skip(1) {
            let view = if *is_similar {
                similar_view(&mut rng, &base, spec)
            } else {
                dissimilar_view(&mut rng, &base, spec)
            };
            views.push(view);
        }
        per_camera[0].push(base);
    }

    let frames_per_clip = (spec.clip_ms / spec.frame_period_ms).max(1);
    cameras
        .iter()
        .zip(per_camera)
        .map(|(camera, clips)| {
            let mut frames = Vec::with_capacity(spec.clips * frames_per_clip as usize);
            for (k, dets) in clips.iter().enumerate() {
                for f in 0..frames_per_clip {
                    let ts = k as u64 * spec.clip_ms + f * spec.frame_period_ms;
                    let seq = k as u64 * frames_per_clip + f;
                    frames.push(FrameRecord {
                        camera: camera.clone(),
                        timestamp_ms: ts,
                        media_ref: Some(format!("frames/{camera}/{seq:06}.jpg")),
                        detections: dets.clone(),
                    });
                }
            }
            CameraFeedManifest::from_frames(camera.clone(), frames)
        })
        .collect()
}

pub fn standard_fixture(seed: u64) -> Vec<CameraFeedManifest> {
    generate(&FixtureSpec::standard(seed))
}

const FILLER: &[&str] = &[
    "A delivery van waits at the light.",
    "Two pedestrians cross at the crosswalk.",
    "A cyclist rides in the bike lane.",
    "A black sedan turns left at the intersection.",
    "The street is quiet with trees along the sidewalk.",
    "A city bus stops near the corner.",
    "A man in a blue shirt walks past the storefront.",
    "A taxi pulls over to the curb.",
    "A woman with a black bag waits for the signal.",
    "A dog is walked along the sidewalk.",
];

const BACKPACK: &[&str] = &[
    "A person with a backpack crosses the road.",
    "A student carrying a backpack walks toward the camera.",
    "A man with a backpack waits at the crosswalk.",
];

/// Street document with ten-second entries starting at 00:00:03. The entry
/// at 00:07:23 mentions a white SUV; a few entries mention backpacks; no
/// other entry mentions a white vehicle or an SUV.
pub fn street_document(seed: u64) -> IntersectionDocument {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let backpack_at = [12usize, 27, 58];
    let entries = (0..60)
        .map(|i| {
            let start_ms = 3000 + i as u64 * 10_000;
            let text = if start_ms == 443_000 {
                "A black SUV and a white SUV are parked along the curb. A crosswalk is visible in the foreground.".to_owned()
            } else if let Some(k) = backpack_at.iter().position(|&b| b == i) {
                format!("{} {}", BACKPACK[k], FILLER[rng.random_range(0..FILLER.len())])
            } else {
                let a = FILLER[rng.random_range(0..FILLER.len())];
                let b = FILLER[rng.random_range(0..FILLER.len())];
                if a == b {
                    a.to_owned()
                } else {
                    format!("{a} {b}")
                }
            };
            DocumentEntry {
                start_ms,
                end_ms: start_ms + 10_000,
                text,
            }
        })
        .collect();
    IntersectionDocument { entries }
}
