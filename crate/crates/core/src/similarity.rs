//! Object-level clip similarity: label-restricted IoU matching between the
//! detections of two temporally aligned clips.

use serde::{Deserialize, Serialize};

use crate::types::{BoundingBox, ClipRecord, Detection, SimilarityConfig};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DetectionMatch {
    pub base_index: usize,
    pub other_index: usize,
    pub iou: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClipSimilarity {
    pub score: f64,
    pub matches: Vec<DetectionMatch>,
}

/// Intersection over union of two boxes; 0 when they are disjoint.
pub fn iou(a: &BoundingBox, b: &BoundingBox) -> f64 {
    let w = a.x_max().min(b.x_max()) - a.x_min().max(b.x_min());
    let h = a.y_max().min(b.y_max()) - a.y_min().max(b.y_min());
    if w <= 0.0 || h <= 0.0 {
        return 0.0;
    }
    let inter = w * h;
    let union = a.area() + b.area() - inter;
    (inter / union).clamp(0.0, 1.0)
}

/// Greedy one-to-one matching of equal-label detections, highest IoU first.
///
/// Ties are broken by base index, then other index. Pairs with zero overlap
/// never match.
pub fn match_detections(base: &[Detection], other: &[Detection]) -> Vec<DetectionMatch> {
    let mut candidates = Vec::new();
    for (bi, b) in base.iter().enumerate() {
        for (oi, o) in other.iter().enumerate() {
            if b.label() != o.label() {
                continue;
            }
            let v = iou(b.bbox(), o.bbox());
            if v > 0.0 {
                candidates.push(DetectionMatch {
                    base_index: bi,
                    other_index: oi,
                    iou: v,
                });
            }
        }
    }
    candidates.sort_by(|x, y| {
        y.iou
            .total_cmp(&x.iou)
            .then(x.base_index.cmp(&y.base_index))
            .then(x.other_index.cmp(&y.other_index))
    });

    let mut base_used = vec![false; base.len()];
    let mut other_used = vec![false; other.len()];
    let mut matches = Vec::new();
    for c in candidates {
        if base_used[c.base_index] || other_used[c.other_index] {
            continue;
        }
        base_used[c.base_index] = true;
        other_used[c.other_index] = true;
        matches.push(c);
    }
    matches
}

/// Similarity of two detection sets: summed matched IoU over the larger
/// cardinality. Two empty sets score 1.0.
pub fn detection_similarity(base: &[Detection], other: &[Detection]) -> ClipSimilarity {
    let denom = base.len().max(other.len());
    if denom == 0 {
        return ClipSimilarity {
            score: 1.0,
            matches: Vec::new(),
        };
    }
    let matches = match_detections(base, other);
    let total: f64 = matches.iter().map(|m| m.iou).sum();
    ClipSimilarity {
        score: (total / denom as f64).clamp(0.0, 1.0),
        matches,
    }
}

pub fn clip_similarity(base: &ClipRecord, other: &ClipRecord) -> ClipSimilarity {
    detection_similarity(&base.detections, &other.detections)
}

/// A follow-up clip is redundant when its score reaches the threshold.
pub fn should_skip(sim: &ClipSimilarity, cfg: &SimilarityConfig) -> bool {
    sim.score >= cfg.delta()
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;

    use super::*;

    fn bx(x0: f64, y0: f64, x1: f64, y1: f64) -> BoundingBox {
        BoundingBox::new(x0, y0, x1, y1).unwrap()
    }

    fn det(label: &str, b: BoundingBox) -> Detection {
        Detection::new(label, b, 0.9).unwrap()
    }

    /// Counts unit pixels covered by integer boxes.
    fn pixel_iou(a: [u32; 4], b: [u32; 4]) -> f64 {
        let (mut inter, mut union) = (0u64, 0u64);
        let xmax = a[2].max(b[2]);
        let ymax = a[3].max(b[3]);
        for x in 0..xmax {
            for y in 0..ymax {
                let ina = x >= a[0] && x < a[2] && y >= a[1] && y < a[3];
                let inb = x >= b[0] && x < b[2] && y >= b[1] && y < b[3];
                inter += (ina && inb) as u64;
                union += (ina || inb) as u64;
            }
        }
        inter as f64 / union as f64
    }

    #[test]
    fn iou_examples() {
        let a = bx(0.0, 0.0, 10.0, 10.0);
        assert_eq!(iou(&a, &a), 1.0);
        assert_eq!(iou(&a, &bx(20.0, 20.0, 30.0, 30.0)), 0.0);
        // Touching edges share no area.
        assert_eq!(iou(&a, &bx(10.0, 0.0, 20.0, 10.0)), 0.0);
        let expected = pixel_iou([0, 0, 10, 10], [5, 5, 15, 15]);
        assert!((expected - 25.0 / 175.0).abs() < 1e-15);
        assert!((iou(&a, &bx(5.0, 5.0, 15.0, 15.0)) - expected).abs() < 1e-12);
    }

    #[test]
    fn matching_examples() {
        assert!(match_detections(&[], &[]).is_empty());

        // Width-6 overlap of two width-10 boxes of equal height: 60/140.
        let a = det("car", bx(0.0, 0.0, 10.0, 10.0));
        let b = det("car", bx(4.0, 0.0, 14.0, 10.0));
        let m = match_detections(std::slice::from_ref(&a), std::slice::from_ref(&b));
        assert_eq!(m.len(), 1);
        assert_eq!((m[0].base_index, m[0].other_index), (0, 0));
        assert!((m[0].iou - 60.0 / 140.0).abs() < 1e-12);

        // Different labels never match.
        assert!(match_detections(&[a], &[det("person", bx(0.0, 0.0, 10.0, 10.0))]).is_empty());
    }

    #[test]
    fn greedy_keeps_the_best_pair() {
        let other = vec![det("car", bx(0.0, 0.0, 10.0, 10.0))];
        let low = det("car", bx(0.0, 0.0, 10.0, 25.0)); // 100/250 = 0.4
        let high = det("car", bx(0.0, 0.0, 10.0, 100.0 / 7.0)); // 100/142.857 = 0.7
        let base = vec![low, high];
        let m = match_detections(&base, &other);
        // Brute force over all single-pair matchings: the best is base 1.
        let best = (0..base.len())
            .map(|i| (i, iou(base[i].bbox(), other[0].bbox())))
            .max_by(|a, b| a.1.total_cmp(&b.1))
            .unwrap();
        assert_eq!(m.len(), 1);
        assert_eq!(m[0].base_index, best.0);
        assert!((m[0].iou - 0.7).abs() < 1e-12);
    }

    #[test]
    fn clip_similarity_examples() {
        assert_eq!(detection_similarity(&[], &[]).score, 1.0);
        let car = det("car", bx(0.0, 0.0, 10.0, 10.0));
        let person = det("person", bx(50.0, 50.0, 60.0, 80.0));
        let both = vec![car.clone(), person];
        assert_eq!(detection_similarity(&both, &both).score, 1.0);
        assert_eq!(
            detection_similarity(&both, std::slice::from_ref(&car)).score,
            0.5
        );
        assert_eq!(detection_similarity(&[car], &[]).score, 0.0);
    }

    #[test]
    fn skip_boundary() {
        let sim = |s| ClipSimilarity {
            score: s,
            matches: vec![],
        };
        let cfg = |d| SimilarityConfig::new(d).unwrap();
        assert!(should_skip(&sim(0.21), &cfg(0.21)));
        assert!(!should_skip(&sim(0.0), &cfg(0.21)));
        assert!(should_skip(&sim(1.0), &cfg(1.0)));
        assert!(should_skip(&sim(0.0), &cfg(0.0)));
    }

    fn arb_box() -> impl Strategy<Value = BoundingBox> {
        (0.0..500.0f64, 0.0..500.0f64, 0.5..300.0f64, 0.5..300.0f64)
            .prop_map(|(x, y, w, h)| BoundingBox::new(x, y, x + w, y + h).unwrap())
    }

    fn arb_dets() -> impl Strategy<Value = Vec<Detection>> {
        prop::collection::vec(
            (
                prop::sample::select(vec!["car", "person", "bus"]),
                arb_box(),
            )
                .prop_map(|(l, b)| Detection::new(l, b, 0.8).unwrap()),
            0..8,
        )
    }

    proptest! {
        #[test]
        fn iou_is_symmetric_and_bounded(a in arb_box(), b in arb_box()) {
            let ab = iou(&a, &b);
            prop_assert_eq!(ab, iou(&b, &a));
            prop_assert!((0.0..=1.0).contains(&ab));
            prop_assert_eq!(iou(&a, &a), 1.0);
        }

        #[test]
        fn self_similarity_is_one(d in arb_dets()) {
            prop_assert_eq!(detection_similarity(&d, &d).score, 1.0);
        }

        #[test]
        fn score_bounded_and_matches_one_to_one(a in arb_dets(), b in arb_dets()) {
            let s = detection_similarity(&a, &b);
            prop_assert!((0.0..=1.0).contains(&s.score));
            let mut bi: Vec<_> = s.matches.iter().map(|m| m.base_index).collect();
            let mut oi: Vec<_> = s.matches.iter().map(|m| m.other_index).collect();
            bi.sort(); bi.dedup(); oi.sort(); oi.dedup();
            prop_assert_eq!(bi.len(), s.matches.len());
            prop_assert_eq!(oi.len(), s.matches.len());
            for m in &s.matches {
                prop_assert_eq!(a[m.base_index].label(), b[m.other_index].label());
                prop_assert!(m.iou > 0.0);
            }
        }

        #[test]
        fn skipping_is_monotone_in_delta(score in 0.0..=1.0f64, d1 in 0.0..=1.0f64, d2 in 0.0..=1.0f64) {
            let (lo, hi) = if d1 <= d2 { (d1, d2) } else { (d2, d1) };
            let sim = ClipSimilarity { score, matches: vec![] };
            let processed_lo = !should_skip(&sim, &SimilarityConfig::new(lo).unwrap());
            let processed_hi = !should_skip(&sim, &SimilarityConfig::new(hi).unwrap());
            prop_assert!(!processed_lo || processed_hi);
        }
    }
}
