//! Segment ranking by mean relevance.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::imagery::RelevanceMap;
use crate::segmentation::SegmentMap;
use crate::{Error, Result};

/// How signed attributions are treated before aggregation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EvidenceMode {
    /// Negative relevance is clamped to zero.
    #[default]
    PositiveOnly,
    Absolute,
    Signed,
}

impl EvidenceMode {
    pub fn apply(self, v: f32) -> f32 {
        match self {
            EvidenceMode::PositiveOnly => v.max(0.0),
            EvidenceMode::Absolute => v.abs(),
            EvidenceMode::Signed => v,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            EvidenceMode::PositiveOnly => "positive-only",
            EvidenceMode::Absolute => "absolute",
            EvidenceMode::Signed => "signed",
        }
    }
}

impl fmt::Display for EvidenceMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for EvidenceMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "positive-only" | "positive" => Ok(EvidenceMode::PositiveOnly),
            "absolute" | "abs" => Ok(EvidenceMode::Absolute),
            "signed" => Ok(EvidenceMode::Signed),
            _ => Err(Error::InvalidParameter(format!("unknown evidence mode {s:?}"))),
        }
    }
}

pub fn preprocess_relevance(map: &RelevanceMap, mode: EvidenceMode) -> RelevanceMap {
    map.map_values(|v| mode.apply(v))
}

/// Removal order over segments, most relevant first.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegmentRanking {
    pub order: Vec<u32>,
    /// Mean preprocessed relevance, indexed by segment label.
    pub importance: Vec<f64>,
    pub evidence_mode: EvidenceMode,
}

impl SegmentRanking {
    pub fn len(&self) -> usize {
        self.order.len()
    }

    pub fn is_empty(&self) -> bool {
        self.order.is_empty()
    }

    /// Checks that `order` is a permutation of the labels sorted by
    /// non-increasing importance.
    pub fn validate(&self) -> Result<()> {
        let l = self.importance.len();
        if self.order.len() != l {
            return Err(Error::InvalidParameter(format!(
                "ranking orders {} segments but has {l} importances",
                self.order.len()
            )));
        }
        let mut seen = vec![false; l];
        for &s in &self.order {
            let s = s as usize;
            if s >= l || std::mem::replace(&mut seen[s], true) {
                return Err(Error::InvalidParameter(format!(
                    "ranking order is not a permutation (label {s})"
                )));
            }
        }
        for pair in self.order.windows(2) {
            if self.importance[pair[0] as usize] < self.importance[pair[1] as usize] {
                return Err(Error::InvalidParameter(
                    "ranking order is not sorted by importance".into(),
                ));
            }
        }
        Ok(())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("ranking serializes")
    }
}

/// Mean preprocessed relevance per segment; order descending, ties by label.
pub fn rank_segments(
    map: &RelevanceMap,
    segs: &SegmentMap,
    mode: EvidenceMode,
) -> Result<SegmentRanking> {
    if map.height() != segs.height() || map.width() != segs.width() {
        return Err(Error::DimensionMismatch(format!(
            "relevance map {}x{} vs segment map {}x{}",
            map.height(),
            map.width(),
            segs.height(),
            segs.width()
        )));
    }
    let l = segs.segment_count();
    let mut sums = vec![0.0f64; l];
    let mut counts = vec![0usize; l];
    for (&label, &v) in segs.labels().iter().zip(map.data()) {
        sums[label as usize] += mode.apply(v) as f64;
        counts[label as usize] += 1;
    }
    let importance: Vec<f64> = sums
        .iter()
        .zip(&counts)
        .map(|(&s, &c)| s / c as f64)
        .collect();
    Ok(SegmentRanking {
        order: order_descending(&importance)
            .into_iter()
            .map(|i| i as u32)
            .collect(),
        importance,
        evidence_mode: mode,
    })
}

/// Indices sorted by value descending, ties by ascending index.
pub(crate) fn order_descending(values: &[f64]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..values.len()).collect();
    idx.sort_by(|&a, &b| values[b].total_cmp(&values[a]).then(a.cmp(&b)));
    idx
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::imagery::{Image, ValueRange};
    use crate::segmentation::{slic_segment, SlicParams};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};

    fn rel(data: Vec<f32>, w: usize) -> RelevanceMap {
        RelevanceMap::new(data.len() / w, w, data, "m").unwrap()
    }

    #[test]
    fn preprocessing_modes() {
        let m = rel(vec![-1.0, 0.5], 2);
        assert_eq!(
            preprocess_relevance(&m, EvidenceMode::PositiveOnly).data(),
            &[0.0, 0.5]
        );
        assert_eq!(
            preprocess_relevance(&m, EvidenceMode::Absolute).data(),
            &[1.0, 0.5]
        );
        assert_eq!(
            preprocess_relevance(&m, EvidenceMode::Signed).data(),
            &[-1.0, 0.5]
        );
    }

    #[test]
    fn direct_ranking() {
        let segs = SegmentMap::from_labels(1, 4, vec![0, 0, 1, 1]).unwrap();
        let r = rank_segments(&rel(vec![1.0, 1.0, 0.0, 0.0], 4), &segs, EvidenceMode::default())
            .unwrap();
        assert_eq!(r.importance, vec![1.0, 0.0]);
        assert_eq!(r.order, vec![0, 1]);
        r.validate().unwrap();
    }

    #[test]
    fn ties_break_by_label() {
        let segs = SegmentMap::from_labels(1, 6, vec![0, 0, 1, 1, 2, 2]).unwrap();
        let r = rank_segments(&rel(vec![0.7; 6], 6), &segs, EvidenceMode::default()).unwrap();
        assert!(r.importance.iter().all(|&v| (v - 0.7).abs() < 1e-6));
        assert_eq!(r.order, vec![0, 1, 2]);
    }

    #[test]
    fn dimension_mismatch() {
        let segs = SegmentMap::from_labels(1, 4, vec![0, 0, 1, 1]).unwrap();
        assert!(rank_segments(&rel(vec![0.0; 6], 3), &segs, EvidenceMode::Signed).is_err());
    }

    #[test]
    fn matches_brute_force_per_segment_mean() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(21);
        for _ in 0..5 {
            let img_data = (0..256).map(|_| rng.random::<f32>()).collect();
            let img = Image::new(16, 16, 1, img_data, ValueRange::UNIT).unwrap();
            let segs = slic_segment(
                &img,
                &SlicParams {
                    target_segments: 10,
                    ..Default::default()
                },
            )
            .unwrap();
            let map = rel((0..256).map(|_| rng.random_range(-1.0..1.0)).collect(), 16);
            let r = rank_segments(&map, &segs, EvidenceMode::PositiveOnly).unwrap();
            // Oracle: scan every pixel once per segment.
            for l in 0..segs.segment_count() {
                let (mut s, mut c) = (0.0f64, 0usize);
                for p in 0..256 {
                    if segs.label(p) as usize == l {
                        s += (map.data()[p] as f64).max(0.0);
                        c += 1;
                    }
                }
                assert!((r.importance[l] - s / c as f64).abs() < 1e-6);
            }
            r.validate().unwrap();
        }
    }

    #[test]
    fn ranking_json_roundtrip() {
        let segs = SegmentMap::from_labels(1, 4, vec![0, 0, 1, 1]).unwrap();
        let r = rank_segments(&rel(vec![0.0, 0.0, 1.0, 1.0], 4), &segs, EvidenceMode::Absolute)
            .unwrap();
        let json = r.to_json();
        assert!(json.contains("\"evidence_mode\": \"absolute\""));
        let back: SegmentRanking = serde_json::from_str(&json).unwrap();
        assert_eq!(back, r);
    }

    fn strip_labels(width: usize, cuts: &[usize]) -> SegmentMap {
        // Vertical strips on a 4-row map; `cuts` are column boundaries.
        let mut bounds: Vec<usize> = cuts.iter().copied().filter(|&c| c > 0 && c < width).collect();
        bounds.sort_unstable();
        bounds.dedup();
        let label_of = |c: usize| bounds.iter().filter(|&&b| c >= b).count() as u32;
        let labels = (0..4 * width).map(|p| label_of(p % width)).collect();
        SegmentMap::from_labels(4, width, labels).unwrap()
    }

    proptest! {
        #[test]
        fn order_is_scale_invariant(
            values in prop::collection::vec(-1.0f32..1.0, 40),
            cuts in prop::collection::vec(1usize..10, 0..6),
            scale in 0.01f32..100.0,
        ) {
            let segs = strip_labels(10, &cuts);
            let map = rel(values, 10);
            let scaled = map.map_values(|v| v * scale);
            for mode in [EvidenceMode::PositiveOnly, EvidenceMode::Absolute, EvidenceMode::Signed] {
                let a = rank_segments(&map, &segs, mode).unwrap();
                let b = rank_segments(&scaled, &segs, mode).unwrap();
                // Equal means stay equal under scaling, distinct means keep their order.
                for w in a.order.windows(2) {
                    let (x, y) = (w[0] as usize, w[1] as usize);
                    prop_assert!(b.importance[x] >= b.importance[y] - 1e-4 * scale as f64);
                }
                b.validate().unwrap();
            }
        }

        #[test]
        fn order_identical_under_exact_scaling(
            values in prop::collection::vec(-1.0f32..1.0, 40),
            cuts in prop::collection::vec(1usize..10, 0..6),
            exponent in -10i32..10,
        ) {
            let segs = strip_labels(10, &cuts);
            let map = rel(values, 10);
            let scaled = map.map_values(|v| v * 2f32.powi(exponent));
            for mode in [EvidenceMode::PositiveOnly, EvidenceMode::Absolute, EvidenceMode::Signed] {
                prop_assert_eq!(
                    rank_segments(&map, &segs, mode).unwrap().order,
                    rank_segments(&scaled, &segs, mode).unwrap().order
                );
            }
        }

        #[test]
        fn positive_only_importance_nonnegative_and_order_is_permutation(
            values in prop::collection::vec(-5.0f32..5.0, 40),
            cuts in prop::collection::vec(1usize..10, 0..6),
        ) {
            let segs = strip_labels(10, &cuts);
            let r = rank_segments(&rel(values, 10), &segs, EvidenceMode::PositiveOnly).unwrap();
            prop_assert!(r.importance.iter().all(|&v| v >= 0.0));
            let mut sorted = r.order.clone();
            sorted.sort_unstable();
            prop_assert_eq!(sorted, (0..segs.segment_count() as u32).collect::<Vec<_>>());
        }
    }
}
