//! Uninformative reference orderings.
//!
//! Random orderings come from ChaCha8 (see [`crate::rng`]), which produces the
//! same stream on every platform for a given seed.

use crate::imagery::{Image, RelevanceMap};
use crate::ranking::{EvidenceMode, SegmentRanking};
use crate::rng;
use crate::segmentation::SegmentMap;

/// Uniformly random removal order over `l` segments.
///
/// Importance is a placeholder, `(l - i) / l` for the segment at position
/// `i`, so the ranking validates like a real one.
pub fn random_ranking(l: usize, seed: u64) -> SegmentRanking {
    let order: Vec<u32> = rng::permutation(l, seed)
        .into_iter()
        .map(|s| s as u32)
        .collect();
    let mut importance = vec![0.0; l];
    for (i, &s) in order.iter().enumerate() {
        importance[s as usize] = (l - i) as f64 / l as f64;
    }
    SegmentRanking {
        order,
        importance,
        evidence_mode: EvidenceMode::PositiveOnly,
    }
}

/// Paints each segment with its random-ranking importance, so ranking the
/// resulting map over `segs` reproduces the random order exactly.
pub fn random_relevance(segs: &SegmentMap, seed: u64) -> RelevanceMap {
    let ranking = random_ranking(segs.segment_count(), seed);
    let data = segs
        .labels()
        .iter()
        .map(|&l| ranking.importance[l as usize] as f32)
        .collect();
    RelevanceMap::new(segs.height(), segs.width(), data, "random")
        .expect("painted map matches the segment map")
}

/// Sobel gradient magnitude of the luminance, borders replicated.
pub fn sobel_relevance(image: &Image) -> RelevanceMap {
    let (h, w) = (image.height(), image.width());
    let lum = image.luminance();
    let at = |r: isize, c: isize| {
        let r = r.clamp(0, h as isize - 1) as usize;
        let c = c.clamp(0, w as isize - 1) as usize;
        lum[r * w + c]
    };
    let mut data = Vec::with_capacity(h * w);
    for r in 0..h as isize {
        for c in 0..w as isize {
            // Each gradient is a difference of two identically summed sides,
            // so flat regions give exactly zero.
            let side = |cells: [(isize, isize); 3]| {
                cells
                    .iter()
                    .zip([1.0, 2.0, 1.0])
                    .map(|(&(dr, dc), k)| k * at(r + dr, c + dc))
                    .sum::<f64>()
            };
            let gx = side([(-1, 1), (0, 1), (1, 1)]) - side([(-1, -1), (0, -1), (1, -1)]);
            let gy = side([(1, -1), (1, 0), (1, 1)]) - side([(-1, -1), (-1, 0), (-1, 1)]);
            data.push(gx.hypot(gy) as f32);
        }
    }
    RelevanceMap::new(h, w, data, "sobel").expect("finite gradients")
}
