//! Superpixel segmentation.
//!
//! [`slic_segment`] clusters pixels with k-means in a joint colour/position
//! space: CIELAB for RGB input, scaled intensity for grayscale. Centres start
//! on a regular grid, are nudged to the lowest-gradient pixel of their 3×3
//! neighbourhood, and each pixel is assigned to the nearest centre within a
//! local window under
//!
//! ```text
//! d = d_colour + (compactness / S) * d_xy,    S = sqrt(H * W / K)
//! ```
//!
//! After the k-means passes, every 4-connected component becomes a segment;
//! components smaller than half the nominal segment area are merged into
//! the adjacent segment they share the longest border with. Labels are
//! numbered by first occurrence in row-major order.

use std::collections::VecDeque;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::imagery::{save_gray16_png, write_raw, Image, Sidecar};
use crate::{Error, Result};

/// Per-pixel segment labels partitioning an image into `segment_count` superpixels.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SegmentMap {
    height: usize,
    width: usize,
    labels: Vec<u32>,
    segment_count: usize,
}

impl SegmentMap {
    /// Builds a map after checking labels are contiguous from 0 and each
    /// label is a single 4-connected region.
    pub fn from_labels(height: usize, width: usize, labels: Vec<u32>) -> Result<Self> {
        if labels.len() != height * width {
            return Err(Error::DimensionMismatch(format!(
                "segment map {height}x{width} needs {} labels, got {}",
                height * width,
                labels.len()
            )));
        }
        let segment_count = labels.iter().map(|&l| l as usize + 1).max().unwrap_or(0);
        let map = SegmentMap {
            height,
            width,
            labels,
            segment_count,
        };
        map.validate()?;
        Ok(map)
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn labels(&self) -> &[u32] {
        &self.labels
    }

    pub fn segment_count(&self) -> usize {
        self.segment_count
    }

    pub fn label(&self, idx: usize) -> u32 {
        self.labels[idx]
    }

    /// Checks the partition and connectivity invariants.
    pub fn validate(&self) -> Result<()> {
        let mut counts = vec![0usize; self.segment_count];
        for &l in &self.labels {
            counts[l as usize] += 1;
        }
        if let Some(missing) = counts.iter().position(|&c| c == 0) {
            return Err(Error::InvalidParameter(format!(
                "segment label {missing} does not occur"
            )));
        }
        let mut seen = vec![false; self.labels.len()];
        let mut components = vec![0usize; self.segment_count];
        for start in 0..self.labels.len() {
            if seen[start] {
                continue;
            }
            let label = self.labels[start];
            components[label as usize] += 1;
            if components[label as usize] > 1 {
                return Err(Error::InvalidParameter(format!(
                    "segment {label} is not 4-connected"
                )));
            }
            flood(self.height, self.width, start, &mut seen, |q| {
                self.labels[q] == label
            });
        }
        Ok(())
    }

    pub fn check_matches(&self, image: &Image) -> Result<()> {
        if self.height != image.height() || self.width != image.width() {
            return Err(Error::DimensionMismatch(format!(
                "segment map {}x{} vs image {}x{}",
                self.height,
                self.width,
                image.height(),
                image.width()
            )));
        }
        Ok(())
    }

    /// Pixel indices of every segment, in ascending order within each list.
    pub fn pixel_lists(&self) -> Vec<Vec<usize>> {
        segment_pixel_lists(self)
    }

    /// Writes labels as a 16-bit grayscale PNG.
    pub fn save_png16(&self, path: &Path) -> Result<()> {
        if self.segment_count > u16::MAX as usize + 1 {
            return Err(Error::InvalidParameter(format!(
                "{} segments do not fit 16-bit labels",
                self.segment_count
            )));
        }
        let samples: Vec<u16> = self.labels.iter().map(|&l| l as u16).collect();
        save_gray16_png(path, self.width, self.height, &samples)
    }

    /// Writes labels cast to `f32` in the raw-float format.
    pub fn save_raw(&self, path: &Path, config: Option<serde_json::Value>) -> Result<()> {
        let sidecar = Sidecar {
            height: self.height,
            width: self.width,
            channels: 1,
            method_id: Some("segments".into()),
            value_range: None,
            config,
        };
        let values: Vec<f32> = self.labels.iter().map(|&l| l as f32).collect();
        write_raw(path, &sidecar, &values)
    }

    /// Reads labels written by [`SegmentMap::save_raw`].
    pub fn load_raw(path: &Path) -> Result<(SegmentMap, Sidecar)> {
        let (sidecar, values) = crate::imagery::read_raw(path)?;
        let mut labels = Vec::with_capacity(values.len());
        for v in values {
            if !(v >= 0.0 && v.fract() == 0.0 && v < 16_777_216.0) {
                return Err(Error::format(path, format!("invalid segment label {v}")));
            }
            labels.push(v as u32);
        }
        let map = SegmentMap::from_labels(sidecar.height, sidecar.width, labels)
            .map_err(|e| Error::format(path, e.to_string()))?;
        Ok((map, sidecar))
    }
}

/// Breadth-first fill over 4-neighbours accepted by `member`, marking `seen`.
/// Returns the visited pixels in visit order.
fn flood(
    height: usize,
    width: usize,
    start: usize,
    seen: &mut [bool],
    member: impl Fn(usize) -> bool,
) -> Vec<usize> {
    let mut out = Vec::new();
    let mut queue = VecDeque::from([start]);
    seen[start] = true;
    while let Some(p) = queue.pop_front() {
        out.push(p);
        for q in neighbours4(height, width, p) {
            if !seen[q] && member(q) {
                seen[q] = true;
                queue.push_back(q);
            }
        }
    }
    out
}

fn neighbours4(height: usize, width: usize, p: usize) -> impl Iterator<Item = usize> {
    let (r, c) = (p / width, p % width);
    let up = (r > 0).then(|| p - width);
    let down = (r + 1 < height).then(|| p + width);
    let left = (c > 0).then(|| p - 1);
    let right = (c + 1 < width).then(|| p + 1);
    [up, left, right, down].into_iter().flatten()
}

/// Pixel index lists per segment; together they partition `0..H*W`.
pub fn segment_pixel_lists(map: &SegmentMap) -> Vec<Vec<usize>> {
    let mut counts = vec![0usize; map.segment_count];
    for &l in &map.labels {
        counts[l as usize] += 1;
    }
    let mut lists: Vec<Vec<usize>> = counts.iter().map(|&c| Vec::with_capacity(c)).collect();
    for (idx, &l) in map.labels.iter().enumerate() {
        lists[l as usize].push(idx);
    }
    lists
}

/// Anything that can partition an image into connected segments.
pub trait Segmenter: Send + Sync {
    fn segment(&self, image: &Image) -> Result<SegmentMap>;

    /// Effective parameters, echoed into run reports.
    fn describe(&self) -> serde_json::Value;
}

/// SLIC parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SlicParams {
    pub target_segments: usize,
    pub compactness: f64,
    pub max_iterations: usize,
    /// Recorded for reproducibility; grid initialisation is deterministic
    /// so the current algorithm draws no random numbers.
    pub rng_seed: u64,
}

impl Default for SlicParams {
    fn default() -> Self {
        SlicParams {
            target_segments: 300,
            compactness: 10.0,
            max_iterations: 10,
            rng_seed: 0,
        }
    }
}

impl SlicParams {
    pub fn validate(&self) -> Result<()> {
        if self.target_segments < 2 {
            return Err(Error::InvalidParameter(
                "target_segments must be at least 2".into(),
            ));
        }
        if !(self.compactness > 0.0 && self.compactness.is_finite()) {
            return Err(Error::InvalidParameter("compactness must be > 0".into()));
        }
        if self.max_iterations == 0 {
            return Err(Error::InvalidParameter(
                "max_iterations must be at least 1".into(),
            ));
        }
        Ok(())
    }
}

impl Segmenter for SlicParams {
    fn segment(&self, image: &Image) -> Result<SegmentMap> {
        slic_segment(image, self)
    }

    fn describe(&self) -> serde_json::Value {
        serde_json::json!({
            "algorithm": "slic",
            "target_segments": self.target_segments,
            "compactness": self.compactness,
            "max_iterations": self.max_iterations,
            "rng_seed": self.rng_seed,
            "min_component_fraction": MIN_COMPONENT_FRACTION,
        })
    }
}

/// Components below this fraction of the nominal segment area get merged.
const MIN_COMPONENT_FRACTION: f64 = 0.5;

fn srgb_to_linear(c: f64) -> f64 {
    if c <= 0.04045 {
        c / 12.92
    } else {
        ((c + 0.055) / 1.055).powf(2.4)
    }
}

fn lab_f(t: f64) -> f64 {
    const EPSILON: f64 = 216.0 / 24389.0;
    const KAPPA: f64 = 24389.0 / 27.0;
    if t > EPSILON {
        t.cbrt()
    } else {
        (KAPPA * t + 16.0) / 116.0
    }
}

/// sRGB in `[0, 1]` to CIELAB under D65.
pub fn srgb_to_lab(rgb: [f64; 3]) -> [f64; 3] {
    let [r, g, b] = rgb.map(srgb_to_linear);
    let x = (0.4124564 * r + 0.3575761 * g + 0.1804375 * b) / 0.95047;
    let y = 0.2126729 * r + 0.7151522 * g + 0.0721750 * b;
    let z = (0.0193339 * r + 0.1191920 * g + 0.9503041 * b) / 1.08883;
    let (fx, fy, fz) = (lab_f(x), lab_f(y), lab_f(z));
    [116.0 * fy - 16.0, 500.0 * (fx - fy), 200.0 * (fy - fz)]
}

/// Colour features per pixel: Lab for RGB, intensity scaled to `[0, 100]` for gray.
fn colour_features(image: &Image) -> Vec<[f64; 3]> {
    let range = image.range();
    let n = image.pixel_count();
    (0..n)
        .map(|p| {
            let px = image.pixel(p);
            if px.len() == 1 {
                [100.0 * range.normalize(px[0]).clamp(0.0, 1.0), 0.0, 0.0]
            } else {
                srgb_to_lab([0, 1, 2].map(|c| range.normalize(px[c]).clamp(0.0, 1.0)))
            }
        })
        .collect()
}

fn colour_dist2(a: &[f64; 3], b: &[f64; 3]) -> f64 {
    (a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2)
}

#[derive(Debug, Clone, Copy)]
struct Centre {
    colour: [f64; 3],
    row: f64,
    col: f64,
}

/// Partitions `image` into roughly `params.target_segments` connected superpixels.
pub fn slic_segment(image: &Image, params: &SlicParams) -> Result<SegmentMap> {
    params.validate()?;
    let (h, w) = (image.height(), image.width());
    let n = h * w;
    let k = params.target_segments;
    if k > n {
        return Err(Error::InvalidParameter(format!(
            "target_segments {k} exceeds pixel count {n}"
        )));
    }
    let features = colour_features(image);
    let step = ((n as f64) / k as f64).sqrt();

    // Grid layout: at least sqrt(K*W/H) columns, rows to make up K.
    let nx = ((k as f64 * w as f64 / h as f64).sqrt().ceil() as usize).clamp(1, w);
    let ny = ((k as f64 / nx as f64).round() as usize).clamp(1, h);
    let cell_w = w as f64 / nx as f64;
    let cell_h = h as f64 / ny as f64;

    let gradient = |r: usize, c: usize| -> f64 {
        let at = |rr: usize, cc: usize| &features[rr * w + cc];
        let (c0, c1) = (c.saturating_sub(1), (c + 1).min(w - 1));
        let (r0, r1) = (r.saturating_sub(1), (r + 1).min(h - 1));
        colour_dist2(at(r, c1), at(r, c0)) + colour_dist2(at(r1, c), at(r0, c))
    };

    let mut centres = Vec::with_capacity(nx * ny);
    for j in 0..ny {
        for i in 0..nx {
            let r = (((j as f64 + 0.5) * cell_h) as usize).min(h - 1);
            let c = (((i as f64 + 0.5) * cell_w) as usize).min(w - 1);
            let (mut best_r, mut best_c, mut best_g) = (r, c, gradient(r, c));
            for rr in r.saturating_sub(1)..=(r + 1).min(h - 1) {
                for cc in c.saturating_sub(1)..=(c + 1).min(w - 1) {
                    let g = gradient(rr, cc);
                    if g < best_g {
                        (best_r, best_c, best_g) = (rr, cc, g);
                    }
                }
            }
            centres.push(Centre {
                colour: features[best_r * w + best_c],
                row: best_r as f64,
                col: best_c as f64,
            });
        }
    }

    // Start from the grid cells so every pixel has an owner even if no
    // search window reaches it.
    let mut assignment: Vec<usize> = (0..n)
        .map(|p| {
            let (r, c) = (p / w, p % w);
            let j = ((r as f64 / cell_h) as usize).min(ny - 1);
            let i = ((c as f64 / cell_w) as usize).min(nx - 1);
            j * nx + i
        })
        .collect();

    let spatial_weight = params.compactness / step;
    let reach = step.max(cell_w).max(cell_h).ceil() as isize;
    let mut distance = vec![f64::INFINITY; n];
    for _ in 0..params.max_iterations {
        distance.fill(f64::INFINITY);
        for (ci, centre) in centres.iter().enumerate() {
            let (cr, cc) = (centre.row.round() as isize, centre.col.round() as isize);
            let r_lo = (cr - reach).max(0) as usize;
            let r_hi = ((cr + reach).min(h as isize - 1)) as usize;
            let c_lo = (cc - reach).max(0) as usize;
            let c_hi = ((cc + reach).min(w as isize - 1)) as usize;
            for r in r_lo..=r_hi {
                for c in c_lo..=c_hi {
                    let p = r * w + c;
                    let d_colour = colour_dist2(&features[p], &centre.colour).sqrt();
                    let d_xy = ((r as f64 - centre.row).powi(2) + (c as f64 - centre.col).powi(2))
                        .sqrt();
                    let d = d_colour + spatial_weight * d_xy;
                    if d < distance[p] {
                        distance[p] = d;
                        assignment[p] = ci;
                    }
                }
            }
        }

        let mut sums = vec![[0.0f64; 5]; centres.len()];
        let mut counts = vec![0usize; centres.len()];
        for (p, &ci) in assignment.iter().enumerate() {
            let f = &features[p];
            let s = &mut sums[ci];
            s[0] += f[0];
            s[1] += f[1];
            s[2] += f[2];
            s[3] += (p / w) as f64;
            s[4] += (p % w) as f64;
            counts[ci] += 1;
        }
        for ((centre, s), &count) in centres.iter_mut().zip(&sums).zip(&counts) {
            if count > 0 {
                let inv = 1.0 / count as f64;
                centre.colour = [s[0] * inv, s[1] * inv, s[2] * inv];
                centre.row = s[3] * inv;
                centre.col = s[4] * inv;
            }
        }
    }

    let min_size = ((MIN_COMPONENT_FRACTION * n as f64 / k as f64) as usize).max(1);
    let labels = enforce_connectivity(h, w, &assignment, min_size);
    let segment_count = labels.iter().map(|&l| l as usize + 1).max().unwrap_or(0);
    Ok(SegmentMap {
        height: h,
        width: w,
        labels,
        segment_count,
    })
}

/// Splits clusters into 4-connected components and merges small components
/// into the already-labelled neighbour with the longest shared border
/// (ties to the smaller label). Output labels follow row-major first occurrence.
fn enforce_connectivity(h: usize, w: usize, clusters: &[usize], min_size: usize) -> Vec<u32> {
    const UNSET: u32 = u32::MAX;
    let n = h * w;
    let mut labels = vec![UNSET; n];
    let mut in_component = vec![false; n];
    let mut next_label = 0u32;
    let mut border: Vec<(u32, usize)> = Vec::new();

    for start in 0..n {
        if labels[start] != UNSET {
            continue;
        }
        let cluster = clusters[start];
        let component = flood(h, w, start, &mut in_component, |q| {
            labels[q] == UNSET && clusters[q] == cluster
        });

        let mut target = None;
        if component.len() < min_size {
            border.clear();
            for &p in &component {
                for q in neighbours4(h, w, p) {
                    let l = labels[q];
                    if l != UNSET {
                        match border.iter_mut().find(|(bl, _)| *bl == l) {
                            Some(entry) => entry.1 += 1,
                            None => border.push((l, 1)),
                        }
                    }
                }
            }
            target = border
                .iter()
                .max_by(|a, b| a.1.cmp(&b.1).then(b.0.cmp(&a.0)))
                .map(|&(l, _)| l);
        }
        let label = target.unwrap_or_else(|| {
            next_label += 1;
            next_label - 1
        });
        for &p in &component {
            labels[p] = label;
        }
    }
    labels
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::imagery::ValueRange;
    use rand::{Rng, SeedableRng};

    fn half_black_white() -> Image {
        let data = (0..900)
            .map(|p| if p % 30 < 15 { 0.0 } else { 1.0 })
            .collect();
        Image::new(30, 30, 1, data, ValueRange::UNIT).unwrap()
    }

    fn params(target: usize) -> SlicParams {
        SlicParams {
            target_segments: target,
            ..SlicParams::default()
        }
    }

    #[test]
    fn two_segments_split_at_the_step_edge() {
        let map = slic_segment(&half_black_white(), &params(2)).unwrap();
        assert_eq!(map.segment_count(), 2);
        // Count label-0 pixels per row: the boundary sits where they end.
        for r in 0..30 {
            let left = (0..30).filter(|&c| map.label(r * 30 + c) == 0).count();
            assert!((13..=17).contains(&left), "row {r}: {left} pixels on the left");
        }
    }

    #[test]
    fn constant_image_gives_equal_quadrants() {
        let img = Image::filled(20, 20, &[0.3], ValueRange::UNIT).unwrap();
        let map = slic_segment(&img, &params(4)).unwrap();
        assert_eq!(map.segment_count(), 4);
        for list in map.pixel_lists() {
            assert!((70..=130).contains(&list.len()), "segment size {}", list.len());
        }
    }

    #[test]
    fn rgb_constant_image_segments() {
        let img = Image::filled(12, 18, &[0.1, 0.5, 0.9], ValueRange::UNIT).unwrap();
        let map = slic_segment(&img, &params(6)).unwrap();
        map.validate().unwrap();
        assert_eq!(map.segment_count(), 6);
    }

    #[test]
    fn target_beyond_pixel_count_is_an_error() {
        let img = Image::filled(3, 3, &[0.0], ValueRange::UNIT).unwrap();
        assert!(slic_segment(&img, &params(10)).is_err());
        assert!(slic_segment(&img, &params(9)).is_ok());
        assert!(slic_segment(&img, &params(1)).is_err());
    }

    #[test]
    fn pixel_lists_small_cases() {
        let map = SegmentMap::from_labels(1, 4, vec![0, 0, 1, 1]).unwrap();
        assert_eq!(map.pixel_lists(), vec![vec![0, 1], vec![2, 3]]);
        let single = SegmentMap::from_labels(2, 2, vec![0; 4]).unwrap();
        assert_eq!(single.pixel_lists(), vec![vec![0, 1, 2, 3]]);
    }

    #[test]
    fn from_labels_rejects_gaps_and_disconnected_labels() {
        assert!(SegmentMap::from_labels(1, 3, vec![0, 2, 2]).is_err());
        assert!(SegmentMap::from_labels(1, 3, vec![0, 1, 0]).is_err());
        assert!(SegmentMap::from_labels(1, 3, vec![0, 1]).is_err());
    }

    #[test]
    fn pixel_lists_partition_random_maps() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        for _ in 0..10 {
            let data = (0..256).map(|_| rng.random::<f32>()).collect();
            let img = Image::new(16, 16, 1, data, ValueRange::UNIT).unwrap();
            let map = slic_segment(&img, &params(12)).unwrap();
            let lists = map.pixel_lists();
            for (l, list) in lists.iter().enumerate() {
                assert_eq!(
                    list.len(),
                    map.labels().iter().filter(|&&x| x as usize == l).count()
                );
            }
            let mut all: Vec<usize> = lists.concat();
            all.sort_unstable();
            assert_eq!(all, (0..256).collect::<Vec<_>>());
        }
    }

    #[test]
    fn high_compactness_approaches_a_grid() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(9);
        let data = (0..48 * 48).map(|_| rng.random::<f32>()).collect();
        let img = Image::new(48, 48, 1, data, ValueRange::UNIT).unwrap();
        let p = SlicParams {
            target_segments: 36,
            compactness: 1e4,
            ..SlicParams::default()
        };
        let map = slic_segment(&img, &p).unwrap();
        let bound = 4.0 * ((48.0 * 48.0) / map.segment_count() as f64).sqrt();
        for list in map.pixel_lists() {
            let rows = list.iter().map(|p| p / 48);
            let cols = list.iter().map(|p| p % 48);
            let dr = (rows.clone().max().unwrap() - rows.min().unwrap()) as f64;
            let dc = (cols.clone().max().unwrap() - cols.min().unwrap()) as f64;
            assert!(dr.hypot(dc) <= bound);
        }
    }

    #[test]
    fn labels_follow_first_occurrence() {
        let img = half_black_white();
        let map = slic_segment(&img, &params(9)).unwrap();
        let mut next = 0u32;
        for &l in map.labels() {
            assert!(l <= next);
            if l == next {
                next += 1;
            }
        }
    }

    #[test]
    fn lab_reference_points() {
        let white = srgb_to_lab([1.0, 1.0, 1.0]);
        assert!((white[0] - 100.0).abs() < 1e-3 && white[1].abs() < 1e-2 && white[2].abs() < 1e-2);
        let black = srgb_to_lab([0.0, 0.0, 0.0]);
        assert!(black[0].abs() < 1e-9);
        // Pure sRGB red: L*=53.24, a*=80.09, b*=67.20
        let red = srgb_to_lab([1.0, 0.0, 0.0]);
        assert!((red[0] - 53.24).abs() < 0.05);
        assert!((red[1] - 80.09).abs() < 0.1);
        assert!((red[2] - 67.20).abs() < 0.1);
    }

    #[test]
    fn label_exports() {
        let dir = tempfile::tempdir().unwrap();
        let map = slic_segment(&half_black_white(), &params(6)).unwrap();
        map.save_png16(&dir.path().join("s.png")).unwrap();
        let raw = dir.path().join("s.f32");
        map.save_raw(&raw, Some(params(6).describe())).unwrap();
        let (back, sidecar) = SegmentMap::load_raw(&raw).unwrap();
        assert_eq!(back, map);
        assert!(sidecar.config.is_some());
    }
}
