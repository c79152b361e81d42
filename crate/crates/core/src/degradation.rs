//! Removal schedules and degraded image sequences.
//!
//! A [`RemovalSchedule`] lists removal units (segments, pixels or squares) in
//! the order they are removed. [`degrade`] turns a schedule into a
//! [`DegradedSequence`]: frame `k` is the source with the first `k` units
//! overwritten by the replacement value. Frames are produced incrementally
//! from a single working copy.

use std::collections::HashSet;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::imagery::{DatasetMean, Image, RelevanceMap};
use crate::ranking::{order_descending, EvidenceMode, SegmentRanking};
use crate::segmentation::SegmentMap;
use crate::{rng, Error, Result};

/// Default edge length of the square regions replaced by noise.
pub const DEFAULT_SQUARE_SIZE: usize = 9;

/// Removal unit and replacement value of an evaluator.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Scheme {
    /// Superpixels replaced by the dataset mean colour (IROF).
    SegmentMean,
    /// Superpixels replaced by black.
    SegmentBlack,
    /// Pixel flipping towards the dataset mean colour.
    PixelMean,
    /// Pixel flipping towards black.
    PixelBlack,
    /// Square regions replaced by uniform noise.
    SamekSquares,
}

impl Scheme {
    pub const ALL: [Scheme; 5] = [
        Scheme::SegmentMean,
        Scheme::SegmentBlack,
        Scheme::PixelMean,
        Scheme::PixelBlack,
        Scheme::SamekSquares,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Scheme::SegmentMean => "segment-mean",
            Scheme::SegmentBlack => "segment-black",
            Scheme::PixelMean => "pixel-mean",
            Scheme::PixelBlack => "pixel-black",
            Scheme::SamekSquares => "samek-squares",
        }
    }

    /// Evaluator name used in sensitivity reports.
    pub fn evaluator_name(self) -> &'static str {
        match self {
            Scheme::SegmentMean => "irof-mean",
            Scheme::SegmentBlack => "irof-black",
            Scheme::PixelMean => "pixel-mean",
            Scheme::PixelBlack => "pixel-black",
            Scheme::SamekSquares => "samek",
        }
    }

    pub fn needs_segments(self) -> bool {
        matches!(self, Scheme::SegmentMean | Scheme::SegmentBlack)
    }

    pub fn needs_mean(self) -> bool {
        matches!(self, Scheme::SegmentMean | Scheme::PixelMean)
    }
}

impl fmt::Display for Scheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Scheme {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "segment-mean" | "irof-mean" | "irof" => Scheme::SegmentMean,
            "segment-black" | "irof-black" => Scheme::SegmentBlack,
            "pixel-mean" => Scheme::PixelMean,
            "pixel-black" => Scheme::PixelBlack,
            "samek-squares" | "samek" => Scheme::SamekSquares,
            _ => return Err(Error::InvalidParameter(format!("unknown scheme {s:?}"))),
        })
    }
}

/// Value written into removed pixels.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind")]
pub enum Replacement {
    /// Per-channel dataset mean colour.
    Mean,
    /// Minimum of the image's declared value range.
    Black,
    /// Per-pixel, per-channel uniform noise over the declared range.
    UniformNoise { seed: u64 },
}

/// A square cell of the tiling, in tile coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Square {
    pub row: usize,
    pub col: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Steps {
    Segments(Vec<u32>),
    Pixels(Vec<usize>),
    Squares { size: usize, cells: Vec<Square> },
}

impl Steps {
    pub fn len(&self) -> usize {
        match self {
            Steps::Segments(s) => s.len(),
            Steps::Pixels(p) => p.len(),
            Steps::Squares { cells, .. } => cells.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn all_unique(&self) -> bool {
        fn unique<T: std::hash::Hash + Eq>(items: impl ExactSizeIterator<Item = T>) -> bool {
            let n = items.len();
            items.collect::<HashSet<_>>().len() == n
        }
        match self {
            Steps::Segments(s) => unique(s.iter()),
            Steps::Pixels(p) => unique(p.iter()),
            Steps::Squares { cells, .. } => unique(cells.iter()),
        }
    }

    fn truncated(&self, k: usize) -> Steps {
        match self {
            Steps::Segments(s) => Steps::Segments(s[..k].to_vec()),
            Steps::Pixels(p) => Steps::Pixels(p[..k].to_vec()),
            Steps::Squares { size, cells } => Steps::Squares {
                size: *size,
                cells: cells[..k].to_vec(),
            },
        }
    }
}

/// Ordered, duplicate-free removal units plus their replacement.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RemovalSchedule {
    scheme: Scheme,
    steps: Steps,
    replacement: Replacement,
}

impl RemovalSchedule {
    pub fn new(scheme: Scheme, steps: Steps, replacement: Replacement) -> Result<Self> {
        let consistent = matches!(
            (scheme, &steps, replacement),
            (Scheme::SegmentMean, Steps::Segments(_), Replacement::Mean)
                | (Scheme::SegmentBlack, Steps::Segments(_), Replacement::Black)
                | (Scheme::PixelMean, Steps::Pixels(_), Replacement::Mean)
                | (Scheme::PixelBlack, Steps::Pixels(_), Replacement::Black)
                | (
                    Scheme::SamekSquares,
                    Steps::Squares { .. },
                    Replacement::UniformNoise { .. }
                )
        );
        if !consistent {
            return Err(Error::InvalidParameter(format!(
                "scheme {scheme} does not match its steps or replacement"
            )));
        }
        if let Steps::Squares { size: 0, .. } = steps {
            return Err(Error::InvalidParameter("square size must be positive".into()));
        }
        if !steps.all_unique() {
            return Err(Error::InvalidParameter(
                "removal schedule lists a unit twice".into(),
            ));
        }
        Ok(RemovalSchedule {
            scheme,
            steps,
            replacement,
        })
    }

    pub fn scheme(&self) -> Scheme {
        self.scheme
    }

    pub fn steps(&self) -> &Steps {
        &self.steps
    }

    pub fn replacement(&self) -> Replacement {
        self.replacement
    }

    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    /// The schedule restricted to its first `k` units.
    pub fn truncated(&self, k: usize) -> RemovalSchedule {
        RemovalSchedule {
            scheme: self.scheme,
            steps: self.steps.truncated(k.min(self.len())),
            replacement: self.replacement,
        }
    }
}

fn segment_scheme(replacement: Replacement) -> Result<Scheme> {
    match replacement {
        Replacement::Mean => Ok(Scheme::SegmentMean),
        Replacement::Black => Ok(Scheme::SegmentBlack),
        Replacement::UniformNoise { .. } => Err(Error::InvalidParameter(
            "segment removal uses mean or black replacement".into(),
        )),
    }
}

fn pixel_scheme(replacement: Replacement) -> Result<Scheme> {
    match replacement {
        Replacement::Mean => Ok(Scheme::PixelMean),
        Replacement::Black => Ok(Scheme::PixelBlack),
        Replacement::UniformNoise { .. } => Err(Error::InvalidParameter(
            "pixel flipping uses mean or black replacement".into(),
        )),
    }
}

/// Removes every segment in ranking order.
pub fn build_irof_schedule(
    ranking: &SegmentRanking,
    replacement: Replacement,
) -> Result<RemovalSchedule> {
    RemovalSchedule::new(
        segment_scheme(replacement)?,
        Steps::Segments(ranking.order.clone()),
        replacement,
    )
}

/// The `budget` most relevant pixels, descending, ties by ascending index.
pub fn build_pixel_schedule(
    map: &RelevanceMap,
    mode: EvidenceMode,
    budget: usize,
    replacement: Replacement,
) -> Result<RemovalSchedule> {
    let n = map.data().len();
    if budget > n {
        return Err(Error::InvalidParameter(format!(
            "pixel budget {budget} exceeds pixel count {n}"
        )));
    }
    let values: Vec<f64> = map.data().iter().map(|&v| mode.apply(v) as f64).collect();
    let mut order = order_descending(&values);
    order.truncate(budget);
    RemovalSchedule::new(pixel_scheme(replacement)?, Steps::Pixels(order), replacement)
}

/// Pixel flipping in a caller-supplied order (e.g. a random permutation).
pub fn pixel_schedule_from_order(
    order: Vec<usize>,
    replacement: Replacement,
) -> Result<RemovalSchedule> {
    RemovalSchedule::new(pixel_scheme(replacement)?, Steps::Pixels(order), replacement)
}

/// Tile geometry with truncated edge squares.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Tiling {
    pub height: usize,
    pub width: usize,
    pub size: usize,
}

impl Tiling {
    pub fn new(height: usize, width: usize, size: usize) -> Result<Self> {
        if size == 0 {
            return Err(Error::InvalidParameter("square size must be positive".into()));
        }
        Ok(Tiling {
            height,
            width,
            size,
        })
    }

    pub fn rows(&self) -> usize {
        self.height.div_ceil(self.size)
    }

    pub fn cols(&self) -> usize {
        self.width.div_ceil(self.size)
    }

    pub fn count(&self) -> usize {
        self.rows() * self.cols()
    }

    /// Square by row-major tile index.
    pub fn square(&self, idx: usize) -> Square {
        Square {
            row: idx / self.cols(),
            col: idx % self.cols(),
        }
    }

    pub fn pixels(&self, sq: Square) -> impl Iterator<Item = usize> + '_ {
        let r0 = sq.row * self.size;
        let c0 = sq.col * self.size;
        let r1 = (r0 + self.size).min(self.height);
        let c1 = (c0 + self.size).min(self.width);
        (r0..r1).flat_map(move |r| (c0..c1).map(move |c| r * self.width + c))
    }
}

/// Top-`budget` squares by mean preprocessed relevance, replaced by seeded noise.
pub fn build_samek_schedule(
    map: &RelevanceMap,
    mode: EvidenceMode,
    square_size: usize,
    budget: usize,
    noise_seed: u64,
) -> Result<RemovalSchedule> {
    let tiling = Tiling::new(map.height(), map.width(), square_size)?;
    if budget > tiling.count() {
        return Err(Error::InvalidParameter(format!(
            "square budget {budget} exceeds {} squares",
            tiling.count()
        )));
    }
    let means: Vec<f64> = (0..tiling.count())
        .map(|i| {
            let (mut sum, mut count) = (0.0f64, 0usize);
            for p in tiling.pixels(tiling.square(i)) {
                sum += mode.apply(map.data()[p]) as f64;
                count += 1;
            }
            sum / count as f64
        })
        .collect();
    let mut order = order_descending(&means);
    order.truncate(budget);
    squares_schedule_from_order(&tiling, order, noise_seed)
}

/// Square removal in a caller-supplied order of row-major tile indices.
pub fn squares_schedule_from_order(
    tiling: &Tiling,
    order: Vec<usize>,
    noise_seed: u64,
) -> Result<RemovalSchedule> {
    let cells = order.into_iter().map(|i| tiling.square(i)).collect();
    RemovalSchedule::new(
        Scheme::SamekSquares,
        Steps::Squares {
            size: tiling.size,
            cells,
        },
        Replacement::UniformNoise { seed: noise_seed },
    )
}

/// Replacement values for every pixel.
#[derive(Debug, Clone)]
enum Fill {
    Constant(Vec<f32>),
    Noise(Vec<f32>),
}

/// One frame of a [`DegradedSequence`].
#[derive(Debug, Clone)]
pub struct Frame {
    /// Number of units removed.
    pub removed: usize,
    pub image: Image,
}

/// Lazily produced frames of an image under a removal schedule.
#[derive(Debug, Clone)]
pub struct DegradedSequence {
    source: Image,
    current: Image,
    /// CSR layout: pixels of unit `u` are `pixels[offsets[u]..offsets[u + 1]]`.
    pixels: Vec<usize>,
    offsets: Vec<usize>,
    fill: Fill,
    removed: usize,
    started: bool,
    stride: usize,
}

/// Builds the frame sequence of `image` under `schedule`.
///
/// `segs` is required for segment schemes and `mean` for mean replacement.
pub fn degrade(
    image: &Image,
    schedule: &RemovalSchedule,
    segs: Option<&SegmentMap>,
    mean: Option<&DatasetMean>,
) -> Result<DegradedSequence> {
    let n = image.pixel_count();
    let mut pixels = Vec::new();
    let mut offsets = vec![0];
    match schedule.steps() {
        Steps::Segments(order) => {
            let segs = segs.ok_or_else(|| {
                Error::MissingInput("segment removal needs a segment map".into())
            })?;
            segs.check_matches(image)?;
            let lists = segs.pixel_lists();
            for &label in order {
                let list = lists.get(label as usize).ok_or_else(|| {
                    Error::InvalidParameter(format!(
                        "segment {label} out of range ({} segments)",
                        lists.len()
                    ))
                })?;
                pixels.extend_from_slice(list);
                offsets.push(pixels.len());
            }
        }
        Steps::Pixels(order) => {
            for &p in order {
                if p >= n {
                    return Err(Error::InvalidParameter(format!(
                        "pixel {p} out of range ({n} pixels)"
                    )));
                }
                pixels.push(p);
                offsets.push(pixels.len());
            }
        }
        Steps::Squares { size, cells } => {
            let tiling = Tiling::new(image.height(), image.width(), *size)?;
            for &sq in cells {
                if sq.row >= tiling.rows() || sq.col >= tiling.cols() {
                    return Err(Error::InvalidParameter(format!(
                        "square ({}, {}) outside the {}x{} tiling",
                        sq.row,
                        sq.col,
                        tiling.rows(),
                        tiling.cols()
                    )));
                }
                pixels.extend(tiling.pixels(sq));
                offsets.push(pixels.len());
            }
        }
    }

    let range = image.range();
    let fill = match schedule.replacement() {
        Replacement::Mean => {
            let mean = mean.ok_or_else(|| {
                Error::MissingInput("mean replacement needs the dataset mean".into())
            })?;
            if mean.channels() != image.channels() {
                return Err(Error::DimensionMismatch(format!(
                    "dataset mean has {} channels, image has {}",
                    mean.channels(),
                    image.channels()
                )));
            }
            if let Some(&v) = mean.per_channel_mean.iter().find(|&&v| !range.contains(v)) {
                return Err(Error::InvalidParameter(format!(
                    "dataset mean {v} lies outside the image range [{}, {}]",
                    range.min, range.max
                )));
            }
            Fill::Constant(mean.per_channel_mean.clone())
        }
        Replacement::Black => Fill::Constant(vec![range.min; image.channels()]),
        Replacement::UniformNoise { seed } => {
            use rand::Rng;
            let mut rng = rng::seeded(seed);
            let noise = (0..image.data().len())
                .map(|_| range.lerp(rng.random::<f64>()).clamp(range.min, range.max))
                .collect();
            Fill::Noise(noise)
        }
    };

    Ok(DegradedSequence {
        source: image.clone(),
        current: image.clone(),
        pixels,
        offsets,
        fill,
        removed: 0,
        started: false,
        stride: 1,
    })
}

impl DegradedSequence {
    /// Number of removal units in the schedule.
    pub fn unit_count(&self) -> usize {
        self.offsets.len() - 1
    }

    pub fn source(&self) -> &Image {
        &self.source
    }

    /// Emit only every `stride`-th frame (plus the final one).
    pub fn with_stride(mut self, stride: usize) -> Self {
        self.stride = stride.max(1);
        self
    }

    /// Number of frames the iterator yields from the start.
    pub fn frame_count(&self) -> usize {
        1 + self.unit_count().div_ceil(self.stride)
    }

    /// Pixels overwritten by unit `u`.
    pub fn unit_pixels(&self, u: usize) -> &[usize] {
        &self.pixels[self.offsets[u]..self.offsets[u + 1]]
    }

    fn apply(image: &mut Image, fill: &Fill, pixels: &[usize]) {
        let c = image.channels();
        match fill {
            Fill::Constant(value) => {
                for &p in pixels {
                    image.set_pixel(p, value);
                }
            }
            Fill::Noise(noise) => {
                for &p in pixels {
                    image.set_pixel(p, &noise[p * c..(p + 1) * c]);
                }
            }
        }
    }

    /// Frame with the first `k` units removed, built from the source.
    pub fn frame_at(&self, k: usize) -> Result<Image> {
        if k > self.unit_count() {
            return Err(Error::InvalidParameter(format!(
                "frame {k} beyond {} units",
                self.unit_count()
            )));
        }
        let mut image = self.source.clone();
        Self::apply(&mut image, &self.fill, &self.pixels[..self.offsets[k]]);
        Ok(image)
    }
}

impl Iterator for DegradedSequence {
    type Item = Frame;

    fn next(&mut self) -> Option<Frame> {
        if !self.started {
            self.started = true;
            return Some(Frame {
                removed: 0,
                image: self.current.clone(),
            });
        }
        if self.removed >= self.unit_count() {
            return None;
        }
        let upto = (self.removed + self.stride).min(self.unit_count());
        let span = &self.pixels[self.offsets[self.removed]..self.offsets[upto]];
        Self::apply(&mut self.current, &self.fill, span);
        self.removed = upto;
        Some(Frame {
            removed: upto,
            image: self.current.clone(),
        })
    }
}
