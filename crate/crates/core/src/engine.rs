//! Degradation curves, AOC and dataset-level IROF.
//!
//! A curve holds `f_l = F(X'^l)_y / F(X'^0)_y` for `l = 0..=L`; its AOC is the
//! rectangular mean `1/(L+1) Σ (1 - f_l)`, unclipped, so `f_0 = 1` always
//! contributes zero. The IROF score of a method is `100 × mean AOC`.

use std::fs;
use std::path::PathBuf;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::backend::{request_id, ClassScores, Classifier, Request};
use crate::baselines::random_ranking;
use crate::dataset::Dataset;
use crate::degradation::{
    build_irof_schedule, build_pixel_schedule, build_samek_schedule, degrade,
    pixel_schedule_from_order, squares_schedule_from_order, RemovalSchedule, Replacement,
    Scheme, Tiling, DEFAULT_SQUARE_SIZE,
};
use crate::imagery::{save_image_png, DatasetMean, Image, KahanSum, RelevanceMap};
use crate::ranking::{rank_segments, EvidenceMode};
use crate::segmentation::SegmentMap;
use crate::{rng, Error, Result};

/// Name of the AOC convention, echoed into reports.
pub const AOC_CONVENTION: &str = "rectangular mean of (1 - f_l) over l = 0..=L, unclipped";

/// Rectangular area over a normalized curve.
pub fn aoc(values: &[f64]) -> f64 {
    assert!(!values.is_empty(), "a curve has at least frame 0");
    values.iter().map(|f| 1.0 - f).sum::<f64>() / values.len() as f64
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DegradationCurve {
    pub image_id: String,
    pub method_id: String,
    pub scheme: Scheme,
    pub target_class: usize,
    /// Units removed at each recorded frame; `removed[0] == 0`.
    pub removed: Vec<usize>,
    /// Normalized scores; `values[0] == 1`.
    pub values: Vec<f64>,
}

impl DegradationCurve {
    pub fn aoc(&self) -> f64 {
        aoc(&self.values)
    }

    /// Total removal units of the schedule behind this curve.
    pub fn unit_count(&self) -> usize {
        self.removed.last().copied().unwrap_or(0)
    }
}

/// Writes a frame dump every `every` frames under `dir/<method>/<image>/`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameDump {
    pub dir: PathBuf,
    pub every: usize,
}

/// Parameters shared by every evaluation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EngineConfig {
    pub scheme: Scheme,
    pub evidence_mode: EvidenceMode,
    /// Edge length of Samek squares.
    pub square_size: usize,
    /// Base seed of Samek noise; image `i` uses `noise_seed ^ i`.
    pub noise_seed: u64,
    /// Class whose score is tracked; `None` uses the frame-0 argmax.
    pub target_class: Option<usize>,
    /// Frame cap for pixel and square curves, which are strided to fit.
    /// Segment curves always record every removal.
    pub max_frames: usize,
    /// Worker threads; 0 means one per logical CPU.
    pub workers: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dump: Option<FrameDump>,
}

impl Default for EngineConfig {
    fn default() -> Self {
        EngineConfig {
            scheme: Scheme::SegmentMean,
            evidence_mode: EvidenceMode::PositiveOnly,
            square_size: DEFAULT_SQUARE_SIZE,
            noise_seed: 0,
            target_class: None,
            max_frames: 300,
            workers: 0,
            dump: None,
        }
    }
}

impl EngineConfig {
    pub fn validate(&self) -> Result<()> {
        if self.square_size == 0 {
            return Err(Error::InvalidParameter("square size must be positive".into()));
        }
        if self.max_frames == 0 {
            return Err(Error::InvalidParameter("max_frames must be positive".into()));
        }
        if matches!(&self.dump, Some(d) if d.every == 0) {
            return Err(Error::InvalidParameter("frame dump interval must be positive".into()));
        }
        Ok(())
    }

    pub(crate) fn pool(&self) -> Result<rayon::ThreadPool> {
        rayon::ThreadPoolBuilder::new()
            .num_threads(self.workers)
            .build()
            .map_err(|e| Error::InvalidParameter(format!("worker pool: {e}")))
    }
}

/// Where a method's removal order comes from.
#[derive(Debug, Clone)]
pub enum Ordering {
    /// One heatmap per dataset image, in dataset order.
    Heatmaps(Vec<RelevanceMap>),
    /// Uniformly random order; image `i` uses seed `seed ^ i`.
    Random { seed: u64 },
}

#[derive(Debug, Clone)]
pub struct Method {
    pub id: String,
    pub ordering: Ordering,
}

impl Method {
    pub fn heatmaps(id: impl Into<String>, maps: Vec<RelevanceMap>) -> Self {
        Method {
            id: id.into(),
            ordering: Ordering::Heatmaps(maps),
        }
    }

    pub fn random(id: impl Into<String>, seed: u64) -> Self {
        Method {
            id: id.into(),
            ordering: Ordering::Random { seed },
        }
    }

    fn check(&self, dataset: &Dataset) -> Result<()> {
        if let Ordering::Heatmaps(maps) = &self.ordering {
            if maps.len() != dataset.len() {
                return Err(Error::MissingInput(format!(
                    "method {} has {} heatmaps for {} images",
                    self.id,
                    maps.len(),
                    dataset.len()
                )));
            }
        }
        Ok(())
    }
}

/// One image with what its schedules need.
#[derive(Debug, Clone, Copy)]
pub struct Case<'a> {
    pub index: usize,
    pub id: &'a str,
    pub image: &'a Image,
    pub segments: Option<&'a SegmentMap>,
    pub mean: Option<&'a DatasetMean>,
}

/// Number of removal units `scheme` offers on `case`.
pub fn unit_count(scheme: Scheme, case: &Case<'_>, square_size: usize) -> Result<usize> {
    Ok(match scheme {
        Scheme::SegmentMean | Scheme::SegmentBlack => case
            .segments
            .ok_or_else(|| Error::MissingInput("segment schemes need segment maps".into()))?
            .segment_count(),
        Scheme::PixelMean | Scheme::PixelBlack => case.image.pixel_count(),
        Scheme::SamekSquares => {
            Tiling::new(case.image.height(), case.image.width(), square_size)?.count()
        }
    })
}

/// `ceil(fraction × units)`, robust to `0.1 × 300 = 30.000000000000004`.
pub fn units_at_fraction(fraction: f64, units: usize) -> Result<usize> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(Error::InvalidParameter(format!(
            "fraction must lie in (0, 1], got {fraction}"
        )));
    }
    let exact = fraction * units as f64;
    let k = (exact - exact.abs() * 1e-12).ceil() as usize;
    Ok(k.clamp(1, units.max(1)).min(units))
}

fn replacement_for(scheme: Scheme) -> Replacement {
    match scheme {
        Scheme::SegmentMean | Scheme::PixelMean => Replacement::Mean,
        Scheme::SegmentBlack | Scheme::PixelBlack => Replacement::Black,
        Scheme::SamekSquares => Replacement::UniformNoise { seed: 0 },
    }
}

/// Removal schedule of `ordering` on `case`, limited to `budget` units.
pub fn schedule_for(
    ordering: &Ordering,
    case: &Case<'_>,
    config: &EngineConfig,
    scheme: Scheme,
    budget: Option<usize>,
) -> Result<RemovalSchedule> {
    let units = unit_count(scheme, case, config.square_size)?;
    let budget = budget.unwrap_or(units).min(units);
    let noise_seed = rng::image_seed(config.noise_seed, case.index);
    let schedule = match ordering {
        Ordering::Heatmaps(maps) => {
            let map = &maps[case.index];
            map.check_matches(case.image)?;
            match scheme {
                Scheme::SegmentMean | Scheme::SegmentBlack => {
                    let segs = case.segments.expect("unit_count checked segments");
                    let ranking = rank_segments(map, segs, config.evidence_mode)?;
                    build_irof_schedule(&ranking, replacement_for(scheme))?.truncated(budget)
                }
                Scheme::PixelMean | Scheme::PixelBlack => build_pixel_schedule(
                    map,
                    config.evidence_mode,
                    budget,
                    replacement_for(scheme),
                )?,
                Scheme::SamekSquares => build_samek_schedule(
                    map,
                    config.evidence_mode,
                    config.square_size,
                    budget,
                    noise_seed,
                )?,
            }
        }
        Ordering::Random { seed } => {
            let seed = rng::image_seed(*seed, case.index);
            match scheme {
                Scheme::SegmentMean | Scheme::SegmentBlack => {
                    build_irof_schedule(&random_ranking(units, seed), replacement_for(scheme))?
                        .truncated(budget)
                }
                Scheme::PixelMean | Scheme::PixelBlack => {
                    let mut order = rng::permutation(units, seed);
                    order.truncate(budget);
                    pixel_schedule_from_order(order, replacement_for(scheme))?
                }
                Scheme::SamekSquares => {
                    let tiling =
                        Tiling::new(case.image.height(), case.image.width(), config.square_size)?;
                    let mut order = rng::permutation(units, seed);
                    order.truncate(budget);
                    squares_schedule_from_order(&tiling, order, noise_seed)?
                }
            }
        }
    };
    Ok(schedule)
}

/// Scores `frames` in batches; ids are `<image_id>:<removed>`.
fn score_frames(
    classifier: &Classifier,
    image_id: &str,
    frames: &[(usize, Image)],
) -> Result<Vec<ClassScores>> {
    let ids: Vec<String> = frames.iter().map(|(k, _)| request_id(image_id, *k)).collect();
    let requests: Vec<Request<'_>> = frames
        .iter()
        .zip(&ids)
        .map(|((_, image), id)| Request { id, image })
        .collect();
    classifier.predict_batch(&requests)
}

/// Target class and its frame-0 score for `image`.
pub fn frame0_target(
    classifier: &Classifier,
    image_id: &str,
    image: &Image,
    target: Option<usize>,
) -> Result<(usize, f64)> {
    let scores = score_frames(classifier, image_id, &[(0, image.clone())])?;
    target_score(&scores[0], image_id, target)
}

fn target_score(scores: &ClassScores, image_id: &str, target: Option<usize>) -> Result<(usize, f64)> {
    let class = match target {
        Some(c) => c,
        None => scores
            .argmax()
            .ok_or_else(|| Error::InvalidScores(format!("{image_id}: empty score vector")))?,
    };
    let s0 = scores.class_score(class)?;
    if !(s0 > 0.0 && s0.is_finite()) {
        return Err(Error::UnusableFrame0 {
            image_id: image_id.to_owned(),
            score: s0,
        });
    }
    Ok((class, s0))
}

/// Full degradation curve of `case` under `schedule`.
///
/// `stride` > 1 records only every `stride`-th frame plus the last one.
pub fn degradation_curve(
    classifier: &Classifier,
    case: &Case<'_>,
    schedule: &RemovalSchedule,
    method_id: &str,
    target: Option<usize>,
    stride: usize,
    dump: Option<&FrameDump>,
) -> Result<DegradationCurve> {
    let sequence = degrade(case.image, schedule, case.segments, case.mean)?.with_stride(stride);
    let dump_dir = dump.map(|d| (d.dir.join(method_id).join(case.id), d.every));
    if let Some((dir, _)) = &dump_dir {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let mut curve = DegradationCurve {
        image_id: case.id.to_owned(),
        method_id: method_id.to_owned(),
        scheme: schedule.scheme(),
        target_class: 0,
        removed: Vec::with_capacity(sequence.frame_count()),
        values: Vec::with_capacity(sequence.frame_count()),
    };
    let mut base: Option<(usize, f64)> = None;
    let mut batch: Vec<(usize, Image)> = Vec::with_capacity(classifier.batch_size());
    let mut frames = sequence.enumerate().peekable();
    while let Some((index, frame)) = frames.next() {
        if let Some((dir, every)) = &dump_dir {
            if index % every == 0 {
                save_image_png(&dir.join(format!("{:05}.png", frame.removed)), &frame.image)?;
            }
        }
        batch.push((frame.removed, frame.image));
        if batch.len() < classifier.batch_size() && frames.peek().is_some() {
            continue;
        }
        let scores = score_frames(classifier, case.id, &batch)?;
        for ((removed, _), s) in batch.drain(..).zip(&scores) {
            let (class, s0) = match base {
                Some(b) => b,
                None => {
                    let b = target_score(s, case.id, target)?;
                    base = Some(b);
                    b
                }
            };
            curve.target_class = class;
            curve.removed.push(removed);
            curve.values.push(if removed == 0 { 1.0 } else { s.class_score(class)? / s0 });
        }
    }
    Ok(curve)
}

/// `1 - f_k` after removing the first `k = ceil(fraction × units)` units.
#[allow(clippy::too_many_arguments)]
pub fn degradation_at_fraction(
    classifier: &Classifier,
    case: &Case<'_>,
    ordering: &Ordering,
    config: &EngineConfig,
    scheme: Scheme,
    fraction: f64,
    target: (usize, f64),
) -> Result<f64> {
    let units = unit_count(scheme, case, config.square_size)?;
    let k = units_at_fraction(fraction, units)?;
    let schedule = schedule_for(ordering, case, config, scheme, Some(k))?;
    let frame = degrade(case.image, &schedule, case.segments, case.mean)?.frame_at(k)?;
    let scores = score_frames(classifier, case.id, &[(k, frame)])?;
    Ok(1.0 - scores[0].class_score(target.0)? / target.1)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SkippedImage {
    pub image_id: String,
    pub reason: String,
}

/// Dataset-level result of one method.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IrofResult {
    pub method_id: String,
    pub scheme: Scheme,
    /// `100 × mean AOC`.
    pub irof_score: f64,
    /// `100 × sample standard deviation / √N`; undefined for N = 1.
    pub se: Option<f64>,
    pub n_images: usize,
    pub n_skipped: usize,
    pub image_ids: Vec<String>,
    pub per_image_aoc: Vec<f64>,
    pub skipped: Vec<SkippedImage>,
}

impl IrofResult {
    pub fn from_aocs(
        method_id: &str,
        scheme: Scheme,
        image_ids: Vec<String>,
        per_image_aoc: Vec<f64>,
        skipped: Vec<SkippedImage>,
    ) -> Result<Self> {
        let n = per_image_aoc.len();
        if n == 0 {
            return Err(Error::MissingInput(format!(
                "method {method_id}: every image was skipped"
            )));
        }
        let mut sum = KahanSum::default();
        per_image_aoc.iter().for_each(|&a| sum.add(a));
        let mean = sum.total() / n as f64;
        let se = (n > 1).then(|| {
            let mut ss = KahanSum::default();
            per_image_aoc.iter().for_each(|&a| ss.add((a - mean).powi(2)));
            100.0 * (ss.total() / (n - 1) as f64).sqrt() / (n as f64).sqrt()
        });
        Ok(IrofResult {
            method_id: method_id.to_owned(),
            scheme,
            irof_score: 100.0 * mean,
            se,
            n_images: n,
            n_skipped: skipped.len(),
            image_ids,
            per_image_aoc,
            skipped,
        })
    }
}

/// Per-image curves plus the aggregate.
#[derive(Debug, Clone)]
pub struct Evaluation {
    pub result: IrofResult,
    pub curves: Vec<DegradationCurve>,
}

/// Stride that keeps a `units`-step curve within `max_frames` frames.
pub fn curve_stride(scheme: Scheme, units: usize, max_frames: usize) -> usize {
    if scheme.needs_segments() {
        1
    } else {
        units.div_ceil(max_frames).max(1)
    }
}

pub(crate) fn cases<'a>(dataset: &'a Dataset, segments: Option<&'a [SegmentMap]>) -> Vec<Case<'a>> {
    dataset
        .samples()
        .iter()
        .enumerate()
        .map(|(index, s)| Case {
            index,
            id: &s.id,
            image: &s.image,
            segments: segments.map(|m| &m[index]),
            mean: Some(dataset.mean()),
        })
        .collect()
}

pub(crate) fn check_segments(dataset: &Dataset, segments: Option<&[SegmentMap]>) -> Result<()> {
    if let Some(maps) = segments {
        if maps.len() != dataset.len() {
            return Err(Error::MissingInput(format!(
                "{} segment maps for {} images",
                maps.len(),
                dataset.len()
            )));
        }
    }
    Ok(())
}

/// IROF (or the configured evaluator) of `method` over `dataset`.
///
/// Images whose frame-0 target score is not a positive finite number are
/// skipped and listed; any other failure aborts the evaluation.
pub fn evaluate(
    dataset: &Dataset,
    segments: Option<&[SegmentMap]>,
    method: &Method,
    classifier: &Classifier,
    config: &EngineConfig,
) -> Result<Evaluation> {
    config.validate()?;
    method.check(dataset)?;
    check_segments(dataset, segments)?;
    let scheme = config.scheme;
    let cases = cases(dataset, segments);
    let outcomes: Vec<Result<DegradationCurve>> = config.pool()?.install(|| {
        cases
            .par_iter()
            .map(|case| {
                let schedule = schedule_for(&method.ordering, case, config, scheme, None)?;
                let stride = curve_stride(scheme, schedule.len(), config.max_frames);
                degradation_curve(
                    classifier,
                    case,
                    &schedule,
                    &method.id,
                    config.target_class,
                    stride,
                    config.dump.as_ref(),
                )
            })
            .collect()
    });
    let mut curves = Vec::new();
    let mut skipped = Vec::new();
    for outcome in outcomes {
        match outcome {
            Ok(curve) => curves.push(curve),
            Err(Error::UnusableFrame0 { image_id, score }) => {
                log::warn!("skipping {image_id}: frame-0 score {score}");
                skipped.push(SkippedImage {
                    image_id,
                    reason: format!("frame-0 target score {score}"),
                });
            }
            Err(e) => return Err(e),
        }
    }
    let result = IrofResult::from_aocs(
        &method.id,
        scheme,
        curves.iter().map(|c| c.image_id.clone()).collect(),
        curves.iter().map(DegradationCurve::aoc).collect(),
        skipped,
    )?;
    Ok(Evaluation { result, curves })
}

/// Curve dump with columns `image_id,method_id,scheme,l,f_l`, where `l` is
/// the number of units removed.
pub fn curves_csv<'a>(curves: impl IntoIterator<Item = &'a DegradationCurve>) -> String {
    let mut out = String::from("image_id,method_id,scheme,l,f_l\n");
    for c in curves {
        for (l, f) in c.removed.iter().zip(&c.values) {
            out.push_str(&format!("{},{},{},{l},{f:?}\n", c.image_id, c.method_id, c.scheme));
        }
    }
    out
}

/// Parses [`curves_csv`] output back into curves (target class unknown, 0).
/// Header lines and `#` comment lines are skipped.
pub fn parse_curves_csv(text: &str) -> Result<Vec<DegradationCurve>> {
    let mut curves: Vec<DegradationCurve> = Vec::new();
    for (n, line) in text.lines().enumerate() {
        if line.is_empty() || line.starts_with('#') || line.starts_with("image_id,") {
            continue;
        }
        let bad = || Error::InvalidParameter(format!("curve CSV line {}: {line:?}", n + 1));
        let fields: Vec<&str> = line.split(',').collect();
        let [image_id, method_id, scheme, l, f] = fields[..] else {
            return Err(bad());
        };
        let scheme: Scheme = scheme.parse()?;
        let l: usize = l.parse().map_err(|_| bad())?;
        let f: f64 = f.parse().map_err(|_| bad())?;
        let same = curves.last().is_some_and(|c| {
            c.image_id == image_id && c.method_id == method_id && c.scheme == scheme && l != 0
        });
        if !same {
            curves.push(DegradationCurve {
                image_id: image_id.to_owned(),
                method_id: method_id.to_owned(),
                scheme,
                target_class: 0,
                removed: Vec::new(),
                values: Vec::new(),
            });
        }
        let c = curves.last_mut().expect("pushed above");
        c.removed.push(l);
        c.values.push(f);
    }
    Ok(curves)
}
