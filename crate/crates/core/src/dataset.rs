//! Image collections, their heatmaps and cached segmentations.
//!
//! Files are matched by stem: image `cat.png` pairs with heatmap `cat.f32`
//! (or `cat.png`) in every method directory and with segment map `cat.f32`
//! in the segment cache.

use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;

use crate::imagery::{
    compute_dataset_mean, file_stem, load_image, load_relevance, DatasetMean, Image,
    RelevanceMap, ValueRange,
};
use crate::segmentation::{SegmentMap, Segmenter};
use crate::{Error, Result};

#[derive(Debug, Clone)]
pub struct Sample {
    pub id: String,
    pub image: Image,
}

/// Images in a fixed order plus their per-channel mean colour.
#[derive(Debug, Clone)]
pub struct Dataset {
    samples: Vec<Sample>,
    mean: DatasetMean,
}

fn is_raster(path: &Path) -> bool {
    matches!(
        path.extension().and_then(|e| e.to_str()).map(str::to_ascii_lowercase).as_deref(),
        Some("png" | "f32")
    )
}

/// Raster files of `dir` sorted by file name.
pub fn list_rasters(dir: &Path) -> Result<Vec<PathBuf>> {
    let entries = fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    let mut paths = Vec::new();
    for entry in entries {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        if path.is_file() && is_raster(&path) {
            paths.push(path);
        }
    }
    paths.sort();
    Ok(paths)
}

impl Dataset {
    pub fn new(samples: Vec<Sample>) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::MissingInput("dataset has no images".into()));
        }
        for pair in samples.windows(2) {
            if pair[0].image.channels() != pair[1].image.channels() {
                return Err(Error::DimensionMismatch(format!(
                    "{} has {} channels, {} has {}",
                    pair[0].id,
                    pair[0].image.channels(),
                    pair[1].id,
                    pair[1].image.channels()
                )));
            }
        }
        let mut ids: Vec<&str> = samples.iter().map(|s| s.id.as_str()).collect();
        ids.sort_unstable();
        if let Some(w) = ids.windows(2).find(|w| w[0] == w[1]) {
            return Err(Error::InvalidParameter(format!("duplicate image id {:?}", w[0])));
        }
        if let Some(s) = samples.iter().find(|s| s.id.contains(':')) {
            return Err(Error::InvalidParameter(format!(
                "image id {:?} contains ':', which request ids reserve",
                s.id
            )));
        }
        let mean = compute_dataset_mean(samples.iter().map(|s| &s.image))?;
        Ok(Dataset { samples, mean })
    }

    /// Loads every `.png` / `.f32` raster of `dir`, ids taken from file stems.
    pub fn load_dir(dir: &Path, range: ValueRange) -> Result<Self> {
        let paths = list_rasters(dir)?;
        if paths.is_empty() {
            return Err(Error::MissingInput(format!(
                "{}: no .png or .f32 images",
                dir.display()
            )));
        }
        let samples = paths
            .par_iter()
            .map(|p| {
                Ok(Sample {
                    id: file_stem(p),
                    image: load_image(p, range)?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Dataset::new(samples)
    }

    pub fn samples(&self) -> &[Sample] {
        &self.samples
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn mean(&self) -> &DatasetMean {
        &self.mean
    }

    /// Restricts the dataset to its first `n` images; the mean is kept.
    pub fn truncate(&mut self, n: usize) {
        self.samples.truncate(n.max(1));
    }
}

fn find_by_stem(dir: &Path, id: &str) -> Option<PathBuf> {
    ["f32", "png"]
        .iter()
        .map(|ext| dir.join(format!("{id}.{ext}")))
        .find(|p| p.is_file())
}

/// One heatmap per dataset image from `dir`, relabelled `method_id`.
pub fn load_heatmaps(dir: &Path, dataset: &Dataset, method_id: &str) -> Result<Vec<RelevanceMap>> {
    if !dir.is_dir() {
        return Err(Error::MissingInput(format!(
            "heatmap directory {} does not exist",
            dir.display()
        )));
    }
    dataset
        .samples()
        .par_iter()
        .map(|s| {
            let path = find_by_stem(dir, &s.id).ok_or_else(|| {
                Error::MissingInput(format!(
                    "{}: no heatmap {}.f32 or {}.png",
                    dir.display(),
                    s.id,
                    s.id
                ))
            })?;
            let map = load_relevance(&path)?.with_method_id(method_id);
            map.check_matches(&s.image)
                .map_err(|e| Error::format(&path, e.to_string()))?;
            Ok(map)
        })
        .collect()
}

/// Outcome of [`segment_dataset`].
#[derive(Debug, Clone)]
pub struct Segmentation {
    pub maps: Vec<SegmentMap>,
    /// Images whose map came from the cache.
    pub reused: usize,
}

/// Segments every image, reusing cached maps produced with the same parameters.
///
/// With a cache directory, each map is stored as `<id>.f32` plus sidecar; a
/// cached map is reused only when its recorded parameters equal
/// `segmenter.describe()` and its shape matches the image.
pub fn segment_dataset(
    dataset: &Dataset,
    segmenter: &dyn Segmenter,
    cache: Option<&Path>,
) -> Result<Segmentation> {
    if let Some(dir) = cache {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let params = segmenter.describe();
    let results = dataset
        .samples()
        .par_iter()
        .map(|s| -> Result<(SegmentMap, bool)> {
            let path = cache.map(|d| d.join(format!("{}.f32", s.id)));
            if let Some(path) = path.as_ref().filter(|p| p.is_file()) {
                match SegmentMap::load_raw(path) {
                    Ok((map, side))
                        if side.config.as_ref() == Some(&params)
                            && map.check_matches(&s.image).is_ok() =>
                    {
                        return Ok((map, true));
                    }
                    Ok(_) => log::info!("{}: stale segment cache, recomputing", path.display()),
                    Err(e) => log::warn!("{e}; recomputing"),
                }
            }
            let map = segmenter.segment(&s.image)?;
            if let Some(path) = &path {
                map.save_raw(path, Some(params.clone()))?;
            }
            Ok((map, false))
        })
        .collect::<Result<Vec<_>>>()?;
    let reused = results.iter().filter(|(_, hit)| *hit).count();
    Ok(Segmentation {
        maps: results.into_iter().map(|(m, _)| m).collect(),
        reused,
    })
}
