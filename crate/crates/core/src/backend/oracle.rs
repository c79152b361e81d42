//! In-process models with known answers, used as fixtures.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{image_id_of, Backend, ClassScores, Request};
use crate::{Error, Result};

/// A disk in pixel coordinates; pixel `(r, c)` is inside when
/// `(r - row)^2 + (c - col)^2 <= radius^2`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Disk {
    pub row: f64,
    pub col: f64,
    pub radius: f64,
}

impl Disk {
    pub fn contains(&self, r: usize, c: usize) -> bool {
        (r as f64 - self.row).powi(2) + (c as f64 - self.col).powi(2) <= self.radius.powi(2)
    }

    /// Row-major indicator mask of the disk.
    pub fn mask(&self, height: usize, width: usize) -> Vec<bool> {
        (0..height * width)
            .map(|p| self.contains(p / width, p % width))
            .collect()
    }
}

/// Two-class "disk model": class 1 scores the mean intensity (channel mean,
/// clamped to `[0, 1]`) inside a disk, class 0 scores one minus that.
///
/// The disk is looked up by the image id of the request (`<image_id>:<frame>`)
/// and falls back to `default`.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct DiskModel {
    #[serde(default)]
    pub default: Option<Disk>,
    #[serde(default)]
    pub images: BTreeMap<String, Disk>,
}

impl DiskModel {
    pub fn fixed(disk: Disk) -> Self {
        DiskModel {
            default: Some(disk),
            images: BTreeMap::new(),
        }
    }

    pub fn per_image(images: BTreeMap<String, Disk>) -> Self {
        DiskModel {
            default: None,
            images,
        }
    }

    pub fn disk_for(&self, request_id: &str) -> Option<Disk> {
        self.images
            .get(image_id_of(request_id))
            .copied()
            .or(self.default)
    }

    /// Scores for a raw `H×W×C` payload.
    pub fn score_raw(&self, request_id: &str, shape: [usize; 3], data: &[f32]) -> Result<Vec<f64>> {
        let [h, w, c] = shape;
        if c == 0 || data.len() != h * w * c {
            return Err(Error::DimensionMismatch(format!(
                "shape {h}x{w}x{c} does not match {} values",
                data.len()
            )));
        }
        let disk = self.disk_for(request_id).ok_or_else(|| {
            Error::InvalidParameter(format!("no disk known for {request_id:?}"))
        })?;
        let (mut sum, mut count) = (0.0f64, 0usize);
        for r in 0..h {
            for col in 0..w {
                if disk.contains(r, col) {
                    let px = &data[(r * w + col) * c..(r * w + col + 1) * c];
                    let intensity = px.iter().map(|&v| v as f64).sum::<f64>() / c as f64;
                    sum += intensity.clamp(0.0, 1.0);
                    count += 1;
                }
            }
        }
        if count == 0 {
            return Err(Error::InvalidParameter(format!(
                "disk for {request_id:?} covers no pixel of a {h}x{w} image"
            )));
        }
        let inside = sum / count as f64;
        Ok(vec![1.0 - inside, inside])
    }
}

impl Backend for DiskModel {
    fn predict(&self, requests: &[Request<'_>]) -> Result<Vec<ClassScores>> {
        requests
            .iter()
            .map(|r| {
                let shape = [r.image.height(), r.image.width(), r.image.channels()];
                self.score_raw(r.id, shape, r.image.data())
                    .map(ClassScores::new)
                    .map_err(|e| Error::Rejected(e.to_string()))
            })
            .collect()
    }

    fn describe(&self) -> String {
        "disk-model".into()
    }
}

/// Returns the same scores for every input.
#[derive(Debug, Clone)]
pub struct ConstantModel {
    scores: Vec<f64>,
}

impl ConstantModel {
    pub fn new(scores: Vec<f64>) -> Self {
        ConstantModel { scores }
    }
}

impl Backend for ConstantModel {
    fn predict(&self, requests: &[Request<'_>]) -> Result<Vec<ClassScores>> {
        Ok(requests
            .iter()
            .map(|_| ClassScores::new(self.scores.clone()))
            .collect())
    }

    fn describe(&self) -> String {
        format!("constant:{:?}", self.scores)
    }
}
