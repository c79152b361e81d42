//! Raster types, file I/O and the dataset mean colour.
//!
//! Two on-disk formats are understood:
//!
//! - PNG, 8 or 16 bit, grayscale or RGB. Samples are mapped linearly from
//!   `[0, 2^bits - 1]` onto the caller's declared value range.
//! - The raw-float raster: `<name>.f32` holds little-endian `f32` samples in
//!   row-major, channel-interleaved order with no header. A sidecar
//!   `<name>.json` carries `{height, width, channels, method_id, value_range}`.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Declared min/max of the values an [`Image`] may hold.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ValueRange {
    pub min: f32,
    pub max: f32,
}

impl ValueRange {
    pub const UNIT: ValueRange = ValueRange { min: 0.0, max: 1.0 };
    pub const SYMMETRIC: ValueRange = ValueRange {
        min: -1.0,
        max: 1.0,
    };

    pub fn new(min: f32, max: f32) -> Result<Self> {
        if !(min.is_finite() && max.is_finite() && min < max) {
            return Err(Error::InvalidParameter(format!(
                "value range [{min}, {max}] must be finite with min < max"
            )));
        }
        Ok(ValueRange { min, max })
    }

    pub fn span(&self) -> f32 {
        self.max - self.min
    }

    pub fn contains(&self, v: f32) -> bool {
        v >= self.min && v <= self.max
    }

    /// Maps `t` in `[0, 1]` linearly onto the range.
    pub fn lerp(&self, t: f64) -> f32 {
        (self.min as f64 + t * (self.max as f64 - self.min as f64)) as f32
    }

    /// Inverse of [`ValueRange::lerp`].
    pub fn normalize(&self, v: f32) -> f64 {
        (v as f64 - self.min as f64) / (self.max as f64 - self.min as f64)
    }
}

impl std::str::FromStr for ValueRange {
    type Err = Error;

    /// Parses `"min,max"`.
    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::InvalidParameter(format!("cannot parse value range {s:?}"));
        let (lo, hi) = s.split_once(',').ok_or_else(bad)?;
        let lo: f32 = lo.trim().parse().map_err(|_| bad())?;
        let hi: f32 = hi.trim().parse().map_err(|_| bad())?;
        ValueRange::new(lo, hi)
    }
}

/// An `height × width × channels` raster of `f32` values within a declared range.
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    height: usize,
    width: usize,
    channels: usize,
    data: Vec<f32>,
    range: ValueRange,
}

impl Image {
    pub fn new(
        height: usize,
        width: usize,
        channels: usize,
        data: Vec<f32>,
        range: ValueRange,
    ) -> Result<Self> {
        if channels != 1 && channels != 3 {
            return Err(Error::InvalidParameter(format!(
                "images must have 1 or 3 channels, got {channels}"
            )));
        }
        if height == 0 || width == 0 {
            return Err(Error::InvalidParameter("empty image".into()));
        }
        let expected = height * width * channels;
        if data.len() != expected {
            return Err(Error::DimensionMismatch(format!(
                "{height}x{width}x{channels} needs {expected} values, got {}",
                data.len()
            )));
        }
        for (index, &value) in data.iter().enumerate() {
            if !value.is_finite() {
                return Err(Error::NonFinite { index });
            }
            if !range.contains(value) {
                return Err(Error::OutOfRange {
                    index,
                    value,
                    min: range.min,
                    max: range.max,
                });
            }
        }
        Ok(Image {
            height,
            width,
            channels,
            data,
            range,
        })
    }

    /// Image with every pixel set to `pixel` (one value per channel).
    pub fn filled(height: usize, width: usize, pixel: &[f32], range: ValueRange) -> Result<Self> {
        let data = pixel
            .iter()
            .copied()
            .cycle()
            .take(height * width * pixel.len())
            .collect();
        Image::new(height, width, pixel.len(), data, range)
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn range(&self) -> ValueRange {
        self.range
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn pixel_count(&self) -> usize {
        self.height * self.width
    }

    /// Channel values of the pixel at row-major index `idx`.
    pub fn pixel(&self, idx: usize) -> &[f32] {
        &self.data[idx * self.channels..(idx + 1) * self.channels]
    }

    pub fn get(&self, row: usize, col: usize, channel: usize) -> f32 {
        self.data[(row * self.width + col) * self.channels + channel]
    }

    /// Overwrites one pixel. Callers guarantee `values` lie within the range.
    pub(crate) fn set_pixel(&mut self, idx: usize, values: &[f32]) {
        debug_assert!(values.iter().all(|v| self.range.contains(*v)));
        self.data[idx * self.channels..(idx + 1) * self.channels].copy_from_slice(values);
    }

    /// Per-pixel luminance (0.299 R + 0.587 G + 0.114 B), or the single channel.
    pub fn luminance(&self) -> Vec<f64> {
        match self.channels {
            1 => self.data.iter().map(|&v| v as f64).collect(),
            _ => self
                .data
                .chunks_exact(3)
                .map(|p| 0.299 * p[0] as f64 + 0.587 * p[1] as f64 + 0.114 * p[2] as f64)
                .collect(),
        }
    }

    pub fn same_shape(&self, other: &Image) -> bool {
        self.height == other.height && self.width == other.width && self.channels == other.channels
    }
}

/// Per-pixel, single-channel attribution produced by an explanation method.
#[derive(Debug, Clone, PartialEq)]
pub struct RelevanceMap {
    height: usize,
    width: usize,
    data: Vec<f32>,
    method_id: String,
}

impl RelevanceMap {
    pub fn new(
        height: usize,
        width: usize,
        data: Vec<f32>,
        method_id: impl Into<String>,
    ) -> Result<Self> {
        if data.len() != height * width {
            return Err(Error::DimensionMismatch(format!(
                "relevance map {height}x{width} needs {} values, got {}",
                height * width,
                data.len()
            )));
        }
        if let Some(index) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite { index });
        }
        Ok(RelevanceMap {
            height,
            width,
            data,
            method_id: method_id.into(),
        })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn method_id(&self) -> &str {
        &self.method_id
    }

    pub fn with_method_id(mut self, method_id: impl Into<String>) -> Self {
        self.method_id = method_id.into();
        self
    }

    /// Applies `f` elementwise, keeping dimensions and method id.
    pub fn map_values(&self, f: impl Fn(f32) -> f32) -> RelevanceMap {
        RelevanceMap {
            height: self.height,
            width: self.width,
            data: self.data.iter().map(|&v| f(v)).collect(),
            method_id: self.method_id.clone(),
        }
    }

    pub fn check_matches(&self, image: &Image) -> Result<()> {
        if self.height != image.height() || self.width != image.width() {
            return Err(Error::DimensionMismatch(format!(
                "relevance map {}x{} vs image {}x{}",
                self.height,
                self.width,
                image.height(),
                image.width()
            )));
        }
        Ok(())
    }
}

/// Per-channel mean colour over an image collection.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetMean {
    pub per_channel_mean: Vec<f32>,
}

impl DatasetMean {
    pub fn channels(&self) -> usize {
        self.per_channel_mean.len()
    }
}

/// Neumaier-compensated running sum.
#[derive(Debug, Default, Clone, Copy)]
pub(crate) struct KahanSum {
    sum: f64,
    compensation: f64,
}

impl KahanSum {
    pub(crate) fn add(&mut self, x: f64) {
        let t = self.sum + x;
        if self.sum.abs() >= x.abs() {
            self.compensation += (self.sum - t) + x;
        } else {
            self.compensation += (x - t) + self.sum;
        }
        self.sum = t;
    }

    pub(crate) fn total(&self) -> f64 {
        self.sum + self.compensation
    }
}

/// Per-channel arithmetic mean over every pixel of every image.
pub fn compute_dataset_mean<'a, I>(images: I) -> Result<DatasetMean>
where
    I: IntoIterator<Item = &'a Image>,
{
    let mut sums: Vec<KahanSum> = Vec::new();
    let mut count = 0usize;
    for image in images {
        if sums.is_empty() {
            sums = vec![KahanSum::default(); image.channels()];
        } else if sums.len() != image.channels() {
            return Err(Error::InvalidParameter(format!(
                "mixed channel counts: {} and {}",
                sums.len(),
                image.channels()
            )));
        }
        for pixel in image.data().chunks_exact(image.channels()) {
            for (acc, &v) in sums.iter_mut().zip(pixel) {
                acc.add(v as f64);
            }
        }
        count += image.pixel_count();
    }
    if count == 0 {
        return Err(Error::InvalidParameter(
            "dataset mean of an empty collection".into(),
        ));
    }
    Ok(DatasetMean {
        per_channel_mean: sums
            .iter()
            .map(|s| (s.total() / count as f64) as f32)
            .collect(),
    })
}

/// Sidecar metadata of the raw-float raster format.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sidecar {
    pub height: usize,
    pub width: usize,
    #[serde(default = "one")]
    pub channels: usize,
    #[serde(default)]
    pub method_id: Option<String>,
    #[serde(default)]
    pub value_range: Option<ValueRange>,
    /// Effective configuration of whatever produced the file.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub config: Option<serde_json::Value>,
}

fn one() -> usize {
    1
}

/// Path of the JSON sidecar belonging to a `.f32` payload.
pub fn sidecar_path(payload: &Path) -> PathBuf {
    payload.with_extension("json")
}

/// Reads a raw-float payload and its sidecar, checking the payload length.
pub fn read_raw(path: &Path) -> Result<(Sidecar, Vec<f32>)> {
    let side_path = sidecar_path(path);
    let side_text = fs::read_to_string(&side_path).map_err(|e| Error::io(&side_path, e))?;
    let sidecar: Sidecar = serde_json::from_str(&side_text)
        .map_err(|e| Error::format(&side_path, format!("invalid sidecar: {e}")))?;
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    if bytes.len() % 4 != 0 {
        return Err(Error::format(
            path,
            format!("payload length {} is not a multiple of 4", bytes.len()),
        ));
    }
    let values: Vec<f32> = bytes
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
        .collect();
    let expected = sidecar.height * sidecar.width * sidecar.channels;
    if values.len() != expected {
        return Err(Error::DimensionMismatch(format!(
            "{}: sidecar declares {}x{}x{} = {expected} values, payload has {}",
            path.display(),
            sidecar.height,
            sidecar.width,
            sidecar.channels,
            values.len()
        )));
    }
    Ok((sidecar, values))
}

/// Writes a raw-float payload and its sidecar.
pub fn write_raw(path: &Path, sidecar: &Sidecar, values: &[f32]) -> Result<()> {
    if values.len() != sidecar.height * sidecar.width * sidecar.channels {
        return Err(Error::DimensionMismatch(format!(
            "writing {} values under a {}x{}x{} sidecar",
            values.len(),
            sidecar.height,
            sidecar.width,
            sidecar.channels
        )));
    }
    let mut bytes = Vec::with_capacity(values.len() * 4);
    for v in values {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    fs::write(path, bytes).map_err(|e| Error::io(path, e))?;
    let side_path = sidecar_path(path);
    let text = serde_json::to_string_pretty(sidecar).expect("sidecar serializes");
    fs::write(&side_path, text).map_err(|e| Error::io(&side_path, e))
}

fn is_png(path: &Path) -> bool {
    path.extension()
        .and_then(|e| e.to_str())
        .is_some_and(|e| e.eq_ignore_ascii_case("png"))
}

struct DecodedPng {
    height: usize,
    width: usize,
    channels: usize,
    /// Samples normalized to `[0, 1]`.
    samples: Vec<f64>,
}

fn decode_png(path: &Path) -> Result<DecodedPng> {
    use image::DynamicImage;

    let reader = image::ImageReader::open(path).map_err(|e| Error::io(path, e))?;
    let decoded = reader
        .with_guessed_format()
        .map_err(|e| Error::io(path, e))?
        .decode()
        .map_err(|e| Error::format(path, e.to_string()))?;
    let (width, height) = (decoded.width() as usize, decoded.height() as usize);
    let (channels, samples): (usize, Vec<f64>) = match decoded {
        DynamicImage::ImageLuma8(b) => (1, b.into_raw().iter().map(|&v| v as f64 / 255.0).collect()),
        DynamicImage::ImageRgb8(b) => (3, b.into_raw().iter().map(|&v| v as f64 / 255.0).collect()),
        DynamicImage::ImageLuma16(b) => (
            1,
            b.into_raw().iter().map(|&v| v as f64 / 65535.0).collect(),
        ),
        DynamicImage::ImageRgb16(b) => (
            3,
            b.into_raw().iter().map(|&v| v as f64 / 65535.0).collect(),
        ),
        other => {
            return Err(Error::format(
                path,
                format!("unsupported PNG layout {:?}", other.color()),
            ))
        }
    };
    Ok(DecodedPng {
        height,
        width,
        channels,
        samples,
    })
}

/// Loads a PNG or raw-float raster, mapping its values into `declared_range`.
///
/// PNG samples are mapped from `[0, max_code]`. Raw-float payloads are mapped
/// from the sidecar's `value_range` when present and taken verbatim otherwise.
pub fn load_image(path: &Path, declared_range: ValueRange) -> Result<Image> {
    if is_png(path) {
        let png = decode_png(path)?;
        let data = png
            .samples
            .iter()
            .map(|&t| declared_range.lerp(t).clamp(declared_range.min, declared_range.max))
            .collect();
        return Image::new(png.height, png.width, png.channels, data, declared_range);
    }
    let (sidecar, values) = read_raw(path)?;
    let data = match sidecar.value_range {
        Some(src) if src != declared_range => values
            .iter()
            .map(|&v| declared_range.lerp(src.normalize(v)))
            .collect(),
        _ => values,
    };
    Image::new(
        sidecar.height,
        sidecar.width,
        sidecar.channels,
        data,
        declared_range,
    )
    .map_err(|e| match e {
        Error::OutOfRange { .. } | Error::NonFinite { .. } | Error::InvalidParameter(_) => {
            Error::format(path, e.to_string())
        }
        other => other,
    })
}

/// Writes an image in the raw-float format, recording its value range.
pub fn save_image_raw(path: &Path, image: &Image) -> Result<()> {
    let sidecar = Sidecar {
        height: image.height(),
        width: image.width(),
        channels: image.channels(),
        method_id: None,
        value_range: Some(image.range()),
        config: None,
    };
    write_raw(path, &sidecar, image.data())
}

/// Writes an 8-bit PNG, mapping the image's declared range onto `[0, 255]`.
pub fn save_image_png(path: &Path, image: &Image) -> Result<()> {
    let range = image.range();
    let bytes: Vec<u8> = image
        .data()
        .iter()
        .map(|&v| (range.normalize(v).clamp(0.0, 1.0) * 255.0).round() as u8)
        .collect();
    let color = if image.channels() == 1 {
        image::ExtendedColorType::L8
    } else {
        image::ExtendedColorType::Rgb8
    };
    image::save_buffer(
        path,
        &bytes,
        image.width() as u32,
        image.height() as u32,
        color,
    )
    .map_err(|e| Error::format(path, e.to_string()))
}

/// Writes single-channel 16-bit PNG samples.
pub fn save_gray16_png(path: &Path, width: usize, height: usize, samples: &[u16]) -> Result<()> {
    let buffer = image::ImageBuffer::<image::Luma<u16>, Vec<u16>>::from_raw(
        width as u32,
        height as u32,
        samples.to_vec(),
    )
    .ok_or_else(|| Error::DimensionMismatch("16-bit PNG buffer size".into()))?;
    buffer
        .save(path)
        .map_err(|e| Error::format(path, e.to_string()))
}

/// Loads a heatmap: raw-float (sidecar required) or single-channel 16-bit PNG.
///
/// Raw values are taken verbatim. PNG samples are scaled by `1/65535`; the
/// method id of a PNG comes from an optional sidecar and defaults to the
/// file stem.
pub fn load_relevance(path: &Path) -> Result<RelevanceMap> {
    if is_png(path) {
        let png = decode_png(path)?;
        if png.channels != 1 {
            return Err(Error::format(path, "relevance PNG must be single-channel"));
        }
        let side_path = sidecar_path(path);
        let method_id = match fs::read_to_string(&side_path) {
            Ok(text) => serde_json::from_str::<serde_json::Value>(&text)
                .ok()
                .and_then(|v| v.get("method_id")?.as_str().map(str::to_owned)),
            Err(_) => None,
        }
        .unwrap_or_else(|| file_stem(path));
        let data = png.samples.iter().map(|&v| v as f32).collect();
        return RelevanceMap::new(png.height, png.width, data, method_id);
    }
    let side_path = sidecar_path(path);
    if !side_path.exists() {
        return Err(Error::format(path, "missing sidecar"));
    }
    let (sidecar, values) = read_raw(path)?;
    if sidecar.channels != 1 {
        return Err(Error::format(
            path,
            format!("relevance maps have one channel, sidecar says {}", sidecar.channels),
        ));
    }
    RelevanceMap::new(
        sidecar.height,
        sidecar.width,
        values,
        sidecar.method_id.unwrap_or_default(),
    )
    .map_err(|e| match e {
        Error::NonFinite { index } => {
            Error::format(path, format!("non-finite relevance at index {index}"))
        }
        other => other,
    })
}

/// Writes a heatmap in the raw-float format.
pub fn save_relevance(
    path: &Path,
    map: &RelevanceMap,
    config: Option<serde_json::Value>,
) -> Result<()> {
    let sidecar = Sidecar {
        height: map.height(),
        width: map.width(),
        channels: 1,
        method_id: Some(map.method_id().to_owned()),
        value_range: None,
        config,
    };
    write_raw(path, &sidecar, map.data())
}

pub(crate) fn file_stem(path: &Path) -> String {
    path.file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default()
}
