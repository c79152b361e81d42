//! Run settings: a TOML file mirroring the flags, with flags taking precedence.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use clap::Args;
use serde::{Deserialize, Serialize};

use irof::backend::{BackendConfig, Transport};
use irof::degradation::{Scheme, DEFAULT_SQUARE_SIZE};
use irof::engine::{EngineConfig, FrameDump, AOC_CONVENTION};
use irof::imagery::ValueRange;
use irof::ranking::EvidenceMode;
use irof::segmentation::SlicParams;
use irof::stats::{SensitivityConfig, Statistic};

/// Invalid settings; maps to the configuration exit code.
#[derive(Debug)]
pub struct ConfigError(pub String);

impl std::fmt::Display for ConfigError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for ConfigError {}

macro_rules! config_bail {
    ($($arg:tt)*) => {
        return Err(anyhow::Error::new(ConfigError(format!($($arg)*))))
    };
}

/// Every setting, as read from flags or the config file.
#[derive(Debug, Clone, Default, Args, Deserialize)]
#[serde(deny_unknown_fields, rename_all = "kebab-case")]
pub struct Settings {
    /// Directory of input images (.png or .f32 with JSON sidecar).
    #[arg(long)]
    pub images: Option<PathBuf>,
    /// Value range images are mapped into, as "min,max".
    #[arg(long)]
    pub value_range: Option<String>,
    /// Heatmaps of one method as METHOD=DIR; METHOD=random[:SEED] uses a random order.
    #[arg(long = "heatmaps", value_name = "METHOD=DIR")]
    #[serde(default)]
    pub heatmaps: Vec<String>,
    /// Classifier: proc:CMD, http:URL or onnx:PATH.
    #[arg(long)]
    pub backend: Option<String>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    /// Skip the softmax range and sum checks on model outputs.
    #[arg(long)]
    #[serde(default)]
    pub no_softmax: bool,
    #[arg(long)]
    pub max_retries: Option<u32>,
    /// Target number of SLIC segments.
    #[arg(long)]
    pub segments: Option<usize>,
    #[arg(long)]
    pub compactness: Option<f64>,
    #[arg(long)]
    pub slic_iterations: Option<usize>,
    /// Directory caching segment maps between runs.
    #[arg(long)]
    pub segment_cache: Option<PathBuf>,
    /// irof | pixel | samek, or a full scheme name such as segment-black.
    #[arg(long)]
    pub scheme: Option<String>,
    /// mean | black | noise.
    #[arg(long)]
    pub replacement: Option<String>,
    /// positive-only | absolute | signed.
    #[arg(long)]
    pub evidence: Option<String>,
    /// Class index to track; defaults to the class predicted on the original image.
    #[arg(long)]
    pub target_class: Option<usize>,
    #[arg(long)]
    pub square_size: Option<usize>,
    /// Frame cap for pixel and square curves.
    #[arg(long)]
    pub max_frames: Option<usize>,
    /// Fraction of units removed for the sensitivity statistic.
    #[arg(long)]
    pub fraction: Option<f64>,
    /// degradation-at-fraction | aoc-difference.
    #[arg(long)]
    pub statistic: Option<String>,
    /// Comma-separated evaluators: irof-mean, irof-black, pixel-mean, pixel-black, samek.
    #[arg(long, value_delimiter = ',')]
    #[serde(default)]
    pub evaluators: Vec<String>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Worker threads; 0 uses every logical CPU.
    #[arg(long)]
    pub workers: Option<usize>,
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
    /// Write every N-th degraded frame as PNG.
    #[arg(long)]
    pub dump_frames_every: Option<usize>,
}

impl Settings {
    pub fn from_file(path: &Path) -> anyhow::Result<Settings> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("reading config {}", path.display()))?;
        toml::from_str(&text).map_err(|e| {
            anyhow::Error::new(ConfigError(format!("{}: {e}", path.display())))
        })
    }

    /// `self` (flags) over `file`.
    pub fn over(self, file: Settings) -> Settings {
        fn pick<T>(flag: Option<T>, file: Option<T>) -> Option<T> {
            flag.or(file)
        }
        fn pick_vec(flag: Vec<String>, file: Vec<String>) -> Vec<String> {
            if flag.is_empty() {
                file
            } else {
                flag
            }
        }
        Settings {
            images: pick(self.images, file.images),
            value_range: pick(self.value_range, file.value_range),
            heatmaps: pick_vec(self.heatmaps, file.heatmaps),
            backend: pick(self.backend, file.backend),
            batch_size: pick(self.batch_size, file.batch_size),
            no_softmax: self.no_softmax || file.no_softmax,
            max_retries: pick(self.max_retries, file.max_retries),
            segments: pick(self.segments, file.segments),
            compactness: pick(self.compactness, file.compactness),
            slic_iterations: pick(self.slic_iterations, file.slic_iterations),
            segment_cache: pick(self.segment_cache, file.segment_cache),
            scheme: pick(self.scheme, file.scheme),
            replacement: pick(self.replacement, file.replacement),
            evidence: pick(self.evidence, file.evidence),
            target_class: pick(self.target_class, file.target_class),
            square_size: pick(self.square_size, file.square_size),
            max_frames: pick(self.max_frames, file.max_frames),
            fraction: pick(self.fraction, file.fraction),
            statistic: pick(self.statistic, file.statistic),
            evaluators: pick_vec(self.evaluators, file.evaluators),
            seed: pick(self.seed, file.seed),
            workers: pick(self.workers, file.workers),
            out_dir: pick(self.out_dir, file.out_dir),
            dump_frames_every: pick(self.dump_frames_every, file.dump_frames_every),
        }
    }
}

/// Where one method's ordering comes from.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(rename_all = "kebab-case", tag = "kind")]
pub enum MethodSpec {
    Heatmaps { id: String, dir: PathBuf },
    Random { id: String, seed: u64 },
}

impl MethodSpec {
    pub fn id(&self) -> &str {
        match self {
            MethodSpec::Heatmaps { id, .. } | MethodSpec::Random { id, .. } => id,
        }
    }
}

/// Added to the run seed for `METHOD=random` without an explicit seed, so the
/// method never shares its stream with the random baseline.
const RANDOM_METHOD_SEED_OFFSET: u64 = 0x9e37_79b9_7f4a_7c15;

fn parse_method(spec: &str, seed: u64) -> anyhow::Result<MethodSpec> {
    let Some((id, source)) = spec.split_once('=') else {
        config_bail!("--heatmaps expects METHOD=DIR, got {spec:?}");
    };
    if id.is_empty() || id.contains([',', '/', '\\']) {
        config_bail!("invalid method id {id:?}");
    }
    let id = id.to_owned();
    if source == "random" {
        return Ok(MethodSpec::Random {
            id,
            seed: seed.wrapping_add(RANDOM_METHOD_SEED_OFFSET),
        });
    }
    if let Some(s) = source.strip_prefix("random:") {
        let Ok(seed) = s.parse() else {
            config_bail!("invalid random seed in {spec:?}");
        };
        return Ok(MethodSpec::Random { id, seed });
    }
    Ok(MethodSpec::Heatmaps {
        id,
        dir: PathBuf::from(source),
    })
}

/// `--scheme` plus `--replacement` to one scheme.
pub fn resolve_scheme(scheme: Option<&str>, replacement: Option<&str>) -> anyhow::Result<Scheme> {
    let family = scheme.unwrap_or("irof");
    let replacement = replacement.map(str::to_ascii_lowercase);
    let scheme = match (family, replacement.as_deref()) {
        ("irof" | "segment", None | Some("mean")) => Scheme::SegmentMean,
        ("irof" | "segment", Some("black")) => Scheme::SegmentBlack,
        ("pixel", None | Some("mean")) => Scheme::PixelMean,
        ("pixel", Some("black")) => Scheme::PixelBlack,
        ("samek", None | Some("noise")) => Scheme::SamekSquares,
        (name, r) => {
            let Ok(s) = name.parse::<Scheme>() else {
                config_bail!("unknown scheme {name:?}");
            };
            let implied = match s {
                Scheme::SegmentMean | Scheme::PixelMean => "mean",
                Scheme::SegmentBlack | Scheme::PixelBlack => "black",
                Scheme::SamekSquares => "noise",
            };
            if let Some(r) = r {
                if r != implied {
                    config_bail!("scheme {name} cannot use {r} replacement");
                }
            }
            s
        }
    };
    Ok(scheme)
}

/// Fully resolved settings shared by every command.
#[derive(Debug, Clone, Serialize)]
pub struct Resolved {
    pub images: PathBuf,
    pub value_range: ValueRange,
    pub methods: Vec<MethodSpec>,
    pub backend: Option<BackendConfig>,
    pub slic: SlicParams,
    pub segment_cache: Option<PathBuf>,
    pub engine: EngineConfig,
    pub sensitivity: SensitivityConfig,
    pub seed: u64,
    pub aoc_convention: &'static str,
    pub random_baseline: &'static str,
    #[serde(skip)]
    pub out_dir: PathBuf,
}

fn parse_or_config<T: std::str::FromStr>(what: &str, s: &str) -> anyhow::Result<T>
where
    T::Err: std::fmt::Display,
{
    s.parse::<T>()
        .map_err(|e| anyhow::Error::new(ConfigError(format!("{what}: {e}"))))
}

impl Settings {
    pub fn resolve(self) -> anyhow::Result<Resolved> {
        let seed = self.seed.unwrap_or(0);
        let Some(images) = self.images else {
            config_bail!("--images is required");
        };
        let value_range = match &self.value_range {
            Some(s) => parse_or_config("--value-range", s)?,
            None => ValueRange::UNIT,
        };
        let methods = self
            .heatmaps
            .iter()
            .map(|m| parse_method(m, seed))
            .collect::<anyhow::Result<Vec<_>>>()?;
        let mut ids: Vec<&str> = methods.iter().map(MethodSpec::id).collect();
        ids.sort_unstable();
        if let Some(w) = ids.windows(2).find(|w| w[0] == w[1]) {
            config_bail!("method {:?} given twice", w[0]);
        }
        let backend = match &self.backend {
            Some(b) => {
                let mut config = BackendConfig::new(parse_or_config::<Transport>("--backend", b)?);
                config.batch_size = self.batch_size.unwrap_or(config.batch_size);
                config.max_retries = self.max_retries.unwrap_or(config.max_retries);
                config.softmax = !self.no_softmax;
                Some(config)
            }
            None => None,
        };
        let slic = SlicParams {
            target_segments: self.segments.unwrap_or(300),
            compactness: self.compactness.unwrap_or(10.0),
            max_iterations: self.slic_iterations.unwrap_or(10),
            rng_seed: seed,
        };
        let engine = EngineConfig {
            scheme: resolve_scheme(self.scheme.as_deref(), self.replacement.as_deref())?,
            evidence_mode: match &self.evidence {
                Some(s) => parse_or_config("--evidence", s)?,
                None => EvidenceMode::PositiveOnly,
            },
            square_size: self.square_size.unwrap_or(DEFAULT_SQUARE_SIZE),
            noise_seed: seed,
            target_class: self.target_class,
            max_frames: self.max_frames.unwrap_or(300),
            workers: self.workers.unwrap_or(0),
            dump: None,
        };
        let evaluators = if self.evaluators.is_empty() {
            Scheme::ALL.to_vec()
        } else {
            self.evaluators
                .iter()
                .map(|e| parse_or_config::<Scheme>("--evaluators", e.trim()))
                .collect::<anyhow::Result<Vec<_>>>()?
        };
        let sensitivity = SensitivityConfig {
            evaluators,
            fraction: self.fraction.unwrap_or(0.1),
            statistic: match &self.statistic {
                Some(s) => parse_or_config::<Statistic>("--statistic", s)?,
                None => Statistic::DegradationAtFraction,
            },
            baseline_seed: seed,
        };
        let out_dir = self.out_dir.unwrap_or_else(|| PathBuf::from("irof-out"));
        let mut resolved = Resolved {
            images,
            value_range,
            methods,
            backend,
            slic,
            segment_cache: self.segment_cache,
            engine,
            sensitivity,
            seed,
            aoc_convention: AOC_CONVENTION,
            random_baseline: "per-image permutation, seed = run seed XOR image index",
            out_dir,
        };
        if let Some(every) = self.dump_frames_every.filter(|&n| n > 0) {
            resolved.engine.dump = Some(FrameDump {
                dir: PathBuf::from("frames"),
                every,
            });
        }
        if let Err(e) = resolved.engine.validate() {
            config_bail!("{e}");
        }
        if let Err(e) = resolved.slic.validate() {
            config_bail!("{e}");
        }
        if let Err(e) = resolved.sensitivity.validate() {
            config_bail!("{e}");
        }
        if let Some(b) = &resolved.backend {
            if let Err(e) = b.validate() {
                config_bail!("{e}");
            }
        }
        Ok(resolved)
    }
}

impl Resolved {
    pub fn backend(&self) -> anyhow::Result<&BackendConfig> {
        match &self.backend {
            Some(b) => Ok(b),
            None => bail!(ConfigError("--backend is required".into())),
        }
    }
}
