//! Black-box classifier interface.
//!
//! The engine only ever asks a model for class scores of whole images. Three
//! transports are available:
//!
//! - `proc:CMD` spawns `CMD` and talks line-delimited JSON over its standard
//!   input and output (see [`process`]).
//! - `http:URL` POSTs the same lines to `URL/predict` (see [`http`]).
//! - in-process implementations of [`Backend`], such as the oracle models in
//!   [`oracle`].
//!
//! Wire format, one JSON object per line:
//!
//! ```text
//! request:  {"id": "<image_id>:<frame>", "shape": [H, W, C], "data": [f32; H*W*C]}
//! response: {"id": "<same id>", "scores": [f64; K]}
//!       or  {"id": "<same id>", "error": "message"}
//! ```

pub mod http;
pub mod oracle;
pub mod process;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::imagery::Image;
use crate::{Error, Result};

/// Scores for every class of one prediction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassScores {
    pub scores: Vec<f64>,
}

/// Tolerance on the sum of softmax-normalized scores.
pub const SOFTMAX_SUM_TOLERANCE: f64 = 1e-4;

impl ClassScores {
    pub fn new(scores: Vec<f64>) -> Self {
        ClassScores { scores }
    }

    pub fn class_count(&self) -> usize {
        self.scores.len()
    }

    pub fn class_score(&self, target: usize) -> Result<f64> {
        self.scores.get(target).copied().ok_or_else(|| {
            Error::InvalidParameter(format!(
                "class {target} out of range ({} classes)",
                self.scores.len()
            ))
        })
    }

    /// Index of the highest score, first on ties.
    pub fn argmax(&self) -> Option<usize> {
        self.scores
            .iter()
            .enumerate()
            .fold(None, |best: Option<(usize, f64)>, (i, &s)| match best {
                Some((_, b)) if b >= s => best,
                _ => Some((i, s)),
            })
            .map(|(i, _)| i)
    }

    /// Checks finiteness and, when `softmax` is set, non-negativity and unit sum.
    pub fn validate(&self, softmax: bool) -> Result<()> {
        if self.scores.is_empty() {
            return Err(Error::InvalidScores("empty score vector".into()));
        }
        if let Some(i) = self.scores.iter().position(|s| !s.is_finite()) {
            return Err(Error::InvalidScores(format!("score {i} is not finite")));
        }
        if softmax {
            if let Some(i) = self.scores.iter().position(|&s| s < 0.0) {
                return Err(Error::InvalidScores(format!(
                    "score {i} is negative under softmax normalization"
                )));
            }
            let sum: f64 = self.scores.iter().sum();
            if (sum - 1.0).abs() > SOFTMAX_SUM_TOLERANCE {
                return Err(Error::InvalidScores(format!(
                    "softmax scores sum to {sum}"
                )));
            }
        }
        Ok(())
    }
}

/// One image to classify. `id` travels with the request on the wire.
#[derive(Debug, Clone, Copy)]
pub struct Request<'a> {
    pub id: &'a str,
    pub image: &'a Image,
}

/// A classifier reachable through some transport.
///
/// Implementations return one [`ClassScores`] per request, in request order.
pub trait Backend: Send + Sync {
    fn predict(&self, requests: &[Request<'_>]) -> Result<Vec<ClassScores>>;

    fn describe(&self) -> String;
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind", content = "target")]
pub enum Transport {
    ExternalProcess(String),
    Http(String),
    OnnxFile(String),
}

impl FromStr for Transport {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let (kind, rest) = s.split_once(':').ok_or_else(|| {
            Error::InvalidParameter(format!(
                "backend {s:?} must look like proc:CMD, http:URL or onnx:PATH"
            ))
        })?;
        if rest.trim().is_empty() {
            return Err(Error::InvalidParameter(format!("backend {s:?} has no target")));
        }
        match kind {
            "proc" => Ok(Transport::ExternalProcess(rest.to_owned())),
            // `http:` alone is the prefix; the URL itself keeps its scheme.
            "http" | "https" => {
                let url = if rest.starts_with("//") {
                    s.to_owned()
                } else {
                    rest.to_owned()
                };
                Ok(Transport::Http(url))
            }
            "onnx" => Ok(Transport::OnnxFile(rest.to_owned())),
            _ => Err(Error::InvalidParameter(format!("unknown backend kind {kind:?}"))),
        }
    }
}

impl fmt::Display for Transport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Transport::ExternalProcess(cmd) => write!(f, "proc:{cmd}"),
            Transport::Http(url) => write!(f, "http:{url}"),
            Transport::OnnxFile(path) => write!(f, "onnx:{path}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BackendConfig {
    pub transport: Transport,
    pub batch_size: usize,
    /// Whether outputs are softmax probabilities; enables the sum/range checks.
    pub softmax: bool,
    /// Transport retries after the first failed attempt.
    pub max_retries: u32,
    /// Number of model processes (or concurrent HTTP requests) in flight.
    pub pool_size: usize,
}

impl BackendConfig {
    pub fn new(transport: Transport) -> Self {
        BackendConfig {
            transport,
            batch_size: 32,
            softmax: true,
            max_retries: 2,
            pool_size: 1,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::InvalidParameter("batch_size must be at least 1".into()));
        }
        if self.pool_size == 0 {
            return Err(Error::InvalidParameter("pool_size must be at least 1".into()));
        }
        Ok(())
    }
}

/// A backend plus batching and output validation.
pub struct Classifier {
    backend: Box<dyn Backend>,
    batch_size: usize,
    softmax: bool,
}

impl fmt::Debug for Classifier {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Classifier")
            .field("backend", &self.backend.describe())
            .field("batch_size", &self.batch_size)
            .field("softmax", &self.softmax)
            .finish()
    }
}

impl Classifier {
    pub fn new(backend: Box<dyn Backend>, batch_size: usize, softmax: bool) -> Self {
        Classifier {
            backend,
            batch_size: batch_size.max(1),
            softmax,
        }
    }

    /// Connects to the transport named in `config`.
    pub fn connect(config: &BackendConfig) -> Result<Self> {
        config.validate()?;
        let backend: Box<dyn Backend> = match &config.transport {
            Transport::ExternalProcess(cmd) => Box::new(process::ProcessBackend::new(
                cmd,
                config.pool_size,
                config.max_retries,
            )),
            Transport::Http(url) => Box::new(http::HttpBackend::new(url, config.max_retries)?),
            Transport::OnnxFile(path) => {
                return Err(Error::InvalidParameter(format!(
                    "onnx:{path}: this build has no in-process ONNX runtime; \
                     serve the model over proc: or http: instead"
                )))
            }
        };
        Ok(Classifier::new(backend, config.batch_size, config.softmax))
    }

    pub fn batch_size(&self) -> usize {
        self.batch_size
    }

    pub fn softmax(&self) -> bool {
        self.softmax
    }

    pub fn describe(&self) -> String {
        self.backend.describe()
    }

    /// Scores for every request, sent in chunks of `batch_size`.
    pub fn predict_batch(&self, requests: &[Request<'_>]) -> Result<Vec<ClassScores>> {
        if let Some(first) = requests.first() {
            if let Some(odd) = requests.iter().find(|r| !r.image.same_shape(first.image)) {
                return Err(Error::DimensionMismatch(format!(
                    "batch mixes image shapes ({} vs {})",
                    first.id, odd.id
                )));
            }
        }
        let mut out = Vec::with_capacity(requests.len());
        for chunk in requests.chunks(self.batch_size) {
            let scores = self.backend.predict(chunk)?;
            if scores.len() != chunk.len() {
                return Err(Error::InvalidScores(format!(
                    "{} responses for {} requests",
                    scores.len(),
                    chunk.len()
                )));
            }
            for s in &scores {
                s.validate(self.softmax)?;
            }
            out.extend(scores);
        }
        Ok(out)
    }

    /// Sends frame 0 of `image_id` twice and checks the scores agree to 1e-6.
    pub fn self_test(&self, image_id: &str, image: &Image) -> Result<f64> {
        let id = request_id(image_id, 0);
        let reqs = [Request { id: &id, image }, Request { id: &id, image }];
        let scores = self.predict_batch(&reqs)?;
        let delta = scores[0]
            .scores
            .iter()
            .zip(&scores[1].scores)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0f64, f64::max);
        if scores[0].class_count() != scores[1].class_count() || delta >= 1e-6 {
            return Err(Error::InvalidScores(format!(
                "model is not deterministic (max |delta| = {delta:e})"
            )));
        }
        Ok(delta)
    }
}

#[derive(Serialize)]
pub(crate) struct WireRequest<'a> {
    pub id: &'a str,
    pub shape: [usize; 3],
    pub data: &'a [f32],
}

impl<'a> From<&Request<'a>> for WireRequest<'a> {
    fn from(r: &Request<'a>) -> Self {
        WireRequest {
            id: r.id,
            shape: [r.image.height(), r.image.width(), r.image.channels()],
            data: r.image.data(),
        }
    }
}

#[derive(Deserialize)]
pub(crate) struct WireResponse {
    pub id: serde_json::Value,
    #[serde(default)]
    pub scores: Option<Vec<f64>>,
    #[serde(default)]
    pub error: Option<String>,
}

/// Outcome of decoding one response line.
pub(crate) enum Decoded {
    Scores(ClassScores),
    /// The model answered with an error object (not a transport fault).
    Rejected(String),
}

/// Parses a response line and checks it answers `expected_id`.
/// `Err` means the transport is broken.
pub(crate) fn decode_response(
    line: &str,
    expected_id: &str,
) -> std::result::Result<Decoded, String> {
    let resp: WireResponse =
        serde_json::from_str(line).map_err(|e| format!("malformed response: {e}"))?;
    let id_matches = match &resp.id {
        serde_json::Value::String(s) => s == expected_id,
        serde_json::Value::Number(n) => n.to_string() == expected_id,
        _ => false,
    };
    if !id_matches {
        return Err(format!(
            "response id {} does not match request {expected_id:?}",
            resp.id
        ));
    }
    match (resp.scores, resp.error) {
        (_, Some(msg)) => Ok(Decoded::Rejected(msg)),
        (Some(scores), None) => Ok(Decoded::Scores(ClassScores::new(scores))),
        (None, None) => Err("response has neither scores nor error".into()),
    }
}

/// Request id for frame `frame` of image `image_id`.
pub fn request_id(image_id: &str, frame: usize) -> String {
    format!("{image_id}:{frame}")
}

/// Image id part of a request id.
pub fn image_id_of(request_id: &str) -> &str {
    request_id
        .rsplit_once(':')
        .map(|(img, _)| img)
        .unwrap_or(request_id)
}
