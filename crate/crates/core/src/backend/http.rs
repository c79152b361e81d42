//! The stdio protocol carried over HTTP: `POST <base>/predict` with one
//! request object per line; the response body holds one response per line.
//! Any status other than 200 counts as a transport failure.

use std::time::Duration;

use super::{decode_response, Backend, ClassScores, Decoded, Request, WireRequest};
use crate::{Error, Result};

pub struct HttpBackend {
    url: String,
    agent: ureq::Agent,
    max_retries: u32,
}

impl HttpBackend {
    pub fn new(base: &str, max_retries: u32) -> Result<Self> {
        if !(base.starts_with("http://") || base.starts_with("https://")) {
            return Err(Error::InvalidParameter(format!(
                "http backend needs an http:// URL, got {base:?}"
            )));
        }
        let trimmed = base.trim_end_matches('/');
        let url = if trimmed.ends_with("/predict") {
            trimmed.to_owned()
        } else {
            format!("{trimmed}/predict")
        };
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_secs(300)))
            .http_status_as_error(false)
            .build()
            .into();
        Ok(HttpBackend {
            url,
            agent,
            max_retries,
        })
    }

    fn body(requests: &[Request<'_>]) -> String {
        let mut body = String::new();
        for r in requests {
            body.push_str(&serde_json::to_string(&WireRequest::from(r)).expect("request serializes"));
            body.push('\n');
        }
        body
    }

    fn attempt(&self, body: &str) -> std::result::Result<String, String> {
        let mut resp = self
            .agent
            .post(&self.url)
            .header("Content-Type", "application/x-ndjson")
            .send(body)
            .map_err(|e| e.to_string())?;
        let status = resp.status().as_u16();
        if status != 200 {
            return Err(format!("HTTP status {status}"));
        }
        resp.body_mut()
            .with_config()
            .limit(1 << 30)
            .read_to_string()
            .map_err(|e| e.to_string())
    }
}

impl Backend for HttpBackend {
    fn predict(&self, requests: &[Request<'_>]) -> Result<Vec<ClassScores>> {
        if requests.is_empty() {
            return Ok(Vec::new());
        }
        let body = Self::body(requests);
        let mut last_error = String::new();
        for attempt in 1..=self.max_retries + 1 {
            let text = match self.attempt(&body) {
                Ok(t) => t,
                Err(msg) => {
                    log::warn!("attempt {attempt} against {} failed: {msg}", self.url);
                    last_error = msg;
                    continue;
                }
            };
            let lines: Vec<&str> = text.lines().filter(|l| !l.trim().is_empty()).collect();
            if lines.len() != requests.len() {
                last_error = format!(
                    "{} response lines for {} requests",
                    lines.len(),
                    requests.len()
                );
                continue;
            }
            let mut out = Vec::with_capacity(requests.len());
            for (line, r) in lines.iter().zip(requests) {
                match decode_response(line, r.id) {
                    Ok(Decoded::Scores(s)) => out.push(s),
                    Ok(Decoded::Rejected(msg)) => {
                        return Err(Error::Rejected(format!("{}: {msg}", r.id)))
                    }
                    Err(msg) => {
                        last_error = msg;
                        break;
                    }
                }
            }
            if out.len() == requests.len() {
                return Ok(out);
            }
        }
        Err(Error::Transport {
            attempts: self.max_retries + 1,
            message: last_error,
        })
    }

    fn describe(&self) -> String {
        format!("http:{}", self.url)
    }
}
