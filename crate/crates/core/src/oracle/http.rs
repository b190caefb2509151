use std::thread;
use std::time::Duration;

use serde::Deserialize;

use super::{validate_distribution, Oracle};
use crate::attribution::ImageTensor;
use crate::error::{Error, Result};
use crate::npy;

/// Delays before each retry of a failed request.
pub const RETRY_DELAYS_MS: [u64; 3] = [100, 400, 1600];

const EXCERPT_LEN: usize = 200;

#[derive(Deserialize)]
struct ScoresReply {
    scores: Vec<f64>,
}

#[derive(Deserialize)]
struct ProbabilitiesReply {
    probabilities: Vec<Vec<f64>>,
}

#[derive(Deserialize)]
struct HealthReply {
    status: String,
    #[serde(default)]
    model: String,
}

/// Client for a remote classifier speaking the `/predict` + `/healthz`
/// protocol. Safe to share across threads.
#[derive(Debug, Clone)]
pub struct HttpOracle {
    agent: ureq::Agent,
    base: String,
    max_batch: usize,
}

fn excerpt(body: &str) -> String {
    body.chars().take(EXCERPT_LEN).collect()
}

enum Attempt {
    Retry(String),
    Fail(Error),
}

impl HttpOracle {
    /// `address` is the service root, e.g. `http://127.0.0.1:8080`.
    pub fn new(address: &str, timeout: Duration, max_batch: usize) -> Result<Self> {
        if max_batch == 0 {
            return Err(Error::validation("max_batch must be at least 1"));
        }
        let base = address.trim_end_matches('/').to_string();
        if !(base.starts_with("http://") || base.starts_with("https://")) {
            return Err(Error::validation(format!("oracle address '{address}' is not an http URL")));
        }
        let agent = ureq::AgentBuilder::new().timeout(timeout).build();
        Ok(Self { agent, base, max_batch })
    }

    pub fn address(&self) -> &str {
        &self.base
    }

    /// Queries `/healthz`; returns the reported model name.
    pub fn health(&self) -> Result<String> {
        let url = format!("{}/healthz", self.base);
        let body = self.with_retries(|| self.agent.get(&url).call())?;
        let reply: HealthReply = serde_json::from_str(&body).map_err(|e| Error::Protocol {
            message: format!("health reply is not valid JSON: {e}"),
            excerpt: excerpt(&body),
        })?;
        if reply.status != "ok" {
            return Err(Error::OracleUnavailable(format!(
                "{} reports status '{}'",
                self.base, reply.status
            )));
        }
        Ok(reply.model)
    }

    fn with_retries(&self, call: impl Fn() -> std::result::Result<ureq::Response, ureq::Error>) -> Result<String> {
        let mut last = String::new();
        for attempt in 0..=RETRY_DELAYS_MS.len() {
            if attempt > 0 {
                thread::sleep(Duration::from_millis(RETRY_DELAYS_MS[attempt - 1]));
            }
            match classify(call()) {
                Ok(body) => return Ok(body),
                Err(Attempt::Fail(e)) => return Err(e),
                Err(Attempt::Retry(why)) => last = why,
            }
        }
        Err(Error::OracleUnavailable(format!(
            "{} failed after {} retries: {last}",
            self.base,
            RETRY_DELAYS_MS.len()
        )))
    }

    fn post(&self, images: &[ImageTensor], target_class: Option<usize>) -> Result<String> {
        let body = encode_batch(images)?;
        let url = match target_class {
            Some(c) => format!("{}/predict?target_class={c}", self.base),
            None => format!("{}/predict", self.base),
        };
        self.with_retries(|| {
            self.agent
                .post(&url)
                .set("Content-Type", "application/octet-stream")
                .send_bytes(&body)
        })
    }
}

fn classify(result: std::result::Result<ureq::Response, ureq::Error>) -> std::result::Result<String, Attempt> {
    match result {
        Ok(resp) => resp
            .into_string()
            .map_err(|e| Attempt::Retry(format!("reading reply: {e}"))),
        Err(ureq::Error::Status(code, resp)) if code >= 500 => {
            Err(Attempt::Retry(format!("HTTP {code} {}", resp.status_text())))
        }
        Err(ureq::Error::Status(code, resp)) => {
            let body = resp.into_string().unwrap_or_default();
            Err(Attempt::Fail(Error::Protocol {
                message: format!("oracle rejected request with HTTP {code}"),
                excerpt: excerpt(&body),
            }))
        }
        Err(ureq::Error::Transport(t)) => Err(Attempt::Retry(t.to_string())),
    }
}

/// B×C×H×W `<f4` request body. All images must share one shape.
pub(crate) fn encode_batch(images: &[ImageTensor]) -> Result<Vec<u8>> {
    let first = images
        .first()
        .ok_or_else(|| Error::validation("cannot score an empty batch"))?;
    let dims = first.data().dim();
    let mut data = Vec::with_capacity(images.len() * dims.0 * dims.1 * dims.2);
    for im in images {
        if im.data().dim() != dims {
            return Err(Error::validation(format!(
                "batch mixes image shapes {:?} and {:?}",
                dims,
                im.data().dim()
            )));
        }
        data.extend(im.data().iter().map(|&v| v as f32));
    }
    npy::to_bytes_f32(&[images.len(), dims.0, dims.1, dims.2], &data)
}

impl Oracle for HttpOracle {
    fn max_batch(&self) -> usize {
        self.max_batch
    }

    fn predict(&self, images: &[ImageTensor], target_class: usize) -> Result<Vec<f64>> {
        if images.is_empty() {
            return Ok(Vec::new());
        }
        let body = self.post(images, Some(target_class))?;
        let reply: ScoresReply = serde_json::from_str(&body).map_err(|e| Error::Protocol {
            message: format!("malformed scores reply: {e}"),
            excerpt: excerpt(&body),
        })?;
        Ok(reply.scores)
    }

    fn predict_probabilities(&self, images: &[ImageTensor]) -> Result<Vec<Vec<f64>>> {
        if images.is_empty() {
            return Ok(Vec::new());
        }
        let body = self.post(images, None)?;
        let reply: ProbabilitiesReply = serde_json::from_str(&body).map_err(|e| Error::Protocol {
            message: format!("malformed probabilities reply: {e}"),
            excerpt: excerpt(&body),
        })?;
        if reply.probabilities.len() != images.len() {
            return Err(Error::Protocol {
                message: format!(
                    "expected {} distributions, got {}",
                    images.len(),
                    reply.probabilities.len()
                ),
                excerpt: excerpt(&body),
            });
        }
        for p in &reply.probabilities {
            validate_distribution(p)?;
        }
        Ok(reply.probabilities)
    }
}
