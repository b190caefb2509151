//! Black-box classifier access: a batched scoring trait, analytic stub
//! oracles for tests, and an HTTP client for a remote model service.
//!
//! Wire contract: `POST /predict[?target_class=c]` with a single NPY v1.0
//! `<f4` array of shape B×C×H×W as the body; the reply is
//! `{"scores": [B floats]}` when a target class is given, otherwise
//! `{"probabilities": [B arrays]}`. `GET /healthz` answers
//! `{"status": "ok", "model": "<name>"}`.

mod http;
pub mod server;
mod stub;

use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::attribution::ImageTensor;
use crate::error::{Error, Result};

pub use http::HttpOracle;
pub use stub::{make_stub, StubOracle, StubParams};

/// A classifier scoring images.
pub trait Oracle: Send + Sync {
    /// Largest batch a single request may carry.
    fn max_batch(&self) -> usize;

    /// Target-class probability for each image, in order. Called with at
    /// most [`Oracle::max_batch`] images.
    fn predict(&self, images: &[ImageTensor], target_class: usize) -> Result<Vec<f64>>;

    /// Full class-probability vectors, when the backend provides them.
    fn predict_probabilities(&self, images: &[ImageTensor]) -> Result<Vec<Vec<f64>>> {
        let _ = images;
        Err(Error::Oracle("this oracle only reports target-class scores".into()))
    }
}

/// Classifier output for one image.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleScore {
    pub target_class: usize,
    /// Probability of `target_class`.
    pub probability: f64,
    /// Full class distribution, when requested.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub probabilities: Option<Vec<f64>>,
}

impl OracleScore {
    pub fn new(target_class: usize, probability: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&probability) {
            return Err(Error::Protocol {
                message: format!("score {probability} outside [0, 1]"),
                excerpt: probability.to_string(),
            });
        }
        Ok(Self {
            target_class,
            probability,
            probabilities: None,
        })
    }

    pub fn from_distribution(target_class: usize, probabilities: Vec<f64>) -> Result<Self> {
        validate_distribution(&probabilities)?;
        let probability = *probabilities.get(target_class).ok_or_else(|| Error::Protocol {
            message: format!(
                "target class {target_class} outside distribution of {} classes",
                probabilities.len()
            ),
            excerpt: String::new(),
        })?;
        Ok(Self {
            target_class,
            probability,
            probabilities: Some(probabilities),
        })
    }
}

pub(crate) fn validate_distribution(p: &[f64]) -> Result<()> {
    let sum: f64 = p.iter().sum();
    if p.iter().any(|v| !(0.0..=1.0).contains(v)) || (sum - 1.0).abs() > 1e-6 {
        return Err(Error::Protocol {
            message: "class probabilities must lie in [0, 1] and sum to 1".into(),
            excerpt: format!("{:?}", &p[..p.len().min(8)]),
        });
    }
    Ok(())
}

/// Scores `images` for `target_class`, splitting into requests of at most
/// `max_batch` images. Results keep input order.
pub fn score_batch(oracle: &dyn Oracle, images: &[ImageTensor], target_class: usize) -> Result<Vec<OracleScore>> {
    let mut out = Vec::with_capacity(images.len());
    for chunk in images.chunks(oracle.max_batch().max(1)) {
        let scores = oracle.predict(chunk, target_class)?;
        if scores.len() != chunk.len() {
            return Err(Error::Protocol {
                message: format!("expected {} scores, got {}", chunk.len(), scores.len()),
                excerpt: format!("{:?}", &scores[..scores.len().min(8)]),
            });
        }
        for s in scores {
            out.push(OracleScore::new(target_class, s)?);
        }
    }
    Ok(out)
}

/// Target-class probabilities only.
pub fn score_probabilities(oracle: &dyn Oracle, images: &[ImageTensor], target_class: usize) -> Result<Vec<f64>> {
    Ok(score_batch(oracle, images, target_class)?
        .into_iter()
        .map(|s| s.probability)
        .collect())
}

fn default_timeout_secs() -> f64 {
    30.0
}

fn default_max_batch() -> usize {
    64
}

/// Where the oracle lives and how to talk to it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "transport", rename_all = "snake_case")]
pub enum OracleEndpoint {
    Network {
        address: String,
        #[serde(default = "default_timeout_secs")]
        timeout_secs: f64,
        #[serde(default = "default_max_batch")]
        max_batch: usize,
    },
    Stub {
        stub_kind: String,
        #[serde(default)]
        stub_params: StubParams,
        #[serde(default = "default_max_batch")]
        max_batch: usize,
    },
}

impl OracleEndpoint {
    pub fn max_batch(&self) -> usize {
        match self {
            OracleEndpoint::Network { max_batch, .. } | OracleEndpoint::Stub { max_batch, .. } => *max_batch,
        }
    }

    /// Instantiates the client (or stub). Network endpoints are not contacted here.
    pub fn connect(&self) -> Result<Box<dyn Oracle>> {
        if self.max_batch() == 0 {
            return Err(Error::validation("max_batch must be at least 1"));
        }
        match self {
            OracleEndpoint::Network {
                address,
                timeout_secs,
                max_batch,
            } => {
                if !(timeout_secs.is_finite() && *timeout_secs > 0.0) {
                    return Err(Error::validation("oracle timeout must be positive"));
                }
                Ok(Box::new(HttpOracle::new(
                    address,
                    Duration::from_secs_f64(*timeout_secs),
                    *max_batch,
                )?))
            }
            OracleEndpoint::Stub {
                stub_kind,
                stub_params,
                max_batch,
            } => Ok(Box::new(make_stub(stub_kind, stub_params)?.with_max_batch(*max_batch))),
        }
    }
}
