use std::path::PathBuf;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use super::Oracle;
use crate::attribution::ImageTensor;
use crate::error::{Error, Result};
use crate::npy;

/// Parameters for [`make_stub`]; which fields are needed depends on the kind.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct StubParams {
    /// `constant`: the score.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub value: Option<f64>,
    /// `fraction_remaining` / `segment_critical`: H×W NPY mask, nonzero = in set.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mask: Option<PathBuf>,
    /// Pixel value that marks a position as removed (default 0).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub baseline: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
enum StubKind {
    Constant(f64),
    FractionRemaining { mask: Array2<bool>, baseline: f64 },
    SegmentCritical { mask: Array2<bool>, baseline: f64 },
}

/// Deterministic analytic oracle.
#[derive(Debug, Clone, PartialEq)]
pub struct StubOracle {
    kind: StubKind,
    max_batch: usize,
}

impl StubOracle {
    /// Scores every image `value`.
    pub fn constant(value: f64) -> Self {
        Self {
            kind: StubKind::Constant(value),
            max_batch: usize::MAX,
        }
    }

    /// Fraction of the masked pixels that are not at `baseline` in every
    /// channel. An empty mask scores 1.
    pub fn fraction_remaining(mask: Array2<bool>, baseline: f64) -> Self {
        Self {
            kind: StubKind::FractionRemaining { mask, baseline },
            max_batch: usize::MAX,
        }
    }

    /// 1 while no masked pixel has been set to `baseline`, 0 otherwise.
    pub fn segment_critical(mask: Array2<bool>, baseline: f64) -> Self {
        Self {
            kind: StubKind::SegmentCritical { mask, baseline },
            max_batch: usize::MAX,
        }
    }

    pub fn with_max_batch(mut self, max_batch: usize) -> Self {
        self.max_batch = max_batch.max(1);
        self
    }

    fn score(&self, image: &ImageTensor) -> Result<f64> {
        match &self.kind {
            StubKind::Constant(v) => Ok(*v),
            StubKind::FractionRemaining { mask, baseline } => {
                check_mask(mask, image)?;
                let total = mask.iter().filter(|&&m| m).count();
                if total == 0 {
                    return Ok(1.0);
                }
                let remaining = count_intact(mask, image, *baseline);
                Ok(remaining as f64 / total as f64)
            }
            StubKind::SegmentCritical { mask, baseline } => {
                check_mask(mask, image)?;
                let total = mask.iter().filter(|&&m| m).count();
                Ok(if count_intact(mask, image, *baseline) == total { 1.0 } else { 0.0 })
            }
        }
    }
}

fn check_mask(mask: &Array2<bool>, image: &ImageTensor) -> Result<()> {
    if mask.dim() != image.spatial_shape() {
        return Err(Error::validation(format!(
            "stub mask {:?} does not match image {:?}",
            mask.dim(),
            image.spatial_shape()
        )));
    }
    Ok(())
}

fn count_intact(mask: &Array2<bool>, image: &ImageTensor, baseline: f64) -> usize {
    let data = image.data();
    mask.indexed_iter()
        .filter(|(_, &m)| m)
        .filter(|((y, x), _)| (0..image.channels()).any(|c| data[[c, *y, *x]] != baseline))
        .count()
}

impl Oracle for StubOracle {
    fn max_batch(&self) -> usize {
        self.max_batch
    }

    fn predict(&self, images: &[ImageTensor], _target_class: usize) -> Result<Vec<f64>> {
        images.iter().map(|im| self.score(im)).collect()
    }
}

fn load_mask(params: &StubParams, kind: &str) -> Result<Array2<bool>> {
    let path = params
        .mask
        .as_ref()
        .ok_or_else(|| Error::validation(format!("stub kind '{kind}' needs a mask")))?;
    let arr = npy::read(path)?;
    if arr.shape.len() != 2 {
        return Err(Error::parse(path, format!("mask must be 2-D, got shape {:?}", arr.shape)));
    }
    let data = arr.data.iter().map(|&v| v != 0.0).collect();
    Ok(Array2::from_shape_vec((arr.shape[0], arr.shape[1]), data).expect("shape checked"))
}

/// Builds a stub from its kind name: `constant`, `fraction_remaining` or
/// `segment_critical`.
pub fn make_stub(kind: &str, params: &StubParams) -> Result<StubOracle> {
    let baseline = params.baseline.unwrap_or(0.0);
    match kind {
        "constant" => {
            let v = params
                .value
                .ok_or_else(|| Error::validation("stub kind 'constant' needs a value"))?;
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::validation(format!("constant score {v} outside [0, 1]")));
            }
            Ok(StubOracle::constant(v))
        }
        "fraction_remaining" => Ok(StubOracle::fraction_remaining(load_mask(params, kind)?, baseline)),
        "segment_critical" => Ok(StubOracle::segment_critical(load_mask(params, kind)?, baseline)),
        other => Err(Error::validation(format!("unknown stub kind '{other}'"))),
    }
}
