//! Synthetic benchmarks with known ground truth: conditionally independent
//! noisy observers of a latent binary label, and structured attribution
//! stacks with a planted importance map.

use ndarray::{Array2, Array3};
use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::attribution::{AttributionMap, AttributionStack, ImageTensor, RngSeed};
use crate::error::{Error, Result};

/// Binary observations of a hidden label.
#[derive(Debug, Clone)]
pub struct PlantedTruth {
    /// S × N observer outputs in {0, 1}.
    pub observations: Array2<f64>,
    /// The latent label of each sample.
    pub truth: Vec<bool>,
}

/// Draws `n_samples` labels from Bernoulli(`prior`) and, for each observer,
/// reports the label correctly with probability `accuracies[i]`, independently.
pub fn planted_truth(accuracies: &[f64], prior: f64, n_samples: usize, seed: RngSeed) -> Result<PlantedTruth> {
    if accuracies.is_empty() || accuracies.iter().any(|a| !(0.0..=1.0).contains(a)) {
        return Err(Error::validation("observer accuracies must lie in [0, 1]"));
    }
    if !(0.0..=1.0).contains(&prior) {
        return Err(Error::validation("prior must lie in [0, 1]"));
    }
    let mut rng = seed.rng();
    let n = accuracies.len();
    let mut observations = Array2::zeros((n_samples, n));
    let mut truth = Vec::with_capacity(n_samples);
    for s in 0..n_samples {
        let y = rng.gen::<f64>() < prior;
        for (i, &acc) in accuracies.iter().enumerate() {
            let correct = rng.gen::<f64>() < acc;
            observations[[s, i]] = if y == correct { 1.0 } else { 0.0 };
        }
        truth.push(y);
    }
    Ok(PlantedTruth { observations, truth })
}

/// Majority vote per row; ties go to `false`.
pub fn majority_vote(observations: &Array2<f64>) -> Vec<bool> {
    observations
        .rows()
        .into_iter()
        .map(|row| 2.0 * row.sum() > row.len() as f64)
        .collect()
}

/// Exact posterior `P(y = 1 | x)` under the planted model with known
/// accuracies and prior.
pub fn bayes_posterior(observations: &Array2<f64>, accuracies: &[f64], prior: f64) -> Vec<f64> {
    observations
        .rows()
        .into_iter()
        .map(|row| {
            let (mut like1, mut like0) = (prior, 1.0 - prior);
            for (&x, &acc) in row.iter().zip(accuracies) {
                if x == 1.0 {
                    like1 *= acc;
                    like0 *= 1.0 - acc;
                } else {
                    like1 *= 1.0 - acc;
                    like0 *= acc;
                }
            }
            like1 / (like1 + like0)
        })
        .collect()
}

/// Fraction of positions where `predicted` equals `truth`.
pub fn agreement(predicted: &[bool], truth: &[bool]) -> f64 {
    let hits = predicted.iter().zip(truth).filter(|(p, t)| p == t).count();
    hits as f64 / truth.len().max(1) as f64
}

/// A smooth planted importance map: a sum of Gaussian bumps at random
/// centres, scaled into `[0, 1]`.
pub fn planted_map(height: usize, width: usize, bumps: usize, seed: RngSeed) -> Array2<f64> {
    let mut rng = seed.rng();
    let scale = (height.min(width) as f64 / 6.0).max(1.0);
    let centres: Vec<(f64, f64, f64)> = (0..bumps.max(1))
        .map(|_| {
            (
                rng.gen_range(0.0..height as f64),
                rng.gen_range(0.0..width as f64),
                rng.gen_range(0.5..1.0),
            )
        })
        .collect();
    let raw = Array2::from_shape_fn((height, width), |(y, x)| {
        centres
            .iter()
            .map(|&(cy, cx, amp)| {
                let d2 = (y as f64 - cy).powi(2) + (x as f64 - cx).powi(2);
                amp * (-d2 / (2.0 * scale * scale)).exp()
            })
            .sum::<f64>()
    });
    let max = raw.iter().copied().fold(0.0, f64::max);
    if max > 0.0 {
        raw / max
    } else {
        raw
    }
}

/// `k` explainer-like maps: the planted map plus independent Gaussian
/// perturbations of standard deviation `jitter`, paired with a grey image
/// whose intensity follows the planted map.
pub fn structured_stack(
    planted: &Array2<f64>,
    k: usize,
    jitter: f64,
    seed: RngSeed,
) -> Result<AttributionStack> {
    let (h, w) = planted.dim();
    let normal = Normal::new(0.0, jitter.max(0.0)).map_err(|e| Error::validation(e.to_string()))?;
    let maps = (0..k)
        .map(|i| {
            let mut rng = seed.derive(i as u64).rng();
            let scores = planted.mapv(|v| v + normal.sample(&mut rng));
            AttributionMap::new(scores, format!("explainer-{i}"))
        })
        .collect::<Result<Vec<_>>>()?;
    let image = ImageTensor::new(
        Array3::from_shape_fn((1, h, w), |(_, y, x)| planted[[y, x]].clamp(0.0, 1.0)),
        0,
    )?;
    AttributionStack::new(maps, image)
}
