//! Mean, variance and RBM aggregation of attribution stacks, and the two
//! flip-resolution policies for the RBM output.

use std::cmp::Ordering;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::attribution::{normalize_map, AttributionMap, AttributionStack, ImageTensor};
use crate::error::{Error, Result};
use crate::metrics::{evaluate_metric, MetricKind, MetricSpec};
use crate::oracle::Oracle;
use crate::rbm::{sigmoid, train_cd, RbmParams, SampleMatrix, TrainConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EnsembleMethod {
    Mean,
    Variance,
    Rbm,
}

impl EnsembleMethod {
    pub fn name(self) -> &'static str {
        match self {
            EnsembleMethod::Mean => "mean",
            EnsembleMethod::Variance => "variance",
            EnsembleMethod::Rbm => "rbm",
        }
    }
}

impl std::str::FromStr for EnsembleMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mean" => Ok(EnsembleMethod::Mean),
            "variance" => Ok(EnsembleMethod::Variance),
            "rbm" => Ok(EnsembleMethod::Rbm),
            other => Err(Error::validation(format!(
                "unknown ensemble method '{other}' (expected mean, variance or rbm)"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FlipPolicy {
    #[default]
    FlipDetection,
    MetricOptimization,
    None,
}

impl FlipPolicy {
    pub fn name(self) -> &'static str {
        match self {
            FlipPolicy::FlipDetection => "flip_detection",
            FlipPolicy::MetricOptimization => "metric_optimization",
            FlipPolicy::None => "none",
        }
    }
}

impl std::str::FromStr for FlipPolicy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "flip_detection" => Ok(FlipPolicy::FlipDetection),
            "metric_optimization" => Ok(FlipPolicy::MetricOptimization),
            "none" => Ok(FlipPolicy::None),
            other => Err(Error::validation(format!("unknown flip policy '{other}'"))),
        }
    }
}

pub const DEFAULT_EPSILON: f64 = 1e-6;
pub const DEFAULT_FLIP_FRACTION: f64 = 0.05;

fn default_epsilon() -> f64 {
    DEFAULT_EPSILON
}
fn default_flip_fraction() -> f64 {
    DEFAULT_FLIP_FRACTION
}
fn default_flip_metric() -> MetricSpec {
    MetricSpec::new(MetricKind::Deletion)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnsembleConfig {
    pub method: EnsembleMethod,
    /// Added to the pixel-wise deviation in the variance ensemble.
    #[serde(default = "default_epsilon")]
    pub epsilon: f64,
    #[serde(default)]
    pub rbm_train: TrainConfig,
    #[serde(default)]
    pub flip_policy: FlipPolicy,
    /// Share of pixels in the top and bottom sets compared by flip detection.
    #[serde(default = "default_flip_fraction")]
    pub flip_fraction: f64,
    /// Metric used by [`FlipPolicy::MetricOptimization`].
    #[serde(default = "default_flip_metric")]
    pub flip_metric: MetricSpec,
    /// Append the channel-mean of the input image as one more map.
    #[serde(default)]
    pub include_original_image: bool,
}

impl EnsembleConfig {
    pub fn new(method: EnsembleMethod) -> Self {
        Self {
            method,
            epsilon: DEFAULT_EPSILON,
            rbm_train: TrainConfig::default(),
            flip_policy: FlipPolicy::default(),
            flip_fraction: DEFAULT_FLIP_FRACTION,
            flip_metric: default_flip_metric(),
            include_original_image: false,
        }
    }

    pub fn with_train(mut self, train: TrainConfig) -> Self {
        self.rbm_train = train;
        self
    }

    pub fn with_flip_policy(mut self, policy: FlipPolicy) -> Self {
        self.flip_policy = policy;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon.is_finite() && self.epsilon > 0.0) {
            return Err(Error::validation("epsilon must be positive"));
        }
        if !(self.flip_fraction > 0.0 && self.flip_fraction <= 0.5) {
            return Err(Error::validation(format!(
                "flip_fraction {} outside (0, 0.5]",
                self.flip_fraction
            )));
        }
        self.rbm_train.validate()?;
        self.flip_metric.validate()
    }
}

/// Overlap counts behind a flip decision.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FlipVote {
    /// `|T_c ∩ T_r| + |B_c ∩ B_r|`
    pub agree: usize,
    /// `|T_c ∩ B_r| + |B_c ∩ T_r|`
    pub disagree: usize,
    /// Doubled-midrank covariance of candidate and reference, consulted
    /// only when the overlap counts tie.
    pub rank_covariance: i128,
    pub flip: bool,
}

/// Both candidate metric values seen by metric optimization.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricChoice {
    pub metric: MetricKind,
    pub unflipped: f64,
    pub flipped: f64,
    pub tie: bool,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Diagnostics {
    pub n_maps: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub training_iterations: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub flip_vote: Option<FlipVote>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub metric_choice: Option<MetricChoice>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AggregatedMap {
    pub map: AttributionMap,
    /// Whether the output is the complement of the map it was derived from.
    pub flipped: bool,
    pub diagnostics: Diagnostics,
}

fn check_ensemble_input(stack: &AttributionStack) -> Result<()> {
    if stack.len() < 2 {
        return Err(Error::validation(format!(
            "ensembles need at least 2 maps, got {}",
            stack.len()
        )));
    }
    if let Some(m) = stack.maps().iter().find(|m| !m.is_normalized()) {
        return Err(Error::validation(format!(
            "map '{}' is not normalized; normalize the stack first",
            m.source()
        )));
    }
    Ok(())
}

fn lexicographic(a: &Array2<f64>, b: &Array2<f64>) -> Ordering {
    a.iter()
        .zip(b.iter())
        .map(|(x, y)| x.total_cmp(y))
        .find(|o| o.is_ne())
        .unwrap_or(Ordering::Equal)
}

/// Maps sorted by source tag, then by values, so results do not depend on
/// the order of the stack.
pub fn canonical_order(maps: &[AttributionMap]) -> Vec<&AttributionMap> {
    let mut v: Vec<&AttributionMap> = maps.iter().collect();
    v.sort_by(|a, b| a.source().cmp(b.source()).then_with(|| lexicographic(a.scores(), b.scores())));
    v
}

/// Pixel-wise mean over the stack, before normalization.
pub fn mean_raw(stack: &AttributionStack) -> Array2<f64> {
    let maps = canonical_order(stack.maps());
    let mut sum = Array2::zeros(stack.shape());
    for m in &maps {
        sum += m.scores();
    }
    sum / maps.len() as f64
}

/// Pixel-wise `mean / (σ + ε)` with population σ, before normalization.
pub fn variance_raw(stack: &AttributionStack, epsilon: f64) -> Array2<f64> {
    let maps = canonical_order(stack.maps());
    let n = maps.len() as f64;
    let mean = mean_raw(stack);
    let mut sq = Array2::zeros(stack.shape());
    for m in &maps {
        sq += &(m.scores() - &mean).mapv(|d| d * d);
    }
    let sigma = (sq / n).mapv(f64::sqrt);
    ndarray::Zip::from(&mean)
        .and(&sigma)
        .map_collect(|&mu, &s| mu / (s + epsilon))
}

fn finish(raw: Array2<f64>, method: EnsembleMethod, n_maps: usize) -> Result<AggregatedMap> {
    let map = normalize_map(&AttributionMap::new(raw, method.name())?)?;
    Ok(AggregatedMap {
        map,
        flipped: false,
        diagnostics: Diagnostics {
            n_maps,
            ..Default::default()
        },
    })
}

pub fn mean_ensemble(stack: &AttributionStack) -> Result<AggregatedMap> {
    check_ensemble_input(stack)?;
    finish(mean_raw(stack), EnsembleMethod::Mean, stack.len())
}

pub fn variance_ensemble(stack: &AttributionStack, epsilon: f64) -> Result<AggregatedMap> {
    check_ensemble_input(stack)?;
    if !(epsilon.is_finite() && epsilon > 0.0) {
        return Err(Error::validation("epsilon must be positive"));
    }
    finish(variance_raw(stack, epsilon), EnsembleMethod::Variance, stack.len())
}

/// One row per pixel, one column per map in canonical order.
pub fn pixel_samples(stack: &AttributionStack) -> Result<SampleMatrix> {
    let maps = canonical_order(stack.maps());
    let (h, w) = stack.shape();
    let rows = Array2::from_shape_fn((h * w, maps.len()), |(p, n)| maps[n].scores()[[p / w, p % w]]);
    SampleMatrix::new(rows)
}

/// Hidden-unit posterior of every pixel row, as an H×W grid.
pub fn posterior_map(params: &RbmParams, samples: &SampleMatrix, shape: (usize, usize)) -> Result<Array2<f64>> {
    if params.n_hidden() != 1 {
        return Err(Error::validation("posterior maps need a single hidden unit"));
    }
    if samples.n_samples() != shape.0 * shape.1 {
        return Err(Error::validation("sample count does not match map shape"));
    }
    let mut out = Array2::zeros(shape);
    for (p, row) in samples.rows().rows().into_iter().enumerate() {
        let z = params.hidden_activation(row.as_slice().expect("standard layout"))?[0];
        out[[p / shape.1, p % shape.1]] = sigmoid(z);
    }
    Ok(out)
}

/// Top-k (descending) or bottom-k (ascending) pixel set; ties by ascending
/// index in both cases.
fn extreme_set(values: &[f64], k: usize, top: bool) -> Vec<bool> {
    let mut idx: Vec<usize> = (0..values.len()).collect();
    idx.sort_by(|&i, &j| {
        let by_value = if top {
            values[j].total_cmp(&values[i])
        } else {
            values[i].total_cmp(&values[j])
        };
        by_value.then(i.cmp(&j))
    });
    let mut set = vec![false; values.len()];
    for &i in &idx[..k] {
        set[i] = true;
    }
    set
}

/// Doubled midranks minus `n + 1`: centred, integer, and exactly negated
/// when the order of the values is reversed.
fn centred_midranks(values: &[f64]) -> Vec<i64> {
    let n = values.len();
    let mut idx: Vec<usize> = (0..n).collect();
    idx.sort_by(|&i, &j| values[i].total_cmp(&values[j]));
    let mut out = vec![0i64; n];
    let mut start = 0;
    while start < n {
        let mut end = start + 1;
        while end < n && values[idx[end]] == values[idx[start]] {
            end += 1;
        }
        // ranks start+1..=end, doubled midrank = start + 1 + end
        let doubled = (start + 1 + end) as i64;
        for &i in &idx[start..end] {
            out[i] = doubled - (n as i64 + 1);
        }
        start = end;
    }
    out
}

/// Overlap vote of `candidate` against `reference` on their top and bottom
/// `⌈fraction · H·W⌉` pixels. Flips when disagreements outnumber
/// agreements. A tied vote is settled by the sign of the rank covariance,
/// and if that is zero too, by the candidate's rank at the reference's
/// highest-ranked pixels. Complementing the candidate always reverses the
/// decision unless the candidate is constant.
pub fn flip_vote(candidate: &AttributionMap, reference: &AttributionMap, fraction: f64) -> Result<FlipVote> {
    if candidate.shape() != reference.shape() {
        return Err(Error::validation(format!(
            "candidate {:?} and reference {:?} differ in shape",
            candidate.shape(),
            reference.shape()
        )));
    }
    if !(fraction > 0.0 && fraction <= 0.5) {
        return Err(Error::validation(format!("flip fraction {fraction} outside (0, 0.5]")));
    }
    let c: Vec<f64> = candidate.scores().iter().copied().collect();
    let r: Vec<f64> = reference.scores().iter().copied().collect();
    let k = ((fraction * c.len() as f64).ceil() as usize).clamp(1, c.len());
    let (tc, bc) = (extreme_set(&c, k, true), extreme_set(&c, k, false));
    let (tr, br) = (extreme_set(&r, k, true), extreme_set(&r, k, false));
    let count = |a: &[bool], b: &[bool]| a.iter().zip(b).filter(|(x, y)| **x && **y).count();
    let agree = count(&tc, &tr) + count(&bc, &br);
    let disagree = count(&tc, &br) + count(&bc, &tr);

    let rc = centred_midranks(&c);
    let rr = centred_midranks(&r);
    let rank_covariance: i128 = rc.iter().zip(&rr).map(|(&a, &b)| a as i128 * b as i128).sum();

    let flip = match disagree.cmp(&agree) {
        Ordering::Greater => true,
        Ordering::Less => false,
        Ordering::Equal if rank_covariance != 0 => rank_covariance < 0,
        Ordering::Equal => {
            let mut by_reference: Vec<usize> = (0..r.len()).collect();
            by_reference.sort_by(|&i, &j| r[j].total_cmp(&r[i]).then(i.cmp(&j)));
            by_reference
                .into_iter()
                .map(|i| rc[i])
                .find(|&v| v != 0)
                .is_some_and(|v| v < 0)
        }
    };
    Ok(FlipVote {
        agree,
        disagree,
        rank_covariance,
        flip,
    })
}

/// Whether `candidate` should be inverted to agree with `reference`.
pub fn flip_detect(candidate: &AttributionMap, reference: &AttributionMap, fraction: f64) -> Result<bool> {
    Ok(flip_vote(candidate, reference, fraction)?.flip)
}

/// `1 − value` per pixel.
pub fn apply_flip(map: &AttributionMap) -> Result<AttributionMap> {
    if !map.is_normalized() {
        return Err(Error::validation("only normalized maps can be flipped"));
    }
    AttributionMap::new_normalized(map.scores().mapv(|v| 1.0 - v), map.source())
}

/// Scores `map` and its flip under `spec`; keeps the better one, the
/// unflipped map on a tie.
pub fn metric_optimize_flip(
    map: &AttributionMap,
    image: &ImageTensor,
    oracle: &dyn Oracle,
    spec: &MetricSpec,
) -> Result<AggregatedMap> {
    let flipped_map = apply_flip(map)?;
    let unflipped = evaluate_metric(image, map, oracle, spec)?.value;
    let flipped = evaluate_metric(image, &flipped_map, oracle, spec)?.value;
    let choose_flip = spec.kind.better(flipped, unflipped);
    Ok(AggregatedMap {
        map: if choose_flip { flipped_map } else { map.clone() },
        flipped: choose_flip,
        diagnostics: Diagnostics {
            metric_choice: Some(MetricChoice {
                metric: spec.kind,
                unflipped,
                flipped,
                tie: unflipped == flipped,
            }),
            ..Default::default()
        },
    })
}

/// Applies the configured flip policy to a raw posterior map.
///
/// Flip detection decides on the raw posterior, complements it if needed
/// and then normalizes. Metric optimization starts from the flip-detection
/// result and compares it with its flip, so both policies return the same
/// map for a posterior `p` and for its complement `1 − p`.
pub fn resolve_orientation(
    posterior: Array2<f64>,
    reference: &AttributionMap,
    config: &EnsembleConfig,
    image: &ImageTensor,
    oracle: Option<&dyn Oracle>,
) -> Result<AggregatedMap> {
    let name = EnsembleMethod::Rbm.name();
    let raw = AttributionMap::new(posterior, name)?;
    if config.flip_policy == FlipPolicy::None {
        return Ok(AggregatedMap {
            map: normalize_map(&raw)?,
            flipped: false,
            diagnostics: Diagnostics::default(),
        });
    }
    let vote = flip_vote(&raw, reference, config.flip_fraction)?;
    let oriented = if vote.flip {
        AttributionMap::new(raw.scores().mapv(|v| 1.0 - v), name)?
    } else {
        raw
    };
    let detected = normalize_map(&oriented)?;
    let mut out = match config.flip_policy {
        FlipPolicy::MetricOptimization => {
            let oracle = oracle.ok_or_else(|| Error::validation("metric optimization needs an oracle"))?;
            let mut choice = metric_optimize_flip(&detected, image, oracle, &config.flip_metric)?;
            choice.flipped ^= vote.flip;
            choice
        }
        _ => AggregatedMap {
            map: detected,
            flipped: vote.flip,
            diagnostics: Diagnostics::default(),
        },
    };
    out.diagnostics.flip_vote = Some(vote);
    Ok(out)
}

/// RBM aggregation with given parameters (skips training).
pub fn rbm_aggregate_with_params(
    stack: &AttributionStack,
    params: &RbmParams,
    config: &EnsembleConfig,
    oracle: Option<&dyn Oracle>,
) -> Result<AggregatedMap> {
    check_ensemble_input(stack)?;
    config.validate()?;
    let samples = pixel_samples(stack)?;
    let posterior = posterior_map(params, &samples, stack.shape())?;
    let reference = mean_ensemble(stack)?.map;
    let mut out = resolve_orientation(posterior, &reference, config, stack.image(), oracle)?;
    out.diagnostics.n_maps = stack.len();
    Ok(out)
}

/// Trains one RBM with a single hidden unit on the pixel rows of the stack
/// and returns the parameters.
pub fn train_pixel_rbm(stack: &AttributionStack, train: &TrainConfig) -> Result<RbmParams> {
    check_ensemble_input(stack)?;
    train_cd(&pixel_samples(stack)?, train, 1)
}

/// RBM ensemble: pixels are training samples, maps are visible units, the
/// per-pixel hidden posterior is the aggregate.
pub fn rbm_aggregate(
    stack: &AttributionStack,
    config: &EnsembleConfig,
    oracle: Option<&dyn Oracle>,
) -> Result<AggregatedMap> {
    config.validate()?;
    let params = train_pixel_rbm(stack, &config.rbm_train)?;
    let mut out = rbm_aggregate_with_params(stack, &params, config, oracle)?;
    out.diagnostics.training_iterations = Some(config.rbm_train.n_iterations);
    Ok(out)
}

/// Runs the configured method, appending the original image first when
/// requested. `oracle` is only used by metric optimization.
pub fn aggregate(stack: &AttributionStack, config: &EnsembleConfig, oracle: Option<&dyn Oracle>) -> Result<AggregatedMap> {
    config.validate()?;
    let extended;
    let stack = if config.include_original_image {
        extended = stack.with_extra_maps([stack.image().to_attribution_map()?])?;
        &extended
    } else {
        stack
    };
    match config.method {
        EnsembleMethod::Mean => mean_ensemble(stack),
        EnsembleMethod::Variance => variance_ensemble(stack, config.epsilon),
        EnsembleMethod::Rbm => rbm_aggregate(stack, config, oracle),
    }
}
