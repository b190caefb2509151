//! Bernoulli restricted Boltzmann machine.
//!
//! Energy: `E(x, h) = -(aᵀx + bᵀh + xᵀWh)` with `W` stored visible × hidden.
//! [`exact`] holds enumeration-based quantities for tiny models and
//! [`train`] the contrastive-divergence trainer.

pub mod exact;
pub mod train;

use ndarray::{Array1, Array2};
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::attribution::RngSeed;
use crate::error::{Error, Result};

pub use exact::{
    joint_probability, log_likelihood, log_likelihood_gradient, log_partition_function,
    partition_function, RbmGradient, MAX_ENUMERATED_UNITS,
};
pub use train::{train_cd, train_cd_from};

/// Logistic function with exact complement symmetry: `sigmoid(-z) == 1 - sigmoid(z)`
/// holds bit for bit, and `1 - (1 - sigmoid(z)) == sigmoid(z)`.
pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        1.0 - 1.0 / (1.0 + z.exp())
    }
}

/// Weights `W` (visible × hidden), visible bias `a` and hidden bias `b`.
#[derive(Debug, Clone, PartialEq)]
pub struct RbmParams {
    weights: Array2<f64>,
    visible_bias: Array1<f64>,
    hidden_bias: Array1<f64>,
}

impl RbmParams {
    pub fn new(weights: Array2<f64>, visible_bias: Array1<f64>, hidden_bias: Array1<f64>) -> Result<Self> {
        let (n, m) = weights.dim();
        if n == 0 || m == 0 {
            return Err(Error::validation(format!("RBM needs n, m >= 1, got {n}x{m}")));
        }
        if visible_bias.len() != n || hidden_bias.len() != m {
            return Err(Error::validation(format!(
                "bias lengths ({}, {}) do not match weights {n}x{m}",
                visible_bias.len(),
                hidden_bias.len()
            )));
        }
        let finite = weights
            .iter()
            .chain(visible_bias.iter())
            .chain(hidden_bias.iter())
            .all(|v| v.is_finite());
        if !finite {
            return Err(Error::validation("RBM parameters must be finite"));
        }
        Ok(Self {
            weights,
            visible_bias,
            hidden_bias,
        })
    }

    pub fn zeros(n_visible: usize, n_hidden: usize) -> Result<Self> {
        Self::new(
            Array2::zeros((n_visible, n_hidden)),
            Array1::zeros(n_visible),
            Array1::zeros(n_hidden),
        )
    }

    /// Weights i.i.d. N(0, 0.01²), zero biases.
    pub fn init(n_visible: usize, n_hidden: usize, seed: RngSeed) -> Result<Self> {
        let mut rng = seed.rng();
        let normal = Normal::new(0.0, 0.01).expect("valid std");
        let weights = Array2::from_shape_simple_fn((n_visible, n_hidden), || normal.sample(&mut rng));
        Self::new(weights, Array1::zeros(n_visible), Array1::zeros(n_hidden))
    }

    pub fn weights(&self) -> &Array2<f64> {
        &self.weights
    }

    pub fn visible_bias(&self) -> &Array1<f64> {
        &self.visible_bias
    }

    pub fn hidden_bias(&self) -> &Array1<f64> {
        &self.hidden_bias
    }

    pub fn n_visible(&self) -> usize {
        self.weights.nrows()
    }

    pub fn n_hidden(&self) -> usize {
        self.weights.ncols()
    }

    /// The equivalent model with every hidden unit relabelled `h -> 1 - h`:
    /// `W' = -W`, `b' = -b`, `a' = a + W·1`. The marginal over visibles is
    /// unchanged and each hidden posterior becomes its complement.
    pub fn with_hidden_flipped(&self) -> Self {
        let shift = self.weights.sum_axis(ndarray::Axis(1));
        Self {
            weights: self.weights.mapv(|w| -w),
            visible_bias: &self.visible_bias + &shift,
            hidden_bias: self.hidden_bias.mapv(|b| -b),
        }
    }

    /// Pre-sigmoid hidden input `b_j + Σ_i x_i W_ij`, accumulated in index order.
    pub fn hidden_activation(&self, x: &[f64]) -> Result<Array1<f64>> {
        self.check_visible(x)?;
        Ok(Array1::from_shape_fn(self.n_hidden(), |j| {
            let mut z = self.hidden_bias[j];
            for (i, &xi) in x.iter().enumerate() {
                z += xi * self.weights[[i, j]];
            }
            z
        }))
    }

    fn visible_activation(&self, h: &[f64]) -> Result<Array1<f64>> {
        if h.len() != self.n_hidden() {
            return Err(Error::validation(format!(
                "hidden vector has length {}, model has {}",
                h.len(),
                self.n_hidden()
            )));
        }
        Ok(Array1::from_shape_fn(self.n_visible(), |i| {
            let mut z = self.visible_bias[i];
            for (j, &hj) in h.iter().enumerate() {
                z += hj * self.weights[[i, j]];
            }
            z
        }))
    }

    fn check_visible(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.n_visible() {
            return Err(Error::validation(format!(
                "visible vector has length {}, model has {}",
                x.len(),
                self.n_visible()
            )));
        }
        Ok(())
    }
}

fn check_unit_interval(v: &[f64], what: &str) -> Result<()> {
    match v.iter().position(|x| !(0.0..=1.0).contains(x)) {
        Some(i) => Err(Error::validation(format!(
            "{what}[{i}] = {} is outside [0, 1]",
            v[i]
        ))),
        None => Ok(()),
    }
}

fn check_binary(v: &[f64], what: &str) -> Result<()> {
    match v.iter().position(|&x| x != 0.0 && x != 1.0) {
        Some(i) => Err(Error::validation(format!("{what}[{i}] = {} is not binary", v[i]))),
        None => Ok(()),
    }
}

/// `E(x, h) = -(aᵀx + bᵀh + xᵀWh)` for binary `x`, `h`.
pub fn energy(params: &RbmParams, x: &[f64], h: &[f64]) -> Result<f64> {
    params.check_visible(x)?;
    if h.len() != params.n_hidden() {
        return Err(Error::validation(format!(
            "hidden vector has length {}, model has {}",
            h.len(),
            params.n_hidden()
        )));
    }
    check_binary(x, "x")?;
    check_binary(h, "h")?;
    Ok(energy_unchecked(params, x, h))
}

pub(crate) fn energy_unchecked(params: &RbmParams, x: &[f64], h: &[f64]) -> f64 {
    let mut total = 0.0;
    for (i, &xi) in x.iter().enumerate() {
        total += params.visible_bias[i] * xi;
    }
    for (j, &hj) in h.iter().enumerate() {
        total += params.hidden_bias[j] * hj;
    }
    for (i, &xi) in x.iter().enumerate() {
        if xi == 0.0 {
            continue;
        }
        for (j, &hj) in h.iter().enumerate() {
            total += xi * params.weights[[i, j]] * hj;
        }
    }
    -total
}

/// `P(h_j = 1 | x) = sigmoid(b_j + Σ_i x_i W_ij)` for `x` in `[0, 1]^n`.
pub fn hidden_posterior(params: &RbmParams, x: &[f64]) -> Result<Array1<f64>> {
    check_unit_interval(x, "x")?;
    Ok(params.hidden_activation(x)?.mapv(sigmoid))
}

/// `P(x_i = 1 | h) = sigmoid(a_i + Σ_j h_j W_ij)` for `h` in `[0, 1]^m`.
pub fn visible_posterior(params: &RbmParams, h: &[f64]) -> Result<Array1<f64>> {
    check_unit_interval(h, "h")?;
    Ok(params.visible_activation(h)?.mapv(sigmoid))
}

/// Contrastive-divergence hyperparameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    /// Full passes over the sample set.
    pub n_iterations: usize,
    /// Gibbs steps per update (the k of CD-k).
    pub cd_steps: usize,
    pub seed: RngSeed,
}

impl TrainConfig {
    /// Batch 5, learning rate 0.01, 100 iterations.
    pub fn mnist() -> Self {
        Self {
            learning_rate: 0.01,
            batch_size: 5,
            n_iterations: 100,
            cd_steps: 1,
            seed: RngSeed(0),
        }
    }

    /// Batch 35, learning rate 0.001, 250 iterations (CIFAR10 and ImageNet).
    pub fn cifar() -> Self {
        Self {
            learning_rate: 0.001,
            batch_size: 35,
            n_iterations: 250,
            cd_steps: 1,
            seed: RngSeed(0),
        }
    }

    pub fn with_seed(mut self, seed: RngSeed) -> Self {
        self.seed = seed;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return Err(Error::validation("learning_rate must be positive"));
        }
        if self.batch_size == 0 || self.n_iterations == 0 || self.cd_steps == 0 {
            return Err(Error::validation(
                "batch_size, n_iterations and cd_steps must be positive",
            ));
        }
        Ok(())
    }
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self::cifar()
    }
}

/// S × n training rows with entries in `[0, 1]` (Bernoulli activation probabilities).
#[derive(Debug, Clone, PartialEq)]
pub struct SampleMatrix {
    rows: Array2<f64>,
}

impl SampleMatrix {
    pub fn new(rows: Array2<f64>) -> Result<Self> {
        let (s, n) = rows.dim();
        if s == 0 || n == 0 {
            return Err(Error::validation(format!("sample matrix {s}x{n} is empty")));
        }
        if let Some(((r, c), v)) = rows.indexed_iter().find(|(_, v)| !(0.0..=1.0).contains(*v)) {
            return Err(Error::validation(format!(
                "sample ({r}, {c}) = {v} is outside [0, 1]"
            )));
        }
        Ok(Self {
            rows: rows.as_standard_layout().into_owned(),
        })
    }

    pub fn rows(&self) -> &Array2<f64> {
        &self.rows
    }

    pub fn n_samples(&self) -> usize {
        self.rows.nrows()
    }

    pub fn n_features(&self) -> usize {
        self.rows.ncols()
    }

    pub(crate) fn row_slice(&self, r: usize) -> &[f64] {
        let n = self.n_features();
        &self.rows.as_slice().expect("standard layout")[r * n..(r + 1) * n]
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn example() -> RbmParams {
        RbmParams::new(array![[1.0], [2.0]], array![0.5, -0.5], array![1.0]).unwrap()
    }

    #[test]
    fn energy_of_zero_state_is_zero() {
        assert_eq!(energy(&example(), &[0.0, 0.0], &[0.0]).unwrap(), 0.0);
    }

    #[test]
    fn energy_hand_expansion() {
        // aᵀx = 0, bᵀh = 1, xᵀWh = 3
        assert_eq!(energy(&example(), &[1.0, 1.0], &[1.0]).unwrap(), -4.0);
    }

    #[test]
    fn energy_with_hidden_off_is_visible_term() {
        let p = example();
        for x in [[1.0, 0.0], [0.0, 1.0], [1.0, 1.0]] {
            let expected = -(0.5 * x[0] - 0.5 * x[1]);
            assert_eq!(energy(&p, &x, &[0.0]).unwrap(), expected);
        }
    }

    #[test]
    fn energy_rejects_bad_dimensions_and_non_binary() {
        let p = example();
        assert!(energy(&p, &[1.0], &[1.0]).is_err());
        assert!(energy(&p, &[1.0, 1.0], &[1.0, 0.0]).is_err());
        assert!(energy(&p, &[0.5, 1.0], &[1.0]).is_err());
    }

    #[test]
    fn posteriors_at_zero_params_are_half() {
        let p = RbmParams::zeros(3, 2).unwrap();
        assert!(hidden_posterior(&p, &[1.0, 0.0, 0.3]).unwrap().iter().all(|&v| v == 0.5));
        assert!(visible_posterior(&p, &[1.0, 0.0]).unwrap().iter().all(|&v| v == 0.5));
    }

    #[test]
    fn hidden_posterior_exact_cancellation() {
        let p = RbmParams::new(array![[1.0], [1.0]], array![0.0, 0.0], array![-2.0]).unwrap();
        assert_eq!(hidden_posterior(&p, &[1.0, 1.0]).unwrap()[0], 0.5);
    }

    #[test]
    fn visible_posterior_with_hidden_off_is_bias_sigmoid() {
        let p = example();
        let v = visible_posterior(&p, &[0.0]).unwrap();
        assert_eq!(v[0], sigmoid(0.5));
        assert_eq!(v[1], sigmoid(-0.5));
    }

    #[test]
    fn posterior_dimension_mismatch() {
        let p = example();
        assert!(hidden_posterior(&p, &[1.0]).is_err());
        assert!(visible_posterior(&p, &[1.0, 1.0]).is_err());
        assert!(hidden_posterior(&p, &[1.5, 0.0]).is_err());
    }

    #[test]
    fn sigmoid_complement_is_exact() {
        for z in [-40.0, -3.7, -1e-12, 0.0, 1e-12, 0.3, 2.5, 19.0, 800.0] {
            assert_eq!(sigmoid(-z), 1.0 - sigmoid(z), "z = {z}");
            assert_eq!(1.0 - (1.0 - sigmoid(z)), sigmoid(z), "z = {z}");
        }
    }

    #[test]
    fn params_validation() {
        assert!(RbmParams::new(Array2::zeros((2, 1)), Array1::zeros(3), Array1::zeros(1)).is_err());
        assert!(RbmParams::new(array![[f64::NAN]], array![0.0], array![0.0]).is_err());
        assert!(RbmParams::zeros(0, 1).is_err());
    }

    #[test]
    fn sample_matrix_validation() {
        assert!(SampleMatrix::new(array![[0.0, 1.2]]).is_err());
        assert!(SampleMatrix::new(Array2::zeros((0, 3))).is_err());
        assert!(SampleMatrix::new(array![[0.0, 1.0], [0.5, 0.25]]).is_ok());
    }

    #[test]
    fn train_config_validation() {
        assert!(TrainConfig::cifar().validate().is_ok());
        let mut c = TrainConfig::mnist();
        c.batch_size = 0;
        assert!(c.validate().is_err());
        c = TrainConfig::mnist();
        c.learning_rate = -1.0;
        assert!(c.validate().is_err());
    }
}
