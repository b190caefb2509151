//! Exhaustive-enumeration quantities. Only feasible for `n + m <= 20`.

use ndarray::{Array1, Array2};

use super::{check_binary, energy_unchecked, sigmoid, RbmParams};
use crate::error::{Error, Result};

pub const MAX_ENUMERATED_UNITS: usize = 20;

fn guard(params: &RbmParams) -> Result<()> {
    let units = params.n_visible() + params.n_hidden();
    if units > MAX_ENUMERATED_UNITS {
        return Err(Error::Capacity(format!(
            "exact enumeration needs n + m <= {MAX_ENUMERATED_UNITS}, got {units}; \
             use a sampled estimate of the partition function instead"
        )));
    }
    Ok(())
}

fn bits(state: usize, len: usize, out: &mut [f64]) {
    for (k, slot) in out.iter_mut().enumerate().take(len) {
        *slot = ((state >> k) & 1) as f64;
    }
}

/// `(max, Σ exp(v - max))`, so that `Σ exp(v) = exp(max) · sum`.
fn shifted_sum(values: impl Iterator<Item = f64>) -> (f64, f64) {
    let values: Vec<f64> = values.collect();
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return (max, 0.0);
    }
    (max, values.iter().map(|v| (v - max).exp()).sum())
}

fn log_sum_exp(values: impl Iterator<Item = f64>) -> f64 {
    let (max, sum) = shifted_sum(values);
    max + sum.ln()
}

fn neg_energies(params: &RbmParams) -> Result<Vec<f64>> {
    guard(params)?;
    let (n, m) = (params.n_visible(), params.n_hidden());
    let mut x = vec![0.0; n];
    let mut h = vec![0.0; m];
    let mut neg_energies = Vec::with_capacity(1 << (n + m));
    for xs in 0..(1usize << n) {
        bits(xs, n, &mut x);
        for hs in 0..(1usize << m) {
            bits(hs, m, &mut h);
            neg_energies.push(-energy_unchecked(params, &x, &h));
        }
    }
    Ok(neg_energies)
}

/// `log Z` by enumerating all `2^(n+m)` states.
pub fn log_partition_function(params: &RbmParams) -> Result<f64> {
    Ok(log_sum_exp(neg_energies(params)?.into_iter()))
}

/// `Z = Σ_{x,h} exp(-E(x, h))` by enumerating all `2^(n+m)` states.
pub fn partition_function(params: &RbmParams) -> Result<f64> {
    let (max, sum) = shifted_sum(neg_energies(params)?.into_iter());
    Ok(max.exp() * sum)
}

/// `exp(-E(x, h)) / Z` for binary `x`, `h`.
pub fn joint_probability(params: &RbmParams, x: &[f64], h: &[f64]) -> Result<f64> {
    let e = super::energy(params, x, h)?;
    let log_z = log_partition_function(params)?;
    Ok((-e - log_z).exp())
}

/// `log Σ_h exp(-E(x, h))`, enumerated over hidden states.
fn log_unnormalized_marginal(params: &RbmParams, x: &[f64]) -> f64 {
    let m = params.n_hidden();
    let mut h = vec![0.0; m];
    log_sum_exp((0..(1usize << m)).map(|hs| {
        bits(hs, m, &mut h);
        -energy_unchecked(params, x, &h)
    }))
}

fn check_rows(params: &RbmParams, samples: &Array2<f64>) -> Result<()> {
    if samples.nrows() == 0 {
        return Err(Error::validation("no samples"));
    }
    if samples.ncols() != params.n_visible() {
        return Err(Error::validation(format!(
            "samples have {} columns, model has {} visible units",
            samples.ncols(),
            params.n_visible()
        )));
    }
    for row in samples.rows() {
        check_binary(&row.to_vec(), "sample")?;
    }
    Ok(())
}

/// Mean exact log-likelihood `(1/S) Σ_s log P(x_s)` over binary rows.
pub fn log_likelihood(params: &RbmParams, samples: &Array2<f64>) -> Result<f64> {
    guard(params)?;
    check_rows(params, samples)?;
    let log_z = log_partition_function(params)?;
    let total: f64 = samples
        .rows()
        .into_iter()
        .map(|row| log_unnormalized_marginal(params, &row.to_vec()) - log_z)
        .sum();
    Ok(total / samples.nrows() as f64)
}

/// Gradient of [`log_likelihood`] with respect to each parameter group.
#[derive(Debug, Clone, PartialEq)]
pub struct RbmGradient {
    pub weights: Array2<f64>,
    pub visible_bias: Array1<f64>,
    pub hidden_bias: Array1<f64>,
}

/// Exact gradient: data expectation of the sufficient statistics (hidden
/// units at their posterior mean) minus the model expectation, the latter
/// by enumeration. This is the quantity CD-k approximates.
pub fn log_likelihood_gradient(params: &RbmParams, samples: &Array2<f64>) -> Result<RbmGradient> {
    guard(params)?;
    check_rows(params, samples)?;
    let (n, m) = (params.n_visible(), params.n_hidden());
    let s = samples.nrows() as f64;

    let mut gw = Array2::<f64>::zeros((n, m));
    let mut ga = Array1::<f64>::zeros(n);
    let mut gb = Array1::<f64>::zeros(m);
    for row in samples.rows() {
        let x = row.to_vec();
        let hp = params.hidden_activation(&x)?.mapv(sigmoid);
        for i in 0..n {
            ga[i] += x[i] / s;
            for j in 0..m {
                gw[[i, j]] += x[i] * hp[j] / s;
            }
        }
        for j in 0..m {
            gb[j] += hp[j] / s;
        }
    }

    let log_z = log_partition_function(params)?;
    let mut x = vec![0.0; n];
    let mut h = vec![0.0; m];
    for xs in 0..(1usize << n) {
        bits(xs, n, &mut x);
        for hs in 0..(1usize << m) {
            bits(hs, m, &mut h);
            let p = (-energy_unchecked(params, &x, &h) - log_z).exp();
            for i in 0..n {
                ga[i] -= p * x[i];
                for j in 0..m {
                    gw[[i, j]] -= p * x[i] * h[j];
                }
            }
            for j in 0..m {
                gb[j] -= p * h[j];
            }
        }
    }
    Ok(RbmGradient {
        weights: gw,
        visible_bias: ga,
        hidden_bias: gb,
    })
}
