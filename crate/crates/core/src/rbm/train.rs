use rand::seq::SliceRandom;
use rand::Rng;

use super::{sigmoid, RbmParams, SampleMatrix, TrainConfig};
use crate::error::{Error, Result};

/// Trains an RBM with `n_hidden` hidden units by CD-k from a seeded
/// initialization. Deterministic for a fixed `config.seed`.
pub fn train_cd(samples: &SampleMatrix, config: &TrainConfig, n_hidden: usize) -> Result<RbmParams> {
    config.validate()?;
    let init = RbmParams::init(samples.n_features(), n_hidden, config.seed.derive(0))?;
    train_cd_from(init, samples, config)
}

/// CD-k starting from `init`.
///
/// Each iteration is one pass over the rows in a freshly shuffled order,
/// split into mini-batches (the last one may be short). Inside the Gibbs
/// chain hidden states are Bernoulli draws while visible reconstructions
/// stay at their mean-field probabilities; the data rows are used as-is.
pub fn train_cd_from(init: RbmParams, samples: &SampleMatrix, config: &TrainConfig) -> Result<RbmParams> {
    config.validate()?;
    let n = init.n_visible();
    let m = init.n_hidden();
    if samples.n_features() != n {
        return Err(Error::validation(format!(
            "samples have {} features, model has {n} visible units",
            samples.n_features()
        )));
    }

    // Flat row-major copies; the inner loop is hot.
    let mut w: Vec<f64> = init.weights().iter().copied().collect();
    let mut a: Vec<f64> = init.visible_bias().to_vec();
    let mut b: Vec<f64> = init.hidden_bias().to_vec();

    let mut gw = vec![0.0; n * m];
    let mut ga = vec![0.0; n];
    let mut gb = vec![0.0; m];
    let mut h_pos = vec![0.0; m];
    let mut h_state = vec![0.0; m];
    let mut h_neg = vec![0.0; m];
    let mut v_neg = vec![0.0; n];

    let mut rng = config.seed.derive(1).rng();
    let mut order: Vec<usize> = (0..samples.n_samples()).collect();

    for iteration in 0..config.n_iterations {
        order.shuffle(&mut rng);
        for batch in order.chunks(config.batch_size) {
            gw.fill(0.0);
            ga.fill(0.0);
            gb.fill(0.0);

            for &r in batch {
                let v_pos = samples.row_slice(r);
                hidden_probs(&w, &b, v_pos, &mut h_pos);
                for j in 0..m {
                    h_state[j] = if rng.gen::<f64>() < h_pos[j] { 1.0 } else { 0.0 };
                }
                for step in 0..config.cd_steps {
                    for i in 0..n {
                        let mut z = a[i];
                        for j in 0..m {
                            z += h_state[j] * w[i * m + j];
                        }
                        v_neg[i] = sigmoid(z);
                    }
                    hidden_probs(&w, &b, &v_neg, &mut h_neg);
                    if step + 1 < config.cd_steps {
                        for j in 0..m {
                            h_state[j] = if rng.gen::<f64>() < h_neg[j] { 1.0 } else { 0.0 };
                        }
                    }
                }

                for i in 0..n {
                    ga[i] += v_pos[i] - v_neg[i];
                    for j in 0..m {
                        gw[i * m + j] += v_pos[i] * h_pos[j] - v_neg[i] * h_neg[j];
                    }
                }
                for j in 0..m {
                    gb[j] += h_pos[j] - h_neg[j];
                }
            }

            let step = config.learning_rate / batch.len() as f64;
            for (p, g) in w.iter_mut().zip(&gw) {
                *p += step * g;
            }
            for (p, g) in a.iter_mut().zip(&ga) {
                *p += step * g;
            }
            for (p, g) in b.iter_mut().zip(&gb) {
                *p += step * g;
            }
        }

        if !w.iter().all(|v| v.is_finite()) {
            return Err(Error::TrainingDiverged { iteration, what: "weights" });
        }
        if !a.iter().chain(&b).all(|v| v.is_finite()) {
            return Err(Error::TrainingDiverged { iteration, what: "biases" });
        }
    }

    RbmParams::new(
        ndarray::Array2::from_shape_vec((n, m), w).expect("shape"),
        a.into(),
        b.into(),
    )
}

fn hidden_probs(w: &[f64], b: &[f64], v: &[f64], out: &mut [f64]) {
    let m = b.len();
    for j in 0..m {
        let mut z = b[j];
        for (i, &vi) in v.iter().enumerate() {
            z += vi * w[i * m + j];
        }
        out[j] = sigmoid(z);
    }
}
