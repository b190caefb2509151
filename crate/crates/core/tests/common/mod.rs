//! Reference implementations shared by the integration tests. Everything
//! here is written from the definitions, without calling the library code
//! it is used to check.
#![allow(dead_code)]

use ndarray::{Array2, Array3};
use rand::Rng;
use saliency_forge::oracle::Oracle;
use saliency_forge::{AttributionMap, ImageTensor, Result};

/// Plain-slice RBM used by the enumeration oracle.
#[derive(Debug, Clone)]
pub struct TinyRbm {
    pub w: Vec<Vec<f64>>, // n × m
    pub a: Vec<f64>,
    pub b: Vec<f64>,
}

impl TinyRbm {
    pub fn random(rng: &mut impl Rng, n: usize, m: usize, scale: f64) -> Self {
        let mut u = || rng.gen_range(-scale..scale);
        Self {
            w: (0..n).map(|_| (0..m).map(|_| u()).collect()).collect(),
            a: (0..n).map(|_| u()).collect(),
            b: (0..m).map(|_| u()).collect(),
        }
    }

    pub fn n(&self) -> usize {
        self.a.len()
    }

    pub fn m(&self) -> usize {
        self.b.len()
    }

    pub fn to_params(&self) -> saliency_forge::rbm::RbmParams {
        let (n, m) = (self.n(), self.m());
        saliency_forge::rbm::RbmParams::new(
            Array2::from_shape_fn((n, m), |(i, j)| self.w[i][j]),
            self.a.clone().into(),
            self.b.clone().into(),
        )
        .unwrap()
    }

    pub fn energy(&self, x: &[f64], h: &[f64]) -> f64 {
        let mut e = 0.0;
        for i in 0..self.n() {
            e -= self.a[i] * x[i];
        }
        for j in 0..self.m() {
            e -= self.b[j] * h[j];
        }
        for i in 0..self.n() {
            for j in 0..self.m() {
                e -= x[i] * self.w[i][j] * h[j];
            }
        }
        e
    }

    /// Every `(x, h, exp(-E))`.
    pub fn states(&self) -> Vec<(Vec<f64>, Vec<f64>, f64)> {
        let (n, m) = (self.n(), self.m());
        let mut out = Vec::new();
        for xs in 0..1usize << n {
            let x: Vec<f64> = (0..n).map(|k| ((xs >> k) & 1) as f64).collect();
            for hs in 0..1usize << m {
                let h: Vec<f64> = (0..m).map(|k| ((hs >> k) & 1) as f64).collect();
                let weight = (-self.energy(&x, &h)).exp();
                out.push((x.clone(), h, weight));
            }
        }
        out
    }

    pub fn partition(&self) -> f64 {
        self.states().iter().map(|s| s.2).sum()
    }

    /// `Z = Σ_x exp(aᵀx) Π_j (1 + exp(b_j + Σ_i x_i W_ij))`: the hidden
    /// units summed out analytically.
    pub fn partition_by_visible_marginal(&self) -> f64 {
        let (n, m) = (self.n(), self.m());
        let mut z = 0.0;
        for xs in 0..1usize << n {
            let x: Vec<f64> = (0..n).map(|k| ((xs >> k) & 1) as f64).collect();
            let mut term = (0..n).map(|i| self.a[i] * x[i]).sum::<f64>().exp();
            for j in 0..m {
                let act = self.b[j] + (0..n).map(|i| x[i] * self.w[i][j]).sum::<f64>();
                term *= 1.0 + act.exp();
            }
            z += term;
        }
        z
    }

    /// `P(h_j = 1 | x)` by summing the joint over hidden states.
    pub fn hidden_conditional(&self, x: &[f64]) -> Vec<f64> {
        let states: Vec<_> = self.states().into_iter().filter(|s| s.0 == x).collect();
        let total: f64 = states.iter().map(|s| s.2).sum();
        (0..self.m())
            .map(|j| states.iter().filter(|s| s.1[j] == 1.0).map(|s| s.2).sum::<f64>() / total)
            .collect()
    }

    /// `P(x_i = 1 | h)` by summing the joint over visible states.
    pub fn visible_conditional(&self, h: &[f64]) -> Vec<f64> {
        let states: Vec<_> = self.states().into_iter().filter(|s| s.1 == h).collect();
        let total: f64 = states.iter().map(|s| s.2).sum();
        (0..self.n())
            .map(|i| states.iter().filter(|s| s.0[i] == 1.0).map(|s| s.2).sum::<f64>() / total)
            .collect()
    }

    /// Mean log `P(x)` over binary rows.
    pub fn log_likelihood(&self, rows: &[Vec<f64>]) -> f64 {
        let states = self.states();
        let z: f64 = states.iter().map(|s| s.2).sum();
        rows.iter()
            .map(|r| (states.iter().filter(|s| &s.0 == r).map(|s| s.2).sum::<f64>() / z).ln())
            .sum::<f64>()
            / rows.len() as f64
    }
}

pub fn binary_states(n: usize) -> Vec<Vec<f64>> {
    (0..1usize << n)
        .map(|s| (0..n).map(|k| ((s >> k) & 1) as f64).collect())
        .collect()
}

pub fn cosine(a: &AttributionMap, b: &AttributionMap) -> f64 {
    let dot: f64 = a.scores().iter().zip(b.scores()).map(|(x, y)| x * y).sum();
    let na = a.scores().iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.scores().iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        dot / (na * nb)
    }
}

/// 10×10 grey image at 0.5 and its designated set: every 4th pixel in scan
/// order, 25 pixels in all.
pub fn designated_fixture() -> (ImageTensor, Array2<bool>) {
    let image = ImageTensor::new(Array3::from_elem((1, 10, 10), 0.5), 3).unwrap();
    let mask = Array2::from_shape_fn((10, 10), |(y, x)| (y * 10 + x) % 4 == 0);
    (image, mask)
}

/// Normalized map ranking the designated set on top (or at the bottom).
pub fn designated_map(mask: &Array2<bool>, aligned: bool) -> AttributionMap {
    let (h, w) = mask.dim();
    let n = (h * w) as f64;
    let scores = Array2::from_shape_fn((h, w), |(y, x)| {
        let p = (y * w + x) as f64;
        let inside = mask[[y, x]] == aligned;
        if inside {
            0.5 + 0.5 * (1.0 - p / n)
        } else {
            0.4 * (1.0 - p / n)
        }
    });
    saliency_forge::normalize_map(&AttributionMap::new(scores, "fixture").unwrap()).unwrap()
}

/// Scores an image by the fraction of segments that are not entirely at
/// `baseline`.
pub struct SegmentsRemaining {
    pub labels: Array2<usize>,
    pub baseline: f64,
}

impl Oracle for SegmentsRemaining {
    fn max_batch(&self) -> usize {
        16
    }

    fn predict(&self, images: &[ImageTensor], _target: usize) -> Result<Vec<f64>> {
        let k = self.labels.iter().max().unwrap() + 1;
        Ok(images
            .iter()
            .map(|im| {
                let mut intact = vec![false; k];
                for ((y, x), &l) in self.labels.indexed_iter() {
                    if (0..im.channels()).any(|c| im.data()[[c, y, x]] != self.baseline) {
                        intact[l] = true;
                    }
                }
                intact.iter().filter(|&&b| b).count() as f64 / k as f64
            })
            .collect())
    }
}

/// Whether every label's pixels form one 4-connected region (flood fill).
pub fn labels_are_connected(labels: &Array2<usize>) -> bool {
    let (h, w) = labels.dim();
    let k = labels.iter().max().map_or(0, |m| m + 1);
    let mut seen_label = vec![false; k];
    let mut visited = Array2::from_elem((h, w), false);
    for y in 0..h {
        for x in 0..w {
            if visited[[y, x]] {
                continue;
            }
            let l = labels[[y, x]];
            if seen_label[l] {
                return false; // a second region with the same label
            }
            seen_label[l] = true;
            let mut stack = vec![(y, x)];
            visited[[y, x]] = true;
            while let Some((cy, cx)) = stack.pop() {
                let mut push = |ny: usize, nx: usize| {
                    if !visited[[ny, nx]] && labels[[ny, nx]] == l {
                        visited[[ny, nx]] = true;
                        stack.push((ny, nx));
                    }
                };
                if cy > 0 {
                    push(cy - 1, cx);
                }
                if cy + 1 < h {
                    push(cy + 1, cx);
                }
                if cx > 0 {
                    push(cy, cx - 1);
                }
                if cx + 1 < w {
                    push(cy, cx + 1);
                }
            }
        }
    }
    true
}
