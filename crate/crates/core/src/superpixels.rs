//! SLIC superpixels.

use std::collections::VecDeque;
use std::path::Path;

use ndarray::Array2;

use crate::attribution::{AttributionMap, ImageTensor};
use crate::error::{Error, Result};
use crate::npy;

pub const DEFAULT_SEGMENTS: usize = 60;
pub const DEFAULT_COMPACTNESS: f64 = 10.0;
const ITERATIONS: usize = 10;

/// A label grid whose labels are exactly `0..n_segments`, each non-empty.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SuperpixelSegmentation {
    labels: Array2<usize>,
    n_segments: usize,
}

impl SuperpixelSegmentation {
    pub fn new(labels: Array2<usize>) -> Result<Self> {
        if labels.is_empty() {
            return Err(Error::validation("segmentation is empty"));
        }
        let n_segments = labels.iter().max().map_or(0, |&m| m + 1);
        let mut seen = vec![false; n_segments];
        for &l in &labels {
            seen[l] = true;
        }
        if let Some(missing) = seen.iter().position(|s| !s) {
            return Err(Error::validation(format!("segment label {missing} is unused")));
        }
        Ok(Self { labels, n_segments })
    }

    pub fn labels(&self) -> &Array2<usize> {
        &self.labels
    }

    pub fn n_segments(&self) -> usize {
        self.n_segments
    }

    pub fn shape(&self) -> (usize, usize) {
        self.labels.dim()
    }

    /// Pixel count per segment.
    pub fn sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.n_segments];
        for &l in &self.labels {
            sizes[l] += 1;
        }
        sizes
    }

    /// Writes the label grid as an `<i8` NPY array.
    pub fn save(&self, path: &Path) -> Result<()> {
        let (h, w) = self.shape();
        let data: Vec<i64> = self.labels.iter().map(|&l| l as i64).collect();
        npy::write_i64(path, &[h, w], &data)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let arr = npy::read(path)?;
        let [h, w] = arr.shape[..] else {
            return Err(Error::parse(path, format!("labels must be 2-D, got {:?}", arr.shape)));
        };
        if arr.data.iter().any(|&v| v < 0.0 || v.fract() != 0.0) {
            return Err(Error::parse(path, "labels must be non-negative integers"));
        }
        let labels = Array2::from_shape_vec((h, w), arr.data.iter().map(|&v| v as usize).collect())
            .expect("shape checked by decoder");
        Self::new(labels)
    }
}

fn srgb_to_linear(c: f64) -> f64 {
    if c <= 0.04045 {
        c / 12.92
    } else {
        ((c + 0.055) / 1.055).powf(2.4)
    }
}

fn lab_f(t: f64) -> f64 {
    if t > 0.008856 {
        t.cbrt()
    } else {
        7.787 * t + 16.0 / 116.0
    }
}

/// CIELAB (D65) from sRGB in `[0, 1]`.
pub fn rgb_to_lab(rgb: [f64; 3]) -> [f64; 3] {
    let [r, g, b] = rgb.map(srgb_to_linear);
    let x = (0.412453 * r + 0.357580 * g + 0.180423 * b) / 0.950456;
    let y = 0.212671 * r + 0.715160 * g + 0.072169 * b;
    let z = (0.019334 * r + 0.119193 * g + 0.950227 * b) / 1.088754;
    let (fx, fy, fz) = (lab_f(x), lab_f(y), lab_f(z));
    [116.0 * fy - 16.0, 500.0 * (fx - fy), 200.0 * (fy - fz)]
}

/// Per-pixel colour features: Lab for RGB, raw intensity for grey.
fn color_features(image: &ImageTensor) -> Vec<Vec<f64>> {
    let (h, w) = image.spatial_shape();
    let d = image.data();
    let mut out = Vec::with_capacity(h * w);
    for y in 0..h {
        for x in 0..w {
            if image.channels() == 3 {
                out.push(rgb_to_lab([d[[0, y, x]], d[[1, y, x]], d[[2, y, x]]]).to_vec());
            } else {
                out.push(vec![d[[0, y, x]]]);
            }
        }
    }
    out
}

#[derive(Debug, Clone)]
struct Centre {
    y: f64,
    x: f64,
    color: Vec<f64>,
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(p, q)| (p - q) * (p - q)).sum()
}

fn gradient(features: &[Vec<f64>], h: usize, w: usize, y: usize, x: usize) -> f64 {
    let at = |yy: usize, xx: usize| &features[yy * w + xx];
    let (y0, y1) = (y.saturating_sub(1), (y + 1).min(h - 1));
    let (x0, x1) = (x.saturating_sub(1), (x + 1).min(w - 1));
    sq_dist(at(y, x1), at(y, x0)) + sq_dist(at(y1, x), at(y0, x))
}

fn initial_centres(features: &[Vec<f64>], h: usize, w: usize, k: usize) -> Vec<Centre> {
    // The grid never holds more than k centres.
    let ny = ((k as f64 * h as f64 / w as f64).sqrt().round() as usize).clamp(1, h.min(k));
    let nx = (k / ny).clamp(1, w);
    let mut centres = Vec::with_capacity(ny * nx);
    for i in 0..ny {
        for j in 0..nx {
            let cy = (i as f64 + 0.5) * h as f64 / ny as f64 - 0.5;
            let cx = (j as f64 + 0.5) * w as f64 / nx as f64 - 0.5;
            let (py, px) = (cy.round() as usize, cx.round() as usize);
            // Move off edges: to the lowest-gradient pixel in the 3×3
            // neighbourhood, if strictly lower than the grid pixel.
            let mut best = (gradient(features, h, w, py, px), py, px);
            for yy in py.saturating_sub(1)..=(py + 1).min(h - 1) {
                for xx in px.saturating_sub(1)..=(px + 1).min(w - 1) {
                    let g = gradient(features, h, w, yy, xx);
                    if g < best.0 {
                        best = (g, yy, xx);
                    }
                }
            }
            let (y, x) = if (best.1, best.2) == (py, px) {
                (cy, cx)
            } else {
                (best.1 as f64, best.2 as f64)
            };
            let color = features[best.1 * w + best.2].clone();
            centres.push(Centre { y, x, color });
        }
    }
    centres
}

/// SLIC: k-means in joint colour + position space, distance
/// `sqrt(dc² + (dxy / S)² · compactness²)` with `S = sqrt(H·W / k)`, fixed
/// 10 iterations, then fragments merged so every label is 4-connected.
/// The number of segments returned may differ from `k`.
pub fn slic(image: &ImageTensor, k: usize, compactness: f64) -> Result<SuperpixelSegmentation> {
    let (h, w) = image.spatial_shape();
    if k == 0 || k > h * w {
        return Err(Error::validation(format!("k = {k} outside [1, {}]", h * w)));
    }
    if !(compactness.is_finite() && compactness > 0.0) {
        return Err(Error::validation("compactness must be positive"));
    }
    let features = color_features(image);
    let step = ((h * w) as f64 / k as f64).sqrt();
    let spatial = (compactness / step).powi(2);
    let window = 2.0 * step;
    let mut centres = initial_centres(&features, h, w, k);
    let mut assign = vec![usize::MAX; h * w];
    let mut best = vec![f64::INFINITY; h * w];

    for _ in 0..ITERATIONS {
        assign.fill(usize::MAX);
        best.fill(f64::INFINITY);
        for (ci, c) in centres.iter().enumerate() {
            let y0 = (c.y - window).floor().max(0.0) as usize;
            let y1 = ((c.y + window).ceil() as usize).min(h - 1);
            let x0 = (c.x - window).floor().max(0.0) as usize;
            let x1 = ((c.x + window).ceil() as usize).min(w - 1);
            for y in y0..=y1 {
                for x in x0..=x1 {
                    let p = y * w + x;
                    let d = sq_dist(&features[p], &c.color)
                        + ((y as f64 - c.y).powi(2) + (x as f64 - c.x).powi(2)) * spatial;
                    if d < best[p] {
                        best[p] = d;
                        assign[p] = ci;
                    }
                }
            }
        }
        // Pixels outside every window fall back to the global nearest centre.
        for p in 0..h * w {
            if assign[p] == usize::MAX {
                let (y, x) = ((p / w) as f64, (p % w) as f64);
                for (ci, c) in centres.iter().enumerate() {
                    let d = sq_dist(&features[p], &c.color) + ((y - c.y).powi(2) + (x - c.x).powi(2)) * spatial;
                    if d < best[p] {
                        best[p] = d;
                        assign[p] = ci;
                    }
                }
            }
        }

        let dims = features[0].len();
        let mut sums = vec![(0.0, 0.0, vec![0.0; dims], 0usize); centres.len()];
        for (p, &ci) in assign.iter().enumerate() {
            let s = &mut sums[ci];
            s.0 += (p / w) as f64;
            s.1 += (p % w) as f64;
            for (acc, v) in s.2.iter_mut().zip(&features[p]) {
                *acc += v;
            }
            s.3 += 1;
        }
        for (c, (sy, sx, sc, n)) in centres.iter_mut().zip(sums) {
            if n > 0 {
                let n = n as f64;
                c.y = sy / n;
                c.x = sx / n;
                c.color = sc.into_iter().map(|v| v / n).collect();
            }
        }
    }

    let labels = enforce_connectivity(&assign, h, w);
    SuperpixelSegmentation::new(Array2::from_shape_vec((h, w), labels).expect("h*w labels"))
}

fn neighbours(p: usize, h: usize, w: usize) -> impl Iterator<Item = usize> {
    let (y, x) = (p / w, p % w);
    [
        (y > 0).then(|| p - w),
        (x > 0).then(|| p - 1),
        (x + 1 < w).then(|| p + 1),
        (y + 1 < h).then(|| p + w),
    ]
    .into_iter()
    .flatten()
}

/// 4-connected components of equal labels, numbered in scan order.
fn components(labels: &[usize], h: usize, w: usize) -> (Vec<usize>, Vec<usize>) {
    let mut comp = vec![usize::MAX; h * w];
    let mut sizes = Vec::new();
    let mut queue = VecDeque::new();
    for start in 0..h * w {
        if comp[start] != usize::MAX {
            continue;
        }
        let id = sizes.len();
        comp[start] = id;
        queue.push_back(start);
        let mut size = 0;
        while let Some(p) = queue.pop_front() {
            size += 1;
            for q in neighbours(p, h, w) {
                if comp[q] == usize::MAX && labels[q] == labels[start] {
                    comp[q] = id;
                    queue.push_back(q);
                }
            }
        }
        sizes.push(size);
    }
    (comp, sizes)
}

/// Keeps the largest fragment of each label; every other fragment is
/// merged, smallest first, into its largest neighbouring region. Output
/// labels are renumbered in scan order.
fn enforce_connectivity(assign: &[usize], h: usize, w: usize) -> Vec<usize> {
    let (comp, mut sizes) = components(assign, h, w);
    let n = sizes.len();
    let comp_label: Vec<usize> = {
        let mut l = vec![0; n];
        for (p, &c) in comp.iter().enumerate() {
            l[c] = assign[p];
        }
        l
    };
    let mut keeper: Vec<Option<usize>> = vec![None; assign.iter().max().map_or(0, |m| m + 1)];
    for c in 0..n {
        let slot = &mut keeper[comp_label[c]];
        if slot.map_or(true, |k| sizes[c] > sizes[k]) {
            *slot = Some(c);
        }
    }
    let mut orphan: Vec<bool> = (0..n).map(|c| keeper[comp_label[c]] != Some(c)).collect();

    let mut parent: Vec<usize> = (0..n).collect();
    fn find(parent: &mut [usize], mut c: usize) -> usize {
        while parent[c] != c {
            parent[c] = parent[parent[c]];
            c = parent[c];
        }
        c
    }

    while let Some(victim) = (0..n)
        .filter(|&c| orphan[c] && parent[c] == c)
        .min_by_key(|&c| (sizes[c], c))
    {
        let mut target: Option<usize> = None;
        for p in 0..h * w {
            if find(&mut parent, comp[p]) != victim {
                continue;
            }
            for q in neighbours(p, h, w) {
                let r = find(&mut parent, comp[q]);
                if r != victim && target.map_or(true, |t| (sizes[r], std::cmp::Reverse(r)) > (sizes[t], std::cmp::Reverse(t))) {
                    target = Some(r);
                }
            }
        }
        let Some(t) = target else {
            orphan[victim] = false;
            continue;
        };
        parent[victim] = t;
        sizes[t] += sizes[victim];
        orphan[victim] = false;
    }

    let mut relabel = vec![usize::MAX; n];
    let mut next = 0;
    comp.iter()
        .map(|&c| {
            let r = find(&mut parent, c);
            if relabel[r] == usize::MAX {
                relabel[r] = next;
                next += 1;
            }
            relabel[r]
        })
        .collect()
}

/// Mean attribution inside each segment.
pub fn segment_relevance(seg: &SuperpixelSegmentation, map: &AttributionMap) -> Result<Vec<f64>> {
    if seg.shape() != map.shape() {
        return Err(Error::validation(format!(
            "segmentation {:?} does not match map {:?}",
            seg.shape(),
            map.shape()
        )));
    }
    let mut sums = vec![0.0; seg.n_segments()];
    for (&l, &v) in seg.labels().iter().zip(map.scores()) {
        sums[l] += v;
    }
    Ok(sums
        .into_iter()
        .zip(seg.sizes())
        .map(|(s, n)| s / n as f64)
        .collect())
}
