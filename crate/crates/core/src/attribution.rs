//! Images, attribution maps and the normalization pipeline shared by every
//! other module.

use ndarray::{Array2, Array3, Axis};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Source tag carried by generated noise maps.
pub const NOISE_SOURCE: &str = "noise";
/// Source tag of the input image when it joins an ensemble as a baseline map.
pub const ORIGINAL_IMAGE_SOURCE: &str = "original_image";

/// Seed for every stochastic operation. Identical seeds give bit-identical output.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct RngSeed(pub u64);

impl RngSeed {
    pub fn rng(self) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(self.0)
    }

    /// Independent child seed for stream `stream` (splitmix64 finalizer).
    pub fn derive(self, stream: u64) -> RngSeed {
        let mut z = self
            .0
            .wrapping_add(0x9E37_79B9_7F4A_7C15_u64.wrapping_mul(stream.wrapping_add(1)));
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        RngSeed(z ^ (z >> 31))
    }
}

impl From<u64> for RngSeed {
    fn from(seed: u64) -> Self {
        RngSeed(seed)
    }
}

/// A C×H×W image with values in `[0, 1]` and its class label.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageTensor {
    data: Array3<f64>,
    label: usize,
}

impl ImageTensor {
    pub fn new(data: Array3<f64>, label: usize) -> Result<Self> {
        let (c, h, w) = data.dim();
        if c != 1 && c != 3 {
            return Err(Error::validation(format!(
                "image must have 1 or 3 channels, got {c}"
            )));
        }
        if h == 0 || w == 0 {
            return Err(Error::validation(format!("image has empty extent {h}x{w}")));
        }
        if let Some(((ci, y, x), v)) = data
            .indexed_iter()
            .find(|(_, v)| !v.is_finite() || **v < 0.0 || **v > 1.0)
        {
            return Err(Error::validation(format!(
                "image value {v} at ({ci}, {y}, {x}) is outside [0, 1]"
            )));
        }
        Ok(Self { data, label })
    }

    pub fn data(&self) -> &Array3<f64> {
        &self.data
    }

    pub fn label(&self) -> usize {
        self.label
    }

    pub fn channels(&self) -> usize {
        self.data.dim().0
    }

    pub fn height(&self) -> usize {
        self.data.dim().1
    }

    pub fn width(&self) -> usize {
        self.data.dim().2
    }

    pub fn spatial_shape(&self) -> (usize, usize) {
        (self.height(), self.width())
    }

    /// The image itself as a (channel-reduced, normalized) baseline map.
    pub fn to_attribution_map(&self) -> Result<AttributionMap> {
        let mut map = reduce_channels(&self.data)?;
        map.source = ORIGINAL_IMAGE_SOURCE.to_string();
        normalize_map(&map)
    }
}

/// One explainer's H×W importance grid.
#[derive(Debug, Clone, PartialEq)]
pub struct AttributionMap {
    scores: Array2<f64>,
    source: String,
    normalized: bool,
}

impl AttributionMap {
    /// Wraps raw scores. Fails on an empty grid or a non-finite value.
    pub fn new(scores: Array2<f64>, source: impl Into<String>) -> Result<Self> {
        check_scores(&scores)?;
        Ok(Self {
            scores,
            source: source.into(),
            normalized: false,
        })
    }

    /// Wraps scores that claim to be normalized; the claim is checked.
    pub fn new_normalized(scores: Array2<f64>, source: impl Into<String>) -> Result<Self> {
        check_scores(&scores)?;
        if !is_normalized(&scores) {
            return Err(Error::validation(
                "scores flagged as normalized must span exactly [0, 1] or be all zero",
            ));
        }
        Ok(Self {
            scores,
            source: source.into(),
            normalized: true,
        })
    }

    pub fn scores(&self) -> &Array2<f64> {
        &self.scores
    }

    pub fn source(&self) -> &str {
        &self.source
    }

    pub fn is_normalized(&self) -> bool {
        self.normalized
    }

    pub fn shape(&self) -> (usize, usize) {
        self.scores.dim()
    }

    pub fn len(&self) -> usize {
        self.scores.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scores.is_empty()
    }

    pub fn with_source(mut self, source: impl Into<String>) -> Self {
        self.source = source.into();
        self
    }

    pub fn into_scores(self) -> Array2<f64> {
        self.scores
    }
}

fn check_scores(scores: &Array2<f64>) -> Result<()> {
    if scores.is_empty() {
        return Err(Error::validation("attribution map is empty"));
    }
    if let Some(((y, x), v)) = scores.indexed_iter().find(|(_, v)| !v.is_finite()) {
        return Err(Error::validation(format!(
            "non-finite attribution value {v} at ({y}, {x})"
        )));
    }
    Ok(())
}

fn is_normalized(scores: &Array2<f64>) -> bool {
    let (lo, hi) = min_max(scores.iter().copied());
    (lo == 0.0 && hi == 1.0) || (lo == 0.0 && hi == 0.0)
}

pub(crate) fn min_max(values: impl Iterator<Item = f64>) -> (f64, f64) {
    values.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| {
        (lo.min(v), hi.max(v))
    })
}

/// N aligned attribution maps for one image.
#[derive(Debug, Clone, PartialEq)]
pub struct AttributionStack {
    maps: Vec<AttributionMap>,
    image: ImageTensor,
}

impl AttributionStack {
    pub fn new(maps: Vec<AttributionMap>, image: ImageTensor) -> Result<Self> {
        if maps.is_empty() {
            return Err(Error::validation("attribution stack has no maps"));
        }
        let expected = image.spatial_shape();
        for (i, m) in maps.iter().enumerate() {
            if m.shape() != expected {
                return Err(Error::validation(format!(
                    "map {i} ({}) has shape {:?}, image is {:?}",
                    m.source(),
                    m.shape(),
                    expected
                )));
            }
        }
        Ok(Self { maps, image })
    }

    pub fn maps(&self) -> &[AttributionMap] {
        &self.maps
    }

    pub fn image(&self) -> &ImageTensor {
        &self.image
    }

    pub fn len(&self) -> usize {
        self.maps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.maps.is_empty()
    }

    pub fn shape(&self) -> (usize, usize) {
        self.image.spatial_shape()
    }

    /// Every map passed through [`normalize_map`].
    pub fn normalized(&self) -> Result<Self> {
        let maps = self.maps.iter().map(normalize_map).collect::<Result<_>>()?;
        Ok(Self {
            maps,
            image: self.image.clone(),
        })
    }

    /// Appends maps (e.g. noise baselines); shapes are re-checked.
    pub fn with_extra_maps(&self, extra: impl IntoIterator<Item = AttributionMap>) -> Result<Self> {
        let mut maps = self.maps.clone();
        maps.extend(extra);
        Self::new(maps, self.image.clone())
    }

    pub fn into_parts(self) -> (Vec<AttributionMap>, ImageTensor) {
        (self.maps, self.image)
    }
}

/// Clips negative scores to zero, then min-max scales into `[0, 1]`.
///
/// A map that is constant after clipping becomes all zeros. Idempotent.
pub fn normalize_map(map: &AttributionMap) -> Result<AttributionMap> {
    check_scores(&map.scores)?;
    let clipped = map.scores.mapv(|v| if v <= 0.0 { 0.0 } else { v });
    let (lo, hi) = min_max(clipped.iter().copied());
    let scores = if hi > lo {
        let range = hi - lo;
        clipped.mapv(|v| (v - lo) / range)
    } else {
        Array2::zeros(clipped.dim())
    };
    Ok(AttributionMap {
        scores,
        source: map.source.clone(),
        normalized: true,
    })
}

/// Per-pixel channel mean of a C×H×W attribution.
pub fn reduce_channels(attr: &Array3<f64>) -> Result<AttributionMap> {
    if attr.is_empty() {
        return Err(Error::validation(format!(
            "cannot reduce zero-size attribution of shape {:?}",
            attr.shape()
        )));
    }
    let mean = attr
        .mean_axis(Axis(0))
        .ok_or_else(|| Error::validation("attribution has no channels"))?;
    AttributionMap::new(mean, "reduced")
}

/// An H×W map of i.i.d. standard-normal samples, tagged `"noise"`.
pub fn make_noise_map(height: usize, width: usize, seed: RngSeed) -> Result<AttributionMap> {
    if height == 0 || width == 0 {
        return Err(Error::validation(format!(
            "noise map shape {height}x{width} must be non-empty"
        )));
    }
    let mut rng = seed.rng();
    let scores = Array2::from_shape_simple_fn((height, width), || StandardNormal.sample(&mut rng));
    AttributionMap::new(scores, NOISE_SOURCE)
}

/// `count` noise maps, each from its own derived seed.
pub fn make_noise_maps(
    height: usize,
    width: usize,
    count: usize,
    seed: RngSeed,
) -> Result<Vec<AttributionMap>> {
    (0..count)
        .map(|i| make_noise_map(height, width, seed.derive(i as u64)))
        .collect()
}
