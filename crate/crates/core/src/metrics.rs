//! Perturbation metrics: deletion and insertion AUC over a pixel schedule,
//! and IROF over SLIC superpixels.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use ndarray::Array3;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::attribution::{AttributionMap, ImageTensor, RngSeed};
use crate::error::{Error, Result};
use crate::oracle::{score_probabilities, Oracle};
use crate::superpixels::{segment_relevance, slic, DEFAULT_COMPACTNESS, DEFAULT_SEGMENTS};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MetricKind {
    Insertion,
    Deletion,
    Irof,
}

impl MetricKind {
    pub const ALL: [MetricKind; 3] = [MetricKind::Insertion, MetricKind::Deletion, MetricKind::Irof];

    pub fn name(self) -> &'static str {
        match self {
            MetricKind::Insertion => "insertion",
            MetricKind::Deletion => "deletion",
            MetricKind::Irof => "irof",
        }
    }

    /// Column heading in reports.
    pub fn label(self) -> &'static str {
        match self {
            MetricKind::Insertion => "IAUC (higher is better)",
            MetricKind::Deletion => "DAUC (lower is better)",
            MetricKind::Irof => "IROF (higher is better)",
        }
    }

    /// Whether `a` is strictly better than `b` under this metric.
    pub fn better(self, a: f64, b: f64) -> bool {
        match self {
            MetricKind::Deletion => a < b,
            MetricKind::Insertion | MetricKind::Irof => a > b,
        }
    }
}

impl std::str::FromStr for MetricKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "insertion" => Ok(MetricKind::Insertion),
            "deletion" => Ok(MetricKind::Deletion),
            "irof" => Ok(MetricKind::Irof),
            other => Err(Error::validation(format!(
                "unknown metric '{other}' (expected insertion, deletion or irof)"
            ))),
        }
    }
}

/// What a removed pixel is replaced with.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Baseline {
    #[default]
    Black,
    /// Per-channel dataset mean (see [`MetricSpec::dataset_mean`]).
    DatasetMean,
    /// Seeded i.i.d. uniform values in `[0, 1)`.
    UniformNoise,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScoreMode {
    Probability,
    /// Scores divided by the unperturbed image's score, clamped to `[0, 1]`.
    #[default]
    NormalizedProbability,
}

impl std::str::FromStr for Baseline {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "black" => Ok(Baseline::Black),
            "dataset_mean" => Ok(Baseline::DatasetMean),
            "uniform_noise" => Ok(Baseline::UniformNoise),
            other => Err(Error::validation(format!(
                "unknown baseline '{other}' (expected black, dataset_mean or uniform_noise)"
            ))),
        }
    }
}

impl std::str::FromStr for ScoreMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "probability" => Ok(ScoreMode::Probability),
            "normalized_probability" => Ok(ScoreMode::NormalizedProbability),
            other => Err(Error::validation(format!(
                "unknown score mode '{other}' (expected probability or normalized_probability)"
            ))),
        }
    }
}

fn default_step() -> f64 {
    0.01
}
fn default_segments() -> usize {
    DEFAULT_SEGMENTS
}
fn default_compactness() -> f64 {
    DEFAULT_COMPACTNESS
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricSpec {
    pub kind: MetricKind,
    /// Fraction of pixels perturbed per step (insertion and deletion).
    #[serde(default = "default_step")]
    pub step_fraction: f64,
    #[serde(default)]
    pub baseline: Baseline,
    #[serde(default = "default_segments")]
    pub irof_segments: usize,
    #[serde(default = "default_compactness")]
    pub irof_compactness: f64,
    #[serde(default)]
    pub score_mode: ScoreMode,
    /// Per-channel fill for [`Baseline::DatasetMean`]. When absent, the
    /// batch evaluator computes it from the dataset and single-image calls
    /// use the image's own channel means.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dataset_mean: Option<Vec<f64>>,
    /// Seed for [`Baseline::UniformNoise`].
    #[serde(default)]
    pub seed: RngSeed,
}

impl MetricSpec {
    pub fn new(kind: MetricKind) -> Self {
        Self {
            kind,
            step_fraction: default_step(),
            baseline: Baseline::Black,
            irof_segments: DEFAULT_SEGMENTS,
            irof_compactness: DEFAULT_COMPACTNESS,
            score_mode: ScoreMode::NormalizedProbability,
            dataset_mean: None,
            seed: RngSeed(0),
        }
    }

    pub fn with_step(mut self, step_fraction: f64) -> Self {
        self.step_fraction = step_fraction;
        self
    }

    pub fn with_score_mode(mut self, mode: ScoreMode) -> Self {
        self.score_mode = mode;
        self
    }

    pub fn with_segments(mut self, segments: usize) -> Self {
        self.irof_segments = segments;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.step_fraction > 0.0 && self.step_fraction <= 1.0) {
            return Err(Error::validation(format!(
                "step_fraction {} outside (0, 1]",
                self.step_fraction
            )));
        }
        if self.irof_segments == 0 {
            return Err(Error::validation("irof_segments must be at least 1"));
        }
        if !(self.irof_compactness.is_finite() && self.irof_compactness > 0.0) {
            return Err(Error::validation("irof_compactness must be positive"));
        }
        if let Some(m) = &self.dataset_mean {
            if m.iter().any(|v| !(0.0..=1.0).contains(v)) {
                return Err(Error::validation("dataset_mean values must lie in [0, 1]"));
            }
        }
        Ok(())
    }

    fn canvas(&self, image: &ImageTensor) -> Result<Array3<f64>> {
        let dim = image.data().dim();
        match self.baseline {
            Baseline::Black => Ok(Array3::zeros(dim)),
            Baseline::DatasetMean => {
                let means = match &self.dataset_mean {
                    Some(m) => m.clone(),
                    None => channel_means(image),
                };
                if means.len() != dim.0 {
                    return Err(Error::validation(format!(
                        "dataset_mean has {} channels, image has {}",
                        means.len(),
                        dim.0
                    )));
                }
                Ok(Array3::from_shape_fn(dim, |(c, _, _)| means[c]))
            }
            Baseline::UniformNoise => {
                let mut rng = self.seed.rng();
                Ok(Array3::from_shape_simple_fn(dim, || rng.gen::<f64>()))
            }
        }
    }
}

fn channel_means(image: &ImageTensor) -> Vec<f64> {
    let (_, h, w) = image.data().dim();
    image
        .data()
        .outer_iter()
        .map(|ch| ch.sum() / (h * w) as f64)
        .collect()
}

/// Per-channel mean over a dataset, independent of image order.
pub fn dataset_channel_mean(images: &[&ImageTensor]) -> Result<Vec<f64>> {
    let first = images.first().ok_or_else(|| Error::validation("empty dataset"))?;
    let channels = first.channels();
    let mut per_channel: Vec<Vec<f64>> = vec![Vec::with_capacity(images.len()); channels];
    for im in images {
        if im.channels() != channels {
            return Err(Error::validation("dataset mixes channel counts"));
        }
        for (c, m) in channel_means(im).into_iter().enumerate() {
            per_channel[c].push(m);
        }
    }
    Ok(per_channel
        .into_iter()
        .map(|mut v| {
            v.sort_by(f64::total_cmp);
            v.iter().sum::<f64>() / v.len() as f64
        })
        .collect())
}

/// Score against fraction perturbed, with its trapezoidal area.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PerturbationCurve {
    points: Vec<(f64, f64)>,
    auc: f64,
}

impl PerturbationCurve {
    /// Fractions must increase strictly from 0 to 1; scores must be finite.
    pub fn from_points(points: Vec<(f64, f64)>) -> Result<Self> {
        if points.len() < 2 {
            return Err(Error::validation("a curve needs at least two points"));
        }
        if points[0].0 != 0.0 || points[points.len() - 1].0 != 1.0 {
            return Err(Error::validation("curve fractions must start at 0 and end at 1"));
        }
        if points.windows(2).any(|p| p[1].0 <= p[0].0) {
            return Err(Error::validation("curve fractions must increase strictly"));
        }
        if points.iter().any(|p| !p.1.is_finite()) {
            return Err(Error::validation("curve scores must be finite"));
        }
        let auc = trapezoid(&points);
        Ok(Self { points, auc })
    }

    pub fn points(&self) -> &[(f64, f64)] {
        &self.points
    }

    pub fn auc(&self) -> f64 {
        self.auc
    }

    /// `1 − AUC`.
    pub fn aoc(&self) -> f64 {
        1.0 - self.auc
    }
}

pub fn trapezoid(points: &[(f64, f64)]) -> f64 {
    points
        .windows(2)
        .map(|p| (p[1].0 - p[0].0) * (p[0].1 + p[1].1) / 2.0)
        .sum()
}

/// Pixel indices by descending attribution, ties by ascending index.
pub fn pixel_order(map: &AttributionMap) -> Vec<usize> {
    let values: Vec<f64> = map.scores().iter().copied().collect();
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&i, &j| values[j].total_cmp(&values[i]).then(i.cmp(&j)));
    order
}

/// Cumulative pixel counts per stage: `round(j · step · HW)`, deduplicated,
/// from 0 up to and including `HW`.
fn stage_counts(total: usize, step: f64) -> Vec<usize> {
    let mut counts = vec![0];
    let mut j = 1usize;
    loop {
        let c = ((j as f64 * step * total as f64).round() as usize).min(total);
        if c > *counts.last().expect("non-empty") {
            counts.push(c);
        }
        if c >= total {
            break;
        }
        j += 1;
    }
    counts
}

fn check_inputs(image: &ImageTensor, map: &AttributionMap, spec: &MetricSpec) -> Result<()> {
    spec.validate()?;
    if !map.is_normalized() {
        return Err(Error::validation("metrics expect a normalized map"));
    }
    if map.shape() != image.spatial_shape() {
        return Err(Error::validation(format!(
            "map {:?} does not match image {:?}",
            map.shape(),
            image.spatial_shape()
        )));
    }
    Ok(())
}

/// Scores `n` stages built on demand, at most `max_batch` images alive at once.
fn score_stages(
    oracle: &dyn Oracle,
    n: usize,
    target: usize,
    build: impl Fn(usize) -> Result<ImageTensor>,
) -> Result<Vec<f64>> {
    let chunk = oracle.max_batch().max(1);
    let mut scores = Vec::with_capacity(n);
    let mut start = 0;
    while start < n {
        let end = (start + chunk).min(n);
        let images = (start..end).map(&build).collect::<Result<Vec<_>>>()?;
        scores.extend(score_probabilities(oracle, &images, target)?);
        start = end;
    }
    Ok(scores)
}

fn apply_score_mode(raw: Vec<f64>, base: f64, mode: ScoreMode) -> Vec<f64> {
    match mode {
        ScoreMode::Probability => raw,
        // With a zero reference the ratio is undefined; fall back to raw scores.
        ScoreMode::NormalizedProbability if base <= 0.0 => raw,
        ScoreMode::NormalizedProbability => raw.into_iter().map(|s| (s / base).clamp(0.0, 1.0)).collect(),
    }
}

fn pixel_curve(
    image: &ImageTensor,
    map: &AttributionMap,
    oracle: &dyn Oracle,
    spec: &MetricSpec,
    deleting: bool,
) -> Result<PerturbationCurve> {
    check_inputs(image, map, spec)?;
    let (h, w) = image.spatial_shape();
    let total = h * w;
    let order = pixel_order(map);
    let counts = stage_counts(total, spec.step_fraction);
    let canvas = spec.canvas(image)?;
    let original = image.data();
    let (from, to) = if deleting { (original, &canvas) } else { (&canvas, original) };

    let build = |stage: usize| {
        let mut data = from.clone();
        for &p in &order[..counts[stage]] {
            let (y, x) = (p / w, p % w);
            for c in 0..data.dim().0 {
                data[[c, y, x]] = to[[c, y, x]];
            }
        }
        ImageTensor::new(data, image.label())
    };
    let raw = score_stages(oracle, counts.len(), image.label(), build)?;
    // The unperturbed image is the first deletion stage and the last insertion stage.
    let base = if deleting { raw[0] } else { raw[raw.len() - 1] };
    let scores = apply_score_mode(raw, base, spec.score_mode);
    let points = counts
        .iter()
        .zip(scores)
        .map(|(&c, s)| (c as f64 / total as f64, s))
        .collect();
    PerturbationCurve::from_points(points)
}

/// Removes pixels in descending attribution order. Lower AUC is better.
pub fn deletion_curve(
    image: &ImageTensor,
    map: &AttributionMap,
    oracle: &dyn Oracle,
    spec: &MetricSpec,
) -> Result<PerturbationCurve> {
    pixel_curve(image, map, oracle, spec, true)
}

/// Inserts pixels into the baseline canvas in descending attribution order.
/// Higher AUC is better.
pub fn insertion_curve(
    image: &ImageTensor,
    map: &AttributionMap,
    oracle: &dyn Oracle,
    spec: &MetricSpec,
) -> Result<PerturbationCurve> {
    pixel_curve(image, map, oracle, spec, false)
}

/// IROF: removes whole superpixels by descending mean relevance, one per
/// step. The score is the area over the curve.
pub fn irof_curve(
    image: &ImageTensor,
    map: &AttributionMap,
    oracle: &dyn Oracle,
    spec: &MetricSpec,
) -> Result<PerturbationCurve> {
    check_inputs(image, map, spec)?;
    let seg = slic(image, spec.irof_segments.min(image.height() * image.width()), spec.irof_compactness)?;
    let relevance = segment_relevance(&seg, map)?;
    let k = seg.n_segments();
    let mut order: Vec<usize> = (0..k).collect();
    order.sort_by(|&i, &j| relevance[j].total_cmp(&relevance[i]).then(i.cmp(&j)));
    let mut rank = vec![0; k];
    for (r, &s) in order.iter().enumerate() {
        rank[s] = r;
    }
    let canvas = spec.canvas(image)?;
    let labels = seg.labels();

    let build = |stage: usize| {
        let mut data = image.data().clone();
        for ((y, x), &l) in labels.indexed_iter() {
            if rank[l] < stage {
                for c in 0..data.dim().0 {
                    data[[c, y, x]] = canvas[[c, y, x]];
                }
            }
        }
        ImageTensor::new(data, image.label())
    };
    let raw = score_stages(oracle, k + 1, image.label(), build)?;
    let base = raw[0];
    let scores = apply_score_mode(raw, base, spec.score_mode);
    let points = scores
        .into_iter()
        .enumerate()
        .map(|(j, s)| (j as f64 / k as f64, s))
        .collect();
    PerturbationCurve::from_points(points)
}

pub fn irof_score(image: &ImageTensor, map: &AttributionMap, oracle: &dyn Oracle, spec: &MetricSpec) -> Result<f64> {
    Ok(irof_curve(image, map, oracle, spec)?.aoc())
}

/// One metric evaluation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricOutcome {
    pub kind: MetricKind,
    /// AUC for insertion and deletion, AOC for IROF.
    pub value: f64,
    pub curve: PerturbationCurve,
}

pub fn evaluate_metric(
    image: &ImageTensor,
    map: &AttributionMap,
    oracle: &dyn Oracle,
    spec: &MetricSpec,
) -> Result<MetricOutcome> {
    let (curve, value) = match spec.kind {
        MetricKind::Deletion => {
            let c = deletion_curve(image, map, oracle, spec)?;
            let v = c.auc();
            (c, v)
        }
        MetricKind::Insertion => {
            let c = insertion_curve(image, map, oracle, spec)?;
            let v = c.auc();
            (c, v)
        }
        MetricKind::Irof => {
            let c = irof_curve(image, map, oracle, spec)?;
            let v = c.aoc();
            (c, v)
        }
    };
    Ok(MetricOutcome {
        kind: spec.kind,
        value,
        curve,
    })
}

/// One image and the maps to score on it, keyed by method name.
#[derive(Debug, Clone)]
pub struct EvaluationCase {
    pub id: String,
    pub image: ImageTensor,
    pub maps: Vec<(String, AttributionMap)>,
}

/// Result of one (image, method, metric) evaluation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaseResult {
    pub image: String,
    pub method: String,
    pub metric: MetricKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub value: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub curve: Option<PerturbationCurve>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    /// Set when the failure was the oracle being unreachable.
    #[serde(default)]
    pub oracle_unavailable: bool,
}

/// Evaluates every map of one case under every spec. Failures are recorded,
/// not raised.
pub fn evaluate_case(case: &EvaluationCase, oracle: &dyn Oracle, specs: &[MetricSpec]) -> Vec<CaseResult> {
    let mut out = Vec::new();
    for (method, map) in &case.maps {
        for spec in specs {
            let r = evaluate_metric(&case.image, map, oracle, spec);
            out.push(match r {
                Ok(o) => CaseResult {
                    image: case.id.clone(),
                    method: method.clone(),
                    metric: spec.kind,
                    value: Some(o.value),
                    curve: Some(o.curve),
                    error: None,
                    oracle_unavailable: false,
                },
                Err(e) => CaseResult {
                    image: case.id.clone(),
                    method: method.clone(),
                    metric: spec.kind,
                    value: None,
                    curve: None,
                    oracle_unavailable: matches!(e, Error::OracleUnavailable(_)),
                    error: Some(e.to_string()),
                },
            });
        }
    }
    out
}

/// Summary statistics for one method and metric.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub method: String,
    pub metric: MetricKind,
    pub mean: f64,
    /// Population standard deviation.
    pub std: f64,
    /// Number of images that produced a value.
    pub n: usize,
    pub incomplete: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub rows: Vec<ReportRow>,
}

/// Mean and population std, independent of input order.
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let mut dev: Vec<f64> = v.iter().map(|x| (x - mean) * (x - mean)).collect();
    dev.sort_by(f64::total_cmp);
    (mean, (dev.iter().sum::<f64>() / n).sqrt())
}

impl EvaluationReport {
    /// Rows sorted by method name, then metric.
    pub fn from_results(results: &[CaseResult]) -> Self {
        let mut groups: BTreeMap<(String, MetricKind), (Vec<f64>, bool)> = BTreeMap::new();
        for r in results {
            let g = groups.entry((r.method.clone(), r.metric)).or_default();
            match r.value {
                Some(v) => g.0.push(v),
                None => g.1 = true,
            }
        }
        let rows = groups
            .into_iter()
            .map(|((method, metric), (values, failed))| {
                let (mean, std) = mean_std(&values);
                ReportRow {
                    method,
                    metric,
                    mean,
                    std,
                    n: values.len(),
                    incomplete: failed,
                }
            })
            .collect();
        Self { rows }
    }

    pub fn metrics(&self) -> Vec<MetricKind> {
        let mut m: Vec<MetricKind> = self.rows.iter().map(|r| r.metric).collect();
        m.sort();
        m.dedup();
        m
    }

    pub fn row(&self, method: &str, metric: MetricKind) -> Option<&ReportRow> {
        self.rows.iter().find(|r| r.method == method && r.metric == metric)
    }

    /// Methods as rows, metrics as `mean ± std` columns. `*` marks rows
    /// with failed images.
    pub fn to_table(&self) -> String {
        let metrics = self.metrics();
        let mut methods: Vec<&str> = self.rows.iter().map(|r| r.method.as_str()).collect();
        methods.dedup();
        let mut cells: Vec<Vec<String>> = vec![std::iter::once("Method".to_string())
            .chain(metrics.iter().map(|m| m.label().to_string()))
            .collect()];
        for method in &methods {
            let mut line = vec![method.to_string()];
            for &m in &metrics {
                line.push(match self.row(method, m) {
                    Some(r) => format!(
                        "{:.4} ± {:.4}{}",
                        r.mean,
                        r.std,
                        if r.incomplete { " *" } else { "" }
                    ),
                    None => "-".into(),
                });
            }
            cells.push(line);
        }
        let widths: Vec<usize> = (0..cells[0].len())
            .map(|c| cells.iter().map(|l| l[c].chars().count()).max().unwrap_or(0))
            .collect();
        let mut out = String::new();
        for (i, line) in cells.iter().enumerate() {
            let padded: Vec<String> = line
                .iter()
                .zip(&widths)
                .map(|(s, &w)| format!("{s}{}", " ".repeat(w - s.chars().count())))
                .collect();
            let _ = writeln!(out, "| {} |", padded.join(" | "));
            if i == 0 {
                let rule: Vec<String> = widths.iter().map(|&w| "-".repeat(w)).collect();
                let _ = writeln!(out, "|-{}-|", rule.join("-|-"));
            }
        }
        out
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("method,metric,mean,std,n,incomplete\n");
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{}",
                r.method,
                r.metric.name(),
                r.mean,
                r.std,
                r.n,
                r.incomplete
            );
        }
        out
    }
}

/// Scores every case under every spec. A [`Baseline::DatasetMean`] spec
/// without explicit means gets the dataset's channel means.
pub fn evaluate_batch(
    cases: &[EvaluationCase],
    oracle: &dyn Oracle,
    specs: &[MetricSpec],
) -> Result<(EvaluationReport, Vec<CaseResult>)> {
    let specs = resolve_specs(cases, specs)?;
    let results: Vec<CaseResult> = cases
        .iter()
        .flat_map(|c| evaluate_case(c, oracle, &specs))
        .collect();
    Ok((EvaluationReport::from_results(&results), results))
}

/// Validates specs and fills in dataset means where needed.
pub fn resolve_specs(cases: &[EvaluationCase], specs: &[MetricSpec]) -> Result<Vec<MetricSpec>> {
    if cases.is_empty() {
        return Err(Error::validation("no images to evaluate"));
    }
    if specs.is_empty() {
        return Err(Error::validation("no metrics requested"));
    }
    let images: Vec<&ImageTensor> = cases.iter().map(|c| &c.image).collect();
    specs
        .iter()
        .map(|s| {
            s.validate()?;
            let mut s = s.clone();
            if s.baseline == Baseline::DatasetMean && s.dataset_mean.is_none() {
                s.dataset_mean = Some(dataset_channel_mean(&images)?);
            }
            Ok(s)
        })
        .collect()
}
