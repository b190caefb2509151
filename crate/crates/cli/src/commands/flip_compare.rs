use std::fmt::Write;
use std::path::PathBuf;

use saliency_forge::ensembles::{rbm_aggregate_with_params, train_pixel_rbm, EnsembleMethod, FlipPolicy};
use saliency_forge::metrics::{evaluate_metric, resolve_specs, EvaluationCase, MetricKind, MetricSpec};
use saliency_forge::oracle::Oracle;
use saliency_forge::RngSeed;
use serde::Serialize;

use crate::config::RunConfig;
use crate::dataset::{load_dataset, prepare_stack, DatasetItem};
use crate::plots;
use crate::run::{connect_oracle, create_dir, for_each_parallel, write_json, write_run_files, write_text, Failure, RunRecord};
use crate::{train_seed, InvalidInput, PartialRun};

/// Which policy scored better on one image and metric.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Winner {
    MetricOptimization,
    FlipDetection,
    Tie,
}

/// One image under one metric, both policies.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PairedRow {
    pub image: String,
    pub metric: MetricKind,
    /// Whether this is the metric that metric optimization optimized.
    pub optimized: bool,
    pub flip_detection: f64,
    pub metric_optimization: f64,
    /// `metric_optimization − flip_detection`
    pub delta: f64,
    pub winner: Winner,
    pub flip_detection_flipped: bool,
    pub metric_optimization_flipped: bool,
}

/// Per-metric win counts over the dataset.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct WinSummary {
    pub metric: MetricKind,
    pub metric_optimization_better: usize,
    pub flip_detection_better: usize,
    pub ties: usize,
    pub mean_delta: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FlipCompareSummary {
    #[serde(skip)]
    pub output_dir: PathBuf,
    pub optimized_metric: MetricKind,
    pub rows: Vec<PairedRow>,
    pub summary: Vec<WinSummary>,
}

fn compare_one(
    config: &RunConfig,
    seed: u64,
    index: usize,
    item: &DatasetItem,
    specs: &[MetricSpec],
    optimized: &MetricSpec,
    oracle: &dyn Oracle,
) -> saliency_forge::Result<Vec<PairedRow>> {
    let a = &config.aggregate;
    let mut stack = prepare_stack(&item.stack, seed, index, a.add_noise)?;
    if a.include_original_image {
        stack = stack.with_extra_maps([stack.image().to_attribution_map()?])?;
    }
    let mut ensemble = config.ensemble_config(EnsembleMethod::Rbm, train_seed(seed, index), RngSeed(seed));
    ensemble.flip_metric = optimized.clone();
    // One trained model; only the orientation step differs.
    let params = train_pixel_rbm(&stack, &ensemble.rbm_train)?;
    ensemble.flip_policy = FlipPolicy::FlipDetection;
    let detected = rbm_aggregate_with_params(&stack, &params, &ensemble, None)?;
    ensemble.flip_policy = FlipPolicy::MetricOptimization;
    let optimized_map = rbm_aggregate_with_params(&stack, &params, &ensemble, Some(oracle))?;

    let image = stack.image();
    specs
        .iter()
        .map(|spec| {
            let fd = evaluate_metric(image, &detected.map, oracle, spec)?.value;
            let mo = evaluate_metric(image, &optimized_map.map, oracle, spec)?.value;
            let winner = if spec.kind.better(mo, fd) {
                Winner::MetricOptimization
            } else if spec.kind.better(fd, mo) {
                Winner::FlipDetection
            } else {
                Winner::Tie
            };
            Ok(PairedRow {
                image: item.id.clone(),
                metric: spec.kind,
                optimized: spec == optimized,
                flip_detection: fd,
                metric_optimization: mo,
                delta: mo - fd,
                winner,
                flip_detection_flipped: detected.flipped,
                metric_optimization_flipped: optimized_map.flipped,
            })
        })
        .collect()
}

fn summarize(rows: &[PairedRow], metrics: &[MetricKind]) -> Vec<WinSummary> {
    metrics
        .iter()
        .map(|&metric| {
            let mine: Vec<&PairedRow> = rows.iter().filter(|r| r.metric == metric).collect();
            let count = |w: Winner| mine.iter().filter(|r| r.winner == w).count();
            let mut deltas: Vec<f64> = mine.iter().map(|r| r.delta).collect();
            deltas.sort_by(f64::total_cmp);
            WinSummary {
                metric,
                metric_optimization_better: count(Winner::MetricOptimization),
                flip_detection_better: count(Winner::FlipDetection),
                ties: count(Winner::Tie),
                mean_delta: if deltas.is_empty() {
                    f64::NAN
                } else {
                    deltas.iter().sum::<f64>() / deltas.len() as f64
                },
            }
        })
        .collect()
}

impl FlipCompareSummary {
    pub fn to_table(&self) -> String {
        let mut out = String::from("| Metric | MO better | FD better | Ties | Mean Δ (MO − FD) |\n|---|---|---|---|---|\n");
        for s in &self.summary {
            let _ = writeln!(
                out,
                "| {}{} | {} | {} | {} | {:+.4} |",
                s.metric.label(),
                if s.metric == self.optimized_metric { " (optimized)" } else { "" },
                s.metric_optimization_better,
                s.flip_detection_better,
                s.ties,
                s.mean_delta
            );
        }
        out
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("image,metric,flip_detection,metric_optimization,delta,winner\n");
        for r in &self.rows {
            let winner = match r.winner {
                Winner::MetricOptimization => "metric_optimization",
                Winner::FlipDetection => "flip_detection",
                Winner::Tie => "tie",
            };
            let _ = writeln!(
                out,
                "{},{},{},{},{},{winner}",
                r.image,
                r.metric.name(),
                r.flip_detection,
                r.metric_optimization,
                r.delta
            );
        }
        out
    }
}

/// Runs the RBM ensemble under both flip policies on identical trained
/// models and reports paired per-image differences.
pub fn cmd_flip_compare(mut config: RunConfig) -> anyhow::Result<FlipCompareSummary> {
    let seed = config.resolve_seed()?;
    let workers = config.resolve_workers()?;
    config
        .ensemble_config(EnsembleMethod::Rbm, RngSeed(0), RngSeed(0))
        .validate()
        .map_err(|e| InvalidInput(e.to_string()))?;
    let out = config.output_dir()?.to_path_buf();
    let dataset = load_dataset(config.dataset()?)?;

    let mut metrics = config.evaluate.metrics.clone();
    if !metrics.contains(&config.aggregate.flip_metric) {
        metrics.push(config.aggregate.flip_metric);
    }
    metrics.sort();
    metrics.dedup();
    let probe: Vec<EvaluationCase> = dataset
        .items
        .iter()
        .map(|item| EvaluationCase {
            id: item.id.clone(),
            image: item.stack.image().clone(),
            maps: Vec::new(),
        })
        .collect();
    let specs = resolve_specs(&probe, &metrics.iter().map(|&k| config.evaluate.spec(k, RngSeed(seed))).collect::<Vec<_>>())?;
    let optimized = specs
        .iter()
        .find(|s| s.kind == config.aggregate.flip_metric)
        .expect("flip metric is among the specs")
        .clone();
    let oracle = connect_oracle(&config)?;

    create_dir(&out)?;
    let mut per_image: Vec<Vec<PairedRow>> = vec![Vec::new(); dataset.items.len()];
    let mut failures = Vec::new();
    let mut oracle_down = false;
    for_each_parallel(
        workers,
        &dataset.items,
        |i, item| compare_one(&config, seed, i, item, &specs, &optimized, oracle.as_ref()),
        |i, result| {
            match result {
                Ok(rows) => per_image[i] = rows,
                Err(e) => {
                    oracle_down |= matches!(e, saliency_forge::Error::OracleUnavailable(_));
                    failures.push(Failure {
                        image: dataset.items[i].id.clone(),
                        error: e.to_string(),
                    });
                }
            }
            Ok(())
        },
    )?;
    failures.sort_by(|a, b| a.image.cmp(&b.image));
    let rows: Vec<PairedRow> = per_image.into_iter().flatten().collect();
    let summary = FlipCompareSummary {
        output_dir: out.clone(),
        optimized_metric: optimized.kind,
        summary: summarize(&rows, &metrics),
        rows,
    };

    write_json(&out.join("flip_compare.json"), &summary)?;
    write_text(&out.join("flip_compare.csv"), &summary.to_csv())?;
    write_text(&out.join("flip_compare.txt"), &summary.to_table())?;
    if config.evaluate.plots {
        let dir = out.join("plots");
        create_dir(&dir)?;
        for s in &summary.summary {
            let bars = vec![
                ("MO better".to_string(), s.metric_optimization_better as f64, None),
                ("FD better".to_string(), s.flip_detection_better as f64, None),
                ("tie".to_string(), s.ties as f64, None),
            ];
            write_text(
                &dir.join(format!("flip_{}.svg", s.metric.name())),
                &plots::bar_chart(&format!("{}: images per outcome", s.metric.label()), &bars),
            )?;
        }
    }

    let n_failed = failures.len();
    let record = RunRecord::new("flip-compare", seed, dataset.items.len(), failures, dataset.digest);
    write_run_files(&out, &config, &record)?;
    if n_failed > 0 {
        return Err(PartialRun {
            failed: n_failed,
            total: dataset.items.len(),
            dir: out,
            oracle_unavailable: oracle_down,
        }
        .into());
    }
    Ok(summary)
}
