use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use saliency_forge::metrics::{evaluate_case, resolve_specs, CaseResult, EvaluationCase, EvaluationReport, MetricSpec};
use saliency_forge::{normalize_map, RngSeed};
use serde::Serialize;

use crate::config::RunConfig;
use crate::dataset::{load_dataset, Dataset};
use crate::plots;
use crate::run::{connect_oracle, create_dir, for_each_parallel, write_json, write_run_files, write_text, Failure, RunRecord};
use crate::{InvalidInput, PartialRun};

#[derive(Debug, Clone)]
pub struct EvaluateSummary {
    pub output_dir: PathBuf,
    pub report: EvaluationReport,
    pub results: Vec<CaseResult>,
}

/// `report.json`
#[derive(Serialize)]
struct ReportFile<'a> {
    metric_specs: &'a [MetricSpec],
    rows: &'a EvaluationReport,
}

/// Every stack map becomes an evaluation entry named by its source tag.
pub fn cases_from_dataset(dataset: &Dataset) -> saliency_forge::Result<Vec<EvaluationCase>> {
    dataset
        .items
        .iter()
        .map(|item| {
            let maps = item
                .stack
                .maps()
                .iter()
                .map(|m| Ok((m.source().to_string(), normalize_map(m)?)))
                .collect::<saliency_forge::Result<Vec<_>>>()?;
            Ok(EvaluationCase {
                id: item.id.clone(),
                image: item.stack.image().clone(),
                maps,
            })
        })
        .collect()
}

fn write_plots(dir: &Path, specs: &[MetricSpec], results: &[CaseResult], report: &EvaluationReport) -> anyhow::Result<()> {
    const GRID: usize = 100;
    create_dir(dir)?;
    for spec in specs {
        let mut by_method: BTreeMap<&str, (Vec<f64>, usize)> = BTreeMap::new();
        for r in results.iter().filter(|r| r.metric == spec.kind) {
            if let Some(curve) = &r.curve {
                let entry = by_method.entry(&r.method).or_insert_with(|| (vec![0.0; GRID + 1], 0));
                for (acc, v) in entry.0.iter_mut().zip(plots::resample(curve.points(), GRID)) {
                    *acc += v;
                }
                entry.1 += 1;
            }
        }
        let series: Vec<(String, Vec<(f64, f64)>)> = by_method
            .into_iter()
            .map(|(method, (sum, n))| {
                let points = sum
                    .iter()
                    .enumerate()
                    .map(|(i, s)| (i as f64 / GRID as f64, s / n as f64))
                    .collect();
                (method.to_string(), points)
            })
            .collect();
        let name = spec.kind.name();
        write_text(
            &dir.join(format!("{name}_curves.svg")),
            &plots::line_chart(&format!("{} mean curve", spec.kind.label()), "fraction perturbed", &series),
        )?;
        let bars: Vec<(String, f64, Option<f64>)> = report
            .rows
            .iter()
            .filter(|r| r.metric == spec.kind && r.n > 0)
            .map(|r| (r.method.clone(), r.mean, Some(r.std)))
            .collect();
        write_text(
            &dir.join(format!("{name}_summary.svg")),
            &plots::bar_chart(&format!("{} mean ± std", spec.kind.label()), &bars),
        )?;
    }
    Ok(())
}

/// Scores every map of every stack with the configured oracle and metrics.
pub fn cmd_evaluate(mut config: RunConfig) -> anyhow::Result<EvaluateSummary> {
    let seed = config.resolve_seed()?;
    let workers = config.resolve_workers()?;
    if config.evaluate.metrics.is_empty() {
        return Err(InvalidInput("no metrics requested".into()).into());
    }
    let out = config.output_dir()?.to_path_buf();
    let dataset = load_dataset(config.dataset()?)?;
    let cases = cases_from_dataset(&dataset)?;
    let specs = resolve_specs(&cases, &config.evaluate.specs(RngSeed(seed)))?;
    let oracle = connect_oracle(&config)?;

    create_dir(&out)?;
    let mut per_case: Vec<Vec<CaseResult>> = vec![Vec::new(); cases.len()];
    for_each_parallel(
        workers,
        &cases,
        |_, case| evaluate_case(case, oracle.as_ref(), &specs),
        |i, results| {
            per_case[i] = results;
            Ok(())
        },
    )?;
    let results: Vec<CaseResult> = per_case.into_iter().flatten().collect();
    let report = EvaluationReport::from_results(&results);

    write_json(&out.join("report.json"), &ReportFile { metric_specs: &specs, rows: &report })?;
    write_text(&out.join("report.txt"), &report.to_table())?;
    write_text(&out.join("report.csv"), &report.to_csv())?;
    let without_curves: Vec<CaseResult> = results
        .iter()
        .map(|r| CaseResult {
            curve: None,
            ..r.clone()
        })
        .collect();
    write_json(&out.join("results.json"), &without_curves)?;
    if config.evaluate.dump_curves {
        write_json(&out.join("curves.json"), &results)?;
    }
    if config.evaluate.plots {
        write_plots(&out.join("plots"), &specs, &results, &report)?;
    }

    let mut failures: Vec<Failure> = results
        .iter()
        .filter_map(|r| {
            r.error.as_ref().map(|e| Failure {
                image: r.image.clone(),
                error: format!("{} / {}: {e}", r.method, r.metric.name()),
            })
        })
        .collect();
    failures.sort_by(|a, b| (&a.image, &a.error).cmp(&(&b.image, &b.error)));
    let failed_images = {
        let mut ids: Vec<&str> = failures.iter().map(|f| f.image.as_str()).collect();
        ids.dedup();
        ids.len()
    };
    let oracle_down = results.iter().any(|r| r.oracle_unavailable);
    let record = RunRecord::new("evaluate", seed, cases.len(), failures, dataset.digest);
    write_run_files(&out, &config, &record)?;
    if failed_images > 0 {
        return Err(PartialRun {
            failed: failed_images,
            total: cases.len(),
            dir: out,
            oracle_unavailable: oracle_down,
        }
        .into());
    }
    Ok(EvaluateSummary {
        output_dir: out,
        report,
        results,
    })
}
