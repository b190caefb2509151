use std::collections::BTreeMap;
use std::path::PathBuf;

use saliency_forge::ensembles::{aggregate, Diagnostics, EnsembleMethod, FlipPolicy};
use saliency_forge::io::{save_stack, DatasetManifest};
use saliency_forge::oracle::Oracle;
use saliency_forge::{AttributionStack, RngSeed};
use serde::Serialize;

use crate::config::RunConfig;
use crate::dataset::{load_dataset, prepare_stack, DatasetItem};
use crate::run::{connect_oracle, create_dir, for_each_parallel, write_json, write_run_files, Failure, RunRecord};
use crate::{train_seed, InvalidInput, PartialRun};

#[derive(Debug, Clone, PartialEq)]
pub struct AggregateSummary {
    pub output_dir: PathBuf,
    /// `maps/dataset.json`: one stack per image holding the aggregated maps,
    /// tagged by method.
    pub maps_manifest: PathBuf,
    pub images: usize,
}

#[derive(Serialize)]
struct MethodRecord {
    flipped: bool,
    #[serde(flatten)]
    diagnostics: Diagnostics,
}

/// `diagnostics/<image>.json`
#[derive(Serialize)]
struct ImageRecord {
    image: String,
    input_maps: usize,
    noise_maps: usize,
    include_original_image: bool,
    training_seed: u64,
    methods: BTreeMap<&'static str, MethodRecord>,
}

struct ImageOutput {
    stack: AttributionStack,
    record: ImageRecord,
}

fn aggregate_one(
    config: &RunConfig,
    seed: u64,
    index: usize,
    item: &DatasetItem,
    oracle: Option<&dyn Oracle>,
) -> saliency_forge::Result<ImageOutput> {
    let a = &config.aggregate;
    let stack = prepare_stack(&item.stack, seed, index, a.add_noise)?;
    let training_seed = train_seed(seed, index);
    let mut maps = Vec::with_capacity(a.methods.len());
    let mut methods = BTreeMap::new();
    for &method in &a.methods {
        let ensemble = config.ensemble_config(method, training_seed, RngSeed(seed));
        let out = aggregate(&stack, &ensemble, oracle)?;
        methods.insert(
            method.name(),
            MethodRecord {
                flipped: out.flipped,
                diagnostics: out.diagnostics,
            },
        );
        maps.push(out.map.with_source(method.name()));
    }
    Ok(ImageOutput {
        stack: AttributionStack::new(maps, item.stack.image().clone())?,
        record: ImageRecord {
            image: item.id.clone(),
            input_maps: item.stack.len(),
            noise_maps: a.add_noise,
            include_original_image: a.include_original_image,
            training_seed: training_seed.0,
            methods,
        },
    })
}

fn validate(config: &RunConfig) -> Result<(), InvalidInput> {
    let methods = &config.aggregate.methods;
    if methods.is_empty() {
        return Err(InvalidInput("no ensemble methods requested".into()));
    }
    let mut seen = methods.clone();
    seen.sort();
    seen.dedup();
    if seen.len() != methods.len() {
        return Err(InvalidInput("ensemble methods listed twice".into()));
    }
    config
        .ensemble_config(EnsembleMethod::Rbm, RngSeed(0), RngSeed(0))
        .validate()
        .map_err(|e| InvalidInput(e.to_string()))
}

fn needs_oracle(config: &RunConfig) -> bool {
    config.aggregate.methods.contains(&EnsembleMethod::Rbm)
        && config.aggregate.flip_policy == FlipPolicy::MetricOptimization
}

/// Aggregates every stack of the dataset with every requested method.
/// Inputs are validated before anything is written.
pub fn cmd_aggregate(mut config: RunConfig) -> anyhow::Result<AggregateSummary> {
    let seed = config.resolve_seed()?;
    let workers = config.resolve_workers()?;
    validate(&config)?;
    let out = config.output_dir()?.to_path_buf();
    let dataset = load_dataset(config.dataset()?)?;
    let oracle = if needs_oracle(&config) {
        Some(connect_oracle(&config)?)
    } else {
        None
    };

    let maps_dir = out.join("maps");
    let diag_dir = out.join("diagnostics");
    create_dir(&maps_dir)?;
    create_dir(&diag_dir)?;

    let mut failures = Vec::new();
    let mut oracle_down = false;
    let mut written = vec![false; dataset.items.len()];
    for_each_parallel(
        workers,
        &dataset.items,
        |i, item| aggregate_one(&config, seed, i, item, oracle.as_deref()),
        |i, result| {
            let id = &dataset.items[i].id;
            match result {
                Ok(output) => {
                    save_stack(&output.stack, &maps_dir.join(format!("{id}.json")))?;
                    write_json(&diag_dir.join(format!("{id}.json")), &output.record)?;
                    written[i] = true;
                }
                Err(e) => {
                    oracle_down |= matches!(e, saliency_forge::Error::OracleUnavailable(_));
                    failures.push(Failure {
                        image: id.clone(),
                        error: e.to_string(),
                    });
                }
            }
            Ok(())
        },
    )?;
    failures.sort_by(|a, b| a.image.cmp(&b.image));

    let stacks = dataset
        .items
        .iter()
        .zip(&written)
        .filter(|(_, &ok)| ok)
        .map(|(item, _)| PathBuf::from(format!("{}.json", item.id)))
        .collect();
    let maps_manifest = maps_dir.join("dataset.json");
    DatasetManifest::new(stacks).save(&maps_manifest)?;

    let n_failed = failures.len();
    let record = RunRecord::new("aggregate", seed, dataset.items.len(), failures, dataset.digest);
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
    Ok(AggregateSummary {
        output_dir: out,
        maps_manifest,
        images: dataset.items.len(),
    })
}
