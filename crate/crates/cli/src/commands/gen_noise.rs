use std::path::PathBuf;

use saliency_forge::io::{save_stack, DatasetManifest};

use crate::config::RunConfig;
use crate::dataset::{load_dataset, noise_maps};
use crate::run::{create_dir, write_run_files, RunRecord};
use crate::InvalidInput;

/// Copies every stack with `count` raw standard-normal maps appended, using
/// the same per-image seeds as `aggregate --add-noise`. Returns the new
/// dataset manifest.
pub fn cmd_gen_noise(mut config: RunConfig, count: usize) -> anyhow::Result<PathBuf> {
    let seed = config.resolve_seed()?;
    if count == 0 {
        return Err(InvalidInput("noise map count must be at least 1".into()).into());
    }
    let out = config.output_dir()?.to_path_buf();
    let dataset = load_dataset(config.dataset()?)?;
    let stacks_dir = out.join("stacks");
    create_dir(&stacks_dir)?;
    let mut listed = Vec::with_capacity(dataset.items.len());
    for (i, item) in dataset.items.iter().enumerate() {
        let noise = noise_maps(seed, i, item.stack.shape(), count)?;
        let stack = item.stack.with_extra_maps(noise)?;
        save_stack(&stack, &stacks_dir.join(format!("{}.json", item.id)))?;
        listed.push(PathBuf::from("stacks").join(format!("{}.json", item.id)));
    }
    let manifest = out.join("dataset.json");
    DatasetManifest::new(listed).save(&manifest)?;
    config.aggregate.add_noise = count;
    let record = RunRecord::new("gen-noise", seed, dataset.items.len(), Vec::new(), dataset.digest);
    write_run_files(&out, &config, &record)?;
    Ok(manifest)
}
