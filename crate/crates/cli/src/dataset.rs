//! Loading a dataset manifest up front, so every input problem surfaces
//! before anything is written, and fingerprinting the files it names.

use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::Context;
use saliency_forge::io::{load_stack, read_stack_manifest, DatasetManifest};
use saliency_forge::{make_noise_maps, AttributionMap, AttributionStack};
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::InvalidInput;

pub struct DatasetItem {
    /// Stack manifest file stem; unique within the dataset.
    pub id: String,
    pub stack: AttributionStack,
}

pub struct Dataset {
    pub items: Vec<DatasetItem>,
    pub digest: InputDigest,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct FileDigest {
    pub path: PathBuf,
    pub sha256: String,
}

/// Per-file SHA-256 plus one hash over the sorted `<hash>  <path>` listing.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct InputDigest {
    pub combined: String,
    pub files: Vec<FileDigest>,
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

pub fn sha256_file(path: &Path) -> anyhow::Result<String> {
    let bytes = fs::read(path).with_context(|| format!("cannot read {}", path.display()))?;
    Ok(hex(&Sha256::digest(&bytes)))
}

impl InputDigest {
    /// `paths` are hashed as found and recorded relative to `root` when
    /// possible.
    pub fn of_files(root: &Path, paths: &[PathBuf]) -> anyhow::Result<Self> {
        let unique: BTreeSet<&PathBuf> = paths.iter().collect();
        let mut files = unique
            .into_iter()
            .map(|p| {
                Ok(FileDigest {
                    path: p.strip_prefix(root).unwrap_or(p).to_path_buf(),
                    sha256: sha256_file(p)?,
                })
            })
            .collect::<anyhow::Result<Vec<_>>>()?;
        files.sort_by(|a, b| a.path.cmp(&b.path));
        let mut listing = String::new();
        for f in &files {
            listing.push_str(&format!("{}  {}\n", f.sha256, f.path.display()));
        }
        Ok(Self {
            combined: hex(&Sha256::digest(listing.as_bytes())),
            files,
        })
    }
}

fn stem(path: &Path) -> String {
    let name = path.file_name().and_then(|n| n.to_str()).unwrap_or("stack");
    name.strip_suffix(".json").unwrap_or(name).to_string()
}

/// Reads the dataset manifest and every stack it lists. Any failure is an
/// input error.
pub fn load_dataset(manifest_path: &Path) -> anyhow::Result<Dataset> {
    if !manifest_path.is_file() {
        return Err(InvalidInput(format!("dataset manifest {} does not exist", manifest_path.display())).into());
    }
    let manifest = DatasetManifest::load(manifest_path)?;
    if manifest.stacks.is_empty() {
        return Err(InvalidInput(format!("dataset {} lists no stacks", manifest_path.display())).into());
    }
    let root = manifest_path.parent().map(Path::to_path_buf).unwrap_or_default();
    let mut inputs = vec![manifest_path.to_path_buf()];
    let mut items = Vec::with_capacity(manifest.stacks.len());
    let mut ids = BTreeSet::new();
    for path in manifest.stack_paths(manifest_path) {
        let stack_manifest = read_stack_manifest(&path)?;
        let dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
        inputs.push(path.clone());
        inputs.push(dir.join(&stack_manifest.image.path));
        inputs.extend(stack_manifest.maps.iter().map(|m| dir.join(&m.path)));
        let stack = load_stack(&path).with_context(|| format!("loading {}", path.display()))?;
        let id = stem(&path);
        if !ids.insert(id.clone()) {
            return Err(InvalidInput(format!("two stacks share the name '{id}'")).into());
        }
        items.push(DatasetItem { id, stack });
    }
    let digest = InputDigest::of_files(&root, &inputs)?;
    Ok(Dataset { items, digest })
}

/// Raw standard-normal maps for image `index`.
pub fn noise_maps(run_seed: u64, index: usize, shape: (usize, usize), count: usize) -> saliency_forge::Result<Vec<AttributionMap>> {
    make_noise_maps(shape.0, shape.1, count, crate::noise_seed(run_seed, index))
}

/// The stack as the ensembles see it: `noise` noise maps appended, then
/// every map normalized.
pub fn prepare_stack(stack: &AttributionStack, run_seed: u64, index: usize, noise: usize) -> saliency_forge::Result<AttributionStack> {
    let extra = noise_maps(run_seed, index, stack.shape(), noise)?;
    stack.with_extra_maps(extra)?.normalized()
}
