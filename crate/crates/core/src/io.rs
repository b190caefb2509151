//! On-disk layout: one NPY array per file plus a JSON manifest whose paths
//! are relative to the manifest's directory.

use std::fs;
use std::path::{Path, PathBuf};

use ndarray::{Array1, Array2, Array3};
use serde::{Deserialize, Serialize};

use crate::attribution::{AttributionMap, AttributionStack, ImageTensor};
use crate::error::{Error, Result};
use crate::npy;
use crate::rbm::RbmParams;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageEntry {
    pub path: PathBuf,
    pub label: usize,
    /// `[C, H, W]`
    pub shape: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MapEntry {
    pub source: String,
    pub path: PathBuf,
    #[serde(default)]
    pub normalized: bool,
}

/// Sidecar manifest of one attribution stack.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StackManifest {
    pub schema_version: u32,
    pub image: ImageEntry,
    /// `[H, W]` shared by every map.
    pub shape: Vec<usize>,
    pub maps: Vec<MapEntry>,
}

/// A list of stack manifests.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub schema_version: u32,
    pub stacks: Vec<PathBuf>,
}

fn base_dir(manifest: &Path) -> PathBuf {
    manifest.parent().map(Path::to_path_buf).unwrap_or_default()
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::io("cannot read manifest", path, e))?;
    if text.trim().is_empty() {
        return Err(Error::parse(path, "manifest is empty"));
    }
    serde_json::from_str(&text).map_err(|e| Error::parse(path, e.to_string()))
}

pub(crate) fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value).expect("manifest types serialize");
    fs::write(path, text + "\n").map_err(|e| Error::io("cannot write manifest", path, e))
}

fn check_version(path: &Path, version: u32) -> Result<()> {
    if version != SCHEMA_VERSION {
        return Err(Error::parse(
            path,
            format!("unsupported schema_version {version}, expected {SCHEMA_VERSION}"),
        ));
    }
    Ok(())
}

fn read_2d(path: &Path) -> Result<Array2<f64>> {
    let arr = npy::read(path)?;
    let [h, w] = arr.shape[..] else {
        return Err(Error::parse(path, format!("expected a 2-D array, got shape {:?}", arr.shape)));
    };
    Ok(Array2::from_shape_vec((h, w), arr.data).expect("decoder checks length"))
}

fn read_3d(path: &Path) -> Result<Array3<f64>> {
    let arr = npy::read(path)?;
    let [c, h, w] = arr.shape[..] else {
        return Err(Error::parse(path, format!("expected a 3-D array, got shape {:?}", arr.shape)));
    };
    Ok(Array3::from_shape_vec((c, h, w), arr.data).expect("decoder checks length"))
}

fn read_1d(path: &Path) -> Result<Array1<f64>> {
    let arr = npy::read(path)?;
    if arr.shape.len() != 1 {
        return Err(Error::parse(path, format!("expected a 1-D array, got shape {:?}", arr.shape)));
    }
    Ok(Array1::from(arr.data))
}

pub fn write_map(path: &Path, map: &AttributionMap) -> Result<()> {
    let (h, w) = map.shape();
    let data: Vec<f64> = map.scores().iter().copied().collect();
    npy::write_f64(path, &[h, w], &data)
}

pub fn write_image(path: &Path, image: &ImageTensor) -> Result<()> {
    let (c, h, w) = image.data().dim();
    let data: Vec<f64> = image.data().iter().copied().collect();
    npy::write_f64(path, &[c, h, w], &data)
}

pub fn read_image(path: &Path, label: usize) -> Result<ImageTensor> {
    ImageTensor::new(read_3d(path)?, label)
}

pub fn read_map(path: &Path, source: &str, normalized: bool) -> Result<AttributionMap> {
    let scores = read_2d(path)?;
    if normalized {
        AttributionMap::new_normalized(scores, source)
    } else {
        AttributionMap::new(scores, source)
    }
}

fn file_stem(path: &Path) -> String {
    path.file_name()
        .and_then(|n| n.to_str())
        .map(|n| n.strip_suffix(".json").unwrap_or(n).to_string())
        .unwrap_or_else(|| "stack".into())
}

/// Writes `stack` as `<manifest>` plus `<stem>.image.npy` and
/// `<stem>.map<i>.npy` beside it.
pub fn save_stack(stack: &AttributionStack, manifest_path: &Path) -> Result<StackManifest> {
    let dir = base_dir(manifest_path);
    let stem = file_stem(manifest_path);
    let image_file = PathBuf::from(format!("{stem}.image.npy"));
    write_image(&dir.join(&image_file), stack.image())?;
    let mut maps = Vec::with_capacity(stack.len());
    for (i, m) in stack.maps().iter().enumerate() {
        let file = PathBuf::from(format!("{stem}.map{i}.npy"));
        write_map(&dir.join(&file), m)?;
        maps.push(MapEntry {
            source: m.source().to_string(),
            path: file,
            normalized: m.is_normalized(),
        });
    }
    let (c, h, w) = stack.image().data().dim();
    let manifest = StackManifest {
        schema_version: SCHEMA_VERSION,
        image: ImageEntry {
            path: image_file,
            label: stack.image().label(),
            shape: vec![c, h, w],
        },
        shape: vec![h, w],
        maps,
    };
    write_json(manifest_path, &manifest)?;
    Ok(manifest)
}

pub fn read_stack_manifest(path: &Path) -> Result<StackManifest> {
    let manifest: StackManifest = read_json(path)?;
    check_version(path, manifest.schema_version)?;
    Ok(manifest)
}

/// Loads a stack and checks every array against the declared shapes.
pub fn load_stack(manifest_path: &Path) -> Result<AttributionStack> {
    let manifest = read_stack_manifest(manifest_path)?;
    let dir = base_dir(manifest_path);
    let image = read_image(&dir.join(&manifest.image.path), manifest.image.label)?;
    let (c, h, w) = image.data().dim();
    if manifest.image.shape != [c, h, w] {
        return Err(Error::validation(format!(
            "{}: image is {:?}, manifest declares {:?}",
            manifest_path.display(),
            [c, h, w],
            manifest.image.shape
        )));
    }
    if manifest.shape != [h, w] {
        return Err(Error::validation(format!(
            "{}: manifest shape {:?} does not match image {:?}",
            manifest_path.display(),
            manifest.shape,
            [h, w]
        )));
    }
    let maps = manifest
        .maps
        .iter()
        .map(|m| read_map(&dir.join(&m.path), &m.source, m.normalized))
        .collect::<Result<Vec<_>>>()?;
    AttributionStack::new(maps, image)
}

impl DatasetManifest {
    pub fn new(stacks: Vec<PathBuf>) -> Self {
        Self {
            schema_version: SCHEMA_VERSION,
            stacks,
        }
    }

    pub fn load(path: &Path) -> Result<Self> {
        let manifest: DatasetManifest = read_json(path)?;
        check_version(path, manifest.schema_version)?;
        Ok(manifest)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_json(path, self)
    }

    /// Stack manifest paths resolved against the dataset manifest location.
    pub fn stack_paths(&self, manifest_path: &Path) -> Vec<PathBuf> {
        let dir = base_dir(manifest_path);
        self.stacks.iter().map(|p| dir.join(p)).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct ArrayEntry {
    path: PathBuf,
    shape: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct RbmManifest {
    schema_version: u32,
    weights: ArrayEntry,
    visible_bias: ArrayEntry,
    hidden_bias: ArrayEntry,
}

/// Writes `W`, `a`, `b` as `<stem>.W.npy`, `<stem>.a.npy`, `<stem>.b.npy`
/// next to the manifest.
pub fn save_rbm(params: &RbmParams, manifest_path: &Path) -> Result<()> {
    let dir = base_dir(manifest_path);
    let stem = file_stem(manifest_path);
    let (n, m) = (params.n_visible(), params.n_hidden());
    let entry = |name: &str, shape: Vec<usize>| ArrayEntry {
        path: PathBuf::from(format!("{stem}.{name}.npy")),
        shape,
    };
    let manifest = RbmManifest {
        schema_version: SCHEMA_VERSION,
        weights: entry("W", vec![n, m]),
        visible_bias: entry("a", vec![n]),
        hidden_bias: entry("b", vec![m]),
    };
    let w: Vec<f64> = params.weights().iter().copied().collect();
    npy::write_f64(&dir.join(&manifest.weights.path), &[n, m], &w)?;
    npy::write_f64(&dir.join(&manifest.visible_bias.path), &[n], &params.visible_bias().to_vec())?;
    npy::write_f64(&dir.join(&manifest.hidden_bias.path), &[m], &params.hidden_bias().to_vec())?;
    write_json(manifest_path, &manifest)
}

pub fn load_rbm(manifest_path: &Path) -> Result<RbmParams> {
    let manifest: RbmManifest = read_json(manifest_path)?;
    check_version(manifest_path, manifest.schema_version)?;
    let dir = base_dir(manifest_path);
    let w = read_2d(&dir.join(&manifest.weights.path))?;
    let a = read_1d(&dir.join(&manifest.visible_bias.path))?;
    let b = read_1d(&dir.join(&manifest.hidden_bias.path))?;
    RbmParams::new(w, a, b)
}
