use std::collections::BTreeMap;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::tensor::Tensor;
use super::FusionError;
use crate::motion_maps::Source;

/// Architecture knobs. Every source extractor has the same layer count and
/// output width; only the input channels of the first layer differ.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FusionConfig {
    /// Channels emitted by each per-source extractor.
    pub feature_channels: usize,
    /// Odd spatial kernel size of the feature convs.
    pub kernel_size: usize,
    /// Conv layers per source extractor.
    pub extractor_depth: usize,
    /// Common width both regrouped branches are projected to before they are
    /// multiplied.
    pub fuse_channels: usize,
    /// 3 for color input, 1 for grayscale.
    pub rgb_channels: usize,
}

impl Default for FusionConfig {
    fn default() -> Self {
        Self {
            feature_channels: 4,
            kernel_size: 3,
            extractor_depth: 2,
            fuse_channels: 8,
            rgb_channels: 3,
        }
    }
}

impl FusionConfig {
    pub fn source_channels(&self, source: Source) -> usize {
        match source {
            Source::Diff | Source::Depth | Source::Density => 1,
            Source::Flow => 2,
            Source::Rgb => self.rgb_channels,
        }
    }

    pub fn cat_channels(&self) -> usize {
        5 * self.feature_channels
    }

    /// Every parameter name with its expected shape, in initialization order.
    pub fn param_shapes(&self) -> Vec<(String, Vec<usize>)> {
        let (c, k, f, cat) = (
            self.feature_channels,
            self.kernel_size,
            self.fuse_channels,
            self.cat_channels(),
        );
        let mut out = Vec::new();
        let mut conv = |name: String, co: usize, ci: usize, k: usize| {
            out.push((format!("{name}.weight"), vec![co, ci, k, k]));
            out.push((format!("{name}.bias"), vec![co]));
        };
        for s in Source::ALL {
            for i in 0..self.extractor_depth {
                let ci = if i == 0 { self.source_channels(s) } else { c };
                conv(format!("extract.{}.{i}", s.name()), c, ci, k);
            }
        }
        for i in 0..2 {
            conv(format!("attend.conv.{i}"), cat, cat, k);
        }
        conv("attend.coa".into(), cat, cat, 1);
        conv("attend.cha".into(), cat, cat, 1);
        for i in 0..2 {
            conv(format!("mask.conv.{i}"), cat, cat, k);
        }
        for s in Source::ALL {
            for i in 0..2 {
                conv(format!("regroup.{}.{i}", s.name()), c, c, k);
            }
        }
        conv("project.motion".into(), f, 2 * c, 1);
        conv("project.static".into(), f, 3 * c, 1);
        conv("head".into(), 1, f, 1);
        for name in COEFFICIENTS {
            out.push((name.to_string(), vec![]));
        }
        out
    }
}

/// Names of the four scalar mixing coefficients.
pub const COEFFICIENTS: [&str; 4] = ["alpha1", "beta1", "alpha2", "beta2"];

/// Default weight standard deviation.
pub const INIT_STD: f64 = 0.01;

/// All learnable tensors, keyed by dotted name (e.g. `extract.flow.0.weight`,
/// `mask.conv.1.bias`, `alpha1`).
#[derive(Debug, Clone, PartialEq)]
pub struct FusionParams {
    config: FusionConfig,
    tensors: BTreeMap<String, Tensor>,
}

impl FusionParams {
    /// Weights from N(0, 0.01), zero biases, all coefficients 1.
    pub fn init(config: FusionConfig, seed: u64) -> Self {
        Self::init_with_std(config, seed, INIT_STD)
    }

    pub fn init_with_std(config: FusionConfig, seed: u64, std: f64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let normal = Normal::new(0.0, std).expect("std must be finite and non-negative");
        let mut tensors = BTreeMap::new();
        for (name, shape) in config.param_shapes() {
            let n: usize = shape.iter().product();
            let data = if name.ends_with(".weight") {
                (0..n).map(|_| normal.sample(&mut rng)).collect()
            } else if name.ends_with(".bias") {
                vec![0.0; n]
            } else {
                vec![1.0]
            };
            tensors.insert(name, Tensor::from_parts_unchecked(shape, data));
        }
        Self { config, tensors }
    }

    /// Resamples every weight and bias from N(0, std), leaving coefficients.
    pub fn randomize(&mut self, seed: u64, std: f64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let normal = Normal::new(0.0, std).expect("std must be finite and non-negative");
        for (name, t) in self.tensors.iter_mut() {
            if name.ends_with(".weight") || name.ends_with(".bias") {
                t.data_mut().iter_mut().for_each(|v| *v = normal.sample(&mut rng));
            }
        }
    }

    pub fn config(&self) -> &FusionConfig {
        &self.config
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.tensors.keys().map(String::as_str)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.tensors.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.tensors.get(name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.tensors.get_mut(name)
    }

    /// Inserts or replaces a tensor. Shapes are not checked here; use
    /// [`FusionParams::validate`] for the full architecture check.
    pub fn set(&mut self, name: impl Into<String>, value: Tensor) {
        self.tensors.insert(name.into(), value);
    }

    pub fn remove(&mut self, name: &str) -> Option<Tensor> {
        self.tensors.remove(name)
    }

    pub fn coefficient(&self, name: &str) -> f64 {
        self.tensors.get(name).map(Tensor::item).unwrap_or(f64::NAN)
    }

    pub fn set_coefficient(&mut self, name: &str, value: f64) {
        self.tensors.insert(name.to_string(), Tensor::scalar(value));
    }

    pub fn parameter_count(&self) -> usize {
        self.tensors.values().map(Tensor::len).sum()
    }

    /// Checks that every expected parameter exists with its expected shape
    /// and that nothing else is present.
    pub fn validate(&self) -> Result<(), FusionError> {
        if self.config.kernel_size.is_multiple_of(2) {
            return Err(FusionError::Shape("kernel size must be odd".into()));
        }
        let expected = self.config.param_shapes();
        for (name, shape) in &expected {
            match self.tensors.get(name) {
                None => return Err(FusionError::MissingParam(name.clone())),
                Some(t) if t.shape() != shape.as_slice() => {
                    return Err(FusionError::Shape(format!(
                        "{name}: expected {shape:?}, found {:?}",
                        t.shape()
                    )))
                }
                Some(_) => {}
            }
        }
        if self.tensors.len() != expected.len() {
            let extra = self
                .tensors
                .keys()
                .find(|k| !expected.iter().any(|(n, _)| n == *k))
                .cloned()
                .unwrap_or_default();
            return Err(FusionError::Shape(format!("unexpected parameter `{extra}`")));
        }
        Ok(())
    }

    /// Layer shapes of one source extractor, in order.
    pub fn extractor_shapes(&self, source: Source) -> Vec<Vec<usize>> {
        (0..)
            .map_while(|i| self.get(&format!("extract.{}.{i}.weight", source.name())))
            .map(|t| t.shape().to_vec())
            .collect()
    }

    /// True when all five extractors share one architecture: same depth and
    /// identical layer shapes, except the input channels of the first layer.
    pub fn is_pseudo_siamese(&self) -> bool {
        let norm = |mut shapes: Vec<Vec<usize>>| {
            if let Some(first) = shapes.first_mut() {
                first[1] = 0;
            }
            shapes
        };
        let reference = norm(self.extractor_shapes(Source::ALL[0]));
        !reference.is_empty()
            && Source::ALL[1..]
                .iter()
                .all(|&s| norm(self.extractor_shapes(s)) == reference)
    }

    /// Writes `manifest.json` plus one raw little-endian blob per parameter.
    pub fn save(&self, dir: impl AsRef<Path>, dtype: BlobType) -> Result<(), FusionError> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir).map_err(|e| FusionError::io(dir, e))?;
        let mut entries = Vec::new();
        for (name, t) in &self.tensors {
            let file = format!("{name}.bin");
            let bytes: Vec<u8> = match dtype {
                BlobType::F64 => t.data().iter().flat_map(|v| v.to_le_bytes()).collect(),
                BlobType::F32 => t.data().iter().flat_map(|&v| (v as f32).to_le_bytes()).collect(),
            };
            let path = dir.join(&file);
            std::fs::write(&path, bytes).map_err(|e| FusionError::io(&path, e))?;
            entries.push(ManifestEntry {
                name: name.clone(),
                shape: t.shape().to_vec(),
                file,
            });
        }
        let manifest = Manifest {
            config: self.config,
            dtype,
            params: entries,
        };
        let path = dir.join("manifest.json");
        let text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
        std::fs::write(&path, text + "\n").map_err(|e| FusionError::io(&path, e))
    }

    pub fn load(dir: impl AsRef<Path>) -> Result<Self, FusionError> {
        let dir = dir.as_ref();
        let path = dir.join("manifest.json");
        let text = std::fs::read_to_string(&path).map_err(|e| FusionError::io(&path, e))?;
        let manifest: Manifest =
            serde_json::from_str(&text).map_err(|e| FusionError::Format(format!("{}: {e}", path.display())))?;
        let mut tensors = BTreeMap::new();
        for entry in manifest.params {
            let path = dir.join(&entry.file);
            let bytes = std::fs::read(&path).map_err(|e| FusionError::io(&path, e))?;
            let data: Vec<f64> = match manifest.dtype {
                BlobType::F64 => bytes
                    .chunks_exact(8)
                    .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
                    .collect(),
                BlobType::F32 => bytes
                    .chunks_exact(4)
                    .map(|c| f32::from_le_bytes(c.try_into().expect("chunk of 4")) as f64)
                    .collect(),
            };
            let t =
                Tensor::new(entry.shape, data).map_err(|e| FusionError::Format(format!("{}: {e}", path.display())))?;
            tensors.insert(entry.name, t);
        }
        let params = Self {
            config: manifest.config,
            tensors,
        };
        params.validate()?;
        Ok(params)
    }
}

/// Element type of saved parameter blobs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BlobType {
    F32,
    F64,
}

#[derive(Serialize, Deserialize)]
struct ManifestEntry {
    name: String,
    shape: Vec<usize>,
    file: String,
}

#[derive(Serialize, Deserialize)]
struct Manifest {
    config: FusionConfig,
    dtype: BlobType,
    params: Vec<ManifestEntry>,
}
