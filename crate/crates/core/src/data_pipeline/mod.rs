//! Labeled multi-domain image corpora: loading, augmentation, splitting and batching.
//!
//! Images are stored as `[3, H, W]` arrays with values in `[-1, 1]`. A
//! dataset either comes from a folder tree `<root>/<domain_name>/*.{png,jpg}`
//! or from the built-in synthetic generator (`root_path = "synthetic"`).

mod augment;
pub mod image_io;
mod sampler;
mod synthetic;

use std::path::{Path, PathBuf};

use ndarray::{Array3, Array4};
use serde::{Deserialize, Serialize};

pub use augment::{augment, augment_with, AugmentParams, ROTATION_DEGREES};
pub use sampler::{make_batch, split_train_test, BatchLoader, BatchSampler, Split};
pub use synthetic::{generate_synthetic, mean_hue, DomainStyle, ShapeKind, SyntheticDomainConfig};

use crate::{Error, Result};

/// Token selecting the built-in synthetic generator instead of a folder.
pub const SYNTHETIC: &str = "synthetic";

/// Center crop applied to source images before resizing.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "CropRepr", into = "CropRepr")]
pub enum CropSize {
    None,
    Square(u32),
}

#[derive(Serialize, Deserialize)]
#[serde(untagged)]
enum CropRepr {
    Size(u32),
    Token(String),
}

impl TryFrom<CropRepr> for CropSize {
    type Error = String;
    fn try_from(r: CropRepr) -> Result<Self, String> {
        match r {
            CropRepr::Size(0) => Err("crop_size must be positive".into()),
            CropRepr::Size(n) => Ok(CropSize::Square(n)),
            CropRepr::Token(t) if t == "none" => Ok(CropSize::None),
            CropRepr::Token(t) => Err(format!("crop_size must be a positive integer or \"none\", got \"{t}\"")),
        }
    }
}

impl From<CropSize> for CropRepr {
    fn from(c: CropSize) -> Self {
        match c {
            CropSize::None => CropRepr::Token("none".into()),
            CropSize::Square(n) => CropRepr::Size(n),
        }
    }
}

/// Where the images come from and how they are preprocessed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DatasetSpec {
    /// Folder root, or `"synthetic"`.
    pub root_path: String,
    pub domain_names: Vec<String>,
    /// Side length `H` of the square images fed to the networks.
    pub image_size: usize,
    pub crop_size: CropSize,
    pub test_fraction: f64,
    pub synthetic: SyntheticDomainConfig,
}

impl Default for DatasetSpec {
    fn default() -> Self {
        Self {
            root_path: SYNTHETIC.into(),
            domain_names: vec!["domain_a".into(), "domain_b".into(), "domain_c".into()],
            image_size: 256,
            crop_size: CropSize::Square(1200),
            test_fraction: 0.05,
            synthetic: SyntheticDomainConfig::default(),
        }
    }
}

impl DatasetSpec {
    pub fn num_domains(&self) -> usize {
        self.domain_names.len()
    }

    pub fn is_synthetic(&self) -> bool {
        self.root_path == SYNTHETIC
    }

    pub fn validate(&self) -> Result<()> {
        if self.domain_names.len() < 2 {
            return Err(Error::config_at("dataset.domain_names", "at least two domains are required"));
        }
        let mut names = self.domain_names.clone();
        names.sort();
        if let Some(w) = names.windows(2).find(|w| w[0] == w[1]) {
            return Err(Error::config_at("dataset.domain_names", format!("duplicate domain name `{}`", w[0])));
        }
        if self.image_size == 0 || self.image_size % 2 != 0 {
            return Err(Error::config_at("dataset.image_size", "must be a positive even integer"));
        }
        if let CropSize::Square(c) = self.crop_size {
            if (c as usize) < self.image_size {
                return Err(Error::config_at("dataset.crop_size", "must be >= image_size or \"none\""));
            }
        }
        if !(self.test_fraction > 0.0 && self.test_fraction < 1.0) {
            return Err(Error::config_at("dataset.test_fraction", "must lie strictly between 0 and 1"));
        }
        self.synthetic.validate()
    }

    pub fn domain_index(&self, name: &str) -> Option<usize> {
        self.domain_names.iter().position(|n| n == name)
    }
}

/// Immutable indexed collection of `(image, domain index)` pairs.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub domain_names: Vec<String>,
    pub image_size: usize,
    pub images: Vec<Array3<f32>>,
    pub labels: Vec<usize>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }

    pub fn num_domains(&self) -> usize {
        self.domain_names.len()
    }

    pub fn counts_per_domain(&self) -> Vec<usize> {
        let mut counts = vec![0; self.num_domains()];
        for &l in &self.labels {
            counts[l] += 1;
        }
        counts
    }

    /// Stacks the given items into a batch without augmentation.
    pub fn batch(&self, indices: &[usize]) -> ImageBatch {
        let h = self.image_size;
        let mut pixels = Array4::<f32>::zeros((indices.len(), 3, h, h));
        for (slot, &i) in indices.iter().enumerate() {
            pixels.index_axis_mut(ndarray::Axis(0), slot).assign(&self.images[i]);
        }
        ImageBatch { pixels, labels: indices.iter().map(|&i| self.labels[i]).collect() }
    }
}

/// Normalized RGB batch `[B, 3, H, W]` with one domain label per item.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageBatch {
    pub pixels: Array4<f32>,
    pub labels: Vec<usize>,
}

impl ImageBatch {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }
}

/// Loads the corpus described by `spec` and logs the per-domain counts.
pub fn load_dataset(spec: &DatasetSpec) -> Result<Dataset> {
    spec.validate()?;
    let dataset = if spec.is_synthetic() {
        generate_synthetic(&spec.synthetic, spec.num_domains(), spec.image_size, &spec.domain_names)
    } else {
        load_folder(spec)?
    };
    for (name, n) in dataset.domain_names.iter().zip(dataset.counts_per_domain()) {
        log::info!("domain `{name}`: {n} images");
    }
    Ok(dataset)
}

fn is_image_file(path: &Path) -> bool {
    matches!(
        path.extension().and_then(|e| e.to_str()).map(|e| e.to_ascii_lowercase()).as_deref(),
        Some("png" | "jpg" | "jpeg")
    )
}

/// Sorted image files directly inside `dir`.
pub fn list_images(dir: &Path) -> Result<Vec<PathBuf>> {
    if !dir.is_dir() {
        return Err(Error::MissingPath(dir.to_path_buf()));
    }
    let mut files: Vec<PathBuf> = std::fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_file() && is_image_file(p))
        .collect();
    files.sort();
    Ok(files)
}

fn load_folder(spec: &DatasetSpec) -> Result<Dataset> {
    let root = Path::new(&spec.root_path);
    if !root.is_dir() {
        return Err(Error::config_at("dataset.root_path", format!("directory `{}` does not exist", root.display())));
    }
    let mut images = Vec::new();
    let mut labels = Vec::new();
    for (k, name) in spec.domain_names.iter().enumerate() {
        let dir = root.join(name);
        if !dir.is_dir() {
            return Err(Error::config_at(
                "dataset.domain_names",
                format!("domain directory `{}` does not exist", dir.display()),
            ));
        }
        let before = images.len();
        for path in list_images(&dir)? {
            match image_io::load_image(&path, spec.crop_size, spec.image_size) {
                Ok(img) => {
                    images.push(img);
                    labels.push(k);
                }
                Err(e) => log::warn!("skipping undecodable image: {e}"),
            }
        }
        if images.len() == before {
            return Err(Error::Data(format!("empty domain `{name}` in `{}`", dir.display())));
        }
    }
    Ok(Dataset { domain_names: spec.domain_names.clone(), image_size: spec.image_size, images, labels })
}

/// Writes `dataset` in the folder layout accepted by [`load_dataset`].
pub fn dump_dataset(dataset: &Dataset, dir: &Path) -> Result<()> {
    let mut counters = vec![0usize; dataset.num_domains()];
    for (img, &label) in dataset.images.iter().zip(&dataset.labels) {
        let domain_dir = dir.join(&dataset.domain_names[label]);
        std::fs::create_dir_all(&domain_dir).map_err(|e| Error::io(&domain_dir, e))?;
        let path = domain_dir.join(format!("{:05}.png", counters[label]));
        image_io::save_image(img, &path)?;
        counters[label] += 1;
    }
    Ok(())
}

/// One-hot label planes `[B, K, H, H]`: channel `k` of item `b` is all ones
/// iff `labels[b] == k`.
pub fn encode_labels<T: styleshift_nn::Scalar>(labels: &[usize], num_domains: usize, size: usize) -> Result<Array4<T>> {
    let mut out = Array4::<T>::zeros((labels.len(), num_domains, size, size));
    for (b, &l) in labels.iter().enumerate() {
        if l >= num_domains {
            return Err(Error::Data(format!("label {l} out of range for {num_domains} domains")));
        }
        out.slice_mut(ndarray::s![b, l, .., ..]).fill(T::one());
    }
    Ok(out)
}

/// Mixes several integers into one well-spread 64-bit seed (SplitMix64 chain).
pub fn derive_seed(parts: &[u64]) -> u64 {
    let mut state = 0x9E37_79B9_7F4A_7C15u64;
    for &p in parts {
        state ^= p.wrapping_add(0x9E37_79B9_7F4A_7C15).wrapping_add(state << 6).wrapping_add(state >> 2);
        let mut z = state.wrapping_add(0x9E37_79B9_7F4A_7C15);
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        state = z ^ (z >> 31);
    }
    state
}
