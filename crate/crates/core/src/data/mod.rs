//! Datasets: readers, class-imbalance truncation, tiling and batching.

mod batch;
mod cifar;
pub mod pgm;

pub use batch::BatchIterator;
pub use cifar::{load_cifar10, parse_cifar10, CifarSplit, CIFAR_RECORD_LEN};

use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::gp::{read_gptx, GptxFile};
use crate::tensor::Tensor;

/// Images `(N, C, H, W)` with one class label each.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub images: Tensor,
    pub labels: Vec<usize>,
    pub n_classes: usize,
    pub class_names: Option<Vec<String>>,
}

impl Dataset {
    pub fn new(images: Tensor, labels: Vec<usize>, n_classes: usize) -> Result<Self> {
        if images.ndim() != 4 || images.shape()[0] != labels.len() {
            return Err(Error::invalid(
                "dataset",
                format!(
                    "images {:?} do not match {} labels",
                    images.shape(),
                    labels.len()
                ),
            ));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= n_classes) {
            return Err(Error::invalid(
                "dataset",
                format!("label {bad} out of range for {n_classes} classes"),
            ));
        }
        Ok(Dataset {
            images,
            labels,
            n_classes,
            class_names: None,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// Shape of one sample, `(C, H, W)`.
    pub fn sample_shape(&self) -> &[usize] {
        &self.images.shape()[1..]
    }

    /// Sample count per class.
    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.n_classes];
        for &l in &self.labels {
            counts[l] += 1;
        }
        counts
    }

    /// Indices of the samples of class `c`, in dataset order.
    pub fn indices_of(&self, c: usize) -> Vec<usize> {
        (0..self.len()).filter(|&i| self.labels[i] == c).collect()
    }

    /// The samples at `indices`, in that order.
    pub fn batch(&self, indices: &[usize]) -> (Tensor, Vec<usize>) {
        (
            self.images.select_leading(indices),
            indices.iter().map(|&i| self.labels[i]).collect(),
        )
    }

    pub fn subset(&self, indices: &[usize]) -> Dataset {
        let (images, labels) = self.batch(indices);
        Dataset {
            images,
            labels,
            n_classes: self.n_classes,
            class_names: self.class_names.clone(),
        }
    }

    pub fn from_gptx(file: &GptxFile) -> Result<Self> {
        let (h, w) = (file.height as usize, file.width as usize);
        let mut data = Vec::with_capacity(file.records.len() * h * w);
        for r in &file.records {
            data.extend(r.pixels.iter().map(|&v| v as f64));
        }
        let images = Tensor::new(vec![file.records.len(), 1, h, w], data)?;
        let labels = file.records.iter().map(|r| r.label as usize).collect();
        Dataset::new(images, labels, file.n_classes as usize)
    }

    pub fn load_gptx(path: &Path) -> Result<Self> {
        Dataset::from_gptx(&read_gptx(path)?)
    }
}

/// Keeps all of `class_a` (relabeled 1) and the first `⌊|a| / ratio⌋` of a
/// seeded shuffle of `class_b` (relabeled 0). Output is in dataset order.
pub fn truncate_binary_imbalance(
    ds: &Dataset,
    class_a: usize,
    class_b: usize,
    ratio: f64,
    seed: u64,
) -> Result<Dataset> {
    if ratio.is_nan() || ratio < 1.0 {
        return Err(Error::invalid("truncate_binary_imbalance", "ratio must be at least 1"));
    }
    let a = ds.indices_of(class_a);
    let mut b = ds.indices_of(class_b);
    for (c, idx) in [(class_a, &a), (class_b, &b)] {
        if idx.is_empty() {
            return Err(Error::invalid(
                "truncate_binary_imbalance",
                format!("class {c} is absent"),
            ));
        }
    }
    let keep_b = ((a.len() as f64 / ratio).floor() as usize).min(b.len());
    b.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    b.truncate(keep_b);
    let mut keep: Vec<usize> = a.iter().chain(&b).copied().collect();
    keep.sort_unstable();
    let mut out = ds.subset(&keep);
    out.labels = keep.iter().map(|&i| usize::from(ds.labels[i] == class_a)).collect();
    out.n_classes = 2;
    out.class_names = ds
        .class_names
        .as_ref()
        .map(|n| vec![n[class_b].clone(), n[class_a].clone()]);
    Ok(out)
}

/// Class `c` keeps `unit · (c + 1)` samples chosen by a seeded shuffle.
pub fn truncate_linear_imbalance(ds: &Dataset, unit: usize, seed: u64) -> Result<Dataset> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut keep = Vec::new();
    for c in 0..ds.n_classes {
        let mut idx = ds.indices_of(c);
        let want = unit * (c + 1);
        if idx.len() < want {
            return Err(Error::invalid(
                "truncate_linear_imbalance",
                format!("class {c} has {} samples, needs {want}", idx.len()),
            ));
        }
        idx.shuffle(&mut rng);
        keep.extend_from_slice(&idx[..want]);
    }
    keep.sort_unstable();
    Ok(ds.subset(&keep))
}

/// Splits every image into an `s × s` grid of equal tiles that inherit the
/// parent's label. Tiles of one image are consecutive, row-major.
pub fn crop_grid(ds: &Dataset, s: usize) -> Result<Dataset> {
    let &[n, c, h, w] = ds.images.shape() else {
        unreachable!("dataset images are 4-d")
    };
    if s == 0 || h % s != 0 || w % s != 0 {
        return Err(Error::invalid(
            "crop_grid",
            format!("{h}x{w} images do not split into a {s}x{s} grid"),
        ));
    }
    let (th, tw) = (h / s, w / s);
    let src = ds.images.data();
    let mut data = Vec::with_capacity(src.len());
    let mut labels = Vec::with_capacity(n * s * s);
    for i in 0..n {
        for ty in 0..s {
            for tx in 0..s {
                for ch in 0..c {
                    let plane = (i * c + ch) * h * w;
                    for y in ty * th..(ty + 1) * th {
                        let row = plane + y * w + tx * tw;
                        data.extend_from_slice(&src[row..row + tw]);
                    }
                }
                labels.push(ds.labels[i]);
            }
        }
    }
    let mut out = Dataset::new(Tensor::new(vec![n * s * s, c, th, tw], data)?, labels, ds.n_classes)?;
    out.class_names = ds.class_names.clone();
    Ok(out)
}

/// Isotropic Gaussian clouds in `dim` dimensions, one per class, with means
/// `separation` apart along successive coordinate axes. Samples are stored
/// as `(N, dim, 1, 1)` in class-major order.
pub fn gaussian_clouds(counts: &[usize], dim: usize, separation: f64, seed: u64) -> Result<Dataset> {
    if dim == 0 || counts.is_empty() {
        return Err(Error::invalid("gaussian_clouds", "need at least one class and dimension"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut data = Vec::new();
    let mut labels = Vec::new();
    for (c, &n) in counts.iter().enumerate() {
        let mut mean = vec![0.0; dim];
        if c > 0 {
            mean[(c - 1) % dim] = separation;
        }
        for _ in 0..n {
            for m in &mean {
                let z: f64 = StandardNormal.sample(&mut rng);
                data.push(m + z);
            }
            labels.push(c);
        }
    }
    let n = labels.len();
    Dataset::new(Tensor::new(vec![n, dim, 1, 1], data)?, labels, counts.len())
}
