//! Two-scale Gaussian-process textures.
//!
//! Fields are drawn by spectral synthesis on a torus: complex white noise is
//! shaped by the square root of the discrete power spectrum of the
//! squared-exponential kernel and transformed back to pixel space. A texture
//! class combines one short and one long correlation length.

mod gptx;

pub use gptx::{read_gptx, write_gptx, GptxFile, GptxRecord, GPTX_MAGIC, GPTX_VERSION};

use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rustfft::num_complex::Complex;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// How the short- and long-scale fields are combined.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Composition {
    /// Circular convolution of the two fields.
    #[default]
    Convolve,
    /// Elementwise product.
    Multiply,
}

impl std::str::FromStr for Composition {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "convolve" => Ok(Composition::Convolve),
            "multiply" => Ok(Composition::Multiply),
            other => Err(Error::Config(format!(
                "unknown composition mode `{other}` (expected convolve or multiply)"
            ))),
        }
    }
}

/// Correlation lengths (in pixels) of one texture class.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GpClassSpec {
    pub ell_small: f64,
    pub ell_large: f64,
    pub label: u16,
}

impl GpClassSpec {
    pub fn validate(&self, h: usize, w: usize) -> Result<()> {
        let limit = h.min(w) as f64 / 2.0;
        if !(self.ell_small > 0.0 && self.ell_small < self.ell_large && self.ell_large < limit) {
            return Err(Error::invalid(
                "gp_class",
                format!(
                    "class {} needs 0 < ell_small < ell_large < {limit}, got ({}, {})",
                    self.label, self.ell_small, self.ell_large
                ),
            ));
        }
        Ok(())
    }
}

/// The default 128×128 class grid: two short lengths crossed with two long.
pub fn desk_classes() -> Vec<GpClassSpec> {
    [(2.4, 20.0), (2.5, 20.0), (2.4, 35.0), (2.5, 35.0)]
        .iter()
        .enumerate()
        .map(|(i, &(s, l))| GpClassSpec {
            ell_small: s,
            ell_large: l,
            label: i as u16,
        })
        .collect()
}

/// A normalized texture image `(H, W)` with its class and generation seed.
#[derive(Debug, Clone, PartialEq)]
pub struct TextureSample {
    pub image: Tensor,
    pub label: u16,
    pub seed: u64,
}

fn fft2(buf: &mut [Complex<f64>], h: usize, w: usize, inverse: bool) {
    let mut planner = FftPlanner::new();
    let (row, col) = if inverse {
        (planner.plan_fft_inverse(w), planner.plan_fft_inverse(h))
    } else {
        (planner.plan_fft_forward(w), planner.plan_fft_forward(h))
    };
    row.process(buf);
    let mut column = vec![Complex::default(); h];
    for x in 0..w {
        for y in 0..h {
            column[y] = buf[y * w + x];
        }
        col.process(&mut column);
        for y in 0..h {
            buf[y * w + x] = column[y];
        }
    }
}

fn to_complex(data: &[f64]) -> Vec<Complex<f64>> {
    data.iter().map(|&re| Complex::new(re, 0.0)).collect()
}

/// Shifts to mean 0 and scales to (population) variance 1.
pub fn normalize(data: &mut [f64]) -> Result<()> {
    let n = data.len() as f64;
    let mean = data.iter().sum::<f64>() / n;
    data.iter_mut().for_each(|v| *v -= mean);
    let var = data.iter().map(|v| v * v).sum::<f64>() / n;
    if !(var > 0.0 && var.is_finite()) {
        return Err(Error::invalid("normalize", "field has zero or non-finite variance"));
    }
    let inv = 1.0 / var.sqrt();
    data.iter_mut().for_each(|v| *v *= inv);
    Ok(())
}

/// Square root of the power spectrum of the squared-exponential kernel
/// wrapped onto an `h × w` torus.
fn kernel_amplitude(h: usize, w: usize, ell: f64) -> Vec<f64> {
    let mut k = Vec::with_capacity(h * w);
    for y in 0..h {
        let dy = y.min(h - y) as f64;
        for x in 0..w {
            let dx = x.min(w - x) as f64;
            k.push((-(dy * dy + dx * dx) / (2.0 * ell * ell)).exp());
        }
    }
    let mut spec = to_complex(&k);
    fft2(&mut spec, h, w, false);
    // the wrapped kernel is symmetric, so the spectrum is real up to rounding;
    // tiny negative values from truncation are clipped
    spec.iter().map(|c| c.re.max(0.0).sqrt()).collect()
}

fn check_grid(h: usize, w: usize, ell: f64) -> Result<()> {
    if h == 0 || w == 0 {
        return Err(Error::invalid("gp_sample_field", "empty grid"));
    }
    let limit = h.min(w) as f64 / 2.0;
    if !(ell > 0.0 && ell < limit) {
        return Err(Error::invalid(
            "gp_sample_field",
            format!("correlation length {ell} must lie in (0, {limit}) for a {h}x{w} grid"),
        ));
    }
    Ok(())
}

fn sample_with(h: usize, w: usize, ell: f64, rng: &mut ChaCha8Rng) -> Result<Vec<f64>> {
    check_grid(h, w, ell)?;
    let amp = kernel_amplitude(h, w, ell);
    let mut buf: Vec<Complex<f64>> = amp
        .iter()
        .map(|&a| {
            let re: f64 = StandardNormal.sample(rng);
            let im: f64 = StandardNormal.sample(rng);
            Complex::new(a * re, a * im)
        })
        .collect();
    fft2(&mut buf, h, w, true);
    let mut field: Vec<f64> = buf.iter().map(|c| c.re).collect();
    normalize(&mut field)?;
    Ok(field)
}

/// A stationary Gaussian field with covariance `exp(-r²/(2ℓ²))` on an
/// `h × w` torus, normalized to mean 0 and variance 1.
pub fn gp_sample_field(h: usize, w: usize, ell: f64, seed: u64) -> Result<Tensor> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Tensor::new(vec![h, w], sample_with(h, w, ell, &mut rng)?)
}

/// Combines two `(H, W)` fields and renormalizes the result.
pub fn compose(small: &Tensor, large: &Tensor, mode: Composition) -> Result<Tensor> {
    if small.shape() != large.shape() || small.ndim() != 2 {
        return Err(Error::Shape {
            op: "compose",
            lhs: small.shape().to_vec(),
            rhs: large.shape().to_vec(),
        });
    }
    let (h, w) = (small.shape()[0], small.shape()[1]);
    let mut out = match mode {
        Composition::Multiply => small.zip_map(large, |a, b| a * b).into_data(),
        Composition::Convolve => {
            let mut a = to_complex(small.data());
            let mut b = to_complex(large.data());
            fft2(&mut a, h, w, false);
            fft2(&mut b, h, w, false);
            a.iter_mut().zip(&b).for_each(|(x, y)| *x *= y);
            fft2(&mut a, h, w, true);
            a.iter().map(|c| c.re).collect()
        }
    };
    normalize(&mut out)?;
    Tensor::new(vec![h, w], out)
}

/// Draws independent short- and long-scale fields and composes them.
pub fn two_scale_sample(
    spec: &GpClassSpec,
    h: usize,
    w: usize,
    mode: Composition,
    seed: u64,
) -> Result<TextureSample> {
    spec.validate(h, w)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let small = Tensor::new(vec![h, w], sample_with(h, w, spec.ell_small, &mut rng)?)?;
    let large = Tensor::new(vec![h, w], sample_with(h, w, spec.ell_large, &mut rng)?)?;
    Ok(TextureSample {
        image: compose(&small, &large, mode)?,
        label: spec.label,
        seed,
    })
}

/// Mixes a base seed with coordinates into an independent-looking seed.
pub fn derive_seed(base: u64, parts: &[u64]) -> u64 {
    // splitmix64 finalizer applied after each part
    let mut z = base;
    for &p in parts {
        z = z.wrapping_add(p).wrapping_add(0x9E37_79B9_7F4A_7C15);
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^= z >> 31;
    }
    z
}

fn check_specs(specs: &[GpClassSpec], h: usize, w: usize) -> Result<()> {
    if specs.is_empty() {
        return Err(Error::invalid("make_gp_dataset", "no classes given"));
    }
    for (i, s) in specs.iter().enumerate() {
        s.validate(h, w)?;
        if specs[..i].iter().any(|o| o.label == s.label) {
            return Err(Error::invalid(
                "make_gp_dataset",
                format!("duplicate label {}", s.label),
            ));
        }
    }
    Ok(())
}

/// Generates `n` samples per class of one split.
pub fn generate_split(
    specs: &[GpClassSpec],
    h: usize,
    w: usize,
    n_per_class: usize,
    mode: Composition,
    seed: u64,
    split: u64,
) -> Result<GptxFile> {
    check_specs(specs, h, w)?;
    let n_classes = specs.iter().map(|s| s.label).max().unwrap_or(0) + 1;
    let mut records = Vec::with_capacity(specs.len() * n_per_class);
    for spec in specs {
        for i in 0..n_per_class {
            let s = derive_seed(seed, &[split, spec.label as u64, i as u64]);
            let sample = two_scale_sample(spec, h, w, mode, s)?;
            records.push(GptxRecord {
                label: sample.label,
                pixels: sample.image.data().iter().map(|&v| v as f32).collect(),
            });
        }
    }
    Ok(GptxFile {
        height: h as u32,
        width: w as u32,
        n_classes,
        records,
    })
}

/// Writes `train.gptx` and `test.gptx` into `out_dir`.
#[allow(clippy::too_many_arguments)]
pub fn make_gp_dataset(
    specs: &[GpClassSpec],
    h: usize,
    w: usize,
    n_train_per_class: usize,
    n_test_per_class: usize,
    mode: Composition,
    seed: u64,
    out_dir: &Path,
) -> Result<(PathBuf, PathBuf)> {
    let train = generate_split(specs, h, w, n_train_per_class, mode, seed, 0)?;
    let test = generate_split(specs, h, w, n_test_per_class, mode, seed, 1)?;
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let train_path = out_dir.join("train.gptx");
    let test_path = out_dir.join("test.gptx");
    write_gptx(&train_path, &train)?;
    write_gptx(&test_path, &test)?;
    Ok((train_path, test_path))
}

fn distinct_sorted(values: impl Iterator<Item = f64>) -> Vec<f64> {
    let mut v: Vec<f64> = values.collect();
    v.sort_by(f64::total_cmp);
    v.dedup();
    v
}

/// Maps a class to its (short-scale, long-scale) factor indices, given a
/// class set that forms a full factorial grid.
pub fn scale_labels(label: u16, specs: &[GpClassSpec]) -> Result<(usize, usize)> {
    let smalls = distinct_sorted(specs.iter().map(|s| s.ell_small));
    let larges = distinct_sorted(specs.iter().map(|s| s.ell_large));
    let factorial = specs.len() == smalls.len() * larges.len()
        && smalls.iter().all(|&s| {
            larges
                .iter()
                .all(|&l| specs.iter().filter(|c| c.ell_small == s && c.ell_large == l).count() == 1)
        });
    if !factorial {
        return Err(Error::invalid(
            "scale_labels",
            "class lengths do not form a factorial grid",
        ));
    }
    let spec = specs
        .iter()
        .find(|s| s.label == label)
        .ok_or_else(|| Error::invalid("scale_labels", format!("unknown label {label}")))?;
    let si = smalls.iter().position(|&s| s == spec.ell_small).expect("present");
    let li = larges.iter().position(|&l| l == spec.ell_large).expect("present");
    Ok((si, li))
}

/// Average normalized autocorrelation of a periodic field at lag `r` along
/// both axes.
pub fn autocorrelation(field: &Tensor, r: usize) -> f64 {
    let (h, w) = (field.shape()[0], field.shape()[1]);
    let d = field.data();
    let n = d.len() as f64;
    let mean = d.iter().sum::<f64>() / n;
    let var = d.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    let mut acc = 0.0;
    for y in 0..h {
        for x in 0..w {
            let c = d[y * w + x] - mean;
            acc += c * (d[y * w + (x + r) % w] - mean);
            acc += c * (d[((y + r) % h) * w + x] - mean);
        }
    }
    acc / (2.0 * n * var)
}
