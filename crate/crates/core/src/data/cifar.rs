//! The CIFAR-10 binary format: 3073-byte records of one label byte and
//! 3072 pixel bytes (red, green, blue planes of 32×32, row-major).

use std::path::Path;

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const CIFAR_RECORD_LEN: usize = 1 + 3 * 32 * 32;

const CLASS_NAMES: [&str; 10] = [
    "airplane",
    "automobile",
    "bird",
    "cat",
    "deer",
    "dog",
    "frog",
    "horse",
    "ship",
    "truck",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CifarSplit {
    Train,
    Test,
}

/// Parses the concatenated records in `bytes`; pixels are scaled by 1/255.
pub fn parse_cifar10(bytes: &[u8]) -> Result<Dataset> {
    if !bytes.len().is_multiple_of(CIFAR_RECORD_LEN) {
        let offset = bytes.len() - bytes.len() % CIFAR_RECORD_LEN;
        return Err(Error::Format(format!(
            "truncated CIFAR-10 record at byte offset {offset} ({} of {CIFAR_RECORD_LEN} bytes)",
            bytes.len() - offset
        )));
    }
    let n = bytes.len() / CIFAR_RECORD_LEN;
    let mut labels = Vec::with_capacity(n);
    let mut data = Vec::with_capacity(n * (CIFAR_RECORD_LEN - 1));
    for (i, rec) in bytes.chunks_exact(CIFAR_RECORD_LEN).enumerate() {
        if rec[0] >= 10 {
            return Err(Error::Format(format!(
                "CIFAR-10 label {} at byte offset {} is not below 10",
                rec[0],
                i * CIFAR_RECORD_LEN
            )));
        }
        labels.push(rec[0] as usize);
        data.extend(rec[1..].iter().map(|&b| b as f64 / 255.0));
    }
    let mut ds = Dataset::new(Tensor::new(vec![n, 3, 32, 32], data)?, labels, 10)?;
    ds.class_names = Some(CLASS_NAMES.iter().map(|s| s.to_string()).collect());
    Ok(ds)
}

fn read_file(path: &Path) -> Result<Dataset> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    parse_cifar10(&bytes).map_err(|e| Error::Format(format!("{}: {e}", path.display())))
}

/// Loads `data_batch_{1..5}.bin` (train) or `test_batch.bin` (test) from
/// `dir`. Training batches that are missing are skipped, but at least one
/// must exist.
pub fn load_cifar10(dir: &Path, split: CifarSplit) -> Result<Dataset> {
    let names: Vec<String> = match split {
        CifarSplit::Train => (1..=5).map(|i| format!("data_batch_{i}.bin")).collect(),
        CifarSplit::Test => vec!["test_batch.bin".into()],
    };
    let parts: Vec<Dataset> = names
        .iter()
        .map(|n| dir.join(n))
        .filter(|p| p.exists())
        .map(|p| read_file(&p))
        .collect::<Result<_>>()?;
    if parts.is_empty() {
        return Err(Error::Format(format!(
            "{}: no CIFAR-10 batch files ({})",
            dir.display(),
            names.join(", ")
        )));
    }
    let n: usize = parts.iter().map(Dataset::len).sum();
    let mut data = Vec::with_capacity(n * (CIFAR_RECORD_LEN - 1));
    let mut labels = Vec::with_capacity(n);
    for p in &parts {
        data.extend_from_slice(p.images.data());
        labels.extend_from_slice(&p.labels);
    }
    let mut ds = Dataset::new(Tensor::new(vec![n, 3, 32, 32], data)?, labels, 10)?;
    ds.class_names = parts[0].class_names.clone();
    Ok(ds)
}
