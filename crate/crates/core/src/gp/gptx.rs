//! The GPTX texture dataset format.
//!
//! Little-endian throughout: magic `GPTX`, `u32` version, `u32` record
//! count, `u32` height, `u32` width, `u16` class count, then per record a
//! `u16` label followed by `height * width` `f32` pixels in row-major order.

use std::path::Path;

use crate::error::{Error, Result};

pub const GPTX_MAGIC: &[u8; 4] = b"GPTX";
pub const GPTX_VERSION: u32 = 1;
const HEADER_LEN: usize = 4 + 4 + 4 + 4 + 4 + 2;

#[derive(Debug, Clone, PartialEq)]
pub struct GptxRecord {
    pub label: u16,
    pub pixels: Vec<f32>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GptxFile {
    pub height: u32,
    pub width: u32,
    pub n_classes: u16,
    pub records: Vec<GptxRecord>,
}

impl GptxFile {
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let px = self.height as usize * self.width as usize;
        let mut out = Vec::with_capacity(HEADER_LEN + self.records.len() * (2 + 4 * px));
        out.extend_from_slice(GPTX_MAGIC);
        out.extend_from_slice(&GPTX_VERSION.to_le_bytes());
        out.extend_from_slice(&(self.records.len() as u32).to_le_bytes());
        out.extend_from_slice(&self.height.to_le_bytes());
        out.extend_from_slice(&self.width.to_le_bytes());
        out.extend_from_slice(&self.n_classes.to_le_bytes());
        for (i, r) in self.records.iter().enumerate() {
            if r.pixels.len() != px {
                return Err(Error::Format(format!(
                    "record {i} has {} pixels, expected {px}",
                    r.pixels.len()
                )));
            }
            if r.label >= self.n_classes {
                return Err(Error::Format(format!(
                    "record {i} label {} out of range for {} classes",
                    r.label, self.n_classes
                )));
            }
            out.extend_from_slice(&r.label.to_le_bytes());
            for v in &r.pixels {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < HEADER_LEN {
            return Err(Error::Format(format!(
                "GPTX header needs {HEADER_LEN} bytes, file has {}",
                bytes.len()
            )));
        }
        if &bytes[..4] != GPTX_MAGIC {
            return Err(Error::Format("bad magic: not a GPTX file".into()));
        }
        let u32_at = |o: usize| u32::from_le_bytes(bytes[o..o + 4].try_into().expect("4 bytes"));
        let version = u32_at(4);
        if version != GPTX_VERSION {
            return Err(Error::Format(format!("unsupported GPTX version {version}")));
        }
        let n = u32_at(8) as usize;
        let height = u32_at(12);
        let width = u32_at(16);
        let n_classes = u16::from_le_bytes([bytes[20], bytes[21]]);
        let px = height as usize * width as usize;
        let rec_len = 2 + 4 * px;
        let expected = HEADER_LEN + n * rec_len;
        if bytes.len() != expected {
            return Err(Error::Format(format!(
                "GPTX with {n} records of {height}x{width} needs {expected} bytes, file has {}",
                bytes.len()
            )));
        }
        let mut records = Vec::with_capacity(n);
        for i in 0..n {
            let o = HEADER_LEN + i * rec_len;
            let label = u16::from_le_bytes([bytes[o], bytes[o + 1]]);
            if label >= n_classes {
                return Err(Error::Format(format!(
                    "record {i} at byte {o}: label {label} out of range for {n_classes} classes"
                )));
            }
            let pixels = bytes[o + 2..o + rec_len]
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
                .collect();
            records.push(GptxRecord { label, pixels });
        }
        Ok(GptxFile {
            height,
            width,
            n_classes,
            records,
        })
    }
}

pub fn write_gptx(path: &Path, file: &GptxFile) -> Result<()> {
    std::fs::write(path, file.to_bytes()?).map_err(|e| Error::io(path, e))
}

pub fn read_gptx(path: &Path) -> Result<GptxFile> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    GptxFile::from_bytes(&bytes)
}
