//! 8-bit binary PGM (`P5`) images and class-per-directory image folders.

use std::path::Path;

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Encodes `(H, W)` values as an 8-bit PGM, mapping `[lo, hi]` linearly onto
/// `[0, 255]` and clamping outside it.
pub fn encode(pixels: &[f64], h: usize, w: usize, lo: f64, hi: f64) -> Result<Vec<u8>> {
    if pixels.len() != h * w {
        return Err(Error::invalid(
            "pgm",
            format!("{} pixels for a {h}x{w} image", pixels.len()),
        ));
    }
    let mut out = format!("P5\n{w} {h}\n255\n").into_bytes();
    out.extend(pixels.iter().map(|&v| {
        let t = ((v - lo) / (hi - lo) * 255.0).round();
        t.clamp(0.0, 255.0) as u8
    }));
    Ok(out)
}

/// Decodes a `P5` image with maxval below 256 into `(H, W)` values scaled
/// to `[0, 1]`.
pub fn decode(bytes: &[u8]) -> Result<(usize, usize, Vec<f64>)> {
    let mut fields = Vec::with_capacity(4);
    let mut pos = 0;
    while fields.len() < 4 {
        while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if pos < bytes.len() && bytes[pos] == b'#' {
            while pos < bytes.len() && bytes[pos] != b'\n' {
                pos += 1;
            }
            continue;
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(Error::Format("PGM header ended early".into()));
        }
        fields.push(String::from_utf8_lossy(&bytes[start..pos]).into_owned());
    }
    // exactly one whitespace byte separates the header from the raster
    pos += 1;
    if fields[0] != "P5" {
        return Err(Error::Format(format!("expected P5 magic, found `{}`", fields[0])));
    }
    let num = |s: &str| {
        s.parse::<usize>()
            .map_err(|_| Error::Format(format!("bad PGM header field `{s}`")))
    };
    let (w, h, maxval) = (num(&fields[1])?, num(&fields[2])?, num(&fields[3])?);
    if maxval == 0 || maxval > 255 {
        return Err(Error::Format(format!("unsupported PGM maxval {maxval}")));
    }
    let raster = bytes.get(pos..pos + w * h).ok_or_else(|| {
        Error::Format(format!("PGM raster needs {} bytes after offset {pos}", w * h))
    })?;
    Ok((h, w, raster.iter().map(|&b| b as f64 / maxval as f64).collect()))
}

/// Reads `<dir>/<class>/<name>.pgm`. Classes are the subdirectories in
/// lexicographic order; all images must share one size.
pub fn read_image_folder(dir: &Path) -> Result<Dataset> {
    let mut classes: Vec<_> = std::fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|e| e.ok())
        .filter(|e| e.path().is_dir())
        .map(|e| e.file_name().to_string_lossy().into_owned())
        .collect();
    classes.sort();
    let mut size = None;
    let mut data = Vec::new();
    let mut labels = Vec::new();
    for (c, name) in classes.iter().enumerate() {
        let class_dir = dir.join(name);
        let mut files: Vec<_> = std::fs::read_dir(&class_dir)
            .map_err(|e| Error::io(&class_dir, e))?
            .filter_map(|e| e.ok())
            .map(|e| e.path())
            .filter(|p| p.extension().is_some_and(|x| x == "pgm"))
            .collect();
        files.sort();
        for path in files {
            let bytes = std::fs::read(&path).map_err(|e| Error::io(&path, e))?;
            let (h, w, px) = decode(&bytes)
                .map_err(|e| Error::Format(format!("{}: {e}", path.display())))?;
            if *size.get_or_insert((h, w)) != (h, w) {
                return Err(Error::Format(format!(
                    "{}: {h}x{w} differs from earlier images",
                    path.display()
                )));
            }
            data.extend(px);
            labels.push(c);
        }
    }
    let (h, w) = size.unwrap_or((0, 0));
    let n = labels.len();
    let mut ds = Dataset::new(Tensor::new(vec![n, 1, h, w], data)?, labels, classes.len())?;
    ds.class_names = Some(classes);
    Ok(ds)
}
