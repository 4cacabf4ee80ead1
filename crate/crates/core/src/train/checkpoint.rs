//! Binary checkpoints.
//!
//! Little-endian: magic `BKDP`, `u32` version, the architecture name and its
//! TOML text (each a `u32` byte length then UTF-8), the per-sample input
//! shape (`u32` rank then `u32` extents), and a `u32` count of named tensors
//! — parameters, then batch-norm running statistics, then optimizer
//! velocities — each stored as name, `u32` rank, `u32` extents and `f64`
//! values.

use std::path::Path;

use crate::error::{Error, Result};
use crate::nn::{build_model, ArchSpec, BuildOptions, ModelState};
use crate::tensor::Tensor;

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"BKDP";
pub const CHECKPOINT_VERSION: u32 = 1;
const VELOCITY_PREFIX: &str = "velocity:";

#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub model: ModelState,
    /// Optimizer state in parameter order; empty if none was saved.
    pub velocities: Vec<Tensor>,
}

fn put_u32(out: &mut Vec<u8>, v: usize) {
    out.extend_from_slice(&(v as u32).to_le_bytes());
}

fn put_str(out: &mut Vec<u8>, s: &str) {
    put_u32(out, s.len());
    out.extend_from_slice(s.as_bytes());
}

fn put_tensor(out: &mut Vec<u8>, name: &str, t: &Tensor) {
    put_str(out, name);
    put_u32(out, t.ndim());
    for &d in t.shape() {
        put_u32(out, d);
    }
    for v in t.data() {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

pub fn checkpoint_bytes(model: &ModelState, velocities: &[Tensor]) -> Result<Vec<u8>> {
    let spec_text = toml::to_string(model.spec()).map_err(|e| Error::Format(e.to_string()))?;
    let mut out = Vec::new();
    out.extend_from_slice(CHECKPOINT_MAGIC);
    put_u32(&mut out, CHECKPOINT_VERSION as usize);
    put_str(&mut out, &model.spec().name);
    put_str(&mut out, &spec_text);
    put_u32(&mut out, model.input_shape().len());
    for &d in model.input_shape() {
        put_u32(&mut out, d);
    }
    let params = model.params();
    let buffers = model.buffers();
    put_u32(&mut out, params.len() + buffers.len() + velocities.len());
    for (name, t) in params.iter().chain(&buffers) {
        put_tensor(&mut out, name, t);
    }
    for ((name, _), v) in params.iter().zip(velocities) {
        put_tensor(&mut out, &format!("{VELOCITY_PREFIX}{name}"), v);
    }
    Ok(out)
}

pub fn save_checkpoint(path: &Path, model: &ModelState, velocities: &[Tensor]) -> Result<()> {
    std::fs::write(path, checkpoint_bytes(model, velocities)?).map_err(|e| Error::io(path, e))
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl Reader<'_> {
    fn take(&mut self, n: usize) -> Result<&[u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| {
            Error::Format(format!("checkpoint truncated at byte offset {}", self.pos))
        })?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<usize> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")) as usize)
    }

    fn string(&mut self) -> Result<String> {
        let n = self.u32()?;
        String::from_utf8(self.take(n)?.to_vec())
            .map_err(|_| Error::Format("checkpoint string is not UTF-8".into()))
    }

    fn shape(&mut self) -> Result<Vec<usize>> {
        let rank = self.u32()?;
        (0..rank).map(|_| self.u32()).collect()
    }

    fn tensor(&mut self) -> Result<(String, Tensor)> {
        let name = self.string()?;
        let shape = self.shape()?;
        let n: usize = shape.iter().product();
        let data = self
            .take(n * 8)?
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        Ok((name, Tensor::new(shape, data)?))
    }
}

pub fn checkpoint_from_bytes(bytes: &[u8], expected_arch: Option<&str>) -> Result<Checkpoint> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(4)? != CHECKPOINT_MAGIC {
        return Err(Error::Format("bad magic: not a checkpoint".into()));
    }
    let version = r.u32()?;
    if version != CHECKPOINT_VERSION as usize {
        return Err(Error::Format(format!("unsupported checkpoint version {version}")));
    }
    let name = r.string()?;
    if let Some(want) = expected_arch {
        if want != name {
            return Err(Error::Format(format!(
                "checkpoint holds architecture `{name}`, expected `{want}`"
            )));
        }
    }
    let spec: ArchSpec = toml::from_str(&r.string()?)
        .map_err(|e| Error::Format(format!("checkpoint architecture: {e}")))?;
    if spec.name != name {
        return Err(Error::Format("checkpoint architecture name is inconsistent".into()));
    }
    let input_shape = r.shape()?;
    let mut model = build_model(&spec, &input_shape, BuildOptions::default())?;
    let count = r.u32()?;
    let mut stored = Vec::with_capacity(count);
    for _ in 0..count {
        stored.push(r.tensor()?);
    }
    if r.pos != bytes.len() {
        return Err(Error::Format(format!("trailing bytes after offset {}", r.pos)));
    }
    let names: Vec<String> = model
        .params()
        .into_iter()
        .chain(model.buffers())
        .map(|(n, _)| n)
        .collect();
    if stored.len() < names.len() {
        return Err(Error::Format(format!(
            "checkpoint has {} tensors, architecture needs {}",
            stored.len(),
            names.len()
        )));
    }
    let (state, velocities) = stored.split_at(names.len());
    {
        let mut dests = model.params_mut();
        for (dst, (want, (got, t))) in dests.iter_mut().zip(names.iter().zip(state)) {
            assign(dst, want, got, t)?;
        }
    }
    let n_params = model.params().len();
    {
        let mut dests = model.buffers_mut();
        for (dst, (want, (got, t))) in dests
            .iter_mut()
            .zip(names[n_params..].iter().zip(&state[n_params..]))
        {
            assign(dst, want, got, t)?;
        }
    }
    let param_names: Vec<String> = model.params().into_iter().map(|(n, _)| n).collect();
    let velocities = if velocities.is_empty() {
        Vec::new()
    } else if velocities.len() == param_names.len()
        && velocities
            .iter()
            .zip(&param_names)
            .all(|((n, _), p)| n.strip_prefix(VELOCITY_PREFIX) == Some(p.as_str()))
    {
        velocities.iter().map(|(_, t)| t.clone()).collect()
    } else {
        return Err(Error::Format("checkpoint velocities do not match parameters".into()));
    };
    Ok(Checkpoint { model, velocities })
}

fn assign(dst: &mut Tensor, want: &str, got: &str, t: &Tensor) -> Result<()> {
    if want != got || dst.shape() != t.shape() {
        return Err(Error::Format(format!(
            "checkpoint tensor `{got}` {:?} does not match `{want}` {:?}",
            t.shape(),
            dst.shape()
        )));
    }
    *dst = t.clone();
    Ok(())
}

pub fn load_checkpoint(path: &Path, expected_arch: Option<&str>) -> Result<Checkpoint> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    checkpoint_from_bytes(&bytes, expected_arch)
}
