//! Binary parameter files.
//!
//! Layout: the magic `HENT1`, then for each array a little-endian `u32`
//! name length, the UTF-8 name, a `u32` rank, `rank` `u32` extents and the
//! values as little-endian `f32`. Arrays follow each other until end of
//! file.

use std::fs;
use std::path::Path;

use super::params::ParamStore;
use crate::error::{Error, Result};
use crate::tensor::{Real, Tensor};

const MAGIC: &[u8; 5] = b"HENT1";

#[derive(Clone, Debug, Default)]
pub struct LoadOptions {
    /// Arrays whose names start with this prefix may be absent from the
    /// file; they keep their current values.
    pub allow_missing_prefix: Option<String>,
}

/// Writes every array whose name starts with `prefix` (all arrays when
/// `None`). Values are stored as `f32`.
pub fn checkpoint_save<S: Real>(
    store: &ParamStore<S>,
    path: &Path,
    prefix: Option<&str>,
) -> Result<usize> {
    let mut buf = MAGIC.to_vec();
    let mut written = 0;
    for (name, value) in store.names().iter().zip(store.tensors()) {
        if prefix.is_some_and(|p| !name.starts_with(p)) {
            continue;
        }
        buf.extend_from_slice(&(name.len() as u32).to_le_bytes());
        buf.extend_from_slice(name.as_bytes());
        buf.extend_from_slice(&(value.shape().len() as u32).to_le_bytes());
        for &e in value.shape() {
            buf.extend_from_slice(&(e as u32).to_le_bytes());
        }
        for &x in value.data() {
            buf.extend_from_slice(&(x.f64() as f32).to_le_bytes());
        }
        written += 1;
    }
    fs::write(path, buf).map_err(|e| Error::io(path, e))?;
    Ok(written)
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl Reader<'_> {
    fn take(&mut self, n: usize, what: &str) -> Result<&[u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| Error::Checkpoint(format!("truncated while reading {what}")))?;
        let out = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn u32(&mut self, what: &str) -> Result<usize> {
        let b = self.take(4, what)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]) as usize)
    }

    fn done(&self) -> bool {
        self.pos == self.bytes.len()
    }
}

/// Loads arrays into `store` by name. Unknown names, shape mismatches and
/// absent arrays (outside `allow_missing_prefix`) are errors; the store is
/// left untouched on error. Returns the number of arrays loaded.
pub fn checkpoint_load<S: Real>(
    store: &mut ParamStore<S>,
    path: &Path,
    opts: &LoadOptions,
) -> Result<usize> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    if bytes.len() < MAGIC.len() || &bytes[..MAGIC.len()] != MAGIC {
        return Err(Error::Checkpoint(format!(
            "{}: bad magic, not a parameter file",
            path.display()
        )));
    }
    let mut r = Reader {
        bytes: &bytes,
        pos: MAGIC.len(),
    };
    let mut loaded: Vec<(usize, Tensor<S>)> = Vec::new();
    let mut seen = vec![false; store.len()];
    while !r.done() {
        let len = r.u32("name length")?;
        let name = std::str::from_utf8(r.take(len, "name")?)
            .map_err(|_| Error::Checkpoint("array name is not UTF-8".into()))?
            .to_string();
        let rank = r.u32("rank")?;
        let mut shape = Vec::with_capacity(rank.min(8));
        for _ in 0..rank {
            shape.push(r.u32("extent")?);
        }
        let numel: usize = shape.iter().product();
        let raw = r.take(numel.saturating_mul(4), &format!("values of {name}"))?;
        let i = store
            .lookup(&name)
            .ok_or_else(|| Error::Checkpoint(format!("unknown array {name}")))?;
        if store.tensor(i).shape() != shape.as_slice() {
            return Err(Error::Checkpoint(format!(
                "{name}: file shape {shape:?}, model shape {:?}",
                store.tensor(i).shape()
            )));
        }
        if seen[i] {
            return Err(Error::Checkpoint(format!("{name} appears twice")));
        }
        seen[i] = true;
        let data = raw
            .chunks_exact(4)
            .map(|b| S::lit(f32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64))
            .collect();
        loaded.push((i, Tensor::new(shape, data)?));
    }
    let missing: Vec<&str> = (0..store.len())
        .filter(|&i| !seen[i])
        .map(|i| store.name(i))
        .filter(|n| {
            opts.allow_missing_prefix
                .as_deref()
                .is_none_or(|p| !n.starts_with(p))
        })
        .collect();
    if !missing.is_empty() {
        return Err(Error::Checkpoint(format!(
            "missing arrays: {}",
            missing.join(", ")
        )));
    }
    let count = loaded.len();
    for (i, t) in loaded {
        store.set(i, t);
    }
    Ok(count)
}
