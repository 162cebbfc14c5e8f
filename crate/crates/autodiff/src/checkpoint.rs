//! Versioned text checkpoint for a [`ParamStore`].
//!
//! ```text
//! STEERLAB-CKPT 1
//! meta <key> <value to end of line>
//! tensor <name> <ndim> <dim>...
//! <row-major values separated by spaces>
//! end
//! ```
//!
//! Values are written with Rust's shortest round-trip formatting, so a
//! save/load cycle is bit exact.

use std::io::{BufRead, Write};

use crate::error::{Error, Result};
use crate::params::ParamStore;
use crate::tensor::Tensor;

pub const MAGIC: &str = "STEERLAB-CKPT";
pub const VERSION: u32 = 1;

/// Free-form `key value` metadata stored alongside the tensors.
pub type Metadata = Vec<(String, String)>;

pub fn write_checkpoint<W: Write>(mut out: W, store: &ParamStore, meta: &[(String, String)]) -> Result<()> {
    writeln!(out, "{MAGIC} {VERSION}")?;
    for (k, v) in meta {
        if k.contains(char::is_whitespace) || v.contains('\n') {
            return Err(Error::Checkpoint(format!("metadata entry {k:?} is not representable")));
        }
        writeln!(out, "meta {k} {v}")?;
    }
    for p in store.iter() {
        if p.name.contains(char::is_whitespace) {
            return Err(Error::Checkpoint(format!("parameter name {:?} contains whitespace", p.name)));
        }
        write!(out, "tensor {} {}", p.name, p.value.shape().len())?;
        for d in p.value.shape() {
            write!(out, " {d}")?;
        }
        writeln!(out)?;
        let line: Vec<String> = p.value.data().iter().map(|x| format!("{x:?}")).collect();
        writeln!(out, "{}", line.join(" "))?;
    }
    writeln!(out, "end")?;
    Ok(())
}

pub fn read_checkpoint<R: BufRead>(input: R) -> Result<(ParamStore, Metadata)> {
    let mut lines = input.lines();
    let header = lines.next().ok_or_else(|| Error::Checkpoint("empty file".into()))??;
    let mut parts = header.split_whitespace();
    if parts.next() != Some(MAGIC) {
        return Err(Error::Checkpoint(format!("bad magic header {header:?}")));
    }
    let version: u32 = parts
        .next()
        .and_then(|v| v.parse().ok())
        .ok_or_else(|| Error::Checkpoint("missing version".into()))?;
    if version != VERSION {
        return Err(Error::Checkpoint(format!("unsupported version {version}")));
    }

    let mut store = ParamStore::new();
    let mut meta = Metadata::new();
    let mut ended = false;
    while let Some(line) = lines.next() {
        let line = line?;
        if line == "end" {
            ended = true;
            break;
        }
        if let Some(rest) = line.strip_prefix("meta ") {
            let (k, v) = rest.split_once(' ').unwrap_or((rest, ""));
            meta.push((k.to_string(), v.to_string()));
        } else if let Some(rest) = line.strip_prefix("tensor ") {
            let fields: Vec<&str> = rest.split_whitespace().collect();
            let bad = || Error::Checkpoint(format!("bad tensor header {line:?}"));
            let name = fields.first().ok_or_else(bad)?;
            let ndim: usize = fields.get(1).and_then(|s| s.parse().ok()).ok_or_else(bad)?;
            if fields.len() != 2 + ndim {
                return Err(bad());
            }
            let shape = fields[2..]
                .iter()
                .map(|s| s.parse::<usize>().map_err(|_| bad()))
                .collect::<Result<Vec<_>>>()?;
            let body = lines
                .next()
                .ok_or_else(|| Error::Checkpoint(format!("missing values for {name}")))??;
            let data = body
                .split_whitespace()
                .map(|s| s.parse::<f64>().map_err(|_| Error::Checkpoint(format!("bad value {s:?} in {name}"))))
                .collect::<Result<Vec<_>>>()?;
            store.insert(*name, Tensor::new(shape, data)?)?;
        } else if !line.trim().is_empty() {
            return Err(Error::Checkpoint(format!("unexpected line {line:?}")));
        }
    }
    if !ended {
        return Err(Error::Checkpoint("truncated file (no end marker)".into()));
    }
    Ok((store, meta))
}
