//! Checkpoint file: a UTF-8 manifest followed by little-endian `f32` data.
//!
//! ```text
//! MAMBATTN-CKPT
//! format_version 1
//! config channels 64
//! ...
//! tensor enc.in.w 64,2,1,1 0
//! ...
//! end
//! <raw f32 bytes; offsets are relative to the first byte after "end\n">
//! ```

use std::fs;
use std::path::Path;

use super::config::ModelConfig;
use super::model::Model;
use crate::error::{Error, Result};

pub const CHECKPOINT_MAGIC: &str = "MAMBATTN-CKPT";
pub const CHECKPOINT_VERSION: u32 = 1;

pub fn save_checkpoint(model: &Model, path: &Path) -> Result<()> {
    let mut head = format!("{CHECKPOINT_MAGIC}\nformat_version {CHECKPOINT_VERSION}\n");
    for (k, v) in model.config.to_pairs() {
        head.push_str(&format!("config {k} {v}\n"));
    }
    let mut data = Vec::with_capacity(model.store.scalar_count() * 4);
    for (_, name, t) in model.store.iter() {
        let dims: Vec<String> = t.shape().iter().map(|d| d.to_string()).collect();
        let dims = if dims.is_empty() { "scalar".to_string() } else { dims.join(",") };
        head.push_str(&format!("tensor {name} {dims} {}\n", data.len()));
        for &v in t.data() {
            data.extend_from_slice(&(v as f32).to_le_bytes());
        }
    }
    head.push_str("end\n");
    let mut bytes = head.into_bytes();
    bytes.extend_from_slice(&data);
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

struct Entry {
    name: String,
    shape: Vec<usize>,
    offset: usize,
}

pub fn load_checkpoint(path: &Path) -> Result<Model> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let bad = |d: String| Error::format(path, d);
    let end = bytes
        .windows(5)
        .position(|w| w == b"\nend\n")
        .ok_or_else(|| bad("manifest has no `end` line".into()))?;
    let head = std::str::from_utf8(&bytes[..end]).map_err(|_| bad("manifest is not UTF-8".into()))?;
    let data = &bytes[end + 5..];
    let mut lines = head.lines();
    if lines.next() != Some(CHECKPOINT_MAGIC) {
        return Err(bad(format!("not a checkpoint (missing `{CHECKPOINT_MAGIC}` header)")));
    }
    let mut config = ModelConfig::default();
    let mut version = None;
    let mut entries = Vec::new();
    for (no, line) in lines.enumerate() {
        let parts: Vec<&str> = line.split_whitespace().collect();
        match parts.as_slice() {
            ["format_version", v] => version = v.parse::<u32>().ok(),
            ["config", k, v] => {
                if !config.set(k, v).map_err(|e| bad(e.to_string()))? {
                    return Err(bad(format!("unknown config key `{k}`")));
                }
            }
            ["tensor", name, dims, offset] => {
                let shape = if *dims == "scalar" {
                    Vec::new()
                } else {
                    dims.split(',')
                        .map(|d| d.parse::<usize>())
                        .collect::<std::result::Result<Vec<_>, _>>()
                        .map_err(|_| bad(format!("line {}: bad dims `{dims}`", no + 2)))?
                };
                let offset = offset.parse().map_err(|_| bad(format!("line {}: bad offset", no + 2)))?;
                entries.push(Entry {
                    name: name.to_string(),
                    shape,
                    offset,
                });
            }
            _ => return Err(bad(format!("line {}: cannot parse `{line}`", no + 2))),
        }
    }
    match version {
        Some(CHECKPOINT_VERSION) => {}
        Some(v) => return Err(bad(format!("format_version {v} is not supported (expected {CHECKPOINT_VERSION})"))),
        None => return Err(bad("missing format_version".into())),
    }
    let mut model = Model::new(config, 0).map_err(|e| bad(e.to_string()))?;
    if entries.len() != model.store.len() {
        return Err(bad(format!(
            "{} tensors stored, the configured model has {}",
            entries.len(),
            model.store.len()
        )));
    }
    for e in entries {
        let id = model
            .store
            .find(&e.name)
            .ok_or_else(|| bad(format!("tensor `{}` does not belong to the configured model", e.name)))?;
        let t = model.store.get_mut(id);
        if t.shape() != e.shape.as_slice() {
            return Err(bad(format!("tensor `{}` has shape {:?}, model expects {:?}", e.name, e.shape, t.shape())));
        }
        let n = t.numel();
        let raw = data
            .get(e.offset..e.offset + 4 * n)
            .ok_or_else(|| bad(format!("tensor `{}` runs past the end of the file", e.name)))?;
        for (dst, chunk) in t.data_mut().iter_mut().zip(raw.chunks_exact(4)) {
            *dst = f32::from_le_bytes(chunk.try_into().unwrap()) as f64;
        }
    }
    Ok(model)
}
