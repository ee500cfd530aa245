//! Checkpoint byte format.
//!
//! A UTF-8 header followed by one binary blob:
//!
//! ```text
//! weathercycle-checkpoint 1
//! step <u64>
//! seed <u64>
//! adam_step <u64>
//! config <line count>
//! <key = value lines>
//! tensors <count>
//! tensor <name> <f32|f64> <d0,d1,...> <byte offset> <byte length>
//! ...
//! end
//! <little-endian tensor data>
//! ```
//!
//! Offsets are relative to the first byte after the `end` line. Tensors are
//! the parameters (`param/<name>`) and the Adam moments (`adam_m/<name>`,
//! `adam_v/<name>`), each stored in its parameter's dtype.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use crate::config::TrainConfig;
use crate::optim::OptimizerState;
use crate::params::{Dtype, Param, ParameterSet};
use crate::{Error, Result};

pub const MAGIC: &str = "weathercycle-checkpoint";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub step: u64,
    pub seed: u64,
    pub config: TrainConfig,
    pub params: ParameterSet,
    pub optimizer: OptimizerState,
}

struct Entry<'a> {
    name: String,
    dtype: Dtype,
    shape: &'a [usize],
    values: &'a [f64],
}

fn push_values(blob: &mut Vec<u8>, dtype: Dtype, values: &[f64]) {
    for &v in values {
        match dtype {
            Dtype::F32 => blob.extend_from_slice(&(v as f32).to_le_bytes()),
            Dtype::F64 => blob.extend_from_slice(&v.to_le_bytes()),
        }
    }
}

pub fn encode(ck: &Checkpoint) -> Vec<u8> {
    let mut entries = Vec::new();
    for (name, p) in ck.params.iter() {
        entries.push(Entry { name: format!("param/{name}"), dtype: p.dtype(), shape: p.shape(), values: p.values() });
    }
    for (prefix, moments) in [("adam_m", &ck.optimizer.m), ("adam_v", &ck.optimizer.v)] {
        for (name, values) in moments {
            let p = ck.params.get(name);
            let dtype = p.map_or(Dtype::F64, |p| p.dtype());
            let shape = p.map_or(&[][..], |p| p.shape());
            entries.push(Entry { name: format!("{prefix}/{name}"), dtype, shape, values });
        }
    }
    let config = ck.config.to_text();
    let mut header = format!("{MAGIC} {VERSION}\nstep {}\nseed {}\nadam_step {}\n", ck.step, ck.seed, ck.optimizer.step);
    header.push_str(&format!("config {}\n", config.lines().count()));
    header.push_str(&config);
    header.push_str(&format!("tensors {}\n", entries.len()));
    let mut blob = Vec::new();
    for e in &entries {
        let offset = blob.len();
        push_values(&mut blob, e.dtype, e.values);
        let dims: Vec<String> = e.shape.iter().map(|d| d.to_string()).collect();
        let dims = if dims.is_empty() { format!("{}", e.values.len()) } else { dims.join(",") };
        header.push_str(&format!("tensor {} {} {} {} {}\n", e.name, e.dtype, dims, offset, blob.len() - offset));
    }
    header.push_str("end\n");
    let mut out = header.into_bytes();
    out.extend_from_slice(&blob);
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn line(&mut self, what: &str) -> Result<&'a str> {
        let rest = &self.bytes[self.pos..];
        let end = rest
            .iter()
            .position(|&b| b == b'\n')
            .ok_or_else(|| Error::CheckpointTruncated(format!("header ends before {what}")))?;
        self.pos += end + 1;
        core::str::from_utf8(&rest[..end]).map_err(|_| Error::CheckpointMalformed(format!("{what} is not UTF-8")))
    }

    fn keyed<T: core::str::FromStr>(&mut self, key: &str) -> Result<T> {
        let line = self.line(key)?;
        let v = line
            .strip_prefix(key)
            .and_then(|r| r.strip_prefix(' '))
            .ok_or_else(|| Error::CheckpointMalformed(format!("expected `{key} <value>`, got `{line}`")))?;
        v.parse().map_err(|_| Error::CheckpointMalformed(format!("bad {key} value `{v}`")))
    }
}

fn malformed(m: impl Into<String>) -> Error {
    Error::CheckpointMalformed(m.into())
}

pub fn decode(bytes: &[u8]) -> Result<Checkpoint> {
    let mut r = Reader { bytes, pos: 0 };
    let first = r.line("magic")?;
    let version = first
        .strip_prefix(MAGIC)
        .and_then(|s| s.strip_prefix(' '))
        .ok_or_else(|| malformed("not a weathercycle checkpoint"))?;
    let version: u32 = version.parse().map_err(|_| malformed(format!("bad version `{version}`")))?;
    if version != VERSION {
        return Err(Error::CheckpointVersion { expected: VERSION, found: version });
    }
    let step: u64 = r.keyed("step")?;
    let seed: u64 = r.keyed("seed")?;
    let adam_step: u64 = r.keyed("adam_step")?;
    let n_config: usize = r.keyed("config")?;
    let mut config_text = String::new();
    for _ in 0..n_config {
        config_text.push_str(r.line("config")?);
        config_text.push('\n');
    }
    let config = TrainConfig::parse(&config_text)?;
    let n_tensors: usize = r.keyed("tensors")?;
    let mut specs = Vec::with_capacity(n_tensors);
    for _ in 0..n_tensors {
        let line = r.line("tensor")?;
        let parts: Vec<&str> = line.split(' ').collect();
        if parts.len() != 6 || parts[0] != "tensor" {
            return Err(malformed(format!("bad tensor line `{line}`")));
        }
        let dtype = Dtype::parse(parts[2]).ok_or_else(|| malformed(format!("unknown dtype `{}`", parts[2])))?;
        let shape: Vec<usize> = parts[3]
            .split(',')
            .map(|d| d.parse().map_err(|_| malformed(format!("bad shape `{}`", parts[3]))))
            .collect::<Result<_>>()?;
        let offset: usize = parts[4].parse().map_err(|_| malformed(format!("bad offset `{}`", parts[4])))?;
        let nbytes: usize = parts[5].parse().map_err(|_| malformed(format!("bad length `{}`", parts[5])))?;
        let count: usize = shape.iter().product();
        if count * dtype.size_of() != nbytes {
            return Err(malformed(format!("tensor {} has {nbytes} bytes for shape {:?}", parts[1], shape)));
        }
        specs.push((parts[1].to_string(), dtype, shape, offset, nbytes));
    }
    if r.line("end")? != "end" {
        return Err(malformed("missing `end` line"));
    }
    let blob = &bytes[r.pos..];
    let mut params = ParameterSet::new();
    let mut m = BTreeMap::new();
    let mut v = BTreeMap::new();
    for (name, dtype, shape, offset, nbytes) in specs {
        let end = offset.checked_add(nbytes).ok_or_else(|| malformed("offset overflow"))?;
        if end > blob.len() {
            return Err(Error::CheckpointTruncated(format!(
                "tensor {name} needs bytes {offset}..{end}, blob has {}",
                blob.len()
            )));
        }
        let raw = &blob[offset..end];
        let values: Vec<f64> = match dtype {
            Dtype::F32 => raw.chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64).collect(),
            Dtype::F64 => raw
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes([c[0], c[1], c[2], c[3], c[4], c[5], c[6], c[7]]))
                .collect(),
        };
        let (kind, pname) = name.split_once('/').ok_or_else(|| malformed(format!("bad tensor name `{name}`")))?;
        match kind {
            "param" => params.insert(pname, Param::new(shape, dtype, values)?)?,
            "adam_m" => {
                m.insert(pname.to_string(), values);
            }
            "adam_v" => {
                v.insert(pname.to_string(), values);
            }
            _ => return Err(malformed(format!("unknown tensor kind `{kind}`"))),
        }
    }
    let optimizer = OptimizerState { step: adam_step, m, v };
    optimizer.ensure_matches(&params).map_err(|e| malformed(format!("optimizer state: {e}")))?;
    Ok(Checkpoint { step, seed, config, params, optimizer })
}
