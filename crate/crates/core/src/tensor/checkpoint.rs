//! Self-describing binary checkpoints.
//!
//! Layout (little endian):
//!
//! ```text
//! magic   b"ISTARCK1"
//! u64     metadata length, then that many bytes of UTF-8 JSON
//! u64     entry count
//! entry:  u64 name length, name bytes, u64 rank, rank × u64 dims,
//!         product(dims) × f64 values
//! ```
//!
//! Values are stored as raw IEEE-754 bits, so a round trip is bitwise exact.

use std::io::{Read, Write};
use std::path::Path;

use super::{AdamState, ParameterSet, Result, Tensor, TensorError};

const MAGIC: &[u8; 8] = b"ISTARCK1";
const M_SUFFIX: &str = "#adam_m";
const V_SUFFIX: &str = "#adam_v";
const STEP_SUFFIX: &str = "#adam_step";

#[derive(Debug, Clone, PartialEq)]
pub struct CheckpointEntry {
    pub name: String,
    pub tensor: Tensor,
}

fn write_u64(w: &mut impl Write, v: u64) -> Result<()> {
    w.write_all(&v.to_le_bytes())?;
    Ok(())
}

fn read_u64(r: &mut impl Read) -> Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}

fn bad(msg: impl Into<String>) -> TensorError {
    TensorError::Checkpoint(msg.into())
}

pub fn write_checkpoint(path: &Path, meta: &serde_json::Value, entries: &[CheckpointEntry]) -> Result<()> {
    let mut buf = Vec::new();
    buf.extend_from_slice(MAGIC);
    let meta = serde_json::to_vec(meta).map_err(|e| bad(e.to_string()))?;
    write_u64(&mut buf, meta.len() as u64)?;
    buf.extend_from_slice(&meta);
    write_u64(&mut buf, entries.len() as u64)?;
    for e in entries {
        write_u64(&mut buf, e.name.len() as u64)?;
        buf.extend_from_slice(e.name.as_bytes());
        write_u64(&mut buf, e.tensor.shape().len() as u64)?;
        for &d in e.tensor.shape() {
            write_u64(&mut buf, d as u64)?;
        }
        for v in e.tensor.values() {
            buf.extend_from_slice(&v.to_bits().to_le_bytes());
        }
    }
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir)?;
    }
    let mut f = std::fs::File::create(path)?;
    f.write_all(&buf)?;
    Ok(())
}

pub fn read_checkpoint(path: &Path) -> Result<(serde_json::Value, Vec<CheckpointEntry>)> {
    let bytes = std::fs::read(path)?;
    let mut r = bytes.as_slice();
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic).map_err(|_| bad("truncated header"))?;
    if &magic != MAGIC {
        return Err(bad("not a checkpoint file"));
    }
    let meta_len = read_u64(&mut r)? as usize;
    if meta_len > r.len() {
        return Err(bad("truncated metadata"));
    }
    let (meta_bytes, rest) = r.split_at(meta_len);
    let meta = serde_json::from_slice(meta_bytes).map_err(|e| bad(format!("metadata: {e}")))?;
    r = rest;
    let count = read_u64(&mut r)?;
    let mut entries = Vec::new();
    for _ in 0..count {
        let name_len = read_u64(&mut r)? as usize;
        if name_len > r.len() {
            return Err(bad("truncated entry name"));
        }
        let (name, rest) = r.split_at(name_len);
        let name = String::from_utf8(name.to_vec()).map_err(|_| bad("entry name is not UTF-8"))?;
        r = rest;
        let rank = read_u64(&mut r)? as usize;
        let shape = (0..rank).map(|_| read_u64(&mut r).map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
        let n: usize = shape.iter().product();
        if n * 8 > r.len() {
            return Err(bad(format!("truncated values for {name}")));
        }
        let values = (0..n).map(|_| read_u64(&mut r).map(f64::from_bits)).collect::<Result<Vec<_>>>()?;
        let tensor = Tensor::new(shape, values).map_err(|e| bad(format!("{name}: {e}")))?;
        entries.push(CheckpointEntry { name, tensor });
    }
    if !r.is_empty() {
        return Err(bad("trailing bytes after last entry"));
    }
    Ok((meta, entries))
}

impl ParameterSet {
    /// Entries for every parameter, optionally followed by Adam state.
    pub fn to_entries(&self, with_optimizer: bool) -> Vec<CheckpointEntry> {
        let mut out: Vec<CheckpointEntry> = self
            .iter()
            .map(|(n, t)| CheckpointEntry {
                name: n.to_string(),
                tensor: Tensor::from_parts(t.shape().to_vec(), t.values().to_vec()),
            })
            .collect();
        if with_optimizer {
            for (n, t) in self.iter() {
                let st = self.state(n).expect("state exists for every parameter");
                let shape = t.shape().to_vec();
                out.push(CheckpointEntry {
                    name: format!("{n}{M_SUFFIX}"),
                    tensor: Tensor::from_parts(shape.clone(), st.m.clone()),
                });
                out.push(CheckpointEntry {
                    name: format!("{n}{V_SUFFIX}"),
                    tensor: Tensor::from_parts(shape, st.v.clone()),
                });
                out.push(CheckpointEntry {
                    name: format!("{n}{STEP_SUFFIX}"),
                    tensor: Tensor::from_parts(vec![], vec![st.step as f64]),
                });
            }
        }
        out
    }

    /// Rebuilds a parameter set (and Adam state when present) from entries.
    pub fn from_entries(entries: &[CheckpointEntry]) -> Result<ParameterSet> {
        let mut ps = ParameterSet::new();
        for e in entries.iter().filter(|e| !e.name.contains('#')) {
            ps.insert(e.name.clone(), e.tensor.clone());
        }
        let find = |name: String| entries.iter().find(|e| e.name == name).map(|e| &e.tensor);
        let names: Vec<String> = ps.names().map(str::to_string).collect();
        for n in names {
            match (find(format!("{n}{M_SUFFIX}")), find(format!("{n}{V_SUFFIX}")), find(format!("{n}{STEP_SUFFIX}"))) {
                (Some(m), Some(v), Some(s)) => ps.set_state(
                    &n,
                    AdamState {
                        m: m.values().to_vec(),
                        v: v.values().to_vec(),
                        step: s.item()? as u64,
                    },
                )?,
                (None, None, None) => {}
                _ => return Err(bad(format!("incomplete optimizer state for {n}"))),
            }
        }
        Ok(ps)
    }
}
