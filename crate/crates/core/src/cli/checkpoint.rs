//! Binary checkpoint format.
//!
//! ```text
//! magic    8 bytes  "DGPPOCKP"
//! version  u32 LE
//! hash     u64 LE   run-config hash
//! step     u64 LE   completed updates
//! mlen     u32 LE   manifest length
//! manifest mlen bytes of JSON
//! blen     u64 LE   body length
//! body     f32 LE row-major tensors in manifest order
//! crc      u32 LE   CRC-32 of body
//! ```

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::config::RunConfig;
use crate::diffmath::{AdamState, ParamSet, Tensor};
use crate::env::N_CONSTRAINTS;
use crate::error::{Error, Result};
use crate::learner::TrainState;

pub const MAGIC: &[u8; 8] = b"DGPPOCKP";
pub const VERSION: u32 = 1;

/// Location and shape of one tensor in the body.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub dtype: String,
    pub shape: Vec<usize>,
    /// Byte offset into the body.
    pub offset: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    /// Canonical run configuration.
    pub config: String,
    pub lambda: Vec<f64>,
    /// Adam step counters for policy, cost value and constraint value.
    pub adam_steps: [u64; 3],
    pub tensors: Vec<TensorEntry>,
}

/// Decoded checkpoint.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub config: RunConfig,
    pub state: TrainState,
}

const GROUPS: [&str; 3] = ["policy", "cost_value", "constraint_value"];

fn flatten(state: &TrainState) -> ParamSet {
    let mut all = ParamSet::new();
    let groups = [
        (&state.policy, &state.policy_adam),
        (&state.cost_value, &state.cost_value_adam),
        (&state.constraint_value, &state.constraint_value_adam),
    ];
    for (g, (params, adam)) in GROUPS.iter().zip(groups) {
        all.extend_prefixed(&format!("{g}/"), params);
        all.extend_prefixed(&format!("{g}.adam_m/"), &adam.m);
        all.extend_prefixed(&format!("{g}.adam_v/"), &adam.v);
    }
    all
}

/// Serializes a checkpoint to bytes.
pub fn encode(config: &RunConfig, state: &TrainState) -> Vec<u8> {
    let all = flatten(state);
    let mut body = Vec::with_capacity(all.numel() * 4);
    let mut tensors = Vec::with_capacity(all.len());
    for (name, t) in all.iter() {
        tensors.push(TensorEntry {
            name: name.to_string(),
            dtype: "f32".into(),
            shape: t.shape().to_vec(),
            offset: body.len(),
        });
        for x in t.data() {
            body.extend_from_slice(&x.to_le_bytes());
        }
    }
    let manifest = Manifest {
        config: config.to_toml(),
        lambda: state.lambda.to_vec(),
        adam_steps: [state.policy_adam.t, state.cost_value_adam.t, state.constraint_value_adam.t],
        tensors,
    };
    let manifest = serde_json::to_vec(&manifest).expect("manifest serializes");
    let mut out = Vec::with_capacity(body.len() + manifest.len() + 64);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&config.hash().to_le_bytes());
    out.extend_from_slice(&state.step.to_le_bytes());
    out.extend_from_slice(&(manifest.len() as u32).to_le_bytes());
    out.extend_from_slice(&manifest);
    out.extend_from_slice(&(body.len() as u64).to_le_bytes());
    out.extend_from_slice(&body);
    out.extend_from_slice(&crc32fast::hash(&body).to_le_bytes());
    out
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> std::result::Result<&'a [u8], String> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len()).ok_or("truncated file")?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> std::result::Result<u32, String> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> std::result::Result<u64, String> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

/// Parses and verifies a checkpoint.
pub fn decode(bytes: &[u8]) -> std::result::Result<Checkpoint, String> {
    let mut r = Reader { buf: bytes, pos: 0 };
    if r.take(8)? != MAGIC {
        return Err("not a checkpoint file".into());
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(format!("unsupported format version {version}"));
    }
    let hash = r.u64()?;
    let step = r.u64()?;
    let mlen = r.u32()? as usize;
    let manifest: Manifest = serde_json::from_slice(r.take(mlen)?).map_err(|e| format!("bad manifest: {e}"))?;
    let blen = usize::try_from(r.u64()?).map_err(|_| "body too large")?;
    let body = r.take(blen)?;
    let crc = r.u32()?;
    if r.pos != bytes.len() {
        return Err("trailing bytes after footer".into());
    }
    if crc32fast::hash(body) != crc {
        return Err("CRC mismatch".into());
    }
    let config: RunConfig = manifest.config.parse().map_err(|e: Error| format!("embedded config: {e}"))?;
    if config.hash() != hash {
        return Err("config hash does not match the embedded config".into());
    }
    let mut all = ParamSet::new();
    for t in &manifest.tensors {
        if t.dtype != "f32" {
            return Err(format!("tensor `{}` has unsupported dtype {}", t.name, t.dtype));
        }
        let n: usize = t.shape.iter().product();
        let bytes = t
            .offset
            .checked_add(n * 4)
            .and_then(|end| body.get(t.offset..end))
            .ok_or_else(|| format!("tensor `{}` lies outside the body", t.name))?;
        let data = bytes.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect();
        all.insert(t.name.clone(), Tensor::new(t.shape.clone(), data).map_err(|e| e.to_string())?);
    }
    if manifest.lambda.len() != N_CONSTRAINTS {
        return Err(format!("expected {N_CONSTRAINTS} multipliers, got {}", manifest.lambda.len()));
    }
    let group = |i: usize| {
        let g = GROUPS[i];
        (
            all.strip_prefix(&format!("{g}/")),
            AdamState {
                m: all.strip_prefix(&format!("{g}.adam_m/")),
                v: all.strip_prefix(&format!("{g}.adam_v/")),
                t: manifest.adam_steps[i],
            },
        )
    };
    let (policy, policy_adam) = group(0);
    let (cost_value, cost_value_adam) = group(1);
    let (constraint_value, constraint_value_adam) = group(2);
    let mut lambda = [0.0; N_CONSTRAINTS];
    lambda.copy_from_slice(&manifest.lambda);
    Ok(Checkpoint {
        config,
        state: TrainState {
            step,
            policy,
            cost_value,
            constraint_value,
            policy_adam,
            cost_value_adam,
            constraint_value_adam,
            lambda,
        },
    })
}

/// Writes atomically through a temporary sibling file.
pub fn save(path: &Path, config: &RunConfig, state: &TrainState) -> Result<()> {
    let tmp = path.with_extension("tmp");
    std::fs::write(&tmp, encode(config, state)).map_err(|e| Error::io(&tmp, e))?;
    std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

pub fn load(path: &Path) -> Result<Checkpoint> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes).map_err(|reason| Error::Checkpoint {
        path: path.to_path_buf(),
        reason,
    })
}

/// `ckpt_<step>.bin` inside `dir`.
pub fn path_for(dir: &Path, step: u64) -> PathBuf {
    dir.join(format!("ckpt_{step:08}.bin"))
}

/// Regular checkpoints in `dir`, ordered by step.
pub fn list(dir: &Path) -> Result<Vec<(u64, PathBuf)>> {
    let Ok(entries) = std::fs::read_dir(dir) else {
        return Ok(Vec::new());
    };
    let mut out = Vec::new();
    for entry in entries {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        let name = path.file_name().and_then(|n| n.to_str()).unwrap_or("");
        if let Some(step) = name
            .strip_prefix("ckpt_")
            .and_then(|s| s.strip_suffix(".bin"))
            .and_then(|s| s.parse().ok())
        {
            out.push((step, path));
        }
    }
    out.sort();
    Ok(out)
}
