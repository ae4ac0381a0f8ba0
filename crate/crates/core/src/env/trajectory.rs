//! JSON-lines trajectory records.

use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Env, JointState, Vec2, N_CONSTRAINTS};
use crate::error::{Error, Result};

/// One line of a trajectory file. The terminal state is recorded with empty
/// `actions` and zero `cost`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub k: usize,
    pub positions: Vec<Vec2>,
    pub velocities: Vec<Vec2>,
    pub actions: Vec<Vec2>,
    pub cost: f64,
    pub h: Vec<[f64; N_CONSTRAINTS]>,
}

impl StepRecord {
    /// Record of `state` with `actions` applied (empty for the terminal state).
    pub fn capture(env: &Env, state: &JointState, actions: &[Vec2]) -> Self {
        let cost = if actions.is_empty() { 0.0 } else { env.cost(state, actions) };
        Self {
            k: state.k,
            positions: state.positions(),
            velocities: state.velocities(),
            actions: actions.iter().map(|&a| env.clamp_action(a)).collect(),
            cost,
            h: env.all_constraints(state),
        }
    }
}

pub fn write_trajectory(path: &Path, records: &[StepRecord]) -> Result<()> {
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for r in records {
        serde_json::to_writer(&mut w, r)?;
        w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_trajectory(path: &Path) -> Result<Vec<StepRecord>> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for line in BufReader::new(file).lines() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if !line.trim().is_empty() {
            out.push(serde_json::from_str(&line)?);
        }
    }
    Ok(out)
}

/// Fraction of (trajectory, agent) pairs whose recorded constraint values
/// never exceed zero.
pub fn safety_rate(trajectories: &[Vec<StepRecord>]) -> f64 {
    let mut safe = 0usize;
    let mut total = 0usize;
    for records in trajectories {
        let n = records.first().map_or(0, |r| r.h.len());
        for i in 0..n {
            total += 1;
            if records.iter().all(|r| r.h[i].iter().all(|&v| v <= 0.0)) {
                safe += 1;
            }
        }
    }
    safe as f64 / total.max(1) as f64
}
