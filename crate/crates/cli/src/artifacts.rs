//! Reading and writing the on-disk artifact set each pipeline stage
//! produces, so every stage can run from the previous stage's outputs alone.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use opinf_core::io::{read_matrix, write_matrix};
use opinf_core::{Error, Result, RomOperators, ScalingParams};

pub const BASIS_FILE: &str = "basis.oimx";
pub const SINGULAR_VALUES_FILE: &str = "singular_values.oimx";
pub const SCALING_FILE: &str = "scaling.oimx";
pub const OP_C_FILE: &str = "op_c.oimx";
pub const OP_A_FILE: &str = "op_a.oimx";
pub const OP_H_FILE: &str = "op_h.oimx";
pub const OP_B_FILE: &str = "op_b.oimx";
pub const QHAT0_FILE: &str = "qhat0.oimx";
pub const METADATA_FILE: &str = "metadata.txt";
pub const REPORT_FILE: &str = "search_report.txt";
pub const TRAJECTORY_FILE: &str = "trajectory.oimx";
pub const TRAJECTORY_TIMES_FILE: &str = "trajectory_times.oimx";
pub const TRAJECTORY_STATUS_FILE: &str = "trajectory.status.txt";

/// Scalar metadata persisted next to the trained operators.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainMetadata {
    pub r: usize,
    pub m: usize,
    pub lambda1: f64,
    pub lambda2: f64,
    pub bound: f64,
    pub training_error: f64,
    pub t0: f64,
    pub dt: f64,
    pub k: usize,
    pub tf: f64,
    pub cells: usize,
    pub seed: u64,
}

impl TrainMetadata {
    pub fn render(&self) -> String {
        format!(
            "r = {}\nm = {}\nlambda1 = {}\nlambda2 = {}\nbound = {}\n\
             training_error = {}\nt0 = {}\ndt = {}\nk = {}\ntf = {}\n\
             cells = {}\nseed = {}\n",
            self.r,
            self.m,
            self.lambda1,
            self.lambda2,
            self.bound,
            self.training_error,
            self.t0,
            self.dt,
            self.k,
            self.tf,
            self.cells,
            self.seed,
        )
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut map = BTreeMap::new();
        for (idx, raw) in text.lines().enumerate() {
            let stripped = raw.trim();
            if stripped.is_empty() {
                continue;
            }
            let (key, value) = stripped.split_once('=').ok_or_else(|| Error::Config {
                line: idx + 1,
                reason: format!("expected key = value, got '{stripped}'"),
            })?;
            map.insert(key.trim().to_string(), value.trim().to_string());
        }
        let get = |key: &str| -> Result<&String> {
            map.get(key).ok_or_else(|| Error::Config {
                line: 0,
                reason: format!("metadata is missing '{key}'"),
            })
        };
        macro_rules! num {
            ($key:expr, $ty:ty) => {
                get($key)?.parse::<$ty>().map_err(|e| Error::Config {
                    line: 0,
                    reason: format!("bad metadata value for {}: {e}", $key),
                })?
            };
        }
        Ok(TrainMetadata {
            r: num!("r", usize),
            m: num!("m", usize),
            lambda1: num!("lambda1", f64),
            lambda2: num!("lambda2", f64),
            bound: num!("bound", f64),
            training_error: num!("training_error", f64),
            t0: num!("t0", f64),
            dt: num!("dt", f64),
            k: num!("k", usize),
            tf: num!("tf", f64),
            cells: num!("cells", usize),
            seed: num!("seed", u64),
        })
    }
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::Io {
        path: path.display().to_string(),
        source: e,
    })
}

pub fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::Io {
        path: path.display().to_string(),
        source: e,
    })
}

pub fn ensure_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::Io {
        path: dir.display().to_string(),
        source: e,
    })
}

pub fn write_operators(dir: &Path, ops: &RomOperators) -> Result<()> {
    write_matrix(&dir.join(OP_C_FILE), &DMatrix::from_column_slice(ops.r(), 1, ops.c_hat.as_slice()))?;
    write_matrix(&dir.join(OP_A_FILE), &ops.a_hat)?;
    write_matrix(&dir.join(OP_H_FILE), &ops.h_hat)?;
    write_matrix(&dir.join(OP_B_FILE), &ops.b_hat)
}

pub fn read_operators(dir: &Path) -> Result<RomOperators> {
    let c = read_matrix(&dir.join(OP_C_FILE))?;
    let a = read_matrix(&dir.join(OP_A_FILE))?;
    let h = read_matrix(&dir.join(OP_H_FILE))?;
    let b = read_matrix(&dir.join(OP_B_FILE))?;
    RomOperators::new(c.column(0).clone_owned(), a, h, b)
}

pub fn write_scaling(dir: &Path, scaling: &ScalingParams) -> Result<()> {
    let scales = DMatrix::from_column_slice(scaling.scales().len(), 1, scaling.scales());
    write_matrix(&dir.join(SCALING_FILE), &scales)
}

pub fn read_scaling(dir: &Path, cells: usize) -> Result<ScalingParams> {
    let scales = read_matrix(&dir.join(SCALING_FILE))?;
    ScalingParams::from_parts(scales.column(0).iter().copied().collect(), cells)
}

pub fn write_metadata(dir: &Path, meta: &TrainMetadata) -> Result<()> {
    write_text(&dir.join(METADATA_FILE), &meta.render())
}

pub fn read_metadata(dir: &Path) -> Result<TrainMetadata> {
    TrainMetadata::parse(&read_text(&dir.join(METADATA_FILE))?)
}

pub fn write_report(dir: &Path, report_text: &str) -> Result<()> {
    write_text(&dir.join(REPORT_FILE), report_text)
}

pub fn write_vector(path: &Path, v: &DVector<f64>) -> Result<()> {
    write_matrix(path, &DMatrix::from_column_slice(v.len(), 1, v.as_slice()))
}

pub fn write_status(dir: &Path, status: &opinf_core::TrajectoryStatus) -> Result<()> {
    let text = match status {
        opinf_core::TrajectoryStatus::Completed => "status = completed\n".to_string(),
        opinf_core::TrajectoryStatus::BoundViolated { time, index } => {
            format!("status = bound_violated\ntime = {time}\nindex = {index}\n")
        }
        opinf_core::TrajectoryStatus::IntegratorFailed { time } => {
            format!("status = integrator_failed\ntime = {time}\n")
        }
    };
    write_text(&dir.join(TRAJECTORY_STATUS_FILE), &text)
}
