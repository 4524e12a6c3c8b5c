//! On-disk trajectory container.
//!
//! A directory with `manifest.json` and two headerless little-endian `f64` blobs per
//! trajectory: `traj_<k>_states.f64` (`(T+1)·d` values, `x_T` first) and
//! `traj_<k>_outputs.f64` (`T·d` values, `e_T` first).

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{PredictorDescriptor, ScheduleDescriptor, Trajectory, TrajectorySet};
use crate::error::{Error, Result};

pub const MANIFEST_FILE: &str = "manifest.json";
const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub format_version: u32,
    #[serde(rename = "T")]
    pub total_steps: usize,
    pub d: usize,
    #[serde(rename = "K")]
    pub count: usize,
    pub base_seed: u64,
    pub schedule: ScheduleDescriptor,
    pub predictor: PredictorDescriptor,
}

pub fn states_file(k: usize) -> String {
    format!("traj_{k}_states.f64")
}

pub fn outputs_file(k: usize) -> String {
    format!("traj_{k}_outputs.f64")
}

/// Writes `set` into `dir`, creating it if needed. Existing files are overwritten.
pub fn save_trajectory_set(set: &TrajectorySet, dir: &Path) -> Result<()> {
    if set.is_empty() {
        return Err(Error::InvalidParameter("cannot save an empty trajectory set".into()));
    }
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let manifest = Manifest {
        format_version: FORMAT_VERSION,
        total_steps: set.total_steps(),
        d: set.dim(),
        count: set.len(),
        base_seed: set.base_seed,
        schedule: set.schedule.clone(),
        predictor: set.predictor.clone(),
    };
    let mut json = serde_json::to_string_pretty(&manifest)?;
    json.push('\n');
    write_file(&dir.join(MANIFEST_FILE), json.as_bytes())?;
    for (k, traj) in set.trajectories.iter().enumerate() {
        write_file(&dir.join(states_file(k)), &to_le_bytes(traj.states_flat()))?;
        write_file(&dir.join(outputs_file(k)), &to_le_bytes(traj.outputs_flat()))?;
    }
    Ok(())
}

pub fn read_manifest(dir: &Path) -> Result<Manifest> {
    let path = dir.join(MANIFEST_FILE);
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let manifest: Manifest = serde_json::from_str(&text).map_err(|e| Error::MalformedManifest {
        path: path.clone(),
        reason: e.to_string(),
    })?;
    let malformed = |reason: String| Error::MalformedManifest {
        path: path.clone(),
        reason,
    };
    if manifest.format_version != FORMAT_VERSION {
        return Err(malformed(format!(
            "unsupported format_version {}",
            manifest.format_version
        )));
    }
    if manifest.total_steps == 0 || manifest.d == 0 || manifest.count == 0 {
        return Err(malformed("T, d and K must all be positive".into()));
    }
    if manifest.schedule.total_steps != manifest.total_steps {
        return Err(malformed(format!(
            "schedule.T = {} disagrees with T = {}",
            manifest.schedule.total_steps, manifest.total_steps
        )));
    }
    if manifest.predictor.dim() != manifest.d {
        return Err(malformed(format!(
            "predictor dimension {} disagrees with d = {}",
            manifest.predictor.dim(),
            manifest.d
        )));
    }
    Ok(manifest)
}

pub fn load_trajectory_set(dir: &Path) -> Result<TrajectorySet> {
    let m = read_manifest(dir)?;
    let mut trajectories = Vec::with_capacity(m.count);
    for k in 0..m.count {
        let states = read_blob(&dir.join(states_file(k)), m.total_steps + 1, m.d)?;
        let outputs = read_blob(&dir.join(outputs_file(k)), m.total_steps, m.d)?;
        trajectories.push(Trajectory::from_parts(
            m.d,
            m.total_steps,
            states,
            outputs,
            Some(m.base_seed + k as u64),
        )?);
    }
    Ok(TrajectorySet {
        schedule: m.schedule,
        predictor: m.predictor,
        base_seed: m.base_seed,
        trajectories,
    })
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

fn to_le_bytes(values: &[f64]) -> Vec<u8> {
    values.iter().flat_map(|v| v.to_le_bytes()).collect()
}

fn read_blob(path: &PathBuf, vectors: usize, dim: usize) -> Result<Vec<f64>> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let expected = (vectors * dim * 8) as u64;
    let actual = bytes.len() as u64;
    if actual != expected {
        let per_vector = (vectors * 8) as u64;
        if actual > 0 && actual.is_multiple_of(per_vector) {
            return Err(Error::BlobDimensionMismatch {
                path: path.clone(),
                expected: dim,
                found: (actual / per_vector) as usize,
            });
        }
        return Err(Error::TruncatedBlob {
            path: path.clone(),
            expected,
            actual,
        });
    }
    Ok(bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
        .collect())
}
