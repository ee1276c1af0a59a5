//! The `.djsonl` on-disk dataset format: UTF-8 line-delimited JSON.
//!
//! Line 1 is the header (format version, task specs, normalization anchors,
//! behavior-policy id, collection seed); every further line is one
//! trajectory record `{"task_id", "obs", "act", "rew"}`. Floats are written
//! in the shortest decimal form that round-trips the exact f64 bits (at most
//! 17 significant digits), so write → read is lossless and a fixed seed
//! yields byte-identical files.

use std::collections::{BTreeMap, BTreeSet};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::{Anchors, TaskSpec, Trajectory};

pub const DATASET_FORMAT_VERSION: u32 = 1;

/// First line of a `.djsonl` file.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetHeader {
    pub format_version: u32,
    pub tasks: Vec<TaskSpec>,
    pub anchors: BTreeMap<String, Anchors>,
    pub behavior_policy: String,
    pub seed: u64,
}

/// A fully validated in-memory dataset.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub header: DatasetHeader,
    pub trajectories: Vec<Trajectory>,
}

impl Dataset {
    /// Trajectories belonging to one task.
    pub fn trajectories_for(&self, task_id: &str) -> Vec<&Trajectory> {
        self.trajectories
            .iter()
            .filter(|t| t.task_id == task_id)
            .collect()
    }

    pub fn task(&self, task_id: &str) -> Option<&TaskSpec> {
        self.header.tasks.iter().find(|t| t.task_id == task_id)
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawTrajectory {
    task_id: String,
    obs: Vec<Vec<f64>>,
    act: Vec<Vec<f64>>,
    rew: Vec<f64>,
}

impl From<&Trajectory> for RawTrajectory {
    fn from(t: &Trajectory) -> Self {
        RawTrajectory {
            task_id: t.task_id.clone(),
            obs: t.obs.iter().map(|v| v.iter().cloned().collect()).collect(),
            act: t.act.iter().map(|v| v.iter().cloned().collect()).collect(),
            rew: t.rew.clone(),
        }
    }
}

impl TryFrom<RawTrajectory> for Trajectory {
    type Error = Error;
    fn try_from(raw: RawTrajectory) -> Result<Self> {
        let to_vecs = |rows: Vec<Vec<f64>>| -> Vec<DVector<f64>> {
            rows.into_iter().map(DVector::from_vec).collect()
        };
        Trajectory::new(raw.task_id, to_vecs(raw.obs), to_vecs(raw.act), raw.rew)
    }
}

/// Per-task dimensions a trajectory must match.
fn dims_by_task(header: &DatasetHeader) -> Result<BTreeMap<&str, (usize, usize, usize)>> {
    if header.format_version != DATASET_FORMAT_VERSION {
        return Err(Error::invalid(format!(
            "unsupported dataset format_version {} (this build reads {})",
            header.format_version, DATASET_FORMAT_VERSION
        )));
    }
    let mut dims = BTreeMap::new();
    let mut seen = BTreeSet::new();
    for task in &header.tasks {
        if !seen.insert(task.task_id.as_str()) {
            return Err(Error::invalid(format!(
                "duplicate task_id `{}` in dataset header",
                task.task_id
            )));
        }
        dims.insert(
            task.task_id.as_str(),
            (task.env.n_o(), task.env.n_a(), task.env.n_steps()),
        );
    }
    for anchor_id in header.anchors.keys() {
        if !dims.contains_key(anchor_id.as_str()) {
            return Err(Error::invalid(format!(
                "anchors reference unknown task_id `{anchor_id}`"
            )));
        }
    }
    Ok(dims)
}

fn validate_trajectory(
    traj: &Trajectory,
    dims: &BTreeMap<&str, (usize, usize, usize)>,
) -> Result<()> {
    let (n_o, n_a, n_steps) = *dims.get(traj.task_id.as_str()).ok_or_else(|| {
        Error::invalid(format!(
            "trajectory references task_id `{}` absent from the header",
            traj.task_id
        ))
    })?;
    if traj.len() != n_steps {
        return Err(Error::dim(format!(
            "task `{}`: trajectory has {} steps, environment runs {}",
            traj.task_id,
            traj.len(),
            n_steps
        )));
    }
    for v in &traj.obs {
        if v.len() != n_o {
            return Err(Error::dim(format!(
                "task `{}`: observation of length {} != n_o = {n_o}",
                traj.task_id,
                v.len()
            )));
        }
    }
    for v in &traj.act {
        if v.len() != n_a {
            return Err(Error::dim(format!(
                "task `{}`: action of length {} != n_a = {n_a}",
                traj.task_id,
                v.len()
            )));
        }
    }
    Ok(())
}

/// Write a dataset file (header line plus one line per trajectory).
pub fn write_dataset(
    path: impl AsRef<Path>,
    header: &DatasetHeader,
    trajectories: &[Trajectory],
) -> Result<()> {
    let dims = dims_by_task(header)?;
    for traj in trajectories {
        validate_trajectory(traj, &dims)?;
    }
    let file = std::fs::File::create(path.as_ref())?;
    let mut out = BufWriter::new(file);
    serde_json::to_writer(&mut out, header).map_err(|e| Error::parse("dataset header", e.to_string()))?;
    out.write_all(b"\n")?;
    for traj in trajectories {
        serde_json::to_writer(&mut out, &RawTrajectory::from(traj))
            .map_err(|e| Error::parse("trajectory record", e.to_string()))?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(())
}

/// Read and fully validate a dataset file.
pub fn read_dataset(path: impl AsRef<Path>) -> Result<Dataset> {
    let path = path.as_ref();
    let file = std::fs::File::open(path)?;
    let mut lines = BufReader::new(file).lines();

    let header_line = lines
        .next()
        .ok_or_else(|| Error::parse(format!("{}", path.display()), "empty file"))??;
    let header: DatasetHeader = serde_json::from_str(&header_line)
        .map_err(|e| Error::parse(format!("{} line 1 (header)", path.display()), e.to_string()))?;
    let dims = dims_by_task(&header)?;

    let mut trajectories = Vec::new();
    for (idx, line) in lines.enumerate() {
        let line_no = idx + 2;
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let raw: RawTrajectory = serde_json::from_str(&line)
            .map_err(|e| Error::parse(format!("{} line {line_no}", path.display()), e.to_string()))?;
        let traj = Trajectory::try_from(raw)
            .map_err(|e| Error::parse(format!("{} line {line_no}", path.display()), e.to_string()))?;
        validate_trajectory(&traj, &dims)
            .map_err(|e| Error::parse(format!("{} line {line_no}", path.display()), e.to_string()))?;
        trajectories.push(traj);
    }
    Ok(Dataset {
        header,
        trajectories,
    })
}
