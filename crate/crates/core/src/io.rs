//! Dataset files: one CSV per trajectory plus a JSON manifest.
//!
//! Trajectory CSVs have columns `t, x_0..x_{n-1}, u_0..u_{m-1}`; the last row
//! holds the terminal state and leaves the control cells empty.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::dynamics::Trajectory;
use crate::error::{Result, SpcError};
use crate::identification::{Dataset, RecordedTrajectory};
use crate::scalar::Real;
use crate::surrogate::fmt_f64;

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitIndices {
    pub train: Vec<usize>,
    pub test: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub state_dim: usize,
    pub control_dim: usize,
    pub dt: f64,
    pub horizon: usize,
    pub seed: u64,
    pub split: SplitIndices,
    /// Trajectory files relative to the manifest, in dataset order.
    pub files: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub model: Option<String>,
}

fn trajectory_file(i: usize) -> String {
    format!("traj_{i:04}.csv")
}

/// Writes the dataset into `dir` (created if missing).
pub fn write_dataset<T: Real>(
    dir: &Path,
    data: &Dataset<T>,
    dt: f64,
    seed: u64,
    model: Option<&str>,
) -> Result<DatasetManifest> {
    fs::create_dir_all(dir)?;
    let trajs = data.trajectories();
    let (n, m) = trajs
        .first()
        .map_or((0, 0), |t| (t.states.dim(), t.control_dim()));
    let mut files = Vec::with_capacity(trajs.len());
    for (i, tr) in trajs.iter().enumerate() {
        let name = trajectory_file(i);
        let mut w = csv::Writer::from_path(dir.join(&name))?;
        let mut header = vec!["t".to_string()];
        header.extend((0..n).map(|j| format!("x_{j}")));
        header.extend((0..m).map(|j| format!("u_{j}")));
        w.write_record(&header)?;
        for k in 0..=tr.horizon() {
            let mut rec = vec![fmt_f64(k as f64 * dt)];
            rec.extend(tr.states.state(k).iter().map(|x| fmt_f64(x.as_f64())));
            if k < tr.horizon() {
                rec.extend(tr.control(k).iter().map(|u| fmt_f64(u.as_f64())));
            } else {
                rec.extend((0..m).map(|_| String::new()));
            }
            w.write_record(&rec)?;
        }
        w.flush()?;
        files.push(name);
    }
    let manifest = DatasetManifest {
        state_dim: n,
        control_dim: m,
        dt,
        horizon: data.horizon(),
        seed,
        split: SplitIndices {
            train: data.train_indices().to_vec(),
            test: data.test_indices().to_vec(),
        },
        files,
        model: model.map(String::from),
    };
    fs::write(dir.join(MANIFEST_FILE), serde_json::to_string_pretty(&manifest)?)?;
    Ok(manifest)
}

/// Reads a dataset written by [`write_dataset`].
pub fn read_dataset<T: Real>(dir: &Path) -> Result<(Dataset<T>, DatasetManifest)> {
    let manifest: DatasetManifest = serde_json::from_str(&fs::read_to_string(dir.join(MANIFEST_FILE))?)?;
    let (n, m) = (manifest.state_dim, manifest.control_dim);
    let mut trajs = Vec::with_capacity(manifest.files.len());
    for name in &manifest.files {
        let mut r = csv::Reader::from_path(dir.join(name))?;
        let mut states = Vec::new();
        let mut controls = Vec::new();
        let rows: Vec<csv::StringRecord> = r.records().collect::<std::result::Result<_, _>>()?;
        for (k, rec) in rows.iter().enumerate() {
            if rec.len() != 1 + n + m {
                return Err(SpcError::Format(format!("{name}: row {k} has {} fields, expected {}", rec.len(), 1 + n + m)));
            }
            for j in 0..n {
                states.push(parse_cell::<T>(&rec[1 + j], name, k)?);
            }
            if k + 1 < rows.len() {
                for j in 0..m {
                    controls.push(parse_cell::<T>(&rec[1 + n + j], name, k)?);
                }
            }
        }
        trajs.push(RecordedTrajectory::new(Trajectory::from_flat(n, states)?, controls)?);
    }
    let data = Dataset::new(trajs, manifest.split.train.clone(), manifest.split.test.clone())?;
    Ok((data, manifest))
}

fn parse_cell<T: Real>(s: &str, file: &str, row: usize) -> Result<T> {
    s.trim()
        .parse::<f64>()
        .map(T::lit)
        .map_err(|_| SpcError::Format(format!("{file}: row {row}: cannot parse '{s}'")))
}
