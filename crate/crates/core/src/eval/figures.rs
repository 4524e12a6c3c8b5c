use std::path::Path;

use super::table::write_csv;
use crate::diffusion::Trajectory;
use crate::error::{Error, Result};
use crate::linalg::{pca_fit, pca_project, pearson_correlation_matrix, Matrix};
use crate::schedulers::SamplerRun;

/// Step stride for the correlation heat map; 41 states and 40 outputs at `T = 1000`.
pub const DEFAULT_STRIDE: usize = 25;

#[derive(Debug, Clone, PartialEq)]
pub struct CorrelationHeatmap {
    /// `x_T, x_{T−s}, …, x_0, e_T, e_{T−s}, …, e_1`.
    pub labels: Vec<String>,
    pub matrix: Matrix,
}

fn strided(from: usize, to: usize, stride: usize) -> Vec<usize> {
    let mut ts: Vec<usize> = (to..=from).rev().step_by(stride).collect();
    if ts.last() != Some(&to) {
        ts.push(to);
    }
    ts
}

/// Pearson correlations between subsampled states and model outputs of one run.
pub fn correlation_heatmap(traj: &Trajectory, stride: usize) -> Result<CorrelationHeatmap> {
    if stride == 0 {
        return Err(Error::InvalidParameter("stride must be at least 1".into()));
    }
    let total = traj.total_steps();
    let xs = strided(total, 0, stride);
    let es = strided(total, 1, stride);
    let mut labels = Vec::with_capacity(xs.len() + es.len());
    let mut vectors: Vec<&[f64]> = Vec::with_capacity(xs.len() + es.len());
    for &t in &xs {
        labels.push(format!("x_{t}"));
        vectors.push(traj.state(t));
    }
    for &t in &es {
        labels.push(format!("e_{t}"));
        vectors.push(traj.output(t));
    }
    Ok(CorrelationHeatmap {
        labels,
        matrix: pearson_correlation_matrix(&vectors)?,
    })
}

/// Writes the heat map as a square CSV whose first column repeats the header labels.
pub fn correlation_heatmap_csv(traj: &Trajectory, stride: usize, out: &Path) -> Result<CorrelationHeatmap> {
    let map = correlation_heatmap(traj, stride)?;
    let mut headers = vec!["variable".to_string()];
    headers.extend(map.labels.iter().cloned());
    let rows: Vec<Vec<String>> = map
        .labels
        .iter()
        .enumerate()
        .map(|(i, label)| {
            let mut row = vec![label.clone()];
            row.extend(map.matrix.row(i).iter().map(f64::to_string));
            row
        })
        .collect();
    write_csv(out, &headers, &rows)?;
    Ok(map)
}

/// How much the late model outputs repeat each other, against how much the final
/// output tracks the state it was computed from.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Redundancy {
    /// Mean |corr(e_i, e_j)| over distinct `i, j` in the last `window` steps.
    pub output_output: f64,
    /// Mean |corr(x_1, e_1)|.
    pub state_output: f64,
}

/// Averages both correlation summaries over `trajectories`.
pub fn correlation_redundancy(trajectories: &[Trajectory], window: usize) -> Result<Redundancy> {
    if trajectories.is_empty() {
        return Err(Error::InvalidParameter("no trajectories".into()));
    }
    let (mut ee, mut xe) = (0.0, 0.0);
    for traj in trajectories {
        let w = window.min(traj.total_steps());
        if w < 2 {
            return Err(Error::InvalidParameter("window must cover at least two steps".into()));
        }
        let outputs: Vec<&[f64]> = (1..=w).map(|t| traj.output(t)).collect();
        let m = pearson_correlation_matrix(&outputs)?;
        let mut sum = 0.0;
        for i in 0..w {
            for j in 0..i {
                sum += m[(i, j)].abs();
            }
        }
        ee += sum / (w * (w - 1) / 2) as f64;
        xe += pearson_correlation_matrix(&[traj.state(1), traj.output(1)])?[(0, 1)].abs();
    }
    let k = trajectories.len() as f64;
    Ok(Redundancy {
        output_output: ee / k,
        state_output: xe / k,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct PcaRow {
    pub series: String,
    pub t: usize,
    pub pc1: f64,
    pub pc2: f64,
}

/// Projects the teacher path and each run onto the teacher's top two principal axes.
/// The teacher series is named `teacher`.
pub fn pca_paths(teacher: &Trajectory, runs: &[(&str, &SamplerRun)]) -> Result<Vec<PcaRow>> {
    let total = teacher.total_steps();
    let points: Vec<Vec<f64>> = (0..=total).rev().map(|t| teacher.state(t).to_vec()).collect();
    let basis = pca_fit(&points)?;
    let mut rows = Vec::new();
    let mut push = |series: &str, t: usize, x: &[f64]| -> Result<()> {
        let (pc1, pc2) = pca_project(&basis, x)?;
        rows.push(PcaRow {
            series: series.to_string(),
            t,
            pc1,
            pc2,
        });
        Ok(())
    };
    for (t, x) in (0..=total).rev().zip(&points) {
        push("teacher", t, x)?;
    }
    for (name, run) in runs {
        let same_start = run
            .initial_state()
            .iter()
            .zip(teacher.initial_state())
            .all(|(a, b)| a.to_bits() == b.to_bits());
        if !same_start || run.initial_state().len() != teacher.dim() {
            return Err(Error::ProvenanceMismatch);
        }
        for (t, x) in run.times().into_iter().zip(&run.states) {
            push(name, t, x)?;
        }
    }
    Ok(rows)
}

/// CSV columns: `series,t,pc1,pc2`.
pub fn pca_paths_csv(teacher: &Trajectory, runs: &[(&str, &SamplerRun)], out: &Path) -> Result<Vec<PcaRow>> {
    let rows = pca_paths(teacher, runs)?;
    let headers: Vec<String> = ["series", "t", "pc1", "pc2"].map(String::from).to_vec();
    let cells: Vec<Vec<String>> = rows
        .iter()
        .map(|r| vec![r.series.clone(), r.t.to_string(), r.pc1.to_string(), r.pc2.to_string()])
        .collect();
    write_csv(out, &headers, &cells)?;
    Ok(rows)
}
