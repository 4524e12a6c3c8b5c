//! Error metrics, scheduler comparisons and figure-data exports.

mod compare;
mod figures;
mod table;

pub use compare::{
    compare_schedulers, efficiency_sweep, efficiency_sweep_csv, ComparisonReport, ComparisonRow, SchedulerKind,
    SweepRow,
};
pub use figures::{
    correlation_heatmap, correlation_heatmap_csv, correlation_redundancy, pca_paths, pca_paths_csv, CorrelationHeatmap,
    PcaRow, Redundancy, DEFAULT_STRIDE,
};
pub use table::{read_csv, CsvTable};

use crate::diffusion::Trajectory;
use crate::error::{Error, Result};
use crate::linalg::rms_diff;
use crate::schedulers::SamplerRun;

/// RMS distance between the run's final state and the teacher's `x_0`. Both must start
/// from the same `x_T`, bit for bit.
pub fn final_state_rmse(run: &SamplerRun, teacher: &Trajectory) -> Result<f64> {
    check_provenance(run, teacher)?;
    Ok(rms_diff(run.final_state(), teacher.final_state()))
}

/// RMS distance to the teacher at every visited step after the first.
pub fn per_step_rmse(run: &SamplerRun, teacher: &Trajectory) -> Result<Vec<f64>> {
    check_provenance(run, teacher)?;
    Ok(run
        .times()
        .iter()
        .zip(&run.states)
        .skip(1)
        .map(|(&t, x)| rms_diff(x, teacher.state(t)))
        .collect())
}

fn check_provenance(run: &SamplerRun, teacher: &Trajectory) -> Result<()> {
    if run.initial_state().len() != teacher.dim() {
        return Err(Error::DimensionMismatch {
            expected: teacher.dim(),
            actual: run.initial_state().len(),
        });
    }
    if run.path.total_steps() != teacher.total_steps() {
        return Err(Error::InvalidPath(format!(
            "run is for T = {}, teacher has T = {}",
            run.path.total_steps(),
            teacher.total_steps()
        )));
    }
    let same = run
        .initial_state()
        .iter()
        .zip(teacher.initial_state())
        .all(|(a, b)| a.to_bits() == b.to_bits());
    if !same {
        return Err(Error::ProvenanceMismatch);
    }
    Ok(())
}

/// Coefficient of determination of the least-squares line through `(xs, ys)`.
pub fn linear_fit_r2(xs: &[f64], ys: &[f64]) -> Result<f64> {
    if xs.len() != ys.len() {
        return Err(Error::DimensionMismatch {
            expected: xs.len(),
            actual: ys.len(),
        });
    }
    if xs.len() < 2 {
        return Err(Error::InvalidParameter("a linear fit needs at least two points".into()));
    }
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let syy: f64 = ys.iter().map(|y| (y - my) * (y - my)).sum();
    if sxx == 0.0 {
        return Err(Error::InvalidParameter("all x values coincide".into()));
    }
    if syy == 0.0 {
        return Ok(1.0);
    }
    Ok(sxy * sxy / (sxx * syy))
}
