use std::path::Path;
use std::time::Instant;

use rayon::prelude::*;

use super::table::write_csv;
use super::{final_state_rmse, per_step_rmse};
use crate::diffusion::{teacher_trajectory, NoisePredictor, NoiseSchedule, Trajectory, TrajectorySet};
use crate::error::{Error, Result};
use crate::olss::{train, OlssScheduler, Tolerance, TrainMode};
use crate::schedulers::{uniform_path, ReferenceSampler, Sampler, SamplerKind};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum SchedulerKind {
    Ddim,
    Pndm,
    OlssP,
    Olss,
}

impl SchedulerKind {
    pub const ALL: [SchedulerKind; 4] = [Self::Ddim, Self::Pndm, Self::OlssP, Self::Olss];

    pub fn label(self) -> &'static str {
        match self {
            Self::Ddim => "DDIM",
            Self::Pndm => "PNDM",
            Self::OlssP => "OLSS-P",
            Self::Olss => "OLSS",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ComparisonRow {
    pub kind: SchedulerKind,
    pub n: usize,
    /// Mean final-state RMSE over the evaluation seeds.
    pub rmse_heldout: f64,
    /// Mean final-state RMSE when started from the training trajectories' `x_T`.
    pub rmse_train: f64,
    /// Mean RMSE at each visited step `t(2), …, t(n), 0` over the evaluation seeds.
    pub per_step: Vec<f64>,
    pub seconds_per_sample: f64,
    pub model_calls: usize,
}

#[derive(Debug, Clone)]
pub struct ComparisonReport {
    pub rows: Vec<ComparisonRow>,
    /// The OLSS and OLSS-P schedulers trained for the report, in row order.
    pub trained: Vec<OlssScheduler>,
}

impl ComparisonReport {
    pub fn row(&self, kind: SchedulerKind, n: usize) -> Option<&ComparisonRow> {
        self.rows.iter().find(|r| r.kind == kind && r.n == n)
    }

    pub const HEADERS: [&'static str; 7] = [
        "scheduler",
        "n",
        "rmse_heldout",
        "rmse_train",
        "seconds_per_sample",
        "model_calls",
        "per_step_rmse",
    ];

    /// One row per scheduler and step count; per-step errors are `;`-separated.
    pub fn write_csv(&self, out: &Path) -> Result<()> {
        let headers: Vec<String> = Self::HEADERS.map(String::from).to_vec();
        let rows: Vec<Vec<String>> = self
            .rows
            .iter()
            .map(|r| {
                let steps: Vec<String> = r.per_step.iter().map(f64::to_string).collect();
                vec![
                    r.kind.label().to_string(),
                    r.n.to_string(),
                    r.rmse_heldout.to_string(),
                    r.rmse_train.to_string(),
                    r.seconds_per_sample.to_string(),
                    r.model_calls.to_string(),
                    steps.join(";"),
                ]
            })
            .collect();
        write_csv(out, &headers, &rows)
    }
}

/// Trains OLSS and OLSS-P on `teacher_set` for every `n`, then runs them next to DDIM
/// and PNDM from the `x_T` of every evaluation seed.
pub fn compare_schedulers(
    schedule: &NoiseSchedule,
    predictor: &dyn NoisePredictor,
    teacher_set: &TrajectorySet,
    eval_seeds: &[u64],
    n_values: &[usize],
    tolerance: Tolerance,
) -> Result<ComparisonReport> {
    if eval_seeds.is_empty() || n_values.is_empty() {
        return Err(Error::InvalidParameter("need at least one seed and one step count".into()));
    }
    let train_seeds = teacher_set.seeds();
    if let Some(s) = eval_seeds.iter().find(|s| train_seeds.contains(s)) {
        return Err(Error::InvalidParameter(format!(
            "evaluation seed {s} was used for training"
        )));
    }
    if schedule.descriptor() != &teacher_set.schedule {
        return Err(Error::InvalidParameter(
            "schedule differs from the one the trajectories were recorded with".into(),
        ));
    }
    let held_out = eval_seeds
        .par_iter()
        .map(|&seed| teacher_trajectory(schedule, predictor, seed))
        .collect::<Result<Vec<_>>>()?;

    let mut rows = Vec::new();
    let mut trained = Vec::new();
    for &n in n_values {
        let path = uniform_path(schedule.total_steps(), n)?;
        for kind in SchedulerKind::ALL {
            let sampler: Box<dyn Sampler> = match kind {
                SchedulerKind::Ddim => Box::new(ReferenceSampler::new(SamplerKind::Ddim, schedule.clone(), path.clone())?),
                SchedulerKind::Pndm => Box::new(ReferenceSampler::new(SamplerKind::Pndm, schedule.clone(), path.clone())?),
                SchedulerKind::OlssP | SchedulerKind::Olss => {
                    let mode = if kind == SchedulerKind::Olss {
                        TrainMode::Optimized
                    } else {
                        TrainMode::Uniform
                    };
                    let s = train(teacher_set, n, mode, tolerance)?;
                    trained.push(s.clone());
                    Box::new(s)
                }
            };
            let held = evaluate(sampler.as_ref(), predictor, &held_out)?;
            let train = evaluate(sampler.as_ref(), predictor, &teacher_set.trajectories)?;
            rows.push(ComparisonRow {
                kind,
                n,
                rmse_heldout: held.rmse,
                rmse_train: train.rmse,
                per_step: held.per_step,
                seconds_per_sample: held.seconds,
                model_calls: held.model_calls,
            });
        }
    }
    Ok(ComparisonReport { rows, trained })
}

struct Evaluation {
    rmse: f64,
    per_step: Vec<f64>,
    seconds: f64,
    model_calls: usize,
}

/// Runs sequentially so the timings are per-sample and the sums have a fixed order.
fn evaluate(sampler: &dyn Sampler, predictor: &dyn NoisePredictor, teachers: &[Trajectory]) -> Result<Evaluation> {
    let mut rmse = 0.0;
    let mut per_step = vec![0.0; sampler.path().len()];
    let mut seconds = 0.0;
    let mut model_calls = 0;
    for teacher in teachers {
        let started = Instant::now();
        let run = sampler.run(predictor, teacher.initial_state())?;
        seconds += started.elapsed().as_secs_f64();
        if model_calls != 0 && run.model_calls != model_calls {
            return Err(Error::InvalidParameter("model call count varies between runs".into()));
        }
        model_calls = run.model_calls;
        rmse += final_state_rmse(&run, teacher)?;
        for (acc, r) in per_step.iter_mut().zip(per_step_rmse(&run, teacher)?) {
            *acc += r;
        }
    }
    let k = teachers.len() as f64;
    per_step.iter_mut().for_each(|v| *v /= k);
    Ok(Evaluation {
        rmse: rmse / k,
        per_step,
        seconds: seconds / k,
        model_calls,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub n: usize,
    /// Mean final-state RMSE over the teachers.
    pub rmse: f64,
    /// Mean wall-clock seconds per sample, averaged over the repeats.
    pub seconds: f64,
    /// Per-repeat mean seconds per sample.
    pub timings: Vec<f64>,
}

/// For each `n`, builds a sampler with `factory` and times it over `repeats` passes
/// through every teacher's `x_T`. Construction is not timed.
pub fn efficiency_sweep(
    predictor: &dyn NoisePredictor,
    factory: &dyn Fn(usize) -> Result<Box<dyn Sampler>>,
    teachers: &[Trajectory],
    n_values: &[usize],
    repeats: usize,
) -> Result<Vec<SweepRow>> {
    if repeats == 0 {
        return Err(Error::InvalidParameter("repeats must be at least 1".into()));
    }
    if teachers.is_empty() {
        return Err(Error::InvalidParameter("no teacher trajectories".into()));
    }
    let mut rows = Vec::with_capacity(n_values.len());
    for &n in n_values {
        let sampler = factory(n)?;
        let mut rmse = 0.0;
        for teacher in teachers {
            rmse += final_state_rmse(&sampler.run(predictor, teacher.initial_state())?, teacher)?;
        }
        let mut timings = Vec::with_capacity(repeats);
        for _ in 0..repeats {
            let started = Instant::now();
            for teacher in teachers {
                std::hint::black_box(sampler.run(predictor, teacher.initial_state())?);
            }
            timings.push(started.elapsed().as_secs_f64() / teachers.len() as f64);
        }
        rows.push(SweepRow {
            n,
            rmse: rmse / teachers.len() as f64,
            seconds: timings.iter().sum::<f64>() / repeats as f64,
            timings,
        });
    }
    Ok(rows)
}

/// CSV columns: `n,rmse,seconds`.
pub fn efficiency_sweep_csv(rows: &[SweepRow], out: &Path) -> Result<()> {
    let headers: Vec<String> = ["n", "rmse", "seconds"].map(String::from).to_vec();
    let cells: Vec<Vec<String>> = rows
        .iter()
        .map(|r| vec![r.n.to_string(), r.rmse.to_string(), r.seconds.to_string()])
        .collect();
    write_csv(out, &headers, &cells)
}
