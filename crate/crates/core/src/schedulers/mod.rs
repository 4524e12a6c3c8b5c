//! Few-step samplers: step paths, the shared sampler contract, and the DDIM and PNDM
//! baselines.

mod ddim;
mod pndm;

pub use ddim::ddim_step;
pub use pndm::{lms_combination, pndm_step, LMS_COEFFICIENTS};

use crate::diffusion::{NoisePredictor, NoiseSchedule};
use crate::error::{Error, Result};

/// Sampling steps `t(1) = T > t(2) > … > t(n) >= 1`; the terminal `t(n+1) = 0` is implicit.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct StepPath {
    total_steps: usize,
    steps: Vec<usize>,
}

impl StepPath {
    pub fn new(total_steps: usize, steps: Vec<usize>) -> Result<Self> {
        match steps.first() {
            None => return Err(Error::InvalidPath("path is empty".into())),
            Some(&first) if first != total_steps => {
                return Err(Error::InvalidPath(format!(
                    "path must start at T = {total_steps}, starts at {first}"
                )))
            }
            _ => {}
        }
        if steps.windows(2).any(|w| w[1] >= w[0]) {
            return Err(Error::InvalidPath(format!(
                "steps must strictly decrease: {steps:?}"
            )));
        }
        if steps.last() == Some(&0) {
            return Err(Error::InvalidPath("steps must be >= 1".into()));
        }
        Ok(Self { total_steps, steps })
    }

    pub fn steps(&self) -> &[usize] {
        &self.steps
    }

    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    pub fn total_steps(&self) -> usize {
        self.total_steps
    }

    /// `t(i+1)` for 1-based `i`, with `t(n+1) = 0`.
    pub fn next_after(&self, i: usize) -> usize {
        self.steps.get(i).copied().unwrap_or(0)
    }

    /// The steps followed by the terminal 0.
    pub fn with_terminal(&self) -> Vec<usize> {
        let mut v = self.steps.clone();
        v.push(0);
        v
    }
}

/// Equally spaced path: `t(i) = round(T·(n−i+1)/n)`.
pub fn uniform_path(total_steps: usize, n: usize) -> Result<StepPath> {
    if n == 0 || n > total_steps {
        return Err(Error::InvalidParameter(format!(
            "uniform path needs 1 <= n <= T, got n = {n}, T = {total_steps}"
        )));
    }
    let mut steps: Vec<usize> = (1..=n)
        .map(|i| {
            let num = total_steps * (n - i + 1);
            // round half up in integer arithmetic
            (2 * num + n) / (2 * n)
        })
        .collect();
    // spacing T/n >= 1 already makes the rounded sequence strictly decreasing; clamp
    // anyway so the invariant never rests on that argument
    for i in (0..n).rev() {
        let floor = n - i;
        let ceiling = if i == 0 { total_steps } else { steps[i - 1] - 1 };
        steps[i] = steps[i].clamp(floor, ceiling.max(floor));
    }
    steps[0] = total_steps;
    StepPath::new(total_steps, steps)
}

/// Record of one few-step sampling run.
#[derive(Debug, Clone, PartialEq)]
pub struct SamplerRun {
    pub path: StepPath,
    /// States at `t(1), …, t(n), 0`.
    pub states: Vec<Vec<f64>>,
    /// Model outputs at `t(1), …, t(n)`.
    pub outputs: Vec<Vec<f64>>,
    pub model_calls: usize,
}

impl SamplerRun {
    /// Step index of each entry in `states`.
    pub fn times(&self) -> Vec<usize> {
        self.path.with_terminal()
    }

    pub fn initial_state(&self) -> &[f64] {
        &self.states[0]
    }

    pub fn final_state(&self) -> &[f64] {
        self.states.last().expect("run has states")
    }
}

/// A few-step sampler: calls the predictor exactly once per path step.
pub trait Sampler: Send + Sync {
    fn name(&self) -> String;

    fn path(&self) -> &StepPath;

    fn run(&self, predictor: &dyn NoisePredictor, x_start: &[f64]) -> Result<SamplerRun>;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum SamplerKind {
    Ddim,
    Pndm,
}

impl SamplerKind {
    pub fn label(self) -> &'static str {
        match self {
            SamplerKind::Ddim => "DDIM",
            SamplerKind::Pndm => "PNDM",
        }
    }
}

/// DDIM or PNDM over a fixed path.
#[derive(Debug, Clone)]
pub struct ReferenceSampler {
    pub kind: SamplerKind,
    pub schedule: NoiseSchedule,
    pub path: StepPath,
}

impl ReferenceSampler {
    pub fn new(kind: SamplerKind, schedule: NoiseSchedule, path: StepPath) -> Result<Self> {
        if path.total_steps() != schedule.total_steps() {
            return Err(Error::InvalidPath(format!(
                "path is for T = {}, schedule has T = {}",
                path.total_steps(),
                schedule.total_steps()
            )));
        }
        Ok(Self {
            kind,
            schedule,
            path,
        })
    }
}

impl Sampler for ReferenceSampler {
    fn name(&self) -> String {
        self.kind.label().to_string()
    }

    fn path(&self) -> &StepPath {
        &self.path
    }

    fn run(&self, predictor: &dyn NoisePredictor, x_start: &[f64]) -> Result<SamplerRun> {
        run_sampler(self.kind, &self.schedule, predictor, &self.path, x_start)
    }
}

pub fn run_sampler(
    kind: SamplerKind,
    schedule: &NoiseSchedule,
    predictor: &dyn NoisePredictor,
    path: &StepPath,
    x_start: &[f64],
) -> Result<SamplerRun> {
    if path.total_steps() != schedule.total_steps() {
        return Err(Error::InvalidPath(format!(
            "path is for T = {}, schedule has T = {}",
            path.total_steps(),
            schedule.total_steps()
        )));
    }
    if x_start.len() != predictor.dim() {
        return Err(Error::DimensionMismatch {
            expected: predictor.dim(),
            actual: x_start.len(),
        });
    }
    let times = path.with_terminal();
    let mut states = vec![x_start.to_vec()];
    let mut outputs: Vec<Vec<f64>> = Vec::with_capacity(path.len());
    let mut model_calls = 0;
    for (i, pair) in times.windows(2).enumerate() {
        let (t, t_next) = (pair[0], pair[1]);
        let x = &states[i];
        let e = predictor.predict(x, t);
        model_calls += 1;
        if e.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFiniteStep { step: t });
        }
        outputs.push(e);
        let next = match kind {
            SamplerKind::Ddim => ddim_step(schedule, x, &outputs[i], t, t_next),
            SamplerKind::Pndm => {
                let history: Vec<&[f64]> = outputs.iter().rev().take(4).map(Vec::as_slice).collect();
                pndm_step(schedule, x, &history, t, t_next)?
            }
        };
        if next.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFiniteStep { step: t_next });
        }
        states.push(next);
    }
    Ok(SamplerRun {
        path: path.clone(),
        states,
        outputs,
        model_calls,
    })
}
