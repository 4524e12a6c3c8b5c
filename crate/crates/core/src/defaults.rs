//! The default experiment: a three-component mixture teacher in 16 dimensions over a
//! 1000-step linear schedule, 32 training trajectories and 32 held-out seeds.

use crate::diffusion::{PredictorDescriptor, ScheduleDescriptor};

pub const TOTAL_STEPS: usize = 1000;
pub const BETA_START: f64 = 1e-4;
pub const BETA_END: f64 = 0.02;
pub const DIM: usize = 16;
pub const TRAJECTORIES: usize = 32;
pub const BASE_SEED: u64 = 0;
/// Seed for the mixture means.
pub const TEACHER_SEED: u64 = 0;
pub const STEPS: usize = 5;
pub const RELATIVE_EPSILON: f64 = 1e-4;
pub const EVAL_BASE_SEED: u64 = 1000;
pub const EVAL_COUNT: usize = 32;
pub const COMPARE_STEPS: [usize; 2] = [5, 10];

pub fn schedule() -> ScheduleDescriptor {
    ScheduleDescriptor::linear(TOTAL_STEPS, BETA_START, BETA_END)
}

pub fn teacher() -> PredictorDescriptor {
    PredictorDescriptor::default_gmm(DIM, TEACHER_SEED)
}

pub fn eval_seeds() -> Vec<u64> {
    (EVAL_BASE_SEED..EVAL_BASE_SEED + EVAL_COUNT as u64).collect()
}
