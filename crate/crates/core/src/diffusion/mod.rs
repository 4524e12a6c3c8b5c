//! The discrete-time diffusion process, analytic teachers, and recorded trajectories.

mod container;
mod generate;
mod predictor;
mod schedule;

pub use container::{
    load_trajectory_set, outputs_file, read_manifest, save_trajectory_set, states_file, Manifest,
    MANIFEST_FILE,
};
pub use generate::{
    full_generate, initial_noise, record_trajectory_set, reverse_step, teacher_trajectory,
    Trajectory, TrajectorySet,
};
pub use predictor::{
    gaussian_predictor, gmm_predictor, GaussianPredictor, GmmPredictor, NoisePredictor,
    PredictorDescriptor, ZeroPredictor,
};
pub use schedule::{make_linear_schedule, NoiseSchedule, ScheduleDescriptor, ScheduleKind};
