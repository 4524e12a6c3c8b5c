use std::path::Path;

use olss::defaults;
use olss::diffusion::{PredictorDescriptor, ScheduleDescriptor};
use olss::olss::{Tolerance, TrainMode};
use serde::{Deserialize, Serialize};

use crate::CliError;

/// Every knob of a run. Missing fields take the built-in defaults; command-line flags
/// override the file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub total_steps: usize,
    pub beta_start: f64,
    pub beta_end: f64,
    pub dim: usize,
    /// Seed of the mixture teacher's means.
    pub teacher_seed: u64,
    pub trajectories: usize,
    pub base_seed: u64,
    pub steps: usize,
    pub mode: TrainMode,
    pub epsilon: Tolerance,
    pub eval_base_seed: u64,
    pub eval_count: usize,
    pub compare_steps: Vec<usize>,
    pub sweep_steps: Vec<usize>,
    pub sweep_repeats: usize,
    pub heatmap_stride: usize,
    pub threads: Option<usize>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            total_steps: defaults::TOTAL_STEPS,
            beta_start: defaults::BETA_START,
            beta_end: defaults::BETA_END,
            dim: defaults::DIM,
            teacher_seed: defaults::TEACHER_SEED,
            trajectories: defaults::TRAJECTORIES,
            base_seed: defaults::BASE_SEED,
            steps: defaults::STEPS,
            mode: TrainMode::Optimized,
            epsilon: Tolerance::Relative(defaults::RELATIVE_EPSILON),
            eval_base_seed: defaults::EVAL_BASE_SEED,
            eval_count: defaults::EVAL_COUNT,
            compare_steps: defaults::COMPARE_STEPS.to_vec(),
            sweep_steps: vec![2, 5, 10, 20, 50],
            sweep_repeats: 20,
            heatmap_stride: olss::eval::DEFAULT_STRIDE,
            threads: None,
        }
    }
}

impl RunConfig {
    pub fn load(path: Option<&Path>) -> Result<Self, CliError> {
        let Some(path) = path else {
            return Ok(Self::default());
        };
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Usage(format!("cannot read config {}: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| CliError::Usage(format!("config {}: {e}", path.display())))
    }

    pub fn schedule(&self) -> ScheduleDescriptor {
        ScheduleDescriptor::linear(self.total_steps, self.beta_start, self.beta_end)
    }

    pub fn teacher(&self) -> PredictorDescriptor {
        PredictorDescriptor::default_gmm(self.dim, self.teacher_seed)
    }

    pub fn eval_seeds(&self) -> Vec<u64> {
        (self.eval_base_seed..self.eval_base_seed + self.eval_count as u64).collect()
    }

    pub fn write(&self, dir: &Path) -> Result<(), CliError> {
        let text = serde_json::to_string_pretty(self).expect("config serializes");
        let path = dir.join("config.json");
        std::fs::write(&path, text + "\n").map_err(|e| olss::Error::Io {
            path,
            source: e,
        })?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn partial_file_keeps_defaults() {
        let c: RunConfig = serde_json::from_str(r#"{"steps": 7, "epsilon": {"kind": "absolute", "value": 0.01}}"#).unwrap();
        assert_eq!(c.steps, 7);
        assert_eq!(c.epsilon, Tolerance::Absolute(0.01));
        assert_eq!(c.total_steps, 1000);
    }

    #[test]
    fn unknown_fields_are_rejected() {
        assert!(serde_json::from_str::<RunConfig>(r#"{"stepz": 7}"#).is_err());
    }

    #[test]
    fn round_trips() {
        let c = RunConfig::default();
        let back: RunConfig = serde_json::from_str(&serde_json::to_string(&c).unwrap()).unwrap();
        assert_eq!(back, c);
    }
}
