use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScheduleKind {
    Linear,
}

/// Serializable recipe for a [`NoiseSchedule`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScheduleDescriptor {
    pub kind: ScheduleKind,
    #[serde(rename = "T")]
    pub total_steps: usize,
    pub beta_start: f64,
    pub beta_end: f64,
    /// Stochasticity of the reverse process; 0 is the deterministic teacher.
    #[serde(default, skip_serializing_if = "is_zero")]
    pub eta: f64,
}

fn is_zero(v: &f64) -> bool {
    *v == 0.0
}

impl ScheduleDescriptor {
    pub fn linear(total_steps: usize, beta_start: f64, beta_end: f64) -> Self {
        Self {
            kind: ScheduleKind::Linear,
            total_steps,
            beta_start,
            beta_end,
            eta: 0.0,
        }
    }

    pub fn build(&self) -> Result<NoiseSchedule> {
        let schedule = match self.kind {
            ScheduleKind::Linear => {
                make_linear_schedule(self.total_steps, self.beta_start, self.beta_end)?
            }
        };
        schedule.with_eta(self.eta)
    }
}

impl Default for ScheduleDescriptor {
    fn default() -> Self {
        Self::linear(1000, 1e-4, 0.02)
    }
}

/// Discrete forward-process parameters: cumulative signal retention `ᾱ_t` for
/// `t = 0..=T` (with `ᾱ_0 = 1`) and reverse-process noise scales `σ_t`.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseSchedule {
    descriptor: ScheduleDescriptor,
    alpha_bar: Vec<f64>,
    /// Indexed by `t`; entry 0 is unused and held at 0.
    sigma: Vec<f64>,
}

/// Linear β from `beta_start` at `t = 1` to `beta_end` at `t = T`, `ᾱ_t = Π_{s≤t}(1 − β_s)`.
pub fn make_linear_schedule(total_steps: usize, beta_start: f64, beta_end: f64) -> Result<NoiseSchedule> {
    if total_steps == 0 {
        return Err(Error::InvalidParameter("schedule needs T >= 1".into()));
    }
    if !(beta_start > 0.0 && beta_start <= beta_end && beta_end < 1.0) {
        return Err(Error::InvalidParameter(format!(
            "need 0 < beta_start <= beta_end < 1, got {beta_start} and {beta_end}"
        )));
    }
    let mut alpha_bar = Vec::with_capacity(total_steps + 1);
    alpha_bar.push(1.0);
    let mut acc = 1.0;
    for t in 1..=total_steps {
        let beta = if total_steps == 1 {
            beta_start
        } else {
            beta_start + (beta_end - beta_start) * (t - 1) as f64 / (total_steps - 1) as f64
        };
        acc *= 1.0 - beta;
        alpha_bar.push(acc);
    }
    Ok(NoiseSchedule {
        descriptor: ScheduleDescriptor::linear(total_steps, beta_start, beta_end),
        alpha_bar,
        sigma: vec![0.0; total_steps + 1],
    })
}

impl NoiseSchedule {
    /// Enables stochastic sampling with the DDIM noise family
    /// `σ_t = η·√((1−ᾱ_{t−1})/(1−ᾱ_t))·√(1−ᾱ_t/ᾱ_{t−1})`.
    pub fn with_eta(mut self, eta: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&eta) {
            return Err(Error::InvalidParameter(format!(
                "eta must lie in [0, 1], got {eta}"
            )));
        }
        self.descriptor.eta = eta;
        for t in 1..self.alpha_bar.len() {
            self.sigma[t] = if eta == 0.0 {
                0.0
            } else {
                let (cur, prev) = (self.alpha_bar[t], self.alpha_bar[t - 1]);
                eta * ((1.0 - prev) / (1.0 - cur)).sqrt() * (1.0 - cur / prev).sqrt()
            };
        }
        Ok(self)
    }

    pub fn descriptor(&self) -> &ScheduleDescriptor {
        &self.descriptor
    }

    pub fn total_steps(&self) -> usize {
        self.alpha_bar.len() - 1
    }

    pub fn alpha_bar(&self, t: usize) -> f64 {
        self.alpha_bar[t]
    }

    pub fn alpha_bars(&self) -> &[f64] {
        &self.alpha_bar
    }

    pub fn sigma(&self, t: usize) -> f64 {
        self.sigma[t]
    }

    pub fn is_deterministic(&self) -> bool {
        self.sigma.iter().all(|&s| s == 0.0)
    }
}
