use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use super::{NoisePredictor, NoiseSchedule, PredictorDescriptor, ScheduleDescriptor};
use crate::error::{Error, Result};

/// One complete teacher run: `x_T, …, x_0` and `e_T, …, e_1`, stored flat in
/// descending-`t` order.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    dim: usize,
    total_steps: usize,
    states: Vec<f64>,
    outputs: Vec<f64>,
    seed: Option<u64>,
}

impl Trajectory {
    pub(crate) fn from_parts(
        dim: usize,
        total_steps: usize,
        states: Vec<f64>,
        outputs: Vec<f64>,
        seed: Option<u64>,
    ) -> Result<Self> {
        if states.len() != (total_steps + 1) * dim {
            return Err(Error::DimensionMismatch {
                expected: (total_steps + 1) * dim,
                actual: states.len(),
            });
        }
        if outputs.len() != total_steps * dim {
            return Err(Error::DimensionMismatch {
                expected: total_steps * dim,
                actual: outputs.len(),
            });
        }
        Ok(Self {
            dim,
            total_steps,
            states,
            outputs,
            seed,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn total_steps(&self) -> usize {
        self.total_steps
    }

    pub fn seed(&self) -> Option<u64> {
        self.seed
    }

    /// `x_t` for `0 <= t <= T`.
    pub fn state(&self, t: usize) -> &[f64] {
        assert!(t <= self.total_steps, "state index {t} out of range");
        let i = self.total_steps - t;
        &self.states[i * self.dim..(i + 1) * self.dim]
    }

    /// `e_t` for `1 <= t <= T`.
    pub fn output(&self, t: usize) -> &[f64] {
        assert!(
            (1..=self.total_steps).contains(&t),
            "output index {t} out of range"
        );
        let i = self.total_steps - t;
        &self.outputs[i * self.dim..(i + 1) * self.dim]
    }

    pub fn initial_state(&self) -> &[f64] {
        self.state(self.total_steps)
    }

    pub fn final_state(&self) -> &[f64] {
        self.state(0)
    }

    pub fn states_flat(&self) -> &[f64] {
        &self.states
    }

    pub fn outputs_flat(&self) -> &[f64] {
        &self.outputs
    }
}

/// One reverse step from `t` to `t − 1`:
///
/// ```text
/// x_{t−1} = √ᾱ_{t−1}·(x_t − √(1−ᾱ_t)·e_t)/√ᾱ_t + √(1−ᾱ_{t−1}−σ_t²)·e_t + σ_t·ε_t
/// ```
///
/// `noise` is only read when `σ_t > 0`.
pub fn reverse_step(schedule: &NoiseSchedule, t: usize, x: &[f64], e: &[f64], noise: Option<&[f64]>) -> Vec<f64> {
    let ab_t = schedule.alpha_bar(t);
    let ab_prev = schedule.alpha_bar(t - 1);
    let sigma = schedule.sigma(t);
    let sqrt_ab_t = ab_t.sqrt();
    let sqrt_one_minus_ab_t = (1.0 - ab_t).sqrt();
    let sqrt_ab_prev = ab_prev.sqrt();
    let direction = (1.0 - ab_prev - sigma * sigma).max(0.0).sqrt();
    let mut out: Vec<f64> = x
        .iter()
        .zip(e)
        .map(|(xi, ei)| {
            let pred_x0 = (xi - sqrt_one_minus_ab_t * ei) / sqrt_ab_t;
            sqrt_ab_prev * pred_x0 + direction * ei
        })
        .collect();
    if sigma > 0.0 {
        let noise = noise.expect("stochastic step needs a noise vector");
        for (o, n) in out.iter_mut().zip(noise) {
            *o += sigma * n;
        }
    }
    out
}

/// Runs the full `T`-step reverse process from `x_T`, recording every state and model
/// output. Randomness is drawn from `noise_source` only at steps with `σ_t > 0`.
pub fn full_generate<R: Rng + ?Sized>(
    schedule: &NoiseSchedule,
    predictor: &dyn NoisePredictor,
    x_start: &[f64],
    noise_source: &mut R,
) -> Result<Trajectory> {
    let d = predictor.dim();
    if x_start.len() != d {
        return Err(Error::DimensionMismatch {
            expected: d,
            actual: x_start.len(),
        });
    }
    let total = schedule.total_steps();
    if x_start.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFiniteStep { step: total });
    }
    let mut states = Vec::with_capacity((total + 1) * d);
    let mut outputs = Vec::with_capacity(total * d);
    states.extend_from_slice(x_start);
    let mut x = x_start.to_vec();
    let mut e = vec![0.0; d];
    let mut noise = vec![0.0; d];
    for t in (1..=total).rev() {
        predictor.predict_into(&x, t, &mut e);
        if e.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFiniteStep { step: t });
        }
        let eps = if schedule.sigma(t) > 0.0 {
            noise
                .iter_mut()
                .for_each(|n| *n = noise_source.sample(StandardNormal));
            Some(noise.as_slice())
        } else {
            None
        };
        x = reverse_step(schedule, t, &x, &e, eps);
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFiniteStep { step: t - 1 });
        }
        outputs.extend_from_slice(&e);
        states.extend_from_slice(&x);
    }
    Trajectory::from_parts(d, total, states, outputs, None)
}

/// Seeded standard-normal starting noise.
pub fn initial_noise(dim: usize, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..dim).map(|_| rng.sample(StandardNormal)).collect()
}

/// Draws `x_T` from `seed` and runs the full process; the same generator then
/// supplies any stochastic-step noise.
pub fn teacher_trajectory(schedule: &NoiseSchedule, predictor: &dyn NoisePredictor, seed: u64) -> Result<Trajectory> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let x_start: Vec<f64> = (0..predictor.dim())
        .map(|_| rng.sample(StandardNormal))
        .collect();
    let mut traj = full_generate(schedule, predictor, &x_start, &mut rng)?;
    traj.seed = Some(seed);
    Ok(traj)
}

/// `K` teacher runs with seeds `base_seed + k`.
#[derive(Debug, Clone, PartialEq)]
pub struct TrajectorySet {
    pub schedule: ScheduleDescriptor,
    pub predictor: PredictorDescriptor,
    pub base_seed: u64,
    pub trajectories: Vec<Trajectory>,
}

impl TrajectorySet {
    pub fn len(&self) -> usize {
        self.trajectories.len()
    }

    pub fn is_empty(&self) -> bool {
        self.trajectories.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.trajectories.first().map_or(0, Trajectory::dim)
    }

    pub fn total_steps(&self) -> usize {
        self.schedule.total_steps
    }

    pub fn is_deterministic(&self) -> bool {
        self.schedule.eta == 0.0
    }

    pub fn seeds(&self) -> std::ops::Range<u64> {
        self.base_seed..self.base_seed + self.len() as u64
    }
}

/// Records `count` trajectories in parallel; the result does not depend on the
/// thread count.
pub fn record_trajectory_set(
    schedule: &NoiseSchedule,
    predictor: &dyn NoisePredictor,
    count: usize,
    base_seed: u64,
) -> Result<TrajectorySet> {
    if count == 0 {
        return Err(Error::InvalidParameter("need at least one trajectory".into()));
    }
    let trajectories = (0..count as u64)
        .into_par_iter()
        .map(|k| teacher_trajectory(schedule, predictor, base_seed + k))
        .collect::<Result<Vec<_>>>()?;
    Ok(TrajectorySet {
        schedule: schedule.descriptor().clone(),
        predictor: predictor.descriptor(),
        base_seed,
        trajectories,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffusion::{make_linear_schedule, ZeroPredictor};

    #[test]
    fn one_step_unrolls_to_predicted_clean_sample() {
        let s = make_linear_schedule(1, 0.3, 0.3).unwrap();
        let p = PredictorDescriptor::default_gmm(3, 1).build(&s).unwrap();
        let traj = teacher_trajectory(&s, p.as_ref(), 5).unwrap();
        let (x1, e1) = (traj.state(1), traj.output(1));
        let ab = s.alpha_bar(1);
        for i in 0..3 {
            let want = (x1[i] - (1.0 - ab).sqrt() * e1[i]) / ab.sqrt();
            assert!((traj.final_state()[i] - want).abs() < 1e-15);
        }
    }

    #[test]
    fn zero_predictor_only_rescales() {
        let s = make_linear_schedule(20, 0.01, 0.1).unwrap();
        let traj = teacher_trajectory(&s, &ZeroPredictor::new(4), 3).unwrap();
        for t in 1..=20 {
            let r = (s.alpha_bar(t - 1) / s.alpha_bar(t)).sqrt();
            for (a, b) in traj.state(t - 1).iter().zip(traj.state(t)) {
                assert!((a - r * b).abs() <= 1e-14 * b.abs().max(1.0));
            }
        }
    }

    #[test]
    fn stochastic_schedule_draws_noise_and_stays_seeded() {
        let s = make_linear_schedule(30, 1e-3, 0.05).unwrap().with_eta(1.0).unwrap();
        let p = ZeroPredictor::new(2);
        let a = teacher_trajectory(&s, &p, 4).unwrap();
        let b = teacher_trajectory(&s, &p, 4).unwrap();
        assert_eq!(a, b);
        let s0 = make_linear_schedule(30, 1e-3, 0.05).unwrap();
        let c = teacher_trajectory(&s0, &p, 4).unwrap();
        assert_eq!(a.initial_state(), c.initial_state());
        assert_ne!(a.final_state(), c.final_state());
    }

    #[test]
    fn record_uses_consecutive_seeds() {
        let s = make_linear_schedule(10, 0.01, 0.1).unwrap();
        let p = ZeroPredictor::new(3);
        let set = record_trajectory_set(&s, &p, 3, 40).unwrap();
        assert_eq!(set.len(), 3);
        for (k, traj) in set.trajectories.iter().enumerate() {
            assert_eq!(traj.seed(), Some(40 + k as u64));
            assert_eq!(traj.initial_state(), initial_noise(3, 40 + k as u64).as_slice());
        }
        assert!(record_trajectory_set(&s, &p, 0, 0).is_err());
    }

    #[test]
    fn dimension_mismatch_and_blowup_are_reported() {
        let s = make_linear_schedule(5, 0.01, 0.1).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(full_generate(&s, &ZeroPredictor::new(2), &[1.0], &mut rng).is_err());

        struct Exploding;
        impl NoisePredictor for Exploding {
            fn dim(&self) -> usize {
                1
            }
            fn predict_into(&self, _x: &[f64], t: usize, out: &mut [f64]) {
                out[0] = if t == 3 { f64::INFINITY } else { 0.0 };
            }
            fn descriptor(&self) -> PredictorDescriptor {
                PredictorDescriptor::Zero { dim: 1 }
            }
        }
        let err = full_generate(&s, &Exploding, &[1.0], &mut rng).unwrap_err();
        assert!(matches!(err, Error::NonFiniteStep { step: 3 }));
    }
}
