//! Stacked least-squares systems over recorded teacher trajectories.
//!
//! For a prefix `t(1) = T > … > t(i)` and a target step, every trajectory contributes
//! `d` rows; column 0 holds `x_T` and column `j` holds `e_{t(j)}`. One weight vector is
//! shared by all trajectories.

use crate::diffusion::{reverse_step, NoiseSchedule, TrajectorySet};
use crate::error::{Error, Result};
use crate::linalg::{LeastSquaresFactor, Matrix};

/// One fitted skip: `x̂_target = w₀·x_T + Σ_j w_j·e_{t(j)}`.
#[derive(Debug, Clone, PartialEq)]
pub struct StepFit {
    pub weights: Vec<f64>,
    /// Root-mean-square error per element over the whole stack.
    pub residual: f64,
    pub regularized: bool,
}

pub(crate) fn validate_prefix(set: &TrajectorySet, prefix: &[usize], target: usize) -> Result<()> {
    if !set.is_deterministic() {
        return Err(Error::StochasticTrajectories);
    }
    if set.is_empty() {
        return Err(Error::InvalidParameter("no trajectories recorded".into()));
    }
    let total = set.total_steps();
    match prefix.first() {
        Some(&first) if first == total => {}
        _ => {
            return Err(Error::InvalidPath(format!(
                "prefix must start at T = {total}: {prefix:?}"
            )))
        }
    }
    if prefix.windows(2).any(|w| w[1] >= w[0]) || prefix.last() == Some(&0) {
        return Err(Error::InvalidPath(format!(
            "prefix must strictly decrease within [1, T]: {prefix:?}"
        )));
    }
    let last = *prefix.last().expect("nonempty prefix");
    if target > last {
        return Err(Error::InvalidPath(format!(
            "target {target} lies above the last prefix step {last}"
        )));
    }
    let rows = set.len() * set.dim();
    if rows < prefix.len() + 1 {
        return Err(Error::Underdetermined {
            rows,
            cols: prefix.len() + 1,
        });
    }
    Ok(())
}

/// Design matrix for a prefix: `K·d` rows, `i + 1` columns.
pub fn stack_basis(set: &TrajectorySet, prefix: &[usize]) -> Result<Matrix> {
    validate_prefix(set, prefix, *prefix.last().unwrap_or(&0))?;
    let d = set.dim();
    let cols = prefix.len() + 1;
    let mut data = Vec::with_capacity(set.len() * d * cols);
    for traj in &set.trajectories {
        let x_start = traj.initial_state();
        for (r, &x) in x_start.iter().enumerate() {
            data.push(x);
            data.extend(prefix.iter().map(|&t| traj.output(t)[r]));
        }
    }
    Matrix::new(set.len() * d, cols, data)
}

/// Teacher states `x_t` of every trajectory, stacked.
pub fn stack_states(set: &TrajectorySet, t: usize) -> Vec<f64> {
    set.trajectories
        .iter()
        .flat_map(|traj| traj.state(t).iter().copied())
        .collect()
}

/// Teacher outputs `e_t` of every trajectory, stacked.
pub fn stack_outputs(set: &TrajectorySet, t: usize) -> Vec<f64> {
    set.trajectories
        .iter()
        .flat_map(|traj| traj.output(t).iter().copied())
        .collect()
}

pub fn stack_design(set: &TrajectorySet, prefix: &[usize], target: usize) -> Result<(Matrix, Vec<f64>)> {
    validate_prefix(set, prefix, target)?;
    Ok((stack_basis(set, prefix)?, stack_states(set, target)))
}

pub(crate) fn fit_with(factor: &LeastSquaresFactor, b: &[f64]) -> Result<StepFit> {
    let sol = factor.solve(b)?;
    Ok(StepFit {
        residual: sol.residual_norm / (b.len() as f64).sqrt(),
        weights: sol.weights,
        regularized: sol.regularized,
    })
}

/// End-to-end skip estimate: least-squares weights for predicting `x_target` directly
/// from the prefix basis.
pub fn solve_step_weights(set: &TrajectorySet, prefix: &[usize], target: usize) -> Result<StepFit> {
    let (a, b) = stack_design(set, prefix, target)?;
    fit_with(&LeastSquaresFactor::new(a)?, &b)
}

/// Coefficients that deterministic DDIM, run along `prefix` and then to `target`,
/// implicitly places on `{x_T, e_{t(1)}, …, e_{t(i)}}`.
pub fn ddim_coefficients(schedule: &NoiseSchedule, prefix: &[usize], target: usize) -> Vec<f64> {
    let mut coeffs = vec![0.0; prefix.len() + 1];
    coeffs[0] = 1.0;
    let mut hops = prefix.to_vec();
    hops.push(target);
    for (j, pair) in hops.windows(2).enumerate() {
        let (ab_t, ab_next) = (schedule.alpha_bar(pair[0]), schedule.alpha_bar(pair[1]));
        let x_scale = (ab_next / ab_t).sqrt();
        let e_scale = (1.0 - ab_next).sqrt() - (ab_next / ab_t).sqrt() * (1.0 - ab_t).sqrt();
        coeffs.iter_mut().for_each(|c| *c *= x_scale);
        coeffs[j + 1] += e_scale;
    }
    coeffs
}

/// RMS residual of an arbitrary coefficient vector on the stacked system.
pub fn coefficient_residual(set: &TrajectorySet, prefix: &[usize], target: usize, coeffs: &[f64]) -> Result<f64> {
    let (a, b) = stack_design(set, prefix, target)?;
    let fitted = a.matvec(coeffs)?;
    let ss: f64 = fitted.iter().zip(&b).map(|(f, y)| (f - y) * (f - y)).sum();
    Ok((ss / b.len() as f64).sqrt())
}

/// Result of the cascaded estimator.
#[derive(Debug, Clone, PartialEq)]
pub struct NaiveEstimate {
    /// Estimated `x̂_target` per trajectory.
    pub estimates: Vec<Vec<f64>>,
    pub residual: f64,
}

/// Cascaded skip estimate: walk every skipped step with the teacher's update rule,
/// replacing each missing model output by its least-squares projection onto the
/// prefix basis (projection weights fitted on the training stack).
///
/// The walk starts from the prefix's own estimate of `x_{t(i)}`: `x_T` itself when
/// `i = 1`, otherwise the end-to-end fit of `x_{t(i)}` from the shorter prefix, so that
/// every intermediate estimate stays in the span of the basis.
pub fn naive_skip_estimate(
    schedule: &NoiseSchedule,
    set: &TrajectorySet,
    prefix: &[usize],
    target: usize,
) -> Result<NaiveEstimate> {
    validate_prefix(set, prefix, target)?;
    if schedule.descriptor() != &set.schedule {
        return Err(Error::InvalidParameter(
            "schedule does not match the one the trajectories were recorded with".into(),
        ));
    }
    let basis = stack_basis(set, prefix)?;
    let factor = LeastSquaresFactor::new(basis)?;
    let last = *prefix.last().expect("nonempty prefix");
    let i = prefix.len();

    let mut x = if i == 1 {
        stack_states(set, last)
    } else {
        let shorter = LeastSquaresFactor::new(stack_basis(set, &prefix[..i - 1])?)?;
        let w = shorter.solve(&stack_states(set, last))?.weights;
        shorter.design().matvec(&w)?
    };

    for t in (target + 1..=last).rev() {
        let e = if t == last {
            factor.design().column(i)
        } else {
            let w = factor.solve(&stack_outputs(set, t))?.weights;
            factor.design().matvec(&w)?
        };
        // the update is element-wise, so the stacked vectors can be stepped together
        x = reverse_step(schedule, t, &x, &e, None);
    }

    let truth = stack_states(set, target);
    let ss: f64 = x.iter().zip(&truth).map(|(a, b)| (a - b) * (a - b)).sum();
    let d = set.dim();
    Ok(NaiveEstimate {
        estimates: x.chunks(d).map(<[f64]>::to_vec).collect(),
        residual: (ss / truth.len() as f64).sqrt(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffusion::{make_linear_schedule, record_trajectory_set, PredictorDescriptor, ZeroPredictor};

    fn zero_set(k: usize, d: usize) -> (NoiseSchedule, TrajectorySet) {
        let s = make_linear_schedule(40, 1e-3, 0.05).unwrap();
        let set = record_trajectory_set(&s, &ZeroPredictor::new(d), k, 0).unwrap();
        (s, set)
    }

    fn gmm_set() -> (NoiseSchedule, TrajectorySet) {
        let s = make_linear_schedule(100, 1e-4, 0.05).unwrap();
        let p = PredictorDescriptor::default_gmm(6, 3).build(&s).unwrap();
        let set = record_trajectory_set(&s, p.as_ref(), 8, 0).unwrap();
        (s, set)
    }

    #[test]
    fn shapes() {
        let (_, set) = zero_set(1, 4);
        let (a, b) = stack_design(&set, &[40], 20).unwrap();
        assert_eq!((a.rows(), a.cols(), b.len()), (4, 2, 4));
        assert_eq!(a.column(0), set.trajectories[0].initial_state());
        let (_, set) = zero_set(3, 4);
        let (a, _) = stack_design(&set, &[40, 30, 10], 5).unwrap();
        assert_eq!((a.rows(), a.cols()), (12, 4));
    }

    #[test]
    fn underdetermined_and_invalid_prefixes() {
        let (_, set) = zero_set(1, 2);
        assert!(matches!(
            stack_design(&set, &[40, 30, 20], 10),
            Err(Error::Underdetermined { rows: 2, cols: 4 })
        ));
        assert!(stack_design(&set, &[39], 10).is_err());
        assert!(stack_design(&set, &[40, 41], 10).is_err());
        assert!(stack_design(&set, &[40, 20], 30).is_err());
    }

    #[test]
    fn target_equal_to_start_is_exact() {
        let (_, set) = gmm_set();
        let fit = solve_step_weights(&set, &[100], 100).unwrap();
        assert!((fit.weights[0] - 1.0).abs() < 1e-14);
        assert!(fit.weights[1].abs() < 1e-14);
        assert!(fit.residual < 1e-15);
    }

    #[test]
    fn zero_predictor_is_pure_rescaling() {
        let (s, set) = zero_set(2, 3);
        for target in [0, 7, 39] {
            let fit = solve_step_weights(&set, &[40], target).unwrap();
            let want = (s.alpha_bar(target) / s.alpha_bar(40)).sqrt();
            assert!((fit.weights[0] - want).abs() <= 1e-12 * want);
            assert!(fit.residual <= 1e-10);
            let naive = naive_skip_estimate(&s, &set, &[40], target).unwrap();
            assert!(naive.residual <= 1e-10);
        }
    }

    #[test]
    fn ddim_coefficients_reproduce_a_ddim_run() {
        let (s, set) = gmm_set();
        let prefix = [100, 60, 25];
        let coeffs = ddim_coefficients(&s, &prefix, 0);
        // Composing DDIM hops on teacher outputs is linear in the basis.
        let traj = &set.trajectories[0];
        let mut x = traj.initial_state().to_vec();
        let hops = [100, 60, 25, 0];
        for pair in hops.windows(2) {
            x = crate::schedulers::ddim_step(&s, &x, traj.output(pair[0]), pair[0], pair[1]);
        }
        for r in 0..set.dim() {
            let mut v = coeffs[0] * traj.initial_state()[r];
            for (j, &t) in prefix.iter().enumerate() {
                v += coeffs[j + 1] * traj.output(t)[r];
            }
            assert!((v - x[r]).abs() < 1e-10);
        }
    }

    #[test]
    fn end_to_end_dominates_ddim_and_naive() {
        let (s, set) = gmm_set();
        for (prefix, target) in [(vec![100], 60), (vec![100, 70], 20), (vec![100, 70, 20], 0)] {
            let fit = solve_step_weights(&set, &prefix, target).unwrap();
            let ddim = coefficient_residual(&set, &prefix, target, &ddim_coefficients(&s, &prefix, target)).unwrap();
            let naive = naive_skip_estimate(&s, &set, &prefix, target).unwrap();
            assert!(fit.residual <= ddim + 1e-12, "{prefix:?}: {} vs {ddim}", fit.residual);
            assert!(fit.residual <= naive.residual + 1e-12);
        }
    }

    #[test]
    fn naive_single_hop_uses_true_output() {
        let (s, set) = gmm_set();
        let naive = naive_skip_estimate(&s, &set, &[100], 99).unwrap();
        for (est, traj) in naive.estimates.iter().zip(&set.trajectories) {
            for (a, b) in est.iter().zip(traj.state(99)) {
                assert!((a - b).abs() <= 1e-10);
            }
        }
    }

    #[test]
    fn stochastic_sets_are_rejected() {
        let s = make_linear_schedule(20, 1e-3, 0.05).unwrap().with_eta(0.5).unwrap();
        let set = record_trajectory_set(&s, &ZeroPredictor::new(4), 2, 0).unwrap();
        assert!(matches!(
            solve_step_weights(&set, &[20], 10),
            Err(Error::StochasticTrajectories)
        ));
    }
}
