use olss::diffusion::{make_linear_schedule, record_trajectory_set, PredictorDescriptor, TrajectorySet};
use olss::linalg::norm;
use olss::olss::{
    coefficient_residual, ddim_coefficients, find_next_step, find_next_step_exhaustive, find_path,
    monotonicity_violations, naive_skip_estimate, optimize_path, path_residuals, solve_step_weights, stack_design,
    train, OlssScheduler, ResidualFn, Tolerance, TrainMode, TrajectoryResidual,
};
use olss::schedulers::uniform_path;
use proptest::prelude::*;

fn small_set(seed: u64) -> TrajectorySet {
    let s = make_linear_schedule(100, 1e-4, 0.2).unwrap();
    let p = PredictorDescriptor::default_gmm(8, seed).build(&s).unwrap();
    record_trajectory_set(&s, p.as_ref(), 8, 0).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn samples_stay_in_the_span_of_start_and_outputs(seed in 0u64..50, n in 1usize..6, start in 100u64..200) {
        let set = small_set(seed);
        let sched = train(&set, n, TrainMode::Optimized, Tolerance::default()).unwrap();
        prop_assert_eq!(sched.weights.coefficient_count(), n * (n + 3) / 2);
        let s = set.schedule.build().unwrap();
        let p = set.predictor.build(&s).unwrap();
        let x = olss::diffusion::initial_noise(8, start);
        let run = sched.sample(p.as_ref(), &x).unwrap();
        prop_assert_eq!(run.model_calls, n);
        for i in 1..=n {
            let w = sched.weights.row(i);
            let mut cols: Vec<&[f64]> = vec![&x];
            cols.extend(run.outputs[..i].iter().map(Vec::as_slice));
            prop_assert_eq!(cols.len(), w.len());
            for (k, got) in run.states[i].iter().enumerate() {
                let terms: Vec<f64> = w.iter().zip(&cols).map(|(wj, c)| wj * c[k]).collect();
                let want: f64 = terms.iter().sum();
                let scale: f64 = terms.iter().map(|v| v.abs()).sum::<f64>().max(1.0);
                prop_assert!((got - want).abs() <= 1e-8 * scale);
            }
        }
    }

    #[test]
    fn step_weights_are_least_squares_optimal(seed in 0u64..50, cut in 1usize..99, width in 1usize..40) {
        let set = small_set(seed);
        let prefix = if cut == 100 { vec![100] } else { vec![100, 100 - cut] };
        let last = *prefix.last().unwrap();
        let target = last.saturating_sub(width);
        let fit = solve_step_weights(&set, &prefix, target).unwrap();
        let (a, b) = stack_design(&set, &prefix, target).unwrap();
        let r: Vec<f64> = a.matvec(&fit.weights).unwrap().iter().zip(&b).map(|(f, y)| f - y).collect();
        let grad = a.tr_matvec(&r).unwrap();
        let scale = a.frobenius_norm() * norm(&b).max(1.0);
        prop_assert!(grad.iter().all(|g| g.abs() <= 1e-9 * scale));

        let s = set.schedule.build().unwrap();
        let ddim = coefficient_residual(&set, &prefix, target, &ddim_coefficients(&s, &prefix, target)).unwrap();
        let naive = naive_skip_estimate(&s, &set, &prefix, target).unwrap().residual;
        prop_assert!(fit.residual <= ddim + 1e-12);
        prop_assert!(fit.residual <= naive + 1e-12);
    }

    #[test]
    fn binary_search_matches_scan_where_residuals_are_monotone(seed in 0u64..50, cut in 0usize..60, frac in 0.0f64..1.0) {
        let set = small_set(seed);
        let rfn = TrajectoryResidual::new(&set).unwrap();
        let prefix = if cut == 0 { vec![100] } else { vec![100, 100 - cut] };
        prop_assume!(monotonicity_violations(&rfn, &prefix).unwrap().is_empty());
        let last = *prefix.last().unwrap();
        let bound = frac * rfn.residual(&prefix, 0).unwrap();
        let fast = find_next_step(&rfn, &prefix, bound).unwrap();
        let slow = find_next_step_exhaustive(&rfn, &prefix, bound, 0).unwrap();
        prop_assert_eq!(fast, slow);
        if let Some(u) = fast {
            prop_assert!(u < last);
            prop_assert!(rfn.residual(&prefix, u).unwrap() <= bound);
        }
    }

    #[test]
    fn optimized_path_never_loses_to_uniform(seed in 0u64..50, n in 1usize..8) {
        let set = small_set(seed);
        let rfn = TrajectoryResidual::new(&set).unwrap();
        let opt = optimize_path(&rfn, n, Tolerance::default()).unwrap();
        let uniform = path_residuals(&rfn, &uniform_path(100, n).unwrap()).unwrap();
        prop_assert!(opt.d_star <= uniform.iter().copied().fold(0.0, f64::max));
        prop_assert_eq!(opt.path.len(), n);
        prop_assert_eq!(path_residuals(&rfn, &opt.path).unwrap(), opt.residuals.clone());
        prop_assert!(find_path(&rfn, n, opt.d_star).unwrap().is_some());
    }
}

#[test]
fn scheduler_file_round_trips_exactly() {
    let set = small_set(3);
    let dir = tempfile::tempdir().unwrap();
    for mode in [TrainMode::Uniform, TrainMode::Optimized] {
        let sched = train(&set, 4, mode, Tolerance::Absolute(1e-6)).unwrap();
        let path = dir.path().join(format!("{}.json", mode.as_str()));
        sched.save(&path).unwrap();
        let back = OlssScheduler::load(&path).unwrap();
        assert_eq!(back, sched);
        assert_eq!(back.to_json().unwrap(), sched.to_json().unwrap());
        assert_eq!(back.mode, mode);
    }
}

#[test]
fn stochastic_sets_are_refused() {
    let s = make_linear_schedule(50, 1e-4, 0.3).unwrap().with_eta(0.5).unwrap();
    let p = PredictorDescriptor::default_gmm(4, 0).build(&s).unwrap();
    let set = record_trajectory_set(&s, p.as_ref(), 4, 0).unwrap();
    assert!(train(&set, 3, TrainMode::Optimized, Tolerance::default()).is_err());
}
