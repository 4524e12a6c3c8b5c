use std::path::Path;

use olss::diffusion::{
    initial_noise, load_trajectory_set, read_manifest, record_trajectory_set, save_trajectory_set, NoisePredictor,
    NoiseSchedule, TrajectorySet,
};
use olss::eval::{
    compare_schedulers, correlation_heatmap_csv, correlation_redundancy, efficiency_sweep, efficiency_sweep_csv,
    pca_paths_csv,
};
use olss::olss::{train_detailed, OlssScheduler, Tolerance};
use olss::schedulers::{run_sampler, uniform_path, Sampler, SamplerKind};

use crate::config::RunConfig;
use crate::{CliError, Command, Common};

pub fn run(command: Command) -> Result<(), CliError> {
    match command {
        Command::Record { common, seed, count } => {
            let mut cfg = setup(&common)?;
            cfg.base_seed = seed.unwrap_or(cfg.base_seed);
            cfg.trajectories = count.unwrap_or(cfg.trajectories);
            record(&cfg, &common.out)
        }
        Command::Train {
            common,
            data,
            steps,
            mode,
            epsilon,
            absolute,
        } => {
            let mut cfg = setup(&common)?;
            cfg.steps = steps.unwrap_or(cfg.steps);
            cfg.mode = mode.unwrap_or(cfg.mode);
            if let Some(v) = epsilon {
                cfg.epsilon = if absolute { Tolerance::Absolute(v) } else { Tolerance::Relative(v) };
            }
            train(&cfg, &data, &common.out)
        }
        Command::Sample {
            common,
            scheduler,
            seed,
            count,
        } => {
            let mut cfg = setup(&common)?;
            cfg.eval_base_seed = seed.unwrap_or(cfg.eval_base_seed);
            cfg.eval_count = count;
            sample(&cfg, &scheduler, &common.out)
        }
        Command::Compare {
            common,
            data,
            seed,
            steps,
            sweep,
        } => {
            let mut cfg = setup(&common)?;
            cfg.eval_base_seed = seed.unwrap_or(cfg.eval_base_seed);
            if let Some(steps) = steps {
                cfg.compare_steps = steps;
            }
            compare(&cfg, &data, &common.out, sweep)
        }
        Command::Viz {
            common,
            data,
            trajectory,
        } => {
            let cfg = setup(&common)?;
            viz(&cfg, &data, &common.out, trajectory)
        }
    }
}

/// Loads the config, applies shared flags, prepares the output directory and echoes
/// the effective config into it.
fn setup(common: &Common) -> Result<RunConfig, CliError> {
    let mut cfg = RunConfig::load(common.config.as_deref())?;
    if common.threads.is_some() {
        cfg.threads = common.threads;
    }
    if let Some(n) = cfg.threads {
        if n == 0 {
            return Err(CliError::Usage("--threads must be at least 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::Usage(format!("thread pool: {e}")))?;
    }
    let out = &common.out;
    if out.is_file() {
        return Err(CliError::Usage(format!("{} is a file", out.display())));
    }
    if out.is_dir() && !common.force && std::fs::read_dir(out).map(|mut d| d.next().is_some()).unwrap_or(false) {
        return Err(CliError::Usage(format!(
            "{} is not empty; pass --force to write into it",
            out.display()
        )));
    }
    std::fs::create_dir_all(out).map_err(|e| olss::Error::Io {
        path: out.clone(),
        source: e,
    })?;
    Ok(cfg)
}

fn record(cfg: &RunConfig, out: &Path) -> Result<(), CliError> {
    let schedule = cfg.schedule().build()?;
    let predictor = cfg.teacher().build(&schedule)?;
    let set = record_trajectory_set(&schedule, predictor.as_ref(), cfg.trajectories, cfg.base_seed)?;
    save_trajectory_set(&set, out)?;
    cfg.write(out)?;
    println!(
        "recorded {} trajectories (T = {}, d = {}) to {}",
        set.len(),
        set.total_steps(),
        set.dim(),
        out.display()
    );
    Ok(())
}

/// Loads trajectories and rebuilds the teacher they were recorded with.
fn load_teacher(data: &Path) -> Result<(TrajectorySet, NoiseSchedule, Box<dyn NoisePredictor>), CliError> {
    read_manifest(data)?;
    let set = load_trajectory_set(data)?;
    let schedule = set.schedule.build()?;
    let predictor = set.predictor.build(&schedule)?;
    Ok((set, schedule, predictor))
}

fn train(cfg: &RunConfig, data: &Path, out: &Path) -> Result<(), CliError> {
    let (set, _, _) = load_teacher(data)?;
    let outcome = train_detailed(&set, cfg.steps, cfg.mode, cfg.epsilon)?;
    let sched = &outcome.scheduler;
    sched.save(&out.join("scheduler.json"))?;
    cfg.write(out)?;
    println!("{} with n = {}: path {:?}", cfg.mode.label(), sched.n(), sched.path.steps());
    println!(
        "max residual {:.6e} (uniform path {:.6e}), {} residual evaluations",
        sched.max_residual(),
        outcome.uniform_max_residual,
        outcome.residual_evaluations
    );
    Ok(())
}

fn sample(cfg: &RunConfig, scheduler: &Path, out: &Path) -> Result<(), CliError> {
    let sched = OlssScheduler::load(scheduler)?;
    let schedule = sched.schedule.build()?;
    let predictor = sched.predictor.build(&schedule)?;
    let mut rows = Vec::with_capacity(cfg.eval_count);
    for seed in cfg.eval_seeds() {
        let run = sched.sample(predictor.as_ref(), &initial_noise(sched.dim, seed))?;
        let mut row = vec![seed.to_string()];
        row.extend(run.final_state().iter().map(f64::to_string));
        rows.push(row.join(","));
    }
    let mut text = String::from("seed");
    for k in 0..sched.dim {
        text.push_str(&format!(",x{k}"));
    }
    text.push('\n');
    for row in rows {
        text.push_str(&row);
        text.push('\n');
    }
    let path = out.join("samples.csv");
    std::fs::write(&path, text).map_err(|e| olss::Error::Io { path, source: e })?;
    cfg.write(out)?;
    println!("wrote {} samples from {}", cfg.eval_count, scheduler.display());
    Ok(())
}

fn compare(cfg: &RunConfig, data: &Path, out: &Path, sweep: bool) -> Result<(), CliError> {
    let (set, schedule, predictor) = load_teacher(data)?;
    let seeds = cfg.eval_seeds();
    let report = compare_schedulers(&schedule, predictor.as_ref(), &set, &seeds, &cfg.compare_steps, cfg.epsilon)?;
    report.write_csv(&out.join("compare.csv"))?;
    for sched in &report.trained {
        sched.save(&out.join(format!("{}_n{}.json", sched.mode.as_str(), sched.n())))?;
    }
    println!("{:<8} {:>4} {:>14} {:>14}", "sampler", "n", "rmse_heldout", "rmse_train");
    for row in &report.rows {
        println!(
            "{:<8} {:>4} {:>14.6} {:>14.6}",
            row.kind.label(),
            row.n,
            row.rmse_heldout,
            row.rmse_train
        );
    }
    if sweep {
        let held = seeds
            .iter()
            .map(|&s| olss::diffusion::teacher_trajectory(&schedule, predictor.as_ref(), s))
            .collect::<olss::Result<Vec<_>>>()?;
        let factory = |n: usize| -> olss::Result<Box<dyn Sampler>> {
            Ok(Box::new(olss::olss::train(&set, n, cfg.mode, cfg.epsilon)?))
        };
        let rows = efficiency_sweep(predictor.as_ref(), &factory, &held, &cfg.sweep_steps, cfg.sweep_repeats)?;
        efficiency_sweep_csv(&rows, &out.join("sweep.csv"))?;
        for r in &rows {
            println!("sweep n = {:>3}: {:.3e} s/sample, rmse {:.6}", r.n, r.seconds, r.rmse);
        }
    }
    cfg.write(out)?;
    Ok(())
}

fn viz(cfg: &RunConfig, data: &Path, out: &Path, index: usize) -> Result<(), CliError> {
    let (set, schedule, predictor) = load_teacher(data)?;
    let traj = set
        .trajectories
        .get(index)
        .ok_or_else(|| CliError::Usage(format!("trajectory {index} out of range (K = {})", set.len())))?;
    correlation_heatmap_csv(traj, cfg.heatmap_stride, &out.join("heatmap.csv"))?;

    let path = uniform_path(schedule.total_steps(), cfg.steps)?;
    let ddim = run_sampler(SamplerKind::Ddim, &schedule, predictor.as_ref(), &path, traj.initial_state())?;
    let sched = olss::olss::train(&set, cfg.steps, cfg.mode, cfg.epsilon)?;
    let olss_run = sched.sample(predictor.as_ref(), traj.initial_state())?;
    pca_paths_csv(traj, &[("DDIM", &ddim), (cfg.mode.label(), &olss_run)], &out.join("pca.csv"))?;

    let red = correlation_redundancy(&set.trajectories, 100)?;
    let summary = serde_json::json!({
        "output_output": red.output_output,
        "state_output": red.state_output,
        "window": 100,
    });
    let path = out.join("redundancy.json");
    std::fs::write(&path, serde_json::to_string_pretty(&summary).expect("json") + "\n")
        .map_err(|e| olss::Error::Io { path, source: e })?;
    cfg.write(out)?;
    println!(
        "mean |corr(e_i, e_j)| {:.4}, |corr(x_1, e_1)| {:.4}",
        red.output_output, red.state_output
    );
    Ok(())
}
