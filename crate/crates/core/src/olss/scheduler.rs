use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::value::RawValue;
use serde_json::{Map, Value};

use super::residual::TrajectoryResidual;
use super::search::{optimize_path, path_residuals, Tolerance};
use crate::diffusion::{NoisePredictor, PredictorDescriptor, ScheduleDescriptor, TrajectorySet};
use crate::error::{Error, Result};
use crate::schedulers::{uniform_path, Sampler, SamplerRun, StepPath};

const FORMAT_VERSION: u64 = 1;

/// Row `i` (1-based) holds `w_{i,0}, …, w_{i,i}`: the coefficient on `x_T` followed by
/// one per model output seen so far.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightMatrix {
    rows: Vec<Vec<f64>>,
}

impl WeightMatrix {
    pub fn new(rows: Vec<Vec<f64>>) -> Result<Self> {
        if rows.is_empty() {
            return Err(Error::InvalidParameter("weight matrix has no rows".into()));
        }
        for (i, row) in rows.iter().enumerate() {
            if row.len() != i + 2 {
                return Err(Error::InvalidParameter(format!(
                    "weight row {} has {} entries, expected {}",
                    i + 1,
                    row.len(),
                    i + 2
                )));
            }
            if row.iter().any(|w| !w.is_finite()) {
                return Err(Error::NonFinite(format!("weight row {}", i + 1)));
            }
        }
        Ok(Self { rows })
    }

    pub fn rows(&self) -> &[Vec<f64>] {
        &self.rows
    }

    /// Row `i`, 1-based.
    pub fn row(&self, i: usize) -> &[f64] {
        &self.rows[i - 1]
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    /// `n(n+3)/2`.
    pub fn coefficient_count(&self) -> usize {
        self.rows.iter().map(Vec::len).sum()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TrainMode {
    /// Equally spaced steps (OLSS-P).
    Uniform,
    /// Steps chosen by the bound search (OLSS).
    #[default]
    Optimized,
}

impl TrainMode {
    pub fn label(self) -> &'static str {
        match self {
            TrainMode::Uniform => "OLSS-P",
            TrainMode::Optimized => "OLSS",
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            TrainMode::Uniform => "uniform",
            TrainMode::Optimized => "optimized",
        }
    }
}

impl std::str::FromStr for TrainMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "uniform" => Ok(TrainMode::Uniform),
            "optimized" => Ok(TrainMode::Optimized),
            other => Err(Error::InvalidParameter(format!(
                "mode must be `uniform` or `optimized`, got `{other}`"
            ))),
        }
    }
}

/// A trained few-step sampler: path, weights and what it was trained on.
#[derive(Debug, Clone, PartialEq)]
pub struct OlssScheduler {
    pub path: StepPath,
    pub weights: WeightMatrix,
    pub mode: TrainMode,
    /// Certified bound for optimized paths.
    pub d_star: Option<f64>,
    /// Training residual of each row.
    pub residuals: Vec<f64>,
    pub dim: usize,
    pub trajectories: usize,
    pub schedule: ScheduleDescriptor,
    pub predictor: PredictorDescriptor,
}

/// Training outcome plus search statistics.
#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub scheduler: OlssScheduler,
    /// Worst residual of the uniform path with the same `n`.
    pub uniform_max_residual: f64,
    pub residual_evaluations: usize,
}

pub fn train(set: &TrajectorySet, n: usize, mode: TrainMode, tolerance: Tolerance) -> Result<OlssScheduler> {
    Ok(train_detailed(set, n, mode, tolerance)?.scheduler)
}

pub fn train_detailed(set: &TrajectorySet, n: usize, mode: TrainMode, tolerance: Tolerance) -> Result<TrainOutcome> {
    let rfn = TrajectoryResidual::new(set)?;
    let (path, d_star, uniform_max_residual) = match mode {
        TrainMode::Uniform => {
            let path = uniform_path(set.total_steps(), n)?;
            let worst = path_residuals(&rfn, &path)?.into_iter().fold(0.0, f64::max);
            (path, None, worst)
        }
        TrainMode::Optimized => {
            let out = optimize_path(&rfn, n, tolerance)?;
            (out.path, Some(out.d_star), out.d_hi)
        }
    };
    let steps = path.steps();
    let mut rows = Vec::with_capacity(n);
    let mut residuals = Vec::with_capacity(n);
    for i in 1..=n {
        let fit = rfn.fit(&steps[..i], path.next_after(i))?;
        rows.push(fit.weights);
        residuals.push(fit.residual);
    }
    Ok(TrainOutcome {
        scheduler: OlssScheduler {
            weights: WeightMatrix::new(rows)?,
            mode,
            d_star,
            residuals,
            dim: set.dim(),
            trajectories: set.len(),
            schedule: set.schedule.clone(),
            predictor: set.predictor.clone(),
            path,
        },
        uniform_max_residual,
        residual_evaluations: rfn.evaluations(),
    })
}

impl OlssScheduler {
    pub fn n(&self) -> usize {
        self.path.len()
    }

    pub fn total_steps(&self) -> usize {
        self.path.total_steps()
    }

    pub fn max_residual(&self) -> f64 {
        self.residuals.iter().copied().fold(0.0, f64::max)
    }

    /// Runs the learned linear combinations, one predictor call per step.
    pub fn sample(&self, predictor: &dyn NoisePredictor, x_start: &[f64]) -> Result<SamplerRun> {
        if predictor.dim() != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                actual: predictor.dim(),
            });
        }
        if x_start.len() != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                actual: x_start.len(),
            });
        }
        let steps = self.path.steps();
        let mut states = vec![x_start.to_vec()];
        let mut outputs: Vec<Vec<f64>> = Vec::with_capacity(steps.len());
        for (i, &t) in steps.iter().enumerate() {
            let e = predictor.predict(&states[i], t);
            if e.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFiniteStep { step: t });
            }
            outputs.push(e);
            let w = self.weights.row(i + 1);
            let mut next: Vec<f64> = x_start.iter().map(|x| w[0] * x).collect();
            for (wj, e) in w[1..].iter().zip(&outputs) {
                for (n, v) in next.iter_mut().zip(e) {
                    *n += wj * v;
                }
            }
            if next.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFiniteStep {
                    step: self.path.next_after(i + 1),
                });
            }
            states.push(next);
        }
        Ok(SamplerRun {
            path: self.path.clone(),
            states,
            model_calls: outputs.len(),
            outputs,
        })
    }

    pub fn to_json(&self) -> Result<String> {
        #[derive(Serialize)]
        struct Doc<'a> {
            format_version: u64,
            #[serde(rename = "T")]
            total_steps: usize,
            d: usize,
            #[serde(rename = "K")]
            trajectories: usize,
            n: usize,
            mode: TrainMode,
            path: &'a [usize],
            #[serde(rename = "D_star")]
            d_star: Option<Box<RawValue>>,
            residuals: Box<RawValue>,
            weights: Box<RawValue>,
            schedule: &'a ScheduleDescriptor,
            predictor: &'a PredictorDescriptor,
        }
        let rows: Vec<String> = self.weights.rows().iter().map(|r| float_list(r)).collect();
        let doc = Doc {
            format_version: FORMAT_VERSION,
            total_steps: self.total_steps(),
            d: self.dim,
            trajectories: self.trajectories,
            n: self.n(),
            mode: self.mode,
            path: self.path.steps(),
            d_star: self.d_star.map(|v| raw(exact(v))).transpose()?,
            residuals: raw(float_list(&self.residuals))?,
            weights: raw(format!("[{}]", rows.join(", ")))?,
            schedule: &self.schedule,
            predictor: &self.predictor,
        };
        let mut out = serde_json::to_string_pretty(&doc)?;
        out.push('\n');
        Ok(out)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let value: Value = serde_json::from_str(text).map_err(|e| malformed("<document>", e))?;
        let Value::Object(mut doc) = value else {
            return Err(malformed("<document>", "expected a JSON object"));
        };
        let version = take_u64(&mut doc, "format_version")?;
        if version != FORMAT_VERSION {
            return Err(malformed("format_version", format!("unsupported version {version}")));
        }
        let total = take_usize(&mut doc, "T")?;
        let dim = take_usize(&mut doc, "d")?;
        let trajectories = take_usize(&mut doc, "K")?;
        let n = take_usize(&mut doc, "n")?;
        let mode: TrainMode = take_as(&mut doc, "mode")?;
        let steps: Vec<usize> = take_as(&mut doc, "path")?;
        let d_star: Option<f64> = take_as(&mut doc, "D_star")?;
        let residuals: Vec<f64> = take_as(&mut doc, "residuals")?;
        let rows: Vec<Vec<f64>> = take_as(&mut doc, "weights")?;
        let schedule: ScheduleDescriptor = take_as(&mut doc, "schedule")?;
        let predictor: PredictorDescriptor = take_as(&mut doc, "predictor")?;
        if let Some(extra) = doc.keys().next() {
            return Err(malformed(extra, "unknown field"));
        }

        if dim == 0 || trajectories == 0 {
            return Err(malformed("d", "d and K must be positive"));
        }
        let path = StepPath::new(total, steps).map_err(|e| malformed("path", e))?;
        if path.len() != n {
            return Err(malformed("path", format!("has {} steps, n = {n}", path.len())));
        }
        if schedule.total_steps != total {
            return Err(malformed("schedule", format!("T = {} disagrees with T = {total}", schedule.total_steps)));
        }
        if predictor.dim() != dim {
            return Err(malformed("predictor", format!("dimension {} disagrees with d = {dim}", predictor.dim())));
        }
        if rows.len() != n {
            return Err(malformed("weights", format!("has {} rows, n = {n}", rows.len())));
        }
        let weights = WeightMatrix::new(rows).map_err(|e| malformed("weights", e))?;
        if residuals.len() != n || residuals.iter().any(|r| !(r.is_finite() && *r >= 0.0)) {
            return Err(malformed("residuals", format!("need {n} nonnegative finite values")));
        }
        match (mode, d_star) {
            (TrainMode::Optimized, None) => return Err(malformed("D_star", "required for optimized mode")),
            (_, Some(d)) if !(d.is_finite() && d >= 0.0) => return Err(malformed("D_star", "must be nonnegative")),
            (_, Some(d)) if residuals.iter().any(|&r| r > d) => {
                return Err(malformed("residuals", "a step residual exceeds D_star"))
            }
            _ => {}
        }
        Ok(Self {
            path,
            weights,
            mode,
            d_star,
            residuals,
            dim,
            trajectories,
            schedule,
            predictor,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_json()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }
}

impl Sampler for OlssScheduler {
    fn name(&self) -> String {
        self.mode.label().to_string()
    }

    fn path(&self) -> &StepPath {
        &self.path
    }

    fn run(&self, predictor: &dyn NoisePredictor, x_start: &[f64]) -> Result<SamplerRun> {
        self.sample(predictor, x_start)
    }
}

/// Seventeen significant digits, enough to recover every `f64` exactly.
fn exact(v: f64) -> String {
    format!("{v:.16e}")
}

fn float_list(values: &[f64]) -> String {
    let items: Vec<String> = values.iter().map(|&v| exact(v)).collect();
    format!("[{}]", items.join(", "))
}

fn raw(text: String) -> Result<Box<RawValue>> {
    Ok(RawValue::from_string(text)?)
}

fn malformed(field: &str, reason: impl ToString) -> Error {
    Error::MalformedScheduler {
        field: field.to_string(),
        reason: reason.to_string(),
    }
}

fn take(doc: &mut Map<String, Value>, field: &str) -> Result<Value> {
    doc.remove(field).ok_or_else(|| malformed(field, "missing"))
}

fn take_as<T: serde::de::DeserializeOwned>(doc: &mut Map<String, Value>, field: &str) -> Result<T> {
    serde_json::from_value(take(doc, field)?).map_err(|e| malformed(field, e))
}

fn take_u64(doc: &mut Map<String, Value>, field: &str) -> Result<u64> {
    take(doc, field)?
        .as_u64()
        .ok_or_else(|| malformed(field, "expected a nonnegative integer"))
}

fn take_usize(doc: &mut Map<String, Value>, field: &str) -> Result<usize> {
    take_u64(doc, field).map(|v| v as usize)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffusion::{make_linear_schedule, record_trajectory_set, NoiseSchedule, ZeroPredictor};
    use crate::olss::{coefficient_residual, ddim_coefficients};

    fn gmm(total: usize, k: usize) -> (NoiseSchedule, Box<dyn NoisePredictor>, TrajectorySet) {
        let s = make_linear_schedule(total, 1e-4, (20.0 / total as f64).min(0.5)).unwrap();
        let p = PredictorDescriptor::default_gmm(8, 5).build(&s).unwrap();
        let set = record_trajectory_set(&s, p.as_ref(), k, 0).unwrap();
        (s, p, set)
    }

    #[test]
    fn weight_matrix_shape() {
        assert!(WeightMatrix::new(vec![vec![1.0, 2.0], vec![1.0, 2.0, 3.0]]).is_ok());
        assert!(WeightMatrix::new(vec![vec![1.0]]).is_err());
        assert!(WeightMatrix::new(vec![]).is_err());
        assert!(WeightMatrix::new(vec![vec![1.0, f64::NAN]]).is_err());
        let w = WeightMatrix::new(vec![vec![0.0; 2], vec![0.0; 3], vec![0.0; 4]]).unwrap();
        assert_eq!(w.coefficient_count(), 3 * 6 / 2);
    }

    #[test]
    fn full_uniform_path_replays_the_teacher() {
        let (_, p, set) = gmm(10, 6);
        let sched = train(&set, 10, TrainMode::Uniform, Tolerance::default()).unwrap();
        assert!(sched.max_residual() <= 1e-10, "{}", sched.max_residual());
        let run = sched.sample(p.as_ref(), set.trajectories[0].initial_state()).unwrap();
        for (a, b) in run.final_state().iter().zip(set.trajectories[0].final_state()) {
            assert!((a - b).abs() <= 1e-8);
        }
    }

    #[test]
    fn optimized_training_is_self_consistent() {
        let (s, _, set) = gmm(200, 8);
        let out = train_detailed(&set, 5, TrainMode::Optimized, Tolerance::default()).unwrap();
        let sched = &out.scheduler;
        let d_star = sched.d_star.unwrap();
        assert_eq!(sched.max_residual(), d_star);
        assert!(d_star <= out.uniform_max_residual);
        let lens: Vec<usize> = sched.weights.rows().iter().map(Vec::len).collect();
        assert_eq!(lens, vec![2, 3, 4, 5, 6]);
        let steps = sched.path.steps();
        for i in 1..=5 {
            let target = sched.path.next_after(i);
            let ddim = coefficient_residual(&set, &steps[..i], target, &ddim_coefficients(&s, &steps[..i], target)).unwrap();
            assert!(sched.residuals[i - 1] <= ddim + 1e-12);
        }
    }

    #[test]
    fn zero_predictor_sampling_is_exact() {
        let s = make_linear_schedule(50, 1e-3, 0.05).unwrap();
        let p = ZeroPredictor::new(3);
        let set = record_trajectory_set(&s, &p, 2, 4).unwrap();
        let sched = train(&set, 4, TrainMode::Optimized, Tolerance::default()).unwrap();
        assert!(sched.d_star.unwrap() <= 1e-12);
        let traj = &set.trajectories[1];
        let run = sched.sample(&p, traj.initial_state()).unwrap();
        assert_eq!(run.model_calls, 4);
        assert_eq!(run.states.len(), 5);
        for (a, b) in run.final_state().iter().zip(traj.final_state()) {
            assert!((a - b).abs() <= 1e-10);
        }
    }

    #[test]
    fn json_round_trip_is_exact() {
        let (_, _, set) = gmm(100, 4);
        let sched = train(&set, 4, TrainMode::Optimized, Tolerance::default()).unwrap();
        let text = sched.to_json().unwrap();
        let back = OlssScheduler::from_json(&text).unwrap();
        assert_eq!(back, sched);
        assert_eq!(back.to_json().unwrap(), text);
        let v: Value = serde_json::from_str(&text).unwrap();
        assert_eq!(v["mode"], "optimized");
        assert_eq!(v["n"], 4);
        assert_eq!(v["weights"][3].as_array().unwrap().len(), 5);

        let uniform = train(&set, 3, TrainMode::Uniform, Tolerance::default()).unwrap();
        let text = uniform.to_json().unwrap();
        assert!(text.contains("\"D_star\": null"));
        assert_eq!(OlssScheduler::from_json(&text).unwrap(), uniform);
    }

    #[test]
    fn malformed_files_name_the_field() {
        let (_, _, set) = gmm(40, 2);
        let sched = train(&set, 3, TrainMode::Uniform, Tolerance::default()).unwrap();
        let good: Value = serde_json::from_str(&sched.to_json().unwrap()).unwrap();
        let field_of = |v: &Value| match OlssScheduler::from_json(&v.to_string()) {
            Err(Error::MalformedScheduler { field, .. }) => field,
            other => panic!("expected a malformed-scheduler error, got {other:?}"),
        };
        let mut v = good.clone();
        v["weights"][1] = serde_json::json!([1.0, 2.0]);
        assert_eq!(field_of(&v), "weights");
        let mut v = good.clone();
        v.as_object_mut().unwrap().remove("path");
        assert_eq!(field_of(&v), "path");
        let mut v = good.clone();
        v["extra"] = Value::Bool(true);
        assert_eq!(field_of(&v), "extra");
        let mut v = good.clone();
        v["path"] = serde_json::json!([40, 50, 1]);
        assert_eq!(field_of(&v), "path");
        let mut v = good;
        v["mode"] = Value::String("fast".into());
        assert_eq!(field_of(&v), "mode");
    }
}
