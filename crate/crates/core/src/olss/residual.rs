use std::collections::HashMap;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};

use super::design::{fit_with, stack_basis, stack_states, validate_prefix, StepFit};
use crate::diffusion::TrajectorySet;
use crate::error::Result;
use crate::linalg::LeastSquaresFactor;

/// Skip-estimation error `d(t(1), …, t(i), target)` as seen by the path search.
pub trait ResidualFn: Sync {
    fn total_steps(&self) -> usize;

    /// Nonnegative, finite error of predicting `x_target` from the prefix basis.
    fn residual(&self, prefix: &[usize], target: usize) -> Result<f64>;
}

/// Memoized residuals over a recorded trajectory set.
///
/// The QR factor of each prefix basis is computed once and shared by every target;
/// residuals are cached per `(prefix, target)`. Both caches sit behind mutexes, so a
/// single instance can serve concurrent queries.
pub struct TrajectoryResidual<'a> {
    set: &'a TrajectorySet,
    factors: Mutex<HashMap<Vec<usize>, Arc<LeastSquaresFactor>>>,
    residuals: Mutex<HashMap<(Vec<usize>, usize), f64>>,
    evaluations: AtomicUsize,
}

impl<'a> TrajectoryResidual<'a> {
    pub fn new(set: &'a TrajectorySet) -> Result<Self> {
        let total = set.total_steps();
        validate_prefix(set, &[total], total)?;
        Ok(Self {
            set,
            factors: Mutex::default(),
            residuals: Mutex::default(),
            evaluations: AtomicUsize::new(0),
        })
    }

    pub fn trajectories(&self) -> &TrajectorySet {
        self.set
    }

    /// Number of residuals actually computed, i.e. cache misses.
    pub fn evaluations(&self) -> usize {
        self.evaluations.load(Ordering::Relaxed)
    }

    fn factor(&self, prefix: &[usize]) -> Result<Arc<LeastSquaresFactor>> {
        if let Some(f) = self.factors.lock().expect("factor cache poisoned").get(prefix) {
            return Ok(Arc::clone(f));
        }
        let factor = Arc::new(LeastSquaresFactor::new(stack_basis(self.set, prefix)?)?);
        Ok(Arc::clone(
            self.factors
                .lock()
                .expect("factor cache poisoned")
                .entry(prefix.to_vec())
                .or_insert(factor),
        ))
    }

    /// Full weight fit for `(prefix, target)`, reusing the cached factor.
    pub fn fit(&self, prefix: &[usize], target: usize) -> Result<StepFit> {
        validate_prefix(self.set, prefix, target)?;
        fit_with(&*self.factor(prefix)?, &stack_states(self.set, target))
    }
}

impl ResidualFn for TrajectoryResidual<'_> {
    fn total_steps(&self) -> usize {
        self.set.total_steps()
    }

    fn residual(&self, prefix: &[usize], target: usize) -> Result<f64> {
        let key = (prefix.to_vec(), target);
        if let Some(&r) = self.residuals.lock().expect("residual cache poisoned").get(&key) {
            return Ok(r);
        }
        let r = self.fit(prefix, target)?.residual;
        let mut cache = self.residuals.lock().expect("residual cache poisoned");
        // a racing thread may have inserted the same value; count only the first
        if cache.insert(key, r).is_none() {
            self.evaluations.fetch_add(1, Ordering::Relaxed);
        }
        Ok(r)
    }
}
