//! Step-path search under an error bound, and the outer search for the smallest bound.

use serde::{Deserialize, Serialize};

use super::residual::ResidualFn;
use crate::error::{Error, Result};
use crate::schedulers::{uniform_path, StepPath};

/// Smallest `t ∈ [0, t(i) − 1]` with `d(prefix, t) ≤ bound`.
pub fn find_next_step(rfn: &dyn ResidualFn, prefix: &[usize], bound: f64) -> Result<Option<usize>> {
    find_next_step_above(rfn, prefix, bound, 0)
}

/// Binary search for the smallest `t ∈ [floor, t(i) − 1]` with `d(prefix, t) ≤ bound`,
/// assuming the residual grows with the skip length. The candidate is re-checked
/// before it is returned, so a monotonicity violation can only make the search miss
/// a smaller feasible step, never return an infeasible one.
pub fn find_next_step_above(
    rfn: &dyn ResidualFn,
    prefix: &[usize],
    bound: f64,
    floor: usize,
) -> Result<Option<usize>> {
    let last = last_step(prefix)?;
    if floor >= last {
        return Ok(None);
    }
    // `last` acts as an always-feasible sentinel; landing on it means nothing fits
    let (mut lo, mut hi) = (floor, last);
    while lo < hi {
        let mid = lo + (hi - lo) / 2;
        if rfn.residual(prefix, mid)? <= bound {
            hi = mid;
        } else {
            lo = mid + 1;
        }
    }
    if hi == last || rfn.residual(prefix, hi)? > bound {
        return Ok(None);
    }
    Ok(Some(hi))
}

/// Linear scan counterpart of [`find_next_step_above`], exact without any
/// monotonicity assumption.
pub fn find_next_step_exhaustive(
    rfn: &dyn ResidualFn,
    prefix: &[usize],
    bound: f64,
    floor: usize,
) -> Result<Option<usize>> {
    let last = last_step(prefix)?;
    for t in floor..last {
        if rfn.residual(prefix, t)? <= bound {
            return Ok(Some(t));
        }
    }
    Ok(None)
}

/// Candidates `t < t(i)` whose residual exceeds that of the longer skip `t − 1`,
/// i.e. the places where the binary search's assumption fails.
pub fn monotonicity_violations(rfn: &dyn ResidualFn, prefix: &[usize]) -> Result<Vec<usize>> {
    let last = last_step(prefix)?;
    let residuals: Vec<f64> = (0..last)
        .map(|t| rfn.residual(prefix, t))
        .collect::<Result<_>>()?;
    Ok((1..last)
        .filter(|&t| residuals[t] > residuals[t - 1])
        .collect())
}

fn last_step(prefix: &[usize]) -> Result<usize> {
    prefix
        .last()
        .copied()
        .ok_or_else(|| Error::InvalidPath("empty prefix".into()))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SearchStrategy {
    #[default]
    Binary,
    /// Linear scan; slow, but exact for non-monotone residuals.
    Exhaustive,
}

/// Greedy path of exactly `n` steps whose every hop, including the final one to 0,
/// has residual at most `bound`.
///
/// Step `i + 1` is searched above the floor `n − i`, the lowest value that still
/// leaves room for the remaining steps; the last step therefore targets 0.
pub fn find_path(rfn: &dyn ResidualFn, n: usize, bound: f64) -> Result<Option<StepPath>> {
    find_path_with(rfn, n, bound, SearchStrategy::Binary)
}

pub fn find_path_with(
    rfn: &dyn ResidualFn,
    n: usize,
    bound: f64,
    strategy: SearchStrategy,
) -> Result<Option<StepPath>> {
    let total = rfn.total_steps();
    if n == 0 || n > total {
        return Err(Error::InvalidParameter(format!(
            "need 1 <= n <= T, got n = {n}, T = {total}"
        )));
    }
    let mut steps = vec![total];
    for i in 1..=n {
        let floor = n - i;
        let next = match strategy {
            SearchStrategy::Binary => find_next_step_above(rfn, &steps, bound, floor)?,
            SearchStrategy::Exhaustive => find_next_step_exhaustive(rfn, &steps, bound, floor)?,
        };
        match next {
            Some(t) if i < n => steps.push(t),
            Some(0) => return Ok(Some(StepPath::new(total, steps)?)),
            _ => return Ok(None),
        }
    }
    unreachable!("the final step always returns")
}

/// Per-hop residuals along `path`, the last one targeting 0.
pub fn path_residuals(rfn: &dyn ResidualFn, path: &StepPath) -> Result<Vec<f64>> {
    let steps = path.steps();
    (1..=steps.len())
        .map(|i| rfn.residual(&steps[..i], path.next_after(i)))
        .collect()
}

/// Stopping width for the outer search.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", tag = "kind", content = "value")]
pub enum Tolerance {
    Absolute(f64),
    /// Fraction of the uniform path's worst residual.
    Relative(f64),
}

impl Default for Tolerance {
    fn default() -> Self {
        Tolerance::Relative(1e-4)
    }
}

impl Tolerance {
    pub fn resolve(self, d_hi: f64) -> Result<f64> {
        let (v, eps) = match self {
            Tolerance::Absolute(v) => (v, v),
            Tolerance::Relative(v) => (v, v * d_hi),
        };
        if !(v.is_finite() && v > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "epsilon must be positive and finite, got {v}"
            )));
        }
        Ok(eps)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OptimizedPath {
    pub path: StepPath,
    /// Largest per-hop residual of `path`.
    pub d_star: f64,
    pub residuals: Vec<f64>,
    /// Largest per-hop residual of the uniform path, the initial upper bracket.
    pub d_hi: f64,
    pub epsilon: f64,
    pub iterations: usize,
}

/// Bisects on the bound `D` over `[0, D_hi]` until the bracket is no wider than the
/// tolerance. The uniform path seeds the upper end, so the result never does worse
/// than it; every feasible probe pulls the upper end down to the residual actually
/// achieved.
pub fn optimize_path(rfn: &dyn ResidualFn, n: usize, tolerance: Tolerance) -> Result<OptimizedPath> {
    optimize_path_with(rfn, n, tolerance, SearchStrategy::Binary)
}

pub fn optimize_path_with(
    rfn: &dyn ResidualFn,
    n: usize,
    tolerance: Tolerance,
    strategy: SearchStrategy,
) -> Result<OptimizedPath> {
    let uniform = uniform_path(rfn.total_steps(), n)?;
    let uniform_residuals = path_residuals(rfn, &uniform)?;
    let d_hi = max_of(&uniform_residuals);
    let epsilon = tolerance.resolve(d_hi)?;

    let mut best = (uniform, uniform_residuals, d_hi);
    let (mut lo, mut hi) = (0.0_f64, d_hi);
    let mut iterations = 0;
    while hi - lo > epsilon {
        let mid = lo + (hi - lo) / 2.0;
        if mid <= lo || mid >= hi {
            break;
        }
        iterations += 1;
        match find_path_with(rfn, n, mid, strategy)? {
            Some(path) => {
                let residuals = path_residuals(rfn, &path)?;
                let achieved = max_of(&residuals);
                hi = achieved;
                best = (path, residuals, achieved);
            }
            None => lo = mid,
        }
    }
    let (path, residuals, d_star) = best;
    Ok(OptimizedPath {
        path,
        d_star,
        residuals,
        d_hi,
        epsilon,
        iterations,
    })
}

fn max_of(values: &[f64]) -> f64 {
    values.iter().copied().fold(0.0, f64::max)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::sync::atomic::{AtomicUsize, Ordering};

    /// `d(prefix, t) = g(t(i)) − g(t)` for an increasing `g`.
    struct Potential {
        g: Vec<f64>,
        calls: AtomicUsize,
    }

    impl Potential {
        fn linear(total: usize) -> Self {
            Self {
                g: (0..=total).map(|t| t as f64 / total as f64).collect(),
                calls: AtomicUsize::new(0),
            }
        }
    }

    impl ResidualFn for Potential {
        fn total_steps(&self) -> usize {
            self.g.len() - 1
        }

        fn residual(&self, prefix: &[usize], target: usize) -> Result<f64> {
            self.calls.fetch_add(1, Ordering::Relaxed);
            Ok(self.g[*prefix.last().unwrap()] - self.g[target])
        }
    }

    struct Zero(usize);

    impl ResidualFn for Zero {
        fn total_steps(&self) -> usize {
            self.0
        }

        fn residual(&self, _: &[usize], _: usize) -> Result<f64> {
            Ok(0.0)
        }
    }

    #[test]
    fn linear_residual_example() {
        let rfn = Potential::linear(1000);
        assert_eq!(find_next_step(&rfn, &[1000], 0.35).unwrap(), Some(650));
        assert_eq!(find_next_step_exhaustive(&rfn, &[1000], 0.35, 0).unwrap(), Some(650));
    }

    #[test]
    fn unbounded_and_zero_bounds() {
        let rfn = Potential::linear(50);
        assert_eq!(find_next_step(&rfn, &[50], f64::INFINITY).unwrap(), Some(0));
        assert_eq!(find_next_step(&rfn, &[50], 0.0).unwrap(), None);
        assert_eq!(find_next_step(&Zero(50), &[50, 20], 0.0).unwrap(), Some(0));
        assert_eq!(find_next_step(&rfn, &[50, 0], 1.0).unwrap(), None);
        assert!(find_next_step(&rfn, &[], 1.0).is_err());
    }

    #[test]
    fn paths_at_the_extremes() {
        let full = find_path(&Zero(12), 12, 0.0).unwrap().unwrap();
        assert_eq!(full.steps(), (1..=12).rev().collect::<Vec<_>>().as_slice());
        let one = find_path(&Potential::linear(30), 1, 10.0).unwrap().unwrap();
        assert_eq!(one.steps(), &[30]);
        assert!(find_path(&Potential::linear(30), 3, 0.1).unwrap().is_none());
    }

    #[test]
    fn zero_residual_drives_the_bound_to_zero() {
        let out = optimize_path(&Zero(100), 5, Tolerance::Relative(1e-4)).unwrap();
        assert_eq!(out.d_star, 0.0);
        assert_eq!(out.path.len(), 5);
    }

    #[test]
    fn optimum_of_linear_potential_is_even_spacing() {
        let rfn = Potential::linear(1000);
        let out = optimize_path(&rfn, 5, Tolerance::Absolute(1e-9)).unwrap();
        assert!(out.d_star <= out.d_hi);
        assert!((out.d_star - 0.2).abs() < 1e-9);
        assert_eq!(out.path.steps(), &[1000, 800, 600, 400, 200]);
    }

    #[test]
    fn monotonicity_diagnostics() {
        let rfn = Potential::linear(20);
        assert!(monotonicity_violations(&rfn, &[20]).unwrap().is_empty());
        let bumpy = Potential {
            g: vec![0.0, 0.5, 0.2, 0.6, 1.0],
            calls: AtomicUsize::new(0),
        };
        // g(2) < g(1) makes d(·, 2) > d(·, 1)
        assert_eq!(monotonicity_violations(&bumpy, &[4]).unwrap(), vec![2]);
    }

    #[test]
    fn tolerance_resolution() {
        assert_eq!(Tolerance::Relative(0.5).resolve(4.0).unwrap(), 2.0);
        assert_eq!(Tolerance::Absolute(0.5).resolve(4.0).unwrap(), 0.5);
        assert!(Tolerance::Absolute(0.0).resolve(1.0).is_err());
        assert!(Tolerance::Relative(f64::NAN).resolve(1.0).is_err());
    }

    #[test]
    fn binary_search_call_count_is_logarithmic() {
        let rfn = Potential::linear(1024);
        find_next_step(&rfn, &[1024], 0.3).unwrap();
        // ⌈log₂ 1025⌉ probes plus the re-check
        assert!(rfn.calls.load(Ordering::Relaxed) <= 12);
    }
}
