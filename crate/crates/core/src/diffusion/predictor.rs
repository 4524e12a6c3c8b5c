//! Analytic noise predictors.
//!
//! For data `x_0 ~ N(μ, Σ)` and `x_t = √ᾱ_t·x_0 + √(1−ᾱ_t)·ε`, the pair `(ε, x_t)` is
//! jointly Gaussian with `Cov(ε, x_t) = √(1−ᾱ_t)·I` and
//! `Cov(x_t) = C_t = ᾱ_t·Σ + (1−ᾱ_t)·I`, so the minimum-MSE noise prediction is
//!
//! ```text
//! E[ε | x_t = x] = √(1−ᾱ_t) · C_t⁻¹ · (x − √ᾱ_t·μ)
//! ```
//!
//! Mixtures weight each component's prediction by its posterior responsibility under
//! the marginal of `x_t`. Σ is eigendecomposed once, after which every `C_t⁻¹` is a
//! diagonal rescaling in the eigenbasis.

use std::f64::consts::PI;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::NoiseSchedule;
use crate::error::{Error, Result};
use crate::linalg::{norm, symmetric_eigen, Matrix};

/// Deterministic noise prediction `e_t = ε(x_t, t)`.
pub trait NoisePredictor: Send + Sync {
    fn dim(&self) -> usize;

    /// Writes the prediction for `(x, t)` into `out`; both slices have length `dim()`.
    fn predict_into(&self, x: &[f64], t: usize, out: &mut [f64]);

    fn descriptor(&self) -> PredictorDescriptor;

    fn predict(&self, x: &[f64], t: usize) -> Vec<f64> {
        let mut out = vec![0.0; self.dim()];
        self.predict_into(x, t, &mut out);
        out
    }
}

/// Serializable description of a predictor, stored alongside trajectories and
/// schedulers so the teacher can be rebuilt.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "parameters", rename_all = "lowercase")]
pub enum PredictorDescriptor {
    Zero {
        dim: usize,
    },
    Gaussian {
        mean: Vec<f64>,
        covariance: Vec<Vec<f64>>,
    },
    Gmm {
        weights: Vec<f64>,
        means: Vec<Vec<f64>>,
        covariances: Vec<Vec<Vec<f64>>>,
    },
}

impl PredictorDescriptor {
    /// Mixture of `components` isotropic Gaussians with equal weights, covariance
    /// `variance·I`, and seeded random means of Euclidean norm `mean_norm`.
    pub fn random_gmm(dim: usize, components: usize, mean_norm: f64, variance: f64, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let means = (0..components)
            .map(|_| {
                let v: Vec<f64> = (0..dim).map(|_| StandardNormal.sample(&mut rng)).collect();
                let scale = mean_norm / norm(&v);
                v.into_iter().map(|x| x * scale).collect()
            })
            .collect();
        let cov = Matrix::identity(dim);
        let cov: Vec<Vec<f64>> = cov
            .to_rows()
            .into_iter()
            .map(|r| r.into_iter().map(|x| x * variance).collect())
            .collect();
        Self::Gmm {
            weights: vec![1.0 / components as f64; components],
            means,
            covariances: vec![cov; components],
        }
    }

    /// The default teacher: three components in dimension `dim`, means of norm 3,
    /// covariance `0.5·I`.
    pub fn default_gmm(dim: usize, seed: u64) -> Self {
        Self::random_gmm(dim, 3, 3.0, 0.5, seed)
    }

    pub fn dim(&self) -> usize {
        match self {
            Self::Zero { dim } => *dim,
            Self::Gaussian { mean, .. } => mean.len(),
            Self::Gmm { means, .. } => means.first().map_or(0, Vec::len),
        }
    }

    pub fn build(&self, schedule: &NoiseSchedule) -> Result<Box<dyn NoisePredictor>> {
        Ok(match self {
            Self::Zero { dim } => Box::new(ZeroPredictor::new(*dim)),
            Self::Gaussian { mean, covariance } => Box::new(gaussian_predictor(
                mean.clone(),
                Matrix::from_rows(covariance)?,
                schedule,
            )?),
            Self::Gmm {
                weights,
                means,
                covariances,
            } => {
                let covs = covariances
                    .iter()
                    .map(|c| Matrix::from_rows(c))
                    .collect::<Result<Vec<_>>>()?;
                Box::new(gmm_predictor(weights.clone(), means.clone(), covs, schedule)?)
            }
        })
    }
}

/// Predicts zero noise everywhere; the reverse process then only rescales `x`.
#[derive(Debug, Clone)]
pub struct ZeroPredictor {
    dim: usize,
}

impl ZeroPredictor {
    pub fn new(dim: usize) -> Self {
        Self { dim }
    }
}

impl NoisePredictor for ZeroPredictor {
    fn dim(&self) -> usize {
        self.dim
    }

    fn predict_into(&self, _x: &[f64], _t: usize, out: &mut [f64]) {
        out.fill(0.0);
    }

    fn descriptor(&self) -> PredictorDescriptor {
        PredictorDescriptor::Zero { dim: self.dim }
    }
}

/// One Gaussian data component, pre-factored as `Σ = V·diag(λ)·Vᵀ`.
#[derive(Debug, Clone)]
struct Component {
    mean: Vec<f64>,
    covariance: Matrix,
    eigenvalues: Vec<f64>,
    eigenvectors: Vec<Vec<f64>>,
}

impl Component {
    fn new(mean: Vec<f64>, covariance: Matrix) -> Result<Self> {
        let d = mean.len();
        if d == 0 {
            return Err(Error::InvalidParameter("empty mean vector".into()));
        }
        if covariance.rows() != d || covariance.cols() != d {
            return Err(Error::DimensionMismatch {
                expected: d,
                actual: covariance.rows(),
            });
        }
        if mean.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("component mean".into()));
        }
        if !covariance.is_symmetric(1e-12 * covariance.max_abs()) {
            return Err(Error::NotPositiveDefinite("covariance is not symmetric".into()));
        }
        let eig = symmetric_eigen(&covariance)?;
        let smallest = *eig.values.last().expect("nonempty spectrum");
        if smallest <= 1e-12 * eig.values[0].abs().max(f64::MIN_POSITIVE) || smallest <= 0.0 {
            return Err(Error::NotPositiveDefinite(format!(
                "smallest eigenvalue {smallest:e}"
            )));
        }
        Ok(Self {
            mean,
            covariance,
            eigenvalues: eig.values,
            eigenvectors: eig.vectors,
        })
    }

    /// Eigenbasis coordinates of `x − √ᾱ·μ` and the matching diagonal of `C_t`.
    fn whiten(&self, x: &[f64], alpha_bar: f64, coords: &mut [f64], diag: &mut [f64]) {
        let s = alpha_bar.sqrt();
        for (k, v) in self.eigenvectors.iter().enumerate() {
            coords[k] = x
                .iter()
                .zip(&self.mean)
                .zip(v)
                .map(|((xi, mi), vi)| (xi - s * mi) * vi)
                .sum();
            diag[k] = alpha_bar * self.eigenvalues[k] + (1.0 - alpha_bar);
        }
    }

    /// `√(1−ᾱ)·C⁻¹·(x − √ᾱ·μ)` from whitened coordinates.
    fn noise_from(&self, coords: &[f64], diag: &[f64], alpha_bar: f64, out: &mut [f64]) {
        let scale = (1.0 - alpha_bar).sqrt();
        out.fill(0.0);
        for (k, v) in self.eigenvectors.iter().enumerate() {
            let c = scale * coords[k] / diag[k];
            for (o, vi) in out.iter_mut().zip(v) {
                *o += c * vi;
            }
        }
    }

    /// Log-density of `x_t` under this component's marginal.
    fn log_density(&self, coords: &[f64], diag: &[f64]) -> f64 {
        let quad: f64 = coords.iter().zip(diag).map(|(z, c)| z * z / c).sum();
        let logdet: f64 = diag.iter().map(|c| c.ln()).sum();
        -0.5 * (quad + logdet + coords.len() as f64 * (2.0 * PI).ln())
    }
}

/// Exact conditional-expectation noise predictor for Gaussian data.
#[derive(Debug, Clone)]
pub struct GaussianPredictor {
    component: Component,
    alpha_bar: Vec<f64>,
}

pub fn gaussian_predictor(mean: Vec<f64>, covariance: Matrix, schedule: &NoiseSchedule) -> Result<GaussianPredictor> {
    Ok(GaussianPredictor {
        component: Component::new(mean, covariance)?,
        alpha_bar: schedule.alpha_bars().to_vec(),
    })
}

impl NoisePredictor for GaussianPredictor {
    fn dim(&self) -> usize {
        self.component.mean.len()
    }

    fn predict_into(&self, x: &[f64], t: usize, out: &mut [f64]) {
        let d = self.dim();
        let ab = self.alpha_bar[t];
        let (mut coords, mut diag) = (vec![0.0; d], vec![0.0; d]);
        self.component.whiten(x, ab, &mut coords, &mut diag);
        self.component.noise_from(&coords, &diag, ab, out);
    }

    fn descriptor(&self) -> PredictorDescriptor {
        PredictorDescriptor::Gaussian {
            mean: self.component.mean.clone(),
            covariance: self.component.covariance.to_rows(),
        }
    }
}

/// Exact conditional-expectation noise predictor for a Gaussian mixture.
#[derive(Debug, Clone)]
pub struct GmmPredictor {
    weights: Vec<f64>,
    components: Vec<Component>,
    alpha_bar: Vec<f64>,
}

pub fn gmm_predictor(
    weights: Vec<f64>,
    means: Vec<Vec<f64>>,
    covariances: Vec<Matrix>,
    schedule: &NoiseSchedule,
) -> Result<GmmPredictor> {
    if weights.is_empty() || weights.len() != means.len() || weights.len() != covariances.len() {
        return Err(Error::InvalidParameter(format!(
            "mixture needs matching counts, got {} weights, {} means, {} covariances",
            weights.len(),
            means.len(),
            covariances.len()
        )));
    }
    if weights.iter().any(|&w| !(w > 0.0 && w.is_finite())) {
        return Err(Error::InvalidParameter("mixture weights must be positive".into()));
    }
    let total: f64 = weights.iter().sum();
    if (total - 1.0).abs() > 1e-9 {
        return Err(Error::InvalidParameter(format!(
            "mixture weights sum to {total}, not 1"
        )));
    }
    let components = means
        .into_iter()
        .zip(covariances)
        .map(|(m, c)| Component::new(m, c))
        .collect::<Result<Vec<_>>>()?;
    let d = components[0].mean.len();
    if let Some(c) = components.iter().find(|c| c.mean.len() != d) {
        return Err(Error::DimensionMismatch {
            expected: d,
            actual: c.mean.len(),
        });
    }
    Ok(GmmPredictor {
        weights,
        components,
        alpha_bar: schedule.alpha_bars().to_vec(),
    })
}

impl GmmPredictor {
    /// Posterior component probabilities of `x` at step `t`.
    pub fn responsibilities(&self, x: &[f64], t: usize) -> Vec<f64> {
        let d = x.len();
        let ab = self.alpha_bar[t];
        let (mut coords, mut diag) = (vec![0.0; d], vec![0.0; d]);
        let logs: Vec<f64> = self
            .components
            .iter()
            .zip(&self.weights)
            .map(|(c, w)| {
                c.whiten(x, ab, &mut coords, &mut diag);
                w.ln() + c.log_density(&coords, &diag)
            })
            .collect();
        normalize_log_weights(&logs)
    }
}

/// `exp(l_k − logsumexp(l))`.
fn normalize_log_weights(logs: &[f64]) -> Vec<f64> {
    let max = logs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + logs.iter().map(|l| (l - max).exp()).sum::<f64>().ln();
    logs.iter().map(|l| (l - lse).exp()).collect()
}

impl NoisePredictor for GmmPredictor {
    fn dim(&self) -> usize {
        self.components[0].mean.len()
    }

    fn predict_into(&self, x: &[f64], t: usize, out: &mut [f64]) {
        let d = self.dim();
        let ab = self.alpha_bar[t];
        let k = self.components.len();
        let mut coords = vec![0.0; d * k];
        let mut diag = vec![0.0; d * k];
        let mut logs = Vec::with_capacity(k);
        for (i, (c, w)) in self.components.iter().zip(&self.weights).enumerate() {
            let (zc, dc) = (&mut coords[i * d..(i + 1) * d], &mut diag[i * d..(i + 1) * d]);
            c.whiten(x, ab, zc, dc);
            logs.push(w.ln() + c.log_density(zc, dc));
        }
        let gamma = normalize_log_weights(&logs);
        out.fill(0.0);
        let mut e = vec![0.0; d];
        for (i, c) in self.components.iter().enumerate() {
            c.noise_from(&coords[i * d..(i + 1) * d], &diag[i * d..(i + 1) * d], ab, &mut e);
            for (o, ei) in out.iter_mut().zip(&e) {
                *o += gamma[i] * ei;
            }
        }
    }

    fn descriptor(&self) -> PredictorDescriptor {
        PredictorDescriptor::Gmm {
            weights: self.weights.clone(),
            means: self.components.iter().map(|c| c.mean.clone()).collect(),
            covariances: self.components.iter().map(|c| c.covariance.to_rows()).collect(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffusion::make_linear_schedule;

    fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
        a.iter().zip(b).fold(0.0, |m, (x, y)| m.max((x - y).abs()))
    }

    fn schedule() -> NoiseSchedule {
        make_linear_schedule(100, 1e-3, 0.05).unwrap()
    }

    #[test]
    fn isotropic_standard_prior_collapses() {
        let s = schedule();
        let p = gaussian_predictor(vec![0.0; 3], Matrix::identity(3), &s).unwrap();
        let x = [0.3, -1.2, 2.0];
        for t in [1, 40, 100] {
            let e = p.predict(&x, t);
            let scale = (1.0 - s.alpha_bar(t)).sqrt();
            for (ei, xi) in e.iter().zip(&x) {
                assert!((ei - scale * xi).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn matches_direct_inverse() {
        let s = schedule();
        let cov = Matrix::from_rows(&[vec![2.0, 0.3], vec![0.3, 0.5]]).unwrap();
        let mu = vec![1.0, -2.0];
        let p = gaussian_predictor(mu.clone(), cov.clone(), &s).unwrap();
        let x = [0.7, 0.1];
        let t = 30;
        let ab = s.alpha_bar(t);
        // explicit 2x2 inverse of C = ᾱΣ + (1−ᾱ)I
        let c = [
            ab * cov[(0, 0)] + 1.0 - ab,
            ab * cov[(0, 1)],
            ab * cov[(1, 1)] + 1.0 - ab,
        ];
        let det = c[0] * c[2] - c[1] * c[1];
        let r = [x[0] - ab.sqrt() * mu[0], x[1] - ab.sqrt() * mu[1]];
        let k = (1.0 - ab).sqrt() / det;
        let want = [k * (c[2] * r[0] - c[1] * r[1]), k * (c[0] * r[1] - c[1] * r[0])];
        assert!(max_abs_diff(&p.predict(&x, t), &want) < 1e-13);
    }

    #[test]
    fn vanishes_near_clean_data() {
        let s = make_linear_schedule(1000, 1e-6, 1e-6).unwrap();
        let mu = vec![0.5, 1.5];
        let p = gaussian_predictor(mu.clone(), Matrix::identity(2), &s).unwrap();
        let ab = s.alpha_bar(1);
        let x: Vec<f64> = mu.iter().map(|m| ab.sqrt() * m + 1e-3).collect();
        assert!(p.predict(&x, 1).iter().all(|e| e.abs() < 1e-5));
    }

    #[test]
    fn single_component_mixture_equals_gaussian() {
        let s = schedule();
        let cov = Matrix::from_rows(&[vec![1.5, -0.2], vec![-0.2, 0.7]]).unwrap();
        let mu = vec![0.4, 2.0];
        let g = gaussian_predictor(mu.clone(), cov.clone(), &s).unwrap();
        let m = gmm_predictor(vec![1.0], vec![mu], vec![cov], &s).unwrap();
        for t in [1, 17, 60, 100] {
            let x = [t as f64 * 0.01 - 0.3, 1.1];
            assert!(max_abs_diff(&g.predict(&x, t), &m.predict(&x, t)) <= 1e-12);
        }
    }

    #[test]
    fn symmetric_mixture_splits_evenly_at_origin() {
        let s = schedule();
        let a = vec![2.0, -1.0];
        let neg: Vec<f64> = a.iter().map(|v| -v).collect();
        let m = gmm_predictor(
            vec![0.5, 0.5],
            vec![a, neg],
            vec![Matrix::identity(2), Matrix::identity(2)],
            &s,
        )
        .unwrap();
        let gamma = m.responsibilities(&[0.0, 0.0], 50);
        assert!((gamma[0] - 0.5).abs() < 1e-15 && (gamma[1] - 0.5).abs() < 1e-15);
        // by symmetry the two component predictions cancel
        assert!(m.predict(&[0.0, 0.0], 50).iter().all(|e| e.abs() < 1e-15));
    }

    #[test]
    fn responsibilities_are_stable_far_from_components() {
        let s = schedule();
        let m = gmm_predictor(
            vec![0.5, 0.5],
            vec![vec![50.0, 0.0], vec![-50.0, 0.0]],
            vec![Matrix::identity(2), Matrix::identity(2)],
            &s,
        )
        .unwrap();
        let gamma = m.responsibilities(&[400.0, 0.0], 1);
        assert!(gamma.iter().all(|g| g.is_finite()));
        assert!((gamma[0] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn construction_errors() {
        let s = schedule();
        let not_pd = Matrix::from_rows(&[vec![1.0, 2.0], vec![2.0, 1.0]]).unwrap();
        assert!(matches!(
            gaussian_predictor(vec![0.0, 0.0], not_pd, &s),
            Err(Error::NotPositiveDefinite(_))
        ));
        let asym = Matrix::from_rows(&[vec![1.0, 0.5], vec![0.0, 1.0]]).unwrap();
        assert!(gaussian_predictor(vec![0.0, 0.0], asym, &s).is_err());
        assert!(gaussian_predictor(vec![0.0], Matrix::identity(2), &s).is_err());
        let eye = || Matrix::identity(2);
        assert!(gmm_predictor(vec![0.6, 0.6], vec![vec![0.0; 2]; 2], vec![eye(), eye()], &s).is_err());
        assert!(gmm_predictor(vec![1.0, 0.0], vec![vec![0.0; 2]; 2], vec![eye(), eye()], &s).is_err());
        assert!(gmm_predictor(vec![1.0], vec![vec![0.0; 2]; 2], vec![eye()], &s).is_err());
    }

    #[test]
    fn descriptor_round_trip_rebuilds_same_predictor() {
        let s = schedule();
        let desc = PredictorDescriptor::default_gmm(4, 9);
        let json = serde_json::to_string(&desc).unwrap();
        assert!(json.starts_with(r#"{"kind":"gmm","parameters":"#));
        let back: PredictorDescriptor = serde_json::from_str(&json).unwrap();
        assert_eq!(back, desc);
        let p = back.build(&s).unwrap();
        assert_eq!(p.descriptor(), desc);
        if let PredictorDescriptor::Gmm { means, .. } = &desc {
            assert!(means.iter().all(|m| (norm(m) - 3.0).abs() < 1e-12));
        }
    }
}
