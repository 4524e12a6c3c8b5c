use super::{dot, symmetric_eigen, Matrix};
use crate::error::{Error, Result};

/// Top-two principal axes of a point cloud.
#[derive(Debug, Clone, PartialEq)]
pub struct PcaBasis {
    pub mean: Vec<f64>,
    /// Orthonormal; each vector's largest-magnitude entry is positive.
    pub components: [Vec<f64>; 2],
    /// Sample-covariance eigenvalues, descending and nonnegative.
    pub explained_variance: [f64; 2],
}

pub fn pca_fit(points: &[Vec<f64>]) -> Result<PcaBasis> {
    if points.len() < 3 {
        return Err(Error::InvalidParameter(format!(
            "PCA needs at least 3 points, got {}",
            points.len()
        )));
    }
    let dim = points[0].len();
    if dim < 2 {
        return Err(Error::InvalidParameter(
            "PCA needs ambient dimension >= 2".into(),
        ));
    }
    if let Some(p) = points.iter().find(|p| p.len() != dim) {
        return Err(Error::DimensionMismatch {
            expected: dim,
            actual: p.len(),
        });
    }
    let count = points.len() as f64;
    let mut mean = vec![0.0; dim];
    for p in points {
        for (m, v) in mean.iter_mut().zip(p) {
            *m += v;
        }
    }
    mean.iter_mut().for_each(|m| *m /= count);

    let mut cov = Matrix::zeros(dim, dim);
    let mut centered = vec![0.0; dim];
    for p in points {
        for ((c, v), m) in centered.iter_mut().zip(p).zip(&mean) {
            *c = v - m;
        }
        for i in 0..dim {
            for j in 0..=i {
                cov[(i, j)] += centered[i] * centered[j];
            }
        }
    }
    for i in 0..dim {
        for j in 0..=i {
            let v = cov[(i, j)] / (count - 1.0);
            cov[(i, j)] = v;
            cov[(j, i)] = v;
        }
    }
    if cov.max_abs() == 0.0 {
        return Err(Error::DegenerateCovariance);
    }

    let eig = symmetric_eigen(&cov)?;
    let fix_sign = |mut v: Vec<f64>| {
        let lead = v
            .iter()
            .copied()
            .fold(0.0f64, |best, x| if x.abs() > best.abs() { x } else { best });
        if lead < 0.0 {
            v.iter_mut().for_each(|x| *x = -*x);
        }
        v
    };
    Ok(PcaBasis {
        mean,
        components: [
            fix_sign(eig.vectors[0].clone()),
            fix_sign(eig.vectors[1].clone()),
        ],
        explained_variance: [eig.values[0].max(0.0), eig.values[1].max(0.0)],
    })
}

pub fn pca_project(basis: &PcaBasis, point: &[f64]) -> Result<(f64, f64)> {
    if point.len() != basis.mean.len() {
        return Err(Error::DimensionMismatch {
            expected: basis.mean.len(),
            actual: point.len(),
        });
    }
    let centered: Vec<f64> = point.iter().zip(&basis.mean).map(|(p, m)| p - m).collect();
    Ok((
        dot(&centered, &basis.components[0]),
        dot(&centered, &basis.components[1]),
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::norm;

    #[test]
    fn axis_aligned_cloud() {
        let pts: Vec<Vec<f64>> = [-2.0, 0.5, 1.0, 3.0]
            .iter()
            .map(|&x| vec![x, 0.0, 0.0])
            .collect();
        let b = pca_fit(&pts).unwrap();
        assert_eq!(b.components[0], vec![1.0, 0.0, 0.0]);
        assert_eq!(b.explained_variance[1], 0.0);
        assert!(b.explained_variance[0] > 0.0);
    }

    #[test]
    fn near_diagonal_cloud() {
        let pts = vec![
            vec![0.0, 0.0],
            vec![1.0, 1.0],
            vec![2.0, 2.0],
            vec![3.0, 3.01],
        ];
        let b = pca_fit(&pts).unwrap();
        let c = &b.components[0];
        let diag = 0.5f64.sqrt();
        assert!((c[0] - diag).abs() < 1e-2 && (c[1] - diag).abs() < 1e-2);
        assert!(c[1] > c[0]);
    }

    #[test]
    fn orthonormal_and_reconstructs_rank_two_data() {
        // points on a 2-plane through (1, 2, 3, 4) in R⁴
        let u = [1.0, 0.0, 1.0, 0.0];
        let v = [0.0, 2.0, 0.0, -1.0];
        let pts: Vec<Vec<f64>> = (0..9)
            .map(|k| {
                let (a, b) = ((k as f64 * 0.7).sin() * 3.0, (k as f64 * 1.3).cos());
                (0..4).map(|i| (i + 1) as f64 + a * u[i] + b * v[i]).collect()
            })
            .collect();
        let basis = pca_fit(&pts).unwrap();
        let [c1, c2] = &basis.components;
        assert!((norm(c1) - 1.0).abs() <= 1e-10);
        assert!((norm(c2) - 1.0).abs() <= 1e-10);
        assert!(dot(c1, c2).abs() <= 1e-10);
        assert!(basis.explained_variance[0] >= basis.explained_variance[1]);
        for p in &pts {
            let (x, y) = pca_project(&basis, p).unwrap();
            for i in 0..4 {
                let rebuilt = basis.mean[i] + x * c1[i] + y * c2[i];
                assert!((rebuilt - p[i]).abs() <= 1e-8);
            }
        }
    }

    #[test]
    fn projection_of_mean_and_axis() {
        let pts = vec![vec![0.0, 1.0], vec![2.0, 0.0], vec![5.0, 4.0], vec![1.0, -1.0]];
        let b = pca_fit(&pts).unwrap();
        assert_eq!(pca_project(&b, &b.mean).unwrap(), (0.0, 0.0));
        let shifted: Vec<f64> = b.mean.iter().zip(&b.components[0]).map(|(m, c)| m + c).collect();
        let (x, y) = pca_project(&b, &shifted).unwrap();
        assert!((x - 1.0).abs() <= 1e-10 && y.abs() <= 1e-10);
        assert!(pca_project(&b, &[1.0]).is_err());
    }

    #[test]
    fn degenerate_inputs() {
        let same = vec![vec![1.0, 2.0]; 4];
        assert!(matches!(pca_fit(&same), Err(Error::DegenerateCovariance)));
        assert!(pca_fit(&same[..2]).is_err());
        assert!(pca_fit(&[vec![1.0], vec![2.0], vec![3.0]]).is_err());
    }
}
