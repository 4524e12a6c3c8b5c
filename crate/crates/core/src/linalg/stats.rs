use super::Matrix;
use crate::error::{Error, Result};

/// Pearson correlation between every pair of vectors, treating each vector's
/// elements as samples.
pub fn pearson_correlation_matrix(vectors: &[&[f64]]) -> Result<Matrix> {
    if vectors.len() < 2 {
        return Err(Error::InvalidParameter(
            "correlation needs at least two vectors".into(),
        ));
    }
    let len = vectors[0].len();
    if len < 2 {
        return Err(Error::InvalidParameter(
            "correlation needs vectors of length >= 2".into(),
        ));
    }
    if let Some(v) = vectors.iter().find(|v| v.len() != len) {
        return Err(Error::DimensionMismatch {
            expected: len,
            actual: v.len(),
        });
    }

    // center and scale each vector to unit norm once; entries are then dot products
    let mut unit = Vec::with_capacity(vectors.len());
    for (index, v) in vectors.iter().enumerate() {
        let mean = v.iter().sum::<f64>() / len as f64;
        let centered: Vec<f64> = v.iter().map(|x| x - mean).collect();
        let ss = centered.iter().map(|x| x * x).sum::<f64>().sqrt();
        if ss == 0.0 || !ss.is_finite() {
            return Err(Error::ZeroVariance { index });
        }
        unit.push(centered.into_iter().map(|x| x / ss).collect::<Vec<_>>());
    }

    let n = vectors.len();
    let mut out = Matrix::zeros(n, n);
    for i in 0..n {
        out[(i, i)] = 1.0;
        for j in 0..i {
            let r: f64 = unit[i].iter().zip(&unit[j]).map(|(a, b)| a * b).sum();
            let r = r.clamp(-1.0, 1.0);
            out[(i, j)] = r;
            out[(j, i)] = r;
        }
    }
    Ok(out)
}
