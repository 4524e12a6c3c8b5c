use super::{dot, norm, Matrix};
use crate::error::{Error, Result};

/// Diagonal entries of R at or below this multiple of `‖A‖_F` mark a rank-deficient
/// factorization.
const RANK_TOL: f64 = 1e-12;
/// Ridge strength, relative to `‖A‖_F²`, used when the plain QR solve is rank deficient.
const RIDGE_SCALE: f64 = 1e-10;

/// Compact Householder factorization `A = H_0 H_1 … H_{n-1} [R; 0]`.
#[derive(Debug, Clone)]
struct Householder {
    rows: usize,
    cols: usize,
    /// Unit reflector vectors; `reflectors[k]` acts on rows `k..rows`. Empty when
    /// the column was already zero below the diagonal and no reflection was needed.
    reflectors: Vec<Vec<f64>>,
    r: Matrix,
}

impl Householder {
    fn factor(a: &Matrix) -> Self {
        let (m, n) = (a.rows(), a.cols());
        debug_assert!(m >= n);
        // column-major working copy
        let mut work = vec![0.0; m * n];
        for r in 0..m {
            for c in 0..n {
                work[c * m + r] = a[(r, c)];
            }
        }
        let mut reflectors = Vec::with_capacity(n);
        let mut r_mat = Matrix::zeros(n, n);
        for k in 0..n {
            let x = &work[k * m + k..(k + 1) * m];
            let norm_x = norm(x);
            let tail_zero = x[1..].iter().all(|&v| v == 0.0);
            if norm_x == 0.0 || tail_zero {
                reflectors.push(Vec::new());
            } else {
                let alpha = if x[0] >= 0.0 { -norm_x } else { norm_x };
                let mut v = x.to_vec();
                v[0] -= alpha;
                let vn = norm(&v);
                v.iter_mut().for_each(|e| *e /= vn);
                for j in k..n {
                    let y = &mut work[j * m + k..(j + 1) * m];
                    let s = 2.0 * dot(&v, y);
                    for (yi, vi) in y.iter_mut().zip(&v) {
                        *yi -= s * vi;
                    }
                }
                // the reflected column is exactly alpha·e₁
                work[k * m + k] = alpha;
                work[k * m + k + 1..(k + 1) * m].fill(0.0);
                reflectors.push(v);
            }
            for j in k..n {
                r_mat[(k, j)] = work[j * m + k];
            }
        }
        Self {
            rows: m,
            cols: n,
            reflectors,
            r: r_mat,
        }
    }

    /// Overwrites `b` with `Qᵀ b` (full m-vector).
    fn apply_qt(&self, b: &mut [f64]) {
        for (k, v) in self.reflectors.iter().enumerate() {
            if v.is_empty() {
                continue;
            }
            let y = &mut b[k..];
            let s = 2.0 * dot(v, y);
            for (yi, vi) in y.iter_mut().zip(v) {
                *yi -= s * vi;
            }
        }
    }

    fn thin_q(&self) -> Matrix {
        let (m, n) = (self.rows, self.cols);
        let mut q = Matrix::zeros(m, n);
        let mut col = vec![0.0; m];
        for c in 0..n {
            col.fill(0.0);
            col[c] = 1.0;
            for (k, v) in self.reflectors.iter().enumerate().rev() {
                if v.is_empty() {
                    continue;
                }
                let y = &mut col[k..];
                let s = 2.0 * dot(v, y);
                for (yi, vi) in y.iter_mut().zip(v) {
                    *yi -= s * vi;
                }
            }
            for r in 0..m {
                q[(r, c)] = col[r];
            }
        }
        q
    }

    /// First index whose diagonal entry falls below the rank threshold.
    fn deficient_index(&self, threshold: f64) -> Option<usize> {
        (0..self.cols).find(|&k| self.r[(k, k)].abs() <= threshold)
    }

    /// Solves `R w = c` for the leading `cols` entries of `c`.
    fn back_substitute(&self, c: &[f64]) -> Vec<f64> {
        let n = self.cols;
        let mut w = vec![0.0; n];
        for k in (0..n).rev() {
            let tail: f64 = (k + 1..n).map(|j| self.r[(k, j)] * w[j]).sum();
            w[k] = (c[k] - tail) / self.r[(k, k)];
        }
        w
    }
}

/// Thin QR factorization by Householder reflections.
///
/// Returns `Q` (rows×cols, orthonormal columns) and upper-triangular `R` (cols×cols).
/// A diagonal entry of `R` with magnitude at most `1e-12·‖A‖_F` is reported as
/// [`Error::RankDeficient`].
pub fn qr_decompose(a: &Matrix) -> Result<(Matrix, Matrix)> {
    if a.rows() < a.cols() {
        return Err(Error::Shape(format!(
            "QR needs rows >= cols, got {}x{}",
            a.rows(),
            a.cols()
        )));
    }
    let h = Householder::factor(a);
    let threshold = RANK_TOL * a.frobenius_norm();
    if let Some(index) = h.deficient_index(threshold) {
        return Err(Error::RankDeficient {
            index,
            value: h.r[(index, index)].abs(),
            threshold,
        });
    }
    Ok((h.thin_q(), h.r))
}

#[derive(Debug, Clone, PartialEq)]
pub struct LeastSquaresSolution {
    pub weights: Vec<f64>,
    /// `‖A·w − b‖₂`
    pub residual_norm: f64,
    /// Set when the system was rank deficient and the ridge fallback was used.
    pub regularized: bool,
}

/// A least-squares system with a fixed design matrix, factored once and solved for
/// any number of right-hand sides.
///
/// Columns that are identically zero get weight 0 and are left out of the
/// factorization. If the remaining columns are still rank deficient, the factor
/// switches to ridge regression with `λ = 1e-10·‖A‖_F²`, realized as the QR of
/// `[A; √λ·I]`, which solves `(AᵀA + λI) w = Aᵀb` without forming the normal equations.
#[derive(Debug, Clone)]
pub struct LeastSquaresFactor {
    a: Matrix,
    /// Indices of the columns that enter the factorization.
    active: Vec<usize>,
    qr: Option<Householder>,
    regularized: bool,
}

impl LeastSquaresFactor {
    pub fn new(a: Matrix) -> Result<Self> {
        let (m, n) = (a.rows(), a.cols());
        if m < n {
            return Err(Error::Underdetermined { rows: m, cols: n });
        }
        let active: Vec<usize> = (0..n)
            .filter(|&c| (0..m).any(|r| a[(r, c)] != 0.0))
            .collect();
        if active.is_empty() {
            return Ok(Self {
                a,
                active,
                qr: None,
                regularized: false,
            });
        }
        let reduced = if active.len() == n {
            a.clone()
        } else {
            let cols: Vec<Vec<f64>> = active.iter().map(|&c| a.column(c)).collect();
            let refs: Vec<&[f64]> = cols.iter().map(Vec::as_slice).collect();
            Matrix::from_columns(&refs)?
        };
        let k = active.len();
        let fro = reduced.frobenius_norm();
        let qr = Householder::factor(&reduced);
        if qr.deficient_index(RANK_TOL * fro).is_none() {
            return Ok(Self {
                a,
                active,
                qr: Some(qr),
                regularized: false,
            });
        }
        let shift = (RIDGE_SCALE * fro * fro).sqrt();
        let mut augmented = Matrix::zeros(m + k, k);
        for r in 0..m {
            for c in 0..k {
                augmented[(r, c)] = reduced[(r, c)];
            }
        }
        for c in 0..k {
            augmented[(m + c, c)] = shift;
        }
        Ok(Self {
            a,
            active,
            qr: Some(Householder::factor(&augmented)),
            regularized: true,
        })
    }

    pub fn design(&self) -> &Matrix {
        &self.a
    }

    pub fn is_regularized(&self) -> bool {
        self.regularized
    }

    pub fn solve(&self, b: &[f64]) -> Result<LeastSquaresSolution> {
        let m = self.a.rows();
        if b.len() != m {
            return Err(Error::DimensionMismatch {
                expected: m,
                actual: b.len(),
            });
        }
        if b.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("least-squares right-hand side".into()));
        }
        let mut weights = vec![0.0; self.a.cols()];
        if let Some(qr) = &self.qr {
            let mut c = vec![0.0; qr.rows];
            c[..m].copy_from_slice(b);
            qr.apply_qt(&mut c);
            for (&col, w) in self.active.iter().zip(qr.back_substitute(&c)) {
                weights[col] = w;
            }
        }
        let fitted = self.a.matvec(&weights)?;
        let residual_norm = fitted
            .iter()
            .zip(b)
            .map(|(f, y)| (f - y) * (f - y))
            .sum::<f64>()
            .sqrt();
        Ok(LeastSquaresSolution {
            weights,
            residual_norm,
            regularized: self.regularized,
        })
    }
}

/// Minimizes `‖A·w − b‖₂` through Householder QR and back-substitution.
pub fn solve_least_squares(a: &Matrix, b: &[f64]) -> Result<LeastSquaresSolution> {
    LeastSquaresFactor::new(a.clone())?.solve(b)
}
