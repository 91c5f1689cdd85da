//! Dense linear algebra kernels used by the estimators.
//!
//! Two factorizations cover every need in this crate:
//!
//! * [`Lu`] — LU with partial pivoting, for linear solves and for the
//!   log-determinant terms `ln|I − ρW|` that appear in spatial likelihoods.
//!   One factorization per candidate ρ is cheap at the matrix sizes this
//!   crate targets (N ≤ 2000) and is robust to asymmetric matrices such as
//!   row-standardized weights.
//! * [`QrFactor`] — Householder QR without pivoting, for least squares.
//!   Rank deficiency is detected from the diagonal of R and reported as the
//!   set of offending column indices so callers can name the columns.
//!
//! Everything here is plain safe Rust over contiguous buffers; the
//! elimination and reflection loops operate on row slices so the compiler
//! can vectorize them.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2};

use crate::error::{Result, SpatialError};

// ---------------------------------------------------------------------------
// LU decomposition with partial pivoting
// ---------------------------------------------------------------------------

/// LU factorization PA = LU of a square matrix, stored packed.
#[derive(Debug, Clone)]
pub struct Lu {
    /// Packed L (unit lower, below diagonal) and U (upper, including diagonal).
    lu: Vec<f64>,
    /// Row permutation: stage k swapped rows k and `pivots[k]`.
    pivots: Vec<usize>,
    /// +1.0 or −1.0 according to the parity of the row swaps.
    swap_sign: f64,
    n: usize,
}

impl Lu {
    /// Factor a square matrix. Fails when a pivot column is exactly zero,
    /// i.e. the matrix is singular to working precision.
    pub fn factor(a: &ArrayView2<f64>) -> Result<Self> {
        let n = a.nrows();
        if a.ncols() != n {
            return Err(SpatialError::DimensionMismatch {
                context: "LU factorization (matrix must be square)".into(),
                expected: n,
                actual: a.ncols(),
            });
        }
        let mut lu: Vec<f64> = Vec::with_capacity(n * n);
        for row in a.rows() {
            lu.extend(row.iter());
        }
        let mut pivots = vec![0usize; n];
        let mut swap_sign = 1.0f64;

        for k in 0..n {
            // Partial pivoting: largest magnitude in column k at or below row k.
            let mut p = k;
            let mut max = lu[k * n + k].abs();
            for r in (k + 1)..n {
                let v = lu[r * n + k].abs();
                if v > max {
                    max = v;
                    p = r;
                }
            }
            if max == 0.0 {
                return Err(SpatialError::SingularSystem(format!(
                    "zero pivot at elimination stage {k}"
                )));
            }
            pivots[k] = p;
            if p != k {
                for c in 0..n {
                    lu.swap(k * n + c, p * n + c);
                }
                swap_sign = -swap_sign;
            }
            let pivot = lu[k * n + k];
            // Split so the pivot row and each target row can be borrowed at once.
            let (head, tail) = lu.split_at_mut((k + 1) * n);
            let pivot_row = &head[k * n + (k + 1)..k * n + n];
            for row in tail.chunks_exact_mut(n) {
                let m = row[k] / pivot;
                row[k] = m;
                if m != 0.0 {
                    for (x, &pv) in row[(k + 1)..n].iter_mut().zip(pivot_row) {
                        *x -= m * pv;
                    }
                }
            }
        }
        Ok(Lu {
            lu,
            pivots,
            swap_sign,
            n,
        })
    }

    /// Natural logarithm of the determinant. Errors when the determinant is
    /// not strictly positive, since downstream likelihoods require `ln det`.
    pub fn ln_det(&self) -> Result<f64> {
        let mut sign = self.swap_sign;
        let mut ln = 0.0f64;
        for k in 0..self.n {
            let d = self.lu[k * self.n + k];
            if d < 0.0 {
                sign = -sign;
            }
            ln += d.abs().ln();
        }
        if sign <= 0.0 || !ln.is_finite() {
            return Err(SpatialError::SingularSystem(
                "determinant is not strictly positive; log-determinant undefined".into(),
            ));
        }
        Ok(ln)
    }

    /// Signed determinant (used by tests; solves and likelihoods use
    /// [`Lu::ln_det`] to avoid overflow).
    pub fn det(&self) -> f64 {
        let mut d = self.swap_sign;
        for k in 0..self.n {
            d *= self.lu[k * self.n + k];
        }
        d
    }

    /// Solve A·x = b for one right-hand side.
    pub fn solve(&self, b: &ArrayView1<f64>) -> Result<Array1<f64>> {
        let n = self.n;
        if b.len() != n {
            return Err(SpatialError::DimensionMismatch {
                context: "LU solve (right-hand side length)".into(),
                expected: n,
                actual: b.len(),
            });
        }
        let mut x: Vec<f64> = b.iter().copied().collect();
        // Apply the row permutation, then forward- and back-substitute.
        for k in 0..n {
            x.swap(k, self.pivots[k]);
        }
        for k in 0..n {
            let xk = x[k];
            if xk != 0.0 {
                for r in (k + 1)..n {
                    x[r] -= self.lu[r * n + k] * xk;
                }
            }
        }
        for k in (0..n).rev() {
            let mut s = x[k];
            for c in (k + 1)..n {
                s -= self.lu[k * n + c] * x[c];
            }
            x[k] = s / self.lu[k * n + k];
        }
        Ok(Array1::from_vec(x))
    }

    /// Solve A·X = B column by column.
    pub fn solve_matrix(&self, b: &ArrayView2<f64>) -> Result<Array2<f64>> {
        let n = self.n;
        if b.nrows() != n {
            return Err(SpatialError::DimensionMismatch {
                context: "LU solve (right-hand side rows)".into(),
                expected: n,
                actual: b.nrows(),
            });
        }
        let mut out = Array2::<f64>::zeros((n, b.ncols()));
        for (j, col) in b.columns().into_iter().enumerate() {
            let x = self.solve(&col)?;
            out.column_mut(j).assign(&x);
        }
        Ok(out)
    }
}

/// Build `I − ρW` and return its log-determinant via a fresh LU
/// factorization. This is the production path for likelihood evaluation;
/// it is cross-checked against a dense determinant oracle in the tests.
pub fn ln_det_i_minus_rho_w(w: &ArrayView2<f64>, rho: f64) -> Result<f64> {
    let n = w.nrows();
    let mut a = Array2::<f64>::zeros((n, n));
    a.assign(w);
    a.mapv_inplace(|v| -rho * v);
    for k in 0..n {
        a[[k, k]] += 1.0;
    }
    Lu::factor(&a.view())?.ln_det()
}

// ---------------------------------------------------------------------------
// Householder QR for least squares
// ---------------------------------------------------------------------------

/// Relative diagonal threshold under which a column of R is declared
/// linearly dependent on its predecessors.
const RANK_TOL: f64 = 1e-10;

/// Householder QR factorization of a tall matrix (n ≥ p), for least squares.
#[derive(Debug, Clone)]
pub struct QrFactor {
    /// Reflectors below the diagonal, R on and above it.
    qr: Vec<f64>,
    /// Leading coefficient of each Householder vector (v₀), needed to apply Qᵀ.
    betas: Vec<f64>,
    n: usize,
    p: usize,
}

/// Rank-deficiency report: indices of columns of the design matrix that add
/// no new direction given the columns before them.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RankDeficient(pub Vec<usize>);

impl QrFactor {
    /// Factor `x`. On rank deficiency, returns the offending column indices
    /// instead of a factorization so the caller can name them.
    pub fn factor(x: &ArrayView2<f64>) -> std::result::Result<Self, RankDeficient> {
        let (n, p) = (x.nrows(), x.ncols());
        assert!(n >= p, "least squares requires at least as many rows as columns");
        let mut qr: Vec<f64> = Vec::with_capacity(n * p);
        for row in x.rows() {
            qr.extend(row.iter());
        }
        let mut betas = vec![0.0f64; p];

        for k in 0..p {
            // Householder vector for column k, rows k..n.
            let mut norm2 = 0.0f64;
            for r in k..n {
                let v = qr[r * p + k];
                norm2 += v * v;
            }
            let norm = norm2.sqrt();
            if norm > 0.0 {
                let alpha = if qr[k * p + k] >= 0.0 { -norm } else { norm };
                let v0 = qr[k * p + k] - alpha;
                qr[k * p + k] = alpha; // R diagonal
                betas[k] = v0;
                let denom = v0 * alpha; // = −(v0² + tail²)/... standard: vᵀv = −2·v0·alpha
                if denom != 0.0 {
                    // Apply the reflector H = I − vvᵀ/(−v0·alpha) to trailing columns.
                    for c in (k + 1)..p {
                        let mut dot = v0 * qr[k * p + c];
                        for r in (k + 1)..n {
                            dot += qr[r * p + k] * qr[r * p + c];
                        }
                        let t = dot / denom;
                        qr[k * p + c] += t * v0;
                        for r in (k + 1)..n {
                            qr[r * p + c] += t * qr[r * p + k];
                        }
                    }
                }
            }
        }

        // Rank check on the diagonal of R.
        let max_diag = (0..p)
            .map(|k| qr[k * p + k].abs())
            .fold(0.0f64, f64::max);
        let dependent: Vec<usize> = (0..p)
            .filter(|&k| qr[k * p + k].abs() <= RANK_TOL * max_diag.max(f64::MIN_POSITIVE))
            .collect();
        if !dependent.is_empty() {
            return Err(RankDeficient(dependent));
        }
        Ok(QrFactor { qr, betas, n, p })
    }

    /// Least-squares coefficients for one right-hand side: argmin ‖y − Xb‖².
    pub fn solve(&self, y: &ArrayView1<f64>) -> Array1<f64> {
        let (n, p) = (self.n, self.p);
        assert_eq!(y.len(), n, "right-hand side length mismatch");
        let mut w: Vec<f64> = y.iter().copied().collect();
        // Apply Qᵀ reflector by reflector.
        for k in 0..p {
            let v0 = self.betas[k];
            let alpha = self.qr[k * p + k];
            let denom = v0 * alpha;
            if denom != 0.0 {
                let mut dot = v0 * w[k];
                for r in (k + 1)..n {
                    dot += self.qr[r * p + k] * w[r];
                }
                let t = dot / denom;
                w[k] += t * v0;
                for r in (k + 1)..n {
                    w[r] += t * self.qr[r * p + k];
                }
            }
        }
        // Back-substitute R·b = (Qᵀy)[..p].
        let mut b = vec![0.0f64; p];
        for k in (0..p).rev() {
            let mut s = w[k];
            for c in (k + 1)..p {
                s -= self.qr[k * p + c] * b[c];
            }
            b[k] = s / self.qr[k * p + k];
        }
        Array1::from_vec(b)
    }

    /// (XᵀX)⁻¹ = R⁻¹·R⁻ᵀ, the unscaled coefficient covariance.
    pub fn xtx_inverse(&self) -> Array2<f64> {
        let p = self.p;
        // Invert the upper-triangular R by back-substitution per column.
        let mut rinv = Array2::<f64>::zeros((p, p));
        for j in 0..p {
            let mut col = vec![0.0f64; p];
            col[j] = 1.0;
            for k in (0..=j).rev() {
                let mut s = col[k];
                for c in (k + 1)..=j {
                    s -= self.qr[k * p + c] * col[c];
                }
                col[k] = s / self.qr[k * p + k];
            }
            for k in 0..=j {
                rinv[[k, j]] = col[k];
            }
        }
        // (XᵀX)⁻¹ = R⁻¹ R⁻ᵀ.
        let mut out = Array2::<f64>::zeros((p, p));
        for i in 0..p {
            for j in 0..p {
                let mut s = 0.0;
                for k in i.max(j)..p {
                    s += rinv[[i, k]] * rinv[[j, k]];
                }
                out[[i, j]] = s;
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use ndarray::array;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha20Rng;

    fn random_matrix(n: usize, seed: u64) -> Array2<f64> {
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        Array2::from_shape_fn((n, n), |_| rng.gen_range(-1.0..1.0))
    }

    #[test]
    fn determinant_matches_hand_computed_values() {
        let a = array![[2.0, 0.0], [0.0, 3.0]];
        assert_abs_diff_eq!(Lu::factor(&a.view()).unwrap().det(), 6.0, epsilon = 1e-12);

        let a = array![[0.0, 1.0], [1.0, 0.0]]; // swap ⇒ det −1
        assert_abs_diff_eq!(Lu::factor(&a.view()).unwrap().det(), -1.0, epsilon = 1e-12);

        let a = array![[1.0, 2.0, 3.0], [4.0, 5.0, 6.0], [7.0, 8.0, 10.0]];
        assert_abs_diff_eq!(Lu::factor(&a.view()).unwrap().det(), -3.0, epsilon = 1e-12);
    }

    #[test]
    fn determinant_matches_external_oracle_on_random_matrices() {
        for seed in 0..8u64 {
            let n = 5 + (seed as usize % 4) * 7;
            let a = random_matrix(n, seed);
            let ours = Lu::factor(&a.view()).unwrap().det();
            let na = nalgebra::DMatrix::from_row_slice(n, n, a.as_slice().unwrap());
            let theirs = na.determinant();
            let scale = ours.abs().max(theirs.abs()).max(1e-300);
            assert!(
                ((ours - theirs) / scale).abs() < 1e-10,
                "det mismatch at n={n}, seed={seed}: {ours} vs {theirs}"
            );
        }
    }

    #[test]
    fn ln_det_of_identity_is_exactly_zero() {
        let w = random_matrix(12, 3);
        assert_eq!(ln_det_i_minus_rho_w(&w.view(), 0.0).unwrap(), 0.0);
    }

    #[test]
    fn ln_det_rejects_negative_determinant() {
        let a = array![[0.0, 1.0], [1.0, 0.0]];
        assert!(Lu::factor(&a.view()).unwrap().ln_det().is_err());
    }

    #[test]
    fn singular_matrix_is_reported() {
        let a = array![[1.0, 2.0], [2.0, 4.0]];
        assert!(matches!(
            Lu::factor(&a.view()),
            Err(SpatialError::SingularSystem(_))
        ));
    }

    #[test]
    fn solve_recovers_known_solution() {
        for seed in 0..5u64 {
            let n = 17;
            let a = random_matrix(n, 100 + seed);
            let mut rng = ChaCha20Rng::seed_from_u64(200 + seed);
            let x_true = Array1::from_shape_fn(n, |_| rng.gen_range(-2.0..2.0));
            let b = a.dot(&x_true);
            let x = Lu::factor(&a.view()).unwrap().solve(&b.view()).unwrap();
            for (xi, ti) in x.iter().zip(x_true.iter()) {
                assert_abs_diff_eq!(xi, ti, epsilon = 1e-9);
            }
        }
    }

    #[test]
    fn solve_matrix_matches_column_solves() {
        let a = random_matrix(9, 7);
        let b = Array2::from_shape_fn((9, 3), |(i, j)| (i + 2 * j) as f64 * 0.25 - 1.0);
        let lu = Lu::factor(&a.view()).unwrap();
        let x = lu.solve_matrix(&b.view()).unwrap();
        for j in 0..3 {
            let xj = lu.solve(&b.column(j)).unwrap();
            for i in 0..9 {
                assert_eq!(x[[i, j]], xj[i]);
            }
        }
    }

    #[test]
    fn least_squares_matches_normal_equations() {
        let mut rng = ChaCha20Rng::seed_from_u64(11);
        let n = 60;
        let x = Array2::from_shape_fn((n, 3), |(i, j)| {
            if j == 0 {
                1.0
            } else {
                rng.gen_range(-1.0..1.0) + i as f64 * 0.0
            }
        });
        let y = Array1::from_shape_fn(n, |i| {
            1.5 + 2.0 * x[[i, 1]] - 0.5 * x[[i, 2]] + ((i * 37 % 11) as f64 - 5.0) * 0.01
        });
        let qr = QrFactor::factor(&x.view()).unwrap();
        let b = qr.solve(&y.view());

        // Normal-equations oracle through the LU solver.
        let xtx = x.t().dot(&x);
        let xty = x.t().dot(&y);
        let b_ne = Lu::factor(&xtx.view()).unwrap().solve(&xty.view()).unwrap();
        for (a, b) in b.iter().zip(b_ne.iter()) {
            assert_abs_diff_eq!(a, b, epsilon = 1e-9);
        }

        // (XᵀX)⁻¹ against the external oracle.
        let ours = qr.xtx_inverse();
        let na = nalgebra::DMatrix::from_row_slice(3, 3, xtx.as_slice().unwrap())
            .try_inverse()
            .unwrap();
        for i in 0..3 {
            for j in 0..3 {
                assert_abs_diff_eq!(ours[[i, j]], na[(i, j)], epsilon = 1e-9);
            }
        }
    }

    #[test]
    fn duplicate_column_is_flagged_by_index() {
        let mut rng = ChaCha20Rng::seed_from_u64(13);
        let n = 25;
        let mut x = Array2::<f64>::zeros((n, 3));
        for i in 0..n {
            x[[i, 0]] = 1.0;
            x[[i, 1]] = rng.gen_range(-1.0..1.0);
            x[[i, 2]] = x[[i, 1]]; // exact copy of column 1
        }
        match QrFactor::factor(&x.view()) {
            Err(RankDeficient(cols)) => assert_eq!(cols, vec![2]),
            Ok(_) => panic!("duplicate column not detected"),
        }
    }

    #[test]
    fn zero_column_is_flagged() {
        let mut rng = ChaCha20Rng::seed_from_u64(17);
        let n = 20;
        let mut x = Array2::<f64>::zeros((n, 3));
        for i in 0..n {
            x[[i, 0]] = 1.0;
            x[[i, 1]] = 0.0; // identically zero regressor
            x[[i, 2]] = rng.gen_range(-1.0..1.0);
        }
        match QrFactor::factor(&x.view()) {
            Err(RankDeficient(cols)) => assert_eq!(cols, vec![1]),
            Ok(_) => panic!("zero column not detected"),
        }
    }
}
