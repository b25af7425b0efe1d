//! Linear algebra of the DCT feature-extraction step: the orthonormal DCT-II
//! matrix `M`, the kept-row submatrix `M'`, the flattened linear map `A`
//! acting on vectorized images, and the eigenbasis of `A^T A`.
//!
//! `A` maps a flattened `k x k` image to the flattened `c x c` block of kept
//! DCT coefficients (`c = b - a + 1`). Its rows are orthonormal, so the
//! eigenvalues of `A^T A` are 1 (multiplicity `c^2`, spanned by the rows of
//! `A`) and 0 (multiplicity `k^2 - c^2`). Everything here follows from the
//! orthonormality of the rows of `M'`.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum DctError {
    #[error("invalid kept-row range: need 0 <= a <= b < k, got a={a}, b={b}, k={k}")]
    InvalidRange { a: usize, b: usize, k: usize },
    #[error("shape mismatch: expected {expected} elements, got {got}")]
    ShapeMismatch { expected: usize, got: usize },
}

/// Dense row-major matrix. Sized for this module's needs (k <= 64, so `A` is
/// at most 256 x 4096); not a general linear-algebra type.
#[derive(Debug, Clone, PartialEq)]
pub struct Mat {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Mat {
    pub fn zeros(rows: usize, cols: usize) -> Mat {
        Mat {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        self.data[r * self.cols + c] = v;
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    /// `self * other^T`.
    pub fn mul_transpose(&self, other: &Mat) -> Mat {
        assert_eq!(self.cols, other.cols);
        let mut out = Mat::zeros(self.rows, other.rows);
        for i in 0..self.rows {
            for j in 0..other.rows {
                let s = self
                    .row(i)
                    .iter()
                    .zip(other.row(j))
                    .map(|(a, b)| a * b)
                    .sum();
                out.set(i, j, s);
            }
        }
        out
    }

    /// `max_ij |self_ij - I_ij|`, the residual against the identity.
    pub fn max_identity_residual(&self) -> f64 {
        assert_eq!(self.rows, self.cols);
        let mut worst = 0.0f64;
        for i in 0..self.rows {
            for j in 0..self.cols {
                let target = if i == j { 1.0 } else { 0.0 };
                worst = worst.max((self.get(i, j) - target).abs());
            }
        }
        worst
    }
}

/// The orthonormal DCT-II matrix:
/// `M_ij = sqrt(2/k) * L_i * cos[(pi/k) * (j + 1/2) * i]` with `L_0 = 1/sqrt(2)`
/// and `L_i = 1` otherwise, over 0-based `i, j`.
pub fn dct_matrix(k: usize) -> Mat {
    assert!(k >= 1);
    let mut m = Mat::zeros(k, k);
    let scale = (2.0 / k as f64).sqrt();
    for i in 0..k {
        let lambda = if i == 0 { std::f64::consts::FRAC_1_SQRT_2 } else { 1.0 };
        for j in 0..k {
            let angle = std::f64::consts::PI / k as f64 * (j as f64 + 0.5) * i as f64;
            m.set(i, j, scale * lambda * angle.cos());
        }
    }
    m
}

/// The DCT feature map for a `k x k` image keeping rows/columns `a..=b`
/// (0-based) of the coefficient matrix.
#[derive(Debug, Clone)]
pub struct DctMap {
    k: usize,
    a: usize,
    b: usize,
    c: usize,
    m: Mat,
    m_prime: Mat,
}

impl DctMap {
    pub fn build(k: usize, a: usize, b: usize) -> Result<DctMap, DctError> {
        if !(a <= b && b < k) {
            return Err(DctError::InvalidRange { a, b, k });
        }
        let m = dct_matrix(k);
        let c = b - a + 1;
        let mut m_prime = Mat::zeros(c, k);
        for r in 0..c {
            for j in 0..k {
                m_prime.set(r, j, m.get(a + r, j));
            }
        }
        Ok(DctMap {
            k,
            a,
            b,
            c,
            m,
            m_prime,
        })
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn a(&self) -> usize {
        self.a
    }

    pub fn b(&self) -> usize {
        self.b
    }

    /// Kept block side length `c = b - a + 1`.
    pub fn c(&self) -> usize {
        self.c
    }

    /// Input dimension `k^2`.
    pub fn input_len(&self) -> usize {
        self.k * self.k
    }

    /// Output dimension `c^2`.
    pub fn output_len(&self) -> usize {
        self.c * self.c
    }

    pub fn m(&self) -> &Mat {
        &self.m
    }

    pub fn m_prime(&self) -> &Mat {
        &self.m_prime
    }

    /// `A x` as the operator form `M' X M'^T` on the reshaped input; never
    /// materializes `A`.
    pub fn apply_a(&self, x: &[f64]) -> Result<Vec<f64>, DctError> {
        let (k, c) = (self.k, self.c);
        if x.len() != k * k {
            return Err(DctError::ShapeMismatch {
                expected: k * k,
                got: x.len(),
            });
        }
        // tmp = M' * X, c x k
        let mut tmp = vec![0.0; c * k];
        for r in 0..c {
            let mrow = self.m_prime.row(r);
            for j in 0..k {
                let mut s = 0.0;
                for t in 0..k {
                    s += mrow[t] * x[t * k + j];
                }
                tmp[r * k + j] = s;
            }
        }
        // out = tmp * M'^T, c x c
        let mut out = vec![0.0; c * c];
        for r in 0..c {
            for s_idx in 0..c {
                let mut s = 0.0;
                let srow = self.m_prime.row(s_idx);
                for j in 0..k {
                    s += tmp[r * k + j] * srow[j];
                }
                out[r * c + s_idx] = s;
            }
        }
        Ok(out)
    }

    /// `A^T y` as `M'^T Y M'` on the reshaped coefficient vector.
    pub fn apply_a_transpose(&self, y: &[f64]) -> Result<Vec<f64>, DctError> {
        let (k, c) = (self.k, self.c);
        if y.len() != c * c {
            return Err(DctError::ShapeMismatch {
                expected: c * c,
                got: y.len(),
            });
        }
        // tmp = M'^T * Y, k x c
        let mut tmp = vec![0.0; k * c];
        for i in 0..k {
            for s_idx in 0..c {
                let mut s = 0.0;
                for r in 0..c {
                    s += self.m_prime.get(r, i) * y[r * c + s_idx];
                }
                tmp[i * c + s_idx] = s;
            }
        }
        // out = tmp * M', k x k
        let mut out = vec![0.0; k * k];
        for i in 0..k {
            for j in 0..k {
                let mut s = 0.0;
                for s_idx in 0..c {
                    s += tmp[i * c + s_idx] * self.m_prime.get(s_idx, j);
                }
                out[i * k + j] = s;
            }
        }
        Ok(out)
    }

    /// Orthogonal projection `A^T (A x)` onto the row space of `A`.
    pub fn project_row_space(&self, x: &[f64]) -> Result<Vec<f64>, DctError> {
        self.apply_a_transpose(&self.apply_a(x)?)
    }

    /// Materializes `A` by the index formula
    /// `A[c1*c + c2][k1*k + k2] = M'[c1][k1] * M'[c2][k2]`. Meant for
    /// verification; the operator form is used everywhere else.
    pub fn materialize_a(&self) -> Mat {
        let (k, c) = (self.k, self.c);
        let mut a = Mat::zeros(c * c, k * k);
        for c1 in 0..c {
            for c2 in 0..c {
                let row = c1 * c + c2;
                for k1 in 0..k {
                    let m1 = self.m_prime.get(c1, k1);
                    for k2 in 0..k {
                        a.set(row, k1 * k + k2, m1 * self.m_prime.get(c2, k2));
                    }
                }
            }
        }
        a
    }

    /// The `i`-th eigenvalue-1 eigenvector of `A^T A` (`i < c^2`): the
    /// flattened outer product of two kept rows of `M'`, which is exactly
    /// row `i` of `A`. Orthonormal by construction.
    pub fn row_basis_vector(&self, i: usize) -> Vec<f64> {
        assert!(i < self.c * self.c);
        let (c1, c2) = (i / self.c, i % self.c);
        outer_flat(self.m_prime.row(c1), self.m_prime.row(c2))
    }

    /// The `i`-th vector (`i < k^2 - c^2`) of an orthonormal basis of the
    /// kernel of `A`: outer products of full-DCT rows where at least one
    /// factor row falls outside the kept range.
    pub fn kernel_basis_vector(&self, i: usize) -> Vec<f64> {
        assert!(i < self.k * self.k - self.c * self.c);
        let kept = self.a..=self.b;
        let mut seen = 0;
        for r1 in 0..self.k {
            for r2 in 0..self.k {
                if kept.contains(&r1) && kept.contains(&r2) {
                    continue;
                }
                if seen == i {
                    return outer_flat(self.m.row(r1), self.m.row(r2));
                }
                seen += 1;
            }
        }
        unreachable!()
    }

    /// `max |M M^T - I|`.
    pub fn m_orthogonality_residual(&self) -> f64 {
        self.m.mul_transpose(&self.m).max_identity_residual()
    }

    /// `max |M' M'^T - I_c|`.
    pub fn m_prime_orthogonality_residual(&self) -> f64 {
        self.m_prime
            .mul_transpose(&self.m_prime)
            .max_identity_residual()
    }

    /// `max |A A^T - I_{c^2}|`, computed from the materialized `A`.
    pub fn a_orthogonality_residual(&self) -> f64 {
        let a = self.materialize_a();
        a.mul_transpose(&a).max_identity_residual()
    }
}

fn outer_flat(u: &[f64], v: &[f64]) -> Vec<f64> {
    let mut out = Vec::with_capacity(u.len() * v.len());
    for &a in u {
        for &b in v {
            out.push(a * b);
        }
    }
    out
}
