//! Small dense complex matrices and a cyclic Jacobi eigensolver for Hermitian
//! input. Sizes here stay below a few hundred, so everything is row-major
//! `Vec<Complex64>` with no blocking.

use std::ops::{Add, Mul};

use num_complex::Complex64;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct CMatrix {
    n: usize,
    data: Vec<Complex64>,
}

impl CMatrix {
    pub fn zeros(n: usize) -> Self {
        Self {
            n,
            data: vec![Complex64::new(0.0, 0.0); n * n],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n);
        for i in 0..n {
            m[(i, i)] = Complex64::new(1.0, 0.0);
        }
        m
    }

    pub fn from_rows(rows: &[Vec<Complex64>]) -> Self {
        let n = rows.len();
        let mut m = Self::zeros(n);
        for (i, row) in rows.iter().enumerate() {
            assert_eq!(row.len(), n, "matrix must be square");
            for (j, &v) in row.iter().enumerate() {
                m[(i, j)] = v;
            }
        }
        m
    }

    pub fn from_real_diagonal(diag: &[f64]) -> Self {
        let mut m = Self::zeros(diag.len());
        for (i, &d) in diag.iter().enumerate() {
            m[(i, i)] = Complex64::new(d, 0.0);
        }
        m
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn scale(&self, s: f64) -> Self {
        Self {
            n: self.n,
            data: self.data.iter().map(|v| v * s).collect(),
        }
    }

    pub fn kron(&self, other: &Self) -> Self {
        let n = self.n * other.n;
        let mut out = Self::zeros(n);
        for i in 0..self.n {
            for j in 0..self.n {
                let a = self[(i, j)];
                if a == Complex64::new(0.0, 0.0) {
                    continue;
                }
                for k in 0..other.n {
                    for l in 0..other.n {
                        out[(i * other.n + k, j * other.n + l)] = a * other[(k, l)];
                    }
                }
            }
        }
        out
    }

    pub fn adjoint(&self) -> Self {
        let mut out = Self::zeros(self.n);
        for i in 0..self.n {
            for j in 0..self.n {
                out[(j, i)] = self[(i, j)].conj();
            }
        }
        out
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.data.iter().map(|v| v.norm_sqr()).sum::<f64>().sqrt()
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().map(|v| v.norm()).fold(0.0, f64::max)
    }

    /// Largest `|A[i][j] − conj(A[j][i])|`.
    pub fn hermiticity_error(&self) -> f64 {
        let mut worst = 0.0f64;
        for i in 0..self.n {
            for j in i..self.n {
                worst = worst.max((self[(i, j)] - self[(j, i)].conj()).norm());
            }
        }
        worst
    }

    fn off_diagonal_norm(&self) -> f64 {
        let mut acc = 0.0;
        for i in 0..self.n {
            for j in 0..self.n {
                if i != j {
                    acc += self[(i, j)].norm_sqr();
                }
            }
        }
        acc.sqrt()
    }

    pub fn column(&self, j: usize) -> Vec<Complex64> {
        (0..self.n).map(|i| self[(i, j)]).collect()
    }
}

impl std::ops::Index<(usize, usize)> for CMatrix {
    type Output = Complex64;

    fn index(&self, (i, j): (usize, usize)) -> &Complex64 {
        &self.data[i * self.n + j]
    }
}

impl std::ops::IndexMut<(usize, usize)> for CMatrix {
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut Complex64 {
        &mut self.data[i * self.n + j]
    }
}

impl Add for CMatrix {
    type Output = CMatrix;

    fn add(mut self, rhs: CMatrix) -> CMatrix {
        assert_eq!(self.n, rhs.n);
        for (a, b) in self.data.iter_mut().zip(rhs.data) {
            *a += b;
        }
        self
    }
}

impl Mul for &CMatrix {
    type Output = CMatrix;

    fn mul(self, rhs: &CMatrix) -> CMatrix {
        assert_eq!(self.n, rhs.n);
        let n = self.n;
        let mut out = CMatrix::zeros(n);
        for i in 0..n {
            for k in 0..n {
                let a = self[(i, k)];
                for j in 0..n {
                    out[(i, j)] += a * rhs[(k, j)];
                }
            }
        }
        out
    }
}

/// Eigenvalues in ascending order with matching eigenvector columns.
#[derive(Debug, Clone)]
pub struct Eigen {
    pub values: Vec<f64>,
    pub vectors: CMatrix,
}

/// Sweep budget for [`jacobi_eigh`].
pub const JACOBI_MAX_SWEEPS: usize = 100;
/// Convergence target for the off-diagonal norm relative to the matrix norm.
const JACOBI_TARGET: f64 = 1e-14;
/// Residual above which the decomposition is reported as failed.
pub const JACOBI_TOLERANCE: f64 = 1e-9;

/// Cyclic Jacobi diagonalization of a Hermitian matrix.
///
/// Each pivot `(p, q)` first has its phase removed by a diagonal unitary, then
/// the resulting real 2×2 block is annihilated with an ordinary Givens
/// rotation.
pub fn jacobi_eigh(matrix: &CMatrix) -> Result<Eigen> {
    jacobi_eigh_with_budget(matrix, JACOBI_MAX_SWEEPS)
}

pub fn jacobi_eigh_with_budget(matrix: &CMatrix, max_sweeps: usize) -> Result<Eigen> {
    let n = matrix.dim();
    let mut a = matrix.clone();
    let mut v = CMatrix::identity(n);
    let norm = a.frobenius_norm();

    if norm > 0.0 {
        let mut sweeps = 0;
        while a.off_diagonal_norm() > JACOBI_TARGET * norm {
            if sweeps == max_sweeps {
                break;
            }
            sweeps += 1;
            for p in 0..n {
                for q in (p + 1)..n {
                    rotate(&mut a, &mut v, p, q);
                }
            }
        }
        let residual = a.off_diagonal_norm();
        if residual > JACOBI_TOLERANCE * norm {
            return Err(Error::NumericalFailure(format!(
                "Jacobi did not converge after {sweeps} sweeps (off-diagonal {residual:e}, norm {norm:e})"
            )));
        }
    }

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| a[(i, i)].re.total_cmp(&a[(j, j)].re));
    let values = order.iter().map(|&i| a[(i, i)].re).collect();
    let mut vectors = CMatrix::zeros(n);
    for (new_j, &old_j) in order.iter().enumerate() {
        for i in 0..n {
            vectors[(i, new_j)] = v[(i, old_j)];
        }
    }
    Ok(Eigen { values, vectors })
}

fn rotate(a: &mut CMatrix, v: &mut CMatrix, p: usize, q: usize) {
    let apq = a[(p, q)];
    let mag = apq.norm();
    if mag == 0.0 {
        return;
    }
    // R = diag(1, e^{-iφ}) · G on the (p, q) plane, A ← R† A R.
    let phase = apq / mag;
    let app = a[(p, p)].re;
    let aqq = a[(q, q)].re;
    let theta = (aqq - app) / (2.0 * mag);
    let t = if theta.is_infinite() {
        0.0
    } else {
        theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt())
    };
    let c = 1.0 / (t * t + 1.0).sqrt();
    let s = t * c;
    // Columns p and q of R.
    let r_pp = Complex64::new(c, 0.0);
    let r_qp = -phase.conj() * s;
    let r_pq = Complex64::new(s, 0.0);
    let r_qq = phase.conj() * c;

    let n = a.dim();
    for k in 0..n {
        let akp = a[(k, p)];
        let akq = a[(k, q)];
        a[(k, p)] = akp * r_pp + akq * r_qp;
        a[(k, q)] = akp * r_pq + akq * r_qq;
    }
    for k in 0..n {
        let apk = a[(p, k)];
        let aqk = a[(q, k)];
        a[(p, k)] = r_pp.conj() * apk + r_qp.conj() * aqk;
        a[(q, k)] = r_pq.conj() * apk + r_qq.conj() * aqk;
    }
    a[(p, q)] = Complex64::new(0.0, 0.0);
    a[(q, p)] = Complex64::new(0.0, 0.0);
    a[(p, p)].im = 0.0;
    a[(q, q)].im = 0.0;
    for k in 0..n {
        let vkp = v[(k, p)];
        let vkq = v[(k, q)];
        v[(k, p)] = vkp * r_pp + vkq * r_qp;
        v[(k, q)] = vkp * r_pq + vkq * r_qq;
    }
}
