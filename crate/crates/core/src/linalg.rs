//! Dense complex matrices at desk scale.
//!
//! Everything in this library lives on Hilbert spaces of dimension at most a
//! few dozen (a qubit or qutrit tensored with a handful of two-level probes),
//! so a flat row-major `Vec<Complex64>` with straightforward O(n^3) kernels is
//! both fast enough and dependency-free. The Hermitian eigensolver is a cyclic
//! Jacobi iteration with complex rotations, which is accurate to machine
//! precision at these sizes.

use crate::error::{Error, Result};
use num_complex::Complex64;
use std::ops::{Add, Mul, Neg, Sub};

pub const C_ZERO: Complex64 = Complex64::new(0.0, 0.0);
pub const C_ONE: Complex64 = Complex64::new(1.0, 0.0);
pub const C_I: Complex64 = Complex64::new(0.0, 1.0);

/// Dense square complex matrix, row major.
#[derive(Debug, Clone, PartialEq)]
pub struct ComplexMatrix {
    dim: usize,
    data: Vec<Complex64>,
}

impl ComplexMatrix {
    pub fn zeros(dim: usize) -> Self {
        Self { dim, data: vec![C_ZERO; dim * dim] }
    }

    pub fn identity(dim: usize) -> Self {
        let mut m = Self::zeros(dim);
        for i in 0..dim {
            m[(i, i)] = C_ONE;
        }
        m
    }

    /// Build from nested rows; all rows must have length `rows.len()`.
    pub fn from_rows(rows: &[Vec<Complex64>]) -> Result<Self> {
        let dim = rows.len();
        let mut data = Vec::with_capacity(dim * dim);
        for row in rows {
            if row.len() != dim {
                return Err(Error::Shape(format!(
                    "expected square matrix, got row of length {} in a {}-row matrix",
                    row.len(),
                    dim
                )));
            }
            data.extend_from_slice(row);
        }
        Ok(Self { dim, data })
    }

    pub fn from_real_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let complex: Vec<Vec<Complex64>> = rows
            .iter()
            .map(|r| r.iter().map(|&x| Complex64::new(x, 0.0)).collect())
            .collect();
        Self::from_rows(&complex)
    }

    pub fn diag(entries: &[Complex64]) -> Self {
        let mut m = Self::zeros(entries.len());
        for (i, &e) in entries.iter().enumerate() {
            m[(i, i)] = e;
        }
        m
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn data(&self) -> &[Complex64] {
        &self.data
    }

    pub fn matmul(&self, other: &Self) -> Self {
        assert_eq!(self.dim, other.dim, "matmul dimension mismatch");
        let n = self.dim;
        let mut out = Self::zeros(n);
        for i in 0..n {
            for k in 0..n {
                let a = self.data[i * n + k];
                if a == C_ZERO {
                    continue;
                }
                for j in 0..n {
                    out.data[i * n + j] += a * other.data[k * n + j];
                }
            }
        }
        out
    }

    pub fn adjoint(&self) -> Self {
        let n = self.dim;
        let mut out = Self::zeros(n);
        for i in 0..n {
            for j in 0..n {
                out.data[j * n + i] = self.data[i * n + j].conj();
            }
        }
        out
    }

    pub fn scale(&self, s: Complex64) -> Self {
        Self { dim: self.dim, data: self.data.iter().map(|&x| x * s).collect() }
    }

    pub fn scale_re(&self, s: f64) -> Self {
        self.scale(Complex64::new(s, 0.0))
    }

    pub fn trace(&self) -> Complex64 {
        (0..self.dim).map(|i| self.data[i * self.dim + i]).sum()
    }

    /// Commutator [A, B] = AB - BA.
    pub fn commutator(&self, other: &Self) -> Self {
        &self.matmul(other) - &other.matmul(self)
    }

    /// Anticommutator {A, B} = AB + BA.
    pub fn anticommutator(&self, other: &Self) -> Self {
        &self.matmul(other) + &other.matmul(self)
    }

    /// Kronecker product, left factor on the slow index.
    pub fn kron(&self, other: &Self) -> Self {
        let (n, m) = (self.dim, other.dim);
        let mut out = Self::zeros(n * m);
        for i in 0..n {
            for j in 0..n {
                let a = self.data[i * n + j];
                if a == C_ZERO {
                    continue;
                }
                for k in 0..m {
                    for l in 0..m {
                        out.data[(i * m + k) * n * m + (j * m + l)] = a * other.data[k * m + l];
                    }
                }
            }
        }
        out
    }

    /// Largest entry-wise deviation from Hermiticity.
    pub fn hermiticity_error(&self) -> f64 {
        let n = self.dim;
        let mut worst: f64 = 0.0;
        for i in 0..n {
            for j in i..n {
                let d = (self.data[i * n + j] - self.data[j * n + i].conj()).norm();
                worst = worst.max(d);
            }
        }
        worst
    }

    pub fn is_hermitian(&self, tol: f64) -> bool {
        self.hermiticity_error() <= tol
    }

    /// (M + M†)/2.
    pub fn symmetrize(&self) -> Self {
        (self + &self.adjoint()).scale_re(0.5)
    }

    /// Largest entry modulus.
    pub fn max_abs(&self) -> f64 {
        self.data.iter().map(|x| x.norm()).fold(0.0, f64::max)
    }

    /// Entry-wise max-modulus distance.
    pub fn dist_max(&self, other: &Self) -> f64 {
        assert_eq!(self.dim, other.dim);
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).norm())
            .fold(0.0, f64::max)
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.data.iter().map(|x| x.norm_sqr()).sum::<f64>().sqrt()
    }

    /// Apply to a vector.
    pub fn apply(&self, v: &[Complex64]) -> Vec<Complex64> {
        assert_eq!(self.dim, v.len(), "apply dimension mismatch");
        let n = self.dim;
        let mut out = vec![C_ZERO; n];
        for i in 0..n {
            let mut acc = C_ZERO;
            for j in 0..n {
                acc += self.data[i * n + j] * v[j];
            }
            out[i] = acc;
        }
        out
    }

    /// Eigenvalues and eigenvectors of a Hermitian matrix by cyclic Jacobi.
    ///
    /// Returns eigenvalues in ascending order together with the unitary whose
    /// columns are the matching eigenvectors, so `M = V diag(w) V†`.
    pub fn eigh(&self) -> Result<(Vec<f64>, ComplexMatrix)> {
        let herm_err = self.hermiticity_error();
        let scale = self.max_abs().max(1.0);
        if herm_err > 1e-9 * scale {
            return Err(Error::NotHermitian { deviation: herm_err, tolerance: 1e-9 * scale });
        }
        let n = self.dim;
        let mut a = self.symmetrize();
        let mut v = ComplexMatrix::identity(n);

        let off = |m: &ComplexMatrix| -> f64 {
            let mut s = 0.0;
            for i in 0..n {
                for j in 0..n {
                    if i != j {
                        s += m.data[i * n + j].norm_sqr();
                    }
                }
            }
            s
        };

        let tol = 1e-30 * scale * scale * (n as f64);
        for _sweep in 0..100 {
            if off(&a) <= tol {
                break;
            }
            for p in 0..n {
                for q in (p + 1)..n {
                    let apq = a.data[p * n + q];
                    let r = apq.norm();
                    if r < 1e-300 {
                        continue;
                    }
                    let phase = apq / r;
                    let app = a.data[p * n + p].re;
                    let aqq = a.data[q * n + q].re;
                    // theta zeroes the (p,q) entry of U† A U.
                    let theta = 0.5 * (2.0 * r).atan2(aqq - app);
                    let (s, c) = theta.sin_cos();
                    let spe = Complex64::new(s, 0.0) * phase;

                    // Columns p and q of A and V: right-multiply by U.
                    for i in 0..n {
                        let aip = a.data[i * n + p];
                        let aiq = a.data[i * n + q];
                        a.data[i * n + p] = aip * c - aiq * spe.conj();
                        a.data[i * n + q] = aip * spe + aiq * c;
                        let vip = v.data[i * n + p];
                        let viq = v.data[i * n + q];
                        v.data[i * n + p] = vip * c - viq * spe.conj();
                        v.data[i * n + q] = vip * spe + viq * c;
                    }
                    // Rows p and q of A: left-multiply by U†.
                    for j in 0..n {
                        let apj = a.data[p * n + j];
                        let aqj = a.data[q * n + j];
                        a.data[p * n + j] = apj * c - aqj * spe;
                        a.data[q * n + j] = apj * spe.conj() + aqj * c;
                    }
                }
            }
        }

        // Sort ascending, permuting eigenvector columns alongside.
        let mut order: Vec<usize> = (0..n).collect();
        let vals: Vec<f64> = (0..n).map(|i| a.data[i * n + i].re).collect();
        order.sort_by(|&i, &j| vals[i].partial_cmp(&vals[j]).unwrap());
        let sorted_vals: Vec<f64> = order.iter().map(|&i| vals[i]).collect();
        let mut sorted_vecs = ComplexMatrix::zeros(n);
        for (new_col, &old_col) in order.iter().enumerate() {
            for i in 0..n {
                sorted_vecs.data[i * n + new_col] = v.data[i * n + old_col];
            }
        }
        Ok((sorted_vals, sorted_vecs))
    }

    pub fn min_eigenvalue(&self) -> Result<f64> {
        Ok(self.eigh()?.0[0])
    }

    /// V diag(f(w)) V† for a Hermitian matrix with spectrum `w`.
    pub fn hermitian_function(&self, f: impl Fn(f64) -> Complex64) -> Result<ComplexMatrix> {
        let (vals, vecs) = self.eigh()?;
        let n = self.dim;
        let mut out = ComplexMatrix::zeros(n);
        for k in 0..n {
            let fk = f(vals[k]);
            if fk == C_ZERO {
                continue;
            }
            for i in 0..n {
                let vik = vecs.data[i * n + k];
                for j in 0..n {
                    out.data[i * n + j] += fk * vik * vecs.data[j * n + k].conj();
                }
            }
        }
        Ok(out)
    }
}

impl std::ops::Index<(usize, usize)> for ComplexMatrix {
    type Output = Complex64;
    fn index(&self, (i, j): (usize, usize)) -> &Complex64 {
        &self.data[i * self.dim + j]
    }
}

impl std::ops::IndexMut<(usize, usize)> for ComplexMatrix {
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut Complex64 {
        &mut self.data[i * self.dim + j]
    }
}

impl Add for &ComplexMatrix {
    type Output = ComplexMatrix;
    fn add(self, other: &ComplexMatrix) -> ComplexMatrix {
        assert_eq!(self.dim, other.dim);
        ComplexMatrix {
            dim: self.dim,
            data: self.data.iter().zip(&other.data).map(|(a, b)| a + b).collect(),
        }
    }
}

impl Sub for &ComplexMatrix {
    type Output = ComplexMatrix;
    fn sub(self, other: &ComplexMatrix) -> ComplexMatrix {
        assert_eq!(self.dim, other.dim);
        ComplexMatrix {
            dim: self.dim,
            data: self.data.iter().zip(&other.data).map(|(a, b)| a - b).collect(),
        }
    }
}

impl Neg for &ComplexMatrix {
    type Output = ComplexMatrix;
    fn neg(self) -> ComplexMatrix {
        ComplexMatrix { dim: self.dim, data: self.data.iter().map(|x| -x).collect() }
    }
}

impl Mul for &ComplexMatrix {
    type Output = ComplexMatrix;
    fn mul(self, other: &ComplexMatrix) -> ComplexMatrix {
        self.matmul(other)
    }
}

/// Pauli matrices and friends, handy for qubit configurations.
pub mod pauli {
    use super::*;

    pub fn sigma_x() -> ComplexMatrix {
        ComplexMatrix::from_real_rows(&[vec![0.0, 1.0], vec![1.0, 0.0]]).unwrap()
    }

    pub fn sigma_y() -> ComplexMatrix {
        ComplexMatrix::from_rows(&[vec![C_ZERO, -C_I], vec![C_I, C_ZERO]]).unwrap()
    }

    pub fn sigma_z() -> ComplexMatrix {
        ComplexMatrix::from_real_rows(&[vec![1.0, 0.0], vec![0.0, -1.0]]).unwrap()
    }

    /// Lowering-type coupling |1><0|.
    pub fn lower() -> ComplexMatrix {
        ComplexMatrix::from_real_rows(&[vec![0.0, 0.0], vec![1.0, 0.0]]).unwrap()
    }
}
