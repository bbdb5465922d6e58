//! Dense small-dimension real linear algebra.
//!
//! Matrices are square and stored row-major. Every product sums in a fixed
//! index order so results are bit-reproducible across runs and thread counts.

use std::ops::{Index, IndexMut};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Iteration cap for the power iteration behind [`operator_norm`].
pub const POWER_ITER_MAX: usize = 10_000;
/// Convergence tolerance on the relative change of the Rayleigh quotient.
pub const POWER_ITER_TOL: f64 = 1e-12;
/// Relative pivot threshold below which [`invert`] reports `Singular`.
pub const PIVOT_TOL: f64 = 1e-12;

/// A real column vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Vector(pub Vec<f64>);

impl Vector {
    pub fn zeros(d: usize) -> Self {
        Vector(vec![0.0; d])
    }

    pub fn from_slice(xs: &[f64]) -> Self {
        Vector(xs.to_vec())
    }

    /// The `i`-th canonical basis vector of dimension `d`.
    pub fn basis(d: usize, i: usize) -> Self {
        let mut v = Self::zeros(d);
        v.0[i] = 1.0;
        v
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    /// Euclidean norm.
    pub fn norm(&self) -> f64 {
        norm2(&self.0)
    }

    pub fn dot(&self, other: &Vector) -> f64 {
        dot(&self.0, &other.0)
    }

    pub fn sub(&self, other: &Vector) -> Vector {
        Vector(self.0.iter().zip(&other.0).map(|(a, b)| a - b).collect())
    }

    pub fn add(&self, other: &Vector) -> Vector {
        Vector(self.0.iter().zip(&other.0).map(|(a, b)| a + b).collect())
    }

    pub fn scale(&self, c: f64) -> Vector {
        Vector(self.0.iter().map(|a| a * c).collect())
    }

    pub fn max_abs(&self) -> f64 {
        self.0.iter().fold(0.0_f64, |m, x| m.max(x.abs()))
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|x| x.is_finite())
    }
}

impl Index<usize> for Vector {
    type Output = f64;
    fn index(&self, i: usize) -> &f64 {
        &self.0[i]
    }
}

impl IndexMut<usize> for Vector {
    fn index_mut(&mut self, i: usize) -> &mut f64 {
        &mut self.0[i]
    }
}

/// A square real matrix, row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<Vec<f64>>", into = "Vec<Vec<f64>>")]
pub struct Matrix {
    dim: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(d: usize) -> Self {
        Matrix {
            dim: d,
            data: vec![0.0; d * d],
        }
    }

    pub fn identity(d: usize) -> Self {
        Self::scaled_identity(d, 1.0)
    }

    pub fn scaled_identity(d: usize, c: f64) -> Self {
        let mut m = Self::zeros(d);
        for i in 0..d {
            m[(i, i)] = c;
        }
        m
    }

    pub fn diag(entries: &[f64]) -> Self {
        let mut m = Self::zeros(entries.len());
        for (i, &e) in entries.iter().enumerate() {
            m[(i, i)] = e;
        }
        m
    }

    /// Builds a matrix from rows; fails unless the rows form a square array.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let d = rows.len();
        let mut data = Vec::with_capacity(d * d);
        for row in rows {
            if row.len() != d {
                return Err(Error::DimensionMismatch {
                    expected: d,
                    found: row.len(),
                });
            }
            data.extend_from_slice(row);
        }
        Ok(Matrix { dim: d, data })
    }

    pub fn from_row_major(d: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != d * d {
            return Err(Error::DimensionMismatch {
                expected: d * d,
                found: data.len(),
            });
        }
        Ok(Matrix { dim: d, data })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn rows(&self) -> Vec<Vec<f64>> {
        (0..self.dim).map(|i| self.row(i).to_vec()).collect()
    }

    pub fn column(&self, j: usize) -> Vector {
        Vector((0..self.dim).map(|i| self[(i, j)]).collect())
    }

    pub fn transpose(&self) -> Matrix {
        let d = self.dim;
        let mut t = Self::zeros(d);
        for i in 0..d {
            for j in 0..d {
                t[(j, i)] = self[(i, j)];
            }
        }
        t
    }

    pub fn scale(&self, c: f64) -> Matrix {
        Matrix {
            dim: self.dim,
            data: self.data.iter().map(|x| x * c).collect(),
        }
    }

    pub fn scale_in_place(&mut self, c: f64) {
        self.data.iter_mut().for_each(|x| *x *= c);
    }

    pub fn sub(&self, other: &Matrix) -> Matrix {
        Matrix {
            dim: self.dim,
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(a, b)| a - b)
                .collect(),
        }
    }

    pub fn frobenius(&self) -> f64 {
        norm2(&self.data)
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }
}

impl Index<(usize, usize)> for Matrix {
    type Output = f64;
    fn index(&self, (i, j): (usize, usize)) -> &f64 {
        &self.data[i * self.dim + j]
    }
}

impl IndexMut<(usize, usize)> for Matrix {
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut f64 {
        &mut self.data[i * self.dim + j]
    }
}

impl TryFrom<Vec<Vec<f64>>> for Matrix {
    type Error = Error;
    fn try_from(rows: Vec<Vec<f64>>) -> Result<Self> {
        Matrix::from_rows(&rows)
    }
}

impl From<Matrix> for Vec<Vec<f64>> {
    fn from(m: Matrix) -> Self {
        m.rows()
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).fold(0.0, |acc, (x, y)| acc + x * y)
}

// Scaled to avoid overflow when entries are huge.
fn norm2(xs: &[f64]) -> f64 {
    let scale = xs.iter().fold(0.0_f64, |m, x| m.max(x.abs()));
    if scale == 0.0 || !scale.is_finite() {
        return scale;
    }
    let ss = xs.iter().fold(0.0, |acc, x| {
        let y = x / scale;
        acc + y * y
    });
    scale * ss.sqrt()
}

/// `M x`.
pub fn mat_vec(m: &Matrix, x: &Vector) -> Result<Vector> {
    if m.dim != x.dim() {
        return Err(Error::DimensionMismatch {
            expected: m.dim,
            found: x.dim(),
        });
    }
    Ok(Vector(
        (0..m.dim).map(|i| dot(m.row(i), x.as_slice())).collect(),
    ))
}

/// `M x` into a caller-owned buffer. Dimensions must already agree.
pub(crate) fn mat_vec_into(m: &Matrix, x: &[f64], out: &mut [f64]) {
    for (i, o) in out.iter_mut().enumerate() {
        *o = dot(m.row(i), x);
    }
}

/// `M N`.
pub fn mat_mat(m: &Matrix, n: &Matrix) -> Result<Matrix> {
    if m.dim != n.dim {
        return Err(Error::DimensionMismatch {
            expected: m.dim,
            found: n.dim,
        });
    }
    let mut out = Matrix::zeros(m.dim);
    mat_mat_into(m, n, &mut out);
    Ok(out)
}

/// `M N` into a caller-owned matrix of the same dimension.
pub(crate) fn mat_mat_into(m: &Matrix, n: &Matrix, out: &mut Matrix) {
    let d = m.dim;
    for i in 0..d {
        for j in 0..d {
            let mut acc = 0.0;
            for k in 0..d {
                acc += m.data[i * d + k] * n.data[k * d + j];
            }
            out.data[i * d + j] = acc;
        }
    }
}

/// Spectral norm `sup_{|x|=1} |Mx|`.
///
/// Power iteration on `MᵀM` from the all-ones vector. If that start is
/// (numerically) orthogonal to the dominant eigenvector the Rayleigh quotient
/// ends below the largest column norm, which is itself a lower bound, and the
/// iteration is restarted from that column's basis vector.
pub fn operator_norm(m: &Matrix) -> f64 {
    let d = m.dim;
    if d == 1 {
        return m.data[0].abs();
    }
    let (best_col, max_col_norm) = (0..d)
        .map(|j| (j, m.column(j).norm()))
        .fold((0, 0.0_f64), |acc, c| if c.1 > acc.1 { c } else { acc });
    if max_col_norm == 0.0 {
        return 0.0;
    }
    // Work with M / max_col_norm so MᵀM stays well inside f64 range.
    let scaled = m.scale(1.0 / max_col_norm);
    let gram = mat_mat(&scaled.transpose(), &scaled).expect("square");
    let lambda = power_rayleigh(&gram, &vec![1.0; d]);
    let lambda = if lambda < 1.0 - 1e-12 {
        lambda.max(power_rayleigh(&gram, Vector::basis(d, best_col).as_slice()))
    } else {
        lambda
    };
    max_col_norm * lambda.max(0.0).sqrt()
}

// Largest eigenvalue of a symmetric PSD matrix by power iteration.
fn power_rayleigh(gram: &Matrix, start: &[f64]) -> f64 {
    let d = gram.dim;
    let mut v = start.to_vec();
    let n0 = norm2(&v);
    v.iter_mut().for_each(|x| *x /= n0);
    let mut w = vec![0.0; d];
    let mut lambda = 0.0;
    for _ in 0..POWER_ITER_MAX {
        mat_vec_into(gram, &v, &mut w);
        let next = dot(&v, &w);
        let wn = norm2(&w);
        if wn == 0.0 {
            return 0.0;
        }
        for (vi, wi) in v.iter_mut().zip(&w) {
            *vi = wi / wn;
        }
        if (next - lambda).abs() <= POWER_ITER_TOL * next.abs() {
            lambda = next;
            break;
        }
        lambda = next;
    }
    // Final quotient with the converged vector.
    mat_vec_into(gram, &v, &mut w);
    dot(&v, &w).max(lambda)
}

/// `M⁻¹` by Gaussian elimination with partial pivoting.
///
/// A pivot smaller than [`PIVOT_TOL`] times the largest absolute entry of its
/// (original) row is reported as [`Error::Singular`].
pub fn invert(m: &Matrix) -> Result<Matrix> {
    let d = m.dim;
    let mut a = m.clone();
    let mut inv = Matrix::identity(d);
    let row_scale: Vec<f64> = (0..d)
        .map(|i| m.row(i).iter().fold(0.0_f64, |s, x| s.max(x.abs())))
        .collect();
    let mut scale_of_row: Vec<f64> = row_scale.clone();
    for col in 0..d {
        let (piv, piv_abs) = (col..d)
            .map(|r| (r, a[(r, col)].abs()))
            .fold((col, -1.0), |acc, c| if c.1 > acc.1 { c } else { acc });
        let scale = scale_of_row[piv];
        if scale == 0.0 || piv_abs <= PIVOT_TOL * scale || !piv_abs.is_finite() {
            return Err(Error::Singular { pivot: piv_abs });
        }
        if piv != col {
            for j in 0..d {
                a.data.swap(col * d + j, piv * d + j);
                inv.data.swap(col * d + j, piv * d + j);
            }
            scale_of_row.swap(col, piv);
        }
        let p = a[(col, col)];
        for j in 0..d {
            a[(col, j)] /= p;
            inv[(col, j)] /= p;
        }
        for r in 0..d {
            if r == col {
                continue;
            }
            let f = a[(r, col)];
            if f == 0.0 {
                continue;
            }
            for j in 0..d {
                a[(r, j)] -= f * a[(col, j)];
                inv[(r, j)] -= f * inv[(col, j)];
            }
        }
    }
    Ok(inv)
}

/// Smallest singular value, `1/‖M⁻¹‖`; zero when `M` is singular.
pub fn min_singular_value(m: &Matrix) -> f64 {
    if m.dim == 1 {
        return m.data[0].abs();
    }
    match invert(m) {
        Ok(inv) => {
            let n = operator_norm(&inv);
            if n > 0.0 && n.is_finite() {
                1.0 / n
            } else {
                0.0
            }
        }
        Err(_) => 0.0,
    }
}

/// Lower-triangular factor `L` with `L Lᵀ = S` for a symmetric positive
/// semidefinite `S`. Columns with a pivot below `tol · max diag` are zeroed,
/// which handles rank-deficient covariances.
pub fn cholesky_psd(s: &Matrix, tol: f64) -> Result<Matrix> {
    let d = s.dim;
    let max_diag = (0..d).fold(0.0_f64, |m, i| m.max(s[(i, i)].abs()));
    for i in 0..d {
        for j in 0..i {
            let asym = (s[(i, j)] - s[(j, i)]).abs();
            if asym > tol * max_diag.max(1.0) {
                return Err(Error::InvalidModel(format!(
                    "covariance not symmetric at ({i},{j})"
                )));
            }
        }
    }
    let floor = tol * max_diag.max(f64::MIN_POSITIVE);
    let mut l = Matrix::zeros(d);
    for j in 0..d {
        let mut diag = s[(j, j)];
        for k in 0..j {
            diag -= l[(j, k)] * l[(j, k)];
        }
        if diag < -floor.max(tol) {
            return Err(Error::InvalidModel(
                "covariance is not positive semidefinite".into(),
            ));
        }
        if diag <= floor {
            // Dependent direction: the remainder of the column must vanish too.
            for i in j + 1..d {
                let mut off = s[(i, j)];
                for k in 0..j {
                    off -= l[(i, k)] * l[(j, k)];
                }
                if off.abs() > tol.sqrt() * max_diag.max(1.0) {
                    return Err(Error::InvalidModel(
                        "covariance is not positive semidefinite".into(),
                    ));
                }
            }
            continue;
        }
        let ljj = diag.sqrt();
        l[(j, j)] = ljj;
        for i in j + 1..d {
            let mut off = s[(i, j)];
            for k in 0..j {
                off -= l[(i, k)] * l[(j, k)];
            }
            l[(i, j)] = off / ljj;
        }
    }
    Ok(l)
}
