//! Dense row-major matrices, a one-sided Jacobi SVD and the reshape helpers
//! used by the Kronecker machinery.
//!
//! Everything here is a pure function of its inputs. The SVD follows a fixed
//! sweep order and a fixed sign convention so that identical inputs always
//! produce bit-identical factors.

use std::fmt;
use std::ops::{Index, IndexMut};

use crate::error::{BwlaError, Result};

/// Accuracy contract shared by the decompositions in this module.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Tolerances {
    /// Reconstruction bound, relative to `max(S[0], 1)`.
    pub svd_reconstruction: f64,
    /// Entrywise bound on `UᵀU − I` and `Vt·Vtᵀ − I`.
    pub orthonormality: f64,
    /// Jacobi pairs are rotated while `|aᵢ·aⱼ| > jacobi_threshold·‖aᵢ‖‖aⱼ‖`.
    pub jacobi_threshold: f64,
    pub max_sweeps: usize,
}

impl Default for Tolerances {
    fn default() -> Self {
        Tolerances {
            svd_reconstruction: 1e-9,
            orthonormality: 1e-10,
            jacobi_threshold: 1e-15,
            max_sweeps: 80,
        }
    }
}

/// Dense real matrix stored row-major.
#[derive(Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl fmt::Debug for Matrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "Matrix {}x{} [", self.rows, self.cols)?;
        for i in 0..self.rows.min(8) {
            let row = self.row(i);
            let shown: Vec<String> = row.iter().take(8).map(|v| format!("{v:10.5}")).collect();
            let ellipsis = if self.cols > 8 { " ..." } else { "" };
            writeln!(f, "  {}{}", shown.join(" "), ellipsis)?;
        }
        if self.rows > 8 {
            writeln!(f, "  ...")?;
        }
        write!(f, "]")
    }
}

impl Matrix {
    /// Builds a matrix from row-major data, rejecting wrong lengths and
    /// non-finite entries.
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(BwlaError::shape(
                "Matrix::new",
                format!("{} values ({rows}x{cols})", rows * cols),
                data.len(),
            ));
        }
        if let Some(index) = data.iter().position(|v| !v.is_finite()) {
            return Err(BwlaError::NonFinite {
                context: "Matrix::new",
                index,
            });
        }
        Ok(Matrix { rows, cols, data })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Matrix::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = 1.0;
        }
        m
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                data.push(f(i, j));
            }
        }
        Matrix { rows, cols, data }
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        if let Some(bad) = rows.iter().find(|r| r.len() != cols) {
            return Err(BwlaError::shape("Matrix::from_rows", cols, bad.len()));
        }
        Matrix::new(rows.len(), cols, rows.concat())
    }

    pub fn diag(values: &[f64]) -> Self {
        let mut m = Matrix::zeros(values.len(), values.len());
        for (i, &v) in values.iter().enumerate() {
            m[(i, i)] = v;
        }
        m
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn row_iter(&self) -> impl ExactSizeIterator<Item = &[f64]> + '_ {
        // chunks_exact on an empty row length would panic
        (0..self.rows).map(move |i| self.row(i))
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        (0..self.rows).map(|i| self[(i, j)]).collect()
    }

    pub fn transpose(&self) -> Matrix {
        Matrix::from_fn(self.cols, self.rows, |i, j| self[(j, i)])
    }

    pub fn matmul(&self, other: &Matrix) -> Result<Matrix> {
        if self.cols != other.rows {
            return Err(BwlaError::shape(
                "matmul",
                format!("inner dim {}", self.cols),
                other.rows,
            ));
        }
        let mut out = Matrix::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            let out_row = &mut out.data[i * other.cols..(i + 1) * other.cols];
            for (k, &a) in self.row(i).iter().enumerate() {
                if a == 0.0 {
                    continue;
                }
                for (o, &b) in out_row.iter_mut().zip(other.row(k)) {
                    *o += a * b;
                }
            }
        }
        Ok(out)
    }

    /// `self · x` for a column vector `x`.
    pub fn matvec(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.cols {
            return Err(BwlaError::shape("matvec", self.cols, x.len()));
        }
        Ok(self.row_iter().map(|r| dot(r, x)).collect())
    }

    pub fn add(&self, other: &Matrix) -> Result<Matrix> {
        self.zip_with(other, "add", |a, b| a + b)
    }

    pub fn sub(&self, other: &Matrix) -> Result<Matrix> {
        self.zip_with(other, "sub", |a, b| a - b)
    }

    fn zip_with(
        &self,
        other: &Matrix,
        context: &'static str,
        f: impl Fn(f64, f64) -> f64,
    ) -> Result<Matrix> {
        if self.shape() != other.shape() {
            return Err(BwlaError::shape(
                context,
                format!("{:?}", self.shape()),
                format!("{:?}", other.shape()),
            ));
        }
        let data = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(&a, &b)| f(a, b))
            .collect();
        Ok(Matrix {
            rows: self.rows,
            cols: self.cols,
            data,
        })
    }

    pub fn scale(&self, alpha: f64) -> Matrix {
        Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|v| v * alpha).collect(),
        }
    }

    pub fn frobenius_norm(&self) -> f64 {
        norm2(&self.data)
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// Largest entrywise absolute difference.
    pub fn max_abs_diff(&self, other: &Matrix) -> f64 {
        assert_eq!(self.shape(), other.shape());
        self.data
            .iter()
            .zip(&other.data)
            .fold(0.0, |m, (a, b)| m.max((a - b).abs()))
    }

    /// `‖selfᵀ·self − I‖_max`, the orthogonality drift of a square factor.
    pub fn orthogonality_drift(&self) -> f64 {
        let gram = self.transpose().matmul(self).expect("square gram");
        gram.max_abs_diff(&Matrix::identity(self.cols))
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

impl Index<(usize, usize)> for Matrix {
    type Output = f64;

    #[inline]
    fn index(&self, (i, j): (usize, usize)) -> &f64 {
        debug_assert!(i < self.rows && j < self.cols);
        &self.data[i * self.cols + j]
    }
}

impl IndexMut<(usize, usize)> for Matrix {
    #[inline]
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut f64 {
        debug_assert!(i < self.rows && j < self.cols);
        &mut self.data[i * self.cols + j]
    }
}

#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[inline]
pub fn norm2(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// Thin SVD `A = U·diag(S)·Vt` with `p = min(rows, cols)` singular triplets.
#[derive(Debug, Clone, PartialEq)]
pub struct SvdResult {
    /// `rows × p`, orthonormal columns.
    pub u: Matrix,
    /// Descending, nonnegative.
    pub s: Vec<f64>,
    /// `p × cols`, orthonormal rows.
    pub vt: Matrix,
}

impl SvdResult {
    pub fn reconstruct(&self) -> Matrix {
        let mut us = self.u.clone();
        for i in 0..us.rows() {
            for (v, s) in us.row_mut(i).iter_mut().zip(&self.s) {
                *v *= s;
            }
        }
        us.matmul(&self.vt).expect("svd factor shapes agree")
    }

    /// Keeps the leading `k` triplets.
    pub fn truncate(&self, k: usize) -> SvdResult {
        let k = k.min(self.s.len());
        SvdResult {
            u: Matrix::from_fn(self.u.rows(), k, |i, j| self.u[(i, j)]),
            s: self.s[..k].to_vec(),
            vt: Matrix::from_fn(k, self.vt.cols(), |i, j| self.vt[(i, j)]),
        }
    }
}

/// Full thin SVD by one-sided (Hestenes) Jacobi.
pub fn svd(a: &Matrix) -> Result<SvdResult> {
    svd_with(a, &Tolerances::default())
}

pub fn svd_with(a: &Matrix, tol: &Tolerances) -> Result<SvdResult> {
    if a.rows() == 0 || a.cols() == 0 {
        return Err(BwlaError::InvalidArgument(format!(
            "svd of empty {}x{} matrix",
            a.rows(),
            a.cols()
        )));
    }
    if let Some(index) = a.data().iter().position(|v| !v.is_finite()) {
        return Err(BwlaError::NonFinite {
            context: "svd",
            index,
        });
    }
    if a.rows() >= a.cols() {
        let (u, s, v) = jacobi_tall(a, tol)?;
        Ok(finish(u, s, v))
    } else {
        // A = (Aᵀ)ᵀ = V·S·Uᵀ
        let (u, s, v) = jacobi_tall(&a.transpose(), tol)?;
        Ok(finish(v, s, u))
    }
}

/// Leading `k` singular triplets, the best rank-`k` Frobenius approximation.
pub fn truncated_svd(a: &Matrix, k: usize) -> Result<SvdResult> {
    let p = a.rows().min(a.cols());
    if k == 0 || k > p {
        return Err(BwlaError::InvalidArgument(format!(
            "truncation rank {k} outside 1..={p}"
        )));
    }
    Ok(svd(a)?.truncate(k))
}

/// Column-major working storage: `cols[j]` is the j-th column.
type Columns = Vec<Vec<f64>>;

/// Orthogonalizes the columns of a tall matrix. Returns (left vectors as
/// columns, singular values, right vectors as columns), unsorted.
fn jacobi_tall(a: &Matrix, tol: &Tolerances) -> Result<(Columns, Vec<f64>, Columns)> {
    let (m, n) = a.shape();
    let mut work: Columns = (0..n).map(|j| a.column(j)).collect();
    let mut v: Columns = (0..n)
        .map(|j| {
            let mut e = vec![0.0; n];
            e[j] = 1.0;
            e
        })
        .collect();

    // columns at rounding level never become relatively orthogonal; they are
    // left alone and replaced by basis completion below
    let tiny = 1e-15 * a.frobenius_norm();
    let tiny_sq = tiny * tiny;
    let mut converged = false;
    for _ in 0..tol.max_sweeps {
        let mut rotated = false;
        for p in 0..n {
            for q in (p + 1)..n {
                let (alpha, beta, gamma) = {
                    let (ap, aq) = (&work[p], &work[q]);
                    (dot(ap, ap), dot(aq, aq), dot(ap, aq))
                };
                if gamma == 0.0
                    || alpha.min(beta) <= tiny_sq
                    || gamma.abs() <= tol.jacobi_threshold * (alpha * beta).sqrt()
                {
                    continue;
                }
                rotated = true;
                let zeta = (beta - alpha) / (2.0 * gamma);
                let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                rotate_pair(&mut work, p, q, c, s);
                rotate_pair(&mut v, p, q, c, s);
            }
        }
        if !rotated {
            converged = true;
            break;
        }
    }
    if !converged {
        return Err(BwlaError::SvdNoConvergence {
            sweeps: tol.max_sweeps,
        });
    }

    let sigma: Vec<f64> = work.iter().map(|c| norm2(c)).collect();
    let sigma_max = sigma.iter().cloned().fold(0.0, f64::max);
    let negligible = (sigma_max * 1e-13).max(tiny);
    let mut u: Columns = Vec::with_capacity(n);
    let mut missing = Vec::new();
    for (j, col) in work.into_iter().enumerate() {
        if sigma[j] > negligible && sigma[j] > 0.0 {
            u.push(col.iter().map(|x| x / sigma[j]).collect());
        } else {
            u.push(vec![0.0; m]);
            missing.push(j);
        }
    }
    complete_orthonormal(&mut u, &missing);
    Ok((u, sigma, v))
}

fn rotate_pair(cols: &mut Columns, p: usize, q: usize, c: f64, s: f64) {
    let (left, right) = cols.split_at_mut(q);
    let (cp, cq) = (&mut left[p], &mut right[0]);
    for (x, y) in cp.iter_mut().zip(cq.iter_mut()) {
        let (xp, xq) = (*x, *y);
        *x = c * xp - s * xq;
        *y = s * xp + c * xq;
    }
}

/// Fills the listed columns with unit vectors orthogonal to every other
/// column, using Gram-Schmidt (applied twice) on standard basis vectors.
fn complete_orthonormal(u: &mut Columns, missing: &[usize]) {
    if missing.is_empty() {
        return;
    }
    let m = u[0].len();
    let mut filled: Vec<bool> = vec![true; u.len()];
    for &j in missing {
        filled[j] = false;
    }
    let mut candidate = 0usize;
    for &j in missing {
        while candidate < m {
            let mut e = vec![0.0; m];
            e[candidate] = 1.0;
            candidate += 1;
            for _ in 0..2 {
                for (k, col) in u.iter().enumerate() {
                    if filled[k] {
                        let proj = dot(col, &e);
                        for (x, c) in e.iter_mut().zip(col) {
                            *x -= proj * c;
                        }
                    }
                }
            }
            let nrm = norm2(&e);
            if nrm > 1e-6 {
                u[j] = e.iter().map(|x| x / nrm).collect();
                filled[j] = true;
                break;
            }
        }
    }
}

/// Sorts triplets descending and applies the sign convention.
fn finish(u: Columns, s: Vec<f64>, v: Columns) -> SvdResult {
    let p = s.len();
    let mut order: Vec<usize> = (0..p).collect();
    // stable sort keeps equal singular values in column order
    order.sort_by(|&a, &b| s[b].partial_cmp(&s[a]).expect("finite singular values"));

    let m = u[0].len();
    let n = v[0].len();
    let mut u_out = Matrix::zeros(m, p);
    let mut vt_out = Matrix::zeros(p, n);
    let mut s_out = Vec::with_capacity(p);
    for (dst, &src) in order.iter().enumerate() {
        let ucol = &u[src];
        let vcol = &v[src];
        let flip = ucol
            .iter()
            .find(|x| x.abs() > 1e-12)
            .is_some_and(|&x| x < 0.0);
        let sign = if flip { -1.0 } else { 1.0 };
        for i in 0..m {
            u_out[(i, dst)] = sign * ucol[i];
        }
        for j in 0..n {
            vt_out[(dst, j)] = sign * vcol[j];
        }
        s_out.push(s[src]);
    }
    SvdResult {
        u: u_out,
        s: s_out,
        vt: vt_out,
    }
}

/// Polar factor `U·Vᵀ` of a square matrix: the orthogonal matrix maximizing
/// `tr(Qᵀ·C)`.
pub fn polar_orthogonal(c: &Matrix) -> Result<Matrix> {
    if c.rows() != c.cols() {
        return Err(BwlaError::shape(
            "polar_orthogonal",
            "square matrix",
            format!("{}x{}", c.rows(), c.cols()),
        ));
    }
    let d = svd(c)?;
    d.u.matmul(&d.vt)
}

/// Row-major reshape of a length `n1·n2` vector: entry `j` lands at
/// `(j / n2, j % n2)`.
pub fn reshape_row_to_mat(v: &[f64], n1: usize, n2: usize) -> Result<Matrix> {
    if v.len() != n1 * n2 {
        return Err(BwlaError::shape(
            "reshape_row_to_mat",
            format!("{} ({n1}x{n2})", n1 * n2),
            v.len(),
        ));
    }
    Matrix::new(n1, n2, v.to_vec())
}

/// Inverse of [`reshape_row_to_mat`].
pub fn flatten(m: &Matrix) -> Vec<f64> {
    m.data().to_vec()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha20Rng;

    fn random(rows: usize, cols: usize, seed: u64) -> Matrix {
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        Matrix::from_fn(rows, cols, |_, _| rng.random_range(-1.0..1.0))
    }

    fn check_contract(a: &Matrix, d: &SvdResult) {
        let tol = Tolerances::default();
        let err = a.sub(&d.reconstruct()).unwrap().frobenius_norm();
        assert!(err <= tol.svd_reconstruction * d.s[0].max(1.0), "recon {err}");
        assert!(d.s.windows(2).all(|w| w[0] >= w[1]));
        assert!(d.s.iter().all(|&s| s >= 0.0));
        let p = d.s.len();
        let utu = d.u.transpose().matmul(&d.u).unwrap();
        assert!(utu.max_abs_diff(&Matrix::identity(p)) < tol.orthonormality);
        let vvt = d.vt.matmul(&d.vt.transpose()).unwrap();
        assert!(vvt.max_abs_diff(&Matrix::identity(p)) < tol.orthonormality);
    }

    #[test]
    fn identity_svd() {
        let d = svd(&Matrix::identity(3)).unwrap();
        assert_eq!(d.s, vec![1.0, 1.0, 1.0]);
        assert_eq!(d.u, Matrix::identity(3));
        assert_eq!(d.vt, Matrix::identity(3));
    }

    #[test]
    fn diagonal_singular_values() {
        let d = svd(&Matrix::diag(&[3.0, 2.0])).unwrap();
        assert_eq!(d.s, vec![3.0, 2.0]);
        let d = svd(&Matrix::diag(&[2.0, -3.0])).unwrap();
        assert_eq!(d.s, vec![3.0, 2.0]);
    }

    #[test]
    fn random_reconstruction_tall_and_wide() {
        for (r, c, seed) in [(5, 4, 1), (4, 5, 2), (8, 6, 3), (1, 7, 4), (7, 1, 5), (30, 30, 6)] {
            let a = random(r, c, seed);
            check_contract(&a, &svd(&a).unwrap());
        }
    }

    #[test]
    fn rank_one_outer_products_converge() {
        for (n, m) in [(48, 36), (7, 30), (30, 7), (13, 13)] {
            let a = Matrix::from_fn(n, m, |i, j| {
                let u = if (i * 5 + 1) % 3 == 0 { 1.0 } else { -1.0 };
                0.3 * u * (i as f64 + 1.0) * (j as f64 * 0.71).sin()
            });
            let d = svd(&a).unwrap();
            assert!(a.sub(&d.reconstruct()).unwrap().frobenius_norm() <= 1e-9 * d.s[0]);
            let g = d.u.transpose().matmul(&d.u).unwrap();
            assert!(g.max_abs_diff(&Matrix::identity(g.rows())) < 1e-10);
        }
    }

    #[test]
    fn rank_deficient_gets_complete_basis() {
        let u = [1.0, 2.0, -1.0, 0.5];
        let v = [0.3, -0.7, 1.1];
        let a = Matrix::from_fn(4, 3, |i, j| u[i] * v[j]);
        let d = svd(&a).unwrap();
        check_contract(&a, &d);
        assert!(d.s[1] < 1e-12 && d.s[2] < 1e-12);
        check_contract(&Matrix::zeros(3, 2), &svd(&Matrix::zeros(3, 2)).unwrap());
    }

    #[test]
    fn sign_convention_and_determinism() {
        let a = random(6, 5, 9);
        let d1 = svd(&a).unwrap();
        let d2 = svd(&a).unwrap();
        assert_eq!(d1, d2);
        for j in 0..d1.s.len() {
            let first = d1.u.column(j).into_iter().find(|x| x.abs() > 1e-12).unwrap();
            assert!(first > 0.0);
        }
    }

    #[test]
    fn rejects_non_finite_and_empty() {
        let mut a = Matrix::zeros(2, 2);
        a.data_mut()[3] = f64::NAN;
        assert!(matches!(svd(&a), Err(BwlaError::NonFinite { .. })));
        assert!(svd(&Matrix::zeros(0, 3)).is_err());
        assert!(Matrix::new(2, 2, vec![1.0, f64::INFINITY, 0.0, 0.0]).is_err());
    }

    #[test]
    fn iteration_budget_is_reported() {
        let tol = Tolerances {
            max_sweeps: 1,
            ..Tolerances::default()
        };
        let err = svd_with(&random(12, 10, 3), &tol).unwrap_err();
        assert!(matches!(err, BwlaError::SvdNoConvergence { sweeps: 1 }));
    }

    #[test]
    fn truncated_examples() {
        let u = [1.0, -2.0, 0.5];
        let v = [2.0, 1.0, -1.0, 0.25];
        let a = Matrix::from_fn(3, 4, |i, j| u[i] * v[j]);
        let t = truncated_svd(&a, 1).unwrap();
        assert!(a.sub(&t.reconstruct()).unwrap().frobenius_norm() < 1e-12);

        let d = Matrix::diag(&[3.0, 2.0, 1.0]);
        let t = truncated_svd(&d, 2).unwrap();
        let err = d.sub(&t.reconstruct()).unwrap().frobenius_norm();
        assert!((err - 1.0).abs() < 1e-12);

        let a = random(8, 6, 11);
        let full = svd(&a).unwrap();
        let tail: f64 = full.s[2..].iter().map(|s| s * s).sum::<f64>().sqrt();
        let t = truncated_svd(&a, 2).unwrap();
        let err = a.sub(&t.reconstruct()).unwrap().frobenius_norm();
        assert!((err - tail).abs() < 1e-10, "{err} vs {tail}");

        assert!(truncated_svd(&a, 0).is_err());
        assert!(truncated_svd(&a, 7).is_err());
    }

    #[test]
    fn reshape_examples() {
        let m = reshape_row_to_mat(&[1.0, 2.0, 3.0, 4.0, 5.0, 6.0], 2, 3).unwrap();
        assert_eq!(m.row(0), &[1.0, 2.0, 3.0]);
        assert_eq!(m.row(1), &[4.0, 5.0, 6.0]);
        assert_eq!(reshape_row_to_mat(&[0.0; 6], 3, 2).unwrap(), Matrix::zeros(3, 2));
        assert!(reshape_row_to_mat(&[1.0; 5], 2, 3).is_err());
    }

    #[test]
    fn polar_factor_is_orthogonal() {
        let q = polar_orthogonal(&random(5, 5, 21)).unwrap();
        assert!(q.orthogonality_drift() < 1e-12);
        assert!(polar_orthogonal(&random(3, 4, 1)).is_err());
    }

    mod props {
        use super::*;
        use proptest::prelude::*;
        use rand::Rng;

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(64))]

            #[test]
            fn reshape_round_trip(n1 in 1usize..7, n2 in 1usize..7, seed in any::<u64>()) {
                let mut rng = ChaCha20Rng::seed_from_u64(seed);
                let v: Vec<f64> = (0..n1 * n2).map(|_| rng.random_range(-5.0..5.0)).collect();
                prop_assert_eq!(flatten(&reshape_row_to_mat(&v, n1, n2).unwrap()), v);
            }

            #[test]
            fn svd_contract_holds(rows in 1usize..9, cols in 1usize..9, seed in any::<u64>()) {
                let a = random(rows, cols, seed);
                check_contract(&a, &svd(&a).unwrap());
            }
        }
    }
}
