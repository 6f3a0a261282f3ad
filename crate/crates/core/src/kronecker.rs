//! Kronecker-structured orthogonal rotations `R = R1 ⊗ R2`.
//!
//! A length-`m` row `v` is reshaped row-major into an `n1 × n2` matrix `V`
//! (entry `j` at `(j / n2, j % n2)`). With that layout
//! `v·(R1 ⊗ R2) = vec(R1ᵀ·V·R2)`, so a rotation costs
//! `n1·n2·(n1 + n2)` multiply-adds instead of `m²`.

use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{BwlaError, Result};
use crate::numerics::{svd, Matrix};

/// Largest tolerated `‖RᵢᵀRᵢ − I‖_max` for a factor.
pub const ORTHOGONALITY_TOL: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct KroneckerDims {
    pub n1: usize,
    pub n2: usize,
}

impl KroneckerDims {
    pub fn new(n1: usize, n2: usize) -> Result<Self> {
        if n2 == 0 || n1 < n2 {
            return Err(BwlaError::InvalidArgument(format!(
                "Kronecker dims must satisfy n1 >= n2 >= 1, got ({n1}, {n2})"
            )));
        }
        Ok(KroneckerDims { n1, n2 })
    }

    #[inline]
    pub fn m(&self) -> usize {
        self.n1 * self.n2
    }
}

/// Splits `m` into `(n1, n2)` with `n2` the largest divisor not above
/// `floor(√m)`. Primes degrade to `(m, 1)`.
pub fn factor_dims(m: usize) -> KroneckerDims {
    assert!(m >= 1, "factor_dims needs m >= 1");
    let mut a = m.isqrt();
    while a > 1 && !m.is_multiple_of(a) {
        a -= 1;
    }
    KroneckerDims { n1: m / a, n2: a }
}

/// Multiply-add counter for the factored kernels.
#[derive(Debug, Default, Clone, Copy, PartialEq, Eq)]
pub struct FlopCounter {
    pub fma: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct KroneckerRotation {
    dims: KroneckerDims,
    r1: Matrix,
    r2: Matrix,
}

impl KroneckerRotation {
    pub fn identity(dims: KroneckerDims) -> Self {
        KroneckerRotation {
            dims,
            r1: Matrix::identity(dims.n1),
            r2: Matrix::identity(dims.n2),
        }
    }

    /// Haar-distributed factors (QR of Gaussian matrices with the sign fix).
    pub fn random<R: Rng + ?Sized>(dims: KroneckerDims, rng: &mut R) -> Self {
        KroneckerRotation {
            dims,
            r1: random_orthogonal(dims.n1, rng),
            r2: random_orthogonal(dims.n2, rng),
        }
    }

    /// Validates shapes and orthogonality of both factors.
    pub fn new(r1: Matrix, r2: Matrix) -> Result<Self> {
        for (name, f) in [("R1", &r1), ("R2", &r2)] {
            if f.rows() != f.cols() || f.rows() == 0 {
                return Err(BwlaError::shape(
                    "KroneckerRotation::new",
                    format!("square {name}"),
                    format!("{}x{}", f.rows(), f.cols()),
                ));
            }
            let drift = f.orthogonality_drift();
            if drift > ORTHOGONALITY_TOL {
                return Err(BwlaError::InvalidArgument(format!(
                    "{name} is not orthogonal (drift {drift:e})"
                )));
            }
        }
        let dims = KroneckerDims::new(r1.rows(), r2.rows())?;
        Ok(KroneckerRotation { dims, r1, r2 })
    }

    /// Skips the orthogonality check; used for factors read back from f32
    /// storage, whose drift is at single-precision level.
    pub fn from_factors_unchecked(r1: Matrix, r2: Matrix) -> Result<Self> {
        if r1.rows() != r1.cols() || r2.rows() != r2.cols() {
            return Err(BwlaError::shape("KroneckerRotation", "square factors", "non-square"));
        }
        let dims = KroneckerDims::new(r1.rows(), r2.rows())?;
        Ok(KroneckerRotation { dims, r1, r2 })
    }

    pub fn dims(&self) -> KroneckerDims {
        self.dims
    }

    pub fn m(&self) -> usize {
        self.dims.m()
    }

    pub fn r1(&self) -> &Matrix {
        &self.r1
    }

    pub fn r2(&self) -> &Matrix {
        &self.r2
    }

    pub fn with_r1(&self, r1: Matrix) -> Self {
        assert_eq!(r1.shape(), self.r1.shape());
        KroneckerRotation {
            r1,
            ..self.clone()
        }
    }

    pub fn with_r2(&self, r2: Matrix) -> Self {
        assert_eq!(r2.shape(), self.r2.shape());
        KroneckerRotation {
            r2,
            ..self.clone()
        }
    }

    pub fn is_identity(&self) -> bool {
        self.r1 == Matrix::identity(self.dims.n1) && self.r2 == Matrix::identity(self.dims.n2)
    }

    /// Worst factor drift `‖RᵢᵀRᵢ − I‖_max`.
    pub fn orthogonality_drift(&self) -> f64 {
        self.r1
            .orthogonality_drift()
            .max(self.r2.orthogonality_drift())
    }

    fn check_len(&self, len: usize, context: &'static str) -> Result<()> {
        if len != self.m() {
            return Err(BwlaError::shape(context, self.m(), len));
        }
        Ok(())
    }

    /// Row vector times rotation: `v·R`.
    pub fn apply_to_row(&self, v: &[f64]) -> Result<Vec<f64>> {
        self.check_len(v.len(), "apply_to_row")?;
        let mut out = vec![0.0; v.len()];
        let mut scratch = vec![0.0; v.len()];
        self.rotate_into(v, &mut out, &mut scratch, false, &mut FlopCounter::default());
        Ok(out)
    }

    /// [`Self::apply_to_row`] while counting the multiply-adds performed.
    pub fn apply_to_row_counted(&self, v: &[f64], flops: &mut FlopCounter) -> Result<Vec<f64>> {
        self.check_len(v.len(), "apply_to_row")?;
        let mut out = vec![0.0; v.len()];
        let mut scratch = vec![0.0; v.len()];
        self.rotate_into(v, &mut out, &mut scratch, false, flops);
        Ok(out)
    }

    /// Column vector `Rᵀ·x`, the activation-side transform. Numerically the
    /// same map as [`Self::apply_to_row`] since `Rᵀx = (xᵀR)ᵀ`.
    pub fn apply_transpose_to_vec(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check_len(x.len(), "apply_transpose_to_vec")?;
        self.apply_to_row(x)
    }

    /// Column vector `R·x` (equivalently the row map `v ↦ v·Rᵀ`).
    pub fn apply_to_vec(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check_len(x.len(), "apply_to_vec")?;
        let mut out = vec![0.0; x.len()];
        let mut scratch = vec![0.0; x.len()];
        self.rotate_into(x, &mut out, &mut scratch, true, &mut FlopCounter::default());
        Ok(out)
    }

    /// Every row of `w` times `R`.
    pub fn apply_to_rows(&self, w: &Matrix) -> Result<Matrix> {
        self.map_rows(w, false)
    }

    /// Every row of `g` times `Rᵀ`.
    pub fn apply_inverse_to_rows(&self, g: &Matrix) -> Result<Matrix> {
        self.map_rows(g, true)
    }

    fn map_rows(&self, w: &Matrix, inverse: bool) -> Result<Matrix> {
        self.check_len(w.cols(), "rotate rows")?;
        let mut out = Matrix::zeros(w.rows(), w.cols());
        let mut scratch = vec![0.0; w.cols()];
        let mut flops = FlopCounter::default();
        for i in 0..w.rows() {
            self.rotate_into(w.row(i), out.row_mut(i), &mut scratch, inverse, &mut flops);
        }
        Ok(out)
    }

    /// Forward: `out = R1ᵀ·V·R2`. Inverse: `out = R1·V·R2ᵀ`.
    fn rotate_into(
        &self,
        v: &[f64],
        out: &mut [f64],
        scratch: &mut [f64],
        inverse: bool,
        flops: &mut FlopCounter,
    ) {
        let KroneckerDims { n1, n2 } = self.dims;
        let (r1, r2) = (self.r1.data(), self.r2.data());

        // scratch = V·R2 (or V·R2ᵀ), one row of V at a time
        for a in 0..n1 {
            let vrow = &v[a * n2..(a + 1) * n2];
            let srow = &mut scratch[a * n2..(a + 1) * n2];
            srow.fill(0.0);
            for (k, &vk) in vrow.iter().enumerate() {
                if inverse {
                    // (V R2ᵀ)[a, b] = Σ_k V[a,k]·R2[b,k]
                    for (b, s) in srow.iter_mut().enumerate() {
                        *s += vk * r2[b * n2 + k];
                    }
                } else {
                    let r2row = &r2[k * n2..(k + 1) * n2];
                    for (s, &r) in srow.iter_mut().zip(r2row) {
                        *s += vk * r;
                    }
                }
            }
        }
        flops.fma += (n1 * n2 * n2) as u64;

        // out = R1ᵀ·scratch (or R1·scratch)
        out.fill(0.0);
        for a2 in 0..n1 {
            let srow = &scratch[a2 * n2..(a2 + 1) * n2];
            for a in 0..n1 {
                // forward: out[a] += R1[a2, a]·scratch[a2]; inverse: R1[a, a2]
                let coef = if inverse {
                    r1[a * n1 + a2]
                } else {
                    r1[a2 * n1 + a]
                };
                if coef == 0.0 {
                    continue;
                }
                let orow = &mut out[a * n2..(a + 1) * n2];
                for (o, &s) in orow.iter_mut().zip(srow) {
                    *o += coef * s;
                }
            }
        }
        flops.fma += (n1 * n1 * n2) as u64;
    }

    /// Replaces each factor by the polar factor `U·Vᵀ` of its own SVD.
    pub fn reorthogonalize(&self) -> Result<Self> {
        Ok(KroneckerRotation {
            dims: self.dims,
            r1: reorthogonalize_factor(&self.r1)?,
            r2: reorthogonalize_factor(&self.r2)?,
        })
    }

    /// Multiply-adds of one factored application, `n1·n2·(n1 + n2)`.
    pub fn apply_flops(&self) -> u64 {
        let KroneckerDims { n1, n2 } = self.dims;
        (n1 * n2 * (n1 + n2)) as u64
    }

    /// Stored parameters of both factors.
    pub fn param_count(&self) -> usize {
        self.dims.n1 * self.dims.n1 + self.dims.n2 * self.dims.n2
    }
}

fn reorthogonalize_factor(f: &Matrix) -> Result<Matrix> {
    let d = svd(f)?;
    let smallest = *d.s.last().expect("nonempty factor");
    if smallest <= 1e-12 * d.s[0].max(f64::MIN_POSITIVE) || smallest == 0.0 {
        return Err(BwlaError::SingularFactor { smallest });
    }
    d.u.matmul(&d.vt)
}

/// Haar-random orthogonal matrix: QR of a Gaussian matrix, columns signed so
/// that `diag(R)` is positive.
pub fn random_orthogonal<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Matrix {
    let g: Vec<Vec<f64>> = (0..n)
        .map(|_| (0..n).map(|_| rng.sample(StandardNormal)).collect())
        .collect();
    // modified Gram-Schmidt on columns, twice for stability
    let mut q: Vec<Vec<f64>> = Vec::with_capacity(n);
    for col in g {
        let mut v = col;
        for _ in 0..2 {
            for b in &q {
                let p: f64 = v.iter().zip(b).map(|(x, y)| x * y).sum();
                for (x, y) in v.iter_mut().zip(b) {
                    *x -= p * y;
                }
            }
        }
        let nrm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        q.push(v.into_iter().map(|x| x / nrm).collect());
    }
    Matrix::from_fn(n, n, |i, j| q[j][i])
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha20Rng;

    fn rng(seed: u64) -> ChaCha20Rng {
        ChaCha20Rng::seed_from_u64(seed)
    }

    fn random_vec(m: usize, r: &mut ChaCha20Rng) -> Vec<f64> {
        (0..m).map(|_| r.random_range(-1.0..1.0)).collect()
    }

    #[test]
    fn factor_dims_examples() {
        assert_eq!(factor_dims(4096), KroneckerDims { n1: 64, n2: 64 });
        assert_eq!(factor_dims(12), KroneckerDims { n1: 4, n2: 3 });
        assert_eq!(factor_dims(7), KroneckerDims { n1: 7, n2: 1 });
        assert_eq!(factor_dims(1), KroneckerDims { n1: 1, n2: 1 });
        assert_eq!(factor_dims(144), KroneckerDims { n1: 12, n2: 12 });
        assert_eq!(factor_dims(72), KroneckerDims { n1: 9, n2: 8 });
    }

    #[test]
    fn identity_rotation_is_noop() {
        let rot = KroneckerRotation::identity(factor_dims(6));
        let v = vec![1.0, -2.0, 3.0, 0.5, 0.0, 7.0];
        assert_eq!(rot.apply_to_row(&v).unwrap(), v);
        assert_eq!(rot.apply_transpose_to_vec(&v).unwrap(), v);
        assert_eq!(rot.apply_to_vec(&v).unwrap(), v);
    }

    #[test]
    fn norm_preserved_and_round_trip() {
        let mut r = rng(3);
        let rot = KroneckerRotation::random(factor_dims(12), &mut r);
        let x = random_vec(12, &mut r);
        let y = rot.apply_to_row(&x).unwrap();
        let nx: f64 = x.iter().map(|v| v * v).sum::<f64>().sqrt();
        let ny: f64 = y.iter().map(|v| v * v).sum::<f64>().sqrt();
        assert!((ny / nx - 1.0).abs() < 1e-12);
        let back = rot.apply_transpose_to_vec(&rot.apply_to_vec(&x).unwrap()).unwrap();
        for (a, b) in back.iter().zip(&x) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn inner_products_preserved() {
        let mut r = rng(5);
        let rot = KroneckerRotation::random(factor_dims(16), &mut r);
        let w = random_vec(16, &mut r);
        let x = random_vec(16, &mut r);
        let lhs: f64 = rot
            .apply_to_row(&w)
            .unwrap()
            .iter()
            .zip(rot.apply_transpose_to_vec(&x).unwrap())
            .map(|(a, b)| a * b)
            .sum();
        let rhs: f64 = w.iter().zip(&x).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() <= 1e-12 * rhs.abs().max(1.0));
    }

    #[test]
    fn dimension_mismatch_rejected() {
        let rot = KroneckerRotation::identity(factor_dims(6));
        assert!(rot.apply_to_row(&[1.0; 5]).is_err());
        assert!(rot.apply_transpose_to_vec(&[1.0; 7]).is_err());
        assert!(rot.apply_to_rows(&Matrix::zeros(2, 4)).is_err());
    }

    #[test]
    fn constructor_validates() {
        assert!(KroneckerRotation::new(Matrix::identity(3), Matrix::identity(2)).is_ok());
        assert!(KroneckerRotation::new(Matrix::identity(2), Matrix::identity(3)).is_err());
        assert!(KroneckerRotation::new(Matrix::diag(&[1.0, 2.0]), Matrix::identity(1)).is_err());
    }

    #[test]
    fn reorthogonalize_examples() {
        let rot = KroneckerRotation::identity(factor_dims(6));
        assert_eq!(rot.reorthogonalize().unwrap(), rot);

        let mut r = rng(8);
        let rot = KroneckerRotation::random(factor_dims(12), &mut r);
        let again = rot.reorthogonalize().unwrap();
        assert!(again.r1().max_abs_diff(rot.r1()) < 1e-12);
        assert!(again.r2().max_abs_diff(rot.r2()) < 1e-12);

        let mut bumped = rot.r1().clone();
        for v in bumped.data_mut() {
            *v += r.random_range(-1e-6..1e-6);
        }
        let fixed = KroneckerRotation::from_factors_unchecked(bumped, rot.r2().clone())
            .unwrap()
            .reorthogonalize()
            .unwrap();
        assert!(fixed.orthogonality_drift() < 1e-12);

        let singular =
            KroneckerRotation::from_factors_unchecked(Matrix::diag(&[1.0, 0.0]), Matrix::identity(1))
                .unwrap();
        assert!(matches!(
            singular.reorthogonalize(),
            Err(BwlaError::SingularFactor { .. })
        ));
    }

    #[test]
    fn flop_count_matches_formula() {
        let rot = KroneckerRotation::identity(factor_dims(1024));
        let mut flops = FlopCounter::default();
        rot.apply_to_row_counted(&vec![1.0; 1024], &mut flops).unwrap();
        assert_eq!(flops.fma, rot.apply_flops());
        assert_eq!(flops.fma, 32 * 32 * 64);
    }

    #[test]
    fn random_orthogonal_is_orthogonal() {
        let q = random_orthogonal(9, &mut rng(1));
        assert!(q.orthogonality_drift() < 1e-13);
    }
}
