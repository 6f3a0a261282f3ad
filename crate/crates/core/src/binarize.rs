//! Per-channel sign binarization `W ≈ sign(W − μ)·δ + μ`, packed sign
//! storage and the magnitude-variance error law.

use serde::{Deserialize, Serialize};

use crate::error::{BwlaError, Result};
use crate::kronecker::KroneckerRotation;
use crate::numerics::Matrix;
use crate::psp::LowRankResidual;

/// Channel direction for the scale and offset statistics.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Axis {
    /// One `(δᵢ, μᵢ)` per output channel (matrix row).
    #[default]
    Row,
    /// One `(αⱼ, βⱼ)` per input channel (matrix column).
    Column,
}

impl Axis {
    pub fn code(self) -> u8 {
        match self {
            Axis::Row => 0,
            Axis::Column => 1,
        }
    }

    pub fn from_code(code: u8) -> Option<Axis> {
        match code {
            0 => Some(Axis::Row),
            1 => Some(Axis::Column),
            _ => None,
        }
    }
}

/// Sign bits, one padded run of `u64` words per matrix row. Bit `j % 64` of
/// word `j / 64` is set when entry `j` is `+1`; padding bits are zero.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PackedSigns {
    rows: usize,
    cols: usize,
    words_per_row: usize,
    words: Vec<u64>,
}

impl PackedSigns {
    pub fn new(rows: usize, cols: usize) -> Self {
        let words_per_row = cols.div_ceil(64);
        PackedSigns {
            rows,
            cols,
            words_per_row,
            words: vec![0; rows * words_per_row],
        }
    }

    /// Packs `true` as `+1`.
    pub fn from_bools(rows: usize, cols: usize, plus: &[bool]) -> Self {
        assert_eq!(plus.len(), rows * cols);
        let mut p = PackedSigns::new(rows, cols);
        for i in 0..rows {
            for j in 0..cols {
                if plus[i * cols + j] {
                    p.set(i, j, true);
                }
            }
        }
        p
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn words_per_row(&self) -> usize {
        self.words_per_row
    }

    #[inline]
    pub fn row_words(&self, i: usize) -> &[u64] {
        &self.words[i * self.words_per_row..(i + 1) * self.words_per_row]
    }

    #[inline]
    pub fn is_plus(&self, i: usize, j: usize) -> bool {
        (self.row_words(i)[j / 64] >> (j % 64)) & 1 == 1
    }

    #[inline]
    pub fn sign(&self, i: usize, j: usize) -> f64 {
        if self.is_plus(i, j) {
            1.0
        } else {
            -1.0
        }
    }

    pub fn set(&mut self, i: usize, j: usize, plus: bool) {
        let w = &mut self.words[i * self.words_per_row + j / 64];
        let bit = 1u64 << (j % 64);
        if plus {
            *w |= bit;
        } else {
            *w &= !bit;
        }
    }

    pub fn to_bools(&self) -> Vec<bool> {
        (0..self.rows)
            .flat_map(|i| (0..self.cols).map(move |j| (i, j)))
            .map(|(i, j)| self.is_plus(i, j))
            .collect()
    }

    /// Dense little-endian bitstream of `⌈rows·cols/8⌉` bytes, entries in
    /// row-major order with no per-row padding.
    pub fn to_bitstream(&self) -> Vec<u8> {
        let total = self.rows * self.cols;
        let mut out = vec![0u8; total.div_ceil(8)];
        for i in 0..self.rows {
            for j in 0..self.cols {
                if self.is_plus(i, j) {
                    let k = i * self.cols + j;
                    out[k / 8] |= 1 << (k % 8);
                }
            }
        }
        out
    }

    pub fn from_bitstream(rows: usize, cols: usize, bytes: &[u8]) -> Result<Self> {
        let total = rows
            .checked_mul(cols)
            .ok_or_else(|| BwlaError::format("sign bitstream", "dimension overflow"))?;
        if bytes.len() != total.div_ceil(8) {
            return Err(BwlaError::format(
                "sign bitstream",
                format!("expected {} bytes, found {}", total.div_ceil(8), bytes.len()),
            ));
        }
        if total % 8 != 0 {
            let tail = bytes[bytes.len() - 1] >> (total % 8);
            if tail != 0 {
                return Err(BwlaError::format("sign bitstream", "nonzero padding bits"));
            }
        }
        let mut p = PackedSigns::new(rows, cols);
        for k in 0..total {
            if (bytes[k / 8] >> (k % 8)) & 1 == 1 {
                p.set(k / cols, k % cols, true);
            }
        }
        Ok(p)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BinarizedWeights {
    pub signs: PackedSigns,
    /// Scale per channel along `axis`.
    pub alpha: Vec<f64>,
    /// Offset per channel along `axis`.
    pub beta: Vec<f64>,
    pub axis: Axis,
}

impl BinarizedWeights {
    pub fn rows(&self) -> usize {
        self.signs.rows()
    }

    pub fn cols(&self) -> usize {
        self.signs.cols()
    }

    #[inline]
    pub fn scale_offset(&self, i: usize, j: usize) -> (f64, f64) {
        match self.axis {
            Axis::Row => (self.alpha[i], self.beta[i]),
            Axis::Column => (self.alpha[j], self.beta[j]),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let channels = match self.axis {
            Axis::Row => self.rows(),
            Axis::Column => self.cols(),
        };
        if self.alpha.len() != channels || self.beta.len() != channels {
            return Err(BwlaError::shape(
                "BinarizedWeights",
                format!("{channels} channels"),
                format!("{} scales / {} offsets", self.alpha.len(), self.beta.len()),
            ));
        }
        Ok(())
    }
}

/// `Sign(x) = +1` for `x > 0`, `−1` otherwise (including zero).
#[inline]
pub fn sign(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else {
        -1.0
    }
}

pub fn binarize(x: &Matrix, axis: Axis) -> BinarizedWeights {
    let (n, m) = x.shape();
    let (mean, scale) = match axis {
        Axis::Row => channel_stats(n, m, |c, k| x[(c, k)]),
        Axis::Column => channel_stats(m, n, |c, k| x[(k, c)]),
    };
    let mut signs = PackedSigns::new(n, m);
    for i in 0..n {
        for j in 0..m {
            let mu = match axis {
                Axis::Row => mean[i],
                Axis::Column => mean[j],
            };
            if x[(i, j)] - mu > 0.0 {
                signs.set(i, j, true);
            }
        }
    }
    BinarizedWeights {
        signs,
        alpha: scale,
        beta: mean,
        axis,
    }
}

/// Per-channel mean and mean absolute deviation.
fn channel_stats(
    channels: usize,
    len: usize,
    get: impl Fn(usize, usize) -> f64,
) -> (Vec<f64>, Vec<f64>) {
    let denom = len.max(1) as f64;
    let mut means = Vec::with_capacity(channels);
    let mut scales = Vec::with_capacity(channels);
    for c in 0..channels {
        let mu = (0..len).map(|k| get(c, k)).sum::<f64>() / denom;
        let delta = (0..len).map(|k| (get(c, k) - mu).abs()).sum::<f64>() / denom;
        means.push(mu);
        scales.push(delta);
    }
    (means, scales)
}

/// `sign·α + β` per entry.
pub fn dequantize(bw: &BinarizedWeights) -> Matrix {
    Matrix::from_fn(bw.rows(), bw.cols(), |i, j| {
        let (a, b) = bw.scale_offset(i, j);
        bw.signs.sign(i, j) * a + b
    })
}

/// Best shared scale for `α·sign(w)` and its squared error: `α* = mean|w|`,
/// `E* = Σ(|wⱼ| − α*)² = m·Var|w|`.
pub fn optimal_scale_error(row: &[f64]) -> (f64, f64) {
    if row.is_empty() {
        return (0.0, 0.0);
    }
    let mags: Vec<f64> = row.iter().map(|v| v.abs()).collect();
    let mean = mags.iter().sum::<f64>() / mags.len() as f64;
    let err = mags.iter().map(|a| (a - mean).powi(2)).sum();
    (mean, err)
}

/// Mean squared error of `dequantize(binarize(x))` over all entries.
pub fn binarization_mse(x: &Matrix, axis: Axis) -> f64 {
    let count = x.rows() * x.cols();
    if count == 0 {
        return 0.0;
    }
    let bw = binarize(x, axis);
    let mut sum = 0.0;
    for i in 0..x.rows() {
        for j in 0..x.cols() {
            let (a, b) = bw.scale_offset(i, j);
            sum += (x[(i, j)] - (bw.signs.sign(i, j) * a + b)).powi(2);
        }
    }
    sum / count as f64
}

/// Stored bits per weight: one sign bit per entry plus `scale_bits` for
/// every scale, offset, rotation-factor and residual-factor parameter.
pub fn effective_bits(
    n: usize,
    m: usize,
    scale_params: usize,
    rot: Option<&KroneckerRotation>,
    residual: Option<&LowRankResidual>,
    scale_bits: u32,
) -> f64 {
    let weights = (n * m) as f64;
    let extra = scale_params
        + rot.map_or(0, KroneckerRotation::param_count)
        + residual.map_or(0, LowRankResidual::param_count);
    (weights + scale_bits as f64 * extra as f64) / weights
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kronecker::{factor_dims, KroneckerRotation};

    fn row(v: &[f64]) -> Matrix {
        Matrix::new(1, v.len(), v.to_vec()).unwrap()
    }

    #[test]
    fn already_bimodal_row() {
        let x = row(&[1.0, 1.0, -1.0, -1.0]);
        let bw = binarize(&x, Axis::Row);
        assert_eq!((bw.beta[0], bw.alpha[0]), (0.0, 1.0));
        assert_eq!(bw.signs.to_bools(), vec![true, true, false, false]);
        assert_eq!(dequantize(&bw), x);
        assert_eq!(binarization_mse(&x, Axis::Row), 0.0);
    }

    #[test]
    fn constant_row_maps_to_minus_one() {
        let x = row(&[5.0; 4]);
        let bw = binarize(&x, Axis::Row);
        assert_eq!((bw.beta[0], bw.alpha[0]), (5.0, 0.0));
        assert!(bw.signs.to_bools().iter().all(|&p| !p));
        assert_eq!(dequantize(&bw), x);
    }

    #[test]
    fn mixed_magnitudes() {
        let x = row(&[2.0, -2.0, 1.0, -1.0]);
        let bw = binarize(&x, Axis::Row);
        assert_eq!((bw.beta[0], bw.alpha[0]), (0.0, 1.5));
        let deq = dequantize(&bw);
        assert_eq!(deq.row(0), &[1.5, -1.5, 1.5, -1.5]);
        let sq: f64 = x.sub(&deq).unwrap().data().iter().map(|v| v * v).sum();
        assert_eq!(sq, 1.0);
        assert_eq!(optimal_scale_error(x.row(0)), (1.5, 1.0));
    }

    #[test]
    fn zero_entry_is_negative() {
        let bw = binarize(&row(&[0.0, 1.0, -1.0]), Axis::Row);
        assert!(!bw.signs.is_plus(0, 0));
    }

    #[test]
    fn optimal_scale_special_cases() {
        assert_eq!(optimal_scale_error(&[3.0, -3.0, 3.0]), (3.0, 0.0));
        assert_eq!(optimal_scale_error(&[-4.5]), (4.5, 0.0));
    }

    #[test]
    fn column_axis_uses_column_statistics() {
        let x = Matrix::new(2, 2, vec![1.0, 10.0, 3.0, 10.0]).unwrap();
        let bw = binarize(&x, Axis::Column);
        assert_eq!(bw.beta, vec![2.0, 10.0]);
        assert_eq!(bw.alpha, vec![1.0, 0.0]);
        assert_eq!(dequantize(&bw), x);
    }

    #[test]
    fn dequantize_is_idempotent_under_rebinarization() {
        let x = Matrix::new(2, 3, vec![0.3, -1.2, 2.0, 5.0, 4.0, -7.5]).unwrap();
        for axis in [Axis::Row, Axis::Column] {
            let bw = binarize(&x, axis);
            let bw2 = binarize(&dequantize(&bw), axis);
            assert_eq!(bw.signs, bw2.signs);
        }
        // with p plus and q minus signs the rebinarized scale is 4pq/m²·δ
        let bw = binarize(&x, Axis::Row);
        let bw2 = binarize(&dequantize(&bw), Axis::Row);
        for (a, b) in bw.alpha.iter().zip(&bw2.alpha) {
            assert!((a * 8.0 / 9.0 - b).abs() < 1e-12);
        }
        let balanced = Matrix::new(2, 4, vec![0.3, -1.2, 2.0, -0.1, 5.0, 4.0, -7.5, -2.0]).unwrap();
        let bw = binarize(&balanced, Axis::Row);
        let bw2 = binarize(&dequantize(&bw), Axis::Row);
        assert_eq!(bw.signs, bw2.signs);
        for (a, b) in bw.alpha.iter().zip(&bw2.alpha) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn bitstream_patterns() {
        for cols in [1usize, 7, 64, 65, 130] {
            for pattern in 0..3 {
                let bools: Vec<bool> = (0..3 * cols)
                    .map(|k| match pattern {
                        0 => true,
                        1 => false,
                        _ => k % 2 == 0,
                    })
                    .collect();
                let p = PackedSigns::from_bools(3, cols, &bools);
                assert_eq!(p.to_bools(), bools);
                let bytes = p.to_bitstream();
                assert_eq!(bytes.len(), (3 * cols).div_ceil(8));
                assert_eq!(PackedSigns::from_bitstream(3, cols, &bytes).unwrap(), p);
            }
        }
        assert!(PackedSigns::from_bitstream(1, 3, &[0xff]).is_err());
        assert!(PackedSigns::from_bitstream(2, 8, &[0]).is_err());
    }

    #[test]
    fn effective_bit_accounting() {
        let n = 4096;
        let base = effective_bits(n, n, 2 * n, None, None, 16);
        assert!((base - (1.0 + 16.0 * 2.0 * 4096.0 / (4096.0 * 4096.0))).abs() < 1e-12);
        let rot = KroneckerRotation::identity(factor_dims(n));
        let with_rot = effective_bits(n, n, 2 * n, Some(&rot), None, 16);
        let delta = 16.0 * 2.0 * 64.0 * 64.0 / (4096.0 * 4096.0);
        assert!((with_rot - base - delta).abs() < 1e-12);
        let res = LowRankResidual::zeros(n, n, 20);
        let with_res = effective_bits(n, n, 2 * n, None, Some(&res), 16);
        let delta = 16.0 * 20.0 * 8192.0 / (4096.0 * 4096.0);
        assert!((with_res - base - delta).abs() < 1e-12);
        assert!((with_res - 1.1641).abs() < 1e-3);
    }
}
