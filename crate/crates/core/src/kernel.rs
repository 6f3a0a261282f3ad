//! Packed 1-bit GEMV and the W1AX inference path.
//!
//! The sign dot product `Σⱼ sᵢⱼ·xⱼ` is evaluated as `2·Σ_{sᵢⱼ=+1} xⱼ − Σⱼ xⱼ`.
//! The selected sum is read eight signs at a time: for every group of eight
//! activations a 256-entry table holds the partial sum for each bit pattern,
//! so one byte of packed signs costs one table lookup. Padding bits are zero
//! and their activations are zero-padded, so ragged widths need no masking in
//! the inner loop.

use std::hint::black_box;
use std::time::Instant;

use crate::actquant::{quantize_token, QuantizedActivations};
use crate::binarize::{dequantize, Axis, BinarizedWeights, PackedSigns};
use crate::error::{BwlaError, Result};
use crate::kronecker::{FlopCounter, KroneckerRotation};
use crate::numerics::Matrix;
use crate::psp::LowRankResidual;

/// Per-byte partial sums of a zero-padded activation vector.
struct ByteTable<T> {
    entries: Vec<T>,
}

impl<T> ByteTable<T>
where
    T: Copy + Default + std::ops::Add<Output = T>,
{
    fn build(x: &[T], words_per_row: usize) -> Self {
        let groups = words_per_row * 8;
        let mut entries = vec![T::default(); groups * 256];
        for g in 0..groups {
            let base = g * 256;
            let lane = |k: usize| x.get(g * 8 + k).copied().unwrap_or_default();
            for b in 1..256usize {
                let low = b.trailing_zeros() as usize;
                entries[base + b] = entries[base + (b & (b - 1))] + lane(low);
            }
        }
        ByteTable { entries }
    }

    #[inline]
    fn selected_sum(&self, words: &[u64]) -> T {
        let mut acc = [T::default(); 4];
        for (k, &w) in words.iter().enumerate() {
            let base = k * 8 * 256;
            let t = &self.entries[base..base + 8 * 256];
            acc[0] = acc[0] + t[(w & 0xff) as usize] + t[256 + ((w >> 8) & 0xff) as usize];
            acc[1] =
                acc[1] + t[512 + ((w >> 16) & 0xff) as usize] + t[768 + ((w >> 24) & 0xff) as usize];
            acc[2] = acc[2]
                + t[1024 + ((w >> 32) & 0xff) as usize]
                + t[1280 + ((w >> 40) & 0xff) as usize];
            acc[3] =
                acc[3] + t[1536 + ((w >> 48) & 0xff) as usize] + t[1792 + (w >> 56) as usize];
        }
        (acc[0] + acc[1]) + (acc[2] + acc[3])
    }
}

fn check_width(bw: &BinarizedWeights, len: usize) -> Result<()> {
    bw.validate()?;
    if len != bw.cols() {
        return Err(BwlaError::shape("binary_gemv", bw.cols(), len));
    }
    Ok(())
}

/// `dequantize(bw)·x` without materializing the dense matrix.
pub fn binary_gemv(bw: &BinarizedWeights, x: &[f64]) -> Result<Vec<f64>> {
    check_width(bw, x.len())?;
    let signs = &bw.signs;
    let (operand, offset) = match bw.axis {
        Axis::Row => (x.to_vec(), 0.0),
        // Σⱼ (sᵢⱼαⱼ + βⱼ)xⱼ = Σⱼ sᵢⱼ(αⱼxⱼ) + β·x
        Axis::Column => (
            x.iter().zip(&bw.alpha).map(|(v, a)| v * a).collect(),
            x.iter().zip(&bw.beta).map(|(v, b)| v * b).sum(),
        ),
    };
    let total: f64 = operand.iter().sum();
    let x_sum: f64 = x.iter().sum();
    let table = ByteTable::build(&operand, signs.words_per_row());
    Ok((0..signs.rows())
        .map(|i| {
            let dot = 2.0 * table.selected_sum(signs.row_words(i)) - total;
            match bw.axis {
                Axis::Row => bw.alpha[i] * dot + bw.beta[i] * x_sum,
                Axis::Column => dot + offset,
            }
        })
        .collect())
}

/// Accumulator type for quantized activations.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Accumulation {
    /// Exact integer sign dot products on `code − z`; row axis only.
    Int32,
    Float,
}

/// Binary GEMV on per-token quantized activations.
pub fn binary_gemv_quantized(
    bw: &BinarizedWeights,
    q: &QuantizedActivations,
    acc: Accumulation,
) -> Result<Vec<f64>> {
    check_width(bw, q.codes.len())?;
    match acc {
        Accumulation::Float => {
            let x: Vec<f64> = crate::actquant::dequantize_token(q);
            binary_gemv(bw, &x)
        }
        Accumulation::Int32 => {
            if bw.axis != Axis::Row {
                return Err(BwlaError::InvalidArgument(
                    "integer accumulation needs row-axis scales".into(),
                ));
            }
            let codes = q.centered_codes();
            let total: i64 = codes.iter().map(|&c| c as i64).sum();
            let table = ByteTable::build(&codes, bw.signs.words_per_row());
            Ok((0..bw.rows())
                .map(|i| {
                    let dot = 2 * table.selected_sum(bw.signs.row_words(i)) as i64 - total;
                    q.scale * (bw.alpha[i] * dot as f64 + bw.beta[i] * total as f64)
                })
                .collect())
        }
    }
}

/// Weights stored in the rotated frame.
#[derive(Debug, Clone, PartialEq)]
pub enum FrameWeights {
    Binary(BinarizedWeights),
    /// Unquantized rotated weights, used to isolate the rotation and
    /// residual algebra from binarization error.
    Dense(Matrix),
}

/// Everything needed to evaluate `W·x` from the quantized representation:
/// `W·x ≈ F·(Rᵀx) + shift·Σ(Rᵀx) + A·(B·x)` with `F` the frame weights.
#[derive(Debug, Clone, PartialEq)]
pub struct PackedLayer {
    pub weights: FrameWeights,
    /// Per-output offset multiplying `Σⱼ (Rᵀx)ⱼ`; carries the row means that
    /// column-axis binarization removes. Zero for row-axis layers.
    pub row_shift: Vec<f64>,
    pub rotation: KroneckerRotation,
    pub residual: LowRankResidual,
}

impl PackedLayer {
    pub fn rows(&self) -> usize {
        self.row_shift.len()
    }

    pub fn cols(&self) -> usize {
        self.rotation.m()
    }

    pub fn binary(&self) -> Option<&BinarizedWeights> {
        match &self.weights {
            FrameWeights::Binary(bw) => Some(bw),
            FrameWeights::Dense(_) => None,
        }
    }

    /// Dequantized weights in the original frame,
    /// `(F + shift·𝟙ᵀ)·Rᵀ + M`.
    pub fn effective_weights(&self) -> Result<Matrix> {
        let mut frame = match &self.weights {
            FrameWeights::Binary(bw) => dequantize(bw),
            FrameWeights::Dense(m) => m.clone(),
        };
        for (i, &s) in self.row_shift.iter().enumerate() {
            frame.row_mut(i).iter_mut().for_each(|v| *v += s);
        }
        self.rotation
            .apply_inverse_to_rows(&frame)?
            .add(self.residual.matrix())
    }

    /// Packed sign bytes plus 2-byte scales and offsets, as stored.
    pub fn packed_weight_bytes(&self) -> usize {
        match &self.weights {
            FrameWeights::Binary(bw) => {
                (bw.rows() * bw.cols()).div_ceil(8) + 2 * (bw.alpha.len() + bw.beta.len())
            }
            FrameWeights::Dense(m) => 4 * m.rows() * m.cols(),
        }
    }
}

fn check_layer_input(layer: &PackedLayer, x: &[f64]) -> Result<()> {
    if x.len() != layer.cols() {
        return Err(BwlaError::shape("full_inference", layer.cols(), x.len()));
    }
    Ok(())
}

fn add_shift_and_residual(
    layer: &PackedLayer,
    mut y: Vec<f64>,
    rotated_sum: f64,
    x: &[f64],
) -> Result<Vec<f64>> {
    let res = if layer.residual.is_zero() {
        None
    } else {
        Some(layer.residual.apply(x)?)
    };
    for (i, v) in y.iter_mut().enumerate() {
        *v += layer.row_shift[i] * rotated_sum;
        if let Some(r) = &res {
            *v += r[i];
        }
    }
    Ok(y)
}

/// `W·x` through the rotated, binarized layer and the residual path.
pub fn full_inference(layer: &PackedLayer, x: &[f64]) -> Result<Vec<f64>> {
    check_layer_input(layer, x)?;
    let xr = layer.rotation.apply_transpose_to_vec(x)?;
    let y = match &layer.weights {
        FrameWeights::Binary(bw) => binary_gemv(bw, &xr)?,
        FrameWeights::Dense(m) => m.matvec(&xr)?,
    };
    add_shift_and_residual(layer, y, xr.iter().sum(), x)
}

/// Like [`full_inference`], with the rotated activations quantized per token
/// to `bits`. The residual path stays in full precision.
pub fn full_inference_quantized(
    layer: &PackedLayer,
    x: &[f64],
    bits: u32,
    acc: Accumulation,
) -> Result<Vec<f64>> {
    check_layer_input(layer, x)?;
    let xr = layer.rotation.apply_transpose_to_vec(x)?;
    let q = quantize_token(&xr, bits)?;
    let xq = crate::actquant::dequantize_token(&q);
    let y = match &layer.weights {
        FrameWeights::Binary(bw) => binary_gemv_quantized(bw, &q, acc)?,
        FrameWeights::Dense(m) => m.matvec(&xq)?,
    };
    add_shift_and_residual(layer, y, xq.iter().sum(), x)
}

/// Operation counts of one [`full_inference`] call, in multiply-adds.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct InferenceFlops {
    /// One select-and-accumulate per weight.
    pub binary: u64,
    pub rotation: u64,
    pub residual: u64,
}

impl InferenceFlops {
    pub fn overhead_ratio(&self) -> f64 {
        (self.rotation + self.residual) as f64 / self.binary as f64
    }
}

pub fn count_inference_flops(layer: &PackedLayer) -> Result<InferenceFlops> {
    let mut rot = FlopCounter::default();
    layer
        .rotation
        .apply_to_row_counted(&vec![0.0; layer.cols()], &mut rot)?;
    let k = if layer.residual.is_zero() {
        0
    } else {
        layer.residual.k()
    };
    Ok(InferenceFlops {
        binary: (layer.rows() * layer.cols()) as u64,
        rotation: rot.fma,
        residual: (k * (layer.cols() + layer.rows())) as u64,
    })
}

/// Single-precision kernels timed by [`bench_gemv`].
pub mod f32_kernels {
    use super::ByteTable;
    use crate::binarize::PackedSigns;

    /// Row-major dense GEMV with eight independent accumulators.
    pub fn dense_gemv(w: &[f32], cols: usize, x: &[f32], out: &mut [f32]) {
        for (o, row) in out.iter_mut().zip(w.chunks_exact(cols)) {
            let mut acc = [0.0f32; 8];
            let mut rc = row.chunks_exact(8);
            let mut xc = x.chunks_exact(8);
            for (r, v) in (&mut rc).zip(&mut xc) {
                for l in 0..8 {
                    acc[l] += r[l] * v[l];
                }
            }
            let mut tail = 0.0f32;
            for (r, v) in rc.remainder().iter().zip(xc.remainder()) {
                tail += r * v;
            }
            *o = ((acc[0] + acc[1]) + (acc[2] + acc[3]))
                + ((acc[4] + acc[5]) + (acc[6] + acc[7]))
                + tail;
        }
    }

    /// `±1` GEMV with per-row scale and offset.
    pub fn binary_gemv(signs: &PackedSigns, alpha: &[f32], beta: &[f32], x: &[f32], out: &mut [f32]) {
        let table = ByteTable::build(x, signs.words_per_row());
        let total: f32 = x.iter().sum();
        for (i, o) in out.iter_mut().enumerate() {
            let dot = 2.0 * table.selected_sum(signs.row_words(i)) - total;
            *o = alpha[i] * dot + beta[i] * total;
        }
    }

    /// `±1` GEMV on integer activation codes with exact `i32` accumulation.
    pub fn binary_gemv_i32(signs: &PackedSigns, x: &[i32], out: &mut [i32]) {
        let table = ByteTable::build(x, signs.words_per_row());
        let total: i32 = x.iter().sum();
        for (i, o) in out.iter_mut().enumerate() {
            *o = 2 * table.selected_sum(signs.row_words(i)) - total;
        }
    }

    pub fn dense_gemv_i32(w: &[i8], cols: usize, x: &[i32], out: &mut [i32]) {
        for (o, row) in out.iter_mut().zip(w.chunks_exact(cols)) {
            *o = row.iter().zip(x).map(|(&a, &b)| a as i32 * b).sum();
        }
    }
}

/// One line of the benchmark CSV.
#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct BenchRow {
    pub shape: String,
    pub variant: String,
    pub median_ns: u64,
    pub p10_ns: u64,
    pub p90_ns: u64,
    pub bytes_touched: u64,
}

impl BenchRow {
    pub const CSV_HEADER: &'static str = "shape,variant,median_ns,p10_ns,p90_ns,bytes_touched";

    pub fn csv_line(&self) -> String {
        format!(
            "{},{},{},{},{},{}",
            self.shape, self.variant, self.median_ns, self.p10_ns, self.p90_ns, self.bytes_touched
        )
    }
}

fn percentiles(mut samples: Vec<u64>) -> (u64, u64, u64) {
    samples.sort_unstable();
    let at = |q: f64| samples[((samples.len() - 1) as f64 * q).round() as usize];
    (at(0.5), at(0.1), at(0.9))
}

fn time_reps(reps: usize, mut f: impl FnMut()) -> (u64, u64, u64) {
    f(); // warm caches and page in buffers
    let samples = (0..reps.max(1))
        .map(|_| {
            let t = Instant::now();
            f();
            t.elapsed().as_nanos() as u64
        })
        .collect();
    percentiles(samples)
}

/// Times dense `f32`, packed `f32` and packed `i32` GEMV at each `(n, m)`.
///
/// The first evaluation of every shape runs on small-integer activations,
/// where all three kernels must agree exactly with the dense reference; a
/// mismatch is returned as an error.
pub fn bench_gemv(shapes: &[(usize, usize)], reps: usize, seed: u64) -> Result<Vec<BenchRow>> {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha20Rng::seed_from_u64(seed);
    let mut rows = Vec::new();
    for &(n, m) in shapes {
        if n == 0 || m == 0 {
            return Err(BwlaError::InvalidArgument(format!("empty bench shape {n}x{m}")));
        }
        let plus: Vec<bool> = (0..n * m).map(|_| rng.random::<bool>()).collect();
        let signs = PackedSigns::from_bools(n, m, &plus);
        let dense: Vec<f32> = plus.iter().map(|&p| if p { 1.0 } else { -1.0 }).collect();
        let dense_i8: Vec<i8> = plus.iter().map(|&p| if p { 1 } else { -1 }).collect();
        let alpha = vec![1.0f32; n];
        let beta = vec![0.0f32; n];
        let xi: Vec<i32> = (0..m).map(|_| rng.random_range(-8..=8)).collect();
        let xf: Vec<f32> = xi.iter().map(|&v| v as f32).collect();

        let mut y_dense = vec![0.0f32; n];
        let mut y_packed = vec![0.0f32; n];
        let mut yi_dense = vec![0i32; n];
        let mut yi_packed = vec![0i32; n];
        f32_kernels::dense_gemv(&dense, m, &xf, &mut y_dense);
        f32_kernels::binary_gemv(&signs, &alpha, &beta, &xf, &mut y_packed);
        f32_kernels::dense_gemv_i32(&dense_i8, m, &xi, &mut yi_dense);
        f32_kernels::binary_gemv_i32(&signs, &xi, &mut yi_packed);
        if y_dense != y_packed || yi_dense != yi_packed {
            return Err(BwlaError::InvalidArgument(format!(
                "packed kernel disagrees with dense reference at {n}x{m}"
            )));
        }

        let shape = format!("{n}x{m}");
        let packed_bytes = (n * signs.words_per_row() * 8 + 8 * n) as u64;
        let mut push = |variant: &str, (median, p10, p90): (u64, u64, u64), bytes: u64| {
            rows.push(BenchRow {
                shape: shape.clone(),
                variant: variant.to_string(),
                median_ns: median,
                p10_ns: p10,
                p90_ns: p90,
                bytes_touched: bytes,
            })
        };
        let t = time_reps(reps, || {
            f32_kernels::dense_gemv(black_box(&dense), m, black_box(&xf), &mut y_dense);
            black_box(&y_dense);
        });
        push("dense_f32", t, (4 * n * m + 4 * m + 4 * n) as u64);
        let t = time_reps(reps, || {
            f32_kernels::binary_gemv(black_box(&signs), &alpha, &beta, black_box(&xf), &mut y_packed);
            black_box(&y_packed);
        });
        push("packed_f32", t, packed_bytes + (4 * m + 4 * n) as u64);
        let t = time_reps(reps, || {
            f32_kernels::binary_gemv_i32(black_box(&signs), black_box(&xi), &mut yi_packed);
            black_box(&yi_packed);
        });
        push("packed_i32", t, (n * signs.words_per_row() * 8 + 4 * m + 4 * n) as u64);
    }
    Ok(rows)
}

/// Median speedup of `packed_f32` over `dense_f32` for a shape in `rows`.
pub fn speedup(rows: &[BenchRow], shape: &str) -> Option<f64> {
    let get = |variant: &str| {
        rows.iter()
            .find(|r| r.shape == shape && r.variant == variant)
            .map(|r| r.median_ns as f64)
    };
    Some(get("dense_f32")? / get("packed_f32")?.max(1.0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::binarize::binarize;
    use crate::kronecker::factor_dims;

    fn bw_all_plus(n: usize, m: usize) -> BinarizedWeights {
        BinarizedWeights {
            signs: PackedSigns::from_bools(n, m, &vec![true; n * m]),
            alpha: vec![1.0; n],
            beta: vec![0.0; n],
            axis: Axis::Row,
        }
    }

    #[test]
    fn all_plus_sums_activations() {
        let x: Vec<f64> = (0..70).map(|i| i as f64 * 0.5 - 3.0).collect();
        let y = binary_gemv(&bw_all_plus(3, 70), &x).unwrap();
        let s: f64 = x.iter().sum();
        assert!(y.iter().all(|v| (v - s).abs() < 1e-12));
    }

    #[test]
    fn zero_input_gives_zero() {
        let w = Matrix::from_fn(4, 9, |i, j| ((i * 9 + j) as f64).sin());
        for axis in [Axis::Row, Axis::Column] {
            let y = binary_gemv(&binarize(&w, axis), &[0.0; 9]).unwrap();
            assert!(y.iter().all(|&v| v == 0.0));
        }
    }

    #[test]
    fn matches_dense_dequantized_product() {
        let w = Matrix::from_fn(5, 131, |i, j| ((i * 131 + j) as f64 * 0.37).sin() + 0.1 * i as f64);
        let x: Vec<f64> = (0..131).map(|j| (j as f64 * 0.11).cos()).collect();
        for axis in [Axis::Row, Axis::Column] {
            let bw = binarize(&w, axis);
            let y = binary_gemv(&bw, &x).unwrap();
            let dense = dequantize(&bw).matvec(&x).unwrap();
            for (a, b) in y.iter().zip(&dense) {
                assert!((a - b).abs() < 1e-10 * b.abs().max(1.0));
            }
        }
        assert!(binary_gemv(&binarize(&w, Axis::Row), &x[..130]).is_err());
    }

    #[test]
    fn integer_accumulation_is_exact() {
        let w = Matrix::from_fn(6, 77, |i, j| ((i * 77 + j) as f64 * 0.7).sin());
        let bw = binarize(&w, Axis::Row);
        let x: Vec<f64> = (0..77).map(|j| (j as f64 * 0.3).cos() * 2.0).collect();
        let q = quantize_token(&x, 6).unwrap();
        let yi = binary_gemv_quantized(&bw, &q, Accumulation::Int32).unwrap();
        let yf = binary_gemv_quantized(&bw, &q, Accumulation::Float).unwrap();
        for (a, b) in yi.iter().zip(&yf) {
            assert!((a - b).abs() < 1e-10 * b.abs().max(1.0));
        }
        let col = binarize(&w, Axis::Column);
        assert!(binary_gemv_quantized(&col, &q, Accumulation::Int32).is_err());
    }

    #[test]
    fn lossless_layer_matches_dense() {
        let w = Matrix::new(2, 4, vec![1.0, -1.0, 1.0, -1.0, 2.0, -2.0, -2.0, 2.0]).unwrap();
        let layer = PackedLayer {
            weights: FrameWeights::Binary(binarize(&w, Axis::Row)),
            row_shift: vec![0.0; 2],
            rotation: KroneckerRotation::identity(factor_dims(4)),
            residual: LowRankResidual::zeros(2, 4, 1),
        };
        let x = [0.3, -1.0, 2.0, 0.25];
        let y = full_inference(&layer, &x).unwrap();
        let dense = w.matvec(&x).unwrap();
        for (a, b) in y.iter().zip(&dense) {
            assert!((a - b).abs() < 1e-12);
        }
        assert_eq!(layer.packed_weight_bytes(), 1 + 2 * 4);
    }

    #[test]
    fn small_bench_runs_and_checks() {
        let rows = bench_gemv(&[(8, 70), (3, 64)], 3, 1).unwrap();
        assert_eq!(rows.len(), 6);
        assert!(speedup(&rows, "8x70").is_some());
        assert!(rows[0].csv_line().starts_with("8x70,dense_f32,"));
    }
}
