//! Per-token asymmetric activation quantization and tail diagnostics.

use crate::error::{BwlaError, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct QuantizedActivations {
    pub codes: Vec<u8>,
    pub scale: f64,
    pub zero_point: i32,
    pub bits: u32,
}

impl QuantizedActivations {
    pub fn max_code(&self) -> i32 {
        (1i32 << self.bits) - 1
    }

    /// `code − zero_point` per element, the integer operand of the W1AX
    /// kernels.
    pub fn centered_codes(&self) -> Vec<i32> {
        self.codes
            .iter()
            .map(|&c| c as i32 - self.zero_point)
            .collect()
    }
}

/// `s = (max − min)/(2ᵇ − 1)`, `z = round(−min/s)`,
/// `code = clamp(round(x/s) + z, 0, 2ᵇ − 1)`; rounding is half away from
/// zero. The range `[min, max]` always contains zero, so `z` is a valid code
/// and every value lies within half a step of the grid.
///
/// A constant token `c` has no range. It gets `s = |c|` and a zero point that
/// puts `c` exactly on code 0 or 1, or `s = 1, z = 0` when `c = 0`.
pub fn quantize_token(x: &[f64], bits: u32) -> Result<QuantizedActivations> {
    if !(2..=8).contains(&bits) {
        return Err(BwlaError::InvalidArgument(format!(
            "activation bits must be in 2..=8, got {bits}"
        )));
    }
    if let Some(index) = x.iter().position(|v| !v.is_finite()) {
        return Err(BwlaError::NonFinite {
            context: "quantize_token",
            index,
        });
    }
    let max_code = ((1u32 << bits) - 1) as f64;
    let (lo, hi) = x
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
            (lo.min(v), hi.max(v))
        });
    if x.is_empty() || hi == lo {
        let c = if x.is_empty() { 0.0 } else { lo };
        let (scale, zero_point, code) = if c > 0.0 {
            (c, 0, 1)
        } else if c < 0.0 {
            (-c, 1, 0)
        } else {
            (1.0, 0, 0)
        };
        return Ok(QuantizedActivations {
            codes: vec![code; x.len()],
            scale,
            zero_point,
            bits,
        });
    }
    let (lo, hi) = (lo.min(0.0), hi.max(0.0));
    let scale = (hi - lo) / max_code;
    let zero = (-lo / scale).round().clamp(0.0, max_code);
    let codes = x
        .iter()
        .map(|&v| ((v / scale).round() + zero).clamp(0.0, max_code) as u8)
        .collect();
    Ok(QuantizedActivations {
        codes,
        scale,
        zero_point: zero as i32,
        bits,
    })
}

/// `s·(code − z)`.
pub fn dequantize_token(q: &QuantizedActivations) -> Vec<f64> {
    q.codes
        .iter()
        .map(|&c| q.scale * (c as i32 - q.zero_point) as f64)
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct TailStats {
    /// Excess kurtosis `m₄/m₂² − 3` about the mean.
    pub kurtosis: f64,
    pub max_over_rms: f64,
    /// 99th percentile (nearest rank) of `|x|` over RMS.
    pub quantile_99_over_rms: f64,
}

pub fn tail_stats(x: &[f64]) -> Result<TailStats> {
    if x.len() < 4 {
        return Err(BwlaError::InvalidArgument(format!(
            "tail statistics need at least 4 values, got {}",
            x.len()
        )));
    }
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    let m2 = x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    if !(m2 > 0.0) {
        return Err(BwlaError::InvalidArgument(
            "tail statistics need nonzero variance".into(),
        ));
    }
    let m4 = x.iter().map(|v| (v - mean).powi(4)).sum::<f64>() / n;
    let rms = (x.iter().map(|v| v * v).sum::<f64>() / n).sqrt();
    let mut mags: Vec<f64> = x.iter().map(|v| v.abs()).collect();
    mags.sort_by(|a, b| a.partial_cmp(b).expect("finite activations"));
    let rank = ((0.99 * n).ceil() as usize).clamp(1, mags.len());
    Ok(TailStats {
        kurtosis: m4 / (m2 * m2) - 3.0,
        max_over_rms: mags[mags.len() - 1] / rms,
        quantile_99_over_rms: mags[rank - 1] / rms,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grid_aligned_is_exact() {
        let x: Vec<f64> = (0..16).map(f64::from).collect();
        let q = quantize_token(&x, 4).unwrap();
        assert_eq!(q.scale, 1.0);
        assert_eq!(q.zero_point, 0);
        assert_eq!(dequantize_token(&q), x);
    }

    #[test]
    fn constant_token() {
        for c in [2.5, -3.0, 1e-7, -400.0] {
            let x = vec![c; 6];
            let q = quantize_token(&x, 6).unwrap();
            assert!(q.codes.iter().all(|&k| k == q.codes[0]));
            assert_eq!(dequantize_token(&q), x);
        }
        let q = quantize_token(&[0.0; 4], 4).unwrap();
        assert_eq!(q.scale, 1.0);
        assert!(q.codes.iter().all(|&k| k as i32 == q.zero_point));
        assert_eq!(dequantize_token(&q), vec![0.0; 4]);
    }

    #[test]
    fn error_within_half_step() {
        let x: Vec<f64> = (0..97).map(|i| ((i * 37 % 101) as f64 - 50.0) * 0.173).collect();
        let q = quantize_token(&x, 6).unwrap();
        for (a, b) in x.iter().zip(dequantize_token(&q)) {
            assert!((a - b).abs() <= q.scale / 2.0 + 1e-12);
        }
        assert!(q.codes.iter().all(|&c| (c as i32) <= q.max_code()));

        let offset: Vec<f64> = (0..40).map(|i| 10.0 + 0.025 * i as f64).collect();
        let q = quantize_token(&offset, 6).unwrap();
        for (a, b) in offset.iter().zip(dequantize_token(&q)) {
            assert!((a - b).abs() <= q.scale / 2.0 + 1e-12);
        }
    }

    #[test]
    fn rejects_bad_bits() {
        assert!(quantize_token(&[1.0], 1).is_err());
        assert!(quantize_token(&[1.0], 9).is_err());
        assert!(quantize_token(&[f64::NAN], 4).is_err());
    }

    #[test]
    fn tail_stats_on_spike() {
        let mut x = vec![1.0; 1000];
        x[17] = 100.0;
        let t = tail_stats(&x).unwrap();
        assert!(t.max_over_rms > 10.0);
        assert!(tail_stats(&[1.0, 1.0, 1.0, 1.0]).is_err());
        assert!(tail_stats(&[1.0, 2.0]).is_err());
    }
}
