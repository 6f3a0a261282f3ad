//! Row-wise symmetric two-component Gaussian mixture
//! `½·N(+cᵢ, σᵢ²) + ½·N(−cᵢ, σᵢ²)`.
//!
//! Mixture weights are fixed at one half. All densities are evaluated in log
//! space: with `a = x·c/σ²` the mixture density is
//! `φ(x; 0, σ²)·exp(−c²/2σ²)·cosh(a)` and the positive responsibility is the
//! logistic function of `2a`.
//!
//! Rows are processed in parallel; every reduction over a row runs in index
//! order and row partials are combined sequentially, so results do not depend
//! on the thread count.

use rayon::prelude::*;

use crate::error::{BwlaError, Result};
use crate::numerics::Matrix;

const LN_2PI: f64 = 1.837_877_066_409_345_5;
const MIN_RMS: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct GmmParams {
    /// Mode centers `cᵢ ≥ 0`.
    pub center: Vec<f64>,
    /// Variances `σᵢ²`, never below `floor_sq[i]`.
    pub variance: Vec<f64>,
    /// Per-row variance floor `σ_min²`.
    pub floor_sq: Vec<f64>,
}

impl GmmParams {
    /// Empirical start: `cᵢ = mean|x|`, `σᵢ² = mean(|x| − cᵢ)²`, floor
    /// `(rel · RMSᵢ)²`.
    pub fn init(x: &Matrix, sigma_min_rel: f64) -> Self {
        let m = x.cols().max(1) as f64;
        let mut center = Vec::with_capacity(x.rows());
        let mut variance = Vec::with_capacity(x.rows());
        let mut floor_sq = Vec::with_capacity(x.rows());
        for row in x.row_iter() {
            let c = row.iter().map(|v| v.abs()).sum::<f64>() / m;
            let var = row.iter().map(|v| (v.abs() - c).powi(2)).sum::<f64>() / m;
            let rms = (row.iter().map(|v| v * v).sum::<f64>() / m).sqrt();
            let floor = (sigma_min_rel * rms.max(MIN_RMS)).powi(2);
            center.push(c);
            variance.push(var.max(floor));
            floor_sq.push(floor);
        }
        GmmParams {
            center,
            variance,
            floor_sq,
        }
    }

    pub fn rows(&self) -> usize {
        self.center.len()
    }

    /// Surrogate weights `λᵢ = 1/σᵢ²`.
    pub fn precisions(&self) -> Vec<f64> {
        self.variance.iter().map(|v| 1.0 / v).collect()
    }

    fn check(&self, x: &Matrix, context: &'static str) -> Result<()> {
        if self.center.len() != x.rows()
            || self.variance.len() != x.rows()
            || self.floor_sq.len() != x.rows()
        {
            return Err(BwlaError::shape(context, x.rows(), self.center.len()));
        }
        Ok(())
    }
}

/// Posterior probabilities of the positive mode.
#[derive(Debug, Clone, PartialEq)]
pub struct Responsibilities {
    pub r_plus: Matrix,
    pub row_means: Vec<f64>,
}

impl Responsibilities {
    /// `mᵢⱼ = (2r⁺ᵢⱼ − 1)·cᵢ`, the posterior mean of the latent mode.
    pub fn posterior_means(&self, params: &GmmParams) -> Matrix {
        let mut out = self.r_plus.clone();
        for i in 0..out.rows() {
            let c = params.center[i];
            for v in out.row_mut(i) {
                *v = (2.0 * *v - 1.0) * c;
            }
        }
        out
    }
}

#[inline]
fn logistic(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// `log[½φ(x; c, σ²) + ½φ(x; −c, σ²)]`.
#[inline]
pub fn log_mixture_density(x: f64, c: f64, variance: f64) -> f64 {
    let (a, b) = (x.abs(), c.abs());
    let t = 2.0 * a * b / variance;
    -0.5 * (LN_2PI + variance.ln()) - (a - b).powi(2) / (2.0 * variance) + (-t).exp().ln_1p()
        - std::f64::consts::LN_2
}

#[inline]
fn responsibility(x: f64, c: f64, variance: f64) -> f64 {
    logistic(2.0 * x * c / variance)
}

fn check_same_shape(x: &Matrix, resp: &Responsibilities, context: &'static str) -> Result<()> {
    if x.shape() != resp.r_plus.shape() {
        return Err(BwlaError::shape(
            context,
            format!("{:?}", x.shape()),
            format!("{:?}", resp.r_plus.shape()),
        ));
    }
    Ok(())
}

pub fn responsibilities(x: &Matrix, params: &GmmParams) -> Result<Responsibilities> {
    params.check(x, "responsibilities")?;
    let cols = x.cols();
    let rows: Vec<Vec<f64>> = (0..x.rows())
        .into_par_iter()
        .map(|i| {
            let (c, var) = (params.center[i], params.variance[i]);
            x.row(i).iter().map(|&v| responsibility(v, c, var)).collect()
        })
        .collect();
    let row_means = rows
        .iter()
        .map(|r| r.iter().sum::<f64>() / cols.max(1) as f64)
        .collect();
    Ok(Responsibilities {
        r_plus: Matrix::new(x.rows(), cols, rows.concat())?,
        row_means,
    })
}

/// Closed-form M-step. The center update uses the current responsibilities;
/// the variance update uses the new center, then the floor is applied.
pub fn em_update(x: &Matrix, resp: &Responsibilities, params: &GmmParams) -> Result<GmmParams> {
    params.check(x, "em_update")?;
    check_same_shape(x, resp, "em_update")?;
    let m = x.cols().max(1) as f64;
    let updated: Vec<(f64, f64)> = (0..x.rows())
        .into_par_iter()
        .map(|i| {
            let row = x.row(i);
            let r = resp.r_plus.row(i);
            let c = row
                .iter()
                .zip(r)
                .map(|(&v, &rp)| (2.0 * rp - 1.0) * v)
                .sum::<f64>()
                / m;
            let var = row
                .iter()
                .zip(r)
                .map(|(&v, &rp)| rp * (v - c).powi(2) + (1.0 - rp) * (v + c).powi(2))
                .sum::<f64>()
                / m;
            // the likelihood is symmetric in ±c
            (c.abs(), var.max(params.floor_sq[i]))
        })
        .collect();
    let (center, variance) = updated.into_iter().unzip();
    Ok(GmmParams {
        center,
        variance,
        floor_sq: params.floor_sq.clone(),
    })
}

/// Mean negative log-likelihood over all `n·m` entries.
pub fn nll(x: &Matrix, params: &GmmParams) -> Result<f64> {
    params.check(x, "nll")?;
    let count = (x.rows() * x.cols()).max(1) as f64;
    let partials: Vec<f64> = (0..x.rows())
        .into_par_iter()
        .map(|i| {
            let (c, var) = (params.center[i], params.variance[i]);
            x.row(i)
                .iter()
                .map(|&v| log_mixture_density(v, c, var))
                .sum::<f64>()
        })
        .collect();
    Ok(-partials.iter().sum::<f64>() / count)
}

/// `λ·(mean_i r̄ᵢ − ½)²`.
pub fn balance_regularizer(resp: &Responsibilities, lambda_reg: f64) -> f64 {
    if resp.row_means.is_empty() {
        return 0.0;
    }
    let mean = resp.row_means.iter().sum::<f64>() / resp.row_means.len() as f64;
    lambda_reg * (mean - 0.5).powi(2)
}

/// `∂nll/∂xᵢⱼ = [r⁺(x − c) + (1 − r⁺)(x + c)] / (n·m·σᵢ²)`, with the
/// responsibilities evaluated at `x`.
pub fn grad_entries(x: &Matrix, resp: &Responsibilities, params: &GmmParams) -> Result<Matrix> {
    params.check(x, "grad_entries")?;
    check_same_shape(x, resp, "grad_entries")?;
    let count = (x.rows() * x.cols()).max(1) as f64;
    let rows: Vec<Vec<f64>> = (0..x.rows())
        .into_par_iter()
        .map(|i| {
            let (c, var) = (params.center[i], params.variance[i]);
            let scale = 1.0 / (count * var);
            x.row(i)
                .iter()
                .zip(resp.r_plus.row(i))
                .map(|(&v, &rp)| scale * (rp * (v - c) + (1.0 - rp) * (v + c)))
                .collect()
        })
        .collect();
    Matrix::new(x.rows(), x.cols(), rows.concat())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn params(c: &[f64], var: &[f64], floor: f64) -> GmmParams {
        GmmParams {
            center: c.to_vec(),
            variance: var.to_vec(),
            floor_sq: vec![floor; c.len()],
        }
    }

    fn row(v: &[f64]) -> Matrix {
        Matrix::new(1, v.len(), v.to_vec()).unwrap()
    }

    #[test]
    fn responsibility_examples() {
        let p = params(&[1.3], &[0.7], 1e-8);
        let r = responsibilities(&row(&[0.0, 1.3, 50.0 * 0.7f64.sqrt()]), &p).unwrap();
        assert_eq!(r.r_plus[(0, 0)], 0.5);
        let expected = 1.0 / (1.0 + (-2.0 * 1.3f64 * 1.3 / 0.7).exp());
        assert!((r.r_plus[(0, 1)] - expected).abs() < 1e-15);
        assert!((1.0 - r.r_plus[(0, 2)]).abs() < 1e-12);
        let mean = (r.r_plus[(0, 0)] + r.r_plus[(0, 1)] + r.r_plus[(0, 2)]) / 3.0;
        assert!((r.row_means[0] - mean).abs() < 1e-15);
    }

    #[test]
    fn em_exact_fit_hits_floor() {
        let x = row(&[2.0, 2.0, -2.0, -2.0]);
        let resp = Responsibilities {
            r_plus: row(&[1.0, 1.0, 0.0, 0.0]),
            row_means: vec![0.5],
        };
        let p = em_update(&x, &resp, &params(&[1.0], &[1.0], 1e-6)).unwrap();
        assert_eq!(p.center, vec![2.0]);
        assert_eq!(p.variance, vec![1e-6]);
    }

    #[test]
    fn em_degenerate_zero_row() {
        let x = row(&[0.0; 4]);
        let resp = Responsibilities {
            r_plus: row(&[0.5; 4]),
            row_means: vec![0.5],
        };
        let p = em_update(&x, &resp, &params(&[1.0], &[1.0], 1e-6)).unwrap();
        assert_eq!(p.center, vec![0.0]);
        assert_eq!(p.variance, vec![1e-6]);
    }

    #[test]
    fn nll_standard_normal_at_zero() {
        let v = nll(&row(&[0.0]), &params(&[0.0], &[1.0], 1e-8)).unwrap();
        let expected = 0.5 * (2.0 * std::f64::consts::PI).ln();
        assert!((v - expected).abs() < 1e-15);
    }

    #[test]
    fn nll_column_permutation_invariant() {
        let p = params(&[0.8], &[0.3], 1e-8);
        let a = nll(&row(&[0.1, -1.2, 2.5, 0.7]), &p).unwrap();
        let b = nll(&row(&[2.5, 0.7, 0.1, -1.2]), &p).unwrap();
        assert!((a - b).abs() < 1e-15);
    }

    #[test]
    fn regularizer_closed_forms() {
        let mk = |v: f64| Responsibilities {
            r_plus: row(&[v; 4]),
            row_means: vec![v],
        };
        assert_eq!(balance_regularizer(&mk(0.5), 1.0), 0.0);
        assert_eq!(balance_regularizer(&mk(1.0), 1.0), 0.25);
        assert_eq!(balance_regularizer(&mk(0.75), 2.0), 0.125);
    }

    #[test]
    fn gradient_vanishes_at_mode_and_origin() {
        let p = params(&[2.0], &[0.01], 1e-8);
        let x = row(&[2.0, 0.0]);
        let r = responsibilities(&x, &p).unwrap();
        let g = grad_entries(&x, &r, &p).unwrap();
        assert!(g[(0, 0)].abs() < 1e-12);
        assert_eq!(g[(0, 1)], 0.0);
    }

    #[test]
    fn shape_mismatch_rejected() {
        let p = params(&[1.0, 1.0], &[1.0, 1.0], 1e-8);
        assert!(nll(&row(&[1.0]), &p).is_err());
        assert!(responsibilities(&row(&[1.0]), &p).is_err());
    }

    #[test]
    fn init_uses_magnitude_statistics() {
        let p = GmmParams::init(&row(&[1.0, -3.0]), 1e-4);
        assert_eq!(p.center, vec![2.0]);
        assert_eq!(p.variance, vec![1.0]);
        assert!((p.floor_sq[0] - (1e-4f64 * 5f64.sqrt()).powi(2)).abs() < 1e-20);
        let z = GmmParams::init(&Matrix::zeros(2, 3), 1e-4);
        assert!(z.floor_sq.iter().all(|&f| f > 0.0));
    }
}
