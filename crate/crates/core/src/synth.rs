//! Seeded synthetic instances and brute-force reference oracles.
//!
//! All randomness comes from ChaCha20 (`rand_chacha::ChaCha20Rng`) seeded
//! through `SeedableRng::seed_from_u64`, with normals drawn by
//! `rand_distr::StandardNormal`. Both algorithms are fixed, so a given
//! `(spec, seed)` produces bitwise-identical data on every platform.

use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{BwlaError, Result};
use crate::kronecker::{factor_dims, KroneckerRotation};
use crate::numerics::{reshape_row_to_mat, Matrix};

pub fn rng_for(seed: u64) -> ChaCha20Rng {
    ChaCha20Rng::seed_from_u64(seed)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SynthKind {
    /// Row `i` drawn from `N(0, σᵢ²·I)`.
    GaussianRows,
    /// `W = (c·S + noise)·R_trueᵀ` with balanced sign rows `S`.
    PlantedBimodal,
    /// Token rows of unit Gaussians plus sparse `±magnitude` spikes.
    HeavyTailActs,
}

impl SynthKind {
    pub fn as_str(self) -> &'static str {
        match self {
            SynthKind::GaussianRows => "gaussian_rows",
            SynthKind::PlantedBimodal => "planted_bimodal",
            SynthKind::HeavyTailActs => "heavy_tail_acts",
        }
    }
}

impl FromStr for SynthKind {
    type Err = BwlaError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "gaussian" | "gaussian_rows" => Ok(SynthKind::GaussianRows),
            "planted" | "planted_bimodal" => Ok(SynthKind::PlantedBimodal),
            "heavy_tail" | "heavy_tail_acts" => Ok(SynthKind::HeavyTailActs),
            other => Err(BwlaError::InvalidArgument(format!(
                "unknown synth kind `{other}`"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthSpec {
    pub kind: SynthKind,
    pub rows: usize,
    pub cols: usize,
    #[serde(default)]
    pub seed: u64,
    /// Row scales are log-uniform on `[sigma_lo, sigma_hi]`.
    #[serde(default = "one")]
    pub sigma_lo: f64,
    #[serde(default = "one")]
    pub sigma_hi: f64,
    /// Planted mode magnitude.
    #[serde(default = "one")]
    pub center: f64,
    /// Planted additive Gaussian noise level.
    #[serde(default)]
    pub noise: f64,
    #[serde(default = "default_spike_rate")]
    pub spike_rate: f64,
    #[serde(default = "default_spike_magnitude")]
    pub spike_magnitude: f64,
}

fn one() -> f64 {
    1.0
}

fn default_spike_rate() -> f64 {
    0.01
}

fn default_spike_magnitude() -> f64 {
    50.0
}

impl SynthSpec {
    pub fn new(kind: SynthKind, rows: usize, cols: usize, seed: u64) -> Self {
        SynthSpec {
            kind,
            rows,
            cols,
            seed,
            sigma_lo: 1.0,
            sigma_hi: 1.0,
            center: 1.0,
            noise: 0.0,
            spike_rate: default_spike_rate(),
            spike_magnitude: default_spike_magnitude(),
        }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    /// Parses `kind:ROWSxCOLS[,key=value]*`, e.g. `gaussian:128x144` or
    /// `planted:64x72,noise=0.01,c=2`. Keys: `sigma` (`lo..hi` or a single
    /// value), `c`, `noise`, `rate`, `mag`, `seed`.
    pub fn parse(text: &str) -> Result<Self> {
        let bad = |msg: String| BwlaError::InvalidArgument(format!("synth spec `{text}`: {msg}"));
        let (kind, rest) = text
            .split_once(':')
            .ok_or_else(|| bad("expected `kind:ROWSxCOLS`".into()))?;
        let kind: SynthKind = kind.trim().parse()?;
        let mut parts = rest.split(',');
        let dims = parts.next().unwrap_or_default().trim();
        let (r, c) = dims
            .split_once(['x', 'X'])
            .ok_or_else(|| bad(format!("bad dims `{dims}`")))?;
        let parse_dim = |s: &str| {
            s.trim()
                .parse::<usize>()
                .map_err(|_| bad(format!("bad dimension `{s}`")))
        };
        let mut spec = SynthSpec::new(kind, parse_dim(r)?, parse_dim(c)?, 0);
        for part in parts {
            let (key, value) = part
                .split_once('=')
                .ok_or_else(|| bad(format!("expected key=value, got `{part}`")))?;
            let num = |v: &str| {
                v.trim()
                    .parse::<f64>()
                    .map_err(|_| bad(format!("bad number `{v}` for `{key}`")))
            };
            match key.trim() {
                "sigma" => {
                    let (lo, hi) = match value.split_once("..") {
                        Some((lo, hi)) => (num(lo)?, num(hi)?),
                        None => (num(value)?, num(value)?),
                    };
                    spec.sigma_lo = lo;
                    spec.sigma_hi = hi;
                }
                "c" | "center" => spec.center = num(value)?,
                "noise" => spec.noise = num(value)?,
                "rate" | "spike_rate" => spec.spike_rate = num(value)?,
                "mag" | "spike_magnitude" => spec.spike_magnitude = num(value)?,
                "seed" => {
                    spec.seed = value
                        .trim()
                        .parse()
                        .map_err(|_| bad(format!("bad seed `{value}`")))?
                }
                other => return Err(bad(format!("unknown key `{other}`"))),
            }
        }
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(BwlaError::InvalidArgument(format!("synth spec: {msg}")));
        if self.rows == 0 || self.cols == 0 {
            return bad("dimensions must be positive");
        }
        if self.rows.checked_mul(self.cols).is_none_or(|n| n > 1 << 28) {
            return bad("matrix too large");
        }
        let finite = [
            self.sigma_lo,
            self.sigma_hi,
            self.center,
            self.noise,
            self.spike_rate,
            self.spike_magnitude,
        ]
        .iter()
        .all(|v| v.is_finite());
        if !finite {
            return bad("parameters must be finite");
        }
        if !(self.sigma_lo > 0.0 && self.sigma_lo <= self.sigma_hi) {
            return bad("need 0 < sigma_lo <= sigma_hi");
        }
        if self.noise < 0.0 || self.center < 0.0 || self.spike_magnitude < 0.0 {
            return bad("noise, center and spike magnitude must be nonnegative");
        }
        if !(0.0..=1.0).contains(&self.spike_rate) {
            return bad("spike rate must lie in [0, 1]");
        }
        if self.kind == SynthKind::PlantedBimodal && !self.cols.is_multiple_of(2) {
            return bad("planted instances need an even column count for balanced rows");
        }
        Ok(())
    }
}

impl fmt::Display for SynthSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}x{}", self.kind.as_str(), self.rows, self.cols)
    }
}

/// A planted instance with its known answer.
#[derive(Debug, Clone, PartialEq)]
pub struct PlantedInstance {
    pub w: Matrix,
    pub rotation: KroneckerRotation,
    /// `±1` entries; every row has equal counts of each sign.
    pub signs: Matrix,
    pub center: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub enum SynthOutput {
    Weights(Matrix),
    Planted(PlantedInstance),
    /// One token per row.
    Activations(Matrix),
}

impl SynthOutput {
    pub fn matrix(&self) -> &Matrix {
        match self {
            SynthOutput::Weights(m) | SynthOutput::Activations(m) => m,
            SynthOutput::Planted(p) => &p.w,
        }
    }

    pub fn into_matrix(self) -> Matrix {
        match self {
            SynthOutput::Weights(m) | SynthOutput::Activations(m) => m,
            SynthOutput::Planted(p) => p.w,
        }
    }
}

pub fn gen(spec: &SynthSpec) -> Result<SynthOutput> {
    spec.validate()?;
    let mut rng = rng_for(spec.seed);
    Ok(match spec.kind {
        SynthKind::GaussianRows => SynthOutput::Weights(gaussian_rows(spec, &mut rng)),
        SynthKind::PlantedBimodal => SynthOutput::Planted(planted(spec, &mut rng)?),
        SynthKind::HeavyTailActs => SynthOutput::Activations(heavy_tail(spec, &mut rng)),
    })
}

fn normal(rng: &mut ChaCha20Rng) -> f64 {
    rng.sample(StandardNormal)
}

fn gaussian_rows(spec: &SynthSpec, rng: &mut ChaCha20Rng) -> Matrix {
    let (lo, hi) = (spec.sigma_lo.ln(), spec.sigma_hi.ln());
    let mut w = Matrix::zeros(spec.rows, spec.cols);
    for i in 0..spec.rows {
        let sigma = if hi > lo {
            rng.random_range(lo..hi).exp()
        } else {
            spec.sigma_lo
        };
        for v in w.row_mut(i) {
            *v = sigma * normal(rng);
        }
    }
    w
}

fn planted(spec: &SynthSpec, rng: &mut ChaCha20Rng) -> Result<PlantedInstance> {
    let rotation = KroneckerRotation::random(factor_dims(spec.cols), rng);
    let half = spec.cols / 2;
    let mut signs = Matrix::zeros(spec.rows, spec.cols);
    let mut pattern: Vec<f64> = (0..spec.cols)
        .map(|j| if j < half { 1.0 } else { -1.0 })
        .collect();
    for i in 0..spec.rows {
        pattern.shuffle(rng);
        signs.row_mut(i).copy_from_slice(&pattern);
    }
    let mut frame = signs.scale(spec.center);
    if spec.noise > 0.0 {
        for v in frame.data_mut() {
            *v += spec.noise * normal(rng);
        }
    }
    let w = rotation.apply_inverse_to_rows(&frame)?;
    Ok(PlantedInstance {
        w,
        rotation,
        signs,
        center: spec.center,
    })
}

fn heavy_tail(spec: &SynthSpec, rng: &mut ChaCha20Rng) -> Matrix {
    let mut x = Matrix::zeros(spec.rows, spec.cols);
    for v in x.data_mut() {
        *v = normal(rng);
        if rng.random::<f64>() < spec.spike_rate {
            let s = if rng.random::<bool>() { 1.0 } else { -1.0 };
            *v += s * spec.spike_magnitude;
        }
    }
    x
}

/// Dense `A ⊗ B`.
pub fn dense_kron(a: &Matrix, b: &Matrix) -> Matrix {
    let (p, q) = b.shape();
    Matrix::from_fn(a.rows() * p, a.cols() * q, |i, j| {
        a[(i / p, j / q)] * b[(i % p, j % q)]
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum KroneckerFactor {
    R1,
    R2,
}

/// `Σᵢ λᵢ‖R1ᵀ·Vᵢ·R2 − Tᵢ‖²`, the Procrustes subproblem objective for the
/// rows `Vᵢ` of `w_eff` reshaped to `n1 × n2`.
pub fn procrustes_objective(
    w_eff: &Matrix,
    rot: &KroneckerRotation,
    targets: &[Matrix],
    weights: &[f64],
) -> Result<f64> {
    let d = rot.dims();
    let mut total = 0.0;
    for ((row, t), &lambda) in w_eff.row_iter().zip(targets).zip(weights) {
        let v = reshape_row_to_mat(row, d.n1, d.n2)?;
        let fit = rot.r1().transpose().matmul(&v)?.matmul(rot.r2())?;
        total += lambda * fit.sub(t)?.frobenius_norm().powi(2);
    }
    Ok(total)
}

/// Exhaustive scan of the 2×2 rotations and reflections, `step_deg` apart,
/// for the factor minimizing [`procrustes_objective`].
pub fn brute_force_procrustes(
    w_eff: &Matrix,
    rot: &KroneckerRotation,
    targets: &[Matrix],
    weights: &[f64],
    factor: KroneckerFactor,
    step_deg: f64,
) -> Result<Matrix> {
    let d = rot.dims();
    let size = match factor {
        KroneckerFactor::R1 => d.n1,
        KroneckerFactor::R2 => d.n2,
    };
    if size != 2 {
        return Err(BwlaError::InvalidArgument(format!(
            "brute-force scan needs a 2x2 factor, got {size}x{size}"
        )));
    }
    if !(step_deg > 0.0) {
        return Err(BwlaError::InvalidArgument("scan step must be positive".into()));
    }
    let steps = (360.0 / step_deg).ceil() as usize;
    let mut best: Option<(f64, Matrix)> = None;
    for k in 0..steps {
        let theta = (k as f64 * step_deg).to_radians();
        let (s, c) = theta.sin_cos();
        for q in [
            Matrix::new(2, 2, vec![c, -s, s, c])?,
            Matrix::new(2, 2, vec![c, s, s, -c])?,
        ] {
            let candidate = match factor {
                KroneckerFactor::R1 => rot.with_r1(q.clone()),
                KroneckerFactor::R2 => rot.with_r2(q.clone()),
            };
            let value = procrustes_objective(w_eff, &candidate, targets, weights)?;
            if best.as_ref().is_none_or(|(b, _)| value < *b) {
                best = Some((value, q));
            }
        }
    }
    Ok(best.expect("scan is nonempty").1)
}

/// `(f(x + h·d) − f(x − h·d)) / 2h`.
pub fn central_difference(
    f: impl Fn(&Matrix) -> Result<f64>,
    x: &Matrix,
    direction: &Matrix,
    h: f64,
) -> Result<f64> {
    let plus = f(&x.add(&direction.scale(h))?)?;
    let minus = f(&x.sub(&direction.scale(h))?)?;
    Ok((plus - minus) / (2.0 * h))
}

/// Grid minimum of `Σⱼ (|wⱼ| − α)²` over `steps + 1` points of `[lo, hi]`.
pub fn alpha_grid_min(row: &[f64], lo: f64, hi: f64, steps: usize) -> (f64, f64) {
    let err = |a: f64| row.iter().map(|w| (w.abs() - a).powi(2)).sum::<f64>();
    (0..=steps)
        .map(|k| lo + (hi - lo) * k as f64 / steps.max(1) as f64)
        .map(|a| (a, err(a)))
        .fold((lo, f64::INFINITY), |best, cur| if cur.1 < best.1 { cur } else { best })
}

/// Random Gaussian vector of length `n`.
pub fn gaussian_vec(n: usize, rng: &mut impl Rng) -> Vec<f64> {
    (0..n).map(|_| rng.sample(StandardNormal)).collect()
}

/// Random Gaussian matrix.
pub fn gaussian_matrix(rows: usize, cols: usize, rng: &mut impl Rng) -> Matrix {
    Matrix::from_fn(rows, cols, |_, _| rng.sample(StandardNormal))
}
