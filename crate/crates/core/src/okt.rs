//! Orthogonal-Kronecker transformation: alternate EM updates of the row
//! mixtures with majorize-minimize Procrustes updates of `R1` and `R2`.
//!
//! For fixed mixture parameters and anchor responsibilities `r⁺`, Jensen's
//! inequality bounds each entry's negative log-likelihood by
//! `(x − m)²/(2σ²) + const` with `m = (2r⁺ − 1)·c`, tight at the anchor. The
//! weighted least-squares surrogate therefore majorizes the objective, and any
//! rotation that does not increase it does not increase the likelihood loss.
//!
//! The Procrustes step maximizes `Σᵢ λᵢ⟨wᵢR, mᵢH⟩`, which ignores the
//! `−m·x̄ᵢ²` term that centering adds to the surrogate. Each factor update is
//! therefore accepted only when the exact centered surrogate does not rise.

use crate::error::{BwlaError, Result};
use crate::gmm::{self, GmmParams, Responsibilities};
use rand::SeedableRng;

use crate::kronecker::{random_orthogonal, KroneckerDims, KroneckerRotation};
use crate::numerics::{polar_orthogonal, reshape_row_to_mat, Matrix};

/// Which optimizer produced a loss record.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Phase {
    Okt,
    Psp,
}

impl Phase {
    pub fn as_str(self) -> &'static str {
        match self {
            Phase::Okt => "okt",
            Phase::Psp => "psp",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct LossRecord {
    pub phase: Phase,
    pub iteration: usize,
    pub nll: f64,
    pub regularizer: f64,
    pub surrogate: f64,
}

impl LossRecord {
    pub fn total(&self) -> f64 {
        self.nll + self.regularizer
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OktOptions {
    pub lambda_reg: f64,
    pub sigma_min_rel: f64,
    /// Early stop once the relative nll change stays below this for
    /// `patience` consecutive iterations. Zero disables early stopping.
    pub early_stop_tol: f64,
    pub patience: usize,
}

impl Default for OktOptions {
    fn default() -> Self {
        OktOptions {
            lambda_reg: 0.01,
            sigma_min_rel: 1e-4,
            early_stop_tol: 1e-6,
            patience: 3,
        }
    }
}

/// Row-centered rotated weights.
#[derive(Debug, Clone, PartialEq)]
pub struct CenteredView {
    pub x: Matrix,
}

/// Applies `H = I − 𝟙𝟙ᵀ/m` to every row.
pub fn center_rows(wr: &Matrix) -> CenteredView {
    let mut x = wr.clone();
    let m = x.cols();
    if m > 0 {
        for i in 0..x.rows() {
            let row = x.row_mut(i);
            let mean = row.iter().sum::<f64>() / m as f64;
            row.iter_mut().for_each(|v| *v -= mean);
        }
    }
    CenteredView { x }
}

/// `T_R(W) = (W·R)·H`.
pub fn okt_project(w: &Matrix, rot: &KroneckerRotation) -> Result<CenteredView> {
    Ok(center_rows(&rot.apply_to_rows(w)?))
}

/// `(1/nm)·Σᵢ λᵢ Σⱼ (xᵢⱼ − mᵢⱼ)²` with `λᵢ = σᵢ⁻²` and
/// `mᵢⱼ = (2r⁺ᵢⱼ − 1)·cᵢ`.
pub fn mm_surrogate(x: &CenteredView, resp: &Responsibilities, params: &GmmParams) -> Result<f64> {
    let x = &x.x;
    if x.shape() != resp.r_plus.shape() || params.rows() != x.rows() {
        return Err(BwlaError::shape(
            "mm_surrogate",
            format!("{:?}", x.shape()),
            format!("{:?}", resp.r_plus.shape()),
        ));
    }
    let count = (x.rows() * x.cols()).max(1) as f64;
    let mut total = 0.0;
    for i in 0..x.rows() {
        let c = params.center[i];
        let row: f64 = x
            .row(i)
            .iter()
            .zip(resp.r_plus.row(i))
            .map(|(&v, &rp)| (v - (2.0 * rp - 1.0) * c).powi(2))
            .sum();
        total += row / params.variance[i];
    }
    Ok(total / count)
}

/// Posterior-mean targets per row, centered and reshaped to `n1 × n2`.
pub fn procrustes_targets(
    resp: &Responsibilities,
    params: &GmmParams,
    rot: &KroneckerRotation,
) -> Result<Vec<Matrix>> {
    let dims = rot.dims();
    let means = center_rows(&resp.posterior_means(params)).x;
    means
        .row_iter()
        .map(|r| reshape_row_to_mat(r, dims.n1, dims.n2))
        .collect()
}

fn check_problem(
    w_eff: &Matrix,
    rot: &KroneckerRotation,
    targets: &[Matrix],
    weights: &[f64],
    context: &'static str,
) -> Result<()> {
    if w_eff.cols() != rot.m() {
        return Err(BwlaError::shape(context, rot.m(), w_eff.cols()));
    }
    if targets.len() != w_eff.rows() || weights.len() != w_eff.rows() {
        return Err(BwlaError::shape(context, w_eff.rows(), targets.len()));
    }
    let d = rot.dims();
    if let Some(t) = targets.iter().find(|t| t.shape() != (d.n1, d.n2)) {
        return Err(BwlaError::shape(
            context,
            format!("{}x{} target", d.n1, d.n2),
            format!("{}x{}", t.rows(), t.cols()),
        ));
    }
    Ok(())
}

fn polar_or_identity(c: Matrix) -> Result<Matrix> {
    if c.max_abs() == 0.0 {
        return Ok(Matrix::identity(c.rows()));
    }
    polar_orthogonal(&c)
}

/// With `R2` fixed, `R1 = polar(Σᵢ λᵢ·Vᵢ·R2·Mᵢᵀ)`, the global minimizer of
/// `Σᵢ λᵢ‖R1ᵀVᵢR2 − Mᵢ‖²` over orthogonal `R1`.
pub fn procrustes_update_r1(
    w_eff: &Matrix,
    rot: &KroneckerRotation,
    targets: &[Matrix],
    weights: &[f64],
) -> Result<Matrix> {
    check_problem(w_eff, rot, targets, weights, "procrustes_update_r1")?;
    let d = rot.dims();
    let mut cross = Matrix::zeros(d.n1, d.n1);
    for ((row, target), &lambda) in w_eff.row_iter().zip(targets).zip(weights) {
        let v = reshape_row_to_mat(row, d.n1, d.n2)?;
        let vr2 = v.matmul(rot.r2())?;
        accumulate(&mut cross, &vr2.matmul(&target.transpose())?, lambda);
    }
    polar_or_identity(cross)
}

/// With `R1` fixed, `R2 = polar(Σᵢ λᵢ·Vᵢᵀ·R1·Mᵢ)`.
pub fn procrustes_update_r2(
    w_eff: &Matrix,
    rot: &KroneckerRotation,
    targets: &[Matrix],
    weights: &[f64],
) -> Result<Matrix> {
    check_problem(w_eff, rot, targets, weights, "procrustes_update_r2")?;
    let d = rot.dims();
    let mut cross = Matrix::zeros(d.n2, d.n2);
    for ((row, target), &lambda) in w_eff.row_iter().zip(targets).zip(weights) {
        let v = reshape_row_to_mat(row, d.n1, d.n2)?;
        let r1m = rot.r1().matmul(target)?;
        accumulate(&mut cross, &v.transpose().matmul(&r1m)?, lambda);
    }
    polar_or_identity(cross)
}

fn accumulate(acc: &mut Matrix, term: &Matrix, weight: f64) {
    for (a, t) in acc.data_mut().iter_mut().zip(term.data()) {
        *a += weight * t;
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OktState {
    pub rotation: KroneckerRotation,
    pub params: GmmParams,
    pub iteration: usize,
    pub loss_history: Vec<LossRecord>,
}

impl OktState {
    /// Fits initial mixture parameters to the centered rotated weights and
    /// records iteration 0.
    pub fn new(w_eff: &Matrix, rotation: KroneckerRotation, opts: &OktOptions) -> Result<Self> {
        let x = okt_project(w_eff, &rotation)?;
        let params = GmmParams::init(&x.x, opts.sigma_min_rel);
        let resp = gmm::responsibilities(&x.x, &params)?;
        let record = LossRecord {
            phase: Phase::Okt,
            iteration: 0,
            nll: gmm::nll(&x.x, &params)?,
            regularizer: gmm::balance_regularizer(&resp, opts.lambda_reg),
            surrogate: mm_surrogate(&x, &resp, &params)?,
        };
        Ok(OktState {
            rotation,
            params,
            iteration: 0,
            loss_history: vec![record],
        })
    }

    pub fn last_record(&self) -> &LossRecord {
        self.loss_history.last().expect("history starts non-empty")
    }
}

/// One outer iteration: EM on the current rotation, then `R1` and `R2`
/// Procrustes updates against targets from the refreshed responsibilities.
pub fn okt_step(w_eff: &Matrix, state: &OktState, opts: &OktOptions) -> Result<OktState> {
    let rot = &state.rotation;
    let x = okt_project(w_eff, rot)?;

    let resp = gmm::responsibilities(&x.x, &state.params)?;
    let params = gmm::em_update(&x.x, &resp, &state.params)?;

    // MM anchor under the new parameters
    let anchor = gmm::responsibilities(&x.x, &params)?;
    let targets = procrustes_targets(&anchor, &params, rot)?;
    let weights = params.precisions();
    let mut surrogate = mm_surrogate(&x, &anchor, &params)?;

    let mut current = rot.clone();
    let r1 = procrustes_update_r1(w_eff, &current, &targets, &weights)?;
    let candidate = current.with_r1(r1).reorthogonalize()?;
    let s = mm_surrogate(&okt_project(w_eff, &candidate)?, &anchor, &params)?;
    if s <= surrogate {
        current = candidate;
        surrogate = s;
    }

    let r2 = procrustes_update_r2(w_eff, &current, &targets, &weights)?;
    let candidate = current.with_r2(r2).reorthogonalize()?;
    let s = mm_surrogate(&okt_project(w_eff, &candidate)?, &anchor, &params)?;
    if s <= surrogate {
        current = candidate;
        surrogate = s;
    }

    let x_new = okt_project(w_eff, &current)?;
    let resp_new = gmm::responsibilities(&x_new.x, &params)?;
    let record = LossRecord {
        phase: Phase::Okt,
        iteration: state.iteration + 1,
        nll: gmm::nll(&x_new.x, &params)?,
        regularizer: gmm::balance_regularizer(&resp_new, opts.lambda_reg),
        surrogate,
    };
    let mut loss_history = state.loss_history.clone();
    loss_history.push(record);
    Ok(OktState {
        rotation: current,
        params,
        iteration: state.iteration + 1,
        loss_history,
    })
}

/// Runs up to `iters` steps, stopping early on a plateau.
pub fn run_okt(
    w_eff: &Matrix,
    init: KroneckerRotation,
    iters: usize,
    opts: &OktOptions,
) -> Result<OktState> {
    let mut state = OktState::new(w_eff, init, opts)?;
    let mut flat = 0usize;
    for _ in 0..iters {
        let next = okt_step(w_eff, &state, opts)?;
        let prev = state.last_record().nll;
        let cur = next.last_record().nll;
        state = next;
        if opts.early_stop_tol > 0.0 {
            if (prev - cur).abs() <= opts.early_stop_tol * prev.abs().max(1.0) {
                flat += 1;
                if flat >= opts.patience.max(1) {
                    break;
                }
            } else {
                flat = 0;
            }
        }
    }
    Ok(state)
}

/// Mean over rows of `std(|xᵢⱼ|) / mean(|xᵢⱼ|)`. Rows without magnitude
/// contribute zero.
pub fn magnitude_cv(x: &Matrix) -> f64 {
    if x.rows() == 0 || x.cols() == 0 {
        return 0.0;
    }
    let m = x.cols() as f64;
    let total: f64 = x
        .row_iter()
        .map(|row| {
            let mean = row.iter().map(|v| v.abs()).sum::<f64>() / m;
            if mean == 0.0 {
                return 0.0;
            }
            let var = row.iter().map(|v| (v.abs() - mean).powi(2)).sum::<f64>() / m;
            var.sqrt() / mean
        })
        .sum();
    total / x.rows() as f64
}

/// Initial factors from a cubic-contrast FastICA on the reshaped rows.
///
/// Writing `V = R1·X·R2ᵀ` for each reshaped row, the columns of `V·R2` are
/// `R1` applied to columns of `X`, and the rows of `R1ᵀ·V` are `R2` applied
/// to rows of `X`. When `X` is sign-like those are vectors of independent
/// non-Gaussian entries, so a kurtosis search on the `n·n2` column samples
/// recovers `R1` up to a signed permutation, and likewise for `R2`. The two
/// searches alternate, each using the other factor's latest estimate, and
/// Givens sweeps on `Σx⁴` over both factors then polish the result.
///
/// Fixed-seed restarts keep the flattest result (smallest
/// `Σx⁴/(Σx²)²`). Finally the factor column signs are chosen so that the
/// rows of `X` sum as close to zero as possible: sign flips leave `|X|`
/// unchanged, but only balanced rows stay bimodal after centering.
/// Deterministic.
pub fn kurtosis_init(w: &Matrix, dims: KroneckerDims) -> Result<KroneckerRotation> {
    const ROUNDS: usize = 12;
    const RESTARTS: usize = 24;
    if w.cols() != dims.m() {
        return Err(BwlaError::shape("kurtosis_init", dims.m(), w.cols()));
    }
    let (n1, n2) = (dims.n1, dims.n2);
    let mats: Vec<Matrix> = w
        .row_iter()
        .map(|r| reshape_row_to_mat(r, n1, n2))
        .collect::<Result<_>>()?;
    let mut rng = rand_chacha::ChaCha20Rng::seed_from_u64(0x6b75_7274_6f73_6973);
    let mut best: Option<(f64, Matrix, Matrix)> = None;
    for restart in 0..RESTARTS {
        let mut r1 = Matrix::identity(n1);
        let mut r2 = if restart == 0 {
            Matrix::identity(n2)
        } else {
            random_orthogonal(n2, &mut rng)
        };
        for _ in 0..ROUNDS {
            let mut cols = Matrix::zeros(mats.len() * n2, n1);
            for (i, v) in mats.iter().enumerate() {
                let t = v.matmul(&r2)?;
                for a in 0..n1 {
                    for b in 0..n2 {
                        cols[(i * n2 + b, a)] = t[(a, b)];
                    }
                }
            }
            r1 = fast_ica(cols)?;
            let mut rows = Matrix::zeros(mats.len() * n1, n2);
            let r1t = r1.transpose();
            for (i, v) in mats.iter().enumerate() {
                let t = r1t.matmul(v)?;
                for a in 0..n1 {
                    rows.row_mut(i * n1 + a).copy_from_slice(t.row(a));
                }
            }
            r2 = fast_ica(rows)?;
        }
        let mut frames: Vec<Matrix> = mats
            .iter()
            .map(|v| r1.transpose().matmul(v)?.matmul(&r2))
            .collect::<Result<_>>()?;
        jacobi_quartic(&mut frames, &mut r1, &mut r2);
        let (mut s2, mut s4) = (0.0, 0.0);
        for x in frames.iter().flat_map(|f| f.data()) {
            s2 += x * x;
            s4 += x.powi(4);
        }
        let score = if s2 > 0.0 { s4 / (s2 * s2) } else { 0.0 };
        if best.as_ref().is_none_or(|(b, _, _)| score < *b) {
            best = Some((score, r1, r2));
        }
        // equal magnitudes everywhere is the floor of the contrast
        let floor = 1.0 / (mats.len() * dims.m()) as f64;
        if dims.n2 == 1 || score <= floor * (1.0 + 1e-3) {
            break;
        }
    }
    let (_, r1, r2) = best.expect("at least one restart");
    let frames: Vec<Matrix> = mats
        .iter()
        .map(|v| r1.transpose().matmul(v)?.matmul(&r2))
        .collect::<Result<_>>()?;
    let (d1, d2) = balancing_signs(&frames);
    let flip = |r: &Matrix, d: &[f64]| Matrix::from_fn(r.rows(), r.cols(), |i, j| r[(i, j)] * d[j]);
    KroneckerRotation::new(flip(&r1, &d1), flip(&r2, &d2))
}

/// Givens sweeps over both factors, each pair rotated to the exact minimizer
/// of `Σ x⁴` over the frames `Xᵢ = R1ᵀ·Vᵢ·R2`, until a sweep gains nothing.
fn jacobi_quartic(frames: &mut [Matrix], r1: &mut Matrix, r2: &mut Matrix) {
    // (a cosθ + b sinθ)⁴ + (b cosθ − a sinθ)⁴ only has a 4θ harmonic, so
    // three samples of the pair objective fix it
    fn best_angle(pairs: &[(f64, f64)]) -> f64 {
        let f = |t: f64| -> f64 {
            let (s, c) = t.sin_cos();
            pairs
                .iter()
                .map(|&(a, b)| (c * a + s * b).powi(4) + (c * b - s * a).powi(4))
                .sum()
        };
        let (f0, f1, f2) = (f(0.0), f(std::f64::consts::FRAC_PI_8), f(std::f64::consts::FRAC_PI_4));
        let mean = 0.5 * (f0 + f2);
        let (b, c) = (0.5 * (f0 - f2), f1 - mean);
        if (b * b + c * c).sqrt() <= 1e-14 * mean.abs().max(f64::MIN_POSITIVE) {
            return 0.0;
        }
        (c.atan2(b) + std::f64::consts::PI) / 4.0
    }
    fn rotate_cols(r: &mut Matrix, p: usize, q: usize, t: f64) {
        let (s, c) = t.sin_cos();
        for i in 0..r.rows() {
            let (a, b) = (r[(i, p)], r[(i, q)]);
            r[(i, p)] = c * a + s * b;
            r[(i, q)] = c * b - s * a;
        }
    }
    const TOL: f64 = 1e-10;
    let (n1, n2) = frames.first().map_or((0, 0), |f| f.shape());
    for _ in 0..200 {
        let mut moved = false;
        for p in 0..n1 {
            for q in p + 1..n1 {
                let pairs: Vec<(f64, f64)> = frames
                    .iter()
                    .flat_map(|x| (0..n2).map(move |b| (x[(p, b)], x[(q, b)])))
                    .collect();
                let t = best_angle(&pairs);
                if t.abs() > TOL {
                    moved = true;
                    let (s, c) = t.sin_cos();
                    for x in frames.iter_mut() {
                        for b in 0..n2 {
                            let (u, v) = (x[(p, b)], x[(q, b)]);
                            x[(p, b)] = c * u + s * v;
                            x[(q, b)] = c * v - s * u;
                        }
                    }
                    rotate_cols(r1, p, q, t);
                }
            }
        }
        for p in 0..n2 {
            for q in p + 1..n2 {
                let pairs: Vec<(f64, f64)> = frames
                    .iter()
                    .flat_map(|x| (0..n1).map(move |a| (x[(a, p)], x[(a, q)])))
                    .collect();
                let t = best_angle(&pairs);
                if t.abs() > TOL {
                    moved = true;
                    let (s, c) = t.sin_cos();
                    for x in frames.iter_mut() {
                        for a in 0..n1 {
                            let (u, v) = (x[(a, p)], x[(a, q)]);
                            x[(a, p)] = c * u + s * v;
                            x[(a, q)] = c * v - s * u;
                        }
                    }
                    rotate_cols(r2, p, q, t);
                }
            }
        }
        if !moved {
            break;
        }
    }
}

/// Signs `d1`, `d2` minimizing `Σᵢ (d1ᵀ·Xᵢ·d2)²` by alternating exact
/// minimization over each sign vector (exhaustive up to 20 entries, single
/// flips beyond).
fn balancing_signs(frames: &[Matrix]) -> (Vec<f64>, Vec<f64>) {
    const STARTS: u64 = 64;
    let (n1, n2) = frames.first().map_or((0, 0), |f| f.shape());
    let scale: f64 = frames.iter().map(|x| x.data().iter().map(|v| v * v).sum::<f64>()).sum();
    let mut best: Option<(f64, Vec<f64>, Vec<f64>)> = None;
    let mut rng = rand_chacha::ChaCha20Rng::seed_from_u64(0x7369_676e);
    for start in 0..STARTS {
        let d2: Vec<f64> = (0..n2)
            .map(|b| if start == 0 || b == 0 || rand::Rng::random::<bool>(&mut rng) { 1.0 } else { -1.0 })
            .collect();
        let (value, d1, d2) = alternate_signs(frames, vec![1.0; n1], d2);
        if best.as_ref().is_none_or(|(v, _, _)| value < *v) {
            best = Some((value, d1, d2));
        }
        if value <= 1e-20 * scale {
            break;
        }
    }
    best.map(|(_, d1, d2)| (d1, d2)).unwrap_or_default()
}

fn alternate_signs(frames: &[Matrix], mut d1: Vec<f64>, mut d2: Vec<f64>) -> (f64, Vec<f64>, Vec<f64>) {
    let (n1, n2) = (d1.len(), d2.len());
    let objective = |d1: &[f64], d2: &[f64]| -> f64 {
        frames
            .iter()
            .map(|x| {
                let mut s = 0.0;
                for a in 0..n1 {
                    for b in 0..n2 {
                        s += d1[a] * x[(a, b)] * d2[b];
                    }
                }
                s * s
            })
            .sum()
    };
    let mut current = objective(&d1, &d2);
    for _ in 0..20 {
        // y_i = X_i·d2, Q = Σ y_i y_iᵀ
        let gram = |vecs: Vec<Vec<f64>>, n: usize| {
            let mut q = vec![0.0; n * n];
            for y in &vecs {
                for a in 0..n {
                    for b in 0..n {
                        q[a * n + b] += y[a] * y[b];
                    }
                }
            }
            q
        };
        let ys: Vec<Vec<f64>> = frames
            .iter()
            .map(|x| (0..n1).map(|a| (0..n2).map(|b| x[(a, b)] * d2[b]).sum()).collect())
            .collect();
        d1 = minimize_sign_quadratic(&gram(ys, n1), n1, &d1);
        let zs: Vec<Vec<f64>> = frames
            .iter()
            .map(|x| (0..n2).map(|b| (0..n1).map(|a| d1[a] * x[(a, b)]).sum()).collect())
            .collect();
        d2 = minimize_sign_quadratic(&gram(zs, n2), n2, &d2);
        let next = objective(&d1, &d2);
        if next >= current {
            break;
        }
        current = next;
    }
    (current, d1, d2)
}

/// `argmin dᵀQd` over `d ∈ {±1}ⁿ`; never worse than `start`.
fn minimize_sign_quadratic(q: &[f64], n: usize, start: &[f64]) -> Vec<f64> {
    let value = |d: &[f64]| -> f64 {
        (0..n)
            .map(|a| d[a] * (0..n).map(|b| q[a * n + b] * d[b]).sum::<f64>())
            .sum()
    };
    let mut best = start.to_vec();
    let mut best_val = value(&best);
    if n <= 20 && n > 1 {
        // Gray-code walk over the 2^(n−1) patterns with d[0] = +1
        let mut d = vec![1.0; n];
        let mut qd: Vec<f64> = (0..n).map(|a| (0..n).map(|b| q[a * n + b]).sum()).collect();
        let mut val = value(&d);
        for step in 1u64..(1u64 << (n - 1)) {
            let k = step.trailing_zeros() as usize + 1;
            // flipping d_k changes dᵀQd by −4·d_k·(Qd)_k + 4·Q_kk
            val += -4.0 * d[k] * qd[k] + 4.0 * q[k * n + k];
            let old = d[k];
            d[k] = -old;
            for (a, v) in qd.iter_mut().enumerate() {
                *v -= 2.0 * old * q[a * n + k];
            }
            if val < best_val - 1e-12 * best_val.abs() {
                best_val = value(&d);
                best = d.clone();
            }
        }
    } else {
        let mut improved = true;
        while improved {
            improved = false;
            for k in 0..n {
                best[k] = -best[k];
                let v = value(&best);
                if v < best_val {
                    best_val = v;
                    improved = true;
                } else {
                    best[k] = -best[k];
                }
            }
        }
    }
    best
}

/// Orthogonal mixing matrix whose columns are the maximally non-Gaussian
/// directions of the sample rows of `z`.
fn fast_ica(mut z: Matrix) -> Result<Matrix> {
    const MAX_ITERS: usize = 500;
    let (count, d) = z.shape();
    if d == 1 || count == 0 {
        return Ok(Matrix::identity(d));
    }
    let mean: Vec<f64> = (0..d)
        .map(|j| z.column(j).iter().sum::<f64>() / count as f64)
        .collect();
    for i in 0..count {
        for (v, mu) in z.row_mut(i).iter_mut().zip(&mean) {
            *v -= mu;
        }
    }
    let rms = (z.data().iter().map(|v| v * v).sum::<f64>() / (count * d) as f64).sqrt();
    if rms == 0.0 {
        return Ok(Matrix::identity(d));
    }
    let z = z.scale(1.0 / rms);
    let mut b = Matrix::identity(d);
    for _ in 0..MAX_ITERS {
        let y = z.matmul(&b.transpose())?;
        let mut next = b.scale(-3.0);
        for t in 0..count {
            let zt = z.row(t);
            for k in 0..d {
                let g = y[(t, k)].powi(3) / count as f64;
                for (dst, &zv) in next.row_mut(k).iter_mut().zip(zt) {
                    *dst += g * zv;
                }
            }
        }
        if next.max_abs() == 0.0 {
            break;
        }
        let next = polar_orthogonal(&next)?;
        let change = (0..d)
            .map(|k| {
                let c: f64 = next.row(k).iter().zip(b.row(k)).map(|(p, q)| p * q).sum();
                1.0 - c.abs()
            })
            .fold(0.0, f64::max);
        b = next;
        if change < 1e-13 {
            break;
        }
    }
    Ok(b.transpose())
}
