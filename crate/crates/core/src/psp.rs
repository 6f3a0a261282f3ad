//! Proximal SVD projection: a rank-`k` residual `M = A·B` refined so that the
//! centered rotated weights `T_R(W − M)` fit the row mixtures better.
//!
//! Each step forms the proximal point `Y = M − (1/μ)·∇_M L`, projects it to
//! rank `k` with a truncated SVD and accepts the result only if the loss did
//! not rise; otherwise `μ` doubles and the projection is retried.
//!
//! Sign convention: `X = T_R(W − M)` so `∇_M L = −T_R*(G_X)`, where
//! `T_R*(G) = G·H·Rᵀ` is the adjoint returned by [`adjoint_gradient`].

use crate::error::{BwlaError, Result};
use crate::gmm::{self, GmmParams};
use crate::kronecker::KroneckerRotation;
use crate::numerics::{truncated_svd, Matrix};
use crate::okt::{center_rows, okt_project, LossRecord, Phase};

/// Rank for a residual on an `oc × ic` weight: `round(ratio·min(oc, ic))`,
/// at least 1 and at most `min(oc, ic)`.
pub fn rank_for(oc: usize, ic: usize, rank_ratio: f64) -> usize {
    let p = oc.min(ic);
    ((rank_ratio * p as f64).round() as usize).clamp(1, p.max(1))
}

#[derive(Debug, Clone, PartialEq)]
pub struct LowRankResidual {
    a: Matrix,
    b: Matrix,
    k: usize,
    product: Matrix,
}

impl LowRankResidual {
    pub fn zeros(oc: usize, ic: usize, k: usize) -> Self {
        LowRankResidual {
            a: Matrix::zeros(oc, k),
            b: Matrix::zeros(k, ic),
            k,
            product: Matrix::zeros(oc, ic),
        }
    }

    pub fn from_factors(a: Matrix, b: Matrix) -> Result<Self> {
        if a.cols() != b.rows() {
            return Err(BwlaError::shape("LowRankResidual", a.cols(), b.rows()));
        }
        let k = a.cols();
        let product = a.matmul(&b)?;
        Ok(LowRankResidual { a, b, k, product })
    }

    pub fn a(&self) -> &Matrix {
        &self.a
    }

    pub fn b(&self) -> &Matrix {
        &self.b
    }

    pub fn k(&self) -> usize {
        self.k
    }

    /// Materialized `M = A·B`.
    pub fn matrix(&self) -> &Matrix {
        &self.product
    }

    /// Stored parameters, `k·(oc + ic)`.
    pub fn param_count(&self) -> usize {
        self.k * (self.a.rows() + self.b.cols())
    }

    /// `M·x = A·(B·x)`.
    pub fn apply(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.a.matvec(&self.b.matvec(x)?)
    }

    pub fn is_zero(&self) -> bool {
        self.product.max_abs() == 0.0
    }
}

/// Balanced factorization `A = U_k·Σ_k^½`, `B = Σ_k^½·V_kᵀ` of the rank-`k`
/// projection of `m`.
pub fn factor_residual(m: &Matrix, k: usize) -> Result<LowRankResidual> {
    let d = truncated_svd(m, k)?;
    let roots: Vec<f64> = d.s.iter().map(|s| s.sqrt()).collect();
    let mut a = d.u;
    for i in 0..a.rows() {
        for (v, r) in a.row_mut(i).iter_mut().zip(&roots) {
            *v *= r;
        }
    }
    let mut b = d.vt;
    for (i, r) in roots.iter().enumerate() {
        b.row_mut(i).iter_mut().for_each(|v| *v *= r);
    }
    LowRankResidual::from_factors(a, b)
}

/// Adjoint of `T_R`: `G_X·H·Rᵀ`.
pub fn adjoint_gradient(g_x: &Matrix, rot: &KroneckerRotation) -> Result<Matrix> {
    if g_x.cols() != rot.m() {
        return Err(BwlaError::shape("adjoint_gradient", rot.m(), g_x.cols()));
    }
    rot.apply_inverse_to_rows(&center_rows(g_x).x)
}

/// `nll(T_R(W − M))`.
pub fn residual_loss(
    w: &Matrix,
    m: &Matrix,
    rot: &KroneckerRotation,
    params: &GmmParams,
) -> Result<f64> {
    gmm::nll(&okt_project(&w.sub(m)?, rot)?.x, params)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PspOptions {
    pub lambda_reg: f64,
    pub max_doublings: usize,
    /// Consecutive accepted steps before `μ` is halved.
    pub relax_after: usize,
    /// Refit the mixture by one EM update at the start of every step.
    pub refresh_em: bool,
}

impl Default for PspOptions {
    fn default() -> Self {
        PspOptions {
            lambda_reg: 0.01,
            max_doublings: 30,
            relax_after: 3,
            refresh_em: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PspState {
    pub residual: LowRankResidual,
    pub params: GmmParams,
    /// Proximal parameter; `None` until the first step picks the curvature
    /// bound.
    pub mu: Option<f64>,
    pub iteration: usize,
    pub loss_history: Vec<LossRecord>,
    pub consecutive_successes: usize,
    /// Steps whose descent check never passed.
    pub rejected_steps: usize,
}

impl PspState {
    /// Starts from `M₀ = 0` with the given mixture parameters.
    pub fn new(
        w: &Matrix,
        rot: &KroneckerRotation,
        params: GmmParams,
        k: usize,
        opts: &PspOptions,
    ) -> Result<Self> {
        let p = w.rows().min(w.cols());
        if k == 0 || k > p {
            return Err(BwlaError::InvalidArgument(format!(
                "residual rank {k} outside 1..={p}"
            )));
        }
        let residual = LowRankResidual::zeros(w.rows(), w.cols(), k);
        let x = okt_project(w, rot)?;
        let resp = gmm::responsibilities(&x.x, &params)?;
        let nll = gmm::nll(&x.x, &params)?;
        let record = LossRecord {
            phase: Phase::Psp,
            iteration: 0,
            nll,
            regularizer: gmm::balance_regularizer(&resp, opts.lambda_reg),
            surrogate: nll,
        };
        Ok(PspState {
            residual,
            params,
            mu: None,
            iteration: 0,
            loss_history: vec![record],
            consecutive_successes: 0,
            rejected_steps: 0,
        })
    }

    pub fn last_record(&self) -> &LossRecord {
        self.loss_history.last().expect("history starts non-empty")
    }
}

/// Largest curvature of the loss in `X`: every entry's second derivative is
/// at most `1/(n·m·σᵢ²)`, and `T_R` is non-expansive.
pub fn curvature_bound(params: &GmmParams, n: usize, m: usize) -> f64 {
    let min_var = params
        .variance
        .iter()
        .cloned()
        .fold(f64::INFINITY, f64::min);
    1.0 / ((n * m).max(1) as f64 * min_var)
}

/// One proximal step on the residual.
pub fn psp_step(
    w: &Matrix,
    state: &PspState,
    rot: &KroneckerRotation,
    opts: &PspOptions,
) -> Result<PspState> {
    let m_t = state.residual.matrix();
    let x = okt_project(&w.sub(m_t)?, rot)?;

    let params = if opts.refresh_em {
        let resp = gmm::responsibilities(&x.x, &state.params)?;
        gmm::em_update(&x.x, &resp, &state.params)?
    } else {
        state.params.clone()
    };

    let loss_t = gmm::nll(&x.x, &params)?;
    let resp = gmm::responsibilities(&x.x, &params)?;
    let g_x = gmm::grad_entries(&x.x, &resp, &params)?;
    // descent direction for M is +T_R*(G_X)
    let ascent = adjoint_gradient(&g_x, rot)?.scale(-1.0);

    let mut mu = state
        .mu
        .unwrap_or_else(|| curvature_bound(&params, w.rows(), w.cols()));
    let negligible = 1e-13 * w.frobenius_norm().max(f64::MIN_POSITIVE);

    let mut accepted: Option<(LowRankResidual, f64, f64)> = None;
    if ascent.max_abs() > 0.0 {
        for _ in 0..=opts.max_doublings {
            let y = m_t.sub(&ascent.scale(1.0 / mu))?;
            let candidate = factor_residual(&y, state.residual.k())?;
            let delta = candidate.matrix().sub(m_t)?;
            if delta.frobenius_norm() <= negligible {
                break;
            }
            let loss = residual_loss(w, candidate.matrix(), rot, &params)?;
            if loss <= loss_t {
                let inner: f64 = ascent
                    .data()
                    .iter()
                    .zip(delta.data())
                    .map(|(g, d)| g * d)
                    .sum();
                let majorizer = loss_t + inner + 0.5 * mu * delta.frobenius_norm().powi(2);
                accepted = Some((candidate, loss, majorizer));
                break;
            }
            mu *= 2.0;
        }
    }

    let mut next = state.clone();
    next.iteration += 1;
    next.params = params;
    let (residual, loss, surrogate) = match accepted {
        Some((residual, loss, majorizer)) => {
            next.consecutive_successes += 1;
            if next.consecutive_successes >= opts.relax_after.max(1) {
                mu *= 0.5;
                next.consecutive_successes = 0;
            }
            (residual, loss, majorizer)
        }
        None => {
            if ascent.max_abs() > 0.0 {
                log::debug!("psp step {} made no progress (mu = {mu:e})", next.iteration);
                next.rejected_steps += 1;
            }
            next.consecutive_successes = 0;
            (state.residual.clone(), loss_t, loss_t)
        }
    };
    next.mu = Some(mu);
    let x_new = okt_project(&w.sub(residual.matrix())?, rot)?;
    let resp_new = gmm::responsibilities(&x_new.x, &next.params)?;
    next.loss_history.push(LossRecord {
        phase: Phase::Psp,
        iteration: next.iteration,
        nll: loss,
        regularizer: gmm::balance_regularizer(&resp_new, opts.lambda_reg),
        surrogate,
    });
    next.residual = residual;
    Ok(next)
}
