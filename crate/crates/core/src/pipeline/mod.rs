//! End-to-end driver: OKT and PSP on one matrix, final binarization in the
//! rotated frame, packed layer assembly and reporting.

mod config;
mod format;

use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use config::{BwlaConfig, RotationInit, Schedule};
pub use format::{
    load_layer, round_to_f32, save_layer, Artifact, Tensor, ARTIFACT_MAGIC, ARTIFACT_VERSION,
    TENSOR_MAGIC, TENSOR_VERSION,
};

use crate::actquant::{tail_stats, TailStats};
use crate::binarize::{binarization_mse, binarize, effective_bits, Axis};
use crate::error::{BwlaError, Result};
use crate::kernel::{full_inference, full_inference_quantized, Accumulation, FrameWeights, PackedLayer};
use crate::kronecker::{factor_dims, KroneckerRotation};
use crate::numerics::{norm2, Matrix};
use crate::okt::{center_rows, kurtosis_init, magnitude_cv, okt_project, okt_step, run_okt, LossRecord, OktState, Phase};
use crate::psp::{psp_step, rank_for, LowRankResidual, PspState};
use crate::synth::{gaussian_vec, gen, rng_for, SynthKind, SynthSpec};

pub const REPORT_SCHEMA_VERSION: u32 = 1;
/// Absolute slack for the monotone-loss checks.
pub const MONOTONE_SLACK: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Timings {
    pub okt_ms: f64,
    pub psp_ms: f64,
    pub total_ms: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MatrixReport {
    pub id: String,
    pub rows: usize,
    pub cols: usize,
    pub n1: usize,
    pub n2: usize,
    pub rank: usize,
    /// All-zero input; nothing was optimized.
    pub degenerate: bool,
    pub okt_iterations: usize,
    pub psp_iterations: usize,
    pub psp_rejected_steps: usize,
    pub nll_initial: f64,
    pub nll_after_okt: f64,
    pub nll_final: f64,
    pub okt_monotone: bool,
    pub psp_monotone: bool,
    pub mse_before: f64,
    pub mse_after: f64,
    pub magnitude_cv_before: f64,
    pub magnitude_cv_after: f64,
    pub effective_bits: f64,
    pub tail_before: Option<TailStats>,
    pub tail_after: Option<TailStats>,
    /// Relative error of the rotation and residual algebra alone.
    pub forward_error_algebra: f64,
    /// Relative error including weight binarization.
    pub forward_error_binarized: f64,
    /// Relative error with activations quantized to `act_bits`.
    pub forward_error_quantized: f64,
    pub act_bits: u32,
    pub timings: Option<Timings>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunReport {
    pub schema_version: u32,
    pub generator: String,
    pub config: BwlaConfig,
    pub matrices: Vec<MatrixReport>,
}

impl RunReport {
    pub fn new(config: &BwlaConfig, matrices: Vec<MatrixReport>) -> Self {
        RunReport {
            schema_version: REPORT_SCHEMA_VERSION,
            generator: format!("bwla {}", env!("CARGO_PKG_VERSION")),
            config: config.clone(),
            matrices,
        }
    }

    pub fn to_json(&self) -> Result<String> {
        let mut s = serde_json::to_string_pretty(self)?;
        s.push('\n');
        Ok(s)
    }

    /// Parses and checks a report: known schema version, no unknown fields,
    /// every number finite.
    pub fn from_json(text: &str) -> Result<Self> {
        let value: serde_json::Value = serde_json::from_str(text)?;
        match value.get("schema_version").and_then(|v| v.as_u64()) {
            Some(v) if v == REPORT_SCHEMA_VERSION as u64 => {}
            Some(v) => {
                return Err(BwlaError::Version {
                    what: "report",
                    found: v.min(u32::MAX as u64) as u32,
                    supported: REPORT_SCHEMA_VERSION,
                })
            }
            None => return Err(BwlaError::format("report", "missing schema_version")),
        }
        if !all_numbers_finite(&value) {
            return Err(BwlaError::format("report", "non-finite number"));
        }
        Ok(serde_json::from_value(value)?)
    }
}

fn all_numbers_finite(v: &serde_json::Value) -> bool {
    use serde_json::Value;
    match v {
        Value::Number(n) => n.as_f64().is_some_and(f64::is_finite),
        Value::Array(items) => items.iter().all(all_numbers_finite),
        Value::Object(map) => map.values().all(all_numbers_finite),
        _ => true,
    }
}

pub const TRAJECTORY_HEADER: &str = "phase,iteration,nll,regularizer,surrogate";

pub fn trajectory_csv(records: &[LossRecord]) -> String {
    let mut out = String::from(TRAJECTORY_HEADER);
    out.push('\n');
    for r in records {
        out.push_str(&format!(
            "{},{},{},{},{}\n",
            r.phase.as_str(),
            r.iteration,
            r.nll,
            r.regularizer,
            r.surrogate
        ));
    }
    out
}

/// `true` when `nll` never rises by more than `slack` between consecutive
/// records of `phase`.
pub fn is_monotone(records: &[LossRecord], phase: Phase, slack: f64) -> bool {
    let nll: Vec<f64> = records
        .iter()
        .filter(|r| r.phase == phase)
        .map(|r| r.nll)
        .collect();
    nll.windows(2).all(|w| w[1] <= w[0] + slack)
}

/// Output of [`run_bwla`] on one matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct BwlaRun {
    pub artifact: Artifact,
    pub report: MatrixReport,
    pub trajectory: Vec<LossRecord>,
    /// The rotated, residual-corrected matrix that was binarized.
    pub frame: Matrix,
}

struct Optimized {
    rotation: KroneckerRotation,
    residual: Option<LowRankResidual>,
    trajectory: Vec<LossRecord>,
    okt_iterations: usize,
    psp_iterations: usize,
    psp_rejected: usize,
    okt_ms: f64,
    psp_ms: f64,
}

/// Runs the full pipeline on `w`. Errors carry `id` as context.
pub fn run_bwla(w: &Matrix, cfg: &BwlaConfig, id: &str) -> Result<BwlaRun> {
    run_inner(w, cfg, id).map_err(|e| e.in_matrix(id))
}

/// Independent runs over several matrices, in parallel, results in input
/// order.
pub fn run_many(inputs: &[(String, Matrix)], cfg: &BwlaConfig) -> Result<Vec<BwlaRun>> {
    inputs
        .par_iter()
        .map(|(id, w)| run_bwla(w, cfg, id))
        .collect()
}

fn run_inner(w: &Matrix, cfg: &BwlaConfig, id: &str) -> Result<BwlaRun> {
    cfg.validate()?;
    let (n, m) = w.shape();
    if n == 0 || m == 0 {
        return Err(BwlaError::InvalidArgument("empty matrix".into()));
    }
    if let Some(index) = w.data().iter().position(|v| !v.is_finite()) {
        return Err(BwlaError::NonFinite {
            context: "run_bwla",
            index,
        });
    }
    let start = Instant::now();
    let dims = factor_dims(m);
    let k = rank_for(n, m, cfg.rank_ratio);
    let init = match cfg.init {
        RotationInit::Identity => KroneckerRotation::identity(dims),
        RotationInit::Random => KroneckerRotation::random(dims, &mut rng_for(cfg.seed)),
        RotationInit::Kurtosis => kurtosis_init(w, dims)?,
    };
    let degenerate = w.max_abs() == 0.0;
    let cv_before = magnitude_cv(&okt_project(w, &init)?.x);

    let opt = if degenerate {
        Optimized {
            rotation: init.clone(),
            residual: None,
            trajectory: Vec::new(),
            okt_iterations: 0,
            psp_iterations: 0,
            psp_rejected: 0,
            okt_ms: 0.0,
            psp_ms: 0.0,
        }
    } else {
        match cfg.schedule {
            Schedule::Sequential => sequential(w, init, k, cfg)?,
            Schedule::Interleaved => interleaved(w, init, k, cfg)?,
        }
    };

    // Everything the layer stores is rounded to its on-disk precision first,
    // so the binarized frame is consistent with the saved factors.
    let rotation = KroneckerRotation::from_factors_unchecked(
        Matrix::new(dims.n1, dims.n1, round_to_f32(opt.rotation.r1().data()))?,
        Matrix::new(dims.n2, dims.n2, round_to_f32(opt.rotation.r2().data()))?,
    )?;
    let residual = match &opt.residual {
        Some(r) => LowRankResidual::from_factors(
            Matrix::new(n, r.k(), round_to_f32(r.a().data()))?,
            Matrix::new(r.k(), m, round_to_f32(r.b().data()))?,
        )?,
        None => LowRankResidual::zeros(n, m, k),
    };
    let rotated = rotation.apply_to_rows(&w.sub(residual.matrix())?)?;
    let (frame, row_shift) = match cfg.axis {
        Axis::Row => (rotated, vec![0.0; n]),
        Axis::Column => {
            let shift: Vec<f64> = rotated
                .row_iter()
                .map(|r| r.iter().sum::<f64>() / m as f64)
                .collect();
            (center_rows(&rotated).x, round_to_f32(&shift))
        }
    };
    let mut bw = binarize(&frame, cfg.axis);
    bw.alpha = round_to_f32(&bw.alpha);
    bw.beta = round_to_f32(&bw.beta);
    let scale_params = bw.alpha.len() + bw.beta.len() + if cfg.axis == Axis::Column { n } else { 0 };
    let layer = PackedLayer {
        weights: FrameWeights::Binary(bw),
        row_shift,
        rotation,
        residual,
    };

    let mut rng = rng_for(cfg.seed ^ 0x9e37_79b9_7f4a_7c15);
    let probe = gaussian_vec(m, &mut rng);
    let exact = w.matvec(&probe)?;
    let rel = |y: &[f64]| {
        let diff: Vec<f64> = y.iter().zip(&exact).map(|(a, b)| a - b).collect();
        let scale = norm2(&exact);
        if scale > 0.0 {
            norm2(&diff) / scale
        } else {
            norm2(&diff)
        }
    };
    let dense_layer = PackedLayer {
        weights: FrameWeights::Dense(frame.clone()),
        ..layer.clone()
    };
    let forward_error_algebra = rel(&full_inference(&dense_layer, &probe)?);
    let forward_error_binarized = rel(&full_inference(&layer, &probe)?);
    let acc = match cfg.axis {
        Axis::Row => Accumulation::Int32,
        Axis::Column => Accumulation::Float,
    };
    let forward_error_quantized = rel(&full_inference_quantized(&layer, &probe, cfg.act_bits, acc)?);

    let tails = if m >= 4 {
        let acts = gen(&SynthSpec::new(SynthKind::HeavyTailActs, 1, m, cfg.seed))?.into_matrix();
        let x = acts.row(0);
        let rx = layer.rotation.apply_transpose_to_vec(x)?;
        match (tail_stats(x), tail_stats(&rx)) {
            (Ok(a), Ok(b)) => Some((a, b)),
            _ => None,
        }
    } else {
        None
    };

    let traj = &opt.trajectory;
    let first_nll = |phase: Phase, last: bool| {
        let mut it = traj.iter().filter(|r| r.phase == phase).map(|r| r.nll);
        if last {
            it.next_back()
        } else {
            it.next()
        }
    };
    let nll_initial = first_nll(Phase::Okt, false).unwrap_or(0.0);
    let nll_after_okt = first_nll(Phase::Okt, true).unwrap_or(nll_initial);
    let nll_final = traj.last().map_or(nll_initial, |r| r.nll);
    let bw = layer.binary().expect("binary layer");
    let report = MatrixReport {
        id: id.to_string(),
        rows: n,
        cols: m,
        n1: dims.n1,
        n2: dims.n2,
        rank: layer.residual.k(),
        degenerate,
        okt_iterations: opt.okt_iterations,
        psp_iterations: opt.psp_iterations,
        psp_rejected_steps: opt.psp_rejected,
        nll_initial,
        nll_after_okt,
        nll_final,
        okt_monotone: is_monotone(traj, Phase::Okt, MONOTONE_SLACK),
        psp_monotone: is_monotone(traj, Phase::Psp, MONOTONE_SLACK),
        mse_before: binarization_mse(w, cfg.axis),
        mse_after: binarization_mse(&frame, cfg.axis),
        magnitude_cv_before: cv_before,
        magnitude_cv_after: magnitude_cv(&center_rows(&frame).x),
        effective_bits: effective_bits(
            n,
            m,
            scale_params,
            Some(&layer.rotation),
            Some(&layer.residual),
            16,
        ),
        tail_before: tails.map(|t| t.0),
        tail_after: tails.map(|t| t.1),
        forward_error_algebra,
        forward_error_binarized,
        forward_error_quantized,
        act_bits: cfg.act_bits,
        timings: cfg.record_timings.then(|| Timings {
            okt_ms: opt.okt_ms,
            psp_ms: opt.psp_ms,
            total_ms: start.elapsed().as_secs_f64() * 1e3,
        }),
    };
    debug_assert_eq!(bw.rows(), n);
    Ok(BwlaRun {
        artifact: Artifact {
            layer,
            config_toml: cfg.to_toml()?,
        },
        report,
        trajectory: opt.trajectory,
        frame,
    })
}

fn sequential(w: &Matrix, init: KroneckerRotation, k: usize, cfg: &BwlaConfig) -> Result<Optimized> {
    let t = Instant::now();
    let okt = run_okt(w, init, cfg.okt_iters, &cfg.okt_options())?;
    let okt_ms = t.elapsed().as_secs_f64() * 1e3;
    let mut trajectory = okt.loss_history.clone();
    let t = Instant::now();
    let (residual, psp_iterations, psp_rejected) = if cfg.psp_iters > 0 {
        let opts = cfg.psp_options();
        let mut state = PspState::new(w, &okt.rotation, okt.params.clone(), k, &opts)?;
        for _ in 0..cfg.psp_iters {
            state = psp_step(w, &state, &okt.rotation, &opts)?;
        }
        trajectory.extend(state.loss_history.iter().cloned());
        (Some(state.residual), state.iteration, state.rejected_steps)
    } else {
        (None, 0, 0)
    };
    Ok(Optimized {
        rotation: okt.rotation,
        residual,
        trajectory,
        okt_iterations: okt.iteration,
        psp_iterations,
        psp_rejected,
        okt_ms,
        psp_ms: t.elapsed().as_secs_f64() * 1e3,
    })
}

fn interleaved(w: &Matrix, init: KroneckerRotation, k: usize, cfg: &BwlaConfig) -> Result<Optimized> {
    let oopts = cfg.okt_options();
    let popts = cfg.psp_options();
    let mut okt = OktState::new(w, init, &oopts)?;
    let mut trajectory = okt.loss_history.clone();
    let mut psp: Option<PspState> = None;
    let (mut okt_ms, mut psp_ms) = (0.0, 0.0);
    for round in 0..cfg.okt_iters.max(cfg.psp_iters) {
        if round < cfg.okt_iters {
            let t = Instant::now();
            let w_eff = match &psp {
                Some(p) => w.sub(p.residual.matrix())?,
                None => w.clone(),
            };
            okt = okt_step(&w_eff, &okt, &oopts)?;
            trajectory.push(*okt.last_record());
            okt_ms += t.elapsed().as_secs_f64() * 1e3;
        }
        if round < cfg.psp_iters {
            let t = Instant::now();
            let mut state = match psp.take() {
                Some(s) => s,
                None => {
                    let s = PspState::new(w, &okt.rotation, okt.params.clone(), k, &popts)?;
                    trajectory.push(*s.last_record());
                    s
                }
            };
            state.params = okt.params.clone();
            state = psp_step(w, &state, &okt.rotation, &popts)?;
            trajectory.push(*state.last_record());
            okt.params = state.params.clone();
            psp = Some(state);
            psp_ms += t.elapsed().as_secs_f64() * 1e3;
        }
    }
    Ok(Optimized {
        rotation: okt.rotation,
        okt_iterations: okt.iteration,
        psp_iterations: psp.as_ref().map_or(0, |p| p.iteration),
        psp_rejected: psp.as_ref().map_or(0, |p| p.rejected_steps),
        residual: psp.map(|p| p.residual),
        trajectory,
        okt_ms,
        psp_ms,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_cfg() -> BwlaConfig {
        BwlaConfig {
            okt_iters: 8,
            psp_iters: 4,
            ..BwlaConfig::default()
        }
    }

    #[test]
    fn zero_matrix_is_degenerate_and_exact() {
        let run = run_bwla(&Matrix::zeros(4, 6), &small_cfg(), "zero").unwrap();
        assert!(run.report.degenerate);
        assert_eq!(run.report.mse_after, 0.0);
        assert_eq!(run.report.forward_error_binarized, 0.0);
        assert!(run.trajectory.is_empty());
    }

    #[test]
    fn small_gaussian_run_is_consistent() {
        let w = gen(&SynthSpec::new(SynthKind::GaussianRows, 8, 12, 2))
            .unwrap()
            .into_matrix();
        for axis in [Axis::Row, Axis::Column] {
            for schedule in [Schedule::Sequential, Schedule::Interleaved] {
                let cfg = BwlaConfig {
                    axis,
                    schedule,
                    ..small_cfg()
                };
                let run = run_bwla(&w, &cfg, "g").unwrap();
                let r = &run.report;
                assert!(r.okt_monotone && r.psp_monotone, "{axis:?} {schedule:?}");
                assert!(r.forward_error_algebra < 1e-6, "{r:?}");
                assert!(r.mse_after.is_finite() && r.effective_bits > 1.0);
                let json = RunReport::new(&cfg, vec![run.report.clone()]).to_json().unwrap();
                assert_eq!(RunReport::from_json(&json).unwrap().matrices[0], run.report);
            }
        }
    }

    #[test]
    fn errors_carry_matrix_id() {
        let w = Matrix::zeros(2, 3);
        let cfg = BwlaConfig {
            act_bits: 12,
            ..BwlaConfig::default()
        };
        let err = run_bwla(&w, &cfg, "layer7").unwrap_err();
        assert!(err.to_string().contains("layer7"), "{err}");
    }

    #[test]
    fn trajectory_csv_shape() {
        let w = gen(&SynthSpec::new(SynthKind::GaussianRows, 4, 6, 1))
            .unwrap()
            .into_matrix();
        let run = run_bwla(&w, &small_cfg(), "t").unwrap();
        let csv = trajectory_csv(&run.trajectory);
        let mut lines = csv.lines();
        assert_eq!(lines.next(), Some(TRAJECTORY_HEADER));
        assert!(lines.all(|l| l.split(',').count() == 5));
    }

    #[test]
    fn report_schema_rejects_other_versions() {
        let report = RunReport::new(&BwlaConfig::default(), vec![]);
        let json = report.to_json().unwrap().replace("\"schema_version\": 1", "\"schema_version\": 2");
        assert!(matches!(RunReport::from_json(&json), Err(BwlaError::Version { found: 2, .. })));
    }
}
