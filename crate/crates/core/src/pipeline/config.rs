use serde::{Deserialize, Serialize};

use crate::binarize::Axis;
use crate::error::{BwlaError, Result};
use crate::okt::OktOptions;
use crate::psp::PspOptions;
use crate::synth::SynthSpec;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Schedule {
    /// All OKT iterations, then all PSP iterations.
    #[default]
    Sequential,
    /// One OKT step then one PSP step per round while budgets remain.
    Interleaved,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RotationInit {
    #[default]
    Identity,
    /// Haar-random Kronecker factors drawn from `seed`.
    Random,
    /// Factors from a kurtosis search over the reshaped rows; see
    /// [`crate::okt::kurtosis_init`].
    Kurtosis,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BwlaConfig {
    pub okt_iters: usize,
    pub psp_iters: usize,
    pub rank_ratio: f64,
    pub lambda_reg: f64,
    /// Variance floor `σ_min = sigma_min_rel · RMS(X)`, per matrix.
    pub sigma_min_rel: f64,
    pub act_bits: u32,
    pub axis: Axis,
    pub schedule: Schedule,
    pub init: RotationInit,
    pub seed: u64,
    /// Relative nll change counted as a plateau; 0 disables early stopping.
    pub early_stop_tol: f64,
    pub patience: usize,
    /// Wall-clock timings make reports run-dependent, so they are opt-in.
    pub record_timings: bool,
    pub synth: Option<SynthSpec>,
}

impl Default for BwlaConfig {
    fn default() -> Self {
        BwlaConfig {
            okt_iters: 40,
            psp_iters: 20,
            rank_ratio: 0.005,
            lambda_reg: 0.01,
            sigma_min_rel: 1e-4,
            act_bits: 6,
            axis: Axis::Row,
            schedule: Schedule::Sequential,
            init: RotationInit::Identity,
            seed: 0,
            early_stop_tol: 1e-6,
            patience: 3,
            record_timings: false,
            synth: None,
        }
    }
}

impl BwlaConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: BwlaConfig = toml::from_str(text).map_err(|e| BwlaError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| BwlaError::Config(e.to_string()))
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        Self::from_toml(&std::fs::read_to_string(path)?)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(BwlaError::Config(msg));
        if !(self.rank_ratio.is_finite() && self.rank_ratio >= 0.0 && self.rank_ratio <= 1.0) {
            return bad(format!("rank_ratio must lie in [0, 1], got {}", self.rank_ratio));
        }
        if !(self.lambda_reg.is_finite() && self.lambda_reg >= 0.0) {
            return bad(format!("lambda_reg must be nonnegative, got {}", self.lambda_reg));
        }
        if !(self.sigma_min_rel.is_finite() && self.sigma_min_rel > 0.0) {
            return bad(format!("sigma_min_rel must be positive, got {}", self.sigma_min_rel));
        }
        if !(2..=8).contains(&self.act_bits) {
            return bad(format!("act_bits must be in 2..=8, got {}", self.act_bits));
        }
        if !(self.early_stop_tol.is_finite() && self.early_stop_tol >= 0.0) {
            return bad(format!("early_stop_tol must be nonnegative, got {}", self.early_stop_tol));
        }
        if self.okt_iters > 100_000 || self.psp_iters > 100_000 {
            return bad("iteration budgets above 100000 are not supported".into());
        }
        if let Some(spec) = &self.synth {
            spec.validate()
                .map_err(|e| BwlaError::Config(format!("synth: {e}")))?;
        }
        Ok(())
    }

    pub fn okt_options(&self) -> OktOptions {
        OktOptions {
            lambda_reg: self.lambda_reg,
            sigma_min_rel: self.sigma_min_rel,
            early_stop_tol: self.early_stop_tol,
            patience: self.patience,
        }
    }

    pub fn psp_options(&self) -> PspOptions {
        PspOptions {
            lambda_reg: self.lambda_reg,
            ..PspOptions::default()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_follow_the_reference_settings() {
        let c = BwlaConfig::default();
        assert_eq!((c.okt_iters, c.psp_iters), (40, 20));
        assert_eq!(c.okt_iters + c.psp_iters, 60);
        assert_eq!(c.rank_ratio, 0.005);
        assert_eq!(c.act_bits, 6);
        assert_eq!(c.axis, Axis::Row);
        assert_eq!(c.schedule, Schedule::Sequential);
    }

    #[test]
    fn toml_round_trip_and_partial_files() {
        let c = BwlaConfig {
            seed: 7,
            axis: Axis::Column,
            synth: Some(SynthSpec::parse("planted:8x12,noise=0.1").unwrap()),
            ..BwlaConfig::default()
        };
        assert_eq!(BwlaConfig::from_toml(&c.to_toml().unwrap()).unwrap(), c);

        let partial = BwlaConfig::from_toml("okt_iters = 5\nschedule = \"interleaved\"\n").unwrap();
        assert_eq!(partial.okt_iters, 5);
        assert_eq!(partial.schedule, Schedule::Interleaved);
        assert_eq!(partial.psp_iters, 20);

        let synth = BwlaConfig::from_toml(
            "[synth]\nkind = \"gaussian_rows\"\nrows = 4\ncols = 6\nseed = 3\n",
        )
        .unwrap();
        assert_eq!(synth.synth.unwrap().cols, 6);
    }

    #[test]
    fn rejects_bad_values() {
        for text in [
            "rank_ratio = 2.0",
            "act_bits = 1",
            "sigma_min_rel = 0.0",
            "unknown_key = 1",
            "axis = \"diagonal\"",
            "[synth]\nkind = \"planted_bimodal\"\nrows = 2\ncols = 3\n",
        ] {
            assert!(BwlaConfig::from_toml(text).is_err(), "{text}");
        }
    }
}
