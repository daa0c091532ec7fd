//! JSON experiment config.
//!
//! ```json
//! {
//!   "system":   { "A": 1.2, "C": 0.7, "Q": 0.8, "R": 0.8 },
//!   "channel":  { "lambda": 0.5 },
//!   "energy":   { "delta_high": "8", "delta_low": "1", "psi": "2" },
//!   "detector": { "z0": 2, "L": 4 },
//!   "attacker": { "beta": "1/5", "enabled": true },
//!   "sim":      { "horizon": 100000, "runs": 1000, "seed": 1 },
//!   "analysis": { "t_max": 12 }
//! }
//! ```
//!
//! Matrices are a bare number (1×1) or `{"rows", "cols", "data"}` with `data`
//! row-major. Rationals are `"p/q"` strings or plain numbers.

use nalgebra::DMatrix;
use num_rational::Rational64;
use serde::{Deserialize, Serialize};

use crate::attack::{reduce_beta, AttackerConfig, CounterSemantics};
use crate::chain::{DEFAULT_TAIL_TOL, DEFAULT_T_MAX};
use crate::error::{Error, Result};
use crate::lds::SystemModel;
use crate::montecarlo::{ChannelMode, ScheduleKind, SimConfig, SimMode};
use crate::rational::{parse_rational, rational_from_f64};
use crate::schedule::{calibrate_mu, reduce_energy_budget, DetectorConfig, EnergyModel};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum MatrixSpec {
    Scalar(f64),
    Full { rows: usize, cols: usize, data: Vec<f64> },
}

impl MatrixSpec {
    pub fn to_matrix(&self, name: &str) -> Result<DMatrix<f64>> {
        match self {
            MatrixSpec::Scalar(v) => Ok(DMatrix::from_element(1, 1, *v)),
            MatrixSpec::Full { rows, cols, data } => {
                if rows * cols != data.len() || *rows == 0 || *cols == 0 {
                    return Err(Error::Config(format!(
                        "{name}: declared {rows}x{cols} but got {} entries",
                        data.len()
                    )));
                }
                Ok(DMatrix::from_row_slice(*rows, *cols, data))
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum RationalSpec {
    Text(String),
    Number(f64),
}

impl RationalSpec {
    pub fn to_rational(&self) -> Result<Rational64> {
        match self {
            RationalSpec::Text(s) => parse_rational(s),
            RationalSpec::Number(x) => rational_from_f64(*x),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SystemSection {
    #[serde(rename = "A")]
    pub a: MatrixSpec,
    #[serde(rename = "C")]
    pub c: MatrixSpec,
    #[serde(rename = "Q")]
    pub q: MatrixSpec,
    #[serde(rename = "R")]
    pub r: MatrixSpec,
    /// Defaults to `Q`.
    #[serde(rename = "Pi0", default)]
    pub pi0: Option<MatrixSpec>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChannelSection {
    pub lambda: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnergySection {
    pub delta_high: RationalSpec,
    pub delta_low: RationalSpec,
    pub psi: RationalSpec,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DetectorSection {
    pub z0: u32,
    /// Calibrated against the energy budget when absent.
    #[serde(default)]
    pub mu: Option<f64>,
    /// Defaults to `z0 + 2`.
    #[serde(rename = "L", default)]
    pub memory_len: Option<u32>,
}

impl Default for DetectorSection {
    fn default() -> Self {
        Self {
            z0: 2,
            mu: None,
            memory_len: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AttackerSection {
    #[serde(default)]
    pub beta: Option<RationalSpec>,
    #[serde(default)]
    pub r: Option<u64>,
    #[serde(default)]
    pub t: Option<u64>,
    #[serde(default = "yes")]
    pub enabled: bool,
    #[serde(default)]
    pub semantics: CounterSemantics,
}

fn yes() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimSection {
    #[serde(default = "default_horizon")]
    pub horizon: u64,
    #[serde(default = "default_runs")]
    pub runs: u64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub mode: SimMode,
    #[serde(default = "default_schedule")]
    pub schedule: ScheduleKind,
    #[serde(default)]
    pub channel: ChannelMode,
    #[serde(default)]
    pub record_every: Option<u64>,
}

fn default_horizon() -> u64 {
    100_000
}

fn default_runs() -> u64 {
    1000
}

fn default_schedule() -> ScheduleKind {
    ScheduleKind::Online
}

impl Default for SimSection {
    fn default() -> Self {
        Self {
            horizon: default_horizon(),
            runs: default_runs(),
            seed: 0,
            mode: SimMode::default(),
            schedule: default_schedule(),
            channel: ChannelMode::default(),
            record_every: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnalysisSection {
    #[serde(default = "default_t_max")]
    pub t_max: u64,
    #[serde(default = "default_tail_tol")]
    pub tail_tol: f64,
}

fn default_t_max() -> u64 {
    DEFAULT_T_MAX
}

fn default_tail_tol() -> f64 {
    DEFAULT_TAIL_TOL
}

impl Default for AnalysisSection {
    fn default() -> Self {
        Self {
            t_max: default_t_max(),
            tail_tol: default_tail_tol(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub system: SystemSection,
    pub channel: ChannelSection,
    pub energy: EnergySection,
    #[serde(default)]
    pub detector: DetectorSection,
    #[serde(default)]
    pub attacker: AttackerSection,
    #[serde(default)]
    pub sim: SimSection,
    #[serde(default)]
    pub analysis: AnalysisSection,
}

/// Detector parameters, with `mu` filled in by calibration if needed.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ResolvedDetector {
    pub config: DetectorConfig,
    pub calibrated: bool,
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Config(format!("config: {e}")))
    }

    pub fn system_model(&self) -> Result<SystemModel> {
        let s = &self.system;
        let q = s.q.to_matrix("Q")?;
        let pi0 = match &s.pi0 {
            Some(m) => m.to_matrix("Pi0")?,
            None => q.clone(),
        };
        SystemModel::new(
            s.a.to_matrix("A")?,
            s.c.to_matrix("C")?,
            q,
            s.r.to_matrix("R")?,
            pi0,
            self.channel.lambda,
        )
    }

    pub fn energy_model(&self) -> Result<EnergyModel> {
        let e = &self.energy;
        reduce_energy_budget(
            e.delta_high.to_rational()?,
            e.delta_low.to_rational()?,
            e.psi.to_rational()?,
        )
    }

    pub fn attacker(&self) -> Result<AttackerConfig> {
        let a = &self.attacker;
        if !a.enabled {
            return Ok(AttackerConfig::disabled());
        }
        let cfg = match (&a.beta, a.r, a.t) {
            (Some(b), None, None) => reduce_beta(b.to_rational()?)?,
            (None, Some(r), Some(t)) => AttackerConfig::from_pair(r, t)?,
            (None, None, None) => AttackerConfig::disabled(),
            _ => return Err(Error::Config("attacker: give either beta or both r and t".into())),
        };
        Ok(cfg.with_semantics(a.semantics))
    }

    pub fn detector(&self, em: &EnergyModel) -> Result<ResolvedDetector> {
        let d = &self.detector;
        let memory_len = d.memory_len.unwrap_or(d.z0 + 2);
        match d.mu {
            Some(mu) => Ok(ResolvedDetector {
                config: DetectorConfig::new(d.z0, mu, memory_len)?,
                calibrated: false,
            }),
            None => Ok(ResolvedDetector {
                config: calibrate_mu(self.channel.lambda, em, d.z0, memory_len)?,
                calibrated: true,
            }),
        }
    }

    /// Monte Carlo config for the sim section's schedule.
    pub fn sim_config(&self) -> Result<SimConfig> {
        let model = self.system_model()?;
        let energy = self.energy_model()?;
        let detector = match self.sim.schedule {
            ScheduleKind::Online => Some(self.detector(&energy)?.config),
            ScheduleKind::Offline => None,
        };
        let cfg = SimConfig {
            detector,
            attacker: self.attacker()?,
            schedule: self.sim.schedule,
            horizon: self.sim.horizon,
            runs: self.sim.runs,
            seed: self.sim.seed,
            mode: self.sim.mode,
            channel: self.sim.channel,
            record_every: self.sim.record_every,
            ..SimConfig::offline(model, energy)
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const SCALAR: &str = r#"{
        "system": {"A": 1.2, "C": 0.7, "Q": 0.8, "R": 0.8},
        "channel": {"lambda": 0.5},
        "energy": {"delta_high": "8", "delta_low": 1, "psi": "2"},
        "detector": {"z0": 2, "L": 4},
        "attacker": {"beta": "2/3"}
    }"#;

    #[test]
    fn parses_scalar_config() {
        let c = ExperimentConfig::from_json(SCALAR).unwrap();
        let m = c.system_model().unwrap();
        assert_eq!(m.a()[(0, 0)], 1.2);
        assert_eq!(m.pi0()[(0, 0)], 0.8);
        let em = c.energy_model().unwrap();
        assert_eq!((em.p, em.q), (1, 7));
        let att = c.attacker().unwrap();
        assert_eq!((att.r, att.t, att.semantics), (2, 3, CounterSemantics::ChargeOnLoss));
        let det = c.detector(&em).unwrap();
        assert!(det.calibrated);
        assert_eq!(det.config.mu, 1.0);
        let sim = c.sim_config().unwrap();
        assert_eq!(
            (sim.horizon, sim.runs, sim.schedule),
            (100_000, 1000, ScheduleKind::Online)
        );
    }

    #[test]
    fn matrix_forms() {
        let m: MatrixSpec = serde_json::from_str(r#"{"rows": 2, "cols": 2, "data": [1, 2, 3, 4]}"#).unwrap();
        let m = m.to_matrix("A").unwrap();
        assert_eq!(m[(0, 1)], 2.0);
        let bad: MatrixSpec = serde_json::from_str(r#"{"rows": 2, "cols": 2, "data": [1, 2, 3]}"#).unwrap();
        assert!(bad.to_matrix("A").is_err());
    }

    #[test]
    fn attacker_forms() {
        let with = |a: &str| {
            let text = SCALAR.replace(r#""attacker": {"beta": "2/3"}"#, &format!(r#""attacker": {a}"#));
            ExperimentConfig::from_json(&text).and_then(|c| c.attacker())
        };
        assert_eq!(with(r#"{"r": 1, "t": 5}"#).unwrap().t, 5);
        assert!(!with(r#"{"beta": 0}"#).unwrap().enabled);
        assert!(!with(r#"{"beta": "1/5", "enabled": false}"#).unwrap().enabled);
        assert_eq!(
            with(r#"{"beta": 0.2, "semantics": "every_flag"}"#).unwrap().semantics,
            CounterSemantics::EveryFlag
        );
        assert!(with(r#"{"beta": "1/5", "r": 1}"#).is_err());
        assert!(with(r#"{"r": 2, "t": 4}"#).is_err());
        assert!(with(r#"{"beta": "3/2"}"#).is_err());
    }

    #[test]
    fn schema_errors() {
        assert!(ExperimentConfig::from_json("{}").is_err());
        let extra = SCALAR.replace(r#""channel""#, r#""bogus": 1, "channel""#);
        assert!(matches!(ExperimentConfig::from_json(&extra), Err(Error::Config(_))));
        let low = SCALAR.replace(r#""psi": "2""#, r#""psi": "1""#);
        assert!(ExperimentConfig::from_json(&low).unwrap().energy_model().is_err());
    }
}
