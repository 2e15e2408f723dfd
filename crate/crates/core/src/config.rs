//! TOML experiment configuration: scenario, channel model, rectifier curve,
//! uncertainty radii and the sweep to run.
//!
//! ```toml
//! seed = 7
//! trials = 100
//!
//! [scenario]
//! num_antennas = 4
//! num_users = 4
//! sar_limit = 1.6
//!
//! [sweep]
//! parameter = "sar_limit"
//! values = [0.4, 0.8, 1.2, 1.6]
//! schemes = ["optimal", "zf", "backoff"]
//! ```
//!
//! Every section and key is optional; missing values take the defaults of
//! [`SystemScenario::default_for`], [`ChannelModel::default`] and
//! [`EhModel::default`]. Errors carry the line of the offending key.

use serde::Deserialize;
use std::fmt;
use std::str::FromStr;

use crate::eh::EhModel;
use crate::error::{Error, Result};
use crate::model::{db_to_linear, dbm_to_watts, ChannelModel, SystemScenario, UncertaintyModel};

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScenarioConfig {
    pub num_antennas: usize,
    pub num_users: usize,
    pub noise_antenna_dbm: f64,
    pub noise_circuit_dbm: f64,
    pub power_budget_w: f64,
    /// Applied to the default SAR matrix (4 antennas only).
    pub sar_limit: f64,
    pub sar: bool,
    pub sinr_target_db: f64,
    pub eh_target_dbm: f64,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        Self {
            num_antennas: 4,
            num_users: 4,
            noise_antenna_dbm: -70.0,
            noise_circuit_dbm: -50.0,
            power_budget_w: 2.0,
            sar_limit: 1.6,
            sar: true,
            sinr_target_db: 10.0,
            eh_target_dbm: -15.0,
        }
    }
}

impl ScenarioConfig {
    pub fn build(&self) -> Result<SystemScenario> {
        let base = SystemScenario::default_for(self.num_antennas, self.num_users)?;
        if self.sar && base.num_sar() == 0 {
            return Err(Error::Config("the built-in SAR matrix needs num_antennas = 4; set sar = false".into()));
        }
        let mut s = SystemScenario::new(
            self.num_antennas,
            self.num_users,
            dbm_to_watts(self.noise_antenna_dbm),
            dbm_to_watts(self.noise_circuit_dbm),
            self.power_budget_w,
            base.sar_limits.iter().map(|_| self.sar_limit).collect(),
            base.sar_matrices,
            vec![db_to_linear(self.sinr_target_db); self.num_users],
            vec![dbm_to_watts(self.eh_target_dbm); self.num_users],
        )?;
        if !self.sar {
            s = s.without_sar();
        }
        Ok(s)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct UncertaintyConfig {
    /// `sigma^2`, bound on `||dh_k||^2`.
    pub channel_error: f64,
    /// `tau`, bound on `||dA_l||_F`.
    pub sar_error: f64,
}

impl Default for UncertaintyConfig {
    fn default() -> Self {
        Self { channel_error: 5e-8, sar_error: 7e-8 }
    }
}

impl UncertaintyConfig {
    pub fn build(&self, scenario: &SystemScenario) -> Result<UncertaintyModel> {
        UncertaintyModel::uniform(scenario.num_users, scenario.num_sar(), self.channel_error, self.sar_error)
    }
}

/// Swept quantity and the unit of its grid values.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepParameter {
    /// W/kg.
    SarLimit,
    /// dBm at the rectifier output.
    EhTarget,
    /// dBm.
    TotalPower,
    /// `sigma^2`; `tau` stays at its configured value.
    UncertaintyRadius,
}

impl SweepParameter {
    pub fn name(self) -> &'static str {
        match self {
            Self::SarLimit => "sar_limit",
            Self::EhTarget => "eh_target",
            Self::TotalPower => "total_power",
            Self::UncertaintyRadius => "uncertainty_radius",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scheme {
    Optimal,
    FastSu,
    Zf,
    Rzf,
    Hybrid,
    Robust,
    Nonrobust,
    Backoff,
    NoSar,
}

impl Scheme {
    pub const ALL: [Scheme; 9] = [
        Scheme::Optimal,
        Scheme::FastSu,
        Scheme::Zf,
        Scheme::Rzf,
        Scheme::Hybrid,
        Scheme::Robust,
        Scheme::Nonrobust,
        Scheme::Backoff,
        Scheme::NoSar,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Self::Optimal => "optimal",
            Self::FastSu => "fast_su",
            Self::Zf => "zf",
            Self::Rzf => "rzf",
            Self::Hybrid => "hybrid",
            Self::Robust => "robust",
            Self::Nonrobust => "nonrobust",
            Self::Backoff => "backoff",
            Self::NoSar => "no_sar",
        }
    }
}

impl fmt::Display for Scheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Scheme {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Scheme::ALL
            .into_iter()
            .find(|x| x.name() == s.trim())
            .ok_or_else(|| Error::Config(format!("unknown scheme `{s}`")))
    }
}

/// Parse a comma-separated scheme list such as `optimal,zf,backoff`.
pub fn parse_schemes(list: &str) -> Result<Vec<Scheme>> {
    list.split(',').filter(|s| !s.trim().is_empty()).map(str::parse).collect()
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepConfig {
    pub parameter: SweepParameter,
    pub values: Vec<f64>,
    pub schemes: Vec<Scheme>,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self {
            parameter: SweepParameter::SarLimit,
            values: vec![0.4, 0.8, 1.2, 1.6, 2.0],
            schemes: vec![Scheme::Optimal, Scheme::Hybrid, Scheme::Zf, Scheme::Rzf, Scheme::Backoff],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RobustConfig {
    pub error_samples: usize,
    pub draws: usize,
    /// Use `(1 + tau/||A||_F) trace(A W)` instead of the exact SAR worst case.
    pub linear_sar_surrogate: bool,
}

impl Default for RobustConfig {
    fn default() -> Self {
        Self { error_samples: 1000, draws: 1000, linear_sar_surrogate: false }
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub trials: usize,
    pub scenario: ScenarioConfig,
    pub channel: ChannelModel,
    pub eh: EhModel,
    pub uncertainty: UncertaintyConfig,
    pub sweep: SweepConfig,
    pub robust: RobustConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            trials: 100,
            scenario: ScenarioConfig::default(),
            channel: ChannelModel::default(),
            eh: EhModel::default(),
            uncertainty: UncertaintyConfig::default(),
            sweep: SweepConfig::default(),
            robust: RobustConfig::default(),
        }
    }
}

impl ExperimentConfig {
    /// Parse and validate; the error message starts with `line N:` whenever
    /// the offending key can be located.
    pub fn from_toml(src: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(src).map_err(|e| {
            let msg = e.message().to_string();
            match e.span() {
                Some(span) => Error::Config(format!("line {}: {msg}", line_of(src, span.start))),
                None => Error::Config(msg),
            }
        })?;
        cfg.validate(src)?;
        Ok(cfg)
    }

    pub fn from_path(path: &std::path::Path) -> Result<Self> {
        let src = std::fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        Self::from_toml(&src).map_err(|e| match e {
            Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    fn validate(&self, src: &str) -> Result<()> {
        let at = |section: &str, key: &str, msg: String| -> Error {
            match key_line(src, section, key) {
                Some(line) => Error::Config(format!("line {line}: {msg}")),
                None => Error::Config(msg),
            }
        };
        if self.trials == 0 {
            return Err(at("", "trials", "trials must be at least 1".into()));
        }
        self.eh.validate().map_err(|e| at("eh", "a", e.to_string()))?;
        self.channel.path_loss(self.channel.distance_min_m).map_err(|e| at("channel", "distance_min_m", e.to_string()))?;
        if !(self.channel.distance_max_m >= self.channel.distance_min_m) {
            return Err(at("channel", "distance_max_m", "distance_max_m must be >= distance_min_m".into()));
        }
        let scenario = self.scenario.build().map_err(|e| at("scenario", "num_antennas", e.to_string()))?;
        self.uncertainty
            .build(&scenario)
            .map_err(|e| at("uncertainty", "channel_error", e.to_string()))?;
        if self.sweep.values.is_empty() {
            return Err(at("sweep", "values", "sweep grid must not be empty".into()));
        }
        if self.sweep.values.iter().any(|v| !v.is_finite()) {
            return Err(at("sweep", "values", "sweep values must be finite".into()));
        }
        if self.sweep.schemes.is_empty() {
            return Err(at("sweep", "schemes", "at least one scheme is required".into()));
        }
        for &v in &self.sweep.values {
            self.scenario_at(v).map_err(|e| at("sweep", "values", format!("value {v}: {e}")))?;
        }
        if self.sweep.schemes.contains(&Scheme::FastSu) && (self.scenario.num_users != 1) {
            return Err(at("sweep", "schemes", "fast_su needs num_users = 1".into()));
        }
        if self.robust.error_samples == 0 {
            return Err(at("robust", "error_samples", "error_samples must be at least 1".into()));
        }
        Ok(())
    }

    pub fn base_scenario(&self) -> Result<SystemScenario> {
        self.scenario.build()
    }

    /// Scenario and uncertainty at one grid value of the sweep.
    pub fn scenario_at(&self, value: f64) -> Result<(SystemScenario, UncertaintyModel)> {
        let base = self.scenario.build()?;
        let mut unc = self.uncertainty;
        let s = match self.sweep.parameter {
            SweepParameter::SarLimit => {
                if base.num_sar() == 0 {
                    return Err(Error::Config("a SAR-limit sweep needs SAR constraints".into()));
                }
                base.with_sar_limits(value)?
            }
            SweepParameter::EhTarget => base.with_eh_targets(dbm_to_watts(value))?,
            SweepParameter::TotalPower => base.with_power_budget(dbm_to_watts(value))?,
            SweepParameter::UncertaintyRadius => {
                unc.channel_error = value;
                base
            }
        };
        let u = unc.build(&s)?;
        Ok((s, u))
    }
}

fn line_of(src: &str, offset: usize) -> usize {
    src[..offset.min(src.len())].matches('\n').count() + 1
}

/// 1-based line of `key = ...` inside `[section]` (`""` for the top level).
fn key_line(src: &str, section: &str, key: &str) -> Option<usize> {
    let mut current = String::new();
    let mut header_line = None;
    for (i, raw) in src.lines().enumerate() {
        let line = raw.trim();
        if let Some(name) = line.strip_prefix('[').and_then(|l| l.strip_suffix(']')) {
            current = name.trim().to_string();
            if current == section {
                header_line = Some(i + 1);
            }
            continue;
        }
        if current == section {
            if let Some((k, _)) = line.split_once('=') {
                if k.trim() == key {
                    return Some(i + 1);
                }
            }
        }
    }
    header_line
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_config_is_the_default() {
        let c = ExperimentConfig::from_toml("").unwrap();
        assert_eq!(c, ExperimentConfig::default());
        let s = c.base_scenario().unwrap();
        assert_eq!(s, SystemScenario::default_for(4, 4).unwrap());
    }

    #[test]
    fn full_config_round_trip() {
        let src = r#"
seed = 9
trials = 3

[scenario]
num_users = 2
power_budget_w = 1.0

[channel]
rician_factor_db = 3.0

[eh]
a = 2.0
b = 1.0
c = 1.0

[sweep]
parameter = "total_power"
values = [20.0, 30.0]
schemes = ["optimal", "no_sar"]
"#;
        let c = ExperimentConfig::from_toml(src).unwrap();
        assert_eq!(c.seed, 9);
        assert_eq!(c.scenario.num_users, 2);
        assert_eq!(c.channel.rician_factor_db, 3.0);
        let (s, _) = c.scenario_at(30.0).unwrap();
        assert!((s.power_budget - 1.0).abs() < 1e-12);
        assert_eq!(c.sweep.schemes, vec![Scheme::Optimal, Scheme::NoSar]);
    }

    #[test]
    fn errors_carry_line_numbers() {
        let e = ExperimentConfig::from_toml("seed = 1\n[sweep]\nparameter = \"bogus\"\nvalues=[1.0]\nschemes=[\"zf\"]\n").unwrap_err();
        assert!(e.to_string().contains("line 3"), "{e}");

        let e = ExperimentConfig::from_toml("trials = 2\n\n[scenario]\nnum_users = 2\ncolour = 1\n").unwrap_err();
        assert!(e.to_string().contains("line 5"), "{e}");

        let e = ExperimentConfig::from_toml("seed = 1\ntrials = 0\n").unwrap_err();
        assert!(e.to_string().contains("line 2"), "{e}");

        let src = "[sweep]\nparameter = \"sar_limit\"\nschemes = [\"zf\"]\nvalues = []\n";
        let e = ExperimentConfig::from_toml(src).unwrap_err();
        assert!(e.to_string().contains("line 4"), "{e}");

        let src = "[sweep]\nparameter = \"sar_limit\"\nvalues = [-1.0]\nschemes = [\"zf\"]\n";
        let e = ExperimentConfig::from_toml(src).unwrap_err();
        assert!(e.to_string().contains("line 3"), "{e}");
    }

    #[test]
    fn scheme_lists() {
        assert_eq!(parse_schemes("optimal, zf,no_sar").unwrap(), vec![Scheme::Optimal, Scheme::Zf, Scheme::NoSar]);
        assert!(parse_schemes("optimal,mmse").is_err());
        for s in Scheme::ALL {
            assert_eq!(s.name().parse::<Scheme>().unwrap(), s);
        }
    }
}
