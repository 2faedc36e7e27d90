//! Scenario document: the JSON-compatible description of a network, demand,
//! penetration and controller configuration that drives every run.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Scenario {
    pub links: Vec<LinkCfg>,
    pub movements: Vec<MovementCfg>,
    pub nodes: Vec<NodeCfg>,
    pub od_pairs: Vec<OdPairCfg>,
    pub demand_profiles: Vec<DemandProfileCfg>,
    #[serde(default)]
    pub penetration: PenetrationCfg,
    pub controller: ControllerCfg,
    pub sim: SimCfg,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LinkCfg {
    pub id: String,
    #[serde(default)]
    pub length_m: f64,
    #[serde(default = "one_usize")]
    pub lanes: usize,
    #[serde(default = "default_speed")]
    pub free_flow_speed_mps: f64,
    #[serde(default = "default_jam_density")]
    pub jam_density_veh_per_m_per_lane: f64,
    #[serde(default)]
    pub is_source: bool,
    #[serde(default)]
    pub is_sink: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MovementCfg {
    pub incoming: String,
    pub outgoing: String,
    pub saturation_flow_vps: f64,
    pub turning_ratio: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct NodeCfg {
    pub id: String,
    pub phases: Vec<PhaseCfg>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PhaseCfg {
    pub id: String,
    /// Member movements as `[incoming, outgoing]` link id pairs.
    pub movements: Vec<[String; 2]>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct OdPairCfg {
    pub id: String,
    /// Full link sequence, starting at a source link and ending at a sink link.
    pub route: Vec<String>,
    pub demand_profile: String,
}

/// Piecewise-constant demand rate: `rates_vps[k]` applies on
/// `[breakpoints_s[k], breakpoints_s[k+1])`, the last rate until the horizon.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DemandProfileCfg {
    pub id: String,
    pub breakpoints_s: Vec<f64>,
    pub rates_vps: Vec<f64>,
}

impl DemandProfileCfg {
    pub fn rate_at(&self, t: f64) -> f64 {
        let mut rate = 0.0;
        for (bp, r) in self.breakpoints_s.iter().zip(&self.rates_vps) {
            if t >= *bp {
                rate = *r;
            } else {
                break;
            }
        }
        rate
    }

    /// Time-averaged rate over `[0, horizon_s]`, used for admissibility and
    /// route-consistency checks.
    pub fn average_rate(&self, horizon_s: f64) -> f64 {
        if horizon_s <= 0.0 {
            return 0.0;
        }
        let mut total = 0.0;
        for (k, bp) in self.breakpoints_s.iter().enumerate() {
            let start = bp.min(horizon_s);
            let end = self
                .breakpoints_s
                .get(k + 1)
                .copied()
                .unwrap_or(horizon_s)
                .min(horizon_s);
            if end > start {
                total += self.rates_vps[k] * (end - start);
            }
        }
        total / horizon_s
    }
}

/// Penetration rates keyed per OD pair, with optional per-movement overrides
/// (movement key is `"incoming->outgoing"`). Vehicles are tagged by their OD's
/// rate; movement entries feed observation-side diagnostics.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PenetrationCfg {
    #[serde(default = "one_f64")]
    pub default: f64,
    #[serde(default)]
    pub od: BTreeMap<String, f64>,
    #[serde(default)]
    pub movement: BTreeMap<String, f64>,
}

impl Default for PenetrationCfg {
    fn default() -> Self {
        Self {
            default: 1.0,
            od: BTreeMap::new(),
            movement: BTreeMap::new(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ControllerKind {
    Qmp,
    Pwmp,
    Cvmp,
    Holmp,
    Tdmp,
    Actuated,
}

impl ControllerKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            ControllerKind::Qmp => "qmp",
            ControllerKind::Pwmp => "pwmp",
            ControllerKind::Cvmp => "cvmp",
            ControllerKind::Holmp => "holmp",
            ControllerKind::Tdmp => "tdmp",
            ControllerKind::Actuated => "actuated",
        }
    }
}

impl std::str::FromStr for ControllerKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "qmp" => Ok(ControllerKind::Qmp),
            "pwmp" => Ok(ControllerKind::Pwmp),
            "cvmp" => Ok(ControllerKind::Cvmp),
            "holmp" => Ok(ControllerKind::Holmp),
            "tdmp" => Ok(ControllerKind::Tdmp),
            "actuated" => Ok(ControllerKind::Actuated),
            other => Err(Error::InvalidScenario(format!(
                "unknown controller type `{other}`"
            ))),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ControllerCfg {
    #[serde(rename = "type")]
    pub kind: ControllerKind,
    /// Q-MP: scale per-vehicle weight by 1/sqrt(L_i). Default on.
    #[serde(default = "default_true")]
    pub length_scaled: bool,
    #[serde(default = "default_tie_break")]
    pub tie_break: String,
    // Actuated parameters. Detector offset from the stop line plus gap/min/max
    // green; defaults documented in the scenario schema.
    #[serde(default = "default_detector")]
    pub detector_m: f64,
    #[serde(default = "default_gap")]
    pub gap_s: f64,
    #[serde(default = "default_min_green")]
    pub min_green_s: f64,
    #[serde(default = "default_max_green")]
    pub max_green_s: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SimCfg {
    #[serde(default = "one_f64")]
    pub dt_s: f64,
    pub horizon_s: f64,
    #[serde(default = "default_t0")]
    pub t0_s: f64,
    #[serde(default = "default_ty")]
    pub ty_s: f64,
    #[serde(default = "one_u64")]
    pub seed: u64,
    /// Multiplies every demand profile rate; used for instability fixtures.
    #[serde(default = "one_f64")]
    pub demand_scale: f64,
}

fn one_usize() -> usize {
    1
}
fn one_f64() -> f64 {
    1.0
}
fn one_u64() -> u64 {
    1
}
fn default_speed() -> f64 {
    13.89
}
fn default_jam_density() -> f64 {
    1.0 / 7.5
}
fn default_true() -> bool {
    true
}
fn default_tie_break() -> String {
    "lowest_phase".to_string()
}
fn default_detector() -> f64 {
    30.0
}
fn default_gap() -> f64 {
    3.0
}
fn default_min_green() -> f64 {
    5.0
}
fn default_max_green() -> f64 {
    60.0
}
fn default_t0() -> f64 {
    10.0
}
fn default_ty() -> f64 {
    3.0
}

impl Scenario {
    pub fn from_path(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let scenario: Scenario = serde_json::from_str(&text)?;
        scenario.validate_basic()?;
        Ok(scenario)
    }

    pub fn from_str(text: &str) -> Result<Self> {
        let scenario: Scenario = serde_json::from_str(text)?;
        scenario.validate_basic()?;
        Ok(scenario)
    }

    pub fn validate_basic(&self) -> Result<()> {
        if self.sim.dt_s <= 0.0 {
            return Err(Error::InvalidScenario("sim.dt_s must be > 0".into()));
        }
        if self.sim.t0_s <= self.sim.ty_s || self.sim.ty_s < 0.0 {
            return Err(Error::InvalidScenario(
                "require T0 > Ty >= 0 in sim config".into(),
            ));
        }
        let ratio = self.sim.t0_s / self.sim.dt_s;
        if (ratio - ratio.round()).abs() > 1e-9 {
            return Err(Error::InvalidScenario(
                "sim.t0_s must be a multiple of sim.dt_s".into(),
            ));
        }
        for (key, xi) in self
            .penetration
            .od
            .iter()
            .chain(self.penetration.movement.iter())
            .chain(std::iter::once((
                &"default".to_string(),
                &self.penetration.default,
            )))
        {
            if !(0.0..=1.0).contains(xi) {
                return Err(Error::InvalidScenario(format!(
                    "penetration `{key}` = {xi} outside [0,1]"
                )));
            }
        }
        for profile in &self.demand_profiles {
            if profile.breakpoints_s.len() != profile.rates_vps.len() {
                return Err(Error::InvalidScenario(format!(
                    "demand profile `{}`: breakpoints/rates length mismatch",
                    profile.id
                )));
            }
            if !profile.breakpoints_s.windows(2).all(|w| w[0] < w[1]) {
                return Err(Error::InvalidScenario(format!(
                    "demand profile `{}`: breakpoints must be strictly increasing",
                    profile.id
                )));
            }
        }
        Ok(())
    }

    pub fn profile(&self, id: &str) -> Result<&DemandProfileCfg> {
        self.demand_profiles
            .iter()
            .find(|p| p.id == id)
            .ok_or_else(|| Error::DanglingReference {
                kind: "demand profile",
                id: id.to_string(),
            })
    }

    /// Penetration rate used when tagging vehicles of an OD pair.
    pub fn penetration_for_od(&self, od_id: &str) -> f64 {
        self.penetration
            .od
            .get(od_id)
            .copied()
            .unwrap_or(self.penetration.default)
    }
}
