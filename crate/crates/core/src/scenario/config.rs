//! The declarative TOML schema of a scenario file. These types mirror the
//! file one-to-one; [`super::Scenario::from_config`] resolves names, units
//! and defaults and validates cross-section consistency.

use serde::{Deserialize, Serialize};

use crate::exactness::ExactnessOptions;
use crate::solver::SolverOptions;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", deny_unknown_fields)]
pub struct Config {
    pub name: String,
    #[serde(default)]
    pub mode: ModeConfig,
    #[serde(default)]
    pub units: UnitSystem,
    pub states: Vec<String>,
    #[serde(default)]
    pub reactions: Vec<String>,
    pub network: NetworkConfig,
    pub horizon: HorizonConfig,
    #[serde(default)]
    pub kinetics: KineticsConfig,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub biomass: Vec<BiomassConfig>,
    pub objective: ObjectiveConfig,
    #[serde(default)]
    pub constraints: ConstraintsConfig,
    #[serde(default)]
    pub influent: InfluentConfig,
    #[serde(default)]
    pub solver: SolverOptions,
    #[serde(default)]
    pub exactness: ExactnessOptions,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ModeConfig {
    #[default]
    Transient,
    SteadyState,
}

/// `physical`: flows, step and rates are converted to days using the unit
/// annotations. `paper`: every number is used as written (step 1 is one
/// period, rates are per period).
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum UnitSystem {
    #[default]
    Physical,
    Paper,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", deny_unknown_fields)]
pub struct NetworkConfig {
    /// `m3/s`, `m3/h` or `m3/day`.
    #[serde(default = "default_flow_unit")]
    pub flow_unit: String,
    pub tank: Vec<TankConfig>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub flow: Vec<FlowConfig>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub diffusion: Vec<DiffusionConfig>,
    /// Later snapshots of a time-varying network; the tanks above are the
    /// snapshot starting at step 1.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub snapshot: Vec<SnapshotConfig>,
}

fn default_flow_unit() -> String {
    "m3/day".into()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", deny_unknown_fields)]
pub struct TankConfig {
    pub volume: f64,
    #[serde(default)]
    pub inflow: f64,
    #[serde(default)]
    pub outflow: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", deny_unknown_fields)]
pub struct FlowConfig {
    pub from: usize,
    pub to: usize,
    pub rate: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", deny_unknown_fields)]
pub struct DiffusionConfig {
    pub a: usize,
    pub b: usize,
    pub rate: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", deny_unknown_fields)]
pub struct SnapshotConfig {
    pub start: usize,
    pub inflow: Vec<f64>,
    pub outflow: Vec<f64>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub flow: Vec<FlowConfig>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub diffusion: Vec<DiffusionConfig>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", deny_unknown_fields)]
pub struct HorizonConfig {
    #[serde(default = "one")]
    pub tau: usize,
    #[serde(default = "one_f")]
    pub delta: f64,
    /// `min`, `h` or `day`.
    #[serde(default = "default_delta_unit")]
    pub delta_unit: String,
    #[serde(default)]
    pub boundary: BoundaryConfig,
    /// Per-tank initial state (`initial` boundary only).
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub initial: Vec<Vec<f64>>,
}

fn one() -> usize {
    1
}

fn one_f() -> f64 {
    1.0
}

fn default_delta_unit() -> String {
    "day".into()
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BoundaryConfig {
    #[default]
    Initial,
    Periodic,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", deny_unknown_fields)]
pub struct KineticsConfig {
    /// `1/day` or `1/h`.
    #[serde(default = "default_rate_unit")]
    pub rate_unit: String,
    /// One tank entry applies to every tank.
    #[serde(default)]
    pub shared: bool,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub tank: Vec<TankKineticsConfig>,
}

impl Default for KineticsConfig {
    fn default() -> Self {
        KineticsConfig {
            rate_unit: default_rate_unit(),
            shared: false,
            tank: Vec::new(),
        }
    }
}

fn default_rate_unit() -> String {
    "1/day".into()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", deny_unknown_fields)]
pub struct TankKineticsConfig {
    /// `m` rows of `r` entries. Entries are numbers or `"a/b"` strings, so
    /// reciprocal yields can be written exactly.
    pub kappa: Vec<Vec<Number>>,
    pub reaction: Vec<ReactionConfig>,
}

/// A number written either directly or as a quotient string `"a/b"`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Number {
    Value(f64),
    Expr(String),
}

impl Number {
    pub fn resolve(&self) -> Result<f64, String> {
        match self {
            Number::Value(v) => Ok(*v),
            Number::Expr(s) => {
                let parse = |t: &str| {
                    t.trim()
                        .parse::<f64>()
                        .map_err(|_| format!("cannot read {t:?} as a number"))
                };
                match s.split_once('/') {
                    Some((a, b)) => {
                        let den = parse(b)?;
                        if den == 0.0 {
                            return Err(format!("division by zero in {s:?}"));
                        }
                        Ok(parse(a)? / den)
                    }
                    None => parse(s),
                }
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "model", rename_all = "kebab-case", deny_unknown_fields)]
pub enum ReactionConfig {
    Monod {
        mu: f64,
        k: f64,
        substrate: String,
        /// Name of a `[[biomass]]` profile.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        biomass: Option<String>,
        /// Name of a state entry holding the biomass (simulation only).
        #[serde(default, rename = "biomass-state", skip_serializing_if = "Option::is_none")]
        biomass_state: Option<String>,
    },
    Contois {
        mu: f64,
        k: f64,
        substrate: String,
        biomass: String,
    },
    NonInteractive {
        a: Box<ReactionConfig>,
        b: Box<ReactionConfig>,
    },
    GeometricInteractive {
        a: Box<ReactionConfig>,
        b: Box<ReactionConfig>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum BiomassConfig {
    Constant {
        name: String,
        value: f64,
    },
    /// `mean + amplitude · sin(2π · cycles · n / τ + phase)`
    Sinusoid {
        name: String,
        mean: f64,
        amplitude: f64,
        cycles: f64,
        #[serde(default)]
        phase: f64,
    },
    Series {
        name: String,
        values: Vec<f64>,
    },
}

impl BiomassConfig {
    pub fn name(&self) -> &str {
        match self {
            BiomassConfig::Constant { name, .. }
            | BiomassConfig::Sinusoid { name, .. }
            | BiomassConfig::Series { name, .. } => name,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ObjectiveKind {
    SubstrateOutflow,
    BiogasMax,
    Setpoint,
    Composite,
}

/// Fields used depend on `kind`; unused fields are rejected at validation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", deny_unknown_fields)]
pub struct ObjectiveConfig {
    pub kind: ObjectiveKind,
    /// Composite term weight.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub weight: Option<f64>,
    /// Per-tank state weights; a single row applies to all tanks.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eta: Option<Vec<Vec<f64>>>,
    /// Per-tank reaction weights; a single row applies to all tanks.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sigma: Option<Vec<Vec<f64>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub capture: Option<Vec<usize>>,
    /// Full `ms × ms` weight matrix.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub matrix: Option<Vec<Vec<f64>>>,
    /// Diagonal weight matrix, `ms` entries.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub diagonal: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub target: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub term: Option<Vec<ObjectiveConfig>>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", deny_unknown_fields)]
pub struct ConstraintsConfig {
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub upper_bound: Vec<UpperBoundConfig>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub allocation: Vec<AllocationConfig>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", deny_unknown_fields)]
pub struct UpperBoundConfig {
    pub state: String,
    pub value: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tanks: Option<Vec<usize>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", deny_unknown_fields)]
pub struct AllocationConfig {
    pub state: String,
    /// Name of the influent totals series.
    pub source: String,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", deny_unknown_fields)]
pub struct InfluentConfig {
    /// Fixed influent concentrations: per tank, or one row for all tanks.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub values: Vec<Vec<f64>>,
    /// CSV file with per-step `xin:<tank>:<state>` columns overriding
    /// `values`. Relative to the scenario file.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub csv: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub totals: Option<TotalsConfig>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TotalsSource {
    #[default]
    Synthetic,
    Csv,
    Values,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", deny_unknown_fields)]
pub struct TotalsConfig {
    #[serde(default)]
    pub source: TotalsSource,
    /// CSV path for `source = "csv"`, relative to the scenario file.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub path: Option<String>,
    #[serde(default)]
    pub seed: u64,
    pub series: Vec<SeriesConfig>,
}

/// One allocated total. For the synthetic source the series is
/// `mean · (1 + diurnal-amplitude · sin(2π (n + diurnal-phase) / diurnal-period))`
/// plus a Gaussian bump of `spike-height` centred at `spike-step` with
/// standard deviation `spike-width`, plus optional white noise, clipped at 0.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", deny_unknown_fields)]
pub struct SeriesConfig {
    pub name: String,
    #[serde(default)]
    pub mean: f64,
    #[serde(default)]
    pub diurnal_amplitude: f64,
    /// Period in steps.
    #[serde(default = "default_period")]
    pub diurnal_period: f64,
    #[serde(default)]
    pub diurnal_phase: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub spike_step: Option<usize>,
    #[serde(default)]
    pub spike_height: f64,
    #[serde(default = "one_f")]
    pub spike_width: f64,
    #[serde(default)]
    pub noise_sd: f64,
    /// Explicit values for `source = "values"`.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub values: Vec<f64>,
}

fn default_period() -> f64 {
    96.0
}
