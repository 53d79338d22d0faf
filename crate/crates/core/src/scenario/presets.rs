//! Reference scenarios shipped with the crate.

use std::path::Path;

use super::config::{Config, DiffusionConfig, FlowConfig, TankConfig};
use super::Scenario;
use crate::error::{Error, Result};

pub const WASTEWATER: &str = include_str!("../../presets/wastewater.toml");
pub const GRADOSTAT: &str = include_str!("../../presets/gradostat.toml");

pub fn names() -> &'static [&'static str] {
    &["wastewater", "gradostat"]
}

pub fn text(name: &str) -> Option<&'static str> {
    match name {
        "wastewater" => Some(WASTEWATER),
        "gradostat" => Some(GRADOSTAT),
        _ => None,
    }
}

pub fn load(name: &str) -> Result<Scenario> {
    let text = text(name).ok_or_else(|| Error::invalid("preset", format!("unknown preset {name:?}")))?;
    Scenario::from_toml(text, Path::new("."))
}

pub fn wastewater() -> Scenario {
    load("wastewater").expect("the wastewater preset is valid")
}

/// The wastewater preset over `tau` steps of the same length.
pub fn wastewater_with_tau(tau: usize) -> Result<Scenario> {
    let mut cfg: Config = toml::from_str(WASTEWATER)?;
    cfg.horizon.tau = tau;
    if let Some(t) = &mut cfg.influent.totals {
        // keep the spike at the same fraction of the horizon
        for s in &mut t.series {
            if let Some(at) = &mut s.spike_step {
                *at = ((*at as f64) * tau as f64 / 96.0).round().max(1.0) as usize;
            }
        }
    }
    Scenario::from_config(cfg, Path::new("."))
}

/// A gradostat chain of `s` tanks: substrate enters the first tank, flows
/// down the chain and leaves from the last, with diffusion between
/// neighbours.
pub fn gradostat(s: usize) -> Result<Scenario> {
    let mut cfg: Config = toml::from_str(GRADOSTAT)?;
    cfg.name = format!("gradostat-{s}");
    cfg.network.tank = (0..s)
        .map(|i| TankConfig {
            volume: if i % 2 == 1 { 1.5 } else { 1.0 },
            inflow: if i == 0 { 1.0 } else { 0.0 },
            outflow: if i + 1 == s { 1.0 } else { 0.0 },
        })
        .collect();
    cfg.network.flow = (1..s).map(|i| FlowConfig { from: i - 1, to: i, rate: 1.0 }).collect();
    cfg.network.diffusion = (1..s)
        .map(|i| DiffusionConfig {
            a: i - 1,
            b: i,
            rate: 0.2,
        })
        .collect();
    Scenario::from_config(cfg, Path::new("."))
}
