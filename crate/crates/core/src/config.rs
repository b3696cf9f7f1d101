//! Flat, serde-backed system configuration shared by the engine and the
//! experiment runner.

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{Result, SimError};
use crate::geometry::{
    apply_power_control, build_hex_grid, place_users, CellGrid, GainTensor, RawGains, Scenario, UserLayout,
};
use crate::pilots::{optimal_power_split, PowerSplit, ReuseSets};
use crate::rng::{stream, Domain};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RhoMode {
    Optimal,
    /// Fixed data fraction `rho_d^2`.
    Fixed(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Constellation {
    Qam4,
    Gaussian,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScenarioKind {
    /// Uniform placement with a minimum BS distance (Scenario 1).
    Uniform,
    /// Fixed circle placement (Scenario 2).
    Circle,
}

/// Which users the Monte Carlo engine measures.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MetricCells {
    /// Users of cell 0 only.
    Reference,
    /// Users of every simulated cell.
    All,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SystemConfig {
    #[serde(rename = "L", alias = "l", alias = "cells")]
    pub cells: usize,
    #[serde(rename = "K", alias = "k")]
    pub users_per_cell: usize,
    #[serde(rename = "M", alias = "m")]
    pub antennas: usize,
    pub m_sweep: Vec<usize>,
    pub k_sweep: Vec<usize>,
    pub radius_sweep: Vec<f64>,
    pub c_u: usize,
    pub c_d: usize,
    /// Must equal `reuse_r * K` when given.
    pub tau: Option<usize>,
    pub reuse_r: usize,
    pub snr_db: f64,
    pub omega: f64,
    pub omega_sp: f64,
    pub lambda_tp: f64,
    pub rho_mode: RhoMode,
    pub xi_ul: f64,
    pub constellation: Constellation,
    pub scenario: ScenarioKind,
    pub circle_radius: f64,
    pub min_dist: f64,
    pub tiers: usize,
    pub cell_radius: f64,
    pub path_loss_exponent: f64,
    pub trials: usize,
    pub seed: u64,
    /// Channel draws per user layout in the uniform scenario.
    pub draws_per_layout: usize,
    pub dl_symbols: usize,
    pub metric_cells: MetricCells,
}

impl Default for SystemConfig {
    fn default() -> Self {
        SystemConfig {
            cells: 7,
            users_per_cell: 5,
            antennas: 100,
            m_sweep: Vec::new(),
            k_sweep: Vec::new(),
            radius_sweep: Vec::new(),
            c_u: 100,
            c_d: 100,
            tau: None,
            reuse_r: 1,
            snr_db: 10.0,
            omega: 1.0,
            omega_sp: 1.0,
            lambda_tp: 1.0,
            rho_mode: RhoMode::Optimal,
            xi_ul: 0.5,
            constellation: Constellation::Qam4,
            scenario: ScenarioKind::Circle,
            circle_radius: 0.8,
            min_dist: 0.1,
            tiers: 1,
            cell_radius: 1.0,
            path_loss_exponent: 3.0,
            trials: 2000,
            seed: 42,
            draws_per_layout: 1,
            dl_symbols: 100,
            metric_cells: MetricCells::Reference,
        }
    }
}

fn config_err(msg: impl Into<String>) -> SimError {
    SimError::Config(msg.into())
}

impl SystemConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: SystemConfig = serde_json::from_str(text).map_err(|e| config_err(e.to_string()))?;
        Ok(cfg)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    /// Applies `key=value`; `value` is parsed as JSON, falling back to a string.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let mut map = match serde_json::to_value(&*self).expect("config serializes") {
            Value::Object(m) => m,
            _ => unreachable!("config is a JSON object"),
        };
        let canonical = match key {
            "l" | "cells" => "L",
            "k" => "K",
            "m" => "M",
            other => other,
        };
        if !map.contains_key(canonical) {
            return Err(config_err(format!("unknown config key '{key}'")));
        }
        let parsed = serde_json::from_str(value).unwrap_or_else(|_| Value::String(value.to_string()));
        map.insert(canonical.to_string(), parsed);
        *self = serde_json::from_value(Value::Object(map)).map_err(|e| config_err(format!("{key}: {e}")))?;
        Ok(())
    }

    /// Applies a JSON object of overrides key by key.
    pub fn merge_json(&mut self, overrides: &Value) -> Result<()> {
        let obj = overrides
            .as_object()
            .ok_or_else(|| config_err("overrides must be a JSON object"))?;
        for (k, v) in obj {
            self.set(k, &v.to_string())?;
        }
        Ok(())
    }

    pub fn tau(&self) -> usize {
        self.reuse_r * self.users_per_cell
    }

    /// `omega / SNR`.
    pub fn sigma_sq(&self) -> f64 {
        self.omega / 10f64.powf(self.snr_db / 10.0)
    }

    pub fn validate(&self) -> Result<()> {
        let counts = [
            ("L", self.cells),
            ("K", self.users_per_cell),
            ("M", self.antennas),
            ("c_u", self.c_u),
            ("c_d", self.c_d),
            ("reuse_r", self.reuse_r),
            ("trials", self.trials),
            ("draws_per_layout", self.draws_per_layout),
            ("dl_symbols", self.dl_symbols),
        ];
        if let Some((name, _)) = counts.iter().find(|(_, v)| *v == 0) {
            return Err(config_err(format!("{name} must be at least 1")));
        }
        if let Some(t) = self.tau {
            if t != self.tau() {
                return Err(config_err(format!("tau={t} must equal reuse_r*K={}", self.tau())));
            }
        }
        if self.tau() > self.c_u {
            return Err(config_err(format!("tau={} exceeds c_u={}", self.tau(), self.c_u)));
        }
        if !(0.0..=1.0).contains(&self.xi_ul) {
            return Err(config_err(format!("xi_ul must be in [0, 1], got {}", self.xi_ul)));
        }
        for (name, v) in [("omega", self.omega), ("omega_sp", self.omega_sp), ("cell_radius", self.cell_radius)] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(config_err(format!("{name} must be positive, got {v}")));
            }
        }
        if !(self.lambda_tp >= 0.0 && self.lambda_tp.is_finite()) {
            return Err(config_err(format!("lambda_tp must be nonnegative, got {}", self.lambda_tp)));
        }
        if !self.snr_db.is_finite() {
            return Err(config_err("snr_db must be finite"));
        }
        if let RhoMode::Fixed(x) = self.rho_mode {
            PowerSplit::new(x).map_err(|e| config_err(e.to_string()))?;
        }
        if !matches!(self.tiers, 1 | 2) {
            return Err(config_err(format!("tiers must be 1 or 2, got {}", self.tiers)));
        }
        let grid_cells = if self.tiers == 1 { 7 } else { 19 };
        if self.cells > grid_cells {
            return Err(config_err(format!("L={} exceeds the {grid_cells}-cell grid", self.cells)));
        }
        Ok(())
    }

    /// Simulated cells: the first `L` cells of the hexagonal grid.
    pub fn grid(&self) -> Result<CellGrid> {
        build_hex_grid(self.tiers, self.cell_radius)?.truncated(self.cells)
    }

    pub fn scenario(&self) -> Scenario {
        match self.scenario {
            ScenarioKind::Uniform => Scenario::Uniform { min_dist: self.min_dist },
            ScenarioKind::Circle => Scenario::Circle {
                radius: self.circle_radius,
                inside_hexagon: false,
            },
        }
    }

    pub fn reuse_sets(&self, grid: &CellGrid) -> Result<ReuseSets> {
        ReuseSets::for_grid(grid, self.reuse_r)
    }

    /// Power split for an SP window of `window` symbols.
    pub fn split(&self, window: usize) -> Result<PowerSplit> {
        match self.rho_mode {
            RhoMode::Optimal => optimal_power_split(self.antennas, self.cells, self.users_per_cell, window),
            RhoMode::Fixed(x) => PowerSplit::new(x),
        }
    }

    /// Whether every trial shares one layout.
    pub fn fixed_layout(&self) -> bool {
        self.scenario == ScenarioKind::Circle
    }

    /// Layout index used by `trial`.
    pub fn layout_index(&self, trial: u64) -> u64 {
        if self.fixed_layout() {
            0
        } else {
            trial / self.draws_per_layout as u64
        }
    }

    /// User layout `index` and its gains after power control with `omega`.
    pub fn layout(&self, grid: &CellGrid, index: u64) -> Result<(UserLayout, GainTensor)> {
        let mut rng = stream(self.seed, Domain::Layout, index);
        let layout = place_users(grid, self.users_per_cell, self.scenario(), &mut rng)?;
        let raw = RawGains::from_layout(grid, &layout, self.path_loss_exponent)?;
        let gains = apply_power_control(&raw, self.omega)?;
        Ok((layout, gains))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_are_valid() {
        let c = SystemConfig::default();
        c.validate().unwrap();
        assert!((c.sigma_sq() - 0.1).abs() < 1e-15);
        assert_eq!(c.tau(), 5);
    }

    #[test]
    fn json_round_trip_and_aliases() {
        let c = SystemConfig::from_json(r#"{"L": 3, "k": 2, "M": 64, "rho_mode": {"fixed": 0.25}}"#).unwrap();
        assert_eq!((c.cells, c.users_per_cell, c.antennas), (3, 2, 64));
        assert_eq!(c.rho_mode, RhoMode::Fixed(0.25));
        let back = SystemConfig::from_json(&c.to_json()).unwrap();
        assert_eq!(back, c);
        assert!(SystemConfig::from_json(r#"{"bogus": 1}"#).is_err());
    }

    #[test]
    fn set_overrides() {
        let mut c = SystemConfig::default();
        c.set("M", "300").unwrap();
        c.set("scenario", "uniform").unwrap();
        c.set("rho_mode", r#"{"fixed":0.5}"#).unwrap();
        c.set("m_sweep", "[10,20]").unwrap();
        assert_eq!(c.antennas, 300);
        assert_eq!(c.scenario, ScenarioKind::Uniform);
        assert_eq!(c.m_sweep, vec![10, 20]);
        assert!(c.set("nope", "1").is_err());
        assert!(c.set("M", "abc").unwrap_err().is_config_error());
    }

    #[test]
    fn validation_catches_bad_values() {
        let mut c = SystemConfig::default();
        c.tau = Some(4);
        assert!(c.validate().is_err());
        let mut c = SystemConfig::default();
        c.c_u = 4;
        assert!(c.validate().is_err());
        let mut c = SystemConfig::default();
        c.cells = 8;
        assert!(c.validate().is_err());
        c.tiers = 2;
        c.validate().unwrap();
        let mut c = SystemConfig::default();
        c.xi_ul = 1.5;
        assert!(c.validate().is_err());
    }

    #[test]
    fn circle_layout_is_seed_independent() {
        let mut c = SystemConfig::default();
        let grid = c.grid().unwrap();
        let (a, ga) = c.layout(&grid, 0).unwrap();
        c.seed = 7;
        let (b, gb) = c.layout(&grid, 3).unwrap();
        assert_eq!(a, b);
        assert_eq!(ga, gb);
        assert_eq!(ga.get(2, 2, 3), 1.0);
    }
}
