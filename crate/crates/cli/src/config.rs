//! Run configuration, loaded from TOML. Keys map one-to-one onto the fields
//! below; unknown keys are rejected.

use std::path::{Path, PathBuf};

use coco_core::filter::FilterConfig;
use coco_core::model::{ModelParams, ScheduleConfig, UpdateSchedule};
use coco_core::oracle::OracleConfig;
use serde::{Deserialize, Serialize};

use crate::error::CliError;

/// The illustration's correlation sweep.
pub const DEFAULT_RHO_SWEEP: [f64; 5] = [0.01, 0.25, 0.5, 0.75, 0.99];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    /// Seed of the stock scenarios and hidden fundamental paths.
    pub seed: u64,
    pub output_dir: PathBuf,
    pub rho_sweep: Vec<f64>,
    pub model: ModelParams,
    pub schedule: ScheduleConfig,
    pub scenarios: ScenarioSource,
    pub oracle: OracleSettings,
    pub filter: FilterSettings,
    /// Recorded by the manifest so that a rerun needs no extra flags.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub run: Option<RunRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioSource {
    /// Number of simulated stock scenarios.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub count: Option<u64>,
    /// CSV with columns `t,stock` (one scenario) or `scenario,t,stock`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stock_path_file: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OracleSettings {
    pub n_paths: u64,
    pub dt_fine: f64,
    pub seed: u64,
    /// Oracle checkpoints every this many quotes in `--validate` runs.
    pub checkpoint_stride: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FilterSettings {
    pub grid_points: usize,
    pub tail_sigmas: f64,
    pub band_sigmas: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunRecord {
    pub command: String,
    pub validate: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 20_251_016,
            output_dir: PathBuf::from("out"),
            rho_sweep: DEFAULT_RHO_SWEEP.to_vec(),
            model: ModelParams::illustration(),
            schedule: ScheduleConfig {
                update_times: vec![0.0, 1.0, 2.0],
                observation_step: Some(0.01),
                observation_times: None,
            },
            scenarios: ScenarioSource {
                count: Some(4),
                stock_path_file: None,
            },
            oracle: OracleSettings {
                n_paths: 20_000,
                dt_fine: 1e-3,
                seed: 7,
                checkpoint_stride: 5,
            },
            filter: FilterSettings {
                grid_points: 1024,
                tail_sigmas: 8.0,
                band_sigmas: 12.0,
            },
            run: None,
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        let mut cfg: RunConfig =
            toml::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        // A relative stock file is resolved against the config's directory.
        if let (Some(file), Some(dir)) = (&cfg.scenarios.stock_path_file, path.parent()) {
            if file.is_relative() {
                cfg.scenarios.stock_path_file = Some(dir.join(file));
            }
        }
        Ok(cfg)
    }

    pub fn to_toml(&self) -> Result<String, CliError> {
        toml::to_string(self).map_err(|e| CliError::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<(), CliError> {
        if self.model.sigma > 0.0 {
            self.model.validate()?;
        } else {
            self.model.validate_simulation()?;
        }
        if self.rho_sweep.is_empty() {
            return Err(CliError::Config("rho_sweep must not be empty".into()));
        }
        if let Some(bad) = self.rho_sweep.iter().find(|r| !(r.abs() < 1.0)) {
            return Err(CliError::Config(format!("rho_sweep value {bad} outside (-1, 1)")));
        }
        let schedule = self.schedule()?;
        if schedule.periods() == 0 {
            return Err(CliError::Config("schedule needs at least one period".into()));
        }
        match (&self.scenarios.count, &self.scenarios.stock_path_file) {
            (Some(0), _) => return Err(CliError::Config("scenarios.count must be >= 1".into())),
            (Some(_), None) | (None, Some(_)) => {}
            _ => {
                return Err(CliError::Config(
                    "scenarios needs exactly one of count or stock_path_file".into(),
                ))
            }
        }
        if self.oracle.n_paths == 0 || !(self.oracle.dt_fine > 0.0) || self.oracle.checkpoint_stride == 0 {
            return Err(CliError::Config(
                "oracle needs n_paths >= 1, dt_fine > 0 and checkpoint_stride >= 1".into(),
            ));
        }
        if self.filter.grid_points < 8 || !(self.filter.tail_sigmas > 0.0) || !(self.filter.band_sigmas > 0.0) {
            return Err(CliError::Config(
                "filter needs grid_points >= 8 and positive tail/band widths".into(),
            ));
        }
        Ok(())
    }

    pub fn schedule(&self) -> Result<UpdateSchedule, CliError> {
        Ok(UpdateSchedule::from_config(&self.schedule)?)
    }

    /// End of the first period, the horizon of survival and price outputs.
    pub fn first_update(&self) -> Result<f64, CliError> {
        self.schedule()?
            .update_times()
            .get(1)
            .copied()
            .ok_or_else(|| CliError::Config("schedule needs at least one period".into()))
    }

    pub fn filter_config(&self) -> FilterConfig {
        FilterConfig {
            grid_points: self.filter.grid_points,
            tail_sigmas: self.filter.tail_sigmas,
            band_sigmas: self.filter.band_sigmas,
            ..FilterConfig::default()
        }
    }

    /// Oracle settings for one scenario and sweep index.
    pub fn oracle_config(&self, scenario: usize, rho_index: usize) -> OracleConfig {
        OracleConfig {
            n_paths: self.oracle.n_paths,
            dt_fine: self.oracle.dt_fine,
            seed: self
                .oracle
                .seed
                .wrapping_add(1000 * scenario as u64)
                .wrapping_add(rho_index as u64),
        }
    }

    pub fn params_for(&self, rho: f64) -> ModelParams {
        self.model.with_rho(rho)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_round_trips_through_toml() {
        let cfg = RunConfig::default();
        cfg.validate().unwrap();
        let text = cfg.to_toml().unwrap();
        let back: RunConfig = toml::from_str(&text).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let mut text = RunConfig::default().to_toml().unwrap();
        text.push_str("\n[extra]\nkey = 1\n");
        assert!(toml::from_str::<RunConfig>(&text).is_err());
    }

    #[test]
    fn invalid_sweep_is_a_config_error() {
        let cfg = RunConfig {
            rho_sweep: vec![0.5, 1.0],
            ..RunConfig::default()
        };
        assert!(matches!(cfg.validate(), Err(CliError::Config(_))));
    }
}
