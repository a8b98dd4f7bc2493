//! Session configuration: one JSON file, every field optional.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::control::{ControlMode, MotorState, RegionThresholds, DEFAULT_MOTOR_SPEED, DEFAULT_PWA_MAP};
use crate::error::{Error, Result};
use crate::kinematics::DEFAULT_SMOOTHING_ALPHA;
use crate::participant::ParticipantModel;
use crate::plant::{calibrate_plant, CalibrationAnchors, PlantModel, PlantParams};
use crate::sim::{Rig, DEFAULT_TICK_RATE};
use crate::trials::{default_functional_battery, FunctionalObject};

/// Environment variable that replaces the configured output directory.
pub const OUT_DIR_ENV: &str = "ORTHOSIS_SIM_OUT";
pub const DEFAULT_OUT_DIR: &str = "orthosis-out";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SessionConfig {
    pub tick_rate: f64,
    pub mode: String,
    pub pwa_map: PwaMap,
    pub thresholds: RegionThresholds,
    pub motor: MotorConfig,
    pub smoothing_alpha: f64,
    pub plant: PlantConfig,
    pub participant: ParticipantModel,
    pub trials: TrialSelection,
    /// Base seed; repeat `r` of a battery uses `seed + r`.
    pub seed: u64,
    /// Not part of the written session record, so two runs into different
    /// directories produce identical trees.
    #[serde(skip_serializing)]
    pub out_dir: Option<PathBuf>,
}

impl Default for SessionConfig {
    fn default() -> Self {
        Self {
            tick_rate: DEFAULT_TICK_RATE,
            mode: "twa".into(),
            pwa_map: PwaMap::default(),
            thresholds: RegionThresholds::default(),
            motor: MotorConfig::default(),
            smoothing_alpha: DEFAULT_SMOOTHING_ALPHA,
            plant: PlantConfig::default(),
            participant: ParticipantModel::default(),
            trials: TrialSelection::default(),
            seed: 0,
            out_dir: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PwaMap {
    pub min: f64,
    pub max: f64,
}

impl Default for PwaMap {
    fn default() -> Self {
        Self {
            min: DEFAULT_PWA_MAP.0,
            max: DEFAULT_PWA_MAP.1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MotorConfig {
    pub speed: f64,
    pub upper_limit: f64,
}

impl Default for MotorConfig {
    fn default() -> Self {
        Self {
            speed: DEFAULT_MOTOR_SPEED,
            upper_limit: 1.0,
        }
    }
}

/// Either explicit plant parameters or anchors to calibrate against. With
/// neither, the default anchors are used on the default geometry.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PlantConfig {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub params: Option<PlantParams>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub anchors: Option<CalibrationAnchors>,
}

impl PlantConfig {
    pub fn build(&self) -> Result<PlantModel> {
        match (self.params, self.anchors) {
            (Some(_), Some(_)) => Err(Error::config("plant", "give either `params` or `anchors`, not both")),
            (Some(params), None) => PlantModel::from_params(params),
            (None, anchors) => calibrate_plant(&anchors.unwrap_or_default(), &PlantParams::uncalibrated())
                .map_err(|e| match e {
                    Error::Calibration(reason) => Error::config("plant.anchors", reason),
                    other => other,
                }),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrialSelection {
    pub max_force_trials: usize,
    pub modulation_repeats: usize,
    pub objects: Vec<FunctionalObject>,
}

impl Default for TrialSelection {
    fn default() -> Self {
        Self {
            max_force_trials: 3,
            modulation_repeats: 3,
            objects: default_functional_battery(),
        }
    }
}

impl SessionConfig {
    pub fn control_mode(&self) -> Result<ControlMode> {
        let mode = ControlMode::from_name(&self.mode, (self.pwa_map.min, self.pwa_map.max))?;
        mode.validate()?;
        Ok(mode)
    }

    /// Mode by name, sharing this config's PWA map.
    pub fn mode_named(&self, name: &str) -> Result<ControlMode> {
        let mode = ControlMode::from_name(name, (self.pwa_map.min, self.pwa_map.max))?;
        mode.validate()?;
        Ok(mode)
    }

    pub fn rig(&self) -> Result<Rig> {
        if !(self.tick_rate > 0.0) || !self.tick_rate.is_finite() {
            return Err(Error::config("tick_rate", "must be a positive number"));
        }
        let motor = MotorState {
            position: 0.0,
            speed: self.motor.speed,
            upper_limit: self.motor.upper_limit,
        };
        motor.validate().map_err(|e| prefix_field(e, "motor"))?;
        let rig = Rig {
            tick: 1.0 / self.tick_rate,
            thresholds: self.thresholds,
            motor,
            smoothing_alpha: self.smoothing_alpha,
            plant: self.plant.build()?,
            participant: self.participant,
        };
        rig.validate()?;
        Ok(rig)
    }

    /// Checks everything a trial could trip over later.
    pub fn validate(&self) -> Result<()> {
        self.control_mode()?;
        self.rig()?;
        if self.trials.max_force_trials == 0 {
            return Err(Error::config("trials.max_force_trials", "must be at least 1"));
        }
        if self.trials.modulation_repeats == 0 {
            return Err(Error::config("trials.modulation_repeats", "must be at least 1"));
        }
        for o in &self.trials.objects {
            o.validate()?;
        }
        if self.seed.checked_add(self.trials.modulation_repeats as u64).is_none() {
            return Err(Error::config("seed", "seed + modulation_repeats overflows"));
        }
        Ok(())
    }

    /// Output directory by precedence: explicit flag, then the environment
    /// override, then the config, then the default.
    pub fn resolve_out_dir(&self, flag: Option<&Path>, env: Option<&str>) -> PathBuf {
        if let Some(p) = flag {
            return p.to_path_buf();
        }
        if let Some(e) = env.filter(|e| !e.is_empty()) {
            return PathBuf::from(e);
        }
        self.out_dir.clone().unwrap_or_else(|| PathBuf::from(DEFAULT_OUT_DIR))
    }
}

fn prefix_field(err: Error, prefix: &str) -> Error {
    match err {
        Error::Config { field, reason } if !field.starts_with(prefix) => Error::Config {
            field: format!("{prefix}.{field}"),
            reason,
        },
        other => other,
    }
}

pub fn parse_config(text: &str) -> Result<SessionConfig> {
    let cfg: SessionConfig = serde_json::from_str(text).map_err(|e| Error::ConfigParse {
        line: e.line(),
        column: e.column(),
        message: strip_position(&e.to_string()),
    })?;
    cfg.validate()?;
    Ok(cfg)
}

pub fn load_config(path: impl AsRef<Path>) -> Result<SessionConfig> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|source| Error::ConfigFile {
        path: path.to_path_buf(),
        source,
    })?;
    parse_config(&text)
}

/// serde_json appends " at line L column C"; the error carries those separately.
fn strip_position(msg: &str) -> String {
    match msg.rfind(" at line ") {
        Some(i) => msg[..i].to_string(),
        None => msg.to_string(),
    }
}
