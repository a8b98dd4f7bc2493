//! Wrist-angle controllers: the three-region throttle controller (TWA) and the
//! binary (BWA) and proportional (PWA) baselines.
//!
//! All step functions are pure. Motor position is a normalized tendon
//! excursion that never leaves `[0, upper_limit]`.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kinematics::WristSample;

pub const DEFAULT_THRESHOLD: f64 = 15.0;
pub const DEFAULT_MOTOR_SPEED: f64 = 0.1;
pub const DEFAULT_PWA_MAP: (f64, f64) = (0.0, 40.0);

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RegionThresholds {
    pub open: f64,
    pub close: f64,
}

impl Default for RegionThresholds {
    fn default() -> Self {
        Self {
            open: -DEFAULT_THRESHOLD,
            close: DEFAULT_THRESHOLD,
        }
    }
}

impl RegionThresholds {
    pub fn new(open: f64, close: f64) -> Result<Self> {
        let t = Self { open, close };
        t.validate()?;
        Ok(t)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.open < 0.0) {
            return Err(Error::config("thresholds.open", "must be negative"));
        }
        if !(self.close > 0.0) {
            return Err(Error::config("thresholds.close", "must be positive"));
        }
        if !self.open.is_finite() || !self.close.is_finite() {
            return Err(Error::config("thresholds", "must be finite"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Region {
    Open,
    Neutral,
    Close,
}

impl Region {
    pub fn as_str(&self) -> &'static str {
        match self {
            Region::Open => "open",
            Region::Neutral => "neutral",
            Region::Close => "close",
        }
    }
}

impl fmt::Display for Region {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Region {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "open" => Ok(Region::Open),
            "neutral" => Ok(Region::Neutral),
            "close" => Ok(Region::Close),
            other => Err(Error::invalid(format!("unknown region `{other}`"))),
        }
    }
}

/// Boundary values belong to `Neutral`.
pub fn classify_region(angle: f64, thresholds: &RegionThresholds) -> Result<Region> {
    if !angle.is_finite() {
        return Err(Error::invalid(format!("wrist angle {angle} is not finite")));
    }
    Ok(if angle > thresholds.close {
        Region::Close
    } else if angle < thresholds.open {
        Region::Open
    } else {
        Region::Neutral
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MotorState {
    /// Normalized tendon excursion.
    pub position: f64,
    /// Excursion per second.
    pub speed: f64,
    pub upper_limit: f64,
}

impl MotorState {
    pub const LOWER_LIMIT: f64 = 0.0;

    pub fn new(speed: f64, upper_limit: f64) -> Result<Self> {
        let m = Self {
            position: 0.0,
            speed,
            upper_limit,
        };
        m.validate()?;
        Ok(m)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.speed > 0.0) || !self.speed.is_finite() {
            return Err(Error::config("motor.speed", "must be positive"));
        }
        if !(self.upper_limit > 0.0 && self.upper_limit <= 1.0) {
            return Err(Error::config("motor.upper_limit", "must be in (0, 1]"));
        }
        if !(self.position >= Self::LOWER_LIMIT && self.position <= self.upper_limit) {
            return Err(Error::invalid(format!(
                "motor position {} outside [0, {}]",
                self.position, self.upper_limit
            )));
        }
        Ok(())
    }

    fn with_position(&self, position: f64) -> Self {
        Self {
            position: position.clamp(Self::LOWER_LIMIT, self.upper_limit),
            ..*self
        }
    }

    /// Moves toward `setpoint` by at most `speed * dt`, without overshoot.
    pub fn slew_toward(&self, setpoint: f64, dt: f64) -> Self {
        let setpoint = setpoint.clamp(Self::LOWER_LIMIT, self.upper_limit);
        let max_step = self.speed * dt;
        let delta = (setpoint - self.position).clamp(-max_step, max_step);
        if delta.abs() >= (setpoint - self.position).abs() {
            self.with_position(setpoint)
        } else {
            self.with_position(self.position + delta)
        }
    }
}

pub fn twa_step(region: Region, motor: &MotorState, dt: f64) -> MotorState {
    match region {
        Region::Close => motor.with_position((motor.position + motor.speed * dt).min(motor.upper_limit)),
        Region::Open => motor.with_position((motor.position - motor.speed * dt).max(0.0)),
        Region::Neutral => *motor,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum GraspLatch {
    #[default]
    Relaxed,
    Grasping,
}

impl GraspLatch {
    pub fn setpoint(&self, motor: &MotorState) -> f64 {
        match self {
            GraspLatch::Relaxed => 0.0,
            GraspLatch::Grasping => motor.upper_limit,
        }
    }
}

pub fn bwa_step(
    angle: f64,
    thresholds: &RegionThresholds,
    latched: GraspLatch,
    motor: &MotorState,
    dt: f64,
) -> Result<(GraspLatch, MotorState)> {
    let latched = match classify_region(angle, thresholds)? {
        Region::Close => GraspLatch::Grasping,
        Region::Open => GraspLatch::Relaxed,
        Region::Neutral => latched,
    };
    Ok((latched, motor.slew_toward(latched.setpoint(motor), dt)))
}

/// Proportional setpoint for `angle` on the `[map_min, map_max]` map.
pub fn pwa_setpoint(angle: f64, map_min: f64, map_max: f64, upper_limit: f64) -> f64 {
    ((angle - map_min) / (map_max - map_min)).clamp(0.0, 1.0) * upper_limit
}

pub fn pwa_step(angle: f64, map_min: f64, map_max: f64, motor: &MotorState, dt: f64) -> MotorState {
    motor.slew_toward(pwa_setpoint(angle, map_min, map_max, motor.upper_limit), dt)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ControlMode {
    Twa,
    Bwa,
    Pwa { map_min: f64, map_max: f64 },
    /// No device: the motor stays at rest.
    Passive,
}

impl ControlMode {
    pub const ALL_NAMES: [&'static str; 4] = ["twa", "bwa", "pwa", "passive"];

    pub fn pwa_default() -> Self {
        ControlMode::Pwa {
            map_min: DEFAULT_PWA_MAP.0,
            map_max: DEFAULT_PWA_MAP.1,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            ControlMode::Twa => "twa",
            ControlMode::Bwa => "bwa",
            ControlMode::Pwa { .. } => "pwa",
            ControlMode::Passive => "passive",
        }
    }

    /// Parses a mode name; PWA takes the supplied map.
    pub fn from_name(name: &str, pwa_map: (f64, f64)) -> Result<Self> {
        match name.to_ascii_lowercase().as_str() {
            "twa" => Ok(ControlMode::Twa),
            "bwa" => Ok(ControlMode::Bwa),
            "pwa" => Ok(ControlMode::Pwa {
                map_min: pwa_map.0,
                map_max: pwa_map.1,
            }),
            "passive" | "none" => Ok(ControlMode::Passive),
            other => Err(Error::config(
                "mode",
                format!("unknown mode `{other}` (expected twa, bwa, pwa or passive)"),
            )),
        }
    }

    pub fn is_assisted(&self) -> bool {
        !matches!(self, ControlMode::Passive)
    }

    pub fn validate(&self) -> Result<()> {
        if let ControlMode::Pwa { map_min, map_max } = self {
            if !(map_min < map_max) {
                return Err(Error::config("pwa_map", "min must be below max"));
            }
        }
        Ok(())
    }
}

impl fmt::Display for ControlMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ControllerConfig {
    pub mode: ControlMode,
    pub thresholds: RegionThresholds,
    /// Fixed tick, seconds.
    pub tick: f64,
}

impl ControllerConfig {
    pub fn new(mode: ControlMode, thresholds: RegionThresholds, tick: f64) -> Result<Self> {
        mode.validate()?;
        thresholds.validate()?;
        if !(tick > 0.0) {
            return Err(Error::config("tick_rate", "must be positive"));
        }
        Ok(Self {
            mode,
            thresholds,
            tick,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ControllerState {
    pub motor: MotorState,
    /// Region of the most recent input, kept for logging.
    pub region: Region,
    pub latch: GraspLatch,
}

impl ControllerState {
    pub fn new(motor: MotorState) -> Self {
        Self {
            motor,
            region: Region::Neutral,
            latch: GraspLatch::Relaxed,
        }
    }
}

pub fn controller_step(
    config: &ControllerConfig,
    wrist: &WristSample,
    state: &ControllerState,
) -> Result<ControllerState> {
    let dt = config.tick;
    let angle = wrist.angle;
    let region = classify_region(angle, &config.thresholds)?;
    let mut next = ControllerState { region, ..*state };
    match config.mode {
        ControlMode::Twa => next.motor = twa_step(region, &state.motor, dt),
        ControlMode::Bwa => {
            let (latch, motor) = bwa_step(angle, &config.thresholds, state.latch, &state.motor, dt)?;
            next.latch = latch;
            next.motor = motor;
        }
        ControlMode::Pwa { map_min, map_max } => {
            next.motor = pwa_step(angle, map_min, map_max, &state.motor, dt)
        }
        ControlMode::Passive => next.motor = state.motor.with_position(0.0),
    }
    Ok(next)
}

/// Owns a controller state and advances it one tick at a time.
#[derive(Debug, Clone)]
pub struct Controller {
    config: ControllerConfig,
    state: ControllerState,
}

impl Controller {
    pub fn new(config: ControllerConfig, motor: MotorState) -> Self {
        Self {
            config,
            state: ControllerState::new(motor),
        }
    }

    pub fn config(&self) -> &ControllerConfig {
        &self.config
    }

    pub fn state(&self) -> &ControllerState {
        &self.state
    }

    pub fn step(&mut self, wrist: &WristSample) -> Result<&ControllerState> {
        self.state = controller_step(&self.config, wrist, &self.state)?;
        Ok(&self.state)
    }

    /// Changes mode in place; the motor keeps its position.
    pub fn set_mode(&mut self, mode: ControlMode) -> Result<()> {
        mode.validate()?;
        self.config.mode = mode;
        self.state.latch = GraspLatch::Relaxed;
        Ok(())
    }

    pub fn set_thresholds(&mut self, thresholds: RegionThresholds) -> Result<()> {
        thresholds.validate()?;
        self.config.thresholds = thresholds;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn motor(position: f64, speed: f64) -> MotorState {
        MotorState {
            position,
            speed,
            upper_limit: 1.0,
        }
    }

    #[test]
    fn region_examples() {
        let t = RegionThresholds::default();
        assert_eq!(classify_region(20.0, &t).unwrap(), Region::Close);
        assert_eq!(classify_region(0.0, &t).unwrap(), Region::Neutral);
        assert_eq!(classify_region(15.0, &t).unwrap(), Region::Neutral);
        assert_eq!(classify_region(-15.0, &t).unwrap(), Region::Neutral);
        assert_eq!(classify_region(-20.0, &t).unwrap(), Region::Open);
        assert!(classify_region(f64::NAN, &t).is_err());
        assert!(classify_region(f64::INFINITY, &t).is_err());
    }

    #[test]
    fn thresholds_must_straddle_zero() {
        assert!(RegionThresholds::new(5.0, 15.0).is_err());
        assert!(RegionThresholds::new(-15.0, -1.0).is_err());
        assert!(RegionThresholds::new(-10.0, 20.0).is_ok());
    }

    #[test]
    fn twa_examples() {
        let m = twa_step(Region::Close, &motor(0.5, 0.25), 0.1);
        assert_abs_diff_eq!(m.position, 0.525, epsilon = 1e-12);
        assert_eq!(twa_step(Region::Neutral, &motor(0.5, 0.25), 0.1).position, 0.5);
        assert_eq!(twa_step(Region::Close, &motor(1.0, 0.25), 0.1).position, 1.0);
        assert_eq!(twa_step(Region::Open, &motor(0.0, 0.25), 0.1).position, 0.0);
        assert_abs_diff_eq!(
            twa_step(Region::Open, &motor(0.5, 0.25), 0.1).position,
            0.475,
            epsilon = 1e-12
        );
    }

    #[test]
    fn twa_respects_lowered_upper_limit() {
        let m = MotorState {
            position: 0.69,
            speed: 0.25,
            upper_limit: 0.7,
        };
        assert_eq!(twa_step(Region::Close, &m, 0.1).position, 0.7);
    }

    #[test]
    fn bwa_examples() {
        let t = RegionThresholds::default();
        let (latch, m) = bwa_step(20.0, &t, GraspLatch::Relaxed, &motor(0.0, 0.25), 0.1).unwrap();
        assert_eq!(latch, GraspLatch::Grasping);
        assert!(m.position > 0.0);

        let (latch, m2) = bwa_step(0.0, &t, GraspLatch::Grasping, &m, 0.1).unwrap();
        assert_eq!(latch, GraspLatch::Grasping);
        assert!(m2.position > m.position);

        let (latch, m3) = bwa_step(-20.0, &t, GraspLatch::Grasping, &m2, 0.1).unwrap();
        assert_eq!(latch, GraspLatch::Relaxed);
        assert!(m3.position < m2.position);
    }

    #[test]
    fn pwa_setpoints() {
        assert_eq!(pwa_setpoint(20.0, 0.0, 40.0, 1.0), 0.5);
        assert_eq!(pwa_setpoint(-10.0, 0.0, 40.0, 1.0), 0.0);
        assert_eq!(pwa_setpoint(40.0, 0.0, 40.0, 1.0), 1.0);
        assert_eq!(pwa_setpoint(20.0, 0.0, 40.0, 0.8), 0.4);
    }

    #[test]
    fn pwa_slews_without_overshoot() {
        let m = pwa_step(20.0, 0.0, 40.0, &motor(0.49, 0.25), 0.1);
        assert_eq!(m.position, 0.5);
        let m = pwa_step(0.0, 0.0, 40.0, &motor(0.5, 0.25), 0.01);
        assert_abs_diff_eq!(m.position, 0.4975, epsilon = 1e-12);
    }

    #[test]
    fn controller_dispatch() {
        let t = RegionThresholds::default();
        let state = ControllerState::new(motor(0.5, 0.25));

        let cfg = ControllerConfig::new(ControlMode::Passive, t, 0.01).unwrap();
        let next = controller_step(&cfg, &WristSample::new(0.0, 30.0), &state).unwrap();
        assert_eq!(next.motor.position, 0.0);
        assert_eq!(next.region, Region::Close);

        let cfg = ControllerConfig::new(ControlMode::Twa, t, 0.01).unwrap();
        let next = controller_step(&cfg, &WristSample::new(0.0, 20.0), &state).unwrap();
        assert!(next.motor.position > 0.5);

        let cfg = ControllerConfig::new(ControlMode::pwa_default(), t, 0.01).unwrap();
        let next = controller_step(&cfg, &WristSample::new(0.0, 0.0), &state).unwrap();
        assert!(next.motor.position < 0.5);
    }

    #[test]
    fn invalid_pwa_map_rejected() {
        let mode = ControlMode::Pwa {
            map_min: 10.0,
            map_max: 10.0,
        };
        assert!(ControllerConfig::new(mode, RegionThresholds::default(), 0.01).is_err());
    }

    #[test]
    fn mode_names_round_trip() {
        for name in ControlMode::ALL_NAMES {
            let m = ControlMode::from_name(name, DEFAULT_PWA_MAP).unwrap();
            assert_eq!(m.name(), name);
        }
        assert!(ControlMode::from_name("emg", DEFAULT_PWA_MAP).is_err());
    }
}
