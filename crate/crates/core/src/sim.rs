//! Fixed-step closed loop shared by the trial harnesses, replay and the
//! real-time bridge: wrist angle → smoothing → controller → plant.

use serde::{Deserialize, Serialize};

use crate::control::{
    Controller, ControllerConfig, ControlMode, ControllerState, MotorState, Region, RegionThresholds,
};
use crate::error::{Error, Result};
use crate::kinematics::{smooth_angle, WristSample, DEFAULT_ANATOMICAL_LIMIT};
use crate::participant::{Intent, ParticipantModel};
use crate::plant::{PlantModel, PlantState};

pub const DEFAULT_TICK_RATE: f64 = 100.0;

/// Everything needed to run a trial except the control mode.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Rig {
    pub tick: f64,
    pub thresholds: RegionThresholds,
    /// Motor speed and limit; position is reset to 0 at the start of a trial.
    pub motor: MotorState,
    pub smoothing_alpha: f64,
    pub plant: PlantModel,
    pub participant: ParticipantModel,
}

impl Rig {
    pub fn validate(&self) -> Result<()> {
        if !(self.tick > 0.0) {
            return Err(Error::config("tick_rate", "must be positive"));
        }
        self.thresholds.validate()?;
        self.motor.validate()?;
        if !(self.smoothing_alpha > 0.0 && self.smoothing_alpha <= 1.0) {
            return Err(Error::config("smoothing_alpha", "must be in (0, 1]"));
        }
        self.plant.params.validate()?;
        self.participant.validate()
    }

    pub fn time_of(&self, tick: u64) -> f64 {
        tick as f64 * self.tick
    }

    /// Number of ticks covering `seconds`, tolerant of float error.
    pub fn ticks_for(&self, seconds: f64) -> u64 {
        (seconds / self.tick - 1e-9).ceil().max(0.0) as u64
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepOutput {
    pub tick: u64,
    pub t: f64,
    /// Angle as produced by the participant (the replayable input).
    pub wrist_angle: f64,
    /// Angle the controller saw after smoothing.
    pub filtered_angle: f64,
    pub region: Region,
    pub motor_position: f64,
    pub plant: PlantState,
}

#[derive(Debug, Clone)]
pub struct Simulator {
    tick: f64,
    alpha: f64,
    controller: Controller,
    plant: PlantModel,
    filtered: Option<WristSample>,
    next_tick: u64,
}

impl Simulator {
    pub fn new(rig: &Rig, mode: ControlMode) -> Result<Self> {
        let config = ControllerConfig::new(mode, rig.thresholds, rig.tick)?;
        let motor = MotorState {
            position: 0.0,
            ..rig.motor
        };
        Ok(Self {
            tick: rig.tick,
            alpha: rig.smoothing_alpha,
            controller: Controller::new(config, motor),
            plant: rig.plant,
            filtered: None,
            next_tick: 0,
        })
    }

    pub fn controller(&self) -> &Controller {
        &self.controller
    }

    pub fn controller_mut(&mut self) -> &mut Controller {
        &mut self.controller
    }

    pub fn state(&self) -> &ControllerState {
        self.controller.state()
    }

    pub fn next_tick(&self) -> u64 {
        self.next_tick
    }

    pub fn step(&mut self, wrist_angle: f64) -> Result<StepOutput> {
        let tick = self.next_tick;
        let t = tick as f64 * self.tick;
        let raw = WristSample::checked(t, wrist_angle, DEFAULT_ANATOMICAL_LIMIT)?;
        let filtered = match &self.filtered {
            Some(prev) => smooth_angle(prev, &raw, self.alpha)?,
            None => raw,
        };
        self.filtered = Some(filtered);
        let state = *self.controller.step(&filtered)?;
        let plant = self.plant.step(&state.motor, &raw)?;
        self.next_tick += 1;
        Ok(StepOutput {
            tick,
            t,
            wrist_angle,
            filtered_angle: filtered.angle,
            region: state.region,
            motor_position: state.motor.position,
            plant,
        })
    }
}

/// One row of a per-trial log.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TickLogRow {
    pub t: f64,
    pub wrist_angle: f64,
    pub region: Region,
    pub motor_position: f64,
    pub true_force: f64,
    pub measured_force: f64,
    pub in_band: bool,
    pub intent: Option<Intent>,
}

impl TickLogRow {
    pub fn from_step(out: &StepOutput, in_band: bool, intent: Option<Intent>) -> Self {
        Self {
            t: out.t,
            wrist_angle: out.wrist_angle,
            region: out.region,
            motor_position: out.motor_position,
            true_force: out.plant.true_force,
            measured_force: out.plant.measured_force,
            in_band,
            intent,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::plant::{calibrate_plant, CalibrationAnchors, PlantParams};

    fn rig() -> Rig {
        Rig {
            tick: 0.01,
            thresholds: RegionThresholds::default(),
            motor: MotorState::new(0.1, 1.0).unwrap(),
            smoothing_alpha: 0.3,
            plant: calibrate_plant(&CalibrationAnchors::default(), &PlantParams::uncalibrated()).unwrap(),
            participant: ParticipantModel::default(),
        }
    }

    #[test]
    fn ticks_are_exact_multiples() {
        let mut sim = Simulator::new(&rig(), ControlMode::Twa).unwrap();
        for k in 0..1000u64 {
            let out = sim.step(0.0).unwrap();
            assert_eq!(out.tick, k);
            assert_eq!(out.t, k as f64 * 0.01);
        }
    }

    #[test]
    fn close_region_raises_motor() {
        let mut sim = Simulator::new(&rig(), ControlMode::Twa).unwrap();
        let mut last = 0.0;
        for _ in 0..100 {
            last = sim.step(20.0).unwrap().motor_position;
        }
        assert!(last > 0.0);
    }

    #[test]
    fn rejects_out_of_guard_angle() {
        let mut sim = Simulator::new(&rig(), ControlMode::Twa).unwrap();
        assert!(sim.step(999.0).is_err());
    }

    #[test]
    fn ticks_for_is_float_tolerant() {
        let r = rig();
        assert_eq!(r.ticks_for(3.0), 300);
        assert_eq!(r.ticks_for(0.25), 25);
        assert_eq!(r.ticks_for(30.0), 3000);
    }
}
