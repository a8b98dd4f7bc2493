//! Tick-driven bridge state machine. It owns the simulation, applies
//! commands between ticks and produces frames; it never touches the clock
//! or the network, so a session can be replayed exactly.

use orthosis_core::control::{ControlMode, MotorState, RegionThresholds};
use orthosis_core::kinematics::{WristSample, DEFAULT_ANATOMICAL_LIMIT};
use orthosis_core::plant::plant_step;
use orthosis_core::sim::{Rig, Simulator, StepOutput, TickLogRow};
use orthosis_core::trials::{
    HoldTracker, ModulationOutcome, TargetSpec, TrialId, TrialKind, TrialOutcome, TrialRecord, TARGET_PERCENTS,
    TRIAL_TIMEOUT,
};
use orthosis_core::Error;

use crate::codec::{
    Command, ErrorFrame, LiveTrialKind, ServerMessage, StateFrame, TargetFrame, TrialPhase, TrialResultFrame,
};

pub const DEFAULT_FRAME_DIVISOR: u64 = 3;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
#[error("{message}")]
pub struct CommandError {
    pub message: String,
    pub field: Option<String>,
}

impl CommandError {
    fn new(field: &str, message: impl Into<String>) -> Self {
        Self {
            message: message.into(),
            field: Some(field.to_string()),
        }
    }

    pub fn to_frame(&self) -> ServerMessage {
        ServerMessage::Error(ErrorFrame {
            message: self.message.clone(),
            field: self.field.clone(),
        })
    }
}

impl From<Error> for CommandError {
    fn from(e: Error) -> Self {
        match e {
            Error::Config { field, reason } => Self {
                message: format!("{field}: {reason}"),
                field: Some(field),
            },
            other => Self {
                message: other.to_string(),
                field: None,
            },
        }
    }
}

#[derive(Debug, Clone)]
struct LiveTrial {
    kind: LiveTrialKind,
    target: Option<TargetSpec>,
    tracker: Option<HoldTracker>,
    local_tick: u64,
    last_tick: u64,
    peak: f64,
    rows: Vec<TickLogRow>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TickOutput {
    pub tick: u64,
    pub frame: Option<StateFrame>,
    /// Trial results produced on this tick.
    pub events: Vec<ServerMessage>,
}

#[derive(Debug, Clone)]
pub struct BridgeEngine {
    rig: Rig,
    pwa_map: (f64, f64),
    mode: ControlMode,
    sim: Simulator,
    commanded: f64,
    tick: u64,
    frame_divisor: u64,
    phase: TrialPhase,
    trial: Option<LiveTrial>,
    finished: Vec<TrialRecord>,
}

impl BridgeEngine {
    pub fn new(rig: Rig, mode: ControlMode, pwa_map: (f64, f64), frame_divisor: u64) -> Result<Self, Error> {
        rig.validate()?;
        if frame_divisor == 0 {
            return Err(Error::Config {
                field: "frame_divisor".into(),
                reason: "must be at least 1".into(),
            });
        }
        Ok(Self {
            sim: Simulator::new(&rig, mode)?,
            rig,
            pwa_map,
            mode,
            commanded: 0.0,
            tick: 0,
            frame_divisor,
            phase: TrialPhase::Idle,
            trial: None,
            finished: Vec::new(),
        })
    }

    pub fn tick_period(&self) -> f64 {
        self.rig.tick
    }

    /// Index of the next tick to run.
    pub fn next_tick(&self) -> u64 {
        self.tick
    }

    pub fn mode(&self) -> ControlMode {
        self.mode
    }

    pub fn commanded_angle(&self) -> f64 {
        self.commanded
    }

    pub fn phase(&self) -> TrialPhase {
        self.phase
    }

    /// Completed live trials, oldest first, in the same form as headless runs.
    pub fn take_finished(&mut self) -> Vec<TrialRecord> {
        std::mem::take(&mut self.finished)
    }

    /// Applies a command before the next tick. Rejected commands leave the
    /// state untouched.
    pub fn apply(&mut self, cmd: &Command) -> Result<(), CommandError> {
        match cmd {
            Command::SetWristAngle { angle } => {
                WristSample::checked(0.0, *angle, DEFAULT_ANATOMICAL_LIMIT)
                    .map_err(|e| CommandError::new("angle", e.to_string()))?;
                self.commanded = *angle;
                Ok(())
            }
            Command::SetMode { mode } => {
                let mode = ControlMode::from_name(mode, self.pwa_map)?;
                mode.validate()?;
                self.abort();
                self.mode = mode;
                self.sim.controller_mut().set_mode(mode)?;
                Ok(())
            }
            Command::SetThresholds { open, close } => {
                let t = RegionThresholds::new(*open, *close)?;
                self.sim.controller_mut().set_thresholds(t)?;
                self.rig.thresholds = t;
                Ok(())
            }
            Command::AbortTrial => {
                self.abort();
                Ok(())
            }
            Command::StartTrial {
                kind,
                percent,
                max_force,
            } => self.start_trial(*kind, *percent, *max_force),
        }
    }

    fn start_trial(
        &mut self,
        kind: LiveTrialKind,
        percent: Option<u32>,
        max_force: Option<f64>,
    ) -> Result<(), CommandError> {
        let target = match kind {
            LiveTrialKind::Maxforce => None,
            LiveTrialKind::Modulate => {
                let percent = percent.ok_or_else(|| CommandError::new("percent", "modulation trial needs a percent"))?;
                if !TARGET_PERCENTS.contains(&percent) {
                    return Err(CommandError::new("percent", format!("{percent} is not one of 20, 50, 80")));
                }
                let reference = match max_force {
                    Some(f) if f > 0.0 && f.is_finite() => f,
                    Some(f) => return Err(CommandError::new("max_force", format!("{f} must be positive"))),
                    None => self.nominal_max_force(),
                };
                Some(TargetSpec::new(percent, reference))
            }
        };
        self.abort();
        self.sim = Simulator::new(&self.rig, self.mode)?;
        self.trial = Some(LiveTrial {
            kind,
            target,
            tracker: target.map(|t| HoldTracker::new(t, self.rig.tick)),
            local_tick: 0,
            last_tick: self.rig.ticks_for(target.map_or(TRIAL_TIMEOUT, |t| t.timeout)),
            peak: 0.0,
            rows: Vec::new(),
        });
        self.phase = TrialPhase::Running;
        Ok(())
    }

    /// Force the plant yields at the participant's comfortable extension with
    /// the motor at its limit (at rest without a device).
    pub fn nominal_max_force(&self) -> f64 {
        let angle = self.rig.participant.comfort_extension(&self.mode);
        let position = if self.mode.is_assisted() {
            self.rig.motor.upper_limit
        } else {
            MotorState::LOWER_LIMIT
        };
        let motor = MotorState {
            position,
            ..self.rig.motor
        };
        let wrist = WristSample { timestamp: 0.0, angle };
        plant_step(&motor, &wrist, &self.rig.plant.params).map_or(0.0, |p| p.true_force)
    }

    fn abort(&mut self) {
        if self.trial.take().is_some() {
            self.phase = TrialPhase::Aborted;
        }
    }

    /// Runs one tick with the currently commanded angle.
    pub fn tick(&mut self) -> TickOutput {
        let out = self
            .sim
            .step(self.commanded)
            .expect("commanded angle is validated on receipt");
        let tick = self.tick;
        self.tick += 1;
        let mut events = Vec::new();
        let mut target_frame = None;
        if let Some(trial) = self.trial.as_mut() {
            let measured = out.plant.measured_force;
            trial.peak = trial.peak.max(measured);
            let status = trial.tracker.as_mut().map(|tr| tr.update(trial.local_tick, measured));
            trial
                .rows
                .push(TickLogRow::from_step(&out, status.is_some_and(|s| s.in_band), None));
            if let (Some(t), Some(s)) = (trial.target, status) {
                target_frame = Some(TargetFrame {
                    absolute: t.absolute,
                    display: t.display,
                    band: t.band,
                    in_band: s.in_band,
                    hold_progress: s.progress,
                });
            }
            let complete = status.is_some_and(|s| s.complete);
            let timed_out = trial.local_tick >= trial.last_tick;
            trial.local_tick += 1;
            if complete || timed_out {
                let trial = self.trial.take().expect("trial present");
                events.push(self.finish(trial));
            }
        }
        let frame = tick.is_multiple_of(self.frame_divisor).then(|| self.frame(tick, &out, target_frame));
        TickOutput { tick, frame, events }
    }

    fn finish(&mut self, trial: LiveTrial) -> ServerMessage {
        let modulation_time = trial.tracker.as_ref().and_then(HoldTracker::modulation_time);
        let success = match trial.kind {
            LiveTrialKind::Modulate => modulation_time.is_some(),
            LiveTrialKind::Maxforce => true,
        };
        self.phase = if success {
            TrialPhase::Succeeded
        } else {
            TrialPhase::Failed
        };
        let (kind, label, outcome) = match trial.target {
            Some(t) => (
                TrialKind::Modulate,
                format!("{}pct", t.percent),
                TrialOutcome::Modulation(ModulationOutcome {
                    success,
                    modulation_time,
                    end_tick: trial.local_tick - 1,
                }),
            ),
            None => (
                TrialKind::MaxForce,
                "live".to_string(),
                TrialOutcome::MaxForce { peak: trial.peak },
            ),
        };
        self.finished.push(TrialRecord {
            id: TrialId {
                kind,
                mode: self.mode.name(),
                label,
                seed: 0,
            },
            rows: trial.rows,
            outcome,
        });
        ServerMessage::TrialResult(TrialResultFrame {
            kind: kind.as_str().to_string(),
            success,
            modulation_time,
            peak_force: trial.peak,
        })
    }

    fn frame(&self, tick: u64, out: &StepOutput, target: Option<TargetFrame>) -> StateFrame {
        StateFrame {
            t: tick as f64 * self.rig.tick,
            tick,
            wrist_angle: out.wrist_angle,
            region: out.region,
            thresholds: self.rig.thresholds,
            motor_position: out.motor_position,
            measured_force: out.plant.measured_force,
            target,
            phase: self.phase,
            mode: self.mode.name().to_string(),
        }
    }
}
