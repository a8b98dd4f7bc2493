//! Wrist-angle sources: scripted trajectories and a closed-loop virtual
//! participant that reacts to delayed visual force feedback.

use std::collections::VecDeque;
use std::fmt;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::control::ControlMode;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScriptedTrajectory {
    /// `(time s, angle deg)`, strictly increasing in time.
    pub waypoints: Vec<(f64, f64)>,
}

impl ScriptedTrajectory {
    pub fn new(waypoints: Vec<(f64, f64)>) -> Result<Self> {
        let traj = Self { waypoints };
        traj.validate()?;
        Ok(traj)
    }

    pub fn validate(&self) -> Result<()> {
        if self.waypoints.is_empty() {
            return Err(Error::invalid("trajectory has no waypoints"));
        }
        for w in self.waypoints.windows(2) {
            if !(w[1].0 > w[0].0) {
                return Err(Error::invalid(format!(
                    "waypoint times not strictly increasing at t={}",
                    w[1].0
                )));
            }
        }
        if let Some(&(t, a)) = self.waypoints.iter().find(|(t, a)| !t.is_finite() || !(a.abs() <= 120.0)) {
            return Err(Error::invalid(format!("waypoint ({t}, {a}) out of range")));
        }
        Ok(())
    }

    pub fn duration(&self) -> f64 {
        self.waypoints.last().map_or(0.0, |w| w.0)
    }
}

/// Linear interpolation, clamped to the first/last angle outside the span.
pub fn scripted_angle(traj: &ScriptedTrajectory, t: f64) -> Result<f64> {
    let pts = &traj.waypoints;
    let (first, last) = match (pts.first(), pts.last()) {
        (Some(f), Some(l)) => (f, l),
        _ => return Err(Error::invalid("trajectory has no waypoints")),
    };
    if t.is_nan() || t < 0.0 {
        return Err(Error::invalid(format!("time {t} must be >= 0")));
    }
    if t <= first.0 {
        return Ok(first.1);
    }
    if t >= last.0 {
        return Ok(last.1);
    }
    let i = pts.partition_point(|w| w.0 <= t);
    let (t0, a0) = pts[i - 1];
    let (t1, a1) = pts[i];
    Ok(a0 + (a1 - a0) * (t - t0) / (t1 - t0))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ParticipantModel {
    /// Visual feedback delay, s.
    pub reaction_delay: f64,
    /// Ballistic wrist rate, deg/s. Used for posture changes.
    pub max_wrist_rate: f64,
    /// Tracking rate when the wrist angle itself sets the force, deg/s.
    pub fine_wrist_rate: f64,
    pub angle_noise_sigma: f64,
    /// Largest extension the participant will use; `None` picks the mode default.
    pub comfort_max_extension: Option<f64>,
    pub comfort_max_flexion: f64,
    /// Extension held to drive an assisting device closed, deg.
    pub close_posture: f64,
    /// Flexion held to drive an assisting device open, deg (negative).
    pub open_posture: f64,
    pub rng_seed: u64,
}

impl Default for ParticipantModel {
    fn default() -> Self {
        Self {
            reaction_delay: 0.25,
            max_wrist_rate: 60.0,
            fine_wrist_rate: 8.0,
            angle_noise_sigma: 0.5,
            comfort_max_extension: None,
            comfort_max_flexion: 30.0,
            close_posture: 20.0,
            open_posture: -20.0,
            rng_seed: 0,
        }
    }
}

impl ParticipantModel {
    pub fn with_seed(self, rng_seed: u64) -> Self {
        Self { rng_seed, ..self }
    }

    pub fn validate(&self) -> Result<()> {
        let field = |f: &str| format!("participant.{f}");
        if !(self.reaction_delay >= 0.0) || !self.reaction_delay.is_finite() {
            return Err(Error::config(field("reaction_delay"), "must be >= 0"));
        }
        if !(self.max_wrist_rate > 0.0) {
            return Err(Error::config(field("max_wrist_rate"), "must be positive"));
        }
        if !(self.fine_wrist_rate > 0.0 && self.fine_wrist_rate <= self.max_wrist_rate) {
            return Err(Error::config(
                field("fine_wrist_rate"),
                "must be positive and at most max_wrist_rate",
            ));
        }
        if !(self.angle_noise_sigma >= 0.0) {
            return Err(Error::config(field("angle_noise_sigma"), "must be >= 0"));
        }
        if let Some(c) = self.comfort_max_extension {
            if !(c > 0.0 && c <= 120.0) {
                return Err(Error::config(field("comfort_max_extension"), "must be in (0, 120]"));
            }
        }
        if !(self.comfort_max_flexion > 0.0 && self.comfort_max_flexion <= 120.0) {
            return Err(Error::config(field("comfort_max_flexion"), "must be in (0, 120]"));
        }
        if !(self.close_posture > 0.0 && self.close_posture <= self.comfort_extension(&ControlMode::Twa)) {
            return Err(Error::config(
                field("close_posture"),
                "must be positive and within comfort_max_extension",
            ));
        }
        if !(self.open_posture < 0.0 && -self.open_posture <= self.comfort_max_flexion) {
            return Err(Error::config(
                field("open_posture"),
                "must be negative and within comfort_max_flexion",
            ));
        }
        Ok(())
    }

    /// Largest extension used under `mode`: 25° with an assisting device, 40°
    /// when the wrist angle alone sets the grasp.
    pub fn comfort_extension(&self, mode: &ControlMode) -> f64 {
        self.comfort_max_extension.unwrap_or(match mode {
            ControlMode::Twa | ControlMode::Bwa => 25.0,
            ControlMode::Pwa { .. } | ControlMode::Passive => 40.0,
        })
    }

    /// Ticks of feedback delay, rounded up.
    pub fn delay_ticks(&self, dt: f64) -> usize {
        ((self.reaction_delay / dt) - 1e-9).ceil().max(0.0) as usize
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Intent {
    Increase,
    Decrease,
    Settle,
}

impl Intent {
    pub fn as_str(&self) -> &'static str {
        match self {
            Intent::Increase => "increase",
            Intent::Decrease => "decrease",
            Intent::Settle => "settle",
        }
    }
}

impl fmt::Display for Intent {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Intent {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "increase" => Ok(Intent::Increase),
            "decrease" => Ok(Intent::Decrease),
            "settle" => Ok(Intent::Settle),
            other => Err(Error::invalid(format!("unknown intent `{other}`"))),
        }
    }
}

/// Per-trial participant state: delayed feedback ring, current intent,
/// noise-free intended angle, last produced angle and the noise stream.
#[derive(Debug, Clone)]
pub struct PolicyState {
    feedback: VecDeque<f64>,
    pub intent: Intent,
    intended: f64,
    angle: f64,
    rng: ChaCha8Rng,
}

impl PolicyState {
    pub fn new(model: &ParticipantModel, dt: f64) -> Self {
        let n = model.delay_ticks(dt);
        Self {
            feedback: std::iter::repeat_n(0.0, n).collect(),
            intent: Intent::Increase,
            intended: 0.0,
            angle: 0.0,
            rng: ChaCha8Rng::seed_from_u64(model.rng_seed),
        }
    }

    pub fn buffer_len(&self) -> usize {
        self.feedback.len()
    }

    pub fn angle(&self) -> f64 {
        self.angle
    }

    /// Oldest sample still in flight: what the participant sees now.
    pub fn delayed_force(&self, latest: f64) -> f64 {
        self.feedback.front().copied().unwrap_or(latest)
    }

    /// Records the newest measurement and returns the one that just became visible.
    pub fn push_measurement(&mut self, force: f64) -> f64 {
        if self.feedback.is_empty() {
            return force;
        }
        self.feedback.push_back(force);
        self.feedback.pop_front().unwrap_or(force)
    }

    fn noise(&mut self, sigma: f64) -> f64 {
        if sigma == 0.0 {
            return 0.0;
        }
        let z: f64 = StandardNormal.sample(&mut self.rng);
        sigma * z.clamp(-3.0, 3.0)
    }

    /// Moves the intended angle toward `goal` at `rate`, adds noise, and
    /// rate-limits the produced angle.
    fn advance(&mut self, goal: f64, rate: f64, sigma: f64, dt: f64) -> f64 {
        let step = rate * dt;
        self.intended += (goal - self.intended).clamp(-step, step);
        let candidate = self.intended + self.noise(sigma);
        self.angle += (candidate - self.angle).clamp(-step, step);
        self.angle
    }
}

/// Posture-driven modes close the device by holding an extension; in
/// angle-mapped modes the wrist angle itself is the force command.
fn posture_driven(mode: &ControlMode) -> bool {
    matches!(mode, ControlMode::Twa | ControlMode::Bwa)
}

/// One tick of the force-matching behavior: bang-bang on delayed force.
#[allow(clippy::too_many_arguments)]
pub fn modulation_policy(
    model: &ParticipantModel,
    state: &mut PolicyState,
    delayed_force: f64,
    target: f64,
    band: f64,
    mode: &ControlMode,
    dt: f64,
) -> f64 {
    let intent = if delayed_force < target - band {
        Intent::Increase
    } else if delayed_force > target + band {
        Intent::Decrease
    } else {
        Intent::Settle
    };
    state.intent = intent;
    let (goal, rate) = if posture_driven(mode) {
        let goal = match intent {
            Intent::Increase => model.close_posture,
            Intent::Decrease => model.open_posture,
            Intent::Settle if matches!(mode, ControlMode::Twa) => 0.0,
            Intent::Settle => state.intended,
        };
        (goal, model.max_wrist_rate)
    } else {
        let goal = match intent {
            Intent::Increase => model.comfort_extension(mode),
            Intent::Decrease => -model.comfort_max_flexion,
            Intent::Settle => state.intended,
        };
        (goal, model.fine_wrist_rate)
    };
    state.advance(goal, rate, model.angle_noise_sigma, dt)
}

/// Squeeze as hard as possible: ramp to the comfortable extension and hold.
/// Noise-free.
pub fn max_force_policy(model: &ParticipantModel, mode: &ControlMode, t: f64) -> f64 {
    (model.max_wrist_rate * t.max(0.0)).min(model.comfort_extension(mode))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CyclePhase {
    Grasp,
    Release,
}

/// Wrist postures the participant uses for one object's grasp–release cycles.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CyclePlan {
    pub grasp_posture: f64,
    pub release_posture: f64,
}

impl CyclePlan {
    /// Postures for one object. `unassisted_angle` is the wrist angle at which
    /// the participant's own tenodesis reaches the force they aim for, which
    /// they know from practice.
    pub fn for_object(model: &ParticipantModel, mode: &ControlMode, unassisted_angle: Option<f64>) -> Self {
        let comfort = model.comfort_extension(mode);
        if posture_driven(mode) {
            Self {
                grasp_posture: comfort,
                release_posture: model.open_posture,
            }
        } else {
            Self {
                grasp_posture: unassisted_angle.map_or(comfort, |a| a.clamp(0.0, comfort)),
                release_posture: 0.0,
            }
        }
    }
}

/// Repeated grasp–release behavior for the functional battery. Switches
/// phase on delayed force and moves at the ballistic rate.
#[allow(clippy::too_many_arguments)]
pub fn grasp_release_policy(
    model: &ParticipantModel,
    state: &mut PolicyState,
    phase: &mut CyclePhase,
    plan: &CyclePlan,
    delayed_force: f64,
    required_force: f64,
    release_force: f64,
    dt: f64,
) -> f64 {
    match *phase {
        CyclePhase::Grasp if delayed_force >= required_force => *phase = CyclePhase::Release,
        CyclePhase::Release if delayed_force < release_force => *phase = CyclePhase::Grasp,
        _ => {}
    }
    let (goal, intent) = match *phase {
        CyclePhase::Grasp => (plan.grasp_posture, Intent::Increase),
        CyclePhase::Release => (plan.release_posture, Intent::Decrease),
    };
    state.intent = intent;
    state.advance(goal, model.max_wrist_rate, model.angle_noise_sigma, dt)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    const DT: f64 = 0.01;

    #[test]
    fn scripted_examples() {
        let traj = ScriptedTrajectory::new(vec![(0.0, 0.0), (2.0, 40.0)]).unwrap();
        assert_abs_diff_eq!(scripted_angle(&traj, 1.0).unwrap(), 20.0, epsilon = 1e-12);
        assert_eq!(scripted_angle(&traj, 5.0).unwrap(), 40.0);
        let late = ScriptedTrajectory::new(vec![(1.0, 10.0), (2.0, 40.0)]).unwrap();
        assert_eq!(scripted_angle(&late, 0.5).unwrap(), 10.0);
        assert!(ScriptedTrajectory::new(vec![]).is_err());
        assert!(ScriptedTrajectory::new(vec![(1.0, 0.0), (1.0, 2.0)]).is_err());
        let empty = ScriptedTrajectory { waypoints: vec![] };
        assert!(scripted_angle(&empty, 0.0).is_err());
    }

    #[test]
    fn buffer_spans_delay() {
        let model = ParticipantModel::default();
        assert_eq!(PolicyState::new(&model, DT).buffer_len(), 25);
        let m = ParticipantModel {
            reaction_delay: 0.255,
            ..model
        };
        assert_eq!(PolicyState::new(&m, DT).buffer_len(), 26);
        let m = ParticipantModel {
            reaction_delay: 0.0,
            ..model
        };
        let mut s = PolicyState::new(&m, DT);
        assert_eq!(s.push_measurement(3.0), 3.0);
    }

    #[test]
    fn bang_bang_directions() {
        let model = ParticipantModel {
            angle_noise_sigma: 0.0,
            ..Default::default()
        };
        let mut s = PolicyState::new(&model, DT);
        let a = modulation_policy(&model, &mut s, 1.0, 5.3, 1.0, &ControlMode::Twa, DT);
        assert!(a > 0.0);
        assert_eq!(s.intent, Intent::Increase);

        let mut s = PolicyState::new(&model, DT);
        let a = modulation_policy(&model, &mut s, 7.0, 5.3, 1.0, &ControlMode::Twa, DT);
        assert!(a < 0.0);
        assert_eq!(s.intent, Intent::Decrease);
    }

    #[test]
    fn twa_settles_to_neutral() {
        let model = ParticipantModel {
            angle_noise_sigma: 0.0,
            ..Default::default()
        };
        let mut s = PolicyState::new(&model, DT);
        for _ in 0..100 {
            modulation_policy(&model, &mut s, 0.0, 5.3, 1.0, &ControlMode::Twa, DT);
        }
        let before = s.angle();
        assert_eq!(before, model.close_posture);
        let a = modulation_policy(&model, &mut s, 5.3, 5.3, 1.0, &ControlMode::Twa, DT);
        assert!(a < before);
        for _ in 0..100 {
            modulation_policy(&model, &mut s, 5.3, 5.3, 1.0, &ControlMode::Twa, DT);
        }
        assert_eq!(s.angle(), 0.0);
    }

    #[test]
    fn passive_holds_in_band() {
        let model = ParticipantModel {
            angle_noise_sigma: 0.0,
            ..Default::default()
        };
        let mut s = PolicyState::new(&model, DT);
        for _ in 0..100 {
            modulation_policy(&model, &mut s, 0.0, 5.3, 1.0, &ControlMode::Passive, DT);
        }
        let held = s.angle();
        for _ in 0..100 {
            modulation_policy(&model, &mut s, 5.0, 5.3, 1.0, &ControlMode::Passive, DT);
        }
        assert_eq!(s.angle(), held);
    }

    #[test]
    fn max_force_postures() {
        let model = ParticipantModel::default();
        assert_eq!(max_force_policy(&model, &ControlMode::Passive, 0.0), 0.0);
        assert_eq!(max_force_policy(&model, &ControlMode::Passive, 10.0), 40.0);
        assert_eq!(max_force_policy(&model, &ControlMode::Twa, 10.0), 25.0);
        assert_abs_diff_eq!(max_force_policy(&model, &ControlMode::Twa, 0.1), 6.0, epsilon = 1e-12);
    }

    #[test]
    fn invalid_models() {
        let bad = ParticipantModel {
            max_wrist_rate: 0.0,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
        let bad = ParticipantModel {
            angle_noise_sigma: -1.0,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
        assert!(ParticipantModel::default().validate().is_ok());
    }
}
