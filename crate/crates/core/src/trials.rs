//! Experiment protocols: maximum grasp force, force-target modulation and a
//! grasp-and-release functional battery, plus the metrics they report.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::control::{ControlMode, RegionThresholds};
use crate::error::{Error, Result};
use crate::parallel::{map_indexed, Execution};
use crate::participant::{
    grasp_release_policy, max_force_policy, modulation_policy, CyclePhase, CyclePlan, Intent,
    PolicyState,
};
use crate::plant::SENSOR_RESOLUTION;
use crate::sim::{Rig, Simulator, TickLogRow};

pub const TRIAL_TIMEOUT: f64 = 30.0;
pub const TARGET_BAND: f64 = 1.0;
pub const HOLD_DURATION: f64 = 3.0;
pub const TARGET_PERCENTS: [u32; 3] = [20, 50, 80];
pub const PLATEAU_RATE: f64 = 0.05;
pub const PLATEAU_WINDOW: f64 = 2.0;
/// A grasp counts as released once the reading drops below one sensor quantum.
pub const RELEASE_FORCE: f64 = SENSOR_RESOLUTION;
/// Force headroom the participant aims for above an object's requirement, N.
pub const GRASP_MARGIN: f64 = 0.5;

// band comparisons tolerate float error between quantized readings and targets
const BAND_EPS: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TrialKind {
    MaxForce,
    Modulate,
    Grt,
    Scripted,
    Replay,
}

impl TrialKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            TrialKind::MaxForce => "maxforce",
            TrialKind::Modulate => "modulate",
            TrialKind::Grt => "grt",
            TrialKind::Scripted => "scripted",
            TrialKind::Replay => "replay",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct TrialId {
    pub kind: TrialKind,
    pub mode: &'static str,
    pub label: String,
    pub seed: u64,
}

impl TrialId {
    pub fn file_stem(&self) -> String {
        format!("{}_{}_{}_seed{}", self.kind.as_str(), self.mode, self.label, self.seed)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum TrialOutcome {
    MaxForce { peak: f64 },
    Modulation(ModulationOutcome),
    Functional { object: String, successes: u32 },
    Completed,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrialRecord {
    pub id: TrialId,
    pub rows: Vec<TickLogRow>,
    pub outcome: TrialOutcome,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MaxForceResult {
    pub peaks: Vec<f64>,
    pub average_max: f64,
    pub highest_max: f64,
}

impl MaxForceResult {
    pub fn from_peaks(peaks: Vec<f64>) -> Result<Self> {
        if peaks.is_empty() {
            return Err(Error::invalid("max-force result needs at least one trial"));
        }
        let highest_max = peaks.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let average_max = peaks.iter().sum::<f64>() / peaks.len() as f64;
        Ok(Self {
            peaks,
            average_max,
            highest_max,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MaxForceRun {
    pub result: MaxForceResult,
    pub records: Vec<TrialRecord>,
}

fn max_force_trial(rig: &Rig, mode: ControlMode, index: usize) -> Result<TrialRecord> {
    let mut sim = Simulator::new(rig, mode)?;
    let model = &rig.participant;
    let window = rig.ticks_for(PLATEAU_WINDOW) as usize;
    let last_tick = rig.ticks_for(TRIAL_TIMEOUT);
    let mut history: VecDeque<(f64, f64)> = VecDeque::with_capacity(window + 1);
    let mut rows = Vec::new();
    let mut peak: f64 = 0.0;
    for k in 0..=last_tick {
        let t = rig.time_of(k);
        let out = sim.step(max_force_policy(model, &mode, t))?;
        rows.push(TickLogRow::from_step(&out, false, Some(Intent::Increase)));
        let measured = out.plant.measured_force;
        peak = peak.max(measured);
        history.push_back((measured, out.motor_position));
        if history.len() > window + 1 {
            history.pop_front();
        }
        if history.len() == window + 1 && plateaued(&history) {
            break;
        }
    }
    Ok(TrialRecord {
        id: TrialId {
            kind: TrialKind::MaxForce,
            mode: mode.name(),
            label: format!("trial{}", index + 1),
            seed: model.rng_seed,
        },
        rows,
        outcome: TrialOutcome::MaxForce { peak },
    })
}

/// Force changed less than `PLATEAU_RATE` over the window and the motor stopped.
fn plateaued(history: &VecDeque<(f64, f64)>) -> bool {
    let (mut fmin, mut fmax) = (f64::INFINITY, f64::NEG_INFINITY);
    let first_motor = history[0].1;
    for &(f, m) in history {
        if m != first_motor {
            return false;
        }
        fmin = fmin.min(f);
        fmax = fmax.max(f);
    }
    fmax - fmin < PLATEAU_RATE * PLATEAU_WINDOW
}

pub fn run_max_force(rig: &Rig, mode: ControlMode, trials: usize, exec: Execution) -> Result<MaxForceRun> {
    rig.plant.ensure_calibrated()?;
    if trials == 0 {
        return Err(Error::config("trials", "must be at least 1"));
    }
    let records = map_indexed(exec, trials, |i| max_force_trial(rig, mode, i))
        .into_iter()
        .collect::<Result<Vec<_>>>()?;
    let peaks = records
        .iter()
        .map(|r| match r.outcome {
            TrialOutcome::MaxForce { peak } => peak,
            _ => unreachable!("max-force trial with foreign outcome"),
        })
        .collect();
    Ok(MaxForceRun {
        result: MaxForceResult::from_peaks(peaks)?,
        records,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TargetSpec {
    pub percent: u32,
    /// Full-precision target, N. The band is checked against this.
    pub absolute: f64,
    /// Target as shown to the participant, rounded half-up to 0.1 N.
    pub display: f64,
    pub band: f64,
    pub hold: f64,
    pub timeout: f64,
}

impl TargetSpec {
    pub fn new(percent: u32, highest_max: f64) -> Self {
        let absolute = percent as f64 / 100.0 * highest_max;
        Self {
            percent,
            absolute,
            display: round_half_up_tenth(absolute),
            band: TARGET_BAND,
            hold: HOLD_DURATION,
            timeout: TRIAL_TIMEOUT,
        }
    }

    pub fn in_band(&self, measured: f64) -> bool {
        (measured - self.absolute).abs() <= self.band + BAND_EPS
    }
}

/// Half-up rounding to one decimal. The scaled value is first snapped to
/// 1e-6 so that e.g. 5.25 (stored as 5.2499…) still rounds up.
pub fn round_half_up_tenth(x: f64) -> f64 {
    let scaled = (x * 10.0 * 1e6).round() / 1e6;
    (scaled + 0.5).floor() / 10.0
}

pub fn compute_targets(highest_max: f64) -> Result<[TargetSpec; 3]> {
    if !(highest_max > 0.0) || !highest_max.is_finite() {
        return Err(Error::invalid(format!("highest max force {highest_max} must be positive")));
    }
    Ok(TARGET_PERCENTS.map(|p| TargetSpec::new(p, highest_max)))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModulationOutcome {
    pub success: bool,
    /// Band-entry time of the hold that completed, s.
    pub modulation_time: Option<f64>,
    /// Tick at which the trial ended.
    pub end_tick: u64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HoldStatus {
    pub in_band: bool,
    /// Seconds spent continuously in band, 0 when out of band.
    pub progress: f64,
    pub complete: bool,
}

/// Streaming detector for a contiguous in-band hold.
#[derive(Debug, Clone)]
pub struct HoldTracker {
    target: TargetSpec,
    tick: f64,
    hold_ticks: u64,
    entry: Option<u64>,
    completed_entry: Option<u64>,
}

impl HoldTracker {
    pub fn new(target: TargetSpec, tick: f64) -> Self {
        Self {
            target,
            tick,
            hold_ticks: (target.hold / tick - 1e-9).ceil() as u64,
            entry: None,
            completed_entry: None,
        }
    }

    pub fn target(&self) -> &TargetSpec {
        &self.target
    }

    pub fn update(&mut self, tick: u64, measured: f64) -> HoldStatus {
        if !self.target.in_band(measured) {
            self.entry = None;
            return HoldStatus {
                in_band: false,
                progress: 0.0,
                complete: self.completed_entry.is_some(),
            };
        }
        let entry = *self.entry.get_or_insert(tick);
        let held = tick - entry;
        if held >= self.hold_ticks && self.completed_entry.is_none() {
            self.completed_entry = Some(entry);
        }
        HoldStatus {
            in_band: true,
            progress: held as f64 * self.tick,
            complete: self.completed_entry.is_some(),
        }
    }

    /// Entry time of the first completed hold.
    pub fn modulation_time(&self) -> Option<f64> {
        self.completed_entry.map(|e| e as f64 * self.tick)
    }
}

/// Evaluates a finished trace of `(t, measured)` samples at a fixed tick.
pub fn evaluate_modulation(trace: &[(f64, f64)], target: &TargetSpec, tick: f64) -> ModulationOutcome {
    let mut tracker = HoldTracker::new(*target, tick);
    let last_tick = (target.timeout / tick - 1e-9).ceil() as u64;
    let mut end_tick = 0;
    for (k, &(_, measured)) in trace.iter().enumerate() {
        let k = k as u64;
        if k > last_tick {
            break;
        }
        end_tick = k;
        if tracker.update(k, measured).complete {
            break;
        }
    }
    let modulation_time = tracker.modulation_time();
    ModulationOutcome {
        success: modulation_time.is_some(),
        modulation_time,
        end_tick,
    }
}

pub fn run_modulation_trial(
    rig: &Rig,
    mode: ControlMode,
    target: &TargetSpec,
    seed: u64,
) -> Result<TrialRecord> {
    rig.plant.ensure_calibrated()?;
    let model = rig.participant.with_seed(seed);
    let mut sim = Simulator::new(rig, mode)?;
    let mut policy = PolicyState::new(&model, rig.tick);
    let mut tracker = HoldTracker::new(*target, rig.tick);
    let last_tick = rig.ticks_for(target.timeout);
    let mut rows = Vec::with_capacity(last_tick as usize + 1);
    let mut last_measured = 0.0;
    let mut end_tick = 0;
    for k in 0..=last_tick {
        let seen = policy.delayed_force(last_measured);
        let angle = modulation_policy(&model, &mut policy, seen, target.absolute, target.band, &mode, rig.tick);
        let out = sim.step(angle)?;
        let measured = out.plant.measured_force;
        policy.push_measurement(measured);
        last_measured = measured;
        let status = tracker.update(k, measured);
        rows.push(TickLogRow::from_step(&out, status.in_band, Some(policy.intent)));
        end_tick = k;
        if status.complete {
            break;
        }
    }
    let modulation_time = tracker.modulation_time();
    Ok(TrialRecord {
        id: TrialId {
            kind: TrialKind::Modulate,
            mode: mode.name(),
            label: format!("{}pct", target.percent),
            seed,
        },
        rows,
        outcome: TrialOutcome::Modulation(ModulationOutcome {
            success: modulation_time.is_some(),
            modulation_time,
            end_tick,
        }),
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct TargetResult {
    pub target: TargetSpec,
    pub outcomes: Vec<ModulationOutcome>,
}

impl TargetResult {
    pub fn successes(&self) -> usize {
        self.outcomes.iter().filter(|o| o.success).count()
    }

    /// Mean modulation time over successful trials only.
    pub fn average_time(&self) -> Option<f64> {
        let times: Vec<f64> = self.outcomes.iter().filter_map(|o| o.modulation_time).collect();
        if times.is_empty() {
            None
        } else {
            Some(times.iter().sum::<f64>() / times.len() as f64)
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModulationBattery {
    pub mode: ControlMode,
    pub per_target: Vec<TargetResult>,
    pub records: Vec<TrialRecord>,
}

impl ModulationBattery {
    pub fn total_successes(&self) -> usize {
        self.per_target.iter().map(|t| t.successes()).sum()
    }
}

/// Seeds `base_seed .. base_seed + repeats` are reused across targets.
pub fn run_modulation_battery(
    rig: &Rig,
    mode: ControlMode,
    targets: &[TargetSpec],
    repeats: usize,
    base_seed: u64,
    exec: Execution,
) -> Result<ModulationBattery> {
    rig.plant.ensure_calibrated()?;
    let n = targets.len() * repeats;
    let records = map_indexed(exec, n, |i| {
        let target = &targets[i / repeats];
        run_modulation_trial(rig, mode, target, base_seed + (i % repeats) as u64)
    })
    .into_iter()
    .collect::<Result<Vec<_>>>()?;
    let per_target = targets
        .iter()
        .enumerate()
        .map(|(ti, target)| TargetResult {
            target: *target,
            outcomes: records[ti * repeats..(ti + 1) * repeats]
                .iter()
                .map(|r| match &r.outcome {
                    TrialOutcome::Modulation(o) => *o,
                    _ => unreachable!("modulation trial with foreign outcome"),
                })
                .collect(),
        })
        .collect();
    Ok(ModulationBattery {
        mode,
        per_target,
        records,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FunctionalObject {
    pub name: String,
    /// Grasp force needed to lift, N.
    pub required_force: f64,
    /// Motor excursion needed to wrap the object.
    #[serde(default)]
    pub required_aperture: f64,
    #[serde(default)]
    pub weight_g: f64,
}

impl FunctionalObject {
    pub fn validate(&self) -> Result<()> {
        if !(self.required_force > 0.0) {
            return Err(Error::config(
                format!("objects.{}.required_force", self.name),
                "must be positive",
            ));
        }
        if !(0.0..=1.0).contains(&self.required_aperture) {
            return Err(Error::config(
                format!("objects.{}.required_aperture", self.name),
                "must be in [0, 1]",
            ));
        }
        Ok(())
    }
}

/// Six objects ordered by weight; the last two need more force than an
/// unassisted maximum of 10.5 N.
pub fn default_functional_battery() -> Vec<FunctionalObject> {
    let obj = |name: &str, required_force, required_aperture, weight_g| FunctionalObject {
        name: name.to_string(),
        required_force,
        required_aperture,
        weight_g,
    };
    vec![
        obj("foam-block", 0.8, 0.0, 10.0),
        obj("pen", 1.0, 0.0, 15.0),
        obj("peg", 1.4, 0.0, 30.0),
        obj("paperback", 2.0, 0.0, 120.0),
        obj("fork", 11.5, 0.5, 300.0),
        obj("vhs-tape", 13.0, 0.5, 400.0),
    ]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObjectScore {
    pub name: String,
    pub successes: u32,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GrtScore {
    pub per_object: Vec<ObjectScore>,
    pub total: u32,
    pub records: Vec<TrialRecord>,
}

/// Mode the participant actually runs for `object`: an assisting device is
/// left disengaged when tenodesis alone, within the unassisted comfort range,
/// can lift the object.
pub fn engaged_mode(rig: &Rig, mode: ControlMode, object: &FunctionalObject) -> ControlMode {
    if !mode.is_assisted() {
        return mode;
    }
    let reach = rig.participant.comfort_extension(&ControlMode::Passive);
    let unassisted = rig
        .plant
        .params
        .tenodesis
        .angle_for_force(object.required_force + GRASP_MARGIN)
        .is_some_and(|a| a <= reach);
    if unassisted && object.required_aperture <= 0.0 {
        ControlMode::Passive
    } else {
        mode
    }
}

fn functional_trial(rig: &Rig, mode: ControlMode, object: &FunctionalObject, seed: u64) -> Result<TrialRecord> {
    let model = rig.participant.with_seed(seed);
    let run_mode = engaged_mode(rig, mode, object);
    let mut sim = Simulator::new(rig, run_mode)?;
    let mut policy = PolicyState::new(&model, rig.tick);
    let mut phase = CyclePhase::Grasp;
    let unassisted = rig
        .plant
        .params
        .tenodesis
        .angle_for_force(object.required_force + GRASP_MARGIN);
    let plan = CyclePlan::for_object(&model, &run_mode, unassisted);
    let mut held = false;
    let mut successes = 0;
    let mut rows = Vec::new();
    let mut last_measured = 0.0;
    for _ in 0..=rig.ticks_for(TRIAL_TIMEOUT) {
        let seen = policy.delayed_force(last_measured);
        let angle = grasp_release_policy(
            &model,
            &mut policy,
            &mut phase,
            &plan,
            seen,
            object.required_force,
            RELEASE_FORCE,
            rig.tick,
        );
        let out = sim.step(angle)?;
        let measured = out.plant.measured_force;
        policy.push_measurement(measured);
        last_measured = measured;
        if !held && measured >= object.required_force && out.motor_position >= object.required_aperture {
            held = true;
        } else if held && measured < RELEASE_FORCE {
            held = false;
            successes += 1;
        }
        rows.push(TickLogRow::from_step(&out, held, Some(policy.intent)));
    }
    Ok(TrialRecord {
        id: TrialId {
            kind: TrialKind::Grt,
            mode: mode.name(),
            label: object.name.clone(),
            seed,
        },
        rows,
        outcome: TrialOutcome::Functional {
            object: object.name.clone(),
            successes,
        },
    })
}

pub fn run_functional_battery(
    rig: &Rig,
    mode: ControlMode,
    objects: &[FunctionalObject],
    seed: u64,
    exec: Execution,
) -> Result<GrtScore> {
    rig.plant.ensure_calibrated()?;
    for o in objects {
        o.validate()?;
    }
    let records = map_indexed(exec, objects.len(), |i| functional_trial(rig, mode, &objects[i], seed))
        .into_iter()
        .collect::<Result<Vec<_>>>()?;
    let per_object: Vec<ObjectScore> = records
        .iter()
        .map(|r| match &r.outcome {
            TrialOutcome::Functional { object, successes } => ObjectScore {
                name: object.clone(),
                successes: *successes,
            },
            _ => unreachable!("functional trial with foreign outcome"),
        })
        .collect();
    let total = per_object.iter().map(|s| s.successes).sum();
    Ok(GrtScore {
        per_object,
        total,
        records,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EffortMetrics {
    pub mean_abs_angle: f64,
    /// Fraction of hold samples with the wrist beyond the close threshold.
    pub extension_fraction: f64,
    pub samples: usize,
}

/// Wrist effort over the rows marked in band.
pub fn wrist_effort_metrics(rows: &[TickLogRow], thresholds: &RegionThresholds) -> Result<EffortMetrics> {
    let hold: Vec<&TickLogRow> = rows.iter().filter(|r| r.in_band).collect();
    if hold.is_empty() {
        return Err(Error::NoHoldPhase);
    }
    let n = hold.len();
    let mean_abs_angle = hold.iter().map(|r| r.wrist_angle.abs()).sum::<f64>() / n as f64;
    let beyond = hold.iter().filter(|r| r.wrist_angle > thresholds.close).count();
    Ok(EffortMetrics {
        mean_abs_angle,
        extension_fraction: beyond as f64 / n as f64,
        samples: n,
    })
}

/// Rows of the hold that made a modulation trial succeed.
pub fn successful_hold(record: &TrialRecord, tick: f64) -> Option<&[TickLogRow]> {
    match &record.outcome {
        TrialOutcome::Modulation(ModulationOutcome {
            modulation_time: Some(entry),
            end_tick,
            ..
        }) => {
            let start = (entry / tick).round() as usize;
            record.rows.get(start..=*end_tick as usize)
        }
        _ => None,
    }
}
