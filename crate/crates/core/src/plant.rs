//! Motor excursion and wrist angle to measured grasp force.
//!
//! The chain is: exotendon transmission (slack then linear flexion), a
//! one-sided linear contact spring against the instrumented object, a
//! piecewise-linear passive tenodesis force driven by wrist extension, and a
//! load cell that quantizes the summed force.

use serde::{Deserialize, Serialize};

use crate::control::MotorState;
use crate::error::{Error, Result};
use crate::kinematics::WristSample;

/// Load-cell resolution of the instrumented object, newtons.
pub const SENSOR_RESOLUTION: f64 = 0.28;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TransmissionParams {
    /// Dead travel before the fingers move, excursion units.
    pub slack: f64,
    /// Finger flexion per excursion unit past the slack, degrees.
    pub flexion_gain: f64,
}

impl Default for TransmissionParams {
    fn default() -> Self {
        Self {
            slack: 0.1,
            flexion_gain: 100.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ContactModel {
    /// Excursion at which the fingertips meet the object.
    pub contact_excursion: f64,
    /// N per excursion unit past contact. Includes the object's series springs.
    pub device_stiffness: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TenodesisCurve {
    pub onset_angle: f64,
    pub saturation_angle: f64,
    pub max_force: f64,
}

impl TenodesisCurve {
    /// Position of `angle` along the ramp, in [0, 1].
    pub fn ramp_fraction(&self, angle: f64) -> f64 {
        if angle <= self.onset_angle {
            0.0
        } else if angle >= self.saturation_angle {
            1.0
        } else {
            (angle - self.onset_angle) / (self.saturation_angle - self.onset_angle)
        }
    }

    /// Smallest wrist angle producing `force`, or `None` above `max_force`.
    pub fn angle_for_force(&self, force: f64) -> Option<f64> {
        if force <= 0.0 {
            Some(self.onset_angle)
        } else if force > self.max_force {
            None
        } else {
            Some(self.onset_angle + force / self.max_force * (self.saturation_angle - self.onset_angle))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InstrumentedObject {
    /// Series compression spring stiffness, N/mm.
    pub series_stiffness: f64,
    pub sensor_resolution: f64,
    pub max_range: f64,
}

impl Default for InstrumentedObject {
    fn default() -> Self {
        Self {
            series_stiffness: 2.0,
            sensor_resolution: SENSOR_RESOLUTION,
            max_range: 100.0,
        }
    }
}

impl InstrumentedObject {
    /// Spring compression at `force`, mm.
    pub fn compression_mm(&self, force: f64) -> f64 {
        force / self.series_stiffness
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlantParams {
    pub transmission: TransmissionParams,
    pub contact: ContactModel,
    pub tenodesis: TenodesisCurve,
    pub object: InstrumentedObject,
}

impl PlantParams {
    /// Uncalibrated defaults: geometry set, force gains still to be solved.
    pub fn uncalibrated() -> Self {
        Self {
            transmission: TransmissionParams::default(),
            contact: ContactModel {
                contact_excursion: 0.5,
                device_stiffness: 1.0,
            },
            tenodesis: TenodesisCurve {
                onset_angle: 20.0,
                saturation_angle: 40.0,
                max_force: 1.0,
            },
            object: InstrumentedObject::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let t = &self.transmission;
        if !(t.slack >= 0.0 && t.slack < 1.0) {
            return Err(Error::config("plant.transmission.slack", "must be in [0, 1)"));
        }
        if !(t.flexion_gain > 0.0) {
            return Err(Error::config("plant.transmission.flexion_gain", "must be positive"));
        }
        let c = &self.contact;
        if !(c.contact_excursion >= t.slack && c.contact_excursion <= 1.0) {
            return Err(Error::config(
                "plant.contact.contact_excursion",
                "must be in [slack, 1]",
            ));
        }
        if !(c.device_stiffness > 0.0) {
            return Err(Error::config("plant.contact.device_stiffness", "must be positive"));
        }
        let k = &self.tenodesis;
        if !(k.onset_angle < k.saturation_angle) {
            return Err(Error::config(
                "plant.tenodesis.onset_angle",
                "must be below saturation_angle",
            ));
        }
        if !(k.max_force >= 0.0) {
            return Err(Error::config("plant.tenodesis.max_force", "must be non-negative"));
        }
        let o = &self.object;
        if !(o.series_stiffness > 0.0) {
            return Err(Error::config("plant.object.series_stiffness", "must be positive"));
        }
        if !(o.sensor_resolution > 0.0) {
            return Err(Error::config("plant.object.sensor_resolution", "must be positive"));
        }
        if !(o.max_range > 0.0) {
            return Err(Error::config("plant.object.max_range", "must be positive"));
        }
        Ok(())
    }
}

/// Plant parameters plus whether their force gains were calibrated or supplied.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PlantModel {
    pub params: PlantParams,
    calibrated: bool,
}

impl PlantModel {
    /// Parameters whose force gains are known (measured or hand-set).
    pub fn from_params(params: PlantParams) -> Result<Self> {
        params.validate()?;
        Ok(Self {
            params,
            calibrated: true,
        })
    }

    pub fn uncalibrated(params: PlantParams) -> Self {
        Self {
            params,
            calibrated: false,
        }
    }

    pub fn is_calibrated(&self) -> bool {
        self.calibrated
    }

    pub fn ensure_calibrated(&self) -> Result<&PlantParams> {
        if self.calibrated {
            Ok(&self.params)
        } else {
            Err(Error::UncalibratedPlant)
        }
    }

    pub fn step(&self, motor: &MotorState, wrist: &WristSample) -> Result<PlantState> {
        plant_step(motor, wrist, &self.params)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ForceReading {
    pub force: f64,
    pub saturated: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PlantState {
    pub finger_flexion: f64,
    pub in_contact: bool,
    pub device_force: f64,
    pub tenodesis_force: f64,
    pub true_force: f64,
    pub measured_force: f64,
    pub saturated: bool,
}

impl PlantState {
    pub const REST: PlantState = PlantState {
        finger_flexion: 0.0,
        in_contact: false,
        device_force: 0.0,
        tenodesis_force: 0.0,
        true_force: 0.0,
        measured_force: 0.0,
        saturated: false,
    };
}

fn check_excursion(excursion: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&excursion) {
        return Err(Error::invalid(format!("excursion {excursion} outside [0, 1]")));
    }
    Ok(())
}

/// Free-space finger flexion, degrees.
pub fn tendon_to_flexion(excursion: f64, params: &TransmissionParams) -> Result<f64> {
    check_excursion(excursion)?;
    Ok(params.flexion_gain * (excursion - params.slack).max(0.0))
}

pub fn device_force(excursion: f64, contact: &ContactModel) -> Result<f64> {
    check_excursion(excursion)?;
    Ok(contact.device_stiffness * (excursion - contact.contact_excursion).max(0.0))
}

pub fn tenodesis_force(angle: f64, curve: &TenodesisCurve) -> f64 {
    curve.max_force * curve.ramp_fraction(angle)
}

/// Rounds to the nearest multiple of the sensor resolution, ties to even.
pub fn quantize(force: f64, resolution: f64) -> f64 {
    (force / resolution).round_ties_even() * resolution
}

pub fn measure_force(true_force: f64, object: &InstrumentedObject) -> Result<ForceReading> {
    if !(true_force >= 0.0) || !true_force.is_finite() {
        return Err(Error::invalid(format!("force {true_force} must be finite and >= 0")));
    }
    let res = object.sensor_resolution;
    if true_force > object.max_range {
        return Ok(ForceReading {
            force: (object.max_range / res).floor() * res,
            saturated: true,
        });
    }
    Ok(ForceReading {
        force: quantize(true_force, res),
        saturated: false,
    })
}

pub fn plant_step(motor: &MotorState, wrist: &WristSample, params: &PlantParams) -> Result<PlantState> {
    let excursion = motor.position;
    check_excursion(excursion)?;
    if !wrist.angle.is_finite() {
        return Err(Error::invalid("wrist angle is not finite"));
    }
    let contact = &params.contact;
    // fingers stop at the object; tendon travel past contact loads the spring
    let finger_flexion =
        tendon_to_flexion(excursion.min(contact.contact_excursion), &params.transmission)?;
    let device = device_force(excursion, contact)?;
    let tenodesis = tenodesis_force(wrist.angle, &params.tenodesis);
    let true_force = device + tenodesis;
    let reading = measure_force(true_force, &params.object)?;
    Ok(PlantState {
        finger_flexion,
        in_contact: excursion >= contact.contact_excursion,
        device_force: device,
        tenodesis_force: tenodesis,
        true_force,
        measured_force: reading.force,
        saturated: reading.saturated,
    })
}

/// Operating points the calibration must reproduce.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CalibrationAnchors {
    /// Highest unassisted grasp force, N.
    pub no_device_force: f64,
    /// Wrist extension at which it is reached, degrees.
    pub no_device_angle: f64,
    /// Highest assisted grasp force, N.
    pub with_device_force: f64,
    pub with_device_angle: f64,
    /// Motor excursion at the assisted maximum.
    #[serde(default = "full_excursion")]
    pub with_device_excursion: f64,
}

fn full_excursion() -> f64 {
    1.0
}

impl Default for CalibrationAnchors {
    fn default() -> Self {
        Self {
            no_device_force: 10.5,
            no_device_angle: 40.0,
            with_device_force: 15.3,
            with_device_angle: 25.0,
            with_device_excursion: 1.0,
        }
    }
}

/// Solves tenodesis `max_force` and `device_stiffness` so that the plant
/// reproduces both anchors. Geometry comes from `base`.
pub fn calibrate_plant(anchors: &CalibrationAnchors, base: &PlantParams) -> Result<PlantModel> {
    if !(anchors.no_device_force > 0.0 && anchors.with_device_force > 0.0) {
        return Err(Error::Calibration("anchor forces must be positive".into()));
    }
    let mut params = *base;
    let ramp = params.tenodesis.ramp_fraction(anchors.no_device_angle);
    if ramp <= 0.0 {
        return Err(Error::Calibration(format!(
            "no-device anchor angle {}° is at or below tenodesis onset {}°",
            anchors.no_device_angle, params.tenodesis.onset_angle
        )));
    }
    params.tenodesis.max_force = anchors.no_device_force / ramp;

    let tenodesis_at_assist = tenodesis_force(anchors.with_device_angle, &params.tenodesis);
    let span = anchors.with_device_excursion - params.contact.contact_excursion;
    if span <= 0.0 {
        return Err(Error::Calibration(
            "assisted anchor excursion does not reach contact".into(),
        ));
    }
    let stiffness = (anchors.with_device_force - tenodesis_at_assist) / span;
    if !(stiffness > 0.0) {
        return Err(Error::Calibration(format!(
            "assisted force {} N does not exceed tenodesis force {tenodesis_at_assist} N at {}°",
            anchors.with_device_force, anchors.with_device_angle
        )));
    }
    params.contact.device_stiffness = stiffness;
    params.validate()?;
    Ok(PlantModel {
        params,
        calibrated: true,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn motor_at(position: f64) -> MotorState {
        MotorState {
            position,
            speed: 0.1,
            upper_limit: 1.0,
        }
    }

    fn onset_five_curve() -> TenodesisCurve {
        TenodesisCurve {
            onset_angle: 5.0,
            saturation_angle: 40.0,
            max_force: 10.5,
        }
    }

    #[test]
    fn flexion_examples() {
        let p = TransmissionParams {
            slack: 0.1,
            flexion_gain: 100.0,
        };
        assert_eq!(tendon_to_flexion(0.05, &p).unwrap(), 0.0);
        assert_abs_diff_eq!(tendon_to_flexion(0.6, &p).unwrap(), 50.0, epsilon = 1e-9);
        assert_abs_diff_eq!(tendon_to_flexion(1.0, &p).unwrap(), 90.0, epsilon = 1e-9);
        assert!(tendon_to_flexion(1.01, &p).is_err());
        assert!(tendon_to_flexion(-0.01, &p).is_err());
    }

    #[test]
    fn device_force_examples() {
        let c = ContactModel {
            contact_excursion: 0.6,
            device_stiffness: 12.0,
        };
        assert_eq!(device_force(0.6, &c).unwrap(), 0.0);
        assert_abs_diff_eq!(device_force(1.0, &c).unwrap(), 4.8, epsilon = 1e-12);
    }

    #[test]
    fn tenodesis_examples() {
        let c = onset_five_curve();
        assert_eq!(tenodesis_force(5.0, &c), 0.0);
        assert_eq!(tenodesis_force(40.0, &c), 10.5);
        assert_abs_diff_eq!(tenodesis_force(22.5, &c), 5.25, epsilon = 1e-12);
        assert_eq!(tenodesis_force(60.0, &c), 10.5);
        assert_eq!(tenodesis_force(-30.0, &c), 0.0);
    }

    #[test]
    fn quantizer_examples() {
        let o = InstrumentedObject::default();
        assert_eq!(measure_force(0.0, &o).unwrap().force, 0.0);
        assert_abs_diff_eq!(measure_force(8.4, &o).unwrap().force, 8.4, epsilon = 1e-12);
        assert_abs_diff_eq!(measure_force(1.0, &o).unwrap().force, 1.12, epsilon = 1e-12);
        assert!(measure_force(-0.5, &o).is_err());
        let sat = measure_force(150.0, &o).unwrap();
        assert!(sat.saturated);
        assert!(sat.force <= o.max_range);
    }

    #[test]
    fn quantizer_ties_to_even() {
        // 0.42 = 1.5 quanta rounds to 2 quanta; 0.70 = 2.5 quanta rounds to 2
        let o = InstrumentedObject {
            sensor_resolution: 0.25,
            ..Default::default()
        };
        assert_eq!(measure_force(0.375, &o).unwrap().force, 0.5);
        assert_eq!(measure_force(0.625, &o).unwrap().force, 0.5);
    }

    #[test]
    fn rest_state_is_zero() {
        let model = calibrate_plant(&CalibrationAnchors::default(), &PlantParams::uncalibrated()).unwrap();
        let s = model.step(&motor_at(0.0), &WristSample::new(0.0, 0.0)).unwrap();
        assert_eq!(s.true_force, 0.0);
        assert_eq!(s.measured_force, 0.0);
        assert_eq!(s.device_force, 0.0);
        assert!(!s.in_contact);
    }

    #[test]
    fn calibration_with_onset_five() {
        let mut base = PlantParams::uncalibrated();
        base.tenodesis = onset_five_curve();
        base.contact.contact_excursion = 0.6;
        let model = calibrate_plant(&CalibrationAnchors::default(), &base).unwrap();
        let p = &model.params;
        assert_abs_diff_eq!(p.tenodesis.max_force, 10.5, epsilon = 1e-9);
        // 10.5 * 20/35
        assert_abs_diff_eq!(tenodesis_force(25.0, &p.tenodesis), 6.0, epsilon = 1e-9);
        assert_abs_diff_eq!(p.contact.device_stiffness, 9.3 / 0.4, epsilon = 1e-9);
    }

    #[test]
    fn calibration_round_trip_default() {
        let model = calibrate_plant(&CalibrationAnchors::default(), &PlantParams::uncalibrated()).unwrap();
        let no_dev = model.step(&motor_at(0.0), &WristSample::new(0.0, 40.0)).unwrap();
        assert_abs_diff_eq!(no_dev.true_force, 10.5, epsilon = 1e-6);
        assert!((no_dev.measured_force - 10.5).abs() <= 0.14);
        let dev = model.step(&motor_at(1.0), &WristSample::new(0.0, 25.0)).unwrap();
        assert_abs_diff_eq!(dev.true_force, 15.3, epsilon = 1e-6);
        assert!((dev.measured_force - 15.3).abs() <= 0.14);
    }

    #[test]
    fn infeasible_calibration() {
        let mut base = PlantParams::uncalibrated();
        base.tenodesis = onset_five_curve();
        let anchors = CalibrationAnchors {
            with_device_force: 5.0,
            ..Default::default()
        };
        assert!(matches!(
            calibrate_plant(&anchors, &base),
            Err(Error::Calibration(_))
        ));
        let anchors = CalibrationAnchors {
            no_device_angle: 3.0,
            ..Default::default()
        };
        assert!(calibrate_plant(&anchors, &base).is_err());
    }

    #[test]
    fn uncalibrated_model_is_flagged() {
        let m = PlantModel::uncalibrated(PlantParams::uncalibrated());
        assert!(matches!(m.ensure_calibrated(), Err(Error::UncalibratedPlant)));
    }

    #[test]
    fn fingers_stop_at_contact() {
        let model = calibrate_plant(&CalibrationAnchors::default(), &PlantParams::uncalibrated()).unwrap();
        let a = model.step(&motor_at(0.5), &WristSample::new(0.0, 0.0)).unwrap();
        let b = model.step(&motor_at(0.9), &WristSample::new(0.0, 0.0)).unwrap();
        assert_eq!(a.finger_flexion, b.finger_flexion);
        assert!(b.in_contact && a.in_contact);
        assert!(b.device_force > 0.0);
    }
}
