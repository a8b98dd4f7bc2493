//! Wrist flexion/extension from a forearm/hand orientation pair.
//!
//! The device carries one IMU on a wrist bracelet and one on the back of the
//! hand. The wrist angle is the twist of the relative rotation
//! `forearm⁻¹ ∘ hand` about a calibrated flexion axis (swing–twist
//! decomposition), minus a neutral offset. Extension is positive.

use std::ops::Mul;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Allowed deviation of a quaternion or axis norm from 1.
pub const UNIT_TOLERANCE: f64 = 1e-6;

/// Default anatomical guard on reported wrist angles, degrees.
pub const DEFAULT_ANATOMICAL_LIMIT: f64 = 120.0;

/// Default smoothing factor at 100 Hz.
pub const DEFAULT_SMOOTHING_ALPHA: f64 = 0.3;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Quaternion {
    pub w: f64,
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl Quaternion {
    pub const IDENTITY: Quaternion = Quaternion {
        w: 1.0,
        x: 0.0,
        y: 0.0,
        z: 0.0,
    };

    pub const fn new(w: f64, x: f64, y: f64, z: f64) -> Self {
        Self { w, x, y, z }
    }

    /// Rotation of `angle_rad` about `axis`. The axis is normalized here.
    pub fn from_axis_angle(axis: [f64; 3], angle_rad: f64) -> Self {
        let n = norm3(axis);
        let (s, c) = (0.5 * angle_rad).sin_cos();
        Self::new(c, s * axis[0] / n, s * axis[1] / n, s * axis[2] / n)
    }

    pub fn norm(&self) -> f64 {
        (self.w * self.w + self.x * self.x + self.y * self.y + self.z * self.z).sqrt()
    }

    pub fn conjugate(&self) -> Self {
        Self::new(self.w, -self.x, -self.y, -self.z)
    }

    pub fn normalized(&self) -> Self {
        let n = self.norm();
        Self::new(self.w / n, self.x / n, self.y / n, self.z / n)
    }

    pub fn vector(&self) -> [f64; 3] {
        [self.x, self.y, self.z]
    }

    pub fn is_unit(&self) -> bool {
        (self.norm() - 1.0).abs() <= UNIT_TOLERANCE
    }

    /// Rotate a vector by this (unit) quaternion.
    pub fn rotate(&self, v: [f64; 3]) -> [f64; 3] {
        let p = Quaternion::new(0.0, v[0], v[1], v[2]);
        (*self * p * self.conjugate()).vector()
    }
}

impl Mul for Quaternion {
    type Output = Quaternion;

    fn mul(self, r: Quaternion) -> Quaternion {
        Quaternion::new(
            self.w * r.w - self.x * r.x - self.y * r.y - self.z * r.z,
            self.w * r.x + self.x * r.w + self.y * r.z - self.z * r.y,
            self.w * r.y - self.x * r.z + self.y * r.w + self.z * r.x,
            self.w * r.z + self.x * r.y - self.y * r.x + self.z * r.w,
        )
    }
}

pub(crate) fn norm3(v: [f64; 3]) -> f64 {
    (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt()
}

pub(crate) fn dot3(a: [f64; 3], b: [f64; 3]) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OrientationSample {
    pub timestamp: f64,
    pub orientation: Quaternion,
}

impl OrientationSample {
    pub fn new(timestamp: f64, orientation: Quaternion) -> Self {
        Self {
            timestamp,
            orientation,
        }
    }
}

/// A wrist angle reading in degrees; extension positive, 0 = calibrated neutral.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WristSample {
    pub timestamp: f64,
    pub angle: f64,
}

impl WristSample {
    pub fn new(timestamp: f64, angle: f64) -> Self {
        Self { timestamp, angle }
    }

    /// Builds a sample after checking the angle against the anatomical guard.
    pub fn checked(timestamp: f64, angle: f64, limit: f64) -> Result<Self> {
        if !angle.is_finite() {
            return Err(Error::invalid(format!("wrist angle {angle} is not finite")));
        }
        if angle.abs() > limit {
            return Err(Error::invalid(format!(
                "wrist angle {angle}° exceeds anatomical limit ±{limit}°"
            )));
        }
        Ok(Self { timestamp, angle })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FlexionAxisCalibration {
    /// Unit flexion axis in the forearm frame; positive rotation = extension.
    pub axis: [f64; 3],
    /// Raw angle, degrees, that reads as 0°.
    pub neutral_offset: f64,
    /// Largest accepted timestamp difference between the two IMU samples.
    #[serde(default = "default_sync_tolerance")]
    pub sync_tolerance: f64,
    #[serde(default = "default_anatomical_limit")]
    pub anatomical_limit: f64,
}

fn default_sync_tolerance() -> f64 {
    0.005
}

fn default_anatomical_limit() -> f64 {
    DEFAULT_ANATOMICAL_LIMIT
}

impl Default for FlexionAxisCalibration {
    fn default() -> Self {
        Self {
            axis: [0.0, 1.0, 0.0],
            neutral_offset: 0.0,
            sync_tolerance: default_sync_tolerance(),
            anatomical_limit: DEFAULT_ANATOMICAL_LIMIT,
        }
    }
}

impl FlexionAxisCalibration {
    pub fn new(axis: [f64; 3]) -> Result<Self> {
        let calib = Self {
            axis,
            ..Self::default()
        };
        calib.validate()?;
        Ok(calib)
    }

    pub fn validate(&self) -> Result<()> {
        if (norm3(self.axis) - 1.0).abs() > UNIT_TOLERANCE {
            return Err(Error::invalid(format!(
                "flexion axis {:?} is not unit length",
                self.axis
            )));
        }
        if !self.neutral_offset.is_finite() {
            return Err(Error::invalid("neutral offset is not finite"));
        }
        if !(self.sync_tolerance >= 0.0) {
            return Err(Error::invalid("sync tolerance must be non-negative"));
        }
        if !(self.anatomical_limit > 0.0) {
            return Err(Error::invalid("anatomical limit must be positive"));
        }
        Ok(())
    }

    /// A rotation of `angle_deg` about the flexion axis.
    pub fn rotation(&self, angle_deg: f64) -> Quaternion {
        Quaternion::from_axis_angle(self.axis, angle_deg.to_radians())
    }
}

/// Twist angle (radians, wrapped to (-π, π]) of `q` about the unit `axis`.
///
/// Returns 0 at the singular configuration where the swing is a half turn and
/// the twist is undefined.
pub fn twist_angle(q: Quaternion, axis: [f64; 3]) -> f64 {
    let projected = dot3(q.vector(), axis);
    if projected == 0.0 && q.w == 0.0 {
        return 0.0;
    }
    wrap_pi(2.0 * projected.atan2(q.w))
}

fn wrap_pi(a: f64) -> f64 {
    use std::f64::consts::{PI, TAU};
    let mut a = a % TAU;
    if a > PI {
        a -= TAU;
    } else if a <= -PI {
        a += TAU;
    }
    a
}

pub fn relative_flexion_angle(
    forearm: &OrientationSample,
    hand: &OrientationSample,
    calib: &FlexionAxisCalibration,
) -> Result<WristSample> {
    calib.validate()?;
    for (name, s) in [("forearm", forearm), ("hand", hand)] {
        if !s.orientation.is_unit() {
            return Err(Error::invalid(format!(
                "{name} quaternion norm {} is not unit",
                s.orientation.norm()
            )));
        }
    }
    if (forearm.timestamp - hand.timestamp).abs() > calib.sync_tolerance {
        return Err(Error::StreamDesync {
            forearm: forearm.timestamp,
            hand: hand.timestamp,
        });
    }
    let relative = forearm.orientation.conjugate() * hand.orientation;
    let raw = twist_angle(relative, calib.axis).to_degrees();
    WristSample::checked(
        forearm.timestamp,
        raw - calib.neutral_offset,
        calib.anatomical_limit,
    )
}

/// Shifts the neutral offset so the mean of `samples` (read under `calib`) becomes 0°.
pub fn calibrate_neutral(
    samples: &[WristSample],
    calib: &FlexionAxisCalibration,
) -> Result<FlexionAxisCalibration> {
    if samples.is_empty() {
        return Err(Error::invalid("neutral calibration window is empty"));
    }
    let mean = samples.iter().map(|s| s.angle).sum::<f64>() / samples.len() as f64;
    if !mean.is_finite() {
        return Err(Error::invalid("neutral calibration window is not finite"));
    }
    Ok(FlexionAxisCalibration {
        neutral_offset: calib.neutral_offset + mean,
        ..*calib
    })
}

pub fn smooth_angle(previous: &WristSample, raw: &WristSample, alpha: f64) -> Result<WristSample> {
    if !(alpha > 0.0 && alpha <= 1.0) {
        return Err(Error::invalid(format!("smoothing alpha {alpha} not in (0, 1]")));
    }
    if alpha == 1.0 {
        return Ok(*raw);
    }
    Ok(WristSample::new(
        raw.timestamp,
        alpha * raw.angle + (1.0 - alpha) * previous.angle,
    ))
}

/// Stateful pipeline: orientation pair → calibrated, smoothed wrist angle.
#[derive(Debug, Clone)]
pub struct WristAngleEstimator {
    calib: FlexionAxisCalibration,
    alpha: f64,
    last: Option<WristSample>,
}

impl WristAngleEstimator {
    pub fn new(calib: FlexionAxisCalibration, alpha: f64) -> Result<Self> {
        calib.validate()?;
        if !(alpha > 0.0 && alpha <= 1.0) {
            return Err(Error::invalid(format!("smoothing alpha {alpha} not in (0, 1]")));
        }
        Ok(Self {
            calib,
            alpha,
            last: None,
        })
    }

    pub fn calibration(&self) -> &FlexionAxisCalibration {
        &self.calib
    }

    pub fn update(
        &mut self,
        forearm: &OrientationSample,
        hand: &OrientationSample,
    ) -> Result<WristSample> {
        let raw = relative_flexion_angle(forearm, hand, &self.calib)?;
        self.push(raw)
    }

    /// Feeds an already-extracted angle through the smoothing stage.
    pub fn push(&mut self, raw: WristSample) -> Result<WristSample> {
        if let Some(last) = &self.last {
            if raw.timestamp <= last.timestamp {
                return Err(Error::invalid(format!(
                    "timestamp {} does not advance past {}",
                    raw.timestamp, last.timestamp
                )));
            }
        }
        let out = match &self.last {
            Some(prev) => smooth_angle(prev, &raw, self.alpha)?,
            None => raw,
        };
        self.last = Some(out);
        Ok(out)
    }
}
