//! Wire messages. Every message is one JSON object with a `type` tag and a
//! schema version `v`; unknown fields are ignored on decode.

use serde::{Deserialize, Serialize};

use orthosis_core::control::{Region, RegionThresholds};

pub const PROTOCOL_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrialPhase {
    Idle,
    Running,
    Succeeded,
    Failed,
    Aborted,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TargetFrame {
    pub absolute: f64,
    pub display: f64,
    pub band: f64,
    pub in_band: bool,
    /// Seconds spent in the current in-band window.
    pub hold_progress: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StateFrame {
    pub t: f64,
    pub tick: u64,
    pub wrist_angle: f64,
    pub region: Region,
    pub thresholds: RegionThresholds,
    pub motor_position: f64,
    pub measured_force: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub target: Option<TargetFrame>,
    pub phase: TrialPhase,
    pub mode: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialResultFrame {
    pub kind: String,
    pub success: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub modulation_time: Option<f64>,
    pub peak_force: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorFrame {
    pub message: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub field: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ServerMessage {
    State(StateFrame),
    TrialResult(TrialResultFrame),
    Error(ErrorFrame),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LiveTrialKind {
    Modulate,
    Maxforce,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Command {
    SetWristAngle {
        angle: f64,
    },
    SetMode {
        mode: String,
    },
    StartTrial {
        kind: LiveTrialKind,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        percent: Option<u32>,
        /// Reference maximum for the target; the device's nominal maximum when absent.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        max_force: Option<f64>,
    },
    AbortTrial,
    SetThresholds {
        open: f64,
        close: f64,
    },
}

#[derive(Serialize, Deserialize)]
struct Envelope<T> {
    v: u32,
    #[serde(flatten)]
    body: T,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("{message}")]
pub struct DecodeError {
    pub message: String,
    /// Name of the missing or invalid field, when known.
    pub field: Option<String>,
}

impl DecodeError {
    pub fn to_frame(&self) -> ServerMessage {
        ServerMessage::Error(ErrorFrame {
            message: self.message.clone(),
            field: self.field.clone(),
        })
    }
}

fn encode<T: Serialize>(body: &T) -> String {
    serde_json::to_string(&Envelope {
        v: PROTOCOL_VERSION,
        body,
    })
    .expect("wire types always serialize")
}

fn decode<T: for<'de> Deserialize<'de>>(text: &str) -> Result<T, DecodeError> {
    let value: serde_json::Value = serde_json::from_str(text).map_err(|e| DecodeError {
        message: format!("invalid JSON: {e}"),
        field: None,
    })?;
    let obj = value.as_object().ok_or_else(|| DecodeError {
        message: "message must be a JSON object".into(),
        field: None,
    })?;
    match obj.get("v") {
        None => {
            return Err(DecodeError {
                message: "missing field `v`".into(),
                field: Some("v".into()),
            })
        }
        Some(v) if v.as_u64() != Some(PROTOCOL_VERSION as u64) => {
            return Err(DecodeError {
                message: format!("unsupported schema version {v}"),
                field: Some("v".into()),
            })
        }
        Some(_) => {}
    }
    if !obj.contains_key("type") {
        return Err(DecodeError {
            message: "missing field `type`".into(),
            field: Some("type".into()),
        });
    }
    serde_json::from_value::<Envelope<T>>(value)
        .map(|e| e.body)
        .map_err(|e| {
            let message = e.to_string();
            DecodeError {
                field: field_in(&message),
                message,
            }
        })
}

/// Pulls the field name out of serde's "missing field `x`" / "unknown variant `x`".
fn field_in(message: &str) -> Option<String> {
    let rest = message.strip_prefix("missing field `")?;
    rest.split('`').next().map(str::to_string)
}

pub fn encode_command(cmd: &Command) -> String {
    encode(cmd)
}

pub fn decode_command(text: &str) -> Result<Command, DecodeError> {
    decode(text)
}

pub fn encode_message(msg: &ServerMessage) -> String {
    encode(msg)
}

pub fn decode_message(text: &str) -> Result<ServerMessage, DecodeError> {
    decode(text)
}
