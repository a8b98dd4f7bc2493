use proptest::prelude::*;

use orthosis_bridge::codec::{
    decode_command, decode_message, encode_command, encode_message, Command, ErrorFrame, LiveTrialKind,
    ServerMessage, StateFrame, TargetFrame, TrialPhase, TrialResultFrame,
};
use orthosis_core::control::{Region, RegionThresholds};

fn finite() -> impl Strategy<Value = f64> {
    prop_oneof![-1e6..1e6f64, any::<i16>().prop_map(f64::from), Just(0.0), Just(-0.0)]
}

fn region() -> impl Strategy<Value = Region> {
    prop_oneof![Just(Region::Open), Just(Region::Neutral), Just(Region::Close)]
}

fn phase() -> impl Strategy<Value = TrialPhase> {
    prop_oneof![
        Just(TrialPhase::Idle),
        Just(TrialPhase::Running),
        Just(TrialPhase::Succeeded),
        Just(TrialPhase::Failed),
        Just(TrialPhase::Aborted),
    ]
}

prop_compose! {
    fn target()(absolute in finite(), display in finite(), band in finite(), in_band in any::<bool>(), hold_progress in finite()) -> TargetFrame {
        TargetFrame { absolute, display, band, in_band, hold_progress }
    }
}

prop_compose! {
    fn state()(
        t in finite(), tick in any::<u64>(), wrist_angle in finite(), region in region(),
        open in finite(), close in finite(), motor_position in finite(), measured_force in finite(),
        target in proptest::option::of(target()), phase in phase(), mode in "[a-z]{0,8}",
    ) -> StateFrame {
        StateFrame {
            t, tick, wrist_angle, region,
            thresholds: RegionThresholds { open, close },
            motor_position, measured_force, target, phase, mode,
        }
    }
}

fn message() -> impl Strategy<Value = ServerMessage> {
    prop_oneof![
        state().prop_map(ServerMessage::State),
        (any::<String>(), proptest::option::of("[a-z_]{1,10}"))
            .prop_map(|(message, field)| ServerMessage::Error(ErrorFrame { message, field })),
        ("[a-z]{1,8}", any::<bool>(), proptest::option::of(finite()), finite()).prop_map(
            |(kind, success, modulation_time, peak_force)| ServerMessage::TrialResult(TrialResultFrame {
                kind,
                success,
                modulation_time,
                peak_force
            })
        ),
    ]
}

fn command() -> impl Strategy<Value = Command> {
    prop_oneof![
        finite().prop_map(|angle| Command::SetWristAngle { angle }),
        any::<String>().prop_map(|mode| Command::SetMode { mode }),
        (
            prop_oneof![Just(LiveTrialKind::Modulate), Just(LiveTrialKind::Maxforce)],
            proptest::option::of(any::<u32>()),
            proptest::option::of(finite())
        )
            .prop_map(|(kind, percent, max_force)| Command::StartTrial {
                kind,
                percent,
                max_force
            }),
        Just(Command::AbortTrial),
        (finite(), finite()).prop_map(|(open, close)| Command::SetThresholds { open, close }),
    ]
}

proptest! {
    #[test]
    fn messages_round_trip(msg in message()) {
        let text = encode_message(&msg);
        prop_assert!(!text.contains('\n'));
        let back = decode_message(&text).unwrap();
        prop_assert_eq!(&back, &msg);
        prop_assert_eq!(encode_message(&back), text);
    }

    #[test]
    fn commands_round_trip(cmd in command()) {
        let text = encode_command(&cmd);
        prop_assert_eq!(decode_command(&text).unwrap(), cmd);
    }

    #[test]
    fn extra_fields_never_break_decoding(msg in message(), key in "x_[a-z]{1,6}", value in any::<i32>()) {
        let mut v: serde_json::Value = serde_json::from_str(&encode_message(&msg)).unwrap();
        v.as_object_mut().unwrap().insert(key, value.into());
        prop_assert_eq!(decode_message(&v.to_string()).unwrap(), msg);
    }

    #[test]
    fn dropping_a_required_field_names_it(angle in finite()) {
        let mut v: serde_json::Value = serde_json::from_str(&encode_command(&Command::SetWristAngle { angle })).unwrap();
        v.as_object_mut().unwrap().remove("angle");
        let err = decode_command(&v.to_string()).unwrap_err();
        prop_assert_eq!(err.field.as_deref(), Some("angle"));
    }

    #[test]
    fn arbitrary_text_never_panics(s in any::<String>()) {
        let _ = decode_command(&s);
        let _ = decode_message(&s);
    }
}
