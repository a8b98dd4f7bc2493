//! The live engine against the headless trial harness.

use orthosis_bridge::codec::{Command, LiveTrialKind};
use orthosis_bridge::engine::BridgeEngine;
use orthosis_core::control::ControlMode;
use orthosis_core::session::SessionConfig;
use orthosis_core::trials::{run_modulation_trial, TargetSpec, TrialOutcome};

#[test]
fn live_trial_driven_by_headless_angles_reproduces_the_headless_log() {
    let cfg = SessionConfig::default();
    let rig = cfg.rig().unwrap();
    let target = TargetSpec::new(50, 15.3);
    let headless = run_modulation_trial(&rig, ControlMode::Twa, &target, 1).unwrap();

    let mut engine = BridgeEngine::new(rig, ControlMode::Twa, (0.0, 40.0), 3).unwrap();
    // Some idle time first; starting a trial resets the device.
    engine.apply(&Command::SetWristAngle { angle: 22.0 }).unwrap();
    for _ in 0..50 {
        engine.tick();
    }
    engine
        .apply(&Command::StartTrial {
            kind: LiveTrialKind::Modulate,
            percent: Some(50),
            max_force: Some(15.3),
        })
        .unwrap();
    for row in &headless.rows {
        engine.apply(&Command::SetWristAngle { angle: row.wrist_angle }).unwrap();
        engine.tick();
    }
    let live = engine.take_finished();
    assert_eq!(live.len(), 1, "trial should have finished on the same tick");
    let live = &live[0];
    assert_eq!(live.id.file_stem(), "modulate_twa_50pct_seed0");
    assert_eq!(live.rows.len(), headless.rows.len());
    for (a, b) in live.rows.iter().zip(&headless.rows) {
        assert_eq!((a.t, a.wrist_angle, a.region, a.motor_position), (b.t, b.wrist_angle, b.region, b.motor_position));
        assert_eq!((a.true_force, a.measured_force, a.in_band), (b.true_force, b.measured_force, b.in_band));
    }
    match (&live.outcome, &headless.outcome) {
        (TrialOutcome::Modulation(a), TrialOutcome::Modulation(b)) => assert_eq!(a, b),
        other => panic!("{other:?}"),
    }
}

#[test]
fn engine_ticks_are_contiguous_under_command_storms() {
    let cfg = SessionConfig::default();
    let mut engine = BridgeEngine::new(cfg.rig().unwrap(), ControlMode::Twa, (0.0, 40.0), 3).unwrap();
    for k in 0..2000u64 {
        for j in 0..(k % 7) {
            let _ = engine.apply(&Command::SetWristAngle { angle: (j as f64) * 50.0 - 100.0 });
            let _ = engine.apply(&Command::SetMode { mode: ["twa", "bwa", "pwa", "passive", "bogus"][j as usize % 5].into() });
        }
        assert_eq!(engine.tick().tick, k);
    }
}
