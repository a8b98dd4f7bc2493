use orthosis_core::kinematics::{
    calibrate_neutral, relative_flexion_angle, smooth_angle, twist_angle, FlexionAxisCalibration, OrientationSample,
    Quaternion, WristSample,
};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

fn unit(v: [f64; 3]) -> [f64; 3] {
    let n = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
    [v[0] / n, v[1] / n, v[2] / n]
}

fn cross(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

/// Some unit vector orthogonal to `axis`, steered by `hint`.
fn orthogonal(axis: [f64; 3], hint: [f64; 3]) -> Option<[f64; 3]> {
    let c = cross(axis, hint);
    let n = (c[0] * c[0] + c[1] * c[1] + c[2] * c[2]).sqrt();
    (n > 1e-3).then(|| [c[0] / n, c[1] / n, c[2] / n])
}

fn rotation_angle(q: Quaternion) -> f64 {
    let v = q.vector();
    2.0 * (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt().atan2(q.w.abs())
}

/// Brute-force swing–twist: the twist about `axis` that leaves the smallest
/// residual (swing) rotation, found by a grid scan and golden-section refinement.
fn brute_force_twist(q: Quaternion, axis: [f64; 3]) -> f64 {
    use std::f64::consts::PI;
    let residual = |theta: f64| rotation_angle(q * Quaternion::from_axis_angle(axis, theta).conjugate());
    let n = 20_000;
    let mut best = (f64::INFINITY, 0.0);
    for i in 0..=n {
        let theta = -PI + 2.0 * PI * i as f64 / n as f64;
        let r = residual(theta);
        if r < best.0 {
            best = (r, theta);
        }
    }
    let step = 2.0 * PI / n as f64;
    let (mut a, mut b) = (best.1 - step, best.1 + step);
    let g = (5f64.sqrt() - 1.0) / 2.0;
    for _ in 0..100 {
        let c = b - g * (b - a);
        let d = a + g * (b - a);
        if residual(c) < residual(d) {
            b = d;
        } else {
            a = c;
        }
    }
    0.5 * (a + b)
}

fn sample(t: f64, q: Quaternion) -> OrientationSample {
    OrientationSample::new(t, q)
}

fn axis_strategy() -> impl Strategy<Value = [f64; 3]> {
    prop::array::uniform3(-1.0f64..1.0)
        .prop_filter("non-degenerate", |v| v.iter().map(|x| x * x).sum::<f64>() > 0.01)
        .prop_map(unit)
}

#[test]
fn orthogonal_rotation_has_no_twist_by_brute_force() {
    let calib = FlexionAxisCalibration::default();
    let hand = Quaternion::from_axis_angle([1.0, 0.0, 0.0], 30f64.to_radians());
    let out = relative_flexion_angle(&sample(0.0, Quaternion::IDENTITY), &sample(0.0, hand), &calib).unwrap();
    assert!(out.angle.abs() < 1e-6);
    let oracle = brute_force_twist(hand, calib.axis);
    assert!(oracle.to_degrees().abs() < 1e-6, "oracle twist {}", oracle.to_degrees());
}

#[test]
fn noisy_neutral_window_recovers_mean() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let noise = Normal::new(10.0, 1.0).unwrap();
    let window: Vec<WristSample> = (0..100)
        .map(|k| WristSample::new(k as f64 * 0.01, noise.sample(&mut rng)))
        .collect();
    let calib = calibrate_neutral(&window, &FlexionAxisCalibration::default()).unwrap();
    assert!((calib.neutral_offset - 10.0).abs() < 0.5, "{}", calib.neutral_offset);
}

#[test]
fn step_response_matches_geometric_series() {
    let alpha: f64 = 0.5;
    let mut y = WristSample::new(0.0, 0.0);
    let mut ticks_within = None;
    for k in 1..=10 {
        y = smooth_angle(&y, &WristSample::new(k as f64 * 0.01, 20.0), alpha).unwrap();
        let closed_form = 20.0 * (1.0 - (1.0 - alpha).powi(k));
        assert!((y.angle - closed_form).abs() < 1e-12);
        if ticks_within.is_none() && (20.0 - y.angle).abs() <= 1.0 {
            ticks_within = Some(k);
        }
    }
    assert!(ticks_within.unwrap() <= 5);
}

proptest! {
    #[test]
    fn twist_agrees_with_brute_force(axis in axis_strategy(), other in axis_strategy(), a in -1.5f64..1.5, b in -1.0f64..1.0) {
        let q = Quaternion::from_axis_angle(other, b) * Quaternion::from_axis_angle(axis, a);
        let fast = twist_angle(q, axis);
        let slow = brute_force_twist(q, axis);
        prop_assert!((fast - slow).abs() < 1e-6, "fast {fast} slow {slow}");
    }

    #[test]
    fn pure_twist_is_exact(axis in axis_strategy(), deg in -90.0f64..90.0, base_axis in axis_strategy(), base in -3.0f64..3.0) {
        let calib = FlexionAxisCalibration::new(axis).unwrap();
        let forearm = Quaternion::from_axis_angle(base_axis, base);
        let hand = forearm * calib.rotation(deg);
        let out = relative_flexion_angle(&sample(1.0, forearm), &sample(1.0, hand), &calib).unwrap();
        prop_assert!((out.angle - deg).abs() < 1e-6, "{} vs {deg}", out.angle);
    }

    #[test]
    fn orthogonal_rotation_reads_zero(axis in axis_strategy(), hint in axis_strategy(), ang in -3.0f64..3.0) {
        let Some(perp) = orthogonal(axis, hint) else { return Ok(()); };
        let calib = FlexionAxisCalibration::new(axis).unwrap();
        let hand = Quaternion::from_axis_angle(perp, ang);
        let out = relative_flexion_angle(&sample(0.0, Quaternion::IDENTITY), &sample(0.0, hand), &calib).unwrap();
        prop_assert!(out.angle.abs() < 1e-6);
    }

    #[test]
    fn output_is_lipschitz_near_neutral(deg in -80.0f64..80.0, dir in axis_strategy(), eps in 1e-6f64..1e-3) {
        let calib = FlexionAxisCalibration::default();
        let hand = calib.rotation(deg);
        let nudged = Quaternion::from_axis_angle(dir, eps) * hand;
        let f = |h: Quaternion| relative_flexion_angle(&sample(0.0, Quaternion::IDENTITY), &sample(0.0, h), &calib).unwrap().angle;
        // one radian of perturbation moves the reading by at most a few radians' worth of degrees
        prop_assert!((f(nudged) - f(hand)).abs() <= 3.0 * eps.to_degrees());
    }

    #[test]
    fn neutral_calibration_zeroes_its_window(angles in prop::collection::vec(-60.0f64..60.0, 100..200)) {
        let window: Vec<WristSample> = angles.iter().enumerate().map(|(k, a)| WristSample::new(k as f64 * 0.01, *a)).collect();
        let calib = calibrate_neutral(&window, &FlexionAxisCalibration::default()).unwrap();
        let again: Vec<f64> = window.iter().map(|s| s.angle - calib.neutral_offset).collect();
        let mean = again.iter().sum::<f64>() / again.len() as f64;
        prop_assert!(mean.abs() < 1e-9);
    }
}
