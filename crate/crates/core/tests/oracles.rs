//! Closed-form values, computed by hand and frozen.

use std::f64::consts::PI;

use sepcross::averaging::{capture_prediction, theta};
use sepcross::geometry::{find_saddle, orbit_scalars};
use sepcross::systems::{Domain, Duffing, Pendulum, Preset, PresetParams, SystemSpec};

// sech integrals over the real line
const INT_SECH3: f64 = PI / 2.0;
const INT_SECH5: f64 = 3.0 * PI / 8.0;

#[test]
fn outer_action_at_the_separatrix() {
    // both loops together enclose 8/3
    let s = find_saddle(&Duffing, &[1.0], None).unwrap();
    let i = orbit_scalars(&Duffing, &s, Domain::B3, 2e-9, &[1.0]).unwrap().action;
    assert!((i - 4.0 / (3.0 * PI)).abs() < 1e-6, "{i}");
}

#[test]
fn pendulum_small_oscillations() {
    let s = find_saddle(&Pendulum, &[], None).unwrap();
    let o = orbit_scalars(&Pendulum, &s, Domain::B1, -2.0 + 1e-8, &[]).unwrap();
    assert!((o.period - 2.0 * PI).abs() < 1e-6, "{}", o.period);
}

#[test]
fn duffing_scaling_law() {
    // q = sqrt(z) Q, p = z P gives H = z^2 H_1, t = tau / sqrt(z)
    let z = 2.25;
    let s1 = find_saddle(&Duffing, &[1.0], None).unwrap();
    let sz = find_saddle(&Duffing, &[z], None).unwrap();
    for (d, h) in [(Domain::B1, -0.1), (Domain::B3, 0.05)] {
        let a = orbit_scalars(&Duffing, &s1, d, h, &[1.0]).unwrap();
        let b = orbit_scalars(&Duffing, &sz, d, h * z * z, &[z]).unwrap();
        assert!((b.period - a.period / z.sqrt()).abs() < 1e-9);
        assert!((b.action - a.action * z.powf(1.5)).abs() < 1e-9);
    }
}

#[test]
fn tilted_friction_probability() {
    // on the right loop q = sqrt2 sech t: int p^2 dt = 4/3,
    // int q p^2 dt = 2 sqrt2 (int sech^3 - int sech^5)
    let c = 0.3;
    let gamma = 0.1;
    let qp2 = 2.0 * 2f64.sqrt() * (INT_SECH3 - INT_SECH5);
    let theta2 = gamma * (4.0 / 3.0 + c * qp2);
    let theta1 = gamma * (4.0 / 3.0 - c * qp2);
    let sys = SystemSpec::duffing(Preset::TiltedFriction, PresetParams { gamma, c, ..Default::default() });
    let th = theta(&sys, &[1.0], 1e-3, 64).unwrap();
    assert!((th.theta[0] - theta1).abs() < 1e-9, "{:?}", th);
    assert!((th.theta[1] - theta2).abs() < 1e-9, "{:?}", th);
    let (p1, p2) = capture_prediction(&th).unwrap();
    assert!((p1 - (0.5 - 3.0 * 2f64.sqrt() * PI * c / 32.0)).abs() < 1e-9);
    assert!((p1 + p2 - 1.0).abs() < 1e-14);
}

#[test]
fn forcing_averages_out_of_theta() {
    let f = theta(&SystemSpec::duffing(Preset::Friction, PresetParams::default()), &[1.0], 1e-3, 64).unwrap();
    let g = theta(&SystemSpec::duffing(Preset::ForcedFriction, PresetParams::default()), &[1.0], 1e-3, 64).unwrap();
    for i in 0..3 {
        assert!((f.theta[i] - g.theta[i]).abs() < 1e-10);
    }
    assert!((f.theta[2] - 0.1 * 8.0 / 3.0).abs() < 1e-9);
}
