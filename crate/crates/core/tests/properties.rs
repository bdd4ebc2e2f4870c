use std::f64::consts::PI;

use proptest::prelude::*;
use sepcross::config::ExperimentConfig;
use sepcross::geometry::{find_saddle, fmt_f64, orbit_scalars};
use sepcross::numerics::line_fit;
use sepcross::resonance::{condition_bprime, q_grid, zone_delta, ExtremumKind};
use sepcross::stats::{quantile, wilson};
use sepcross::systems::{Domain, Duffing, Hamiltonian};

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn wilson_interval_brackets_the_estimate(n in 1usize..5000, frac in 0.0f64..=1.0) {
        let k = ((n as f64) * frac).floor() as usize;
        let (lo, hi) = wilson(k, n, 1.96);
        let p = k as f64 / n as f64;
        prop_assert!(0.0 <= lo && lo <= p + 1e-12 && p <= hi + 1e-12 && hi <= 1.0);
    }

    #[test]
    fn quantiles_are_monotone(v in prop::collection::vec(-1e3f64..1e3, 1..60), a in 0.0f64..1.0, b in 0.0f64..1.0) {
        let (a, b) = if a <= b { (a, b) } else { (b, a) };
        prop_assert!(quantile(&v, a) <= quantile(&v, b));
        let lo = v.iter().cloned().fold(f64::INFINITY, f64::min);
        prop_assert_eq!(quantile(&v, 0.0), lo);
    }

    #[test]
    fn line_fit_recovers_lines(m in -5.0f64..5.0, c in -5.0f64..5.0, n in 3usize..20) {
        let x: Vec<f64> = (0..n).map(|i| i as f64 * 0.7 - 2.0).collect();
        let y: Vec<f64> = x.iter().map(|x| m * x + c).collect();
        let f = line_fit(&x, &y).unwrap();
        prop_assert!((f.slope - m).abs() < 1e-10 && (f.intercept - c).abs() < 1e-10);
        prop_assert!(f.r2 > 1.0 - 1e-12);
    }

    #[test]
    fn floats_round_trip_through_text(v in prop::num::f64::NORMAL | prop::num::f64::SUBNORMAL | prop::num::f64::ZERO) {
        prop_assert_eq!(fmt_f64(v).parse::<f64>().unwrap(), v);
    }

    #[test]
    fn zone_width_grows_with_eps(eps in 1e-14f64..1e-4, b in 1e-6f64..1.0, h in 1e-6f64..0.5) {
        prop_assert!(zone_delta(2.0 * eps, b, h) > zone_delta(eps, b, h));
    }

    #[test]
    fn bprime_is_shift_invariant(shift in 0usize..2048, c in 0.0f64..0.8, k in 1u32..4) {
        let n = 512 * k as usize;
        let f: Vec<f64> = q_grid(n).iter().map(|q| c + (k as f64 * q).sin()).collect();
        let mut g = f.clone();
        g.rotate_left(shift % n);
        let a = condition_bprime(&f, k).unwrap();
        let b = condition_bprime(&g, k).unwrap();
        prop_assert_eq!(a.verdict, b.verdict);
        prop_assert_eq!(a.extrema.len(), b.extrema.len());
        let maxima = a.extrema.iter().filter(|e| e.kind == ExtremumKind::Max).count();
        prop_assert_eq!(maxima, 1);
    }

    #[test]
    fn config_round_trips(seed in any::<u64>(), eps in 1e-8f64..0.5, n in 1usize..100_000) {
        let mut c = ExperimentConfig::default();
        c.seed = seed;
        c.eps = sepcross::config::OneOrMany::One(eps);
        c.ensemble.n = n;
        let back = ExperimentConfig::from_toml(&c.resolved().unwrap()).unwrap();
        prop_assert_eq!(back, c);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn action_increases_with_energy(u in -8.0f64..-0.7) {
        let s = find_saddle(&Duffing, &[1.0], None).unwrap();
        let h = 10f64.powf(u);
        for d in [Domain::B3, Domain::B1] {
            let sign = if d == Domain::B3 { 1.0 } else { -1.0 };
            let sh = sign * h;
            let a = orbit_scalars(&Duffing, &s, d, sh, &[1.0]).unwrap();
            let b = orbit_scalars(&Duffing, &s, d, sh * 1.01, &[1.0]).unwrap();
            prop_assert!(a.period > 0.0 && (a.omega * a.period - 2.0 * PI).abs() < 1e-12);
            // dI/dh = T / 2pi > 0
            prop_assert!((b.action - a.action) * sign > 0.0);
        }
    }

    #[test]
    fn orbit_scalars_depend_only_on_energy(z in 0.5f64..3.0) {
        // H(p, q; z) = p^2/2 - z q^2/2 + q^4/4: the two loops mirror each other
        let s = find_saddle(&Duffing, &[z], None).unwrap();
        prop_assert!(s.q.abs() < 1e-12);
        let h = -0.1 * z * z / 4.0;
        let a = orbit_scalars(&Duffing, &s, Domain::B1, h, &[z]).unwrap();
        let b = orbit_scalars(&Duffing, &s, Domain::B2, h, &[z]).unwrap();
        prop_assert!((a.period - b.period).abs() < 1e-9 * a.period);
        prop_assert!((a.action - b.action).abs() < 1e-9 * a.action.max(1e-3));
        prop_assert!(Duffing.energy(0.0, 0.0, &[z]).abs() < 1e-15);
    }
}
