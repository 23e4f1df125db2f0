//! End-to-end checks of crib-core against closed forms that do not share
//! code with the implementation.

use std::f64::consts::PI;

use approx::assert_relative_eq;
use crib_core::crib::{efficiency_formula, run_crib, CribScenario, EfficiencyKind, LinePreparation, RecallMode};
use crib_core::echo::{two_pulse_echo, EchoSettings};
use crib_core::ensemble::{build_line_shape, BroadeningControl, GridSettings, LineKind};
use crib_core::fringe::fit_fringe;
use crib_core::repeater::{channel_transmission, min_efficiency, segment_success_prob};
use crib_core::timebin::{TimeBinState, WavepacketShape};
use crib_core::waveform::Waveform;
use crib_core::{mhz, Complex64};
use proptest::prelude::*;

fn echo_at_2tau(tau: f64, t2: f64) -> f64 {
    let line = build_line_shape(LineKind::Lorentzian, 0.0, mhz(1.0)).unwrap();
    let s = EchoSettings::default();
    let tr = two_pulse_echo(tau, (PI / 2.0, PI), &line, t2, s).unwrap();
    tr.peak_intensity_in(2.0 * tau - 0.5 * s.dt, 2.0 * tau + 0.5 * s.dt)
}

#[test]
fn two_pulse_echo_decays_as_exp_minus_4tau_over_t2() {
    let t2 = 6.0;
    let taus = [1.0, 1.5, 2.0, 3.0, 4.0];
    for &tau in &taus {
        let ratio = echo_at_2tau(tau, t2) / echo_at_2tau(tau, f64::INFINITY);
        let expected = (-4.0 * tau / t2).exp();
        assert!(
            (ratio / expected - 1.0).abs() < 0.03,
            "tau {tau}: ratio {ratio}, expected {expected}"
        );
    }
}

#[test]
fn two_pulse_echo_intensity_follows_pulse_areas() {
    // The echo amplitude scales as sinθ₁·sin²(θ₂/2).
    let line = build_line_shape(LineKind::Gaussian, 0.0, mhz(2.0)).unwrap();
    let s = EchoSettings::default();
    let at = |a1: f64, a2: f64| {
        two_pulse_echo(1.0, (a1, a2), &line, f64::INFINITY, s)
            .unwrap()
            .peak_intensity_in(2.0 - 0.5 * s.dt, 2.0 + 0.5 * s.dt)
    };
    let reference = at(PI / 2.0, PI);
    for (a1, a2) in [(PI / 4.0, PI), (PI / 2.0, PI / 2.0), (PI / 3.0, 2.0 * PI / 3.0)] {
        let expected = (a1.sin() * (0.5 * a2).sin().powi(2)).powi(2);
        assert_relative_eq!(at(a1, a2) / reference, expected, max_relative = 1e-6);
    }
}

fn backward_efficiency(depth: f64, input: Waveform) -> f64 {
    let n = input.len();
    let sc = CribScenario {
        preparation: LinePreparation::Direct(build_line_shape(LineKind::Lorentzian, 0.0, 1e-8).unwrap()),
        control: BroadeningControl::transverse(mhz(1.0)),
        length: 1.0,
        depth,
        t2: f64::INFINITY,
        grid: GridSettings::default(),
        input,
        recall: RecallMode::Backward,
        recall_samples: Some(n),
        reverse_gradient: false,
        check_oracle: false,
    };
    run_crib(&sc).unwrap().efficiency
}

#[test]
fn crib_efficiency_is_independent_of_input_amplitude() {
    let dt = 0.05;
    let g = Waveform::gaussian(300, dt, 7.5, 3.0).unwrap();
    let weak = backward_efficiency(1.5, g.scaled(Complex64::new(1e-3, 0.0)));
    let strong = backward_efficiency(1.5, g.scaled(Complex64::new(0.0, 7.0)));
    assert_relative_eq!(weak, strong, max_relative = 1e-9);
    let formula = efficiency_formula(EfficiencyKind::TransverseBackward, 1.5).unwrap();
    assert!((weak - formula).abs() < 0.02, "{weak} vs {formula}");
}

#[test]
fn balanced_time_bin_state_has_equal_bin_energies() {
    let shape = WavepacketShape::Gaussian { fwhm: 0.5 };
    let st = TimeBinState::new(1.0 / 2f64.sqrt(), 1.0 / 2f64.sqrt(), 1.1, 3.0, shape).unwrap();
    let w = st.encode(1000, 0.01, 2.0).unwrap();
    // Midway between the bins at 2 and 5 µs.
    let split = 350;
    let early: f64 = w.samples[..split].iter().map(|c| c.norm_sqr()).sum();
    let late: f64 = w.samples[split..].iter().map(|c| c.norm_sqr()).sum();
    assert_relative_eq!(early, late, max_relative = 1e-9);
}

#[test]
fn bb84_states_are_pairwise_unbiased_or_orthogonal() {
    let shape = WavepacketShape::Square { duration: 1.0 };
    let s = |theta: f64, phi: f64| TimeBinState::from_angles(theta, phi, 2.0, shape).unwrap();
    let z = [s(0.0, 0.0), s(PI, 0.0)];
    let x = [s(PI / 2.0, 0.0), s(PI / 2.0, PI)];
    let y = [s(PI / 2.0, PI / 2.0), s(PI / 2.0, 3.0 * PI / 2.0)];
    for basis in [&z, &x, &y] {
        assert!(basis[0].fidelity(&basis[1]) < 1e-12);
    }
    for (a, b) in [(&z, &x), (&x, &y), (&y, &z)] {
        for p in a.iter() {
            for q in b.iter() {
                assert_relative_eq!(p.fidelity(q), 0.5, epsilon = 1e-12);
            }
        }
    }
}

#[test]
fn repeater_closed_forms_at_fifty_km() {
    // 0.2 dB/km over 50 km is 10 dB.
    assert_relative_eq!(channel_transmission(0.2, 50.0).unwrap(), 0.1, max_relative = 1e-14);
    assert_relative_eq!(min_efficiency(0.2, 50.0).unwrap(), 0.1f64.sqrt(), max_relative = 1e-14);
}

proptest! {
    #[test]
    fn fringe_fit_recovers_exact_sinusoid(
        a in 0.5f64..5.0,
        v in 0.01f64..0.99,
        theta0 in -PI..PI,
        points in 4usize..40,
    ) {
        let phases: Vec<f64> = (0..points).map(|k| 2.0 * PI * k as f64 / points as f64).collect();
        let ys: Vec<f64> = phases.iter().map(|&p| a * (1.0 + v * (p - theta0).cos())).collect();
        let fit = fit_fringe(&phases, &ys).unwrap();
        prop_assert!((fit.visibility - v).abs() < 1e-9);
        prop_assert!((fit.offset - a).abs() < 1e-9 * a);
        let dphi = (fit.phase - theta0 + PI).rem_euclid(2.0 * PI) - PI;
        prop_assert!(dphi.abs() < 1e-8);
    }

    #[test]
    fn multimode_success_matches_independent_trials(p in 1e-9f64..0.5, modes in 1u64..500) {
        let direct = 1.0 - (1.0 - p).powf(modes as f64);
        let got = segment_success_prob(p, modes).unwrap();
        prop_assert!((got - direct).abs() <= 1e-12 + 1e-9 * direct);
        prop_assert!(got >= p * (1.0 - 1e-12));
    }
}
