use std::f64::consts::PI;

use num_complex::Complex64;
use nv_reburp::propagator::{
    analytic_rabi, apply, excitation_profile, pulse_unitary, slice_unitary, BlochVector,
    TwoLevelUnitary,
};
use nv_reburp::pulse_shapes::{rectangular, PulseEnvelope, Slice};
use proptest::prelude::*;

type M2 = [[Complex64; 2]; 2];

fn mul(a: &M2, b: &M2) -> M2 {
    let mut c = [[Complex64::new(0.0, 0.0); 2]; 2];
    for i in 0..2 {
        for j in 0..2 {
            c[i][j] = a[i][0] * b[0][j] + a[i][1] * b[1][j];
        }
    }
    c
}

/// exp(−i H dt) by a 20-term Taylor series on H dt / 64 followed by six
/// squarings, independent of the closed-form slice rotation.
fn expm_oracle(amp: f64, phase: f64, detuning_hz: f64, dt: f64) -> M2 {
    let i = Complex64::new(0.0, 1.0);
    let delta = 2.0 * PI * detuning_hz;
    let h: M2 = [
        [Complex64::new(0.5 * delta, 0.0), 0.5 * amp * Complex64::from_polar(1.0, -phase)],
        [0.5 * amp * Complex64::from_polar(1.0, phase), Complex64::new(-0.5 * delta, 0.0)],
    ];
    let scale = dt / 64.0;
    let a: M2 = [
        [-i * h[0][0] * scale, -i * h[0][1] * scale],
        [-i * h[1][0] * scale, -i * h[1][1] * scale],
    ];
    let one = Complex64::new(1.0, 0.0);
    let zero = Complex64::new(0.0, 0.0);
    let mut sum: M2 = [[one, zero], [zero, one]];
    let mut term = sum;
    for k in 1..=20 {
        term = mul(&term, &a);
        for row in term.iter_mut() {
            for x in row.iter_mut() {
                *x /= k as f64;
            }
        }
        for r in 0..2 {
            for c in 0..2 {
                sum[r][c] += term[r][c];
            }
        }
    }
    for _ in 0..6 {
        sum = mul(&sum, &sum);
    }
    sum
}

fn distance(u: &TwoLevelUnitary, m: &M2) -> f64 {
    let mut worst: f64 = 0.0;
    for r in 0..2 {
        for c in 0..2 {
            worst = worst.max((u.0[r][c] - m[r][c]).norm());
        }
    }
    worst
}

#[test]
fn slice_matches_matrix_exponential() {
    let cases = [
        (2.0 * PI * 5e6, 0.0, 0.0, 100e-9),
        (2.0 * PI * 1e6, 0.3, 2.5e6, 400e-9),
        (2.0 * PI * 20e6, -2.0, -7e6, 3e-9),
        (0.0, 1.0, 3e6, 1e-7),
        (-2.0 * PI * 4e6, PI / 2.0, 1e5, 2e-7),
    ];
    for (amp, phase, det, dt) in cases {
        let u = slice_unitary(amp, phase, det, dt);
        let m = expm_oracle(amp, phase, det, dt);
        assert!(distance(&u, &m) < 1e-12, "case {amp} {phase} {det} {dt}");
    }
}

#[test]
fn pulse_is_ordered_product_of_slices() {
    let slices: Vec<Slice> = (0..7)
        .map(|k| Slice {
            duration: 30e-9 + 5e-9 * k as f64,
            rabi_amplitude: 2.0 * PI * (3e6 - 1e6 * k as f64),
            phase: 0.4 * k as f64,
        })
        .collect();
    let env = PulseEnvelope::new(slices.clone()).unwrap();
    let det = 1.7e6;
    let mut expected = TwoLevelUnitary::IDENTITY;
    for s in &slices {
        // Later slices act last, so they multiply from the left.
        expected = slice_unitary(s.rabi_amplitude, s.phase, det, s.duration) * expected;
    }
    assert!(pulse_unitary(&env, det).max_distance(&expected) < 1e-13);
}

#[test]
fn rectangular_profile_matches_rabi_formula() {
    let tau = 100e-9;
    let env = rectangular(tau, PI).unwrap();
    let amp = PI / tau;
    let grid: Vec<f64> = (0..201).map(|k| -20e6 + 2e5 * k as f64).collect();
    let profile = excitation_profile(&env, &grid, &BlochVector::UP).unwrap();
    for (d, mz) in grid.iter().zip(&profile.mz) {
        assert!((mz - analytic_rabi(amp, *d, tau, 1.0)).abs() < 1e-12, "detuning {d}");
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn envelopes_stay_unitary_and_preserve_bloch_norm(
        amps in proptest::collection::vec(-2.0e8f64..2.0e8, 1..40),
        phases in proptest::collection::vec(-PI..PI, 40),
        dt in 1e-10f64..5e-8,
        det in -5.0e7f64..5.0e7,
    ) {
        let slices: Vec<Slice> = amps
            .iter()
            .zip(&phases)
            .map(|(a, p)| Slice { duration: dt, rabi_amplitude: *a, phase: *p })
            .collect();
        let env = PulseEnvelope::new(slices).unwrap();
        let u = pulse_unitary(&env, det);
        prop_assert!(u.unitarity_error() <= 1e-9);
        prop_assert!((u.determinant().norm() - 1.0).abs() <= 1e-9);
        let out = apply(&u, &BlochVector::new(0.6, 0.0, 0.8));
        prop_assert!((out.norm() - 1.0).abs() <= 1e-9);
    }

    #[test]
    fn slices_agree_with_oracle(
        amp in -2.0e8f64..2.0e8,
        phase in -PI..PI,
        det in -5.0e7f64..5.0e7,
        dt in 1e-10f64..2e-8,
    ) {
        let u = slice_unitary(amp, phase, det, dt);
        prop_assert!(distance(&u, &expm_oracle(amp, phase, det, dt)) < 1e-10);
    }
}
