//! Rotating-frame propagation of a two-level system under a piecewise-constant
//! drive.
//!
//! Each slice is exponentiated in closed form with the axis-angle identity
//! `exp(−i(θ/2) n̂·σ) = cos(θ/2)·I − i·sin(θ/2)·n̂·σ`, and the slice unitaries
//! are multiplied in time order. Detunings cross the public interface in Hz and
//! are converted to rad/s here.

use std::f64::consts::PI;
use std::fmt::Write as _;
use std::ops::Mul;

use num_complex::Complex64;

use crate::pulse_shapes::PulseEnvelope;

const ZERO: Complex64 = Complex64::new(0.0, 0.0);
const ONE: Complex64 = Complex64::new(1.0, 0.0);

/// A 2×2 complex matrix, row-major.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TwoLevelUnitary(pub [[Complex64; 2]; 2]);

impl TwoLevelUnitary {
    pub const IDENTITY: Self = Self([[ONE, ZERO], [ZERO, ONE]]);

    pub fn entries(&self) -> &[[Complex64; 2]; 2] {
        &self.0
    }

    pub fn adjoint(&self) -> Self {
        let m = &self.0;
        Self([
            [m[0][0].conj(), m[1][0].conj()],
            [m[0][1].conj(), m[1][1].conj()],
        ])
    }

    pub fn determinant(&self) -> Complex64 {
        self.0[0][0] * self.0[1][1] - self.0[0][1] * self.0[1][0]
    }

    /// Largest entry of `|U†U − I|`.
    pub fn unitarity_error(&self) -> f64 {
        let p = self.adjoint() * *self;
        let mut worst = 0.0f64;
        for i in 0..2 {
            for j in 0..2 {
                let target = if i == j { ONE } else { ZERO };
                worst = worst.max((p.0[i][j] - target).norm());
            }
        }
        worst
    }

    /// Largest entry-wise distance to another matrix.
    pub fn max_distance(&self, other: &Self) -> f64 {
        let mut worst = 0.0f64;
        for i in 0..2 {
            for j in 0..2 {
                worst = worst.max((self.0[i][j] - other.0[i][j]).norm());
            }
        }
        worst
    }

    pub fn powi(&self, k: usize) -> Self {
        (0..k).fold(Self::IDENTITY, |acc, _| *self * acc)
    }

    /// Bloch vector reached from spin-up (`mz = +1`).
    pub fn from_spin_up(&self) -> BlochVector {
        let a = self.0[0][0];
        let b = self.0[1][0];
        let coherence = a * b.conj();
        BlochVector {
            mx: 2.0 * coherence.re,
            my: -2.0 * coherence.im,
            mz: a.norm_sqr() - b.norm_sqr(),
        }
    }
}

impl Mul for TwoLevelUnitary {
    type Output = Self;

    fn mul(self, rhs: Self) -> Self {
        let a = &self.0;
        let b = &rhs.0;
        Self([
            [
                a[0][0] * b[0][0] + a[0][1] * b[1][0],
                a[0][0] * b[0][1] + a[0][1] * b[1][1],
            ],
            [
                a[1][0] * b[0][0] + a[1][1] * b[1][0],
                a[1][0] * b[0][1] + a[1][1] * b[1][1],
            ],
        ])
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BlochVector {
    pub mx: f64,
    pub my: f64,
    pub mz: f64,
}

impl BlochVector {
    /// Spin-up, the optically polarized `m_s = 0` state.
    pub const UP: Self = Self {
        mx: 0.0,
        my: 0.0,
        mz: 1.0,
    };

    pub fn new(mx: f64, my: f64, mz: f64) -> Self {
        Self { mx, my, mz }
    }

    pub fn norm(&self) -> f64 {
        (self.mx * self.mx + self.my * self.my + self.mz * self.mz).sqrt()
    }

    pub fn transverse(&self) -> f64 {
        self.mx.hypot(self.my)
    }

    /// Population of the upper Bloch pole, `(1 + mz) / 2`.
    pub fn up_population(&self) -> f64 {
        0.5 * (1.0 + self.mz)
    }
}

/// Exact propagator of one constant slice:
/// `exp(−i·(dt/2)·[δσz + Ω(cosφ·σx + sinφ·σy)])` with `δ = 2π·detuning_hz`.
pub fn slice_unitary(rabi_amplitude: f64, phase: f64, detuning_hz: f64, dt: f64) -> TwoLevelUnitary {
    let delta = 2.0 * PI * detuning_hz;
    let wx = rabi_amplitude * phase.cos();
    let wy = rabi_amplitude * phase.sin();
    rotation(wx, wy, delta, dt)
}

#[inline]
fn rotation(wx: f64, wy: f64, wz: f64, dt: f64) -> TwoLevelUnitary {
    let rate = (wx * wx + wy * wy + wz * wz).sqrt();
    if rate == 0.0 {
        return TwoLevelUnitary::IDENTITY;
    }
    let half = 0.5 * rate * dt;
    let (s, c) = half.sin_cos();
    let k = s / rate;
    let (nx, ny, nz) = (wx * k, wy * k, wz * k);
    TwoLevelUnitary([
        [Complex64::new(c, -nz), Complex64::new(-ny, -nx)],
        [Complex64::new(ny, -nx), Complex64::new(c, nz)],
    ])
}

/// Time-ordered product `U_N ··· U_2 · U_1` of the slice propagators.
///
/// Every factor is in SU(2), `[[a, −b*], [b, a*]]`, so only the first column
/// is carried through the product.
pub fn pulse_unitary(envelope: &PulseEnvelope, detuning_hz: f64) -> TwoLevelUnitary {
    let delta = 2.0 * PI * detuning_hz;
    let mut a = ONE;
    let mut b = ZERO;
    for s in envelope.slices() {
        let (sin_p, cos_p) = s.phase.sin_cos();
        let wx = s.rabi_amplitude * cos_p;
        let wy = s.rabi_amplitude * sin_p;
        let rate = (wx * wx + wy * wy + delta * delta).sqrt();
        if rate == 0.0 {
            continue;
        }
        let (sin_h, cos_h) = (0.5 * rate * s.duration).sin_cos();
        let k = sin_h / rate;
        let sa = Complex64::new(cos_h, -delta * k);
        let sb = Complex64::new(wy * k, -wx * k);
        let na = sa * a - sb.conj() * b;
        let nb = sb * a + sa.conj() * b;
        a = na;
        b = nb;
    }
    TwoLevelUnitary([[a, -b.conj()], [b, a.conj()]])
}

/// Conjugates `ρ = (I + m·σ)/2` by `u` and returns the new Bloch vector.
pub fn apply(u: &TwoLevelUnitary, state: &BlochVector) -> BlochVector {
    let half = 0.5;
    let rho = TwoLevelUnitary([
        [
            Complex64::new(half * (1.0 + state.mz), 0.0),
            Complex64::new(half * state.mx, -half * state.my),
        ],
        [
            Complex64::new(half * state.mx, half * state.my),
            Complex64::new(half * (1.0 - state.mz), 0.0),
        ],
    ]);
    let out = *u * rho * u.adjoint();
    let r01 = out.0[0][1];
    BlochVector {
        mx: 2.0 * r01.re,
        my: -2.0 * r01.im,
        mz: (out.0[0][0] - out.0[1][1]).re,
    }
}

/// Closed-form Rabi oscillation of the longitudinal component:
/// `mz(0)·{1 + (Ω'/Ω_eff)²·[cos(Ω_eff·t) − 1]}` with `Ω_eff = √(Ω'² + δ²)`.
pub fn analytic_rabi(rabi_amplitude: f64, detuning_hz: f64, t: f64, initial_mz: f64) -> f64 {
    let delta = 2.0 * PI * detuning_hz;
    let eff_sq = rabi_amplitude * rabi_amplitude + delta * delta;
    if eff_sq == 0.0 {
        return initial_mz;
    }
    let eff = eff_sq.sqrt();
    initial_mz * (1.0 + rabi_amplitude * rabi_amplitude / eff_sq * ((eff * t).cos() - 1.0))
}

#[derive(Debug, Clone, PartialEq)]
pub struct ResponseProfile {
    pub detunings: Vec<f64>,
    pub mz: Vec<f64>,
    pub mxy: Vec<f64>,
}

impl ResponseProfile {
    pub fn len(&self) -> usize {
        self.detunings.len()
    }

    pub fn is_empty(&self) -> bool {
        self.detunings.is_empty()
    }

    /// CSV with header `detuning_hz,mz,mxy`, full double precision.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("detuning_hz,mz,mxy\n");
        for i in 0..self.len() {
            let _ = writeln!(out, "{:e},{:e},{:e}", self.detunings[i], self.mz[i], self.mxy[i]);
        }
        out
    }
}

/// Final `mz` and transverse magnitude after the pulse, for each detuning.
///
/// Grid points are independent of each other; the grid only needs to be
/// ascending.
pub fn excitation_profile(
    envelope: &PulseEnvelope,
    detuning_grid: &[f64],
    initial: &BlochVector,
) -> crate::Result<ResponseProfile> {
    if detuning_grid.windows(2).any(|w| w[1] <= w[0]) {
        return Err(crate::Error::InvalidInput(
            "detuning grid must be strictly ascending".into(),
        ));
    }
    let mut mz = Vec::with_capacity(detuning_grid.len());
    let mut mxy = Vec::with_capacity(detuning_grid.len());
    for &d in detuning_grid {
        let u = pulse_unitary(envelope, d);
        let state = if *initial == BlochVector::UP {
            u.from_spin_up()
        } else {
            apply(&u, initial)
        };
        mz.push(state.mz);
        mxy.push(state.transverse());
    }
    Ok(ResponseProfile {
        detunings: detuning_grid.to_vec(),
        mz,
        mxy,
    })
}

/// `n` evenly spaced points from `start` to `end` inclusive.
pub fn linspace(start: f64, end: f64, n: usize) -> Vec<f64> {
    match n {
        0 => Vec::new(),
        1 => vec![start],
        _ => {
            let step = (end - start) / (n - 1) as f64;
            (0..n).map(|i| start + step * i as f64).collect()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pulse_shapes::{rectangular, PulseEnvelope, Slice};

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    #[test]
    fn on_resonance_pi_is_minus_i_sigma_x() {
        let tau = 100e-9;
        let u = slice_unitary(PI / tau, 0.0, 0.0, tau);
        let expected = TwoLevelUnitary([[c(0.0, 0.0), c(0.0, -1.0)], [c(0.0, -1.0), c(0.0, 0.0)]]);
        assert!(u.max_distance(&expected) < 1e-15);
    }

    #[test]
    fn free_precession_is_diagonal_phase() {
        let (d, dt) = (3.3e6, 57e-9);
        let u = slice_unitary(0.0, 0.0, d, dt);
        let p = PI * d * dt;
        let expected = TwoLevelUnitary([
            [Complex64::from_polar(1.0, -p), c(0.0, 0.0)],
            [c(0.0, 0.0), Complex64::from_polar(1.0, p)],
        ]);
        assert!(u.max_distance(&expected) < 1e-14);
    }

    #[test]
    fn phase_rotates_drive_axis() {
        // φ = π/2 drives about +y: spin-up goes to +x after a π/2 rotation.
        let tau = 50e-9;
        let u = slice_unitary(PI / 2.0 / tau, PI / 2.0, 0.0, tau);
        let s = apply(&u, &BlochVector::UP);
        assert!((s.mx - 1.0).abs() < 1e-12 && s.my.abs() < 1e-12 && s.mz.abs() < 1e-12);
    }

    #[test]
    fn apply_identity_and_inversion() {
        let st = BlochVector::new(0.3, -0.4, 0.5);
        assert_eq!(apply(&TwoLevelUnitary::IDENTITY, &st), st);
        let flip = TwoLevelUnitary([[c(0.0, 0.0), c(0.0, -1.0)], [c(0.0, -1.0), c(0.0, 0.0)]]);
        let out = apply(&flip, &BlochVector::UP);
        assert!((out.mz + 1.0).abs() < 1e-15 && out.transverse() < 1e-15);
    }

    #[test]
    fn rectangular_pi_inverts_on_resonance() {
        let env = rectangular(100e-9, PI).unwrap();
        let u = pulse_unitary(&env, 0.0);
        let expected = TwoLevelUnitary([[c(0.0, 0.0), c(0.0, -1.0)], [c(0.0, -1.0), c(0.0, 0.0)]]);
        assert!(u.max_distance(&expected) < 1e-10);
    }

    #[test]
    fn splitting_a_slice_changes_nothing() {
        let tau = 200e-9;
        let amp = 2.1e7;
        let whole = PulseEnvelope::new(vec![Slice { duration: tau, rabi_amplitude: amp, phase: 0.3 }]).unwrap();
        let halves = PulseEnvelope::new(vec![
            Slice { duration: tau / 2.0, rabi_amplitude: amp, phase: 0.3 };
            2
        ])
        .unwrap();
        for &d in &[0.0, 1.7e6, -4.2e6] {
            let a = pulse_unitary(&whole, d);
            let b = pulse_unitary(&halves, d);
            assert!(a.max_distance(&b) < 1e-14);
        }
    }

    #[test]
    fn first_full_return_of_rectangular_pi() {
        let tau = 100e-9;
        let env = rectangular(tau, PI).unwrap();
        let d = 3f64.sqrt() / (2.0 * tau);
        let mz = pulse_unitary(&env, d).from_spin_up().mz;
        assert!((mz - 1.0).abs() < 1e-9, "mz = {mz}");
        assert!((analytic_rabi(PI / tau, d, tau, 1.0) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn analytic_rabi_limits() {
        let w = 2.0 * PI * 5e6;
        for &t in &[0.0, 13e-9, 77e-9, 1e-6] {
            assert!((analytic_rabi(w, 0.0, t, 0.8) - 0.8 * (w * t).cos()).abs() < 1e-14);
            assert_eq!(analytic_rabi(0.0, 3e6, t, 0.8), 0.8);
        }
        assert_eq!(analytic_rabi(0.0, 0.0, 1e-6, -0.3), -0.3);
    }

    #[test]
    fn zero_amplitude_profile_is_flat() {
        let env = PulseEnvelope::from_amplitudes(1e-6, &[0.0; 64]).unwrap();
        let grid = linspace(-5e6, 5e6, 41);
        let init = BlochVector::new(0.6, 0.0, 0.8);
        let p = excitation_profile(&env, &grid, &init).unwrap();
        for &m in &p.mz {
            assert!((m - 0.8).abs() < 1e-12);
        }
    }

    #[test]
    fn profile_rejects_unsorted_grid() {
        let env = rectangular(1e-7, PI).unwrap();
        assert!(excitation_profile(&env, &[1.0, 0.0], &BlochVector::UP).is_err());
    }

    #[test]
    fn profile_csv_header() {
        let env = rectangular(1e-7, PI).unwrap();
        let p = excitation_profile(&env, &[0.0, 1e6], &BlochVector::UP).unwrap();
        let csv = p.to_csv();
        let mut lines = csv.lines();
        assert_eq!(lines.next(), Some("detuning_hz,mz,mxy"));
        let row: Vec<f64> = lines.next().unwrap().split(',').map(|v| v.parse().unwrap()).collect();
        assert_eq!(row[0], 0.0);
        assert_eq!(row[1], p.mz[0]);
    }
}
