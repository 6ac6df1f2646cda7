//! NV ground-state spin Hamiltonian and its microwave-addressable lines.
//!
//! The Hilbert space is `electron (S=1) ⊗ ¹⁴N (I=1) ⊗ ¹³C_1 ⊗ … (I=½)`, with
//! spin-1 bases ordered `m = +1, 0, −1` and spin-½ bases `m = +½, −½`. All
//! energies are `H/h` in Hz.
//!
//! Gyromagnetic ratios and ¹⁴N hyperfine constants default to common
//! literature values; they are configuration, not fixed physics.

use std::fmt::Write as _;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{ensure_finite, Error, Result};
use crate::linalg::{jacobi_eigh, CMatrix};

/// Zero-field splitting of the NV ground state.
pub const DEFAULT_ZERO_FIELD_SPLITTING_HZ: f64 = 2.870e9;
/// Electron gyromagnetic ratio, literature default.
pub const DEFAULT_GAMMA_E_HZ_PER_T: f64 = -28.024e9;
/// ¹⁴N gyromagnetic ratio, literature default.
pub const DEFAULT_GAMMA_N14_HZ_PER_T: f64 = 3.077e6;
/// ¹³C gyromagnetic ratio, literature default.
pub const DEFAULT_GAMMA_C13_HZ_PER_T: f64 = 10.705e6;
/// Axial ¹⁴N hyperfine coupling, literature default.
pub const DEFAULT_A_PAR_N_HZ: f64 = 2.16e6;
/// Transverse ¹⁴N hyperfine coupling, literature default.
pub const DEFAULT_A_PERP_N_HZ: f64 = 2.7e6;

/// Lines closer than this are merged into one.
pub const MERGE_THRESHOLD_HZ: f64 = 1.0;
/// Minimum weight on one `m_s` manifold for an eigenvector to be classified.
pub const MS_DOMINANCE: f64 = 0.6;
/// Minimum nuclear-state overlap for an allowed `m_s = 0 → −1` transition.
pub const NUCLEAR_OVERLAP: f64 = 0.5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NvParameters {
    pub zero_field_splitting: f64,
    pub gamma_e: f64,
    pub gamma_n14: f64,
    pub gamma_c13: f64,
    pub a_par_n: f64,
    pub a_perp_n: f64,
    /// Hyperfine vectors `A_i` entering as `S_z · (A_i · I_i)`.
    pub c13_couplings: Vec<[f64; 3]>,
}

impl Default for NvParameters {
    fn default() -> Self {
        Self {
            zero_field_splitting: DEFAULT_ZERO_FIELD_SPLITTING_HZ,
            gamma_e: DEFAULT_GAMMA_E_HZ_PER_T,
            gamma_n14: DEFAULT_GAMMA_N14_HZ_PER_T,
            gamma_c13: DEFAULT_GAMMA_C13_HZ_PER_T,
            a_par_n: DEFAULT_A_PAR_N_HZ,
            a_perp_n: DEFAULT_A_PERP_N_HZ,
            c13_couplings: Vec::new(),
        }
    }
}

impl NvParameters {
    /// Every coupling and ratio zeroed except the zero-field splitting.
    pub fn zero_field_only(zero_field_splitting: f64) -> Self {
        Self {
            zero_field_splitting,
            gamma_e: 0.0,
            gamma_n14: 0.0,
            gamma_c13: 0.0,
            a_par_n: 0.0,
            a_perp_n: 0.0,
            c13_couplings: Vec::new(),
        }
    }

    fn check_finite(&self) -> Result<()> {
        ensure_finite("zero_field_splitting", self.zero_field_splitting)?;
        ensure_finite("gamma_e", self.gamma_e)?;
        ensure_finite("gamma_n14", self.gamma_n14)?;
        ensure_finite("gamma_c13", self.gamma_c13)?;
        ensure_finite("a_par_n", self.a_par_n)?;
        ensure_finite("a_perp_n", self.a_perp_n)?;
        for a in &self.c13_couplings {
            for &x in a {
                ensure_finite("c13 coupling", x)?;
            }
        }
        Ok(())
    }

    /// Rejects non-finite values and a non-positive zero-field splitting.
    pub fn validate(&self) -> Result<()> {
        self.check_finite()?;
        if self.zero_field_splitting <= 0.0 {
            return Err(Error::InvalidInput(format!(
                "zero_field_splitting must be positive, got {}",
                self.zero_field_splitting
            )));
        }
        Ok(())
    }

    pub fn nuclear_dim(&self) -> usize {
        3 << self.c13_couplings.len()
    }
}

/// Static field in the NV frame (z along the NV axis), tesla.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct MagneticField {
    pub b_vector: [f64; 3],
}

impl MagneticField {
    pub fn axial(bz: f64) -> Self {
        Self {
            b_vector: [0.0, 0.0, bz],
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct HamiltonianMatrix {
    matrix: CMatrix,
    nuclear_dim: usize,
}

impl HamiltonianMatrix {
    pub fn matrix(&self) -> &CMatrix {
        &self.matrix
    }

    pub fn dimension(&self) -> usize {
        self.matrix.dim()
    }

    /// Dimension of the nuclear factor (everything after the electron spin).
    pub fn nuclear_dim(&self) -> usize {
        self.nuclear_dim
    }

    pub fn is_hermitian(&self) -> bool {
        let scale = self.matrix.max_abs();
        self.matrix.hermiticity_error() <= 1e-6_f64.max(1e-15 * scale)
    }

    /// `H + shift·I`; transition frequencies do not depend on `shift`.
    pub fn shifted(&self, shift: f64) -> Self {
        let n = self.dimension();
        Self {
            matrix: self.matrix.clone() + CMatrix::identity(n).scale(shift),
            nuclear_dim: self.nuclear_dim,
        }
    }
}

/// Spin operators `(x, y, z)` for spin 1 or spin ½.
struct SpinOps {
    x: CMatrix,
    y: CMatrix,
    z: CMatrix,
}

fn c(re: f64, im: f64) -> Complex64 {
    Complex64::new(re, im)
}

fn spin_one() -> SpinOps {
    let r = std::f64::consts::FRAC_1_SQRT_2;
    let o = c(0.0, 0.0);
    SpinOps {
        x: CMatrix::from_rows(&[
            vec![o, c(r, 0.0), o],
            vec![c(r, 0.0), o, c(r, 0.0)],
            vec![o, c(r, 0.0), o],
        ]),
        y: CMatrix::from_rows(&[
            vec![o, c(0.0, -r), o],
            vec![c(0.0, r), o, c(0.0, -r)],
            vec![o, c(0.0, r), o],
        ]),
        z: CMatrix::from_real_diagonal(&[1.0, 0.0, -1.0]),
    }
}

fn spin_half() -> SpinOps {
    let o = c(0.0, 0.0);
    SpinOps {
        x: CMatrix::from_rows(&[vec![o, c(0.5, 0.0)], vec![c(0.5, 0.0), o]]),
        y: CMatrix::from_rows(&[vec![o, c(0.0, -0.5)], vec![c(0.0, 0.5), o]]),
        z: CMatrix::from_real_diagonal(&[0.5, -0.5]),
    }
}

/// Embeds a single-factor operator into the full product space.
fn embed(factors: &[usize], slot: usize, op: &CMatrix) -> CMatrix {
    factors
        .iter()
        .enumerate()
        .map(|(i, &d)| if i == slot { op.clone() } else { CMatrix::identity(d) })
        .reduce(|acc, m| acc.kron(&m))
        .expect("at least one factor")
}

/// Builds `H/h` in Hz:
/// `D·Sz² − γe·B·S − γN·B·I_N − γC·B·ΣI_C + A∥·Sz·I_Nz + A⊥·(Sx·I_Nx + Sy·I_Ny) + Sz·Σ A_i·I_i`.
pub fn build_hamiltonian(params: &NvParameters, field: &MagneticField) -> Result<HamiltonianMatrix> {
    params.check_finite()?;
    for &b in &field.b_vector {
        ensure_finite("magnetic field", b)?;
    }
    let n_c = params.c13_couplings.len();
    let mut factors = vec![3usize, 3];
    factors.extend(std::iter::repeat_n(2, n_c));
    let dim: usize = factors.iter().product();

    let one = spin_one();
    let half = spin_half();
    let s = [
        embed(&factors, 0, &one.x),
        embed(&factors, 0, &one.y),
        embed(&factors, 0, &one.z),
    ];
    let i_n = [
        embed(&factors, 1, &one.x),
        embed(&factors, 1, &one.y),
        embed(&factors, 1, &one.z),
    ];
    let b = field.b_vector;

    let mut h = &s[2] * &s[2];
    h = h.scale(params.zero_field_splitting);
    for k in 0..3 {
        h = h + s[k].scale(-params.gamma_e * b[k]);
        h = h + i_n[k].scale(-params.gamma_n14 * b[k]);
    }
    h = h + (&s[2] * &i_n[2]).scale(params.a_par_n);
    h = h + (&s[0] * &i_n[0]).scale(params.a_perp_n);
    h = h + (&s[1] * &i_n[1]).scale(params.a_perp_n);

    for (i, a) in params.c13_couplings.iter().enumerate() {
        let slot = 2 + i;
        let ic = [
            embed(&factors, slot, &half.x),
            embed(&factors, slot, &half.y),
            embed(&factors, slot, &half.z),
        ];
        for k in 0..3 {
            h = h + ic[k].scale(-params.gamma_c13 * b[k]);
            h = h + (&s[2] * &ic[k]).scale(a[k]);
        }
    }
    debug_assert_eq!(h.dim(), dim);

    Ok(HamiltonianMatrix {
        matrix: h,
        nuclear_dim: dim / 3,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransitionLine {
    pub frequency: f64,
    pub weight: f64,
    pub label: String,
}

/// Transition lines in strictly ascending frequency order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LineSet {
    lines: Vec<TransitionLine>,
}

impl LineSet {
    /// Sorts, merges lines closer than [`MERGE_THRESHOLD_HZ`] (summing
    /// weights and joining labels with `|`) and renormalizes weights.
    pub fn new(mut lines: Vec<TransitionLine>) -> Result<Self> {
        if lines.is_empty() {
            return Err(Error::InvalidInput("line set is empty".into()));
        }
        for l in &lines {
            ensure_finite("line frequency", l.frequency)?;
            ensure_finite("line weight", l.weight)?;
            if l.frequency <= 0.0 {
                return Err(Error::InvalidInput(format!(
                    "line '{}' has non-positive frequency {}",
                    l.label, l.frequency
                )));
            }
            if l.weight < 0.0 {
                return Err(Error::InvalidInput(format!(
                    "line '{}' has negative weight",
                    l.label
                )));
            }
        }
        lines.sort_by(|a, b| a.frequency.total_cmp(&b.frequency));
        let mut merged: Vec<TransitionLine> = Vec::with_capacity(lines.len());
        let mut group_start = f64::NAN;
        for line in lines {
            match merged.last_mut() {
                Some(last) if line.frequency - group_start < MERGE_THRESHOLD_HZ => {
                    let w = last.weight + line.weight;
                    if w > 0.0 {
                        last.frequency =
                            (last.frequency * last.weight + line.frequency * line.weight) / w;
                    }
                    last.weight = w;
                    last.label.push('|');
                    last.label.push_str(&line.label);
                }
                _ => {
                    group_start = line.frequency;
                    merged.push(line);
                }
            }
        }
        let total: f64 = merged.iter().map(|l| l.weight).sum();
        if total <= 0.0 {
            return Err(Error::InvalidInput("line weights sum to zero".into()));
        }
        for l in &mut merged {
            l.weight /= total;
        }
        Ok(Self { lines: merged })
    }

    /// Equal-weight lines labelled `line0`, `line1`, … in ascending order.
    pub fn from_frequencies(frequencies: &[f64]) -> Result<Self> {
        let mut sorted = frequencies.to_vec();
        sorted.sort_by(f64::total_cmp);
        let w = 1.0 / sorted.len().max(1) as f64;
        Self::new(
            sorted
                .into_iter()
                .enumerate()
                .map(|(i, f)| TransitionLine {
                    frequency: f,
                    weight: w,
                    label: format!("line{i}"),
                })
                .collect(),
        )
    }

    pub fn lines(&self) -> &[TransitionLine] {
        &self.lines
    }

    pub fn len(&self) -> usize {
        self.lines.len()
    }

    pub fn is_empty(&self) -> bool {
        self.lines.is_empty()
    }

    pub fn frequencies(&self) -> Vec<f64> {
        self.lines.iter().map(|l| l.frequency).collect()
    }

    /// CSV with header `frequency_hz,weight,label`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("frequency_hz,weight,label\n");
        for l in &self.lines {
            let _ = writeln!(out, "{:e},{:e},{}", l.frequency, l.weight, l.label);
        }
        out
    }
}

fn ms_label(m2: i32) -> String {
    // m2 is twice the projection for spin-½, the projection itself for spin 1.
    match m2 {
        0 => "0".into(),
        m if m > 0 => format!("+{m}"),
        m => m.to_string(),
    }
}

fn nuclear_label(index: usize, n_c13: usize) -> String {
    let carbon_dim = 1usize << n_c13;
    let m_n = 1 - (index / carbon_dim) as i32;
    let mut label = format!("mN={}", ms_label(m_n));
    for k in 0..n_c13 {
        let bit = (index >> (n_c13 - 1 - k)) & 1;
        let _ = write!(label, ";mC{}={}", k + 1, if bit == 0 { "+1/2" } else { "-1/2" });
    }
    label
}

/// Diagonalizes `h` and returns the allowed `m_s = 0 → −1` lines, equally
/// weighted.
pub fn transition_lines(h: &HamiltonianMatrix, params: &NvParameters) -> Result<LineSet> {
    if !h.is_hermitian() {
        return Err(Error::InvalidInput("Hamiltonian is not Hermitian".into()));
    }
    let m = h.nuclear_dim();
    if m != params.nuclear_dim() {
        return Err(Error::InvalidInput(format!(
            "Hamiltonian nuclear dimension {m} does not match parameters ({})",
            params.nuclear_dim()
        )));
    }
    let eig = jacobi_eigh(h.matrix())?;
    let n = h.dimension();

    // Per eigenvector: manifold index (0: +1, 1: 0, 2: −1).
    let mut zero_levels = Vec::new();
    let mut minus_levels = Vec::new();
    for j in 0..n {
        let v = eig.vectors.column(j);
        let weights: Vec<f64> = (0..3)
            .map(|s| v[s * m..(s + 1) * m].iter().map(|z| z.norm_sqr()).sum())
            .collect();
        let (manifold, &w) = weights
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.total_cmp(b.1))
            .expect("three manifolds");
        if w <= MS_DOMINANCE {
            return Err(Error::DegenerateField(format!(
                "eigenvector {j} has no dominant m_s character (max weight {w:.3})"
            )));
        }
        let nuclear: Vec<Complex64> = v[manifold * m..(manifold + 1) * m]
            .iter()
            .map(|z| z / w.sqrt())
            .collect();
        match manifold {
            1 => zero_levels.push((eig.values[j], nuclear)),
            2 => minus_levels.push((eig.values[j], nuclear)),
            _ => {}
        }
    }

    let n_c13 = params.c13_couplings.len();
    let mut lines = Vec::new();
    for (e0, n0) in &zero_levels {
        for (e1, n1) in &minus_levels {
            let overlap: Complex64 = n0.iter().zip(n1).map(|(a, b)| a.conj() * b).sum();
            if overlap.norm_sqr() > NUCLEAR_OVERLAP {
                let dominant = n0
                    .iter()
                    .enumerate()
                    .max_by(|a, b| a.1.norm_sqr().total_cmp(&b.1.norm_sqr()))
                    .map(|(i, _)| i)
                    .unwrap_or(0);
                lines.push(TransitionLine {
                    frequency: (e1 - e0).abs(),
                    weight: 1.0,
                    label: nuclear_label(dominant, n_c13),
                });
            }
        }
    }
    if lines.is_empty() {
        return Err(Error::DegenerateField(
            "no allowed m_s = 0 → −1 transitions found".into(),
        ));
    }
    let w = 1.0 / lines.len() as f64;
    for l in &mut lines {
        l.weight = w;
    }
    LineSet::new(lines)
}

/// One line expressed relative to a drive carrier.
#[derive(Debug, Clone, PartialEq)]
pub struct DetunedLine {
    pub detuning: f64,
    pub weight: f64,
    pub label: String,
}

/// `line.frequency − carrier` for every line, order preserved.
pub fn detuned_lines(lines: &LineSet, carrier: f64) -> Vec<DetunedLine> {
    lines
        .lines()
        .iter()
        .map(|l| DetunedLine {
            detuning: l.frequency - carrier,
            weight: l.weight,
            label: l.label.clone(),
        })
        .collect()
}

/// JSON spin-system configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpinConfig {
    #[serde(default = "default_zfs")]
    pub zero_field_splitting_hz: f64,
    #[serde(default = "default_gamma_e")]
    pub gamma_e_hz_per_t: f64,
    #[serde(default = "default_gamma_n")]
    pub gamma_n14_hz_per_t: f64,
    #[serde(default = "default_gamma_c")]
    pub gamma_c13_hz_per_t: f64,
    #[serde(default = "default_a_par")]
    pub a_par_n_hz: f64,
    #[serde(default = "default_a_perp")]
    pub a_perp_n_hz: f64,
    #[serde(default)]
    pub b_field_t: [f64; 3],
    #[serde(default)]
    pub c13_couplings_hz: Vec<[f64; 3]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub line_override_hz: Option<Vec<f64>>,
}

fn default_zfs() -> f64 {
    DEFAULT_ZERO_FIELD_SPLITTING_HZ
}
fn default_gamma_e() -> f64 {
    DEFAULT_GAMMA_E_HZ_PER_T
}
fn default_gamma_n() -> f64 {
    DEFAULT_GAMMA_N14_HZ_PER_T
}
fn default_gamma_c() -> f64 {
    DEFAULT_GAMMA_C13_HZ_PER_T
}
fn default_a_par() -> f64 {
    DEFAULT_A_PAR_N_HZ
}
fn default_a_perp() -> f64 {
    DEFAULT_A_PERP_N_HZ
}

impl Default for SpinConfig {
    fn default() -> Self {
        serde_json::from_str("{}").expect("all fields have defaults")
    }
}

impl SpinConfig {
    pub fn parameters(&self) -> NvParameters {
        NvParameters {
            zero_field_splitting: self.zero_field_splitting_hz,
            gamma_e: self.gamma_e_hz_per_t,
            gamma_n14: self.gamma_n14_hz_per_t,
            gamma_c13: self.gamma_c13_hz_per_t,
            a_par_n: self.a_par_n_hz,
            a_perp_n: self.a_perp_n_hz,
            c13_couplings: self.c13_couplings_hz.clone(),
        }
    }

    pub fn field(&self) -> MagneticField {
        MagneticField {
            b_vector: self.b_field_t,
        }
    }

    /// Resolves the configured system to its line set, either from the
    /// override list or by diagonalizing the Hamiltonian.
    pub fn resolve_lines(&self) -> Result<LineSet> {
        if let Some(freqs) = &self.line_override_hz {
            return LineSet::from_frequencies(freqs);
        }
        let params = self.parameters();
        params.validate()?;
        let h = build_hamiltonian(&params, &self.field())?;
        transition_lines(&h, &params)
    }
}
