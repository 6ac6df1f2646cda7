//! Time-sliced drive envelopes.
//!
//! Every envelope is piecewise constant: a list of slices, each with a
//! duration, a Rabi amplitude in rad/s and a carrier phase. Amplitude-modulated
//! shapes keep the phase at zero and encode a phase of π as a negative
//! amplitude, so a single mixer channel is enough to play them.
//!
//! All synthesizers normalize the envelope so that the discrete area
//! `Σ amplitude × duration` equals the requested flip angle.

use std::f64::consts::PI;
use std::fs;
use std::io::ErrorKind;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{ensure_finite, Error, Result};

/// Default number of slices used by the shaped-pulse synthesizers.
pub const DEFAULT_SLICES: usize = 256;
/// Smallest slice count accepted by [`synthesize_fourier`].
pub const MIN_FOURIER_SLICES: usize = 32;
/// Largest number of harmonics a [`FourierShape`] may carry.
pub const MAX_HARMONICS: usize = 64;

/// One piecewise-constant segment of a drive envelope.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Slice {
    /// Segment length in seconds.
    pub duration: f64,
    /// Rabi amplitude in rad/s. Negative values encode a carrier phase of π.
    pub rabi_amplitude: f64,
    /// Carrier phase in radians.
    pub phase: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PulseEnvelope {
    slices: Vec<Slice>,
    total_duration: f64,
}

impl PulseEnvelope {
    pub fn new(slices: Vec<Slice>) -> Result<Self> {
        if slices.is_empty() {
            return Err(Error::InvalidInput("envelope needs at least one slice".into()));
        }
        for (i, s) in slices.iter().enumerate() {
            ensure_finite("slice duration", s.duration)?;
            ensure_finite("slice amplitude", s.rabi_amplitude)?;
            ensure_finite("slice phase", s.phase)?;
            if s.duration <= 0.0 {
                return Err(Error::InvalidInput(format!(
                    "slice {i} has non-positive duration {}",
                    s.duration
                )));
            }
        }
        let total_duration = slices.iter().map(|s| s.duration).sum();
        Ok(Self {
            slices,
            total_duration,
        })
    }

    /// Builds an envelope of equal-length slices with zero phase.
    pub fn from_amplitudes(duration: f64, amplitudes: &[f64]) -> Result<Self> {
        let dt = duration / amplitudes.len() as f64;
        Self::new(
            amplitudes
                .iter()
                .map(|&a| Slice {
                    duration: dt,
                    rabi_amplitude: a,
                    phase: 0.0,
                })
                .collect(),
        )
    }

    pub fn slices(&self) -> &[Slice] {
        &self.slices
    }

    pub fn total_duration(&self) -> f64 {
        self.total_duration
    }

    pub fn len(&self) -> usize {
        self.slices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.slices.is_empty()
    }

    /// On-resonance rotation angle `Σ amplitude × duration` (radians).
    pub fn area(&self) -> f64 {
        self.slices.iter().map(|s| s.rabi_amplitude * s.duration).sum()
    }

    pub fn peak_amplitude(&self) -> f64 {
        self.slices
            .iter()
            .map(|s| s.rabi_amplitude.abs())
            .fold(0.0, f64::max)
    }

    /// Same envelope with every amplitude multiplied by `factor`.
    pub fn scaled(&self, factor: f64) -> Self {
        Self {
            slices: self
                .slices
                .iter()
                .map(|s| Slice {
                    rabi_amplitude: s.rabi_amplitude * factor,
                    ..*s
                })
                .collect(),
            total_duration: self.total_duration,
        }
    }
}

/// Fourier-series amplitude modulation
/// `a0 + Σ an·cos(2πnt/T) + bn·sin(2πnt/T)` over one period `T`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FourierShape {
    pub name: String,
    pub a0: f64,
    pub an: Vec<f64>,
    pub bn: Vec<f64>,
}

impl FourierShape {
    pub fn new(name: impl Into<String>, a0: f64, an: Vec<f64>, bn: Vec<f64>) -> Result<Self> {
        let shape = Self {
            name: name.into(),
            a0,
            an,
            bn,
        };
        shape.validate()?;
        Ok(shape)
    }

    /// A single constant term; synthesizes to a rectangular pulse.
    pub fn constant(name: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            a0: 1.0,
            an: Vec::new(),
            bn: Vec::new(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.an.len() != self.bn.len() {
            return Err(Error::InvalidInput(format!(
                "shape '{}': {} cosine vs {} sine coefficients",
                self.name,
                self.an.len(),
                self.bn.len()
            )));
        }
        if self.an.len() > MAX_HARMONICS {
            return Err(Error::InvalidInput(format!(
                "shape '{}': {} harmonics exceeds the limit of {MAX_HARMONICS}",
                self.name,
                self.an.len()
            )));
        }
        ensure_finite("a0", self.a0)?;
        for &c in self.an.iter().chain(&self.bn) {
            ensure_finite("Fourier coefficient", c)?;
        }
        Ok(())
    }

    pub fn harmonics(&self) -> usize {
        self.an.len()
    }

    pub fn is_symmetric(&self) -> bool {
        self.bn.iter().all(|&b| b == 0.0)
    }

    /// Unnormalized modulation value at time `t` within a period `period`.
    pub fn value_at(&self, t: f64, period: f64) -> f64 {
        let w = 2.0 * PI * t / period;
        self.an
            .iter()
            .zip(&self.bn)
            .enumerate()
            .fold(self.a0, |acc, (i, (&a, &b))| {
                let n = (i + 1) as f64;
                acc + a * (n * w).cos() + b * (n * w).sin()
            })
    }

    /// The shape played backwards in time: sine terms change sign.
    pub fn time_reversed(&self) -> Self {
        Self {
            name: format!("{}-reversed", self.name),
            a0: self.a0,
            an: self.an.clone(),
            bn: self.bn.iter().map(|b| -b).collect(),
        }
    }
}

fn check_duration(duration: f64) -> Result<()> {
    ensure_finite("duration", duration)?;
    if duration <= 0.0 {
        return Err(Error::InvalidInput(format!(
            "duration must be positive, got {duration}"
        )));
    }
    Ok(())
}

fn slice_midpoints(duration: f64, n_slices: usize) -> impl Iterator<Item = f64> {
    let dt = duration / n_slices as f64;
    (0..n_slices).map(move |k| (k as f64 + 0.5) * dt)
}

/// Scales a sampled profile so its discrete area equals `flip_angle`.
fn normalized_envelope(duration: f64, samples: Vec<f64>, flip_angle: f64) -> Result<PulseEnvelope> {
    let dt = duration / samples.len() as f64;
    let area: f64 = samples.iter().sum::<f64>() * dt;
    if area == 0.0 || !area.is_finite() {
        return Err(Error::NormalizationImpossible(format!(
            "sampled envelope has area {area}"
        )));
    }
    let scale = flip_angle / area;
    let amplitudes: Vec<f64> = samples.into_iter().map(|s| s * scale).collect();
    PulseEnvelope::from_amplitudes(duration, &amplitudes)
}

/// Constant-amplitude pulse with `flip_angle / duration` rad/s.
pub fn rectangular(duration: f64, flip_angle: f64) -> Result<PulseEnvelope> {
    check_duration(duration)?;
    ensure_finite("flip angle", flip_angle)?;
    PulseEnvelope::new(vec![Slice {
        duration,
        rabi_amplitude: flip_angle / duration,
        phase: 0.0,
    }])
}

/// Samples a Fourier shape at slice midpoints over one period equal to
/// `duration`.
///
/// The peak scale is `flip_angle / (a0 · duration)`. Midpoint sampling makes
/// every harmonic below `n_slices` sum to zero exactly, so the envelope area
/// is `flip_angle` regardless of the harmonic content.
pub fn synthesize_fourier(
    shape: &FourierShape,
    duration: f64,
    n_slices: usize,
    flip_angle: f64,
) -> Result<PulseEnvelope> {
    shape.validate()?;
    check_duration(duration)?;
    ensure_finite("flip angle", flip_angle)?;
    if n_slices < MIN_FOURIER_SLICES {
        return Err(Error::InvalidInput(format!(
            "n_slices must be at least {MIN_FOURIER_SLICES}, got {n_slices}"
        )));
    }
    if n_slices <= shape.harmonics() {
        return Err(Error::InvalidInput(format!(
            "n_slices ({n_slices}) must exceed the harmonic count ({})",
            shape.harmonics()
        )));
    }
    if shape.a0 == 0.0 {
        return Err(Error::NormalizationImpossible(format!(
            "shape '{}' has a0 = 0",
            shape.name
        )));
    }
    let omega1 = flip_angle / (shape.a0 * duration);
    let amplitudes: Vec<f64> = slice_midpoints(duration, n_slices)
        .map(|t| omega1 * shape.value_at(t, duration))
        .collect();
    PulseEnvelope::from_amplitudes(duration, &amplitudes)
}

/// Gaussian envelope centred on the pulse, truncated so the first and last
/// instants sit at `truncation × peak`.
pub fn gaussian(
    duration: f64,
    flip_angle: f64,
    truncation: f64,
    n_slices: usize,
) -> Result<PulseEnvelope> {
    check_duration(duration)?;
    ensure_finite("flip angle", flip_angle)?;
    if !(truncation > 0.0 && truncation <= 1.0) {
        return Err(Error::InvalidInput(format!(
            "truncation must lie in (0, 1], got {truncation}"
        )));
    }
    if n_slices == 0 {
        return Err(Error::InvalidInput("n_slices must be positive".into()));
    }
    let half = duration / 2.0;
    // exp(-half²/(2σ²)) = truncation; truncation = 1 is the flat limit.
    let inv_two_sigma_sq = if truncation == 1.0 {
        0.0
    } else {
        -truncation.ln() / (half * half)
    };
    let samples = slice_midpoints(duration, n_slices)
        .map(|t| (-(t - half).powi(2) * inv_two_sigma_sq).exp())
        .collect();
    normalized_envelope(duration, samples, flip_angle)
}

/// Half-range of the Hermite abscissa: ±3σ of `exp(-x²)`.
pub const HERMITE_HALF_RANGE: f64 = 3.0 * std::f64::consts::FRAC_1_SQRT_2;

/// Hermite envelope `(1 − c·x²)·exp(−x²)` with `x` spanning ±3σ over the
/// pulse. `c = 0` is the Gaussian with truncation `exp(−4.5)`.
pub fn hermite(
    duration: f64,
    flip_angle: f64,
    quadratic_coefficient: f64,
    n_slices: usize,
) -> Result<PulseEnvelope> {
    check_duration(duration)?;
    ensure_finite("flip angle", flip_angle)?;
    ensure_finite("quadratic coefficient", quadratic_coefficient)?;
    if n_slices == 0 {
        return Err(Error::InvalidInput("n_slices must be positive".into()));
    }
    let half = duration / 2.0;
    let samples = slice_midpoints(duration, n_slices)
        .map(|t| {
            let x = (t - half) / half * HERMITE_HALF_RANGE;
            (1.0 - quadratic_coefficient * x * x) * (-x * x).exp()
        })
        .collect();
    normalized_envelope(duration, samples, flip_angle)
}

/// On-disk coefficient file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShapeFile {
    pub name: String,
    #[serde(default)]
    pub inversion: bool,
    pub a0: f64,
    #[serde(default)]
    pub an: Vec<f64>,
    #[serde(default)]
    pub bn: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub provenance: Option<String>,
}

impl ShapeFile {
    pub fn from_shape(shape: &FourierShape, inversion: bool, provenance: Option<String>) -> Self {
        Self {
            name: shape.name.clone(),
            inversion,
            a0: shape.a0,
            an: shape.an.clone(),
            bn: shape.bn.clone(),
            provenance,
        }
    }

    /// Converts to a [`FourierShape`]. A shorter coefficient list is padded
    /// with zeros, so `"bn": []` declares a symmetric shape.
    pub fn into_shape(self) -> Result<FourierShape> {
        if self.inversion && self.a0 == 0.0 {
            return Err(Error::NormalizationImpossible(format!(
                "inversion shape '{}' has a0 = 0",
                self.name
            )));
        }
        let n = self.an.len().max(self.bn.len());
        let mut an = self.an;
        let mut bn = self.bn;
        an.resize(n, 0.0);
        bn.resize(n, 0.0);
        FourierShape::new(self.name, self.a0, an, bn)
    }
}

/// Names accepted by [`builtin_shape`].
pub const BUILTIN_SHAPES: &[&str] = &["reburp180"];

const REBURP180_JSON: &str = include_str!("../shapes/reburp180.json");

/// Coefficient sets shipped inside the binary.
pub fn builtin_shape(name: &str) -> Option<FourierShape> {
    let text = match name {
        "reburp180" => REBURP180_JSON,
        _ => return None,
    };
    let file: ShapeFile = serde_json::from_str(text).expect("shipped shape file parses");
    Some(file.into_shape().expect("shipped shape file is valid"))
}

pub fn load_shape_file(path: impl AsRef<Path>) -> Result<FourierShape> {
    let path = path.as_ref();
    let text = match fs::read_to_string(path) {
        Ok(t) => t,
        Err(e) if e.kind() == ErrorKind::NotFound => return Err(Error::NotFound(path.into())),
        Err(source) => {
            return Err(Error::Io {
                path: path.into(),
                source,
            })
        }
    };
    let file: ShapeFile = serde_json::from_str(&text).map_err(|e| Error::Config {
        path: path.into(),
        field: format!("line {} column {}", e.line(), e.column()),
        message: e.to_string(),
    })?;
    file.into_shape().map_err(|e| match e {
        Error::NormalizationImpossible(_) => e,
        other => Error::Config {
            path: path.into(),
            field: "coefficients".into(),
            message: other.to_string(),
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rel(a: f64, b: f64) -> f64 {
        (a - b).abs() / b.abs().max(1e-300)
    }

    #[test]
    fn rectangular_amplitude_is_flip_over_duration() {
        let env = rectangular(100e-9, PI).unwrap();
        assert_eq!(env.len(), 1);
        assert!(rel(env.slices()[0].rabi_amplitude, PI / 100e-9) < 1e-15);
        assert!(rel(env.slices()[0].rabi_amplitude, 3.1416e7) < 1e-4);
        assert_eq!(env.slices()[0].phase, 0.0);
    }

    #[test]
    fn rectangular_rejects_non_positive_duration() {
        assert!(matches!(rectangular(0.0, PI), Err(Error::InvalidInput(_))));
        assert!(matches!(rectangular(-1e-9, PI), Err(Error::InvalidInput(_))));
    }

    #[test]
    fn rectangular_amplitudes_scale_inversely_with_duration() {
        let a110 = rectangular(110e-9, PI).unwrap().slices()[0].rabi_amplitude;
        let a90 = rectangular(90e-9, PI).unwrap().slices()[0].rabi_amplitude;
        assert!(rel(a110 / a90, 90.0 / 110.0) < 1e-14);
    }

    #[test]
    fn constant_fourier_shape_matches_rectangular() {
        let tau = 320e-9;
        let env = synthesize_fourier(&FourierShape::constant("flat"), tau, 64, PI).unwrap();
        let rect = rectangular(tau, PI).unwrap().slices()[0].rabi_amplitude;
        for s in env.slices() {
            assert!(rel(s.rabi_amplitude, rect) < 1e-14);
        }
        assert!(rel(env.total_duration(), tau) < 1e-15);
    }

    #[test]
    fn fourier_area_equals_flip_angle() {
        let shape = FourierShape::new(
            "test",
            0.4,
            vec![-1.1, 0.9, -0.3, 0.2],
            vec![0.1, -0.05, 0.0, 0.3],
        )
        .unwrap();
        for &n in &[32usize, 64, 256, 257] {
            let env = synthesize_fourier(&shape, 800e-9, n, PI).unwrap();
            assert!(rel(env.area(), PI) < 1e-9, "n = {n}");
        }
    }

    #[test]
    fn fourier_rejects_zero_a0_and_few_slices() {
        let zero = FourierShape::new("z", 0.0, vec![1.0], vec![0.0]).unwrap();
        assert!(matches!(
            synthesize_fourier(&zero, 1e-6, 64, PI),
            Err(Error::NormalizationImpossible(_))
        ));
        let ok = FourierShape::constant("c");
        assert!(matches!(
            synthesize_fourier(&ok, 1e-6, 16, PI),
            Err(Error::InvalidInput(_))
        ));
    }

    #[test]
    fn symmetric_shape_gives_symmetric_envelope() {
        let shape = FourierShape::new("sym", 0.5, vec![-1.0, 0.7, -0.2], vec![0.0; 3]).unwrap();
        let env = synthesize_fourier(&shape, 1e-6, 256, PI).unwrap();
        let a: Vec<f64> = env.slices().iter().map(|s| s.rabi_amplitude).collect();
        let peak = env.peak_amplitude();
        for k in 0..a.len() / 2 {
            assert!((a[k] - a[a.len() - 1 - k]).abs() <= 1e-12 * peak);
        }
    }

    #[test]
    fn halving_duration_doubles_amplitudes() {
        let shape = FourierShape::new("s", 0.5, vec![-1.0, 0.7], vec![0.0, 0.1]).unwrap();
        let long = synthesize_fourier(&shape, 1.0e-6, 256, PI).unwrap();
        let short = synthesize_fourier(&shape, 0.5e-6, 256, PI).unwrap();
        for (l, s) in long.slices().iter().zip(short.slices()) {
            assert!(rel(s.rabi_amplitude, 2.0 * l.rabi_amplitude) < 1e-14);
        }
    }

    #[test]
    fn gaussian_flat_limit_and_normalization() {
        let tau = 500e-9;
        let flat = gaussian(tau, PI, 1.0, 128).unwrap();
        let rect = PI / tau;
        for s in flat.slices() {
            assert!(rel(s.rabi_amplitude, rect) < 1e-12);
        }
        for &tr in &[0.01, 0.1, 0.5, 0.9] {
            let env = gaussian(tau, PI / 2.0, tr, 256).unwrap();
            assert!(rel(env.area(), PI / 2.0) < 1e-9);
        }
    }

    #[test]
    fn gaussian_edges_follow_truncation() {
        // Edge slices sit half a slice inside the pulse, so compare with a
        // fine slicing against the analytic edge ratio.
        let env = gaussian(1e-6, PI, 0.1, 4096).unwrap();
        let ratio = env.slices()[0].rabi_amplitude / env.peak_amplitude();
        assert!((ratio - 0.1).abs() < 1e-3, "ratio = {ratio}");
    }

    #[test]
    fn narrow_gaussian_has_higher_peak_than_rectangular() {
        let tau = 1e-6;
        let g = gaussian(tau, PI, 0.01, 256).unwrap();
        assert!(g.peak_amplitude() > PI / tau);
    }

    #[test]
    fn gaussian_rejects_bad_truncation() {
        assert!(gaussian(1e-6, PI, 0.0, 64).is_err());
        assert!(gaussian(1e-6, PI, 1.5, 64).is_err());
        assert!(gaussian(1e-6, PI, f64::NAN, 64).is_err());
    }

    #[test]
    fn hermite_reduces_to_gaussian() {
        let h = hermite(1e-6, PI, 0.0, 256).unwrap();
        let g = gaussian(1e-6, PI, (-4.5f64).exp(), 256).unwrap();
        for (a, b) in h.slices().iter().zip(g.slices()) {
            assert!(rel(a.rabi_amplitude, b.rabi_amplitude) < 1e-10);
        }
        let h180 = hermite(1e-6, PI, 0.956, 256).unwrap();
        assert!(rel(h180.area(), PI) < 1e-9);
    }

    #[test]
    fn shape_file_roundtrip_and_padding() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("s.json");
        fs::write(&path, r#"{"name":"t","a0":0.5,"an":[-1.0],"bn":[]}"#).unwrap();
        let shape = load_shape_file(&path).unwrap();
        assert_eq!(shape.a0, 0.5);
        assert_eq!(shape.an, vec![-1.0]);
        assert_eq!(shape.bn, vec![0.0]);
    }

    #[test]
    fn shape_file_errors() {
        let dir = tempfile::tempdir().unwrap();
        let missing = dir.path().join("missing.json");
        assert!(matches!(load_shape_file(&missing), Err(Error::NotFound(_))));

        let zero = dir.path().join("zero.json");
        fs::write(&zero, r#"{"name":"z","inversion":true,"a0":0.0,"an":[1.0]}"#).unwrap();
        assert!(matches!(
            load_shape_file(&zero),
            Err(Error::NormalizationImpossible(_))
        ));

        let bad = dir.path().join("bad.json");
        fs::write(&bad, "{\n \"name\": \"b\",\n \"a0\": nope }").unwrap();
        match load_shape_file(&bad) {
            Err(Error::Config { field, .. }) => assert!(field.contains("line 3"), "{field}"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn builtin_reburp_is_symmetric_and_loads() {
        let shape = builtin_shape("reburp180").unwrap();
        assert!(shape.is_symmetric());
        assert_eq!(shape.harmonics(), 15);
        assert!(builtin_shape("burp9000").is_none());
        let env = synthesize_fourier(&shape, 800e-9, DEFAULT_SLICES, PI).unwrap();
        assert!((env.area() - PI).abs() < 1e-9 * PI);
    }
}
