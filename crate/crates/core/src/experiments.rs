//! Frequency sweeps, Rabi beating and multi-flip sequences over a set of
//! transition lines.
//!
//! Every line is an independent two-level system starting in `m_s = 0`
//! (spin-up). Ensemble quantities are weighted means of the per-line
//! `m_s = 0` population, mapped through a [`SignalModel`].

use std::collections::BTreeSet;
use std::f64::consts::PI;
use std::fmt::Write as _;
use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::propagator::{analytic_rabi, pulse_unitary, TwoLevelUnitary};
use crate::pulse_shapes::{
    builtin_shape, gaussian, hermite, load_shape_file, rectangular, synthesize_fourier,
    FourierShape, PulseEnvelope, BUILTIN_SHAPES, DEFAULT_SLICES,
};
use crate::spin_model::{detuned_lines, LineSet};

/// Linear map from mean `m_s = 0` population to a detected signal.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SignalModel {
    pub contrast: f64,
    pub baseline: f64,
}

impl Default for SignalModel {
    fn default() -> Self {
        Self {
            contrast: 1.0,
            baseline: 0.0,
        }
    }
}

impl SignalModel {
    pub fn new(contrast: f64, baseline: f64) -> Result<Self> {
        let m = Self { contrast, baseline };
        m.validate()?;
        Ok(m)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.contrast > 0.0 && self.contrast <= 1.0) {
            return Err(Error::InvalidInput(format!(
                "contrast must lie in (0, 1], got {}",
                self.contrast
            )));
        }
        if self.baseline.is_nan() || self.baseline < 0.0 || self.baseline + self.contrast > 1.0 + 1e-9 {
            return Err(Error::InvalidInput(format!(
                "baseline {} with contrast {} leaves [0, 1]",
                self.baseline, self.contrast
            )));
        }
        Ok(())
    }

    pub fn signal(&self, population: f64) -> f64 {
        self.baseline + self.contrast * population
    }
}

/// Recipe for an envelope, resolved independently of the carrier.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PulseSpec {
    Rectangular {
        duration: f64,
        #[serde(default = "pi")]
        flip_angle: f64,
    },
    Fourier {
        shape: FourierShape,
        duration: f64,
        #[serde(default = "default_slices")]
        n_slices: usize,
        #[serde(default = "pi")]
        flip_angle: f64,
    },
    /// A coefficient set shipped with the crate, see [`BUILTIN_SHAPES`].
    Builtin {
        name: String,
        duration: f64,
        #[serde(default = "default_slices")]
        n_slices: usize,
        #[serde(default = "pi")]
        flip_angle: f64,
    },
    FourierFile {
        path: PathBuf,
        duration: f64,
        #[serde(default = "default_slices")]
        n_slices: usize,
        #[serde(default = "pi")]
        flip_angle: f64,
    },
    Gaussian {
        duration: f64,
        truncation: f64,
        #[serde(default = "default_slices")]
        n_slices: usize,
        #[serde(default = "pi")]
        flip_angle: f64,
    },
    Hermite {
        duration: f64,
        quadratic_coefficient: f64,
        #[serde(default = "default_slices")]
        n_slices: usize,
        #[serde(default = "pi")]
        flip_angle: f64,
    },
}

fn pi() -> f64 {
    PI
}

fn default_slices() -> usize {
    DEFAULT_SLICES
}

impl PulseSpec {
    pub fn build(&self) -> Result<PulseEnvelope> {
        match self {
            PulseSpec::Rectangular {
                duration,
                flip_angle,
            } => rectangular(*duration, *flip_angle),
            PulseSpec::Fourier {
                shape,
                duration,
                n_slices,
                flip_angle,
            } => synthesize_fourier(shape, *duration, *n_slices, *flip_angle),
            PulseSpec::Builtin {
                name,
                duration,
                n_slices,
                flip_angle,
            } => {
                let shape = builtin_shape(name).ok_or_else(|| {
                    Error::InvalidInput(format!(
                        "unknown builtin shape '{name}', expected one of {BUILTIN_SHAPES:?}"
                    ))
                })?;
                synthesize_fourier(&shape, *duration, *n_slices, *flip_angle)
            }
            PulseSpec::FourierFile {
                path,
                duration,
                n_slices,
                flip_angle,
            } => synthesize_fourier(&load_shape_file(path)?, *duration, *n_slices, *flip_angle),
            PulseSpec::Gaussian {
                duration,
                truncation,
                n_slices,
                flip_angle,
            } => gaussian(*duration, *flip_angle, *truncation, *n_slices),
            PulseSpec::Hermite {
                duration,
                quadratic_coefficient,
                n_slices,
                flip_angle,
            } => hermite(*duration, *flip_angle, *quadratic_coefficient, *n_slices),
        }
    }

    /// The same recipe stretched to a new duration.
    pub fn with_duration(&self, new_duration: f64) -> PulseSpec {
        let mut out = self.clone();
        match &mut out {
            PulseSpec::Rectangular { duration, .. }
            | PulseSpec::Fourier { duration, .. }
            | PulseSpec::Builtin { duration, .. }
            | PulseSpec::FourierFile { duration, .. }
            | PulseSpec::Gaussian { duration, .. }
            | PulseSpec::Hermite { duration, .. } => *duration = new_duration,
        }
        out
    }

    pub fn duration(&self) -> f64 {
        match self {
            PulseSpec::Rectangular { duration, .. }
            | PulseSpec::Fourier { duration, .. }
            | PulseSpec::Builtin { duration, .. }
            | PulseSpec::FourierFile { duration, .. }
            | PulseSpec::Gaussian { duration, .. }
            | PulseSpec::Hermite { duration, .. } => *duration,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepResult {
    pub carriers: Vec<f64>,
    pub signal: Vec<f64>,
}

impl SweepResult {
    /// CSV with header `carrier_hz,signal`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("carrier_hz,signal\n");
        for (c, s) in self.carriers.iter().zip(&self.signal) {
            let _ = writeln!(out, "{c:e},{s:e}");
        }
        out
    }
}

/// `m_s = 0` population of a line after `u`, starting from spin-up.
fn up_population(u: &TwoLevelUnitary) -> f64 {
    u.0[0][0].norm_sqr()
}

/// Weighted mean population over all lines after one envelope at `carrier`.
pub fn mean_population(envelope: &PulseEnvelope, lines: &LineSet, carrier: f64) -> f64 {
    detuned_lines(lines, carrier)
        .iter()
        .map(|l| l.weight * up_population(&pulse_unitary(envelope, l.detuning)))
        .sum()
}

/// Pulsed-ODMR style sweep: one envelope per carrier, all lines propagated
/// from spin-up, populations averaged with line weights.
pub fn frequency_sweep(
    pulse: &PulseSpec,
    lines: &LineSet,
    carriers: &[f64],
    model: &SignalModel,
) -> Result<SweepResult> {
    model.validate()?;
    if carriers.len() < 2 {
        return Err(Error::InvalidInput("a sweep needs at least two carriers".into()));
    }
    if carriers.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::InvalidInput("carriers must be strictly ascending".into()));
    }
    let envelope = pulse.build()?;
    let signal = carriers
        .iter()
        .map(|&c| model.signal(mean_population(&envelope, lines, c)))
        .collect();
    Ok(SweepResult {
        carriers: carriers.to_vec(),
        signal,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RabiTrace {
    pub times: Vec<f64>,
    pub signal: Vec<f64>,
}

impl RabiTrace {
    /// CSV with header `time_s,signal`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("time_s,signal\n");
        for (t, s) in self.times.iter().zip(&self.signal) {
            let _ = writeln!(out, "{t:e},{s:e}");
        }
        out
    }
}

/// Rectangular-drive Rabi trace averaged over all lines at their detunings.
pub fn rabi_beating(
    rabi_amplitude: f64,
    lines: &LineSet,
    carrier: f64,
    times: &[f64],
    model: &SignalModel,
) -> Result<RabiTrace> {
    model.validate()?;
    if times.windows(2).any(|w| w[1] < w[0]) {
        return Err(Error::InvalidInput("times must be ascending".into()));
    }
    let detuned = detuned_lines(lines, carrier);
    let signal = times
        .iter()
        .map(|&t| {
            let p: f64 = detuned
                .iter()
                .map(|l| l.weight * 0.5 * (1.0 + analytic_rabi(rabi_amplitude, l.detuning, t, 1.0)))
                .sum();
            model.signal(p)
        })
        .collect();
    Ok(RabiTrace {
        times: times.to_vec(),
        signal,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MultiFlipResult {
    pub flip_index: Vec<usize>,
    pub selected_population: Vec<f64>,
    pub spectator_population: Vec<f64>,
}

impl MultiFlipResult {
    /// CSV with header `flip,selected_population,spectator_population`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("flip,selected_population,spectator_population\n");
        for i in 0..self.flip_index.len() {
            let _ = writeln!(
                out,
                "{},{:e},{:e}",
                self.flip_index[i], self.selected_population[i], self.spectator_population[i]
            );
        }
        out
    }
}

/// Carrier at the centre of the lines whose labels are in `targets`.
pub fn target_center(lines: &LineSet, targets: &[String]) -> Result<f64> {
    let (lo, hi) = lines
        .lines()
        .iter()
        .filter(|l| targets.contains(&l.label))
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), l| {
            (lo.min(l.frequency), hi.max(l.frequency))
        });
    if lo > hi {
        return Err(Error::InvalidInput("no target lines selected".into()));
    }
    Ok(0.5 * (lo + hi))
}

/// Applies `envelope` up to `n_flips` times, driving at the centre of the
/// target lines, and records target and spectator populations after each
/// application.
///
/// Readout does not disturb the evolution, so flip `k` equals an independent
/// run of `k` pulses from the polarized state.
pub fn multi_flip(
    envelope: &PulseEnvelope,
    lines: &LineSet,
    target_labels: &[String],
    n_flips: usize,
    model: &SignalModel,
) -> Result<MultiFlipResult> {
    model.validate()?;
    if n_flips == 0 {
        return Err(Error::InvalidInput("n_flips must be at least 1".into()));
    }
    let known: BTreeSet<&str> = lines.lines().iter().map(|l| l.label.as_str()).collect();
    let targets: BTreeSet<&str> = target_labels.iter().map(String::as_str).collect();
    if let Some(unknown) = targets.iter().find(|t| !known.contains(*t)) {
        return Err(Error::InvalidInput(format!("unknown line label '{unknown}'")));
    }
    if targets.is_empty() || targets.len() == known.len() {
        return Err(Error::InvalidInput(
            "target labels must be a nonempty strict subset of the lines".into(),
        ));
    }

    let carrier = target_center(lines, target_labels)?;
    let detuned = detuned_lines(lines, carrier);
    let per_line: Vec<(bool, f64, TwoLevelUnitary)> = detuned
        .iter()
        .map(|l| {
            (
                targets.contains(l.label.as_str()),
                l.weight,
                pulse_unitary(envelope, l.detuning),
            )
        })
        .collect();
    let mut accumulated = vec![TwoLevelUnitary::IDENTITY; per_line.len()];

    let mut result = MultiFlipResult {
        flip_index: Vec::with_capacity(n_flips + 1),
        selected_population: Vec::with_capacity(n_flips + 1),
        spectator_population: Vec::with_capacity(n_flips + 1),
    };
    for k in 0..=n_flips {
        if k > 0 {
            for (acc, (_, _, u)) in accumulated.iter_mut().zip(&per_line) {
                *acc = *u * *acc;
            }
        }
        let (mut sel, mut sel_w, mut spec, mut spec_w) = (0.0, 0.0, 0.0, 0.0);
        for (acc, (is_target, w, _)) in accumulated.iter().zip(&per_line) {
            let p = up_population(acc);
            if *is_target {
                sel += w * p;
                sel_w += w;
            } else {
                spec += w * p;
                spec_w += w;
            }
        }
        result.flip_index.push(k);
        result.selected_population.push(model.signal(sel / sel_w));
        result.spectator_population.push(model.signal(spec / spec_w));
    }
    Ok(result)
}

/// `|selected[k] − selected[k−1]|`, the population change produced by flip `k`.
pub fn flip_amplitude(result: &MultiFlipResult, k: usize) -> Result<f64> {
    if k == 0 || k >= result.selected_population.len() {
        return Err(Error::InvalidInput(format!(
            "flip index {k} outside 1..={}",
            result.selected_population.len().saturating_sub(1)
        )));
    }
    Ok((result.selected_population[k] - result.selected_population[k - 1]).abs())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimescaleCalibration {
    pub duration: f64,
    pub infidelity: f64,
    /// `(duration, infidelity)` for every candidate, in input order.
    pub scan: Vec<(f64, f64)>,
}

/// Mean squared deviation of every line's spin-up population from the ideal
/// multi-flip pattern (targets alternate 1, 0, 1, ...; spectators stay at 1),
/// weighted by line weight and averaged over flips `1..=n_flips`.
pub fn multi_flip_infidelity(
    envelope: &PulseEnvelope,
    lines: &LineSet,
    target_labels: &[String],
    n_flips: usize,
) -> Result<f64> {
    if n_flips == 0 {
        return Err(Error::InvalidInput("n_flips must be at least 1".into()));
    }
    let carrier = target_center(lines, target_labels)?;
    let mut total = 0.0;
    for line in detuned_lines(lines, carrier) {
        let is_target = target_labels.contains(&line.label);
        let u = pulse_unitary(envelope, line.detuning);
        let mut acc = TwoLevelUnitary::IDENTITY;
        for k in 1..=n_flips {
            acc = u * acc;
            let ideal = if is_target && k % 2 == 1 { 0.0 } else { 1.0 };
            total += line.weight * (up_population(&acc) - ideal).powi(2);
        }
    }
    Ok(total / n_flips as f64)
}

/// Picks the duration that best sustains a multi-flip sequence, the
/// simulated counterpart of calibrating the pulse timescale on the bench.
pub fn calibrate_timescale(
    pulse: &PulseSpec,
    lines: &LineSet,
    target_labels: &[String],
    n_flips: usize,
    durations: &[f64],
) -> Result<TimescaleCalibration> {
    if durations.is_empty() {
        return Err(Error::InvalidInput("no candidate durations".into()));
    }
    let mut scan = Vec::with_capacity(durations.len());
    for &d in durations {
        let envelope = pulse.with_duration(d).build()?;
        scan.push((d, multi_flip_infidelity(&envelope, lines, target_labels, n_flips)?));
    }
    let &(duration, infidelity) = scan
        .iter()
        .min_by(|a, b| a.1.total_cmp(&b.1))
        .expect("nonempty scan");
    Ok(TimescaleCalibration {
        duration,
        infidelity,
        scan,
    })
}

/// Width of the inverted band: distance between the outermost `mz = 0`
/// crossings of the single-line profile, located by bisection.
pub fn inversion_full_width(envelope: &PulseEnvelope, search_limit_hz: f64, grid: usize) -> Result<f64> {
    let mz = |d: f64| pulse_unitary(envelope, d).from_spin_up().mz;
    let edge = |sign: f64| -> Result<f64> {
        let step = search_limit_hz / grid as f64;
        let mut previous: Option<f64> = None;
        let mut crossing = None;
        for i in 0..=grid {
            let d = sign * step * i as f64;
            if mz(d) < 0.0 {
                previous = Some(d);
            } else if let Some(inside) = previous.take() {
                crossing = Some((inside, d));
            }
        }
        let (mut a, mut b) = crossing.ok_or_else(|| {
            Error::NumericalFailure("no mz = 0 crossing inside the search window".into())
        })?;
        for _ in 0..80 {
            let m = 0.5 * (a + b);
            if mz(m) < 0.0 {
                a = m;
            } else {
                b = m;
            }
        }
        Ok(0.5 * (a + b))
    };
    if mz(0.0) >= 0.0 {
        return Err(Error::NumericalFailure("envelope does not invert on resonance".into()));
    }
    Ok(edge(1.0)? - edge(-1.0)?)
}
