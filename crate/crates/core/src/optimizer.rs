//! Design of band-selective inversion shapes from scratch.
//!
//! Shapes are Fourier series synthesized at unit duration and normalized to a
//! π flip; the objective compares the resulting excitation profile against an
//! inverted passband and an untouched stopband, both expressed in units of
//! `1/T_p` so one design serves every timescale. A Metropolis annealer
//! explores the coefficients and a finite-difference gradient descent
//! polishes the result.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::propagator::{linspace, pulse_unitary};
use crate::pulse_shapes::{synthesize_fourier, FourierShape, MAX_HARMONICS};

/// Slices used for every objective evaluation.
pub const OBJECTIVE_SLICES: usize = 256;
/// Cost assigned to shapes that cannot be normalized (`a0 = 0`).
pub const PENALTY_COST: f64 = 1e3;
/// Central-difference step for [`refine`].
pub const GRADIENT_STEP: f64 = 1e-5;
/// Maximum number of step halvings in the line search.
pub const MAX_HALVINGS: usize = 20;
/// Refinement stops once an accepted step improves the cost by less than this.
pub const MIN_DECREASE: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ObjectiveSpec {
    /// Half-width of the inverted band, units of `1/T_p`.
    pub passband_halfwidth: f64,
    /// Inner edge of the untouched band, units of `1/T_p`.
    pub stopband_start: f64,
    /// Outer edge of the untouched band, units of `1/T_p`.
    pub stopband_end: f64,
    pub passband_target_mz: f64,
    pub stopband_target_mz: f64,
    pub grid_points_per_band: usize,
    pub n_harmonics: usize,
    /// Restrict the search to cosine terms (time-symmetric shapes).
    pub symmetric: bool,
}

impl Default for ObjectiveSpec {
    fn default() -> Self {
        Self {
            passband_halfwidth: 1.5,
            stopband_start: 3.5,
            stopband_end: 8.0,
            passband_target_mz: -1.0,
            stopband_target_mz: 1.0,
            grid_points_per_band: 24,
            n_harmonics: 12,
            symmetric: true,
        }
    }
}

impl ObjectiveSpec {
    pub fn validate(&self) -> Result<()> {
        let ok = self.passband_halfwidth > 0.0
            && self.passband_halfwidth < self.stopband_start
            && self.stopband_start < self.stopband_end
            && self.stopband_end.is_finite();
        if !ok {
            return Err(Error::InvalidInput(format!(
                "band edges must satisfy 0 < {} < {} < {}",
                self.passband_halfwidth, self.stopband_start, self.stopband_end
            )));
        }
        if self.n_harmonics > MAX_HARMONICS {
            return Err(Error::InvalidInput(format!(
                "n_harmonics {} exceeds {MAX_HARMONICS}",
                self.n_harmonics
            )));
        }
        if self.grid_points_per_band < 2 {
            return Err(Error::InvalidInput("grid_points_per_band must be at least 2".into()));
        }
        Ok(())
    }

    /// Passband grid, symmetric about zero.
    pub fn passband_grid(&self) -> Vec<f64> {
        linspace(
            -self.passband_halfwidth,
            self.passband_halfwidth,
            self.grid_points_per_band,
        )
    }

    /// Stopband grid: `grid_points_per_band` points on each side.
    pub fn stopband_grid(&self) -> Vec<f64> {
        let positive = linspace(self.stopband_start, self.stopband_end, self.grid_points_per_band);
        positive
            .iter()
            .rev()
            .map(|x| -x)
            .chain(positive.iter().copied())
            .collect()
    }

    /// Number of free coefficients searched.
    pub fn dimension(&self) -> usize {
        if self.symmetric {
            1 + self.n_harmonics
        } else {
            1 + 2 * self.n_harmonics
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnnealingSchedule {
    pub initial_temperature: f64,
    pub cooling_factor: f64,
    pub steps_per_stage: usize,
    pub stages: usize,
    /// Proposal width per coefficient; a single entry applies to all.
    pub proposal_stddev: Vec<f64>,
    pub rng_seed: u64,
}

impl Default for AnnealingSchedule {
    fn default() -> Self {
        Self {
            initial_temperature: 0.3,
            cooling_factor: 0.92,
            steps_per_stage: 500,
            stages: 100,
            proposal_stddev: vec![0.3],
            rng_seed: 0,
        }
    }
}

impl AnnealingSchedule {
    pub fn validate(&self, dimension: usize) -> Result<()> {
        if !(self.cooling_factor > 0.0 && self.cooling_factor < 1.0) {
            return Err(Error::InvalidInput(format!(
                "cooling_factor must lie in (0, 1), got {}",
                self.cooling_factor
            )));
        }
        if self.steps_per_stage == 0 || self.stages == 0 {
            return Err(Error::InvalidInput("stage counts must be at least 1".into()));
        }
        if self.initial_temperature.is_nan() || self.initial_temperature < 0.0 {
            return Err(Error::InvalidInput("initial_temperature must be non-negative".into()));
        }
        if self.proposal_stddev.len() != 1 && self.proposal_stddev.len() != dimension {
            return Err(Error::InvalidInput(format!(
                "proposal_stddev has {} entries, expected 1 or {dimension}",
                self.proposal_stddev.len()
            )));
        }
        if self.proposal_stddev.iter().any(|s| !s.is_finite() || *s < 0.0) {
            return Err(Error::InvalidInput("proposal_stddev must be finite and non-negative".into()));
        }
        Ok(())
    }

    fn stddev(&self, i: usize) -> f64 {
        if self.proposal_stddev.len() == 1 {
            self.proposal_stddev[0]
        } else {
            self.proposal_stddev[i]
        }
    }

    pub fn total_steps(&self) -> usize {
        self.steps_per_stage * self.stages
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizationResult {
    pub shape: FourierShape,
    pub final_cost: f64,
    /// Best cost so far, recorded at the start and after every stage
    /// (annealing) or accepted iteration (refinement).
    pub cost_trace: Vec<f64>,
    pub evaluations: usize,
}

/// Flattens a shape into the optimizer's coordinate vector.
fn to_coordinates(shape: &FourierShape, spec: &ObjectiveSpec) -> Vec<f64> {
    let n = spec.n_harmonics;
    let mut x = Vec::with_capacity(spec.dimension());
    x.push(shape.a0);
    x.extend((0..n).map(|i| shape.an.get(i).copied().unwrap_or(0.0)));
    if !spec.symmetric {
        x.extend((0..n).map(|i| shape.bn.get(i).copied().unwrap_or(0.0)));
    }
    x
}

fn from_coordinates(x: &[f64], spec: &ObjectiveSpec, name: &str) -> FourierShape {
    let n = spec.n_harmonics;
    let an = x[1..1 + n].to_vec();
    let bn = if spec.symmetric {
        vec![0.0; n]
    } else {
        x[1 + n..1 + 2 * n].to_vec()
    };
    FourierShape {
        name: name.to_string(),
        a0: x[0],
        an,
        bn,
    }
}

/// Profile mismatch of a π-normalized shape at unit duration.
///
/// `mean_pass (mz − target)² + mean_stop (mz − target)² + mean_both mxy²`;
/// the transition region is ignored. Unnormalizable shapes cost
/// [`PENALTY_COST`].
pub fn evaluate_objective(shape: &FourierShape, spec: &ObjectiveSpec) -> f64 {
    if shape.a0 == 0.0 || !shape.a0.is_finite() {
        return PENALTY_COST;
    }
    let envelope = match synthesize_fourier(shape, 1.0, OBJECTIVE_SLICES, PI) {
        Ok(e) => e,
        Err(_) => return PENALTY_COST,
    };
    // A constant-phase envelope satisfies σx H(δ) σx = H(−δ), so the profile
    // is even in δ and each band is evaluated on its non-negative half.
    let band = |grid: &[f64], target: f64| -> (f64, f64) {
        let (mut err, mut trans) = (0.0, 0.0);
        let n = grid.len();
        for (i, &x) in grid.iter().enumerate() {
            let mirror = n - 1 - i;
            let weight = match i.cmp(&mirror) {
                std::cmp::Ordering::Less => continue,
                std::cmp::Ordering::Equal => 1.0,
                std::cmp::Ordering::Greater => 2.0,
            };
            let s = pulse_unitary(&envelope, x).from_spin_up();
            err += weight * (s.mz - target).powi(2);
            trans += weight * (s.mx * s.mx + s.my * s.my);
        }
        (err, trans)
    };
    let pass = spec.passband_grid();
    let stop = spec.stopband_grid();
    let (pass_err, pass_t) = band(&pass, spec.passband_target_mz);
    let (stop_err, stop_t) = band(&stop, spec.stopband_target_mz);
    let cost = pass_err / pass.len() as f64
        + stop_err / stop.len() as f64
        + (pass_t + stop_t) / (pass.len() + stop.len()) as f64;
    if cost.is_finite() {
        cost
    } else {
        PENALTY_COST
    }
}

/// Metropolis annealing over the Fourier coefficients, one coordinate per
/// step. Deterministic for a given seed; returns the best shape visited.
pub fn anneal(
    spec: &ObjectiveSpec,
    schedule: &AnnealingSchedule,
    initial: Option<&FourierShape>,
) -> Result<OptimizationResult> {
    spec.validate()?;
    if spec.n_harmonics == 0 {
        return Err(Error::InvalidInput("annealing needs at least one harmonic".into()));
    }
    let dim = spec.dimension();
    schedule.validate(dim)?;
    let start = initial
        .cloned()
        .unwrap_or_else(|| FourierShape::constant("annealed"));
    if start.a0 == 0.0 {
        return Err(Error::NormalizationImpossible(
            "annealing needs a starting shape with a0 != 0".into(),
        ));
    }
    let mut x = to_coordinates(&start, spec);
    let name = if start.name.is_empty() { "annealed" } else { &start.name };
    let cost_of = |x: &[f64]| evaluate_objective(&from_coordinates(x, spec, name), spec);

    let mut rng = ChaCha8Rng::seed_from_u64(schedule.rng_seed);
    let unit = Normal::new(0.0, 1.0).expect("unit normal");
    let mut current = cost_of(&x);
    let mut evaluations = 1;
    let mut best_x = x.clone();
    let mut best = current;
    let mut trace = vec![best];

    let mut temperature = schedule.initial_temperature;
    for _ in 0..schedule.stages {
        for _ in 0..schedule.steps_per_stage {
            // The overall scale is immaterial after area normalization, so
            // a0 stays fixed and only the harmonics move.
            let i = rng.random_range(1..dim);
            let step = schedule.stddev(i) * unit.sample(&mut rng);
            let u: f64 = rng.random();
            let old = x[i];
            x[i] = old + step;
            let proposed = cost_of(&x);
            evaluations += 1;
            let delta = proposed - current;
            let accept = delta < 0.0 || (temperature > 0.0 && u < (-delta / temperature).exp());
            if accept {
                current = proposed;
                if current < best {
                    best = current;
                    best_x.clone_from(&x);
                }
            } else {
                x[i] = old;
            }
        }
        trace.push(best);
        temperature *= schedule.cooling_factor;
    }

    Ok(OptimizationResult {
        shape: from_coordinates(&best_x, spec, name),
        final_cost: best,
        cost_trace: trace,
        evaluations,
    })
}

/// Central finite-difference gradient of the objective.
pub fn numerical_gradient(shape: &FourierShape, spec: &ObjectiveSpec, h: f64) -> Vec<f64> {
    let x = to_coordinates(shape, spec);
    let mut probe = x.clone();
    (0..x.len())
        .map(|i| {
            probe[i] = x[i] + h;
            let up = evaluate_objective(&from_coordinates(&probe, spec, &shape.name), spec);
            probe[i] = x[i] - h;
            let down = evaluate_objective(&from_coordinates(&probe, spec, &shape.name), spec);
            probe[i] = x[i];
            (up - down) / (2.0 * h)
        })
        .collect()
}

/// Gradient descent with a halving line search. The accepted step length is
/// carried to the next iteration and first tried doubled.
pub fn refine(
    shape: &FourierShape,
    spec: &ObjectiveSpec,
    max_iters: usize,
    step: f64,
) -> Result<OptimizationResult> {
    spec.validate()?;
    if !(step > 0.0 && step.is_finite()) {
        return Err(Error::InvalidInput(format!("step must be positive, got {step}")));
    }
    let name = shape.name.clone();
    let mut x = to_coordinates(shape, spec);
    let mut cost = evaluate_objective(&from_coordinates(&x, spec, &name), spec);
    let mut evaluations = 1;
    let mut trace = vec![cost];
    let mut trial_step = step;

    for _ in 0..max_iters {
        let current = from_coordinates(&x, spec, &name);
        let grad = numerical_gradient(&current, spec, GRADIENT_STEP);
        evaluations += 2 * grad.len();
        if grad.iter().all(|g| *g == 0.0) {
            break;
        }
        let mut accepted = None;
        let mut s = trial_step;
        for _ in 0..=MAX_HALVINGS {
            let candidate: Vec<f64> = x.iter().zip(&grad).map(|(xi, gi)| xi - s * gi).collect();
            let c = evaluate_objective(&from_coordinates(&candidate, spec, &name), spec);
            evaluations += 1;
            if c < cost {
                accepted = Some((candidate, c, s));
                break;
            }
            s *= 0.5;
        }
        let Some((candidate, c, s)) = accepted else {
            break;
        };
        let decrease = cost - c;
        x = candidate;
        cost = c;
        trace.push(cost);
        trial_step = 2.0 * s;
        if decrease < MIN_DECREASE {
            break;
        }
    }

    Ok(OptimizationResult {
        shape: from_coordinates(&x, spec, &name),
        final_cost: cost,
        cost_trace: trace,
        evaluations,
    })
}

/// Annealing followed by gradient refinement.
pub fn design(
    spec: &ObjectiveSpec,
    schedule: &AnnealingSchedule,
    initial: Option<&FourierShape>,
    refine_iters: usize,
    refine_step: f64,
) -> Result<OptimizationResult> {
    let annealed = anneal(spec, schedule, initial)?;
    let mut refined = refine(&annealed.shape, spec, refine_iters, refine_step)?;
    let mut trace = annealed.cost_trace;
    trace.extend(refined.cost_trace.into_iter().skip(1));
    refined.cost_trace = trace;
    refined.evaluations += annealed.evaluations;
    Ok(refined)
}

/// Sidecar written next to an optimized shape file.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct OptimizationReport {
    pub spec: ObjectiveSpec,
    pub schedule: Option<AnnealingSchedule>,
    pub refine_iters: usize,
    pub refine_step: f64,
    pub seed: Option<u64>,
    pub final_cost: f64,
    pub evaluations: usize,
    pub cost_trace: Vec<f64>,
}

#[cfg(test)]
mod tests {
    use super::*;

    fn quick_spec() -> ObjectiveSpec {
        ObjectiveSpec {
            grid_points_per_band: 8,
            n_harmonics: 4,
            ..ObjectiveSpec::default()
        }
    }

    #[test]
    fn zero_shape_is_penalized() {
        let spec = ObjectiveSpec::default();
        let zero = FourierShape::new("z", 0.0, vec![0.0; 12], vec![0.0; 12]).unwrap();
        assert_eq!(evaluate_objective(&zero, &spec), PENALTY_COST);
    }

    #[test]
    fn rectangular_has_zero_center_and_positive_stopband() {
        let spec = ObjectiveSpec {
            passband_halfwidth: 1e-9,
            grid_points_per_band: 2,
            ..ObjectiveSpec::default()
        };
        // A passband grid collapsed onto δ = 0 isolates the resonant term.
        let rect = FourierShape::constant("rect");
        let env = synthesize_fourier(&rect, 1.0, OBJECTIVE_SLICES, PI).unwrap();
        let centre = pulse_unitary(&env, 0.0).from_spin_up();
        assert!((centre.mz + 1.0).abs() < 1e-12 && centre.transverse() < 1e-7);
        let stop: f64 = spec
            .stopband_grid()
            .iter()
            .map(|&x| (pulse_unitary(&env, x).from_spin_up().mz - 1.0).powi(2))
            .sum();
        assert!(stop > 0.0);
        assert!(evaluate_objective(&rect, &spec) > 0.0);
    }

    #[test]
    fn spec_validation() {
        let mut s = ObjectiveSpec::default();
        s.stopband_start = 0.5 * s.passband_halfwidth;
        assert!(s.validate().is_err());
        let mut s = ObjectiveSpec::default();
        s.n_harmonics = 65;
        assert!(s.validate().is_err());
        let mut sched = AnnealingSchedule::default();
        sched.cooling_factor = 1.0;
        assert!(sched.validate(13).is_err());
        let sched = AnnealingSchedule { proposal_stddev: vec![0.1; 3], ..AnnealingSchedule::default() };
        assert!(sched.validate(13).is_err());
    }

    #[test]
    fn frozen_anneal_returns_initial_shape() {
        let spec = quick_spec();
        let schedule = AnnealingSchedule {
            initial_temperature: 0.0,
            proposal_stddev: vec![0.0],
            steps_per_stage: 10,
            stages: 3,
            ..AnnealingSchedule::default()
        };
        let start = FourierShape::new("s", 0.8, vec![-0.3, 0.1, 0.0, 0.0], vec![0.0; 4]).unwrap();
        let r = anneal(&spec, &schedule, Some(&start)).unwrap();
        assert_eq!(r.shape, start);
        assert!(r.cost_trace.windows(2).all(|w| w[0] == w[1]));
        assert_eq!(r.evaluations, 31);
    }

    #[test]
    fn anneal_is_deterministic_and_monotone() {
        let spec = quick_spec();
        let schedule = AnnealingSchedule {
            steps_per_stage: 40,
            stages: 5,
            rng_seed: 7,
            ..AnnealingSchedule::default()
        };
        let a = anneal(&spec, &schedule, None).unwrap();
        let b = anneal(&spec, &schedule, None).unwrap();
        assert_eq!(a, b);
        assert!(a.cost_trace.windows(2).all(|w| w[1] <= w[0]));
        assert_eq!(a.final_cost, evaluate_objective(&a.shape, &spec));
    }

    #[test]
    fn refine_never_increases_cost() {
        let spec = quick_spec();
        let start = FourierShape::new("s", 0.6, vec![-0.8, 0.5, -0.2, 0.1], vec![0.0; 4]).unwrap();
        let before = evaluate_objective(&start, &spec);
        let r = refine(&start, &spec, 10, 1.0).unwrap();
        assert!(r.final_cost <= before);
        assert!(r.cost_trace.windows(2).all(|w| w[1] <= w[0]));
        assert_eq!(r.final_cost, evaluate_objective(&r.shape, &spec));
    }

    #[test]
    fn refine_at_optimum_stops_immediately() {
        // One harmonic leaves a single effective coordinate (the overall
        // scale is free), so descent genuinely converges.
        let spec = ObjectiveSpec { n_harmonics: 1, ..quick_spec() };
        let start = FourierShape::new("s", 1.0, vec![-0.5], vec![0.0]).unwrap();
        let polished = refine(&start, &spec, 2000, 1.0).unwrap();
        let again = refine(&polished.shape, &spec, 2000, 1.0).unwrap();
        assert!(again.cost_trace.len() <= 2);
        assert!((again.final_cost - polished.final_cost).abs() <= 1e-10);
    }

    #[test]
    fn gradient_error_shrinks_quadratically() {
        // Richardson check: successive halvings of h cut the difference
        // between gradient estimates by ~4 for a second-order scheme.
        let spec = quick_spec();
        let shape = FourierShape::new("g", 0.7, vec![-0.6, 0.4, -0.1, 0.05], vec![0.0; 4]).unwrap();
        let h = 2e-2;
        let g1 = numerical_gradient(&shape, &spec, h);
        let g2 = numerical_gradient(&shape, &spec, h / 2.0);
        let g3 = numerical_gradient(&shape, &spec, h / 4.0);
        let fine = numerical_gradient(&shape, &spec, GRADIENT_STEP);
        for i in 0..g1.len() {
            let d12 = g1[i] - g2[i];
            let d23 = g2[i] - g3[i];
            if d23.abs() > 1e-9 {
                let ratio = d12 / d23;
                assert!((3.0..5.0).contains(&ratio), "coordinate {i}: ratio {ratio}");
            }
            let extrapolated = g3[i] + (g3[i] - g2[i]) / 3.0;
            assert!((fine[i] - extrapolated).abs() < 1e-6, "coordinate {i}");
        }
    }

    #[test]
    fn half_grid_evaluation_matches_full_profile() {
        use crate::propagator::{excitation_profile, BlochVector};
        let spec = ObjectiveSpec { grid_points_per_band: 7, ..quick_spec() };
        let shape = FourierShape::new("h", 0.7, vec![-0.6, 0.4, -0.1, 0.05], vec![0.0; 4]).unwrap();
        let env = synthesize_fourier(&shape, 1.0, OBJECTIVE_SLICES, PI).unwrap();
        let pass = excitation_profile(&env, &spec.passband_grid(), &BlochVector::UP).unwrap();
        let stop = excitation_profile(&env, &spec.stopband_grid(), &BlochVector::UP).unwrap();
        let mean = |v: Vec<f64>| v.iter().sum::<f64>() / v.len() as f64;
        let full = mean(pass.mz.iter().map(|m| (m + 1.0).powi(2)).collect())
            + mean(stop.mz.iter().map(|m| (m - 1.0).powi(2)).collect())
            + mean(pass.mxy.iter().chain(&stop.mxy).map(|t| t * t).collect());
        assert!((evaluate_objective(&shape, &spec) - full).abs() < 1e-10);
    }

    #[test]
    fn time_reversal_leaves_symmetric_cost_unchanged() {
        let spec = ObjectiveSpec { symmetric: false, ..quick_spec() };
        let shape = FourierShape::new("t", 0.7, vec![-0.6, 0.4, -0.1, 0.05], vec![0.0; 4]).unwrap();
        let a = evaluate_objective(&shape, &spec);
        let b = evaluate_objective(&shape.time_reversed(), &spec);
        assert!((a - b).abs() < 1e-12);
    }

    mod props {
        use super::*;
        use crate::propagator::{excitation_profile, BlochVector};
        use proptest::prelude::*;

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(32))]

            #[test]
            fn cost_dominates_passband_error(
                a0 in 0.2f64..2.0,
                an in proptest::collection::vec(-2.0f64..2.0, 4),
            ) {
                let spec = quick_spec();
                let shape = FourierShape::new("p", a0, an, vec![0.0; 4]).unwrap();
                let cost = evaluate_objective(&shape, &spec);
                let env = synthesize_fourier(&shape, 1.0, OBJECTIVE_SLICES, PI).unwrap();
                let pass = excitation_profile(&env, &spec.passband_grid(), &BlochVector::UP).unwrap();
                let ms = pass.mz.iter().map(|m| (m + 1.0).powi(2)).sum::<f64>() / pass.mz.len() as f64;
                prop_assert!(ms <= cost + 1e-12);
                prop_assert!((0.0..=9.0).contains(&cost));
            }
        }
    }
}
