//! Command-line front end: JSON run configs in, CSV/JSON artifacts out.
//!
//! Every command writes its outputs atomically (temporary file, then rename)
//! and finishes with `run_manifest.json`, which records the fully resolved
//! configuration after command-line overrides.

use std::fs;
use std::io::{ErrorKind, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::error::{Error, Result};
use crate::experiments::{
    calibrate_timescale, frequency_sweep, multi_flip, rabi_beating, target_center, PulseSpec,
    SignalModel,
};
use crate::optimizer::{
    design, refine, AnnealingSchedule, ObjectiveSpec, OptimizationReport,
};
use crate::propagator::{excitation_profile, linspace, BlochVector};
use crate::pulse_shapes::{builtin_shape, load_shape_file, FourierShape, ShapeFile, BUILTIN_SHAPES};
use crate::spin_model::{LineSet, SpinConfig};

#[derive(Debug, Parser)]
#[command(name = "nv-reburp", version, about = "Shaped-pulse simulation and design for NV-center spins")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Resolve the spin system to its transition lines.
    Lines(RunArgs),
    /// Single-line excitation profile of a pulse.
    Profile(RunArgs),
    /// Carrier-frequency sweep over the line set.
    Sweep(RunArgs),
    /// Rectangular-drive Rabi trace over the line set.
    Rabi(RunArgs),
    /// Repeated selective flips of a subset of lines.
    Multiflip(RunArgs),
    /// Design a band-selective inversion shape.
    Optimize(RunArgs),
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Lines(_) => "lines",
            Command::Profile(_) => "profile",
            Command::Sweep(_) => "sweep",
            Command::Rabi(_) => "rabi",
            Command::Multiflip(_) => "multiflip",
            Command::Optimize(_) => "optimize",
        }
    }

    pub fn args(&self) -> &RunArgs {
        match self {
            Command::Lines(a)
            | Command::Profile(a)
            | Command::Sweep(a)
            | Command::Rabi(a)
            | Command::Multiflip(a)
            | Command::Optimize(a) => a,
        }
    }
}

#[derive(Debug, Clone, Args)]
pub struct RunArgs {
    /// JSON run configuration.
    #[arg(long)]
    pub config: PathBuf,
    /// Output directory, created if missing.
    #[arg(long, default_value = "out")]
    pub out: PathBuf,
    /// Overrides the configured RNG seed.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Overrides the pulse slice count.
    #[arg(long)]
    pub slices: Option<usize>,
    /// Overrides the pulse duration, in nanoseconds.
    #[arg(long = "duration-ns")]
    pub duration_ns: Option<f64>,
    /// Replaces the pulse shape: `rectangular`, a builtin name or a shape file.
    #[arg(long)]
    pub shape: Option<String>,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Grid {
    pub start: f64,
    pub end: f64,
    pub points: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProfileSection {
    pub detuning_hz: Grid,
}

/// Carriers are offsets from the centre of `relative_to` (all lines when empty).
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSection {
    pub offset_hz: Grid,
    #[serde(default)]
    pub relative_to: Vec<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RabiSection {
    pub rabi_frequency_hz: f64,
    #[serde(default)]
    pub carrier_offset_hz: f64,
    #[serde(default)]
    pub relative_to: Vec<String>,
    pub time_s: Grid,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MultiFlipSection {
    pub targets: Vec<String>,
    pub n_flips: usize,
    /// Candidate durations in ns; when present the pulse duration is replaced
    /// by the one that best sustains the flip sequence.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub calibrate_ns: Option<Grid>,
}

fn default_true() -> bool {
    true
}
fn default_refine_iters() -> usize {
    100
}
fn default_refine_step() -> f64 {
    1.0
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OptimizeSection {
    #[serde(default)]
    pub objective: ObjectiveSpec,
    #[serde(default)]
    pub schedule: AnnealingSchedule,
    #[serde(default = "default_true")]
    pub anneal: bool,
    #[serde(default = "default_refine_iters")]
    pub refine_iters: usize,
    #[serde(default = "default_refine_step")]
    pub refine_step: f64,
    /// Starting shape: builtin name or shape file path.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub initial: Option<String>,
    #[serde(default = "default_shape_name")]
    pub name: String,
}

fn default_shape_name() -> String {
    "optimized".into()
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    /// Inline spin system.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub spin: Option<SpinConfig>,
    /// Spin system in a separate file, relative to this config.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub spin_file: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pulse: Option<PulseSpec>,
    #[serde(default)]
    pub signal: SignalModel,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub profile: Option<ProfileSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sweep: Option<SweepSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rabi: Option<RabiSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub multiflip: Option<MultiFlipSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub optimize: Option<OptimizeSection>,
}

fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| match e.kind() {
        ErrorKind::NotFound => Error::NotFound(path.into()),
        _ => Error::Io {
            path: path.into(),
            source: e,
        },
    })
}

fn parse_json<T: for<'de> Deserialize<'de>>(path: &Path, text: &str) -> Result<T> {
    serde_json::from_str(text).map_err(|e| Error::Config {
        path: path.into(),
        field: format!("line {} column {}", e.line(), e.column()),
        message: e.to_string(),
    })
}

fn config_error(path: &Path, field: &str, message: impl Into<String>) -> Error {
    Error::Config {
        path: path.into(),
        field: field.into(),
        message: message.into(),
    }
}

fn resolve_path(base: &Path, p: &Path) -> PathBuf {
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.join(p)
    }
}

/// A loaded run: the config with every relative path made absolute.
#[derive(Debug, Clone)]
pub struct LoadedConfig {
    pub path: PathBuf,
    pub config: RunConfig,
}

impl LoadedConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = read_text(path)?;
        let mut config: RunConfig = parse_json(path, &text)?;
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        if config.spin.is_some() && config.spin_file.is_some() {
            return Err(config_error(path, "spin_file", "give either spin or spin_file, not both"));
        }
        if let Some(p) = &mut config.spin_file {
            *p = resolve_path(&base, p);
            if !p.exists() {
                return Err(Error::NotFound(p.clone()));
            }
        }
        if let Some(PulseSpec::FourierFile { path: p, .. }) = &mut config.pulse {
            *p = resolve_path(&base, p);
            if !p.exists() {
                return Err(Error::NotFound(p.clone()));
            }
        }
        if let Some(opt) = &mut config.optimize {
            if let Some(initial) = &opt.initial {
                if builtin_shape(initial).is_none() {
                    let full = resolve_path(&base, Path::new(initial));
                    if !full.exists() {
                        return Err(Error::NotFound(full));
                    }
                    opt.initial = Some(full.to_string_lossy().into_owned());
                }
            }
        }
        Ok(Self {
            path: path.to_path_buf(),
            config,
        })
    }

    /// Applies `--seed`, `--slices`, `--duration-ns` and `--shape`.
    pub fn apply_overrides(&mut self, args: &RunArgs) -> Result<()> {
        if let Some(shape) = &args.shape {
            let (duration, n_slices, flip_angle) = match &self.config.pulse {
                Some(p) => (p.duration(), slices_of(p), flip_of(p)),
                None => {
                    let d = args.duration_ns.ok_or_else(|| {
                        config_error(&self.path, "pulse", "--shape without a configured pulse needs --duration-ns")
                    })?;
                    (d * 1e-9, crate::pulse_shapes::DEFAULT_SLICES, std::f64::consts::PI)
                }
            };
            self.config.pulse = Some(if shape == "rectangular" {
                PulseSpec::Rectangular {
                    duration,
                    flip_angle,
                }
            } else if builtin_shape(shape).is_some() {
                PulseSpec::Builtin {
                    name: shape.clone(),
                    duration,
                    n_slices,
                    flip_angle,
                }
            } else {
                let path = PathBuf::from(shape);
                if !path.exists() {
                    return Err(Error::NotFound(path));
                }
                PulseSpec::FourierFile {
                    path,
                    duration,
                    n_slices,
                    flip_angle,
                }
            });
        }
        if let Some(ns) = args.duration_ns {
            if !(ns > 0.0 && ns.is_finite()) {
                return Err(Error::InvalidInput(format!("--duration-ns must be positive, got {ns}")));
            }
            if let Some(p) = &self.config.pulse {
                self.config.pulse = Some(p.with_duration(ns * 1e-9));
            }
        }
        if let Some(n) = args.slices {
            if let Some(p) = &mut self.config.pulse {
                match p {
                    PulseSpec::Rectangular { .. } => {}
                    PulseSpec::Builtin { n_slices, .. }
                    | PulseSpec::Fourier { n_slices, .. }
                    | PulseSpec::FourierFile { n_slices, .. }
                    | PulseSpec::Gaussian { n_slices, .. }
                    | PulseSpec::Hermite { n_slices, .. } => *n_slices = n,
                }
            }
        }
        if let Some(seed) = args.seed {
            if let Some(opt) = &mut self.config.optimize {
                opt.schedule.rng_seed = seed;
            }
        }
        Ok(())
    }

    fn spin(&self) -> Result<SpinConfig> {
        match (&self.config.spin, &self.config.spin_file) {
            (Some(c), _) => Ok(c.clone()),
            (None, Some(p)) => parse_json(p, &read_text(p)?),
            (None, None) => Err(config_error(&self.path, "spin", "missing spin system")),
        }
    }

    fn lines(&self) -> Result<LineSet> {
        self.spin()?.resolve_lines()
    }

    fn pulse(&self) -> Result<&PulseSpec> {
        let pulse = self
            .config
            .pulse
            .as_ref()
            .ok_or_else(|| config_error(&self.path, "pulse", "missing pulse"))?;
        if !(pulse.duration() > 0.0 && pulse.duration().is_finite()) {
            return Err(config_error(&self.path, "pulse.duration", "must be positive"));
        }
        Ok(pulse)
    }

    fn section<'a, T>(&self, value: &'a Option<T>, name: &str) -> Result<&'a T> {
        value
            .as_ref()
            .ok_or_else(|| config_error(&self.path, name, "missing section"))
    }

    fn grid(&self, grid: &Grid, field: &str, min_points: usize) -> Result<Vec<f64>> {
        if grid.points < min_points {
            return Err(config_error(
                &self.path,
                &format!("{field}.points"),
                format!("must be at least {min_points}"),
            ));
        }
        if !(grid.start.is_finite() && grid.end.is_finite()) || (grid.points > 1 && grid.end <= grid.start) {
            return Err(config_error(&self.path, field, "needs finite start < end"));
        }
        Ok(linspace(grid.start, grid.end, grid.points))
    }
}

fn slices_of(p: &PulseSpec) -> usize {
    match p {
        PulseSpec::Rectangular { .. } => crate::pulse_shapes::DEFAULT_SLICES,
        PulseSpec::Builtin { n_slices, .. }
        | PulseSpec::Fourier { n_slices, .. }
        | PulseSpec::FourierFile { n_slices, .. }
        | PulseSpec::Gaussian { n_slices, .. }
        | PulseSpec::Hermite { n_slices, .. } => *n_slices,
    }
}

fn flip_of(p: &PulseSpec) -> f64 {
    match p {
        PulseSpec::Rectangular { flip_angle, .. }
        | PulseSpec::Builtin { flip_angle, .. }
        | PulseSpec::Fourier { flip_angle, .. }
        | PulseSpec::FourierFile { flip_angle, .. }
        | PulseSpec::Gaussian { flip_angle, .. }
        | PulseSpec::Hermite { flip_angle, .. } => *flip_angle,
    }
}

/// Writes `contents` to `dir/name` through a temporary file and a rename.
pub fn write_atomic(dir: &Path, name: &str, contents: &[u8]) -> Result<PathBuf> {
    let io = |path: &Path| {
        let path = path.to_path_buf();
        move |source| Error::Io { path, source }
    };
    fs::create_dir_all(dir).map_err(io(dir))?;
    let target = dir.join(name);
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(io(dir))?;
    tmp.write_all(contents).map_err(io(&target))?;
    tmp.as_file().sync_all().map_err(io(&target))?;
    tmp.persist(&target).map_err(|e| Error::Io {
        path: target.clone(),
        source: e.error,
    })?;
    Ok(target)
}

fn to_json(value: &impl Serialize) -> Vec<u8> {
    let mut bytes = serde_json::to_vec_pretty(value).expect("serializable");
    bytes.push(b'\n');
    bytes
}

/// What a command produced, for the manifest.
struct Outcome {
    outputs: Vec<PathBuf>,
    summary: Value,
}

/// Runs one command end to end.
pub fn run(cli: &Cli) -> Result<Vec<PathBuf>> {
    let args = cli.command.args();
    let mut loaded = LoadedConfig::load(&args.config)?;
    loaded.apply_overrides(args)?;
    let out = &args.out;
    let outcome = match &cli.command {
        Command::Lines(_) => cmd_lines(&loaded, out)?,
        Command::Profile(_) => cmd_profile(&loaded, out)?,
        Command::Sweep(_) => cmd_sweep(&loaded, out)?,
        Command::Rabi(_) => cmd_rabi(&loaded, out)?,
        Command::Multiflip(_) => cmd_multiflip(&loaded, out)?,
        Command::Optimize(_) => cmd_optimize(&loaded, out)?,
    };
    let spin = loaded
        .config
        .spin_file
        .is_some()
        .then(|| loaded.spin())
        .transpose()?;
    let manifest = json!({
        "command": cli.command.name(),
        "version": env!("CARGO_PKG_VERSION"),
        "config_path": loaded.path,
        "seed": args.seed,
        "resolved_config": loaded.config,
        "resolved_spin": spin,
        "outputs": outcome.outputs,
        "summary": outcome.summary,
    });
    let mut outputs = outcome.outputs;
    outputs.push(write_atomic(out, "run_manifest.json", &to_json(&manifest))?);
    Ok(outputs)
}

fn cmd_lines(loaded: &LoadedConfig, out: &Path) -> Result<Outcome> {
    let lines = loaded.lines()?;
    let csv = lines.to_csv();
    print!("{csv}");
    Ok(Outcome {
        outputs: vec![write_atomic(out, "lines.csv", csv.as_bytes())?],
        summary: json!({ "n_lines": lines.len() }),
    })
}

fn cmd_profile(loaded: &LoadedConfig, out: &Path) -> Result<Outcome> {
    let section = loaded.section(&loaded.config.profile, "profile")?;
    let grid = loaded.grid(&section.detuning_hz, "profile.detuning_hz", 1)?;
    let envelope = loaded.pulse()?.build()?;
    let profile = excitation_profile(&envelope, &grid, &BlochVector::UP)?;
    Ok(Outcome {
        outputs: vec![write_atomic(out, "profile.csv", profile.to_csv().as_bytes())?],
        summary: json!({ "points": grid.len() }),
    })
}

fn reference_center(loaded: &LoadedConfig, lines: &LineSet, labels: &[String], field: &str) -> Result<f64> {
    if labels.is_empty() {
        let f = lines.frequencies();
        return Ok(0.5 * (f[0] + f[f.len() - 1]));
    }
    target_center(lines, labels).map_err(|e| config_error(&loaded.path, field, e.to_string()))
}

fn cmd_sweep(loaded: &LoadedConfig, out: &Path) -> Result<Outcome> {
    let section = loaded.section(&loaded.config.sweep, "sweep")?;
    let offsets = loaded.grid(&section.offset_hz, "sweep.offset_hz", 2)?;
    let lines = loaded.lines()?;
    let center = reference_center(loaded, &lines, &section.relative_to, "sweep.relative_to")?;
    let carriers: Vec<f64> = offsets.iter().map(|o| center + o).collect();
    let result = frequency_sweep(loaded.pulse()?, &lines, &carriers, &loaded.config.signal)?;
    Ok(Outcome {
        outputs: vec![write_atomic(out, "sweep.csv", result.to_csv().as_bytes())?],
        summary: json!({ "center_hz": center, "points": carriers.len() }),
    })
}

fn cmd_rabi(loaded: &LoadedConfig, out: &Path) -> Result<Outcome> {
    let section = loaded.section(&loaded.config.rabi, "rabi")?;
    if !(section.rabi_frequency_hz >= 0.0 && section.rabi_frequency_hz.is_finite()) {
        return Err(config_error(&loaded.path, "rabi.rabi_frequency_hz", "must be non-negative"));
    }
    let times = loaded.grid(&section.time_s, "rabi.time_s", 1)?;
    let lines = loaded.lines()?;
    let carrier = reference_center(loaded, &lines, &section.relative_to, "rabi.relative_to")?
        + section.carrier_offset_hz;
    let amplitude = 2.0 * std::f64::consts::PI * section.rabi_frequency_hz;
    let trace = rabi_beating(amplitude, &lines, carrier, &times, &loaded.config.signal)?;
    Ok(Outcome {
        outputs: vec![write_atomic(out, "rabi.csv", trace.to_csv().as_bytes())?],
        summary: json!({ "carrier_hz": carrier }),
    })
}

fn cmd_multiflip(loaded: &LoadedConfig, out: &Path) -> Result<Outcome> {
    let section = loaded.section(&loaded.config.multiflip, "multiflip")?;
    if section.n_flips == 0 {
        return Err(config_error(&loaded.path, "multiflip.n_flips", "must be at least 1"));
    }
    let lines = loaded.lines()?;
    let mut pulse = loaded.pulse()?.clone();
    let mut outputs = Vec::new();
    let mut summary = json!({});
    if let Some(grid) = &section.calibrate_ns {
        let durations: Vec<f64> = loaded
            .grid(grid, "multiflip.calibrate_ns", 1)?
            .into_iter()
            .map(|ns| ns * 1e-9)
            .collect();
        if durations[0] <= 0.0 {
            return Err(config_error(&loaded.path, "multiflip.calibrate_ns.start", "must be positive"));
        }
        let cal = calibrate_timescale(&pulse, &lines, &section.targets, section.n_flips, &durations)?;
        let mut csv = String::from("duration_s,infidelity\n");
        for (d, f) in &cal.scan {
            csv.push_str(&format!("{d:e},{f:e}\n"));
        }
        outputs.push(write_atomic(out, "calibration.csv", csv.as_bytes())?);
        summary["calibrated_duration_s"] = json!(cal.duration);
        summary["calibrated_infidelity"] = json!(cal.infidelity);
        pulse = pulse.with_duration(cal.duration);
    }
    let envelope = pulse.build()?;
    let result = multi_flip(&envelope, &lines, &section.targets, section.n_flips, &loaded.config.signal)?;
    outputs.insert(0, write_atomic(out, "multiflip.csv", result.to_csv().as_bytes())?);
    summary["duration_s"] = json!(pulse.duration());
    Ok(Outcome { outputs, summary })
}

fn load_initial(initial: &str) -> Result<FourierShape> {
    match builtin_shape(initial) {
        Some(s) => Ok(s),
        None => load_shape_file(initial),
    }
}

fn cmd_optimize(loaded: &LoadedConfig, out: &Path) -> Result<Outcome> {
    let section = loaded.section(&loaded.config.optimize, "optimize")?;
    section
        .objective
        .validate()
        .map_err(|e| config_error(&loaded.path, "optimize.objective", e.to_string()))?;
    section
        .schedule
        .validate(section.objective.dimension())
        .map_err(|e| config_error(&loaded.path, "optimize.schedule", e.to_string()))?;
    let initial = section.initial.as_deref().map(load_initial).transpose()?;
    if !section.anneal && initial.is_none() {
        return Err(config_error(
            &loaded.path,
            "optimize.initial",
            format!("refine-only runs need a starting shape (builtin {BUILTIN_SHAPES:?} or a file)"),
        ));
    }
    let named = |mut s: FourierShape| {
        s.name = section.name.clone();
        s
    };
    let start = initial.map(named);
    let result = match (&start, section.anneal) {
        (_, true) => design(
            &section.objective,
            &section.schedule,
            start.as_ref(),
            section.refine_iters,
            section.refine_step,
        )?,
        (Some(shape), false) => refine(shape, &section.objective, section.refine_iters, section.refine_step)?,
        (None, false) => unreachable!("checked above"),
    };
    let provenance = format!(
        "generated by nv-reburp {} optimize (seed {})",
        env!("CARGO_PKG_VERSION"),
        section.schedule.rng_seed
    );
    let shape_file = ShapeFile::from_shape(&result.shape, true, Some(provenance));
    let report = OptimizationReport {
        spec: section.objective.clone(),
        schedule: section.anneal.then(|| section.schedule.clone()),
        refine_iters: section.refine_iters,
        refine_step: section.refine_step,
        seed: section.anneal.then_some(section.schedule.rng_seed),
        final_cost: result.final_cost,
        evaluations: result.evaluations,
        cost_trace: result.cost_trace.clone(),
    };
    Ok(Outcome {
        outputs: vec![
            write_atomic(out, "shape.json", &to_json(&shape_file))?,
            write_atomic(out, "optimization.json", &to_json(&report))?,
        ],
        summary: json!({ "final_cost": result.final_cost, "evaluations": result.evaluations }),
    })
}
