//! Run configuration: a TOML document with one section per concern, plus the
//! named presets the command line can start from.
//!
//! ```toml
//! experiment = "audit"
//!
//! [grid]
//! dim = 2
//! cells = 32
//! lower = [0.0, 0.0]
//! upper = [1.0, 1.0]
//!
//! [time]
//! horizon = 0.05
//! steps = 50
//!
//! [model]
//! m = 2.0
//! q = 2.0
//!
//! [drift]
//! kind = "rotation"
//! amplitude = 1.0
//!
//! [initial]
//! preset = "bump"
//! ```
//!
//! Every section and key is optional except `experiment`; unknown keys are
//! rejected. Values are validated before any computation starts.

use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::flow::{DriftKind, VectorFieldSpec};
use crate::grid::{Grid, Point};
use crate::measures::DensityField;
use crate::pme::barenblatt;
use crate::serrin::{DriftStructure, FigureId, TheoremId};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Experiment {
    Simulate,
    SplitStudy,
    Audit,
    Regions,
    Thresholds,
    Ks,
}

impl Experiment {
    pub fn name(self) -> &'static str {
        match self {
            Experiment::Simulate => "simulate",
            Experiment::SplitStudy => "split-study",
            Experiment::Audit => "audit",
            Experiment::Regions => "regions",
            Experiment::Thresholds => "thresholds",
            Experiment::Ks => "ks",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GridSpec {
    pub dim: usize,
    /// Cells per axis.
    pub cells: usize,
    pub lower: Point,
    pub upper: Point,
}

impl Default for GridSpec {
    fn default() -> Self {
        GridSpec { dim: 2, cells: 32, lower: [0.0, 0.0], upper: [1.0, 1.0] }
    }
}

impl GridSpec {
    pub fn build(&self) -> Result<Grid> {
        match self.dim {
            1 => Grid::new_1d(self.lower[0], self.upper[0], self.cells),
            2 => Grid::new_2d([self.lower[0], self.upper[0]], [self.lower[1], self.upper[1]], [self.cells; 2]),
            d => Err(crate::error::invalid(format!("grid dimension must be 1 or 2, got {d}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TimeSpec {
    pub horizon: f64,
    pub steps: usize,
    /// Steps between field dumps; `0` dumps only the first and last snapshot.
    pub record_every: usize,
}

impl Default for TimeSpec {
    fn default() -> Self {
        TimeSpec { horizon: 0.05, steps: 50, record_every: 0 }
    }
}

impl TimeSpec {
    pub fn dt(&self) -> f64 {
        self.horizon / self.steps as f64
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelSpec {
    pub m: f64,
    pub q: f64,
    /// Dimension used by the exponent algebra; the grid dimension when absent.
    pub d: Option<u32>,
}

impl Default for ModelSpec {
    fn default() -> Self {
        ModelSpec { m: 2.0, q: 2.0, d: None }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum InitialPreset {
    Uniform,
    Bump,
    Barenblatt,
    TwoBumps,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct InitialSpec {
    pub preset: InitialPreset,
    /// Box-relative center of the bump or Barenblatt profile.
    pub center: Point,
    /// Box-relative radius of each bump.
    pub radius: f64,
    /// Constant added before normalization; keeps the datum away from vacuum.
    pub background: f64,
    /// Age of the Barenblatt profile.
    pub age: f64,
}

impl Default for InitialSpec {
    fn default() -> Self {
        InitialSpec { preset: InitialPreset::Bump, center: [0.4, 0.5], radius: 0.3, background: 0.0, age: 0.01 }
    }
}

impl InitialSpec {
    /// Probability density on `grid`.
    pub fn build(&self, grid: &Grid, m: f64) -> Result<DensityField> {
        let (lo, hi) = (grid.lower(), grid.upper());
        let abs = |p: Point| [lo[0] + p[0] * (hi[0] - lo[0]), lo[1] + p[1] * (hi[1] - lo[1])];
        let scale = hi[0] - lo[0];
        let bump = |c: Point, x: Point| {
            let c = abs(c);
            let r2 = (x[0] - c[0]).powi(2) + if grid.dim() == 2 { (x[1] - c[1]).powi(2) } else { 0.0 };
            ((self.radius * scale).powi(2) - r2).max(0.0)
        };
        let values = match self.preset {
            InitialPreset::Uniform => vec![1.0; grid.len()],
            InitialPreset::Bump => grid.sample(|x| bump(self.center, x) + self.background),
            InitialPreset::TwoBumps => {
                let mirror = [1.0 - self.center[0], 1.0 - self.center[1]];
                grid.sample(|x| bump(self.center, x) + 0.5 * bump(mirror, x) + self.background)
            }
            InitialPreset::Barenblatt => {
                let b = barenblatt(grid, m, self.age, abs(self.center))?;
                b.values().iter().map(|v| v + self.background).collect()
            }
        };
        DensityField::normalized(*grid, values, 0.0)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct StudySpec {
    /// Sub-interval counts of the splitting refinement study.
    pub subintervals: Vec<usize>,
    /// Block-averaging factor applied before measuring distances.
    pub coarsen: usize,
}

impl Default for StudySpec {
    fn default() -> Self {
        StudySpec { subintervals: vec![2, 4, 8], coarsen: 1 }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RegionSpec {
    pub figure: Option<String>,
    pub theorem: Option<String>,
    /// Exponent pair to classify; `inf` allowed.
    pub q1: Option<f64>,
    pub q2: Option<f64>,
    pub structure: Option<DriftStructure>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct KsSpec {
    pub chemotaxis: bool,
    /// Initial signal `c₀ = base + amplitude·cos(πξ)cos(πη)`.
    pub signal_base: f64,
    pub signal_amplitude: f64,
}

impl Default for KsSpec {
    fn default() -> Self {
        KsSpec { chemotaxis: true, signal_base: 1.0, signal_amplitude: 0.5 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ToleranceSpec {
    pub newton_tol: f64,
    pub max_newton: usize,
}

impl Default for ToleranceSpec {
    fn default() -> Self {
        ToleranceSpec { newton_tol: 1e-10, max_newton: 50 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputSpec {
    pub dir: String,
}

impl Default for OutputSpec {
    fn default() -> Self {
        OutputSpec { dir: "pme-lab-out".into() }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    /// Overridden by the CLI subcommand.
    #[serde(default = "default_experiment")]
    pub experiment: Experiment,
    #[serde(default)]
    pub grid: GridSpec,
    #[serde(default)]
    pub time: TimeSpec,
    #[serde(default)]
    pub model: ModelSpec,
    #[serde(default = "zero_drift")]
    pub drift: DriftKind,
    #[serde(default)]
    pub initial: InitialSpec,
    #[serde(default)]
    pub study: StudySpec,
    #[serde(default)]
    pub regions: RegionSpec,
    #[serde(default)]
    pub ks: KsSpec,
    #[serde(default)]
    pub tolerances: ToleranceSpec,
    #[serde(default)]
    pub output: OutputSpec,
}

fn default_experiment() -> Experiment {
    Experiment::Simulate
}

fn zero_drift() -> DriftKind {
    DriftKind::Zero
}

fn line_of(src: &str, offset: usize) -> usize {
    src[..offset.min(src.len())].matches('\n').count() + 1
}

/// First line mentioning `key` as an assignment or section header, or 0.
fn line_of_key(src: &str, key: &str) -> usize {
    let leaf = key.rsplit('.').next().unwrap_or(key);
    src.lines()
        .position(|l| {
            let t = l.trim_start();
            t.starts_with(&format!("{leaf} ")) || t.starts_with(&format!("{leaf}=")) || t == format!("[{key}]")
        })
        .map_or(0, |i| i + 1)
}

impl RunConfig {
    pub fn new(experiment: Experiment) -> Self {
        RunConfig {
            experiment,
            grid: GridSpec::default(),
            time: TimeSpec::default(),
            model: ModelSpec::default(),
            drift: DriftKind::Zero,
            initial: InitialSpec::default(),
            study: StudySpec::default(),
            regions: RegionSpec::default(),
            ks: KsSpec::default(),
            tolerances: ToleranceSpec::default(),
            output: OutputSpec::default(),
        }
    }

    /// Parses and validates; errors carry the 1-based line of the offending key.
    pub fn parse(src: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(src).map_err(|e| Error::Config {
            line: e.span().map_or(0, |s| line_of(src, s.start)),
            message: e.message().to_string(),
        })?;
        cfg.validate().map_err(|(key, message)| Error::Config { line: line_of_key(src, &key), message })?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("run configurations always serialize")
    }

    /// Dimension for the exponent algebra.
    pub fn dimension(&self) -> u32 {
        self.model.d.unwrap_or(self.grid.dim as u32)
    }

    pub fn structure(&self) -> Result<DriftStructure> {
        let v = self.build_drift()?;
        Ok(if v.flags().divergence_nonneg { DriftStructure::DivNonneg } else { DriftStructure::General })
    }

    pub fn build_grid(&self) -> Result<Grid> {
        self.grid.build()
    }

    pub fn build_drift(&self) -> Result<VectorFieldSpec> {
        VectorFieldSpec::new(self.drift.clone(), &self.build_grid()?)
    }

    pub fn build_initial(&self) -> Result<DensityField> {
        self.initial.build(&self.build_grid()?, self.model.m)
    }

    /// Range checks, reported as `(key, message)`.
    pub fn validate(&self) -> std::result::Result<(), (String, String)> {
        let fail = |key: &str, msg: String| Err((key.to_string(), msg));
        let m = self.model.m;
        if !(m > 1.0 && m.is_finite()) {
            return fail("model.m", format!("m must be a finite number above 1, got {m}"));
        }
        if !(self.model.q >= 1.0 && self.model.q.is_finite()) {
            return fail("model.q", format!("q must be finite and at least 1, got {}", self.model.q));
        }
        if let Some(d) = self.model.d {
            if d < 1 {
                return fail("model.d", "d must be positive".into());
            }
        }
        let algebra_only = matches!(self.experiment, Experiment::Regions | Experiment::Thresholds);
        if algebra_only {
            if self.dimension() < 2 {
                return fail("model.d", format!("the exponent algebra needs d ≥ 2, got {}", self.dimension()));
            }
            if let Some(f) = &self.regions.figure {
                if let Err(e) = FigureId::from_str(f) {
                    return fail("regions.figure", e.to_string());
                }
            }
            if let Some(t) = &self.regions.theorem {
                if let Err(e) = TheoremId::from_str(t) {
                    return fail("regions.theorem", e.to_string());
                }
            }
            if self.experiment == Experiment::Regions && self.regions.figure.is_none() {
                return fail("regions.figure", "the regions experiment needs a figure".into());
            }
            for (key, v) in [("regions.q1", self.regions.q1), ("regions.q2", self.regions.q2)] {
                if let Some(v) = v {
                    if !(v > 0.0) {
                        return fail(key, format!("exponents must be positive, got {v}"));
                    }
                }
            }
            if self.regions.q1.is_some() != self.regions.q2.is_some() {
                return fail("regions.q2", "give both q1 and q2 or neither".into());
            }
            return Ok(());
        }
        if let Err(e) = self.build_grid() {
            return fail("grid", e.to_string());
        }
        if self.time.steps == 0 || !(self.time.horizon > 0.0 && self.time.horizon.is_finite()) {
            return fail("time", "time needs a positive horizon and step count".into());
        }
        if let Err(e) = self.build_drift() {
            return fail("drift", e.to_string());
        }
        if !(self.initial.radius > 0.0) || !(self.initial.background >= 0.0) || !(self.initial.age > 0.0) {
            return fail("initial", "radius and age must be positive, background nonnegative".into());
        }
        if let Err(e) = self.build_initial() {
            return fail("initial", e.to_string());
        }
        if !(self.tolerances.newton_tol > 0.0) || self.tolerances.max_newton == 0 {
            return fail("tolerances", "Newton tolerance and iteration cap must be positive".into());
        }
        match self.experiment {
            Experiment::SplitStudy => {
                if self.study.subintervals.is_empty() {
                    return fail("study.subintervals", "list at least one sub-interval count".into());
                }
                if let Some(n) = self.study.subintervals.iter().find(|n| **n == 0 || self.time.steps % **n != 0) {
                    return fail("study.subintervals", format!("{n} does not divide the step count {}", self.time.steps));
                }
                if self.study.coarsen == 0 || self.grid.cells % self.study.coarsen != 0 {
                    return fail("study.coarsen", format!("{} must divide the cell count", self.study.coarsen));
                }
            }
            Experiment::Ks => {
                if self.grid.dim != 2 {
                    return fail("grid.dim", "the Keller-Segel experiment runs on 2D boxes".into());
                }
                if !(self.ks.signal_base - self.ks.signal_amplitude.abs() >= 0.0) {
                    return fail("ks.signal_amplitude", "initial signal must be nonnegative".into());
                }
            }
            Experiment::Audit => {
                if self.time.steps + 1 < 8 {
                    return fail("time.steps", "audits need at least 7 steps".into());
                }
            }
            _ => {}
        }
        Ok(())
    }
}

/// Named starting points for the command line.
pub fn preset(name: &str) -> Result<RunConfig> {
    let mut cfg = RunConfig::new(Experiment::Audit);
    match name {
        // Divergence-free cellular flow: every L^q energy is dissipated.
        "divfree-rotation" => {
            cfg.drift = DriftKind::Rotation { amplitude: 1.0 };
            cfg.initial.background = 0.05;
        }
        // Compressive sine drift: energies may grow, the Grönwall shape applies.
        "general-sine" => {
            cfg.drift = DriftKind::Sine { amplitude: 1.0, waves: 1 };
            cfg.initial.background = 0.05;
        }
        "barenblatt" => {
            cfg.experiment = Experiment::Simulate;
            cfg.grid = GridSpec { dim: 1, cells: 128, lower: [-1.0, 0.0], upper: [1.0, 1.0] };
            cfg.initial = InitialSpec { preset: InitialPreset::Barenblatt, center: [0.5, 0.5], ..InitialSpec::default() };
            cfg.time = TimeSpec { horizon: 0.01, steps: 100, record_every: 25 };
        }
        "rotation-split" => {
            cfg.experiment = Experiment::SplitStudy;
            cfg.grid = GridSpec { dim: 2, cells: 64, lower: [0.0, 0.0], upper: [2.0, 2.0] };
            cfg.drift = DriftKind::Rotation { amplitude: 4.0 };
            cfg.initial = InitialSpec { center: [0.3, 0.5], radius: 0.175, ..InitialSpec::default() };
            cfg.time = TimeSpec { horizon: 0.5, steps: 256, record_every: 0 };
            cfg.study = StudySpec { subintervals: vec![4, 8, 16, 32], coarsen: 2 };
        }
        "ks-box" => {
            cfg.experiment = Experiment::Ks;
            cfg.initial = InitialSpec { center: [0.35, 0.6], radius: 0.245, background: 0.2, ..InitialSpec::default() };
            cfg.time = TimeSpec { horizon: 0.5, steps: 250, record_every: 0 };
        }
        _ => return Err(crate::error::invalid(format!("unknown preset `{name}`"))),
    }
    Ok(cfg)
}

pub const PRESETS: [&str; 5] = ["divfree-rotation", "general-sine", "barenblatt", "rotation-split", "ks-box"];
