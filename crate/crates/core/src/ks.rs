//! Consumption-type Keller-Segel system with porous-medium diffusion,
//! `∂ₜρ = Δρ^m − ∇·(ρ∇c)`, `∂ₜc = Δc − ρc`, no-flux boundaries.
//!
//! Each step first solves `(I − dt·L)c⁺ = c − dt·ρc` with the Neumann
//! Laplacian, then advances `ρ` by one monolithic step with drift `∇c⁺`
//! taken on faces, so the boundary normal velocity is exactly zero.

use serde::{Deserialize, Serialize};

use crate::audit::{AuditEntry, MONOTONE_SLACK};
use crate::banded::BandMatrix;
use crate::error::{invalid, Error, Result};
use crate::grid::{FaceField, Grid};
use crate::measures::{field_entropy, DensityField};
use crate::multigrid::Hierarchy;
use crate::pme::{extrapolate, implicit_diffusion_from, PmeStepConfig};
use crate::splitting::upwind_implicit_step;
use crate::trajectory::{StepDiagnostics, TrajectoryRecord};

/// Floor on `c` wherever the diagnostics divide by it.
pub const C_FLOOR: f64 = 1e-10;
/// Tolerated negative overshoot of `c` after a step.
pub const C_NEGATIVE_TOL: f64 = 1e-12;
/// Allowed growth of `max c` and of `∫c` per step.
pub const C_MONOTONE_TOL: f64 = 1e-10;
/// Allowed relative drift of the organism mass over a run.
pub const KS_MASS_TOL: f64 = 1e-9;

const MULTIGRID_CELLS: usize = 1024;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KsState {
    pub rho: DensityField,
    pub c: Vec<f64>,
    pub time: f64,
    /// Previous organism density, used only as a Newton starting point.
    #[serde(skip)]
    prev_rho: Option<Vec<f64>>,
}

impl KsState {
    pub fn new(rho: DensityField, c: Vec<f64>) -> Result<Self> {
        if c.len() != rho.grid().len() {
            return Err(invalid(format!("signal needs {} cells, got {}", rho.grid().len(), c.len())));
        }
        if let Some(bad) = c.iter().find(|v| !(v.is_finite() && **v >= 0.0)) {
            return Err(invalid(format!("signal must be finite and nonnegative, found {bad}")));
        }
        let time = rho.time();
        Ok(KsState { rho, c, time, prev_rho: None })
    }

    pub fn grid(&self) -> &Grid {
        self.rho.grid()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct KsConfig {
    pub m: f64,
    pub dt: f64,
    /// Off: the organism ignores the signal and follows the pure PME.
    pub chemotaxis: bool,
}

impl KsConfig {
    pub fn new(m: f64, dt: f64) -> Result<Self> {
        PmeStepConfig::new(m, dt)?;
        Ok(KsConfig { m, dt, chemotaxis: true })
    }
}

/// Solves `(I − dt·L)u = rhs` with the Neumann Laplacian `L`.
fn heat_solve(grid: &Grid, rhs: &[f64], dt: f64) -> Vec<f64> {
    if grid.dim() == 2 && grid.len() > MULTIGRID_CELLS {
        if let Some(u) = Hierarchy::new(grid, &vec![1.0; grid.len()], dt).solve(rhs, 1e-14, 500) {
            return u;
        }
    }
    let [nx, ny] = grid.cells();
    let bw = if grid.dim() == 2 { nx } else { 1 };
    let mut a = BandMatrix::zeros(grid.len(), bw);
    let cx = dt / (grid.h(0) * grid.h(0));
    let cy = dt / (grid.h(1) * grid.h(1));
    for j in 0..ny {
        for i in 0..nx {
            let k = grid.index(i, j);
            a.add(k, k, 1.0);
            let mut link = |l: usize, w: f64| {
                a.add(k, k, w);
                a.add(k, l, -w);
            };
            if i > 0 {
                link(k - 1, cx);
            }
            if i + 1 < nx {
                link(k + 1, cx);
            }
            if grid.dim() == 2 {
                if j > 0 {
                    link(k - nx, cy);
                }
                if j + 1 < ny {
                    link(k + nx, cy);
                }
            }
        }
    }
    let mut u = rhs.to_vec();
    a.solve(&mut u);
    u
}

/// One Lie step: signal first, then organisms in the updated signal gradient.
pub fn ks_step(state: &KsState, cfg: &KsConfig) -> Result<KsState> {
    let grid = *state.grid();
    let pme = PmeStepConfig::new(cfg.m, cfg.dt)?;
    let rho = state.rho.values();
    let rhs: Vec<f64> = state.c.iter().zip(rho).map(|(c, r)| c - cfg.dt * r * c).collect();
    let mut c = heat_solve(&grid, &rhs, cfg.dt);
    let lowest = c.iter().cloned().fold(f64::INFINITY, f64::min);
    if lowest < -C_NEGATIVE_TOL {
        return Err(Error::NegativeConcentration(lowest));
    }
    c.iter_mut().for_each(|v| *v = v.max(0.0));
    let (next, _) = if cfg.chemotaxis {
        let faces: FaceField = grid.face_gradient(&c);
        upwind_implicit_step(&grid, &faces, rho, state.prev_rho.as_deref(), &pme)?
    } else {
        let guess = extrapolate(rho, state.prev_rho.as_deref());
        implicit_diffusion_from(&grid, rho, &guess, &pme)?
    };
    let time = state.time + cfg.dt;
    Ok(KsState { rho: DensityField::from_parts(grid, next, time), c, time, prev_rho: Some(rho.to_vec()) })
}

/// Terms of the dissipation inequality for `F`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct KsDissipation {
    /// `(4/m²)∫|∇ρ^{m/2}|²`.
    pub organism: f64,
    /// `∫|∇c|⁴/c³`.
    pub gradient_quartic: f64,
    /// `∫|D²c|²/c`.
    pub hessian: f64,
    /// `½∫ρ|∇c|²/c`.
    pub cross: f64,
    /// `∫c|D² ln c|²`.
    pub log_hessian: f64,
}

impl KsDissipation {
    /// Constant `N` with `∫|∇c|⁴/c³ + ∫|D²c|²/c = N·∫c|D² ln c|²`.
    pub fn log_hessian_ratio(&self) -> f64 {
        if self.log_hessian <= 0.0 {
            0.0
        } else {
            (self.gradient_quartic + self.hessian) / self.log_hessian
        }
    }
}

fn hess_sq(h: &[f64; 3]) -> f64 {
    h[0] * h[0] + 2.0 * h[1] * h[1] + h[2] * h[2]
}

/// `F = ∫ρ ln ρ + ½∫|∇c|²/c`; cells with `c < 10⁻¹⁰` are excluded from the second term.
pub fn ks_lyapunov(state: &KsState) -> f64 {
    let grid = state.grid();
    let grad = grid.gradient(&state.c);
    let signal: f64 = state
        .c
        .iter()
        .zip(&grad)
        .filter(|(c, _)| **c >= C_FLOOR)
        .map(|(c, g)| (g[0] * g[0] + g[1] * g[1]) / c)
        .sum::<f64>()
        * grid.cell_volume();
    field_entropy(grid, state.rho.values()) + 0.5 * signal
}

pub fn ks_dissipation(state: &KsState, m: f64) -> KsDissipation {
    let grid = state.grid();
    let vol = grid.cell_volume();
    let rho = state.rho.values();
    let w: Vec<f64> = rho.iter().map(|r| r.powf(m / 2.0)).collect();
    let grad = grid.gradient(&state.c);
    let hess = grid.hessian(&state.c);
    let logc: Vec<f64> = state.c.iter().map(|c| c.max(C_FLOOR).ln()).collect();
    let log_hess = grid.hessian(&logc);
    let mut out = KsDissipation { organism: 4.0 / (m * m) * grid.dirichlet_energy(&w), ..Default::default() };
    for k in 0..grid.len() {
        let c = state.c[k];
        if c < C_FLOOR {
            continue;
        }
        let g2 = grad[k][0] * grad[k][0] + grad[k][1] * grad[k][1];
        out.gradient_quartic += g2 * g2 / (c * c * c) * vol;
        out.hessian += hess_sq(&hess[k]) / c * vol;
        out.cross += 0.5 * rho[k] * g2 / c * vol;
        out.log_hessian += c * hess_sq(&log_hess[k]) * vol;
    }
    out
}

/// One row of the run time series.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct KsSample {
    pub time: f64,
    pub lyapunov: f64,
    pub mass: f64,
    pub c_max: f64,
    pub c_min: f64,
    pub c_integral: f64,
    pub dissipation: KsDissipation,
}

impl KsSample {
    pub const CSV_HEADER: &'static str =
        "time,lyapunov,mass,c_max,c_min,c_integral,organism,gradient_quartic,hessian,cross,log_hessian";

    pub fn of(state: &KsState, m: f64) -> Self {
        let grid = state.grid();
        KsSample {
            time: state.time,
            lyapunov: ks_lyapunov(state),
            mass: state.rho.mass(),
            c_max: state.c.iter().cloned().fold(f64::NEG_INFINITY, f64::max),
            c_min: state.c.iter().cloned().fold(f64::INFINITY, f64::min),
            c_integral: grid.integrate(&state.c),
            dissipation: ks_dissipation(state, m),
        }
    }

    pub fn csv_row(&self) -> String {
        let d = &self.dissipation;
        format!(
            "{},{},{},{},{},{},{},{},{},{},{}",
            self.time,
            self.lyapunov,
            self.mass,
            self.c_max,
            self.c_min,
            self.c_integral,
            d.organism,
            d.gradient_quartic,
            d.hessian,
            d.cross,
            d.log_hessian
        )
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KsRun {
    pub samples: Vec<KsSample>,
    pub organisms: TrajectoryRecord,
    pub terminal: KsState,
}

pub fn ks_run(initial: &KsState, cfg: &KsConfig, steps: usize) -> Result<KsRun> {
    let mut state = initial.clone();
    let mut samples = vec![KsSample::of(&state, cfg.m)];
    let mut organisms = TrajectoryRecord::new(&state.rho, cfg.dt);
    for _ in 0..steps {
        state = ks_step(&state, cfg)?;
        samples.push(KsSample::of(&state, cfg.m));
        organisms.push(
            &state.rho,
            StepDiagnostics { time: state.time, mass: state.rho.mass(), ..Default::default() },
        );
    }
    Ok(KsRun { samples, organisms, terminal: state })
}

/// Sign audits of a run: Lyapunov decay, maximum principle and decay of `∫c`,
/// organism mass conservation.
pub fn ks_audit(run: &KsRun) -> Vec<AuditEntry> {
    let s = &run.samples;
    let max_inc = |f: &dyn Fn(&KsSample) -> f64| s.windows(2).map(|w| f(&w[1]) - f(&w[0])).fold(f64::NEG_INFINITY, f64::max);
    let f_inc = max_inc(&|x| x.lyapunov);
    let c_int_inc = max_inc(&|x| x.c_integral);
    let c0 = s[0].c_max;
    let c_top = s.iter().map(|x| x.c_max).fold(f64::NEG_INFINITY, f64::max);
    let c_bottom = s.iter().map(|x| x.c_min).fold(f64::INFINITY, f64::min);
    let mass_drift = s.iter().map(|x| (x.mass - s[0].mass).abs()).fold(0.0, f64::max) / s[0].mass;
    let ratios: Vec<f64> = s.iter().map(|x| x.dissipation.log_hessian_ratio()).collect();
    let n_max = ratios.iter().cloned().fold(0.0, f64::max);
    let range_slack = (c0 + C_MONOTONE_TOL - c_top).min(c_bottom);
    vec![
        AuditEntry::new("ks_lyapunov", f_inc).note("initial", s[0].lyapunov).note("terminal", s[s.len() - 1].lyapunov).verdict(
            f_inc <= MONOTONE_SLACK,
            MONOTONE_SLACK - f_inc,
        ),
        AuditEntry::new("ks_signal_range", c_top)
            .rhs("initial_max", c0)
            .note("min", c_bottom)
            .verdict(range_slack >= 0.0, range_slack),
        AuditEntry::new("ks_signal_integral", c_int_inc).verdict(c_int_inc <= C_MONOTONE_TOL, C_MONOTONE_TOL - c_int_inc),
        AuditEntry::new("ks_mass", mass_drift).verdict(mass_drift <= KS_MASS_TOL, KS_MASS_TOL - mass_drift),
        {
            let mut e = AuditEntry::new("ks_log_hessian_inequality", n_max).verdict(n_max.is_finite(), 1.0);
            e.constant = Some(n_max);
            e
        },
    ]
}

/// Which existence statement covers `(m, d)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KsRegime {
    /// `2(2d−1)/(3d) ≤ m ≤ (3d−2)/(2d)`: `L^q`-weak solutions for `1 ≤ q ≤ q_max`.
    LqWeak,
    /// `d = 3`, `15/13 ≤ m ≤ 7/6`: bounded weak solutions.
    Bounded,
    /// Outside both windows; existence is not settled either way.
    Open,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct KsAdmissibility {
    pub m: f64,
    pub d: u32,
    /// `3d(m−1)/(d−2)`.
    pub q_max: f64,
    pub regime: KsRegime,
    /// Value of `m` for which `(r1, r2) = (d, 2)` lies on the embedding line of `q_max`.
    pub embedding_m: f64,
}

/// `m` solving `d/r1 + (2 + (d−2)/3)/r2 = (d−2)/(3(m−1))`.
pub fn ks_embedding_m(d: u32, r1: f64, r2: f64) -> f64 {
    let df = d as f64;
    let lhs = df / r1 + (2.0 + (df - 2.0) / 3.0) / r2;
    1.0 + (df - 2.0) / (3.0 * lhs)
}

pub fn ks_admissible_q(m: f64, d: u32) -> Result<KsAdmissibility> {
    if d < 3 {
        return Err(invalid(format!("the exponent window needs d ≥ 3, got d = {d}")));
    }
    if !(m > 1.0 && m.is_finite()) {
        return Err(invalid(format!("PME exponent m must exceed 1, got {m}")));
    }
    let df = d as f64;
    let tol = 1e-12;
    let in_window = |lo: f64, hi: f64| m >= lo - tol && m <= hi + tol;
    let regime = if d == 3 && in_window(15.0 / 13.0, 7.0 / 6.0) {
        KsRegime::Bounded
    } else if in_window(2.0 * (2.0 * df - 1.0) / (3.0 * df), (3.0 * df - 2.0) / (2.0 * df)) {
        KsRegime::LqWeak
    } else {
        KsRegime::Open
    };
    Ok(KsAdmissibility { m, d, q_max: 3.0 * df * (m - 1.0) / (df - 2.0), regime, embedding_m: ks_embedding_m(d, df, 2.0) })
}
