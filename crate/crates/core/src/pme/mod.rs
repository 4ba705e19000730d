//! Homogeneous porous medium equation `∂ₜϱ = Δϱ^m` with no-flux boundary.
//!
//! One backward-Euler step solves `ϱ⁺ − dt·L(ϱ⁺^m) = ϱ`, where `L` is the
//! two-point Neumann Laplacian, by damped Newton iteration on `ϱ⁺`.

mod barenblatt;

use serde::{Deserialize, Serialize};

use crate::banded::BandMatrix;
use crate::error::{invalid, Error, Result};
use crate::grid::Grid;
use crate::multigrid::Hierarchy;
use crate::measures::{field_entropy, power_integral, DensityField};
use crate::trajectory::{StepDiagnostics, TrajectoryRecord};

pub use barenblatt::{barenblatt, Barenblatt};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PmeStepConfig {
    pub m: f64,
    pub dt: f64,
    pub newton_tol: f64,
    pub max_newton: usize,
}

impl PmeStepConfig {
    pub fn new(m: f64, dt: f64) -> Result<Self> {
        let cfg = PmeStepConfig { m, dt, newton_tol: 1e-10, max_newton: 50 };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.m > 1.0 && self.m.is_finite()) {
            return Err(invalid(format!("PME exponent m must exceed 1, got {}", self.m)));
        }
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(invalid(format!("time step must be positive, got {}", self.dt)));
        }
        if !(self.newton_tol > 0.0) || self.max_newton == 0 {
            return Err(invalid("Newton tolerance and iteration cap must be positive"));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct NewtonStats {
    pub iterations: usize,
    pub residual: f64,
}

fn inf_norm(v: &[f64]) -> f64 {
    v.iter().fold(0.0_f64, |a, b| a.max(b.abs()))
}

fn residual(grid: &Grid, rho: &[f64], rhs: &[f64], m: f64, dt: f64) -> Vec<f64> {
    let u: Vec<f64> = rho.iter().map(|r| r.powf(m)).collect();
    let lap = grid.laplacian(&u);
    rho.iter().zip(&lap).zip(rhs).map(|((r, l), b)| r - dt * l - b).collect()
}

fn jacobian(grid: &Grid, rho: &[f64], m: f64, dt: f64) -> BandMatrix {
    let [nx, ny] = grid.cells();
    let bw = if grid.dim() == 2 { nx } else { 1 };
    let mut jac = BandMatrix::zeros(grid.len(), bw);
    let slope: Vec<f64> = rho.iter().map(|r| if *r > 0.0 { m * r.powf(m - 1.0) } else { 0.0 }).collect();
    let cx = dt / (grid.h(0) * grid.h(0));
    let cy = dt / (grid.h(1) * grid.h(1));
    for j in 0..ny {
        for i in 0..nx {
            let k = grid.index(i, j);
            jac.add(k, k, 1.0);
            let mut link = |l: usize, c: f64| {
                jac.add(k, k, c * slope[k]);
                jac.add(k, l, -c * slope[l]);
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
    jac
}

/// 2D grids above this size solve Newton systems by multigrid-preconditioned CG.
const DIRECT_SOLVE_CELLS: usize = 1024;

/// Overwrites `r` with `J⁻¹r`, `J = I − dt·L·diag(mρ^{m−1})`.
///
/// On large 2D grids the substitution `w = mρ^{m−1}δ` turns `Jδ = r` into the
/// symmetric system `(diag(1/(mρ^{m−1})) − dt·L)w = r`, after which
/// `δ = r + dt·L w`. Vacuum cells get a tiny floor on `mρ^{m−1}`.
fn newton_direction(grid: &Grid, rho: &[f64], m: f64, dt: f64, r: &mut [f64], forcing: f64) {
    if grid.dim() == 2 && grid.len() > DIRECT_SOLVE_CELLS {
        let slope: Vec<f64> = rho.iter().map(|v| m * v.max(0.0).powf(m - 1.0)).collect();
        let top = slope.iter().cloned().fold(0.0, f64::max);
        if top > 0.0 {
            let floor = 1e-14 * top;
            let c: Vec<f64> = slope.iter().map(|s| 1.0 / s.max(floor)).collect();
            if let Some(w) = Hierarchy::new(grid, &c, dt).solve(r, forcing, 500) {
                let lap = grid.laplacian(&w);
                r.iter_mut().zip(&lap).for_each(|(ri, l)| *ri += dt * l);
                return;
            }
        } else {
            return;
        }
    }
    jacobian(grid, rho, m, dt).solve(r);
}

/// Solves `ρ − dt·L(ρ^m) = rhs` for `ρ ≥ 0` by damped Newton with clipping.
pub(crate) fn implicit_diffusion(
    grid: &Grid,
    rhs: &[f64],
    cfg: &PmeStepConfig,
) -> Result<(Vec<f64>, NewtonStats)> {
    implicit_diffusion_from(grid, rhs, rhs, cfg)
}

/// [`implicit_diffusion`] started from `guess` (clipped at zero).
pub(crate) fn implicit_diffusion_from(
    grid: &Grid,
    rhs: &[f64],
    guess: &[f64],
    cfg: &PmeStepConfig,
) -> Result<(Vec<f64>, NewtonStats)> {
    let (m, dt) = (cfg.m, cfg.dt);
    let mut rho: Vec<f64> = guess.iter().map(|v| v.max(0.0)).collect();
    let mut f = residual(grid, &rho, rhs, m, dt);
    let mut res = inf_norm(&f);
    let mut history = vec![res];
    let mut iterations = 0;
    let mut clipped_last = 0.0;
    let mut polishing = 0;
    let round_off = (1e-3 * cfg.newton_tol).max(16.0 * f64::EPSILON * inf_norm(rhs));
    loop {
        if res <= cfg.newton_tol {
            // A couple of extra Newton steps push the residual to round-off so
            // the telescoping flux sum conserves mass to machine precision.
            if polishing >= 2 || res <= round_off {
                break;
            }
            polishing += 1;
        } else if iterations >= cfg.max_newton {
            return Err(Error::NewtonDivergence { iterations, history });
        }
        let mut delta: Vec<f64> = f.iter().map(|v| -v).collect();
        // Inexact Newton: iterative solves only need to track the residual.
        let forcing = if polishing > 0 { 1e-6 } else { res.clamp(1e-13, 1e-4) };
        newton_direction(grid, &rho, m, dt, &mut delta, forcing);
        let mut lambda = 1.0;
        let mut accepted = false;
        // Once converged, only full steps are worth trying.
        let attempts = if polishing > 0 { 1 } else { 30 };
        for _ in 0..attempts {
            let mut clipped = 0.0;
            let trial: Vec<f64> = rho
                .iter()
                .zip(&delta)
                .map(|(r, d)| {
                    let v = r + lambda * d;
                    if v < 0.0 {
                        clipped -= v;
                        0.0
                    } else {
                        v
                    }
                })
                .collect();
            let f_trial = residual(grid, &trial, rhs, m, dt);
            let res_trial = inf_norm(&f_trial);
            if res_trial < res {
                rho = trial;
                f = f_trial;
                res = res_trial;
                clipped_last = clipped * grid.cell_volume();
                accepted = true;
                break;
            }
            lambda *= 0.5;
        }
        iterations += 1;
        history.push(res);
        if !accepted {
            if res <= cfg.newton_tol {
                break;
            }
            return Err(Error::NewtonDivergence { iterations, history });
        }
    }
    let mass_in = grid.integrate(rhs);
    if clipped_last > 1e-12 * mass_in.max(f64::MIN_POSITIVE) {
        return Err(Error::ClippingMassLoss(clipped_last / mass_in));
    }
    Ok((rho, NewtonStats { iterations, residual: res }))
}

/// One backward-Euler step of the homogeneous PME.
pub fn pme_step(rho: &DensityField, cfg: &PmeStepConfig) -> Result<DensityField> {
    Ok(pme_step_with_stats(rho, cfg)?.0)
}

pub fn pme_step_with_stats(rho: &DensityField, cfg: &PmeStepConfig) -> Result<(DensityField, NewtonStats)> {
    cfg.validate()?;
    let (values, stats) = implicit_diffusion(rho.grid(), rho.values(), cfg)?;
    Ok((DensityField::from_parts(*rho.grid(), values, rho.time() + cfg.dt), stats))
}

/// Repeats [`pme_step`] and records every snapshot.
pub fn pme_run(rho0: &DensityField, cfg: &PmeStepConfig, steps: usize) -> Result<TrajectoryRecord> {
    let mut traj = TrajectoryRecord::new(rho0, cfg.dt);
    cfg.validate()?;
    let mut rho = rho0.clone();
    let mut prev: Option<Vec<f64>> = None;
    for _ in 0..steps {
        let guess = extrapolate(rho.values(), prev.as_deref());
        let (values, stats) = implicit_diffusion_from(rho.grid(), rho.values(), &guess, cfg)?;
        let next = DensityField::from_parts(*rho.grid(), values, rho.time() + cfg.dt);
        traj.push(
            &next,
            StepDiagnostics {
                time: next.time(),
                mass: next.mass(),
                newton_iterations: stats.iterations,
                newton_residual: stats.residual,
                mass_correction: 0.0,
            },
        );
        prev = Some(rho.into_values());
        rho = next;
    }
    Ok(traj)
}

/// Linear extrapolation `2ρᵏ − ρᵏ⁻¹` as a Newton starting point.
pub(crate) fn extrapolate(current: &[f64], previous: Option<&[f64]>) -> Vec<f64> {
    match previous {
        Some(p) => current.iter().zip(p).map(|(c, p)| (2.0 * c - p).max(0.0)).collect(),
        None => current.to_vec(),
    }
}

/// Balance of the homogeneous energy identity over a trajectory.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnergyResidual {
    pub q: f64,
    pub initial: f64,
    pub terminal: f64,
    /// Time-integrated dissipation with its coefficient applied.
    pub dissipation: f64,
    /// `terminal + dissipation − initial`.
    pub residual: f64,
    /// Largest single-step increase of the energy (negative when strictly dissipative).
    pub max_step_increase: f64,
}

/// Energy `∫ϱ^q`, or `∫ϱ log ϱ` when `q = 1`.
pub(crate) fn energy(grid: &Grid, values: &[f64], q: f64) -> f64 {
    if q == 1.0 {
        field_entropy(grid, values)
    } else {
        power_integral(grid, values, q)
    }
}

/// Coefficient and gradient power of the dissipation: for `q > 1` the pair is
/// `(4mq(q−1)/(m+q−1)², (m+q−1)/2)`, for `q = 1` it is `(4/m, m/2)`.
pub(crate) fn dissipation_form(m: f64, q: f64) -> (f64, f64) {
    if q == 1.0 {
        (4.0 / m, m / 2.0)
    } else {
        (4.0 * m * q * (q - 1.0) / (m + q - 1.0).powi(2), (m + q - 1.0) / 2.0)
    }
}

/// `R(T) = E(T) + c·Σ dt ∫|∇ϱ^a|² − E(0)` along a drift-free trajectory.
pub fn pme_energy_audit(traj: &TrajectoryRecord, m: f64, q: f64) -> Result<EnergyResidual> {
    if !(q >= 1.0) || !(m > 1.0) {
        return Err(invalid(format!("energy audit needs m > 1 and q >= 1, got m={m}, q={q}")));
    }
    let grid = &traj.grid;
    let (coef, power) = dissipation_form(m, q);
    let energies: Vec<f64> = traj.fields.iter().map(|f| energy(grid, f, q)).collect();
    let dissipation: f64 = traj
        .evolved()
        .iter()
        .map(|f| {
            let w: Vec<f64> = f.iter().map(|v| v.powf(power)).collect();
            traj.dt * grid.dirichlet_energy(&w)
        })
        .sum::<f64>()
        * coef;
    let max_step_increase = energies.windows(2).map(|w| w[1] - w[0]).fold(f64::NEG_INFINITY, f64::max);
    let initial = energies[0];
    let terminal = *energies.last().unwrap();
    Ok(EnergyResidual {
        q,
        initial,
        terminal,
        dissipation,
        residual: terminal + dissipation - initial,
        max_step_increase,
    })
}
