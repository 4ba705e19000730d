//! Operator splitting: homogeneous PME steps on each sub-interval, followed
//! by a push-forward along the drift. Also a monolithic reference solver and
//! the weak-form residual used to check consistency.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::flow::{pushforward, FlowOptions, VectorFieldSpec};
use crate::grid::{Grid, Point, TimePartition};
use crate::measures::{wasserstein_1d, wasserstein_entropic, DensityField};
use crate::pme::{extrapolate, implicit_diffusion_from, PmeStepConfig};
use crate::trajectory::{StepDiagnostics, TrajectoryRecord};

/// Entropic transport on 2D grids uses `ε = h²` at this marginal tolerance.
/// Below `h²` the grid discreteness inflates small distances.
const ENTROPIC_TOL: f64 = 1e-6;

/// `W₂` between two densities on one grid: exact in 1D, debiased entropic in 2D.
pub fn w2_distance(a: &DensityField, b: &DensityField) -> Result<f64> {
    if a.grid() != b.grid() {
        return Err(invalid("distance needs both densities on one grid"));
    }
    if a.grid().dim() == 1 {
        Ok(wasserstein_1d(a, b, 2.0)?.distance)
    } else {
        let eps = a.grid().h_min().powi(2);
        Ok(wasserstein_entropic(a, b, 2.0, eps, ENTROPIC_TOL)?.distance)
    }
}

/// [`w2_distance`] after block-averaging both densities by `factor`.
pub fn coarse_w2(a: &DensityField, b: &DensityField, factor: usize) -> Result<f64> {
    if factor <= 1 {
        w2_distance(a, b)
    } else {
        w2_distance(&a.coarsened(factor)?, &b.coarsened(factor)?)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SplitConfig {
    pub m: f64,
    pub partition: TimePartition,
    pub newton_tol: f64,
    pub max_newton: usize,
    pub flow: FlowOptions,
    /// Also record the transported curve after every PME step.
    pub record_steps: bool,
    /// Compute `W₂(ρₙ, ϱₙ)` at every sub-interval end (costly in 2D).
    pub gap_diagnostics: bool,
    /// Block-average both fields by this factor per axis before measuring gaps.
    pub gap_coarsening: usize,
}

impl SplitConfig {
    pub fn new(grid: &Grid, m: f64, partition: TimePartition) -> Result<Self> {
        let step = PmeStepConfig::new(m, partition.dt())?;
        Ok(SplitConfig {
            m,
            partition,
            newton_tol: step.newton_tol,
            max_newton: step.max_newton,
            flow: FlowOptions::for_grid(grid, partition.dt()),
            record_steps: false,
            gap_diagnostics: true,
            gap_coarsening: 1,
        })
    }

    fn step(&self) -> PmeStepConfig {
        PmeStepConfig { m: self.m, dt: self.partition.dt(), newton_tol: self.newton_tol, max_newton: self.max_newton }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SubintervalDiagnostics {
    pub index: usize,
    pub start: f64,
    pub end: f64,
    /// Relative mass change of the push-forward before renormalization.
    pub mass_drift: f64,
    /// `W₂` between the transported and the diffused curve at the sub-interval
    /// end; NaN when gap diagnostics are off.
    pub w2_gap: f64,
    /// `∫‖V‖_∞` over the sub-interval.
    pub drift_integral: f64,
    pub max_newton_iterations: usize,
}

/// Both curve families at the sub-interval boundaries. Index 0 holds the
/// initial datum in both; index `i + 1` the end of sub-interval `i`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SplitRun {
    pub grid: Grid,
    pub m: f64,
    pub partition: TimePartition,
    pub times: Vec<f64>,
    /// Post-transport curve `ρₙ`.
    pub transported: Vec<Vec<f64>>,
    /// Post-diffusion curve `ϱₙ` (left limits at the boundaries).
    pub diffused: Vec<Vec<f64>>,
    pub diagnostics: Vec<SubintervalDiagnostics>,
    /// Per-step transported curve, when requested.
    pub steps: Option<TrajectoryRecord>,
}

impl SplitRun {
    pub fn transported_at(&self, i: usize) -> DensityField {
        DensityField::from_parts(self.grid, self.transported[i].clone(), self.times[i])
    }

    pub fn diffused_at(&self, i: usize) -> DensityField {
        DensityField::from_parts(self.grid, self.diffused[i].clone(), self.times[i])
    }

    pub fn terminal(&self) -> DensityField {
        self.transported_at(self.times.len() - 1)
    }

    /// `max_i ∫ over sub-interval i of ‖V‖_∞`.
    pub fn max_drift_integral(&self) -> f64 {
        self.diagnostics.iter().map(|d| d.drift_integral).fold(0.0, f64::max)
    }

    /// Summed absolute push-forward mass drift per unit time.
    pub fn drift_rate(&self) -> f64 {
        self.diagnostics.iter().map(|d| d.mass_drift.abs()).sum::<f64>() / self.partition.horizon
    }
}

fn drift_integral(v: &VectorFieldSpec, s: f64, t: f64) -> f64 {
    // Trapezoid in time; the presets are autonomous, so this is exact for them.
    0.5 * (v.sup_norm(s) + v.sup_norm(t)) * (t - s)
}

/// Runs the splitting scheme: on `(iT/n, (i+1)T/n]` the diffused curve solves
/// the homogeneous PME from the transported curve at `iT/n`, and the
/// transported curve is its push-forward from `iT/n`.
pub fn split_solve(rho0: &DensityField, v: &VectorFieldSpec, cfg: &SplitConfig) -> Result<SplitRun> {
    let grid = *rho0.grid();
    if v.grid() != &grid {
        return Err(invalid("drift and density live on different grids"));
    }
    let part = cfg.partition;
    let step = cfg.step();
    step.validate()?;
    let per = part.steps_per_subinterval();
    let dt = part.dt();
    let t0 = rho0.time();
    let mut run = SplitRun {
        grid,
        m: cfg.m,
        partition: part,
        times: vec![t0],
        transported: vec![rho0.values().to_vec()],
        diffused: vec![rho0.values().to_vec()],
        diagnostics: Vec::with_capacity(part.subintervals),
        steps: cfg.record_steps.then(|| TrajectoryRecord::new(rho0, dt)),
    };
    let mut start = rho0.clone();
    for i in 0..part.subintervals {
        let s = t0 + i as f64 * per as f64 * dt;
        let mut diffused = start.values().to_vec();
        let mut prev: Option<Vec<f64>> = None;
        let mut max_newton = 0;
        let mut last_drift = 0.0;
        for k in 1..=per {
            let guess = extrapolate(&diffused, prev.as_deref());
            let (next, stats) = implicit_diffusion_from(&grid, &diffused, &guess, &step)?;
            prev = Some(std::mem::replace(&mut diffused, next));
            max_newton = max_newton.max(stats.iterations);
            let t = s + k as f64 * dt;
            if let Some(record) = run.steps.as_mut() {
                let field = DensityField::from_parts(grid, diffused.clone(), t);
                let (moved, diag) = pushforward(&field, v, s, t, &cfg.flow)?;
                last_drift = diag.mass_drift;
                record.push(
                    &moved,
                    StepDiagnostics {
                        time: t,
                        mass: moved.mass(),
                        newton_iterations: stats.iterations,
                        newton_residual: stats.residual,
                        mass_correction: diag.mass_drift,
                    },
                );
            }
        }
        let end = s + per as f64 * dt;
        let field = DensityField::from_parts(grid, diffused, end);
        let moved = match run.steps.as_ref() {
            Some(record) => record.last(),
            None => {
                let (moved, diag) = pushforward(&field, v, s, end, &cfg.flow)?;
                last_drift = diag.mass_drift;
                moved
            }
        };
        run.diagnostics.push(SubintervalDiagnostics {
            index: i,
            start: s,
            end,
            mass_drift: last_drift,
            w2_gap: if cfg.gap_diagnostics { coarse_w2(&moved, &field, cfg.gap_coarsening)? } else { f64::NAN },
            drift_integral: drift_integral(v, s, end),
            max_newton_iterations: max_newton,
        });
        run.times.push(end);
        run.transported.push(moved.values().to_vec());
        run.diffused.push(field.into_values());
        start = moved;
    }
    Ok(run)
}

/// Conservative first-order upwind divergence of `Vρ` with the face
/// velocities of `v` (zero on the boundary).
fn upwind_divergence(grid: &Grid, faces: &crate::grid::FaceField, rho: &[f64]) -> Vec<f64> {
    let [nx, ny] = grid.cells();
    let mut div = vec![0.0; grid.len()];
    let flux = |u: f64, left: f64, right: f64| if u >= 0.0 { u * left } else { u * right };
    for j in 0..ny {
        for i in 1..nx {
            let f = flux(faces.x[j * (nx + 1) + i], rho[grid.index(i - 1, j)], rho[grid.index(i, j)]) / grid.h(0);
            div[grid.index(i - 1, j)] += f;
            div[grid.index(i, j)] -= f;
        }
    }
    if grid.dim() == 2 {
        for j in 1..ny {
            for i in 0..nx {
                let f = flux(faces.y[j * nx + i], rho[grid.index(i, j - 1)], rho[grid.index(i, j)]) / grid.h(1);
                div[grid.index(i, j - 1)] += f;
                div[grid.index(i, j)] -= f;
            }
        }
    }
    div
}

/// Face CFL number `dt·Σ_axes max|u|/h`.
pub(crate) fn cfl_ratio(grid: &Grid, faces: &crate::grid::FaceField, dt: f64) -> f64 {
    let speed = faces.max_abs();
    dt * (speed[0] / grid.h(0) + if grid.dim() == 2 { speed[1] / grid.h(1) } else { 0.0 })
}

/// One step of the monolithic scheme: explicit upwind transport by the face
/// velocities, then implicit PME diffusion started from the extrapolated guess.
pub(crate) fn upwind_implicit_step(
    grid: &Grid,
    faces: &crate::grid::FaceField,
    rho: &[f64],
    prev: Option<&[f64]>,
    cfg: &PmeStepConfig,
) -> Result<(Vec<f64>, crate::pme::NewtonStats)> {
    let ratio = cfl_ratio(grid, faces, cfg.dt);
    if ratio > 0.5 {
        return Err(Error::Cfl { ratio });
    }
    let div = upwind_divergence(grid, faces, rho);
    let rhs: Vec<f64> = rho.iter().zip(&div).map(|(r, d)| r - cfg.dt * d).collect();
    let guess = extrapolate(rho, prev);
    implicit_diffusion_from(grid, &rhs, &guess, cfg)
}

/// Reference discretization in one operator: explicit upwind transport
/// followed by implicit diffusion, `steps` steps up to time `horizon`.
/// Requires `dt·Σ_axes max|u|/h ≤ 1/2`.
pub fn monolithic_solve(
    rho0: &DensityField,
    v: &VectorFieldSpec,
    m: f64,
    horizon: f64,
    steps: usize,
) -> Result<TrajectoryRecord> {
    let grid = *rho0.grid();
    if v.grid() != &grid {
        return Err(invalid("drift and density live on different grids"));
    }
    if steps == 0 || !(horizon > 0.0) {
        return Err(invalid("monolithic solve needs a positive horizon and step count"));
    }
    let dt = horizon / steps as f64;
    let cfg = PmeStepConfig::new(m, dt)?;
    let mut record = TrajectoryRecord::new(rho0, dt);
    let mut rho = rho0.values().to_vec();
    let mut prev: Option<Vec<f64>> = None;
    let t0 = rho0.time();
    for k in 0..steps {
        let t = t0 + k as f64 * dt;
        let faces = v.face_velocities(&grid, t);
        let (next, stats) = upwind_implicit_step(&grid, &faces, &rho, prev.as_deref(), &cfg)?;
        prev = Some(std::mem::replace(&mut rho, next));
        let field = DensityField::from_parts(grid, rho.clone(), t + dt);
        record.push(
            &field,
            StepDiagnostics {
                time: t + dt,
                mass: field.mass(),
                newton_iterations: stats.iterations,
                newton_residual: stats.residual,
                mass_correction: 0.0,
            },
        );
    }
    Ok(record)
}

/// Smooth space-time test function `φ(x,t) = a(ξ)·b(η)·τ(t)` on the box with
/// `a(ξ) = (1 + c₀ξ)cos(k₀πξ)`, `b(η) = (1 + c₁η)cos(k₁πη)` and
/// `τ(t) = cos(ω t)`, in box-relative coordinates.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TestFunction {
    pub waves: [u32; 2],
    pub slope: [f64; 2],
    pub frequency: f64,
}

impl TestFunction {
    pub const ONE: TestFunction = TestFunction { waves: [0, 0], slope: [0.0, 0.0], frequency: 0.0 };

    /// A small default family with mixed spatial and temporal structure.
    pub fn family() -> Vec<TestFunction> {
        vec![
            TestFunction { waves: [1, 0], slope: [0.0, 0.0], frequency: 1.0 },
            TestFunction { waves: [0, 1], slope: [0.5, 0.0], frequency: 0.0 },
            TestFunction { waves: [2, 1], slope: [0.0, -0.3], frequency: 2.0 },
            TestFunction { waves: [1, 2], slope: [0.4, 0.4], frequency: 3.0 },
        ]
    }

    fn factor(k: u32, c: f64, s: f64) -> (f64, f64) {
        let w = k as f64 * std::f64::consts::PI;
        let value = (1.0 + c * s) * (w * s).cos();
        let slope = c * (w * s).cos() - (1.0 + c * s) * w * (w * s).sin();
        (value, slope)
    }

    /// `(φ, ∇φ)` at `(x, t)` on `grid`'s box.
    pub fn eval(&self, grid: &Grid, x: Point, t: f64) -> (f64, Point) {
        let (lo, hi) = (grid.lower(), grid.upper());
        let len = [hi[0] - lo[0], hi[1] - lo[1]];
        let (a, da) = Self::factor(self.waves[0], self.slope[0], (x[0] - lo[0]) / len[0]);
        let (b, db) = if grid.dim() == 2 {
            Self::factor(self.waves[1], self.slope[1], (x[1] - lo[1]) / len[1])
        } else {
            (1.0, 0.0)
        };
        let tau = (self.frequency * t).cos();
        (a * b * tau, [da / len[0] * b * tau, a * db / len[1] * tau])
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WeakFormReport {
    pub residuals: Vec<f64>,
    pub max_residual: f64,
}

/// Discrete weak-form residual of a trajectory against each test function:
///
/// `∫ρ⁰φ⁰ − ∫ρᴹφᴹ + Σₖ [∫ρᵏ(φᵏ⁺¹ − φᵏ) − dt∫∇(ρᵏ⁺¹)^m·∇φᵏ⁺¹ + dt∫ρᵏVᵏ·∇φᵏ]`.
///
/// The diffusion term is assembled on faces, so `φ ≡ 1` reduces exactly to
/// mass conservation.
pub fn weak_form_residual(
    traj: &TrajectoryRecord,
    v: &VectorFieldSpec,
    m: f64,
    tests: &[TestFunction],
) -> Result<WeakFormReport> {
    let grid = traj.grid;
    if v.grid() != &grid {
        return Err(invalid("drift and trajectory live on different grids"));
    }
    if traj.steps() == 0 {
        return Err(invalid("weak-form residual needs at least one step"));
    }
    let centers = grid.centers();
    let vol = grid.cell_volume();
    let mut residuals = Vec::with_capacity(tests.len());
    for test in tests {
        let sample = |t: f64| -> (Vec<f64>, Vec<Point>) { centers.iter().map(|&x| test.eval(&grid, x, t)).unzip() };
        let dot = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>() * vol;
        let (phi0, _) = sample(traj.times[0]);
        let (phi_end, _) = sample(*traj.times.last().unwrap());
        let mut total = dot(&traj.fields[0], &phi0) - dot(traj.fields.last().unwrap(), &phi_end);
        let (mut phi, mut grad) = sample(traj.times[0]);
        for k in 0..traj.steps() {
            let dt = traj.times[k + 1] - traj.times[k];
            let (phi_next, grad_next) = sample(traj.times[k + 1]);
            let rho = &traj.fields[k];
            let change: Vec<f64> = phi_next.iter().zip(&phi).map(|(a, b)| a - b).collect();
            total += dot(rho, &change);
            let pressure: Vec<f64> = traj.fields[k + 1].iter().map(|r| r.max(0.0).powf(m)).collect();
            total -= dt * face_product(&grid, &pressure, &phi_next);
            let mut advect = 0.0;
            for (c, x) in centers.iter().enumerate() {
                let vel = v.eval(*x, traj.times[k]);
                advect += rho[c] * (vel[0] * grad[c][0] + vel[1] * grad[c][1]);
            }
            total += dt * advect * vol;
            phi = phi_next;
            grad = grad_next;
        }
        residuals.push(total.abs());
    }
    let max_residual = residuals.iter().copied().fold(0.0, f64::max);
    Ok(WeakFormReport { residuals, max_residual })
}

/// Face-based `∫∇u·∇w` with zero boundary fluxes.
fn face_product(grid: &Grid, u: &[f64], w: &[f64]) -> f64 {
    let gu = grid.face_gradient(u);
    let gw = grid.face_gradient(w);
    let vol = grid.cell_volume();
    let sx: f64 = gu.x.iter().zip(&gw.x).map(|(a, b)| a * b).sum();
    let sy: f64 = gu.y.iter().zip(&gw.y).map(|(a, b)| a * b).sum();
    (sx + sy) * vol
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RefinementReport {
    pub n: Vec<usize>,
    /// `W₂(ρₙ(T), ρ_mono(T))`.
    pub to_reference: Vec<f64>,
    /// `W₂(ρₙ(T), ρ₂ₙ(T))` for consecutive pairs of the list.
    pub successive: Vec<f64>,
    pub rate_reference: f64,
    pub rate_successive: f64,
    /// Distances to the reference are nonincreasing in `n` within 10%.
    pub monotone: bool,
}

/// Least-squares slope of `−log y` against `log x`.
pub fn fit_rate(x: &[f64], y: &[f64]) -> f64 {
    let pts: Vec<(f64, f64)> =
        x.iter().zip(y).filter(|(_, b)| **b > 0.0 && b.is_finite()).map(|(a, b)| (a.ln(), -b.ln())).collect();
    if pts.len() < 2 {
        return f64::NAN;
    }
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    sxy / sxx
}

/// Splitting runs for each `n`, all with `steps` PME steps, against the
/// monolithic reference with the same step. Distances are measured after
/// block-averaging by `coarsen` cells per axis.
pub fn splitting_refinement_study(
    rho0: &DensityField,
    v: &VectorFieldSpec,
    m: f64,
    horizon: f64,
    steps: usize,
    ns: &[usize],
    coarsen: usize,
) -> Result<RefinementReport> {
    if ns.is_empty() {
        return Err(invalid("refinement study needs at least one n"));
    }
    let grid = *rho0.grid();
    let reference = monolithic_solve(rho0, v, m, horizon, steps)?.last();
    let mut terminals = Vec::with_capacity(ns.len());
    for &n in ns {
        let mut cfg = SplitConfig::new(&grid, m, TimePartition::new(horizon, steps, n)?)?;
        cfg.gap_diagnostics = false;
        terminals.push(split_solve(rho0, v, &cfg)?.terminal());
    }
    let to_reference = terminals.iter().map(|t| coarse_w2(t, &reference, coarsen)).collect::<Result<Vec<_>>>()?;
    let successive =
        terminals.windows(2).map(|w| coarse_w2(&w[0], &w[1], coarsen)).collect::<Result<Vec<_>>>()?;
    let xs: Vec<f64> = ns.iter().map(|n| *n as f64).collect();
    let monotone = to_reference.windows(2).all(|w| w[1] <= 1.1 * w[0]);
    Ok(RefinementReport {
        n: ns.to_vec(),
        rate_reference: fit_rate(&xs, &to_reference),
        rate_successive: fit_rate(&xs[..successive.len()], &successive),
        to_reference,
        successive,
        monotone,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::flow::DriftKind;
    use crate::pme::pme_run;

    fn bump_1d(g: Grid) -> DensityField {
        DensityField::from_fn(g, |p| (0.09 - (p[0] - 0.4).powi(2)).max(0.0)).unwrap()
    }

    #[test]
    fn zero_drift_reduces_to_pme() {
        let g = Grid::unit(1, 48).unwrap();
        let rho = bump_1d(g);
        let v = VectorFieldSpec::zero(&g);
        let pme = pme_run(&rho, &PmeStepConfig::new(2.0, 0.005).unwrap(), 8).unwrap();
        for n in [1, 2, 4, 8] {
            let run = split_solve(&rho, &v, &SplitConfig::new(&g, 2.0, TimePartition::new(0.04, 8, n).unwrap()).unwrap())
                .unwrap();
            for (a, b) in run.terminal().values().iter().zip(pme.last().values()) {
                assert!((a - b).abs() < 1e-14);
            }
            assert!(run.diagnostics.iter().all(|d| d.w2_gap < 1e-12));
        }
        let mono = monolithic_solve(&rho, &v, 2.0, 0.04, 8).unwrap();
        for (a, b) in mono.last().values().iter().zip(pme.last().values()) {
            assert!((a - b).abs() < 1e-12);
        }
        let r = splitting_refinement_study(&rho, &v, 2.0, 0.04, 8, &[2, 4, 8], 1).unwrap();
        assert!(r.to_reference.iter().all(|d| *d < 1e-10));
    }

    #[test]
    fn near_linear_diffusion_matches_heat_oracle() {
        // Separate oracle: implicit heat equation by dense Gaussian elimination.
        let g = Grid::unit(1, 32).unwrap();
        let rho = bump_1d(g);
        let (dt, steps) = (0.002, 10);
        let h = g.h(0);
        let n = g.len();
        let mut u = rho.values().to_vec();
        for _ in 0..steps {
            let mut a = vec![vec![0.0; n]; n];
            for i in 0..n {
                a[i][i] = 1.0;
                for j in [i.wrapping_sub(1), i + 1] {
                    if j < n {
                        a[i][i] += dt / (h * h);
                        a[i][j] -= dt / (h * h);
                    }
                }
            }
            for c in 0..n {
                for r in c + 1..n {
                    let f = a[r][c] / a[c][c];
                    for k in c..n {
                        a[r][k] -= f * a[c][k];
                    }
                    u[r] -= f * u[c];
                }
            }
            for r in (0..n).rev() {
                let s: f64 = (r + 1..n).map(|k| a[r][k] * u[k]).sum();
                u[r] = (u[r] - s) / a[r][r];
            }
        }
        let cfg = SplitConfig::new(&g, 1.0 + 1e-6, TimePartition::new(dt * steps as f64, steps, 2).unwrap()).unwrap();
        let run = split_solve(&rho, &VectorFieldSpec::zero(&g), &cfg).unwrap();
        let l1: f64 = run.terminal().values().iter().zip(&u).map(|(a, b)| (a - b).abs()).sum::<f64>() * h;
        assert!(l1 < 1e-4, "{l1}");
    }

    #[test]
    fn monolithic_mass_and_cfl() {
        let g = Grid::unit(2, 16).unwrap();
        let rho = DensityField::from_fn(g, |p| 1.0 + 0.5 * (3.0 * p[0]).sin() * p[1]).unwrap();
        let v = VectorFieldSpec::new(DriftKind::Rotation { amplitude: 1.0 }, &g).unwrap();
        let traj = monolithic_solve(&rho, &v, 2.0, 1.0, 1000).unwrap();
        for w in traj.masses().windows(2) {
            assert!(((w[1] - w[0]) / w[0]).abs() < 1e-12);
        }
        assert!((traj.last().mass() - 1.0).abs() < 1e-9);
        assert!(matches!(monolithic_solve(&rho, &v, 2.0, 1.0, 10), Err(Error::Cfl { .. })));

        let uniform = DensityField::uniform(g);
        let out = monolithic_solve(&uniform, &v, 2.0, 0.01, 10).unwrap();
        for x in out.last().values() {
            assert!((x - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn gap_bounded_by_drift_integral() {
        let g = Grid::unit(1, 64).unwrap();
        let rho = bump_1d(g);
        let v = VectorFieldSpec::new(DriftKind::Sine { amplitude: 0.5, waves: 1 }, &g).unwrap();
        let cfg = SplitConfig::new(&g, 2.0, TimePartition::new(0.2, 40, 4).unwrap()).unwrap();
        let run = split_solve(&rho, &v, &cfg).unwrap();
        let bound = run.max_drift_integral() + 2.0 * g.h(0);
        assert!(run.diagnostics.iter().all(|d| d.w2_gap <= bound));
        for i in 0..run.times.len() {
            assert!((run.transported_at(i).mass() - 1.0).abs() < 1e-9);
            assert!((run.diffused_at(i).mass() - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn weak_form_of_constant_test_is_mass_balance() {
        let g = Grid::unit(1, 32).unwrap();
        let rho = bump_1d(g);
        let v = VectorFieldSpec::new(DriftKind::Sine { amplitude: 0.5, waves: 1 }, &g).unwrap();
        let traj = monolithic_solve(&rho, &v, 2.0, 0.1, 20).unwrap();
        let r = weak_form_residual(&traj, &v, 2.0, &[TestFunction::ONE]).unwrap();
        assert!(r.max_residual < 1e-12);
        let uniform = monolithic_solve(&DensityField::uniform(g), &VectorFieldSpec::zero(&g), 2.0, 0.1, 20).unwrap();
        let r = weak_form_residual(&uniform, &VectorFieldSpec::zero(&g), 2.0, &TestFunction::family()).unwrap();
        assert!(r.max_residual < 1e-12);
    }

    #[test]
    fn fit_rate_recovers_power_law() {
        let x = [4.0, 8.0, 16.0];
        let y: Vec<f64> = x.iter().map(|v: &f64| 3.0 * v.powf(-1.3)).collect();
        assert!((fit_rate(&x, &y) - 1.3).abs() < 1e-12);
    }
}
