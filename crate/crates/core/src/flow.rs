//! Drift fields, their flow maps and Jacobians, and semi-Lagrangian
//! push-forward of densities.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::grid::{FaceField, Grid, Point};
use crate::measures::DensityField;

/// Closed-form drift presets on a box, plus cell-sampled fields.
///
/// Box-relative coordinates are `ξ = (x − a₀)/L₀`, `η = (y − a₁)/L₁`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum DriftKind {
    Zero,
    /// `V ≡ velocity`.
    Constant { velocity: Point },
    /// Cellular flow `a·(sin πξ cos πη, −(L₁/L₀) cos πξ sin πη)`, the
    /// perpendicular gradient of `a(L₁/π) sin πξ sin πη`.
    Rotation { amplitude: f64 },
    /// `V = rate·(x − center)`; positive rate expands.
    Radial { rate: f64, center: Point },
    /// `V = (a cos πη, 0)` in 2D.
    Shear { amplitude: f64 },
    /// `V = (a sin(kπξ), 0)`: vanishes on the boundary, divergence of both signs.
    Sine { amplitude: f64, waves: u32 },
    /// Cell-centered samples, bilinearly interpolated.
    Sampled { values: Vec<Point> },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct StructureFlags {
    pub normal_flux_zero: bool,
    pub divergence_nonneg: bool,
    pub divergence_free: bool,
}

/// A drift bound to the box of a grid.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VectorFieldSpec {
    pub kind: DriftKind,
    grid: Grid,
    /// Sampled fields only: cell divergence and Jacobian bound.
    #[serde(skip)]
    sampled_div: Vec<f64>,
    #[serde(skip)]
    sampled_lip: f64,
}

impl VectorFieldSpec {
    pub fn new(kind: DriftKind, grid: &Grid) -> Result<Self> {
        let dim = grid.dim();
        match &kind {
            DriftKind::Rotation { amplitude } | DriftKind::Shear { amplitude } => {
                if dim != 2 {
                    return Err(invalid("rotation and shear drifts need a two-dimensional grid"));
                }
                check_finite(*amplitude)?;
            }
            DriftKind::Constant { velocity } => {
                check_finite(velocity[0])?;
                check_finite(velocity[1])?;
            }
            DriftKind::Radial { rate, center } => {
                check_finite(*rate)?;
                check_finite(center[0])?;
                check_finite(center[1])?;
            }
            DriftKind::Sine { amplitude, waves } => {
                check_finite(*amplitude)?;
                if *waves == 0 {
                    return Err(invalid("sine drift needs at least one wave"));
                }
            }
            DriftKind::Sampled { values } => {
                if values.len() != grid.len() {
                    return Err(invalid(format!("sampled drift needs {} vectors, got {}", grid.len(), values.len())));
                }
                for v in values {
                    check_finite(v[0])?;
                    check_finite(v[1])?;
                }
            }
            DriftKind::Zero => {}
        }
        let mut spec = VectorFieldSpec { kind, grid: *grid, sampled_div: Vec::new(), sampled_lip: 0.0 };
        if let DriftKind::Sampled { values } = &spec.kind {
            let (div, lip) = sampled_derivatives(grid, values);
            spec.sampled_div = div;
            spec.sampled_lip = lip;
        }
        Ok(spec)
    }

    pub fn zero(grid: &Grid) -> Self {
        Self::new(DriftKind::Zero, grid).expect("zero drift is always valid")
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    fn lengths(&self) -> [f64; 2] {
        let (lo, hi) = (self.grid.lower(), self.grid.upper());
        [hi[0] - lo[0], hi[1] - lo[1]]
    }

    fn rel(&self, x: Point) -> Point {
        let lo = self.grid.lower();
        let l = self.lengths();
        [(x[0] - lo[0]) / l[0], (x[1] - lo[1]) / l[1]]
    }

    /// `V(x, t)`; the presets are autonomous.
    pub fn eval(&self, x: Point, _t: f64) -> Point {
        use std::f64::consts::PI;
        let dim = self.grid.dim();
        let v = match &self.kind {
            DriftKind::Zero => [0.0, 0.0],
            DriftKind::Constant { velocity } => *velocity,
            DriftKind::Rotation { amplitude } => {
                let [xi, eta] = self.rel(x);
                let l = self.lengths();
                [
                    amplitude * (PI * xi).sin() * (PI * eta).cos(),
                    -amplitude * (l[1] / l[0]) * (PI * xi).cos() * (PI * eta).sin(),
                ]
            }
            DriftKind::Radial { rate, center } => [rate * (x[0] - center[0]), rate * (x[1] - center[1])],
            DriftKind::Shear { amplitude } => [amplitude * (PI * self.rel(x)[1]).cos(), 0.0],
            DriftKind::Sine { amplitude, waves } => [amplitude * (*waves as f64 * PI * self.rel(x)[0]).sin(), 0.0],
            DriftKind::Sampled { values } => {
                let vx: Vec<f64> = values.iter().map(|v| v[0]).collect();
                let vy: Vec<f64> = values.iter().map(|v| v[1]).collect();
                [interpolate(&self.grid, &vx, x), interpolate(&self.grid, &vy, x)]
            }
        };
        if dim == 1 {
            [v[0], 0.0]
        } else {
            v
        }
    }

    pub fn divergence(&self, x: Point, _t: f64) -> f64 {
        use std::f64::consts::PI;
        match &self.kind {
            DriftKind::Zero | DriftKind::Constant { .. } | DriftKind::Rotation { .. } | DriftKind::Shear { .. } => 0.0,
            DriftKind::Radial { rate, .. } => rate * self.grid.dim() as f64,
            DriftKind::Sine { amplitude, waves } => {
                let k = *waves as f64 * PI;
                amplitude * k / self.lengths()[0] * (k * self.rel(x)[0]).cos()
            }
            DriftKind::Sampled { .. } => interpolate(&self.grid, &self.sampled_div, x),
        }
    }

    /// Global Lipschitz bound of `V(·, t)` in `x`.
    pub fn lipschitz(&self, _t: f64) -> f64 {
        use std::f64::consts::PI;
        let l = self.lengths();
        match &self.kind {
            DriftKind::Zero | DriftKind::Constant { .. } => 0.0,
            DriftKind::Rotation { amplitude } => {
                let a = amplitude.abs() * PI;
                a * (2.0 / (l[0] * l[0]) + 1.0 / (l[1] * l[1]) + (l[1] / (l[0] * l[0])).powi(2)).sqrt()
            }
            DriftKind::Radial { rate, .. } => rate.abs(),
            DriftKind::Shear { amplitude } => amplitude.abs() * PI / l[1],
            DriftKind::Sine { amplitude, waves } => amplitude.abs() * *waves as f64 * PI / l[0],
            DriftKind::Sampled { .. } => self.sampled_lip,
        }
    }

    /// `‖V(t)‖_∞` over the box.
    pub fn sup_norm(&self, _t: f64) -> f64 {
        let l = self.lengths();
        let lo = self.grid.lower();
        let hi = self.grid.upper();
        match &self.kind {
            DriftKind::Zero => 0.0,
            DriftKind::Constant { velocity } => {
                if self.grid.dim() == 1 {
                    velocity[0].abs()
                } else {
                    velocity[0].hypot(velocity[1])
                }
            }
            DriftKind::Rotation { amplitude } => amplitude.abs() * (l[1] / l[0]).max(1.0),
            DriftKind::Radial { rate, center } => {
                let mut far = 0.0_f64;
                for x in [lo[0], hi[0]] {
                    for y in [lo[1], hi[1]] {
                        let dy = if self.grid.dim() == 2 { y - center[1] } else { 0.0 };
                        far = far.max((x - center[0]).hypot(dy));
                    }
                }
                rate.abs() * far
            }
            DriftKind::Shear { amplitude } | DriftKind::Sine { amplitude, .. } => amplitude.abs(),
            DriftKind::Sampled { values } => values.iter().map(|v| v[0].hypot(v[1])).fold(0.0, f64::max),
        }
    }

    /// `‖∇·V(t)‖_∞`.
    pub fn divergence_sup(&self, _t: f64) -> f64 {
        use std::f64::consts::PI;
        match &self.kind {
            DriftKind::Radial { rate, .. } => rate.abs() * self.grid.dim() as f64,
            DriftKind::Sine { amplitude, waves } => amplitude.abs() * *waves as f64 * PI / self.lengths()[0],
            DriftKind::Sampled { .. } => self.sampled_div.iter().fold(0.0_f64, |a, b| a.max(b.abs())),
            _ => 0.0,
        }
    }

    pub fn flags(&self) -> StructureFlags {
        let vanishing = |v: f64| v == 0.0;
        match &self.kind {
            DriftKind::Zero | DriftKind::Rotation { .. } => {
                StructureFlags { normal_flux_zero: true, divergence_nonneg: true, divergence_free: true }
            }
            DriftKind::Constant { velocity } => StructureFlags {
                normal_flux_zero: vanishing(velocity[0]) && (self.grid.dim() == 1 || vanishing(velocity[1])),
                divergence_nonneg: true,
                divergence_free: true,
            },
            DriftKind::Radial { rate, .. } => StructureFlags {
                normal_flux_zero: vanishing(*rate),
                divergence_nonneg: *rate >= 0.0,
                divergence_free: vanishing(*rate),
            },
            DriftKind::Shear { amplitude } => StructureFlags {
                normal_flux_zero: vanishing(*amplitude),
                divergence_nonneg: true,
                divergence_free: true,
            },
            DriftKind::Sine { amplitude, .. } => StructureFlags {
                normal_flux_zero: true,
                divergence_nonneg: vanishing(*amplitude),
                divergence_free: vanishing(*amplitude),
            },
            DriftKind::Sampled { .. } => {
                let scale = self.sup_norm(0.0).max(f64::MIN_POSITIVE);
                let div_scale = self.divergence_sup(0.0);
                StructureFlags {
                    normal_flux_zero: self.max_boundary_normal() <= 1e-10 * scale,
                    divergence_nonneg: self.sampled_div.iter().all(|d| *d >= -1e-12 * div_scale.max(1.0)),
                    divergence_free: div_scale <= 1e-12,
                }
            }
        }
    }

    /// Stream function `Ψ` with `V = (∂_yΨ, −∂_xΨ)` when one is known in closed form.
    pub fn stream_function(&self, x: Point) -> Option<f64> {
        use std::f64::consts::PI;
        match &self.kind {
            DriftKind::Rotation { amplitude } => {
                let [xi, eta] = self.rel(x);
                Some(amplitude * self.lengths()[1] / PI * (PI * xi).sin() * (PI * eta).sin())
            }
            _ => None,
        }
    }

    /// Largest `|V·n|` sampled at boundary face centers.
    pub fn max_boundary_normal(&self) -> f64 {
        let g = &self.grid;
        let (lo, hi) = (g.lower(), g.upper());
        let [nx, ny] = g.cells();
        let mut worst = 0.0_f64;
        for j in 0..ny {
            let y = g.center(g.index(0, j))[1];
            worst = worst.max(self.eval([lo[0], y], 0.0)[0].abs()).max(self.eval([hi[0], y], 0.0)[0].abs());
        }
        if g.dim() == 2 {
            for i in 0..nx {
                let x = g.center(g.index(i, 0))[0];
                worst = worst.max(self.eval([x, lo[1]], 0.0)[1].abs()).max(self.eval([x, hi[1]], 0.0)[1].abs());
            }
        }
        worst
    }

    /// Face-averaged normal velocities on `grid`, zero on boundary faces.
    /// Uses the stream function when available so that the discrete
    /// divergence of a divergence-free preset vanishes exactly.
    pub fn face_velocities(&self, grid: &Grid, t: f64) -> FaceField {
        let mut faces = FaceField::zeros(grid);
        let [nx, ny] = grid.cells();
        let (lo, h) = (grid.lower(), [grid.h(0), grid.h(1)]);
        let corner = |i: usize, j: usize| [lo[0] + i as f64 * h[0], lo[1] + j as f64 * h[1]];
        let has_stream = grid.dim() == 2 && self.stream_function(lo).is_some();
        for j in 0..ny {
            for i in 1..nx {
                faces.x[j * (nx + 1) + i] = if has_stream {
                    let top = self.stream_function(corner(i, j + 1)).unwrap();
                    let bottom = self.stream_function(corner(i, j)).unwrap();
                    (top - bottom) / h[1]
                } else {
                    let c = grid.center(grid.index(i, j));
                    self.eval([corner(i, j)[0], c[1]], t)[0]
                };
            }
        }
        if grid.dim() == 2 {
            for j in 1..ny {
                for i in 0..nx {
                    faces.y[j * nx + i] = if has_stream {
                        let right = self.stream_function(corner(i + 1, j)).unwrap();
                        let left = self.stream_function(corner(i, j)).unwrap();
                        -(right - left) / h[0]
                    } else {
                        let c = grid.center(grid.index(i, j));
                        self.eval([c[0], corner(i, j)[1]], t)[1]
                    };
                }
            }
        }
        faces
    }

    pub fn cell_values(&self, grid: &Grid, t: f64) -> Vec<Point> {
        (0..grid.len()).map(|k| self.eval(grid.center(k), t)).collect()
    }
}

fn check_finite(v: f64) -> Result<()> {
    if v.is_finite() {
        Ok(())
    } else {
        Err(invalid(format!("drift coefficient must be finite, got {v}")))
    }
}

fn sampled_derivatives(grid: &Grid, values: &[Point]) -> (Vec<f64>, f64) {
    let vx: Vec<f64> = values.iter().map(|v| v[0]).collect();
    let vy: Vec<f64> = values.iter().map(|v| v[1]).collect();
    let gx = one_sided_gradient(grid, &vx);
    let gy = one_sided_gradient(grid, &vy);
    let div: Vec<f64> = gx.iter().zip(&gy).map(|(a, b)| a[0] + if grid.dim() == 2 { b[1] } else { 0.0 }).collect();
    let lip = gx
        .iter()
        .zip(&gy)
        .map(|(a, b)| (a[0] * a[0] + a[1] * a[1] + b[0] * b[0] + b[1] * b[1]).sqrt())
        .fold(0.0, f64::max);
    (div, lip)
}

/// Central differences inside, one-sided on boundary cells (no mirror: the
/// samples are a vector field, not a Neumann scalar).
fn one_sided_gradient(grid: &Grid, f: &[f64]) -> Vec<Point> {
    let [nx, ny] = grid.cells();
    let mut out = vec![[0.0; 2]; grid.len()];
    for j in 0..ny {
        for i in 0..nx {
            let k = grid.index(i, j);
            let (l, r) = (if i > 0 { k - 1 } else { k }, if i + 1 < nx { k + 1 } else { k });
            let span = (r - l) as f64;
            out[k][0] = (f[r] - f[l]) / (span * grid.h(0));
            if grid.dim() == 2 {
                let (b, t) = (if j > 0 { k - nx } else { k }, if j + 1 < ny { k + nx } else { k });
                let span = ((t - b) / nx) as f64;
                out[k][1] = (f[t] - f[b]) / (span * grid.h(1));
            }
        }
    }
    out
}

/// Linear (1D) or bilinear (2D) interpolation of cell-centered data, constant
/// within the half cell next to the boundary.
pub fn interpolate(grid: &Grid, values: &[f64], x: Point) -> f64 {
    let [nx, ny] = grid.cells();
    let locate = |axis: usize, n: usize| -> (usize, usize, f64) {
        let s = (x[axis] - grid.lower()[axis]) / grid.h(axis) - 0.5;
        if s <= 0.0 {
            (0, 0, 0.0)
        } else if s >= (n - 1) as f64 {
            (n - 1, n - 1, 0.0)
        } else {
            let i0 = s.floor() as usize;
            (i0, i0 + 1, s - i0 as f64)
        }
    };
    let (i0, i1, wx) = locate(0, nx);
    if grid.dim() == 1 {
        return values[i0] * (1.0 - wx) + values[i1] * wx;
    }
    let (j0, j1, wy) = locate(1, ny);
    let v = |i: usize, j: usize| values[j * nx + i];
    (v(i0, j0) * (1.0 - wx) + v(i1, j0) * wx) * (1.0 - wy) + (v(i0, j1) * (1.0 - wx) + v(i1, j1) * wx) * wy
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FlowOptions {
    /// Upper bound on the RK4 sub-step; the effective step is also capped by `0.1/Lip`.
    pub max_step: f64,
    /// Largest total clamp displacement tolerated before failing.
    pub clamp_tolerance: f64,
}

impl FlowOptions {
    /// Sub-steps of at most `min(dt, 1e-3)` and a clamp tolerance of ten cells.
    pub fn for_grid(grid: &Grid, dt: f64) -> Self {
        FlowOptions { max_step: dt.min(1e-3), clamp_tolerance: 10.0 * grid.h_max() }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FlowSample {
    pub point: Point,
    /// `∫ ∇·V` along the trajectory, in the direction of integration.
    pub log_jacobian: f64,
    /// Total distance removed by projecting back onto the box.
    pub clamp: f64,
}

/// Integrates `dψ/dτ = V(ψ, τ)` from `(s, x)` to time `t` (either direction)
/// with classical RK4, carrying the divergence integral along.
pub fn flow_trajectory(v: &VectorFieldSpec, s: f64, t: f64, x: Point, opts: &FlowOptions) -> Result<FlowSample> {
    let span = t - s;
    if span == 0.0 {
        return Ok(FlowSample { point: x, log_jacobian: 0.0, clamp: 0.0 });
    }
    let lip = v.lipschitz(s).max(v.lipschitz(t));
    let mut cap = opts.max_step;
    if lip > 0.0 {
        cap = cap.min(0.1 / lip);
    }
    let steps = (span.abs() / cap).ceil().max(1.0) as usize;
    let h = span / steps as f64;
    let grid = *v.grid();
    let rhs = |p: Point, tau: f64| -> [f64; 3] {
        let vel = v.eval(p, tau);
        [vel[0], vel[1], v.divergence(p, tau)]
    };
    let mut p = x;
    let mut logj = 0.0;
    let mut clamp = 0.0;
    let mut tau = s;
    for _ in 0..steps {
        let k1 = rhs(p, tau);
        let k2 = rhs([p[0] + 0.5 * h * k1[0], p[1] + 0.5 * h * k1[1]], tau + 0.5 * h);
        let k3 = rhs([p[0] + 0.5 * h * k2[0], p[1] + 0.5 * h * k2[1]], tau + 0.5 * h);
        let k4 = rhs([p[0] + h * k3[0], p[1] + h * k3[1]], tau + h);
        let mut next = p;
        for c in 0..2 {
            next[c] += h / 6.0 * (k1[c] + 2.0 * k2[c] + 2.0 * k3[c] + k4[c]);
        }
        logj += h / 6.0 * (k1[2] + 2.0 * k2[2] + 2.0 * k3[2] + k4[2]);
        let (projected, moved) = grid.clamp(next);
        clamp += moved;
        if clamp > opts.clamp_tolerance {
            return Err(Error::FlowEscape { distance: clamp, tolerance: opts.clamp_tolerance });
        }
        p = projected;
        tau += h;
    }
    if grid.dim() == 1 {
        p[1] = x[1];
    }
    Ok(FlowSample { point: p, log_jacobian: logj, clamp })
}

/// `ψ(t; s, x)`.
pub fn flow_map(v: &VectorFieldSpec, s: f64, t: f64, x: Point, opts: &FlowOptions) -> Result<Point> {
    Ok(flow_trajectory(v, s, t, x, opts)?.point)
}

/// `J_{s,t}(x) = exp ∫ₛᵗ ∇·V(ψ(τ; s, x), τ) dτ`.
pub fn jacobian(v: &VectorFieldSpec, s: f64, t: f64, x: Point, opts: &FlowOptions) -> Result<f64> {
    Ok(flow_trajectory(v, s, t, x, opts)?.log_jacobian.exp())
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct PushforwardDiagnostics {
    /// Relative mass change before renormalization.
    pub mass_drift: f64,
    pub max_clamp: f64,
}

/// Semi-Lagrangian push-forward of `ϱ` from time `s` to `t`:
/// `ρ(y) = ϱ(x)/J_{s,t}(x)` with `x = ψ(s; t, y)`, then renormalized.
pub fn pushforward(
    rho: &DensityField,
    v: &VectorFieldSpec,
    s: f64,
    t: f64,
    opts: &FlowOptions,
) -> Result<(DensityField, PushforwardDiagnostics)> {
    if t < s {
        return Err(invalid(format!("push-forward runs forward in time, got s={s} > t={t}")));
    }
    let grid = *rho.grid();
    if v.grid() != &grid {
        return Err(invalid("drift and density live on different grids"));
    }
    let mut max_clamp = 0.0_f64;
    let mut values = Vec::with_capacity(grid.len());
    for k in 0..grid.len() {
        let back = flow_trajectory(v, t, s, grid.center(k), opts)?;
        max_clamp = max_clamp.max(back.clamp);
        values.push(interpolate(&grid, rho.values(), back.point) * back.log_jacobian.exp());
    }
    let mass_in = rho.mass();
    let mass_out = grid.integrate(&values);
    let scale = mass_in / mass_out;
    values.iter_mut().for_each(|x| *x *= scale);
    Ok((
        DensityField::from_parts(grid, values, t),
        PushforwardDiagnostics { mass_drift: (mass_out - mass_in) / mass_in, max_clamp },
    ))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ContractionReport {
    /// `L = ∫ₛᵗ Lip(V(τ)) dτ`.
    pub lip_integral: f64,
    pub min_ratio: f64,
    pub max_ratio: f64,
    pub lower_bound: f64,
    pub upper_bound: f64,
    pub holds: bool,
}

/// Checks `e^{−L}|x−y| ≤ |ψ(x) − ψ(y)| ≤ e^{L}|x−y|` on the given pairs.
pub fn lipschitz_contraction_check(
    v: &VectorFieldSpec,
    s: f64,
    t: f64,
    pairs: &[(Point, Point)],
    opts: &FlowOptions,
) -> Result<ContractionReport> {
    let grid = *v.grid();
    let lip_integral = 0.5 * (v.lipschitz(s) + v.lipschitz(t)) * (t - s).abs();
    let mut min_ratio = f64::INFINITY;
    let mut max_ratio = 0.0_f64;
    for &(a, b) in pairs {
        let d0 = grid.distance(a, b);
        if d0 == 0.0 {
            continue;
        }
        let d1 = grid.distance(flow_map(v, s, t, a, opts)?, flow_map(v, s, t, b, opts)?);
        min_ratio = min_ratio.min(d1 / d0);
        max_ratio = max_ratio.max(d1 / d0);
    }
    let (lower_bound, upper_bound) = ((-lip_integral).exp(), lip_integral.exp());
    let holds = min_ratio >= lower_bound - 1e-6 && max_ratio <= upper_bound + 1e-6;
    Ok(ContractionReport { lip_integral, min_ratio, max_ratio, lower_bound, upper_bound, holds })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::measures::{entropy, lq_norm};
    use proptest::prelude::*;

    fn square() -> Grid {
        Grid::unit(2, 32).unwrap()
    }

    fn opts(g: &Grid) -> FlowOptions {
        FlowOptions::for_grid(g, 1e-3)
    }

    #[test]
    fn closed_form_flows() {
        let g = square();
        let c = VectorFieldSpec::new(DriftKind::Constant { velocity: [1.0, 0.0] }, &g).unwrap();
        let p = flow_map(&c, 0.0, 0.3, [0.2, 0.5], &opts(&g)).unwrap();
        assert!((p[0] - 0.5).abs() < 1e-12 && (p[1] - 0.5).abs() < 1e-12);
        assert_eq!(flow_map(&c, 0.4, 0.4, [0.3, 0.1], &opts(&g)).unwrap(), [0.3, 0.1]);

        let line = Grid::new_1d(-1.0, 1.0, 64).unwrap();
        let sink = VectorFieldSpec::new(DriftKind::Radial { rate: -1.0, center: [0.0, 0.0] }, &line).unwrap();
        for (x0, tau) in [(0.9, 1.0), (-0.4, 0.37), (0.05, 2.5)] {
            let p = flow_map(&sink, 0.0, tau, [x0, 0.0], &opts(&line)).unwrap();
            assert!((p[0] - x0 * (-tau as f64).exp()).abs() < 1e-10);
        }

        let big = Grid::new_2d([-3.0, 3.0], [-3.0, 3.0], [16, 16]).unwrap();
        let source = VectorFieldSpec::new(DriftKind::Radial { rate: 1.0, center: [0.0, 0.0] }, &big).unwrap();
        let j = jacobian(&source, 0.0, 0.5, [0.3, -0.2], &opts(&big)).unwrap();
        assert!((j - std::f64::consts::E).abs() < 1e-8);

        let rot = VectorFieldSpec::new(DriftKind::Rotation { amplitude: 2.0 }, &g).unwrap();
        assert!((jacobian(&rot, 0.0, 0.7, [0.3, 0.6], &opts(&g)).unwrap() - 1.0).abs() < 1e-10);
    }

    #[test]
    fn structure_flags_hold() {
        let g = square();
        for kind in [
            DriftKind::Zero,
            DriftKind::Rotation { amplitude: 1.5 },
            DriftKind::Sine { amplitude: 0.7, waves: 2 },
        ] {
            let v = VectorFieldSpec::new(kind, &g).unwrap();
            let f = v.flags();
            assert!(f.normal_flux_zero);
            assert!(v.max_boundary_normal() <= 1e-10 * v.sup_norm(0.0).max(1.0));
            assert!(!f.divergence_free || f.divergence_nonneg);
        }
        let shear = VectorFieldSpec::new(DriftKind::Shear { amplitude: 1.0 }, &g).unwrap();
        assert!(!shear.flags().normal_flux_zero && shear.flags().divergence_free);
        assert!(VectorFieldSpec::new(DriftKind::Rotation { amplitude: 1.0 }, &Grid::unit(1, 8).unwrap()).is_err());
    }

    #[test]
    fn rotation_faces_are_discretely_divergence_free() {
        let g = Grid::new_2d([0.0, 2.0], [0.0, 1.0], [12, 9]).unwrap();
        let v = VectorFieldSpec::new(DriftKind::Rotation { amplitude: 1.3 }, &g).unwrap();
        let f = v.face_velocities(&g, 0.0);
        let [nx, ny] = g.cells();
        for j in 0..ny {
            for i in 0..nx {
                let div = (f.x[j * (nx + 1) + i + 1] - f.x[j * (nx + 1) + i]) / g.h(0)
                    + (f.y[(j + 1) * nx + i] - f.y[j * nx + i]) / g.h(1);
                assert!(div.abs() < 1e-12);
            }
        }
    }

    #[test]
    fn escaping_trajectories_fail() {
        let g = square();
        let shear = VectorFieldSpec::new(DriftKind::Constant { velocity: [3.0, 0.0] }, &g).unwrap();
        let r = flow_map(&shear, 0.0, 0.5, [0.5, 0.5], &opts(&g));
        assert!(matches!(r, Err(Error::FlowEscape { .. })));
    }

    #[test]
    fn fd_jacobian_oracle() {
        let g = square();
        let h = 1e-5;
        for kind in [DriftKind::Rotation { amplitude: 1.0 }, DriftKind::Sine { amplitude: 0.5, waves: 1 }] {
            let v = VectorFieldSpec::new(kind, &g).unwrap();
            let o = opts(&g);
            let x = [0.4, 0.35];
            let col = |axis: usize| {
                let mut a = x;
                let mut b = x;
                a[axis] += h;
                b[axis] -= h;
                let (pa, pb) = (flow_map(&v, 0.0, 0.3, a, &o).unwrap(), flow_map(&v, 0.0, 0.3, b, &o).unwrap());
                [(pa[0] - pb[0]) / (2.0 * h), (pa[1] - pb[1]) / (2.0 * h)]
            };
            let (c0, c1) = (col(0), col(1));
            let det = c0[0] * c1[1] - c0[1] * c1[0];
            let j = jacobian(&v, 0.0, 0.3, x, &o).unwrap();
            assert!(((det - j) / j).abs() < 1e-5, "{det} vs {j}");
        }
    }

    #[test]
    fn pushforward_cases() {
        let g = Grid::unit(1, 200).unwrap();
        let bump = DensityField::from_fn(g, |p| (0.04 - (p[0] - 0.3).powi(2)).max(0.0)).unwrap();
        let zero = VectorFieldSpec::zero(&g);
        let (same, _) = pushforward(&bump, &zero, 0.0, 0.2, &opts(&g)).unwrap();
        for (a, b) in same.values().iter().zip(bump.values()) {
            assert!((a - b).abs() < 1e-14);
        }

        let c = VectorFieldSpec::new(DriftKind::Constant { velocity: [1.0, 0.0] }, &g).unwrap();
        // Inflow characteristics leave the box; the bump never reaches them.
        let loose = FlowOptions { clamp_tolerance: 1.0, ..opts(&g) };
        let (moved, _) = pushforward(&bump, &c, 0.0, 0.25, &loose).unwrap();
        let expected = DensityField::from_fn(g, |p| (0.04 - (p[0] - 0.55).powi(2)).max(0.0)).unwrap();
        let l1: f64 = moved.values().iter().zip(expected.values()).map(|(a, b)| (a - b).abs()).sum::<f64>() * g.h(0);
        assert!(l1 < 0.02);
        let q2 = (lq_norm(&moved, 2.0).unwrap() - lq_norm(&bump, 2.0).unwrap()).abs();
        assert!(q2 < 5.0 * g.h(0) * lq_norm(&bump, 2.0).unwrap());

        // Contraction: ∫ρ log ρ = ∫ϱ log ϱ − ∫ϱ log J with J = e^{−(t−s)}.
        let line = Grid::new_1d(-1.0, 1.0, 400).unwrap();
        let wide = DensityField::from_fn(line, |p| (-(p[0] / 0.3).powi(2)).exp()).unwrap();
        let sink = VectorFieldSpec::new(DriftKind::Radial { rate: -1.0, center: [0.0, 0.0] }, &line).unwrap();
        let tau = 0.4;
        let (narrow, diag) = pushforward(&wide, &sink, 0.0, tau, &FlowOptions { clamp_tolerance: 1.0, ..opts(&line) }).unwrap();
        let predicted = entropy(&wide) + tau;
        assert!((entropy(&narrow) - predicted).abs() < 10.0 * line.h(0));
        assert!(diag.mass_drift.abs() < 10.0 * line.h(0));
    }

    #[test]
    fn contraction_examples() {
        let g = Grid::new_1d(-1.0, 1.0, 64).unwrap();
        let o = opts(&g);
        let pairs = vec![([0.1, 0.0], [0.5, 0.0]), ([-0.7, 0.0], [0.2, 0.0])];
        let c = VectorFieldSpec::new(DriftKind::Constant { velocity: [0.5, 0.0] }, &g).unwrap();
        let r = lipschitz_contraction_check(&c, 0.0, 0.2, &pairs, &o).unwrap();
        assert!((r.min_ratio - 1.0).abs() < 1e-12 && (r.max_ratio - 1.0).abs() < 1e-12);
        let sink = VectorFieldSpec::new(DriftKind::Radial { rate: -1.0, center: [0.0, 0.0] }, &g).unwrap();
        let r = lipschitz_contraction_check(&sink, 0.0, 0.6, &pairs, &o).unwrap();
        assert!((r.min_ratio - (-0.6f64).exp()).abs() < 1e-10 && (r.min_ratio - r.lower_bound).abs() < 1e-10);
        assert!(r.holds);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]
        #[test]
        fn composition_and_reciprocity(x in 0.05f64..0.95, y in 0.05f64..0.95,
                                       amp in -2.0f64..2.0, t in 0.01f64..0.5) {
            let g = square();
            let o = opts(&g);
            for kind in [DriftKind::Rotation { amplitude: amp }, DriftKind::Sine { amplitude: amp, waves: 1 }] {
                let v = VectorFieldSpec::new(kind, &g).unwrap();
                let back = flow_trajectory(&v, t, 0.0, [x, y], &o).unwrap();
                let fwd = flow_trajectory(&v, 0.0, t, back.point, &o).unwrap();
                prop_assert!(g.distance(fwd.point, [x, y]) < 1e-8);
                prop_assert!((back.log_jacobian + fwd.log_jacobian).abs() < 1e-6);
            }
        }

        #[test]
        fn lipschitz_bounds_hold(ax in 0.05f64..0.95, ay in 0.05f64..0.95,
                                 bx in 0.05f64..0.95, by in 0.05f64..0.95,
                                 amp in -2.0f64..2.0, t in 0.01f64..0.5) {
            let g = square();
            let v = VectorFieldSpec::new(DriftKind::Rotation { amplitude: amp }, &g).unwrap();
            let r = lipschitz_contraction_check(&v, 0.0, t, &[([ax, ay], [bx, by])], &opts(&g)).unwrap();
            prop_assert!(r.holds);
        }

        #[test]
        fn divergence_nonneg_lq_bound(q in 1.5f64..4.0, rate in 0.0f64..1.0) {
            let g = Grid::new_1d(-1.0, 1.0, 128).unwrap();
            let rho = DensityField::from_fn(g, |p| (-(p[0] / 0.2).powi(2)).exp()).unwrap();
            let v = VectorFieldSpec::new(DriftKind::Radial { rate, center: [0.0, 0.0] }, &g).unwrap();
            let tau = 0.2;
            let (out, _) = pushforward(&rho, &v, 0.0, tau, &opts(&g)).unwrap();
            let bound = lq_norm(&rho, q).unwrap() * ((q - 1.0) / q * v.divergence_sup(0.0) * tau).exp();
            prop_assert!(lq_norm(&out, q).unwrap() <= bound + 10.0 * g.h(0));
        }
    }
}
