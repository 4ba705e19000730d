//! Uniform box grids, midpoint quadrature, Neumann-consistent differences
//! and mixed space-time norms.
//!
//! Cells are stored row-major with the first axis fastest: `idx = j * nx + i`.
//! One-dimensional grids carry a single dummy cell along the second axis so
//! that points are always `[f64; 2]`.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};

pub type Point = [f64; 2];

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Grid {
    dim: usize,
    lower: [f64; 2],
    upper: [f64; 2],
    cells: [usize; 2],
    h: [f64; 2],
}

impl Grid {
    pub fn new_1d(a: f64, b: f64, n: usize) -> Result<Self> {
        Self::build(1, [a, 0.0], [b, 1.0], [n, 1])
    }

    pub fn new_2d(x: [f64; 2], y: [f64; 2], n: [usize; 2]) -> Result<Self> {
        Self::build(2, [x[0], y[0]], [x[1], y[1]], n)
    }

    /// Unit interval or unit square.
    pub fn unit(dim: usize, n: usize) -> Result<Self> {
        match dim {
            1 => Self::new_1d(0.0, 1.0, n),
            2 => Self::new_2d([0.0, 1.0], [0.0, 1.0], [n, n]),
            _ => Err(invalid(format!("dimension must be 1 or 2, got {dim}"))),
        }
    }

    fn build(dim: usize, lower: [f64; 2], upper: [f64; 2], cells: [usize; 2]) -> Result<Self> {
        for axis in 0..dim {
            if !(lower[axis].is_finite() && upper[axis].is_finite()) || upper[axis] <= lower[axis] {
                return Err(invalid(format!(
                    "axis {axis}: extent [{}, {}] is empty or not finite",
                    lower[axis], upper[axis]
                )));
            }
            if cells[axis] < 4 {
                return Err(invalid(format!("axis {axis}: need at least 4 cells, got {}", cells[axis])));
            }
        }
        let mut h = [1.0; 2];
        for axis in 0..dim {
            h[axis] = (upper[axis] - lower[axis]) / cells[axis] as f64;
        }
        Ok(Grid { dim, lower, upper, cells, h })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn cells(&self) -> [usize; 2] {
        self.cells
    }

    pub fn len(&self) -> usize {
        self.cells[0] * self.cells[1]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn h(&self, axis: usize) -> f64 {
        self.h[axis]
    }

    /// Smallest cell width over the active axes.
    pub fn h_min(&self) -> f64 {
        (0..self.dim).map(|a| self.h[a]).fold(f64::INFINITY, f64::min)
    }

    pub fn h_max(&self) -> f64 {
        (0..self.dim).map(|a| self.h[a]).fold(0.0, f64::max)
    }

    pub fn lower(&self) -> Point {
        self.lower
    }

    pub fn upper(&self) -> Point {
        self.upper
    }

    pub fn cell_volume(&self) -> f64 {
        (0..self.dim).map(|a| self.h[a]).product()
    }

    pub fn volume(&self) -> f64 {
        (0..self.dim).map(|a| self.upper[a] - self.lower[a]).product()
    }

    pub fn index(&self, i: usize, j: usize) -> usize {
        j * self.cells[0] + i
    }

    pub fn coords(&self, idx: usize) -> (usize, usize) {
        (idx % self.cells[0], idx / self.cells[0])
    }

    pub fn center(&self, idx: usize) -> Point {
        let (i, j) = self.coords(idx);
        let x = self.lower[0] + (i as f64 + 0.5) * self.h[0];
        let y = if self.dim == 2 { self.lower[1] + (j as f64 + 0.5) * self.h[1] } else { 0.0 };
        [x, y]
    }

    pub fn centers(&self) -> Vec<Point> {
        (0..self.len()).map(|k| self.center(k)).collect()
    }

    /// Evaluates `f` at every cell center.
    pub fn sample(&self, f: impl Fn(Point) -> f64) -> Vec<f64> {
        (0..self.len()).map(|k| f(self.center(k))).collect()
    }

    /// Same box with twice the cells per active axis.
    pub fn refined(&self) -> Grid {
        let mut cells = self.cells;
        for c in cells.iter_mut().take(self.dim) {
            *c *= 2;
        }
        Self::build(self.dim, self.lower, self.upper, cells).expect("refining a valid grid")
    }

    /// Same box with `factor` times fewer cells per active axis.
    pub fn coarsened(&self, factor: usize) -> Result<Grid> {
        let mut cells = self.cells;
        for c in cells.iter_mut().take(self.dim) {
            if factor == 0 || *c % factor != 0 {
                return Err(invalid(format!("cannot coarsen {c} cells by {factor}")));
            }
            *c /= factor;
        }
        Self::build(self.dim, self.lower, self.upper, cells)
    }

    /// Euclidean distance between points, restricted to the active axes.
    pub fn distance(&self, a: Point, b: Point) -> f64 {
        (0..self.dim).map(|k| (a[k] - b[k]).powi(2)).sum::<f64>().sqrt()
    }

    /// Projects `p` onto the closed box; returns the projection and how far it moved.
    pub fn clamp(&self, p: Point) -> (Point, f64) {
        let mut q = p;
        for axis in 0..self.dim {
            q[axis] = p[axis].clamp(self.lower[axis], self.upper[axis]);
        }
        let moved = self.distance(p, q);
        (q, moved)
    }

    /// Midpoint rule: `sum f * |cell|`.
    pub fn integrate(&self, f: &[f64]) -> f64 {
        debug_assert_eq!(f.len(), self.len());
        f.iter().sum::<f64>() * self.cell_volume()
    }

    /// Cell-centered gradient. Central differences in the interior; on a
    /// boundary cell the normal component is zero, the value a mirror ghost
    /// assigns to the boundary face.
    pub fn gradient(&self, f: &[f64]) -> Vec<Point> {
        let [nx, ny] = self.cells;
        let mut out = vec![[0.0; 2]; self.len()];
        for j in 0..ny {
            for i in 0..nx {
                let k = self.index(i, j);
                if i > 0 && i + 1 < nx {
                    out[k][0] = (f[k + 1] - f[k - 1]) / (2.0 * self.h[0]);
                }
                if self.dim == 2 && j > 0 && j + 1 < ny {
                    out[k][1] = (f[k + nx] - f[k - nx]) / (2.0 * self.h[1]);
                }
            }
        }
        out
    }

    /// Face-normal differences `(f_right - f_left) / h`; boundary faces carry zero.
    pub fn face_gradient(&self, f: &[f64]) -> FaceField {
        let mut faces = FaceField::zeros(self);
        let [nx, ny] = self.cells;
        for j in 0..ny {
            for i in 1..nx {
                let k = self.index(i, j);
                faces.x[j * (nx + 1) + i] = (f[k] - f[k - 1]) / self.h[0];
            }
        }
        if self.dim == 2 {
            for j in 1..ny {
                for i in 0..nx {
                    let k = self.index(i, j);
                    faces.y[j * nx + i] = (f[k] - f[k - nx]) / self.h[1];
                }
            }
        }
        faces
    }

    /// Discrete `∫|∇f|²` built from interior face differences.
    pub fn dirichlet_energy(&self, f: &[f64]) -> f64 {
        let faces = self.face_gradient(f);
        let sq: f64 = faces.x.iter().chain(faces.y.iter()).map(|g| g * g).sum();
        sq * self.cell_volume()
    }

    /// Two-point Neumann Laplacian: `sum over faces (f_nb - f) / h²`.
    pub fn laplacian(&self, f: &[f64]) -> Vec<f64> {
        let [nx, ny] = self.cells;
        let mut out = vec![0.0; self.len()];
        let cx = 1.0 / (self.h[0] * self.h[0]);
        let cy = 1.0 / (self.h[1] * self.h[1]);
        for j in 0..ny {
            for i in 0..nx {
                let k = self.index(i, j);
                let mut acc = 0.0;
                if i > 0 {
                    acc += (f[k - 1] - f[k]) * cx;
                }
                if i + 1 < nx {
                    acc += (f[k + 1] - f[k]) * cx;
                }
                if self.dim == 2 {
                    if j > 0 {
                        acc += (f[k - nx] - f[k]) * cy;
                    }
                    if j + 1 < ny {
                        acc += (f[k + nx] - f[k]) * cy;
                    }
                }
                out[k] = acc;
            }
        }
        out
    }

    /// Cell Hessian `[fxx, fxy, fyy]` with mirror ghosts.
    pub fn hessian(&self, f: &[f64]) -> Vec<[f64; 3]> {
        let [nx, ny] = self.cells;
        let at = |i: isize, j: isize| -> f64 {
            let ii = i.clamp(0, nx as isize - 1) as usize;
            let jj = j.clamp(0, ny as isize - 1) as usize;
            f[jj * nx + ii]
        };
        let mut out = vec![[0.0; 3]; self.len()];
        for j in 0..ny as isize {
            for i in 0..nx as isize {
                let k = (j as usize) * nx + i as usize;
                let c = at(i, j);
                out[k][0] = (at(i + 1, j) - 2.0 * c + at(i - 1, j)) / (self.h[0] * self.h[0]);
                if self.dim == 2 {
                    out[k][2] = (at(i, j + 1) - 2.0 * c + at(i, j - 1)) / (self.h[1] * self.h[1]);
                    out[k][1] = (at(i + 1, j + 1) - at(i + 1, j - 1) - at(i - 1, j + 1) + at(i - 1, j - 1))
                        / (4.0 * self.h[0] * self.h[1]);
                }
            }
        }
        out
    }
}

/// Face-centered scalar data: `x` holds `(nx+1)*ny` faces normal to the
/// first axis, `y` holds `nx*(ny+1)` faces normal to the second (empty in 1D).
#[derive(Clone, Debug, PartialEq)]
pub struct FaceField {
    pub x: Vec<f64>,
    pub y: Vec<f64>,
}

impl FaceField {
    pub fn zeros(grid: &Grid) -> Self {
        let [nx, ny] = grid.cells();
        let y = if grid.dim() == 2 { vec![0.0; nx * (ny + 1)] } else { Vec::new() };
        FaceField { x: vec![0.0; (nx + 1) * ny], y }
    }

    pub fn max_abs(&self) -> [f64; 2] {
        let m = |v: &[f64]| v.iter().fold(0.0_f64, |a, b| a.max(b.abs()));
        [m(&self.x), m(&self.y)]
    }
}

/// Uniform time grid with an optional splitting sub-interval count.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TimePartition {
    pub horizon: f64,
    pub steps: usize,
    pub subintervals: usize,
}

impl TimePartition {
    pub fn new(horizon: f64, steps: usize, subintervals: usize) -> Result<Self> {
        if !(horizon > 0.0 && horizon.is_finite()) {
            return Err(invalid(format!("horizon must be positive, got {horizon}")));
        }
        if steps == 0 || subintervals == 0 {
            return Err(invalid("step and sub-interval counts must be positive"));
        }
        if steps % subintervals != 0 {
            return Err(invalid(format!(
                "sub-interval count {subintervals} must divide step count {steps}"
            )));
        }
        Ok(TimePartition { horizon, steps, subintervals })
    }

    pub fn dt(&self) -> f64 {
        self.horizon / self.steps as f64
    }

    pub fn steps_per_subinterval(&self) -> usize {
        self.steps / self.subintervals
    }
}

/// `(sum_t dt [sum_x |F|^q1 |cell|]^{q2/q1})^{1/q2}`, with a sup replacing a
/// sum whenever the matching exponent is infinite. Each slice carries weight `dt`.
pub fn mixed_norm(grid: &Grid, slices: &[Vec<f64>], dt: f64, q1: f64, q2: f64) -> Result<f64> {
    if !(q1 > 0.0) || !(q2 > 0.0) {
        return Err(invalid(format!("mixed-norm exponents must be positive, got ({q1}, {q2})")));
    }
    let vol = grid.cell_volume();
    let spatial: Vec<f64> = slices
        .iter()
        .map(|s| {
            if q1.is_infinite() {
                s.iter().fold(0.0_f64, |a, v| a.max(v.abs()))
            } else {
                (s.iter().map(|v| v.abs().powf(q1)).sum::<f64>() * vol).powf(1.0 / q1)
            }
        })
        .collect();
    if q2.is_infinite() {
        Ok(spatial.iter().cloned().fold(0.0, f64::max))
    } else {
        Ok((spatial.iter().map(|n| n.powf(q2)).sum::<f64>() * dt).powf(1.0 / q2))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn integrate_constants_and_affine() {
        let g = Grid::new_1d(0.0, 1.0, 16).unwrap();
        assert!((g.integrate(&vec![1.0; 16]) - 1.0).abs() < 1e-15);
        let g2 = Grid::new_2d([0.0, 1.0], [0.0, 2.0], [8, 8]).unwrap();
        assert!((g2.integrate(&vec![2.0; 64]) - 4.0).abs() < 1e-14);
        let g3 = Grid::new_1d(0.0, 1.0, 1000).unwrap();
        let f = g3.sample(|p| p[0]);
        assert!((g3.integrate(&f) - 0.5).abs() < 1e-12);
    }

    #[test]
    fn volume_matches_cell_sum() {
        let g = Grid::new_2d([-1.0, 2.0], [0.5, 1.25], [7, 13]).unwrap();
        let total = g.cell_volume() * g.len() as f64;
        assert!((total - g.volume()).abs() <= 1e-12 * g.volume());
        for k in 0..g.len() {
            let c = g.center(k);
            assert!(c[0] > -1.0 && c[0] < 2.0 && c[1] > 0.5 && c[1] < 1.25);
        }
    }

    #[test]
    fn rejects_bad_grids() {
        assert!(Grid::new_1d(0.0, 1.0, 3).is_err());
        assert!(Grid::new_1d(1.0, 1.0, 8).is_err());
        assert!(Grid::unit(3, 8).is_err());
        assert!(TimePartition::new(1.0, 10, 3).is_err());
    }

    #[test]
    fn gradient_cases() {
        let g = Grid::new_1d(0.0, 1.0, 101).unwrap();
        let f = g.sample(|p| p[0] * p[0]);
        let grad = g.gradient(&f);
        assert!((grad[50][0] - 1.0).abs() < 1e-10);
        assert_eq!(grad[0][0], 0.0);
        assert_eq!(grad[100][0], 0.0);
        let c = g.gradient(&vec![3.0; 101]);
        assert!(c.iter().all(|v| v[0] == 0.0));

        let g2 = Grid::unit(2, 8).unwrap();
        let f2 = g2.sample(|p| p[0].sin() + p[1] * p[1]);
        let grad2 = g2.gradient(&f2);
        for j in 0..8 {
            assert_eq!(grad2[g2.index(0, j)][0], 0.0);
            assert_eq!(grad2[g2.index(7, j)][0], 0.0);
            assert_eq!(grad2[g2.index(j, 0)][1], 0.0);
            assert_eq!(grad2[g2.index(j, 7)][1], 0.0);
        }
    }

    #[test]
    fn laplacian_conserves() {
        let g = Grid::unit(2, 9).unwrap();
        let f = g.sample(|p| (3.0 * p[0]).exp() * p[1]);
        assert!(g.integrate(&g.laplacian(&f)).abs() < 1e-10);
    }

    #[test]
    fn mixed_norm_examples() {
        let g = Grid::unit(1, 10).unwrap();
        let ones = vec![vec![1.0; 10]; 20];
        for (a, b) in [(1.0, 1.0), (2.0, 5.0), (f64::INFINITY, 3.0), (1.5, f64::INFINITY)] {
            assert!((mixed_norm(&g, &ones, 0.05, a, b).unwrap() - 1.0).abs() < 1e-12);
        }
        let twos = vec![vec![2.0; 10]; 20];
        assert!((mixed_norm(&g, &twos, 0.05, 2.0, 4.0).unwrap() - 2.0).abs() < 1e-12);

        let m = 400;
        let dt = 1.0 / m as f64;
        let f: Vec<Vec<f64>> = (1..=m).map(|k| vec![k as f64 * dt; 10]).collect();
        let v = mixed_norm(&g, &f, dt, f64::INFINITY, 2.0).unwrap();
        assert!((v - 1.0 / 3f64.sqrt()).abs() < dt);
        assert!(mixed_norm(&g, &f, dt, 0.0, 2.0).is_err());
        assert!(mixed_norm(&g, &f, dt, 1.0, -1.0).is_err());
    }

    fn field_strategy() -> impl Strategy<Value = Vec<Vec<f64>>> {
        proptest::collection::vec(proptest::collection::vec(-3.0f64..3.0, 8), 5)
    }

    proptest! {
        #[test]
        fn integrate_is_linear(a in -5.0f64..5.0, b in -5.0f64..5.0,
                               f in proptest::collection::vec(-2.0f64..2.0, 8),
                               g in proptest::collection::vec(-2.0f64..2.0, 8)) {
            let grid = Grid::new_1d(0.0, 2.0, 8).unwrap();
            let comb: Vec<f64> = f.iter().zip(&g).map(|(x, y)| a * x + b * y).collect();
            let lhs = grid.integrate(&comb);
            let rhs = a * grid.integrate(&f) + b * grid.integrate(&g);
            prop_assert!((lhs - rhs).abs() <= 1e-12 * (1.0 + lhs.abs().max(rhs.abs())));
        }

        #[test]
        fn diagonal_mixed_norm_is_flat_norm(f in field_strategy(), q in 1.0f64..6.0) {
            let grid = Grid::unit(1, 8).unwrap();
            let dt = 0.2;
            let flat: f64 = f.iter().flatten().map(|v| v.abs().powf(q)).sum::<f64>()
                * grid.cell_volume() * dt;
            let flat = flat.powf(1.0 / q);
            let mixed = mixed_norm(&grid, &f, dt, q, q).unwrap();
            prop_assert!((mixed - flat).abs() <= 1e-12 * flat.max(1e-300));
        }

        #[test]
        fn mixed_norm_monotone_in_exponents(f in field_strategy(),
                                            a in 1.0f64..5.0, da in 0.0f64..4.0,
                                            b in 1.0f64..5.0, db in 0.0f64..4.0) {
            let grid = Grid::unit(1, 8).unwrap();
            let small = mixed_norm(&grid, &f, 0.2, a, b).unwrap();
            let large = mixed_norm(&grid, &f, 0.2, a + da, b + db).unwrap();
            let inf = mixed_norm(&grid, &f, 0.2, f64::INFINITY, f64::INFINITY).unwrap();
            prop_assert!(small <= large * (1.0 + 1e-12));
            prop_assert!(large <= inf * (1.0 + 1e-12));
        }
    }
}
