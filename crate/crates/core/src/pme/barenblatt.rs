use crate::error::{invalid, Result};
use crate::grid::{Grid, Point};
use crate::measures::DensityField;

const GL8_NODES: [f64; 8] = [
    -0.960_289_856_497_536_3,
    -0.796_666_477_413_626_7,
    -0.525_532_409_916_329_0,
    -0.183_434_642_495_649_8,
    0.183_434_642_495_649_8,
    0.525_532_409_916_329_0,
    0.796_666_477_413_626_7,
    0.960_289_856_497_536_3,
];
const GL8_WEIGHTS: [f64; 8] = [
    0.101_228_536_290_376_3,
    0.222_381_034_453_374_5,
    0.313_706_645_877_887_3,
    0.362_683_783_378_362_0,
    0.362_683_783_378_362_0,
    0.313_706_645_877_887_3,
    0.222_381_034_453_374_5,
    0.101_228_536_290_376_3,
];

fn gauss(a: f64, b: f64, f: &impl Fn(f64) -> f64) -> f64 {
    let (mid, half) = (0.5 * (a + b), 0.5 * (b - a));
    GL8_NODES.iter().zip(GL8_WEIGHTS).map(|(x, w)| w * f(mid + half * x)).sum::<f64>() * half
}

/// Source-type self-similar solution of `∂ₜϱ = Δϱ^m` with unit mass:
/// `ϱ(x,t) = t^{−α}(C − k|x−x₀|²t^{−2β})₊^{1/(m−1)}`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Barenblatt {
    pub m: f64,
    pub dim: usize,
    pub center: Point,
    pub alpha: f64,
    pub beta: f64,
    pub k: f64,
    /// Height constant fixing unit mass.
    pub c: f64,
}

impl Barenblatt {
    pub fn new(m: f64, dim: usize, center: Point) -> Result<Self> {
        if !(m > 1.0) {
            return Err(invalid(format!("Barenblatt profile needs m > 1, got {m}")));
        }
        if dim != 1 && dim != 2 {
            return Err(invalid(format!("Barenblatt profile needs dimension 1 or 2, got {dim}")));
        }
        let d = dim as f64;
        let alpha = d / (d * (m - 1.0) + 2.0);
        let beta = alpha / d;
        let k = alpha * (m - 1.0) / (2.0 * m * d);
        let expo = 1.0 / (m - 1.0);
        // Mass at C = 1 in similarity variables: ∫(1 − k|y|²)₊^{1/(m−1)} dy.
        // With y = s/√k the radial integral over s ∈ [0,1] is graded towards
        // s = 1, where the integrand has a power singularity.
        let shape = |s: f64| (1.0 - s * s).max(0.0).powf(expo) * s.powi(dim as i32 - 1);
        let mut unit = 0.0;
        let mut lo = 0.0;
        for level in 1..60 {
            let hi = 1.0 - 0.5f64.powi(level);
            unit += gauss(lo, hi, &shape);
            lo = hi;
        }
        unit += gauss(lo, 1.0, &shape);
        let surface = if dim == 1 { 2.0 } else { 2.0 * std::f64::consts::PI };
        let unit_mass = surface * unit / k.powf(d / 2.0);
        // Mass scales like C^{1/(m−1) + d/2}.
        let c = unit_mass.powf(-1.0 / (expo + d / 2.0));
        Ok(Barenblatt { m, dim, center, alpha, beta, k, c })
    }

    fn r2(&self, x: Point) -> f64 {
        let dx = x[0] - self.center[0];
        let dy = if self.dim == 2 { x[1] - self.center[1] } else { 0.0 };
        dx * dx + dy * dy
    }

    pub fn eval(&self, x: Point, t: f64) -> f64 {
        let inner = self.c - self.k * self.r2(x) * t.powf(-2.0 * self.beta);
        t.powf(-self.alpha) * inner.max(0.0).powf(1.0 / (self.m - 1.0))
    }

    pub fn support_radius(&self, t: f64) -> f64 {
        (self.c / self.k).sqrt() * t.powf(self.beta)
    }

    /// Exact-quadrature cell averages on `grid`, normalized to unit mass.
    pub fn cell_averages(&self, grid: &Grid, t: f64) -> Result<DensityField> {
        if grid.dim() != self.dim {
            return Err(invalid("grid dimension differs from profile dimension"));
        }
        if !(t > 0.0) {
            return Err(invalid(format!("Barenblatt time must be positive, got {t}")));
        }
        let r = self.support_radius(t);
        for axis in 0..self.dim {
            if self.center[axis] - r < grid.lower()[axis] || self.center[axis] + r > grid.upper()[axis] {
                return Err(invalid(format!("support radius {r} at t={t} exceeds the domain")));
            }
        }
        const SUB: usize = 4;
        let nodes: Vec<(f64, f64)> = (0..SUB)
            .flat_map(|s| {
                GL8_NODES.iter().zip(GL8_WEIGHTS).map(move |(x, w)| {
                    (((s as f64) + 0.5 + 0.5 * x) / SUB as f64, w / (2.0 * SUB as f64))
                })
            })
            .collect();
        let values: Vec<f64> = (0..grid.len())
            .map(|cell| {
                let c = grid.center(cell);
                let x0 = c[0] - 0.5 * grid.h(0);
                if self.dim == 1 {
                    nodes.iter().map(|(u, w)| w * self.eval([x0 + u * grid.h(0), 0.0], t)).sum()
                } else {
                    let y0 = c[1] - 0.5 * grid.h(1);
                    nodes
                        .iter()
                        .flat_map(|(u, wu)| {
                            nodes.iter().map(move |(v, wv)| {
                                wu * wv * self.eval([x0 + u * grid.h(0), y0 + v * grid.h(1)], t)
                            })
                        })
                        .sum()
                }
            })
            .collect();
        DensityField::normalized(*grid, values, t)
    }
}

/// Unit-mass Barenblatt cell averages at time `t` around `center`.
pub fn barenblatt(grid: &Grid, m: f64, t: f64, center: Point) -> Result<DensityField> {
    Barenblatt::new(m, grid.dim(), center)?.cell_averages(grid, t)
}
