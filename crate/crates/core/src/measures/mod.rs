//! Densities as probability measures: norms, entropy, Hölder seminorms and
//! Wasserstein distances.

mod exact;
mod quantile;
mod sinkhorn;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::grid::{Grid, Point};

pub use exact::{exact_lp_cost, exact_lp_transport, DiscreteMeasure, MAX_EXACT_ATOMS};
pub use quantile::{wasserstein_1d, wasserstein_1d_atoms};
pub use sinkhorn::{wasserstein_entropic, wasserstein_entropic_discrete, SinkhornOptions};

/// Tolerance on the mass of a density before it is rejected.
pub const MASS_TOLERANCE: f64 = 1e-6;

/// Nonnegative cell averages of a probability density on a grid.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DensityField {
    grid: Grid,
    values: Vec<f64>,
    time: f64,
}

impl DensityField {
    /// Validates nonnegativity, finiteness and unit mass.
    pub fn new(grid: Grid, values: Vec<f64>, time: f64) -> Result<Self> {
        let field = Self::unchecked(grid, values, time)?;
        let mass = field.mass();
        if (mass - 1.0).abs() > MASS_TOLERANCE {
            return Err(invalid(format!("density mass {mass} is not 1 within {MASS_TOLERANCE:e}")));
        }
        Ok(field)
    }

    /// Rescales nonnegative values to unit mass.
    pub fn normalized(grid: Grid, values: Vec<f64>, time: f64) -> Result<Self> {
        let mut field = Self::unchecked(grid, values, time)?;
        let mass = field.mass();
        if !(mass > 0.0) {
            return Err(invalid("cannot normalize a density with zero mass"));
        }
        field.values.iter_mut().for_each(|v| *v /= mass);
        Ok(field)
    }

    /// Checks shape, sign and finiteness but not mass.
    pub fn unchecked(grid: Grid, values: Vec<f64>, time: f64) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(invalid(format!("expected {} cell values, got {}", grid.len(), values.len())));
        }
        if let Some(v) = values.iter().find(|v| !v.is_finite() || **v < 0.0) {
            return Err(invalid(format!("density values must be finite and nonnegative, found {v}")));
        }
        Ok(DensityField { grid, values, time })
    }

    pub fn uniform(grid: Grid) -> Self {
        let v = 1.0 / grid.volume();
        DensityField { values: vec![v; grid.len()], grid, time: 0.0 }
    }

    /// Samples `f` at cell centers and normalizes.
    pub fn from_fn(grid: Grid, f: impl Fn(Point) -> f64) -> Result<Self> {
        Self::normalized(grid, grid.sample(f), 0.0)
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn time(&self) -> f64 {
        self.time
    }

    pub fn with_time(mut self, t: f64) -> Self {
        self.time = t;
        self
    }

    pub fn mass(&self) -> f64 {
        self.grid.integrate(&self.values)
    }

    /// Cell masses `ρ |cell|`.
    pub fn cell_masses(&self) -> Vec<f64> {
        let vol = self.grid.cell_volume();
        self.values.iter().map(|v| v * vol).collect()
    }

    /// Block averages over `factor` cells per axis; mass is preserved.
    pub fn coarsened(&self, factor: usize) -> Result<DensityField> {
        let coarse = self.grid.coarsened(factor)?;
        let [nx, _] = self.grid.cells();
        let [cx, cy] = coarse.cells();
        let block = if self.grid.dim() == 2 { factor * factor } else { factor };
        let mut values = vec![0.0; cx * cy];
        for (k, v) in self.values.iter().enumerate() {
            let (i, j) = (k % nx, k / nx);
            let (ci, cj) = (i / factor, if self.grid.dim() == 2 { j / factor } else { 0 });
            values[cj * cx + ci] += v / block as f64;
        }
        Ok(DensityField { grid: coarse, values, time: self.time })
    }

    pub(crate) fn from_parts(grid: Grid, values: Vec<f64>, time: f64) -> Self {
        DensityField { grid, values, time }
    }
}

/// Which numerical route produced a distance.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TransportMethod {
    Quantile1d,
    Entropic,
    ExactLp,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TransportPlanResult {
    pub distance: f64,
    pub p: f64,
    pub method: TransportMethod,
    pub iterations: usize,
    pub marginal_error: f64,
}

/// `(∫ρ^q)^{1/q}`, or the maximum for `q = ∞`.
pub fn lq_norm(rho: &DensityField, q: f64) -> Result<f64> {
    if !(q >= 1.0) {
        return Err(invalid(format!("lq_norm needs q >= 1, got {q}")));
    }
    Ok(field_lq_norm(&rho.grid, &rho.values, q))
}

pub(crate) fn field_lq_norm(grid: &Grid, values: &[f64], q: f64) -> f64 {
    if q.is_infinite() {
        values.iter().fold(0.0_f64, |a, v| a.max(v.abs()))
    } else {
        (values.iter().map(|v| v.abs().powf(q)).sum::<f64>() * grid.cell_volume()).powf(1.0 / q)
    }
}

/// `∫ρ^q`, the energy form used by every L^q audit.
pub(crate) fn power_integral(grid: &Grid, values: &[f64], q: f64) -> f64 {
    values.iter().map(|v| v.powf(q)).sum::<f64>() * grid.cell_volume()
}

fn xlogx(v: f64) -> f64 {
    if v > 0.0 {
        v * v.ln()
    } else {
        0.0
    }
}

/// `∫ρ log ρ` with `0 log 0 = 0`.
pub fn entropy(rho: &DensityField) -> f64 {
    field_entropy(&rho.grid, &rho.values)
}

pub(crate) fn field_entropy(grid: &Grid, values: &[f64]) -> f64 {
    values.iter().map(|&v| xlogx(v)).sum::<f64>() * grid.cell_volume()
}

/// `∫ρ |log ρ|`.
pub(crate) fn field_abs_entropy(grid: &Grid, values: &[f64]) -> f64 {
    values.iter().map(|&v| xlogx(v).abs()).sum::<f64>() * grid.cell_volume()
}

/// Exhaustive below this many cells, sampled above.
const HOLDER_EXHAUSTIVE_CELLS: usize = 4096;
const HOLDER_SAMPLES: usize = 100_000;
pub const HOLDER_SEED: u64 = 0x5eed_401d;

/// `max |ρ(x) − ρ(y)| / |x − y|^α` over cell-center pairs.
pub fn holder_seminorm(rho: &DensityField, alpha: f64) -> Result<f64> {
    if !(alpha > 0.0 && alpha <= 1.0) {
        return Err(invalid(format!("Hölder exponent must lie in (0, 1], got {alpha}")));
    }
    Ok(field_holder_seminorm(&rho.grid, &rho.values, alpha))
}

pub(crate) fn field_holder_seminorm(grid: &Grid, values: &[f64], alpha: f64) -> f64 {
    let n = grid.len();
    let centers = grid.centers();
    let ratio = |a: usize, b: usize| {
        let dist = grid.distance(centers[a], centers[b]);
        (values[a] - values[b]).abs() / dist.powf(alpha)
    };
    let mut best = 0.0_f64;
    if n <= HOLDER_EXHAUSTIVE_CELLS {
        for a in 0..n {
            for b in (a + 1)..n {
                best = best.max(ratio(a, b));
            }
        }
    } else {
        let mut rng = ChaCha8Rng::seed_from_u64(HOLDER_SEED);
        for _ in 0..HOLDER_SAMPLES {
            let a = rng.gen_range(0..n);
            let b = rng.gen_range(0..n);
            if a != b {
                best = best.max(ratio(a, b));
            }
        }
    }
    best
}

pub(crate) fn check_normalized(rho: &DensityField) -> Result<()> {
    let mass = rho.mass();
    if (mass - 1.0).abs() > MASS_TOLERANCE {
        return Err(invalid(format!("transport input has mass {mass}, expected 1")));
    }
    Ok(())
}
