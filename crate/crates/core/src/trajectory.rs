//! Time-indexed density snapshots with per-step diagnostics.

use serde::{Deserialize, Serialize};

use crate::grid::Grid;
use crate::measures::DensityField;

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct StepDiagnostics {
    pub time: f64,
    pub mass: f64,
    pub newton_iterations: usize,
    pub newton_residual: f64,
    /// Relative mass correction applied after a transport step (0 when none).
    pub mass_correction: f64,
}

/// Snapshot `k` sits at `times[k]`; snapshot 0 is the initial datum and
/// consecutive snapshots are `dt` apart.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryRecord {
    pub grid: Grid,
    pub dt: f64,
    pub times: Vec<f64>,
    pub fields: Vec<Vec<f64>>,
    pub diagnostics: Vec<StepDiagnostics>,
}

impl TrajectoryRecord {
    pub fn new(initial: &DensityField, dt: f64) -> Self {
        TrajectoryRecord {
            grid: *initial.grid(),
            dt,
            times: vec![initial.time()],
            fields: vec![initial.values().to_vec()],
            diagnostics: vec![StepDiagnostics { time: initial.time(), mass: initial.mass(), ..Default::default() }],
        }
    }

    pub fn push(&mut self, field: &DensityField, diag: StepDiagnostics) {
        self.times.push(field.time());
        self.fields.push(field.values().to_vec());
        self.diagnostics.push(diag);
    }

    pub fn len(&self) -> usize {
        self.fields.len()
    }

    pub fn is_empty(&self) -> bool {
        self.fields.is_empty()
    }

    /// Number of time steps recorded (snapshots minus one).
    pub fn steps(&self) -> usize {
        self.fields.len().saturating_sub(1)
    }

    pub fn horizon(&self) -> f64 {
        self.times.last().copied().unwrap_or(0.0) - self.times[0]
    }

    pub fn field(&self, k: usize) -> DensityField {
        DensityField::from_parts(self.grid, self.fields[k].clone(), self.times[k])
    }

    pub fn last(&self) -> DensityField {
        self.field(self.fields.len() - 1)
    }

    /// Snapshots after the initial one, each representing one step of length `dt`.
    pub fn evolved(&self) -> &[Vec<f64>] {
        &self.fields[1..]
    }

    pub fn masses(&self) -> Vec<f64> {
        self.fields.iter().map(|f| self.grid.integrate(f)).collect()
    }
}
