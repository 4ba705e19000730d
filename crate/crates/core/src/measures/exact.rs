//! Exact discrete optimal transport by successive shortest augmenting paths
//! on the bipartite transportation network.

use super::DensityField;
use crate::error::{invalid, Error, Result};
use crate::grid::Point;

/// Cost guard for the exact solver.
pub const MAX_EXACT_ATOMS: usize = 64;

#[derive(Clone, Debug, PartialEq)]
pub struct DiscreteMeasure {
    pub points: Vec<Point>,
    pub weights: Vec<f64>,
}

impl DiscreteMeasure {
    pub fn new(points: Vec<Point>, weights: Vec<f64>) -> Result<Self> {
        if points.len() != weights.len() || points.is_empty() {
            return Err(invalid("discrete measure needs matching, nonempty points and weights"));
        }
        if weights.iter().any(|w| !(*w >= 0.0) || !w.is_finite()) {
            return Err(invalid("discrete measure weights must be finite and nonnegative"));
        }
        if !(weights.iter().sum::<f64>() > 0.0) {
            return Err(invalid("discrete measure has zero total weight"));
        }
        Ok(DiscreteMeasure { points, weights })
    }

    /// One atom per cell center carrying the cell mass.
    pub fn from_density(rho: &DensityField) -> Self {
        DiscreteMeasure { points: rho.grid().centers(), weights: rho.cell_masses() }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn total(&self) -> f64 {
        self.weights.iter().sum()
    }
}

pub(crate) fn ground_cost(a: Point, b: Point, p: f64) -> f64 {
    let d = ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt();
    if p == 2.0 {
        d * d
    } else {
        d.powf(p)
    }
}

/// Optimal value of `min Σ π_ij |x_i − y_j|^p` over couplings of the two
/// measures (the second is rescaled to the first's total weight).
pub fn exact_lp_cost(mu: &DiscreteMeasure, nu: &DiscreteMeasure, p: f64) -> Result<f64> {
    let atoms = mu.len().max(nu.len());
    if atoms > MAX_EXACT_ATOMS {
        return Err(Error::TooManyAtoms { atoms, limit: MAX_EXACT_ATOMS });
    }
    if !(p >= 1.0 && p.is_finite()) {
        return Err(invalid(format!("transport exponent must be finite and >= 1, got {p}")));
    }
    let (total_a, total_b) = (mu.total(), nu.total());
    if ((total_a - total_b) / total_a).abs() > 1e-9 {
        return Err(invalid(format!("measures carry different mass: {total_a} vs {total_b}")));
    }
    let n = mu.len();
    let m = nu.len();
    let cost: Vec<Vec<f64>> = mu
        .points
        .iter()
        .map(|&x| nu.points.iter().map(|&y| ground_cost(x, y, p)).collect())
        .collect();
    let mut supply = mu.weights.clone();
    let mut demand: Vec<f64> = nu.weights.iter().map(|w| w * total_a / total_b).collect();
    let mut flow = vec![vec![0.0; m]; n];
    let tol = 1e-15 * total_a;

    let nodes = n + m;
    let mut dist = vec![f64::INFINITY; nodes];
    let mut pred = vec![usize::MAX; nodes];
    for _ in 0..100_000 {
        if supply.iter().all(|s| *s <= tol) {
            break;
        }
        // Bellman-Ford from every source that still has supply.
        for k in 0..nodes {
            dist[k] = if k < n && supply[k] > tol { 0.0 } else { f64::INFINITY };
            pred[k] = usize::MAX;
        }
        for _ in 0..nodes {
            let mut changed = false;
            for i in 0..n {
                if dist[i].is_finite() {
                    for j in 0..m {
                        let cand = dist[i] + cost[i][j];
                        if cand < dist[n + j] - 1e-15 {
                            dist[n + j] = cand;
                            pred[n + j] = i;
                            changed = true;
                        }
                    }
                }
            }
            for j in 0..m {
                if dist[n + j].is_finite() {
                    for i in 0..n {
                        if flow[i][j] > tol {
                            let cand = dist[n + j] - cost[i][j];
                            if cand < dist[i] - 1e-15 {
                                dist[i] = cand;
                                pred[i] = n + j;
                                changed = true;
                            }
                        }
                    }
                }
            }
            if !changed {
                break;
            }
        }
        let sink = (0..m)
            .filter(|&j| demand[j] > tol && dist[n + j].is_finite())
            .min_by(|&a, &b| dist[n + a].total_cmp(&dist[n + b]))
            .ok_or_else(|| invalid("transport network became infeasible"))?;

        // Walk back to the originating source, collecting the bottleneck.
        let mut amount = demand[sink];
        let mut node = n + sink;
        let mut path = Vec::new();
        loop {
            let prev = pred[node];
            if prev == usize::MAX {
                amount = amount.min(supply[node]);
                break;
            }
            if node >= n {
                path.push((prev, node - n, true));
            } else {
                amount = amount.min(flow[node][prev - n]);
                path.push((node, prev - n, false));
            }
            node = prev;
        }
        let source = node;
        for (i, j, forward) in path {
            if forward {
                flow[i][j] += amount;
            } else {
                flow[i][j] -= amount;
            }
        }
        supply[source] -= amount;
        demand[sink] -= amount;
    }
    Ok(flow
        .iter()
        .zip(&cost)
        .map(|(fr, cr)| fr.iter().zip(cr).map(|(f, c)| f.max(0.0) * c).sum::<f64>())
        .sum())
}

/// Exact `W_p` for measures with at most [`MAX_EXACT_ATOMS`] atoms each.
pub fn exact_lp_transport(mu: &DiscreteMeasure, nu: &DiscreteMeasure, p: f64) -> Result<f64> {
    Ok(exact_lp_cost(mu, nu, p)?.max(0.0).powf(1.0 / p))
}
