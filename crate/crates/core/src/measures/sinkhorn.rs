//! Log-domain Sinkhorn iterations with ε-annealing and debiasing.
//!
//! For the quadratic cost between two densities on the same grid the Gibbs
//! kernel factorizes over the axes, so each soft-min is applied axis by axis.
//! Other configurations fall back to a dense cost matrix.

use super::exact::{ground_cost, DiscreteMeasure};
use super::{check_normalized, DensityField, TransportMethod, TransportPlanResult};
use crate::error::{invalid, Error, Result};

/// Dense cost matrices are refused beyond this many atoms per side.
const MAX_DENSE_ATOMS: usize = 4096;
/// Marginal tolerance used for the warm-up stages of the ε schedule.
const WARMUP_TOL: f64 = 1e-3;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SinkhornOptions {
    /// Final regularization; the schedule ends with `4ε, 2ε, ε`.
    pub epsilon: f64,
    /// Target ℓ¹ error of the row marginal.
    pub tol: f64,
    pub max_iterations: usize,
}

impl SinkhornOptions {
    pub fn new(epsilon: f64, tol: f64) -> Self {
        SinkhornOptions { epsilon, tol, max_iterations: 200_000 }
    }
}

/// Applies `out_t = LSE_s(h_s − C_ts/ε)` for the current ε.
trait SoftMin {
    fn apply(&self, h: &[f64], out: &mut [f64], transpose: bool);
    fn set_epsilon(&mut self, eps: f64);
    fn max_cost(&self) -> f64;
}

fn lse(values: impl Iterator<Item = f64> + Clone) -> f64 {
    let top = values.clone().fold(f64::NEG_INFINITY, f64::max);
    if top == f64::NEG_INFINITY {
        return top;
    }
    top + values.map(|v| (v - top).exp()).sum::<f64>().ln()
}

struct Dense {
    cost: Vec<f64>,
    scaled: Vec<f64>,
    rows: usize,
    cols: usize,
}

impl Dense {
    fn new(x: &[[f64; 2]], y: &[[f64; 2]], p: f64) -> Self {
        let cost: Vec<f64> = x.iter().flat_map(|&a| y.iter().map(move |&b| ground_cost(a, b, p))).collect();
        Dense { scaled: cost.clone(), cost, rows: x.len(), cols: y.len() }
    }
}

impl SoftMin for Dense {
    fn apply(&self, h: &[f64], out: &mut [f64], transpose: bool) {
        if !transpose {
            for (r, o) in out.iter_mut().enumerate().take(self.rows) {
                let row = &self.scaled[r * self.cols..(r + 1) * self.cols];
                *o = lse(h.iter().zip(row).map(|(a, c)| a - c));
            }
        } else {
            for (c, o) in out.iter_mut().enumerate().take(self.cols) {
                *o = lse((0..self.rows).map(|r| h[r] - self.scaled[r * self.cols + c]));
            }
        }
    }

    fn set_epsilon(&mut self, eps: f64) {
        for (s, c) in self.scaled.iter_mut().zip(&self.cost) {
            *s = c / eps;
        }
    }

    fn max_cost(&self) -> f64 {
        self.cost.iter().cloned().fold(0.0, f64::max)
    }
}

/// Quadratic cost on a shared tensor grid: `C = c0 ⊕ c1`.
struct Separable {
    axes: [Vec<f64>; 2],
    scaled: [Vec<f64>; 2],
    n: [usize; 2],
}

impl Separable {
    fn new(rho: &DensityField) -> Self {
        let g = rho.grid();
        let n = g.cells();
        let axis = |a: usize| -> Vec<f64> {
            let h = g.h(a);
            let mut c = vec![0.0; n[a] * n[a]];
            for t in 0..n[a] {
                for s in 0..n[a] {
                    let d = (t as f64 - s as f64) * h;
                    c[t * n[a] + s] = d * d;
                }
            }
            c
        };
        let axes = [axis(0), if g.dim() == 2 { axis(1) } else { vec![0.0] }];
        Separable { scaled: axes.clone(), axes, n }
    }
}

impl SoftMin for Separable {
    // The cost is symmetric, so the transpose coincides with the forward map.
    fn apply(&self, h: &[f64], out: &mut [f64], _transpose: bool) {
        let [nx, ny] = self.n;
        let mut tmp = vec![0.0; nx * ny];
        let c1 = &self.scaled[1];
        for t1 in 0..ny {
            let crow = &c1[t1 * ny..(t1 + 1) * ny];
            for s0 in 0..nx {
                tmp[t1 * nx + s0] = lse((0..ny).map(|s1| h[s1 * nx + s0] - crow[s1]));
            }
        }
        let c0 = &self.scaled[0];
        for t1 in 0..ny {
            let row = &tmp[t1 * nx..(t1 + 1) * nx];
            for t0 in 0..nx {
                let crow = &c0[t0 * nx..(t0 + 1) * nx];
                out[t1 * nx + t0] = lse(row.iter().zip(crow).map(|(a, c)| a - c));
            }
        }
    }

    fn set_epsilon(&mut self, eps: f64) {
        for a in 0..2 {
            for (s, c) in self.scaled[a].iter_mut().zip(&self.axes[a]) {
                *s = c / eps;
            }
        }
    }

    fn max_cost(&self) -> f64 {
        self.axes.iter().map(|c| c.iter().cloned().fold(0.0, f64::max)).sum()
    }
}

fn schedule(max_cost: f64, eps: f64) -> Vec<f64> {
    let mut stages = Vec::new();
    let mut e = max_cost.max(4.0 * eps);
    while e > 8.0 * eps {
        stages.push(e);
        e *= 0.5;
    }
    stages.extend([4.0 * eps, 2.0 * eps, eps]);
    stages
}

struct Outcome {
    value: f64,
    iterations: usize,
    marginal_error: f64,
}

fn log_weights(w: &[f64]) -> Vec<f64> {
    w.iter().map(|&v| if v > 0.0 { v.ln() } else { f64::NEG_INFINITY }).collect()
}

fn row_error(kernel: &dyn SoftMin, a: &[f64], f: &[f64], g: &[f64], lb: &[f64], eps: f64, buf: &mut [f64]) -> f64 {
    let h: Vec<f64> = g.iter().zip(lb).map(|(g, l)| g / eps + l).collect();
    kernel.apply(&h, buf, false);
    a.iter()
        .zip(f)
        .zip(buf.iter())
        .filter(|((ai, _), _)| **ai > 0.0)
        .map(|((ai, fi), si)| (ai * (fi / eps + si).exp() - ai).abs())
        .sum()
}

/// Entropic transport cost between `a` and `b` (dual objective at convergence).
fn entropic_cost(kernel: &mut dyn SoftMin, a: &[f64], b: &[f64], opts: &SinkhornOptions) -> Result<Outcome> {
    let (la, lb) = (log_weights(a), log_weights(b));
    let mut f = vec![0.0; a.len()];
    let mut g = vec![0.0; b.len()];
    let mut buf_a = vec![0.0; a.len()];
    let mut buf_b = vec![0.0; b.len()];
    let mut iterations = 0;
    let stages = schedule(kernel.max_cost(), opts.epsilon);
    let mut err = f64::INFINITY;
    for (k, &eps) in stages.iter().enumerate() {
        kernel.set_epsilon(eps);
        let tol = if k + 1 == stages.len() { opts.tol } else { WARMUP_TOL.max(opts.tol) };
        loop {
            let h: Vec<f64> = g.iter().zip(&lb).map(|(g, l)| g / eps + l).collect();
            kernel.apply(&h, &mut buf_a, false);
            f.iter_mut().zip(&buf_a).for_each(|(fi, s)| *fi = -eps * s);
            let h: Vec<f64> = f.iter().zip(&la).map(|(f, l)| f / eps + l).collect();
            kernel.apply(&h, &mut buf_b, true);
            g.iter_mut().zip(&buf_b).for_each(|(gi, s)| *gi = -eps * s);
            iterations += 1;
            if iterations % 5 == 0 {
                err = row_error(kernel, a, &f, &g, &lb, eps, &mut buf_a);
                if err <= tol {
                    break;
                }
            }
            if iterations >= opts.max_iterations {
                return Err(Error::SinkhornDivergence { iterations, marginal_error: err });
            }
        }
    }
    let dot = |w: &[f64], p: &[f64]| w.iter().zip(p).filter(|(w, _)| **w > 0.0).map(|(w, p)| w * p).sum::<f64>();
    Ok(Outcome { value: dot(a, &f) + dot(b, &g), iterations, marginal_error: err })
}

/// Symmetric self-transport cost, iterated with averaging.
fn self_cost(kernel: &mut dyn SoftMin, a: &[f64], opts: &SinkhornOptions) -> Result<Outcome> {
    let la = log_weights(a);
    let mut f = vec![0.0; a.len()];
    let mut buf = vec![0.0; a.len()];
    let mut iterations = 0;
    let stages = schedule(kernel.max_cost(), opts.epsilon);
    let mut err = f64::INFINITY;
    for (k, &eps) in stages.iter().enumerate() {
        kernel.set_epsilon(eps);
        let tol = if k + 1 == stages.len() { opts.tol } else { WARMUP_TOL.max(opts.tol) };
        loop {
            let h: Vec<f64> = f.iter().zip(&la).map(|(f, l)| f / eps + l).collect();
            kernel.apply(&h, &mut buf, false);
            f.iter_mut().zip(&buf).for_each(|(fi, s)| *fi = 0.5 * (*fi - eps * s));
            iterations += 1;
            if iterations % 5 == 0 {
                err = row_error(kernel, a, &f, &f, &la, eps, &mut buf);
                if err <= tol {
                    break;
                }
            }
            if iterations >= opts.max_iterations {
                return Err(Error::SinkhornDivergence { iterations, marginal_error: err });
            }
        }
    }
    let value = 2.0 * a.iter().zip(&f).filter(|(w, _)| **w > 0.0).map(|(w, p)| w * p).sum::<f64>();
    Ok(Outcome { value, iterations, marginal_error: err })
}

fn debiased(
    cross: &mut dyn SoftMin,
    self_a: &mut dyn SoftMin,
    self_b: &mut dyn SoftMin,
    a: &[f64],
    b: &[f64],
    p: f64,
    opts: &SinkhornOptions,
) -> Result<TransportPlanResult> {
    if !(opts.epsilon > 0.0) || !(opts.tol > 0.0) {
        return Err(invalid("Sinkhorn needs positive ε and tolerance"));
    }
    let ab = entropic_cost(cross, a, b, opts)?;
    let aa = self_cost(self_a, a, opts)?;
    let bb = self_cost(self_b, b, opts)?;
    let divergence = ab.value - 0.5 * (aa.value + bb.value);
    Ok(TransportPlanResult {
        distance: divergence.max(0.0).powf(1.0 / p),
        p,
        method: TransportMethod::Entropic,
        iterations: ab.iterations + aa.iterations + bb.iterations,
        marginal_error: ab.marginal_error.max(aa.marginal_error).max(bb.marginal_error),
    })
}

/// Debiased entropic `W_p`: the regularized cost minus the average of the
/// two self-costs, raised to `1/p`.
pub fn wasserstein_entropic(
    mu: &DensityField,
    nu: &DensityField,
    p: f64,
    epsilon: f64,
    tol: f64,
) -> Result<TransportPlanResult> {
    if !(p >= 1.0 && p.is_finite()) {
        return Err(invalid(format!("transport exponent must be finite and >= 1, got {p}")));
    }
    check_normalized(mu)?;
    check_normalized(nu)?;
    let opts = SinkhornOptions::new(epsilon, tol);
    if mu.values() == nu.values() && mu.grid() == nu.grid() {
        return Ok(TransportPlanResult { distance: 0.0, p, method: TransportMethod::Entropic, iterations: 0, marginal_error: 0.0 });
    }
    let (a, b) = (mu.cell_masses(), nu.cell_masses());
    if mu.grid() == nu.grid() && p == 2.0 {
        let mut cross = Separable::new(mu);
        let mut sa = Separable::new(mu);
        let mut sb = Separable::new(mu);
        return debiased(&mut cross, &mut sa, &mut sb, &a, &b, p, &opts);
    }
    wasserstein_entropic_discrete(&DiscreteMeasure::from_density(mu), &DiscreteMeasure::from_density(nu), p, &opts)
}

/// Dense-kernel variant for arbitrary atomic measures of equal mass.
pub fn wasserstein_entropic_discrete(
    mu: &DiscreteMeasure,
    nu: &DiscreteMeasure,
    p: f64,
    opts: &SinkhornOptions,
) -> Result<TransportPlanResult> {
    let atoms = mu.len().max(nu.len());
    if atoms > MAX_DENSE_ATOMS {
        return Err(Error::TooManyAtoms { atoms, limit: MAX_DENSE_ATOMS });
    }
    let (ta, tb) = (mu.total(), nu.total());
    if ((ta - tb) / ta).abs() > 1e-6 {
        return Err(invalid(format!("measures carry different mass: {ta} vs {tb}")));
    }
    let a: Vec<f64> = mu.weights.iter().map(|w| w / ta).collect();
    let b: Vec<f64> = nu.weights.iter().map(|w| w / tb).collect();
    let mut cross = Dense::new(&mu.points, &nu.points, p);
    let mut sa = Dense::new(&mu.points, &mu.points, p);
    let mut sb = Dense::new(&nu.points, &nu.points, p);
    debiased(&mut cross, &mut sa, &mut sb, &a, &b, p, opts)
}
