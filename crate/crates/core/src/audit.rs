//! Numerical audits of the a priori estimates along a completed trajectory.
//!
//! Each audit returns an [`AuditEntry`] with the computed left side, the named
//! right-side terms, a fitted constant where the inequality carries one, and
//! a pass flag. Audits never skip silently: a vacuous pass is flagged.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::flow::VectorFieldSpec;
use crate::grid::{mixed_norm, Grid};
use crate::measures::{field_abs_entropy, field_entropy, power_integral, wasserstein_1d, wasserstein_entropic};
use crate::serrin::{lambda_q, DriftStructure};
use crate::splitting::fit_rate;
use crate::trajectory::TrajectoryRecord;

/// Allowed per-step increase of a dissipated quantity.
pub const MONOTONE_SLACK: f64 = 1e-6;
/// Relative growth of a fitted constant tolerated between refinements.
pub const REFINEMENT_ALLOWANCE: f64 = 0.1;
/// Allowed shortfall of the fitted Hölder exponent.
pub const HOLDER_SLACK: f64 = 0.15;
/// Cells below this density are vacuum for the speed integrand.
pub const VACUUM: f64 = 1e-12;
/// Tolerance of the cellwise speed identity at `q = m`.
pub const SPEED_IDENTITY_TOL: f64 = 1e-10;
/// Snapshots used by the Hölder audit are thinned to at most this many.
const HOLDER_MAX_SNAPSHOTS: usize = 16;
/// 2D snapshots are block-averaged to at most this many cells per axis before transport.
const HOLDER_MAX_CELLS: usize = 16;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AuditEntry {
    pub audit_name: String,
    pub lhs: f64,
    pub rhs_terms: BTreeMap<String, f64>,
    pub constant: Option<f64>,
    pub pass: bool,
    /// Distance to failure in the audit's own units; negative on failure.
    pub slack: f64,
    /// Derived quantities recorded for inspection, not asserted.
    pub notes: BTreeMap<String, f64>,
    pub flags: Vec<String>,
}

impl AuditEntry {
    pub(crate) fn new(name: impl Into<String>, lhs: f64) -> Self {
        AuditEntry {
            audit_name: name.into(),
            lhs,
            rhs_terms: BTreeMap::new(),
            constant: None,
            pass: false,
            slack: 0.0,
            notes: BTreeMap::new(),
            flags: Vec::new(),
        }
    }

    pub(crate) fn rhs(mut self, name: &str, v: f64) -> Self {
        self.rhs_terms.insert(name.to_string(), v);
        self
    }

    pub(crate) fn note(mut self, name: &str, v: f64) -> Self {
        self.notes.insert(name.to_string(), v);
        self
    }

    pub(crate) fn verdict(mut self, pass: bool, slack: f64) -> Self {
        self.pass = pass;
        self.slack = slack;
        self
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunMetadata {
    pub m: f64,
    pub q: f64,
    pub d: usize,
    pub drift: String,
    pub grid: [usize; 2],
    pub steps: usize,
    pub dt: f64,
}

impl RunMetadata {
    pub fn new(traj: &TrajectoryRecord, m: f64, q: f64, drift: impl Into<String>) -> Self {
        RunMetadata {
            m,
            q,
            d: traj.grid.dim(),
            drift: drift.into(),
            grid: traj.grid.cells(),
            steps: traj.steps(),
            dt: traj.dt,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EstimateReport {
    pub schema_version: u32,
    pub metadata: RunMetadata,
    pub entries: Vec<AuditEntry>,
}

impl EstimateReport {
    pub fn new(metadata: RunMetadata) -> Self {
        EstimateReport { schema_version: SCHEMA_VERSION, metadata, entries: Vec::new() }
    }

    pub fn push(&mut self, entry: AuditEntry) {
        self.entries.push(entry);
    }

    pub fn all_pass(&self) -> bool {
        self.entries.iter().all(|e| e.pass)
    }

    pub fn failures(&self) -> Vec<&str> {
        self.entries.iter().filter(|e| !e.pass).map(|e| e.audit_name.as_str()).collect()
    }
}

fn dissipation(grid: &Grid, fields: &[Vec<f64>], dt: f64, power: f64) -> f64 {
    fields
        .iter()
        .map(|f| {
            let w: Vec<f64> = f.iter().map(|v| v.powf(power)).collect();
            dt * grid.dirichlet_energy(&w)
        })
        .sum()
}

/// `Σ dt ‖V(t)‖_∞^power` over the recorded steps.
fn drift_norm_term(traj: &TrajectoryRecord, v: &VectorFieldSpec, power: f64) -> f64 {
    traj.times[..traj.steps()].iter().map(|&t| traj.dt * v.sup_norm(t).powf(power)).sum()
}

/// Smallest `C ≥ 0` with `target ≤ (base + C)·e^{C·a}`.
fn gronwall_constant(target: f64, base: f64, a: f64) -> f64 {
    if target <= base {
        return 0.0;
    }
    let f = |c: f64| (base + c) * (c * a).exp() - target;
    let (mut lo, mut hi) = (0.0, target - base);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if f(mid) >= 0.0 {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    hi
}

fn check_trajectory(traj: &TrajectoryRecord) -> Result<()> {
    if traj.steps() == 0 {
        return Err(invalid("audits need at least one recorded step"));
    }
    Ok(())
}

/// `L^q` energy estimate for `q > 1`; `q = 1` is routed to [`audit_entropy`].
///
/// Divergence-nonnegative drift: `∫ρ^q` must not increase by more than
/// [`MONOTONE_SLACK`] per step. General drift: the constant of
/// `sup ∫ρ^q + c∬|∇ρ^{(q+m−1)/2}|² ≤ (∫ρ₀^q + C)·exp(C ∫‖V‖_∞²)` is fitted.
pub fn audit_energy(
    traj: &TrajectoryRecord,
    m: f64,
    q: f64,
    v: &VectorFieldSpec,
    structure: DriftStructure,
) -> Result<AuditEntry> {
    check_trajectory(traj)?;
    if q == 1.0 {
        return audit_entropy(traj, m, v);
    }
    if !(q > 1.0) || !(m > 1.0) {
        return Err(invalid(format!("energy audit needs m > 1 and q >= 1, got m={m}, q={q}")));
    }
    let grid = &traj.grid;
    let energies: Vec<f64> = traj.fields.iter().map(|f| power_integral(grid, f, q)).collect();
    let sup = energies.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let coef = 2.0 * q * m * (q - 1.0) / (q + m - 1.0).powi(2);
    let diss = coef * dissipation(grid, traj.evolved(), traj.dt, (q + m - 1.0) / 2.0);
    let max_inc = energies.windows(2).map(|w| w[1] - w[0]).fold(f64::NEG_INFINITY, f64::max);
    let drift_term = drift_norm_term(traj, v, 2.0);
    let base = AuditEntry::new(format!("energy_q{q}"), sup + diss)
        .rhs("initial_energy", energies[0])
        .rhs("drift_norm_q1inf_q2_2", drift_term)
        .note("sup_energy", sup)
        .note("dissipation", diss)
        .note("max_step_increase", max_inc)
        .note("q", q);
    Ok(match structure {
        DriftStructure::DivNonneg => {
            let slack = MONOTONE_SLACK - max_inc;
            AuditEntry { constant: Some(0.0), ..base }.verdict(slack >= 0.0, slack)
        }
        _ => {
            let c = gronwall_constant(sup + diss, energies[0], drift_term);
            let bound = (energies[0] + c) * (c * drift_term).exp();
            let pass = c.is_finite() && bound.is_finite();
            AuditEntry { constant: Some(c), ..base }.rhs("gronwall_bound", bound).verdict(pass, bound - (sup + diss))
        }
    })
}

/// [`audit_energy`] for every `r ∈ {1.25, 1.5, …}` with `max{1, m−1} ≤ r ≤ q`.
pub fn audit_energy_family(
    traj: &TrajectoryRecord,
    m: f64,
    q: f64,
    v: &VectorFieldSpec,
    structure: DriftStructure,
) -> Result<Vec<AuditEntry>> {
    let lo = (m - 1.0).max(1.0);
    let mut out = Vec::new();
    let mut r = 1.25;
    while r <= q + 1e-12 {
        if r >= lo - 1e-12 {
            out.push(audit_energy(traj, m, r, v, structure)?);
        }
        r += 0.25;
    }
    Ok(out)
}

/// Entropy estimate: `sup ∫ρ|log ρ|` and `(2/m)∬|∇ρ^{m/2}|²` are finite, the
/// entropy part is bounded by a fitted constant times the initial entropy plus
/// the drift term, and `∫ρ log ρ ≥ M log(M/|Ω|)` at every time.
pub fn audit_entropy(traj: &TrajectoryRecord, m: f64, v: &VectorFieldSpec) -> Result<AuditEntry> {
    check_trajectory(traj)?;
    let grid = &traj.grid;
    let abs: Vec<f64> = traj.fields.iter().map(|f| field_abs_entropy(grid, f)).collect();
    let signed: Vec<f64> = traj.fields.iter().map(|f| field_entropy(grid, f)).collect();
    let sup_abs = abs.iter().cloned().fold(0.0, f64::max);
    let diss = 2.0 / m * dissipation(grid, traj.evolved(), traj.dt, m / 2.0);
    let drift_term = drift_norm_term(traj, v, 2.0);
    let scale = abs[0] + drift_term;
    let constant = if sup_abs <= 1e-14 { 0.0 } else { sup_abs / scale.max(f64::MIN_POSITIVE) };
    let jensen_gap = traj
        .fields
        .iter()
        .zip(&signed)
        .map(|(f, e)| {
            let mass = grid.integrate(f);
            e - mass * (mass / grid.volume()).ln()
        })
        .fold(f64::INFINITY, f64::min);
    let max_inc = signed.windows(2).map(|w| w[1] - w[0]).fold(f64::NEG_INFINITY, f64::max);
    let finite = sup_abs.is_finite() && diss.is_finite() && constant.is_finite();
    let slack = jensen_gap.min(if finite { 1.0 } else { -1.0 });
    Ok(AuditEntry { constant: Some(constant), ..AuditEntry::new("entropy", sup_abs) }
        .rhs("initial_abs_entropy", abs[0])
        .rhs("drift_norm_q1inf_q2_2", drift_term)
        .note("dissipation", diss)
        .note("jensen_gap", jensen_gap)
        .note("max_step_increase", max_inc)
        .verdict(finite && jensen_gap >= -1e-12, slack))
}

/// Speed estimate: `∬|∇ρ^m/ρ|^λ ρ ≤ ε∬|∇ρ^{(q+m−1)/2}|² + c·T·(sup ∫ρ^q)^{2θ/(d(1−θ))}`
/// for `ε ∈ {1/2, 1/10}`, with `c` fitted per `ε`. At `q = m` the cellwise
/// identity `|∇ρ^m/ρ|²ρ = (2m/(q+m−1))²|∇ρ^{(q+m−1)/2}|²` is checked too.
pub fn audit_speed(traj: &TrajectoryRecord, m: f64, q: f64, v: &VectorFieldSpec) -> Result<AuditEntry> {
    check_trajectory(traj)?;
    if !(m > 1.0) || !(q >= 1.0) {
        return Err(invalid(format!("speed audit needs m > 1 and q >= 1, got m={m}, q={q}")));
    }
    let grid = &traj.grid;
    let d = grid.dim();
    let lam = lambda_q(m, q, d as u32);
    let a = (q + m - 1.0) / 2.0;
    let vol = grid.cell_volume();
    let at_m = (q - m).abs() < 1e-12;
    let mut speed = 0.0;
    let mut drift_speed = 0.0;
    let mut identity_err: f64 = 0.0;
    for (k, f) in traj.evolved().iter().enumerate() {
        let grad = grid.gradient(f);
        let vel = v.cell_values(grid, traj.times[k + 1]);
        let mut s = 0.0;
        let mut w = 0.0;
        for ((&r, g), u) in f.iter().zip(&grad).zip(&vel) {
            if r < VACUUM {
                continue;
            }
            let g2 = g[0] * g[0] + g[1] * g[1];
            let speed_sq = m * m * r.powf(2.0 * m - 4.0) * g2;
            s += speed_sq.powf(lam / 2.0) * r;
            w += (u[0] * u[0] + u[1] * u[1]).powf(lam / 2.0) * r;
            if at_m {
                let lhs = speed_sq * r;
                let rhs = (2.0 * m / (q + m - 1.0)).powi(2) * (a * r.powf(a - 1.0)).powi(2) * g2;
                identity_err = identity_err.max((lhs - rhs).abs() / lhs.abs().max(1.0));
            }
        }
        speed += traj.dt * s * vol;
        drift_speed += traj.dt * w * vol;
    }
    let diss = dissipation(grid, traj.evolved(), traj.dt, a);
    let sup = traj.fields.iter().map(|f| power_integral(grid, f, q)).fold(0.0, f64::max);
    let theta = if lam >= 2.0 {
        0.0
    } else {
        let df = d as f64;
        df * lam * (m - q) / ((2.0 - lam) * ((df + 2.0) * q + (m - 2.0) * df))
    };
    let power = 2.0 * theta / (d as f64 * (1.0 - theta));
    let horizon = traj.horizon();
    let mut entry = AuditEntry::new("speed", speed)
        .rhs("dissipation", diss)
        .rhs("energy_term", horizon * sup.powf(power))
        .note("lambda", lam)
        .note("theta", theta)
        .note("energy_power", power)
        .note("drift_speed", drift_speed);
    let mut worst: f64 = f64::NEG_INFINITY;
    let mut finite = speed.is_finite() && drift_speed.is_finite();
    for eps in [0.5, 0.1] {
        let c = (speed - eps * diss).max(0.0) / (horizon * sup.powf(power)).max(f64::MIN_POSITIVE);
        let cv = (drift_speed - eps * diss).max(0.0);
        finite &= c.is_finite();
        worst = worst.max(c);
        entry = entry.note(&format!("fitted_c_eps{eps}"), c).note(&format!("drift_excess_eps{eps}"), cv);
    }
    entry.constant = Some(worst);
    let mut slack: f64 = if finite { 1.0 } else { -1.0 };
    if at_m {
        entry = entry.note("identity_error", identity_err);
        slack = slack.min(SPEED_IDENTITY_TOL - identity_err);
    } else {
        entry.flags.push("identity not applicable: q ≠ m".into());
    }
    Ok(entry.verdict(slack >= 0.0, slack))
}

/// Hölder continuity in time of the Wasserstein curve, `W_λ(ρ(t), ρ(s)) ≤ C(t−s)^{(λ−1)/λ}`.
/// Distances are exact in 1D and debiased entropic in 2D, over pairs at least
/// four steps apart; the log-log slope must reach `(λ−1)/λ − 0.15`.
pub fn audit_wasserstein_holder(traj: &TrajectoryRecord, lambda: f64) -> Result<AuditEntry> {
    if traj.len() < 8 {
        return Err(invalid(format!("Hölder audit needs at least 8 recorded times, got {}", traj.len())));
    }
    if !(lambda >= 1.0) {
        return Err(invalid(format!("transport exponent must be at least 1, got {lambda}")));
    }
    let n = traj.len();
    let stride = n.div_ceil(HOLDER_MAX_SNAPSHOTS);
    let idx: Vec<usize> = (0..n).step_by(stride).collect();
    let factor = holder_coarsening(&traj.grid);
    let fields = idx.iter().map(|&k| traj.field(k).coarsened(factor)).collect::<Result<Vec<_>>>()?;
    let (mut gaps, mut dists) = (Vec::new(), Vec::new());
    for a in 0..idx.len() {
        for b in a + 1..idx.len() {
            let gap = traj.times[idx[b]] - traj.times[idx[a]];
            if gap < 4.0 * traj.dt - 1e-14 {
                continue;
            }
            let w = if traj.grid.dim() == 1 {
                wasserstein_1d(&fields[a], &fields[b], lambda)?.distance
            } else {
                let eps = fields[a].grid().h_min().powi(2);
                wasserstein_entropic(&fields[a], &fields[b], lambda, eps, 1e-6)?.distance
            };
            gaps.push(gap);
            dists.push(w);
        }
    }
    let target = (lambda - 1.0) / lambda;
    let max_w = dists.iter().cloned().fold(0.0, f64::max);
    let mut entry = AuditEntry::new("wasserstein_holder", max_w).note("target_exponent", target).note("pairs", gaps.len() as f64).note("coarsening", factor as f64);
    if max_w <= 1e-12 {
        entry.flags.push("exponent undefined: static trajectory".into());
        return Ok(entry.rhs("holder_constant", 0.0).verdict(true, 0.0));
    }
    let exponent = -fit_rate(&gaps, &dists);
    let c = gaps.iter().zip(&dists).map(|(g, w)| w / g.powf(target)).fold(0.0, f64::max);
    entry.constant = Some(c);
    let slack = exponent - (target - HOLDER_SLACK);
    Ok(entry.note("fitted_exponent", exponent).rhs("holder_constant", c).verdict(slack >= 0.0, slack))
}

fn holder_coarsening(grid: &Grid) -> usize {
    if grid.dim() == 1 {
        return 1;
    }
    let n = grid.cells()[0].min(grid.cells()[1]);
    (1..=n / 4).find(|f| grid.cells().iter().all(|c| c % f == 0) && n / f <= HOLDER_MAX_CELLS).unwrap_or(1)
}

/// Second exponent of the interpolation pair: `d/r1 + (2+Q)/r2 = d/q`.
pub fn interpolation_r2(m: f64, q: f64, d: usize, r1: f64) -> f64 {
    let df = d as f64;
    let big_q = df * (m - 1.0) / q;
    let rest = df / q - if r1.is_infinite() { 0.0 } else { df / r1 };
    if rest <= 0.0 {
        f64::INFINITY
    } else {
        (2.0 + big_q) / rest
    }
}

fn check_interpolation_pair(m: f64, q: f64, d: usize, r1: f64, r2: f64) -> Result<()> {
    let df = d as f64;
    let big_q = df * (m - 1.0) / q;
    let inv = |r: f64| if r.is_infinite() { 0.0 } else { 1.0 / r };
    if r1 < q - 1e-12 {
        return Err(invalid("violated bound: r1 ≥ q"));
    }
    let line = df * inv(r1) + (2.0 + big_q) * inv(r2) - df / q;
    if line.abs() > 1e-9 {
        return Err(invalid(format!("(r1, r2) off the line d/r1 + (2+Q)/r2 = d/q by {line:e}")));
    }
    match d {
        1 => {}
        2 if r1.is_infinite() => return Err(invalid("violated bound: r1 < ∞ when d = 2")),
        2 if r2 <= q + m - 1.0 => return Err(invalid("violated bound: r2 > q+m−1 when d = 2")),
        _ if d > 2 && r1 > df * (q + m - 1.0) / (df - 2.0) + 1e-12 => {
            return Err(invalid("violated bound: r1 ≤ d(q+m−1)/(d−2)"))
        }
        _ => {}
    }
    if r2 < q + m - 1.0 - 1e-12 {
        return Err(invalid("violated bound: r2 ≥ q+m−1"));
    }
    Ok(())
}

/// Interpolation inequality `‖ρ‖_{r1,r2} ≤ c·(term₁ + term₂)` with the constant fitted.
/// Also records the parabolic embedding integral `∬ρ^{q+m−1+2q/d}`.
pub fn audit_interpolation(traj: &TrajectoryRecord, m: f64, q: f64, r1: f64, r2: f64) -> Result<AuditEntry> {
    check_trajectory(traj)?;
    let grid = &traj.grid;
    let d = grid.dim();
    check_interpolation_pair(m, q, d, r1, r2)?;
    let slices = traj.evolved();
    let lhs = mixed_norm(grid, slices, traj.dt, r1, r2)?;
    let sup = traj.fields.iter().map(|f| power_integral(grid, f, q)).fold(0.0, f64::max);
    let diss = dissipation(grid, slices, traj.dt, (q + m - 1.0) / 2.0);
    let inv = |r: f64| if r.is_infinite() { 0.0 } else { 1.0 / r };
    let dm2 = (d as f64 - 2.0).max(0.0);
    let e_pow = inv(r1) * (1.0 - (r1 - q).min(f64::MAX) * dm2 / (d as f64 * (m - 1.0) + 2.0 * q));
    let e_pow = if r1.is_infinite() && dm2 == 0.0 { 0.0 } else { e_pow };
    let term1 = sup.powf(e_pow) * diss.powf(inv(r2));
    let masses = slices.iter().map(|f| grid.integrate(f));
    let mass_norm = if r2.is_infinite() {
        masses.fold(0.0, f64::max)
    } else {
        (masses.map(|v| traj.dt * v.powf(r2)).sum::<f64>()).powf(1.0 / r2)
    };
    let term2 = grid.volume().powf(-(1.0 - inv(r1))) * mass_norm;
    let c = lhs / (term1 + term2).max(f64::MIN_POSITIVE);
    let embed_pow = q + m - 1.0 + 2.0 * q / d as f64;
    let embed: f64 = slices.iter().map(|f| traj.dt * power_integral(grid, f, embed_pow)).sum();
    let finite = c.is_finite() && embed.is_finite();
    Ok(AuditEntry { constant: Some(c), ..AuditEntry::new(format!("interpolation_r{r1}_{r2}"), lhs) }
        .rhs("energy_dissipation_term", term1)
        .rhs("mass_term", term2)
        .note("parabolic_embedding_integral", embed)
        .verdict(finite, if finite { 1.0 } else { -1.0 }))
}

/// Hölder product bound `‖Vρ^p‖_γ ≤ ‖V‖_{q1,q2}·‖ρ^p‖_{r1,r2}` with
/// `1/γ = 1/q1 + 1/r1 = 1/q2 + 1/r2`, evaluated on the recorded steps.
pub fn audit_compactness_product(
    traj: &TrajectoryRecord,
    v: &VectorFieldSpec,
    power: f64,
    gamma: f64,
    q1: f64,
    q2: f64,
) -> Result<AuditEntry> {
    check_trajectory(traj)?;
    let inv = |r: f64| if r.is_infinite() { 0.0 } else { 1.0 / r };
    let (i1, i2) = (1.0 / gamma - inv(q1), 1.0 / gamma - inv(q2));
    if !(i1 >= 0.0 && i2 >= 0.0) {
        return Err(invalid("product exponent γ must not exceed q1 or q2"));
    }
    let r1 = if i1 == 0.0 { f64::INFINITY } else { 1.0 / i1 };
    let r2 = if i2 == 0.0 { f64::INFINITY } else { 1.0 / i2 };
    let grid = &traj.grid;
    let mut product = Vec::new();
    let mut speed = Vec::new();
    let mut dens = Vec::new();
    for (k, f) in traj.evolved().iter().enumerate() {
        let vel = v.cell_values(grid, traj.times[k + 1]);
        let norms: Vec<f64> = vel.iter().map(|u| (u[0] * u[0] + u[1] * u[1]).sqrt()).collect();
        let rp: Vec<f64> = f.iter().map(|r| r.powf(power)).collect();
        product.push(norms.iter().zip(&rp).map(|(a, b)| a * b).collect::<Vec<_>>());
        speed.push(norms);
        dens.push(rp);
    }
    let lhs = mixed_norm(grid, &product, traj.dt, gamma, gamma)?;
    let vn = mixed_norm(grid, &speed, traj.dt, q1, q2)?;
    let rn = mixed_norm(grid, &dens, traj.dt, r1, r2)?;
    let bound = vn * rn;
    let slack = bound * (1.0 + 1e-12) - lhs;
    Ok(AuditEntry { constant: Some(1.0), ..AuditEntry::new(format!("product_p{power}_gamma{gamma}"), lhs) }
        .rhs("drift_norm", vn)
        .rhs("density_norm", rn)
        .note("r1", r1)
        .note("r2", r2)
        .verdict(slack >= 0.0, slack))
}

/// How a fitted constant may move between a run and its refinement.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stability {
    /// May shrink freely, may grow by at most [`REFINEMENT_ALLOWANCE`].
    NonGrowing,
    /// Must stay within [`REFINEMENT_ALLOWANCE`] relative in both directions.
    TwoSided,
}

/// Compares the fitted constants of one audit at `(h, dt)` and `(h/2, dt/2)`.
pub fn refinement_check(coarse: &AuditEntry, fine: &AuditEntry, stability: Stability) -> Result<AuditEntry> {
    let (Some(a), Some(b)) = (coarse.constant, fine.constant) else {
        return Err(invalid(format!("audit `{}` carries no fitted constant", coarse.audit_name)));
    };
    let ratio = if a == 0.0 && b == 0.0 { 1.0 } else { b / a };
    let slack = match stability {
        Stability::NonGrowing => 1.0 + REFINEMENT_ALLOWANCE - ratio,
        Stability::TwoSided => REFINEMENT_ALLOWANCE - (ratio - 1.0).abs(),
    };
    let pass = coarse.pass && fine.pass && slack >= 0.0;
    Ok(AuditEntry { constant: Some(ratio), ..AuditEntry::new(format!("{}_refinement", coarse.audit_name), b) }
        .rhs("coarse_constant", a)
        .verdict(pass, slack))
}
