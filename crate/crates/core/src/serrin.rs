//! Exponent algebra of the scaling-invariant drift classes.
//!
//! A drift `V ∈ L^{q1,q2}_{x,t}` is scaling invariant for `(m, q, d)` when
//! `d/q1 + (2+Q)/q2 = 1+Q` with `Q = d(m−1)/q`, and sub-scaling when the left
//! side is at most the right. The gradient classes use `2+Q` on the right and
//! measure `∇V` in `L^{q̃1,q̃2}`. Exponent pairs are stored as reciprocals so
//! that an infinite exponent is the exact value `0`.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};

/// Guard band for strict inequalities and for threshold comparisons.
pub const GUARD: f64 = 1e-12;

/// Step of the downward scan for the reduced integrability exponent.
const EMBED_SCAN_STEP: f64 = 1e-3;

fn recip(q: f64) -> f64 {
    if q.is_infinite() {
        0.0
    } else {
        1.0 / q
    }
}

fn from_recip(x: f64) -> f64 {
    if x == 0.0 {
        f64::INFINITY
    } else {
        1.0 / x
    }
}

/// `Q = d(m−1)/q`.
pub fn q_md(m: f64, q: f64, d: u32) -> f64 {
    d as f64 * (m - 1.0) / q
}

/// Speed exponent `min{2, 1 + (d(q−1)+q)/(d(m−1)+q)}`.
pub fn lambda_q(m: f64, q: f64, d: u32) -> f64 {
    let d = d as f64;
    (1.0 + (d * (q - 1.0) + q) / (d * (m - 1.0) + q)).min(2.0)
}

/// `d/q1 + (2+Q)/q2 − (1+Q)`; zero on the scaling line, nonpositive in the
/// sub-scaling class. Infinite exponents are allowed.
pub fn scaling_residual(m: f64, q: f64, d: u32, q1: f64, q2: f64) -> f64 {
    scaling_residual_recip(m, q, d, recip(q1), recip(q2))
}

/// [`scaling_residual`] in reciprocal coordinates `(1/q1, 1/q2)`.
pub fn scaling_residual_recip(m: f64, q: f64, d: u32, x: f64, y: f64) -> f64 {
    let big_q = if q.is_infinite() { 0.0 } else { q_md(m, q, d) };
    d as f64 * x + (2.0 + big_q) * y - (1.0 + big_q)
}

/// Gradient-class residual `d/q̃1 + (2+Q)/q̃2 − (2+Q)` in reciprocal coordinates.
pub fn gradient_residual_recip(m: f64, q: f64, d: u32, x: f64, y: f64) -> f64 {
    let big_q = q_md(m, q, d);
    d as f64 * x + (2.0 + big_q) * y - (2.0 + big_q)
}

/// Point `(1/q1, 1/q2)` on the scaling line of `S_{m,q}` with the given `1/q1`.
pub fn scaling_line_y(m: f64, q: f64, d: u32, x: f64) -> f64 {
    let big_q = if q.is_infinite() { 0.0 } else { q_md(m, q, d) };
    (1.0 + big_q - d as f64 * x) / (2.0 + big_q)
}

/// Every closed-form threshold for one `(m, d, q)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Thresholds {
    pub m: f64,
    pub d: u32,
    pub q: f64,
    pub q_md: f64,
    pub lambda_q: f64,
    /// Largest `m` for which the divergence-nonnegative range of `q2` reaches `∞`.
    pub m_star: f64,
    /// Largest `q` with a finite upper bound on `q2` when `m > m*`; `None` if undefined.
    pub q_star: Option<f64>,
    /// `1/q1` of the compactness line.
    pub compactness_line: f64,
    /// `(2+Q)/(1+Q)`: the value of `q2` where the scaling line meets `1/q1 = 0`.
    pub q2_lower: f64,
    /// `q2` where the scaling line meets the compactness line (`∞` if above it).
    pub q2_upper: f64,
    pub q2_lower_l1: f64,
    pub q2_upper_l1: f64,
    pub gamma1: f64,
    pub gamma2: f64,
    pub q_bar: f64,
    /// Upper end of the range of `q` where the whole-space `q2` range reaches `∞`.
    pub q_tilde: Option<f64>,
}

/// `1/q1 = (md+1)/(md+2) − (d−2)/(md)`, the compactness restriction on `q1`.
pub fn compactness_line(m: f64, d: u32) -> f64 {
    let md = m * d as f64;
    (md + 1.0) / (md + 2.0) - (d as f64 - 2.0) / md
}

pub fn m_star(d: u32) -> f64 {
    let d = d as f64;
    ((d * d + 6.0 * d + 1.0).sqrt() + (d - 1.0)) / (2.0 * d)
}

/// `[(1/(m−1))·((md+1)/(md+2) − (m+d−2)/(md))]⁻¹`, absent when the bracket is not positive.
pub fn q_star(m: f64, d: u32) -> Option<f64> {
    let md = m * d as f64;
    let bracket = ((md + 1.0) / (md + 2.0) - (m + d as f64 - 2.0) / md) / (m - 1.0);
    (bracket > 0.0).then(|| 1.0 / bracket)
}

/// Upper bound on `q2` from intersecting `S_{m,q}` with the compactness line.
pub fn q2_upper(m: f64, q: f64, d: u32) -> f64 {
    let y = scaling_line_y(m, q, d, compactness_line(m, d));
    if y <= 0.0 {
        f64::INFINITY
    } else {
        1.0 / y
    }
}

pub fn gamma1(m: f64, q: f64, d: u32) -> f64 {
    let d = d as f64;
    (d * (q + m - 1.0) + 2.0 * q) / (m * d + q)
}

pub fn gamma2(m: f64, q: f64, d: u32) -> f64 {
    let d = d as f64;
    (d * (q + m - 1.0) + 2.0 * q) / (d * (q + m - 1.0) + q)
}

pub fn q_bar(m: f64, d: u32) -> f64 {
    let dm = d as f64 * (m - 1.0);
    0.5 * ((dm * dm + 4.0).sqrt() - dm + 2.0)
}

pub fn q_tilde(m: f64, d: u32) -> Option<f64> {
    let dm = d as f64 * (m - 1.0);
    let disc = dm * dm - 2.0 * d as f64 * (m * m - 1.0) + (3.0 - m).powi(2);
    if disc < 0.0 {
        return None;
    }
    let root = 0.5 * (disc.sqrt() - dm + (3.0 - m));
    (root > 0.0).then_some(root)
}

pub fn thresholds(m: f64, d: u32, q: f64) -> Result<Thresholds> {
    if !(m > 1.0) || d < 2 || !(q >= 1.0) {
        return Err(invalid(format!("thresholds need m > 1, d ≥ 2, q ≥ 1; got m={m}, d={d}, q={q}")));
    }
    let big_q = q_md(m, q, d);
    let dm = d as f64 * (m - 1.0);
    Ok(Thresholds {
        m,
        d,
        q,
        q_md: big_q,
        lambda_q: lambda_q(m, q, d),
        m_star: m_star(d),
        q_star: q_star(m, d),
        compactness_line: compactness_line(m, d),
        q2_lower: (2.0 + big_q) / (1.0 + big_q),
        q2_upper: q2_upper(m, q, d),
        q2_lower_l1: (2.0 + dm) / (1.0 + dm),
        q2_upper_l1: q2_upper(m, 1.0, d),
        gamma1: gamma1(m, q, d),
        gamma2: gamma2(m, q, d),
        q_bar: q_bar(m, d),
        q_tilde: q_tilde(m, d),
    })
}

/// Three-way comparison with the [`GUARD`] band treated as equality.
fn compare(a: f64, b: f64) -> std::cmp::Ordering {
    if (a - b).abs() <= GUARD * (1.0 + b.abs()) {
        std::cmp::Ordering::Equal
    } else if a < b {
        std::cmp::Ordering::Less
    } else {
        std::cmp::Ordering::Greater
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DriftStructure {
    General,
    DivNonneg,
    GradientClass,
}

impl FromStr for DriftStructure {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "general" => Ok(DriftStructure::General),
            "div_nonneg" | "div-nonneg" => Ok(DriftStructure::DivNonneg),
            "gradient_class" | "gradient-class" => Ok(DriftStructure::GradientClass),
            _ => Err(invalid(format!("unknown drift structure `{s}`"))),
        }
    }
}

/// The fixed enumeration of hypothesis sets. Each variant names the result
/// by role; [`TheoremId::code`] is the external identifier.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum TheoremId {
    WeakL1,
    WeakLq,
    AcL1,
    AcLq,
    AcEmbedding,
    DivNonnegL1,
    DivNonnegSmallM,
    DivNonnegLargeM,
    AcDivNonnegL1,
    AcDivNonnegLq,
    AcDivNonnegEmbedding,
    GradientL1,
    GradientLq,
    AcGradientL1,
    AcGradientLq,
    AcGradientEmbedding,
    WholeSpaceDivNonneg,
}

impl TheoremId {
    pub const ALL: [TheoremId; 17] = [
        TheoremId::WeakL1,
        TheoremId::WeakLq,
        TheoremId::AcL1,
        TheoremId::AcLq,
        TheoremId::AcEmbedding,
        TheoremId::DivNonnegL1,
        TheoremId::DivNonnegSmallM,
        TheoremId::DivNonnegLargeM,
        TheoremId::AcDivNonnegL1,
        TheoremId::AcDivNonnegLq,
        TheoremId::AcDivNonnegEmbedding,
        TheoremId::GradientL1,
        TheoremId::GradientLq,
        TheoremId::AcGradientL1,
        TheoremId::AcGradientLq,
        TheoremId::AcGradientEmbedding,
        TheoremId::WholeSpaceDivNonneg,
    ];

    pub fn code(self) -> &'static str {
        match self {
            TheoremId::WeakL1 => "T2.1(i)",
            TheoremId::WeakLq => "T2.1(ii)",
            TheoremId::AcL1 => "T2.2(i)",
            TheoremId::AcLq => "T2.2(ii)",
            TheoremId::AcEmbedding => "T2.2(iii)",
            TheoremId::DivNonnegL1 => "T2.4",
            TheoremId::DivNonnegSmallM => "T2.5(i)",
            TheoremId::DivNonnegLargeM => "T2.5(ii)",
            TheoremId::AcDivNonnegL1 => "T2.6(i)",
            TheoremId::AcDivNonnegLq => "T2.6(ii)",
            TheoremId::AcDivNonnegEmbedding => "T2.6(iii)",
            TheoremId::GradientL1 => "T2.8(i)",
            TheoremId::GradientLq => "T2.8(ii)",
            TheoremId::AcGradientL1 => "T2.9(i)",
            TheoremId::AcGradientLq => "T2.9(ii)",
            TheoremId::AcGradientEmbedding => "T2.9(iii)",
            TheoremId::WholeSpaceDivNonneg => "B.1",
        }
    }

    /// Structure the drift must have.
    pub fn structure(self) -> DriftStructure {
        use TheoremId::*;
        match self {
            WeakL1 | WeakLq | AcL1 | AcLq | AcEmbedding => DriftStructure::General,
            DivNonnegL1 | DivNonnegSmallM | DivNonnegLargeM | AcDivNonnegL1 | AcDivNonnegLq | AcDivNonnegEmbedding
            | WholeSpaceDivNonneg => DriftStructure::DivNonneg,
            GradientL1 | GradientLq | AcGradientL1 | AcGradientLq | AcGradientEmbedding => DriftStructure::GradientClass,
        }
    }

    /// Whether the class is the `q = 1` class regardless of the query's `q`.
    pub fn is_l1(self) -> bool {
        use TheoremId::*;
        matches!(self, WeakL1 | AcL1 | DivNonnegL1 | AcDivNonnegL1 | GradientL1 | AcGradientL1)
    }
}

impl fmt::Display for TheoremId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.code())
    }
}

impl FromStr for TheoremId {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        let key: String = s.chars().filter(|c| !c.is_whitespace()).collect();
        TheoremId::ALL
            .into_iter()
            .find(|t| t.code().eq_ignore_ascii_case(&key) || format!("{t:?}").eq_ignore_ascii_case(&key))
            .ok_or(Error::UnknownTheorem(s.to_string()))
    }
}

/// A membership question: does the exponent pair satisfy the hypothesis set of `theorem`?
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassQuery {
    pub theorem: TheoremId,
    pub m: f64,
    pub q: f64,
    pub d: u32,
    /// `1/q1` (or `1/q̃1` for gradient classes).
    pub inv_q1: f64,
    /// `1/q2` (or `1/q̃2`).
    pub inv_q2: f64,
    pub structure: DriftStructure,
}

impl ClassQuery {
    /// Exponents may be `f64::INFINITY`.
    pub fn new(theorem: TheoremId, m: f64, q: f64, d: u32, q1: f64, q2: f64, structure: DriftStructure) -> Result<Self> {
        if !(q1 > 0.0) || !(q2 > 0.0) {
            return Err(invalid(format!("exponents must be positive, got ({q1}, {q2})")));
        }
        Self::from_recip(theorem, m, q, d, recip(q1), recip(q2), structure)
    }

    pub fn from_recip(
        theorem: TheoremId,
        m: f64,
        q: f64,
        d: u32,
        inv_q1: f64,
        inv_q2: f64,
        structure: DriftStructure,
    ) -> Result<Self> {
        if !(m > 1.0) || !(q >= 1.0) || d < 2 {
            return Err(invalid(format!("queries need m > 1, q ≥ 1, d ≥ 2; got m={m}, q={q}, d={d}")));
        }
        if !(inv_q1 >= 0.0) || !(inv_q2 >= 0.0) || !inv_q1.is_finite() || !inv_q2.is_finite() {
            return Err(invalid("reciprocal exponents must be finite and nonnegative"));
        }
        Ok(ClassQuery { theorem, m, q, d, inv_q1, inv_q2, structure })
    }

    pub fn q1(&self) -> f64 {
        from_recip(self.inv_q1)
    }

    pub fn q2(&self) -> f64 {
        from_recip(self.inv_q2)
    }

    /// Integrability exponent of the class (`1` for the entropy-level results).
    pub fn class_q(&self) -> f64 {
        if self.theorem.is_l1() {
            1.0
        } else {
            self.q
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConstraintStatus {
    Satisfied,
    /// A strict inequality met with equality inside the guard band.
    Boundary,
    Violated,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConstraintCheck {
    pub name: String,
    /// Positive inside the constraint.
    pub margin: f64,
    pub strict: bool,
    pub status: ConstraintStatus,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassVerdict {
    pub theorem: String,
    pub admissible: bool,
    /// Violated or boundary constraints when inadmissible; active ones otherwise.
    pub binding: Vec<String>,
    pub constraints: Vec<ConstraintCheck>,
    pub q_md: f64,
    pub lambda_q: f64,
    pub residual: f64,
    pub thresholds: Thresholds,
}

#[derive(Default)]
struct Checks(Vec<ConstraintCheck>);

impl Checks {
    fn push(&mut self, name: impl Into<String>, margin: f64, strict: bool) {
        let status = if strict {
            if margin > GUARD {
                ConstraintStatus::Satisfied
            } else if margin >= -GUARD {
                ConstraintStatus::Boundary
            } else {
                ConstraintStatus::Violated
            }
        } else if margin >= -GUARD {
            ConstraintStatus::Satisfied
        } else {
            ConstraintStatus::Violated
        };
        self.0.push(ConstraintCheck { name: name.into(), margin, strict, status });
    }

    fn at_least(&mut self, name: impl Into<String>, value: f64, bound: f64, strict: bool) {
        self.push(name, value - bound, strict);
    }

    fn at_most(&mut self, name: impl Into<String>, value: f64, bound: f64, strict: bool) {
        self.push(name, bound - value, strict);
    }

    /// `q2 ≥ lo` (or `>`), written on `y = 1/q2`.
    fn q2_at_least(&mut self, label: &str, y: f64, lo: f64, strict: bool) {
        let op = if strict { ">" } else { "≥" };
        self.at_most(format!("q2 {op} {label}"), y, recip(lo), strict);
    }

    /// `q2 ≤ hi` (or `<`), written on `y = 1/q2`.
    fn q2_at_most(&mut self, label: &str, y: f64, hi: f64, strict: bool) {
        let op = if strict { "<" } else { "≤" };
        self.at_least(format!("q2 {op} {label}"), y, recip(hi), strict);
    }

    fn structure(&mut self, required: DriftStructure, given: DriftStructure) {
        let ok = match required {
            DriftStructure::General => given != DriftStructure::GradientClass,
            _ => given == required,
        };
        self.push(format!("drift structure {required:?}"), if ok { 1.0 } else { -1.0 }, false);
    }
}

/// Evaluates the hypothesis set of `query.theorem` together with the
/// sub-scaling inequality.
pub fn theorem_admissible(query: &ClassQuery) -> Result<ClassVerdict> {
    use TheoremId::*;
    let ClassQuery { theorem, m, q, d, inv_q1: x, inv_q2: y, structure } = *query;
    let cq = query.class_q();
    let th = thresholds(m, d, q)?;
    let two_d = d == 2;
    let big_q = q_md(m, cq, d);
    let mut c = Checks::default();
    c.structure(theorem.structure(), structure);

    let gradient = theorem.structure() == DriftStructure::GradientClass;
    let residual = if gradient {
        gradient_residual_recip(m, cq, d, x, y)
    } else {
        scaling_residual_recip(m, cq, d, x, y)
    };
    c.at_most("sub-scaling", residual, 0.0, false);
    if gradient {
        c.at_least("q̃1 < d", x, 1.0 / d as f64, true);
        c.at_most("q̃1 > 1", x, 1.0, true);
    }

    let lam = lambda_q(m, q, d);
    let lam1 = lambda_q(m, 1.0, d);
    let upper_ac = if q <= m { (q + m - 1.0) / (m - 1.0) } else { (2.0 * m - 1.0) / (m - 1.0) };
    let lower_q = (2.0 + big_q) / (1.0 + big_q);
    let lq_params = |c: &mut Checks| {
        c.at_least("q > 1", q, 1.0, true);
        c.at_least("q ≥ m−1", q, m - 1.0, false);
    };

    match theorem {
        WeakL1 | AcL1 => {
            c.at_most("m ≤ 2", m, 2.0, false);
            c.q2_at_least("2", y, 2.0, false);
            c.q2_at_most("m/(m−1)", y, m / (m - 1.0), two_d);
        }
        WeakLq | AcEmbedding => {
            lq_params(&mut c);
            c.q2_at_least("2", y, 2.0, false);
            c.q2_at_most("(q+m−1)/(m−1)", y, (q + m - 1.0) / (m - 1.0), two_d);
        }
        AcLq => {
            lq_params(&mut c);
            c.at_least("q1 ≤ 2m/(m−1)", x, (m - 1.0) / (2.0 * m), false);
            c.q2_at_least("2", y, 2.0, false);
            c.q2_at_most("speed upper bound", y, upper_ac, two_d);
        }
        DivNonnegL1 => {
            c.q2_at_least("q2^{1,l}", y, th.q2_lower_l1, false);
            match (compare(m, th.m_star), two_d) {
                (std::cmp::Ordering::Greater, false) => c.q2_at_most("q2^{1,u}", y, th.q2_upper_l1, false),
                (std::cmp::Ordering::Greater, true) => c.q2_at_most("q2^{1,u}", y, th.q2_upper_l1, true),
                (std::cmp::Ordering::Equal, true) => c.q2_at_most("∞", y, f64::INFINITY, true),
                _ => {}
            }
        }
        DivNonnegSmallM => {
            c.at_least("q > 1", q, 1.0, true);
            c.at_most("m ≤ m*", m, th.m_star, false);
            c.q2_at_least("q2^{q,l}", y, lower_q, false);
            if two_d && compare(m, th.m_star) == std::cmp::Ordering::Equal {
                c.q2_at_most("∞", y, f64::INFINITY, true);
            }
        }
        DivNonnegLargeM => {
            c.at_least("q > 1", q, 1.0, true);
            c.at_least("m > m*", m, th.m_star, true);
            c.q2_at_least("q2^{q,l}", y, lower_q, false);
            let order = th.q_star.map_or(std::cmp::Ordering::Less, |qs| compare(q, qs));
            match (order, two_d) {
                (std::cmp::Ordering::Greater, _) => {}
                (std::cmp::Ordering::Equal, true) => c.q2_at_most("∞", y, f64::INFINITY, true),
                (std::cmp::Ordering::Less, true) => c.q2_at_most("q2^{q,u}", y, th.q2_upper, true),
                (_, false) => c.q2_at_most("q2^{q,u}", y, th.q2_upper, false),
            }
        }
        AcDivNonnegL1 => {
            c.q2_at_least("λ₁", y, lam1, false);
            c.q2_at_most("λ₁m/(m−1)", y, lam1 * m / (m - 1.0), two_d);
        }
        AcDivNonnegLq => {
            c.at_least("q > 1", q, 1.0, true);
            if q <= m {
                c.q2_at_least("λ_q", y, lam, false);
                c.q2_at_most("λ_q(q+m−1)/(q+m−2)", y, lam * (q + m - 1.0) / (q + m - 2.0), two_d);
            } else {
                c.at_least("q1 ≤ 2m/(m−1)", x, (m - 1.0) / (2.0 * m), false);
                c.q2_at_least("2", y, 2.0, false);
                c.q2_at_most("(2m−1)/(m−1)", y, (2.0 * m - 1.0) / (m - 1.0), two_d);
            }
        }
        AcDivNonnegEmbedding => {
            c.at_least("q > 1", q, 1.0, true);
            c.q2_at_least("(2+Q)/(1+Q)", y, lower_q, true);
            let df = d as f64;
            if q <= m * df / (df - 1.0) {
                c.q2_at_most("λ₁m/(m−1)", y, lam1 * m / (m - 1.0), two_d);
            }
        }
        GradientL1 | AcGradientL1 => {
            c.q2_at_least("(2+Q)/(1+Q)", y, lower_q, true);
            c.q2_at_most("m/(m−1)", y, m / (m - 1.0), two_d);
        }
        GradientLq => {
            c.at_least("q > 1", q, 1.0, true);
            c.q2_at_least("(2+Q)/(1+Q)", y, lower_q, true);
            c.q2_at_most("(q+m−1)/(m−1)", y, (q + m - 1.0) / (m - 1.0), two_d);
        }
        AcGradientLq => {
            c.at_least("q > 1", q, 1.0, true);
            c.q2_at_least("(2+Q)/(1+Q)", y, lower_q, true);
            c.q2_at_most("speed upper bound", y, upper_ac, two_d);
        }
        AcGradientEmbedding => {
            c.at_least("q > 1", q, 1.0, true);
            c.q2_at_least("(2m−1)/(m−1)", y, (2.0 * m - 1.0) / (m - 1.0), !two_d);
            c.q2_at_most("(q+m−1)/(m−1)", y, (q + m - 1.0) / (m - 1.0), two_d);
        }
        WholeSpaceDivNonneg => {
            c.at_least("q > 1", q, 1.0, true);
            c.at_most("q ≤ m+1", q, m + 1.0, false);
            if q <= th.q_bar {
                c.q2_at_least("(2+Q)/(1+Q)", y, lower_q, false);
            } else {
                c.q2_at_least("γ₁", y, th.gamma1, false);
            }
            let inv_upper = 1.0 / th.gamma1 - 1.0 / (q + m - 1.0);
            c.q2_at_most("[1/γ₁ − 1/(q+m−1)]⁻¹", y, from_recip(inv_upper.max(0.0)), two_d);
        }
    }

    let admissible = c.0.iter().all(|k| k.status == ConstraintStatus::Satisfied);
    let binding = if admissible {
        c.0.iter().filter(|k| k.margin.abs() <= GUARD).map(|k| k.name.clone()).collect()
    } else {
        c.0.iter().filter(|k| k.status != ConstraintStatus::Satisfied).map(|k| k.name.clone()).collect()
    };
    Ok(ClassVerdict {
        theorem: theorem.code().to_string(),
        admissible,
        binding,
        constraints: c.0,
        q_md: big_q,
        lambda_q: lam,
        residual,
        thresholds: th,
    })
}

/// Result of reducing an exponent pair to one satisfying the tighter
/// absolutely-continuous hypotheses.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Embedding {
    Field { q1: f64, q2: f64, q: f64 },
    Gradient { q2: f64, q: f64 },
}

/// For field classes: from a pair satisfying the energy hypotheses (`T2.1(ii)`)
/// find `q* ∈ [1, q]` and `(q1*, q2*)` with `q1* ≤ q1`, `q2* ≤ q2` on `S_{m,q*}`
/// satisfying the absolutely-continuous hypotheses. For gradient classes:
/// from a pair satisfying the embedding hypotheses find `q*` and `q̃2* ≤ q̃2`
/// with `q̃1` fixed. `q*` is scanned downward on a `10⁻³` grid.
pub fn embed_pair(query: &ClassQuery) -> Result<Embedding> {
    if query.structure == DriftStructure::GradientClass {
        embed_gradient(query)
    } else {
        embed_field(query)
    }
}

fn scan(q: f64) -> impl Iterator<Item = f64> {
    let steps = ((q - 1.0) / EMBED_SCAN_STEP).floor() as usize;
    (0..=steps).map(move |k| q - k as f64 * EMBED_SCAN_STEP).chain(std::iter::once(1.0))
}

fn embed_field(query: &ClassQuery) -> Result<Embedding> {
    let ClassQuery { m, q, d, inv_q1: x, inv_q2: y, structure, .. } = *query;
    let hyp = ClassQuery { theorem: TheoremId::WeakLq, ..*query };
    if !theorem_admissible(&hyp)?.admissible {
        return Err(invalid("embedding needs a pair satisfying the energy hypotheses"));
    }
    let tight = ClassQuery { theorem: TheoremId::AcLq, ..*query };
    if theorem_admissible(&tight)?.admissible {
        return Ok(Embedding::Field { q1: query.q1(), q2: query.q2(), q });
    }
    for qs in scan(q) {
        let target = if qs > 1.0 + GUARD { TheoremId::AcLq } else { TheoremId::AcL1 };
        let upper = if qs <= m { (qs + m - 1.0) / (m - 1.0) } else { (2.0 * m - 1.0) / (m - 1.0) };
        let upper = if target == TheoremId::AcL1 { m / (m - 1.0) } else { upper };
        let big_q = q_md(m, qs, d);
        let mut candidates = Vec::new();
        let xa = x.max((m - 1.0) / (2.0 * m));
        candidates.push((xa, scaling_line_y(m, qs, d, xa)));
        let yb = y.max(1.0 / upper);
        candidates.push(((1.0 + big_q - (2.0 + big_q) * yb) / d as f64, yb));
        for (xs, ys) in candidates {
            if xs < x - GUARD || ys < y - GUARD || xs < 0.0 || ys < 0.0 {
                continue;
            }
            let cand = ClassQuery::from_recip(target, m, qs.max(1.0), d, xs, ys, structure)?;
            if theorem_admissible(&cand)?.admissible {
                return Ok(Embedding::Field { q1: from_recip(xs), q2: from_recip(ys), q: qs });
            }
        }
    }
    Err(Error::NoReduction(format!("m={m}, q={q}, d={d}, (1/q1, 1/q2)=({x}, {y})")))
}

fn embed_gradient(query: &ClassQuery) -> Result<Embedding> {
    let ClassQuery { m, q, d, inv_q1: x, inv_q2: y, structure, .. } = *query;
    let tight = ClassQuery { theorem: TheoremId::AcGradientLq, ..*query };
    if theorem_admissible(&tight)?.admissible {
        return Ok(Embedding::Gradient { q2: query.q2(), q });
    }
    let hyp = ClassQuery { theorem: TheoremId::AcGradientEmbedding, ..*query };
    if !theorem_admissible(&hyp)?.admissible {
        return Err(invalid("embedding needs a pair satisfying the gradient embedding hypotheses"));
    }
    for qs in scan(q) {
        let target = if qs > 1.0 + GUARD { TheoremId::AcGradientLq } else { TheoremId::AcGradientL1 };
        let ys = 1.0 - d as f64 * x / (2.0 + q_md(m, qs, d));
        if ys < y - GUARD || ys <= 0.0 {
            continue;
        }
        let cand = ClassQuery::from_recip(target, m, qs.max(1.0), d, x, ys, structure)?;
        if theorem_admissible(&cand)?.admissible {
            return Ok(Embedding::Gradient { q2: from_recip(ys), q: qs });
        }
    }
    Err(Error::NoReduction(format!("m={m}, q={q}, d={d}, (1/q̃1, 1/q̃2)=({x}, {y})")))
}

/// Sobolev lift of a gradient-class pair `(q̃1, q̃2)` with `q̃1 ∈ (1, d)` to the
/// field-class pair `(dq̃1/(d−q̃1), q̃2)`.
pub fn sobolev_lift(d: u32, q1_grad: f64, q2_grad: f64) -> Result<(f64, f64)> {
    let df = d as f64;
    if !(q1_grad > 1.0 && q1_grad < df) {
        return Err(invalid(format!("Sobolev lift needs 1 < q̃1 < d, got {q1_grad}")));
    }
    Ok((df * q1_grad / (df - q1_grad), q2_grad))
}

/// Diagrams of admissible regions in the `(1/q1, 1/q2)` plane.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum FigureId {
    /// Absolutely continuous solutions, `1 < m ≤ 2`, low dimension.
    GeneralModerateM,
    /// Absolutely continuous solutions, `m > 2`, low dimension.
    GeneralLargeM,
    DivNonnegL1,
    DivNonnegLq,
    WholeSpaceSmallM,
    WholeSpaceLargeM,
    GeneralModerateMidD,
    GeneralModerateHighD,
    GeneralLargeMidD,
    GeneralLargeHighD,
}

impl FigureId {
    pub const ALL: [FigureId; 10] = [
        FigureId::GeneralModerateM,
        FigureId::GeneralLargeM,
        FigureId::DivNonnegL1,
        FigureId::DivNonnegLq,
        FigureId::WholeSpaceSmallM,
        FigureId::WholeSpaceLargeM,
        FigureId::GeneralModerateMidD,
        FigureId::GeneralModerateHighD,
        FigureId::GeneralLargeMidD,
        FigureId::GeneralLargeHighD,
    ];

    pub fn number(self) -> u32 {
        match self {
            FigureId::GeneralModerateM => 1,
            FigureId::GeneralLargeM => 2,
            FigureId::DivNonnegL1 => 5,
            FigureId::DivNonnegLq => 6,
            FigureId::WholeSpaceSmallM => 7,
            FigureId::WholeSpaceLargeM => 8,
            FigureId::GeneralModerateMidD => 9,
            FigureId::GeneralModerateHighD => 10,
            FigureId::GeneralLargeMidD => 11,
            FigureId::GeneralLargeHighD => 12,
        }
    }
}

impl FromStr for FigureId {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        let key = s.trim();
        FigureId::ALL
            .into_iter()
            .find(|f| f.number().to_string() == key || format!("{f:?}").eq_ignore_ascii_case(key))
            .ok_or(Error::UnknownFigure(s.to_string()))
    }
}

/// A scaling line `S_{m,q}` (`q = ∞` allowed) in the `(1/q1, 1/q2)` plane.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScalingLine {
    pub m: f64,
    pub q: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Vertex {
    pub label: String,
    /// `(1/q1, 1/q2)`.
    pub point: [f64; 2],
    /// Scaling lines the vertex is drawn on.
    pub on_lines: Vec<ScalingLine>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Polygon {
    /// Vertex labels in drawing order.
    pub labels: Vec<String>,
    /// Hypothesis set the shaded polygon illustrates.
    pub theorem: TheoremId,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RegionDiagram {
    pub figure: FigureId,
    pub m: f64,
    pub d: u32,
    pub q: f64,
    pub vertices: Vec<Vertex>,
    pub polygons: Vec<Polygon>,
}

impl RegionDiagram {
    pub fn vertex(&self, label: &str) -> Option<&Vertex> {
        self.vertices.iter().find(|v| v.label == label)
    }

    /// Closed edges of every polygon, as labelled point pairs.
    pub fn segments(&self) -> Vec<(String, [f64; 2], [f64; 2])> {
        let mut out = Vec::new();
        for p in &self.polygons {
            for k in 0..p.labels.len() {
                let (a, b) = (&p.labels[k], &p.labels[(k + 1) % p.labels.len()]);
                if let (Some(va), Some(vb)) = (self.vertex(a), self.vertex(b)) {
                    out.push((format!("{a}{b}"), va.point, vb.point));
                }
            }
        }
        out
    }
}

fn regime(ok: bool, bound: &str) -> Result<()> {
    if ok {
        Ok(())
    } else {
        Err(Error::Regime(bound.to_string()))
    }
}

struct Builder {
    m: f64,
    vertices: Vec<Vertex>,
}

impl Builder {
    fn add(&mut self, label: &str, point: [f64; 2], on: &[f64]) {
        let m = self.m;
        self.vertices.push(Vertex {
            label: label.to_string(),
            point,
            on_lines: on.iter().map(|&q| ScalingLine { m, q }).collect(),
        });
    }
}

/// Labelled vertices of the given diagram, evaluated from their closed forms.
pub fn region_vertices(figure: FigureId, m: f64, d: u32, q: f64) -> Result<RegionDiagram> {
    use FigureId::*;
    regime(m > 1.0, "m > 1")?;
    regime(d >= 2, "d ≥ 2")?;
    let df = d as f64;
    let inf = f64::INFINITY;
    let dm = df * (m - 1.0);
    let low_d = 2.0 * m / ((2.0 * m - 1.0) * (m - 1.0));
    let mid_d = 2.0 * m / (m - 1.0);
    let ms = m_star(d);
    let mut b = Builder { m, vertices: Vec::new() };
    let poly = |labels: &str, theorem| Polygon { labels: labels.chars().map(String::from).collect(), theorem };

    let general_moderate = |b: &mut Builder| {
        b.add("a", [0.0, 0.5], &[inf]);
        b.add("b", [1.0 / df, 0.0], &[inf]);
        b.add("A", [(m - 1.0) / (2.0 * m), (df + m * (2.0 - df)) / (4.0 * m)], &[inf]);
        b.add("B", [1.0 / (df * (2.0 * m - 1.0)), (m - 1.0) / (2.0 * m - 1.0)], &[inf]);
        b.add("C", [(1.0 + dm) / (df * (2.0 * m - 1.0)), (m - 1.0) / (2.0 * m - 1.0)], &[m]);
        b.add("c", [(m + dm) / (m * df), 0.0], &[m]);
        b.add("D", [((2.0 - m) + dm) / (m * df), (m - 1.0) / m], &[1.0]);
        b.add("E", [(m - 1.0) / 2.0, 0.5], &[1.0]);
        b.add("F", [(m - 1.0) / (2.0 * m), 0.5], &[]);
    };
    let corner_g = [(m - 1.0) / (2.0 * m), (m - 1.0) / (2.0 * m - 1.0)];
    let corner_h = [(m - 1.0) / (2.0 * m), (dm - 2.0 * m) / (2.0 * m * (df - 2.0))];
    let general_large = |b: &mut Builder, a_on_axis: bool| {
        b.add("a", [0.0, 0.5], &[inf]);
        b.add("b", [1.0 / df, 0.0], &[inf]);
        if a_on_axis {
            b.add("A", [(m - 1.0) / (2.0 * m), 0.0], &[]);
        } else {
            b.add("A", [(m - 1.0) / (2.0 * m), (df + m * (2.0 - df)) / (4.0 * m)], &[inf]);
        }
        b.add("B", [1.0 / (df * (2.0 * m - 1.0)), (m - 1.0) / (2.0 * m - 1.0)], &[inf]);
        b.add("C", [(1.0 + dm) / (df * (2.0 * m - 1.0)), (m - 1.0) / (2.0 * m - 1.0)], &[m]);
        b.add("D", [0.5, 0.5], &[m - 1.0]);
        b.add("E", [(m - 1.0) / (2.0 * m), 0.5], &[]);
        b.add("G", corner_g, &[]);
    };
    let whole_space_common = |b: &mut Builder| {
        b.add("C", [(2.0 + dm) / (2.0 * m * df), (m - 1.0) / (2.0 * m)], &[m + 1.0]);
        b.add("H", [(m - 1.0) / (2.0 * (m + 1.0)), 0.5], &[m + 1.0]);
        b.add("E", [(1.0 + dm) / df, 0.0], &[1.0]);
        b.add("F", [0.0, (1.0 + dm) / (2.0 + dm)], &[1.0]);
        let qb = q_bar(m, d);
        b.add("G", [0.0, (qb + dm) / (2.0 * qb + dm)], &[qb]);
    };
    let div_nonneg_common = |b: &mut Builder| {
        let l = compactness_line(m, d);
        let md = m * df;
        b.add("A", [0.0, 0.5], &[inf]);
        b.add("B", [1.0 / df, 0.0], &[inf]);
        b.add("E", [0.0, (1.0 + dm) / (2.0 + dm)], &[1.0]);
        b.add("D", [l, (md + 1.0) / (md + 2.0) - 1.0 / m], &[1.0]);
    };

    let polygons = match figure {
        GeneralModerateM => {
            regime(m <= 2.0, "1 < m ≤ 2")?;
            regime(q > 1.0, "q > 1")?;
            regime(d > 2 && df <= low_d.max(2.0), "2 < d ≤ max{2, 2m/((2m−1)(m−1))}")?;
            general_moderate(&mut b);
            vec![poly("ABCDEF", TheoremId::AcLq), poly("bCB", TheoremId::WeakLq)]
        }
        GeneralModerateMidD => {
            regime(m <= 2.0, "1 < m ≤ 2")?;
            regime(q > 1.0, "q > 1")?;
            regime(df > low_d.max(2.0) && df <= mid_d, "max{2, 2m/((2m−1)(m−1))} < d ≤ 2m/(m−1)")?;
            general_moderate(&mut b);
            b.add("G", corner_g, &[]);
            vec![poly("GCDEF", TheoremId::AcLq), poly("GAbC", TheoremId::WeakLq)]
        }
        GeneralModerateHighD => {
            regime(m <= 2.0, "1 < m ≤ 2")?;
            regime(q > 1.0, "q > 1")?;
            regime(df > mid_d, "d > 2m/(m−1)")?;
            general_moderate(&mut b);
            b.add("G", corner_g, &[]);
            b.add("H", corner_h, &[]);
            vec![poly("GCDEF", TheoremId::AcLq), poly("GHC", TheoremId::WeakLq)]
        }
        GeneralLargeM | GeneralLargeMidD => {
            regime(m > 2.0, "m > 2")?;
            regime(q >= m - 1.0, "q ≥ m−1")?;
            regime(d > 2 && df <= mid_d, "2 < d ≤ 2m/(m−1)")?;
            general_large(&mut b, false);
            vec![poly("GCDE", TheoremId::AcLq), poly("GAbC", TheoremId::WeakLq)]
        }
        GeneralLargeHighD => {
            regime(m > 2.0, "m > 2")?;
            regime(q >= m - 1.0, "q ≥ m−1")?;
            regime(df > mid_d, "d > 2m/(m−1)")?;
            general_large(&mut b, true);
            b.add("H", corner_h, &[]);
            vec![poly("GCDE", TheoremId::AcLq), poly("GHC", TheoremId::WeakLq)]
        }
        DivNonnegL1 => {
            regime(m > ms, "m > m*")?;
            regime(d > 2, "d > 2")?;
            let dms = df * (ms - 1.0);
            b.vertices.clear();
            div_nonneg_common(&mut b);
            let on = [ScalingLine { m: ms, q: 1.0 }];
            b.vertices.push(Vertex { label: "F".into(), point: [0.0, (1.0 + dms) / (2.0 + dms)], on_lines: on.to_vec() });
            b.vertices.push(Vertex { label: "C".into(), point: [(1.0 + dms) / df, 0.0], on_lines: on.to_vec() });
            vec![poly("ABCDE", TheoremId::DivNonnegL1)]
        }
        DivNonnegLq => {
            regime(m > ms, "m > m*")?;
            regime(q > 1.0, "q > 1")?;
            regime(d > 2, "d > 2")?;
            let qs = q_star(m, d).ok_or_else(|| Error::Regime("q* defined".into()))?;
            let qms = q_md(m, qs, d);
            div_nonneg_common(&mut b);
            b.add("F", [0.0, (1.0 + qms) / (2.0 + qms)], &[qs]);
            b.add("C", [(1.0 + qms) / df, 0.0], &[qs]);
            vec![poly("ABCDE", TheoremId::DivNonnegLargeM)]
        }
        WholeSpaceSmallM => {
            regime(m <= ms, "1 < m ≤ m*")?;
            regime(q > 1.0 && q <= m + 1.0, "1 < q ≤ m+1")?;
            regime(d > 2, "d > 2")?;
            let qt = q_tilde(m, d).ok_or_else(|| Error::Regime("q̃ defined".into()))?;
            whole_space_common(&mut b);
            b.add("D", [(qt + dm) / (df * qt), 0.0], &[qt]);
            vec![poly("CDEFGH", TheoremId::WholeSpaceDivNonneg)]
        }
        WholeSpaceLargeM => {
            regime(m > ms, "m > m*")?;
            regime(q > 1.0 && q <= m + 1.0, "1 < q ≤ m+1")?;
            regime(d > 2, "d > 2")?;
            whole_space_common(&mut b);
            let g1 = gamma1(m, q, d);
            let p = q + m - 1.0;
            b.add("D", [1.0 / g1 - (df - 2.0) / (df * p), 1.0 / g1 - 1.0 / p], &[q]);
            vec![poly("CDEFGH", TheoremId::WholeSpaceDivNonneg)]
        }
    };
    Ok(RegionDiagram { figure, m, d, q, vertices: b.vertices, polygons })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn bisect(f: impl Fn(f64) -> f64, mut lo: f64, mut hi: f64) -> f64 {
        let flo = f(lo);
        assert!(flo * f(hi) <= 0.0, "bracket [{lo}, {hi}] does not change sign");
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if (f(mid) > 0.0) == (flo > 0.0) {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        0.5 * (lo + hi)
    }

    fn query(t: TheoremId, m: f64, q: f64, d: u32, q1: f64, q2: f64, s: DriftStructure) -> ClassQuery {
        ClassQuery::new(t, m, q, d, q1, q2, s).unwrap()
    }

    #[test]
    fn lambda_examples() {
        assert!((lambda_q(2.0, 1.0, 3) - 1.25).abs() < 1e-15);
        for (m, d) in [(1.5, 2), (2.0, 3), (3.7, 5)] {
            assert_eq!(lambda_q(m, m, d), 2.0);
        }
        assert_eq!(lambda_q(1.0, 5.0, 2), 2.0);
    }

    #[test]
    fn scaling_examples() {
        assert!(scaling_residual(2.0, 1.0, 3, 2.0, 2.0).abs() < 1e-15);
        let inf = f64::INFINITY;
        assert!((scaling_residual(2.0, 1.0, 3, inf, inf) + 4.0).abs() < 1e-15);
        // q → ∞ recovers d/q1 + 2/q2 − 1.
        let big = scaling_residual(2.0, 1e12, 3, 4.0, 5.0);
        assert!((big - (0.75 + 0.4 - 1.0)).abs() < 1e-10);
    }

    #[test]
    fn threshold_examples() {
        assert!((m_star(3) - (28f64.sqrt() + 2.0) / 6.0).abs() < 1e-15);
        assert!((m_star(3) - 1.21525).abs() < 1e-5);
        assert!((q_star(2.0, 3).unwrap() - 8.0 / 3.0).abs() < 1e-12);
        assert!((gamma1(2.0, 1.0, 3) - 8.0 / 7.0).abs() < 1e-15);
        assert!((gamma2(2.0, 1.0, 3) - 8.0 / 7.0).abs() < 1e-15);
        assert!((gamma1(2.0, 2.0, 3) - gamma2(2.0, 2.0, 3)).abs() > 1e-3);
        let seq: Vec<f64> = [2, 3, 10, 100].iter().map(|&d| m_star(d)).collect();
        assert!(seq.windows(2).all(|w| w[1] < w[0]) && seq[3] > 1.0 && seq[3] < 1.05);
    }

    #[test]
    fn thresholds_match_root_finding() {
        for d in [2, 3, 4, 7] {
            let ms = bisect(|m| (1.0 + d as f64 * (m - 1.0)) / d as f64 - compactness_line(m, d), 1.0 + 1e-9, 3.0);
            assert!((ms - m_star(d)).abs() < 1e-10, "d={d}");
        }
        for (m, d) in [(2.0, 3), (1.5, 4), (3.0, 5)] {
            let l = compactness_line(m, d);
            let qs = bisect(|q| scaling_line_y(m, q, d, l), 1.0, 1e4);
            assert!((qs - q_star(m, d).unwrap()).abs() < 1e-8 * qs, "m={m} d={d}");
            let lower = |q: f64| (2.0 + q_md(m, q, d)) / (1.0 + q_md(m, q, d));
            let qb = bisect(|q| lower(q) - gamma1(m, q, d), 1e-6, 100.0);
            assert!((qb - q_bar(m, d)).abs() < 1e-10);
        }
        let (m, d) = (1.1, 3);
        let qt = bisect(|q| 1.0 / gamma1(m, q, d) - 1.0 / (q + m - 1.0), 1.0, 10.0);
        assert!((qt - q_tilde(m, d).unwrap()).abs() < 1e-10);
    }

    #[test]
    fn upper_bound_matches_l1_closed_form() {
        for (m, d) in [(1.5, 3), (1.8, 4), (2.5, 3)] {
            let md = m * d as f64;
            let closed = 1.0 / ((md + 1.0) / (md + 2.0) - 1.0 / m);
            assert!((q2_upper(m, 1.0, d) - closed).abs() < 1e-12 * closed);
        }
        let (m, d) = (2.0, 3);
        assert!(q2_upper(m, q_star(m, d).unwrap() * (1.0 + 1e-9), d).is_infinite());
    }

    #[test]
    fn energy_l1_interval_degenerates() {
        let g = DriftStructure::General;
        assert!(theorem_admissible(&query(TheoremId::WeakL1, 2.0, 1.0, 3, 2.0, 2.0, g)).unwrap().admissible);
        let v = theorem_admissible(&query(TheoremId::WeakL1, 2.0, 1.0, 3, 2.0, 2.1, g)).unwrap();
        assert!(!v.admissible);
        assert!(v.binding.iter().any(|b| b.contains("m/(m−1)")));
        // q2 = 2 with a larger q1 than the line allows breaks sub-scaling.
        let v = theorem_admissible(&query(TheoremId::WeakL1, 2.0, 1.0, 3, 1.9, 2.0, g)).unwrap();
        assert_eq!(v.binding, vec!["sub-scaling".to_string()]);
    }

    #[test]
    fn energy_lq_needs_q_at_least_m_minus_one() {
        let v = theorem_admissible(&query(TheoremId::WeakLq, 4.0, 2.0, 3, 10.0, 2.5, DriftStructure::General)).unwrap();
        assert!(!v.admissible);
        assert!(v.binding.contains(&"q ≥ m−1".to_string()));
        assert!(v.residual.is_finite());
    }

    #[test]
    fn div_nonneg_small_m_reaches_infinity() {
        let (m, q, d) = (1.1, 2.0, 3);
        assert!(m < m_star(d));
        let lower = thresholds(m, d, q).unwrap().q2_lower;
        let s = DriftStructure::DivNonneg;
        let inf = f64::INFINITY;
        assert!(theorem_admissible(&query(TheoremId::DivNonnegSmallM, m, q, d, inf, inf, s)).unwrap().admissible);
        assert!(theorem_admissible(&query(TheoremId::DivNonnegSmallM, m, q, d, inf, lower, s)).unwrap().admissible);
        assert!(!theorem_admissible(&query(TheoremId::DivNonnegSmallM, m, q, d, inf, lower * 0.99, s)).unwrap().admissible);
        // Wrong structure is reported, not ignored.
        let v = theorem_admissible(&query(TheoremId::DivNonnegSmallM, m, q, d, inf, inf, DriftStructure::General)).unwrap();
        assert!(!v.admissible && v.binding[0].starts_with("drift structure"));
    }

    #[test]
    fn strict_bounds_report_boundary_in_two_dimensions() {
        let (m, d) = (1.5, 2);
        let v = theorem_admissible(&query(TheoremId::WeakL1, m, 1.0, d, f64::INFINITY, m / (m - 1.0), DriftStructure::General))
            .unwrap();
        assert!(!v.admissible);
        let k = v.constraints.iter().find(|c| c.name.contains("m/(m−1)")).unwrap();
        assert_eq!(k.status, ConstraintStatus::Boundary);
        let v3 = theorem_admissible(&query(TheoremId::WeakL1, m, 1.0, 3, f64::INFINITY, m / (m - 1.0), DriftStructure::General))
            .unwrap();
        assert!(v3.admissible);
    }

    #[test]
    fn theorem_ids_round_trip() {
        for t in TheoremId::ALL {
            assert_eq!(t.code().parse::<TheoremId>().unwrap(), t);
        }
        assert_eq!("T2.3".parse::<TheoremId>(), Err(Error::UnknownTheorem("T2.3".into())));
    }

    #[test]
    fn moderate_m_diagram() {
        let r = region_vertices(FigureId::GeneralModerateM, 1.5, 3, 2.0).unwrap();
        let e = r.vertex("E").unwrap().point;
        assert!((e[0] - 0.25).abs() < 1e-15 && (e[1] - 0.5).abs() < 1e-15);
        let c = r.vertex("C").unwrap().point;
        assert!((c[0] - 2.5 / 6.0).abs() < 1e-15 && (c[1] - 0.25).abs() < 1e-15);
        match region_vertices(FigureId::GeneralModerateM, 1.5, 4, 2.0) {
            Err(Error::Regime(msg)) => assert!(msg.contains("2m/((2m−1)(m−1))")),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn div_nonneg_vertex_on_entropy_line() {
        for m in [1.3, 1.6, 1.9] {
            let r = region_vertices(FigureId::DivNonnegL1, m, 3, 1.0).unwrap();
            let p = r.vertex("D").unwrap().point;
            assert!(scaling_residual_recip(m, 1.0, 3, p[0], p[1]).abs() < 1e-12);
        }
    }

    #[test]
    fn every_vertex_on_its_lines_and_polygons_complete() {
        let cases = [
            (FigureId::GeneralModerateM, 1.5, 3, 2.0),
            (FigureId::GeneralModerateMidD, 1.5, 5, 2.0),
            (FigureId::GeneralModerateHighD, 1.5, 7, 2.0),
            (FigureId::GeneralLargeM, 3.0, 3, 2.5),
            (FigureId::GeneralLargeMidD, 2.5, 3, 2.0),
            (FigureId::GeneralLargeHighD, 3.0, 4, 2.5),
            (FigureId::DivNonnegL1, 1.5, 3, 1.0),
            (FigureId::DivNonnegLq, 1.5, 3, 2.0),
            (FigureId::WholeSpaceSmallM, 1.1, 3, 1.5),
            (FigureId::WholeSpaceLargeM, 2.0, 3, 2.0),
        ];
        for (f, m, d, q) in cases {
            let r = region_vertices(f, m, d, q).unwrap();
            for v in &r.vertices {
                for line in &v.on_lines {
                    let res = scaling_residual_recip(line.m, line.q, d, v.point[0], v.point[1]);
                    assert!(res.abs() < 1e-12, "{f:?} {} residual {res}", v.label);
                }
            }
            for p in &r.polygons {
                assert!(p.labels.len() >= 3);
                for l in &p.labels {
                    assert!(r.vertex(l).is_some(), "{f:?} polygon {:?} misses {l}", p.labels);
                }
            }
            assert_eq!(r.segments().len(), r.polygons.iter().map(|p| p.labels.len()).sum::<usize>());
        }
    }

    #[test]
    fn corner_h_on_energy_boundary() {
        // H lies on the segment from b to D, where q2 meets its energy upper bound.
        let r = region_vertices(FigureId::GeneralModerateHighD, 1.5, 7, 2.0).unwrap();
        let (b, dv, h) = (r.vertex("b").unwrap().point, r.vertex("D").unwrap().point, r.vertex("H").unwrap().point);
        let cross = (dv[0] - b[0]) * (h[1] - b[1]) - (dv[1] - b[1]) * (h[0] - b[0]);
        assert!(cross.abs() < 1e-14);
    }

    #[test]
    fn unknown_figures_rejected() {
        assert_eq!("3".parse::<FigureId>(), Err(Error::UnknownFigure("3".into())));
        assert_eq!("12".parse::<FigureId>().unwrap(), FigureId::GeneralLargeHighD);
    }

    #[test]
    fn embedding_identity_when_already_tight() {
        let qy = query(TheoremId::AcEmbedding, 3.0, 4.0, 3, 1.0 / 0.4, 1.0 / 0.4, DriftStructure::General);
        let qy = ClassQuery { inv_q1: (2.5 - 3.5 * 0.4) / 3.0, ..qy };
        assert!(theorem_admissible(&ClassQuery { theorem: TheoremId::AcLq, ..qy }).unwrap().admissible);
        match embed_pair(&qy).unwrap() {
            Embedding::Field { q, q1, q2 } => {
                assert_eq!(q, 4.0);
                assert_eq!((q1, q2), (qy.q1(), qy.q2()));
            }
            e => panic!("{e:?}"),
        }
    }

    #[test]
    fn embedding_moves_up_and_right() {
        let (m, q, d) = (3.0, 4.0, 3);
        let y = 0.45;
        let x = (1.0 + q_md(m, q, d) - (2.0 + q_md(m, q, d)) * y) / d as f64;
        let qy = ClassQuery::from_recip(TheoremId::AcEmbedding, m, q, d, x, y, DriftStructure::General).unwrap();
        assert!(!theorem_admissible(&ClassQuery { theorem: TheoremId::AcLq, ..qy }).unwrap().admissible);
        match embed_pair(&qy).unwrap() {
            Embedding::Field { q1, q2, q: qs } => {
                assert!(qs < q && qs >= 1.0);
                assert!(q1 <= qy.q1() && q2 <= qy.q2() + 1e-12);
                assert!(scaling_residual(m, qs, d, q1, q2).abs() < 1e-12);
                let tight = ClassQuery::new(TheoremId::AcLq, m, qs, d, q1, q2, DriftStructure::General).unwrap();
                assert!(theorem_admissible(&tight).unwrap().admissible);
            }
            e => panic!("{e:?}"),
        }
    }

    #[test]
    fn gradient_embedding_reduces_q2() {
        let (m, q, d) = (1.5, 4.0, 3);
        // q̃2 between (2m−1)/(m−1) = 4 and (q+m−1)/(m−1) = 9, on the gradient line.
        let y = 1.0 / 6.0;
        let big_q = q_md(m, q, d);
        let x = (2.0 + big_q) * (1.0 - y) / d as f64;
        let qy = ClassQuery::from_recip(TheoremId::AcGradientEmbedding, m, q, d, x, y, DriftStructure::GradientClass).unwrap();
        assert!(theorem_admissible(&qy).unwrap().admissible);
        match embed_pair(&qy).unwrap() {
            Embedding::Gradient { q2, q: qs } => {
                assert!(qs <= q && q2 <= qy.q2());
                assert!(gradient_residual_recip(m, qs, d, x, 1.0 / q2).abs() < 1e-12);
            }
            e => panic!("{e:?}"),
        }
    }

    #[test]
    fn sobolev_lift_lands_on_field_line() {
        let (m, q, d) = (2.0, 2.0, 3);
        let big_q = q_md(m, q, d);
        let q2g = 3.0;
        let q1g = d as f64 / ((2.0 + big_q) * (1.0 - 1.0 / q2g));
        let (q1, q2) = sobolev_lift(d, q1g, q2g).unwrap();
        assert!((q1 - d as f64 * q1g / (d as f64 - q1g)).abs() < 1e-12 && q2 == q2g);
        assert!(scaling_residual(m, q, d, q1, q2).abs() < 1e-12);
        assert!(sobolev_lift(3, 3.5, 2.0).is_err());
    }

    proptest! {
        #[test]
        fn lambda_continuous_at_q_equals_m(m in 1.01f64..5.0, d in 2u32..8) {
            let below = lambda_q(m, m - 1e-9, d);
            let above = lambda_q(m, m + 1e-9, d);
            prop_assert!((below - 2.0).abs() < 1e-8 && above == 2.0);
            prop_assert!(lambda_q(m, 1.0 + 0.5 * (m - 1.0), d) < 2.0);
        }

        #[test]
        fn scaling_set_is_the_line_through_two_points(m in 1.01f64..4.0, q in 1.0f64..6.0, d in 2u32..6,
                                                     x1 in 0.0f64..0.3, x2 in 0.31f64..0.6) {
            let (y1, y2) = (scaling_line_y(m, q, d, x1), scaling_line_y(m, q, d, x2));
            let slope = (y2 - y1) / (x2 - x1);
            let big_q = q_md(m, q, d);
            prop_assert!((slope + d as f64 / (2.0 + big_q)).abs() < 1e-10);
            let x3 = 0.5 * (x1 + x2);
            prop_assert!(scaling_residual_recip(m, q, d, x3, y1 + slope * (x3 - x1)).abs() < 1e-12);
        }

        #[test]
        fn class_norm_monotone_in_exponents(seed in 0u64..1000, q1 in 1.0f64..6.0, q2 in 1.0f64..6.0,
                                            dq1 in 0.0f64..4.0, dq2 in 0.0f64..4.0) {
            use rand::{Rng, SeedableRng};
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let g = crate::grid::Grid::unit(2, 6).unwrap();
            let slices: Vec<Vec<f64>> = (0..5).map(|_| (0..g.len()).map(|_| rng.gen_range(-2.0..2.0)).collect()).collect();
            let dt = 0.2;
            let lo = crate::grid::mixed_norm(&g, &slices, dt, q1, q2).unwrap();
            let hi = crate::grid::mixed_norm(&g, &slices, dt, q1 + dq1, q2 + dq2).unwrap();
            prop_assert!(lo <= hi * (1.0 + 1e-12));
        }

        #[test]
        fn diagram_vertices_inside_entropy_class(m in 1.05f64..1.95, q in 1.1f64..3.0) {
            let d = 3;
            if let Ok(r) = region_vertices(FigureId::GeneralModerateM, m, d, q) {
                for v in &r.vertices {
                    prop_assert!(v.point[0] >= -1e-12 && v.point[1] >= -1e-12 && v.point[1] <= 0.5 + 1e-12);
                    prop_assert!(scaling_residual_recip(m, 1.0, d, v.point[0], v.point[1]) <= 1e-12);
                }
            }
        }

        #[test]
        fn admissible_implies_all_constraints_satisfied(t in 0usize..17, m in 1.05f64..4.0, q in 1.0f64..5.0,
                                                        d in 2u32..6, x in 0.0f64..1.0, y in 0.0f64..1.0) {
            let theorem = TheoremId::ALL[t];
            let qy = ClassQuery::from_recip(theorem, m, q, d, x, y, theorem.structure()).unwrap();
            let v = theorem_admissible(&qy).unwrap();
            prop_assert_eq!(v.admissible, v.constraints.iter().all(|c| c.status == ConstraintStatus::Satisfied));
            prop_assert!(v.residual.is_finite());
        }
    }
}
