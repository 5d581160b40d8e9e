//! Comparison functions of class K, K∞, L and KL.
//!
//! Functions are closed expression trees over a handful of atoms, so they can
//! be serialized, printed and re-evaluated exactly. The semantics of a tree
//! depend on its class tag:
//!
//! * K / K∞ functions are evaluated at time 0; any decay rate inside is inert.
//! * L functions ignore `s` and are evaluated at `s = 1`.
//! * KL functions use both arguments.
//!
//! Class membership is only ever checked on finite grids; a passing grid
//! check means "consistent", never "proved".

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum FnClass {
    K,
    Kinf,
    L,
    KL,
}

impl FnClass {
    fn is_k(self) -> bool {
        matches!(self, FnClass::K | FnClass::Kinf)
    }
}

impl fmt::Display for FnClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            FnClass::K => "K",
            FnClass::Kinf => "Kinf",
            FnClass::L => "L",
            FnClass::KL => "KL",
        };
        f.write_str(s)
    }
}

/// Leaf of an expression tree.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "atom", rename_all = "snake_case")]
pub enum Atom {
    /// `c * s^a * exp(-lam * t)`.
    #[serde(rename = "powexp")]
    PowExp { c: f64, a: f64, lam: f64 },
    Identity,
    /// Piecewise-linear increasing function through the origin and the given
    /// breakpoints, extended linearly past the last one.
    Table { points: Vec<[f64; 2]> },
    /// Square root below `threshold`, linear above, both decaying as
    /// `exp(-lam * t)`. With `threshold = 1` this is `c*sqrt(s)` / `c*s`.
    SqrtSwitch { c: f64, lam: f64, threshold: f64 },
}

/// Interior node of an expression tree.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case")]
pub enum Op {
    /// Pointwise maximum.
    Max { args: Vec<Node> },
    /// `outer(inner(s, t))`, outer evaluated at time 0.
    Compose { outer: Box<Node>, inner: Box<Node> },
    /// `k * arg(s, t)`.
    Scale { k: f64, arg: Box<Node> },
    /// Separable product `k(s) * l(t)`.
    Product { k: Box<Node>, l: Box<Node> },
    /// Time section `arg(s, t0)`.
    AtTime { t: f64, arg: Box<Node> },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Node {
    Atom(Atom),
    Op(Op),
}

impl Node {
    pub(crate) fn eval(&self, s: f64, t: f64) -> f64 {
        match self {
            Node::Atom(atom) => match atom {
                Atom::PowExp { c, a, lam } => {
                    let decay = if *lam == 0.0 { 1.0 } else { (-lam * t).exp() };
                    let p = s.powf(*a);
                    if s > 0.0 && !p.is_normal() {
                        // s^a left the normal range; c may bring it back
                        return (c.ln() + a * s.ln() - lam * t).exp();
                    }
                    c * p * decay
                }
                Atom::Identity => s,
                Atom::Table { points } => eval_table(points, s),
                Atom::SqrtSwitch { c, lam, threshold } => {
                    let base = if s < *threshold {
                        (threshold * s).sqrt()
                    } else {
                        s
                    };
                    c * base * (-lam * t).exp()
                }
            },
            Node::Op(op) => match op {
                Op::Max { args } => args
                    .iter()
                    .map(|n| n.eval(s, t))
                    .fold(f64::NEG_INFINITY, f64::max),
                Op::Compose { outer, inner } => outer.eval(inner.eval(s, t), 0.0),
                Op::Scale { k, arg } => k * arg.eval(s, t),
                Op::Product { k, l } => k.eval(s, 0.0) * l.eval(1.0, t),
                Op::AtTime { t: t0, arg } => arg.eval(s, *t0),
            },
        }
    }
}

fn eval_table(points: &[[f64; 2]], s: f64) -> f64 {
    let mut prev = [0.0, 0.0];
    for p in points {
        if s <= p[0] {
            return prev[1] + (p[1] - prev[1]) * (s - prev[0]) / (p[0] - prev[0]);
        }
        prev = *p;
    }
    // beyond the last breakpoint: continue with the last slope
    let n = points.len();
    let before = if n >= 2 { points[n - 2] } else { [0.0, 0.0] };
    let slope = (prev[1] - before[1]) / (prev[0] - before[0]);
    prev[1] + slope * (s - prev[0])
}

/// A comparison function: a class tag plus the expression tree it asserts
/// to belong to that class.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ComparisonFunction {
    pub class: FnClass,
    pub node: Node,
}

fn check_positive(name: &str, v: f64) -> Result<()> {
    if v.is_finite() && v > 0.0 {
        Ok(())
    } else {
        Err(Error::InvalidParameter(format!("{name} must be positive and finite, got {v}")))
    }
}

fn check_nonnegative(name: &str, v: f64) -> Result<()> {
    if v.is_finite() && v >= 0.0 {
        Ok(())
    } else {
        Err(Error::InvalidParameter(format!("{name} must be nonnegative and finite, got {v}")))
    }
}

impl ComparisonFunction {
    pub fn new(class: FnClass, node: Node) -> Self {
        Self { class, node }
    }

    pub fn identity() -> Self {
        Self::new(FnClass::Kinf, Node::Atom(Atom::Identity))
    }

    /// K∞ power function `c * s^a`.
    pub fn power(c: f64, a: f64) -> Result<Self> {
        check_positive("c", c)?;
        check_positive("a", a)?;
        Ok(Self::new(FnClass::Kinf, Node::Atom(Atom::PowExp { c, a, lam: 0.0 })))
    }

    /// K∞ linear function `c * s`.
    pub fn linear(c: f64) -> Result<Self> {
        Self::power(c, 1.0)
    }

    /// KL function `c * s^a * exp(-lam t)`.
    pub fn kl_exp(c: f64, a: f64, lam: f64) -> Result<Self> {
        check_positive("c", c)?;
        check_positive("a", a)?;
        check_nonnegative("lam", lam)?;
        Ok(Self::new(FnClass::KL, Node::Atom(Atom::PowExp { c, a, lam })))
    }

    /// L function `c * exp(-lam t)`.
    pub fn l_exp(c: f64, lam: f64) -> Result<Self> {
        check_positive("c", c)?;
        check_nonnegative("lam", lam)?;
        Ok(Self::new(FnClass::L, Node::Atom(Atom::PowExp { c, a: 1.0, lam })))
    }

    pub fn sqrt_switch(c: f64, lam: f64, threshold: f64) -> Result<Self> {
        check_positive("c", c)?;
        check_nonnegative("lam", lam)?;
        check_positive("threshold", threshold)?;
        Ok(Self::new(FnClass::KL, Node::Atom(Atom::SqrtSwitch { c, lam, threshold })))
    }

    /// Piecewise-linear K function through the origin and `points`.
    pub fn table(points: Vec<[f64; 2]>) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::InvalidParameter("table needs at least one breakpoint".into()));
        }
        let mut prev = [0.0, 0.0];
        for p in &points {
            if !(p[0].is_finite() && p[1].is_finite() && p[0] > prev[0] && p[1] > prev[1]) {
                return Err(Error::InvalidParameter(format!(
                    "table breakpoints must be strictly increasing in both coordinates, got {p:?} after {prev:?}"
                )));
            }
            prev = *p;
        }
        Ok(Self::new(FnClass::Kinf, Node::Atom(Atom::Table { points })))
    }

    pub fn with_class(mut self, class: FnClass) -> Self {
        self.class = class;
        self
    }

    /// Evaluates the function. `t` must be present for L and KL functions.
    pub fn eval(&self, s: f64, t: Option<u64>) -> Result<f64> {
        if !(s >= 0.0) {
            return Err(Error::Domain(format!("argument must be nonnegative, got {s}")));
        }
        match (self.class, t) {
            (FnClass::K | FnClass::Kinf, _) => Ok(self.node.eval(s, 0.0)),
            (FnClass::L, Some(t)) => Ok(self.node.eval(1.0, t as f64)),
            (FnClass::KL, Some(t)) => Ok(self.node.eval(s, t as f64)),
            (class, None) => Err(Error::Domain(format!("{class} function needs a time argument"))),
        }
    }

    /// Unchecked evaluation of a K function.
    #[inline]
    pub fn k(&self, s: f64) -> f64 {
        debug_assert!(self.class.is_k());
        self.node.eval(s, 0.0)
    }

    /// Unchecked evaluation of a KL function.
    #[inline]
    pub fn kl(&self, s: f64, t: f64) -> f64 {
        debug_assert_eq!(self.class, FnClass::KL);
        self.node.eval(s, t)
    }

    /// Unchecked evaluation of an L function.
    #[inline]
    pub fn l(&self, t: f64) -> f64 {
        debug_assert_eq!(self.class, FnClass::L);
        self.node.eval(1.0, t)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("comparison functions always serialize")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::InvalidParameter(e.to_string()))
    }
}

/// Pointwise maximum `f ⊕ g`.
pub fn oplus(f: &ComparisonFunction, g: &ComparisonFunction) -> Result<ComparisonFunction> {
    let class = match (f.class, g.class) {
        (FnClass::Kinf, FnClass::Kinf) => FnClass::Kinf,
        (a, b) if a.is_k() && b.is_k() => FnClass::K,
        (FnClass::KL, FnClass::KL) => FnClass::KL,
        (FnClass::L, FnClass::L) => FnClass::L,
        (left, right) => {
            return Err(Error::ClassMismatch {
                op: "oplus",
                left,
                right,
            })
        }
    };
    let mut args = Vec::new();
    for n in [&f.node, &g.node] {
        match n {
            Node::Op(Op::Max { args: inner }) => args.extend(inner.iter().cloned()),
            other => args.push(other.clone()),
        }
    }
    Ok(ComparisonFunction::new(class, Node::Op(Op::Max { args })))
}

/// ⊕ over a non-empty list of functions of one class.
pub fn oplus_all(fs: &[ComparisonFunction]) -> Result<ComparisonFunction> {
    let (first, rest) = fs
        .split_first()
        .ok_or_else(|| Error::InvalidParameter("oplus over an empty list".into()))?;
    rest.iter().try_fold(first.clone(), |acc, f| oplus(&acc, f))
}

/// Composition `outer ∘ inner` of two K functions.
pub fn compose(outer: &ComparisonFunction, inner: &ComparisonFunction) -> Result<ComparisonFunction> {
    if !outer.class.is_k() || !inner.class.is_k() {
        return Err(Error::ClassMismatch {
            op: "compose",
            left: outer.class,
            right: inner.class,
        });
    }
    let class = if outer.class == FnClass::Kinf && inner.class == FnClass::Kinf {
        FnClass::Kinf
    } else {
        FnClass::K
    };
    Ok(ComparisonFunction::new(class, compose_node(&outer.node, &inner.node)))
}

/// Composition `outer(inner(s, t))` of a K function with a KL function.
pub fn compose_kl(outer: &ComparisonFunction, inner: &ComparisonFunction) -> Result<ComparisonFunction> {
    if !outer.class.is_k() || inner.class != FnClass::KL {
        return Err(Error::ClassMismatch {
            op: "compose_kl",
            left: outer.class,
            right: inner.class,
        });
    }
    Ok(ComparisonFunction::new(FnClass::KL, compose_node(&outer.node, &inner.node)))
}

fn compose_node(outer: &Node, inner: &Node) -> Node {
    match (outer, inner) {
        (Node::Atom(Atom::Identity), n) | (n, Node::Atom(Atom::Identity)) => n.clone(),
        _ => Node::Op(Op::Compose {
            outer: Box::new(outer.clone()),
            inner: Box::new(inner.clone()),
        }),
    }
}

/// `k * f` for `k > 0`; keeps the class.
pub fn scale(k: f64, f: &ComparisonFunction) -> Result<ComparisonFunction> {
    check_positive("scale factor", k)?;
    if k == 1.0 {
        return Ok(f.clone());
    }
    Ok(ComparisonFunction::new(
        f.class,
        Node::Op(Op::Scale {
            k,
            arg: Box::new(f.node.clone()),
        }),
    ))
}

/// `f(k * s)` for a K function `f`.
pub fn scale_arg(f: &ComparisonFunction, k: f64) -> Result<ComparisonFunction> {
    compose(f, &ComparisonFunction::linear(k)?)
}

/// Separable KL function `k(s) * l(t)`.
pub fn product(k: &ComparisonFunction, l: &ComparisonFunction) -> Result<ComparisonFunction> {
    if !k.class.is_k() || l.class != FnClass::L {
        return Err(Error::ClassMismatch {
            op: "product",
            left: k.class,
            right: l.class,
        });
    }
    Ok(ComparisonFunction::new(
        FnClass::KL,
        Node::Op(Op::Product {
            k: Box::new(k.node.clone()),
            l: Box::new(l.node.clone()),
        }),
    ))
}

/// K function `s ↦ f(s, t0)` of a KL function.
pub fn at_time(f: &ComparisonFunction, t0: u64) -> Result<ComparisonFunction> {
    if f.class != FnClass::KL {
        return Err(Error::ClassMismatch {
            op: "at_time",
            left: f.class,
            right: FnClass::KL,
        });
    }
    Ok(ComparisonFunction::new(
        FnClass::K,
        Node::Op(Op::AtTime {
            t: t0 as f64,
            arg: Box::new(f.node.clone()),
        }),
    ))
}

/// One term `c * s^a * exp(-lam t)` of an exponential-family function.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PowTerm {
    pub c: f64,
    pub a: f64,
    pub lam: f64,
}

/// Rewrites a tree as a maximum of power-exponential terms, when it is one.
///
/// Works because every building block is nonnegative and increasing in `s`:
/// composition and products distribute over the maximum. Tables and the
/// square-root switch fall outside the family.
pub fn power_terms(node: &Node) -> Option<Vec<PowTerm>> {
    match node {
        Node::Atom(Atom::PowExp { c, a, lam }) => Some(vec![PowTerm { c: *c, a: *a, lam: *lam }]),
        Node::Atom(Atom::Identity) => Some(vec![PowTerm { c: 1.0, a: 1.0, lam: 0.0 }]),
        Node::Atom(_) => None,
        Node::Op(op) => match op {
            Op::Max { args } => {
                let mut out = Vec::new();
                for a in args {
                    out.extend(power_terms(a)?);
                }
                Some(out)
            }
            Op::Scale { k, arg } => Some(
                power_terms(arg)?
                    .into_iter()
                    .map(|p| PowTerm { c: p.c * k, ..p })
                    .collect(),
            ),
            Op::AtTime { t, arg } => Some(
                power_terms(arg)?
                    .into_iter()
                    .map(|p| PowTerm {
                        c: p.c * (-p.lam * t).exp(),
                        a: p.a,
                        lam: 0.0,
                    })
                    .collect(),
            ),
            Op::Product { k, l } => {
                let ks = power_terms(k)?;
                let ls = power_terms(l)?;
                let mut out = Vec::with_capacity(ks.len() * ls.len());
                for pk in &ks {
                    for pl in &ls {
                        out.push(PowTerm {
                            c: pk.c * pl.c,
                            a: pk.a,
                            lam: pl.lam,
                        });
                    }
                }
                Some(out)
            }
            Op::Compose { outer, inner } => {
                let os = power_terms(outer)?;
                let is = power_terms(inner)?;
                let mut out = Vec::with_capacity(os.len() * is.len());
                for po in &os {
                    for pi in &is {
                        out.push(PowTerm {
                            c: po.c * pi.c.powf(po.a),
                            a: pi.a * po.a,
                            lam: pi.lam * po.a,
                        });
                    }
                }
                Some(out)
            }
        },
    }
}

/// Result of a Sontag-type factorization `α₁(β(s,r)) ≤ α₂(s) e^{-r}`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SontagPair {
    pub alpha1: ComparisonFunction,
    pub alpha2: ComparisonFunction,
}

fn power_atom(c: f64, a: f64) -> Node {
    if c == 1.0 && a == 1.0 {
        Node::Atom(Atom::Identity)
    } else {
        Node::Atom(Atom::PowExp { c, a, lam: 0.0 })
    }
}

/// Factorizes a KL function of the exponential family.
///
/// With `λ_min` the smallest decay rate among the terms `c_i s^{a_i} e^{-λ_i r}`,
/// `α₁(v) = v^{1/λ_min}` and `α₂(s) = max_i (c_i s^{a_i})^{1/λ_min}`. For a
/// single term the inequality is an equality.
pub fn sontag_factorize(beta: &ComparisonFunction) -> Result<SontagPair> {
    if beta.class != FnClass::KL {
        return Err(Error::ClassMismatch {
            op: "sontag_factorize",
            left: beta.class,
            right: FnClass::KL,
        });
    }
    let terms = power_terms(&beta.node).ok_or_else(|| {
        Error::UnsupportedForm("Sontag factorization needs a max of c*s^a*exp(-lam t) terms".into())
    })?;
    if let Some(bad) = terms.iter().find(|p| !(p.lam > 0.0)) {
        return Err(Error::UnsupportedForm(format!(
            "term {bad:?} does not decay in time"
        )));
    }
    let lam_min = terms.iter().map(|p| p.lam).fold(f64::INFINITY, f64::min);
    let alpha1 = ComparisonFunction::new(FnClass::Kinf, power_atom(1.0, 1.0 / lam_min));
    let mut alpha2_terms: Vec<Node> = terms
        .iter()
        .map(|p| power_atom(p.c.powf(1.0 / lam_min), p.a / lam_min))
        .collect();
    alpha2_terms.dedup();
    let alpha2_node = if alpha2_terms.len() == 1 {
        alpha2_terms.pop().unwrap()
    } else {
        Node::Op(Op::Max { args: alpha2_terms })
    };
    let pair = SontagPair {
        alpha1,
        alpha2: ComparisonFunction::new(FnClass::Kinf, alpha2_node),
    };
    let grid = EvalGrid::default();
    for &s in &grid.s {
        for &r in &grid.t {
            let lhs = pair.alpha1.k(beta.kl(s, r as f64));
            let rhs = pair.alpha2.k(s) * (-(r as f64)).exp();
            // below the normal range the factors underflow in different places
            if !rhs.is_normal() || !lhs.is_normal() {
                continue;
            }
            if lhs > rhs * (1.0 + 1e-10) {
                return Err(Error::Internal(format!(
                    "Sontag dominance failed at s={s}, r={r}: {lhs} > {rhs}"
                )));
            }
        }
    }
    Ok(pair)
}

/// Closed-form inverse of a K∞ function built from power atoms.
pub fn invert(f: &ComparisonFunction) -> Result<ComparisonFunction> {
    if !f.class.is_k() {
        return Err(Error::ClassMismatch {
            op: "invert",
            left: f.class,
            right: FnClass::Kinf,
        });
    }
    Ok(ComparisonFunction::new(f.class, invert_node(&f.node)?))
}

fn invert_node(node: &Node) -> Result<Node> {
    match node {
        Node::Atom(Atom::Identity) => Ok(Node::Atom(Atom::Identity)),
        Node::Atom(Atom::PowExp { c, a, .. }) => Ok(power_atom(c.powf(-1.0 / a), 1.0 / a)),
        Node::Op(Op::Scale { k, arg }) => Ok(compose_node(&invert_node(arg)?, &power_atom(1.0 / k, 1.0))),
        Node::Op(Op::Compose { outer, inner }) => Ok(compose_node(&invert_node(inner)?, &invert_node(outer)?)),
        other => Err(Error::UnsupportedForm(format!(
            "no closed-form inverse for {other}"
        ))),
    }
}

/// Evaluation grid for class checks.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalGrid {
    pub s: Vec<f64>,
    pub t: Vec<u64>,
}

impl Default for EvalGrid {
    /// 64 log-spaced points in [1e-6, 1e3] and 64 integer times in [0, 256].
    fn default() -> Self {
        Self::log_spaced(1e-6, 1e3, 64, 256, 64)
    }
}

impl EvalGrid {
    pub fn log_spaced(s_lo: f64, s_hi: f64, s_count: usize, t_max: u64, t_count: usize) -> Self {
        let s = if s_count == 1 {
            vec![s_lo]
        } else {
            let (l0, l1) = (s_lo.ln(), s_hi.ln());
            (0..s_count)
                .map(|i| (l0 + (l1 - l0) * i as f64 / (s_count - 1) as f64).exp())
                .collect()
        };
        let mut t: Vec<u64> = if t_count <= 1 {
            vec![0]
        } else {
            (0..t_count)
                .map(|i| ((t_max as f64) * i as f64 / (t_count - 1) as f64).round() as u64)
                .collect()
        };
        t.dedup();
        Self { s, t }
    }

    pub fn linear_s(s_hi: f64, s_count: usize) -> Self {
        let s = (1..=s_count).map(|i| s_hi * i as f64 / s_count as f64).collect();
        Self { s, t: vec![0] }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CheckStatus {
    Pass,
    Fail,
    Inconclusive,
}

/// Worst offending pair of grid points for one invariant.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridViolation {
    /// (s, t) of the first point.
    pub at: (f64, u64),
    /// (s, t) of the second point, if the invariant relates two points.
    pub against: Option<(f64, u64)>,
    pub values: (f64, f64),
    pub amount: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InvariantCheck {
    pub name: String,
    pub status: CheckStatus,
    pub worst: Option<GridViolation>,
    /// Grid pairs that underflowed or overflowed and could not be compared.
    pub skipped: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassReport {
    pub class: FnClass,
    pub checks: Vec<InvariantCheck>,
    pub verdict: CheckStatus,
}

impl ClassReport {
    pub fn is_consistent(&self) -> bool {
        self.verdict == CheckStatus::Pass
    }
}

struct Tracker {
    name: String,
    worst: Option<GridViolation>,
    compared: usize,
    skipped: usize,
}

impl Tracker {
    fn new(name: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            worst: None,
            compared: 0,
            skipped: 0,
        }
    }

    fn record(&mut self, v: GridViolation) {
        if self.worst.as_ref().map_or(true, |w| v.amount > w.amount) {
            self.worst = Some(v);
        }
    }

    fn finish(self) -> InvariantCheck {
        let status = if self.worst.is_some() {
            CheckStatus::Fail
        } else if self.compared == 0 {
            CheckStatus::Inconclusive
        } else {
            CheckStatus::Pass
        };
        InvariantCheck {
            name: self.name,
            status,
            worst: self.worst,
            skipped: self.skipped,
        }
    }
}

fn unrepresentable(a: f64, b: f64) -> bool {
    let tiny = |v: f64| v.abs() < f64::MIN_POSITIVE;
    (tiny(a) && tiny(b)) || (a.is_infinite() && b.is_infinite())
}

/// Zero at zero and strict increase along `s` at a fixed time.
fn check_k_slice(eval: &dyn Fn(f64) -> f64, grid_s: &[f64], t: u64, zero: &mut Tracker, inc: &mut Tracker) {
    let f0 = eval(0.0);
    zero.compared += 1;
    if f0 != 0.0 {
        zero.record(GridViolation {
            at: (0.0, t),
            against: None,
            values: (f0, 0.0),
            amount: f0.abs(),
        });
    }
    let mut pts: Vec<f64> = Vec::with_capacity(grid_s.len() + 1);
    pts.push(0.0);
    pts.extend(grid_s.iter().copied().filter(|&s| s > 0.0));
    let vals: Vec<f64> = pts.iter().map(|&s| eval(s)).collect();
    for i in 1..pts.len() {
        let (a, b) = (vals[i - 1], vals[i]);
        // the origin is checked by zero-at-zero; compare it only when the
        // next value is representable
        if unrepresentable(a, b) || (i == 1 && b.abs() < f64::MIN_POSITIVE) {
            inc.skipped += 1;
            continue;
        }
        inc.compared += 1;
        if !(b > a) {
            inc.record(GridViolation {
                at: (pts[i - 1], t),
                against: Some((pts[i], t)),
                values: (a, b),
                amount: a - b,
            });
        }
    }
}

/// Non-increase along `t` and decay from `t = 0` to the last grid time.
fn check_l_slice(eval: &dyn Fn(f64) -> f64, grid_t: &[u64], s: f64, noninc: &mut Tracker, decay: &mut Tracker) {
    let vals: Vec<f64> = grid_t.iter().map(|&t| eval(t as f64)).collect();
    for i in 1..grid_t.len() {
        let (a, b) = (vals[i - 1], vals[i]);
        if a.is_infinite() && b.is_infinite() {
            noninc.skipped += 1;
            continue;
        }
        noninc.compared += 1;
        if b > a {
            noninc.record(GridViolation {
                at: (s, grid_t[i - 1]),
                against: Some((s, grid_t[i])),
                values: (a, b),
                amount: b - a,
            });
        }
    }
    if grid_t.len() >= 2 {
        let (first, last) = (vals[0], vals[vals.len() - 1]);
        decay.compared += 1;
        let constant_zero = vals.iter().all(|&v| v == 0.0);
        if !constant_zero && !(last < first) {
            decay.record(GridViolation {
                at: (s, grid_t[0]),
                against: Some((s, grid_t[grid_t.len() - 1])),
                values: (first, last),
                amount: last - first + f64::MIN_POSITIVE,
            });
        }
    }
}

/// Grid-based class verification.
///
/// Strict increase uses tolerance 0. Grid pairs whose values both underflow
/// (or both overflow) cannot be ordered in floating point and are counted as
/// skipped rather than as failures. Grids with fewer than two points in an
/// active argument give an inconclusive verdict.
pub fn verify_class(f: &ComparisonFunction, grid: &EvalGrid) -> ClassReport {
    let mut checks = Vec::new();
    let s_ok = grid.s.iter().filter(|&&s| s > 0.0).count() >= 1;
    let t_ok = grid.t.len() >= 2;
    match f.class {
        FnClass::K | FnClass::Kinf => {
            let mut zero = Tracker::new("zero_at_zero");
            let mut inc = Tracker::new("strictly_increasing");
            if s_ok {
                check_k_slice(&|s| f.node.eval(s, 0.0), &grid.s, 0, &mut zero, &mut inc);
            }
            checks.push(zero.finish());
            checks.push(inc.finish());
            if f.class == FnClass::Kinf {
                checks.push(check_unbounded(f, grid));
            }
        }
        FnClass::L => {
            let mut noninc = Tracker::new("non_increasing");
            let mut decay = Tracker::new("decays");
            if t_ok {
                check_l_slice(&|t| f.node.eval(1.0, t), &grid.t, 1.0, &mut noninc, &mut decay);
            }
            checks.push(noninc.finish());
            checks.push(decay.finish());
        }
        FnClass::KL => {
            let mut zero = Tracker::new("zero_at_zero");
            let mut inc = Tracker::new("strictly_increasing");
            let mut noninc = Tracker::new("non_increasing");
            let mut decay = Tracker::new("decays");
            if s_ok {
                for &t in &grid.t {
                    check_k_slice(&|s| f.node.eval(s, t as f64), &grid.s, t, &mut zero, &mut inc);
                }
            }
            if t_ok {
                for &s in grid.s.iter().filter(|&&s| s > 0.0) {
                    check_l_slice(&|t| f.node.eval(s, t), &grid.t, s, &mut noninc, &mut decay);
                }
            }
            checks.extend([zero.finish(), inc.finish(), noninc.finish(), decay.finish()]);
        }
    }
    let verdict = if checks.iter().any(|c| c.status == CheckStatus::Fail) {
        CheckStatus::Fail
    } else if checks.iter().any(|c| c.status == CheckStatus::Inconclusive) {
        CheckStatus::Inconclusive
    } else {
        CheckStatus::Pass
    };
    ClassReport {
        class: f.class,
        checks,
        verdict,
    }
}

/// Minimum log-log slope over the last grid decade for a K∞ claim.
const KINF_MIN_TAIL_SLOPE: f64 = 1e-2;

fn check_unbounded(f: &ComparisonFunction, grid: &EvalGrid) -> InvariantCheck {
    let mut tr = Tracker::new("unbounded_tail");
    let s_hi = grid.s.iter().copied().fold(0.0, f64::max);
    let s_lo = grid
        .s
        .iter()
        .copied()
        .filter(|&s| s > 0.0 && s <= s_hi / 10.0)
        .fold(0.0, f64::max);
    if s_hi > 0.0 && s_lo > 0.0 {
        let (a, b) = (f.node.eval(s_lo, 0.0), f.node.eval(s_hi, 0.0));
        if a > 0.0 && b.is_finite() {
            tr.compared += 1;
            let slope = (b / a).ln() / (s_hi / s_lo).ln();
            if !(slope >= KINF_MIN_TAIL_SLOPE) {
                tr.record(GridViolation {
                    at: (s_lo, 0),
                    against: Some((s_hi, 0)),
                    values: (a, b),
                    amount: KINF_MIN_TAIL_SLOPE - slope,
                });
            }
        } else if b.is_infinite() {
            tr.compared += 1;
        } else {
            tr.skipped += 1;
        }
    }
    tr.finish()
}

impl fmt::Display for Node {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Node::Atom(Atom::PowExp { c, a, lam }) => {
                write!(f, "{c}*s^{a}")?;
                if *lam != 0.0 {
                    write!(f, "*exp(-{lam}*t)")?;
                }
                Ok(())
            }
            Node::Atom(Atom::Identity) => f.write_str("s"),
            Node::Atom(Atom::Table { points }) => write!(f, "table{points:?}"),
            Node::Atom(Atom::SqrtSwitch { c, lam, threshold }) => {
                write!(f, "sqrt_switch(c={c}, lam={lam}, threshold={threshold})")
            }
            Node::Op(Op::Max { args }) => {
                f.write_str("max(")?;
                for (i, a) in args.iter().enumerate() {
                    if i > 0 {
                        f.write_str(", ")?;
                    }
                    write!(f, "{a}")?;
                }
                f.write_str(")")
            }
            Node::Op(Op::Compose { outer, inner }) => write!(f, "({outer})∘({inner})"),
            Node::Op(Op::Scale { k, arg }) => write!(f, "{k}*({arg})"),
            Node::Op(Op::Product { k, l }) => write!(f, "({k})·({l})"),
            Node::Op(Op::AtTime { t, arg }) => write!(f, "({arg})|t={t}"),
        }
    }
}

impl fmt::Display for ComparisonFunction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.class, self.node)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn close(a: f64, b: f64, rel: f64) -> bool {
        (a - b).abs() <= rel * a.abs().max(b.abs()).max(1e-300)
    }

    #[test]
    fn eval_examples() {
        let f = ComparisonFunction::kl_exp(2.0, 1.0, 0.1).unwrap();
        assert_eq!(f.eval(1.0, Some(0)).unwrap(), 2.0);
        // independent scalar route: 2 * e^-1
        let expected = 2.0 / std::f64::consts::E;
        assert!(close(f.eval(1.0, Some(10)).unwrap(), expected, 1e-15));
        assert!((f.eval(1.0, Some(10)).unwrap() - 0.7358).abs() < 1e-4);
        assert_eq!(ComparisonFunction::identity().eval(0.0, None).unwrap(), 0.0);
    }

    #[test]
    fn eval_errors() {
        let f = ComparisonFunction::kl_exp(2.0, 1.0, 0.1).unwrap();
        assert!(matches!(f.eval(1.0, None), Err(Error::Domain(_))));
        assert!(matches!(f.eval(-1.0, Some(0)), Err(Error::Domain(_))));
        let l = ComparisonFunction::l_exp(1.0, 0.5).unwrap();
        assert!(l.eval(3.0, None).is_err());
        // s is ignored for L functions
        assert_eq!(l.eval(3.0, Some(2)).unwrap(), l.eval(100.0, Some(2)).unwrap());
    }

    #[test]
    fn oplus_examples() {
        let id = ComparisonFunction::identity();
        assert_eq!(oplus(&id, &id).unwrap().k(3.0), 3.0);
        let one = ComparisonFunction::linear(1.0).unwrap();
        let two = ComparisonFunction::linear(2.0).unwrap();
        assert_eq!(oplus(&one, &two).unwrap().k(1.0), 2.0);
        let a = ComparisonFunction::kl_exp(2.0, 1.0, 0.1).unwrap();
        let b = ComparisonFunction::kl_exp(1.0, 1.0, 0.5).unwrap();
        assert_eq!(oplus(&a, &b).unwrap().eval(1.0, Some(0)).unwrap(), 2.0);
    }

    #[test]
    fn oplus_class_mismatch() {
        let k = ComparisonFunction::identity();
        let kl = ComparisonFunction::kl_exp(1.0, 1.0, 1.0).unwrap();
        assert!(matches!(oplus(&k, &kl), Err(Error::ClassMismatch { .. })));
    }

    #[test]
    fn compose_examples() {
        let id = ComparisonFunction::identity();
        assert_eq!(compose(&id, &id).unwrap().k(5.0), 5.0);
        let sq = ComparisonFunction::power(1.0, 2.0).unwrap();
        let dbl = ComparisonFunction::linear(2.0).unwrap();
        assert_eq!(compose(&sq, &dbl).unwrap().k(1.0), 4.0);
        assert_eq!(compose(&sq, &dbl).unwrap().k(0.0), 0.0);
        let kl = ComparisonFunction::kl_exp(1.0, 1.0, 1.0).unwrap();
        assert!(compose(&kl, &id).is_err());
        assert!(compose(&id, &kl).is_err());
    }

    #[test]
    fn verify_class_examples() {
        let grid = EvalGrid::default();
        let id = ComparisonFunction::kl_exp(1.0, 1.0, 0.0).unwrap().with_class(FnClass::K);
        assert!(verify_class(&id, &grid).is_consistent());

        let constant = ComparisonFunction::l_exp(1.0, 0.0).unwrap();
        let report = verify_class(&constant, &EvalGrid::log_spaced(1e-6, 1e3, 64, 100, 64));
        assert_eq!(report.verdict, CheckStatus::Fail);
        let decay = report.checks.iter().find(|c| c.name == "decays").unwrap();
        assert_eq!(decay.status, CheckStatus::Fail);

        let sq = ComparisonFunction::sqrt_switch(2.0, 0.1, 1.0).unwrap();
        assert!(verify_class(&sq, &grid).is_consistent());
    }

    #[test]
    fn flat_segment_fails_strict_increase() {
        let f = ComparisonFunction::new(
            FnClass::K,
            Node::Op(Op::Max {
                args: vec![
                    Node::Atom(Atom::Identity),
                    Node::Atom(Atom::PowExp { c: 0.0, a: 1.0, lam: 0.0 }),
                ],
            }),
        );
        assert!(verify_class(&f, &EvalGrid::default()).is_consistent());
        // saturating table extension is fine; a zero slope is not
        let flat = ComparisonFunction::new(
            FnClass::K,
            Node::Op(Op::Compose {
                outer: Box::new(Node::Atom(Atom::Identity)),
                inner: Box::new(Node::Atom(Atom::SqrtSwitch { c: 1.0, lam: 0.0, threshold: 1.0 })),
            }),
        );
        assert!(verify_class(&flat, &EvalGrid::default()).is_consistent());
        let step = ComparisonFunction::new(FnClass::K, Node::Atom(Atom::PowExp { c: 1.0, a: 1e-30, lam: 0.0 }));
        let report = verify_class(&step, &EvalGrid::default());
        assert_eq!(report.verdict, CheckStatus::Fail);
    }

    #[test]
    fn wrong_class_tag_is_caught() {
        let k_as_l = ComparisonFunction::identity().with_class(FnClass::L);
        assert_eq!(verify_class(&k_as_l, &EvalGrid::default()).verdict, CheckStatus::Fail);
        let not_kinf = ComparisonFunction::table(vec![[1.0, 1.0], [2.0, 1.0 + 1e-9]]).unwrap();
        let report = verify_class(&not_kinf, &EvalGrid::default());
        assert_eq!(report.verdict, CheckStatus::Fail);
    }

    #[test]
    fn degenerate_grid_is_inconclusive() {
        let grid = EvalGrid { s: vec![], t: vec![0] };
        let f = ComparisonFunction::kl_exp(1.0, 1.0, 1.0).unwrap();
        assert_eq!(verify_class(&f, &grid).verdict, CheckStatus::Inconclusive);
        let l = ComparisonFunction::l_exp(1.0, 1.0).unwrap();
        assert_eq!(verify_class(&l, &grid).verdict, CheckStatus::Inconclusive);
    }

    #[test]
    fn table_interpolates_and_extrapolates() {
        let f = ComparisonFunction::table(vec![[1.0, 2.0], [3.0, 3.0]]).unwrap();
        assert_eq!(f.k(0.5), 1.0);
        assert_eq!(f.k(2.0), 2.5);
        assert_eq!(f.k(5.0), 4.0);
        assert!(ComparisonFunction::table(vec![[1.0, 2.0], [1.0, 3.0]]).is_err());
    }

    #[test]
    fn sontag_examples() {
        let b = ComparisonFunction::kl_exp(2.0, 1.0, 0.5).unwrap();
        let pair = sontag_factorize(&b).unwrap();
        assert_eq!(pair.alpha1.k(3.0), 9.0);
        assert!(close(pair.alpha2.k(1.5), 4.0 * 2.25, 1e-14));
        for s in [0.1, 1.0, 7.0] {
            for r in [0u64, 1, 5, 40] {
                let lhs = pair.alpha1.k(b.kl(s, r as f64));
                let rhs = pair.alpha2.k(s) * (-(r as f64)).exp();
                assert!(close(lhs, rhs, 1e-12), "{lhs} vs {rhs}");
            }
        }

        let unit = ComparisonFunction::kl_exp(1.0, 1.0, 1.0).unwrap();
        let pair = sontag_factorize(&unit).unwrap();
        assert_eq!(pair.alpha1.node, Node::Atom(Atom::Identity));
        assert_eq!(pair.alpha2.node, Node::Atom(Atom::Identity));

        let b = ComparisonFunction::kl_exp(3.0, 1.0, 2.0).unwrap();
        let pair = sontag_factorize(&b).unwrap();
        assert!(close(pair.alpha1.k(b.kl(1.0, 0.0)), 3f64.sqrt(), 1e-15));
        assert!(close(pair.alpha2.k(1.0), 3f64.sqrt(), 1e-15));
    }

    #[test]
    fn sontag_on_max_of_atoms() {
        let a = ComparisonFunction::kl_exp(2.0, 1.0, 0.3).unwrap();
        let b = ComparisonFunction::kl_exp(5.0, 2.0, 1.2).unwrap();
        let beta = oplus(&a, &b).unwrap();
        let pair = sontag_factorize(&beta).unwrap();
        let grid = EvalGrid::default();
        for &s in &grid.s {
            for &r in &grid.t {
                let lhs = pair.alpha1.k(beta.kl(s, r as f64));
                let rhs = pair.alpha2.k(s) * (-(r as f64)).exp();
                assert!(lhs <= rhs * (1.0 + 1e-12));
            }
        }
        assert!(verify_class(&pair.alpha1, &grid).is_consistent());
        assert!(verify_class(&pair.alpha2, &grid).is_consistent());
    }

    #[test]
    fn sontag_rejects_unsupported() {
        let sq = ComparisonFunction::sqrt_switch(2.0, 0.1, 1.0).unwrap();
        assert!(matches!(sontag_factorize(&sq), Err(Error::UnsupportedForm(_))));
        let nodecay = ComparisonFunction::kl_exp(1.0, 1.0, 0.0).unwrap();
        assert!(matches!(sontag_factorize(&nodecay), Err(Error::UnsupportedForm(_))));
    }

    #[test]
    fn power_terms_match_evaluation() {
        let g = ComparisonFunction::linear(3.0).unwrap();
        let l = ComparisonFunction::l_exp(2.0, 0.7).unwrap();
        let p = product(&g, &l).unwrap();
        let inner = oplus(&p, &ComparisonFunction::kl_exp(1.0, 2.0, 0.2).unwrap()).unwrap();
        let outer = ComparisonFunction::power(1.5, 0.5).unwrap();
        let f = compose_kl(&outer, &inner).unwrap();
        let terms = power_terms(&f.node).unwrap();
        for s in [0.01, 0.5, 2.0, 30.0] {
            for t in [0.0, 1.0, 7.0] {
                let direct = f.kl(s, t);
                let via = terms
                    .iter()
                    .map(|p| p.c * s.powf(p.a) * (-p.lam * t).exp())
                    .fold(0.0, f64::max);
                assert!(close(direct, via, 1e-13), "{direct} vs {via}");
            }
        }
    }

    #[test]
    fn invert_power_atoms() {
        let f = ComparisonFunction::power(4.0, 2.0).unwrap();
        let inv = invert(&f).unwrap();
        for s in [0.1, 1.0, 9.0] {
            assert!(close(inv.k(f.k(s)), s, 1e-14));
        }
        let g = compose(&scale(3.0, &f).unwrap(), &ComparisonFunction::linear(0.5).unwrap()).unwrap();
        let ginv = invert(&g).unwrap();
        assert!(close(ginv.k(g.k(2.5)), 2.5, 1e-14));
        assert!(invert(&ComparisonFunction::table(vec![[1.0, 1.0]]).unwrap()).is_err());
    }

    #[test]
    fn json_shape() {
        let a = ComparisonFunction::kl_exp(2.0, 1.0, 0.1).unwrap();
        let b = ComparisonFunction::kl_exp(1.0, 1.0, 0.5).unwrap();
        let f = oplus(&a, &b).unwrap();
        let v: serde_json::Value = serde_json::from_str(&f.to_json()).unwrap();
        assert_eq!(v["class"], "KL");
        assert_eq!(v["node"]["op"], "max");
        assert_eq!(v["node"]["args"][0]["atom"], "powexp");
        assert_eq!(v["node"]["args"][0]["lam"], 0.1);
        let back = ComparisonFunction::from_json(&f.to_json()).unwrap();
        assert_eq!(back, f);
    }
}
