//! Discrete-time systems `x(t+1) = f(x(t), w(t))`, `y(t) = h(x(t))`.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::compfn::ComparisonFunction;
use crate::error::{Error, Result};

pub mod parser;

pub use parser::{parse, Equations, Expr};

#[derive(Clone, Debug, PartialEq)]
pub enum Dynamics {
    /// `x⁺ = A x + B w`, `y = C x`.
    Linear {
        a: DMatrix<f64>,
        b: DMatrix<f64>,
        c: DMatrix<f64>,
    },
    Expr(Equations),
}

#[derive(Clone, Debug, PartialEq)]
pub struct System {
    pub name: String,
    pub n: usize,
    pub q: usize,
    pub p: usize,
    pub dynamics: Dynamics,
    /// Continuity modulus of `h`.
    pub alpha_h: Option<ComparisonFunction>,
    /// Continuity modulus of `f` in the joint argument `|Δx| + |Δw|`.
    pub alpha_f: Option<ComparisonFunction>,
    pub metadata: BTreeMap<String, String>,
}

/// JSON form of a linear system. `B` may be omitted for input-free systems.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LinearSpec {
    #[serde(rename = "A")]
    pub a: Vec<Vec<f64>>,
    #[serde(rename = "B", default, skip_serializing_if = "Option::is_none")]
    pub b: Option<Vec<Vec<f64>>>,
    #[serde(rename = "C")]
    pub c: Vec<Vec<f64>>,
}

fn matrix(rows: &[Vec<f64>], what: &str) -> Result<DMatrix<f64>> {
    let r = rows.len();
    let c = rows.first().map_or(0, |row| row.len());
    if rows.iter().any(|row| row.len() != c) {
        return Err(Error::Dimension(format!("{what} has rows of different lengths")));
    }
    Ok(DMatrix::from_fn(r, c, |i, j| rows[i][j]))
}

fn spectral_norm(m: &DMatrix<f64>) -> f64 {
    if m.is_empty() {
        return 0.0;
    }
    m.singular_values().iter().copied().fold(0.0, f64::max)
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn diff_norm(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

impl System {
    /// Linear system with exact moduli `‖C‖` and `max(‖A‖, ‖B‖)`.
    pub fn linear(name: &str, a: DMatrix<f64>, b: DMatrix<f64>, c: DMatrix<f64>) -> Result<Self> {
        let n = a.nrows();
        if n == 0 || a.ncols() != n {
            return Err(Error::Dimension(format!("A must be square and non-empty, got {}x{}", a.nrows(), a.ncols())));
        }
        if c.ncols() != n || c.nrows() == 0 {
            return Err(Error::Dimension(format!("C must be p x {n}, got {}x{}", c.nrows(), c.ncols())));
        }
        let b = if b.ncols() == 0 { DMatrix::zeros(n, 0) } else { b };
        if b.nrows() != n {
            return Err(Error::Dimension(format!("B must have {n} rows, got {}", b.nrows())));
        }
        let (q, p) = (b.ncols(), c.nrows());
        let lh = spectral_norm(&c);
        let lf = spectral_norm(&a).max(spectral_norm(&b));
        Ok(Self {
            name: name.to_string(),
            n,
            q,
            p,
            alpha_h: ComparisonFunction::linear(lh).ok(),
            alpha_f: ComparisonFunction::linear(lf).ok(),
            dynamics: Dynamics::Linear { a, b, c },
            metadata: BTreeMap::new(),
        })
    }

    pub fn from_linear_spec(name: &str, spec: &LinearSpec) -> Result<Self> {
        let a = matrix(&spec.a, "A")?;
        let b = match &spec.b {
            Some(b) => matrix(b, "B")?,
            None => DMatrix::zeros(a.nrows(), 0),
        };
        Self::linear(name, a, b, matrix(&spec.c, "C")?)
    }

    /// Parses the text form; moduli are left unset.
    pub fn parse(name: &str, src: &str) -> Result<Self> {
        let eq = parse(src)?;
        Ok(Self {
            name: name.to_string(),
            n: eq.state.len(),
            q: eq.q,
            p: eq.output.len(),
            dynamics: Dynamics::Expr(eq),
            alpha_h: None,
            alpha_f: None,
            metadata: BTreeMap::new(),
        })
    }

    /// Plane rotation by -45°, first coordinate measured.
    pub fn rotation8() -> Self {
        let r = std::f64::consts::FRAC_1_SQRT_2;
        let a = DMatrix::from_row_slice(2, 2, &[r, r, -r, r]);
        let c = DMatrix::from_row_slice(1, 2, &[1.0, 0.0]);
        Self::linear("rotation8", a, DMatrix::zeros(2, 0), c).expect("static dimensions")
    }

    /// `x⁺ = a x`, `y = x`.
    pub fn scalar_unstable(a: f64) -> Self {
        let mut s = Self::linear(
            "scalar_unstable",
            DMatrix::from_element(1, 1, a),
            DMatrix::zeros(1, 0),
            DMatrix::from_element(1, 1, 1.0),
        )
        .expect("static dimensions");
        s.metadata.insert("a".into(), format!("{a}"));
        if a.abs() <= 1.0 {
            s.metadata.insert("warning".into(), "not unstable".into());
        }
        s
    }

    /// `x⁺ = a x + w`, `y = x`.
    pub fn scalar_unstable_input(a: f64) -> Self {
        let mut s = Self::linear(
            "scalar_unstable_input",
            DMatrix::from_element(1, 1, a),
            DMatrix::from_element(1, 1, 1.0),
            DMatrix::from_element(1, 1, 1.0),
        )
        .expect("static dimensions");
        s.metadata.insert("a".into(), format!("{a}"));
        if a.abs() <= 1.0 {
            s.metadata.insert("warning".into(), "not unstable".into());
        }
        s
    }

    /// `x⁺ = 0.5 x + w`, `y = x`.
    pub fn contraction() -> Self {
        Self::linear(
            "contraction",
            DMatrix::from_element(1, 1, 0.5),
            DMatrix::from_element(1, 1, 1.0),
            DMatrix::from_element(1, 1, 1.0),
        )
        .expect("static dimensions")
    }

    /// Catalog lookup. `params` carries `a` for the scalar systems; `linear`
    /// needs matrices and is built with [`System::linear`] instead.
    pub fn builtin(name: &str, params: &BTreeMap<String, f64>) -> Result<Self> {
        let known: &[&str] = match name {
            "rotation8" | "contraction" => &[],
            "scalar_unstable" | "scalar_unstable_input" => &["a"],
            "linear" => {
                return Err(Error::InvalidParameter(
                    "the linear system needs matrices; pass a JSON file with A, B, C".into(),
                ))
            }
            other => return Err(Error::UnknownSystem(other.to_string())),
        };
        if let Some(k) = params.keys().find(|k| !known.contains(&k.as_str())) {
            return Err(Error::InvalidParameter(format!("`{name}` has no parameter `{k}`")));
        }
        let a = params.get("a").copied().unwrap_or(2.0);
        if !a.is_finite() {
            return Err(Error::InvalidParameter(format!("a must be finite, got {a}")));
        }
        Ok(match name {
            "rotation8" => Self::rotation8(),
            "contraction" => Self::contraction(),
            "scalar_unstable" => Self::scalar_unstable(a),
            _ => Self::scalar_unstable_input(a),
        })
    }

    pub fn with_moduli(mut self, alpha_h: Option<ComparisonFunction>, alpha_f: Option<ComparisonFunction>) -> Self {
        self.alpha_h = alpha_h;
        self.alpha_f = alpha_f;
        self
    }

    /// Matrices of a linear system.
    pub fn matrices(&self) -> Option<(&DMatrix<f64>, &DMatrix<f64>, &DMatrix<f64>)> {
        match &self.dynamics {
            Dynamics::Linear { a, b, c } => Some((a, b, c)),
            Dynamics::Expr(_) => None,
        }
    }

    /// Text form of the system, accepted by [`System::parse`].
    pub fn to_source(&self) -> String {
        match &self.dynamics {
            Dynamics::Expr(eq) => eq.to_string(),
            Dynamics::Linear { a, b, c } => {
                use parser::{BinOp, Var};
                let row = |coeffs: Vec<(f64, Var)>| -> Expr {
                    coeffs
                        .into_iter()
                        .filter(|(k, _)| *k != 0.0)
                        .map(|(k, v)| Expr::Bin(BinOp::Mul, Box::new(Expr::Num(k)), Box::new(Expr::Var(v))))
                        .reduce(|acc, e| Expr::Bin(BinOp::Add, Box::new(acc), Box::new(e)))
                        .unwrap_or(Expr::Num(0.0))
                };
                let state = (0..self.n)
                    .map(|i| {
                        let mut coeffs: Vec<(f64, Var)> = (0..self.n).map(|j| (a[(i, j)], Var::State(j))).collect();
                        coeffs.extend((0..self.q).map(|j| (b[(i, j)], Var::Input(j))));
                        row(coeffs)
                    })
                    .collect();
                let output = (0..self.p)
                    .map(|i| row((0..self.n).map(|j| (c[(i, j)], Var::State(j))).collect()))
                    .collect();
                Equations { state, output, q: self.q }.to_string()
            }
        }
    }

    fn check_state(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.n {
            return Err(Error::Dimension(format!("state has length {}, system `{}` has n = {}", x.len(), self.name, self.n)));
        }
        Ok(())
    }

    fn check_input(&self, w: &[f64]) -> Result<()> {
        // input-free systems accept and ignore anything
        if self.q > 0 && w.len() != self.q {
            return Err(Error::Dimension(format!("input has length {}, system `{}` has q = {}", w.len(), self.name, self.q)));
        }
        Ok(())
    }

    pub(crate) fn step_unchecked(&self, x: &[f64], w: &[f64], out: &mut Vec<f64>) {
        out.clear();
        match &self.dynamics {
            Dynamics::Linear { a, b, .. } => {
                for i in 0..self.n {
                    let mut v = 0.0;
                    for j in 0..self.n {
                        v += a[(i, j)] * x[j];
                    }
                    for j in 0..self.q {
                        v += b[(i, j)] * w[j];
                    }
                    out.push(v);
                }
            }
            Dynamics::Expr(eq) => out.extend(eq.state.iter().map(|e| e.eval(x, w))),
        }
    }

    pub(crate) fn output_unchecked(&self, x: &[f64], out: &mut Vec<f64>) {
        out.clear();
        match &self.dynamics {
            Dynamics::Linear { c, .. } => {
                for i in 0..self.p {
                    out.push((0..self.n).map(|j| c[(i, j)] * x[j]).sum());
                }
            }
            Dynamics::Expr(eq) => out.extend(eq.output.iter().map(|e| e.eval(x, &[]))),
        }
    }

    /// `f(x, w)`.
    pub fn step(&self, x: &[f64], w: &[f64]) -> Result<Vec<f64>> {
        self.check_state(x)?;
        self.check_input(w)?;
        let zeros = vec![0.0; self.q];
        let w = if self.q == 0 { &zeros[..] } else { w };
        let mut out = Vec::with_capacity(self.n);
        self.step_unchecked(x, w, &mut out);
        Ok(out)
    }

    /// `h(x)`.
    pub fn output(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check_state(x)?;
        let mut out = Vec::with_capacity(self.p);
        self.output_unchecked(x, &mut out);
        Ok(out)
    }
}

/// Source of an input sequence for one trajectory.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum InputSignal {
    Zero,
    /// `w(t)` for `t = 0..T-1`.
    Sequence { values: Vec<Vec<f64>> },
    /// State feedback `w(t) = gain * x(t)` for `t < until`, zero afterwards.
    /// With `gain = 0.5 - a` it drives `x⁺ = a x + w` to `x⁺ = 0.5 x`.
    Feedback { gain: f64, until: usize },
}

impl InputSignal {
    pub fn sequence(values: Vec<Vec<f64>>) -> Self {
        InputSignal::Sequence { values }
    }

    pub fn stabilizing(a: f64, until: usize) -> Self {
        InputSignal::Feedback { gain: 0.5 - a, until }
    }

    fn value(&self, sys: &System, t: usize, x: &[f64], out: &mut Vec<f64>) {
        out.clear();
        if sys.q == 0 {
            return;
        }
        match self {
            InputSignal::Zero => out.resize(sys.q, 0.0),
            InputSignal::Sequence { values } => out.extend_from_slice(&values[t]),
            InputSignal::Feedback { gain, until } => {
                if t < *until {
                    out.extend(x.iter().take(sys.q).map(|v| gain * v));
                }
                out.resize(sys.q, 0.0);
            }
        }
    }

    fn validate(&self, sys: &System, horizon: usize) -> Result<()> {
        match self {
            InputSignal::Zero => Ok(()),
            InputSignal::Sequence { values } => {
                if sys.q == 0 {
                    return Ok(());
                }
                if values.len() < horizon {
                    return Err(Error::Dimension(format!(
                        "input sequence has {} samples, horizon needs {horizon}",
                        values.len()
                    )));
                }
                values[..horizon].iter().try_for_each(|w| sys.check_input(w))
            }
            InputSignal::Feedback { .. } => {
                if sys.q != 0 && sys.q != sys.n {
                    return Err(Error::Dimension("state feedback needs q = n".into()));
                }
                Ok(())
            }
        }
    }
}

/// Two simulated solutions and their increments.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryPair {
    pub horizon: usize,
    pub x01: Vec<f64>,
    pub x02: Vec<f64>,
    /// Realized inputs, `T` samples each (empty vectors for input-free systems).
    pub w1: Vec<Vec<f64>>,
    pub w2: Vec<Vec<f64>>,
    /// `T + 1` states each, starting with the initial state.
    pub states1: Vec<Vec<f64>>,
    pub states2: Vec<Vec<f64>>,
    /// `|Δx(t)|`, `t = 0..=T`.
    pub dx: Vec<f64>,
    /// `|Δw(t)|`, `t = 0..T`.
    pub dw: Vec<f64>,
    /// `|h(x₁(t)) − h(x₂(t))|`, `t = 0..=T`.
    pub dy: Vec<f64>,
}

impl TrajectoryPair {
    /// CSV with header `t,x1_1..x1_n,x2_1..x2_n,dx,dy`.
    pub fn to_csv(&self) -> String {
        let n = self.x01.len();
        let mut s = String::from("t");
        for k in 1..=n {
            s.push_str(&format!(",x1_{k}"));
        }
        for k in 1..=n {
            s.push_str(&format!(",x2_{k}"));
        }
        s.push_str(",dx,dy\n");
        for t in 0..=self.horizon {
            s.push_str(&t.to_string());
            for v in self.states1[t].iter().chain(&self.states2[t]) {
                s.push_str(&format!(",{v:?}"));
            }
            s.push_str(&format!(",{:?},{:?}\n", self.dx[t], self.dy[t]));
        }
        s
    }
}

/// Simulates both trajectories for `horizon` steps.
pub fn simulate_pair(
    sys: &System,
    x01: &[f64],
    x02: &[f64],
    w1: &InputSignal,
    w2: &InputSignal,
    horizon: usize,
) -> Result<TrajectoryPair> {
    if horizon < 1 {
        return Err(Error::Precondition("horizon must be at least 1".into()));
    }
    sys.check_state(x01)?;
    sys.check_state(x02)?;
    w1.validate(sys, horizon)?;
    w2.validate(sys, horizon)?;
    let run = |x0: &[f64], sig: &InputSignal| {
        let mut states = Vec::with_capacity(horizon + 1);
        let mut inputs = Vec::with_capacity(horizon);
        let mut x = x0.to_vec();
        let mut w = Vec::with_capacity(sys.q);
        let mut next = Vec::with_capacity(sys.n);
        for t in 0..horizon {
            sig.value(sys, t, &x, &mut w);
            sys.step_unchecked(&x, &w, &mut next);
            states.push(std::mem::replace(&mut x, next.clone()));
            inputs.push(w.clone());
        }
        states.push(x);
        (states, inputs)
    };
    let (states1, w1) = run(x01, w1);
    let (states2, w2) = run(x02, w2);
    let (mut y1, mut y2) = (Vec::new(), Vec::new());
    let dx = states1.iter().zip(&states2).map(|(a, b)| diff_norm(a, b)).collect();
    let dy = states1
        .iter()
        .zip(&states2)
        .map(|(a, b)| {
            sys.output_unchecked(a, &mut y1);
            sys.output_unchecked(b, &mut y2);
            diff_norm(&y1, &y2)
        })
        .collect();
    let dw = w1.iter().zip(&w2).map(|(a, b)| diff_norm(a, b)).collect();
    Ok(TrajectoryPair {
        horizon,
        x01: x01.to_vec(),
        x02: x02.to_vec(),
        w1,
        w2,
        states1,
        states2,
        dx,
        dw,
        dy,
    })
}

/// Axis-aligned box `[lo_k, hi_k]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoxSpec {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
}

impl BoxSpec {
    pub fn cube(dim: usize, lo: f64, hi: f64) -> Self {
        Self {
            lo: vec![lo; dim],
            hi: vec![hi; dim],
        }
    }

    pub fn dim(&self) -> usize {
        self.lo.len()
    }

    pub fn validate(&self) -> Result<()> {
        if self.lo.len() != self.hi.len() {
            return Err(Error::Dimension("box bounds have different lengths".into()));
        }
        if let Some(k) = (0..self.dim()).find(|&k| !(self.lo[k] <= self.hi[k]) || !self.lo[k].is_finite() || !self.hi[k].is_finite()) {
            return Err(Error::InvalidParameter(format!("box coordinate {k} has bounds {} > {}", self.lo[k], self.hi[k])));
        }
        Ok(())
    }

    pub fn has_volume(&self) -> bool {
        self.lo.iter().zip(&self.hi).all(|(l, h)| h > l)
    }

    pub fn sample(&self, rng: &mut impl Rng) -> Vec<f64> {
        self.lo
            .iter()
            .zip(&self.hi)
            .map(|(&l, &h)| if h > l { rng.random_range(l..h) } else { l })
            .collect()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MapTag {
    Output,
    Transition,
}

/// Empirical linear modulus `c·s`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModulusEstimate {
    pub function: ComparisonFunction,
    /// Largest observed ratio before the safety factor.
    pub max_ratio: f64,
    pub samples: usize,
    pub seed: u64,
    /// Always true: sampling can only underestimate a supremum.
    pub estimated: bool,
}

pub const MODULUS_SAFETY: f64 = 1.1;

/// Estimates a linear continuity modulus of `h` (box over `x`) or of `f`
/// (box over `(x, w)`, ratio taken against `|Δx| + |Δw|`).
pub fn estimate_modulus(sys: &System, map: MapTag, domain: &BoxSpec, samples: usize, seed: u64) -> Result<ModulusEstimate> {
    domain.validate()?;
    if samples < 100 {
        return Err(Error::Precondition(format!("at least 100 samples needed, got {samples}")));
    }
    let want = match map {
        MapTag::Output => sys.n,
        MapTag::Transition => sys.n + sys.q,
    };
    if domain.dim() != want {
        return Err(Error::Dimension(format!("box has dimension {}, expected {want}", domain.dim())));
    }
    if !domain.has_volume() {
        return Err(Error::InvalidParameter("box has zero volume".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut g1, mut g2) = (Vec::new(), Vec::new());
    let mut max_ratio = 0.0f64;
    for _ in 0..samples {
        let p1 = domain.sample(&mut rng);
        let p2 = domain.sample(&mut rng);
        let (x1, x2) = (&p1[..sys.n], &p2[..sys.n]);
        let (den, num) = match map {
            MapTag::Output => {
                sys.output_unchecked(x1, &mut g1);
                sys.output_unchecked(x2, &mut g2);
                (diff_norm(x1, x2), diff_norm(&g1, &g2))
            }
            MapTag::Transition => {
                let (w1, w2) = (&p1[sys.n..], &p2[sys.n..]);
                sys.step_unchecked(x1, w1, &mut g1);
                sys.step_unchecked(x2, w2, &mut g2);
                (diff_norm(x1, x2) + diff_norm(w1, w2), diff_norm(&g1, &g2))
            }
        };
        if den > 0.0 {
            max_ratio = max_ratio.max(num / den);
        }
    }
    if !(max_ratio > 0.0) || !max_ratio.is_finite() {
        return Err(Error::Domain(format!("no usable ratio on the box (max ratio {max_ratio})")));
    }
    Ok(ModulusEstimate {
        function: ComparisonFunction::linear(MODULUS_SAFETY * max_ratio)?.with_class(crate::compfn::FnClass::K),
        max_ratio,
        samples,
        seed,
        estimated: true,
    })
}

/// Largest `|h(x₁)−h(x₂)| − α_h(|Δx|)` over random pairs in the box;
/// nonpositive when the declared modulus holds on every tested pair.
pub fn check_output_modulus(sys: &System, domain: &BoxSpec, samples: usize, seed: u64) -> Result<f64> {
    let alpha = sys
        .alpha_h
        .as_ref()
        .ok_or_else(|| Error::MissingInput("system has no output modulus".into()))?;
    domain.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut g1, mut g2) = (Vec::new(), Vec::new());
    let mut worst = f64::NEG_INFINITY;
    for _ in 0..samples {
        let (x1, x2) = (domain.sample(&mut rng), domain.sample(&mut rng));
        sys.output_unchecked(&x1, &mut g1);
        sys.output_unchecked(&x2, &mut g2);
        worst = worst.max(diff_norm(&g1, &g2) - alpha.k(diff_norm(&x1, &x2)));
    }
    Ok(worst)
}

/// Euclidean norm, exposed for callers building their own increments.
pub fn euclidean(v: &[f64]) -> f64 {
    norm(v)
}

/// `A x` for a linear system, used by callers that need matrix access.
pub fn apply(a: &DMatrix<f64>, x: &[f64]) -> Vec<f64> {
    (a * DVector::from_column_slice(x)).iter().copied().collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn step_examples() {
        let r = std::f64::consts::FRAC_1_SQRT_2;
        let x = System::rotation8().step(&[1.0, 0.0], &[]).unwrap();
        assert!((x[0] - r).abs() < 1e-15 && (x[1] + r).abs() < 1e-15);
        assert_eq!(System::scalar_unstable(2.0).step(&[1.0], &[0.0]).unwrap(), vec![2.0]);
        assert_eq!(System::scalar_unstable_input(2.0).step(&[1.0], &[-1.5]).unwrap(), vec![0.5]);
        assert_eq!(System::contraction().step(&[1.0], &[0.0]).unwrap(), vec![0.5]);
        assert!(matches!(System::contraction().step(&[1.0, 2.0], &[0.0]), Err(Error::Dimension(_))));
        assert!(matches!(System::contraction().step(&[1.0], &[]), Err(Error::Dimension(_))));
    }

    #[test]
    fn simulate_examples() {
        let rot = System::rotation8();
        let p = simulate_pair(&rot, &[0.0, 1.0], &[0.0, 0.0], &InputSignal::Zero, &InputSignal::Zero, 8).unwrap();
        assert!(p.dx.iter().all(|d| (d - 1.0).abs() < 1e-12));
        let p = simulate_pair(&System::scalar_unstable(2.0), &[1.0], &[0.0], &InputSignal::Zero, &InputSignal::Zero, 5).unwrap();
        assert_eq!(p.dx, vec![1.0, 2.0, 4.0, 8.0, 16.0, 32.0]);
        assert_eq!(p.dy, p.dx);
        assert_eq!(p.dw.len(), 5);
        let p = simulate_pair(&rot, &[0.3, -0.2], &[0.3, -0.2], &InputSignal::Zero, &InputSignal::Zero, 10).unwrap();
        assert!(p.dx.iter().chain(&p.dy).all(|&d| d == 0.0));
    }

    #[test]
    fn stabilizing_feedback() {
        let sys = System::scalar_unstable_input(2.0);
        let p = simulate_pair(&sys, &[1.0], &[0.0], &InputSignal::Zero, &InputSignal::stabilizing(2.0, 3), 5).unwrap();
        // x2 stays at 0; with x02 = 1 instead it would contract
        assert_eq!(p.dx, vec![1.0, 2.0, 4.0, 8.0, 16.0, 32.0]);
        let p = simulate_pair(&sys, &[0.0], &[1.0], &InputSignal::Zero, &InputSignal::stabilizing(2.0, 3), 5).unwrap();
        assert_eq!(p.states2.iter().map(|s| s[0]).collect::<Vec<_>>(), vec![1.0, 0.5, 0.25, 0.125, 0.25, 0.5]);
        assert_eq!(p.w2[0], vec![-1.5]);
        assert_eq!(p.w2[3], vec![0.0]);
    }

    #[test]
    fn sequence_length_is_checked() {
        let sys = System::contraction();
        let short = InputSignal::sequence(vec![vec![0.0]; 3]);
        assert!(simulate_pair(&sys, &[1.0], &[0.0], &short, &InputSignal::Zero, 5).is_err());
        // input-free systems ignore inputs entirely
        let rot = System::rotation8();
        assert!(simulate_pair(&rot, &[1.0, 0.0], &[0.0, 0.0], &short, &InputSignal::Zero, 5).is_ok());
    }

    #[test]
    fn catalog() {
        let mut params = BTreeMap::new();
        params.insert("a".to_string(), 0.5);
        let s = System::builtin("scalar_unstable", &params).unwrap();
        assert_eq!(s.metadata.get("warning").map(String::as_str), Some("not unstable"));
        assert!(matches!(System::builtin("nope", &BTreeMap::new()), Err(Error::UnknownSystem(_))));
        assert!(System::builtin("rotation8", &params).is_err());
        let rot = System::rotation8();
        assert_eq!((rot.n, rot.q, rot.p), (2, 0, 1));
    }

    #[test]
    fn parsed_matches_builtin() {
        let parsed = System::parse("c", "x1' = 0.5*x1 + w1 ; y1 = x1").unwrap();
        assert_eq!(parsed.step(&[1.0], &[0.0]).unwrap(), vec![0.5]);
        let parsed = System::parse("u", "x1' = 2*x1 ; y1 = x1").unwrap();
        let builtin = System::scalar_unstable(2.0);
        for x in [-3.0, 0.1, 7.5] {
            assert_eq!(parsed.step(&[x], &[]).unwrap(), builtin.step(&[x], &[]).unwrap());
        }
    }

    #[test]
    fn linear_source_reparses() {
        let rot = System::rotation8();
        let back = System::parse("r", &rot.to_source()).unwrap();
        let x = [0.3, -1.7];
        let (a, b) = (rot.step(&x, &[]).unwrap(), back.step(&x, &[]).unwrap());
        assert_eq!(a, b);
    }

    #[test]
    fn modulus_examples() {
        let cont = System::contraction();
        let e = estimate_modulus(&cont, MapTag::Output, &BoxSpec::cube(1, -5.0, 5.0), 500, 1).unwrap();
        assert!((e.function.k(1.0) - 1.1).abs() < 1e-12);
        let rot = System::rotation8();
        let e = estimate_modulus(&rot, MapTag::Output, &BoxSpec::cube(2, -1.0, 1.0), 2000, 1).unwrap();
        assert!(e.max_ratio <= 1.0 + 1e-12 && e.max_ratio > 0.95);
        let un = System::scalar_unstable(2.0);
        let e = estimate_modulus(&un, MapTag::Transition, &BoxSpec::cube(1, -1.0, 1.0), 200, 3).unwrap();
        assert!((e.function.k(1.0) - 2.2).abs() < 1e-12);
        assert!(estimate_modulus(&un, MapTag::Transition, &BoxSpec::cube(1, 1.0, 1.0), 200, 3).is_err());
        assert!(check_output_modulus(&rot, &BoxSpec::cube(2, -3.0, 3.0), 1000, 4).unwrap() <= 0.0);
    }

    #[test]
    fn csv_header() {
        let p = simulate_pair(&System::rotation8(), &[1.0, 0.0], &[0.0, 0.0], &InputSignal::Zero, &InputSignal::Zero, 2).unwrap();
        let csv = p.to_csv();
        assert!(csv.starts_with("t,x1_1,x1_2,x2_1,x2_2,dx,dy\n"));
        assert_eq!(csv.lines().count(), 4);
    }

    #[test]
    fn linear_json() {
        let spec: LinearSpec = serde_json::from_str(r#"{"A":[[0.5]],"B":[[1]],"C":[[1]]}"#).unwrap();
        let s = System::from_linear_spec("c", &spec).unwrap();
        assert_eq!(s.step(&[1.0], &[0.0]).unwrap(), vec![0.5]);
        let bad: LinearSpec = serde_json::from_str(r#"{"A":[[0.5, 1]],"C":[[1]]}"#).unwrap();
        assert!(System::from_linear_spec("bad", &bad).is_err());
    }
}
