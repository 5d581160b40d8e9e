//! Finite-horizon checks of the detectability bounds and a seeded falsifier.
//!
//! Every verdict here is relative to the simulated horizon and the sampling
//! sets that were materialized: "consistent" means no violation was seen.

use std::collections::BTreeMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::compfn::{verify_class, ClassReport, ComparisonFunction, EvalGrid, FnClass};
use crate::error::{Error, Result};
use crate::sampling::{materialize, SamplingScheme, SamplingSet};
use crate::sysmodel::{simulate_pair, BoxSpec, InputSignal, System, TrajectoryPair};

/// Default absolute tolerance on margins.
pub const TOLERANCE: f64 = 1e-9;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum CertForm {
    /// `β(|Δx₀|,t) ⊕ γ₁(sup |Δw|) ⊕ γ₂(sup |Δy|)`.
    Ioss {
        beta: ComparisonFunction,
        gamma1: ComparisonFunction,
        gamma2: ComparisonFunction,
    },
    /// As `Ioss`, with the output supremum over sampling instants only.
    Sampled {
        beta_bar: ComparisonFunction,
        gamma1_bar: ComparisonFunction,
        gamma2_bar: ComparisonFunction,
    },
    /// `β_x(|Δx₀|,t) ⊕ max β_u(|Δw(τ)|, t-τ-1) ⊕ max β_y(|Δy(τ)|, t-τ-1)`.
    Discounted {
        beta_x: ComparisonFunction,
        beta_u: ComparisonFunction,
        beta_y: ComparisonFunction,
    },
    /// As `Discounted`, with the output maximum over sampling instants only.
    SampledDiscounted {
        beta_x_bar: ComparisonFunction,
        beta_u_bar: ComparisonFunction,
        beta_y_bar: ComparisonFunction,
    },
    /// `|Δy(t)| ≤ γ_h(sup_{τ∈K_i} |Δy|) ⊕ γ_w(sup |Δw|)` for `t ≥ t*`.
    Condition11 {
        gamma_w: ComparisonFunction,
        gamma_h: ComparisonFunction,
        t_star: u64,
    },
    /// `|Δx(t)| ≤ β(|Δx₀|,t) ⊕ max γ₁(|Δw(τ)|)·σ₁(t-τ-1)`.
    PairIiss {
        beta: ComparisonFunction,
        gamma1: ComparisonFunction,
        sigma1: ComparisonFunction,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub theorem: String,
    #[serde(default)]
    pub inputs: serde_json::Value,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub notes: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Certificate {
    #[serde(flatten)]
    pub form: CertForm,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub provenance: Option<Provenance>,
}

impl From<CertForm> for Certificate {
    fn from(form: CertForm) -> Self {
        Self { form, provenance: None }
    }
}

impl Certificate {
    pub fn kind(&self) -> &'static str {
        match self.form {
            CertForm::Ioss { .. } => "ioss",
            CertForm::Sampled { .. } => "sampled",
            CertForm::Discounted { .. } => "discounted",
            CertForm::SampledDiscounted { .. } => "sampled_discounted",
            CertForm::Condition11 { .. } => "condition11",
            CertForm::PairIiss { .. } => "pair_iiss",
        }
    }

    pub fn is_sampled(&self) -> bool {
        matches!(
            self.form,
            CertForm::Sampled { .. } | CertForm::SampledDiscounted { .. } | CertForm::Condition11 { .. }
        )
    }

    /// Named slots with the class each one must carry.
    pub fn slots(&self) -> Vec<(&'static str, &ComparisonFunction, FnClass)> {
        use FnClass::*;
        match &self.form {
            CertForm::Ioss { beta, gamma1, gamma2 } => vec![("beta", beta, KL), ("gamma1", gamma1, K), ("gamma2", gamma2, K)],
            CertForm::Sampled {
                beta_bar,
                gamma1_bar,
                gamma2_bar,
            } => vec![("beta_bar", beta_bar, KL), ("gamma1_bar", gamma1_bar, K), ("gamma2_bar", gamma2_bar, K)],
            CertForm::Discounted { beta_x, beta_u, beta_y } => {
                vec![("beta_x", beta_x, KL), ("beta_u", beta_u, KL), ("beta_y", beta_y, KL)]
            }
            CertForm::SampledDiscounted {
                beta_x_bar,
                beta_u_bar,
                beta_y_bar,
            } => vec![("beta_x_bar", beta_x_bar, KL), ("beta_u_bar", beta_u_bar, KL), ("beta_y_bar", beta_y_bar, KL)],
            CertForm::Condition11 { gamma_w, gamma_h, .. } => vec![("gamma_w", gamma_w, K), ("gamma_h", gamma_h, K)],
            CertForm::PairIiss { beta, gamma1, sigma1 } => vec![("beta", beta, KL), ("gamma1", gamma1, K), ("sigma1", sigma1, L)],
        }
    }

    /// Grid class check of every slot. Declared tags must match the slot.
    pub fn validate(&self, grid: &EvalGrid) -> Result<BTreeMap<String, ClassReport>> {
        if let CertForm::Condition11 { t_star: 0, .. } = self.form {
            return Err(Error::InvalidParameter("t_star must be a positive integer".into()));
        }
        let mut out = BTreeMap::new();
        for (name, f, want) in self.slots() {
            let ok = match want {
                FnClass::K => matches!(f.class, FnClass::K | FnClass::Kinf),
                other => f.class == other,
            };
            if !ok {
                return Err(Error::ClassMismatch {
                    op: name,
                    left: f.class,
                    right: want,
                });
            }
            out.insert(name.to_string(), verify_class(f, grid));
        }
        Ok(out)
    }

    /// The KL function that bounds the unforced part, used for the uniform violation time.
    pub fn decay_function(&self) -> Result<&ComparisonFunction> {
        match &self.form {
            CertForm::Ioss { beta, .. } | CertForm::PairIiss { beta, .. } => Ok(beta),
            CertForm::Sampled { beta_bar, .. } => Ok(beta_bar),
            CertForm::Discounted { beta_x, .. } => Ok(beta_x),
            CertForm::SampledDiscounted { beta_x_bar, .. } => Ok(beta_x_bar),
            CertForm::Condition11 { .. } => Err(Error::Precondition("condition11 has no decay function".into())),
        }
    }

    pub fn to_json_pretty(&self) -> String {
        serde_json::to_string_pretty(self).expect("certificates always serialize")
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Consistent,
    Violated,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MarginRow {
    pub t: usize,
    pub lhs: f64,
    pub rhs: f64,
    pub margin: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckResult {
    pub kind: String,
    pub verdict: Verdict,
    pub min_margin: f64,
    /// Time attaining the minimum margin (earliest on ties).
    pub witness_t: usize,
    pub horizon: usize,
    pub tolerance: f64,
    pub margins: Vec<MarginRow>,
}

impl CheckResult {
    fn from_rows(kind: &str, rows: Vec<MarginRow>, horizon: usize, tolerance: f64) -> Self {
        let (mut min_margin, mut witness_t) = (f64::INFINITY, 0);
        for r in &rows {
            if r.margin < min_margin {
                min_margin = r.margin;
                witness_t = r.t;
            }
        }
        let verdict = if min_margin < -tolerance {
            Verdict::Violated
        } else {
            Verdict::Consistent
        };
        Self {
            kind: kind.to_string(),
            verdict,
            min_margin,
            witness_t,
            horizon,
            tolerance,
            margins: rows,
        }
    }

    pub fn margins_csv(&self) -> String {
        let mut s = String::from("t,lhs,rhs,margin\n");
        for r in &self.margins {
            s.push_str(&format!("{},{:?},{:?},{:?}\n", r.t, r.lhs, r.rhs, r.margin));
        }
        s
    }
}

/// Running `max_{τ<t} g(v_τ, t-τ-1)` for `g` nondecreasing in `v` and
/// nonincreasing in the age: an entry is dropped once a later entry is at
/// least as large, since the later one dominates it at every future time.
/// Zero entries never contribute and are not stored.
#[derive(Default)]
struct DiscountedMax {
    stack: Vec<(usize, f64)>,
}

impl DiscountedMax {
    fn push(&mut self, tau: usize, v: f64) {
        if !(v > 0.0) {
            return;
        }
        while self.stack.last().is_some_and(|&(_, top)| top <= v) {
            self.stack.pop();
        }
        self.stack.push((tau, v));
    }

    fn eval(&self, t: usize, g: impl Fn(f64, f64) -> f64) -> f64 {
        self.stack
            .iter()
            .map(|&(tau, v)| g(v, (t - tau - 1) as f64))
            .fold(0.0, f64::max)
    }
}

/// Running supremum; `None` until the first entry.
#[derive(Default)]
struct RunningSup(Option<f64>);

impl RunningSup {
    fn push(&mut self, v: f64) {
        self.0 = Some(self.0.map_or(v, |s| s.max(v)));
    }

    fn apply(&self, g: &ComparisonFunction) -> f64 {
        self.0.map_or(0.0, |s| g.k(s))
    }
}

fn check_horizon(pair: &TrajectoryPair, horizon: usize) -> Result<()> {
    if horizon > pair.horizon {
        return Err(Error::HorizonTooShort(format!(
            "check horizon {horizon} exceeds simulated horizon {}",
            pair.horizon
        )));
    }
    Ok(())
}

/// Indicator of `K_i` over `0..len`, checking that the set reaches far enough.
fn sample_mask(k_i: &SamplingSet, len: usize) -> Result<Vec<bool>> {
    if (k_i.horizon as usize) + 1 < len {
        return Err(Error::HorizonTooShort(format!(
            "sampling set materialized to {}, times up to {} are needed",
            k_i.horizon,
            len - 1
        )));
    }
    Ok(k_i.mask(len))
}

/// Evaluates one of the four bound forms at every `t ∈ [0, horizon]`.
pub fn check_bound(pair: &TrajectoryPair, cert: &Certificate, k_i: Option<&SamplingSet>, horizon: usize) -> Result<CheckResult> {
    check_bound_tol(pair, cert, k_i, horizon, TOLERANCE)
}

pub fn check_bound_tol(
    pair: &TrajectoryPair,
    cert: &Certificate,
    k_i: Option<&SamplingSet>,
    horizon: usize,
    tolerance: f64,
) -> Result<CheckResult> {
    check_horizon(pair, horizon)?;
    let sampled = matches!(cert.form, CertForm::Sampled { .. } | CertForm::SampledDiscounted { .. });
    let mask = match (sampled, k_i) {
        (true, Some(k)) => Some(sample_mask(k, horizon)?),
        (true, None) => return Err(Error::MissingInput(format!("{} certificate needs a sampling set", cert.kind()))),
        (false, Some(_)) => {
            return Err(Error::Precondition(format!(
                "{} certificate does not take a sampling set",
                cert.kind()
            )))
        }
        (false, None) => None,
    };
    let in_set = |t: usize| mask.as_ref().is_none_or(|m| m[t]);
    let dx0 = pair.dx[0];
    let mut rows = Vec::with_capacity(horizon + 1);
    match &cert.form {
        CertForm::Ioss {
            beta: b,
            gamma1: g1,
            gamma2: g2,
        }
        | CertForm::Sampled {
            beta_bar: b,
            gamma1_bar: g1,
            gamma2_bar: g2,
        } => {
            let (mut sw, mut sy) = (RunningSup::default(), RunningSup::default());
            for t in 0..=horizon {
                let rhs = b.kl(dx0, t as f64).max(sw.apply(g1)).max(sy.apply(g2));
                rows.push(MarginRow {
                    t,
                    lhs: pair.dx[t],
                    rhs,
                    margin: rhs - pair.dx[t],
                });
                if t < horizon {
                    sw.push(pair.dw[t]);
                    if in_set(t) {
                        sy.push(pair.dy[t]);
                    }
                }
            }
        }
        CertForm::Discounted {
            beta_x: bx,
            beta_u: bu,
            beta_y: by,
        }
        | CertForm::SampledDiscounted {
            beta_x_bar: bx,
            beta_u_bar: bu,
            beta_y_bar: by,
        } => {
            let (mut mw, mut my) = (DiscountedMax::default(), DiscountedMax::default());
            for t in 0..=horizon {
                let rhs = bx
                    .kl(dx0, t as f64)
                    .max(mw.eval(t, |v, r| bu.kl(v, r)))
                    .max(my.eval(t, |v, r| by.kl(v, r)));
                rows.push(MarginRow {
                    t,
                    lhs: pair.dx[t],
                    rhs,
                    margin: rhs - pair.dx[t],
                });
                if t < horizon {
                    mw.push(t, pair.dw[t]);
                    if in_set(t) {
                        my.push(t, pair.dy[t]);
                    }
                }
            }
        }
        _ => {
            return Err(Error::Precondition(format!(
                "check_bound takes ioss, sampled, discounted or sampled_discounted, got {}",
                cert.kind()
            )))
        }
    }
    Ok(CheckResult::from_rows(cert.kind(), rows, horizon, tolerance))
}

/// Output-to-output condition on `t ∈ [t*, horizon]`.
pub fn check_condition11(pair: &TrajectoryPair, cond: &Certificate, k_i: &SamplingSet, horizon: usize) -> Result<CheckResult> {
    let CertForm::Condition11 { gamma_w, gamma_h, t_star } = &cond.form else {
        return Err(Error::Precondition(format!("expected a condition11 certificate, got {}", cond.kind())));
    };
    check_horizon(pair, horizon)?;
    let t_star = *t_star as usize;
    if horizon < t_star {
        return Err(Error::HorizonTooShort(format!("horizon {horizon} is below t* = {t_star}")));
    }
    let mask = sample_mask(k_i, horizon)?;
    let (mut sw, mut sy) = (RunningSup::default(), RunningSup::default());
    let mut rows = Vec::with_capacity(horizon + 1 - t_star);
    for t in 0..=horizon {
        if t >= t_star {
            let rhs = sy.apply(gamma_h).max(sw.apply(gamma_w));
            rows.push(MarginRow {
                t,
                lhs: pair.dy[t],
                rhs,
                margin: rhs - pair.dy[t],
            });
        }
        if t < horizon {
            sw.push(pair.dw[t]);
            if mask[t] {
                sy.push(pair.dy[t]);
            }
        }
    }
    Ok(CheckResult::from_rows(cond.kind(), rows, horizon, TOLERANCE))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Membership {
    InLambda,
    InPsi,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Classification {
    pub membership: Membership,
    /// Horizon the classification is relative to.
    pub horizon: usize,
    pub first_violation: Option<usize>,
    pub min_margin: f64,
}

/// Decides on `[0, horizon]` whether a pair obeys the input-only bound.
pub fn classify_pair(pair: &TrajectoryPair, cert: &Certificate, horizon: usize) -> Result<Classification> {
    let CertForm::PairIiss { beta, gamma1, sigma1 } = &cert.form else {
        return Err(Error::Precondition(format!("expected a pair_iiss certificate, got {}", cert.kind())));
    };
    check_horizon(pair, horizon)?;
    let dx0 = pair.dx[0];
    let mut mw = DiscountedMax::default();
    let mut first_violation = None;
    let mut min_margin = f64::INFINITY;
    for t in 0..=horizon {
        let rhs = beta.kl(dx0, t as f64).max(mw.eval(t, |v, r| gamma1.k(v) * sigma1.l(r)));
        let margin = rhs - pair.dx[t];
        min_margin = min_margin.min(margin);
        if margin < -TOLERANCE && first_violation.is_none() {
            first_violation = Some(t);
        }
        if t < horizon {
            mw.push(t, pair.dw[t]);
        }
    }
    Ok(Classification {
        membership: if first_violation.is_some() {
            Membership::InPsi
        } else {
            Membership::InLambda
        },
        horizon,
        first_violation,
        min_margin,
    })
}

/// Smallest integer exceeding `ln c / (ln a + λ)`: for `x⁺ = a x` and
/// `β = c s e^{-λt}` every nonzero pair violates the bound by this time.
pub fn exp_family_t_beta(c: f64, a: f64, lam: f64) -> u64 {
    let r = c.ln() / (a.ln() + lam);
    if r < 0.0 {
        0
    } else {
        r.floor() as u64 + 1
    }
}

/// How pairs are drawn for the Assumption-2 check.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PairSampler {
    /// Independent uniform initial states, zero inputs.
    UniformBox { x01: BoxSpec, x02: BoxSpec },
    /// `x01 = 10^{-k}·e₁`, `x02 = 0`, zero inputs, one pair per `k`.
    DecadeSweep { k_min: i32, k_max: i32 },
    /// `x01 = 0` with zero input against `x02` under the feedback
    /// `w₂ = (0.5 - a)x₂` held until each listed time.
    StabilizingInput { a: f64, x02: f64, until: Vec<usize> },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PsiPair {
    pub dx0: f64,
    /// First `t` with `|Δx(t)| > β(|Δx₀|, t)`.
    pub t_psi: usize,
    /// Switch-off time of a stabilizing input, when one was used.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub until: Option<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Trend {
    /// Least-squares slope of `t_ψ` against `log10(1/|Δx₀|)`.
    pub slope: f64,
    pub intercept: f64,
    /// True when `t_ψ` keeps growing across the sweep.
    pub unbounded: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Assumption2Report {
    pub trials: usize,
    pub psi_pairs: usize,
    /// Pairs that never violated the bound on the horizon.
    pub skipped: usize,
    pub t_beta: u64,
    pub max_t_psi: Option<usize>,
    /// Smallest `T_β` that works for every observed pair.
    pub empirical_min_t_beta: Option<usize>,
    pub holds: Option<bool>,
    pub horizon: usize,
    pub pairs: Vec<PsiPair>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub trend: Option<Trend>,
    pub seed: u64,
}

fn fit_line(xs: &[f64], ys: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    let slope = if sxx > 0.0 { sxy / sxx } else { 0.0 };
    (slope, my - slope * mx)
}

/// First time the unforced part of the bound is exceeded.
fn first_excess(pair: &TrajectoryPair, beta: &ComparisonFunction) -> Option<usize> {
    let dx0 = pair.dx[0];
    (0..=pair.horizon).find(|&t| pair.dx[t] > beta.kl(dx0, t as f64))
}

/// Empirical check that violations of the decay term happen by `t_beta`.
///
/// A pair counts as a Ψ-pair when its distance exceeds `β(|Δx₀|, t)` at some
/// `t` on the horizon; others are skipped. For `UniformBox` the number of
/// pairs is `trials`; the other samplers are deterministic lists.
pub fn check_assumption2(
    sys: &System,
    cert: &Certificate,
    sampler: &PairSampler,
    t_beta: u64,
    trials: usize,
    seed: u64,
    horizon: usize,
) -> Result<Assumption2Report> {
    let beta = cert.decay_function()?;
    let mut draws: Vec<(Vec<f64>, Vec<f64>, InputSignal, Option<usize>)> = Vec::new();
    match sampler {
        PairSampler::UniformBox { x01, x02 } => {
            if trials == 0 {
                return Err(Error::Precondition("trials must be at least 1".into()));
            }
            x01.validate()?;
            x02.validate()?;
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            for _ in 0..trials {
                let a = x01.sample(&mut rng);
                let b = x02.sample(&mut rng);
                draws.push((a, b, InputSignal::Zero, None));
            }
        }
        PairSampler::DecadeSweep { k_min, k_max } => {
            for k in *k_min..=*k_max {
                let mut a = vec![0.0; sys.n];
                a[0] = 10f64.powi(-k);
                draws.push((a, vec![0.0; sys.n], InputSignal::Zero, None));
            }
        }
        PairSampler::StabilizingInput { a, x02, until } => {
            if sys.q != sys.n {
                return Err(Error::Dimension("stabilizing feedback needs q = n".into()));
            }
            for &u in until {
                if u >= horizon {
                    return Err(Error::HorizonTooShort(format!("feedback held until {u}, horizon is {horizon}")));
                }
                draws.push((vec![0.0; sys.n], vec![*x02; sys.n], InputSignal::stabilizing(*a, u), Some(u)));
            }
        }
    }
    let mut pairs = Vec::new();
    let mut skipped = 0;
    for (a, b, sig2, until) in &draws {
        let pair = simulate_pair(sys, a, b, &InputSignal::Zero, sig2, horizon)?;
        match first_excess(&pair, beta) {
            Some(t_psi) => pairs.push(PsiPair {
                dx0: pair.dx[0],
                t_psi,
                until: *until,
            }),
            None => skipped += 1,
        }
    }
    let max_t_psi = pairs.iter().map(|p| p.t_psi).max();
    let trend = match sampler {
        PairSampler::DecadeSweep { .. } if pairs.len() >= 2 => {
            let xs: Vec<f64> = pairs.iter().map(|p| -p.dx0.log10()).collect();
            let ys: Vec<f64> = pairs.iter().map(|p| p.t_psi as f64).collect();
            let (slope, intercept) = fit_line(&xs, &ys);
            let growing = pairs.windows(2).all(|w| w[1].t_psi > w[0].t_psi);
            Some(Trend {
                slope,
                intercept,
                unbounded: growing && slope > 0.0,
            })
        }
        _ => None,
    };
    if pairs.is_empty() {
        log::warn!("assumption-2 check drew no pairs that violate the decay term");
    }
    Ok(Assumption2Report {
        trials: draws.len(),
        psi_pairs: pairs.len(),
        skipped,
        t_beta,
        max_t_psi,
        empirical_min_t_beta: max_t_psi,
        holds: max_t_psi.map(|m| m as u64 <= t_beta),
        horizon,
        pairs,
        trend,
        seed,
    })
}

/// What the falsifier tries to violate.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FalsifyTarget {
    pub cert: Certificate,
    /// Required for sampled kinds and condition11.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scheme: Option<SamplingScheme>,
    /// Start indices `i` of the sets `K_i` to check; the margin is the
    /// minimum over them.
    #[serde(default = "default_starts")]
    pub starts: Vec<u64>,
}

fn default_starts() -> Vec<u64> {
    vec![1]
}

/// Search box: initial states plus piecewise-constant inputs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SearchSpace {
    pub x01: BoxSpec,
    pub x02: BoxSpec,
    /// Amplitude box for each input sample (dimension q).
    pub w: BoxSpec,
    /// Use the same input sequence for both trajectories.
    #[serde(default)]
    pub tie_inputs: bool,
    #[serde(default = "default_segment")]
    pub segment_len: usize,
}

fn default_segment() -> usize {
    5
}

impl SearchSpace {
    pub fn new(x01: BoxSpec, x02: BoxSpec, w: BoxSpec) -> Self {
        Self {
            x01,
            x02,
            w,
            tie_inputs: false,
            segment_len: default_segment(),
        }
    }

    fn segments(&self, horizon: usize) -> usize {
        horizon.div_ceil(self.segment_len.max(1))
    }

    /// Bounds of the flat decision vector.
    fn bounds(&self, horizon: usize) -> (Vec<f64>, Vec<f64>) {
        let (mut lo, mut hi) = (Vec::new(), Vec::new());
        lo.extend(&self.x01.lo);
        hi.extend(&self.x01.hi);
        lo.extend(&self.x02.lo);
        hi.extend(&self.x02.hi);
        let copies = if self.tie_inputs { 1 } else { 2 };
        for _ in 0..copies * self.segments(horizon) {
            lo.extend(&self.w.lo);
            hi.extend(&self.w.hi);
        }
        (lo, hi)
    }

    fn decode(&self, z: &[f64], horizon: usize) -> (Vec<f64>, Vec<f64>, Vec<Vec<f64>>, Vec<Vec<f64>>) {
        let n = self.x01.dim();
        let q = self.w.dim();
        let seg = self.segment_len.max(1);
        let nseg = self.segments(horizon);
        let x01 = z[..n].to_vec();
        let x02 = z[n..2 * n].to_vec();
        let block = |off: usize| -> Vec<Vec<f64>> {
            (0..horizon)
                .map(|t| {
                    let s = off + (t / seg) * q;
                    z[s..s + q].to_vec()
                })
                .collect()
        };
        let w1 = block(2 * n);
        let w2 = if self.tie_inputs { w1.clone() } else { block(2 * n + nseg * q) };
        (x01, x02, w1, w2)
    }
}

/// Verifies on random draws that dropping a prefix of an admissible input
/// sequence leaves an admissible sequence (within the box, piecewise
/// constant with the same segment length after re-alignment).
pub fn check_shift_invariance(space: &SearchSpace, horizon: usize, samples: usize, seed: u64) -> Result<bool> {
    space.w.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (lo, hi) = space.bounds(horizon);
    let dims = BoxSpec { lo, hi };
    for _ in 0..samples {
        let z = dims.sample(&mut rng);
        let (_, _, w1, _) = space.decode(&z, horizon);
        let shift = (rand::Rng::random_range(&mut rng, 0..horizon.max(1))).min(horizon - 1);
        let shifted = &w1[shift..];
        let inside = shifted.iter().all(|w| w.iter().enumerate().all(|(k, v)| *v >= space.w.lo[k] && *v <= space.w.hi[k]));
        // a shifted piecewise-constant sequence changes value at most once
        // per segment length after its first (possibly shortened) segment
        let changes: Vec<usize> = (1..shifted.len()).filter(|&t| shifted[t] != shifted[t - 1]).collect();
        let aligned = changes.windows(2).all(|c| c[1] - c[0] >= space.segment_len.max(1));
        if !inside || !aligned {
            return Ok(false);
        }
    }
    Ok(true)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FalsifyConfig {
    pub horizon: usize,
    pub budget: usize,
    pub seed: u64,
    /// Worker threads for the quasi-random phase; 0 runs serially.
    #[serde(default)]
    pub threads: usize,
    #[serde(default = "default_tol")]
    pub tolerance: f64,
}

fn default_tol() -> f64 {
    TOLERANCE
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Witness {
    pub t: usize,
    /// Start index of the sampling set attaining the margin.
    pub start: u64,
    pub x01: Vec<f64>,
    pub x02: Vec<f64>,
    pub w1: Vec<Vec<f64>>,
    pub w2: Vec<Vec<f64>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FalsificationResult {
    pub found: bool,
    /// Best (smallest) margin seen; negative beyond tolerance when found.
    pub violation_margin: f64,
    /// Best candidate, reported whether or not it violates.
    pub witness: Witness,
    pub evaluations: usize,
    pub phase1_evaluations: usize,
    pub seed: u64,
}

struct Evaluator<'a> {
    sys: &'a System,
    target: &'a FalsifyTarget,
    space: &'a SearchSpace,
    sets: Vec<SamplingSet>,
    horizon: usize,
    tolerance: f64,
}

impl Evaluator<'_> {
    fn margin_of(&self, pair: &TrajectoryPair) -> Result<(f64, usize, u64)> {
        let cert = &self.target.cert;
        let mut best = (f64::INFINITY, 0usize, 0u64);
        let mut consider = |r: CheckResult, start: u64| {
            if r.min_margin < best.0 {
                best = (r.min_margin, r.witness_t, start);
            }
        };
        match cert.form {
            CertForm::Condition11 { .. } => {
                for k in &self.sets {
                    consider(check_condition11(pair, cert, k, self.horizon)?, k.start);
                }
            }
            CertForm::Sampled { .. } | CertForm::SampledDiscounted { .. } => {
                for k in &self.sets {
                    consider(check_bound_tol(pair, cert, Some(k), self.horizon, self.tolerance)?, k.start);
                }
            }
            CertForm::Ioss { .. } | CertForm::Discounted { .. } => {
                consider(check_bound_tol(pair, cert, None, self.horizon, self.tolerance)?, 0);
            }
            CertForm::PairIiss { .. } => {
                return Err(Error::Precondition("pair_iiss certificates are classified, not falsified".into()))
            }
        }
        Ok(best)
    }

    fn eval(&self, z: &[f64]) -> Result<(f64, usize, u64)> {
        let (x01, x02, w1, w2) = self.space.decode(z, self.horizon);
        let pair = simulate_pair(
            self.sys,
            &x01,
            &x02,
            &InputSignal::sequence(w1),
            &InputSignal::sequence(w2),
            self.horizon,
        )?;
        let (m, t, s) = self.margin_of(&pair)?;
        // NaN margins (overflowing trajectories) rank last
        Ok((if m.is_nan() { f64::INFINITY } else { m }, t, s))
    }
}

fn primes(count: usize) -> Vec<u64> {
    let mut out = Vec::with_capacity(count);
    let mut c = 2u64;
    while out.len() < count {
        if out.iter().take_while(|&&p| p * p <= c).all(|&p| c % p != 0) {
            out.push(c);
        }
        c += 1;
    }
    out
}

fn radical_inverse(mut i: u64, base: u64) -> f64 {
    let (mut inv, mut f) = (0.0, 1.0 / base as f64);
    while i > 0 {
        inv += f * (i % base) as f64;
        i /= base;
        f /= base as f64;
    }
    inv
}

/// Seeded two-phase search for a pair violating the target.
///
/// Phase 1 spends half the budget on a randomly shifted Halton sequence over
/// the search box. Phase 2 runs a (1+1) evolution strategy from the best
/// point, halving the step after 10 consecutive non-improving mutations. It
/// runs until the budget is spent, or until a violation is found and the
/// step has shrunk below 1e-12 of the box width.
pub fn falsify(sys: &System, target: &FalsifyTarget, space: &SearchSpace, cfg: &FalsifyConfig) -> Result<FalsificationResult> {
    if cfg.budget == 0 {
        return Err(Error::Precondition("budget must be at least 1".into()));
    }
    for b in [&space.x01, &space.x02, &space.w] {
        b.validate()?;
    }
    if space.x01.dim() != sys.n || space.x02.dim() != sys.n || space.w.dim() != sys.q {
        return Err(Error::Dimension(format!(
            "search box dimensions ({}, {}, {}) do not match system (n={}, q={})",
            space.x01.dim(),
            space.x02.dim(),
            space.w.dim(),
            sys.n,
            sys.q
        )));
    }
    let sets = if target.cert.is_sampled() {
        let scheme = target
            .scheme
            .as_ref()
            .ok_or_else(|| Error::MissingInput(format!("{} target needs a sampling scheme", target.cert.kind())))?;
        target
            .starts
            .iter()
            .map(|&i| materialize(scheme, i, cfg.horizon as u64))
            .collect::<Result<Vec<_>>>()?
    } else {
        Vec::new()
    };
    let ev = Evaluator {
        sys,
        target,
        space,
        sets,
        horizon: cfg.horizon,
        tolerance: cfg.tolerance,
    };
    let (lo, hi) = space.bounds(cfg.horizon);
    let active: Vec<usize> = (0..lo.len()).filter(|&k| hi[k] > lo[k]).collect();
    let point = |u: &[f64]| -> Vec<f64> {
        let mut z = lo.clone();
        for (j, &k) in active.iter().enumerate() {
            z[k] = lo[k] + u[j] * (hi[k] - lo[k]);
        }
        z
    };

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let phase1 = if active.is_empty() { 1 } else { (cfg.budget / 2).max(1) };
    let bases = primes(active.len());
    let shift: Vec<f64> = (0..active.len()).map(|_| rand::Rng::random::<f64>(&mut rng)).collect();
    let candidate = |idx: usize| -> Vec<f64> {
        let u: Vec<f64> = bases
            .iter()
            .zip(&shift)
            .map(|(&b, &s)| (radical_inverse(idx as u64 + 1, b) + s).fract())
            .collect();
        point(&u)
    };
    let run = |idx: usize| ev.eval(&candidate(idx)).map(|r| (idx, r));
    let results: Vec<(usize, (f64, usize, u64))> = if cfg.threads == 0 {
        (0..phase1).map(run).collect::<Result<_>>()?
    } else {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(cfg.threads)
            .build()
            .map_err(|e| Error::Internal(e.to_string()))?;
        pool.install(|| (0..phase1).into_par_iter().map(run).collect::<Result<_>>())?
    };
    let (best_idx, mut best) = results
        .into_iter()
        .min_by(|a, b| a.1 .0.total_cmp(&b.1 .0).then(a.0.cmp(&b.0)))
        .expect("phase 1 evaluates at least one point");
    let mut z = candidate(best_idx);
    let mut evaluations = phase1;

    if !active.is_empty() {
        let mut step = 0.1;
        let mut fails = 0;
        while evaluations < cfg.budget {
            if best.0 < -cfg.tolerance && step < 1e-12 {
                break;
            }
            let mut trial = z.clone();
            for &k in &active {
                let n: f64 = StandardNormal.sample(&mut rng);
                trial[k] = (trial[k] + step * (hi[k] - lo[k]) * n).clamp(lo[k], hi[k]);
            }
            let r = ev.eval(&trial)?;
            evaluations += 1;
            if r.0 < best.0 {
                best = r;
                z = trial;
                fails = 0;
            } else {
                fails += 1;
                if fails >= 10 {
                    step *= 0.5;
                    fails = 0;
                }
            }
        }
    }

    let (x01, x02, w1, w2) = space.decode(&z, cfg.horizon);
    Ok(FalsificationResult {
        found: best.0 < -cfg.tolerance,
        violation_margin: best.0,
        witness: Witness {
            t: best.1,
            start: best.2,
            x01,
            x02,
            w1,
            w2,
        },
        evaluations,
        phase1_evaluations: phase1,
        seed: cfg.seed,
    })
}

/// Re-simulates a witness and returns its margin under the target.
pub fn replay_witness(sys: &System, target: &FalsifyTarget, w: &Witness, horizon: usize) -> Result<f64> {
    let pair = simulate_pair(
        sys,
        &w.x01,
        &w.x02,
        &InputSignal::sequence(w.w1.clone()),
        &InputSignal::sequence(w.w2.clone()),
        horizon,
    )?;
    let sets = match &target.scheme {
        Some(s) if target.cert.is_sampled() => target
            .starts
            .iter()
            .map(|&i| materialize(s, i, horizon as u64))
            .collect::<Result<Vec<_>>>()?,
        _ => Vec::new(),
    };
    let space = SearchSpace::new(BoxSpec::cube(0, 0.0, 0.0), BoxSpec::cube(0, 0.0, 0.0), BoxSpec::cube(0, 0.0, 0.0));
    let ev = Evaluator {
        sys,
        target,
        space: &space,
        sets,
        horizon,
        tolerance: TOLERANCE,
    };
    Ok(ev.margin_of(&pair)?.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::compfn::ComparisonFunction as Cf;

    fn zero_pair(sys: &System, a: &[f64], b: &[f64], t: usize) -> TrajectoryPair {
        simulate_pair(sys, a, b, &InputSignal::Zero, &InputSignal::Zero, t).unwrap()
    }

    fn ioss_contraction() -> Certificate {
        CertForm::Ioss {
            beta: Cf::kl_exp(1.0, 1.0, 0.6).unwrap(),
            gamma1: Cf::linear(2.0).unwrap(),
            gamma2: Cf::identity(),
        }
        .into()
    }

    fn sampled_rotation() -> Certificate {
        CertForm::Sampled {
            beta_bar: Cf::kl_exp(2.0, 1.0, 0.1).unwrap(),
            gamma1_bar: Cf::identity(),
            gamma2_bar: Cf::identity(),
        }
        .into()
    }

    #[test]
    fn contraction_ioss_consistent() {
        let p = zero_pair(&System::contraction(), &[1.3], &[-0.4], 40);
        let r = check_bound(&p, &ioss_contraction(), None, 40).unwrap();
        assert_eq!(r.verdict, Verdict::Consistent);
        assert!(r.min_margin >= 0.0);
    }

    #[test]
    fn rotation_sampled_violated_at_seven() {
        let p = zero_pair(&System::rotation8(), &[0.0, 1.0], &[0.0, 0.0], 20);
        let k = materialize(&SamplingScheme::periodic(4), 1, 20).unwrap();
        let r = check_bound(&p, &sampled_rotation(), Some(&k), 20).unwrap();
        assert_eq!(r.verdict, Verdict::Violated);
        let first = r.margins.iter().find(|m| m.margin < -TOLERANCE).unwrap();
        assert_eq!(first.t, 7);
        // and not before: 2e^{-0.6} > 1
        assert!(r.margins[..7].iter().all(|m| m.margin > 0.0));
    }

    #[test]
    fn identical_trajectories_are_consistent() {
        let p = zero_pair(&System::rotation8(), &[0.5, 0.5], &[0.5, 0.5], 10);
        let k = materialize(&SamplingScheme::periodic(4), 1, 10).unwrap();
        let r = check_bound(&p, &sampled_rotation(), Some(&k), 10).unwrap();
        assert!(r.min_margin >= 0.0);
    }

    #[test]
    fn missing_or_stray_sampling_set() {
        let p = zero_pair(&System::rotation8(), &[0.0, 1.0], &[0.0, 0.0], 10);
        assert!(matches!(check_bound(&p, &sampled_rotation(), None, 10), Err(Error::MissingInput(_))));
        let k = materialize(&SamplingScheme::periodic(4), 1, 10).unwrap();
        assert!(check_bound(&p, &ioss_contraction(), Some(&k), 10).is_err());
        assert!(matches!(check_bound(&p, &ioss_contraction(), None, 11), Err(Error::HorizonTooShort(_))));
        let short = materialize(&SamplingScheme::periodic(4), 1, 5).unwrap();
        assert!(matches!(check_bound(&p, &sampled_rotation(), Some(&short), 10), Err(Error::HorizonTooShort(_))));
    }

    #[test]
    fn condition11_examples() {
        let cond: Certificate = CertForm::Condition11 {
            gamma_w: Cf::identity(),
            gamma_h: Cf::identity(),
            t_star: 2,
        }
        .into();
        let p = zero_pair(&System::contraction(), &[1.0], &[-2.0], 50);
        let k = materialize(&SamplingScheme::periodic(1), 1, 50).unwrap();
        assert_eq!(check_condition11(&p, &cond, &k, 50).unwrap().verdict, Verdict::Consistent);

        let p = zero_pair(&System::rotation8(), &[0.0, 1.0], &[0.0, 0.0], 20);
        let k = materialize(&SamplingScheme::periodic(4), 1, 20).unwrap();
        let r = check_condition11(&p, &cond, &k, 20).unwrap();
        assert_eq!(r.verdict, Verdict::Violated);
        assert!((p.dy[2] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn classify_examples() {
        let sigma = Cf::l_exp(1.0, 1.0).unwrap();
        let cert = |beta: Cf| -> Certificate {
            CertForm::PairIiss {
                beta,
                gamma1: Cf::identity(),
                sigma1: sigma.clone(),
            }
            .into()
        };
        let p = zero_pair(&System::contraction(), &[1.0], &[0.0], 30);
        let c = classify_pair(&p, &cert(Cf::kl_exp(1.0, 1.0, 0.6).unwrap()), 30).unwrap();
        assert_eq!(c.membership, Membership::InLambda);
        let p = zero_pair(&System::scalar_unstable(2.0), &[1.0], &[0.0], 10);
        let c = classify_pair(&p, &cert(Cf::kl_exp(2.0, 1.0, 0.1).unwrap()), 10).unwrap();
        assert_eq!(c.membership, Membership::InPsi);
        assert_eq!(c.first_violation, Some(1));
        let p = zero_pair(&System::scalar_unstable(2.0), &[0.7], &[0.7], 10);
        let c = classify_pair(&p, &cert(Cf::kl_exp(2.0, 1.0, 0.1).unwrap()), 10).unwrap();
        assert_eq!(c.membership, Membership::InLambda);
    }

    #[test]
    fn threshold_formula() {
        assert_eq!(exp_family_t_beta(2.0, 2.0, 0.1), 1);
        assert_eq!(exp_family_t_beta(100.0, 2.0, 0.0), 7);
    }

    #[test]
    fn discounted_stack_matches_direct_max() {
        let beta = Cf::kl_exp(1.5, 1.0, 0.3).unwrap();
        let vals = [0.5, 0.0, 2.0, 1.0, 1.0, 0.2, 3.0, 0.1, 0.0, 0.4];
        let mut acc = DiscountedMax::default();
        for t in 0..=vals.len() {
            let direct = (0..t).map(|tau| beta.kl(vals[tau], (t - tau - 1) as f64)).fold(0.0, f64::max);
            let fast = acc.eval(t, |v, r| beta.kl(v, r));
            assert_eq!(direct, fast, "t = {t}");
            if t < vals.len() {
                acc.push(t, vals[t]);
            }
        }
    }

    #[test]
    fn halton_is_in_unit_interval() {
        assert_eq!(radical_inverse(1, 2), 0.5);
        assert_eq!(radical_inverse(3, 2), 0.75);
        assert!((radical_inverse(5, 3) - 7.0 / 9.0).abs() < 1e-15);
        assert_eq!(primes(5), vec![2, 3, 5, 7, 11]);
    }

    #[test]
    fn degenerate_box_evaluates_once() {
        let sys = System::contraction();
        let space = SearchSpace {
            x01: BoxSpec::cube(1, 0.3, 0.3),
            x02: BoxSpec::cube(1, 0.3, 0.3),
            w: BoxSpec::cube(1, 0.0, 0.0),
            tie_inputs: true,
            segment_len: 5,
        };
        let target = FalsifyTarget {
            cert: ioss_contraction(),
            scheme: None,
            starts: vec![1],
        };
        let cfg = FalsifyConfig {
            horizon: 20,
            budget: 100,
            seed: 1,
            threads: 0,
            tolerance: TOLERANCE,
        };
        let r = falsify(&sys, &target, &space, &cfg).unwrap();
        assert!(!r.found);
        assert!(r.violation_margin >= 0.0);
        assert_eq!(r.evaluations, 1);
    }

    #[test]
    fn shift_invariance_of_search_space() {
        let space = SearchSpace::new(BoxSpec::cube(1, -1.0, 1.0), BoxSpec::cube(1, -1.0, 1.0), BoxSpec::cube(1, -0.5, 0.5));
        assert!(check_shift_invariance(&space, 40, 200, 9).unwrap());
    }

    #[test]
    fn certificate_json_shape() {
        let c = sampled_rotation();
        let v: serde_json::Value = serde_json::from_str(&c.to_json_pretty()).unwrap();
        assert_eq!(v["kind"], "sampled");
        assert_eq!(v["beta_bar"]["class"], "KL");
        let back: Certificate = serde_json::from_value(v).unwrap();
        assert_eq!(back, c);
        assert!(c.validate(&EvalGrid::default()).unwrap().values().all(|r| r.is_consistent()));
        let bad: Certificate = CertForm::Sampled {
            beta_bar: Cf::identity(),
            gamma1_bar: Cf::identity(),
            gamma2_bar: Cf::identity(),
        }
        .into();
        assert!(matches!(bad.validate(&EvalGrid::default()), Err(Error::ClassMismatch { .. })));
    }
}
