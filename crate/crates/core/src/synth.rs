//! Constructive synthesis of certificates from other certificates.
//!
//! Each constructor returns a [`Certificate`] whose slots are expression
//! trees, so the result can be printed, serialized and checked like any
//! hand-written certificate.

use serde::{Deserialize, Serialize};

use crate::certify::{CertForm, Certificate, Provenance};
use crate::compfn::{
    at_time, compose, compose_kl, invert, oplus, oplus_all, power_terms, product, scale, scale_arg, sontag_factorize,
    verify_class, CheckStatus, ComparisonFunction, EvalGrid, FnClass, SontagPair,
};
use crate::error::{Error, Result};

/// Inputs shared by the constructions; each one reads the slots it needs.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SynthesisInput {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub base: Option<Certificate>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alpha_h: Option<ComparisonFunction>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alpha_f: Option<ComparisonFunction>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alpha_tilde_h: Option<ComparisonFunction>,
    /// A `condition11` certificate.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cond: Option<Certificate>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub t_beta_bar: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sontag: Option<SontagPair>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sigma: Option<ComparisonFunction>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sigma_u: Option<ComparisonFunction>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sigma_y: Option<ComparisonFunction>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sigma_1: Option<ComparisonFunction>,
    /// Discounted output function of the base system; defaults to
    /// `γ̄₂(s)·e^{-r}`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub beta_y: Option<ComparisonFunction>,
    /// Gap bound of the sampling scheme, checked against `t*`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub delta_max: Option<u64>,
}

fn need<'a, T>(slot: &'a Option<T>, name: &str) -> Result<&'a T> {
    slot.as_ref().ok_or_else(|| Error::MissingInput(name.to_string()))
}

fn unit_decay() -> ComparisonFunction {
    ComparisonFunction::l_exp(1.0, 1.0).expect("static parameters")
}

/// `σ(r) / σ(r₀)` as an L function.
fn normalized(sigma: &ComparisonFunction, r0: u64) -> Result<ComparisonFunction> {
    if sigma.class != FnClass::L {
        return Err(Error::ClassMismatch {
            op: "normalize",
            left: sigma.class,
            right: FnClass::L,
        });
    }
    let v = sigma.l(r0 as f64);
    if !(v > 0.0) || !v.is_finite() {
        return Err(Error::Domain(format!("σ({r0}) = {v} cannot be used as a normalizer")));
    }
    scale(1.0 / v, sigma)
}

fn check_output(cert: &Certificate) -> Result<()> {
    let reports = cert.validate(&EvalGrid::default())?;
    for (slot, r) in reports {
        if r.verdict == CheckStatus::Fail {
            return Err(Error::Internal(format!(
                "synthesized slot `{slot}` fails its class check: {:?}",
                r.checks.iter().find(|c| c.status == CheckStatus::Fail)
            )));
        }
    }
    Ok(())
}

fn finish(form: CertForm, theorem: &str, inputs: &SynthesisInput, notes: Vec<String>) -> Result<Certificate> {
    let cert = Certificate {
        form,
        provenance: Some(Provenance {
            theorem: theorem.to_string(),
            inputs: serde_json::to_value(inputs).map_err(|e| Error::Internal(e.to_string()))?,
            notes,
        }),
    };
    check_output(&cert)?;
    Ok(cert)
}

fn is_superadditive(f: &ComparisonFunction) -> bool {
    power_terms(&f.node).is_some_and(|ts| ts.iter().all(|t| t.a >= 1.0))
}

/// Output modulus over the first `t*` steps:
/// `α̃_h = ⊕_{t<t*} α_h ∘ φ^{∘t}` with `φ = α_f ⊕ id`.
///
/// With `α_f` a modulus of `f` in `|Δx| + |Δw|`, this bounds `|Δy(t)|` by
/// `α̃_h(|Δx₀| + Σ_{τ<t} |Δw(τ)|)` for `t < t*`. The induction needs `φ`
/// superadditive, so `α_f` must be a maximum of power terms with exponent
/// at least one.
pub fn alpha_tilde_h(alpha_h: &ComparisonFunction, alpha_f: &ComparisonFunction, t_star: u64) -> Result<ComparisonFunction> {
    if t_star == 0 {
        return Err(Error::InvalidParameter("t* must be at least 1".into()));
    }
    if !is_superadditive(alpha_f) {
        return Err(Error::UnsupportedForm(
            "transition modulus must be a max of c*s^a terms with a >= 1; supply alpha_tilde_h directly".into(),
        ));
    }
    let phi = oplus(alpha_f, &ComparisonFunction::identity())?;
    let mut iterate = ComparisonFunction::identity();
    let mut terms = Vec::new();
    for _ in 0..t_star {
        terms.push(compose(alpha_h, &iterate)?);
        iterate = compose(&phi, &iterate)?;
    }
    oplus_all(&terms)
}

/// Sampled certificate from an i-IOSS certificate and the output condition:
///
/// * `β̄(s,t) = β(s,t) ⊕ γ₂(α̃_h(2s))·e^{t*-t}`
/// * `γ̄₁(s) = γ₁(s) ⊕ γ₂(α̃_h(2t*·s)) ⊕ γ₂(γ_w(s))`
/// * `γ̄₂ = γ₂ ∘ γ_h`
///
/// `α̃_h` is taken from the input or built from `alpha_h` and `alpha_f`.
pub fn thm1_certificate(input: &SynthesisInput) -> Result<Certificate> {
    let base = need(&input.base, "base")?;
    let CertForm::Ioss { beta, gamma1, gamma2 } = &base.form else {
        return Err(Error::Precondition(format!("base must be an ioss certificate, got {}", base.kind())));
    };
    let cond = need(&input.cond, "cond")?;
    let CertForm::Condition11 { gamma_w, gamma_h, t_star } = &cond.form else {
        return Err(Error::Precondition(format!("cond must be a condition11 certificate, got {}", cond.kind())));
    };
    let mut notes = Vec::new();
    let at = match &input.alpha_tilde_h {
        Some(f) => f.clone(),
        None => {
            let ah = need(&input.alpha_h, "alpha_h or alpha_tilde_h")?;
            let af = need(&input.alpha_f, "alpha_f or alpha_tilde_h")?;
            notes.push(format!("alpha_tilde_h composed from alpha_h and alpha_f over t < {t_star}"));
            alpha_tilde_h(ah, af, *t_star)?
        }
    };
    let g2_at = compose(gamma2, &at)?;
    let head = product(
        &scale_arg(&g2_at, 2.0)?,
        &ComparisonFunction::l_exp((*t_star as f64).exp(), 1.0)?,
    )?;
    let beta_bar = oplus(beta, &head)?;
    let gamma1_bar = oplus_all(&[
        gamma1.clone(),
        scale_arg(&g2_at, 2.0 * *t_star as f64)?,
        compose(gamma2, gamma_w)?,
    ])?;
    let gamma2_bar = compose(gamma2, gamma_h)?;
    finish(
        CertForm::Sampled {
            beta_bar,
            gamma1_bar,
            gamma2_bar,
        },
        "thm1",
        input,
        notes,
    )
}

/// The same construction restricted to input sets on which pairs that are
/// not i-ISS are the only concern; the bound is not tightened.
pub fn cor1_certificate(input: &SynthesisInput) -> Result<Certificate> {
    let mut c = thm1_certificate(input)?;
    if let Some(p) = c.provenance.as_mut() {
        p.theorem = "cor1".into();
    }
    Ok(c)
}

/// Output condition from a sampled certificate:
/// `γ_w = α_h ∘ 2γ̄₁`, `γ_h = α_h ∘ 2γ̄₂`, `t* = T_β̄`.
pub fn thm2_condition(input: &SynthesisInput) -> Result<Certificate> {
    let base = need(&input.base, "base")?;
    let CertForm::Sampled {
        gamma1_bar, gamma2_bar, ..
    } = &base.form
    else {
        return Err(Error::Precondition(format!("base must be a sampled certificate, got {}", base.kind())));
    };
    let ah = need(&input.alpha_h, "alpha_h")?;
    let t_star = *need(&input.t_beta_bar, "t_beta_bar")?;
    if t_star == 0 {
        return Err(Error::InvalidParameter("T_beta_bar must be at least 1".into()));
    }
    finish(
        CertForm::Condition11 {
            gamma_w: compose(ah, &scale(2.0, gamma1_bar)?)?,
            gamma_h: compose(ah, &scale(2.0, gamma2_bar)?)?,
            t_star,
        },
        "thm2",
        input,
        Vec::new(),
    )
}

/// Sampled certificate from a sampled discounted one:
/// `β̄ = β̄_x`, `γ̄₁ = β̄_u(·,0)`, `γ̄₂ = β̄_y(·,0)`.
pub fn lemma1_project(cert: &Certificate) -> Result<Certificate> {
    let CertForm::SampledDiscounted {
        beta_x_bar,
        beta_u_bar,
        beta_y_bar,
    } = &cert.form
    else {
        return Err(Error::Precondition(format!("expected a sampled_discounted certificate, got {}", cert.kind())));
    };
    let out = Certificate {
        form: CertForm::Sampled {
            beta_bar: beta_x_bar.clone(),
            gamma1_bar: at_time(beta_u_bar, 0)?,
            gamma2_bar: at_time(beta_y_bar, 0)?,
        },
        provenance: Some(Provenance {
            theorem: "lemma1".into(),
            inputs: serde_json::to_value(cert).map_err(|e| Error::Internal(e.to_string()))?,
            notes: Vec::new(),
        }),
    };
    check_output(&out)?;
    Ok(out)
}

/// Intermediate functions of the discounted construction, exposed so their
/// normalization can be checked.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Thm3Parts {
    pub beta_tilde_x: ComparisonFunction,
    pub beta_tilde_u: ComparisonFunction,
    pub beta_tilde_y: ComparisonFunction,
    pub beta_w: ComparisonFunction,
    pub beta_h: ComparisonFunction,
    pub beta_y: ComparisonFunction,
}

/// Builds the intermediate functions of [`thm3_discounted`].
pub fn thm3_parts(input: &SynthesisInput) -> Result<(Thm3Parts, Vec<String>)> {
    let base = need(&input.base, "base")?;
    let CertForm::Sampled {
        beta_bar,
        gamma1_bar,
        gamma2_bar,
    } = &base.form
    else {
        return Err(Error::Precondition(format!("base must be a sampled certificate, got {}", base.kind())));
    };
    let cond = need(&input.cond, "cond")?;
    let CertForm::Condition11 { gamma_w, gamma_h, t_star } = &cond.form else {
        return Err(Error::Precondition(format!("cond must be a condition11 certificate, got {}", cond.kind())));
    };
    let t_star = *t_star;
    // σ(t* - 2) must exist
    if t_star < 2 {
        return Err(Error::Precondition(format!("t* = {t_star} is below 2")));
    }
    if let Some(dm) = input.delta_max {
        if t_star < dm {
            return Err(Error::Precondition(format!(
                "t* = {t_star} is below delta_max = {dm}; some t*-long window would hold no sample"
            )));
        }
    }
    let mut notes = Vec::new();
    let default_sigma = |slot: &Option<ComparisonFunction>, name: &str, notes: &mut Vec<String>| {
        slot.clone().unwrap_or_else(|| {
            notes.push(format!("{name} defaulted to exp(-r)"));
            unit_decay()
        })
    };
    let sigma = default_sigma(&input.sigma, "sigma", &mut notes);
    let sigma_u = default_sigma(&input.sigma_u, "sigma_u", &mut notes);
    let sigma_y = default_sigma(&input.sigma_y, "sigma_y", &mut notes);
    let beta_y = match &input.beta_y {
        Some(b) => b.clone(),
        None => {
            notes.push("beta_y defaulted to gamma2_bar(s)*exp(-r)".into());
            product(gamma2_bar, &unit_decay())?
        }
    };
    let late = normalized(&sigma, 2 * t_star - 1)?;
    Ok((
        Thm3Parts {
            beta_tilde_x: beta_bar.clone(),
            beta_tilde_u: product(gamma1_bar, &normalized(&sigma_u, t_star - 2)?)?,
            beta_tilde_y: product(gamma2_bar, &normalized(&sigma_y, t_star - 2)?)?,
            beta_w: product(gamma_w, &late)?,
            beta_h: product(gamma_h, &late)?,
            beta_y,
        },
        notes,
    ))
}

/// Sampled discounted certificate from a sampled certificate and the output
/// condition. With `β_y⁰ = β_y(·,0)`:
///
/// * `β̄_x = β̃_x ⊕ β_y⁰∘α_h∘β̃_x`
/// * `β̄_u = β_y⁰∘β_w ⊕ β̃_u ⊕ β_y⁰∘α_h∘β̃_u`
/// * `β̄_y = β_y⁰∘β_h ⊕ β̃_y ⊕ β_y⁰∘α_h∘β̃_y`
pub fn thm3_discounted(input: &SynthesisInput) -> Result<Certificate> {
    let ah = need(&input.alpha_h, "alpha_h")?;
    let (p, notes) = thm3_parts(input)?;
    let by0 = at_time(&p.beta_y, 0)?;
    let by0_ah = compose(&by0, ah)?;
    let beta_x_bar = oplus(&p.beta_tilde_x, &compose_kl(&by0_ah, &p.beta_tilde_x)?)?;
    let beta_u_bar = oplus_all(&[
        compose_kl(&by0, &p.beta_w)?,
        p.beta_tilde_u.clone(),
        compose_kl(&by0_ah, &p.beta_tilde_u)?,
    ])?;
    let beta_y_bar = oplus_all(&[
        compose_kl(&by0, &p.beta_h)?,
        p.beta_tilde_y.clone(),
        compose_kl(&by0_ah, &p.beta_tilde_y)?,
    ])?;
    finish(
        CertForm::SampledDiscounted {
            beta_x_bar,
            beta_u_bar,
            beta_y_bar,
        },
        "thm3",
        input,
        notes,
    )
}

/// Intermediate functions of [`thm4_discounted`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Thm4Parts {
    pub beta1: ComparisonFunction,
    pub beta2: ComparisonFunction,
    pub sontag: SontagPair,
    /// `α₁⁻¹ ∘ α₂`.
    pub rho: ComparisonFunction,
}

pub fn thm4_parts(input: &SynthesisInput) -> Result<Thm4Parts> {
    let base = need(&input.base, "base")?;
    let CertForm::Sampled {
        beta_bar,
        gamma1_bar,
        gamma2_bar,
    } = &base.form
    else {
        return Err(Error::Precondition(format!("base must be a sampled certificate, got {}", base.kind())));
    };
    let t = *need(&input.t_beta_bar, "t_beta_bar")?;
    if t == 0 {
        return Err(Error::InvalidParameter("T_beta_bar must be at least 1".into()));
    }
    let sontag = match &input.sontag {
        Some(p) => p.clone(),
        None => sontag_factorize(beta_bar)?,
    };
    let rho = compose(&invert(&sontag.alpha1)?, &sontag.alpha2)?;
    // the construction needs ρ ≥ id
    let grid = EvalGrid::default();
    if let Some(&s) = grid.s.iter().find(|&&s| rho.k(s) < s * (1.0 - 1e-12)) {
        return Err(Error::Precondition(format!(
            "alpha1^-1(alpha2(s)) = {} < s at s = {s}",
            rho.k(s)
        )));
    }
    let e = ComparisonFunction::l_exp(((2 * t - 1) as f64).exp(), 1.0)?;
    Ok(Thm4Parts {
        beta1: product(gamma1_bar, &e)?,
        beta2: product(gamma2_bar, &e)?,
        sontag,
        rho,
    })
}

/// Sampled discounted certificate from a sampled certificate via the
/// Sontag factorization of `β̄`, with `E(r) = e^{-r}/e^{-(2T_β̄-1)}`:
///
/// * `β̄_y(s,r) = α₁⁻¹(α₂(γ̄₂(s)·E(r)))`
/// * `β̄_u(s,r) = α₁⁻¹(α₂(γ̄₁(s)·E(r))) ⊕ γ̄₁(s)·σ₁(r)`
/// * `β̄_x = β̄`
pub fn thm4_discounted(input: &SynthesisInput) -> Result<Certificate> {
    let parts = thm4_parts(input)?;
    let base = need(&input.base, "base")?;
    let CertForm::Sampled {
        beta_bar, gamma1_bar, ..
    } = &base.form
    else {
        unreachable!("checked in thm4_parts");
    };
    let mut notes = Vec::new();
    let sigma_1 = input.sigma_1.clone().unwrap_or_else(|| {
        notes.push("sigma_1 defaulted to exp(-r)".into());
        unit_decay()
    });
    let beta_u_bar = oplus(&compose_kl(&parts.rho, &parts.beta1)?, &product(gamma1_bar, &sigma_1)?)?;
    let beta_y_bar = compose_kl(&parts.rho, &parts.beta2)?;
    finish(
        CertForm::SampledDiscounted {
            beta_x_bar: beta_bar.clone(),
            beta_u_bar,
            beta_y_bar,
        },
        "thm4",
        input,
        notes,
    )
}

/// Class report of a single function on the default grid, for callers that
/// want to display it.
pub fn class_status(f: &ComparisonFunction) -> CheckStatus {
    verify_class(f, &EvalGrid::default()).verdict
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::compfn::ComparisonFunction as Cf;

    fn id() -> Cf {
        Cf::identity()
    }

    fn cond(gw: Cf, gh: Cf, t: u64) -> Certificate {
        CertForm::Condition11 {
            gamma_w: gw,
            gamma_h: gh,
            t_star: t,
        }
        .into()
    }

    fn sampled(b: Cf, g1: Cf, g2: Cf) -> Certificate {
        CertForm::Sampled {
            beta_bar: b,
            gamma1_bar: g1,
            gamma2_bar: g2,
        }
        .into()
    }

    fn slots(c: &Certificate) -> Vec<&Cf> {
        c.slots().into_iter().map(|s| s.1).collect()
    }

    #[test]
    fn thm1_examples() {
        let input = SynthesisInput {
            base: Some(
                CertForm::Ioss {
                    beta: Cf::kl_exp(2.0, 1.0, 0.1).unwrap(),
                    gamma1: id(),
                    gamma2: id(),
                }
                .into(),
            ),
            cond: Some(cond(id(), id(), 3)),
            alpha_tilde_h: Some(id()),
            ..Default::default()
        };
        let c = thm1_certificate(&input).unwrap();
        let s = slots(&c);
        let e3 = 3f64.exp();
        assert!((s[0].kl(1.0, 0.0) - 2.0 * e3).abs() < 1e-12 * e3);
        assert!((s[0].kl(1.0, 0.0) - 40.171).abs() < 1e-3);
        assert!((s[0].kl(1.0, 3.0) - 2.0).abs() < 1e-14);
        assert_eq!(s[1].k(1.0), 6.0);
        assert_eq!(s[2].k(2.5), 2.5);
        assert_eq!(c.provenance.as_ref().unwrap().theorem, "thm1");
    }

    #[test]
    fn thm1_dominates_base() {
        let beta = Cf::kl_exp(1.5, 1.0, 0.4).unwrap();
        let g2 = Cf::linear(3.0).unwrap();
        let at = Cf::linear(1.2).unwrap();
        let input = SynthesisInput {
            base: Some(
                CertForm::Ioss {
                    beta: beta.clone(),
                    gamma1: id(),
                    gamma2: g2.clone(),
                }
                .into(),
            ),
            cond: Some(cond(id(), id(), 4)),
            alpha_tilde_h: Some(at.clone()),
            ..Default::default()
        };
        let c = thm1_certificate(&input).unwrap();
        let bb = slots(&c)[0].clone();
        let grid = EvalGrid::default();
        for &s in &grid.s {
            for &t in &grid.t {
                let t = t as f64;
                assert!(bb.kl(s, t) >= beta.kl(s, t));
                if t < 4.0 {
                    assert!(bb.kl(s, t) >= beta.kl(s, t).max(g2.k(at.k(2.0 * s))));
                }
            }
        }
    }

    #[test]
    fn alpha_tilde_composition() {
        let at = alpha_tilde_h(&id(), &Cf::linear(2.0).unwrap(), 3).unwrap();
        assert_eq!(at.k(1.0), 4.0);
        let at = alpha_tilde_h(&id(), &Cf::linear(0.5).unwrap(), 3).unwrap();
        assert_eq!(at.k(1.0), 1.0);
        assert!(alpha_tilde_h(&id(), &Cf::power(1.0, 0.5).unwrap(), 3).is_err());
    }

    #[test]
    fn missing_slots() {
        assert!(matches!(thm1_certificate(&SynthesisInput::default()), Err(Error::MissingInput(_))));
        let input = SynthesisInput {
            base: Some(sampled(Cf::kl_exp(1.0, 1.0, 1.0).unwrap(), id(), id())),
            ..Default::default()
        };
        assert!(matches!(thm2_condition(&input), Err(Error::MissingInput(_))));
    }

    #[test]
    fn thm2_examples() {
        let input = SynthesisInput {
            base: Some(sampled(Cf::kl_exp(1.0, 1.0, 1.0).unwrap(), Cf::linear(2.0).unwrap(), id())),
            alpha_h: Some(id()),
            t_beta_bar: Some(1),
            ..Default::default()
        };
        let c = thm2_condition(&input).unwrap();
        let CertForm::Condition11 { gamma_w, gamma_h, t_star } = &c.form else {
            panic!()
        };
        assert_eq!(gamma_w.k(1.0), 4.0);
        assert_eq!(gamma_h.k(1.0), 2.0);
        assert_eq!(gamma_h.k(0.0), 0.0);
        assert_eq!(*t_star, 1);
    }

    #[test]
    fn lemma1_examples() {
        let bx = Cf::kl_exp(2.0, 1.0, 0.3).unwrap();
        let c: Certificate = CertForm::SampledDiscounted {
            beta_x_bar: bx.clone(),
            beta_u_bar: Cf::kl_exp(3.0, 1.0, 0.2).unwrap(),
            beta_y_bar: Cf::kl_exp(1.0, 1.0, 1.0).unwrap(),
        }
        .into();
        let p = lemma1_project(&c).unwrap();
        let s = slots(&p);
        assert_eq!(s[0].kl(1.0, 5.0), bx.kl(1.0, 5.0));
        assert_eq!(s[1].k(1.0), 3.0);
        assert_eq!(s[1].k(2.0), 6.0);
        assert_eq!(s[2].k(1.0), 1.0);
    }

    fn thm3_input(t_star: u64) -> SynthesisInput {
        SynthesisInput {
            base: Some(sampled(Cf::kl_exp(2.0, 1.0, 0.1).unwrap(), id(), id())),
            cond: Some(cond(id(), id(), t_star)),
            alpha_h: Some(id()),
            ..Default::default()
        }
    }

    #[test]
    fn thm3_examples() {
        let (p, notes) = thm3_parts(&thm3_input(4)).unwrap();
        assert!((p.beta_tilde_u.kl(1.0, 0.0) - 2f64.exp()).abs() < 1e-12);
        assert!(notes.iter().any(|n| n.contains("beta_y")));
        let (p, _) = thm3_parts(&thm3_input(2)).unwrap();
        assert!((p.beta_w.kl(1.0, 0.0) - 3f64.exp()).abs() < 1e-12);
        let grid = EvalGrid::default();
        for t_star in [2u64, 3, 7] {
            let (p, _) = thm3_parts(&thm3_input(t_star)).unwrap();
            for &s in &grid.s {
                assert_eq!(p.beta_tilde_u.kl(s, (t_star - 2) as f64), s);
                let bw = p.beta_w.kl(s, (2 * t_star - 1) as f64);
                assert!((bw - s).abs() <= 1e-15 * s);
            }
        }
        let c = thm3_discounted(&thm3_input(3)).unwrap();
        assert_eq!(c.kind(), "sampled_discounted");
    }

    #[test]
    fn thm3_preconditions() {
        assert!(matches!(thm3_parts(&thm3_input(1)), Err(Error::Precondition(_))));
        let mut input = thm3_input(3);
        input.delta_max = Some(4);
        assert!(matches!(thm3_parts(&input), Err(Error::Precondition(_))));
    }

    #[test]
    fn thm4_examples() {
        let input = SynthesisInput {
            base: Some(sampled(Cf::kl_exp(2.0, 1.0, 0.5).unwrap(), id(), id())),
            t_beta_bar: Some(1),
            ..Default::default()
        };
        let c = thm4_discounted(&input).unwrap();
        let s = slots(&c);
        assert!((s[2].kl(1.0, 1.0) - 2.0).abs() < 1e-12);
        let parts = thm4_parts(&input).unwrap();
        assert!((parts.beta1.kl(1.0, 0.0) - 1f64.exp()).abs() < 1e-12);
        let grid = EvalGrid::default();
        for &s in &grid.s {
            assert!(parts.rho.k(s) >= s);
            assert!((parts.beta1.kl(s, 1.0) - s).abs() <= 1e-15 * s);
        }
    }

    #[test]
    fn thm4_rejects_contracting_rho() {
        let input = SynthesisInput {
            base: Some(sampled(Cf::kl_exp(0.5, 1.0, 0.5).unwrap(), id(), id())),
            t_beta_bar: Some(1),
            ..Default::default()
        };
        assert!(matches!(thm4_discounted(&input), Err(Error::Precondition(_))));
    }
}
