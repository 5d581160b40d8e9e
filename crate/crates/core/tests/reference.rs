//! The incremental bound evaluation against a quadratic-time recomputation.

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sampled_ioss::certify::{check_bound, CertForm, Certificate};
use sampled_ioss::compfn::{oplus, ComparisonFunction as Cf};
use sampled_ioss::sampling::{materialize, SamplingScheme, SamplingSet};
use sampled_ioss::sysmodel::{simulate_pair, InputSignal, System, TrajectoryPair};

const HORIZON: usize = 60;

fn rhs_direct(pair: &TrajectoryPair, cert: &Certificate, k: Option<&SamplingSet>, t: usize) -> f64 {
    let dx0 = pair.dx[0];
    let sampled = |tau: usize| k.is_none_or(|k| k.contains(tau as u64));
    match &cert.form {
        CertForm::Ioss { beta, gamma1, gamma2 }
        | CertForm::Sampled {
            beta_bar: beta,
            gamma1_bar: gamma1,
            gamma2_bar: gamma2,
        } => {
            let mut r = beta.kl(dx0, t as f64);
            let sw = (0..t).map(|tau| pair.dw[tau]).fold(None, |m: Option<f64>, v| Some(m.map_or(v, |m| m.max(v))));
            let sy = (0..t)
                .filter(|&tau| sampled(tau))
                .map(|tau| pair.dy[tau])
                .fold(None, |m: Option<f64>, v| Some(m.map_or(v, |m| m.max(v))));
            if let Some(v) = sw {
                r = r.max(gamma1.k(v));
            }
            if let Some(v) = sy {
                r = r.max(gamma2.k(v));
            }
            r
        }
        CertForm::Discounted { beta_x, beta_u, beta_y }
        | CertForm::SampledDiscounted {
            beta_x_bar: beta_x,
            beta_u_bar: beta_u,
            beta_y_bar: beta_y,
        } => {
            let mut r = beta_x.kl(dx0, t as f64);
            for tau in 0..t {
                let age = (t - tau - 1) as f64;
                r = r.max(beta_u.kl(pair.dw[tau], age));
                if sampled(tau) {
                    r = r.max(beta_y.kl(pair.dy[tau], age));
                }
            }
            r
        }
        _ => unreachable!(),
    }
}

fn systems() -> Vec<System> {
    let a = DMatrix::from_row_slice(2, 2, &[0.9, 0.4, -0.4, 0.9]);
    let b = DMatrix::from_row_slice(2, 1, &[1.0, 0.5]);
    let c = DMatrix::from_row_slice(1, 2, &[1.0, 0.0]);
    vec![
        System::contraction(),
        System::scalar_unstable_input(1.05),
        System::linear("spiral", a, b, c).unwrap(),
        System::parse("sat", "x1' = 0.8*x1 + sin(w1); y1 = x1 + 0.1*x1*x1").unwrap(),
    ]
}

fn certificates() -> Vec<Certificate> {
    let beta = oplus(&Cf::kl_exp(1.5, 1.0, 0.2).unwrap(), &Cf::kl_exp(0.7, 2.0, 0.05).unwrap()).unwrap();
    let g1 = Cf::power(1.3, 0.5).unwrap();
    let g2 = Cf::linear(2.0).unwrap();
    let bu = Cf::kl_exp(2.0, 1.0, 0.3).unwrap();
    let by = oplus(&Cf::kl_exp(3.0, 1.0, 0.1).unwrap(), &Cf::kl_exp(1.0, 0.5, 0.8).unwrap()).unwrap();
    vec![
        CertForm::Ioss {
            beta: beta.clone(),
            gamma1: g1.clone(),
            gamma2: g2.clone(),
        }
        .into(),
        CertForm::Sampled {
            beta_bar: beta.clone(),
            gamma1_bar: g1,
            gamma2_bar: g2,
        }
        .into(),
        CertForm::Discounted {
            beta_x: beta.clone(),
            beta_u: bu.clone(),
            beta_y: by.clone(),
        }
        .into(),
        CertForm::SampledDiscounted {
            beta_x_bar: beta,
            beta_u_bar: bu,
            beta_y_bar: by,
        }
        .into(),
    ]
}

fn random_pair(sys: &System, rng: &mut ChaCha8Rng) -> TrajectoryPair {
    let x01: Vec<f64> = (0..sys.n).map(|_| rng.random_range(-2.0..2.0)).collect();
    let x02: Vec<f64> = (0..sys.n).map(|_| rng.random_range(-2.0..2.0)).collect();
    let mut seq = || InputSignal::sequence((0..HORIZON).map(|_| (0..sys.q).map(|_| rng.random_range(-0.3..0.3)).collect()).collect());
    let (w1, w2) = (seq(), seq());
    simulate_pair(sys, &x01, &x02, &w1, &w2, HORIZON).unwrap()
}

#[test]
fn incremental_matches_direct_evaluation() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let systems = systems();
    let schemes = [
        SamplingScheme::periodic(3),
        SamplingScheme::BoundedGapRandom { delta_max: 6, seed: 4 },
        SamplingScheme::explicit(vec![1, 4, 2], true),
    ];
    for cert in certificates() {
        for trial in 0..50 {
            let sys = &systems[trial % systems.len()];
            let pair = random_pair(sys, &mut rng);
            let k = if cert.is_sampled() {
                let scheme = &schemes[trial % schemes.len()];
                Some(materialize(scheme, 1 + (trial as u64 % 3), HORIZON as u64).unwrap())
            } else {
                None
            };
            let res = check_bound(&pair, &cert, k.as_ref(), HORIZON).unwrap();
            assert_eq!(res.margins.len(), HORIZON + 1);
            for row in &res.margins {
                let direct = rhs_direct(&pair, &cert, k.as_ref(), row.t);
                assert!(
                    (row.rhs - direct).abs() <= 1e-12 * direct.abs().max(1.0),
                    "{} trial {trial} t {}: {} vs {direct}",
                    cert.kind(),
                    row.t,
                    row.rhs
                );
                assert_eq!(row.lhs, pair.dx[row.t]);
            }
        }
    }
}
