//! Growth of the full-versus-sampled output maxima for a diverging pair.

use std::collections::BTreeMap;

use sampled_ioss::sampling::{materialize, SamplingScheme};
use sampled_ioss::sysmodel::{simulate_pair, InputSignal, LinearSpec, System};
use serde::{Deserialize, Serialize};

/// Horizons at which `R(T)` is summarized.
pub const CHECKPOINTS: [usize; 3] = [50, 100, 150];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Figure1Params {
    /// Spectral radius of the spiral.
    pub rho: f64,
    /// Rotation per step in degrees.
    pub angle_deg: f64,
    pub delta_max: u64,
    pub seed: u64,
    pub horizon: usize,
}

impl Default for Figure1Params {
    fn default() -> Self {
        Self {
            rho: 1.04,
            angle_deg: 25.0,
            delta_max: 25,
            seed: 7,
            horizon: 150,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Figure1Row {
    pub t: usize,
    pub dy: f64,
    pub sampled: bool,
    /// `None` until the first sample.
    pub r: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Figure1Summary {
    pub label: String,
    pub params: Figure1Params,
    pub samples: Vec<u64>,
    /// `R(T)` at each checkpoint within the horizon.
    pub r: BTreeMap<usize, Option<f64>>,
    /// `R(150) / R(50)` when both exist.
    pub growth: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Figure1Result {
    pub summary: Figure1Summary,
    pub rows: Vec<Figure1Row>,
}

impl Figure1Result {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("t,dy,sampled,r\n");
        for row in &self.rows {
            let r = row.r.map_or(String::new(), |r| format!("{r:?}"));
            s.push_str(&format!("{},{:?},{},{r}\n", row.t, row.dy, u8::from(row.sampled)));
        }
        s
    }

    pub fn r_at(&self, t: usize) -> Option<f64> {
        self.rows.get(t).and_then(|r| r.r)
    }
}

/// `x⁺ = ρ R(θ) x`, `y = x₁`.
pub fn spiral(rho: f64, angle_deg: f64) -> System {
    let (s, c) = angle_deg.to_radians().sin_cos();
    let spec = LinearSpec {
        a: vec![vec![rho * c, -rho * s], vec![rho * s, rho * c]],
        b: None,
        c: vec![vec![1.0, 0.0]],
    };
    System::from_linear_spec("spiral", &spec).expect("static dimensions")
}

pub fn run(p: &Figure1Params) -> sampled_ioss::Result<Figure1Result> {
    let sys = spiral(p.rho, p.angle_deg);
    let scheme = SamplingScheme::BoundedGapRandom {
        delta_max: p.delta_max,
        seed: p.seed,
    };
    let k = materialize(&scheme, 1, p.horizon as u64)?;
    let pair = simulate_pair(&sys, &[1.0, 0.0], &[0.0, 0.0], &InputSignal::Zero, &InputSignal::Zero, p.horizon)?;
    let mut full = 0.0f64;
    let mut sampled: Option<f64> = None;
    let mut rows = Vec::with_capacity(p.horizon + 1);
    for t in 0..=p.horizon {
        let dy = pair.dy[t];
        let in_k = k.contains(t as u64);
        full = full.max(dy);
        if in_k {
            sampled = Some(sampled.map_or(dy, |m| m.max(dy)));
        }
        rows.push(Figure1Row {
            t,
            dy,
            sampled: in_k,
            r: sampled.map(|m| full / m),
        });
    }
    let r: BTreeMap<usize, Option<f64>> = CHECKPOINTS
        .iter()
        .filter(|&&t| t <= p.horizon)
        .map(|&t| (t, rows[t].r))
        .collect();
    let growth = match (r.get(&50).copied().flatten(), r.get(&150).copied().flatten()) {
        (Some(a), Some(b)) => Some(b / a),
        _ => None,
    };
    let label = if p.rho > 1.0 { "figure-1-style" } else { "figure-1-style stable variant" };
    Ok(Figure1Result {
        summary: Figure1Summary {
            label: label.into(),
            params: p.clone(),
            samples: k.times,
            r,
            growth,
        },
        rows,
    })
}
