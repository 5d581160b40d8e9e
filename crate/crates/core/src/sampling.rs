//! Sampling schemes and the time sets `K_i` they generate.
//!
//! A scheme is a gap sequence `δ₁, δ₂, …` (1-indexed). The set `K_i` starts at
//! `t₁ⁱ = δ_i` and continues with `t_jⁱ = t_{j-1}ⁱ + δ_{i+j-1}`. Random schemes
//! use a counter-based generator keyed by `(seed, index)`, so any gap can be
//! computed without generating its predecessors.

use nalgebra::DMatrix;
use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SamplingScheme {
    /// Constant gap `p`; `offset`, when given, replaces the first gap.
    Periodic {
        p: u64,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        offset: Option<u64>,
    },
    /// Independent gaps uniform on `1..=delta_max`.
    BoundedGapRandom { delta_max: u64, seed: u64 },
    /// `n` distinct instants in each window `kT+1 ..= (k+1)T`.
    NPerWindow { n: u64, window: u64, seed: u64 },
    /// A fixed gap list, repeated cyclically or, if not cyclic, continued
    /// with its last gap.
    Explicit {
        gaps: Vec<u64>,
        #[serde(default = "default_true")]
        cyclic: bool,
        /// Declared gap bound; derived from the list when absent.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        delta_max: Option<u64>,
    },
}

fn default_true() -> bool {
    true
}

/// SplitMix64 finalizer.
fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn prf(seed: u64, index: u64) -> u64 {
    mix(seed ^ mix(index))
}

impl SamplingScheme {
    pub fn periodic(p: u64) -> Self {
        SamplingScheme::Periodic { p, offset: None }
    }

    pub fn explicit(gaps: Vec<u64>, cyclic: bool) -> Self {
        SamplingScheme::Explicit {
            gaps,
            cyclic,
            delta_max: None,
        }
    }

    /// Structural check: the generated set must be infinite.
    pub fn check(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidParameter(m.to_string()));
        match self {
            SamplingScheme::Periodic { p, .. } if *p == 0 => bad("periodic scheme needs p >= 1"),
            SamplingScheme::BoundedGapRandom { delta_max, .. } if *delta_max == 0 => {
                bad("bounded_gap_random needs delta_max >= 1")
            }
            SamplingScheme::NPerWindow { n, window, .. } if *n == 0 || *n > *window => {
                bad("n_per_window needs 1 <= n <= window")
            }
            SamplingScheme::Explicit { gaps, cyclic, .. } => {
                if gaps.is_empty() {
                    bad("explicit scheme needs at least one gap")
                } else if *cyclic && gaps.iter().all(|&g| g == 0) {
                    bad("cyclic gap list has no positive gap")
                } else if !*cyclic && *gaps.last().unwrap() == 0 {
                    bad("non-cyclic gap list must end with a positive gap")
                } else {
                    Ok(())
                }
            }
            _ => Ok(()),
        }
    }

    /// Bound on every gap: declared where the scheme carries one, derived
    /// otherwise. For `n_per_window` this is the conservative `2T - N`.
    pub fn delta_max(&self) -> u64 {
        match self {
            SamplingScheme::Periodic { p, offset } => (*p).max(offset.unwrap_or(0)),
            SamplingScheme::BoundedGapRandom { delta_max, .. } => *delta_max,
            SamplingScheme::NPerWindow { n, window, .. } => 2 * window - n,
            SamplingScheme::Explicit { gaps, delta_max, .. } => {
                delta_max.unwrap_or_else(|| gaps.iter().copied().max().unwrap_or(0))
            }
        }
    }

    /// Sorted offsets (in `1..=window`) of the samples in window `k`.
    fn window_offsets(n: u64, window: u64, seed: u64, k: u64) -> Vec<u64> {
        let mut rng = ChaCha8Rng::seed_from_u64(prf(seed, k));
        let mut offs: Vec<u64> = sample(&mut rng, window as usize, n as usize)
            .into_iter()
            .map(|o| o as u64 + 1)
            .collect();
        offs.sort_unstable();
        offs
    }

    /// Gap `δ_i`, `i >= 1`.
    pub fn gap(&self, i: u64) -> u64 {
        assert!(i >= 1, "gap indices start at 1");
        match self {
            SamplingScheme::Periodic { p, offset } => match offset {
                Some(o) if i == 1 => *o,
                _ => *p,
            },
            SamplingScheme::BoundedGapRandom { delta_max, seed } => 1 + prf(*seed, i) % delta_max,
            SamplingScheme::NPerWindow { n, window, seed } => {
                let time = |idx: u64| -> u64 {
                    if idx == 0 {
                        return 0;
                    }
                    let (k, pos) = ((idx - 1) / n, (idx - 1) % n);
                    k * window + Self::window_offsets(*n, *window, *seed, k)[pos as usize]
                };
                time(i) - time(i - 1)
            }
            SamplingScheme::Explicit { gaps, cyclic, .. } => {
                let idx = (i - 1) as usize;
                if *cyclic {
                    gaps[idx % gaps.len()]
                } else {
                    gaps[idx.min(gaps.len() - 1)]
                }
            }
        }
    }

    /// Gaps `δ_from ..= δ_to` in order.
    pub fn gaps(&self, from: u64, to: u64) -> Vec<u64> {
        if let SamplingScheme::NPerWindow { n, window, seed } = self {
            // avoid regenerating each window twice per gap
            let mut out = Vec::new();
            let mut cache: Option<(u64, Vec<u64>)> = None;
            let mut time = |idx: u64| -> u64 {
                if idx == 0 {
                    return 0;
                }
                let (k, pos) = ((idx - 1) / n, (idx - 1) % n);
                if cache.as_ref().map_or(true, |(ck, _)| *ck != k) {
                    cache = Some((k, Self::window_offsets(*n, *window, *seed, k)));
                }
                k * window + cache.as_ref().unwrap().1[pos as usize]
            };
            let mut prev = time(from - 1);
            for i in from..=to {
                let t = time(i);
                out.push(t - prev);
                prev = t;
            }
            return out;
        }
        (from..=to).map(|i| self.gap(i)).collect()
    }

    /// `t_jⁱ` as the raw sum `δ_i + … + δ_{i+j-1}`.
    pub fn time(&self, i: u64, j: u64) -> u64 {
        if j == 0 {
            return 0;
        }
        self.gaps(i, i + j - 1).iter().sum()
    }
}

/// The materialized set `K_i` up to a horizon.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SamplingSet {
    pub start: u64,
    pub horizon: u64,
    pub times: Vec<u64>,
}

impl SamplingSet {
    pub fn contains(&self, t: u64) -> bool {
        self.times.binary_search(&t).is_ok()
    }

    /// Indicator vector of length `len`: `mask[t]` is true iff `t ∈ K_i`.
    pub fn mask(&self, len: usize) -> Vec<bool> {
        let mut m = vec![false; len];
        for &t in &self.times {
            if (t as usize) < len {
                m[t as usize] = true;
            }
        }
        m
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("t\n");
        for t in &self.times {
            s.push_str(&format!("{t}\n"));
        }
        s
    }
}

/// All `t_jⁱ <= horizon`. Zero gaps would repeat an instant (or put one at
/// time 0); such duplicates are dropped with a warning.
pub fn materialize(scheme: &SamplingScheme, i: u64, horizon: u64) -> Result<SamplingSet> {
    scheme.check()?;
    if i == 0 {
        return Err(Error::Precondition("sampling sets are indexed from 1".into()));
    }
    let mut times = Vec::new();
    let mut t = 0u64;
    let mut m = i;
    let mut collapsed = 0usize;
    // gaps are fetched in chunks so window-based schemes stay cheap
    let chunk = 64;
    'outer: loop {
        for g in scheme.gaps(m, m + chunk - 1) {
            m += 1;
            t += g;
            if t > horizon {
                break 'outer;
            }
            if g == 0 {
                collapsed += 1;
                continue;
            }
            times.push(t);
        }
    }
    if collapsed > 0 {
        log::warn!("collapsed {collapsed} zero gap(s) while materializing K_{i}");
    }
    Ok(SamplingSet {
        start: i,
        horizon,
        times,
    })
}

/// Checks `t_k^{i+j} + t_jⁱ ∈ K_i` against the materialized set.
pub fn shift_check(scheme: &SamplingScheme, i: u64, j: u64, k: u64, horizon: u64) -> Result<bool> {
    if i == 0 || j == 0 || k == 0 {
        return Err(Error::Precondition(format!(
            "shift property needs positive indices, got i={i}, j={j}, k={k}"
        )));
    }
    scheme.check()?;
    let target = scheme.time(i + j, k) + scheme.time(i, j);
    if target > horizon {
        return Err(Error::HorizonTooShort(format!(
            "t_{k}^{} + t_{j}^{i} = {target} exceeds horizon {horizon}",
            i + j
        )));
    }
    Ok(materialize(scheme, i, horizon)?.contains(target))
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct GapViolation {
    pub index: u64,
    pub gap: u64,
    pub reason: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SchemeReport {
    pub delta_max: u64,
    pub probes: u64,
    pub min_gap: u64,
    pub max_gap: u64,
    pub mean_gap: f64,
    pub violations: Vec<GapViolation>,
}

impl SchemeReport {
    pub fn ok(&self) -> bool {
        self.violations.is_empty()
    }
}

/// Generates `probe_count` gaps and checks `1 <= δ_i <= delta_max`.
pub fn scheme_validate(scheme: &SamplingScheme, probe_count: u64) -> Result<SchemeReport> {
    scheme.check()?;
    if probe_count == 0 {
        return Err(Error::Precondition("probe_count must be at least 1".into()));
    }
    let dmax = scheme.delta_max();
    let gaps = scheme.gaps(1, probe_count);
    let mut violations = Vec::new();
    for (idx, &g) in gaps.iter().enumerate() {
        let reason = if g == 0 {
            "zero gap"
        } else if g > dmax {
            "exceeds delta_max"
        } else {
            continue;
        };
        violations.push(GapViolation {
            index: idx as u64 + 1,
            gap: g,
            reason: reason.into(),
        });
    }
    Ok(SchemeReport {
        delta_max: dmax,
        probes: probe_count,
        min_gap: *gaps.iter().min().unwrap(),
        max_gap: *gaps.iter().max().unwrap(),
        mean_gap: gaps.iter().sum::<u64>() as f64 / probe_count as f64,
        violations,
    })
}

/// Relative singular-value threshold used for rank decisions.
pub const RANK_TOL: f64 = 1e-9;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PeriodReport {
    pub pathological: Vec<u64>,
    /// Periods with full rank but smallest singular value within 10x of the
    /// rank threshold.
    pub marginal: Vec<u64>,
    pub p_max: u64,
    pub rank_tolerance: f64,
}

/// Singular values of the observability matrix of `(A, C)`, descending.
fn observability_singular_values(a: &DMatrix<f64>, c: &DMatrix<f64>) -> Vec<f64> {
    let n = a.nrows();
    let p = c.nrows();
    let mut obs = DMatrix::zeros(p * n, n);
    let mut row = c.clone();
    for k in 0..n {
        // scaling a block by a positive factor leaves the rank unchanged and
        // keeps fast-decaying powers from drowning in the threshold
        let norm = row.norm();
        let block = if norm > 0.0 { &row / norm } else { row.clone() };
        obs.view_mut((k * p, 0), (p, n)).copy_from(&block);
        row = &row * a;
    }
    let mut sv: Vec<f64> = obs.singular_values().iter().copied().collect();
    sv.sort_by(|x, y| y.total_cmp(x));
    sv
}

fn rank_from(sv: &[f64]) -> (usize, f64) {
    let smax = sv.first().copied().unwrap_or(0.0);
    let thr = RANK_TOL * smax;
    (sv.iter().filter(|&&s| s > thr).count(), thr)
}

/// Periods `p <= p_max` for which `(A^p, C)` loses observability.
pub fn pathological_periods(a: &DMatrix<f64>, c: &DMatrix<f64>, p_max: u64) -> Result<PeriodReport> {
    let n = a.nrows();
    if a.ncols() != n || c.ncols() != n || n == 0 {
        return Err(Error::Dimension(format!(
            "A is {}x{}, C is {}x{}",
            a.nrows(),
            a.ncols(),
            c.nrows(),
            c.ncols()
        )));
    }
    if p_max == 0 {
        return Err(Error::Precondition("p_max must be at least 1".into()));
    }
    let (rank, _) = rank_from(&observability_singular_values(a, c));
    if rank < n {
        return Err(Error::BaseRateUnobservable { rank, n });
    }
    let mut pathological = Vec::new();
    let mut marginal = Vec::new();
    let mut ap = a.clone();
    for p in 1..=p_max {
        let sv = observability_singular_values(&ap, c);
        let (rank, thr) = rank_from(&sv);
        if rank < n {
            pathological.push(p);
        } else if sv[n - 1] <= 10.0 * thr {
            marginal.push(p);
        }
        ap = &ap * a;
    }
    Ok(PeriodReport {
        pathological,
        marginal,
        p_max,
        rank_tolerance: RANK_TOL,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rotation() -> DMatrix<f64> {
        let r = std::f64::consts::FRAC_1_SQRT_2;
        DMatrix::from_row_slice(2, 2, &[r, r, -r, r])
    }

    #[test]
    fn materialize_examples() {
        let s = materialize(&SamplingScheme::periodic(4), 1, 12).unwrap();
        assert_eq!(s.times, vec![4, 8, 12]);
        let e = SamplingScheme::explicit(vec![2, 3, 1], true);
        assert_eq!(materialize(&e, 1, 10).unwrap().times, vec![2, 5, 6, 8]);
        // gaps 3,1,2,3,1: the horizon is inclusive, so 10 belongs to the set
        assert_eq!(materialize(&e, 2, 10).unwrap().times, vec![3, 4, 6, 9, 10]);
        assert_eq!(materialize(&e, 2, 9).unwrap().times, vec![3, 4, 6, 9]);
    }

    #[test]
    fn periodic_is_start_independent() {
        let s = SamplingScheme::periodic(3);
        for i in 1..6 {
            assert_eq!(materialize(&s, i, 20).unwrap().times, vec![3, 6, 9, 12, 15, 18]);
        }
    }

    #[test]
    fn offset_and_tail() {
        let s = SamplingScheme::Periodic { p: 4, offset: Some(1) };
        assert_eq!(materialize(&s, 1, 12).unwrap().times, vec![1, 5, 9]);
        assert_eq!(materialize(&s, 2, 12).unwrap().times, vec![4, 8, 12]);
        // counterexample-style schedule: irregular head, periodic tail
        let s = SamplingScheme::explicit(vec![1, 2, 4], false);
        assert_eq!(materialize(&s, 1, 16).unwrap().times, vec![1, 3, 7, 11, 15]);
        assert_eq!(materialize(&s, 3, 16).unwrap().times, vec![4, 8, 12, 16]);
    }

    #[test]
    fn zero_gaps_collapse() {
        let s = SamplingScheme::explicit(vec![0, 2, 0, 1], true);
        assert_eq!(materialize(&s, 1, 9).unwrap().times, vec![2, 3, 5, 6, 8, 9]);
        assert!(SamplingScheme::explicit(vec![0, 0], true).check().is_err());
        assert!(SamplingScheme::explicit(vec![2, 0], false).check().is_err());
    }

    #[test]
    fn shift_examples() {
        assert!(shift_check(&SamplingScheme::periodic(4), 1, 2, 1, 20).unwrap());
        let e = SamplingScheme::explicit(vec![2, 3, 1], true);
        assert_eq!(e.time(2, 1) + e.time(1, 1), 5);
        assert!(shift_check(&e, 1, 1, 1, 10).unwrap());
        assert!(matches!(shift_check(&e, 1, 0, 1, 10), Err(Error::Precondition(_))));
        assert!(matches!(shift_check(&e, 1, 3, 3, 5), Err(Error::HorizonTooShort(_))));
    }

    #[test]
    fn validate_examples() {
        let r = scheme_validate(&SamplingScheme::BoundedGapRandom { delta_max: 5, seed: 7 }, 1000).unwrap();
        assert!(r.ok());
        assert!(r.min_gap >= 1 && r.max_gap <= 5);
        let bad = SamplingScheme::Explicit {
            gaps: vec![2, 9, 1],
            cyclic: true,
            delta_max: Some(5),
        };
        let r = scheme_validate(&bad, 3).unwrap();
        assert_eq!(r.violations.len(), 1);
        assert_eq!(r.violations[0].gap, 9);
        let r = scheme_validate(&SamplingScheme::periodic(1), 50).unwrap();
        assert_eq!((r.min_gap, r.max_gap), (1, 1));
    }

    #[test]
    fn window_scheme_meets_quota() {
        let s = SamplingScheme::NPerWindow { n: 3, window: 10, seed: 11 };
        let set = materialize(&s, 1, 100).unwrap();
        for k in 0..10u64 {
            let count = set.times.iter().filter(|&&t| t > k * 10 && t <= (k + 1) * 10).count();
            assert_eq!(count, 3);
        }
        assert!(scheme_validate(&s, 500).unwrap().ok());
        assert_eq!(s.delta_max(), 17);
        // gap() and the chunked path agree
        let single: Vec<u64> = (5..40).map(|i| s.gap(i)).collect();
        assert_eq!(single, s.gaps(5, 39));
    }

    #[test]
    fn random_gaps_are_order_independent() {
        let s = SamplingScheme::BoundedGapRandom { delta_max: 25, seed: 3 };
        let forward: Vec<u64> = (1..100).map(|i| s.gap(i)).collect();
        let mut backward: Vec<u64> = (1..100).rev().map(|i| s.gap(i)).collect();
        backward.reverse();
        assert_eq!(forward, backward);
    }

    #[test]
    fn scheme_json() {
        let s: SamplingScheme = serde_json::from_str(r#"{"kind":"periodic","p":4}"#).unwrap();
        assert_eq!(s, SamplingScheme::periodic(4));
        let s: SamplingScheme = serde_json::from_str(r#"{"kind":"explicit","gaps":[2,3,1],"cyclic":true}"#).unwrap();
        assert_eq!(s, SamplingScheme::explicit(vec![2, 3, 1], true));
        let s: SamplingScheme = serde_json::from_str(r#"{"kind":"bounded_gap_random","delta_max":5,"seed":7}"#).unwrap();
        assert_eq!(s.delta_max(), 5);
        assert_eq!(serde_json::to_string(&SamplingScheme::periodic(4)).unwrap(), r#"{"kind":"periodic","p":4}"#);
    }

    #[test]
    fn rotation_periods() {
        let c = DMatrix::from_row_slice(1, 2, &[1.0, 0.0]);
        let r = pathological_periods(&rotation(), &c, 8).unwrap();
        assert_eq!(r.pathological, vec![4, 8]);
    }

    #[test]
    fn real_spectrum_has_no_pathological_period() {
        let a = DMatrix::from_row_slice(2, 2, &[0.5, 0.0, 0.0, 0.3]);
        let c = DMatrix::from_row_slice(1, 2, &[1.0, 1.0]);
        let r = pathological_periods(&a, &c, 20).unwrap();
        assert!(r.pathological.is_empty());
    }

    #[test]
    fn unobservable_base_rate_is_rejected() {
        let a = DMatrix::from_row_slice(2, 2, &[0.5, 0.0, 0.0, 0.3]);
        let c = DMatrix::from_row_slice(1, 2, &[1.0, 0.0]);
        assert!(matches!(
            pathological_periods(&a, &c, 4),
            Err(Error::BaseRateUnobservable { rank: 1, n: 2 })
        ));
    }
}
