use serde::Serialize;

use crate::error::{invalid, Error, Result};
use crate::metric::{trials, DistanceOracle, TrialId};
use crate::scalar::Scalar;

/// Largest instance handled by the exact search.
pub const EXACT_PACKING_LIMIT: usize = 22;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum PackingMode {
    Exact,
    Greedy,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct Packing {
    pub size: usize,
    pub members: Vec<TrialId>,
    /// Greedy results are only lower bounds on the packing number.
    pub greedy: bool,
}

/// Whether `s` and `t` may both belong to a packing.
pub fn compatible<F: Scalar, D: DistanceOracle<F> + ?Sized>(
    oracle: &D,
    delta_m: &[F],
    omega: F,
    s: TrialId,
    t: TrialId,
) -> bool {
    oracle.dist(s, t) > omega * delta_m[s.idx()].min(delta_m[t.idx()])
}

/// Maximum set with pairwise `dist(s,t) > omega min(delta_m(s), delta_m(t))`.
pub fn packing_number<F: Scalar, D: DistanceOracle<F> + ?Sized>(
    oracle: &D,
    delta_m: &[F],
    omega: F,
    mode: PackingMode,
) -> Result<Packing> {
    let n = oracle.num_trials();
    if delta_m.len() != n {
        return Err(invalid("delta_m must have one entry per trial"));
    }
    match mode {
        PackingMode::Greedy => {
            let mut order: Vec<TrialId> = trials(n).collect();
            order.sort_by(|a, b| delta_m[b.idx()].partial_cmp(&delta_m[a.idx()]).unwrap().then(a.cmp(b)));
            let mut members: Vec<TrialId> = Vec::new();
            for t in order {
                if members.iter().all(|&s| compatible(oracle, delta_m, omega, s, t)) {
                    members.push(t);
                }
            }
            members.sort();
            Ok(Packing { size: members.len(), members, greedy: true })
        }
        PackingMode::Exact => {
            if n > EXACT_PACKING_LIMIT {
                return Err(Error::TooLargeForExact { trials: n, limit: EXACT_PACKING_LIMIT });
            }
            let mut allowed = vec![0u32; n];
            for s in trials(n) {
                for t in trials(n) {
                    if s != t && compatible(oracle, delta_m, omega, s, t) {
                        allowed[s.idx()] |= 1 << t.idx();
                    }
                }
            }
            let mut best = 0u32;
            branch(&allowed, (1u32 << n) - 1, 0, &mut best);
            let members: Vec<TrialId> = (0..n).filter(|i| best >> i & 1 == 1).map(TrialId::from_idx).collect();
            Ok(Packing { size: members.len(), members, greedy: false })
        }
    }
}

fn branch(allowed: &[u32], candidates: u32, chosen: u32, best: &mut u32) {
    if candidates == 0 {
        if chosen.count_ones() > best.count_ones() {
            *best = chosen;
        }
        return;
    }
    if chosen.count_ones() + candidates.count_ones() <= best.count_ones() {
        return;
    }
    let v = candidates.trailing_zeros() as usize;
    let bit = 1u32 << v;
    branch(allowed, candidates & allowed[v] & !bit, chosen | bit, best);
    branch(allowed, candidates & !bit, chosen, best);
}
