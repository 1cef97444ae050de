use serde::Serialize;

use super::margin::{AnalysisConstants, MarginSpec};
use crate::error::{invalid, Error, Result};
use crate::metric::{trials, DistanceOracle, TrialId};
use crate::router::RoutingTree;
use crate::scalar::Scalar;

/// Trials whose `zeta c^{d(t)}` ball holds at most one action among
/// trials outside the margin.
pub fn compute_cts<F, D>(oracle: &D, tree: &RoutingTree, spec: &MarginSpec, consts: &AnalysisConstants<F>) -> Vec<bool>
where
    F: Scalar,
    D: DistanceOracle<F> + ?Sized,
{
    trials(tree.len())
        .map(|t| {
            let radius = consts.ball(tree.depth(t));
            let mut seen: Option<usize> = None;
            for s in spec.outside() {
                if oracle.dist(s, t) <= radius {
                    match seen {
                        None => seen = Some(spec.y(s)),
                        Some(a) if a != spec.y(s) => return false,
                        Some(_) => {}
                    }
                }
            }
            true
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct BoundarySets {
    pub b: Vec<TrialId>,
    pub n_set: Vec<TrialId>,
    /// `Q(t)` for each `t` in `n_set`, in the same order.
    pub q: Vec<(TrialId, Vec<TrialId>)>,
}

impl BoundarySets {
    pub fn in_b(&self, t: TrialId) -> bool {
        self.b.binary_search(&t).is_ok()
    }

    pub fn in_n(&self, t: TrialId) -> bool {
        self.n_set.binary_search(&t).is_ok()
    }
}

pub fn compute_boundary_sets<F, D>(oracle: &D, tree: &RoutingTree, cts: &[bool], nu: F) -> BoundarySets
where
    F: Scalar,
    D: DistanceOracle<F> + ?Sized,
{
    let two_nu = F::lit(2.0) * nu;
    let b: Vec<TrialId> = trials(tree.len())
        .filter(|&t| {
            let edge = cts[t.idx()] && tree.parent(t).is_some_and(|p| !cts[p.idx()]);
            let leaf = tree.is_leaf(t) && !cts[t.idx()];
            edge || leaf
        })
        .collect();
    let scale = |t: TrialId| F::half_pow(tree.depth(t));
    let n_set: Vec<TrialId> = b
        .iter()
        .copied()
        .filter(|&t| {
            !b.iter().any(|&s| {
                tree.depth(s) > tree.depth(t) && oracle.dist(s, t) <= (scale(t) - scale(s)) / two_nu
            })
        })
        .collect();
    let rest: Vec<TrialId> = b.iter().copied().filter(|t| n_set.binary_search(t).is_err()).collect();
    let q = n_set
        .iter()
        .map(|&t| {
            let members = rest.iter().copied().filter(|&s| oracle.dist(s, t) <= scale(s) / two_nu).collect();
            (t, members)
        })
        .collect();
    BoundarySets { b, n_set, q }
}

/// Which rule of the construction assigned a trial's action.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum HbarCase {
    /// Outside CTS with no CTS child: inherit from the parent (action 0 at the root).
    Inherit,
    /// Outside CTS with a CTS child: action of the smallest nearby trial outside the margin.
    Anchor,
    /// In CTS with nobody outside the margin nearby: inherit from the parent.
    Carry,
    /// In CTS with a nearby trial outside the margin: its (unique) action.
    Local,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct Hbar {
    pub actions: Vec<usize>,
    pub cases: Vec<HbarCase>,
}

pub fn build_hbar<F, D>(
    oracle: &D,
    tree: &RoutingTree,
    cts: &[bool],
    spec: &MarginSpec,
    consts: &AnalysisConstants<F>,
) -> Result<Hbar>
where
    F: Scalar,
    D: DistanceOracle<F> + ?Sized,
{
    let n = tree.len();
    if cts.len() != n || spec.trials() != n {
        return Err(invalid("tree, CTS and margin spec differ in size"));
    }
    let mut actions: Vec<usize> = Vec::with_capacity(n);
    let mut cases = Vec::with_capacity(n);
    for t in trials(n) {
        let radius = consts.ball(tree.depth(t));
        let near = spec.outside().find(|&r| oracle.dist(r, t) <= radius);
        let parent_action = tree.parent(t).map(|p| actions[p.idx()]);
        let (a, case) = if !cts[t.idx()] {
            if tree.children(t).iter().any(|s| cts[s.idx()]) {
                let r = near.ok_or(Error::ConstructionGap(t))?;
                (spec.y(r), HbarCase::Anchor)
            } else {
                (parent_action.unwrap_or(0), HbarCase::Inherit)
            }
        } else {
            match near {
                Some(r) => (spec.y(r), HbarCase::Local),
                None => (parent_action.ok_or(Error::ConstructionGap(t))?, HbarCase::Carry),
            }
        };
        actions.push(a);
        cases.push(case);
    }
    Ok(Hbar { actions, cases })
}
