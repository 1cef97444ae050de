//! Hierarchical nearest-neighbour routing.
//!
//! Every trial gets a depth `d(t)`; trial 1 has depth 0. A new trial queries a
//! `nu`-nearest neighbour `nn_l` in each level `L_l = {s : d(s) = l}`, takes
//! the deepest level `l*` with `dist(nn_l, t) <= 2^{-l}` and becomes a child of
//! `nn_{l*}` at depth `l* + 1`. Level 0 is `{1}` and always qualifies because
//! the metric has diameter at most 1.

use serde::Serialize;

use crate::ann::{CoverTree, NeighborIndex};
use crate::error::{invalid, Error, Result};
use crate::metric::{trials, DistanceOracle, TrialId};
use crate::scalar::Scalar;

/// The routing constant `c`.
pub const C: f64 = 0.5;

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Placement<F> {
    /// The first trial.
    Root,
    Routed { parent: TrialId, depth: u32, dist: F },
    /// At distance 0 from an earlier trial; not added to the structure.
    Equivalent { rep: TrialId },
}

/// Outcome of routing one trial, with the diagnostics written per trial.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RouteInfo<F> {
    pub trial: TrialId,
    pub placement: Placement<F>,
    pub levels_probed: u32,
    pub distance_evals: u64,
}

#[derive(Serialize)]
struct DiagnosticLine {
    trial: TrialId,
    depth: Option<u32>,
    parent: Option<TrialId>,
    dist_to_parent: Option<f64>,
    levels_probed: u32,
    distance_evals: u64,
}

impl<F: Scalar> RouteInfo<F> {
    pub fn parent(&self) -> Option<TrialId> {
        match self.placement {
            Placement::Root => None,
            Placement::Routed { parent, .. } => Some(parent),
            Placement::Equivalent { rep } => Some(rep),
        }
    }

    pub fn depth(&self) -> Option<u32> {
        match self.placement {
            Placement::Root => Some(0),
            Placement::Routed { depth, .. } => Some(depth),
            Placement::Equivalent { .. } => None,
        }
    }

    /// One JSON object: `{trial, depth, parent, dist_to_parent, levels_probed, distance_evals}`.
    pub fn to_json_line(&self) -> String {
        let dist_to_parent = match self.placement {
            Placement::Routed { dist, .. } => Some(dist.to_f64_lossy()),
            Placement::Equivalent { .. } => Some(0.0),
            Placement::Root => None,
        };
        serde_json::to_string(&DiagnosticLine {
            trial: self.trial,
            depth: self.depth(),
            parent: self.parent(),
            dist_to_parent,
            levels_probed: self.levels_probed,
            distance_evals: self.distance_evals,
        })
        .expect("diagnostic line serializes")
    }
}

/// Sequential router state. Generic over the per-level index so the exact
/// [`crate::ann::LinearScan`] can stand in for the cover tree.
#[derive(Debug)]
pub struct HnnRouter<F: Scalar, I = CoverTree<F>> {
    nu: F,
    processed: usize,
    depth: Vec<Option<u32>>,
    parent: Vec<Option<TrialId>>,
    equivalent: Vec<Option<TrialId>>,
    children: Vec<Vec<TrialId>>,
    levels: Vec<I>,
}

impl<F: Scalar> HnnRouter<F> {
    pub fn new(nu: F) -> Result<Self> {
        Self::with_index(nu)
    }
}

impl<F: Scalar, I: NeighborIndex<F> + Default> HnnRouter<F, I> {
    pub fn with_index(nu: F) -> Result<Self> {
        if !(nu >= F::one() && nu.is_finite()) {
            return Err(invalid(format!("nu must be >= 1, got {nu}")));
        }
        Ok(HnnRouter {
            nu,
            processed: 0,
            depth: Vec::new(),
            parent: Vec::new(),
            equivalent: Vec::new(),
            children: Vec::new(),
            levels: Vec::new(),
        })
    }

    pub fn nu(&self) -> F {
        self.nu
    }

    pub fn processed(&self) -> usize {
        self.processed
    }

    /// Routes trial `t`; trials `1..t` must have been routed already.
    pub fn route<D: DistanceOracle<F> + ?Sized>(&mut self, oracle: &D, t: TrialId) -> Result<RouteInfo<F>> {
        if t.get() != self.processed + 1 {
            let missing = TrialId::new(self.processed + 1);
            if t.get() <= self.processed {
                return Err(invalid(format!("trial {t} was already routed")));
            }
            return Err(Error::UnroutedPredecessor { trial: t, missing });
        }
        let evals_before = self.total_evals();
        if self.processed == 0 {
            let mut root = I::default();
            root.insert(oracle, t)?;
            self.levels.push(root);
            self.record(Some(0), None, None);
            return Ok(RouteInfo { trial: t, placement: Placement::Root, levels_probed: 0, distance_evals: 0 });
        }

        let mut chosen = None;
        for (level, index) in self.levels.iter().enumerate() {
            let nn = index.query(oracle, t, self.nu)?;
            if nn.dist <= F::zero() {
                self.record(None, None, Some(nn.id));
                return Ok(RouteInfo {
                    trial: t,
                    placement: Placement::Equivalent { rep: nn.id },
                    levels_probed: level as u32 + 1,
                    distance_evals: self.total_evals() - evals_before,
                });
            }
            if level == 0 && nn.dist > F::one() {
                return Err(Error::DiameterViolation { trial: t, dist: nn.dist.to_f64_lossy() });
            }
            if nn.dist <= F::half_pow(level as u32) {
                chosen = Some((level, nn));
            }
        }
        let (level, nn) = chosen.expect("level 0 always qualifies");
        let levels_probed = self.levels.len() as u32;
        let depth = level as u32 + 1;
        if self.levels.len() <= depth as usize {
            self.levels.push(I::default());
        }
        self.levels[depth as usize].insert(oracle, t)?;
        self.children[nn.id.idx()].push(t);
        self.record(Some(depth), Some(nn.id), None);
        Ok(RouteInfo {
            trial: t,
            placement: Placement::Routed { parent: nn.id, depth, dist: nn.dist },
            levels_probed,
            distance_evals: self.total_evals() - evals_before,
        })
    }

    fn record(&mut self, depth: Option<u32>, parent: Option<TrialId>, eq: Option<TrialId>) {
        self.depth.push(depth);
        self.parent.push(parent);
        self.equivalent.push(eq);
        self.children.push(Vec::new());
        self.processed += 1;
    }

    fn total_evals(&self) -> u64 {
        self.levels.iter().map(|l| l.distance_evals()).sum()
    }

    pub fn distance_evals(&self) -> u64 {
        self.total_evals()
    }

    /// Maximum depth over routed trials.
    pub fn max_depth(&self) -> Option<u32> {
        self.depth.iter().flatten().copied().max()
    }

    pub fn depth(&self, t: TrialId) -> Option<u32> {
        self.depth.get(t.idx()).copied().flatten()
    }

    pub fn parent(&self, t: TrialId) -> Option<TrialId> {
        self.parent.get(t.idx()).copied().flatten()
    }

    pub fn children(&self, t: TrialId) -> &[TrialId] {
        &self.children[t.idx()]
    }

    pub fn equivalent_to(&self, t: TrialId) -> Option<TrialId> {
        self.equivalent.get(t.idx()).copied().flatten()
    }

    /// Members of level `l`, sorted.
    pub fn level_members(&self, level: u32) -> Vec<TrialId> {
        let mut out: Vec<TrialId> = trials(self.processed).filter(|t| self.depth(*t) == Some(level)).collect();
        out.sort();
        out
    }

    pub fn level_index(&self, level: u32) -> Option<&I> {
        self.levels.get(level as usize)
    }

    pub fn num_levels(&self) -> usize {
        self.levels.len()
    }

    /// Routing tree over all processed trials. Fails if some trial was merged
    /// into an earlier equivalent one.
    pub fn tree(&self) -> Result<RoutingTree> {
        if let Some(i) = self.equivalent.iter().position(Option::is_some) {
            return Err(invalid(format!("trial {} was merged and is not in the tree", i + 1)));
        }
        RoutingTree::new(self.parent.clone(), self.depth.iter().map(|d| d.unwrap()).collect())
    }
}

/// Rooted tree on trials `1..=T` with `parent[t]` earlier than `t`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RoutingTree {
    parent: Vec<Option<TrialId>>,
    depth: Vec<u32>,
    children: Vec<Vec<TrialId>>,
}

impl RoutingTree {
    /// Accepts any parent/depth tables as long as parents precede children;
    /// depth consistency is deliberately not enforced so corrupted trees can be audited.
    pub fn new(parent: Vec<Option<TrialId>>, depth: Vec<u32>) -> Result<Self> {
        if parent.len() != depth.len() || parent.is_empty() {
            return Err(invalid("parent and depth tables must be non-empty and aligned"));
        }
        let mut children = vec![Vec::new(); parent.len()];
        for (i, p) in parent.iter().enumerate() {
            match p {
                None if i == 0 => {}
                None => return Err(invalid(format!("trial {} has no parent", i + 1))),
                Some(p) if p.idx() >= i => {
                    return Err(invalid(format!("parent {p} of trial {} is not earlier", i + 1)))
                }
                Some(p) if i == 0 => return Err(invalid(format!("trial 1 cannot have parent {p}"))),
                Some(p) => children[p.idx()].push(TrialId::from_idx(i)),
            }
        }
        Ok(RoutingTree { parent, depth, children })
    }

    /// Tree from parents alone, depth = number of edges to trial 1.
    pub fn from_parents(parent: Vec<Option<TrialId>>) -> Result<Self> {
        let mut depth = vec![0u32; parent.len()];
        for i in 1..parent.len() {
            if let Some(p) = parent[i] {
                if p.idx() < i {
                    depth[i] = depth[p.idx()] + 1;
                }
            }
        }
        Self::new(parent, depth)
    }

    pub fn len(&self) -> usize {
        self.parent.len()
    }

    pub fn is_empty(&self) -> bool {
        self.parent.is_empty()
    }

    pub fn parent(&self, t: TrialId) -> Option<TrialId> {
        self.parent[t.idx()]
    }

    pub fn depth(&self, t: TrialId) -> u32 {
        self.depth[t.idx()]
    }

    pub fn children(&self, t: TrialId) -> &[TrialId] {
        &self.children[t.idx()]
    }

    pub fn max_depth(&self) -> u32 {
        self.depth.iter().copied().max().unwrap_or(0)
    }

    pub fn parents(&self) -> &[Option<TrialId>] {
        &self.parent
    }

    pub fn depths(&self) -> &[u32] {
        &self.depth
    }

    pub fn is_leaf(&self, t: TrialId) -> bool {
        self.children[t.idx()].is_empty()
    }

    /// `t` and all its ancestors, from `t` up to the root.
    pub fn ancestors(&self, t: TrialId) -> Vec<TrialId> {
        let mut out = vec![t];
        let mut cur = t;
        while let Some(p) = self.parent(cur) {
            out.push(p);
            cur = p;
        }
        out
    }

    /// `t` and all its descendants, in increasing id order.
    pub fn descendants(&self, t: TrialId) -> Vec<TrialId> {
        let mut out = vec![t];
        let mut stack = vec![t];
        while let Some(u) = stack.pop() {
            for &c in self.children(u) {
                out.push(c);
                stack.push(c);
            }
        }
        out.sort();
        out
    }

    /// Whether `a` is an ancestor of `b` (every trial is its own ancestor).
    pub fn is_ancestor(&self, a: TrialId, b: TrialId) -> bool {
        let mut cur = Some(b);
        while let Some(u) = cur {
            if u == a {
                return true;
            }
            if u < a {
                return false;
            }
            cur = self.parent(u);
        }
        false
    }

    pub fn relations(&self) -> TreeRelations {
        let all = trials(self.len());
        TreeRelations {
            descendants: all.clone().map(|t| self.descendants(t)).collect(),
            ancestors: all.clone().map(|t| self.ancestors(t)).collect(),
            leaves: all.filter(|&t| self.is_leaf(t)).collect(),
        }
    }
}

/// Descendant and ancestor sets (each including the trial itself) and leaves.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TreeRelations {
    pub descendants: Vec<Vec<TrialId>>,
    pub ancestors: Vec<Vec<TrialId>>,
    pub leaves: Vec<TrialId>,
}

impl TreeRelations {
    pub fn des(&self, t: TrialId) -> &[TrialId] {
        &self.descendants[t.idx()]
    }

    pub fn anc(&self, t: TrialId) -> &[TrialId] {
        &self.ancestors[t.idx()]
    }
}
