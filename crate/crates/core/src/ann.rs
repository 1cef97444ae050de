//! Insert-only approximate nearest-neighbour indices over trial ids.
//!
//! [`CoverTree`] keeps nested nets `C_0 ⊆ C_1 ⊆ ...` where scale `s` has
//! radius `2^{-s}`:
//!
//! * packing: points of `C_s` are pairwise more than `2^{-s}` apart,
//! * parent links: a point entering at scale `s + 1` has a parent in `C_s`
//!   within `2^{-s}`, so every member is within `2^{-s+1}` of a point of `C_s`.
//!
//! The first member is the root and sits in `C_0`; the metric diameter is at
//! most 1, so it covers everything. [`LinearScan`] answers the same queries by
//! brute force and serves as a reference.

use std::collections::HashMap;
use std::sync::atomic::{AtomicU64, Ordering};

use crate::error::{invalid, Error, Result};
use crate::metric::{DistanceOracle, TrialId};
use crate::scalar::Scalar;

/// A member together with its distance to the query.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Neighbor<F> {
    pub id: TrialId,
    pub dist: F,
}

impl<F: Scalar> Neighbor<F> {
    /// Closer first, smaller id on ties.
    fn beats(&self, other: &Neighbor<F>) -> bool {
        self.dist < other.dist || (self.dist == other.dist && self.id < other.id)
    }
}

pub trait NeighborIndex<F: Scalar> {
    fn insert<D: DistanceOracle<F> + ?Sized>(&mut self, oracle: &D, t: TrialId) -> Result<()>;

    /// Returns a member `s` with `dist(s, t) <= nu * min_r dist(r, t)`.
    fn query<D: DistanceOracle<F> + ?Sized>(&self, oracle: &D, t: TrialId, nu: F) -> Result<Neighbor<F>>;

    /// All members strictly closer than `radius`, sorted by id.
    fn within<D: DistanceOracle<F> + ?Sized>(&self, oracle: &D, t: TrialId, radius: F) -> Vec<Neighbor<F>>;

    fn len(&self) -> usize;

    fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn contains(&self, t: TrialId) -> bool;

    /// Number of oracle calls made by this index so far.
    fn distance_evals(&self) -> u64;
}

fn check_nu<F: Scalar>(nu: F) -> Result<()> {
    if nu >= F::one() && nu.is_finite() {
        Ok(())
    } else {
        Err(invalid(format!("approximation factor must be >= 1, got {nu}")))
    }
}

#[derive(Debug, Default)]
pub struct LinearScan {
    members: Vec<TrialId>,
    evals: AtomicU64,
}

impl LinearScan {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn members(&self) -> &[TrialId] {
        &self.members
    }
}

impl<F: Scalar> NeighborIndex<F> for LinearScan {
    fn insert<D: DistanceOracle<F> + ?Sized>(&mut self, _oracle: &D, t: TrialId) -> Result<()> {
        if self.members.contains(&t) {
            return Err(Error::DuplicateMember(t));
        }
        self.members.push(t);
        Ok(())
    }

    fn query<D: DistanceOracle<F> + ?Sized>(&self, oracle: &D, t: TrialId, nu: F) -> Result<Neighbor<F>> {
        check_nu(nu)?;
        let mut best: Option<Neighbor<F>> = None;
        for &s in &self.members {
            let cand = Neighbor { id: s, dist: oracle.dist(s, t) };
            if best.is_none_or(|b| cand.beats(&b)) {
                best = Some(cand);
            }
        }
        self.evals.fetch_add(self.members.len() as u64, Ordering::Relaxed);
        best.ok_or(Error::EmptyIndex)
    }

    fn within<D: DistanceOracle<F> + ?Sized>(&self, oracle: &D, t: TrialId, radius: F) -> Vec<Neighbor<F>> {
        self.evals.fetch_add(self.members.len() as u64, Ordering::Relaxed);
        let mut out: Vec<_> = self
            .members
            .iter()
            .map(|&s| Neighbor { id: s, dist: oracle.dist(s, t) })
            .filter(|n| n.dist < radius)
            .collect();
        out.sort_by_key(|n| n.id);
        out
    }

    fn len(&self) -> usize {
        self.members.len()
    }

    fn contains(&self, t: TrialId) -> bool {
        self.members.contains(&t)
    }

    fn distance_evals(&self) -> u64 {
        self.evals.load(Ordering::Relaxed)
    }
}

#[derive(Debug, Clone)]
struct Node {
    trial: TrialId,
    /// First scale at which this point is a net point.
    scale: u32,
    /// Children grouped by the parent scale `s` they hang off (they enter at `s + 1`),
    /// ascending in `s`.
    children: Vec<(u32, Vec<usize>)>,
}

impl Node {
    fn children_at(&self, s: u32) -> &[usize] {
        match self.children.binary_search_by_key(&s, |(k, _)| *k) {
            Ok(i) => &self.children[i].1,
            Err(_) => &[],
        }
    }

    /// Smallest child key `>= s`.
    fn next_key(&self, s: u32) -> Option<u32> {
        let i = self.children.partition_point(|(k, _)| *k < s);
        self.children.get(i).map(|(k, _)| *k)
    }

    fn add_child(&mut self, s: u32, child: usize) {
        match self.children.binary_search_by_key(&s, |(k, _)| *k) {
            Ok(i) => self.children[i].1.push(child),
            Err(i) => self.children.insert(i, (s, vec![child])),
        }
    }
}

/// Base-2 cover tree with explicit parent links.
#[derive(Debug, Default)]
pub struct CoverTree<F> {
    nodes: Vec<Node>,
    position: HashMap<TrialId, usize>,
    evals: AtomicU64,
    _scalar: std::marker::PhantomData<F>,
}

/// Upper bound on the number of scales; `2^{-s}` stays a normal f32 below this.
const MAX_SCALE: u32 = 120;

impl<F: Scalar> CoverTree<F> {
    pub fn new() -> Self {
        CoverTree {
            nodes: Vec::new(),
            position: HashMap::new(),
            evals: AtomicU64::new(0),
            _scalar: std::marker::PhantomData,
        }
    }

    fn dist<D: DistanceOracle<F> + ?Sized>(&self, oracle: &D, node: usize, t: TrialId) -> F {
        self.evals.fetch_add(1, Ordering::Relaxed);
        oracle.dist(self.nodes[node].trial, t)
    }

    /// Members that are net points at scale `s`.
    pub fn net(&self, s: u32) -> Vec<TrialId> {
        let mut out: Vec<TrialId> = self
            .nodes
            .iter()
            .filter(|n| n.scale <= s)
            .map(|n| n.trial)
            .collect();
        out.sort();
        out
    }

    /// Deepest scale at which any member enters.
    pub fn max_scale(&self) -> u32 {
        self.nodes.iter().map(|n| n.scale).max().unwrap_or(0)
    }

    /// Members in insertion order.
    pub fn members(&self) -> Vec<TrialId> {
        self.nodes.iter().map(|n| n.trial).collect()
    }

    /// Parent of `t` and the scale it hangs off, `None` for the root.
    pub fn parent_link(&self, t: TrialId) -> Option<(TrialId, u32)> {
        let child = *self.position.get(&t)?;
        self.nodes.iter().find_map(|n| {
            n.children
                .iter()
                .find(|(_, c)| c.contains(&child))
                .map(|(k, _)| (n.trial, *k))
        })
    }

    /// Checks packing, covering and parent-distance invariants at every populated
    /// scale. Quadratic; meant for tests.
    pub fn check_invariants<D: DistanceOracle<F> + ?Sized>(&self, oracle: &D) -> Result<(), String> {
        let tol = F::axiom_tol();
        for node in &self.nodes {
            for (k, kids) in &node.children {
                for &c in kids {
                    let child = &self.nodes[c];
                    if child.scale != k + 1 {
                        return Err(format!("child {} enters at {} under key {k}", child.trial, child.scale));
                    }
                    if node.scale > *k {
                        return Err(format!("parent {} not in net {k}", node.trial));
                    }
                    let d = oracle.dist(node.trial, child.trial);
                    if d > F::half_pow(*k) + tol {
                        return Err(format!("link {}->{} too long: {d}", node.trial, child.trial));
                    }
                }
            }
        }
        for s in 0..=self.max_scale() {
            let net = self.net(s);
            let radius = F::half_pow(s);
            for (i, &a) in net.iter().enumerate() {
                for &b in &net[i + 1..] {
                    if oracle.dist(a, b) <= radius {
                        return Err(format!("packing fails at scale {s} for {a},{b}"));
                    }
                }
            }
            let cover = radius + radius;
            for n in &self.nodes {
                if !net.iter().any(|&p| oracle.dist(p, n.trial) <= cover + tol) {
                    return Err(format!("covering fails at scale {s} for {}", n.trial));
                }
            }
        }
        Ok(())
    }
}

impl<F: Scalar> NeighborIndex<F> for CoverTree<F> {
    fn insert<D: DistanceOracle<F> + ?Sized>(&mut self, oracle: &D, t: TrialId) -> Result<()> {
        if self.position.contains_key(&t) {
            return Err(Error::DuplicateMember(t));
        }
        if self.nodes.is_empty() {
            self.position.insert(t, 0);
            self.nodes.push(Node { trial: t, scale: 0, children: Vec::new() });
            return Ok(());
        }
        // Cover sets Q_0, Q_1, ...: Q_{s+1} holds the points of C_{s+1} within 2^{-s} of t.
        let root_dist = self.dist(oracle, 0, t);
        let mut levels: Vec<Vec<(usize, F)>> = vec![vec![(0, root_dist)]];
        let mut s = 0u32;
        loop {
            let current = levels.last().unwrap();
            let mut cand = current.clone();
            for &(q, _) in current {
                for &c in self.nodes[q].children_at(s) {
                    cand.push((c, self.dist(oracle, c, t)));
                }
            }
            if let Some(&(q, _)) = cand.iter().find(|(_, d)| *d <= F::zero()) {
                return Err(Error::ZeroDistancePair(self.nodes[q].trial, t));
            }
            let radius = F::half_pow(s);
            if cand.iter().all(|(_, d)| *d > radius) {
                break;
            }
            cand.retain(|(_, d)| *d <= radius);
            levels.push(cand);
            s += 1;
            if s >= MAX_SCALE {
                return Err(invalid(format!("trial {t} is closer than the finest supported scale")));
            }
        }
        // Attach under the deepest cover set that still has a point within its radius.
        for (scale, set) in levels.iter().enumerate().rev() {
            let radius = F::half_pow(scale as u32);
            let parent = set
                .iter()
                .filter(|(_, d)| *d <= radius)
                .min_by(|a, b| {
                    a.1.partial_cmp(&b.1)
                        .unwrap()
                        .then(self.nodes[a.0].trial.cmp(&self.nodes[b.0].trial))
                });
            if let Some(&(p, _)) = parent {
                let idx = self.nodes.len();
                self.nodes.push(Node { trial: t, scale: scale as u32 + 1, children: Vec::new() });
                self.nodes[p].add_child(scale as u32, idx);
                self.position.insert(t, idx);
                return Ok(());
            }
        }
        unreachable!("the root covers every point of a diameter-1 metric")
    }

    fn query<D: DistanceOracle<F> + ?Sized>(&self, oracle: &D, t: TrialId, nu: F) -> Result<Neighbor<F>> {
        check_nu(nu)?;
        if self.nodes.is_empty() {
            return Err(Error::EmptyIndex);
        }
        let slack = F::axiom_tol();
        let exact = nu == F::one();
        let mut frontier = vec![(0usize, self.dist(oracle, 0, t))];
        let mut best = Neighbor { id: self.nodes[0].trial, dist: frontier[0].1 };
        let mut s = 0u32;
        loop {
            // Frontier points are in C_s; their descendants lie within 2^{-s+1}.
            let reach = F::half_pow(s) + F::half_pow(s);
            frontier.retain(|(_, d)| *d <= best.dist + reach + slack);
            if !exact && best.dist * (nu - F::one()) >= nu * reach {
                break;
            }
            let Some(next) = frontier.iter().filter_map(|&(q, _)| self.nodes[q].next_key(s)).min() else {
                break;
            };
            if next > s {
                s = next;
                continue;
            }
            let mut cand = frontier.clone();
            for &(q, _) in &frontier {
                for &c in self.nodes[q].children_at(s) {
                    let n = Neighbor { id: self.nodes[c].trial, dist: self.dist(oracle, c, t) };
                    if n.beats(&best) {
                        best = n;
                    }
                    cand.push((c, n.dist));
                }
            }
            frontier = cand;
            s += 1;
        }
        Ok(best)
    }

    fn within<D: DistanceOracle<F> + ?Sized>(&self, oracle: &D, t: TrialId, radius: F) -> Vec<Neighbor<F>> {
        if self.nodes.is_empty() {
            return Vec::new();
        }
        let slack = F::axiom_tol();
        let mut found = Vec::new();
        let d0 = self.dist(oracle, 0, t);
        if d0 < radius {
            found.push(Neighbor { id: self.nodes[0].trial, dist: d0 });
        }
        let mut frontier = vec![(0usize, d0)];
        let mut s = 0u32;
        loop {
            let reach = F::half_pow(s) + F::half_pow(s);
            frontier.retain(|(_, d)| *d < radius + reach + slack);
            let Some(next) = frontier.iter().filter_map(|&(q, _)| self.nodes[q].next_key(s)).min() else {
                break;
            };
            if next > s {
                s = next;
                continue;
            }
            let mut cand = frontier.clone();
            for &(q, _) in &frontier {
                for &c in self.nodes[q].children_at(s) {
                    let d = self.dist(oracle, c, t);
                    if d < radius {
                        found.push(Neighbor { id: self.nodes[c].trial, dist: d });
                    }
                    cand.push((c, d));
                }
            }
            frontier = cand;
            s += 1;
        }
        found.sort_by_key(|n| n.id);
        found
    }

    fn len(&self) -> usize {
        self.nodes.len()
    }

    fn contains(&self, t: TrialId) -> bool {
        self.position.contains_key(&t)
    }

    fn distance_evals(&self) -> u64 {
        self.evals.load(Ordering::Relaxed)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metric::MetricInstance;

    fn line(xs: &[f64]) -> MetricInstance<f64> {
        let pts: Vec<Vec<f64>> = xs.iter().map(|&x| vec![x]).collect();
        MetricInstance::from_points(&pts, 2).unwrap()
    }

    fn id(n: usize) -> TrialId {
        TrialId::new(n)
    }

    #[test]
    fn singleton_index() {
        let inst = line(&[0.2, 0.9]);
        let mut tree = CoverTree::new();
        tree.insert(&inst, id(1)).unwrap();
        assert_eq!(tree.net(0), vec![id(1)]);
        assert_eq!(tree.net(7), vec![id(1)]);
        assert_eq!(NeighborIndex::<f64>::distance_evals(&tree), 0);
        let nn = tree.query(&inst, id(2), 1.0).unwrap();
        assert_eq!(nn.id, id(1));
        assert_eq!(tree.distance_evals(), 1);
    }

    #[test]
    fn close_pair_is_separated_at_fine_scale() {
        // members 0.3 and 0.35 on a line
        let inst = line(&[0.3, 0.35, 0.0]);
        let mut tree = CoverTree::new();
        tree.insert(&inst, id(1)).unwrap();
        tree.insert(&inst, id(2)).unwrap();
        assert_eq!(tree.net(5), vec![id(1), id(2)]);
        assert_eq!(tree.net(4), vec![id(1)]);
        tree.check_invariants(&inst).unwrap();
    }

    #[test]
    fn duplicate_member_rejected() {
        let inst = line(&[0.3, 0.35]);
        let mut tree = CoverTree::new();
        tree.insert(&inst, id(1)).unwrap();
        assert!(matches!(tree.insert(&inst, id(1)), Err(Error::DuplicateMember(_))));
        let mut scan = LinearScan::new();
        NeighborIndex::<f64>::insert(&mut scan, &inst, id(1)).unwrap();
        assert!(matches!(
            NeighborIndex::<f64>::insert(&mut scan, &inst, id(1)),
            Err(Error::DuplicateMember(_))
        ));
    }

    #[test]
    fn zero_distance_insert_rejected() {
        let inst = line(&[0.3, 0.3]);
        let mut tree = CoverTree::new();
        tree.insert(&inst, id(1)).unwrap();
        assert!(matches!(tree.insert(&inst, id(2)), Err(Error::ZeroDistancePair(..))));
    }

    #[test]
    fn empty_index_query_fails() {
        let inst = line(&[0.3]);
        let tree = CoverTree::<f64>::new();
        assert!(matches!(tree.query(&inst, id(1), 1.0), Err(Error::EmptyIndex)));
        assert!(tree.query(&inst, id(1), 0.5).is_err());
    }

    #[test]
    fn exact_and_approximate_queries() {
        // members {0, 0.5, 0.9}, query 0.6
        let inst = line(&[0.0, 0.5, 0.9, 0.6]);
        let mut tree = CoverTree::new();
        for n in 1..=3 {
            tree.insert(&inst, id(n)).unwrap();
        }
        let nn = tree.query(&inst, id(4), 1.0).unwrap();
        assert_eq!(nn.id, id(2));
        assert!((nn.dist - 0.1).abs() < 1e-12);

        // members {0, 0.5, 0.7}, query 0.58 with nu = 2: 0.5 or 0.7 are both fine
        let inst = line(&[0.0, 0.5, 0.7, 0.58]);
        let mut tree = CoverTree::new();
        for n in 1..=3 {
            tree.insert(&inst, id(n)).unwrap();
        }
        let nn = tree.query(&inst, id(4), 2.0).unwrap();
        assert!(nn.id == id(2) || nn.id == id(3));
        assert!(nn.dist <= 2.0 * 0.08 + 1e-12);
    }

    #[test]
    fn ties_resolve_to_smallest_id() {
        let inst = line(&[0.4, 0.6, 0.5]);
        let mut tree = CoverTree::new();
        tree.insert(&inst, id(2)).unwrap();
        tree.insert(&inst, id(1)).unwrap();
        assert_eq!(tree.query(&inst, id(3), 1.0).unwrap().id, id(1));
    }

    #[test]
    fn within_matches_scan() {
        let xs: Vec<f64> = (0..40).map(|i| ((i * 37) % 101) as f64 / 101.0).collect();
        let inst = line(&xs);
        let mut tree = CoverTree::new();
        let mut scan = LinearScan::new();
        for n in 1..=39 {
            tree.insert(&inst, id(n)).unwrap();
            NeighborIndex::<f64>::insert(&mut scan, &inst, id(n)).unwrap();
        }
        tree.check_invariants(&inst).unwrap();
        for r in [0.01, 0.05, 0.2, 2.0] {
            let a: Vec<_> = tree.within(&inst, id(40), r).iter().map(|n| n.id).collect();
            let b: Vec<_> = NeighborIndex::<f64>::within(&scan, &inst, id(40), r)
                .iter()
                .map(|n| n.id)
                .collect();
            assert_eq!(a, b);
        }
    }

    #[test]
    fn counter_grows_with_queries() {
        let inst = line(&[0.0, 0.5, 0.9, 0.6]);
        let mut tree = CoverTree::new();
        for n in 1..=3 {
            tree.insert(&inst, id(n)).unwrap();
        }
        let before = tree.distance_evals();
        for _ in 0..5 {
            tree.query(&inst, id(4), 1.5).unwrap();
        }
        assert!(tree.distance_evals() >= before + 5);
    }
}
