//! Parent-fed bandit subroutine: a trial's node is seeded from its parent's
//! node, then plays and learns with importance-weighted exponential weights.

use rand::{Rng, RngCore};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::metric::TrialId;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SubroutineParams {
    pub lambda: f64,
    pub eta: f64,
    pub gamma: f64,
    pub theta: f64,
}

impl SubroutineParams {
    /// `eta = sqrt(ln K / (K T))`, `gamma = min(1, sqrt(K ln K / T))`,
    /// `theta = min(1/2, lambda^2 / T)`. With a single action the learning
    /// rates are irrelevant and set to 1.
    pub fn defaults(trials: usize, actions: usize, lambda: f64) -> Result<Self> {
        if trials == 0 || actions == 0 {
            return Err(invalid("defaults need T >= 1 and K >= 1"));
        }
        if !(lambda > 0.0 && lambda.is_finite()) {
            return Err(invalid(format!("lambda must be positive, got {lambda}")));
        }
        let t = trials as f64;
        let k = actions as f64;
        let (eta, gamma) = if actions == 1 {
            (1.0, 1.0)
        } else {
            ((k.ln() / (k * t)).sqrt(), (k * k.ln() / t).sqrt().min(1.0))
        };
        Ok(SubroutineParams { lambda, eta, gamma, theta: (lambda * lambda / t).min(0.5) })
    }

    /// Theta may be 0 here, which turns edge mixing off.
    pub fn validate(&self) -> Result<()> {
        let ok = self.lambda > 0.0
            && self.eta > 0.0
            && self.eta.is_finite()
            && self.gamma > 0.0
            && self.gamma <= 1.0
            && (0.0..=0.5).contains(&self.theta);
        if ok {
            Ok(())
        } else {
            Err(invalid(format!("invalid subroutine parameters {self:?}")))
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct BanditNode {
    pub trial: TrialId,
    pub weights: Vec<f64>,
    /// Parent weights at the time this node was created.
    pub basis: Option<Vec<f64>>,
}

impl BanditNode {
    pub fn actions(&self) -> usize {
        self.weights.len()
    }
}

/// Uniform weights for a root, otherwise `(1 - theta) w_parent + theta / K`.
pub fn create_node(
    t: TrialId,
    parent: Option<&BanditNode>,
    params: &SubroutineParams,
    actions: usize,
) -> Result<BanditNode> {
    if actions == 0 {
        return Err(invalid("need at least one action"));
    }
    let uniform = 1.0 / actions as f64;
    match parent {
        None if t != TrialId::FIRST => Err(Error::MissingParent(t)),
        None => Ok(BanditNode { trial: t, weights: vec![uniform; actions], basis: None }),
        Some(p) => {
            if p.actions() != actions {
                return Err(invalid("parent has a different number of actions"));
            }
            let th = params.theta;
            let weights = p.weights.iter().map(|w| (1.0 - th) * w + th * uniform).collect();
            Ok(BanditNode { trial: t, weights, basis: Some(p.weights.clone()) })
        }
    }
}

/// `p = (1 - gamma) w + gamma / K`.
pub fn sampling_distribution(node: &BanditNode, params: &SubroutineParams) -> Vec<f64> {
    let k = node.actions() as f64;
    node.weights.iter().map(|w| (1.0 - params.gamma) * w + params.gamma / k).collect()
}

/// Samples a 0-based action and returns it with its probability.
pub fn select_action<R: RngCore + ?Sized>(node: &BanditNode, params: &SubroutineParams, rng: &mut R) -> (usize, f64) {
    let p = sampling_distribution(node, params);
    if p.len() == 1 {
        return (0, 1.0);
    }
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (a, &pa) in p.iter().enumerate() {
        acc += pa;
        if u < acc {
            return (a, pa);
        }
    }
    let last = p.iter().rposition(|&pa| pa > 0.0).unwrap_or(p.len() - 1);
    (last, p[last])
}

/// `w_a <- w_a exp(-eta loss / p_a)` on the played action, then renormalize.
pub fn update(node: &mut BanditNode, action: usize, loss: f64, prob: f64, params: &SubroutineParams) -> Result<()> {
    if !(prob > 0.0 && prob <= 1.0 + 1e-12) {
        return Err(Error::ProbabilityMismatch(prob));
    }
    if !(0.0..=1.0).contains(&loss) {
        return Err(Error::InvalidLoss(loss));
    }
    if action >= node.actions() {
        return Err(invalid(format!("action {action} out of range")));
    }
    if loss == 0.0 {
        return Ok(());
    }
    node.weights[action] *= (-params.eta * loss / prob).exp();
    let total: f64 = node.weights.iter().sum();
    if total > 0.0 && total.is_finite() {
        node.weights.iter_mut().for_each(|w| *w /= total);
    } else {
        let k = node.actions() as f64;
        node.weights.iter_mut().for_each(|w| *w = 1.0 / k);
    }
    Ok(())
}

/// `sum_{t>1} 1[h(t) != h(parent(t))]`.
pub fn switch_count(parents: &[Option<TrialId>], policy: &[usize]) -> Result<usize> {
    if parents.len() != policy.len() {
        return Err(invalid("parent table and policy differ in length"));
    }
    let mut n = 0;
    for (i, p) in parents.iter().enumerate().skip(1) {
        let p = p.ok_or_else(|| invalid(format!("trial {} has no parent", i + 1)))?;
        if policy[i] != policy[p.idx()] {
            n += 1;
        }
    }
    Ok(n)
}

/// The subroutine slot: trial `t` is opened under its parent, plays once and
/// receives its own loss.
pub trait ParentFedBandit {
    /// `parent = None` opens a fresh root (trial 1, or an agent restart).
    fn open(&mut self, t: TrialId, parent: Option<TrialId>) -> Result<()>;
    /// Makes `t` use the node already opened for `rep`.
    fn share(&mut self, t: TrialId, rep: TrialId) -> Result<()>;
    fn select(&mut self, t: TrialId, rng: &mut dyn RngCore) -> Result<(usize, f64)>;
    fn update(&mut self, t: TrialId, action: usize, loss: f64, prob: f64) -> Result<()>;
}

/// Reference subroutine: one node per opened trial, fixed-share mixing along
/// tree edges.
#[derive(Clone, Debug)]
pub struct FixedShareTree {
    params: SubroutineParams,
    actions: usize,
    nodes: Vec<BanditNode>,
    slot: Vec<Option<usize>>,
}

impl FixedShareTree {
    pub fn new(params: SubroutineParams, actions: usize) -> Result<Self> {
        params.validate()?;
        if actions == 0 {
            return Err(invalid("need at least one action"));
        }
        Ok(FixedShareTree { params, actions, nodes: Vec::new(), slot: Vec::new() })
    }

    pub fn params(&self) -> &SubroutineParams {
        &self.params
    }

    pub fn node(&self, t: TrialId) -> Option<&BanditNode> {
        self.slot.get(t.idx()).copied().flatten().map(|i| &self.nodes[i])
    }

    pub fn num_nodes(&self) -> usize {
        self.nodes.len()
    }

    fn slot_of(&self, t: TrialId) -> Result<usize> {
        self.slot.get(t.idx()).copied().flatten().ok_or(Error::UnknownNode(t))
    }

    fn assign(&mut self, t: TrialId, node: usize) {
        if self.slot.len() <= t.idx() {
            self.slot.resize(t.idx() + 1, None);
        }
        self.slot[t.idx()] = Some(node);
    }
}

impl ParentFedBandit for FixedShareTree {
    fn open(&mut self, t: TrialId, parent: Option<TrialId>) -> Result<()> {
        let node = match parent {
            Some(p) => {
                let pi = self.slot_of(p)?;
                create_node(t, Some(&self.nodes[pi]), &self.params, self.actions)?
            }
            None => create_node(TrialId::FIRST, None, &self.params, self.actions)
                .map(|n| BanditNode { trial: t, ..n })?,
        };
        self.nodes.push(node);
        self.assign(t, self.nodes.len() - 1);
        Ok(())
    }

    fn share(&mut self, t: TrialId, rep: TrialId) -> Result<()> {
        let i = self.slot_of(rep)?;
        self.assign(t, i);
        Ok(())
    }

    fn select(&mut self, t: TrialId, rng: &mut dyn RngCore) -> Result<(usize, f64)> {
        let i = self.slot_of(t)?;
        Ok(select_action(&self.nodes[i], &self.params, rng))
    }

    fn update(&mut self, t: TrialId, action: usize, loss: f64, prob: f64) -> Result<()> {
        let i = self.slot_of(t)?;
        update(&mut self.nodes[i], action, loss, prob, &self.params)
    }
}
