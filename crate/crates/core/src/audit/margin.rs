use serde::Serialize;

use crate::env::LossSource;
use crate::error::{invalid, Error, Result};
use crate::metric::{trials, DistanceOracle, TrialId};
use crate::scalar::Scalar;

/// Constants of the analysis, derived from `sigma` and `nu` only.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct AnalysisConstants<F> {
    pub c: F,
    pub sigma: F,
    pub nu: F,
    pub zeta: F,
    pub beta: F,
    pub omega: F,
}

impl<F: Scalar> AnalysisConstants<F> {
    /// `zeta = 2/sigma`, `beta = (sigma zeta + (1+zeta)/c) / (zeta (1-sigma))`,
    /// `omega = (1-c) c / (2 nu (1+zeta))`.
    pub fn new(sigma: F, nu: F) -> Result<Self> {
        if !(sigma > F::zero() && sigma < F::one()) {
            return Err(invalid(format!("sigma must lie in (0, 1), got {sigma}")));
        }
        if !(nu >= F::one() && nu.is_finite()) {
            return Err(invalid(format!("nu must be >= 1, got {nu}")));
        }
        let one = F::one();
        let two = F::lit(2.0);
        let c = F::lit(crate::router::C);
        let zeta = two / sigma;
        let beta = (sigma * zeta + (one + zeta) / c) / (zeta * (one - sigma));
        let omega = (one - c) * c / (two * nu * (one + zeta));
        Ok(AnalysisConstants { c, sigma, nu, zeta, beta, omega })
    }

    /// `c^depth`.
    pub fn scale(&self, depth: u32) -> F {
        F::half_pow(depth)
    }

    /// `zeta c^depth`, the radius in the consistency definition.
    pub fn ball(&self, depth: u32) -> F {
        self.zeta * self.scale(depth)
    }
}

/// A comparator policy with a margin. At least two trials outside the margin
/// must carry different actions.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct MarginSpec {
    pub policy: Vec<usize>,
    pub margin: Vec<bool>,
}

impl MarginSpec {
    pub fn new(policy: Vec<usize>, margin: Vec<bool>) -> Result<Self> {
        if policy.len() != margin.len() || policy.is_empty() {
            return Err(invalid("policy and margin must cover the same non-empty set of trials"));
        }
        let mut outside = policy.iter().zip(&margin).filter(|(_, m)| !**m).map(|(y, _)| *y);
        let first = outside.next().ok_or(Error::DegeneratePolicy)?;
        if outside.all(|y| y == first) {
            return Err(Error::DegeneratePolicy);
        }
        Ok(MarginSpec { policy, margin })
    }

    pub fn empty(policy: Vec<usize>) -> Result<Self> {
        let n = policy.len();
        Self::new(policy, vec![false; n])
    }

    pub fn from_members(policy: Vec<usize>, members: &[TrialId]) -> Result<Self> {
        let mut margin = vec![false; policy.len()];
        for t in members {
            *margin
                .get_mut(t.idx())
                .ok_or_else(|| invalid(format!("margin member {t} out of range")))? = true;
        }
        Self::new(policy, margin)
    }

    pub fn trials(&self) -> usize {
        self.policy.len()
    }

    pub fn y(&self, t: TrialId) -> usize {
        self.policy[t.idx()]
    }

    pub fn in_margin(&self, t: TrialId) -> bool {
        self.margin[t.idx()]
    }

    pub fn outside(&self) -> impl Iterator<Item = TrialId> + '_ {
        trials(self.trials()).filter(|t| !self.in_margin(*t))
    }

    pub fn members(&self) -> Vec<TrialId> {
        trials(self.trials()).filter(|t| self.in_margin(*t)).collect()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct MarginQuantities<F> {
    /// Distance to the nearest trial outside the margin with a different action.
    pub delta_m: Vec<F>,
    pub epsilon: F,
    /// Distance to the nearest trial outside the margin.
    pub theta: Vec<F>,
    /// Actions of trials within `beta theta(t)`, sorted.
    pub a_sets: Vec<Vec<usize>>,
    /// Largest mean loss over `a_sets[t]`, when means are available.
    pub l_tilde: Option<Vec<f64>>,
}

pub fn margin_quantities<F, D>(
    oracle: &D,
    spec: &MarginSpec,
    consts: &AnalysisConstants<F>,
    means: Option<&dyn LossSource>,
) -> Result<MarginQuantities<F>>
where
    F: Scalar,
    D: DistanceOracle<F> + ?Sized,
{
    let n = oracle.num_trials();
    if spec.trials() != n {
        return Err(invalid("margin spec and instance differ in size"));
    }
    let mut delta_m = Vec::with_capacity(n);
    let mut theta = Vec::with_capacity(n);
    let mut a_sets = Vec::with_capacity(n);
    for t in trials(n) {
        let mut dm = F::infinity();
        let mut th = F::infinity();
        for s in spec.outside() {
            let d = oracle.dist(s, t);
            th = th.min(d);
            if spec.y(s) != spec.y(t) {
                dm = dm.min(d);
            }
        }
        let radius = consts.beta * th;
        let mut a: Vec<usize> = trials(n).filter(|&s| oracle.dist(s, t) <= radius).map(|s| spec.y(s)).collect();
        a.sort_unstable();
        a.dedup();
        delta_m.push(dm);
        theta.push(th);
        a_sets.push(a);
    }
    let epsilon = delta_m.iter().copied().fold(F::infinity(), F::min);
    let l_tilde = match means {
        None => None,
        Some(src) => Some(
            trials(n)
                .map(|t| {
                    a_sets[t.idx()]
                        .iter()
                        .map(|&a| src.mean(t, a).ok_or(Error::MissingMeans))
                        .try_fold(f64::NEG_INFINITY, |m, x| x.map(|x| m.max(x)))
                })
                .collect::<Result<Vec<f64>>>()?,
        ),
    };
    Ok(MarginQuantities { delta_m, epsilon, theta, a_sets, l_tilde })
}
