use std::collections::BTreeMap;

use serde::Serialize;

use super::margin::{margin_quantities, AnalysisConstants, MarginSpec};
use super::packing::{packing_number, PackingMode, EXACT_PACKING_LIMIT};
use super::{Checks, LemmaCheck};
use crate::env::{opposite_nearest, BoundaryCoverConfig, LossSource, COVER_TOL, CROSSING_TOL};
use crate::error::{invalid, Error, Result};
use crate::metric::{trials, MetricInstance, TrialId};

/// Per-trial boundary geometry of a boundary-cover instance.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Theorem2Report {
    pub margin: Vec<TrialId>,
    /// `floor(C log2 T)`.
    pub big_j: u32,
    /// Nearest trial outside the margin with the other action.
    pub q: Vec<TrialId>,
    /// Boundary crossing on the segment from `x_t` to `x_q(t)`.
    pub b: Vec<Vec<f64>>,
    /// Smallest index of a cover ball containing `b(t)` (0-based).
    pub i: Vec<usize>,
    pub j: Vec<u32>,
    pub delta_m: Vec<f64>,
    pub epsilon: f64,
    pub packing_size: usize,
    pub packing_greedy: bool,
    /// Packing members grouped by `(i(t), j(t))`.
    pub groups: BTreeMap<String, Vec<TrialId>>,
    pub lemmas: Vec<LemmaCheck>,
}

impl Theorem2Report {
    pub fn passed(&self) -> bool {
        self.lemmas.iter().all(|l| l.pass)
    }

    pub fn check(&self, id: &str) -> Option<&LemmaCheck> {
        self.lemmas.iter().find(|l| l.lemma_id == id)
    }
}

fn norm(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// Recomputes the margin of `cover` on the instance's contexts and audits the
/// lower bounds on `delta_M` that follow from the cover.
pub fn theorem2_margin(
    instance: &MetricInstance<f64>,
    cover: &BoundaryCoverConfig,
    consts: &AnalysisConstants<f64>,
    means: Option<&dyn LossSource>,
) -> Result<Theorem2Report> {
    cover.validate()?;
    let contexts = instance.contexts().ok_or_else(|| invalid("boundary geometry needs Euclidean contexts"))?;
    let n = contexts.len();
    if cover.trials != n {
        return Err(invalid("cover config and instance differ in size"));
    }
    let policy: Vec<usize> = contexts.iter().map(|x| cover.policy.label(x)).collect();
    let margin_flags = cover.margin_of(&contexts);
    let spec = MarginSpec::new(policy.clone(), margin_flags.clone())?;
    let quantities = margin_quantities(instance, &spec, consts, means)?;
    let big_j = (cover.c_exp * (n as f64).log2()).floor().max(0.0) as u32;
    let xi = cover.xi;

    let mut q = Vec::with_capacity(n);
    let mut b = Vec::with_capacity(n);
    let mut i_of = Vec::with_capacity(n);
    let mut j_of = Vec::with_capacity(n);
    for t in trials(n) {
        let qt = opposite_nearest(instance, &policy, &margin_flags, t).ok_or(Error::DegeneratePolicy)?;
        let x = &contexts[t.idx()];
        let bt = cover
            .policy
            .crossing(x, &contexts[qt.idx()], CROSSING_TOL)
            .ok_or(Error::CoverViolation { trial: t })?;
        let it = cover
            .cover
            .iter()
            .position(|ball| ball.contains(&bt, 1.0, COVER_TOL))
            .ok_or(Error::CoverViolation { trial: t })?;
        let ball = &cover.cover[it];
        let dist = norm(x, &ball.center);
        let jt = (0..=big_j)
            .find(|&j| dist <= f64::powi(2.0, j as i32) * xi * ball.radius)
            .ok_or_else(|| invalid(format!("trial {t} is farther than 2^J xi r from its cover ball")))?;
        q.push(qt);
        b.push(bt);
        i_of.push(it);
        j_of.push(jt);
    }

    let dm = &quantities.delta_m;
    let tol = 1e-9;
    let mut c = Checks::default();
    c.push(
        "cover",
        "every boundary crossing b(t) lies in some cover ball",
        std::iter::empty(),
    );
    c.push(
        "corlem1",
        "j(t) > 0 implies delta_M(t) >= 2^(j(t)-1) (xi - 1) r_i(t)",
        trials(n).filter_map(|t| {
            let (i, j) = (i_of[t.idx()], j_of[t.idx()]);
            let bound = f64::powi(2.0, j as i32 - 1) * (xi - 1.0) * cover.cover[i].radius;
            (j > 0 && dm[t.idx()] + tol < bound).then(|| format!("t={t} i={} j={j} delta_M={} bound={bound}", i + 1, dm[t.idx()]))
        }),
    );
    c.push(
        "corlem2",
        "j(t) = 0 implies delta_M(t) > (xi - 1) r_i(t) / 2",
        trials(n).filter_map(|t| {
            let (i, j) = (i_of[t.idx()], j_of[t.idx()]);
            let bound = 0.5 * (xi - 1.0) * cover.cover[i].radius;
            (j == 0 && dm[t.idx()] <= bound).then(|| format!("t={t} i={} delta_M={} bound={bound}", i + 1, dm[t.idx()]))
        }),
    );
    let min_r = cover.cover.iter().map(|b| b.radius).fold(f64::INFINITY, f64::min);
    let eps_bound = 0.5 * (xi - 1.0) * min_r;
    c.push_bool(
        "corlem6",
        "epsilon >= (xi - 1) min_i r_i / 2",
        quantities.epsilon + tol >= eps_bound,
        || format!("epsilon={} bound={eps_bound}", quantities.epsilon),
    );

    let mode = if n <= EXACT_PACKING_LIMIT { PackingMode::Exact } else { PackingMode::Greedy };
    let packing = packing_number(instance, dm, consts.omega, mode)?;
    let mut groups: BTreeMap<(usize, u32), Vec<TrialId>> = BTreeMap::new();
    for &t in &packing.members {
        groups.entry((i_of[t.idx()], j_of[t.idx()])).or_default().push(t);
    }
    let w = consts.omega * (xi - 1.0) / (2.0 * xi);
    let ctx = &contexts;
    let dim = contexts.first().map_or(1, Vec::len) as i32;
    let per_group_cap = (1.0 + 2.0 / w).powi(dim);
    c.push(
        "corlem3",
        "members of S_(i,j) lie in B(v_i, r') with r' = 2^j xi r_i, are pairwise > w r' apart \
         (w = omega (xi - 1) / (2 xi)), and number at most (1 + 2/w)^d",
        groups.iter().flat_map(|(&(i, j), members)| {
            let ball = &cover.cover[i];
            let r = f64::powi(2.0, j as i32) * xi * ball.radius;
            let outside = members
                .iter()
                .filter(move |t| norm(&ctx[t.idx()], &ball.center) > r + tol)
                .map(move |t| format!("t={t} outside B(v_{}, {r})", i + 1));
            let close = members.iter().enumerate().flat_map(move |(k, &s)| {
                members[k + 1..].iter().filter_map(move |&t| {
                    let d = norm(&ctx[s.idx()], &ctx[t.idx()]);
                    (d <= w * r).then(|| format!("s={s} t={t} in S_({},{j}) at {d} <= {}", i + 1, w * r))
                })
            });
            let size = (members.len() as f64 > per_group_cap)
                .then(|| format!("|S_({},{j})|={} > {per_group_cap}", i + 1, members.len()));
            outside.chain(close).chain(size)
        }),
    );
    let total_cap = cover.cover.len() as f64 * (big_j + 1) as f64 * per_group_cap;
    c.push_bool(
        "corlem4",
        "packing size <= N (J + 1) (1 + 2/w)^d",
        packing.size as f64 <= total_cap,
        || format!("packing={} cap={total_cap}", packing.size),
    );
    if let (Some(src), Some(lt)) = (means, quantities.l_tilde.as_ref()) {
        let lhs: f64 = lt.iter().sum();
        let rhs: f64 = trials(n)
            .filter(|t| !margin_flags[t.idx()])
            .map(|t| src.mean(t, policy[t.idx()]).unwrap_or(f64::NAN))
            .sum::<f64>()
            + margin_flags.iter().filter(|m| **m).count() as f64;
        c.push_bool(
            "corlem5",
            "sum_t Ltilde(t) <= sum_{t not in M} E[loss(t, ytilde(x_t))] + |M|",
            lhs <= rhs + tol,
            || format!("lhs={lhs} rhs={rhs}"),
        );
    }

    Ok(Theorem2Report {
        margin: spec.members(),
        big_j,
        q,
        b,
        i: i_of,
        j: j_of,
        delta_m: dm.clone(),
        epsilon: quantities.epsilon,
        packing_size: packing.size,
        packing_greedy: packing.greedy,
        groups: groups.into_iter().map(|((i, j), m)| (format!("{},{j}", i + 1), m)).collect(),
        lemmas: c.into_inner(),
    })
}
