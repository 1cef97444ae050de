//! Analysis quantities of a finished run and numerical checks of the
//! inequalities relating them.

mod margin;
mod packing;
mod sets;
mod theorem2;

pub use margin::{margin_quantities, AnalysisConstants, MarginQuantities, MarginSpec};
pub use packing::{compatible, packing_number, Packing, PackingMode, EXACT_PACKING_LIMIT};
pub use sets::{build_hbar, compute_boundary_sets, compute_cts, BoundarySets, Hbar, HbarCase};
pub use theorem2::{theorem2_margin, Theorem2Report};

use serde::Serialize;

use crate::bandit::switch_count;
use crate::env::LossSource;
use crate::error::{invalid, Result};
use crate::metric::{aspect_ratio, trials, DistanceOracle, TrialId};
use crate::router::RoutingTree;
use crate::scalar::Scalar;

/// Outcome of one inequality check.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct LemmaCheck {
    pub lemma_id: String,
    pub statement: String,
    pub pass: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub witness: Option<String>,
}

#[derive(Default)]
pub(crate) struct Checks(Vec<LemmaCheck>);

impl Checks {
    /// Records a check that fails with the first witness produced.
    pub(crate) fn push(&mut self, id: &str, statement: &str, mut failures: impl Iterator<Item = String>) {
        let witness = failures.next();
        self.0.push(LemmaCheck {
            lemma_id: id.to_string(),
            statement: statement.to_string(),
            pass: witness.is_none(),
            witness,
        });
    }

    pub(crate) fn push_bool(&mut self, id: &str, statement: &str, ok: bool, witness: impl FnOnce() -> String) {
        let failure = if ok { None } else { Some(witness()) };
        self.push(id, statement, failure.into_iter());
    }

    pub(crate) fn into_inner(self) -> Vec<LemmaCheck> {
        self.0
    }
}

/// Regret-bound terms whose hidden constants are left out.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct BoundTerms {
    pub lambda: f64,
    pub packing: usize,
    pub log_inv_epsilon: f64,
    /// `N ln(1/eps)^2`
    pub n_log_sq: f64,
    /// `(lambda + N ln(1/eps) / lambda) sqrt(K T)`
    pub tradeoff_plus: f64,
    /// `(lambda - N ln(1/eps) / lambda) sqrt(K T)`
    pub tradeoff_minus: f64,
    pub sum_l_tilde: Option<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AuditOptions {
    /// Defaults to exact up to [`EXACT_PACKING_LIMIT`] trials, greedy beyond.
    pub packing: Option<PackingMode>,
    pub lambda: f64,
}

impl Default for AuditOptions {
    fn default() -> Self {
        AuditOptions { packing: None, lambda: 1.0 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct AuditReport<F> {
    pub trials: usize,
    pub constants: AnalysisConstants<F>,
    pub margin: Vec<TrialId>,
    #[serde(flatten)]
    pub quantities: MarginQuantities<F>,
    pub packing: Packing,
    pub cts: Vec<TrialId>,
    #[serde(flatten)]
    pub sets: BoundarySets,
    pub hbar: Hbar,
    pub v: Vec<TrialId>,
    pub phi: usize,
    pub bounds: BoundTerms,
    pub lemmas: Vec<LemmaCheck>,
}

impl<F: Scalar> AuditReport<F> {
    pub fn passed(&self) -> bool {
        self.lemmas.iter().all(|l| l.pass)
    }

    pub fn failures(&self) -> impl Iterator<Item = &LemmaCheck> {
        self.lemmas.iter().filter(|l| !l.pass)
    }

    pub fn check(&self, id: &str) -> Option<&LemmaCheck> {
        self.lemmas.iter().find(|l| l.lemma_id == id)
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("audit report serializes");
        s.push('\n');
        s
    }
}

/// Computes every analysis object for a routed run and checks the inequalities.
pub fn verify_lemmas<F, D>(
    oracle: &D,
    tree: &RoutingTree,
    spec: &MarginSpec,
    consts: &AnalysisConstants<F>,
    means: Option<&dyn LossSource>,
    options: AuditOptions,
) -> Result<AuditReport<F>>
where
    F: Scalar,
    D: DistanceOracle<F> + ?Sized,
{
    let n = oracle.num_trials();
    if tree.len() != n || spec.trials() != n {
        return Err(invalid("instance, tree and margin spec differ in size"));
    }
    let tol = F::axiom_tol();
    let nu = consts.nu;
    let scale = |t: TrialId| F::half_pow(tree.depth(t));
    let depth = |t: TrialId| tree.depth(t);

    let q = margin_quantities(oracle, spec, consts, means)?;
    let mode = options.packing.unwrap_or(if n <= EXACT_PACKING_LIMIT { PackingMode::Exact } else { PackingMode::Greedy });
    let mut packing = packing_number(oracle, &q.delta_m, consts.omega, mode)?;
    let cts = compute_cts(oracle, tree, spec, consts);
    let sets = compute_boundary_sets(oracle, tree, &cts, nu);
    let hbar = build_hbar(oracle, tree, &cts, spec, consts)?;
    let h = &hbar.actions;
    let v: Vec<TrialId> = trials(n).filter(|t| h[t.idx()] != spec.y(*t) && !cts[t.idx()]).collect();
    let phi = switch_count(tree.parents(), h)?;
    let rel = tree.relations();
    let in_b: Vec<bool> = trials(n).map(|t| sets.in_b(t)).collect();
    let in_cts = |t: TrialId| cts[t.idx()];
    let b_below = |t: TrialId| rel.des(t).iter().any(|s| in_b[s.idx()]);
    let b_above = |t: TrialId| rel.anc(t).iter().any(|s| in_b[s.idx()]);
    let dm = |t: TrialId| q.delta_m[t.idx()];

    let mut c = Checks::default();

    c.push(
        "tree",
        "d(1) = 0, and for t > 1: d(parent(t)) = d(t) - 1 and dist(t, parent(t)) <= c^(d(t) - 1)",
        trials(n).filter_map(|t| match tree.parent(t) {
            None if depth(t) != 0 => Some(format!("root {t} has depth {}", depth(t))),
            None => None,
            Some(p) => {
                let d = oracle.dist(t, p);
                let bad_depth = depth(p) + 1 != depth(t);
                let bad_dist = depth(t) == 0 || d > F::half_pow(depth(t) - 1) + tol;
                (bad_depth || bad_dist)
                    .then(|| format!("t={t} parent={p} d(t)={} d(parent)={} dist={d}", depth(t), depth(p)))
            }
        }),
    );

    let max_depth = tree.max_depth();
    let mut by_depth: Vec<Vec<TrialId>> = vec![Vec::new(); max_depth as usize + 1];
    for t in trials(n) {
        by_depth[depth(t) as usize].push(t);
    }
    c.push(
        "lem1",
        "r != t with d(r) = d(t) implies dist(r, t) > c^d(t) / nu",
        by_depth.iter().flat_map(|level| {
            level.iter().enumerate().flat_map(move |(i, &r)| {
                level[i + 1..].iter().filter_map(move |&t| {
                    let d = oracle.dist(r, t);
                    (d <= scale(t) / nu).then(|| format!("r={r} t={t} depth={} dist={d}", depth(t)))
                })
            })
        }),
    );

    if let Ok(ar) = aspect_ratio(oracle) {
        let bound = F::one() + (F::one() / ar.delta).log2();
        c.push(
            "depth_bound",
            "d(t) <= 1 + log2(1 / aspect ratio)",
            trials(n)
                .filter(|&t| F::lit(depth(t) as f64) > bound + tol)
                .map(|t| format!("t={t} depth={} bound={bound}", depth(t))),
        );
    }

    c.push(
        "cnanclem2",
        "s in CTS and t in des(s) implies t in CTS",
        trials(n).filter_map(|t| {
            tree.parent(t)
                .filter(|p| in_cts(*p) && !in_cts(t))
                .map(|p| format!("parent {p} in CTS but child {t} is not"))
        }),
    );

    let q_of = |s: TrialId| sets.q.iter().filter(move |(_, qs)| qs.contains(&s)).map(|(t, _)| *t);
    c.push(
        "fixlem2",
        "every s in B \\ N lies in Q(t) for some t in N",
        sets.b.iter().filter(|s| !sets.in_n(**s) && q_of(**s).next().is_none()).map(|s| format!("s={s} is in no Q(t)")),
    );
    c.push(
        "sizqlem",
        "t in N and s in Q(t) implies d(s) <= d(t)",
        sets.q.iter().flat_map(|(t, qs)| {
            qs.iter().filter(|s| depth(**s) > depth(*t)).map(move |s| format!("t={t} s={s}"))
        }),
    );
    c.push(
        "fixlem3",
        "|Q(t)| <= d(t) + 1 for t in N",
        sets.q
            .iter()
            .filter(|(t, qs)| qs.len() > depth(*t) as usize + 1)
            .map(|(t, qs)| format!("t={t} |Q|={} d={}", qs.len(), depth(*t))),
    );
    c.push(
        "fixlem4",
        "c^d(t) >= delta_M(t) c / (1 + zeta) for t in B",
        sets.b.iter().filter_map(|&t| {
            let rhs = dm(t) * consts.c / (F::one() + consts.zeta);
            (scale(t) + tol < rhs).then(|| format!("t={t} c^d={} rhs={rhs}", scale(t)))
        }),
    );
    let fixlem5_fail = sets.n_set.iter().enumerate().find_map(|(i, &s)| {
        sets.n_set[i + 1..].iter().find_map(|&t| {
            let d = oracle.dist(s, t);
            let bound = consts.omega * dm(s).min(dm(t));
            (d <= bound).then(|| format!("s={s} t={t} dist={d} bound={bound}"))
        })
    });
    let n_valid = fixlem5_fail.is_none();
    c.push(
        "fixlem5",
        "distinct s, t in N satisfy dist(s, t) > omega min(delta_M(s), delta_M(t))",
        fixlem5_fail.into_iter(),
    );
    if packing.greedy && n_valid && sets.n_set.len() > packing.size {
        packing = Packing { size: sets.n_set.len(), members: sets.n_set.clone(), greedy: true };
    }
    let fixlem6_statement = if packing.greedy {
        "|N| <= packing number (greedy lower bound, raised to |N| when N is itself a valid packing)"
    } else {
        "|N| <= packing number"
    };
    c.push_bool("fixlem6", fixlem6_statement, sets.n_set.len() <= packing.size, || {
        format!("|N|={} packing={}", sets.n_set.len(), packing.size)
    });

    let depth_cap = ((F::one() + consts.zeta) / (consts.c * q.epsilon)).log2();
    c.push(
        "fixlem7",
        "d(t) <= log2((1 + zeta) / (c epsilon)) for t in B",
        sets.b
            .iter()
            .filter(|&&t| F::lit(depth(t) as f64) > depth_cap + tol)
            .map(|t| format!("t={t} d={} cap={depth_cap}", depth(*t))),
    );
    let n_len = sets.n_set.len();
    let q_total: usize = sets.q.iter().map(|(_, qs)| qs.len()).sum();
    let n_max_depth = sets.n_set.iter().map(|t| depth(*t) as usize).max().unwrap_or(0);
    let surrogate = n_len * (n_max_depth + 1) + n_len;
    c.push_bool(
        "fixlem8",
        "|B| <= |N| + sum_{t in N} |Q(t)| <= |N| (max_{t in N} d(t) + 1) + |N|",
        sets.b.len() <= n_len + q_total && n_len + q_total <= surrogate,
        || format!("|B|={} |N|+sum|Q|={} surrogate={surrogate}", sets.b.len(), n_len + q_total),
    );
    c.push(
        "qnoinctblem",
        "anc(t) disjoint from B implies t not in CTS",
        trials(n).filter(|&t| !b_above(t) && in_cts(t)).map(|t| format!("t={t}")),
    );
    c.push(
        "cnanclem1",
        "every t lies in des(s) or anc(s) for some s in B",
        trials(n).filter(|&t| !b_above(t) && !b_below(t)).map(|t| format!("t={t}")),
    );
    let switches: Vec<TrialId> =
        trials(n).filter(|&t| tree.parent(t).is_some_and(|p| h[t.idx()] != h[p.idx()])).collect();
    c.push(
        "cnanclem3",
        "hbar(t) != hbar(parent(t)) implies t in anc(s) for some s in B",
        switches.iter().filter(|&&t| !b_below(t)).map(|t| format!("t={t}")),
    );
    c.push(
        "cnanclem4",
        "hbar(t) != hbar(parent(t)) implies t in B or some child of t is in B",
        switches
            .iter()
            .filter(|&&t| !in_b[t.idx()] && !tree.children(t).iter().any(|s| in_b[s.idx()]))
            .map(|t| format!("t={t}")),
    );
    c.push_bool("cbnnbolem", "Phi(hbar) <= 2 |B|", phi <= 2 * sets.b.len(), || {
        format!("Phi={phi} |B|={}", sets.b.len())
    });
    c.push(
        "hbivlem1",
        "t in V implies t in anc(s) for some s in B",
        v.iter().filter(|&&t| !b_below(t)).map(|t| format!("t={t}")),
    );
    let anc_total: usize = sets.b.iter().map(|t| rel.anc(*t).len()).sum();
    let anc_union = trials(n).filter(|&t| b_below(t)).count();
    c.push_bool(
        "hbivlem2",
        "|V| <= |union_{t in B} anc(t)| <= sum_{t in B} |anc(t)|",
        v.len() <= anc_union && anc_union <= anc_total,
        || format!("|V|={} union={anc_union} sum={anc_total}", v.len()),
    );
    let sz = consts.sigma * consts.zeta;
    c.push(
        "mmcleqphieq1",
        "s in des(t) implies dist(s, t) <= sigma zeta c^d(t)",
        trials(n).flat_map(|t| {
            let bound = sz * scale(t) + tol;
            rel.des(t).iter().filter_map(move |&s| {
                let d = oracle.dist(s, t);
                (d > bound).then(|| format!("t={t} s={s} dist={d} bound={bound}"))
            })
        }),
    );
    c.push(
        "mmcleqphieq2",
        "t in M and t in CTS implies hbar(t) in A(t)",
        trials(n)
            .filter(|&t| spec.in_margin(t) && in_cts(t) && !q.a_sets[t.idx()].contains(&h[t.idx()]))
            .map(|t| format!("t={t} hbar={} A={:?}", h[t.idx()] + 1, q.a_sets[t.idx()])),
    );
    let mut sum_l_tilde = None;
    if let (Some(src), Some(lt)) = (means, q.l_tilde.as_ref()) {
        let lhs: f64 = trials(n).map(|t| src.mean(t, h[t.idx()]).unwrap_or(f64::NAN)).sum();
        let rhs: f64 = lt.iter().sum::<f64>() + v.len() as f64;
        sum_l_tilde = Some(lt.iter().sum());
        c.push_bool(
            "vcpmalem",
            "sum_t E[loss(t, hbar(t))] <= sum_t Ltilde(t) + |V|",
            lhs <= rhs + 1e-9,
            || format!("lhs={lhs} rhs={rhs}"),
        );
    }

    let eps = q.epsilon.to_f64_lossy();
    let log_inv = if eps > 0.0 { (1.0 / eps).ln() } else { f64::INFINITY };
    let nk = packing.size as f64;
    let actions = match means {
        Some(src) => src.actions(),
        None => spec.policy.iter().max().map_or(1, |m| m + 1),
    };
    let root = ((actions * n) as f64).sqrt();
    let lambda = options.lambda;
    let bounds = BoundTerms {
        lambda,
        packing: packing.size,
        log_inv_epsilon: log_inv,
        n_log_sq: nk * log_inv * log_inv,
        tradeoff_plus: (lambda + nk * log_inv / lambda) * root,
        tradeoff_minus: (lambda - nk * log_inv / lambda) * root,
        sum_l_tilde,
    };

    Ok(AuditReport {
        trials: n,
        constants: *consts,
        margin: spec.members(),
        quantities: q,
        packing,
        cts: trials(n).filter(|&t| in_cts(t)).collect(),
        sets,
        hbar,
        v,
        phi,
        bounds,
        lemmas: c.into_inner(),
    })
}
