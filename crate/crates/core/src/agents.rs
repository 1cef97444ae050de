//! Full agents: routing plus the parent-fed subroutine, and the baselines.

use std::fmt::Write as _;

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::ann::{CoverTree, NeighborIndex};
use crate::bandit::{FixedShareTree, ParentFedBandit, SubroutineParams};
use crate::env::{rng_for, LossSource, AGENT_STREAM, LOSS_STREAM};
use crate::error::{invalid, Error, Result};
use crate::metric::{trials, DistanceOracle, TrialId};
use crate::router::{HnnRouter, Placement};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AgentKind {
    Hnn,
    Nn,
    Nan,
    NanDoubling,
    Exp3,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum NanMode {
    PerRho,
    Doubling,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TrialRow {
    pub trial: TrialId,
    /// 0-based; written 1-based.
    pub action: usize,
    pub loss: f64,
    pub prob: f64,
    pub parent: Option<TrialId>,
    pub depth: Option<u32>,
    pub dist_evals: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunMeta {
    pub label: String,
    pub agent: AgentKind,
    pub seed: u64,
    pub nu: Option<f64>,
    pub rho: Option<f64>,
    pub params: SubroutineParams,
    pub trials: usize,
    pub actions: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunRecord {
    pub meta: RunMeta,
    pub rows: Vec<TrialRow>,
    pub regret: Option<Vec<f64>>,
}

#[derive(Serialize)]
struct MetaJson<'a> {
    #[serde(flatten)]
    meta: &'a RunMeta,
    cumulative_loss: f64,
    final_regret: Option<f64>,
}

pub const CSV_HEADER: &str = "trial,action,loss,prob,parent,depth,dist_evals,regret";

impl RunRecord {
    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn actions(&self) -> Vec<usize> {
        self.rows.iter().map(|r| r.action).collect()
    }

    pub fn parents(&self) -> Vec<Option<TrialId>> {
        self.rows.iter().map(|r| r.parent).collect()
    }

    /// Prefix sums of sampled losses.
    pub fn cumulative_losses(&self) -> Vec<f64> {
        self.rows
            .iter()
            .scan(0.0, |acc, r| {
                *acc += r.loss;
                Some(*acc)
            })
            .collect()
    }

    pub fn cumulative_loss(&self) -> f64 {
        self.rows.iter().map(|r| r.loss).sum()
    }

    pub fn final_regret(&self) -> Option<f64> {
        self.regret.as_ref().and_then(|r| r.last().copied())
    }

    pub fn total_dist_evals(&self) -> u64 {
        self.rows.iter().map(|r| r.dist_evals).sum()
    }

    pub fn meta_json(&self) -> String {
        let doc = MetaJson { meta: &self.meta, cumulative_loss: self.cumulative_loss(), final_regret: self.final_regret() };
        let mut s = serde_json::to_string_pretty(&doc).expect("metadata serializes");
        s.push('\n');
        s
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::with_capacity(48 * (self.rows.len() + 1));
        out.push_str(CSV_HEADER);
        out.push('\n');
        for (i, r) in self.rows.iter().enumerate() {
            let parent = r.parent.map(|p| p.to_string()).unwrap_or_default();
            let depth = r.depth.map(|d| d.to_string()).unwrap_or_default();
            let regret = self.regret.as_ref().map(|g| g[i].to_string()).unwrap_or_default();
            writeln!(
                out,
                "{},{},{},{},{},{},{},{}",
                r.trial,
                r.action + 1,
                r.loss,
                r.prob,
                parent,
                depth,
                r.dist_evals,
                regret
            )
            .expect("writing to a string");
        }
        out
    }

    /// Parses the metadata JSON and per-trial CSV written by [`RunRecord::meta_json`]
    /// and [`RunRecord::to_csv`].
    pub fn parse(meta_json: &str, csv_text: &str) -> Result<Self> {
        let meta: RunMeta =
            serde_json::from_str(meta_json).map_err(|e| Error::Parse { line: e.line() as u64, message: e.to_string() })?;
        let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(csv_text.as_bytes());
        let header = rdr.headers().map_err(|e| Error::Parse { line: 1, message: e.to_string() })?;
        if header.iter().collect::<Vec<_>>().join(",") != CSV_HEADER {
            return Err(Error::Parse { line: 1, message: format!("expected header `{CSV_HEADER}`") });
        }
        let mut rows = Vec::new();
        let mut regret = Vec::new();
        for (i, rec) in rdr.records().enumerate() {
            let line = i as u64 + 2;
            let err = |m: String| Error::Parse { line, message: m };
            let rec = rec.map_err(|e| err(e.to_string()))?;
            let field = |j: usize| rec.get(j).unwrap_or("");
            let num = |j: usize| field(j).parse::<f64>().map_err(|e| err(format!("column {}: {e}", j + 1)));
            let int = |j: usize| field(j).parse::<u64>().map_err(|e| err(format!("column {}: {e}", j + 1)));
            let opt_int = |j: usize| -> Result<Option<u64>> {
                if field(j).is_empty() {
                    Ok(None)
                } else {
                    int(j).map(Some)
                }
            };
            let trial = int(0)? as usize;
            if trial != i + 1 {
                return Err(err(format!("expected trial {}", i + 1)));
            }
            let action = int(1)? as usize;
            if action == 0 || action > meta.actions {
                return Err(err(format!("action {action} out of range")));
            }
            let parent = opt_int(4)?.map(|p| p as usize);
            if parent.is_some_and(|p| p == 0 || p >= trial) {
                return Err(err("parent must be an earlier trial".into()));
            }
            rows.push(TrialRow {
                trial: TrialId::new(trial),
                action: action - 1,
                loss: num(2)?,
                prob: num(3)?,
                parent: parent.map(TrialId::new),
                depth: opt_int(5)?.map(|d| d as u32),
                dist_evals: int(6)?,
            });
            if !field(7).is_empty() {
                regret.push(num(7)?);
            }
        }
        let regret = match regret.len() {
            0 => None,
            n if n == rows.len() => Some(regret),
            _ => return Err(Error::Parse { line: 1, message: "regret column is partially filled".into() }),
        };
        Ok(RunRecord { meta, rows, regret })
    }
}

/// Reference for pseudo-regret.
#[derive(Clone, Copy, Debug)]
pub enum Reference<'a> {
    Policy(&'a [usize]),
    BestAction,
}

/// `curve[t] = sum_{s <= t} mean(s, a_s) - mean(s, ref(s))`.
pub fn regret_vs<L: LossSource + ?Sized>(record: &RunRecord, source: &L, reference: Reference<'_>) -> Result<Vec<f64>> {
    let mut acc = 0.0;
    let mut curve = Vec::with_capacity(record.rows.len());
    for row in &record.rows {
        let t = row.trial;
        let played = source.mean(t, row.action).ok_or(Error::MissingMeans)?;
        let reference = match reference {
            Reference::Policy(p) => {
                let a = *p.get(t.idx()).ok_or_else(|| invalid("reference policy is too short"))?;
                source.mean(t, a).ok_or(Error::MissingMeans)?
            }
            Reference::BestAction => (0..source.actions())
                .map(|a| source.mean(t, a).ok_or(Error::MissingMeans))
                .collect::<Result<Vec<_>>>()?
                .into_iter()
                .fold(f64::INFINITY, f64::min),
        };
        acc += played - reference;
        curve.push(acc);
    }
    Ok(curve)
}

enum Slot {
    Open(Option<TrialId>),
    Share(TrialId),
    /// Discard all subroutine state and open a fresh root.
    Restart,
}

struct Step {
    slot: Slot,
    parent: Option<TrialId>,
    depth: Option<u32>,
    dist_evals: u64,
}

trait Placer<D: ?Sized> {
    fn place(&mut self, oracle: &D, t: TrialId) -> Result<Step>;
    fn observe(&mut self, _t: TrialId, _loss: f64) {}
}

struct FnPlacer<F>(F);

impl<D: ?Sized, F: FnMut(&D, TrialId) -> Result<Step>> Placer<D> for FnPlacer<F> {
    fn place(&mut self, oracle: &D, t: TrialId) -> Result<Step> {
        (self.0)(oracle, t)
    }
}

/// Runs the protocol: per trial, reveal the new distances, place the trial,
/// play, and feed back the played action's loss only.
fn drive<D, L, P>(oracle: &D, source: &L, params: SubroutineParams, meta: RunMeta, placer: &mut P) -> Result<RunRecord>
where
    D: DistanceOracle<f64> + ?Sized,
    L: LossSource + ?Sized,
    P: Placer<D>,
{
    let n = oracle.num_trials();
    if n == 0 || source.trials() < n {
        return Err(invalid("the loss model must cover every trial of a non-empty instance"));
    }
    let actions = source.actions();
    let mut bandit = FixedShareTree::new(params, actions)?;
    let mut agent_rng: ChaCha8Rng = rng_for(meta.seed, AGENT_STREAM);
    let mut loss_rng: ChaCha8Rng = rng_for(meta.seed, LOSS_STREAM);
    let mut rows = Vec::with_capacity(n);
    for t in trials(n) {
        oracle.begin_trial(t);
        let step = placer.place(oracle, t)?;
        match step.slot {
            Slot::Open(parent) => bandit.open(t, parent)?,
            Slot::Share(rep) => bandit.share(t, rep)?,
            Slot::Restart => {
                bandit = FixedShareTree::new(params, actions)?;
                bandit.open(t, None)?;
            }
        }
        let (action, prob) = bandit.select(t, &mut agent_rng)?;
        let loss = source.sample(t, action, &mut loss_rng);
        bandit.update(t, action, loss, prob)?;
        placer.observe(t, loss);
        rows.push(TrialRow {
            trial: t,
            action,
            loss,
            prob,
            parent: step.parent,
            depth: step.depth,
            dist_evals: step.dist_evals,
        });
    }
    Ok(RunRecord { meta: RunMeta { trials: n, actions, ..meta }, rows, regret: None })
}

fn meta(label: String, agent: AgentKind, seed: u64, nu: Option<f64>, rho: Option<f64>, params: SubroutineParams) -> RunMeta {
    RunMeta { label, agent, seed, nu, rho, params, trials: 0, actions: 0 }
}

/// Hierarchical routing feeding the parent-fed subroutine.
pub fn run_hnn_cb<D, L>(oracle: &D, source: &L, nu: f64, params: SubroutineParams, seed: u64) -> Result<RunRecord>
where
    D: DistanceOracle<f64> + ?Sized,
    L: LossSource + ?Sized,
{
    let mut router: HnnRouter<f64> = HnnRouter::new(nu)?;
    let m = meta("hnn-cb".into(), AgentKind::Hnn, seed, Some(nu), None, params);
    drive(oracle, source, params, m, &mut FnPlacer(|o: &D, t| {
        let info = router.route(o, t)?;
        let slot = match info.placement {
            Placement::Root => Slot::Open(None),
            Placement::Routed { parent, .. } => Slot::Open(Some(parent)),
            Placement::Equivalent { rep } => Slot::Share(rep),
        };
        Ok(Step { slot, parent: info.parent(), depth: info.depth(), dist_evals: info.distance_evals })
    }))
}

/// Parent = approximate nearest neighbour among all earlier trials.
pub fn run_nn_cb<D, L>(oracle: &D, source: &L, nu: f64, params: SubroutineParams, seed: u64) -> Result<RunRecord>
where
    D: DistanceOracle<f64> + ?Sized,
    L: LossSource + ?Sized,
{
    check_nu(nu)?;
    let mut index: CoverTree<f64> = CoverTree::new();
    let m = meta("nn-cb".into(), AgentKind::Nn, seed, Some(nu), None, params);
    let mut depth: Vec<u32> = Vec::new();
    drive(oracle, source, params, m, &mut FnPlacer(|o: &D, t| {
        let before = index.distance_evals();
        if index.is_empty() {
            index.insert(o, t)?;
            depth.push(0);
            return Ok(Step { slot: Slot::Open(None), parent: None, depth: Some(0), dist_evals: 0 });
        }
        let nn = index.query(o, t, nu)?;
        if nn.dist <= 0.0 {
            depth.push(depth[nn.id.idx()]);
            let evals = index.distance_evals() - before;
            return Ok(Step { slot: Slot::Share(nn.id), parent: Some(nn.id), depth: None, dist_evals: evals });
        }
        index.insert(o, t)?;
        let d = depth[nn.id.idx()] + 1;
        depth.push(d);
        let evals = index.distance_evals() - before;
        Ok(Step { slot: Slot::Open(Some(nn.id)), parent: Some(nn.id), depth: Some(d), dist_evals: evals })
    }))
}

fn check_nu(nu: f64) -> Result<()> {
    if nu >= 1.0 && nu.is_finite() {
        Ok(())
    } else {
        Err(invalid(format!("nu must be >= 1, got {nu}")))
    }
}

/// Online binning at radius `rho` over representatives, with nearest-neighbour
/// parents among representatives.
struct Binner {
    rho: f64,
    nu: f64,
    reps: CoverTree<f64>,
    depth: Vec<Option<u32>>,
}

impl Binner {
    fn new(rho: f64, nu: f64) -> Self {
        Binner { rho, nu, reps: CoverTree::new(), depth: Vec::new() }
    }

    fn place<D: DistanceOracle<f64> + ?Sized>(&mut self, o: &D, t: TrialId, restart: bool) -> Result<Step> {
        let before = self.reps.distance_evals();
        if self.depth.len() < t.idx() {
            self.depth.resize(t.idx(), None);
        }
        if self.reps.is_empty() {
            self.reps.insert(o, t)?;
            self.depth.push(Some(0));
            let slot = if restart { Slot::Restart } else { Slot::Open(None) };
            return Ok(Step { slot, parent: None, depth: Some(0), dist_evals: 0 });
        }
        if let Some(rep) = self.reps.within(o, t, self.rho).first() {
            self.depth.push(None);
            let evals = self.reps.distance_evals() - before;
            return Ok(Step { slot: Slot::Share(rep.id), parent: Some(rep.id), depth: None, dist_evals: evals });
        }
        let nn = self.reps.query(o, t, self.nu)?;
        self.reps.insert(o, t)?;
        let d = self.depth[nn.id.idx()].map_or(1, |d| d + 1);
        self.depth.push(Some(d));
        let evals = self.reps.distance_evals() - before;
        Ok(Step { slot: Slot::Open(Some(nn.id)), parent: Some(nn.id), depth: Some(d), dist_evals: evals })
    }
}

pub fn nan_label(rho: f64) -> String {
    format!("nan-rho-{rho}")
}

/// Binning baseline. `PerRho` returns one record per radius in grid order;
/// `Doubling` returns a single record whose phases `[2^i, 2^{i+1})` each restart
/// with one radius: untried radii first in grid order, then the radius whose
/// latest phase had the lowest mean sampled loss (earlier grid entry on ties).
pub fn run_nan<D, L>(
    oracle: &D,
    source: &L,
    nu: f64,
    params: SubroutineParams,
    rho_grid: &[f64],
    mode: NanMode,
    seed: u64,
) -> Result<Vec<RunRecord>>
where
    D: DistanceOracle<f64> + ?Sized,
    L: LossSource + ?Sized,
{
    check_nu(nu)?;
    if rho_grid.is_empty() || rho_grid.iter().any(|r| !(*r > 0.0)) {
        return Err(invalid("rho grid must be non-empty and positive"));
    }
    if rho_grid.windows(2).any(|w| w[0] <= w[1]) {
        return Err(invalid("rho grid must be strictly descending"));
    }
    match mode {
        NanMode::PerRho => rho_grid
            .iter()
            .map(|&rho| {
                let mut binner = Binner::new(rho, nu);
                let m = meta(nan_label(rho), AgentKind::Nan, seed, Some(nu), Some(rho), params);
                drive(oracle, source, params, m, &mut FnPlacer(|o: &D, t| binner.place(o, t, false)))
            })
            .collect(),
        NanMode::Doubling => {
            let m = meta("nan-doubling".into(), AgentKind::NanDoubling, seed, Some(nu), None, params);
            let mut placer = Doubling {
                grid: rho_grid.to_vec(),
                nu,
                latest: vec![None; rho_grid.len()],
                current: 0,
                binner: Binner::new(rho_grid[0], nu),
                phase_loss: 0.0,
                phase_len: 0,
            };
            Ok(vec![drive(oracle, source, params, m, &mut placer)?])
        }
    }
}

struct Doubling {
    grid: Vec<f64>,
    nu: f64,
    latest: Vec<Option<f64>>,
    current: usize,
    binner: Binner,
    phase_loss: f64,
    phase_len: usize,
}

impl Doubling {
    fn next_rho(&self) -> usize {
        if let Some(untried) = self.latest.iter().position(Option::is_none) {
            return untried;
        }
        let score = |i: usize| self.latest[i].unwrap_or(f64::INFINITY);
        (0..self.grid.len()).fold(0, |b, i| if score(i) < score(b) { i } else { b })
    }
}

impl<D: DistanceOracle<f64> + ?Sized> Placer<D> for Doubling {
    fn place(&mut self, oracle: &D, t: TrialId) -> Result<Step> {
        let n = t.get();
        let restart = n > 1 && n.is_power_of_two();
        if restart {
            self.latest[self.current] = Some(self.phase_loss / self.phase_len as f64);
            self.current = self.next_rho();
            self.binner = Binner::new(self.grid[self.current], self.nu);
            self.phase_loss = 0.0;
            self.phase_len = 0;
        }
        self.binner.place(oracle, t, restart)
    }

    fn observe(&mut self, _t: TrialId, loss: f64) {
        self.phase_loss += loss;
        self.phase_len += 1;
    }
}

/// Context-free control: every trial shares the first trial's node.
pub fn run_exp3<D, L>(oracle: &D, source: &L, params: SubroutineParams, seed: u64) -> Result<RunRecord>
where
    D: DistanceOracle<f64> + ?Sized,
    L: LossSource + ?Sized,
{
    let m = meta("exp3".into(), AgentKind::Exp3, seed, None, None, params);
    drive(oracle, source, params, m, &mut FnPlacer(|_: &D, t| {
        let step = if t == TrialId::FIRST {
            Step { slot: Slot::Open(None), parent: None, depth: Some(0), dist_evals: 0 }
        } else {
            Step { slot: Slot::Share(TrialId::FIRST), parent: Some(TrialId::FIRST), depth: None, dist_evals: 0 }
        };
        Ok(step)
    }))
}
