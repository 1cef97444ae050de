//! Instance generators and loss models.

use std::io::Read;

use rand::seq::SliceRandom;
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::metric::{read_metric_csv, trials, DistanceOracle, MetricInstance, TrialId};

/// Stream used by agents for action sampling.
pub const AGENT_STREAM: u64 = 0;
/// Stream used for loss sampling; shared by all agents on the same seed.
pub const LOSS_STREAM: u64 = 1;
/// Stream used by instance generators.
pub const ENV_STREAM: u64 = 2;

pub fn rng_for(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Per-trial loss distributions as seen by an agent.
pub trait LossSource {
    fn trials(&self) -> usize;
    fn actions(&self) -> usize;
    /// Exact expected loss, when known.
    fn mean(&self, t: TrialId, action: usize) -> Option<f64>;
    fn sample(&self, t: TrialId, action: usize, rng: &mut dyn RngCore) -> f64;
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    /// Loss is 1 with probability equal to the mean, else 0.
    Bernoulli,
    /// Loss always equals the mean.
    Deterministic,
}

#[derive(Clone, Debug, PartialEq)]
pub struct LossModel {
    kind: LossKind,
    actions: usize,
    means: Vec<f64>,
}

impl LossModel {
    /// `rows[t][a]` is the mean of trial `t + 1` and action `a`.
    pub fn new(kind: LossKind, rows: &[Vec<f64>]) -> Result<Self> {
        let actions = rows.first().map_or(0, Vec::len);
        if actions == 0 || rows.iter().any(|r| r.len() != actions) {
            return Err(invalid("loss table must be rectangular with at least one action"));
        }
        if let Some(x) = rows.iter().flatten().find(|x| !(0.0..=1.0).contains(*x)) {
            return Err(Error::InvalidLoss(*x));
        }
        Ok(LossModel { kind, actions, means: rows.concat() })
    }

    /// Mean `0.5 - gap/2` on the policy's action and `0.5 + gap/2` elsewhere.
    pub fn gapped(policy: &[usize], actions: usize, gap: f64) -> Result<Self> {
        if !(gap > 0.0 && gap <= 1.0) {
            return Err(invalid(format!("gap must lie in (0, 1], got {gap}")));
        }
        let rows: Vec<Vec<f64>> = policy
            .iter()
            .map(|&y| (0..actions).map(|a| if a == y { 0.5 - gap / 2.0 } else { 0.5 + gap / 2.0 }).collect())
            .collect();
        Self::new(LossKind::Bernoulli, &rows)
    }

    pub fn kind(&self) -> LossKind {
        self.kind
    }

    pub fn row(&self, t: TrialId) -> &[f64] {
        &self.means[t.idx() * self.actions..(t.idx() + 1) * self.actions]
    }

    /// Action with the lowest mean, smallest index on ties.
    pub fn best_action(&self, t: TrialId) -> usize {
        let row = self.row(t);
        (0..self.actions).fold(0, |b, a| if row[a] < row[b] { a } else { b })
    }

    /// Writes `trial,mean_a1..` (Bernoulli) or `trial,loss_a1..` (deterministic),
    /// with a trailing 1-based `policy` column when a policy is given.
    pub fn to_csv(&self, policy: Option<&[usize]>) -> String {
        let prefix = match self.kind {
            LossKind::Bernoulli => "mean_a",
            LossKind::Deterministic => "loss_a",
        };
        let mut out = String::from("trial");
        for a in 1..=self.actions {
            out.push_str(&format!(",{prefix}{a}"));
        }
        if policy.is_some() {
            out.push_str(",policy");
        }
        out.push('\n');
        for t in trials(self.trials()) {
            out.push_str(&t.to_string());
            for m in self.row(t) {
                out.push_str(&format!(",{m}"));
            }
            if let Some(p) = policy {
                out.push_str(&format!(",{}", p[t.idx()] + 1));
            }
            out.push('\n');
        }
        out
    }
}

impl LossSource for LossModel {
    fn trials(&self) -> usize {
        self.means.len() / self.actions
    }

    fn actions(&self) -> usize {
        self.actions
    }

    fn mean(&self, t: TrialId, action: usize) -> Option<f64> {
        if action >= self.actions {
            return None;
        }
        self.means.get(t.idx() * self.actions + action).copied()
    }

    fn sample(&self, t: TrialId, action: usize, rng: &mut dyn RngCore) -> f64 {
        let m = self.row(t)[action];
        match self.kind {
            LossKind::Deterministic => m,
            LossKind::Bernoulli => {
                let u: f64 = rng.random();
                if u < m { 1.0 } else { 0.0 }
            }
        }
    }
}

/// A generated or ingested environment.
#[derive(Clone, Debug)]
pub struct Environment {
    pub instance: MetricInstance<f64>,
    /// Comparator action per trial (0-based).
    pub policy: Option<Vec<usize>>,
    /// Margin membership per trial.
    pub margin: Option<Vec<bool>>,
    pub loss: LossModel,
    /// Which generating component each trial came from (ball or cluster index).
    pub group: Option<Vec<usize>>,
}

/// Uniform point in the ball of the given radius around `center`.
pub fn sample_ball<R: Rng + ?Sized>(rng: &mut R, center: &[f64], radius: f64) -> Vec<f64> {
    let dim = center.len();
    loop {
        let g: Vec<f64> = (0..dim).map(|_| rng.sample(StandardNormal)).collect();
        let norm = g.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm == 0.0 {
            continue;
        }
        let u: f64 = rng.random();
        let rad = radius * u.powf(1.0 / dim as f64);
        return center.iter().zip(&g).map(|(c, x)| c + rad * x / norm).collect();
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TwoBallsConfig {
    pub dim: usize,
    /// Radius of the second ball; the first has radius 1.
    pub r: f64,
    /// Contexts per ball.
    pub per_ball: usize,
    pub gap: f64,
    pub seed: u64,
    /// Shuffle the two balls' contexts together (otherwise ball 1 then ball 2).
    pub interleave: bool,
    pub centers: Option<[Vec<f64>; 2]>,
}

impl TwoBallsConfig {
    pub fn new(dim: usize, r: f64, per_ball: usize, gap: f64, seed: u64) -> Self {
        TwoBallsConfig { dim, r, per_ball, gap, seed, interleave: true, centers: None }
    }

    pub fn centers(&self) -> [Vec<f64>; 2] {
        self.centers.clone().unwrap_or_else(|| {
            let mut far = vec![0.0; self.dim];
            far[0] = 2.0 + self.r + 0.1;
            [vec![0.0; self.dim], far]
        })
    }
}

/// Two disjoint balls (radii 1 and `r`), each split by the hyperplane through
/// its centre orthogonal to the second axis. Points on the hyperplane get action 0.
pub fn gen_two_balls(cfg: &TwoBallsConfig) -> Result<Environment> {
    if cfg.dim < 2 || !(cfg.r > 0.0 && cfg.r <= 1.0) || cfg.per_ball == 0 {
        return Err(invalid("two balls need dim >= 2, r in (0, 1] and at least one context per ball"));
    }
    let centers = cfg.centers();
    if centers.iter().any(|c| c.len() != cfg.dim) {
        return Err(invalid("ball centres must match the dimension"));
    }
    let radii = [1.0, cfg.r];
    let gap_between = norm_diff(&centers[0], &centers[1]);
    if gap_between <= radii[0] + radii[1] {
        return Err(Error::OverlappingBalls);
    }
    let scale = (gap_between + radii[0] + radii[1]) * (1.0 + 1e-12);

    let mut rng = rng_for(cfg.seed, ENV_STREAM);
    let mut order: Vec<usize> = (0..2 * cfg.per_ball).map(|i| i / cfg.per_ball).collect();
    if cfg.interleave {
        order.shuffle(&mut rng);
    }
    let mut coords = Vec::with_capacity(order.len() * cfg.dim);
    let mut policy = Vec::with_capacity(order.len());
    for &b in &order {
        let x = sample_ball(&mut rng, &centers[b], radii[b]);
        policy.push(usize::from(x[1] - centers[b][1] > 0.0));
        coords.extend(x.iter().map(|v| v / scale));
    }
    let instance = MetricInstance::from_points_unscaled(coords, cfg.dim, 2);
    let loss = LossModel::gapped(&policy, 2, cfg.gap)?;
    Ok(Environment { instance, policy: Some(policy), margin: None, loss, group: Some(order) })
}

/// Two-action policy on the Euclidean domain. Boundary points get action 0.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "shape", rename_all = "snake_case")]
pub enum ExtendedPolicy {
    /// Action 0 where `normal . x <= offset`.
    HalfSpace { normal: Vec<f64>, offset: f64 },
    /// Action 0 inside the closed ball.
    Ball { center: Vec<f64>, radius: f64 },
}

impl ExtendedPolicy {
    pub fn label(&self, x: &[f64]) -> usize {
        let inside = match self {
            ExtendedPolicy::HalfSpace { normal, offset } => dot(normal, x) <= *offset,
            ExtendedPolicy::Ball { center, radius } => norm_diff(center, x) <= *radius,
        };
        usize::from(!inside)
    }

    /// A point of the segment `a -> b` within `tol` (in segment parameter) of
    /// a label change, found by bisection. Requires the endpoints to differ.
    pub fn crossing(&self, a: &[f64], b: &[f64], tol: f64) -> Option<Vec<f64>> {
        let la = self.label(a);
        if la == self.label(b) {
            return None;
        }
        let at = |s: f64| -> Vec<f64> { a.iter().zip(b).map(|(x, y)| x + s * (y - x)).collect() };
        let (mut lo, mut hi) = (0.0f64, 1.0f64);
        while hi - lo > tol {
            let mid = 0.5 * (lo + hi);
            if self.label(&at(mid)) == la {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        Some(at(0.5 * (lo + hi)))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CoverBall {
    pub center: Vec<f64>,
    pub radius: f64,
}

impl CoverBall {
    pub fn contains(&self, x: &[f64], inflate: f64, tol: f64) -> bool {
        norm_diff(&self.center, x) <= inflate * self.radius + tol
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoundaryCoverConfig {
    pub policy: ExtendedPolicy,
    pub cover: Vec<CoverBall>,
    pub xi: f64,
    pub c_exp: f64,
    pub trials: usize,
    pub dim: usize,
    pub gap: f64,
    pub seed: u64,
}

/// Slack for "inside a cover ball" tests on bisection output.
pub const COVER_TOL: f64 = 1e-9;
/// Bisection accuracy for boundary crossings.
pub const CROSSING_TOL: f64 = 1e-12;

impl BoundaryCoverConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.xi > 1.0) || !(self.c_exp > 0.0) || self.trials == 0 || self.dim == 0 {
            return Err(invalid("boundary cover needs xi > 1, C > 0, T >= 1 and dim >= 1"));
        }
        if self.cover.is_empty() || self.cover.iter().any(|b| b.center.len() != self.dim || !(b.radius > 0.0)) {
            return Err(invalid("cover balls must be non-empty with positive radii in the context dimension"));
        }
        let floor = (self.trials as f64).powf(-self.c_exp);
        if self.cover.iter().any(|b| b.radius < floor) {
            return Err(invalid(format!("cover radii must be at least T^-C = {floor}")));
        }
        Ok(())
    }

    /// Trials within `xi * r_i` of some cover centre.
    pub fn margin_of(&self, contexts: &[Vec<f64>]) -> Vec<bool> {
        contexts.iter().map(|x| self.cover.iter().any(|b| b.contains(x, self.xi, 0.0))).collect()
    }
}

/// Nearest trial outside the margin with a different label, smallest id on ties.
pub fn opposite_nearest<D: DistanceOracle<f64> + ?Sized>(
    oracle: &D,
    policy: &[usize],
    margin: &[bool],
    t: TrialId,
) -> Option<TrialId> {
    let mut best: Option<(f64, TrialId)> = None;
    for s in trials(oracle.num_trials()) {
        if margin[s.idx()] || policy[s.idx()] == policy[t.idx()] {
            continue;
        }
        let d = oracle.dist(s, t);
        if best.is_none_or(|(bd, _)| d < bd) {
            best = Some((d, s));
        }
    }
    best.map(|(_, s)| s)
}

/// Contexts uniform in the ball of radius 1/2 at the origin, labelled by the
/// extended policy; the margin is the xi-inflated cover.
pub fn gen_boundary_cover(cfg: &BoundaryCoverConfig) -> Result<Environment> {
    cfg.validate()?;
    let mut rng = rng_for(cfg.seed, ENV_STREAM);
    let origin = vec![0.0; cfg.dim];
    let contexts: Vec<Vec<f64>> = (0..cfg.trials).map(|_| sample_ball(&mut rng, &origin, 0.5)).collect();
    let policy: Vec<usize> = contexts.iter().map(|x| cfg.policy.label(x)).collect();
    let margin = cfg.margin_of(&contexts);
    let instance = MetricInstance::from_points_unscaled(contexts.concat(), cfg.dim, 2);

    for t in trials(cfg.trials) {
        if margin[t.idx()] {
            continue;
        }
        if let Some(q) = opposite_nearest(&instance, &policy, &margin, t) {
            let b = cfg
                .policy
                .crossing(&contexts[t.idx()], &contexts[q.idx()], CROSSING_TOL)
                .ok_or(Error::CoverViolation { trial: t })?;
            if !cfg.cover.iter().any(|ball| ball.contains(&b, 1.0, COVER_TOL)) {
                return Err(Error::CoverViolation { trial: t });
            }
        }
    }
    let loss = LossModel::gapped(&policy, 2, cfg.gap)?;
    Ok(Environment { instance, policy: Some(policy), margin: Some(margin), loss, group: None })
}

/// Random point clouds in `[0,1]^dim`, scaled into diameter 1, with a policy
/// given by the nearest of `actions` random anchors.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CloudConfig {
    pub dim: usize,
    pub trials: usize,
    pub actions: usize,
    pub gap: f64,
    pub seed: u64,
    /// Number of Gaussian clusters; `0` means uniform.
    pub clusters: usize,
    /// Standard deviation of each cluster.
    pub spread: f64,
}

impl CloudConfig {
    pub fn uniform(dim: usize, trials: usize, actions: usize, gap: f64, seed: u64) -> Self {
        CloudConfig { dim, trials, actions, gap, seed, clusters: 0, spread: 0.0 }
    }

    pub fn clustered(dim: usize, trials: usize, actions: usize, gap: f64, seed: u64) -> Self {
        CloudConfig { dim, trials, actions, gap, seed, clusters: 5, spread: 0.03 }
    }
}

/// Raw contexts in `[0,1]^dim` (before scaling) and their cluster index.
pub fn cloud_points(cfg: &CloudConfig) -> Result<(Vec<Vec<f64>>, Vec<usize>)> {
    if cfg.dim == 0 || cfg.trials == 0 || cfg.actions == 0 {
        return Err(invalid("clouds need dim, T and K positive"));
    }
    let mut rng = rng_for(cfg.seed, ENV_STREAM);
    if cfg.clusters == 0 {
        let pts = (0..cfg.trials).map(|_| (0..cfg.dim).map(|_| rng.random::<f64>()).collect()).collect();
        return Ok((pts, vec![0; cfg.trials]));
    }
    if !(cfg.spread > 0.0) {
        return Err(invalid("cluster spread must be positive"));
    }
    let centers: Vec<Vec<f64>> =
        (0..cfg.clusters).map(|_| (0..cfg.dim).map(|_| rng.random::<f64>()).collect()).collect();
    let mut pts = Vec::with_capacity(cfg.trials);
    let mut group = Vec::with_capacity(cfg.trials);
    for _ in 0..cfg.trials {
        let k = rng.random_range(0..cfg.clusters);
        let p = centers[k]
            .iter()
            .map(|c| (c + cfg.spread * rng.sample::<f64, _>(StandardNormal)).clamp(0.0, 1.0))
            .collect();
        pts.push(p);
        group.push(k);
    }
    Ok((pts, group))
}

pub fn gen_cloud(cfg: &CloudConfig) -> Result<Environment> {
    let (pts, group) = cloud_points(cfg)?;
    let mut rng = rng_for(cfg.seed, ENV_STREAM + 1);
    let anchors: Vec<Vec<f64>> =
        (0..cfg.actions).map(|_| (0..cfg.dim).map(|_| rng.random::<f64>()).collect()).collect();
    let policy: Vec<usize> = pts
        .iter()
        .map(|x| {
            let d: Vec<f64> = anchors.iter().map(|a| norm_diff(a, x)).collect();
            (0..cfg.actions).fold(0, |b, a| if d[a] < d[b] { a } else { b })
        })
        .collect();
    let scale = (cfg.dim as f64).sqrt().max(1.0) * (1.0 + 1e-12);
    let coords: Vec<f64> = pts.iter().flatten().map(|v| v / scale).collect();
    let instance = MetricInstance::from_points_unscaled(coords, cfg.dim, cfg.actions);
    let loss = LossModel::gapped(&policy, cfg.actions, cfg.gap)?;
    let group = (cfg.clusters > 0).then_some(group);
    Ok(Environment { instance, policy: Some(policy), margin: None, loss, group })
}

/// Reads a metric file and a loss table. The loss header is
/// `trial,loss_a1,...,loss_aK` (deterministic) or `trial,mean_a1,...,mean_aK`
/// (Bernoulli), optionally followed by a 1-based `policy` column.
pub fn ingest_csv<M: Read, L: Read>(metric: M, losses: L) -> Result<Environment> {
    let (loss, policy) = read_loss_csv(losses)?;
    let instance = read_metric_csv::<f64, _>(metric, loss.actions)?;
    if instance.trials() != loss.trials() {
        return Err(Error::Parse {
            line: 1,
            message: format!("metric has {} trials but loss table has {}", instance.trials(), loss.trials()),
        });
    }
    Ok(Environment { instance, policy, margin: None, loss, group: None })
}

pub fn read_loss_csv<R: Read>(reader: R) -> Result<(LossModel, Option<Vec<usize>>)> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).trim(csv::Trim::All).from_reader(reader);
    let parse_err = |line: u64, message: String| Error::Parse { line, message };
    let header = rdr.headers().map_err(|e| parse_err(1, e.to_string()))?.clone();
    let cols: Vec<&str> = header.iter().collect();
    if cols.first() != Some(&"trial") {
        return Err(parse_err(1, "loss table must start with a `trial` column".into()));
    }
    let has_policy = cols.last() == Some(&"policy");
    let value_cols = &cols[1..cols.len() - usize::from(has_policy)];
    let kind = match value_cols.first() {
        Some(c) if c.starts_with("loss_a") => LossKind::Deterministic,
        Some(c) if c.starts_with("mean_a") => LossKind::Bernoulli,
        _ => return Err(parse_err(1, "expected loss_a1.. or mean_a1.. columns".into())),
    };
    let prefix = if kind == LossKind::Deterministic { "loss_a" } else { "mean_a" };
    for (i, c) in value_cols.iter().enumerate() {
        if *c != format!("{prefix}{}", i + 1) {
            return Err(parse_err(1, format!("unexpected column `{c}`")));
        }
    }
    let k = value_cols.len();
    let mut rows = Vec::new();
    let mut policy = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let line = i as u64 + 2;
        let rec = rec.map_err(|e| parse_err(line, e.to_string()))?;
        let num = |j: usize| -> Result<f64> {
            rec.get(j)
                .ok_or_else(|| parse_err(line, "missing field".into()))?
                .parse::<f64>()
                .map_err(|e| parse_err(line, e.to_string()))
        };
        let trial = num(0)?;
        if trial != (i + 1) as f64 {
            return Err(parse_err(line, format!("expected trial {}", i + 1)));
        }
        let row: Vec<f64> = (1..=k).map(num).collect::<Result<_>>()?;
        if let Some(x) = row.iter().find(|x| !(0.0..=1.0).contains(*x)) {
            return Err(parse_err(line, format!("loss {x} outside [0, 1]")));
        }
        rows.push(row);
        if has_policy {
            let a = num(k + 1)?;
            if a.fract() != 0.0 || a < 1.0 || a > k as f64 {
                return Err(parse_err(line, format!("policy action {a} out of range")));
            }
            policy.push(a as usize - 1);
        }
    }
    if rows.is_empty() {
        return Err(parse_err(2, "loss table has no rows".into()));
    }
    Ok((LossModel::new(kind, &rows)?, has_policy.then_some(policy)))
}
