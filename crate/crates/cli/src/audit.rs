use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use hnncb::audit::{theorem2_margin, verify_lemmas, AnalysisConstants, AuditOptions, MarginSpec};
use hnncb::{AgentKind, Environment, LossSource, RoutingTree, RunRecord, TrialId};

use crate::run::Manifest;

pub const AUDIT_DIR: &str = "audit";

/// Where the margin comes from.
#[derive(Clone, Debug, PartialEq)]
pub enum MarginSource {
    Empty,
    /// The environment's own margin (boundary-cover instances).
    Env,
    File(PathBuf),
}

impl MarginSource {
    pub fn parse(s: &str) -> Self {
        match s {
            "empty" => MarginSource::Empty,
            "env" => MarginSource::Env,
            path => MarginSource::File(PathBuf::from(path)),
        }
    }

    fn members(&self, env: &Environment) -> Result<Vec<TrialId>> {
        match self {
            MarginSource::Empty => Ok(Vec::new()),
            MarginSource::Env => {
                let m = env.margin.as_ref().context("--margin env needs an environment that defines a margin")?;
                Ok(m.iter().enumerate().filter(|(_, b)| **b).map(|(i, _)| TrialId::from_idx(i)).collect())
            }
            MarginSource::File(path) => read_margin_file(path),
        }
    }
}

/// Whitespace or comma separated 1-based trial ids; `#` starts a comment.
pub fn read_margin_file(path: &Path) -> Result<Vec<TrialId>> {
    let text = fs::read_to_string(path).with_context(|| format!("reading margin file {}", path.display()))?;
    let mut out = Vec::new();
    for line in text.lines() {
        let line = line.split('#').next().unwrap_or("");
        for tok in line.split(|c: char| c == ',' || c.is_whitespace()).filter(|t| !t.is_empty()) {
            let n: usize = tok.parse().with_context(|| format!("bad trial id `{tok}` in {}", path.display()))?;
            if n == 0 {
                bail!("trial ids are 1-based");
            }
            out.push(TrialId::new(n));
        }
    }
    Ok(out)
}

#[derive(Debug, Default)]
pub struct AuditOutcome {
    pub files: Vec<PathBuf>,
    /// `file: lemma: witness` for each failed check.
    pub failures: Vec<String>,
}

impl AuditOutcome {
    pub fn passed(&self) -> bool {
        self.failures.is_empty()
    }
}

/// Routing tree recorded in a run's parent and depth columns.
pub fn recorded_tree(record: &RunRecord) -> Result<RoutingTree> {
    let depths = record
        .rows
        .iter()
        .map(|r| r.depth.with_context(|| format!("trial {} has no recorded depth", r.trial)))
        .collect::<Result<Vec<u32>>>()?;
    Ok(RoutingTree::new(record.parents(), depths)?)
}

fn comparator(env: &Environment) -> Vec<usize> {
    match &env.policy {
        Some(p) => p.clone(),
        None => hnncb::trials(env.loss.trials()).map(|t| env.loss.best_action(t)).collect(),
    }
}

/// Audits every HNN-CB run in `dir` for each sigma, writing one JSON report per
/// (run, sigma) under `audit/`.
pub fn cmd_audit(dir: &Path, sigma: Option<Vec<f64>>, margin: Option<MarginSource>) -> Result<AuditOutcome> {
    let manifest = Manifest::load(dir)?;
    let defaults = manifest.config.audit.clone().unwrap_or_default();
    let sigmas = sigma.unwrap_or_else(|| defaults.sigma.clone());
    let margin = margin.unwrap_or_else(|| MarginSource::parse(&defaults.margin));
    if sigmas.is_empty() {
        bail!("no sigma values to audit");
    }
    let runs: Vec<RunRecord> =
        manifest.runs(dir)?.into_iter().filter(|r| r.meta.agent == AgentKind::Hnn).collect();
    if runs.is_empty() {
        bail!("no hnn-cb runs in {}", dir.display());
    }
    fs::create_dir_all(dir.join(AUDIT_DIR))?;
    let mut outcome = AuditOutcome::default();
    for record in &runs {
        let seed = record.meta.seed;
        let env = manifest.config.env.generate(seed)?;
        let tree = recorded_tree(record)?;
        let spec = MarginSpec::from_members(comparator(&env), &margin.members(&env)?)
            .context("the comparator policy must use two actions outside the margin")?;
        let nu = record.meta.nu.context("hnn-cb run without nu")?;
        for &s in &sigmas {
            let consts = AnalysisConstants::new(s, nu)?;
            let report = verify_lemmas(&env.instance, &tree, &spec, &consts, Some(&env.loss), AuditOptions::default())?;
            let name = format!("{AUDIT_DIR}/{}_seed{seed}_sigma{s}.json", record.meta.label);
            for f in report.failures() {
                outcome.failures.push(format!("{name}: {}: {}", f.lemma_id, f.witness.as_deref().unwrap_or("")));
            }
            fs::write(dir.join(&name), report.to_json())?;
            outcome.files.push(dir.join(&name));
            if let (Some(cover), MarginSource::Env) = (manifest.config.env.boundary_cover(seed), &margin) {
                let t2 = theorem2_margin(&env.instance, &cover, &consts, Some(&env.loss))?;
                let name = format!("{AUDIT_DIR}/{}_seed{seed}_sigma{s}_cover.json", record.meta.label);
                for f in t2.lemmas.iter().filter(|l| !l.pass) {
                    outcome.failures.push(format!("{name}: {}: {}", f.lemma_id, f.witness.as_deref().unwrap_or("")));
                }
                let mut text = serde_json::to_string_pretty(&t2)?;
                text.push('\n');
                fs::write(dir.join(&name), text)?;
                outcome.files.push(dir.join(&name));
            }
        }
    }
    Ok(outcome)
}
