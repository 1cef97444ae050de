use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use hnncb::{
    regret_vs, run_exp3, run_hnn_cb, run_nan, run_nn_cb, AgentKind, Environment, LossSource, Reference, RunRecord,
};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::{AgentConfig, ExperimentConfig};

pub const MANIFEST: &str = "manifest.json";
pub const RUNS_DIR: &str = "runs";

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Artifact {
    pub path: String,
    pub sha256: String,
    pub bytes: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub version: String,
    pub config: ExperimentConfig,
    pub artifacts: Vec<Artifact>,
}

impl Manifest {
    pub fn load(dir: &Path) -> Result<Self> {
        let path = dir.join(MANIFEST);
        let text = fs::read_to_string(&path).with_context(|| format!("reading {}", path.display()))?;
        serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
    }

    /// Run records listed in the manifest, in manifest order.
    pub fn runs(&self, dir: &Path) -> Result<Vec<RunRecord>> {
        self.artifacts
            .iter()
            .filter(|a| a.path.ends_with(".json") && a.path.starts_with(RUNS_DIR))
            .map(|a| {
                let meta_path = dir.join(&a.path);
                let csv_path = meta_path.with_extension("csv");
                let meta = fs::read_to_string(&meta_path).with_context(|| format!("reading {}", meta_path.display()))?;
                let csv = fs::read_to_string(&csv_path).with_context(|| format!("reading {}", csv_path.display()))?;
                RunRecord::parse(&meta, &csv).with_context(|| format!("parsing {}", csv_path.display()))
            })
            .collect()
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// `runs/<label>_seed<seed>` without extension.
pub fn run_stem(record: &RunRecord) -> String {
    format!("{RUNS_DIR}/{}_seed{}", record.meta.label, record.meta.seed)
}

/// Pseudo-regret against the environment's comparator, or the per-trial best action.
pub fn attach_regret(record: &mut RunRecord, env: &Environment) -> Result<()> {
    let reference = match &env.policy {
        Some(p) => Reference::Policy(p),
        None => Reference::BestAction,
    };
    record.regret = Some(regret_vs(record, &env.loss, reference)?);
    Ok(())
}

pub fn run_agent(agent: &AgentConfig, env: &Environment, seed: u64) -> Result<Vec<RunRecord>> {
    let inst = &env.instance;
    let params = agent.params(inst.trials(), env.loss.actions())?;
    let records = match agent.kind {
        AgentKind::Hnn => vec![run_hnn_cb(inst, &env.loss, agent.nu(), params, seed)?],
        AgentKind::Nn => vec![run_nn_cb(inst, &env.loss, agent.nu(), params, seed)?],
        AgentKind::Exp3 => vec![run_exp3(inst, &env.loss, params, seed)?],
        AgentKind::Nan | AgentKind::NanDoubling => {
            let mode = agent.nan_mode().expect("nan agents have a mode");
            run_nan(inst, &env.loss, agent.nu(), params, &agent.rho_grid(), mode, seed)?
        }
    };
    Ok(records)
}

fn write_artifact(out: &Path, rel: &str, bytes: &[u8]) -> Result<Artifact> {
    let path = out.join(rel);
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    fs::write(&path, bytes).with_context(|| format!("writing {}", path.display()))?;
    Ok(Artifact { path: rel.to_string(), sha256: sha256_hex(bytes), bytes: bytes.len() as u64 })
}

/// Runs every (agent, seed) pair, writes one CSV and one JSON file per run
/// record plus `manifest.json`, and returns the manifest.
pub fn cmd_run(cfg: &ExperimentConfig, out: &Path) -> Result<Manifest> {
    cfg.validate()?;
    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    let jobs: Vec<(u64, &AgentConfig)> =
        cfg.seeds.iter().flat_map(|&s| cfg.agents.iter().map(move |a| (s, a))).collect();
    let pool = rayon::ThreadPoolBuilder::new().num_threads(cfg.parallel).build()?;
    let results: Vec<Result<Vec<Artifact>>> = pool.install(|| {
        jobs.par_iter()
            .map(|&(seed, agent)| {
                let env = cfg.env.generate(seed).with_context(|| format!("generating environment for seed {seed}"))?;
                let mut artifacts = Vec::new();
                for mut record in run_agent(agent, &env, seed)? {
                    attach_regret(&mut record, &env)?;
                    let stem = run_stem(&record);
                    artifacts.push(write_artifact(out, &format!("{stem}.csv"), record.to_csv().as_bytes())?);
                    artifacts.push(write_artifact(out, &format!("{stem}.json"), record.meta_json().as_bytes())?);
                }
                Ok(artifacts)
            })
            .collect()
    });
    let mut artifacts = Vec::new();
    for r in results {
        artifacts.extend(r?);
    }
    artifacts.sort_by(|a, b| a.path.cmp(&b.path));
    let mut seen = BTreeSet::new();
    for a in &artifacts {
        if !seen.insert(&a.path) {
            bail!("two runs would write {}; give agents distinct kinds or parameters", a.path);
        }
    }
    let mut stored = cfg.clone();
    stored.out = None;
    let manifest = Manifest { version: env!("CARGO_PKG_VERSION").into(), config: stored, artifacts };
    let mut text = serde_json::to_string_pretty(&manifest)?;
    text.push('\n');
    fs::write(out.join(MANIFEST), text).with_context(|| format!("writing manifest in {}", out.display()))?;
    Ok(manifest)
}

/// Resolves the output directory: explicit flag, then config, then `runs-out`.
pub fn out_dir(cfg: &ExperimentConfig, flag: Option<&Path>) -> PathBuf {
    flag.map(Path::to_path_buf).or_else(|| cfg.out.clone()).unwrap_or_else(|| PathBuf::from("runs-out"))
}
