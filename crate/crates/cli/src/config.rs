use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, ensure, Context, Result};
use hnncb::{
    gen_boundary_cover, gen_cloud, gen_two_balls, ingest_csv, AgentKind, BoundaryCoverConfig, CloudConfig, CoverBall,
    Environment, ExtendedPolicy, NanMode, SubroutineParams, TwoBallsConfig,
};
use serde::{Deserialize, Serialize};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Output directory; relative paths resolve against the working directory.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub out: Option<PathBuf>,
    pub seeds: Vec<u64>,
    #[serde(default = "one", skip_serializing_if = "is_one")]
    pub parallel: usize,
    pub env: EnvConfig,
    #[serde(default)]
    pub agents: Vec<AgentConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub audit: Option<AuditConfig>,
}

fn one() -> usize {
    1
}

fn is_one(x: &usize) -> bool {
    *x == 1
}

fn yes() -> bool {
    true
}

fn half() -> f64 {
    0.5
}

fn two_d() -> usize {
    2
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum EnvConfig {
    TwoBalls {
        #[serde(default = "two_d")]
        dim: usize,
        r: f64,
        per_ball: usize,
        #[serde(default = "half")]
        gap: f64,
        #[serde(default = "yes")]
        interleave: bool,
    },
    BoundaryCover {
        policy: ExtendedPolicy,
        cover: Vec<CoverBall>,
        xi: f64,
        c_exp: f64,
        trials: usize,
        #[serde(default = "two_d")]
        dim: usize,
        #[serde(default = "half")]
        gap: f64,
    },
    Cloud {
        #[serde(default = "two_d")]
        dim: usize,
        trials: usize,
        actions: usize,
        #[serde(default = "half")]
        gap: f64,
        #[serde(default)]
        clustered: bool,
    },
    Csv {
        metric: PathBuf,
        losses: PathBuf,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AgentConfig {
    pub kind: AgentKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub nu: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lambda: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eta: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gamma: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub theta: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rho_grid: Option<Vec<f64>>,
}

pub const DEFAULT_NU: f64 = 2.0;

/// `2^-k` for `k = 0..=6`.
pub fn default_rho_grid() -> Vec<f64> {
    (0..=6).map(|k| 0.5f64.powi(k)).collect()
}

impl AgentConfig {
    pub fn new(kind: AgentKind) -> Self {
        AgentConfig { kind, nu: None, lambda: None, eta: None, gamma: None, theta: None, rho_grid: None }
    }

    pub fn nu(&self) -> f64 {
        self.nu.unwrap_or(DEFAULT_NU)
    }

    pub fn rho_grid(&self) -> Vec<f64> {
        self.rho_grid.clone().unwrap_or_else(default_rho_grid)
    }

    pub fn nan_mode(&self) -> Option<NanMode> {
        match self.kind {
            AgentKind::Nan => Some(NanMode::PerRho),
            AgentKind::NanDoubling => Some(NanMode::Doubling),
            _ => None,
        }
    }

    /// Defaults from `(T, K, lambda)` with explicit overrides applied.
    pub fn params(&self, trials: usize, actions: usize) -> Result<SubroutineParams> {
        let mut p = SubroutineParams::defaults(trials, actions, self.lambda.unwrap_or(1.0))?;
        if let Some(eta) = self.eta {
            p.eta = eta;
        }
        if let Some(gamma) = self.gamma {
            p.gamma = gamma;
        }
        if let Some(theta) = self.theta {
            p.theta = theta;
        }
        p.validate()?;
        Ok(p)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AuditConfig {
    #[serde(default = "default_sigmas")]
    pub sigma: Vec<f64>,
    /// `empty`, `env`, or a path to a file of 1-based trial ids.
    #[serde(default = "default_margin")]
    pub margin: String,
}

fn default_sigmas() -> Vec<f64> {
    vec![0.25, 0.5, 0.75]
}

fn default_margin() -> String {
    "empty".into()
}

impl Default for AuditConfig {
    fn default() -> Self {
        AuditConfig { sigma: default_sigmas(), margin: default_margin() }
    }
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig = toml::from_str(text).context("parsing experiment config")?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Loads a config file; relative CSV paths are resolved against its directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        let mut cfg = Self::from_toml(&text).with_context(|| format!("in {}", path.display()))?;
        let base = path.parent().unwrap_or(Path::new("."));
        if let EnvConfig::Csv { metric, losses } = &mut cfg.env {
            for p in [metric, losses] {
                if p.is_relative() {
                    *p = base.join(&*p);
                }
            }
        }
        if let Some(audit) = &mut cfg.audit {
            let file = Path::new(&audit.margin);
            if audit.margin != "empty" && audit.margin != "env" && file.is_relative() {
                audit.margin = base.join(file).to_string_lossy().into_owned();
            }
        }
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("experiment config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        ensure!(!self.seeds.is_empty(), "at least one seed is required");
        ensure!(self.parallel >= 1, "parallel must be at least 1");
        for a in &self.agents {
            if let Some(nu) = a.nu {
                ensure!(nu >= 1.0, "nu must be >= 1, got {nu}");
            }
            if a.rho_grid.is_some() && a.nan_mode().is_none() {
                bail!("rho_grid only applies to nan agents");
            }
            if let Some(grid) = &a.rho_grid {
                ensure!(!grid.is_empty(), "rho_grid must not be empty");
                ensure!(grid.windows(2).all(|w| w[0] > w[1]), "rho_grid must be strictly descending");
            }
        }
        if let Some(audit) = &self.audit {
            ensure!(audit.sigma.iter().all(|s| *s > 0.0 && *s < 1.0), "audit sigma values must lie in (0, 1)");
        }
        Ok(())
    }
}

impl EnvConfig {
    pub fn generate(&self, seed: u64) -> Result<Environment> {
        let env = match self {
            EnvConfig::TwoBalls { dim, r, per_ball, gap, interleave } => {
                let mut cfg = TwoBallsConfig::new(*dim, *r, *per_ball, *gap, seed);
                cfg.interleave = *interleave;
                gen_two_balls(&cfg)?
            }
            EnvConfig::BoundaryCover { .. } => gen_boundary_cover(&self.boundary_cover(seed).unwrap())?,
            EnvConfig::Cloud { dim, trials, actions, gap, clustered } => {
                let cfg = if *clustered {
                    CloudConfig::clustered(*dim, *trials, *actions, *gap, seed)
                } else {
                    CloudConfig::uniform(*dim, *trials, *actions, *gap, seed)
                };
                gen_cloud(&cfg)?
            }
            EnvConfig::Csv { metric, losses } => {
                let m = fs::File::open(metric).with_context(|| format!("opening {}", metric.display()))?;
                let l = fs::File::open(losses).with_context(|| format!("opening {}", losses.display()))?;
                ingest_csv(m, l)?
            }
        };
        Ok(env)
    }

    pub fn boundary_cover(&self, seed: u64) -> Option<BoundaryCoverConfig> {
        match self {
            EnvConfig::BoundaryCover { policy, cover, xi, c_exp, trials, dim, gap } => Some(BoundaryCoverConfig {
                policy: policy.clone(),
                cover: cover.clone(),
                xi: *xi,
                c_exp: *c_exp,
                trials: *trials,
                dim: *dim,
                gap: *gap,
                seed,
            }),
            _ => None,
        }
    }
}
