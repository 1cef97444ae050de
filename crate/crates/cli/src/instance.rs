use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use hnncb::{aspect_ratio, parse_metric_csv, validate_instance, write_metric_csv, Metric, ValidationReport};

use crate::config::ExperimentConfig;

/// Files written by [`cmd_gen`].
#[derive(Debug)]
pub struct Generated {
    pub metric: PathBuf,
    pub losses: PathBuf,
    pub margin: Option<PathBuf>,
}

/// Writes the environment for one seed as `metric.csv`, `losses.csv` and,
/// when the environment has one, `margin.txt` (1-based trial ids).
pub fn cmd_gen(cfg: &ExperimentConfig, seed: u64, out: &Path) -> Result<Generated> {
    let env = cfg.env.generate(seed)?;
    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    let metric = out.join("metric.csv");
    let losses = out.join("losses.csv");
    fs::write(&metric, write_metric_csv(&env.instance))?;
    fs::write(&losses, env.loss.to_csv(env.policy.as_deref()))?;
    let margin = match &env.margin {
        Some(m) => {
            let path = out.join("margin.txt");
            let ids: Vec<String> =
                m.iter().enumerate().filter(|(_, b)| **b).map(|(i, _)| (i + 1).to_string()).collect();
            let mut text = ids.join("\n");
            text.push('\n');
            fs::write(&path, text)?;
            Some(path)
        }
        None => None,
    };
    Ok(Generated { metric, losses, margin })
}

#[derive(Debug)]
pub struct Validation {
    pub trials: usize,
    pub report: ValidationReport,
    pub aspect_ratio: Option<f64>,
}

/// Parses a metric file and checks every axiom without stopping at the first violation.
pub fn cmd_validate(path: &Path) -> Result<Validation> {
    let file = fs::File::open(path).with_context(|| format!("opening {}", path.display()))?;
    let inst: Metric = parse_metric_csv(file, 1).with_context(|| format!("parsing {}", path.display()))?;
    let report = validate_instance(&inst);
    let aspect_ratio = aspect_ratio(&inst).ok().map(|a| a.delta);
    Ok(Validation { trials: inst.trials(), report, aspect_ratio })
}
