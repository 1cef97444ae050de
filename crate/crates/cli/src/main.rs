use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Result;
use clap::{Parser, Subcommand};
use hnncb_cli::{cmd_audit, cmd_gen, cmd_plot, cmd_run, cmd_validate, ExperimentConfig, MarginSource};

#[derive(Parser)]
#[command(name = "hnncb", version, about = "Hierarchical nearest-neighbour contextual bandit experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run every (agent, seed) pair of a config and write hashed artifacts.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Run only this seed instead of the config's list.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        parallel: Option<usize>,
    },
    /// Check the analysis lemmas on the HNN-CB runs of a run directory.
    Audit {
        run_dir: PathBuf,
        /// Audit sigma values (repeatable); defaults to the config's grid.
        #[arg(long, num_args = 1..)]
        sigma: Option<Vec<f64>>,
        /// `empty`, `env`, or a file of 1-based trial ids.
        #[arg(long)]
        margin: Option<String>,
    },
    /// Render mean regret curves of one or more run directories.
    Plot {
        #[arg(required = true)]
        run_dirs: Vec<PathBuf>,
        /// Defaults to `<first run dir>/plots`.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Log-log axes.
        #[arg(long)]
        log: bool,
    },
    /// Write one seed's instance as metric and loss CSV files.
    Gen {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value = "instance")]
        out: PathBuf,
    },
    /// Check the metric axioms of a metric CSV file.
    Validate { metric: PathBuf },
}

fn load(config: &Path, seed: Option<u64>, parallel: Option<usize>) -> Result<ExperimentConfig> {
    let mut cfg = ExperimentConfig::load(config)?;
    if let Some(s) = seed {
        cfg.seeds = vec![s];
    }
    if let Some(p) = parallel {
        cfg.parallel = p;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn execute(cmd: Command) -> Result<ExitCode> {
    match cmd {
        Command::Run { config, seed, out, parallel } => {
            let cfg = load(&config, seed, parallel)?;
            let dir = hnncb_cli::run::out_dir(&cfg, out.as_deref());
            let manifest = cmd_run(&cfg, &dir)?;
            println!("wrote {} artifacts and {}", manifest.artifacts.len(), dir.join(hnncb_cli::run::MANIFEST).display());
        }
        Command::Audit { run_dir, sigma, margin } => {
            let outcome = cmd_audit(&run_dir, sigma, margin.as_deref().map(MarginSource::parse))?;
            for f in &outcome.files {
                println!("wrote {}", f.display());
            }
            if !outcome.passed() {
                for f in &outcome.failures {
                    eprintln!("FAILED {f}");
                }
                return Ok(ExitCode::from(2));
            }
            println!("all lemma checks passed");
        }
        Command::Plot { run_dirs, out, log } => {
            let out = out.unwrap_or_else(|| run_dirs[0].join("plots"));
            let plot = cmd_plot(&run_dirs, &out, log)?;
            for s in &plot.series {
                let slope = s.slope.map_or_else(|| "n/a".into(), |v| format!("{v:.3}"));
                println!("{}: {} runs, final-decade slope {slope}", s.label, s.runs);
            }
            println!("wrote {} and {}", plot.svg.display(), plot.csv.display());
        }
        Command::Gen { config, seed, out } => {
            let cfg = load(&config, None, None)?;
            let g = cmd_gen(&cfg, seed, &out)?;
            println!("wrote {} and {}", g.metric.display(), g.losses.display());
            if let Some(m) = g.margin {
                println!("wrote {}", m.display());
            }
        }
        Command::Validate { metric } => {
            let v = cmd_validate(&metric)?;
            if !v.report.is_valid() {
                for violation in &v.report.violations {
                    eprintln!("violation: {violation:?}");
                }
                return Ok(ExitCode::from(2));
            }
            let ar = v.aspect_ratio.map_or_else(|| "n/a".into(), |a| a.to_string());
            println!("valid metric on {} trials, aspect ratio {ar}", v.trials);
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match execute(cli.command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
