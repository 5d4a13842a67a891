use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use subspace_iv::harness::{
    self, finite_sample_study, Execution, FiniteSampleParams, RunConfig,
};
use subspace_iv::{generate_scenario, NormSource, Scenario, Strategy};

#[derive(Parser)]
#[command(name = "subspace-iv", version, about = "Sequential instrument selection for underspecified IV")]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// TOML run configuration with [scenario], [selection] and [harness] sections.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Scenario seed, or base seed of a sweep.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output file (generate) or directory (sweep, finite-sample, report).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Worker threads; 0 uses every core, 1 runs sequentially.
    #[arg(long, global = true)]
    workers: Option<usize>,
    /// Turn the confounder off so estimates are exact.
    #[arg(long, global = true)]
    noiseless: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Emit a random scenario as JSON.
    Generate {
        #[arg(long)]
        n_iv: Option<usize>,
        #[arg(long)]
        d_x: Option<usize>,
        #[arg(long)]
        d_id: Option<usize>,
    },
    /// Run one trajectory and print it as JSON.
    Run {
        #[arg(long, default_value = "sis")]
        strategy: Strategy,
        /// Scenario JSON file; generated from the config and seed if absent.
        #[arg(long)]
        scenario: Option<PathBuf>,
        /// `oracle`, `oracle_noisy:<bias>` or `external:<value>`.
        #[arg(long)]
        norm_provider: Option<NormSource>,
    },
    /// Replicate sweep over every configured strategy.
    Sweep {
        #[arg(long)]
        runs: Option<usize>,
        #[arg(long)]
        norm_provider: Option<NormSource>,
    },
    /// One experiment with all instruments versus split experiments.
    FiniteSample {
        #[arg(long, default_value_t = 3)]
        d_x: usize,
        #[arg(long, default_value_t = 3)]
        d_z: usize,
        /// Samples per experiment.
        #[arg(long, default_value_t = 1000)]
        n: usize,
        #[arg(long, default_value_t = 500)]
        runs: usize,
    },
    /// Rebuild report.csv from an existing trajectories.csv.
    Report {
        /// Directory holding trajectories.csv (defaults to --out).
        dir: Option<PathBuf>,
    },
}

fn load_config(common: &Common) -> Result<RunConfig> {
    let mut config = match &common.config {
        Some(p) => RunConfig::from_file(p)?,
        None => RunConfig::default(),
    };
    if let Some(seed) = common.seed {
        config.harness.base_seed = seed;
    }
    if let Some(out) = &common.out {
        config.harness.output_dir = out.clone();
    }
    if let Some(w) = common.workers {
        config.harness.workers = w;
    }
    if common.noiseless {
        config.scenario.noiseless = true;
    }
    Ok(config)
}

fn emit(text: &str, out: Option<&Path>) -> Result<()> {
    match out {
        Some(p) => fs::write(p, format!("{text}\n")).with_context(|| format!("writing {}", p.display())),
        None => {
            println!("{text}");
            Ok(())
        }
    }
}

fn run(cli: Cli) -> Result<ExitCode> {
    let common = &cli.common;
    let mut config = load_config(common)?;
    match cli.command {
        Command::Generate { n_iv, d_x, d_id } => {
            let p = &mut config.scenario;
            p.n_iv = n_iv.unwrap_or(p.n_iv);
            p.d_x = d_x.unwrap_or(p.d_x);
            p.d_id = d_id.unwrap_or(p.d_id);
            let mut s = generate_scenario(p.n_iv, p.d_x, p.d_id, config.harness.base_seed)?;
            if p.noiseless {
                s = s.without_confounding();
            }
            emit(&s.to_json()?, common.out.as_deref())?;
        }
        Command::Run {
            strategy,
            scenario,
            norm_provider,
        } => {
            if let Some(np) = norm_provider {
                config.harness.norm_provider = np;
            }
            config.validate()?;
            let seed = config.harness.base_seed;
            let scenario = match scenario {
                Some(p) => {
                    let text = fs::read_to_string(&p)
                        .with_context(|| format!("reading {}", p.display()))?;
                    let mut s = Scenario::from_json(&text)?;
                    if config.scenario.noiseless {
                        s = s.without_confounding();
                    }
                    s
                }
                None => {
                    let c = &config.scenario;
                    let s = generate_scenario(c.n_iv, c.d_x, c.d_id, seed)?;
                    if c.noiseless {
                        s.without_confounding()
                    } else {
                        s
                    }
                }
            };
            let traj = harness::run_strategies(&config, &scenario, seed, &[strategy])?;
            println!("{}", traj[0].to_json()?);
        }
        Command::Sweep {
            runs,
            norm_provider,
        } => {
            if let Some(r) = runs {
                config.harness.n_runs = r;
            }
            if let Some(np) = norm_provider {
                config.harness.norm_provider = np;
            }
            let exec = Execution::from_workers(config.harness.workers);
            let outcome = harness::run_sweep(&config, exec)?;
            eprintln!(
                "{} replicates, {} failed; outputs in {}",
                outcome.n_runs(),
                outcome.failures.len(),
                config.harness.output_dir.display()
            );
            for f in &outcome.failures {
                eprintln!("  seed {}: {}", f.run_seed, f.error);
            }
            if !outcome.failures.is_empty() {
                return Ok(ExitCode::FAILURE);
            }
        }
        Command::FiniteSample { d_x, d_z, n, runs } => {
            let params = FiniteSampleParams {
                d_x,
                d_z,
                n,
                n_runs: runs,
                seed: common.seed.unwrap_or(253),
                noiseless: common.noiseless,
            };
            let exec = Execution::from_workers(config.harness.workers);
            let report = finite_sample_study(&params, exec)?;
            let dir = common
                .out
                .clone()
                .unwrap_or_else(|| PathBuf::from("finite_sample"));
            report.write(&dir)?;
            println!("estimator,component,truth,median,q1,q3,median_se");
            for s in &report.stats {
                println!(
                    "{},{},{},{},{},{},{}",
                    s.estimator, s.component, s.truth, s.median, s.q1, s.q3, s.median_se
                );
            }
        }
        Command::Report { dir } => {
            let Some(dir) = dir.or_else(|| common.out.clone()) else {
                bail!("report needs a directory (positional or --out)");
            };
            let rows = harness::rebuild_report(&dir)?;
            eprintln!("wrote {} rows to {}", rows.len(), dir.join("report.csv").display());
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
