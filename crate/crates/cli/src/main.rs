use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use transduct_core::bench::{
    cmd_ablate, cmd_markov, cmd_run, cmd_theory, AblationGrid, Preset, RunConfig, RunOptions,
};
use transduct_core::{Error, Result};

#[derive(Parser)]
#[command(name = "transduct", version, about = "Transductive active learning benchmarks")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Run configuration (TOML).
    #[arg(long)]
    config: PathBuf,
    /// Output directory.
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Seeds overriding the config, e.g. `0,1,2` or `0..10`.
    #[arg(long)]
    seeds: Option<String>,
    /// Hyperparameter preset: mnist-like or cifar-like.
    #[arg(long)]
    preset: Option<Preset>,
    /// Worker threads.
    #[arg(long)]
    jobs: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Run every (policy, seed) pair and write records and metrics.
    Run(Common),
    /// Check the variance-reduction bounds along an ITL trajectory.
    Theory {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        epsilon: Option<f64>,
    },
    /// Compute an approximate Markov boundary of one domain point.
    Markov {
        #[command(flatten)]
        common: Common,
        /// Domain position of the point.
        #[arg(long)]
        x: usize,
        #[arg(long)]
        epsilon: Option<f64>,
    },
    /// Run a hyperparameter grid and tabulate final-round metrics.
    Ablate {
        #[command(flatten)]
        common: Common,
        /// Grid such as `rho=0.01,1;batch_mode=bace,top_b`; defaults to the
        /// config's [ablate] table.
        #[arg(long)]
        grid: Option<String>,
    },
}

fn parse_seeds(raw: &str) -> Result<Vec<u64>> {
    let bad = |part: &str| Error::Config {
        field: "seeds".into(),
        message: format!("bad seed `{part}`"),
    };
    let mut seeds = Vec::new();
    for part in raw.split(',').map(str::trim).filter(|p| !p.is_empty()) {
        match part.split_once("..") {
            Some((a, b)) => {
                let a: u64 = a.parse().map_err(|_| bad(part))?;
                let b: u64 = b.parse().map_err(|_| bad(part))?;
                seeds.extend(a..b);
            }
            None => seeds.push(part.parse().map_err(|_| bad(part))?),
        }
    }
    if seeds.is_empty() {
        return Err(bad(raw));
    }
    Ok(seeds)
}

fn load(common: &Common) -> Result<(RunConfig, RunOptions)> {
    let mut cfg = RunConfig::load(&common.config)?;
    if let Some(raw) = &common.seeds {
        cfg = cfg.with_seeds(parse_seeds(raw)?);
    }
    if let Some(p) = common.preset {
        cfg = cfg.with_preset(p);
    }
    Ok((cfg, RunOptions { jobs: common.jobs }))
}

fn execute(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Run(common) => {
            let (cfg, opts) = load(&common)?;
            let out = cmd_run(&cfg, &common.out, &opts)?;
            println!("{}", out.metrics.display());
            println!("{}", out.summary.display());
        }
        Command::Theory { common, epsilon } => {
            let (cfg, _) = load(&common)?;
            let diag = cmd_theory(&cfg, &common.out, epsilon)?;
            for (name, report) in [
                ("gamma_bound", &diag.gamma_bound),
                ("within_sample_bound", &diag.within_sample_bound),
                ("convergence_bound", &diag.convergence_bound.bound),
                ("schedule", &diag.schedule),
            ] {
                println!("{name}: {:?}", report.status);
            }
            println!("{}", common.out.join("theory.json").display());
        }
        Command::Markov { common, x, epsilon } => {
            let (cfg, _) = load(&common)?;
            let b = cmd_markov(&cfg, &common.out, x, epsilon)?;
            let bound = b.size_bound.map_or_else(|| "over the cap".to_string(), |v| v.to_string());
            println!(
                "|B| = {}, variance {:.6e}, floor {:.6e}, size bound {bound}",
                b.members.len(),
                b.achieved_variance,
                b.irreducible
            );
        }
        Command::Ablate { common, grid } => {
            let (cfg, opts) = load(&common)?;
            let grid = grid.as_deref().map(AblationGrid::parse).transpose()?;
            let rows = cmd_ablate(&cfg, &common.out, grid.as_ref(), &opts)?;
            println!("{} rows -> {}", rows.len(), common.out.join("ablation.csv").display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("TRANSDUCT_LOG", "warn")).init();
    let cli = Cli::parse();
    match execute(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
