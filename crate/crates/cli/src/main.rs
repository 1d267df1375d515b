//! Command-line front end: single solves, parameter sweeps and convergence
//! traces, configured from a TOML or JSON file.

use std::path::PathBuf;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};
use fcapa::config::{Config, Scheme, SweepParameter};
use fcapa::experiments::{
    build_scenario, convergence_study, emit_sweep, run_scheme, run_sweep, write_traces, TraceRow,
};

#[derive(Parser)]
#[command(
    version,
    about = "Joint current and shape optimization for flexible continuous apertures"
)]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// TOML or JSON config; built-in defaults otherwise.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the config seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads (defaults to all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[arg(long, global = true, default_value = "results")]
    out_dir: PathBuf,
}

#[derive(Subcommand)]
enum Command {
    /// Solve one user drop with every configured scheme.
    Solve {
        #[arg(long, default_value_t = 0)]
        realization: u64,
    },
    /// Monte-Carlo sweep of one system parameter.
    Sweep {
        /// aperture, power, users, frequency or morph.
        #[arg(long)]
        param: Option<SweepParameter>,
        #[arg(long, value_delimiter = ',')]
        values: Option<Vec<f64>>,
        #[arg(long)]
        realizations: Option<usize>,
    },
    /// Per-iteration objective of the joint solver over many drops.
    Convergence {
        #[arg(long)]
        realizations: Option<usize>,
        /// Relative change counted as converged.
        #[arg(long, default_value_t = 1e-4)]
        tol: f64,
        /// Report the share of drops converged within this many iterations.
        #[arg(long, default_value_t = 10)]
        within: usize,
    },
}

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let mut cfg = match &cli.common.config {
        Some(p) => Config::load(p).with_context(|| format!("loading {}", p.display()))?,
        None => Config::default(),
    };
    if let Some(seed) = cli.common.seed {
        cfg.seed = seed;
    }
    if let Some(n) = cli.common.threads {
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?;
    }
    let out_dir = &cli.common.out_dir;
    std::fs::create_dir_all(out_dir).with_context(|| format!("creating {}", out_dir.display()))?;

    match cli.command {
        Command::Solve { realization } => solve(&cfg, realization, out_dir),
        Command::Sweep {
            param,
            values,
            realizations,
        } => {
            if let Some(p) = param {
                cfg.sweep.parameter = p;
                cfg.sweep.values = None;
            }
            if values.is_some() {
                cfg.sweep.values = values;
            }
            if let Some(n) = realizations {
                cfg.realizations = n;
            }
            cfg.validate()?;
            let name = format!("sweep_{}", cfg.sweep.parameter.name());
            log::info!(
                "{name}: {} values x {} realizations x {} schemes",
                cfg.sweep.values().len(),
                cfg.realizations,
                cfg.schemes.len()
            );
            let out = run_sweep(&cfg)?;
            let files = emit_sweep(out_dir, &name, &cfg, &out)?;
            let failed = out.records.iter().filter(|r| !r.is_ok()).count();
            for &scheme in &cfg.schemes {
                for (v, arpu) in out.mean_arpu(scheme) {
                    println!(
                        "{scheme:<18} {}={v:<10} mean ARPU {arpu:.4} bit/s/Hz",
                        cfg.sweep.parameter.name()
                    );
                }
            }
            if failed > 0 {
                log::warn!("{failed} solves failed; see the error column");
            }
            println!("wrote {}", files.results.display());
            Ok(())
        }
        Command::Convergence {
            realizations,
            tol,
            within,
        } => {
            if let Some(n) = realizations {
                cfg.realizations = n;
            }
            let study = convergence_study(&cfg, tol)?;
            let path = out_dir.join("convergence_traces.csv");
            write_traces(&path, &study.traces)?;
            std::fs::write(out_dir.join("convergence.json"), cfg.to_json())?;
            println!(
                "{:.1}% of {} drops reach relative change < {tol:e} within {within} iterations",
                100.0 * study.fraction_within(within),
                study.settled_at.len()
            );
            println!("wrote {}", path.display());
            Ok(())
        }
    }
}

fn solve(cfg: &Config, realization: u64, out_dir: &std::path::Path) -> Result<()> {
    cfg.validate()?;
    let scn = build_scenario(&cfg.system, cfg.seed, realization);
    let mut traces = Vec::new();
    for &scheme in &cfg.schemes {
        let o = run_scheme(scheme, &cfg.system, &scn, &cfg.solver).with_context(|| format!("solving {scheme}"))?;
        println!(
            "{scheme:<18} ARPU {:.4} bit/s/Hz  iterations {:>3}  power {:.6}",
            o.arpu, o.iterations, o.power
        );
        traces.extend(o.initial.iter().chain(o.trace.iter()).map(|t| TraceRow {
            scheme,
            param_value: cfg.system.morph_wavelengths,
            realization,
            iteration: t.iteration,
            surrogate: t.surrogate,
            arpu: t.arpu,
        }));
        if scheme == Scheme::Fcapa {
            let p = out_dir.join("fcapa_shape.csv");
            o.shape.write_csv(&p)?;
            println!("wrote {}", p.display());
        }
    }
    let path = out_dir.join("solve_traces.csv");
    write_traces(&path, &traces)?;
    std::fs::write(out_dir.join("solve.json"), cfg.to_json())?;
    println!("wrote {}", path.display());
    Ok(())
}
