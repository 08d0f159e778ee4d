use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use maisac_core::harness::{build_instance, run_experiment, write_bundle, ExperimentConfig, ReportBundle, Scheme};
use maisac_core::oracle::{brute_force_solve, format_trajectory, write_audit_csv};
use maisac_core::CoreError;

/// Movable-antenna ISAC trajectory and beamforming design.
#[derive(Parser)]
#[command(name = "maisac", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Solve one instance with the selected schemes.
    Solve(Common),
    /// Enumerate every trajectory of one instance and write the audit.
    Oracle(Common),
    /// Monte-Carlo sweep over N or l.
    Sweep(Common),
    /// Beampattern of every scheme on one instance (N = 3, φ = π/16 cut).
    Beampattern(Common),
}

#[derive(Clone, Copy, ValueEnum)]
enum SchemeArg {
    Proposed,
    Fixed,
    Random,
    All,
}

#[derive(Args)]
struct Common {
    /// JSON config; unknown keys are rejected. Overrides the preset.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Master seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Small 3 × 3 grid preset (default).
    #[arg(long, conflicts_with = "full")]
    desk: bool,
    /// Full-size preset: 4 elements, 3 users, l = 4, d = 2 mm.
    #[arg(long)]
    full: bool,
    #[arg(long, value_enum, default_value = "all")]
    scheme: SchemeArg,
}

impl Common {
    fn config(&self) -> Result<ExperimentConfig, CoreError> {
        let mut cfg = match (&self.config, self.full) {
            (Some(p), _) => ExperimentConfig::load(p)?,
            (None, true) => ExperimentConfig::full(),
            (None, false) => ExperimentConfig::desk(),
        };
        if let Some(s) = self.seed {
            cfg.master_seed = s;
        }
        if let Some(o) = &self.out {
            cfg.output_dir = o.clone();
        }
        Ok(cfg)
    }

    fn schemes(&self) -> Vec<Scheme> {
        match self.scheme {
            SchemeArg::Proposed => vec![Scheme::Proposed],
            SchemeArg::Fixed => vec![Scheme::Fixed],
            SchemeArg::Random => vec![Scheme::Random],
            SchemeArg::All => Scheme::ALL.to_vec(),
        }
    }
}

fn single(mut cfg: ExperimentConfig) -> ExperimentConfig {
    cfg.realizations = 1;
    cfg.sweep_values.clear();
    cfg.beampattern_realization = 0;
    cfg
}

fn report(bundle: &ReportBundle) {
    for r in &bundle.records {
        println!(
            "{:>8} {:>2} {:<9} {:<16} C={:<12.6e} eta={:<10.4e} C/eta={:<10.4} {:>9.1} ms  [{}]",
            r.sweep_value,
            r.realization,
            r.scheme.name(),
            r.status,
            r.objective,
            r.eta,
            r.normalized_mismatch,
            r.runtime_ms,
            r.trajectory
        );
    }
    for a in &bundle.aggregates {
        println!("mean {:>8} {:<9} {:.6} over {}", a.sweep_value, a.scheme.name(), a.mean_normalized_mismatch, a.realizations);
    }
    for e in &bundle.exclusions {
        println!("excluded {} #{}: {}", e.sweep_value, e.realization, e.reason);
    }
}

fn experiment(cfg: &ExperimentConfig, schemes: &[Scheme]) -> Result<(), CoreError> {
    let bundle = run_experiment(cfg, schemes)?;
    report(&bundle);
    write_bundle(&bundle, cfg, schemes, &cfg.output_dir)?;
    println!("wrote {}", cfg.output_dir.display());
    if !bundle.complete {
        eprintln!("warning: some realizations failed; see exclusions.csv");
    }
    Ok(())
}

fn run(cli: Cli) -> Result<(), CoreError> {
    match cli.command {
        Command::Solve(c) => experiment(&single(c.config()?), &c.schemes()),
        Command::Sweep(c) => experiment(&c.config()?, &c.schemes()),
        Command::Beampattern(c) => experiment(&single(c.config()?.with_beampattern_recipe()), &c.schemes()),
        Command::Oracle(c) => {
            let cfg = single(c.config()?);
            let inst = build_instance(&cfg, 0)?;
            let res = brute_force_solve(&inst, cfg.oracle_cap, cfg.bnb.rank_one_recovery)?;
            std::fs::create_dir_all(&cfg.output_dir).map_err(|e| CoreError::InvalidInput(e.to_string()))?;
            let path = cfg.output_dir.join("oracle_audit.csv");
            write_audit_csv(&res.audit, &path)?;
            match &res.trajectory {
                Some(t) => println!("best C={:.9e} over {} trajectories [{}]", res.objective, res.audit.len(), format_trajectory(t)),
                None => println!("no feasible trajectory among {}", res.audit.len()),
            }
            if res.tainted {
                eprintln!("warning: some solves ended without a verdict");
            }
            println!("wrote {}", path.display());
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    env_logger::init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
