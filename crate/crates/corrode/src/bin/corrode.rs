//! Command-line driver: run a configuration, optionally against the
//! finite-difference reference solver, or run a refinement study.
//!
//! Exit codes: 0 success, 1 configuration error, 2 solver failure,
//! 3 strict-mode invariant violation.

use clap::Parser;
use corrode::config::parse_config;
use corrode::error::CorrodeError;
use corrode::sim::{refinement_study, run_simulation, write_outputs, write_study};
use std::path::PathBuf;

#[derive(Parser)]
#[command(
    name = "corrode",
    about = "Minimizing-movements solver for a 1D free-boundary oxide-growth model"
)]
struct Cli {
    /// Run configuration file (flat `key = value` text).
    #[arg(long)]
    config: PathBuf,

    /// Also run the finite-difference reference solver and report the final
    /// L1 cross-validation distance.
    #[arg(long)]
    oracle: bool,

    /// Promote report-only invariant violations to exit code 3.
    #[arg(long)]
    strict: bool,

    /// Keep stepping after a rejected step instead of halting.
    #[arg(long)]
    best_effort: bool,

    /// Run a refinement study with this many levels (halving tau and
    /// doubling n_cells per level) instead of a single run.
    #[arg(long, value_name = "K")]
    refine: Option<usize>,

    /// Directory for output files.
    #[arg(long, default_value = ".")]
    out_dir: PathBuf,
}

fn main() {
    std::process::exit(run(Cli::parse()));
}

fn classify(e: &CorrodeError) -> i32 {
    match e {
        CorrodeError::Config(_) | CorrodeError::Parse(_) | CorrodeError::Precondition(_) => 1,
        _ => 2,
    }
}

fn run(cli: Cli) -> i32 {
    let text = match std::fs::read_to_string(&cli.config) {
        Ok(t) => t,
        Err(e) => {
            eprintln!("error: cannot read {}: {e}", cli.config.display());
            return 1;
        }
    };
    let mut cfg = match parse_config(&text) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e}");
            return 1;
        }
    };
    cfg.oracle |= cli.oracle;
    cfg.strict |= cli.strict;
    cfg.best_effort |= cli.best_effort;

    match cfg.validate() {
        Ok(d) => {
            if d.penalty_floored {
                eprintln!(
                    "warning: initial profile peaks below the upper trace threshold; penalty \
                     stiffness floored at epsilon_K = {}",
                    cfg.epsilon_k
                );
            }
        }
        Err(e) => {
            eprintln!("error: {e}");
            return 1;
        }
    }

    if let Some(k) = cli.refine {
        match refinement_study(&cfg, k) {
            Ok(rep) => {
                if let Err(e) = write_study(&rep, &cli.out_dir) {
                    eprintln!("error: cannot write study outputs: {e}");
                    return 2;
                }
                for l in &rep.levels {
                    println!(
                        "level {}: tau {:.3e}, n_cells {}, X(T) {:.6}, weak residual {:.3e}",
                        l.level, l.tau, l.n_cells, l.x_final, l.max_weak_rho_residual
                    );
                }
                for (i, d) in rep.l1_distances.iter().enumerate() {
                    println!("levels {i}->{}: L1 distance {d:.3e}", i + 1);
                }
                if rep.complete {
                    0
                } else {
                    eprintln!("error: a refinement level halted early");
                    2
                }
            }
            Err(e) => {
                eprintln!("error: {e}");
                classify(&e)
            }
        }
    } else {
        match run_simulation(&cfg) {
            Ok(out) => {
                if let Err(e) = write_outputs(&cfg, &out, &cli.out_dir) {
                    eprintln!("error: cannot write outputs: {e}");
                    return 2;
                }
                let led = &out.summary.ledger;
                println!(
                    "steps {} / {} accepted, X(T) = {:.8}, M(T) = {:.6e}, F(T) = {:.8}",
                    out.summary.timings.steps_accepted,
                    out.summary.timings.steps_attempted,
                    led.x_final,
                    led.mass_excess_final,
                    led.lyapunov_series.last().copied().unwrap_or(0.0)
                );
                if let Some(l1) = led.oracle_l1 {
                    println!("reference-solver L1 distance at T: {l1:.6e}");
                }
                if !out.summary.violations.is_empty() {
                    eprintln!(
                        "{} invariant violation(s) recorded{}",
                        out.summary.violations.len(),
                        if cfg.strict { " (strict)" } else { "" }
                    );
                }
                if out.halted_early {
                    eprintln!(
                        "error: step rejected; trajectory halted (use --best-effort to continue)"
                    );
                }
                out.exit_code
            }
            Err(e) => {
                eprintln!("error: {e}");
                classify(&e)
            }
        }
    }
}
