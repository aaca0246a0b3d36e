//! Simulation orchestration: the stepping loop, violation collection,
//! bit-stable CSV/JSON emission, optional reference-solver cross-validation,
//! and refinement studies.

use crate::config::{emit_config, DerivedConstants, RunConfig};
use crate::density::State;
use crate::diagnostics::{
    bounds_check, vi_check, weak_residuals, DiagnosticsLedger, Trajectory, WeakResidualReport,
};
use crate::energy::lyapunov;
use crate::error::{CorrodeError, Result};
use crate::oracle::{run_oracle, OracleOptions, OracleState};
use crate::params::ModelParams;
use crate::stepper::{minimize_step, SolverOptions};
use serde::{Deserialize, Serialize};
use std::fmt::Write as _;
use std::path::Path;

/// One entry of the violations list.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Violation {
    pub step: usize,
    pub kind: String,
    pub magnitude: f64,
}

/// Deterministic effort counters (wall-clock would break byte-stable output).
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct EffortCounters {
    pub steps_attempted: usize,
    pub steps_accepted: usize,
    pub total_inner_iterations: usize,
    pub oracle_steps: usize,
}

/// Summary written to the JSON output.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunSummary {
    pub config_echo: ConfigEcho,
    pub ledger: LedgerSummary,
    pub violations: Vec<Violation>,
    pub timings: EffortCounters,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ConfigEcho {
    pub config: RunConfig,
    pub derived: DerivedConstants,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LedgerSummary {
    pub cumulative_dsq_over_2tau: f64,
    pub cumulative_theta_absdm: f64,
    pub cumulative_penalty: f64,
    pub apriori_rhs: f64,
    pub apriori_margin: f64,
    pub lyapunov_series: Vec<f64>,
    pub bulk_dissipation: Vec<f64>,
    pub interface_dissipation: Vec<f64>,
    pub boundary_dissipation: Vec<f64>,
    /// Per-step recomputed (min, max) of `ln rho`.
    pub step_log_bounds: Vec<(f64, f64)>,
    pub x_final: f64,
    pub mass_excess_final: f64,
    pub trace_band_sum: f64,
    pub time_translate_sum: f64,
    pub max_weak_rho_residual: f64,
    pub max_weak_x_residual: f64,
    pub min_vi_margin: f64,
    /// L1 distance to the reference solver at the final time, when run.
    pub oracle_l1: Option<f64>,
}

/// Everything a finished (or halted) run hands back.
#[derive(Debug)]
pub struct SimOutcome {
    pub trajectory: Trajectory,
    pub ledger: DiagnosticsLedger,
    pub summary: RunSummary,
    pub csv: String,
    pub json: String,
    pub exit_code: i32,
    pub halted_early: bool,
}

fn fmt(v: f64) -> String {
    format!("{v:.16e}")
}

/// Per-step slack accepted on the Lyapunov series, relative to its largest
/// magnitude.
pub const LYAPUNOV_SLACK_REL: f64 = 1e-6;
/// Slack on the a-priori dissipation inequality.
pub const APRIORI_SLACK: f64 = 1e-8;
/// Slack on the interface a-priori bound.
pub const INTERFACE_BOUND_SLACK: f64 = 1e-8;

/// Run the configured simulation to completion (or to the first rejected
/// step when `best_effort` is off).
pub fn run_simulation(cfg: &RunConfig) -> Result<SimOutcome> {
    let derived = cfg.validate()?;
    let p = cfg.model_params()?;
    let rho0 = cfg.initial_density()?;
    let pp = cfg.penalty_params()?;
    let opts = SolverOptions {
        max_iters: cfg.max_iters,
        grad_tol_factor: cfg.grad_tol,
        j_tol_factor: cfg.j_tol,
        ..SolverOptions::default()
    };

    let initial = State::new(0.0, rho0);
    let mut ledger = DiagnosticsLedger::new(&initial, &p);
    let mut traj = Trajectory::new(initial, cfg.tau);
    let mut violations: Vec<Violation> = Vec::new();
    let mut counters = EffortCounters::default();
    let mut halted_early = false;

    let n_steps = (cfg.t_final / cfg.tau).round() as usize;
    let mut csv = String::from(
        "step,t,X,M,F,w2_sq_step,dsq_over_2tau,penalty,rho_at_0,rho_at_X_minus,dX_dt,\
         el_residual,interface_residual,trace_defect,inner_iterations\n",
    );
    let emit_row = |csv: &mut String,
                    step: usize,
                    s: &State,
                    p: &ModelParams,
                    row: Option<(&crate::stepper::StepReport, f64, f64)>| {
        let f_val = lyapunov(s, p);
        let (w2, dsq2t, pen, dxdt, el, ifr, trd, it) = match row {
            Some((r, tau, dxdt)) => (
                r.w2_sq,
                r.d_sq / (2.0 * tau),
                r.penalty_value,
                dxdt,
                r.el_residual,
                r.interface_residual,
                r.trace_defect,
                r.inner_iterations,
            ),
            None => (0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0),
        };
        let _ = writeln!(
            csv,
            "{},{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
            step,
            fmt(s.t),
            fmt(s.x()),
            fmt(s.mass_excess),
            fmt(f_val),
            fmt(w2),
            fmt(dsq2t),
            fmt(pen),
            fmt(s.density.rho_at_0()),
            fmt(s.density.rho_at_x_minus()),
            fmt(dxdt),
            fmt(el),
            fmt(ifr),
            fmt(trd),
            it
        );
    };
    emit_row(&mut csv, 0, &traj.states[0], &p, None);

    for n in 0..n_steps {
        let prev = traj.final_state().clone();
        counters.steps_attempted += 1;
        let (state, report) = minimize_step(&prev, &pp, &p, cfg.tau, &opts)?;
        counters.total_inner_iterations += report.inner_iterations;
        let accepted = report.accepted;
        if accepted {
            counters.steps_accepted += 1;
        } else {
            violations.push(Violation {
                step: n + 1,
                kind: format!(
                    "step-rejected: {}",
                    report.failure.clone().unwrap_or_default()
                ),
                magnitude: 0.0,
            });
        }
        ledger.record_step(&prev, &state, &report, &p, cfg.tau);
        for v in bounds_check(&state, &pp) {
            violations.push(Violation {
                step: n + 1,
                kind: format!("{:?}", v.kind),
                magnitude: v.magnitude,
            });
        }
        let dxdt = (state.x() - prev.x()) / cfg.tau;
        let step_no = n + 1;
        if step_no % cfg.sample_every == 0 || step_no == n_steps {
            emit_row(&mut csv, step_no, &state, &p, Some((&report, cfg.tau, dxdt)));
        }
        traj.push(state, report);
        if !accepted && !cfg.best_effort {
            halted_early = true;
            break;
        }
    }

    // Trajectory-level law checks (report-only unless strict).
    let fmax = ledger
        .lyapunov_series
        .iter()
        .fold(0.0f64, |a, b| a.max(b.abs()));
    for (i, w) in ledger.lyapunov_series.windows(2).enumerate() {
        if w[1] > w[0] + LYAPUNOV_SLACK_REL * fmax {
            violations.push(Violation {
                step: i + 1,
                kind: "lyapunov-increase".into(),
                magnitude: w[1] - w[0],
            });
        }
    }
    if !ledger.apriori_satisfied(APRIORI_SLACK) {
        violations.push(Violation {
            step: traj.reports.len(),
            kind: "apriori-sum".into(),
            magnitude: ledger.cumulative_total() - ledger.apriori_rhs,
        });
    }
    for (i, w) in traj.states.windows(2).enumerate() {
        if w[1].x() < w[0].x() {
            violations.push(Violation {
                step: i + 1,
                kind: "interface-recession".into(),
                magnitude: w[0].x() - w[1].x(),
            });
        }
    }
    let x_cap = traj.states[0].x() + (traj.duration() / p.lambda) * (p.alpha - pp.a);
    if traj.final_state().x() > x_cap + INTERFACE_BOUND_SLACK {
        violations.push(Violation {
            step: traj.reports.len(),
            kind: "interface-apriori-bound".into(),
            magnitude: traj.final_state().x() - x_cap,
        });
    }

    // Weak-form residuals and variational-inequality margins; the fixed
    // space-time test families need a minimally resolved horizon.
    let weak = if traj.states.len() > crate::diagnostics::MIN_DIAGNOSTIC_STEPS {
        let mut rep = weak_residuals(&traj, 8, &p)?;
        let etas = [
            p.rho_minus + 0.05 * (p.rho_plus - p.rho_minus),
            0.5 * (p.rho_minus + p.rho_plus),
            p.rho_plus - 0.05 * (p.rho_plus - p.rho_minus),
        ];
        rep.vi_margins = vi_check(&traj, &etas, &p)?;
        rep
    } else {
        WeakResidualReport {
            rho_residuals: Vec::new(),
            x_residuals: Vec::new(),
            vi_margins: Vec::new(),
        }
    };
    let min_margin = weak.min_vi_margin();
    if min_margin < -1e-3 {
        violations.push(Violation {
            step: traj.reports.len(),
            kind: "variational-inequality".into(),
            magnitude: -min_margin,
        });
    }

    // Optional cross-validation against the reference solver.
    let mut oracle_l1 = None;
    if cfg.oracle {
        let init = OracleState::from_density(&traj.states[0].density);
        let run = run_oracle(
            init,
            traj.duration(),
            cfg.tau,
            &p,
            &OracleOptions::default(),
            n_steps.max(1),
        )?;
        counters.oracle_steps = run.steps;
        let fd_final = run.states.last().unwrap().to_density();
        oracle_l1 = Some(traj.final_state().density.l1_distance(&fd_final));
    }

    let x_final = traj.final_state().x();
    let time_translate_sum = if traj.states.len() >= 2 {
        let l = x_cap.max(x_final);
        traj.time_translate_sum(l, 2 * cfg.n_cells)
    } else {
        0.0
    };

    let exit_code = if halted_early {
        2
    } else if cfg.strict && !violations.is_empty() {
        3
    } else {
        0
    };

    let summary = RunSummary {
        config_echo: ConfigEcho {
            config: cfg.clone(),
            derived,
        },
        ledger: LedgerSummary {
            cumulative_dsq_over_2tau: ledger.cumulative_dsq_over_2tau,
            cumulative_theta_absdm: ledger.cumulative_theta_absdm,
            cumulative_penalty: ledger.cumulative_penalty,
            apriori_rhs: ledger.apriori_rhs,
            apriori_margin: ledger.apriori_rhs - ledger.cumulative_total(),
            lyapunov_series: ledger.lyapunov_series.clone(),
            bulk_dissipation: ledger.bulk_dissipation.clone(),
            interface_dissipation: ledger.interface_dissipation.clone(),
            boundary_dissipation: ledger.boundary_dissipation.clone(),
            step_log_bounds: ledger.step_log_bounds.clone(),
            x_final,
            mass_excess_final: traj.final_state().mass_excess,
            trace_band_sum: traj.trace_band_sum(&p),
            time_translate_sum,
            max_weak_rho_residual: weak.max_rho_residual(),
            max_weak_x_residual: weak.max_x_residual(),
            min_vi_margin: if weak.vi_margins.is_empty() {
                f64::INFINITY
            } else {
                min_margin
            },
            oracle_l1,
        },
        violations,
        timings: counters,
    };
    let json = serde_json::to_string_pretty(&summary)
        .map_err(|e| CorrodeError::Parse(format!("summary serialization failed: {e}")))?;

    Ok(SimOutcome {
        trajectory: traj,
        ledger,
        summary,
        csv,
        json,
        exit_code,
        halted_early,
    })
}

/// Write a file atomically (write to `<path>.tmp`, then rename).
pub fn write_atomic(path: &Path, contents: &str) -> Result<()> {
    let tmp = path.with_extension(format!(
        "{}.tmp",
        path.extension().and_then(|e| e.to_str()).unwrap_or("out")
    ));
    std::fs::write(&tmp, contents)?;
    std::fs::rename(&tmp, path)?;
    Ok(())
}

/// Write the run outputs under `out_dir` using the configured file names.
pub fn write_outputs(cfg: &RunConfig, outcome: &SimOutcome, out_dir: &Path) -> Result<()> {
    std::fs::create_dir_all(out_dir)?;
    write_atomic(&out_dir.join(&cfg.csv_path), &outcome.csv)?;
    write_atomic(&out_dir.join(&cfg.json_path), &outcome.json)?;
    Ok(())
}

/// One refinement level of a study.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StudyLevel {
    pub level: usize,
    pub tau: f64,
    pub n_cells: usize,
    pub x_final: f64,
    pub trace_band_sum: f64,
    pub time_translate_sum: f64,
    pub max_weak_rho_residual: f64,
    pub max_weak_x_residual: f64,
    pub min_vi_margin: f64,
    pub oracle_l1: Option<f64>,
    pub exit_code: i32,
}

/// Refinement study report: per-level metrics plus consecutive-level
/// distances of the final densities.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StudyReport {
    pub levels: Vec<StudyLevel>,
    /// L1 distances between consecutive final densities.
    pub l1_distances: Vec<f64>,
    /// Dual-norm distances between consecutive final densities.
    pub hstar_distances: Vec<f64>,
    /// log2 ratios of the consecutive time-translate series (sqrt scale).
    pub time_translate_slopes: Vec<f64>,
    /// Whether a level halted early.
    pub complete: bool,
}

/// Run `levels` refinements of `cfg`, halving `tau` and doubling `n_cells`
/// per level. Levels run concurrently; results are assembled in level order.
pub fn refinement_study(cfg: &RunConfig, levels: usize) -> Result<StudyReport> {
    if levels < 2 {
        return Err(CorrodeError::Precondition(
            "refinement_study needs at least 2 levels".into(),
        ));
    }
    let mut configs = Vec::with_capacity(levels);
    for k in 0..levels {
        let mut c = cfg.clone();
        c.tau = cfg.tau / (1 << k) as f64;
        c.n_cells = cfg.n_cells * (1 << k);
        if c.rho0_kind == crate::config::Rho0Kind::Table {
            // Refine the table by cell splitting.
            let mut vals = cfg.rho0_params.clone();
            for _ in 0..k {
                vals = vals.iter().flat_map(|v| [*v, *v]).collect();
            }
            c.rho0_params = vals;
        }
        configs.push(c);
    }

    let outcomes: Vec<Result<SimOutcome>> = std::thread::scope(|scope| {
        let handles: Vec<_> = configs
            .iter()
            .map(|c| scope.spawn(move || run_simulation(c)))
            .collect();
        handles.into_iter().map(|h| h.join().unwrap()).collect()
    });

    let mut report = StudyReport {
        levels: Vec::new(),
        l1_distances: Vec::new(),
        hstar_distances: Vec::new(),
        time_translate_slopes: Vec::new(),
        complete: true,
    };
    let mut finals = Vec::new();
    for (k, out) in outcomes.into_iter().enumerate() {
        match out {
            Ok(o) => {
                report.levels.push(StudyLevel {
                    level: k,
                    tau: configs[k].tau,
                    n_cells: configs[k].n_cells,
                    x_final: o.summary.ledger.x_final,
                    trace_band_sum: o.summary.ledger.trace_band_sum,
                    time_translate_sum: o.summary.ledger.time_translate_sum,
                    max_weak_rho_residual: o.summary.ledger.max_weak_rho_residual,
                    max_weak_x_residual: o.summary.ledger.max_weak_x_residual,
                    min_vi_margin: o.summary.ledger.min_vi_margin,
                    oracle_l1: o.summary.ledger.oracle_l1,
                    exit_code: o.exit_code,
                });
                if o.halted_early {
                    report.complete = false;
                }
                finals.push(o.trajectory.final_state().clone());
            }
            Err(e) => {
                report.complete = false;
                return Err(e);
            }
        }
    }
    for w in finals.windows(2) {
        report.l1_distances.push(w[0].density.l1_distance(&w[1].density));
        let top = w[0].x().max(w[1].x());
        let m = 2 * w[1].density.n_cells;
        let h = top / m as f64;
        let diff: Vec<f64> = (0..m)
            .map(|i| {
                let x = (i as f64 + 0.5) * h;
                w[0].density.value_at(x) - w[1].density.value_at(x)
            })
            .collect();
        report
            .hstar_distances
            .push(crate::diagnostics::hstar_norm(&diff, top));
    }
    for w in report.levels.windows(2) {
        let a = w[0].time_translate_sum.sqrt();
        let b = w[1].time_translate_sum.sqrt();
        report
            .time_translate_slopes
            .push(if a > 0.0 && b > 0.0 { (a / b).log2() } else { f64::NAN });
    }
    Ok(report)
}

/// Tabular form of a study (tab-separated, one row per level).
pub fn study_table(report: &StudyReport) -> String {
    let mut s = String::from(
        "level\ttau\tn_cells\tx_final\ttrace_band_sum\ttime_translate_sum\t\
         max_weak_rho_residual\tmax_weak_x_residual\tmin_vi_margin\toracle_l1\n",
    );
    for l in &report.levels {
        let _ = writeln!(
            s,
            "{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}",
            l.level,
            fmt(l.tau),
            l.n_cells,
            fmt(l.x_final),
            fmt(l.trace_band_sum),
            fmt(l.time_translate_sum),
            fmt(l.max_weak_rho_residual),
            fmt(l.max_weak_x_residual),
            fmt(l.min_vi_margin),
            l.oracle_l1.map(fmt).unwrap_or_else(|| "nan".into()),
        );
    }
    s
}

/// Generic plotting commands for the study table (gnuplot syntax).
pub fn study_plot_script(table_name: &str) -> String {
    format!(
        "set datafile separator '\\t'\n\
         set key autotitle columnhead\n\
         set logscale xy\n\
         set xlabel 'tau'\n\
         set terminal pngcairo size 900,600\n\
         set output 'study_residuals.png'\n\
         plot '{table_name}' using 2:7 with linespoints title 'weak rho residual', \\\n\
         \x20    '{table_name}' using 2:8 with linespoints title 'weak X residual'\n\
         set output 'study_trace_band.png'\n\
         plot '{table_name}' using 2:5 with linespoints title 'trace band sum'\n\
         set output 'study_time_translate.png'\n\
         plot '{table_name}' using 2:6 with linespoints title 'time translate sum'\n"
    )
}

/// Write study outputs (table, JSON, plot script) under `out_dir`.
pub fn write_study(report: &StudyReport, out_dir: &Path) -> Result<()> {
    std::fs::create_dir_all(out_dir)?;
    let json = serde_json::to_string_pretty(report)
        .map_err(|e| CorrodeError::Parse(format!("study serialization failed: {e}")))?;
    write_atomic(&out_dir.join("study.json"), &json)?;
    write_atomic(&out_dir.join("study.tsv"), &study_table(report))?;
    write_atomic(&out_dir.join("study_plot.gp"), &study_plot_script("study.tsv"))?;
    Ok(())
}

/// Convenience: emit the canonical config echo next to the other outputs.
pub fn write_config_echo(cfg: &RunConfig, out_dir: &Path) -> Result<()> {
    std::fs::create_dir_all(out_dir)?;
    write_atomic(&out_dir.join("config_echo.txt"), &emit_config(cfg))
}
