//! One minimizing-movements step and its per-step law checkers.
//!
//! A step from `(X_prev, rho_prev)` minimizes
//!
//! ```text
//!   J(X, rho) = W2^2(rho, rho_prev)/(2 tau) + lambda (X - X_prev)^2/(2 tau)
//!             + int f(rho) + theta |M| - alpha X + p_tau(M)
//! ```
//!
//! over `X >= X_prev` and positive cell values, with
//! `M = M(rho) - M(rho_prev)` the mass exchanged through the origin.
//!
//! The solver alternates an exact interface update (the closed-form
//! stationarity of `J` in `X`), a conservative remap onto the new domain, and
//! a monotone descent in the log cell values. The `theta |M|` kink is handled
//! by an active-set split: first minimize restricted to the `M = 0` manifold,
//! then test the least-squares multiplier against `theta`; only when it
//! certifies a genuine exchange regime is the sign fixed and the smooth
//! signed problem descended.

use crate::density::{GridDensity, State};
use crate::energy::{boltzmann_f_prime, entropy_integral};
use crate::error::{CorrodeError, Result};
use crate::params::{ModelParams, PenaltyParams};
use crate::transport::{wasserstein_sq, TransportResult};
use serde::{Deserialize, Serialize};

/// Stopping and acceptance controls for one step.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct SolverOptions {
    /// Total inner-iteration budget per step.
    pub max_iters: usize,
    /// Gradient-norm stop: `||g||_2 < grad_tol_factor * n_cells`.
    pub grad_tol_factor: f64,
    /// Objective-decrease stop: `|dJ| < j_tol_factor * |J|`.
    pub j_tol_factor: f64,
    /// Outer sweeps coupling the interface and the density.
    pub max_sweeps: usize,
    /// Acceptance cap: `el_residual <= cap * ||rho||_L2`.
    pub el_residual_cap_rel: f64,
    /// Acceptance cap on the trace-law defect (applies when `|M|` is
    /// resolvable, i.e. above the zero-mass tolerance).
    pub trace_defect_cap: f64,
    /// Acceptance cap on the interface-law defect.
    pub interface_residual_cap: f64,
}

impl Default for SolverOptions {
    fn default() -> Self {
        SolverOptions {
            max_iters: 500,
            grad_tol_factor: 1e-9,
            j_tol_factor: 1e-13,
            max_sweeps: 40,
            el_residual_cap_rel: 1e-3,
            trace_defect_cap: 1e-3,
            interface_residual_cap: 1e-10,
        }
    }
}

/// Ledger of one accepted (or failed) step.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StepReport {
    pub j_initial: f64,
    pub j_final: f64,
    /// Squared step distance `W2^2 + lambda (X - X_prev)^2`.
    pub d_sq: f64,
    pub w2_sq: f64,
    /// Mass exchanged through the origin this step.
    pub delta_mass: f64,
    pub penalty_value: f64,
    pub inner_iterations: usize,
    pub sweeps: usize,
    pub el_residual: f64,
    pub interface_residual: f64,
    pub trace_defect: f64,
    pub accepted: bool,
    /// Populated when the solver could not finish the step.
    pub failure: Option<String>,
}

/// One-sided quadratic penalty on mass outflow:
/// `p(m) = K/2 ((-m - m_tau)+)^2`, returned with its derivative
/// `p'(m) = -K (-m - m_tau)+ <= 0`.
pub fn penalty_eval(m: f64, pp: &PenaltyParams) -> (f64, f64) {
    let excess = (-m - pp.m_tau).max(0.0);
    (0.5 * pp.k_tau * excess * excess, -pp.k_tau * excess)
}

/// Closed-form interface update: the stationarity of the step functional in
/// the interface position,
/// `X = X_prev + (tau/lambda) (alpha - (1 - r) - ln r)` with `r` the trace
/// just inside the interface. The bracket is `>= alpha` for every `r > 0`
/// since `ln r <= r - 1`, so the interface never recedes.
pub fn interface_update(x_prev: f64, rho_x_minus: f64, p: &ModelParams, tau: f64) -> Result<f64> {
    if !(rho_x_minus > 0.0) || !rho_x_minus.is_finite() {
        return Err(CorrodeError::Domain(format!(
            "interface trace must be > 0 (got {rho_x_minus})"
        )));
    }
    let drive = p.alpha - (1.0 - rho_x_minus) - rho_x_minus.ln();
    Ok(x_prev + tau / p.lambda * drive)
}

/// Intermediate evaluation shared by the public objective and the inner
/// solver: everything except the `theta |M|` term.
struct CoreEval {
    j0: f64,
    grad0_u: Vec<f64>,
    grad0_x: f64,
    m: f64,
    m_prime: f64,
}

fn eval_core(
    cand: &GridDensity,
    previous: &State,
    pp: &PenaltyParams,
    p: &ModelParams,
    tau: f64,
) -> CoreEval {
    let x = cand.x;
    let xp = previous.x();
    let n = cand.n_cells;
    let h = cand.h();
    let tr = wasserstein_sq(cand, &previous.density);
    let m = cand.mass_excess() - previous.mass_excess;
    let (pen, p_prime) = penalty_eval(m, pp);
    let entropy = entropy_integral(cand, p.beta);
    let dx = x - xp;
    let j0 =
        tr.w2_sq / (2.0 * tau) + p.lambda * dx * dx / (2.0 * tau) + entropy - p.alpha * x + pen;

    let psi0 = tr.psi_at_zero;
    let mut grad0_u = Vec::with_capacity(n);
    for i in 0..n {
        let rho = cand.values[i];
        let stat = (tr.psi_cell_means[i] - psi0) / tau + boltzmann_f_prime(rho, p.beta) + p_prime;
        grad0_u.push(stat * h * rho);
    }

    // Dilation derivative of the squared distance: stretching the candidate
    // grid moves the cell edges at rate x/X while the shared domain grows at
    // unit rate; by the envelope theorem on the dual formulation
    //   dW2^2/dX = (2/X) sum_i rho_i [x Psi(x)]_{edge_i}^{edge_i+1}
    //              - 2 Psi(X) - 2 m' Psi(0),
    // with m' = dM/dX the per-length mass-excess rate.
    let m_prime: f64 = cand.values.iter().map(|v| v - 1.0).sum::<f64>() / n as f64;
    let mut dw2_dx = 0.0;
    for i in 0..n {
        let e0 = i as f64 * h;
        let e1 = (i + 1) as f64 * h;
        dw2_dx += cand.values[i] * (e1 * tr.psi_edges[i + 1] - e0 * tr.psi_edges[i]);
    }
    dw2_dx = 2.0 / x * dw2_dx - 2.0 * tr.psi_edges[n] - 2.0 * m_prime * psi0;

    let grad0_x =
        p.lambda * dx / tau - p.alpha + entropy / x + p_prime * m_prime + dw2_dx / (2.0 * tau);

    CoreEval {
        j0,
        grad0_u,
        grad0_x,
        m,
        m_prime,
    }
}

/// Value and gradient of the step functional at a candidate `(X, rho)`.
///
/// The gradient is taken in the log cell values (each entry carries the cell
/// mass Jacobian `h rho_i`) and in the domain length under the grid-stretch
/// parametrization the candidate actually uses, so central differences of
/// `objective_eval` itself reproduce both blocks. `theta |M|` enters through
/// the subgradient choice `theta sign(M)` (zero at `M = 0`).
pub fn objective_eval(
    cand: &GridDensity,
    previous: &State,
    pp: &PenaltyParams,
    p: &ModelParams,
    tau: f64,
) -> Result<(f64, Vec<f64>, f64)> {
    if cand.x < previous.x() * (1.0 - 1e-12) {
        return Err(CorrodeError::Precondition(format!(
            "candidate X = {} below previous X = {}",
            cand.x,
            previous.x()
        )));
    }
    let core = eval_core(cand, previous, pp, p, tau);
    let sgn = if core.m == 0.0 { 0.0 } else { core.m.signum() };
    let j = core.j0 + p.theta * core.m.abs();
    let h = cand.h();
    let grad_u: Vec<f64> = core
        .grad0_u
        .iter()
        .zip(&cand.values)
        .map(|(g, rho)| g + p.theta * sgn * h * rho)
        .collect();
    let grad_x = core.grad0_x + p.theta * sgn * core.m_prime;
    Ok((j, grad_u, grad_x))
}

/// How the inner descent treats the mass-exchange term.
#[derive(Clone, Copy, PartialEq)]
enum MassMode {
    /// Restricted to the manifold `M = 0`; the kink term vanishes there.
    Pinned,
    /// Smooth objective with the exchange sign frozen.
    Signed(f64),
}

struct InnerOutcome {
    values: Vec<f64>,
    iterations: usize,
    converged: bool,
    grad_norm: f64,
    multiplier: f64,
}

fn rescale_to_mass(values: &mut [f64], h: f64, target_mass: f64) {
    let s: f64 = values.iter().sum::<f64>() * h;
    if s > 0.0 && target_mass > 0.0 {
        let kappa = target_mass / s;
        for v in values.iter_mut() {
            *v *= kappa;
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn descend(
    mode: MassMode,
    dens: &GridDensity,
    previous: &State,
    pp: &PenaltyParams,
    p: &ModelParams,
    tau: f64,
    opts: &SolverOptions,
    budget: usize,
) -> InnerOutcome {
    let n = dens.n_cells;
    let h = dens.h();
    let x = dens.x;
    // Mass on [0, X] corresponding to M = 0.
    let target_mass = x + previous.mass_excess;

    let mut values = dens.values.clone();
    if mode == MassMode::Pinned {
        rescale_to_mass(&mut values, h, target_mass);
    }

    // Full objective and gradient for the mode (theta-term included when the
    // sign is frozen), plus the least-squares multiplier of the smooth part
    // against the mass-constraint normal.
    let eval = |vals: &[f64]| -> (f64, Vec<f64>, f64) {
        let cand = GridDensity {
            n_cells: n,
            x,
            values: vals.to_vec(),
        };
        let core = eval_core(&cand, previous, pp, p, tau);
        let w: Vec<f64> = vals.iter().map(|v| h * v).collect();
        let ww: f64 = w.iter().map(|a| a * a).sum();
        let gw: f64 = core.grad0_u.iter().zip(&w).map(|(g, a)| g * a).sum();
        let mu = -gw / ww;
        match mode {
            MassMode::Pinned => {
                let g = core
                    .grad0_u
                    .iter()
                    .zip(&w)
                    .map(|(gr, a)| gr + mu * a)
                    .collect();
                (core.j0, g, mu)
            }
            MassMode::Signed(s) => {
                let j = core.j0 + p.theta * s * core.m;
                let g = core
                    .grad0_u
                    .iter()
                    .zip(&w)
                    .map(|(gr, a)| gr + p.theta * s * a)
                    .collect();
                (j, g, mu)
            }
        }
    };

    // In the frozen-sign mode the exchange term and the penalty are stiff
    // rank-one functions of the total mass; handle that direction by an
    // exact scalar solve (secant on the directional derivative along a
    // uniform log shift) so the tangential descent stays well conditioned.
    let mut scalar_warm = 1e-4f64;
    let mut mass_line_solve =
        |vals: &mut Vec<f64>, evals: &mut usize| -> (f64, Vec<f64>, f64) {
            let (mut j0v, mut g0, mut mu0) = eval(vals);
            *evals += 1;
            if mode == MassMode::Pinned {
                return (j0v, g0, mu0);
            }
            let dir_d = |g: &[f64]| -> f64 { g.iter().sum() };
            let mut t0 = 0.0f64;
            let mut d0 = dir_d(&g0);
            // Bracket a sign change of the directional derivative, starting
            // from the previous solve's displacement scale.
            let mut step = scalar_warm.max(1e-9).copysign(-d0);
            let mut t1 = t0;
            let mut d1 = d0;
            let mut j1 = j0v;
            let mut g1 = g0.clone();
            let mut mu1 = mu0;
            let mut bracketed = false;
            for _ in 0..12 {
                t1 += step;
                let shifted: Vec<f64> = vals.iter().map(|v| (v.ln() + t1).exp()).collect();
                let (jt, gt, mt) = eval(&shifted);
                *evals += 1;
                d1 = dir_d(&gt);
                j1 = jt;
                g1 = gt;
                mu1 = mt;
                if d1 * d0 <= 0.0 {
                    bracketed = true;
                    break;
                }
                step *= 4.0;
            }
            if !bracketed {
                return (j0v, g0, mu0);
            }
            for _ in 0..16 {
                if (t1 - t0).abs() < 1e-16 || d1 == d0 {
                    break;
                }
                let mut tm = t1 - d1 * (t1 - t0) / (d1 - d0);
                let lo = t0.min(t1);
                let hi = t0.max(t1);
                if !(tm > lo && tm < hi) {
                    tm = 0.5 * (t0 + t1);
                }
                let shifted: Vec<f64> = vals.iter().map(|v| (v.ln() + tm).exp()).collect();
                let (jm, gm, mm) = eval(&shifted);
                *evals += 1;
                let dm = dir_d(&gm);
                if dm * d0 <= 0.0 {
                    t1 = tm;
                    d1 = dm;
                    j1 = jm;
                    g1 = gm;
                    mu1 = mm;
                } else {
                    t0 = tm;
                    d0 = dm;
                    j0v = jm;
                    g0 = gm;
                    mu0 = mm;
                }
                if dm.abs() < 1e-12 * (1.0 + dir_d(&g0).abs()) {
                    break;
                }
            }
            let (t_best, jb, gb, mb) = if j1 <= j0v {
                (t1, j1, g1, mu1)
            } else {
                (t0, j0v, g0, mu0)
            };
            scalar_warm = t_best.abs().clamp(1e-9, 1e-2);
            for v in vals.iter_mut() {
                *v = (v.ln() + t_best).exp();
            }
            (jb, gb, mb)
        };

    // Project a gradient onto the tangent of the total-mass level set.
    let project = |g: &[f64], vals: &[f64]| -> Vec<f64> {
        let w: Vec<f64> = vals.iter().map(|v| h * v).collect();
        let ww: f64 = w.iter().map(|a| a * a).sum();
        let gw: f64 = g.iter().zip(&w).map(|(a, b)| a * b).sum();
        g.iter().zip(&w).map(|(a, b)| a - gw / ww * b).collect()
    };

    let grad_tol = opts.grad_tol_factor * n as f64;
    let mut evals = 0usize;
    let (mut j, mut g_full, mut mu) = mass_line_solve(&mut values, &mut evals);
    let mut g = match mode {
        MassMode::Pinned => g_full.clone(),
        MassMode::Signed(_) => project(&g_full, &values),
    };
    let mut iterations = evals.max(1);
    let mut converged = false;
    // L-BFGS history in the log coordinates.
    const LBFGS_MEM: usize = 8;
    let mut hist: std::collections::VecDeque<(Vec<f64>, Vec<f64>, f64)> =
        std::collections::VecDeque::new();

    while iterations < budget {
        let gn2: f64 = g.iter().map(|v| v * v).sum();
        let gn = gn2.sqrt();
        if gn < grad_tol {
            converged = true;
            break;
        }

        // Two-loop recursion for the quasi-Newton direction.
        let mut d: Vec<f64> = g.clone();
        let mut alphas = Vec::with_capacity(hist.len());
        for (s, y, rho_i) in hist.iter().rev() {
            let a = rho_i * s.iter().zip(&d).map(|(x, q)| x * q).sum::<f64>();
            for (qi, yi) in d.iter_mut().zip(y) {
                *qi -= a * yi;
            }
            alphas.push(a);
        }
        if let Some((s, y, _)) = hist.back() {
            let sy: f64 = s.iter().zip(y).map(|(a, b)| a * b).sum();
            let yy: f64 = y.iter().map(|v| v * v).sum();
            if yy > 0.0 {
                let scale = sy / yy;
                for qi in d.iter_mut() {
                    *qi *= scale;
                }
            }
        } else {
            let scale = 0.1 / (1.0 + gn);
            for qi in d.iter_mut() {
                *qi *= scale;
            }
        }
        for ((s, y, rho_i), a) in hist.iter().zip(alphas.iter().rev()) {
            let b = rho_i * y.iter().zip(&d).map(|(x, q)| x * q).sum::<f64>();
            for (qi, si) in d.iter_mut().zip(s) {
                *qi += (a - b) * si;
            }
        }
        // Descent safeguard.
        let gd: f64 = g.iter().zip(&d).map(|(a, b)| a * b).sum();
        if !(gd > 0.0) || !gd.is_finite() {
            hist.clear();
            let scale = 0.1 / (1.0 + gn);
            d = g.iter().map(|v| v * scale).collect();
        }
        let gd: f64 = g.iter().zip(&d).map(|(a, b)| a * b).sum();

        // Backtracking line search (Armijo) along -d.
        let mut eta = 1.0f64;
        let mut accepted = false;
        let mut trial = values.clone();
        let mut jt = j;
        let mut gt_full = g_full.clone();
        let mut mu_t = mu;
        for _ in 0..60 {
            for (t, (v, di)) in trial.iter_mut().zip(values.iter().zip(&d)) {
                let u = v.ln() - eta * di;
                *t = u.clamp(-60.0, 60.0).exp();
            }
            if mode == MassMode::Pinned {
                rescale_to_mass(&mut trial, h, target_mass);
            }
            let (j_try, g_try, mu_try) = eval(&trial);
            iterations += 1;
            if j_try <= j - 1e-4 * eta * gd {
                jt = j_try;
                gt_full = g_try;
                mu_t = mu_try;
                accepted = true;
                break;
            }
            eta *= 0.5;
            if iterations >= budget {
                break;
            }
        }
        if !accepted {
            // The direction cannot improve J beyond roundoff; a stall at a
            // small gradient is convergence, anything else is reported back.
            converged = gn < 1e3 * grad_tol;
            break;
        }
        let dj = j - jt;
        // Re-optimize the mass direction from the accepted point.
        if mode != MassMode::Pinned {
            let mut evals2 = 0usize;
            let mut trial2 = trial.clone();
            let (j2, g2, mu2) = mass_line_solve(&mut trial2, &mut evals2);
            iterations += evals2;
            if j2 <= jt {
                trial = trial2;
                jt = j2;
                gt_full = g2;
                mu_t = mu2;
            }
        }

        let gt = match mode {
            MassMode::Pinned => gt_full.clone(),
            MassMode::Signed(_) => project(&gt_full, &trial),
        };
        let s: Vec<f64> = trial
            .iter()
            .zip(&values)
            .map(|(a, b)| a.ln() - b.ln())
            .collect();
        let y: Vec<f64> = gt.iter().zip(&g).map(|(a, b)| a - b).collect();
        let sy: f64 = s.iter().zip(&y).map(|(a, b)| a * b).sum();
        let ss: f64 = s.iter().map(|v| v * v).sum();
        let yy: f64 = y.iter().map(|v| v * v).sum();
        if sy > 1e-12 * (ss * yy).sqrt() && sy.is_finite() {
            hist.push_back((s, y, 1.0 / sy));
            if hist.len() > LBFGS_MEM {
                hist.pop_front();
            }
        }
        values = trial;
        j = jt;
        g = gt;
        g_full = gt_full;
        mu = mu_t;
        if dj.abs() < opts.j_tol_factor * j.abs().max(1e-300) {
            converged = true;
            break;
        }
    }
    let grad_norm = g.iter().map(|v| v * v).sum::<f64>().sqrt();
    if !converged && grad_norm < grad_tol {
        converged = true;
    }

    InnerOutcome {
        values,
        iterations,
        converged,
        grad_norm,
        multiplier: mu,
    }
}

/// Absolute tolerance under which a step's mass exchange counts as zero.
pub fn zero_mass_tol(previous: &State) -> f64 {
    1e-12 * previous.density.mass_on_domain().max(1.0)
}

/// Run one minimizing-movements step.
pub fn minimize_step(
    previous: &State,
    pp: &PenaltyParams,
    p: &ModelParams,
    tau: f64,
    opts: &SolverOptions,
) -> Result<(State, StepReport)> {
    if !(tau > 0.0 && tau < 1.0) {
        return Err(CorrodeError::Precondition(format!(
            "tau must lie in (0, 1) (got {tau})"
        )));
    }
    let n = previous.density.n_cells;
    let j_initial = entropy_integral(&previous.density, p.beta) - p.alpha * previous.x();

    let mut dens = previous.density.clone();
    let mut total_inner = 0usize;
    let mut sweeps = 0usize;
    let mut failure: Option<String> = None;
    let mut kink_active = true;

    for sweep in 0..opts.max_sweeps {
        sweeps = sweep + 1;
        // Interface update from the current trace, then conservative remap.
        let r = dens.rho_at_x_minus();
        let x_new = interface_update(previous.x(), r, p, tau)?.max(previous.x());
        if x_new != dens.x {
            dens = dens.remap(x_new)?;
        }

        let budget = opts.max_iters.saturating_sub(total_inner);
        if budget == 0 {
            failure = Some("inner iteration budget exhausted".into());
            break;
        }

        // Phase A: mass exchange pinned to zero.
        let pinned = descend(MassMode::Pinned, &dens, previous, pp, p, tau, opts, budget);
        total_inner += pinned.iterations;
        let mut best_values = pinned.values;
        kink_active = true;
        failure = None;
        if pinned.multiplier.abs() > p.theta {
            // The multiplier certifies a genuine exchange; fix its sign and
            // solve the smooth signed problem from the pinned point.
            let sgn = if pinned.multiplier > 0.0 { 1.0 } else { -1.0 };
            let warm = GridDensity {
                n_cells: n,
                x: dens.x,
                values: best_values.clone(),
            };
            let budget2 = opts.max_iters.saturating_sub(total_inner);
            if budget2 > 0 {
                let signed = descend(
                    MassMode::Signed(sgn),
                    &warm,
                    previous,
                    pp,
                    p,
                    tau,
                    opts,
                    budget2,
                );
                total_inner += signed.iterations;
                let cand = GridDensity {
                    n_cells: n,
                    x: dens.x,
                    values: signed.values.clone(),
                };
                let m_signed = cand.mass_excess() - previous.mass_excess;
                if m_signed * sgn > zero_mass_tol(previous) {
                    best_values = signed.values;
                    kink_active = false;
                    if !signed.converged {
                        failure = Some(format!(
                            "signed descent stalled (grad norm {:.3e})",
                            signed.grad_norm
                        ));
                    }
                } // else the exchange collapsed back onto the kink; keep phase A.
            } else {
                failure = Some("inner iteration budget exhausted".into());
            }
        } else if !pinned.converged {
            failure = Some(format!(
                "pinned descent stalled (grad norm {:.3e})",
                pinned.grad_norm
            ));
        }
        dens = GridDensity {
            n_cells: n,
            x: dens.x,
            values: best_values,
        };

        // Stop sweeping once the trace and the interface position agree; the
        // final polish below closes the remaining gap without descents.
        let x_implied = interface_update(previous.x(), dens.rho_at_x_minus(), p, tau)?;
        if (x_implied - dens.x).abs() <= 1e-9 * dens.x.max(1.0) || failure.is_some() {
            break;
        }
    }

    // Interface polish: iterate the closed-form update to a fixed point
    // without further density descent so the interface law holds to
    // roundoff; the conservative remap barely moves the trace, so this
    // contracts in a couple of iterations.
    for _ in 0..50 {
        let x_t = interface_update(previous.x(), dens.rho_at_x_minus(), p, tau)?.max(previous.x());
        if (x_t - dens.x).abs() <= 1e-15 * dens.x.max(1.0) {
            break;
        }
        dens = dens.remap(x_t)?;
        if kink_active {
            let h = dens.h();
            let tm = x_t + previous.mass_excess;
            let mut vals = dens.values.clone();
            rescale_to_mass(&mut vals, h, tm);
            dens = GridDensity {
                n_cells: n,
                x: x_t,
                values: vals,
            };
        }
    }

    let new_state = State::new(previous.t + tau, dens);
    let tr = wasserstein_sq(&new_state.density, &previous.density);
    let m = new_state.mass_excess - previous.mass_excess;
    let (pen, _) = penalty_eval(m, pp);
    let dx = new_state.x() - previous.x();
    let d_sq = tr.w2_sq + p.lambda * dx * dx;
    let j_final = d_sq / (2.0 * tau) + entropy_integral(&new_state.density, p.beta)
        + p.theta * m.abs()
        - p.alpha * new_state.x()
        + pen;

    let (el_residual, interface_residual, trace_defect) =
        step_residuals(previous, &new_state, &tr, pp, p, tau);

    let rho_l2 = {
        let h = new_state.density.h();
        new_state
            .density
            .values
            .iter()
            .map(|v| h * v * v)
            .sum::<f64>()
            .sqrt()
    };
    let monotone = j_final <= j_initial + 1e-12 * j_initial.abs().max(1.0);
    let caps_ok = interface_residual <= opts.interface_residual_cap
        && el_residual <= opts.el_residual_cap_rel * rho_l2
        && (m.abs() <= zero_mass_tol(previous) || trace_defect <= opts.trace_defect_cap);
    let accepted = failure.is_none() && monotone && caps_ok;
    let failure = if failure.is_none() && !accepted {
        Some(format!(
            "acceptance caps violated (monotone: {monotone}, el: {el_residual:.3e}, \
             interface: {interface_residual:.3e}, trace: {trace_defect:.3e})"
        ))
    } else {
        failure
    };

    let report = StepReport {
        j_initial,
        j_final,
        d_sq,
        w2_sq: tr.w2_sq,
        delta_mass: m,
        penalty_value: pen,
        inner_iterations: total_inner,
        sweeps,
        el_residual,
        interface_residual,
        trace_defect,
        accepted,
        failure,
    };
    Ok((new_state, report))
}

/// Version tag of the fixed residual test basis below.
pub const EL_BASIS_VERSION: u32 = 1;
/// Number of test functions in the residual basis.
pub const EL_BASIS_SIZE: usize = 8;

/// Fixed test basis for the bulk weak-law residual: the first eight Chebyshev
/// polynomials in `2x/X - 1`, multiplied by a quintic cutoff that is 1 on
/// `[0, 0.6 X]` and 0 past `0.85 X`, each normalized so that
/// `max(sup |psi|, sup |psi'|, sup |psi''|) = 1`.
pub struct TestBasis {
    pub x: f64,
    norms: Vec<f64>,
}

/// Quintic smoothstep and its first two derivatives on [0, 1].
pub(crate) fn smoothstep5(t: f64) -> (f64, f64, f64) {
    if t <= 0.0 {
        return (0.0, 0.0, 0.0);
    }
    if t >= 1.0 {
        return (1.0, 0.0, 0.0);
    }
    let t2 = t * t;
    let t3 = t2 * t;
    (
        6.0 * t3 * t2 - 15.0 * t2 * t2 + 10.0 * t3,
        30.0 * t2 * t2 - 60.0 * t3 + 30.0 * t2,
        120.0 * t3 - 180.0 * t2 + 60.0 * t,
    )
}

impl TestBasis {
    pub fn new(x: f64) -> Self {
        let mut basis = TestBasis {
            x,
            norms: vec![1.0; EL_BASIS_SIZE],
        };
        let mut norms = [0.0f64; EL_BASIS_SIZE];
        let samples = 2048;
        for s in 0..=samples {
            let pos = x * s as f64 / samples as f64;
            for (k, nk) in norms.iter_mut().enumerate() {
                let (v, d1, d2) = basis.eval_raw(k, pos);
                *nk = nk.max(v.abs()).max(d1.abs()).max(d2.abs());
            }
        }
        basis.norms = norms
            .iter()
            .map(|nk| if *nk > 0.0 { *nk } else { 1.0 })
            .collect();
        basis
    }

    /// Cutoff value and first two derivatives at `pos`.
    fn cutoff(&self, pos: f64) -> (f64, f64, f64) {
        let lo = 0.6 * self.x;
        let hi = 0.85 * self.x;
        if pos <= lo {
            return (1.0, 0.0, 0.0);
        }
        if pos >= hi {
            return (0.0, 0.0, 0.0);
        }
        let w = hi - lo;
        let t = (hi - pos) / w;
        let (v, d1, d2) = smoothstep5(t);
        (v, -d1 / w, d2 / (w * w))
    }

    fn eval_raw(&self, k: usize, pos: f64) -> (f64, f64, f64) {
        let s = 2.0 * pos / self.x - 1.0;
        let ds = 2.0 / self.x;
        let (t, dt, ddt) = match k {
            0 => (1.0, 0.0, 0.0),
            1 => (s, 1.0, 0.0),
            _ => {
                let (mut t0, mut t1) = (1.0f64, s);
                let (mut d0, mut d1) = (0.0f64, 1.0);
                let (mut e0, mut e1) = (0.0f64, 0.0);
                let mut out = (0.0, 0.0, 0.0);
                for _ in 2..=k {
                    let t2 = 2.0 * s * t1 - t0;
                    let d2 = 2.0 * t1 + 2.0 * s * d1 - d0;
                    let e2 = 4.0 * d1 + 2.0 * s * e1 - e0;
                    t0 = t1;
                    t1 = t2;
                    d0 = d1;
                    d1 = d2;
                    e0 = e1;
                    e1 = e2;
                    out = (t2, d2, e2);
                }
                out
            }
        };
        let (c, c1, c2) = self.cutoff(pos);
        let v = t * c;
        let dv = dt * ds * c + t * c1;
        let ddv = ddt * ds * ds * c + 2.0 * dt * ds * c1 + t * c2;
        (v, dv, ddv)
    }

    /// Normalized value of basis function `k` at `pos`.
    pub fn value(&self, k: usize, pos: f64) -> f64 {
        self.eval_raw(k, pos).0 / self.norms[k]
    }

    /// Normalized first derivative of basis function `k` at `pos`.
    pub fn deriv(&self, k: usize, pos: f64) -> f64 {
        self.eval_raw(k, pos).1 / self.norms[k]
    }
}

/// Per-step law defects.
///
/// * `el_residual`: worst defect over the fixed basis of the discrete bulk
///   identity `int (rho - rho_prev)/tau psi - (M/tau) psi(0) + int rho' psi'`,
///   with `rho'` the first-difference derivative at interior cell edges.
/// * `interface_residual`: defect of the interface law.
/// * `trace_defect`: defect of the origin trace law for the step's exchange
///   regime (distance to the admissible band when no mass moved).
pub fn step_residuals(
    previous: &State,
    new: &State,
    transport: &TransportResult,
    pp: &PenaltyParams,
    p: &ModelParams,
    tau: f64,
) -> (f64, f64, f64) {
    let _ = transport; // the law checkers re-derive everything they need
    let basis = TestBasis::new(new.x());
    let m = new.mass_excess - previous.mass_excess;

    // Merged piecewise-constant decomposition for the time-difference term.
    let top = new.x().max(previous.x());
    let mut edges: Vec<f64> = Vec::new();
    for i in 0..=new.density.n_cells {
        edges.push(new.density.edge(i));
    }
    for i in 0..=previous.density.n_cells {
        edges.push(previous.density.edge(i));
    }
    edges.push(top);
    edges.retain(|e| *e <= top);
    edges.sort_by(|a, b| a.partial_cmp(b).unwrap());
    edges.dedup_by(|a, b| (*a - *b).abs() <= f64::EPSILON * top);

    let mut el_residual = 0.0f64;
    for k in 0..EL_BASIS_SIZE {
        let mut r = -(m / tau) * basis.value(k, 0.0);
        for w in edges.windows(2) {
            let (a, b) = (w[0], w[1]);
            if b <= a {
                continue;
            }
            let mid = 0.5 * (a + b);
            let drho = (new.density.value_at(mid) - previous.density.value_at(mid)) / tau;
            let iv = (b - a) / 6.0
                * (basis.value(k, a) + 4.0 * basis.value(k, mid) + basis.value(k, b));
            r += drho * iv;
        }
        // Summation-by-parts form of int rho' psi'.
        for e in 1..new.density.n_cells {
            let jump = new.density.values[e] - new.density.values[e - 1];
            r += jump * basis.deriv(k, new.density.edge(e));
        }
        el_residual = el_residual.max(r.abs());
    }

    let rx = new.density.rho_at_x_minus();
    let interface_residual =
        (p.lambda * (new.x() - previous.x()) / tau - p.alpha + (1.0 - rx) + rx.ln()).abs();

    let rho0 = new.density.rho_at_0();
    let trace_defect = if m.abs() <= zero_mass_tol(previous) {
        (p.rho_minus - rho0).max(rho0 - p.rho_plus).max(0.0)
    } else if m < 0.0 {
        let (_, p_prime) = penalty_eval(m, pp);
        (rho0 - p.rho_plus * (-p_prime).exp()).abs()
    } else {
        (rho0 - p.rho_minus).abs()
    };

    (el_residual, interface_residual, trace_defect)
}
