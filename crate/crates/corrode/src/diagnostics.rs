//! Trajectory-level ledgers and checkers: dissipation bookkeeping, a-priori
//! bounds, weak-form residuals, the boundary variational inequality, and the
//! discrete dual norm used for time-translate estimates.

use crate::density::State;
use crate::energy::{entropy_integral, lyapunov};
use crate::error::{CorrodeError, Result};
use crate::params::{ModelParams, PenaltyParams};
use crate::stepper::{smoothstep5, StepReport, TestBasis};
use serde::{Deserialize, Serialize};

/// A discrete trajectory: one state per accepted step plus the initial one.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Trajectory {
    pub tau: f64,
    pub states: Vec<State>,
    pub reports: Vec<StepReport>,
}

impl Trajectory {
    pub fn new(initial: State, tau: f64) -> Self {
        Trajectory {
            tau,
            states: vec![initial],
            reports: Vec::new(),
        }
    }

    pub fn push(&mut self, state: State, report: StepReport) {
        self.states.push(state);
        self.reports.push(report);
    }

    pub fn final_state(&self) -> &State {
        self.states.last().unwrap()
    }

    pub fn duration(&self) -> f64 {
        self.final_state().t - self.states[0].t
    }

    /// `sum_n tau ((ln rho^n(0) - ln rho_plus)+)^2` over the post-initial
    /// states: the trace-band excess that the penalty scaling drives to zero.
    pub fn trace_band_sum(&self, p: &ModelParams) -> f64 {
        let lp = p.rho_plus.ln();
        self.states[1..]
            .iter()
            .map(|s| {
                let e = (s.density.rho_at_0().ln() - lp).max(0.0);
                self.tau * e * e
            })
            .sum()
    }

    /// `sum_n tau ||rho^{n+1} - rho^n||_{H*}^2` on `[0, length]` with
    /// `m_cells` sample cells: the squared time-translate series.
    pub fn time_translate_sum(&self, length: f64, m_cells: usize) -> f64 {
        let h = length / m_cells as f64;
        let mut total = 0.0;
        for w in self.states.windows(2) {
            let diff: Vec<f64> = (0..m_cells)
                .map(|i| {
                    let x = (i as f64 + 0.5) * h;
                    w[1].density.value_at(x) - w[0].density.value_at(x)
                })
                .collect();
            let nrm = hstar_norm(&diff, length);
            total += self.tau * nrm * nrm;
        }
        total
    }
}

/// One flagged bound violation.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BoundViolation {
    pub step: usize,
    pub kind: BoundKind,
    /// Amount by which the toleranced bound was exceeded.
    pub magnitude: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum BoundKind {
    LowerLog,
    UpperLog,
    SlopeLower,
    SlopeUpper,
}

/// Cumulative dissipation ledger of a run.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DiagnosticsLedger {
    pub cumulative_dsq_over_2tau: f64,
    pub cumulative_theta_absdm: f64,
    pub cumulative_penalty: f64,
    /// Lyapunov value after every state (initial included).
    pub lyapunov_series: Vec<f64>,
    pub bound_violations: Vec<BoundViolation>,
    /// `int f(rho0) + (alpha + exp(beta-1) - beta) X_final`, refreshed as the
    /// interface advances; the three cumulative sums stay below it.
    pub apriori_rhs: f64,
    /// Discrete bulk channel `4 sum h ((sqrt rho)')^2` per step.
    pub bulk_dissipation: Vec<f64>,
    /// Interface channel `lambda (dX/tau)^2` per step.
    pub interface_dissipation: Vec<f64>,
    /// Boundary channel `theta |dM| / tau` per step.
    pub boundary_dissipation: Vec<f64>,
    /// Per-step recomputed `(min ln rho, max ln rho)` of the new state.
    pub step_log_bounds: Vec<(f64, f64)>,
    entropy0: f64,
}

impl DiagnosticsLedger {
    pub fn new(initial: &State, p: &ModelParams) -> Self {
        DiagnosticsLedger {
            cumulative_dsq_over_2tau: 0.0,
            cumulative_theta_absdm: 0.0,
            cumulative_penalty: 0.0,
            lyapunov_series: vec![lyapunov(initial, p)],
            bound_violations: Vec::new(),
            apriori_rhs: entropy_integral(&initial.density, p.beta)
                + p.coercivity_constant() * initial.x(),
            bulk_dissipation: Vec::new(),
            interface_dissipation: Vec::new(),
            boundary_dissipation: Vec::new(),
            step_log_bounds: Vec::new(),
            entropy0: entropy_integral(&initial.density, p.beta),
        }
    }

    /// Fold one accepted step into the ledger.
    pub fn record_step(
        &mut self,
        previous: &State,
        new: &State,
        report: &StepReport,
        p: &ModelParams,
        tau: f64,
    ) {
        self.cumulative_dsq_over_2tau += report.d_sq / (2.0 * tau);
        self.cumulative_theta_absdm += p.theta * report.delta_mass.abs();
        self.cumulative_penalty += report.penalty_value;
        self.lyapunov_series.push(lyapunov(new, p));
        self.apriori_rhs = self.entropy0 + p.coercivity_constant() * new.x();

        let h = new.density.h();
        let mut bulk = 0.0;
        for w in new.density.values.windows(2) {
            let ds = (w[1].sqrt() - w[0].sqrt()) / h;
            bulk += h * ds * ds;
        }
        self.bulk_dissipation.push(4.0 * bulk);
        let dx_rate = (new.x() - previous.x()) / tau;
        self.interface_dissipation.push(p.lambda * dx_rate * dx_rate);
        self.boundary_dissipation
            .push(p.theta * report.delta_mass.abs() / tau);

        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for v in &new.density.values {
            let l = v.ln();
            lo = lo.min(l);
            hi = hi.max(l);
        }
        self.step_log_bounds.push((lo, hi));
    }

    /// Total of the three penalized sums.
    pub fn cumulative_total(&self) -> f64 {
        self.cumulative_dsq_over_2tau + self.cumulative_theta_absdm + self.cumulative_penalty
    }

    /// The a-priori inequality the sums must satisfy on accepted runs.
    pub fn apriori_satisfied(&self, slack: f64) -> bool {
        self.cumulative_total() <= self.apriori_rhs + slack
    }
}

/// Default tolerance on the log bounds.
pub const BOUNDS_LOG_TOL: f64 = 1e-3;

/// Flag cells outside `[a - tol, b + tol]` in `ln rho` and interior-edge
/// slopes of `ln rho` outside `[-A - tol_s, B_tau + tol_s]`, with
/// `tol = 1e-3` and `tol_s = 1e-2 B_tau`.
pub fn bounds_check(new: &State, pp: &PenaltyParams) -> Vec<BoundViolation> {
    bounds_check_with(new, pp, BOUNDS_LOG_TOL, 1e-2 * pp.b_tau)
}

pub fn bounds_check_with(
    new: &State,
    pp: &PenaltyParams,
    tol: f64,
    tol_s: f64,
) -> Vec<BoundViolation> {
    let mut out = Vec::new();
    let lo = pp.log_bound_lower() - tol;
    let hi = pp.log_bound_upper() + tol;
    for (i, v) in new.density.values.iter().enumerate() {
        let l = v.ln();
        if l < lo {
            out.push(BoundViolation {
                step: i,
                kind: BoundKind::LowerLog,
                magnitude: lo - l,
            });
        } else if l > hi {
            out.push(BoundViolation {
                step: i,
                kind: BoundKind::UpperLog,
                magnitude: l - hi,
            });
        }
    }
    let h = new.density.h();
    let s_lo = -pp.big_a - tol_s;
    let s_hi = pp.b_tau + tol_s;
    for (e, w) in new.density.values.windows(2).enumerate() {
        let s = (w[1].ln() - w[0].ln()) / h;
        if s < s_lo {
            out.push(BoundViolation {
                step: e + 1,
                kind: BoundKind::SlopeLower,
                magnitude: s_lo - s,
            });
        } else if s > s_hi {
            out.push(BoundViolation {
                step: e + 1,
                kind: BoundKind::SlopeUpper,
                magnitude: s - s_hi,
            });
        }
    }
    out
}

/// Residuals of the space-time weak formulation over fixed test bases.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct WeakResidualReport {
    /// Bulk-equation residuals, one per (space, time) basis pair.
    pub rho_residuals: Vec<f64>,
    /// Interface-equation residuals, one per time hat function.
    pub x_residuals: Vec<f64>,
    /// Variational-inequality margins (negative = violation).
    pub vi_margins: Vec<f64>,
}

impl WeakResidualReport {
    pub fn max_rho_residual(&self) -> f64 {
        self.rho_residuals.iter().fold(0.0, |a, b| a.max(b.abs()))
    }

    pub fn max_x_residual(&self) -> f64 {
        self.x_residuals.iter().fold(0.0, |a, b| a.max(b.abs()))
    }

    pub fn min_vi_margin(&self) -> f64 {
        self.vi_margins.iter().fold(f64::INFINITY, |a, b| a.min(*b))
    }
}

/// Integral of a smooth scalar function against one cell of a piecewise
/// constant field (Simpson, effectively exact here).
fn simpson<F: Fn(f64) -> f64>(a: f64, b: f64, f: F) -> f64 {
    (b - a) / 6.0 * (f(a) + 4.0 * f(0.5 * (a + b)) + f(b))
}

/// Hat function on the uniform time grid `t_k = k T / n_hats`.
fn hat(k: usize, n_hats: usize, t_total: f64, t: f64) -> f64 {
    let dt = t_total / n_hats as f64;
    let c = k as f64 * dt;
    (1.0 - (t - c).abs() / dt).max(0.0)
}

/// Evaluate the space-time residuals of the bulk weak equation and the
/// interface weak equation over the fixed tensor bases: spatial functions
/// from [`TestBasis`] anchored at the initial interface, hat functions in
/// time (bulk test functions vanish at the final time).
///
/// The exchange measure is represented by the per-step increments, paired
/// with the test function's slab average in time.
pub fn weak_residuals(
    traj: &Trajectory,
    basis_size: usize,
    p: &ModelParams,
) -> Result<WeakResidualReport> {
    if traj.states.len() < 2 {
        return Err(CorrodeError::Precondition(
            "weak_residuals needs a trajectory with at least 2 states".into(),
        ));
    }
    let tau = traj.tau;
    let t_total = traj.duration();
    let x0 = traj.states[0].x();
    let basis = TestBasis::new(x0);
    let n_steps = traj.states.len() - 1;
    let n_space = basis_size.min(crate::stepper::EL_BASIS_SIZE);
    let n_hats = basis_size;

    let slab = |n: usize| (n as f64 * tau, (n as f64 + 1.0) * tau);

    let mut rho_residuals = Vec::with_capacity(n_space * n_hats);
    for j in 0..n_space {
        // Per-state spatial integrals of rho against the basis function and
        // the summation-by-parts gradient pairing.
        let int_rho_phi: Vec<f64> = traj
            .states
            .iter()
            .map(|s| {
                let mut acc = 0.0;
                for (i, v) in s.density.values.iter().enumerate() {
                    let a = s.density.edge(i);
                    let b = s.density.edge(i + 1);
                    if a > 0.85 * x0 {
                        break;
                    }
                    acc += v * simpson(a, b, |x| basis.value(j, x));
                }
                acc
            })
            .collect();
        let grad_pair: Vec<f64> = traj
            .states
            .iter()
            .map(|s| {
                let mut acc = 0.0;
                for e in 1..s.density.n_cells {
                    let x = s.density.edge(e);
                    if x > 0.85 * x0 {
                        break;
                    }
                    acc += (s.density.values[e] - s.density.values[e - 1]) * basis.deriv(j, x);
                }
                acc
            })
            .collect();
        let phi0 = basis.value(j, 0.0);

        for k in 0..n_hats {
            // phi(x, t) = P_j(x) H_k(t); H_k(T) = 0 for k < n_hats.
            let mut r = 0.0;
            for n in 0..n_steps {
                let (t0, t1) = slab(n);
                let h0 = hat(k, n_hats, t_total, t0);
                let h1 = hat(k, n_hats, t_total, t1);
                // -int rho d_t phi, exact in t for the piecewise field.
                r -= int_rho_phi[n + 1] * (h1 - h0);
                // Exchange increment against the slab average of phi(0, t).
                let avg = simpson(t0, t1, |t| hat(k, n_hats, t_total, t)) / tau;
                let dm = traj.states[n + 1].mass_excess - traj.states[n].mass_excess;
                r -= dm * avg * phi0;
                // Gradient pairing integrated in time.
                let w = simpson(t0, t1, |t| hat(k, n_hats, t_total, t));
                r += grad_pair[n + 1] * w;
            }
            // Initial pairing.
            r -= int_rho_phi[0] * hat(k, n_hats, t_total, 0.0);
            rho_residuals.push(r);
        }
    }

    // Interface law against every time hat (including the final one; the
    // interface test class has no terminal constraint).
    let mut x_residuals = Vec::with_capacity(n_hats + 1);
    for k in 0..=n_hats {
        let mut r = 0.0;
        for n in 0..n_steps {
            let (t0, t1) = slab(n);
            let w = simpson(t0, t1, |t| hat(k, n_hats, t_total, t));
            let dx_rate = (traj.states[n + 1].x() - traj.states[n].x()) / tau;
            let trc = traj.states[n + 1].density.rho_at_x_minus();
            r += w * (p.lambda * dx_rate - p.alpha + (1.0 - trc) + trc.ln());
        }
        x_residuals.push(r);
    }

    Ok(WeakResidualReport {
        rho_residuals,
        x_residuals,
        vi_margins: Vec::new(),
    })
}

/// How the boundary comparison value is built in [`vi_check`].
enum EtaKind {
    /// `eta(x, t) = value * q(t)` with `q` the fixed release profile.
    Constant(f64),
    /// `eta(x, t)` frozen to the run's own origin trace, slab by slab.
    FrozenTrace,
}

/// Fixed nonnegative time test family for the variational inequality:
/// quintic bumps of width `0.2 T` centered across `[0, T)`, vanishing at the
/// final time; the first one is centered at 0 so the initial pairing is
/// exercised.
fn vi_phi(m: usize, t_total: f64, t: f64) -> (f64, f64) {
    let centers = [0.0, 0.35, 0.6, 0.8];
    let width = 0.2 * t_total;
    let c = centers[m] * t_total;
    let s = 1.0 - (t - c).abs() / width;
    if s <= 0.0 {
        return (0.0, 0.0);
    }
    let (v, d1, _) = smoothstep5(s);
    (v, -d1 * (t - c).signum() / width)
}

/// Minimum number of steps for the space-time diagnostics to resolve their
/// fixed test families (bump width over slab width).
pub const MIN_DIAGNOSTIC_STEPS: usize = 16;

/// Number of phi profiles in the fixed family.
pub const VI_PHI_COUNT: usize = 4;

/// Release profile for the constant-in-space comparison values: 1 until
/// `0.7 T`, quintic descent to 0 at `T`.
fn vi_release(t_total: f64, t: f64) -> (f64, f64) {
    let lo = 0.7 * t_total;
    if t <= lo {
        return (1.0, 0.0);
    }
    if t >= t_total {
        return (0.0, 0.0);
    }
    let w = t_total - lo;
    let s = (t_total - t) / w;
    let (v, d1, _) = smoothstep5(s);
    (v, -d1 / w)
}

/// Margins `RHS - LHS` of the boundary variational inequality for each pair
/// of a fixed nonnegative time profile and a comparison value in
/// `[rho_minus, rho_plus]` (constant in space, released to zero at the final
/// time). Nonnegative margins up to discretization are expected of solutions.
pub fn vi_check(traj: &Trajectory, eta_values: &[f64], p: &ModelParams) -> Result<Vec<f64>> {
    for e in eta_values {
        if *e < p.rho_minus || *e > p.rho_plus {
            return Err(CorrodeError::Precondition(format!(
                "comparison value {e} outside [{}, {}]",
                p.rho_minus, p.rho_plus
            )));
        }
    }
    let kinds: Vec<EtaKind> = eta_values.iter().map(|e| EtaKind::Constant(*e)).collect();
    vi_margins_impl(traj, &kinds)
}

/// Margins with the comparison value frozen to the trajectory's own origin
/// trace (always admissible for a lawful run).
pub fn vi_check_frozen_trace(traj: &Trajectory) -> Result<Vec<f64>> {
    vi_margins_impl(traj, &[EtaKind::FrozenTrace])
}

fn vi_margins_impl(traj: &Trajectory, etas: &[EtaKind]) -> Result<Vec<f64>> {
    if traj.states.len() < 2 {
        return Err(CorrodeError::Precondition(
            "vi_check needs a trajectory with at least 2 states".into(),
        ));
    }
    let tau = traj.tau;
    let t_total = traj.duration();
    let x0 = traj.states[0].x();
    let n_steps = traj.states.len() - 1;

    // Cutoff: 1 on [0, X0/2], quintic descent to 0 at 3 X0 / 4.
    let chi = |x: f64| -> (f64, f64, f64) {
        let lo = 0.5 * x0;
        let hi = 0.75 * x0;
        if x <= lo {
            return (1.0, 0.0, 0.0);
        }
        if x >= hi {
            return (0.0, 0.0, 0.0);
        }
        let w = hi - lo;
        let s = (hi - x) / w;
        let (v, d1, d2) = smoothstep5(s);
        (v, -d1 / w, d2 / (w * w))
    };

    // Fine fixed sampling grid on [0, 3 X0/4].
    let q_cells = 2048usize;
    let span = 0.75 * x0;
    let hq = span / q_cells as f64;
    let xs: Vec<f64> = (0..q_cells).map(|i| (i as f64 + 0.5) * hq).collect();

    // Per-state sampled fields: u = chi rho, du = d(chi rho)/dx,
    // g = -chi'' rho - 2 chi' rho_x, plus the spatial integrals needed.
    struct SlabData {
        b1: f64,      // int u^2/2
        b2: f64,      // int u
        c3: f64,      // int (du)^2
        d1: f64,      // int g u
        d2: f64,      // int g
        trace: f64,   // rho(0)
    }
    let sample = |s: &State| -> SlabData {
        let dens = &s.density;
        let h = dens.h();
        let mut b1 = 0.0;
        let mut b2 = 0.0;
        let mut c3 = 0.0;
        let mut d1 = 0.0;
        let mut d2 = 0.0;
        for &x in &xs {
            let rho = dens.value_at(x);
            // Derivative of the midpoint-interpolated profile.
            let i = ((x / h) as usize).min(dens.n_cells - 1);
            let drho = if x < dens.midpoint(0) || i + 1 >= dens.n_cells {
                0.0
            } else if x >= dens.midpoint(i) {
                (dens.values[i + 1] - dens.values[i]) / h
            } else if i > 0 {
                (dens.values[i] - dens.values[i - 1]) / h
            } else {
                0.0
            };
            let (c, c1, c2) = chi(x);
            let u = c * rho;
            let du = c1 * rho + c * drho;
            let g = -c2 * rho - 2.0 * c1 * drho;
            b1 += hq * 0.5 * u * u;
            b2 += hq * u;
            c3 += hq * du * du;
            d1 += hq * g * u;
            d2 += hq * g;
        }
        SlabData {
            b1,
            b2,
            c3,
            d1,
            d2,
            trace: dens.rho_at_0(),
        }
    };

    let slabs: Vec<SlabData> = traj.states.iter().map(sample).collect();
    let slab_t = |n: usize| (n as f64 * tau, (n as f64 + 1.0) * tau);

    let mut margins = Vec::with_capacity(VI_PHI_COUNT * etas.len());
    for eta in etas {
        for m in 0..VI_PHI_COUNT {
            let phi = |t: f64| vi_phi(m, t_total, t).0;
            let eta_at = |n: usize, t: f64| -> (f64, f64) {
                match eta {
                    EtaKind::Constant(v) => {
                        let (q, dq) = vi_release(t_total, t);
                        (v * q, v * dq)
                    }
                    EtaKind::FrozenTrace => (slabs[n + 1].trace, 0.0),
                }
            };

            let mut lhs = 0.0;
            let mut rhs = 0.0;
            for n in 0..n_steps {
                let (t0, t1) = slab_t(n);
                let sd = &slabs[n + 1];
                // -int phi' (u^2/2 - eta u):
                // the u-part pairs with phi' exactly; the eta-part is smooth.
                lhs -= sd.b1 * (phi(t1) - phi(t0));
                let (_, dphi0) = vi_phi(m, t_total, t0);
                let (_, dphi1) = vi_phi(m, t_total, t1);
                let mid = 0.5 * (t0 + t1);
                let (_, dphim) = vi_phi(m, t_total, mid);
                let eta_term = (t1 - t0) / 6.0
                    * (dphi0 * eta_at(n, t0).0
                        + 4.0 * dphim * eta_at(n, mid).0
                        + dphi1 * eta_at(n, t1).0);
                lhs += sd.b2 * eta_term;
                // + int phi u d_t eta.
                let dt_eta = (t1 - t0) / 6.0
                    * (phi(t0) * eta_at(n, t0).1
                        + 4.0 * phi(mid) * eta_at(n, mid).1
                        + phi(t1) * eta_at(n, t1).1);
                lhs += sd.b2 * dt_eta;
                // + int phi (du)^2 (eta is constant in space).
                let wphi = simpson(t0, t1, phi);
                lhs += sd.c3 * wphi;
                // RHS source pairing: int phi g (u - eta).
                let g_eta = (t1 - t0) / 6.0
                    * (phi(t0) * eta_at(n, t0).0
                        + 4.0 * phi(mid) * eta_at(n, mid).0
                        + phi(t1) * eta_at(n, t1).0);
                rhs += sd.d1 * wphi - sd.d2 * g_eta;
            }
            // RHS initial term: phi(0) int (u^2/2 - u eta)(., 0).
            let sd0 = &slabs[0];
            let eta00 = match eta {
                EtaKind::Constant(v) => v * vi_release(t_total, 0.0).0,
                EtaKind::FrozenTrace => slabs[1].trace,
            };
            rhs += phi(0.0) * (sd0.b1 - eta00 * sd0.b2);

            margins.push(rhs - lhs);
        }
    }
    Ok(margins)
}

/// Discrete dual `H^1` norm on `[0, length]`: solve `-v'' + v = w` with
/// zero-flux ends on the cell-centered grid and return `sqrt(sum h w v)`.
pub fn hstar_norm(w: &[f64], length: f64) -> f64 {
    let n = w.len();
    if n == 0 {
        return 0.0;
    }
    let h = length / n as f64;
    let k = 1.0 / (h * h);
    // Thomas solve of the SPD tridiagonal system.
    let mut diag = vec![0.0f64; n];
    let mut rhs = w.to_vec();
    for (i, d) in diag.iter_mut().enumerate() {
        let neighbors = if i == 0 || i == n - 1 { 1.0 } else { 2.0 };
        *d = 1.0 + neighbors * k;
    }
    let off = -k;
    let mut c = vec![0.0f64; n];
    c[0] = off / diag[0];
    rhs[0] /= diag[0];
    for i in 1..n {
        let m = diag[i] - off * c[i - 1];
        c[i] = off / m;
        rhs[i] = (rhs[i] - off * rhs[i - 1]) / m;
    }
    for i in (0..n - 1).rev() {
        rhs[i] -= c[i] * rhs[i + 1];
    }
    let mut acc = 0.0;
    for (wi, vi) in w.iter().zip(&rhs) {
        acc += h * wi * vi;
    }
    acc.max(0.0).sqrt()
}
