//! Independent strong-form reference solver on the moving domain.
//!
//! The density is tracked on `M` uniform cells of the normalized coordinate
//! `y = x / X(t)`. Each step advances the interface explicitly by its
//! nonlinear law, then solves one backward-Euler step of the bulk equation
//! written in conservative arbitrary-Lagrangian-Eulerian form: for the cell
//! `[y_i X, y_{i+1} X]`,
//!
//! ```text
//!   d/dt (X h rho_i) = F_{i+1/2} - F_{i-1/2},
//!   F_face = (d_y rho)/(h X) + y_face Xdot rho_face.
//! ```
//!
//! The conservative interface condition makes the right face flux exactly
//! `Xdot`, and the origin face carries either zero flux or a threshold clamp
//! (whichever the two-threshold exchange condition selects), so the tracked
//! mass excess agrees with the quadrature of the cells to machine precision.

use crate::density::GridDensity;
use crate::error::{CorrodeError, Result};
use crate::params::ModelParams;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct OracleState {
    pub t: f64,
    pub x: f64,
    /// Cell values on the normalized grid `y in [0, 1]`.
    pub values: Vec<f64>,
    /// Mass excess, advanced by the origin flux and equal to the quadrature
    /// of the cells.
    pub mass_excess: f64,
}

impl OracleState {
    pub fn new(x: f64, values: Vec<f64>) -> Result<Self> {
        let d = GridDensity::new(values.len(), x, values)?;
        Ok(OracleState {
            t: 0.0,
            x,
            mass_excess: d.mass_excess(),
            values: d.values,
        })
    }

    pub fn from_density(d: &GridDensity) -> Self {
        OracleState {
            t: 0.0,
            x: d.x,
            values: d.values.clone(),
            mass_excess: d.mass_excess(),
        }
    }

    pub fn to_density(&self) -> GridDensity {
        GridDensity::new(self.values.len(), self.x, self.values.clone()).unwrap()
    }

    pub fn quadrature_mass_excess(&self) -> f64 {
        let h = self.x / self.values.len() as f64;
        self.values.iter().map(|v| h * (v - 1.0)).sum()
    }
}

/// Behavior switches for the reference solver.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct OracleOptions {
    /// Freeze the interface (the infinite-friction limit).
    pub freeze_interface: bool,
    /// Pin the right face value to 1 instead of the conservative flux row.
    pub right_dirichlet_one: bool,
    /// Maximum halvings of `dt` when the origin clamp cannot settle.
    pub max_retries: u32,
}

impl Default for OracleOptions {
    fn default() -> Self {
        OracleOptions {
            freeze_interface: false,
            right_dirichlet_one: false,
            max_retries: 4,
        }
    }
}

/// Which origin condition produced the accepted solve.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ClampState {
    Free,
    Upper,
    Lower,
}

fn thomas_solve(sub: &[f64], diag: &[f64], sup: &[f64], rhs: &mut [f64]) -> Result<()> {
    let n = rhs.len();
    let mut c = vec![0.0f64; n];
    if diag[0] == 0.0 {
        return Err(CorrodeError::OracleFailure("singular tridiagonal row".into()));
    }
    c[0] = sup[0] / diag[0];
    rhs[0] /= diag[0];
    for i in 1..n {
        let m = diag[i] - sub[i] * c[i - 1];
        if m == 0.0 {
            return Err(CorrodeError::OracleFailure("singular tridiagonal row".into()));
        }
        c[i] = sup[i] / m;
        rhs[i] = (rhs[i] - sub[i] * rhs[i - 1]) / m;
    }
    for i in (0..n - 1).rev() {
        rhs[i] -= c[i] * rhs[i + 1];
    }
    Ok(())
}

/// Solve one implicit step at fixed geometry for a given origin condition.
/// Returns the new values and the discrete origin flux `d_x rho(0+)`.
fn solve_once(
    s: &OracleState,
    x_new: f64,
    x_dot: f64,
    dt: f64,
    clamp: ClampState,
    p: &ModelParams,
    opts: &OracleOptions,
) -> Result<(Vec<f64>, f64)> {
    let n = s.values.len();
    let h = 1.0 / n as f64;
    let mut sub = vec![0.0f64; n];
    let mut diag = vec![0.0f64; n];
    let mut sup = vec![0.0f64; n];
    let mut rhs = vec![0.0f64; n];
    let scale = x_new * h / dt;
    let dcoef = 1.0 / (h * x_new);

    for i in 0..n {
        diag[i] = scale;
        rhs[i] = s.x * h / dt * s.values[i];
        // Right face (between i and i+1) at y = (i+1) h.
        if i + 1 < n {
            let yf = (i as f64 + 1.0) * h;
            let adv = yf * x_dot * 0.5;
            // F = dcoef (rho_{i+1} - rho_i) + adv (rho_i + rho_{i+1});
            // the row subtracts F.
            diag[i] += dcoef - adv;
            sup[i] += -(dcoef + adv);
        } else if opts.right_dirichlet_one {
            // Ghost 2 - rho_{n-1}: F = dcoef (2 - 2 rho_{n-1}) + x_dot * 1.
            diag[i] += 2.0 * dcoef;
            rhs[i] += 2.0 * dcoef + x_dot;
        } else {
            // Conservative interface condition: the flux is exactly Xdot.
            rhs[i] += x_dot;
        }
        // Left face at y = i h.
        if i > 0 {
            let yf = i as f64 * h;
            let adv = yf * x_dot * 0.5;
            diag[i] += dcoef + adv;
            sub[i] += -(dcoef - adv);
        } else {
            match clamp {
                ClampState::Free => {} // zero flux, no advection at y = 0
                ClampState::Upper | ClampState::Lower => {
                    let rc = if clamp == ClampState::Upper {
                        p.rho_plus
                    } else {
                        p.rho_minus
                    };
                    // Ghost 2 rc - rho_0: F_left = 2 dcoef (rho_0 - rc).
                    diag[i] += 2.0 * dcoef;
                    rhs[i] += 2.0 * dcoef * rc;
                }
            }
        }
    }
    thomas_solve(&sub, &diag, &sup, &mut rhs)?;
    let flux0 = match clamp {
        ClampState::Free => 0.0,
        ClampState::Upper => 2.0 * (rhs[0] - p.rho_plus) / (h * x_new),
        ClampState::Lower => 2.0 * (rhs[0] - p.rho_minus) / (h * x_new),
    };
    Ok((rhs, flux0))
}

/// Advance the reference solution by `dt`.
///
/// The interface moves first by its explicit law; the bulk then takes one
/// implicit step. The origin is solved with zero flux, and if the resulting
/// trace leaves the admissible band the step is re-solved with the violated
/// threshold clamped (the complementarity form of the exchange condition).
/// A clamp that cannot settle retries the step at `dt/2`, up to
/// `opts.max_retries` nested halvings.
pub fn fd_step(
    s: &OracleState,
    dt: f64,
    p: &ModelParams,
    opts: &OracleOptions,
) -> Result<OracleState> {
    fd_step_inner(s, dt, p, opts, 0)
}

fn fd_step_inner(
    s: &OracleState,
    dt: f64,
    p: &ModelParams,
    opts: &OracleOptions,
    depth: u32,
) -> Result<OracleState> {
    let r = *s.values.last().unwrap();
    if !(r > 0.0) {
        return Err(CorrodeError::OracleFailure(format!(
            "interface trace must be positive (got {r})"
        )));
    }
    let (x_new, x_dot) = if opts.freeze_interface {
        (s.x, 0.0)
    } else {
        let drive = p.alpha - (1.0 - r) - r.ln();
        let xn = s.x + dt / p.lambda * drive;
        (xn, drive / p.lambda)
    };

    let attempt = |clamp: ClampState| solve_once(s, x_new, x_dot, dt, clamp, p, opts);

    let (values, flux0, _state) = {
        let (free_vals, _) = attempt(ClampState::Free)?;
        let trace = free_vals[0];
        if trace > p.rho_plus {
            let (vals, f0) = attempt(ClampState::Upper)?;
            if f0 >= -1e-13 && vals[0] >= p.rho_minus - 1e-13 {
                (vals, f0, ClampState::Upper)
            } else if depth < opts.max_retries {
                // The clamp flips within one step: halve dt and substep.
                let half = fd_step_inner(s, 0.5 * dt, p, opts, depth + 1)?;
                return fd_step_inner(&half, 0.5 * dt, p, opts, depth + 1);
            } else {
                return Err(CorrodeError::OracleFailure(
                    "origin clamp oscillates at the minimum step".into(),
                ));
            }
        } else if trace < p.rho_minus {
            let (vals, f0) = attempt(ClampState::Lower)?;
            if f0 <= 1e-13 && vals[0] <= p.rho_plus + 1e-13 {
                (vals, f0, ClampState::Lower)
            } else if depth < opts.max_retries {
                let half = fd_step_inner(s, 0.5 * dt, p, opts, depth + 1)?;
                return fd_step_inner(&half, 0.5 * dt, p, opts, depth + 1);
            } else {
                return Err(CorrodeError::OracleFailure(
                    "origin clamp oscillates at the minimum step".into(),
                ));
            }
        } else {
            (free_vals, 0.0, ClampState::Free)
        }
    };

    for v in &values {
        if !(*v > 0.0) || !v.is_finite() {
            return Err(CorrodeError::OracleFailure(
                "implicit solve produced a nonpositive value".into(),
            ));
        }
    }
    Ok(OracleState {
        t: s.t + dt,
        x: x_new,
        values,
        mass_excess: s.mass_excess - dt * flux0,
    })
}

/// A sampled reference trajectory.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct OracleRun {
    pub states: Vec<OracleState>,
    pub steps: usize,
    /// Steps on which an origin clamp was active.
    pub clamp_steps: usize,
}

/// Time loop over [`fd_step`], sampling every `sample_every` steps (the final
/// state is always included).
pub fn run_oracle(
    initial: OracleState,
    t_final: f64,
    dt: f64,
    p: &ModelParams,
    opts: &OracleOptions,
    sample_every: usize,
) -> Result<OracleRun> {
    if t_final < 0.0 {
        return Err(CorrodeError::Precondition("t_final must be >= 0".into()));
    }
    let n_steps = (t_final / dt).round() as usize;
    let stride = sample_every.max(1);
    let mut states = vec![initial.clone()];
    let mut cur = initial;
    let mut clamp_steps = 0usize;
    for n in 0..n_steps {
        let m_before = cur.mass_excess;
        cur = fd_step(&cur, dt, p, opts)?;
        if (cur.mass_excess - m_before).abs() > 0.0 {
            clamp_steps += 1;
        }
        if (n + 1) % stride == 0 || n + 1 == n_steps {
            states.push(cur.clone());
        }
    }
    Ok(OracleRun {
        states,
        steps: n_steps,
        clamp_steps,
    })
}
