//! Model constants and the step-dependent penalty parameters.

use crate::error::{CorrodeError, Result};
use crate::density::GridDensity;
use serde::{Deserialize, Serialize};

/// Physical constants of the model together with the derived boundary
/// thresholds `rho_minus`/`rho_plus`.
///
/// Validity: `theta > 0`, `beta + theta < 1`, `alpha > 0`, `lambda > 0`,
/// which is equivalent to `0 < rho_minus < rho_plus < 1`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    /// Interface driving constant.
    pub alpha: f64,
    /// Interface friction.
    pub lambda: f64,
    pub beta: f64,
    pub theta: f64,
    /// exp(beta - theta - 1), lower trace threshold at x = 0.
    pub rho_minus: f64,
    /// exp(beta + theta - 1), upper trace threshold at x = 0.
    pub rho_plus: f64,
}

/// Map `(beta, theta)` to the trace thresholds `(rho_minus, rho_plus)`.
///
/// `rho_minus = exp(beta - theta - 1)`, `rho_plus = exp(beta + theta - 1)`.
pub fn derive_thresholds(beta: f64, theta: f64) -> Result<(f64, f64)> {
    if !(theta > 0.0) {
        return Err(CorrodeError::Config(format!(
            "theta must be > 0 (got theta = {theta})"
        )));
    }
    if !(beta + theta < 1.0) {
        return Err(CorrodeError::Config(format!(
            "beta + theta must be < 1 (got beta + theta = {})",
            beta + theta
        )));
    }
    if !beta.is_finite() || !theta.is_finite() {
        return Err(CorrodeError::Config("beta and theta must be finite".into()));
    }
    Ok(((beta - theta - 1.0).exp(), (beta + theta - 1.0).exp()))
}

impl ModelParams {
    pub fn new(alpha: f64, lambda: f64, beta: f64, theta: f64) -> Result<Self> {
        if !(alpha > 0.0) || !alpha.is_finite() {
            return Err(CorrodeError::Config(format!(
                "alpha must be > 0 (got {alpha})"
            )));
        }
        if !(lambda > 0.0) || !lambda.is_finite() {
            return Err(CorrodeError::Config(format!(
                "lambda must be > 0 (got {lambda})"
            )));
        }
        let (rho_minus, rho_plus) = derive_thresholds(beta, theta)?;
        Ok(ModelParams {
            alpha,
            lambda,
            beta,
            theta,
            rho_minus,
            rho_plus,
        })
    }

    /// Pointwise lower bound of the entropy density: `f(r) >= beta - exp(beta-1)`.
    pub fn f_min(&self) -> f64 {
        self.beta - (self.beta - 1.0).exp()
    }

    /// `alpha + exp(beta-1) - beta`, the growth constant of the coercivity
    /// bound on the step functional.
    pub fn coercivity_constant(&self) -> f64 {
        self.alpha + (self.beta - 1.0).exp() - self.beta
    }

    /// Lower bound on the step functional for a step started at interface
    /// position `x_prev`; no admissible candidate can fall below it.
    pub fn objective_lower_bound(&self, x_prev: f64) -> f64 {
        let c = self.coercivity_constant();
        -c * c / (2.0 * self.lambda) - x_prev * c
    }
}

/// Parameters of the one-sided mass-outflow penalty and the Lipschitz-bound
/// bookkeeping derived from a reference density profile.
///
/// `m_tau = B0' exp(a) tau^(1-vartheta) / 2` and
/// `K_tau = 2 (b - ln rho_plus) / (B0' exp(a)) tau^(vartheta-1)`, where
/// `a`/`b` are the min/max of `ln rho` over the cells of the reference
/// profile and `B0' = max(B0, delta0)`. When `b <= ln rho_plus` the
/// numerator is floored at `epsilon_k` so the penalty stays well posed;
/// `floored` records that this happened.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PenaltyParams {
    pub vartheta: f64,
    pub delta0: f64,
    /// min of ln rho over the reference cells.
    pub a: f64,
    /// max of ln rho over the reference cells.
    pub b: f64,
    /// -min(0, inf (ln rho)') of the reference profile.
    pub big_a: f64,
    /// sup (ln rho)' of the reference profile.
    pub b0: f64,
    /// max(b0, delta0).
    pub b0_prime: f64,
    pub tau: f64,
    pub m_tau: f64,
    pub k_tau: f64,
    /// B0' tau^(-vartheta), the Lipschitz ceiling for (ln rho)'.
    pub b_tau: f64,
    pub epsilon_k: f64,
    pub floored: bool,
}

impl PenaltyParams {
    /// Derive the penalty parameters from a reference profile (normally the
    /// initial datum). Slopes of `ln rho` are measured by first differences
    /// at interior cell edges.
    pub fn from_profile(
        reference: &GridDensity,
        p: &ModelParams,
        tau: f64,
        vartheta: f64,
        delta0: f64,
        epsilon_k: f64,
    ) -> Result<Self> {
        if !(tau > 0.0 && tau < 1.0) {
            return Err(CorrodeError::Config(format!(
                "tau must lie in (0, 1) (got {tau})"
            )));
        }
        if !(vartheta > 0.0 && vartheta < 0.5) {
            return Err(CorrodeError::Config(format!(
                "vartheta must lie in (0, 1/2) (got {vartheta})"
            )));
        }
        if !(delta0 > 0.0) {
            return Err(CorrodeError::Config(format!(
                "delta0 must be > 0 (got {delta0})"
            )));
        }
        let logs: Vec<f64> = reference.values.iter().map(|v| v.ln()).collect();
        let a = logs.iter().cloned().fold(f64::INFINITY, f64::min);
        let b = logs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let h = reference.h();
        let mut slope_min = 0.0f64;
        let mut slope_max = 0.0f64;
        for w in logs.windows(2) {
            let s = (w[1] - w[0]) / h;
            slope_min = slope_min.min(s);
            slope_max = slope_max.max(s);
        }
        let big_a = -slope_min.min(0.0);
        let b0 = slope_max;
        Self::from_constants(a, b, big_a, b0, p, tau, vartheta, delta0, epsilon_k)
    }

    /// Build from explicit `a`, `b`, `A`, `B0`.
    #[allow(clippy::too_many_arguments)]
    pub fn from_constants(
        a: f64,
        b: f64,
        big_a: f64,
        b0: f64,
        p: &ModelParams,
        tau: f64,
        vartheta: f64,
        delta0: f64,
        epsilon_k: f64,
    ) -> Result<Self> {
        let b0_prime = b0.max(delta0);
        let ln_rho_plus = p.rho_plus.ln();
        let mut gap = b - ln_rho_plus;
        let floored = gap <= epsilon_k;
        if floored {
            gap = epsilon_k;
        }
        let m_tau = 0.5 * b0_prime * a.exp() * tau.powf(1.0 - vartheta);
        let k_tau = 2.0 * gap / (b0_prime * a.exp()) * tau.powf(vartheta - 1.0);
        let b_tau = b0_prime * tau.powf(-vartheta);
        if !(k_tau > 0.0) || !k_tau.is_finite() || !m_tau.is_finite() {
            return Err(CorrodeError::Config(format!(
                "penalty parameters degenerate (m_tau = {m_tau}, K_tau = {k_tau})"
            )));
        }
        Ok(PenaltyParams {
            vartheta,
            delta0,
            a,
            b,
            big_a,
            b0,
            b0_prime,
            tau,
            m_tau,
            k_tau,
            b_tau,
            epsilon_k,
            floored,
        })
    }

    /// Lower bound used by the log-bound monitor: `a`.
    pub fn log_bound_lower(&self) -> f64 {
        self.a
    }

    /// Upper bound used by the log-bound monitor.
    ///
    /// The profile is identically 1 past its support, and a growing interface
    /// folds that material into the domain, so the preserved ceiling is
    /// `max(b, ln 1) = max(b, 0)`, not the cell maximum alone.
    pub fn log_bound_upper(&self) -> f64 {
        self.b.max(0.0)
    }
}
