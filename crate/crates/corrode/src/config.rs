//! Run configuration: flat `key = value` text with dotted section prefixes,
//! strict validation, and a canonical emitter whose output parses back to an
//! identical configuration.

use crate::density::GridDensity;
use crate::error::{CorrodeError, Result};
use crate::params::{ModelParams, PenaltyParams};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Rho0Kind {
    Constant,
    Affine,
    Table,
}

impl Rho0Kind {
    fn as_str(&self) -> &'static str {
        match self {
            Rho0Kind::Constant => "constant",
            Rho0Kind::Affine => "affine",
            Rho0Kind::Table => "table",
        }
    }

    fn parse(s: &str) -> Result<Self> {
        match s {
            "constant" => Ok(Rho0Kind::Constant),
            "affine" => Ok(Rho0Kind::Affine),
            "table" => Ok(Rho0Kind::Table),
            other => Err(CorrodeError::Parse(format!(
                "initial.rho0_kind must be constant, affine or table (got '{other}')"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub alpha: f64,
    pub lambda: f64,
    pub beta: f64,
    pub theta: f64,
    pub x0: f64,
    pub rho0_kind: Rho0Kind,
    pub rho0_params: Vec<f64>,
    pub n_cells: usize,
    pub tau: f64,
    pub t_final: f64,
    pub vartheta: f64,
    pub delta0: f64,
    pub epsilon_k: f64,
    pub max_iters: usize,
    pub grad_tol: f64,
    pub j_tol: f64,
    pub csv_path: String,
    pub json_path: String,
    pub sample_every: usize,
    pub strict: bool,
    pub oracle: bool,
    pub best_effort: bool,
}

/// Constants derived from a validated configuration, echoed alongside it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DerivedConstants {
    pub rho_minus: f64,
    pub rho_plus: f64,
    pub a: f64,
    pub b: f64,
    pub big_a: f64,
    pub b0: f64,
    pub b0_prime: f64,
    pub m_tau: f64,
    pub k_tau: f64,
    pub b_tau: f64,
    pub penalty_floored: bool,
}

impl RunConfig {
    /// Validated model parameters.
    pub fn model_params(&self) -> Result<ModelParams> {
        ModelParams::new(self.alpha, self.lambda, self.beta, self.theta)
    }

    /// Build the initial profile from the configured kind.
    pub fn initial_density(&self) -> Result<GridDensity> {
        match self.rho0_kind {
            Rho0Kind::Constant => {
                if self.rho0_params.len() != 1 {
                    return Err(CorrodeError::Config(
                        "initial.rho0_params must hold exactly one value for kind constant"
                            .into(),
                    ));
                }
                GridDensity::constant(self.n_cells, self.x0, self.rho0_params[0])
            }
            Rho0Kind::Affine => {
                if self.rho0_params.len() != 2 {
                    return Err(CorrodeError::Config(
                        "initial.rho0_params must hold two values (at 0 and at X0) for kind \
                         affine"
                            .into(),
                    ));
                }
                GridDensity::affine(self.n_cells, self.x0, self.rho0_params[0], self.rho0_params[1])
            }
            Rho0Kind::Table => {
                if self.rho0_params.len() != self.n_cells {
                    return Err(CorrodeError::Config(format!(
                        "initial.rho0_params must hold n_cells = {} values for kind table (got \
                         {})",
                        self.n_cells,
                        self.rho0_params.len()
                    )));
                }
                GridDensity::new(self.n_cells, self.x0, self.rho0_params.clone())
            }
        }
    }

    /// Full admissibility validation; returns the echoed derived constants.
    pub fn validate(&self) -> Result<DerivedConstants> {
        let p = self.model_params()?;
        if !(self.x0 > 0.0) {
            return Err(CorrodeError::Config(format!(
                "initial.X0 must be > 0 (got {})",
                self.x0
            )));
        }
        if self.n_cells == 0 {
            return Err(CorrodeError::Config(
                "discretization.n_cells must be >= 1".into(),
            ));
        }
        if !(self.tau > 0.0 && self.tau < 1.0) {
            return Err(CorrodeError::Config(format!(
                "discretization.tau must lie in (0, 1) (got {})",
                self.tau
            )));
        }
        if self.t_final < 0.0 {
            return Err(CorrodeError::Config(format!(
                "discretization.t_final must be >= 0 (got {})",
                self.t_final
            )));
        }
        if !(self.vartheta > 0.0 && self.vartheta < 0.5) {
            return Err(CorrodeError::Config(format!(
                "discretization.vartheta must lie in (0, 1/2) (got {})",
                self.vartheta
            )));
        }
        if self.sample_every == 0 {
            return Err(CorrodeError::Config(
                "outputs.sample_every must be >= 1".into(),
            ));
        }
        let rho0 = self.initial_density()?;
        for (i, v) in rho0.values.iter().enumerate() {
            if *v > 1.0 + 1e-12 {
                return Err(CorrodeError::Config(format!(
                    "initial profile must not exceed 1 (cell {i} = {v})"
                )));
            }
        }
        let trace = rho0.rho_at_0();
        if trace < p.rho_minus - 1e-12 || trace > p.rho_plus + 1e-12 {
            return Err(CorrodeError::Config(format!(
                "initial trace rho0(0) = {trace} outside the admissible band [{}, {}]",
                p.rho_minus, p.rho_plus
            )));
        }
        let pp = PenaltyParams::from_profile(
            &rho0,
            &p,
            self.tau,
            self.vartheta,
            self.delta0,
            self.epsilon_k,
        )?;
        Ok(DerivedConstants {
            rho_minus: p.rho_minus,
            rho_plus: p.rho_plus,
            a: pp.a,
            b: pp.b,
            big_a: pp.big_a,
            b0: pp.b0,
            b0_prime: pp.b0_prime,
            m_tau: pp.m_tau,
            k_tau: pp.k_tau,
            b_tau: pp.b_tau,
            penalty_floored: pp.floored,
        })
    }

    /// Penalty parameters frozen from the initial profile.
    pub fn penalty_params(&self) -> Result<PenaltyParams> {
        let p = self.model_params()?;
        let rho0 = self.initial_density()?;
        PenaltyParams::from_profile(&rho0, &p, self.tau, self.vartheta, self.delta0, self.epsilon_k)
    }
}

fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

fn join_f64(vs: &[f64]) -> String {
    vs.iter().map(|v| fmt_f64(*v)).collect::<Vec<_>>().join(",")
}

/// Canonical text form: inputs as `key = value` lines, derived constants as
/// trailing comments. Floating values carry 17 significant digits so the
/// round trip is exact.
pub fn emit_config(cfg: &RunConfig) -> String {
    let derived = cfg.validate().ok();
    let mut s = String::new();
    s.push_str(&format!("model.alpha = {}\n", fmt_f64(cfg.alpha)));
    s.push_str(&format!("model.lambda = {}\n", fmt_f64(cfg.lambda)));
    s.push_str(&format!("model.beta = {}\n", fmt_f64(cfg.beta)));
    s.push_str(&format!("model.theta = {}\n", fmt_f64(cfg.theta)));
    s.push_str(&format!("initial.X0 = {}\n", fmt_f64(cfg.x0)));
    s.push_str(&format!("initial.rho0_kind = {}\n", cfg.rho0_kind.as_str()));
    s.push_str(&format!(
        "initial.rho0_params = {}\n",
        join_f64(&cfg.rho0_params)
    ));
    s.push_str(&format!("discretization.n_cells = {}\n", cfg.n_cells));
    s.push_str(&format!("discretization.tau = {}\n", fmt_f64(cfg.tau)));
    s.push_str(&format!(
        "discretization.t_final = {}\n",
        fmt_f64(cfg.t_final)
    ));
    s.push_str(&format!(
        "discretization.vartheta = {}\n",
        fmt_f64(cfg.vartheta)
    ));
    s.push_str(&format!("discretization.delta0 = {}\n", fmt_f64(cfg.delta0)));
    s.push_str(&format!(
        "discretization.epsilon_K = {}\n",
        fmt_f64(cfg.epsilon_k)
    ));
    s.push_str(&format!("solver.max_iters = {}\n", cfg.max_iters));
    s.push_str(&format!("solver.grad_tol = {}\n", fmt_f64(cfg.grad_tol)));
    s.push_str(&format!("solver.j_tol = {}\n", fmt_f64(cfg.j_tol)));
    s.push_str(&format!("outputs.csv_path = {}\n", cfg.csv_path));
    s.push_str(&format!("outputs.json_path = {}\n", cfg.json_path));
    s.push_str(&format!("outputs.sample_every = {}\n", cfg.sample_every));
    s.push_str(&format!("flags.strict = {}\n", cfg.strict));
    s.push_str(&format!("flags.oracle = {}\n", cfg.oracle));
    s.push_str(&format!("flags.best_effort = {}\n", cfg.best_effort));
    if let Some(d) = derived {
        s.push_str(&format!("# derived.rho_minus = {}\n", fmt_f64(d.rho_minus)));
        s.push_str(&format!("# derived.rho_plus = {}\n", fmt_f64(d.rho_plus)));
        s.push_str(&format!("# derived.a = {}\n", fmt_f64(d.a)));
        s.push_str(&format!("# derived.b = {}\n", fmt_f64(d.b)));
        s.push_str(&format!("# derived.A = {}\n", fmt_f64(d.big_a)));
        s.push_str(&format!("# derived.B0 = {}\n", fmt_f64(d.b0)));
        s.push_str(&format!("# derived.B0_prime = {}\n", fmt_f64(d.b0_prime)));
        s.push_str(&format!("# derived.m_tau = {}\n", fmt_f64(d.m_tau)));
        s.push_str(&format!("# derived.K_tau = {}\n", fmt_f64(d.k_tau)));
        s.push_str(&format!("# derived.B_tau = {}\n", fmt_f64(d.b_tau)));
        s.push_str(&format!(
            "# derived.penalty_floored = {}\n",
            d.penalty_floored
        ));
    }
    s
}

/// Parse and validate a configuration document. Missing keys, unknown keys,
/// malformed values and admissibility violations are all reported by name.
pub fn parse_config(text: &str) -> Result<RunConfig> {
    let mut seen: Vec<(String, String)> = Vec::new();
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (k, v) = line.split_once('=').ok_or_else(|| {
            CorrodeError::Parse(format!("line {}: expected 'key = value'", lineno + 1))
        })?;
        let key = k.trim().to_string();
        if seen.iter().any(|(s, _)| *s == key) {
            return Err(CorrodeError::Parse(format!("duplicate key: {key}")));
        }
        seen.push((key, v.trim().to_string()));
    }
    let get = |key: &str| -> Option<&str> {
        seen.iter()
            .find(|(k, _)| k == key)
            .map(|(_, v)| v.as_str())
    };
    let require = |key: &str| -> Result<&str> {
        get(key).ok_or_else(|| CorrodeError::Parse(format!("missing key: {key}")))
    };
    let parse_f = |key: &str, v: &str| -> Result<f64> {
        v.parse::<f64>()
            .map_err(|_| CorrodeError::Parse(format!("{key}: not a number ('{v}')")))
    };
    let parse_u = |key: &str, v: &str| -> Result<usize> {
        v.parse::<usize>()
            .map_err(|_| CorrodeError::Parse(format!("{key}: not a nonnegative integer ('{v}')")))
    };
    let parse_b = |key: &str, v: &str| -> Result<bool> {
        v.parse::<bool>()
            .map_err(|_| CorrodeError::Parse(format!("{key}: not a boolean ('{v}')")))
    };

    const KNOWN: [&str; 22] = [
        "model.alpha",
        "model.lambda",
        "model.beta",
        "model.theta",
        "initial.X0",
        "initial.rho0_kind",
        "initial.rho0_params",
        "discretization.n_cells",
        "discretization.tau",
        "discretization.t_final",
        "discretization.vartheta",
        "discretization.delta0",
        "discretization.epsilon_K",
        "solver.max_iters",
        "solver.grad_tol",
        "solver.j_tol",
        "outputs.csv_path",
        "outputs.json_path",
        "outputs.sample_every",
        "flags.strict",
        "flags.oracle",
        "flags.best_effort",
    ];
    for (k, _) in &seen {
        if !KNOWN.contains(&k.as_str()) {
            return Err(CorrodeError::Parse(format!("unknown key: {k}")));
        }
    }

    let rho0_params: Vec<f64> = {
        let raw = require("initial.rho0_params")?;
        let mut out = Vec::new();
        for piece in raw.split(',') {
            out.push(parse_f("initial.rho0_params", piece.trim())?);
        }
        out
    };

    let cfg = RunConfig {
        alpha: parse_f("model.alpha", require("model.alpha")?)?,
        lambda: parse_f("model.lambda", require("model.lambda")?)?,
        beta: parse_f("model.beta", require("model.beta")?)?,
        theta: parse_f("model.theta", require("model.theta")?)?,
        x0: parse_f("initial.X0", require("initial.X0")?)?,
        rho0_kind: Rho0Kind::parse(require("initial.rho0_kind")?)?,
        rho0_params,
        n_cells: parse_u("discretization.n_cells", require("discretization.n_cells")?)?,
        tau: parse_f("discretization.tau", require("discretization.tau")?)?,
        t_final: parse_f("discretization.t_final", require("discretization.t_final")?)?,
        vartheta: match get("discretization.vartheta") {
            Some(v) => parse_f("discretization.vartheta", v)?,
            None => 1.0 / 15.0,
        },
        delta0: match get("discretization.delta0") {
            Some(v) => parse_f("discretization.delta0", v)?,
            None => 1.0,
        },
        epsilon_k: match get("discretization.epsilon_K") {
            Some(v) => parse_f("discretization.epsilon_K", v)?,
            None => 1e-3,
        },
        max_iters: match get("solver.max_iters") {
            Some(v) => parse_u("solver.max_iters", v)?,
            None => 500,
        },
        grad_tol: match get("solver.grad_tol") {
            Some(v) => parse_f("solver.grad_tol", v)?,
            None => 1e-9,
        },
        j_tol: match get("solver.j_tol") {
            Some(v) => parse_f("solver.j_tol", v)?,
            None => 1e-13,
        },
        csv_path: get("outputs.csv_path").unwrap_or("run.csv").to_string(),
        json_path: get("outputs.json_path").unwrap_or("run.json").to_string(),
        sample_every: match get("outputs.sample_every") {
            Some(v) => parse_u("outputs.sample_every", v)?,
            None => 1,
        },
        strict: match get("flags.strict") {
            Some(v) => parse_b("flags.strict", v)?,
            None => false,
        },
        oracle: match get("flags.oracle") {
            Some(v) => parse_b("flags.oracle", v)?,
            None => false,
        },
        best_effort: match get("flags.best_effort") {
            Some(v) => parse_b("flags.best_effort", v)?,
            None => false,
        },
    };
    cfg.validate()?;
    Ok(cfg)
}

/// The reference configuration used throughout the test suite.
pub fn default_config() -> RunConfig {
    RunConfig {
        alpha: 1.0,
        lambda: 1.0,
        beta: 0.2,
        theta: 0.3,
        x0: 1.0,
        rho0_kind: Rho0Kind::Constant,
        rho0_params: vec![0.5],
        n_cells: 200,
        tau: 1e-3,
        t_final: 0.1,
        vartheta: 1.0 / 15.0,
        delta0: 1.0,
        epsilon_k: 1e-3,
        max_iters: 500,
        grad_tol: 1e-9,
        j_tol: 1e-13,
        csv_path: "run.csv".into(),
        json_path: "run.json".into(),
        sample_every: 1,
        strict: false,
        oracle: false,
        best_effort: false,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_is_identity() {
        let mut cfg = default_config();
        cfg.rho0_kind = Rho0Kind::Affine;
        cfg.rho0_params = vec![0.55, 0.987654321012345];
        cfg.tau = 2.5e-4;
        cfg.strict = true;
        let text = emit_config(&cfg);
        let back = parse_config(&text).unwrap();
        assert_eq!(cfg, back);
    }

    #[test]
    fn emitted_text_carries_derived_thresholds() {
        let text = emit_config(&default_config());
        assert!(text.contains("# derived.rho_plus = "));
        let expect = fmt_f64((0.2f64 + 0.3 - 1.0).exp());
        assert!(text.contains(&expect), "{text}");
    }

    #[test]
    fn missing_key_is_named() {
        let text = emit_config(&default_config());
        let broken: String = text
            .lines()
            .filter(|l| !l.starts_with("model.alpha"))
            .map(|l| format!("{l}\n"))
            .collect();
        let err = parse_config(&broken).unwrap_err().to_string();
        assert!(err.contains("missing key: model.alpha"), "{err}");
    }

    #[test]
    fn unknown_key_rejected() {
        let mut text = emit_config(&default_config());
        text.push_str("model.gamma = 3\n");
        let err = parse_config(&text).unwrap_err().to_string();
        assert!(err.contains("unknown key: model.gamma"), "{err}");
    }

    #[test]
    fn h1_violation_rejected() {
        let mut cfg = default_config();
        cfg.beta = 0.8;
        cfg.theta = 0.3;
        let err = parse_config(&emit_config(&cfg)).unwrap_err().to_string();
        assert!(err.contains("beta + theta"), "{err}");
    }

    #[test]
    fn out_of_band_trace_rejected() {
        let mut cfg = default_config();
        cfg.rho0_params = vec![0.9]; // rho_plus ~ 0.607
        let err = cfg.validate().unwrap_err().to_string();
        assert!(err.contains("admissible band"), "{err}");
    }

    #[test]
    fn default_profile_trace_is_admissible() {
        let cfg = default_config();
        let d = cfg.validate().unwrap();
        assert!(d.rho_minus < 0.5 && 0.5 < d.rho_plus);
        assert!(d.penalty_floored); // b = ln 0.5 < ln rho_plus
    }
}
