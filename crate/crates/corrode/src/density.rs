//! Piecewise-constant densities on a moving interval `[0, X]`.
//!
//! A `GridDensity` stores cell averages on `n_cells` uniform cells of
//! `[0, X]` and is implicitly equal to 1 on `(X, infinity)`. All mass
//! bookkeeping (the excess functional, remapping, distances) treats the
//! field as that piecewise-constant function on the half line.

use crate::error::{CorrodeError, Result};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridDensity {
    pub n_cells: usize,
    /// Domain length; the field is 1 beyond it.
    pub x: f64,
    /// Strictly positive cell averages, left to right.
    pub values: Vec<f64>,
}

impl GridDensity {
    pub fn new(n_cells: usize, x: f64, values: Vec<f64>) -> Result<Self> {
        if n_cells == 0 {
            return Err(CorrodeError::Config("n_cells must be positive".into()));
        }
        if !(x > 0.0) || !x.is_finite() {
            return Err(CorrodeError::Config(format!(
                "domain length must be positive and finite (got {x})"
            )));
        }
        if values.len() != n_cells {
            return Err(CorrodeError::Config(format!(
                "expected {n_cells} cell values, got {}",
                values.len()
            )));
        }
        for (i, v) in values.iter().enumerate() {
            if !(*v > 0.0) || !v.is_finite() {
                return Err(CorrodeError::Config(format!(
                    "cell {i} value must be strictly positive and finite (got {v})"
                )));
            }
        }
        Ok(GridDensity { n_cells, x, values })
    }

    pub fn constant(n_cells: usize, x: f64, value: f64) -> Result<Self> {
        Self::new(n_cells, x, vec![value; n_cells])
    }

    /// Cell-midpoint sampling of the affine profile running from `v0` at 0 to
    /// `vx` at `x`, clamped away from zero.
    pub fn affine(n_cells: usize, x: f64, v0: f64, vx: f64) -> Result<Self> {
        let values = (0..n_cells)
            .map(|i| {
                let s = (i as f64 + 0.5) / n_cells as f64;
                (v0 + (vx - v0) * s).max(1e-12)
            })
            .collect();
        Self::new(n_cells, x, values)
    }

    pub fn h(&self) -> f64 {
        self.x / self.n_cells as f64
    }

    pub fn midpoint(&self, i: usize) -> f64 {
        (i as f64 + 0.5) * self.h()
    }

    pub fn edge(&self, i: usize) -> f64 {
        i as f64 * self.h()
    }

    /// Trace at the fixed boundary (first cell value).
    pub fn rho_at_0(&self) -> f64 {
        self.values[0]
    }

    /// Trace just inside the moving interface (last cell value).
    pub fn rho_at_x_minus(&self) -> f64 {
        self.values[self.n_cells - 1]
    }

    /// Pointwise value of the extended field (1 beyond `x`).
    pub fn value_at(&self, pos: f64) -> f64 {
        if pos >= self.x {
            return 1.0;
        }
        let i = ((pos / self.h()) as usize).min(self.n_cells - 1);
        self.values[i]
    }

    /// Mass excess `-(integral of (1 - rho))` over the half line; the tail
    /// beyond `x` contributes exactly zero.
    pub fn mass_excess(&self) -> f64 {
        let h = self.h();
        self.values.iter().map(|v| h * (v - 1.0)).sum()
    }

    /// Integral of `rho` over `[0, x]`.
    pub fn mass_on_domain(&self) -> f64 {
        let h = self.h();
        self.values.iter().map(|v| h * v).sum()
    }

    /// Conservative projection of the extended field onto `n_cells` uniform
    /// cells of `[0, x_new]`; each new cell receives the exact average of the
    /// old piecewise-constant field over it, so the mass excess is preserved
    /// whenever `x_new >= x`.
    pub fn remap(&self, x_new: f64) -> Result<Self> {
        if !(x_new > 0.0) || !x_new.is_finite() {
            return Err(CorrodeError::Config(format!(
                "remap target length must be positive (got {x_new})"
            )));
        }
        if x_new == self.x {
            return Ok(self.clone());
        }
        let n = self.n_cells;
        let h_new = x_new / n as f64;
        let h_old = self.h();
        let mut out = Vec::with_capacity(n);
        for i in 0..n {
            let lo = i as f64 * h_new;
            let hi = lo + h_new;
            // Integrate the old field over [lo, hi].
            let mut acc = 0.0;
            // Portion overlapping old cells.
            let lo_in = lo.min(self.x);
            let hi_in = hi.min(self.x);
            if hi_in > lo_in {
                let j0 = ((lo_in / h_old) as usize).min(n - 1);
                let j1 = (((hi_in / h_old).ceil() as usize).max(j0 + 1)).min(n);
                for j in j0..j1 {
                    let a = (j as f64 * h_old).max(lo_in);
                    let b = ((j + 1) as f64 * h_old).min(hi_in);
                    if b > a {
                        acc += (b - a) * self.values[j];
                    }
                }
            }
            // Portion past the old interface carries the tail value 1.
            if hi > self.x {
                acc += hi - self.x.max(lo);
            }
            out.push((acc / h_new).max(1e-300));
        }
        GridDensity::new(n, x_new, out)
    }

    /// Split every cell in two (test refinement helper).
    pub fn refine_split(&self) -> Self {
        let mut values = Vec::with_capacity(2 * self.n_cells);
        for v in &self.values {
            values.push(*v);
            values.push(*v);
        }
        GridDensity {
            n_cells: 2 * self.n_cells,
            x: self.x,
            values,
        }
    }

    /// Exact L1 distance between the two extended fields on the half line
    /// (both are 1 past `max(x, other.x)`).
    pub fn l1_distance(&self, other: &GridDensity) -> f64 {
        let top = self.x.max(other.x);
        let mut edges: Vec<f64> = Vec::with_capacity(self.n_cells + other.n_cells + 2);
        for i in 0..=self.n_cells {
            edges.push(self.edge(i));
        }
        for i in 0..=other.n_cells {
            edges.push(other.edge(i));
        }
        edges.push(top);
        edges.retain(|e| *e <= top + 1e-300);
        edges.sort_by(|a, b| a.partial_cmp(b).unwrap());
        edges.dedup_by(|a, b| (*a - *b).abs() <= f64::EPSILON * top);
        let mut acc = 0.0;
        for w in edges.windows(2) {
            let (a, b) = (w[0], w[1]);
            if b <= a {
                continue;
            }
            let mid = 0.5 * (a + b);
            acc += (b - a) * (self.value_at(mid) - other.value_at(mid)).abs();
        }
        acc
    }
}

/// A point of the discrete trajectory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct State {
    pub t: f64,
    pub density: GridDensity,
    /// Cached mass excess of `density`.
    pub mass_excess: f64,
}

impl State {
    pub fn new(t: f64, density: GridDensity) -> Self {
        let mass_excess = density.mass_excess();
        State {
            t,
            density,
            mass_excess,
        }
    }

    pub fn x(&self) -> f64 {
        self.density.x
    }

    /// The cached excess must agree with quadrature to 1e-12 relative.
    pub fn check_mass_consistency(&self) -> bool {
        let q = self.density.mass_excess();
        (self.mass_excess - q).abs() <= 1e-12 * (1.0 + q.abs())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mass_excess_of_unit_density_is_zero() {
        let d = GridDensity::constant(16, 3.0, 1.0).unwrap();
        assert_eq!(d.mass_excess(), 0.0);
    }

    #[test]
    fn mass_excess_of_constant_two() {
        let d = GridDensity::constant(10, 1.0, 2.0).unwrap();
        assert!((d.mass_excess() - 1.0).abs() < 1e-14);
    }

    #[test]
    fn mass_excess_of_table() {
        let d = GridDensity::new(4, 2.0, vec![0.5, 0.8, 1.2, 1.0]).unwrap();
        assert!((d.mass_excess() + 0.25).abs() < 1e-14);
    }

    #[test]
    fn mass_excess_invariant_under_cell_split() {
        let d = GridDensity::new(5, 1.7, vec![0.3, 0.9, 1.4, 0.7, 1.0]).unwrap();
        let r = d.refine_split();
        assert!((d.mass_excess() - r.mass_excess()).abs() <= 1e-13);
    }

    #[test]
    fn remap_preserves_mass_excess_when_growing() {
        let d = GridDensity::new(6, 1.0, vec![0.4, 0.6, 0.9, 1.1, 0.8, 0.95]).unwrap();
        let r = d.remap(1.37).unwrap();
        assert!((d.mass_excess() - r.mass_excess()).abs() <= 1e-13);
        assert_eq!(r.n_cells, 6);
        // Appended region averages to 1 where a new cell lies wholly past x.
        let far = r.remap(3.0).unwrap();
        assert!((far.values[5] - 1.0).abs() < 1e-13);
    }

    #[test]
    fn traces_are_first_and_last_cells() {
        let d = GridDensity::new(3, 1.0, vec![0.4, 0.6, 0.9]).unwrap();
        assert_eq!(d.rho_at_0(), 0.4);
        assert_eq!(d.rho_at_x_minus(), 0.9);
        assert_eq!(d.value_at(2.0), 1.0);
    }

    #[test]
    fn l1_distance_of_shifted_constants() {
        let a = GridDensity::constant(4, 1.0, 0.5).unwrap();
        let b = GridDensity::constant(4, 2.0, 0.5).unwrap();
        // They differ by |1 - 0.5| on (1, 2].
        assert!((a.l1_distance(&b) - 0.5).abs() < 1e-12);
        assert_eq!(a.l1_distance(&a), 0.0);
    }

    #[test]
    fn rejects_nonpositive_cells() {
        assert!(GridDensity::new(2, 1.0, vec![0.5, 0.0]).is_err());
        assert!(GridDensity::new(2, 1.0, vec![0.5, -1.0]).is_err());
        assert!(GridDensity::new(2, 0.0, vec![0.5, 0.5]).is_err());
    }

    #[test]
    fn state_mass_consistency() {
        let s = State::new(0.0, GridDensity::constant(8, 1.0, 0.5).unwrap());
        assert!(s.check_mass_consistency());
    }
}
