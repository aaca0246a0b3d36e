//! Exact 1D optimal transport between two grid densities whose masses are
//! balanced by an atom at the origin.
//!
//! For densities `rho` (source) and `rho~` (target), both extended by 1 past
//! their interfaces, the coupled measures are
//!
//! ```text
//!   mu      = rho  L + (M(rho~) - M(rho))+ delta_0
//!   mu~     = rho~ L + (M(rho)  - M(rho~))+ delta_0
//! ```
//!
//! restricted to `[0, Lambda]`, `Lambda = max(X, X~)`; past `Lambda` both
//! equal Lebesgue measure and the coupling is the identity at zero cost. The
//! optimal plan for quadratic cost is the monotone (quantile) coupling, which
//! this module evaluates exactly: both quantile functions are piecewise
//! linear in the mass variable, so the squared cost integrand is piecewise
//! quadratic and a per-segment Simpson rule integrates it without error.

use crate::density::GridDensity;
use crate::error::{CorrodeError, Result};
use serde::{Deserialize, Serialize};

/// Sign of the mass difference `M = M(source) - M(target)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum CaseSign {
    /// Source carries more mass; its lowest slice maps onto the target atom.
    Plus,
    /// Source carries less mass; its atom spreads onto the target's lowest slice.
    Minus,
    Zero,
}

/// One piece of the piecewise-linear monotone map: source positions
/// `[x0, x1]` (carrying `density`) go linearly to target positions `[t0, t1]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MapSegment {
    pub x0: f64,
    pub x1: f64,
    pub t0: f64,
    pub t1: f64,
    pub density: f64,
}

impl MapSegment {
    fn map_at(&self, x: f64) -> f64 {
        if self.x1 <= self.x0 {
            return 0.5 * (self.t0 + self.t1);
        }
        let s = (x - self.x0) / (self.x1 - self.x0);
        self.t0 + s * (self.t1 - self.t0)
    }

    /// Displacement `x - T(x)`, linear on the segment.
    fn disp_at(&self, x: f64) -> f64 {
        x - self.map_at(x)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransportResult {
    /// Exact squared Wasserstein distance of the balanced pair.
    pub w2_sq: f64,
    pub case_sign: CaseSign,
    /// Offset of the atom coupling: `ell_plus` (Plus), `ell_minus` (Minus), 0 (Zero).
    pub ell: f64,
    /// Mass placed on / pulled from the Dirac at 0 (`|M|`, 0 in case Zero).
    pub atom_mass: f64,
    /// Monotone map sampled at the source cell midpoints.
    pub map_samples: Vec<f64>,
    /// Kantorovich potential at the source cell midpoints, normalized so that
    /// `Psi(X_source) = 0`; its derivative is `x - T(x)`.
    pub potential_samples: Vec<f64>,
    /// Potential at the source cell edges (length `n_cells + 1`).
    pub psi_edges: Vec<f64>,
    /// Exact cell averages of the potential over the source cells.
    pub psi_cell_means: Vec<f64>,
    /// Potential value at the origin.
    pub psi_at_zero: f64,
    /// Cost paid by the source atom against the target's lowest slice
    /// (Minus case only): `int_0^ell y^2 rho_target(y) dy`.
    pub atom_target_cost: f64,
    /// Exact piecewise-linear map on `(0, Lambda]`.
    pub segments: Vec<MapSegment>,
}

/// Relative tolerance under which the mass difference is treated as zero.
const ZERO_MASS_REL_TOL: f64 = 1e-12;

#[derive(Debug, Clone, Copy)]
enum Piece {
    Atom { mass: f64 },
    Slab { x_lo: f64, dens: f64, mass: f64 },
}

impl Piece {
    fn mass(&self) -> f64 {
        match self {
            Piece::Atom { mass } => *mass,
            Piece::Slab { mass, .. } => *mass,
        }
    }

    /// Position after consuming `c` of the piece's mass.
    fn pos(&self, c: f64) -> f64 {
        match self {
            Piece::Atom { .. } => 0.0,
            Piece::Slab { x_lo, dens, .. } => x_lo + c / dens,
        }
    }
}

fn build_pieces(d: &GridDensity, atom: f64, lambda: f64) -> Vec<Piece> {
    let mut pieces = Vec::with_capacity(d.n_cells + 2);
    if atom > 0.0 {
        pieces.push(Piece::Atom { mass: atom });
    }
    let h = d.h();
    for (i, v) in d.values.iter().enumerate() {
        pieces.push(Piece::Slab {
            x_lo: i as f64 * h,
            dens: *v,
            mass: v * h,
        });
    }
    if lambda > d.x {
        pieces.push(Piece::Slab {
            x_lo: d.x,
            dens: 1.0,
            mass: lambda - d.x,
        });
    }
    pieces
}

/// Position at cumulative mass `s` in a piece list (the generalized inverse
/// of the cumulative distribution).
fn quantile(pieces: &[Piece], s: f64) -> f64 {
    let mut acc = 0.0;
    for p in pieces {
        let m = p.mass();
        if s <= acc + m {
            return p.pos((s - acc).max(0.0));
        }
        acc += m;
    }
    match pieces.last() {
        Some(p) => p.pos(p.mass()),
        None => 0.0,
    }
}

/// Exact squared Wasserstein distance plus the transport decomposition
/// between `source` and `target`.
pub fn wasserstein_sq(source: &GridDensity, target: &GridDensity) -> TransportResult {
    let lambda = source.x.max(target.x);
    let m_src = source.mass_excess();
    let m_tgt = target.mass_excess();
    let m = m_src - m_tgt;
    let mass_scale = lambda + m_src.abs().max(m_tgt.abs());
    let (case_sign, atom_src, atom_tgt) = if m.abs() <= ZERO_MASS_REL_TOL * mass_scale {
        (CaseSign::Zero, 0.0, 0.0)
    } else if m > 0.0 {
        (CaseSign::Plus, 0.0, m)
    } else {
        (CaseSign::Minus, -m, 0.0)
    };

    let src_pieces = build_pieces(source, atom_src, lambda);
    let tgt_pieces = build_pieces(target, atom_tgt, lambda);

    let mut w2 = 0.0;
    let mut atom_target_cost = 0.0;
    let mut segments: Vec<MapSegment> = Vec::with_capacity(src_pieces.len() + tgt_pieces.len());

    let (mut si, mut ti) = (0usize, 0usize);
    let (mut sc, mut tc) = (0.0f64, 0.0f64); // mass consumed within current pieces
    while si < src_pieces.len() && ti < tgt_pieces.len() {
        let sp = &src_pieces[si];
        let tp = &tgt_pieces[ti];
        let avail_s = sp.mass() - sc;
        let avail_t = tp.mass() - tc;
        let mstep = avail_s.min(avail_t);
        if mstep > 0.0 {
            let xa = sp.pos(sc);
            let xb = sp.pos(sc + mstep);
            let ta = tp.pos(tc);
            let tb = tp.pos(tc + mstep);
            // Both quantiles are linear in mass on this chunk, so the squared
            // displacement is quadratic and Simpson is exact.
            let d0 = xa - ta;
            let d1 = xb - tb;
            let dm = 0.5 * (xa + xb) - 0.5 * (ta + tb);
            let chunk_cost = mstep / 6.0 * (d0 * d0 + 4.0 * dm * dm + d1 * d1);
            w2 += chunk_cost;
            match (sp, tp) {
                (Piece::Slab { dens, .. }, _) => {
                    if xb > xa {
                        segments.push(MapSegment {
                            x0: xa,
                            x1: xb,
                            t0: ta,
                            t1: tb,
                            density: *dens,
                        });
                    }
                }
                (Piece::Atom { .. }, Piece::Slab { .. }) => {
                    atom_target_cost += chunk_cost;
                }
                (Piece::Atom { .. }, Piece::Atom { .. }) => {}
            }
        }
        // Advance whichever piece ran out (both, on ties).
        if avail_s <= avail_t {
            si += 1;
            sc = 0.0;
            tc += mstep;
        }
        if avail_t <= avail_s {
            ti += 1;
            tc = 0.0;
            if avail_s > avail_t {
                sc += mstep;
            }
        }
    }

    let ell = match case_sign {
        CaseSign::Plus => quantile(&src_pieces, atom_tgt),
        CaseSign::Minus => quantile(&tgt_pieces, atom_src),
        CaseSign::Zero => 0.0,
    };

    // Cumulative displacement integral I(x) = int_0^x (y - T(y)) dy at the
    // segment boundaries; the integrand is piecewise linear so trapezoids
    // are exact. All evaluation points below are visited in increasing
    // order, so a single forward cursor over the segments suffices.
    let mut seg_prefix = Vec::with_capacity(segments.len() + 1);
    seg_prefix.push(0.0f64);
    for s in &segments {
        let inc = 0.5 * (s.disp_at(s.x0) + s.disp_at(s.x1)) * (s.x1 - s.x0);
        seg_prefix.push(seg_prefix.last().unwrap() + inc);
    }
    let mut cursor = 0usize;
    let mut disp_integral = |x: f64| -> f64 {
        if segments.is_empty() || x <= segments[0].x0 {
            return 0.0;
        }
        while cursor + 1 < segments.len() && segments[cursor].x1 < x {
            cursor += 1;
        }
        while cursor > 0 && segments[cursor].x0 > x {
            cursor -= 1;
        }
        let s = &segments[cursor];
        let xc = x.clamp(s.x0, s.x1);
        seg_prefix[cursor] + 0.5 * (s.disp_at(s.x0) + s.disp_at(xc)) * (xc - s.x0)
    };

    let n = source.n_cells;
    let h = source.h();

    // Sweep the cell edges, midpoints and Simpson nodes left to right:
    // I at edges and midpoints, the map at midpoints, and the exact cell
    // averages of I (piecewise quadratic, Simpson per sub-piece).
    let mut i_edges = Vec::with_capacity(n + 1);
    let mut i_mids = Vec::with_capacity(n);
    let mut i_cell_int = Vec::with_capacity(n); // integral of I over each cell
    let mut map_samples = Vec::with_capacity(n);
    let mut seg_idx = 0usize;
    i_edges.push(0.0);
    for i in 0..n {
        let a = i as f64 * h;
        let b = (i + 1) as f64 * h;
        let xm = 0.5 * (a + b);
        // Advance to the segment containing the midpoint for the map sample.
        while seg_idx + 1 < segments.len() && segments[seg_idx].x1 < xm {
            seg_idx += 1;
        }
        if segments.is_empty() {
            map_samples.push(xm);
        } else {
            map_samples.push(segments[seg_idx].map_at(xm.clamp(
                segments[seg_idx].x0.min(xm),
                segments[seg_idx].x1,
            )));
        }
        i_mids.push(disp_integral(xm));
        // Cell integral of I: split at segment boundaries inside the cell.
        let mut acc = 0.0;
        let mut lo = a;
        let mut k = seg_idx;
        // seg_idx points at the midpoint's segment; step back while the
        // segment start is right of the cell start.
        while k > 0 && segments[k].x0 > a {
            k -= 1;
        }
        while lo < b {
            let hi = if k < segments.len() && segments[k].x1 < b {
                segments[k].x1.max(lo)
            } else {
                b
            };
            if hi > lo {
                let im = disp_integral(0.5 * (lo + hi));
                let i_lo = disp_integral(lo);
                let i_hi = disp_integral(hi);
                acc += (hi - lo) / 6.0 * (i_lo + 4.0 * im + i_hi);
            }
            if hi >= b {
                break;
            }
            lo = hi;
            k += 1;
        }
        i_cell_int.push(acc);
        i_edges.push(disp_integral(b));
    }
    let i_at_x_src = *i_edges.last().unwrap();
    let psi_at_zero = -i_at_x_src;
    let psi_edges: Vec<f64> = i_edges.iter().map(|v| v - i_at_x_src).collect();
    let potential_samples: Vec<f64> = i_mids.iter().map(|v| v - i_at_x_src).collect();
    let psi_cell_means: Vec<f64> = i_cell_int
        .iter()
        .map(|v| v / h - i_at_x_src)
        .collect();

    TransportResult {
        w2_sq: w2,
        case_sign,
        ell,
        atom_mass: atom_src.max(atom_tgt),
        map_samples,
        potential_samples,
        psi_edges,
        psi_cell_means,
        psi_at_zero,
        atom_target_cost,
        segments,
    }
}


impl TransportResult {
    /// Re-evaluate the squared cost from the stored map decomposition: the
    /// displacement quadrature over the density part plus the atom cost.
    /// Agrees with `w2_sq` to roundoff.
    pub fn cost_from_map(&self) -> f64 {
        let mut acc = self.atom_target_cost;
        for s in &self.segments {
            let d0 = s.disp_at(s.x0);
            let d1 = s.disp_at(s.x1);
            let dm = 0.5 * (d0 + d1);
            acc += s.density * (s.x1 - s.x0) / 6.0 * (d0 * d0 + 4.0 * dm * dm + d1 * d1);
        }
        acc
    }
}

/// Maximum cell count per side accepted by [`lp_oracle_w2`].
pub const LP_ORACLE_MAX_CELLS: usize = 64;

/// Number of point-mass slices each side is split into.
const LP_ORACLE_SLICES: usize = 1 << 16;

/// Independent small-instance oracle for the squared distance: splits every
/// cell (and the Lebesgue tail up to `Lambda`) into point masses at slice
/// midpoints, adds the balancing atoms at 0, and couples the two sorted
/// atom lists greedily (north-west corner), which is the optimal monotone
/// coupling in 1D for quadratic cost. Discretization error is
/// `O(slice_width^2)`.
pub fn lp_oracle_w2(source: &GridDensity, target: &GridDensity) -> Result<f64> {
    if source.n_cells > LP_ORACLE_MAX_CELLS || target.n_cells > LP_ORACLE_MAX_CELLS {
        return Err(CorrodeError::OracleScope(format!(
            "lp_oracle_w2 accepts at most {LP_ORACLE_MAX_CELLS} cells per side (got {} and {})",
            source.n_cells, target.n_cells
        )));
    }
    let lambda = source.x.max(target.x);
    let m_src = source.mass_excess();
    let m_tgt = target.mass_excess();
    let m = m_src - m_tgt;
    let mass_scale = lambda + m_src.abs().max(m_tgt.abs());
    let (atom_src, atom_tgt) = if m.abs() <= ZERO_MASS_REL_TOL * mass_scale {
        (0.0, 0.0)
    } else {
        ((-m).max(0.0), m.max(0.0))
    };
    let pitch = lambda / LP_ORACLE_SLICES as f64;

    let atomize = |d: &GridDensity, atom: f64| -> Vec<(f64, f64)> {
        let mut pts = Vec::new();
        if atom > 0.0 {
            pts.push((0.0, atom));
        }
        let h = d.h();
        let sub = (h / pitch).ceil().max(1.0) as usize;
        let w = h / sub as f64;
        for (i, v) in d.values.iter().enumerate() {
            let base = i as f64 * h;
            for k in 0..sub {
                pts.push((base + (k as f64 + 0.5) * w, v * w));
            }
        }
        if lambda > d.x {
            let len = lambda - d.x;
            let sub = (len / pitch).ceil().max(1.0) as usize;
            let w = len / sub as f64;
            for k in 0..sub {
                pts.push((d.x + (k as f64 + 0.5) * w, w));
            }
        }
        pts
    };

    let src = atomize(source, atom_src);
    let tgt = atomize(target, atom_tgt);
    Ok(monotone_point_cost(&src, &tgt))
}

/// Greedy (north-west corner) monotone coupling of two position-sorted lists
/// of point masses; optimal in 1D for the quadratic cost. Returns the squared
/// cost of coupling `min(total_src, total_tgt)` of mass.
pub fn monotone_point_cost(src: &[(f64, f64)], tgt: &[(f64, f64)]) -> f64 {
    if src.is_empty() || tgt.is_empty() {
        return 0.0;
    }
    let mut cost = 0.0;
    let (mut i, mut j) = (0usize, 0usize);
    let (mut ri, mut rj) = (src[0].1, tgt[0].1);
    loop {
        let m = ri.min(rj);
        if m > 0.0 {
            let d = src[i].0 - tgt[j].0;
            cost += m * d * d;
        }
        ri -= m;
        rj -= m;
        if ri <= 0.0 {
            i += 1;
            if i >= src.len() {
                break;
            }
            ri = src[i].1;
        }
        if rj <= 0.0 {
            j += 1;
            if j >= tgt.len() {
                break;
            }
            rj = tgt[j].1;
        }
    }
    cost
}
