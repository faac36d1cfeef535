//! Space–time error norms and convergence tables.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{check_len, Error, Result};
use crate::sparse::CsrMatrix;
use crate::time::TimeSeriesSolution;

/// `√(Σ_{i=1..N} τ (uⁱᵀ G_u uⁱ + pⁱᵀ G_p pⁱ))`; the initial snapshot is excluded.
pub fn dn_norm(u: &[Vec<f64>], p: &[Vec<f64>], g_u: &CsrMatrix, g_p: &CsrMatrix, tau: f64) -> Result<f64> {
    check_len("dn norm: series lengths", u.len(), p.len())?;
    let mut s = 0.0;
    for (ui, pi) in u.iter().zip(p).skip(1) {
        check_len("dn norm: displacement", g_u.nrows(), ui.len())?;
        check_len("dn norm: pressure", g_p.nrows(), pi.len())?;
        s += tau * (g_u.quadratic_form(ui) + g_p.quadratic_form(pi));
    }
    Ok(s.max(0.0).sqrt())
}

/// `‖approx − reference‖_{D,N} / ‖reference‖_{D,N}`, both on fine DOFs.
pub fn relative_error(
    approx: &TimeSeriesSolution,
    reference: &TimeSeriesSolution,
    g_u: &CsrMatrix,
    g_p: &CsrMatrix,
) -> Result<f64> {
    check_len("relative error: steps", reference.u.len(), approx.u.len())?;
    let diff = |a: &[Vec<f64>], b: &[Vec<f64>]| -> Vec<Vec<f64>> {
        a.iter()
            .zip(b)
            .map(|(x, y)| x.iter().zip(y).map(|(p, q)| p - q).collect())
            .collect()
    };
    let tau = reference.grid.tau;
    let den = dn_norm(&reference.u, &reference.p, g_u, g_p, tau)?;
    if den == 0.0 {
        return Err(Error::Numerical("reference solution has zero D,N norm".into()));
    }
    let du = diff(&approx.u, &reference.u);
    let dp = diff(&approx.p, &reference.p);
    Ok(dn_norm(&du, &dp, g_u, g_p, tau)? / den)
}

/// Least-squares slope of `log(error)` against `log(H)`.
pub fn fit_slope(h: &[f64], err: &[f64]) -> Result<f64> {
    check_len("fit slope", h.len(), err.len())?;
    if h.len() < 2 {
        return Err(Error::InvalidArgument("slope needs at least two points".into()));
    }
    if h.iter().chain(err).any(|&v| !(v > 0.0)) {
        return Err(Error::InvalidArgument("slope needs positive H and errors".into()));
    }
    let x: Vec<f64> = h.iter().map(|v| v.ln()).collect();
    let y: Vec<f64> = err.iter().map(|v| v.ln()).collect();
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxy: f64 = x.iter().zip(&y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = x.iter().map(|a| (a - mx) * (a - mx)).sum();
    if sxx == 0.0 {
        return Err(Error::InvalidArgument("slope needs distinct H values".into()));
    }
    Ok(sxy / sxx)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LevelRecord {
    pub h: f64,
    pub coarse_cells: usize,
    pub rel_error: f64,
    pub n_coarse_dofs: usize,
    pub wall_time_s: f64,
}

/// Per-level errors, sorted by `H` descending.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ErrorReport {
    pub records: Vec<LevelRecord>,
}

impl ErrorReport {
    pub fn push(&mut self, r: LevelRecord) {
        self.records.push(r);
        self.records.sort_by(|a, b| b.h.total_cmp(&a.h));
    }

    pub fn slope(&self) -> Result<f64> {
        let h: Vec<f64> = self.records.iter().map(|r| r.h).collect();
        let e: Vec<f64> = self.records.iter().map(|r| r.rel_error).collect();
        fit_slope(&h, &e)
    }

    /// Slope fitted over the first `k` records (empty below two records).
    pub fn slope_so_far(&self, k: usize) -> Option<f64> {
        let h: Vec<f64> = self.records[..k].iter().map(|r| r.h).collect();
        let e: Vec<f64> = self.records[..k].iter().map(|r| r.rel_error).collect();
        fit_slope(&h, &e).ok()
    }

    /// Columns `H,rel_error,n_coarse_dofs[,wall_time_s],slope_so_far`.
    /// Wall times are excluded unless requested so that the table is a pure
    /// function of the inputs.
    pub fn write_csv<W: Write>(&self, mut w: W, with_timings: bool) -> std::io::Result<()> {
        if with_timings {
            writeln!(w, "H,rel_error,n_coarse_dofs,wall_time_s,slope_so_far")?;
        } else {
            writeln!(w, "H,rel_error,n_coarse_dofs,slope_so_far")?;
        }
        for (i, r) in self.records.iter().enumerate() {
            let slope = self.slope_so_far(i + 1).map_or(String::new(), |s| format!("{s:.6}"));
            write!(w, "{:.6e},{:.6e},{}", r.h, r.rel_error, r.n_coarse_dofs)?;
            if with_timings {
                write!(w, ",{:.3}", r.wall_time_s)?;
            }
            writeln!(w, ",{slope}")?;
        }
        Ok(())
    }
}
