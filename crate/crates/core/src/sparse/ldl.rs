//! Sparse LDLᵀ factorization with a static symmetric ordering.
//!
//! The numeric phase is the up-looking algorithm driven by the elimination
//! tree: row `k` of `L` is obtained by a sparse triangular solve whose pattern
//! is the union of etree paths from the nonzeros of column `k` of the upper
//! triangle. No dynamic pivoting is performed, so the ordering must keep
//! pivots away from zero; see [`super::ordering::constrained_last`] for the
//! saddle-point case.

use super::csr::CsrMatrix;
use super::ordering;
use crate::error::{check_len, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FactorKind {
    /// Symmetric positive definite; every pivot must be positive.
    Spd,
    /// Symmetric indefinite (saddle point or quasi-definite); pivots of
    /// either sign are accepted but must not vanish.
    SymmetricIndefinite,
}

const NONE: usize = usize::MAX;

/// Reusable factorization `P A Pᵀ = L D Lᵀ`.
#[derive(Debug, Clone)]
pub struct Factorization {
    n: usize,
    kind: FactorKind,
    /// `perm[k]` is the original row eliminated at step `k`.
    perm: Vec<usize>,
    lp: Vec<usize>,
    li: Vec<usize>,
    lx: Vec<f64>,
    dinv: Vec<f64>,
    d: Vec<f64>,
}

impl Factorization {
    /// Factors a symmetric matrix with the default ordering for `kind`.
    pub fn new(a: &CsrMatrix, kind: FactorKind) -> Result<Self> {
        let perm = match kind {
            FactorKind::Spd => ordering::nested_dissection(a, &vec![true; a.nrows()]),
            FactorKind::SymmetricIndefinite => ordering::constrained_last(a),
        };
        Self::with_ordering(a, kind, perm)
    }

    /// Factors with an explicit elimination order.
    pub fn with_ordering(a: &CsrMatrix, kind: FactorKind, perm: Vec<usize>) -> Result<Self> {
        check_len("factor: square matrix", a.nrows(), a.ncols())?;
        let n = a.nrows();
        check_len("factor: permutation", n, perm.len())?;
        let asym = a.asymmetry();
        if asym > 1e-12 {
            return Err(Error::NotSymmetric(asym));
        }
        let mut pinv = vec![NONE; n];
        for (k, &i) in perm.iter().enumerate() {
            if i >= n || pinv[i] != NONE {
                return Err(Error::InvalidArgument("ordering is not a permutation".into()));
            }
            pinv[i] = k;
        }

        // Upper triangle of the permuted matrix, column-compressed.
        let mut ap = vec![0usize; n + 1];
        for i in 0..n {
            let (cols, _) = a.row(i);
            for &j in cols {
                let (pi, pj) = (pinv[i], pinv[j]);
                if pi <= pj {
                    ap[pj + 1] += 1;
                }
            }
        }
        for j in 0..n {
            ap[j + 1] += ap[j];
        }
        let mut next = ap.clone();
        let mut ai = vec![0usize; ap[n]];
        let mut ax = vec![0.0; ap[n]];
        for i in 0..n {
            let (cols, vals) = a.row(i);
            for (&j, &v) in cols.iter().zip(vals) {
                let (pi, pj) = (pinv[i], pinv[j]);
                if pi <= pj {
                    ai[next[pj]] = pi;
                    ax[next[pj]] = v;
                    next[pj] += 1;
                }
            }
        }

        // Elimination tree and column counts.
        let mut etree = vec![NONE; n];
        let mut lnz = vec![0usize; n];
        let mut work = vec![NONE; n];
        for j in 0..n {
            work[j] = j;
            for &row in &ai[ap[j]..ap[j + 1]] {
                let mut i = row;
                while work[i] != j {
                    if etree[i] == NONE {
                        etree[i] = j;
                    }
                    lnz[i] += 1;
                    work[i] = j;
                    i = etree[i];
                }
            }
        }

        let mut lp = vec![0usize; n + 1];
        for i in 0..n {
            lp[i + 1] = lp[i] + lnz[i];
        }
        let total = lp[n];
        let mut li = vec![0usize; total];
        let mut lx = vec![0.0; total];
        let mut d = vec![0.0; n];
        let mut dinv = vec![0.0; n];
        let mut y_vals = vec![0.0; n];
        let mut y_used = vec![false; n];
        let mut y_idx = vec![0usize; n];
        let mut elim = vec![0usize; n];
        let mut next_space: Vec<usize> = lp[..n].to_vec();

        let scale = a.max_abs().max(f64::MIN_POSITIVE);
        let tiny = 1e-14 * scale;

        for k in 0..n {
            let mut nnz_y = 0;
            for p in ap[k]..ap[k + 1] {
                let b = ai[p];
                if b == k {
                    d[k] = ax[p];
                    continue;
                }
                y_vals[b] = ax[p];
                if !y_used[b] {
                    y_used[b] = true;
                    elim[0] = b;
                    let mut ne = 1;
                    let mut nx = etree[b];
                    while nx != NONE && nx < k {
                        if y_used[nx] {
                            break;
                        }
                        y_used[nx] = true;
                        elim[ne] = nx;
                        ne += 1;
                        nx = etree[nx];
                    }
                    while ne > 0 {
                        ne -= 1;
                        y_idx[nnz_y] = elim[ne];
                        nnz_y += 1;
                    }
                }
            }
            for idx in (0..nnz_y).rev() {
                let c = y_idx[idx];
                let yc = y_vals[c];
                let end = next_space[c];
                for q in lp[c]..end {
                    y_vals[li[q]] -= lx[q] * yc;
                }
                let l = yc * dinv[c];
                li[end] = k;
                lx[end] = l;
                d[k] -= yc * l;
                next_space[c] += 1;
                y_vals[c] = 0.0;
                y_used[c] = false;
            }
            match kind {
                FactorKind::Spd if d[k] <= tiny => return Err(Error::NotPositiveDefinite { index: k, pivot: d[k] }),
                FactorKind::SymmetricIndefinite if d[k].abs() <= tiny => return Err(Error::Singular { index: k }),
                _ => {}
            }
            dinv[k] = 1.0 / d[k];
        }

        Ok(Self {
            n,
            kind,
            perm,
            lp,
            li,
            lx,
            dinv,
            d,
        })
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn kind(&self) -> FactorKind {
        self.kind
    }

    /// Number of stored off-diagonal entries of `L`.
    pub fn nnz_l(&self) -> usize {
        self.lx.len()
    }

    /// Counts of (positive, negative) pivots, i.e. the inertia.
    pub fn inertia(&self) -> (usize, usize) {
        let pos = self.d.iter().filter(|&&v| v > 0.0).count();
        (pos, self.n - pos)
    }

    pub fn solve(&self, rhs: &[f64]) -> Result<Vec<f64>> {
        let mut x = rhs.to_vec();
        self.solve_in_place(&mut x)?;
        Ok(x)
    }

    pub fn solve_in_place(&self, x: &mut [f64]) -> Result<()> {
        check_len("solve: right-hand side", self.n, x.len())?;
        let mut w: Vec<f64> = self.perm.iter().map(|&i| x[i]).collect();
        for j in 0..self.n {
            let wj = w[j];
            if wj != 0.0 {
                for q in self.lp[j]..self.lp[j + 1] {
                    w[self.li[q]] -= self.lx[q] * wj;
                }
            }
        }
        for (wj, di) in w.iter_mut().zip(&self.dinv) {
            *wj *= di;
        }
        for j in (0..self.n).rev() {
            let mut s = w[j];
            for q in self.lp[j]..self.lp[j + 1] {
                s -= self.lx[q] * w[self.li[q]];
            }
            w[j] = s;
        }
        for (k, &i) in self.perm.iter().enumerate() {
            x[i] = w[k];
        }
        Ok(())
    }
}

/// Relative residual `‖A x − b‖ / ‖b‖` (absolute when `b = 0`).
pub fn relative_residual(a: &CsrMatrix, x: &[f64], b: &[f64]) -> f64 {
    let ax = a.matvec(x);
    let r: f64 = ax.iter().zip(b).map(|(p, q)| (p - q) * (p - q)).sum::<f64>().sqrt();
    let nb = b.iter().map(|v| v * v).sum::<f64>().sqrt();
    if nb > 0.0 {
        r / nb
    } else {
        r
    }
}
