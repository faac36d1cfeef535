//! Localized correctors, multiscale bases and the Galerkin coarse system.
//!
//! The corrector `C_f` is the form-orthogonal projection onto the kernel
//! `{v : I_H v = 0}`. Truncated correctors are computed on patches with zero
//! values on the patch boundary, from saddle-point systems
//!
//! ```text
//! [ A_ω  Cᵀ ] [x]   [r|_ω]
//! [ C    0  ] [μ] = [ 0  ]
//! ```
//!
//! where the rows of `C` are the rows of `I_H` for every free coarse node whose
//! hat support meets the patch, restricted to patch DOFs and scaled to unit
//! max-norm.
//!
//! Two localizations are available. [`Localization::Element`] splits
//! `a(λ_z, ·)` into its coarse element contributions `a_K(λ_z, ·)` and solves
//! each on the patch grown around `K`; [`Localization::Node`] solves once per
//! node with the full `a(λ_z, ·)` on the patch grown around `supp λ_z`. Both
//! coincide with the global corrector once the patches cover the domain.

use std::collections::BTreeMap;
use std::io::{BufRead, Write};
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{check_len, Error, Result};
use crate::fem::{AssembledForms, FeSpace, StiffnessCoefficients};
use crate::interpolation::InterpolationOperator;
use crate::mesh::{Patch, PatchCenter, Refinement};
use crate::sparse::{relative_residual, CsrMatrix, FactorKind, Factorization, TripletBuilder};

/// Which bilinear form a basis is orthogonal with respect to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum FormId {
    /// Elasticity form, displacement basis.
    A,
    /// Darcy form, pressure basis.
    B,
}

impl FormId {
    pub fn as_str(self) -> &'static str {
        match self {
            FormId::A => "a",
            FormId::B => "b",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "a" => Ok(FormId::A),
            "b" => Ok(FormId::B),
            _ => Err(Error::Parse(format!("unknown form id '{s}'"))),
        }
    }
}

/// How corrector problems are localized.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Localization {
    /// One problem per coarse element and hat, on the element's patch.
    #[default]
    Element,
    /// One problem per hat, on the patch around its support.
    Node,
}

impl Localization {
    pub fn as_str(self) -> &'static str {
        match self {
            Localization::Element => "element",
            Localization::Node => "node",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "element" => Ok(Localization::Element),
            "node" => Ok(Localization::Node),
            _ => Err(Error::Parse(format!("unknown localization '{s}'"))),
        }
    }
}

/// Provenance stored alongside an exported basis.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BasisMeta {
    pub dim: usize,
    pub fine_cells: usize,
    pub coarse_cells: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MsBasis {
    /// Fine free DOFs × coarse free DOFs; column `z` holds `(1 − C_f) λ_z`.
    pub basis: CsrMatrix,
    pub form_id: FormId,
    /// Patch layers; `None` means global correctors.
    pub layers: Option<usize>,
    pub localization: Localization,
    /// Largest relative KKT residual among the solves behind each column.
    pub residuals: Vec<f64>,
    pub meta: BasisMeta,
}

/// A factored patch saddle-point system.
pub struct PatchSystem {
    /// Fine free DOFs that are unknowns of the patch problem.
    pub dofs: Vec<usize>,
    pub n_constraints: usize,
    kkt: CsrMatrix,
    factor: Option<Factorization>,
}

impl PatchSystem {
    /// Sets up and factors the corrector system on `patch`, whose
    /// `fine_elements` must be populated.
    pub fn new(
        form_matrix: &CsrMatrix,
        interp: &InterpolationOperator,
        fine: &FeSpace,
        coarse: &FeSpace,
        patch: &Patch,
        fine_v2e: &[Vec<usize>],
    ) -> Result<Self> {
        let fm = fine.mesh();
        let ncomp = fine.components();
        let mut inside = vec![false; fm.n_elements()];
        for &e in &patch.fine_elements {
            inside[e] = true;
        }
        let mut verts: Vec<usize> = patch
            .fine_elements
            .iter()
            .flat_map(|&e| fm.element(e).iter().copied())
            .collect();
        verts.sort_unstable();
        verts.dedup();
        verts.retain(|&v| fine_v2e[v].iter().all(|&e| inside[e]));

        let mut local = vec![usize::MAX; fine.n_free()];
        let mut dofs = Vec::with_capacity(verts.len() * ncomp);
        for &v in &verts {
            for c in 0..ncomp {
                if let Some(d) = fine.dof(v, c) {
                    local[d] = dofs.len();
                    dofs.push(d);
                }
            }
        }
        let n = dofs.len();

        let mut cnodes: Vec<usize> = patch
            .elements
            .iter()
            .flat_map(|&k| coarse.mesh().element(k).iter().copied())
            .filter(|&z| coarse.is_free_vertex(z))
            .collect();
        cnodes.sort_unstable();
        cnodes.dedup();
        let mut rows: Vec<Vec<(usize, f64)>> = Vec::with_capacity(cnodes.len() * ncomp);
        for &z in &cnodes {
            let (cols, vals) = interp.node_matrix.row(z);
            for c in 0..ncomp {
                let row: Vec<(usize, f64)> = cols
                    .iter()
                    .zip(vals)
                    .filter_map(|(&a, &w)| {
                        let d = fine.dof(a, c)?;
                        (local[d] != usize::MAX && w != 0.0).then_some((local[d], w))
                    })
                    .collect();
                let scale = row.iter().fold(0.0f64, |m, &(_, w)| m.max(w.abs()));
                if scale > 0.0 {
                    rows.push(row.into_iter().map(|(j, w)| (j, w / scale)).collect());
                }
            }
        }
        let n_con = rows.len();
        let a = form_matrix.submatrix(&dofs, &dofs);
        let kkt = if n_con == 0 {
            a
        } else {
            let mut ct = TripletBuilder::new(n_con, n);
            for (i, row) in rows.iter().enumerate() {
                for &(j, w) in row {
                    ct.push(i, j, w);
                }
            }
            let c = ct.build();
            let cft = c.transpose();
            CsrMatrix::block(&[vec![Some(&a), Some(&cft)], vec![Some(&c), None]])?
        };
        let factor = if n == 0 {
            None
        } else {
            Some(Factorization::new(&kkt, FactorKind::SymmetricIndefinite)?)
        };
        Ok(Self {
            dofs,
            n_constraints: n_con,
            kkt,
            factor,
        })
    }

    /// Solves for the corrector given the right-hand side restricted to patch
    /// DOFs. Returns patch values and the relative KKT residual.
    pub fn solve(&self, rhs_patch: &[f64]) -> Result<(Vec<f64>, f64)> {
        let n = self.dofs.len();
        check_len("corrector rhs", n, rhs_patch.len())?;
        let Some(f) = &self.factor else {
            return Ok((Vec::new(), 0.0));
        };
        let mut b = rhs_patch.to_vec();
        b.resize(n + self.n_constraints, 0.0);
        let x = f.solve(&b)?;
        let res = relative_residual(&self.kkt, &x, &b);
        Ok((x[..n].to_vec(), res))
    }
}

fn center_node(p: &Patch) -> usize {
    match p.center {
        PatchCenter::Node(z) | PatchCenter::Element(z) => z,
    }
}

/// Corrector of a single fine vector `target` supported inside `patch`: the
/// solution `x` of the patch problem with right-hand side `A·target`.
/// Returns `x` on all fine free DOFs and the KKT residual.
pub fn solve_corrector(
    form_matrix: &CsrMatrix,
    interp: &InterpolationOperator,
    fine: &FeSpace,
    coarse: &FeSpace,
    patch: &Patch,
    target: &[f64],
) -> Result<(Vec<f64>, f64)> {
    check_len("corrector target", fine.n_free(), target.len())?;
    let v2e = fine.mesh().vertex_elements();
    let mut patch = patch.clone();
    if patch.fine_elements.is_empty() {
        let r = Refinement::new(fine.mesh(), coarse.mesh())?;
        patch = match patch.center {
            PatchCenter::Node(z) => r.node_patch(z, patch.layers)?,
            PatchCenter::Element(k) => r.element_patch(k, patch.layers)?,
        };
    }
    let sys = PatchSystem::new(form_matrix, interp, fine, coarse, &patch, &v2e).map_err(|e| Error::Corrector {
        node: center_node(&patch),
        source: Box::new(e),
    })?;
    let at = form_matrix.matvec(target);
    let rhs: Vec<f64> = sys.dofs.iter().map(|&d| at[d]).collect();
    let (x, res) = sys.solve(&rhs)?;
    let mut out = vec![0.0; fine.n_free()];
    for (&d, v) in sys.dofs.iter().zip(x) {
        out[d] = v;
    }
    Ok((out, res))
}

/// Inputs shared by every corrector solve of one basis.
#[derive(Clone, Copy)]
pub struct BasisProblem<'a> {
    pub form_id: FormId,
    /// The assembled form on the fine free DOFs.
    pub matrix: &'a CsrMatrix,
    /// Its element coefficients, for element contributions `a_K`.
    pub coefficients: &'a StiffnessCoefficients,
    pub interp: &'a InterpolationOperator,
    /// Nodal prolongation, whose columns are the coarse hats on the fine mesh.
    pub prolongation: &'a CsrMatrix,
    pub fine: &'a FeSpace,
    pub coarse: &'a FeSpace,
}

/// One patch problem: the patch, and the `(coarse DOF, rhs source)` jobs
/// solved on it. For element patches the rhs uses `a_K` for the centre element.
struct PatchJob {
    patch: Patch,
    /// Centres (nodes or elements) that share this patch.
    centers: Vec<usize>,
}

type Contribution = (usize, Vec<(usize, f64)>, f64);

/// Builds the multiscale basis. Patches covering the same coarse elements
/// share one factorization; solves run in parallel and are merged in a fixed
/// order, so the result does not depend on scheduling.
pub fn build_ms_basis(
    problem: &BasisProblem,
    layers: Option<usize>,
    localization: Localization,
    seed: u64,
) -> Result<MsBasis> {
    let BasisProblem {
        form_id,
        matrix,
        coefficients,
        interp,
        prolongation,
        fine,
        coarse,
    } = *problem;
    check_len("basis: form rows", fine.n_free(), matrix.nrows())?;
    check_len("basis: prolongation rows", fine.n_free(), prolongation.nrows())?;
    check_len("basis: prolongation cols", coarse.n_free(), prolongation.ncols())?;
    check_len("basis: interpolation rows", coarse.n_free(), interp.matrix.nrows())?;
    let r = Refinement::new(fine.mesh(), coarse.mesh())?;
    let cm = coarse.mesh();
    let v2e = fine.mesh().vertex_elements();
    let ncomp = coarse.components();

    let mut groups: BTreeMap<Vec<usize>, PatchJob> = BTreeMap::new();
    let centers: Vec<PatchCenter> = match localization {
        Localization::Node => (0..cm.n_vertices())
            .filter(|&z| coarse.is_free_vertex(z))
            .map(PatchCenter::Node)
            .collect(),
        Localization::Element => (0..cm.n_elements())
            .filter(|&k| cm.element(k).iter().any(|&z| coarse.is_free_vertex(z)))
            .map(PatchCenter::Element)
            .collect(),
    };
    for c in centers {
        let p = match (layers, c) {
            (None, _) => r.global_patch(c),
            (Some(l), PatchCenter::Node(z)) => r.node_patch(z, l)?,
            (Some(l), PatchCenter::Element(k)) => r.element_patch(k, l)?,
        };
        let id = match c {
            PatchCenter::Node(z) | PatchCenter::Element(z) => z,
        };
        groups
            .entry(p.elements.clone())
            .or_insert_with(|| PatchJob {
                patch: p,
                centers: Vec::new(),
            })
            .centers
            .push(id);
    }
    let pt = prolongation.transpose();
    let apt = match localization {
        Localization::Node => Some(matrix.matmul(prolongation)?.transpose()),
        Localization::Element => None,
    };

    let jobs: Vec<PatchJob> = groups.into_values().collect();
    let results: Vec<Result<Vec<Contribution>>> = jobs
        .par_iter()
        .map(|job| {
            let wrap = |node: usize| {
                move |e: Error| Error::Corrector {
                    node,
                    source: Box::new(e),
                }
            };
            let first = job.centers[0];
            let sys = PatchSystem::new(matrix, interp, fine, coarse, &job.patch, &v2e).map_err(wrap(first))?;
            let mut local = vec![usize::MAX; fine.n_free()];
            for (k, &d) in sys.dofs.iter().enumerate() {
                local[d] = k;
            }
            let solve_rhs = |rows: &[usize], vals: &[f64], node: usize| -> Result<(Vec<f64>, f64)> {
                let mut rhs = vec![0.0; sys.dofs.len()];
                for (&d, &v) in rows.iter().zip(vals) {
                    if local[d] != usize::MAX {
                        rhs[local[d]] = v;
                    }
                }
                sys.solve(&rhs).map_err(wrap(node))
            };
            let pack = |j: usize, x: Vec<f64>, res: f64| -> Contribution {
                let entries = sys.dofs.iter().copied().zip(x).filter(|&(_, v)| v != 0.0).collect();
                (j, entries, res)
            };
            match localization {
                Localization::Node => {
                    let apt = apt.as_ref().expect("node rhs");
                    let tasks: Vec<(usize, usize)> = job
                        .centers
                        .iter()
                        .flat_map(|&z| (0..ncomp).filter_map(move |c| Some((z, coarse.dof(z, c)?))))
                        .collect();
                    tasks
                        .par_iter()
                        .map(|&(z, j)| {
                            let (rows, vals) = apt.row(j);
                            let (x, res) = solve_rhs(rows, vals, z)?;
                            Ok(pack(j, x, res))
                        })
                        .collect()
                }
                Localization::Element => job
                    .centers
                    .par_iter()
                    .map(|&k| -> Result<Vec<Contribution>> {
                        let node = cm.element(k)[0];
                        let ak = coefficients.assemble_on(fine, r.children(k)).map_err(wrap(node))?;
                        let akp = ak.matmul(prolongation)?.transpose();
                        let mut out = Vec::new();
                        for &z in cm.element(k) {
                            for c in 0..ncomp {
                                let Some(j) = coarse.dof(z, c) else { continue };
                                let (rows, vals) = akp.row(j);
                                let (x, res) = solve_rhs(rows, vals, z)?;
                                out.push(pack(j, x, res));
                            }
                        }
                        Ok(out)
                    })
                    .collect::<Result<Vec<_>>>()
                    .map(|v| v.into_iter().flatten().collect()),
            }
        })
        .collect();

    // Sum contributions per column in a fixed order.
    let mut correctors: Vec<BTreeMap<usize, f64>> = vec![BTreeMap::new(); coarse.n_free()];
    let mut residuals = vec![0.0f64; coarse.n_free()];
    for group in results {
        for (j, entries, res) in group? {
            residuals[j] = residuals[j].max(res);
            for (d, v) in entries {
                *correctors[j].entry(d).or_insert(0.0) += v;
            }
        }
    }
    let mut t = TripletBuilder::new(fine.n_free(), coarse.n_free());
    for (j, corr) in correctors.into_iter().enumerate() {
        let mut col = corr;
        for v in col.values_mut() {
            *v = -*v;
        }
        let (rows, vals) = pt.row(j);
        for (&d, &v) in rows.iter().zip(vals) {
            *col.entry(d).or_insert(0.0) += v;
        }
        for (d, v) in col {
            if v != 0.0 {
                t.push(d, j, v);
            }
        }
    }
    Ok(MsBasis {
        basis: t.build(),
        form_id,
        layers,
        localization,
        residuals,
        meta: BasisMeta {
            dim: fine.mesh().dim(),
            fine_cells: fine.mesh().cells_per_side(),
            coarse_cells: coarse.mesh().cells_per_side(),
            seed,
        },
    })
}

impl MsBasis {
    pub fn n_coarse(&self) -> usize {
        self.basis.ncols()
    }

    pub fn n_fine(&self) -> usize {
        self.basis.nrows()
    }

    pub fn max_residual(&self) -> f64 {
        self.residuals.iter().fold(0.0, |m, &r| m.max(r))
    }

    /// Writes the basis as CSV triplets preceded by `# key=value` metadata.
    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        let layers = self.layers.map_or("inf".to_string(), |l| l.to_string());
        writeln!(w, "# form={}", self.form_id.as_str())?;
        writeln!(w, "# layers={layers}")?;
        writeln!(w, "# localization={}", self.localization.as_str())?;
        writeln!(w, "# dim={}", self.meta.dim)?;
        writeln!(w, "# fine_cells={}", self.meta.fine_cells)?;
        writeln!(w, "# coarse_cells={}", self.meta.coarse_cells)?;
        writeln!(w, "# seed={}", self.meta.seed)?;
        writeln!(w, "# rows={}", self.basis.nrows())?;
        writeln!(w, "# cols={}", self.basis.ncols())?;
        for (j, r) in self.residuals.iter().enumerate() {
            writeln!(w, "# residual={j}:{r:?}")?;
        }
        self.basis.write_triplets(w)
    }

    pub fn read_csv<R: BufRead>(r: R) -> Result<Self> {
        let perr = |m: String| Error::Parse(format!("basis csv: {m}"));
        let mut meta: BTreeMap<String, String> = BTreeMap::new();
        let mut residual_lines = Vec::new();
        let mut triplets = Vec::new();
        for (ln, line) in r.lines().enumerate() {
            let line = line?;
            let line = line.trim();
            if line.is_empty() || line == "row,col,value" {
                continue;
            }
            if let Some(rest) = line.strip_prefix('#') {
                let (k, v) = rest
                    .trim()
                    .split_once('=')
                    .ok_or_else(|| perr(format!("line {}: malformed metadata", ln + 1)))?;
                if k == "residual" {
                    residual_lines.push(v.to_string());
                } else {
                    meta.insert(k.to_string(), v.to_string());
                }
                continue;
            }
            let mut it = line.split(',');
            let mut next = || {
                it.next()
                    .ok_or_else(|| perr(format!("line {}: expected row,col,value", ln + 1)))
            };
            let i: usize = next()?.parse().map_err(|_| perr(format!("line {}: bad row", ln + 1)))?;
            let j: usize = next()?.parse().map_err(|_| perr(format!("line {}: bad col", ln + 1)))?;
            let v: f64 = next()?
                .parse()
                .map_err(|_| perr(format!("line {}: bad value", ln + 1)))?;
            triplets.push((i, j, v));
        }
        let get = |k: &str| meta.get(k).ok_or_else(|| perr(format!("missing key {k}")));
        let int = |k: &str| -> Result<u64> { get(k)?.parse().map_err(|_| perr(format!("bad value for {k}"))) };
        let form_id = FormId::parse(get("form")?)?;
        let layers = match get("layers")?.as_str() {
            "inf" => None,
            s => Some(s.parse().map_err(|_| perr("bad layers".into()))?),
        };
        let localization = Localization::parse(get("localization")?)?;
        let (rows, cols) = (int("rows")? as usize, int("cols")? as usize);
        let mut t = TripletBuilder::with_capacity(rows, cols, triplets.len());
        for (i, j, v) in triplets {
            if i >= rows || j >= cols {
                return Err(perr(format!("entry ({i},{j}) outside {rows}x{cols}")));
            }
            t.push(i, j, v);
        }
        let mut residuals = vec![0.0; cols];
        for s in residual_lines {
            let (j, v) = s.split_once(':').ok_or_else(|| perr("bad residual".into()))?;
            let j: usize = j.parse().map_err(|_| perr("bad residual index".into()))?;
            if j >= cols {
                return Err(perr("residual index out of range".into()));
            }
            residuals[j] = v.parse().map_err(|_| perr("bad residual value".into()))?;
        }
        Ok(Self {
            basis: t.build(),
            form_id,
            layers,
            localization,
            residuals,
            meta: BasisMeta {
                dim: int("dim")? as usize,
                fine_cells: int("fine_cells")? as usize,
                coarse_cells: int("coarse_cells")? as usize,
                seed: int("seed")?,
            },
        })
    }
}

/// Galerkin projections of the fine forms onto the multiscale spaces.
#[derive(Debug, Clone)]
pub struct CoarseSystem {
    pub a: CsrMatrix,
    pub b: CsrMatrix,
    pub c: CsrMatrix,
    /// Pressure rows × displacement columns.
    pub d: CsrMatrix,
    pub basis_u: Arc<MsBasis>,
    pub basis_p: Arc<MsBasis>,
}

pub fn assemble_coarse_system(
    forms: &AssembledForms,
    basis_u: Arc<MsBasis>,
    basis_p: Arc<MsBasis>,
) -> Result<CoarseSystem> {
    check_len("coarse system: displacement basis", forms.a.nrows(), basis_u.n_fine())?;
    check_len("coarse system: pressure basis", forms.b.nrows(), basis_p.n_fine())?;
    let (pu, pp) = (&basis_u.basis, &basis_p.basis);
    let sym = |m: &CsrMatrix| -> CsrMatrix {
        // Average with the transpose to remove rounding asymmetry.
        let t = m.transpose();
        m.add_scaled(0.5, &t, 0.5).expect("square")
    };
    Ok(CoarseSystem {
        a: sym(&forms.a.congruence(pu, pu)?),
        b: sym(&forms.b.congruence(pp, pp)?),
        c: sym(&forms.c.congruence(pp, pp)?),
        d: forms.d.congruence(pp, pu)?,
        basis_u,
        basis_p,
    })
}

/// Fine coefficients of a multiscale function.
pub fn prolong(basis: &MsBasis, coarse: &[f64]) -> Result<Vec<f64>> {
    check_len("prolong", basis.n_coarse(), coarse.len())?;
    Ok(basis.basis.matvec(coarse))
}
