//! Quasi-interpolation `I_H = E_H ∘ Π_H` from the fine P1 space to the
//! coarse one, and the nodal prolongation in the other direction.
//!
//! `Π_H` is the elementwise L² projection onto P1 of each coarse element; the
//! integrals are exact because both the fine function and the coarse hat
//! functions are affine on every fine sub-element. `E_H` averages the
//! resulting discontinuous values at each coarse vertex over the incident
//! coarse elements and drops Dirichlet vertices.

use crate::error::{Error, Result};
use crate::fem::{p1_mass_entry, ElementGeometry, FeSpace};
use crate::mesh::{barycentric, Mesh, Refinement};
use crate::sparse::{CsrMatrix, TripletBuilder};

/// `I_H` on free DOFs (coarse free × fine free) together with its scalar
/// vertex-level form (coarse vertices × fine vertices).
#[derive(Debug, Clone)]
pub struct InterpolationOperator {
    pub matrix: CsrMatrix,
    pub node_matrix: CsrMatrix,
}

impl InterpolationOperator {
    pub fn apply(&self, v: &[f64]) -> Vec<f64> {
        self.matrix.matvec(v)
    }
}

/// Inverse of the P1 element mass matrix, `(d+1)(d+2)/|K| · (I − 11ᵀ/(d+2))`.
fn local_mass_inverse(volume: f64, dim: usize, i: usize, j: usize) -> f64 {
    let s = ((dim + 1) * (dim + 2)) as f64 / volume;
    let delta = if i == j { 1.0 } else { 0.0 };
    s * (delta - 1.0 / (dim + 2) as f64)
}

/// Elementwise L² projection as a map from fine vertex values to the
/// discontinuous coarse values, one row per `(coarse element, local vertex)`
/// numbered `k * (d + 1) + j`.
pub fn piecewise_l2_projection(r: &Refinement) -> CsrMatrix {
    let (fine, coarse) = (r.fine, r.coarse);
    let d = coarse.dim();
    let nl = d + 1;
    let mut t = TripletBuilder::new(coarse.n_elements() * nl, fine.n_vertices());
    for k in 0..coarse.n_elements() {
        let vol_k = coarse.signed_volume(k).abs();
        for &tf in r.children(k) {
            let geo = ElementGeometry::new(fine, tf);
            let verts = fine.element(tf);
            let lam: Vec<Vec<f64>> = verts.iter().map(|&b| barycentric(coarse, k, fine.vertex(b))).collect();
            // rhs_i = Σ_a v(a) Σ_b λ_i(b) M_ab
            for (a, &va) in verts.iter().enumerate() {
                let mut rhs = vec![0.0; nl];
                for (b, lb) in lam.iter().enumerate() {
                    let m = p1_mass_entry(geo.volume, d, a, b);
                    for i in 0..nl {
                        rhs[i] += lb[i] * m;
                    }
                }
                for j in 0..nl {
                    let c: f64 = (0..nl).map(|i| local_mass_inverse(vol_k, d, j, i) * rhs[i]).sum();
                    t.push(k * nl + j, va, c);
                }
            }
        }
    }
    t.build()
}

/// Vertex averaging of discontinuous P1 values: coarse vertices × `(k, j)`.
pub fn averaging_operator(coarse: &Mesh) -> CsrMatrix {
    let nl = coarse.dim() + 1;
    let v2e = coarse.vertex_elements();
    let mut t = TripletBuilder::new(coarse.n_vertices(), coarse.n_elements() * nl);
    for (z, elems) in v2e.iter().enumerate() {
        let w = 1.0 / elems.len() as f64;
        for &k in elems {
            let j = coarse.element(k).iter().position(|&v| v == z).unwrap();
            t.push(z, k * nl + j, w);
        }
    }
    t.build()
}

fn check_compatible(fine: &FeSpace, coarse: &FeSpace) -> Result<()> {
    if fine.kind() != coarse.kind() || fine.dirichlet_faces() != coarse.dirichlet_faces() {
        return Err(Error::IncompatibleSpaces(format!(
            "fine {:?} with Dirichlet faces {:?} vs coarse {:?} with {:?}",
            fine.kind(),
            fine.dirichlet_faces(),
            coarse.kind(),
            coarse.dirichlet_faces()
        )));
    }
    Ok(())
}

/// Expands a vertex-level scalar operator to free DOFs, component-wise.
/// Rows index `row_space` vertices, columns `col_space` vertices.
fn expand(node: &CsrMatrix, row_space: &FeSpace, col_space: &FeSpace) -> CsrMatrix {
    let ncomp = row_space.components();
    let mut t = TripletBuilder::with_capacity(row_space.n_free(), col_space.n_free(), node.nnz() * ncomp);
    for r in 0..row_space.n_free() {
        let (z, c) = row_space.dof_owner(r);
        let (cols, vals) = node.row(z);
        for (&a, &v) in cols.iter().zip(vals) {
            if let Some(col) = col_space.dof(a, c) {
                t.push(r, col, v);
            }
        }
    }
    t.build()
}

/// Builds `I_H` between nested spaces with identical kind and Dirichlet faces.
pub fn quasi_interpolation(fine: &FeSpace, coarse: &FeSpace) -> Result<InterpolationOperator> {
    check_compatible(fine, coarse)?;
    let r = Refinement::new(fine.mesh(), coarse.mesh())?;
    let node_matrix = averaging_operator(coarse.mesh()).matmul(&piecewise_l2_projection(&r))?;
    let matrix = expand(&node_matrix, coarse, fine);
    Ok(InterpolationOperator { matrix, node_matrix })
}

/// P1 nodal interpolation of coarse functions on the fine mesh
/// (fine free × coarse free).
pub fn nodal_prolongation(fine: &FeSpace, coarse: &FeSpace) -> Result<CsrMatrix> {
    check_compatible(fine, coarse)?;
    let r = Refinement::new(fine.mesh(), coarse.mesh())?;
    let fm = fine.mesh();
    let v2e = fm.vertex_elements();
    let mut t = TripletBuilder::new(fm.n_vertices(), coarse.mesh().n_vertices());
    for v in 0..fm.n_vertices() {
        let (k, lam) = r.locate_fine_vertex(v, &v2e);
        for (&z, &l) in coarse.mesh().element(k).iter().zip(&lam) {
            if l.abs() > 1e-13 {
                t.push(v, z, l);
            }
        }
    }
    Ok(expand(&t.build(), fine, coarse))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fem::FieldKind;
    use crate::mesh::FaceTag;
    use std::sync::Arc;

    fn spaces(dim: usize, nf: usize, nc: usize, kind: FieldKind, faces: &[FaceTag]) -> (FeSpace, FeSpace) {
        let f = FeSpace::new(Arc::new(Mesh::structured(dim, nf).unwrap()), kind, faces).unwrap();
        let c = FeSpace::new(Arc::new(Mesh::structured(dim, nc).unwrap()), kind, faces).unwrap();
        (f, c)
    }

    #[test]
    fn local_inverse_matches_mass() {
        for dim in [2, 3] {
            let vol = 0.37;
            let n = dim + 1;
            for i in 0..n {
                for j in 0..n {
                    let s: f64 = (0..n)
                        .map(|k| p1_mass_entry(vol, dim, i, k) * local_mass_inverse(vol, dim, k, j))
                        .sum();
                    assert!((s - if i == j { 1.0 } else { 0.0 }).abs() < 1e-14);
                }
            }
        }
    }

    #[test]
    fn reproduces_coarse_functions() {
        for (dim, nf, nc) in [(2, 8, 2), (2, 12, 4), (3, 4, 2)] {
            for kind in [FieldKind::Scalar, FieldKind::Vector] {
                let faces = [FaceTag::new(1, true)];
                let (f, c) = spaces(dim, nf, nc, kind, &faces);
                let ih = quasi_interpolation(&f, &c).unwrap();
                let p = nodal_prolongation(&f, &c).unwrap();
                let id = ih.matrix.matmul(&p).unwrap();
                let e = id.add_scaled(1.0, &CsrMatrix::identity(c.n_free()), -1.0).unwrap();
                assert!(e.max_abs() < 1e-12, "{dim} {nf} {nc}: {}", e.max_abs());
            }
        }
    }

    #[test]
    fn constants_are_preserved_without_boundary() {
        let (f, c) = spaces(2, 8, 2, FieldKind::Scalar, &[]);
        let ih = quasi_interpolation(&f, &c).unwrap();
        let out = ih.apply(&vec![3.0; f.n_free()]);
        assert!(out.iter().all(|&v| (v - 3.0).abs() < 1e-13));
        // Rows sum to one.
        let s = ih.node_matrix.matvec(&vec![1.0; f.mesh().n_vertices()]);
        assert!(s.iter().all(|&v| (v - 1.0).abs() < 1e-13));
    }

    #[test]
    fn l2_projection_of_quadratic_oracle() {
        // Fine interpolant of x² on one coarse triangle; moments by edge-midpoint
        // quadrature, which is exact for the quadratic integrand on each fine triangle.
        let fine = Mesh::structured(2, 8).unwrap();
        let coarse = Mesh::structured(2, 1).unwrap();
        let r = Refinement::new(&fine, &coarse).unwrap();
        let pi = piecewise_l2_projection(&r);
        let v: Vec<f64> = (0..fine.n_vertices()).map(|i| fine.vertex(i)[0].powi(2)).collect();
        let out = pi.matvec(&v);
        let geo_k = ElementGeometry::new(&coarse, 0);
        let mut rhs = [0.0; 3];
        for &tf in r.children(0) {
            let g = ElementGeometry::new(&fine, tf);
            let vs = fine.element(tf);
            for (a, b) in [(0, 1), (1, 2), (0, 2)] {
                let x: Vec<f64> = (0..2)
                    .map(|d| 0.5 * (fine.vertex(vs[a])[d] + fine.vertex(vs[b])[d]))
                    .collect();
                let val = 0.5 * (v[vs[a]] + v[vs[b]]);
                let lam = barycentric(&coarse, 0, &x);
                for i in 0..3 {
                    rhs[i] += g.volume / 3.0 * val * lam[i];
                }
            }
        }
        for j in 0..3 {
            let c: f64 = (0..3).map(|i| local_mass_inverse(geo_k.volume, 2, j, i) * rhs[i]).sum();
            assert!((out[j] - c).abs() < 1e-13, "{j}: {} vs {c}", out[j]);
        }
    }

    #[test]
    fn rejects_mismatched_boundaries() {
        let f = FeSpace::new(
            Arc::new(Mesh::structured(2, 4).unwrap()),
            FieldKind::Scalar,
            &FaceTag::all(2),
        )
        .unwrap();
        let c = FeSpace::new(Arc::new(Mesh::structured(2, 2).unwrap()), FieldKind::Scalar, &[]).unwrap();
        assert!(matches!(quasi_interpolation(&f, &c), Err(Error::IncompatibleSpaces(_))));
        let c3 = FeSpace::new(
            Arc::new(Mesh::structured(2, 3).unwrap()),
            FieldKind::Scalar,
            &FaceTag::all(2),
        )
        .unwrap();
        assert!(quasi_interpolation(&f, &c3).is_err());
    }
}
