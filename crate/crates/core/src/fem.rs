//! P1 finite element spaces and exact assembly of the poroelastic forms.
//!
//! All integrands are products of piecewise-linear functions with
//! element-wise constant coefficients, so every integral is evaluated in
//! closed form: gradients are constant per element and the P1 mass matrix of
//! a `d`-simplex `K` is `|K| (1 + δ_ij) / ((d+1)(d+2))`.
//!
//! The forms are
//!
//! * `a(u,v) = ∫ 2μ ε(u):ε(v) + λ (∇·u)(∇·v)` (elasticity),
//! * `b(p,q) = ∫ (κ/ν) ∇p·∇q` (Darcy),
//! * `c(p,q) = ∫ (1/M) p q` (storage),
//! * `d(u,q) = ∫ α (∇·u) q` (coupling, rows are pressure DOFs).

use std::sync::Arc;

use crate::coefficients::{uniform_stream, ElementParams};
use crate::error::{check_len, Error, Result};
use crate::mesh::{FaceTag, Mesh};
use crate::sparse::{CsrMatrix, TripletBuilder};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FieldKind {
    Scalar,
    Vector,
}

/// Constant gradients of the barycentric coordinates and the volume of one simplex.
#[derive(Debug, Clone)]
pub struct ElementGeometry {
    pub volume: f64,
    /// `grads[i][a]` = ∂λ_i/∂x_a (entries beyond `dim` are zero).
    pub grads: Vec<[f64; 3]>,
}

impl ElementGeometry {
    pub fn new(mesh: &Mesh, e: usize) -> Self {
        let dim = mesh.dim();
        let el = mesh.element(e);
        let x0 = mesh.vertex(el[0]);
        // Jacobian columns x_k - x_0.
        let mut j = [[0.0; 3]; 3];
        for k in 0..dim {
            let xk = mesh.vertex(el[k + 1]);
            for a in 0..dim {
                j[a][k] = xk[a] - x0[a];
            }
        }
        let inv = invert(&j, dim);
        // ∇λ_{k+1} is row k of J⁻¹.
        let mut grads = vec![[0.0; 3]; dim + 1];
        for k in 0..dim {
            for a in 0..dim {
                grads[k + 1][a] = inv[k][a];
                grads[0][a] -= inv[k][a];
            }
        }
        Self {
            volume: mesh.signed_volume(e).abs(),
            grads,
        }
    }

    #[inline]
    pub fn grad_dot(&self, i: usize, j: usize) -> f64 {
        let (g, h) = (&self.grads[i], &self.grads[j]);
        g[0] * h[0] + g[1] * h[1] + g[2] * h[2]
    }
}

fn invert(j: &[[f64; 3]; 3], dim: usize) -> [[f64; 3]; 3] {
    let mut out = [[0.0; 3]; 3];
    if dim == 2 {
        let det = j[0][0] * j[1][1] - j[0][1] * j[1][0];
        out[0][0] = j[1][1] / det;
        out[0][1] = -j[0][1] / det;
        out[1][0] = -j[1][0] / det;
        out[1][1] = j[0][0] / det;
    } else {
        let det = j[0][0] * (j[1][1] * j[2][2] - j[1][2] * j[2][1]) - j[0][1] * (j[1][0] * j[2][2] - j[1][2] * j[2][0])
            + j[0][2] * (j[1][0] * j[2][1] - j[1][1] * j[2][0]);
        for r in 0..3 {
            for c in 0..3 {
                // Cofactor transpose.
                let (r1, r2) = ((c + 1) % 3, (c + 2) % 3);
                let (c1, c2) = ((r + 1) % 3, (r + 2) % 3);
                out[r][c] = (j[r1][c1] * j[r2][c2] - j[r1][c2] * j[r2][c1]) / det;
            }
        }
    }
    out
}

/// Exact P1 mass entry `∫_K λ_i λ_j` for a `dim`-simplex.
#[inline]
pub fn p1_mass_entry(volume: f64, dim: usize, i: usize, j: usize) -> f64 {
    let denom = ((dim + 1) * (dim + 2)) as f64;
    volume * if i == j { 2.0 } else { 1.0 } / denom
}

/// Scalar or vector P1 space with homogeneous Dirichlet faces.
///
/// DOFs are numbered vertex-major (all components of a vertex are
/// consecutive), skipping vertices on any Dirichlet face.
#[derive(Debug, Clone)]
pub struct FeSpace {
    mesh: Arc<Mesh>,
    kind: FieldKind,
    dirichlet_faces: Vec<FaceTag>,
    /// `dof_map[v * components + c]`.
    dof_map: Vec<Option<usize>>,
    /// `(vertex, component)` of each free DOF.
    dof_owner: Vec<(usize, usize)>,
}

impl FeSpace {
    pub fn new(mesh: Arc<Mesh>, kind: FieldKind, dirichlet_faces: &[FaceTag]) -> Result<Self> {
        if let Some(bad) = dirichlet_faces.iter().find(|f| f.axis >= mesh.dim()) {
            return Err(Error::InvalidArgument(format!(
                "face {bad} does not exist in {}D",
                mesh.dim()
            )));
        }
        let mut faces = dirichlet_faces.to_vec();
        faces.sort();
        faces.dedup();
        let ncomp = match kind {
            FieldKind::Scalar => 1,
            FieldKind::Vector => mesh.dim(),
        };
        let mut dof_map = vec![None; mesh.n_vertices() * ncomp];
        let mut dof_owner = Vec::new();
        for v in 0..mesh.n_vertices() {
            if faces.iter().any(|&f| mesh.on_face(v, f)) {
                continue;
            }
            for c in 0..ncomp {
                dof_map[v * ncomp + c] = Some(dof_owner.len());
                dof_owner.push((v, c));
            }
        }
        Ok(Self {
            mesh,
            kind,
            dirichlet_faces: faces,
            dof_map,
            dof_owner,
        })
    }

    pub fn mesh(&self) -> &Mesh {
        &self.mesh
    }

    pub fn mesh_arc(&self) -> &Arc<Mesh> {
        &self.mesh
    }

    pub fn kind(&self) -> FieldKind {
        self.kind
    }

    pub fn components(&self) -> usize {
        match self.kind {
            FieldKind::Scalar => 1,
            FieldKind::Vector => self.mesh.dim(),
        }
    }

    pub fn dirichlet_faces(&self) -> &[FaceTag] {
        &self.dirichlet_faces
    }

    pub fn n_free(&self) -> usize {
        self.dof_owner.len()
    }

    #[inline]
    pub fn dof(&self, vertex: usize, component: usize) -> Option<usize> {
        self.dof_map[vertex * self.components() + component]
    }

    pub fn is_free_vertex(&self, vertex: usize) -> bool {
        self.dof(vertex, 0).is_some()
    }

    pub fn dof_owner(&self, dof: usize) -> (usize, usize) {
        self.dof_owner[dof]
    }

    /// Expands a free-DOF vector to all vertices (constrained values are zero),
    /// indexed `v * components + c`.
    pub fn to_nodal(&self, x: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.dof_map.len()];
        for (k, &(v, c)) in self.dof_owner.iter().enumerate() {
            out[v * self.components() + c] = x[k];
        }
        out
    }

    /// Same mesh, kind and Dirichlet faces.
    pub fn same_layout(&self, other: &FeSpace) -> bool {
        (Arc::ptr_eq(&self.mesh, &other.mesh) || *self.mesh == *other.mesh)
            && self.kind == other.kind
            && self.dirichlet_faces == other.dirichlet_faces
    }
}

/// Matrices of the four forms on free DOFs plus unit-coefficient matrices used
/// for norms.
#[derive(Debug, Clone)]
pub struct AssembledForms {
    /// Elasticity `a`, displacement × displacement.
    pub a: CsrMatrix,
    /// Darcy `b`, pressure × pressure.
    pub b: CsrMatrix,
    /// Storage `c`, pressure × pressure.
    pub c: CsrMatrix,
    /// Coupling `d`, pressure rows × displacement columns.
    pub d: CsrMatrix,
    /// `∫ ∇u:∇v` on the displacement space.
    pub g_u: CsrMatrix,
    /// `∫ ∇p·∇q` on the pressure space.
    pub g_p: CsrMatrix,
    /// `∫ p q` on the pressure space.
    pub m_p: CsrMatrix,
    /// Element coefficients of `a` and `b`, for assembly on element subsets.
    pub a_coefficients: StiffnessCoefficients,
    pub b_coefficients: StiffnessCoefficients,
}

pub fn assemble_forms(
    u_space: &FeSpace,
    p_space: &FeSpace,
    params: &ElementParams,
    biot_modulus: f64,
    viscosity: f64,
) -> Result<AssembledForms> {
    if u_space.mesh() != p_space.mesh() {
        return Err(Error::IncompatibleSpaces(
            "displacement and pressure spaces live on different meshes".into(),
        ));
    }
    if u_space.kind() != FieldKind::Vector || p_space.kind() != FieldKind::Scalar {
        return Err(Error::IncompatibleSpaces(
            "expected a vector displacement space and a scalar pressure space".into(),
        ));
    }
    if !(biot_modulus > 0.0 && viscosity > 0.0) {
        return Err(Error::InvalidArgument("M and nu must be positive".into()));
    }
    let ne = u_space.mesh().n_elements();
    params.check_len(ne)?;
    let a_coefficients = StiffnessCoefficients::Elasticity {
        mu: params.mu.clone(),
        lambda: params.lambda.clone(),
    };
    let b_coefficients = StiffnessCoefficients::Diffusion {
        weight: params.kappa.iter().map(|k| k / viscosity).collect(),
    };
    Ok(AssembledForms {
        a: a_coefficients.assemble(u_space)?,
        b: b_coefficients.assemble(p_space)?,
        c: assemble_mass(p_space, &vec![1.0 / biot_modulus; ne])?,
        d: assemble_coupling(p_space, u_space, &params.alpha)?,
        g_u: assemble_diffusion(u_space, &vec![1.0; ne])?,
        g_p: assemble_diffusion(p_space, &vec![1.0; ne])?,
        m_p: assemble_mass(p_space, &vec![1.0; ne])?,
        a_coefficients,
        b_coefficients,
    })
}

/// Element-local dense matrix scattered onto free DOFs of (row, col) spaces.
fn scatter<F>(rows: &FeSpace, cols: &FeSpace, local: F) -> CsrMatrix
where
    F: FnMut(usize, &ElementGeometry, &mut dyn FnMut(usize, usize, usize, usize, f64)),
{
    scatter_on(rows, cols, 0..rows.mesh().n_elements(), local)
}

fn scatter_on<I, F>(rows: &FeSpace, cols: &FeSpace, elements: I, mut local: F) -> CsrMatrix
where
    I: ExactSizeIterator<Item = usize>,
    F: FnMut(usize, &ElementGeometry, &mut dyn FnMut(usize, usize, usize, usize, f64)),
{
    let mesh = rows.mesh();
    let per = (mesh.dim() + 1) * rows.components() * (mesh.dim() + 1) * cols.components();
    let mut t = TripletBuilder::with_capacity(rows.n_free(), cols.n_free(), per * elements.len());
    for e in elements {
        let geo = ElementGeometry::new(mesh, e);
        let el = mesh.element(e);
        local(e, &geo, &mut |i, a, j, b, val| {
            if let (Some(r), Some(c)) = (rows.dof(el[i], a), cols.dof(el[j], b)) {
                t.push(r, c, val);
            }
        });
    }
    t.build()
}

/// Per-element coefficients of a symmetric stiffness form, kept so the form
/// can be re-assembled over subsets of elements.
#[derive(Debug, Clone, PartialEq)]
pub enum StiffnessCoefficients {
    Elasticity { mu: Vec<f64>, lambda: Vec<f64> },
    Diffusion { weight: Vec<f64> },
}

impl StiffnessCoefficients {
    pub fn assemble(&self, space: &FeSpace) -> Result<CsrMatrix> {
        match self {
            Self::Elasticity { mu, lambda } => assemble_elasticity(space, mu, lambda),
            Self::Diffusion { weight } => assemble_diffusion(space, weight),
        }
    }

    /// The form restricted to the listed elements (other elements contribute nothing).
    pub fn assemble_on(&self, space: &FeSpace, elements: &[usize]) -> Result<CsrMatrix> {
        let ne = space.mesh().n_elements();
        if let Some(&e) = elements.iter().find(|&&e| e >= ne) {
            return Err(Error::InvalidArgument(format!(
                "element {e} out of range ({ne} elements)"
            )));
        }
        let it = elements.iter().copied();
        match self {
            Self::Elasticity { mu, lambda } => {
                check_len("mu per element", ne, mu.len())?;
                check_len("lambda per element", ne, lambda.len())?;
                Ok(scatter_on(
                    space,
                    space,
                    it,
                    elasticity_local(space.mesh().dim(), mu, lambda),
                ))
            }
            Self::Diffusion { weight } => {
                check_len("diffusion weight per element", ne, weight.len())?;
                Ok(scatter_on(space, space, it, diffusion_local(space, weight)))
            }
        }
    }
}

fn elasticity_local<'a>(
    dim: usize,
    mu: &'a [f64],
    lambda: &'a [f64],
) -> impl FnMut(usize, &ElementGeometry, &mut dyn FnMut(usize, usize, usize, usize, f64)) + 'a {
    move |e, geo, push| {
        let (m, l, vol) = (mu[e], lambda[e], geo.volume);
        for i in 0..=dim {
            for j in 0..=dim {
                let gij = geo.grad_dot(i, j);
                let gi = geo.grads[i];
                let gj = geo.grads[j];
                for a in 0..dim {
                    for b in 0..dim {
                        let shear = if a == b { gij } else { 0.0 } + gi[b] * gj[a];
                        push(i, a, j, b, vol * (m * shear + l * gi[a] * gj[b]));
                    }
                }
            }
        }
    }
}

fn diffusion_local<'a>(
    space: &FeSpace,
    weight: &'a [f64],
) -> impl FnMut(usize, &ElementGeometry, &mut dyn FnMut(usize, usize, usize, usize, f64)) + 'a {
    let dim = space.mesh().dim();
    let nc = space.components();
    move |e, geo, push| {
        for i in 0..=dim {
            for j in 0..=dim {
                let v = weight[e] * geo.volume * geo.grad_dot(i, j);
                for c in 0..nc {
                    push(i, c, j, c, v);
                }
            }
        }
    }
}

/// Elasticity form with Lamé fields `mu`, `lambda` per element.
pub fn assemble_elasticity(space: &FeSpace, mu: &[f64], lambda: &[f64]) -> Result<CsrMatrix> {
    check_len("mu per element", space.mesh().n_elements(), mu.len())?;
    check_len("lambda per element", space.mesh().n_elements(), lambda.len())?;
    Ok(scatter(space, space, elasticity_local(space.mesh().dim(), mu, lambda)))
}

/// `∫ w ∇u·∇v`, component-wise for vector spaces.
pub fn assemble_diffusion(space: &FeSpace, weight: &[f64]) -> Result<CsrMatrix> {
    check_len("diffusion weight per element", space.mesh().n_elements(), weight.len())?;
    Ok(scatter(space, space, diffusion_local(space, weight)))
}

/// `∫ w u v`, component-wise for vector spaces.
pub fn assemble_mass(space: &FeSpace, weight: &[f64]) -> Result<CsrMatrix> {
    let dim = space.mesh().dim();
    let nc = space.components();
    check_len("mass weight per element", space.mesh().n_elements(), weight.len())?;
    Ok(scatter(space, space, |e, geo, push| {
        for i in 0..=dim {
            for j in 0..=dim {
                let v = weight[e] * p1_mass_entry(geo.volume, dim, i, j);
                for c in 0..nc {
                    push(i, c, j, c, v);
                }
            }
        }
    }))
}

/// `∫ α (∇·u) q` with rows on `p_space` and columns on `u_space`.
pub fn assemble_coupling(p_space: &FeSpace, u_space: &FeSpace, alpha: &[f64]) -> Result<CsrMatrix> {
    let dim = p_space.mesh().dim();
    check_len("alpha per element", p_space.mesh().n_elements(), alpha.len())?;
    Ok(scatter(p_space, u_space, |e, geo, push| {
        let w = alpha[e] * geo.volume / (dim + 1) as f64;
        for i in 0..=dim {
            for j in 0..=dim {
                for b in 0..dim {
                    push(i, 0, j, b, w * geo.grads[j][b]);
                }
            }
        }
    }))
}

/// Unconstrained P1 mass matrix over all vertices (scalar).
pub fn full_mass_matrix(mesh: &Mesh) -> CsrMatrix {
    let dim = mesh.dim();
    let nv = mesh.n_vertices();
    let mut t = TripletBuilder::with_capacity(nv, nv, mesh.n_elements() * (dim + 1) * (dim + 1));
    for e in 0..mesh.n_elements() {
        let geo = ElementGeometry::new(mesh, e);
        let el = mesh.element(e);
        for i in 0..=dim {
            for j in 0..=dim {
                t.push(el[i], el[j], p1_mass_entry(geo.volume, dim, i, j));
            }
        }
    }
    t.build()
}

/// Source term `f` for the pressure equation, always represented as a P1
/// function through its nodal values.
#[derive(Debug, Clone, PartialEq)]
pub enum Source {
    Zero,
    Constant(f64),
    /// Independent `U[0,1)` values per mesh vertex from the given seed.
    RandomNodal {
        seed: u64,
    },
    /// Explicit values per mesh vertex.
    Nodal(Vec<f64>),
}

impl Source {
    pub fn nodal_values(&self, mesh: &Mesh) -> Result<Vec<f64>> {
        let nv = mesh.n_vertices();
        Ok(match self {
            Source::Zero => vec![0.0; nv],
            Source::Constant(c) => vec![*c; nv],
            Source::RandomNodal { seed } => {
                let mut draw = uniform_stream(*seed, 0);
                (0..nv).map(|_| draw()).collect()
            }
            Source::Nodal(v) => {
                check_len("nodal source values", nv, v.len())?;
                v.clone()
            }
        })
    }

    pub fn is_zero(&self) -> bool {
        match self {
            Source::Zero => true,
            Source::Constant(c) => *c == 0.0,
            Source::Nodal(v) => v.iter().all(|&x| x == 0.0),
            Source::RandomNodal { .. } => false,
        }
    }
}

/// Load vector `(f, φ_z)` on the free pressure DOFs.
pub fn assemble_load(p_space: &FeSpace, f: &Source) -> Result<Vec<f64>> {
    if f.is_zero() {
        return Ok(vec![0.0; p_space.n_free()]);
    }
    let values = f.nodal_values(p_space.mesh())?;
    Ok(load_from_nodal(p_space, &values))
}

pub(crate) fn load_from_nodal(p_space: &FeSpace, values: &[f64]) -> Vec<f64> {
    let mesh = p_space.mesh();
    let dim = mesh.dim();
    let mut out = vec![0.0; p_space.n_free()];
    for e in 0..mesh.n_elements() {
        let geo = ElementGeometry::new(mesh, e);
        let el = mesh.element(e);
        for i in 0..=dim {
            if let Some(r) = p_space.dof(el[i], 0) {
                out[r] += (0..=dim)
                    .map(|j| p1_mass_entry(geo.volume, dim, i, j) * values[el[j]])
                    .sum::<f64>();
            }
        }
    }
    out
}

/// `‖f‖²_{L²}` of the P1 function with the given nodal values.
pub fn l2_norm_sq_nodal(mesh: &Mesh, values: &[f64]) -> f64 {
    full_mass_matrix(mesh).quadratic_form(values)
}

/// Nodal interpolant of `g(x, component)` on the free DOFs. Data must vanish
/// on the Dirichlet faces, since only homogeneous constraints are supported.
pub fn interpolate_nodal<G>(space: &FeSpace, g: G) -> Result<Vec<f64>>
where
    G: Fn(&[f64], usize) -> f64,
{
    let mesh = space.mesh();
    let nc = space.components();
    let mut out = vec![0.0; space.n_free()];
    for v in 0..mesh.n_vertices() {
        let x = mesh.vertex(v);
        for c in 0..nc {
            let val = g(x, c);
            match space.dof(v, c) {
                Some(k) => out[k] = val,
                None if val.abs() > 1e-12 => {
                    return Err(Error::InitialData(format!(
                        "value {val:e} at Dirichlet vertex {:?} (component {c}); \
                         only homogeneous constraints are supported",
                        x
                    )))
                }
                None => {}
            }
        }
    }
    Ok(out)
}

/// `√(xᵀ M x)`; a quadratic form below `−1e-12` (relative) is an error.
pub fn energy_norm(x: &[f64], m: &CsrMatrix) -> Result<f64> {
    check_len("energy norm vector", m.ncols(), x.len())?;
    let q = m.quadratic_form(x);
    let scale = m.max_abs() * x.iter().map(|v| v * v).sum::<f64>();
    if q < -1e-12 * scale.max(f64::MIN_POSITIVE) {
        return Err(Error::Numerical(format!("negative quadratic form {q:e}")));
    }
    Ok(q.max(0.0).sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::coefficients::ElementParams;

    fn space(n: usize, kind: FieldKind, faces: &[&str]) -> FeSpace {
        let mesh = Arc::new(Mesh::structured(2, n).unwrap());
        let faces: Vec<FaceTag> = faces.iter().map(|s| s.parse().unwrap()).collect();
        FeSpace::new(mesh, kind, &faces).unwrap()
    }

    #[test]
    fn free_dof_counts() {
        let all = ["x1=0", "x1=1", "x2=0", "x2=1"];
        assert_eq!(space(2, FieldKind::Scalar, &all).n_free(), 1);
        assert_eq!(space(2, FieldKind::Vector, &["x2=0", "x2=1"]).n_free(), 6);
        assert_eq!(space(3, FieldKind::Vector, &[]).n_free(), 2 * 16);
        let m = Arc::new(Mesh::structured(2, 2).unwrap());
        assert!(FeSpace::new(m, FieldKind::Scalar, &["x3=0".parse().unwrap()]).is_err());
    }

    #[test]
    fn reference_triangle_local_matrices() {
        // Mesh of one square: element 1 is (0,0),(1,1),(0,1); element 0 is
        // (0,0),(1,0),(1,1). Build the unit right triangle directly instead.
        let mesh = Mesh::structured(2, 1).unwrap();
        let geo = ElementGeometry::new(&mesh, 0);
        assert!((geo.volume - 0.5).abs() < 1e-15);
        // Gradient sum is zero.
        for a in 0..2 {
            assert!(geo.grads.iter().map(|g| g[a]).sum::<f64>().abs() < 1e-15);
        }
        // Element 0 is (0,0),(1,0),(1,1) with hat functions 1-x, x-y, y.
        let expected = [[1.0, -1.0, 0.0], [-1.0, 2.0, -1.0], [0.0, -1.0, 1.0]];
        for i in 0..3 {
            for j in 0..3 {
                let v = geo.volume * geo.grad_dot(i, j);
                assert!((v - 0.5 * expected[i][j]).abs() < 1e-15);
                let m = p1_mass_entry(0.5, 2, i, j);
                let em = if i == j { 2.0 } else { 1.0 } / 24.0;
                assert!((m - em).abs() < 1e-16);
            }
        }
    }

    #[test]
    fn darcy_assembly_on_reference_triangle() {
        // One-square mesh with no constraints: the assembled Darcy matrix
        // restricted to element 0's contribution equals |K| ∇λ_i·∇λ_j.
        let mesh = Arc::new(Mesh::structured(2, 1).unwrap());
        let s = FeSpace::new(mesh.clone(), FieldKind::Scalar, &[]).unwrap();
        let b = assemble_diffusion(&s, &[1.0, 0.0]).unwrap();
        // Element 0 = (0,0),(1,0),(1,1): gradients (-1,0),(1,-1),(0,1).
        let el = mesh.element(0).to_vec();
        let geo = ElementGeometry::new(&mesh, 0);
        for i in 0..3 {
            for j in 0..3 {
                let v = b.get(s.dof(el[i], 0).unwrap(), s.dof(el[j], 0).unwrap());
                assert!((v - 0.5 * geo.grad_dot(i, j)).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn elasticity_kills_translations() {
        let s = space(4, FieldKind::Vector, &[]);
        let ne = s.mesh().n_elements();
        let a = assemble_elasticity(&s, &vec![3.0; ne], &vec![5.0; ne]).unwrap();
        for c in 0..2 {
            let v = interpolate_nodal(&s, |_, k| if k == c { 1.0 } else { 0.0 }).unwrap();
            let av = a.matvec(&v);
            assert!(av.iter().all(|x| x.abs() < 1e-12));
        }
        assert!(a.is_symmetric(1e-12));
    }

    #[test]
    fn constant_load_sums_to_area() {
        let s = space(5, FieldKind::Scalar, &[]);
        let f = assemble_load(&s, &Source::Constant(1.0)).unwrap();
        assert!((f.iter().sum::<f64>() - 1.0).abs() < 1e-14);
        assert!(assemble_load(&s, &Source::Zero).unwrap().iter().all(|&v| v == 0.0));
        let r1 = assemble_load(&s, &Source::RandomNodal { seed: 3 }).unwrap();
        let r2 = assemble_load(&s, &Source::RandomNodal { seed: 3 }).unwrap();
        assert_eq!(r1, r2);
    }

    #[test]
    fn nodal_interpolation_values() {
        let s = space(2, FieldKind::Scalar, &["x1=0", "x1=1", "x2=0", "x2=1"]);
        let p0 = interpolate_nodal(&s, |x, _| (1.0 - x[0]) * x[0] * (1.0 - x[1]) * x[1]).unwrap();
        assert_eq!(p0, vec![0.0625]);
        let s2 = space(2, FieldKind::Scalar, &["x2=1"]);
        let q = interpolate_nodal(&s2, |x, _| (1.0 - x[1]).sqrt()).unwrap();
        let v = s2.mesh().vertex_at([1, 0, 0]);
        assert_eq!(q[s2.dof(v, 0).unwrap()], 1.0);
        assert!(interpolate_nodal(&s2, |_, _| 1.0).is_err());
        assert!(interpolate_nodal(&s2, |_, _| 0.0).unwrap().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn energy_norm_cases() {
        let id = CsrMatrix::identity(3);
        assert_eq!(energy_norm(&[0.0; 3], &id).unwrap(), 0.0);
        assert!((energy_norm(&[3.0, 4.0, 0.0], &id).unwrap() - 5.0).abs() < 1e-15);
        let neg = id.scale(-1.0);
        assert!(energy_norm(&[1.0, 0.0, 0.0], &neg).is_err());
    }

    #[test]
    fn assemble_forms_checks_lengths() {
        let mesh = Arc::new(Mesh::structured(2, 2).unwrap());
        let u = FeSpace::new(mesh.clone(), FieldKind::Vector, &[]).unwrap();
        let p = FeSpace::new(mesh, FieldKind::Scalar, &[]).unwrap();
        let bad = ElementParams::constant(3, 1.0, 1.0, 1.0, 1.0);
        assert!(assemble_forms(&u, &p, &bad, 1.0, 1.0).is_err());
        let ok = ElementParams::constant(8, 1.0, 1.0, 1.0, 1.0);
        let f = assemble_forms(&u, &p, &ok, 1.0, 1.0).unwrap();
        assert_eq!(f.d.nrows(), p.n_free());
        assert_eq!(f.d.ncols(), u.n_free());
    }

    #[test]
    fn element_subsets_partition_the_global_matrix() {
        let sp = space(4, FieldKind::Vector, &["x2=1"]);
        let ne = sp.mesh().n_elements();
        let mu: Vec<f64> = (0..ne).map(|e| 1.0 + e as f64 / 7.0).collect();
        let coef = StiffnessCoefficients::Elasticity {
            lambda: mu.iter().map(|m| 2.0 * m).collect(),
            mu,
        };
        let full = coef.assemble(&sp).unwrap();
        let all: Vec<usize> = (0..ne).collect();
        let same = coef.assemble_on(&sp, &all).unwrap();
        assert!(same.add_scaled(1.0, &full, -1.0).unwrap().max_abs() < 1e-14);
        let (even, odd): (Vec<usize>, Vec<usize>) = all.iter().partition(|&&e| e % 2 == 0);
        let sum = coef
            .assemble_on(&sp, &even)
            .unwrap()
            .add_scaled(1.0, &coef.assemble_on(&sp, &odd).unwrap(), 1.0)
            .unwrap();
        assert!(sum.add_scaled(1.0, &full, -1.0).unwrap().max_abs() < 1e-13);
        assert!(coef.assemble_on(&sp, &[ne]).is_err());
    }
}
