//! Structured simplicial meshes of the unit square and cube.
//!
//! Grid cells are numbered lexicographically (x fastest). In 2D every square
//! is split by the diagonal from `(i, j)` to `(i+1, j+1)`; in 3D every cube is
//! split into the six Kuhn tetrahedra that share the main diagonal. Both
//! patterns are translation invariant, so meshes whose cell counts divide one
//! another are nested.

use std::collections::BTreeSet;
use std::fmt;
use std::io::Write;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Vertex-offset paths of the Kuhn simplices, one per axis permutation.
const KUHN_PERMUTATIONS: [[usize; 3]; 6] = [[0, 1, 2], [0, 2, 1], [1, 0, 2], [1, 2, 0], [2, 0, 1], [2, 1, 0]];

/// One face of the unit square/cube: `x_{axis+1} = 0` or `x_{axis+1} = 1`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct FaceTag {
    pub axis: usize,
    pub upper: bool,
}

impl FaceTag {
    pub fn new(axis: usize, upper: bool) -> Self {
        Self { axis, upper }
    }

    /// All `2·dim` faces.
    pub fn all(dim: usize) -> Vec<FaceTag> {
        (0..dim)
            .flat_map(|a| [FaceTag::new(a, false), FaceTag::new(a, true)])
            .collect()
    }
}

impl fmt::Display for FaceTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "x{}={}", self.axis + 1, u8::from(self.upper))
    }
}

impl FromStr for FaceTag {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::Parse(format!("face tag '{s}' (expected e.g. \"x2=1\")"));
        let rest = s.trim().strip_prefix('x').ok_or_else(bad)?;
        let (axis, side) = rest.split_once('=').ok_or_else(bad)?;
        let axis: usize = axis.trim().parse().map_err(|_| bad())?;
        if !(1..=3).contains(&axis) {
            return Err(bad());
        }
        let upper = match side.trim() {
            "0" => false,
            "1" => true,
            _ => return Err(bad()),
        };
        Ok(FaceTag::new(axis - 1, upper))
    }
}

impl Serialize for FaceTag {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(&self.to_string())
    }
}

impl<'de> Deserialize<'de> for FaceTag {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BoundaryFacet {
    pub vertices: Vec<usize>,
    pub face: FaceTag,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Mesh {
    dim: usize,
    cells_per_side: usize,
    vertices: Vec<[f64; 3]>,
    elements: Vec<Vec<usize>>,
    boundary_facets: Vec<BoundaryFacet>,
    mesh_size: f64,
}

impl Mesh {
    /// Builds the structured mesh of `[0,1]^dim` with `cells_per_side` grid
    /// cells along each axis.
    pub fn structured(dim: usize, cells_per_side: usize) -> Result<Mesh> {
        if dim != 2 && dim != 3 {
            return Err(Error::InvalidArgument(format!("dimension must be 2 or 3, got {dim}")));
        }
        if cells_per_side == 0 {
            return Err(Error::InvalidArgument("cells_per_side must be positive".into()));
        }
        let n = cells_per_side;
        let np = n + 1;
        let h = 1.0 / n as f64;
        let nz = if dim == 3 { np } else { 1 };
        let mut vertices = Vec::with_capacity(np * np * nz);
        for k in 0..nz {
            for j in 0..np {
                for i in 0..np {
                    vertices.push([i as f64 * h, j as f64 * h, k as f64 * h]);
                }
            }
        }
        let vid = |i: usize, j: usize, k: usize| i + np * (j + np * k);
        let mut elements = Vec::new();
        if dim == 2 {
            for j in 0..n {
                for i in 0..n {
                    elements.push(vec![vid(i, j, 0), vid(i + 1, j, 0), vid(i + 1, j + 1, 0)]);
                    elements.push(vec![vid(i, j, 0), vid(i + 1, j + 1, 0), vid(i, j + 1, 0)]);
                }
            }
        } else {
            for k in 0..n {
                for j in 0..n {
                    for i in 0..n {
                        for perm in &KUHN_PERMUTATIONS {
                            let mut off = [0usize; 3];
                            let mut tet = vec![vid(i, j, k)];
                            for &axis in perm {
                                off[axis] = 1;
                                tet.push(vid(i + off[0], j + off[1], k + off[2]));
                            }
                            elements.push(tet);
                        }
                    }
                }
            }
        }
        let mut mesh = Mesh {
            dim,
            cells_per_side: n,
            vertices,
            elements,
            boundary_facets: Vec::new(),
            mesh_size: (dim as f64).sqrt() * h,
        };
        for e in 0..mesh.elements.len() {
            if mesh.signed_volume(e) < 0.0 {
                mesh.elements[e].swap(1, 2);
            }
        }
        mesh.boundary_facets = mesh.collect_boundary_facets();
        Ok(mesh)
    }

    fn collect_boundary_facets(&self) -> Vec<BoundaryFacet> {
        let n = self.cells_per_side;
        let mut out = Vec::new();
        for el in &self.elements {
            for skip in 0..el.len() {
                let facet: Vec<usize> = el
                    .iter()
                    .enumerate()
                    .filter(|&(k, _)| k != skip)
                    .map(|(_, &v)| v)
                    .collect();
                for axis in 0..self.dim {
                    for (upper, target) in [(false, 0), (true, n)] {
                        if facet.iter().all(|&v| self.grid_index(v)[axis] == target) {
                            out.push(BoundaryFacet {
                                vertices: facet.clone(),
                                face: FaceTag::new(axis, upper),
                            });
                        }
                    }
                }
            }
        }
        out
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn cells_per_side(&self) -> usize {
        self.cells_per_side
    }

    pub fn n_vertices(&self) -> usize {
        self.vertices.len()
    }

    pub fn n_elements(&self) -> usize {
        self.elements.len()
    }

    pub fn vertices(&self) -> &[[f64; 3]] {
        &self.vertices
    }

    /// Coordinates of vertex `v` (only the first `dim` entries are meaningful).
    pub fn vertex(&self, v: usize) -> &[f64] {
        &self.vertices[v][..self.dim]
    }

    pub fn elements(&self) -> &[Vec<usize>] {
        &self.elements
    }

    pub fn element(&self, e: usize) -> &[usize] {
        &self.elements[e]
    }

    pub fn boundary_facets(&self) -> &[BoundaryFacet] {
        &self.boundary_facets
    }

    /// Maximum element diameter.
    pub fn mesh_size(&self) -> f64 {
        self.mesh_size
    }

    /// Elements per grid cell: 2 in 2D, 6 in 3D.
    pub fn simplices_per_cell(&self) -> usize {
        if self.dim == 2 {
            2
        } else {
            6
        }
    }

    /// Integer grid coordinates of vertex `v`.
    pub fn grid_index(&self, v: usize) -> [usize; 3] {
        let np = self.cells_per_side + 1;
        [v % np, (v / np) % np, v / (np * np)]
    }

    pub fn vertex_at(&self, idx: [usize; 3]) -> usize {
        let np = self.cells_per_side + 1;
        idx[0] + np * (idx[1] + np * idx[2])
    }

    pub fn on_face(&self, v: usize, face: FaceTag) -> bool {
        let g = self.grid_index(v);
        g[face.axis] == if face.upper { self.cells_per_side } else { 0 }
    }

    pub fn signed_volume(&self, e: usize) -> f64 {
        let el = &self.elements[e];
        let x0 = self.vertices[el[0]];
        let col = |k: usize| {
            let x = self.vertices[el[k]];
            [x[0] - x0[0], x[1] - x0[1], x[2] - x0[2]]
        };
        if self.dim == 2 {
            let (a, b) = (col(1), col(2));
            0.5 * (a[0] * b[1] - a[1] * b[0])
        } else {
            let (a, b, c) = (col(1), col(2), col(3));
            let det = a[0] * (b[1] * c[2] - b[2] * c[1]) - a[1] * (b[0] * c[2] - b[2] * c[0])
                + a[2] * (b[0] * c[1] - b[1] * c[0]);
            det / 6.0
        }
    }

    /// Barycenter of element `e` in grid units scaled by `dim + 1`, as exact integers.
    fn scaled_barycenter(&self, e: usize) -> [usize; 3] {
        let mut b = [0usize; 3];
        for &v in &self.elements[e] {
            let g = self.grid_index(v);
            for a in 0..3 {
                b[a] += g[a];
            }
        }
        b
    }

    /// Element containing the point with scaled grid coordinates `b`
    /// (units of `1 / (cells_per_side · scale)`), which must lie strictly
    /// inside an element.
    fn locate_scaled(&self, b: [usize; 3], scale: usize) -> usize {
        let n = self.cells_per_side;
        let mut cell = [0usize; 3];
        let mut local = [0usize; 3];
        for a in 0..self.dim {
            cell[a] = b[a] / scale;
            local[a] = b[a] % scale;
        }
        let c = cell[0] + n * (cell[1] + n * cell[2]);
        if self.dim == 2 {
            // Lower triangle of the square holds local x > local y.
            2 * c + usize::from(local[0] <= local[1])
        } else {
            // Kuhn simplex: coordinates decreasing along the permutation.
            let mut axes = [0usize, 1, 2];
            axes.sort_by(|&p, &q| local[q].cmp(&local[p]).then(p.cmp(&q)));
            let p = KUHN_PERMUTATIONS.iter().position(|perm| *perm == axes).unwrap();
            6 * c + p
        }
    }

    /// Vertex → incident elements.
    pub fn vertex_elements(&self) -> Vec<Vec<usize>> {
        let mut out = vec![Vec::new(); self.n_vertices()];
        for (e, el) in self.elements.iter().enumerate() {
            for &v in el {
                out[v].push(e);
            }
        }
        out
    }

    /// Node patch on this mesh: elements containing `node` enlarged by
    /// `layers` rings of vertex-adjacent elements. `fine_elements` is left
    /// empty; use [`Refinement::node_patch`] to populate it.
    pub fn node_patch(&self, node: usize, layers: usize) -> Result<Patch> {
        let v2e = self.vertex_elements();
        self.node_patch_with(&v2e, node, layers)
    }

    pub(crate) fn node_patch_with(&self, v2e: &[Vec<usize>], node: usize, layers: usize) -> Result<Patch> {
        if node >= self.n_vertices() {
            return Err(Error::InvalidArgument(format!(
                "node {node} out of range ({} vertices)",
                self.n_vertices()
            )));
        }
        let start = v2e[node].iter().copied().collect();
        Ok(self.grow_patch(v2e, start, PatchCenter::Node(node), layers))
    }

    /// Element patch: `e` enlarged by `layers` rings of vertex-adjacent elements.
    pub fn element_patch(&self, e: usize, layers: usize) -> Result<Patch> {
        let v2e = self.vertex_elements();
        self.element_patch_with(&v2e, e, layers)
    }

    pub(crate) fn element_patch_with(&self, v2e: &[Vec<usize>], e: usize, layers: usize) -> Result<Patch> {
        if e >= self.n_elements() {
            return Err(Error::InvalidArgument(format!(
                "element {e} out of range ({} elements)",
                self.n_elements()
            )));
        }
        Ok(self.grow_patch(v2e, [e].into_iter().collect(), PatchCenter::Element(e), layers))
    }

    fn grow_patch(&self, v2e: &[Vec<usize>], mut set: BTreeSet<usize>, center: PatchCenter, layers: usize) -> Patch {
        for _ in 0..layers {
            if set.len() == self.n_elements() {
                break;
            }
            let verts: BTreeSet<usize> = set.iter().flat_map(|&e| self.elements[e].iter().copied()).collect();
            let before = set.len();
            for v in verts {
                set.extend(v2e[v].iter().copied());
            }
            if set.len() == before {
                break;
            }
        }
        Patch {
            center,
            layers,
            elements: set.into_iter().collect(),
            fine_elements: Vec::new(),
        }
    }

    /// Writes the vertex and element tables as CSV.
    pub fn write_csv<W: Write>(&self, mut vertices: W, mut elements: W) -> std::io::Result<()> {
        let coords = ["x1", "x2", "x3"];
        writeln!(vertices, "vertex,{}", coords[..self.dim].join(","))?;
        for (v, x) in self.vertices.iter().enumerate() {
            let xs: Vec<String> = x[..self.dim].iter().map(|c| format!("{c:?}")).collect();
            writeln!(vertices, "{v},{}", xs.join(","))?;
        }
        let names: Vec<String> = (0..=self.dim).map(|k| format!("v{k}")).collect();
        writeln!(elements, "element,{}", names.join(","))?;
        for (e, el) in self.elements.iter().enumerate() {
            let vs: Vec<String> = el.iter().map(|v| v.to_string()).collect();
            writeln!(elements, "{e},{}", vs.join(","))?;
        }
        Ok(())
    }
}

/// Coarse element of `fine_element` for nested structured meshes, by integer
/// arithmetic on the element barycenter.
pub fn coarse_element_of(fine: &Mesh, fine_element: usize, coarse: &Mesh) -> Result<usize> {
    let ratio = refinement_ratio(fine, coarse)?;
    let b = fine.scaled_barycenter(fine_element);
    Ok(coarse.locate_scaled(b, ratio * (fine.dim + 1)))
}

fn refinement_ratio(fine: &Mesh, coarse: &Mesh) -> Result<usize> {
    if fine.dim != coarse.dim {
        return Err(Error::InvalidArgument(format!(
            "mesh dimensions differ: {} vs {}",
            fine.dim, coarse.dim
        )));
    }
    if fine.cells_per_side % coarse.cells_per_side != 0 {
        return Err(Error::NonNested {
            fine: fine.cells_per_side,
            coarse: coarse.cells_per_side,
        });
    }
    Ok(fine.cells_per_side / coarse.cells_per_side)
}

/// What a patch is grown from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum PatchCenter {
    Node(usize),
    Element(usize),
}

/// Element patch around a coarse vertex or element.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Patch {
    pub center: PatchCenter,
    pub layers: usize,
    /// Sorted coarse element indices.
    pub elements: Vec<usize>,
    /// Sorted fine element indices covered by `elements`.
    pub fine_elements: Vec<usize>,
}

/// A nested fine/coarse mesh pair with precomputed parent/child maps.
#[derive(Debug, Clone)]
pub struct Refinement<'m> {
    pub fine: &'m Mesh,
    pub coarse: &'m Mesh,
    ratio: usize,
    parent: Vec<usize>,
    children: Vec<Vec<usize>>,
    coarse_v2e: Vec<Vec<usize>>,
}

impl<'m> Refinement<'m> {
    pub fn new(fine: &'m Mesh, coarse: &'m Mesh) -> Result<Self> {
        let ratio = refinement_ratio(fine, coarse)?;
        let scale = ratio * (fine.dim + 1);
        let parent: Vec<usize> = (0..fine.n_elements())
            .map(|e| coarse.locate_scaled(fine.scaled_barycenter(e), scale))
            .collect();
        let mut children = vec![Vec::new(); coarse.n_elements()];
        for (e, &p) in parent.iter().enumerate() {
            children[p].push(e);
        }
        Ok(Self {
            fine,
            coarse,
            ratio,
            parent,
            children,
            coarse_v2e: coarse.vertex_elements(),
        })
    }

    pub fn ratio(&self) -> usize {
        self.ratio
    }

    pub fn parent(&self, fine_element: usize) -> usize {
        self.parent[fine_element]
    }

    pub fn children(&self, coarse_element: usize) -> &[usize] {
        &self.children[coarse_element]
    }

    pub fn coarse_vertex_elements(&self) -> &[Vec<usize>] {
        &self.coarse_v2e
    }

    /// Fine vertex coinciding with a coarse vertex.
    pub fn fine_vertex_of(&self, coarse_vertex: usize) -> usize {
        let g = self.coarse.grid_index(coarse_vertex);
        self.fine
            .vertex_at([g[0] * self.ratio, g[1] * self.ratio, g[2] * self.ratio])
    }

    /// Coarse element containing fine vertex `v`, and the barycentric
    /// coordinates of `v` in it.
    pub fn locate_fine_vertex(&self, v: usize, fine_v2e: &[Vec<usize>]) -> (usize, Vec<f64>) {
        let k = self.parent[fine_v2e[v][0]];
        (k, barycentric(self.coarse, k, self.fine.vertex(v)))
    }

    pub fn node_patch(&self, node: usize, layers: usize) -> Result<Patch> {
        let p = self.coarse.node_patch_with(&self.coarse_v2e, node, layers)?;
        Ok(self.with_fine_elements(p))
    }

    pub fn element_patch(&self, coarse_element: usize, layers: usize) -> Result<Patch> {
        let p = self
            .coarse
            .element_patch_with(&self.coarse_v2e, coarse_element, layers)?;
        Ok(self.with_fine_elements(p))
    }

    /// Patch covering the whole domain.
    pub fn global_patch(&self, center: PatchCenter) -> Patch {
        Patch {
            center,
            layers: usize::MAX,
            elements: (0..self.coarse.n_elements()).collect(),
            fine_elements: (0..self.fine.n_elements()).collect(),
        }
    }

    fn with_fine_elements(&self, mut p: Patch) -> Patch {
        let mut fine: Vec<usize> = p
            .elements
            .iter()
            .flat_map(|&k| self.children[k].iter().copied())
            .collect();
        fine.sort_unstable();
        p.fine_elements = fine;
        p
    }
}

/// Barycentric coordinates of `x` with respect to element `e`.
pub fn barycentric(mesh: &Mesh, e: usize, x: &[f64]) -> Vec<f64> {
    let geo = crate::fem::ElementGeometry::new(mesh, e);
    let x0 = mesh.vertex(mesh.element(e)[0]);
    let mut lam = vec![0.0; mesh.dim() + 1];
    for (i, g) in geo.grads.iter().enumerate().skip(1) {
        lam[i] = (0..mesh.dim()).map(|a| g[a] * (x[a] - x0[a])).sum();
    }
    lam[0] = 1.0 - lam[1..].iter().sum::<f64>();
    lam
}
