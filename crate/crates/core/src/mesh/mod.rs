//! Triangle meshes of the periodic unit cell `Y = (0,1)^2`.
//!
//! A [`UnitCellMesh`] is an ordinary conforming triangulation of the closed
//! unit square whose boundary traces match: every vertex on `x = 1` has a
//! partner on `x = 0` at the same height, and likewise for `y = 1`/`y = 0`.
//! The partners are recorded as `(slave, master)` pairs where the master is
//! always a vertex that is not itself a slave, so the four corners collapse
//! onto the origin corner.

pub mod io;
mod locate;

pub use locate::PointLocator;

use std::collections::HashMap;

use crate::error::{Error, Result};
use crate::linalg::{self, Point, Sym2};

/// Coordinate tolerance used for periodic matching and boundary detection.
pub const PERIODIC_TOL: f64 = 1e-9;

/// Area of the reference element, the equilateral triangle inscribed in the
/// unit circle.
pub const REFERENCE_AREA: f64 = 1.299_038_105_676_658; // 3 sqrt(3) / 4

/// Vertices of the reference element, counter-clockwise.
const REFERENCE_VERTICES: [Point; 3] = [
    [1.0, 0.0],
    [-0.5, 0.866_025_403_784_438_6],
    [-0.5, -0.866_025_403_784_438_6],
];

#[derive(Debug, Clone)]
pub struct UnitCellMesh {
    vertices: Vec<Point>,
    triangles: Vec<[usize; 3]>,
    periodic_pairs: Vec<(usize, usize)>,
    corner_group: [usize; 4],
    master: Vec<usize>,
    vertex_triangles: Vec<Vec<usize>>,
}

/// Anisotropic description of one triangle: the semi-axes of its
/// circumscribed ellipse obtained through the affine map from the reference
/// element.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ElementGeometry {
    pub area: f64,
    /// `lambda[0] >= lambda[1] > 0`.
    pub lambda: [f64; 2],
    /// Unit directions associated with `lambda`, mutually orthogonal.
    pub directions: [Point; 2],
}

impl ElementGeometry {
    pub fn aspect_ratio(&self) -> f64 {
        self.lambda[0] / self.lambda[1]
    }

    /// Metric tensor `R diag(lambda^-2) R^T` whose unit ball is the
    /// circumscribed ellipse.
    pub fn metric(&self) -> Sym2 {
        Sym2::from_eigen(
            self.lambda[0].powi(-2),
            self.lambda[1].powi(-2),
            self.directions[0],
        )
    }
}

/// Which sides of the unit square a coordinate lies on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct BoundaryFlags {
    pub left: bool,
    pub right: bool,
    pub bottom: bool,
    pub top: bool,
}

impl BoundaryFlags {
    pub fn of(p: Point) -> Self {
        Self {
            left: p[0].abs() <= PERIODIC_TOL,
            right: (p[0] - 1.0).abs() <= PERIODIC_TOL,
            bottom: p[1].abs() <= PERIODIC_TOL,
            top: (p[1] - 1.0).abs() <= PERIODIC_TOL,
        }
    }

    pub fn any(&self) -> bool {
        self.left || self.right || self.bottom || self.top
    }
}

impl UnitCellMesh {
    /// Builds and validates a mesh, reconstructing the periodic pairing from
    /// the boundary coordinates.
    pub fn new(vertices: Vec<Point>, triangles: Vec<[usize; 3]>) -> Result<Self> {
        let nv = vertices.len();
        if nv < 3 || triangles.is_empty() {
            return Err(Error::InvalidArgument(format!(
                "mesh needs at least 3 vertices and one triangle, got {nv} and {}",
                triangles.len()
            )));
        }
        for (k, t) in triangles.iter().enumerate() {
            if t.iter().any(|&v| v >= nv) {
                return Err(Error::MeshIntegrity(format!(
                    "triangle {k} references a vertex out of range"
                )));
            }
        }
        let mut vertex_triangles = vec![Vec::new(); nv];
        for (k, t) in triangles.iter().enumerate() {
            for &v in t {
                vertex_triangles[v].push(k);
            }
        }
        let (periodic_pairs, master, corner_group) = build_periodic_pairs(&vertices)?;
        let mesh = Self {
            vertices,
            triangles,
            periodic_pairs,
            corner_group,
            master,
            vertex_triangles,
        };
        mesh.validate()?;
        Ok(mesh)
    }

    /// Structured `n x n` mesh: each square cell is split along its
    /// bottom-left to top-right diagonal.
    pub fn structured(n: usize) -> Result<Self> {
        if n == 0 {
            return Err(Error::InvalidArgument(
                "structured mesh needs at least one subdivision per side".into(),
            ));
        }
        let stride = n + 1;
        let mut vertices = Vec::with_capacity(stride * stride);
        for j in 0..=n {
            for i in 0..=n {
                vertices.push([i as f64 / n as f64, j as f64 / n as f64]);
            }
        }
        let mut triangles = Vec::with_capacity(2 * n * n);
        for j in 0..n {
            for i in 0..n {
                let v00 = j * stride + i;
                let v10 = v00 + 1;
                let v01 = v00 + stride;
                let v11 = v01 + 1;
                triangles.push([v00, v10, v11]);
                triangles.push([v00, v11, v01]);
            }
        }
        Self::new(vertices, triangles)
    }

    pub fn vertices(&self) -> &[Point] {
        &self.vertices
    }

    pub fn triangles(&self) -> &[[usize; 3]] {
        &self.triangles
    }

    pub fn periodic_pairs(&self) -> &[(usize, usize)] {
        &self.periodic_pairs
    }

    /// The four corner vertices, origin corner first.
    pub fn corner_group(&self) -> [usize; 4] {
        self.corner_group
    }

    pub fn num_vertices(&self) -> usize {
        self.vertices.len()
    }

    pub fn num_triangles(&self) -> usize {
        self.triangles.len()
    }

    /// The master vertex every vertex is identified with (itself for
    /// non-slaves).
    pub fn master_of(&self, v: usize) -> usize {
        self.master[v]
    }

    /// Triangles incident to vertex `v`.
    pub fn vertex_triangles(&self, v: usize) -> &[usize] {
        &self.vertex_triangles[v]
    }

    pub fn triangle_points(&self, k: usize) -> [Point; 3] {
        let t = self.triangles[k];
        [self.vertices[t[0]], self.vertices[t[1]], self.vertices[t[2]]]
    }

    pub fn signed_area(&self, k: usize) -> f64 {
        let [a, b, c] = self.triangle_points(k);
        linalg::signed_area(a, b, c)
    }

    pub fn area(&self, k: usize) -> f64 {
        self.signed_area(k)
    }

    pub fn total_area(&self) -> f64 {
        (0..self.triangles.len()).map(|k| self.area(k)).sum()
    }

    pub fn centroid(&self, k: usize) -> Point {
        let [a, b, c] = self.triangle_points(k);
        [(a[0] + b[0] + c[0]) / 3.0, (a[1] + b[1] + c[1]) / 3.0]
    }

    /// Gradients of the three barycentric (P1 hat) functions of triangle `k`
    /// together with its area.
    pub fn p1_gradients(&self, k: usize) -> ([Point; 3], f64) {
        let [a, b, c] = self.triangle_points(k);
        let area = linalg::signed_area(a, b, c);
        let inv = 0.5 / area;
        // grad(phi_i) = perp(opposite edge) / (2 area), pointing inwards.
        let g0 = [(b[1] - c[1]) * inv, (c[0] - b[0]) * inv];
        let g1 = [(c[1] - a[1]) * inv, (a[0] - c[0]) * inv];
        let g2 = [(a[1] - b[1]) * inv, (b[0] - a[0]) * inv];
        ([g0, g1, g2], area)
    }

    /// Gradient of the P1 interpolant of nodal `values` on triangle `k`.
    pub fn gradient(&self, k: usize, values: &[f64]) -> Point {
        let (g, _) = self.p1_gradients(k);
        let t = self.triangles[k];
        let mut out = [0.0; 2];
        for i in 0..3 {
            out[0] += values[t[i]] * g[i][0];
            out[1] += values[t[i]] * g[i][1];
        }
        out
    }

    /// Lumped (one third of incident triangle areas) vertex areas.
    pub fn lumped_areas(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.vertices.len()];
        for (k, t) in self.triangles.iter().enumerate() {
            let a = self.area(k) / 3.0;
            for &v in t {
                out[v] += a;
            }
        }
        out
    }

    /// Map from vertices to periodic degrees of freedom, numbered by
    /// increasing master index. Returns the map and the number of dofs.
    pub fn periodic_dofs(&self) -> (Vec<usize>, usize) {
        let mut dof_of_master = vec![usize::MAX; self.vertices.len()];
        let mut count = 0;
        for v in 0..self.vertices.len() {
            if self.master[v] == v {
                dof_of_master[v] = count;
                count += 1;
            }
        }
        let map = (0..self.vertices.len())
            .map(|v| dof_of_master[self.master[v]])
            .collect();
        (map, count)
    }

    /// Element anisotropy of triangle `k`.
    pub fn element_anisotropy(&self, k: usize) -> Result<ElementGeometry> {
        let p = self.triangle_points(k);
        element_anisotropy(p).map_err(|e| match e {
            Error::DegenerateElement { area, .. } => Error::DegenerateElement { element: k, area },
            other => other,
        })
    }

    /// Element anisotropy of every triangle.
    pub fn element_geometry(&self) -> Result<Vec<ElementGeometry>> {
        (0..self.triangles.len())
            .map(|k| self.element_anisotropy(k))
            .collect()
    }

    /// Patch of triangle `k`: every triangle sharing at least one vertex
    /// with it, `k` included, sorted. Patches do not wrap across the
    /// periodic boundary.
    pub fn patch(&self, k: usize) -> Vec<usize> {
        let mut out: Vec<usize> = self.triangles[k]
            .iter()
            .flat_map(|&v| self.vertex_triangles[v].iter().copied())
            .collect();
        out.sort_unstable();
        out.dedup();
        out
    }

    /// Checks every structural invariant of the mesh.
    pub fn validate(&self) -> Result<()> {
        for (v, p) in self.vertices.iter().enumerate() {
            let ok = p.iter().all(|c| c.is_finite() && *c >= -PERIODIC_TOL && *c <= 1.0 + PERIODIC_TOL);
            if !ok {
                return Err(Error::MeshIntegrity(format!(
                    "vertex {v} at {p:?} lies outside the unit cell"
                )));
            }
            if self.vertex_triangles[v].is_empty() {
                return Err(Error::MeshIntegrity(format!("vertex {v} has no incident triangle")));
            }
        }
        for k in 0..self.triangles.len() {
            let area = self.signed_area(k);
            if !(area > 0.0) {
                return Err(Error::DegenerateElement { element: k, area });
            }
        }
        let mut edges: HashMap<(usize, usize), u32> = HashMap::new();
        for t in &self.triangles {
            for i in 0..3 {
                let (a, b) = (t[i], t[(i + 1) % 3]);
                *edges.entry((a.min(b), a.max(b))).or_default() += 1;
            }
        }
        for (&(a, b), &count) in &edges {
            match count {
                2 => {}
                1 => {
                    let fa = BoundaryFlags::of(self.vertices[a]);
                    let fb = BoundaryFlags::of(self.vertices[b]);
                    let on_side = (fa.left && fb.left)
                        || (fa.right && fb.right)
                        || (fa.bottom && fb.bottom)
                        || (fa.top && fb.top);
                    if !on_side {
                        return Err(Error::MeshIntegrity(format!(
                            "edge ({a}, {b}) has a single triangle but is not on the boundary"
                        )));
                    }
                }
                _ => {
                    return Err(Error::MeshIntegrity(format!(
                        "edge ({a}, {b}) is shared by {count} triangles"
                    )))
                }
            }
        }
        let total = self.total_area();
        if (total - 1.0).abs() > 1e-9 {
            return Err(Error::MeshIntegrity(format!(
                "triangles cover an area of {total}, expected 1"
            )));
        }
        for &(s, m) in &self.periodic_pairs {
            let (ps, pm) = (self.vertices[s], self.vertices[m]);
            for c in 0..2 {
                let d = ps[c] - pm[c];
                if (d - d.round()).abs() > PERIODIC_TOL {
                    return Err(Error::MeshIntegrity(format!(
                        "periodic pair ({s}, {m}) does not match modulo 1"
                    )));
                }
            }
        }
        Ok(())
    }
}

/// Anisotropy of the triangle with counter-clockwise vertices `p`, through
/// the singular value decomposition of the Jacobian of the affine map from
/// the reference element.
pub fn element_anisotropy(p: [Point; 3]) -> Result<ElementGeometry> {
    let area = linalg::signed_area(p[0], p[1], p[2]);
    let scale = linalg::norm(linalg::sub(p[1], p[0]))
        .max(linalg::norm(linalg::sub(p[2], p[0])))
        .powi(2);
    if !(area.abs() > 1e-14 * scale) || !area.is_finite() {
        return Err(Error::DegenerateElement { element: usize::MAX, area });
    }
    let jac = affine_jacobian(p);
    // J J^T = R diag(lambda^2) R^T.
    let jjt = Sym2::new(
        jac[0][0] * jac[0][0] + jac[0][1] * jac[0][1],
        jac[0][0] * jac[1][0] + jac[0][1] * jac[1][1],
        jac[1][0] * jac[1][0] + jac[1][1] * jac[1][1],
    );
    let e = jjt.eigen();
    let det = (jac[0][0] * jac[1][1] - jac[0][1] * jac[1][0]).abs();
    let l0 = e.values[0].max(0.0).sqrt();
    // The product of the singular values is |det J|; recovering the small one
    // from it avoids cancellation for stretched elements.
    let l1 = det / l0;
    Ok(ElementGeometry {
        area: area.abs(),
        lambda: [l0, l1],
        directions: e.vectors,
    })
}

/// Jacobian (row-major) of the affine map taking the reference element onto
/// the triangle `p` (vertex i of the reference onto vertex i of `p`).
pub fn affine_jacobian(p: [Point; 3]) -> [[f64; 2]; 2] {
    let q = REFERENCE_VERTICES;
    let e1 = linalg::sub(p[1], p[0]);
    let e2 = linalg::sub(p[2], p[0]);
    let f1 = linalg::sub(q[1], q[0]);
    let f2 = linalg::sub(q[2], q[0]);
    // J [f1 f2] = [e1 e2]  =>  J = [e1 e2] [f1 f2]^-1.
    let det_f = f1[0] * f2[1] - f2[0] * f1[1];
    let inv = [[f2[1] / det_f, -f2[0] / det_f], [-f1[1] / det_f, f1[0] / det_f]];
    let mut j = [[0.0; 2]; 2];
    for r in 0..2 {
        let row = [e1[r], e2[r]];
        for c in 0..2 {
            j[r][c] = row[0] * inv[0][c] + row[1] * inv[1][c];
        }
    }
    j
}

type PeriodicPairing = (Vec<(usize, usize)>, Vec<usize>, [usize; 4]);

fn build_periodic_pairs(vertices: &[Point]) -> Result<PeriodicPairing> {
    let nv = vertices.len();
    let flags: Vec<BoundaryFlags> = vertices.iter().map(|&p| BoundaryFlags::of(p)).collect();
    let mut direct = vec![usize::MAX; nv];

    // (side to match, partner side, coordinate along the side)
    for (axis, along) in [(0usize, 1usize), (1, 0)] {
        let is_low = |f: &BoundaryFlags| if axis == 0 { f.left } else { f.bottom };
        let is_high = |f: &BoundaryFlags| if axis == 0 { f.right } else { f.top };
        let mut low: Vec<(f64, usize)> = (0..nv)
            .filter(|&v| is_low(&flags[v]))
            .map(|v| (vertices[v][along], v))
            .collect();
        low.sort_by(|a, b| a.0.total_cmp(&b.0));
        let high: Vec<usize> = (0..nv).filter(|&v| is_high(&flags[v])).collect();
        if low.len() != high.len() {
            return Err(Error::MeshIntegrity(format!(
                "boundary traces do not match: {} vertices on the low side, {} on the high side of axis {axis}",
                low.len(),
                high.len()
            )));
        }
        let mut used = vec![false; low.len()];
        for &v in &high {
            let y = vertices[v][along];
            let idx = low.partition_point(|(c, _)| *c < y - PERIODIC_TOL);
            let hit = low[idx..]
                .iter()
                .enumerate()
                .take_while(|(_, (c, _))| *c <= y + PERIODIC_TOL)
                .find(|(i, _)| !used[idx + i]);
            match hit {
                Some((i, &(_, m))) => {
                    used[idx + i] = true;
                    if direct[v] == usize::MAX {
                        direct[v] = m;
                    }
                }
                None => {
                    return Err(Error::MeshIntegrity(format!(
                        "boundary vertex {v} at {:?} has no periodic partner",
                        vertices[v]
                    )))
                }
            }
        }
    }

    let mut master: Vec<usize> = (0..nv).collect();
    for v in 0..nv {
        let mut m = v;
        let mut guard = 0;
        while direct[m] != usize::MAX {
            m = direct[m];
            guard += 1;
            if guard > 4 {
                return Err(Error::MeshIntegrity("cyclic periodic pairing".into()));
            }
        }
        master[v] = m;
    }
    let pairs = (0..nv).filter(|&v| master[v] != v).map(|v| (v, master[v])).collect();

    let find_corner = |c: Point| -> Result<usize> {
        (0..nv)
            .find(|&v| {
                (vertices[v][0] - c[0]).abs() <= PERIODIC_TOL
                    && (vertices[v][1] - c[1]).abs() <= PERIODIC_TOL
            })
            .ok_or_else(|| Error::MeshIntegrity(format!("no vertex at corner {c:?}")))
    };
    let corners = [
        find_corner([0.0, 0.0])?,
        find_corner([1.0, 0.0])?,
        find_corner([0.0, 1.0])?,
        find_corner([1.0, 1.0])?,
    ];
    Ok((pairs, master, corners))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn smallest_structured_mesh() {
        let m = UnitCellMesh::structured(1).unwrap();
        assert_eq!(m.num_vertices(), 4);
        assert_eq!(m.num_triangles(), 2);
        assert_eq!(m.periodic_pairs().len(), 3);
        assert!(m.periodic_pairs().iter().all(|&(_, master)| master == 0));
        assert_eq!(m.corner_group()[0], 0);
    }

    #[test]
    fn structured_counts() {
        let m = UnitCellMesh::structured(30).unwrap();
        assert_eq!(m.num_vertices(), 961);
        assert_eq!(m.num_triangles(), 1800);
        let (_, ndof) = m.periodic_dofs();
        assert_eq!(ndof, 900);
        assert_eq!(m.periodic_pairs().len(), 61);
    }

    #[test]
    fn structured_area_is_one() {
        let m = UnitCellMesh::structured(4).unwrap();
        assert_eq!(m.total_area(), 1.0);
    }

    #[test]
    fn zero_subdivisions_rejected() {
        assert!(matches!(UnitCellMesh::structured(0), Err(Error::InvalidArgument(_))));
    }

    #[test]
    fn equilateral_is_isotropic() {
        let s = 3f64.sqrt() / 2.0;
        let g = element_anisotropy([[0.0, 0.0], [1.0, 0.0], [0.5, s]]).unwrap();
        assert!((g.lambda[0] - g.lambda[1]).abs() < 1e-12);
        assert!((g.lambda[0] * g.lambda[1] * REFERENCE_AREA - g.area).abs() < 1e-14);
        let r = g.directions;
        assert!(linalg::dot(r[0], r[1]).abs() < 1e-15);
    }

    #[test]
    fn degenerate_triangle_rejected() {
        let e = element_anisotropy([[0.0, 0.0], [1.0, 0.0], [2.0, 0.0]]);
        assert!(matches!(e, Err(Error::DegenerateElement { .. })));
    }

    #[test]
    fn mismatched_traces_rejected() {
        // Extra vertex on x = 1 without a partner on x = 0.
        let vertices = vec![[0.0, 0.0], [1.0, 0.0], [1.0, 0.5], [1.0, 1.0], [0.0, 1.0]];
        let triangles = vec![[0, 1, 2], [0, 2, 4], [2, 3, 4]];
        assert!(matches!(
            UnitCellMesh::new(vertices, triangles),
            Err(Error::MeshIntegrity(_))
        ));
    }

    #[test]
    fn hanging_vertex_rejected() {
        // Vertex 4 splits the diagonal of one triangle only.
        let vertices = vec![[0.0, 0.0], [1.0, 0.0], [1.0, 1.0], [0.0, 1.0], [0.5, 0.5]];
        let triangles = vec![[0, 1, 4], [1, 2, 4], [0, 2, 3]];
        assert!(UnitCellMesh::new(vertices, triangles).is_err());
    }

    #[test]
    fn patch_of_two_triangle_mesh() {
        let m = UnitCellMesh::structured(1).unwrap();
        assert_eq!(m.patch(0), vec![0, 1]);
        assert_eq!(m.patch(1), vec![0, 1]);
    }

    #[test]
    fn p1_gradients_reproduce_linear_field() {
        let m = UnitCellMesh::structured(3).unwrap();
        let f: Vec<f64> = m.vertices().iter().map(|p| 0.2 + 1.5 * p[0] - 0.7 * p[1]).collect();
        for k in 0..m.num_triangles() {
            let g = m.gradient(k, &f);
            assert!((g[0] - 1.5).abs() < 1e-12 && (g[1] + 0.7).abs() < 1e-12);
        }
    }
}
