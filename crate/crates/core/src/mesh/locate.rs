use super::UnitCellMesh;
use crate::linalg::{self, Point};

/// Bucket-grid point location in a [`UnitCellMesh`].
///
/// Queries are wrapped into the unit cell first, so any point of the plane
/// can be located in the periodic extension of the mesh.
#[derive(Debug, Clone)]
pub struct PointLocator<'a> {
    mesh: &'a UnitCellMesh,
    cells: usize,
    buckets: Vec<Vec<usize>>,
}

impl<'a> PointLocator<'a> {
    pub fn new(mesh: &'a UnitCellMesh) -> Self {
        let cells = ((mesh.num_triangles() as f64 / 2.0).sqrt().ceil() as usize).clamp(1, 512);
        let mut buckets = vec![Vec::new(); cells * cells];
        let to_cell = |c: f64| ((c * cells as f64).floor().max(0.0) as usize).min(cells - 1);
        for k in 0..mesh.num_triangles() {
            let p = mesh.triangle_points(k);
            let (mut lo, mut hi) = ([f64::MAX; 2], [f64::MIN; 2]);
            for q in p {
                for c in 0..2 {
                    lo[c] = lo[c].min(q[c]);
                    hi[c] = hi[c].max(q[c]);
                }
            }
            for j in to_cell(lo[1] - 1e-12)..=to_cell(hi[1] + 1e-12) {
                for i in to_cell(lo[0] - 1e-12)..=to_cell(hi[0] + 1e-12) {
                    buckets[j * cells + i].push(k);
                }
            }
        }
        Self { mesh, cells, buckets }
    }

    /// Triangle containing `p` and the barycentric coordinates of `p` in it.
    /// Points outside every triangle (round-off at edges) are attributed to
    /// the nearest candidate, with barycentrics clipped onto it.
    pub fn locate(&self, p: Point) -> (usize, [f64; 3]) {
        let q = wrap(p);
        let n = self.cells;
        let ci = ((q[0] * n as f64).floor() as usize).min(n - 1);
        let cj = ((q[1] * n as f64).floor() as usize).min(n - 1);
        let mut best = (usize::MAX, f64::NEG_INFINITY, [0.0; 3]);
        for radius in 0..n {
            let (i0, i1) = (ci.saturating_sub(radius), (ci + radius).min(n - 1));
            let (j0, j1) = (cj.saturating_sub(radius), (cj + radius).min(n - 1));
            for j in j0..=j1 {
                for i in i0..=i1 {
                    if radius > 0 && i > i0 && i < i1 && j > j0 && j < j1 {
                        continue;
                    }
                    for &k in &self.buckets[j * n + i] {
                        let b = barycentric(self.mesh.triangle_points(k), q);
                        let worst = b[0].min(b[1]).min(b[2]);
                        if worst > best.1 {
                            best = (k, worst, b);
                        }
                    }
                }
            }
            if best.1 >= -1e-12 {
                break;
            }
        }
        let (k, _, b) = best;
        let clipped = b.map(|x| x.max(0.0));
        let s: f64 = clipped.iter().sum();
        (k, clipped.map(|x| x / s))
    }

    /// Linear interpolation of nodal `values` at `p`.
    pub fn interpolate(&self, values: &[f64], p: Point) -> f64 {
        let (k, b) = self.locate(p);
        let t = self.mesh.triangles()[k];
        b[0] * values[t[0]] + b[1] * values[t[1]] + b[2] * values[t[2]]
    }
}

/// Wraps a point into `[0, 1]^2`, leaving points already inside untouched.
pub(crate) fn wrap(p: Point) -> Point {
    p.map(|c| if (0.0..=1.0).contains(&c) { c } else { c - c.floor() })
}

pub(crate) fn barycentric(t: [Point; 3], p: Point) -> [f64; 3] {
    let area = linalg::signed_area(t[0], t[1], t[2]);
    let b0 = linalg::signed_area(p, t[1], t[2]) / area;
    let b1 = linalg::signed_area(t[0], p, t[2]) / area;
    [b0, b1, 1.0 - b0 - b1]
}
