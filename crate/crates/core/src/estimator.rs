//! Recovery-based anisotropic error estimation on the density.
//!
//! The recovered gradient `P` is the area-weighted average of the P1
//! gradient over the patch of each element; patches follow the periodic
//! identification, so elements touching the seam see their neighbours on
//! the opposite side. With `E = P - grad rho` and
//! `G_K = sum_{T in patch(K)} |T| E_T E_T^T`, the local estimator reads
//!
//! `eta_K^2 = (l1 l2)^-1 sum_i l_i^2 r_i^T G_K r_i`
//!
//! where `l_i`, `r_i` describe the anisotropy of `K`. The optimal metric
//! equidistributes `eta_K^2 = TOL^2 / #T`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{Point, Sym2};
use crate::mesh::{ElementGeometry, UnitCellMesh, REFERENCE_AREA};

/// Patches of every element, through the periodic identification.
pub fn periodic_patches(mesh: &UnitCellMesh) -> Vec<Vec<usize>> {
    let mut group = vec![Vec::new(); mesh.num_vertices()];
    for (k, t) in mesh.triangles().iter().enumerate() {
        for &v in t {
            group[mesh.master_of(v)].push(k);
        }
    }
    mesh.triangles()
        .iter()
        .map(|t| {
            let mut p: Vec<usize> = t.iter().flat_map(|&v| group[mesh.master_of(v)].iter().copied()).collect();
            p.sort_unstable();
            p.dedup();
            p
        })
        .collect()
}

/// Elementwise recovered gradient.
pub fn recover_gradient(mesh: &UnitCellMesh, rho: &[f64]) -> Result<Vec<Point>> {
    check_len(mesh, rho)?;
    let grads: Vec<Point> = (0..mesh.num_triangles()).map(|k| mesh.gradient(k, rho)).collect();
    let areas: Vec<f64> = (0..mesh.num_triangles()).map(|k| mesh.area(k)).collect();
    Ok(periodic_patches(mesh)
        .iter()
        .map(|patch| {
            let (mut s, mut a) = ([0.0; 2], 0.0);
            for &t in patch {
                s[0] += areas[t] * grads[t][0];
                s[1] += areas[t] * grads[t][1];
                a += areas[t];
            }
            [s[0] / a, s[1] / a]
        })
        .collect())
}

fn check_len(mesh: &UnitCellMesh, rho: &[f64]) -> Result<()> {
    if rho.len() != mesh.num_vertices() {
        return Err(Error::InvalidArgument(format!(
            "{} nodal values for {} vertices",
            rho.len(),
            mesh.num_vertices()
        )));
    }
    Ok(())
}

/// Recovered-error matrix of one patch.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PatchMatrix {
    /// `sum |T| E_T E_T^T` over the patch.
    pub g: Sym2,
    /// Patch area `|patch(K)|`.
    pub area: f64,
}

/// Patch matrices of every element.
pub fn patch_matrices(mesh: &UnitCellMesh, rho: &[f64]) -> Result<Vec<PatchMatrix>> {
    let rec = recover_gradient(mesh, rho)?;
    let err: Vec<Point> = (0..mesh.num_triangles())
        .map(|k| {
            let g = mesh.gradient(k, rho);
            [rec[k][0] - g[0], rec[k][1] - g[1]]
        })
        .collect();
    let areas: Vec<f64> = (0..mesh.num_triangles()).map(|k| mesh.area(k)).collect();
    Ok(periodic_patches(mesh)
        .iter()
        .map(|patch| {
            let mut g = Sym2::ZERO;
            let mut a = 0.0;
            for &t in patch {
                g = g.plus(&Sym2::outer(err[t]).scaled(areas[t]));
                a += areas[t];
            }
            PatchMatrix { g, area: a }
        })
        .collect())
}

/// Local estimator contributions and their total.
#[derive(Debug, Clone, PartialEq)]
pub struct Estimate {
    /// `eta_K^2` per element.
    pub local: Vec<f64>,
    /// `eta^2 = sum eta_K^2`.
    pub total: f64,
}

impl Estimate {
    /// Ratio of the largest to the smallest local contribution.
    pub fn spread(&self) -> f64 {
        let max = self.local.iter().copied().fold(0.0, f64::max);
        let min = self.local.iter().copied().fold(f64::INFINITY, f64::min);
        max / min
    }
}

/// `(l1 l2)^-1 sum_i l_i^2 r_i^T G r_i` for one element.
pub fn element_estimator(geom: &ElementGeometry, g: &Sym2) -> f64 {
    let [l1, l2] = geom.lambda;
    (l1 * l1 * g.quad(geom.directions[0]) + l2 * l2 * g.quad(geom.directions[1])) / (l1 * l2)
}

/// Anisotropic recovery-based estimator of the P1 density `rho`.
pub fn local_estimator(mesh: &UnitCellMesh, rho: &[f64]) -> Result<Estimate> {
    let patches = patch_matrices(mesh, rho)?;
    let geom = mesh.element_geometry()?;
    let local: Vec<f64> = geom
        .iter()
        .zip(&patches)
        .map(|(geo, p)| element_estimator(geo, &p.g))
        .collect();
    let total = local.iter().sum();
    Ok(Estimate { local, total })
}

/// Bounds applied when turning patch matrices into target sizes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricParams {
    pub max_aspect_ratio: f64,
    pub h_min: f64,
    pub h_max: f64,
}

impl Default for MetricParams {
    fn default() -> Self {
        Self { max_aspect_ratio: 100.0, h_min: 1e-3, h_max: 0.5 }
    }
}

impl MetricParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.max_aspect_ratio >= 1.0 && self.h_min > 0.0 && self.h_min <= self.h_max) {
            return Err(Error::InvalidArgument(format!("invalid metric bounds {self:?}")));
        }
        Ok(())
    }
}

/// Target anisotropy of one element.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ElementMetric {
    /// Target lengths; `lambda[0]` is measured along `direction`.
    pub lambda: [f64; 2],
    /// Unit direction of `lambda[0]`; the second direction is orthogonal.
    pub direction: Point,
    /// Whether an eigenvalue floor or a length clamp changed the optimum.
    pub regularized: bool,
}

impl ElementMetric {
    /// `R diag(lambda^-2) R^T`.
    pub fn tensor(&self) -> Sym2 {
        Sym2::from_eigen(self.lambda[0].powi(-2), self.lambda[1].powi(-2), self.direction)
    }

    pub fn aspect_ratio(&self) -> f64 {
        self.lambda[0].max(self.lambda[1]) / self.lambda[0].min(self.lambda[1])
    }

    /// Area of an element of the adapted mesh matching this metric.
    pub fn target_area(&self) -> f64 {
        self.lambda[0] * self.lambda[1] * REFERENCE_AREA
    }
}

/// Optimal lengths for the scaled patch matrix `g_hat = G / |patch|`,
/// pulled-back patch area `delta_hat`, tolerance `tol` and `num_elements`.
pub fn metric_from_patch(
    g_hat: &Sym2,
    delta_hat: f64,
    tol: f64,
    num_elements: usize,
    params: &MetricParams,
) -> ElementMetric {
    let eig = g_hat.eigen();
    let g1 = eig.values[0].max(0.0);
    let floor = (g1 / (params.max_aspect_ratio * params.max_aspect_ratio)).max(1e-14 * g1 + 1e-30);
    let mut regularized = false;
    let g2 = if eig.values[1] < floor {
        regularized = true;
        floor
    } else {
        eig.values[1]
    };
    let g1 = g1.max(g2);
    let c = (tol * tol / (2.0 * num_elements as f64 * delta_hat)).sqrt();
    let raw = [c / g2.sqrt(), c / g1.sqrt()];
    let lambda = raw.map(|l| l.clamp(params.h_min, params.h_max));
    if lambda != raw {
        regularized = true;
    }
    ElementMetric { lambda, direction: eig.vectors[1], regularized }
}

/// `|delta_hat| sum_i l_i^2 r_i^T g_hat r_i`, the estimator an element with
/// metric `m` would carry.
pub fn predicted_estimator(m: &ElementMetric, g_hat: &Sym2, delta_hat: f64) -> f64 {
    let r2 = crate::linalg::perp(m.direction);
    delta_hat * (m.lambda[0].powi(2) * g_hat.quad(m.direction) + m.lambda[1].powi(2) * g_hat.quad(r2))
}

/// `g_hat` and `delta_hat` of every element.
pub fn scaled_patches(mesh: &UnitCellMesh, patches: &[PatchMatrix]) -> Result<Vec<(Sym2, f64)>> {
    if patches.len() != mesh.num_triangles() {
        return Err(Error::InvalidArgument("one patch matrix per element required".into()));
    }
    let geom = mesh.element_geometry()?;
    patches
        .iter()
        .zip(&geom)
        .map(|(p, geo)| {
            let g = &p.g;
            if !g.is_finite() || g.xx < 0.0 || g.yy < 0.0 || g.det() < -1e-12 * g.trace().powi(2) {
                return Err(Error::InvalidArgument("patch matrix is not positive semi-definite".into()));
            }
            Ok((g.scaled(1.0 / p.area), p.area / (geo.lambda[0] * geo.lambda[1])))
        })
        .collect()
}

/// Optimal metric for every element of `mesh`.
pub fn compute_metric(
    mesh: &UnitCellMesh,
    patches: &[PatchMatrix],
    tol: f64,
    params: &MetricParams,
) -> Result<Vec<ElementMetric>> {
    params.validate()?;
    if !(tol > 0.0) {
        return Err(Error::InvalidArgument(format!("tolerance must be positive, got {tol}")));
    }
    let nt = mesh.num_triangles();
    Ok(scaled_patches(mesh, patches)?
        .iter()
        .map(|(g, d)| metric_from_patch(g, *d, tol, nt, params))
        .collect())
}

/// Expected element count of a mesh conforming to `metrics` defined on
/// the elements of `mesh`.
pub fn predicted_count(mesh: &UnitCellMesh, metrics: &[ElementMetric]) -> f64 {
    metrics
        .iter()
        .enumerate()
        .map(|(k, m)| mesh.area(k) / m.target_area())
        .sum()
}

/// Scales all target lengths uniformly so that the predicted element count
/// does not exceed `max_elements`, re-applying the length clamps. Returns
/// the applied scale factor (1 when no limiting was needed).
pub fn limit_complexity(
    mesh: &UnitCellMesh,
    metrics: &mut [ElementMetric],
    max_elements: f64,
    params: &MetricParams,
) -> f64 {
    let base: Vec<[f64; 2]> = metrics.iter().map(|m| m.lambda).collect();
    let count_at = |s: f64, metrics: &mut [ElementMetric]| {
        for (m, b) in metrics.iter_mut().zip(&base) {
            m.lambda = b.map(|l| (l * s).clamp(params.h_min, params.h_max));
        }
        predicted_count(mesh, metrics)
    };
    if count_at(1.0, metrics) <= max_elements {
        return 1.0;
    }
    // The count is non-increasing in the scale; bracket and bisect.
    let (mut lo, mut hi) = (1.0, 2.0);
    while count_at(hi, metrics) > max_elements && hi < 1e12 {
        lo = hi;
        hi *= 2.0;
    }
    for _ in 0..60 {
        let mid = 0.5 * (lo + hi);
        if count_at(mid, metrics) > max_elements {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    count_at(hi, metrics);
    hi
}

/// Vertex metrics: arithmetic mean of the element tensors over the
/// elements incident to the vertex and to every vertex identified with it.
pub fn vertex_metric(mesh: &UnitCellMesh, metrics: &[ElementMetric]) -> Result<Vec<Sym2>> {
    if metrics.len() != mesh.num_triangles() {
        return Err(Error::InvalidArgument("one metric per element required".into()));
    }
    let mut sum = vec![Sym2::ZERO; mesh.num_vertices()];
    let mut count = vec![0usize; mesh.num_vertices()];
    for (k, t) in mesh.triangles().iter().enumerate() {
        let m = metrics[k].tensor();
        for &v in t {
            let r = mesh.master_of(v);
            sum[r] = sum[r].plus(&m);
            count[r] += 1;
        }
    }
    (0..mesh.num_vertices())
        .map(|v| {
            let r = mesh.master_of(v);
            if count[r] == 0 {
                return Err(Error::MeshIntegrity(format!("vertex {v} has no incident element")));
            }
            Ok(sum[r].scaled(1.0 / count[r] as f64))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn direct_substitution() {
        let g = Sym2::new(4.0, 0.0, 1.0);
        let m = metric_from_patch(&g, 1.0, 1.0, 2, &MetricParams { h_min: 1e-6, ..Default::default() });
        assert!((m.lambda[0] - 0.5).abs() < 1e-15);
        assert!((m.lambda[1] - 0.25).abs() < 1e-15);
        assert!((m.aspect_ratio() - 2.0).abs() < 1e-12);
        assert!(m.direction[1].abs() > 0.999_999);
        assert!(!m.regularized);
    }

    #[test]
    fn zero_error_is_regularized() {
        let m = metric_from_patch(&Sym2::ZERO, 1.0, 1e-3, 100, &MetricParams::default());
        assert!(m.regularized);
        assert_eq!(m.lambda, [0.5, 0.5]);
    }

    #[test]
    fn limiter_caps_count() {
        let mesh = UnitCellMesh::structured(4).unwrap();
        let params = MetricParams::default();
        let mut ms = vec![
            ElementMetric { lambda: [0.002, 0.002], direction: [1.0, 0.0], regularized: false };
            mesh.num_triangles()
        ];
        let s = limit_complexity(&mesh, &mut ms, 500.0, &params);
        assert!(s > 1.0);
        let c = predicted_count(&mesh, &ms);
        assert!(c <= 500.0 && c > 499.0, "{c}");
    }
}
