//! Metric-driven adaptation of periodic unit-cell meshes.
//!
//! [`adapt_mesh`] remeshes the cell with local operations (edge split and
//! collapse, flips, smoothing) until edges have unit length in the target
//! metric, then transfers the density by linear interpolation. In hybrid
//! mode the metric is replaced by an isotropic one of size `h_iso` wherever
//! the density exceeds `rho_th`.

mod torus;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fem::DensityField;
use crate::linalg::{Point, Sym2};
use crate::mesh::{PointLocator, UnitCellMesh};

use torus::{Background, Torus};

pub use torus::EDGE_CAP;

/// Band of metric edge lengths regarded as conforming.
pub const LENGTH_BAND: (f64, f64) = (std::f64::consts::FRAC_1_SQRT_2, std::f64::consts::SQRT_2);

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdaptParams {
    /// Hybrid mode: isotropic elements in full-material regions.
    pub hybrid: bool,
    pub rho_th: f64,
    pub h_iso: f64,
    /// Sweep limit of the local remesher.
    pub max_sweeps: usize,
    /// Fraction of edges in [`LENGTH_BAND`] below which the result is
    /// flagged.
    pub min_band_fraction: f64,
    /// Metrics predicting more elements than this are rejected.
    pub max_elements: usize,
}

impl Default for AdaptParams {
    fn default() -> Self {
        Self { hybrid: true, rho_th: 0.9, h_iso: 0.03, max_sweeps: 20, min_band_fraction: 0.9, max_elements: 1_000_000 }
    }
}

impl AdaptParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.rho_th > 0.0 && self.rho_th < 1.0) {
            return Err(Error::InvalidArgument(format!("rho_th must lie in (0, 1), got {}", self.rho_th)));
        }
        if !(self.h_iso > 0.0 && self.h_iso < 1.0) {
            return Err(Error::InvalidArgument(format!("h_iso must lie in (0, 1), got {}", self.h_iso)));
        }
        if self.max_sweeps == 0 {
            return Err(Error::InvalidArgument("max_sweeps must be positive".into()));
        }
        Ok(())
    }
}

/// Isotropic vertex metric whose elements have edges of length `h`.
pub fn isotropic_metric(h: f64) -> Sym2 {
    Sym2::identity().scaled(3.0 / (h * h))
}

/// Element count of a mesh conforming to the vertex `metric`, estimated by
/// integrating the metric density over `mesh`.
pub fn predicted_elements(mesh: &UnitCellMesh, metric: &[Sym2]) -> f64 {
    // a unit equilateral triangle in M / 3 has area sqrt(3)/4 / sqrt(det M / 9)
    let unit = 3f64.sqrt() / 4.0 * 3.0;
    mesh.triangles()
        .iter()
        .enumerate()
        .map(|(k, t)| {
            let m = metric[t[0]].plus(&metric[t[1]]).plus(&metric[t[2]]).scaled(1.0 / 3.0);
            mesh.area(k) * m.det().max(0.0).sqrt() / unit
        })
        .sum()
}

/// Result of one adaptation.
#[derive(Debug, Clone)]
pub struct Adapted {
    pub mesh: UnitCellMesh,
    pub rho: DensityField,
    /// Metric at the vertices of the new mesh.
    pub metric: Vec<Sym2>,
    /// Fraction of edges whose metric length lies in [`LENGTH_BAND`].
    pub band_fraction: f64,
    /// Set when the band fraction stayed below the target.
    pub warning: bool,
    pub sweeps: usize,
}

/// Remeshes `mesh` to conform to the vertex `metric` and transfers `rho`.
pub fn adapt_mesh(
    mesh: &UnitCellMesh,
    metric: &[Sym2],
    rho: &DensityField,
    params: &AdaptParams,
) -> Result<Adapted> {
    params.validate()?;
    rho.check_on(mesh)?;
    if metric.len() != mesh.num_vertices() {
        return Err(Error::InvalidArgument(format!(
            "{} metric tensors for {} vertices",
            metric.len(),
            mesh.num_vertices()
        )));
    }
    for (v, m) in metric.iter().enumerate() {
        if !(m.is_finite() && m.xx > 0.0 && m.det() > 0.0) {
            return Err(Error::InvalidArgument(format!("metric at vertex {v} is not positive definite")));
        }
    }
    let mut background_metric = metric.to_vec();
    if params.hybrid {
        let iso = isotropic_metric(params.h_iso);
        for (m, &r) in background_metric.iter_mut().zip(rho.values()) {
            if r > params.rho_th {
                *m = iso;
            }
        }
    }
    let predicted = predicted_elements(mesh, &background_metric);
    if predicted > params.max_elements as f64 {
        return Err(Error::Remesh(format!(
            "metric asks for about {predicted:.0} elements, above the limit of {}",
            params.max_elements
        )));
    }
    let bg = Background::new(mesh, background_metric);
    let mut torus = Torus::from_mesh(mesh, &bg)?;
    let (sweeps, stats) = torus.remesh(params.max_sweeps);
    let lengths = torus.edge_lengths();
    let in_band = lengths
        .iter()
        .filter(|&&l| l >= LENGTH_BAND.0 && l <= LENGTH_BAND.1)
        .count();
    let band_fraction = in_band as f64 / lengths.len().max(1) as f64;
    let (new_mesh, origin, new_metric) = torus.to_mesh()?;

    let locator = PointLocator::new(mesh);
    let rho_min = rho.rho_min();
    let mut torus_rho = std::collections::HashMap::new();
    let values: Vec<f64> = origin
        .iter()
        .map(|&v| {
            *torus_rho.entry(v).or_insert_with(|| {
                locator
                    .interpolate(rho.values(), torus.position(v))
                    .clamp(rho_min, 1.0)
            })
        })
        .collect();
    let warning = band_fraction < params.min_band_fraction;
    if warning {
        log::warn!(
            "adapted mesh has {:.1}% of edges in the target band ({} triangles)",
            100.0 * band_fraction,
            new_mesh.num_triangles()
        );
    }
    log::debug!(
        "adapt: {} -> {} triangles in {sweeps} sweeps ({stats:?}), band fraction {band_fraction:.3}",
        mesh.num_triangles(),
        new_mesh.num_triangles()
    );
    Ok(Adapted {
        rho: DensityField::new(values, rho_min)?,
        mesh: new_mesh,
        metric: new_metric,
        band_fraction,
        warning,
        sweeps,
    })
}

/// Relative change of the element count between consecutive meshes.
pub fn cardinality_stagnation(prev: &UnitCellMesh, new: &UnitCellMesh) -> Result<f64> {
    cardinality_change(prev.num_triangles(), new.num_triangles())
}

pub fn cardinality_change(prev: usize, new: usize) -> Result<f64> {
    if prev == 0 {
        return Err(Error::InvalidArgument("previous mesh is empty".into()));
    }
    Ok((new as f64 - prev as f64).abs() / prev as f64)
}

/// Metric lengths (normalized to 1 for conforming edges) of every edge of
/// `mesh`, seam edges counted once.
pub fn metric_edge_lengths(mesh: &UnitCellMesh, metric: &[Sym2]) -> Vec<f64> {
    edges(mesh)
        .into_iter()
        .map(|(a, b, d)| torus::metric_length(&metric[a], &metric[b], d))
        .collect()
}

/// Euclidean edge lengths of `mesh`, seam edges counted once.
pub fn edge_lengths(mesh: &UnitCellMesh) -> Vec<f64> {
    edges(mesh)
        .into_iter()
        .map(|(_, _, d)| crate::linalg::norm(d))
        .collect()
}

fn edges(mesh: &UnitCellMesh) -> Vec<(usize, usize, Point)> {
    let mut seen = std::collections::HashSet::new();
    let mut out = Vec::new();
    let v = mesh.vertices();
    for t in mesh.triangles() {
        for i in 0..3 {
            let (a, b) = (t[i], t[(i + 1) % 3]);
            let key = {
                let (x, y) = (mesh.master_of(a), mesh.master_of(b));
                (x.min(y), x.max(y))
            };
            if seen.insert(key) {
                out.push((a, b, crate::linalg::sub(v[b], v[a])));
            }
        }
    }
    out
}
