//! Helmholtz smoothing and Heaviside projection of the density.
//!
//! The Helmholtz filter solves `(tau^2 K + M) rho~ = M rho` on the periodic
//! P1 space. The projection is the usual tanh step
//!
//! `h(x) = (tanh(b n) + tanh(b (x - n))) / (tanh(b n) + tanh(b (1 - n)))`.
//!
//! Both stages clamp into `[rho_min, 1]`. The [`FilterChain`] works on
//! periodic degrees of freedom and provides forward and transpose
//! derivatives; clamped entries have zero derivative.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fem::{mass_element_matrix, thermal_element_matrix, DensityField, Factorized, PeriodicSystem};
use crate::mesh::UnitCellMesh;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FilterParams {
    /// Helmholtz radius.
    pub tau: f64,
    /// Projection sharpness.
    pub beta: f64,
    /// Projection threshold.
    pub eta: f64,
}

impl Default for FilterParams {
    fn default() -> Self {
        Self { tau: 0.02, beta: 5.0, eta: 0.5 }
    }
}

impl FilterParams {
    pub fn identity() -> Self {
        Self { tau: 0.0, beta: 0.0, eta: 0.5 }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.tau >= 0.0 && self.tau.is_finite()) {
            return Err(Error::InvalidArgument(format!("filter radius must be >= 0, got {}", self.tau)));
        }
        if !(self.beta >= 0.0 && self.beta.is_finite()) {
            return Err(Error::InvalidArgument(format!("projection sharpness must be >= 0, got {}", self.beta)));
        }
        if !(self.eta > 0.0 && self.eta < 1.0) {
            return Err(Error::InvalidArgument(format!("projection threshold must lie in (0, 1), got {}", self.eta)));
        }
        Ok(())
    }
}

/// Tanh projection of a single value, without clamping.
pub fn heaviside(x: f64, beta: f64, eta: f64) -> f64 {
    if beta == 0.0 {
        return x;
    }
    let a = (beta * eta).tanh();
    (a + (beta * (x - eta)).tanh()) / (a + (beta * (1.0 - eta)).tanh())
}

/// Derivative of [`heaviside`] with respect to `x`.
pub fn heaviside_slope(x: f64, beta: f64, eta: f64) -> f64 {
    if beta == 0.0 {
        return 1.0;
    }
    let a = (beta * eta).tanh();
    let t = (beta * (x - eta)).tanh();
    beta * (1.0 - t * t) / (a + (beta * (1.0 - eta)).tanh())
}

/// Nodewise projection followed by clamping into `[rho_min, 1]`.
pub fn heaviside_project(rho_tilde: &[f64], beta: f64, eta: f64, rho_min: f64) -> Vec<f64> {
    rho_tilde
        .iter()
        .map(|&x| heaviside(x, beta, eta).clamp(rho_min, 1.0))
        .collect()
}

/// Helmholtz smoothing of a nodal density, clamped into `[rho_min, 1]`.
pub fn helmholtz_filter(mesh: &UnitCellMesh, rho: &DensityField, tau: f64) -> Result<DensityField> {
    rho.check_on(mesh)?;
    let params = FilterParams { tau, beta: 0.0, eta: 0.5 };
    let chain = FilterChain::new(mesh, params, rho.rho_min())?;
    let x = chain.gather(rho.values());
    let y = chain.helmholtz_raw(&x)?;
    let clamped: Vec<f64> = y.iter().map(|v| v.clamp(rho.rho_min(), 1.0)).collect();
    DensityField::new(chain.scatter(&clamped), rho.rho_min())
}

/// Helmholtz filter followed by Heaviside projection on one mesh, with its
/// derivatives. Vectors live on periodic degrees of freedom.
pub struct FilterChain {
    params: FilterParams,
    rho_min: f64,
    dof_of_vertex: Vec<usize>,
    vertex_of_dof: Vec<usize>,
    helmholtz: Option<Helmholtz>,
}

struct Helmholtz {
    system: PeriodicSystem,
    factorized: Factorized,
    triangles: Vec<[usize; 3]>,
    /// Row-major element mass matrices.
    element_mass: Vec<[f64; 9]>,
}

/// Intermediate values of one forward pass, needed by the derivatives.
#[derive(Debug, Clone)]
pub struct ChainPoint {
    /// Helmholtz output before clamping.
    pub smoothed: Vec<f64>,
    /// Final projected and clamped density.
    pub projected: Vec<f64>,
    slope: Vec<f64>,
}

impl FilterChain {
    pub fn new(mesh: &UnitCellMesh, params: FilterParams, rho_min: f64) -> Result<Self> {
        params.validate()?;
        let (dof_of_vertex, ndofs) = mesh.periodic_dofs();
        let mut vertex_of_dof = vec![usize::MAX; ndofs];
        for (v, &d) in dof_of_vertex.iter().enumerate() {
            if vertex_of_dof[d] == usize::MAX {
                vertex_of_dof[d] = v;
            }
        }
        let helmholtz = if params.tau > 0.0 {
            let mut system = PeriodicSystem::new(mesh, 1, None)?;
            let unit = nalgebra::Matrix2::identity();
            let t2 = params.tau * params.tau;
            let values = system.assemble(mesh.num_triangles(), |e, out| {
                thermal_element_matrix(mesh, e, &unit, t2, out);
                mass_element_matrix(mesh, e, 1.0, out);
            });
            let factorized = system.factorize(values)?;
            let element_mass = (0..mesh.num_triangles())
                .map(|e| {
                    let mut m = [0.0; 9];
                    mass_element_matrix(mesh, e, 1.0, &mut m);
                    m
                })
                .collect();
            Some(Helmholtz {
                system,
                factorized,
                triangles: mesh.triangles().to_vec(),
                element_mass,
            })
        } else {
            None
        };
        Ok(Self { params, rho_min, dof_of_vertex, vertex_of_dof, helmholtz })
    }

    pub fn params(&self) -> &FilterParams {
        &self.params
    }

    pub fn num_dofs(&self) -> usize {
        self.vertex_of_dof.len()
    }

    /// Degree-of-freedom values of a periodic nodal field.
    pub fn gather(&self, per_vertex: &[f64]) -> Vec<f64> {
        self.vertex_of_dof.iter().map(|&v| per_vertex[v]).collect()
    }

    /// Nodal field of degree-of-freedom values.
    pub fn scatter(&self, per_dof: &[f64]) -> Vec<f64> {
        self.dof_of_vertex.iter().map(|&d| per_dof[d]).collect()
    }

    fn mass_apply(&self, h: &Helmholtz, x: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; x.len()];
        for (t, m) in h.triangles.iter().zip(&h.element_mass) {
            let d = t.map(|v| self.dof_of_vertex[v]);
            for r in 0..3 {
                out[d[r]] += (0..3).map(|c| m[r * 3 + c] * x[d[c]]).sum::<f64>();
            }
        }
        out
    }

    fn solve(&self, h: &Helmholtz, b: Vec<f64>) -> Result<Vec<f64>> {
        debug_assert_eq!(h.system.num_equations(), b.len());
        Ok(h.factorized.solve(&[b])?.pop().expect("one solution"))
    }

    /// Helmholtz output without clamping.
    pub fn helmholtz_raw(&self, x: &[f64]) -> Result<Vec<f64>> {
        match &self.helmholtz {
            Some(h) => self.solve(h, self.mass_apply(h, x)),
            None => Ok(x.to_vec()),
        }
    }

    /// Forward pass: smoothing, clamp, projection, clamp.
    pub fn forward(&self, x: &[f64]) -> Result<ChainPoint> {
        let smoothed = self.helmholtz_raw(x)?;
        let (lo, hi) = (self.rho_min, 1.0);
        let (beta, eta) = (self.params.beta, self.params.eta);
        let mut projected = Vec::with_capacity(x.len());
        let mut slope = Vec::with_capacity(x.len());
        for &s in &smoothed {
            let c = s.clamp(lo, hi);
            let h = heaviside(c, beta, eta);
            let active = s < lo || s > hi || h < lo || h > hi;
            projected.push(h.clamp(lo, hi));
            slope.push(if active { 0.0 } else { heaviside_slope(c, beta, eta) });
        }
        Ok(ChainPoint { smoothed, projected, slope })
    }

    /// Forward derivative `J d` at `point`.
    pub fn jvp(&self, point: &ChainPoint, d: &[f64]) -> Result<Vec<f64>> {
        let t = self.helmholtz_raw(d)?;
        Ok(t.iter().zip(&point.slope).map(|(a, s)| a * s).collect())
    }

    /// Transpose derivative `J^T g` at `point`.
    pub fn vjp(&self, point: &ChainPoint, g: &[f64]) -> Result<Vec<f64>> {
        let w: Vec<f64> = g.iter().zip(&point.slope).map(|(a, s)| a * s).collect();
        match &self.helmholtz {
            Some(h) => {
                let y = self.solve(h, w)?;
                Ok(self.mass_apply(h, &y))
            }
            None => Ok(w),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn projection_fixed_points() {
        assert!((heaviside(0.5, 5.0, 0.5) - 0.5).abs() < 1e-15);
        assert!((heaviside(1.0, 5.0, 0.5) - 1.0).abs() < 1e-15);
        assert!(heaviside(0.0, 5.0, 0.5).abs() < 1e-15);
        assert!((heaviside(0.3, 1e-8, 0.5) - 0.3).abs() < 1e-9);
        assert_eq!(heaviside(0.3, 0.0, 0.5), 0.3);
    }

    #[test]
    fn constants_pass_through_helmholtz() {
        let m = UnitCellMesh::structured(6).unwrap();
        let rho = DensityField::uniform(&m, 0.37, 1e-4).unwrap();
        let out = helmholtz_filter(&m, &rho, 0.05).unwrap();
        assert!(out.values().iter().all(|v| (v - 0.37).abs() < 1e-10));
    }

    #[test]
    fn identity_chain() {
        let m = UnitCellMesh::structured(4).unwrap();
        let chain = FilterChain::new(&m, FilterParams::identity(), 1e-4).unwrap();
        let x: Vec<f64> = (0..chain.num_dofs()).map(|i| 0.1 + 0.05 * i as f64 % 0.8).collect();
        let p = chain.forward(&x).unwrap();
        assert_eq!(p.projected, x);
        assert_eq!(chain.vjp(&p, &x).unwrap(), x);
    }
}
