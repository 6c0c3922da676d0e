//! P1 finite elements for the periodic cell problems.
//!
//! For each unit macroscopic strain (Voigt `e_11`, `e_22`, `2 e_12`) and each
//! unit temperature gradient the solver finds the periodic fluctuation that
//! balances the SIMP-weighted reference field:
//!
//! `a_rho(u*, v) = F_rho(v)` with `a_rho(u, v) = int rho^p sigma(u) : eps(v)`
//! and `F_rho(v) = int rho^p sigma(u0) : eps(v)`.
//!
//! Element densities are the mean of the three nodal values, so every
//! integrand is constant per element and the one-point rule is exact.

mod system;

pub use system::{Factorized, PeriodicSystem, RESIDUAL_TOL};

use std::hash::{Hash, Hasher};

use nalgebra::{Matrix2, Matrix3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::Point;
use crate::mesh::UnitCellMesh;

/// 2D reduction of the isotropic constitutive law.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum PlaneReduction {
    #[default]
    PlaneStress,
    PlaneStrain,
}

/// Bulk material and SIMP penalization.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MaterialLaw {
    pub young: f64,
    pub poisson: f64,
    pub k11: f64,
    pub k22: f64,
    /// SIMP exponent of the elastic law.
    pub p: f64,
    /// SIMP exponent of the thermal law.
    pub s: f64,
    #[serde(default)]
    pub reduction: PlaneReduction,
}

impl Default for MaterialLaw {
    fn default() -> Self {
        Self {
            young: 1.0,
            poisson: 0.3,
            k11: 1.0,
            k22: 1.0,
            p: 4.0,
            s: 4.0,
            reduction: PlaneReduction::PlaneStress,
        }
    }
}

impl MaterialLaw {
    pub fn validate(&self) -> Result<()> {
        let bad = |what: &str| Err(Error::InvalidArgument(what.to_string()));
        if !(self.young > 0.0 && self.young.is_finite()) {
            return bad("Young modulus must be positive");
        }
        if !(self.poisson > -1.0 && self.poisson < 0.5) {
            return bad("Poisson ratio must lie in (-1, 0.5)");
        }
        if !(self.k11 > 0.0 && self.k22 > 0.0) {
            return bad("conductivities must be positive");
        }
        if !(self.p >= 1.0 && self.s >= 1.0) {
            return bad("SIMP exponents must be at least 1");
        }
        Ok(())
    }

    /// Voigt stiffness mapping `(e11, e22, 2 e12)` to `(s11, s22, s12)`.
    pub fn elastic_matrix(&self) -> Result<Matrix3<f64>> {
        elastic_constitutive(self)
    }

    pub fn conductivity(&self) -> Matrix2<f64> {
        Matrix2::new(self.k11, 0.0, 0.0, self.k22)
    }
}

/// Voigt stiffness of the bulk material under the configured plane
/// reduction.
pub fn elastic_constitutive(law: &MaterialLaw) -> Result<Matrix3<f64>> {
    law.validate()?;
    let (e, nu) = (law.young, law.poisson);
    Ok(match law.reduction {
        PlaneReduction::PlaneStress => {
            let f = e / (1.0 - nu * nu);
            Matrix3::new(f, f * nu, 0.0, f * nu, f, 0.0, 0.0, 0.0, f * (1.0 - nu) / 2.0)
        }
        PlaneReduction::PlaneStrain => {
            let f = e / ((1.0 + nu) * (1.0 - 2.0 * nu));
            Matrix3::new(
                f * (1.0 - nu),
                f * nu,
                0.0,
                f * nu,
                f * (1.0 - nu),
                0.0,
                0.0,
                0.0,
                f * (1.0 - 2.0 * nu) / 2.0,
            )
        }
    })
}

/// Nodal relative density, piecewise linear on the mesh.
#[derive(Debug, Clone, PartialEq)]
pub struct DensityField {
    values: Vec<f64>,
    rho_min: f64,
}

impl DensityField {
    /// Wraps nodal values, checking `rho_min <= rho <= 1`.
    pub fn new(values: Vec<f64>, rho_min: f64) -> Result<Self> {
        if !(rho_min > 0.0 && rho_min < 1.0) {
            return Err(Error::InvalidArgument(format!(
                "rho_min must lie in (0, 1), got {rho_min}"
            )));
        }
        if let Some((i, v)) = values
            .iter()
            .enumerate()
            .find(|(_, v)| !(**v >= rho_min && **v <= 1.0))
        {
            return Err(Error::InvalidArgument(format!(
                "density {v} at vertex {i} outside [{rho_min}, 1]"
            )));
        }
        Ok(Self { values, rho_min })
    }

    /// Clamps `values` into `[rho_min, 1]`.
    pub fn clamped(values: Vec<f64>, rho_min: f64) -> Result<Self> {
        let values = values.into_iter().map(|v| v.clamp(rho_min, 1.0)).collect();
        Self::new(values, rho_min)
    }

    pub fn uniform(mesh: &UnitCellMesh, value: f64, rho_min: f64) -> Result<Self> {
        Self::new(vec![value; mesh.num_vertices()], rho_min)
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn rho_min(&self) -> f64 {
        self.rho_min
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    /// Checks that the field lives on `mesh` and is consistent with its
    /// periodic identification.
    pub fn check_on(&self, mesh: &UnitCellMesh) -> Result<()> {
        if self.values.len() != mesh.num_vertices() {
            return Err(Error::InvalidArgument(format!(
                "density has {} values for a mesh with {} vertices",
                self.values.len(),
                mesh.num_vertices()
            )));
        }
        for &(s, m) in mesh.periodic_pairs() {
            if self.values[s] != self.values[m] {
                return Err(Error::InvalidArgument(format!(
                    "density differs across periodic pair ({s}, {m})"
                )));
            }
        }
        Ok(())
    }

    /// Element densities: mean of the three nodal values.
    pub fn element_means(&self, mesh: &UnitCellMesh) -> Vec<f64> {
        element_means(mesh, &self.values)
    }
}

pub fn element_means(mesh: &UnitCellMesh, nodal: &[f64]) -> Vec<f64> {
    mesh.triangles()
        .iter()
        .map(|t| (nodal[t[0]] + nodal[t[1]] + nodal[t[2]]) / 3.0)
        .collect()
}

/// Hash of the element densities a solve was computed for, used to detect
/// stale solutions.
pub fn fingerprint(mesh: &UnitCellMesh, element_density: &[f64]) -> u64 {
    let mut h = std::collections::hash_map::DefaultHasher::new();
    mesh.num_vertices().hash(&mut h);
    mesh.num_triangles().hash(&mut h);
    for v in element_density {
        v.to_bits().hash(&mut h);
    }
    h.finish()
}

/// Voigt strain of unit macroscopic load case `case` (0: 11, 1: 22, 2: 12).
pub fn reference_strain(case: usize) -> [f64; 3] {
    let mut e = [0.0; 3];
    e[case] = 1.0;
    e
}

/// Unit temperature gradient of thermal load case `case` (0: x, 1: y).
pub fn reference_gradient(case: usize) -> Point {
    let mut g = [0.0; 2];
    g[case] = 1.0;
    g
}

/// Voigt strain `(e11, e22, 2 e12)` of a nodal displacement field on an
/// element.
pub fn element_strain(mesh: &UnitCellMesh, k: usize, u: &[Point]) -> [f64; 3] {
    let (g, _) = mesh.p1_gradients(k);
    let t = mesh.triangles()[k];
    let mut e = [0.0; 3];
    for i in 0..3 {
        let ui = u[t[i]];
        e[0] += g[i][0] * ui[0];
        e[1] += g[i][1] * ui[1];
        e[2] += g[i][1] * ui[0] + g[i][0] * ui[1];
    }
    e
}

/// Strain-displacement matrix (3 x 6, row-major) from the hat gradients.
fn strain_matrix(g: &[Point; 3]) -> [[f64; 6]; 3] {
    let mut b = [[0.0; 6]; 3];
    for i in 0..3 {
        b[0][2 * i] = g[i][0];
        b[1][2 * i + 1] = g[i][1];
        b[2][2 * i] = g[i][1];
        b[2][2 * i + 1] = g[i][0];
    }
    b
}

/// Writes `w * area * B^T D B` into `out` (6 x 6 row-major).
pub fn elastic_element_matrix(
    mesh: &UnitCellMesh,
    k: usize,
    d: &Matrix3<f64>,
    weight: f64,
    out: &mut [f64],
) {
    let (g, area) = mesh.p1_gradients(k);
    let b = strain_matrix(&g);
    let f = weight * area;
    for r in 0..6 {
        let db: [f64; 3] = std::array::from_fn(|i| (0..3).map(|j| d[(i, j)] * b[j][r]).sum());
        for c in 0..6 {
            out[r * 6 + c] += f * (b[0][c] * db[0] + b[1][c] * db[1] + b[2][c] * db[2]);
        }
    }
}

/// Writes `w * area * G^T k G` into `out` (3 x 3 row-major).
pub fn thermal_element_matrix(
    mesh: &UnitCellMesh,
    k: usize,
    cond: &Matrix2<f64>,
    weight: f64,
    out: &mut [f64],
) {
    let (g, area) = mesh.p1_gradients(k);
    let f = weight * area;
    for r in 0..3 {
        let kg = [
            cond[(0, 0)] * g[r][0] + cond[(0, 1)] * g[r][1],
            cond[(1, 0)] * g[r][0] + cond[(1, 1)] * g[r][1],
        ];
        for c in 0..3 {
            out[r * 3 + c] += f * (kg[0] * g[c][0] + kg[1] * g[c][1]);
        }
    }
}

/// Writes the consistent P1 mass matrix of element `k` scaled by `weight`.
pub fn mass_element_matrix(mesh: &UnitCellMesh, k: usize, weight: f64, out: &mut [f64]) {
    let area = mesh.area(k);
    for r in 0..3 {
        for c in 0..3 {
            out[r * 3 + c] += weight * area * if r == c { 2.0 } else { 1.0 } / 12.0;
        }
    }
}

/// Periodic displacement fluctuations for the three unit strains, per vertex.
#[derive(Debug, Clone)]
pub struct ElasticFluctuations {
    pub fields: [Vec<Point>; 3],
}

/// Periodic temperature fluctuations for the two unit gradients, per vertex.
#[derive(Debug, Clone)]
pub struct ThermalFluctuations {
    pub fields: [Vec<f64>; 2],
}

/// Fluctuations of both physics for one density on one mesh.
#[derive(Debug, Clone)]
pub struct CellSolutions {
    pub elastic: ElasticFluctuations,
    pub thermal: ThermalFluctuations,
    /// Element densities the solutions were computed for.
    pub element_density: Vec<f64>,
    pub fingerprint: u64,
}

impl CellSolutions {
    /// Errors with [`Error::StaleSolutions`] unless the solutions were
    /// computed for `element_density` on `mesh`.
    pub fn ensure_current(&self, mesh: &UnitCellMesh, element_density: &[f64]) -> Result<()> {
        if self.element_density.len() != element_density.len()
            || self.fingerprint != fingerprint(mesh, element_density)
        {
            return Err(Error::StaleSolutions);
        }
        Ok(())
    }
}

/// Cell-problem solver bound to one mesh and one material law. Sparsity
/// patterns and symbolic factorizations are reused across densities.
pub struct CellSolver<'m> {
    mesh: &'m UnitCellMesh,
    law: MaterialLaw,
    stiffness: Matrix3<f64>,
    elastic: PeriodicSystem,
    thermal: PeriodicSystem,
}

impl<'m> CellSolver<'m> {
    /// Solver pinning the origin corner.
    pub fn new(mesh: &'m UnitCellMesh, law: &MaterialLaw) -> Result<Self> {
        Self::with_anchor(mesh, law, mesh.corner_group()[0])
    }

    /// Solver pinning vertex `anchor` to remove the nullspace.
    pub fn with_anchor(mesh: &'m UnitCellMesh, law: &MaterialLaw, anchor: usize) -> Result<Self> {
        if anchor >= mesh.num_vertices() {
            return Err(Error::InvalidArgument(format!("anchor vertex {anchor} out of range")));
        }
        Ok(Self {
            mesh,
            law: *law,
            stiffness: elastic_constitutive(law)?,
            elastic: PeriodicSystem::new(mesh, 2, Some(anchor))?,
            thermal: PeriodicSystem::new(mesh, 1, Some(anchor))?,
        })
    }

    pub fn mesh(&self) -> &UnitCellMesh {
        self.mesh
    }

    pub fn law(&self) -> &MaterialLaw {
        &self.law
    }

    fn check_density(&self, element_density: &[f64]) -> Result<()> {
        if element_density.len() != self.mesh.num_triangles() {
            return Err(Error::InvalidArgument(format!(
                "{} element densities for {} triangles",
                element_density.len(),
                self.mesh.num_triangles()
            )));
        }
        if let Some(e) = element_density.iter().position(|d| !(d.is_finite() && *d > 0.0)) {
            return Err(Error::Solver(format!(
                "element {e} has density {}; the cell problem would be singular",
                element_density[e]
            )));
        }
        Ok(())
    }

    /// Assembles the SIMP-weighted elastic system and its three load vectors.
    pub fn elastic_system(&self, element_density: &[f64]) -> (Vec<f64>, [Vec<f64>; 3]) {
        assemble_elastic(&self.elastic, self.mesh, &self.stiffness, self.law.p, element_density)
    }

    /// Assembles the SIMP-weighted thermal system and its two load vectors.
    pub fn thermal_system(&self, element_density: &[f64]) -> (Vec<f64>, [Vec<f64>; 2]) {
        assemble_thermal(&self.thermal, self.mesh, &self.law, element_density)
    }

    pub fn elastic_layout(&self) -> &PeriodicSystem {
        &self.elastic
    }

    pub fn thermal_layout(&self) -> &PeriodicSystem {
        &self.thermal
    }

    pub fn solve_elastic(&mut self, element_density: &[f64]) -> Result<ElasticFluctuations> {
        self.check_density(element_density)?;
        solve_elastic_on(&mut self.elastic, self.mesh, &self.stiffness, self.law.p, element_density)
    }

    pub fn solve_thermal(&mut self, element_density: &[f64]) -> Result<ThermalFluctuations> {
        self.check_density(element_density)?;
        solve_thermal_on(&mut self.thermal, self.mesh, &self.law, element_density)
    }

    /// Solves both physics families; the thermal family runs on a second
    /// thread.
    pub fn solve(&mut self, element_density: &[f64]) -> Result<CellSolutions> {
        self.check_density(element_density)?;
        let mesh = self.mesh;
        let (law, stiffness) = (self.law, self.stiffness);
        let (elastic_sys, thermal_sys) = (&mut self.elastic, &mut self.thermal);
        let (elastic, thermal) = std::thread::scope(|scope| {
            let thermal =
                scope.spawn(|| solve_thermal_on(thermal_sys, mesh, &law, element_density));
            let elastic = solve_elastic_on(elastic_sys, mesh, &stiffness, law.p, element_density);
            (elastic, thermal.join().expect("thermal solve thread panicked"))
        });
        Ok(CellSolutions {
            elastic: elastic?,
            thermal: thermal?,
            element_density: element_density.to_vec(),
            fingerprint: fingerprint(mesh, element_density),
        })
    }
}

fn assemble_elastic(
    sys: &PeriodicSystem,
    mesh: &UnitCellMesh,
    d: &Matrix3<f64>,
    p: f64,
    rho: &[f64],
) -> (Vec<f64>, [Vec<f64>; 3]) {
    let values = sys.assemble(mesh.num_triangles(), |e, out| {
        elastic_element_matrix(mesh, e, d, rho[e].powf(p), out)
    });
    let loads = std::array::from_fn(|case| {
        let eps0 = reference_strain(case);
        let sigma0: [f64; 3] = std::array::from_fn(|i| (0..3).map(|j| d[(i, j)] * eps0[j]).sum());
        sys.assemble_vector(mesh, |e, out| {
            let (g, area) = mesh.p1_gradients(e);
            let b = strain_matrix(&g);
            let f = rho[e].powf(p) * area;
            for c in 0..6 {
                out[c] = f * (b[0][c] * sigma0[0] + b[1][c] * sigma0[1] + b[2][c] * sigma0[2]);
            }
        })
    });
    (values, loads)
}

fn assemble_thermal(
    sys: &PeriodicSystem,
    mesh: &UnitCellMesh,
    law: &MaterialLaw,
    rho: &[f64],
) -> (Vec<f64>, [Vec<f64>; 2]) {
    let cond = law.conductivity();
    let values = sys.assemble(mesh.num_triangles(), |e, out| {
        thermal_element_matrix(mesh, e, &cond, rho[e].powf(law.s), out)
    });
    let loads = std::array::from_fn(|case| {
        let g0 = reference_gradient(case);
        let q0 = [
            cond[(0, 0)] * g0[0] + cond[(0, 1)] * g0[1],
            cond[(1, 0)] * g0[0] + cond[(1, 1)] * g0[1],
        ];
        sys.assemble_vector(mesh, |e, out| {
            let (g, area) = mesh.p1_gradients(e);
            let f = rho[e].powf(law.s) * area;
            for c in 0..3 {
                out[c] = f * (g[c][0] * q0[0] + g[c][1] * q0[1]);
            }
        })
    });
    (values, loads)
}

fn solve_elastic_on(
    sys: &mut PeriodicSystem,
    mesh: &UnitCellMesh,
    d: &Matrix3<f64>,
    p: f64,
    rho: &[f64],
) -> Result<ElasticFluctuations> {
    let (values, loads) = assemble_elastic(sys, mesh, d, p, rho);
    let sols = sys.factorize(values)?.solve(&loads)?;
    let fields = std::array::from_fn(|case| {
        let flat = sys.expand(&sols[case]);
        flat.chunks_exact(2).map(|c| [c[0], c[1]]).collect()
    });
    Ok(ElasticFluctuations { fields })
}

fn solve_thermal_on(
    sys: &mut PeriodicSystem,
    mesh: &UnitCellMesh,
    law: &MaterialLaw,
    rho: &[f64],
) -> Result<ThermalFluctuations> {
    let (values, loads) = assemble_thermal(sys, mesh, law, rho);
    let sols = sys.factorize(values)?.solve(&loads)?;
    let fields = std::array::from_fn(|case| sys.expand(&sols[case]));
    Ok(ThermalFluctuations { fields })
}

/// Solves the three elastic cell problems for a nodal density.
pub fn solve_elastic_cell_problems(
    mesh: &UnitCellMesh,
    rho: &DensityField,
    law: &MaterialLaw,
) -> Result<ElasticFluctuations> {
    rho.check_on(mesh)?;
    CellSolver::new(mesh, law)?.solve_elastic(&rho.element_means(mesh))
}

/// Solves the two thermal cell problems for a nodal density.
pub fn solve_thermal_cell_problems(
    mesh: &UnitCellMesh,
    rho: &DensityField,
    law: &MaterialLaw,
) -> Result<ThermalFluctuations> {
    rho.check_on(mesh)?;
    CellSolver::new(mesh, law)?.solve_thermal(&rho.element_means(mesh))
}

/// Solves all five cell problems for a nodal density.
pub fn solve_cell_problems(
    mesh: &UnitCellMesh,
    rho: &DensityField,
    law: &MaterialLaw,
) -> Result<CellSolutions> {
    rho.check_on(mesh)?;
    CellSolver::new(mesh, law)?.solve(&rho.element_means(mesh))
}
