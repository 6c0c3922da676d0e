//! Mass minimization under box constraints on homogenized quantities.
//!
//! The constrained quantities are, in this order, `E_1111`, `E_1212`,
//! `E_2222 / E_1111`, `k_11` and `k_22 / k_11`. Their derivatives follow
//! from the self-adjoint structure of the cell problems:
//!
//! `dE_ab / d rho_e = p rho_e^(p-1) |e| (e_a - eps_a) : D (e_b - eps_b)`,
//!
//! and each element density is the mean of its three nodal values.

pub mod mma;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fem::{element_means, CellSolutions, CellSolver, DensityField, MaterialLaw};
use crate::filters::{ChainPoint, FilterChain};
use crate::homogenize::{elastic_element_energies, homogenize, thermal_element_energies, HomogenizedTensors};
use crate::mesh::UnitCellMesh;

pub use mma::{kkt_residual, optimize, Evaluation, MmaSettings, Outcome, Problem, Step, Termination};

/// Number of constrained quantities.
pub const NUM_CONSTRAINTS: usize = 5;

/// Names of the constrained quantities, in order.
pub const CONSTRAINT_NAMES: [&str; NUM_CONSTRAINTS] = ["E1111", "E1212", "E2222/E1111", "k11", "k22/k11"];

/// Values of the five constrained quantities.
pub type ConstraintVector = [f64; NUM_CONSTRAINTS];

/// Lower and upper bounds of the constrained quantities. Infinite upper
/// bounds are allowed.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConstraintBounds {
    pub lower: ConstraintVector,
    #[serde(with = "unbounded")]
    pub upper: ConstraintVector,
}

/// JSON has no infinity: infinite bounds are written as `null`.
mod unbounded {
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    use super::{ConstraintVector, NUM_CONSTRAINTS};

    pub fn serialize<S: Serializer>(v: &ConstraintVector, s: S) -> Result<S::Ok, S::Error> {
        let o: [Option<f64>; NUM_CONSTRAINTS] = v.map(|x| x.is_finite().then_some(x));
        o.serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<ConstraintVector, D::Error> {
        let o = <[Option<f64>; NUM_CONSTRAINTS]>::deserialize(d)?;
        Ok(o.map(|x| x.unwrap_or(f64::INFINITY)))
    }
}

impl ConstraintBounds {
    pub fn new(lower: ConstraintVector, upper: ConstraintVector) -> Result<Self> {
        let b = Self { lower, upper };
        b.validate()?;
        Ok(b)
    }

    pub fn validate(&self) -> Result<()> {
        for i in 0..NUM_CONSTRAINTS {
            let (l, u) = (self.lower[i], self.upper[i]);
            if !l.is_finite() || l < 0.0 || !(l <= u) || u.is_nan() {
                return Err(Error::InvalidArgument(format!(
                    "bounds of {} must satisfy 0 <= lower <= upper, got [{l}, {u}]",
                    CONSTRAINT_NAMES[i]
                )));
            }
        }
        Ok(())
    }

    /// Relative violation of every bound (0 when satisfied).
    pub fn relative_violation(&self, c: &ConstraintVector) -> ConstraintVector {
        std::array::from_fn(|i| {
            let (l, u) = (self.lower[i], self.upper[i]);
            let below = if l > 0.0 { (l - c[i]) / l } else { -c[i] };
            let above = if u.is_finite() { (c[i] - u) / u.abs().max(f64::MIN_POSITIVE) } else { 0.0 };
            below.max(above).max(0.0)
        })
    }

    pub fn max_relative_violation(&self, c: &ConstraintVector) -> f64 {
        self.relative_violation(c).iter().copied().fold(0.0, f64::max)
    }
}

/// `int_Y rho`, exact for P1 densities.
pub fn mass(mesh: &UnitCellMesh, rho: &[f64]) -> f64 {
    element_means(mesh, rho)
        .iter()
        .enumerate()
        .map(|(k, r)| mesh.area(k) * r)
        .sum()
}

/// The five constrained quantities of homogenized tensors.
pub fn constraint_values(t: &HomogenizedTensors) -> Result<ConstraintVector> {
    if !(t.e1111() > 0.0) {
        return Err(Error::DegenerateRatio(format!("E1111 = {:e}", t.e1111())));
    }
    if !(t.k11() > 0.0) {
        return Err(Error::DegenerateRatio(format!("k11 = {:e}", t.k11())));
    }
    Ok([t.e1111(), t.e1212(), t.e2222() / t.e1111(), t.k11(), t.k22() / t.k11()])
}

/// Solves the cell problems for `rho` and returns the constrained
/// quantities together with the tensors and solutions.
pub fn evaluate_constraints(
    mesh: &UnitCellMesh,
    rho: &DensityField,
    law: &MaterialLaw,
) -> Result<(ConstraintVector, HomogenizedTensors, CellSolutions)> {
    let sol = crate::fem::solve_cell_problems(mesh, rho, law)?;
    let t = homogenize(mesh, law, &sol)?;
    Ok((constraint_values(&t)?, t, sol))
}

/// Gradients with respect to the nodal density (one entry per mesh vertex).
#[derive(Debug, Clone)]
pub struct Sensitivities {
    pub mass: Vec<f64>,
    pub jacobian: [Vec<f64>; NUM_CONSTRAINTS],
}

impl Sensitivities {
    /// Gradients with respect to periodic degrees of freedom: contributions
    /// of identified vertices are summed.
    pub fn fold(&self, mesh: &UnitCellMesh) -> Self {
        let (dof, n) = mesh.periodic_dofs();
        let fold = |v: &[f64]| {
            let mut out = vec![0.0; n];
            for (i, x) in v.iter().enumerate() {
                out[dof[i]] += x;
            }
            out
        };
        Self {
            mass: fold(&self.mass),
            jacobian: std::array::from_fn(|i| fold(&self.jacobian[i])),
        }
    }
}

/// Adjoint gradients of the mass and of the constrained quantities.
pub fn sensitivities(
    mesh: &UnitCellMesh,
    rho: &DensityField,
    law: &MaterialLaw,
    sol: &CellSolutions,
) -> Result<Sensitivities> {
    rho.check_on(mesh)?;
    let means = rho.element_means(mesh);
    sol.ensure_current(mesh, &means)?;
    let t = homogenize(mesh, law, sol)?;
    sensitivities_from(mesh, law, sol, &t)
}

fn sensitivities_from(
    mesh: &UnitCellMesh,
    law: &MaterialLaw,
    sol: &CellSolutions,
    t: &HomogenizedTensors,
) -> Result<Sensitivities> {
    let el = elastic_element_energies(mesh, law, &sol.elastic)?;
    let th = thermal_element_energies(mesh, law, &sol.thermal)?;
    let nv = mesh.num_vertices();
    let mut d_e11 = vec![0.0; nv];
    let mut d_e22 = vec![0.0; nv];
    let mut d_e33 = vec![0.0; nv];
    let mut d_k11 = vec![0.0; nv];
    let mut d_k22 = vec![0.0; nv];
    let mut d_mass = vec![0.0; nv];
    for (k, tri) in mesh.triangles().iter().enumerate() {
        let r = sol.element_density[k];
        let fe = law.p * r.powf(law.p - 1.0) / 3.0;
        let ft = law.s * r.powf(law.s - 1.0) / 3.0;
        let a = mesh.area(k) / 3.0;
        for &v in tri {
            d_e11[v] += fe * el[k][0][0];
            d_e22[v] += fe * el[k][1][1];
            d_e33[v] += fe * el[k][2][2];
            d_k11[v] += ft * th[k][0][0];
            d_k22[v] += ft * th[k][1][1];
            d_mass[v] += a;
        }
    }
    let (e11, e22, k11, k22) = (t.e1111(), t.e2222(), t.k11(), t.k22());
    let ratio = |num: &[f64], den: &[f64], n: f64, d: f64| -> Vec<f64> {
        num.iter().zip(den).map(|(a, b)| (a * d - n * b) / (d * d)).collect()
    };
    let e_ratio = ratio(&d_e22, &d_e11, e22, e11);
    let k_ratio = ratio(&d_k22, &d_k11, k22, k11);
    Ok(Sensitivities { mass: d_mass, jacobian: [d_e11, d_e33, e_ratio, d_k11, k_ratio] })
}

/// Record of one optimizer iteration.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct IterationLog {
    pub iteration: usize,
    pub mass: f64,
    pub constraints: ConstraintVector,
    pub kkt: f64,
    pub infeasibility: f64,
    pub triangles: usize,
}

/// One inequality `sign * (c_i - bound) / scale <= 0`.
#[derive(Debug, Clone, Copy)]
struct Inequality {
    index: usize,
    bound: f64,
    sign: f64,
    scale: f64,
}

/// Mass minimization on a fixed mesh, with variables on the periodic
/// degrees of freedom. With a filter chain the physical density is the
/// filtered design and every gradient is pulled back through the chain.
pub struct DesignProblem<'m> {
    mesh: &'m UnitCellMesh,
    law: MaterialLaw,
    rho_min: f64,
    solver: CellSolver<'m>,
    filter: Option<FilterChain>,
    dof_of_vertex: Vec<usize>,
    num_dofs: usize,
    inequalities: Vec<Inequality>,
    last: Option<LastEvaluation>,
    pub log: Vec<IterationLog>,
}

#[derive(Debug, Clone)]
struct LastEvaluation {
    constraints: ConstraintVector,
    mass: f64,
    physical: Vec<f64>,
    tensors: HomogenizedTensors,
}

impl<'m> DesignProblem<'m> {
    pub fn new(
        mesh: &'m UnitCellMesh,
        law: &MaterialLaw,
        bounds: &ConstraintBounds,
        rho_min: f64,
        filter: Option<FilterChain>,
    ) -> Result<Self> {
        bounds.validate()?;
        let (dof_of_vertex, num_dofs) = mesh.periodic_dofs();
        let mut inequalities = Vec::new();
        for i in 0..NUM_CONSTRAINTS {
            let (l, u) = (bounds.lower[i], bounds.upper[i]);
            let scale = if u.is_finite() { l.max(u) } else { l }.max(1e-12);
            // a zero lower bound on a nonnegative quantity is vacuous
            if l > 0.0 {
                inequalities.push(Inequality { index: i, bound: l, sign: -1.0, scale });
            }
            if u.is_finite() {
                inequalities.push(Inequality { index: i, bound: u, sign: 1.0, scale });
            }
        }
        Ok(Self {
            mesh,
            law: *law,
            rho_min,
            solver: CellSolver::new(mesh, law)?,
            filter,
            dof_of_vertex,
            num_dofs,
            inequalities,
            last: None,
            log: Vec::new(),
        })
    }

    pub fn mesh(&self) -> &UnitCellMesh {
        self.mesh
    }

    /// Nodal (per-vertex) field of a degree-of-freedom vector.
    pub fn scatter(&self, x: &[f64]) -> Vec<f64> {
        self.dof_of_vertex.iter().map(|&d| x[d]).collect()
    }

    /// Degree-of-freedom vector of a periodic nodal field.
    pub fn gather(&self, nodal: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.num_dofs];
        for (v, &d) in self.dof_of_vertex.iter().enumerate() {
            out[d] = nodal[v];
        }
        out
    }

    /// Physical density (filtered when a chain is set) of a design.
    pub fn physical(&self, x: &[f64]) -> Result<(Vec<f64>, Option<ChainPoint>)> {
        match &self.filter {
            Some(f) => {
                let p = f.forward(x)?;
                Ok((p.projected.clone(), Some(p)))
            }
            None => Ok((x.to_vec(), None)),
        }
    }

    /// Constrained quantities, mass and their gradients with respect to the
    /// design variables.
    pub fn analyze(&mut self, x: &[f64]) -> Result<(ConstraintVector, f64, Sensitivities, HomogenizedTensors)> {
        let (phys, point) = self.physical(x)?;
        let nodal = self.scatter(&phys);
        let means = element_means(self.mesh, &nodal);
        let sol = self.solver.solve(&means)?;
        let t = homogenize(self.mesh, &self.law, &sol)?;
        let c = constraint_values(&t)?;
        let m = mass(self.mesh, &nodal);
        let mut s = sensitivities_from(self.mesh, &self.law, &sol, &t)?.fold(self.mesh);
        if let (Some(f), Some(p)) = (&self.filter, &point) {
            s.mass = f.vjp(p, &s.mass)?;
            for row in s.jacobian.iter_mut() {
                *row = f.vjp(p, row)?;
            }
        }
        self.last = Some(LastEvaluation { constraints: c, mass: m, physical: nodal, tensors: t });
        Ok((c, m, s, t))
    }

    pub fn lower_bound(&self) -> f64 {
        self.rho_min
    }

    pub fn num_dofs(&self) -> usize {
        self.num_dofs
    }

    /// Physical nodal density, constraints, mass and tensors of the most
    /// recent evaluation.
    pub fn last_state(&self) -> Option<(Vec<f64>, ConstraintVector, f64, HomogenizedTensors)> {
        self.last
            .as_ref()
            .map(|l| (l.physical.clone(), l.constraints, l.mass, l.tensors))
    }
}

impl Problem for DesignProblem<'_> {
    fn num_vars(&self) -> usize {
        self.num_dofs
    }

    fn num_constraints(&self) -> usize {
        self.inequalities.len()
    }

    fn lower(&self) -> Vec<f64> {
        vec![self.rho_min; self.num_dofs]
    }

    fn upper(&self) -> Vec<f64> {
        vec![1.0; self.num_dofs]
    }

    fn evaluate(&mut self, x: &[f64]) -> Result<Evaluation> {
        let (c, m, s, _) = self.analyze(x)?;
        let constraints = self
            .inequalities
            .iter()
            .map(|q| q.sign * (c[q.index] - q.bound) / q.scale)
            .collect();
        let jacobian = self
            .inequalities
            .iter()
            .map(|q| s.jacobian[q.index].iter().map(|d| q.sign * d / q.scale).collect())
            .collect();
        Ok(Evaluation { objective: m, gradient: s.mass, constraints, jacobian })
    }

    fn record(&mut self, step: &Step, _eval: &Evaluation) {
        if let Some(last) = &self.last {
            let entry = IterationLog {
                iteration: step.iteration,
                mass: last.mass,
                constraints: last.constraints,
                kkt: step.kkt,
                infeasibility: step.infeasibility,
                triangles: self.mesh.num_triangles(),
            };
            log::debug!("{}", serde_json::to_string(&entry).unwrap_or_default());
            self.log.push(entry);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mass_of_constants() {
        let m = UnitCellMesh::structured(5).unwrap();
        assert!((mass(&m, &vec![1.0; m.num_vertices()]) - 1.0).abs() < 1e-14);
        assert!((mass(&m, &vec![0.5; m.num_vertices()]) - 0.5).abs() < 1e-14);
    }

    #[test]
    fn violation_is_relative() {
        let b = ConstraintBounds::new([0.1, 0.0, 1.0, 0.0, 0.0], [0.2, 1.0, 2.0, 1.0, f64::INFINITY]).unwrap();
        let v = b.relative_violation(&[0.09, 0.5, 2.2, 0.5, 7.0]);
        assert!((v[0] - 0.1).abs() < 1e-12 && v[1] == 0.0 && (v[2] - 0.1).abs() < 1e-12 && v[4] == 0.0);
    }
}
