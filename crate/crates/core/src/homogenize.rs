//! Homogenized elastic and conductivity tensors.
//!
//! With the fluctuations `u*` of the cell problems,
//!
//! `E^H_ab = int_Y rho^p (e_a - eps(u*_a)) : D (e_b - eps(u*_b))`
//!
//! and analogously `k^H_mn` with `rho^s`, the unit gradients and the
//! conductivity. All integrands are constant per element.

use nalgebra::{Matrix2, Matrix3, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fem::{
    element_strain, reference_gradient, reference_strain, CellSolutions, DensityField,
    ElasticFluctuations, MaterialLaw, ThermalFluctuations,
};
use crate::mesh::UnitCellMesh;

/// Condition number above which [`engineering_moduli`] refuses to invert.
pub const MAX_CONDITION: f64 = 1e14;

/// Voigt elastic tensor and conductivity tensor, normalized by the bulk
/// properties.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HomogenizedTensors {
    pub elastic: [[f64; 3]; 3],
    pub thermal: [[f64; 2]; 2],
}

impl HomogenizedTensors {
    pub fn e1111(&self) -> f64 {
        self.elastic[0][0]
    }

    pub fn e2222(&self) -> f64 {
        self.elastic[1][1]
    }

    pub fn e1212(&self) -> f64 {
        self.elastic[2][2]
    }

    pub fn k11(&self) -> f64 {
        self.thermal[0][0]
    }

    pub fn k22(&self) -> f64 {
        self.thermal[1][1]
    }

    pub fn elastic_matrix(&self) -> Matrix3<f64> {
        Matrix3::from_fn(|i, j| self.elastic[i][j])
    }

    pub fn thermal_matrix(&self) -> Matrix2<f64> {
        Matrix2::from_fn(|i, j| self.thermal[i][j])
    }
}

/// Directional moduli read off the compliance `C = (E^H)^-1`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EngineeringModuli {
    pub young_x: f64,
    pub young_y: f64,
    pub shear: f64,
    pub k11: f64,
    pub k22: f64,
}

/// Corrected strains `e_a - eps(u*_a)` of element `k`, one per load case.
pub fn corrected_strains(mesh: &UnitCellMesh, k: usize, fl: &ElasticFluctuations) -> [[f64; 3]; 3] {
    std::array::from_fn(|a| {
        let e = reference_strain(a);
        let s = element_strain(mesh, k, &fl.fields[a]);
        [e[0] - s[0], e[1] - s[1], e[2] - s[2]]
    })
}

/// Corrected gradients `e_m - grad(theta*_m)` of element `k`.
pub fn corrected_gradients(mesh: &UnitCellMesh, k: usize, fl: &ThermalFluctuations) -> [[f64; 2]; 2] {
    std::array::from_fn(|m| {
        let e = reference_gradient(m);
        let g = mesh.gradient(k, &fl.fields[m]);
        [e[0] - g[0], e[1] - g[1]]
    })
}

/// Unweighted elastic energy densities `(e_a - eps_a)^T D (e_b - eps_b)`
/// per element, times the element area.
pub fn elastic_element_energies(
    mesh: &UnitCellMesh,
    law: &MaterialLaw,
    fl: &ElasticFluctuations,
) -> Result<Vec<[[f64; 3]; 3]>> {
    check_len(mesh, fl.fields[0].len())?;
    let d = law.elastic_matrix()?;
    Ok((0..mesh.num_triangles())
        .map(|k| {
            let area = mesh.area(k);
            let eps = corrected_strains(mesh, k, fl);
            let sig: [[f64; 3]; 3] =
                std::array::from_fn(|a| std::array::from_fn(|i| (0..3).map(|j| d[(i, j)] * eps[a][j]).sum()));
            std::array::from_fn(|a| {
                std::array::from_fn(|b| area * (0..3).map(|i| sig[a][i] * eps[b][i]).sum::<f64>())
            })
        })
        .collect())
}

/// Thermal counterpart of [`elastic_element_energies`].
pub fn thermal_element_energies(
    mesh: &UnitCellMesh,
    law: &MaterialLaw,
    fl: &ThermalFluctuations,
) -> Result<Vec<[[f64; 2]; 2]>> {
    check_len(mesh, fl.fields[0].len())?;
    let kc = law.conductivity();
    Ok((0..mesh.num_triangles())
        .map(|k| {
            let area = mesh.area(k);
            let g = corrected_gradients(mesh, k, fl);
            std::array::from_fn(|m| {
                std::array::from_fn(|n| {
                    let q = [
                        kc[(0, 0)] * g[m][0] + kc[(0, 1)] * g[m][1],
                        kc[(1, 0)] * g[m][0] + kc[(1, 1)] * g[m][1],
                    ];
                    area * (q[0] * g[n][0] + q[1] * g[n][1])
                })
            })
        })
        .collect())
}

fn check_len(mesh: &UnitCellMesh, n: usize) -> Result<()> {
    if n != mesh.num_vertices() {
        return Err(Error::InvalidArgument(format!(
            "fluctuation field has {n} vertices, mesh has {}",
            mesh.num_vertices()
        )));
    }
    Ok(())
}

fn weighted_sum<const N: usize>(energies: &[[[f64; N]; N]], element_density: &[f64], exp: f64) -> [[f64; N]; N] {
    let mut out = [[0.0; N]; N];
    for (e, w) in energies.iter().zip(element_density) {
        let f = w.powf(exp);
        for a in 0..N {
            for b in 0..N {
                out[a][b] += f * e[a][b];
            }
        }
    }
    // the unit cell has |Y| = 1; symmetrize away round-off
    for a in 0..N {
        for b in a + 1..N {
            let m = 0.5 * (out[a][b] + out[b][a]);
            out[a][b] = m;
            out[b][a] = m;
        }
    }
    out
}

/// Homogenized elastic tensor for nodal density `rho`.
pub fn elastic_tensor(
    mesh: &UnitCellMesh,
    rho: &DensityField,
    law: &MaterialLaw,
    fl: &ElasticFluctuations,
) -> Result<[[f64; 3]; 3]> {
    rho.check_on(mesh)?;
    let energies = elastic_element_energies(mesh, law, fl)?;
    Ok(weighted_sum(&energies, &rho.element_means(mesh), law.p))
}

/// Homogenized conductivity tensor for nodal density `rho`.
pub fn thermal_tensor(
    mesh: &UnitCellMesh,
    rho: &DensityField,
    law: &MaterialLaw,
    fl: &ThermalFluctuations,
) -> Result<[[f64; 2]; 2]> {
    rho.check_on(mesh)?;
    let energies = thermal_element_energies(mesh, law, fl)?;
    Ok(weighted_sum(&energies, &rho.element_means(mesh), law.s))
}

/// Both tensors from solutions of the cell problems.
pub fn homogenize(mesh: &UnitCellMesh, law: &MaterialLaw, sol: &CellSolutions) -> Result<HomogenizedTensors> {
    sol.ensure_current(mesh, &sol.element_density)?;
    let el = elastic_element_energies(mesh, law, &sol.elastic)?;
    let th = thermal_element_energies(mesh, law, &sol.thermal)?;
    let tensors = HomogenizedTensors {
        elastic: weighted_sum(&el, &sol.element_density, law.p),
        thermal: weighted_sum(&th, &sol.element_density, law.s),
    };
    let finite = tensors.elastic.iter().flatten().chain(tensors.thermal.iter().flatten()).all(|v| v.is_finite());
    if !finite {
        return Err(Error::NonFinite("homogenized tensors".into()));
    }
    Ok(tensors)
}

/// Mutual-energy form `int rho^p sigma(e_a - eps(u*_a)) : e_b`, equal to the
/// energy form by Galerkin orthogonality.
pub fn elastic_tensor_mutual(
    mesh: &UnitCellMesh,
    law: &MaterialLaw,
    element_density: &[f64],
    fl: &ElasticFluctuations,
) -> Result<[[f64; 3]; 3]> {
    let d = law.elastic_matrix()?;
    let mut out = [[0.0; 3]; 3];
    for k in 0..mesh.num_triangles() {
        let w = element_density[k].powf(law.p) * mesh.area(k);
        let eps = corrected_strains(mesh, k, fl);
        for a in 0..3 {
            let sig: [f64; 3] = std::array::from_fn(|i| (0..3).map(|j| d[(i, j)] * eps[a][j]).sum());
            for b in 0..3 {
                out[a][b] += w * sig[b];
            }
        }
    }
    Ok(out)
}

/// Directional Young moduli, shear modulus and conductivities.
pub fn engineering_moduli(t: &HomogenizedTensors) -> Result<EngineeringModuli> {
    let e = t.elastic_matrix();
    if !e.iter().all(|v| v.is_finite()) {
        return Err(Error::DegenerateTensor("non-finite elastic tensor".into()));
    }
    let eig = SymmetricEigen::new(e).eigenvalues;
    let (lo, hi) = (eig.min(), eig.max());
    if !(lo > 0.0) || hi / lo > MAX_CONDITION {
        return Err(Error::DegenerateTensor(format!(
            "elastic tensor eigenvalues in [{lo:e}, {hi:e}] are not safely positive definite"
        )));
    }
    let c = e
        .try_inverse()
        .ok_or_else(|| Error::DegenerateTensor("singular elastic tensor".into()))?;
    Ok(EngineeringModuli {
        young_x: 1.0 / c[(0, 0)],
        young_y: 1.0 / c[(1, 1)],
        shear: 1.0 / c[(2, 2)],
        k11: t.k11(),
        k22: t.k22(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fem::{solve_cell_problems, DensityField};

    fn bulk() -> MaterialLaw {
        MaterialLaw::default()
    }

    #[test]
    fn full_material_recovers_bulk() {
        let m = UnitCellMesh::structured(6).unwrap();
        let rho = DensityField::uniform(&m, 1.0, 1e-4).unwrap();
        let sol = solve_cell_problems(&m, &rho, &bulk()).unwrap();
        let t = homogenize(&m, &bulk(), &sol).unwrap();
        let d = bulk().elastic_matrix().unwrap();
        for i in 0..3 {
            for j in 0..3 {
                assert!((t.elastic[i][j] - d[(i, j)]).abs() < 1e-10);
            }
        }
        assert!((t.k11() - 1.0).abs() < 1e-10 && t.thermal[0][1].abs() < 1e-10);
    }

    #[test]
    fn mutual_energy_matches_energy_form() {
        let m = UnitCellMesh::structured(8).unwrap();
        let (map, _) = m.periodic_dofs();
        let vals: Vec<f64> = map
            .iter()
            .map(|&d| 0.05 + 0.9 * ((d as f64 * 0.731).sin() * 0.5 + 0.5))
            .collect();
        let rho = DensityField::new(vals, 1e-4).unwrap();
        let sol = solve_cell_problems(&m, &rho, &bulk()).unwrap();
        let t = homogenize(&m, &bulk(), &sol).unwrap();
        let mutual = elastic_tensor_mutual(&m, &bulk(), &sol.element_density, &sol.elastic).unwrap();
        for a in 0..3 {
            for b in 0..3 {
                assert!((t.elastic[a][b] - mutual[a][b]).abs() < 1e-9, "{a}{b}");
            }
        }
    }

    #[test]
    fn moduli_of_bulk_plane_stress() {
        let d = bulk().elastic_matrix().unwrap();
        let t = HomogenizedTensors {
            elastic: std::array::from_fn(|i| std::array::from_fn(|j| d[(i, j)])),
            thermal: [[1.0, 0.0], [0.0, 1.0]],
        };
        let m = engineering_moduli(&t).unwrap();
        assert!((m.young_x - 1.0).abs() < 1e-10 && (m.young_y - 1.0).abs() < 1e-10);
        assert!((m.shear - 1.0 / 2.6).abs() < 1e-10);
    }

    #[test]
    fn singular_tensor_is_rejected() {
        let t = HomogenizedTensors {
            elastic: [[1.0, 1.0, 0.0], [1.0, 1.0, 0.0], [0.0, 0.0, 1.0]],
            thermal: [[1.0, 0.0], [0.0, 1.0]],
        };
        assert!(matches!(engineering_moduli(&t), Err(Error::DegenerateTensor(_))));
    }
}
