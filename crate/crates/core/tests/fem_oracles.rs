use approx::assert_relative_eq;
use metacell::fem::{
    elastic_constitutive, solve_cell_problems, solve_elastic_cell_problems, solve_thermal_cell_problems,
    DensityField, MaterialLaw,
};
use metacell::homogenize::{engineering_moduli, homogenize, HomogenizedTensors};
use metacell::mesh::UnitCellMesh;
use nalgebra::{DMatrix, Matrix3};

const RHO_MIN: f64 = 1e-4;

fn field(mesh: &UnitCellMesh, f: impl Fn([f64; 2]) -> f64) -> DensityField {
    let v = (0..mesh.num_vertices())
        .map(|i| f(mesh.vertices()[mesh.master_of(i)]))
        .collect();
    DensityField::new(v, RHO_MIN).unwrap()
}

fn checkerboard(mesh: &UnitCellMesh, n: usize) -> DensityField {
    field(mesh, |p| {
        let (i, j) = ((p[0] * n as f64 + 0.5) as usize, (p[1] * n as f64 + 0.5) as usize);
        if (i + j) % 2 == 0 { 1.0 } else { RHO_MIN }
    })
}

fn plane_stress(e: f64, nu: f64) -> Matrix3<f64> {
    let c = e / (1.0 - nu * nu);
    Matrix3::new(c, c * nu, 0.0, c * nu, c, 0.0, 0.0, 0.0, c * (1.0 - nu) / 2.0)
}

/// Straight-line P1 data of triangle `k`: area and basis gradients.
fn p1(mesh: &UnitCellMesh, k: usize) -> (f64, [[f64; 2]; 3]) {
    let [a, b, c] = mesh.triangles()[k].map(|v| mesh.vertices()[v]);
    let det = (b[0] - a[0]) * (c[1] - a[1]) - (c[0] - a[0]) * (b[1] - a[1]);
    let g = [
        [(b[1] - c[1]) / det, (c[0] - b[0]) / det],
        [(c[1] - a[1]) / det, (a[0] - c[0]) / det],
        [(a[1] - b[1]) / det, (b[0] - a[0]) / det],
    ];
    (0.5 * det, g)
}

/// Dense periodic elastic system with the first corner pinned, solved by LU.
/// Returns per-vertex fluctuations for each unit strain.
fn dense_elastic(mesh: &UnitCellMesh, rho: &DensityField, law: &MaterialLaw) -> [Vec<[f64; 2]>; 3] {
    let (dof, n) = mesh.periodic_dofs();
    let pinned = dof[mesh.corner_group()[0]];
    let d = plane_stress(law.young, law.poisson);
    let mut k_mat = DMatrix::<f64>::zeros(2 * n, 2 * n);
    let mut rhs = DMatrix::<f64>::zeros(2 * n, 3);
    let means = rho.element_means(mesh);
    for (t, tri) in mesh.triangles().iter().enumerate() {
        let (area, g) = p1(mesh, t);
        let w = means[t].powf(law.p) * area;
        let mut b = nalgebra::SMatrix::<f64, 3, 6>::zeros();
        for i in 0..3 {
            b[(0, 2 * i)] = g[i][0];
            b[(1, 2 * i + 1)] = g[i][1];
            b[(2, 2 * i)] = g[i][1];
            b[(2, 2 * i + 1)] = g[i][0];
        }
        let ke = b.transpose() * d * b * w;
        let fe = b.transpose() * d * w;
        let idx: Vec<usize> = (0..6).map(|l| 2 * dof[tri[l / 2]] + l % 2).collect();
        for r in 0..6 {
            for c in 0..6 {
                k_mat[(idx[r], idx[c])] += ke[(r, c)];
            }
            for a in 0..3 {
                rhs[(idx[r], a)] += fe[(r, a)];
            }
        }
    }
    for c in [2 * pinned, 2 * pinned + 1] {
        k_mat.row_mut(c).fill(0.0);
        k_mat.column_mut(c).fill(0.0);
        k_mat[(c, c)] = 1.0;
        rhs.row_mut(c).fill(0.0);
    }
    let sol = k_mat.lu().solve(&rhs).expect("nonsingular");
    std::array::from_fn(|a| {
        (0..mesh.num_vertices())
            .map(|v| [sol[(2 * dof[v], a)], sol[(2 * dof[v] + 1, a)]])
            .collect()
    })
}

fn dense_thermal(mesh: &UnitCellMesh, rho: &DensityField, law: &MaterialLaw) -> [Vec<f64>; 2] {
    let (dof, n) = mesh.periodic_dofs();
    let pinned = dof[mesh.corner_group()[0]];
    let mut k_mat = DMatrix::<f64>::zeros(n, n);
    let mut rhs = DMatrix::<f64>::zeros(n, 2);
    let means = rho.element_means(mesh);
    let kk = [law.k11, law.k22];
    for (t, tri) in mesh.triangles().iter().enumerate() {
        let (area, g) = p1(mesh, t);
        let w = means[t].powf(law.s) * area;
        for r in 0..3 {
            for c in 0..3 {
                k_mat[(dof[tri[r]], dof[tri[c]])] += w * (kk[0] * g[r][0] * g[c][0] + kk[1] * g[r][1] * g[c][1]);
            }
            for a in 0..2 {
                rhs[(dof[tri[r]], a)] += w * kk[a] * g[r][a];
            }
        }
    }
    k_mat.row_mut(pinned).fill(0.0);
    k_mat.column_mut(pinned).fill(0.0);
    k_mat[(pinned, pinned)] = 1.0;
    rhs.row_mut(pinned).fill(0.0);
    let sol = k_mat.lu().solve(&rhs).expect("nonsingular");
    std::array::from_fn(|a| (0..mesh.num_vertices()).map(|v| sol[(dof[v], a)]).collect())
}

fn max_abs(v: impl Iterator<Item = f64>) -> f64 {
    v.fold(0.0, |a, x| a.max(x.abs()))
}

#[test]
fn plane_stress_constitutive_matrix() {
    let d = elastic_constitutive(&MaterialLaw::default()).unwrap();
    assert_relative_eq!(d[(0, 0)], 1.0 / 0.91, epsilon = 1e-12);
    assert_relative_eq!(d[(0, 1)], 0.3 / 0.91, epsilon = 1e-12);
    assert_relative_eq!(d[(2, 2)], 1.0 / 2.6, epsilon = 1e-12);
    assert_eq!(d, d.transpose());
    let d0 = elastic_constitutive(&MaterialLaw { poisson: 0.0, ..Default::default() }).unwrap();
    assert_relative_eq!(d0, Matrix3::from_diagonal(&nalgebra::Vector3::new(1.0, 1.0, 0.5)), epsilon = 1e-15);
}

#[test]
fn uniform_densities_have_no_fluctuation() {
    let mesh = UnitCellMesh::structured(6).unwrap();
    let law = MaterialLaw::default();
    for c in [1.0, RHO_MIN] {
        let rho = DensityField::uniform(&mesh, c, RHO_MIN).unwrap();
        let el = solve_elastic_cell_problems(&mesh, &rho, &law).unwrap();
        let th = solve_thermal_cell_problems(&mesh, &rho, &law).unwrap();
        assert!(max_abs(el.fields.iter().flatten().flat_map(|p| *p)) < 1e-10);
        assert!(max_abs(th.fields.iter().flatten().copied()) < 1e-10);
    }
}

#[test]
fn checkerboard_matches_dense_oracle() {
    let mesh = UnitCellMesh::structured(8).unwrap();
    let law = MaterialLaw::default();
    let rho = checkerboard(&mesh, 8);
    let el = solve_elastic_cell_problems(&mesh, &rho, &law).unwrap();
    let oracle = dense_elastic(&mesh, &rho, &law);
    for a in 0..3 {
        let scale = max_abs(oracle[a].iter().flat_map(|p| *p)).max(1e-12);
        let diff = max_abs(el.fields[a].iter().zip(&oracle[a]).flat_map(|(u, o)| [u[0] - o[0], u[1] - o[1]]));
        assert!(diff <= 1e-8 * scale, "elastic case {a}: {diff:e} vs scale {scale:e}");
    }
    let th = solve_thermal_cell_problems(&mesh, &rho, &law).unwrap();
    let oracle = dense_thermal(&mesh, &rho, &law);
    for a in 0..2 {
        let scale = max_abs(oracle[a].iter().copied()).max(1e-12);
        let diff = max_abs(th.fields[a].iter().zip(&oracle[a]).map(|(u, o)| u - o));
        assert!(diff <= 1e-8 * scale, "thermal case {a}: {diff:e}");
    }
}

#[test]
fn horizontal_layers_leave_the_x_gradient_unperturbed() {
    let n = 16;
    let mesh = UnitCellMesh::structured(n).unwrap();
    let rho = field(&mesh, |p| if p[1] < 0.5 { 1.0 } else { 0.3 });
    let th = solve_thermal_cell_problems(&mesh, &rho, &MaterialLaw::default()).unwrap();
    assert!(max_abs(th.fields[0].iter().copied()) < 1e-10);
    assert!(max_abs(th.fields[1].iter().copied()) > 1e-3);
}

fn tensors(mesh: &UnitCellMesh, rho: &DensityField, law: &MaterialLaw) -> HomogenizedTensors {
    homogenize(mesh, law, &solve_cell_problems(mesh, rho, law).unwrap()).unwrap()
}

#[test]
fn full_material_and_uniform_scaling() {
    let mesh = UnitCellMesh::structured(10).unwrap();
    let law = MaterialLaw::default();
    let bulk = plane_stress(1.0, 0.3);
    for c in [1.0, 0.3, 0.7] {
        let t = tensors(&mesh, &DensityField::uniform(&mesh, c, RHO_MIN).unwrap(), &law);
        let f = c.powi(4);
        for i in 0..3 {
            for j in 0..3 {
                assert!((t.elastic[i][j] - f * bulk[(i, j)]).abs() <= 1e-10 * f);
            }
        }
        for i in 0..2 {
            for j in 0..2 {
                let want = if i == j { f } else { 0.0 };
                assert!((t.thermal[i][j] - want).abs() <= 1e-10 * f);
            }
        }
    }
}

#[test]
fn laminate_approaches_arithmetic_and_harmonic_means() {
    let law = MaterialLaw::default();
    let mut prev = f64::INFINITY;
    for n in [16, 32, 64] {
        let mesh = UnitCellMesh::structured(n).unwrap();
        // n/2 full element rows; the row closing the seam is mixed
        let rho = field(&mesh, |p| if p[1] <= 0.5 + 1e-12 { 1.0 } else { RHO_MIN });
        let t = tensors(&mesh, &rho, &law);
        let err = (t.k11() - 0.5).abs();
        assert!(err < prev, "k11 error did not decrease: {err} at n = {n}");
        prev = err;
        assert!(t.k22() <= 1e-6, "k22 = {:e}", t.k22());
    }
    assert!(prev < 0.02 * 0.5);
}

#[test]
fn engineering_moduli_of_known_tensors() {
    let bulk = plane_stress(1.0, 0.3);
    let t = HomogenizedTensors {
        elastic: std::array::from_fn(|i| std::array::from_fn(|j| bulk[(i, j)])),
        thermal: [[1.0, 0.0], [0.0, 1.0]],
    };
    let m = engineering_moduli(&t).unwrap();
    assert_relative_eq!(m.young_x, 1.0, epsilon = 1e-10);
    assert_relative_eq!(m.young_y, 1.0, epsilon = 1e-10);
    assert_relative_eq!(m.shear, 1.0 / 2.6, epsilon = 1e-10);
    let id = HomogenizedTensors {
        elastic: [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]],
        thermal: [[1.0, 0.0], [0.0, 1.0]],
    };
    let m = engineering_moduli(&id).unwrap();
    assert_relative_eq!(m.young_x, 1.0, epsilon = 1e-12);
    assert_relative_eq!(m.shear, 1.0, epsilon = 1e-12);
}
