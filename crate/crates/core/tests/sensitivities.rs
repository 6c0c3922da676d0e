use metacell::fem::{solve_cell_problems, DensityField, MaterialLaw};
use metacell::filters::{FilterChain, FilterParams};
use metacell::mesh::UnitCellMesh;
use metacell::optimizer::{
    evaluate_constraints, mass, optimize, sensitivities, ConstraintBounds, DesignProblem, MmaSettings, Problem,
    NUM_CONSTRAINTS,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const RHO_MIN: f64 = 1e-4;

fn random_dofs(n: usize, lo: f64, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|_| rng.random_range(lo..1.0)).collect()
}

fn nodal(mesh: &UnitCellMesh, dofs: &[f64]) -> DensityField {
    let (dof, _) = mesh.periodic_dofs();
    DensityField::new(dof.iter().map(|&d| dofs[d]).collect(), RHO_MIN).unwrap()
}

fn values(mesh: &UnitCellMesh, dofs: &[f64], law: &MaterialLaw) -> [f64; NUM_CONSTRAINTS + 1] {
    let rho = nodal(mesh, dofs);
    let (c, _, _) = evaluate_constraints(mesh, &rho, law).unwrap();
    let m = mass(mesh, rho.values());
    [c[0], c[1], c[2], c[3], c[4], m]
}

#[test]
fn adjoint_matches_central_differences() {
    let mesh = UnitCellMesh::structured(8).unwrap();
    let law = MaterialLaw::default();
    let (_, n) = mesh.periodic_dofs();
    let x = random_dofs(n, 0.1, 11);
    let rho = nodal(&mesh, &x);
    let sol = solve_cell_problems(&mesh, &rho, &law).unwrap();
    let s = sensitivities(&mesh, &rho, &law, &sol).unwrap().fold(&mesh);
    let mut rows: Vec<&Vec<f64>> = s.jacobian.iter().collect();
    rows.push(&s.mass);
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let h = 1e-6;
    for _ in 0..20 {
        let d: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
        let plus: Vec<f64> = x.iter().zip(&d).map(|(a, b)| a + h * b).collect();
        let minus: Vec<f64> = x.iter().zip(&d).map(|(a, b)| a - h * b).collect();
        let (fp, fm) = (values(&mesh, &plus, &law), values(&mesh, &minus, &law));
        for (r, row) in rows.iter().enumerate() {
            let adjoint: f64 = row.iter().zip(&d).map(|(g, di)| g * di).sum();
            let fd = (fp[r] - fm[r]) / (2.0 * h);
            let rel = (adjoint - fd).abs() / fd.abs().max(1e-8);
            assert!(rel <= 1e-4, "row {r}: adjoint {adjoint:e} vs fd {fd:e}");
        }
    }
}

#[test]
fn filtered_problem_gradients_match_differences() {
    let mesh = UnitCellMesh::structured(8).unwrap();
    let law = MaterialLaw::default();
    let bounds = ConstraintBounds::new([0.01, 0.01, 0.5, 0.01, 0.1], [1.0, 1.0, 2.0, 1.0, f64::INFINITY]).unwrap();
    let chain = FilterChain::new(&mesh, FilterParams { tau: 0.05, beta: 2.0, eta: 0.5 }, RHO_MIN).unwrap();
    let mut p = DesignProblem::new(&mesh, &law, &bounds, RHO_MIN, Some(chain)).unwrap();
    let n = p.num_vars();
    let x = random_dofs(n, 0.3, 2);
    let e = p.evaluate(&x).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let h = 1e-6;
    for _ in 0..5 {
        let d: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
        let ep = p.evaluate(&x.iter().zip(&d).map(|(a, b)| a + h * b).collect::<Vec<_>>()).unwrap();
        let em = p.evaluate(&x.iter().zip(&d).map(|(a, b)| a - h * b).collect::<Vec<_>>()).unwrap();
        let dot = |g: &[f64]| g.iter().zip(&d).map(|(a, b)| a * b).sum::<f64>();
        let fd = (ep.objective - em.objective) / (2.0 * h);
        assert!((dot(&e.gradient) - fd).abs() <= 1e-4 * fd.abs().max(1e-8));
        for i in 0..e.constraints.len() {
            let fd = (ep.constraints[i] - em.constraints[i]) / (2.0 * h);
            let g = dot(&e.jacobian[i]);
            assert!((g - fd).abs() <= 1e-4 * fd.abs().max(1e-8), "constraint {i}: {g:e} vs {fd:e}");
        }
    }
}

#[test]
fn mass_gradient_is_a_partition_of_unity() {
    let mesh = UnitCellMesh::structured(8).unwrap();
    let law = MaterialLaw::default();
    let rho = DensityField::uniform(&mesh, 1.0, RHO_MIN).unwrap();
    let sol = solve_cell_problems(&mesh, &rho, &law).unwrap();
    let s = sensitivities(&mesh, &rho, &law, &sol).unwrap();
    assert!((s.mass.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    assert!(s.mass.iter().all(|&g| g >= 0.0));
}

#[test]
fn ratio_gradients_are_orthogonal_to_uniform_scaling() {
    let mesh = UnitCellMesh::structured(8).unwrap();
    let law = MaterialLaw::default();
    let rho = DensityField::uniform(&mesh, 0.6, RHO_MIN).unwrap();
    let sol = solve_cell_problems(&mesh, &rho, &law).unwrap();
    let s = sensitivities(&mesh, &rho, &law, &sol).unwrap();
    for row in [2, 4] {
        let along: f64 = s.jacobian[row].iter().sum();
        assert!(along.abs() < 1e-9, "row {row}: {along:e}");
    }
}

#[test]
fn stiffness_rows_scale_with_young_modulus() {
    let mesh = UnitCellMesh::structured(6).unwrap();
    let (_, n) = mesh.periodic_dofs();
    let rho = nodal(&mesh, &random_dofs(n, 0.1, 4));
    let jac = |law: &MaterialLaw| {
        let sol = solve_cell_problems(&mesh, &rho, law).unwrap();
        sensitivities(&mesh, &rho, law, &sol).unwrap().jacobian
    };
    let base = jac(&MaterialLaw::default());
    let scaled = jac(&MaterialLaw { young: 10.0, ..Default::default() });
    for r in 0..NUM_CONSTRAINTS {
        let f = if r < 2 { 10.0 } else { 1.0 };
        for (a, b) in base[r].iter().zip(&scaled[r]) {
            assert!((f * a - b).abs() <= 1e-9 * (b.abs() + 1e-12), "row {r}");
        }
    }
}

#[test]
fn stale_solutions_are_rejected() {
    let mesh = UnitCellMesh::structured(4).unwrap();
    let law = MaterialLaw::default();
    let a = DensityField::uniform(&mesh, 0.5, RHO_MIN).unwrap();
    let b = DensityField::uniform(&mesh, 0.6, RHO_MIN).unwrap();
    let sol = solve_cell_problems(&mesh, &a, &law).unwrap();
    assert!(matches!(sensitivities(&mesh, &b, &law, &sol), Err(metacell::Error::StaleSolutions)));
}

#[test]
fn unconstrained_mass_minimization_empties_the_cell() {
    let mesh = UnitCellMesh::structured(8).unwrap();
    let bounds = ConstraintBounds::new([0.0; 5], [f64::INFINITY; 5]).unwrap();
    let mut p = DesignProblem::new(&mesh, &MaterialLaw::default(), &bounds, RHO_MIN, None).unwrap();
    assert_eq!(p.num_constraints(), 0);
    let x0 = vec![1.0; p.num_vars()];
    let out = optimize(&mut p, &x0, &MmaSettings { max_iterations: 50, ..Default::default() }).unwrap();
    assert!(out.x.iter().all(|&v| (v - RHO_MIN).abs() < 1e-6), "max {}", out.x.iter().cloned().fold(0.0, f64::max));
}

#[test]
fn single_stiffness_constraint_is_met_with_less_mass() {
    let mesh = UnitCellMesh::structured(16).unwrap();
    let bounds = ConstraintBounds::new([0.1, 0.0, 0.0, 0.0, 0.0], [f64::INFINITY; 5]).unwrap();
    let law = MaterialLaw::default();
    let mut p = DesignProblem::new(&mesh, &law, &bounds, RHO_MIN, None).unwrap();
    let x0 = vec![1.0; p.num_vars()];
    let out = optimize(&mut p, &x0, &MmaSettings { max_iterations: 100, ..Default::default() }).unwrap();
    assert!(out.x.iter().all(|&v| (RHO_MIN..=1.0).contains(&v)));
    let rho = DensityField::new(p.scatter(&out.x), RHO_MIN).unwrap();
    let (c, _, _) = evaluate_constraints(&mesh, &rho, &law).unwrap();
    assert!(c[0] >= 0.1 * 0.99, "E1111 = {}", c[0]);
    assert!(mass(&mesh, rho.values()) < 1.0);
}

#[test]
fn optimizer_is_deterministic() {
    let mesh = UnitCellMesh::structured(6).unwrap();
    let bounds = ConstraintBounds::new([0.05, 0.02, 0.8, 0.05, 0.0], [0.2, 0.2, 1.5, 1.0, 0.8]).unwrap();
    let law = MaterialLaw::default();
    let run = || {
        let mut p = DesignProblem::new(&mesh, &law, &bounds, RHO_MIN, None).unwrap();
        let x0 = random_dofs(p.num_vars(), RHO_MIN, 3);
        optimize(&mut p, &x0, &MmaSettings { max_iterations: 15, ..Default::default() }).unwrap().x
    };
    let (a, b) = (run(), run());
    assert!(a.iter().zip(&b).all(|(x, y)| x.to_bits() == y.to_bits()));
}
