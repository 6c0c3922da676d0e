use metacell::fem::DensityField;
use metacell::filters::{heaviside, heaviside_project, helmholtz_filter, FilterChain, FilterParams};
use metacell::mesh::UnitCellMesh;
use num::rational::BigRational;
use num::{BigInt, One, ToPrimitive};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const RHO_MIN: f64 = 1e-4;

fn mass(mesh: &UnitCellMesh, v: &[f64]) -> f64 {
    mesh.triangles()
        .iter()
        .enumerate()
        .map(|(k, t)| mesh.area(k) * t.iter().map(|&i| v[i]).sum::<f64>() / 3.0)
        .sum()
}

#[test]
fn constants_are_fixed_points_of_smoothing() {
    let mesh = UnitCellMesh::structured(12).unwrap();
    for c in [RHO_MIN, 0.37, 1.0] {
        let rho = DensityField::uniform(&mesh, c, RHO_MIN).unwrap();
        let out = helmholtz_filter(&mesh, &rho, 0.05).unwrap();
        assert!(out.values().iter().all(|v| (v - c).abs() < 1e-12));
    }
}

#[test]
fn zero_radius_is_the_identity() {
    let mesh = UnitCellMesh::structured(8).unwrap();
    let (dof, n) = mesh.periodic_dofs();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let x: Vec<f64> = (0..n).map(|_| rng.random_range(RHO_MIN..1.0)).collect();
    let rho = DensityField::new(dof.iter().map(|&d| x[d]).collect(), RHO_MIN).unwrap();
    let out = helmholtz_filter(&mesh, &rho, 0.0).unwrap();
    assert_eq!(out.values(), rho.values());
}

#[test]
fn spike_is_spread_with_mass_kept() {
    let n = 16;
    let mesh = UnitCellMesh::structured(n).unwrap();
    let centre = mesh
        .vertices()
        .iter()
        .position(|p| (p[0] - 0.5).abs() < 1e-12 && (p[1] - 0.5).abs() < 1e-12)
        .unwrap();
    let mut v = vec![0.1; mesh.num_vertices()];
    v[centre] = 1.0;
    let rho = DensityField::new(v, RHO_MIN).unwrap();
    let out = helmholtz_filter(&mesh, &rho, 0.02).unwrap();
    let before = mass(&mesh, rho.values());
    let after = mass(&mesh, out.values());
    assert!((before - after).abs() < 1e-12 * before, "{before} vs {after}");
    let peak = out.values().iter().cloned().fold(0.0, f64::max);
    assert!(peak < 1.0 && peak > 0.1);
}

#[test]
fn projection_threshold_and_symmetry() {
    let (beta, eta) = (5.0, 0.5);
    assert!((heaviside(eta, beta, eta) - 0.5).abs() < 1e-15);
    assert!(heaviside(0.0, beta, eta).abs() < 1e-15);
    assert!((heaviside(1.0, beta, eta) - 1.0).abs() < 1e-15);
    for x in [0.1, 0.3, 0.45] {
        let s = heaviside(x, beta, eta) + heaviside(1.0 - x, beta, eta);
        assert!((s - 1.0).abs() < 1e-14);
    }
    let flat: Vec<f64> = (1..10).map(|i| i as f64 / 10.0).collect();
    let out = heaviside_project(&flat, 1e-8, 0.5, RHO_MIN);
    for (a, b) in flat.iter().zip(&out) {
        assert!((a - b).abs() < 1e-9);
    }
}

/// tanh(q) from exact exp series in rationals; |q| small enough for 60 terms.
fn tanh_exact(q: &BigRational) -> BigRational {
    let two = BigRational::from_integer(BigInt::from(2));
    let z = q * &two;
    let mut term = BigRational::one();
    let mut sum = BigRational::one();
    for k in 1..80 {
        term = term * &z / BigRational::from_integer(BigInt::from(k));
        sum += &term;
    }
    (&sum - BigRational::one()) / (sum + BigRational::one())
}

#[test]
fn projection_matches_exact_arithmetic() {
    let r = |n: i64, d: i64| BigRational::new(BigInt::from(n), BigInt::from(d));
    let (beta, eta, x) = (r(5, 1), r(1, 2), r(4, 5));
    let a = tanh_exact(&(&beta * &eta));
    let num = &a + tanh_exact(&(&beta * (&x - &eta)));
    let den = &a + tanh_exact(&(&beta * (BigRational::one() - &eta)));
    let exact = (num / den).to_f64().unwrap();
    let got = heaviside(0.8, 5.0, 0.5);
    assert!((got - exact).abs() < 1e-14, "{got} vs {exact}");
}

fn chain_setup() -> (UnitCellMesh, Vec<f64>) {
    let mesh = UnitCellMesh::structured(10).unwrap();
    let (_, n) = mesh.periodic_dofs();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let x = (0..n).map(|_| rng.random_range(0.2..0.8)).collect();
    (mesh, x)
}

#[test]
fn chain_derivatives_match_differences() {
    let (mesh, x) = chain_setup();
    let chain = FilterChain::new(&mesh, FilterParams { tau: 0.03, beta: 4.0, eta: 0.5 }, RHO_MIN).unwrap();
    let point = chain.forward(&x).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let h = 1e-6;
    for _ in 0..5 {
        let d: Vec<f64> = (0..x.len()).map(|_| rng.random_range(-1.0..1.0)).collect();
        let jd = chain.jvp(&point, &d).unwrap();
        let plus = chain.forward(&x.iter().zip(&d).map(|(a, b)| a + h * b).collect::<Vec<_>>()).unwrap();
        let minus = chain.forward(&x.iter().zip(&d).map(|(a, b)| a - h * b).collect::<Vec<_>>()).unwrap();
        let scale = jd.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        for i in 0..x.len() {
            let fd = (plus.projected[i] - minus.projected[i]) / (2.0 * h);
            assert!((fd - jd[i]).abs() <= 1e-5 * scale, "node {i}: {fd} vs {}", jd[i]);
        }
    }
}

#[test]
fn vjp_is_the_adjoint_of_jvp() {
    let (mesh, x) = chain_setup();
    let chain = FilterChain::new(&mesh, FilterParams::default(), RHO_MIN).unwrap();
    let point = chain.forward(&x).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let d: Vec<f64> = (0..x.len()).map(|_| rng.random_range(-1.0..1.0)).collect();
    let g: Vec<f64> = (0..x.len()).map(|_| rng.random_range(-1.0..1.0)).collect();
    let lhs: f64 = g.iter().zip(chain.jvp(&point, &d).unwrap()).map(|(a, b)| a * b).sum();
    let rhs: f64 = d.iter().zip(chain.vjp(&point, &g).unwrap()).map(|(a, b)| a * b).sum();
    assert!((lhs - rhs).abs() <= 1e-10 * lhs.abs().max(1.0));
}

#[test]
fn identity_chain_passes_values_through() {
    let (mesh, x) = chain_setup();
    let chain = FilterChain::new(&mesh, FilterParams::identity(), RHO_MIN).unwrap();
    let point = chain.forward(&x).unwrap();
    assert_eq!(point.projected, x);
    assert_eq!(chain.jvp(&point, &x).unwrap(), x);
    assert_eq!(chain.vjp(&point, &x).unwrap(), x);
}

#[test]
fn invalid_parameters_are_rejected() {
    let mesh = UnitCellMesh::structured(4).unwrap();
    for p in [
        FilterParams { tau: -1.0, ..Default::default() },
        FilterParams { beta: f64::NAN, ..Default::default() },
        FilterParams { eta: 1.0, ..Default::default() },
    ] {
        assert!(FilterChain::new(&mesh, p, RHO_MIN).is_err());
    }
}
