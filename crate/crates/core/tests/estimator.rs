use metacell::estimator::{
    compute_metric, local_estimator, metric_from_patch, patch_matrices, predicted_estimator, recover_gradient,
    scaled_patches, vertex_metric, ElementMetric, MetricParams,
};
use metacell::linalg::Sym2;
use metacell::mesh::{element_anisotropy, UnitCellMesh};
use nalgebra::Matrix2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const WIDE: MetricParams = MetricParams { max_aspect_ratio: 1e8, h_min: 1e-12, h_max: 1e12 };

fn periodic_random(mesh: &UnitCellMesh, seed: u64) -> Vec<f64> {
    let (dof, n) = mesh.periodic_dofs();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let x: Vec<f64> = (0..n).map(|_| rng.random_range(0.0..1.0)).collect();
    dof.iter().map(|&d| x[d]).collect()
}

/// Mesh with interior vertices jittered, so elements are not all alike.
fn jittered(n: usize, seed: u64) -> UnitCellMesh {
    let base = UnitCellMesh::structured(n).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let h = 1.0 / n as f64;
    let v = base
        .vertices()
        .iter()
        .map(|p| {
            let inner = |c: f64| c > 1e-9 && c < 1.0 - 1e-9;
            if inner(p[0]) && inner(p[1]) {
                [p[0] + rng.random_range(-0.2..0.2) * h, p[1] + rng.random_range(-0.2..0.2) * h]
            } else {
                *p
            }
        })
        .collect();
    UnitCellMesh::new(v, base.triangles().to_vec()).unwrap()
}

#[test]
fn linear_densities_carry_no_error() {
    let mesh = jittered(8, 1);
    let rho: Vec<f64> = mesh.vertices().iter().map(|p| 0.2 + 0.3 * p[0] - 0.7 * p[1]).collect();
    let est = local_estimator(&mesh, &rho).unwrap();
    assert!(est.local.iter().all(|&e| e.abs() <= 1e-12), "max {:e}", est.total);
}

#[test]
fn isotropic_element_reduces_to_the_trace() {
    let s = 3f64.sqrt() / 2.0;
    let geom = element_anisotropy([[0.0, 0.0], [0.1, 0.0], [0.05, 0.1 * s]]).unwrap();
    let g = Sym2::new(2.0, 0.3, 0.5);
    let eta = metacell::estimator::element_estimator(&geom, &g);
    assert!((eta - g.trace()).abs() < 1e-12);
}

#[test]
fn recovery_beats_the_raw_gradient() {
    let mesh = UnitCellMesh::structured(16).unwrap();
    let rho: Vec<f64> = mesh.vertices().iter().map(|p| p[0] * p[0]).collect();
    let rec = recover_gradient(&mesh, &rho).unwrap();
    let (mut e_rec, mut e_raw) = (0.0, 0.0);
    for k in 0..mesh.num_triangles() {
        let c = mesh.centroid(k);
        if !(0.2..0.8).contains(&c[0]) || !(0.2..0.8).contains(&c[1]) {
            continue;
        }
        let exact = [2.0 * c[0], 0.0];
        let raw = mesh.gradient(k, &rho);
        let a = mesh.area(k);
        e_rec += a * ((rec[k][0] - exact[0]).powi(2) + (rec[k][1] - exact[1]).powi(2));
        e_raw += a * ((raw[0] - exact[0]).powi(2) + (raw[1] - exact[1]).powi(2));
    }
    assert!(e_rec < 0.25 * e_raw, "recovered {e_rec:e} raw {e_raw:e}");
}

/// Straight-line estimator: periodic patches by coordinate matching,
/// anisotropy by SVD of the map from the reference triangle.
fn brute_force(mesh: &UnitCellMesh, rho: &[f64]) -> Vec<f64> {
    let same = |a: [f64; 2], b: [f64; 2]| {
        let d = |x: f64, y: f64| {
            let t = (x - y).rem_euclid(1.0);
            t.min(1.0 - t) < 1e-9
        };
        d(a[0], b[0]) && d(a[1], b[1])
    };
    let nt = mesh.num_triangles();
    let pts: Vec<[[f64; 2]; 3]> = (0..nt).map(|k| mesh.triangle_points(k)).collect();
    let grad: Vec<[f64; 2]> = (0..nt).map(|k| mesh.gradient(k, rho)).collect();
    let area: Vec<f64> = (0..nt).map(|k| mesh.area(k)).collect();
    let patch = |k: usize| -> Vec<usize> {
        (0..nt).filter(|&t| pts[k].iter().any(|a| pts[t].iter().any(|b| same(*a, *b)))).collect()
    };
    let patches: Vec<Vec<usize>> = (0..nt).map(patch).collect();
    let rec: Vec<[f64; 2]> = patches
        .iter()
        .map(|p| {
            let a: f64 = p.iter().map(|&t| area[t]).sum();
            [0, 1].map(|i| p.iter().map(|&t| area[t] * grad[t][i]).sum::<f64>() / a)
        })
        .collect();
    let s = 3f64.sqrt() / 2.0;
    let reference = Matrix2::new(-1.5, -1.5, s, -s);
    (0..nt)
        .map(|k| {
            let mut g = Matrix2::zeros();
            for &t in &patches[k] {
                let e = nalgebra::Vector2::new(rec[t][0] - grad[t][0], rec[t][1] - grad[t][1]);
                g += area[t] * e * e.transpose();
            }
            let p = pts[k];
            let edges = Matrix2::new(p[1][0] - p[0][0], p[2][0] - p[0][0], p[1][1] - p[0][1], p[2][1] - p[0][1]);
            let j = edges * reference.try_inverse().unwrap();
            let svd = j.svd(true, false);
            let u = svd.u.unwrap();
            let (l1, l2) = (svd.singular_values[0], svd.singular_values[1]);
            let q = |c: usize| (u.column(c).transpose() * g * u.column(c))[(0, 0)];
            (l1 * l1 * q(0) + l2 * l2 * q(1)) / (l1 * l2)
        })
        .collect()
}

#[test]
fn estimator_matches_brute_force() {
    let mesh = jittered(6, 2);
    let rho = periodic_random(&mesh, 7);
    let est = local_estimator(&mesh, &rho).unwrap();
    let oracle = brute_force(&mesh, &rho);
    for (k, (a, b)) in est.local.iter().zip(&oracle).enumerate() {
        assert!((a - b).abs() <= 1e-10 * b.abs().max(1e-12), "element {k}: {a:e} vs {b:e}");
    }
    assert!((est.total - oracle.iter().sum::<f64>()).abs() <= 1e-10 * est.total);
}

#[test]
fn patch_matrices_are_positive_semidefinite() {
    let mesh = jittered(6, 3);
    let rho = periodic_random(&mesh, 4);
    for p in patch_matrices(&mesh, &rho).unwrap() {
        assert!(p.g.xx >= 0.0 && p.g.yy >= 0.0 && p.g.det() >= -1e-14 * p.g.trace().powi(2));
        assert!(p.area > 0.0);
    }
}

#[test]
fn optimal_lengths_of_a_diagonal_patch() {
    let m = metric_from_patch(&Sym2::new(4.0, 0.0, 1.0), 1.0, 1.0, 2, &WIDE);
    assert!((m.lambda[0] - 0.5).abs() < 1e-14 && (m.lambda[1] - 0.25).abs() < 1e-14);
    assert!(m.direction[0].abs() < 1e-14 && (m.direction[1].abs() - 1.0).abs() < 1e-14);
    assert!(!m.regularized);
}

#[test]
fn metric_rotates_with_the_patch() {
    let g = Sym2::new(5.0, 1.0, 2.0);
    let base = metric_from_patch(&g, 0.7, 0.1, 50, &WIDE);
    for phi in [0.3, 1.1, 2.5] {
        let m = metric_from_patch(&g.rotated(phi), 0.7, 0.1, 50, &WIDE);
        let tb = base.tensor().rotated(phi);
        let tm = m.tensor();
        let scale = tm.trace();
        assert!((tb.xx - tm.xx).abs() < 1e-10 * scale);
        assert!((tb.xy - tm.xy).abs() < 1e-10 * scale);
        assert!((tb.yy - tm.yy).abs() < 1e-10 * scale);
    }
}

#[test]
fn optimal_metric_equidistributes_the_estimator() {
    let mesh = jittered(10, 5);
    let rho = periodic_random(&mesh, 6);
    let tol = 0.05;
    let patches = patch_matrices(&mesh, &rho).unwrap();
    let metrics = compute_metric(&mesh, &patches, tol, &WIDE).unwrap();
    let target = tol * tol / mesh.num_triangles() as f64;
    let scaled = scaled_patches(&mesh, &patches).unwrap();
    let mut checked = 0;
    for (m, (g, d)) in metrics.iter().zip(&scaled) {
        if m.regularized {
            continue;
        }
        let e = predicted_estimator(m, g, *d);
        assert!((e - target).abs() <= 1e-9 * target, "{e:e} vs {target:e}");
        checked += 1;
    }
    assert!(checked > mesh.num_triangles() / 2);
}

#[test]
fn vertex_metric_averages_over_identified_vertices() {
    let mesh = jittered(4, 9);
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let metrics: Vec<ElementMetric> = (0..mesh.num_triangles())
        .map(|_| {
            let a: f64 = rng.random_range(0.0..3.0);
            ElementMetric {
                lambda: [rng.random_range(0.01..0.2), rng.random_range(0.01..0.2)],
                direction: [a.cos(), a.sin()],
                regularized: false,
            }
        })
        .collect();
    let got = vertex_metric(&mesh, &metrics).unwrap();
    let same = |a: [f64; 2], b: [f64; 2]| {
        let d = |x: f64, y: f64| {
            let t = (x - y).rem_euclid(1.0);
            t.min(1.0 - t) < 1e-9
        };
        d(a[0], b[0]) && d(a[1], b[1])
    };
    for (v, p) in mesh.vertices().iter().enumerate() {
        let mut sum = Sym2::ZERO;
        let mut count = 0.0;
        for (k, t) in mesh.triangles().iter().enumerate() {
            for &w in t {
                if same(mesh.vertices()[w], *p) {
                    sum = sum.plus(&metrics[k].tensor());
                    count += 1.0;
                }
            }
        }
        let want = sum.scaled(1.0 / count);
        let scale = want.trace();
        assert!((got[v].xx - want.xx).abs() < 1e-12 * scale, "vertex {v}");
        assert!((got[v].xy - want.xy).abs() < 1e-12 * scale);
        assert!((got[v].yy - want.yy).abs() < 1e-12 * scale);
    }
}

#[test]
fn vertex_metric_of_two_levels() {
    // elements alternate between M and 3M; every vertex sees as many of each
    let mesh = UnitCellMesh::structured(4).unwrap();
    let m = ElementMetric { lambda: [0.1, 0.05], direction: [0.6, 0.8], regularized: false };
    let s = 1.0 / 3f64.sqrt();
    let m3 = ElementMetric { lambda: [0.1 * s, 0.05 * s], ..m };
    let metrics: Vec<ElementMetric> = (0..mesh.num_triangles()).map(|k| if k % 2 == 0 { m } else { m3 }).collect();
    let want = m.tensor().scaled(2.0);
    for v in vertex_metric(&mesh, &metrics).unwrap() {
        assert!((v.xx - want.xx).abs() < 1e-9 * want.trace());
        assert!((v.xy - want.xy).abs() < 1e-9 * want.trace());
        assert!((v.yy - want.yy).abs() < 1e-9 * want.trace());
    }
}
