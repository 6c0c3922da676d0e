//! The adaptive design loop, the fixed-mesh baseline, verification of
//! optimized layouts, configuration and export.

mod config;
mod export;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::adapt::{adapt_mesh, cardinality_change, AdaptParams};
use crate::error::{Error, Result};
use crate::estimator::{compute_metric, limit_complexity, patch_matrices, vertex_metric, MetricParams};
use crate::fem::{CellSolver, DensityField};
use crate::filters::FilterChain;
use crate::homogenize::{engineering_moduli, homogenize, EngineeringModuli, HomogenizedTensors};
use crate::linalg::Sym2;
use crate::mesh::{PointLocator, UnitCellMesh};
use crate::optimizer::{
    constraint_values, evaluate_constraints, mass, optimize, ConstraintBounds, ConstraintVector, DesignProblem,
    IterationLog, MmaSettings, Termination,
};

pub use config::{preset_names, preset_text, DesignSpec, Mode};
pub use export::{export, load_design, load_history, load_mesh_density, tile, write_report, ExportedFiles, Timing};

/// Why the outer loop stopped.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunTermination {
    /// Relative cardinality change fell below the tolerance.
    Stagnation,
    IterationLimit,
    /// Single optimization on a fixed mesh.
    FixedMesh,
    Failed,
}

/// Summary of one outer iteration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OuterRecord {
    pub iteration: usize,
    /// Mass and constraints of the optimized density on the current mesh.
    pub mass: f64,
    pub constraints: ConstraintVector,
    pub triangles: usize,
    pub mma_iterations: usize,
    pub kkt: f64,
    pub mma_termination: Termination,
    pub filtered: bool,
    /// Element count of the adapted mesh and relative cardinality change.
    pub new_triangles: Option<usize>,
    pub err_c: Option<f64>,
    /// Uniform length factor applied to meet the element budget.
    pub metric_scale: Option<f64>,
    pub band_fraction: Option<f64>,
}

/// One line of `history.jsonl`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct HistoryLine {
    pub outer: usize,
    #[serde(flatten)]
    pub step: IterationLog,
}

/// Result summary of a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub spec: DesignSpec,
    pub termination: RunTermination,
    pub error: Option<String>,
    /// Final mass and constraints; absent when the run failed before the
    /// final evaluation.
    pub mass: Option<f64>,
    pub constraints: Option<ConstraintVector>,
    pub bounds: ConstraintBounds,
    pub relative_violation: Option<ConstraintVector>,
    pub tensors: Option<HomogenizedTensors>,
    pub moduli: Option<EngineeringModuli>,
    pub triangles: usize,
    pub history: Vec<OuterRecord>,
    pub notes: Vec<String>,
    /// Wall-clock seconds; kept out of the serialized report so that runs
    /// are reproducible byte for byte.
    #[serde(skip)]
    pub wall_time: f64,
}

/// Final state of a run.
#[derive(Debug, Clone)]
pub struct RunOutput {
    pub mesh: UnitCellMesh,
    pub rho: DensityField,
    /// Vertex metric of the final mesh.
    pub metric: Vec<Sym2>,
    pub tensors: HomogenizedTensors,
    pub report: RunReport,
    pub history: Vec<HistoryLine>,
}

/// A failed run with the report of what was completed.
#[derive(Debug)]
pub struct RunFailure {
    pub error: Error,
    pub report: Box<RunReport>,
}

impl std::fmt::Display for RunFailure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{} (after {} outer iterations)", self.error, self.report.history.len())
    }
}

impl std::error::Error for RunFailure {}

impl From<RunFailure> for Error {
    fn from(f: RunFailure) -> Self {
        f.error
    }
}

const NOTES: [&str; 2] = [
    "density and state fields use linear (P1) triangles",
    "verification thresholds element-centroid densities on a structured grid and re-solves with P1 elements",
];

fn empty_report(spec: &DesignSpec) -> RunReport {
    RunReport {
        spec: spec.clone(),
        termination: RunTermination::Failed,
        error: None,
        mass: None,
        constraints: None,
        bounds: spec.bounds,
        relative_violation: None,
        tensors: None,
        moduli: None,
        triangles: 0,
        history: Vec::new(),
        notes: NOTES.iter().map(|s| s.to_string()).collect(),
        wall_time: 0.0,
    }
}

/// Random initial density, uniform in `[rho_min, 1]` on every periodic
/// degree of freedom.
pub fn random_density(mesh: &UnitCellMesh, rho_min: f64, seed: u64) -> Result<DensityField> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (dof, n) = mesh.periodic_dofs();
    let x: Vec<f64> = (0..n).map(|_| rng.random_range(rho_min..=1.0)).collect();
    DensityField::new(dof.iter().map(|&d| x[d]).collect(), rho_min)
}

/// Vertex metric for `rho` on `mesh`, limited to the element budget.
/// Returns the metric and the applied length scale.
pub fn design_metric(mesh: &UnitCellMesh, rho: &DensityField, spec: &DesignSpec) -> Result<(Vec<Sym2>, f64)> {
    let params = MetricParams::default();
    let patches = patch_matrices(mesh, rho.values())?;
    // length clamps are applied after the complexity scaling
    let unclamped = MetricParams { h_min: f64::MIN_POSITIVE, h_max: f64::MAX, ..params };
    let mut metrics = compute_metric(mesh, &patches, spec.tol, &unclamped)?;
    let scale = limit_complexity(mesh, &mut metrics, spec.max_elements as f64, &params);
    Ok((vertex_metric(mesh, &metrics)?, scale))
}

fn mma_settings(spec: &DesignSpec, iterations: usize) -> MmaSettings {
    MmaSettings { max_iterations: iterations, kkt_tol: spec.topt, ..MmaSettings::default() }
}

fn finish(
    spec: &DesignSpec,
    mut report: RunReport,
    mesh: UnitCellMesh,
    rho: DensityField,
    metric: Vec<Sym2>,
    history: Vec<HistoryLine>,
    started: std::time::Instant,
) -> std::result::Result<RunOutput, RunFailure> {
    let evaluated = evaluate_constraints(&mesh, &rho, &spec.law).and_then(|(c, t, _)| Ok((c, t, engineering_moduli(&t).ok())));
    let (c, t, moduli) = match evaluated {
        Ok(v) => v,
        Err(error) => {
            report.termination = RunTermination::Failed;
            report.error = Some(error.to_string());
            report.wall_time = started.elapsed().as_secs_f64();
            return Err(RunFailure { error, report: Box::new(report) });
        }
    };
    report.mass = Some(mass(&mesh, rho.values()));
    report.constraints = Some(c);
    report.relative_violation = Some(spec.bounds.relative_violation(&c));
    report.tensors = Some(t);
    report.moduli = moduli;
    report.triangles = mesh.num_triangles();
    report.wall_time = started.elapsed().as_secs_f64();
    Ok(RunOutput { mesh, rho, metric, tensors: t, report, history })
}

/// Runs the configured pipeline.
pub fn run(spec: &DesignSpec) -> std::result::Result<RunOutput, RunFailure> {
    match spec.mode {
        Mode::Adaptive => run_design(spec),
        Mode::Baseline => run_baseline(spec),
    }
}

/// Adaptive design loop: optimize on the current mesh, filter (during the
/// first `kfmax` iterations), adapt the mesh to the density, and stop when
/// the element count stagnates after the filtering phase.
pub fn run_design(spec: &DesignSpec) -> std::result::Result<RunOutput, RunFailure> {
    let started = std::time::Instant::now();
    let mut report = empty_report(spec);
    let mut history = Vec::new();
    let fail = |error: Error, mut report: RunReport| {
        report.termination = RunTermination::Failed;
        report.error = Some(error.to_string());
        report.wall_time = started.elapsed().as_secs_f64();
        RunFailure { error, report: Box::new(report) }
    };
    if let Err(e) = spec.validate() {
        return Err(fail(e, report));
    }
    let setup = UnitCellMesh::structured(spec.n).and_then(|m| {
        let rho = random_density(&m, spec.rho_min, spec.seed)?;
        Ok((m, rho))
    });
    let (mut mesh, mut rho) = match setup {
        Ok(v) => v,
        Err(e) => return Err(fail(e, report)),
    };
    let mut metric = Vec::new();
    let adapt_params = AdaptParams { max_elements: 4 * spec.max_elements, ..spec.adapt };
    report.termination = RunTermination::IterationLimit;
    for k in 0..spec.kmax {
        let step = outer_step(spec, &adapt_params, k, &mesh, &rho, &mut history);
        let (record, next) = match step {
            Ok(v) => v,
            Err(e) => return Err(fail(e, report)),
        };
        log::info!(
            "outer {k}: mass {:.4}, constraints {:?}, {} -> {} triangles",
            record.mass,
            record.constraints.map(|c| (c * 1e4).round() / 1e4),
            record.triangles,
            record.new_triangles.unwrap_or(0)
        );
        // the filtered density is not an optimizer output, so the loop only
        // stops once the filters are off
        let stagnated = !record.filtered && record.err_c.is_some_and(|e| e <= spec.ctol);
        report.history.push(record);
        mesh = next.mesh;
        rho = next.rho;
        metric = next.metric;
        if stagnated {
            report.termination = RunTermination::Stagnation;
            break;
        }
    }
    finish(spec, report, mesh, rho, metric, history, started)
}

fn outer_step(
    spec: &DesignSpec,
    adapt_params: &AdaptParams,
    k: usize,
    mesh: &UnitCellMesh,
    rho: &DensityField,
    history: &mut Vec<HistoryLine>,
) -> Result<(OuterRecord, crate::adapt::Adapted)> {
    let mut problem = DesignProblem::new(mesh, &spec.law, &spec.bounds, spec.rho_min, None)?;
    let x0 = problem.gather(rho.values());
    let iterations = if k == 0 { spec.it_first } else { spec.it_rest };
    let outcome = optimize(&mut problem, &x0, &mma_settings(spec, iterations))?;
    let (_, constraints, m, _) = problem
        .last_state()
        .ok_or_else(|| Error::Solver("optimizer returned without evaluating".into()))?;
    history.extend(problem.log.drain(..).map(|step| HistoryLine { outer: k, step }));
    let optimized = DensityField::new(problem.scatter(&outcome.x), spec.rho_min)?;
    let filtered = k < spec.kfmax;
    let design = if filtered {
        let chain = FilterChain::new(mesh, spec.filter, spec.rho_min)?;
        let point = chain.forward(&chain.gather(optimized.values()))?;
        DensityField::new(chain.scatter(&point.projected), spec.rho_min)?
    } else {
        optimized
    };
    let (vm, scale) = design_metric(mesh, &design, spec)?;
    let adapted = adapt_mesh(mesh, &vm, &design, adapt_params)?;
    let err_c = cardinality_change(mesh.num_triangles(), adapted.mesh.num_triangles())?;
    let record = OuterRecord {
        iteration: k,
        mass: m,
        constraints,
        triangles: mesh.num_triangles(),
        mma_iterations: outcome.iterations,
        kkt: outcome.kkt,
        mma_termination: outcome.termination,
        filtered,
        new_triangles: Some(adapted.mesh.num_triangles()),
        err_c: Some(err_c),
        metric_scale: Some(scale),
        band_fraction: Some(adapted.band_fraction),
    };
    Ok((record, adapted))
}

/// Non-adaptive reference: one optimization on a fixed structured mesh with
/// the filter chain inside the objective and constraints.
pub fn run_baseline(spec: &DesignSpec) -> std::result::Result<RunOutput, RunFailure> {
    let started = std::time::Instant::now();
    let mut report = empty_report(spec);
    let mut history = Vec::new();
    let result = (|| -> Result<(UnitCellMesh, DensityField, OuterRecord)> {
        spec.validate()?;
        let mesh = UnitCellMesh::structured(spec.baseline_n)?;
        let rho0 = random_density(&mesh, spec.rho_min, spec.seed)?;
        let chain = FilterChain::new(&mesh, spec.filter, spec.rho_min)?;
        let mut problem = DesignProblem::new(&mesh, &spec.law, &spec.bounds, spec.rho_min, Some(chain))?;
        let x0 = problem.gather(rho0.values());
        let outcome = optimize(&mut problem, &x0, &mma_settings(spec, spec.baseline_iterations))?;
        let (physical, constraints, m, _) = problem
            .last_state()
            .ok_or_else(|| Error::Solver("optimizer returned without evaluating".into()))?;
        history.extend(problem.log.drain(..).map(|step| HistoryLine { outer: 0, step }));
        let record = OuterRecord {
            iteration: 0,
            mass: m,
            constraints,
            triangles: mesh.num_triangles(),
            mma_iterations: outcome.iterations,
            kkt: outcome.kkt,
            mma_termination: outcome.termination,
            filtered: true,
            new_triangles: None,
            err_c: None,
            metric_scale: None,
            band_fraction: None,
        };
        drop(problem);
        Ok((mesh, DensityField::new(physical, spec.rho_min)?, record))
    })();
    match result {
        Ok((mesh, rho, record)) => {
            report.history.push(record);
            report.termination = RunTermination::FixedMesh;
            let metric = design_metric(&mesh, &rho, spec).map(|(m, _)| m).unwrap_or_default();
            finish(spec, report, mesh, rho, metric, history, started)
        }
        Err(error) => {
            report.error = Some(error.to_string());
            report.wall_time = started.elapsed().as_secs_f64();
            Err(RunFailure { error, report: Box::new(report) })
        }
    }
}

/// Tensors of the thresholded layout re-solved on a fine structured mesh.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Verification {
    pub tensors: HomogenizedTensors,
    pub moduli: EngineeringModuli,
    pub constraints: ConstraintVector,
    /// Area fraction of material elements.
    pub material_fraction: f64,
    pub grid: usize,
    pub threshold: f64,
}

/// Thresholds `rho` at `spec.verify_threshold`, sampled at the element
/// centroids of a structured `verify_n` grid, and homogenizes the binary
/// layout (material 1, void `rho_min`).
pub fn verify(mesh: &UnitCellMesh, rho: &DensityField, spec: &DesignSpec) -> Result<Verification> {
    rho.check_on(mesh)?;
    let fine = UnitCellMesh::structured(spec.verify_n)?;
    let locator = PointLocator::new(mesh);
    let mut material_area = 0.0;
    let element_density: Vec<f64> = (0..fine.num_triangles())
        .map(|k| {
            if locator.interpolate(rho.values(), fine.centroid(k)) >= spec.verify_threshold {
                material_area += fine.area(k);
                1.0
            } else {
                spec.rho_min
            }
        })
        .collect();
    if material_area == 0.0 {
        return Err(Error::DegenerateDesign(format!(
            "no material left after thresholding at {}",
            spec.verify_threshold
        )));
    }
    let mut solver = CellSolver::new(&fine, &spec.law)?;
    let sol = solver.solve(&element_density)?;
    let tensors = homogenize(&fine, &spec.law, &sol)?;
    let moduli = engineering_moduli(&tensors)?;
    Ok(Verification {
        tensors,
        moduli,
        constraints: constraint_values(&tensors)?,
        material_fraction: material_area,
        grid: spec.verify_n,
        threshold: spec.verify_threshold,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn random_density_is_periodic_and_seeded() {
        let m = UnitCellMesh::structured(6).unwrap();
        let a = random_density(&m, 1e-4, 3).unwrap();
        let b = random_density(&m, 1e-4, 3).unwrap();
        assert_eq!(a.values(), b.values());
        a.check_on(&m).unwrap();
        assert!(a.values().iter().all(|&r| (1e-4..=1.0).contains(&r)));
        assert_ne!(a.values(), random_density(&m, 1e-4, 4).unwrap().values());
    }
}
