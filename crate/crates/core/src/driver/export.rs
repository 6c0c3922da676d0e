//! Output files of a run and their reader.

use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{HistoryLine, RunOutput, RunReport};
use crate::error::{Error, Result};
use crate::fem::DensityField;
use crate::linalg::Point;
use crate::mesh::io::{load_native, save_native, write_vtk, PointData};
use crate::mesh::UnitCellMesh;

/// Wall-clock information, written separately from the report.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Timing {
    pub wall_time_seconds: f64,
}

/// Paths written by [`export`].
#[derive(Debug, Clone)]
pub struct ExportedFiles {
    pub mesh_vtk: PathBuf,
    pub mesh_native: PathBuf,
    pub density_csv: PathBuf,
    pub report_json: PathBuf,
    pub history_jsonl: PathBuf,
    pub tiling_vtk: PathBuf,
    pub timing_json: PathBuf,
}

impl ExportedFiles {
    fn in_dir(dir: &Path) -> Self {
        Self {
            mesh_vtk: dir.join("mesh.vtk"),
            mesh_native: dir.join("mesh.txt"),
            density_csv: dir.join("density.csv"),
            report_json: dir.join("report.json"),
            history_jsonl: dir.join("history.jsonl"),
            tiling_vtk: dir.join("cell_3x3.vtk"),
            timing_json: dir.join("timing.json"),
        }
    }
}

/// Writes the report alone (used for failed runs).
pub fn write_report(report: &RunReport, dir: &Path) -> Result<PathBuf> {
    std::fs::create_dir_all(dir)?;
    let files = ExportedFiles::in_dir(dir);
    std::fs::write(&files.report_json, serde_json::to_string_pretty(report)? + "\n")?;
    std::fs::write(
        &files.timing_json,
        serde_json::to_string_pretty(&Timing { wall_time_seconds: report.wall_time })? + "\n",
    )?;
    Ok(files.report_json)
}

/// Writes every artifact of a completed run into `dir`.
pub fn export(out: &RunOutput, dir: &Path) -> Result<ExportedFiles> {
    std::fs::create_dir_all(dir)?;
    let files = ExportedFiles::in_dir(dir);
    let mesh = &out.mesh;
    let rho = out.rho.values();

    let mut data = vec![PointData::Scalars("rho", rho)];
    if out.metric.len() == mesh.num_vertices() {
        data.push(PointData::Tensors("metric", &out.metric));
    }
    write_vtk(std::fs::File::create(&files.mesh_vtk)?, "unit cell", mesh.vertices(), mesh.triangles(), &data)?;
    save_native(mesh, &files.mesh_native)?;
    write_density_csv(mesh, rho, &files.density_csv)?;
    write_report(&out.report, dir)?;

    let mut w = BufWriter::new(std::fs::File::create(&files.history_jsonl)?);
    for line in &out.history {
        writeln!(w, "{}", serde_json::to_string(line)?)?;
    }
    w.flush()?;

    let (points, triangles, values) = tile(mesh, rho, 3, 3);
    write_vtk(
        std::fs::File::create(&files.tiling_vtk)?,
        "3x3 tiling",
        &points,
        &triangles,
        &[PointData::Scalars("rho", &values)],
    )?;
    Ok(files)
}

fn write_density_csv(mesh: &UnitCellMesh, rho: &[f64], path: &Path) -> Result<()> {
    let mut w = BufWriter::new(std::fs::File::create(path)?);
    writeln!(w, "x,y,rho")?;
    for (p, r) in mesh.vertices().iter().zip(rho) {
        writeln!(w, "{},{},{}", p[0], p[1], r)?;
    }
    w.flush()?;
    Ok(())
}

fn read_density_csv(path: &Path, mesh: &UnitCellMesh) -> Result<Vec<f64>> {
    let reader = BufReader::new(std::fs::File::open(path)?);
    let mut values = Vec::with_capacity(mesh.num_vertices());
    for (no, line) in reader.lines().enumerate() {
        let line = line?;
        let line = line.trim();
        if no == 0 || line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        let parse = |s: &str| {
            s.parse::<f64>()
                .map_err(|_| Error::Parse(format!("{}: line {}: bad number '{s}'", path.display(), no + 1)))
        };
        match fields.as_slice() {
            [x, y, r] => {
                let v = values.len();
                let p = mesh.vertices().get(v).ok_or_else(|| {
                    Error::Parse(format!("{}: more rows than mesh vertices", path.display()))
                })?;
                if (parse(x)? - p[0]).abs() > 1e-12 || (parse(y)? - p[1]).abs() > 1e-12 {
                    return Err(Error::Parse(format!(
                        "{}: row {} does not match vertex {v} of the mesh",
                        path.display(),
                        no + 1
                    )));
                }
                values.push(parse(r)?);
            }
            [r] => values.push(parse(r)?),
            _ => return Err(Error::Parse(format!("{}: line {}: expected x,y,rho", path.display(), no + 1))),
        }
    }
    if values.len() != mesh.num_vertices() {
        return Err(Error::Parse(format!(
            "{}: {} densities for {} vertices",
            path.display(),
            values.len(),
            mesh.num_vertices()
        )));
    }
    Ok(values)
}

/// Reads a mesh (native format, or legacy VTK when the extension is
/// `.vtk`) and a density CSV (`x,y,rho` or a single `rho` column, one row
/// per vertex after a header line).
pub fn load_mesh_density(mesh_path: &Path, density_path: &Path, rho_min: f64) -> Result<(UnitCellMesh, DensityField)> {
    let mesh = if mesh_path.extension().is_some_and(|e| e == "vtk") {
        crate::mesh::io::load_vtk_mesh(mesh_path)?.0
    } else {
        load_native(mesh_path)?
    };
    let values = read_density_csv(density_path, &mesh)?;
    let rho = DensityField::new(values, rho_min)?;
    rho.check_on(&mesh)?;
    Ok((mesh, rho))
}

/// Reads back the mesh, density and report exported into `dir`.
pub fn load_design(dir: &Path) -> Result<(UnitCellMesh, DensityField, RunReport)> {
    let files = ExportedFiles::in_dir(dir);
    let report: RunReport = serde_json::from_str(&std::fs::read_to_string(&files.report_json)?)?;
    let (mesh, rho) = load_mesh_density(&files.mesh_native, &files.density_csv, report.spec.rho_min)?;
    Ok((mesh, rho, report))
}

/// Reads `history.jsonl`.
pub fn load_history(dir: &Path) -> Result<Vec<HistoryLine>> {
    let text = std::fs::read_to_string(ExportedFiles::in_dir(dir).history_jsonl)?;
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| serde_json::from_str(l).map_err(Error::from))
        .collect()
}

/// `nx` by `ny` periodic repetition of the cell: points, triangles and
/// nodal values. Identified vertices are merged.
pub fn tile(mesh: &UnitCellMesh, values: &[f64], nx: usize, ny: usize) -> (Vec<Point>, Vec<[usize; 3]>, Vec<f64>) {
    let mut index = std::collections::HashMap::new();
    let mut points = Vec::new();
    let mut out_values = Vec::new();
    let mut triangles = Vec::with_capacity(nx * ny * mesh.num_triangles());
    let key = |p: Point| ((p[0] * 1e8).round() as i64, (p[1] * 1e8).round() as i64);
    for i in 0..nx {
        for j in 0..ny {
            let shift = [i as f64, j as f64];
            for t in mesh.triangles() {
                let tri = t.map(|v| {
                    let p = mesh.vertices()[v];
                    let q = [p[0] + shift[0], p[1] + shift[1]];
                    *index.entry(key(q)).or_insert_with(|| {
                        points.push(q);
                        out_values.push(values[v]);
                        points.len() - 1
                    })
                });
                triangles.push(tri);
            }
        }
    }
    (points, triangles, out_values)
}
