//! Mesh serialization.
//!
//! Native format (whitespace separated, one record per line):
//!
//! ```text
//! <vertex count>
//! x y                  (one line per vertex)
//! <triangle count>
//! i j k                (one line per triangle, counter-clockwise)
//! s m                  (periodic pairs until end of file)
//! ```
//!
//! Legacy ASCII VTK output uses an `UNSTRUCTURED_GRID` of triangles; the
//! reader accepts both `UNSTRUCTURED_GRID` and `POLYDATA` triangle files.

use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::UnitCellMesh;
use crate::error::{Error, Result};
use crate::linalg::{Point, Sym2};

pub fn write_native<W: Write>(mesh: &UnitCellMesh, out: W) -> Result<()> {
    let mut w = BufWriter::new(out);
    writeln!(w, "{}", mesh.num_vertices())?;
    for p in mesh.vertices() {
        writeln!(w, "{} {}", p[0], p[1])?;
    }
    writeln!(w, "{}", mesh.num_triangles())?;
    for t in mesh.triangles() {
        writeln!(w, "{} {} {}", t[0], t[1], t[2])?;
    }
    for (s, m) in mesh.periodic_pairs() {
        writeln!(w, "{s} {m}")?;
    }
    w.flush()?;
    Ok(())
}

/// Reads a native mesh. The periodic pairing is rebuilt from coordinates and
/// checked against the pairs stored in the file.
pub fn read_native<R: Read>(input: R) -> Result<UnitCellMesh> {
    let mut lines = BufReader::new(input)
        .lines()
        .map(|l| l.map_err(Error::from))
        .filter(|l| l.as_ref().map(|s| !s.trim().is_empty()).unwrap_or(true));
    let mut next = |what: &str| -> Result<String> {
        lines
            .next()
            .ok_or_else(|| Error::Parse(format!("unexpected end of file reading {what}")))?
    };
    let nv: usize = parse_one(&next("vertex count")?)?;
    let mut vertices = Vec::with_capacity(nv);
    for _ in 0..nv {
        let f = parse_fields::<f64>(&next("vertex")?, 2)?;
        vertices.push([f[0], f[1]]);
    }
    let nt: usize = parse_one(&next("triangle count")?)?;
    let mut triangles = Vec::with_capacity(nt);
    for _ in 0..nt {
        let f = parse_fields::<usize>(&next("triangle")?, 3)?;
        triangles.push([f[0], f[1], f[2]]);
    }
    let mut pairs = Vec::new();
    while let Ok(line) = next("periodic pair") {
        let f = parse_fields::<usize>(&line, 2)?;
        pairs.push((f[0], f[1]));
    }
    let mesh = UnitCellMesh::new(vertices, triangles)?;
    let mut expected = mesh.periodic_pairs().to_vec();
    expected.sort_unstable();
    pairs.sort_unstable();
    if !pairs.is_empty() && pairs != expected {
        return Err(Error::MeshIntegrity(
            "stored periodic pairs disagree with the boundary coordinates".into(),
        ));
    }
    Ok(mesh)
}

pub fn save_native(mesh: &UnitCellMesh, path: &Path) -> Result<()> {
    write_native(mesh, std::fs::File::create(path)?)
}

pub fn load_native(path: &Path) -> Result<UnitCellMesh> {
    read_native(std::fs::File::open(path)?)
}

/// Point data attached to a VTK export.
#[derive(Debug, Clone, Copy)]
pub enum PointData<'a> {
    Scalars(&'a str, &'a [f64]),
    Tensors(&'a str, &'a [Sym2]),
}

/// Writes a triangle soup as a legacy ASCII VTK unstructured grid.
pub fn write_vtk<W: Write>(
    out: W,
    title: &str,
    points: &[Point],
    triangles: &[[usize; 3]],
    point_data: &[PointData<'_>],
) -> Result<()> {
    let mut w = BufWriter::new(out);
    writeln!(w, "# vtk DataFile Version 3.0")?;
    writeln!(w, "{}", title.lines().next().unwrap_or("mesh"))?;
    writeln!(w, "ASCII")?;
    writeln!(w, "DATASET UNSTRUCTURED_GRID")?;
    writeln!(w, "POINTS {} double", points.len())?;
    for p in points {
        writeln!(w, "{} {} 0", p[0], p[1])?;
    }
    writeln!(w, "CELLS {} {}", triangles.len(), 4 * triangles.len())?;
    for t in triangles {
        writeln!(w, "3 {} {} {}", t[0], t[1], t[2])?;
    }
    writeln!(w, "CELL_TYPES {}", triangles.len())?;
    for _ in triangles {
        writeln!(w, "5")?;
    }
    if !point_data.is_empty() {
        writeln!(w, "POINT_DATA {}", points.len())?;
    }
    for data in point_data {
        match data {
            PointData::Scalars(name, values) => {
                check_len(name, values.len(), points.len())?;
                writeln!(w, "SCALARS {name} double 1")?;
                writeln!(w, "LOOKUP_TABLE default")?;
                for v in *values {
                    writeln!(w, "{v}")?;
                }
            }
            PointData::Tensors(name, values) => {
                check_len(name, values.len(), points.len())?;
                writeln!(w, "TENSORS {name} double")?;
                for m in *values {
                    writeln!(w, "{} {} 0\n{} {} 0\n0 0 0", m.xx, m.xy, m.xy, m.yy)?;
                }
            }
        }
    }
    w.flush()?;
    Ok(())
}

fn check_len(name: &str, got: usize, want: usize) -> Result<()> {
    if got != want {
        return Err(Error::InvalidArgument(format!(
            "point data '{name}' has {got} values for {want} points"
        )));
    }
    Ok(())
}

/// Contents of a legacy VTK triangle file.
#[derive(Debug, Clone, Default)]
pub struct VtkTriangles {
    pub points: Vec<Point>,
    pub triangles: Vec<[usize; 3]>,
    /// Scalar point data by name.
    pub scalars: Vec<(String, Vec<f64>)>,
}

impl VtkTriangles {
    pub fn scalar(&self, name: &str) -> Option<&[f64]> {
        self.scalars.iter().find(|(n, _)| n == name).map(|(_, v)| v.as_slice())
    }
}

/// Reads a legacy ASCII VTK file containing triangles (other cell types are
/// rejected) and its scalar point data.
pub fn read_vtk<R: Read>(input: R) -> Result<VtkTriangles> {
    let mut text = String::new();
    BufReader::new(input).read_to_string(&mut text)?;
    let mut lines = text.lines();
    let header = lines.next().unwrap_or_default();
    if !header.starts_with("# vtk DataFile") {
        return Err(Error::Parse("missing VTK header".into()));
    }
    lines.next(); // title
    if lines.next().map(str::trim) != Some("ASCII") {
        return Err(Error::Parse("only ASCII VTK files are supported".into()));
    }
    let mut tokens = lines.flat_map(str::split_whitespace);
    let mut out = VtkTriangles::default();
    let mut npoints = 0;
    let mut cell_types: Option<Vec<usize>> = None;
    let take = |tokens: &mut dyn Iterator<Item = &str>, what: &str| -> Result<String> {
        tokens
            .next()
            .map(str::to_owned)
            .ok_or_else(|| Error::Parse(format!("unexpected end of file in {what}")))
    };
    while let Some(tok) = tokens.next() {
        match tok {
            "DATASET" => {
                let kind = take(&mut tokens, "DATASET")?;
                if kind != "UNSTRUCTURED_GRID" && kind != "POLYDATA" {
                    return Err(Error::Parse(format!("unsupported dataset {kind}")));
                }
            }
            "POINTS" => {
                npoints = parse_one(&take(&mut tokens, "POINTS")?)?;
                take(&mut tokens, "POINTS")?;
                for _ in 0..npoints {
                    let x = parse_one::<f64>(&take(&mut tokens, "POINTS")?)?;
                    let y = parse_one::<f64>(&take(&mut tokens, "POINTS")?)?;
                    take(&mut tokens, "POINTS")?;
                    out.points.push([x, y]);
                }
            }
            "CELLS" | "POLYGONS" => {
                let n: usize = parse_one(&take(&mut tokens, tok)?)?;
                take(&mut tokens, tok)?;
                for _ in 0..n {
                    let nn: usize = parse_one(&take(&mut tokens, tok)?)?;
                    if nn != 3 {
                        return Err(Error::Parse(format!("non-triangular cell with {nn} nodes")));
                    }
                    let mut t = [0usize; 3];
                    for v in &mut t {
                        *v = parse_one(&take(&mut tokens, tok)?)?;
                    }
                    out.triangles.push(t);
                }
            }
            "CELL_TYPES" => {
                let n: usize = parse_one(&take(&mut tokens, tok)?)?;
                let mut types = Vec::with_capacity(n);
                for _ in 0..n {
                    types.push(parse_one(&take(&mut tokens, tok)?)?);
                }
                cell_types = Some(types);
            }
            "POINT_DATA" => {
                take(&mut tokens, tok)?;
            }
            "SCALARS" => {
                let name = take(&mut tokens, tok)?;
                take(&mut tokens, tok)?; // data type
                let mut next = take(&mut tokens, tok)?;
                if next != "LOOKUP_TABLE" {
                    next = take(&mut tokens, tok)?; // component count was present
                }
                if next != "LOOKUP_TABLE" {
                    return Err(Error::Parse("expected LOOKUP_TABLE".into()));
                }
                take(&mut tokens, tok)?;
                let mut values = Vec::with_capacity(npoints);
                for _ in 0..npoints {
                    values.push(parse_one(&take(&mut tokens, tok)?)?);
                }
                out.scalars.push((name, values));
            }
            "TENSORS" => {
                take(&mut tokens, tok)?;
                take(&mut tokens, tok)?;
                for _ in 0..9 * npoints {
                    take(&mut tokens, tok)?;
                }
            }
            other => return Err(Error::Parse(format!("unexpected VTK token '{other}'"))),
        }
    }
    if let Some(types) = cell_types {
        if types.iter().any(|&t| t != 5) {
            return Err(Error::Parse("only VTK_TRIANGLE (5) cells are supported".into()));
        }
    }
    Ok(out)
}

/// Reads a VTK triangle file as a unit-cell mesh.
pub fn load_vtk_mesh(path: &Path) -> Result<(UnitCellMesh, VtkTriangles)> {
    let data = read_vtk(std::fs::File::open(path)?)?;
    let mesh = UnitCellMesh::new(data.points.clone(), data.triangles.clone())?;
    Ok((mesh, data))
}

fn parse_one<T: std::str::FromStr>(s: &str) -> Result<T> {
    s.trim()
        .parse()
        .map_err(|_| Error::Parse(format!("cannot parse '{}'", s.trim())))
}

fn parse_fields<T: std::str::FromStr>(line: &str, n: usize) -> Result<Vec<T>> {
    let f: Vec<T> = line
        .split_whitespace()
        .map(parse_one)
        .collect::<Result<_>>()?;
    if f.len() != n {
        return Err(Error::Parse(format!("expected {n} fields in '{line}'")));
    }
    Ok(f)
}
