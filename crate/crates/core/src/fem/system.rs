//! Sparse symmetric systems on periodic P1 spaces.
//!
//! Slave vertices are folded onto their masters (index merging), an optional
//! anchor vertex is removed to fix the nullspace, and the sparsity pattern is
//! computed once per mesh. Element matrices are scattered through a
//! precomputed position map so repeated assemblies on the same mesh cost one
//! pass over the elements, and the symbolic Cholesky analysis is reused by
//! every numeric factorization.

use faer::linalg::solvers::Solve;
use faer::sparse::linalg::solvers::{Llt, SymbolicLlt};
use faer::sparse::{SparseColMat, SymbolicSparseColMat};
use faer::{Mat, Side};

use crate::error::{Error, Result};
use crate::mesh::UnitCellMesh;

/// Relative residual accepted by [`Factorized::solve`].
pub const RESIDUAL_TOL: f64 = 1e-10;

/// Relative diagonal shift of the fallback factorization.
const DIAGONAL_SHIFT: f64 = 1e-10;

/// Iterative refinement sweeps before a solve is declared failed.
const MAX_REFINEMENT: usize = 8;

const NONE: usize = usize::MAX;

/// Degree-of-freedom layout and sparsity pattern of a periodic system with
/// `block` unknowns per vertex.
#[derive(Debug, Clone)]
pub struct PeriodicSystem {
    block: usize,
    /// Equation index of every (vertex, component), `NONE` when pinned.
    equation: Vec<usize>,
    num_equations: usize,
    pattern: SymbolicSparseColMat<usize>,
    symbolic: Option<SymbolicLlt<usize>>,
    /// Per element, position in the value array of each local entry
    /// (row-major over the `3 block x 3 block` local matrix).
    scatter: Vec<usize>,
    /// Position of each diagonal entry in the value array.
    diagonal: Vec<usize>,
}

impl PeriodicSystem {
    /// Builds the layout. When `anchor` is given, every component of that
    /// vertex (and of the vertices identified with it) is pinned to zero.
    pub fn new(mesh: &UnitCellMesh, block: usize, anchor: Option<usize>) -> Result<Self> {
        let (dof_of_vertex, num_dofs) = mesh.periodic_dofs();
        let pinned_dof = anchor.map(|a| dof_of_vertex[a]);
        let mut eq_of_dof = vec![NONE; num_dofs];
        let mut count = 0;
        for (d, slot) in eq_of_dof.iter_mut().enumerate() {
            if Some(d) != pinned_dof {
                *slot = count;
                count += 1;
            }
        }
        let num_equations = count * block;
        if num_equations == 0 {
            return Err(Error::InvalidArgument("system has no free unknowns".into()));
        }
        let equation: Vec<usize> = (0..mesh.num_vertices())
            .flat_map(|v| {
                let e = eq_of_dof[dof_of_vertex[v]];
                (0..block).map(move |c| if e == NONE { NONE } else { e * block + c })
            })
            .collect();

        let mut columns: Vec<Vec<usize>> = vec![Vec::new(); num_equations];
        let local = 3 * block;
        let local_eqs = |t: &[usize; 3]| -> Vec<usize> {
            t.iter()
                .flat_map(|&v| (0..block).map(move |c| v * block + c))
                .map(|i| equation[i])
                .collect()
        };
        for t in mesh.triangles() {
            let eqs = local_eqs(t);
            for &c in &eqs {
                if c == NONE {
                    continue;
                }
                for &r in &eqs {
                    if r != NONE {
                        columns[c].push(r);
                    }
                }
            }
        }
        let mut col_ptr = Vec::with_capacity(num_equations + 1);
        let mut row_idx = Vec::new();
        col_ptr.push(0);
        for col in &mut columns {
            col.sort_unstable();
            col.dedup();
            row_idx.extend_from_slice(col);
            col_ptr.push(row_idx.len());
        }
        let find = |r: usize, c: usize| -> usize {
            let rows = &row_idx[col_ptr[c]..col_ptr[c + 1]];
            col_ptr[c] + rows.binary_search(&r).expect("entry in pattern")
        };
        let mut scatter = Vec::with_capacity(mesh.num_triangles() * local * local);
        for t in mesh.triangles() {
            let eqs = local_eqs(t);
            for &r in &eqs {
                for &c in &eqs {
                    scatter.push(if r == NONE || c == NONE { NONE } else { find(r, c) });
                }
            }
        }
        let diagonal = (0..num_equations).map(|i| find(i, i)).collect();
        let pattern =
            SymbolicSparseColMat::new_checked(num_equations, num_equations, col_ptr, None, row_idx);
        Ok(Self {
            block,
            equation,
            num_equations,
            pattern,
            symbolic: None,
            scatter,
            diagonal,
        })
    }

    pub fn block(&self) -> usize {
        self.block
    }

    pub fn num_equations(&self) -> usize {
        self.num_equations
    }

    pub fn nnz(&self) -> usize {
        self.pattern.row_idx().len()
    }

    /// Equation index of component `c` of vertex `v`, `None` when pinned.
    pub fn equation(&self, v: usize, c: usize) -> Option<usize> {
        let e = self.equation[v * self.block + c];
        (e != NONE).then_some(e)
    }

    /// Assembles `sum_e K_e` where `element_matrix(e, out)` fills the
    /// row-major local matrix of element `e`.
    pub fn assemble<F>(&self, num_elements: usize, mut element_matrix: F) -> Vec<f64>
    where
        F: FnMut(usize, &mut [f64]),
    {
        let local = 3 * self.block;
        let mut values = vec![0.0; self.nnz()];
        let mut ke = vec![0.0; local * local];
        for e in 0..num_elements {
            ke.iter_mut().for_each(|x| *x = 0.0);
            element_matrix(e, &mut ke);
            let map = &self.scatter[e * local * local..(e + 1) * local * local];
            for (pos, &v) in map.iter().zip(&ke) {
                if *pos != NONE {
                    values[*pos] += v;
                }
            }
        }
        values
    }

    /// Assembles a right-hand side from local element vectors.
    pub fn assemble_vector<F>(&self, mesh: &UnitCellMesh, mut element_vector: F) -> Vec<f64>
    where
        F: FnMut(usize, &mut [f64]),
    {
        let local = 3 * self.block;
        let mut out = vec![0.0; self.num_equations];
        let mut fe = vec![0.0; local];
        for (e, t) in mesh.triangles().iter().enumerate() {
            fe.iter_mut().for_each(|x| *x = 0.0);
            element_vector(e, &mut fe);
            for (i, &v) in t.iter().enumerate() {
                for c in 0..self.block {
                    if let Some(eq) = self.equation(v, c) {
                        out[eq] += fe[i * self.block + c];
                    }
                }
            }
        }
        out
    }

    /// Builds the sparse matrix holding `values` on the system pattern.
    pub fn matrix(&self, values: Vec<f64>) -> SparseColMat<usize, f64> {
        SparseColMat::new(self.pattern.clone(), values)
    }

    /// Numeric Cholesky factorization of the assembled matrix.
    pub fn factorize(&mut self, values: Vec<f64>) -> Result<Factorized> {
        if let Some(bad) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("system matrix entry {bad}")));
        }
        if let Some(i) = self.diagonal.iter().position(|&p| !(values[p] > 0.0)) {
            return Err(Error::Solver(format!(
                "non-positive diagonal at equation {i}: the system is singular \
                 (density below its lower bound or broken periodic pairing?)"
            )));
        }
        let shifted = {
            let mut v = values.clone();
            for &p in &self.diagonal {
                v[p] *= 1.0 + DIAGONAL_SHIFT;
            }
            v
        };
        let matrix = self.matrix(values);
        if self.symbolic.is_none() {
            let sym = SymbolicLlt::try_new(self.pattern.as_ref(), Side::Lower)
                .map_err(|e| Error::Solver(format!("symbolic analysis failed: {e:?}")))?;
            self.symbolic = Some(sym);
        }
        let symbolic = self.symbolic.clone().expect("symbolic factorization");
        // Extreme coefficient contrast can break the factorization through
        // roundoff. Retry on a slightly shifted diagonal; refinement against
        // the exact matrix restores the accuracy.
        let llt = match Llt::try_new_with_symbolic(symbolic.clone(), matrix.as_ref(), Side::Lower) {
            Ok(llt) => llt,
            Err(_) => {
                log::debug!("Cholesky failed, retrying with a diagonal shift");
                let m = self.matrix(shifted);
                Llt::try_new_with_symbolic(symbolic, m.as_ref(), Side::Lower).map_err(|e| {
                    Error::Solver(format!(
                        "Cholesky factorization failed ({e:?}); the system is not positive definite"
                    ))
                })?
            }
        };
        Ok(Factorized { matrix, llt })
    }

    /// Scatters an equation-space vector back to per-vertex components
    /// (pinned entries are zero).
    pub fn expand(&self, x: &[f64]) -> Vec<f64> {
        self.equation
            .iter()
            .map(|&e| if e == NONE { 0.0 } else { x[e] })
            .collect()
    }

    /// Gathers per-vertex components into equation space by summation, the
    /// transpose of [`expand`](Self::expand).
    pub fn fold(&self, per_vertex: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.num_equations];
        for (i, &e) in self.equation.iter().enumerate() {
            if e != NONE {
                out[e] += per_vertex[i];
            }
        }
        out
    }
}

/// A factorized system matrix.
pub struct Factorized {
    matrix: SparseColMat<usize, f64>,
    llt: Llt<usize, f64>,
}

impl Factorized {
    pub fn matrix(&self) -> &SparseColMat<usize, f64> {
        &self.matrix
    }

    /// Solves for several right-hand sides sharing the factorization, with
    /// iterative refinement until the relative residual is at most
    /// [`RESIDUAL_TOL`].
    pub fn solve(&self, rhs: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
        let n = self.matrix.nrows();
        let k = rhs.len();
        if k == 0 {
            return Ok(Vec::new());
        }
        let b = Mat::<f64>::from_fn(n, k, |i, j| rhs[j][i]);
        let mut x = self.llt.solve(&b);
        let bnorm: Vec<f64> = rhs.iter().map(|r| norm2(r)).collect();
        for sweep in 0..=MAX_REFINEMENT {
            let r = &b - &self.matrix * &x;
            let worst = (0..k)
                .map(|j| {
                    let rn = r.col(j).norm_l2();
                    if bnorm[j] > 0.0 { rn / bnorm[j] } else { rn }
                })
                .fold(0.0f64, f64::max);
            if !worst.is_finite() {
                return Err(Error::NonFinite("linear solve".into()));
            }
            if worst <= RESIDUAL_TOL {
                break;
            }
            if sweep == MAX_REFINEMENT {
                return Err(Error::Solver(format!(
                    "relative residual {worst:e} above {RESIDUAL_TOL:e} after iterative refinement"
                )));
            }
            let dx = self.llt.solve(&r);
            x += dx;
        }
        Ok((0..k).map(|j| x.col(j).iter().copied().collect()).collect())
    }

    /// Relative residual `|A x - b| / |b|`.
    pub fn relative_residual(&self, x: &[f64], b: &[f64]) -> f64 {
        let xm = Mat::<f64>::from_fn(x.len(), 1, |i, _| x[i]);
        let ax = &self.matrix * &xm;
        let r: f64 = b
            .iter()
            .enumerate()
            .map(|(i, bi)| (ax[(i, 0)] - bi).powi(2))
            .sum::<f64>()
            .sqrt();
        let bn = norm2(b);
        if bn > 0.0 { r / bn } else { r }
    }
}

fn norm2(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}
