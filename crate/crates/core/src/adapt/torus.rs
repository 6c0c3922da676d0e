//! Local remeshing on the flat torus.
//!
//! Vertices are the periodic masters, with coordinates in `[0, 1)^2`.
//! Triangle geometry is recovered by taking, for every vertex, the periodic
//! image nearest to the first vertex of the triangle, which is unambiguous
//! while every edge spans less than half the cell in each direction.
//!
//! The lines `x = 0` and `y = 0` (the seams) always stay unions of edges, so
//! the torus can be cut back into a triangulation of the unit square:
//! seam vertices only slide along their seam, the origin never moves, seam
//! edges are never flipped and seam vertices only collapse along the seam.

use std::collections::HashMap;

use crate::error::{Error, Result};
use crate::linalg::{self, Point, Sym2};
use crate::mesh::{PointLocator, UnitCellMesh, PERIODIC_TOL};

/// Largest per-component extent of an edge.
pub const EDGE_CAP: f64 = 0.45;

const SEAM_X: u8 = 1;
const SEAM_Y: u8 = 2;

const SQRT2: f64 = std::f64::consts::SQRT_2;

/// Minimum distance of a non-seam vertex from the seam lines.
const SEAM_CLEARANCE: f64 = 1e-7;

/// Source of the target metric at arbitrary points.
pub(crate) struct Background<'a> {
    locator: PointLocator<'a>,
    mesh: &'a UnitCellMesh,
    metric: Vec<Sym2>,
}

impl<'a> Background<'a> {
    pub(crate) fn new(mesh: &'a UnitCellMesh, metric: Vec<Sym2>) -> Self {
        Self { locator: PointLocator::new(mesh), mesh, metric }
    }

    pub(crate) fn metric_at(&self, p: Point) -> Sym2 {
        let (k, b) = self.locator.locate(p);
        let t = self.mesh.triangles()[k];
        (0..3).fold(Sym2::ZERO, |acc, i| acc.plus(&self.metric[t[i]].scaled(b[i])))
    }
}

pub(crate) fn wrap_delta(d: f64) -> f64 {
    d - d.round()
}

pub(crate) fn wrap01(c: f64) -> f64 {
    let w = c - c.floor();
    if w >= 1.0 {
        0.0
    } else {
        w
    }
}

fn delta(a: Point, b: Point) -> Point {
    [wrap_delta(b[0] - a[0]), wrap_delta(b[1] - a[1])]
}

/// Metric length of `d` under the vertex metrics of its two endpoints,
/// normalized so that the edges of an element matching its own metric
/// have unit length.
pub(crate) fn metric_length(ma: &Sym2, mb: &Sym2, d: Point) -> f64 {
    0.5 * (ma.quad(d).max(0.0).sqrt() + mb.quad(d).max(0.0).sqrt()) / 3f64.sqrt()
}

/// Shape quality in the metric `m / 3`: 1 for equilateral, 0 for flat.
fn quality(p: [Point; 3], m: &Sym2) -> f64 {
    let area = linalg::signed_area(p[0], p[1], p[2]);
    let m = m.scaled(1.0 / 3.0);
    let det = m.det();
    if !(area > 0.0) || !(det > 0.0) {
        return 0.0;
    }
    let sum: f64 = (0..3).map(|i| m.quad(linalg::sub(p[(i + 1) % 3], p[i]))).sum();
    4.0 * 3f64.sqrt() * area * det.sqrt() / sum
}

#[derive(Debug, Clone, Default)]
pub(crate) struct SweepStats {
    pub splits: usize,
    pub collapses: usize,
    pub flips: usize,
    pub moves: usize,
}

pub(crate) struct Torus<'a> {
    pos: Vec<Point>,
    seam: Vec<u8>,
    metric: Vec<Sym2>,
    alive_v: Vec<bool>,
    tris: Vec<[usize; 3]>,
    alive_t: Vec<bool>,
    vt: Vec<Vec<usize>>,
    touched: Vec<bool>,
    bg: &'a Background<'a>,
}

impl<'a> Torus<'a> {
    pub(crate) fn from_mesh(mesh: &UnitCellMesh, bg: &'a Background<'a>) -> Result<Self> {
        let (dof, n) = mesh.periodic_dofs();
        let mut pos = vec![[0.0; 2]; n];
        let mut seam = vec![0u8; n];
        for v in 0..mesh.num_vertices() {
            if mesh.master_of(v) == v {
                let mut p = mesh.vertices()[v];
                let mut s = 0;
                if p[0].abs() <= PERIODIC_TOL {
                    p[0] = 0.0;
                    s |= SEAM_X;
                }
                if p[1].abs() <= PERIODIC_TOL {
                    p[1] = 0.0;
                    s |= SEAM_Y;
                }
                pos[dof[v]] = p;
                seam[dof[v]] = s;
            }
        }
        let tris: Vec<[usize; 3]> = mesh.triangles().iter().map(|t| t.map(|v| dof[v])).collect();
        for t in &tris {
            for i in 0..3 {
                let d = delta(pos[t[i]], pos[t[(i + 1) % 3]]);
                if d[0].abs() >= EDGE_CAP || d[1].abs() >= EDGE_CAP {
                    return Err(Error::Remesh(format!(
                        "edge spanning {d:?} is too long for periodic remeshing (limit {EDGE_CAP})"
                    )));
                }
            }
        }
        let mut torus = Self {
            metric: Vec::with_capacity(n),
            alive_v: vec![true; n],
            alive_t: vec![true; tris.len()],
            touched: vec![false; tris.len()],
            vt: Vec::new(),
            pos,
            seam,
            tris,
            bg,
        };
        torus.metric = (0..n).map(|v| torus.metric_at(torus.pos[v])).collect();
        torus.rebuild();
        for t in 0..torus.tris.len() {
            if !(torus.area(t) > 0.0) {
                return Err(Error::Remesh(format!("input triangle {t} is not positively oriented")));
            }
        }
        Ok(torus)
    }

    fn metric_at(&self, p: Point) -> Sym2 {
        self.bg.metric_at(p)
    }

    pub(crate) fn num_vertices(&self) -> usize {
        self.alive_v.iter().filter(|a| **a).count()
    }

    pub(crate) fn num_triangles(&self) -> usize {
        self.alive_t.iter().filter(|a| **a).count()
    }

    fn rebuild(&mut self) {
        self.vt = vec![Vec::new(); self.pos.len()];
        for (t, tri) in self.tris.iter().enumerate() {
            if self.alive_t[t] {
                for &v in tri {
                    self.vt[v].push(t);
                }
            }
        }
        self.touched = vec![false; self.tris.len()];
    }

    /// Coordinates of triangle `t` unwrapped around its first vertex.
    fn coords(&self, t: usize) -> [Point; 3] {
        let [a, b, c] = self.tris[t];
        let p = self.pos[a];
        [p, linalg::add(p, delta(p, self.pos[b])), linalg::add(p, delta(p, self.pos[c]))]
    }

    fn area(&self, t: usize) -> f64 {
        let [a, b, c] = self.coords(t);
        linalg::signed_area(a, b, c)
    }

    fn tri_metric(&self, tri: [usize; 3]) -> Sym2 {
        self.metric[tri[0]]
            .plus(&self.metric[tri[1]])
            .plus(&self.metric[tri[2]])
            .scaled(1.0 / 3.0)
    }

    fn tri_quality(&self, t: usize) -> f64 {
        quality(self.coords(t), &self.tri_metric(self.tris[t]))
    }

    fn edge_length(&self, a: usize, b: usize) -> f64 {
        metric_length(&self.metric[a], &self.metric[b], delta(self.pos[a], self.pos[b]))
    }

    fn is_seam_edge(&self, a: usize, b: usize) -> bool {
        let d = delta(self.pos[a], self.pos[b]);
        let common = self.seam[a] & self.seam[b];
        (common & SEAM_X != 0 && d[0] == 0.0) || (common & SEAM_Y != 0 && d[1] == 0.0)
    }

    /// Unique edges of the alive triangles.
    pub(crate) fn edges(&self) -> Vec<(usize, usize)> {
        let mut out: Vec<(usize, usize)> = Vec::with_capacity(self.tris.len() * 3 / 2);
        for (t, tri) in self.tris.iter().enumerate() {
            if !self.alive_t[t] {
                continue;
            }
            for i in 0..3 {
                let (a, b) = (tri[i], tri[(i + 1) % 3]);
                if a < b {
                    out.push((a, b));
                }
            }
        }
        out.sort_unstable();
        out
    }

    /// Metric lengths of all edges.
    pub(crate) fn edge_lengths(&self) -> Vec<f64> {
        self.edges().iter().map(|&(a, b)| self.edge_length(a, b)).collect()
    }

    fn star_untouched(&self, v: usize) -> bool {
        self.vt[v].iter().all(|&t| !self.touched[t])
    }

    fn shared(&self, a: usize, b: usize) -> Vec<usize> {
        self.vt[a]
            .iter()
            .copied()
            .filter(|t| self.tris[*t].contains(&b))
            .collect()
    }

    fn neighbors(&self, v: usize) -> Vec<usize> {
        let mut n: Vec<usize> = self.vt[v]
            .iter()
            .flat_map(|&t| self.tris[t].iter().copied())
            .filter(|&w| w != v)
            .collect();
        n.sort_unstable();
        n.dedup();
        n
    }

    fn push_triangle(&mut self, tri: [usize; 3]) -> usize {
        self.tris.push(tri);
        self.alive_t.push(true);
        self.touched.push(true);
        self.tris.len() - 1
    }

    /// Splits every independent edge longer than `sqrt 2`, longest first.
    fn split_pass(&mut self) -> usize {
        self.rebuild();
        let mut cand: Vec<(f64, usize, usize)> = self
            .edges()
            .into_iter()
            .map(|(a, b)| (self.edge_length(a, b), a, b))
            .filter(|c| c.0 > SQRT2)
            .collect();
        cand.sort_by(|x, y| y.0.total_cmp(&x.0).then((x.1, x.2).cmp(&(y.1, y.2))));
        let mut count = 0;
        for (_, a, b) in cand {
            if !(self.star_untouched(a) && self.star_untouched(b)) {
                continue;
            }
            if self.split(a, b) {
                count += 1;
            }
        }
        count
    }

    fn split(&mut self, a: usize, b: usize) -> bool {
        let shared = self.shared(a, b);
        if shared.len() != 2 {
            return false;
        }
        let d = delta(self.pos[a], self.pos[b]);
        let mid = linalg::add(self.pos[a], linalg::scale(d, 0.5));
        let seam_edge = self.is_seam_edge(a, b);
        let mut p = [wrap01(mid[0]), wrap01(mid[1])];
        let mut s = 0;
        if seam_edge {
            s = self.seam[a] & self.seam[b];
            if s & SEAM_X != 0 && d[0] == 0.0 {
                p[0] = 0.0;
            } else {
                s &= !SEAM_X;
            }
            if s & SEAM_Y != 0 && d[1] == 0.0 {
                p[1] = 0.0;
            } else {
                s &= !SEAM_Y;
            }
        } else if p[0] < SEAM_CLEARANCE || p[1] < SEAM_CLEARANCE {
            return false;
        }
        let m = self.pos.len();
        self.pos.push(p);
        self.seam.push(s);
        let mm = self.metric_at(p);
        self.metric.push(mm);
        self.alive_v.push(true);
        self.vt.push(Vec::new());
        for t in shared {
            let tri = self.tris[t];
            // rotate so the triangle reads (x, y, c) with {x, y} = {a, b}
            let r = (0..3).find(|&i| tri[i] != a && tri[i] != b).expect("third vertex");
            let c = tri[r];
            let (x, y) = (tri[(r + 1) % 3], tri[(r + 2) % 3]);
            self.alive_t[t] = false;
            self.touched[t] = true;
            self.push_triangle([x, m, c]);
            self.push_triangle([m, y, c]);
        }
        true
    }

    /// Collapses every independent edge shorter than `1/sqrt 2`, shortest
    /// first.
    fn collapse_pass(&mut self) -> usize {
        self.rebuild();
        let mut cand: Vec<(f64, usize, usize)> = self
            .edges()
            .into_iter()
            .map(|(a, b)| (self.edge_length(a, b), a, b))
            .filter(|c| c.0 < 1.0 / SQRT2)
            .collect();
        cand.sort_by(|x, y| x.0.total_cmp(&y.0).then((x.1, x.2).cmp(&(y.1, y.2))));
        let mut count = 0;
        for (_, a, b) in cand {
            if !(self.alive_v[a] && self.alive_v[b]) {
                continue;
            }
            if !(self.star_untouched(a) && self.star_untouched(b)) {
                continue;
            }
            if self.try_collapse(a, b) || self.try_collapse(b, a) {
                count += 1;
            }
        }
        count
    }

    fn may_remove(&self, a: usize, b: usize) -> bool {
        match self.seam[a] {
            0 => true,
            SEAM_X | SEAM_Y => {
                let s = self.seam[a];
                let d = delta(self.pos[a], self.pos[b]);
                let along = if s == SEAM_X { d[0] == 0.0 } else { d[1] == 0.0 };
                self.seam[b] & s != 0 && along
            }
            _ => false,
        }
    }

    /// Removes `a` by merging it into `b`.
    fn try_collapse(&mut self, a: usize, b: usize) -> bool {
        if !self.may_remove(a, b) || self.num_vertices() <= 9 {
            return false;
        }
        let shared = self.shared(a, b);
        if shared.len() != 2 {
            return false;
        }
        let opposite: Vec<usize> = shared
            .iter()
            .map(|&t| *self.tris[t].iter().find(|&&v| v != a && v != b).expect("third vertex"))
            .collect();
        let na = self.neighbors(a);
        let nb = self.neighbors(b);
        let common: Vec<usize> = na.iter().copied().filter(|v| nb.binary_search(v).is_ok()).collect();
        if common.len() != 2 || !opposite.iter().all(|v| common.contains(v)) {
            return false;
        }
        let pa = self.pos[a];
        let local = |v: usize| linalg::add(pa, delta(pa, self.pos[v]));
        let pb = local(b);
        let mut old_q = f64::INFINITY;
        let mut new_q = f64::INFINITY;
        for &t in &self.vt[a] {
            old_q = old_q.min(self.tri_quality(t));
            if shared.contains(&t) {
                continue;
            }
            let tri = self.tris[t];
            let mut p = tri.map(local);
            let mut nt = tri;
            for i in 0..3 {
                if tri[i] == a {
                    p[i] = pb;
                    nt[i] = b;
                }
            }
            for i in 0..3 {
                let e = linalg::sub(p[(i + 1) % 3], p[i]);
                if e[0].abs() >= EDGE_CAP || e[1].abs() >= EDGE_CAP {
                    return false;
                }
            }
            let q = quality(p, &self.tri_metric(nt));
            if !(linalg::signed_area(p[0], p[1], p[2]) > 0.0) {
                return false;
            }
            new_q = new_q.min(q);
            for &w in &tri {
                if w != a && metric_length(&self.metric[b], &self.metric[w], linalg::sub(local(w), pb)) > SQRT2 {
                    return false;
                }
            }
        }
        if new_q < 0.2_f64.min(0.8 * old_q) {
            return false;
        }
        for t in self.vt[a].clone() {
            self.touched[t] = true;
            if shared.contains(&t) {
                self.alive_t[t] = false;
            } else {
                for v in self.tris[t].iter_mut() {
                    if *v == a {
                        *v = b;
                    }
                }
            }
        }
        for &t in &self.vt[b] {
            self.touched[t] = true;
        }
        self.alive_v[a] = false;
        true
    }

    /// Flips edges whose flip raises the smaller of the two metric
    /// qualities.
    fn flip_pass(&mut self) -> usize {
        self.rebuild();
        let mut count = 0;
        for (a, b) in self.edges() {
            if self.is_seam_edge(a, b) {
                continue;
            }
            let shared = self.shared(a, b);
            if shared.len() != 2 || shared.iter().any(|&t| self.touched[t]) {
                continue;
            }
            // orient: t1 = (a, b, c), t2 = (b, a, d)
            let (mut t1, mut t2) = (shared[0], shared[1]);
            let follows = |t: usize, x: usize, y: usize| {
                let tri = self.tris[t];
                (0..3).any(|i| tri[i] == x && tri[(i + 1) % 3] == y)
            };
            if !follows(t1, a, b) {
                std::mem::swap(&mut t1, &mut t2);
            }
            if !(follows(t1, a, b) && follows(t2, b, a)) {
                continue;
            }
            let c = *self.tris[t1].iter().find(|&&v| v != a && v != b).expect("third vertex");
            let d = *self.tris[t2].iter().find(|&&v| v != a && v != b).expect("third vertex");
            if c == d || self.neighbors(c).binary_search(&d).is_ok() {
                continue;
            }
            let pa = self.pos[a];
            let local = |v: usize| linalg::add(pa, delta(pa, self.pos[v]));
            let (qa, qb, qc, qd) = (pa, local(b), local(c), local(d));
            let e = linalg::sub(qd, qc);
            if e[0].abs() >= EDGE_CAP || e[1].abs() >= EDGE_CAP {
                continue;
            }
            let n1 = [a, d, c];
            let n2 = [d, b, c];
            let before = self.tri_quality(t1).min(self.tri_quality(t2));
            let after = quality([qa, qd, qc], &self.tri_metric(n1)).min(quality([qd, qb, qc], &self.tri_metric(n2)));
            if after > 1.02 * before {
                self.tris[t1] = n1;
                self.tris[t2] = n2;
                self.touched[t1] = true;
                self.touched[t2] = true;
                count += 1;
            }
        }
        count
    }

    /// Moves every vertex towards the point at unit metric distance from its
    /// neighbours, when this does not lower the quality of its star.
    fn smooth_pass(&mut self) -> usize {
        self.rebuild();
        let mut moved = 0;
        for v in 0..self.pos.len() {
            if !self.alive_v[v] || self.seam[v] == SEAM_X | SEAM_Y || self.vt[v].is_empty() {
                continue;
            }
            let pv = self.pos[v];
            let local = |w: usize| linalg::add(pv, delta(pv, self.pos[w]));
            let nbrs = self.neighbors(v);
            let mut target = [0.0; 2];
            for &w in &nbrs {
                let pw = local(w);
                let l = self.edge_length(v, w).max(1e-12);
                let q = linalg::add(pw, linalg::scale(linalg::sub(pv, pw), 1.0 / l));
                target = linalg::add(target, q);
            }
            target = linalg::scale(target, 1.0 / nbrs.len() as f64);
            let mut new = linalg::add(pv, linalg::scale(linalg::sub(target, pv), 0.5));
            if self.seam[v] == SEAM_X {
                new[0] = 0.0;
            }
            if self.seam[v] == SEAM_Y {
                new[1] = 0.0;
            }
            let wrapped = [
                if self.seam[v] & SEAM_X != 0 { 0.0 } else { wrap01(new[0]) },
                if self.seam[v] & SEAM_Y != 0 { 0.0 } else { wrap01(new[1]) },
            ];
            if (self.seam[v] & SEAM_X == 0 && wrapped[0] < SEAM_CLEARANCE)
                || (self.seam[v] & SEAM_Y == 0 && wrapped[1] < SEAM_CLEARANCE)
                || (self.seam[v] & SEAM_X == 0 && wrapped[0] > 1.0 - SEAM_CLEARANCE)
                || (self.seam[v] & SEAM_Y == 0 && wrapped[1] > 1.0 - SEAM_CLEARANCE)
            {
                continue;
            }
            let new_metric = self.metric_at(wrapped);
            let mut old_q = f64::INFINITY;
            let mut new_q = f64::INFINITY;
            let mut ok = true;
            for &t in &self.vt[v] {
                old_q = old_q.min(self.tri_quality(t));
                let tri = self.tris[t];
                let mut p = tri.map(local);
                let mut m = Sym2::ZERO;
                for i in 0..3 {
                    if tri[i] == v {
                        p[i] = new;
                        m = m.plus(&new_metric);
                    } else {
                        m = m.plus(&self.metric[tri[i]]);
                    }
                }
                for i in 0..3 {
                    let e = linalg::sub(p[(i + 1) % 3], p[i]);
                    if e[0].abs() >= EDGE_CAP || e[1].abs() >= EDGE_CAP {
                        ok = false;
                    }
                }
                if !(linalg::signed_area(p[0], p[1], p[2]) > 0.0) {
                    ok = false;
                }
                new_q = new_q.min(quality(p, &m.scaled(1.0 / 3.0)));
            }
            if ok && new_q >= old_q {
                self.pos[v] = wrapped;
                self.metric[v] = new_metric;
                moved += 1;
            }
        }
        moved
    }

    /// Runs up to `max_sweeps` sweeps of split, collapse, flip and smoothing
    /// passes, stopping once no edge is split or collapsed.
    pub(crate) fn remesh(&mut self, max_sweeps: usize) -> (usize, SweepStats) {
        let mut total = SweepStats::default();
        let mut sweeps = 0;
        for _ in 0..max_sweeps {
            sweeps += 1;
            let mut s = SweepStats::default();
            for _ in 0..40 {
                let n = self.split_pass();
                s.splits += n;
                if n == 0 {
                    break;
                }
            }
            for _ in 0..40 {
                let n = self.collapse_pass();
                s.collapses += n;
                if n == 0 {
                    break;
                }
            }
            for _ in 0..8 {
                let n = self.flip_pass();
                s.flips += n;
                if n == 0 {
                    break;
                }
            }
            for _ in 0..3 {
                s.moves += self.smooth_pass();
                s.flips += self.flip_pass();
            }
            log::debug!(
                "remesh sweep {sweeps}: {} splits, {} collapses, {} flips, {} moves, {} triangles",
                s.splits,
                s.collapses,
                s.flips,
                s.moves,
                self.num_triangles()
            );
            total.splits += s.splits;
            total.collapses += s.collapses;
            total.flips += s.flips;
            total.moves += s.moves;
            if s.splits == 0 && s.collapses == 0 {
                break;
            }
        }
        self.rebuild();
        (sweeps, total)
    }

    /// Cuts the torus open into a triangulation of the unit square. Returns
    /// the mesh and, for every vertex of the mesh, its torus vertex.
    pub(crate) fn to_mesh(&self) -> Result<(UnitCellMesh, Vec<usize>, Vec<Sym2>)> {
        let mut index: HashMap<(usize, i8, i8), usize> = HashMap::new();
        let mut vertices = Vec::new();
        let mut origin = Vec::new();
        let mut metrics = Vec::new();
        let mut triangles = Vec::with_capacity(self.num_triangles());
        // keep vertex numbering stable: walk torus vertices in order first
        let mut order: Vec<(usize, [Point; 3])> = Vec::new();
        for t in 0..self.tris.len() {
            if self.alive_t[t] {
                order.push((t, self.coords(t)));
            }
        }
        for (t, p) in order {
            let c = [(p[0][0] + p[1][0] + p[2][0]) / 3.0, (p[0][1] + p[1][1] + p[2][1]) / 3.0];
            let shift = [-c[0].floor(), -c[1].floor()];
            let mut tri = [0; 3];
            for i in 0..3 {
                let v = self.tris[t][i];
                let q = linalg::add(p[i], shift);
                let o = [(q[0] - self.pos[v][0]).round(), (q[1] - self.pos[v][1]).round()];
                if !(o[0] == 0.0 || o[0] == 1.0) || !(o[1] == 0.0 || o[1] == 1.0) {
                    return Err(Error::Remesh(format!("triangle {t} leaves the unit square")));
                }
                if (o[0] != 0.0 && self.seam[v] & SEAM_X == 0) || (o[1] != 0.0 && self.seam[v] & SEAM_Y == 0) {
                    return Err(Error::Remesh(format!("triangle {t} crosses a seam")));
                }
                let key = (v, o[0] as i8, o[1] as i8);
                tri[i] = *index.entry(key).or_insert_with(|| {
                    vertices.push([self.pos[v][0] + o[0], self.pos[v][1] + o[1]]);
                    origin.push(v);
                    metrics.push(self.metric[v]);
                    vertices.len() - 1
                });
            }
            triangles.push(tri);
        }
        let mesh = UnitCellMesh::new(vertices, triangles)?;
        mesh.validate()?;
        Ok((mesh, origin, metrics))
    }

    pub(crate) fn position(&self, v: usize) -> Point {
        self.pos[v]
    }
}
