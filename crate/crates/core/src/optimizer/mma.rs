//! Method of moving asymptotes for
//!
//! `min f0(x)  s.t.  g_i(x) <= 0,  xmin <= x <= xmax`.
//!
//! Each outer iteration replaces `f0` and `g_i` by separable convex
//! approximations built on the moving asymptotes `L < x < U`, adds elastic
//! variables `y_i` (weights `c_i = 1000`, `d_i = 1`) so the subproblem is
//! always feasible, and solves its concave dual by projected Newton.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const ASYMPTOTE_INIT: f64 = 0.5;
const ASYMPTOTE_SHRINK: f64 = 0.7;
const ASYMPTOTE_GROW: f64 = 1.2;
const ALBEFA: f64 = 0.1;
const ELASTIC_C: f64 = 1000.0;
const ELASTIC_D: f64 = 1.0;
const RAA0: f64 = 1e-5;

/// One evaluation of objective and constraints with their gradients.
#[derive(Debug, Clone, Default)]
pub struct Evaluation {
    pub objective: f64,
    pub gradient: Vec<f64>,
    /// `g_i(x)`, feasible when `<= 0`.
    pub constraints: Vec<f64>,
    pub jacobian: Vec<Vec<f64>>,
}

impl Evaluation {
    fn check(&self, n: usize, m: usize) -> Result<()> {
        if self.gradient.len() != n || self.constraints.len() != m || self.jacobian.len() != m {
            return Err(Error::InvalidArgument("evaluation has inconsistent dimensions".into()));
        }
        if self.jacobian.iter().any(|r| r.len() != n) {
            return Err(Error::InvalidArgument("jacobian row has the wrong length".into()));
        }
        let finite = self.objective.is_finite()
            && self.gradient.iter().all(|v| v.is_finite())
            && self.constraints.iter().all(|v| v.is_finite())
            && self.jacobian.iter().flatten().all(|v| v.is_finite());
        if !finite {
            return Err(Error::NonFinite("optimization callback".into()));
        }
        Ok(())
    }
}

/// A smooth inequality-constrained problem on a box.
pub trait Problem {
    fn num_vars(&self) -> usize;
    fn num_constraints(&self) -> usize;
    fn lower(&self) -> Vec<f64>;
    fn upper(&self) -> Vec<f64>;
    fn evaluate(&mut self, x: &[f64]) -> Result<Evaluation>;
    /// Called after every accepted iterate with its evaluation.
    fn record(&mut self, _step: &Step, _eval: &Evaluation) {}
}

/// Progress of one outer iteration.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Step {
    pub iteration: usize,
    pub objective: f64,
    pub kkt: f64,
    /// Largest positive constraint value.
    pub infeasibility: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Termination {
    Converged,
    IterationLimit,
    SubproblemFailure,
}

#[derive(Debug, Clone)]
pub struct Outcome {
    pub x: Vec<f64>,
    pub evaluation: Evaluation,
    pub multipliers: Vec<f64>,
    pub iterations: usize,
    pub kkt: f64,
    pub termination: Termination,
}

/// First-order optimality residual: the largest of the L1 norm of the
/// projected Lagrangian gradient, the constraint violation and the
/// complementarity products.
pub fn kkt_residual(x: &[f64], lo: &[f64], hi: &[f64], e: &Evaluation, lambda: &[f64]) -> f64 {
    let mut stat = 0.0;
    for j in 0..x.len() {
        let mut gj = e.gradient[j];
        for (i, l) in lambda.iter().enumerate() {
            gj += l * e.jacobian[i][j];
        }
        let range = (hi[j] - lo[j]).max(f64::MIN_POSITIVE);
        let at_lo = x[j] - lo[j] <= 1e-12 * range;
        let at_hi = hi[j] - x[j] <= 1e-12 * range;
        stat += if at_lo {
            gj.min(0.0).abs()
        } else if at_hi {
            gj.max(0.0)
        } else {
            gj.abs()
        };
    }
    let viol = e.constraints.iter().fold(0.0f64, |a, &g| a.max(g));
    let comp = e
        .constraints
        .iter()
        .zip(lambda)
        .fold(0.0f64, |a, (g, l)| a.max((g * l).abs()));
    stat.max(viol).max(comp)
}

/// Settings of [`optimize`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MmaSettings {
    pub max_iterations: usize,
    pub kkt_tol: f64,
    /// Largest change of any variable per iteration, relative to its range.
    pub move_limit: f64,
}

impl Default for MmaSettings {
    fn default() -> Self {
        Self { max_iterations: 100, kkt_tol: 1e-5, move_limit: 0.2 }
    }
}

struct Approximation {
    low: Vec<f64>,
    upp: Vec<f64>,
    alpha: Vec<f64>,
    beta: Vec<f64>,
    p0: Vec<f64>,
    q0: Vec<f64>,
    p: Vec<Vec<f64>>,
    q: Vec<Vec<f64>>,
    /// Constant terms: approximation of g_i is `r_i + sum p/(U-x) + q/(x-L)`.
    r: Vec<f64>,
}

impl Approximation {
    fn primal(&self, lambda: &[f64], j: usize) -> f64 {
        let (pp, qq) = self.pq(lambda, j);
        let (l, u) = (self.low[j], self.upp[j]);
        let (sp, sq) = (pp.sqrt(), qq.sqrt());
        let x = (sp * l + sq * u) / (sp + sq);
        x.clamp(self.alpha[j], self.beta[j])
    }

    fn pq(&self, lambda: &[f64], j: usize) -> (f64, f64) {
        let mut pp = self.p0[j];
        let mut qq = self.q0[j];
        for (i, l) in lambda.iter().enumerate() {
            pp += l * self.p[i][j];
            qq += l * self.q[i][j];
        }
        (pp, qq)
    }

    fn elastic(lambda_i: f64) -> f64 {
        ((lambda_i - ELASTIC_C) / ELASTIC_D).max(0.0)
    }

    /// Dual function value and gradient at `lambda`, with `x(lambda)`.
    fn dual(&self, lambda: &[f64]) -> (f64, Vec<f64>, Vec<f64>) {
        let n = self.low.len();
        let m = lambda.len();
        let mut x = Vec::with_capacity(n);
        let mut w = 0.0;
        let mut grad = self.r.clone();
        for j in 0..n {
            let xj = self.primal(lambda, j);
            let (pp, qq) = self.pq(lambda, j);
            let (du, dl) = (self.upp[j] - xj, xj - self.low[j]);
            w += pp / du + qq / dl;
            for i in 0..m {
                grad[i] += self.p[i][j] / du + self.q[i][j] / dl;
            }
            x.push(xj);
        }
        for i in 0..m {
            let y = Self::elastic(lambda[i]);
            w += ELASTIC_C * y + 0.5 * ELASTIC_D * y * y - lambda[i] * y + lambda[i] * self.r[i];
            grad[i] -= y;
        }
        (w, grad, x)
    }

    /// Hessian of the dual function at `lambda` (negative semi-definite).
    fn dual_hessian(&self, lambda: &[f64], x: &[f64]) -> Vec<Vec<f64>> {
        let m = lambda.len();
        let mut h = vec![vec![0.0; m]; m];
        let mut dg = vec![0.0; m];
        for j in 0..x.len() {
            if x[j] <= self.alpha[j] || x[j] >= self.beta[j] {
                continue;
            }
            let (pp, qq) = self.pq(lambda, j);
            let (du, dl) = (self.upp[j] - x[j], x[j] - self.low[j]);
            let curv = 2.0 * pp / du.powi(3) + 2.0 * qq / dl.powi(3);
            for i in 0..m {
                dg[i] = self.p[i][j] / (du * du) - self.q[i][j] / (dl * dl);
            }
            for a in 0..m {
                for b in 0..m {
                    h[a][b] -= dg[a] * dg[b] / curv;
                }
            }
        }
        for (i, l) in lambda.iter().enumerate() {
            if *l > ELASTIC_C {
                h[i][i] -= 1.0 / ELASTIC_D;
            }
        }
        h
    }
}

/// Maximizes the concave dual over `lambda >= 0`.
fn solve_dual(approx: &Approximation, m: usize) -> Result<(Vec<f64>, Vec<f64>)> {
    let mut lambda = vec![0.0; m];
    if m == 0 {
        let (_, _, x) = approx.dual(&lambda);
        return Ok((x, lambda));
    }
    let (mut w, mut grad, mut x) = approx.dual(&lambda);
    for _ in 0..500 {
        // projected gradient norm
        let pg: f64 = (0..m)
            .map(|i| if lambda[i] <= 0.0 && grad[i] < 0.0 { 0.0 } else { grad[i].abs() })
            .fold(0.0, f64::max);
        if pg <= 1e-9 * (1.0 + lambda.iter().fold(0.0f64, |a, l| a.max(*l))) {
            break;
        }
        let free: Vec<usize> = (0..m).filter(|&i| lambda[i] > 0.0 || grad[i] > 0.0).collect();
        let h = approx.dual_hessian(&lambda, &x);
        let mut dir = vec![0.0; m];
        let k = free.len();
        let mut mat = nalgebra::DMatrix::<f64>::zeros(k, k);
        let mut rhs = nalgebra::DVector::<f64>::zeros(k);
        for (a, &i) in free.iter().enumerate() {
            rhs[a] = grad[i];
            for (b, &jj) in free.iter().enumerate() {
                mat[(a, b)] = -h[i][jj];
            }
            mat[(a, a)] += 1e-10 * (1.0 + mat[(a, a)].abs());
        }
        let newton = mat.clone().cholesky().map(|c| c.solve(&rhs));
        match newton {
            Some(d) if d.iter().all(|v| v.is_finite()) && d.dot(&rhs) > 0.0 => {
                for (a, &i) in free.iter().enumerate() {
                    dir[i] = d[a];
                }
            }
            _ => {
                for &i in &free {
                    dir[i] = grad[i];
                }
            }
        }
        // projected backtracking on the concave dual
        let mut t = 1.0;
        let mut accepted = false;
        for _ in 0..60 {
            let trial: Vec<f64> = (0..m).map(|i| (lambda[i] + t * dir[i]).max(0.0)).collect();
            let (wt, gt, xt) = approx.dual(&trial);
            let step: f64 = (0..m).map(|i| grad[i] * (trial[i] - lambda[i])).sum();
            if wt >= w + 1e-4 * step && wt.is_finite() {
                if trial == lambda {
                    break;
                }
                lambda = trial;
                w = wt;
                grad = gt;
                x = xt;
                accepted = true;
                break;
            }
            t *= 0.5;
        }
        if !accepted {
            break;
        }
    }
    if lambda.iter().any(|l| !l.is_finite()) {
        return Err(Error::Solver("MMA dual diverged".into()));
    }
    Ok((x, lambda))
}

/// Runs MMA from `x0`.
pub fn optimize<P: Problem + ?Sized>(problem: &mut P, x0: &[f64], settings: &MmaSettings) -> Result<Outcome> {
    let n = problem.num_vars();
    let m = problem.num_constraints();
    let lo = problem.lower();
    let hi = problem.upper();
    if x0.len() != n || lo.len() != n || hi.len() != n {
        return Err(Error::InvalidArgument("variable dimension mismatch".into()));
    }
    if (0..n).any(|j| !(lo[j] < hi[j])) {
        return Err(Error::InvalidArgument("empty variable box".into()));
    }
    let mut x: Vec<f64> = (0..n).map(|j| x0[j].clamp(lo[j], hi[j])).collect();
    let mut eval = problem.evaluate(&x)?;
    eval.check(n, m)?;
    let mut lambda = vec![0.0; m];
    let mut xold1 = x.clone();
    let mut xold2 = x.clone();
    let mut low = vec![0.0; n];
    let mut upp = vec![0.0; n];
    let mut kkt = kkt_residual(&x, &lo, &hi, &eval, &lambda);
    let mut termination = Termination::IterationLimit;
    let mut iterations = 0;
    let infeasibility = |e: &Evaluation| e.constraints.iter().fold(0.0f64, |a, &g| a.max(g));
    problem.record(
        &Step { iteration: 0, objective: eval.objective, kkt, infeasibility: infeasibility(&eval) },
        &eval,
    );
    for k in 1..=settings.max_iterations {
        if kkt <= settings.kkt_tol {
            termination = Termination::Converged;
            break;
        }
        // asymptotes
        for j in 0..n {
            let range = hi[j] - lo[j];
            if k <= 2 {
                low[j] = x[j] - ASYMPTOTE_INIT * range;
                upp[j] = x[j] + ASYMPTOTE_INIT * range;
            } else {
                let zz = (x[j] - xold1[j]) * (xold1[j] - xold2[j]);
                let gamma = if zz < 0.0 {
                    ASYMPTOTE_SHRINK
                } else if zz > 0.0 {
                    ASYMPTOTE_GROW
                } else {
                    1.0
                };
                low[j] = x[j] - gamma * (xold1[j] - low[j]);
                upp[j] = x[j] + gamma * (upp[j] - xold1[j]);
                low[j] = low[j].clamp(x[j] - 10.0 * range, x[j] - 0.01 * range);
                upp[j] = upp[j].clamp(x[j] + 0.01 * range, x[j] + 10.0 * range);
            }
        }
        let approx = build(&x, &lo, &hi, &low, &upp, &eval, settings.move_limit);
        let (xnew, lnew) = match solve_dual(&approx, m) {
            Ok(v) => v,
            Err(e) => {
                log::warn!("MMA subproblem failed at iteration {k}: {e}; keeping the previous iterate");
                termination = Termination::SubproblemFailure;
                break;
            }
        };
        let enew = problem.evaluate(&xnew)?;
        enew.check(n, m)?;
        xold2 = std::mem::replace(&mut xold1, std::mem::replace(&mut x, xnew));
        eval = enew;
        lambda = lnew;
        iterations = k;
        kkt = kkt_residual(&x, &lo, &hi, &eval, &lambda);
        problem.record(
            &Step { iteration: k, objective: eval.objective, kkt, infeasibility: infeasibility(&eval) },
            &eval,
        );
    }
    if termination == Termination::IterationLimit && kkt <= settings.kkt_tol {
        termination = Termination::Converged;
    }
    Ok(Outcome { x, evaluation: eval, multipliers: lambda, iterations, kkt, termination })
}

fn build(
    x: &[f64],
    lo: &[f64],
    hi: &[f64],
    low: &[f64],
    upp: &[f64],
    e: &Evaluation,
    move_limit: f64,
) -> Approximation {
    let n = x.len();
    let m = e.constraints.len();
    let mut alpha = vec![0.0; n];
    let mut beta = vec![0.0; n];
    let mut p0 = vec![0.0; n];
    let mut q0 = vec![0.0; n];
    let mut p = vec![vec![0.0; n]; m];
    let mut q = vec![vec![0.0; n]; m];
    let mut r: Vec<f64> = e.constraints.clone();
    for j in 0..n {
        let range = hi[j] - lo[j];
        alpha[j] = lo[j]
            .max(low[j] + ALBEFA * (x[j] - low[j]))
            .max(x[j] - move_limit * range);
        beta[j] = hi[j]
            .min(upp[j] - ALBEFA * (upp[j] - x[j]))
            .min(x[j] + move_limit * range);
        let ux2 = (upp[j] - x[j]).powi(2);
        let xl2 = (x[j] - low[j]).powi(2);
        let reg = RAA0 / range;
        let split = |d: f64| -> (f64, f64) {
            let (pos, neg) = (d.max(0.0), (-d).max(0.0));
            (ux2 * (1.001 * pos + 0.001 * neg + reg), xl2 * (0.001 * pos + 1.001 * neg + reg))
        };
        let (a, b) = split(e.gradient[j]);
        p0[j] = a;
        q0[j] = b;
        for i in 0..m {
            let (a, b) = split(e.jacobian[i][j]);
            p[i][j] = a;
            q[i][j] = b;
            r[i] -= a / (upp[j] - x[j]) + b / (x[j] - low[j]);
        }
    }
    Approximation { low: low.to_vec(), upp: upp.to_vec(), alpha, beta, p0, q0, p, q, r }
}
