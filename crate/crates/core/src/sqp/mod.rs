//! Sequential quadratic programming for smooth inequality-constrained
//! problems `min f(x)` s.t. `c(x) <= 0`, `lo <= x <= hi`.
//!
//! Damped BFGS Hessian, elastic active-set QP subproblems and an
//! ℓ1-merit backtracking line search.

mod qp;

use std::io::Write;

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

use crate::cycle::fmt_num;

pub use qp::{solve_qp, QpOptions, QpSolution};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SqpError {
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("singular KKT matrix in QP subproblem")]
    SingularKkt,
    #[error("QP subproblem exceeded its iteration limit")]
    QpIterations,
    #[error("evaluation failed at coordinate {coord}: {msg}")]
    Evaluation { coord: usize, msg: String },
    #[error("invalid starting point: {0}")]
    InitialPoint(String),
}

/// Function values of a nonlinear program at one point.
pub type Values = (f64, Vec<f64>);
/// Objective gradient and constraint Jacobian (one row per constraint).
pub type Gradients = (Vec<f64>, Vec<Vec<f64>>);

/// A smooth nonlinear program. Evaluators may fail on part of the box;
/// failures at trial points shorten the step.
pub trait NlpProblem {
    fn dim(&self) -> usize;
    fn n_constraints(&self) -> usize;
    fn bounds(&self) -> (Vec<f64>, Vec<f64>);
    fn values(&self, x: &[f64]) -> Result<Values, String>;
    fn gradients(&self, x: &[f64]) -> Result<Gradients, String>;
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SqpOptions {
    pub tol: f64,
    pub feas_tol: f64,
    pub max_iter: usize,
    pub armijo: f64,
    pub backtrack: f64,
    pub max_backtracks: usize,
    pub qp: QpOptions,
}

impl Default for SqpOptions {
    fn default() -> Self {
        Self {
            tol: 1e-8,
            feas_tol: 1e-8,
            max_iter: 200,
            armijo: 1e-4,
            backtrack: 0.5,
            max_backtracks: 40,
            qp: QpOptions::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SqpStatus {
    Converged,
    MaxIter,
    Infeasible,
    LineSearchFailure,
}

impl SqpStatus {
    pub fn name(self) -> &'static str {
        match self {
            SqpStatus::Converged => "converged",
            SqpStatus::MaxIter => "max-iter",
            SqpStatus::Infeasible => "infeasible",
            SqpStatus::LineSearchFailure => "line-search-failure",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TraceRow {
    pub iter: usize,
    pub f: f64,
    pub kkt: f64,
    pub maxviol: f64,
    pub step_norm: f64,
}

/// Bookkeeping of one accepted step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepInfo {
    pub alpha: f64,
    pub penalty: f64,
    pub merit_before: f64,
    pub merit_after: f64,
    /// Smallest eigenvalue of the Hessian approximation after the update.
    pub min_eig: f64,
    pub damped: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SqpResult {
    pub x: Vec<f64>,
    pub f: f64,
    pub c: Vec<f64>,
    pub mu: Vec<f64>,
    pub kkt: f64,
    pub iterations: usize,
    pub status: SqpStatus,
    pub trace: Vec<TraceRow>,
    pub steps: Vec<StepInfo>,
}

impl SqpResult {
    pub fn max_violation(&self) -> f64 {
        max_violation(&self.c)
    }

    pub fn write_trace_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "iter,f,kkt,maxviol,step_norm")?;
        for r in &self.trace {
            writeln!(
                out,
                "{},{},{},{},{}",
                r.iter,
                fmt_num(r.f),
                fmt_num(r.kkt),
                fmt_num(r.maxviol),
                fmt_num(r.step_norm)
            )?;
        }
        Ok(())
    }
}

fn max_violation(c: &[f64]) -> f64 {
    c.iter().fold(0.0f64, |m, &v| m.max(v))
}

fn l1_violation(c: &[f64]) -> f64 {
    c.iter().map(|v| v.max(0.0)).sum()
}

/// Central finite differences, one coordinate at a time.
pub fn finite_diff_grad<F>(f: F, x: &[f64], h: f64) -> Result<Vec<f64>, SqpError>
where
    F: Fn(&[f64]) -> Result<f64, String>,
{
    let mut xp = x.to_vec();
    let mut g = Vec::with_capacity(x.len());
    for j in 0..x.len() {
        xp[j] = x[j] + h;
        let fp = f(&xp).map_err(|msg| SqpError::Evaluation { coord: j, msg })?;
        xp[j] = x[j] - h;
        let fm = f(&xp).map_err(|msg| SqpError::Evaluation { coord: j, msg })?;
        xp[j] = x[j];
        if !(fp.is_finite() && fm.is_finite()) {
            return Err(SqpError::Evaluation {
                coord: j,
                msg: "non-finite value".into(),
            });
        }
        g.push((fp - fm) / (2.0 * h));
    }
    Ok(g)
}

/// First-order optimality residual with bound-projected stationarity.
fn kkt_residual(
    x: &[f64],
    lo: &[f64],
    hi: &[f64],
    g: &[f64],
    jac: &[Vec<f64>],
    c: &[f64],
    mu: &[f64],
) -> f64 {
    let n = x.len();
    let mut stat = 0.0f64;
    for j in 0..n {
        let mut r = g[j];
        for (row, m) in jac.iter().zip(mu) {
            r += m * row[j];
        }
        let scale = 1e-12 * (1.0 + x[j].abs());
        if (x[j] - lo[j]).abs() <= scale && r > 0.0 {
            r = 0.0;
        }
        if (hi[j] - x[j]).abs() <= scale && r < 0.0 {
            r = 0.0;
        }
        stat = stat.max(r.abs());
    }
    let comp = c
        .iter()
        .zip(mu)
        .fold(0.0f64, |m, (ci, mi)| m.max((ci * mi).abs()));
    stat.max(comp).max(max_violation(c))
}

fn lagrangian_gradient(g: &[f64], jac: &[Vec<f64>], mu: &[f64]) -> DVector<f64> {
    let mut r = DVector::from_column_slice(g);
    for (row, m) in jac.iter().zip(mu) {
        for j in 0..r.len() {
            r[j] += m * row[j];
        }
    }
    r
}

pub fn sqp_solve<P: NlpProblem + ?Sized>(
    problem: &P,
    x0: &[f64],
    opts: &SqpOptions,
) -> Result<SqpResult, SqpError> {
    let n = problem.dim();
    let nc = problem.n_constraints();
    let (lo, hi) = problem.bounds();
    if x0.len() != n || lo.len() != n || hi.len() != n {
        return Err(SqpError::Dimension(format!("expected {n} variables")));
    }
    if (0..n).any(|j| !(lo[j] <= x0[j] && x0[j] <= hi[j])) {
        return Err(SqpError::InitialPoint("x0 outside the bounds".into()));
    }
    let mut x = x0.to_vec();
    let (mut f, mut c) = problem.values(&x).map_err(SqpError::InitialPoint)?;
    let (mut g, mut jac) = problem.gradients(&x).map_err(SqpError::InitialPoint)?;
    if c.len() != nc || g.len() != n || jac.len() != nc || jac.iter().any(|r| r.len() != n) {
        return Err(SqpError::Dimension("evaluator output sizes".into()));
    }

    let mut h = DMatrix::<f64>::identity(n, n);
    let mut scaled = false;
    let mut penalty = 0.0f64;
    let mut mu = vec![0.0; nc];
    let mut trace = Vec::new();
    let mut steps = Vec::new();
    let mut status = SqpStatus::MaxIter;
    let mut kkt = f64::INFINITY;

    for iter in 0..opts.max_iter {
        let b: Vec<f64> = c.iter().map(|v| -v).collect();
        let dlo: Vec<f64> = (0..n).map(|j| lo[j] - x[j]).collect();
        let dhi: Vec<f64> = (0..n).map(|j| hi[j] - x[j]).collect();
        let qp = solve_qp(&h, &g, &jac, &b, &dlo, &dhi, &opts.qp)?;
        mu.clone_from(&qp.mu);
        let d = DVector::from_vec(qp.d.clone());
        let step_norm = d.norm();
        kkt = kkt_residual(&x, &lo, &hi, &g, &jac, &c, &mu);
        let viol = max_violation(&c);
        trace.push(TraceRow {
            iter,
            f,
            kkt,
            maxviol: viol,
            step_norm,
        });
        if kkt <= opts.tol && viol <= opts.feas_tol {
            status = SqpStatus::Converged;
            break;
        }
        if step_norm <= 1e-14 * (1.0 + x.iter().fold(0.0f64, |m, v| m.max(v.abs()))) {
            status = if viol > opts.feas_tol {
                SqpStatus::Infeasible
            } else {
                SqpStatus::LineSearchFailure
            };
            break;
        }

        let mu_max = mu.iter().fold(0.0f64, |m, v| m.max(*v));
        if penalty < 1.1 * mu_max + 1e-8 {
            penalty = 2.0 * mu_max + 1e-6;
        }
        let merit = |f: f64, c: &[f64]| f + penalty * l1_violation(c);
        let phi0 = merit(f, &c);
        let lin: Vec<f64> = (0..nc)
            .map(|i| {
                c[i] + jac[i]
                    .iter()
                    .zip(qp.d.iter())
                    .map(|(a, b)| a * b)
                    .sum::<f64>()
            })
            .collect();
        let gd: f64 = g.iter().zip(qp.d.iter()).map(|(a, b)| a * b).sum();
        let mut dphi = gd + penalty * (l1_violation(&lin) - l1_violation(&c));
        if dphi >= 0.0 {
            dphi = -1e-16 * step_norm * step_norm;
        }
        // largest step keeping the box
        let mut alpha_box = 4.0f64;
        for j in 0..n {
            if qp.d[j] > 0.0 {
                alpha_box = alpha_box.min((hi[j] - x[j]) / qp.d[j]);
            } else if qp.d[j] < 0.0 {
                alpha_box = alpha_box.min((lo[j] - x[j]) / qp.d[j]);
            }
        }
        let trial = |alpha: f64| -> Option<(Vec<f64>, f64, Vec<f64>, f64)> {
            let xt: Vec<f64> = (0..n)
                .map(|j| (x[j] + alpha * qp.d[j]).clamp(lo[j], hi[j]))
                .collect();
            let (ft, ct) = problem.values(&xt).ok()?;
            if !ft.is_finite() || ct.iter().any(|v| !v.is_finite()) {
                return None;
            }
            let phi = merit(ft, &ct);
            Some((xt, ft, ct, phi))
        };
        let armijo_ok = |alpha: f64, phi: f64| phi <= phi0 + opts.armijo * alpha * dphi;

        let mut accepted = None;
        let mut alpha = 1.0f64.min(alpha_box);
        for _ in 0..opts.max_backtracks {
            if let Some((xt, ft, ct, phi)) = trial(alpha) {
                if armijo_ok(alpha, phi) {
                    let mut best = (alpha, xt, ft, ct, phi);
                    // parabolic refinement along the step
                    let curv = phi - phi0 - alpha * dphi;
                    if curv > 0.0 {
                        let ap = (-dphi * alpha * alpha / (2.0 * curv)).min(alpha_box);
                        if ap > 0.0 && (ap - alpha).abs() > 1e-12 * alpha {
                            if let Some((xp, fp, cp, pp)) = trial(ap) {
                                if pp < best.4 && armijo_ok(ap, pp) {
                                    best = (ap, xp, fp, cp, pp);
                                }
                            }
                        }
                    }
                    accepted = Some(best);
                    break;
                }
            }
            alpha *= opts.backtrack;
        }
        let Some((alpha, xn, fn_, cn, phin)) = accepted else {
            status = SqpStatus::LineSearchFailure;
            break;
        };
        let Ok((gn, jn)) = problem.gradients(&xn) else {
            status = SqpStatus::LineSearchFailure;
            break;
        };

        let s = DVector::from_iterator(n, (0..n).map(|j| xn[j] - x[j]));
        let y = lagrangian_gradient(&gn, &jn, &mu) - lagrangian_gradient(&g, &jac, &mu);
        let sy = s.dot(&y);
        if !scaled && sy > 0.0 {
            h = DMatrix::identity(n, n) * (y.dot(&y) / sy);
            scaled = true;
        }
        let hs = &h * &s;
        let shs = s.dot(&hs);
        let mut damped = false;
        if shs > 0.0 {
            let r = if sy >= 0.2 * shs {
                y
            } else {
                damped = true;
                let theta = 0.8 * shs / (shs - sy);
                theta * y + (1.0 - theta) * &hs
            };
            let sr = s.dot(&r);
            h = &h - &hs * hs.transpose() / shs + &r * r.transpose() / sr;
            h = 0.5 * (&h + h.transpose());
        }
        let min_eig = h.clone().symmetric_eigen().eigenvalues.min();
        steps.push(StepInfo {
            alpha,
            penalty,
            merit_before: phi0,
            merit_after: phin,
            min_eig,
            damped,
        });

        x = xn;
        f = fn_;
        c = cn;
        g = gn;
        jac = jn;
    }

    Ok(SqpResult {
        iterations: trace.len(),
        x,
        f,
        c,
        mu,
        kkt,
        status,
        trace,
        steps,
    })
}
