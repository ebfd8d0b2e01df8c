//! Convex QP subproblem by a primal active-set method.
//!
//! Solves `min 1/2 d'Hd + g'd` subject to `A d <= b` and `lo <= d <= hi`.
//! The general rows are always relaxed elastically,
//! `A d - s <= b`, `s >= 0`, with penalty `rho * sum(s)`, which makes
//! `(d, s) = (0, max(0, -b))` a feasible start whenever `lo <= 0 <= hi`.

use nalgebra::{DMatrix, DVector};

use super::SqpError;

#[derive(Debug, Clone, PartialEq)]
pub struct QpSolution {
    pub d: Vec<f64>,
    /// Multipliers of the general rows (`>= 0`).
    pub mu: Vec<f64>,
    /// Multipliers of the lower and upper step bounds (`>= 0`).
    pub nu_lo: Vec<f64>,
    pub nu_hi: Vec<f64>,
    /// Elastic slacks; nonzero entries mean the linearization was
    /// infeasible.
    pub slack: Vec<f64>,
    pub elastic: bool,
    pub iterations: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QpOptions {
    pub rho: f64,
    pub slack_reg: f64,
    pub max_iter: usize,
    pub tol: f64,
}

impl Default for QpOptions {
    fn default() -> Self {
        Self {
            rho: 1e6,
            slack_reg: 1e-8,
            max_iter: 500,
            tol: 1e-12,
        }
    }
}

/// One inequality `row · z <= rhs` of the expanded problem in `z = (d, s)`.
struct Row {
    coef: Vec<(usize, f64)>,
    rhs: f64,
}

impl Row {
    fn dot(&self, z: &DVector<f64>) -> f64 {
        self.coef.iter().map(|&(j, a)| a * z[j]).sum()
    }
}

pub fn solve_qp(
    h: &DMatrix<f64>,
    g: &[f64],
    a: &[Vec<f64>],
    b: &[f64],
    lo: &[f64],
    hi: &[f64],
    opts: &QpOptions,
) -> Result<QpSolution, SqpError> {
    let n = g.len();
    let m = b.len();
    if h.nrows() != n
        || h.ncols() != n
        || a.len() != m
        || lo.len() != n
        || hi.len() != n
        || a.iter().any(|r| r.len() != n)
    {
        return Err(SqpError::Dimension("QP data sizes disagree".into()));
    }
    if (0..n).any(|j| !(lo[j] <= 0.0 && 0.0 <= hi[j])) {
        return Err(SqpError::Dimension("step bounds must contain zero".into()));
    }
    let nz = n + m;
    let mut q = DMatrix::<f64>::zeros(nz, nz);
    q.view_mut((0, 0), (n, n)).copy_from(h);
    for i in 0..m {
        q[(n + i, n + i)] = opts.slack_reg;
    }
    let mut c = DVector::<f64>::zeros(nz);
    for j in 0..n {
        c[j] = g[j];
    }
    for i in 0..m {
        c[n + i] = opts.rho;
    }

    // rows: general (m), slack >= 0 (m), lower (n), upper (n)
    let mut rows = Vec::with_capacity(2 * m + 2 * n);
    for i in 0..m {
        let mut coef: Vec<(usize, f64)> = (0..n).map(|j| (j, a[i][j])).collect();
        coef.push((n + i, -1.0));
        rows.push(Row { coef, rhs: b[i] });
    }
    for i in 0..m {
        rows.push(Row {
            coef: vec![(n + i, -1.0)],
            rhs: 0.0,
        });
    }
    for j in 0..n {
        rows.push(Row {
            coef: vec![(j, -1.0)],
            rhs: -lo[j],
        });
    }
    for j in 0..n {
        rows.push(Row {
            coef: vec![(j, 1.0)],
            rhs: hi[j],
        });
    }

    let mut z = DVector::<f64>::zeros(nz);
    for i in 0..m {
        z[n + i] = (-b[i]).max(0.0);
    }
    // start from the constraints active at z
    let scale = 1.0
        + b.iter().chain(lo).chain(hi).fold(
            0.0f64,
            |s, v| if v.is_finite() { s.max(v.abs()) } else { s },
        );
    let mut work: Vec<usize> = Vec::new();
    for (k, r) in rows.iter().enumerate() {
        if r.rhs.is_finite()
            && (r.dot(&z) - r.rhs).abs() <= 1e-14 * scale
            && independent(&rows, &work, k, nz)
        {
            work.push(k);
        }
    }

    for it in 0..opts.max_iter {
        let (p, lam) = eqp(&q, &c, &z, &rows, &work)?;
        let pnorm = p.amax();
        if pnorm <= opts.tol * (1.0 + z.amax()) {
            // most negative multiplier leaves the working set
            let (worst, wval) = lam
                .iter()
                .enumerate()
                .fold(
                    (usize::MAX, 0.0),
                    |acc, (i, &l)| if l < acc.1 { (i, l) } else { acc },
                );
            if worst == usize::MAX || wval >= -opts.tol * (1.0 + c.amax()) {
                return Ok(finish(&z, &rows, &work, &lam, n, m, it + 1));
            }
            work.remove(worst);
            continue;
        }
        let mut alpha = 1.0;
        let mut block = None;
        for (k, r) in rows.iter().enumerate() {
            if work.contains(&k) || !r.rhs.is_finite() {
                continue;
            }
            let rp = r.dot(&p);
            if rp > 0.0 {
                let t = ((r.rhs - r.dot(&z)) / rp).max(0.0);
                if t < alpha {
                    alpha = t;
                    block = Some(k);
                }
            }
        }
        z += alpha * &p;
        if let Some(k) = block {
            work.push(k);
        }
    }
    Err(SqpError::QpIterations)
}

fn independent(rows: &[Row], work: &[usize], k: usize, nz: usize) -> bool {
    let mut mat = DMatrix::<f64>::zeros(work.len() + 1, nz);
    for (r, &w) in work.iter().chain(std::iter::once(&k)).enumerate() {
        for &(j, a) in &rows[w].coef {
            mat[(r, j)] += a;
        }
    }
    mat.rank(1e-10) == work.len() + 1
}

/// Equality-constrained step from `z` on the working set. Working
/// simple bounds fix their variable; the remaining rows are handled by the
/// null-space method on the free variables. Bound multipliers follow last,
/// so the large elastic penalty never mixes into the other multipliers.
fn eqp(
    q: &DMatrix<f64>,
    c: &DVector<f64>,
    z: &DVector<f64>,
    rows: &[Row],
    work: &[usize],
) -> Result<(DVector<f64>, Vec<f64>), SqpError> {
    let nz = q.nrows();
    let grad = q * z + c;
    let mut fixed = vec![None; nz];
    let mut general = Vec::new();
    for (r, &k) in work.iter().enumerate() {
        match rows[k].coef.as_slice() {
            [(j, a)] if fixed[*j].is_none() => fixed[*j] = Some((r, *a)),
            _ => general.push(r),
        }
    }
    let free: Vec<usize> = (0..nz).filter(|&j| fixed[j].is_none()).collect();
    let nf = free.len();
    let w = general.len();
    let qf = DMatrix::from_fn(nf, nf, |a, b| q[(free[a], free[b])]);
    let gf = DVector::from_fn(nf, |a, _| grad[free[a]]);
    let mut gw = DMatrix::<f64>::zeros(w, nf);
    let mut pos = vec![usize::MAX; nz];
    for (a, &j) in free.iter().enumerate() {
        pos[j] = a;
    }
    for (r, &wr) in general.iter().enumerate() {
        for &(j, a) in &rows[work[wr]].coef {
            if pos[j] != usize::MAX {
                gw[(r, pos[j])] += a;
            }
        }
    }

    let pf = if w == 0 {
        if nf == 0 {
            DVector::zeros(0)
        } else {
            qf.clone()
                .cholesky()
                .ok_or(SqpError::SingularKkt)?
                .solve(&(-&gf))
        }
    } else {
        let svd = gw.transpose().svd(true, false);
        let u = svd.u.ok_or(SqpError::SingularKkt)?;
        let rank = svd.singular_values.iter().filter(|&&s| s > 1e-12).count();
        if rank < w {
            return Err(SqpError::SingularKkt);
        }
        if nf > rank {
            let zb = complete_basis(&u, nf).columns(rank, nf - rank).into_owned();
            let reduced = zb.transpose() * &qf * &zb;
            let y = reduced
                .cholesky()
                .ok_or(SqpError::SingularKkt)?
                .solve(&(-(zb.transpose() * &gf)));
            &zb * y
        } else {
            DVector::zeros(nf)
        }
    };
    let mut p = DVector::<f64>::zeros(nz);
    for (a, &j) in free.iter().enumerate() {
        p[j] = pf[a];
    }
    // stationarity residual grad + Q p
    let mut res = &grad + q * &p;
    let mut lam = vec![0.0; work.len()];
    if w > 0 {
        let rf = DVector::from_fn(nf, |a, _| -res[free[a]]);
        let lg = gw
            .transpose()
            .svd(true, true)
            .solve(&rf, 1e-14)
            .map_err(|_| SqpError::SingularKkt)?;
        for (r, &wr) in general.iter().enumerate() {
            lam[wr] = lg[r];
            for &(j, a) in &rows[work[wr]].coef {
                res[j] += a * lg[r];
            }
        }
    }
    for j in 0..nz {
        if let Some((r, a)) = fixed[j] {
            lam[r] = -res[j] / a;
        }
    }
    Ok((p, lam))
}

/// Orthonormal basis of R^n whose leading columns span those of `u`.
fn complete_basis(u: &DMatrix<f64>, n: usize) -> DMatrix<f64> {
    if u.ncols() == n {
        return u.clone();
    }
    let mut m = DMatrix::<f64>::zeros(n, n);
    m.view_mut((0, 0), (n, u.ncols())).copy_from(u);
    let qr = m.qr();
    let mut qf = qr.q();
    // keep the original leading columns exactly
    qf.view_mut((0, 0), (n, u.ncols())).copy_from(u);
    qf
}

fn finish(
    z: &DVector<f64>,
    rows: &[Row],
    work: &[usize],
    lam: &[f64],
    n: usize,
    m: usize,
    iterations: usize,
) -> QpSolution {
    let mut mu = vec![0.0; m];
    let mut nu_lo = vec![0.0; n];
    let mut nu_hi = vec![0.0; n];
    for (&k, &l) in work.iter().zip(lam) {
        if k < m {
            mu[k] = l;
        } else if k >= 2 * m && k < 2 * m + n {
            nu_lo[k - 2 * m] = l;
        } else if k >= 2 * m + n {
            nu_hi[k - 2 * m - n] = l;
        }
    }
    let _ = rows;
    let slack: Vec<f64> = (0..m).map(|i| z[n + i].max(0.0)).collect();
    let elastic = slack.iter().any(|&s| s > 1e-9);
    QpSolution {
        d: (0..n).map(|j| z[j]).collect(),
        mu,
        nu_lo,
        nu_hi,
        slack,
        elastic,
        iterations,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn free(n: usize) -> (Vec<f64>, Vec<f64>) {
        (vec![f64::NEG_INFINITY; n], vec![f64::INFINITY; n])
    }

    #[test]
    fn unconstrained_newton_step() {
        let h = DMatrix::identity(3, 3);
        let g = [1.0, -2.0, 0.5];
        let (lo, hi) = free(3);
        let s = solve_qp(&h, &g, &[], &[], &lo, &hi, &QpOptions::default()).unwrap();
        for (d, gi) in s.d.iter().zip(g) {
            assert!((d + gi).abs() < 1e-12);
        }
    }

    #[test]
    fn single_active_constraint() {
        let h = DMatrix::identity(2, 2);
        let (lo, hi) = free(2);
        let s = solve_qp(
            &h,
            &[-2.0, 0.0],
            &[vec![1.0, 0.0]],
            &[1.0],
            &lo,
            &hi,
            &QpOptions::default(),
        )
        .unwrap();
        assert!((s.d[0] - 1.0).abs() < 1e-10 && s.d[1].abs() < 1e-10);
        assert!((s.mu[0] - 1.0).abs() < 1e-10);
        assert!(!s.elastic);
    }

    #[test]
    fn origin_already_optimal() {
        let h = DMatrix::identity(2, 2);
        let (lo, hi) = free(2);
        let s = solve_qp(
            &h,
            &[-1.0, -1.0],
            &[vec![1.0, 0.0], vec![0.0, 1.0]],
            &[0.0, 0.0],
            &lo,
            &hi,
            &QpOptions::default(),
        )
        .unwrap();
        assert!(s.d.iter().all(|d| d.abs() < 1e-12));
        assert!((s.mu[0] - 1.0).abs() < 1e-10 && (s.mu[1] - 1.0).abs() < 1e-10);
    }

    #[test]
    fn bounds_are_respected() {
        let h = DMatrix::identity(2, 2);
        let s = solve_qp(
            &h,
            &[-5.0, 3.0],
            &[],
            &[],
            &[-1.0, -0.5],
            &[2.0, 1.0],
            &QpOptions::default(),
        )
        .unwrap();
        assert!((s.d[0] - 2.0).abs() < 1e-12 && (s.d[1] + 0.5).abs() < 1e-12);
        assert!((s.nu_hi[0] - 3.0).abs() < 1e-10 && (s.nu_lo[1] - 2.5).abs() < 1e-10);
    }

    #[test]
    fn infeasible_constraints_are_relaxed() {
        // d <= -1 and -d <= -1 cannot both hold
        let h = DMatrix::identity(1, 1);
        let (lo, hi) = free(1);
        let s = solve_qp(
            &h,
            &[0.0],
            &[vec![1.0], vec![-1.0]],
            &[-1.0, -1.0],
            &lo,
            &hi,
            &QpOptions::default(),
        )
        .unwrap();
        assert!(s.elastic);
        assert!(s.d[0].abs() < 1e-6);
    }

    #[test]
    fn kkt_conditions_hold_on_random_problems() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        for _ in 0..50 {
            let n = 3;
            let m = 4;
            let b0 = DMatrix::<f64>::from_fn(n, n, |_, _| rng.gen_range(-1.0..1.0));
            let h = &b0 * b0.transpose() + DMatrix::identity(n, n);
            let g: Vec<f64> = (0..n).map(|_| rng.gen_range(-3.0..3.0)).collect();
            let a: Vec<Vec<f64>> = (0..m)
                .map(|_| (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect())
                .collect();
            let b: Vec<f64> = (0..m).map(|_| rng.gen_range(0.0..1.0)).collect();
            let (lo, hi) = free(n);
            let s = solve_qp(&h, &g, &a, &b, &lo, &hi, &QpOptions::default()).unwrap();
            assert!(!s.elastic);
            let d = DVector::from_vec(s.d.clone());
            let mut r = &h * &d + DVector::from_vec(g.clone());
            for i in 0..m {
                let ad: f64 = (0..n).map(|j| a[i][j] * s.d[j]).sum();
                assert!(ad <= b[i] + 1e-10);
                assert!(s.mu[i] >= -1e-12);
                assert!((s.mu[i] * (ad - b[i])).abs() < 1e-10);
                for j in 0..n {
                    r[j] += s.mu[i] * a[i][j];
                }
            }
            assert!(r.amax() < 1e-10);
        }
    }
}
