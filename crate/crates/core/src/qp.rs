//! Dense strictly convex QP solver.
//!
//! Solves `min ½uᵀHu + fᵀu  s.t.  Au ≤ b,  Cu = d` with the dual active-set
//! method of Goldfarb and Idnani. The method starts from the unconstrained
//! minimizer and adds violated constraints one at a time while keeping dual
//! feasibility, so no feasible starting point is needed and infeasibility is
//! detected rather than iterated on.
//!
//! Factorization state is `J = L⁻ᵀ Q` and an upper-triangular `R` for the
//! active normals, both updated with Givens rotations.

#![allow(clippy::needless_range_loop)]

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct QpProblem {
    pub h: DMatrix<f64>,
    pub f: DVector<f64>,
    pub a: DMatrix<f64>,
    pub b: DVector<f64>,
    pub c: DMatrix<f64>,
    pub d: DVector<f64>,
}

impl QpProblem {
    /// Unconstrained problem; add rows with [`Self::with_inequalities`] and
    /// [`Self::with_equalities`].
    pub fn new(h: DMatrix<f64>, f: DVector<f64>) -> Self {
        let n = f.len();
        Self {
            h,
            f,
            a: DMatrix::zeros(0, n),
            b: DVector::zeros(0),
            c: DMatrix::zeros(0, n),
            d: DVector::zeros(0),
        }
    }

    pub fn with_inequalities(mut self, a: DMatrix<f64>, b: DVector<f64>) -> Self {
        self.a = a;
        self.b = b;
        self
    }

    pub fn with_equalities(mut self, c: DMatrix<f64>, d: DVector<f64>) -> Self {
        self.c = c;
        self.d = d;
        self
    }

    pub fn dim(&self) -> usize {
        self.f.len()
    }

    /// The problem over the variables in `keep` with every other variable
    /// pinned at zero. Rows left without coefficients are dropped.
    pub fn restrict(&self, keep: &[usize]) -> Self {
        let pick = |m: &DMatrix<f64>, rhs: &DVector<f64>| {
            let rows: Vec<usize> = (0..m.nrows())
                .filter(|&i| keep.iter().any(|&j| m[(i, j)] != 0.0))
                .collect();
            (
                DMatrix::from_fn(rows.len(), keep.len(), |i, j| m[(rows[i], keep[j])]),
                DVector::from_fn(rows.len(), |i, _| rhs[rows[i]]),
            )
        };
        let (a, b) = pick(&self.a, &self.b);
        let (c, d) = pick(&self.c, &self.d);
        Self {
            h: DMatrix::from_fn(keep.len(), keep.len(), |i, j| self.h[(keep[i], keep[j])]),
            f: DVector::from_fn(keep.len(), |i, _| self.f[keep[i]]),
            a,
            b,
            c,
            d,
        }
    }

    pub fn objective(&self, u: &DVector<f64>) -> f64 {
        0.5 * u.dot(&(&self.h * u)) + self.f.dot(u)
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.dim();
        let dims_ok = self.h.nrows() == n
            && self.h.ncols() == n
            && self.a.ncols() == n
            && self.a.nrows() == self.b.len()
            && self.c.ncols() == n
            && self.c.nrows() == self.d.len();
        if !dims_ok {
            return Err(Error::Dimension(format!(
                "H {}x{}, f {}, A {}x{}, b {}, C {}x{}, d {}",
                self.h.nrows(),
                self.h.ncols(),
                n,
                self.a.nrows(),
                self.a.ncols(),
                self.b.len(),
                self.c.nrows(),
                self.c.ncols(),
                self.d.len()
            )));
        }
        let finite = self.h.iter().all(|v| v.is_finite())
            && self.f.iter().all(|v| v.is_finite())
            && self.a.iter().all(|v| v.is_finite())
            && self.b.iter().all(|v| v.is_finite())
            && self.c.iter().all(|v| v.is_finite())
            && self.d.iter().all(|v| v.is_finite());
        if !finite {
            return Err(Error::NonFinite("qp::solve"));
        }
        let scale = self.h.amax().max(1.0);
        if (&self.h - self.h.transpose()).amax() > 1e-10 * scale {
            return Err(Error::NotStrictlyConvex("H is not symmetric".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum QpStatus {
    Optimal,
    Infeasible,
    MaxIterations,
}

#[derive(Clone, Debug, Default)]
pub struct QpOptions {
    /// Iteration cap; `None` uses `10 (n + m + p) + 100`.
    pub max_iterations: Option<usize>,
    /// Inequality rows that were active on a previous, similar problem. They
    /// are tried first when several rows are violated.
    pub warm_start: Option<Vec<usize>>,
}

#[derive(Clone, Debug)]
pub struct QpSolution {
    pub u: DVector<f64>,
    pub status: QpStatus,
    /// Largest of stationarity, primal infeasibility, complementarity and
    /// negative-multiplier violations.
    pub kkt_residual: f64,
    /// Indices of the active inequality rows.
    pub active_set: Vec<usize>,
    /// `μ ≥ 0` for `Au ≤ b`.
    pub ineq_multipliers: DVector<f64>,
    /// `λ` for `Cu = d`, with `Hu + f + Aᵀμ + Cᵀλ = 0`.
    pub eq_multipliers: DVector<f64>,
    pub iterations: usize,
}

impl QpSolution {
    pub fn is_optimal(&self) -> bool {
        self.status == QpStatus::Optimal
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Row {
    Eq(usize),
    Ineq(usize),
}

struct Factorization {
    n: usize,
    j: DMatrix<f64>,
    r: DMatrix<f64>,
    r_norm: f64,
    active: Vec<Row>,
    /// Multipliers of `active`, plus one trailing slot for the candidate row.
    u: Vec<f64>,
}

impl Factorization {
    fn iq(&self) -> usize {
        self.active.len()
    }

    fn compute_d(&self, np: &DVector<f64>) -> DVector<f64> {
        self.j.tr_mul(np)
    }

    fn compute_z(&self, d: &DVector<f64>) -> DVector<f64> {
        let iq = self.iq();
        let mut z = DVector::zeros(self.n);
        for k in iq..self.n {
            z.axpy(d[k], &self.j.column(k), 1.0);
        }
        z
    }

    fn compute_r(&self, d: &DVector<f64>) -> Vec<f64> {
        let iq = self.iq();
        let mut r = vec![0.0; iq];
        for i in (0..iq).rev() {
            let mut s = d[i];
            for k in i + 1..iq {
                s -= self.r[(i, k)] * r[k];
            }
            r[i] = s / self.r[(i, i)];
        }
        r
    }

    /// Appends `row` whose transformed normal is `d`. Returns `false` when the
    /// normal is numerically dependent on the active set.
    fn add(&mut self, row: Row, mut d: DVector<f64>) -> bool {
        let n = self.n;
        let iq = self.iq();
        if iq >= n {
            return false;
        }
        for j in (iq + 1..n).rev() {
            let mut cc = d[j - 1];
            let mut ss = d[j];
            let h = cc.hypot(ss);
            if h == 0.0 {
                continue;
            }
            d[j] = 0.0;
            ss /= h;
            cc /= h;
            if cc < 0.0 {
                cc = -cc;
                ss = -ss;
                d[j - 1] = -h;
            } else {
                d[j - 1] = h;
            }
            let xny = ss / (1.0 + cc);
            for k in 0..n {
                let t1 = self.j[(k, j - 1)];
                let t2 = self.j[(k, j)];
                self.j[(k, j - 1)] = t1 * cc + t2 * ss;
                self.j[(k, j)] = xny * (t1 + self.j[(k, j - 1)]) - t2;
            }
        }
        let pivot = d[iq];
        if pivot.abs() <= f64::EPSILON * self.r_norm {
            return false;
        }
        for i in 0..=iq {
            self.r[(i, iq)] = d[i];
        }
        self.active.push(row);
        self.r_norm = self.r_norm.max(pivot.abs());
        true
    }

    /// Removes the active row at position `qq`; the candidate multiplier
    /// slot shifts down with the rest.
    fn remove(&mut self, qq: usize) {
        let n = self.n;
        let iq = self.iq();
        for i in qq..iq - 1 {
            self.active[i] = self.active[i + 1];
            self.u[i] = self.u[i + 1];
            for k in 0..n {
                self.r[(k, i)] = self.r[(k, i + 1)];
            }
        }
        self.u[iq - 1] = self.u[iq];
        self.u[iq] = 0.0;
        self.active.pop();
        for k in 0..n {
            self.r[(k, iq - 1)] = 0.0;
        }
        let iq = iq - 1;
        if iq == 0 {
            return;
        }
        for j in qq..iq {
            let mut cc = self.r[(j, j)];
            let mut ss = self.r[(j + 1, j)];
            let h = cc.hypot(ss);
            if h == 0.0 {
                continue;
            }
            cc /= h;
            ss /= h;
            self.r[(j + 1, j)] = 0.0;
            if cc < 0.0 {
                self.r[(j, j)] = -h;
                cc = -cc;
                ss = -ss;
            } else {
                self.r[(j, j)] = h;
            }
            let xny = ss / (1.0 + cc);
            for k in j + 1..iq {
                let t1 = self.r[(j, k)];
                let t2 = self.r[(j + 1, k)];
                self.r[(j, k)] = t1 * cc + t2 * ss;
                self.r[(j + 1, k)] = xny * (t1 + self.r[(j, k)]) - t2;
            }
            for k in 0..n {
                let t1 = self.j[(k, j)];
                let t2 = self.j[(k, j + 1)];
                self.j[(k, j)] = t1 * cc + t2 * ss;
                self.j[(k, j + 1)] = xny * (self.j[(k, j)] + t1) - t2;
            }
        }
    }
}

/// Solves `p`. Malformed input (dimensions, non-finite entries, asymmetric or
/// non positive definite `H`) is an error; infeasibility is a status.
pub fn solve(p: &QpProblem, opts: &QpOptions) -> Result<QpSolution> {
    p.validate()?;
    let n = p.dim();
    let m = p.a.nrows();
    let pe = p.c.nrows();

    let chol =
        p.h.clone()
            .cholesky()
            .ok_or_else(|| Error::NotStrictlyConvex("Cholesky factorization failed".into()))?;
    let l = chol.l();
    let j = l
        .transpose()
        .solve_upper_triangular(&DMatrix::identity(n, n))
        .ok_or_else(|| Error::NotStrictlyConvex("singular Cholesky factor".into()))?;
    let j_scale = j.norm_squared();

    let mut x = -chol.solve(&p.f);
    let mut fac = Factorization {
        n,
        j,
        r: DMatrix::zeros(n, n),
        r_norm: 1.0,
        active: Vec::with_capacity(n),
        u: vec![0.0; n + 1],
    };

    let a_norms: Vec<f64> = (0..m).map(|i| p.a.row(i).norm()).collect();
    let feas_tol = |i: usize, x: &DVector<f64>| 1e-12 * (1.0 + p.b[i].abs() + a_norms[i] * x.amax());
    let finish = |x: DVector<f64>, fac: &Factorization, status: QpStatus, iterations: usize| {
        build_solution(p, x, fac, status, iterations)
    };

    // Equality rows.
    for i in 0..pe {
        let np: DVector<f64> = p.c.row(i).transpose();
        let d = fac.compute_d(&np);
        let z = fac.compute_z(&d);
        let r = fac.compute_r(&d);
        let resid = np.dot(&x) - p.d[i];
        if z.norm() <= 1e-12 * j_scale * np.norm() {
            // Dependent on earlier equalities: redundant if consistent.
            if resid.abs() <= 1e-9 * (1.0 + p.d[i].abs()) {
                continue;
            }
            return Ok(finish(x, &fac, QpStatus::Infeasible, 0));
        }
        let t2 = -resid / z.dot(&np);
        x.axpy(t2, &z, 1.0);
        let iq = fac.iq();
        fac.u[iq] = t2;
        for k in 0..iq {
            fac.u[k] -= t2 * r[k];
        }
        if !fac.add(Row::Eq(i), d) {
            return Ok(finish(x, &fac, QpStatus::Infeasible, 0));
        }
    }
    let n_eq_active = fac.iq();

    let max_iter = opts.max_iterations.unwrap_or(10 * (n + m + pe) + 100);
    let hint: Vec<usize> = opts
        .warm_start
        .as_ref()
        .map(|h| h.iter().copied().filter(|&i| i < m).collect())
        .unwrap_or_default();
    let mut excluded = vec![false; m];
    let mut iterations = 0;

    loop {
        iterations += 1;
        if iterations > max_iter {
            return Ok(finish(x, &fac, QpStatus::MaxIterations, iterations));
        }
        let mut is_active = vec![false; m];
        for row in &fac.active {
            if let Row::Ineq(i) = row {
                is_active[*i] = true;
            }
        }
        let slack = &p.b - &p.a * &x;
        let violated = |i: usize| !is_active[i] && !excluded[i] && slack[i] < -feas_tol(i, &x);
        let pick = |candidates: &mut dyn Iterator<Item = usize>| {
            candidates
                .filter(|&i| violated(i))
                .min_by(|&a, &b| slack[a].total_cmp(&slack[b]))
        };
        let chosen = pick(&mut hint.iter().copied()).or_else(|| pick(&mut (0..m)));
        let Some(ip) = chosen else {
            return Ok(finish(x, &fac, QpStatus::Optimal, iterations));
        };

        let np: DVector<f64> = -p.a.row(ip).transpose();
        let mut s_ip = slack[ip];
        let iq = fac.iq();
        fac.u[iq] = 0.0;

        loop {
            let d = fac.compute_d(&np);
            let z = fac.compute_z(&d);
            let r = fac.compute_r(&d);
            let iq = fac.iq();

            let mut t1 = f64::INFINITY;
            let mut drop_at = None;
            for k in n_eq_active..iq {
                if r[k] > 0.0 {
                    let ratio = fac.u[k] / r[k];
                    if ratio < t1 {
                        t1 = ratio;
                        drop_at = Some(k);
                    }
                }
            }
            let t2 = if z.norm() > 1e-12 * j_scale * np.norm() {
                -s_ip / z.dot(&np)
            } else {
                f64::INFINITY
            };
            let t = t1.min(t2);
            if !t.is_finite() {
                return Ok(finish(x, &fac, QpStatus::Infeasible, iterations));
            }
            if !t2.is_finite() {
                for k in 0..iq {
                    fac.u[k] -= t * r[k];
                }
                fac.u[iq] += t;
                fac.remove(drop_at.expect("finite t1 has a drop index"));
                continue;
            }
            x.axpy(t, &z, 1.0);
            for k in 0..iq {
                fac.u[k] -= t * r[k];
            }
            fac.u[iq] += t;
            if t2 <= t1 {
                if !fac.add(Row::Ineq(ip), d) {
                    // Numerically dependent on the active set; x now satisfies
                    // the row with equality, so leave it out.
                    excluded[ip] = true;
                }
                break;
            }
            fac.remove(drop_at.expect("partial step has a drop index"));
            s_ip = np.dot(&x) + p.b[ip];
            if iterations > max_iter {
                return Ok(finish(x, &fac, QpStatus::MaxIterations, iterations));
            }
            iterations += 1;
        }
    }
}

fn build_solution(
    p: &QpProblem,
    x: DVector<f64>,
    fac: &Factorization,
    status: QpStatus,
    iterations: usize,
) -> QpSolution {
    let m = p.a.nrows();
    let pe = p.c.nrows();
    let mut mu = DVector::zeros(m);
    let mut lambda = DVector::zeros(pe);
    let mut active_set = Vec::new();
    for (k, row) in fac.active.iter().enumerate() {
        match *row {
            Row::Ineq(i) => {
                mu[i] = fac.u[k];
                active_set.push(i);
            }
            Row::Eq(i) => lambda[i] = -fac.u[k],
        }
    }
    active_set.sort_unstable();
    let kkt_residual = kkt_residual(p, &x, &mu, &lambda);
    QpSolution {
        u: x,
        status,
        kkt_residual,
        active_set,
        ineq_multipliers: mu,
        eq_multipliers: lambda,
        iterations,
    }
}

/// KKT residual of a primal/dual pair for `p`.
pub fn kkt_residual(p: &QpProblem, u: &DVector<f64>, mu: &DVector<f64>, lambda: &DVector<f64>) -> f64 {
    let grad = &p.h * u + &p.f + p.a.tr_mul(mu) + p.c.tr_mul(lambda);
    let mut res = grad.amax();
    let ineq = &p.a * u - &p.b;
    for i in 0..ineq.len() {
        res = res.max(ineq[i].max(0.0));
        res = res.max((mu[i] * ineq[i]).abs());
        res = res.max((-mu[i]).max(0.0));
    }
    if p.c.nrows() > 0 {
        res = res.max((&p.c * u - &p.d).amax());
    }
    res
}
