//! Random strictly convex QPs and a dual projected-gradient reference solver.

use fovctl::qp::QpProblem;
use nalgebra::{DMatrix, DVector};
use rand::Rng;

/// Strictly convex QP with `n` variables, `m` inequalities and `p`
/// equalities, feasible by construction around a random point.
pub fn random_qp(rng: &mut impl Rng, n: usize, m: usize, p: usize) -> QpProblem {
    let g = |rng: &mut dyn rand::RngCore| rng.random_range(-1.0..1.0);
    let mf = DMatrix::from_fn(n, n, |_, _| g(rng));
    let h = mf.tr_mul(&mf) + DMatrix::identity(n, n) * rng.random_range(0.1..1.0);
    let f = DVector::from_fn(n, |_, _| 3.0 * g(rng));
    let u0 = DVector::from_fn(n, |_, _| g(rng));
    let a = DMatrix::from_fn(m, n, |_, _| g(rng));
    let slack = DVector::from_fn(m, |_, _| rng.random_range(0.0..0.5));
    let b = &a * &u0 + slack;
    let c = DMatrix::from_fn(p, n, |_, _| g(rng));
    let d = &c * &u0;
    QpProblem::new(h, f).with_inequalities(a, b).with_equalities(c, d)
}

/// Reference solution by accelerated projected gradient on the dual
/// `max_{μ ≥ 0, λ} −½ wᵀH⁻¹w − bᵀμ − dᵀλ` with `w = f + Aᵀμ + Cᵀλ`,
/// with gradient-based momentum restarts. Returns the primal point
/// `u = −H⁻¹ w` and the multipliers.
pub fn dual_projected_gradient(p: &QpProblem, iterations: usize) -> (DVector<f64>, DVector<f64>, DVector<f64>) {
    let (m, q) = (p.a.nrows(), p.c.nrows());
    let hinv = p.h.clone().cholesky().expect("strictly convex").inverse();
    if m + q == 0 {
        return (-&hinv * &p.f, DVector::zeros(0), DVector::zeros(0));
    }
    let g = DMatrix::from_fn(m + q, p.dim(), |i, j| if i < m { p.a[(i, j)] } else { p.c[(i - m, j)] });
    let rhs = DVector::from_fn(m + q, |i, _| if i < m { p.b[i] } else { p.d[i - m] });
    let q_mat = &g * &hinv * g.transpose();
    let step = 1.0 / q_mat.symmetric_eigenvalues().amax().max(1e-12);
    let lin = &g * &hinv * &p.f + &rhs;
    // Dual as a minimization: ½ yᵀQy + linᵀy over y = (μ ≥ 0, λ free).
    let project = |mut y: DVector<f64>| {
        for i in 0..m {
            y[i] = y[i].max(0.0);
        }
        y
    };
    let mut y = DVector::zeros(m + q);
    let mut z = y.clone();
    let mut t = 1.0f64;
    for _ in 0..iterations {
        let next = project(&z - (&q_mat * &z + &lin) * step);
        if (&z - &next).dot(&(&next - &y)) > 0.0 {
            // Momentum points uphill: restart from the new point.
            z = next.clone();
            t = 1.0;
        } else {
            let t_next = 0.5 * (1.0 + (1.0 + 4.0 * t * t).sqrt());
            z = &next + (&next - &y) * ((t - 1.0) / t_next);
            t = t_next;
        }
        y = next;
        // Stationarity of the dual: the unit-step projected gradient vanishes.
        if (&y - project(&y - (&q_mat * &y + &lin))).amax() < 1e-13 {
            break;
        }
    }
    let u = -&hinv * (&p.f + g.tr_mul(&y));
    (u, y.rows(0, m).into_owned(), y.rows(m, q).into_owned())
}
