//! Acceptance suite: one PASS/FAIL line per criterion, nonzero exit on any failure.

mod common;

use std::time::{Duration, Instant};

use common::adapt::{collect, null_space_slope, roll_rate, tip_displacement};
use common::qp::{dual_projected_gradient, random_qp};
use common::suites;
use fovctl::kinematics::SYSTEM_PARAMS;
use fovctl::qp::{solve, QpOptions, QpStatus};
use fovctl::scenario::{run_calibration, run_scenario, write_trace, CalibrationConfig, ScenarioConfig};
use nalgebra::DVector;
use rand::Rng;

const ALGEBRA_CASES: usize = 10_000;
const ALGEBRA_TOL: f64 = 1e-10;
const ALGEBRA_BUDGET: Duration = Duration::from_secs(5);

const JACOBIAN_STATES: usize = 100;
const JACOBIAN_TOL: f64 = 1e-5;
const JACOBIAN_BUDGET: Duration = Duration::from_secs(30);

const PROJECTOR_TOL: f64 = 1e-8;
const ROLL_TOL: f64 = 1e-8;
const DISPLACEMENT_FACTOR: f64 = 10.0;
const SLOPE: f64 = 2.0;
const SLOPE_TOL: f64 = 0.2;

const LYAPUNOV_TOL: f64 = 1e-9;

const QP_CASES: usize = 200;
const QP_KKT_TOL: f64 = 1e-6;
const QP_OBJECTIVE_TOL: f64 = 1e-6;

const CALIBRATION_TICKS: usize = 2000;
const CALIBRATION_RESIDUAL: f64 = 1e-3;

const HEADLINE_SEED: u64 = 1;
const ADAPTIVE_DUTY_MIN: f64 = 0.9;
const DUTY_GAP_MIN: f64 = 0.2;
const MARGIN_TOL: f64 = -1e-6;
const HEADLINE_BUDGET: Duration = Duration::from_secs(60);

type Criterion<'a> = (&'static str, Box<dyn Fn() -> Outcome + 'a>);

struct Outcome {
    passed: bool,
    detail: String,
}

fn report(index: usize, name: &str, o: &Outcome) {
    let tag = if o.passed { "PASS" } else { "FAIL" };
    println!("{tag} [{index}] {name}: {}", o.detail);
}

fn algebra() -> Outcome {
    let start = Instant::now();
    let worst = suites::algebra(1, ALGEBRA_CASES);
    let t = start.elapsed();
    Outcome {
        passed: worst < ALGEBRA_TOL && t < ALGEBRA_BUDGET,
        detail: format!(
            "{ALGEBRA_CASES} cases, worst {worst:.2e} (tol {ALGEBRA_TOL:e}), {t:.2?} (budget {ALGEBRA_BUDGET:?})"
        ),
    }
}

fn jacobians() -> Outcome {
    let start = Instant::now();
    let parts = [
        ("J_q/J_a", suites::kinematics(2, JACOBIAN_STATES)),
        ("J_l", suites::line_direction(3, JACOBIAN_STATES)),
        ("J_y", suites::measurement(4, JACOBIAN_STATES)),
        ("constraints", suites::constraints(5, JACOBIAN_STATES)),
    ];
    let t = start.elapsed();
    let worst = parts.iter().map(|p| p.1).fold(0.0, f64::max);
    let each: Vec<String> = parts.iter().map(|(n, e)| format!("{n} {e:.2e}")).collect();
    Outcome {
        passed: worst < JACOBIAN_TOL && t < JACOBIAN_BUDGET,
        detail: format!(
            "{JACOBIAN_STATES} states each, {} (tol {JACOBIAN_TOL:e}), {t:.2?} (budget {JACOBIAN_BUDGET:?})",
            each.join(", ")
        ),
    }
}

fn projector(cfg: &ScenarioConfig) -> Outcome {
    let (sim, samples) = collect(cfg, usize::MAX);
    let mut rng = common::rng(6);
    let (mut nu, mut roll, mut disp) = (0.0f64, 0.0f64, 0.0f64);
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for s in &samples {
        nu = nu.max(s.diag.projector_residual);
        roll = roll.max(roll_rate(&sim, s).abs());
        for eps in [1e-3, 1e-4] {
            disp = disp.max(tip_displacement(&sim, s, eps) / (eps * eps));
        }
        let d = DVector::from_fn(SYSTEM_PARAMS, |_, _| rng.random_range(-1.0..1.0));
        let slope = null_space_slope(&sim, s, &d);
        lo = lo.min(slope);
        hi = hi.max(slope);
    }
    let passed = !samples.is_empty()
        && nu < PROJECTOR_TOL
        && roll < ROLL_TOL
        && disp < DISPLACEMENT_FACTOR
        && (lo - SLOPE).abs() <= SLOPE_TOL
        && (hi - SLOPE).abs() <= SLOPE_TOL;
    Outcome {
        passed,
        detail: format!(
            "{} solves, max |N u| {nu:.2e} (tol {PROJECTOR_TOL:e}), roll {roll:.2e} (tol {ROLL_TOL:e}), \
             max |dt1|/eps^2 {disp:.2e} (< {DISPLACEMENT_FACTOR}), null-space slope [{lo:.4}, {hi:.4}] \
             (target {SLOPE} +/- {SLOPE_TOL})",
            samples.len()
        ),
    }
}

fn lyapunov(cfg: &ScenarioConfig) -> Outcome {
    let s = run_scenario(cfg).map(|o| o.summary);
    match s {
        Ok(s) => {
            let rate = s.max_lyapunov_rate.unwrap_or(f64::NEG_INFINITY);
            Outcome {
                passed: s.adaptation_ticks > 0 && rate <= LYAPUNOV_TOL,
                detail: format!(
                    "{} adaptation ticks, max x^T J u {rate:.2e} (tol {LYAPUNOV_TOL:e})",
                    s.adaptation_ticks
                ),
            }
        }
        Err(e) => Outcome {
            passed: false,
            detail: format!("run failed: {e}"),
        },
    }
}

fn qp() -> Outcome {
    let mut rng = common::rng(7);
    let (mut kkt, mut gap, mut non_optimal) = (0.0f64, 0.0f64, 0);
    for _ in 0..QP_CASES {
        let n = rng.random_range(2..=20);
        let m = rng.random_range(0..=30);
        let eqs = rng.random_range(0..=n / 3);
        let p = random_qp(&mut rng, n, m, eqs);
        let s = solve(&p, &QpOptions::default()).unwrap();
        if s.status != QpStatus::Optimal {
            non_optimal += 1;
            continue;
        }
        let (u_ref, _, _) = dual_projected_gradient(&p, 200_000);
        kkt = kkt.max(s.kkt_residual);
        gap = gap.max((p.objective(&s.u) - p.objective(&u_ref)).abs());
    }
    Outcome {
        passed: non_optimal == 0 && kkt < QP_KKT_TOL && gap < QP_OBJECTIVE_TOL,
        detail: format!(
            "{QP_CASES} problems, {non_optimal} non-optimal, max KKT {kkt:.2e} (tol {QP_KKT_TOL:e}), \
             max objective gap {gap:.2e} (tol {QP_OBJECTIVE_TOL:e})"
        ),
    }
}

fn calibration(cfg: &ScenarioConfig) -> Outcome {
    let cal = CalibrationConfig {
        ticks: CALIBRATION_TICKS,
        ..CalibrationConfig::default()
    };
    match run_calibration(cfg, &cal) {
        Ok(r) => {
            let worst = r.max_final_residual();
            Outcome {
                passed: worst < CALIBRATION_RESIDUAL,
                detail: format!(
                    "{} viewpoints, {:.1} deg + {:.1} mm injected, final max |y~| {worst:.2e} \
                     (tol {CALIBRATION_RESIDUAL:e}) after {CALIBRATION_TICKS} ticks, below tol from tick {:?}",
                    cal.viewpoints,
                    cal.rotation_error.to_degrees(),
                    cal.translation_error * 1e3,
                    r.converged_at
                ),
            }
        }
        Err(e) => Outcome {
            passed: false,
            detail: format!("calibration failed: {e}"),
        },
    }
}

fn headline(cfg: &ScenarioConfig) -> Outcome {
    let mut cfg = cfg.clone();
    cfg.seed = HEADLINE_SEED;
    let start = Instant::now();
    let on = run_scenario(&ScenarioConfig {
        adaptive: true,
        ..cfg.clone()
    });
    let t = start.elapsed();
    let off = run_scenario(&ScenarioConfig { adaptive: false, ..cfg });
    let (on, off) = match (on, off) {
        (Ok(a), Ok(b)) => (a.summary, b.summary),
        (a, b) => {
            return Outcome {
                passed: false,
                detail: format!("run failed: {:?} / {:?}", a.err(), b.err()),
            }
        }
    };
    let passed = on.duty_ratio >= ADAPTIVE_DUTY_MIN
        && off.duty_ratio <= on.duty_ratio - DUTY_GAP_MIN
        && on.min_estimated_margin >= MARGIN_TOL
        && off.min_estimated_margin >= MARGIN_TOL
        && t < HEADLINE_BUDGET;
    Outcome {
        passed,
        detail: format!(
            "seed {HEADLINE_SEED}, duty adaptive {:.3} (>= {ADAPTIVE_DUTY_MIN}), non-adaptive {:.3} \
             (<= adaptive - {DUTY_GAP_MIN}), min g_est {:.2e} / {:.2e} (>= {MARGIN_TOL:e}), \
             {:.0} s simulated in {t:.2?} (budget {HEADLINE_BUDGET:?})",
            on.duty_ratio, off.duty_ratio, on.min_estimated_margin, off.min_estimated_margin, on.duration_s
        ),
    }
}

fn determinism(cfg: &ScenarioConfig) -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let mut files = Vec::new();
    for k in 0..2 {
        let path = dir.path().join(format!("trace-{k}.csv"));
        match run_scenario(cfg).and_then(|o| write_trace(&o.trace, &path)) {
            Ok(()) => files.push(std::fs::read(&path).unwrap()),
            Err(e) => {
                return Outcome {
                    passed: false,
                    detail: format!("run failed: {e}"),
                }
            }
        }
    }
    let same = files[0] == files[1];
    Outcome {
        passed: same && !files[0].is_empty(),
        detail: format!("two runs, {} bytes each, identical: {same}", files[0].len()),
    }
}

fn main() {
    let cfg = ScenarioConfig::default();
    let criteria: [Criterion; 8] = [
        ("algebra identities", Box::new(algebra)),
        ("Jacobians vs central differences", Box::new(jacobians)),
        ("projector", Box::new(|| projector(&cfg))),
        ("Lyapunov non-increase", Box::new(|| lyapunov(&cfg))),
        ("QP solver vs reference", Box::new(qp)),
        ("frozen-pose calibration", Box::new(|| calibration(&cfg))),
        ("headline duty ratio", Box::new(|| headline(&cfg))),
        ("determinism", Box::new(|| determinism(&cfg))),
    ];
    let mut failed = 0;
    for (i, (name, run)) in criteria.iter().enumerate() {
        let o = run();
        report(i + 1, name, &o);
        failed += usize::from(!o.passed);
    }
    println!("acceptance: {}/{} passed", criteria.len() - failed, criteria.len());
    if failed > 0 {
        std::process::exit(1);
    }
}
