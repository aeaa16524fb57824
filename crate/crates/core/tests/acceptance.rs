//! Acceptance criteria on the forced Hopf normal form. Runs without the test
//! harness so that every criterion prints exactly one PASS/FAIL line; the
//! process exits non-zero when any criterion fails.

mod common;

use std::f64::consts::PI;
use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use common::{hopf, phase_gap, v2, Hopf, LADDER};
use varscale::linalg::smallest_singular_value;
use varscale::malkin::{find_zeros, malkin_m, malkin_m_via_q, malkin_mprime, malkin_mprime_fd, MalkinConfig};
use varscale::newton::{self, NewtonOptions};
use varscale::ode::flow_variational;
use varscale::scaling::{compute_w0, psi_eval, psi_jacobian, ContinuationOptions, HYP_INVERTIBLE};
use varscale::validator::{ladder_study, long_run_oracle, LadderStudy, ValidatorConfig};
use varscale::vectorfield::{hopf_normal, HarmonicForcing};

/// Sub-checks of one criterion.
#[derive(Default)]
struct Gate {
    failures: Vec<String>,
    notes: Vec<String>,
}

impl Gate {
    fn check(&mut self, what: &str, ok: bool, detail: impl Into<String>) {
        let detail = detail.into();
        if ok {
            self.notes.push(format!("{what}: {detail}"));
        } else {
            self.failures.push(format!("{what}: {detail}"));
        }
    }

    fn summary(&self) -> String {
        if self.failures.is_empty() {
            self.notes.join("; ")
        } else {
            self.failures.join("; ")
        }
    }
}

fn list(xs: &[f64]) -> String {
    let items: Vec<String> = xs.iter().map(|x| format!("{x:.2e}")).collect();
    format!("[{}]", items.join(", "))
}

fn grid(n: usize) -> impl Iterator<Item = f64> {
    (0..n).map(move |k| 2.0 * PI * k as f64 / n as f64)
}

fn cycle_and_spectrum(h: &Hopf, g: &mut Gate) {
    let mut mu: Vec<f64> = h.analysis.monodromy.multipliers.iter().map(|m| m.re).collect();
    mu.sort_by(|a, b| b.total_cmp(a));
    let small = (-4.0 * PI).exp();
    let rel = ((mu[0] - 1.0).abs()).max((mu[1] - small).abs() / small);
    let imag = h.analysis.monodromy.multipliers.iter().map(|m| m.im.abs()).fold(0.0, f64::max);
    g.check("multipliers {1, e^-4pi}", rel < 1e-6 && imag == 0.0, format!("max relative error {rel:.2e}"));
    let perron = h.analysis.perron_deviation;
    g.check("Perron invariant", perron < 1e-7, format!("max deviation {perron:.2e}"));
}

fn malkin_closed_form(h: &Hopf, g: &mut Gate) {
    let (c, a) = (&h.analysis.cycle, &h.analysis.adjoint);
    let worst = grid(128).map(|t| (malkin_m(c, a, t) + PI * t.sin()).abs()).fold(0.0, f64::max);
    g.check("M = -pi sin on 128 points", worst < 1e-7, format!("max error {worst:.2e}"));

    let profile = find_zeros(&h.ops, &h.analysis, &MalkinConfig::default()).unwrap();
    let zeros: Vec<f64> = profile.zeros.iter().map(|z| z.theta0).collect();
    let located = zeros.len() == 2
        && [0.0, PI].iter().all(|t| zeros.iter().any(|z| phase_gap(*z, *t) < 1e-8));
    g.check("zeros at {0, pi}", located, format!("{zeros:?}"));

    let formula = malkin_mprime(&h.ops, c, a, 0.0).unwrap().value;
    let central = malkin_mprime_fd(c, a, 0.0, 1e-4);
    g.check(
        "M'(0) = -pi",
        (formula + PI).abs() < 1e-5 && (central + PI).abs() < 1e-5 && (formula - central).abs() < 1e-5,
        format!("formula {formula:.10}, central difference {central:.10}"),
    );
}

fn malkin_via_q(h: &Hopf, g: &mut Gate) {
    let (c, a) = (&h.analysis.cycle, &h.analysis.adjoint);
    let worst = grid(128)
        .map(|t| {
            let q = h.ops.q_at_zero(c, t).unwrap();
            (malkin_m(c, a, t) - malkin_m_via_q(&q, a, t)).abs()
        })
        .fold(0.0, f64::max);
    g.check("integral vs <Q, z0> on 128 points", worst < 1e-7, format!("max gap {worst:.2e}"));
}

fn scaled_equation_at_zero(h: &Hopf, g: &mut Gate) {
    let asm = h.assemble(0.0);
    for item in &asm.audit.items {
        let ok = if item.hypothesis == HYP_INVERTIBLE {
            item.passed
        } else {
            item.passed && (!item.upper_bound || item.residual < 1e-5)
        };
        g.check(item.hypothesis, ok, format!("{:.2e}", item.residual));
    }
    let w0 = compute_w0(&asm.problem).unwrap();
    let psi = psi_eval(&asm.problem, &w0.w0, 0.0).unwrap().norm();
    g.check("|Psi(w0, 0)|", psi < 1e-8, format!("{psi:.2e}"));
    let sigma = smallest_singular_value(&psi_jacobian(&asm.problem, &w0.w0, 0.0).unwrap());
    g.check("sigma_min Psi'_w(w0, 0)", sigma > 1e-3, format!("{sigma:.3e}"));

    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let opts = NewtonOptions {
        tolerance: 1e-12,
        noise_tolerance: 1e-12,
        max_iter: 40,
        ..NewtonOptions::default()
    };
    let mut worst: f64 = 0.0;
    for _ in 0..20 {
        let dir = v2(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)).normalize();
        let radius: f64 = 2.0 * rng.random_range(0.0f64..1.0).sqrt();
        let start = &w0.w0 + dir * radius;
        let out = newton::solve(
            |w| psi_eval(&asm.problem, w, 0.0),
            |w| psi_jacobian(&asm.problem, w, 0.0),
            &start,
            &opts,
        );
        worst = worst.max(match out {
            Ok(o) if o.converged => (o.x - &w0.w0).norm(),
            _ => f64::INFINITY,
        });
    }
    g.check("20 random starts reach w0", worst < 1e-7, format!("max distance {worst:.2e}"));
}

fn studies(h: &Hopf) -> Vec<(f64, LadderStudy)> {
    [0.0, PI]
        .into_iter()
        .map(|t| {
            let asm = h.assemble(t);
            let study = ladder_study(
                &h.ops,
                &h.analysis.cycle,
                &asm,
                &LADDER,
                &ContinuationOptions::default(),
                &ValidatorConfig::default(),
            )
            .unwrap();
            (t, study)
        })
        .collect()
}

fn eigenvalue_asymptotics(study: &LadderStudy, g: &mut Gate) {
    let r = &study.report;
    let err: Vec<f64> = r.rows.iter().map(|row| row.lambda_ratio_error).collect();
    let decreasing = err.windows(2).all(|w| w[1] < w[0]);
    let slope = r.slopes.lambda_ratio.unwrap_or(f64::NAN);
    g.check("|lambda_eps/eps - lambda*| decreasing", decreasing, list(&err));
    g.check("log-log slope", slope >= 0.8, format!("{slope:.3}"));
    g.check("lambda* = -pi", (r.lambda_star + PI).abs() < 1e-4, format!("{:.10}", r.lambda_star));
    let ang: Vec<f64> = r.rows.iter().map(|row| row.eigvec_angle).collect();
    let last = *ang.last().unwrap();
    g.check(
        "eigenvector angle to the tangent",
        ang.windows(2).all(|w| w[1] < w[0]) && last < 1e-2,
        list(&ang),
    );
}

fn periodic_solutions(h: &Hopf, all: &[(f64, LadderStudy)], g: &mut Gate) {
    for (theta0, study) in all {
        let tag = if *theta0 == 0.0 { "theta0=0" } else { "theta0=pi" };
        let rows = &study.report.rows;
        let iters = rows.iter().map(|r| r.newton_iterations).max().unwrap();
        let solved = rows.iter().all(|r| r.newton_converged);
        g.check(&format!("{tag} Newton iterations"), solved && iters <= 5, format!("max {iters}"));
        let pos = rows.iter().map(|r| r.position_error).fold(0.0, f64::max);
        g.check(&format!("{tag} |x_eps - v0 - eps w_eps| / eps"), pos <= 1e-6, format!("{pos:.2e}"));

        let (k, _) = LADDER.iter().enumerate().find(|(_, e)| **e == 1e-2).unwrap();
        let bp = study.points[k].as_ref().unwrap();
        let stable_expected = *theta0 == 0.0;
        let lambda_star = if stable_expected { -PI } else { PI };
        let gap = (bp.rho_re - (1.0 + 1e-2 * lambda_star)).abs();
        g.check(
            &format!("{tag} rho at eps=1e-2"),
            bp.rho_im == 0.0 && gap <= 0.2 * PI * 1e-2,
            format!("{:.8} (gap {gap:.2e})", bp.rho_re),
        );
        g.check(&format!("{tag} stability verdict"), bp.stable == stable_expected, format!("{}", bp.stable));
        let run = long_run_oracle(&h.ops, bp, 1e-3, 50, 0).unwrap();
        g.check(
            &format!("{tag} 50-period simulation"),
            run.attracted == stable_expected,
            format!("{:.2e} -> {:.2e}", run.distances[1], run.distances[50]),
        );
    }
}

fn zero_set_equivalence(h: &Hopf, all: &[(f64, LadderStudy)], g: &mut Gate) {
    let mut worst: f64 = 0.0;
    for (theta0, study) in all {
        let v0 = h.analysis.cycle.state_at(*theta0);
        for rec in &study.scaling.branch {
            let v = &v0 + &rec.w_eps * rec.eps;
            let phi = (h.ops.poincare(&v, rec.eps).unwrap() - &v).norm();
            worst = worst.max(phi);
        }
    }
    g.check("|Phi(v0 + eps w_eps, eps)|", worst <= 1e-8, format!("max {worst:.2e}"));
}

fn central_jacobian(f: impl Fn(&DVector<f64>) -> DVector<f64>, x: &DVector<f64>, h: f64) -> DMatrix<f64> {
    let n = x.len();
    let cols: Vec<DVector<f64>> = (0..n)
        .map(|j| {
            let mut e = DVector::zeros(n);
            e[j] = h;
            (f(&(x + &e)) - f(&(x - &e))) / (2.0 * h)
        })
        .collect();
    DMatrix::from_columns(&cols)
}

fn rel_gap(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    (a - b).amax() / a.amax().max(1.0)
}

fn derivative_hygiene(h: &Hopf, g: &mut Gate) {
    let vf = h.ops.vector_field();
    // The built-in forcing ignores the state, so g'_x is exercised on a
    // member of the same family with a state-dependent term.
    let forcing: HarmonicForcing =
        serde_json::from_str(r#"{"terms": [{"component": 1, "amplitude": 0.5, "state_factor": 0}]}"#).unwrap();
    let coupled = hopf_normal("coupled", forcing).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let (mut jac, mut hess, mut gx): (f64, f64, f64) = (0.0, 0.0, 0.0);
    for _ in 0..50 {
        let x = v2(rng.random_range(-1.5..1.5), rng.random_range(-1.5..1.5));
        let t = rng.random_range(0.0..2.0 * PI);
        let e = rng.random_range(0.0..0.5);
        jac = jac.max(rel_gap(&vf.jacobian_f(&x).unwrap(), &vf.fd_jacobian_f(&x)));
        gx = gx.max(rel_gap(&coupled.jacobian_g_x(t, &x, e).unwrap(), &coupled.fd_jacobian_g_x(t, &x, e)));
        let (an, fd) = (vf.hessian_f(&x).unwrap(), vf.fd_hessian_f(&x));
        let a = v2(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
        let b = v2(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
        hess = hess.max((an.apply(&a, &b) - fd.apply(&a, &b)).norm());
    }
    g.check("f' vs FD", jac < 1e-6, format!("{jac:.1e}"));
    g.check("g'_x vs FD", gx < 1e-6, format!("{gx:.1e}"));
    g.check("f'' contractions vs FD", hess < 1e-4, format!("{hess:.1e}"));

    let asm = h.assemble(0.0);
    let v0 = asm.problem.v0().clone();
    let b = asm.problem.base();
    let p_fd = central_jacobian(|v| h.ops.poincare(v, 0.0).unwrap() - v, &v0, 1e-5);
    let pj = rel_gap(&b.p_jacobian, &p_fd);
    g.check("P' vs FD", pj < 1e-6, format!("{pj:.1e}"));
    let (a, c) = (v2(0.3, -0.7), v2(-0.5, 0.2));
    let step = 1e-4;
    let y = |v: &DVector<f64>| h.ops.variational(v, 0.0).unwrap().1;
    let p2_fd = (y(&(&v0 + &c * step)) - y(&(&v0 - &c * step))) * &a / (2.0 * step);
    let p2 = (b.p_hessian.apply(&a, &c) - p2_fd).norm();
    g.check("P'' contraction vs FD", p2 < 1e-4, format!("{p2:.1e}"));
    let qv = asm.q_checks.q_jacobian_gap;
    let qe = asm.q_checks.q_eps_gap;
    g.check("Q'_v vs FD", qv < 1e-6, format!("{qv:.1e}"));
    g.check("Q'_eps vs extrapolated FD", qe < 1e-6, format!("{qe:.1e}"));
    let w0 = compute_w0(&asm.problem).unwrap().w0;
    // Psi divides by eps^2, so a moderate eps keeps integrator noise out of the difference.
    let e = 1e-1;
    let psi_fd = central_jacobian(|w| psi_eval(&asm.problem, w, e).unwrap(), &w0, 1e-3);
    let pg = rel_gap(&psi_jacobian(&asm.problem, &w0, e).unwrap(), &psi_fd);
    g.check("Psi'_w vs FD", pg < 1e-6, format!("{pg:.1e}"));

    // Flow derivatives against Taylor remainders in the step size.
    let x0 = v2(0.8, 0.4);
    let dir = v2(0.6, -0.8);
    let t1 = 1.5;
    let var = flow_variational(vf, 0.0, t1, &x0, 0.0, 2, &h.integ).unwrap();
    let base = var.base.final_state().clone();
    let y1 = var.final_fundamental() * &dir;
    let s = var.final_second_order().unwrap().apply(&dir, &dir);
    let steps = [0.1, 0.05, 0.025, 0.0125];
    let mut r1 = Vec::new();
    let mut r2 = Vec::new();
    for hs in steps {
        let moved = varscale::ode::flow(vf, 0.0, t1, &(&x0 + &dir * hs), 0.0, &h.integ)
            .unwrap()
            .final_state()
            .clone();
        let lin = &moved - &base - &y1 * hs;
        r1.push(lin.norm());
        r2.push((lin - &s * (0.5 * hs * hs)).norm() / (hs * hs));
    }
    let o1 = varscale::linalg::loglog_slope(&steps, &r1).unwrap_or(f64::NAN);
    let o2 = varscale::linalg::loglog_slope(&steps, &r2).unwrap_or(f64::NAN);
    g.check("first variation order", o1 >= 1.9, format!("{o1:.3}"));
    g.check("second variation order", o2 >= 0.9, format!("{o2:.3}"));
}

fn main() {
    let started = Instant::now();
    let h = hopf();
    let all = studies(&h);
    let mut criteria: Vec<(&str, Gate)> = Vec::new();
    let mut run = |name: &'static str, f: &dyn Fn(&mut Gate)| {
        let mut g = Gate::default();
        f(&mut g);
        criteria.push((name, g));
    };
    run("cycle and spectrum", &|g| cycle_and_spectrum(&h, g));
    run("Malkin closed form", &|g| malkin_closed_form(&h, g));
    run("Malkin function through Q", &|g| malkin_via_q(&h, g));
    run("scaled equation at theta0 = 0", &|g| scaled_equation_at_zero(&h, g));
    run("eigenvalue asymptotics", &|g| eigenvalue_asymptotics(&all[0].1, g));
    run("periodic solutions and stability", &|g| periodic_solutions(&h, &all, g));
    run("zero-set equivalence", &|g| zero_set_equivalence(&h, &all, g));
    run("derivative hygiene", &|g| derivative_hygiene(&h, g));

    let mut failed = 0;
    for (i, (name, g)) in criteria.iter().enumerate() {
        let verdict = if g.failures.is_empty() { "PASS" } else { "FAIL" };
        if !g.failures.is_empty() {
            failed += 1;
        }
        println!("{verdict} criterion {} ({name}): {}", i + 1, g.summary());
    }
    println!("acceptance: {} of {} criteria passed in {:.1?}", criteria.len() - failed, criteria.len(), started.elapsed());
    if failed > 0 {
        std::process::exit(1);
    }
}
