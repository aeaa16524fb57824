mod common;

use std::f64::consts::PI;
use std::sync::{Arc, OnceLock};

use proptest::prelude::*;

use common::{hopf, phase_gap, v2, Hopf, LADDER};
use varscale::cycle::{CycleAnalysis, CycleConfig};
use varscale::malkin::{find_zeros, malkin_m, malkin_mprime, projector_at, MalkinConfig};
use varscale::poincare::{assemble_problem, PoincareOperators};
use varscale::scaling::{compute_w0, continue_branch, AuditThresholds, ContinuationOptions, HYP_PROJ_Q};
use varscale::vectorfield::{hopf_normal, HarmonicForcing};
use varscale::Error;

fn ctx() -> &'static Hopf {
    static CTX: OnceLock<Hopf> = OnceLock::new();
    CTX.get_or_init(hopf)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn q_decomposes_along_the_tangent(theta in 0.0f64..(2.0 * PI)) {
        let h = ctx();
        let (c, a) = (&h.analysis.cycle, &h.analysis.adjoint);
        let q = h.ops.q_at_zero(c, theta).unwrap();
        let proj = projector_at(c, a, theta).unwrap();
        let expected = c.tangent_at(theta) * malkin_m(c, a, theta);
        prop_assert!((&proj.matrix * &q - expected).norm() < 1e-7);
    }

    #[test]
    fn mprime_formula_matches_closed_form(theta in 0.0f64..(2.0 * PI)) {
        let h = ctx();
        let e = malkin_mprime(&h.ops, &h.analysis.cycle, &h.analysis.adjoint, theta).unwrap();
        prop_assert!((e.value + PI * theta.cos()).abs() < 1e-7, "{} at {theta}", e.value);
        prop_assert!(e.correction.abs() < 1e-7);
    }

    #[test]
    fn q_derivatives_agree_with_differences(theta in 0.0f64..(2.0 * PI)) {
        let h = ctx();
        let d = h.ops.q_derivatives(&h.analysis.cycle, theta).unwrap();
        prop_assert!(d.q_jacobian_gap < 1e-6, "{}", d.q_jacobian_gap);
        prop_assert!(d.q_eps_gap < 1e-6, "{}", d.q_eps_gap);
        prop_assert!(d.warnings.is_empty());
    }

    #[test]
    fn difference_quotient_tends_to_q(r in 0.8f64..1.2, phi in 0.0f64..(2.0 * PI)) {
        let h = ctx();
        let v = v2(r * phi.cos(), r * phi.sin());
        let q0 = h.ops.zero_order(&v).unwrap().q.clone();
        let err: Vec<f64> = [0.04, 0.02, 0.01]
            .iter()
            .map(|&e| (h.ops.q_difference(&v, e).unwrap() - &q0).norm())
            .collect();
        // Q(v, eps) - Q(v, 0) is linear in eps, so halving eps halves the gap.
        prop_assert!((err[0] / err[1] - 2.0).abs() < 0.1 && (err[1] / err[2] - 2.0).abs() < 0.1, "{err:?}");
    }
}

#[test]
fn malkin_function_is_periodic() {
    let h = ctx();
    let (c, a) = (&h.analysis.cycle, &h.analysis.adjoint);
    for k in 0..16 {
        let t = 0.4 * k as f64;
        assert!((malkin_m(c, a, t) - malkin_m(c, a, t + c.period())).abs() < 1e-10);
    }
}

#[test]
fn audit_rejects_a_phase_off_the_zero_set() {
    let h = ctx();
    let report = h.assemble(PI / 2.0).audit;
    let first = report.first_failure().unwrap();
    assert_eq!(first.hypothesis, HYP_PROJ_Q);
    assert!((first.residual - PI).abs() < 1e-6, "{}", first.residual);
    match assemble_problem(&h.ops, &h.analysis, PI / 2.0, &AuditThresholds::default()) {
        Err(Error::Audit { hypothesis, .. }) => assert_eq!(hypothesis, HYP_PROJ_Q),
        other => panic!("expected a hypothesis violation, got {other:?}"),
    }
}

#[test]
fn unstable_zero_assembles_with_positive_eigenvalue() {
    let h = ctx();
    let asm = assemble_problem(&h.ops, &h.analysis, PI, &AuditThresholds::default()).unwrap();
    let sol = continue_branch(&asm.problem, &LADDER, &ContinuationOptions::default()).unwrap();
    assert!((sol.lambda_star.unwrap() - PI).abs() < 1e-6);
    assert!((asm.mprime.value - PI).abs() < 1e-6);
    assert!(sol.truncated.is_none());
}

#[test]
fn scaled_branch_converges_to_w0() {
    let h = ctx();
    let asm = h.assemble(0.0);
    let sol = continue_branch(&asm.problem, &LADDER, &ContinuationOptions::default()).unwrap();
    let w0 = compute_w0(&asm.problem).unwrap().w0;
    assert!((&w0 - v2(0.375, 0.1875)).norm() < 1e-6, "{w0}");
    let gaps: Vec<f64> = sol.branch.iter().map(|r| (&r.w_eps - &w0).norm() / r.eps).collect();
    // |w_eps - w0| = O(eps): the normalized gap stays bounded.
    let (lo, hi) = gaps.iter().fold((f64::MAX, 0.0f64), |(l, u), g| (l.min(*g), u.max(*g)));
    assert!(hi / lo < 3.0, "{gaps:?}");
}

#[test]
fn phase_shift_moves_the_zeros() {
    let phase = 0.7;
    let vf = hopf_normal("shifted", HarmonicForcing::cos_on_first(phase)).unwrap();
    let integ = varscale::ode::IntegratorConfig::with_tolerance(1e-12);
    let analysis = CycleAnalysis::run(&vf, &v2(1.0, 0.0), &CycleConfig::default(), &integ).unwrap();
    let ops = Arc::new(PoincareOperators::new(vf, integ).unwrap());
    let profile = find_zeros(&ops, &analysis, &MalkinConfig::default()).unwrap();
    assert_eq!(profile.zeros.len(), 2);
    let base = [0.0, PI];
    let shifted = |sign: f64| {
        base.iter()
            .all(|b| profile.zeros.iter().any(|z| phase_gap(z.theta0, b + sign * phase) < 1e-8))
    };
    assert!(shifted(1.0) || shifted(-1.0), "{:?}", profile.zeros);
    for z in &profile.zeros {
        assert_eq!(z.stable_candidate, z.mprime < 0.0);
        assert!((z.mprime.abs() - PI).abs() < 1e-6);
    }
}

#[test]
fn operator_cache_reuses_zero_order_data() {
    let h = ctx();
    let v = v2(0.3, -0.9);
    let a = h.ops.zero_order(&v).unwrap();
    let b = h.ops.zero_order(&v).unwrap();
    assert!(Arc::ptr_eq(&a, &b));
}
