mod common;

use std::f64::consts::PI;
use std::sync::OnceLock;

use nalgebra::DVector;
use proptest::prelude::*;

use common::{hopf, v2, Hopf};
use varscale::ode::{flow, flow_variational, IntegratorConfig};
use varscale::quadrature::GaussLegendre;
use varscale::vectorfield::{builtin_problem, hopf_normal, HarmonicForcing, VectorFieldPair};

fn ctx() -> &'static Hopf {
    static CTX: OnceLock<Hopf> = OnceLock::new();
    CTX.get_or_init(hopf)
}

fn state() -> impl Strategy<Value = DVector<f64>> {
    (-1.5f64..1.5, -1.5f64..1.5).prop_map(|(a, b)| v2(a, b))
}

/// A forcing with a state-dependent term, so `g_x` is not zero.
fn coupled() -> VectorFieldPair {
    let forcing: HarmonicForcing = serde_json::from_str(
        r#"{"terms": [
            {"component": 0, "waveform": "cos"},
            {"component": 1, "amplitude": 0.5, "harmonic": 2, "waveform": "sin", "state_factor": 0}
        ]}"#,
    )
    .unwrap();
    hopf_normal("coupled", forcing).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn jacobians_match_differences(x in state(), t in 0.0f64..(2.0 * PI), eps in 0.0f64..1.0) {
        let vf = coupled();
        let gap = (vf.jacobian_f(&x).unwrap() - vf.fd_jacobian_f(&x)).amax();
        prop_assert!(gap < 1e-6, "f': {gap:e}");
        let gap = (vf.rhs_jacobian(t, &x, eps).unwrap()
            - (vf.fd_jacobian_f(&x) + vf.fd_jacobian_g_x(t, &x, eps) * eps))
            .amax();
        prop_assert!(gap < 1e-6, "rhs': {gap:e}");
    }

    #[test]
    fn hessian_contractions_match_differences(x in state(), a in state(), b in state()) {
        let vf = builtin_problem("hopf-normal-cosforce").unwrap();
        let gap = (vf.hessian_f(&x).unwrap().apply(&a, &b) - vf.fd_hessian_f(&x).apply(&a, &b)).norm();
        prop_assert!(gap < 1e-4 * (1.0 + a.norm() * b.norm()), "{gap:e}");
    }

    #[test]
    fn forcing_is_periodic(t in 0.0f64..(2.0 * PI), x in state(), eps in 0.0f64..1.0) {
        let vf = coupled();
        let a = vf.eval_g(t, &x, eps).unwrap();
        let b = vf.eval_g(t + vf.period(), &x, eps).unwrap();
        prop_assert!((a - b).norm() < 1e-12);
    }

    #[test]
    fn flow_is_a_two_parameter_semigroup(x in state(), s in 0.1f64..3.0, u in 0.1f64..3.0, eps in 0.0f64..0.5) {
        let vf = coupled();
        let cfg = IntegratorConfig::with_tolerance(1e-12);
        let direct = flow(&vf, 0.0, s + u, &x, eps, &cfg).unwrap().final_state().clone();
        let mid = flow(&vf, 0.0, s, &x, eps, &cfg).unwrap().final_state().clone();
        let split = flow(&vf, s, s + u, &mid, eps, &cfg).unwrap().final_state().clone();
        prop_assert!((direct - split).norm() < 1e-9);
    }

    #[test]
    fn liouville_formula(x in state(), eps in 0.0f64..0.5) {
        let vf = coupled();
        let cfg = IntegratorConfig::with_tolerance(1e-12);
        let t1 = 2.0;
        let var = flow_variational(&vf, 0.0, t1, &x, eps, 1, &cfg).unwrap();
        let breaks: Vec<f64> = (0..=64).map(|k| t1 * k as f64 / 64.0).collect();
        let trace = GaussLegendre::new(8).composite(&breaks, |t| {
            let xt = var.base.eval(t).unwrap();
            vf.rhs_jacobian(t, &xt, eps).unwrap().trace()
        });
        let det = var.final_fundamental().determinant();
        prop_assert!((det.ln() - trace).abs() < 1e-7, "ln det {} vs {}", det.ln(), trace);
    }

    #[test]
    fn cycle_points_are_fixed_by_the_unforced_map(k in 0usize..512) {
        let h = ctx();
        let x = h.analysis.cycle.sample_state(k).clone();
        let image = h.ops.poincare(&x, 0.0).unwrap();
        prop_assert!((image - &x).norm() < 1e-9);
    }
}

#[test]
fn variational_orders() {
    let vf = coupled();
    let cfg = IntegratorConfig::with_tolerance(1e-12);
    let (x0, dir, t1, eps) = (v2(-0.4, 1.1), v2(0.8, 0.6), 2.5, 0.3);
    let var = flow_variational(&vf, 0.0, t1, &x0, eps, 2, &cfg).unwrap();
    let base = var.base.final_state().clone();
    let lin = var.final_fundamental() * &dir;
    let quad = var.final_second_order().unwrap().apply(&dir, &dir);
    let steps = [0.08, 0.04, 0.02, 0.01];
    let (mut first, mut second) = (Vec::new(), Vec::new());
    for h in steps {
        let moved = flow(&vf, 0.0, t1, &(&x0 + &dir * h), eps, &cfg).unwrap().final_state().clone();
        let r = &moved - &base - &lin * h;
        first.push(r.norm());
        second.push((r - &quad * (0.5 * h * h)).norm() / (h * h));
    }
    let o1 = varscale::linalg::loglog_slope(&steps, &first).unwrap();
    let o2 = varscale::linalg::loglog_slope(&steps, &second).unwrap();
    assert!(o1 >= 1.9, "first order {o1}");
    assert!(o2 >= 0.9, "second order {o2}");
}

#[test]
fn monodromy_fixes_the_tangent_and_adjoint() {
    let h = ctx();
    let m = &h.analysis.monodromy.matrix;
    let tangent = h.analysis.cycle.sample_tangent(0);
    let z = h.analysis.adjoint.sample(0);
    assert!((m * tangent - tangent).norm() < 1e-8);
    assert!((m.transpose() * z - z).norm() < 1e-8);
    assert!((m.determinant() - (-4.0 * PI).exp()).abs() < 1e-10);
}

#[test]
fn adjoint_multipliers_are_reciprocal() {
    let h = ctx();
    let m = &h.analysis.monodromy.matrix;
    let inv_t = m.clone().try_inverse().unwrap().transpose();
    let mut fwd: Vec<f64> = m.complex_eigenvalues().iter().map(|e| e.re).collect();
    let mut adj: Vec<f64> = inv_t.complex_eigenvalues().iter().map(|e| 1.0 / e.re).collect();
    fwd.sort_by(f64::total_cmp);
    adj.sort_by(f64::total_cmp);
    for (a, b) in fwd.iter().zip(&adj) {
        assert!((a - b).abs() <= 1e-9 * a.abs().max(1e-6), "{a} vs {b}");
    }
    let residual = h.analysis.adjoint.ode_residual(&h.analysis.cycle, &h.integ).unwrap();
    assert!(residual < 1e-8, "{residual}");
    assert!(h.analysis.adjoint.periodicity_defect() < 1e-8);
}

#[test]
fn perron_pairing_is_constant() {
    let h = ctx();
    let (c, a) = (&h.analysis.cycle, &h.analysis.adjoint);
    for k in 0..64 {
        let t = 2.0 * PI * (k as f64 + 0.37) / 64.0;
        let pairing = c.tangent_at(t).dot(&a.value_at(t));
        assert!((pairing - 1.0).abs() < 1e-7, "theta = {t}: {pairing}");
    }
}

#[test]
fn cycle_matches_the_unit_circle() {
    let c = &ctx().analysis.cycle;
    assert!((c.period() - 2.0 * PI).abs() < 1e-12);
    for k in (0..c.grid_size()).step_by(16) {
        assert!((c.sample_state(k).norm() - 1.0).abs() < 1e-9);
    }
    assert!(c.closure_defect() < 1e-9);
}
