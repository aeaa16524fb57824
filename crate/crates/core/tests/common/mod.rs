#![allow(dead_code)]

use std::f64::consts::PI;
use std::sync::Arc;

use nalgebra::DVector;
use varscale::cycle::{CycleAnalysis, CycleConfig};
use varscale::ode::IntegratorConfig;
use varscale::poincare::{inspect_problem, AssembledProblem, PoincareOperators};
use varscale::scaling::AuditThresholds;
use varscale::vectorfield::builtin_problem;

pub const LADDER: [f64; 5] = [1e-1, 3e-2, 1e-2, 3e-3, 1e-3];

pub struct Hopf {
    pub analysis: CycleAnalysis,
    pub ops: Arc<PoincareOperators>,
    pub integ: IntegratorConfig,
}

impl Hopf {
    pub fn assemble(&self, theta0: f64) -> AssembledProblem {
        inspect_problem(&self.ops, &self.analysis, theta0, &AuditThresholds::default()).unwrap()
    }
}

pub fn v2(a: f64, b: f64) -> DVector<f64> {
    DVector::from_vec(vec![a, b])
}

pub fn hopf_named(name: &str) -> Hopf {
    let vf = builtin_problem(name).unwrap();
    let integ = IntegratorConfig::with_tolerance(1e-12);
    let analysis = CycleAnalysis::run(&vf, &v2(1.0, 0.0), &CycleConfig::default(), &integ).unwrap();
    let ops = Arc::new(PoincareOperators::new(vf, integ).unwrap());
    Hopf { analysis, ops, integ }
}

pub fn hopf() -> Hopf {
    hopf_named("hopf-normal-cosforce")
}

/// Distance between two phases on the circle of length `2π`.
pub fn phase_gap(a: f64, b: f64) -> f64 {
    let d = (a - b).rem_euclid(2.0 * PI);
    d.min(2.0 * PI - d)
}
