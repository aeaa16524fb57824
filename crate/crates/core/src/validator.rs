//! Independent checks of the scaling predictions: Newton fixed points of
//! `𝒫_ε`, the Floquet multiplier `ρ_ε`, and convergence along an `ε`-ladder.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{eigenvalues, eigenvector, loglog_slope, null_vector, realify, small_line_angle, smallest_singular_value};
use crate::newton::{self, NewtonOptions};
use crate::ode::flow;
use crate::poincare::{AssembledProblem, PoincareOperators};
use crate::scaling::{continue_branch, lambda_epsilon, ContinuationOptions, ScalingSolution};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ValidatorConfig {
    pub fixed_point: NewtonOptions,
    /// Minimum log-log slope required of the decaying error sequences.
    pub slope_min: f64,
    /// `‖x_ε(0) − v₀ − εw_ε‖ ≤ agreement·ε`.
    pub agreement: f64,
    /// Newton steps allowed from the scaled prediction.
    pub max_iterations: usize,
    /// `‖Φ(v₀ + εw_ε, ε)‖` allowed on the branch.
    pub phi_residual: f64,
    /// Eigenvector angle required at the smallest `ε`.
    pub angle: f64,
    /// Relative band for `|ρ_ε − 1 − ελ*| ≤ band·|λ*|ε`.
    pub rho_band: f64,
    /// The band is enforced for `ε ≤ rho_eps_max` only.
    pub rho_eps_max: f64,
    /// Largest ratio between observed uniform constants across the ladder.
    pub uniform_spread: f64,
    pub uniform_samples: usize,
}

impl Default for ValidatorConfig {
    fn default() -> Self {
        Self {
            fixed_point: NewtonOptions {
                tolerance: 1e-11,
                noise_tolerance: 1e-11,
                max_iter: 20,
                polish: 2,
                singular_floor: 1e-8,
                ..NewtonOptions::default()
            },
            slope_min: 0.8,
            agreement: 1e-6,
            max_iterations: 5,
            phi_residual: 1e-8,
            angle: 1e-2,
            rho_band: 0.2,
            rho_eps_max: 1e-2,
            uniform_spread: 3.0,
            uniform_samples: 256,
        }
    }
}

/// A fixed point `x_ε(0)` of `𝒫_ε` with its multipliers.
#[derive(Debug, Clone, Serialize)]
pub struct BranchPoint {
    pub eps: f64,
    pub x_init: DVector<f64>,
    /// `‖𝒫_ε(x_init) − x_init‖`.
    pub residual: f64,
    pub iterations: usize,
    pub converged: bool,
    pub rho_re: f64,
    pub rho_im: f64,
    /// `(re, im)` sorted by decreasing modulus.
    pub multipliers: Vec<(f64, f64)>,
    pub stable: bool,
}

impl BranchPoint {
    pub fn rho(&self) -> Complex64 {
        Complex64::new(self.rho_re, self.rho_im)
    }
}

/// `true` iff every multiplier lies strictly inside the unit circle.
pub fn stability_verdict(bp: &BranchPoint) -> bool {
    bp.multipliers.iter().all(|(re, im)| re.hypot(*im) < 1.0)
}

/// Newton on `v ↦ 𝒫_ε(v) − v`. `tangent` (usually `ẋ₀(θ₀)`) selects `ρ_ε`
/// as the multiplier whose eigenvector is most aligned with it.
pub fn newton_fixed_point(
    ops: &PoincareOperators,
    eps: f64,
    start: &DVector<f64>,
    tangent: &DVector<f64>,
    opts: &NewtonOptions,
) -> Result<BranchPoint> {
    if !(eps >= 0.0) {
        return Err(Error::Domain(eps));
    }
    let n = start.len();
    let id = DMatrix::<f64>::identity(n, n);
    // A persisting cycle makes 𝒫_ε − I singular at every point of it, even
    // when the start already satisfies the residual test.
    let (_, y0) = ops.variational(start, eps)?;
    let j0 = &y0 - &id;
    let sigma_min = smallest_singular_value(&j0);
    if sigma_min <= opts.singular_floor * j0.norm().max(1.0) {
        return Err(Error::NearResonance { sigma_min });
    }
    let out = newton::solve(
        |v| Ok(ops.poincare(v, eps)? - v),
        |v| Ok(ops.variational(v, eps)?.1 - &id),
        start,
        opts,
    )?;
    let (_, y) = ops.variational(&out.x, eps)?;
    let mut spectrum = eigenvalues(&y);
    spectrum.sort_by(|a, b| b.norm().total_cmp(&a.norm()));
    let overlap = |mu: Complex64| {
        let v = if mu.im == 0.0 {
            null_vector(&(&y - &id * mu.re)).0
        } else {
            realify(&eigenvector(&y, mu))
        };
        (v.dot(tangent) / (v.norm() * tangent.norm())).abs()
    };
    let rho = spectrum
        .iter()
        .copied()
        .max_by(|a, b| overlap(*a).total_cmp(&overlap(*b)))
        .expect("non-empty spectrum");
    let multipliers: Vec<(f64, f64)> = spectrum.iter().map(|m| (m.re, m.im)).collect();
    let stable = multipliers.iter().all(|(re, im)| re.hypot(*im) < 1.0);
    Ok(BranchPoint {
        eps,
        x_init: out.x,
        residual: out.residual,
        iterations: out.iterations,
        converged: out.converged,
        rho_re: rho.re,
        rho_im: rho.im,
        multipliers,
        stable,
    })
}

/// Stroboscopic distances `‖x(kT) − x_ε(0)‖`, `k = 0..=periods`, from a
/// perturbed start.
///
/// Strongly contracting directions collapse within the first period, so
/// attraction is judged against the distance after one period rather than
/// the initial one: a random perturbation may sit almost entirely in such a
/// direction and shrink even near a repelling orbit.
#[derive(Debug, Clone, Serialize)]
pub struct LongRun {
    pub distances: Vec<f64>,
    pub attracted: bool,
}

pub fn long_run_oracle(
    ops: &PoincareOperators,
    bp: &BranchPoint,
    perturbation: f64,
    periods: usize,
    seed: u64,
) -> Result<LongRun> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = bp.x_init.len();
    let dir = DVector::from_fn(n, |_, _| rng.random_range(-1.0..1.0));
    let mut x = &bp.x_init + dir.normalize() * perturbation;
    let vf = ops.vector_field();
    let mut distances = vec![(&x - &bp.x_init).norm()];
    for _ in 0..periods {
        x = flow(vf, 0.0, vf.period(), &x, bp.eps, ops.integrator())?.final_state().clone();
        distances.push((&x - &bp.x_init).norm());
    }
    let reference = distances[1.min(periods)];
    let attracted = distances.last().copied().unwrap_or(f64::NAN) < reference;
    Ok(LongRun { distances, attracted })
}

/// `max_t ‖x_ε(t) − x₀(t + θ₀)‖` over one period.
pub fn uniform_distance(ops: &PoincareOperators, assembled: &AssembledProblem, cycle: &crate::cycle::LimitCycle, bp: &BranchPoint, samples: usize) -> Result<f64> {
    let vf = ops.vector_field();
    let period = vf.period();
    let tr = flow(vf, 0.0, period, &bp.x_init, bp.eps, ops.integrator())?;
    let mut worst: f64 = 0.0;
    for k in 0..=samples {
        let t = period * k as f64 / samples as f64;
        let d = (tr.eval(t)? - cycle.state_at(t + assembled.theta0)).norm();
        worst = worst.max(d);
    }
    Ok(worst)
}

/// One ladder entry. Metrics are `NaN` where a solve failed.
#[derive(Debug, Clone, Serialize)]
pub struct LadderRow {
    pub eps: f64,
    pub scaling_converged: bool,
    pub newton_converged: bool,
    pub lambda_eps: f64,
    pub lambda_eps_im: f64,
    /// `|λ_ε/ε − λ*|`.
    pub lambda_ratio_error: f64,
    /// `‖x_ε(0) − v₀ − εw_ε‖/ε`: agreement of the two solution paths.
    pub position_error: f64,
    /// `‖x_ε(0) − v₀ − εw₀‖/ε`: accuracy of the leading-order prediction.
    pub prediction_error: f64,
    pub rho_re: f64,
    pub rho_im: f64,
    /// `|ρ_ε − 1 − ελ*|/ε`.
    pub rho_error: f64,
    /// Angle between the `λ_ε` eigenvector and `ẋ₀(θ₀)`.
    pub eigvec_angle: f64,
    /// `max_t ‖x_ε(t) − x₀(t + θ₀)‖/ε`.
    pub uniform_constant: f64,
    /// `‖Φ(v₀ + εw_ε, ε)‖`.
    pub phi_residual: f64,
    /// `|det(Φ′_v(x_ε(0), ε) − λ_ε I)|` scaled by `max(1, ‖Φ′_v‖)ⁿ`.
    pub det_defect: f64,
    pub newton_iterations: usize,
    pub newton_residual: f64,
    pub stable: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct Slopes {
    pub lambda_ratio: Option<f64>,
    pub position: Option<f64>,
    pub prediction: Option<f64>,
    pub rho: Option<f64>,
    pub eigvec_angle: Option<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

#[derive(Debug, Clone, Serialize)]
pub struct ConvergenceReport {
    pub theta0: f64,
    pub lambda_star: f64,
    pub mprime: f64,
    /// Decreasing `ε`.
    pub eps_ladder: Vec<f64>,
    pub rows: Vec<LadderRow>,
    pub slopes: Slopes,
    pub checks: Vec<Check>,
    pub passed: bool,
    pub notes: Vec<String>,
}

/// Everything produced by [`ladder_study`].
#[derive(Debug, Clone)]
pub struct LadderStudy {
    pub scaling: ScalingSolution,
    pub points: Vec<Option<BranchPoint>>,
    pub report: ConvergenceReport,
}

/// Solves the scaled equation along `eps_ladder` and checks it against
/// Newton fixed points of `𝒫_ε` started at `v₀ + εw₀`.
pub fn ladder_study(
    ops: &PoincareOperators,
    cycle: &crate::cycle::LimitCycle,
    assembled: &AssembledProblem,
    eps_ladder: &[f64],
    cont: &ContinuationOptions,
    cfg: &ValidatorConfig,
) -> Result<LadderStudy> {
    let problem = &assembled.problem;
    let scaling = continue_branch(problem, eps_ladder, cont)?;
    let lambda_star = scaling.lambda_star.unwrap_or(f64::NAN);
    let v0 = problem.v0().clone();
    let mut ladder = eps_ladder.to_vec();
    ladder.sort_by(|a, b| b.total_cmp(a));
    let mut notes = Vec::new();
    if let Some(t) = &scaling.truncated {
        notes.push(t.clone());
    }

    let points: Vec<Result<BranchPoint>> = ladder
        .par_iter()
        .map(|&eps| {
            let start = &v0 + &scaling.w0 * eps;
            newton_fixed_point(ops, eps, &start, &assembled.tangent, &cfg.fixed_point)
        })
        .collect();
    let mut rows = Vec::with_capacity(ladder.len());
    let mut kept = Vec::with_capacity(ladder.len());
    for (eps, pt) in ladder.iter().copied().zip(points) {
        let pt = match pt {
            Ok(p) => Some(p),
            Err(e) => {
                notes.push(format!("fixed-point Newton failed at eps = {eps:e}: {e}"));
                None
            }
        };
        let rec = scaling.branch.iter().find(|r| r.eps == eps);
        let mut row = LadderRow {
            eps,
            scaling_converged: rec.is_some(),
            newton_converged: pt.as_ref().is_some_and(|p| p.converged),
            lambda_eps: f64::NAN,
            lambda_eps_im: f64::NAN,
            lambda_ratio_error: f64::NAN,
            position_error: f64::NAN,
            prediction_error: f64::NAN,
            rho_re: f64::NAN,
            rho_im: f64::NAN,
            rho_error: f64::NAN,
            eigvec_angle: f64::NAN,
            uniform_constant: f64::NAN,
            phi_residual: f64::NAN,
            det_defect: f64::NAN,
            newton_iterations: 0,
            newton_residual: f64::NAN,
            stable: false,
        };
        if let Some(r) = rec {
            row.lambda_eps = r.lambda_eps;
            row.lambda_eps_im = r.lambda_eps_im;
            row.lambda_ratio_error = (r.lambda_eps / eps - lambda_star).abs();
            row.eigvec_angle = small_line_angle(&r.eigvec, &assembled.tangent);
            let v = &v0 + &r.w_eps * eps;
            row.phi_residual = problem.maps().phi(&v, eps)?.norm();
        }
        if let Some(p) = &pt {
            row.newton_iterations = p.iterations;
            row.newton_residual = p.residual;
            row.rho_re = p.rho_re;
            row.rho_im = p.rho_im;
            row.rho_error = (p.rho() - Complex64::new(1.0 + eps * lambda_star, 0.0)).norm() / eps;
            row.stable = stability_verdict(p);
            row.prediction_error = (&p.x_init - &v0 - &scaling.w0 * eps).norm() / eps;
            row.uniform_constant = uniform_distance(ops, assembled, cycle, p, cfg.uniform_samples)? / eps;
            if let Some(r) = rec {
                row.position_error = (&p.x_init - &v0 - &r.w_eps * eps).norm() / eps;
                let j = problem.maps().phi_jacobian(&p.x_init, eps)?;
                let n = j.nrows();
                let lam = lambda_epsilon(problem, eps, &r.w_eps)?;
                let shifted = &j - DMatrix::identity(n, n) * lam.re;
                row.det_defect = shifted.determinant().abs() / j.norm().max(1.0).powi(n as i32);
            }
        }
        rows.push(row);
        kept.push(pt);
    }

    let slopes = fit_slopes(&rows);
    let mut report = ConvergenceReport {
        theta0: assembled.theta0,
        lambda_star,
        mprime: assembled.mprime.value,
        eps_ladder: ladder,
        rows,
        slopes,
        checks: Vec::new(),
        passed: false,
        notes,
    };
    report.checks = evaluate(&report, cfg);
    report.passed = report.checks.iter().all(|c| c.passed);
    Ok(LadderStudy {
        scaling,
        points: kept,
        report,
    })
}

/// Slopes over the entries where both solves succeeded, when at least three
/// did.
fn fit_slopes(rows: &[LadderRow]) -> Slopes {
    let ok: Vec<&LadderRow> = rows.iter().filter(|r| r.scaling_converged && r.newton_converged).collect();
    let fit = |f: &dyn Fn(&LadderRow) -> f64| {
        if ok.len() < 3 {
            return None;
        }
        let x: Vec<f64> = ok.iter().map(|r| r.eps).collect();
        let y: Vec<f64> = ok.iter().map(|r| f(r)).collect();
        loglog_slope(&x, &y)
    };
    Slopes {
        lambda_ratio: fit(&|r| r.lambda_ratio_error),
        position: fit(&|r| r.position_error),
        prediction: fit(&|r| r.prediction_error),
        rho: fit(&|r| r.rho_error),
        eigvec_angle: fit(&|r| r.eigvec_angle),
    }
}

fn check(name: &str, passed: bool, detail: String) -> Check {
    Check {
        name: name.into(),
        passed,
        detail,
    }
}

fn evaluate(rep: &ConvergenceReport, cfg: &ValidatorConfig) -> Vec<Check> {
    let ok: Vec<&LadderRow> = rep
        .rows
        .iter()
        .filter(|r| r.scaling_converged && r.newton_converged)
        .collect();
    let mut out = Vec::new();
    out.push(check(
        "all ladder entries solved",
        ok.len() == rep.rows.len(),
        format!("{} of {}", ok.len(), rep.rows.len()),
    ));
    let ratios: Vec<f64> = ok.iter().map(|r| r.lambda_ratio_error).collect();
    let decreasing = ratios.windows(2).all(|w| w[1] < w[0]);
    out.push(check(
        "lambda ratio error strictly decreasing",
        decreasing && ratios.len() >= 2,
        format!("{ratios:?}"),
    ));
    let slope_ok = |s: Option<f64>| s.is_some_and(|s| s >= cfg.slope_min);
    out.push(check(
        "lambda ratio slope",
        slope_ok(rep.slopes.lambda_ratio),
        format!("{:?} (min {})", rep.slopes.lambda_ratio, cfg.slope_min),
    ));
    out.push(check(
        "prediction error slope",
        slope_ok(rep.slopes.prediction),
        format!("{:?} (min {})", rep.slopes.prediction, cfg.slope_min),
    ));
    let worst_agree = ok.iter().map(|r| r.position_error).fold(0.0, f64::max);
    out.push(check(
        "scaled and direct fixed points agree",
        !ok.is_empty() && worst_agree <= cfg.agreement,
        format!("max ||x_eps - v0 - eps w_eps||/eps = {worst_agree:e}"),
    ));
    let worst_iter = ok.iter().map(|r| r.newton_iterations).max().unwrap_or(usize::MAX);
    out.push(check(
        "Newton iterations from the scaled prediction",
        worst_iter <= cfg.max_iterations,
        format!("max {worst_iter}"),
    ));
    let worst_phi = ok.iter().map(|r| r.phi_residual).fold(0.0, f64::max);
    out.push(check(
        "Phi vanishes on the scaled branch",
        !ok.is_empty() && worst_phi <= cfg.phi_residual,
        format!("max {worst_phi:e}"),
    ));
    let angles: Vec<f64> = ok.iter().map(|r| r.eigvec_angle).collect();
    let angle_ok = angles.windows(2).all(|w| w[1] < w[0]) && angles.last().is_some_and(|a| *a < cfg.angle);
    out.push(check("eigenvector aligns with the tangent", angle_ok, format!("{angles:?}")));
    let cs: Vec<f64> = ok.iter().map(|r| r.uniform_constant).collect();
    let (cmin, cmax) = cs
        .iter()
        .fold((f64::INFINITY, 0.0f64), |(a, b), c| (a.min(*c), b.max(*c)));
    out.push(check(
        "uniform convergence constant stable",
        !cs.is_empty() && cmax <= cfg.uniform_spread * cmin,
        format!("C in [{cmin:e}, {cmax:e}]"),
    ));
    let expect_stable = rep.lambda_star < 0.0;
    let verdicts_ok = ok.iter().all(|r| r.stable == expect_stable);
    out.push(check(
        "stability matches the sign of lambda*",
        !ok.is_empty() && verdicts_ok,
        format!("lambda* = {}, expected stable = {expect_stable}", rep.lambda_star),
    ));
    let banded: Vec<&&LadderRow> = ok.iter().filter(|r| r.eps <= cfg.rho_eps_max * (1.0 + 1e-12)).collect();
    let rho_ok = banded
        .iter()
        .all(|r| r.rho_im == 0.0 && r.rho_error <= cfg.rho_band * rep.lambda_star.abs());
    out.push(check(
        "rho_eps real and near 1 + eps lambda*",
        !banded.is_empty() && rho_ok,
        format!(
            "eps <= {}: {:?}",
            cfg.rho_eps_max,
            banded.iter().map(|r| r.rho_error).collect::<Vec<_>>()
        ),
    ));
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cycle::{CycleAnalysis, CycleConfig};
    use crate::ode::IntegratorConfig;
    use crate::vectorfield::builtin_problem;
    use std::f64::consts::PI;

    fn ops(name: &str) -> PoincareOperators {
        PoincareOperators::new(builtin_problem(name).unwrap(), IntegratorConfig::with_tolerance(1e-12)).unwrap()
    }

    fn tangent() -> DVector<f64> {
        DVector::from_vec(vec![0.0, 1.0])
    }

    #[test]
    fn stable_branch_point() {
        let o = ops("hopf-normal-cosforce");
        let eps = 1e-2;
        let start = DVector::from_vec(vec![1.0, 0.0]);
        let bp = newton_fixed_point(&o, eps, &start, &tangent(), &ValidatorConfig::default().fixed_point).unwrap();
        assert!(bp.converged && bp.residual < 1e-11);
        assert!(bp.stable && stability_verdict(&bp));
        assert_eq!(bp.rho_im, 0.0);
        assert!((bp.rho_re - (1.0 - PI * eps)).abs() <= 0.2 * PI * eps, "{}", bp.rho_re);
    }

    #[test]
    fn persisting_cycle_is_near_resonant() {
        let o = ops("hopf-normal-free");
        let start = DVector::from_vec(vec![1.0, 0.0]);
        let r = newton_fixed_point(&o, 0.05, &start, &tangent(), &ValidatorConfig::default().fixed_point);
        assert!(matches!(r, Err(Error::NearResonance { .. })), "{r:?}");
        let o = ops("hopf-normal-cosforce");
        let r = newton_fixed_point(&o, 0.0, &start, &tangent(), &ValidatorConfig::default().fixed_point);
        assert!(matches!(r, Err(Error::NearResonance { .. })), "{r:?}");
    }

    #[test]
    fn unstable_branch_repels() {
        let o = ops("hopf-normal-cosforce");
        let eps = 1e-2;
        let start = DVector::from_vec(vec![-1.0, 0.0]);
        let bp = newton_fixed_point(&o, eps, &start, &tangent(), &ValidatorConfig::default().fixed_point).unwrap();
        assert!(bp.converged && !bp.stable);
        assert!(bp.rho_re > 1.0);
        let run = long_run_oracle(&o, &bp, 1e-3, 20, 7).unwrap();
        assert!(!run.attracted);
    }

    #[test]
    fn slopes_need_three_points() {
        let o = ops("hopf-normal-cosforce");
        let an = CycleAnalysis::run(
            o.vector_field(),
            &DVector::from_vec(vec![1.0, 0.0]),
            &CycleConfig::default(),
            o.integrator(),
        )
        .unwrap();
        let ops = std::sync::Arc::new(o);
        let asm = crate::poincare::assemble_problem(&ops, &an, 0.0, &Default::default()).unwrap();
        let study = ladder_study(
            &ops,
            &an.cycle,
            &asm,
            &[1e-2, 3e-3],
            &ContinuationOptions::default(),
            &ValidatorConfig::default(),
        )
        .unwrap();
        assert!(study.report.slopes.lambda_ratio.is_none());
        assert_eq!(study.report.rows.len(), 2);
        assert!(study.report.rows.iter().all(|r| r.position_error < 1e-6));
    }
}
