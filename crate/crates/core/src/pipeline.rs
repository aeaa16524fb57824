//! Stage orchestration and report files.

use std::fs;
use std::path::PathBuf;
use std::sync::Arc;

use nalgebra::DVector;
use serde::Serialize;
use serde_json::json;

use crate::config::{RunConfig, Stage};
use crate::cycle::CycleAnalysis;
use crate::error::{Error, Result};
use crate::malkin::{find_zeros, MalkinProfile};
use crate::poincare::{inspect_problem, AssembledProblem, PoincareOperators};
use crate::scaling::{continue_branch, ScalingSolution};
use crate::validator::{ladder_study, long_run_oracle, newton_fixed_point, Check, ConvergenceReport, LongRun};
use crate::vectorfield::ProblemRegistry;

/// What a run produced and whether its acceptance checks passed.
#[derive(Debug, Clone, Serialize)]
pub struct RunOutcome {
    pub checks: Vec<Check>,
    pub warnings: Vec<String>,
    pub files: Vec<PathBuf>,
    pub passed: bool,
}

/// Per-zero results of the scaling and validation stages.
#[derive(Debug, Clone)]
pub struct ZeroRun {
    pub assembled: AssembledProblem,
    pub scaling: Option<ScalingSolution>,
    pub report: Option<ConvergenceReport>,
    pub long_run: Option<LongRun>,
    pub long_run_stable: Option<bool>,
}

/// Formats with 17 significant digits.
pub fn fmt17(x: f64) -> String {
    if x.is_finite() {
        format!("{x:.16e}")
    } else {
        format!("{x}")
    }
}

fn stage_err(stage: Stage) -> impl Fn(Error) -> Error {
    move |e| match e {
        Error::Config(_) | Error::Io(_) => e,
        other => Error::Stage {
            stage: stage.name().into(),
            message: other.to_string(),
        },
    }
}

fn check(name: impl Into<String>, passed: bool, detail: impl Into<String>) -> Check {
    Check {
        name: name.into(),
        passed,
        detail: detail.into(),
    }
}

struct Writer {
    dir: PathBuf,
    files: Vec<PathBuf>,
}

impl Writer {
    fn path(&mut self, name: &str) -> PathBuf {
        let p = self.dir.join(name);
        self.files.push(p.clone());
        p
    }

    fn json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<()> {
        let p = self.path(name);
        let mut text = serde_json::to_string_pretty(value)?;
        text.push('\n');
        fs::write(p, text)?;
        Ok(())
    }

    fn csv(&mut self, name: &str, header: &[String], rows: &[Vec<String>]) -> Result<()> {
        let p = self.path(name);
        let mut w = csv::Writer::from_path(p)?;
        w.write_record(header)?;
        for r in rows {
            w.write_record(r)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Runs every stage up to the deepest requested one and writes the files
/// of the requested stages plus `run_manifest.json`.
pub fn run(cfg: &RunConfig, registry: &ProblemRegistry) -> Result<RunOutcome> {
    cfg.validate()?;
    let vf = cfg.build_problem(registry)?;
    let deepest = cfg.deepest_stage().expect("validated non-empty stages");
    fs::create_dir_all(&cfg.outputs)?;
    let mut out = Writer {
        dir: cfg.outputs.clone(),
        files: Vec::new(),
    };
    let mut checks = Vec::new();
    let mut warnings = Vec::new();

    let guess = DVector::from_vec(cfg.guess.clone());
    let analysis = CycleAnalysis::run(&vf, &guess, &cfg.cycle, &cfg.integrator).map_err(stage_err(Stage::Cycle))?;
    checks.push(check(
        "cycle: simple and orbitally stable",
        analysis.hypothesis.holds,
        format!(
            "multipliers {:?}; {}",
            analysis.hypothesis.multipliers,
            analysis.hypothesis.diagnostics.join("; ")
        ),
    ));
    if cfg.wants(Stage::Cycle) {
        write_cycle(&mut out, &analysis)?;
    }

    let mut zero_runs = Vec::new();
    if deepest >= Stage::Malkin {
        let ops = Arc::new(PoincareOperators::new(vf.clone(), cfg.integrator)?);
        let profile = find_zeros(&ops, &analysis, &cfg.malkin_config()).map_err(stage_err(Stage::Malkin))?;
        let simple = profile.zeros.iter().filter(|z| !z.degenerate).count();
        checks.push(check(
            "malkin: at least one simple zero",
            simple > 0,
            if profile.identically_zero {
                profile.diagnostics.join("; ")
            } else {
                format!("{} zeros, {simple} simple", profile.zeros.len())
            },
        ));
        warnings.extend(profile.diagnostics.iter().cloned());
        if cfg.wants(Stage::Malkin) {
            write_malkin(&mut out, &profile)?;
        }

        if deepest >= Stage::Scaling {
            let mut audit = cfg.audit;
            audit.seed = cfg.seed;
            for z in profile.zeros.iter().filter(|z| !z.degenerate) {
                let assembled =
                    inspect_problem(&ops, &analysis, z.theta0, &audit).map_err(stage_err(Stage::Scaling))?;
                let tag = format!("theta0 = {:.6}", z.theta0);
                let audit_detail = match assembled.audit.first_failure() {
                    Some(f) => format!("{tag}: `{}` residual {:e} (threshold {:e})", f.hypothesis, f.residual, f.threshold),
                    None => format!("{tag}: all residuals within thresholds"),
                };
                checks.push(check(format!("scaling: audit at {tag}"), assembled.audit.passed(), audit_detail));
                warnings.extend(assembled.problem.warnings.iter().map(|w| format!("{tag}: {w}")));
                zero_runs.push(ZeroRun {
                    assembled,
                    scaling: None,
                    report: None,
                    long_run: None,
                    long_run_stable: None,
                });
            }
            for zr in zero_runs.iter_mut().filter(|zr| zr.assembled.audit.passed()) {
                let tag = format!("theta0 = {:.6}", zr.assembled.theta0);
                if deepest >= Stage::Validate {
                    let study = ladder_study(
                        &ops,
                        &analysis.cycle,
                        &zr.assembled,
                        &cfg.eps_ladder,
                        &cfg.continuation,
                        &cfg.validator,
                    )
                    .map_err(stage_err(Stage::Validate))?;
                    for c in &study.report.checks {
                        checks.push(check(format!("validate: {} at {tag}", c.name), c.passed, c.detail.clone()));
                    }
                    if cfg.long_run.enabled {
                        let lr = &cfg.long_run;
                        let start = zr.assembled.problem.v0() + &study.scaling.w0 * lr.eps;
                        let bp = newton_fixed_point(&ops, lr.eps, &start, &zr.assembled.tangent, &cfg.validator.fixed_point)
                            .map_err(stage_err(Stage::Validate))?;
                        let run = long_run_oracle(&ops, &bp, lr.perturbation, lr.periods, cfg.seed)
                            .map_err(stage_err(Stage::Validate))?;
                        checks.push(check(
                            format!("validate: {}-period simulation at {tag}", lr.periods),
                            run.attracted == bp.stable,
                            format!(
                                "distance {:e} after one period -> {:e}, stable verdict {}",
                                run.distances[1.min(lr.periods)],
                                run.distances.last().copied().unwrap_or(f64::NAN),
                                bp.stable
                            ),
                        ));
                        zr.long_run_stable = Some(bp.stable);
                        zr.long_run = Some(run);
                    }
                    zr.report = Some(study.report);
                    zr.scaling = Some(study.scaling);
                } else {
                    let sol = continue_branch(&zr.assembled.problem, &cfg.eps_ladder, &cfg.continuation)
                        .map_err(stage_err(Stage::Scaling))?;
                    zr.scaling = Some(sol);
                }
                let sol = zr.scaling.as_ref().expect("set above");
                checks.push(check(
                    format!("scaling: branch complete at {tag}"),
                    sol.truncated.is_none(),
                    sol.truncated.clone().unwrap_or_else(|| format!("{} entries", sol.branch.len())),
                ));
                let lam = sol.lambda_star.unwrap_or(f64::NAN);
                let mp = zr.assembled.mprime.value;
                checks.push(check(
                    format!("scaling: lambda* equals M'(theta0) at {tag}"),
                    (lam - mp).abs() <= 1e-4 * mp.abs().max(1.0),
                    format!("lambda* = {lam}, M' = {mp}"),
                ));
            }
            if cfg.wants(Stage::Scaling) {
                write_scaling(&mut out, &zero_runs)?;
            }
            if cfg.wants(Stage::Validate) {
                write_validation(&mut out, &zero_runs)?;
            }
        }
    }

    if cfg.strict {
        checks.push(check("strict: no accuracy warnings", warnings.is_empty(), warnings.join("; ")));
    }
    let passed = checks.iter().all(|c| c.passed);
    let manifest_path = out.dir.join("run_manifest.json");
    let mut files = out.files.clone();
    files.push(manifest_path);
    let manifest = json!({
        "tool": env!("CARGO_PKG_NAME"),
        "version": env!("CARGO_PKG_VERSION"),
        "problem": vf.name(),
        "stages": cfg.stages,
        "seed": cfg.seed,
        "tolerance_signature": cfg.tolerance_signature(),
        "config": cfg,
        "files": files.iter().map(|p| p.file_name().map(|n| n.to_string_lossy().into_owned())).collect::<Vec<_>>(),
        "checks": checks,
        "warnings": warnings,
        "passed": passed,
    });
    out.json("run_manifest.json", &manifest)?;
    Ok(RunOutcome {
        checks,
        warnings,
        files: out.files,
        passed,
    })
}

fn write_cycle(out: &mut Writer, an: &CycleAnalysis) -> Result<()> {
    let c = &an.cycle;
    out.json(
        "cycle.json",
        &json!({
            "period": c.period(),
            "base_point": c.base_point().as_slice(),
            "closure_defect": c.closure_defect(),
            "shooting_residuals": c.residual_history,
            "multipliers": an.monodromy.multipliers.iter().map(|m| [m.re, m.im]).collect::<Vec<_>>(),
            "hypothesis": an.hypothesis,
            "perron_deviation": an.perron_deviation,
            "adjoint_normalization": an.adjoint.normalization,
        }),
    )
}

fn write_malkin(out: &mut Writer, p: &MalkinProfile) -> Result<()> {
    let rows: Vec<Vec<String>> = (0..p.theta.len())
        .map(|k| vec![fmt17(p.theta[k]), fmt17(p.m[k]), fmt17(p.m_error[k]), fmt17(p.mprime[k])])
        .collect();
    let header: Vec<String> = ["theta", "M", "M_error", "Mprime"].iter().map(|s| s.to_string()).collect();
    out.csv("malkin_profile.csv", &header, &rows)?;
    out.json(
        "zeros.json",
        &json!({
            "period": p.period,
            "identically_zero": p.identically_zero,
            "diagnostics": p.diagnostics,
            "zeros": p.zeros,
        }),
    )
}

fn write_scaling(out: &mut Writer, runs: &[ZeroRun]) -> Result<()> {
    let n = runs.first().map_or(0, |r| r.assembled.problem.dim());
    let mut header = vec!["theta0".to_string(), "eps".to_string()];
    header.extend((0..n).map(|i| format!("w_eps_{i}")));
    header.extend(
        [
            "lambda_eps",
            "lambda_eps_im",
            "complex_flag",
            "psi_residual",
            "psi_tolerance",
            "iterations",
            "at_noise_floor",
        ]
        .iter()
        .map(|s| s.to_string()),
    );
    let mut rows = Vec::new();
    let mut summary = Vec::new();
    for zr in runs {
        let a = &zr.assembled;
        let mut entry = json!({
            "theta0": a.theta0,
            "v0": a.problem.v0().as_slice(),
            "tangent": a.tangent.as_slice(),
            "left": a.left.as_slice(),
            "audit": a.audit,
            "mprime": a.mprime,
            "q_checks": {
                "q_jacobian_gap": a.q_checks.q_jacobian_gap,
                "q_eps_gap": a.q_checks.q_eps_gap,
            },
            "warnings": a.problem.warnings,
        });
        if let Some(sol) = &zr.scaling {
            entry["w1"] = json!(sol.w1.as_slice());
            entry["w2"] = json!(sol.w2.as_slice());
            entry["w0"] = json!(sol.w0.as_slice());
            entry["lambda_star"] = json!(sol.lambda_star);
            entry["psi0_residual"] = json!(sol.psi0_residual);
            entry["jacobian_sigma_min"] = json!(sol.jacobian_sigma_min);
            entry["truncated"] = json!(sol.truncated);
            for b in sol.branch.iter().rev() {
                let mut r = vec![fmt17(a.theta0), fmt17(b.eps)];
                r.extend(b.w_eps.iter().map(|x| fmt17(*x)));
                r.extend([
                    fmt17(b.lambda_eps),
                    fmt17(b.lambda_eps_im),
                    b.complex_flag.to_string(),
                    fmt17(b.psi_residual),
                    fmt17(b.psi_tolerance),
                    b.iterations.to_string(),
                    b.at_noise_floor.to_string(),
                ]);
                rows.push(r);
            }
        }
        summary.push(entry);
    }
    out.csv("scaling_branch.csv", &header, &rows)?;
    out.json("scaling_summary.json", &json!({ "zeros": summary }))
}

fn write_validation(out: &mut Writer, runs: &[ZeroRun]) -> Result<()> {
    let header: Vec<String> = [
        "theta0",
        "eps",
        "scaling_converged",
        "newton_converged",
        "lambda_eps",
        "lambda_eps_im",
        "lambda_ratio_error",
        "position_error",
        "prediction_error",
        "rho_re",
        "rho_im",
        "rho_error",
        "eigvec_angle",
        "uniform_constant",
        "phi_residual",
        "det_defect",
        "newton_iterations",
        "newton_residual",
        "stable",
    ]
    .iter()
    .map(|s| s.to_string())
    .collect();
    let mut rows = Vec::new();
    let mut reports = Vec::new();
    for zr in runs {
        let Some(rep) = &zr.report else { continue };
        for r in &rep.rows {
            rows.push(vec![
                fmt17(rep.theta0),
                fmt17(r.eps),
                r.scaling_converged.to_string(),
                r.newton_converged.to_string(),
                fmt17(r.lambda_eps),
                fmt17(r.lambda_eps_im),
                fmt17(r.lambda_ratio_error),
                fmt17(r.position_error),
                fmt17(r.prediction_error),
                fmt17(r.rho_re),
                fmt17(r.rho_im),
                fmt17(r.rho_error),
                fmt17(r.eigvec_angle),
                fmt17(r.uniform_constant),
                fmt17(r.phi_residual),
                fmt17(r.det_defect),
                r.newton_iterations.to_string(),
                fmt17(r.newton_residual),
                r.stable.to_string(),
            ]);
        }
        reports.push(json!({
            "report": rep,
            "long_run": zr.long_run,
            "long_run_stable_verdict": zr.long_run_stable,
        }));
    }
    out.csv("convergence_report.csv", &header, &rows)?;
    out.json("convergence_report.json", &json!({ "zeros": reports }))
}

/// Exit status for a run result: 0 when every check passed, 1 for failed
/// checks or numerical failures, 2 for configuration errors.
pub fn exit_code(result: &Result<RunOutcome>) -> i32 {
    match result {
        Ok(o) if o.passed => 0,
        Ok(_) => 1,
        Err(Error::Config(_)) | Err(Error::UnknownProblem { .. }) => 2,
        Err(_) => 1,
    }
}
