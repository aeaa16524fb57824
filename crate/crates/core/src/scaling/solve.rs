use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use super::AbstractBifProblem;
use crate::error::{Error, Result};
use crate::linalg::{eigenvalues, eigenvector, null_vector, realify, smallest_singular_value};
use crate::newton::{self, NewtonOptions};

/// Singular-value floor below which the deflated systems count as singular.
const SOLVE_FLOOR: f64 = 1e-12;

/// `w₁ ∈ (I−Π)Rⁿ` with `P′(v₀)w₁ = −(I−Π)Q(v₀, 0)`.
pub fn solve_w1(problem: &AbstractBifProblem) -> Result<DVector<f64>> {
    let op = problem.deflated_operator();
    let sigma_min = smallest_singular_value(&op);
    if sigma_min <= SOLVE_FLOOR * op.norm().max(1.0) {
        return Err(Error::Resonance { sigma_min });
    }
    let rhs = -(problem.complement() * &problem.base().q);
    let w = op.lu().solve(&rhs).ok_or(Error::Resonance { sigma_min })?;
    // Πw = 0 holds exactly in exact arithmetic; strip the rounding.
    Ok(problem.complement() * w)
}

/// `w₂ ∈ ΠRⁿ` solving
/// `ΠP″(v₀)w₁w₂ + ΠQ′_v w₂ = −½ΠP″(v₀)w₁w₁ − ΠQ′_v w₁ − ΠQ′_ε`.
pub fn solve_w2(problem: &AbstractBifProblem, w1: &DVector<f64>) -> Result<DVector<f64>> {
    let b = problem.base();
    let pi = problem.projector();
    let k = b.p_hessian.partial(w1) + &b.q_jacobian;
    let op = pi * &k * pi + problem.complement();
    let sigma_min = smallest_singular_value(&op);
    if sigma_min <= SOLVE_FLOOR * op.norm().max(1.0) {
        return Err(Error::Degeneracy { sigma_min });
    }
    let rhs = -(pi * (b.p_hessian.apply(w1, w1) * 0.5 + &b.q_jacobian * w1 + &b.q_eps));
    let w = op.lu().solve(&rhs).ok_or(Error::Degeneracy { sigma_min })?;
    Ok(pi * w)
}

#[derive(Debug, Clone, Serialize)]
pub struct W0Solution {
    pub w1: DVector<f64>,
    pub w2: DVector<f64>,
    pub w0: DVector<f64>,
    /// `‖Ψ(w₀, 0)‖`.
    pub psi_residual: f64,
    /// Smallest singular value of `Ψ′_w(w₀, 0)`.
    pub jacobian_sigma_min: f64,
}

/// Residual above which [`compute_w0`] rejects its own answer.
pub const W0_VERIFY: f64 = 1e-8;

/// `w₀ = w₁ + w₂`, verified against the closed form of `Ψ(·, 0)`.
pub fn compute_w0(problem: &AbstractBifProblem) -> Result<W0Solution> {
    let w1 = solve_w1(problem)?;
    let w2 = solve_w2(problem, &w1)?;
    let w0 = &w1 + &w2;
    let psi_residual = psi_eval(problem, &w0, 0.0)?.norm();
    if !(psi_residual <= W0_VERIFY) {
        return Err(Error::Audit {
            hypothesis: "Psi(w0, 0) = 0",
            residual: psi_residual,
            threshold: W0_VERIFY,
        });
    }
    let jacobian_sigma_min = smallest_singular_value(&psi_jacobian(problem, &w0, 0.0)?);
    Ok(W0Solution {
        w1,
        w2,
        w0,
        psi_residual,
        jacobian_sigma_min,
    })
}

fn check_eps(eps: f64) -> Result<()> {
    if !(eps >= 0.0) || !eps.is_finite() {
        return Err(Error::Domain(eps));
    }
    Ok(())
}

/// The scaled map.
///
/// For `ε > 0`, `Ψ(w, ε) = (I−Π)Φ(v)/ε + ΠΦ(v)/ε²` at `v = v₀ + εw`; at
/// `ε = 0` its continuous extension
/// `½ΠP″ww + ΠQ′_v w + ΠQ′_ε + (I−Π)P′w + (I−Π)Q`.
pub fn psi_eval(problem: &AbstractBifProblem, w: &DVector<f64>, eps: f64) -> Result<DVector<f64>> {
    check_eps(eps)?;
    let pi = problem.projector();
    let comp = problem.complement();
    if eps == 0.0 {
        let b = problem.base();
        let range = b.p_hessian.apply(w, w) * 0.5 + &b.q_jacobian * w + &b.q_eps;
        let kernel = &b.p_jacobian * w + &b.q;
        return Ok(pi * range + comp * kernel);
    }
    let v = problem.v0() + w * eps;
    let phi = problem.maps().phi(&v, eps)?;
    Ok(comp * &phi / eps + pi * &phi / (eps * eps))
}

/// `Ψ′_w(w, ε)`: `ΠP″w + ΠQ′_v + (I−Π)P′` at `ε = 0`, and
/// `(I−Π)Φ′_v + ΠΦ′_v/ε` at `v₀ + εw` otherwise.
pub fn psi_jacobian(problem: &AbstractBifProblem, w: &DVector<f64>, eps: f64) -> Result<DMatrix<f64>> {
    check_eps(eps)?;
    let pi = problem.projector();
    let comp = problem.complement();
    if eps == 0.0 {
        let b = problem.base();
        return Ok(pi * (b.p_hessian.partial(w) + &b.q_jacobian) + comp * &b.p_jacobian);
    }
    let v = problem.v0() + w * eps;
    let j = problem.maps().phi_jacobian(&v, eps)?;
    Ok(comp * &j + pi * &j / eps)
}

/// `⟨P″(v₀)w₀c + Q′_v(v₀, 0)c, z⟩` for `Π = c zᵀ`, `⟨c, z⟩ = 1`.
pub fn lambda_star(
    problem: &AbstractBifProblem,
    tangent: &DVector<f64>,
    left: &DVector<f64>,
    w0: &DVector<f64>,
) -> Result<f64> {
    let rank = super::numerical_rank(problem.projector());
    if rank != 1 {
        return Err(Error::UnsupportedMultiplicity(rank));
    }
    let b = problem.base();
    let image = b.p_hessian.apply(w0, tangent) + &b.q_jacobian * tangent;
    Ok(image.dot(left) / tangent.dot(left))
}

/// Eigenvalue of `Φ′_v(v₀ + εw, ε)` closest to zero.
#[derive(Debug, Clone, Serialize)]
pub struct LambdaEpsilon {
    pub re: f64,
    pub im: f64,
    /// Set when the selected eigenvalue belongs to a complex pair.
    pub complex: bool,
    /// Unit eigenvector (real part of the rotated complex one if complex).
    pub eigvec: DVector<f64>,
}

pub fn lambda_epsilon(problem: &AbstractBifProblem, eps: f64, w: &DVector<f64>) -> Result<LambdaEpsilon> {
    check_eps(eps)?;
    let v = problem.v0() + w * eps;
    let j = problem.maps().phi_jacobian(&v, eps)?;
    let spectrum = eigenvalues(&j);
    let min_mod = spectrum.iter().map(|m| m.norm()).fold(f64::INFINITY, f64::min);
    let left = problem.rank_one().map(|f| f.row.clone());
    let candidates: Vec<Complex64> = spectrum
        .iter()
        .copied()
        .filter(|m| m.norm() <= min_mod * (1.0 + 1e-6) + 1e-300)
        .collect();
    let vec_of = |mu: Complex64| -> DVector<f64> {
        if mu.im.abs() <= 1e-12 * mu.norm().max(1e-300) || mu.im == 0.0 {
            let shifted = &j - DMatrix::identity(j.nrows(), j.ncols()) * mu.re;
            null_vector(&shifted).0
        } else {
            realify(&eigenvector(&j, mu))
        }
    };
    let (mu, vec) = candidates
        .into_iter()
        .map(|mu| (mu, vec_of(mu)))
        .max_by(|a, b| {
            let score = |v: &DVector<f64>| left.as_ref().map_or(0.0, |z| v.dot(z).abs());
            score(&a.1).total_cmp(&score(&b.1))
        })
        .expect("non-empty spectrum");
    let complex = mu.im != 0.0 && mu.im.abs() > 1e-12 * mu.norm();
    Ok(LambdaEpsilon {
        re: mu.re,
        im: mu.im,
        complex,
        eigvec: vec,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ContinuationOptions {
    pub newton: NewtonOptions,
    /// Estimated absolute noise in `Φ`. Because `Ψ` divides the range part
    /// of `Φ` by `ε²`, a residual `phi_noise/ε²` is the best attainable and
    /// is accepted once Newton stops making progress.
    pub phi_noise: f64,
}

impl Default for ContinuationOptions {
    fn default() -> Self {
        Self {
            newton: NewtonOptions::default(),
            phi_noise: 1e-13,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct BranchRecord {
    pub eps: f64,
    pub w_eps: DVector<f64>,
    pub lambda_eps: f64,
    pub lambda_eps_im: f64,
    pub complex_flag: bool,
    pub eigvec: DVector<f64>,
    pub psi_residual: f64,
    /// Residual accepted for this `ε` (noise floor included).
    pub psi_tolerance: f64,
    pub iterations: usize,
    pub at_noise_floor: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct ScalingSolution {
    pub w1: DVector<f64>,
    pub w2: DVector<f64>,
    pub w0: DVector<f64>,
    pub lambda_star: Option<f64>,
    pub psi0_residual: f64,
    pub jacobian_sigma_min: f64,
    /// Ordered by increasing `ε`.
    pub branch: Vec<BranchRecord>,
    /// Set when Newton failed at some `ε`; later ladder entries are dropped.
    pub truncated: Option<String>,
}

/// Solves `Ψ(·, ε) = 0` along the ladder, from the smallest `ε` upward,
/// each solve warm-started from the previous one (from `w₀` first).
pub fn continue_branch(
    problem: &AbstractBifProblem,
    eps_ladder: &[f64],
    opts: &ContinuationOptions,
) -> Result<ScalingSolution> {
    for e in eps_ladder {
        if !(*e > 0.0 && e.is_finite()) {
            return Err(Error::Domain(*e));
        }
    }
    let w0sol = compute_w0(problem)?;
    let lambda_star = problem
        .rank_one()
        .map(|f| lambda_star(problem, &f.column, &f.row, &w0sol.w0))
        .transpose()?;
    let mut ladder = eps_ladder.to_vec();
    ladder.sort_by(f64::total_cmp);
    let mut branch = Vec::with_capacity(ladder.len());
    let mut truncated = None;
    let mut start = w0sol.w0.clone();
    for eps in ladder {
        let mut nopts = opts.newton;
        nopts.noise_tolerance = opts.newton.tolerance.max(opts.phi_noise / (eps * eps));
        let outcome = newton::solve(
            |w| psi_eval(problem, w, eps),
            |w| psi_jacobian(problem, w, eps),
            &start,
            &nopts,
        );
        let outcome = match outcome {
            Ok(o) if o.converged => o,
            Ok(o) => {
                truncated = Some(format!(
                    "Newton on Psi failed at eps = {eps:e} after {} iterations (residual {:e}); validity radius exceeded",
                    o.iterations, o.residual
                ));
                break;
            }
            Err(e) => {
                truncated = Some(format!("Newton on Psi failed at eps = {eps:e}: {e}"));
                break;
            }
        };
        let lam = lambda_epsilon(problem, eps, &outcome.x)?;
        start = outcome.x.clone();
        branch.push(BranchRecord {
            eps,
            w_eps: outcome.x,
            lambda_eps: lam.re,
            lambda_eps_im: lam.im,
            complex_flag: lam.complex,
            eigvec: lam.eigvec,
            psi_residual: outcome.residual,
            psi_tolerance: nopts.noise_tolerance,
            iterations: outcome.iterations,
            at_noise_floor: outcome.at_noise_floor,
        });
    }
    Ok(ScalingSolution {
        w1: w0sol.w1,
        w2: w0sol.w2,
        w0: w0sol.w0,
        lambda_star,
        psi0_residual: w0sol.psi_residual,
        jacobian_sigma_min: w0sol.jacobian_sigma_min,
        branch,
        truncated,
    })
}
