//! Damped Newton iteration shared by the scaled solve and the fixed-point
//! validator.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::smallest_singular_value;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NewtonOptions {
    /// Residual norm at which the iteration stops.
    pub tolerance: f64,
    /// Residual norm accepted when the iteration can no longer make progress
    /// (evaluation noise floor). Never below `tolerance`.
    pub noise_tolerance: f64,
    pub max_iter: usize,
    /// Armijo sufficient-decrease constant.
    pub armijo: f64,
    /// Smallest damping factor tried before giving up on a direction.
    pub min_step: f64,
    /// Jacobians with `σ_min ≤ singular_floor·max(1, ‖J‖)` abort the solve.
    pub singular_floor: f64,
    /// Extra full steps taken after convergence while they keep lowering
    /// the residual.
    pub polish: usize,
}

impl Default for NewtonOptions {
    fn default() -> Self {
        Self {
            tolerance: 1e-10,
            noise_tolerance: 1e-10,
            max_iter: 25,
            armijo: 1e-4,
            min_step: 1.0 / 1024.0,
            singular_floor: 1e-13,
            polish: 0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct NewtonOutcome {
    pub x: DVector<f64>,
    pub residual: f64,
    /// Newton steps taken until the stopping rule fired (polish excluded).
    pub iterations: usize,
    pub converged: bool,
    /// Converged only in the noise-floor sense.
    pub at_noise_floor: bool,
    pub history: Vec<f64>,
    pub polish_steps: usize,
}

/// Solves `F(x) = 0` from `x0`. Singular Jacobians become
/// [`Error::NearResonance`]; running out of iterations is reported through
/// `converged = false` with the best iterate.
pub fn solve<F, J>(mut f: F, mut jac: J, x0: &DVector<f64>, opts: &NewtonOptions) -> Result<NewtonOutcome>
where
    F: FnMut(&DVector<f64>) -> Result<DVector<f64>>,
    J: FnMut(&DVector<f64>) -> Result<DMatrix<f64>>,
{
    let noise_tol = opts.noise_tolerance.max(opts.tolerance);
    let mut x = x0.clone();
    let mut fx = f(&x)?;
    let mut r = fx.norm();
    let mut history = vec![r];
    let mut best = (x.clone(), r);
    let mut iterations = 0;
    let mut converged = r <= opts.tolerance;
    let mut at_noise_floor = false;
    while !converged && iterations < opts.max_iter {
        let j = jac(&x)?;
        let sigma_min = smallest_singular_value(&j);
        if sigma_min <= opts.singular_floor * j.norm().max(1.0) {
            return Err(Error::NearResonance { sigma_min });
        }
        let step = j
            .lu()
            .solve(&(-&fx))
            .ok_or(Error::NearResonance { sigma_min })?;
        iterations += 1;
        let mut lambda = 1.0;
        let mut accepted = None;
        while lambda >= opts.min_step {
            let trial = &x + &step * lambda;
            let ft = f(&trial)?;
            let rt = ft.norm();
            if rt.is_finite() && rt <= (1.0 - opts.armijo * lambda) * r {
                accepted = Some((trial, ft, rt));
                break;
            }
            lambda *= 0.5;
        }
        match accepted {
            Some((xt, ft, rt)) => {
                x = xt;
                fx = ft;
                r = rt;
                history.push(r);
                if r < best.1 {
                    best = (x.clone(), r);
                }
                if r <= opts.tolerance {
                    converged = true;
                } else if step.norm() * lambda <= 4.0 * f64::EPSILON * x.norm().max(1.0) && r <= noise_tol {
                    converged = true;
                    at_noise_floor = true;
                }
            }
            None => {
                if r <= noise_tol {
                    converged = true;
                    at_noise_floor = true;
                }
                break;
            }
        }
    }
    let mut polish_steps = 0;
    if converged {
        for _ in 0..opts.polish {
            let j = jac(&x)?;
            let Some(step) = j.lu().solve(&(-&fx)) else {
                break;
            };
            let trial = &x + &step;
            let ft = f(&trial)?;
            let rt = ft.norm();
            if !(rt < r) {
                break;
            }
            x = trial;
            fx = ft;
            r = rt;
            polish_steps += 1;
        }
    } else {
        x = best.0;
        r = best.1;
    }
    Ok(NewtonOutcome {
        x,
        residual: r,
        iterations,
        converged,
        at_noise_floor,
        history,
        polish_steps,
    })
}
