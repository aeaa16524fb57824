//! The Malkin bifurcation function
//! `M(θ) = ∫_θ^{θ+T} ⟨g(s − θ, x₀(s), 0), z₀(s)⟩ ds`, its derivative and its
//! zeros.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cycle::{AdjointOrbit, CycleAnalysis, LimitCycle};
use crate::error::{Error, Result};
use crate::linalg::smallest_singular_value;
use crate::poincare::PoincareOperators;
use crate::quadrature::periodic_grid_integral;

/// Largest idempotency defect of `ẋ₀(θ)z₀(θ)ᵀ` accepted before
/// renormalizing.
pub const IDEMPOTENCY_LIMIT: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MalkinConfig {
    /// Uniform phase samples used to bracket zeros. Set from `theta_grid`
    /// in run configurations.
    #[serde(skip)]
    pub grid: usize,
    /// Zeros are refined until `|M| ≤ zero_tolerance`.
    pub zero_tolerance: f64,
    /// `|M′(θ₀)|` below this marks a zero as degenerate.
    pub degeneracy: f64,
    pub max_newton: usize,
    /// Step of the central difference used as an independent `M′` check.
    pub fd_step: f64,
    /// Evaluate `M′` on the whole grid (one augmented flow per sample).
    pub profile_derivative: bool,
}

impl Default for MalkinConfig {
    fn default() -> Self {
        Self {
            grid: 128,
            zero_tolerance: 1e-10,
            degeneracy: 1e-6,
            max_newton: 60,
            fd_step: 1e-4,
            profile_derivative: true,
        }
    }
}

impl MalkinConfig {
    pub fn validate(&self) -> Result<()> {
        if self.grid < 4 {
            return Err(Error::Config(format!("malkin grid needs at least 4 samples, got {}", self.grid)));
        }
        if !(self.zero_tolerance > 0.0 && self.degeneracy > 0.0 && self.fd_step > 0.0) {
            return Err(Error::Config("malkin tolerances must be positive".into()));
        }
        Ok(())
    }
}

/// `M(θ)`.
pub fn malkin_m(cycle: &LimitCycle, adj: &AdjointOrbit, theta: f64) -> f64 {
    malkin_m_with_error(cycle, adj, theta).0
}

/// `M(θ)` with a quadrature error estimate.
pub fn malkin_m_with_error(cycle: &LimitCycle, adj: &AdjointOrbit, theta: f64) -> (f64, f64) {
    let vf = cycle.vector_field();
    periodic_grid_integral(cycle.period(), cycle.grid_size(), theta, |s| {
        let g = vf.g_raw(s - theta, &cycle.state_at(s), 0.0);
        g.dot(&adj.value_at(s))
    })
}

/// `M(θ) = ⟨Q(x₀(θ), 0), z₀(θ)⟩`.
pub fn malkin_m_via_q(q: &DVector<f64>, adj: &AdjointOrbit, theta: f64) -> f64 {
    q.dot(&adj.value_at(theta))
}

/// `M′(θ)` split into its two contributions.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MprimeEval {
    /// `⟨Q′_v ẋ₀ − P″(u, ẋ₀), z₀⟩` with `P′u = (I − Π)Q`.
    pub core: f64,
    /// `M·⟨ẋ₀, ż₀⟩`; zero whenever the pairing derivative vanishes.
    pub correction: f64,
    pub value: f64,
}

/// `M′(θ)` from the `ε = 0` derivatives of the Poincaré map at `x₀(θ)`.
pub fn malkin_mprime(ops: &PoincareOperators, cycle: &LimitCycle, adj: &AdjointOrbit, theta: f64) -> Result<MprimeEval> {
    let proj = projector_at(cycle, adj, theta)?;
    let v = cycle.state_at(theta);
    let d = ops.zero_order(&v)?;
    let n = v.len();
    let pi = &proj.matrix;
    let comp = DMatrix::identity(n, n) - pi;
    let deflated = &comp * &d.p_jacobian * &comp + pi;
    let sigma_min = smallest_singular_value(&deflated);
    if sigma_min <= 1e-12 * deflated.norm().max(1.0) {
        return Err(Error::Resonance { sigma_min });
    }
    let u = deflated
        .lu()
        .solve(&(&comp * &d.q))
        .ok_or(Error::Resonance { sigma_min })?;
    let c = &proj.column;
    let z = &proj.row;
    let core = (&d.q_jacobian * c - d.p_hessian.apply(&u, c)).dot(z);
    let zdot = -(cycle.vector_field().jacobian_f(&v)?.transpose() * z);
    let correction = d.q.dot(z) * c.dot(&zdot);
    Ok(MprimeEval {
        core,
        correction,
        value: core + correction,
    })
}

/// Central difference of [`malkin_m`].
pub fn malkin_mprime_fd(cycle: &LimitCycle, adj: &AdjointOrbit, theta: f64, h: f64) -> f64 {
    (malkin_m(cycle, adj, theta + h) - malkin_m(cycle, adj, theta - h)) / (2.0 * h)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ZeroMethod {
    /// Newton steps used the adjoint-based derivative.
    #[serde(rename = "adjoint-formula")]
    AdjointFormula,
    /// The adjoint-based derivative was unavailable somewhere on the way.
    #[serde(rename = "finite-diff")]
    FiniteDiff,
}

#[derive(Debug, Clone, Serialize)]
pub struct MalkinZero {
    pub theta0: f64,
    #[serde(rename = "M")]
    pub m: f64,
    #[serde(rename = "Mprime")]
    pub mprime: f64,
    #[serde(rename = "Mprime_fd")]
    pub mprime_fd: f64,
    pub method: ZeroMethod,
    pub stable_candidate: bool,
    pub degenerate: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct MalkinProfile {
    pub period: f64,
    pub theta: Vec<f64>,
    pub m: Vec<f64>,
    pub m_error: Vec<f64>,
    /// `NaN` where the derivative was not evaluated.
    pub mprime: Vec<f64>,
    pub zeros: Vec<MalkinZero>,
    pub identically_zero: bool,
    pub diagnostics: Vec<String>,
}

pub const IDENTICALLY_ZERO: &str = "identically zero, method inapplicable";

/// Samples `M` on a uniform grid, brackets sign changes (including the one
/// across `θ = T`) and refines each with safeguarded Newton.
pub fn find_zeros(ops: &PoincareOperators, analysis: &CycleAnalysis, cfg: &MalkinConfig) -> Result<MalkinProfile> {
    cfg.validate()?;
    let cycle = &analysis.cycle;
    let adj = &analysis.adjoint;
    let period = cycle.period();
    let n = cfg.grid;
    let theta: Vec<f64> = (0..n).map(|k| period * k as f64 / n as f64).collect();
    let samples: Vec<(f64, f64)> = theta.par_iter().map(|&t| malkin_m_with_error(cycle, adj, t)).collect();
    let m: Vec<f64> = samples.iter().map(|s| s.0).collect();
    let m_error: Vec<f64> = samples.iter().map(|s| s.1).collect();
    let mprime: Vec<f64> = if cfg.profile_derivative {
        theta
            .par_iter()
            .map(|&t| malkin_mprime(ops, cycle, adj, t).map(|e| e.value).unwrap_or(f64::NAN))
            .collect()
    } else {
        vec![f64::NAN; n]
    };
    let mut profile = MalkinProfile {
        period,
        theta: theta.clone(),
        m: m.clone(),
        m_error,
        mprime,
        zeros: Vec::new(),
        identically_zero: false,
        diagnostics: Vec::new(),
    };
    if m.iter().all(|v| v.abs() <= cfg.zero_tolerance) {
        profile.identically_zero = true;
        profile.diagnostics.push(IDENTICALLY_ZERO.into());
        return Ok(profile);
    }

    let small = |v: f64| v.abs() <= cfg.zero_tolerance;
    let mut seeds: Vec<Seed> = Vec::new();
    for k in 0..n {
        let (a, fa) = (theta[k], m[k]);
        let (b, fb) = if k + 1 < n { (theta[k + 1], m[k + 1]) } else { (period, m[0]) };
        if small(fa) {
            seeds.push(Seed::Point(a));
        } else if !small(fb) && fa.signum() != fb.signum() {
            seeds.push(Seed::Bracket(a, fa, b, fb));
        }
    }
    let step = period / n as f64;
    let refined: Vec<Result<(f64, f64, ZeroMethod)>> = seeds
        .par_iter()
        .map(|s| refine(ops, cycle, adj, cfg, *s, step))
        .collect();
    let mut found: Vec<(f64, f64, ZeroMethod)> = Vec::new();
    for r in refined {
        let (t, mv, method) = r?;
        let t = wrap(t, period);
        let dup = found.iter().any(|(u, _, _)| {
            let d = (t - u).abs();
            d.min(period - d) <= 1e-8 * period.max(1.0)
        });
        if !dup {
            found.push((t, mv, method));
        }
    }
    found.sort_by(|a, b| a.0.total_cmp(&b.0));
    for (t, mv, mut method) in found {
        let fd = malkin_mprime_fd(cycle, adj, t, cfg.fd_step);
        let mp = match malkin_mprime(ops, cycle, adj, t) {
            Ok(e) => e.value,
            Err(_) => {
                method = ZeroMethod::FiniteDiff;
                fd
            }
        };
        let degenerate = mp.abs() < cfg.degeneracy;
        if mv.abs() > cfg.zero_tolerance {
            profile
                .diagnostics
                .push(format!("zero at theta = {t} refined only to |M| = {:e}", mv.abs()));
        }
        profile.zeros.push(MalkinZero {
            theta0: t,
            m: mv,
            mprime: mp,
            mprime_fd: fd,
            method,
            stable_candidate: !degenerate && mp < 0.0,
            degenerate,
        });
    }
    Ok(profile)
}

fn wrap(t: f64, period: f64) -> f64 {
    let w = t.rem_euclid(period);
    if period - w < 1e-12 * period {
        0.0
    } else {
        w
    }
}

#[derive(Debug, Clone, Copy)]
enum Seed {
    Point(f64),
    Bracket(f64, f64, f64, f64),
}

fn refine(
    ops: &PoincareOperators,
    cycle: &LimitCycle,
    adj: &AdjointOrbit,
    cfg: &MalkinConfig,
    seed: Seed,
    step: f64,
) -> Result<(f64, f64, ZeroMethod)> {
    let mut method = ZeroMethod::AdjointFormula;
    let deriv = |t: f64, method: &mut ZeroMethod| match malkin_mprime(ops, cycle, adj, t) {
        Ok(e) => e.value,
        Err(_) => {
            *method = ZeroMethod::FiniteDiff;
            malkin_mprime_fd(cycle, adj, t, cfg.fd_step)
        }
    };
    match seed {
        Seed::Point(t0) => {
            let mut t = t0;
            let mut mv = malkin_m(cycle, adj, t);
            for _ in 0..cfg.max_newton {
                if mv.abs() <= cfg.zero_tolerance {
                    break;
                }
                let d = deriv(t, &mut method);
                if !(d.abs() > 0.0) {
                    break;
                }
                t -= (mv / d).clamp(-0.5 * step, 0.5 * step);
                mv = malkin_m(cycle, adj, t);
            }
            Ok((t, mv, method))
        }
        Seed::Bracket(mut a, mut fa, mut b, fb) => {
            let (mut t, mut mv) = if fa.abs() < fb.abs() { (a, fa) } else { (b, fb) };
            for _ in 0..cfg.max_newton {
                if mv.abs() <= cfg.zero_tolerance || b - a <= 4.0 * f64::EPSILON * b.abs().max(1.0) {
                    break;
                }
                let d = deriv(t, &mut method);
                let mut next = t - mv / d;
                if !(next.is_finite() && next > a && next < b) {
                    next = 0.5 * (a + b);
                }
                t = next;
                mv = malkin_m(cycle, adj, t);
                if mv.signum() == fa.signum() {
                    a = t;
                    fa = mv;
                } else {
                    b = t;
                }
            }
            Ok((t, mv, method))
        }
    }
}

/// `Π(θ) = ẋ₀(θ) z₀(θ)ᵀ` with the row rescaled so that `Π² = Π` holds to
/// roundoff.
#[derive(Debug, Clone)]
pub struct RankOneProjector {
    pub column: DVector<f64>,
    pub row: DVector<f64>,
    pub matrix: DMatrix<f64>,
    /// Idempotency defect before rescaling.
    pub defect: f64,
}

pub fn projector_at(cycle: &LimitCycle, adj: &AdjointOrbit, theta: f64) -> Result<RankOneProjector> {
    let column = cycle.tangent_at(theta);
    let row = adj.value_at(theta);
    let raw = &column * row.transpose();
    let defect = (&raw * &raw - &raw).amax();
    if !(defect <= IDEMPOTENCY_LIMIT) {
        return Err(Error::Normalization {
            defect,
            limit: IDEMPOTENCY_LIMIT,
        });
    }
    let row = row / column.dot(&adj.value_at(theta));
    let matrix = &column * row.transpose();
    Ok(RankOneProjector {
        column,
        row,
        matrix,
        defect,
    })
}
