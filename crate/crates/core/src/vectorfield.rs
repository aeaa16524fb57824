//! Periodically perturbed autonomous systems `ẋ = f(x) + ε g(t, x, ε)`.
//!
//! A [`VectorFieldPair`] bundles the autonomous field `f`, the `T`-periodic
//! perturbation `g` and optional analytic derivatives. Anything that is not
//! supplied is recovered by central finite differences.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::Bilinear;

pub type StateFn = Arc<dyn Fn(&DVector<f64>) -> DVector<f64> + Send + Sync>;
pub type ForcingFn = Arc<dyn Fn(f64, &DVector<f64>, f64) -> DVector<f64> + Send + Sync>;
pub type JacobianFn = Arc<dyn Fn(&DVector<f64>) -> DMatrix<f64> + Send + Sync>;
pub type HessianFn = Arc<dyn Fn(&DVector<f64>) -> Bilinear + Send + Sync>;
pub type ForcingJacobianFn = Arc<dyn Fn(f64, &DVector<f64>, f64) -> DMatrix<f64> + Send + Sync>;

/// Step for first-derivative central differences: `cbrt(u)·max(1, ‖x‖)`.
pub fn first_derivative_step(x: &DVector<f64>) -> f64 {
    f64::EPSILON.cbrt() * x.norm().max(1.0)
}

/// Step for second-derivative central differences: `u^{1/4}·max(1, ‖x‖)`.
pub fn second_derivative_step(x: &DVector<f64>) -> f64 {
    f64::EPSILON.sqrt().sqrt() * x.norm().max(1.0)
}

/// The ODE data: autonomous field, periodic perturbation, period and
/// optional derivative oracles.
#[derive(Clone)]
pub struct VectorFieldPair {
    name: String,
    dim: usize,
    period: f64,
    f: StateFn,
    g: ForcingFn,
    jac_f: Option<JacobianFn>,
    hess_f: Option<HessianFn>,
    jac_g_x: Option<ForcingJacobianFn>,
}

impl fmt::Debug for VectorFieldPair {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("VectorFieldPair")
            .field("name", &self.name)
            .field("dim", &self.dim)
            .field("period", &self.period)
            .field("jac_f", &self.jac_f.is_some())
            .field("hess_f", &self.hess_f.is_some())
            .field("jac_g_x", &self.jac_g_x.is_some())
            .finish()
    }
}

impl VectorFieldPair {
    pub fn new(
        name: impl Into<String>,
        dim: usize,
        period: f64,
        f: impl Fn(&DVector<f64>) -> DVector<f64> + Send + Sync + 'static,
        g: impl Fn(f64, &DVector<f64>, f64) -> DVector<f64> + Send + Sync + 'static,
    ) -> Result<Self> {
        if dim == 0 {
            return Err(Error::Config("state dimension must be positive".into()));
        }
        if !(period.is_finite() && period > 0.0) {
            return Err(Error::Config(format!(
                "period must be a positive finite number, got {period}"
            )));
        }
        Ok(Self {
            name: name.into(),
            dim,
            period,
            f: Arc::new(f),
            g: Arc::new(g),
            jac_f: None,
            hess_f: None,
            jac_g_x: None,
        })
    }

    pub fn with_jacobian(
        mut self,
        jac: impl Fn(&DVector<f64>) -> DMatrix<f64> + Send + Sync + 'static,
    ) -> Self {
        self.jac_f = Some(Arc::new(jac));
        self
    }

    pub fn with_hessian(
        mut self,
        hess: impl Fn(&DVector<f64>) -> Bilinear + Send + Sync + 'static,
    ) -> Self {
        self.hess_f = Some(Arc::new(hess));
        self
    }

    pub fn with_forcing_jacobian(
        mut self,
        jac: impl Fn(f64, &DVector<f64>, f64) -> DMatrix<f64> + Send + Sync + 'static,
    ) -> Self {
        self.jac_g_x = Some(Arc::new(jac));
        self
    }

    /// Replaces the perturbation, dropping its analytic Jacobian.
    pub fn with_forcing(
        mut self,
        g: impl Fn(f64, &DVector<f64>, f64) -> DVector<f64> + Send + Sync + 'static,
    ) -> Self {
        self.g = Arc::new(g);
        self.jac_g_x = None;
        self
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn period(&self) -> f64 {
        self.period
    }

    pub fn has_analytic_jacobian(&self) -> bool {
        self.jac_f.is_some()
    }

    pub fn has_analytic_hessian(&self) -> bool {
        self.hess_f.is_some()
    }

    fn check_dim(&self, x: &DVector<f64>, context: &'static str) -> Result<()> {
        if x.len() != self.dim {
            return Err(Error::Dimension {
                context,
                expected: self.dim,
                got: x.len(),
            });
        }
        Ok(())
    }

    pub fn eval_f(&self, x: &DVector<f64>) -> Result<DVector<f64>> {
        self.check_dim(x, "eval_f")?;
        let y = (self.f)(x);
        if y.len() != self.dim {
            return Err(Error::Dimension {
                context: "f output",
                expected: self.dim,
                got: y.len(),
            });
        }
        Ok(y)
    }

    pub fn eval_g(&self, t: f64, x: &DVector<f64>, eps: f64) -> Result<DVector<f64>> {
        self.check_dim(x, "eval_g")?;
        let y = (self.g)(t, x, eps);
        if y.len() != self.dim {
            return Err(Error::Dimension {
                context: "g output",
                expected: self.dim,
                got: y.len(),
            });
        }
        Ok(y)
    }

    // Unchecked evaluators for the integrator hot path.
    pub(crate) fn f_raw(&self, x: &DVector<f64>) -> DVector<f64> {
        (self.f)(x)
    }

    pub(crate) fn g_raw(&self, t: f64, x: &DVector<f64>, eps: f64) -> DVector<f64> {
        (self.g)(t, x, eps)
    }

    /// `f(x) + ε g(t, x, ε)`.
    pub fn rhs(&self, t: f64, x: &DVector<f64>, eps: f64) -> DVector<f64> {
        let mut y = (self.f)(x);
        if eps != 0.0 {
            y += (self.g)(t, x, eps) * eps;
        }
        y
    }

    pub fn jacobian_f(&self, x: &DVector<f64>) -> Result<DMatrix<f64>> {
        self.check_dim(x, "jacobian_f")?;
        let j = match &self.jac_f {
            Some(jac) => jac(x),
            None => self.fd_jacobian_f(x),
        };
        finite_matrix(&j, "jacobian of f")?;
        Ok(j)
    }

    /// Central-difference Jacobian of `f`, regardless of any analytic oracle.
    pub fn fd_jacobian_f(&self, x: &DVector<f64>) -> DMatrix<f64> {
        fd_jacobian(|y| (self.f)(y), x)
    }

    pub fn hessian_f(&self, x: &DVector<f64>) -> Result<Bilinear> {
        self.check_dim(x, "hessian_f")?;
        let h = match &self.hess_f {
            Some(hess) => hess(x),
            None => self.fd_hessian_f(x),
        };
        if !h.amax().is_finite() {
            return Err(Error::Evaluation {
                what: "hessian of f",
                index: 0,
            });
        }
        Ok(h)
    }

    /// Finite-difference Hessian of `f`. Differentiates the analytic Jacobian
    /// when one is available, otherwise takes second differences of `f`.
    pub fn fd_hessian_f(&self, x: &DVector<f64>) -> Bilinear {
        match &self.jac_f {
            Some(jac) => fd_hessian_from_jacobian(|y| jac(y), x),
            None => fd_hessian(|y| (self.f)(y), x),
        }
    }

    pub fn jacobian_g_x(&self, t: f64, x: &DVector<f64>, eps: f64) -> Result<DMatrix<f64>> {
        self.check_dim(x, "jacobian_g_x")?;
        let j = match &self.jac_g_x {
            Some(jac) => jac(t, x, eps),
            None => self.fd_jacobian_g_x(t, x, eps),
        };
        finite_matrix(&j, "jacobian of g")?;
        Ok(j)
    }

    pub fn fd_jacobian_g_x(&self, t: f64, x: &DVector<f64>, eps: f64) -> DMatrix<f64> {
        fd_jacobian(|y| (self.g)(t, y, eps), x)
    }

    /// Second derivative of `g` in `x` (finite differences only).
    pub fn hessian_g_x(&self, t: f64, x: &DVector<f64>, eps: f64) -> Bilinear {
        match &self.jac_g_x {
            Some(jac) => fd_hessian_from_jacobian(|y| jac(t, y, eps), x),
            None => fd_hessian(|y| (self.g)(t, y, eps), x),
        }
    }

    /// `∂g/∂ε`, one-sided second-order differences since `ε ∈ [0, 1]`.
    pub fn g_eps_derivative(&self, t: f64, x: &DVector<f64>, eps: f64) -> DVector<f64> {
        let h = f64::EPSILON.cbrt();
        if eps + 2.0 * h <= 1.0 {
            let g0 = (self.g)(t, x, eps);
            let g1 = (self.g)(t, x, eps + h);
            let g2 = (self.g)(t, x, eps + 2.0 * h);
            (g1 * 4.0 - g0 * 3.0 - g2) / (2.0 * h)
        } else {
            let g0 = (self.g)(t, x, eps);
            let g1 = (self.g)(t, x, eps - h);
            let g2 = (self.g)(t, x, eps - 2.0 * h);
            (g0 * 3.0 - g1 * 4.0 + g2) / (2.0 * h)
        }
    }

    /// Jacobian in `x` of the full right-hand side.
    pub fn rhs_jacobian(&self, t: f64, x: &DVector<f64>, eps: f64) -> Result<DMatrix<f64>> {
        let mut j = self.jacobian_f(x)?;
        if eps != 0.0 {
            j += self.jacobian_g_x(t, x, eps)? * eps;
        }
        Ok(j)
    }

    pub fn rhs_hessian(&self, t: f64, x: &DVector<f64>, eps: f64) -> Result<Bilinear> {
        let h = self.hessian_f(x)?;
        if eps != 0.0 {
            return Ok(h.add(&self.hessian_g_x(t, x, eps).scale(eps)));
        }
        Ok(h)
    }

    /// Largest `‖g(t+T, x, ε) − g(t, x, ε)‖` over a `t`-grid and random
    /// `(x, ε)` draws near the origin-scaled unit ball.
    pub fn periodicity_defect(&self, grid: usize, draws: usize, seed: u64) -> f64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut worst: f64 = 0.0;
        for _ in 0..draws {
            let x = DVector::from_fn(self.dim, |_, _| rng.random_range(-1.5..1.5));
            let eps: f64 = rng.random_range(0.0..1.0);
            for k in 0..grid {
                let t = self.period * k as f64 / grid as f64;
                let a = (self.g)(t, &x, eps);
                let b = (self.g)(t + self.period, &x, eps);
                worst = worst.max((a - b).norm());
            }
        }
        worst
    }
}

fn finite_matrix(m: &DMatrix<f64>, what: &'static str) -> Result<()> {
    match m.iter().position(|v| !v.is_finite()) {
        Some(index) => Err(Error::Evaluation { what, index }),
        None => Ok(()),
    }
}

pub fn fd_jacobian(
    f: impl Fn(&DVector<f64>) -> DVector<f64>,
    x: &DVector<f64>,
) -> DMatrix<f64> {
    let n = x.len();
    let h = first_derivative_step(x);
    let m = f(x).len();
    let mut j = DMatrix::zeros(m, n);
    let mut xp = x.clone();
    for k in 0..n {
        xp[k] = x[k] + h;
        let fp = f(&xp);
        xp[k] = x[k] - h;
        let fm = f(&xp);
        xp[k] = x[k];
        j.set_column(k, &((fp - fm) / (2.0 * h)));
    }
    j
}

pub fn fd_hessian(f: impl Fn(&DVector<f64>) -> DVector<f64>, x: &DVector<f64>) -> Bilinear {
    let n = x.len();
    let h = second_derivative_step(x);
    let mut out = Bilinear::zeros(n);
    let f0 = f(x);
    let mut y = x.clone();
    for j in 0..n {
        for k in j..n {
            let col = if j == k {
                y[j] = x[j] + h;
                let fp = f(&y);
                y[j] = x[j] - h;
                let fm = f(&y);
                y[j] = x[j];
                (fp + fm - &f0 * 2.0) / (h * h)
            } else {
                let mut eval = |sj: f64, sk: f64| {
                    y[j] = x[j] + sj * h;
                    y[k] = x[k] + sk * h;
                    let v = f(&y);
                    y[j] = x[j];
                    y[k] = x[k];
                    v
                };
                (eval(1.0, 1.0) - eval(1.0, -1.0) - eval(-1.0, 1.0) + eval(-1.0, -1.0))
                    / (4.0 * h * h)
            };
            for i in 0..n {
                out.component_mut(i)[(j, k)] = col[i];
                out.component_mut(i)[(k, j)] = col[i];
            }
        }
    }
    out
}

pub fn fd_hessian_from_jacobian(
    jac: impl Fn(&DVector<f64>) -> DMatrix<f64>,
    x: &DVector<f64>,
) -> Bilinear {
    let n = x.len();
    let h = first_derivative_step(x);
    let mut out = Bilinear::zeros(n);
    let mut y = x.clone();
    for k in 0..n {
        y[k] = x[k] + h;
        let jp = jac(&y);
        y[k] = x[k] - h;
        let jm = jac(&y);
        y[k] = x[k];
        let d = (jp - jm) / (2.0 * h);
        // d[(i, j)] = ∂²f_i / ∂x_j ∂x_k
        for i in 0..n {
            for j in 0..n {
                out.component_mut(i)[(j, k)] = d[(i, j)];
            }
        }
    }
    out.symmetrized()
}

/// Shape of one harmonic forcing term.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Waveform {
    Cos,
    Sin,
}

/// `amplitude · wave(harmonic·ω·t − phase) · (x[state_factor] or 1)` added
/// to one component of `g`, with `ω = 2π/T`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ForcingTerm {
    pub component: usize,
    #[serde(default = "one")]
    pub amplitude: f64,
    #[serde(default = "one_u32")]
    pub harmonic: u32,
    #[serde(default)]
    pub phase: f64,
    #[serde(default = "cos_wave")]
    pub waveform: Waveform,
    #[serde(default)]
    pub state_factor: Option<usize>,
}

fn one() -> f64 {
    1.0
}
fn one_u32() -> u32 {
    1
}
fn cos_wave() -> Waveform {
    Waveform::Cos
}

/// A perturbation built from a finite list of harmonic terms.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HarmonicForcing {
    pub terms: Vec<ForcingTerm>,
}

impl HarmonicForcing {
    pub fn cos_on_first(phase: f64) -> Self {
        Self {
            terms: vec![ForcingTerm {
                component: 0,
                amplitude: 1.0,
                harmonic: 1,
                phase,
                waveform: Waveform::Cos,
                state_factor: None,
            }],
        }
    }

    pub fn validate(&self, dim: usize) -> Result<()> {
        for (i, term) in self.terms.iter().enumerate() {
            if term.component >= dim || term.state_factor.is_some_and(|s| s >= dim) {
                return Err(Error::Config(format!(
                    "forcing term {i} refers to a component outside 0..{dim}"
                )));
            }
            if !(term.amplitude.is_finite() && term.phase.is_finite()) {
                return Err(Error::Config(format!("forcing term {i} is not finite")));
            }
        }
        Ok(())
    }

    fn wave(term: &ForcingTerm, omega: f64, t: f64) -> f64 {
        let arg = term.harmonic as f64 * omega * t - term.phase;
        term.amplitude
            * match term.waveform {
                Waveform::Cos => arg.cos(),
                Waveform::Sin => arg.sin(),
            }
    }

    pub fn eval(&self, period: f64, t: f64, x: &DVector<f64>) -> DVector<f64> {
        let omega = 2.0 * PI / period;
        let mut out = DVector::zeros(x.len());
        for term in &self.terms {
            let factor = term.state_factor.map_or(1.0, |j| x[j]);
            out[term.component] += Self::wave(term, omega, t) * factor;
        }
        out
    }

    pub fn jacobian(&self, period: f64, t: f64, x: &DVector<f64>) -> DMatrix<f64> {
        let omega = 2.0 * PI / period;
        let n = x.len();
        let mut out = DMatrix::zeros(n, n);
        for term in &self.terms {
            if let Some(j) = term.state_factor {
                out[(term.component, j)] += Self::wave(term, omega, t);
            }
        }
        out
    }
}

fn hopf_f(x: &DVector<f64>) -> DVector<f64> {
    let r2 = x[0] * x[0] + x[1] * x[1];
    DVector::from_vec(vec![x[0] - x[1] - x[0] * r2, x[0] + x[1] - x[1] * r2])
}

fn hopf_jacobian(x: &DVector<f64>) -> DMatrix<f64> {
    let (a, b) = (x[0], x[1]);
    DMatrix::from_row_slice(
        2,
        2,
        &[
            1.0 - 3.0 * a * a - b * b,
            -1.0 - 2.0 * a * b,
            1.0 - 2.0 * a * b,
            1.0 - a * a - 3.0 * b * b,
        ],
    )
}

fn hopf_hessian(x: &DVector<f64>) -> Bilinear {
    let (a, b) = (x[0], x[1]);
    Bilinear::from_components(vec![
        DMatrix::from_row_slice(2, 2, &[-6.0 * a, -2.0 * b, -2.0 * b, -2.0 * a]),
        DMatrix::from_row_slice(2, 2, &[-2.0 * b, -2.0 * a, -2.0 * a, -6.0 * b]),
    ])
}

/// Planar normal form `ṙ = r(1 − r²)`, `φ̇ = 1` with an attracting `2π`-periodic
/// cycle on the unit circle, forced by the given harmonic terms.
pub fn hopf_normal(name: &str, forcing: HarmonicForcing) -> Result<VectorFieldPair> {
    forcing.validate(2)?;
    let period = 2.0 * PI;
    let jac_forcing = forcing.clone();
    Ok(VectorFieldPair::new(name, 2, period, hopf_f, move |t, x, _eps| {
        forcing.eval(period, t, x)
    })?
    .with_jacobian(hopf_jacobian)
    .with_hessian(hopf_hessian)
    .with_forcing_jacobian(move |t, x, _eps| jac_forcing.jacobian(period, t, x)))
}

type Constructor = Arc<dyn Fn() -> Result<VectorFieldPair> + Send + Sync>;

/// Name → problem constructor lookup.
#[derive(Clone)]
pub struct ProblemRegistry {
    entries: BTreeMap<String, Constructor>,
}

impl Default for ProblemRegistry {
    fn default() -> Self {
        Self::with_builtins()
    }
}

impl ProblemRegistry {
    pub fn empty() -> Self {
        Self {
            entries: BTreeMap::new(),
        }
    }

    pub fn with_builtins() -> Self {
        let mut reg = Self::empty();
        reg.register("hopf-normal-cosforce", || {
            hopf_normal("hopf-normal-cosforce", HarmonicForcing::cos_on_first(0.0))
        });
        reg.register("hopf-normal-free", || {
            hopf_normal("hopf-normal-free", HarmonicForcing::default())
        });
        reg
    }

    pub fn register(
        &mut self,
        name: impl Into<String>,
        ctor: impl Fn() -> Result<VectorFieldPair> + Send + Sync + 'static,
    ) {
        self.entries.insert(name.into(), Arc::new(ctor));
    }

    pub fn names(&self) -> Vec<String> {
        self.entries.keys().cloned().collect()
    }

    pub fn get(&self, name: &str) -> Result<VectorFieldPair> {
        match self.entries.get(name) {
            Some(ctor) => ctor(),
            None => Err(Error::UnknownProblem {
                name: name.to_string(),
                available: self.names(),
            }),
        }
    }
}

/// Looks up one of the built-in problems.
pub fn builtin_problem(name: &str) -> Result<VectorFieldPair> {
    ProblemRegistry::with_builtins().get(name)
}
