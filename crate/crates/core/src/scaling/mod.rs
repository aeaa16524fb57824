//! Variables scaling for `Φ(v, ε) = P(v) + ε Q(v, ε) = 0` near a singular
//! zero `v₀` of `P`.
//!
//! The substitution `v = v₀ + ε w` turns the singular equation into
//! `Ψ(w, ε) = 0`, whose linearization at `(w₀, 0)` is invertible. This module
//! knows nothing about ODEs: a problem is any implementation of
//! [`BifurcationMaps`] together with a base point and a projector.

mod riesz;
mod solve;

use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{singular_values, smallest_singular_value, Bilinear};

pub use riesz::{riesz_projector, riesz_projector_with, RIESZ_POINTS};
pub use solve::{
    compute_w0, continue_branch, lambda_epsilon, lambda_star, psi_eval, psi_jacobian, solve_w1,
    solve_w2, BranchRecord, ContinuationOptions, LambdaEpsilon, ScalingSolution, W0Solution,
};

/// Evaluators for `P`, `Q` and their derivatives.
///
/// `phi` and `phi_jacobian` default to `P + εQ` and `P′ + εQ′_v`;
/// implementations with a cheaper or more accurate direct route override
/// them.
pub trait BifurcationMaps: Send + Sync {
    fn dim(&self) -> usize;
    fn p(&self, v: &DVector<f64>) -> Result<DVector<f64>>;
    fn p_jacobian(&self, v: &DVector<f64>) -> Result<DMatrix<f64>>;
    fn p_hessian(&self, v: &DVector<f64>) -> Result<Bilinear>;
    fn q(&self, v: &DVector<f64>, eps: f64) -> Result<DVector<f64>>;
    fn q_jacobian(&self, v: &DVector<f64>, eps: f64) -> Result<DMatrix<f64>>;
    fn q_eps(&self, v: &DVector<f64>, eps: f64) -> Result<DVector<f64>>;

    fn phi(&self, v: &DVector<f64>, eps: f64) -> Result<DVector<f64>> {
        Ok(self.p(v)? + self.q(v, eps)? * eps)
    }

    fn phi_jacobian(&self, v: &DVector<f64>, eps: f64) -> Result<DMatrix<f64>> {
        Ok(self.p_jacobian(v)? + self.q_jacobian(v, eps)? * eps)
    }
}

/// `P(v) = A(v − c) + ½B(v − c, v − c)`, `Q(v, ε) = q₀ + C(v − c) + ε d`,
/// with every derivative exact. Handy for tests and small experiments.
#[derive(Debug, Clone)]
pub struct QuadraticMaps {
    pub center: DVector<f64>,
    pub a: DMatrix<f64>,
    pub b: Bilinear,
    pub q0: DVector<f64>,
    pub c: DMatrix<f64>,
    pub d: DVector<f64>,
}

impl QuadraticMaps {
    /// All-zero maps of dimension `n` centred at the origin.
    pub fn zeros(n: usize) -> Self {
        Self {
            center: DVector::zeros(n),
            a: DMatrix::zeros(n, n),
            b: Bilinear::zeros(n),
            q0: DVector::zeros(n),
            c: DMatrix::zeros(n, n),
            d: DVector::zeros(n),
        }
    }
}

impl BifurcationMaps for QuadraticMaps {
    fn dim(&self) -> usize {
        self.center.len()
    }

    fn p(&self, v: &DVector<f64>) -> Result<DVector<f64>> {
        let u = v - &self.center;
        Ok(&self.a * &u + self.b.apply(&u, &u) * 0.5)
    }

    fn p_jacobian(&self, v: &DVector<f64>) -> Result<DMatrix<f64>> {
        let u = v - &self.center;
        Ok(&self.a + self.b.symmetrized().partial(&u))
    }

    fn p_hessian(&self, _v: &DVector<f64>) -> Result<Bilinear> {
        Ok(self.b.symmetrized())
    }

    fn q(&self, v: &DVector<f64>, eps: f64) -> Result<DVector<f64>> {
        Ok(&self.q0 + &self.c * (v - &self.center) + &self.d * eps)
    }

    fn q_jacobian(&self, _v: &DVector<f64>, _eps: f64) -> Result<DMatrix<f64>> {
        Ok(self.c.clone())
    }

    fn q_eps(&self, _v: &DVector<f64>, _eps: f64) -> Result<DVector<f64>> {
        Ok(self.d.clone())
    }
}

/// `Π = c zᵀ` with `⟨c, z⟩ = 1`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RankOneFactors {
    pub column: DVector<f64>,
    pub row: DVector<f64>,
}

impl RankOneFactors {
    pub fn matrix(&self) -> DMatrix<f64> {
        &self.column * self.row.transpose()
    }

    /// Factors a numerically rank-one idempotent matrix.
    pub fn from_projector(pi: &DMatrix<f64>) -> Result<Self> {
        let rank = numerical_rank(pi);
        if rank != 1 {
            return Err(Error::UnsupportedMultiplicity(rank));
        }
        let svd = pi.clone().svd(true, true);
        let idx = svd
            .singular_values
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.total_cmp(b.1))
            .map(|(i, _)| i)
            .expect("non-empty");
        let u = svd.u.expect("requested U").column(idx).into_owned();
        let v = svd.v_t.expect("requested V^T").row(idx).transpose();
        let s = svd.singular_values[idx];
        let column = u;
        let row = v * s;
        let pairing = column.dot(&row);
        // Idempotency forces the pairing to 1; rescale the row to absorb
        // rounding.
        Ok(Self {
            row: row / pairing,
            column,
        })
    }
}

/// Number of singular values above `1e-8·σ_max`.
pub fn numerical_rank(m: &DMatrix<f64>) -> usize {
    let s = singular_values(m);
    let top = s.max();
    if top == 0.0 {
        return 0;
    }
    s.iter().filter(|v| **v > 1e-8 * top).count()
}

/// Everything the scaled solve needs at `v₀`, evaluated once.
#[derive(Debug, Clone)]
pub struct BaseData {
    pub p: DVector<f64>,
    pub p_jacobian: DMatrix<f64>,
    pub p_hessian: Bilinear,
    pub q: DVector<f64>,
    pub q_jacobian: DMatrix<f64>,
    pub q_eps: DVector<f64>,
}

/// Thresholds for the hypothesis audit.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AuditThresholds {
    pub p_residual: f64,
    pub projector_p: f64,
    pub projector_q: f64,
    /// Lower bound for the smallest singular value of the deflated operator.
    pub invertibility_floor: f64,
    pub range_curvature: f64,
    pub idempotency: f64,
    /// Random `(r, s)` pairs probing `ΠP″(v₀)(Πr)(Πs)`.
    pub curvature_draws: usize,
    pub seed: u64,
}

impl Default for AuditThresholds {
    fn default() -> Self {
        Self {
            p_residual: 1e-5,
            projector_p: 1e-5,
            projector_q: 1e-5,
            invertibility_floor: 1e-6,
            range_curvature: 1e-5,
            idempotency: 1e-8,
            curvature_draws: 8,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AuditItem {
    pub hypothesis: &'static str,
    pub residual: f64,
    pub threshold: f64,
    /// `true` when the residual must stay below the threshold, `false` when
    /// it must stay above (invertibility floors).
    pub upper_bound: bool,
    pub passed: bool,
}

impl AuditItem {
    fn upper(hypothesis: &'static str, residual: f64, threshold: f64) -> Self {
        Self {
            hypothesis,
            residual,
            threshold,
            upper_bound: true,
            passed: residual <= threshold,
        }
    }

    fn lower(hypothesis: &'static str, residual: f64, threshold: f64) -> Self {
        Self {
            hypothesis,
            residual,
            threshold,
            upper_bound: false,
            passed: residual >= threshold,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AuditReport {
    pub items: Vec<AuditItem>,
}

impl AuditReport {
    pub fn passed(&self) -> bool {
        self.items.iter().all(|i| i.passed)
    }

    pub fn first_failure(&self) -> Option<&AuditItem> {
        self.items.iter().find(|i| !i.passed)
    }

    pub fn push(&mut self, item: AuditItem) {
        self.items.push(item);
    }

    /// Converts the first failure into an error.
    pub fn into_result(self) -> Result<Self> {
        match self.first_failure() {
            Some(item) => Err(Error::Audit {
                hypothesis: item.hypothesis,
                residual: item.residual,
                threshold: item.threshold,
            }),
            None => Ok(self),
        }
    }
}

pub const HYP_ZERO: &str = "P(v0) = 0";
pub const HYP_PROJ_P: &str = "Pi P'(v0) = 0";
pub const HYP_PROJ_Q: &str = "Pi Q(v0, 0) = 0";
pub const HYP_INVERTIBLE: &str = "P'(v0) invertible on (I - Pi) R^n";
pub const HYP_CURVATURE: &str = "Pi P''(v0)(Pi r)(Pi s) = 0";
pub const HYP_IDEMPOTENT: &str = "Pi^2 = Pi";

/// `Φ(v, ε) = P(v) + εQ(v, ε)` near `v₀`, with the projector `Π` onto the
/// kernel direction of `P′(v₀)`.
#[derive(Clone)]
pub struct AbstractBifProblem {
    maps: Arc<dyn BifurcationMaps>,
    v0: DVector<f64>,
    projector: DMatrix<f64>,
    rank_one: Option<RankOneFactors>,
    base: BaseData,
    /// Accuracy warnings attached by whoever built the problem.
    pub warnings: Vec<String>,
}

impl fmt::Debug for AbstractBifProblem {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("AbstractBifProblem")
            .field("v0", &self.v0)
            .field("projector", &self.projector)
            .field("rank_one", &self.rank_one)
            .field("warnings", &self.warnings)
            .finish()
    }
}

impl AbstractBifProblem {
    /// Evaluates the base data. A rank-one projector is factored
    /// automatically; use [`Self::with_factors`] to supply exact factors.
    pub fn new(maps: Arc<dyn BifurcationMaps>, v0: DVector<f64>, projector: DMatrix<f64>) -> Result<Self> {
        let n = maps.dim();
        if v0.len() != n {
            return Err(Error::Dimension {
                context: "base point",
                expected: n,
                got: v0.len(),
            });
        }
        if projector.shape() != (n, n) {
            return Err(Error::Dimension {
                context: "projector",
                expected: n,
                got: projector.nrows(),
            });
        }
        let base = BaseData {
            p: maps.p(&v0)?,
            p_jacobian: maps.p_jacobian(&v0)?,
            p_hessian: maps.p_hessian(&v0)?,
            q: maps.q(&v0, 0.0)?,
            q_jacobian: maps.q_jacobian(&v0, 0.0)?,
            q_eps: maps.q_eps(&v0, 0.0)?,
        };
        let rank_one = RankOneFactors::from_projector(&projector).ok();
        Ok(Self {
            maps,
            v0,
            projector,
            rank_one,
            base,
            warnings: Vec::new(),
        })
    }

    /// Builds the problem with `Π = c zᵀ`.
    pub fn with_factors(maps: Arc<dyn BifurcationMaps>, v0: DVector<f64>, factors: RankOneFactors) -> Result<Self> {
        let mut p = Self::new(maps, v0, factors.matrix())?;
        p.rank_one = Some(factors);
        Ok(p)
    }

    pub fn dim(&self) -> usize {
        self.v0.len()
    }

    pub fn v0(&self) -> &DVector<f64> {
        &self.v0
    }

    pub fn projector(&self) -> &DMatrix<f64> {
        &self.projector
    }

    /// `I − Π`.
    pub fn complement(&self) -> DMatrix<f64> {
        DMatrix::identity(self.dim(), self.dim()) - &self.projector
    }

    pub fn rank_one(&self) -> Option<&RankOneFactors> {
        self.rank_one.as_ref()
    }

    pub fn base(&self) -> &BaseData {
        &self.base
    }

    pub fn maps(&self) -> &dyn BifurcationMaps {
        self.maps.as_ref()
    }

    /// `(I − Π)P′(v₀)(I − Π) + Π`: invertible exactly when `P′(v₀)` is
    /// invertible on `(I − Π)Rⁿ`.
    pub fn deflated_operator(&self) -> DMatrix<f64> {
        let c = self.complement();
        &c * &self.base.p_jacobian * &c + &self.projector
    }

    /// Checks every hypothesis of the scaled solve.
    pub fn audit(&self, th: &AuditThresholds) -> AuditReport {
        let pi = &self.projector;
        let b = &self.base;
        let mut report = AuditReport { items: Vec::new() };
        report.push(AuditItem::upper(HYP_ZERO, b.p.norm(), th.p_residual));
        report.push(AuditItem::upper(HYP_PROJ_P, (pi * &b.p_jacobian).norm(), th.projector_p));
        report.push(AuditItem::upper(HYP_PROJ_Q, (pi * &b.q).norm(), th.projector_q));
        report.push(AuditItem::lower(
            HYP_INVERTIBLE,
            smallest_singular_value(&self.deflated_operator()),
            th.invertibility_floor,
        ));
        report.push(AuditItem::upper(HYP_CURVATURE, self.range_curvature(th), th.range_curvature));
        report.push(AuditItem::upper(HYP_IDEMPOTENT, (pi * pi - pi).norm(), th.idempotency));
        report
    }

    /// Audit that fails with the first violated hypothesis.
    pub fn validate(&self, th: &AuditThresholds) -> Result<AuditReport> {
        self.audit(th).into_result()
    }

    /// `max ‖ΠP″(v₀)(Πr)(Πs)‖ / (‖Πr‖‖Πs‖)` over seeded random pairs.
    fn range_curvature(&self, th: &AuditThresholds) -> f64 {
        let n = self.dim();
        let pi = &self.projector;
        let mut rng = ChaCha8Rng::seed_from_u64(th.seed);
        let mut worst: f64 = 0.0;
        for _ in 0..th.curvature_draws.max(1) {
            let r = pi * DVector::from_fn(n, |_, _| rng.random_range(-1.0..1.0));
            let s = pi * DVector::from_fn(n, |_, _| rng.random_range(-1.0..1.0));
            let scale = r.norm() * s.norm();
            if scale == 0.0 {
                continue;
            }
            worst = worst.max((pi * self.base.p_hessian.apply(&r, &s)).norm() / scale);
        }
        worst
    }
}
