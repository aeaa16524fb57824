//! The time-`T` map of the perturbed system and the pieces of
//! `Φ(v, ε) = 𝒫_ε(v) − v = P(v) + εQ(v, ε)`.
//!
//! All `ε = 0` derivatives (`P′`, `P″`, `Q`, `Q′_v`, `Q′_ε`) come from a single
//! integration of an augmented system that differentiates the flow once and
//! twice in the initial state and in `ε`.

use std::collections::HashMap;
use std::sync::{Arc, Mutex};

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::cycle::{AdjointOrbit, CycleAnalysis, LimitCycle};
use crate::error::{Error, Result};
use crate::linalg::Bilinear;
use crate::malkin::{malkin_mprime, projector_at, MprimeEval};
use crate::ode::{flow, flow_variational, integrate_raw, solve_linear_inhomogeneous, IntegratorConfig};
use crate::scaling::{AbstractBifProblem, AuditItem, AuditReport, AuditThresholds, BifurcationMaps, RankOneFactors};
use crate::vectorfield::VectorFieldPair;

/// `ε = 0` data at one initial state.
#[derive(Debug, Clone)]
pub struct ZeroOrderData {
    /// `𝒫₀(v)`.
    pub image: DVector<f64>,
    /// `P(v) = 𝒫₀(v) − v`.
    pub p: DVector<f64>,
    /// `P′(v) = Y(T) − I`.
    pub p_jacobian: DMatrix<f64>,
    /// `P″(v)`: second variation at `T`.
    pub p_hessian: Bilinear,
    /// `Q(v, 0) = ∂x/∂ε(T)`.
    pub q: DVector<f64>,
    /// `Q′_v(v, 0)`.
    pub q_jacobian: DMatrix<f64>,
    /// `Q′_ε(v, 0) = ½∂²x/∂ε²(T)`.
    pub q_eps: DVector<f64>,
}

#[derive(Debug, Clone)]
enum Cached {
    Map(Arc<DVector<f64>>),
    Variational(Arc<(DVector<f64>, DMatrix<f64>)>),
    Zero(Arc<ZeroOrderData>),
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
struct Key {
    kind: u8,
    v: Vec<u64>,
    eps: u64,
}

impl Key {
    fn new(kind: u8, v: &DVector<f64>, eps: f64) -> Self {
        Self {
            kind,
            v: v.iter().map(|x| x.to_bits()).collect(),
            eps: eps.to_bits(),
        }
    }
}

/// Poincaré-map evaluator with a memo of previous results.
///
/// Entries are keyed on the exact bit pattern of `(v, ε)`; the tolerance
/// signature is fixed per instance.
#[derive(Debug)]
pub struct PoincareOperators {
    vf: VectorFieldPair,
    integ: IntegratorConfig,
    cache: Mutex<HashMap<Key, Cached>>,
}

impl PoincareOperators {
    pub fn new(vf: VectorFieldPair, integ: IntegratorConfig) -> Result<Self> {
        integ.validate()?;
        Ok(Self {
            vf,
            integ,
            cache: Mutex::new(HashMap::new()),
        })
    }

    pub fn vector_field(&self) -> &VectorFieldPair {
        &self.vf
    }

    pub fn integrator(&self) -> &IntegratorConfig {
        &self.integ
    }

    pub fn signature(&self) -> String {
        self.integ.signature()
    }

    pub fn cache_len(&self) -> usize {
        self.cache.lock().expect("cache lock").len()
    }

    pub fn clear_cache(&self) {
        self.cache.lock().expect("cache lock").clear();
    }

    fn lookup(&self, key: &Key) -> Option<Cached> {
        self.cache.lock().expect("cache lock").get(key).cloned()
    }

    fn store(&self, key: Key, value: Cached) {
        self.cache.lock().expect("cache lock").insert(key, value);
    }

    /// `𝒫_ε(v) = x(T, v, ε)`.
    pub fn poincare(&self, v: &DVector<f64>, eps: f64) -> Result<DVector<f64>> {
        let key = Key::new(0, v, eps);
        if let Some(Cached::Map(x)) = self.lookup(&key) {
            return Ok((*x).clone());
        }
        let tr = flow(&self.vf, 0.0, self.vf.period(), v, eps, &self.integ)?;
        let x = tr.final_state().clone();
        self.store(key, Cached::Map(Arc::new(x.clone())));
        Ok(x)
    }

    /// `(𝒫_ε(v), (𝒫_ε)′(v))`.
    pub fn variational(&self, v: &DVector<f64>, eps: f64) -> Result<(DVector<f64>, DMatrix<f64>)> {
        let key = Key::new(1, v, eps);
        if let Some(Cached::Variational(d)) = self.lookup(&key) {
            return Ok((*d).clone());
        }
        let var = flow_variational(&self.vf, 0.0, self.vf.period(), v, eps, 1, &self.integ)?;
        let d = (var.base.final_state().clone(), var.final_fundamental().clone());
        self.store(key, Cached::Variational(Arc::new(d.clone())));
        Ok(d)
    }

    /// All `ε = 0` derivatives at `v` from one augmented integration.
    pub fn zero_order(&self, v: &DVector<f64>) -> Result<Arc<ZeroOrderData>> {
        let key = Key::new(2, v, 0.0);
        if let Some(Cached::Zero(d)) = self.lookup(&key) {
            return Ok(d);
        }
        let d = Arc::new(self.integrate_zero_order(v)?);
        self.store(key, Cached::Zero(d.clone()));
        Ok(d)
    }

    fn integrate_zero_order(&self, v: &DVector<f64>) -> Result<ZeroOrderData> {
        let n = self.vf.dim();
        if v.len() != n {
            return Err(Error::Dimension {
                context: "poincare state",
                expected: n,
                got: v.len(),
            });
        }
        let layout = Layout::new(n);
        let mut y0 = vec![0.0; layout.size];
        y0[..n].copy_from_slice(v.as_slice());
        for i in 0..n {
            y0[layout.y + i * n + i] = 1.0;
        }
        let vf = &self.vf;
        let yt = integrate_raw(
            |t, y, dy| augmented_rhs(vf, &layout, t, y, dy),
            0.0,
            vf.period(),
            &y0,
            &self.integ,
            |_, _, _| {},
        )?;
        let image = DVector::from_column_slice(&yt[..n]);
        let fundamental = DMatrix::from_row_slice(n, n, &yt[layout.y..layout.y + n * n]);
        Ok(ZeroOrderData {
            p: &image - v,
            image,
            p_jacobian: fundamental - DMatrix::identity(n, n),
            p_hessian: Bilinear::from_flat(n, &yt[layout.s..layout.s + n * n * n]),
            q: DVector::from_column_slice(&yt[layout.q..layout.q + n]),
            q_jacobian: DMatrix::from_row_slice(n, n, &yt[layout.qv..layout.qv + n * n]),
            q_eps: DVector::from_column_slice(&yt[layout.qe..layout.qe + n]) * 0.5,
        })
    }

    /// `(P(v), P′(v), P″(v))`.
    pub fn p_derivatives(&self, v: &DVector<f64>) -> Result<(DVector<f64>, DMatrix<f64>, Bilinear)> {
        let d = self.zero_order(v)?;
        Ok((d.p.clone(), d.p_jacobian.clone(), d.p_hessian.clone()))
    }

    /// `Q(v, ε) = (𝒫_ε(v) − 𝒫₀(v))/ε` for `ε > 0`.
    pub fn q_difference(&self, v: &DVector<f64>, eps: f64) -> Result<DVector<f64>> {
        if !(eps > 0.0) {
            return Err(Error::Domain(eps));
        }
        Ok((self.poincare(v, eps)? - self.poincare(v, 0.0)?) / eps)
    }

    /// `Q(x₀(θ), 0)` from the linear inhomogeneous problem along the shifted
    /// cycle, `ẏ = f′(x₀(t+θ))y + g(t, x₀(t+θ), 0)`, `y(0) = 0`.
    pub fn q_at_zero(&self, cycle: &LimitCycle, theta: f64) -> Result<DVector<f64>> {
        let vf = &self.vf;
        let n = vf.dim();
        solve_linear_inhomogeneous(
            |t| {
                vf.jacobian_f(&cycle.state_at(t + theta))
                    .unwrap_or_else(|_| DMatrix::from_element(n, n, f64::NAN))
            },
            |t| vf.g_raw(t, &cycle.state_at(t + theta), 0.0),
            &DVector::zeros(n),
            0.0,
            vf.period(),
            &self.integ,
        )
    }

    /// `Q′_v` and `Q′_ε` at `x₀(θ)` with finite-difference cross-checks.
    pub fn q_derivatives(&self, cycle: &LimitCycle, theta: f64) -> Result<QDerivatives> {
        let v = cycle.state_at(theta);
        let n = v.len();
        let d = self.zero_order(&v)?;
        let fd_qv = |h: f64| -> Result<DMatrix<f64>> {
            let mut m = DMatrix::zeros(n, n);
            for k in 0..n {
                let mut vp = v.clone();
                vp[k] += h;
                let mut vm = v.clone();
                vm[k] -= h;
                let col = (&self.zero_order(&vp)?.q - &self.zero_order(&vm)?.q) / (2.0 * h);
                m.set_column(k, &col);
            }
            Ok(m)
        };
        // Q carries integrator noise, so the step balances it against the
        // O(h²) truncation of the central difference.
        let h = QV_STEP * v.amax().max(1.0);
        let qv_h = fd_qv(h)?;
        let qv_half = fd_qv(0.5 * h)?;
        let qv_noise = (&qv_h - &qv_half).amax();
        let qv_gap = (&d.q_jacobian - &qv_half).amax();

        // One-sided in ε because g is only defined for ε ≥ 0. The quotient
        // D(h) = (Q(v, h) − Q(v, 0))/h = Q′_ε + b₁h + b₂h² + …; a Richardson
        // table over h, 2h, 4h, 8h removes b₁..b₃, and the same table one
        // level coarser estimates what remains.
        let he = QEPS_STEP;
        let diff = |e: f64| -> Result<DVector<f64>> { Ok((self.q_difference(&v, e)? - &d.q) / e) };
        let levels = (0..5).map(|k| diff(he * f64::powi(2.0, k))).collect::<Result<Vec<_>>>()?;
        let qe_fd = richardson(&levels[..4]);
        let qe_coarse = richardson(&levels[1..]);
        let qe_noise = (&qe_fd - &qe_coarse).amax();
        let qe_gap = (&d.q_eps - &qe_fd).amax();

        let mut warnings = Vec::new();
        let scale_v = d.q_jacobian.amax().max(1.0);
        let scale_e = d.q_eps.amax().max(1.0);
        if qv_noise > FD_WARN * scale_v {
            warnings.push(format!("Q'_v finite-difference noise {qv_noise:e} exceeds {:e}", FD_WARN * scale_v));
        }
        if qv_gap > FD_WARN * scale_v + 10.0 * qv_noise {
            warnings.push(format!("Q'_v variational and finite-difference values differ by {qv_gap:e}"));
        }
        if qe_noise > FD_WARN * scale_e {
            warnings.push(format!("Q'_eps extrapolation noise {qe_noise:e} exceeds {:e}", FD_WARN * scale_e));
        }
        if qe_gap > FD_WARN * scale_e + 10.0 * qe_noise {
            warnings.push(format!("Q'_eps variational and extrapolated values differ by {qe_gap:e}"));
        }
        Ok(QDerivatives {
            q_jacobian: d.q_jacobian.clone(),
            q_eps: d.q_eps.clone(),
            q_jacobian_fd: qv_half,
            q_eps_fd: qe_fd,
            q_jacobian_gap: qv_gap,
            q_eps_gap: qe_gap,
            warnings,
        })
    }
}

/// Extrapolates `D(h), D(2h), D(4h), …` to `h = 0`, assuming an error
/// expansion in integer powers of `h`.
fn richardson(levels: &[DVector<f64>]) -> DVector<f64> {
    let mut table = levels.to_vec();
    for order in 1..levels.len() {
        let f = f64::powi(2.0, order as i32);
        table = table.windows(2).map(|w| (&w[0] * f - &w[1]) / (f - 1.0)).collect();
    }
    table.swap_remove(0)
}

/// Step of the central difference for `Q′_v`.
pub const QV_STEP: f64 = 1e-4;
/// Base step of the one-sided `ε` extrapolation for `Q′_ε`.
pub const QEPS_STEP: f64 = 2.5e-3;
/// Relative disagreement that triggers an accuracy warning.
pub const FD_WARN: f64 = 1e-5;

#[derive(Debug, Clone, Serialize)]
pub struct QDerivatives {
    pub q_jacobian: DMatrix<f64>,
    pub q_eps: DVector<f64>,
    pub q_jacobian_fd: DMatrix<f64>,
    pub q_eps_fd: DVector<f64>,
    pub q_jacobian_gap: f64,
    pub q_eps_gap: f64,
    pub warnings: Vec<String>,
}

/// Offsets of the blocks `[x, Y, S, y, Sq, z]` in the augmented state.
struct Layout {
    n: usize,
    y: usize,
    s: usize,
    q: usize,
    qv: usize,
    qe: usize,
    size: usize,
}

impl Layout {
    fn new(n: usize) -> Self {
        let y = n;
        let s = y + n * n;
        let q = s + n * n * n;
        let qv = q + n;
        let qe = qv + n * n;
        Self {
            n,
            y,
            s,
            q,
            qv,
            qe,
            size: qe + n,
        }
    }
}

/// `x′ = f`, `Y′ = f′Y`, `S′ = f′S + f″[Y, Y]`, `y′ = f′y + g`,
/// `S_q′ = f′S_q + f″[Y, y] + g_x Y`, `z′ = f′z + f″[y, y] + 2g_x y + 2g_ε`,
/// all at `ε = 0`.
fn augmented_rhs(vf: &VectorFieldPair, l: &Layout, t: f64, st: &[f64], d: &mut [f64]) {
    let n = l.n;
    let x = DVector::from_column_slice(&st[..n]);
    let nan = || DMatrix::from_element(n, n, f64::NAN);
    let a = vf.jacobian_f(&x).unwrap_or_else(|_| nan());
    let h = vf
        .hessian_f(&x)
        .unwrap_or_else(|_| Bilinear::from_components(vec![nan(); n]));
    let gx = vf.jacobian_g_x(t, &x, 0.0).unwrap_or_else(|_| nan());
    let g = vf.g_raw(t, &x, 0.0);
    let ge = vf.g_eps_derivative(t, &x, 0.0);

    d[..n].copy_from_slice(vf.f_raw(&x).as_slice());
    let ym = DMatrix::from_row_slice(n, n, &st[l.y..l.y + n * n]);
    let ay = &a * &ym;
    for i in 0..n {
        for j in 0..n {
            d[l.y + i * n + j] = ay[(i, j)];
        }
    }
    // f″[Y_j, Y_k] contracted per component i: (Yᵀ H_i Y)_{jk}.
    let sm = Bilinear::from_flat(n, &st[l.s..l.s + n * n * n]);
    for i in 0..n {
        let curv = ym.transpose() * h.component(i) * &ym;
        for j in 0..n {
            for k in 0..n {
                let mut acc = curv[(j, k)];
                for m in 0..n {
                    acc += a[(i, m)] * sm.component(m)[(j, k)];
                }
                d[l.s + i * n * n + j * n + k] = acc;
            }
        }
    }
    let yv = DVector::from_column_slice(&st[l.q..l.q + n]);
    let dy = &a * &yv + &g;
    d[l.q..l.q + n].copy_from_slice(dy.as_slice());
    // f″[Y_j, y]_i = (Yᵀ H_i y)_j
    let sq = DMatrix::from_row_slice(n, n, &st[l.qv..l.qv + n * n]);
    let mut dsq = &a * &sq + &gx * &ym;
    for i in 0..n {
        let row = ym.transpose() * (h.component(i) * &yv);
        for j in 0..n {
            dsq[(i, j)] += row[j];
        }
    }
    for i in 0..n {
        for j in 0..n {
            d[l.qv + i * n + j] = dsq[(i, j)];
        }
    }
    let zv = DVector::from_column_slice(&st[l.qe..l.qe + n]);
    let dz = &a * &zv + h.apply(&yv, &yv) + &gx * &yv * 2.0 + &ge * 2.0;
    d[l.qe..l.qe + n].copy_from_slice(dz.as_slice());
}

/// [`BifurcationMaps`] backed by the Poincaré map.
#[derive(Debug, Clone)]
pub struct PoincareMaps {
    ops: Arc<PoincareOperators>,
}

impl PoincareMaps {
    pub fn new(ops: Arc<PoincareOperators>) -> Self {
        Self { ops }
    }

    pub fn operators(&self) -> &PoincareOperators {
        &self.ops
    }
}

impl BifurcationMaps for PoincareMaps {
    fn dim(&self) -> usize {
        self.ops.vf.dim()
    }

    fn p(&self, v: &DVector<f64>) -> Result<DVector<f64>> {
        Ok(self.ops.poincare(v, 0.0)? - v)
    }

    fn p_jacobian(&self, v: &DVector<f64>) -> Result<DMatrix<f64>> {
        let (_, y) = self.ops.variational(v, 0.0)?;
        Ok(y - DMatrix::identity(v.len(), v.len()))
    }

    fn p_hessian(&self, v: &DVector<f64>) -> Result<Bilinear> {
        Ok(self.ops.zero_order(v)?.p_hessian.clone())
    }

    fn q(&self, v: &DVector<f64>, eps: f64) -> Result<DVector<f64>> {
        if eps == 0.0 {
            return Ok(self.ops.zero_order(v)?.q.clone());
        }
        self.ops.q_difference(v, eps)
    }

    fn q_jacobian(&self, v: &DVector<f64>, eps: f64) -> Result<DMatrix<f64>> {
        if eps == 0.0 {
            return Ok(self.ops.zero_order(v)?.q_jacobian.clone());
        }
        let (_, ye) = self.ops.variational(v, eps)?;
        let (_, y0) = self.ops.variational(v, 0.0)?;
        Ok((ye - y0) / eps)
    }

    fn q_eps(&self, v: &DVector<f64>, eps: f64) -> Result<DVector<f64>> {
        if eps == 0.0 {
            return Ok(self.ops.zero_order(v)?.q_eps.clone());
        }
        let h = 0.5 * eps.min(1e-2);
        if eps + h <= 1.0 {
            Ok((self.q(v, eps + h)? - self.q(v, eps - h)?) / (2.0 * h))
        } else {
            Ok((self.q(v, eps)? - self.q(v, eps - h)?) / h)
        }
    }

    fn phi(&self, v: &DVector<f64>, eps: f64) -> Result<DVector<f64>> {
        Ok(self.ops.poincare(v, eps)? - v)
    }

    fn phi_jacobian(&self, v: &DVector<f64>, eps: f64) -> Result<DMatrix<f64>> {
        let (_, y) = self.ops.variational(v, eps)?;
        Ok(y - DMatrix::identity(v.len(), v.len()))
    }
}

pub const HYP_CURVE: &str = "P''(v0) x0' x0' + P'(v0) x0'' = 0";

/// A problem built at a phase `θ₀` together with everything needed to
/// interpret it.
#[derive(Debug, Clone)]
pub struct AssembledProblem {
    pub problem: AbstractBifProblem,
    pub theta0: f64,
    /// `ẋ₀(θ₀)`.
    pub tangent: DVector<f64>,
    /// `z₀(θ₀)`, rescaled so that `⟨ẋ₀(θ₀), z₀(θ₀)⟩ = 1`.
    pub left: DVector<f64>,
    /// `ẍ₀(θ₀) = f′(x₀)f(x₀)`.
    pub acceleration: DVector<f64>,
    pub audit: AuditReport,
    pub q_checks: QDerivatives,
    pub mprime: MprimeEval,
}

/// Builds the problem at `θ₀` and runs the audit without failing on it.
pub fn inspect_problem(
    ops: &Arc<PoincareOperators>,
    analysis: &CycleAnalysis,
    theta0: f64,
    th: &AuditThresholds,
) -> Result<AssembledProblem> {
    let cycle = &analysis.cycle;
    let adj: &AdjointOrbit = &analysis.adjoint;
    let proj = projector_at(cycle, adj, theta0)?;
    let v0 = cycle.state_at(theta0);
    let factors = RankOneFactors {
        column: proj.column.clone(),
        row: proj.row.clone(),
    };
    let maps: Arc<dyn BifurcationMaps> = Arc::new(PoincareMaps::new(ops.clone()));
    let mut problem = AbstractBifProblem::with_factors(maps, v0.clone(), factors)?;
    let q_checks = ops.q_derivatives(cycle, theta0)?;
    problem.warnings.extend(q_checks.warnings.iter().cloned());

    let acceleration = cycle.acceleration_at(theta0)?;
    let b = problem.base();
    let curve = b.p_hessian.apply(&proj.column, &proj.column) + &b.p_jacobian * &acceleration;
    let mut audit = problem.audit(th);
    audit.push(AuditItem {
        hypothesis: HYP_CURVE,
        residual: curve.norm(),
        threshold: th.range_curvature,
        upper_bound: true,
        passed: curve.norm() <= th.range_curvature,
    });
    let mprime = malkin_mprime(ops, cycle, adj, theta0)?;
    Ok(AssembledProblem {
        problem,
        theta0,
        tangent: proj.column,
        left: proj.row,
        acceleration,
        audit,
        q_checks,
        mprime,
    })
}

/// Like [`inspect_problem`] but fails with the first violated hypothesis.
pub fn assemble_problem(
    ops: &Arc<PoincareOperators>,
    analysis: &CycleAnalysis,
    theta0: f64,
    th: &AuditThresholds,
) -> Result<AssembledProblem> {
    let assembled = inspect_problem(ops, analysis, theta0, th)?;
    assembled.audit.clone().into_result()?;
    Ok(assembled)
}
