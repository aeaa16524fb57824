//! Limit cycles of the unperturbed system: shooting, monodromy, Floquet
//! multipliers and the Perron-normalized periodic adjoint solution.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{eigenvalues, null_vector, smallest_singular_value};
use crate::ode::trajectory_hermite as hermite;
use crate::ode::{flow_variational, integrate_raw, IntegratorConfig};
use crate::vectorfield::VectorFieldPair;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CycleConfig {
    /// Newton residual tolerance for the shooting system.
    pub tolerance: f64,
    pub max_iter: usize,
    /// Samples per period for the dense cycle and adjoint grids.
    pub samples: usize,
    /// Distance from 1 below which a multiplier counts as the trivial one.
    pub unit_tolerance: f64,
    /// Nontrivial multipliers must satisfy `|μ| < 1 − margin`.
    pub stability_margin: f64,
}

impl Default for CycleConfig {
    fn default() -> Self {
        Self {
            tolerance: 1e-10,
            max_iter: 30,
            samples: 512,
            unit_tolerance: 1e-6,
            stability_margin: 1e-4,
        }
    }
}

/// A `T`-periodic orbit of `ẋ = f(x)` sampled on a uniform phase grid.
#[derive(Debug, Clone)]
pub struct LimitCycle {
    vf: VectorFieldPair,
    base_point: DVector<f64>,
    period: f64,
    states: Vec<DVector<f64>>,
    tangents: Vec<DVector<f64>>,
    /// Shooting residual per Newton iteration (first entry is the guess).
    pub residual_history: Vec<f64>,
    /// Norms of the Newton corrections actually applied.
    pub corrections: Vec<f64>,
}

impl LimitCycle {
    pub fn base_point(&self) -> &DVector<f64> {
        &self.base_point
    }

    pub fn period(&self) -> f64 {
        self.period
    }

    pub fn vector_field(&self) -> &VectorFieldPair {
        &self.vf
    }

    pub fn dim(&self) -> usize {
        self.base_point.len()
    }

    /// Number of grid intervals per period.
    pub fn grid_size(&self) -> usize {
        self.states.len() - 1
    }

    pub fn grid_theta(&self, k: usize) -> f64 {
        self.period * k as f64 / self.grid_size() as f64
    }

    pub fn sample_state(&self, k: usize) -> &DVector<f64> {
        &self.states[k]
    }

    pub fn sample_tangent(&self, k: usize) -> &DVector<f64> {
        &self.tangents[k]
    }

    fn locate(&self, theta: f64) -> (usize, f64, f64) {
        let t = theta.rem_euclid(self.period);
        let n = self.grid_size();
        let h = self.period / n as f64;
        let k = ((t / h).floor() as usize).min(n - 1);
        (k, k as f64 * h, t)
    }

    /// `x₀(θ)`, periodically extended.
    pub fn state_at(&self, theta: f64) -> DVector<f64> {
        let (k, ta, t) = self.locate(theta);
        let h = self.period / self.grid_size() as f64;
        hermite(
            ta,
            ta + h,
            &self.states[k],
            &self.states[k + 1],
            &self.tangents[k],
            &self.tangents[k + 1],
            t,
        )
    }

    /// `ẋ₀(θ) = f(x₀(θ))`.
    pub fn tangent_at(&self, theta: f64) -> DVector<f64> {
        self.vf.f_raw(&self.state_at(theta))
    }

    /// `ẍ₀(θ) = f′(x₀(θ)) f(x₀(θ))`.
    pub fn acceleration_at(&self, theta: f64) -> Result<DVector<f64>> {
        let x = self.state_at(theta);
        Ok(self.vf.jacobian_f(&x)? * self.vf.f_raw(&x))
    }

    /// `‖x₀(T) − x₀(0)‖` of the sampled orbit.
    pub fn closure_defect(&self) -> f64 {
        (self.states.last().unwrap() - &self.states[0]).norm()
    }
}

/// Locates the `T`-periodic orbit through a phase hyperplane near `guess` by
/// Gauss–Newton on the bordered shooting system
/// `[𝒫₀(v) − v; ⟨f(guess), v − guess⟩] = 0`.
pub fn find_limit_cycle(
    vf: &VectorFieldPair,
    guess: &DVector<f64>,
    cfg: &CycleConfig,
    integ: &IntegratorConfig,
) -> Result<LimitCycle> {
    let n = vf.dim();
    if guess.len() != n {
        return Err(Error::Dimension {
            context: "cycle guess",
            expected: n,
            got: guess.len(),
        });
    }
    if cfg.samples < 4 {
        return Err(Error::Config("cycle samples must be at least 4".into()));
    }
    let period = vf.period();
    let normal = vf.eval_f(guess)?;
    if normal.norm() < 1e-12 {
        return Err(Error::DegeneratePhase {
            sigma_min: normal.norm(),
        });
    }
    let mut v = guess.clone();
    let mut history = Vec::new();
    let mut corrections = Vec::new();
    let mut converged = false;
    for _ in 0..=cfg.max_iter {
        let var = flow_variational(vf, 0.0, period, &v, 0.0, 1, integ)?;
        let r = var.base.final_state() - &v;
        let phase = normal.dot(&(&v - guess));
        let residual = (r.norm_squared() + phase * phase).sqrt();
        history.push(residual);
        if residual <= cfg.tolerance {
            converged = true;
            break;
        }
        if corrections.len() == cfg.max_iter {
            break;
        }
        let mut jac = DMatrix::zeros(n + 1, n);
        jac.view_mut((0, 0), (n, n))
            .copy_from(&(var.final_fundamental() - DMatrix::identity(n, n)));
        jac.set_row(n, &normal.transpose());
        let sigma_min = smallest_singular_value(&jac);
        if sigma_min < 1e-12 * jac.norm().max(1.0) {
            return Err(Error::DegeneratePhase { sigma_min });
        }
        let mut rhs = DVector::zeros(n + 1);
        rhs.rows_mut(0, n).copy_from(&(-r));
        rhs[n] = -phase;
        let delta = jac
            .svd(true, true)
            .solve(&rhs, 0.0)
            .map_err(|_| Error::DegeneratePhase { sigma_min })?;
        corrections.push(delta.norm());
        v += &delta;
        // Stagnation at the integration noise floor.
        if delta.norm() <= 1e-13 * (1.0 + v.norm()) && residual <= 10.0 * cfg.tolerance {
            converged = true;
            break;
        }
    }
    if !converged {
        return Err(Error::NoCycle {
            iterations: corrections.len(),
            history,
        });
    }
    sample_cycle(vf, v, cfg.samples, integ, history, corrections)
}

fn sample_cycle(
    vf: &VectorFieldPair,
    base: DVector<f64>,
    samples: usize,
    integ: &IntegratorConfig,
    history: Vec<f64>,
    corrections: Vec<f64>,
) -> Result<LimitCycle> {
    let period = vf.period();
    let h = period / samples as f64;
    let mut states = Vec::with_capacity(samples + 1);
    let mut x = base.clone();
    states.push(x.clone());
    for k in 0..samples {
        let t0 = k as f64 * h;
        let t1 = if k + 1 == samples { period } else { (k + 1) as f64 * h };
        let y = integrate_raw(
            |_t, y, dy| {
                let xv = DVector::from_column_slice(y);
                dy.copy_from_slice(vf.f_raw(&xv).as_slice());
            },
            t0,
            t1,
            x.as_slice(),
            integ,
            |_, _, _| {},
        )?;
        x = DVector::from_vec(y);
        states.push(x.clone());
    }
    let tangents = states.iter().map(|s| vf.f_raw(s)).collect();
    Ok(LimitCycle {
        vf: vf.clone(),
        base_point: base,
        period,
        states,
        tangents,
        residual_history: history,
        corrections,
    })
}

/// `Y(T)` along the cycle and its eigenvalues.
#[derive(Debug, Clone)]
pub struct Monodromy {
    pub matrix: DMatrix<f64>,
    /// Sorted by decreasing modulus.
    pub multipliers: Vec<Complex64>,
}

impl Monodromy {
    pub fn from_matrix(matrix: DMatrix<f64>) -> Self {
        let mut multipliers = eigenvalues(&matrix);
        multipliers.sort_by(|a, b| b.norm().total_cmp(&a.norm()));
        Self {
            matrix,
            multipliers,
        }
    }

    /// Index of the multiplier closest to 1.
    pub fn unit_index(&self) -> usize {
        self.multipliers
            .iter()
            .enumerate()
            .min_by(|a, b| (a.1 - 1.0).norm().total_cmp(&(b.1 - 1.0).norm()))
            .map(|(i, _)| i)
            .expect("non-empty spectrum")
    }

    pub fn unit_multiplier(&self) -> Complex64 {
        self.multipliers[self.unit_index()]
    }

    pub fn determinant(&self) -> f64 {
        self.matrix.determinant()
    }
}

pub fn monodromy(
    vf: &VectorFieldPair,
    cycle: &LimitCycle,
    integ: &IntegratorConfig,
) -> Result<Monodromy> {
    let var = flow_variational(vf, 0.0, cycle.period(), cycle.base_point(), 0.0, 1, integ)?;
    Ok(Monodromy::from_matrix(var.final_fundamental().clone()))
}

/// Outcome of checking that the cycle is simple and orbitally stable.
#[derive(Debug, Clone, Serialize)]
pub struct StabilityHypothesis {
    pub holds: bool,
    /// `(re, im)` of every multiplier.
    pub multipliers: Vec<(f64, f64)>,
    pub unit_index: usize,
    /// `1 − |μ|` for the nontrivial multipliers.
    pub margins: Vec<f64>,
    /// Modulus reading: all nontrivial `|μ| < 1 − margin`.
    pub modulus_condition: bool,
    /// Literal reading: `Re(μ − 1) < 0` for all nontrivial multipliers.
    pub negative_real_part_condition: bool,
    pub diagnostics: Vec<String>,
}

pub fn stability_hypothesis_check(mono: &Monodromy, cfg: &CycleConfig) -> StabilityHypothesis {
    let near_one: Vec<usize> = mono
        .multipliers
        .iter()
        .enumerate()
        .filter(|(_, m)| (*m - 1.0).norm() <= cfg.unit_tolerance)
        .map(|(i, _)| i)
        .collect();
    let unit_index = mono.unit_index();
    let mut diagnostics = Vec::new();
    match near_one.len() {
        0 => diagnostics.push(format!(
            "no multiplier within {:e} of 1 (closest {})",
            cfg.unit_tolerance,
            mono.multipliers[unit_index]
        )),
        1 => {}
        k => diagnostics.push(format!("non-simple: {k} multipliers within tolerance of 1")),
    }
    let others: Vec<Complex64> = mono
        .multipliers
        .iter()
        .enumerate()
        .filter(|(i, _)| *i != unit_index)
        .map(|(_, m)| *m)
        .collect();
    let margins: Vec<f64> = others.iter().map(|m| 1.0 - m.norm()).collect();
    let modulus_condition = margins.iter().all(|m| *m > cfg.stability_margin);
    let negative_real_part_condition = others.iter().all(|m| m.re - 1.0 < 0.0);
    if !modulus_condition {
        diagnostics.push("a nontrivial multiplier lies on or outside the stability margin".into());
    }
    StabilityHypothesis {
        holds: near_one.len() == 1 && modulus_condition,
        multipliers: mono.multipliers.iter().map(|m| (m.re, m.im)).collect(),
        unit_index,
        margins,
        modulus_condition,
        negative_real_part_condition,
        diagnostics,
    }
}

/// Periodic solution `z₀` of `ż = −f′(x₀(t))ᵀ z` with `⟨ẋ₀(0), z₀(0)⟩ = 1`.
#[derive(Debug, Clone)]
pub struct AdjointOrbit {
    period: f64,
    values: Vec<DVector<f64>>,
    derivs: Vec<DVector<f64>>,
    /// `⟨ẋ₀(0), z₀(0)⟩` after rescaling.
    pub normalization: f64,
    /// Pairing before rescaling.
    pub raw_pairing: f64,
}

impl AdjointOrbit {
    pub fn grid_size(&self) -> usize {
        self.values.len() - 1
    }

    pub fn sample(&self, k: usize) -> &DVector<f64> {
        &self.values[k]
    }

    pub fn sample_derivative(&self, k: usize) -> &DVector<f64> {
        &self.derivs[k]
    }

    pub fn value_at(&self, theta: f64) -> DVector<f64> {
        let t = theta.rem_euclid(self.period);
        let n = self.grid_size();
        let h = self.period / n as f64;
        let k = ((t / h).floor() as usize).min(n - 1);
        let ta = k as f64 * h;
        hermite(
            ta,
            ta + h,
            &self.values[k],
            &self.values[k + 1],
            &self.derivs[k],
            &self.derivs[k + 1],
            t,
        )
    }

    /// `ż₀(θ) = −f′(x₀(θ))ᵀ z₀(θ)`.
    pub fn derivative_at(&self, cycle: &LimitCycle, theta: f64) -> Result<DVector<f64>> {
        let j = cycle.vector_field().jacobian_f(&cycle.state_at(theta))?;
        Ok(-(j.transpose() * self.value_at(theta)))
    }

    pub fn periodicity_defect(&self) -> f64 {
        (self.values.last().unwrap() - &self.values[0]).norm()
    }

    /// Returns a copy scaled by `s` (breaks the normalization; useful to
    /// exercise the Perron check).
    pub fn scaled(&self, s: f64) -> Self {
        Self {
            period: self.period,
            values: self.values.iter().map(|v| v * s).collect(),
            derivs: self.derivs.iter().map(|v| v * s).collect(),
            normalization: self.normalization * s,
            raw_pairing: self.raw_pairing,
        }
    }

    /// Largest mismatch between each grid value propagated one grid step by
    /// the adjoint equation and the next stored value.
    pub fn ode_residual(&self, cycle: &LimitCycle, integ: &IntegratorConfig) -> Result<f64> {
        let vf = cycle.vector_field();
        let n = cycle.dim();
        let h = self.period / self.grid_size() as f64;
        let mut worst: f64 = 0.0;
        for k in 0..self.grid_size() {
            let mut y0 = cycle.sample_state(k).as_slice().to_vec();
            y0.extend_from_slice(self.values[k].as_slice());
            let y = integrate_raw(
                |_t, y, dy| adjoint_rhs(vf, n, 1.0, y, dy),
                0.0,
                h,
                &y0,
                integ,
                |_, _, _| {},
            )?;
            let z = DVector::from_column_slice(&y[n..]);
            worst = worst.max((z - &self.values[k + 1]).norm());
        }
        Ok(worst)
    }
}

/// `[ẋ, ż] = sign·[f(x), −f′(x)ᵀ z]`.
fn adjoint_rhs(vf: &VectorFieldPair, n: usize, sign: f64, y: &[f64], dy: &mut [f64]) {
    let x = DVector::from_column_slice(&y[..n]);
    let z = DVector::from_column_slice(&y[n..]);
    let fx = vf.f_raw(&x);
    let j = vf
        .jacobian_f(&x)
        .unwrap_or_else(|_| DMatrix::from_element(n, n, f64::NAN));
    let zd = -(j.transpose() * z);
    for i in 0..n {
        dy[i] = sign * fx[i];
        dy[n + i] = sign * zd[i];
    }
}

/// Builds `z₀` from the left eigenvector of the monodromy for the unit
/// multiplier.
///
/// The adjoint is integrated backward in time, interval by interval, with
/// the cycle state re-seeded from the samples at each grid node: forward in
/// time the adjoint equation amplifies errors by the reciprocal of the
/// contracting multipliers.
pub fn adjoint_periodic(
    cycle: &LimitCycle,
    mono: &Monodromy,
    integ: &IntegratorConfig,
) -> Result<AdjointOrbit> {
    let vf = cycle.vector_field();
    let n = cycle.dim();
    let mu = mono.unit_multiplier().re;
    let shifted = mono.matrix.transpose() - DMatrix::identity(n, n) * mu;
    let (mut z, _) = null_vector(&shifted);
    let samples = cycle.grid_size();
    let h = cycle.period() / samples as f64;
    let mut values = vec![DVector::zeros(n); samples + 1];
    values[samples] = z.clone();
    for k in (0..samples).rev() {
        let mut y0 = cycle.sample_state(k + 1).as_slice().to_vec();
        y0.extend_from_slice(z.as_slice());
        let y = integrate_raw(
            |_s, y, dy| adjoint_rhs(vf, n, -1.0, y, dy),
            0.0,
            h,
            &y0,
            integ,
            |_, _, _| {},
        )?;
        z = DVector::from_column_slice(&y[n..]);
        values[k] = z.clone();
    }
    let tangent0 = cycle.sample_tangent(0);
    let pairing = tangent0.dot(&values[0]);
    if pairing.abs() < 1e-8 * tangent0.norm() * values[0].norm() {
        return Err(Error::NonGenericAdjoint { pairing });
    }
    for v in values.iter_mut() {
        *v /= pairing;
    }
    let derivs = values
        .iter()
        .enumerate()
        .map(|(k, z)| {
            let j = vf.jacobian_f(cycle.sample_state(k))?;
            Ok(-(j.transpose() * z))
        })
        .collect::<Result<Vec<_>>>()?;
    let normalization = tangent0.dot(&values[0]);
    Ok(AdjointOrbit {
        period: cycle.period(),
        values,
        derivs,
        normalization,
        raw_pairing: pairing,
    })
}

/// `max_θ |⟨ẋ₀(θ), z₀(θ)⟩ − 1|` over the sample grid.
pub fn perron_check(cycle: &LimitCycle, adj: &AdjointOrbit) -> f64 {
    (0..=cycle.grid_size().min(adj.grid_size()))
        .map(|k| (cycle.sample_tangent(k).dot(adj.sample(k)) - 1.0).abs())
        .fold(0.0, f64::max)
}

/// Everything known about the unperturbed cycle.
#[derive(Debug, Clone)]
pub struct CycleAnalysis {
    pub cycle: LimitCycle,
    pub monodromy: Monodromy,
    pub adjoint: AdjointOrbit,
    pub hypothesis: StabilityHypothesis,
    pub perron_deviation: f64,
}

impl CycleAnalysis {
    pub fn run(
        vf: &VectorFieldPair,
        guess: &DVector<f64>,
        cfg: &CycleConfig,
        integ: &IntegratorConfig,
    ) -> Result<Self> {
        let cycle = find_limit_cycle(vf, guess, cfg, integ)?;
        let monodromy = monodromy(vf, &cycle, integ)?;
        let adjoint = adjoint_periodic(&cycle, &monodromy, integ)?;
        let hypothesis = stability_hypothesis_check(&monodromy, cfg);
        let perron_deviation = perron_check(&cycle, &adjoint);
        Ok(Self {
            cycle,
            monodromy,
            adjoint,
            hypothesis,
            perron_deviation,
        })
    }

    pub fn vector_field(&self) -> &VectorFieldPair {
        self.cycle.vector_field()
    }
}
