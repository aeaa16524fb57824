//! Deterministic initial-value integration.
//!
//! Two methods are available: the Dormand–Prince 5(4) embedded pair with a
//! PI step-size controller, and fixed-step classical RK4 for bit-reproducible
//! runs. Both report every accepted step (state and right-hand side) so that
//! callers can build cubic Hermite dense output.

mod flows;
mod trajectory;

pub use flows::{flow, flow_variational, solve_linear_inhomogeneous, VariationalFlow};
pub use trajectory::Trajectory;
pub(crate) use trajectory::hermite as trajectory_hermite;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Method {
    #[serde(rename = "rk45")]
    Rk45,
    #[serde(rename = "rk4-fixed")]
    Rk4Fixed,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IntegratorConfig {
    pub abs_tol: f64,
    pub rel_tol: f64,
    pub method: Method,
    /// Fixed-step RK4: steps per unit of integration time.
    pub rk4_steps: usize,
    pub max_steps: usize,
}

impl Default for IntegratorConfig {
    fn default() -> Self {
        Self {
            abs_tol: 1e-10,
            rel_tol: 1e-10,
            method: Method::Rk45,
            rk4_steps: 2000,
            max_steps: 1_000_000,
        }
    }
}

impl IntegratorConfig {
    pub fn with_tolerance(tol: f64) -> Self {
        Self {
            abs_tol: tol,
            rel_tol: tol,
            ..Self::default()
        }
    }

    pub fn fixed_rk4(steps_per_unit_time: usize) -> Self {
        Self {
            method: Method::Rk4Fixed,
            rk4_steps: steps_per_unit_time,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.abs_tol > 0.0
            && self.rel_tol >= 0.0
            && self.abs_tol.is_finite()
            && self.rel_tol.is_finite();
        if !ok {
            return Err(Error::Config(format!(
                "integrator tolerances must be positive (abs_tol = {}, rel_tol = {})",
                self.abs_tol, self.rel_tol
            )));
        }
        if self.method == Method::Rk4Fixed && self.rk4_steps == 0 {
            return Err(Error::Config("rk4_steps must be positive".into()));
        }
        Ok(())
    }

    /// Short string identifying everything that influences results.
    pub fn signature(&self) -> String {
        match self.method {
            Method::Rk45 => format!("rk45:{:e}:{:e}", self.abs_tol, self.rel_tol),
            Method::Rk4Fixed => format!("rk4-fixed:{}", self.rk4_steps),
        }
    }
}

// Dormand–Prince 5(4) tableau.
const C2: f64 = 1.0 / 5.0;
const C3: f64 = 3.0 / 10.0;
const C4: f64 = 4.0 / 5.0;
const C5: f64 = 8.0 / 9.0;
const A21: f64 = 1.0 / 5.0;
const A31: f64 = 3.0 / 40.0;
const A32: f64 = 9.0 / 40.0;
const A41: f64 = 44.0 / 45.0;
const A42: f64 = -56.0 / 15.0;
const A43: f64 = 32.0 / 9.0;
const A51: f64 = 19372.0 / 6561.0;
const A52: f64 = -25360.0 / 2187.0;
const A53: f64 = 64448.0 / 6561.0;
const A54: f64 = -212.0 / 729.0;
const A61: f64 = 9017.0 / 3168.0;
const A62: f64 = -355.0 / 33.0;
const A63: f64 = 46732.0 / 5247.0;
const A64: f64 = 49.0 / 176.0;
const A65: f64 = -5103.0 / 18656.0;
const B1: f64 = 35.0 / 384.0;
const B3: f64 = 500.0 / 1113.0;
const B4: f64 = 125.0 / 192.0;
const B5: f64 = -2187.0 / 6784.0;
const B6: f64 = 11.0 / 84.0;
const E1: f64 = 71.0 / 57600.0;
const E3: f64 = -71.0 / 16695.0;
const E4: f64 = 71.0 / 1920.0;
const E5: f64 = -17253.0 / 339200.0;
const E6: f64 = 22.0 / 525.0;
const E7: f64 = -1.0 / 40.0;

const SAFETY: f64 = 0.9;
const FAC_MIN: f64 = 0.2;
const FAC_MAX: f64 = 10.0;
const PI_BETA: f64 = 0.04;

/// Integrates `y' = rhs(t, y)` from `t0` to `t1 ≥ t0`.
///
/// `on_step(t, y, y')` is called for the initial point and after every
/// accepted step; the last call is at exactly `t1`.
pub fn integrate_raw<F, O>(
    mut rhs: F,
    t0: f64,
    t1: f64,
    y0: &[f64],
    cfg: &IntegratorConfig,
    mut on_step: O,
) -> Result<Vec<f64>>
where
    F: FnMut(f64, &[f64], &mut [f64]),
    O: FnMut(f64, &[f64], &[f64]),
{
    cfg.validate()?;
    if !(t0.is_finite() && t1.is_finite()) || t1 < t0 {
        return Err(Error::Config(format!(
            "integration interval must satisfy t0 <= t1, got [{t0}, {t1}]"
        )));
    }
    let n = y0.len();
    let mut y = y0.to_vec();
    let mut dy = vec![0.0; n];
    rhs(t0, &y, &mut dy);
    if y.iter().chain(&dy).any(|v| !v.is_finite()) {
        return Err(Error::BlowUp { last_good_t: t0 });
    }
    on_step(t0, &y, &dy);
    if t1 == t0 {
        return Ok(y);
    }
    match cfg.method {
        Method::Rk45 => dopri5(&mut rhs, t0, t1, &mut y, &mut dy, cfg, &mut on_step)?,
        Method::Rk4Fixed => rk4(&mut rhs, t0, t1, &mut y, &mut dy, cfg, &mut on_step)?,
    }
    Ok(y)
}

fn error_norm(err: &[f64], y: &[f64], y_new: &[f64], cfg: &IntegratorConfig) -> f64 {
    let n = err.len() as f64;
    let sum: f64 = err
        .iter()
        .zip(y.iter().zip(y_new))
        .map(|(e, (a, b))| {
            let sc = cfg.abs_tol + cfg.rel_tol * a.abs().max(b.abs());
            (e / sc).powi(2)
        })
        .sum();
    (sum / n).sqrt()
}

fn initial_step<F>(rhs: &mut F, t0: f64, y: &[f64], dy: &[f64], cfg: &IntegratorConfig, span: f64) -> f64
where
    F: FnMut(f64, &[f64], &mut [f64]),
{
    let n = y.len();
    let scale: Vec<f64> = y.iter().map(|v| cfg.abs_tol + cfg.rel_tol * v.abs()).collect();
    let rms = |v: &[f64]| {
        (v.iter().zip(&scale).map(|(a, s)| (a / s).powi(2)).sum::<f64>() / n as f64).sqrt()
    };
    let d0 = rms(y);
    let d1 = rms(dy);
    let mut h0 = if d0 < 1e-5 || d1 < 1e-5 { 1e-6 } else { 0.01 * d0 / d1 };
    h0 = h0.min(span);
    let y1: Vec<f64> = y.iter().zip(dy).map(|(a, b)| a + h0 * b).collect();
    let mut dy1 = vec![0.0; n];
    rhs(t0 + h0, &y1, &mut dy1);
    let diff: Vec<f64> = dy1.iter().zip(dy).map(|(a, b)| a - b).collect();
    let d2 = rms(&diff) / h0;
    let h1 = if d1.max(d2) <= 1e-15 {
        (h0 * 1e-3).max(1e-6)
    } else {
        (0.01 / d1.max(d2)).powf(1.0 / 5.0)
    };
    (100.0 * h0).min(h1).min(span)
}

#[allow(clippy::too_many_arguments)]
fn dopri5<F, O>(
    rhs: &mut F,
    t0: f64,
    t1: f64,
    y: &mut Vec<f64>,
    dy: &mut Vec<f64>,
    cfg: &IntegratorConfig,
    on_step: &mut O,
) -> Result<()>
where
    F: FnMut(f64, &[f64], &mut [f64]),
    O: FnMut(f64, &[f64], &[f64]),
{
    let n = y.len();
    let span = t1 - t0;
    let mut h = initial_step(rhs, t0, y, dy, cfg, span);
    let mut t = t0;
    let mut err_prev: f64 = 1e-4;
    let mut rejected_last = false;
    let (mut k2, mut k3, mut k4, mut k5, mut k6, mut k7) = (
        vec![0.0; n],
        vec![0.0; n],
        vec![0.0; n],
        vec![0.0; n],
        vec![0.0; n],
        vec![0.0; n],
    );
    let mut tmp = vec![0.0; n];
    let mut y_new = vec![0.0; n];
    let mut err = vec![0.0; n];
    let mut steps = 0usize;

    while t < t1 {
        if steps >= cfg.max_steps {
            return Err(Error::MaxSteps(cfg.max_steps));
        }
        steps += 1;
        let last = t + h >= t1 || (t1 - (t + h)) < 1e-12 * span;
        if last {
            h = t1 - t;
        }
        if h <= 16.0 * f64::EPSILON * t.abs().max(1.0) {
            return Err(Error::StepUnderflow { t, h });
        }
        let k1 = &*dy;
        for i in 0..n {
            tmp[i] = y[i] + h * A21 * k1[i];
        }
        rhs(t + C2 * h, &tmp, &mut k2);
        for i in 0..n {
            tmp[i] = y[i] + h * (A31 * k1[i] + A32 * k2[i]);
        }
        rhs(t + C3 * h, &tmp, &mut k3);
        for i in 0..n {
            tmp[i] = y[i] + h * (A41 * k1[i] + A42 * k2[i] + A43 * k3[i]);
        }
        rhs(t + C4 * h, &tmp, &mut k4);
        for i in 0..n {
            tmp[i] = y[i] + h * (A51 * k1[i] + A52 * k2[i] + A53 * k3[i] + A54 * k4[i]);
        }
        rhs(t + C5 * h, &tmp, &mut k5);
        for i in 0..n {
            tmp[i] = y[i]
                + h * (A61 * k1[i] + A62 * k2[i] + A63 * k3[i] + A64 * k4[i] + A65 * k5[i]);
        }
        let t_new = if last { t1 } else { t + h };
        rhs(t + h, &tmp, &mut k6);
        for i in 0..n {
            y_new[i] =
                y[i] + h * (B1 * k1[i] + B3 * k3[i] + B4 * k4[i] + B5 * k5[i] + B6 * k6[i]);
        }
        rhs(t_new, &y_new, &mut k7);
        for i in 0..n {
            err[i] = h
                * (E1 * k1[i] + E3 * k3[i] + E4 * k4[i] + E5 * k5[i] + E6 * k6[i] + E7 * k7[i]);
        }
        let e = error_norm(&err, y, &y_new, cfg);
        if !e.is_finite() || y_new.iter().any(|v| !v.is_finite()) {
            if h < 1e-12 * span {
                return Err(Error::BlowUp { last_good_t: t });
            }
            h *= FAC_MIN;
            rejected_last = true;
            continue;
        }
        if e <= 1.0 {
            t = t_new;
            std::mem::swap(y, &mut y_new);
            std::mem::swap(dy, &mut k7);
            on_step(t, y, dy);
            let mut fac = SAFETY * e.max(1e-10).powf(-(0.2 - 0.75 * PI_BETA)) * err_prev.powf(PI_BETA);
            fac = fac.clamp(FAC_MIN, FAC_MAX);
            if rejected_last {
                fac = fac.min(1.0);
            }
            err_prev = e.max(1e-4);
            h *= fac;
            rejected_last = false;
        } else {
            let fac = (SAFETY * e.powf(-0.2)).max(FAC_MIN);
            h *= fac;
            rejected_last = true;
        }
    }
    Ok(())
}

fn rk4<F, O>(
    rhs: &mut F,
    t0: f64,
    t1: f64,
    y: &mut [f64],
    dy: &mut Vec<f64>,
    cfg: &IntegratorConfig,
    on_step: &mut O,
) -> Result<()>
where
    F: FnMut(f64, &[f64], &mut [f64]),
    O: FnMut(f64, &[f64], &[f64]),
{
    let n = y.len();
    let steps = ((t1 - t0) * cfg.rk4_steps as f64).ceil().max(1.0) as usize;
    if steps > cfg.max_steps {
        return Err(Error::MaxSteps(cfg.max_steps));
    }
    let h = (t1 - t0) / steps as f64;
    let (mut k2, mut k3, mut k4) = (vec![0.0; n], vec![0.0; n], vec![0.0; n]);
    let mut tmp = vec![0.0; n];
    for s in 0..steps {
        let t = t0 + s as f64 * h;
        let t_new = if s + 1 == steps { t1 } else { t0 + (s + 1) as f64 * h };
        let k1 = &*dy;
        for i in 0..n {
            tmp[i] = y[i] + 0.5 * h * k1[i];
        }
        rhs(t + 0.5 * h, &tmp, &mut k2);
        for i in 0..n {
            tmp[i] = y[i] + 0.5 * h * k2[i];
        }
        rhs(t + 0.5 * h, &tmp, &mut k3);
        for i in 0..n {
            tmp[i] = y[i] + h * k3[i];
        }
        rhs(t + h, &tmp, &mut k4);
        for i in 0..n {
            y[i] += h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
        }
        if y.iter().any(|v| !v.is_finite()) {
            return Err(Error::BlowUp { last_good_t: t });
        }
        rhs(t_new, y, dy);
        on_step(t_new, y, dy);
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn oscillator(_t: f64, y: &[f64], dy: &mut [f64]) {
        dy[0] = y[1];
        dy[1] = -y[0];
    }

    #[test]
    fn dopri_harmonic_oscillator_full_period() {
        let cfg = IntegratorConfig::default();
        let tau = 2.0 * std::f64::consts::PI;
        let y = integrate_raw(oscillator, 0.0, tau, &[1.0, 0.0], &cfg, |_, _, _| {}).unwrap();
        assert!((y[0] - 1.0).abs() < 1e-9 && y[1].abs() < 1e-9, "{y:?}");
    }

    #[test]
    fn rk4_fourth_order_convergence() {
        let run = |steps| {
            let cfg = IntegratorConfig::fixed_rk4(steps);
            let y = integrate_raw(oscillator, 0.0, 1.0, &[1.0, 0.0], &cfg, |_, _, _| {}).unwrap();
            ((y[0] - 1f64.cos()).powi(2) + (y[1] + 1f64.sin()).powi(2)).sqrt()
        };
        let ratio = run(20) / run(40);
        assert!((ratio.log2() - 4.0).abs() < 0.1, "ratio {ratio}");
    }

    #[test]
    fn last_step_lands_on_endpoint() {
        let mut last = f64::NAN;
        integrate_raw(oscillator, 0.25, 3.3, &[1.0, 0.0], &IntegratorConfig::default(), |t, _, _| {
            last = t
        })
        .unwrap();
        assert_eq!(last, 3.3);
    }

    #[test]
    fn empty_interval_returns_initial_state() {
        let mut calls = 0;
        let y = integrate_raw(oscillator, 1.0, 1.0, &[0.5, 0.25], &IntegratorConfig::default(), |_, _, _| {
            calls += 1
        })
        .unwrap();
        assert_eq!(y, vec![0.5, 0.25]);
        assert_eq!(calls, 1);
    }

    #[test]
    fn finite_time_blowup_is_reported() {
        // y' = y², y(0) = 1 explodes at t = 1.
        let r = integrate_raw(
            |_t, y: &[f64], dy: &mut [f64]| dy[0] = y[0] * y[0],
            0.0,
            2.0,
            &[1.0],
            &IntegratorConfig::default(),
            |_, _, _| {},
        );
        assert!(
            matches!(r, Err(Error::BlowUp { .. }) | Err(Error::StepUnderflow { .. }) | Err(Error::MaxSteps(_))),
            "{r:?}"
        );
    }

    #[test]
    fn reversed_interval_rejected() {
        let r = integrate_raw(oscillator, 1.0, 0.0, &[1.0, 0.0], &IntegratorConfig::default(), |_, _, _| {});
        assert!(matches!(r, Err(Error::Config(_))));
    }
}
