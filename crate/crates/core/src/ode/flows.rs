use nalgebra::{DMatrix, DVector};

use super::{integrate_raw, IntegratorConfig, Trajectory};
use crate::error::{Error, Result};
use crate::linalg::Bilinear;
use crate::vectorfield::VectorFieldPair;

fn check_eps(eps: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&eps) {
        return Err(Error::Config(format!("eps must lie in [0, 1], got {eps}")));
    }
    Ok(())
}

fn check_state(vf: &VectorFieldPair, x: &DVector<f64>) -> Result<()> {
    if x.len() != vf.dim() {
        return Err(Error::Dimension {
            context: "initial state",
            expected: vf.dim(),
            got: x.len(),
        });
    }
    if let Some(index) = x.iter().position(|v| !v.is_finite()) {
        return Err(Error::Evaluation {
            what: "initial state",
            index,
        });
    }
    Ok(())
}

/// Solution of `ẋ = f(x) + ε g(t, x, ε)` on `[t0, t1]`.
pub fn flow(
    vf: &VectorFieldPair,
    t0: f64,
    t1: f64,
    x_init: &DVector<f64>,
    eps: f64,
    cfg: &IntegratorConfig,
) -> Result<Trajectory> {
    check_eps(eps)?;
    check_state(vf, x_init)?;
    let n = vf.dim();
    let (mut ts, mut ys, mut ds) = (Vec::new(), Vec::new(), Vec::new());
    integrate_raw(
        |t, y, dy| {
            let x = DVector::from_column_slice(y);
            dy.copy_from_slice(vf.rhs(t, &x, eps).as_slice());
        },
        t0,
        t1,
        x_init.as_slice(),
        cfg,
        |t, y, dy| {
            ts.push(t);
            ys.push(DVector::from_column_slice(&y[..n]));
            ds.push(DVector::from_column_slice(&dy[..n]));
        },
    )?;
    Ok(Trajectory::new(ts, ys, ds))
}

/// Base flow together with first (and optionally second) derivatives of
/// the flow with respect to the initial state.
#[derive(Debug, Clone)]
pub struct VariationalFlow {
    pub base: Trajectory,
    /// `Y(t)` on the grid of `base`, `Y(t0) = I`.
    pub fundamental: Vec<DMatrix<f64>>,
    /// Second variation `∂²x/∂v²` on the grid of `base`, zero at `t0`.
    pub second_order: Option<Vec<Bilinear>>,
}

impl VariationalFlow {
    pub fn final_fundamental(&self) -> &DMatrix<f64> {
        self.fundamental.last().expect("non-empty")
    }

    pub fn final_second_order(&self) -> Option<&Bilinear> {
        self.second_order.as_ref().and_then(|s| s.last())
    }
}

/// Augmented right-hand side for `[x, Y, S]` with `Y` row-major (`i*n + j`)
/// and `S` indexed `i*n² + j*n + k`.
pub(crate) fn variational_rhs(
    vf: &VectorFieldPair,
    eps: f64,
    order: usize,
    t: f64,
    y: &[f64],
    dy: &mut [f64],
) {
    let n = vf.dim();
    let x = DVector::from_column_slice(&y[..n]);
    dy[..n].copy_from_slice(vf.rhs(t, &x, eps).as_slice());
    let jac = vf
        .rhs_jacobian(t, &x, eps)
        .unwrap_or_else(|_| DMatrix::from_element(n, n, f64::NAN));
    let ym = &y[n..n + n * n];
    for i in 0..n {
        for j in 0..n {
            let mut acc = 0.0;
            for l in 0..n {
                acc += jac[(i, l)] * ym[l * n + j];
            }
            dy[n + i * n + j] = acc;
        }
    }
    if order < 2 {
        return;
    }
    let hess = vf
        .rhs_hessian(t, &x, eps)
        .unwrap_or_else(|_| Bilinear::from_components(vec![DMatrix::from_element(n, n, f64::NAN); n]));
    let off = n + n * n;
    let sm = &y[off..off + n * n * n];
    for i in 0..n {
        let hi = hess.component(i);
        for j in 0..n {
            for k in 0..n {
                let mut acc = 0.0;
                for l in 0..n {
                    acc += jac[(i, l)] * sm[l * n * n + j * n + k];
                }
                for l in 0..n {
                    let ylj = ym[l * n + j];
                    if ylj == 0.0 {
                        continue;
                    }
                    for m in 0..n {
                        acc += hi[(l, m)] * ylj * ym[m * n + k];
                    }
                }
                dy[off + i * n * n + j * n + k] = acc;
            }
        }
    }
}

/// Integrates the base flow with its first (`order = 1`) or first and second
/// (`order = 2`) variational equations.
pub fn flow_variational(
    vf: &VectorFieldPair,
    t0: f64,
    t1: f64,
    x_init: &DVector<f64>,
    eps: f64,
    order: usize,
    cfg: &IntegratorConfig,
) -> Result<VariationalFlow> {
    check_eps(eps)?;
    check_state(vf, x_init)?;
    if !(1..=2).contains(&order) {
        return Err(Error::Capability("variational order must be 1 or 2"));
    }
    let n = vf.dim();
    let size = n + n * n + if order == 2 { n * n * n } else { 0 };
    let mut y0 = vec![0.0; size];
    y0[..n].copy_from_slice(x_init.as_slice());
    for i in 0..n {
        y0[n + i * n + i] = 1.0;
    }
    let (mut ts, mut xs, mut ds, mut fund, mut second) =
        (Vec::new(), Vec::new(), Vec::new(), Vec::new(), Vec::new());
    integrate_raw(
        |t, y, dy| variational_rhs(vf, eps, order, t, y, dy),
        t0,
        t1,
        &y0,
        cfg,
        |t, y, dy| {
            ts.push(t);
            xs.push(DVector::from_column_slice(&y[..n]));
            ds.push(DVector::from_column_slice(&dy[..n]));
            fund.push(DMatrix::from_row_slice(n, n, &y[n..n + n * n]));
            if order == 2 {
                second.push(Bilinear::from_flat(n, &y[n + n * n..]));
            }
        },
    )?;
    Ok(VariationalFlow {
        base: Trajectory::new(ts, xs, ds),
        fundamental: fund,
        second_order: (order == 2).then_some(second),
    })
}

/// `y(t1)` for `ẏ = A(t) y + b(t)`, `y(t0) = y_init`.
pub fn solve_linear_inhomogeneous(
    a: impl Fn(f64) -> DMatrix<f64>,
    b: impl Fn(f64) -> DVector<f64>,
    y_init: &DVector<f64>,
    t0: f64,
    t1: f64,
    cfg: &IntegratorConfig,
) -> Result<DVector<f64>> {
    let y = integrate_raw(
        |t, y, dy| {
            let yv = DVector::from_column_slice(y);
            let r = a(t) * yv + b(t);
            dy.copy_from_slice(r.as_slice());
        },
        t0,
        t1,
        y_init.as_slice(),
        cfg,
        |_, _, _| {},
    )?;
    Ok(DVector::from_vec(y))
}
