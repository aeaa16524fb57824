use nalgebra::DVector;

use crate::error::{Error, Result};

/// Accepted integration steps with cubic Hermite dense output.
#[derive(Debug, Clone)]
pub struct Trajectory {
    times: Vec<f64>,
    states: Vec<DVector<f64>>,
    derivs: Vec<DVector<f64>>,
}

impl Trajectory {
    pub(crate) fn new(times: Vec<f64>, states: Vec<DVector<f64>>, derivs: Vec<DVector<f64>>) -> Self {
        debug_assert!(!times.is_empty());
        debug_assert!(times.windows(2).all(|w| w[0] < w[1]));
        Self {
            times,
            states,
            derivs,
        }
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn states(&self) -> &[DVector<f64>] {
        &self.states
    }

    pub fn derivs(&self) -> &[DVector<f64>] {
        &self.derivs
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn t0(&self) -> f64 {
        self.times[0]
    }

    pub fn t1(&self) -> f64 {
        *self.times.last().expect("non-empty trajectory")
    }

    pub fn final_state(&self) -> &DVector<f64> {
        self.states.last().expect("non-empty trajectory")
    }

    /// Interpolation order of the dense output.
    pub fn interpolation_order(&self) -> usize {
        3
    }

    /// Dense evaluation; exact at grid points.
    pub fn eval(&self, t: f64) -> Result<DVector<f64>> {
        let (lo, hi) = (self.t0(), self.t1());
        if !(t >= lo && t <= hi) {
            return Err(Error::OutOfRange { t, lo, hi });
        }
        let k = match self.times.binary_search_by(|s| s.total_cmp(&t)) {
            Ok(k) => return Ok(self.states[k].clone()),
            Err(k) => k - 1,
        };
        Ok(hermite(
            self.times[k],
            self.times[k + 1],
            &self.states[k],
            &self.states[k + 1],
            &self.derivs[k],
            &self.derivs[k + 1],
            t,
        ))
    }
}

/// Cubic Hermite interpolant through `(ta, ya, da)` and `(tb, yb, db)`.
pub(crate) fn hermite(
    ta: f64,
    tb: f64,
    ya: &DVector<f64>,
    yb: &DVector<f64>,
    da: &DVector<f64>,
    db: &DVector<f64>,
    t: f64,
) -> DVector<f64> {
    let h = tb - ta;
    let s = (t - ta) / h;
    let s2 = s * s;
    let s3 = s2 * s;
    let h00 = 2.0 * s3 - 3.0 * s2 + 1.0;
    let h10 = s3 - 2.0 * s2 + s;
    let h01 = -2.0 * s3 + 3.0 * s2;
    let h11 = s3 - s2;
    ya * h00 + da * (h10 * h) + yb * h01 + db * (h11 * h)
}
