use std::f64::consts::PI;

use nalgebra::DMatrix;
use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::linalg::eigenvalues;

/// Contour points used by [`riesz_projector`].
pub const RIESZ_POINTS: usize = 64;

/// Spectral projector onto the eigenvalue of `a` enclosed by `|λ| = radius`.
pub fn riesz_projector(a: &DMatrix<f64>, radius: f64) -> Result<DMatrix<f64>> {
    riesz_projector_with(a, radius, RIESZ_POINTS)
}

/// `(1/2πi)∮(λI − A)⁻¹dλ` by the trapezoidal rule on `points` nodes.
///
/// The trapezoidal error for an eigenvalue `μ` behaves like `(|μ|/r)^N`
/// inside the circle and `(r/|μ|)^N` outside, so the radius is rejected when
/// either ratio does not push the error below `1e−12`.
pub fn riesz_projector_with(a: &DMatrix<f64>, radius: f64, points: usize) -> Result<DMatrix<f64>> {
    let n = a.nrows();
    if a.ncols() != n {
        return Err(Error::Dimension {
            context: "riesz projector",
            expected: n,
            got: a.ncols(),
        });
    }
    if !(radius.is_finite() && radius > 0.0) || points < 8 {
        return Err(Error::Config(format!(
            "contour needs a positive radius and at least 8 points (radius {radius}, points {points})"
        )));
    }
    let spectrum = eigenvalues(a);
    let inside: Vec<f64> = spectrum.iter().map(|m| m.norm()).filter(|m| *m < radius).collect();
    let limit = 1e-12f64.powf(1.0 / points as f64);
    // Suggest a circle between the smallest and second-smallest modulus.
    let mut moduli: Vec<f64> = spectrum.iter().map(|m| m.norm()).collect();
    moduli.sort_by(f64::total_cmp);
    let suggested = match moduli.as_slice() {
        [m0, m1, ..] if *m1 > 0.0 => (m0.max(1e-3 * m1) * m1).sqrt(),
        [m0, ..] => 2.0 * m0.max(radius),
        [] => radius,
    };
    for m in spectrum.iter().map(|m| m.norm()) {
        let ratio = if m < radius { m / radius } else { radius / m };
        if ratio > limit {
            return Err(Error::ContourPlacement {
                radius,
                modulus: m,
                suggested,
            });
        }
    }
    if inside.len() != 1 {
        return Err(Error::Multiplicity(inside.len()));
    }
    let ac = a.map(|v| Complex64::new(v, 0.0));
    let mut sum = DMatrix::<Complex64>::zeros(n, n);
    for k in 0..points {
        let phi = 2.0 * PI * k as f64 / points as f64;
        let lambda = Complex64::from_polar(radius, phi);
        let shifted = DMatrix::<Complex64>::identity(n, n) * lambda - &ac;
        let inv = shifted.try_inverse().ok_or(Error::ContourPlacement {
            radius,
            modulus: radius,
            suggested,
        })?;
        // dλ = iλ dφ, so the 1/(2πi) cancels to λ/N.
        sum += inv * (lambda / points as f64);
    }
    Ok(sum.map(|c| c.re))
}
