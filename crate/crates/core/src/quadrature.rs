//! Gauss–Legendre rules and composite quadrature over fixed breakpoints.

use nalgebra::{DMatrix, SymmetricEigen};

/// `n`-point Gauss–Legendre rule on `[−1, 1]`.
#[derive(Debug, Clone)]
pub struct GaussLegendre {
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
}

impl GaussLegendre {
    /// Golub–Welsch: nodes are the eigenvalues of the Jacobi matrix of the
    /// Legendre recurrence, weights `2·v₀²` from the normalized eigenvectors.
    pub fn new(n: usize) -> Self {
        assert!(n >= 1, "a quadrature rule needs at least one node");
        let mut jac = DMatrix::zeros(n, n);
        for k in 1..n {
            let kf = k as f64;
            let b = kf / (4.0 * kf * kf - 1.0).sqrt();
            jac[(k - 1, k)] = b;
            jac[(k, k - 1)] = b;
        }
        let eig = SymmetricEigen::new(jac);
        let mut pairs: Vec<(f64, f64)> = (0..n)
            .map(|i| (eig.eigenvalues[i], 2.0 * eig.eigenvectors[(0, i)].powi(2)))
            .collect();
        pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
        // Symmetrize to remove eigen-solver asymmetry.
        for i in 0..n / 2 {
            let j = n - 1 - i;
            let x = 0.5 * (pairs[j].0 - pairs[i].0);
            let w = 0.5 * (pairs[i].1 + pairs[j].1);
            pairs[i] = (-x, w);
            pairs[j] = (x, w);
        }
        if n % 2 == 1 {
            pairs[n / 2].0 = 0.0;
        }
        Self {
            nodes: pairs.iter().map(|p| p.0).collect(),
            weights: pairs.iter().map(|p| p.1).collect(),
        }
    }

    pub fn integrate(&self, a: f64, b: f64, mut f: impl FnMut(f64) -> f64) -> f64 {
        let mid = 0.5 * (a + b);
        let half = 0.5 * (b - a);
        half * self
            .nodes
            .iter()
            .zip(&self.weights)
            .map(|(x, w)| w * f(mid + half * x))
            .sum::<f64>()
    }

    /// Sum of the rule applied on every consecutive pair of breakpoints.
    pub fn composite(&self, breaks: &[f64], mut f: impl FnMut(f64) -> f64) -> f64 {
        breaks
            .windows(2)
            .map(|w| self.integrate(w[0], w[1], &mut f))
            .sum()
    }
}

/// `∫` over one period `[θ, θ + T]` of a function built from data sampled on
/// the uniform grid `k·T/m`, split at the grid nodes so every panel sees a
/// smooth integrand. Returns the value with the difference between a 6- and
/// a 9-point rule as error estimate.
pub fn periodic_grid_integral(
    period: f64,
    grid: usize,
    theta: f64,
    mut f: impl FnMut(f64) -> f64,
) -> (f64, f64) {
    let breaks = shifted_breaks(period, grid, theta);
    let coarse = GaussLegendre::new(6).composite(&breaks, &mut f);
    let fine = GaussLegendre::new(9).composite(&breaks, &mut f);
    (fine, (fine - coarse).abs())
}

/// `[θ, grid nodes strictly inside (θ, θ+T), θ+T]`.
fn shifted_breaks(period: f64, grid: usize, theta: f64) -> Vec<f64> {
    let h = period / grid as f64;
    let start = theta;
    let end = theta + period;
    let first = (start / h).floor() as i64 + 1;
    let mut breaks = vec![start];
    let mut k = first;
    loop {
        let node = k as f64 * h;
        if node >= end - 1e-14 * period {
            break;
        }
        if node > start + 1e-14 * period {
            breaks.push(node);
        }
        k += 1;
    }
    breaks.push(end);
    breaks
}
