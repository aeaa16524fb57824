//! Small dense linear-algebra helpers: symmetric bilinear maps, null vectors,
//! spectra of general real matrices.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

/// A bilinear map `Rⁿ × Rⁿ → Rⁿ`, stored as one `n × n` matrix per output
/// component: `B(a, b)_i = aᵀ Tᵢ b`.
///
/// Second derivatives (of a vector field or of a flow) are represented this
/// way; for them `Tᵢ` is symmetric.
#[derive(Debug, Clone, PartialEq)]
pub struct Bilinear {
    components: Vec<DMatrix<f64>>,
}

impl Bilinear {
    pub fn zeros(n: usize) -> Self {
        Self {
            components: vec![DMatrix::zeros(n, n); n],
        }
    }

    pub fn from_components(components: Vec<DMatrix<f64>>) -> Self {
        let n = components.len();
        debug_assert!(components.iter().all(|m| m.nrows() == n && m.ncols() == n));
        Self { components }
    }

    /// Builds from a flat slice indexed as `[i][j][k]` (row-major over the
    /// three indices).
    pub fn from_flat(n: usize, data: &[f64]) -> Self {
        assert_eq!(data.len(), n * n * n);
        let components = (0..n)
            .map(|i| DMatrix::from_fn(n, n, |j, k| data[i * n * n + j * n + k]))
            .collect();
        Self { components }
    }

    pub fn write_flat(&self, out: &mut [f64]) {
        let n = self.dim();
        for (i, m) in self.components.iter().enumerate() {
            for j in 0..n {
                for k in 0..n {
                    out[i * n * n + j * n + k] = m[(j, k)];
                }
            }
        }
    }

    pub fn dim(&self) -> usize {
        self.components.len()
    }

    pub fn component(&self, i: usize) -> &DMatrix<f64> {
        &self.components[i]
    }

    pub fn component_mut(&mut self, i: usize) -> &mut DMatrix<f64> {
        &mut self.components[i]
    }

    pub fn apply(&self, a: &DVector<f64>, b: &DVector<f64>) -> DVector<f64> {
        DVector::from_iterator(self.dim(), self.components.iter().map(|m| a.dot(&(m * b))))
    }

    /// The linear map `b ↦ B(a, b)`.
    pub fn partial(&self, a: &DVector<f64>) -> DMatrix<f64> {
        let n = self.dim();
        let mut out = DMatrix::zeros(n, n);
        for (i, m) in self.components.iter().enumerate() {
            let row = a.transpose() * m;
            out.set_row(i, &row);
        }
        out
    }

    /// Largest entrywise `|Tᵢ − Tᵢᵀ|`.
    pub fn symmetry_defect(&self) -> f64 {
        self.components
            .iter()
            .map(|m| (m - m.transpose()).amax())
            .fold(0.0, f64::max)
    }

    pub fn symmetrized(&self) -> Self {
        Self {
            components: self
                .components
                .iter()
                .map(|m| (m + m.transpose()) * 0.5)
                .collect(),
        }
    }

    pub fn scale(&self, s: f64) -> Self {
        Self {
            components: self.components.iter().map(|m| m * s).collect(),
        }
    }

    pub fn add(&self, other: &Bilinear) -> Self {
        Self {
            components: self
                .components
                .iter()
                .zip(&other.components)
                .map(|(a, b)| a + b)
                .collect(),
        }
    }

    /// `L ∘ B`, i.e. `(a, b) ↦ L B(a, b)`.
    pub fn left_compose(&self, l: &DMatrix<f64>) -> Self {
        let n = self.dim();
        let components = (0..n)
            .map(|i| {
                let mut acc = DMatrix::zeros(n, n);
                for (k, m) in self.components.iter().enumerate() {
                    acc += m * l[(i, k)];
                }
                acc
            })
            .collect();
        Self { components }
    }

    pub fn amax(&self) -> f64 {
        self.components.iter().map(|m| m.amax()).fold(0.0, f64::max)
    }
}

pub fn singular_values(m: &DMatrix<f64>) -> DVector<f64> {
    m.clone().svd(false, false).singular_values
}

pub fn smallest_singular_value(m: &DMatrix<f64>) -> f64 {
    singular_values(m).min()
}

/// Unit vector spanning the (numerical) kernel of a square matrix: the right
/// singular vector of the smallest singular value.
pub fn null_vector(m: &DMatrix<f64>) -> (DVector<f64>, f64) {
    let svd = m.clone().svd(false, true);
    let v_t = svd.v_t.expect("requested V^T");
    let (idx, sigma) = svd
        .singular_values
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.total_cmp(b.1))
        .map(|(i, s)| (i, *s))
        .expect("non-empty matrix");
    (v_t.row(idx).transpose(), sigma)
}

/// Complex null vector of `m − μI`.
pub fn eigenvector(m: &DMatrix<f64>, mu: Complex64) -> DVector<Complex64> {
    let n = m.nrows();
    let shifted = DMatrix::from_fn(n, n, |i, j| {
        let diag = if i == j { mu } else { Complex64::new(0.0, 0.0) };
        Complex64::new(m[(i, j)], 0.0) - diag
    });
    let svd = shifted.svd(false, true);
    let v_t = svd.v_t.expect("requested V^T");
    let idx = svd
        .singular_values
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.total_cmp(b.1))
        .map(|(i, _)| i)
        .expect("non-empty matrix");
    v_t.row(idx).adjoint()
}

pub fn eigenvalues(m: &DMatrix<f64>) -> Vec<Complex64> {
    m.complex_eigenvalues().iter().copied().collect()
}

/// Real part of a complex vector rotated so that its largest entry is real
/// and positive, then normalized.
pub fn realify(v: &DVector<Complex64>) -> DVector<f64> {
    let pivot = v
        .iter()
        .copied()
        .max_by(|a, b| a.norm().total_cmp(&b.norm()))
        .unwrap_or(Complex64::new(1.0, 0.0));
    let phase = if pivot.norm() > 0.0 {
        pivot.conj() / pivot.norm()
    } else {
        Complex64::new(1.0, 0.0)
    };
    let re = v.map(|c| (c * phase).re);
    let norm = re.norm();
    if norm > 0.0 {
        re / norm
    } else {
        re
    }
}

/// Angle between two lines (sign-insensitive).
pub fn line_angle(a: &DVector<f64>, b: &DVector<f64>) -> f64 {
    let c = (a.dot(b) / (a.norm() * b.norm())).abs().min(1.0);
    c.acos()
}

/// Angle between two lines (sign-insensitive), robust for tiny angles.
pub fn small_line_angle(a: &DVector<f64>, b: &DVector<f64>) -> f64 {
    let ua = a / a.norm();
    let mut ub = b / b.norm();
    if ua.dot(&ub) < 0.0 {
        ub = -ub;
    }
    2.0 * ((&ua - &ub).norm() / 2.0).min(1.0).asin()
}

/// Least-squares slope of `log(err)` against `log(x)`.
pub fn loglog_slope(x: &[f64], err: &[f64]) -> Option<f64> {
    let pts: Vec<(f64, f64)> = x
        .iter()
        .zip(err)
        .filter(|(a, b)| **a > 0.0 && **b > 0.0 && a.is_finite() && b.is_finite())
        .map(|(a, b)| (a.ln(), b.ln()))
        .collect();
    if pts.len() < 2 {
        return None;
    }
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    (sxx > 0.0).then(|| sxy / sxx)
}
