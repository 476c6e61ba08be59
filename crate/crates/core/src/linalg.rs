//! Small dense helpers on top of nalgebra.

use nalgebra::DMatrix;

/// Logarithmic norm induced by the Euclidean norm: the largest eigenvalue of
/// the symmetric part. `‖e^{Mt}‖ ≤ e^{μ(M) t}` for `t ≥ 0`.
pub fn log_norm(m: &DMatrix<f64>) -> f64 {
    let sym = (m + m.transpose()) * 0.5;
    sym.symmetric_eigenvalues().max()
}

/// `(e^Z, φ₁(Z), φ₂(Z))` with `φ₁(Z) = ∫₀¹ e^{(1−x)Z} dx` and
/// `φ₂(Z) = ∫₀¹ e^{(1−x)Z} x dx`, read off the exponential of a block matrix.
pub fn phi_functions(z: &DMatrix<f64>) -> (DMatrix<f64>, DMatrix<f64>, DMatrix<f64>) {
    let n = z.nrows();
    let mut big = DMatrix::<f64>::zeros(3 * n, 3 * n);
    big.view_mut((0, 0), (n, n)).copy_from(z);
    for i in 0..n {
        big[(i, n + i)] = 1.0;
        big[(n + i, 2 * n + i)] = 1.0;
    }
    let e = big.exp();
    (
        e.view((0, 0), (n, n)).into_owned(),
        e.view((0, n), (n, n)).into_owned(),
        e.view((0, 2 * n), (n, n)).into_owned(),
    )
}

/// Row-major matrix used in inner loops, where nalgebra's allocations hurt.
#[derive(Debug, Clone, PartialEq)]
pub(crate) struct Dense {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Dense {
    pub fn from_matrix(m: &DMatrix<f64>) -> Self {
        let (rows, cols) = m.shape();
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                data.push(m[(i, j)]);
            }
        }
        Self { rows, cols, data }
    }

    pub fn scaled(mut self, c: f64) -> Self {
        self.data.iter_mut().for_each(|x| *x *= c);
        self
    }

    /// `out = M x`.
    pub fn apply(&self, x: &[f64], out: &mut [f64]) {
        for (i, o) in out.iter_mut().enumerate().take(self.rows) {
            let row = &self.data[i * self.cols..(i + 1) * self.cols];
            *o = row.iter().zip(x).map(|(a, b)| a * b).sum();
        }
    }

    /// `out += M x`.
    pub fn apply_add(&self, x: &[f64], out: &mut [f64]) {
        for (i, o) in out.iter_mut().enumerate().take(self.rows) {
            let row = &self.data[i * self.cols..(i + 1) * self.cols];
            *o += row.iter().zip(x).map(|(a, b)| a * b).sum::<f64>();
        }
    }
}

pub(crate) fn norm(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum::<f64>().sqrt()
}

pub(crate) fn dist(x: &[f64], y: &[f64]) -> f64 {
    x.iter()
        .zip(y)
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        .sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn phi_functions_match_scalar_closed_form() {
        for &z in &[-0.05, -1.0, -3.7, 0.4] {
            let (e, p1, p2) = phi_functions(&DMatrix::from_element(1, 1, z));
            let ee = f64::exp(z);
            assert!((e[(0, 0)] - ee).abs() < 1e-14);
            assert!((p1[(0, 0)] - (ee - 1.0) / z).abs() < 1e-13);
            assert!((p2[(0, 0)] - (ee - 1.0 - z) / (z * z)).abs() < 1e-12);
        }
    }

    #[test]
    fn phi_functions_at_zero() {
        let (e, p1, p2) = phi_functions(&DMatrix::zeros(2, 2));
        assert_eq!(e, DMatrix::identity(2, 2));
        assert!((p1 - DMatrix::identity(2, 2)).norm() < 1e-15);
        assert!((p2 - DMatrix::identity(2, 2) * 0.5).norm() < 1e-15);
    }

    #[test]
    fn log_norm_of_normal_matrix_is_spectral_abscissa() {
        let m = DMatrix::from_row_slice(2, 2, &[-1.0, 0.0, 0.0, -3.0]);
        assert!((log_norm(&m) + 1.0).abs() < 1e-14);
        // non-normal: log-norm exceeds the eigenvalue real part
        let j = DMatrix::from_row_slice(2, 2, &[-1.0, 4.0, 0.0, -1.0]);
        assert!(log_norm(&j) > 0.0);
    }

    #[test]
    fn dense_apply() {
        let m = Dense::from_matrix(&DMatrix::from_row_slice(2, 3, &[1., 2., 3., 4., 5., 6.]));
        let mut out = [0.0; 2];
        m.apply(&[1.0, 0.0, -1.0], &mut out);
        assert_eq!(out, [-2.0, -2.0]);
        m.apply_add(&[1.0, 0.0, -1.0], &mut out);
        assert_eq!(out, [-4.0, -4.0]);
    }
}
