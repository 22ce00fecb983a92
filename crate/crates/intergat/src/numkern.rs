//! Dense f64 matrix kernel and the per-operation backward rules used by the
//! model. Everything here is plain row-major storage; no broadcasting, no
//! sparse formats. Each differentiable forward op has a matching `*_backward`
//! whose output is checked against central finite differences in the tests.

use std::collections::HashMap;
use std::fmt;

use serde::{Deserialize, Serialize};

/// Dense row-major matrix of f64.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Mat {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

#[derive(Debug, thiserror::Error)]
pub enum KernError {
    #[error("dimension mismatch: left is {0}x{1}, right is {2}x{3}")]
    Shape(usize, usize, usize, usize),
    #[error("gradient requested for unrecorded tensor `{0}`")]
    NotRecorded(String),
}

impl fmt::Display for Mat {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for r in 0..self.rows {
            for c in 0..self.cols {
                if c > 0 {
                    write!(f, " ")?;
                }
                write!(f, "{:.6}", self[(r, c)])?;
            }
            writeln!(f)?;
        }
        Ok(())
    }
}

impl Mat {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Mat {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        assert_eq!(data.len(), rows * cols, "data length must be rows*cols");
        Mat { rows, cols, data }
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Self {
        let r = rows.len();
        let c = if r == 0 { 0 } else { rows[0].len() };
        let mut data = Vec::with_capacity(r * c);
        for row in rows {
            assert_eq!(row.len(), c, "ragged rows");
            data.extend_from_slice(row);
        }
        Mat { rows: r, cols: c, data }
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut m = Mat::zeros(rows, cols);
        for r in 0..rows {
            for c in 0..cols {
                m[(r, c)] = f(r, c);
            }
        }
        m
    }

    pub fn identity(n: usize) -> Self {
        Mat::from_fn(n, n, |r, c| if r == c { 1.0 } else { 0.0 })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    pub fn transpose(&self) -> Mat {
        Mat::from_fn(self.cols, self.rows, |r, c| self[(c, r)])
    }

    /// Checked matrix product.
    pub fn matmul(&self, other: &Mat) -> Result<Mat, KernError> {
        if self.cols != other.rows {
            return Err(KernError::Shape(self.rows, self.cols, other.rows, other.cols));
        }
        Ok(self.dot(other))
    }

    /// Matrix product; panics on mismatched inner dimensions. Internal model
    /// code constructs shapes by invariant and uses this directly.
    pub fn dot(&self, other: &Mat) -> Mat {
        assert_eq!(
            self.cols, other.rows,
            "dot: {}x{} by {}x{}",
            self.rows, self.cols, other.rows, other.cols
        );
        let mut out = Mat::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            for k in 0..self.cols {
                let aik = self.data[i * self.cols + k];
                if aik == 0.0 {
                    continue;
                }
                let brow = &other.data[k * other.cols..(k + 1) * other.cols];
                let orow = &mut out.data[i * other.cols..(i + 1) * other.cols];
                for (o, b) in orow.iter_mut().zip(brow) {
                    *o += aik * b;
                }
            }
        }
        out
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Mat {
        Mat {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|&x| f(x)).collect(),
        }
    }

    pub fn zip(&self, other: &Mat, f: impl Fn(f64, f64) -> f64) -> Mat {
        assert_eq!(self.shape(), other.shape(), "zip shape mismatch");
        Mat {
            rows: self.rows,
            cols: self.cols,
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        }
    }

    pub fn add(&self, other: &Mat) -> Mat {
        self.zip(other, |a, b| a + b)
    }

    pub fn sub(&self, other: &Mat) -> Mat {
        self.zip(other, |a, b| a - b)
    }

    pub fn hadamard(&self, other: &Mat) -> Mat {
        self.zip(other, |a, b| a * b)
    }

    pub fn scale(&self, s: f64) -> Mat {
        self.map(|x| s * x)
    }

    pub fn add_assign(&mut self, other: &Mat) {
        assert_eq!(self.shape(), other.shape(), "add_assign shape mismatch");
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }

    pub fn scale_assign(&mut self, s: f64) {
        for a in self.data.iter_mut() {
            *a *= s;
        }
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.data.iter().map(|x| x * x).sum::<f64>().sqrt()
    }

    pub fn abs_sum(&self) -> f64 {
        self.data.iter().map(|x| x.abs()).sum()
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0f64, |m, x| m.max(x.abs()))
    }

    pub fn trace(&self) -> f64 {
        assert_eq!(self.rows, self.cols, "trace of non-square matrix");
        (0..self.rows).map(|i| self[(i, i)]).sum()
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    /// ½(M + Mᵀ). Exact symmetry: (i,j) and (j,i) are computed from the same
    /// commutative sum.
    pub fn symmetrize(&self) -> Mat {
        assert_eq!(self.rows, self.cols, "symmetrize of non-square matrix");
        Mat::from_fn(self.rows, self.cols, |r, c| 0.5 * (self[(r, c)] + self[(c, r)]))
    }

    pub fn column(&self, c: usize) -> Vec<f64> {
        (0..self.rows).map(|r| self[(r, c)]).collect()
    }

    /// Concatenate matrices along the column axis; all must share row count.
    pub fn hcat(parts: &[&Mat]) -> Mat {
        assert!(!parts.is_empty());
        let rows = parts[0].rows;
        let cols: usize = parts.iter().map(|p| p.cols).sum();
        let mut out = Mat::zeros(rows, cols);
        for r in 0..rows {
            let mut off = 0;
            for p in parts {
                assert_eq!(p.rows, rows, "hcat row mismatch");
                out.data[r * cols + off..r * cols + off + p.cols].copy_from_slice(p.row(r));
                off += p.cols;
            }
        }
        out
    }

    /// Slice columns [start, start+len).
    pub fn col_slice(&self, start: usize, len: usize) -> Mat {
        assert!(start + len <= self.cols);
        Mat::from_fn(self.rows, len, |r, c| self[(r, start + c)])
    }
}

impl std::ops::Index<(usize, usize)> for Mat {
    type Output = f64;
    fn index(&self, (r, c): (usize, usize)) -> &f64 {
        &self.data[r * self.cols + c]
    }
}

impl std::ops::IndexMut<(usize, usize)> for Mat {
    fn index_mut(&mut self, (r, c): (usize, usize)) -> &mut f64 {
        &mut self.data[r * self.cols + c]
    }
}

// ---------------------------------------------------------------------------
// Elementwise activations
// ---------------------------------------------------------------------------

pub fn elu(m: &Mat, alpha: f64) -> Mat {
    m.map(|x| if x > 0.0 { x } else { alpha * (x.exp() - 1.0) })
}

/// d/dx elu: 1 for x>0, alpha·eˣ = y + alpha otherwise (y is the forward output).
pub fn elu_backward(out: &Mat, alpha: f64, grad: &Mat) -> Mat {
    out.zip(grad, |y, g| if y > 0.0 { g } else { g * (y + alpha) })
}

pub fn leaky_relu(m: &Mat, slope: f64) -> Mat {
    m.map(|x| if x > 0.0 { x } else { slope * x })
}

pub fn leaky_relu_backward(input: &Mat, slope: f64, grad: &Mat) -> Mat {
    input.zip(grad, |x, g| if x > 0.0 { g } else { slope * g })
}

pub fn sigmoid(m: &Mat) -> Mat {
    m.map(|x| 1.0 / (1.0 + (-x).exp()))
}

pub fn tanh_mat(m: &Mat) -> Mat {
    m.map(f64::tanh)
}

// ---------------------------------------------------------------------------
// Row-wise softmax and layer norm
// ---------------------------------------------------------------------------

/// Row-wise softmax with per-row max subtraction.
pub fn row_softmax(m: &Mat) -> Mat {
    let mut out = m.clone();
    for r in 0..m.rows() {
        let row = &mut out.data[r * m.cols..(r + 1) * m.cols];
        let mx = row.iter().fold(f64::NEG_INFINITY, |a, &b| a.max(b));
        let mut sum = 0.0;
        for x in row.iter_mut() {
            *x = (*x - mx).exp();
            sum += *x;
        }
        for x in row.iter_mut() {
            *x /= sum;
        }
    }
    out
}

/// Backward through row_softmax given the forward output `y`:
/// dx_i = y_i (g_i − Σ_j y_j g_j), per row.
pub fn row_softmax_backward(y: &Mat, grad: &Mat) -> Mat {
    assert_eq!(y.shape(), grad.shape());
    let mut out = Mat::zeros(y.rows(), y.cols());
    for r in 0..y.rows() {
        let yr = y.row(r);
        let gr = grad.row(r);
        let dot: f64 = yr.iter().zip(gr).map(|(a, b)| a * b).sum();
        for c in 0..y.cols() {
            out[(r, c)] = yr[c] * (gr[c] - dot);
        }
    }
    out
}

/// Per-row layer norm with no learned affine: (x − μ) / √(σ² + eps),
/// population variance. Constant rows map to zeros.
pub fn layer_norm_rows(m: &Mat, eps: f64) -> Mat {
    let n = m.cols() as f64;
    let mut out = m.clone();
    for r in 0..m.rows() {
        let row = &mut out.data[r * m.cols..(r + 1) * m.cols];
        let mean = row.iter().sum::<f64>() / n;
        let var = row.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
        let inv = 1.0 / (var + eps).sqrt();
        for x in row.iter_mut() {
            *x = (*x - mean) * inv;
        }
    }
    out
}

/// Backward through layer_norm_rows given the forward *input* `x`:
/// dx = inv_std · (g − mean(g) − x̂ · mean(g ⊙ x̂)), per row.
pub fn layer_norm_rows_backward(x: &Mat, eps: f64, grad: &Mat) -> Mat {
    assert_eq!(x.shape(), grad.shape());
    let n = x.cols() as f64;
    let mut out = Mat::zeros(x.rows(), x.cols());
    for r in 0..x.rows() {
        let xr = x.row(r);
        let gr = grad.row(r);
        let mean = xr.iter().sum::<f64>() / n;
        let var = xr.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        let inv = 1.0 / (var + eps).sqrt();
        let xhat: Vec<f64> = xr.iter().map(|v| (v - mean) * inv).collect();
        let gmean = gr.iter().sum::<f64>() / n;
        let gxmean = gr.iter().zip(&xhat).map(|(g, h)| g * h).sum::<f64>() / n;
        for c in 0..x.cols() {
            out[(r, c)] = inv * (gr[c] - gmean - xhat[c] * gxmean);
        }
    }
    out
}

/// Backward through C = A·B: (dA, dB) = (G·Bᵀ, Aᵀ·G).
pub fn matmul_backward(a: &Mat, b: &Mat, grad: &Mat) -> (Mat, Mat) {
    (grad.dot(&b.transpose()), a.transpose().dot(grad))
}

// ---------------------------------------------------------------------------
// Gradient bookkeeping
// ---------------------------------------------------------------------------

/// Named gradient accumulator; one entry per learnable parameter, shape
/// matching the owner.
#[derive(Debug, Default, Clone)]
pub struct GradStore {
    grads: HashMap<String, Mat>,
}

impl GradStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn accumulate(&mut self, name: &str, grad: Mat) {
        match self.grads.get_mut(name) {
            Some(g) => {
                assert_eq!(g.shape(), grad.shape(), "gradient shape drift for {name}");
                g.add_assign(&grad);
            }
            None => {
                self.grads.insert(name.to_string(), grad);
            }
        }
    }

    pub fn get(&self, name: &str) -> Result<&Mat, KernError> {
        self.grads
            .get(name)
            .ok_or_else(|| KernError::NotRecorded(name.to_string()))
    }

    pub fn take(&mut self, name: &str) -> Option<Mat> {
        self.grads.remove(name)
    }

    pub fn names(&self) -> impl Iterator<Item = &String> {
        self.grads.keys()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Mat)> {
        self.grads.iter()
    }

    pub fn scale_all(&mut self, s: f64) {
        for g in self.grads.values_mut() {
            g.scale_assign(s);
        }
    }

    pub fn merge(&mut self, other: GradStore) {
        for (name, g) in other.grads {
            self.accumulate(&name, g);
        }
    }

    pub fn first_non_finite(&self) -> Option<&String> {
        self.grads.iter().find(|(_, g)| !g.is_finite()).map(|(n, _)| n)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn randmat(rng: &mut ChaCha8Rng, r: usize, c: usize) -> Mat {
        Mat::from_fn(r, c, |_, _| rng.random_range(-1.0..1.0))
    }

    // Triple-loop brute-force product, independent of Mat::dot.
    fn matmul_oracle(a: &Mat, b: &Mat) -> Mat {
        let mut out = Mat::zeros(a.rows(), b.cols());
        for i in 0..a.rows() {
            for j in 0..b.cols() {
                let mut s = 0.0;
                for k in 0..a.cols() {
                    s += a[(i, k)] * b[(k, j)];
                }
                out[(i, j)] = s;
            }
        }
        out
    }

    #[test]
    fn matmul_identity() {
        let m = Mat::from_rows(&[vec![3.0, -1.0], vec![0.5, 2.0]]);
        let i2 = Mat::identity(2);
        assert_eq!(i2.matmul(&m).unwrap(), m);
    }

    #[test]
    fn matmul_hand_case() {
        let a = Mat::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0]]);
        let b = Mat::from_rows(&[vec![0.0], vec![1.0]]);
        let c = a.matmul(&b).unwrap();
        assert_eq!(c.data(), &[2.0, 4.0]);
    }

    #[test]
    fn matmul_matches_triple_loop() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let a = randmat(&mut rng, 5, 3);
        let b = randmat(&mut rng, 3, 4);
        let got = a.matmul(&b).unwrap();
        let want = matmul_oracle(&a, &b);
        assert!(got.sub(&want).max_abs() <= 1e-12);
    }

    #[test]
    fn matmul_shape_error_names_shapes() {
        let a = Mat::zeros(2, 3);
        let b = Mat::zeros(2, 2);
        let err = a.matmul(&b).unwrap_err().to_string();
        assert!(err.contains("2x3") && err.contains("2x2"), "{err}");
    }

    #[test]
    fn matmul_associativity() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..10 {
            let a = randmat(&mut rng, 4, 3);
            let b = randmat(&mut rng, 3, 5);
            let c = randmat(&mut rng, 5, 2);
            let left = a.dot(&b).dot(&c);
            let right = a.dot(&b.dot(&c));
            assert!(left.sub(&right).max_abs() <= 1e-9);
        }
    }

    #[test]
    fn softmax_uniform_row() {
        let y = row_softmax(&Mat::from_rows(&[vec![0.0, 0.0, 0.0]]));
        for &v in y.data() {
            assert!((v - 1.0 / 3.0).abs() < 1e-12);
        }
    }

    #[test]
    fn softmax_no_overflow() {
        let y = row_softmax(&Mat::from_rows(&[vec![1000.0, 0.0]]));
        assert!(y.is_finite());
        assert!(y[(0, 0)] > 0.999999);
        assert!(y[(0, 1)] < 1e-6);
    }

    // Direct exp/sum in extended accumulation order, no max subtraction.
    fn softmax_oracle(m: &Mat) -> Mat {
        let mut out = m.clone();
        for r in 0..m.rows() {
            let exps: Vec<f64> = m.row(r).iter().map(|&x| x.exp()).collect();
            let sum: f64 = exps.iter().sum();
            for c in 0..m.cols() {
                out[(r, c)] = exps[c] / sum;
            }
        }
        out
    }

    #[test]
    fn softmax_matches_direct_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let m = randmat(&mut rng, 4, 4);
        let got = row_softmax(&m);
        let want = softmax_oracle(&m);
        assert!(got.sub(&want).max_abs() <= 1e-12);
        for r in 0..4 {
            let s: f64 = got.row(r).iter().sum();
            assert!((s - 1.0).abs() <= 1e-9);
        }
    }

    #[test]
    fn softmax_shift_invariant() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let m = randmat(&mut rng, 3, 5);
        let shifted = m.map(|x| x + 7.25);
        assert!(row_softmax(&m).sub(&row_softmax(&shifted)).max_abs() <= 1e-9);
    }

    #[test]
    fn layer_norm_constant_row() {
        let y = layer_norm_rows(&Mat::from_rows(&[vec![5.0, 5.0, 5.0]]), 1e-5);
        assert!(y.max_abs() <= 1e-9);
    }

    #[test]
    fn layer_norm_two_point() {
        let y = layer_norm_rows(&Mat::from_rows(&[vec![0.0, 2.0]]), 0.0);
        assert!((y[(0, 0)] + 1.0).abs() <= 1e-9);
        assert!((y[(0, 1)] - 1.0).abs() <= 1e-9);
    }

    #[test]
    fn layer_norm_row_stats() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let m = randmat(&mut rng, 6, 8);
        let y = layer_norm_rows(&m, 1e-9);
        for r in 0..6 {
            let row = y.row(r);
            let mean: f64 = row.iter().sum::<f64>() / 8.0;
            let var: f64 = row.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / 8.0;
            assert!(mean.abs() < 1e-9);
            assert!((var - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn layer_norm_affine_invariant() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let m = randmat(&mut rng, 3, 6);
        let t = m.map(|x| 2.5 * x - 1.75);
        let a = layer_norm_rows(&m, 1e-12);
        let b = layer_norm_rows(&t, 1e-12);
        assert!(a.sub(&b).max_abs() <= 1e-6);
    }

    #[test]
    fn elu_points() {
        let m = Mat::from_rows(&[vec![0.0, 2.0, -1.0]]);
        let y = elu(&m, 1.0);
        assert_eq!(y[(0, 0)], 0.0);
        assert_eq!(y[(0, 1)], 2.0);
        assert!((y[(0, 2)] - ((-1.0f64).exp() - 1.0)).abs() <= 1e-12);
    }

    #[test]
    fn leaky_relu_points() {
        let m = Mat::from_rows(&[vec![3.0, -2.0]]);
        let y = leaky_relu(&m, 0.2);
        assert_eq!(y[(0, 0)], 3.0);
        assert!((y[(0, 1)] + 0.4).abs() <= 1e-15);
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let m = randmat(&mut rng, 4, 4);
        let y = leaky_relu(&m, 0.2);
        for (x, v) in m.data().iter().zip(y.data()) {
            let want = if *x > 0.0 { *x } else { 0.2 * x };
            assert_eq!(*v, want);
        }
    }

    // Central finite differences on a scalar function of one matrix.
    fn fd_grad(x: &Mat, mut f: impl FnMut(&Mat) -> f64) -> Mat {
        let h = 1e-6;
        let mut g = Mat::zeros(x.rows(), x.cols());
        for i in 0..x.data().len() {
            let mut xp = x.clone();
            xp.data_mut()[i] += h;
            let mut xm = x.clone();
            xm.data_mut()[i] -= h;
            g.data_mut()[i] = (f(&xp) - f(&xm)) / (2.0 * h);
        }
        g
    }

    fn assert_grad_close(analytic: &Mat, fd: &Mat, tol: f64) {
        for (a, b) in analytic.data().iter().zip(fd.data()) {
            let rel = (a - b).abs() / (b.abs() + 1e-8);
            assert!(rel <= tol, "analytic {a} vs fd {b} (rel {rel})");
        }
    }

    #[test]
    fn softmax_backward_fd() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let x = randmat(&mut rng, 3, 4);
        let w = randmat(&mut rng, 3, 4); // fixed weights for a scalar loss
        let loss = |m: &Mat| row_softmax(m).hadamard(&w).sum();
        let y = row_softmax(&x);
        let analytic = row_softmax_backward(&y, &w);
        assert_grad_close(&analytic, &fd_grad(&x, loss), 1e-4);
    }

    #[test]
    fn softmax_then_sum_has_zero_gradient() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let x = randmat(&mut rng, 3, 4);
        let y = row_softmax(&x);
        let g = row_softmax_backward(&y, &Mat::from_fn(3, 4, |_, _| 1.0));
        assert!(g.max_abs() <= 1e-12);
    }

    #[test]
    fn layer_norm_backward_fd() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let x = randmat(&mut rng, 3, 5);
        let w = randmat(&mut rng, 3, 5);
        let eps = 1e-5;
        let loss = |m: &Mat| layer_norm_rows(m, eps).hadamard(&w).sum();
        let analytic = layer_norm_rows_backward(&x, eps, &w);
        assert_grad_close(&analytic, &fd_grad(&x, loss), 1e-4);
    }

    #[test]
    fn matmul_backward_fd() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let a = randmat(&mut rng, 3, 4);
        let b = randmat(&mut rng, 4, 2);
        let w = randmat(&mut rng, 3, 2);
        let (da, db) = matmul_backward(&a, &b, &w);
        assert_grad_close(&da, &fd_grad(&a, |m| m.dot(&b).hadamard(&w).sum()), 1e-5);
        assert_grad_close(&db, &fd_grad(&b, |m| a.dot(m).hadamard(&w).sum()), 1e-5);
    }

    #[test]
    fn elu_backward_fd() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let x = randmat(&mut rng, 4, 4);
        let w = randmat(&mut rng, 4, 4);
        let y = elu(&x, 1.0);
        let analytic = elu_backward(&y, 1.0, &w);
        assert_grad_close(&analytic, &fd_grad(&x, |m| elu(m, 1.0).hadamard(&w).sum()), 1e-4);
    }

    #[test]
    fn grad_store_not_recorded() {
        let g = GradStore::new();
        assert!(matches!(g.get("missing"), Err(KernError::NotRecorded(_))));
    }

    #[test]
    fn symmetrize_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let m = randmat(&mut rng, 6, 6);
        let s = m.symmetrize();
        for r in 0..6 {
            for c in 0..6 {
                assert_eq!(s[(r, c)], s[(c, r)]);
            }
        }
    }
}
