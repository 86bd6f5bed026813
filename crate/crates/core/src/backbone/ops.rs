//! Row-wise building blocks shared by the attention encoder.

use crate::linalg::Matrix;

pub const LN_EPS: f64 = 1e-5;

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_K: f64 = 0.044_715;

/// Tanh approximation of GELU.
#[inline]
pub fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + (GELU_C * (x + GELU_K * x * x * x)).tanh())
}

#[inline]
pub fn gelu_grad(x: f64) -> f64 {
    let th = (GELU_C * (x + GELU_K * x * x * x)).tanh();
    0.5 * (1.0 + th) + 0.5 * x * (1.0 - th * th) * GELU_C * (1.0 + 3.0 * GELU_K * x * x)
}

/// Row-wise layer normalization cache.
#[derive(Debug, Clone)]
pub struct LayerNormCache {
    pub xhat: Matrix,
    pub inv_std: Vec<f64>,
}

pub fn layer_norm(x: &Matrix, gain: &[f64], bias: &[f64]) -> (Matrix, LayerNormCache) {
    let (t, d) = x.shape();
    let mut xhat = Matrix::zeros(t, d);
    let mut out = Matrix::zeros(t, d);
    let mut inv_std = Vec::with_capacity(t);
    for i in 0..t {
        let row = x.row(i);
        let mean = row.iter().sum::<f64>() / d as f64;
        let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
        let is = 1.0 / (var + LN_EPS).sqrt();
        inv_std.push(is);
        for j in 0..d {
            let h = (row[j] - mean) * is;
            xhat[(i, j)] = h;
            out[(i, j)] = gain[j] * h + bias[j];
        }
    }
    (out, LayerNormCache { xhat, inv_std })
}

/// Returns `(dx, dgain, dbias)`.
pub fn layer_norm_backward(
    dy: &Matrix,
    cache: &LayerNormCache,
    gain: &[f64],
) -> (Matrix, Vec<f64>, Vec<f64>) {
    let (t, d) = dy.shape();
    let mut dx = Matrix::zeros(t, d);
    let mut dgain = vec![0.0; d];
    let mut dbias = vec![0.0; d];
    let mut dxhat = vec![0.0; d];
    for i in 0..t {
        let xh = cache.xhat.row(i);
        let g = dy.row(i);
        for j in 0..d {
            dgain[j] += g[j] * xh[j];
            dbias[j] += g[j];
            dxhat[j] = g[j] * gain[j];
        }
        let mean_dxhat = dxhat.iter().sum::<f64>() / d as f64;
        let mean_dxhat_xhat = dxhat.iter().zip(xh).map(|(a, b)| a * b).sum::<f64>() / d as f64;
        let is = cache.inv_std[i];
        for j in 0..d {
            dx[(i, j)] = is * (dxhat[j] - mean_dxhat - xh[j] * mean_dxhat_xhat);
        }
    }
    (dx, dgain, dbias)
}

/// In-place numerically stable row softmax.
pub fn softmax_rows(m: &mut Matrix) {
    for i in 0..m.rows() {
        softmax_in_place(m.row_mut(i));
    }
}

pub fn softmax_in_place(row: &mut [f64]) {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    row.iter_mut().for_each(|v| *v /= sum);
}

/// `dS = P ∘ (dP − rowsum(dP ∘ P))`
pub fn softmax_rows_backward(p: &Matrix, dp: &Matrix) -> Matrix {
    let mut ds = Matrix::zeros(p.rows(), p.cols());
    for i in 0..p.rows() {
        let pr = p.row(i);
        let dr = dp.row(i);
        let inner: f64 = pr.iter().zip(dr).map(|(a, b)| a * b).sum();
        for (o, (pv, dv)) in ds.row_mut(i).iter_mut().zip(pr.iter().zip(dr)) {
            *o = pv * (dv - inner);
        }
    }
    ds
}

/// Adds a row vector to every row.
pub fn add_row(m: &mut Matrix, bias: &[f64]) {
    for i in 0..m.rows() {
        for (v, b) in m.row_mut(i).iter_mut().zip(bias) {
            *v += b;
        }
    }
}

/// Column sums, i.e. the gradient of a broadcast row bias.
pub fn column_sums(m: &Matrix) -> Vec<f64> {
    let mut s = vec![0.0; m.cols()];
    for row in m.row_iter() {
        for (a, v) in s.iter_mut().zip(row) {
            *a += v;
        }
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gelu_derivative_matches_differences() {
        for &x in &[-3.0, -0.7, 0.0, 0.4, 2.5] {
            let h = 1e-6;
            let fd = (gelu(x + h) - gelu(x - h)) / (2.0 * h);
            assert!((fd - gelu_grad(x)).abs() < 1e-8);
        }
        assert_eq!(gelu(0.0), 0.0);
    }

    #[test]
    fn softmax_rows_sum_to_one() {
        let mut m = Matrix::from_rows(&[vec![1.0, 2.0, 3.0], vec![-1000.0, 0.0, 1000.0]]).unwrap();
        softmax_rows(&mut m);
        for row in m.row_iter() {
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }
}
