//! Linear heads on top of refined features and the two training losses.
//!
//! CAC: the head projects `f` to `K` dims, logits are negated distances to
//! fixed anchors `α·e_c`, and
//!
//! ```text
//! L = CE(softmax(−D), y) + λ_anchor · mean_i D_{i, y_i}
//! ```
//!
//! Softmax: plain cross-entropy on the head output.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::backbone::ops::{column_sums, softmax_in_place};
use crate::error::{Error, Result};
use crate::linalg::{norm2, Matrix};

pub const DEFAULT_ANCHOR_MAGNITUDE: f64 = 10.0;

/// `p = f·W + b`
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Head {
    pub w: Matrix,
    pub b: Vec<f64>,
}

impl Head {
    pub fn new(in_dim: usize, n_classes: usize, rng: &mut impl Rng) -> Self {
        let w = crate::backbone::init_uniform(rng, in_dim, n_classes, in_dim);
        let b = crate::backbone::init_uniform(rng, 1, n_classes, in_dim).into_vec();
        Self { w, b }
    }

    pub fn in_dim(&self) -> usize {
        self.w.rows()
    }

    pub fn n_classes(&self) -> usize {
        self.w.cols()
    }

    pub fn forward(&self, f: &Matrix) -> Result<Matrix> {
        if f.cols() != self.in_dim() {
            return Err(Error::Shape(format!(
                "head expects {}-dim features, got {}",
                self.in_dim(),
                f.cols()
            )));
        }
        let mut p = f.matmul(&self.w);
        crate::backbone::ops::add_row(&mut p, &self.b);
        Ok(p)
    }
}

/// Fixed class anchors `α·e_c` in the head's output space.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnchorSet {
    pub n_classes: usize,
    pub magnitude: f64,
}

impl AnchorSet {
    pub fn new(n_classes: usize, magnitude: f64) -> Self {
        Self { n_classes, magnitude }
    }

    pub fn anchor(&self, c: usize) -> Vec<f64> {
        let mut a = vec![0.0; self.n_classes];
        a[c] = self.magnitude;
        a
    }

    /// Distances from one projected point to every anchor.
    pub fn distances(&self, p: &[f64]) -> Vec<f64> {
        let mut diff = p.to_vec();
        (0..self.n_classes)
            .map(|c| {
                diff[c] -= self.magnitude;
                let d = norm2(&diff);
                diff[c] = p[c];
                d
            })
            .collect()
    }
}

/// Loss value and gradients with respect to the features and head.
#[derive(Debug, Clone)]
pub struct LossOutput {
    pub loss: f64,
    pub ce: f64,
    pub anchor: f64,
    pub grad_f: Matrix,
    pub grad_w: Matrix,
    pub grad_b: Vec<f64>,
}

fn check_labels(labels: &[usize], n: usize, k: usize) -> Result<()> {
    if labels.len() != n {
        return Err(Error::Shape(format!("{n} feature rows but {} labels", labels.len())));
    }
    if n == 0 {
        return Err(Error::InvalidInput("empty batch".into()));
    }
    if let Some(&bad) = labels.iter().find(|&&l| l >= k) {
        return Err(Error::InvalidInput(format!("label {bad} out of range for {k} classes")));
    }
    Ok(())
}

fn head_backward(f: &Matrix, head: &Head, dp: &Matrix, loss: f64, ce: f64, anchor: f64) -> LossOutput {
    LossOutput {
        loss,
        ce,
        anchor,
        grad_f: dp.matmul_t(&head.w),
        grad_w: f.t_matmul(dp),
        grad_b: column_sums(dp),
    }
}

pub fn cac_loss(f: &Matrix, labels: &[usize], head: &Head, anchors: &AnchorSet, lambda_anchor: f64) -> Result<LossOutput> {
    let k = head.n_classes();
    if anchors.n_classes != k {
        return Err(Error::Shape(format!(
            "{} anchors for a {k}-class head",
            anchors.n_classes
        )));
    }
    let n = f.rows();
    check_labels(labels, n, k)?;
    let p = head.forward(f)?;
    let inv_n = 1.0 / n as f64;

    let mut ce = 0.0;
    let mut anchor = 0.0;
    let mut dp = Matrix::zeros(n, k);
    for i in 0..n {
        let y = labels[i];
        let d = anchors.distances(p.row(i));
        let mut prob: Vec<f64> = d.iter().map(|v| -v).collect();
        softmax_in_place(&mut prob);
        // log-sum-exp form keeps CE finite when the true class is far
        let max = d.iter().map(|v| -v).fold(f64::NEG_INFINITY, f64::max);
        let lse = max + d.iter().map(|v| (-v - max).exp()).sum::<f64>().ln();
        ce += lse + d[y];
        anchor += d[y];

        let pi = p.row(i);
        let row = dp.row_mut(i);
        for c in 0..k {
            let onehot = if c == y { 1.0 } else { 0.0 };
            // logits are −D, so ∂CE/∂D = −(softmax − onehot)
            let mut dd = -(prob[c] - onehot) * inv_n;
            if c == y {
                dd += lambda_anchor * inv_n;
            }
            if d[c] > 0.0 {
                for (j, r) in row.iter_mut().enumerate() {
                    let a = if j == c { anchors.magnitude } else { 0.0 };
                    *r += dd * (pi[j] - a) / d[c];
                }
            }
        }
    }
    ce *= inv_n;
    anchor *= inv_n;
    Ok(head_backward(f, head, &dp, ce + lambda_anchor * anchor, ce, anchor))
}

pub fn softmax_ce_loss(f: &Matrix, labels: &[usize], head: &Head) -> Result<LossOutput> {
    let k = head.n_classes();
    let n = f.rows();
    check_labels(labels, n, k)?;
    let logits = head.forward(f)?;
    let inv_n = 1.0 / n as f64;
    let mut ce = 0.0;
    let mut dp = Matrix::zeros(n, k);
    for i in 0..n {
        let z = logits.row(i);
        let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + z.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
        ce += lse - z[labels[i]];
        let mut prob = z.to_vec();
        softmax_in_place(&mut prob);
        for (c, (g, p)) in dp.row_mut(i).iter_mut().zip(&prob).enumerate() {
            *g = (p - if c == labels[i] { 1.0 } else { 0.0 }) * inv_n;
        }
    }
    ce *= inv_n;
    Ok(head_backward(f, head, &dp, ce, ce, 0.0))
}

/// `−max_c softmax(logits)_c` and the arg-max class (lowest id on ties).
pub fn max_softmax_score(logits: &[f64]) -> (f64, usize) {
    let mut p = logits.to_vec();
    softmax_in_place(&mut p);
    let mut best = 0;
    for c in 1..p.len() {
        if p[c] > p[best] {
            best = c;
        }
    }
    (-p[best], best)
}
