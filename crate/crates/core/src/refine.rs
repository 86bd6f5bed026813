//! Geometric refinement: batch normalization followed by projection onto
//! the unit hypersphere.
//!
//! ```text
//! ẑ = γ ∘ (z − μ_B) / √(σ²_B + ε) + β        (train: batch stats, eval: running stats)
//! f = ẑ / ‖ẑ‖₂
//! ```
//!
//! With `affine = false` the scale/shift are pinned to γ = 1, β = 0.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{norm2, Matrix};

pub const BN_EPS: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BnMode {
    Train,
    Eval,
}

/// Batch-normalization state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatchNorm {
    pub eps: f64,
    pub momentum: f64,
    pub running_mean: Vec<f64>,
    pub running_var: Vec<f64>,
    pub gamma: Vec<f64>,
    pub beta: Vec<f64>,
    pub affine: bool,
    pub mode: BnMode,
}

/// Cache for the BN backward pass.
#[derive(Debug, Clone)]
pub struct BnTape {
    xhat: Matrix,
    inv_std: Vec<f64>,
    mode: BnMode,
}

/// Gradients of a scalar w.r.t. BN inputs and affine parameters.
#[derive(Debug, Clone)]
pub struct BnGrads {
    pub input: Matrix,
    pub gamma: Vec<f64>,
    pub beta: Vec<f64>,
}

impl BatchNorm {
    pub fn new(dim: usize, affine: bool) -> Self {
        Self {
            eps: BN_EPS,
            momentum: BN_MOMENTUM,
            running_mean: vec![0.0; dim],
            running_var: vec![1.0; dim],
            gamma: vec![1.0; dim],
            beta: vec![0.0; dim],
            affine,
            mode: BnMode::Train,
        }
    }

    pub fn dim(&self) -> usize {
        self.gamma.len()
    }

    /// Normalizes `batch` according to the current mode. Train mode uses
    /// the batch statistics and folds them into the running estimates
    /// (running variance uses the unbiased batch variance); eval mode
    /// leaves `self` untouched.
    pub fn forward(&mut self, batch: &Matrix) -> Result<(Matrix, BnTape)> {
        match self.mode {
            BnMode::Eval => self.forward_eval(batch),
            BnMode::Train => self.forward_train(batch),
        }
    }

    fn check_width(&self, batch: &Matrix) -> Result<()> {
        if batch.cols() != self.dim() {
            return Err(Error::Shape(format!(
                "batch norm has dim {}, batch rows have {}",
                self.dim(),
                batch.cols()
            )));
        }
        Ok(())
    }

    fn forward_train(&mut self, batch: &Matrix) -> Result<(Matrix, BnTape)> {
        self.check_width(batch)?;
        let n = batch.rows();
        if n < 2 {
            return Err(Error::BatchTooSmall(n));
        }
        let d = self.dim();
        let mean = batch.column_means();
        let mut var = vec![0.0; d];
        for row in batch.row_iter() {
            for ((v, x), m) in var.iter_mut().zip(row).zip(&mean) {
                *v += (x - m) * (x - m);
            }
        }
        var.iter_mut().for_each(|v| *v /= n as f64);
        let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + self.eps).sqrt()).collect();
        let (out, xhat) = self.normalize(batch, &mean, &inv_std);

        let unbias = n as f64 / (n - 1) as f64;
        for j in 0..d {
            self.running_mean[j] = (1.0 - self.momentum) * self.running_mean[j] + self.momentum * mean[j];
            self.running_var[j] =
                (1.0 - self.momentum) * self.running_var[j] + self.momentum * var[j] * unbias;
        }
        Ok((
            out,
            BnTape {
                xhat,
                inv_std,
                mode: BnMode::Train,
            },
        ))
    }

    /// Eval-mode normalization with the running statistics.
    pub fn forward_eval(&self, batch: &Matrix) -> Result<(Matrix, BnTape)> {
        self.check_width(batch)?;
        let inv_std: Vec<f64> = self
            .running_var
            .iter()
            .map(|v| 1.0 / (v + self.eps).sqrt())
            .collect();
        let (out, xhat) = self.normalize(batch, &self.running_mean, &inv_std);
        Ok((
            out,
            BnTape {
                xhat,
                inv_std,
                mode: BnMode::Eval,
            },
        ))
    }

    fn normalize(&self, batch: &Matrix, mean: &[f64], inv_std: &[f64]) -> (Matrix, Matrix) {
        let (n, d) = batch.shape();
        let mut xhat = Matrix::zeros(n, d);
        let mut out = Matrix::zeros(n, d);
        for i in 0..n {
            for j in 0..d {
                let h = (batch[(i, j)] - mean[j]) * inv_std[j];
                xhat[(i, j)] = h;
                out[(i, j)] = if self.affine {
                    self.gamma[j] * h + self.beta[j]
                } else {
                    h
                };
            }
        }
        (out, xhat)
    }

    pub fn backward(&self, tape: &BnTape, dy: &Matrix) -> BnGrads {
        let (n, d) = dy.shape();
        let mut gamma = vec![0.0; d];
        let mut beta = vec![0.0; d];
        let mut dxhat = dy.clone();
        for i in 0..n {
            for j in 0..d {
                gamma[j] += dy[(i, j)] * tape.xhat[(i, j)];
                beta[j] += dy[(i, j)];
                if self.affine {
                    dxhat[(i, j)] *= self.gamma[j];
                }
            }
        }
        if !self.affine {
            gamma.fill(0.0);
            beta.fill(0.0);
        }
        let mut input = Matrix::zeros(n, d);
        match tape.mode {
            BnMode::Eval => {
                for i in 0..n {
                    for j in 0..d {
                        input[(i, j)] = dxhat[(i, j)] * tape.inv_std[j];
                    }
                }
            }
            BnMode::Train => {
                let sum_dxhat = crate::backbone::ops::column_sums(&dxhat);
                let mut sum_dxhat_xhat = vec![0.0; d];
                for i in 0..n {
                    for j in 0..d {
                        sum_dxhat_xhat[j] += dxhat[(i, j)] * tape.xhat[(i, j)];
                    }
                }
                let nf = n as f64;
                for i in 0..n {
                    for j in 0..d {
                        input[(i, j)] = tape.inv_std[j] / nf
                            * (nf * dxhat[(i, j)]
                                - sum_dxhat[j]
                                - tape.xhat[(i, j)] * sum_dxhat_xhat[j]);
                    }
                }
            }
        }
        BnGrads { input, gamma, beta }
    }
}

/// `ẑ / ‖ẑ‖₂`. A zero vector is an error, not silently mapped somewhere.
pub fn l2_normalize(z: &[f64]) -> Result<Vec<f64>> {
    let n = norm2(z);
    if !(n > 0.0) || !n.is_finite() {
        return Err(Error::DegenerateFeature(format!(
            "cannot project a vector of norm {n} onto the sphere"
        )));
    }
    Ok(z.iter().map(|v| v / n).collect())
}

/// Reverse of [`l2_normalize`]: `(g − f⟨f, g⟩) / ‖ẑ‖`.
pub fn l2_normalize_backward(f: &[f64], norm: f64, grad_f: &[f64]) -> Vec<f64> {
    let proj = crate::linalg::dot(f, grad_f);
    f.iter()
        .zip(grad_f)
        .map(|(fi, gi)| (gi - fi * proj) / norm)
        .collect()
}

/// Which refinement stages are active.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RefineFlags {
    pub use_bn: bool,
    pub use_l2n: bool,
}

impl RefineFlags {
    pub const FULL: Self = Self {
        use_bn: true,
        use_l2n: true,
    };
    pub const NONE: Self = Self {
        use_bn: false,
        use_l2n: false,
    };
}

/// BN → L2 pipeline with per-stage switches.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Refiner {
    pub flags: RefineFlags,
    pub bn: BatchNorm,
}

#[derive(Debug, Clone)]
pub struct RefineTape {
    bn: Option<BnTape>,
    /// Output rows and pre-projection norms when L2 is active.
    l2: Option<(Matrix, Vec<f64>)>,
}

#[derive(Debug, Clone)]
pub struct RefineGrads {
    pub input: Matrix,
    pub gamma: Vec<f64>,
    pub beta: Vec<f64>,
}

impl Refiner {
    pub fn new(dim: usize, flags: RefineFlags, bn_affine: bool) -> Self {
        Self {
            flags,
            bn: BatchNorm::new(dim, bn_affine),
        }
    }

    pub fn set_mode(&mut self, mode: BnMode) {
        self.bn.mode = mode;
    }

    pub fn mode(&self) -> BnMode {
        self.bn.mode
    }

    /// Refines every row of `batch`. In train mode BN statistics are
    /// updated.
    pub fn forward(&mut self, batch: &Matrix) -> Result<(Matrix, RefineTape)> {
        let (zhat, bn) = if self.flags.use_bn {
            let (out, tape) = self.bn.forward(batch)?;
            (out, Some(tape))
        } else {
            (batch.clone(), None)
        };
        self.project(zhat, bn)
    }

    /// Eval-mode refinement. Never mutates the state.
    pub fn forward_eval(&self, batch: &Matrix) -> Result<(Matrix, RefineTape)> {
        let (zhat, bn) = if self.flags.use_bn {
            let (out, tape) = self.bn.forward_eval(batch)?;
            (out, Some(tape))
        } else {
            (batch.clone(), None)
        };
        self.project(zhat, bn)
    }

    /// Single-vector eval refinement.
    pub fn refine_one(&self, z: &[f64]) -> Result<Vec<f64>> {
        let m = Matrix::from_vec(1, z.len(), z.to_vec())?;
        Ok(self.forward_eval(&m)?.0.into_vec())
    }

    fn project(&self, zhat: Matrix, bn: Option<BnTape>) -> Result<(Matrix, RefineTape)> {
        if !self.flags.use_l2n {
            return Ok((zhat, RefineTape { bn, l2: None }));
        }
        let mut out = zhat;
        let mut norms = Vec::with_capacity(out.rows());
        for i in 0..out.rows() {
            let n = norm2(out.row(i));
            let f = l2_normalize(out.row(i))?;
            out.row_mut(i).copy_from_slice(&f);
            norms.push(n);
        }
        Ok((
            out.clone(),
            RefineTape {
                bn,
                l2: Some((out, norms)),
            },
        ))
    }

    pub fn backward(&self, tape: &RefineTape, grad_f: &Matrix) -> RefineGrads {
        let mut g = grad_f.clone();
        if let Some((f, norms)) = &tape.l2 {
            for i in 0..g.rows() {
                let gi = l2_normalize_backward(f.row(i), norms[i], grad_f.row(i));
                g.row_mut(i).copy_from_slice(&gi);
            }
        }
        match &tape.bn {
            Some(bt) => {
                let bg = self.bn.backward(bt, &g);
                RefineGrads {
                    input: bg.input,
                    gamma: bg.gamma,
                    beta: bg.beta,
                }
            }
            None => RefineGrads {
                input: g,
                gamma: vec![0.0; self.bn.dim()],
                beta: vec![0.0; self.bn.dim()],
            },
        }
    }
}
