//! Differentiable feature extractors mapping a `T × C` map to a raw feature
//! vector. Both backbones keep every intermediate they need on a
//! [`ForwardTape`] and implement reverse mode by hand.

pub mod attention;
pub mod mlp;
pub(crate) mod ops;

use std::sync::atomic::{AtomicU64, Ordering};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use attention::AttentionConfig;
pub use mlp::{Activation, MlpConfig};

use crate::error::{Error, Result};
use crate::linalg::Matrix;

/// A named parameter tensor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Param {
    pub name: String,
    pub value: Matrix,
    /// Frozen tensors still receive gradients but optimizers skip them.
    pub trainable: bool,
}

static NEXT_VERSION: AtomicU64 = AtomicU64::new(1);

/// Ordered parameter tensors plus a mutation counter used to detect stale
/// tapes. Equality ignores the counter.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ParamSet {
    params: Vec<Param>,
    #[serde(skip)]
    version: u64,
}

impl PartialEq for ParamSet {
    fn eq(&self, other: &Self) -> bool {
        self.params == other.params
    }
}

impl ParamSet {
    pub(crate) fn new(params: Vec<Param>) -> Self {
        Self { params, version: 0 }
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &Param> {
        self.params.iter()
    }

    pub fn get(&self, name: &str) -> Option<&Param> {
        self.params.iter().find(|p| p.name == name)
    }

    /// Mutable access. Any tape recorded before this call becomes stale.
    pub fn params_mut(&mut self) -> &mut [Param] {
        self.bump();
        &mut self.params
    }

    pub fn value_mut(&mut self, name: &str) -> Option<&mut Matrix> {
        self.bump();
        self.params
            .iter_mut()
            .find(|p| p.name == name)
            .map(|p| &mut p.value)
    }

    fn bump(&mut self) {
        self.version = NEXT_VERSION.fetch_add(1, Ordering::Relaxed);
    }

    pub fn version(&self) -> u64 {
        self.version
    }

    pub fn count(&self) -> usize {
        self.params.iter().map(|p| p.value.as_slice().len()).sum()
    }

    pub(crate) fn value(&self, idx: usize) -> &Matrix {
        &self.params[idx].value
    }

    pub fn zeros_like(&self) -> Vec<Matrix> {
        self.params
            .iter()
            .map(|p| Matrix::zeros(p.value.rows(), p.value.cols()))
            .collect()
    }
}

/// Uniform in `±1/√fan_in`.
pub(crate) fn init_uniform(rng: &mut impl Rng, rows: usize, cols: usize, fan_in: usize) -> Matrix {
    let bound = 1.0 / (fan_in.max(1) as f64).sqrt();
    let data = (0..rows * cols).map(|_| rng.random_range(-bound..bound)).collect();
    Matrix::from_vec(rows, cols, data).expect("finite init")
}

/// Train-time dropout control. Masks are drawn from a generator seeded per
/// forward pass and stored on the tape, so a forward can be replayed
/// exactly.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Dropout {
    Off,
    Seeded { rate: f64, seed: u64 },
}

impl Dropout {
    pub(crate) fn masker(self) -> Option<(f64, ChaCha8Rng)> {
        match self {
            Dropout::Seeded { rate, seed } if rate > 0.0 => {
                Some((rate, ChaCha8Rng::seed_from_u64(seed)))
            }
            _ => None,
        }
    }
}

/// Draws an inverted-dropout mask (entries are 0 or 1/(1-rate)).
pub(crate) fn dropout_mask(masker: &mut Option<(f64, ChaCha8Rng)>, len: usize) -> Option<Vec<f64>> {
    let (rate, rng) = masker.as_mut()?;
    let keep = 1.0 / (1.0 - *rate);
    Some(
        (0..len)
            .map(|_| if rng.random::<f64>() < *rate { 0.0 } else { keep })
            .collect(),
    )
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum BackboneConfig {
    Mlp(MlpConfig),
    Attention(AttentionConfig),
}

impl BackboneConfig {
    pub fn out_dim(&self) -> usize {
        match self {
            BackboneConfig::Mlp(c) => c.out_dim,
            BackboneConfig::Attention(c) => c.d_model,
        }
    }

    pub fn input_shape(&self) -> (Option<usize>, usize) {
        match self {
            BackboneConfig::Mlp(c) => (None, c.channels),
            BackboneConfig::Attention(c) => (Some(c.t_steps), c.channels),
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            BackboneConfig::Mlp(c) => c.validate(),
            BackboneConfig::Attention(c) => c.validate(),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            BackboneConfig::Mlp(_) => "mlp",
            BackboneConfig::Attention(_) => "attention",
        }
    }
}

/// Cached activations of one forward pass.
#[derive(Debug, Clone)]
pub struct ForwardTape {
    version: u64,
    inner: TapeInner,
}

#[derive(Debug, Clone)]
enum TapeInner {
    Mlp(mlp::MlpTape),
    Attention(attention::AttentionTape),
}

/// Gradients of a scalar loss w.r.t. every parameter (aligned with
/// [`ParamSet`] order) and the input map.
#[derive(Debug, Clone)]
pub struct BackboneGrads {
    pub params: Vec<Matrix>,
    pub input: Matrix,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Backbone {
    pub config: BackboneConfig,
    pub params: ParamSet,
}

impl Backbone {
    pub fn new(config: BackboneConfig, rng: &mut impl Rng) -> Result<Self> {
        config.validate()?;
        let params = match &config {
            BackboneConfig::Mlp(c) => mlp::init(c, rng),
            BackboneConfig::Attention(c) => attention::init(c, rng),
        };
        Ok(Self { config, params })
    }

    pub fn out_dim(&self) -> usize {
        self.config.out_dim()
    }

    pub fn forward(&self, map: &Matrix, dropout: Dropout) -> Result<(Vec<f64>, ForwardTape)> {
        let (z, inner) = match &self.config {
            BackboneConfig::Mlp(c) => {
                let (z, t) = mlp::forward(c, &self.params, map, dropout)?;
                (z, TapeInner::Mlp(t))
            }
            BackboneConfig::Attention(c) => {
                let (z, t) = attention::forward(c, &self.params, map, dropout)?;
                (z, TapeInner::Attention(t))
            }
        };
        Ok((
            z,
            ForwardTape {
                version: self.params.version(),
                inner,
            },
        ))
    }

    /// Feature only, no dropout.
    pub fn embed(&self, map: &Matrix) -> Result<Vec<f64>> {
        Ok(self.forward(map, Dropout::Off)?.0)
    }

    pub fn backward(&self, tape: &ForwardTape, grad_output: &[f64]) -> Result<BackboneGrads> {
        if tape.version != self.params.version() {
            return Err(Error::Contract(
                "backward called with a tape recorded before the parameters changed".into(),
            ));
        }
        if grad_output.len() != self.out_dim() {
            return Err(Error::Shape(format!(
                "output gradient has length {}, backbone emits {}",
                grad_output.len(),
                self.out_dim()
            )));
        }
        match (&self.config, &tape.inner) {
            (BackboneConfig::Mlp(c), TapeInner::Mlp(t)) => {
                Ok(mlp::backward(c, &self.params, t, grad_output))
            }
            (BackboneConfig::Attention(c), TapeInner::Attention(t)) => {
                Ok(attention::backward(c, &self.params, t, grad_output))
            }
            _ => Err(Error::Contract("tape came from a different backbone kind".into())),
        }
    }
}

pub(crate) fn check_map(map: &Matrix, t_steps: Option<usize>, channels: usize) -> Result<()> {
    let (t, c) = map.shape();
    if c != channels || t == 0 || t_steps.is_some_and(|want| want != t) {
        return Err(Error::Config(format!(
            "input map is {t}x{c}, backbone expects {}x{channels}",
            t_steps.map_or("T".to_string(), |v| v.to_string())
        )));
    }
    Ok(())
}
