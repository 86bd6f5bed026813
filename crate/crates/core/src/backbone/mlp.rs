//! Pooled perceptron: temporal mean of each channel, then
//! `tanh(p·W1 + b1)` with dropout, then a linear layer to the feature.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{check_map, dropout_mask, init_uniform, BackboneGrads, Dropout, Param, ParamSet};
use crate::error::{Error, Result};
use crate::linalg::Matrix;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    #[default]
    Tanh,
    Linear,
}

impl Activation {
    fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Tanh => x.tanh(),
            Activation::Linear => x,
        }
    }

    /// Derivative expressed through the activation output.
    fn grad_from_output(self, y: f64) -> f64 {
        match self {
            Activation::Tanh => 1.0 - y * y,
            Activation::Linear => 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MlpConfig {
    pub channels: usize,
    pub hidden: usize,
    pub out_dim: usize,
    #[serde(default)]
    pub activation: Activation,
}

impl MlpConfig {
    pub fn validate(&self) -> Result<()> {
        if self.channels == 0 || self.hidden == 0 || self.out_dim == 0 {
            return Err(Error::Config("mlp dimensions must be >= 1".into()));
        }
        Ok(())
    }
}

const W1: usize = 0;
const B1: usize = 1;
const W2: usize = 2;
const B2: usize = 3;

pub(crate) fn init(cfg: &MlpConfig, rng: &mut impl Rng) -> ParamSet {
    let p = |name: &str, value| Param {
        name: name.into(),
        value,
        trainable: true,
    };
    ParamSet::new(vec![
        p("w1", init_uniform(rng, cfg.channels, cfg.hidden, cfg.channels)),
        p("b1", init_uniform(rng, 1, cfg.hidden, cfg.channels)),
        p("w2", init_uniform(rng, cfg.hidden, cfg.out_dim, cfg.hidden)),
        p("b2", init_uniform(rng, 1, cfg.out_dim, cfg.hidden)),
    ])
}

#[derive(Debug, Clone)]
pub struct MlpTape {
    t_steps: usize,
    pooled: Vec<f64>,
    /// Activation output before dropout.
    hidden: Vec<f64>,
    /// Hidden vector fed to the output layer.
    dropped: Vec<f64>,
    mask: Option<Vec<f64>>,
}

pub(crate) fn forward(
    cfg: &MlpConfig,
    params: &ParamSet,
    map: &Matrix,
    dropout: Dropout,
) -> Result<(Vec<f64>, MlpTape)> {
    check_map(map, None, cfg.channels)?;
    let pooled = map.column_means();
    let (w1, b1, w2, b2) = (
        params.value(W1),
        params.value(B1),
        params.value(W2),
        params.value(B2),
    );

    let mut hidden = b1.as_slice().to_vec();
    for (j, &p) in pooled.iter().enumerate() {
        for (h, w) in hidden.iter_mut().zip(w1.row(j)) {
            *h += p * w;
        }
    }
    hidden.iter_mut().for_each(|h| *h = cfg.activation.apply(*h));

    let mut masker = dropout.masker();
    let mask = dropout_mask(&mut masker, cfg.hidden);
    let dropped: Vec<f64> = match &mask {
        Some(m) => hidden.iter().zip(m).map(|(h, k)| h * k).collect(),
        None => hidden.clone(),
    };

    let mut z = b2.as_slice().to_vec();
    for (k, &h) in dropped.iter().enumerate() {
        for (o, w) in z.iter_mut().zip(w2.row(k)) {
            *o += h * w;
        }
    }
    Ok((
        z,
        MlpTape {
            t_steps: map.rows(),
            pooled,
            hidden,
            dropped,
            mask,
        },
    ))
}

pub(crate) fn backward(cfg: &MlpConfig, params: &ParamSet, tape: &MlpTape, dz: &[f64]) -> BackboneGrads {
    let mut grads = params.zeros_like();
    let w1 = params.value(W1);
    let w2 = params.value(W2);

    // output layer
    for (k, &h) in tape.dropped.iter().enumerate() {
        for (g, d) in grads[W2].row_mut(k).iter_mut().zip(dz) {
            *g = h * d;
        }
    }
    grads[B2].as_mut_slice().copy_from_slice(dz);

    let mut dh: Vec<f64> = (0..cfg.hidden).map(|k| crate::linalg::dot(w2.row(k), dz)).collect();
    if let Some(mask) = &tape.mask {
        dh.iter_mut().zip(mask).for_each(|(d, m)| *d *= m);
    }
    for (d, &y) in dh.iter_mut().zip(&tape.hidden) {
        *d *= cfg.activation.grad_from_output(y);
    }

    for (j, &p) in tape.pooled.iter().enumerate() {
        for (g, d) in grads[W1].row_mut(j).iter_mut().zip(&dh) {
            *g = p * d;
        }
    }
    grads[B1].as_mut_slice().copy_from_slice(&dh);

    let inv_t = 1.0 / tape.t_steps as f64;
    let dpooled: Vec<f64> = (0..cfg.channels)
        .map(|j| crate::linalg::dot(w1.row(j), &dh) * inv_t)
        .collect();
    let mut input = Matrix::zeros(tape.t_steps, cfg.channels);
    for t in 0..tape.t_steps {
        input.row_mut(t).copy_from_slice(&dpooled);
    }
    BackboneGrads {
        params: grads,
        input,
    }
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::super::gradcheck::check_backbone;
    use super::super::{Backbone, BackboneConfig};
    use super::*;

    fn cfg(activation: Activation) -> BackboneConfig {
        BackboneConfig::Mlp(MlpConfig {
            channels: 3,
            hidden: 5,
            out_dim: 4,
            activation,
        })
    }

    fn random_map(rng: &mut ChaCha8Rng, t: usize, c: usize) -> Matrix {
        Matrix::from_vec(t, c, (0..t * c).map(|_| rng.random_range(-2.0..2.0)).collect()).unwrap()
    }

    #[test]
    fn zero_map_zero_bias_gives_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut b = Backbone::new(cfg(Activation::Tanh), &mut rng).unwrap();
        b.params.value_mut("b1").unwrap().fill(0.0);
        b.params.value_mut("b2").unwrap().fill(0.0);
        let z = b.embed(&Matrix::zeros(6, 3)).unwrap();
        assert_eq!(z, vec![0.0; 4]);
    }

    #[test]
    fn linear_single_channel_is_scaled_mean() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut b = Backbone::new(
            BackboneConfig::Mlp(MlpConfig {
                channels: 1,
                hidden: 1,
                out_dim: 1,
                activation: Activation::Linear,
            }),
            &mut rng,
        )
        .unwrap();
        {
            let ps = b.params.params_mut();
            ps[W1].value.as_mut_slice()[0] = 2.0;
            ps[B1].value.fill(0.0);
            ps[W2].value.as_mut_slice()[0] = 1.5;
            ps[B2].value.fill(0.0);
        }
        let map = Matrix::from_vec(4, 1, vec![1.0, 2.0, 3.0, 6.0]).unwrap();
        assert_eq!(b.embed(&map).unwrap(), vec![3.0 * 2.0 * 1.5]);
    }

    #[test]
    fn gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for act in [Activation::Tanh, Activation::Linear] {
            let b = Backbone::new(cfg(act), &mut rng).unwrap();
            let map = random_map(&mut rng, 7, 3);
            let probe: Vec<f64> = (0..4).map(|_| rng.random_range(-1.0..1.0)).collect();
            for dropout in [Dropout::Off, Dropout::Seeded { rate: 0.3, seed: 5 }] {
                let (err, name) = check_backbone(&b, &map, dropout, &probe);
                assert!(err < 1e-4, "{act:?} {dropout:?}: {name} rel err {err}");
            }
        }
    }

    #[test]
    fn zero_output_gradient_gives_zero_grads() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let b = Backbone::new(cfg(Activation::Tanh), &mut rng).unwrap();
        let map = random_map(&mut rng, 5, 3);
        let (_, tape) = b.forward(&map, Dropout::Off).unwrap();
        let g = b.backward(&tape, &[0.0; 4]).unwrap();
        assert!(g.params.iter().all(|m| m.as_slice().iter().all(|&v| v == 0.0)));
        assert!(g.input.as_slice().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn shape_mismatch_is_config_error() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let b = Backbone::new(cfg(Activation::Tanh), &mut rng).unwrap();
        assert!(matches!(b.embed(&Matrix::zeros(4, 2)), Err(Error::Config(_))));
    }

    #[test]
    fn stale_tape_rejected() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let mut b = Backbone::new(cfg(Activation::Tanh), &mut rng).unwrap();
        let (_, tape) = b.forward(&Matrix::zeros(2, 3), Dropout::Off).unwrap();
        b.params.value_mut("w1").unwrap().as_mut_slice()[0] += 0.1;
        assert!(matches!(b.backward(&tape, &[1.0; 4]), Err(Error::Contract(_))));
    }
}
