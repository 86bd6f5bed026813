//! Synthetic drift benchmark.
//!
//! Every class owns a rise/plateau/decay response template and an
//! anisotropic Gaussian over per-channel amplitudes. The principal axis of
//! that Gaussian is the class mean direction, so the largest source of
//! within-class variance is a common gain (concentration fluctuation); the
//! remaining axes are random and their variances fall off geometrically to
//! reach the requested condition number. Each position multiplies every
//! amplitude by its decay factor before additive white noise.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::{Dataset, Label, SampleMap};
use crate::error::{Error, Result};
use crate::linalg::{dot, norm2, Matrix};

/// Standard deviation along the gain axis, relative to the mean amplitude
/// norm.
const GAIN_SPREAD: f64 = 0.3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthConfig {
    pub n_classes: usize,
    pub samples_per_class_per_position: usize,
    pub n_positions: usize,
    pub t_steps: usize,
    pub channels: usize,
    /// Target condition number of every class amplitude covariance.
    pub feature_anisotropy: f64,
    /// Amplitude multiplier per position; length `n_positions`.
    pub position_decay: Vec<f64>,
    pub noise_std: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            n_classes: 10,
            samples_per_class_per_position: 60,
            n_positions: 5,
            t_steps: 64,
            channels: 16,
            feature_anisotropy: 50.0,
            position_decay: vec![1.0, 0.8, 0.6, 0.45, 0.3],
            noise_std: 0.1,
            seed: 41,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let counts = [
            ("n_classes", self.n_classes),
            ("samples_per_class_per_position", self.samples_per_class_per_position),
            ("n_positions", self.n_positions),
            ("t_steps", self.t_steps),
            ("channels", self.channels),
        ];
        for (name, v) in counts {
            if v == 0 {
                return Err(Error::Config(format!("synthetic {name} must be >= 1")));
            }
        }
        if self.position_decay.len() != self.n_positions {
            return Err(Error::Config(format!(
                "position_decay has {} entries for {} positions",
                self.position_decay.len(),
                self.n_positions
            )));
        }
        if self.position_decay.iter().any(|d| !(*d > 0.0) || !d.is_finite()) {
            return Err(Error::Config("position_decay entries must be > 0".into()));
        }
        if !(self.feature_anisotropy >= 1.0) || !self.feature_anisotropy.is_finite() {
            return Err(Error::Config("feature_anisotropy must be >= 1".into()));
        }
        if !(self.noise_std >= 0.0) || !self.noise_std.is_finite() {
            return Err(Error::Config("noise_std must be >= 0".into()));
        }
        Ok(())
    }
}

/// Per-class generative model.
#[derive(Debug, Clone)]
struct ClassModel {
    template: Vec<f64>,
    mean: Vec<f64>,
    /// Orthonormal axes, first one along `mean`.
    axes: Vec<Vec<f64>>,
    /// Standard deviation along each axis.
    scales: Vec<f64>,
}

impl ClassModel {
    fn draw(rng: &mut ChaCha8Rng, cfg: &SynthConfig) -> Self {
        let c = cfg.channels;
        let t = cfg.t_steps as f64;
        let tau_rise = rng.random_range(0.05..0.2) * t;
        let t_plateau = rng.random_range(0.3..0.6) * t;
        let tau_decay = rng.random_range(0.1..0.3) * t;
        let template = (1..=cfg.t_steps)
            .map(|step| {
                let s = step as f64;
                (1.0 - (-s / tau_rise).exp()) * (-(s - t_plateau).max(0.0) / tau_decay).exp()
            })
            .collect();

        let mean: Vec<f64> = (0..c)
            .map(|_| {
                let g: f64 = StandardNormal.sample(rng);
                g.abs()
            })
            .collect();
        let axes = orthonormal_basis_from(&mean, rng);
        let top = GAIN_SPREAD * norm2(&mean);
        let scales = (0..c)
            .map(|k| {
                let frac = if c > 1 { k as f64 / (c - 1) as f64 } else { 0.0 };
                top * cfg.feature_anisotropy.powf(-0.5 * frac)
            })
            .collect();
        Self {
            template,
            mean,
            axes,
            scales,
        }
    }

    fn amplitudes(&self, rng: &mut ChaCha8Rng) -> Vec<f64> {
        let mut a = self.mean.clone();
        for (axis, scale) in self.axes.iter().zip(&self.scales) {
            let z: f64 = StandardNormal.sample(rng);
            for (ai, ui) in a.iter_mut().zip(axis) {
                *ai += scale * z * ui;
            }
        }
        a
    }
}

/// Gram–Schmidt completion of `first` to an orthonormal basis.
fn orthonormal_basis_from(first: &[f64], rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    let n = first.len();
    let mut basis: Vec<Vec<f64>> = Vec::with_capacity(n);
    let mut candidate = first.to_vec();
    while basis.len() < n {
        for b in &basis {
            let p = dot(&candidate, b);
            candidate.iter_mut().zip(b).for_each(|(c, bi)| *c -= p * bi);
        }
        let len = norm2(&candidate);
        if len > 1e-8 {
            basis.push(candidate.iter().map(|v| v / len).collect());
        }
        candidate = (0..n).map(|_| StandardNormal.sample(rng)).collect();
    }
    basis
}

/// Generates the benchmark. Samples are ordered by position, then class,
/// then draw index; all classes carry [`Label::Class`] labels and the
/// known/unknown split is left to the protocol.
pub fn generate_synthetic(cfg: &SynthConfig) -> Result<Dataset> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let classes: Vec<ClassModel> = (0..cfg.n_classes)
        .map(|_| ClassModel::draw(&mut rng, cfg))
        .collect();

    let mut samples = Vec::with_capacity(cfg.n_classes * cfg.n_positions * cfg.samples_per_class_per_position);
    for (p, &decay) in cfg.position_decay.iter().enumerate() {
        for (c, model) in classes.iter().enumerate() {
            for _ in 0..cfg.samples_per_class_per_position {
                let amps = model.amplitudes(&mut rng);
                let mut grid = Matrix::zeros(cfg.t_steps, cfg.channels);
                for (t, &r) in model.template.iter().enumerate() {
                    for (j, a) in amps.iter().enumerate() {
                        let noise: f64 = StandardNormal.sample(&mut rng);
                        grid[(t, j)] = decay * a * r + cfg.noise_std * noise;
                    }
                }
                samples.push(SampleMap::new(grid, Label::Class(c), p)?);
            }
        }
    }
    Ok(Dataset {
        samples,
        class_names: (0..cfg.n_classes).map(|c| format!("class_{c:02}")).collect(),
        positions: (0..cfg.n_positions).map(|p| format!("L{}", p + 1)).collect(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::{cholesky, sample_covariance, solve_lower};

    fn small(seed: u64) -> SynthConfig {
        SynthConfig {
            n_classes: 3,
            samples_per_class_per_position: 4,
            n_positions: 2,
            t_steps: 12,
            channels: 5,
            feature_anisotropy: 10.0,
            position_decay: vec![1.0, 0.5],
            noise_std: 0.05,
            seed,
        }
    }

    #[test]
    fn same_seed_same_dataset() {
        let a = generate_synthetic(&small(3)).unwrap();
        let b = generate_synthetic(&small(3)).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, generate_synthetic(&small(4)).unwrap());
        assert_eq!(a.len(), 3 * 4 * 2);
        a.validate().unwrap();
    }

    #[test]
    fn config_validation() {
        let mut cfg = small(1);
        cfg.position_decay = vec![1.0];
        assert!(matches!(generate_synthetic(&cfg), Err(Error::Config(_))));
        let mut cfg = small(1);
        cfg.position_decay = vec![1.0, 0.0];
        assert!(generate_synthetic(&cfg).is_err());
        let mut cfg = small(1);
        cfg.channels = 0;
        assert!(generate_synthetic(&cfg).is_err());
    }

    #[test]
    fn basis_is_orthonormal() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let b = orthonormal_basis_from(&[1.0, 2.0, 0.5, 0.0], &mut rng);
        for i in 0..4 {
            for j in 0..4 {
                let expect = if i == j { 1.0 } else { 0.0 };
                assert!((dot(&b[i], &b[j]) - expect).abs() < 1e-12);
            }
        }
        assert!(dot(&b[0], &[1.0, 2.0, 0.5, 0.0]) > 0.0);
    }

    /// Without drift and without noise the only difference between two
    /// samples of a class is the amplitude draw, so their template shape
    /// (every time step proportional) must match.
    #[test]
    fn single_position_has_no_drift_beyond_draws() {
        let cfg = SynthConfig {
            n_positions: 1,
            position_decay: vec![1.0],
            noise_std: 0.0,
            ..small(8)
        };
        let ds = generate_synthetic(&cfg).unwrap();
        let a = &ds.samples[0].grid;
        let b = &ds.samples[1].grid;
        for j in 0..cfg.channels {
            let ratio0 = b[(0, j)] / a[(0, j)];
            for t in 1..cfg.t_steps {
                assert!((b[(t, j)] / a[(t, j)] - ratio0).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn decay_halves_magnitude() {
        let cfg = SynthConfig {
            samples_per_class_per_position: 50,
            t_steps: 32,
            channels: 8,
            noise_std: 0.02,
            ..small(12)
        };
        let ds = generate_synthetic(&cfg).unwrap();
        let mean_mag = |p: usize| {
            let mags: Vec<f64> = ds
                .samples
                .iter()
                .filter(|s| s.position == p)
                .map(|s| s.grid.frobenius_norm())
                .collect();
            mags.iter().sum::<f64>() / mags.len() as f64
        };
        let ratio = mean_mag(1) / mean_mag(0);
        assert!((ratio - 0.5).abs() < 0.05, "ratio {ratio}");
    }

    /// Extreme eigenvalues by power iteration (largest) and inverse power
    /// iteration through a Cholesky solve (smallest).
    fn condition_number_oracle(a: &Matrix) -> f64 {
        let n = a.rows();
        let mut v = vec![1.0; n];
        let mut lmax = 0.0;
        for _ in 0..2000 {
            let w: Vec<f64> = (0..n).map(|i| dot(a.row(i), &v)).collect();
            lmax = norm2(&w);
            v = w.iter().map(|x| x / lmax).collect();
        }
        let l = cholesky(a).unwrap();
        let lt = l.as_matrix().transpose();
        let mut v = vec![1.0; n];
        let mut inv_min = 0.0;
        for _ in 0..2000 {
            let y = solve_lower(&l, &v).unwrap();
            // back substitution with Lᵀ
            let mut x = vec![0.0; n];
            for i in (0..n).rev() {
                let s = y[i] - dot(&lt.row(i)[i + 1..], &x[i + 1..]);
                x[i] = s / lt[(i, i)];
            }
            inv_min = norm2(&x);
            v = x.iter().map(|e| e / inv_min).collect();
        }
        lmax * inv_min
    }

    #[test]
    fn class_covariance_reaches_target_anisotropy() {
        let cfg = SynthConfig {
            n_classes: 2,
            samples_per_class_per_position: 200,
            n_positions: 1,
            t_steps: 1,
            channels: 8,
            feature_anisotropy: 100.0,
            position_decay: vec![1.0],
            noise_std: 1e-4,
            seed: 17,
        };
        let ds = generate_synthetic(&cfg).unwrap();
        for c in 0..2 {
            let rows: Vec<Vec<f64>> = ds
                .samples
                .iter()
                .filter(|s| s.label == Label::Class(c))
                .map(|s| s.grid.as_slice().to_vec())
                .collect();
            let x = Matrix::from_rows(&rows).unwrap();
            let cov = sample_covariance(&x, &x.column_means()).unwrap();
            let kappa = condition_number_oracle(&cov);
            assert!(
                kappa > 100.0 / 3.0 && kappa < 300.0,
                "class {c}: condition number {kappa}"
            );
        }
    }
}
