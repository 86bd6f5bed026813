//! Adam with coupled weight decay, and patience-based early stopping.

use crate::error::{Error, Result};

pub const BETA1: f64 = 0.9;
pub const BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

/// Moment state for a fixed list of parameter slots.
#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    pub lr: f64,
    pub weight_decay: f64,
    t: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl Adam {
    /// `sizes` gives the length of every slot, in the order later passed
    /// to [`Adam::step`].
    pub fn new(lr: f64, weight_decay: f64, sizes: &[usize]) -> Self {
        Self {
            lr,
            weight_decay,
            t: 0,
            m: sizes.iter().map(|&n| vec![0.0; n]).collect(),
            v: sizes.iter().map(|&n| vec![0.0; n]).collect(),
        }
    }

    pub fn steps(&self) -> u64 {
        self.t
    }

    /// One update over every slot. Gradients are checked for NaN/inf before
    /// anything is touched; `wd·θ` is added to each gradient.
    pub fn step(&mut self, params: &mut [&mut [f64]], grads: &[&[f64]]) -> Result<()> {
        if params.len() != self.m.len() || grads.len() != self.m.len() {
            return Err(Error::Shape(format!(
                "optimizer has {} slots, got {} params and {} grads",
                self.m.len(),
                params.len(),
                grads.len()
            )));
        }
        for (slot, (p, g)) in params.iter().zip(grads).enumerate() {
            if p.len() != self.m[slot].len() || g.len() != p.len() {
                return Err(Error::Shape(format!("slot {slot}: size changed")));
            }
            if let Some(i) = g.iter().position(|v| !v.is_finite()) {
                return Err(Error::Training(format!(
                    "non-finite gradient {} at slot {slot}, index {i} (step {})",
                    g[i],
                    self.t + 1
                )));
            }
        }
        self.t += 1;
        let bc1 = 1.0 - BETA1.powi(self.t as i32);
        let bc2 = 1.0 - BETA2.powi(self.t as i32);
        for (slot, (p, g)) in params.iter_mut().zip(grads).enumerate() {
            let (m, v) = (&mut self.m[slot], &mut self.v[slot]);
            for i in 0..p.len() {
                let gi = g[i] + self.weight_decay * p[i];
                m[i] = BETA1 * m[i] + (1.0 - BETA1) * gi;
                v[i] = BETA2 * v[i] + (1.0 - BETA2) * gi * gi;
                let m_hat = m[i] / bc1;
                let v_hat = v[i] / bc2;
                p[i] -= self.lr * m_hat / (v_hat.sqrt() + ADAM_EPS);
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StopSignal {
    Improved,
    Continue,
    Stop,
}

/// Stops after `patience` consecutive epochs without a strict decrease of
/// the monitored loss.
#[derive(Debug, Clone, PartialEq)]
pub struct EarlyStopping {
    pub patience: usize,
    best: f64,
    best_epoch: usize,
    stale: usize,
}

impl EarlyStopping {
    pub fn new(patience: usize) -> Self {
        Self {
            patience,
            best: f64::INFINITY,
            best_epoch: 0,
            stale: 0,
        }
    }

    /// Epochs are 1-based.
    pub fn observe(&mut self, epoch: usize, loss: f64) -> StopSignal {
        if loss < self.best {
            self.best = loss;
            self.best_epoch = epoch;
            self.stale = 0;
            return StopSignal::Improved;
        }
        self.stale += 1;
        if self.stale >= self.patience {
            StopSignal::Stop
        } else {
            StopSignal::Continue
        }
    }

    pub fn best_epoch(&self) -> usize {
        self.best_epoch
    }

    pub fn best_loss(&self) -> f64 {
        self.best
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_no_decay_is_a_no_op() {
        let mut adam = Adam::new(1e-3, 0.0, &[3]);
        let mut p = vec![1.0, -2.0, 0.5];
        let before = p.clone();
        for _ in 0..5 {
            adam.step(&mut [&mut p], &[&[0.0; 3]]).unwrap();
        }
        assert_eq!(p, before);
    }

    #[test]
    fn first_step_has_magnitude_lr() {
        // t=1: m̂ = g, v̂ = g², so Δ = lr·g/(|g| + ε)
        for g in [0.3, -7.0, 1e-3] {
            let lr = 4e-5;
            let mut adam = Adam::new(lr, 0.0, &[1]);
            let mut p = vec![0.0];
            adam.step(&mut [&mut p], &[&[g]]).unwrap();
            let expected = -lr * g / (g.abs() + ADAM_EPS);
            assert!((p[0] - expected).abs() < 1e-18, "g={g}");
        }
    }

    #[test]
    fn hand_recurrence_two_steps() {
        let (lr, wd) = (0.1, 0.01);
        let mut adam = Adam::new(lr, wd, &[1]);
        let mut p = vec![1.0];
        let mut oracle = 1.0f64;
        let (mut m, mut v) = (0.0f64, 0.0f64);
        for (t, g) in [(1, 0.5f64), (2, -0.2)] {
            adam.step(&mut [&mut p], &[&[g]]).unwrap();
            let gi = g + wd * oracle;
            m = 0.9 * m + 0.1 * gi;
            v = 0.999 * v + 0.001 * gi * gi;
            let mh = m / (1.0 - 0.9f64.powi(t));
            let vh = v / (1.0 - 0.999f64.powi(t));
            oracle -= lr * mh / (vh.sqrt() + 1e-8);
            assert!((p[0] - oracle).abs() < 1e-15);
        }
    }

    #[test]
    fn nan_gradient_aborts_without_update() {
        let mut adam = Adam::new(0.1, 0.0, &[2]);
        let mut p = vec![1.0, 2.0];
        let err = adam.step(&mut [&mut p], &[&[0.1, f64::NAN]]).unwrap_err();
        assert!(matches!(err, Error::Training(_)));
        assert_eq!(p, vec![1.0, 2.0]);
        assert_eq!(adam.steps(), 0);
    }

    #[test]
    fn flat_loss_stops_at_eleven() {
        let mut es = EarlyStopping::new(10);
        let mut stopped = None;
        for epoch in 1..=25 {
            if es.observe(epoch, 1.0) == StopSignal::Stop {
                stopped = Some(epoch);
                break;
            }
        }
        assert_eq!(stopped, Some(11));
        assert_eq!(es.best_epoch(), 1);
    }

    #[test]
    fn decreasing_loss_never_stops() {
        let mut es = EarlyStopping::new(10);
        for epoch in 1..=25 {
            assert_eq!(es.observe(epoch, 1.0 / epoch as f64), StopSignal::Improved);
        }
        assert_eq!(es.best_epoch(), 25);
    }
}
