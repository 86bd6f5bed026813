use log::warn;
use serde::{Deserialize, Serialize};

use super::{Dataset, RawSequence, SampleMap};
use crate::error::{Error, Result};

/// Averages non-overlapping windows of `window` points. A trailing partial
/// window is dropped.
pub fn downsample_mean(raw: &RawSequence, window: usize) -> Result<RawSequence> {
    if window == 0 {
        return Err(Error::InvalidInput("downsample window must be >= 1".into()));
    }
    if raw.channels.is_empty() || raw.is_empty() {
        return Err(Error::InvalidInput("cannot downsample an empty sequence".into()));
    }
    if raw.len() < window {
        return Err(Error::InvalidInput(format!(
            "series of length {} is shorter than the window {window}",
            raw.len()
        )));
    }
    let channels = raw
        .channels
        .iter()
        .map(|series| {
            series
                .chunks_exact(window)
                .map(|w| w.iter().sum::<f64>() / window as f64)
                .collect()
        })
        .collect();
    Ok(RawSequence {
        rate_hz: raw.rate_hz / window as f64,
        channels,
    })
}

/// Per-channel z-score statistics (population standard deviation).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChannelStats {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
    /// Channels whose variance was zero on the fit split; their std is 1.
    pub clamped: Vec<usize>,
}

impl ChannelStats {
    pub fn apply(&self, sample: &mut SampleMap) -> Result<()> {
        if sample.channels() != self.mean.len() {
            return Err(Error::Shape(format!(
                "stats cover {} channels, sample has {}",
                self.mean.len(),
                sample.channels()
            )));
        }
        for t in 0..sample.t_steps() {
            for ((v, m), s) in sample.grid.row_mut(t).iter_mut().zip(&self.mean).zip(&self.std) {
                *v = (*v - m) / s;
            }
        }
        Ok(())
    }
}

/// Fits channel statistics over every time step of every given sample.
pub fn fit_channel_stats<'a>(samples: impl IntoIterator<Item = &'a SampleMap>) -> Result<ChannelStats> {
    let samples: Vec<&SampleMap> = samples.into_iter().collect();
    let Some(first) = samples.first() else {
        return Err(Error::InvalidInput("z-score fit split is empty".into()));
    };
    let c = first.channels();
    if samples.iter().any(|s| s.channels() != c) {
        return Err(Error::Shape("samples disagree on channel count".into()));
    }

    let mut count = 0usize;
    let mut mean = vec![0.0; c];
    for s in &samples {
        for row in s.grid.row_iter() {
            for (m, v) in mean.iter_mut().zip(row) {
                *m += v;
            }
        }
        count += s.t_steps();
    }
    if count == 0 {
        return Err(Error::InvalidInput("z-score fit split has no time steps".into()));
    }
    mean.iter_mut().for_each(|m| *m /= count as f64);

    let mut var = vec![0.0; c];
    for s in &samples {
        for row in s.grid.row_iter() {
            for ((acc, v), m) in var.iter_mut().zip(row).zip(&mean) {
                *acc += (v - m) * (v - m);
            }
        }
    }

    let mut clamped = Vec::new();
    let std = var
        .iter()
        .enumerate()
        .map(|(j, v)| {
            let s = (v / count as f64).sqrt();
            if s > 0.0 {
                s
            } else {
                warn!("channel {j} has zero variance on the fit split; std clamped to 1");
                clamped.push(j);
                1.0
            }
        })
        .collect();
    Ok(ChannelStats { mean, std, clamped })
}

/// Fits channel statistics on `dataset` and returns the normalized copy
/// together with the statistics for re-application to other splits.
pub fn zscore_channels(dataset: &Dataset) -> Result<(Dataset, ChannelStats)> {
    let stats = fit_channel_stats(&dataset.samples)?;
    let mut out = dataset.clone();
    for s in &mut out.samples {
        stats.apply(s)?;
    }
    Ok((out, stats))
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;

    use super::*;
    use crate::dataio::Label;
    use crate::linalg::Matrix;

    fn map(rows: &[Vec<f64>]) -> SampleMap {
        SampleMap::new(Matrix::from_rows(rows).unwrap(), Label::Class(0), 0).unwrap()
    }

    #[test]
    fn downsample_constant_and_pairs() {
        let raw = RawSequence::new(100.0, vec![vec![3.0; 10]]).unwrap();
        let d = downsample_mean(&raw, 4).unwrap();
        assert_eq!(d.channels[0], vec![3.0, 3.0]);
        assert_eq!(d.rate_hz, 25.0);

        let raw = RawSequence::new(2.0, vec![vec![1.0, 2.0, 3.0, 4.0]]).unwrap();
        assert_eq!(downsample_mean(&raw, 2).unwrap().channels[0], vec![1.5, 3.5]);
    }

    #[test]
    fn downsample_full_recording_length() {
        let raw = RawSequence::new(100.0, vec![(0..26_000).map(f64::from).collect(); 2]).unwrap();
        let d = downsample_mean(&raw, 100).unwrap();
        assert_eq!(d.len(), 260);
        assert_eq!(d.rate_hz, 1.0);
    }

    #[test]
    fn downsample_rejects_empty() {
        let raw = RawSequence::new(100.0, vec![vec![]]).unwrap();
        assert!(matches!(downsample_mean(&raw, 1), Err(Error::InvalidInput(_))));
        let raw = RawSequence::new(100.0, vec![vec![1.0]]).unwrap();
        assert!(downsample_mean(&raw, 0).is_err());
        assert!(downsample_mean(&raw, 2).is_err());
    }

    proptest! {
        #[test]
        fn downsample_commutes_with_shift(
            series in prop::collection::vec(-100.0f64..100.0, 1..64),
            window in 1usize..8,
            shift in -50.0f64..50.0,
        ) {
            prop_assume!(series.len() >= window);
            let raw = RawSequence::new(1.0, vec![series.clone()]).unwrap();
            let shifted = RawSequence::new(1.0, vec![series.iter().map(|v| v + shift).collect()]).unwrap();
            let a = downsample_mean(&raw, window).unwrap();
            let b = downsample_mean(&shifted, window).unwrap();
            for (x, y) in a.channels[0].iter().zip(&b.channels[0]) {
                prop_assert!((x + shift - y).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn zscore_two_point_channel() {
        let ds = Dataset {
            samples: vec![map(&[vec![0.0], vec![2.0]])],
            class_names: vec!["a".into()],
            positions: vec!["L1".into()],
        };
        let (out, stats) = zscore_channels(&ds).unwrap();
        assert_eq!(out.samples[0].grid.as_slice(), &[-1.0, 1.0]);
        assert_eq!(stats.mean, vec![1.0]);
        assert_eq!(stats.std, vec![1.0]);
        assert!(stats.clamped.is_empty());
    }

    #[test]
    fn zscore_constant_channel_clamps() {
        let ds = Dataset {
            samples: vec![map(&[vec![5.0, 1.0], vec![5.0, 3.0]])],
            class_names: vec!["a".into()],
            positions: vec!["L1".into()],
        };
        let (out, stats) = zscore_channels(&ds).unwrap();
        assert_eq!(stats.clamped, vec![0]);
        assert_eq!(stats.std[0], 1.0);
        assert_eq!(out.samples[0].grid.as_slice(), &[0.0, -1.0, 0.0, 1.0]);
    }

    #[test]
    fn zscore_standardizes_and_reapplies_exactly() {
        use rand::SeedableRng;
        use rand_distr::{Distribution, Normal};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(9);
        let normal = Normal::new(3.0, 2.5).unwrap();
        let samples: Vec<SampleMap> = (0..6)
            .map(|_| {
                let rows: Vec<Vec<f64>> = (0..20)
                    .map(|_| (0..3).map(|_| normal.sample(&mut rng)).collect())
                    .collect();
                map(&rows)
            })
            .collect();
        let ds = Dataset {
            samples,
            class_names: vec!["a".into()],
            positions: vec!["L1".into()],
        };
        let (out, stats) = zscore_channels(&ds).unwrap();
        let refit = fit_channel_stats(&out.samples).unwrap();
        for j in 0..3 {
            assert!(refit.mean[j].abs() < 1e-6);
            assert!((refit.std[j] - 1.0).abs() < 1e-6);
        }
        for (orig, norm) in ds.samples.iter().zip(&out.samples) {
            let mut again = orig.clone();
            stats.apply(&mut again).unwrap();
            assert_eq!(again.grid.as_slice(), norm.grid.as_slice());
        }
    }

    #[test]
    fn zscore_standard_normal_roughly_unchanged() {
        use rand::SeedableRng;
        use rand_distr::{Distribution, StandardNormal};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(4);
        let rows: Vec<Vec<f64>> = (0..20_000)
            .map(|_| vec![StandardNormal.sample(&mut rng)])
            .collect();
        let ds = Dataset {
            samples: vec![map(&rows)],
            class_names: vec!["a".into()],
            positions: vec!["L1".into()],
        };
        let (out, _) = zscore_channels(&ds).unwrap();
        let max_change = ds.samples[0]
            .grid
            .as_slice()
            .iter()
            .zip(out.samples[0].grid.as_slice())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        assert!(max_change < 0.1, "{max_change}");
    }
}
