//! Sensor-array samples: preprocessing, the on-disk dataset format and the
//! synthetic drift generator.

mod format;
mod preprocess;
mod synth;

pub use format::{load_dataset, save_dataset, Manifest, ManifestSample, MANIFEST_FILE};
pub use preprocess::{downsample_mean, fit_channel_stats, zscore_channels, ChannelStats};
pub use synth::{generate_synthetic, SynthConfig};

use crate::error::{Error, Result};
use crate::linalg::Matrix;

/// Ground-truth tag of a sample.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Label {
    /// Index into [`Dataset::class_names`].
    Class(usize),
    Unknown,
}

/// Multichannel recording before downsampling.
#[derive(Debug, Clone, PartialEq)]
pub struct RawSequence {
    pub rate_hz: f64,
    /// One series per channel, all the same length.
    pub channels: Vec<Vec<f64>>,
}

impl RawSequence {
    pub fn new(rate_hz: f64, channels: Vec<Vec<f64>>) -> Result<Self> {
        let len = channels.first().map_or(0, Vec::len);
        if channels.iter().any(|c| c.len() != len) {
            return Err(Error::InvalidInput("channels have different lengths".into()));
        }
        Ok(Self { rate_hz, channels })
    }

    pub fn len(&self) -> usize {
        self.channels.first().map_or(0, Vec::len)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Lays the recording out as a `T × C` map.
    pub fn into_map(self, label: Label, position: usize) -> Result<SampleMap> {
        let t = self.len();
        let c = self.channels.len();
        let mut grid = Matrix::zeros(t, c);
        for (j, series) in self.channels.iter().enumerate() {
            for (i, &v) in series.iter().enumerate() {
                grid[(i, j)] = v;
            }
        }
        SampleMap::new(grid, label, position)
    }
}

/// One preprocessed sample: a `T × C` spatiotemporal map.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleMap {
    pub grid: Matrix,
    pub label: Label,
    /// Index into [`Dataset::positions`].
    pub position: usize,
}

impl SampleMap {
    pub fn new(grid: Matrix, label: Label, position: usize) -> Result<Self> {
        if !grid.is_finite() {
            return Err(Error::InvalidInput("sample map has non-finite entries".into()));
        }
        Ok(Self {
            grid,
            label,
            position,
        })
    }

    pub fn t_steps(&self) -> usize {
        self.grid.rows()
    }

    pub fn channels(&self) -> usize {
        self.grid.cols()
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Dataset {
    pub samples: Vec<SampleMap>,
    pub class_names: Vec<String>,
    pub positions: Vec<String>,
}

impl Dataset {
    /// Checks label and position indices and that every map has one shape.
    pub fn validate(&self) -> Result<()> {
        let mut problems = Vec::new();
        let shape = self.samples.first().map(|s| s.grid.shape());
        for (i, s) in self.samples.iter().enumerate() {
            if let Label::Class(c) = s.label {
                if c >= self.class_names.len() {
                    problems.push(format!("sample {i}: label {c} out of range"));
                }
            }
            if s.position >= self.positions.len() {
                problems.push(format!("sample {i}: position {} out of range", s.position));
            }
            if Some(s.grid.shape()) != shape {
                problems.push(format!("sample {i}: shape {:?} differs", s.grid.shape()));
            }
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::Load(problems))
        }
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// `(t_steps, channels)` of the samples, if any.
    pub fn map_shape(&self) -> Option<(usize, usize)> {
        self.samples.first().map(|s| s.grid.shape())
    }

    /// Indices of samples with the given label at the given position.
    pub fn indices_of(&self, label: Label, position: usize) -> Vec<usize> {
        self.samples
            .iter()
            .enumerate()
            .filter(|(_, s)| s.label == label && s.position == position)
            .map(|(i, _)| i)
            .collect()
    }
}
