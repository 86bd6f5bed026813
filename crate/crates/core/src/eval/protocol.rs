//! Cross-condition protocol: for every position and fold, draw a
//! known/unknown class partition, split the samples, train each config
//! variant, score the test set and collect metrics.

use std::path::PathBuf;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::metrics::{self, mean_std, MeanStd, ScoredSample};
use crate::backbone::BackboneConfig;
use crate::dataio::{fit_channel_stats, Dataset, Label};
use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::train::{train_model, Example, Splits, TrainConfig, TrainedModel};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ProtocolConfig {
    pub n_folds: usize,
    pub n_known: usize,
    pub n_unknown: usize,
    /// Share of each known class used for training; the rest is test.
    pub train_fraction: f64,
    /// Share of each unknown class drawn into the test set.
    pub unknown_test_fraction: f64,
    pub fpr: f64,
    /// Position indices to run; all positions when absent.
    pub positions: Option<Vec<usize>>,
}

impl Default for ProtocolConfig {
    fn default() -> Self {
        Self {
            n_folds: 10,
            n_known: 6,
            n_unknown: 4,
            train_fraction: 0.6,
            unknown_test_fraction: 0.4,
            fpr: 0.05,
            positions: None,
        }
    }
}

impl ProtocolConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.n_folds == 0 {
            return bad("n_folds must be >= 1".into());
        }
        if self.n_known < 1 || self.n_unknown < 1 {
            return bad("need at least one known and one unknown class".into());
        }
        for (name, v) in [
            ("train_fraction", self.train_fraction),
            ("unknown_test_fraction", self.unknown_test_fraction),
            ("fpr", self.fpr),
        ] {
            if !(v > 0.0 && v < 1.0) {
                return bad(format!("{name} must be in (0, 1), got {v}"));
            }
        }
        Ok(())
    }
}

/// A named training configuration compared by the protocol.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Variant {
    pub name: String,
    pub train: TrainConfig,
}

/// SplitMix64 finalizer over a running combination of the inputs.
pub fn derive_seed(seed: u64, parts: &[u64]) -> u64 {
    let mut x = seed;
    for &p in parts {
        x ^= p.wrapping_add(0x9E37_79B9_7F4A_7C15).wrapping_add(x << 6).wrapping_add(x >> 2);
        x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
        x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        x ^= x >> 31;
    }
    x
}

/// Random disjoint `(known, unknown)` class sets, each sorted.
pub fn partition_classes(n_classes: usize, n_known: usize, n_unknown: usize, rng: &mut impl Rng) -> Result<(Vec<usize>, Vec<usize>)> {
    if n_known + n_unknown > n_classes {
        return Err(Error::Protocol(format!(
            "{n_known} known + {n_unknown} unknown classes requested, dataset has {n_classes}"
        )));
    }
    let mut ids: Vec<usize> = (0..n_classes).collect();
    ids.shuffle(rng);
    let mut known = ids[..n_known].to_vec();
    let mut unknown = ids[n_known..n_known + n_unknown].to_vec();
    known.sort_unstable();
    unknown.sort_unstable();
    Ok((known, unknown))
}

/// Sample indices of one (position, fold).
#[derive(Debug, Clone, PartialEq)]
pub struct FoldSplit {
    pub known: Vec<usize>,
    pub unknown: Vec<usize>,
    pub train: Vec<usize>,
    pub test_known: Vec<usize>,
    pub test_unknown: Vec<usize>,
}

pub fn fold_split(dataset: &Dataset, proto: &ProtocolConfig, seed: u64, position: usize, fold: usize) -> Result<FoldSplit> {
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, &[position as u64, fold as u64, 0]));
    let (known, unknown) = partition_classes(dataset.class_names.len(), proto.n_known, proto.n_unknown, &mut rng)?;
    let pos_name = &dataset.positions[position];
    let mut split = FoldSplit {
        known: known.clone(),
        unknown: unknown.clone(),
        train: vec![],
        test_known: vec![],
        test_unknown: vec![],
    };
    for &c in &known {
        let mut idx = dataset.indices_of(Label::Class(c), position);
        let n_train = (proto.train_fraction * idx.len() as f64).round() as usize;
        if n_train < 2 || n_train >= idx.len() {
            return Err(Error::Protocol(format!(
                "class {} at position {pos_name} has {} sample(s); too few for a train/test split",
                dataset.class_names[c],
                idx.len()
            )));
        }
        idx.shuffle(&mut rng);
        split.train.extend_from_slice(&idx[..n_train]);
        split.test_known.extend_from_slice(&idx[n_train..]);
    }
    for &c in &unknown {
        let mut idx = dataset.indices_of(Label::Class(c), position);
        let n_test = (proto.unknown_test_fraction * idx.len() as f64).round() as usize;
        if n_test == 0 {
            return Err(Error::Protocol(format!(
                "unknown class {} at position {pos_name} has {} sample(s); none would be tested",
                dataset.class_names[c],
                idx.len()
            )));
        }
        idx.shuffle(&mut rng);
        split.test_unknown.extend_from_slice(&idx[..n_test]);
    }
    Ok(split)
}

/// Metrics of one (position, fold, config) run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRow {
    pub position: usize,
    pub fold: usize,
    pub config: String,
    pub accuracy: f64,
    pub tpr: f64,
    pub auroc: f64,
    pub tau: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunScores {
    pub position: usize,
    pub fold: usize,
    pub config: String,
    pub samples: Vec<ScoredSample>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfigSummary {
    pub config: String,
    pub runs: usize,
    pub accuracy: MeanStd,
    pub tpr: MeanStd,
    pub auroc: MeanStd,
    pub tau: MeanStd,
    /// Spread of the per-position mean AUROCs.
    pub position_auroc: MeanStd,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PositionSummary {
    pub config: String,
    pub position: usize,
    pub position_name: String,
    pub accuracy: MeanStd,
    pub tpr: MeanStd,
    pub auroc: MeanStd,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub rows: Vec<RunRow>,
    pub per_config: Vec<ConfigSummary>,
    pub per_position: Vec<PositionSummary>,
    #[serde(skip)]
    pub scores: Vec<RunScores>,
}

#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    /// Worker threads; 1 runs everything on the calling thread.
    pub jobs: usize,
    /// When set, every trained model is saved here.
    pub model_dir: Option<PathBuf>,
}

/// Trains and scores one variant on one (position, fold).
pub fn run_one(
    dataset: &Dataset,
    backbone: &BackboneConfig,
    proto: &ProtocolConfig,
    variant: &Variant,
    seed: u64,
    position: usize,
    fold: usize,
) -> Result<(RunRow, RunScores, TrainedModel)> {
    let split = fold_split(dataset, proto, seed, position, fold)?;
    let stats = fit_channel_stats(split.train.iter().map(|&i| &dataset.samples[i]))?;
    let normalized = |i: usize| -> Result<Matrix> {
        let mut s = dataset.samples[i].clone();
        stats.apply(&mut s)?;
        Ok(s.grid)
    };
    let local = |c: usize| split.known.iter().position(|&k| k == c);
    let label_of = |i: usize| match dataset.samples[i].label {
        Label::Class(c) => local(c),
        Label::Unknown => None,
    };

    let train_maps: Vec<Matrix> = split.train.iter().map(|&i| normalized(i)).collect::<Result<_>>()?;
    let examples: Vec<Example<'_>> = split
        .train
        .iter()
        .zip(&train_maps)
        .map(|(&i, m)| Example {
            map: m,
            label: label_of(i).expect("training samples are known"),
        })
        .collect();
    let mut carve_rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, &[position as u64, fold as u64, 1]));
    let splits = Splits::carve(examples, split.known.len(), variant.train.monitor_fraction, &mut carve_rng)?;
    let cfg = TrainConfig {
        seed: derive_seed(seed, &[position as u64, fold as u64, 2]),
        ..variant.train.clone()
    };
    let model = train_model(backbone, &splits, &cfg)?;

    let test: Vec<usize> = split.test_known.iter().chain(&split.test_unknown).copied().collect();
    let test_maps: Vec<Matrix> = test.iter().map(|&i| normalized(i)).collect::<Result<_>>()?;
    let refs: Vec<&Matrix> = test_maps.iter().collect();
    let scored = model.score_all(&refs)?;
    let samples: Vec<ScoredSample> = test
        .iter()
        .zip(scored)
        .map(|(&i, (score, predicted))| ScoredSample {
            score,
            predicted,
            truth: label_of(i),
            position,
        })
        .collect();
    let (k, u) = metrics::split_scores(&samples);
    let row = RunRow {
        position,
        fold,
        config: variant.name.clone(),
        accuracy: metrics::known_accuracy(&samples)?,
        tpr: metrics::tpr_at_fpr(&k, &u, proto.fpr)?,
        auroc: metrics::auroc(&k, &u)?,
        tau: model.threshold,
    };
    let scores = RunScores {
        position,
        fold,
        config: variant.name.clone(),
        samples,
    };
    Ok((row, scores, model))
}

/// Runs every (position, fold, variant) and aggregates the results. Output
/// order does not depend on `jobs`.
pub fn run_protocol(
    dataset: &Dataset,
    backbone: &BackboneConfig,
    variants: &[Variant],
    proto: &ProtocolConfig,
    seed: u64,
    options: &RunOptions,
    progress: &(dyn Fn(&RunRow) + Sync),
) -> Result<ExperimentReport> {
    proto.validate()?;
    dataset.validate()?;
    if variants.is_empty() {
        return Err(Error::Config("no config variants to run".into()));
    }
    let positions: Vec<usize> = match &proto.positions {
        Some(p) => p.clone(),
        None => (0..dataset.positions.len()).collect(),
    };
    if let Some(&bad) = positions.iter().find(|&&p| p >= dataset.positions.len()) {
        return Err(Error::Config(format!(
            "position {bad} requested, dataset has {}",
            dataset.positions.len()
        )));
    }
    // fail on unusable splits before any training starts
    for &p in &positions {
        for fold in 0..proto.n_folds {
            fold_split(dataset, proto, seed, p, fold)?;
        }
    }
    let tasks: Vec<(usize, usize, usize)> = positions
        .iter()
        .flat_map(|&p| (0..proto.n_folds).flat_map(move |f| (0..variants.len()).map(move |v| (p, f, v))))
        .collect();

    let work = |&(p, f, v): &(usize, usize, usize)| -> Result<(RunRow, RunScores)> {
        let (row, scores, model) = run_one(dataset, backbone, proto, &variants[v], seed, p, f)?;
        if let Some(dir) = &options.model_dir {
            model.save(dir.join(format!("{}_p{p}_f{f}.json", variants[v].name)))?;
        }
        progress(&row);
        Ok((row, scores))
    };
    let results: Vec<(RunRow, RunScores)> = if options.jobs <= 1 {
        tasks.iter().map(work).collect::<Result<_>>()?
    } else {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(options.jobs)
            .build()
            .map_err(|e| Error::Config(format!("cannot start {} workers: {e}", options.jobs)))?;
        pool.install(|| tasks.par_iter().map(work).collect::<Result<_>>())?
    };
    let (rows, scores): (Vec<RunRow>, Vec<RunScores>) = results.into_iter().unzip();
    let names: Vec<String> = variants.iter().map(|v| v.name.clone()).collect();
    Ok(aggregate(rows, scores, &names, &dataset.positions))
}

/// Sorts runs by (position, fold, variant order) and summarizes them.
pub fn aggregate(mut rows: Vec<RunRow>, mut scores: Vec<RunScores>, configs: &[String], position_names: &[String]) -> ExperimentReport {
    let order = |name: &str| configs.iter().position(|c| c == name).unwrap_or(usize::MAX);
    rows.sort_by_key(|r| (r.position, r.fold, order(&r.config)));
    scores.sort_by_key(|r| (r.position, r.fold, order(&r.config)));

    let mut positions: Vec<usize> = rows.iter().map(|r| r.position).collect();
    positions.dedup();
    let mut per_config = Vec::new();
    let mut per_position = Vec::new();
    for name in configs {
        let mine: Vec<&RunRow> = rows.iter().filter(|r| &r.config == name).collect();
        let col = |f: fn(&RunRow) -> f64, rs: &[&RunRow]| rs.iter().map(|r| f(r)).collect::<Vec<f64>>();
        let mut pos_means = Vec::new();
        for &p in &positions {
            let at: Vec<&RunRow> = mine.iter().copied().filter(|r| r.position == p).collect();
            let auroc = mean_std(&col(|r| r.auroc, &at));
            pos_means.push(auroc.mean);
            per_position.push(PositionSummary {
                config: name.clone(),
                position: p,
                position_name: position_names.get(p).cloned().unwrap_or_default(),
                accuracy: mean_std(&col(|r| r.accuracy, &at)),
                tpr: mean_std(&col(|r| r.tpr, &at)),
                auroc,
            });
        }
        per_config.push(ConfigSummary {
            config: name.clone(),
            runs: mine.len(),
            accuracy: mean_std(&col(|r| r.accuracy, &mine)),
            tpr: mean_std(&col(|r| r.tpr, &mine)),
            auroc: mean_std(&col(|r| r.auroc, &mine)),
            tau: mean_std(&col(|r| r.tau, &mine)),
            position_auroc: mean_std(&pos_means),
        });
    }
    ExperimentReport {
        rows,
        per_config,
        per_position,
        scores,
    }
}
