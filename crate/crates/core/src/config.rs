//! The experiment file: one JSON document describing the dataset, the
//! backbone, training, and the evaluation protocol.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::backbone::BackboneConfig;
use crate::dataio::{generate_synthetic, load_dataset, Dataset, SynthConfig};
use crate::error::{Error, Result};
use crate::eval::{ProtocolConfig, Variant};
use crate::train::{Objective, ScoreMetric, TrainConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum DatasetSource {
    /// Directory holding a `manifest.json`. Relative paths resolve against
    /// the directory of the config file.
    Path(PathBuf),
    Synthetic(SynthConfig),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default = "default_seed")]
    pub seed: u64,
    #[serde(default = "default_name")]
    pub name: String,
    pub dataset: DatasetSource,
    pub backbone: BackboneConfig,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default)]
    pub protocol: ProtocolConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<PathBuf>,
}

fn default_seed() -> u64 {
    41
}

fn default_name() -> String {
    "model".into()
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads, parses and validates a config file, resolving a relative
    /// dataset path against the file's directory.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        let mut cfg: Self = serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        if let DatasetSource::Path(p) = &mut cfg.dataset {
            if p.is_relative() {
                let base = path.parent().unwrap_or(Path::new(""));
                *p = base.join(&*p);
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    /// Replaces the top-level seed; a synthetic dataset follows it too.
    pub fn override_seed(&mut self, seed: u64) {
        self.seed = seed;
        if let DatasetSource::Synthetic(s) = &mut self.dataset {
            s.seed = seed;
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.name.is_empty() || !self.name.chars().all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '-') {
            return Err(Error::Config(format!(
                "name {:?} must be non-empty and use only [A-Za-z0-9_-]",
                self.name
            )));
        }
        self.backbone.validate()?;
        self.train.validate()?;
        self.protocol.validate()?;
        if let DatasetSource::Synthetic(s) = &self.dataset {
            s.validate()?;
            self.check_shape(s.t_steps, s.channels)?;
            self.check_classes(s.n_classes, s.n_positions)?;
        }
        Ok(())
    }

    /// Checks the configured backbone against a dataset's map shape.
    pub fn check_shape(&self, t_steps: usize, channels: usize) -> Result<()> {
        let (want_t, want_c) = self.backbone.input_shape();
        if want_c != channels || want_t.is_some_and(|t| t != t_steps) {
            return Err(Error::Config(format!(
                "{} backbone expects maps of {} x {want_c}, dataset has {t_steps} x {channels}",
                self.backbone.name(),
                want_t.map_or("any".to_string(), |t| t.to_string()),
            )));
        }
        Ok(())
    }

    fn check_classes(&self, n_classes: usize, n_positions: usize) -> Result<()> {
        let p = &self.protocol;
        if p.n_known + p.n_unknown > n_classes {
            return Err(Error::Config(format!(
                "protocol needs {} known + {} unknown classes, dataset has {n_classes}",
                p.n_known, p.n_unknown
            )));
        }
        if let Some(bad) = p.positions.iter().flatten().find(|&&i| i >= n_positions) {
            return Err(Error::Config(format!("position {bad} requested, dataset has {n_positions}")));
        }
        Ok(())
    }

    /// Generates or loads the dataset and checks it against the config.
    pub fn resolve_dataset(&self) -> Result<Dataset> {
        let ds = match &self.dataset {
            DatasetSource::Synthetic(s) => generate_synthetic(s)?,
            DatasetSource::Path(p) => load_dataset(p)?,
        };
        if let Some((t, c)) = ds.map_shape() {
            self.check_shape(t, c)?;
        }
        self.check_classes(ds.class_names.len(), ds.positions.len())?;
        Ok(ds)
    }

    pub fn variant(&self) -> Variant {
        Variant {
            name: self.name.clone(),
            train: self.train.clone(),
        }
    }

    /// The ablation matrix built on top of `train`: five metric/refinement
    /// rows and the softmax baseline.
    pub fn ablation_variants(&self) -> Vec<Variant> {
        ABLATION_ROWS
            .iter()
            .map(|row| Variant {
                name: row.name.to_string(),
                train: row.apply(&self.train),
            })
            .collect()
    }
}

pub struct AblationRow {
    pub name: &'static str,
    pub label: &'static str,
    pub use_bn: bool,
    pub use_l2n: bool,
    pub objective: Objective,
    pub metric: ScoreMetric,
}

impl AblationRow {
    pub fn apply(&self, base: &TrainConfig) -> TrainConfig {
        TrainConfig {
            use_bn: self.use_bn,
            use_l2n: self.use_l2n,
            objective: self.objective,
            score_metric: self.metric,
            ..base.clone()
        }
    }
}

pub const ABLATION_ROWS: [AblationRow; 6] = [
    AblationRow {
        name: "base",
        label: "BASE",
        use_bn: false,
        use_l2n: false,
        objective: Objective::Cac,
        metric: ScoreMetric::Anchor,
    },
    AblationRow {
        name: "m",
        label: "+M",
        use_bn: false,
        use_l2n: false,
        objective: Objective::Cac,
        metric: ScoreMetric::Mahalanobis,
    },
    AblationRow {
        name: "m_bn",
        label: "+M+BN",
        use_bn: true,
        use_l2n: false,
        objective: Objective::Cac,
        metric: ScoreMetric::Mahalanobis,
    },
    AblationRow {
        name: "m_l2n",
        label: "+M+L2N",
        use_bn: false,
        use_l2n: true,
        objective: Objective::Cac,
        metric: ScoreMetric::Mahalanobis,
    },
    AblationRow {
        name: "full",
        label: "full",
        use_bn: true,
        use_l2n: true,
        objective: Objective::Cac,
        metric: ScoreMetric::Mahalanobis,
    },
    AblationRow {
        name: "softmax",
        label: "Softmax",
        use_bn: false,
        use_l2n: false,
        objective: Objective::Softmax,
        metric: ScoreMetric::Softmax,
    },
];

/// Display label for an ablation row name; other names pass through.
pub fn ablation_label(name: &str) -> String {
    ABLATION_ROWS
        .iter()
        .find(|r| r.name == name)
        .map_or_else(|| name.to_string(), |r| r.label.to_string())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::error::ErrorKind;

    const MINIMAL: &str = r#"{
        "dataset": {"synthetic": {"n_classes": 4, "samples_per_class_per_position": 8, "n_positions": 1,
                                  "t_steps": 8, "channels": 4, "position_decay": [1.0]}},
        "backbone": {"kind": "mlp", "channels": 4, "hidden": 8, "out_dim": 4},
        "protocol": {"n_folds": 1, "n_known": 2, "n_unknown": 1}
    }"#;

    #[test]
    fn minimal_config_parses_with_defaults() {
        let cfg = ExperimentConfig::from_json(MINIMAL).unwrap();
        assert_eq!(cfg.seed, 41);
        assert_eq!(cfg.name, "model");
        assert_eq!(cfg.train, TrainConfig::default());
        let back = ExperimentConfig::from_json(&cfg.to_json()).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn unknown_keys_are_rejected_at_every_level() {
        let cases = [
            MINIMAL.replacen("\"dataset\"", "\"bogus\": 1, \"dataset\"", 1),
            MINIMAL.replacen("\"n_folds\"", "\"folds\": 3, \"n_folds\"", 1),
            MINIMAL.replacen("\"hidden\"", "\"width\": 3, \"hidden\"", 1),
            MINIMAL.replacen("\"t_steps\"", "\"steps\": 3, \"t_steps\"", 1),
            MINIMAL.replacen("\"protocol\"", "\"train\": {\"lr_max\": 1}, \"protocol\"", 1),
        ];
        for text in cases {
            let err = ExperimentConfig::from_json(&text).unwrap_err();
            assert_eq!(err.kind(), ErrorKind::Config, "{text}");
        }
    }

    #[test]
    fn shape_and_class_mismatches_are_config_errors() {
        let wrong_channels = MINIMAL.replace("\"channels\": 4, \"hidden\"", "\"channels\": 5, \"hidden\"");
        assert!(matches!(ExperimentConfig::from_json(&wrong_channels), Err(Error::Config(_))));
        let too_many = MINIMAL.replace("\"n_known\": 2", "\"n_known\": 4");
        assert!(matches!(ExperimentConfig::from_json(&too_many), Err(Error::Config(_))));
        let bad_name = MINIMAL.replacen("{", "{\"name\": \"a b\",", 1);
        assert!(matches!(ExperimentConfig::from_json(&bad_name), Err(Error::Config(_))));
    }

    #[test]
    fn seed_override_reaches_synthetic_source() {
        let mut cfg = ExperimentConfig::from_json(MINIMAL).unwrap();
        cfg.override_seed(7);
        assert_eq!(cfg.seed, 7);
        let DatasetSource::Synthetic(s) = &cfg.dataset else { unreachable!() };
        assert_eq!(s.seed, 7);
    }

    #[test]
    fn relative_dataset_path_resolves_against_config_dir() {
        let dir = tempfile::tempdir().unwrap();
        let sub = dir.path().join("cfg");
        std::fs::create_dir(&sub).unwrap();
        let file = sub.join("exp.json");
        std::fs::write(
            &file,
            r#"{"dataset": {"path": "../data"}, "backbone": {"kind": "mlp", "channels": 4, "hidden": 8, "out_dim": 4}}"#,
        )
        .unwrap();
        let cfg = ExperimentConfig::load(&file).unwrap();
        assert_eq!(cfg.dataset, DatasetSource::Path(sub.join("../data")));
    }

    #[test]
    fn ablation_matrix_has_six_distinct_rows() {
        let cfg = ExperimentConfig::from_json(MINIMAL).unwrap();
        let v = cfg.ablation_variants();
        assert_eq!(v.len(), 6);
        for row in &v {
            row.train.validate().unwrap();
        }
        let full = v.iter().find(|r| r.name == "full").unwrap();
        assert!(full.train.use_bn && full.train.use_l2n);
        assert_eq!(ablation_label("m_l2n"), "+M+L2N");
        assert_eq!(ablation_label("custom"), "custom");
    }
}
