//! Directory layout: `manifest.json` plus one headerless CSV per sample.
//!
//! ```json
//! {
//!   "class_names": ["acetone", "ammonia"],
//!   "positions": ["L1", "L2"],
//!   "t_steps": 260,
//!   "channels": 72,
//!   "samples": [
//!     {"file": "samples/00000.csv", "label": "acetone", "position": "L1"},
//!     {"file": "samples/00001.csv", "label": "unknown", "position": "L2"}
//!   ]
//! }
//! ```
//!
//! Each CSV has `t_steps` rows and `channels` comma-separated decimal
//! columns. A preprocessed wind-tunnel gas-sensor sample (1 Hz, 260 steps, 72
//! sensors) maps onto one file with `t_steps = 260` and `channels = 72`;
//! the gas name is the label and the tunnel line (L1..L5) the position.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{Dataset, Label, SampleMap};
use crate::error::{Error, Result};
use crate::linalg::Matrix;

pub const MANIFEST_FILE: &str = "manifest.json";
const UNKNOWN_LABEL: &str = "unknown";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub class_names: Vec<String>,
    pub positions: Vec<String>,
    pub t_steps: usize,
    pub channels: usize,
    pub samples: Vec<ManifestSample>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestSample {
    pub file: String,
    pub label: String,
    pub position: String,
}

/// Loads a dataset from a directory containing `manifest.json`, or from the
/// manifest file itself. All offending entries are reported together.
pub fn load_dataset(path: impl AsRef<Path>) -> Result<Dataset> {
    let path = path.as_ref();
    let manifest_path = if path.is_dir() {
        path.join(MANIFEST_FILE)
    } else {
        path.to_path_buf()
    };
    let root = manifest_path.parent().map(Path::to_path_buf).unwrap_or_default();
    let text = fs::read_to_string(&manifest_path).map_err(|e| Error::io(&manifest_path, e))?;
    let manifest: Manifest =
        serde_json::from_str(&text).map_err(|e| Error::json(&manifest_path, e))?;

    let mut problems = Vec::new();
    if manifest.class_names.iter().any(|c| c == UNKNOWN_LABEL) {
        problems.push(format!("class name {UNKNOWN_LABEL:?} is reserved"));
    }
    let class_index: HashMap<&str, usize> = manifest
        .class_names
        .iter()
        .enumerate()
        .map(|(i, c)| (c.as_str(), i))
        .collect();
    let position_index: HashMap<&str, usize> = manifest
        .positions
        .iter()
        .enumerate()
        .map(|(i, p)| (p.as_str(), i))
        .collect();

    let mut samples = Vec::with_capacity(manifest.samples.len());
    for entry in &manifest.samples {
        let label = if entry.label == UNKNOWN_LABEL {
            Some(Label::Unknown)
        } else {
            class_index.get(entry.label.as_str()).map(|&c| Label::Class(c))
        };
        let Some(label) = label else {
            problems.push(format!("{}: unknown label {:?}", entry.file, entry.label));
            continue;
        };
        let Some(&position) = position_index.get(entry.position.as_str()) else {
            problems.push(format!("{}: unknown position {:?}", entry.file, entry.position));
            continue;
        };
        let file = root.join(&entry.file);
        match read_grid(&file, manifest.t_steps, manifest.channels) {
            Ok(grid) => samples.push(SampleMap {
                grid,
                label,
                position,
            }),
            Err(msg) => problems.push(format!("{}: {msg}", file.display())),
        }
    }
    if !problems.is_empty() {
        return Err(Error::Load(problems));
    }
    Ok(Dataset {
        samples,
        class_names: manifest.class_names,
        positions: manifest.positions,
    })
}

fn read_grid(file: &Path, t_steps: usize, channels: usize) -> std::result::Result<Matrix, String> {
    let text = fs::read_to_string(file).map_err(|e| e.to_string())?;
    let mut data = Vec::with_capacity(t_steps * channels);
    let mut rows = 0;
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        rows += 1;
        let before = data.len();
        for cell in line.split(',') {
            let v: f64 = cell
                .trim()
                .parse()
                .map_err(|_| format!("line {}: non-numeric cell {cell:?}", i + 1))?;
            if !v.is_finite() {
                return Err(format!("line {}: non-finite cell {cell:?}", i + 1));
            }
            data.push(v);
        }
        if data.len() - before != channels {
            return Err(format!(
                "line {}: {} columns, manifest declares {channels}",
                i + 1,
                data.len() - before
            ));
        }
    }
    if rows != t_steps {
        return Err(format!("{rows} rows, manifest declares t_steps = {t_steps}"));
    }
    Matrix::from_vec(t_steps, channels, data).map_err(|e| e.to_string())
}

/// Writes `dataset` under `dir` in the manifest format. Output is a pure
/// function of the dataset, so equal datasets give byte-identical trees.
pub fn save_dataset(dataset: &Dataset, dir: impl AsRef<Path>) -> Result<Manifest> {
    let dir = dir.as_ref();
    dataset.validate()?;
    let (t_steps, channels) = dataset.map_shape().unwrap_or((0, 0));
    let sample_dir = dir.join("samples");
    fs::create_dir_all(&sample_dir).map_err(|e| Error::io(&sample_dir, e))?;

    let mut entries = Vec::with_capacity(dataset.len());
    for (i, s) in dataset.samples.iter().enumerate() {
        let rel = format!("samples/{i:05}.csv");
        let path: PathBuf = dir.join(&rel);
        fs::write(&path, grid_to_csv(&s.grid)).map_err(|e| Error::io(&path, e))?;
        entries.push(ManifestSample {
            file: rel,
            label: match s.label {
                Label::Class(c) => dataset.class_names[c].clone(),
                Label::Unknown => UNKNOWN_LABEL.to_string(),
            },
            position: dataset.positions[s.position].clone(),
        });
    }
    let manifest = Manifest {
        class_names: dataset.class_names.clone(),
        positions: dataset.positions.clone(),
        t_steps,
        channels,
        samples: entries,
    };
    let path = dir.join(MANIFEST_FILE);
    let json = serde_json::to_string_pretty(&manifest).map_err(|e| Error::json(&path, e))?;
    fs::write(&path, json + "\n").map_err(|e| Error::io(&path, e))?;
    Ok(manifest)
}

fn grid_to_csv(grid: &Matrix) -> String {
    let mut out = String::with_capacity(grid.rows() * grid.cols() * 12);
    for row in grid.row_iter() {
        for (j, v) in row.iter().enumerate() {
            if j > 0 {
                out.push(',');
            }
            // Display for f64 is the shortest string that parses back exactly.
            write!(out, "{v}").unwrap();
        }
        out.push('\n');
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> Dataset {
        let grid = |v: f64| Matrix::from_vec(3, 2, vec![v, 0.1, -v, 1e-9, 2.5, v / 3.0]).unwrap();
        Dataset {
            samples: vec![
                SampleMap::new(grid(1.0), Label::Class(1), 0).unwrap(),
                SampleMap::new(grid(-7.25), Label::Unknown, 1).unwrap(),
            ],
            class_names: vec!["a".into(), "b".into()],
            positions: vec!["L1".into(), "L2".into()],
        }
    }

    #[test]
    fn round_trip_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        let ds = tiny();
        save_dataset(&ds, dir.path()).unwrap();
        assert_eq!(load_dataset(dir.path()).unwrap(), ds);
        assert_eq!(load_dataset(dir.path().join(MANIFEST_FILE)).unwrap(), ds);
    }

    #[test]
    fn empty_manifest_loads() {
        let dir = tempfile::tempdir().unwrap();
        fs::write(
            dir.path().join(MANIFEST_FILE),
            r#"{"class_names":[],"positions":[],"t_steps":260,"channels":72,"samples":[]}"#,
        )
        .unwrap();
        assert!(load_dataset(dir.path()).unwrap().is_empty());
    }

    #[test]
    fn short_file_is_named_in_error() {
        let dir = tempfile::tempdir().unwrap();
        let ds = tiny();
        save_dataset(&ds, dir.path()).unwrap();
        let bad = dir.path().join("samples/00001.csv");
        fs::write(&bad, "1,2\n3,4\n").unwrap();
        match load_dataset(dir.path()) {
            Err(Error::Load(problems)) => {
                assert_eq!(problems.len(), 1);
                assert!(problems[0].contains("00001.csv"), "{problems:?}");
                assert!(problems[0].contains("t_steps = 3"));
            }
            other => panic!("expected load error, got {other:?}"),
        }
    }

    #[test]
    fn bad_cells_and_labels_collected() {
        let dir = tempfile::tempdir().unwrap();
        save_dataset(&tiny(), dir.path()).unwrap();
        fs::write(dir.path().join("samples/00000.csv"), "1,x\n1,2\n1,2\n").unwrap();
        let mut m: Manifest =
            serde_json::from_str(&fs::read_to_string(dir.path().join(MANIFEST_FILE)).unwrap())
                .unwrap();
        m.samples[1].label = "zzz".into();
        fs::write(dir.path().join(MANIFEST_FILE), serde_json::to_string(&m).unwrap()).unwrap();
        match load_dataset(dir.path()) {
            Err(Error::Load(problems)) => {
                assert_eq!(problems.len(), 2);
                assert!(problems.iter().any(|p| p.contains("non-numeric")));
                assert!(problems.iter().any(|p| p.contains("zzz")));
            }
            other => panic!("expected load error, got {other:?}"),
        }
    }

    #[test]
    fn missing_manifest_is_io_error() {
        let dir = tempfile::tempdir().unwrap();
        assert!(matches!(load_dataset(dir.path()), Err(Error::Io { .. })));
    }

    #[test]
    fn bad_header_rejected() {
        let dir = tempfile::tempdir().unwrap();
        fs::write(dir.path().join(MANIFEST_FILE), r#"{"classes":[]}"#).unwrap();
        assert!(matches!(load_dataset(dir.path()), Err(Error::Json { .. })));
    }
}
