//! Per-class statistics on refined features, distance-based rejection
//! scores and the open-set decision rule.
//!
//! A sample is scored by its distance to the nearest class centre,
//! `s = min_c D(f, c)`, and rejected as unknown when `s ≥ τ`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{cholesky, norm2, regularize, sample_covariance, solve_lower, LowerTriangular, Matrix};

pub const DEFAULT_LAMBDA: f64 = 1e-4;
pub const DEFAULT_PERCENTILE: f64 = 95.0;

/// Tolerance used when checking that fitted features lie on the sphere.
pub const UNIT_NORM_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassStats {
    pub class_id: usize,
    pub mu: Vec<f64>,
    /// `Σ_c + λI`
    pub sigma_reg: Matrix,
    pub chol: LowerTriangular,
    pub n_samples: usize,
}

impl ClassStats {
    pub fn dim(&self) -> usize {
        self.mu.len()
    }

    /// Builds stats from a given mean and (already regularized) covariance.
    pub fn from_parts(class_id: usize, mu: Vec<f64>, sigma_reg: Matrix, n_samples: usize) -> Result<Self> {
        if sigma_reg.shape() != (mu.len(), mu.len()) {
            return Err(Error::Shape(format!(
                "covariance is {:?}, mean has length {}",
                sigma_reg.shape(),
                mu.len()
            )));
        }
        let chol = cholesky(&sigma_reg)?;
        Ok(Self {
            class_id,
            mu,
            sigma_reg,
            chol,
            n_samples,
        })
    }
}

/// Distance used by [`rejection_score`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    Mahalanobis,
    Euclidean,
}

/// One [`ClassStats`] per distinct label, ordered by class id.
///
/// With `require_unit_norm` every row must lie on the unit sphere; the
/// ablation variants that skip the projection pass `false`.
pub fn fit_stats(features: &Matrix, labels: &[usize], lambda: f64, require_unit_norm: bool) -> Result<Vec<ClassStats>> {
    if features.rows() != labels.len() {
        return Err(Error::Shape(format!(
            "{} feature rows but {} labels",
            features.rows(),
            labels.len()
        )));
    }
    if require_unit_norm {
        for (i, row) in features.row_iter().enumerate() {
            let n = norm2(row);
            if (n - 1.0).abs() > UNIT_NORM_TOL {
                return Err(Error::Contract(format!(
                    "feature {i} has norm {n}, expected a unit vector"
                )));
            }
        }
    }
    let mut classes: Vec<usize> = labels.to_vec();
    classes.sort_unstable();
    classes.dedup();
    if classes.is_empty() {
        return Err(Error::Fit("no samples to fit class statistics on".into()));
    }

    let d = features.cols();
    classes
        .into_iter()
        .map(|c| {
            let rows: Vec<Vec<f64>> = labels
                .iter()
                .zip(features.row_iter())
                .filter(|(&l, _)| l == c)
                .map(|(_, r)| r.to_vec())
                .collect();
            if rows.len() < 2 {
                return Err(Error::Fit(format!(
                    "class {c} has {} sample(s), at least 2 are needed",
                    rows.len()
                )));
            }
            let x = Matrix::from_rows(&rows)?;
            let mu = x.column_means();
            debug_assert_eq!(mu.len(), d);
            let sigma = sample_covariance(&x, &mu)?;
            let sigma_reg = regularize(&sigma, lambda)?;
            ClassStats::from_parts(c, mu, sigma_reg, rows.len())
        })
        .collect()
}

fn check_dim(f: &[f64], stats: &ClassStats) -> Result<()> {
    if f.len() != stats.dim() {
        return Err(Error::Shape(format!(
            "feature has length {}, class {} stats have dim {}",
            f.len(),
            stats.class_id,
            stats.dim()
        )));
    }
    Ok(())
}

/// `√((f−μ)ᵀ Σ̃⁻¹ (f−μ))`, evaluated as `‖L⁻¹(f−μ)‖₂`.
pub fn mahalanobis(f: &[f64], stats: &ClassStats) -> Result<f64> {
    check_dim(f, stats)?;
    let diff: Vec<f64> = f.iter().zip(&stats.mu).map(|(a, b)| a - b).collect();
    Ok(norm2(&solve_lower(&stats.chol, &diff)?))
}

pub fn euclidean(f: &[f64], stats: &ClassStats) -> Result<f64> {
    check_dim(f, stats)?;
    let diff: Vec<f64> = f.iter().zip(&stats.mu).map(|(a, b)| a - b).collect();
    Ok(norm2(&diff))
}

/// Smallest distance over classes and the class attaining it. Ties go to
/// the lowest class id.
pub fn rejection_score(f: &[f64], all_stats: &[ClassStats], metric: Metric) -> Result<(f64, usize)> {
    let mut best: Option<(f64, usize)> = None;
    for st in all_stats {
        let d = match metric {
            Metric::Mahalanobis => mahalanobis(f, st)?,
            Metric::Euclidean => euclidean(f, st)?,
        };
        best = match best {
            Some((bd, bc)) if bd < d || (bd == d && bc < st.class_id) => Some((bd, bc)),
            _ => Some((d, st.class_id)),
        };
    }
    best.ok_or_else(|| Error::Config("rejection score needs at least one class".into()))
}

/// Linear-interpolation percentile: the value at zero-based rank
/// `p/100 · (n−1)` of the sorted scores.
pub fn percentile(scores: &[f64], p: f64) -> Result<f64> {
    if scores.is_empty() {
        return Err(Error::Calibration("no scores to take a percentile of".into()));
    }
    if !(0.0..=100.0).contains(&p) {
        return Err(Error::Calibration(format!("percentile {p} outside [0, 100]")));
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(Error::Calibration("NaN score".into()));
    }
    let mut sorted = scores.to_vec();
    sorted.sort_by(f64::total_cmp);
    let rank = p / 100.0 * (sorted.len() - 1) as f64;
    let lo = rank.floor() as usize;
    let hi = rank.ceil() as usize;
    let frac = rank - lo as f64;
    if lo == hi || sorted[lo] == sorted[hi] {
        return Ok(sorted[lo]);
    }
    Ok(sorted[lo] + frac * (sorted[hi] - sorted[lo]))
}

/// Threshold τ from known-class scores; `percentile` must lie strictly
/// inside (0, 100).
pub fn calibrate_threshold(known_scores: &[f64], percentile_p: f64) -> Result<f64> {
    if !(percentile_p > 0.0 && percentile_p < 100.0) {
        return Err(Error::Calibration(format!(
            "reject percentile must be in (0, 100), got {percentile_p}"
        )));
    }
    percentile(known_scores, percentile_p)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Known(usize),
    Unknown,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OpenSetDecision {
    pub score: f64,
    pub predicted: usize,
    pub verdict: Verdict,
    pub threshold: f64,
}

/// Accepts iff `s < τ`; the boundary itself is a rejection.
pub fn decide(score: f64, predicted: usize, threshold: f64) -> OpenSetDecision {
    let verdict = if score < threshold {
        Verdict::Known(predicted)
    } else {
        Verdict::Unknown
    };
    OpenSetDecision {
        score,
        predicted,
        verdict,
        threshold,
    }
}
