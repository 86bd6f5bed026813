//! Open-set metrics. Unknown is the positive class and a higher score means
//! "more unknown".

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scorer::percentile;

/// One scored test sample. `truth` is `None` for unknown-class samples.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScoredSample {
    pub score: f64,
    pub predicted: usize,
    pub truth: Option<usize>,
    pub position: usize,
}

/// Splits scores into `(known, unknown)` lists.
pub fn split_scores(samples: &[ScoredSample]) -> (Vec<f64>, Vec<f64>) {
    let mut known = Vec::new();
    let mut unknown = Vec::new();
    for s in samples {
        match s.truth {
            Some(_) => known.push(s.score),
            None => unknown.push(s.score),
        }
    }
    (known, unknown)
}

/// Closed-set accuracy over known-class samples: the reject verdict is
/// ignored, only the nearest-class prediction counts.
pub fn known_accuracy(samples: &[ScoredSample]) -> Result<f64> {
    let mut total = 0usize;
    let mut correct = 0usize;
    for s in samples {
        if let Some(t) = s.truth {
            total += 1;
            correct += usize::from(s.predicted == t);
        }
    }
    if total == 0 {
        return Err(Error::MetricUndefined("accuracy needs at least one known sample".into()));
    }
    Ok(correct as f64 / total as f64)
}

fn check_sides(known: &[f64], unknown: &[f64], what: &str) -> Result<()> {
    if known.is_empty() || unknown.is_empty() {
        return Err(Error::MetricUndefined(format!(
            "{what} needs known and unknown scores (got {} and {})",
            known.len(),
            unknown.len()
        )));
    }
    if known.iter().chain(unknown).any(|s| s.is_nan()) {
        return Err(Error::MetricUndefined(format!("{what}: NaN score")));
    }
    Ok(())
}

/// Mann–Whitney estimate `P(u > k) + ½·P(u = k)` via the rank sum of the
/// unknown scores, with midranks for ties.
pub fn auroc(known: &[f64], unknown: &[f64]) -> Result<f64> {
    check_sides(known, unknown, "AUROC")?;
    let mut all: Vec<(f64, bool)> = known
        .iter()
        .map(|&s| (s, false))
        .chain(unknown.iter().map(|&s| (s, true)))
        .collect();
    all.sort_by(|a, b| a.0.total_cmp(&b.0));

    // ranks are 1-based; doubled so that midranks stay integral
    let mut rank_sum_x2: u128 = 0;
    let mut i = 0;
    while i < all.len() {
        let mut j = i;
        while j + 1 < all.len() && all[j + 1].0 == all[i].0 {
            j += 1;
        }
        let mid_x2 = (i + 1 + j + 1) as u128;
        let positives = all[i..=j].iter().filter(|x| x.1).count() as u128;
        rank_sum_x2 += mid_x2 * positives;
        i = j + 1;
    }
    let nu = unknown.len() as u128;
    let nk = known.len() as u128;
    // 2U = 2R − nu(nu+1)
    let u_x2 = rank_sum_x2 - nu * (nu + 1);
    Ok(u_x2 as f64 / (2 * nu * nk) as f64)
}

/// Fraction of unknown scores at or above the `(1 − fpr)` quantile of the
/// known scores.
pub fn tpr_at_fpr(known: &[f64], unknown: &[f64], fpr: f64) -> Result<f64> {
    check_sides(known, unknown, "TPR@FPR")?;
    if !(fpr > 0.0 && fpr < 1.0) {
        return Err(Error::MetricUndefined(format!("fpr must be in (0, 1), got {fpr}")));
    }
    let thr = percentile(known, 100.0 * (1.0 - fpr))?;
    let hits = unknown.iter().filter(|&&u| u >= thr).count();
    Ok(hits as f64 / unknown.len() as f64)
}

/// ROC points `(fpr, tpr)` sweeping the threshold from +∞ down through
/// every distinct score; starts at (0, 0) and ends at (1, 1).
pub fn roc_curve(known: &[f64], unknown: &[f64]) -> Result<Vec<(f64, f64)>> {
    check_sides(known, unknown, "ROC")?;
    let mut all: Vec<(f64, bool)> = known
        .iter()
        .map(|&s| (s, false))
        .chain(unknown.iter().map(|&s| (s, true)))
        .collect();
    all.sort_by(|a, b| b.0.total_cmp(&a.0));
    let (nk, nu) = (known.len() as f64, unknown.len() as f64);
    let mut pts = vec![(0.0, 0.0)];
    let (mut fp, mut tp) = (0usize, 0usize);
    let mut i = 0;
    while i < all.len() {
        let s = all[i].0;
        while i < all.len() && all[i].0 == s {
            if all[i].1 {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        pts.push((fp as f64 / nk, tp as f64 / nu));
    }
    Ok(pts)
}

/// Mean and sample standard deviation (n − 1); the deviation of a single
/// value is 0.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanStd {
    pub mean: f64,
    pub std: f64,
    pub n: usize,
}

pub fn mean_std(values: &[f64]) -> MeanStd {
    let n = values.len();
    if n == 0 {
        return MeanStd {
            mean: f64::NAN,
            std: f64::NAN,
            n,
        };
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    let std = if n < 2 {
        0.0
    } else {
        (values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1) as f64).sqrt()
    };
    MeanStd { mean, std, n }
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    use super::*;

    fn pairwise_oracle(known: &[f64], unknown: &[f64]) -> f64 {
        let mut twice = 0u64;
        for &u in unknown {
            for &k in known {
                twice += if u > k {
                    2
                } else if u == k {
                    1
                } else {
                    0
                };
            }
        }
        twice as f64 / (2 * known.len() * unknown.len()) as f64
    }

    fn sample(score: f64, predicted: usize, truth: Option<usize>) -> ScoredSample {
        ScoredSample {
            score,
            predicted,
            truth,
            position: 0,
        }
    }

    #[test]
    fn accuracy_cases() {
        let all_right: Vec<ScoredSample> = (0..5).map(|c| sample(0.0, c, Some(c))).collect();
        assert_eq!(known_accuracy(&all_right).unwrap(), 1.0);
        let three_of_four = vec![
            sample(0.0, 0, Some(0)),
            sample(9.0, 1, Some(1)),
            sample(0.0, 2, Some(2)),
            sample(0.0, 0, Some(3)),
            sample(0.0, 4, None),
        ];
        assert_eq!(known_accuracy(&three_of_four).unwrap(), 0.75);
        assert!(matches!(known_accuracy(&[sample(0.0, 0, None)]), Err(Error::MetricUndefined(_))));
    }

    #[test]
    fn accuracy_matches_counting_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..20 {
            let s: Vec<ScoredSample> = (0..50)
                .map(|_| {
                    let truth = if rng.random_bool(0.8) { Some(rng.random_range(0..4)) } else { None };
                    sample(0.0, rng.random_range(0..4), truth)
                })
                .collect();
            let known: Vec<_> = s.iter().filter(|x| x.truth.is_some()).collect();
            let hits = known.iter().filter(|x| Some(x.predicted) == x.truth).count();
            assert_eq!(known_accuracy(&s).unwrap(), hits as f64 / known.len() as f64);
        }
    }

    #[test]
    fn auroc_cases() {
        assert_eq!(auroc(&[0.1, 0.2, 0.3], &[0.5, 0.9]).unwrap(), 1.0);
        assert_eq!(auroc(&[0.5, 0.9], &[0.1, 0.2, 0.3]).unwrap(), 0.0);
        assert_eq!(auroc(&[1.0; 4], &[1.0; 3]).unwrap(), 0.5);
        assert!(matches!(auroc(&[], &[1.0]), Err(Error::MetricUndefined(_))));
    }

    #[test]
    fn auroc_equals_pairwise_oracle_with_ties() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..50 {
            let k: Vec<f64> = (0..rng.random_range(1..60)).map(|_| rng.random_range(0..10) as f64).collect();
            let u: Vec<f64> = (0..rng.random_range(1..60)).map(|_| rng.random_range(0..12) as f64).collect();
            assert_eq!(auroc(&k, &u).unwrap(), pairwise_oracle(&k, &u));
        }
    }

    #[test]
    fn tpr_cases() {
        let known: Vec<f64> = (0..100).map(f64::from).collect();
        let above: Vec<f64> = (200..220).map(f64::from).collect();
        assert_eq!(tpr_at_fpr(&known, &above, 0.05).unwrap(), 1.0);
        assert_eq!(tpr_at_fpr(&known, &above, 0.5).unwrap(), 1.0);
    }

    #[test]
    fn tpr_same_distribution_is_near_fpr() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let known: Vec<f64> = (0..20_000).map(|_| rng.random::<f64>()).collect();
        let unknown: Vec<f64> = (0..20_000).map(|_| rng.random::<f64>()).collect();
        let tpr = tpr_at_fpr(&known, &unknown, 0.05).unwrap();
        assert!((tpr - 0.05).abs() < 0.01, "tpr {tpr}");
    }

    #[test]
    fn roc_endpoints_and_area() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let k: Vec<f64> = (0..40).map(|_| rng.random_range(0..8) as f64).collect();
        let u: Vec<f64> = (0..30).map(|_| rng.random_range(2..10) as f64).collect();
        let pts = roc_curve(&k, &u).unwrap();
        assert_eq!(pts[0], (0.0, 0.0));
        assert_eq!(*pts.last().unwrap(), (1.0, 1.0));
        // trapezoid area under the tie-aware curve is the AUROC
        let area: f64 = pts.windows(2).map(|w| (w[1].0 - w[0].0) * (w[1].1 + w[0].1) / 2.0).sum();
        assert!((area - auroc(&k, &u).unwrap()).abs() < 1e-12);
    }

    #[test]
    fn mean_std_convention() {
        let m = mean_std(&[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(m.mean, 2.5);
        assert!((m.std - (5.0f64 / 3.0).sqrt()).abs() < 1e-15);
        assert_eq!(mean_std(&[7.0]).std, 0.0);
    }

    proptest! {
        #[test]
        fn auroc_invariant_under_exp(
            k in prop::collection::vec(-5.0..5.0f64, 1..40),
            u in prop::collection::vec(-5.0..5.0f64, 1..40),
        ) {
            let ek: Vec<f64> = k.iter().map(|v| v.exp()).collect();
            let eu: Vec<f64> = u.iter().map(|v| v.exp()).collect();
            prop_assert_eq!(auroc(&k, &u).unwrap(), auroc(&ek, &eu).unwrap());
        }

        #[test]
        fn auroc_role_swap_sums_to_one(
            k in prop::collection::vec(-5.0..5.0f64, 1..40),
            u in prop::collection::vec(-5.0..5.0f64, 1..40),
        ) {
            prop_assume!(k.iter().all(|a| u.iter().all(|b| a != b)));
            let a = auroc(&k, &u).unwrap();
            let b = auroc(&u, &k).unwrap();
            prop_assert!((a + b - 1.0).abs() < 1e-12);
        }

        #[test]
        fn tpr_monotone_in_fpr(
            k in prop::collection::vec(0.0..1.0f64, 1..60),
            u in prop::collection::vec(0.0..1.0f64, 1..60),
        ) {
            prop_assert!(tpr_at_fpr(&k, &u, 0.10).unwrap() >= tpr_at_fpr(&k, &u, 0.05).unwrap());
        }
    }
}
