//! Class-conditional Mahalanobis scoring on hand-made 2-D clusters: fit the
//! statistics, calibrate the rejection threshold, decide on new points.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use sphere_osr::linalg::Matrix;
use sphere_osr::scorer::{calibrate_threshold, decide, fit_stats, rejection_score, Metric, Verdict};

fn main() -> sphere_osr::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let n = Normal::new(0.0, 1.0).unwrap();
    // class 0 elongated along x, class 1 along y
    let mut rows = Vec::new();
    let mut labels = Vec::new();
    for _ in 0..200 {
        rows.push(vec![3.0 * n.sample(&mut rng), 0.3 * n.sample(&mut rng)]);
        labels.push(0);
        rows.push(vec![8.0 + 0.3 * n.sample(&mut rng), 3.0 * n.sample(&mut rng)]);
        labels.push(1);
    }
    let x = Matrix::from_rows(&rows)?;
    let stats = fit_stats(&x, &labels, 1e-4, false)?;

    let train_scores: Vec<f64> = rows
        .iter()
        .map(|r| rejection_score(r, &stats, Metric::Mahalanobis).map(|s| s.0))
        .collect::<Result<_, _>>()?;
    let tau = calibrate_threshold(&train_scores, 95.0)?;
    println!("threshold at the 95th percentile of training scores: {tau:.3}");

    println!("{:<14} {:>10} {:>10} {:>10}", "point", "mahal", "euclid", "verdict");
    for p in [[6.0, 0.0], [0.0, 2.0], [8.0, 5.0], [4.0, 4.0]] {
        let (s, y) = rejection_score(&p, &stats, Metric::Mahalanobis)?;
        let (e, _) = rejection_score(&p, &stats, Metric::Euclidean)?;
        let verdict = match decide(s, y, tau).verdict {
            Verdict::Known(c) => format!("class {c}"),
            Verdict::Unknown => "unknown".into(),
        };
        println!("{:<14} {s:>10.3} {e:>10.3} {verdict:>10}", format!("{p:?}"));
    }
    Ok(())
}
