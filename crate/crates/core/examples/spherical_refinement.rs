//! Batch normalization followed by L2 projection: features land on the unit
//! sphere, and rescaling the whole batch (a uniform sensor gain change)
//! leaves them almost untouched. The residual comes from the variance
//! epsilon and shrinks as the batch variance grows.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use sphere_osr::linalg::{norm2, Matrix};
use sphere_osr::refine::{RefineFlags, Refiner};

fn batch(rng: &mut ChaCha8Rng, n: usize, d: usize, spread: f64) -> Matrix {
    let data = (0..n * d)
        .map(|k| (k % d) as f64 + spread * rng.sample::<f64, _>(StandardNormal))
        .collect();
    Matrix::from_vec(n, d, data).unwrap()
}

fn max_abs_diff(a: &Matrix, b: &Matrix) -> f64 {
    a.as_slice().iter().zip(b.as_slice()).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

fn main() -> sphere_osr::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let d = 8;
    let refine = |b: &Matrix| -> sphere_osr::Result<Matrix> {
        let mut r = Refiner::new(d, RefineFlags::FULL, true);
        Ok(r.forward(b)?.0)
    };

    let b = batch(&mut rng, 64, d, 1.0);
    let f = refine(&b)?;
    let worst = f.row_iter().map(|r| (norm2(r) - 1.0).abs()).fold(0.0, f64::max);
    println!("max |‖f‖ − 1| over {} refined rows: {worst:.1e}", f.rows());

    println!("\n{:>12} {:>16} {:>16}", "batch std", "Δ at α = 0.1", "Δ at α = 10");
    for spread in [0.1, 1.0, 10.0, 100.0] {
        let b = batch(&mut rng, 64, d, spread);
        let base = refine(&b)?;
        let mut deltas = Vec::new();
        for alpha in [0.1, 10.0] {
            let mut s = b.clone();
            s.scale(alpha);
            deltas.push(max_abs_diff(&refine(&s)?, &base));
        }
        println!("{spread:>12} {:>16.2e} {:>16.2e}", deltas[0], deltas[1]);
    }

    // without batch normalization the projection alone already cancels a
    // uniform gain, but not a per-channel one
    let l2_only = |b: &Matrix| Refiner::new(d, RefineFlags { use_bn: false, use_l2n: true }, true).forward_eval(b).map(|x| x.0);
    let b = batch(&mut rng, 16, d, 1.0);
    let mut per_channel = b.clone();
    for i in 0..per_channel.rows() {
        per_channel.row_mut(i).iter_mut().enumerate().for_each(|(j, v)| *v *= 1.0 + j as f64 * 0.2);
    }
    println!(
        "\nper-channel gain change: Δ with L2 only {:.3}, with BN + L2 {:.3}",
        max_abs_diff(&l2_only(&per_channel)?, &l2_only(&b)?),
        max_abs_diff(&refine(&per_channel)?, &refine(&b)?)
    );
    Ok(())
}
