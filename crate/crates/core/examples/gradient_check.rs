//! Central finite differences against the hand-written backward pass, for
//! every tensor of a small attention network trained with the anchor loss.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sphere_osr::backbone::{AttentionConfig, BackboneConfig, Dropout};
use sphere_osr::linalg::Matrix;
use sphere_osr::train::{Network, TrainConfig};

fn main() -> sphere_osr::Result<()> {
    let (t, c) = (5, 3);
    let backbone = BackboneConfig::Attention(AttentionConfig {
        t_steps: t,
        channels: c,
        d_model: 8,
        n_heads: 2,
        n_layers: 1,
        ffn_dim: 16,
        freeze_pos: false,
    });
    let cfg = TrainConfig {
        lambda_anchor: 0.1,
        ..TrainConfig::default()
    };
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let net = Network::new(backbone, 3, &cfg, &mut rng)?;
    let maps: Vec<Matrix> = (0..4)
        .map(|_| Matrix::from_vec(t, c, (0..t * c).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap())
        .collect();
    let refs: Vec<&Matrix> = maps.iter().collect();
    let labels = [0, 1, 2, 0];
    let drops = vec![Dropout::Off; refs.len()];

    let (_, grads) = net.clone().loss_and_grads(&refs, &labels, &drops)?;
    let loss = |n: &Network| n.clone().loss_and_grads(&refs, &labels, &drops).unwrap().0.loss;
    let eps = 1e-5;

    println!("{:<24} {:>8} {:>14}", "tensor", "entries", "max rel err");
    let mut probe = net.clone();
    for (pi, g) in grads.backbone.iter().enumerate() {
        let name = probe.backbone.params.iter().nth(pi).unwrap().name.clone();
        let mut worst: f64 = 0.0;
        for k in 0..g.as_slice().len() {
            let orig = probe.backbone.params.params_mut()[pi].value.as_slice()[k];
            probe.backbone.params.params_mut()[pi].value.as_mut_slice()[k] = orig + eps;
            let up = loss(&probe);
            probe.backbone.params.params_mut()[pi].value.as_mut_slice()[k] = orig - eps;
            let down = loss(&probe);
            probe.backbone.params.params_mut()[pi].value.as_mut_slice()[k] = orig;
            let numeric = (up - down) / (2.0 * eps);
            let a = g.as_slice()[k];
            worst = worst.max((a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-6));
        }
        println!("{name:<24} {:>8} {worst:>14.2e}", g.as_slice().len());
    }

    let mut worst: f64 = 0.0;
    for k in 0..probe.head.w.as_slice().len() {
        let orig = probe.head.w.as_slice()[k];
        probe.head.w.as_mut_slice()[k] = orig + eps;
        let up = loss(&probe);
        probe.head.w.as_mut_slice()[k] = orig - eps;
        let down = loss(&probe);
        probe.head.w.as_mut_slice()[k] = orig;
        let numeric = (up - down) / (2.0 * eps);
        let a = grads.head_w.as_slice()[k];
        worst = worst.max((a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-6));
    }
    println!("{:<24} {:>8} {worst:>14.2e}", "head.w", grads.head_w.as_slice().len());
    Ok(())
}
