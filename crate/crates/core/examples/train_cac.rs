//! Trains one model on a single sensor position of the synthetic benchmark,
//! round-trips it through JSON, and classifies samples from a class the
//! model never saw.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sphere_osr::backbone::{BackboneConfig, MlpConfig};
use sphere_osr::dataio::{generate_synthetic, zscore_channels, Label, SynthConfig};
use sphere_osr::scorer::Verdict;
use sphere_osr::train::{train_model, Example, Splits, TrainConfig, TrainedModel};

fn main() -> sphere_osr::Result<()> {
    let synth = SynthConfig {
        n_classes: 5,
        n_positions: 1,
        position_decay: vec![1.0],
        ..SynthConfig::default()
    };
    let (ds, _) = zscore_channels(&generate_synthetic(&synth)?)?;
    let class = |l: Label| match l {
        Label::Class(c) => c,
        Label::Unknown => usize::MAX,
    };
    // classes 0..4 are known, class 4 plays the unknown
    let known: Vec<Example> = ds
        .samples
        .iter()
        .filter(|s| class(s.label) < 4)
        .map(|s| Example {
            map: &s.grid,
            label: class(s.label),
        })
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let splits = Splits::carve(known, 4, 0.1, &mut rng)?;

    let backbone = BackboneConfig::Mlp(MlpConfig {
        channels: synth.channels,
        hidden: 64,
        out_dim: 16,
        activation: Default::default(),
    });
    let cfg = TrainConfig {
        lr: 1e-3,
        ..TrainConfig::default()
    };
    let model = train_model(&backbone, &splits, &cfg)?;
    for e in &model.history {
        println!("epoch {:>2}  train {:.4}  monitor {:.4}", e.epoch, e.train_loss, e.monitor_loss);
    }
    println!("kept epoch {}, threshold {:.3}", model.best_epoch, model.threshold);

    let path = std::env::temp_dir().join("train_cac_model.json");
    model.save(&path)?;
    let model = TrainedModel::load(&path)?;
    println!("saved and reloaded {}", path.display());

    let unknown: Vec<_> = ds.samples.iter().filter(|s| class(s.label) == 4).collect();
    let rejected = unknown
        .iter()
        .filter(|s| matches!(model.decide(&s.grid).map(|d| d.verdict), Ok(Verdict::Unknown)))
        .count();
    println!("rejected {rejected} of {} samples from the unseen class", unknown.len());
    Ok(())
}
