//! The ablation matrix (BASE, +M, +M+BN, +M+L2N, full) plus the softmax
//! baseline on the reference synthetic benchmark.
//!
//!     cargo run --release --example ablation_table -- [config.json]

use sphere_osr::config::{ablation_label, ExperimentConfig};
use sphere_osr::eval::report::summary_table;
use sphere_osr::eval::{run_protocol, RunOptions};

fn main() -> sphere_osr::Result<()> {
    let path = std::env::args()
        .nth(1)
        .unwrap_or_else(|| concat!(env!("CARGO_MANIFEST_DIR"), "/configs/reference.json").into());
    let cfg = ExperimentConfig::load(&path)?;
    let ds = cfg.resolve_dataset()?;
    let variants = cfg.ablation_variants();
    let jobs = std::thread::available_parallelism().map_or(1, |n| n.get());
    let report = run_protocol(
        &ds,
        &cfg.backbone,
        &variants,
        &cfg.protocol,
        cfg.seed,
        &RunOptions { jobs, model_dir: None },
        &|_| {},
    )?;
    println!("{}", summary_table(&report, ablation_label));

    println!("per-position AUROC (mean over folds):");
    print!("{:<10}", "");
    for name in &ds.positions {
        print!("{name:>10}");
    }
    println!();
    for v in &variants {
        print!("{:<10}", ablation_label(&v.name));
        for p in report.per_position.iter().filter(|p| p.config == v.name) {
            print!("{:>10.4}", p.auroc.mean);
        }
        println!();
    }
    Ok(())
}
