//! Generates the synthetic drift benchmark, writes it to disk and shows how
//! the signal shrinks from one sensor position to the next.
//!
//!     cargo run --release --example synthetic_drift -- [out_dir]

use sphere_osr::dataio::{generate_synthetic, load_dataset, save_dataset, Label, SynthConfig};
use sphere_osr::linalg::norm2;

fn main() -> sphere_osr::Result<()> {
    let out = std::env::args().nth(1).unwrap_or_else(|| "synthetic_drift_data".into());
    let cfg = SynthConfig::default();
    let ds = generate_synthetic(&cfg)?;

    println!("{} samples, {} classes, {} positions", ds.len(), ds.class_names.len(), ds.positions.len());
    println!("{:<10} {:>8} {:>14}", "position", "samples", "mean ‖map‖");
    for (p, name) in ds.positions.iter().enumerate() {
        let norms: Vec<f64> = ds
            .samples
            .iter()
            .filter(|s| s.position == p)
            .map(|s| norm2(s.grid.as_slice()))
            .collect();
        println!("{name:<10} {:>8} {:>14.3}", norms.len(), norms.iter().sum::<f64>() / norms.len() as f64);
    }

    let manifest = save_dataset(&ds, &out)?;
    let back = load_dataset(&out)?;
    assert_eq!(back.len(), ds.len());
    let first = ds.indices_of(Label::Class(0), 0).len();
    println!(
        "wrote {} sample files + manifest to {out} ({first} per class and position)",
        manifest.samples.len()
    );
    Ok(())
}
