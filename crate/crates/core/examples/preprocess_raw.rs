//! From a raw high-rate recording to a normalized `T × C` sample map:
//! window-mean downsampling, then channel z-scoring fitted on a training set.

use sphere_osr::dataio::{downsample_mean, fit_channel_stats, Label, RawSequence};

fn recording(gain: f64, phase: f64) -> RawSequence {
    // 4 channels at 100 Hz for 2.56 s
    let channels = (0..4)
        .map(|c| {
            (0..256)
                .map(|i| {
                    let t = i as f64 / 100.0;
                    gain * (c as f64 + 1.0) * (1.0 - (-t * 3.0).exp()) + 0.05 * (t * 40.0 + phase).sin()
                })
                .collect()
        })
        .collect();
    RawSequence::new(100.0, channels).expect("equal-length channels")
}

fn main() -> sphere_osr::Result<()> {
    let mut train = Vec::new();
    for (k, gain) in [1.0, 1.2, 0.8, 1.1].into_iter().enumerate() {
        let raw = recording(gain, k as f64);
        let small = downsample_mean(&raw, 4)?;
        println!("recording {k}: {} points -> {} points per channel", raw.len(), small.len());
        train.push(small.into_map(Label::Class(0), 0)?);
    }

    let stats = fit_channel_stats(&train)?;
    println!("channel means {:.3?}", stats.mean);
    println!("channel stds  {:.3?}", stats.std);

    let mut test = downsample_mean(&recording(0.5, 9.0), 4)?.into_map(Label::Unknown, 0)?;
    stats.apply(&mut test)?;
    let last = test.grid.row(test.t_steps() - 1);
    println!("held-out map {}x{}, last row after z-scoring {:.3?}", test.t_steps(), test.channels(), last);
    Ok(())
}
