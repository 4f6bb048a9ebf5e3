//! Draw augmented views of one synthetic pair and count how often each random
//! branch fires. Writes the first few views as PNG files.
//!
//! `cargo run --example augmentation -- [out_dir]`

use std::path::PathBuf;

use mvitac::data::{augment_traced, save_png, synth_generate, AugmentationConfig, Normalization, SynthSpec};
use mvitac::rng::derive_seed;

fn main() -> mvitac::Result<()> {
    let out = PathBuf::from(std::env::args().nth(1).unwrap_or_else(|| "augmentation_views".into()));
    std::fs::create_dir_all(&out)?;
    let ds = synth_generate(&SynthSpec { samples_per_class: 2, ..SynthSpec::default() })?;
    let sample = &ds.samples[0];
    // identity normalization keeps the pixels viewable
    let cfg = AugmentationConfig { normalization: Normalization::Identity, ..AugmentationConfig::desk() };

    let draws = 10_000;
    let (mut flips, mut grays) = (0, 0);
    for i in 0..draws {
        let (view, trace) = augment_traced(&sample.visual, &cfg, derive_seed(1, i))?;
        flips += trace.flipped as u32;
        grays += trace.grayscale as u32;
        if i < 4 {
            save_png(&view, &out.join(format!("visual_{i}.png")))?;
            println!("view {i}: crop {:?} flip {} gray {}", trace.crop, trace.flipped, trace.grayscale);
        }
    }
    println!("flip rate {:.4}, grayscale rate {:.4} over {draws} draws", flips as f64 / draws as f64, grays as f64 / draws as f64);

    let grasp = AugmentationConfig { grasp_mode: true, ..cfg };
    let g = (0..draws).filter(|&i| augment_traced(&sample.tactile, &grasp, derive_seed(2, i)).map(|(_, t)| t.grayscale).unwrap_or(false)).count();
    println!("grasp mode grayscale draws: {g}");
    println!("views written to {}", out.display());
    Ok(())
}
