//! Generate the synthetic dataset, export it in the pair layout and load it back.
//!
//! `cargo run --example dataset_roundtrip -- <out_dir>`

use std::path::PathBuf;

use mvitac::data::{export_pair_dataset, load_pair_dataset, synth_generate, Split, SynthSpec, Task};

fn main() -> mvitac::Result<()> {
    let root = PathBuf::from(std::env::args().nth(1).unwrap_or_else(|| "synthetic_pairs".into()));
    let ds = synth_generate(&SynthSpec::default())?;
    export_pair_dataset(&ds, &root)?;
    let back = load_pair_dataset(&root)?;
    println!(
        "{} pairs ({} train, {} test), {} classes, written to {}",
        back.len(),
        back.split(Split::Train).len(),
        back.split(Split::Test).len(),
        back.class_count(Task::Category),
        root.display()
    );
    let same = ds.samples.iter().zip(&back.samples).all(|(a, b)| a.stem == b.stem && a.labels == b.labels);
    println!("stems and labels preserved: {same}");
    Ok(())
}
