//! Save a model, load it back and compare parameters and embeddings bit for bit.
//!
//! `cargo run --example checkpoint_roundtrip`

use mvitac::data::{eval_view, stack_images, synth_generate, AugmentationConfig, PairAugmentation, SynthSpec};
use mvitac::model::{Checkpoint, MViTacModel, Modality, ModelConfig};

fn main() -> mvitac::Result<()> {
    let ds = synth_generate(&SynthSpec { samples_per_class: 4, ..SynthSpec::default() })?;
    let aug = PairAugmentation::resolve(&AugmentationConfig::desk(), &ds)?;
    let model = MViTacModel::<f32>::init(ModelConfig::desk(3, 11))?;

    let dir = tempfile_dir();
    let path = dir.join("model.ckpt");
    Checkpoint::from_model(&model, 0, Default::default(), Some(aug.clone())).save(&path)?;
    let loaded = Checkpoint::load(&path)?;
    let back = loaded.to_model()?;
    println!("{} bytes, {} parameters", std::fs::metadata(&path)?.len(), model.param_count());

    let views = ds.samples.iter().map(|s| eval_view(&s.tactile, &aug.tactile)).collect::<mvitac::Result<Vec<_>>>()?;
    let x = stack_images::<f32>(&views.iter().collect::<Vec<_>>())?;
    let a = model.embed_inter(Modality::Tactile, &x)?;
    let b = back.embed_inter(Modality::Tactile, &x)?;
    let identical = a.data().iter().zip(b.data()).all(|(p, q)| p.to_bits() == q.to_bits());
    println!("inter embeddings of {} samples identical: {identical}", ds.len());
    std::fs::remove_dir_all(dir)?;
    Ok(())
}

fn tempfile_dir() -> std::path::PathBuf {
    let d = std::env::temp_dir().join(format!("mvitac-ckpt-{}", std::process::id()));
    std::fs::create_dir_all(&d).expect("temp dir");
    d
}
