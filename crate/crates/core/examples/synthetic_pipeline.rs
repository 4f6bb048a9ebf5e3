//! Pretrain on the synthetic dataset, then linear-probe and measure retrieval.
//!
//! `cargo run --example synthetic_pipeline -- [epochs] [lambda_inter]`

use std::time::Instant;

use mvitac::data::{synth_generate, AugmentationConfig, PairAugmentation, Split, SynthSpec, Task};
use mvitac::model::{MViTacModel, ModelConfig};
use mvitac::train::{linear_probe, pretrain, retrieval_eval, ProbeConfig, ProbeInput, TrainConfig};

fn main() -> mvitac::Result<()> {
    let args: Vec<String> = std::env::args().collect();
    let epochs = args.get(1).map_or(30, |s| s.parse().expect("epochs"));
    let lambda = args.get(2).map_or(1.0, |s| s.parse().expect("lambda_inter"));

    let dataset = synth_generate(&SynthSpec::default())?;
    let (train, test) = (dataset.split(Split::Train), dataset.split(Split::Test));
    let aug = PairAugmentation::resolve(&AugmentationConfig::desk(), &train)?;

    let mut config = TrainConfig {
        epochs,
        ..TrainConfig::default()
    };
    config.loss.lambda_inter = lambda;
    let model = MViTacModel::init(ModelConfig::desk(3, 0))?;
    let t0 = Instant::now();
    let out = pretrain(model, &train, aug.clone(), &config, None)?;
    for e in &out.metrics.epochs {
        println!(
            "epoch {:>2}  l_mm {:.4}  (vv {:.3} tt {:.3} vt {:.3} tv {:.3})",
            e.epoch, e.l_mm, e.l_vv, e.l_tt, e.l_vt, e.l_tv
        );
    }
    println!("pretrain: {:.1}s", t0.elapsed().as_secs_f64());

    let classes = dataset.class_count(Task::Category);
    for input in [ProbeInput::Tactile, ProbeInput::Both] {
        let probe = ProbeConfig {
            input,
            ..ProbeConfig::default()
        };
        let r = linear_probe(&out.model, &train, &test, &aug, Task::Category, classes, &probe)?;
        println!(
            "probe {:<7} train {:.3}  test {:.3}",
            input.name(),
            r.train.accuracy,
            r.test.accuracy
        );
    }
    let held_out = mvitac::data::PairedDataset {
        samples: test.samples[..100.min(test.len())].to_vec(),
        skipped: 0,
    };
    let r = retrieval_eval(&out.model, &held_out, &aug, 1)?;
    println!("retrieval k=1 over {} pairs: {:.3} (chance {:.3})", r.n, r.accuracy, 1.0 / r.n as f64);
    println!("total: {:.1}s", t0.elapsed().as_secs_f64());
    Ok(())
}
