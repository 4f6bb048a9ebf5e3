//! The key side trails the query side: after n updates with coefficient m
//! every query/key gap has shrunk by m^n.
//!
//! `cargo run --example momentum_update -- [m] [steps]`

use mvitac::model::{MViTacModel, Modality, ModelConfig};

fn gap(a: &[mvitac::tensor::Tensor<f32>], b: &[mvitac::tensor::Tensor<f32>]) -> f64 {
    a.iter()
        .zip(b)
        .flat_map(|(x, y)| x.data().iter().zip(y.data()))
        .map(|(&x, &y)| (x as f64 - y as f64).powi(2))
        .sum::<f64>()
        .sqrt()
}

fn main() -> mvitac::Result<()> {
    let args: Vec<String> = std::env::args().collect();
    let m = args.get(1).map_or(0.9, |s| s.parse().expect("m"));
    let steps = args.get(2).map_or(10, |s| s.parse().expect("steps"));

    let mut model = MViTacModel::<f32>::init(ModelConfig::desk(3, 0))?;
    for p in model.query_params_mut() {
        p.data_mut().iter_mut().for_each(|v| *v += 0.1);
    }
    let report = |model: &MViTacModel<f32>| {
        let b = model.branch(Modality::Tactile);
        [
            gap(b.query_encoder.params(), b.momentum_encoder.params()),
            gap(b.intra_head_q.params(), b.intra_head_k.params()),
            gap(b.inter_head_q.params(), b.inter_head_k.params()),
        ]
    };
    let before = report(&model);
    for _ in 0..steps {
        model.momentum_update(m)?;
    }
    let after = report(&model);
    for (name, (b, a)) in ["encoder", "intra head", "inter head"].iter().zip(before.iter().zip(&after)) {
        println!("tactile {name:<10}  gap {b:.4} -> {a:.4}  ratio {:.6}", a / b);
    }
    println!("expected ratio m^n = {:.6}", f64::powi(m, steps));
    Ok(())
}
