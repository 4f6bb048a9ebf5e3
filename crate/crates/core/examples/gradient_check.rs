//! Finite-difference check of a small conv net plus InfoNCE, built directly
//! on the tape, in 64-bit.
//!
//! `cargo run --example gradient_check`

use mvitac::loss::info_nce;
use mvitac::rng::rng_from;
use mvitac::tensor::{default_eps, grad_check, Real, Tape, Tensor, Var};
use rand::Rng;

fn random(shape: &[usize], seed: u64) -> Tensor<f64> {
    let mut rng = rng_from(seed);
    let n = shape.iter().product();
    Tensor::from_vec(shape.to_vec(), (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
}

/// Two images through conv → relu → pool → linear, queries against keys.
fn objective<F: Real>(t: &mut Tape<F>, p: &[Var]) -> mvitac::Result<Var> {
    let embed = |t: &mut Tape<F>, x: Var| -> mvitac::Result<Var> {
        let h = t.conv2d(x, p[1], Some(p[2]), 1, 1)?;
        let h = t.relu(h)?;
        let h = t.global_avg_pool(h)?;
        let h = t.linear(h, p[3], p[4])?;
        t.l2_normalize(h)
    };
    let q = embed(t, p[0])?;
    let k = embed(t, p[5])?;
    info_nce(t, q, k, 0.5)
}

fn main() -> mvitac::Result<()> {
    let params = vec![
        random(&[3, 2, 6, 6], 1),
        random(&[4, 2, 3, 3], 2),
        random(&[4], 3),
        random(&[4, 5], 4),
        random(&[5], 5),
        random(&[3, 2, 6, 6], 6),
    ];
    // relative error is largest where the true gradient is near zero (dead
    // relu units); 32-bit central differences are rounding-bound and are
    // only meaningful against a 64-bit reference, see tests/gradcheck.rs
    let r = grad_check(objective::<f64>, &params, default_eps::<f64>())?;
    println!("64-bit: {} coordinates, max relative error {:.2e} at {:?}", r.coordinates, r.max_rel_error, r.worst);

    Ok(())
}
