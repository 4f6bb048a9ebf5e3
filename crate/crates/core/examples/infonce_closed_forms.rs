//! InfoNCE on inputs whose loss is known in closed form.
//!
//! `cargo run --example infonce_closed_forms`

use mvitac::loss::info_nce_value;
use mvitac::tensor::Tensor;

fn main() -> mvitac::Result<()> {
    let n = 8;
    // identical rows: every logit ties, so the loss is ln N at any temperature
    let uniform = Tensor::from_vec(vec![n, 4], vec![0.5f64; n * 4])?;
    for tau in [0.07, 0.5, 1.0] {
        println!("uniform  tau {tau:<4}  {:.6}  (ln {n} = {:.6})", info_nce_value(&uniform, &uniform, tau)?, (n as f64).ln());
    }

    let mut eye = vec![0.0f64; n * n];
    (0..n).for_each(|i| eye[i * n + i] = 1.0);
    let eye = Tensor::from_vec(vec![n, n], eye)?;
    let exact = (std::f64::consts::E + (n - 1) as f64).ln() - 1.0;
    println!("identity tau 1     {:.6}  (ln(e+7)-1 = {exact:.6})", info_nce_value(&eye, &eye, 1.0)?);
    println!("identity tau 0.07  {:.3e}", info_nce_value(&eye, &eye, 0.07)?);
    Ok(())
}
