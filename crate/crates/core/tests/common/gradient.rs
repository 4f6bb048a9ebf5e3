//! Gradient oracle shared by the gradient-check and acceptance targets.
//!
//! The reference derivative is a five-point central difference evaluated in
//! 64-bit on the same parameter values, so 32-bit gradients are compared
//! against an oracle that is not itself dominated by 32-bit rounding.

#![allow(dead_code)]

use mvitac::data::{Image, ViewBatch, ViewEntry};
use mvitac::loss::{combined_loss, info_nce, LossWeights};
use mvitac::model::{EmbeddingSet, MViTacModel, ModelConfig, QueryVars};
use mvitac::rng::rng_from;
use mvitac::tensor::{Real, Tape, Tensor, Var};
use mvitac::Result;
use rand::Rng;

pub const TOL_F64: f64 = 1e-5;
pub const TOL_F32: f64 = 1e-3;
const FD_STEP: f64 = 1e-4;
/// Denominator floor of the relative error. Exactly-zero gradient
/// coordinates (dead ReLU units) meet a stencil value of about 1e-12 that is
/// pure 64-bit rounding, which a 1e-8 floor would report as 1e-4.
const REL_FLOOR: f64 = 1e-6;

/// Uniform in ±[0.1, 1], so no entry sits on a ReLU kink.
fn rand_t(shape: &[usize], seed: u64) -> Tensor<f64> {
    let mut rng = rng_from(seed);
    let n = shape.iter().product();
    let data = (0..n)
        .map(|_| {
            let m: f64 = rng.random_range(0.1..1.0);
            if rng.random::<bool>() { m } else { -m }
        })
        .collect();
    Tensor::from_vec(shape.to_vec(), data).unwrap()
}

/// Contracts a non-scalar output with fixed positive weights.
fn weighted_sum<F: Real>(t: &mut Tape<F>, y: Var, seed: u64) -> Result<Var> {
    let mut rng = rng_from(seed);
    let shape = t.shape(y).to_vec();
    let n = shape.iter().product();
    let w = Tensor::from_vec(shape, (0..n).map(|_| F::of(rng.random_range(0.5..1.5))).collect())?;
    let wv = t.constant(&w);
    let p = t.mul(y, wv)?;
    t.sum(p)
}

#[derive(Debug, Clone, Copy)]
pub enum Case {
    Matmul,
    ConvPadBias,
    ConvStride,
    Relu,
    GlobalAvgPool,
    AddSame,
    AddBias,
    Mul,
    Scale,
    Dropout,
    BatchFlatten,
    Transpose,
    Sum,
    L2Normalize,
    CrossEntropy,
    InfoNce,
    Combined,
    TwoSampleStep,
}

pub const OPS: [Case; 17] = [
    Case::Matmul,
    Case::ConvPadBias,
    Case::ConvStride,
    Case::Relu,
    Case::GlobalAvgPool,
    Case::AddSame,
    Case::AddBias,
    Case::Mul,
    Case::Scale,
    Case::Dropout,
    Case::BatchFlatten,
    Case::Transpose,
    Case::Sum,
    Case::L2Normalize,
    Case::CrossEntropy,
    Case::InfoNce,
    Case::Combined,
];

fn tiny_config() -> ModelConfig {
    ModelConfig::tiny(4, 3)
}

fn tiny_entries() -> Vec<ViewEntry> {
    let mut rng = rng_from(103);
    let mut img = || Image::new(3, 8, 8, (0..192).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap();
    (0..2)
        .map(|_| ViewEntry {
            visual_q: img(),
            visual_k: img(),
            tactile_q: img(),
            tactile_k: img(),
        })
        .collect()
}

impl Case {
    pub fn params(self) -> Vec<Tensor<f64>> {
        match self {
            Case::Matmul => vec![rand_t(&[3, 4], 10), rand_t(&[4, 2], 11)],
            Case::ConvPadBias => vec![rand_t(&[2, 2, 4, 4], 12), rand_t(&[3, 2, 3, 3], 13), rand_t(&[3], 14)],
            Case::ConvStride => vec![rand_t(&[1, 2, 5, 5], 15), rand_t(&[2, 2, 3, 3], 16)],
            Case::Relu => vec![rand_t(&[3, 5], 17)],
            Case::GlobalAvgPool => vec![rand_t(&[2, 3, 3, 3], 18)],
            Case::AddSame => vec![rand_t(&[2, 3], 19), rand_t(&[2, 3], 20)],
            Case::AddBias => vec![rand_t(&[4, 3], 21), rand_t(&[3], 22)],
            Case::Mul => vec![rand_t(&[2, 3], 23), rand_t(&[2, 3], 24)],
            Case::Scale => vec![rand_t(&[5], 25)],
            Case::Dropout => vec![rand_t(&[4, 6], 26)],
            Case::BatchFlatten => vec![rand_t(&[2, 2, 2, 2], 27)],
            Case::Transpose => vec![rand_t(&[2, 5], 28)],
            Case::Sum => vec![rand_t(&[7], 29)],
            Case::L2Normalize => vec![rand_t(&[3, 4], 30)],
            Case::CrossEntropy => vec![rand_t(&[3, 4], 31)],
            Case::InfoNce => vec![rand_t(&[4, 8], 32), rand_t(&[4, 8], 33)],
            Case::Combined => (0..8).map(|i| rand_t(&[3, 4], 40 + i)).collect(),
            Case::TwoSampleStep => {
                let m = MViTacModel::<f64>::init(tiny_config()).unwrap();
                m.query_params().into_iter().cloned().collect()
            }
        }
    }

    pub fn eval<F: Real>(self, t: &mut Tape<F>, v: &[Var]) -> Result<Var> {
        match self {
            Case::Matmul => {
                let y = t.matmul(v[0], v[1])?;
                weighted_sum(t, y, 1)
            }
            Case::ConvPadBias => {
                let y = t.conv2d(v[0], v[1], Some(v[2]), 1, 1)?;
                weighted_sum(t, y, 2)
            }
            Case::ConvStride => {
                let y = t.conv2d(v[0], v[1], None, 2, 0)?;
                weighted_sum(t, y, 3)
            }
            Case::Relu => {
                let y = t.relu(v[0])?;
                weighted_sum(t, y, 4)
            }
            Case::GlobalAvgPool => {
                let y = t.global_avg_pool(v[0])?;
                weighted_sum(t, y, 5)
            }
            Case::AddSame | Case::AddBias => {
                let y = t.add(v[0], v[1])?;
                weighted_sum(t, y, 6)
            }
            Case::Mul => {
                let y = t.mul(v[0], v[1])?;
                weighted_sum(t, y, 8)
            }
            Case::Scale => {
                let y = t.scale(v[0], -2.5)?;
                weighted_sum(t, y, 9)
            }
            Case::Dropout => {
                let y = t.dropout(v[0], 0.3, true, 77)?;
                weighted_sum(t, y, 10)
            }
            Case::BatchFlatten => {
                let y = t.batch_flatten(v[0])?;
                weighted_sum(t, y, 11)
            }
            Case::Transpose => {
                let y = t.transpose(v[0])?;
                weighted_sum(t, y, 12)
            }
            Case::Sum => t.sum(v[0]),
            Case::L2Normalize => {
                let y = t.l2_normalize(v[0])?;
                weighted_sum(t, y, 13)
            }
            Case::CrossEntropy => {
                let s = t.scale(v[0], 3.0)?;
                t.cross_entropy(s, vec![2, 0, 1])
            }
            Case::InfoNce => {
                let q = t.l2_normalize(v[0])?;
                let k = t.l2_normalize(v[1])?;
                info_nce(t, q, k, 0.5)
            }
            Case::Combined => {
                let n: Vec<Var> = v.iter().map(|&x| t.l2_normalize(x)).collect::<Result<_>>()?;
                let z = EmbeddingSet {
                    vv_q: n[0],
                    vv_k: n[1],
                    tt_q: n[2],
                    tt_k: n[3],
                    vt_q: n[4],
                    vt_k: n[5],
                    tv_q: n[6],
                    tv_k: n[7],
                };
                let w = LossWeights {
                    tau: 0.5,
                    lambda_inter: 0.7,
                };
                Ok(combined_loss(t, &z, &w)?.0)
            }
            Case::TwoSampleStep => {
                // key encoders and heads enter as constants built in the same precision
                let model = MViTacModel::<F>::init(tiny_config())?;
                let views = ViewBatch::<F>::from_entries(&tiny_entries())?;
                let z = model.forward_views(t, &QueryVars::from_vars(v.to_vec()), &views)?;
                let w = LossWeights {
                    tau: 0.5,
                    lambda_inter: 1.0,
                };
                Ok(combined_loss(t, &z, &w)?.0)
            }
        }
    }
}

fn value64(case: Case, params: &[Tensor<f64>]) -> f64 {
    let mut t = Tape::new();
    let vars: Vec<Var> = params.iter().map(|p| t.param(p)).collect();
    let out = case.eval(&mut t, &vars).unwrap();
    t.value(out).item()
}

/// Worst relative error of the `F` tape gradient against a 64-bit
/// five-point stencil, with denominator `max(|a|, |n|, REL_FLOOR)`.
pub fn check<F: Real>(case: Case) -> (f64, usize) {
    let params: Vec<Tensor<F>> = case.params().iter().map(Tensor::cast).collect();
    let mut tape = Tape::new();
    let vars: Vec<Var> = params.iter().map(|p| tape.param(p)).collect();
    let out = case.eval(&mut tape, &vars).unwrap();
    tape.backward(out).unwrap();
    let analytic: Vec<Vec<f64>> = vars
        .iter()
        .zip(&params)
        .map(|(&v, p)| tape.grad(v).map_or_else(|| vec![0.0; p.numel()], |g| g.iter().map(|x| x.as_f64()).collect()))
        .collect();
    drop(tape);

    let mut probe: Vec<Tensor<f64>> = params.iter().map(Tensor::cast).collect();
    let mut worst = 0.0f64;
    let mut coords = 0;
    for (pi, grads) in analytic.iter().enumerate() {
        for (idx, &a) in grads.iter().enumerate() {
            let orig = probe[pi].data()[idx];
            let mut at = |dx: f64| {
                probe[pi].data_mut()[idx] = orig + dx;
                value64(case, &probe)
            };
            let h = FD_STEP;
            let n = (at(-2.0 * h) - 8.0 * at(-h) + 8.0 * at(h) - at(2.0 * h)) / (12.0 * h);
            probe[pi].data_mut()[idx] = orig;
            worst = worst.max((a - n).abs() / a.abs().max(n.abs()).max(REL_FLOOR));
            coords += 1;
        }
    }
    (worst, coords)
}

pub fn failures<F: Real>(cases: &[Case], tol: f64) -> Vec<(Case, f64)> {
    cases
        .iter()
        .filter_map(|&c| {
            let (err, coords) = check::<F>(c);
            assert!(coords > 0);
            (err >= tol).then_some((c, err))
        })
        .collect()
}

