// Forward and backward kernels for every recorded operation.

use rand::Rng;

use super::{Real, Tensor, NORM_FLOOR};
use crate::error::{Error, Result};
use crate::rng::rng_from;

/// The operation set understood by the tape.
#[derive(Debug, Clone, PartialEq)]
pub enum OpKind {
    /// `[N,A] × [A,B] → [N,B]`.
    MatMul,
    /// `[N,C,H,W] ⋆ [F,C,kH,kW] (+ bias [F]) → [N,F,H',W']`.
    Conv2d { stride: usize, padding: usize },
    Relu,
    /// `[N,C,H,W] → [N,C]`, mean over the spatial extent.
    GlobalAvgPool,
    /// Same-shape addition, or a trailing-suffix bias such as `[N,D] + [D]`.
    Add,
    /// Elementwise product of same-shape tensors.
    Mul,
    Scale(f64),
    /// Inverted dropout; identity when `train` is false.
    Dropout { p: f64, train: bool, seed: u64 },
    /// `[N, ...] → [N, prod(...)]`.
    BatchFlatten,
    /// 2-D transpose.
    Transpose,
    /// Sum of all elements into shape `[1]`.
    Sum,
    /// Row-wise unit Euclidean norm of a 2-D tensor.
    L2Normalize,
    /// Mean softmax cross-entropy of `[N,C]` logits against class targets.
    CrossEntropy { targets: Vec<usize> },
}

impl OpKind {
    pub fn name(&self) -> &'static str {
        match self {
            OpKind::MatMul => "matmul",
            OpKind::Conv2d { .. } => "conv2d",
            OpKind::Relu => "relu",
            OpKind::GlobalAvgPool => "global_avg_pool",
            OpKind::Add => "add",
            OpKind::Mul => "mul",
            OpKind::Scale(_) => "scale",
            OpKind::Dropout { .. } => "dropout",
            OpKind::BatchFlatten => "batch_flatten",
            OpKind::Transpose => "transpose",
            OpKind::Sum => "sum",
            OpKind::L2Normalize => "l2_normalize",
            OpKind::CrossEntropy { .. } => "cross_entropy",
        }
    }

    pub(crate) fn arity(&self) -> std::ops::RangeInclusive<usize> {
        match self {
            OpKind::MatMul | OpKind::Add | OpKind::Mul => 2..=2,
            OpKind::Conv2d { .. } => 2..=3,
            _ => 1..=1,
        }
    }
}

/// Forward context kept for the backward rule.
#[derive(Debug, Clone)]
pub(crate) enum Saved<F> {
    Nothing,
    /// im2col matrix `[C·kH·kW, N·H'·W']`.
    Cols(Vec<F>),
    /// Dropout multipliers.
    Mask(Vec<F>),
    /// Row norms before normalization.
    Norms(Vec<F>),
    /// Row-wise softmax probabilities.
    Probs(Vec<F>),
}

/// `c ← op(a)·op(b) + β·c` for row-major buffers. `op(a)` is `m×k`, stored
/// as `[k,m]` when `a_t`; likewise `op(b)` is `k×n`, stored `[n,k]` when `b_t`.
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm<F: Real>(
    m: usize,
    k: usize,
    n: usize,
    a: &[F],
    a_t: bool,
    b: &[F],
    b_t: bool,
    c: &mut [F],
    beta: F,
) {
    assert!(a.len() >= m * k && b.len() >= k * n && c.len() >= m * n);
    if m == 0 || n == 0 {
        return;
    }
    let (rsa, csa) = if a_t { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if b_t { (1, k as isize) } else { (n as isize, 1) };
    // SAFETY: the asserted buffer lengths cover every index reached with
    // these strides.
    unsafe {
        F::gemm_raw(
            m,
            k,
            n,
            F::one(),
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

pub fn conv_out_extent(input: usize, kernel: usize, stride: usize, padding: usize) -> Option<usize> {
    let padded = input + 2 * padding;
    if stride == 0 || padded < kernel {
        return None;
    }
    Some((padded - kernel) / stride + 1)
}

struct ConvGeom {
    n: usize,
    c: usize,
    h: usize,
    w: usize,
    f: usize,
    kh: usize,
    kw: usize,
    ho: usize,
    wo: usize,
    stride: usize,
    padding: usize,
}

impl ConvGeom {
    fn new<F: Real>(x: &Tensor<F>, w: &Tensor<F>, stride: usize, padding: usize) -> Result<Self> {
        let (xs, ws) = (x.shape(), w.shape());
        let err = || Error::conform("conv2d", xs, ws);
        if xs.len() != 4 || ws.len() != 4 || xs[1] != ws[1] {
            return Err(err());
        }
        let ho = conv_out_extent(xs[2], ws[2], stride, padding).ok_or_else(err)?;
        let wo = conv_out_extent(xs[3], ws[3], stride, padding).ok_or_else(err)?;
        Ok(Self {
            n: xs[0],
            c: xs[1],
            h: xs[2],
            w: xs[3],
            f: ws[0],
            kh: ws[2],
            kw: ws[3],
            ho,
            wo,
            stride,
            padding,
        })
    }

    fn k(&self) -> usize {
        self.c * self.kh * self.kw
    }

    fn p(&self) -> usize {
        self.ho * self.wo
    }

    /// Input coordinate for output position `o` and kernel tap `t`, if inside.
    #[inline]
    fn src(&self, o: usize, t: usize, extent: usize) -> Option<usize> {
        let pos = (o * self.stride + t) as isize - self.padding as isize;
        (pos >= 0 && (pos as usize) < extent).then_some(pos as usize)
    }

    fn im2col<F: Real>(&self, x: &[F]) -> Vec<F> {
        let (p, np) = (self.p(), self.n * self.p());
        let mut cols = vec![F::zero(); self.k() * np];
        for ch in 0..self.c {
            for i in 0..self.kh {
                for j in 0..self.kw {
                    let row = (ch * self.kh + i) * self.kw + j;
                    let dst_row = &mut cols[row * np..(row + 1) * np];
                    for img in 0..self.n {
                        let plane = &x[(img * self.c + ch) * self.h * self.w..][..self.h * self.w];
                        let dst = &mut dst_row[img * p..(img + 1) * p];
                        for oh in 0..self.ho {
                            let Some(ih) = self.src(oh, i, self.h) else { continue };
                            for ow in 0..self.wo {
                                if let Some(iw) = self.src(ow, j, self.w) {
                                    dst[oh * self.wo + ow] = plane[ih * self.w + iw];
                                }
                            }
                        }
                    }
                }
            }
        }
        cols
    }

    fn col2im<F: Real>(&self, cols: &[F]) -> Vec<F> {
        let (p, np) = (self.p(), self.n * self.p());
        let mut dx = vec![F::zero(); self.n * self.c * self.h * self.w];
        for ch in 0..self.c {
            for i in 0..self.kh {
                for j in 0..self.kw {
                    let row = (ch * self.kh + i) * self.kw + j;
                    let src_row = &cols[row * np..(row + 1) * np];
                    for img in 0..self.n {
                        let plane = &mut dx[(img * self.c + ch) * self.h * self.w..][..self.h * self.w];
                        let src = &src_row[img * p..(img + 1) * p];
                        for oh in 0..self.ho {
                            let Some(ih) = self.src(oh, i, self.h) else { continue };
                            for ow in 0..self.wo {
                                if let Some(iw) = self.src(ow, j, self.w) {
                                    let v = &mut plane[ih * self.w + iw];
                                    *v = *v + src[oh * self.wo + ow];
                                }
                            }
                        }
                    }
                }
            }
        }
        dx
    }
}

fn is_suffix(shape: &[usize], suffix: &[usize]) -> bool {
    suffix.len() < shape.len() && shape.ends_with(suffix)
}

fn need_rank<F: Real>(op: &'static str, t: &Tensor<F>, rank: usize) -> Result<()> {
    if t.shape().len() != rank {
        return Err(Error::conform(op, t.shape(), &vec![0; rank]));
    }
    Ok(())
}

pub(crate) fn forward<F: Real>(kind: &OpKind, inputs: &[&Tensor<F>]) -> Result<(Tensor<F>, Saved<F>)> {
    match kind {
        OpKind::MatMul => {
            let (a, b) = (inputs[0], inputs[1]);
            let (sa, sb) = (a.shape(), b.shape());
            if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
                return Err(Error::conform("matmul", sa, sb));
            }
            let (m, k, n) = (sa[0], sa[1], sb[1]);
            let mut out = vec![F::zero(); m * n];
            gemm(m, k, n, a.data(), false, b.data(), false, &mut out, F::zero());
            Ok((Tensor::from_vec(vec![m, n], out)?, Saved::Nothing))
        }
        OpKind::Conv2d { stride, padding } => {
            let (x, w) = (inputs[0], inputs[1]);
            let g = ConvGeom::new(x, w, *stride, *padding)?;
            let bias = inputs.get(2).copied();
            if let Some(b) = bias {
                if b.shape() != [g.f] {
                    return Err(Error::conform("conv2d", w.shape(), b.shape()));
                }
            }
            let cols = g.im2col(x.data());
            let (p, np) = (g.p(), g.n * g.p());
            let mut tmp = vec![F::zero(); g.f * np];
            gemm(g.f, g.k(), np, w.data(), false, &cols, false, &mut tmp, F::zero());
            let mut out = vec![F::zero(); g.n * g.f * p];
            for f in 0..g.f {
                let b = bias.map_or(F::zero(), |b| b.data()[f]);
                for img in 0..g.n {
                    let src = &tmp[f * np + img * p..][..p];
                    let dst = &mut out[(img * g.f + f) * p..][..p];
                    dst.iter_mut().zip(src).for_each(|(d, &s)| *d = s + b);
                }
            }
            Ok((Tensor::from_vec(vec![g.n, g.f, g.ho, g.wo], out)?, Saved::Cols(cols)))
        }
        OpKind::Relu => {
            let x = inputs[0];
            let data = x.data().iter().map(|&v| v.max(F::zero())).collect();
            Ok((Tensor::from_vec(x.shape().to_vec(), data)?, Saved::Nothing))
        }
        OpKind::GlobalAvgPool => {
            let x = inputs[0];
            need_rank("global_avg_pool", x, 4)?;
            let s = x.shape();
            let hw = s[2] * s[3];
            let inv = F::one() / F::of(hw as f64);
            let data = x.data().chunks(hw).map(|c| c.iter().copied().sum::<F>() * inv).collect();
            Ok((Tensor::from_vec(vec![s[0], s[1]], data)?, Saved::Nothing))
        }
        OpKind::Add => {
            let (a, b) = (inputs[0], inputs[1]);
            if a.shape() == b.shape() {
                let data = a.data().iter().zip(b.data()).map(|(&x, &y)| x + y).collect();
                Ok((Tensor::from_vec(a.shape().to_vec(), data)?, Saved::Nothing))
            } else if is_suffix(a.shape(), b.shape()) {
                let inner = b.numel();
                let mut data = a.data().to_vec();
                for chunk in data.chunks_mut(inner) {
                    chunk.iter_mut().zip(b.data()).for_each(|(x, &y)| *x = *x + y);
                }
                Ok((Tensor::from_vec(a.shape().to_vec(), data)?, Saved::Nothing))
            } else {
                Err(Error::conform("add", a.shape(), b.shape()))
            }
        }
        OpKind::Mul => {
            let (a, b) = (inputs[0], inputs[1]);
            if a.shape() != b.shape() {
                return Err(Error::conform("mul", a.shape(), b.shape()));
            }
            let data = a.data().iter().zip(b.data()).map(|(&x, &y)| x * y).collect();
            Ok((Tensor::from_vec(a.shape().to_vec(), data)?, Saved::Nothing))
        }
        OpKind::Scale(c) => {
            let x = inputs[0];
            let c = F::of(*c);
            let data = x.data().iter().map(|&v| v * c).collect();
            Ok((Tensor::from_vec(x.shape().to_vec(), data)?, Saved::Nothing))
        }
        OpKind::Dropout { p, train, seed } => {
            let x = inputs[0];
            if !(0.0..1.0).contains(p) {
                return Err(Error::Range {
                    what: "dropout p",
                    value: *p,
                    range: "[0, 1)",
                });
            }
            if !*train || *p == 0.0 {
                return Ok((Tensor::from_vec(x.shape().to_vec(), x.data().to_vec())?, Saved::Nothing));
            }
            let keep = F::of(1.0 / (1.0 - p));
            let mut rng = rng_from(*seed);
            let mask: Vec<F> = (0..x.numel())
                .map(|_| if rng.random::<f64>() < *p { F::zero() } else { keep })
                .collect();
            let data = x.data().iter().zip(&mask).map(|(&v, &m)| v * m).collect();
            Ok((Tensor::from_vec(x.shape().to_vec(), data)?, Saved::Mask(mask)))
        }
        OpKind::BatchFlatten => {
            let x = inputs[0];
            let n = x.shape()[0];
            let rest = x.numel() / n;
            Ok((Tensor::from_vec(vec![n, rest], x.data().to_vec())?, Saved::Nothing))
        }
        OpKind::Transpose => {
            let x = inputs[0];
            need_rank("transpose", x, 2)?;
            let (r, c) = (x.shape()[0], x.shape()[1]);
            Ok((Tensor::from_vec(vec![c, r], transpose(x.data(), r, c))?, Saved::Nothing))
        }
        OpKind::Sum => {
            let x = inputs[0];
            Ok((Tensor::scalar(x.data().iter().copied().sum()), Saved::Nothing))
        }
        OpKind::L2Normalize => {
            let x = inputs[0];
            need_rank("l2_normalize", x, 2)?;
            let d = x.shape()[1];
            let mut norms = Vec::with_capacity(x.shape()[0]);
            let mut data = Vec::with_capacity(x.numel());
            for (row, chunk) in x.data().chunks(d).enumerate() {
                let norm = chunk.iter().map(|&v| v * v).sum::<F>().sqrt();
                if !(norm.as_f64() >= NORM_FLOOR) {
                    return Err(Error::DegenerateEmbedding {
                        row,
                        norm: norm.as_f64(),
                    });
                }
                data.extend(chunk.iter().map(|&v| v / norm));
                norms.push(norm);
            }
            Ok((Tensor::from_vec(x.shape().to_vec(), data)?, Saved::Norms(norms)))
        }
        OpKind::CrossEntropy { targets } => {
            let x = inputs[0];
            need_rank("cross_entropy", x, 2)?;
            let (n, c) = (x.shape()[0], x.shape()[1]);
            if targets.len() != n {
                return Err(Error::conform("cross_entropy", x.shape(), &[targets.len()]));
            }
            let mut probs = Vec::with_capacity(n * c);
            let mut total = 0.0f64;
            for (row, &t) in x.data().chunks(c).zip(targets) {
                if t >= c {
                    return Err(Error::Label {
                        label: t,
                        class_count: c,
                    });
                }
                let max = row.iter().copied().fold(F::neg_infinity(), F::max);
                let exps: Vec<F> = row.iter().map(|&v| (v - max).exp()).collect();
                let z: F = exps.iter().copied().sum();
                total += (z.ln() - (row[t] - max)).as_f64();
                probs.extend(exps.iter().map(|&e| e / z));
            }
            Ok((Tensor::scalar(F::of(total / n as f64)), Saved::Probs(probs)))
        }
    }
}

pub(crate) fn transpose<F: Copy>(data: &[F], rows: usize, cols: usize) -> Vec<F> {
    let mut out = Vec::with_capacity(data.len());
    for j in 0..cols {
        out.extend((0..rows).map(|i| data[i * cols + j]));
    }
    out
}

/// Gradients for each input flagged in `needs`; `None` elsewhere.
pub(crate) fn backward<F: Real>(
    kind: &OpKind,
    inputs: &[&Tensor<F>],
    output: &Tensor<F>,
    saved: &Saved<F>,
    g: &[F],
    needs: &[bool],
) -> Vec<Option<Vec<F>>> {
    let mut out: Vec<Option<Vec<F>>> = vec![None; inputs.len()];
    match kind {
        OpKind::MatMul => {
            let (a, b) = (inputs[0], inputs[1]);
            let (m, k, n) = (a.shape()[0], a.shape()[1], b.shape()[1]);
            if needs[0] {
                let mut da = vec![F::zero(); m * k];
                gemm(m, n, k, g, false, b.data(), true, &mut da, F::zero());
                out[0] = Some(da);
            }
            if needs[1] {
                let mut db = vec![F::zero(); k * n];
                gemm(k, m, n, a.data(), true, g, false, &mut db, F::zero());
                out[1] = Some(db);
            }
        }
        OpKind::Conv2d { stride, padding } => {
            let (x, w) = (inputs[0], inputs[1]);
            let geo = ConvGeom::new(x, w, *stride, *padding).expect("validated in forward");
            let Saved::Cols(cols) = saved else { unreachable!("conv2d saves its columns") };
            let (p, np) = (geo.p(), geo.n * geo.p());
            // g is [N,F,P]; regroup to [F, N·P] to match the column layout.
            let mut gt = vec![F::zero(); geo.f * np];
            for img in 0..geo.n {
                for f in 0..geo.f {
                    gt[f * np + img * p..][..p].copy_from_slice(&g[(img * geo.f + f) * p..][..p]);
                }
            }
            if needs[0] {
                let mut dcols = vec![F::zero(); geo.k() * np];
                gemm(geo.k(), geo.f, np, w.data(), true, &gt, false, &mut dcols, F::zero());
                out[0] = Some(geo.col2im(&dcols));
            }
            if needs[1] {
                let mut dw = vec![F::zero(); geo.f * geo.k()];
                gemm(geo.f, np, geo.k(), &gt, false, cols, true, &mut dw, F::zero());
                out[1] = Some(dw);
            }
            if needs.get(2).copied().unwrap_or(false) {
                out[2] = Some(gt.chunks(np).map(|r| r.iter().copied().sum()).collect());
            }
        }
        OpKind::Relu => {
            out[0] = Some(
                output
                    .data()
                    .iter()
                    .zip(g)
                    .map(|(&y, &d)| if y > F::zero() { d } else { F::zero() })
                    .collect(),
            );
        }
        OpKind::GlobalAvgPool => {
            let s = inputs[0].shape();
            let hw = s[2] * s[3];
            let inv = F::one() / F::of(hw as f64);
            let mut dx = Vec::with_capacity(inputs[0].numel());
            for &d in g {
                dx.extend(std::iter::repeat_n(d * inv, hw));
            }
            out[0] = Some(dx);
        }
        OpKind::Add => {
            if needs[0] {
                out[0] = Some(g.to_vec());
            }
            if needs[1] {
                let b = inputs[1];
                if b.shape() == inputs[0].shape() {
                    out[1] = Some(g.to_vec());
                } else {
                    let mut db = vec![F::zero(); b.numel()];
                    for chunk in g.chunks(b.numel()) {
                        db.iter_mut().zip(chunk).for_each(|(s, &v)| *s = *s + v);
                    }
                    out[1] = Some(db);
                }
            }
        }
        OpKind::Mul => {
            let (a, b) = (inputs[0], inputs[1]);
            if needs[0] {
                out[0] = Some(g.iter().zip(b.data()).map(|(&d, &y)| d * y).collect());
            }
            if needs[1] {
                out[1] = Some(g.iter().zip(a.data()).map(|(&d, &x)| d * x).collect());
            }
        }
        OpKind::Scale(c) => {
            let c = F::of(*c);
            out[0] = Some(g.iter().map(|&d| d * c).collect());
        }
        OpKind::Dropout { .. } => {
            out[0] = Some(match saved {
                Saved::Mask(mask) => g.iter().zip(mask).map(|(&d, &m)| d * m).collect(),
                _ => g.to_vec(),
            });
        }
        OpKind::BatchFlatten => out[0] = Some(g.to_vec()),
        OpKind::Transpose => {
            let (r, c) = (inputs[0].shape()[0], inputs[0].shape()[1]);
            out[0] = Some(transpose(g, c, r));
        }
        OpKind::Sum => out[0] = Some(vec![g[0]; inputs[0].numel()]),
        OpKind::L2Normalize => {
            let Saved::Norms(norms) = saved else { unreachable!("l2_normalize saves norms") };
            let d = output.shape()[1];
            let mut dx = Vec::with_capacity(output.numel());
            for ((y, gr), &norm) in output.data().chunks(d).zip(g.chunks(d)).zip(norms) {
                let dot: F = y.iter().zip(gr).map(|(&a, &b)| a * b).sum();
                dx.extend(y.iter().zip(gr).map(|(&yi, &gi)| (gi - yi * dot) / norm));
            }
            out[0] = Some(dx);
        }
        OpKind::CrossEntropy { targets } => {
            let Saved::Probs(probs) = saved else { unreachable!("cross_entropy saves probabilities") };
            let c = inputs[0].shape()[1];
            let scale = g[0] / F::of(targets.len() as f64);
            let mut dx: Vec<F> = probs.iter().map(|&p| p * scale).collect();
            for (row, &t) in targets.iter().enumerate() {
                dx[row * c + t] = dx[row * c + t] - scale;
            }
            out[0] = Some(dx);
        }
    }
    out
}
