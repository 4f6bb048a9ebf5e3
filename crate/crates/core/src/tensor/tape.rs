use super::ops::{self, OpKind, Saved};
use super::{Real, Tensor};
use crate::error::{Error, Result};

/// Handle to a value stored on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

struct Node<F> {
    kind: OpKind,
    inputs: Vec<Var>,
    saved: Saved<F>,
}

struct Entry<F> {
    value: Tensor<F>,
    node: Option<Node<F>>,
}

/// Arena of values in creation order plus the nodes needed to differentiate
/// them. One tape serves one forward/backward pass and is then dropped or
/// [`reset`](Tape::reset).
pub struct Tape<F = f32> {
    entries: Vec<Entry<F>>,
}

impl<F: Real> Default for Tape<F> {
    fn default() -> Self {
        Self::new()
    }
}

impl<F: Real> Tape<F> {
    pub fn new() -> Self {
        Self { entries: Vec::new() }
    }

    pub fn reset(&mut self) {
        self.entries.clear();
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Number of recorded operation nodes.
    pub fn node_count(&self) -> usize {
        self.entries.iter().filter(|e| e.node.is_some()).count()
    }

    /// Stores a leaf; it is differentiable iff `tensor.requires_grad()`.
    pub fn leaf(&mut self, tensor: Tensor<F>) -> Var {
        self.entries.push(Entry {
            value: tensor,
            node: None,
        });
        Var(self.entries.len() - 1)
    }

    /// Stores a copy of `tensor` as a constant, ignoring its grad flag.
    pub fn constant(&mut self, tensor: &Tensor<F>) -> Var {
        let mut t = Tensor::from_vec(tensor.shape().to_vec(), tensor.data().to_vec())
            .expect("shape already validated");
        t.set_requires_grad(false);
        self.leaf(t)
    }

    /// Stores a copy of `tensor` as a differentiable leaf.
    pub fn param(&mut self, tensor: &Tensor<F>) -> Var {
        let t = Tensor::from_vec(tensor.shape().to_vec(), tensor.data().to_vec())
            .expect("shape already validated");
        self.leaf(t.with_grad())
    }

    pub fn value(&self, v: Var) -> &Tensor<F> {
        &self.entries[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.entries[v.0].value.shape()
    }

    /// Accumulated gradient of a differentiable leaf after [`backward`](Tape::backward).
    pub fn grad(&self, v: Var) -> Option<&[F]> {
        self.entries[v.0].value.grad()
    }

    pub fn zero_grad(&mut self) {
        self.entries.iter_mut().for_each(|e| e.value.zero_grad());
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        let e = &self.entries[v.0];
        e.node.is_some() || e.value.requires_grad()
    }

    /// Evaluates `kind` on `inputs`, recording a node if any input requires a gradient.
    pub fn apply(&mut self, kind: OpKind, inputs: &[Var]) -> Result<Var> {
        if !kind.arity().contains(&inputs.len()) {
            return Err(Error::Config(format!(
                "{} takes {:?} inputs, got {}",
                kind.name(),
                kind.arity(),
                inputs.len()
            )));
        }
        let (value, saved) = {
            let vals: Vec<&Tensor<F>> = inputs.iter().map(|v| &self.entries[v.0].value).collect();
            ops::forward(&kind, &vals)?
        };
        let track = inputs.iter().any(|&v| self.requires_grad(v));
        let node = track.then(|| Node {
            kind,
            inputs: inputs.to_vec(),
            saved,
        });
        self.entries.push(Entry { value, node });
        Ok(Var(self.entries.len() - 1))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.apply(OpKind::MatMul, &[a, b])
    }

    pub fn conv2d(&mut self, x: Var, w: Var, bias: Option<Var>, stride: usize, padding: usize) -> Result<Var> {
        let kind = OpKind::Conv2d { stride, padding };
        match bias {
            Some(b) => self.apply(kind, &[x, w, b]),
            None => self.apply(kind, &[x, w]),
        }
    }

    pub fn relu(&mut self, x: Var) -> Result<Var> {
        self.apply(OpKind::Relu, &[x])
    }

    pub fn global_avg_pool(&mut self, x: Var) -> Result<Var> {
        self.apply(OpKind::GlobalAvgPool, &[x])
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.apply(OpKind::Add, &[a, b])
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.apply(OpKind::Mul, &[a, b])
    }

    pub fn scale(&mut self, x: Var, c: f64) -> Result<Var> {
        self.apply(OpKind::Scale(c), &[x])
    }

    pub fn dropout(&mut self, x: Var, p: f64, train: bool, seed: u64) -> Result<Var> {
        self.apply(OpKind::Dropout { p, train, seed }, &[x])
    }

    pub fn batch_flatten(&mut self, x: Var) -> Result<Var> {
        self.apply(OpKind::BatchFlatten, &[x])
    }

    pub fn transpose(&mut self, x: Var) -> Result<Var> {
        self.apply(OpKind::Transpose, &[x])
    }

    pub fn sum(&mut self, x: Var) -> Result<Var> {
        self.apply(OpKind::Sum, &[x])
    }

    /// Scales each row of `[N,D]` to unit norm; rows below
    /// [`NORM_FLOOR`](super::NORM_FLOOR) are a degenerate-embedding error.
    pub fn l2_normalize(&mut self, x: Var) -> Result<Var> {
        self.apply(OpKind::L2Normalize, &[x])
    }

    pub fn cross_entropy(&mut self, logits: Var, targets: Vec<usize>) -> Result<Var> {
        self.apply(OpKind::CrossEntropy { targets }, &[logits])
    }

    /// `x·w + b` for `x: [N,A]`, `w: [A,B]`, `b: [B]`.
    pub fn linear(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let y = self.matmul(x, w)?;
        self.add(y, b)
    }

    /// Propagates `∂loss/∂·` to every differentiable leaf, adding into the
    /// leaves' gradient slots. Calling it twice without
    /// [`zero_grad`](Tape::zero_grad) doubles the stored gradients.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        let shape = self.shape(loss);
        if shape.iter().product::<usize>() != 1 || shape.len() > 1 {
            return Err(Error::Rank {
                shape: shape.to_vec(),
            });
        }
        if !self.requires_grad(loss) {
            return Err(Error::NoGraph);
        }
        let mut grads: Vec<Option<Vec<F>>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(vec![F::one()]);
        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let entry = &self.entries[i];
            match &entry.node {
                Some(node) => {
                    let needs: Vec<bool> = node.inputs.iter().map(|&v| self.requires_grad(v)).collect();
                    let vals: Vec<&Tensor<F>> = node.inputs.iter().map(|v| &self.entries[v.0].value).collect();
                    let input_grads = ops::backward(&node.kind, &vals, &entry.value, &node.saved, &g, &needs);
                    for (v, ig) in node.inputs.iter().zip(input_grads) {
                        let Some(ig) = ig else { continue };
                        match &mut grads[v.0] {
                            Some(acc) => acc.iter_mut().zip(&ig).for_each(|(a, &b)| *a = *a + b),
                            slot => *slot = Some(ig),
                        }
                    }
                }
                None => {
                    if entry.value.requires_grad() {
                        self.entries[i].value.accumulate_grad(&g);
                    }
                }
            }
        }
        Ok(())
    }
}
