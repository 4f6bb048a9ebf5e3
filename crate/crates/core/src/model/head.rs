use crate::error::Result;
use crate::rng::derive_seed;
use crate::tensor::{make_tensor, Init, Real, Tape, Tensor, Var};

/// Two-layer MLP into the embedding space:
/// `l2_normalize(relu(x·W1 + b1)·W2 + b2)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ProjectionHead<F = f32> {
    /// `[W1, b1, W2, b2]`.
    params: Vec<Tensor<F>>,
}

impl<F: Real> ProjectionHead<F> {
    pub fn new(in_dim: usize, hidden_dim: usize, out_dim: usize, seed: u64) -> Result<Self> {
        Ok(Self {
            params: vec![
                make_tensor(&[in_dim, hidden_dim], Init::KaimingNormal { fan_in: in_dim }, derive_seed(seed, 0))?,
                make_tensor(&[hidden_dim], Init::Zeros, 0)?,
                make_tensor(&[hidden_dim, out_dim], Init::KaimingNormal { fan_in: hidden_dim }, derive_seed(seed, 1))?,
                make_tensor(&[out_dim], Init::Zeros, 0)?,
            ],
        })
    }

    pub fn in_dim(&self) -> usize {
        self.params[0].shape()[0]
    }

    pub fn out_dim(&self) -> usize {
        self.params[3].shape()[0]
    }

    pub fn params(&self) -> &[Tensor<F>] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Tensor<F>] {
        &mut self.params
    }

    pub fn param_names(prefix: &str) -> Vec<String> {
        ["linear1.weight", "linear1.bias", "linear2.weight", "linear2.bias"]
            .iter()
            .map(|s| format!("{prefix}.{s}"))
            .collect()
    }

    pub fn forward(&self, tape: &mut Tape<F>, vars: &[Var], features: Var) -> Result<Var> {
        let h = tape.linear(features, vars[0], vars[1])?;
        let h = tape.relu(h)?;
        let z = tape.linear(h, vars[2], vars[3])?;
        tape.l2_normalize(z)
    }

    /// Untracked projection of `[N, in_dim]` features to unit rows.
    pub fn infer(&self, features: &Tensor<F>) -> Result<Tensor<F>> {
        let mut tape = Tape::new();
        let vars: Vec<Var> = self.params.iter().map(|p| tape.constant(p)).collect();
        let x = tape.constant(features);
        let z = self.forward(&mut tape, &vars, x)?;
        Ok(tape.value(z).clone())
    }
}
