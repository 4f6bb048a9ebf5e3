use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::derive_seed;
use crate::tensor::{make_tensor, Init, Real, Tape, Tensor, Var};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConvBlock {
    pub filters: usize,
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
}

impl ConvBlock {
    pub const fn new(filters: usize, kernel: usize, stride: usize, padding: usize) -> Self {
        Self {
            filters,
            kernel,
            stride,
            padding,
        }
    }
}

/// Plain convolutional backbone: `conv → relu` per block, then global
/// average pooling down to `backbone_dim` features.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EncoderConfig {
    pub in_channels: usize,
    pub blocks: Vec<ConvBlock>,
    /// Square input extent the encoder accepts.
    pub input_size: usize,
    pub backbone_dim: usize,
}

impl EncoderConfig {
    /// 4 blocks of 3×3 stride-2 convolutions (16/32/64/64) on 32×32 inputs.
    pub fn desk(in_channels: usize) -> Self {
        Self {
            in_channels,
            blocks: vec![
                ConvBlock::new(16, 3, 2, 1),
                ConvBlock::new(32, 3, 2, 1),
                ConvBlock::new(64, 3, 2, 1),
                ConvBlock::new(64, 3, 2, 1),
            ],
            input_size: 32,
            backbone_dim: 64,
        }
    }

    /// Five stride-2 stages ending in 512 channels on 224×224 inputs.
    pub fn paper_scale(in_channels: usize) -> Self {
        Self {
            in_channels,
            blocks: vec![
                ConvBlock::new(64, 7, 2, 3),
                ConvBlock::new(64, 3, 2, 1),
                ConvBlock::new(128, 3, 2, 1),
                ConvBlock::new(256, 3, 2, 1),
                ConvBlock::new(512, 3, 2, 1),
            ],
            input_size: 224,
            backbone_dim: 512,
        }
    }

    /// Two small blocks on 8×8 inputs; used by gradient checks and tests.
    pub fn tiny(in_channels: usize) -> Self {
        Self {
            in_channels,
            blocks: vec![ConvBlock::new(4, 3, 2, 1), ConvBlock::new(6, 3, 2, 1)],
            input_size: 8,
            backbone_dim: 6,
        }
    }

    /// Spatial extent after each block.
    pub fn extents(&self) -> Result<Vec<usize>> {
        let mut size = self.input_size;
        let mut out = Vec::with_capacity(self.blocks.len());
        for (i, b) in self.blocks.iter().enumerate() {
            size = crate::tensor::conv_out_extent(size, b.kernel, b.stride, b.padding)
                .ok_or_else(|| Error::Config(format!("conv block {i} yields an empty feature map")))?;
            out.push(size);
        }
        Ok(out)
    }

    pub fn validate(&self) -> Result<()> {
        if self.in_channels == 0 || self.input_size == 0 {
            return Err(Error::Config("encoder needs positive in_channels and input_size".into()));
        }
        let Some(last) = self.blocks.last() else {
            return Err(Error::Config("encoder needs at least one conv block".into()));
        };
        if last.filters != self.backbone_dim {
            return Err(Error::Config(format!(
                "last block has {} filters but backbone_dim is {}",
                last.filters, self.backbone_dim
            )));
        }
        if self.blocks.iter().any(|b| b.filters == 0 || b.kernel == 0 || b.stride == 0) {
            return Err(Error::Config("conv blocks need positive filters, kernel and stride".into()));
        }
        self.extents().map(|_| ())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConvEncoder<F = f32> {
    config: EncoderConfig,
    /// `[w0, b0, w1, b1, …]`.
    params: Vec<Tensor<F>>,
}

impl<F: Real> ConvEncoder<F> {
    pub fn new(config: EncoderConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut params = Vec::with_capacity(2 * config.blocks.len());
        let mut channels = config.in_channels;
        for (i, b) in config.blocks.iter().enumerate() {
            let fan_in = channels * b.kernel * b.kernel;
            params.push(make_tensor(
                &[b.filters, channels, b.kernel, b.kernel],
                Init::KaimingNormal { fan_in },
                derive_seed(seed, i as u64),
            )?);
            params.push(make_tensor(&[b.filters], Init::Zeros, 0)?);
            channels = b.filters;
        }
        Ok(Self { config, params })
    }

    pub fn config(&self) -> &EncoderConfig {
        &self.config
    }

    pub fn params(&self) -> &[Tensor<F>] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Tensor<F>] {
        &mut self.params
    }

    pub fn param_names(&self, prefix: &str) -> Vec<String> {
        (0..self.config.blocks.len())
            .flat_map(|i| [format!("{prefix}.block{i}.weight"), format!("{prefix}.block{i}.bias")])
            .collect()
    }

    fn check_input(&self, shape: &[usize]) -> Result<()> {
        let c = &self.config;
        let want = [shape.first().copied().unwrap_or(0), c.in_channels, c.input_size, c.input_size];
        if shape.len() != 4 || shape[0] == 0 || shape[1..] != want[1..] {
            return Err(Error::conform("encode", shape, &want));
        }
        Ok(())
    }

    /// `[N,C,H,W] → [N, backbone_dim]` using `vars` bound in [`params`](Self::params) order.
    pub fn forward(&self, tape: &mut Tape<F>, vars: &[Var], x: Var) -> Result<Var> {
        self.check_input(tape.shape(x))?;
        debug_assert_eq!(vars.len(), self.params.len());
        let mut h = x;
        for (b, wb) in self.config.blocks.iter().zip(vars.chunks(2)) {
            h = tape.conv2d(h, wb[0], Some(wb[1]), b.stride, b.padding)?;
            h = tape.relu(h)?;
        }
        tape.global_avg_pool(h)
    }

    /// Untracked forward pass.
    pub fn infer(&self, images: &Tensor<F>) -> Result<Tensor<F>> {
        let mut tape = Tape::new();
        let vars: Vec<Var> = self.params.iter().map(|p| tape.constant(p)).collect();
        let x = tape.constant(images);
        let y = self.forward(&mut tape, &vars, x)?;
        Ok(tape.value(y).clone())
    }
}
