//! Encoders, projection heads and the two-branch visuotactile model.
//!
//! Each modality branch owns a query encoder, a momentum copy of it, and
//! four heads: an intra-modal query/key pair and an inter-modal query/key
//! pair. Key-side parameters are only ever moved by
//! [`MViTacModel::momentum_update`].

mod checkpoint;
mod encoder;
mod head;

use serde::{Deserialize, Serialize};

use crate::data::ViewBatch;
use crate::error::{Error, Result};
use crate::rng::derive_path;
use crate::tensor::{Real, Tape, Tensor, Var};

pub use checkpoint::{Checkpoint, CheckpointHeader, ParamEntry, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use encoder::{ConvBlock, ConvEncoder, EncoderConfig};
pub use head::ProjectionHead;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub visual: EncoderConfig,
    pub tactile: EncoderConfig,
    /// Hidden width of every projection head; `None` means `backbone_dim`.
    pub hidden_dim: Option<usize>,
    pub embed_dim: usize,
    pub seed: u64,
}

impl ModelConfig {
    pub fn desk(tactile_channels: usize, seed: u64) -> Self {
        Self {
            visual: EncoderConfig::desk(3),
            tactile: EncoderConfig::desk(tactile_channels),
            hidden_dim: None,
            embed_dim: 128,
            seed,
        }
    }

    pub fn paper_scale(tactile_channels: usize, seed: u64) -> Self {
        Self {
            visual: EncoderConfig::paper_scale(3),
            tactile: EncoderConfig::paper_scale(tactile_channels),
            hidden_dim: None,
            embed_dim: 128,
            seed,
        }
    }

    pub fn tiny(embed_dim: usize, seed: u64) -> Self {
        Self {
            visual: EncoderConfig::tiny(3),
            tactile: EncoderConfig::tiny(3),
            hidden_dim: None,
            embed_dim,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.visual.validate()?;
        self.tactile.validate()?;
        let (v, t) = (&self.visual, &self.tactile);
        if v.blocks != t.blocks || v.input_size != t.input_size || v.backbone_dim != t.backbone_dim {
            return Err(Error::Config(
                "visual and tactile encoders may differ in in_channels only".into(),
            ));
        }
        if self.embed_dim == 0 || self.hidden_dim == Some(0) {
            return Err(Error::Config("embedding and hidden widths must be positive".into()));
        }
        Ok(())
    }
}

/// Which modality a branch encodes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Modality {
    Visual,
    Tactile,
}

impl Modality {
    pub fn name(self) -> &'static str {
        match self {
            Modality::Visual => "visual",
            Modality::Tactile => "tactile",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModalityBranch<F = f32> {
    pub query_encoder: ConvEncoder<F>,
    pub momentum_encoder: ConvEncoder<F>,
    pub intra_head_q: ProjectionHead<F>,
    pub intra_head_k: ProjectionHead<F>,
    pub inter_head_q: ProjectionHead<F>,
    pub inter_head_k: ProjectionHead<F>,
}

impl<F: Real> ModalityBranch<F> {
    fn new(config: &EncoderConfig, hidden: usize, embed: usize, seed: u64) -> Result<Self> {
        let query_encoder = ConvEncoder::new(config.clone(), derive_path(seed, &[0]))?;
        let d = config.backbone_dim;
        let head = |id: u64| ProjectionHead::new(d, hidden, embed, derive_path(seed, &[1, id]));
        Ok(Self {
            momentum_encoder: query_encoder.clone(),
            query_encoder,
            intra_head_q: head(0)?,
            intra_head_k: head(1)?,
            inter_head_q: head(2)?,
            inter_head_k: head(3)?,
        })
    }

    fn query_params(&self) -> impl Iterator<Item = &Tensor<F>> {
        self.query_encoder
            .params()
            .iter()
            .chain(self.intra_head_q.params())
            .chain(self.inter_head_q.params())
    }

    fn query_params_mut(&mut self) -> impl Iterator<Item = &mut Tensor<F>> {
        self.query_encoder
            .params_mut()
            .iter_mut()
            .chain(self.intra_head_q.params_mut())
            .chain(self.inter_head_q.params_mut())
    }

    /// Key-side parameters, index-aligned with [`query_params`](Self::query_params).
    fn key_params(&self) -> impl Iterator<Item = &Tensor<F>> {
        self.momentum_encoder
            .params()
            .iter()
            .chain(self.intra_head_k.params())
            .chain(self.inter_head_k.params())
    }

    fn params_split_mut(&mut self) -> (Vec<&mut Tensor<F>>, Vec<&mut Tensor<F>>) {
        let q = self
            .query_encoder
            .params_mut()
            .iter_mut()
            .chain(self.intra_head_q.params_mut())
            .chain(self.inter_head_q.params_mut())
            .collect();
        let k = self
            .momentum_encoder
            .params_mut()
            .iter_mut()
            .chain(self.intra_head_k.params_mut())
            .chain(self.inter_head_k.params_mut())
            .collect();
        (q, k)
    }

    fn query_names(&self, prefix: &str) -> Vec<String> {
        let mut names = self.query_encoder.param_names(&format!("{prefix}.query_encoder"));
        names.extend(ProjectionHead::<F>::param_names(&format!("{prefix}.intra_head_q")));
        names.extend(ProjectionHead::<F>::param_names(&format!("{prefix}.inter_head_q")));
        names
    }

    fn key_names(&self, prefix: &str) -> Vec<String> {
        let mut names = self.momentum_encoder.param_names(&format!("{prefix}.momentum_encoder"));
        names.extend(ProjectionHead::<F>::param_names(&format!("{prefix}.intra_head_k")));
        names.extend(ProjectionHead::<F>::param_names(&format!("{prefix}.inter_head_k")));
        names
    }

    fn momentum_update(&mut self, m: F) {
        let one_minus = F::one() - m;
        let pairs = [
            (&self.query_encoder.params().to_vec(), self.momentum_encoder.params_mut()),
            (&self.intra_head_q.params().to_vec(), self.intra_head_k.params_mut()),
            (&self.inter_head_q.params().to_vec(), self.inter_head_k.params_mut()),
        ];
        for (query, key) in pairs {
            for (q, k) in query.iter().zip(key.iter_mut()) {
                for (kv, &qv) in k.data_mut().iter_mut().zip(q.data()) {
                    *kv = m * *kv + one_minus * qv;
                }
            }
        }
    }

    fn split_vars<'a>(&self, vars: &'a [Var]) -> (&'a [Var], &'a [Var], &'a [Var]) {
        let e = self.query_encoder.params().len();
        (&vars[..e], &vars[e..e + 4], &vars[e + 4..e + 8])
    }

    fn query_len(&self) -> usize {
        self.query_encoder.params().len() + 8
    }
}

/// Tape handles for every trainable parameter, in
/// [`MViTacModel::query_params`] order.
#[derive(Debug, Clone)]
pub struct QueryVars {
    vars: Vec<Var>,
}

impl QueryVars {
    pub fn from_vars(vars: Vec<Var>) -> Self {
        Self { vars }
    }

    pub fn vars(&self) -> &[Var] {
        &self.vars
    }
}

/// The eight embeddings of one training step, as handles on the step's tape.
/// Key-side handles are constants: no gradient reaches the momentum side.
#[derive(Debug, Clone, Copy)]
pub struct EmbeddingSet {
    pub vv_q: Var,
    pub vv_k: Var,
    pub tt_q: Var,
    pub tt_k: Var,
    pub vt_q: Var,
    pub vt_k: Var,
    pub tv_q: Var,
    pub tv_k: Var,
}

impl EmbeddingSet {
    pub fn all(&self) -> [Var; 8] {
        [
            self.vv_q, self.vv_k, self.tt_q, self.tt_k, self.vt_q, self.vt_k, self.tv_q, self.tv_k,
        ]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MViTacModel<F = f32> {
    config: ModelConfig,
    pub visual: ModalityBranch<F>,
    pub tactile: ModalityBranch<F>,
}

impl<F: Real> MViTacModel<F> {
    /// Builds both branches from distinct sub-seeds of `config.seed`. Momentum
    /// encoders start as exact copies of their query encoders; the eight heads
    /// are initialized independently.
    pub fn init(config: ModelConfig) -> Result<Self> {
        config.validate()?;
        let hidden = config.hidden_dim.unwrap_or(config.visual.backbone_dim);
        let visual = ModalityBranch::new(&config.visual, hidden, config.embed_dim, derive_path(config.seed, &[1]))?;
        let tactile = ModalityBranch::new(&config.tactile, hidden, config.embed_dim, derive_path(config.seed, &[2]))?;
        Ok(Self {
            config,
            visual,
            tactile,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn branch(&self, modality: Modality) -> &ModalityBranch<F> {
        match modality {
            Modality::Visual => &self.visual,
            Modality::Tactile => &self.tactile,
        }
    }

    /// Trainable parameters: θ, the visual query heads, ψ, the tactile query heads.
    pub fn query_params(&self) -> Vec<&Tensor<F>> {
        self.visual.query_params().chain(self.tactile.query_params()).collect()
    }

    pub fn query_params_mut(&mut self) -> Vec<&mut Tensor<F>> {
        let Self { visual, tactile, .. } = self;
        visual.query_params_mut().chain(tactile.query_params_mut()).collect()
    }

    pub fn query_param_names(&self) -> Vec<String> {
        let mut names = self.visual.query_names("visual");
        names.extend(self.tactile.query_names("tactile"));
        names
    }

    /// Momentum encoders and key heads, index-aligned with [`query_params`](Self::query_params).
    pub fn key_params(&self) -> Vec<&Tensor<F>> {
        self.visual.key_params().chain(self.tactile.key_params()).collect()
    }

    pub fn key_param_names(&self) -> Vec<String> {
        let mut names = self.visual.key_names("visual");
        names.extend(self.tactile.key_names("tactile"));
        names
    }

    /// Every parameter with its name, query side first.
    pub fn named_params(&self) -> Vec<(String, &Tensor<F>)> {
        let names = self.query_param_names().into_iter().chain(self.key_param_names());
        names.zip(self.query_params().into_iter().chain(self.key_params())).collect()
    }

    /// Mutable view of every parameter, in [`named_params`](Self::named_params) order.
    pub(crate) fn all_params_mut(&mut self) -> Vec<&mut Tensor<F>> {
        let Self { visual, tactile, .. } = self;
        let (mut vq, mut vk) = visual.params_split_mut();
        let (tq, tk) = tactile.params_split_mut();
        vq.extend(tq);
        vq.append(&mut vk);
        vq.extend(tk);
        vq
    }

    pub fn param_count(&self) -> usize {
        self.named_params().iter().map(|(_, t)| t.numel()).sum()
    }

    /// Registers the trainable parameters on `tape` as differentiable leaves.
    pub fn bind_query(&self, tape: &mut Tape<F>) -> QueryVars {
        QueryVars::from_vars(self.query_params().into_iter().map(|p| tape.param(p)).collect())
    }

    /// Registers the trainable parameters as constants (evaluation only).
    pub fn bind_query_frozen(&self, tape: &mut Tape<F>) -> QueryVars {
        QueryVars::from_vars(self.query_params().into_iter().map(|p| tape.constant(p)).collect())
    }

    fn split<'a>(&self, qv: &'a QueryVars) -> (&'a [Var], &'a [Var]) {
        qv.vars.split_at(self.visual.query_len())
    }

    /// Encodes the four views into the eight embeddings:
    ///
    /// | embedding | head | encoder | view |
    /// |---|---|---|---|
    /// | `vv_q` | visual intra q | θ | `visual_q` |
    /// | `vv_k` | visual intra k | θ_k | `visual_k` |
    /// | `tt_q` | tactile intra q | ψ | `tactile_q` |
    /// | `tt_k` | tactile intra k | ψ_k | `tactile_k` |
    /// | `vt_q` | visual inter q | θ | `visual_q` |
    /// | `vt_k` | tactile inter k | ψ_k | `tactile_k` |
    /// | `tv_q` | tactile inter q | ψ | `tactile_q` |
    /// | `tv_k` | visual inter k | θ_k | `visual_k` |
    pub fn forward_views(&self, tape: &mut Tape<F>, qv: &QueryVars, views: &ViewBatch<F>) -> Result<EmbeddingSet> {
        views.batch_size()?;
        if qv.vars.len() != self.visual.query_len() + self.tactile.query_len() {
            return Err(Error::Config("query bindings do not match the model".into()));
        }
        let (v_vars, t_vars) = self.split(qv);
        let (v_enc, v_intra, v_inter) = self.visual.split_vars(v_vars);
        let (t_enc, t_intra, t_inter) = self.tactile.split_vars(t_vars);

        let xv = tape.constant(&views.visual_q);
        let hv = self.visual.query_encoder.forward(tape, v_enc, xv)?;
        let vv_q = self.visual.intra_head_q.forward(tape, v_intra, hv)?;
        let vt_q = self.visual.inter_head_q.forward(tape, v_inter, hv)?;

        let xt = tape.constant(&views.tactile_q);
        let ht = self.tactile.query_encoder.forward(tape, t_enc, xt)?;
        let tt_q = self.tactile.intra_head_q.forward(tape, t_intra, ht)?;
        let tv_q = self.tactile.inter_head_q.forward(tape, t_inter, ht)?;

        let kv = self.visual.momentum_encoder.infer(&views.visual_k)?;
        let kt = self.tactile.momentum_encoder.infer(&views.tactile_k)?;
        let vv_k = tape.constant(&self.visual.intra_head_k.infer(&kv)?);
        let tv_k = tape.constant(&self.visual.inter_head_k.infer(&kv)?);
        let tt_k = tape.constant(&self.tactile.intra_head_k.infer(&kt)?);
        let vt_k = tape.constant(&self.tactile.inter_head_k.infer(&kt)?);

        Ok(EmbeddingSet {
            vv_q,
            vv_k,
            tt_q,
            tt_k,
            vt_q,
            vt_k,
            tv_q,
            tv_k,
        })
    }

    /// `p_k ← m·p_k + (1−m)·p_q` for both momentum encoders and all four key heads.
    pub fn momentum_update(&mut self, m: f64) -> Result<()> {
        if !(0.0..=1.0).contains(&m) {
            return Err(Error::Range {
                what: "momentum",
                value: m,
                range: "[0, 1]",
            });
        }
        let m = F::of(m);
        self.visual.momentum_update(m);
        self.tactile.momentum_update(m);
        Ok(())
    }

    /// Backbone features of the query encoder, untracked.
    pub fn encode(&self, modality: Modality, images: &Tensor<F>) -> Result<Tensor<F>> {
        self.branch(modality).query_encoder.infer(images)
    }

    /// Unit-norm intra-modal query embedding, untracked.
    pub fn embed_intra(&self, modality: Modality, images: &Tensor<F>) -> Result<Tensor<F>> {
        let b = self.branch(modality);
        b.intra_head_q.infer(&b.query_encoder.infer(images)?)
    }

    /// Unit-norm inter-modal query embedding, untracked.
    pub fn embed_inter(&self, modality: Modality, images: &Tensor<F>) -> Result<Tensor<F>> {
        let b = self.branch(modality);
        b.inter_head_q.infer(&b.query_encoder.infer(images)?)
    }

    pub fn cast<G: Real>(&self) -> MViTacModel<G> {
        fn enc<F: Real, G: Real>(e: &ConvEncoder<F>) -> ConvEncoder<G> {
            let mut out = ConvEncoder::<G>::new(e.config().clone(), 0).expect("validated config");
            for (d, s) in out.params_mut().iter_mut().zip(e.params()) {
                *d = s.cast();
            }
            out
        }
        fn head<F: Real, G: Real>(h: &ProjectionHead<F>) -> ProjectionHead<G> {
            let mut out = ProjectionHead::<G>::new(1, 1, 1, 0).expect("valid dims");
            out.params_mut().clone_from_slice(&[
                h.params()[0].cast(),
                h.params()[1].cast(),
                h.params()[2].cast(),
                h.params()[3].cast(),
            ]);
            out
        }
        let branch = |b: &ModalityBranch<F>| ModalityBranch {
            query_encoder: enc(&b.query_encoder),
            momentum_encoder: enc(&b.momentum_encoder),
            intra_head_q: head(&b.intra_head_q),
            intra_head_k: head(&b.intra_head_k),
            inter_head_q: head(&b.inter_head_q),
            inter_head_k: head(&b.inter_head_k),
        };
        MViTacModel {
            config: self.config.clone(),
            visual: branch(&self.visual),
            tactile: branch(&self.tactile),
        }
    }
}
