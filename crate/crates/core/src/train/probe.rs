//! Linear probing on frozen backbone features (projection heads bypassed).

use serde::{Deserialize, Serialize};

use super::adam::{Adam, AdamConfig};
use super::pretrain::param_digest;
use crate::data::{eval_view, stack_images, Batcher, PairAugmentation, PairedDataset, Task};
use crate::error::{Error, Result};
use crate::model::{MViTacModel, Modality};
use crate::rng::{derive_path, derive_seed};
use crate::tensor::{Tape, Tensor};

const STREAM_PROBE_BATCHES: u64 = 20;
const STREAM_PROBE_DROPOUT: u64 = 21;
const FEATURE_CHUNK: usize = 64;

/// Which frozen features feed the classifier.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ProbeInput {
    Tactile,
    /// Tactile and visual backbone outputs, concatenated in that order.
    Both,
}

impl ProbeInput {
    pub fn name(self) -> &'static str {
        match self {
            ProbeInput::Tactile => "tactile",
            ProbeInput::Both => "both",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "tactile" => Ok(ProbeInput::Tactile),
            "both" => Ok(ProbeInput::Both),
            other => Err(Error::Config(format!("unknown probe modality '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ProbeConfig {
    pub input: ProbeInput,
    pub dropout_prob: f64,
    pub lr: f64,
    pub epochs: usize,
    pub batch_size: usize,
    /// Z-score features with train-split statistics before the linear layer.
    pub standardize: bool,
    pub seed: u64,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        Self {
            input: ProbeInput::Both,
            dropout_prob: 0.2,
            lr: 1e-4,
            epochs: 20,
            batch_size: 16,
            standardize: false,
            seed: 0,
        }
    }
}

impl ProbeConfig {
    /// Full-scale probe schedule (60 epochs).
    pub fn paper_scale() -> Self {
        Self {
            epochs: 60,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.dropout_prob) {
            return Err(Error::Range {
                what: "dropout_prob",
                value: self.dropout_prob,
                range: "[0, 1)",
            });
        }
        AdamConfig::with_lr(self.lr).validate()?;
        if self.batch_size < 1 {
            return Err(Error::Config("probe batch_size must be positive".into()));
        }
        Ok(())
    }
}

/// Backbone features of every sample with a label for `task`, plus those labels.
/// Images go through the deterministic evaluation view of `preprocess`.
pub fn probe_features(
    model: &MViTacModel<f32>,
    dataset: &PairedDataset,
    preprocess: &PairAugmentation,
    input: ProbeInput,
    task: Task,
) -> Result<(Tensor<f32>, Vec<usize>)> {
    check_compatible(model, dataset)?;
    let labelled: Vec<_> = dataset
        .samples
        .iter()
        .filter_map(|s| s.labels.get(task).map(|l| (s, l)))
        .collect();
    if labelled.is_empty() {
        return Err(Error::Evaluation(format!("no samples carry a '{}' label", task.name())));
    }
    let dim = model.config().tactile.backbone_dim * if input == ProbeInput::Both { 2 } else { 1 };
    let mut data = Vec::with_capacity(labelled.len() * dim);
    for chunk in labelled.chunks(FEATURE_CHUNK) {
        let encode = |modality: Modality| -> Result<Tensor<f32>> {
            let cfg = preprocess.for_modality(modality);
            let views = chunk
                .iter()
                .map(|(s, _)| match modality {
                    Modality::Visual => eval_view(&s.visual, cfg),
                    Modality::Tactile => eval_view(&s.tactile, cfg),
                })
                .collect::<Result<Vec<_>>>()?;
            model.encode(modality, &stack_images(&views.iter().collect::<Vec<_>>())?)
        };
        let tactile = encode(Modality::Tactile)?;
        let visual = if input == ProbeInput::Both { Some(encode(Modality::Visual)?) } else { None };
        for i in 0..chunk.len() {
            data.extend_from_slice(tactile.row(i));
            if let Some(v) = &visual {
                data.extend_from_slice(v.row(i));
            }
        }
    }
    let labels = labelled.iter().map(|(_, l)| *l).collect();
    Ok((Tensor::from_vec(vec![labelled.len(), dim], data)?, labels))
}

/// The checkpoint's encoders must accept the dataset's channel counts.
pub fn check_compatible(model: &MViTacModel<f32>, dataset: &PairedDataset) -> Result<()> {
    let Some(sample) = dataset.samples.first() else {
        return Err(Error::Evaluation("dataset is empty".into()));
    };
    let cfg = model.config();
    for (what, expected, found) in [
        ("visual", cfg.visual.in_channels, sample.visual.channels),
        ("tactile", cfg.tactile.in_channels, sample.tactile.channels),
    ] {
        if expected != found {
            return Err(Error::Config(format!(
                "{what} encoder expects {expected} channels but the dataset has {found}"
            )));
        }
    }
    Ok(())
}

/// Dropout followed by one affine layer, optionally preceded by a fixed standardization.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearProbe {
    pub weight: Tensor<f32>,
    pub bias: Tensor<f32>,
    pub mean: Vec<f32>,
    pub std: Vec<f32>,
    pub dropout_prob: f64,
}

impl LinearProbe {
    pub fn new(in_dim: usize, class_count: usize, dropout_prob: f64) -> Result<Self> {
        Ok(Self {
            weight: Tensor::zeros(vec![in_dim, class_count])?,
            bias: Tensor::zeros(vec![class_count])?,
            mean: vec![0.0; in_dim],
            std: vec![1.0; in_dim],
            dropout_prob,
        })
    }

    pub fn in_dim(&self) -> usize {
        self.weight.shape()[0]
    }

    pub fn class_count(&self) -> usize {
        self.weight.shape()[1]
    }

    fn standardized(&self, features: &Tensor<f32>) -> Result<Tensor<f32>> {
        let d = self.in_dim();
        if features.shape().len() != 2 || features.shape()[1] != d {
            return Err(Error::conform("probe", &[d], features.shape()));
        }
        let data = features
            .data()
            .chunks(d)
            .flat_map(|row| row.iter().zip(&self.mean).zip(&self.std).map(|((x, m), s)| (x - m) / s))
            .collect();
        Tensor::from_vec(features.shape().to_vec(), data)
    }

    /// Evaluation-mode logits (dropout disabled).
    pub fn logits(&self, features: &Tensor<f32>) -> Result<Tensor<f32>> {
        let mut tape = Tape::new();
        let x = tape.constant(&self.standardized(features)?);
        let w = tape.constant(&self.weight);
        let b = tape.constant(&self.bias);
        let y = tape.linear(x, w, b)?;
        Ok(tape.value(y).clone())
    }

    /// Argmax per row; ties go to the lowest class index.
    pub fn predict(&self, features: &Tensor<f32>) -> Result<Vec<usize>> {
        let logits = self.logits(features)?;
        let c = self.class_count();
        Ok(logits
            .data()
            .chunks(c)
            .map(|row| {
                row.iter()
                    .enumerate()
                    .fold((0, f32::NEG_INFINITY), |best, (i, &v)| if v > best.1 { (i, v) } else { best })
                    .0
            })
            .collect())
    }
}

#[derive(Serialize, Deserialize)]
struct ProbeFile {
    in_dim: usize,
    class_count: usize,
    weight: Vec<f32>,
    bias: Vec<f32>,
    mean: Vec<f32>,
    std: Vec<f32>,
    dropout_prob: f64,
}

impl LinearProbe {
    pub fn to_json(&self) -> String {
        let file = ProbeFile {
            in_dim: self.in_dim(),
            class_count: self.class_count(),
            weight: self.weight.data().to_vec(),
            bias: self.bias.data().to_vec(),
            mean: self.mean.clone(),
            std: self.std.clone(),
            dropout_prob: self.dropout_prob,
        };
        serde_json::to_string_pretty(&file).expect("probe serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let f: ProbeFile = serde_json::from_str(text).map_err(|e| Error::Config(format!("probe file: {e}")))?;
        if f.mean.len() != f.in_dim || f.std.len() != f.in_dim {
            return Err(Error::Config("probe file: standardization length mismatch".into()));
        }
        Ok(Self {
            weight: Tensor::from_vec(vec![f.in_dim, f.class_count], f.weight)?,
            bias: Tensor::from_vec(vec![f.class_count], f.bias)?,
            mean: f.mean,
            std: f.std,
            dropout_prob: f.dropout_prob,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub accuracy: f64,
    pub n: usize,
    /// `confusion[true][predicted]`.
    pub confusion: Vec<Vec<usize>>,
}

pub fn evaluate(probe: &LinearProbe, features: &Tensor<f32>, labels: &[usize]) -> Result<EvalReport> {
    if labels.is_empty() {
        return Err(Error::Evaluation("cannot evaluate on an empty dataset".into()));
    }
    if features.shape()[0] != labels.len() {
        return Err(Error::conform("evaluate", features.shape(), &[labels.len()]));
    }
    let c = probe.class_count();
    let mut confusion = vec![vec![0; c]; c];
    let mut correct = 0;
    for (&t, p) in labels.iter().zip(probe.predict(features)?) {
        if t >= c {
            return Err(Error::Label { label: t, class_count: c });
        }
        confusion[t][p] += 1;
        correct += usize::from(t == p);
    }
    Ok(EvalReport {
        accuracy: correct as f64 / labels.len() as f64,
        n: labels.len(),
        confusion,
    })
}

/// Trains a [`LinearProbe`] with Adam on fixed features.
pub fn train_probe(
    features: &Tensor<f32>,
    labels: &[usize],
    class_count: usize,
    config: &ProbeConfig,
) -> Result<LinearProbe> {
    config.validate()?;
    let n = labels.len();
    if n == 0 || features.shape()[0] != n {
        return Err(Error::conform("train_probe", features.shape(), &[n]));
    }
    if let Some(&bad) = labels.iter().find(|&&l| l >= class_count) {
        return Err(Error::Label { label: bad, class_count });
    }
    let d = features.shape()[1];
    let mut probe = LinearProbe::new(d, class_count, config.dropout_prob)?;
    if config.standardize {
        for j in 0..d {
            let col: Vec<f64> = (0..n).map(|i| features.data()[i * d + j] as f64).collect();
            let mean = col.iter().sum::<f64>() / n as f64;
            let var = col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n as f64;
            probe.mean[j] = mean as f32;
            probe.std[j] = var.sqrt().max(1e-6) as f32;
        }
    }
    let x = probe.standardized(features)?;
    let mut adam = Adam::new(AdamConfig::with_lr(config.lr), [&probe.weight, &probe.bias])?;
    let batch_size = config.batch_size.min(n);
    let batcher = Batcher::new(n, batch_size.max(2), derive_seed(config.seed, STREAM_PROBE_BATCHES), false)?;
    let names = ["probe.weight".to_string(), "probe.bias".to_string()];
    for epoch in 1..=config.epochs as u64 {
        for (bi, batch) in batcher.epoch(epoch).into_iter().enumerate() {
            let rows: Vec<f32> = batch.iter().flat_map(|&i| x.row(i).iter().copied()).collect();
            let xb = Tensor::from_vec(vec![batch.len(), d], rows)?;
            let yb: Vec<usize> = batch.iter().map(|&i| labels[i]).collect();
            let mut tape = Tape::new();
            let xv = tape.constant(&xb);
            let seed = derive_path(config.seed, &[STREAM_PROBE_DROPOUT, epoch, bi as u64]);
            let xd = tape.dropout(xv, config.dropout_prob, true, seed)?;
            let w = tape.param(&probe.weight);
            let b = tape.param(&probe.bias);
            let logits = tape.linear(xd, w, b)?;
            let loss = tape.cross_entropy(logits, yb)?;
            tape.backward(loss)?;
            let gw = tape.grad(w).expect("weight is a parameter").to_vec();
            let gb = tape.grad(b).expect("bias is a parameter").to_vec();
            drop(tape);
            adam.step(&mut [&mut probe.weight, &mut probe.bias], &[&gw, &gb], &names)?;
        }
    }
    Ok(probe)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProbeOutcome {
    pub probe: LinearProbe,
    pub train: EvalReport,
    pub test: EvalReport,
    pub encoder_digest_before: String,
    pub encoder_digest_after: String,
}

/// Extracts frozen features for both splits, trains on `train`, scores both.
pub fn linear_probe(
    model: &MViTacModel<f32>,
    train: &PairedDataset,
    test: &PairedDataset,
    preprocess: &PairAugmentation,
    task: Task,
    class_count: usize,
    config: &ProbeConfig,
) -> Result<ProbeOutcome> {
    let digest = || param_digest(model.named_params().into_iter().map(|(_, t)| t));
    let before = digest();
    let (xtr, ytr) = probe_features(model, train, preprocess, config.input, task)?;
    let (xte, yte) = probe_features(model, test, preprocess, config.input, task)?;
    let probe = train_probe(&xtr, &ytr, class_count, config)?;
    Ok(ProbeOutcome {
        train: evaluate(&probe, &xtr, &ytr)?,
        test: evaluate(&probe, &xte, &yte)?,
        probe,
        encoder_digest_before: before,
        encoder_digest_after: digest(),
    })
}
