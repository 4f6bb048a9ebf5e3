//! `mvitac` subcommands. Exit codes: 0 success, 2 configuration or input
//! error, 3 training divergence.

use std::ffi::OsString;
use std::fs::OpenOptions;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::config::{Profile, RunConfig};
use crate::data::{
    detect_layout, eval_view, export_pair_dataset, load_grasp_dataset, load_pair_dataset, stack_images, synth_generate,
    AugmentationConfig, Layout, PairAugmentation, PairedDataset, Split, SynthSpec, Task,
};
use crate::error::{Error, Result};
use crate::model::{Checkpoint, MViTacModel, Modality};
use crate::train::{linear_probe, pretrain, retrieval_eval, ProbeInput, FINAL_CHECKPOINT};

pub const EXIT_OK: i32 = 0;
pub const EXIT_INPUT: i32 = 2;
pub const EXIT_DIVERGED: i32 = 3;
pub const EVAL_FILE: &str = "eval.csv";

#[derive(Debug, Parser)]
#[command(name = "mvitac", version, about = "Visuotactile contrastive pretraining and linear probing")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic paired dataset in the pair layout.
    Synth(SynthArgs),
    /// Self-supervised pretraining; writes checkpoints, metrics.csv and resolved_config.toml.
    Pretrain(PretrainArgs),
    /// Train and evaluate a linear probe on frozen encoder features.
    Probe(ProbeArgs),
    /// Write per-sample embeddings to CSV.
    ExportEmbeddings(ExportArgs),
    /// Visual-to-tactile top-k retrieval on the test split.
    Retrieval(RetrievalArgs),
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long, default_value_t = 4)]
    pub classes: usize,
    #[arg(long, default_value_t = 128)]
    pub per_class: usize,
    #[arg(long, default_value_t = 32)]
    pub size: usize,
    #[arg(long, default_value_t = 0.05)]
    pub noise: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 0.8)]
    pub train_fraction: f64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum ProfileArg {
    Desk,
    PaperScale,
}

impl From<ProfileArg> for Profile {
    fn from(p: ProfileArg) -> Self {
        match p {
            ProfileArg::Desk => Profile::Desk,
            ProfileArg::PaperScale => Profile::PaperScale,
        }
    }
}

#[derive(Debug, Args)]
pub struct PretrainArgs {
    /// TOML run configuration; keys not given keep the profile defaults.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "desk")]
    pub profile: ProfileArg,
    #[arg(long)]
    pub tau: Option<f64>,
    #[arg(long)]
    pub lambda_inter: Option<f64>,
    #[arg(long)]
    pub momentum: Option<f64>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Any config leaf as `dotted.key=value`; applied after the named flags.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub sets: Vec<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum TaskArg {
    Category,
    Hardsoft,
    Roughsmooth,
    Grasp,
}

impl From<TaskArg> for Task {
    fn from(t: TaskArg) -> Self {
        match t {
            TaskArg::Category => Task::Category,
            TaskArg::Hardsoft => Task::HardSoft,
            TaskArg::Roughsmooth => Task::RoughSmooth,
            TaskArg::Grasp => Task::Grasp,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ModalityArg {
    Tactile,
    Both,
}

#[derive(Debug, Args)]
pub struct ProbeArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, value_enum)]
    pub task: TaskArg,
    #[arg(long, value_enum, default_value = "both")]
    pub modality: ModalityArg,
    /// Directory for eval.csv and the classifier; defaults to the checkpoint's directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Run configuration whose `probe` section is used.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub sets: Vec<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Space {
    Backbone,
    Intra,
    Inter,
}

#[derive(Debug, Args)]
pub struct ExportArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, value_enum)]
    pub space: Space,
    /// Output CSV file.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct RetrievalArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, default_value_t = 1)]
    pub k: usize,
    /// Use at most this many test pairs.
    #[arg(long)]
    pub limit: Option<usize>,
}

/// Parses `args` (program name first), runs, and returns the exit code.
pub fn run_from<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    match Cli::try_parse_from(args) {
        Ok(cli) => match run(cli) {
            Ok(()) => EXIT_OK,
            Err(e) => {
                eprintln!("error: {e}");
                exit_code(&e)
            }
        },
        Err(e) => {
            let _ = e.print();
            if e.use_stderr() {
                EXIT_INPUT
            } else {
                EXIT_OK
            }
        }
    }
}

pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::DivergedTraining { .. } => EXIT_DIVERGED,
        _ => EXIT_INPUT,
    }
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Synth(a) => cmd_synth(&a),
        Command::Pretrain(a) => cmd_pretrain(&a),
        Command::Probe(a) => cmd_probe(&a),
        Command::ExportEmbeddings(a) => cmd_export_embeddings(&a),
        Command::Retrieval(a) => cmd_retrieval(&a),
    }
}

/// Loads either layout.
pub fn load_dataset(root: &Path) -> Result<(PairedDataset, Layout)> {
    let layout = detect_layout(root)?;
    let ds = match layout {
        Layout::Pair => load_pair_dataset(root)?,
        Layout::Grasp => load_grasp_dataset(root)?,
    };
    Ok((ds, layout))
}

pub fn cmd_synth(a: &SynthArgs) -> Result<()> {
    let spec = SynthSpec {
        class_count: a.classes,
        samples_per_class: a.per_class,
        image_size: a.size,
        noise_std: a.noise,
        seed: a.seed,
        train_fraction: a.train_fraction,
    };
    let ds = synth_generate(&spec)?;
    export_pair_dataset(&ds, &a.out)?;
    println!("wrote {} pairs to {}", ds.len(), a.out.display());
    Ok(())
}

/// File, then named flags, then `--set`, then seed propagation and validation.
pub fn pretrain_config(a: &PretrainArgs) -> Result<RunConfig> {
    let profile = a.profile.into();
    let mut cfg = match &a.config {
        Some(p) => RunConfig::load(p, profile)?,
        None => RunConfig::for_profile(profile),
    };
    if let Some(v) = a.tau {
        cfg.train.loss.tau = v;
    }
    if let Some(v) = a.lambda_inter {
        cfg.train.loss.lambda_inter = v;
    }
    if let Some(v) = a.momentum {
        cfg.train.momentum = v;
    }
    if let Some(v) = a.epochs {
        cfg.train.epochs = v;
    }
    if let Some(v) = a.batch_size {
        cfg.train.batch_size = v;
    }
    if let Some(v) = a.lr {
        cfg.train.adam.lr = v;
    }
    if let Some(v) = a.seed {
        cfg.seed = v;
    }
    if a.data.is_some() {
        cfg.data.clone_from(&a.data);
    }
    if a.out.is_some() {
        cfg.out.clone_from(&a.out);
    }
    for s in &a.sets {
        cfg.set(s)?;
    }
    cfg.resolve()
}

pub fn cmd_pretrain(a: &PretrainArgs) -> Result<()> {
    let mut cfg = pretrain_config(a)?;
    let data = cfg.data.clone().ok_or_else(|| Error::Config("pretrain needs --data".into()))?;
    let out = cfg.out.clone().ok_or_else(|| Error::Config("pretrain needs --out".into()))?;
    let (dataset, layout) = load_dataset(&data)?;
    cfg.model.tactile.in_channels = dataset.tactile_channels().unwrap_or(3);
    cfg.augmentation.grasp_mode = layout == Layout::Grasp;
    let cfg = cfg.resolve()?;
    cfg.write_resolved(&out)?;
    let train = dataset.split(Split::Train);
    let aug = PairAugmentation::resolve(&cfg.augmentation, &train)?;
    let model = MViTacModel::init(cfg.model.clone())?;
    match pretrain(model, &train, aug, &cfg.train, Some(&out)) {
        Ok(result) => {
            let last = result.metrics.epochs.last();
            println!(
                "pretrained {} steps; final epoch l_mm {:.4}; checkpoint {}",
                result.checkpoint.header.step,
                last.map_or(f64::NAN, |e| e.l_mm),
                out.join(FINAL_CHECKPOINT).display()
            );
            Ok(())
        }
        Err(e @ Error::DivergedTraining { .. }) => {
            if let Error::DivergedTraining { last_good, .. } = &e {
                match last_good {
                    Some(p) => println!("last good checkpoint: {}", p.display()),
                    None => println!("last good checkpoint: none (diverged in the first epoch)"),
                }
            }
            Err(e)
        }
        Err(e) => Err(e),
    }
}

/// Loads a checkpoint with the preprocessing it was trained under.
pub fn load_checkpoint(path: &Path, dataset: &PairedDataset) -> Result<(MViTacModel<f32>, PairAugmentation)> {
    let ckpt = Checkpoint::load(path)?;
    let model = ckpt.to_model()?;
    let pre = match ckpt.header.preprocess {
        Some(p) => p,
        None => PairAugmentation::resolve(&AugmentationConfig::default(), &dataset.split(Split::Train))?,
    };
    Ok((model, pre))
}

pub fn cmd_probe(a: &ProbeArgs) -> Result<()> {
    let task: Task = a.task.into();
    let (dataset, layout) = load_dataset(&a.data)?;
    match (task, layout) {
        (Task::Grasp, Layout::Pair) => {
            return Err(Error::Config("task grasp needs a grasp layout, but the data is a pair layout".into()))
        }
        (t, Layout::Grasp) if t != Task::Grasp => {
            return Err(Error::Config(format!("task {} needs a pair layout, but the data is a grasp layout", t.name())))
        }
        _ => {}
    }
    let (model, pre) = load_checkpoint(&a.checkpoint, &dataset)?;
    crate::train::check_compatible(&model, &dataset)?;

    let mut cfg = match &a.config {
        Some(p) => RunConfig::load(p, Profile::Desk)?,
        None => RunConfig::default(),
    };
    for s in &a.sets {
        cfg.set(s)?;
    }
    let mut probe = cfg.probe;
    probe.input = match a.modality {
        ModalityArg::Tactile => ProbeInput::Tactile,
        ModalityArg::Both => ProbeInput::Both,
    };
    if let Some(v) = a.epochs {
        probe.epochs = v;
    }
    if let Some(v) = a.lr {
        probe.lr = v;
    }
    if let Some(v) = a.seed {
        probe.seed = v;
    }
    probe.validate()?;

    let classes = dataset.class_count(task);
    let outcome = linear_probe(
        &model,
        &dataset.split(Split::Train),
        &dataset.split(Split::Test),
        &pre,
        task,
        classes,
        &probe,
    )?;
    if outcome.encoder_digest_before != outcome.encoder_digest_after {
        return Err(Error::Evaluation("encoder parameters changed during probing".into()));
    }
    let out = match &a.out {
        Some(o) => o.clone(),
        None => a.checkpoint.parent().map_or_else(|| PathBuf::from("."), Path::to_path_buf),
    };
    std::fs::create_dir_all(&out)?;
    append_eval(&out.join(EVAL_FILE), task, probe.input, outcome.test.accuracy, outcome.test.n)?;
    let clf = out.join(format!("probe_{}_{}.json", task.name(), probe.input.name()));
    std::fs::write(&clf, outcome.probe.to_json())?;
    println!(
        "{} / {}: train {:.4}, test {:.4} (n={}); classifier {}",
        task.name(),
        probe.input.name(),
        outcome.train.accuracy,
        outcome.test.accuracy,
        outcome.test.n,
        clf.display()
    );
    Ok(())
}

/// Appends one `task,modality,accuracy,n` row, writing the header on first use.
pub fn append_eval(path: &Path, task: Task, input: ProbeInput, accuracy: f64, n: usize) -> Result<()> {
    let fresh = !path.exists();
    let mut f = OpenOptions::new().create(true).append(true).open(path)?;
    if fresh {
        writeln!(f, "task,modality,accuracy,n")?;
    }
    writeln!(f, "{},{},{},{}", task.name(), input.name(), accuracy, n)?;
    Ok(())
}

/// Rows of `stem,modality,d0..` for every sample and both modalities.
pub fn export_embeddings(
    model: &MViTacModel<f32>,
    dataset: &PairedDataset,
    pre: &PairAugmentation,
    space: Space,
) -> Result<Vec<(String, Modality, Vec<f32>)>> {
    let mut rows = Vec::with_capacity(2 * dataset.len());
    for chunk in dataset.samples.chunks(64) {
        for modality in [Modality::Visual, Modality::Tactile] {
            let cfg = pre.for_modality(modality);
            let views = chunk
                .iter()
                .map(|s| match modality {
                    Modality::Visual => eval_view(&s.visual, cfg),
                    Modality::Tactile => eval_view(&s.tactile, cfg),
                })
                .collect::<Result<Vec<_>>>()?;
            let x = stack_images(&views.iter().collect::<Vec<_>>())?;
            let z = match space {
                Space::Backbone => model.encode(modality, &x)?,
                Space::Intra => model.embed_intra(modality, &x)?,
                Space::Inter => model.embed_inter(modality, &x)?,
            };
            for (i, s) in chunk.iter().enumerate() {
                rows.push((s.stem.clone(), modality, z.row(i).to_vec()));
            }
        }
    }
    Ok(rows)
}

pub fn cmd_export_embeddings(a: &ExportArgs) -> Result<()> {
    let (dataset, _) = load_dataset(&a.data)?;
    let (model, pre) = load_checkpoint(&a.checkpoint, &dataset)?;
    crate::train::check_compatible(&model, &dataset)?;
    let rows = export_embeddings(&model, &dataset, &pre, a.space)?;
    if let Some(parent) = a.out.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent)?;
    }
    let mut w = csv::Writer::from_path(&a.out)?;
    let dim = rows.first().map_or(0, |r| r.2.len());
    let mut header = vec!["stem".to_string(), "modality".to_string()];
    header.extend((0..dim).map(|i| format!("d{i}")));
    w.write_record(&header)?;
    for (stem, modality, v) in &rows {
        let mut rec = vec![stem.clone(), modality.name().to_string()];
        rec.extend(v.iter().map(f32::to_string));
        w.write_record(&rec)?;
    }
    w.flush()?;
    println!("wrote {} rows of dimension {dim} to {}", rows.len(), a.out.display());
    Ok(())
}

pub fn cmd_retrieval(a: &RetrievalArgs) -> Result<()> {
    let (dataset, _) = load_dataset(&a.data)?;
    let (model, pre) = load_checkpoint(&a.checkpoint, &dataset)?;
    let mut test = dataset.split(Split::Test);
    if let Some(limit) = a.limit {
        test.samples.truncate(limit);
    }
    let r = retrieval_eval(&model, &test, &pre, a.k)?;
    println!("top-{} retrieval over {} pairs: {:.4} (chance {:.4})", r.k, r.n, r.accuracy, r.k as f64 / r.n as f64);
    Ok(())
}
