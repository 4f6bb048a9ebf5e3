//! Optimization, self-supervised pretraining, linear probing and retrieval.

mod adam;
mod metrics;
mod pretrain;
mod probe;
mod retrieval;

pub use adam::{Adam, AdamConfig};
pub use metrics::{EpochRecord, MetricsLog, StepRecord};
pub use pretrain::{
    param_digest, pretrain, PretrainOutput, Pretrainer, TrainConfig, EPOCHS_FILE, FINAL_CHECKPOINT, LAST_CHECKPOINT,
    METRICS_FILE,
};
pub use probe::{
    check_compatible, evaluate, linear_probe, probe_features, train_probe, EvalReport, LinearProbe, ProbeConfig,
    ProbeInput, ProbeOutcome,
};
pub use retrieval::{inter_embeddings, retrieval_eval, topk_retrieval, RetrievalReport};
