//! Orchestration: ingestion, scaling, target training, synthesis, shadow
//! fitting, evaluation, artifacts and experiment sweeps.

pub mod cluster;
pub mod config;
pub mod experiment;
pub mod ingest;
pub mod run;
pub mod workdir;

pub use cluster::{
    kmeans, kmeans_label, make_purchase, make_purchase_like, ClusterError, KMeans, PurchaseShape,
    PURCHASE_20F_5C, PURCHASE_30F_2C,
};
pub use config::{
    ConfigError, DataConfig, EvalSet, Method, PipelineConfig, Scaling, ShadowConfig, ShadowKind,
    SynthConfig, TargetConfig,
};
pub use experiment::{
    replicate, replicate_configs, run_experiment, sweep_csv, ExperimentSpec, ReplicateOutcome, Sweep,
    SweepRow,
};
pub use ingest::{builtin, load_csv, read_csv, scale_minmax, MinMaxScaler, Schema};
pub use run::{
    fit_shadow, prepare, run_in_memory, run_pipeline, synthesize, train_target, Manifest,
    PipelineError, PipelineOutcome, Prepared, RunReport, Shadow, SynthOutput,
};
pub use workdir::Workdir;
