//! End-to-end orchestration behind a single configuration: data,
//! baseline, clustering, training, indexing, search, evaluation,
//! benchmarking and the teacher × sampling ablation grid.

mod ablation;
mod commands;
mod config;

pub use ablation::{cmd_ablation, AblationCell, AblationReport, RUN_DUMP_DEPTH};
pub use commands::{
    cmd_bench, cmd_cluster, cmd_eval, cmd_fuse, cmd_index, cmd_pipeline, cmd_search, cmd_synth, cmd_train,
    evaluate_run, load_dataset, search_run, Dataset, EvalSummary, Layout,
};
pub use config::{
    AblationConfig, BaselineConfig, BenchConfig, ClusterConfig, DataPaths, EncoderConfig, EvalConfig, FusionConfig,
    PipelineConfig, Seeds, ValidationConfig,
};
