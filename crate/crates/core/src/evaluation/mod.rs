//! Retrieval metrics, significance testing, run fusion and multi-seed
//! aggregation.

mod fusion;
mod metrics;
mod robustness;
mod significance;

pub use fusion::{fuse_runs, FusionMethod, DEFAULT_FUSION_WEIGHT, DEFAULT_RRF_K};
pub use metrics::{
    mrr_at, ndcg_at, recall_at, recall_curve, write_metric_tsv, write_recall_curve_tsv, MetricReport,
    DEFAULT_BINARIZATION,
};
pub use robustness::{robustness_report, write_robustness_tsv, RobustnessReport};
pub use significance::{paired_t_test, write_significance_tsv};
