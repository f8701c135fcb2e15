//! Metrics and the experiment harnesses built on the full pipeline.

mod ablation;
mod harness;
mod metrics;
mod pipeline;
mod verdict;

pub use metrics::{auc, ctr_by_cluster, ctr_spread, kmeans, kmeans_ctr, volatility, AucAccumulator, ClusterCtr, KMeansResult, VolatilityReport};
pub use pipeline::{
    derive_seed, ir_rows, mean_user_ad_gap, progressive, ur_rows, DataFilter, PipelineConfig, Prepared, RetrievalTraining, LOSS_LOG_BATCHES,
};
pub use ablation::{arm_setup, cross_domain_ablation, run_ablation, run_arm, Arm, ArmSetup, ArmResult, CrossDomainResult, CrossDomainVariant};
pub use harness::{
    feature_importance, layer_sweep, lee_evaluate, lee_proxy_auc, recall_at_k, replay_user_cr, retrieval_eval, tap_rows, ImportanceRow,
    LeeReport, LeeRow, LeeVariant, RetrievalReport, SweepResult, LEE_PROXY_EVENTS,
};
pub use verdict::{cross_domain_votes, lee_votes, retrieval_votes, sweep_votes, arm_votes, ArmVotes, Votes};
