//! Channel decomposition, statistics, sweeps, distillation, Jacobian
//! stratification and edge-distribution reports.

mod decompose;
mod experiments;
mod jacobian;
pub mod render;
mod stats;

pub use decompose::{
    bootstrap_share_ci, decompose, decompose_summary, pooled_std, share_rule, ArmSummary, BootstrapCi,
    DecompositionReport, Direction, NaReason, BOOTSTRAP_RESAMPLES,
};
pub use experiments::{
    aligned, corruption_study, corruption_study_with, distill, distill_with, edge_probability_report, graph_hash, run_arm,
    run_arm_with, run_seeds, run_seeds_with, t_sweep, t_sweep_with, three_arm, three_arm_with, Trainer,
    ArmRun, CorruptionPoint, CorruptionReport, DistillReport, EdgeProbabilityReport, HistogramBin, SeedFailure,
    StructureKind, ThreeArmReport, TSweepCell, TSweepReport,
};
pub use jacobian::{
    jacobian_by_distance, jacobian_table, node_jacobian_norms, support_graph, JacobianTable, Strata, StratumRow,
    FULL_PAIRS_MAX_NODES, PAIRS_PER_STRATUM,
};
pub use stats::{
    average_ranks, inc_beta, ln_gamma, mean, nearest_rank, paired_t_test, rank_correlation, sample_std,
    t_two_sided_p, Correlation, CorrelationKind, TTest,
};

/// Version of every serialized report.
pub const SCHEMA_VERSION: u32 = 1;
