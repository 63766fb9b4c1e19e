//! Block-model cascade simulation and dropout-based containment.
//!
//! This crate models a social network as a directed stochastic block model,
//! simulates discrete-time SIR content cascades on it, fits per-class-pair
//! transfer probabilities from logged cascades, and solves per-step dropout
//! optimization problems that suppress false-content spread while
//! guaranteeing a floor on true-content spread. The `control` module ties
//! these together into step-by-step containment loops.

pub mod control;
pub mod dropout;
pub mod error;
pub mod fit;
pub mod graph;
pub mod matrix;
pub mod sir;

pub use control::{
    empirical_branching_ratios, replay_with_dropouts, run_algorithm1, run_algorithm2,
    ControlConfig, ControlledRunRecord, SolverChoice,
};
pub use dropout::{
    apply_dropout, expected_next_infected_asymptotic, expected_next_infected_exact,
    feasibility_convex, feasibility_lp, lemma1_bound, solve_convex, solve_convex_with, solve_lp,
    solve_soft, DropoutMatrix, SolverBranch, SolverReport, StepCounts,
};
pub use error::{Error, Result};
pub use fit::{
    build_block_matrices, estimate_block_matrices, estimate_block_matrices_smoothed,
    merge_small_partitions, BlockEstimate, ClassTransfer, ContentLabel, ContentModelPair,
    EstimationDiag, LabeledCascade, UserParams,
};
pub use graph::{class_counts, sample_instance, DirectedGraphInstance, Partition, SbmModel};
pub use matrix::SquareMatrix;
pub use sir::{
    cascade_statistics, cascade_statistics_with_threshold, run_cascade, run_cascade_on_instance,
    run_cascade_with_transfers, sir_step, sir_step_logged, CascadeRecord, CascadeStats,
    InfectionEvent, SirState, Status,
};
