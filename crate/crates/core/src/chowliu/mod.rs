//! Exact discrete-distribution checks for maximum-MI trees, and a lossy
//! memory simulator for comparing orderings without a language model.

mod joint;
mod prufer;
mod simulator;

pub use joint::{
    chow_liu_tree, mutual_information_matrix, mutual_information_table, pairwise_mutual_information, tree_distribution,
    tree_distribution_kl, DiscreteJoint,
};
pub use prufer::{enumerate_spanning_trees, prufer_decode, MAX_ENUMERATED_NODES};
pub use simulator::{
    generate_synthetic_corpus, monte_carlo, retention_by_strategy, run_lossy_memory, sign_test,
    simulate_lossy_pipeline, FactChunk, LossyMemory, MonteCarloResult, SignTest, SimulatorReport, SyntheticCorpus,
    SyntheticParams,
};

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum ChowLiuError {
    #[error("invalid joint distribution: {0}")]
    InvalidJoint(String),
    #[error("tree over {nodes} nodes does not span {vars} variables")]
    TreeMismatch { vars: usize, nodes: usize },
    #[error("KL undefined: P has mass at {outcome:?} where the tree distribution is zero")]
    UndefinedKl { outcome: Vec<usize> },
    #[error("refusing to enumerate spanning trees for n = {n} (max {max})")]
    TooLarge { n: usize, max: usize },
    #[error("no spanning trees on {n} nodes")]
    TooSmall { n: usize },
    #[error("simulation failed: {0}")]
    Simulation(String),
}
