//! Verification suites, datasets and model-file ingestion.

pub mod datasets;
pub mod pautomac;
pub mod verify;

pub use datasets::{
    balanced_tree, comb_tree, gen_trees, gen_words, symbol_sparsity, Dataset, DatasetSummary, Input, Record,
    TreeFamily,
};
pub use pautomac::{parse_pautomac, PautomacModel};
pub use verify::{verify_wfa, verify_wta, InputResult, VerificationReport};
