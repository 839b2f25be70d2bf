//! Continuous sparsification over a frozen base model.
//!
//! Each masked weight `w` gets a real logit `s`. Training uses the relaxed
//! weight `w * sigmoid(beta * s)` with `beta` annealed exponentially from
//! `beta0` to `beta_max`; the final subnetwork keeps exactly the weights with
//! `s > 0`.

mod mask;
mod search;
mod train;

pub use mask::{
    ablate, anneal_beta, apply_subnetwork, binarize, heaviside, pack_bits, unpack_bits, MaskConfig, MaskState,
    Provenance, Subnetwork, TensorMask,
};
pub use search::{
    candidate_seed, hyperparameter_search, read_search_table, write_search_table, SearchData, SearchOutcome,
    SearchRow, SearchSpace, SEARCH_GATE,
};
pub use train::{
    mask_loss, masked_forward, prefix_activations, train_mask, MaskEpochLog, MaskMode, MaskObjective, MaskRun,
};
