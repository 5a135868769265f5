//! Comparison methods sharing MI-DORF's train/predict surface.

mod hidden;
mod mir;
mod ordinal;

pub use hidden::{
    fit_hidden_chain, initial_hidden_chain, HiddenChainKind, HiddenChainParams, LabelCoupling, NodeModel,
};
pub use mir::{fit_mir, smooth_max, MirModel, DEFAULT_GAMMA};
pub use ordinal::{correct_instance_labels, fit_mi_or, fit_sil_or, OrdinalRegressor, MAX_CORRECTION_ROUNDS};
