//! Learned composition selection: a pairwise-ranking tree ensemble and the
//! selector that wraps it with a feature schema.

pub mod gbdt;
mod selector;

pub use gbdt::{BoostParams, Ensemble, RankingSet, Tree};
pub use selector::{
    encode_opt_config, feature_names, SelectorInput, SelectorModel, TrainParams, MODEL_FORMAT_VERSION,
};
