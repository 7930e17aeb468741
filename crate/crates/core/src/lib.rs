//! Causal event reasoning over activity graphs: triplet datasets,
//! trajectory-based causal estimates and LM scoring.

pub mod dataset;
pub mod estimand;
pub mod eval;
pub mod graph;
pub mod io;
pub mod prompt;
pub mod scorer;
pub mod trajectory;
pub mod triplets;
