//! Transition datasets and the scenario linear programs built from them.

pub mod dataset;
pub mod polytope;
pub mod program;

pub use dataset::{collect_dataset, DatasetKey, TransitionDataset};
pub use polytope::InputPolytope;
pub use program::{
    build_kappa_lp, build_synthesis_lp, build_verification_lp, Caps, DecisionLayout, RowKind,
    RowTag, ScenarioLp, DEFAULT_K_MAX, LAMBDA_MARGIN,
};
