//! Reference problems: the Gaussian toy model and distribution-free
//! chain-ladder claims reserving.

pub mod chain_ladder;
pub mod toy;
