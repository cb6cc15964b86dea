//! Deterministic imputation baselines.

mod forest;
mod hotdeck;
mod ppca;

pub use forest::{forest_impute, Forest, ForestConfig, Target, Tree};
pub use hotdeck::{hotdeck_donor, hotdeck_impute};
pub use ppca::{ppca_fit, PpcaConfig, PpcaModel};
