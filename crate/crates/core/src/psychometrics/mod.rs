//! From a measurement matrix to a value system: correlations, principal
//! components, scree-based retention, varimax rotation, reliability-driven
//! pruning, Cronbach's alpha with bootstrap intervals, and clustering.

mod alpha;
mod dendrogram;
mod factor;
mod pca;
mod system;
mod varimax;

pub use alpha::{cronbach_alpha, cronbach_alpha_point, signed_items, AlphaEstimate};
pub use dendrogram::{dendrogram, dendrogram_from_loadings, Dendrogram, Merge};
pub use factor::{
    assign, congruence, factor_alphas, matched_congruence, prune_items, scree_elbow,
    scree_retention, solve, Assignment, DroppedItem, FactorSolution, PruneOutcome, PruneRules,
    MIN_ALPHA,
};
pub use pca::{pca, sorted_eigen, PcaResult};
pub use system::{build_value_system, StructureConfig, StructureOutcome, ValueSystem};
pub use varimax::{rotate_varimax, varimax_criterion, Rotated, VarimaxOptions};

pub use crate::stats::correlation_matrix;
