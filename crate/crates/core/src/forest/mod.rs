//! Multi-label decision trees and forests.
//!
//! Two tree flavours are provided: random trees, which pick the best multi-label Gini split
//! among ⌊√d⌋ sampled features, and completely-random trees, which pick a random feature and
//! a random threshold inside its observed range. Leaves store the exact fraction of their
//! training rows carrying each label.

mod ensemble;
mod gini;
mod tree;

pub use ensemble::{assign_folds, out_of_fold_predict, Forest, ForestConfig, DEFAULT_TREES};
pub use gini::multi_label_gini;
pub use tree::{best_split, candidate_count, train_tree, ForestKind, Node, Split, Tree, TreeConfig};
