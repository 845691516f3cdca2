//! Graphs, datasets, synthetic generators and split bookkeeping.

mod generate;
mod graph;
mod io;
mod split;

pub use generate::{
    add_noise_edges, edge_alignment, generate_planted_clique, max_clique_size, FeatureKind,
    PlantedCliqueParams,
};
pub use graph::{Dataset, GroundTruth, Graph, Label, Task};
pub use io::{load_ground_truth, load_jsonl, save_ground_truth, save_jsonl};
pub use split::{resplit_train_support, split, SplitIndices};
