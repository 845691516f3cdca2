//! Accuracy metrics and explanation quality measures.

mod explain;
mod metrics;
mod report;

pub use explain::{
    explanation_overlap, explanation_subgraph, faithfulness_pos, fraction_size, random_influences,
    reproducibility, reproducibility_from_influences, stability, subgraph_dataset, sufficiency,
    task_metric, top_k_edges, ExplanationSubgraph,
};
pub use metrics::{auc, average_precision, cosine_distance, mse, pearson, r2};
pub use report::{mean_std, MetricReport, MetricRow};
