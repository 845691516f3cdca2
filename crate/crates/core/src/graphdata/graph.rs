use serde::{Deserialize, Serialize};

use crate::autodiff::Tensor;
use crate::error::{Error, Result};

/// Graph target: a class index or a real value.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Label {
    Class(u64),
    Value(f64),
}

impl Label {
    pub fn as_f64(self) -> f64 {
        match self {
            Label::Class(c) => c as f64,
            Label::Value(v) => v,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Task {
    Classification { num_classes: usize },
    Regression,
}

impl Task {
    pub fn is_classification(self) -> bool {
        matches!(self, Task::Classification { .. })
    }
}

/// Undirected attributed graph with canonical edge storage: each edge is
/// `(u, v)` with `u < v`, and the list is sorted.
#[derive(Debug, Clone, PartialEq)]
pub struct Graph {
    num_nodes: usize,
    edges: Vec<(usize, usize)>,
    features: Tensor,
    label: Label,
}

impl Graph {
    /// Validates and canonicalizes. Self-loops, duplicate edges and
    /// out-of-range endpoints are rejected.
    pub fn new(
        num_nodes: usize,
        edges: Vec<(usize, usize)>,
        features: Tensor,
        label: Label,
    ) -> Result<Self> {
        if features.rows() != num_nodes {
            return Err(Error::Contract(format!(
                "{} feature rows for {num_nodes} nodes",
                features.rows()
            )));
        }
        let mut canon = Vec::with_capacity(edges.len());
        for (u, v) in edges {
            if u == v {
                return Err(Error::Contract(format!("self-loop on node {u}")));
            }
            if u >= num_nodes || v >= num_nodes {
                return Err(Error::Contract(format!(
                    "edge ({u}, {v}) out of range for {num_nodes} nodes"
                )));
            }
            canon.push((u.min(v), u.max(v)));
        }
        canon.sort_unstable();
        if let Some(w) = canon.windows(2).find(|w| w[0] == w[1]) {
            return Err(Error::Contract(format!("duplicate edge {:?}", w[0])));
        }
        Ok(Graph {
            num_nodes,
            edges: canon,
            features,
            label,
        })
    }

    pub fn num_nodes(&self) -> usize {
        self.num_nodes
    }

    pub fn num_edges(&self) -> usize {
        self.edges.len()
    }

    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    pub fn features(&self) -> &Tensor {
        &self.features
    }

    pub fn feature_dim(&self) -> usize {
        self.features.cols()
    }

    pub fn label(&self) -> Label {
        self.label
    }

    pub fn has_edge(&self, u: usize, v: usize) -> bool {
        self.edge_index(u, v).is_some()
    }

    /// Position of `{u, v}` in the canonical edge list.
    pub fn edge_index(&self, u: usize, v: usize) -> Option<usize> {
        self.edges.binary_search(&(u.min(v), u.max(v))).ok()
    }

    pub fn degrees(&self) -> Vec<usize> {
        let mut d = vec![0; self.num_nodes];
        for &(u, v) in &self.edges {
            d[u] += 1;
            d[v] += 1;
        }
        d
    }

    /// Same nodes, features and label with a different edge set.
    pub fn with_edges(&self, edges: Vec<(usize, usize)>) -> Result<Graph> {
        Graph::new(self.num_nodes, edges, self.features.clone(), self.label)
    }

    /// Relabels nodes: node `i` becomes `perm[i]`.
    pub fn permuted(&self, perm: &[usize]) -> Result<Graph> {
        if perm.len() != self.num_nodes {
            return Err(Error::Contract("permutation length differs from node count".into()));
        }
        let d = self.feature_dim();
        let mut feats = Tensor::zeros(self.num_nodes, d);
        for (i, &to) in perm.iter().enumerate() {
            for c in 0..d {
                feats.set(to, c, self.features.get(i, c));
            }
        }
        let edges = self.edges.iter().map(|&(u, v)| (perm[u], perm[v])).collect();
        Graph::new(self.num_nodes, edges, feats, self.label)
    }
}

/// Per-graph edges known to cause the label. Empty when a graph carries no
/// planted structure.
pub type GroundTruth = Vec<Vec<(usize, usize)>>;

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub name: String,
    pub task: Task,
    pub feature_dim: usize,
    pub graphs: Vec<Graph>,
}

impl Dataset {
    /// Checks uniform feature width and label/task agreement.
    pub fn new(name: impl Into<String>, task: Task, graphs: Vec<Graph>) -> Result<Self> {
        let feature_dim = graphs.first().map_or(0, Graph::feature_dim);
        for (i, g) in graphs.iter().enumerate() {
            if g.feature_dim() != feature_dim {
                return Err(Error::Schema {
                    line: i + 1,
                    message: format!(
                        "feature_dim {} differs from {feature_dim} of the first graph",
                        g.feature_dim()
                    ),
                });
            }
            match (task, g.label()) {
                (Task::Classification { num_classes }, Label::Class(c))
                    if (c as usize) < num_classes => {}
                (Task::Regression, _) => {}
                (_, l) => {
                    return Err(Error::Schema {
                        line: i + 1,
                        message: format!("label {l:?} does not fit task {task:?}"),
                    })
                }
            }
        }
        Ok(Dataset {
            name: name.into(),
            task,
            feature_dim,
            graphs,
        })
    }

    pub fn len(&self) -> usize {
        self.graphs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.graphs.is_empty()
    }

    pub fn labels(&self) -> Vec<f64> {
        self.graphs.iter().map(|g| g.label().as_f64()).collect()
    }

    pub fn subset(&self, indices: &[usize]) -> Dataset {
        Dataset {
            name: self.name.clone(),
            task: self.task,
            feature_dim: self.feature_dim,
            graphs: indices.iter().map(|&i| self.graphs[i].clone()).collect(),
        }
    }
}
