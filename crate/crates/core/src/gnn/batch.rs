use std::sync::Arc;

use crate::autodiff::{Pattern, Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::graphdata::Graph;

/// Several graphs stacked block-diagonally so one tape op handles them all.
///
/// The adjacency pattern holds both directions of every edge plus one
/// self-loop per node. Entry `k` takes its weight from `entry_edge[k]`: a
/// global edge index, or `num_edges` for a self-loop (weight fixed at 1).
#[derive(Debug, Clone)]
pub struct GraphBatch {
    node_offsets: Vec<usize>,
    edge_offsets: Vec<usize>,
    pattern: Arc<Pattern>,
    entry_edge: Arc<[usize]>,
    edge_src: Arc<[usize]>,
    edge_dst: Arc<[usize]>,
    features: Tensor,
    labels: Tensor,
}

impl GraphBatch {
    pub fn new(graphs: &[&Graph]) -> Result<Self> {
        let Some(first) = graphs.first() else {
            return Err(Error::Degenerate("empty graph batch"));
        };
        let d = first.feature_dim();
        let mut node_offsets = vec![0];
        let mut edge_offsets = vec![0];
        let (mut src, mut dst) = (Vec::new(), Vec::new());
        for g in graphs {
            if g.feature_dim() != d {
                return Err(Error::Shape {
                    op: "graph batch features",
                    left: [g.num_nodes(), g.feature_dim()],
                    right: [0, d],
                });
            }
            let base = *node_offsets.last().unwrap();
            for &(u, v) in g.edges() {
                src.push(base + u);
                dst.push(base + v);
            }
            node_offsets.push(base + g.num_nodes());
            edge_offsets.push(src.len());
        }
        let n = *node_offsets.last().unwrap();
        let num_edges = src.len();

        let mut entries: Vec<((usize, usize), usize)> = Vec::with_capacity(2 * num_edges + n);
        for e in 0..num_edges {
            entries.push(((src[e], dst[e]), e));
            entries.push(((dst[e], src[e]), e));
        }
        for i in 0..n {
            entries.push(((i, i), num_edges));
        }
        entries.sort_unstable();
        let entry_edge: Arc<[usize]> = entries.iter().map(|&(_, e)| e).collect();
        let pattern = Arc::new(Pattern::new(n, entries.into_iter().map(|(rc, _)| rc).collect())?);

        let mut features = Vec::with_capacity(n * d);
        let mut labels = Vec::with_capacity(graphs.len());
        for g in graphs {
            features.extend_from_slice(g.features().data());
            labels.push(g.label().as_f64());
        }
        Ok(GraphBatch {
            node_offsets,
            edge_offsets,
            pattern,
            entry_edge,
            edge_src: src.into(),
            edge_dst: dst.into(),
            features: Tensor::new(n, d, features)?,
            labels: Tensor::column(labels),
        })
    }

    pub fn num_graphs(&self) -> usize {
        self.node_offsets.len() - 1
    }

    pub fn num_nodes(&self) -> usize {
        *self.node_offsets.last().unwrap()
    }

    pub fn num_edges(&self) -> usize {
        self.edge_src.len()
    }

    pub fn feature_dim(&self) -> usize {
        self.features.cols()
    }

    pub fn node_offsets(&self) -> &[usize] {
        &self.node_offsets
    }

    /// Edge range of graph `g` within the batch-wide edge order.
    pub fn edge_range(&self, g: usize) -> std::ops::Range<usize> {
        self.edge_offsets[g]..self.edge_offsets[g + 1]
    }

    pub fn edge_offsets(&self) -> &[usize] {
        &self.edge_offsets
    }

    pub fn features(&self) -> &Tensor {
        &self.features
    }

    /// `num_graphs x 1` labels.
    pub fn labels(&self) -> &Tensor {
        &self.labels
    }

    pub fn edge_src(&self) -> &Arc<[usize]> {
        &self.edge_src
    }

    pub fn edge_dst(&self) -> &Arc<[usize]> {
        &self.edge_dst
    }

    pub fn pattern(&self) -> &Arc<Pattern> {
        &self.pattern
    }

    /// Adjacency entry values (`nnz x 1`) with edge weights `z`
    /// (`num_edges x 1`) and unit self-loops. `None` means all edges weigh 1.
    pub fn adjacency_values(&self, tape: &mut Tape, z: Option<Var>) -> Result<Var> {
        match z {
            None => Ok(tape.constant(Tensor::ones(self.pattern.nnz(), 1))),
            Some(z) => {
                if tape.shape(z) != [self.num_edges(), 1] {
                    return Err(Error::Contract(format!(
                        "{:?} edge influences for {} edges",
                        tape.shape(z),
                        self.num_edges()
                    )));
                }
                let one = tape.constant(Tensor::scalar(1.0));
                let padded = tape.concat_rows(z, one)?;
                tape.gather_rows(padded, self.entry_edge.clone())
            }
        }
    }

    /// Symmetric normalization `D^-1/2 A D^-1/2` applied to entry values,
    /// with degrees taken from the weighted entries themselves.
    pub fn normalize(&self, tape: &mut Tape, values: Var) -> Result<Var> {
        let ones = tape.constant(Tensor::ones(self.num_nodes(), 1));
        let degree = tape.propagate(values, ones, &self.pattern)?;
        let inv_sqrt = tape.powf(degree, -0.5);
        let scale = tape.edge_dot(inv_sqrt, inv_sqrt, &self.pattern)?;
        tape.mul(values, scale)
    }

    /// Normalized propagation operator for edge weights `z`.
    pub fn propagation(&self, tape: &mut Tape, z: Option<Var>) -> Result<Propagation> {
        let values = self.adjacency_values(tape, z)?;
        let norm = self.normalize(tape, values)?;
        let x = tape.constant(self.features.clone());
        let aggregated_features = tape.propagate(norm, x, &self.pattern)?;
        Ok(Propagation {
            norm,
            aggregated_features,
        })
    }
}

/// Normalized adjacency values plus the first-layer aggregation `Â X`, which
/// depends only on the edge weights and can be shared across parameter
/// updates.
#[derive(Debug, Clone, Copy)]
pub struct Propagation {
    pub norm: Var,
    pub aggregated_features: Var,
}

/// GCN stack: `H ← Â H W + b` per layer with ReLU between layers (not after
/// the last one).
pub fn gcn_layers(
    tape: &mut Tape,
    batch: &GraphBatch,
    prop: Propagation,
    weights: &[Var],
) -> Result<Var> {
    let layers = weights.len() / 2;
    let mut h = prop.aggregated_features;
    for l in 0..layers {
        let aggregated = if l == 0 {
            prop.aggregated_features
        } else {
            tape.propagate(prop.norm, h, batch.pattern())?
        };
        let lin = tape.matmul(aggregated, weights[2 * l])?;
        h = tape.add_row(lin, weights[2 * l + 1])?;
        if l + 1 < layers {
            h = tape.relu(h);
        }
    }
    Ok(h)
}
