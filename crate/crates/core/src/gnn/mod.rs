//! Influence-weighted GCN predictor: three propagation layers over
//! `A_Z = Z ⊙ A` (plus unit self-loops), max-pool readout and a linear head.

mod batch;
mod params;

pub use batch::{gcn_layers, GraphBatch, Propagation};
pub use params::ParamSet;
pub(crate) use params::glorot;

use crate::autodiff::{Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::graphdata::Graph;
use crate::seed::{rng, STREAM_GNN_INIT};

/// Widths shared by the predictor and the explainer encoders.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Architecture {
    pub hidden_dim: usize,
    pub num_layers: usize,
}

impl Default for Architecture {
    fn default() -> Self {
        Architecture {
            hidden_dim: 20,
            num_layers: 3,
        }
    }
}

/// Predictor parameters: `conv{l}.weight`/`conv{l}.bias` per layer, then
/// `head.weight` (`hidden x 1`) and `head.bias`.
#[derive(Debug, Clone, PartialEq)]
pub struct GnnParams(ParamSet);

impl GnnParams {
    /// Fresh Glorot-uniform weights and zero biases, fully determined by
    /// `seed`.
    pub fn reinitialize(arch: Architecture, input_dim: usize, seed: u64) -> Self {
        let mut r = rng(seed, &[STREAM_GNN_INIT]);
        let mut names = Vec::new();
        let mut tensors = Vec::new();
        let mut width = input_dim;
        for l in 0..arch.num_layers {
            names.push(format!("conv{l}.weight"));
            tensors.push(glorot(width, arch.hidden_dim, &mut r));
            names.push(format!("conv{l}.bias"));
            tensors.push(Tensor::zeros(1, arch.hidden_dim));
            width = arch.hidden_dim;
        }
        names.push("head.weight".into());
        tensors.push(glorot(width, 1, &mut r));
        names.push("head.bias".into());
        tensors.push(Tensor::zeros(1, 1));
        GnnParams(ParamSet::new(names, tensors).unwrap())
    }

    pub fn from_params(set: ParamSet) -> Result<Self> {
        let t = set.tensors();
        if t.len() < 4 || !t.len().is_multiple_of(2) {
            return Err(Error::Contract(format!(
                "predictor needs conv layers plus a head, got {} tensors",
                t.len()
            )));
        }
        for pair in t.chunks(2) {
            if pair[1].shape() != [1, pair[0].cols()] {
                return Err(Error::Shape {
                    op: "predictor bias",
                    left: pair[0].shape(),
                    right: pair[1].shape(),
                });
            }
        }
        for w in t.chunks(2).collect::<Vec<_>>().windows(2) {
            if w[0][0].cols() != w[1][0].rows() {
                return Err(Error::Shape {
                    op: "predictor layer chain",
                    left: w[0][0].shape(),
                    right: w[1][0].shape(),
                });
            }
        }
        if t[t.len() - 2].cols() != 1 {
            return Err(Error::Contract("predictor head must have one output".into()));
        }
        Ok(GnnParams(set))
    }

    pub fn params(&self) -> &ParamSet {
        &self.0
    }

    pub fn params_mut(&mut self) -> &mut ParamSet {
        &mut self.0
    }

    pub fn input_dim(&self) -> usize {
        self.0.tensors()[0].rows()
    }

    pub fn num_layers(&self) -> usize {
        self.0.tensors().len() / 2 - 1
    }
}

/// Dense `n x n` influence-weighted adjacency with unit diagonal.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightedAdjacency(pub Tensor);

/// `A_Z[u][v] = A_Z[v][u] = z_uv` on every edge, 1 on the diagonal, 0
/// elsewhere. `z` follows the graph's canonical edge order.
pub fn build_weighted_adjacency(graph: &Graph, z: &[f64]) -> Result<WeightedAdjacency> {
    if z.len() != graph.num_edges() {
        return Err(Error::Contract(format!(
            "{} edge influences for {} edges",
            z.len(),
            graph.num_edges()
        )));
    }
    let n = graph.num_nodes();
    let mut a = Tensor::identity(n);
    for (&(u, v), &w) in graph.edges().iter().zip(z) {
        a.set(u, v, w);
        a.set(v, u, w);
    }
    Ok(WeightedAdjacency(a))
}

/// Tape nodes produced by one predictor pass over a batch.
#[derive(Debug, Clone, Copy)]
pub struct Encoded {
    /// `total_nodes x hidden`
    pub node_embeddings: Var,
    /// `num_graphs x hidden`
    pub graph_embeddings: Var,
    /// `num_graphs x 1`: logits for classification, values for regression.
    pub predictions: Var,
}

/// Predictor pass with a precomputed propagation operator.
pub fn forward_batch(
    tape: &mut Tape,
    batch: &GraphBatch,
    prop: Propagation,
    theta: &[Var],
) -> Result<Encoded> {
    if theta.len() < 4 {
        return Err(Error::Contract("predictor parameters are incomplete".into()));
    }
    let [rows, _] = tape.shape(theta[0]);
    if rows != batch.feature_dim() {
        return Err(Error::Shape {
            op: "predictor input",
            left: [batch.num_nodes(), batch.feature_dim()],
            right: tape.shape(theta[0]),
        });
    }
    let (conv, head) = theta.split_at(theta.len() - 2);
    let node_embeddings = gcn_layers(tape, batch, prop, conv)?;
    let graph_embeddings = tape.segment_max_pool(node_embeddings, batch.node_offsets())?;
    let lin = tape.matmul(graph_embeddings, head[0])?;
    let predictions = tape.add_row(lin, head[1])?;
    Ok(Encoded {
        node_embeddings,
        graph_embeddings,
        predictions,
    })
}

/// Values of a single-graph predictor pass.
#[derive(Debug, Clone, PartialEq)]
pub struct ForwardOutput {
    pub node_embeddings: Tensor,
    pub graph_embedding: Tensor,
    pub prediction: f64,
}

/// Predictor pass on one graph with edge influences `z` (canonical edge
/// order).
pub fn forward(graph: &Graph, z: &[f64], params: &GnnParams) -> Result<ForwardOutput> {
    if z.len() != graph.num_edges() {
        return Err(Error::Contract(format!(
            "{} edge influences for {} edges",
            z.len(),
            graph.num_edges()
        )));
    }
    let batch = GraphBatch::new(&[graph])?;
    let mut tape = Tape::new();
    let zv = tape.constant(Tensor::column(z.to_vec()));
    let prop = batch.propagation(&mut tape, Some(zv))?;
    let theta = params.params().on_tape(&mut tape, false);
    let enc = forward_batch(&mut tape, &batch, prop, &theta)?;
    Ok(ForwardOutput {
        node_embeddings: tape.value(enc.node_embeddings).clone(),
        graph_embedding: tape.value(enc.graph_embeddings).clone(),
        prediction: tape.value(enc.predictions).item(),
    })
}

/// Predictions for many graphs at once.
pub fn predict(
    graphs: &[&Graph],
    influences: Option<&[Vec<f64>]>,
    params: &GnnParams,
) -> Result<Vec<f64>> {
    let batch = GraphBatch::new(graphs)?;
    let mut tape = Tape::new();
    let z = match influences {
        Some(zs) => {
            let flat: Vec<f64> = zs.iter().flatten().copied().collect();
            Some(tape.constant(Tensor::column(flat)))
        }
        None => None,
    };
    let prop = batch.propagation(&mut tape, z)?;
    let theta = params.params().on_tape(&mut tape, false);
    let enc = forward_batch(&mut tape, &batch, prop, &theta)?;
    Ok(tape.value(enc.predictions).data().to_vec())
}
