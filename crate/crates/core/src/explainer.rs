//! Edge-influence explainer: a plain GCN encodes nodes, each edge gets the
//! order-free representation `[max(h_u, h_v); min(h_u, h_v)]`, and a
//! sigmoid-activated linear layer maps it to an influence in `(0, 1)`.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::gnn::{gcn_layers, glorot, Architecture, GraphBatch, ParamSet};
use crate::graphdata::{Dataset, Graph};
use crate::seed::{rng, STREAM_EXPLAINER_INIT};

/// Explainer parameters: `conv{l}.weight`/`conv{l}.bias` per layer, then
/// `edge.weight` (`2 hidden x 1`) and `edge.bias`.
#[derive(Debug, Clone, PartialEq)]
pub struct ExplainerParams(ParamSet);

impl ExplainerParams {
    pub fn init(arch: Architecture, input_dim: usize, seed: u64) -> Self {
        let mut r = rng(seed, &[STREAM_EXPLAINER_INIT]);
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
        names.push("edge.weight".into());
        tensors.push(glorot(2 * width, 1, &mut r));
        names.push("edge.bias".into());
        tensors.push(Tensor::zeros(1, 1));
        ExplainerParams(ParamSet::new(names, tensors).unwrap())
    }

    pub fn from_params(set: ParamSet) -> Result<Self> {
        let t = set.tensors();
        if t.len() < 4 || !t.len().is_multiple_of(2) {
            return Err(Error::Contract(format!(
                "explainer needs conv layers plus an edge scorer, got {} tensors",
                t.len()
            )));
        }
        let embed = t[t.len() - 4].cols();
        if t[t.len() - 2].shape() != [2 * embed, 1] {
            return Err(Error::Shape {
                op: "edge scorer must read twice the embedding width",
                left: t[t.len() - 4].shape(),
                right: t[t.len() - 2].shape(),
            });
        }
        Ok(ExplainerParams(set))
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
}

/// Order-free edge representation `[max(a, b); min(a, b)]`, row by row.
pub fn edge_representation(tape: &mut Tape, a: Var, b: Var) -> Result<Var> {
    let hi = tape.maximum(a, b)?;
    let lo = tape.minimum(a, b)?;
    tape.concat_cols(hi, lo)
}

/// Edge influences for every edge of the batch (`num_edges x 1`, batch edge
/// order), differentiable with respect to `phi`.
pub fn influence_batch(tape: &mut Tape, batch: &GraphBatch, phi: &[Var]) -> Result<Var> {
    let [rows, _] = tape.shape(phi[0]);
    if rows != batch.feature_dim() {
        return Err(Error::Shape {
            op: "explainer input",
            left: [batch.num_nodes(), batch.feature_dim()],
            right: tape.shape(phi[0]),
        });
    }
    let (conv, scorer) = phi.split_at(phi.len() - 2);
    let prop = batch.propagation(tape, None)?;
    let h = gcn_layers(tape, batch, prop, conv)?;
    let hu = tape.gather_rows(h, batch.edge_src().clone())?;
    let hv = tape.gather_rows(h, batch.edge_dst().clone())?;
    let rep = edge_representation(tape, hu, hv)?;
    let lin = tape.matmul(rep, scorer[0])?;
    let logits = tape.add_row(lin, scorer[1])?;
    Ok(tape.sigmoid(logits))
}

/// Influences of one graph, aligned with its canonical edge list.
#[derive(Debug, Clone, PartialEq)]
pub struct EdgeInfluence {
    pub edges: Vec<(usize, usize)>,
    pub values: Vec<f64>,
}

pub fn influence(graph: &Graph, phi: &ExplainerParams) -> Result<EdgeInfluence> {
    Ok(influence_many(&[graph], phi)?.pop().unwrap())
}

pub fn influence_many(graphs: &[&Graph], phi: &ExplainerParams) -> Result<Vec<EdgeInfluence>> {
    let batch = GraphBatch::new(graphs)?;
    let mut tape = Tape::new();
    let vars = phi.params().on_tape(&mut tape, false);
    let z = influence_batch(&mut tape, &batch, &vars)?;
    let all = tape.value(z).data();
    Ok(graphs
        .iter()
        .enumerate()
        .map(|(i, g)| EdgeInfluence {
            edges: g.edges().to_vec(),
            values: all[batch.edge_range(i)].to_vec(),
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExplanationRecord {
    pub graph_index: usize,
    pub edges: Vec<[usize; 2]>,
    pub influence: Vec<f64>,
}

/// Writes one JSON record per graph.
pub fn save_explanations(
    path: impl AsRef<Path>,
    dataset: &Dataset,
    indices: &[usize],
    phi: &ExplainerParams,
) -> Result<()> {
    let path = path.as_ref();
    let graphs: Vec<&Graph> = indices.iter().map(|&i| &dataset.graphs[i]).collect();
    let infl = if graphs.is_empty() {
        Vec::new()
    } else {
        influence_many(&graphs, phi)?
    };
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for (&gi, inf) in indices.iter().zip(infl) {
        let rec = ExplanationRecord {
            graph_index: gi,
            edges: inf.edges.iter().map(|&(u, v)| [u, v]).collect(),
            influence: inf.values,
        };
        writeln!(w, "{}", serde_json::to_string(&rec).unwrap()).map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn load_explanations(path: impl AsRef<Path>) -> Result<Vec<ExplanationRecord>> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: ExplanationRecord = serde_json::from_str(&line).map_err(|e| Error::Parse {
            line: i + 1,
            message: e.to_string(),
        })?;
        if rec.edges.len() != rec.influence.len() {
            return Err(Error::Schema {
                line: i + 1,
                message: "edges and influence differ in length".into(),
            });
        }
        out.push(rec);
    }
    Ok(out)
}
