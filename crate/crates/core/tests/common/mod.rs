#![allow(dead_code)]
pub mod oracle;
pub mod hyper;

use rage::autodiff::Tensor;
use rage::gnn::GnnParams;
use rage::graphdata::{Dataset, Graph, Label, Task};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_tensor(r: &mut ChaCha8Rng, rows: usize, cols: usize, lo: f64, hi: f64) -> Tensor {
    let data = (0..rows * cols).map(|_| r.gen_range(lo..hi)).collect();
    Tensor::new(rows, cols, data).unwrap()
}

/// Connected-ish random graph: a random spanning path plus extra edges.
pub fn random_graph(r: &mut ChaCha8Rng, n: usize, extra: usize, d: usize, label: Label) -> Graph {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(r);
    let mut edges: Vec<(usize, usize)> = order.windows(2).map(|w| (w[0].min(w[1]), w[0].max(w[1]))).collect();
    let max_edges = n * (n - 1) / 2;
    let target = (edges.len() + extra).min(max_edges);
    while edges.len() < target {
        let u = r.gen_range(0..n);
        let v = r.gen_range(0..n);
        if u == v {
            continue;
        }
        let e = (u.min(v), u.max(v));
        if !edges.contains(&e) {
            edges.push(e);
        }
    }
    let feats = random_tensor(r, n, d, -1.0, 1.0);
    Graph::new(n, edges, feats, label).unwrap()
}

pub fn random_dataset(seed: u64, count: usize, n: usize, d: usize) -> Dataset {
    let mut r = rng(seed);
    let graphs = (0..count)
        .map(|i| {
            let extra = r.gen_range(0..n);
            random_graph(&mut r, n, extra, d, Label::Class((i % 2) as u64))
        })
        .collect();
    Dataset::new("random", Task::Classification { num_classes: 2 }, graphs).unwrap()
}

// ---- dense reference predictor ----

fn dense_matmul(a: &[Vec<f64>], b: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let (m, k, n) = (a.len(), b.len(), b.first().map_or(0, Vec::len));
    let mut out = vec![vec![0.0; n]; m];
    for i in 0..m {
        for p in 0..k {
            for j in 0..n {
                out[i][j] += a[i][p] * b[p][j];
            }
        }
    }
    out
}

fn rows_of(t: &Tensor) -> Vec<Vec<f64>> {
    (0..t.rows()).map(|r| t.row_slice(r).to_vec()).collect()
}

/// Reference output of the predictor, computed with dense matrices.
pub struct DenseOutput {
    pub node_embeddings: Vec<Vec<f64>>,
    pub graph_embedding: Vec<f64>,
    pub prediction: f64,
}

/// Plain normalized GCN on `A_Z + I` built directly from the edge list:
/// `Â = D^-1/2 (A_Z + I) D^-1/2`, `H ← Â H W + b`, ReLU between layers,
/// column max pool and a linear head.
pub fn dense_forward(graph: &Graph, z: &[f64], params: &GnnParams) -> DenseOutput {
    let n = graph.num_nodes();
    let mut a = vec![vec![0.0; n]; n];
    for (i, row) in a.iter_mut().enumerate() {
        row[i] = 1.0;
    }
    for (&(u, v), &w) in graph.edges().iter().zip(z) {
        a[u][v] = w;
        a[v][u] = w;
    }
    let ones = vec![vec![1.0]; n];
    let deg = dense_matmul(&a, &ones);
    let dinv: Vec<f64> = deg.iter().map(|d| d[0].powf(-0.5)).collect();
    let mut a_hat = a.clone();
    for i in 0..n {
        for j in 0..n {
            a_hat[i][j] = a[i][j] * (dinv[i] * dinv[j]);
        }
    }
    let t = params.params().tensors();
    let layers = t.len() / 2 - 1;
    let mut h = rows_of(graph.features());
    for l in 0..layers {
        let agg = dense_matmul(&a_hat, &h);
        let mut lin = dense_matmul(&agg, &rows_of(&t[2 * l]));
        let bias = t[2 * l + 1].row_slice(0);
        for row in lin.iter_mut() {
            for (x, b) in row.iter_mut().zip(bias) {
                *x += b;
                if l + 1 < layers && (x.is_nan() || *x <= 0.0) {
                    *x = 0.0;
                }
            }
        }
        h = lin;
    }
    let width = h[0].len();
    let mut pooled = h[0].clone();
    for row in &h[1..] {
        for c in 0..width {
            if row[c] > pooled[c] {
                pooled[c] = row[c];
            }
        }
    }
    let head = dense_matmul(&[pooled.clone()], &rows_of(&t[layers * 2]));
    let prediction = head[0][0] + t[layers * 2 + 1].get(0, 0);
    DenseOutput {
        node_embeddings: h,
        graph_embedding: pooled,
        prediction,
    }
}

// ---- finite differences ----

/// `|a - b| / max(|a|, |b|)`, or 0 when both are below `floor` in magnitude.
pub fn rel_err(a: f64, b: f64, floor: f64) -> f64 {
    let scale = a.abs().max(b.abs());
    if scale < floor {
        0.0
    } else {
        (a - b).abs() / scale
    }
}

/// Central differences of `f` with respect to every entry of every input.
pub fn central_differences(inputs: &[Tensor], eps: f64, mut f: impl FnMut(&[Tensor]) -> f64) -> Vec<Tensor> {
    let mut work = inputs.to_vec();
    let mut out = Vec::with_capacity(inputs.len());
    for t in 0..inputs.len() {
        let mut g = Tensor::zeros(inputs[t].rows(), inputs[t].cols());
        for k in 0..inputs[t].len() {
            let x = inputs[t].data()[k];
            work[t].data_mut()[k] = x + eps;
            let up = f(&work);
            work[t].data_mut()[k] = x - eps;
            let down = f(&work);
            work[t].data_mut()[k] = x;
            g.data_mut()[k] = (up - down) / (2.0 * eps);
        }
        out.push(g);
    }
    out
}

/// Largest entry-wise relative error between two gradient lists.
pub fn max_rel_err(a: &[Tensor], b: &[Tensor], floor: f64) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter()
        .zip(b)
        .flat_map(|(x, y)| {
            assert_eq!(x.shape(), y.shape());
            x.data()
                .iter()
                .zip(y.data())
                .map(|(&p, &q)| rel_err(p, q, floor))
                .collect::<Vec<_>>()
        })
        .fold(0.0, f64::max)
}
