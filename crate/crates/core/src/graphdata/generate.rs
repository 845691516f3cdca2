use std::collections::HashSet;

use rand::seq::{index, SliceRandom};
use rand::Rng;
use rand_distr::StandardNormal;

use super::graph::{Dataset, Graph, GroundTruth, Label, Task};
use crate::autodiff::Tensor;
use crate::error::{Error, Result};
use crate::seed::{rng, STREAM_GENERATE, STREAM_NOISE};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FeatureKind {
    /// i.i.d. standard normal entries.
    Gaussian,
    /// One-hot node degree, clamped to the last column.
    DegreeOneHot,
    /// All ones.
    Constant,
}

impl std::str::FromStr for FeatureKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "gaussian" => Ok(FeatureKind::Gaussian),
            "degree" => Ok(FeatureKind::DegreeOneHot),
            "constant" => Ok(FeatureKind::Constant),
            other => Err(Error::Parameter(format!("unknown feature kind {other:?}"))),
        }
    }
}

impl std::fmt::Display for FeatureKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            FeatureKind::Gaussian => "gaussian",
            FeatureKind::DegreeOneHot => "degree",
            FeatureKind::Constant => "constant",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PlantedCliqueParams {
    pub num_graphs: usize,
    pub num_nodes: usize,
    pub edge_prob: f64,
    pub clique_size: usize,
    pub feature_dim: usize,
    pub features: FeatureKind,
    pub seed: u64,
}

impl Default for PlantedCliqueParams {
    fn default() -> Self {
        PlantedCliqueParams {
            num_graphs: 100,
            num_nodes: 100,
            edge_prob: 0.1,
            clique_size: 8,
            feature_dim: 64,
            features: FeatureKind::DegreeOneHot,
            seed: 0,
        }
    }
}

fn erdos_renyi(n: usize, p: f64, rng: &mut impl Rng) -> Vec<(usize, usize)> {
    let mut edges = Vec::new();
    for u in 0..n {
        for v in u + 1..n {
            if rng.gen_bool(p) {
                edges.push((u, v));
            }
        }
    }
    edges
}

fn node_features(
    kind: FeatureKind,
    n: usize,
    dim: usize,
    edges: &[(usize, usize)],
    rng: &mut impl Rng,
) -> Tensor {
    match kind {
        FeatureKind::Gaussian => {
            let data = (0..n * dim).map(|_| rng.sample(StandardNormal)).collect();
            Tensor::from_vec(n, dim, data)
        }
        FeatureKind::DegreeOneHot => {
            let mut deg = vec![0usize; n];
            for &(u, v) in edges {
                deg[u] += 1;
                deg[v] += 1;
            }
            let mut t = Tensor::zeros(n, dim);
            if dim > 0 {
                for (i, d) in deg.into_iter().enumerate() {
                    t.set(i, d.min(dim - 1), 1.0);
                }
            }
            t
        }
        FeatureKind::Constant => Tensor::ones(n, dim),
    }
}

/// Erdős–Rényi graphs, half of which (label 1) receive a planted clique.
///
/// Label-0 graphs are checked to contain no clique of the planted size and
/// are resampled if they do, so the planted clique is always the unique
/// explanation of label 1.
pub fn generate_planted_clique(params: &PlantedCliqueParams) -> Result<(Dataset, GroundTruth)> {
    let &PlantedCliqueParams {
        num_graphs,
        num_nodes: n,
        edge_prob: p,
        clique_size: k,
        feature_dim,
        features,
        seed,
    } = params;
    if k > n {
        return Err(Error::Parameter(format!(
            "clique size {k} exceeds node count {n}"
        )));
    }
    if !(0.0..=1.0).contains(&p) {
        return Err(Error::Parameter(format!("edge probability {p} outside [0, 1]")));
    }
    let mut labels: Vec<u64> = (0..num_graphs).map(|i| (i < num_graphs / 2) as u64).collect();
    labels.shuffle(&mut rng(seed, &[STREAM_GENERATE, u64::MAX]));

    let mut graphs = Vec::with_capacity(num_graphs);
    let mut truth = Vec::with_capacity(num_graphs);
    for (i, &label) in labels.iter().enumerate() {
        let mut r = rng(seed, &[STREAM_GENERATE, i as u64]);
        let (edges, gt) = if label == 1 {
            let mut set: HashSet<(usize, usize)> = erdos_renyi(n, p, &mut r).into_iter().collect();
            let mut members = index::sample(&mut r, n, k).into_vec();
            members.sort_unstable();
            let mut gt = Vec::with_capacity(k * (k.saturating_sub(1)) / 2);
            for a in 0..members.len() {
                for b in a + 1..members.len() {
                    let e = (members[a], members[b]);
                    set.insert(e);
                    gt.push(e);
                }
            }
            let mut edges: Vec<_> = set.into_iter().collect();
            edges.sort_unstable();
            (edges, gt)
        } else {
            loop {
                let edges = erdos_renyi(n, p, &mut r);
                if k < 2 || max_clique_size(n, &edges) < k {
                    break (edges, Vec::new());
                }
            }
        };
        let feats = node_features(features, n, feature_dim, &edges, &mut r);
        graphs.push(Graph::new(n, edges, feats, Label::Class(label))?);
        truth.push(gt);
    }
    let dataset = Dataset::new(
        format!("planted_clique_n{n}_k{k}"),
        Task::Classification { num_classes: 2 },
        graphs,
    )?;
    Ok((dataset, truth))
}

/// Size of the largest clique (Bron–Kerbosch with pivoting).
pub fn max_clique_size(n: usize, edges: &[(usize, usize)]) -> usize {
    let words = n.div_ceil(64).max(1);
    let mut adj = vec![vec![0u64; words]; n];
    for &(u, v) in edges {
        adj[u][v / 64] |= 1 << (v % 64);
        adj[v][u / 64] |= 1 << (u % 64);
    }
    let mut all = vec![0u64; words];
    for i in 0..n {
        all[i / 64] |= 1 << (i % 64);
    }
    let mut best = 0;
    expand(&adj, 0, all, vec![0u64; words], &mut best);
    best
}

fn count(s: &[u64]) -> usize {
    s.iter().map(|w| w.count_ones() as usize).sum()
}

fn members(s: &[u64]) -> impl Iterator<Item = usize> + '_ {
    s.iter().enumerate().flat_map(|(w, &bits)| {
        (0..64).filter(move |b| bits >> b & 1 == 1).map(move |b| w * 64 + b)
    })
}

fn expand(adj: &[Vec<u64>], size: usize, cand: Vec<u64>, excl: Vec<u64>, best: &mut usize) {
    let nc = count(&cand);
    if nc == 0 {
        if count(&excl) == 0 {
            *best = (*best).max(size);
        }
        return;
    }
    if size + nc <= *best {
        return;
    }
    let pivot = members(&cand)
        .chain(members(&excl))
        .max_by_key(|&u| {
            cand.iter()
                .zip(&adj[u])
                .map(|(c, a)| (c & a).count_ones())
                .sum::<u32>()
        })
        .unwrap();
    let pick: Vec<usize> = members(&cand)
        .filter(|&v| adj[pivot][v / 64] >> (v % 64) & 1 == 0)
        .collect();
    let (mut cand, mut excl) = (cand, excl);
    for v in pick {
        let nc: Vec<u64> = cand.iter().zip(&adj[v]).map(|(c, a)| c & a).collect();
        let ne: Vec<u64> = excl.iter().zip(&adj[v]).map(|(c, a)| c & a).collect();
        expand(adj, size + 1, nc, ne, best);
        cand[v / 64] &= !(1 << (v % 64));
        excl[v / 64] |= 1 << (v % 64);
    }
}

/// Adds exactly `extra` new uniformly random edges to every graph.
pub fn add_noise_edges(dataset: &Dataset, extra: usize, seed: u64) -> Result<Dataset> {
    let mut graphs = Vec::with_capacity(dataset.len());
    for (i, g) in dataset.graphs.iter().enumerate() {
        let n = g.num_nodes();
        let free = n * n.saturating_sub(1) / 2 - g.num_edges();
        if extra > free {
            return Err(Error::Parameter(format!(
                "graph {i} has room for {free} new edges, {extra} requested"
            )));
        }
        if extra == 0 {
            graphs.push(g.clone());
            continue;
        }
        let mut r = rng(seed, &[STREAM_NOISE, i as u64]);
        let mut existing: HashSet<(usize, usize)> = g.edges().iter().copied().collect();
        let mut edges = g.edges().to_vec();
        while edges.len() < g.num_edges() + extra {
            let u = r.gen_range(0..n);
            let v = r.gen_range(0..n);
            if u == v {
                continue;
            }
            let e = (u.min(v), u.max(v));
            if existing.insert(e) {
                edges.push(e);
            }
        }
        graphs.push(g.with_edges(edges)?);
    }
    Dataset::new(
        format!("{}_noisy{extra}", dataset.name),
        dataset.task,
        graphs,
    )
}

/// For each edge of `original`, its index in `noisy`'s edge list.
pub fn edge_alignment(original: &Graph, noisy: &Graph) -> Result<Vec<usize>> {
    original
        .edges()
        .iter()
        .map(|&(u, v)| {
            noisy.edge_index(u, v).ok_or_else(|| {
                Error::Contract(format!("edge ({u}, {v}) missing from the noisy graph"))
            })
        })
        .collect()
}
