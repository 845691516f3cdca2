use rand::Rng;

use super::metrics::{auc, cosine_distance, mse, pearson};
use crate::bilevel::{evaluate, train_plain, TrainConfig};
use crate::error::{Error, Result};
use crate::explainer::{influence_many, ExplainerParams};
use crate::gnn::{predict, GnnParams};
use crate::graphdata::{Dataset, Graph, GroundTruth, SplitIndices};
use crate::seed::{rng, STREAM_CONTROL};

/// Edges kept from one graph, as indices into its canonical edge list
/// (ascending), with the smallest kept influence.
#[derive(Debug, Clone, PartialEq)]
pub struct ExplanationSubgraph {
    pub graph_index: usize,
    pub kept: Vec<usize>,
    pub threshold: f64,
}

/// Indices of the `k` most influential edges; equal influences keep the
/// earlier edge. Returned in ascending edge order.
pub fn top_k_edges(influence: &[f64], k: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..influence.len()).collect();
    order.sort_by(|&a, &b| influence[b].total_cmp(&influence[a]).then(a.cmp(&b)));
    order.truncate(k.min(influence.len()));
    order.sort_unstable();
    order
}

/// `⌈p |E|⌉` edges, at least one for a graph with edges. Products within
/// `1e-9` of an integer count as that integer.
pub fn fraction_size(p: f64, num_edges: usize) -> Result<usize> {
    if !(p > 0.0 && p <= 1.0) {
        return Err(Error::Parameter(format!("size fraction {p} outside (0, 1]")));
    }
    let k = (p * num_edges as f64 - 1e-9).ceil().max(0.0) as usize;
    Ok(k.clamp(num_edges.min(1), num_edges))
}

pub fn explanation_subgraph(graph_index: usize, influence: &[f64], k: usize) -> ExplanationSubgraph {
    let kept = top_k_edges(influence, k);
    let threshold = kept
        .iter()
        .map(|&e| influence[e])
        .fold(f64::NAN, |m, v| if m.is_nan() || v < m { v } else { m });
    ExplanationSubgraph {
        graph_index,
        kept,
        threshold,
    }
}

fn check_alignment(graphs: &[&Graph], influences: &[Vec<f64>]) -> Result<()> {
    if graphs.len() != influences.len() {
        return Err(Error::Contract(format!(
            "{} influence vectors for {} graphs",
            influences.len(),
            graphs.len()
        )));
    }
    for (g, z) in graphs.iter().zip(influences) {
        if g.num_edges() != z.len() {
            return Err(Error::Contract(format!(
                "{} influences for {} edges",
                z.len(),
                g.num_edges()
            )));
        }
    }
    Ok(())
}

/// Every graph of `dataset` reduced to its top `⌈p |E|⌉` edges.
pub fn subgraph_dataset(dataset: &Dataset, influences: &[Vec<f64>], p: f64) -> Result<Dataset> {
    let graphs: Vec<&Graph> = dataset.graphs.iter().collect();
    check_alignment(&graphs, influences)?;
    let reduced = dataset
        .graphs
        .iter()
        .zip(influences)
        .map(|(g, z)| {
            let kept = top_k_edges(z, fraction_size(p, g.num_edges())?);
            g.with_edges(kept.iter().map(|&e| g.edges()[e]).collect())
        })
        .collect::<Result<Vec<_>>>()?;
    Dataset::new(format!("{}_top{p}", dataset.name), dataset.task, reduced)
}

/// Test metric (AUC or MSE) of a fresh plain predictor trained only on the
/// explanation subgraphs.
pub fn reproducibility_from_influences(
    dataset: &Dataset,
    splits: &SplitIndices,
    influences: &[Vec<f64>],
    p: f64,
    config: &TrainConfig,
) -> Result<f64> {
    let reduced = subgraph_dataset(dataset, influences, p)?;
    let theta = train_plain(&reduced, splits, config)?;
    evaluate(&reduced, &splits.test, None, &theta)
}

pub fn reproducibility(
    phi: &ExplainerParams,
    dataset: &Dataset,
    splits: &SplitIndices,
    p: f64,
    config: &TrainConfig,
) -> Result<f64> {
    let graphs: Vec<&Graph> = dataset.graphs.iter().collect();
    let influences: Vec<Vec<f64>> = influence_many(&graphs, phi)?
        .into_iter()
        .map(|z| z.values)
        .collect();
    reproducibility_from_influences(dataset, splits, &influences, p, config)
}

/// Uniform random influences, a ranking control for explainers.
pub fn random_influences(graphs: &[&Graph], seed: u64) -> Vec<Vec<f64>> {
    let mut r = rng(seed, &[STREAM_CONTROL]);
    graphs
        .iter()
        .map(|g| (0..g.num_edges()).map(|_| r.gen::<f64>()).collect())
        .collect()
}

/// Agreement of explanations between graphs and their noisy variants:
/// `(cosine distance, Pearson correlation)` over the original edges.
/// `edge_maps[g][e]` is the index of original edge `e` in noisy graph `g`.
pub fn stability(
    z_original: &[Vec<f64>],
    z_noisy: &[Vec<f64>],
    edge_maps: &[Vec<usize>],
) -> Result<(f64, f64)> {
    if z_original.len() != z_noisy.len() || z_original.len() != edge_maps.len() {
        return Err(Error::Contract("stability inputs cover different graph counts".into()));
    }
    let mut a = Vec::new();
    let mut b = Vec::new();
    for ((zo, zn), map) in z_original.iter().zip(z_noisy).zip(edge_maps) {
        if zo.len() != map.len() {
            return Err(Error::Contract("edge map does not cover the original edges".into()));
        }
        for (&v, &m) in zo.iter().zip(map) {
            let w = *zn
                .get(m)
                .ok_or_else(|| Error::Contract(format!("edge map target {m} out of range")))?;
            a.push(v);
            b.push(w);
        }
    }
    Ok((cosine_distance(&a, &b)?, pearson(&a, &b)?))
}

/// Fraction of graphs whose hard prediction is unchanged when every edge
/// outside `kept[i]` has its influence set to zero.
pub fn sufficiency(
    dataset: &Dataset,
    indices: &[usize],
    influences: &[Vec<f64>],
    kept: &[Vec<usize>],
    theta: &GnnParams,
) -> Result<f64> {
    if !dataset.task.is_classification() {
        return Err(Error::Contract(
            "probability of sufficiency is defined for classification only".into(),
        ));
    }
    if indices.is_empty() {
        return Err(Error::Degenerate("sufficiency over zero graphs"));
    }
    let graphs: Vec<&Graph> = indices.iter().map(|&i| &dataset.graphs[i]).collect();
    check_alignment(&graphs, influences)?;
    if kept.len() != graphs.len() {
        return Err(Error::Contract("one kept-edge set per graph required".into()));
    }
    let masked: Vec<Vec<f64>> = influences
        .iter()
        .zip(kept)
        .map(|(z, k)| {
            let mut m = vec![0.0; z.len()];
            for &e in k {
                m[e] = z[e];
            }
            m
        })
        .collect();
    let full = predict(&graphs, Some(influences), theta)?;
    let part = predict(&graphs, Some(&masked), theta)?;
    let same = full
        .iter()
        .zip(&part)
        .filter(|(a, b)| (**a > 0.0) == (**b > 0.0))
        .count();
    Ok(same as f64 / graphs.len() as f64)
}

/// Probability of sufficiency of the top-`k` edge explanations.
pub fn faithfulness_pos(
    dataset: &Dataset,
    indices: &[usize],
    phi: &ExplainerParams,
    theta: &GnnParams,
    k: usize,
) -> Result<f64> {
    if k == 0 {
        return Err(Error::Parameter("faithfulness needs k >= 1".into()));
    }
    let graphs: Vec<&Graph> = indices.iter().map(|&i| &dataset.graphs[i]).collect();
    if graphs.is_empty() {
        return Err(Error::Degenerate("faithfulness over zero graphs"));
    }
    let influences: Vec<Vec<f64>> = influence_many(&graphs, phi)?
        .into_iter()
        .map(|z| z.values)
        .collect();
    let kept: Vec<Vec<usize>> = influences.iter().map(|z| top_k_edges(z, k)).collect();
    sufficiency(dataset, indices, &influences, &kept, theta)
}

/// Mean precision of the top-`|GT|` edges against the ground truth, over
/// graphs with a nonempty ground truth.
pub fn explanation_overlap(graphs: &[&Graph], influences: &[Vec<f64>], truth: &GroundTruth) -> Result<f64> {
    check_alignment(graphs, influences)?;
    if truth.len() != graphs.len() {
        return Err(Error::Contract(format!(
            "ground truth covers {} graphs, expected {}",
            truth.len(),
            graphs.len()
        )));
    }
    let mut total = 0.0;
    let mut count = 0usize;
    for ((g, z), gt) in graphs.iter().zip(influences).zip(truth) {
        if gt.is_empty() {
            continue;
        }
        let mut wanted = vec![false; g.num_edges()];
        for &(u, v) in gt {
            let e = g
                .edge_index(u, v)
                .ok_or_else(|| Error::Contract(format!("ground-truth edge ({u}, {v}) is not in the graph")))?;
            wanted[e] = true;
        }
        let top = top_k_edges(z, gt.len());
        let hits = top.iter().filter(|&&e| wanted[e]).count();
        total += hits as f64 / gt.len() as f64;
        count += 1;
    }
    if count == 0 {
        return Err(Error::Contract("no graph carries a ground-truth explanation".into()));
    }
    Ok(total / count as f64)
}

/// AUC or MSE of raw predictions against labels, by task.
pub fn task_metric(dataset: &Dataset, preds: &[f64], labels: &[f64]) -> Result<f64> {
    if dataset.task.is_classification() {
        auc(preds, labels)
    } else {
        mse(preds, labels)
    }
}
