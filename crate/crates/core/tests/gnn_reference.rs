mod common;

use common::{central_differences, dense_forward, max_rel_err, random_graph, rng};
use proptest::prelude::*;
use rage::autodiff::{bce_with_logits, Tape, Tensor};
use rage::gnn::{build_weighted_adjacency, forward, forward_batch, predict, Architecture, GnnParams, GraphBatch};
use rage::graphdata::{Graph, Label};
use rand::seq::SliceRandom;
use rand::Rng;

const D: usize = 5;

fn params(seed: u64) -> GnnParams {
    let mut p = GnnParams::reinitialize(Architecture::default(), D, seed);
    // nonzero biases so they take part in every comparison
    let mut r = rng(seed ^ 0xb1a5);
    for (name, t) in p.params().names().to_vec().iter().zip(p.params_mut().tensors_mut()) {
        if name.ends_with("bias") {
            for x in t.data_mut() {
                *x = r.gen_range(-0.5..0.5);
            }
        }
    }
    p
}

fn graphs(seed: u64, count: usize) -> Vec<Graph> {
    let mut r = rng(seed);
    (0..count)
        .map(|_| {
            let n = r.gen_range(1..30);
            let extra = r.gen_range(0..2 * n);
            let label = Label::Class(r.gen_range(0..2));
            random_graph(&mut r, n, extra, D, label)
        })
        .collect()
}

fn same_bits(a: &[f64], b: &[f64]) -> bool {
    a.len() == b.len() && a.iter().zip(b).all(|(x, y)| x.to_bits() == y.to_bits())
}

#[test]
fn unit_influence_reduces_to_dense_gcn_bit_for_bit() {
    let gs = graphs(11, 50);
    let p = params(3);
    for (i, g) in gs.iter().enumerate() {
        let ones = vec![1.0; g.num_edges()];
        let ours = forward(g, &ones, &p).unwrap();
        let reference = dense_forward(g, &ones, &p);
        let flat: Vec<f64> = reference.node_embeddings.concat();
        assert!(same_bits(ours.node_embeddings.data(), &flat), "graph {i}: node embeddings differ");
        assert!(same_bits(ours.graph_embedding.data(), &reference.graph_embedding), "graph {i}: pooled");
        assert_eq!(ours.prediction.to_bits(), reference.prediction.to_bits(), "graph {i}: prediction");
    }
    let refs: Vec<&Graph> = gs.iter().collect();
    let batched = predict(&refs, None, &p).unwrap();
    let expected: Vec<f64> = gs
        .iter()
        .map(|g| dense_forward(g, &vec![1.0; g.num_edges()], &p).prediction)
        .collect();
    assert!(same_bits(&batched, &expected), "batched predictions differ");
}

#[test]
fn weighted_forward_matches_dense_reference() {
    let mut r = rng(5);
    let p = params(9);
    for g in graphs(12, 30) {
        let z: Vec<f64> = (0..g.num_edges()).map(|_| r.gen_range(0.01..1.0)).collect();
        let ours = forward(&g, &z, &p).unwrap();
        let reference = dense_forward(&g, &z, &p);
        assert!(same_bits(ours.node_embeddings.data(), &reference.node_embeddings.concat()));
        assert_eq!(ours.prediction.to_bits(), reference.prediction.to_bits());
    }
}

#[test]
fn weighted_adjacency_examples() {
    let tri = Graph::new(3, vec![(0, 1), (1, 2), (0, 2)], Tensor::zeros(3, 1), Label::Class(0)).unwrap();
    let a = build_weighted_adjacency(&tri, &[0.5, 0.5, 0.5]).unwrap().0;
    for i in 0..3 {
        for j in 0..3 {
            assert_eq!(a.get(i, j), if i == j { 1.0 } else { 0.5 });
        }
    }
    assert!(build_weighted_adjacency(&tri, &[1.0]).is_err());
}

fn node_embeddings(g: &Graph, z: &[f64], p: &GnnParams) -> Tensor {
    forward(g, z, p).unwrap().node_embeddings
}

#[test]
fn node_embeddings_are_permutation_equivariant() {
    let mut r = rng(21);
    let p = params(4);
    for _ in 0..30 {
        let extra = r.gen_range(0..10);
        let g = random_graph(&mut r, 6, extra, D, Label::Class(1));
        let mut perm: Vec<usize> = (0..6).collect();
        perm.shuffle(&mut r);
        let z: Vec<f64> = (0..g.num_edges()).map(|_| r.gen_range(0.0..1.0)).collect();
        let pg = g.permuted(&perm).unwrap();
        let mut pz = vec![0.0; pg.num_edges()];
        for (&(u, v), &w) in g.edges().iter().zip(&z) {
            pz[pg.edge_index(perm[u], perm[v]).unwrap()] = w;
        }
        let h = node_embeddings(&g, &z, &p);
        let ph = node_embeddings(&pg, &pz, &p);
        for (i, &to) in perm.iter().enumerate() {
            for c in 0..h.cols() {
                assert!((h.get(i, c) - ph.get(to, c)).abs() < 1e-12);
            }
        }
    }
}

/// BCE of one graph as a function of its edge influences and the predictor.
fn graph_loss(g: &Graph, z: &Tensor, theta: &[Tensor]) -> f64 {
    let batch = GraphBatch::new(&[g]).unwrap();
    let mut t = Tape::new();
    let zv = t.constant(z.clone());
    let prop = batch.propagation(&mut t, Some(zv)).unwrap();
    let th: Vec<_> = theta.iter().map(|x| t.constant(x.clone())).collect();
    let enc = forward_batch(&mut t, &batch, prop, &th).unwrap();
    let y = t.constant(batch.labels().clone());
    let loss = bce_with_logits(&mut t, enc.predictions, y).unwrap();
    t.value(loss).item()
}

fn analytic_grads(g: &Graph, z: &Tensor, theta: &[Tensor]) -> Vec<Tensor> {
    let batch = GraphBatch::new(&[g]).unwrap();
    let mut t = Tape::new();
    let zv = t.leaf(z.clone());
    let prop = batch.propagation(&mut t, Some(zv)).unwrap();
    let th: Vec<_> = theta.iter().map(|x| t.leaf(x.clone())).collect();
    let enc = forward_batch(&mut t, &batch, prop, &th).unwrap();
    let y = t.constant(batch.labels().clone());
    let loss = bce_with_logits(&mut t, enc.predictions, y).unwrap();
    let mut wrt = vec![zv];
    wrt.extend(th);
    t.gradients(loss, &wrt).unwrap()
}

#[test]
fn influence_and_weight_gradients_match_finite_differences() {
    let mut r = rng(8);
    for trial in 0..5 {
        let g = random_graph(&mut r, 5, 3, D, Label::Class(trial % 2));
        let z = common::random_tensor(&mut r, g.num_edges(), 1, 0.1, 0.9);
        let theta = params(100 + trial).params().tensors().to_vec();
        let analytic = analytic_grads(&g, &z, &theta);
        let mut inputs = vec![z.clone()];
        inputs.extend(theta.iter().cloned());
        let numeric = central_differences(&inputs, 1e-5, |x| graph_loss(&g, &x[0], &x[1..]));
        let z_err = max_rel_err(&analytic[..1], &numeric[..1], 1e-7);
        let theta_err = max_rel_err(&analytic[1..], &numeric[1..], 1e-7);
        assert!(z_err < 1e-4, "trial {trial}: dL/dz rel err {z_err}");
        assert!(theta_err < 1e-4, "trial {trial}: dL/dθ rel err {theta_err}");
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn zero_influence_matches_the_edgeless_graph(seed in any::<u64>()) {
        let mut r = rng(seed);
        let n = r.gen_range(1..12);
        let extra = r.gen_range(0..12);
        let g = random_graph(&mut r, n, extra, D, Label::Class(0));
        let empty = g.with_edges(Vec::new()).unwrap();
        let p = params(seed);
        let masked = forward(&g, &vec![0.0; g.num_edges()], &p).unwrap();
        let bare = forward(&empty, &[], &p).unwrap();
        prop_assert_eq!(masked.prediction.to_bits(), bare.prediction.to_bits());
    }

    #[test]
    fn weighted_adjacency_is_symmetric_and_supported_on_edges(seed in any::<u64>()) {
        let mut r = rng(seed);
        let n = r.gen_range(2..10);
        let extra = r.gen_range(0..10);
        let g = random_graph(&mut r, n, extra, D, Label::Class(0));
        let z: Vec<f64> = (0..g.num_edges()).map(|_| r.gen_range(0.0..1.0)).collect();
        let a = build_weighted_adjacency(&g, &z).unwrap().0;
        for i in 0..n {
            prop_assert_eq!(a.get(i, i), 1.0);
            for j in 0..n {
                prop_assert_eq!(a.get(i, j), a.get(j, i));
                if i != j && !g.has_edge(i, j) {
                    prop_assert_eq!(a.get(i, j), 0.0);
                }
                prop_assert!((0.0..=1.0).contains(&a.get(i, j)));
            }
        }
    }
}
