//! The tiny bilevel instance used by the hypergradient oracle.

use rage::autodiff::Tensor;
use rage::bilevel::{hypergradient, outer_objective, InnerOptimizer, TrainConfig};
use rage::explainer::ExplainerParams;
use rage::gnn::{Architecture, GnnParams, GraphBatch, ParamSet};
use rage::graphdata::{Graph, Label, Task};
use rand::Rng;

use super::{central_differences, max_rel_err, random_graph, rng};

pub const ARCH: Architecture = Architecture {
    hidden_dim: 3,
    num_layers: 3,
};

pub struct Tiny {
    pub inner: GraphBatch,
    pub support: GraphBatch,
    pub phi: ExplainerParams,
    pub theta0: GnnParams,
    pub config: TrainConfig,
}

/// Two 4-node graphs with 3 features: one for the inner loop, one for the
/// support loss. All widths are 3 and T = 2.
pub fn tiny(seed: u64, optimizer: InnerOptimizer, inner_lr: f64) -> Tiny {
    let mut r = rng(seed);
    let a: Graph = random_graph(&mut r, 4, 2, 3, Label::Class(0));
    let b: Graph = random_graph(&mut r, 4, 2, 3, Label::Class(1));
    let mut phi = ExplainerParams::init(ARCH, 3, seed);
    let mut theta0 = GnnParams::reinitialize(ARCH, 3, seed + 1);
    for t in phi.params_mut().tensors_mut().iter_mut().chain(theta0.params_mut().tensors_mut()) {
        for x in t.data_mut() {
            *x += r.gen_range(-0.3..0.3);
        }
    }
    Tiny {
        inner: GraphBatch::new(&[&a]).unwrap(),
        support: GraphBatch::new(&[&b]).unwrap(),
        phi,
        theta0,
        config: TrainConfig {
            inner_steps: 2,
            inner_optimizer: optimizer,
            inner_lr,
            arch: ARCH,
            ..TrainConfig::default()
        },
    }
}

pub const TASK: Task = Task::Classification { num_classes: 2 };

/// Unrolled hypergradient and central differences of the outer objective
/// over every explainer entry.
pub fn hypergradient_vs_fd(inst: &Tiny) -> (Vec<Tensor>, Vec<Tensor>) {
    let hg = hypergradient(&inst.inner, &inst.support, TASK, &inst.phi, &inst.theta0, &inst.config, 0).unwrap();
    let names = inst.phi.params().names().to_vec();
    let numeric = central_differences(inst.phi.params().tensors(), 1e-5, |x| {
        let phi = ExplainerParams::from_params(ParamSet::new(names.clone(), x.to_vec()).unwrap()).unwrap();
        outer_objective(&inst.inner, &inst.support, TASK, &phi, &inst.theta0, &inst.config).unwrap()
    });
    (hg.grads, numeric)
}

/// Worst entry-wise relative error of the hypergradient.
pub fn hypergradient_error(inst: &Tiny) -> f64 {
    let (analytic, numeric) = hypergradient_vs_fd(inst);
    max_rel_err(&analytic, &numeric, 1e-7)
}
