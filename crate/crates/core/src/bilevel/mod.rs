//! Bilevel training of the explainer: the predictor is trained for a few
//! unrolled SGD steps on explainer-weighted graphs, and the explainer is
//! updated with the gradient of the support loss taken through that whole
//! trajectory.

mod config;
pub(crate) mod log;
mod trainer;

pub use config::{InnerOptimizer, Method, TrainConfig, DEFAULT_INNER_LR};
pub use log::{write_log_csv, IterationLog};
pub use trainer::{
    evaluate, predict_batch, run, run_rage, run_rage_keep, run_rage_single, train_plain,
    TrainerOutput,
};

use crate::autodiff::{
    bce_with_logits, l1_norm, l2_norm_sq, mse, sgd_step_differentiable, AdamConfig, Tape, TapeAdam,
    Tensor, Var,
};
use crate::error::{Error, Result};
use crate::explainer::{influence_batch, ExplainerParams};
use crate::gnn::{forward_batch, GnnParams, GraphBatch, Propagation};
use crate::graphdata::Task;

/// Task loss: mean BCE on logits for classification, MSE for regression.
pub fn task_loss(tape: &mut Tape, task: Task, preds: Var, labels: Var) -> Result<Var> {
    if task.is_classification() {
        bce_with_logits(tape, preds, labels)
    } else {
        mse(tape, preds, labels)
    }
}

fn sum_of_squares(tape: &mut Tape, params: &[Var]) -> Result<Var> {
    let mut total: Option<Var> = None;
    for &p in params {
        let sq = l2_norm_sq(tape, p)?;
        total = Some(match total {
            None => sq,
            Some(t) => tape.add(t, sq)?,
        });
    }
    total.ok_or(Error::Degenerate("empty parameter list"))
}

/// `task_loss + λ Σ θ²`.
pub fn inner_loss(
    tape: &mut Tape,
    task: Task,
    preds: Var,
    labels: Var,
    theta: &[Var],
    lambda_l2: f64,
) -> Result<Var> {
    let task = task_loss(tape, task, preds, labels)?;
    let sq = sum_of_squares(tape, theta)?;
    let reg = tape.scale(sq, lambda_l2);
    tape.add(task, reg)
}

/// `task_loss + λ₁ Σ z / num_graphs + λ₂ Σ Φ²`.
///
/// The sparsity term is the per-graph L1 norm of the influences averaged over
/// the graphs in the batch, so a single graph pays exactly `λ₁ Σ z`.
#[allow(clippy::too_many_arguments)]
pub fn outer_loss(
    tape: &mut Tape,
    task: Task,
    preds: Var,
    labels: Var,
    z: Var,
    num_graphs: usize,
    phi: &[Var],
    lambda_l1: f64,
    lambda_l2: f64,
) -> Result<Var> {
    if num_graphs == 0 {
        return Err(Error::Degenerate("outer loss over zero graphs"));
    }
    let task = task_loss(tape, task, preds, labels)?;
    let l1 = l1_norm(tape, z);
    let sparsity = tape.scale(l1, lambda_l1 / num_graphs as f64);
    let sq = sum_of_squares(tape, phi)?;
    let reg = tape.scale(sq, lambda_l2);
    let with_l1 = tape.add(task, sparsity)?;
    tape.add(with_l1, reg)
}

fn check_finite(tape: &Tape, v: Var, tau: usize, step: usize, what: &'static str) -> Result<()> {
    if tape.value(v).is_finite() {
        Ok(())
    } else {
        Err(Error::Divergence { tau, step, what })
    }
}

/// Result of `unroll`: the final parameters as tape nodes and the inner loss
/// seen at the last step.
#[derive(Debug, Clone)]
pub struct Unrolled {
    pub theta: Vec<Var>,
    pub last_loss: f64,
}

/// Records `config.inner_steps` optimizer updates of the predictor on
/// `batch`, each one a differentiable function of the previous parameters and
/// of `prop`.
pub fn unroll(
    tape: &mut Tape,
    batch: &GraphBatch,
    prop: Propagation,
    task: Task,
    theta0: Vec<Var>,
    config: &TrainConfig,
    tau: usize,
) -> Result<Unrolled> {
    let labels = tape.constant(batch.labels().clone());
    let mut adam = match config.inner_optimizer {
        InnerOptimizer::Adam => Some(TapeAdam::new(tape, AdamConfig::with_lr(config.inner_lr), &theta0)),
        InnerOptimizer::Sgd => None,
    };
    let mut theta = theta0;
    let mut last_loss = f64::NAN;
    for t in 0..config.inner_steps {
        let enc = forward_batch(tape, batch, prop, &theta)?;
        let loss = inner_loss(tape, task, enc.predictions, labels, &theta, config.inner_l2)?;
        check_finite(tape, loss, tau, t, "inner loss")?;
        last_loss = tape.value(loss).item();
        let grads = tape.grad_graph(loss, &theta)?;
        theta = match adam.as_mut() {
            Some(adam) => adam.step(tape, &theta, &grads)?,
            None => sgd_step_differentiable(tape, &theta, &grads, config.inner_lr)?,
        };
    }
    Ok(Unrolled { theta, last_loss })
}

/// One outer iteration recorded on a single tape.
#[derive(Debug, Clone)]
pub struct OuterGraph {
    pub phi: Vec<Var>,
    pub theta_final: Vec<Var>,
    pub loss: Var,
    pub train_loss: f64,
}

/// Builds the outer objective: influences on the inner-train graphs, the
/// unrolled inner trajectory from `theta0`, then the support loss under the
/// final predictor and support influences.
#[allow(clippy::too_many_arguments)]
pub fn build_outer(
    tape: &mut Tape,
    inner: &GraphBatch,
    support: &GraphBatch,
    task: Task,
    phi: &ExplainerParams,
    theta0: &GnnParams,
    config: &TrainConfig,
    tau: usize,
) -> Result<OuterGraph> {
    let phi_vars = phi.params().on_tape(tape, true);
    let z_tr = influence_batch(tape, inner, &phi_vars)?;
    check_finite(tape, z_tr, tau, 0, "train influence")?;
    let prop_tr = inner.propagation(tape, Some(z_tr))?;
    let theta_vars = theta0.params().on_tape(tape, true);
    let run = unroll(tape, inner, prop_tr, task, theta_vars, config, tau)?;
    let z_sup = influence_batch(tape, support, &phi_vars)?;
    let prop_sup = support.propagation(tape, Some(z_sup))?;
    let enc = forward_batch(tape, support, prop_sup, &run.theta)?;
    let labels = tape.constant(support.labels().clone());
    let loss = outer_loss(
        tape,
        task,
        enc.predictions,
        labels,
        z_sup,
        support.num_graphs(),
        &phi_vars,
        config.outer_l1,
        config.outer_l2,
    )?;
    check_finite(tape, loss, tau, config.inner_steps, "support loss")?;
    Ok(OuterGraph {
        phi: phi_vars,
        theta_final: run.theta,
        loss,
        train_loss: run.last_loss,
    })
}

/// Support loss and its hypergradient with respect to every explainer
/// tensor, plus the trained predictor.
#[derive(Debug, Clone)]
pub struct Hypergradient {
    pub support_loss: f64,
    pub train_loss: f64,
    pub grads: Vec<Tensor>,
    pub theta_final: GnnParams,
}

#[allow(clippy::too_many_arguments)]
pub fn hypergradient(
    inner: &GraphBatch,
    support: &GraphBatch,
    task: Task,
    phi: &ExplainerParams,
    theta0: &GnnParams,
    config: &TrainConfig,
    tau: usize,
) -> Result<Hypergradient> {
    let mut tape = Tape::new();
    let g = build_outer(&mut tape, inner, support, task, phi, theta0, config, tau)?;
    let support_loss = tape.value(g.loss).item();
    let theta_final = GnnParams::from_params(theta0.params().from_tape(&tape, &g.theta_final))?;
    let grads = tape.gradients(g.loss, &g.phi)?;
    Ok(Hypergradient {
        support_loss,
        train_loss: g.train_loss,
        grads,
        theta_final,
    })
}

/// Value of the outer objective alone.
pub fn outer_objective(
    inner: &GraphBatch,
    support: &GraphBatch,
    task: Task,
    phi: &ExplainerParams,
    theta0: &GnnParams,
    config: &TrainConfig,
) -> Result<f64> {
    let mut tape = Tape::new();
    let g = build_outer(&mut tape, inner, support, task, phi, theta0, config, 0)?;
    Ok(tape.value(g.loss).item())
}
