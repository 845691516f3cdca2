use std::time::Instant;

use super::{hypergradient, inner_loss, InnerOptimizer, IterationLog, Method, TrainConfig};
use crate::autodiff::{l1_norm, l2_norm_sq, Adam, AdamConfig, Tape, Tensor};
use crate::error::{Error, Result};
use crate::eval::{auc, mse};
use crate::explainer::{influence_batch, ExplainerParams};
use crate::gnn::{forward_batch, GnnParams, GraphBatch};
use crate::graphdata::{resplit_train_support, Dataset, Graph, SplitIndices, Task};
use crate::seed::{derive_seed, STREAM_REINIT};

#[derive(Debug, Clone)]
pub struct TrainerOutput {
    pub method: Method,
    /// Explainer of the best validation iteration.
    pub explainer: ExplainerParams,
    /// Predictor trained alongside that explainer.
    pub predictor: GnnParams,
    pub log: Vec<IterationLog>,
    pub best_iteration: usize,
    /// Number of outer iterations actually run.
    pub iterations_run: usize,
}

pub fn run(method: Method, dataset: &Dataset, splits: &SplitIndices, config: &TrainConfig) -> Result<TrainerOutput> {
    match method {
        Method::Rage => run_rage(dataset, splits, config),
        Method::Single => run_rage_single(dataset, splits, config),
        Method::Keep => run_rage_keep(dataset, splits, config),
    }
}

pub fn run_rage(dataset: &Dataset, splits: &SplitIndices, config: &TrainConfig) -> Result<TrainerOutput> {
    run_bilevel(Method::Rage, dataset, splits, config)
}

pub fn run_rage_keep(dataset: &Dataset, splits: &SplitIndices, config: &TrainConfig) -> Result<TrainerOutput> {
    run_bilevel(Method::Keep, dataset, splits, config)
}

pub(crate) fn batch_of(dataset: &Dataset, indices: &[usize]) -> Result<GraphBatch> {
    let graphs: Vec<&Graph> = indices.iter().map(|&i| &dataset.graphs[i]).collect();
    GraphBatch::new(&graphs)
}

fn initial_predictor(config: &TrainConfig, input_dim: usize, tau: usize) -> GnnParams {
    GnnParams::reinitialize(
        config.arch,
        input_dim,
        derive_seed(config.seed, &[STREAM_REINIT, tau as u64]),
    )
}

/// Predictions for every graph of `batch`; without an explainer all edges
/// weigh 1.
pub fn predict_batch(batch: &GraphBatch, phi: Option<&ExplainerParams>, theta: &GnnParams) -> Result<Vec<f64>> {
    let mut tape = Tape::new();
    let z = match phi {
        Some(phi) => {
            let vars = phi.params().on_tape(&mut tape, false);
            Some(influence_batch(&mut tape, batch, &vars)?)
        }
        None => None,
    };
    let prop = batch.propagation(&mut tape, z)?;
    let vars = theta.params().on_tape(&mut tape, false);
    let enc = forward_batch(&mut tape, batch, prop, &vars)?;
    Ok(tape.value(enc.predictions).data().to_vec())
}

/// Test metric on `indices`: AUC for classification, MSE for regression.
pub fn evaluate(
    dataset: &Dataset,
    indices: &[usize],
    phi: Option<&ExplainerParams>,
    theta: &GnnParams,
) -> Result<f64> {
    let batch = batch_of(dataset, indices)?;
    let preds = predict_batch(&batch, phi, theta)?;
    let labels = batch.labels().data();
    if dataset.task.is_classification() {
        auc(&preds, labels)
    } else {
        mse(&preds, labels)
    }
}

/// Model selection on the validation split. Classification ranks by AUC and
/// breaks ties by lower cross-entropy; regression ranks by MSE.
struct Validator {
    batch: GraphBatch,
    task: Task,
}

impl Validator {
    fn new(dataset: &Dataset, indices: &[usize]) -> Result<Self> {
        Ok(Validator {
            batch: batch_of(dataset, indices)?,
            task: dataset.task,
        })
    }

    /// `(reported metric, ranking key)`; a larger key is better.
    fn score(&self, phi: Option<&ExplainerParams>, theta: &GnnParams) -> Result<(f64, (f64, f64))> {
        let preds = predict_batch(&self.batch, phi, theta)?;
        let labels = self.batch.labels().data();
        if self.task.is_classification() {
            let bce = preds
                .iter()
                .zip(labels)
                .map(|(&x, &t)| x.max(0.0) + (-x.abs()).exp().ln_1p() - t * x)
                .sum::<f64>()
                / preds.len() as f64;
            match auc(&preds, labels) {
                Ok(a) => Ok((a, (a, -bce))),
                Err(Error::UndefinedMetric(_)) => Ok((f64::NAN, (0.0, -bce))),
                Err(e) => Err(e),
            }
        } else {
            let m = mse(&preds, labels)?;
            Ok((m, (-m, 0.0)))
        }
    }
}

/// Non-recorded predictor updates with the configured inner optimizer.
enum InnerStepper {
    Sgd(f64),
    Adam(Adam),
}

impl InnerStepper {
    fn new(config: &TrainConfig, params: &[Tensor]) -> Self {
        match config.inner_optimizer {
            InnerOptimizer::Sgd => InnerStepper::Sgd(config.inner_lr),
            InnerOptimizer::Adam => InnerStepper::Adam(Adam::new(AdamConfig::with_lr(config.inner_lr), params)),
        }
    }

    fn step(&mut self, params: &mut [Tensor], grads: &[Tensor]) -> Result<()> {
        match self {
            InnerStepper::Sgd(lr) => {
                for (p, g) in params.iter_mut().zip(grads) {
                    *p = p.zip_map(g, |a, b| a - *lr * b);
                }
                Ok(())
            }
            InnerStepper::Adam(adam) => adam.step(params, grads),
        }
    }
}

struct Selection {
    best_key: Option<(f64, f64)>,
    best_tau: usize,
    since_best: usize,
}

impl Selection {
    fn new() -> Self {
        Selection {
            best_key: None,
            best_tau: 0,
            since_best: 0,
        }
    }

    /// Records an iteration's key; true when it is the new best.
    fn offer(&mut self, tau: usize, key: (f64, f64)) -> bool {
        let better = match self.best_key {
            None => true,
            Some(b) => key.0 > b.0 || (key.0 == b.0 && key.1 > b.1),
        };
        if better {
            self.best_key = Some(key);
            self.best_tau = tau;
            self.since_best = 0;
        } else {
            self.since_best += 1;
        }
        better
    }
}

fn check_dataset(dataset: &Dataset, splits: &SplitIndices) -> Result<()> {
    if splits.val.is_empty() {
        return Err(Error::Parameter("validation split is empty".into()));
    }
    if splits
        .train
        .iter()
        .chain(&splits.val)
        .any(|&i| i >= dataset.len())
    {
        return Err(Error::Parameter("split index outside the dataset".into()));
    }
    Ok(())
}

fn run_bilevel(
    method: Method,
    dataset: &Dataset,
    splits: &SplitIndices,
    config: &TrainConfig,
) -> Result<TrainerOutput> {
    config.validate()?;
    check_dataset(dataset, splits)?;
    let d = dataset.feature_dim;
    let task = dataset.task;
    let validator = Validator::new(dataset, &splits.val)?;
    let mut phi = ExplainerParams::init(config.arch, d, config.seed);
    let mut adam = Adam::new(AdamConfig::with_lr(config.outer_lr), phi.params().tensors());
    let mut carried: Option<GnnParams> = None;
    let mut selection = Selection::new();
    let mut best = (phi.clone(), initial_predictor(config, d, 0));
    let mut log = Vec::new();
    let start = Instant::now();

    for tau in 0..config.outer_steps {
        let (inner_idx, support_idx) = resplit_train_support(&splits.train, config.seed, tau)?;
        let inner = batch_of(dataset, &inner_idx)?;
        let support = batch_of(dataset, &support_idx)?;
        let theta0 = match carried.take() {
            Some(theta) if method == Method::Keep => theta,
            _ => initial_predictor(config, d, tau),
        };
        let hg = hypergradient(&inner, &support, task, &phi, &theta0, config, tau)?;
        let (metric, key) = validator.score(Some(&phi), &hg.theta_final)?;
        if selection.offer(tau, key) {
            best = (phi.clone(), hg.theta_final.clone());
        }
        log.push(IterationLog {
            tau,
            train_loss: hg.train_loss,
            support_loss: Some(hg.support_loss),
            val_metric: metric,
            wall_seconds: start.elapsed().as_secs_f64(),
        });
        adam.step(phi.params_mut().tensors_mut(), &hg.grads)?;
        if !phi.params().is_finite() {
            return Err(Error::Divergence {
                tau,
                step: config.inner_steps,
                what: "explainer parameters",
            });
        }
        if method == Method::Keep {
            carried = Some(hg.theta_final);
        }
        if selection.since_best >= config.patience {
            break;
        }
    }
    Ok(TrainerOutput {
        method,
        explainer: best.0,
        predictor: best.1,
        iterations_run: log.len(),
        log,
        best_iteration: selection.best_tau,
    })
}

/// Joint training: every step updates the predictor by SGD and the explainer
/// by Adam on one loss over the whole training split, with no support set and
/// no reinitialization.
pub fn run_rage_single(
    dataset: &Dataset,
    splits: &SplitIndices,
    config: &TrainConfig,
) -> Result<TrainerOutput> {
    config.validate()?;
    check_dataset(dataset, splits)?;
    let d = dataset.feature_dim;
    let task = dataset.task;
    let validator = Validator::new(dataset, &splits.val)?;
    let train = batch_of(dataset, &splits.train)?;
    let mut phi = ExplainerParams::init(config.arch, d, config.seed);
    let mut theta = initial_predictor(config, d, 0);
    let mut theta_opt = InnerStepper::new(config, theta.params().tensors());
    let mut adam = Adam::new(AdamConfig::with_lr(config.outer_lr), phi.params().tensors());
    let mut selection = Selection::new();
    let mut best = (phi.clone(), theta.clone());
    let mut log = Vec::new();
    let start = Instant::now();
    let n_phi = phi.params().tensors().len();

    for tau in 0..config.outer_steps {
        let mut last_loss = f64::NAN;
        for t in 0..config.inner_steps {
            let mut tape = Tape::new();
            let phi_vars = phi.params().on_tape(&mut tape, true);
            let theta_vars = theta.params().on_tape(&mut tape, true);
            let z = influence_batch(&mut tape, &train, &phi_vars)?;
            let prop = train.propagation(&mut tape, Some(z))?;
            let enc = forward_batch(&mut tape, &train, prop, &theta_vars)?;
            let labels = tape.constant(train.labels().clone());
            let base = inner_loss(&mut tape, task, enc.predictions, labels, &theta_vars, config.inner_l2)?;
            let l1 = l1_norm(&mut tape, z);
            let sparsity = tape.scale(l1, config.outer_l1 / train.num_graphs() as f64);
            let mut loss = tape.add(base, sparsity)?;
            for &p in &phi_vars {
                let sq = l2_norm_sq(&mut tape, p)?;
                let reg = tape.scale(sq, config.outer_l2);
                loss = tape.add(loss, reg)?;
            }
            last_loss = tape.value(loss).item();
            if !last_loss.is_finite() {
                return Err(Error::Divergence {
                    tau,
                    step: t,
                    what: "joint loss",
                });
            }
            let wrt: Vec<_> = phi_vars.iter().chain(&theta_vars).copied().collect();
            let mut grads = tape.gradients(loss, &wrt)?;
            let theta_grads = grads.split_off(n_phi);
            theta_opt.step(theta.params_mut().tensors_mut(), &theta_grads)?;
            adam.step(phi.params_mut().tensors_mut(), &grads)?;
        }
        if !phi.params().is_finite() || !theta.params().is_finite() {
            return Err(Error::Divergence {
                tau,
                step: config.inner_steps,
                what: "parameters",
            });
        }
        let (metric, key) = validator.score(Some(&phi), &theta)?;
        if selection.offer(tau, key) {
            best = (phi.clone(), theta.clone());
        }
        log.push(IterationLog {
            tau,
            train_loss: last_loss,
            support_loss: None,
            val_metric: metric,
            wall_seconds: start.elapsed().as_secs_f64(),
        });
        if selection.since_best >= config.patience {
            break;
        }
    }
    Ok(TrainerOutput {
        method: Method::Single,
        explainer: best.0,
        predictor: best.1,
        iterations_run: log.len(),
        log,
        best_iteration: selection.best_tau,
    })
}

/// Single-level training of a plain predictor (all edges weigh 1) on
/// `dataset`: the same optimizer, step budget, initialization and model
/// selection as the predictor inside joint training.
pub fn train_plain(dataset: &Dataset, splits: &SplitIndices, config: &TrainConfig) -> Result<GnnParams> {
    config.validate()?;
    check_dataset(dataset, splits)?;
    let d = dataset.feature_dim;
    let validator = Validator::new(dataset, &splits.val)?;
    let train = batch_of(dataset, &splits.train)?;
    let mut theta = initial_predictor(config, d, 0);
    let mut theta_opt = InnerStepper::new(config, theta.params().tensors());
    let mut selection = Selection::new();
    let mut best = theta.clone();
    for tau in 0..config.outer_steps {
        for t in 0..config.inner_steps {
            let mut tape = Tape::new();
            let vars = theta.params().on_tape(&mut tape, true);
            let prop = train.propagation(&mut tape, None)?;
            let enc = forward_batch(&mut tape, &train, prop, &vars)?;
            let labels = tape.constant(train.labels().clone());
            let loss = inner_loss(&mut tape, dataset.task, enc.predictions, labels, &vars, config.inner_l2)?;
            if !tape.value(loss).is_finite() {
                return Err(Error::Divergence {
                    tau,
                    step: t,
                    what: "plain predictor loss",
                });
            }
            let grads = tape.gradients(loss, &vars)?;
            theta_opt.step(theta.params_mut().tensors_mut(), &grads)?;
        }
        let (_, key) = validator.score(None, &theta)?;
        if selection.offer(tau, key) {
            best = theta.clone();
        }
        if selection.since_best >= config.patience {
            break;
        }
    }
    Ok(best)
}
