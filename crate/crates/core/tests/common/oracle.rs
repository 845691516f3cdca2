//! Central finite-difference checks for every differentiable tape op.

use std::sync::Arc;

use rage::autodiff::{
    bce_with_logits, l1_norm, l2_norm_sq, mse, sgd_step_differentiable, AdamConfig, Pattern, Tape,
    TapeAdam, Tensor, Var,
};
use rage::Result;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::{central_differences, max_rel_err, random_tensor};

pub const EPS: f64 = 1e-5;
pub const TOL: f64 = 1e-4;
/// Entries where both gradients are below this magnitude count as matching.
pub const FLOOR: f64 = 1e-7;
/// Inputs are kept at least this far from relu/abs kinks and max/min ties.
pub const KINK_GAP: f64 = 1e-3;

type Build = fn(&mut Tape, &[Var], &mut Ctx) -> Result<Var>;
type Gen = fn(&mut ChaCha8Rng, &mut Ctx) -> Vec<Tensor>;

/// Per-instance constants an op needs besides its differentiable inputs.
#[derive(Default, Clone)]
pub struct Ctx {
    pub pattern: Option<Arc<Pattern>>,
    pub idx: Option<Arc<[usize]>>,
    pub offsets: Vec<usize>,
    pub target: Option<Tensor>,
    pub exponent: f64,
    pub shape: [usize; 2],
    pub mask: Option<Arc<Tensor>>,
}

pub struct Case {
    pub name: &'static str,
    gen: Gen,
    build: Build,
}

fn u(r: &mut ChaCha8Rng, lo: usize, hi: usize) -> usize {
    r.gen_range(lo..=hi)
}

fn away_from_zero(r: &mut ChaCha8Rng, rows: usize, cols: usize) -> Tensor {
    let mut t = random_tensor(r, rows, cols, -2.0, 2.0);
    for x in t.data_mut() {
        while x.abs() < KINK_GAP {
            *x = r.gen_range(-2.0..2.0);
        }
    }
    t
}

fn distinct_pair(r: &mut ChaCha8Rng, rows: usize, cols: usize) -> Vec<Tensor> {
    let a = random_tensor(r, rows, cols, -2.0, 2.0);
    let mut b = random_tensor(r, rows, cols, -2.0, 2.0);
    for (y, x) in b.data_mut().iter_mut().zip(a.data()) {
        while (*y - x).abs() < KINK_GAP {
            *y = r.gen_range(-2.0..2.0);
        }
    }
    vec![a, b]
}

/// Columns whose top two entries within each segment differ by at least the
/// kink gap.
fn separated_maxima(t: &Tensor, offsets: &[usize]) -> bool {
    offsets.windows(2).all(|w| {
        (0..t.cols()).all(|c| {
            let mut col: Vec<f64> = (w[0]..w[1]).map(|i| t.get(i, c)).collect();
            col.sort_by(|a, b| b.partial_cmp(a).unwrap());
            col.len() < 2 || col[0] - col[1] >= KINK_GAP
        })
    })
}

fn random_pattern(r: &mut ChaCha8Rng, n: usize) -> Arc<Pattern> {
    let mut entries = Vec::new();
    for i in 0..n {
        for j in 0..n {
            if i == j || r.gen_bool(0.4) {
                entries.push((i, j));
            }
        }
    }
    Arc::new(Pattern::new(n, entries).unwrap())
}

fn unary(r: &mut ChaCha8Rng, _: &mut Ctx) -> Vec<Tensor> {
    let (m, n) = (u(r, 1, 5), u(r, 1, 5));
    vec![random_tensor(r, m, n, -2.0, 2.0)]
}

fn binary(r: &mut ChaCha8Rng, _: &mut Ctx) -> Vec<Tensor> {
    let (m, n) = (u(r, 1, 5), u(r, 1, 5));
    vec![random_tensor(r, m, n, -2.0, 2.0), random_tensor(r, m, n, -2.0, 2.0)]
}

pub fn cases() -> Vec<Case> {
    vec![
        Case {
            name: "matmul",
            gen: |r, _| {
                let (m, k, n) = (u(r, 1, 5), u(r, 1, 5), u(r, 1, 5));
                vec![random_tensor(r, m, k, -2.0, 2.0), random_tensor(r, k, n, -2.0, 2.0)]
            },
            build: |t, v, _| t.matmul(v[0], v[1]),
        },
        Case {
            name: "matmul_transposed",
            gen: |r, _| {
                let (m, k, n) = (u(r, 1, 5), u(r, 1, 5), u(r, 1, 5));
                vec![random_tensor(r, k, m, -2.0, 2.0), random_tensor(r, n, k, -2.0, 2.0)]
            },
            build: |t, v, _| t.matmul_t(v[0], true, v[1], true),
        },
        Case {
            name: "add",
            gen: binary,
            build: |t, v, _| t.add(v[0], v[1]),
        },
        Case {
            name: "sub",
            gen: binary,
            build: |t, v, _| t.sub(v[0], v[1]),
        },
        Case {
            name: "hadamard",
            gen: binary,
            build: |t, v, _| t.mul(v[0], v[1]),
        },
        Case {
            name: "scale",
            gen: |r, c| {
                c.exponent = r.gen_range(-3.0..3.0);
                unary(r, c)
            },
            build: |t, v, c| Ok(t.scale(v[0], c.exponent)),
        },
        Case {
            name: "mask",
            gen: |r, c| {
                let x = unary(r, c);
                let [m, n] = x[0].shape();
                c.mask = Some(Arc::new(random_tensor(r, m, n, -1.0, 1.0)));
                x
            },
            build: |t, v, c| t.mask(v[0], c.mask.clone().unwrap()),
        },
        Case {
            name: "add_row",
            gen: |r, _| {
                let (m, n) = (u(r, 1, 5), u(r, 1, 5));
                vec![random_tensor(r, m, n, -2.0, 2.0), random_tensor(r, 1, n, -2.0, 2.0)]
            },
            build: |t, v, _| t.add_row(v[0], v[1]),
        },
        Case {
            name: "relu",
            gen: |r, _| {
                let (m, n) = (u(r, 1, 5), u(r, 1, 5));
                vec![away_from_zero(r, m, n)]
            },
            build: |t, v, _| Ok(t.relu(v[0])),
        },
        Case {
            name: "sigmoid",
            gen: unary,
            build: |t, v, _| Ok(t.sigmoid(v[0])),
        },
        Case {
            name: "softplus",
            gen: unary,
            build: |t, v, _| Ok(t.softplus(v[0])),
        },
        Case {
            name: "abs",
            gen: |r, _| {
                let (m, n) = (u(r, 1, 5), u(r, 1, 5));
                vec![away_from_zero(r, m, n)]
            },
            build: |t, v, _| Ok(t.abs(v[0])),
        },
        Case {
            name: "powf",
            gen: |r, c| {
                c.exponent = [-0.5, 0.5, 2.0, 3.0, -1.5][u(r, 0, 4)];
                let (m, n) = (u(r, 1, 5), u(r, 1, 5));
                vec![random_tensor(r, m, n, 0.5, 2.0)]
            },
            build: |t, v, c| Ok(t.powf(v[0], c.exponent)),
        },
        Case {
            name: "maximum",
            gen: |r, _| {
                let (m, n) = (u(r, 1, 5), u(r, 1, 5));
                distinct_pair(r, m, n)
            },
            build: |t, v, _| t.maximum(v[0], v[1]),
        },
        Case {
            name: "minimum",
            gen: |r, _| {
                let (m, n) = (u(r, 1, 5), u(r, 1, 5));
                distinct_pair(r, m, n)
            },
            build: |t, v, _| t.minimum(v[0], v[1]),
        },
        Case {
            name: "transpose",
            gen: unary,
            build: |t, v, _| Ok(t.transpose(v[0])),
        },
        Case {
            name: "sum",
            gen: unary,
            build: |t, v, _| Ok(t.sum(v[0])),
        },
        Case {
            name: "mean",
            gen: unary,
            build: |t, v, _| Ok(t.mean(v[0])),
        },
        Case {
            name: "col_sum",
            gen: unary,
            build: |t, v, _| Ok(t.col_sum(v[0])),
        },
        Case {
            name: "broadcast",
            gen: |r, c| {
                c.shape = [u(r, 1, 5), u(r, 1, 5)];
                vec![random_tensor(r, 1, 1, -2.0, 2.0)]
            },
            build: |t, v, c| t.broadcast(v[0], c.shape),
        },
        Case {
            name: "broadcast_rows",
            gen: |r, c| {
                c.shape = [u(r, 1, 5), 0];
                let n = u(r, 1, 5);
                vec![random_tensor(r, 1, n, -2.0, 2.0)]
            },
            build: |t, v, c| t.broadcast_rows(v[0], c.shape[0]),
        },
        Case {
            name: "row_max_pool",
            gen: |r, _| {
                let (m, n) = (u(r, 1, 5), u(r, 1, 5));
                loop {
                    let x = random_tensor(r, m, n, -2.0, 2.0);
                    if separated_maxima(&x, &[0, m]) {
                        return vec![x];
                    }
                }
            },
            build: |t, v, _| t.row_max_pool(v[0]),
        },
        Case {
            name: "segment_max_pool",
            gen: |r, c| {
                let segments = u(r, 1, 3);
                c.offsets = vec![0];
                for _ in 0..segments {
                    let last = *c.offsets.last().unwrap();
                    c.offsets.push(last + u(r, 1, 4));
                }
                let (m, n) = (*c.offsets.last().unwrap(), u(r, 1, 4));
                loop {
                    let x = random_tensor(r, m, n, -2.0, 2.0);
                    if separated_maxima(&x, &c.offsets) {
                        return vec![x];
                    }
                }
            },
            build: |t, v, c| t.segment_max_pool(v[0], &c.offsets),
        },
        Case {
            name: "concat_cols",
            gen: |r, _| {
                let (m, p, q) = (u(r, 1, 5), u(r, 0, 4), u(r, 1, 4));
                vec![random_tensor(r, m, p, -2.0, 2.0), random_tensor(r, m, q, -2.0, 2.0)]
            },
            build: |t, v, _| t.concat_cols(v[0], v[1]),
        },
        Case {
            name: "slice_cols",
            gen: |r, c| {
                let (m, n) = (u(r, 1, 5), u(r, 1, 6));
                let start = u(r, 0, n - 1);
                c.shape = [start, u(r, 1, n - start)];
                vec![random_tensor(r, m, n, -2.0, 2.0)]
            },
            build: |t, v, c| t.slice_cols(v[0], c.shape[0], c.shape[1]),
        },
        Case {
            name: "concat_rows",
            gen: |r, _| {
                let (m, p, n) = (u(r, 1, 4), u(r, 1, 4), u(r, 1, 4));
                vec![random_tensor(r, m, n, -2.0, 2.0), random_tensor(r, p, n, -2.0, 2.0)]
            },
            build: |t, v, _| t.concat_rows(v[0], v[1]),
        },
        Case {
            name: "gather_rows",
            gen: |r, c| {
                let (m, n) = (u(r, 1, 5), u(r, 1, 4));
                let k = u(r, 1, 8);
                c.idx = Some((0..k).map(|_| r.gen_range(0..m)).collect());
                vec![random_tensor(r, m, n, -2.0, 2.0)]
            },
            build: |t, v, c| t.gather_rows(v[0], c.idx.clone().unwrap()),
        },
        Case {
            name: "propagate",
            gen: |r, c| {
                let n = u(r, 1, 6);
                let p = random_pattern(r, n);
                let vals = random_tensor(r, p.nnz(), 1, -2.0, 2.0);
                c.pattern = Some(p);
                let d = u(r, 1, 4);
                vec![vals, random_tensor(r, n, d, -2.0, 2.0)]
            },
            build: |t, v, c| t.propagate(v[0], v[1], c.pattern.as_ref().unwrap()),
        },
        Case {
            name: "edge_dot",
            gen: |r, c| {
                let n = u(r, 1, 6);
                c.pattern = Some(random_pattern(r, n));
                let d = u(r, 1, 4);
                vec![random_tensor(r, n, d, -2.0, 2.0), random_tensor(r, n, d, -2.0, 2.0)]
            },
            build: |t, v, c| t.edge_dot(v[0], v[1], c.pattern.as_ref().unwrap()),
        },
        Case {
            name: "bce_with_logits",
            gen: |r, c| {
                let m = u(r, 1, 8);
                let target = (0..m).map(|_| if r.gen_bool(0.5) { 1.0 } else { 0.0 }).collect();
                c.target = Some(Tensor::column(target));
                vec![random_tensor(r, m, 1, -2.0, 2.0)]
            },
            build: |t, v, c| {
                let y = t.constant(c.target.clone().unwrap());
                bce_with_logits(t, v[0], y)
            },
        },
        Case {
            name: "mse",
            gen: |r, c| {
                let m = u(r, 1, 8);
                c.target = Some(random_tensor(r, m, 1, -2.0, 2.0));
                vec![random_tensor(r, m, 1, -2.0, 2.0)]
            },
            build: |t, v, c| {
                let y = t.constant(c.target.clone().unwrap());
                mse(t, v[0], y)
            },
        },
        Case {
            name: "l1_norm",
            gen: |r, _| {
                let (m, n) = (u(r, 1, 5), u(r, 1, 5));
                vec![away_from_zero(r, m, n)]
            },
            build: |t, v, _| Ok(l1_norm(t, v[0])),
        },
        Case {
            name: "l2_norm_sq",
            gen: unary,
            build: |t, v, _| l2_norm_sq(t, v[0]),
        },
        Case {
            // Differentiates through a recorded gradient: the update depends on
            // the data `x` only through ∇_w loss(w, x).
            name: "sgd_step_differentiable",
            gen: |r, c| {
                c.exponent = r.gen_range(0.01..0.5);
                let k = u(r, 1, 4);
                vec![random_tensor(r, 2, 1, -2.0, 2.0), random_tensor(r, k, 2, -2.0, 2.0)]
            },
            build: |t, v, c| {
                let w = t.constant(Tensor::column(vec![0.3, -0.7]));
                let inner = inner_objective(t, w, v[0], v[1])?;
                let g = t.grad_graph(inner, &[w])?;
                let next = sgd_step_differentiable(t, &[w], &g, c.exponent)?;
                Ok(next[0])
            },
        },
        Case {
            name: "tape_adam_step",
            gen: |r, c| {
                c.exponent = r.gen_range(0.01..0.2);
                let k = u(r, 1, 4);
                vec![random_tensor(r, 2, 1, -2.0, 2.0), random_tensor(r, k, 2, -2.0, 2.0)]
            },
            build: |t, v, c| {
                let mut w = vec![t.constant(Tensor::column(vec![0.3, -0.7]))];
                let mut adam = TapeAdam::new(t, AdamConfig::with_lr(c.exponent), &w);
                for _ in 0..3 {
                    let inner = inner_objective(t, w[0], v[0], v[1])?;
                    let g = t.grad_graph(inner, &w)?;
                    w = adam.step(t, &w, &g)?;
                }
                Ok(w[0])
            },
        },
        Case {
            name: "grad_graph",
            gen: |r, _| {
                let k = u(r, 1, 4);
                vec![random_tensor(r, 2, 1, -2.0, 2.0), random_tensor(r, k, 2, -2.0, 2.0)]
            },
            build: |t, v, _| {
                let inner = inner_objective(t, v[0], v[0], v[1])?;
                Ok(t.grad_graph(inner, &[v[0]])?[0])
            },
        },
    ]
}

/// `Σ softplus(x · w) ⊙ σ(x · s)`, smooth in all three arguments.
fn inner_objective(t: &mut Tape, w: Var, s: Var, x: Var) -> Result<Var> {
    let a = t.matmul(x, w)?;
    let b = t.matmul(x, s)?;
    let sa = t.softplus(a);
    let sb = t.sigmoid(b);
    let p = t.mul(sa, sb)?;
    Ok(t.sum(p))
}

fn projected_loss(t: &mut Tape, out: Var, weights: &Tensor) -> Result<Var> {
    let w = t.constant(weights.clone());
    let p = t.mul(out, w)?;
    Ok(t.sum(p))
}

fn evaluate(build: Build, inputs: &[Tensor], ctx: &mut Ctx, weights: &Tensor) -> f64 {
    let mut t = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|x| t.leaf(x.clone())).collect();
    let out = build(&mut t, &vars, ctx).unwrap();
    let loss = projected_loss(&mut t, out, weights).unwrap();
    t.value(loss).item()
}

/// Largest relative error of one random instance of `case`.
pub fn check_instance(case: &Case, r: &mut ChaCha8Rng) -> f64 {
    let mut ctx = Ctx::default();
    let inputs = (case.gen)(r, &mut ctx);
    let mut t = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|x| t.leaf(x.clone())).collect();
    let out = (case.build)(&mut t, &vars, &mut ctx).unwrap();
    let [m, n] = t.shape(out);
    let weights = random_tensor(r, m, n, -1.0, 1.0);
    let loss = projected_loss(&mut t, out, &weights).unwrap();
    let analytic = t.gradients(loss, &vars).unwrap();
    let numeric = central_differences(&inputs, EPS, |x| evaluate(case.build, x, &mut ctx, &weights));
    max_rel_err(&analytic, &numeric, FLOOR)
}

/// Worst relative error of every op over `instances` random instances.
pub fn gradient_suite(instances: usize, seed: u64) -> Vec<(&'static str, f64)> {
    let mut r = super::rng(seed);
    cases()
        .iter()
        .map(|case| {
            let worst = (0..instances)
                .map(|_| check_instance(case, &mut r))
                .fold(0.0, f64::max);
            (case.name, worst)
        })
        .collect()
}
