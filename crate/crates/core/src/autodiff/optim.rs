use super::{Tape, Tensor, Var};
use crate::error::{Error, Result};

/// One SGD update recorded on the tape: `θ' = θ - lr · g`.
///
/// The returned parameters are ordinary tape nodes, so a loss computed from
/// them can be differentiated back through `grads` into whatever produced the
/// gradients.
pub fn sgd_step_differentiable(
    tape: &mut Tape,
    params: &[Var],
    grads: &[Var],
    lr: f64,
) -> Result<Vec<Var>> {
    if params.len() != grads.len() {
        return Err(Error::Contract(format!(
            "{} parameters but {} gradients",
            params.len(),
            grads.len()
        )));
    }
    if !(lr >= 0.0 && lr.is_finite()) {
        return Err(Error::Parameter(format!("learning rate {lr} must be >= 0")));
    }
    params
        .iter()
        .zip(grads)
        .map(|(&p, &g)| {
            let step = tape.scale(g, lr);
            tape.sub(p, step)
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamConfig {
    pub fn with_lr(lr: f64) -> Self {
        AdamConfig {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Adam with bias correction. Works on plain tensors; the update itself is
/// not recorded for differentiation.
#[derive(Debug, Clone)]
pub struct Adam {
    config: AdamConfig,
    step: u32,
    m: Vec<Tensor>,
    v: Vec<Tensor>,
}

impl Adam {
    pub fn new(config: AdamConfig, params: &[Tensor]) -> Self {
        let zeros = |p: &Tensor| Tensor::zeros(p.rows(), p.cols());
        Adam {
            config,
            step: 0,
            m: params.iter().map(zeros).collect(),
            v: params.iter().map(zeros).collect(),
        }
    }

    pub fn steps_taken(&self) -> u32 {
        self.step
    }

    pub fn step(&mut self, params: &mut [Tensor], grads: &[Tensor]) -> Result<()> {
        if params.len() != self.m.len() || grads.len() != params.len() {
            return Err(Error::Contract(format!(
                "adam state holds {} tensors, got {} parameters and {} gradients",
                self.m.len(),
                params.len(),
                grads.len()
            )));
        }
        for ((p, g), m) in params.iter().zip(grads).zip(&self.m) {
            if p.shape() != g.shape() || p.shape() != m.shape() {
                return Err(Error::Shape {
                    op: "adam_step",
                    left: p.shape(),
                    right: g.shape(),
                });
            }
        }
        self.step += 1;
        let AdamConfig {
            lr,
            beta1,
            beta2,
            eps,
        } = self.config;
        let bc1 = 1.0 - beta1.powi(self.step as i32);
        let bc2 = 1.0 - beta2.powi(self.step as i32);
        for ((p, g), (m, v)) in params
            .iter_mut()
            .zip(grads)
            .zip(self.m.iter_mut().zip(self.v.iter_mut()))
        {
            let (pd, gd) = (p.data_mut(), g.data());
            for i in 0..pd.len() {
                let mi = beta1 * m.data()[i] + (1.0 - beta1) * gd[i];
                let vi = beta2 * v.data()[i] + (1.0 - beta2) * gd[i] * gd[i];
                m.data_mut()[i] = mi;
                v.data_mut()[i] = vi;
                let m_hat = mi / bc1;
                let v_hat = vi / bc2;
                pd[i] -= lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
        Ok(())
    }
}

/// Adam whose updates are recorded on the tape, so a loss evaluated at the
/// resulting parameters differentiates back through the whole run.
///
/// `ε` sits under the square root, `θ' = θ - lr m̂ / sqrt(v̂ + ε)`, which
/// keeps the update smooth where a gradient is exactly zero.
#[derive(Debug, Clone)]
pub struct TapeAdam {
    config: AdamConfig,
    step: u32,
    m: Vec<Var>,
    v: Vec<Var>,
}

impl TapeAdam {
    pub fn new(tape: &mut Tape, config: AdamConfig, params: &[Var]) -> Self {
        let zeros: Vec<Var> = params
            .iter()
            .map(|&p| {
                let [r, c] = tape.shape(p);
                tape.constant(Tensor::zeros(r, c))
            })
            .collect();
        TapeAdam {
            config,
            step: 0,
            m: zeros.clone(),
            v: zeros,
        }
    }

    pub fn step(&mut self, tape: &mut Tape, params: &[Var], grads: &[Var]) -> Result<Vec<Var>> {
        if params.len() != self.m.len() || grads.len() != params.len() {
            return Err(Error::Contract(format!(
                "adam state holds {} tensors, got {} parameters and {} gradients",
                self.m.len(),
                params.len(),
                grads.len()
            )));
        }
        let AdamConfig {
            lr,
            beta1,
            beta2,
            eps,
        } = self.config;
        if !(lr >= 0.0 && lr.is_finite()) {
            return Err(Error::Parameter(format!("learning rate {lr} must be >= 0")));
        }
        self.step += 1;
        let bc1 = 1.0 - beta1.powi(self.step as i32);
        let bc2 = 1.0 - beta2.powi(self.step as i32);
        let mut out = Vec::with_capacity(params.len());
        for i in 0..params.len() {
            let (p, g) = (params[i], grads[i]);
            let old_m = tape.scale(self.m[i], beta1);
            let new_g = tape.scale(g, 1.0 - beta1);
            let m = tape.add(old_m, new_g)?;
            let old_v = tape.scale(self.v[i], beta2);
            let gg = tape.mul(g, g)?;
            let new_gg = tape.scale(gg, 1.0 - beta2);
            let v = tape.add(old_v, new_gg)?;
            let [r, c] = tape.shape(v);
            let floor = tape.constant(Tensor::full(r, c, eps * bc2));
            // sqrt(v / bc2 + eps) = sqrt(v + eps bc2) / sqrt(bc2)
            let shifted = tape.add(v, floor)?;
            let inv = tape.powf(shifted, -0.5);
            let dir = tape.mul(m, inv)?;
            let update = tape.scale(dir, lr * bc2.sqrt() / bc1);
            out.push(tape.sub(p, update)?);
            self.m[i] = m;
            self.v[i] = v;
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_rate_is_identity() {
        let mut tape = Tape::new();
        let p = tape.leaf(Tensor::row(vec![1.5, -2.25]));
        let g = tape.constant(Tensor::row(vec![0.3, 7.0]));
        let next = sgd_step_differentiable(&mut tape, &[p], &[g], 0.0).unwrap();
        assert_eq!(tape.value(next[0]), tape.value(p));
    }

    #[test]
    fn sgd_definition() {
        let mut tape = Tape::new();
        let p = tape.leaf(Tensor::row(vec![1.0]));
        let g = tape.constant(Tensor::row(vec![2.0]));
        let next = sgd_step_differentiable(&mut tape, &[p], &[g], 0.1).unwrap();
        assert!((tape.value(next[0]).item() - 0.8).abs() < 1e-15);
    }

    #[test]
    fn sgd_rejects_misaligned() {
        let mut tape = Tape::new();
        let p = tape.leaf(Tensor::row(vec![1.0]));
        assert!(sgd_step_differentiable(&mut tape, &[p], &[], 0.1).is_err());
        let g = tape.constant(Tensor::row(vec![2.0, 1.0]));
        assert!(sgd_step_differentiable(&mut tape, &[p], &[g], 0.1).is_err());
    }

    #[test]
    fn tape_adam_tracks_plain_adam() {
        let start = Tensor::row(vec![1.0, -0.5, 0.0]);
        let mut plain = vec![start.clone()];
        let config = AdamConfig::with_lr(0.05);
        let mut adam = Adam::new(config, &plain);
        let mut tape = Tape::new();
        let p0 = tape.leaf(start);
        let mut tape_adam = TapeAdam::new(&mut tape, config, &[p0]);
        let mut p = p0;
        for _ in 0..5 {
            let sq = tape.mul(p, p).unwrap();
            let loss = tape.sum(sq);
            let g = tape.grad_graph(loss, &[p]).unwrap();
            p = tape_adam.step(&mut tape, &[p], &g).unwrap()[0];
            let pg = plain[0].map(|x| 2.0 * x);
            adam.step(&mut plain, &[pg]).unwrap();
        }
        // the two differ only in where eps enters the denominator
        assert!(tape.value(p).max_abs_diff(&plain[0]) < 1e-6);
    }

    #[test]
    fn adam_zero_gradient_keeps_params() {
        let mut params = vec![Tensor::row(vec![1.0, -3.0])];
        let mut adam = Adam::new(AdamConfig::with_lr(0.001), &params);
        adam.step(&mut params, &[Tensor::zeros(1, 2)]).unwrap();
        assert_eq!(params[0].data(), &[1.0, -3.0]);
    }

    #[test]
    fn adam_first_step_has_magnitude_lr() {
        let mut params = vec![Tensor::row(vec![0.0, 0.0, 0.0])];
        let mut adam = Adam::new(AdamConfig::with_lr(0.001), &params);
        adam.step(&mut params, &[Tensor::row(vec![5.0, -0.01, 300.0])])
            .unwrap();
        for (p, s) in params[0].data().iter().zip([-1.0, 1.0, -1.0]) {
            assert!((p - s * 0.001).abs() < 1e-8, "{p}");
        }
    }

    #[test]
    fn adam_descends_on_a_parabola() {
        let mut params = vec![Tensor::scalar(1.0)];
        let mut adam = Adam::new(AdamConfig::with_lr(0.1), &params);
        let f = |x: f64| x * x;
        let start = f(params[0].item());
        for _ in 0..2 {
            let g = Tensor::scalar(2.0 * params[0].item());
            adam.step(&mut params, &[g]).unwrap();
        }
        assert!(f(params[0].item()) < start);
    }
}
