use crate::error::{Error, Result};
use crate::gnn::Architecture;

/// Which training scheme to run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Method {
    /// Bilevel training with the predictor reinitialized every outer step.
    Rage,
    /// Joint single-level training of explainer and predictor.
    Single,
    /// Bilevel training that carries the predictor across outer steps.
    Keep,
}

impl Method {
    pub const ALL: [Method; 3] = [Method::Rage, Method::Single, Method::Keep];

    pub fn tag(self) -> &'static str {
        match self {
            Method::Rage => "rage",
            Method::Single => "rage-single",
            Method::Keep => "rage-keep",
        }
    }
}

impl std::str::FromStr for Method {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "rage" | "full" => Ok(Method::Rage),
            "rage-single" | "single" => Ok(Method::Single),
            "rage-keep" | "keep" => Ok(Method::Keep),
            other => Err(Error::Config(format!("unknown method {other:?}"))),
        }
    }
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.tag())
    }
}

/// Optimizer of the predictor parameters in the inner loop.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum InnerOptimizer {
    Sgd,
    Adam,
}

impl std::str::FromStr for InnerOptimizer {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sgd" => Ok(InnerOptimizer::Sgd),
            "adam" => Ok(InnerOptimizer::Adam),
            other => Err(Error::Config(format!("unknown inner optimizer {other:?}"))),
        }
    }
}

impl std::fmt::Display for InnerOptimizer {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            InnerOptimizer::Sgd => "sgd",
            InnerOptimizer::Adam => "adam",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    /// Unrolled inner optimizer steps per outer iteration.
    pub inner_steps: usize,
    /// Maximum number of outer iterations.
    pub outer_steps: usize,
    pub inner_optimizer: InnerOptimizer,
    pub inner_lr: f64,
    pub outer_lr: f64,
    pub inner_l2: f64,
    pub outer_l1: f64,
    pub outer_l2: f64,
    /// Outer iterations without validation improvement before stopping.
    pub patience: usize,
    pub seed: u64,
    pub arch: Architecture,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            inner_steps: 20,
            outer_steps: 100,
            inner_optimizer: InnerOptimizer::Adam,
            inner_lr: DEFAULT_INNER_LR,
            outer_lr: 0.001,
            inner_l2: 0.001,
            outer_l1: 0.001,
            outer_l2: 0.001,
            patience: 10,
            seed: 1,
            arch: Architecture::default(),
        }
    }
}

pub const DEFAULT_INNER_LR: f64 = 0.03;

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.inner_steps == 0 || self.outer_steps == 0 {
            return Err(Error::Config("inner_steps and outer_steps must be >= 1".into()));
        }
        for (name, v) in [("inner_lr", self.inner_lr), ("outer_lr", self.outer_lr)] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("{name} must be > 0, got {v}")));
            }
        }
        for (name, v) in [
            ("inner_l2", self.inner_l2),
            ("outer_l1", self.outer_l1),
            ("outer_l2", self.outer_l2),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("{name} must be >= 0, got {v}")));
            }
        }
        if self.arch.hidden_dim == 0 || self.arch.num_layers == 0 {
            return Err(Error::Config("hidden_dim and num_layers must be >= 1".into()));
        }
        Ok(())
    }
}
