use std::path::{Path, PathBuf};

use sha2::{Digest, Sha256};

use crate::bilevel::{Method, TrainConfig};
use crate::error::{Error, Result};
use crate::gnn::Architecture;

/// Environment variable naming the default output root.
pub const OUTPUT_ROOT_VAR: &str = "RAGE_OUTPUT_ROOT";

/// Everything a command needs, read from a flat `key = value` file and then
/// overridden by `--set key=value` flags.
///
/// Keys: `dataset`, `ground_truth`, `noisy_dataset`, `method`, `split_seed`,
/// `seeds` (`1-20` or `1,4,9`), `out_dir`, `parallel`, `inner_steps`,
/// `outer_steps`, `inner_optimizer`, `inner_lr`, `outer_lr`, `inner_l2`,
/// `outer_l1`, `outer_l2`, `patience`, `hidden_dim`, `num_layers`,
/// `reproducibility_fraction` (0 disables), `faithfulness_k`.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub dataset: Option<PathBuf>,
    pub ground_truth: Option<PathBuf>,
    pub noisy_dataset: Option<PathBuf>,
    pub method: Method,
    pub split_seed: u64,
    pub seeds: Vec<u64>,
    pub out_dir: PathBuf,
    pub parallel: usize,
    pub train: TrainConfig,
    pub reproducibility_fraction: f64,
    pub faithfulness_k: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            dataset: None,
            ground_truth: None,
            noisy_dataset: None,
            method: Method::Rage,
            split_seed: 0,
            seeds: (1..=20).collect(),
            out_dir: std::env::var_os(OUTPUT_ROOT_VAR)
                .map(PathBuf::from)
                .unwrap_or_else(|| PathBuf::from("runs")),
            parallel: 1,
            train: TrainConfig::default(),
            reproducibility_fraction: 0.0,
            faithfulness_k: 28,
        }
    }
}

fn parse_num<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::Config(format!("bad value {value:?} for key {key}")))
}

pub fn parse_seeds(value: &str) -> Result<Vec<u64>> {
    let mut seeds = Vec::new();
    for part in value.split(',').map(str::trim).filter(|p| !p.is_empty()) {
        match part.split_once('-') {
            Some((a, b)) => {
                let (a, b): (u64, u64) = (parse_num("seeds", a.trim())?, parse_num("seeds", b.trim())?);
                if a > b {
                    return Err(Error::Config(format!("empty seed range {part:?}")));
                }
                seeds.extend(a..=b);
            }
            None => seeds.push(parse_num("seeds", part)?),
        }
    }
    if seeds.is_empty() {
        return Err(Error::Config("no seeds given".into()));
    }
    Ok(seeds)
}

fn format_seeds(seeds: &[u64]) -> String {
    seeds.iter().map(u64::to_string).collect::<Vec<_>>().join(",")
}

impl RunConfig {
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let value = value.trim();
        let path = || (!value.is_empty()).then(|| PathBuf::from(value));
        match key.trim() {
            "dataset" => self.dataset = path(),
            "ground_truth" => self.ground_truth = path(),
            "noisy_dataset" => self.noisy_dataset = path(),
            "method" => self.method = value.parse()?,
            "split_seed" => self.split_seed = parse_num(key, value)?,
            "seeds" => self.seeds = parse_seeds(value)?,
            "out_dir" => self.out_dir = PathBuf::from(value),
            "parallel" => self.parallel = parse_num(key, value)?,
            "inner_steps" => self.train.inner_steps = parse_num(key, value)?,
            "outer_steps" => self.train.outer_steps = parse_num(key, value)?,
            "inner_optimizer" => self.train.inner_optimizer = value.parse()?,
            "inner_lr" => self.train.inner_lr = parse_num(key, value)?,
            "outer_lr" => self.train.outer_lr = parse_num(key, value)?,
            "inner_l2" => self.train.inner_l2 = parse_num(key, value)?,
            "outer_l1" => self.train.outer_l1 = parse_num(key, value)?,
            "outer_l2" => self.train.outer_l2 = parse_num(key, value)?,
            "patience" => self.train.patience = parse_num(key, value)?,
            "hidden_dim" => self.train.arch.hidden_dim = parse_num(key, value)?,
            "num_layers" => self.train.arch.num_layers = parse_num(key, value)?,
            "reproducibility_fraction" => self.reproducibility_fraction = parse_num(key, value)?,
            "faithfulness_k" => self.faithfulness_k = parse_num(key, value)?,
            other => return Err(Error::Config(format!("unknown config key {other:?}"))),
        }
        Ok(())
    }

    /// Applies `key=value` assignments.
    pub fn apply<'a>(&mut self, assignments: impl IntoIterator<Item = &'a str>) -> Result<()> {
        for a in assignments {
            let (k, v) = a
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("expected key=value, got {a:?}")))?;
            self.set(k, v)?;
        }
        Ok(())
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut config = RunConfig::default();
        for (i, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap().trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected key = value", i + 1)))?;
            config
                .set(k, v)
                .map_err(|e| Error::Config(format!("line {}: {e}", i + 1)))?;
        }
        Ok(config)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    pub fn validate(&self) -> Result<()> {
        self.train.validate()?;
        if self.parallel == 0 {
            return Err(Error::Config("parallel must be >= 1".into()));
        }
        if !(0.0..=1.0).contains(&self.reproducibility_fraction) {
            return Err(Error::Config("reproducibility_fraction must lie in [0, 1]".into()));
        }
        if self.faithfulness_k == 0 {
            return Err(Error::Config("faithfulness_k must be >= 1".into()));
        }
        Ok(())
    }

    /// Canonical text of every key that influences results; `out_dir` and
    /// `parallel` are excluded.
    pub fn canonical(&self) -> String {
        let p = |v: &Option<PathBuf>| v.as_ref().map(|p| p.display().to_string()).unwrap_or_default();
        let t = &self.train;
        let Architecture {
            hidden_dim,
            num_layers,
        } = t.arch;
        let pairs = [
            ("dataset", p(&self.dataset)),
            ("faithfulness_k", self.faithfulness_k.to_string()),
            ("ground_truth", p(&self.ground_truth)),
            ("hidden_dim", hidden_dim.to_string()),
            ("inner_l2", t.inner_l2.to_string()),
            ("inner_lr", t.inner_lr.to_string()),
            ("inner_optimizer", t.inner_optimizer.to_string()),
            ("inner_steps", t.inner_steps.to_string()),
            ("method", self.method.to_string()),
            ("noisy_dataset", p(&self.noisy_dataset)),
            ("num_layers", num_layers.to_string()),
            ("outer_l1", t.outer_l1.to_string()),
            ("outer_l2", t.outer_l2.to_string()),
            ("outer_lr", t.outer_lr.to_string()),
            ("outer_steps", t.outer_steps.to_string()),
            ("patience", t.patience.to_string()),
            ("reproducibility_fraction", self.reproducibility_fraction.to_string()),
            ("seeds", format_seeds(&self.seeds)),
            ("split_seed", self.split_seed.to_string()),
        ];
        pairs.iter().map(|(k, v)| format!("{k} = {v}\n")).collect()
    }

    /// First 16 hex digits of the SHA-256 of the canonical text.
    pub fn digest(&self) -> String {
        let hash = Sha256::digest(self.canonical().as_bytes());
        hex::encode(&hash[..8])
    }

    pub fn train_for_seed(&self, seed: u64) -> TrainConfig {
        TrainConfig {
            seed,
            ..self.train.clone()
        }
    }
}
