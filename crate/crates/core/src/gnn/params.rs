use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{Tape, Tensor, Var};
use crate::error::{Error, Result};

/// Ordered, named parameter tensors.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamSet {
    names: Vec<String>,
    tensors: Vec<Tensor>,
}

impl ParamSet {
    pub fn new(names: Vec<String>, tensors: Vec<Tensor>) -> Result<Self> {
        if names.len() != tensors.len() {
            return Err(Error::Contract(format!(
                "{} names for {} tensors",
                names.len(),
                tensors.len()
            )));
        }
        Ok(ParamSet { names, tensors })
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn tensors(&self) -> &[Tensor] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [Tensor] {
        &mut self.tensors
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.names
            .iter()
            .position(|n| n == name)
            .map(|i| &self.tensors[i])
    }

    pub fn num_scalars(&self) -> usize {
        self.tensors.iter().map(Tensor::len).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.tensors.iter().all(Tensor::is_finite)
    }

    /// Puts every tensor on the tape, trainable or constant.
    pub fn on_tape(&self, tape: &mut Tape, trainable: bool) -> Vec<Var> {
        self.tensors
            .iter()
            .map(|t| {
                if trainable {
                    tape.leaf(t.clone())
                } else {
                    tape.constant(t.clone())
                }
            })
            .collect()
    }

    /// Replaces the tensors with the current values of tape nodes.
    pub fn from_tape(&self, tape: &Tape, vars: &[Var]) -> ParamSet {
        ParamSet {
            names: self.names.clone(),
            tensors: vars.iter().map(|&v| tape.value(v).clone()).collect(),
        }
    }

    /// Text checkpoint: a header line per tensor (`name rows cols`) followed
    /// by one line per row. Values use the shortest round-trip decimal form.
    pub fn to_text(&self) -> String {
        let mut out = String::from("# rage parameters v1\n");
        for (name, t) in self.names.iter().zip(&self.tensors) {
            writeln!(out, "{name} {} {}", t.rows(), t.cols()).unwrap();
            for r in 0..t.rows() {
                let row: Vec<String> = t.row_slice(r).iter().map(|v| v.to_string()).collect();
                writeln!(out, "{}", row.join(" ")).unwrap();
            }
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut lines = text
            .lines()
            .enumerate()
            .filter(|(_, l)| !l.trim().is_empty() && !l.starts_with('#'));
        let mut names = Vec::new();
        let mut tensors = Vec::new();
        while let Some((ln, header)) = lines.next() {
            let bad = |m: String| Error::Parse {
                line: ln + 1,
                message: m,
            };
            let parts: Vec<&str> = header.split_whitespace().collect();
            let [name, rows, cols] = parts[..] else {
                return Err(bad(format!("expected `name rows cols`, got {header:?}")));
            };
            let rows: usize = rows.parse().map_err(|_| bad(format!("bad row count {rows:?}")))?;
            let cols: usize = cols.parse().map_err(|_| bad(format!("bad column count {cols:?}")))?;
            let mut data = Vec::with_capacity(rows * cols);
            for _ in 0..rows {
                let (rl, row) = lines
                    .next()
                    .ok_or_else(|| bad(format!("tensor {name} is truncated")))?;
                for tok in row.split_whitespace() {
                    data.push(tok.parse::<f64>().map_err(|_| Error::Parse {
                        line: rl + 1,
                        message: format!("bad value {tok:?}"),
                    })?);
                }
            }
            names.push(name.to_string());
            tensors.push(Tensor::new(rows, cols, data).map_err(|e| bad(e.to_string()))?);
        }
        ParamSet::new(names, tensors)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_text(&text)
    }
}

/// Glorot-uniform weight in `[-b, b]`, `b = sqrt(6 / (fan_in + fan_out))`.
pub(crate) fn glorot(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Tensor {
    let bound = (6.0 / (rows + cols).max(1) as f64).sqrt();
    let data = (0..rows * cols)
        .map(|_| rng.gen_range(-bound..=bound))
        .collect();
    Tensor::new(rows, cols, data).unwrap()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    proptest! {
        #[test]
        fn text_round_trip_is_exact(vals in prop::collection::vec(-1e6f64..1e6, 6), tiny in -1e-300f64..1e-300) {
            let mut v = vals.clone();
            v[0] = tiny;
            let p = ParamSet::new(
                vec!["a".into(), "b".into()],
                vec![Tensor::new(2, 2, v[..4].to_vec()).unwrap(), Tensor::new(1, 2, v[4..].to_vec()).unwrap()],
            ).unwrap();
            prop_assert_eq!(ParamSet::from_text(&p.to_text()).unwrap(), p);
        }
    }

    #[test]
    fn truncated_checkpoint_is_rejected() {
        assert!(ParamSet::from_text("w 2 2\n1 2\n").is_err());
        assert!(ParamSet::from_text("w 1 2\n1 x\n").is_err());
    }
}
