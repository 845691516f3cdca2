use rand::seq::SliceRandom;

use super::graph::Dataset;
use crate::error::{Error, Result};
use crate::seed::{rng, STREAM_RESPLIT, STREAM_SPLIT};

/// Disjoint train/validation/test index lists.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SplitIndices {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

/// Seeded shuffle followed by an 80/10/10 partition.
pub fn split(dataset: &Dataset, seed: u64) -> Result<SplitIndices> {
    let n = dataset.len();
    if n < 10 {
        return Err(Error::Parameter(format!(
            "splitting needs at least 10 graphs, dataset has {n}"
        )));
    }
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut rng(seed, &[STREAM_SPLIT]));
    let n_val = (n as f64 * 0.1).round() as usize;
    let n_test = n_val;
    let n_train = n - n_val - n_test;
    let test = idx.split_off(n_train + n_val);
    let val = idx.split_off(n_train);
    Ok(SplitIndices {
        train: idx,
        val,
        test,
    })
}

/// Fresh 50/50 partition of the training indices into inner-train and
/// support, seeded by `(run_seed, tau)`.
pub fn resplit_train_support(
    train: &[usize],
    run_seed: u64,
    tau: usize,
) -> Result<(Vec<usize>, Vec<usize>)> {
    if train.len() < 2 {
        return Err(Error::Parameter(format!(
            "train/support resplit needs at least 2 graphs, got {}",
            train.len()
        )));
    }
    let mut idx = train.to_vec();
    idx.shuffle(&mut rng(run_seed, &[STREAM_RESPLIT, tau as u64]));
    let support = idx.split_off(idx.len() / 2);
    Ok((idx, support))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::Tensor;
    use crate::graphdata::{Graph, Label, Task};

    fn dataset(n: usize) -> Dataset {
        let graphs = (0..n)
            .map(|i| Graph::new(1, vec![], Tensor::zeros(1, 1), Label::Class((i % 2) as u64)).unwrap())
            .collect();
        Dataset::new("d", Task::Classification { num_classes: 2 }, graphs).unwrap()
    }

    #[test]
    fn eighty_ten_ten() {
        let s = split(&dataset(100), 0).unwrap();
        assert_eq!((s.train.len(), s.val.len(), s.test.len()), (80, 10, 10));
        let mut all: Vec<_> = s.train.iter().chain(&s.val).chain(&s.test).copied().collect();
        all.sort_unstable();
        assert_eq!(all, (0..100).collect::<Vec<_>>());
    }

    #[test]
    fn split_is_seeded() {
        let d = dataset(100);
        assert_eq!(split(&d, 0).unwrap(), split(&d, 0).unwrap());
        assert_ne!(split(&d, 0).unwrap(), split(&d, 1).unwrap());
    }

    #[test]
    fn too_small_to_split() {
        assert!(matches!(split(&dataset(9), 0), Err(Error::Parameter(_))));
    }

    #[test]
    fn resplit_halves_and_varies_with_tau() {
        let train: Vec<usize> = (100..180).collect();
        let (a, b) = resplit_train_support(&train, 3, 0).unwrap();
        assert_eq!((a.len(), b.len()), (40, 40));
        let mut all: Vec<_> = a.iter().chain(&b).copied().collect();
        all.sort_unstable();
        assert_eq!(all, train);
        let (c, _) = resplit_train_support(&train, 3, 1).unwrap();
        assert_ne!(a, c);
        assert!(resplit_train_support(&[1], 0, 0).is_err());
    }
}
