use std::path::Path;

use serde::Serialize;

use crate::error::{Error, Result};

/// One row of the training log.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct IterationLog {
    pub tau: usize,
    pub train_loss: f64,
    /// Absent for single-level training, which has no support set.
    pub support_loss: Option<f64>,
    /// Validation AUC (classification) or MSE (regression).
    pub val_metric: f64,
    pub wall_seconds: f64,
}

pub fn write_log_csv(path: impl AsRef<Path>, log: &[IterationLog]) -> Result<()> {
    let path = path.as_ref();
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_error(path, e))?;
    for row in log {
        w.serialize(row).map_err(|e| csv_error(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub(crate) fn csv_error(path: &Path, e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        other => Error::Contract(format!("{}: csv error {other:?}", path.display())),
    }
}
