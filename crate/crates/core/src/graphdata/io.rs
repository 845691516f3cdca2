use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::graph::{Dataset, Graph, GroundTruth, Label, Task};
use crate::autodiff::Tensor;
use crate::error::{Error, Result};

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct GraphRecord {
    num_nodes: usize,
    edges: Vec<[usize; 2]>,
    features: Vec<Vec<f64>>,
    label: Label,
}

fn json_error(line: usize, e: serde_json::Error) -> Error {
    if e.is_data() {
        Error::Schema {
            line,
            message: e.to_string(),
        }
    } else {
        Error::Parse {
            line,
            message: e.to_string(),
        }
    }
}

fn read_lines(path: &Path) -> Result<Vec<(usize, String)>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if !line.trim().is_empty() {
            out.push((i + 1, line));
        }
    }
    Ok(out)
}

/// Reads one graph per line. The task is inferred from the labels: all
/// integral labels mean classification, anything else regression. Use
/// [`Dataset::new`] on the graphs to force a task.
pub fn load_jsonl(path: impl AsRef<Path>) -> Result<Dataset> {
    let path = path.as_ref();
    let mut graphs = Vec::new();
    let mut feature_dim = None;
    for (line, text) in read_lines(path)? {
        let rec: GraphRecord = serde_json::from_str(&text).map_err(|e| json_error(line, e))?;
        let d = rec.features.first().map_or(0, Vec::len);
        if rec.features.iter().any(|r| r.len() != d) {
            return Err(Error::Schema {
                line,
                message: "feature rows have different lengths".into(),
            });
        }
        match feature_dim {
            None => feature_dim = Some(d),
            Some(fd) if fd != d && rec.num_nodes > 0 => {
                return Err(Error::Schema {
                    line,
                    message: format!("feature_dim {d} differs from {fd} on earlier lines"),
                })
            }
            _ => {}
        }
        let feats = Tensor::from_rows(&rec.features).map_err(|e| Error::Schema {
            line,
            message: e.to_string(),
        })?;
        let feats = if rec.features.is_empty() {
            Tensor::zeros(0, feature_dim.unwrap_or(0))
        } else {
            feats
        };
        let edges = rec.edges.iter().map(|&[u, v]| (u, v)).collect();
        let graph = Graph::new(rec.num_nodes, edges, feats, rec.label).map_err(|e| {
            Error::Schema {
                line,
                message: e.to_string(),
            }
        })?;
        graphs.push(graph);
    }
    let task = infer_task(&graphs);
    let graphs = match task {
        Task::Regression => graphs
            .into_iter()
            .map(|g| {
                let l = Label::Value(g.label().as_f64());
                Graph::new(g.num_nodes(), g.edges().to_vec(), g.features().clone(), l)
            })
            .collect::<Result<_>>()?,
        Task::Classification { .. } => graphs,
    };
    let name = path
        .file_stem()
        .map_or_else(|| "dataset".to_string(), |s| s.to_string_lossy().into_owned());
    Dataset::new(name, task, graphs)
}

fn infer_task(graphs: &[Graph]) -> Task {
    let mut max = 0;
    for g in graphs {
        match g.label() {
            Label::Class(c) => max = max.max(c),
            Label::Value(_) => return Task::Regression,
        }
    }
    Task::Classification {
        num_classes: (max as usize + 1).max(2),
    }
}

pub fn save_jsonl(dataset: &Dataset, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for g in &dataset.graphs {
        let rec = GraphRecord {
            num_nodes: g.num_nodes(),
            edges: g.edges().iter().map(|&(u, v)| [u, v]).collect(),
            features: (0..g.num_nodes())
                .map(|r| g.features().row_slice(r).to_vec())
                .collect(),
            label: g.label(),
        };
        let line = serde_json::to_string(&rec).expect("graph records always serialize");
        writeln!(w, "{line}").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// One JSON array of `[u, v]` pairs per line, parallel to the dataset file.
pub fn save_ground_truth(truth: &GroundTruth, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for edges in truth {
        let pairs: Vec<[usize; 2]> = edges.iter().map(|&(u, v)| [u, v]).collect();
        let line = serde_json::to_string(&pairs).expect("edge lists always serialize");
        writeln!(w, "{line}").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn load_ground_truth(path: impl AsRef<Path>) -> Result<GroundTruth> {
    read_lines(path.as_ref())?
        .into_iter()
        .map(|(line, text)| {
            let pairs: Vec<[usize; 2]> =
                serde_json::from_str(&text).map_err(|e| json_error(line, e))?;
            Ok(pairs.into_iter().map(|[u, v]| (u.min(v), u.max(v))).collect())
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write(text: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(text.as_bytes()).unwrap();
        f
    }

    #[test]
    fn two_node_graph_parses() {
        let f = write(r#"{"num_nodes": 2, "edges": [[1, 0]], "features": [[0.5], [1.5]], "label": 1}"#);
        let ds = load_jsonl(f.path()).unwrap();
        assert_eq!(ds.len(), 1);
        assert_eq!(ds.graphs[0].num_nodes(), 2);
        assert_eq!(ds.graphs[0].edges(), &[(0, 1)]);
        assert_eq!(ds.task, Task::Classification { num_classes: 2 });
    }

    #[test]
    fn missing_label_names_the_field() {
        let f = write("{\"num_nodes\": 1, \"edges\": [], \"features\": [[0.0]]}\n");
        match load_jsonl(f.path()) {
            Err(Error::Schema { line, message }) => {
                assert_eq!(line, 1);
                assert!(message.contains("label"), "{message}");
            }
            other => panic!("expected schema error, got {other:?}"),
        }
    }

    #[test]
    fn malformed_line_reports_line_number() {
        let ok = r#"{"num_nodes": 1, "edges": [], "features": [[0.0]], "label": 0}"#;
        let f = write(&format!("{ok}\n{{not json\n"));
        match load_jsonl(f.path()) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn inconsistent_feature_dim_is_schema_error() {
        let a = r#"{"num_nodes": 1, "edges": [], "features": [[0.0]], "label": 0}"#;
        let b = r#"{"num_nodes": 1, "edges": [], "features": [[0.0, 1.0]], "label": 1}"#;
        let f = write(&format!("{a}\n{b}\n"));
        assert!(matches!(load_jsonl(f.path()), Err(Error::Schema { line: 2, .. })));
    }

    #[test]
    fn real_labels_make_a_regression_task() {
        let a = r#"{"num_nodes": 1, "edges": [], "features": [[0.0]], "label": 0.25}"#;
        let b = r#"{"num_nodes": 1, "edges": [], "features": [[0.0]], "label": 3}"#;
        let f = write(&format!("{a}\n{b}\n"));
        let ds = load_jsonl(f.path()).unwrap();
        assert_eq!(ds.task, Task::Regression);
        assert_eq!(ds.labels(), vec![0.25, 3.0]);
    }

    #[test]
    fn missing_file_names_the_path() {
        let err = load_jsonl("/nonexistent/graphs.jsonl").unwrap_err();
        assert!(err.to_string().contains("/nonexistent/graphs.jsonl"));
    }
}
