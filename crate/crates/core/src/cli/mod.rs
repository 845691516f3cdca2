//! Command line front end: `generate`, `train`, `evaluate` and `ablate`.
//!
//! Every run writes into `<out_dir>/<dataset>/<method>/seed_<s>/`, and every
//! artifact carries the digest of the configuration that produced it.
//! Exit codes: 0 success, 2 bad configuration or arguments, 3 data or I/O
//! failure, 4 training divergence.

mod config;

pub use config::{parse_seeds, RunConfig, OUTPUT_ROOT_VAR};

use std::ffi::OsString;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use crate::bilevel::{self, write_log_csv, Method, TrainerOutput};
use crate::error::{Error, Result};
use crate::eval::{
    average_precision, explanation_overlap, faithfulness_pos, r2, reproducibility, stability,
    MetricReport,
};
use crate::explainer::{influence_many, save_explanations, ExplainerParams};
use crate::gnn::{predict, GnnParams, ParamSet};
use crate::graphdata::{
    add_noise_edges, edge_alignment, generate_planted_clique, load_ground_truth, load_jsonl,
    save_ground_truth, save_jsonl, split, Dataset, FeatureKind, Graph, PlantedCliqueParams,
    SplitIndices,
};

#[derive(Debug, Parser)]
#[command(name = "rage", version, about = "Ante-hoc edge-influence explanations for graph neural networks")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Write a synthetic dataset.
    #[command(subcommand)]
    Generate(Generate),
    /// Train explainer and predictor for every configured seed.
    Train(RunArgs),
    /// Score saved runs and write a metrics CSV.
    Evaluate(RunArgs),
    /// Train all three variants per seed and write per-seed deltas.
    Ablate(RunArgs),
}

#[derive(Debug, Subcommand)]
enum Generate {
    /// Erdős–Rényi graphs, half with a planted clique.
    PlantedClique(CliqueArgs),
    /// Copy of a dataset with extra random edges in every graph.
    Noise(NoiseArgs),
}

#[derive(Debug, Args)]
struct CliqueArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 100)]
    num_graphs: usize,
    #[arg(long, default_value_t = 100)]
    num_nodes: usize,
    #[arg(long, default_value_t = 0.1)]
    edge_prob: f64,
    #[arg(long, default_value_t = 8)]
    clique_size: usize,
    #[arg(long, default_value_t = 64)]
    feature_dim: usize,
    /// gaussian, degree or constant.
    #[arg(long, default_value = "degree")]
    features: String,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Debug, Args)]
struct NoiseArgs {
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// New edges per graph.
    #[arg(long)]
    extra: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Debug, Args)]
struct RunArgs {
    /// `key = value` configuration file.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    dataset: Option<PathBuf>,
    #[arg(long)]
    method: Option<String>,
    /// `1-20` or `1,4,9`.
    #[arg(long)]
    seeds: Option<String>,
    #[arg(long)]
    out_dir: Option<PathBuf>,
    /// Seeds trained concurrently.
    #[arg(long)]
    parallel: Option<usize>,
    /// Any configuration key, e.g. `--set inner_lr=0.05`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

impl RunArgs {
    fn resolve(&self) -> Result<RunConfig> {
        let mut c = match &self.config {
            Some(p) => RunConfig::load(p)?,
            None => RunConfig::default(),
        };
        if let Some(d) = &self.dataset {
            c.dataset = Some(d.clone());
        }
        if let Some(m) = &self.method {
            c.method = m.parse()?;
        }
        if let Some(s) = &self.seeds {
            c.seeds = parse_seeds(s)?;
        }
        if let Some(o) = &self.out_dir {
            c.out_dir = o.clone();
        }
        if let Some(n) = self.parallel {
            c.parallel = n;
        }
        c.apply(self.overrides.iter().map(String::as_str))?;
        c.validate()?;
        Ok(c)
    }
}

/// Parses `args` (program name first), runs the command and returns the
/// process exit code.
pub fn run_cli<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    let outcome = match cli.command {
        Command::Generate(Generate::PlantedClique(a)) => cmd_planted_clique(&a),
        Command::Generate(Generate::Noise(a)) => cmd_noise(&a),
        Command::Train(a) => a.resolve().and_then(|c| cmd_train(&c)),
        Command::Evaluate(a) => a.resolve().and_then(|c| cmd_evaluate(&c)),
        Command::Ablate(a) => a.resolve().and_then(|c| cmd_ablate(&c)),
    };
    match outcome {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

fn create_dir(path: &Path) -> Result<()> {
    std::fs::create_dir_all(path).map_err(|e| Error::io(path, e))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value).expect("manifest serializes");
    std::fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
}

#[derive(Debug, Serialize)]
struct GenerateManifest {
    kind: &'static str,
    dataset: String,
    ground_truth: Option<String>,
    num_graphs: usize,
    seed: u64,
    params: serde_json::Value,
}

fn cmd_planted_clique(a: &CliqueArgs) -> Result<()> {
    let params = PlantedCliqueParams {
        num_graphs: a.num_graphs,
        num_nodes: a.num_nodes,
        edge_prob: a.edge_prob,
        clique_size: a.clique_size,
        feature_dim: a.feature_dim,
        features: a.features.parse::<FeatureKind>()?,
        seed: a.seed,
    };
    let (dataset, truth) = generate_planted_clique(&params)?;
    create_dir(&a.out)?;
    let data_file = format!("{}.jsonl", dataset.name);
    let truth_file = format!("{}.truth.jsonl", dataset.name);
    save_jsonl(&dataset, a.out.join(&data_file))?;
    save_ground_truth(&truth, a.out.join(&truth_file))?;
    write_json(
        &a.out.join("manifest.json"),
        &GenerateManifest {
            kind: "planted-clique",
            dataset: data_file.clone(),
            ground_truth: Some(truth_file),
            num_graphs: dataset.len(),
            seed: a.seed,
            params: serde_json::json!({
                "num_nodes": a.num_nodes,
                "edge_prob": a.edge_prob,
                "clique_size": a.clique_size,
                "feature_dim": a.feature_dim,
                "features": params.features.to_string(),
            }),
        },
    )?;
    println!("{}", a.out.join(data_file).display());
    Ok(())
}

fn cmd_noise(a: &NoiseArgs) -> Result<()> {
    let dataset = load_jsonl(&a.input)?;
    let noisy = add_noise_edges(&dataset, a.extra, a.seed)?;
    create_dir(&a.out)?;
    let data_file = format!("{}.jsonl", noisy.name);
    save_jsonl(&noisy, a.out.join(&data_file))?;
    write_json(
        &a.out.join("manifest.json"),
        &GenerateManifest {
            kind: "noise",
            dataset: data_file.clone(),
            ground_truth: None,
            num_graphs: noisy.len(),
            seed: a.seed,
            params: serde_json::json!({
                "input": a.input.display().to_string(),
                "extra": a.extra,
            }),
        },
    )?;
    println!("{}", a.out.join(data_file).display());
    Ok(())
}

/// Per-run manifest stored next to the checkpoints.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunManifest {
    pub dataset: String,
    pub method: String,
    pub seed: u64,
    pub split_seed: u64,
    pub config_digest: String,
    pub config: String,
    pub best_iteration: usize,
    pub iterations_run: usize,
    pub test_metric: f64,
}

pub fn run_dir(config: &RunConfig, dataset: &str, method: Method, seed: u64) -> PathBuf {
    config
        .out_dir
        .join(dataset)
        .join(method.tag())
        .join(format!("seed_{seed}"))
}

fn load_data(config: &RunConfig) -> Result<(Dataset, SplitIndices)> {
    let path = config
        .dataset
        .as_ref()
        .ok_or_else(|| Error::Config("no dataset given (use --dataset or dataset = ...)".into()))?;
    let dataset = load_jsonl(path)?;
    let splits = split(&dataset, config.split_seed)?;
    Ok((dataset, splits))
}

/// Runs `f` for every seed on `parallel` worker threads; results keep seed
/// order.
fn for_seeds<T: Send>(seeds: &[u64], parallel: usize, f: impl Fn(u64) -> Result<T> + Sync) -> Result<Vec<T>> {
    let next = AtomicUsize::new(0);
    let slots: Mutex<Vec<Option<Result<T>>>> = Mutex::new((0..seeds.len()).map(|_| None).collect());
    std::thread::scope(|s| {
        for _ in 0..parallel.min(seeds.len()).max(1) {
            s.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::SeqCst);
                if i >= seeds.len() {
                    break;
                }
                let r = f(seeds[i]);
                slots.lock().unwrap()[i] = Some(r);
            });
        }
    });
    slots
        .into_inner()
        .unwrap()
        .into_iter()
        .map(|r| r.expect("every seed ran"))
        .collect()
}

/// Trains one seed and writes its artifacts. Returns the output and the test
/// metric.
pub fn train_one(
    config: &RunConfig,
    dataset: &Dataset,
    splits: &SplitIndices,
    method: Method,
    seed: u64,
) -> Result<(TrainerOutput, f64)> {
    let out = bilevel::run(method, dataset, splits, &config.train_for_seed(seed))?;
    let test = bilevel::evaluate(dataset, &splits.test, Some(&out.explainer), &out.predictor)?;
    let dir = run_dir(config, &dataset.name, method, seed);
    create_dir(&dir)?;
    out.explainer.params().save(dir.join("explainer.params"))?;
    out.predictor.params().save(dir.join("predictor.params"))?;
    write_log_csv(dir.join("train_log.csv"), &out.log)?;
    save_explanations(dir.join("explanations.jsonl"), dataset, &splits.test, &out.explainer)?;
    write_json(
        &dir.join("run.json"),
        &RunManifest {
            dataset: dataset.name.clone(),
            method: method.tag().into(),
            seed,
            split_seed: config.split_seed,
            config_digest: config.digest(),
            config: config.canonical(),
            best_iteration: out.best_iteration,
            iterations_run: out.iterations_run,
            test_metric: test,
        },
    )?;
    Ok((out, test))
}

fn metric_name(dataset: &Dataset) -> &'static str {
    if dataset.task.is_classification() {
        "auc"
    } else {
        "mse"
    }
}

fn cmd_train(config: &RunConfig) -> Result<()> {
    let (dataset, splits) = load_data(config)?;
    let name = metric_name(&dataset);
    let results = for_seeds(&config.seeds, config.parallel, |seed| {
        let (out, test) = train_one(config, &dataset, &splits, config.method, seed)?;
        eprintln!(
            "seed {seed}: test {name} {test:.4} (best iteration {} of {})",
            out.best_iteration, out.iterations_run
        );
        Ok(test)
    })?;
    let mut report = MetricReport::new();
    for (&seed, &v) in config.seeds.iter().zip(&results) {
        report.push(&dataset.name, config.method.tag(), seed, name, v, &config.digest());
    }
    report.add_aggregates();
    let path = config.out_dir.join(&dataset.name).join(config.method.tag()).join("train_metrics.csv");
    report.write_csv(&path)?;
    println!("{}", path.display());
    Ok(())
}

/// Loaded checkpoint of one run.
pub struct SavedRun {
    pub manifest: RunManifest,
    pub explainer: ExplainerParams,
    pub predictor: GnnParams,
}

pub fn load_run(dir: &Path) -> Result<SavedRun> {
    let mpath = dir.join("run.json");
    let text = std::fs::read_to_string(&mpath).map_err(|e| Error::io(&mpath, e))?;
    let manifest: RunManifest = serde_json::from_str(&text).map_err(|e| Error::Parse {
        line: e.line(),
        message: format!("{}: {e}", mpath.display()),
    })?;
    let explainer = ExplainerParams::from_params(ParamSet::load(dir.join("explainer.params"))?)?;
    let predictor = GnnParams::from_params(ParamSet::load(dir.join("predictor.params"))?)?;
    Ok(SavedRun {
        manifest,
        explainer,
        predictor,
    })
}

fn influences(graphs: &[&Graph], phi: &ExplainerParams) -> Result<Vec<Vec<f64>>> {
    Ok(influence_many(graphs, phi)?.into_iter().map(|z| z.values).collect())
}

/// Metrics of one saved run, as `(name, value)` pairs.
pub fn score_run(
    config: &RunConfig,
    dataset: &Dataset,
    splits: &SplitIndices,
    run: &SavedRun,
    seed: u64,
) -> Result<Vec<(&'static str, f64)>> {
    let test: Vec<&Graph> = splits.test.iter().map(|&i| &dataset.graphs[i]).collect();
    let labels: Vec<f64> = test.iter().map(|g| g.label().as_f64()).collect();
    let z = influences(&test, &run.explainer)?;
    let preds = predict(&test, Some(&z), &run.predictor)?;
    let mut rows = Vec::new();
    if dataset.task.is_classification() {
        rows.push(("auc", crate::eval::auc(&preds, &labels)?));
        rows.push(("average_precision", average_precision(&preds, &labels)?));
        rows.push((
            "faithfulness_pos",
            faithfulness_pos(dataset, &splits.test, &run.explainer, &run.predictor, config.faithfulness_k)?,
        ));
    } else {
        rows.push(("mse", crate::eval::mse(&preds, &labels)?));
        rows.push(("r2", r2(&preds, &labels)?));
    }
    if let Some(path) = &config.ground_truth {
        let truth = load_ground_truth(path)?;
        if truth.len() != dataset.len() {
            return Err(Error::Contract(format!(
                "{}: ground truth covers {} graphs, dataset has {}",
                path.display(),
                truth.len(),
                dataset.len()
            )));
        }
        let t: Vec<_> = splits.test.iter().map(|&i| truth[i].clone()).collect();
        if t.iter().any(|gt| !gt.is_empty()) {
            rows.push(("explanation_precision", explanation_overlap(&test, &z, &t)?));
        }
    }
    if let Some(path) = &config.noisy_dataset {
        let noisy = load_jsonl(path)?;
        if noisy.len() != dataset.len() {
            return Err(Error::Contract(format!(
                "{}: noisy dataset has {} graphs, expected {}",
                path.display(),
                noisy.len(),
                dataset.len()
            )));
        }
        let noisy_test: Vec<&Graph> = splits.test.iter().map(|&i| &noisy.graphs[i]).collect();
        let zn = influences(&noisy_test, &run.explainer)?;
        let maps = test
            .iter()
            .zip(&noisy_test)
            .map(|(g, n)| edge_alignment(g, n))
            .collect::<Result<Vec<_>>>()?;
        let (cos, r) = stability(&z, &zn, &maps)?;
        rows.push(("stability_cosine", cos));
        rows.push(("stability_pearson", r));
    }
    if config.reproducibility_fraction > 0.0 {
        let cfg = config.train_for_seed(seed);
        rows.push((
            "reproducibility",
            reproducibility(&run.explainer, dataset, splits, config.reproducibility_fraction, &cfg)?,
        ));
    }
    Ok(rows)
}

fn cmd_evaluate(config: &RunConfig) -> Result<()> {
    let (dataset, splits) = load_data(config)?;
    let per_seed = for_seeds(&config.seeds, config.parallel, |seed| {
        let run = load_run(&run_dir(config, &dataset.name, config.method, seed))?;
        score_run(config, &dataset, &splits, &run, seed)
    })?;
    let mut report = MetricReport::new();
    for (&seed, rows) in config.seeds.iter().zip(&per_seed) {
        for &(metric, v) in rows {
            report.push(&dataset.name, config.method.tag(), seed, metric, v, &config.digest());
        }
    }
    report.add_aggregates();
    for r in report.rows.iter().filter(|r| r.seed == "mean") {
        eprintln!("{} {}: {:.4}", r.method, r.metric, r.value);
    }
    let path = config.out_dir.join(&dataset.name).join(config.method.tag()).join("metrics.csv");
    report.write_csv(&path)?;
    println!("{}", path.display());
    Ok(())
}

#[derive(Debug, Serialize)]
struct AblationRow {
    dataset: String,
    seed: u64,
    split_seed: u64,
    metric: &'static str,
    rage: f64,
    rage_single: f64,
    rage_keep: f64,
    rage_minus_single: f64,
    rage_minus_keep: f64,
    config_digest: String,
}

fn cmd_ablate(config: &RunConfig) -> Result<()> {
    let (dataset, splits) = load_data(config)?;
    let name = metric_name(&dataset);
    let per_seed = for_seeds(&config.seeds, config.parallel, |seed| {
        let mut v = [0.0; 3];
        for (slot, method) in v.iter_mut().zip(Method::ALL) {
            *slot = train_one(config, &dataset, &splits, method, seed)?.1;
        }
        eprintln!("seed {seed}: rage {:.4}  single {:.4}  keep {:.4}", v[0], v[1], v[2]);
        Ok(v)
    })?;
    let digest = config.digest();
    let root = config.out_dir.join(&dataset.name);
    create_dir(&root)?;
    let path = root.join("ablation.csv");
    let mut w = csv::Writer::from_path(&path).map_err(|e| crate::bilevel::log::csv_error(&path, e))?;
    let mut report = MetricReport::new();
    for (&seed, v) in config.seeds.iter().zip(&per_seed) {
        let row = AblationRow {
            dataset: dataset.name.clone(),
            seed,
            split_seed: config.split_seed,
            metric: name,
            rage: v[0],
            rage_single: v[1],
            rage_keep: v[2],
            rage_minus_single: v[0] - v[1],
            rage_minus_keep: v[0] - v[2],
            config_digest: digest.clone(),
        };
        w.serialize(&row).map_err(|e| crate::bilevel::log::csv_error(&path, e))?;
        for (method, &x) in Method::ALL.iter().zip(v) {
            report.push(&dataset.name, method.tag(), seed, name, x, &digest);
        }
    }
    w.flush().map_err(|e| Error::io(&path, e))?;
    report.add_aggregates();
    report.write_csv(root.join("ablation_metrics.csv"))?;
    println!("{}", path.display());
    Ok(())
}
