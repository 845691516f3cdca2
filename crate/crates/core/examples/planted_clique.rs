//! Trains on a generated planted-clique dataset and reports test AUC and
//! clique recovery.
//!
//! cargo run --release --example planted_clique -- [method|plain] [seed] [outer_steps]

use std::time::Instant;

use rage::bilevel::{evaluate, run, train_plain, Method, TrainConfig};
use rage::eval::explanation_overlap;
use rage::explainer::influence_many;
use rage::graphdata::{generate_planted_clique, split, Graph, PlantedCliqueParams};

fn main() -> rage::Result<()> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let method_arg = args.first().map_or("rage", String::as_str);
    let mut config = TrainConfig {
        seed: args.get(1).map_or(1, |s| s.parse().expect("seed")),
        ..TrainConfig::default()
    };
    if let Some(k) = args.get(2) {
        config.outer_steps = k.parse().expect("outer steps");
    }

    let (data, truth) = generate_planted_clique(&PlantedCliqueParams::default())?;
    let splits = split(&data, 0)?;
    let start = Instant::now();
    if method_arg == "plain" {
        let theta = train_plain(&data, &splits, &config)?;
        let auc = evaluate(&data, &splits.test, None, &theta)?;
        println!("plain test_auc {auc:.4} in {:.1}s", start.elapsed().as_secs_f64());
        return Ok(());
    }
    let method: Method = method_arg.parse()?;
    let out = run(method, &data, &splits, &config)?;
    for row in &out.log {
        println!("tau {:3} train {:.4} val {:.4}", row.tau, row.train_loss, row.val_metric);
    }
    let auc = evaluate(&data, &splits.test, Some(&out.explainer), &out.predictor)?;
    let graphs: Vec<&Graph> = splits.test.iter().map(|&i| &data.graphs[i]).collect();
    let z: Vec<Vec<f64>> = influence_many(&graphs, &out.explainer)?
        .into_iter()
        .map(|e| e.values)
        .collect();
    let gt: Vec<_> = splits.test.iter().map(|&i| truth[i].clone()).collect();
    let precision = explanation_overlap(&graphs, &z, &gt)?;
    println!(
        "{method} best {} of {} test_auc {auc:.4} precision {precision:.4} in {:.1}s",
        out.best_iteration,
        out.iterations_run,
        start.elapsed().as_secs_f64()
    );
    Ok(())
}
