//! All search methods on one scenario, side by side.
//!
//! cargo run --release --example compare_methods [scenario.json] [seed]

use std::path::PathBuf;

use risplan::agent::{train, TrainConfig, DEFAULT_OBJECTIVE_FLOOR_DB};
use risplan::baselines::{clustered_exhaustive, exhaustive_search, greedy, kmeans_clusters, random_baseline};
use risplan::harness::bundled_scene;
use risplan::scenario::{load_scenario, Evaluator};

fn main() -> anyhow::Result<()> {
    let mut args = std::env::args().skip(1);
    let path = args.next().map(PathBuf::from).unwrap_or_else(|| bundled_scene("deadzone_room.json"));
    let seed: u64 = args.next().map(|s| s.parse()).transpose()?.unwrap_or(0);
    let eval = Evaluator::new(load_scenario(&path)?);
    let base = eval.baseline();

    let mut rows: Vec<(String, f64, u64)> = Vec::new();
    let es = exhaustive_search(&eval)?;
    rows.push(("exhaustive".into(), es.best_objective, es.states_evaluated));
    let g = greedy(&eval)?;
    rows.push(("greedy".into(), g.best_objective, g.states_evaluated));
    let k = eval.scenario().n_tp().min(2);
    let c = clustered_exhaustive(&eval, &kmeans_clusters(&eval.scenario().tps, k))?;
    rows.push((format!("clustered-es (k={k})"), c.best_objective, c.states_evaluated));
    let r = random_baseline(&eval, 1000, seed, DEFAULT_OBJECTIVE_FLOOR_DB)?;
    rows.push(("random max of 1000".into(), r.max, 1000));
    println!("random: mean {:.2} dB, stddev {:.2} dB", r.mean, r.stddev);
    let t = train(&eval, &TrainConfig { seed, ..TrainConfig::default() })?;
    rows.push((format!("dql (seed {seed})"), t.best_objective, t.states_evaluated));

    rows.sort_by(|a, b| b.1.total_cmp(&a.1));
    println!("{:<22} {:>10} {:>9} {:>8}", "method", "objective", "gain", "states");
    for (name, v, n) in rows {
        println!("{name:<22} {v:>7.2} dB {:>6.2} dB {n:>8}", v - base);
    }
    Ok(())
}
