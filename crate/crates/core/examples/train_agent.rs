//! Deep Q-learning on the dead-zone hall, compared against exhaustive search.
//!
//! cargo run --release --example train_agent -- [first_seed] [seeds] [frames]

use std::time::Instant;

use risplan::agent::{train, TrainConfig};
use risplan::baselines::exhaustive_search;
use risplan::harness::bundled_scene;
use risplan::scenario::{load_scenario, Evaluator};

fn main() -> anyhow::Result<()> {
    let args: Vec<u64> = std::env::args().skip(1).map(|a| a.parse()).collect::<Result<_, _>>()?;
    let first = args.first().copied().unwrap_or(0);
    let seeds = args.get(1).copied().unwrap_or(3);
    let frames = args.get(2).copied().unwrap_or(20_000);

    let eval = Evaluator::new(load_scenario(&bundled_scene("deadzone_room.json"))?);
    let es = exhaustive_search(&eval)?;
    println!("ES optimum {:.3} dB, BS-only {:.3} dB", es.best_objective, eval.baseline());
    for seed in first..first + seeds {
        let cfg = TrainConfig { total_frames: frames, seed, ..TrainConfig::default() };
        let start = Instant::now();
        let out = train(&eval, &cfg)?;
        println!(
            "seed {seed}: best {:.3} dB (gap {:.3} dB) at frame {}, {} episodes, {} distinct states, {:.1} s",
            out.best_objective,
            es.best_objective - out.best_objective,
            out.best_frame,
            out.log.episode_best.len(),
            out.states_evaluated,
            start.elapsed().as_secs_f64()
        );
    }
    Ok(())
}
