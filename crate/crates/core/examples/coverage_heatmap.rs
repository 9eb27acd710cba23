//! Coverage of the dead-zone hall before and after the ES deployment,
//! written as CSV and PGM next to the working directory.
//!
//! cargo run --release --example coverage_heatmap [cell_m]

use risplan::baselines::exhaustive_search;
use risplan::harness::{bundled_scene, compute_heatmap, HeatmapSpec, DEFAULT_DB_RANGE};
use risplan::scenario::{load_scenario, Evaluator};

fn main() -> anyhow::Result<()> {
    let cell: f64 = std::env::args().nth(1).map(|s| s.parse()).transpose()?.unwrap_or(0.5);
    let scn = load_scenario(&bundled_scene("deadzone_room.json"))?;
    let spec = HeatmapSpec { cell, ..HeatmapSpec::covering(&scn) };
    let es = exhaustive_search(&Evaluator::new(scn.clone()))?;
    let (lo, hi) = DEFAULT_DB_RANGE;
    for (name, state) in [("bs_only", None), ("es", Some(&es.best_state))] {
        let map = compute_heatmap(&scn, state, spec)?;
        std::fs::write(format!("heatmap_{name}.csv"), map.to_csv())?;
        std::fs::write(format!("heatmap_{name}.pgm"), map.to_pgm(lo, hi))?;
        // Cells inside the hall footprint only; the notch of the L is empty.
        let mut inside: Vec<f64> = map.values.iter().copied().filter(|v| v.is_finite()).collect();
        inside.sort_by(f64::total_cmp);
        let p10 = inside[inside.len() / 10];
        let strong = inside.iter().filter(|&&v| v >= 30.0).count();
        println!(
            "{name}: {}x{} cells, {} with signal, 10th percentile {:.1} dB, {:.1}% at SNR >= 30 dB -> heatmap_{name}.csv/.pgm",
            map.nx,
            map.ny,
            inside.len(),
            p10,
            100.0 * strong as f64 / inside.len() as f64
        );
    }
    Ok(())
}
