//! Exhaustive search on the bundled dead-zone hall, with per-TP detail.
//!
//! cargo run --release --example exhaustive_deadzone

use risplan::baselines::{combinations, exhaustive_search, greedy};
use risplan::geometry::visible;
use risplan::harness::bundled_scene;
use risplan::scenario::{load_scenario, DeploymentState, Evaluator};

fn main() -> anyhow::Result<()> {
    let scn = load_scenario(&bundled_scene("deadzone_room.json"))?;
    println!("{} triangles, M={} N={} T={} L={}", scn.scene.triangles().len(), scn.bss.len(), scn.n_cs(), scn.n_tp(), scn.l_target);
    for (t, &tp) in scn.tps.iter().enumerate() {
        let los: Vec<bool> = scn.bss.iter().map(|&b| visible(&scn.scene, b, tp)).collect();
        println!("tp {t}: LoS to BSs {los:?}");
    }
    let eval = Evaluator::new(scn);
    let empty = DeploymentState::empty(eval.scenario().n_cs(), eval.scenario().n_tp());
    let per_tp = |s: &DeploymentState| -> Vec<String> {
        (0..s.assoc.len()).map(|t| format!("{:.2}", eval.tp_snr(s, t))).collect()
    };
    println!("BS-only objective {:.2} dB, per TP {:?}", eval.baseline(), per_tp(&empty));

    let es = exhaustive_search(&eval)?;
    println!(
        "ES optimum {:.2} dB (gain {:.2} dB) over {} states in {:.2} s",
        es.best_objective,
        es.best_objective - eval.baseline(),
        es.states_evaluated,
        es.wall_time_s
    );
    println!("  sites {:?}, assoc {:?}", es.best_state.deployed_sites(), es.best_state.assoc);
    println!("  per TP {:?}", per_tp(&es.best_state));

    // How many full-size deployments reach the optimum (within 0.1 dB).
    let scn = eval.scenario();
    let mut near = 0;
    for sites in combinations(scn.n_cs(), scn.l_target) {
        let options: Vec<Option<usize>> = std::iter::once(None).chain(sites.iter().copied().map(Some)).collect();
        let mut s = DeploymentState::empty(scn.n_cs(), scn.n_tp());
        for &n in &sites {
            s.x[n] = true;
        }
        let total = options.len().pow(scn.n_tp() as u32);
        for code in 0..total {
            let mut c = code;
            for t in 0..scn.n_tp() {
                s.assoc[t] = options[c % options.len()];
                c /= options.len();
            }
            if eval.objective(&s) >= es.best_objective - 0.1 {
                near += 1;
            }
        }
    }
    println!("  {near} of {} states within 0.1 dB of the optimum", es.states_evaluated);

    let g = greedy(&eval)?;
    println!("greedy {:.2} dB, sites {:?}, assoc {:?}", g.best_objective, g.best_state.deployed_sites(), g.best_state.assoc);
    Ok(())
}
