//! Specular paths in the two-wall corridor, with per-path gain.
//!
//! cargo run --release --example trace_corridor [max_bounces]

use risplan::harness::bundled_scene;
use risplan::propagation::{find_paths, path_gain, to_db, validate_path};
use risplan::scenario::load_scenario;

fn main() -> anyhow::Result<()> {
    let bounces: usize = std::env::args().nth(1).map(|s| s.parse()).transpose()?.unwrap_or(3);
    let scn = load_scenario(&bundled_scene("corridor.json"))?;
    let bs = scn.bss[0];
    let freq = scn.radio.freq_hz;
    for (t, &tp) in scn.tps.iter().enumerate() {
        let paths = find_paths(&scn.scene, bs, tp, bounces);
        println!("bs -> tp {t} at {tp:?}: {} paths up to {bounces} bounces", paths.len());
        for p in &paths {
            let g = path_gain(p, &scn.scene, freq)?;
            let ok = validate_path(&scn.scene, p).is_ok();
            println!(
                "  {} bounce(s), {:8.4} m, {:8.2} dB, phase {:+.3} rad, valid {ok}",
                p.bounces(),
                p.length,
                to_db(g.norm_sqr()),
                g.arg()
            );
        }
        let total = scn.link_model().power_gain(&scn.scene, bs, tp);
        println!("  combined ({:?}): {:.2} dB", scn.combining, to_db(total));
    }
    Ok(())
}
