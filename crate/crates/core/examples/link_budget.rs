//! Link budget of one RIS hop: beam spans, array gain and received power as
//! the served TP set grows.
//!
//! cargo run --release --example link_budget

use risplan::geometry::{Scene, Vec3};
use risplan::propagation::{to_db, Combining, LinkModel, Material};
use risplan::ris_link::{beam_spans, cascaded_rx_power, direct_rx_power, ris_gain, RadioParams, RisPose, RisSpec};

fn main() -> anyhow::Result<()> {
    let scene = Scene::empty(Material::itu_concrete());
    let radio = RadioParams::default_26ghz();
    let model = LinkModel::new(radio.freq_hz, 0, Combining::Coherent);
    let spec = RisSpec::new(347, 175, 0.5)?;
    let pose = RisPose::new(Vec3::new(10.0, 0.0, 3.0), Vec3::new(0.0, 1.0, 0.0), Vec3::new(0.0, 0.0, 1.0))?;
    let bs = Vec3::new(0.0, 5.0, 4.0);
    let tps = [Vec3::new(12.0, 8.0, 1.5), Vec3::new(6.0, 10.0, 1.5), Vec3::new(16.0, 4.0, 1.5)];

    println!("EIRP {:.2} dBm, noise {:.1} dBm, {} elements", radio.eirp_dbm(), radio.noise_power_dbm, spec.elements());
    for k in 1..=tps.len() {
        let served = &tps[..k];
        let spans = beam_spans(&pose, &spec, served)?;
        let g = ris_gain(&spec, &spans);
        println!("serving {k} TP(s): spans ({:.4}, {:.4}) rad, RIS gain {:.2} dB", spans.delta_y, spans.delta_z, to_db(g));
        for (t, &tp) in served.iter().enumerate() {
            let via = cascaded_rx_power(&scene, &model, bs, &pose, &spec, tp, &spans, &radio);
            let direct = direct_rx_power(&scene, &model, bs, tp, &radio);
            println!(
                "  tp {t}: via RIS {:7.2} dBm (SNR {:6.2} dB), direct {:7.2} dBm",
                via,
                via - radio.noise_power_dbm,
                direct
            );
        }
    }
    Ok(())
}
