//! Tabular Q-learning, value iteration and the DQN on the four-state chain.
//!
//! cargo run --release --example tabular_q

use risplan::agent::{network_policy, run_dqn, DeterministicMdp, MdpEnv, TrainConfig};

fn main() -> anyhow::Result<()> {
    let mdp = DeterministicMdp::chain();
    let gamma = 0.9;
    let vi = mdp.value_iteration(gamma, 1e-12);
    let tab = mdp.tabular_q_learning(0.5, gamma, 500);
    for s in 0..mdp.n_states() {
        println!("state {s}: Q_vi {:?}  Q_tab {:?}", vi.row(s), tab.row(s));
    }
    println!("greedy policy: value iteration {:?}, tabular {:?}", vi.greedy_policy(), tab.greedy_policy());

    let mut env = MdpEnv { mdp };
    let cfg = TrainConfig { total_frames: 20_000, episode_max_frames: 20, gamma_q: gamma, lr: 1e-3, seed: 4, ..TrainConfig::default() };
    let out = run_dqn(&mut env, &cfg, &mut ())?;
    println!("DQN policy after {} frames: {:?}", cfg.total_frames, network_policy(&out.network, &env)?);
    Ok(())
}
