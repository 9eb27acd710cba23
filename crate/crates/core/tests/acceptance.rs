//! End-to-end acceptance suite. Prints one PASS/FAIL line per criterion and
//! exits non-zero if any fails.

use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use risplan::agent::{
    self, explore_probability, run_dqn, train_with_observer, DeterministicMdp, MdpEnv, TrainConfig, TrainObserver,
};
use risplan::baselines::{self, exhaustive_search};
use risplan::geometry::{cuboid, Scene, Vec3};
use risplan::harness::bundled_scene;
use risplan::neuralnet::{loss_and_gradient, Loss, QNetwork, Sample};
use risplan::propagation::{find_paths, fresnel_coeff, path_gain, Combining, Material, Polarization};
use risplan::ris_link::{RadioParams, RisPose, RisSpec};
use risplan::scenario::{load_scenario, objective, DeploymentState, Evaluator, Scenario};

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome { pass, detail: detail.into() }
}

fn deadzone() -> Scenario {
    load_scenario(&bundled_scene("deadzone_room.json")).expect("bundled scene loads")
}

// ---------------------------------------------------------------------------
// 1. Exhaustive search against an independent nested-loop search
// ---------------------------------------------------------------------------

type Key = (Vec<u8>, Vec<i64>);

/// Plain nested loops over every bit vector with popcount L and every
/// association, scored by the uncached objective straight from the scene.
fn nested_loop_optimum(scn: &Scenario) -> (f64, Key, u64) {
    let n = scn.n_cs();
    let t = scn.n_tp();
    let mut best: Option<(f64, Key)> = None;
    let mut count = 0u64;
    for mask in 0u32..(1 << n) {
        if mask.count_ones() as usize != scn.l_target {
            continue;
        }
        let x: Vec<u8> = (0..n).map(|i| ((mask >> i) & 1) as u8).collect();
        let sites: Vec<i64> = (0..n).filter(|&i| x[i] == 1).map(|i| i as i64).collect();
        let mut choices: Vec<i64> = vec![-1];
        choices.extend(&sites);
        let total = choices.len().pow(t as u32);
        for code in 0..total {
            let mut c = code;
            let mut assoc = Vec::with_capacity(t);
            for _ in 0..t {
                assoc.push(choices[c % choices.len()]);
                c /= choices.len();
            }
            let state = DeploymentState {
                x: x.iter().map(|&b| b == 1).collect(),
                assoc: assoc.iter().map(|&a| (a >= 0).then_some(a as usize)).collect(),
            };
            let v = objective(scn, &state);
            count += 1;
            let key = (x.clone(), assoc);
            let replace = match &best {
                None => true,
                Some((bv, bk)) => v > *bv || (v == *bv && key < *bk),
            };
            if replace {
                best = Some((v, key));
            }
        }
    }
    let (v, k) = best.unwrap();
    (v, k, count)
}

fn criterion_1(scn: &Scenario) -> (Outcome, f64) {
    let pool = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
    let start = Instant::now();
    let (es, eval_time) = pool.install(|| {
        let eval = Evaluator::new(scn.clone());
        (exhaustive_search(&eval).unwrap(), start.elapsed())
    });
    let (ov, ok, count) = nested_loop_optimum(scn);
    let es_key: Key = (
        es.best_state.x.iter().map(|&b| b as u8).collect(),
        es.best_state.assoc.iter().map(|a| a.map_or(-1, |n| n as i64)).collect(),
    );
    let pass = es.best_objective.to_bits() == ov.to_bits()
        && es_key == ok
        && es.states_evaluated == 3645
        && count == 3645
        && eval_time < Duration::from_secs(60);
    (
        outcome(
            pass,
            format!(
                "ES {:.4} dB at {:?}, oracle {:.4} dB at {:?}; {} states; {:.2} s single-threaded",
                es.best_objective,
                es_key,
                ov,
                ok,
                es.states_evaluated,
                eval_time.as_secs_f64()
            ),
        ),
        es.best_objective,
    )
}

// ---------------------------------------------------------------------------
// 2 + 4. Training runs against the ES optimum, with curve properties
// ---------------------------------------------------------------------------

struct SyncCheck {
    rng: ChaCha8Rng,
    syncs: usize,
    mismatches: usize,
}

impl TrainObserver for SyncCheck {
    fn on_sync(&mut self, _frame: u64, primary: &QNetwork, target: &QNetwork) {
        self.syncs += 1;
        for _ in 0..100 {
            let x: Vec<f64> = (0..primary.input_size()).map(|_| self.rng.gen_range(0..2) as f64).collect();
            let a = primary.forward(&x).unwrap();
            let b = target.forward(&x).unwrap();
            if a.iter().zip(&b).any(|(p, q)| p.to_bits() != q.to_bits()) {
                self.mismatches += 1;
            }
        }
    }
}

fn criteria_2_and_4(scn: &Scenario, es_opt: f64) -> (Outcome, Outcome) {
    let eval = Evaluator::new(scn.clone());
    let frames = 20_000;
    let mut within_01 = 0;
    let mut within_1 = 0;
    let mut slowest = Duration::ZERO;
    let mut gaps = Vec::new();
    let mut monotone = true;
    let mut sync_ok = true;
    let mut syncs = 0;
    for seed in 0..10u64 {
        let cfg = TrainConfig { total_frames: frames, seed, ..TrainConfig::default() };
        let mut obs = SyncCheck { rng: ChaCha8Rng::seed_from_u64(1000 + seed), syncs: 0, mismatches: 0 };
        let start = Instant::now();
        let out = train_with_observer(&eval, &cfg, &mut obs).unwrap();
        slowest = slowest.max(start.elapsed());
        let gap = es_opt - out.best_objective;
        gaps.push(gap);
        within_01 += (gap <= 0.1) as usize;
        within_1 += (gap <= 1.0) as usize;
        monotone &= out.log.frames.windows(2).all(|w| w[1].best_db >= w[0].best_db);
        monotone &= out.log.frames.iter().all(|r| r.best_db >= r.objective_db || r.objective_db.is_nan());
        sync_ok &= obs.mismatches == 0 && obs.syncs == (frames / cfg.sync_period) as usize;
        syncs += obs.syncs;
    }
    let c2 = outcome(
        within_01 >= 8 && within_1 == 10 && slowest < Duration::from_secs(300),
        format!(
            "{within_01}/10 seeds within 0.1 dB, {within_1}/10 within 1 dB of {es_opt:.4} dB; gaps {:?}; slowest seed {:.1} s",
            gaps.iter().map(|g| (g * 1000.0).round() / 1000.0).collect::<Vec<_>>(),
            slowest.as_secs_f64()
        ),
    );
    let f = frames;
    let schedule = explore_probability(0, f) == 1.0 && explore_probability(f, f) == 0.0;
    let c4 = outcome(
        monotone && schedule && sync_ok,
        format!(
            "best-so-far monotone: {monotone}; P_explore(0)=1 and P_explore(F)=0: {schedule}; \
             {syncs} syncs bit-exact on 100 inputs each: {sync_ok}"
        ),
    );
    (c2, c4)
}

// ---------------------------------------------------------------------------
// 3. Gain over the BS-only deployment
// ---------------------------------------------------------------------------

fn criterion_3(scn: &Scenario, es_opt: f64) -> Outcome {
    let base = objective(scn, &DeploymentState::empty(scn.n_cs(), scn.n_tp()));
    let gain = es_opt - base;
    outcome(gain >= 10.0, format!("BS-only {base:.3} dB -> ES {es_opt:.3} dB, gain {gain:.3} dB"))
}

// ---------------------------------------------------------------------------
// 5. Numerical kernels
// ---------------------------------------------------------------------------

fn gradient_check() -> (bool, f64) {
    let h = 1e-5;
    let mut worst: f64 = 0.0;
    for seed in 0..10u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut net = QNetwork::for_actions(140, 47, &mut rng);
        for p in net.params_mut().iter_mut() {
            *p += rng.gen_range(-0.05..0.05);
        }
        let inputs: Vec<Vec<f64>> =
            (0..4).map(|_| (0..140).map(|_| if rng.gen_bool(0.3) { 1.0 } else { 0.0 }).collect()).collect();
        let batch: Vec<Sample> = inputs
            .iter()
            .map(|x| Sample { input: x, action: rng.gen_range(0..47), target: rng.gen_range(-2.0..2.0) })
            .collect();
        let (_, analytic) = loss_and_gradient(&net, &batch, Loss::Mse).unwrap();
        let mut numeric = vec![0.0; net.num_params()];
        for i in 0..net.num_params() {
            let orig = net.params()[i];
            net.params_mut()[i] = orig + h;
            let up = loss_and_gradient(&net, &batch, Loss::Mse).unwrap().0;
            net.params_mut()[i] = orig - h;
            let down = loss_and_gradient(&net, &batch, Loss::Mse).unwrap().0;
            net.params_mut()[i] = orig;
            numeric[i] = (up - down) / (2.0 * h);
        }
        for r in net.tensor_ranges() {
            let a = &analytic[r.clone()];
            let n = &numeric[r];
            let diff = a.iter().zip(n).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
            let scale = a.iter().map(|x| x * x).sum::<f64>().sqrt().max(n.iter().map(|x| x * x).sum::<f64>().sqrt());
            worst = worst.max(diff / scale.max(1e-300));
        }
    }
    (worst <= 1e-4, worst)
}

/// Fresnel TE amplitude written out from the permittivity definition.
fn hand_gamma_te(cos: f64, eps_r: f64, sigma: f64, freq: f64) -> Complex64 {
    let eps = Complex64::new(eps_r, -sigma / (2.0 * std::f64::consts::PI * freq * 8.854e-12));
    let root = (eps - (1.0 - cos * cos)).sqrt();
    (cos - root) / (cos + root)
}

fn corridor_check() -> (bool, String) {
    let scn = load_scenario(&bundled_scene("corridor.json")).unwrap();
    let freq = scn.radio.freq_hz;
    let lambda = 2.998e8 / freq;
    let mat = scn.scene.material();
    // Walls are the planes y = 0 and y = 4.
    let walls = [0.0, 4.0];
    let mut pairs: Vec<(Vec3, Vec3)> = scn.tps.iter().map(|&t| (scn.bss[0], t)).collect();
    pairs.extend(scn.css.iter().map(|c| (scn.bss[0], c.position)));
    let mut worst_len: f64 = 0.0;
    let mut worst_db: f64 = 0.0;
    let mut count_ok = true;
    let mut checked = 0;
    for (a, b) in pairs {
        let mut expected: Vec<(f64, f64)> = vec![{
            let d = a.distance(b);
            (d, 20.0 * (lambda / (4.0 * std::f64::consts::PI * d)).log10())
        }];
        for &w in &walls {
            let img = Vec3::new(a.x, 2.0 * w - a.y, a.z);
            let d = img.distance(b);
            let cos = ((a.y - w).abs() + (b.y - w).abs()) / d;
            let g = hand_gamma_te(cos, mat.eps_r_real, mat.sigma, freq);
            let db = 20.0 * (lambda / (4.0 * std::f64::consts::PI * d)).log10() + 20.0 * g.norm().log10();
            expected.push((d, db));
        }
        expected.sort_by(|p, q| p.0.total_cmp(&q.0));
        let paths = find_paths(&scn.scene, a, b, 1);
        count_ok &= paths.len() == expected.len();
        let mut got: Vec<(f64, f64)> = paths
            .iter()
            .map(|p| (p.length, 10.0 * path_gain(p, &scn.scene, freq).unwrap().norm_sqr().log10()))
            .collect();
        got.sort_by(|p, q| p.0.total_cmp(&q.0));
        for (g, e) in got.iter().zip(&expected) {
            worst_len = worst_len.max((g.0 - e.0).abs());
            worst_db = worst_db.max((g.1 - e.1).abs());
            checked += 1;
        }
    }
    (
        count_ok && worst_len <= 1e-9 && worst_db <= 1e-6,
        format!("{checked} corridor paths, max length error {worst_len:.1e} m, max power error {worst_db:.1e} dB"),
    )
}

fn criterion_5() -> Outcome {
    let (grad_ok, grad_worst) = gradient_check();
    let (cor_ok, cor_detail) = corridor_check();
    let gamma = fresnel_coeff(1.0, &Material::itu_concrete(), 26e9, Polarization::Te).unwrap().norm();
    let gamma_ok = (gamma - 0.395).abs() <= 0.005;
    outcome(
        grad_ok && cor_ok && gamma_ok,
        format!("gradient worst rel. error {grad_worst:.2e} (10 seeds); {cor_detail}; |Gamma| at normal incidence {gamma:.4}"),
    )
}

// ---------------------------------------------------------------------------
// 6. Tabular Q-learning against value iteration
// ---------------------------------------------------------------------------

fn criterion_6() -> Outcome {
    let mdp = DeterministicMdp::chain();
    let gamma = 0.9;
    // Value iteration written against the raw tables.
    let (ns, na) = (mdp.next.len(), mdp.next[0].len());
    let mut q = vec![vec![0.0f64; na]; ns];
    for _ in 0..2_000 {
        let v: Vec<f64> = q.iter().map(|r| r.iter().copied().fold(f64::NEG_INFINITY, f64::max)).collect();
        for s in 0..ns {
            for a in 0..na {
                q[s][a] = mdp.reward[s][a] + gamma * v[mdp.next[s][a]];
            }
        }
    }
    let vi_policy: Vec<usize> =
        q.iter().map(|r| if r[1] > r[0] { 1 } else { 0 }).collect();
    let tab = mdp.tabular_q_learning(0.5, gamma, 2_000);
    let mut worst: f64 = 0.0;
    for s in 0..ns {
        for a in 0..na {
            worst = worst.max((tab.get(s, a) - q[s][a]).abs());
        }
    }
    let tab_policy = tab.greedy_policy();
    let mut env = MdpEnv { mdp };
    let cfg = TrainConfig { total_frames: 20_000, episode_max_frames: 20, gamma_q: gamma, lr: 1e-3, seed: 4, ..TrainConfig::default() };
    let dqn = run_dqn(&mut env, &cfg, &mut ()).unwrap();
    let dqn_policy = agent::network_policy(&dqn.network, &env).unwrap();
    outcome(
        worst < 1e-3 && tab_policy == vi_policy && dqn_policy == vi_policy,
        format!("max |Q_tab - Q_vi| {worst:.2e}; policies VI {vi_policy:?}, tabular {tab_policy:?}, DQN {dqn_policy:?}"),
    )
}

// ---------------------------------------------------------------------------
// 7. Dominance over random small scenarios
// ---------------------------------------------------------------------------

fn random_scenario(rng: &mut ChaCha8Rng) -> Scenario {
    let (w, d, h) = (20.0, 12.0, 5.0);
    let mut tris = cuboid(Vec3::ZERO, Vec3::new(w, d, h));
    for _ in 0..rng.gen_range(1..=3) {
        let x = rng.gen_range(4.0..16.0);
        let y = rng.gen_range(2.0..10.0);
        tris.extend(cuboid(Vec3::new(x, y, 0.0), Vec3::new(x + rng.gen_range(0.5..2.0), y + rng.gen_range(0.5..2.0), rng.gen_range(1.5..4.0))));
    }
    let scene = Scene::new(tris, Material::itu_concrete());
    let up = Vec3::new(0.0, 0.0, 1.0);
    let m = rng.gen_range(1..=2);
    let n = rng.gen_range(1..=6);
    let t = rng.gen_range(1..=5);
    let bss = (0..m).map(|_| Vec3::new(rng.gen_range(0.5..4.0), rng.gen_range(0.5..d - 0.5), rng.gen_range(2.5..4.5))).collect();
    let css = (0..n)
        .map(|_| {
            let z = rng.gen_range(1.5..4.0);
            let (pos, bore) = match rng.gen_range(0..3) {
                0 => (Vec3::new(rng.gen_range(1.0..w - 1.0), 0.05, z), Vec3::new(0.0, 1.0, 0.0)),
                1 => (Vec3::new(rng.gen_range(1.0..w - 1.0), d - 0.05, z), Vec3::new(0.0, -1.0, 0.0)),
                _ => (Vec3::new(w - 0.05, rng.gen_range(1.0..d - 1.0), z), Vec3::new(-1.0, 0.0, 0.0)),
            };
            RisPose::new(pos, bore, up).unwrap()
        })
        .collect();
    let tps = (0..t).map(|_| Vec3::new(rng.gen_range(8.0..w - 0.5), rng.gen_range(0.5..d - 0.5), 1.5)).collect();
    Scenario {
        scene,
        bss,
        css,
        tps,
        ris: RisSpec::new(rng.gen_range(16..128), rng.gen_range(16..64), 0.5).unwrap(),
        radio: RadioParams::default_26ghz(),
        l_target: rng.gen_range(1..=n.min(2)),
        max_bounces: rng.gen_range(0..=2),
        combining: if rng.gen_bool(0.5) { Combining::Coherent } else { Combining::PowerSum },
        polarization: Polarization::Te,
    }
}

fn criterion_7() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(20_240_707);
    let mut violations = Vec::new();
    let mut monotone_checks = 0;
    let mut comparisons = 0;
    for i in 0..20 {
        let scn = random_scenario(&mut rng);
        let eval = Evaluator::new(scn.clone());
        let es = exhaustive_search(&eval).unwrap();
        let floor = agent::DEFAULT_OBJECTIVE_FLOOR_DB;
        let greedy = baselines::greedy(&eval).unwrap().best_objective;
        let clusters = baselines::kmeans_clusters(&scn.tps, 2);
        let clustered = baselines::clustered_exhaustive(&eval, &clusters).unwrap().best_objective;
        let random = baselines::random_baseline(&eval, 1000, i, floor).unwrap().max;
        let cfg = TrainConfig { total_frames: 3_000, seed: i, ..TrainConfig::default() };
        let agent_best = agent::train(&eval, &cfg).unwrap().best_objective;
        for (name, v, bound) in [
            ("greedy", greedy, es.best_objective),
            ("clustered-es", clustered, es.best_objective),
            ("random-max", random, es.best_objective.max(floor)),
            ("agent-best", agent_best, es.best_objective),
        ] {
            comparisons += 1;
            if v > bound {
                violations.push(format!("scenario {i}: {name} {v} > ES {bound}"));
            }
        }
        let mut prev = es.best_objective;
        for l in scn.l_target + 1..=scn.n_cs().min(3) {
            let mut bigger = scn.clone();
            bigger.l_target = l;
            let next = exhaustive_search(&Evaluator::new(bigger)).unwrap().best_objective;
            monotone_checks += 1;
            if next < prev {
                violations.push(format!("scenario {i}: ES at L={l} ({next}) < L={} ({prev})", l - 1));
            }
            prev = next;
        }
    }
    outcome(
        violations.is_empty(),
        format!(
            "{comparisons} dominance comparisons, {monotone_checks} L-monotonicity checks, {} violations{}",
            violations.len(),
            if violations.is_empty() { String::new() } else { format!(": {}", violations.join("; ")) }
        ),
    )
}

// ---------------------------------------------------------------------------
// 8. Byte-identical reruns of the stochastic commands
// ---------------------------------------------------------------------------

fn run_cli(args: &[&str], dir: &Path) -> bool {
    let status = Command::new(env!("CARGO_BIN_EXE_risplan"))
        .args(args)
        .current_dir(dir)
        .env_remove("RISPLAN_SEED")
        .stderr(std::process::Stdio::null())
        .status()
        .expect("binary runs");
    status.success()
}

fn criterion_8() -> Outcome {
    let scene = bundled_scene("deadzone_room.json");
    let scene = scene.to_str().unwrap();
    let mut files: Vec<Vec<Vec<u8>>> = Vec::new();
    let mut ran = true;
    for _ in 0..2 {
        let dir = tempfile::tempdir().unwrap();
        ran &= run_cli(
            &["train", scene, "--seed", "7", "--total-frames", "5000", "--out", "train.json", "--log", "train.csv", "--checkpoint", "net.json"],
            dir.path(),
        );
        ran &= run_cli(&["random", scene, "--seed", "7", "--samples", "500", "--out", "random.json"], dir.path());
        let read = |f: &str| std::fs::read(dir.path().join(f)).unwrap_or_default();
        files.push(["train.json", "train.csv", "net.json", "random.json"].iter().map(|f| read(f)).collect());
    }
    let identical = files[0] == files[1];
    let nonempty = files[0].iter().all(|f| !f.is_empty());
    outcome(
        ran && identical && nonempty,
        format!(
            "train (result, log, checkpoint) and random reruns with seed 7: {} ({} bytes compared)",
            if identical { "byte-identical" } else { "DIFFER" },
            files[0].iter().map(|f| f.len()).sum::<usize>()
        ),
    )
}

fn main() {
    let start = Instant::now();
    let scn = deadzone();
    let (c1, es_opt) = criterion_1(&scn);
    let (c2, c4) = criteria_2_and_4(&scn, es_opt);
    let results = [
        ("1 ES oracle equivalence", c1),
        ("2 DQL matches ES", c2),
        ("3 dead-zone gain", criterion_3(&scn, es_opt)),
        ("4 training-curve properties", c4),
        ("5 numerical kernels", criterion_5()),
        ("6 tabular Q fidelity", criterion_6()),
        ("7 dominance suite", criterion_7()),
        ("8 reproducibility", criterion_8()),
    ];
    let mut failed = 0;
    for (name, o) in &results {
        println!("criterion {name}: {} ({})", if o.pass { "PASS" } else { "FAIL" }, o.detail);
        failed += !o.pass as usize;
    }
    println!("acceptance: {}/{} passed in {:.1} s", results.len() - failed, results.len(), start.elapsed().as_secs_f64());
    if failed > 0 {
        std::process::exit(1);
    }
}
