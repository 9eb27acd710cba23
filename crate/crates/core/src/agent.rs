//! Deep Q-learning placement agent and a tabular Q-learning reference.
//!
//! The training loop is generic over [`Environment`] so the same code drives
//! the RIS placement problem and small toy MDPs used for cross-checks.

use std::collections::VecDeque;
use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::neuralnet::{clone_weights, train_step_with, AdamState, Loss, QNetwork, Sample};
use crate::scenario::{self, Action, CachedEvaluator, DeploymentState, Evaluator};

/// Objective values below this are clamped before differencing.
pub const DEFAULT_OBJECTIVE_FLOOR_DB: f64 = -150.0;

#[derive(Debug, Clone, PartialEq)]
pub struct Transition {
    pub state_enc: Vec<u8>,
    pub action: usize,
    pub reward: f64,
    pub next_state_enc: Vec<u8>,
    pub terminal: bool,
}

/// Fixed-capacity ring buffer; the oldest transition is evicted first.
#[derive(Debug, Clone)]
pub struct ReplayBuffer {
    capacity: usize,
    items: VecDeque<Transition>,
}

impl ReplayBuffer {
    pub fn new(capacity: usize) -> Self {
        assert!(capacity > 0, "replay capacity must be positive");
        ReplayBuffer { capacity, items: VecDeque::with_capacity(capacity.min(1 << 16)) }
    }

    pub fn push(&mut self, t: Transition) {
        if self.items.len() == self.capacity {
            self.items.pop_front();
        }
        self.items.push_back(t);
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn iter(&self) -> impl Iterator<Item = &Transition> {
        self.items.iter()
    }

    /// Uniform with replacement. Empty if the buffer is empty.
    pub fn sample<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Vec<&Transition> {
        if self.items.is_empty() {
            return Vec::new();
        }
        (0..n).map(|_| &self.items[rng.gen_range(0..self.items.len())]).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub total_frames: u64,
    pub episode_max_frames: u64,
    pub gamma_q: f64,
    pub lr: f64,
    pub train_period: u64,
    pub sync_period: u64,
    pub batch_size: usize,
    pub buffer_capacity: usize,
    pub seed: u64,
    pub invalid_penalty: f64,
    pub reward_scale: f64,
    pub objective_floor_db: f64,
    /// Restrict exploration and exploitation to valid actions instead of
    /// penalizing invalid ones.
    pub mask_invalid: bool,
    pub loss: Loss,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            total_frames: 20_000,
            episode_max_frames: 200,
            gamma_q: 0.99,
            lr: 0.00025,
            train_period: 4,
            sync_period: 500,
            batch_size: 32,
            buffer_capacity: 50_000,
            seed: 0,
            invalid_penalty: 1.0,
            reward_scale: 1.0,
            objective_floor_db: DEFAULT_OBJECTIVE_FLOOR_DB,
            mask_invalid: false,
            loss: Loss::Mse,
        }
    }
}

impl TrainConfig {
    pub fn check(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Invalid(m));
        if self.train_period == 0 || self.sync_period < 10 * self.train_period {
            return fail(format!(
                "sync period ({}) must be at least 10x the train period ({})",
                self.sync_period, self.train_period
            ));
        }
        if !(0.0..1.0).contains(&self.gamma_q) {
            return fail(format!("gamma_q must lie in [0, 1), got {}", self.gamma_q));
        }
        if !(self.lr.is_finite() && self.lr > 0.0) {
            return fail(format!("learning rate must be positive, got {}", self.lr));
        }
        if self.batch_size == 0 || self.buffer_capacity == 0 || self.episode_max_frames == 0 {
            return fail("batch size, buffer capacity and episode cap must be positive".into());
        }
        if !(self.reward_scale.is_finite() && self.reward_scale > 0.0) {
            return fail(format!("reward scale must be positive, got {}", self.reward_scale));
        }
        if !self.invalid_penalty.is_finite() || !self.objective_floor_db.is_finite() {
            return fail("invalid penalty and objective floor must be finite".into());
        }
        Ok(())
    }
}

/// `1 - f/F`.
pub fn explore_probability(frame: u64, total: u64) -> f64 {
    debug_assert!(total > 0 && frame <= total);
    1.0 - frame as f64 / total as f64
}

/// Index of the largest value among allowed entries; ties go to the lowest index.
pub fn argmax(values: &[f64], allowed: Option<&[bool]>) -> usize {
    let mut best = None;
    for (i, &v) in values.iter().enumerate() {
        if allowed.is_some_and(|m| !m[i]) {
            continue;
        }
        match best {
            Some((_, bv)) if v <= bv => {}
            _ => best = Some((i, v)),
        }
    }
    best.map_or(0, |(i, _)| i)
}

fn to_input(bits: &[u8]) -> Vec<f64> {
    bits.iter().map(|&b| b as f64).collect()
}

/// Epsilon-greedy choice. Returns `(action, explored)`.
pub fn select_action<R: Rng + ?Sized>(
    net: &QNetwork,
    state_enc: &[u8],
    frame: u64,
    total: u64,
    rng: &mut R,
) -> Result<(usize, bool)> {
    select_action_masked(net, state_enc, frame, total, None, rng)
}

pub fn select_action_masked<R: Rng + ?Sized>(
    net: &QNetwork,
    state_enc: &[u8],
    frame: u64,
    total: u64,
    mask: Option<&[bool]>,
    rng: &mut R,
) -> Result<(usize, bool)> {
    let n = net.output_size();
    if rng.gen::<f64>() < explore_probability(frame, total) {
        let a = match mask {
            None => rng.gen_range(0..n),
            Some(m) => {
                let allowed: Vec<usize> = (0..n).filter(|&i| m[i]).collect();
                allowed[rng.gen_range(0..allowed.len())]
            }
        };
        return Ok((a, true));
    }
    let q = net.forward(&to_input(state_enc))?;
    Ok((argmax(&q, mask), false))
}

/// Bootstrapped regression target from the frozen network.
pub fn q_ref(tr: &Transition, target: &QNetwork, gamma_q: f64) -> Result<f64> {
    if tr.terminal {
        return Ok(tr.reward);
    }
    let q = target.forward(&to_input(&tr.next_state_enc))?;
    let max = q.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    Ok(tr.reward + gamma_q * max)
}

/// Scaled, floor-clamped objective delta; a fixed penalty for invalid moves.
pub fn reward_from_objectives(before_db: f64, after_db: f64, valid: bool, cfg: &TrainConfig) -> f64 {
    if !valid {
        return -cfg.invalid_penalty;
    }
    let floor = cfg.objective_floor_db;
    (after_db.max(floor) - before_db.max(floor)) / cfg.reward_scale
}

pub fn reward(
    eval: &mut CachedEvaluator<'_>,
    s: &DeploymentState,
    s_next: &DeploymentState,
    valid: bool,
    cfg: &TrainConfig,
) -> f64 {
    if !valid {
        return -cfg.invalid_penalty;
    }
    let before = eval.objective(s);
    let after = eval.objective(s_next);
    reward_from_objectives(before, after, valid, cfg)
}

/// Result of one environment transition.
#[derive(Debug, Clone)]
pub struct Outcome<S> {
    pub next: S,
    pub reward: f64,
    pub valid: bool,
    pub terminal: bool,
    /// Quality of `next`, used for best-state tracking.
    pub score: f64,
}

pub trait Environment {
    type State: Clone;

    fn state_size(&self) -> usize;
    fn action_count(&self) -> usize;
    fn reset(&mut self, rng: &mut ChaCha8Rng) -> Self::State;
    fn encode(&self, s: &Self::State) -> Vec<u8>;
    fn score(&mut self, s: &Self::State) -> f64;
    fn step(&mut self, s: &Self::State, action: usize) -> Result<Outcome<Self::State>>;

    /// Which actions are valid in `s`; all by default.
    fn action_mask(&mut self, s: &Self::State) -> Vec<bool> {
        let _ = s;
        vec![true; self.action_count()]
    }
}

/// The placement problem as an environment.
pub struct PlacementEnv<'a> {
    cache: CachedEvaluator<'a>,
    cfg: TrainConfig,
}

impl<'a> PlacementEnv<'a> {
    pub fn new(eval: &'a Evaluator, cfg: &TrainConfig) -> Self {
        PlacementEnv { cache: CachedEvaluator::new(eval), cfg: cfg.clone() }
    }

    pub fn distinct_states(&self) -> usize {
        self.cache.distinct()
    }
}

impl Environment for PlacementEnv<'_> {
    type State = DeploymentState;

    fn state_size(&self) -> usize {
        let s = self.cache.evaluator().scenario();
        s.n_cs() + s.n_cs() * s.n_tp()
    }

    fn action_count(&self) -> usize {
        scenario::action_space_size(self.cache.evaluator().scenario())
    }

    fn reset(&mut self, rng: &mut ChaCha8Rng) -> DeploymentState {
        scenario::random_state(self.cache.evaluator().scenario(), rng)
    }

    fn encode(&self, s: &DeploymentState) -> Vec<u8> {
        scenario::encode_state(self.cache.evaluator().scenario(), s)
    }

    fn score(&mut self, s: &DeploymentState) -> f64 {
        self.cache.objective(s)
    }

    fn step(&mut self, s: &DeploymentState, action: usize) -> Result<Outcome<DeploymentState>> {
        let scn = self.cache.evaluator().scenario();
        let a = Action::from_index(action, scn.n_cs(), scn.n_tp())?;
        let step = scenario::apply_action(scn, s, a)?;
        let r = reward(&mut self.cache, s, &step.state, step.valid, &self.cfg);
        let score = self.cache.objective(&step.state);
        Ok(Outcome { next: step.state, reward: r, valid: step.valid, terminal: step.terminal, score })
    }

    fn action_mask(&mut self, s: &DeploymentState) -> Vec<bool> {
        let scn = self.cache.evaluator().scenario();
        let (n, t) = (scn.n_cs(), scn.n_tp());
        (0..scenario::action_count(n, t))
            .map(|i| {
                let a = Action::from_index(i, n, t).expect("index in range");
                scenario::apply_action(scn, s, a).map(|st| st.valid).unwrap_or(false)
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FrameRecord {
    pub frame: u64,
    pub episode: u64,
    pub explore: bool,
    pub action: usize,
    pub reward: f64,
    pub objective_db: f64,
    pub best_db: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct TrainLog {
    pub frames: Vec<FrameRecord>,
    /// Best score seen within each episode, starting state included.
    pub episode_best: Vec<f64>,
    /// Frame numbers (1-based count of completed frames) at which the target was synced.
    pub syncs: Vec<u64>,
    pub losses: Vec<f64>,
}

impl TrainLog {
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["frame", "episode", "explore", "action", "reward", "objective_db", "best_db"])?;
        for r in &self.frames {
            w.write_record([
                r.frame.to_string(),
                r.episode.to_string(),
                (r.explore as u8).to_string(),
                r.action.to_string(),
                r.reward.to_string(),
                r.objective_db.to_string(),
                r.best_db.to_string(),
            ])?;
        }
        w.flush().map_err(|e| Error::Io { path: "<training log>".into(), source: e })?;
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome<S> {
    pub best_state: S,
    pub best_objective: f64,
    /// Frame count at which the best state was first reached (0 = initial state).
    pub best_frame: u64,
    pub log: TrainLog,
    pub network: QNetwork,
    /// Distinct states whose objective was computed; 0 for generic environments.
    pub states_evaluated: u64,
}

/// Hooks into the training loop, for diagnostics and tests.
pub trait TrainObserver {
    fn on_sync(&mut self, _frame: u64, _primary: &QNetwork, _target: &QNetwork) {}
    fn on_batch(&mut self, _frame: u64, _batch: &[&Transition]) {}
}

impl TrainObserver for () {}

/// RNG streams derived from the run seed.
const STREAM_INIT: u64 = 0;
const STREAM_EXPLORE: u64 = 1;
const STREAM_REPLAY: u64 = 2;
const STREAM_EPISODE: u64 = 3;

fn stream(seed: u64, id: u64) -> ChaCha8Rng {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    r.set_stream(id);
    r
}

pub fn train(scn_eval: &Evaluator, cfg: &TrainConfig) -> Result<TrainOutcome<DeploymentState>> {
    train_with_observer(scn_eval, cfg, &mut ())
}

pub fn train_with_observer(
    scn_eval: &Evaluator,
    cfg: &TrainConfig,
    observer: &mut dyn TrainObserver,
) -> Result<TrainOutcome<DeploymentState>> {
    let mut env = PlacementEnv::new(scn_eval, cfg);
    let mut out = run_dqn(&mut env, cfg, observer)?;
    out.states_evaluated = env.distinct_states() as u64;
    Ok(out)
}

/// Runs `cfg.total_frames` frames and returns the best state visited.
pub fn run_dqn<E: Environment>(
    env: &mut E,
    cfg: &TrainConfig,
    observer: &mut dyn TrainObserver,
) -> Result<TrainOutcome<E::State>> {
    cfg.check()?;
    let mut init_rng = stream(cfg.seed, STREAM_INIT);
    let mut explore_rng = stream(cfg.seed, STREAM_EXPLORE);
    let mut replay_rng = stream(cfg.seed, STREAM_REPLAY);
    let mut episode_rng = stream(cfg.seed, STREAM_EPISODE);

    let n_actions = env.action_count();
    let mut primary = QNetwork::new(&[env.state_size(), 32, 32, n_actions], &mut init_rng);
    let mut target = clone_weights(&primary);
    let mut adam = AdamState::new(&primary, cfg.lr);
    let mut buffer = ReplayBuffer::new(cfg.buffer_capacity);
    let mut log = TrainLog::default();

    let mut state = env.reset(&mut episode_rng);
    let mut score = env.score(&state);
    let mut best = (state.clone(), score, 0u64);
    let mut episode = 0u64;
    let mut episode_frames = 0u64;
    let mut episode_best = score;

    let total = cfg.total_frames;
    for f in 0..total {
        let enc = env.encode(&state);
        let mask = cfg.mask_invalid.then(|| env.action_mask(&state));
        let (action, explored) = select_action_masked(&primary, &enc, f, total, mask.as_deref(), &mut explore_rng)?;
        let out = env.step(&state, action)?;
        let next_enc = env.encode(&out.next);
        buffer.push(Transition {
            state_enc: enc,
            action,
            reward: out.reward,
            next_state_enc: next_enc,
            terminal: out.terminal,
        });
        let done = f + 1;
        if out.score > best.1 {
            best = (out.next.clone(), out.score, done);
        }
        episode_best = episode_best.max(out.score);
        log.frames.push(FrameRecord {
            frame: f,
            episode,
            explore: explored,
            action,
            reward: out.reward,
            objective_db: out.score,
            best_db: best.1,
        });

        if done % cfg.train_period == 0 {
            let batch = buffer.sample(cfg.batch_size, &mut replay_rng);
            observer.on_batch(done, &batch);
            let targets = batch.iter().map(|t| q_ref(t, &target, cfg.gamma_q)).collect::<Result<Vec<_>>>()?;
            let inputs: Vec<Vec<f64>> = batch.iter().map(|t| to_input(&t.state_enc)).collect();
            let samples: Vec<Sample> = batch
                .iter()
                .zip(&inputs)
                .zip(&targets)
                .map(|((t, x), &y)| Sample { input: x, action: t.action, target: y })
                .collect();
            log.losses.push(train_step_with(&mut primary, &mut adam, &samples, cfg.loss)?);
        }
        if done % cfg.sync_period == 0 {
            target = clone_weights(&primary);
            log.syncs.push(done);
            observer.on_sync(done, &primary, &target);
        }

        episode_frames += 1;
        state = out.next;
        score = out.score;
        if out.terminal || episode_frames >= cfg.episode_max_frames {
            log.episode_best.push(episode_best);
            episode += 1;
            episode_frames = 0;
            if done < total {
                state = env.reset(&mut episode_rng);
                score = env.score(&state);
                if score > best.1 {
                    best = (state.clone(), score, done);
                }
                episode_best = score;
            }
        }
    }
    if episode_frames > 0 || total == 0 {
        log.episode_best.push(episode_best);
    }
    let _ = score;
    Ok(TrainOutcome { best_state: best.0, best_objective: best.1, best_frame: best.2, log, network: primary, states_evaluated: 0 })
}

/// Final training result; `-inf` objectives serialize as `null`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRecord {
    pub x: Vec<u8>,
    pub assoc: Vec<Option<usize>>,
    pub objective_db: Option<f64>,
    pub frames: u64,
    pub seed: u64,
}

impl ResultRecord {
    pub fn new(state: &DeploymentState, objective_db: f64, frames: u64, seed: u64) -> Self {
        ResultRecord {
            x: state.x.iter().map(|&b| b as u8).collect(),
            assoc: state.assoc.clone(),
            objective_db: objective_db.is_finite().then_some(objective_db),
            frames,
            seed,
        }
    }
}

// ---------------------------------------------------------------------------
// Tabular reference
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq)]
pub struct QTable {
    pub n_states: usize,
    pub n_actions: usize,
    pub values: Vec<f64>,
}

impl QTable {
    pub fn zeros(n_states: usize, n_actions: usize) -> Self {
        QTable { n_states, n_actions, values: vec![0.0; n_states * n_actions] }
    }

    pub fn get(&self, s: usize, a: usize) -> f64 {
        self.values[s * self.n_actions + a]
    }

    pub fn set(&mut self, s: usize, a: usize, v: f64) {
        self.values[s * self.n_actions + a] = v;
    }

    pub fn row(&self, s: usize) -> &[f64] {
        &self.values[s * self.n_actions..(s + 1) * self.n_actions]
    }

    pub fn max(&self, s: usize) -> f64 {
        self.row(s).iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn greedy_policy(&self) -> Vec<usize> {
        (0..self.n_states).map(|s| argmax(self.row(s), None)).collect()
    }
}

/// `Q(s,a) <- (1 - alpha) Q(s,a) + alpha (r + gamma max_a' Q(s',a'))`.
pub fn tabular_q_update(q: &mut QTable, s: usize, a: usize, r: f64, s_next: usize, alpha_q: f64, gamma_q: f64) {
    let v = (1.0 - alpha_q) * q.get(s, a) + alpha_q * (r + gamma_q * q.max(s_next));
    q.set(s, a, v);
}

/// Finite deterministic MDP given by transition and reward tables.
#[derive(Debug, Clone, PartialEq)]
pub struct DeterministicMdp {
    pub next: Vec<Vec<usize>>,
    pub reward: Vec<Vec<f64>>,
}

impl DeterministicMdp {
    /// Four states in a row; action 0 moves left, action 1 moves right.
    /// Moving into the right end pays 1; pushing left at the left end pays 0.85.
    pub fn chain() -> Self {
        let next = (0..4).map(|s: usize| vec![s.saturating_sub(1), (s + 1).min(3)]).collect();
        let reward = (0..4)
            .map(|s| {
                let left = if s == 0 { 0.85 } else { 0.0 };
                let right = if s + 1 >= 3 { 1.0 } else { 0.0 };
                vec![left, right]
            })
            .collect();
        DeterministicMdp { next, reward }
    }

    pub fn n_states(&self) -> usize {
        self.next.len()
    }

    pub fn n_actions(&self) -> usize {
        self.next[0].len()
    }

    /// Optimal Q by synchronous value iteration until the update is below `tol`.
    pub fn value_iteration(&self, gamma: f64, tol: f64) -> QTable {
        let mut q = QTable::zeros(self.n_states(), self.n_actions());
        loop {
            let mut next = q.clone();
            let mut delta: f64 = 0.0;
            for s in 0..self.n_states() {
                for a in 0..self.n_actions() {
                    let v = self.reward[s][a] + gamma * q.max(self.next[s][a]);
                    delta = delta.max((v - q.get(s, a)).abs());
                    next.set(s, a, v);
                }
            }
            q = next;
            if delta < tol * (1.0 - gamma) {
                return q;
            }
        }
    }

    /// Sweeps of Eq.-style Q-learning updates over every (s, a) pair.
    pub fn tabular_q_learning(&self, alpha: f64, gamma: f64, sweeps: usize) -> QTable {
        let mut q = QTable::zeros(self.n_states(), self.n_actions());
        for _ in 0..sweeps {
            for s in 0..self.n_states() {
                for a in 0..self.n_actions() {
                    tabular_q_update(&mut q, s, a, self.reward[s][a], self.next[s][a], alpha, gamma);
                }
            }
        }
        q
    }
}

/// A [`DeterministicMdp`] as a non-terminating environment with one-hot states.
pub struct MdpEnv {
    pub mdp: DeterministicMdp,
}

impl Environment for MdpEnv {
    type State = usize;

    fn state_size(&self) -> usize {
        self.mdp.n_states()
    }

    fn action_count(&self) -> usize {
        self.mdp.n_actions()
    }

    fn reset(&mut self, rng: &mut ChaCha8Rng) -> usize {
        rng.gen_range(0..self.mdp.n_states())
    }

    fn encode(&self, s: &usize) -> Vec<u8> {
        let mut v = vec![0u8; self.mdp.n_states()];
        v[*s] = 1;
        v
    }

    fn score(&mut self, _s: &usize) -> f64 {
        0.0
    }

    fn step(&mut self, s: &usize, action: usize) -> Result<Outcome<usize>> {
        if action >= self.mdp.n_actions() {
            return Err(Error::OutOfRange { what: "action", index: action, len: self.mdp.n_actions() });
        }
        Ok(Outcome {
            next: self.mdp.next[*s][action],
            reward: self.mdp.reward[*s][action],
            valid: true,
            terminal: false,
            score: 0.0,
        })
    }
}

/// Greedy action per state under the network.
pub fn network_policy(net: &QNetwork, env: &MdpEnv) -> Result<Vec<usize>> {
    (0..env.mdp.n_states())
        .map(|s| Ok(argmax(&net.forward(&to_input(&env.encode(&s)))?, None)))
        .collect()
}
