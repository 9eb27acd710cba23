//! Problem instance, deployment state machine and the max-min SNR objective.

use std::collections::HashMap;
use std::path::{Path as FsPath, PathBuf};

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{load_mesh, triangle_coords, triangle_from_coords, Scene, Triangle, Vec3};
use crate::propagation::{Combining, LinkModel, Material, Polarization};
use crate::ris_link::{
    beam_spans, cascaded_power_from_gains, cascaded_rx_power, direct_power_from_gain, direct_rx_power,
    ris_gain, spans_from_ranges, RadioParams, RisPose, RisSpec,
};

/// A complete planning instance.
#[derive(Debug, Clone)]
pub struct Scenario {
    pub scene: Scene,
    pub bss: Vec<Vec3>,
    pub css: Vec<RisPose>,
    pub tps: Vec<Vec3>,
    pub ris: RisSpec,
    pub radio: RadioParams,
    pub l_target: usize,
    pub max_bounces: usize,
    pub combining: Combining,
    pub polarization: Polarization,
}

impl Scenario {
    pub fn n_cs(&self) -> usize {
        self.css.len()
    }

    pub fn n_tp(&self) -> usize {
        self.tps.len()
    }

    pub fn link_model(&self) -> LinkModel {
        LinkModel {
            freq: self.radio.freq_hz,
            max_bounces: self.max_bounces,
            combining: self.combining,
            polarization: self.polarization,
        }
    }

    /// Checks every instance invariant.
    pub fn check(&self) -> Result<()> {
        let m = self.bss.len();
        let n = self.css.len();
        let t = self.tps.len();
        if m < 1 {
            return Err(Error::Invalid("bss: need at least one base station (M >= 1)".into()));
        }
        if t < 1 {
            return Err(Error::Invalid("tps: need at least one test point (T >= 1)".into()));
        }
        if self.l_target < 1 {
            return Err(Error::Invalid("l_target must be >= 1".into()));
        }
        if n < self.l_target {
            return Err(Error::Invalid(format!(
                "l_target = {} exceeds the number of candidate sites N = {n}; N >= L is required",
                self.l_target
            )));
        }
        if t > 255 || n > 254 {
            return Err(Error::Invalid("at most 254 candidate sites and 255 test points are supported".into()));
        }
        if self.max_bounces > 3 {
            return Err(Error::Invalid(format!("max_bounces must be in 0..=3, got {}", self.max_bounces)));
        }
        self.ris.check()?;
        self.radio.check()?;
        self.scene.material().check()?;
        for (i, p) in self.bss.iter().chain(&self.tps).enumerate() {
            if !p.is_finite() {
                return Err(Error::Invalid(format!("point {i} is not finite")));
            }
        }
        for (i, cs) in self.css.iter().enumerate() {
            if (cs.boresight.norm() - 1.0).abs() > 1e-9 || (cs.up.norm() - 1.0).abs() > 1e-9 {
                return Err(Error::Invalid(format!("css[{i}]: boresight and up must be unit vectors")));
            }
            if cs.boresight.dot(cs.up).abs() > 1e-9 {
                return Err(Error::Invalid(format!("css[{i}]: boresight must be perpendicular to up")));
            }
        }
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// Scenario file
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum MeshSource {
    File(PathBuf),
    Inline(Vec<[f64; 9]>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CsRecord {
    pub position: Vec3,
    pub boresight: Vec3,
    pub up: Vec3,
}

/// On-disk JSON layout of a scenario.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioFile {
    pub mesh: MeshSource,
    pub material: Material,
    pub bss: Vec<Vec3>,
    pub css: Vec<CsRecord>,
    pub tps: Vec<Vec3>,
    pub ris: RisSpec,
    pub radio: RadioParams,
    pub l_target: usize,
    #[serde(default = "default_bounces")]
    pub max_bounces: usize,
    #[serde(default)]
    pub combining: Combining,
    #[serde(default)]
    pub polarization: Polarization,
}

fn default_bounces() -> usize {
    2
}

impl ScenarioFile {
    pub fn parse(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Parse { line: e.line(), column: e.column(), msg: e.to_string() })
    }

    pub fn read(path: &FsPath) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Io { path: path.display().to_string(), source: e })?;
        Self::parse(&text)
    }

    /// Builds the scenario; relative mesh paths resolve against `base_dir`.
    pub fn build(&self, base_dir: &FsPath) -> Result<Scenario> {
        let triangles: Vec<Triangle> = match &self.mesh {
            MeshSource::File(p) => {
                let full = if p.is_absolute() { p.clone() } else { base_dir.join(p) };
                load_mesh(&full)?
            }
            MeshSource::Inline(list) => list
                .iter()
                .enumerate()
                .map(|(i, c)| triangle_from_coords(c).map_err(|e| Error::Invalid(format!("mesh[{i}]: {e}"))))
                .collect::<Result<_>>()?,
        };
        self.material.check()?;
        let css = self
            .css
            .iter()
            .enumerate()
            .map(|(i, c)| {
                RisPose::new(c.position, c.boresight, c.up).map_err(|e| Error::Invalid(format!("css[{i}]: {e}")))
            })
            .collect::<Result<Vec<_>>>()?;
        let scn = Scenario {
            scene: Scene::new(triangles, self.material),
            bss: self.bss.clone(),
            css,
            tps: self.tps.clone(),
            ris: self.ris,
            radio: self.radio,
            l_target: self.l_target,
            max_bounces: self.max_bounces,
            combining: self.combining,
            polarization: self.polarization,
        };
        scn.check()?;
        Ok(scn)
    }

    /// Canonical, self-contained form: mesh inlined, axes normalized.
    pub fn from_scenario(scn: &Scenario) -> Self {
        ScenarioFile {
            mesh: MeshSource::Inline(scn.scene.triangles().iter().map(triangle_coords).collect()),
            material: *scn.scene.material(),
            bss: scn.bss.clone(),
            css: scn
                .css
                .iter()
                .map(|c| CsRecord { position: c.position, boresight: c.boresight, up: c.up })
                .collect(),
            tps: scn.tps.clone(),
            ris: scn.ris,
            radio: scn.radio,
            l_target: scn.l_target,
            max_bounces: scn.max_bounces,
            combining: scn.combining,
            polarization: scn.polarization,
        }
    }
}

pub fn load_scenario(path: &FsPath) -> Result<Scenario> {
    let file = ScenarioFile::read(path)?;
    file.build(path.parent().unwrap_or_else(|| FsPath::new(".")))
}

/// Canonical JSON text of a scenario.
pub fn canonical_json(scn: &Scenario) -> String {
    serde_json::to_string_pretty(&ScenarioFile::from_scenario(scn)).expect("scenario serializes")
}

// ---------------------------------------------------------------------------
// Deployment state and actions
// ---------------------------------------------------------------------------

/// Deployment bits plus the CS serving each test point.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(into = "StateRecord", try_from = "StateRecord")]
pub struct DeploymentState {
    pub x: Vec<bool>,
    pub assoc: Vec<Option<usize>>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct StateRecord {
    x: Vec<u8>,
    assoc: Vec<Option<usize>>,
}

impl From<DeploymentState> for StateRecord {
    fn from(s: DeploymentState) -> Self {
        StateRecord { x: s.x.iter().map(|&b| b as u8).collect(), assoc: s.assoc }
    }
}

impl TryFrom<StateRecord> for DeploymentState {
    type Error = String;
    fn try_from(r: StateRecord) -> std::result::Result<Self, String> {
        let x = r
            .x
            .iter()
            .map(|&b| match b {
                0 => Ok(false),
                1 => Ok(true),
                other => Err(format!("deployment bits must be 0 or 1, got {other}")),
            })
            .collect::<std::result::Result<_, _>>()?;
        Ok(DeploymentState { x, assoc: r.assoc })
    }
}

impl DeploymentState {
    pub fn empty(n_cs: usize, n_tp: usize) -> Self {
        DeploymentState { x: vec![false; n_cs], assoc: vec![None; n_tp] }
    }

    pub fn deployed(&self) -> usize {
        self.x.iter().filter(|&&b| b).count()
    }

    pub fn deployed_sites(&self) -> Vec<usize> {
        self.x.iter().enumerate().filter(|(_, &b)| b).map(|(i, _)| i).collect()
    }

    pub fn is_valid(&self, scn: &Scenario) -> bool {
        self.x.len() == scn.n_cs()
            && self.assoc.len() == scn.n_tp()
            && self.deployed() <= scn.l_target
            && self.assoc.iter().all(|a| a.map_or(true, |n| n < self.x.len() && self.x[n]))
    }

    /// Compact key: one byte per site, then one per test point (255 = none).
    pub fn key(&self) -> Vec<u8> {
        let mut k: Vec<u8> = self.x.iter().map(|&b| b as u8).collect();
        k.extend(self.assoc.iter().map(|a| a.map_or(u8::MAX, |n| n as u8)));
        k
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Action {
    Place(usize),
    Remove(usize),
    AssocNext(usize),
    AssocPrev(usize),
    Stop,
}

/// `2N + 2T + 1`.
pub fn action_space_size(scn: &Scenario) -> usize {
    action_count(scn.n_cs(), scn.n_tp())
}

pub fn action_count(n_cs: usize, n_tp: usize) -> usize {
    2 * n_cs + 2 * n_tp + 1
}

impl Action {
    /// Index layout: Place, Remove, AssocNext, AssocPrev blocks, then Stop.
    pub fn from_index(index: usize, n_cs: usize, n_tp: usize) -> Result<Action> {
        let n = n_cs;
        let t = n_tp;
        Ok(match index {
            i if i < n => Action::Place(i),
            i if i < 2 * n => Action::Remove(i - n),
            i if i < 2 * n + t => Action::AssocNext(i - 2 * n),
            i if i < 2 * n + 2 * t => Action::AssocPrev(i - 2 * n - t),
            i if i == 2 * n + 2 * t => Action::Stop,
            i => return Err(Error::OutOfRange { what: "action", index: i, len: action_count(n, t) }),
        })
    }

    pub fn index(&self, n_cs: usize, n_tp: usize) -> usize {
        match *self {
            Action::Place(i) => i,
            Action::Remove(i) => n_cs + i,
            Action::AssocNext(t) => 2 * n_cs + t,
            Action::AssocPrev(t) => 2 * n_cs + n_tp + t,
            Action::Stop => 2 * n_cs + 2 * n_tp,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Step {
    pub state: DeploymentState,
    pub valid: bool,
    pub terminal: bool,
}

pub fn apply_action(scn: &Scenario, state: &DeploymentState, action: Action) -> Result<Step> {
    let n_cs = scn.n_cs();
    let n_tp = scn.n_tp();
    let unchanged = |valid, terminal| Step { state: state.clone(), valid, terminal };
    match action {
        Action::Place(n) | Action::Remove(n) if n >= n_cs => {
            Err(Error::OutOfRange { what: "candidate site", index: n, len: n_cs })
        }
        Action::AssocNext(t) | Action::AssocPrev(t) if t >= n_tp => {
            Err(Error::OutOfRange { what: "test point", index: t, len: n_tp })
        }
        Action::Place(n) => {
            if state.x[n] || state.deployed() >= scn.l_target {
                return Ok(unchanged(false, false));
            }
            let mut s = state.clone();
            s.x[n] = true;
            Ok(Step { state: s, valid: true, terminal: false })
        }
        Action::Remove(n) => {
            if !state.x[n] {
                return Ok(unchanged(false, false));
            }
            let mut s = state.clone();
            s.x[n] = false;
            for a in s.assoc.iter_mut() {
                if *a == Some(n) {
                    *a = None;
                }
            }
            Ok(Step { state: s, valid: true, terminal: false })
        }
        Action::AssocNext(t) | Action::AssocPrev(t) => {
            let sites = state.deployed_sites();
            if sites.is_empty() {
                return Ok(unchanged(false, false));
            }
            let mut options: Vec<Option<usize>> = vec![None];
            options.extend(sites.into_iter().map(Some));
            let cur = options.iter().position(|o| *o == state.assoc[t]).unwrap_or(0);
            let len = options.len();
            let next = if matches!(action, Action::AssocNext(_)) { (cur + 1) % len } else { (cur + len - 1) % len };
            let mut s = state.clone();
            s.assoc[t] = options[next];
            Ok(Step { state: s, valid: true, terminal: false })
        }
        Action::Stop => Ok(unchanged(true, true)),
    }
}

/// `x` followed by the row-major `N x T` one-hot association matrix.
pub fn encode_state(scn: &Scenario, state: &DeploymentState) -> Vec<u8> {
    encode(scn.n_cs(), scn.n_tp(), state)
}

pub fn encode(n_cs: usize, n_tp: usize, state: &DeploymentState) -> Vec<u8> {
    let mut bits = vec![0u8; n_cs + n_cs * n_tp];
    for (i, &b) in state.x.iter().enumerate() {
        bits[i] = b as u8;
    }
    for (t, a) in state.assoc.iter().enumerate() {
        if let Some(n) = a {
            bits[n_cs + n * n_tp + t] = 1;
        }
    }
    bits
}

/// Uniform popcount in `0..=L`, uniform site subset, uniform associations
/// over `none` and the deployed sites.
pub fn random_state<R: Rng + ?Sized>(scn: &Scenario, rng: &mut R) -> DeploymentState {
    let k = rng.gen_range(0..=scn.l_target);
    random_state_with(scn, k, rng)
}

/// Exactly `deployed` sites, associations uniform over `none` and those sites.
pub fn random_state_with<R: Rng + ?Sized>(scn: &Scenario, deployed: usize, rng: &mut R) -> DeploymentState {
    let sites = rand::seq::index::sample(rng, scn.n_cs(), deployed).into_vec();
    let mut s = DeploymentState::empty(scn.n_cs(), scn.n_tp());
    for &n in &sites {
        s.x[n] = true;
    }
    let mut sorted = sites;
    sorted.sort_unstable();
    for a in s.assoc.iter_mut() {
        let pick = rng.gen_range(0..=sorted.len());
        *a = if pick == 0 { None } else { Some(sorted[pick - 1]) };
    }
    s
}

// ---------------------------------------------------------------------------
// Objective
// ---------------------------------------------------------------------------

/// SNR of test point `t`, computed straight from the scene with no
/// precomputation. Reference for [`Evaluator::tp_snr`].
pub fn tp_snr(scn: &Scenario, state: &DeploymentState, t: usize) -> f64 {
    let model = scn.link_model();
    let radio = &scn.radio;
    let tp = scn.tps[t];
    let direct = scn
        .bss
        .iter()
        .map(|&bs| direct_rx_power(&scn.scene, &model, bs, tp, radio))
        .fold(f64::NEG_INFINITY, f64::max);
    let cascaded = match state.assoc[t] {
        None => f64::NEG_INFINITY,
        Some(n) => {
            let pose = &scn.css[n];
            if pose.direction_cosines(tp).is_none() {
                f64::NEG_INFINITY
            } else {
                let targets: Vec<Vec3> = state
                    .assoc
                    .iter()
                    .enumerate()
                    .filter(|(_, a)| **a == Some(n))
                    .map(|(i, _)| scn.tps[i])
                    .filter(|p| pose.direction_cosines(*p).is_some())
                    .collect();
                let spans = beam_spans(pose, &scn.ris, &targets).expect("front-facing targets");
                let mut serving = 0;
                let mut best = f64::NEG_INFINITY;
                for (b, &bs) in scn.bss.iter().enumerate() {
                    let g = model.power_gain(&scn.scene, bs, pose.position);
                    if g > best {
                        best = g;
                        serving = b;
                    }
                }
                cascaded_rx_power(&scn.scene, &model, scn.bss[serving], pose, &scn.ris, tp, &spans, radio)
            }
        }
    };
    direct.max(cascaded) - radio.noise_power_dbm
}

/// Minimum test-point SNR, straight from the scene.
pub fn objective(scn: &Scenario, state: &DeploymentState) -> f64 {
    (0..scn.n_tp()).map(|t| tp_snr(scn, state, t)).fold(f64::INFINITY, f64::min)
}

/// Link gains between every BS, CS and TP, computed once per scenario.
#[derive(Debug, Clone)]
pub struct LinkTable {
    /// `direct[b][t]`
    pub direct: Vec<Vec<f64>>,
    /// `bs_ris[b][n]`
    pub bs_ris: Vec<Vec<f64>>,
    /// `ris_tp[n][t]`
    pub ris_tp: Vec<Vec<f64>>,
}

impl LinkTable {
    pub fn compute(scn: &Scenario) -> Self {
        let model = scn.link_model();
        let scene = &scn.scene;
        let row = |from: Vec3, to: &[Vec3]| -> Vec<f64> { to.iter().map(|&p| model.power_gain(scene, from, p)).collect() };
        let cs_pos: Vec<Vec3> = scn.css.iter().map(|c| c.position).collect();
        let direct = scn.bss.par_iter().map(|&b| row(b, &scn.tps)).collect();
        let bs_ris = scn.bss.par_iter().map(|&b| row(b, &cs_pos)).collect();
        let ris_tp = cs_pos.par_iter().map(|&c| row(c, &scn.tps)).collect();
        LinkTable { direct, bs_ris, ris_tp }
    }
}

/// Fast objective evaluation over a precomputed [`LinkTable`]. Produces the
/// same bits as [`objective`].
#[derive(Debug, Clone)]
pub struct Evaluator {
    scn: Scenario,
    links: LinkTable,
    direct_best: Vec<f64>,
    serving_bs: Vec<usize>,
    cosines: Vec<Vec<Option<(f64, f64)>>>,
}

impl Evaluator {
    pub fn new(scn: Scenario) -> Self {
        let links = LinkTable::compute(&scn);
        Self::with_links(scn, links)
    }

    pub fn with_links(scn: Scenario, links: LinkTable) -> Self {
        let radio = scn.radio;
        let direct_best = (0..scn.n_tp())
            .map(|t| {
                links.direct.iter().map(|row| direct_power_from_gain(&radio, row[t])).fold(f64::NEG_INFINITY, f64::max)
            })
            .collect();
        let serving_bs = (0..scn.n_cs())
            .map(|n| {
                let mut serving = 0;
                let mut best = f64::NEG_INFINITY;
                for (b, row) in links.bs_ris.iter().enumerate() {
                    if row[n] > best {
                        best = row[n];
                        serving = b;
                    }
                }
                serving
            })
            .collect();
        let cosines = scn.css.iter().map(|c| scn.tps.iter().map(|&p| c.direction_cosines(p)).collect()).collect();
        Evaluator { scn, links, direct_best, serving_bs, cosines }
    }

    pub fn scenario(&self) -> &Scenario {
        &self.scn
    }

    pub fn links(&self) -> &LinkTable {
        &self.links
    }

    /// Best direct received power for each test point, in dBm.
    pub fn direct_best_dbm(&self) -> &[f64] {
        &self.direct_best
    }

    pub fn serving_bs(&self, cs: usize) -> usize {
        self.serving_bs[cs]
    }

    pub fn tp_snr(&self, state: &DeploymentState, t: usize) -> f64 {
        let radio = &self.scn.radio;
        let cascaded = match state.assoc[t] {
            Some(n) if self.cosines[n][t].is_some() => {
                let gain = self.cluster_gain(state, n);
                cascaded_power_from_gains(radio, self.links.bs_ris[self.serving_bs[n]][n], gain, self.links.ris_tp[n][t])
            }
            _ => f64::NEG_INFINITY,
        };
        self.direct_best[t].max(cascaded) - radio.noise_power_dbm
    }

    /// Beam gain of site `n` when covering its front-facing associated TPs.
    fn cluster_gain(&self, state: &DeploymentState, n: usize) -> f64 {
        let mut u_lo = f64::INFINITY;
        let mut u_hi = f64::NEG_INFINITY;
        let mut v_lo = f64::INFINITY;
        let mut v_hi = f64::NEG_INFINITY;
        for (t, a) in state.assoc.iter().enumerate() {
            if *a == Some(n) {
                if let Some((u, v)) = self.cosines[n][t] {
                    u_lo = u_lo.min(u);
                    u_hi = u_hi.max(u);
                    v_lo = v_lo.min(v);
                    v_hi = v_hi.max(v);
                }
            }
        }
        ris_gain(&self.scn.ris, &spans_from_ranges(&self.scn.ris, u_hi - u_lo, v_hi - v_lo))
    }

    pub fn objective(&self, state: &DeploymentState) -> f64 {
        (0..self.scn.n_tp()).map(|t| self.tp_snr(state, t)).fold(f64::INFINITY, f64::min)
    }

    /// Objective with every test point unassociated.
    pub fn baseline(&self) -> f64 {
        self.objective(&DeploymentState::empty(self.scn.n_cs(), self.scn.n_tp()))
    }
}

/// Memoizing wrapper; cached and uncached values are identical.
#[derive(Debug)]
pub struct CachedEvaluator<'a> {
    eval: &'a Evaluator,
    cache: HashMap<Vec<u8>, f64>,
    misses: usize,
}

impl<'a> CachedEvaluator<'a> {
    pub fn new(eval: &'a Evaluator) -> Self {
        CachedEvaluator { eval, cache: HashMap::new(), misses: 0 }
    }

    pub fn objective(&mut self, state: &DeploymentState) -> f64 {
        let key = state.key();
        if let Some(&v) = self.cache.get(&key) {
            return v;
        }
        self.misses += 1;
        let v = self.eval.objective(state);
        self.cache.insert(key, v);
        v
    }

    /// Number of distinct states evaluated.
    pub fn distinct(&self) -> usize {
        self.misses
    }

    pub fn evaluator(&self) -> &Evaluator {
        self.eval
    }
}
