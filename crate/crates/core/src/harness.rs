//! Scenario validation, coverage heatmaps, run records and the command line.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::agent::{self, ResultRecord, TrainConfig};
use crate::baselines::{self, SearchResult};
use crate::error::{Error, Result};
use crate::geometry::{visible, Vec3};
use crate::neuralnet::Loss;
use crate::ris_link::{direct_rx_power, isotropic_scatter_power};
use crate::scenario::{canonical_json, DeploymentState, Evaluator, Scenario, ScenarioFile};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

/// Path of a scene shipped in the crate's `scenes/` directory.
pub fn bundled_scene(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("scenes").join(name)
}

// ---------------------------------------------------------------------------
// Validation
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct ValidationReport {
    pub errors: Vec<String>,
    pub warnings: Vec<String>,
}

impl ValidationReport {
    pub fn ok(&self) -> bool {
        self.errors.is_empty()
    }
}

/// Line-of-sight advisories: every CS should see some BS and some TP.
pub fn los_warnings(scn: &Scenario) -> Vec<String> {
    let mut out = Vec::new();
    for (i, cs) in scn.css.iter().enumerate() {
        let p = cs.position;
        if !scn.bss.iter().any(|&b| visible(&scn.scene, b, p)) {
            out.push(format!("css[{i}]: no line of sight to any base station"));
        }
        for (t, &tp) in scn.tps.iter().enumerate() {
            if !visible(&scn.scene, p, tp) {
                out.push(format!("css[{i}]: no line of sight to tps[{t}]"));
            }
        }
    }
    out
}

/// Parses and checks a scenario file. Never panics on bad input.
pub fn validate_file(path: &Path) -> (ValidationReport, Option<Scenario>) {
    let mut report = ValidationReport::default();
    let base = path.parent().unwrap_or_else(|| Path::new("."));
    let built = ScenarioFile::read(path).and_then(|f| f.build(base));
    match built {
        Ok(scn) => {
            report.warnings = los_warnings(&scn);
            (report, Some(scn))
        }
        Err(e) => {
            report.errors.push(e.to_string());
            (report, None)
        }
    }
}

// ---------------------------------------------------------------------------
// Heatmaps
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HeatmapSpec {
    /// Lower-left corner `(x, y)`.
    pub origin: [f64; 2],
    pub extent: [f64; 2],
    pub cell: f64,
    pub height: f64,
}

pub const DEFAULT_CELL_M: f64 = 0.5;
pub const DEFAULT_HEIGHT_M: f64 = 1.5;
pub const DEFAULT_DB_RANGE: (f64, f64) = (-20.0, 80.0);

impl HeatmapSpec {
    /// Covers the scene footprint, or the radio points padded by 5 m when the
    /// scene has no geometry.
    pub fn covering(scn: &Scenario) -> Self {
        let (lo, hi) = match scn.scene.bounds() {
            Some(b) => b,
            None => {
                let pts: Vec<Vec3> =
                    scn.bss.iter().chain(&scn.tps).copied().chain(scn.css.iter().map(|c| c.position)).collect();
                let lo = pts.iter().fold(pts[0], |a, &b| a.min(b)) - Vec3::new(5.0, 5.0, 0.0);
                let hi = pts.iter().fold(pts[0], |a, &b| a.max(b)) + Vec3::new(5.0, 5.0, 0.0);
                (lo, hi)
            }
        };
        HeatmapSpec { origin: [lo.x, lo.y], extent: [hi.x - lo.x, hi.y - lo.y], cell: DEFAULT_CELL_M, height: DEFAULT_HEIGHT_M }
    }

    pub fn dims(&self) -> (usize, usize) {
        let n = |e: f64| ((e / self.cell).ceil() as usize).max(1);
        (n(self.extent[0]), n(self.extent[1]))
    }

    pub fn cell_center(&self, ix: usize, iy: usize) -> Vec3 {
        Vec3::new(
            self.origin[0] + (ix as f64 + 0.5) * self.cell,
            self.origin[1] + (iy as f64 + 0.5) * self.cell,
            self.height,
        )
    }

    fn check(&self) -> Result<()> {
        let finite = self.origin.iter().chain(&self.extent).all(|v| v.is_finite()) && self.height.is_finite();
        if !finite || !(self.cell > 0.0) || self.extent.iter().any(|&e| e <= 0.0) {
            return Err(Error::domain(format!("invalid heatmap grid {self:?}")));
        }
        Ok(())
    }
}

/// SNR grid in dB; `values[iy * nx + ix]`, `-inf` where nothing arrives.
#[derive(Debug, Clone, PartialEq)]
pub struct Heatmap {
    pub spec: HeatmapSpec,
    pub nx: usize,
    pub ny: usize,
    pub values: Vec<f64>,
}

/// Per cell: best of the direct links and of each deployed RIS treated as an
/// isotropic scatterer fed by its serving BS, minus the noise floor.
pub fn compute_heatmap(scn: &Scenario, state: Option<&DeploymentState>, spec: HeatmapSpec) -> Result<Heatmap> {
    spec.check()?;
    let model = scn.link_model();
    let radio = &scn.radio;
    let mut feeds = Vec::new();
    if let Some(s) = state {
        if !s.is_valid(scn) {
            return Err(Error::Invalid("deployment state does not match the scenario".into()));
        }
        for n in s.deployed_sites() {
            let pos = scn.css[n].position;
            let mut serving = (0, f64::NEG_INFINITY);
            for (b, &bs) in scn.bss.iter().enumerate() {
                let g = model.power_gain(&scn.scene, bs, pos);
                if g > serving.1 {
                    serving = (b, g);
                }
            }
            feeds.push((scn.bss[serving.0], pos));
        }
    }
    let (nx, ny) = spec.dims();
    let values = (0..nx * ny)
        .into_par_iter()
        .map(|i| {
            let p = spec.cell_center(i % nx, i / nx);
            let direct = scn
                .bss
                .iter()
                .map(|&b| direct_rx_power(&scn.scene, &model, b, p, radio))
                .fold(f64::NEG_INFINITY, f64::max);
            let scattered = feeds
                .iter()
                .map(|&(b, r)| isotropic_scatter_power(&scn.scene, &model, b, r, p, radio))
                .fold(f64::NEG_INFINITY, f64::max);
            direct.max(scattered) - radio.noise_power_dbm
        })
        .collect();
    Ok(Heatmap { spec, nx, ny, values })
}

impl Heatmap {
    pub fn get(&self, ix: usize, iy: usize) -> f64 {
        self.values[iy * self.nx + ix]
    }

    /// Rows from the top (largest y) down; `-inf` marks empty cells.
    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        for iy in (0..self.ny).rev() {
            let row: Vec<String> = (0..self.nx).map(|ix| self.get(ix, iy).to_string()).collect();
            out.push_str(&row.join(","));
            out.push('\n');
        }
        out
    }

    /// Binary 8-bit PGM, same row order as the CSV; linear in dB between
    /// `lo` and `hi`, clamped.
    pub fn to_pgm(&self, lo: f64, hi: f64) -> Vec<u8> {
        let mut out = format!("P5\n{} {}\n255\n", self.nx, self.ny).into_bytes();
        for iy in (0..self.ny).rev() {
            for ix in 0..self.nx {
                out.push(quantize(self.get(ix, iy), lo, hi));
            }
        }
        out
    }
}

pub fn quantize(db: f64, lo: f64, hi: f64) -> u8 {
    if db.is_nan() {
        return 0;
    }
    (((db - lo) / (hi - lo)).clamp(0.0, 1.0) * 255.0).round() as u8
}

// ---------------------------------------------------------------------------
// Run records
// ---------------------------------------------------------------------------

/// Hex SHA-256 over the given parts, each length-prefixed.
pub fn config_hash(parts: &[&str]) -> String {
    let mut h = Sha256::new();
    for p in parts {
        h.update((p.len() as u64).to_le_bytes());
        h.update(p.as_bytes());
    }
    hex::encode(h.finalize())
}

/// One solver output. The first five fields follow the training result layout.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub x: Vec<u8>,
    pub assoc: Vec<Option<usize>>,
    pub objective_db: Option<f64>,
    pub frames: u64,
    pub seed: Option<u64>,
    pub method: String,
    pub states_evaluated: u64,
    pub baseline_db: Option<f64>,
    pub config_hash: String,
    pub version: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stats: Option<serde_json::Value>,
}

fn finite(v: f64) -> Option<f64> {
    v.is_finite().then_some(v)
}

impl RunRecord {
    pub fn from_search(method: &str, r: &SearchResult, baseline: f64, hash: String) -> Self {
        let rec = ResultRecord::new(&r.best_state, r.best_objective, 0, 0);
        RunRecord {
            x: rec.x,
            assoc: rec.assoc,
            objective_db: rec.objective_db,
            frames: 0,
            seed: None,
            method: method.into(),
            states_evaluated: r.states_evaluated,
            baseline_db: finite(baseline),
            config_hash: hash,
            version: VERSION.into(),
            stats: None,
        }
    }

    pub fn state(&self) -> DeploymentState {
        DeploymentState { x: self.x.iter().map(|&b| b != 0).collect(), assoc: self.assoc.clone() }
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("record serializes");
        s.push('\n');
        s
    }
}

/// One row per record, best objective first; missing objectives last.
pub fn compare_csv(rows: &[(String, RunRecord)]) -> Result<String> {
    let mut sorted: Vec<&(String, RunRecord)> = rows.iter().collect();
    sorted.sort_by(|a, b| {
        let key = |r: &RunRecord| r.objective_db.unwrap_or(f64::NEG_INFINITY);
        key(&b.1).total_cmp(&key(&a.1)).then_with(|| a.1.method.cmp(&b.1.method)).then_with(|| a.0.cmp(&b.0))
    });
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["method", "objective_db", "gain_db", "states_evaluated", "seed", "source"])?;
    for (src, r) in sorted {
        let opt = |v: Option<f64>| v.map_or(String::new(), |v| v.to_string());
        let gain = match (r.objective_db, r.baseline_db) {
            (Some(o), Some(b)) => Some(o - b),
            _ => None,
        };
        w.write_record([
            r.method.clone(),
            opt(r.objective_db),
            opt(gain),
            r.states_evaluated.to_string(),
            r.seed.map_or(String::new(), |s| s.to_string()),
            src.clone(),
        ])?;
    }
    let bytes = w.into_inner().map_err(|e| Error::domain(e.to_string()))?;
    Ok(String::from_utf8(bytes).expect("csv is utf-8"))
}

// ---------------------------------------------------------------------------
// Command line
// ---------------------------------------------------------------------------

/// Every flag can also come from `RISPLAN_<FLAG>`; flags take precedence.
#[derive(Debug, Parser)]
#[command(name = "risplan", version, about = "RIS placement planning with a ray-traced channel model")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Parse and check a scenario; exit 0 iff there are no errors.
    Validate {
        scenario: PathBuf,
        /// Print the canonical JSON form.
        #[arg(long)]
        canonical: bool,
    },
    /// Coverage map at a fixed height, optionally with RISs deployed.
    Heatmap(HeatmapArgs),
    /// Deep Q-learning search.
    Train(TrainArgs),
    /// Exhaustive search over all placements and associations.
    Exhaustive(SolveArgs),
    /// Exhaustive search with TPs grouped into clusters.
    ClusteredEs(ClusteredArgs),
    /// Greedy placement with best-response association.
    Greedy(SolveArgs),
    /// Statistics over uniform random deployments.
    Random(RandomArgs),
    /// Merge result files into one table sorted by objective.
    Compare(CompareArgs),
}

#[derive(Debug, Args)]
pub struct SolveArgs {
    pub scenario: PathBuf,
    /// Result JSON path; stdout when absent.
    #[arg(long, env = "RISPLAN_OUT")]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ClusteredArgs {
    #[command(flatten)]
    pub solve: SolveArgs,
    /// Explicit partition, e.g. "0,1;2;3,4".
    #[arg(long, conflicts_with = "k")]
    pub clusters: Option<String>,
    /// Number of k-means clusters over TP coordinates.
    #[arg(long, env = "RISPLAN_K")]
    pub k: Option<usize>,
}

#[derive(Debug, Args)]
pub struct RandomArgs {
    #[command(flatten)]
    pub solve: SolveArgs,
    #[arg(long, env = "RISPLAN_SEED")]
    pub seed: u64,
    #[arg(long, default_value_t = 1000, env = "RISPLAN_SAMPLES")]
    pub samples: usize,
    #[arg(long, default_value_t = agent::DEFAULT_OBJECTIVE_FLOOR_DB, env = "RISPLAN_OBJECTIVE_FLOOR_DB", allow_hyphen_values = true)]
    pub objective_floor_db: f64,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    pub scenario: PathBuf,
    #[arg(long, env = "RISPLAN_SEED")]
    pub seed: u64,
    #[arg(long, env = "RISPLAN_TOTAL_FRAMES")]
    pub total_frames: Option<u64>,
    #[arg(long, env = "RISPLAN_EPISODE_MAX_FRAMES")]
    pub episode_max_frames: Option<u64>,
    #[arg(long, env = "RISPLAN_GAMMA_Q")]
    pub gamma_q: Option<f64>,
    #[arg(long, env = "RISPLAN_LR")]
    pub lr: Option<f64>,
    #[arg(long, env = "RISPLAN_TRAIN_PERIOD")]
    pub train_period: Option<u64>,
    #[arg(long, env = "RISPLAN_SYNC_PERIOD")]
    pub sync_period: Option<u64>,
    #[arg(long, env = "RISPLAN_BATCH_SIZE")]
    pub batch_size: Option<usize>,
    #[arg(long, env = "RISPLAN_BUFFER_CAPACITY")]
    pub buffer_capacity: Option<usize>,
    #[arg(long, env = "RISPLAN_INVALID_PENALTY")]
    pub invalid_penalty: Option<f64>,
    #[arg(long, env = "RISPLAN_REWARD_SCALE")]
    pub reward_scale: Option<f64>,
    #[arg(long, env = "RISPLAN_OBJECTIVE_FLOOR_DB", allow_hyphen_values = true)]
    pub objective_floor_db: Option<f64>,
    #[arg(long, env = "RISPLAN_MASK_INVALID")]
    pub mask_invalid: bool,
    #[arg(long, value_enum, env = "RISPLAN_LOSS")]
    pub loss: Option<LossArg>,
    #[arg(long, env = "RISPLAN_OUT")]
    pub out: Option<PathBuf>,
    /// Per-frame CSV log.
    #[arg(long, env = "RISPLAN_LOG")]
    pub log: Option<PathBuf>,
    /// Final network weights.
    #[arg(long, env = "RISPLAN_CHECKPOINT")]
    pub checkpoint: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, clap::ValueEnum)]
pub enum LossArg {
    Mse,
    Huber,
}

impl TrainArgs {
    pub fn config(&self) -> TrainConfig {
        let d = TrainConfig::default();
        TrainConfig {
            total_frames: self.total_frames.unwrap_or(d.total_frames),
            episode_max_frames: self.episode_max_frames.unwrap_or(d.episode_max_frames),
            gamma_q: self.gamma_q.unwrap_or(d.gamma_q),
            lr: self.lr.unwrap_or(d.lr),
            train_period: self.train_period.unwrap_or(d.train_period),
            sync_period: self.sync_period.unwrap_or(d.sync_period),
            batch_size: self.batch_size.unwrap_or(d.batch_size),
            buffer_capacity: self.buffer_capacity.unwrap_or(d.buffer_capacity),
            seed: self.seed,
            invalid_penalty: self.invalid_penalty.unwrap_or(d.invalid_penalty),
            reward_scale: self.reward_scale.unwrap_or(d.reward_scale),
            objective_floor_db: self.objective_floor_db.unwrap_or(d.objective_floor_db),
            mask_invalid: self.mask_invalid,
            loss: match self.loss {
                None => d.loss,
                Some(LossArg::Mse) => Loss::Mse,
                Some(LossArg::Huber) => Loss::Huber,
            },
        }
    }
}

#[derive(Debug, Args)]
pub struct HeatmapArgs {
    pub scenario: PathBuf,
    /// Deployment JSON (`{"x": [...], "assoc": [...]}`, result files work too).
    #[arg(long)]
    pub state: Option<PathBuf>,
    #[arg(long, default_value_t = DEFAULT_CELL_M, env = "RISPLAN_CELL")]
    pub cell: f64,
    #[arg(long, default_value_t = DEFAULT_HEIGHT_M, env = "RISPLAN_HEIGHT")]
    pub height: f64,
    /// Lower-left corner "x,y"; scene footprint by default.
    #[arg(long, value_parser = parse_pair, allow_hyphen_values = true)]
    pub origin: Option<[f64; 2]>,
    /// Grid size "w,h" in meters.
    #[arg(long, value_parser = parse_pair)]
    pub extent: Option<[f64; 2]>,
    #[arg(long, default_value_t = DEFAULT_DB_RANGE.0, env = "RISPLAN_DB_MIN", allow_hyphen_values = true)]
    pub db_min: f64,
    #[arg(long, default_value_t = DEFAULT_DB_RANGE.1, env = "RISPLAN_DB_MAX", allow_hyphen_values = true)]
    pub db_max: f64,
    #[arg(long, default_value = "heatmap.csv")]
    pub csv: PathBuf,
    #[arg(long, default_value = "heatmap.pgm")]
    pub pgm: PathBuf,
}

#[derive(Debug, Args)]
pub struct CompareArgs {
    /// Result JSON files.
    #[arg(required = true)]
    pub results: Vec<PathBuf>,
    /// Externally computed objective, "method=dB"; repeatable.
    #[arg(long = "external")]
    pub external: Vec<String>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

fn parse_pair(s: &str) -> std::result::Result<[f64; 2], String> {
    let parts: Vec<&str> = s.split(',').collect();
    if parts.len() != 2 {
        return Err(format!("expected \"a,b\", got {s:?}"));
    }
    let p = |t: &str| t.trim().parse::<f64>().map_err(|e| format!("{t:?}: {e}"));
    Ok([p(parts[0])?, p(parts[1])?])
}

/// Parses "0,1;2;3,4" into clusters of TP indices.
pub fn parse_clusters(s: &str) -> Result<Vec<Vec<usize>>> {
    s.split(';')
        .map(|group| {
            group
                .split(',')
                .map(|t| t.trim().parse::<usize>().map_err(|e| Error::Partition(format!("{t:?}: {e}"))))
                .collect()
        })
        .collect()
}

fn write_output(path: Option<&Path>, text: &str) -> anyhow::Result<()> {
    match path {
        Some(p) => fs::write(p, text).with_context(|| format!("writing {}", p.display())),
        None => {
            std::io::stdout().write_all(text.as_bytes())?;
            Ok(())
        }
    }
}

fn load(path: &Path) -> anyhow::Result<Scenario> {
    let (report, scn) = validate_file(path);
    match scn {
        Some(s) => Ok(s),
        None => bail!("{}: {}", path.display(), report.errors.join("; ")),
    }
}

fn hash_for(scn: &Scenario, command: &str, config: &str) -> String {
    config_hash(&[&canonical_json(scn), command, config, VERSION])
}

fn run_validate(path: &Path, canonical: bool) -> anyhow::Result<bool> {
    let (report, scn) = validate_file(path);
    for e in &report.errors {
        eprintln!("error: {e}");
    }
    for w in &report.warnings {
        eprintln!("warning: {w}");
    }
    if let Some(s) = scn {
        if canonical {
            println!("{}", canonical_json(&s));
        } else {
            println!(
                "{}: ok (M={}, N={}, T={}, L={}, {} triangles, {} warnings)",
                path.display(),
                s.bss.len(),
                s.n_cs(),
                s.n_tp(),
                s.l_target,
                s.scene.triangles().len(),
                report.warnings.len()
            );
        }
    }
    Ok(report.ok())
}

fn run_heatmap(a: &HeatmapArgs) -> anyhow::Result<()> {
    let scn = load(&a.scenario)?;
    let state = match &a.state {
        Some(p) => {
            let text = fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            Some(serde_json::from_str::<DeploymentState>(&text).with_context(|| format!("parsing {}", p.display()))?)
        }
        None => None,
    };
    let mut spec = HeatmapSpec::covering(&scn);
    spec.cell = a.cell;
    spec.height = a.height;
    if let Some(o) = a.origin {
        spec.origin = o;
    }
    if let Some(e) = a.extent {
        spec.extent = e;
    }
    if !(a.db_max > a.db_min) {
        bail!("--db-max must exceed --db-min");
    }
    let map = compute_heatmap(&scn, state.as_ref(), spec)?;
    fs::write(&a.csv, map.to_csv()).with_context(|| format!("writing {}", a.csv.display()))?;
    fs::write(&a.pgm, map.to_pgm(a.db_min, a.db_max)).with_context(|| format!("writing {}", a.pgm.display()))?;
    eprintln!("{} x {} cells -> {}, {}", map.nx, map.ny, a.csv.display(), a.pgm.display());
    Ok(())
}

fn run_train(a: &TrainArgs) -> anyhow::Result<()> {
    let scn = load(&a.scenario)?;
    let cfg = a.config();
    cfg.check()?;
    let start = Instant::now();
    let eval = Evaluator::new(scn);
    let baseline = eval.baseline();
    let out = agent::train(&eval, &cfg)?;
    let rec = ResultRecord::new(&out.best_state, out.best_objective, cfg.total_frames, cfg.seed);
    let cfg_json = serde_json::to_string(&cfg)?;
    let run = RunRecord {
        x: rec.x,
        assoc: rec.assoc,
        objective_db: rec.objective_db,
        frames: rec.frames,
        seed: Some(rec.seed),
        method: "dql".into(),
        states_evaluated: out.states_evaluated,
        baseline_db: finite(baseline),
        config_hash: hash_for(eval.scenario(), "train", &cfg_json),
        version: VERSION.into(),
        stats: Some(serde_json::json!({ "best_frame": out.best_frame, "episodes": out.log.episode_best.len() })),
    };
    if let Some(p) = &a.log {
        let f = fs::File::create(p).with_context(|| format!("creating {}", p.display()))?;
        out.log.write_csv(std::io::BufWriter::new(f))?;
    }
    if let Some(p) = &a.checkpoint {
        fs::write(p, out.network.to_checkpoint()).with_context(|| format!("writing {}", p.display()))?;
    }
    write_output(a.out.as_deref(), &run.to_json())?;
    eprintln!("train: best {} dB after {} frames ({:.1} s)", fmt_db(run.objective_db), cfg.total_frames, start.elapsed().as_secs_f64());
    Ok(())
}

fn run_search(method: &str, a: &SolveArgs, config: &str, f: impl Fn(&Evaluator) -> Result<SearchResult>) -> anyhow::Result<()> {
    let scn = load(&a.scenario)?;
    let eval = Evaluator::new(scn);
    let r = f(&eval)?;
    let rec = RunRecord::from_search(method, &r, eval.baseline(), hash_for(eval.scenario(), method, config));
    write_output(a.out.as_deref(), &rec.to_json())?;
    eprintln!("{method}: best {} dB, {} states ({:.2} s)", fmt_db(rec.objective_db), r.states_evaluated, r.wall_time_s);
    Ok(())
}

fn run_random(a: &RandomArgs) -> anyhow::Result<()> {
    let scn = load(&a.solve.scenario)?;
    let eval = Evaluator::new(scn);
    let stats = baselines::random_baseline(&eval, a.samples, a.seed, a.objective_floor_db)?;
    let config = format!("samples={};seed={};floor={}", a.samples, a.seed, a.objective_floor_db);
    let search = SearchResult {
        best_state: stats.best_state.clone(),
        best_objective: stats.max,
        states_evaluated: a.samples as u64,
        wall_time_s: 0.0,
    };
    let mut rec = RunRecord::from_search("random", &search, eval.baseline(), hash_for(eval.scenario(), "random", &config));
    rec.seed = Some(a.seed);
    rec.stats = Some(serde_json::json!({
        "mean": stats.mean,
        "stddev": stats.stddev,
        "max": stats.max,
        "samples": stats.samples,
    }));
    write_output(a.solve.out.as_deref(), &rec.to_json())?;
    Ok(())
}

fn run_compare(a: &CompareArgs) -> anyhow::Result<()> {
    let mut rows = Vec::new();
    for p in &a.results {
        let text = fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
        let rec: RunRecord = serde_json::from_str(&text).with_context(|| format!("parsing {}", p.display()))?;
        rows.push((p.display().to_string(), rec));
    }
    for e in &a.external {
        let Some((method, value)) = e.split_once('=') else { bail!("--external expects method=dB, got {e:?}") };
        let v: f64 = value.trim().parse().with_context(|| format!("--external {e:?}"))?;
        rows.push((
            "external".into(),
            RunRecord {
                x: Vec::new(),
                assoc: Vec::new(),
                objective_db: Some(v),
                frames: 0,
                seed: None,
                method: method.trim().into(),
                states_evaluated: 0,
                baseline_db: None,
                config_hash: String::new(),
                version: String::new(),
                stats: None,
            },
        ));
    }
    write_output(a.out.as_deref(), &compare_csv(&rows)?)
}

pub fn run(cli: Cli) -> anyhow::Result<bool> {
    match cli.command {
        Command::Validate { scenario, canonical } => return run_validate(&scenario, canonical),
        Command::Heatmap(a) => run_heatmap(&a)?,
        Command::Train(a) => run_train(&a)?,
        Command::Exhaustive(a) => run_search("exhaustive", &a, "", baselines::exhaustive_search)?,
        Command::ClusteredEs(a) => {
            let scn = load(&a.solve.scenario)?;
            let clusters = match (&a.clusters, a.k) {
                (Some(s), _) => parse_clusters(s)?,
                (None, Some(k)) => baselines::kmeans_clusters(&scn.tps, k),
                (None, None) => (0..scn.n_tp()).map(|t| vec![t]).collect(),
            };
            let config = serde_json::to_string(&clusters)?;
            run_search("clustered-es", &a.solve, &config, |e| baselines::clustered_exhaustive(e, &clusters))?
        }
        Command::Greedy(a) => run_search("greedy", &a, "", baselines::greedy)?,
        Command::Random(a) => run_random(&a)?,
        Command::Compare(a) => run_compare(&a)?,
    }
    Ok(true)
}

/// Entry point for the binary: 0 on success, 1 on failure, 2 on usage errors.
fn fmt_db(v: Option<f64>) -> String {
    v.map_or_else(|| "-inf".to_string(), |v| format!("{v:.3}"))
}

pub fn main_with_args<I, T>(args: I) -> ExitCode
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(2) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::propagation::{Combining, Material, Polarization};
    use crate::ris_link::{RadioParams, RisPose, RisSpec};
    use crate::geometry::Scene;

    fn free_scene() -> Scenario {
        Scenario {
            scene: Scene::empty(Material::itu_concrete()),
            bss: vec![Vec3::new(0.25, 0.25, 1.5)],
            css: vec![RisPose::new(Vec3::new(5.0, 0.0, 3.0), Vec3::new(-1.0, 0.0, 0.0), Vec3::new(0.0, 0.0, 1.0)).unwrap()],
            tps: vec![Vec3::new(1.0, 1.0, 1.5)],
            ris: RisSpec::new(16, 16, 0.5).unwrap(),
            radio: RadioParams::default_26ghz(),
            l_target: 1,
            max_bounces: 0,
            combining: Combining::Coherent,
            polarization: Polarization::Te,
        }
    }

    #[test]
    fn grid_dimensions_round_up() {
        let spec = HeatmapSpec { origin: [0.0, 0.0], extent: [10.2, 3.0], cell: 0.5, height: 1.5 };
        assert_eq!(spec.dims(), (21, 6));
    }

    #[test]
    fn cell_one_meter_from_bs() {
        let scn = free_scene();
        // Cell (1, 0) is centered at (0.75, 0.25): 0.5 m from the BS in x. Use
        // a 1 m cell so the center sits exactly 1 m away.
        let spec = HeatmapSpec { origin: [0.75, -0.25], extent: [1.0, 1.0], cell: 1.0, height: 1.5 };
        let map = compute_heatmap(&scn, None, spec).unwrap();
        assert_eq!(map.spec.cell_center(0, 0).distance(scn.bss[0]), 1.0);
        assert!((map.get(0, 0) - 55.3).abs() < 0.05, "{}", map.get(0, 0));
    }

    #[test]
    fn ris_never_lowers_a_cell() {
        let scn = free_scene();
        let spec = HeatmapSpec { origin: [-2.0, -4.0], extent: [8.0, 8.0], cell: 1.0, height: 1.5 };
        let bare = compute_heatmap(&scn, None, spec).unwrap();
        let s = DeploymentState { x: vec![true], assoc: vec![None] };
        let with = compute_heatmap(&scn, Some(&s), spec).unwrap();
        assert!(bare.values.iter().zip(&with.values).all(|(a, b)| b >= a));
    }

    #[test]
    fn pgm_matches_csv() {
        let scn = free_scene();
        let spec = HeatmapSpec { origin: [-2.0, -3.0], extent: [6.0, 4.0], cell: 0.5, height: 1.5 };
        let map = compute_heatmap(&scn, None, spec).unwrap();
        let pgm = map.to_pgm(-20.0, 80.0);
        let header = format!("P5\n{} {}\n255\n", map.nx, map.ny);
        assert!(pgm.starts_with(header.as_bytes()));
        let pixels = &pgm[header.len()..];
        let csv = map.to_csv();
        let parsed: Vec<f64> = csv.lines().flat_map(|l| l.split(',').map(|v| v.parse::<f64>().unwrap())).collect();
        assert_eq!(parsed.len(), pixels.len());
        for (v, &p) in parsed.iter().zip(pixels) {
            assert_eq!(quantize(*v, -20.0, 80.0), p);
            let back = -20.0 + p as f64 / 255.0 * 100.0;
            if (-20.0..=80.0).contains(v) {
                assert!((back - v).abs() <= 100.0 / 255.0 / 2.0 + 1e-9);
            }
        }
        assert_eq!(quantize(f64::NEG_INFINITY, -20.0, 80.0), 0);
    }

    #[test]
    fn hash_is_stable_and_sensitive() {
        let a = config_hash(&["x", "y"]);
        assert_eq!(a, config_hash(&["x", "y"]));
        assert_ne!(a, config_hash(&["xy", ""]));
        assert_eq!(a.len(), 64);
    }

    #[test]
    fn cluster_string_parsing() {
        assert_eq!(parse_clusters("0,1;2; 3 ,4").unwrap(), vec![vec![0, 1], vec![2], vec![3, 4]]);
        assert!(parse_clusters("0,,1").is_err());
    }

    #[test]
    fn compare_sorts_by_objective() {
        let mk = |m: &str, v: Option<f64>| RunRecord {
            x: vec![],
            assoc: vec![],
            objective_db: v,
            frames: 0,
            seed: None,
            method: m.into(),
            states_evaluated: 1,
            baseline_db: Some(0.0),
            config_hash: String::new(),
            version: String::new(),
            stats: None,
        };
        let rows = vec![
            ("a".to_string(), mk("greedy", Some(3.0))),
            ("b".to_string(), mk("none", None)),
            ("c".to_string(), mk("exhaustive", Some(7.5))),
        ];
        let csv = compare_csv(&rows).unwrap();
        let methods: Vec<&str> = csv.lines().skip(1).map(|l| l.split(',').next().unwrap()).collect();
        assert_eq!(methods, vec!["exhaustive", "greedy", "none"]);
    }
}
