//! Reference solvers: exhaustive search, clustered exhaustive search,
//! greedy construction and random sampling.

use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::geometry::Vec3;
use crate::scenario::{random_state_with, DeploymentState, Evaluator};

/// Largest `C(N,L) (L+1)^T` exhaustive search will attempt.
pub const MAX_ES_STATES: u128 = 100_000_000;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SearchResult {
    pub best_state: DeploymentState,
    pub best_objective: f64,
    pub states_evaluated: u64,
    pub wall_time_s: f64,
}

pub fn binomial(n: usize, k: usize) -> u128 {
    if k > n {
        return 0;
    }
    let k = k.min(n - k);
    (0..k).fold(1u128, |acc, i| acc * (n - i) as u128 / (i + 1) as u128)
}

fn search_size(n: usize, l: usize, groups: usize) -> u128 {
    let per = (l as u128 + 1).checked_pow(groups as u32).unwrap_or(u128::MAX);
    binomial(n, l).saturating_mul(per)
}

/// All `k`-subsets of `0..n` in lexicographic order.
pub fn combinations(n: usize, k: usize) -> Vec<Vec<usize>> {
    let mut out = Vec::new();
    let mut cur: Vec<usize> = (0..k).collect();
    if k > n {
        return out;
    }
    loop {
        out.push(cur.clone());
        let Some(i) = (0..k).rev().find(|&i| cur[i] != i + n - k) else { break };
        cur[i] += 1;
        for j in i + 1..k {
            cur[j] = cur[j - 1] + 1;
        }
    }
    out
}

/// `true` if `(v, s)` beats `(bv, bs)`: higher objective, then smaller state.
fn better(v: f64, s: &DeploymentState, bv: f64, bs: &DeploymentState) -> bool {
    v > bv || (v == bv && s < bs)
}

/// Best assignment for one deployment, with `groups[g]` listing the TPs
/// that share the `g`th choice. Choices count `none` first, then the sites
/// in ascending order; the counter is little-endian in the group index so
/// later groups vary slowest.
fn best_for_deployment(eval: &Evaluator, sites: &[usize], groups: &[Vec<usize>]) -> (f64, DeploymentState, u64) {
    let scn = eval.scenario();
    let mut state = DeploymentState::empty(scn.n_cs(), scn.n_tp());
    for &n in sites {
        state.x[n] = true;
    }
    let radix = sites.len() + 1;
    let mut digits = vec![0usize; groups.len()];
    let mut best: Option<(f64, DeploymentState)> = None;
    let mut count = 0u64;
    loop {
        for (g, members) in groups.iter().enumerate() {
            let choice = if digits[g] == 0 { None } else { Some(sites[digits[g] - 1]) };
            for &t in members {
                state.assoc[t] = choice;
            }
        }
        let v = eval.objective(&state);
        count += 1;
        match &best {
            Some((bv, bs)) if !better(v, &state, *bv, bs) => {}
            _ => best = Some((v, state.clone())),
        }
        let mut g = 0;
        while g < digits.len() {
            digits[g] += 1;
            if digits[g] < radix {
                break;
            }
            digits[g] = 0;
            g += 1;
        }
        if g == digits.len() {
            break;
        }
    }
    let (v, s) = best.expect("at least one assignment");
    (v, s, count)
}

fn grouped_search(eval: &Evaluator, groups: &[Vec<usize>]) -> Result<SearchResult> {
    let start = Instant::now();
    let scn = eval.scenario();
    let (n, l) = (scn.n_cs(), scn.l_target);
    let size = search_size(n, l, groups.len());
    if size > MAX_ES_STATES {
        return Err(Error::TooLarge { states: size, limit: MAX_ES_STATES });
    }
    let per_deployment: Vec<(f64, DeploymentState, u64)> =
        combinations(n, l).par_iter().map(|sites| best_for_deployment(eval, sites, groups)).collect();
    let mut total = 0;
    let mut best: Option<(f64, DeploymentState)> = None;
    for (v, s, c) in per_deployment {
        total += c;
        match &best {
            Some((bv, bs)) if !better(v, &s, *bv, bs) => {}
            _ => best = Some((v, s)),
        }
    }
    let (best_objective, best_state) = best.expect("N >= L guarantees one deployment");
    Ok(SearchResult { best_state, best_objective, states_evaluated: total, wall_time_s: start.elapsed().as_secs_f64() })
}

/// Enumerates every choice of exactly `L` sites and every association vector.
/// Ties go to the lexicographically smallest `(x, assoc)`.
pub fn exhaustive_search(eval: &Evaluator) -> Result<SearchResult> {
    let groups: Vec<Vec<usize>> = (0..eval.scenario().n_tp()).map(|t| vec![t]).collect();
    grouped_search(eval, &groups)
}

/// Checks that `clusters` partitions `0..n_tp` into non-empty sets.
pub fn check_partition(clusters: &[Vec<usize>], n_tp: usize) -> Result<()> {
    let mut seen = vec![false; n_tp];
    for (i, c) in clusters.iter().enumerate() {
        if c.is_empty() {
            return Err(Error::Partition(format!("cluster {i} is empty")));
        }
        for &t in c {
            if t >= n_tp {
                return Err(Error::Partition(format!("test point {t} out of range (T = {n_tp})")));
            }
            if std::mem::replace(&mut seen[t], true) {
                return Err(Error::Partition(format!("test point {t} appears more than once")));
            }
        }
    }
    if let Some(t) = seen.iter().position(|&s| !s) {
        return Err(Error::Partition(format!("test point {t} is not in any cluster")));
    }
    Ok(())
}

/// Exhaustive search where all TPs of a cluster share one association.
pub fn clustered_exhaustive(eval: &Evaluator, clusters: &[Vec<usize>]) -> Result<SearchResult> {
    check_partition(clusters, eval.scenario().n_tp())?;
    grouped_search(eval, clusters)
}

const BEST_RESPONSE_SWEEPS: usize = 10;

/// Each TP in turn takes the option that maximizes its own SNR; repeated
/// until nothing changes or the sweep limit is hit.
fn best_response(eval: &Evaluator, state: &mut DeploymentState) {
    let sites = state.deployed_sites();
    let mut options: Vec<Option<usize>> = vec![None];
    options.extend(sites.iter().copied().map(Some));
    for _ in 0..BEST_RESPONSE_SWEEPS {
        let mut changed = false;
        for t in 0..state.assoc.len() {
            let current = state.assoc[t];
            let mut best = (f64::NEG_INFINITY, current);
            let mut first = true;
            for &o in &options {
                state.assoc[t] = o;
                let v = eval.tp_snr(state, t);
                if first || v > best.0 {
                    best = (v, o);
                    first = false;
                }
            }
            state.assoc[t] = best.1;
            changed |= best.1 != current;
        }
        if !changed {
            break;
        }
    }
}

/// `L` rounds of placing the site whose addition (after best-response
/// re-association) gives the highest objective.
pub fn greedy(eval: &Evaluator) -> Result<SearchResult> {
    let start = Instant::now();
    let scn = eval.scenario();
    let mut state = DeploymentState::empty(scn.n_cs(), scn.n_tp());
    let mut value = eval.objective(&state);
    let mut evaluated = 1u64;
    for _ in 0..scn.l_target {
        let mut round: Option<(f64, DeploymentState)> = None;
        for n in 0..scn.n_cs() {
            if state.x[n] {
                continue;
            }
            let mut cand = state.clone();
            cand.x[n] = true;
            best_response(eval, &mut cand);
            let v = eval.objective(&cand);
            evaluated += 1;
            if round.as_ref().map_or(true, |(bv, _)| v > *bv) {
                round = Some((v, cand));
            }
        }
        let (v, s) = round.expect("N >= L leaves a free site");
        state = s;
        value = v;
    }
    Ok(SearchResult { best_state: state, best_objective: value, states_evaluated: evaluated, wall_time_s: start.elapsed().as_secs_f64() })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RandomStats {
    pub mean: f64,
    pub stddev: f64,
    pub max: f64,
    /// Clamped objective of each sample, in draw order.
    pub samples: Vec<f64>,
    pub best_state: DeploymentState,
}

/// Objective statistics over uniform random states with exactly `L` sites.
/// Values are clamped to `floor_db` first; `stddev` is the population one.
pub fn random_baseline(eval: &Evaluator, samples: usize, seed: u64, floor_db: f64) -> Result<RandomStats> {
    if samples == 0 {
        return Err(Error::domain("random baseline needs at least one sample"));
    }
    let scn = eval.scenario();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut values = Vec::with_capacity(samples);
    let mut best: Option<(f64, DeploymentState)> = None;
    for _ in 0..samples {
        let s = random_state_with(scn, scn.l_target, &mut rng);
        let v = eval.objective(&s).max(floor_db);
        if best.as_ref().map_or(true, |(bv, _)| v > *bv) {
            best = Some((v, s));
        }
        values.push(v);
    }
    let n = samples as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    let (max, best_state) = best.unwrap();
    Ok(RandomStats { mean, stddev: var.sqrt(), max, samples: values, best_state })
}

/// Lloyd's k-means on TP coordinates with farthest-point seeding from TP 0.
/// Deterministic; empty clusters are dropped. Not the only sensible choice
/// of clustering, just a convenient default.
pub fn kmeans_clusters(points: &[Vec3], k: usize) -> Vec<Vec<usize>> {
    if points.is_empty() || k == 0 {
        return Vec::new();
    }
    let k = k.min(points.len());
    let mut centers = vec![points[0]];
    while centers.len() < k {
        let far = (0..points.len())
            .max_by(|&a, &b| {
                let da = centers.iter().map(|c| c.distance(points[a])).fold(f64::INFINITY, f64::min);
                let db = centers.iter().map(|c| c.distance(points[b])).fold(f64::INFINITY, f64::min);
                da.total_cmp(&db).then(b.cmp(&a))
            })
            .unwrap();
        centers.push(points[far]);
    }
    let mut labels = vec![usize::MAX; points.len()];
    for _ in 0..100 {
        let new: Vec<usize> = points
            .iter()
            .map(|p| {
                (0..centers.len())
                    .min_by(|&a, &b| centers[a].distance(*p).total_cmp(&centers[b].distance(*p)).then(a.cmp(&b)))
                    .unwrap()
            })
            .collect();
        if new == labels {
            break;
        }
        labels = new;
        for (c, center) in centers.iter_mut().enumerate() {
            let members: Vec<Vec3> = points.iter().zip(&labels).filter(|(_, &l)| l == c).map(|(p, _)| *p).collect();
            if !members.is_empty() {
                let sum = members.iter().fold(Vec3::ZERO, |a, &b| a + b);
                *center = sum * (1.0 / members.len() as f64);
            }
        }
    }
    let mut clusters: Vec<Vec<usize>> = (0..centers.len())
        .map(|c| (0..points.len()).filter(|&i| labels[i] == c).collect())
        .filter(|v: &Vec<usize>| !v.is_empty())
        .collect();
    clusters.sort();
    clusters
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenario::objective;
    use crate::scenario::tests::shadow_scenario;

    #[test]
    fn combination_enumeration() {
        assert_eq!(combinations(4, 2), vec![vec![0, 1], vec![0, 2], vec![0, 3], vec![1, 2], vec![1, 3], vec![2, 3]]);
        assert_eq!(combinations(3, 0), vec![Vec::<usize>::new()]);
        assert_eq!(combinations(3, 3), vec![vec![0, 1, 2]]);
        for n in 0..8 {
            for k in 0..=n {
                assert_eq!(combinations(n, k).len() as u128, binomial(n, k));
            }
        }
        assert_eq!(binomial(6, 2) * 3u128.pow(5), 3645);
    }

    #[test]
    fn es_counts_and_reevaluates() {
        let eval = Evaluator::new(shadow_scenario());
        let r = exhaustive_search(&eval).unwrap();
        assert_eq!(r.states_evaluated, 3 * 9);
        assert_eq!(r.best_objective.to_bits(), objective(eval.scenario(), &r.best_state).to_bits());
        assert!(r.best_objective >= eval.baseline());
    }

    #[test]
    fn forced_deployment_single_tp() {
        let mut scn = shadow_scenario();
        scn.css.truncate(2);
        scn.tps.truncate(1);
        scn.l_target = 2;
        let eval = Evaluator::new(scn.clone());
        let r = exhaustive_search(&eval).unwrap();
        assert_eq!(r.states_evaluated, 3);
        let mut best = f64::NEG_INFINITY;
        for a in [None, Some(0), Some(1)] {
            let s = DeploymentState { x: vec![true, true], assoc: vec![a] };
            best = best.max(objective(&scn, &s));
        }
        assert_eq!(r.best_objective, best);
    }

    #[test]
    fn size_guard() {
        let mut scn = shadow_scenario();
        scn.tps = vec![scn.tps[0]; 30];
        let eval = Evaluator::new(scn);
        assert!(matches!(exhaustive_search(&eval), Err(Error::TooLarge { .. })));
    }

    #[test]
    fn clustering_limits() {
        let eval = Evaluator::new(shadow_scenario());
        let es = exhaustive_search(&eval).unwrap();
        let fine = clustered_exhaustive(&eval, &[vec![0], vec![1]]).unwrap();
        assert_eq!(fine, SearchResult { wall_time_s: fine.wall_time_s, ..es.clone() });
        let coarse = clustered_exhaustive(&eval, &[vec![0, 1]]).unwrap();
        assert_eq!(coarse.states_evaluated, 3 * 3);
        assert!(coarse.best_objective <= es.best_objective);
        assert_eq!(coarse.best_state.assoc[0], coarse.best_state.assoc[1]);
    }

    #[test]
    fn partition_errors() {
        assert!(check_partition(&[vec![0], vec![1]], 2).is_ok());
        assert!(check_partition(&[vec![0]], 2).is_err());
        assert!(check_partition(&[vec![0, 1], vec![1]], 2).is_err());
        assert!(check_partition(&[vec![0, 2]], 2).is_err());
        assert!(check_partition(&[vec![0, 1], vec![]], 2).is_err());
    }

    #[test]
    fn greedy_and_random_are_dominated() {
        let eval = Evaluator::new(shadow_scenario());
        let es = exhaustive_search(&eval).unwrap();
        let g = greedy(&eval).unwrap();
        assert_eq!(g, SearchResult { wall_time_s: g.wall_time_s, ..greedy(&eval).unwrap() });
        assert!(g.best_objective <= es.best_objective);
        let r = random_baseline(&eval, 200, 3, -150.0).unwrap();
        assert!(r.max <= es.best_objective.max(-150.0));
        assert_eq!(r, random_baseline(&eval, 200, 3, -150.0).unwrap());
        let one = random_baseline(&eval, 1, 8, -150.0).unwrap();
        assert_eq!(one.mean, one.max);
        assert_eq!(one.stddev, 0.0);
    }

    #[test]
    fn kmeans_separates_obvious_groups() {
        let pts = vec![
            Vec3::new(0.0, 0.0, 0.0),
            Vec3::new(10.0, 0.0, 0.0),
            Vec3::new(0.5, 0.0, 0.0),
            Vec3::new(10.5, 0.0, 0.0),
            Vec3::new(0.0, 0.5, 0.0),
        ];
        assert_eq!(kmeans_clusters(&pts, 2), vec![vec![0, 2, 4], vec![1, 3]]);
        let c = kmeans_clusters(&pts, 9);
        check_partition(&c, pts.len()).unwrap();
    }
}
