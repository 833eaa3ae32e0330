//! Quenched and reinforced walks, path statistics, regeneration times and
//! velocity estimation.
//!
//! Walks on the whole lattice run in a [`LatticeEnv`], which samples the
//! environment lazily in blocks of [`BLOCK_SIZE`] sites. Each block draws from
//! its own stream, so the environment does not depend on the order in which
//! blocks are first visited.

use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::environment::{sample_dirichlet, EnvError, Environment, RngStream};
use crate::graphs::WeightedDigraph;
use crate::model::DirichletParams;
use crate::stats::MeanSe;

/// Sites per lazily sampled environment block.
pub const BLOCK_SIZE: i64 = 1024;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum WalkError {
    #[error("start {0} is not a vertex of the window")]
    StartOutsideWindow(i64),
    #[error("vertex {0} has no out-edge")]
    DeadEnd(i64),
    #[error("({from}, {to}) is not an edge")]
    NotAPath { from: i64, to: i64 },
    #[error(transparent)]
    Environment(#[from] EnvError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    Horizon,
    HitTarget,
    LeftWindow,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub start: i64,
    pub positions: Vec<i64>,
    pub stop_reason: StopReason,
    pub seed: u64,
    pub stream: u64,
}

impl Trajectory {
    /// Number of steps taken.
    pub fn steps(&self) -> usize {
        self.positions.len() - 1
    }

    /// CSV with header `n,x`, one row per time.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("n,x\n");
        for (n, x) in self.positions.iter().enumerate() {
            let _ = writeln!(out, "{n},{x}");
        }
        out
    }
}

/// Index of the slot hit by `u` in a cumulative row.
fn pick(cumulative: &[f64], u: f64) -> usize {
    cumulative
        .iter()
        .position(|&c| u < c)
        .unwrap_or(cumulative.len() - 1)
}

/// Walks `env` from `start` for at most `horizon` steps, stopping early once
/// the walk is within `L` sites of the left end or `R` of the right end of the
/// vertex range, where `L` and `R` are the longest left and right edges.
pub fn simulate_quenched(
    env: &Environment,
    start: i64,
    horizon: usize,
    stream: &RngStream,
) -> Result<Trajectory, WalkError> {
    let g = env.graph();
    let mut v = g
        .index_of(start)
        .ok_or(WalkError::StartOutsideWindow(start))?;
    let (left, right) = g
        .edges()
        .fold((0, 0), |(l, r), (t, h, _)| (l.max(t - h), r.max(h - t)));
    let lo = g.labels()[0] + left;
    let hi = *g.labels().last().expect("nonempty") - right;
    let cumulative: Vec<Vec<f64>> = (0..g.vertex_count())
        .map(|v| {
            let mut acc = 0.0;
            env.row(v)
                .map(|(_, p)| {
                    acc += p;
                    acc
                })
                .collect()
        })
        .collect();
    let mut rng = stream.rng();
    let mut positions = vec![start];
    let mut stop_reason = StopReason::Horizon;
    for _ in 0..horizon {
        let x = g.label(v);
        if x < lo || x > hi {
            stop_reason = StopReason::LeftWindow;
            break;
        }
        let k = pick(&cumulative[v], rng.random());
        v = g.head(g.out_edge_ids(v).start + k);
        positions.push(g.label(v));
    }
    if stop_reason == StopReason::Horizon {
        let x = g.label(v);
        if x < lo || x > hi {
            stop_reason = StopReason::LeftWindow;
        }
    }
    Ok(Trajectory {
        start,
        positions,
        stop_reason,
        seed: stream.seed,
        stream: stream.stream,
    })
}

/// An i.i.d. Dirichlet environment on the whole lattice, sampled on demand.
pub struct LatticeEnv {
    offsets: Vec<i64>,
    concentrations: Vec<f64>,
    stream: RngStream,
    /// Blocks `0, 1, 2, ...`.
    right_blocks: Vec<Option<Box<[f64]>>>,
    /// Blocks `-1, -2, ...`.
    left_blocks: Vec<Option<Box<[f64]>>>,
}

fn zigzag(b: i64) -> u64 {
    ((b << 1) ^ (b >> 63)) as u64
}

impl LatticeEnv {
    pub fn new(p: &DirichletParams, stream: RngStream) -> Self {
        let support = p.weights();
        LatticeEnv {
            offsets: support.iter().map(|&(i, _)| i).collect(),
            concentrations: support.iter().map(|&(_, w)| w).collect(),
            stream,
            right_blocks: Vec::new(),
            left_blocks: Vec::new(),
        }
    }

    /// Jump offsets, in the order of the row entries.
    pub fn offsets(&self) -> &[i64] {
        &self.offsets
    }

    fn sample_block(&self, b: i64) -> Box<[f64]> {
        let k = self.offsets.len();
        let mut rng = self.stream.child(zigzag(b)).rng();
        let mut data = Vec::with_capacity(BLOCK_SIZE as usize * k);
        for _ in 0..BLOCK_SIZE {
            let row = sample_dirichlet(&self.concentrations, &mut rng)
                .expect("concentrations are positive");
            let mut acc = 0.0;
            for p in row {
                acc += p;
                data.push(acc);
            }
            *data.last_mut().expect("row is nonempty") = 1.0;
        }
        data.into_boxed_slice()
    }

    /// Cumulative transition row at `x`.
    pub fn cumulative_row(&mut self, x: i64) -> &[f64] {
        let b = x.div_euclid(BLOCK_SIZE);
        let within = x.rem_euclid(BLOCK_SIZE) as usize;
        let k = self.offsets.len();
        let slot = if b >= 0 {
            b as usize
        } else {
            (-b - 1) as usize
        };
        let present = {
            let store = if b >= 0 {
                &self.right_blocks
            } else {
                &self.left_blocks
            };
            store.get(slot).is_some_and(|s| s.is_some())
        };
        if !present {
            let block = self.sample_block(b);
            let store = if b >= 0 {
                &mut self.right_blocks
            } else {
                &mut self.left_blocks
            };
            if store.len() <= slot {
                store.resize_with(slot + 1, || None);
            }
            store[slot] = Some(block);
        }
        let store = if b >= 0 {
            &self.right_blocks
        } else {
            &self.left_blocks
        };
        &store[slot].as_ref().expect("block present")[within * k..(within + 1) * k]
    }

    /// `omega(x, x + offset)`.
    pub fn transition(&mut self, x: i64, offset: i64) -> f64 {
        let Some(j) = self.offsets.iter().position(|&i| i == offset) else {
            return 0.0;
        };
        let row = self.cumulative_row(x);
        if j == 0 {
            row[0]
        } else {
            row[j] - row[j - 1]
        }
    }

    /// One step from `x` using the uniform variate `u`.
    pub fn step(&mut self, x: i64, u: f64) -> i64 {
        let j = pick(self.cumulative_row(x), u);
        x + self.offsets[j]
    }
}

/// The environment stream and walk stream used for replica `index`.
pub fn replica_streams(seed: u64, index: u64) -> (RngStream, RngStream) {
    (
        RngStream::new(seed, 2 * index),
        RngStream::new(seed, 2 * index + 1),
    )
}

/// A walk from 0 on the lattice in a fresh environment.
pub fn simulate_lattice(
    p: &DirichletParams,
    horizon: usize,
    seed: u64,
    replica: u64,
) -> Trajectory {
    let (env_stream, walk_stream) = replica_streams(seed, replica);
    let mut env = LatticeEnv::new(p, env_stream);
    let mut rng = walk_stream.rng();
    let mut positions = Vec::with_capacity(horizon + 1);
    let mut x = 0;
    positions.push(x);
    for _ in 0..horizon {
        x = env.step(x, rng.random());
        positions.push(x);
    }
    Trajectory {
        start: 0,
        positions,
        stop_reason: StopReason::Horizon,
        seed,
        stream: walk_stream.stream,
    }
}

/// Directed edge reinforced walk: each edge starts with its graph weight and
/// gains 1 every time it is traversed.
pub struct DerrwWalker<'g> {
    graph: &'g WeightedDigraph,
    weights: Vec<f64>,
    totals: Vec<f64>,
    position: usize,
}

impl<'g> DerrwWalker<'g> {
    pub fn new(graph: &'g WeightedDigraph, start: i64) -> Result<Self, WalkError> {
        let position = graph
            .index_of(start)
            .ok_or(WalkError::StartOutsideWindow(start))?;
        let mut walker = DerrwWalker {
            graph,
            weights: Vec::new(),
            totals: Vec::new(),
            position,
        };
        walker.reset(start)?;
        Ok(walker)
    }

    /// Restores the initial weights and moves to `start`.
    pub fn reset(&mut self, start: i64) -> Result<(), WalkError> {
        let g = self.graph;
        self.position = g
            .index_of(start)
            .ok_or(WalkError::StartOutsideWindow(start))?;
        self.weights.clear();
        self.weights
            .extend((0..g.edge_count()).map(|e| g.edge_weight(e)));
        self.totals.clear();
        self.totals
            .extend((0..g.vertex_count()).map(|v| g.out_weight(v)));
        Ok(())
    }

    pub fn position(&self) -> i64 {
        self.graph.label(self.position)
    }

    pub fn step<R: Rng + ?Sized>(&mut self, rng: &mut R) -> Result<i64, WalkError> {
        let v = self.position;
        let ids = self.graph.out_edge_ids(v);
        if ids.is_empty() {
            return Err(WalkError::DeadEnd(self.graph.label(v)));
        }
        let mut u = rng.random::<f64>() * self.totals[v];
        let mut chosen = ids.end - 1;
        for e in ids {
            if u < self.weights[e] {
                chosen = e;
                break;
            }
            u -= self.weights[e];
        }
        self.weights[chosen] += 1.0;
        self.totals[v] += 1.0;
        self.position = self.graph.head(chosen);
        Ok(self.position())
    }
}

pub fn simulate_derrw(
    g: &WeightedDigraph,
    start: i64,
    horizon: usize,
    stream: &RngStream,
) -> Result<Trajectory, WalkError> {
    let mut walker = DerrwWalker::new(g, start)?;
    let mut rng = stream.rng();
    let mut positions = vec![start];
    for _ in 0..horizon {
        positions.push(walker.step(&mut rng)?);
    }
    Ok(Trajectory {
        start,
        positions,
        stop_reason: StopReason::Horizon,
        seed: stream.seed,
        stream: stream.stream,
    })
}

/// Annealed probability of following `path` (labels): the product over steps
/// of `(w(e) + earlier traversals of e) / (W(tail) + earlier departures from tail)`.
pub fn annealed_path_probability(g: &WeightedDigraph, path: &[i64]) -> Result<f64, WalkError> {
    let mut traversals: HashMap<usize, f64> = HashMap::new();
    let mut departures: HashMap<usize, f64> = HashMap::new();
    let mut prob = 1.0;
    for step in path.windows(2) {
        let (from, to) = (step[0], step[1]);
        let e = g
            .index_of(from)
            .zip(g.index_of(to))
            .and_then(|(t, h)| g.find_edge(t, h).map(|e| (t, e)));
        let Some((t, e)) = e else {
            return Err(WalkError::NotAPath { from, to });
        };
        let seen_e = traversals.entry(e).or_insert(0.0);
        let seen_t = departures.entry(t).or_insert(0.0);
        prob *= (g.edge_weight(e) + *seen_e) / (g.out_weight(t) + *seen_t);
        *seen_e += 1.0;
        *seen_t += 1.0;
    }
    Ok(prob)
}

/// Which statistics [`trajectory_stats`] should compute.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct StatsQuery {
    pub sites: Vec<i64>,
    /// `(x, S)`: time spent at `x` before first leaving `S`.
    pub sets: Vec<(i64, Vec<i64>)>,
    /// `(x, y)` with `x < y`.
    pub pairs: Vec<(i64, i64)>,
    pub tail_buffer: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SetVisits {
    pub x: i64,
    pub set: Vec<i64>,
    pub count: u64,
    /// The walk had not left the set by the end of the trajectory.
    pub censored: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairCount {
    pub x: i64,
    pub y: i64,
    pub count: u64,
}

/// Hitting times (`None` when not hit), occupation and trip counts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WalkStats {
    #[serde(rename = "H")]
    pub hitting: BTreeMap<i64, Option<u64>>,
    #[serde(rename = "Htilde")]
    pub return_time: BTreeMap<i64, Option<u64>>,
    #[serde(rename = "N")]
    pub visits: BTreeMap<i64, u64>,
    #[serde(rename = "N_S")]
    pub set_visits: Vec<SetVisits>,
    #[serde(rename = "N_trips")]
    pub trips: Vec<PairCount>,
    #[serde(rename = "N_cross")]
    pub crossings: Vec<PairCount>,
    /// First time at or right of site 1.
    #[serde(rename = "H_ge1")]
    pub first_right: Option<u64>,
    pub regenerations: Vec<u64>,
    /// The trajectory ended before its natural end, so counts are lower bounds.
    pub censored: bool,
}

impl WalkStats {
    pub fn to_json(&self) -> serde_json::Value {
        serde_json::to_value(self).expect("stats serialize")
    }
}

/// Computes the queried statistics in one pass per query.
pub fn trajectory_stats(traj: &Trajectory, queries: &StatsQuery) -> WalkStats {
    let xs = &traj.positions;
    let mut hitting = BTreeMap::new();
    let mut return_time = BTreeMap::new();
    let mut visits = BTreeMap::new();
    for &x in &queries.sites {
        hitting.insert(x, xs.iter().position(|&p| p == x).map(|n| n as u64));
        return_time.insert(
            x,
            xs.iter()
                .skip(1)
                .position(|&p| p == x)
                .map(|n| n as u64 + 1),
        );
        visits.insert(x, xs.iter().filter(|&&p| p == x).count() as u64);
    }

    let set_visits = queries
        .sets
        .iter()
        .map(|(x, set)| {
            let exit = xs.iter().position(|p| !set.contains(p));
            let end = exit.unwrap_or(xs.len());
            SetVisits {
                x: *x,
                set: set.clone(),
                count: xs[..end].iter().filter(|&&p| p == *x).count() as u64,
                censored: exit.is_none(),
            }
        })
        .collect();

    // `last_*` hold sup{j < n : ...}, None standing for -infinity
    let trips = queries
        .pairs
        .iter()
        .map(|&(x, y)| {
            let (mut last_x, mut last_y): (Option<usize>, Option<usize>) = (None, None);
            let mut count = 0;
            for (n, &p) in xs.iter().enumerate() {
                if p == x && last_y > last_x {
                    count += 1;
                }
                if p == x {
                    last_x = Some(n);
                }
                if p == y {
                    last_y = Some(n);
                }
            }
            PairCount { x, y, count }
        })
        .collect();
    let crossings = queries
        .pairs
        .iter()
        .map(|&(x, y)| {
            let (mut last_low, mut last_high): (Option<usize>, Option<usize>) = (None, None);
            let mut count = 0;
            for (n, &p) in xs.iter().enumerate() {
                if p <= x && last_high > last_low {
                    count += 1;
                }
                if p <= x {
                    last_low = Some(n);
                }
                if p >= y {
                    last_high = Some(n);
                }
            }
            PairCount { x, y, count }
        })
        .collect();

    WalkStats {
        hitting,
        return_time,
        visits,
        set_visits,
        trips,
        crossings,
        first_right: xs.iter().position(|&p| p >= 1).map(|n| n as u64),
        regenerations: regeneration_times(traj, queries.tail_buffer),
        censored: traj.stop_reason != StopReason::HitTarget,
    }
}

/// Online detector of times `n > 0` with `X_n > X_j` for all `j < n` and
/// `X_n <= X_j` for all later observed `j`.
#[derive(Debug, Clone, Default)]
pub struct RegenerationDetector {
    /// Candidates `(n, X_n)`, increasing in both coordinates.
    stack: Vec<(u64, i64)>,
    max: Option<i64>,
    time: u64,
}

impl RegenerationDetector {
    pub fn new() -> Self {
        Self::default()
    }

    /// Feeds `X_n` for `n = 0, 1, 2, ...`.
    pub fn push(&mut self, x: i64) {
        let n = self.time;
        self.time += 1;
        while self.stack.last().is_some_and(|&(_, top)| top > x) {
            self.stack.pop();
        }
        match self.max {
            Some(m) if x <= m => {}
            _ => {
                if n > 0 {
                    self.stack.push((n, x));
                }
                self.max = Some(x);
            }
        }
    }

    /// Candidates whose future was observed for at least `tail_buffer` steps.
    pub fn confirmed(&self, tail_buffer: usize) -> impl Iterator<Item = (u64, i64)> + '_ {
        let last = self.time.saturating_sub(1);
        let limit = last.checked_sub(tail_buffer as u64);
        self.stack
            .iter()
            .copied()
            .take_while(move |&(n, _)| limit.is_some_and(|l| n <= l))
    }
}

/// Regeneration times of a trajectory, asserting the future condition only for
/// times at least `tail_buffer` steps before its end.
pub fn regeneration_times(traj: &Trajectory, tail_buffer: usize) -> Vec<u64> {
    let mut det = RegenerationDetector::new();
    for &x in &traj.positions {
        det.push(x);
    }
    det.confirmed(tail_buffer).map(|(n, _)| n).collect()
}

/// `10 (L + R) ceil(1 / max(|kappa1|, 0.1))`.
pub fn default_tail_buffer(p: &DirichletParams) -> usize {
    let k = p.derive().kappa1.abs().max(0.1);
    (10 * (p.left() + p.right())) as usize * (1.0 / k).ceil() as usize
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VelocityMethod {
    Endpoint,
    Regeneration,
}

impl std::str::FromStr for VelocityMethod {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "endpoint" => Ok(VelocityMethod::Endpoint),
            "regeneration" => Ok(VelocityMethod::Regeneration),
            other => Err(format!("unknown method {other:?}")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VelocityEstimate {
    pub v_hat: f64,
    pub std_error: f64,
    pub method: VelocityMethod,
    pub steps: usize,
    pub replicas: usize,
    /// Replicas that contributed (all of them for the endpoint method).
    pub used_replicas: usize,
    pub warning: Option<String>,
}

/// What one replica contributes to both velocity estimators.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReplicaSummary {
    pub endpoint: i64,
    pub first_regeneration: Option<(u64, i64)>,
    pub last_regeneration: Option<(u64, i64)>,
    pub regenerations: usize,
}

/// Runs one lattice walk of `steps` steps without storing the path.
pub fn run_replica(
    p: &DirichletParams,
    steps: usize,
    tail_buffer: usize,
    seed: u64,
    index: u64,
) -> ReplicaSummary {
    let (env_stream, walk_stream) = replica_streams(seed, index);
    let mut env = LatticeEnv::new(p, env_stream);
    let mut rng: ChaCha8Rng = walk_stream.rng();
    let mut det = RegenerationDetector::new();
    let mut x = 0;
    det.push(x);
    for _ in 0..steps {
        x = env.step(x, rng.random());
        det.push(x);
    }
    let confirmed: Vec<(u64, i64)> = det.confirmed(tail_buffer).collect();
    ReplicaSummary {
        endpoint: x,
        first_regeneration: confirmed.first().copied(),
        last_regeneration: confirmed.last().copied(),
        regenerations: confirmed.len(),
    }
}

/// Runs `replicas` independent walks (in parallel, collected in index order).
pub fn run_replicas(
    p: &DirichletParams,
    steps: usize,
    replicas: usize,
    seed: u64,
) -> Vec<ReplicaSummary> {
    let tail_buffer = default_tail_buffer(p);
    (0..replicas as u64)
        .into_par_iter()
        .map(|r| run_replica(p, steps, tail_buffer, seed, r))
        .collect()
}

/// Endpoint estimator: mean of `X_n / n` over replicas.
pub fn endpoint_velocity(summaries: &[ReplicaSummary], steps: usize) -> VelocityEstimate {
    let ratios: Vec<f64> = summaries
        .iter()
        .map(|s| s.endpoint as f64 / steps as f64)
        .collect();
    let m = MeanSe::of(&ratios);
    VelocityEstimate {
        v_hat: m.mean,
        std_error: m.se,
        method: VelocityMethod::Endpoint,
        steps,
        replicas: summaries.len(),
        used_replicas: summaries.len(),
        warning: None,
    }
}

/// Regeneration estimator: ratio of summed displacement to summed time
/// between the first and last regeneration of each replica, with a
/// delta-method standard error.
pub fn regeneration_velocity(summaries: &[ReplicaSummary], steps: usize) -> VelocityEstimate {
    let pairs: Vec<(f64, f64)> = summaries
        .iter()
        .filter_map(|s| match (s.first_regeneration, s.last_regeneration) {
            (Some((t1, x1)), Some((t2, x2))) if t2 > t1 => {
                Some(((x2 - x1) as f64, (t2 - t1) as f64))
            }
            _ => None,
        })
        .collect();
    let n = pairs.len();
    let mut warning = None;
    let (v_hat, std_error) = if n == 0 {
        warning = Some("no replica had two confirmed regenerations".to_string());
        (f64::NAN, f64::NAN)
    } else {
        let a = pairs.iter().map(|p| p.0).sum::<f64>() / n as f64;
        let b = pairs.iter().map(|p| p.1).sum::<f64>() / n as f64;
        let ratio = a / b;
        let se = if n > 1 {
            let s2 = pairs
                .iter()
                .map(|&(x, t)| (x - ratio * t).powi(2))
                .sum::<f64>()
                / (n - 1) as f64;
            (s2 / n as f64).sqrt() / b
        } else {
            0.0
        };
        (ratio, se)
    };
    if n < summaries.len() && warning.is_none() {
        warning = Some(format!(
            "{} of {} replicas had fewer than two confirmed regenerations",
            summaries.len() - n,
            summaries.len()
        ));
    }
    VelocityEstimate {
        v_hat,
        std_error,
        method: VelocityMethod::Regeneration,
        steps,
        replicas: summaries.len(),
        used_replicas: n,
        warning,
    }
}

/// Estimates the limiting velocity. Left-transient inputs are run reflected
/// and the estimate negated, so regenerations are always rightward.
pub fn estimate_velocity(
    p: &DirichletParams,
    steps: usize,
    replicas: usize,
    method: VelocityMethod,
    seed: u64,
) -> VelocityEstimate {
    let d = p.derive();
    let flip = d.kappa1 < 0.0 && !d.is_recurrent();
    let q = if flip { p.reflect() } else { p.clone() };
    let summaries = run_replicas(&q, steps, replicas, seed);
    let mut est = match method {
        VelocityMethod::Endpoint => endpoint_velocity(&summaries, steps),
        VelocityMethod::Regeneration => regeneration_velocity(&summaries, steps),
    };
    if flip {
        est.v_hat = -est.v_hat;
    }
    if d.is_recurrent() {
        est.warning = Some("recurrent weights: the velocity is 0".to_string());
    }
    est
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HittingEstimate {
    /// Mean over uncensored replicas.
    pub mean: f64,
    pub std_error: f64,
    pub censored_fraction: f64,
    pub horizon: usize,
    pub replicas: usize,
}

/// Mean of the first time at or right of site 1, with the fraction of
/// replicas still left of 1 at `horizon` reported separately.
pub fn estimate_mean_hitting(
    p: &DirichletParams,
    horizon: usize,
    replicas: usize,
    seed: u64,
) -> HittingEstimate {
    let times: Vec<Option<u64>> = (0..replicas as u64)
        .into_par_iter()
        .map(|r| {
            let (env_stream, walk_stream) = replica_streams(seed, r);
            let mut env = LatticeEnv::new(p, env_stream);
            let mut rng = walk_stream.rng();
            let mut x = 0;
            for n in 1..=horizon as u64 {
                x = env.step(x, rng.random());
                if x >= 1 {
                    return Some(n);
                }
            }
            None
        })
        .collect();
    let hit: Vec<f64> = times.iter().flatten().map(|&t| t as f64).collect();
    let m = MeanSe::of(&hit);
    HittingEstimate {
        mean: m.mean,
        std_error: m.se,
        censored_fraction: (replicas - hit.len()) as f64 / replicas.max(1) as f64,
        horizon,
        replicas,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn traj(xs: &[i64]) -> Trajectory {
        Trajectory {
            start: xs[0],
            positions: xs.to_vec(),
            stop_reason: StopReason::Horizon,
            seed: 0,
            stream: 0,
        }
    }

    #[test]
    fn hand_computed_stats() {
        let t = traj(&[0, 1, 0, -1, 2]);
        let s = trajectory_stats(
            &t,
            &StatsQuery {
                sites: vec![0],
                pairs: vec![(-1, 1)],
                ..StatsQuery::default()
            },
        );
        assert_eq!(s.hitting[&0], Some(0));
        assert_eq!(s.return_time[&0], Some(2));
        assert_eq!(s.visits[&0], 2);
        assert_eq!(s.first_right, Some(1));
        assert_eq!(s.trips[0].count, 1);
        assert!(s.crossings[0].count >= s.trips[0].count);
    }

    #[test]
    fn increasing_path_has_no_trips() {
        let t = traj(&[0, 1, 2, 3, 4, 5]);
        let s = trajectory_stats(
            &t,
            &StatsQuery {
                pairs: vec![(0, 1), (1, 3), (2, 5)],
                sites: vec![7],
                ..StatsQuery::default()
            },
        );
        assert!(s.trips.iter().chain(&s.crossings).all(|c| c.count == 0));
        assert_eq!(s.hitting[&7], None);
        assert_eq!(regeneration_times(&t, 0), vec![1, 2, 3, 4, 5]);
    }

    #[test]
    fn set_occupation() {
        let t = traj(&[0, 1, 0, 0, 2, 0]);
        let s = trajectory_stats(
            &t,
            &StatsQuery {
                sets: vec![(0, vec![0, 1]), (0, vec![0, 1, 2])],
                ..StatsQuery::default()
            },
        );
        assert_eq!(s.set_visits[0].count, 3);
        assert!(!s.set_visits[0].censored);
        assert_eq!(s.set_visits[1].count, 4);
        assert!(s.set_visits[1].censored);
    }

    #[test]
    fn regeneration_examples() {
        assert_eq!(regeneration_times(&traj(&[0, 1, 2, 3]), 0), vec![1, 2, 3]);
        assert_eq!(regeneration_times(&traj(&[0, 1, 0, 1, 2]), 0), vec![4]);
        assert!(regeneration_times(&traj(&[0, 1, 2, 3]), 10).is_empty());
        assert_eq!(regeneration_times(&traj(&[0, 1, 2, 3]), 1), vec![1, 2]);
    }

    #[test]
    fn deterministic_quenched_walk() {
        let env = Environment::from_transitions(
            0..=10,
            (0..10).map(|x| (x, x + 1, 1.0)).chain([(10, 9, 1.0)]),
        )
        .unwrap();
        let t = simulate_quenched(&env, 2, 5, &RngStream::new(1, 1)).unwrap();
        assert_eq!(t.positions, vec![2, 3, 4, 5, 6, 7]);
        assert_eq!(t.stop_reason, StopReason::Horizon);
        let t = simulate_quenched(&env, 2, 50, &RngStream::new(1, 1)).unwrap();
        assert_eq!(t.stop_reason, StopReason::LeftWindow);
        assert_eq!(*t.positions.last().unwrap(), 10);
        assert_eq!(
            simulate_quenched(&env, 11, 5, &RngStream::new(1, 1)),
            Err(WalkError::StartOutsideWindow(11))
        );
    }

    #[test]
    fn lattice_environment_is_order_independent() {
        let p = DirichletParams::new(2, 1, [(-2, 0.3), (-1, 0.6), (1, 1.2)]).unwrap();
        let stream = RngStream::new(5, 9);
        let mut a = LatticeEnv::new(&p, stream);
        let mut b = LatticeEnv::new(&p, stream);
        let forward: Vec<f64> = (-3000..3000).map(|x| a.transition(x, 1)).collect();
        let backward: Vec<f64> = (-3000..3000).rev().map(|x| b.transition(x, 1)).collect();
        assert!(forward.iter().eq(backward.iter().rev()));
    }

    #[test]
    fn seeded_lattice_walk_repeats() {
        let p = DirichletParams::nearest_neighbor(1.0, 2.0).unwrap();
        assert_eq!(
            simulate_lattice(&p, 500, 3, 0),
            simulate_lattice(&p, 500, 3, 0)
        );
        assert_ne!(
            simulate_lattice(&p, 500, 3, 0).positions,
            simulate_lattice(&p, 500, 3, 1).positions
        );
        let t = simulate_lattice(&p, 2000, 3, 2);
        assert!(t.positions.windows(2).all(|w| (w[1] - w[0]).abs() == 1));
    }

    #[test]
    fn path_probability_examples() {
        let g = WeightedDigraph::from_edges(0..2, [(0, 0, 1.0), (0, 1, 1.0), (1, 0, 1.0)]).unwrap();
        assert!((annealed_path_probability(&g, &[0, 0, 1]).unwrap() - 1.0 / 6.0).abs() < 1e-15);
        assert_eq!(annealed_path_probability(&g, &[0, 1]).unwrap(), 0.5);
        assert_eq!(
            annealed_path_probability(&g, &[1, 1]),
            Err(WalkError::NotAPath { from: 1, to: 1 })
        );
        // all length-3 paths from 0 sum to 1
        let mut total = 0.0;
        for a in 0..2 {
            for b in 0..2 {
                for c in 0..2 {
                    if let Ok(p) = annealed_path_probability(&g, &[0, a, b, c]) {
                        total += p;
                    }
                }
            }
        }
        assert!((total - 1.0).abs() < 1e-12);
    }

    #[test]
    fn derrw_single_edges_are_deterministic() {
        let g = WeightedDigraph::from_edges(0..3, [(0, 1, 2.0), (1, 2, 1.0), (2, 0, 5.0)]).unwrap();
        let t = simulate_derrw(&g, 0, 6, &RngStream::new(0, 0)).unwrap();
        assert_eq!(t.positions, vec![0, 1, 2, 0, 1, 2, 0]);
        let dead = WeightedDigraph::from_edges(0..2, [(0, 1, 1.0)]).unwrap();
        assert_eq!(
            simulate_derrw(&dead, 0, 3, &RngStream::new(0, 0)),
            Err(WalkError::DeadEnd(1))
        );
    }

    #[test]
    fn derrw_first_step_is_fair() {
        let g =
            WeightedDigraph::from_edges(0..3, [(0, 1, 1.0), (0, 2, 1.0), (1, 0, 1.0), (2, 0, 1.0)])
                .unwrap();
        let mut walker = DerrwWalker::new(&g, 0).unwrap();
        let mut rng = RngStream::new(4, 0).rng();
        let n = 100_000;
        let mut ones = 0.0;
        for _ in 0..n {
            walker.reset(0).unwrap();
            if walker.step(&mut rng).unwrap() == 1 {
                ones += 1.0;
            }
        }
        let p = ones / n as f64;
        let se = (0.25 / n as f64).sqrt();
        assert!((p - 0.5).abs() < 3.0 * se, "{p}");
    }

    #[test]
    fn tail_buffer_default() {
        let p = DirichletParams::nearest_neighbor(1.0, 3.0).unwrap();
        assert_eq!(default_tail_buffer(&p), 20);
        let sym = DirichletParams::nearest_neighbor(1.0, 1.0).unwrap();
        assert_eq!(default_tail_buffer(&sym), 200);
    }

    #[test]
    fn csv_and_json_shapes() {
        let t = traj(&[0, 1, 0]);
        assert_eq!(t.to_csv(), "n,x\n0,0\n1,1\n2,0\n");
        let s = trajectory_stats(
            &t,
            &StatsQuery {
                sites: vec![5],
                ..StatsQuery::default()
            },
        );
        let json = s.to_json();
        for key in ["H", "Htilde", "N", "N_trips", "N_cross", "regenerations"] {
            assert!(json.get(key).is_some(), "{key}");
        }
        assert!(json["H"]["5"].is_null());
    }

    #[test]
    fn deterministic_right_drift_hitting() {
        // a lone right jump reaches 1 at the first step
        let p = DirichletParams::new(1, 1, [(-1, 1e-300), (1, 1.0)]).unwrap();
        let est = estimate_mean_hitting(&p, 100, 20, 1);
        assert_eq!(est.censored_fraction, 0.0);
        assert_eq!(est.mean, 1.0);
    }
}
