//! Exit weights of finite vertex sets, the trap exponent `kappa0` and the
//! recurrence/ballisticity classification.
//!
//! `kappa0` is the smallest total weight leaving a finite strongly connected
//! set of sites. By translation invariance only sets with minimum 0 need to be
//! searched, and there is an explicit bound on the diameter of some minimiser.
//!
//! The branch-and-bound search builds sets left to right. Adding a site to the
//! right of a set never lowers its exit weight, so the exit weight of the
//! current prefix bounds every set grown from it.

use std::cmp::Ordering;
use std::collections::BTreeMap;
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering as AtomicOrdering};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::graphs::{self, WeightedDigraph};
use crate::model::{kahan_sum, DirichletParams};

/// Default cap on branch-and-bound nodes before giving up.
pub const DEFAULT_NODE_BUDGET: u64 = 2_000_000_000;

/// Largest diameter the exhaustive strategy accepts.
pub const EXHAUSTIVE_MAX_DIAMETER: i64 = 26;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum KappaError {
    #[error("empty vertex set")]
    EmptySet,
    #[error("max diameter {max_diameter} is below m0 = {m0}")]
    DiameterTooSmall { max_diameter: i64, m0: usize },
    #[error("exhaustive search over diameter {max_diameter} is too large (limit {limit})")]
    ExhaustiveTooLarge { max_diameter: i64, limit: i64 },
    #[error("search budget exhausted after {} nodes", partial.nodes_explored)]
    Timeout { partial: Box<Kappa0Result> },
    #[error("vertex {0} is not in the graph")]
    UnknownVertex(i64),
    #[error("graph has {0} vertices, too many to enumerate")]
    GraphTooLarge(usize),
}

impl KappaError {
    pub fn kind(&self) -> &'static str {
        match self {
            KappaError::EmptySet => "EmptySet",
            KappaError::DiameterTooSmall { .. } => "DiameterTooSmall",
            KappaError::ExhaustiveTooLarge { .. } => "ExhaustiveTooLarge",
            KappaError::Timeout { .. } => "Timeout",
            KappaError::UnknownVertex(_) => "UnknownVertex",
            KappaError::GraphTooLarge(_) => "GraphTooLarge",
        }
    }
}

/// A finite set of sites normalised to minimum 0, with its exit counts
/// `x_i = #{z in S : z + i not in S}` per jump offset and exit weight
/// `beta = sum_i x_i alpha_i`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrapSet {
    pub offsets: Vec<i64>,
    pub exit_counts: BTreeMap<i64, u64>,
    pub beta: f64,
}

impl TrapSet {
    /// Recomputes beta from the exit counts.
    pub fn beta_from_counts(&self, p: &DirichletParams) -> f64 {
        beta_from_counts(p, self.exit_counts.iter().map(|(&i, &x)| (i, x)))
    }
}

fn beta_from_counts(p: &DirichletParams, counts: impl Iterator<Item = (i64, u64)>) -> f64 {
    kahan_sum(counts.map(|(i, x)| x as f64 * p.alpha(i)))
}

/// Exit weight of `set`, translated so that its minimum is 0.
pub fn beta(p: &DirichletParams, set: &[i64]) -> Result<TrapSet, KappaError> {
    let mut offsets = set.to_vec();
    offsets.sort_unstable();
    offsets.dedup();
    let Some(&min) = offsets.first() else {
        return Err(KappaError::EmptySet);
    };
    for z in &mut offsets {
        *z -= min;
    }
    let exit_counts: BTreeMap<i64, u64> = p
        .jump_offsets()
        .map(|i| {
            let x = offsets
                .iter()
                .filter(|&&z| offsets.binary_search(&(z + i)).is_err())
                .count();
            (i, x as u64)
        })
        .collect();
    let beta = beta_from_counts(p, exit_counts.iter().map(|(&i, &x)| (i, x)));
    Ok(TrapSet {
        offsets,
        exit_counts,
        beta,
    })
}

/// Diameter `(N - 1) * m0` within which some minimiser of `beta` lies, where
/// `N` is the least integer with `N * eps >= d+ + d-` and `eps` the smallest
/// positive weight.
pub fn diameter_bound(p: &DirichletParams) -> i64 {
    let d = p.derive();
    let total = d.d_plus + d.d_minus;
    let eps = p.min_positive_weight();
    // relative slack so that rational inputs such as 71/67 vs 1/67 land on the exact ratio
    let target = total * (1.0 - 1e-12);
    let mut n = (target / eps).ceil().max(1.0) as i64;
    while n > 1 && (n - 1) as f64 * eps >= target {
        n -= 1;
    }
    while (n as f64) * eps < target {
        n += 1;
    }
    (n - 1) * d.m0 as i64
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    Exhaustive,
    BranchAndBound,
}

impl std::str::FromStr for Strategy {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "exhaustive" => Ok(Strategy::Exhaustive),
            "branch_and_bound" | "branch-and-bound" | "bnb" => Ok(Strategy::BranchAndBound),
            other => Err(format!("unknown strategy {other:?}")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SearchOptions {
    pub strategy: Strategy,
    /// Nodes (or subsets, for the exhaustive strategy) to visit before timing out.
    pub node_budget: u64,
    /// Fan subtrees out to the rayon pool.
    pub parallel: bool,
}

impl Default for SearchOptions {
    fn default() -> Self {
        SearchOptions {
            strategy: Strategy::BranchAndBound,
            node_budget: DEFAULT_NODE_BUDGET,
            parallel: true,
        }
    }
}

impl SearchOptions {
    pub fn with_strategy(strategy: Strategy) -> Self {
        SearchOptions {
            strategy,
            ..Self::default()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Kappa0Result {
    pub value: f64,
    pub witness: TrapSet,
    pub certified: bool,
    pub diameter_searched: i64,
    pub certified_bound: i64,
    pub nodes_explored: u64,
    pub strategy: Strategy,
}

/// Order on candidate minimisers: exit weight, then size, then lexicographic.
fn candidate_order(a: &(f64, Vec<i64>), b: &(f64, Vec<i64>)) -> Ordering {
    a.0.total_cmp(&b.0)
        .then(a.1.len().cmp(&b.1.len()))
        .then_with(|| a.1.cmp(&b.1))
}

fn better(candidate: (f64, Vec<i64>), best: &mut Option<(f64, Vec<i64>)>) {
    let replace = match best {
        None => true,
        Some(b) => candidate_order(&candidate, b) == Ordering::Less,
    };
    if replace {
        *best = Some(candidate);
    }
}

/// Minimum of `beta` over strongly connected sets `S` with `min S = 0` and
/// `S ⊆ [0, max_diameter]`.
pub fn kappa0_search(
    p: &DirichletParams,
    max_diameter: i64,
    options: SearchOptions,
) -> Result<Kappa0Result, KappaError> {
    let m0 = p.derive().m0;
    if max_diameter < m0 as i64 {
        return Err(KappaError::DiameterTooSmall { max_diameter, m0 });
    }
    let outcome = match options.strategy {
        Strategy::Exhaustive => exhaustive(p, max_diameter, options.node_budget)?,
        Strategy::BranchAndBound => branch_and_bound(p, max_diameter, options),
    };
    let certified_bound = diameter_bound(p);
    let witness = beta(p, &outcome.best.1).expect("witness is nonempty");
    debug_assert_eq!(witness.beta, outcome.best.0);
    let result = Kappa0Result {
        value: witness.beta,
        witness,
        certified: !outcome.timed_out && max_diameter >= certified_bound,
        diameter_searched: max_diameter,
        certified_bound,
        nodes_explored: outcome.nodes,
        strategy: options.strategy,
    };
    if outcome.timed_out {
        Err(KappaError::Timeout {
            partial: Box::new(result),
        })
    } else {
        Ok(result)
    }
}

struct Outcome {
    best: (f64, Vec<i64>),
    nodes: u64,
    timed_out: bool,
}

fn exhaustive(p: &DirichletParams, d: i64, budget: u64) -> Result<Outcome, KappaError> {
    if d > EXHAUSTIVE_MAX_DIAMETER {
        return Err(KappaError::ExhaustiveTooLarge {
            max_diameter: d,
            limit: EXHAUSTIVE_MAX_DIAMETER,
        });
    }
    let g = graphs::build_window(p, 0, d);
    let mut best = None;
    let mut nodes = 0u64;
    let mut timed_out = false;
    for mask in 0u64..(1u64 << d) {
        if nodes >= budget {
            timed_out = true;
            break;
        }
        nodes += 1;
        let set: Vec<i64> = std::iter::once(0)
            .chain((1..=d).filter(|&z| mask >> (z - 1) & 1 == 1))
            .collect();
        if !graphs::strongly_connected(&g, &set) {
            continue;
        }
        let t = beta(p, &set).expect("nonempty");
        better((t.beta, t.offsets), &mut best);
    }
    let best = match best {
        Some(b) => b,
        None => {
            let t = admissible_interval(p);
            (t.beta, t.offsets)
        }
    };
    Ok(Outcome {
        best,
        nodes,
        timed_out,
    })
}

/// `[0, max(m0, 2) - 1]`: strongly connected, with exit weight `d+ + d-`.
fn admissible_interval(p: &DirichletParams) -> TrapSet {
    let len = p.derive().m0.max(2) as i64;
    beta(p, &(0..len).collect::<Vec<_>>()).expect("nonempty")
}

/// Immutable description of a branch-and-bound instance.
struct Instance {
    d: i64,
    /// Jump offsets, ascending.
    offsets: Vec<i64>,
    weights: Vec<f64>,
    self_loop: bool,
    /// Consecutive members of a strongly connected set differ by at most this.
    gap: i64,
    left: i64,
    right: i64,
}

/// Shared incumbent and budget across workers.
struct Shared {
    incumbent: AtomicU64,
    nodes: AtomicU64,
    budget: u64,
    batch: u64,
    stop: AtomicBool,
}

impl Shared {
    fn incumbent(&self) -> f64 {
        // exit weights are non-negative, so the bit pattern orders like the value
        f64::from_bits(self.incumbent.load(AtomicOrdering::Relaxed))
    }

    fn offer(&self, value: f64) {
        self.incumbent
            .fetch_min(value.to_bits(), AtomicOrdering::Relaxed);
    }
}

const NODE_BATCH: u64 = 4096;

/// Mutable search state: the current set grown left to right.
struct Searcher<'a> {
    inst: &'a Instance,
    shared: &'a Shared,
    member: Vec<bool>,
    list: Vec<i64>,
    counts: Vec<u64>,
    best: Option<(f64, Vec<i64>)>,
    local_nodes: u64,
    /// Members of this prefix are expanded here; deeper nodes become tasks.
    split: Option<i64>,
    tasks: Vec<Vec<i64>>,
    queue: Vec<i64>,
    seen: Vec<bool>,
}

impl<'a> Searcher<'a> {
    fn new(inst: &'a Instance, shared: &'a Shared) -> Self {
        let n = (inst.d + 1) as usize;
        let mut s = Searcher {
            inst,
            shared,
            member: vec![false; n],
            list: Vec::with_capacity(n),
            counts: vec![0; inst.offsets.len()],
            best: None,
            local_nodes: 0,
            split: None,
            tasks: Vec::new(),
            queue: Vec::with_capacity(n),
            seen: vec![false; n],
        };
        s.add(0);
        s
    }

    fn in_set(&self, z: i64) -> bool {
        z >= 0 && z <= self.inst.d && self.member[z as usize]
    }

    fn add(&mut self, y: i64) {
        for (j, &i) in self.inst.offsets.iter().enumerate() {
            if i > 0 && self.in_set(y - i) {
                self.counts[j] -= 1;
            }
            if !self.in_set(y + i) {
                self.counts[j] += 1;
            }
        }
        self.member[y as usize] = true;
        self.list.push(y);
    }

    fn remove(&mut self, y: i64) {
        self.member[y as usize] = false;
        self.list.pop();
        for (j, &i) in self.inst.offsets.iter().enumerate() {
            if i > 0 && self.in_set(y - i) {
                self.counts[j] += 1;
            }
            if !self.in_set(y + i) {
                self.counts[j] -= 1;
            }
        }
    }

    fn beta(&self) -> f64 {
        kahan_sum(
            self.counts
                .iter()
                .zip(&self.inst.weights)
                .map(|(&x, &w)| x as f64 * w),
        )
    }

    /// After `y` joins a set whose previous maximum was `k`, every member whose
    /// successors (or predecessors) are now all decided must have one inside.
    fn feasible(&self, k: i64, y: i64) -> bool {
        let inst = self.inst;
        let has_succ = |z: i64| inst.offsets.iter().any(|&i| self.in_set(z + i));
        let has_pred = |z: i64| inst.offsets.iter().any(|&i| self.in_set(z - i));
        ((k - inst.right + 1).max(0)..=y - inst.right)
            .filter(|&z| self.in_set(z))
            .all(has_succ)
            && ((k - inst.left + 1).max(0)..=y - inst.left)
                .filter(|&z| self.in_set(z))
                .all(has_pred)
    }

    fn reach_all(&mut self, forward: bool) -> bool {
        self.seen.iter_mut().for_each(|s| *s = false);
        self.queue.clear();
        self.queue.push(0);
        self.seen[0] = true;
        let mut reached = 1;
        let mut head = 0;
        while head < self.queue.len() {
            let z = self.queue[head];
            head += 1;
            for &i in &self.inst.offsets {
                let t = if forward { z + i } else { z - i };
                if self.in_set(t) && !self.seen[t as usize] {
                    self.seen[t as usize] = true;
                    reached += 1;
                    self.queue.push(t);
                }
            }
        }
        reached == self.list.len()
    }

    fn strongly_connected(&mut self) -> bool {
        if self.list.len() == 1 {
            return self.inst.self_loop;
        }
        self.reach_all(true) && self.reach_all(false)
    }

    fn tick(&mut self) -> bool {
        self.local_nodes += 1;
        let batch = self.shared.batch;
        if self.local_nodes.is_multiple_of(batch) {
            let total = self.shared.nodes.fetch_add(batch, AtomicOrdering::Relaxed) + batch;
            if total >= self.shared.budget {
                self.shared.stop.store(true, AtomicOrdering::Relaxed);
            }
        }
        !self.shared.stop.load(AtomicOrdering::Relaxed)
    }

    fn flush_nodes(&mut self) {
        self.shared.nodes.fetch_add(
            self.local_nodes % self.shared.batch,
            AtomicOrdering::Relaxed,
        );
    }

    /// Visits the current set (maximum `k`) and its descendants.
    fn visit(&mut self, k: i64) {
        if !self.tick() {
            return;
        }
        let value = self.beta();
        if value > self.shared.incumbent() {
            return;
        }
        if self.strongly_connected() {
            self.shared.offer(value);
            better((value, self.list.clone()), &mut self.best);
        }
        let last = (k + self.inst.gap).min(self.inst.d);
        for y in k + 1..=last {
            self.add(y);
            if self.feasible(k, y) && self.beta() <= self.shared.incumbent() {
                match self.split {
                    Some(s) if y > s => self.tasks.push(self.list.clone()),
                    _ => self.visit(y),
                }
            }
            self.remove(y);
        }
    }
}

fn branch_and_bound(p: &DirichletParams, d: i64, options: SearchOptions) -> Outcome {
    let offsets: Vec<i64> = p.jump_offsets().collect();
    let inst = Instance {
        d,
        weights: offsets.iter().map(|&i| p.alpha(i)).collect(),
        offsets,
        self_loop: p.alpha(0) > 0.0,
        gap: p.left().min(p.right()),
        left: p.left(),
        right: p.right(),
    };
    let interval = admissible_interval(p);
    let shared = Shared {
        incumbent: AtomicU64::new(interval.beta.to_bits()),
        nodes: AtomicU64::new(0),
        budget: options.node_budget,
        batch: (options.node_budget / 64).clamp(1, NODE_BATCH),
        stop: AtomicBool::new(false),
    };

    let mut root = Searcher::new(&inst, &shared);
    let split_depth = (2 * inst.gap).max(4);
    if options.parallel && d > split_depth {
        root.split = Some(split_depth);
    }
    root.visit(0);
    root.flush_nodes();
    let tasks = std::mem::take(&mut root.tasks);
    let mut best = root.best.take();

    let run = |prefix: &Vec<i64>| {
        let mut s = Searcher::new(&inst, &shared);
        for &y in &prefix[1..] {
            s.add(y);
        }
        s.visit(*prefix.last().expect("prefix contains 0"));
        s.flush_nodes();
        s.best
    };
    let found: Vec<Option<(f64, Vec<i64>)>> = if options.parallel {
        tasks.par_iter().map(run).collect()
    } else {
        tasks.iter().map(run).collect()
    };
    for candidate in found.into_iter().flatten() {
        better(candidate, &mut best);
    }
    better((interval.beta, interval.offsets), &mut best);

    Outcome {
        best: best.expect("interval candidate present"),
        nodes: shared.nodes.load(AtomicOrdering::Relaxed),
        timed_out: shared.stop.load(AtomicOrdering::Relaxed),
    }
}

/// Recurrence and speed classification.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum RegimeTag {
    Recurrent,
    TransientRight,
    TransientLeft,
}

impl std::fmt::Display for RegimeTag {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            RegimeTag::Recurrent => "Recurrent",
            RegimeTag::TransientRight => "TransientRight",
            RegimeTag::TransientLeft => "TransientLeft",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum RegimeWarning {
    /// The kappa0 value came from a search that did not reach the diameter bound.
    UncertifiedKappa0,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Regime {
    pub tag: RegimeTag,
    pub ballistic: bool,
    pub kappa0: f64,
    pub kappa1: f64,
    pub warning: Option<RegimeWarning>,
}

/// Transient in the direction of the sign of `kappa1`, recurrent when it
/// vanishes; ballistic exactly when `min(kappa0, |kappa1|) > 1`.
pub fn classify_regime(p: &DirichletParams, k0: &Kappa0Result) -> Regime {
    let d = p.derive();
    let tag = if d.is_recurrent() {
        RegimeTag::Recurrent
    } else if d.kappa1 > 0.0 {
        RegimeTag::TransientRight
    } else {
        RegimeTag::TransientLeft
    };
    let ballistic = tag != RegimeTag::Recurrent && k0.value.min(d.kappa1.abs()) > 1.0;
    Regime {
        tag,
        ballistic,
        kappa0: k0.value,
        kappa1: d.kappa1,
        warning: (!k0.certified).then_some(RegimeWarning::UncertifiedKappa0),
    }
}

/// Total weight of edges leaving `set`.
pub fn exit_weight(g: &WeightedDigraph, member: &[bool]) -> f64 {
    kahan_sum(
        (0..g.vertex_count())
            .filter(|&v| member[v])
            .flat_map(|v| g.out_edges(v).filter(|&(h, _)| !member[h]).map(|(_, w)| w)),
    )
}

/// Minimum exit weight over strongly connected sets containing `x` in a small
/// graph, with a minimising set (smallest, then lexicographically first).
pub fn min_trap_exit_weight(g: &WeightedDigraph, x: i64) -> Result<(f64, Vec<i64>), KappaError> {
    const LIMIT: usize = 22;
    let n = g.vertex_count();
    if n > LIMIT {
        return Err(KappaError::GraphTooLarge(n));
    }
    let xi = g.index_of(x).ok_or(KappaError::UnknownVertex(x))?;
    let others: Vec<usize> = (0..n).filter(|&v| v != xi).collect();
    let mut best = None;
    for mask in 0u64..(1u64 << others.len()) {
        let mut member = vec![false; n];
        member[xi] = true;
        for (k, &v) in others.iter().enumerate() {
            member[v] = mask >> k & 1 == 1;
        }
        let labels: Vec<i64> = (0..n).filter(|&v| member[v]).map(|v| g.label(v)).collect();
        if graphs::strongly_connected(g, &labels) {
            better((exit_weight(g, &member), labels), &mut best);
        }
    }
    best.ok_or(KappaError::EmptySet)
}
