//! Statistical verification suites. Each one samples environments or walks,
//! compares against an exact or distributional prediction and returns a
//! serializable report with a pass flag.

use std::collections::HashMap;
use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::Rng;
use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::environment::{
    sample_environment, sample_environment_with, EnvError, Environment, RngStream,
};
use crate::graphs::{self, GraphError, WeightedDigraph};
use crate::kappa::{self, KappaError};
use crate::model::DirichletParams;
use crate::solver::{self, SolverError};
use crate::stats::{self, KsReport, StatsError, P_FAIL, P_WARN};
use crate::walk::{annealed_path_probability, DerrwWalker, WalkError};

/// Largest allowed mean escape-bracket width.
pub const MAX_BRACKET_WIDTH: f64 = 1e-3;
/// z-score limit for path and predecessor frequencies.
pub const FREQUENCY_Z: f64 = 4.0;
/// z-score limit for moment comparisons.
pub const MOMENT_Z: f64 = 3.0;
/// Tolerance for exact identities (cycle reversal, monotonicity slack).
pub const EXACT_TOLERANCE: f64 = 1e-10;
/// Accepted range for the Hill estimate on the sink graph.
pub const TOURNIER_RANGE: (f64, f64) = (1.2, 1.8);

const CHUNK: usize = 10_000;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum VerifyError {
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error(transparent)]
    Environment(#[from] EnvError),
    #[error(transparent)]
    Solver(#[from] SolverError),
    #[error(transparent)]
    Stats(#[from] StatsError),
    #[error(transparent)]
    Walk(#[from] WalkError),
    #[error(transparent)]
    Kappa(#[from] KappaError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Suite {
    BetaLaw,
    Derrw,
    Reversal,
    LoopReversal,
    Harmonic,
    Tournier,
}

impl Suite {
    pub const ALL: [Suite; 6] = [
        Suite::BetaLaw,
        Suite::Derrw,
        Suite::Reversal,
        Suite::LoopReversal,
        Suite::Harmonic,
        Suite::Tournier,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Suite::BetaLaw => "beta-law",
            Suite::Derrw => "derrw",
            Suite::Reversal => "reversal",
            Suite::LoopReversal => "loop-reversal",
            Suite::Harmonic => "harmonic",
            Suite::Tournier => "tournier",
        }
    }
}

impl fmt::Display for Suite {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Suite {
    type Err = VerifyError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Suite::ALL
            .into_iter()
            .find(|suite| suite.name() == s)
            .ok_or_else(|| VerifyError::InvalidConfig(format!("unknown suite {s:?}")))
    }
}

/// Options shared by all suites; `None` picks the suite default.
#[derive(Debug, Clone, Default)]
pub struct SuiteConfig {
    pub params: Option<DirichletParams>,
    pub replicas: Option<usize>,
    pub window: Option<i64>,
    pub seed: u64,
}

#[derive(Debug, Clone, Serialize)]
pub struct SuiteReport {
    pub suite: Suite,
    pub passed: bool,
    pub warning: Option<String>,
    pub evidence: serde_json::Value,
}

fn report<T: Serialize>(
    suite: Suite,
    passed: bool,
    warning: Option<String>,
    evidence: &T,
) -> SuiteReport {
    SuiteReport {
        suite,
        passed,
        warning,
        evidence: serde_json::to_value(evidence).expect("evidence serializes"),
    }
}

/// Runs one suite with defaults filled in.
pub fn run_suite(suite: Suite, cfg: &SuiteConfig) -> Result<SuiteReport, VerifyError> {
    let nn = |a, b| DirichletParams::nearest_neighbor(a, b).expect("valid weights");
    let params = |default: DirichletParams| cfg.params.clone().unwrap_or(default);
    Ok(match suite {
        Suite::BetaLaw => {
            let r = beta_law(
                &params(nn(1.0, 2.0)),
                cfg.replicas.unwrap_or(2000),
                cfg.window.unwrap_or(512),
                cfg.seed,
            )?;
            let warning =
                (r.ks.p_value < P_WARN).then(|| format!("KS p-value {:.3e} is low", r.ks.p_value));
            report(suite, r.passed, warning, &r)
        }
        Suite::Derrw => {
            let r = derrw_paths(
                &default_derrw_graph(),
                0,
                4,
                cfg.replicas.unwrap_or(1_000_000),
                cfg.seed,
            )?;
            report(suite, r.passed, None, &r)
        }
        Suite::Reversal => {
            let p = params(nn(1.0, 3.0));
            let m = cfg.window.unwrap_or(6);
            let cycles = cycle_identity(&p, m, 100, 100, cfg.seed)?;
            let moments = reversal_moments(&p, m, cfg.replicas.unwrap_or(10_000), cfg.seed)?;
            let passed = cycles.passed && moments.passed;
            report(
                suite,
                passed,
                None,
                &serde_json::json!({ "cycles": cycles, "moments": moments }),
            )
        }
        Suite::LoopReversal => {
            let r = loop_reversal(
                &params(nn(1.0, 3.0)),
                cfg.window.unwrap_or(6),
                cfg.replicas.unwrap_or(1_000_000),
                cfg.seed,
            )?;
            report(suite, r.passed, None, &r)
        }
        Suite::Harmonic => {
            let r = harmonic_monotonicity(cfg.replicas.unwrap_or(1000), cfg.seed)?;
            report(suite, r.passed, None, &r)
        }
        Suite::Tournier => {
            let r = tournier(cfg.replicas.unwrap_or(100_000), cfg.seed)?;
            report(suite, r.passed, None, &r)
        }
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct BetaLawReport {
    pub kappa1: f64,
    pub d_minus: f64,
    pub window: i64,
    pub replicas: usize,
    pub ks: KsReport,
    pub mean_width: f64,
    pub max_width: f64,
    pub passed: bool,
}

/// Escape-probability brackets on the truncated half-line graph, tested
/// against `Beta(kappa1, d-)` by a KS test of the bracket midpoints.
pub fn beta_law(
    p: &DirichletParams,
    replicas: usize,
    window: i64,
    seed: u64,
) -> Result<BetaLawReport, VerifyError> {
    let d = p.derive();
    if d.kappa1 <= 0.0 || d.is_recurrent() {
        return Err(VerifyError::InvalidConfig(format!(
            "beta-law needs kappa1 > 0, got {}",
            d.kappa1
        )));
    }
    let g = Arc::new(graphs::build_gplus(p, window)?);
    let brackets = (0..replicas as u64)
        .into_par_iter()
        .map(|i| {
            let env = sample_environment(&g, &RngStream::new(seed, i))?;
            Ok(solver::escape_probability_bracket(p, &env)?)
        })
        .collect::<Result<Vec<_>, VerifyError>>()?;
    let mids: Vec<f64> = brackets.iter().map(|b| b.midpoint()).collect();
    let ks = stats::ks_test(&mids, stats::beta_cdf(d.kappa1, d.d_minus))?;
    let widths: Vec<f64> = brackets.iter().map(|b| b.width()).collect();
    let mean_width = widths.iter().sum::<f64>() / widths.len() as f64;
    let max_width = widths.iter().copied().fold(0.0, f64::max);
    Ok(BetaLawReport {
        kappa1: d.kappa1,
        d_minus: d.d_minus,
        window,
        replicas,
        passed: ks.p_value > P_FAIL && mean_width < MAX_BRACKET_WIDTH,
        ks,
        mean_width,
        max_width,
    })
}

/// Three vertices, two out-edges each, one of them a self-loop.
pub fn default_derrw_graph() -> WeightedDigraph {
    WeightedDigraph::from_edges(
        0..3,
        [
            (0, 0, 1.0),
            (0, 1, 0.5),
            (1, 0, 1.5),
            (1, 2, 1.0),
            (2, 0, 0.7),
            (2, 1, 2.0),
        ],
    )
    .expect("valid graph")
}

#[derive(Debug, Clone, Serialize)]
pub struct FrequencyCheck {
    pub path: Vec<i64>,
    pub expected: f64,
    pub observed: f64,
    pub z: f64,
}

impl FrequencyCheck {
    fn new(path: Vec<i64>, expected: f64, count: u64, runs: usize) -> Self {
        let observed = count as f64 / runs as f64;
        let se = (expected * (1.0 - expected) / runs as f64).sqrt();
        let z = if se > 0.0 {
            (observed - expected).abs() / se
        } else if observed == expected {
            0.0
        } else {
            f64::INFINITY
        };
        FrequencyCheck {
            path,
            expected,
            observed,
            z,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct PathReport {
    pub runs: usize,
    pub depth: usize,
    pub checks: Vec<FrequencyCheck>,
    pub max_z: f64,
    pub passed: bool,
}

fn all_paths(g: &WeightedDigraph, start: i64, depth: usize) -> Vec<Vec<i64>> {
    let mut out = Vec::new();
    let mut frontier = vec![vec![start]];
    for _ in 0..depth {
        let mut next = Vec::new();
        for path in frontier {
            let v = g.index_of(*path.last().expect("nonempty")).expect("vertex");
            for (h, _) in g.out_edges(v) {
                let mut longer = path.clone();
                longer.push(g.label(h));
                next.push(longer);
            }
        }
        out.extend(next.iter().cloned());
        frontier = next;
    }
    out
}

/// Frequencies of every path of length `1..=depth` under the reinforced walk
/// against the annealed product formula.
pub fn derrw_paths(
    g: &WeightedDigraph,
    start: i64,
    depth: usize,
    runs: usize,
    seed: u64,
) -> Result<PathReport, VerifyError> {
    let chunks = runs.div_ceil(CHUNK);
    let partial = (0..chunks)
        .into_par_iter()
        .map(|c| {
            let mut walker = DerrwWalker::new(g, start)?;
            let mut rng = RngStream::new(seed, c as u64).rng();
            let mut counts: HashMap<Vec<i64>, u64> = HashMap::new();
            let mut path = Vec::with_capacity(depth + 1);
            for _ in 0..CHUNK.min(runs - c * CHUNK) {
                walker.reset(start)?;
                path.clear();
                path.push(start);
                for _ in 0..depth {
                    path.push(walker.step(&mut rng)?);
                    *counts.entry(path.clone()).or_insert(0) += 1;
                }
            }
            Ok(counts)
        })
        .collect::<Result<Vec<_>, VerifyError>>()?;
    let mut counts: HashMap<Vec<i64>, u64> = HashMap::new();
    for part in partial {
        for (k, v) in part {
            *counts.entry(k).or_insert(0) += v;
        }
    }
    let checks = all_paths(g, start, depth)
        .into_iter()
        .map(|path| {
            let expected = annealed_path_probability(g, &path)?;
            let count = counts.get(&path).copied().unwrap_or(0);
            Ok(FrequencyCheck::new(path, expected, count, runs))
        })
        .collect::<Result<Vec<_>, VerifyError>>()?;
    let max_z = checks.iter().map(|c| c.z).fold(0.0, f64::max);
    Ok(PathReport {
        runs,
        depth,
        passed: max_z <= FREQUENCY_Z,
        checks,
        max_z,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct CycleReport {
    pub environments: usize,
    pub cycles_per_environment: usize,
    pub max_abs_error: f64,
    pub max_rel_error: f64,
    pub passed: bool,
}

/// A uniformly random closed walk through `start` of length at most `cap`.
fn random_cycle<R: Rng + ?Sized>(
    g: &WeightedDigraph,
    start: usize,
    cap: usize,
    rng: &mut R,
) -> Vec<i64> {
    loop {
        let mut path = vec![start];
        let mut v = start;
        while path.len() <= cap {
            let ids = g.out_edge_ids(v);
            v = g.head(rng.random_range(ids));
            path.push(v);
            if v == start {
                return path.into_iter().map(|i| g.label(i)).collect();
            }
        }
    }
}

/// Checks `P_omega(cycle) = P_reversed(reversed cycle)` on sampled
/// environments of the zero-divergence graph `G_M`.
pub fn cycle_identity(
    p: &DirichletParams,
    m: i64,
    environments: usize,
    cycles: usize,
    seed: u64,
) -> Result<CycleReport, VerifyError> {
    let g = Arc::new(graphs::build_gm(p, m)?);
    let base = RngStream::new(seed, 0);
    let mut max_abs: f64 = 0.0;
    let mut max_rel: f64 = 0.0;
    for i in 0..environments as u64 {
        let stream = base.child(i);
        let env = sample_environment(&g, &stream.child(0))?;
        let rev = solver::time_reverse(&env)?;
        let mut rng = stream.child(1).rng();
        for _ in 0..cycles {
            let start = rng.random_range(0..g.vertex_count());
            let cycle = random_cycle(&g, start, 40, &mut rng);
            let reversed: Vec<i64> = cycle.iter().rev().copied().collect();
            let a = solver::path_probability(&env, &cycle);
            let b = solver::path_probability(&rev, &reversed);
            max_abs = max_abs.max((a - b).abs());
            if a > 0.0 {
                max_rel = max_rel.max((a - b).abs() / a);
            }
        }
    }
    Ok(CycleReport {
        environments,
        cycles_per_environment: cycles,
        max_abs_error: max_abs,
        max_rel_error: max_rel,
        passed: max_abs <= EXACT_TOLERANCE,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct MomentCheck {
    pub tail: i64,
    pub head: i64,
    pub mean_reversed: f64,
    pub mean_direct: f64,
    pub mean_z: f64,
    pub var_reversed: f64,
    pub var_direct: f64,
    pub var_z: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct MomentReport {
    pub draws: usize,
    pub checks: Vec<MomentCheck>,
    pub max_z: f64,
    pub passed: bool,
}

/// Mean, unbiased variance and their standard errors.
fn moments(xs: &[f64]) -> (f64, f64, f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let m2 = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    let m4 = xs.iter().map(|x| (x - mean).powi(4)).sum::<f64>() / n;
    let var = m2 * n / (n - 1.0);
    (
        mean,
        (var / n).sqrt(),
        var,
        ((m4 - m2 * m2).max(0.0) / n).sqrt(),
    )
}

fn z_score(a: f64, se_a: f64, b: f64, se_b: f64) -> f64 {
    let se = se_a.hypot(se_b);
    if se > 0.0 {
        (a - b).abs() / se
    } else if a == b {
        0.0
    } else {
        f64::INFINITY
    }
}

/// Compares the law of the time-reversed environment on `G_M` with a direct
/// sample on the edge-reversed graph, entry by entry.
pub fn reversal_moments(
    p: &DirichletParams,
    m: i64,
    draws: usize,
    seed: u64,
) -> Result<MomentReport, VerifyError> {
    let g = Arc::new(graphs::build_gm(p, m)?);
    let rg = Arc::new(g.reversed());
    let edges: Vec<(i64, i64)> = rg.edges().map(|(t, h, _)| (t, h)).collect();
    let mut reversed_samples = vec![Vec::with_capacity(draws); edges.len()];
    let mut direct_samples = vec![Vec::with_capacity(draws); edges.len()];
    let mut rng_a = RngStream::new(seed, 1).rng();
    let mut rng_b = RngStream::new(seed, 2).rng();
    for _ in 0..draws {
        let rev = solver::time_reverse(&sample_environment_with(&g, &mut rng_a)?)?;
        let direct = sample_environment_with(&rg, &mut rng_b)?;
        for (k, &(t, h)) in edges.iter().enumerate() {
            reversed_samples[k].push(rev.transition(t, h));
            direct_samples[k].push(direct.transition(t, h));
        }
    }
    let checks: Vec<MomentCheck> = edges
        .iter()
        .enumerate()
        .map(|(k, &(tail, head))| {
            let (ma, sa, va, sva) = moments(&reversed_samples[k]);
            let (mb, sb, vb, svb) = moments(&direct_samples[k]);
            MomentCheck {
                tail,
                head,
                mean_reversed: ma,
                mean_direct: mb,
                mean_z: z_score(ma, sa, mb, sb),
                var_reversed: va,
                var_direct: vb,
                var_z: z_score(va, sva, vb, svb),
            }
        })
        .collect();
    let max_z = checks
        .iter()
        .map(|c| c.mean_z.max(c.var_z))
        .fold(0.0, f64::max);
    Ok(MomentReport {
        draws,
        passed: max_z <= MOMENT_Z,
        checks,
        max_z,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct LoopReport {
    pub runs: usize,
    pub checks: Vec<FrequencyCheck>,
    pub max_z: f64,
    pub unfinished: u64,
    pub passed: bool,
}

/// Last vertex before the first return to `x`, or `None` after `cap` steps.
fn return_predecessor<R: Rng + ?Sized>(
    env: &Environment,
    x: usize,
    cap: usize,
    rng: &mut R,
) -> Option<usize> {
    let mut v = x;
    for _ in 0..cap {
        let mut u: f64 = rng.random();
        let mut next = None;
        for (h, p) in env.row(v) {
            next = Some(h);
            if u < p {
                break;
            }
            u -= p;
        }
        let next = next.expect("rows are nonempty");
        if next == x {
            return Some(v);
        }
        v = next;
    }
    None
}

/// Annealed law of the vertex visited just before the first return to 0 on
/// `G_M`, against `w(y, 0) / sum_v w(v, 0)`.
pub fn loop_reversal(
    p: &DirichletParams,
    m: i64,
    runs: usize,
    seed: u64,
) -> Result<LoopReport, VerifyError> {
    let g = Arc::new(graphs::build_gm(p, m)?);
    let origin = g.index_of(0).expect("0 is a vertex");
    let chunks = runs.div_ceil(CHUNK);
    let partial = (0..chunks)
        .into_par_iter()
        .map(|c| {
            let mut rng = RngStream::new(seed, c as u64).rng();
            let mut counts = vec![0u64; g.vertex_count()];
            let mut unfinished = 0u64;
            for _ in 0..CHUNK.min(runs - c * CHUNK) {
                let env = sample_environment_with(&g, &mut rng)?;
                match return_predecessor(&env, origin, 1_000_000, &mut rng) {
                    Some(y) => counts[y] += 1,
                    None => unfinished += 1,
                }
            }
            Ok((counts, unfinished))
        })
        .collect::<Result<Vec<_>, VerifyError>>()?;
    let mut counts = vec![0u64; g.vertex_count()];
    let mut unfinished = 0;
    for (part, u) in partial {
        counts.iter_mut().zip(part).for_each(|(a, b)| *a += b);
        unfinished += u;
    }
    let total_in = g.in_weight(origin);
    let checks: Vec<FrequencyCheck> = g
        .in_edges(origin)
        .map(|(y, w)| FrequencyCheck::new(vec![g.label(y), 0], w / total_in, counts[y], runs))
        .collect();
    let max_z = checks.iter().map(|c| c.z).fold(0.0, f64::max);
    Ok(LoopReport {
        runs,
        passed: max_z <= FREQUENCY_Z && unfinished == 0,
        checks,
        max_z,
        unfinished,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct HarmonicReport {
    pub instances: usize,
    /// Draws discarded because the redirected chain could not reach `A ∪ B`
    /// from some vertex, or no admissible `y` existed.
    pub resampled: usize,
    pub min_difference: f64,
    pub violations: usize,
    pub passed: bool,
}

/// A random strongly connected digraph on `0..n`: a random Hamiltonian cycle
/// plus extra random edges.
fn random_strongly_connected<R: Rng + ?Sized>(n: usize, rng: &mut R) -> WeightedDigraph {
    let mut order: Vec<i64> = (0..n as i64).collect();
    order.shuffle(rng);
    let mut edges: Vec<(i64, i64, f64)> = (0..n)
        .map(|k| (order[k], order[(k + 1) % n], rng.random_range(0.1..3.0)))
        .collect();
    for t in 0..n as i64 {
        for h in 0..n as i64 {
            if rng.random_bool(0.25) {
                edges.push((t, h, rng.random_range(0.1..3.0)));
            }
        }
    }
    WeightedDigraph::from_edges(0..n as i64, edges).expect("valid graph")
}

/// Redirecting `x` to jump surely to a site `y` with at least as large a
/// hitting probability never lowers any hitting probability.
pub fn harmonic_monotonicity(instances: usize, seed: u64) -> Result<HarmonicReport, VerifyError> {
    let mut rng = RngStream::new(seed, 0).rng();
    let mut done = 0;
    let mut resampled = 0;
    let mut violations = 0;
    let mut min_difference = f64::INFINITY;
    while done < instances {
        let n = rng.random_range(4..=12);
        let g = Arc::new(random_strongly_connected(n, &mut rng));
        let env = sample_environment_with(&g, &mut rng)?;
        let mut vertices: Vec<usize> = (0..n).collect();
        vertices.shuffle(&mut rng);
        let a_len = rng.random_range(1..=2);
        let b_len = rng.random_range(0..=2.min(n - a_len - 1));
        let target = vertices[..a_len].to_vec();
        let taboo = vertices[a_len..a_len + b_len].to_vec();
        let x = vertices[a_len + b_len];
        let h = solver::hitting_values(&env, &target, &taboo)?;
        let candidates: Vec<usize> = (0..n)
            .filter(|&y| y != x && !taboo.contains(&y) && h[y] >= h[x])
            .collect();
        let Some(&y) = candidates.get(rng.random_range(0..candidates.len().max(1))) else {
            resampled += 1;
            continue;
        };
        let redirected = env.redirect(g.label(x), g.label(y))?;
        let h2 = match solver::hitting_values(&redirected, &target, &taboo) {
            Ok(h2) => h2,
            Err(SolverError::UnreachableBoundary(_)) => {
                resampled += 1;
                continue;
            }
            Err(e) => return Err(e.into()),
        };
        let diff = h2
            .iter()
            .zip(&h)
            .map(|(b, a)| b - a)
            .fold(f64::INFINITY, f64::min);
        min_difference = min_difference.min(diff);
        if diff < -EXACT_TOLERANCE {
            violations += 1;
        }
        done += 1;
    }
    Ok(HarmonicReport {
        instances,
        resampled,
        min_difference,
        violations,
        passed: violations == 0,
    })
}

/// Five transient vertices and an absorbing sink `5`. The cheapest trap
/// containing 0 is `{0, 1}` with exit weight 1.5.
pub fn tournier_graph() -> WeightedDigraph {
    WeightedDigraph::from_edges(
        0..6,
        [
            (0, 1, 2.0),
            (0, 5, 0.75),
            (1, 0, 2.0),
            (1, 2, 0.75),
            (2, 0, 1.0),
            (2, 3, 1.0),
            (2, 5, 0.5),
            (3, 2, 1.0),
            (3, 4, 1.0),
            (4, 3, 1.0),
            (4, 5, 2.0),
            (5, 5, 1.0),
        ],
    )
    .expect("valid graph")
}

#[derive(Debug, Clone, Serialize)]
pub struct TournierReport {
    pub environments: usize,
    pub min_exit_weight: f64,
    pub witness: Vec<i64>,
    pub hill: f64,
    pub k: usize,
    pub passed: bool,
}

/// Tail index of the quenched expected number of visits to 0 before
/// absorption, against the cheapest trap exit weight.
pub fn tournier(environments: usize, seed: u64) -> Result<TournierReport, VerifyError> {
    let g = Arc::new(tournier_graph());
    let transient: Vec<i64> = (0..5).collect();
    let (min_exit_weight, witness) = kappa::min_trap_exit_weight(&g, 0)?;
    let chunks = environments.div_ceil(CHUNK);
    let samples: Vec<f64> = (0..chunks)
        .into_par_iter()
        .map(|c| {
            let mut rng = RngStream::new(seed, c as u64).rng();
            (0..CHUNK.min(environments - c * CHUNK))
                .map(|_| {
                    let env = sample_environment_with(&g, &mut rng)?;
                    Ok(solver::expected_visits(&env, 0, &transient)?)
                })
                .collect::<Result<Vec<f64>, VerifyError>>()
        })
        .collect::<Result<Vec<_>, VerifyError>>()?
        .into_iter()
        .flatten()
        .collect();
    let k = stats::default_hill_k(samples.len());
    let hill = stats::hill_estimator(&samples, k)?;
    Ok(TournierReport {
        environments,
        min_exit_weight,
        witness,
        hill,
        k,
        passed: (TOURNIER_RANGE.0..=TOURNIER_RANGE.1).contains(&hill),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn suite_names_round_trip() {
        for s in Suite::ALL {
            assert_eq!(s.name().parse::<Suite>().unwrap(), s);
        }
        assert!("nope".parse::<Suite>().is_err());
    }

    #[test]
    fn tournier_graph_trap() {
        let (w, set) = kappa::min_trap_exit_weight(&tournier_graph(), 0).unwrap();
        assert!((w - 1.5).abs() < 1e-12);
        assert_eq!(set, vec![0, 1]);
    }

    #[test]
    fn path_enumeration_counts() {
        let g = default_derrw_graph();
        let paths = all_paths(&g, 0, 4);
        assert_eq!(paths.len(), 2 + 4 + 8 + 16);
        let depth4: f64 = paths
            .iter()
            .filter(|p| p.len() == 5)
            .map(|p| annealed_path_probability(&g, p).unwrap())
            .sum();
        assert!((depth4 - 1.0).abs() < 1e-12);
    }

    #[test]
    fn small_runs_pass() {
        let nn = DirichletParams::nearest_neighbor(1.0, 3.0).unwrap();
        assert!(
            derrw_paths(&default_derrw_graph(), 0, 3, 20_000, 1)
                .unwrap()
                .passed
        );
        assert!(cycle_identity(&nn, 6, 5, 20, 1).unwrap().passed);
        assert!(harmonic_monotonicity(50, 1).unwrap().passed);
        let lr = loop_reversal(&nn, 6, 20_000, 1).unwrap();
        assert_eq!(lr.checks.len(), 2);
        assert!(lr.passed, "{lr:?}");
    }

    #[test]
    fn moments_of_constant_sample() {
        let (m, se, v, sv) = moments(&[2.0; 10]);
        assert_eq!((m, se, v, sv), (2.0, 0.0, 0.0, 0.0));
        assert_eq!(z_score(1.0, 0.0, 1.0, 0.0), 0.0);
    }
}
