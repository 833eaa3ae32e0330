//! Seeded random streams, Dirichlet sampling and sampled environments on
//! finite graphs.

use std::fmt::Write as _;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::graphs::WeightedDigraph;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EnvError {
    #[error("concentration {0} is not a positive finite number")]
    NonpositiveConcentration(f64),
    #[error("vertex {0} has no out-edges")]
    IsolatedVertex(i64),
    #[error("bad partition: {0}")]
    BadPartition(String),
    #[error("row of vertex {vertex} is not a probability vector: {reason}")]
    InvalidRow { vertex: i64, reason: String },
    #[error("vertex {0} is not in the graph")]
    UnknownVertex(i64),
}

/// Identifies an independent random stream: a master seed and a stream index.
/// The same pair always yields the same draws.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct RngStream {
    pub seed: u64,
    pub stream: u64,
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

impl RngStream {
    pub fn new(seed: u64, stream: u64) -> Self {
        RngStream { seed, stream }
    }

    /// A generator positioned at the start of this stream.
    pub fn rng(&self) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(self.stream);
        rng
    }

    /// Stream number `index` derived from this one, under the same seed.
    pub fn child(&self, index: u64) -> RngStream {
        RngStream {
            seed: self.seed,
            stream: splitmix64(self.stream ^ splitmix64(index.wrapping_add(0x5851_F42D_4C95_7F2D))),
        }
    }
}

static UNDERFLOW_CLAMPS: AtomicU64 = AtomicU64::new(0);

/// Number of Dirichlet components, process-wide, that underflowed to zero
/// and were raised to the smallest positive double.
pub fn underflow_clamp_count() -> u64 {
    UNDERFLOW_CLAMPS.load(Ordering::Relaxed)
}

/// Uniform on `(0, 1]`.
fn open_uniform<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    1.0 - rng.random::<f64>()
}

/// Logarithm of a `Gamma(shape, 1)` variate.
///
/// Marsaglia–Tsang squeeze for `shape >= 1`; below 1 the boost
/// `G(a) = G(a + 1) U^(1/a)` is applied in log space, so shapes like 1/67
/// keep their full lower tail instead of rounding to zero.
pub fn log_gamma_variate<R: Rng + ?Sized>(shape: f64, rng: &mut R) -> f64 {
    if shape < 1.0 {
        return log_gamma_variate(shape + 1.0, rng) + open_uniform(rng).ln() / shape;
    }
    let d = shape - 1.0 / 3.0;
    let c = 1.0 / (9.0 * d).sqrt();
    loop {
        let x: f64 = rng.sample(StandardNormal);
        let v = 1.0 + c * x;
        if v <= 0.0 {
            continue;
        }
        let v = v * v * v;
        let u = open_uniform(rng);
        if u < 1.0 - 0.0331 * x.powi(4) || u.ln() < 0.5 * x * x + d * (1.0 - v + v.ln()) {
            return d.ln() + v.ln();
        }
    }
}

/// A draw from the Dirichlet law with the given concentrations.
pub fn sample_dirichlet<R: Rng + ?Sized>(
    concentrations: &[f64],
    rng: &mut R,
) -> Result<Vec<f64>, EnvError> {
    if let Some(&bad) = concentrations
        .iter()
        .find(|a| !(a.is_finite() && **a > 0.0))
    {
        return Err(EnvError::NonpositiveConcentration(bad));
    }
    let logs: Vec<f64> = concentrations
        .iter()
        .map(|&a| log_gamma_variate(a, rng))
        .collect();
    Ok(normalize_logs(&logs))
}

/// `exp(l_i) / sum_j exp(l_j)` with the maximum factored out. Components
/// below the smallest positive double are clamped to it.
fn normalize_logs(logs: &[f64]) -> Vec<f64> {
    let max = logs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let scaled: Vec<f64> = logs.iter().map(|&l| (l - max).exp()).collect();
    let total: f64 = scaled.iter().sum();
    scaled
        .into_iter()
        .map(|s| {
            let p = s / total;
            if p > 0.0 {
                p
            } else {
                UNDERFLOW_CLAMPS.fetch_add(1, Ordering::Relaxed);
                f64::MIN_POSITIVE
            }
        })
        .collect()
}

/// Block sums of `v` over a partition of its indices.
pub fn amalgamate(v: &[f64], blocks: &[Vec<usize>]) -> Result<Vec<f64>, EnvError> {
    let mut seen = vec![false; v.len()];
    for block in blocks {
        if block.is_empty() {
            return Err(EnvError::BadPartition("empty block".into()));
        }
        for &i in block {
            if i >= v.len() {
                return Err(EnvError::BadPartition(format!("index {i} out of range")));
            }
            if std::mem::replace(&mut seen[i], true) {
                return Err(EnvError::BadPartition(format!("index {i} repeated")));
            }
        }
    }
    if let Some(i) = seen.iter().position(|s| !s) {
        return Err(EnvError::BadPartition(format!("index {i} not covered")));
    }
    Ok(blocks
        .iter()
        .map(|b| b.iter().map(|&i| v[i]).sum())
        .collect())
}

/// Transition probabilities on the edges of a finite graph, one per edge id.
#[derive(Debug, Clone, PartialEq)]
pub struct Environment {
    graph: Arc<WeightedDigraph>,
    probs: Vec<f64>,
}

impl Environment {
    /// Wraps explicit probabilities, indexed by edge id of `graph`.
    pub fn from_probs(graph: Arc<WeightedDigraph>, probs: Vec<f64>) -> Result<Self, EnvError> {
        assert_eq!(probs.len(), graph.edge_count(), "one probability per edge");
        for v in 0..graph.vertex_count() {
            let vertex = graph.label(v);
            let row = graph.out_edge_ids(v);
            if row.is_empty() {
                return Err(EnvError::IsolatedVertex(vertex));
            }
            let row = &probs[row];
            if let Some(p) = row.iter().find(|p| !(**p > 0.0 && **p <= 1.0)) {
                return Err(EnvError::InvalidRow {
                    vertex,
                    reason: format!("entry {p} outside (0, 1]"),
                });
            }
            let total: f64 = row.iter().sum();
            if (total - 1.0).abs() > 1e-12 {
                return Err(EnvError::InvalidRow {
                    vertex,
                    reason: format!("sums to {total}"),
                });
            }
        }
        Ok(Environment { graph, probs })
    }

    /// Builds an environment from `(tail, head, probability)` triples; the
    /// graph gets the probabilities as edge weights.
    pub fn from_transitions<V, E>(vertices: V, transitions: E) -> Result<Self, EnvError>
    where
        V: IntoIterator<Item = i64>,
        E: IntoIterator<Item = (i64, i64, f64)>,
    {
        let transitions: Vec<_> = transitions.into_iter().collect();
        let graph =
            WeightedDigraph::from_edges(vertices, transitions.iter().copied()).map_err(|e| {
                EnvError::InvalidRow {
                    vertex: 0,
                    reason: e.to_string(),
                }
            })?;
        let probs = (0..graph.edge_count())
            .map(|e| graph.edge_weight(e))
            .collect();
        Environment::from_probs(Arc::new(graph), probs)
    }

    pub fn graph(&self) -> &Arc<WeightedDigraph> {
        &self.graph
    }

    /// Probability of edge id `e`.
    pub fn prob(&self, e: usize) -> f64 {
        self.probs[e]
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    /// `(head index, probability)` for the row of vertex index `v`.
    pub fn row(&self, v: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        self.graph
            .out_edge_ids(v)
            .map(move |e| (self.graph.head(e), self.probs[e]))
    }

    /// Transition probability between two labels (0 when there is no edge).
    pub fn transition(&self, tail: i64, head: i64) -> f64 {
        let (Some(t), Some(h)) = (self.graph.index_of(tail), self.graph.index_of(head)) else {
            return 0.0;
        };
        self.graph.find_edge(t, h).map_or(0.0, |e| self.probs[e])
    }

    /// A copy in which `x` moves to `y` with probability one; all other rows
    /// are unchanged.
    pub fn redirect(&self, x: i64, y: i64) -> Result<Environment, EnvError> {
        let g = &self.graph;
        let xi = g.index_of(x).ok_or(EnvError::UnknownVertex(x))?;
        if !g.contains(y) {
            return Err(EnvError::UnknownVertex(y));
        }
        let transitions = (0..g.vertex_count())
            .filter(|&v| v != xi)
            .flat_map(|v| self.row(v).map(move |(h, p)| (g.label(v), g.label(h), p)))
            .chain(std::iter::once((x, y, 1.0)));
        Environment::from_transitions(g.labels().iter().copied(), transitions)
    }

    /// Text dump, one `x head prob` line per edge, sorted.
    pub fn dump(&self) -> String {
        let mut out = String::new();
        for v in 0..self.graph.vertex_count() {
            for (h, p) in self.row(v) {
                let _ = writeln!(out, "{} {} {}", self.graph.label(v), self.graph.label(h), p);
            }
        }
        out
    }
}

/// Independent Dirichlet rows, the row at `x` having the out-edge weights of
/// `x` as concentrations. Rows are drawn in vertex order from `stream`.
pub fn sample_environment(
    graph: &Arc<WeightedDigraph>,
    stream: &RngStream,
) -> Result<Environment, EnvError> {
    let mut rng = stream.rng();
    sample_environment_with(graph, &mut rng)
}

/// As [`sample_environment`], drawing from a caller-held generator.
pub fn sample_environment_with<R: Rng + ?Sized>(
    graph: &Arc<WeightedDigraph>,
    rng: &mut R,
) -> Result<Environment, EnvError> {
    let mut probs = Vec::with_capacity(graph.edge_count());
    let mut concentrations = Vec::new();
    for v in 0..graph.vertex_count() {
        concentrations.clear();
        concentrations.extend(graph.out_edges(v).map(|(_, w)| w));
        if concentrations.is_empty() {
            return Err(EnvError::IsolatedVertex(graph.label(v)));
        }
        probs.extend(sample_dirichlet(&concentrations, rng)?);
    }
    Ok(Environment {
        graph: Arc::clone(graph),
        probs,
    })
}
