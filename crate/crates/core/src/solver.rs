//! Exact quenched quantities on finite environments: hitting probabilities,
//! expected occupation times, escape-probability brackets on the truncated
//! half-line graph, invariant measures and time reversal.
//!
//! Every system here has the form `(I - Q) u = b` with `Q` substochastic, so
//! the matrix is a nonsingular M-matrix once every unknown can leak out. Such
//! matrices factor without pivoting, which keeps window problems banded.

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::environment::Environment;
use crate::graphs::{self, WeightedDigraph};
use crate::model::DirichletParams;

/// Target residual (max norm) for every linear solve.
pub const RESIDUAL_TOLERANCE: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SolverError {
    #[error("vertex {0} cannot reach the target or taboo set")]
    UnreachableBoundary(i64),
    #[error("linear system is singular or ill-conditioned (residual {residual:e})")]
    SingularSystem { residual: f64 },
    #[error("the walk started at {0} never leaves the set")]
    NoExit(i64),
    #[error("support graph is not strongly connected")]
    NotStronglyConnected,
    #[error("vertex {0} is not in the graph")]
    UnknownVertex(i64),
    #[error("invalid problem: {0}")]
    InvalidProblem(String),
    #[error("escape bracket needs kappa1 > 0, got {0}")]
    NonpositiveKappa1(f64),
}

/// Probability of reaching `target` before `taboo`.
#[derive(Debug, Clone)]
pub struct HittingProblem<'a> {
    pub env: &'a Environment,
    pub target: Vec<i64>,
    pub taboo: Vec<i64>,
}

/// Bounds on the probability of never returning to 0 in the half-line graph.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EscapeBracket {
    pub lower: f64,
    pub upper: f64,
    pub window: i64,
}

impl EscapeBracket {
    pub fn width(&self) -> f64 {
        self.upper - self.lower
    }

    pub fn midpoint(&self) -> f64 {
        0.5 * (self.lower + self.upper)
    }
}

/// Sparse square system in row lists.
struct System {
    rows: Vec<Vec<(usize, f64)>>,
}

impl System {
    fn n(&self) -> usize {
        self.rows.len()
    }

    fn residual(&self, x: &[f64], b: &[f64]) -> Vec<f64> {
        self.rows
            .iter()
            .zip(b)
            .map(|(row, &bi)| bi - row.iter().map(|&(j, a)| a * x[j]).sum::<f64>())
            .collect()
    }

    fn bandwidth(&self) -> (usize, usize) {
        let mut lo = 0;
        let mut hi = 0;
        for (i, row) in self.rows.iter().enumerate() {
            for &(j, _) in row {
                if j < i {
                    lo = lo.max(i - j);
                } else {
                    hi = hi.max(j - i);
                }
            }
        }
        (lo, hi)
    }

    fn solve(&self, b: &[f64]) -> Result<Vec<f64>, SolverError> {
        let n = self.n();
        if n == 0 {
            return Ok(Vec::new());
        }
        let (lo, hi) = self.bandwidth();
        if (lo + hi + 1) * 4 <= n {
            if let Some(x) = Banded::factor(self, lo, hi).and_then(|f| f.refine(self, b)) {
                return Ok(x);
            }
        }
        self.solve_dense(b)
    }

    fn solve_dense(&self, b: &[f64]) -> Result<Vec<f64>, SolverError> {
        let n = self.n();
        let mut a = DMatrix::<f64>::zeros(n, n);
        for (i, row) in self.rows.iter().enumerate() {
            for &(j, v) in row {
                a[(i, j)] += v;
            }
        }
        let lu = a.lu();
        let mut x: Vec<f64> = lu
            .solve(&DVector::from_column_slice(b))
            .ok_or(SolverError::SingularSystem {
                residual: f64::INFINITY,
            })?
            .iter()
            .copied()
            .collect();
        let mut res = max_abs(&self.residual(&x, b));
        for _ in 0..3 {
            if res <= RESIDUAL_TOLERANCE {
                break;
            }
            let r = self.residual(&x, b);
            if let Some(dx) = lu.solve(&DVector::from_vec(r)) {
                x.iter_mut().zip(dx.iter()).for_each(|(xi, d)| *xi += d);
            }
            res = max_abs(&self.residual(&x, b));
        }
        if res <= RESIDUAL_TOLERANCE && x.iter().all(|v| v.is_finite()) {
            Ok(x)
        } else {
            Err(SolverError::SingularSystem { residual: res })
        }
    }
}

fn max_abs(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

/// Band LU factors without pivoting, stored row-major with `lo + hi + 1`
/// entries per row.
struct Banded {
    n: usize,
    lo: usize,
    hi: usize,
    data: Vec<f64>,
}

impl Banded {
    fn at(&self, i: usize, j: usize) -> f64 {
        self.data[i * (self.lo + self.hi + 1) + (j + self.lo - i)]
    }

    fn at_mut(&mut self, i: usize, j: usize) -> &mut f64 {
        &mut self.data[i * (self.lo + self.hi + 1) + (j + self.lo - i)]
    }

    fn factor(sys: &System, lo: usize, hi: usize) -> Option<Banded> {
        let n = sys.n();
        let mut m = Banded {
            n,
            lo,
            hi,
            data: vec![0.0; n * (lo + hi + 1)],
        };
        for (i, row) in sys.rows.iter().enumerate() {
            for &(j, v) in row {
                *m.at_mut(i, j) += v;
            }
        }
        for k in 0..n {
            let pivot = m.at(k, k);
            if pivot.is_nan() || pivot.abs() <= f64::MIN_POSITIVE {
                return None;
            }
            for i in k + 1..=(k + lo).min(n - 1) {
                let l = m.at(i, k) / pivot;
                if l == 0.0 {
                    continue;
                }
                *m.at_mut(i, k) = l;
                for j in k + 1..=(k + hi).min(n - 1) {
                    let u = m.at(k, j);
                    *m.at_mut(i, j) -= l * u;
                }
            }
        }
        Some(m)
    }

    fn apply_inverse(&self, b: &[f64]) -> Vec<f64> {
        let n = self.n;
        let mut x = b.to_vec();
        for i in 0..n {
            let start = i.saturating_sub(self.lo);
            let s: f64 = (start..i).map(|j| self.at(i, j) * x[j]).sum();
            x[i] -= s;
        }
        for i in (0..n).rev() {
            let end = (i + self.hi).min(n - 1);
            let s: f64 = (i + 1..=end).map(|j| self.at(i, j) * x[j]).sum();
            x[i] = (x[i] - s) / self.at(i, i);
        }
        x
    }

    /// Solves and refines until the residual meets the tolerance.
    fn refine(&self, sys: &System, b: &[f64]) -> Option<Vec<f64>> {
        let mut x = self.apply_inverse(b);
        for _ in 0..4 {
            let r = sys.residual(&x, b);
            if max_abs(&r) <= RESIDUAL_TOLERANCE {
                return x.iter().all(|v| v.is_finite()).then_some(x);
            }
            let dx = self.apply_inverse(&r);
            x.iter_mut().zip(&dx).for_each(|(xi, d)| *xi += d);
        }
        (max_abs(&sys.residual(&x, b)) <= RESIDUAL_TOLERANCE).then_some(x)
    }
}

fn indices(g: &WeightedDigraph, labels: &[i64]) -> Result<Vec<usize>, SolverError> {
    labels
        .iter()
        .map(|&l| g.index_of(l).ok_or(SolverError::UnknownVertex(l)))
        .collect()
}

/// Vertices from which some vertex of `sources` is reachable.
fn backward_reachable(g: &WeightedDigraph, sources: &[usize]) -> Vec<bool> {
    let mut seen = vec![false; g.vertex_count()];
    let mut queue: VecDeque<usize> = VecDeque::new();
    for &s in sources {
        if !seen[s] {
            seen[s] = true;
            queue.push_back(s);
        }
    }
    while let Some(v) = queue.pop_front() {
        for (t, _) in g.in_edges(v) {
            if !seen[t] {
                seen[t] = true;
                queue.push_back(t);
            }
        }
    }
    seen
}

/// `z -> P^z(H_A < H_B)` by vertex index.
pub fn hitting_values(
    env: &Environment,
    target: &[usize],
    taboo: &[usize],
) -> Result<Vec<f64>, SolverError> {
    let g = env.graph();
    let n = g.vertex_count();
    if target.is_empty() {
        return Err(SolverError::InvalidProblem("empty target set".into()));
    }
    let mut fixed: Vec<Option<f64>> = vec![None; n];
    for &b in taboo {
        fixed[b] = Some(0.0);
    }
    for &a in target {
        if fixed[a].is_some() {
            return Err(SolverError::InvalidProblem(format!(
                "vertex {} is in both target and taboo",
                g.label(a)
            )));
        }
        fixed[a] = Some(1.0);
    }
    let boundary: Vec<usize> = target.iter().chain(taboo).copied().collect();
    let reach = backward_reachable(g, &boundary);
    if let Some(v) = (0..n).find(|&v| !reach[v]) {
        return Err(SolverError::UnreachableBoundary(g.label(v)));
    }

    let unknown: Vec<usize> = (0..n).filter(|&v| fixed[v].is_none()).collect();
    let mut slot = vec![usize::MAX; n];
    for (k, &v) in unknown.iter().enumerate() {
        slot[v] = k;
    }
    let mut rows = Vec::with_capacity(unknown.len());
    let mut rhs = Vec::with_capacity(unknown.len());
    for &v in &unknown {
        let mut row = vec![(slot[v], 1.0)];
        let mut b = 0.0;
        for (h, p) in env.row(v) {
            match fixed[h] {
                Some(value) => b += p * value,
                None => row.push((slot[h], -p)),
            }
        }
        rows.push(row);
        rhs.push(b);
    }
    let x = System { rows }.solve(&rhs)?;
    Ok((0..n)
        .map(|v| fixed[v].unwrap_or_else(|| x[slot[v]].clamp(0.0, 1.0)))
        .collect())
}

/// `z -> P^z(H_A < H_B)` for every vertex `z`.
pub fn hitting_probability(prob: &HittingProblem<'_>) -> Result<BTreeMap<i64, f64>, SolverError> {
    let g = prob.env.graph();
    let target = indices(g, &prob.target)?;
    let taboo = indices(g, &prob.taboo)?;
    let values = hitting_values(prob.env, &target, &taboo)?;
    Ok(values
        .into_iter()
        .enumerate()
        .map(|(v, h)| (g.label(v), h))
        .collect())
}

/// Expected number of visits to `x` (time 0 included) before the walk from
/// `x` first leaves `set`.
pub fn expected_visits(env: &Environment, x: i64, set: &[i64]) -> Result<f64, SolverError> {
    let g = env.graph();
    let n = g.vertex_count();
    let xi = g.index_of(x).ok_or(SolverError::UnknownVertex(x))?;
    let mut inside = vec![false; n];
    for v in indices(g, set)? {
        inside[v] = true;
    }
    if !inside[xi] {
        return Err(SolverError::InvalidProblem(format!(
            "{x} is not in the set"
        )));
    }
    // only the strongly connected piece of `set` around x can produce returns
    let mut member = inside.clone();
    let comps = graphs::strongly_connected_components(g, Some(&inside));
    let comp = comps
        .into_iter()
        .find(|c| c.contains(&xi))
        .expect("x lies in some component");
    member.iter_mut().for_each(|m| *m = false);
    for &v in &comp {
        member[v] = true;
    }
    let leaks = comp
        .iter()
        .any(|&v| env.row(v).any(|(h, p)| !member[h] && p > 0.0));
    if !leaks {
        return Err(SolverError::NoExit(x));
    }
    let mut slot = vec![usize::MAX; n];
    for (k, &v) in comp.iter().enumerate() {
        slot[v] = k;
    }
    let rows = comp
        .iter()
        .map(|&v| {
            let mut row = vec![(slot[v], 1.0)];
            row.extend(
                env.row(v)
                    .filter(|&(h, _)| member[h])
                    .map(|(h, p)| (slot[h], -p)),
            );
            row
        })
        .collect();
    let mut rhs = vec![0.0; comp.len()];
    rhs[slot[xi]] = 1.0;
    let g_col = System { rows }.solve(&rhs)?;
    Ok(g_col[slot[xi]])
}

/// Brackets the probability, started at 0, of never returning to 0 on the
/// half-line graph truncated at `W` (the largest vertex of `env`).
///
/// With `band = [W - L + 1, W]`, `upper = sum_j omega(0, j) P^j(H_band < H_0)`
/// counts every arrival in the band as an escape. The lower value discounts
/// it by `r`, the largest probability of falling back to 0 before the band
/// from sites `[m - L, m - 1]`, `m = W / 2`, standing in for the chance of a
/// return from beyond the window.
pub fn escape_probability_bracket(
    p: &DirichletParams,
    env: &Environment,
) -> Result<EscapeBracket, SolverError> {
    let kappa1 = p.derive().kappa1;
    if kappa1 <= 0.0 {
        return Err(SolverError::NonpositiveKappa1(kappa1));
    }
    let g = env.graph();
    let w = *g.labels().last().expect("graph is nonempty");
    let origin = g.index_of(0).ok_or(SolverError::UnknownVertex(0))?;
    let band: Vec<usize> = indices(g, &(w - p.left() + 1..=w).collect::<Vec<_>>())?;
    let h = hitting_values(env, &band, &[origin])?;
    let upper: f64 = env
        .row(origin)
        .map(|(j, prob)| prob * h[j])
        .sum::<f64>()
        .clamp(0.0, 1.0);
    let m = w / 2;
    let r = (m - p.left()..m)
        .filter_map(|z| g.index_of(z))
        .map(|v| 1.0 - h[v])
        .fold(0.0, f64::max);
    let lower = (upper * (1.0 - r)).clamp(0.0, upper);
    Ok(EscapeBracket {
        lower,
        upper,
        window: w,
    })
}

/// The invariant probability of an irreducible finite chain.
pub fn invariant_measure(env: &Environment) -> Result<BTreeMap<i64, f64>, SolverError> {
    let g = env.graph();
    Ok(invariant_values(env)?
        .into_iter()
        .enumerate()
        .map(|(v, x)| (g.label(v), x))
        .collect())
}

/// The invariant probability by vertex index.
pub fn invariant_values(env: &Environment) -> Result<Vec<f64>, SolverError> {
    let g = env.graph();
    let n = g.vertex_count();
    if graphs::strongly_connected_components(g, None).len() != 1 {
        return Err(SolverError::NotStronglyConnected);
    }
    // rows of (P^T - I), the last replaced by the normalisation sum(pi) = 1
    let mut a = DMatrix::<f64>::zeros(n, n);
    for v in 0..n {
        for (h, p) in env.row(v) {
            a[(h, v)] += p;
        }
        a[(v, v)] -= 1.0;
    }
    for v in 0..n {
        a[(n - 1, v)] = 1.0;
    }
    let mut b = DVector::<f64>::zeros(n);
    b[n - 1] = 1.0;
    let lu = a.clone().lu();
    let mut pi = lu.solve(&b).ok_or(SolverError::SingularSystem {
        residual: f64::INFINITY,
    })?;
    for _ in 0..3 {
        let r = &b - &a * &pi;
        if r.amax() <= RESIDUAL_TOLERANCE * 1e-2 {
            break;
        }
        if let Some(d) = lu.solve(&r) {
            pi += d;
        }
    }
    let residual = stationarity_residual(env, pi.as_slice());
    if residual > RESIDUAL_TOLERANCE || pi.iter().any(|x| x.is_nan() || *x <= 0.0) {
        return Err(SolverError::SingularSystem { residual });
    }
    Ok(pi.iter().copied().collect())
}

/// `max_y |(pi P)(y) - pi(y)|`.
pub fn stationarity_residual(env: &Environment, pi: &[f64]) -> f64 {
    let g = env.graph();
    let mut flow = vec![0.0; g.vertex_count()];
    for (v, &mass) in pi.iter().enumerate().take(g.vertex_count()) {
        for (h, p) in env.row(v) {
            flow[h] += mass * p;
        }
    }
    flow.iter()
        .zip(pi)
        .fold(0.0, |m, (f, p)| m.max((f - p).abs()))
}

/// The time reversal `omega_check(x, y) = pi(y) omega(y, x) / pi(x)`, living
/// on the edge-reversed graph (with the original weights carried over).
pub fn time_reverse(env: &Environment) -> Result<Environment, SolverError> {
    let pi = invariant_values(env)?;
    let g = env.graph();
    let rev = Arc::new(g.reversed());
    let mut probs = vec![0.0; rev.edge_count()];
    for x in 0..rev.vertex_count() {
        let row = rev.out_edge_ids(x);
        let mut total = 0.0;
        for e in row.clone() {
            let y = rev.head(e);
            let forward = g.find_edge(y, x).expect("reversed edge exists");
            probs[e] = pi[y] * env.prob(forward) / pi[x];
            total += probs[e];
        }
        for e in row {
            probs[e] /= total;
        }
    }
    Environment::from_probs(rev, probs).map_err(|e| SolverError::InvalidProblem(e.to_string()))
}

/// Product of transition probabilities along `path` (labels).
pub fn path_probability(env: &Environment, path: &[i64]) -> f64 {
    path.windows(2)
        .map(|s| env.transition(s[0], s[1]))
        .product()
}

/// Vertices of `env` from which `A ∪ B` is not reachable.
pub fn unreachable_from(env: &Environment, boundary: &BTreeSet<i64>) -> Vec<i64> {
    let g = env.graph();
    let idx: Vec<usize> = boundary.iter().filter_map(|&l| g.index_of(l)).collect();
    let reach = backward_reachable(g, &idx);
    (0..g.vertex_count())
        .filter(|&v| !reach[v])
        .map(|v| g.label(v))
        .collect()
}
