//! Finite weighted digraphs on integer labels, the builders for the lattice
//! windows and their zero-divergence modifications, and connectivity checks.

use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;

use serde::Serialize;
use thiserror::Error;

use crate::model::DirichletParams;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum GraphError {
    #[error("edge ({tail}, {head}) has non-positive or non-finite weight {weight}")]
    BadWeight { tail: i64, head: i64, weight: f64 },
    #[error("edge ({tail}, {head}) references a vertex outside the vertex set")]
    UnknownVertex { tail: i64, head: i64 },
    #[error("size {size} too small: need more than L + R = {min}")]
    MTooSmall { size: i64, min: i64 },
    #[error("window {size} too small: need more than L + R = {min}")]
    WTooSmall { size: i64, min: i64 },
    #[error("construction needs kappa1 > 0, got {kappa1}")]
    NonpositiveKappa1 { kappa1: f64 },
    #[error("construction needs kappa1 = 0, got {kappa1}")]
    NonzeroKappa1 { kappa1: f64 },
}

/// Directed graph with positive edge weights and at most one edge per ordered
/// pair. Vertices are kept sorted by label; adjacency is stored in compressed
/// rows, so out-edges of a vertex have contiguous edge ids.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightedDigraph {
    labels: Vec<i64>,
    index: HashMap<i64, usize>,
    out_start: Vec<usize>,
    out_head: Vec<usize>,
    out_weight: Vec<f64>,
    in_start: Vec<usize>,
    in_tail: Vec<usize>,
    in_weight: Vec<f64>,
}

impl WeightedDigraph {
    /// Builds a graph, summing the weights of repeated `(tail, head)` pairs.
    pub fn from_edges<V, E>(vertices: V, edges: E) -> Result<Self, GraphError>
    where
        V: IntoIterator<Item = i64>,
        E: IntoIterator<Item = (i64, i64, f64)>,
    {
        let mut labels: Vec<i64> = vertices.into_iter().collect();
        labels.sort_unstable();
        labels.dedup();
        let index: HashMap<i64, usize> = labels.iter().enumerate().map(|(i, &l)| (l, i)).collect();

        let mut merged: BTreeMap<(usize, usize), f64> = BTreeMap::new();
        for (tail, head, weight) in edges {
            if !(weight.is_finite() && weight > 0.0) {
                return Err(GraphError::BadWeight { tail, head, weight });
            }
            let (Some(&t), Some(&h)) = (index.get(&tail), index.get(&head)) else {
                return Err(GraphError::UnknownVertex { tail, head });
            };
            *merged.entry((t, h)).or_insert(0.0) += weight;
        }

        let n = labels.len();
        let mut out_start = vec![0; n + 1];
        let mut in_start = vec![0; n + 1];
        for &(t, h) in merged.keys() {
            out_start[t + 1] += 1;
            in_start[h + 1] += 1;
        }
        for v in 0..n {
            out_start[v + 1] += out_start[v];
            in_start[v + 1] += in_start[v];
        }
        let m = merged.len();
        let mut out_head = Vec::with_capacity(m);
        let mut out_weight = Vec::with_capacity(m);
        for (&(_, h), &w) in &merged {
            out_head.push(h);
            out_weight.push(w);
        }
        let mut in_tail = vec![0; m];
        let mut in_weight = vec![0.0; m];
        let mut fill = in_start.clone();
        for (&(t, h), &w) in &merged {
            in_tail[fill[h]] = t;
            in_weight[fill[h]] = w;
            fill[h] += 1;
        }
        Ok(WeightedDigraph {
            labels,
            index,
            out_start,
            out_head,
            out_weight,
            in_start,
            in_tail,
            in_weight,
        })
    }

    pub fn vertex_count(&self) -> usize {
        self.labels.len()
    }

    pub fn edge_count(&self) -> usize {
        self.out_head.len()
    }

    /// Vertex labels, ascending. Position in this slice is the vertex index.
    pub fn labels(&self) -> &[i64] {
        &self.labels
    }

    pub fn label(&self, v: usize) -> i64 {
        self.labels[v]
    }

    pub fn index_of(&self, label: i64) -> Option<usize> {
        self.index.get(&label).copied()
    }

    pub fn contains(&self, label: i64) -> bool {
        self.index.contains_key(&label)
    }

    /// Edge ids of the out-edges of `v`.
    pub fn out_edge_ids(&self, v: usize) -> std::ops::Range<usize> {
        self.out_start[v]..self.out_start[v + 1]
    }

    /// Head index of edge `e`.
    pub fn head(&self, e: usize) -> usize {
        self.out_head[e]
    }

    /// Weight of edge `e`.
    pub fn edge_weight(&self, e: usize) -> f64 {
        self.out_weight[e]
    }

    /// `(head, weight)` for each out-edge of `v`, heads ascending.
    pub fn out_edges(&self, v: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        self.out_edge_ids(v)
            .map(move |e| (self.out_head[e], self.out_weight[e]))
    }

    /// `(tail, weight)` for each in-edge of `v`, tails ascending.
    pub fn in_edges(&self, v: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        (self.in_start[v]..self.in_start[v + 1]).map(move |k| (self.in_tail[k], self.in_weight[k]))
    }

    pub fn out_degree(&self, v: usize) -> usize {
        self.out_start[v + 1] - self.out_start[v]
    }

    pub fn out_weight(&self, v: usize) -> f64 {
        self.out_edges(v).map(|(_, w)| w).sum()
    }

    pub fn in_weight(&self, v: usize) -> f64 {
        self.in_edges(v).map(|(_, w)| w).sum()
    }

    /// Edge id of `tail -> head` (indices).
    pub fn find_edge(&self, tail: usize, head: usize) -> Option<usize> {
        let range = self.out_edge_ids(tail);
        let heads = &self.out_head[range.clone()];
        heads.binary_search(&head).ok().map(|k| range.start + k)
    }

    /// Weight of the edge between two labels, if present.
    pub fn weight(&self, tail: i64, head: i64) -> Option<f64> {
        let e = self.find_edge(self.index_of(tail)?, self.index_of(head)?)?;
        Some(self.out_weight[e])
    }

    pub fn has_self_loop(&self, v: usize) -> bool {
        self.find_edge(v, v).is_some()
    }

    /// All edges as `(tail label, head label, weight)`, sorted by `(tail, head)`.
    pub fn edges(&self) -> impl Iterator<Item = (i64, i64, f64)> + '_ {
        (0..self.vertex_count()).flat_map(move |v| {
            self.out_edges(v)
                .map(move |(h, w)| (self.labels[v], self.labels[h], w))
        })
    }

    /// Same vertices, every edge reversed, same weights.
    pub fn reversed(&self) -> WeightedDigraph {
        WeightedDigraph::from_edges(
            self.labels.iter().copied(),
            self.edges().map(|(t, h, w)| (h, t, w)),
        )
        .expect("reversal of a valid graph is valid")
    }

    /// Text dump, one `tail head weight` line per edge, sorted by `(tail, head)`.
    pub fn dump(&self) -> String {
        let mut out = String::new();
        for (t, h, w) in self.edges() {
            let _ = writeln!(out, "{t} {h} {w}");
        }
        out
    }
}

/// Incoming minus outgoing weight at each vertex.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DivergenceReport {
    pub divergence: BTreeMap<i64, f64>,
    pub max_abs: f64,
}

impl DivergenceReport {
    pub fn at(&self, label: i64) -> f64 {
        self.divergence.get(&label).copied().unwrap_or(0.0)
    }
}

pub fn divergence_report(g: &WeightedDigraph) -> DivergenceReport {
    let mut divergence = BTreeMap::new();
    let mut max_abs: f64 = 0.0;
    for v in 0..g.vertex_count() {
        let d = g.in_weight(v) - g.out_weight(v);
        max_abs = max_abs.max(d.abs());
        divergence.insert(g.label(v), d);
    }
    DivergenceReport {
        divergence,
        max_abs,
    }
}

/// The lattice graph induced on `[a, b]`.
pub fn build_window(p: &DirichletParams, a: i64, b: i64) -> WeightedDigraph {
    assert!(a <= b, "empty window [{a}, {b}]");
    let support: Vec<(i64, f64)> = p.weights();
    let edges = (a..=b).flat_map(|x| {
        support
            .iter()
            .filter(move |&&(i, _)| (a..=b).contains(&(x + i)))
            .map(move |&(i, w)| (x, x + i, w))
    });
    WeightedDigraph::from_edges(a..=b, edges).expect("window edges are valid")
}

/// Interior edges of the lattice graph for tails in `tails`, with heads clamped to `[lo, hi]`.
fn clamped_interior(
    p: &DirichletParams,
    tails: std::ops::RangeInclusive<i64>,
    lo: i64,
    hi: i64,
) -> Vec<(i64, i64, f64)> {
    let support = p.weights();
    tails
        .flat_map(|x| {
            support
                .iter()
                .map(move |&(i, w)| (x, (x + i).clamp(lo, hi), w))
        })
        .collect()
}

/// Edges from `source` to `source + 1 ..= source + R` replacing the rightward
/// weight the vertices near a left boundary would receive from beyond it.
fn left_compensation(p: &DirichletParams, source: i64) -> Vec<(i64, i64, f64)> {
    (1..=p.right())
        .filter_map(|j| {
            let w: f64 = (j..=p.right()).map(|i| p.alpha(i)).sum();
            (w > 0.0).then_some((source, source + j, w))
        })
        .collect()
}

/// Edges from `source` to `source - L ..= source - 1` replacing the leftward
/// weight the vertices near a right boundary would receive from beyond it.
fn right_compensation(p: &DirichletParams, source: i64) -> Vec<(i64, i64, f64)> {
    (source - p.left()..source)
        .filter_map(|j| {
            let w: f64 = (-p.left()..=j - source).map(|i| p.alpha(i)).sum();
            (w > 0.0).then_some((source, j, w))
        })
        .collect()
}

/// Zero-divergence graph on `[0, M]` for `kappa1 > 0`: interior as in the
/// lattice with heads clamped to the endpoints, compensation edges out of both
/// endpoints, and an edge `M -> 0` of weight `kappa1`.
pub fn build_gm(p: &DirichletParams, m: i64) -> Result<WeightedDigraph, GraphError> {
    let min = p.left() + p.right();
    if m <= min {
        return Err(GraphError::MTooSmall { size: m, min });
    }
    let kappa1 = p.derive().kappa1;
    if kappa1 <= 0.0 {
        return Err(GraphError::NonpositiveKappa1 { kappa1 });
    }
    let mut edges = clamped_interior(p, 1..=m - 1, 0, m);
    edges.extend(left_compensation(p, 0));
    edges.extend(right_compensation(p, m));
    edges.push((m, 0, kappa1));
    WeightedDigraph::from_edges(0..=m, edges)
}

/// Zero-divergence graph on `[-M, M]` for `kappa1 = 0`: clamped interior,
/// compensation edges out of `±M`, and unit edges `0 -> -M`, `-M -> 0`.
pub fn build_hm(p: &DirichletParams, m: i64) -> Result<WeightedDigraph, GraphError> {
    let min = p.left() + p.right();
    if m <= min {
        return Err(GraphError::MTooSmall { size: m, min });
    }
    let d = p.derive();
    if !d.is_recurrent() {
        return Err(GraphError::NonzeroKappa1 { kappa1: d.kappa1 });
    }
    let mut edges = clamped_interior(p, -m + 1..=m - 1, -m, m);
    edges.extend(left_compensation(p, -m));
    edges.extend(right_compensation(p, m));
    edges.push((0, -m, 1.0));
    edges.push((-m, 0, 1.0));
    WeightedDigraph::from_edges(-m..=m, edges)
}

/// Half-line graph truncated at `W`. Site 0 has only the left compensation
/// edges; sites `1..W` are lattice sites with heads clamped into `[0, W]`;
/// `W` carries the right compensation edges but no edge back to 0. The
/// divergence is `-kappa1` at 0, `+kappa1` at `W` and zero elsewhere.
pub fn build_gplus(p: &DirichletParams, w: i64) -> Result<WeightedDigraph, GraphError> {
    let min = p.left() + p.right();
    if w <= min {
        return Err(GraphError::WTooSmall { size: w, min });
    }
    let mut edges = clamped_interior(p, 1..=w - 1, 0, w);
    edges.extend(left_compensation(p, 0));
    edges.extend(right_compensation(p, w));
    WeightedDigraph::from_edges(0..=w, edges)
}

/// Strongly connected components of the subgraph induced by `member`
/// (all vertices when `None`), by an iterative stack-based Tarjan pass.
/// Components are returned in reverse topological order.
pub fn strongly_connected_components(
    g: &WeightedDigraph,
    member: Option<&[bool]>,
) -> Vec<Vec<usize>> {
    let n = g.vertex_count();
    let inside = |v: usize| member.is_none_or(|m| m[v]);
    const UNSEEN: usize = usize::MAX;
    let mut order = vec![UNSEEN; n];
    let mut low = vec![0usize; n];
    let mut on_stack = vec![false; n];
    let mut stack = Vec::new();
    let mut components = Vec::new();
    let mut counter = 0;
    // (vertex, next out-edge id)
    let mut call: Vec<(usize, usize)> = Vec::new();

    for root in 0..n {
        if !inside(root) || order[root] != UNSEEN {
            continue;
        }
        call.push((root, g.out_edge_ids(root).start));
        order[root] = counter;
        low[root] = counter;
        counter += 1;
        stack.push(root);
        on_stack[root] = true;

        while let Some(&mut (v, ref mut next)) = call.last_mut() {
            let end = g.out_edge_ids(v).end;
            let mut descended = false;
            while *next < end {
                let w = g.head(*next);
                *next += 1;
                if !inside(w) {
                    continue;
                }
                if order[w] == UNSEEN {
                    order[w] = counter;
                    low[w] = counter;
                    counter += 1;
                    stack.push(w);
                    on_stack[w] = true;
                    call.push((w, g.out_edge_ids(w).start));
                    descended = true;
                    break;
                } else if on_stack[w] {
                    low[v] = low[v].min(order[w]);
                }
            }
            if descended {
                continue;
            }
            call.pop();
            if let Some(&(parent, _)) = call.last() {
                low[parent] = low[parent].min(low[v]);
            }
            if low[v] == order[v] {
                let mut comp = Vec::new();
                loop {
                    let w = stack.pop().expect("tarjan stack underflow");
                    on_stack[w] = false;
                    comp.push(w);
                    if w == v {
                        break;
                    }
                }
                comp.sort_unstable();
                components.push(comp);
            }
        }
    }
    components
}

fn membership(g: &WeightedDigraph, set: &[i64]) -> Option<Vec<bool>> {
    let mut member = vec![false; g.vertex_count()];
    for &label in set {
        member[g.index_of(label)?] = true;
    }
    Some(member)
}

/// Every ordered pair of distinct vertices of `set` is joined by a path inside
/// `set`. Singletons pass vacuously.
pub fn mutually_reachable(g: &WeightedDigraph, set: &[i64]) -> bool {
    let Some(member) = membership(g, set) else {
        return false;
    };
    let count = member.iter().filter(|&&m| m).count();
    match count {
        0 => false,
        1 => true,
        _ => strongly_connected_components(g, Some(&member)).len() == 1,
    }
}

/// Strong connectivity of an admissible trap set: for two or more vertices,
/// every ordered pair of distinct vertices communicates inside `set`; a
/// singleton needs a self-loop.
pub fn strongly_connected(g: &WeightedDigraph, set: &[i64]) -> bool {
    let Some(member) = membership(g, set) else {
        return false;
    };
    let present: Vec<usize> = (0..member.len()).filter(|&v| member[v]).collect();
    match present.as_slice() {
        [] => false,
        [v] => g.has_self_loop(*v),
        _ => strongly_connected_components(g, Some(&member)).len() == 1,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn nn(a: f64, b: f64) -> DirichletParams {
        DirichletParams::nearest_neighbor(a, b).unwrap()
    }

    #[test]
    fn window_transcription() {
        let g = build_window(&nn(1.0, 2.0), 0, 2);
        let edges: Vec<_> = g.edges().collect();
        assert_eq!(
            edges,
            vec![(0, 1, 2.0), (1, 0, 1.0), (1, 2, 2.0), (2, 1, 1.0)]
        );
        assert_eq!(g.dump(), "0 1 2\n1 0 1\n1 2 2\n2 1 1\n");
    }

    #[test]
    fn singleton_window_with_self_loop() {
        let p = DirichletParams::new(1, 1, [(-1, 1.0), (0, 0.5), (1, 1.0)]).unwrap();
        let g = build_window(&p, 0, 0);
        assert_eq!(g.edges().collect::<Vec<_>>(), vec![(0, 0, 0.5)]);
        assert!(strongly_connected(&g, &[0]));
    }

    #[test]
    fn window_translation_invariance() {
        let p = DirichletParams::new(2, 3, [(-2, 0.4), (1, 0.3), (3, 0.2)]).unwrap();
        let a: Vec<_> = build_window(&p, 0, 9).edges().collect();
        let b: Vec<_> = build_window(&p, 7, 16)
            .edges()
            .map(|(t, h, w)| (t - 7, h - 7, w))
            .collect();
        assert_eq!(a, b);
    }

    #[test]
    fn parallel_edges_merge() {
        let g = WeightedDigraph::from_edges(0..2, [(0, 1, 1.0), (0, 1, 0.5), (1, 0, 2.0)]).unwrap();
        assert_eq!(g.edge_count(), 2);
        assert_eq!(g.weight(0, 1), Some(1.5));
        assert!(matches!(
            WeightedDigraph::from_edges(0..2, [(0, 1, 0.0)]),
            Err(GraphError::BadWeight { .. })
        ));
        assert!(matches!(
            WeightedDigraph::from_edges(0..2, [(0, 5, 1.0)]),
            Err(GraphError::UnknownVertex { .. })
        ));
    }

    #[test]
    fn gm_nearest_neighbor_m3() {
        let g = build_gm(&nn(1.0, 2.0), 3).unwrap();
        assert_eq!(g.weight(3, 0), Some(1.0));
        assert_eq!(g.weight(0, 1), Some(2.0));
        assert_eq!(g.weight(3, 2), Some(1.0));
        assert_eq!(g.weight(2, 3), Some(2.0));
        assert_eq!(g.weight(1, 0), Some(1.0));
        assert!(divergence_report(&g).max_abs <= 1e-12);
    }

    #[test]
    fn gm_rejects_bad_input() {
        let p = nn(1.0, 2.0);
        assert!(matches!(build_gm(&p, 2), Err(GraphError::MTooSmall { .. })));
        assert!(matches!(
            build_gm(&nn(2.0, 1.0), 5),
            Err(GraphError::NonpositiveKappa1 { .. })
        ));
    }

    #[test]
    fn hm_symmetric_nearest_neighbor() {
        let g = build_hm(&nn(1.0, 1.0), 3).unwrap();
        assert_eq!(g.vertex_count(), 7);
        let report = divergence_report(&g);
        assert!(report.max_abs <= 1e-12, "{report:?}");
        assert_eq!(g.weight(0, -3), Some(1.0));
        assert_eq!(g.weight(-3, 0), Some(1.0));
        assert!(matches!(
            build_hm(&nn(1.0, 1.5), 5),
            Err(GraphError::NonzeroKappa1 { .. })
        ));
    }

    #[test]
    fn gplus_nearest_neighbor() {
        let p = nn(1.0, 2.0);
        let g = build_gplus(&p, 10).unwrap();
        assert_eq!(g.weight(1, 0), Some(1.0));
        assert_eq!(g.weight(0, 1), Some(2.0));
        let report = divergence_report(&g);
        // net flow kappa1 leaves 0 and arrives at W
        assert_eq!(report.at(0), -1.0);
        assert_eq!(report.at(10), 1.0);
        for x in 1..10 {
            assert_eq!(report.at(x), 0.0, "vertex {x}");
        }
        assert!(matches!(
            build_gplus(&p, 2),
            Err(GraphError::WTooSmall { .. })
        ));
    }

    #[test]
    fn gplus_general_divergence() {
        let p = DirichletParams::new(3, 2, [(-3, 0.3), (-1, 0.2), (0, 0.4), (1, 0.5), (2, 0.7)])
            .unwrap();
        let d = p.derive();
        let w = 20;
        let g = build_gplus(&p, w).unwrap();
        let report = divergence_report(&g);
        assert!((report.at(0) + d.kappa1).abs() < 1e-12);
        assert!((report.at(w) - d.kappa1).abs() < 1e-12);
        for x in 1..w {
            assert!(report.at(x).abs() < 1e-12, "vertex {x}: {}", report.at(x));
        }
        // edge i -> 0 carries all the weight of jumps landing at or below 0
        assert!((g.weight(1, 0).unwrap() - 0.5).abs() < 1e-15);
        assert!((g.weight(2, 0).unwrap() - 0.3).abs() < 1e-15);
        assert!((g.weight(3, 0).unwrap() - 0.3).abs() < 1e-15);
    }

    #[test]
    fn connectivity_examples() {
        let g = build_window(&nn(1.0, 2.0), -3, 3);
        assert!(strongly_connected(&g, &[0, 1]));
        assert!(!strongly_connected(&g, &[0]));
        assert!(mutually_reachable(&g, &[0]));
        let p = DirichletParams::new(1, 2, [(-1, 1.0), (2, 1.0)]).unwrap();
        let g = build_window(&p, -2, 6);
        assert!(!strongly_connected(&g, &[0, 2]));
        assert!(strongly_connected(&g, &[0, 1, 2]));
    }

    #[test]
    fn divergence_single_edge_and_overlay() {
        let g = WeightedDigraph::from_edges([3, 8], [(3, 8, 2.5)]).unwrap();
        let r = divergence_report(&g);
        assert_eq!(r.at(3), -2.5);
        assert_eq!(r.at(8), 2.5);
        let p = DirichletParams::new(2, 1, [(-2, 0.3), (1, 0.9)]).unwrap();
        let w = build_window(&p, 0, 8);
        let both =
            WeightedDigraph::from_edges(0..=8, w.edges().chain(w.reversed().edges())).unwrap();
        assert!(divergence_report(&both).max_abs < 1e-12);
    }

    #[test]
    fn tarjan_components() {
        // 0 <-> 1 -> 2 <-> 3, 4 isolated
        let g = WeightedDigraph::from_edges(
            0..5,
            [
                (0, 1, 1.0),
                (1, 0, 1.0),
                (1, 2, 1.0),
                (2, 3, 1.0),
                (3, 2, 1.0),
            ],
        )
        .unwrap();
        let mut comps = strongly_connected_components(&g, None);
        comps.sort();
        assert_eq!(comps, vec![vec![0, 1], vec![2, 3], vec![4]]);
    }
}
