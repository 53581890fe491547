//! Neighborhood systems for N-SAGA / eps-N-SAGA and the per-edge bounds on
//! the error of sharing a gradient along an edge.
//!
//! The graph is directed: `j` is a child of `i` (`j ∈ N_i`) when `i` is one
//! of the `q` parents of `j`. Each point picks itself plus its `q - 1` nearest
//! other points as parents, so every in-degree is exactly `q` and `i ∈ N_i`.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rayon::prelude::*;
use thiserror::Error;

use crate::problem::{LossKind, ProblemInstance};
use crate::vecops::{dist, dist_sq, dot, norm};

#[derive(Debug, Error)]
pub enum NeighborError {
    #[error("q = {q} must satisfy 1 <= q <= n = {n}")]
    BadQ { q: usize, n: usize },
    #[error("label class {label} has {size} members, fewer than q = {q}")]
    ClassTooSmall { label: f64, size: usize, q: usize },
    #[error("({i}, {j}) is not an edge of the neighbor graph")]
    NotAnEdge { i: usize, j: usize },
    #[error("edge ({i}, {j}) joins different labels in a logistic problem")]
    LabelMismatch { i: usize, j: usize },
    #[error("graph file line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("graph file does not match the data: {0}")]
    DataMismatch(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, NeighborError>;

#[derive(Debug, Clone, PartialEq)]
pub struct NeighborGraph {
    q: usize,
    children: Vec<Vec<usize>>,
    child_dist: Vec<Vec<f64>>,
    parents: Vec<Vec<usize>>,
    row_norms: Vec<f64>,
}

impl NeighborGraph {
    /// Builds a graph from explicit `(parent, child)` edges. In-degrees are
    /// not validated here; see [`verify_uniformity`].
    pub fn from_edges(
        instance: &ProblemInstance,
        q: usize,
        edges: &[(usize, usize)],
    ) -> Result<Self> {
        let n = instance.n();
        let mut children = vec![Vec::new(); n];
        for &(i, j) in edges {
            if i >= n || j >= n {
                return Err(NeighborError::NotAnEdge { i, j });
            }
            children[i].push(j);
        }
        for c in &mut children {
            c.sort_unstable();
            c.dedup();
        }
        Ok(Self::assemble(instance, q, children))
    }

    fn assemble(instance: &ProblemInstance, q: usize, children: Vec<Vec<usize>>) -> Self {
        let n = instance.n();
        let mut parents = vec![Vec::new(); n];
        for (i, ch) in children.iter().enumerate() {
            for &j in ch {
                parents[j].push(i);
            }
        }
        let child_dist = children
            .iter()
            .enumerate()
            .map(|(i, ch)| {
                ch.iter()
                    .map(|&j| dist(instance.row(i), instance.row(j)))
                    .collect()
            })
            .collect();
        let row_norms = instance.rows().map(norm).collect();
        Self {
            q,
            children,
            child_dist,
            parents,
            row_norms,
        }
    }

    pub fn n(&self) -> usize {
        self.children.len()
    }

    pub fn q(&self) -> usize {
        self.q
    }

    /// `N_i`, sorted ascending.
    pub fn children(&self, i: usize) -> &[usize] {
        &self.children[i]
    }

    /// `δ_ij` for each child `j` of `i`, aligned with [`children`](Self::children).
    pub fn child_distances(&self, i: usize) -> &[f64] {
        &self.child_dist[i]
    }

    pub fn parents(&self, j: usize) -> &[usize] {
        &self.parents[j]
    }

    pub fn row_norm(&self, j: usize) -> f64 {
        self.row_norms[j]
    }

    pub fn max_out_degree(&self) -> usize {
        self.children.iter().map(Vec::len).max().unwrap_or(0)
    }

    pub fn edge_count(&self) -> usize {
        self.children.iter().map(Vec::len).sum()
    }

    /// Position of `j` in `children(i)`.
    pub fn edge_index(&self, i: usize, j: usize) -> Option<usize> {
        self.children.get(i)?.binary_search(&j).ok()
    }

    pub fn edges(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        self.children
            .iter()
            .zip(&self.child_dist)
            .enumerate()
            .flat_map(|(i, (ch, ds))| ch.iter().zip(ds).map(move |(&j, &d)| (i, j, d)))
    }
}

/// Brute-force kNN parents: each `j` gets itself plus its `q - 1` nearest
/// other points (same label only, for logistic). Distance ties go to the
/// smaller index.
pub fn build_knn_graph(instance: &ProblemInstance, q: usize) -> Result<NeighborGraph> {
    let n = instance.n();
    if q == 0 || q > n {
        return Err(NeighborError::BadQ { q, n });
    }
    let same_label = instance.loss() == LossKind::Logistic;
    if same_label {
        for label in [-1.0, 1.0] {
            let size = instance.labels().iter().filter(|&&y| y == label).count();
            if size > 0 && size < q {
                return Err(NeighborError::ClassTooSmall { label, size, q });
            }
        }
    }

    let parent_lists: Vec<Vec<usize>> = (0..n)
        .into_par_iter()
        .map(|j| {
            let xj = instance.row(j);
            let yj = instance.label(j);
            let mut cand: Vec<(f64, usize)> = (0..n)
                .filter(|&i| i != j && (!same_label || instance.label(i) == yj))
                .map(|i| (dist_sq(instance.row(i), xj), i))
                .collect();
            let k = q - 1;
            let by_key =
                |a: &(f64, usize), b: &(f64, usize)| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1));
            if k > 0 && k < cand.len() {
                cand.select_nth_unstable_by(k - 1, by_key);
                cand.truncate(k);
            }
            cand.sort_unstable_by(by_key);
            let mut p = Vec::with_capacity(q);
            p.push(j);
            p.extend(cand.iter().take(k).map(|&(_, i)| i));
            p
        })
        .collect();

    let mut children = vec![Vec::new(); n];
    for (j, ps) in parent_lists.iter().enumerate() {
        for &i in ps {
            children[i].push(j);
        }
    }
    for c in &mut children {
        c.sort_unstable();
    }
    Ok(NeighborGraph::assemble(instance, q, children))
}

#[derive(Debug, Clone, PartialEq)]
pub struct UniformityReport {
    pub q: usize,
    pub in_degrees: Vec<usize>,
    /// `(node, in_degree)` for every node whose in-degree is not `q`.
    pub failures: Vec<(usize, usize)>,
}

impl UniformityReport {
    pub fn passed(&self) -> bool {
        self.failures.is_empty()
    }
}

pub fn verify_uniformity(graph: &NeighborGraph) -> UniformityReport {
    let in_degrees: Vec<usize> = graph.parents.iter().map(Vec::len).collect();
    let failures = in_degrees
        .iter()
        .enumerate()
        .filter(|(_, &deg)| deg != graph.q)
        .map(|(j, &deg)| (j, deg))
        .collect();
    UniformityReport {
        q: graph.q,
        in_degrees,
        failures,
    }
}

/// Per-edge constants of the sharing-error bounds, aligned with the graph's
/// child lists. Only `||w||` (and for logistic `<x_i, w>`) is needed at
/// query time.
///
/// ridge:    `eps_ij(w) = (δ_ij ||w|| + |y_i - y_j|) ||x_j||`
/// logistic: `eps_ij(w) = (exp(δ_ij ||w||) - 1) / (1 + exp(-|<x_i, w>|)) ||x_j||`
///
/// The logistic denominator uses `|<x_i, w>|`, the worst case over the label
/// sign, so the bound holds for `y = ±1` alike and grows along rays in `w`.
#[derive(Debug, Clone)]
pub struct EpsBoundTable {
    loss: LossKind,
    delta: Vec<Vec<f64>>,
    child_norm: Vec<Vec<f64>>,
    label_gap: Vec<Vec<f64>>,
    children: Vec<Vec<usize>>,
    parent_norm: Vec<f64>,
}

impl EpsBoundTable {
    pub fn new(graph: &NeighborGraph, instance: &ProblemInstance) -> Result<Self> {
        let n = graph.n();
        if n != instance.n() {
            return Err(NeighborError::DataMismatch(format!(
                "graph has {n} nodes, data has {}",
                instance.n()
            )));
        }
        let mut label_gap = Vec::with_capacity(n);
        let mut child_norm = Vec::with_capacity(n);
        for i in 0..n {
            let yi = instance.label(i);
            let mut gaps = Vec::with_capacity(graph.children[i].len());
            for &j in &graph.children[i] {
                let gap = (yi - instance.label(j)).abs();
                if instance.loss() == LossKind::Logistic && gap != 0.0 {
                    return Err(NeighborError::LabelMismatch { i, j });
                }
                gaps.push(gap);
            }
            label_gap.push(gaps);
            child_norm.push(
                graph.children[i]
                    .iter()
                    .map(|&j| graph.row_norms[j])
                    .collect(),
            );
        }
        Ok(Self {
            loss: instance.loss(),
            delta: graph.child_dist.clone(),
            child_norm,
            label_gap,
            children: graph.children.clone(),
            parent_norm: graph.row_norms.clone(),
        })
    }

    pub fn loss(&self) -> LossKind {
        self.loss
    }

    /// Bound for the `k`-th child edge of `i`, given `||w||` and `<x_i, w>`.
    #[inline]
    pub fn edge_bound(&self, i: usize, k: usize, w_norm: f64, margin_i: f64) -> f64 {
        let delta = self.delta[i][k];
        let xj = self.child_norm[i][k];
        match self.loss {
            LossKind::Ridge => (delta * w_norm + self.label_gap[i][k]) * xj,
            LossKind::Logistic => {
                let num = (delta * w_norm).exp_m1();
                num / (1.0 + (-margin_i.abs()).exp()) * xj
            }
        }
    }

    /// `eps_ij(w)` for an edge `j ∈ N_i`; `x_i` is needed for the logistic margin.
    pub fn eps_bound(
        &self,
        instance: &ProblemInstance,
        i: usize,
        j: usize,
        w: &[f64],
    ) -> Result<f64> {
        let k = self
            .children
            .get(i)
            .and_then(|c| c.binary_search(&j).ok())
            .ok_or(NeighborError::NotAnEdge { i, j })?;
        Ok(self.edge_bound(i, k, norm(w), dot(instance.row(i), w)))
    }

    /// Upper bounds `eps_j(r) >= max { eps_ij(w) : j ∈ N_i, ||w|| <= r }`
    /// and their mean `eps(r)`.
    pub fn norm_ball_eps(&self, r: f64) -> (Vec<f64>, f64) {
        let n = self.children.len();
        let mut per_node = vec![0.0f64; n];
        for i in 0..n {
            for (k, &j) in self.children[i].iter().enumerate() {
                // along ||w|| = r the worst margin magnitude is ||x_i|| r
                let b = self.edge_bound(i, k, r, self.parent_norm[i] * r);
                per_node[j] = per_node[j].max(b);
            }
        }
        let mean = per_node.iter().sum::<f64>() / n as f64;
        (per_node, mean)
    }
}

pub fn norm_ball_eps(table: &EpsBoundTable, r: f64) -> (Vec<f64>, f64) {
    table.norm_ball_eps(r)
}

/// Writes the graph as `n q` followed by one `i j delta_ij` line per edge.
pub fn write_graph(graph: &NeighborGraph, path: impl AsRef<Path>) -> Result<()> {
    let mut out = BufWriter::new(File::create(path)?);
    writeln!(out, "{} {}", graph.n(), graph.q)?;
    for (i, j, d) in graph.edges() {
        writeln!(out, "{i} {j} {d}")?;
    }
    out.flush()?;
    Ok(())
}

/// Reads a graph written by [`write_graph`], checking every stored distance
/// against the data.
pub fn read_graph(path: impl AsRef<Path>, instance: &ProblemInstance) -> Result<NeighborGraph> {
    let reader = BufReader::new(File::open(path)?);
    let mut lines = reader.lines().enumerate();
    let (_, header) = lines.next().ok_or(NeighborError::Parse {
        line: 1,
        msg: "missing header".into(),
    })?;
    let header = header?;
    let mut hs = header.split_whitespace();
    let parse_usize = |tok: Option<&str>, line: usize| -> Result<usize> {
        tok.and_then(|t| t.parse().ok())
            .ok_or_else(|| NeighborError::Parse {
                line,
                msg: "expected an unsigned integer".into(),
            })
    };
    let n = parse_usize(hs.next(), 1)?;
    let q = parse_usize(hs.next(), 1)?;
    if n != instance.n() {
        return Err(NeighborError::DataMismatch(format!(
            "file has n = {n}, data has n = {}",
            instance.n()
        )));
    }
    let mut edges = Vec::new();
    let mut stored = Vec::new();
    for (idx, line) in lines {
        let line = line?;
        let lineno = idx + 1;
        if line.trim().is_empty() {
            continue;
        }
        let mut it = line.split_whitespace();
        let i = parse_usize(it.next(), lineno)?;
        let j = parse_usize(it.next(), lineno)?;
        let d: f64 =
            it.next()
                .and_then(|t| t.parse().ok())
                .ok_or_else(|| NeighborError::Parse {
                    line: lineno,
                    msg: "expected a distance".into(),
                })?;
        if i >= n || j >= n {
            return Err(NeighborError::Parse {
                line: lineno,
                msg: format!("node index out of range for n = {n}"),
            });
        }
        edges.push((i, j));
        stored.push((i, j, d));
    }
    let graph = NeighborGraph::from_edges(instance, q, &edges)?;
    for (i, j, d) in stored {
        let recomputed = dist(instance.row(i), instance.row(j));
        if (recomputed - d).abs() > 1e-12 * (1.0 + recomputed) {
            return Err(NeighborError::DataMismatch(format!(
                "edge ({i}, {j}) stores distance {d}, data gives {recomputed}"
            )));
        }
    }
    Ok(graph)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problem::{synthesize_problem, LossModel};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn collinear() -> ProblemInstance {
        let rows: Vec<Vec<f64>> = (0..4).map(|k| vec![k as f64, 0.0]).collect();
        ProblemInstance::from_rows(&rows, vec![0.0; 4], LossKind::Ridge, 0.1).unwrap()
    }

    /// All-pairs oracle: parents of j are j plus the q-1 nearest others by (dist, index).
    fn oracle_parents(inst: &ProblemInstance, q: usize) -> Vec<Vec<usize>> {
        (0..inst.n())
            .map(|j| {
                let mut all: Vec<(f64, usize)> = (0..inst.n())
                    .filter(|&i| i != j)
                    .filter(|&i| inst.loss() == LossKind::Ridge || inst.label(i) == inst.label(j))
                    .map(|i| (dist(inst.row(i), inst.row(j)), i))
                    .collect();
                all.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap().then(a.1.cmp(&b.1)));
                let mut p: Vec<usize> = std::iter::once(j)
                    .chain(all.iter().take(q - 1).map(|p| p.1))
                    .collect();
                p.sort_unstable();
                p
            })
            .collect()
    }

    #[test]
    fn q1_is_self_only() {
        let inst = collinear();
        let g = build_knn_graph(&inst, 1).unwrap();
        for i in 0..4 {
            assert_eq!(g.children(i), &[i]);
        }
    }

    #[test]
    fn collinear_points_tie_break_by_index() {
        let inst = collinear();
        let g = build_knn_graph(&inst, 2).unwrap();
        // node 1 is equidistant from 0 and 2 -> picks 0; node 2 -> picks 1
        let mut parents: Vec<Vec<usize>> = (0..4)
            .map(|j| {
                let mut p = g.parents(j).to_vec();
                p.sort_unstable();
                p
            })
            .collect();
        assert_eq!(
            parents,
            vec![vec![0, 1], vec![0, 1], vec![1, 2], vec![2, 3]]
        );
        assert_eq!(parents, oracle_parents(&inst, 2));
        parents.clear();
        assert!(verify_uniformity(&g).passed());
    }

    #[test]
    fn random_graph_matches_oracle_and_is_uniform() {
        for loss in [LossKind::Ridge, LossKind::Logistic] {
            let (inst, _) = synthesize_problem(200, 3, loss, 0.1, 17, 0.3).unwrap();
            let g = build_knn_graph(&inst, 5).unwrap();
            let report = verify_uniformity(&g);
            assert!(report.passed(), "{:?}", report.failures);
            let oracle = oracle_parents(&inst, 5);
            for (j, want) in oracle.iter().enumerate() {
                let mut p = g.parents(j).to_vec();
                p.sort_unstable();
                assert_eq!(&p, want);
                assert!(g.children(j).contains(&j));
            }
            for (i, j, d) in g.edges() {
                assert!((d - dist(inst.row(i), inst.row(j))).abs() <= 1e-12);
                if loss == LossKind::Logistic {
                    assert_eq!(inst.label(i), inst.label(j));
                }
            }
        }
    }

    #[test]
    fn duplicate_points_still_contain_self() {
        let rows = vec![vec![1.0], vec![1.0], vec![1.0]];
        let inst = ProblemInstance::from_rows(&rows, vec![0.0; 3], LossKind::Ridge, 0.1).unwrap();
        let g = build_knn_graph(&inst, 1).unwrap();
        for i in 0..3 {
            assert_eq!(g.children(i), &[i]);
        }
    }

    #[test]
    fn complete_graph_and_errors() {
        let inst = collinear();
        let g = build_knn_graph(&inst, 4).unwrap();
        assert!(verify_uniformity(&g).passed());
        assert_eq!(g.edge_count(), 16);
        assert!(matches!(
            build_knn_graph(&inst, 5),
            Err(NeighborError::BadQ { .. })
        ));
        assert!(matches!(
            build_knn_graph(&inst, 0),
            Err(NeighborError::BadQ { .. })
        ));
        let rows: Vec<Vec<f64>> = (0..4).map(|k| vec![k as f64]).collect();
        let lg =
            ProblemInstance::from_rows(&rows, vec![1.0, 1.0, 1.0, -1.0], LossKind::Logistic, 0.1)
                .unwrap();
        assert!(matches!(
            build_knn_graph(&lg, 2),
            Err(NeighborError::ClassTooSmall { size: 1, .. })
        ));
    }

    #[test]
    fn corrupted_graph_fails_uniformity() {
        let inst = collinear();
        let g = build_knn_graph(&inst, 2).unwrap();
        let mut edges: Vec<(usize, usize)> = g.edges().map(|(i, j, _)| (i, j)).collect();
        let dropped = edges.remove(3);
        let bad = NeighborGraph::from_edges(&inst, 2, &edges).unwrap();
        let report = verify_uniformity(&bad);
        assert!(!report.passed());
        assert_eq!(report.failures, vec![(dropped.1, 1)]);
    }

    #[test]
    fn ridge_bound_examples() {
        // δ = √2, ||w|| = 2, |Δy| = 1, ||x_j|| = 1  ->  2√2 + 1
        let rows = vec![vec![1.0, 1.0], vec![0.0, 1.0], vec![1.0, 0.0]];
        let inst =
            ProblemInstance::from_rows(&rows, vec![0.0, 5.0, 1.0], LossKind::Ridge, 0.1).unwrap();
        let g = NeighborGraph::from_edges(&inst, 1, &[(1, 2), (0, 0), (1, 1), (2, 2)]).unwrap();
        let t = EpsBoundTable::new(&g, &inst).unwrap();
        let w = [2.0, 0.0];
        let b = t.eps_bound(&inst, 1, 2, &w).unwrap();
        assert!((b - (2.0 * 2f64.sqrt() + 4.0)).abs() < 1e-12);
        let rows = vec![vec![0.0, 1.0], vec![1.0, 0.0]];
        let inst = ProblemInstance::from_rows(&rows, vec![0.0, 1.0], LossKind::Ridge, 0.1).unwrap();
        let g = NeighborGraph::from_edges(&inst, 1, &[(0, 1), (0, 0), (1, 1)]).unwrap();
        let t = EpsBoundTable::new(&g, &inst).unwrap();
        let b = t.eps_bound(&inst, 0, 1, &[0.0, 2.0]).unwrap();
        assert!((b - (2.0 * 2f64.sqrt() + 1.0)).abs() < 1e-12);
        assert!((b - 3.8284).abs() < 1e-4);
        assert_eq!(t.eps_bound(&inst, 0, 0, &[0.0, 2.0]).unwrap(), 0.0);
        assert!(matches!(
            t.eps_bound(&inst, 1, 0, &[0.0, 2.0]),
            Err(NeighborError::NotAnEdge { .. })
        ));
    }

    #[test]
    fn self_edges_are_zero_and_bounds_monotone_along_rays() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for loss in [LossKind::Ridge, LossKind::Logistic] {
            let (inst, _) = synthesize_problem(60, 3, loss, 0.1, 2, 0.2).unwrap();
            let g = build_knn_graph(&inst, 4).unwrap();
            let t = EpsBoundTable::new(&g, &inst).unwrap();
            for _ in 0..50 {
                let v: Vec<f64> = (0..3).map(|_| rng.random_range(-1.0..1.0)).collect();
                let i = rng.random_range(0..inst.n());
                assert!(t.eps_bound(&inst, i, i, &v).unwrap() <= 1e-12);
                for &j in g.children(i) {
                    let mut prev = 0.0;
                    for s in [0.0, 0.5, 1.0, 2.0, 4.0] {
                        let w: Vec<f64> = v.iter().map(|x| x * s).collect();
                        let b = t.eps_bound(&inst, i, j, &w).unwrap();
                        assert!(b >= prev);
                        prev = b;
                    }
                }
            }
        }
    }

    #[test]
    fn shared_write_error_within_bound() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        for loss in [LossKind::Ridge, LossKind::Logistic] {
            let (inst, _) = synthesize_problem(80, 4, loss, 0.1, 3, 0.4).unwrap();
            let m = LossModel::new(inst.clone());
            let g = build_knn_graph(&inst, 6).unwrap();
            let t = EpsBoundTable::new(&g, &inst).unwrap();
            for _ in 0..1000 {
                let w: Vec<f64> = (0..4).map(|_| rng.random_range(-3.0..3.0)).collect();
                let i = rng.random_range(0..inst.n());
                let ch = g.children(i);
                let j = ch[rng.random_range(0..ch.len())];
                let si = m.xi_prime(i, &w);
                let sj = m.xi_prime(j, &w);
                let err = (sj - si).abs() * norm(inst.row(j));
                assert!(err <= t.eps_bound(&inst, i, j, &w).unwrap() + 1e-10);
            }
        }
    }

    #[test]
    fn norm_ball_examples() {
        let (inst, _) = synthesize_problem(40, 3, LossKind::Ridge, 0.1, 8, 0.5).unwrap();
        let g = build_knn_graph(&inst, 3).unwrap();
        let t = EpsBoundTable::new(&g, &inst).unwrap();
        let (per, _) = t.norm_ball_eps(0.0);
        for (j, got) in per.iter().enumerate() {
            let expect = g
                .parents(j)
                .iter()
                .map(|&i| (inst.label(j) - inst.label(i)).abs() * norm(inst.row(j)))
                .fold(0.0, f64::max);
            assert!((got - expect).abs() < 1e-12);
        }
        let g1 = build_knn_graph(&inst, 1).unwrap();
        let t1 = EpsBoundTable::new(&g1, &inst).unwrap();
        assert_eq!(t1.norm_ball_eps(3.0).1, 0.0);
    }

    #[test]
    fn norm_ball_dominates_sampled_bounds() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for loss in [LossKind::Ridge, LossKind::Logistic] {
            let (inst, _) = synthesize_problem(50, 3, loss, 0.1, 4, 0.5).unwrap();
            let g = build_knn_graph(&inst, 4).unwrap();
            let t = EpsBoundTable::new(&g, &inst).unwrap();
            let r = 1.5;
            let (per, mean) = t.norm_ball_eps(r);
            assert!((mean - per.iter().sum::<f64>() / 50.0).abs() < 1e-12);
            for _ in 0..500 {
                let mut w: Vec<f64> = (0..3).map(|_| rng.random_range(-1.0..1.0)).collect();
                let scale = rng.random_range(0.0..r) / norm(&w);
                w.iter_mut().for_each(|x| *x *= scale);
                let i = rng.random_range(0..inst.n());
                for &j in g.children(i) {
                    assert!(t.eps_bound(&inst, i, j, &w).unwrap() <= per[j] + 1e-12);
                }
            }
        }
    }

    #[test]
    fn graph_file_round_trip_and_mismatch() {
        let (inst, _) = synthesize_problem(30, 3, LossKind::Logistic, 0.1, 1, 0.1).unwrap();
        let g = build_knn_graph(&inst, 3).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("g.txt");
        write_graph(&g, &path).unwrap();
        let back = read_graph(&path, &inst).unwrap();
        assert_eq!(back, g);

        let (other, _) = synthesize_problem(30, 3, LossKind::Logistic, 0.1, 2, 0.1).unwrap();
        assert!(matches!(
            read_graph(&path, &other),
            Err(NeighborError::DataMismatch(_))
        ));
        let (small, _) = synthesize_problem(10, 3, LossKind::Logistic, 0.1, 2, 0.1).unwrap();
        assert!(matches!(
            read_graph(&path, &small),
            Err(NeighborError::DataMismatch(_))
        ));
        std::fs::write(&path, "30 3\n0 x 1.0\n").unwrap();
        assert!(matches!(
            read_graph(&path, &inst),
            Err(NeighborError::Parse { line: 2, .. })
        ));
    }

    #[test]
    fn logistic_table_rejects_cross_label_edges() {
        let rows = vec![vec![0.0], vec![1.0]];
        let inst =
            ProblemInstance::from_rows(&rows, vec![1.0, -1.0], LossKind::Logistic, 0.1).unwrap();
        let g = NeighborGraph::from_edges(&inst, 1, &[(0, 0), (0, 1), (1, 1)]).unwrap();
        assert!(matches!(
            EpsBoundTable::new(&g, &inst),
            Err(NeighborError::LabelMismatch { i: 0, j: 1 })
        ));
    }
}
