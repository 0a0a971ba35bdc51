//! Vertex cutsets between actuation and measurement vertices, block views
//! of the Laplacian under the resulting partition, grounded-block spectra
//! and induced subgraphs.

use std::collections::VecDeque;

use nalgebra::DMatrix;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::netmodel::{Edge, NetworkGraph};
use crate::spectral::{self, Tolerances};

/// Partition `v1 | vcut | v2` with `v2 = v3 ∪ v4` (accessible / inaccessible).
/// All ids are 0-based and sorted.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CutPartition {
    pub v1: Vec<usize>,
    pub vcut: Vec<usize>,
    pub v2: Vec<usize>,
    pub v3: Vec<usize>,
    pub v4: Vec<usize>,
}

impl CutPartition {
    /// Builds the partition, splitting `v2` by accessibility.
    pub fn new(v1: Vec<usize>, vcut: Vec<usize>, v2: Vec<usize>, accessible: Option<&[usize]>) -> Self {
        let (v3, v4) = match accessible {
            Some(acc) => v2.iter().partition(|v| acc.contains(v)),
            None => (v2.clone(), Vec::new()),
        };
        CutPartition { v1, vcut, v2, v3, v4 }
    }

    pub fn n(&self) -> usize {
        self.v1.len() + self.vcut.len() + self.v2.len()
    }

    /// Vertex ordering `v1, vcut, v3, v4`.
    pub fn ordering(&self) -> Vec<usize> {
        let mut out = self.v1.clone();
        out.extend(&self.vcut);
        out.extend(&self.v3);
        out.extend(&self.v4);
        out
    }

    fn check(&self, n: usize) -> Result<()> {
        let mut seen = vec![false; n];
        for &v in self.v1.iter().chain(&self.vcut).chain(&self.v2) {
            if v >= n || seen[v] {
                return Err(Error::Validation {
                    path: "cut".into(),
                    msg: format!("vertex {} is out of range or listed twice", v + 1),
                });
            }
            seen[v] = true;
        }
        if let Some(v) = seen.iter().position(|s| !s) {
            return Err(Error::Validation {
                path: "cut".into(),
                msg: format!("vertex {} belongs to no part", v + 1),
            });
        }
        let mut v2 = self.v3.clone();
        v2.extend(&self.v4);
        v2.sort_unstable();
        if v2 != self.v2 {
            return Err(Error::Validation {
                path: "cut".into(),
                msg: "v3 and v4 must split v2".into(),
            });
        }
        Ok(())
    }
}

/// Named parts of a [`CutPartition`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Part {
    V1,
    Cut,
    V2,
    V3,
    V4,
}

struct FlowNet {
    head: Vec<usize>,
    cap: Vec<i64>,
    adj: Vec<Vec<usize>>,
}

impl FlowNet {
    fn new(nodes: usize) -> Self {
        FlowNet {
            head: Vec::new(),
            cap: Vec::new(),
            adj: vec![Vec::new(); nodes],
        }
    }

    fn arc(&mut self, from: usize, to: usize, cap: i64) {
        self.adj[from].push(self.head.len());
        self.head.push(to);
        self.cap.push(cap);
        self.adj[to].push(self.head.len());
        self.head.push(from);
        self.cap.push(0);
    }

    /// Edmonds-Karp; capacities are left as residuals.
    fn max_flow(&mut self, s: usize, t: usize) -> i64 {
        let mut total = 0;
        loop {
            let mut via = vec![usize::MAX; self.adj.len()];
            let mut queue = VecDeque::from([s]);
            let mut found = false;
            while let Some(u) = queue.pop_front() {
                if u == t {
                    found = true;
                    break;
                }
                for &e in &self.adj[u] {
                    let w = self.head[e];
                    if self.cap[e] > 0 && w != s && via[w] == usize::MAX {
                        via[w] = e;
                        queue.push_back(w);
                    }
                }
            }
            if !found {
                return total;
            }
            let mut push = i64::MAX;
            let mut w = t;
            while w != s {
                let e = via[w];
                push = push.min(self.cap[e]);
                w = self.head[e ^ 1];
            }
            let mut w = t;
            while w != s {
                let e = via[w];
                self.cap[e] -= push;
                self.cap[e ^ 1] += push;
                w = self.head[e ^ 1];
            }
            total += push;
        }
    }

    /// Nodes that can still reach `t` in the residual graph.
    fn reaches(&self, t: usize) -> Vec<bool> {
        let mut seen = vec![false; self.adj.len()];
        seen[t] = true;
        let mut queue = VecDeque::from([t]);
        while let Some(w) = queue.pop_front() {
            for &e in &self.adj[w] {
                // e runs w -> u; the paired arc e^1 runs u -> w
                let u = self.head[e];
                if !seen[u] && self.cap[e ^ 1] > 0 {
                    seen[u] = true;
                    queue.push_back(u);
                }
            }
        }
        seen
    }
}

/// Minimum vertex cut separating `sources` from `sinks`.
///
/// Separation is required in both edge directions so that no edge joins
/// `v1` and `v2`. Sources and sinks may themselves be cut, but among cuts
/// of minimum cardinality those using fewer of them are preferred; the
/// remaining ties go to the cut closest to the sinks, which keeps `v1` as
/// large as possible.
pub fn min_vertex_cut(graph: &NetworkGraph, sources: &[usize], sinks: &[usize]) -> CutPartition {
    min_vertex_cut_within(graph, sources, sinks, None)
}

/// As [`min_vertex_cut`], with the cut confined to `accessible` vertices
/// and every inaccessible vertex forced onto the sink side.
pub fn min_vertex_cut_within(
    graph: &NetworkGraph,
    sources: &[usize],
    sinks: &[usize],
    accessible: Option<&[usize]>,
) -> CutPartition {
    let n = graph.n();
    // Each cut vertex costs `unit`, plus one if it is a source or a sink;
    // `unit > n` keeps cardinality the primary criterion.
    let unit = n as i64 + 1;
    let inf = n as i64 * (unit + 1) + 1;
    let (s, t) = (2 * n, 2 * n + 1);
    let mut net = FlowNet::new(2 * n + 2);
    let is_acc = |v: usize| accessible.is_none_or(|acc| acc.contains(&v));
    for v in 0..n {
        let cap = if !is_acc(v) {
            inf
        } else if sources.contains(&v) || sinks.contains(&v) {
            unit + 1
        } else {
            unit
        };
        net.arc(2 * v, 2 * v + 1, cap);
        if !is_acc(v) {
            net.arc(2 * v + 1, t, inf);
        }
    }
    for e in graph.edges() {
        net.arc(2 * e.from + 1, 2 * e.to, inf);
        net.arc(2 * e.to + 1, 2 * e.from, inf);
    }
    for &r in sources {
        net.arc(s, 2 * r, inf);
    }
    for &m in sinks {
        net.arc(2 * m + 1, t, inf);
    }
    net.max_flow(s, t);
    let sink_side = net.reaches(t);

    let (mut v1, mut vcut, mut v2) = (Vec::new(), Vec::new(), Vec::new());
    for v in 0..n {
        match (sink_side[2 * v], sink_side[2 * v + 1]) {
            (true, _) => v2.push(v),
            (false, true) => vcut.push(v),
            (false, false) => v1.push(v),
        }
    }
    CutPartition::new(v1, vcut, v2, accessible)
}

/// True when no path avoiding `removed` joins a source to a sink. With
/// `undirected`, edges are followed both ways.
pub fn separates(
    graph: &NetworkGraph,
    removed: &[usize],
    sources: &[usize],
    sinks: &[usize],
    undirected: bool,
) -> bool {
    let n = graph.n();
    let mut adj = vec![Vec::new(); n];
    for e in graph.edges() {
        adj[e.from].push(e.to);
        if undirected {
            adj[e.to].push(e.from);
        }
    }
    let mut seen = vec![false; n];
    let mut queue = VecDeque::new();
    for &r in sources {
        if !removed.contains(&r) && !seen[r] {
            seen[r] = true;
            queue.push_back(r);
        }
    }
    while let Some(u) = queue.pop_front() {
        for &w in &adj[u] {
            if !removed.contains(&w) && !seen[w] {
                seen[w] = true;
                queue.push_back(w);
            }
        }
    }
    sinks.iter().all(|&m| removed.contains(&m) || !seen[m])
}

/// Laplacian together with a cut partition and its block views.
#[derive(Debug, Clone)]
pub struct BlockedLaplacian {
    pub l: DMatrix<f64>,
    pub cut: CutPartition,
}

impl BlockedLaplacian {
    pub fn indices(&self, part: Part) -> &[usize] {
        match part {
            Part::V1 => &self.cut.v1,
            Part::Cut => &self.cut.vcut,
            Part::V2 => &self.cut.v2,
            Part::V3 => &self.cut.v3,
            Part::V4 => &self.cut.v4,
        }
    }

    pub fn block(&self, rows: Part, cols: Part) -> DMatrix<f64> {
        submatrix(&self.l, self.indices(rows), self.indices(cols))
    }

    /// Vertex ordering `v1, vcut, v3, v4`.
    pub fn permutation(&self) -> Vec<usize> {
        self.cut.ordering()
    }

    /// `L` with rows and columns in [`Self::permutation`] order.
    pub fn permuted(&self) -> DMatrix<f64> {
        let order = self.permutation();
        submatrix(&self.l, &order, &order)
    }

    /// Undoes [`Self::permuted`].
    pub fn reassemble(&self, permuted: &DMatrix<f64>) -> DMatrix<f64> {
        let order = self.permutation();
        let n = order.len();
        let mut out = DMatrix::zeros(n, n);
        for (i, &r) in order.iter().enumerate() {
            for (j, &c) in order.iter().enumerate() {
                out[(r, c)] = permuted[(i, j)];
            }
        }
        out
    }

    /// Accessible vertices in order `v1, vcut, v3`.
    pub fn region(&self) -> Vec<usize> {
        let mut out = self.cut.v1.clone();
        out.extend(&self.cut.vcut);
        out.extend(&self.cut.v3);
        out
    }

    /// Coupling from the inaccessible remainder into the region.
    pub fn l_reg_rem(&self) -> DMatrix<f64> {
        submatrix(&self.l, &self.region(), &self.cut.v4)
    }

    pub fn l_rem_reg(&self) -> DMatrix<f64> {
        submatrix(&self.l, &self.cut.v4, &self.region())
    }

    /// Grounded block of the inaccessible remainder.
    pub fn l_rem(&self) -> DMatrix<f64> {
        self.block(Part::V4, Part::V4)
    }

    /// Diagonal matrix (over `vcut ∪ v3`) of weights entering from `v4`:
    /// the amount by which the full-graph degree exceeds the degree in the
    /// accessible subgraph.
    pub fn p1(&self) -> DMatrix<f64> {
        let rows: Vec<usize> = self.cut.vcut.iter().chain(&self.cut.v3).copied().collect();
        let mut out = DMatrix::zeros(rows.len(), rows.len());
        for (i, &k) in rows.iter().enumerate() {
            out[(i, i)] = -self.cut.v4.iter().map(|&j| self.l[(k, j)]).sum::<f64>();
        }
        out
    }
}

pub(crate) fn submatrix(m: &DMatrix<f64>, rows: &[usize], cols: &[usize]) -> DMatrix<f64> {
    DMatrix::from_fn(rows.len(), cols.len(), |i, j| m[(rows[i], cols[j])])
}

/// Block views of `l` under `cut`, after checking that no edge joins `v1`
/// and `v2`.
pub fn partition_blocks(l: &DMatrix<f64>, cut: &CutPartition) -> Result<BlockedLaplacian> {
    if !l.is_square() || l.nrows() != cut.n() {
        return Err(Error::DimensionMismatch(format!(
            "{}x{} Laplacian for a partition of {} vertices",
            l.nrows(),
            l.ncols(),
            cut.n()
        )));
    }
    cut.check(l.nrows())?;
    for &a in &cut.v1 {
        for &b in &cut.v2 {
            if l[(b, a)] != 0.0 {
                return Err(Error::NotACut { from: a + 1, to: b + 1 });
            }
            if l[(a, b)] != 0.0 {
                return Err(Error::NotACut { from: b + 1, to: a + 1 });
            }
        }
    }
    Ok(BlockedLaplacian {
        l: l.clone(),
        cut: cut.clone(),
    })
}

/// True iff `lambda` stays farther than the distinctness gap from every
/// eigenvalue of `block`.
pub fn grounded_spectrum_gap(block: &DMatrix<f64>, lambda: Complex64, tol: &Tolerances) -> Result<bool> {
    if block.nrows() == 0 {
        return Ok(true);
    }
    let gap = tol.distinct_gap(block.norm());
    Ok(spectral::eigenvalues(block)?
        .iter()
        .all(|mu| (mu - lambda).norm() > gap))
}

/// Subgraph on `keep` with vertices renumbered in ascending order. The
/// second value maps each new id to its original id.
pub fn induced_subgraph(graph: &NetworkGraph, keep: &[usize]) -> Result<(NetworkGraph, Vec<usize>)> {
    let mut ids: Vec<usize> = keep.to_vec();
    ids.sort_unstable();
    ids.dedup();
    if ids.is_empty() {
        return Err(Error::EmptyKeep);
    }
    if let Some(&v) = ids.iter().find(|&&v| v >= graph.n()) {
        return Err(Error::Validation {
            path: "keep".into(),
            msg: format!("vertex {} out of range", v + 1),
        });
    }
    let mut new_id = vec![usize::MAX; graph.n()];
    for (i, &v) in ids.iter().enumerate() {
        new_id[v] = i;
    }
    let edges = graph
        .edges()
        .iter()
        .filter(|e| new_id[e.from] != usize::MAX && new_id[e.to] != usize::MAX)
        .map(|e| Edge {
            from: new_id[e.from],
            to: new_id[e.to],
            w: e.w,
        })
        .collect();
    Ok((NetworkGraph::new(ids.len(), edges)?, ids))
}
