//! Weighted digraphs, their Laplacians, indicator input/output matrices,
//! the network JSON format and closed-loop simulation.
//!
//! Vertex ids are 0-based in memory and 1-based in every file and report.

use std::collections::{BTreeSet, VecDeque};
use std::fmt::Write as _;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fmt_g;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Edge {
    pub from: usize,
    pub to: usize,
    pub w: f64,
}

/// Weighted digraph on vertices `0..n`. An edge `from -> to` with weight
/// `w` puts `-w` at `L[to][from]`.
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkGraph {
    n: usize,
    edges: Vec<Edge>,
}

impl NetworkGraph {
    pub fn new(n: usize, edges: Vec<Edge>) -> Result<Self> {
        if n == 0 {
            return Err(Error::Validation {
                path: "n".into(),
                msg: "graph needs at least one vertex".into(),
            });
        }
        let mut seen = BTreeSet::new();
        for (i, e) in edges.iter().enumerate() {
            if e.from >= n || e.to >= n {
                return Err(Error::Validation {
                    path: format!("edges[{i}]"),
                    msg: format!("vertex id out of range 1..={n}"),
                });
            }
            if e.from == e.to {
                return Err(Error::Validation {
                    path: format!("edges[{i}]"),
                    msg: format!("self-loop at vertex {}", e.from + 1),
                });
            }
            if !(e.w > 0.0 && e.w.is_finite()) {
                return Err(Error::InvalidWeight {
                    from: e.from + 1,
                    to: e.to + 1,
                    w: e.w,
                });
            }
            if !seen.insert((e.from, e.to)) {
                return Err(Error::Validation {
                    path: format!("edges[{i}]"),
                    msg: format!("duplicate edge {}->{}", e.from + 1, e.to + 1),
                });
            }
        }
        Ok(NetworkGraph { n, edges })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    /// Laplacian without any connectivity check.
    pub fn laplacian(&self) -> DMatrix<f64> {
        let mut l = DMatrix::zeros(self.n, self.n);
        for e in &self.edges {
            l[(e.to, e.from)] -= e.w;
            l[(e.to, e.to)] += e.w;
        }
        l
    }

    pub fn out_neighbors(&self) -> Vec<Vec<usize>> {
        let mut adj = vec![Vec::new(); self.n];
        for e in &self.edges {
            adj[e.from].push(e.to);
        }
        adj
    }

    pub fn in_neighbors(&self) -> Vec<Vec<usize>> {
        let mut adj = vec![Vec::new(); self.n];
        for e in &self.edges {
            adj[e.to].push(e.from);
        }
        adj
    }

    /// Checks reachability from vertex 0 in the graph and in its reverse.
    pub fn check_strongly_connected(&self) -> Result<()> {
        let forward = reach(&self.out_neighbors(), 0);
        if let Some(v) = forward.iter().position(|r| !r) {
            return Err(Error::NotStronglyConnected {
                vertex: v + 1,
                direction: "from vertex 1",
            });
        }
        let backward = reach(&self.in_neighbors(), 0);
        if let Some(v) = backward.iter().position(|r| !r) {
            return Err(Error::NotStronglyConnected {
                vertex: v + 1,
                direction: "to vertex 1",
            });
        }
        Ok(())
    }

    pub fn is_strongly_connected(&self) -> bool {
        self.check_strongly_connected().is_ok()
    }
}

fn reach(adj: &[Vec<usize>], start: usize) -> Vec<bool> {
    let mut seen = vec![false; adj.len()];
    let mut queue = VecDeque::from([start]);
    seen[start] = true;
    while let Some(u) = queue.pop_front() {
        for &v in &adj[u] {
            if !seen[v] {
                seen[v] = true;
                queue.push_back(v);
            }
        }
    }
    seen
}

/// Graph plus actuation, measurement and (optionally) accessible vertices.
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkModel {
    pub graph: NetworkGraph,
    pub actuation: Vec<usize>,
    pub measurement: Vec<usize>,
    pub accessible: Option<Vec<usize>>,
}

impl NetworkModel {
    pub fn new(
        graph: NetworkGraph,
        actuation: Vec<usize>,
        measurement: Vec<usize>,
        accessible: Option<Vec<usize>>,
    ) -> Result<Self> {
        let n = graph.n();
        check_id_list("actuation", &actuation, n, true)?;
        check_id_list("measurement", &measurement, n, true)?;
        if let Some(acc) = &accessible {
            check_id_list("accessible", acc, n, false)?;
            for (i, r) in actuation.iter().enumerate() {
                if !acc.contains(r) {
                    return Err(Error::Validation {
                        path: format!("actuation[{i}]"),
                        msg: format!("actuation vertex {} is not accessible", r + 1),
                    });
                }
            }
        }
        graph.check_strongly_connected()?;
        Ok(NetworkModel {
            graph,
            actuation,
            measurement,
            accessible,
        })
    }

    pub fn n(&self) -> usize {
        self.graph.n()
    }

    pub fn is_accessible(&self, v: usize) -> bool {
        self.accessible.as_ref().is_none_or(|a| a.contains(&v))
    }
}

fn check_id_list(name: &str, ids: &[usize], n: usize, nonempty: bool) -> Result<()> {
    if nonempty && ids.is_empty() {
        return Err(Error::Validation {
            path: name.into(),
            msg: "must list at least one vertex".into(),
        });
    }
    let mut seen = BTreeSet::new();
    for (i, &v) in ids.iter().enumerate() {
        if v >= n {
            return Err(Error::Validation {
                path: format!("{name}[{i}]"),
                msg: format!("vertex id {} out of range 1..={n}", v + 1),
            });
        }
        if !seen.insert(v) {
            return Err(Error::Validation {
                path: format!("{name}[{i}]"),
                msg: format!("duplicate vertex {}", v + 1),
            });
        }
    }
    Ok(())
}

/// `L`, `B` and `C` of `x' = -L x + B u`, `y = C x`.
#[derive(Debug, Clone, PartialEq)]
pub struct SystemMatrices {
    pub l: DMatrix<f64>,
    pub b: DMatrix<f64>,
    pub c: DMatrix<f64>,
}

impl SystemMatrices {
    /// Arbitrary state matrix with indicator input/output matrices.
    pub fn from_indices(l: DMatrix<f64>, actuation: &[usize], measurement: &[usize]) -> Self {
        let n = l.nrows();
        SystemMatrices {
            b: indicator_columns(n, actuation),
            c: indicator_columns(n, measurement).transpose(),
            l,
        }
    }

    pub fn n(&self) -> usize {
        self.l.nrows()
    }

    pub fn q(&self) -> usize {
        self.b.ncols()
    }

    pub fn m(&self) -> usize {
        self.c.nrows()
    }

    pub fn check_dims(&self) -> Result<()> {
        let n = self.l.nrows();
        if !self.l.is_square() || self.b.nrows() != n || self.c.ncols() != n {
            return Err(Error::DimensionMismatch(format!(
                "L {}x{}, B {}x{}, C {}x{}",
                self.l.nrows(),
                self.l.ncols(),
                self.b.nrows(),
                self.b.ncols(),
                self.c.nrows(),
                self.c.ncols()
            )));
        }
        Ok(())
    }

    /// `L + B F`.
    pub fn closed_loop(&self, f: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        if f.shape() != (self.q(), self.n()) {
            return Err(Error::DimensionMismatch(format!(
                "F is {}x{}, expected {}x{}",
                f.nrows(),
                f.ncols(),
                self.q(),
                self.n()
            )));
        }
        Ok(&self.l + &self.b * f)
    }

    pub fn with_state_matrix(&self, l: DMatrix<f64>) -> Self {
        SystemMatrices {
            l,
            b: self.b.clone(),
            c: self.c.clone(),
        }
    }

    pub fn with_output(&self, c: DMatrix<f64>) -> Self {
        SystemMatrices {
            l: self.l.clone(),
            b: self.b.clone(),
            c,
        }
    }
}

/// `[e_{ids[0]} e_{ids[1]} ...]`, an n x len matrix.
pub fn indicator_columns(n: usize, ids: &[usize]) -> DMatrix<f64> {
    let mut m = DMatrix::zeros(n, ids.len());
    for (j, &v) in ids.iter().enumerate() {
        m[(v, j)] = 1.0;
    }
    m
}

pub fn build_matrices(model: &NetworkModel) -> Result<SystemMatrices> {
    model.graph.check_strongly_connected()?;
    Ok(SystemMatrices::from_indices(
        model.graph.laplacian(),
        &model.actuation,
        &model.measurement,
    ))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EdgeRecord {
    pub from: usize,
    pub to: usize,
    pub w: f64,
}

/// On-disk network description (1-based ids).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkFile {
    pub n: usize,
    pub edges: Vec<EdgeRecord>,
    pub actuation: Vec<usize>,
    pub measurement: Vec<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub accessible: Option<Vec<usize>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub undirected: Option<bool>,
}

fn ids_from_file(name: &str, ids: &[usize], n: usize) -> Result<Vec<usize>> {
    ids.iter()
        .enumerate()
        .map(|(i, &v)| {
            if v == 0 || v > n {
                Err(Error::Validation {
                    path: format!("{name}[{i}]"),
                    msg: format!("vertex id {v} out of range 1..={n}"),
                })
            } else {
                Ok(v - 1)
            }
        })
        .collect()
}

impl NetworkFile {
    pub fn parse(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Parse {
            line: e.line(),
            column: e.column(),
            msg: e.to_string(),
        })
    }

    pub fn into_model(self) -> Result<NetworkModel> {
        let n = self.n;
        if n == 0 {
            return Err(Error::Validation {
                path: "n".into(),
                msg: "must be at least 1".into(),
            });
        }
        let undirected = self.undirected.unwrap_or(false);
        let mut edges = Vec::new();
        for (i, e) in self.edges.iter().enumerate() {
            for (end, v) in [("from", e.from), ("to", e.to)] {
                if v == 0 || v > n {
                    return Err(Error::Validation {
                        path: format!("edges[{i}].{end}"),
                        msg: format!("vertex id {v} out of range 1..={n}"),
                    });
                }
            }
            if !(e.w > 0.0 && e.w.is_finite()) {
                return Err(Error::Validation {
                    path: format!("edges[{i}].w"),
                    msg: format!("edge {}->{} has non-positive weight {}", e.from, e.to, e.w),
                });
            }
            edges.push(Edge {
                from: e.from - 1,
                to: e.to - 1,
                w: e.w,
            });
            if undirected {
                edges.push(Edge {
                    from: e.to - 1,
                    to: e.from - 1,
                    w: e.w,
                });
            }
        }
        let graph = NetworkGraph::new(n, edges).map_err(|err| match err {
            // map the expanded edge index back to the listed one
            Error::Validation { path, msg } if undirected && path.starts_with("edges[") => {
                let idx: usize = path[6..path.len() - 1].parse().unwrap_or(0);
                Error::Validation {
                    path: format!("edges[{}]", idx / 2),
                    msg,
                }
            }
            other => other,
        })?;
        let actuation = ids_from_file("actuation", &self.actuation, n)?;
        let measurement = ids_from_file("measurement", &self.measurement, n)?;
        let accessible = self
            .accessible
            .as_ref()
            .map(|a| ids_from_file("accessible", a, n))
            .transpose()?;
        NetworkModel::new(graph, actuation, measurement, accessible)
    }

    pub fn from_model(model: &NetworkModel) -> Self {
        NetworkFile {
            n: model.n(),
            edges: model
                .graph
                .edges()
                .iter()
                .map(|e| EdgeRecord {
                    from: e.from + 1,
                    to: e.to + 1,
                    w: e.w,
                })
                .collect(),
            actuation: model.actuation.iter().map(|v| v + 1).collect(),
            measurement: model.measurement.iter().map(|v| v + 1).collect(),
            accessible: model
                .accessible
                .as_ref()
                .map(|a| a.iter().map(|v| v + 1).collect()),
            undirected: None,
        }
    }
}

pub fn parse_network(text: &str) -> Result<NetworkModel> {
    NetworkFile::parse(text)?.into_model()
}

pub fn load_network(path: impl AsRef<Path>) -> Result<NetworkModel> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|source| Error::Io {
        path: path.display().to_string(),
        source,
    })?;
    parse_network(&text)
}

pub fn save_network(model: &NetworkModel, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let text = serde_json::to_string_pretty(&NetworkFile::from_model(model))
        .expect("network file serializes");
    std::fs::write(path, text + "\n").map_err(|source| Error::Io {
        path: path.display().to_string(),
        source,
    })
}

/// Sampled closed-loop trajectory.
#[derive(Debug, Clone)]
pub struct SimTrace {
    pub times: Vec<f64>,
    pub states: Vec<DVector<f64>>,
    pub outputs: Vec<DVector<f64>>,
    pub inputs: Vec<DVector<f64>>,
}

impl SimTrace {
    /// CSV with header `t,x1..xn,y1..ym,u1..uq`.
    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        let n = self.states.first().map_or(0, |x| x.len());
        let m = self.outputs.first().map_or(0, |y| y.len());
        let q = self.inputs.first().map_or(0, |u| u.len());
        let mut header = vec!["t".to_string()];
        header.extend((1..=n).map(|i| format!("x{i}")));
        header.extend((1..=m).map(|i| format!("y{i}")));
        header.extend((1..=q).map(|i| format!("u{i}")));
        out.push_str(&header.join(","));
        out.push('\n');
        for k in 0..self.times.len() {
            let mut row = vec![fmt_g(self.times[k], 12)];
            row.extend(self.states[k].iter().map(|&v| fmt_g(v, 12)));
            row.extend(self.outputs[k].iter().map(|&v| fmt_g(v, 12)));
            row.extend(self.inputs[k].iter().map(|&v| fmt_g(v, 12)));
            let _ = writeln!(out, "{}", row.join(","));
        }
        out
    }
}

/// Fixed-step RK4 integration of `x' = -(L + B F) x`.
pub fn simulate(
    mats: &SystemMatrices,
    f: &DMatrix<f64>,
    x0: &DVector<f64>,
    horizon: f64,
    dt: f64,
) -> Result<SimTrace> {
    mats.check_dims()?;
    if x0.len() != mats.n() {
        return Err(Error::DimensionMismatch(format!(
            "x0 has length {}, expected {}",
            x0.len(),
            mats.n()
        )));
    }
    if !(dt > 0.0) || !(horizon >= dt) {
        return Err(Error::Validation {
            path: "simulate".into(),
            msg: format!("need dt > 0 and horizon >= dt (dt = {dt}, horizon = {horizon})"),
        });
    }
    let a = -mats.closed_loop(f)?;
    let steps = (horizon / dt).round() as usize;
    let mut trace = SimTrace {
        times: Vec::with_capacity(steps + 1),
        states: Vec::with_capacity(steps + 1),
        outputs: Vec::with_capacity(steps + 1),
        inputs: Vec::with_capacity(steps + 1),
    };
    let mut x = x0.clone();
    for k in 0..=steps {
        trace.times.push(k as f64 * dt);
        trace.outputs.push(&mats.c * &x);
        trace.inputs.push(-(f * &x));
        trace.states.push(x.clone());
        if k == steps {
            break;
        }
        let k1 = &a * &x;
        let k2 = &a * (&x + &k1 * (dt / 2.0));
        let k3 = &a * (&x + &k2 * (dt / 2.0));
        let k4 = &a * (&x + &k3 * dt);
        x += (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (dt / 6.0);
    }
    Ok(trace)
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::dmatrix;

    fn two_node() -> NetworkModel {
        let g = NetworkGraph::new(
            2,
            vec![
                Edge { from: 0, to: 1, w: 1.0 },
                Edge { from: 1, to: 0, w: 1.0 },
            ],
        )
        .unwrap();
        NetworkModel::new(g, vec![0], vec![1], None).unwrap()
    }

    #[test]
    fn two_node_laplacian() {
        let mats = build_matrices(&two_node()).unwrap();
        assert_eq!(mats.l, dmatrix![1.0, -1.0; -1.0, 1.0]);
    }

    #[test]
    fn indicator_b() {
        let mut edges = Vec::new();
        for i in 0..11 {
            edges.push(Edge { from: i, to: (i + 1) % 11, w: 1.0 });
        }
        let g = NetworkGraph::new(11, edges).unwrap();
        let model = NetworkModel::new(g, vec![0, 9], vec![5], None).unwrap();
        let mats = build_matrices(&model).unwrap();
        assert_eq!(mats.b.shape(), (11, 2));
        assert_eq!(mats.b[(0, 0)], 1.0);
        assert_eq!(mats.b[(9, 1)], 1.0);
        assert_eq!(mats.b.sum(), 2.0);
        assert_eq!(mats.c.shape(), (1, 11));
        assert_eq!(mats.c[(0, 5)], 1.0);
        let ones = DVector::from_element(11, 1.0);
        assert!((mats.l * ones).norm() == 0.0);
    }

    #[test]
    fn not_strongly_connected() {
        let g = NetworkGraph::new(2, vec![Edge { from: 0, to: 1, w: 1.0 }]).unwrap();
        let err = NetworkModel::new(g, vec![0], vec![1], None).unwrap_err();
        assert!(matches!(err, Error::NotStronglyConnected { .. }));
    }

    #[test]
    fn invalid_weight() {
        let err = NetworkGraph::new(2, vec![Edge { from: 0, to: 1, w: 0.0 }]).unwrap_err();
        assert!(matches!(err, Error::InvalidWeight { .. }));
    }

    #[test]
    fn parse_minimal_file() {
        let text = r#"{"n": 2, "edges": [{"from": 1, "to": 2, "w": 1.0},
                       {"from": 2, "to": 1, "w": 1.0}],
                       "actuation": [1], "measurement": [2]}"#;
        let model = parse_network(text).unwrap();
        assert_eq!(model.n(), 2);
        assert_eq!(model.actuation, vec![0]);
    }

    #[test]
    fn parse_undirected_expands() {
        let text = r#"{"n": 3, "undirected": true,
            "edges": [{"from": 1, "to": 2, "w": 2.0}, {"from": 2, "to": 3, "w": 1.0}],
            "actuation": [1], "measurement": [3]}"#;
        let model = parse_network(text).unwrap();
        assert_eq!(model.graph.edges().len(), 4);
        let l = model.graph.laplacian();
        assert_eq!(l, l.transpose());
    }

    #[test]
    fn negative_weight_names_edge() {
        let text = r#"{"n": 2, "edges": [{"from": 1, "to": 2, "w": 1.0},
                       {"from": 2, "to": 1, "w": -1}],
                       "actuation": [1], "measurement": [2]}"#;
        match parse_network(text).unwrap_err() {
            Error::Validation { path, msg } => {
                assert_eq!(path, "edges[1].w");
                assert!(msg.contains("2->1"));
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn zero_based_id_rejected() {
        let text = r#"{"n": 2, "edges": [{"from": 1, "to": 2, "w": 1.0},
                       {"from": 2, "to": 1, "w": 1.0}],
                       "actuation": [0], "measurement": [2]}"#;
        match parse_network(text).unwrap_err() {
            Error::Validation { path, .. } => assert_eq!(path, "actuation[0]"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn malformed_json_has_position() {
        let err = parse_network("{\"n\": 2,\n \"edges\": [}").unwrap_err();
        assert!(matches!(err, Error::Parse { line: 2, .. }));
    }

    #[test]
    fn accessible_must_contain_actuation() {
        let text = r#"{"n": 2, "edges": [{"from": 1, "to": 2, "w": 1.0},
                       {"from": 2, "to": 1, "w": 1.0}],
                       "actuation": [1], "measurement": [2], "accessible": [2]}"#;
        assert!(matches!(
            parse_network(text).unwrap_err(),
            Error::Validation { .. }
        ));
    }

    #[test]
    fn simulate_consensus_equilibrium() {
        let mats = build_matrices(&two_node()).unwrap();
        let f = DMatrix::zeros(1, 2);
        let x0 = DVector::from_element(2, 1.0);
        let trace = simulate(&mats, &f, &x0, 1.0, 1e-2).unwrap();
        assert_eq!(trace.times.len(), 101);
        for x in &trace.states {
            assert!((x - &x0).norm() < 1e-14);
        }
    }

    #[test]
    fn simulate_consensus_limit() {
        let mats = build_matrices(&two_node()).unwrap();
        let f = DMatrix::zeros(1, 2);
        let x0 = DVector::from_vec(vec![3.0, -1.0]);
        let trace = simulate(&mats, &f, &x0, 10.0, 1e-3).unwrap();
        let last = trace.states.last().unwrap();
        assert!((last[0] - 1.0).abs() < 1e-6 && (last[1] - 1.0).abs() < 1e-6);
        for (x, y) in trace.states.iter().zip(&trace.outputs) {
            assert_eq!(y[0], x[1]);
        }
    }

    #[test]
    fn simulate_rejects_bad_step() {
        let mats = build_matrices(&two_node()).unwrap();
        let f = DMatrix::zeros(1, 2);
        let x0 = DVector::zeros(2);
        assert!(simulate(&mats, &f, &x0, 1.0, 0.0).is_err());
        assert!(matches!(
            simulate(&mats, &DMatrix::zeros(2, 2), &x0, 1.0, 0.1).unwrap_err(),
            Error::DimensionMismatch(_)
        ));
    }

    #[test]
    fn csv_header_and_rows() {
        let mats = build_matrices(&two_node()).unwrap();
        let f = DMatrix::zeros(1, 2);
        let x0 = DVector::from_vec(vec![1.0, 0.0]);
        let csv = simulate(&mats, &f, &x0, 0.2, 0.1).unwrap().to_csv();
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[0], "t,x1,x2,y1,u1");
        assert_eq!(lines.len(), 4);
        assert!(lines[1].starts_with("0,1,0,0,"));
    }
}
