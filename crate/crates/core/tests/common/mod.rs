#![allow(dead_code)]

use std::path::PathBuf;

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use obsblock::netmodel::Edge;
use obsblock::{NetworkGraph, NetworkModel};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub type CMatrix = DMatrix<Complex64>;

pub fn fixture(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("fixtures").join(name)
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn c(re: f64, im: f64) -> Complex64 {
    Complex64::new(re, im)
}

/// Strongly connected digraph: a directed cycle through a random
/// permutation plus each remaining ordered pair with probability `p`.
/// Weights are uniform in [0.5, 2].
pub fn random_digraph(rng: &mut ChaCha8Rng, n: usize, p: f64) -> NetworkGraph {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(rng);
    let mut present = vec![vec![false; n]; n];
    let mut edges = Vec::new();
    for k in 0..n {
        let (from, to) = (order[k], order[(k + 1) % n]);
        if from != to && !present[from][to] {
            present[from][to] = true;
            edges.push(Edge { from, to, w: rng.random_range(0.5..2.0) });
        }
    }
    for from in 0..n {
        for to in 0..n {
            if from != to && !present[from][to] && rng.random::<f64>() < p {
                present[from][to] = true;
                edges.push(Edge { from, to, w: rng.random_range(0.5..2.0) });
            }
        }
    }
    NetworkGraph::new(n, edges).expect("random graph is valid")
}

pub fn pick(rng: &mut ChaCha8Rng, n: usize, k: usize) -> Vec<usize> {
    let mut all: Vec<usize> = (0..n).collect();
    all.shuffle(rng);
    let mut out: Vec<usize> = all[..k].to_vec();
    out.sort_unstable();
    out
}

/// Random model with `m` sensors and `m + 2` actuators.
pub fn random_instance(seed: u64, n_range: std::ops::RangeInclusive<usize>) -> NetworkModel {
    let mut rng = rng(seed);
    let n = rng.random_range(n_range);
    let graph = random_digraph(&mut rng, n, 0.25);
    let m = rng.random_range(1..=n - 2);
    let measurement = pick(&mut rng, n, m);
    let actuation = pick(&mut rng, n, m + 2);
    NetworkModel::new(graph, actuation, measurement, None).expect("valid model")
}

/// Smallest singular value of `m` relative to `scale`.
pub fn rel_smin(m: &CMatrix, scale: f64) -> f64 {
    let sv = m.clone().svd(false, false).singular_values;
    sv.iter().copied().fold(f64::INFINITY, f64::min) / scale.max(1.0)
}

pub fn to_c(m: &DMatrix<f64>) -> CMatrix {
    m.map(|x| c(x, 0.0))
}

/// PBH oracle: an eigenvector of `a` at `lambda` is annihilated by `c_mat`.
/// The kernel of `a - lambda I` comes from its own SVD.
pub fn hidden_at(a: &DMatrix<f64>, c_mat: &DMatrix<f64>, lambda: Complex64, rtol: f64) -> bool {
    let n = a.nrows();
    let shifted = to_c(a) - CMatrix::identity(n, n) * lambda;
    let svd = shifted.svd(false, true);
    let v_t = svd.v_t.expect("v_t requested");
    let (k, &smin) = svd
        .singular_values
        .iter()
        .enumerate()
        .min_by(|x, y| x.1.total_cmp(y.1))
        .expect("nonempty");
    let scale = a.norm().max(1.0);
    if smin > 1e-6 * scale {
        return false;
    }
    let v: DVector<Complex64> = v_t.row(k).adjoint();
    (to_c(c_mat) * v).norm() <= rtol * scale
}

/// Kalman certificate: `|C A^k v| / (|A|^k |v|)` over `k < n`.
pub fn krylov_leak(a: &DMatrix<f64>, c_mat: &DMatrix<f64>, v: &DVector<Complex64>) -> f64 {
    let n = a.nrows();
    let a_hat = to_c(a) / c(a.norm().max(1.0), 0.0);
    let cc = to_c(c_mat);
    let mut w = v / c(v.norm(), 0.0);
    let mut worst: f64 = 0.0;
    for _ in 0..n {
        worst = worst.max((&cc * &w).norm());
        w = &a_hat * w;
    }
    worst
}

/// Rank of `[C; CA; ...; CA^{n-1}]` with `A` scaled to unit norm.
pub fn kalman_rank(a: &DMatrix<f64>, c_mat: &DMatrix<f64>, rtol: f64) -> usize {
    let n = a.nrows();
    let m = c_mat.nrows();
    let a_hat = a / a.norm().max(1.0);
    let mut obs = DMatrix::zeros(n * m, n);
    let mut block = c_mat.clone();
    for k in 0..n {
        obs.view_mut((k * m, 0), (m, n)).copy_from(&block);
        block = &block * &a_hat;
    }
    let sv = obs.svd(false, false).singular_values;
    let smax = sv.iter().copied().fold(0.0, f64::max);
    sv.iter().filter(|&&s| s > rtol * smax).count()
}

/// Symmetric Hausdorff distance between two spectra plus a size check.
pub fn spectrum_gap(a: &[Complex64], b: &[Complex64]) -> f64 {
    if a.len() != b.len() {
        return f64::INFINITY;
    }
    let one = |x: &[Complex64], y: &[Complex64]| {
        x.iter()
            .map(|p| y.iter().map(|q| (p - q).norm()).fold(f64::INFINITY, f64::min))
            .fold(0.0, f64::max)
    };
    one(a, b).max(one(b, a))
}

/// Every `lambda` is an eigenvalue of `a` (tiny `sigma_min(a - lambda I)`),
/// and the list sums to the trace.
pub fn eigenvalue_oracle(a: &DMatrix<f64>, lambdas: &[Complex64]) -> bool {
    let n = a.nrows();
    let scale = a.norm().max(1.0);
    let each = lambdas
        .iter()
        .all(|&l| rel_smin(&(to_c(a) - CMatrix::identity(n, n) * l), scale) < 1e-9);
    let sum: Complex64 = lambdas.iter().sum();
    each && lambdas.len() == n && (sum - c(a.trace(), 0.0)).norm() < 1e-9 * scale * n as f64
}

/// Undirected reachability from `sources` to `sinks` avoiding `removed`.
pub fn connected_after_removal(graph: &NetworkGraph, removed: &[bool], sources: &[usize], sinks: &[usize]) -> bool {
    let n = graph.n();
    let mut adj = vec![Vec::new(); n];
    for e in graph.edges() {
        adj[e.from].push(e.to);
        adj[e.to].push(e.from);
    }
    let mut seen = vec![false; n];
    let mut stack: Vec<usize> = sources.iter().copied().filter(|&s| !removed[s]).collect();
    for &s in &stack {
        seen[s] = true;
    }
    while let Some(u) = stack.pop() {
        for &w in &adj[u] {
            if !removed[w] && !seen[w] {
                seen[w] = true;
                stack.push(w);
            }
        }
    }
    sinks.iter().any(|&t| !removed[t] && seen[t])
}

/// Exhaustive minimum vertex separator size, with `forbidden` never removed.
pub fn brute_force_cut(graph: &NetworkGraph, sources: &[usize], sinks: &[usize], forbidden: &[usize]) -> usize {
    let n = graph.n();
    let mut best = usize::MAX;
    for mask in 0u32..(1 << n) {
        let size = mask.count_ones() as usize;
        if size >= best {
            continue;
        }
        let removed: Vec<bool> = (0..n).map(|v| mask & (1 << v) != 0).collect();
        if forbidden.iter().any(|&v| removed[v]) {
            continue;
        }
        if !connected_after_removal(graph, &removed, sources, sinks) {
            best = size;
        }
    }
    best
}

/// `e^{A t} x0` by scaling and squaring of a Taylor series.
pub fn expm_apply(a: &DMatrix<f64>, t: f64, x0: &DVector<f64>) -> DVector<f64> {
    let n = a.nrows();
    let at = a * t;
    let norm = at.norm();
    let squarings = if norm > 0.5 { (norm / 0.5).log2().ceil() as u32 } else { 0 };
    let small = at / 2f64.powi(squarings as i32);
    let mut term = DMatrix::<f64>::identity(n, n);
    let mut sum = term.clone();
    for k in 1..30 {
        term = &term * &small / k as f64;
        sum += &term;
    }
    for _ in 0..squarings {
        sum = &sum * &sum;
    }
    sum * x0
}
