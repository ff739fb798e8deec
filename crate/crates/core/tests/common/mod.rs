//! Shared fixtures and independent oracles for the integration suites.
#![allow(dead_code)]

pub mod graph;
pub mod losses;
pub mod metrics;
pub mod toy;

use std::collections::VecDeque;

use rand::Rng;

use htla::hierarchy::LabelTaxonomy;

/// A tree described independently of the parser: `parent[i]` is `None` for
/// top-level labels. Label `i` is named `L{i}`.
#[derive(Debug, Clone)]
pub struct RawTree {
    pub parent: Vec<Option<usize>>,
}

impl RawTree {
    /// `choices[i] % (i + 1)`: `i` selects the root, otherwise that label.
    pub fn from_choices(choices: &[usize]) -> Self {
        let parent = choices
            .iter()
            .enumerate()
            .map(|(i, &c)| {
                let c = c % (i + 1);
                (c != i).then_some(c)
            })
            .collect();
        Self { parent }
    }

    pub fn random(k: usize, rng: &mut impl Rng) -> Self {
        let choices: Vec<usize> = (0..k).map(|i| rng.random_range(0..=i)).collect();
        Self::from_choices(&choices)
    }

    pub fn len(&self) -> usize {
        self.parent.len()
    }

    /// Taxonomy file text; children lines are emitted in reverse label order
    /// so that parser ids differ from raw ids.
    pub fn to_text(&self) -> String {
        let k = self.len();
        let mut out = String::new();
        let mut lines: Vec<(String, Vec<String>)> = Vec::new();
        let top: Vec<String> = (0..k).rev().filter(|&i| self.parent[i].is_none()).map(|i| format!("L{i}")).collect();
        lines.push(("Root".into(), top));
        for p in (0..k).rev() {
            let kids: Vec<String> = (0..k).filter(|&i| self.parent[i] == Some(p)).map(|i| format!("L{i}")).collect();
            if !kids.is_empty() {
                lines.push((format!("L{p}"), kids));
            }
        }
        for (p, kids) in lines {
            out.push_str(&p);
            for c in kids {
                out.push('\t');
                out.push_str(&c);
            }
            out.push('\n');
        }
        out
    }

    /// Maps raw node index (root = `k`) to the parsed taxonomy's node index.
    pub fn node_map(&self, tax: &LabelTaxonomy) -> Vec<usize> {
        let mut m: Vec<usize> = (0..self.len()).map(|i| tax.id_of(&format!("L{i}")).unwrap()).collect();
        m.push(tax.root());
        m
    }

    /// Undirected adjacency over raw nodes, root at index `k`.
    pub fn adjacency(&self) -> Vec<Vec<usize>> {
        let k = self.len();
        let mut adj = vec![Vec::new(); k + 1];
        for (i, p) in self.parent.iter().enumerate() {
            let p = p.unwrap_or(k);
            adj[i].push(p);
            adj[p].push(i);
        }
        adj
    }

    /// Parent of a raw node (root for top-level labels), `None` for the root.
    pub fn parent_node(&self, node: usize) -> Option<usize> {
        (node < self.len()).then(|| self.parent[node].unwrap_or(self.len()))
    }
}

/// BFS distances from every node.
pub fn bfs_distances(adj: &[Vec<usize>]) -> Vec<Vec<usize>> {
    (0..adj.len()).map(|s| bfs_from(adj, s).0).collect()
}

fn bfs_from(adj: &[Vec<usize>], s: usize) -> (Vec<usize>, Vec<usize>) {
    let n = adj.len();
    let mut dist = vec![usize::MAX; n];
    let mut prev = vec![usize::MAX; n];
    dist[s] = 0;
    let mut q = VecDeque::from([s]);
    while let Some(u) = q.pop_front() {
        for &v in &adj[u] {
            if dist[v] == usize::MAX {
                dist[v] = dist[u] + 1;
                prev[v] = u;
                q.push_back(v);
            }
        }
    }
    (dist, prev)
}

/// Node sequence of the BFS shortest path from `s` to `t`.
pub fn bfs_path(adj: &[Vec<usize>], s: usize, t: usize) -> Vec<usize> {
    let (_, prev) = bfs_from(adj, s);
    let mut path = vec![t];
    let mut node = t;
    while node != s {
        node = prev[node];
        path.push(node);
    }
    path.reverse();
    path
}

pub fn assert_close(a: f64, b: f64, tol: f64, what: &str) {
    assert!((a - b).abs() <= tol, "{what}: {a} vs {b} (tol {tol})");
}

pub fn assert_all_close(a: &[f64], b: &[f64], tol: f64, what: &str) {
    assert_eq!(a.len(), b.len(), "{what}: lengths");
    for (i, (x, y)) in a.iter().zip(b).enumerate() {
        assert!((x - y).abs() <= tol, "{what}[{i}]: {x} vs {y} (tol {tol})");
    }
}

/// Plain row-major matrix helpers for straight-line oracles.
pub mod dense {
    pub fn matmul(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            for j in 0..n {
                let mut s = 0.0;
                for h in 0..k {
                    s += a[i * k + h] * b[h * n + j];
                }
                out[i * n + j] = s;
            }
        }
        out
    }

    pub fn softmax(v: &[f64]) -> Vec<f64> {
        let m = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let e: Vec<f64> = v.iter().map(|x| (x - m).exp()).collect();
        let s: f64 = e.iter().sum();
        e.iter().map(|x| x / s).collect()
    }

    pub fn gelu(x: f64) -> f64 {
        0.5 * x * (1.0 + ((2.0 / std::f64::consts::PI).sqrt() * (x + 0.044715 * x * x * x)).tanh())
    }

    pub fn layer_norm_row(row: &[f64], gain: &[f64], bias: &[f64]) -> Vec<f64> {
        let n = row.len() as f64;
        let mean = row.iter().sum::<f64>() / n;
        let var = row.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
        row.iter()
            .enumerate()
            .map(|(i, x)| (x - mean) / (var + 1e-5).sqrt() * gain[i] + bias[i])
            .collect()
    }

    pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
        let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
        let na = a.iter().map(|x| x * x).sum::<f64>().sqrt().max(1e-12);
        let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt().max(1e-12);
        dot / (na * nb)
    }
}
