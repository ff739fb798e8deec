//! Label taxonomy: parsing, validation, hop distances and unique tree paths.
//!
//! Labels are numbered `0..K` in order of first appearance in the taxonomy
//! file. A synthetic virtual root (node index `K`) joins every top-level
//! label so that any two nodes are connected by exactly one path. Each label
//! owns exactly one edge (to its parent), so edge ids coincide with label ids.

use std::collections::HashMap;

use thiserror::Error;

/// Reserved name of the virtual root in taxonomy files.
pub const ROOT_NAME: &str = "Root";

#[derive(Debug, Error, PartialEq, Eq)]
pub enum TaxonomyError {
    #[error("taxonomy is empty")]
    Empty,
    #[error("line {line}: malformed record: {reason}")]
    Malformed { line: usize, reason: String },
    #[error("line {line}: label `{label}` already has parent `{existing}`")]
    DuplicateParent {
        line: usize,
        label: String,
        existing: String,
    },
    #[error("cycle detected through label `{0}`")]
    Cycle(String),
    #[error("label `{0}` is never attached to the tree")]
    Orphan(String),
}

/// A rooted label tree over `K` labels plus one virtual root.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelTaxonomy {
    names: Vec<String>,
    index: HashMap<String, usize>,
    /// `parent[i]` for labels; the virtual root has no entry.
    parent: Vec<usize>,
    /// Children per node, including the virtual root at index `K`.
    children: Vec<Vec<usize>>,
    /// Hop distance from the virtual root, per node.
    depth: Vec<usize>,
}

impl LabelTaxonomy {
    /// Parses the tab-separated taxonomy format: `parent<TAB>child<TAB>child...`.
    pub fn parse(text: &str) -> Result<Self, TaxonomyError> {
        let mut names: Vec<String> = Vec::new();
        let mut index: HashMap<String, usize> = HashMap::new();
        // Parent name per label id; `None` until assigned. `usize::MAX` = root.
        let mut parent: Vec<Option<usize>> = Vec::new();
        let mut intern = |name: &str, names: &mut Vec<String>, parent: &mut Vec<Option<usize>>| {
            *index.entry(name.to_string()).or_insert_with(|| {
                names.push(name.to_string());
                parent.push(None);
                names.len() - 1
            })
        };

        let mut saw_record = false;
        for (lineno, raw) in text.lines().enumerate() {
            let line = lineno + 1;
            let trimmed = raw.trim();
            if trimmed.is_empty() || trimmed.starts_with('#') {
                continue;
            }
            saw_record = true;
            let fields: Vec<&str> = raw.split('\t').map(str::trim).collect();
            let parent_name = fields[0];
            if parent_name.is_empty() {
                return Err(TaxonomyError::Malformed {
                    line,
                    reason: "empty parent name".into(),
                });
            }
            let kids: Vec<&str> = fields[1..].iter().copied().filter(|f| !f.is_empty()).collect();
            if kids.is_empty() {
                return Err(TaxonomyError::Malformed {
                    line,
                    reason: format!("parent `{parent_name}` lists no children"),
                });
            }
            let parent_id = if parent_name == ROOT_NAME {
                usize::MAX
            } else {
                intern(parent_name, &mut names, &mut parent)
            };
            for kid in kids {
                if kid == ROOT_NAME {
                    return Err(TaxonomyError::Malformed {
                        line,
                        reason: format!("`{ROOT_NAME}` cannot be a child"),
                    });
                }
                if kid == parent_name {
                    return Err(TaxonomyError::Cycle(kid.to_string()));
                }
                let kid_id = intern(kid, &mut names, &mut parent);
                if let Some(existing) = parent[kid_id] {
                    let existing = if existing == usize::MAX {
                        ROOT_NAME.to_string()
                    } else {
                        names[existing].clone()
                    };
                    return Err(TaxonomyError::DuplicateParent {
                        line,
                        label: kid.to_string(),
                        existing,
                    });
                }
                parent[kid_id] = Some(parent_id);
            }
        }
        if !saw_record || names.is_empty() {
            return Err(TaxonomyError::Empty);
        }

        let k = names.len();
        // Every chain of parents must terminate at the root without revisiting.
        let mut resolved = vec![false; k];
        for start in 0..k {
            let mut seen = Vec::new();
            let mut node = start;
            loop {
                if resolved[node] {
                    break;
                }
                if seen.contains(&node) {
                    return Err(TaxonomyError::Cycle(names[node].clone()));
                }
                seen.push(node);
                match parent[node] {
                    None => return Err(TaxonomyError::Orphan(names[node].clone())),
                    Some(usize::MAX) => break,
                    Some(p) => node = p,
                }
            }
            for n in seen {
                resolved[n] = true;
            }
        }

        let parent: Vec<usize> = parent
            .into_iter()
            .map(|p| match p {
                Some(usize::MAX) => k,
                Some(p) => p,
                None => unreachable!("orphans rejected above"),
            })
            .collect();
        Ok(Self::from_parents(names, parent))
    }

    /// Builds a taxonomy from names and parent indices, where `K` denotes the
    /// virtual root. The caller guarantees the parents form a tree.
    fn from_parents(names: Vec<String>, parent: Vec<usize>) -> Self {
        let k = names.len();
        let mut children = vec![Vec::new(); k + 1];
        for (child, &p) in parent.iter().enumerate() {
            children[p].push(child);
        }
        let mut depth = vec![0usize; k + 1];
        let mut stack = vec![k];
        while let Some(node) = stack.pop() {
            for &c in &children[node] {
                depth[c] = depth[node] + 1;
                stack.push(c);
            }
        }
        let index = names.iter().enumerate().map(|(i, n)| (n.clone(), i)).collect();
        Self {
            names,
            index,
            parent,
            children,
            depth,
        }
    }

    /// Number of classifiable labels `K`.
    pub fn num_labels(&self) -> usize {
        self.names.len()
    }

    /// Number of graph nodes, `K + 1`.
    pub fn num_nodes(&self) -> usize {
        self.names.len() + 1
    }

    /// Node index of the virtual root.
    pub fn root(&self) -> usize {
        self.names.len()
    }

    /// Number of tree edges; always equal to `K`.
    pub fn num_edges(&self) -> usize {
        self.names.len()
    }

    pub fn name(&self, label: usize) -> &str {
        &self.names[label]
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn id_of(&self, name: &str) -> Option<usize> {
        self.index.get(name.trim()).copied()
    }

    /// Parent node of `node`, or `None` for the virtual root.
    pub fn parent(&self, node: usize) -> Option<usize> {
        self.parent.get(node).copied()
    }

    pub fn children(&self, node: usize) -> &[usize] {
        &self.children[node]
    }

    /// Id of the edge joining `a` and `b`, if they are parent and child.
    pub fn edge_between(&self, a: usize, b: usize) -> Option<usize> {
        if self.parent(a) == Some(b) {
            Some(a)
        } else if self.parent(b) == Some(a) {
            Some(b)
        } else {
            None
        }
    }

    /// 1-based hierarchy level of a label (top-level labels are level 1).
    pub fn label_level(&self, label: usize) -> usize {
        assert!(label < self.num_labels(), "label id {label} out of range");
        self.depth[label]
    }

    /// Number of levels (maximum label level).
    pub fn depth(&self) -> usize {
        self.depth.iter().copied().max().unwrap_or(0)
    }

    pub fn is_leaf(&self, label: usize) -> bool {
        self.children[label].is_empty()
    }

    pub fn leaves(&self) -> Vec<usize> {
        (0..self.num_labels()).filter(|&l| self.is_leaf(l)).collect()
    }

    /// Ancestors of `label` from its parent up to (excluding) the virtual root.
    pub fn ancestors(&self, label: usize) -> Vec<usize> {
        let mut out = Vec::new();
        let mut node = label;
        while let Some(p) = self.parent(node) {
            if p == self.root() {
                break;
            }
            out.push(p);
            node = p;
        }
        out
    }

    /// Hop distances between every pair of nodes.
    pub fn compute_distances(&self) -> DistanceTable {
        let n = self.num_nodes();
        let mut dist = vec![0usize; n * n];
        for i in 0..n {
            for j in (i + 1)..n {
                let d = self.depth[i] + self.depth[j] - 2 * self.depth[self.lca(i, j)];
                dist[i * n + j] = d;
                dist[j * n + i] = d;
            }
        }
        let max_dist = dist.iter().copied().max().unwrap_or(0);
        DistanceTable { n, dist, max_dist }
    }

    /// Edge ids along the unique path from `i` to `j`, in traversal order.
    pub fn path_edges(&self, i: usize, j: usize) -> Vec<usize> {
        let a = self.lca(i, j);
        let mut up = Vec::new();
        let mut node = i;
        while node != a {
            up.push(node);
            node = self.parent[node];
        }
        let mut down = Vec::new();
        let mut node = j;
        while node != a {
            down.push(node);
            node = self.parent[node];
        }
        up.extend(down.into_iter().rev());
        up
    }

    fn lca(&self, mut a: usize, mut b: usize) -> usize {
        while self.depth[a] > self.depth[b] {
            a = self.parent[a];
        }
        while self.depth[b] > self.depth[a] {
            b = self.parent[b];
        }
        while a != b {
            a = self.parent[a];
            b = self.parent[b];
        }
        a
    }

    /// Serializes to the tab-separated format, one line per parent in
    /// breadth-first order. Re-parsing yields the same tree; label ids are
    /// preserved when they were already numbered breadth-first.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let mut queue = std::collections::VecDeque::from([self.root()]);
        while let Some(node) = queue.pop_front() {
            let kids = &self.children[node];
            if kids.is_empty() {
                continue;
            }
            out.push_str(if node == self.root() { ROOT_NAME } else { &self.names[node] });
            for &c in kids {
                out.push('\t');
                out.push_str(&self.names[c]);
                queue.push_back(c);
            }
            out.push('\n');
        }
        out
    }
}

/// Pairwise hop distances over all `K + 1` nodes.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DistanceTable {
    n: usize,
    dist: Vec<usize>,
    max_dist: usize,
}

impl DistanceTable {
    pub fn get(&self, i: usize, j: usize) -> usize {
        self.dist[i * self.n + j]
    }

    pub fn max_dist(&self) -> usize {
        self.max_dist
    }

    pub fn num_nodes(&self) -> usize {
        self.n
    }
}
