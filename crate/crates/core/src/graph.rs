//! Directed communication graphs.
//!
//! An edge `(src, dst)` means agent `src` can send to agent `dst`, so `src`
//! is an in-neighbor of `dst`. Every node is its own in- and out-neighbor.

use std::collections::{BTreeSet, VecDeque};
use std::fmt::Write as _;
use std::path::Path;

use rand::seq::SliceRandom;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::rng::{self, Stream};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Digraph {
    n: usize,
    in_neighbors: Vec<Vec<usize>>,
    out_neighbors: Vec<Vec<usize>>,
}

impl Digraph {
    /// Builds a graph from `(src, dst)` pairs. Self-loops are inserted for
    /// every node; duplicates are merged.
    pub fn from_edges<I>(n: usize, edges: I) -> Result<Self>
    where
        I: IntoIterator<Item = (usize, usize)>,
    {
        if n == 0 {
            return Err(Error::InvalidInput("graph needs at least one node".into()));
        }
        let mut ins: Vec<BTreeSet<usize>> = (0..n).map(|i| BTreeSet::from([i])).collect();
        for (src, dst) in edges {
            if src >= n || dst >= n {
                return Err(Error::InvalidInput(format!(
                    "edge ({src}, {dst}) out of range for n = {n}"
                )));
            }
            ins[dst].insert(src);
        }
        let in_neighbors: Vec<Vec<usize>> = ins.into_iter().map(|s| s.into_iter().collect()).collect();
        let mut out_neighbors = vec![Vec::new(); n];
        for (dst, srcs) in in_neighbors.iter().enumerate() {
            for &src in srcs {
                out_neighbors[src].push(dst);
            }
        }
        Ok(Digraph {
            n,
            in_neighbors,
            out_neighbors,
        })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    /// Sorted in-neighbors of `i`, including `i`.
    pub fn in_neighbors(&self, i: usize) -> &[usize] {
        &self.in_neighbors[i]
    }

    /// Sorted out-neighbors of `j`, including `j`.
    pub fn out_neighbors(&self, j: usize) -> &[usize] {
        &self.out_neighbors[j]
    }

    pub fn in_degree(&self, i: usize) -> usize {
        self.in_neighbors[i].len()
    }

    pub fn out_degree(&self, j: usize) -> usize {
        self.out_neighbors[j].len()
    }

    /// Number of directed edges, self-loops included.
    pub fn num_edges(&self) -> usize {
        self.in_neighbors.iter().map(Vec::len).sum()
    }

    pub fn has_edge(&self, src: usize, dst: usize) -> bool {
        self.in_neighbors[dst].binary_search(&src).is_ok()
    }

    /// All `(src, dst)` pairs ordered by source, then destination.
    pub fn edges(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.out_neighbors
            .iter()
            .enumerate()
            .flat_map(|(src, dsts)| dsts.iter().map(move |&dst| (src, dst)))
    }

    /// Forward search plus search on the transpose, both from node 0.
    pub fn is_strongly_connected(&self) -> bool {
        reaches_all(&self.out_neighbors) && reaches_all(&self.in_neighbors)
    }

    /// Undirected version: `(i, j)` present whenever either direction is.
    pub fn symmetrized(&self) -> Digraph {
        let edges: Vec<_> = self.edges().flat_map(|(s, d)| [(s, d), (d, s)]).collect();
        Digraph::from_edges(self.n, edges).expect("indices already validated")
    }

    pub fn is_symmetric(&self) -> bool {
        self.edges().all(|(s, d)| self.has_edge(d, s))
    }

    /// Short content hash used to tag experiment outputs.
    pub fn content_hash(&self) -> String {
        let mut hasher = Sha256::new();
        hasher.update(self.to_edge_list_string().as_bytes());
        let digest = hasher.finalize();
        digest[..8].iter().fold(String::new(), |mut s, b| {
            let _ = write!(s, "{b:02x}");
            s
        })
    }

    pub fn to_edge_list_string(&self) -> String {
        let mut out = format!("{}\n", self.n);
        for (s, d) in self.edges() {
            let _ = writeln!(out, "{s} {d}");
        }
        out
    }

    pub fn save_edge_list(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_edge_list_string()).map_err(|e| Error::io(path, e))
    }

    pub fn load_edge_list(path: impl AsRef<Path>) -> Result<Digraph> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        parse_edge_list(&text, path)
    }
}

fn reaches_all(adj: &[Vec<usize>]) -> bool {
    let mut seen = vec![false; adj.len()];
    let mut queue = VecDeque::from([0]);
    seen[0] = true;
    let mut count = 1;
    while let Some(u) = queue.pop_front() {
        for &v in &adj[u] {
            if !seen[v] {
                seen[v] = true;
                count += 1;
                queue.push_back(v);
            }
        }
    }
    count == adj.len()
}

/// Parses the edge-list text format: first non-comment line is `n`, then one
/// `src dst` pair per line. `#` starts a comment.
pub fn parse_edge_list(text: &str, origin: &Path) -> Result<Digraph> {
    let parse_err = |line: usize, msg: String| Error::Parse {
        path: origin.to_path_buf(),
        line,
        msg,
    };
    let mut n: Option<usize> = None;
    let mut edges = Vec::new();
    for (idx, raw) in text.lines().enumerate() {
        let lineno = idx + 1;
        let content = raw.split('#').next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        let tokens: Vec<&str> = content.split_whitespace().collect();
        match n {
            None => {
                if tokens.len() != 1 {
                    return Err(parse_err(lineno, format!("expected node count, got {content:?}")));
                }
                let count: usize = tokens[0]
                    .parse()
                    .map_err(|_| parse_err(lineno, format!("invalid node count {:?}", tokens[0])))?;
                if count == 0 {
                    return Err(parse_err(lineno, "node count must be positive".into()));
                }
                n = Some(count);
            }
            Some(count) => {
                if tokens.len() != 2 {
                    return Err(parse_err(lineno, format!("expected \"src dst\", got {content:?}")));
                }
                let mut idx = [0usize; 2];
                for (slot, tok) in idx.iter_mut().zip(&tokens) {
                    *slot = tok
                        .parse()
                        .map_err(|_| parse_err(lineno, format!("invalid node index {tok:?}")))?;
                    if *slot >= count {
                        return Err(parse_err(
                            lineno,
                            format!("node index {slot} out of range for n = {count}"),
                        ));
                    }
                }
                edges.push((idx[0], idx[1]));
            }
        }
    }
    let n = n.ok_or_else(|| parse_err(0, "empty edge list".into()))?;
    let missing = (0..n).filter(|&i| !edges.contains(&(i, i))).count();
    if missing > 0 {
        log::warn!(
            "{}: {missing} node(s) without a self-loop; self-loops added",
            origin.display()
        );
    }
    Digraph::from_edges(n, edges)
}

/// Number of non-loop, non-cycle slots available for extra edges.
pub fn free_edge_slots(n: usize) -> usize {
    if n < 2 {
        0
    } else {
        n * (n - 1) - n
    }
}

/// Random strongly connected digraph: a random Hamiltonian cycle, all
/// self-loops, and `extra_edges` further distinct edges drawn without
/// replacement. For fixed `(n, seed)` the extras are a prefix of one shuffled
/// order, so graphs with more extras contain those with fewer.
pub fn random_strongly_connected(n: usize, extra_edges: usize, seed: u64) -> Result<Digraph> {
    if n == 0 {
        return Err(Error::InvalidInput("graph needs at least one node".into()));
    }
    let available = free_edge_slots(n);
    if extra_edges > available {
        return Err(Error::TooManyEdges {
            requested: extra_edges,
            available,
        });
    }
    let mut rng = rng::stream(seed, Stream::Graph);
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng);
    let mut edges = Vec::with_capacity(n + extra_edges);
    if n >= 2 {
        for w in 0..n {
            edges.push((order[w], order[(w + 1) % n]));
        }
    }
    let cycle: BTreeSet<(usize, usize)> = edges.iter().copied().collect();
    let mut free: Vec<(usize, usize)> = (0..n)
        .flat_map(|s| (0..n).map(move |d| (s, d)))
        .filter(|&(s, d)| s != d && !cycle.contains(&(s, d)))
        .collect();
    free.shuffle(&mut rng);
    edges.extend_from_slice(&free[..extra_edges]);
    Digraph::from_edges(n, edges)
}
