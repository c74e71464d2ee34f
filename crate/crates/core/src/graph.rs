//! Immutable simple undirected graphs in compressed sparse row form.
//!
//! Edge-list text format: one edge per line as two whitespace-separated
//! vertex identifiers, `#` starts a comment, blank lines are ignored. The
//! directive comment `# nodes: N` pins the vertex count so that isolated
//! vertices survive a write/read cycle; when present, integer identifiers
//! are used as-is and must be `< N`.

use std::collections::HashMap;
use std::io::{BufRead, Write};

use crate::error::{Error, Result};

/// Vertex index type. Graphs are limited to `u32::MAX` vertices.
pub type Vertex = u32;

/// How vertex identifiers in an edge list are interpreted.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum IdMode {
    /// Tokens must be non-negative integers.
    #[default]
    Integer,
    /// Tokens are arbitrary labels.
    Label,
}

/// Undirected simple graph with sorted CSR adjacency.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Graph {
    offsets: Vec<usize>,
    neighbors: Vec<Vertex>,
    edge_count: u64,
    labels: Option<Vec<String>>,
}

impl Graph {
    /// Builds a graph on `n` vertices. Duplicate edges (in either
    /// orientation) are collapsed; self-loops and out-of-range endpoints are
    /// rejected.
    pub fn from_edges<I>(n: usize, edges: I) -> Result<Self>
    where
        I: IntoIterator<Item = (Vertex, Vertex)>,
    {
        if n > Vertex::MAX as usize {
            return Err(Error::Domain(format!("{n} vertices exceeds the u32 limit")));
        }
        let mut pairs: Vec<(Vertex, Vertex)> = Vec::new();
        for (u, v) in edges {
            if u == v {
                return Err(Error::Domain(format!("self-loop on vertex {u}")));
            }
            if u as usize >= n || v as usize >= n {
                return Err(Error::Domain(format!(
                    "edge ({u}, {v}) out of range for {n} vertices"
                )));
            }
            pairs.push((u.min(v), u.max(v)));
        }
        pairs.sort_unstable();
        pairs.dedup();
        Ok(Self::from_sorted_unique(n, &pairs))
    }

    /// `pairs` must be sorted, deduplicated and satisfy `u < v < n`.
    pub(crate) fn from_sorted_unique(n: usize, pairs: &[(Vertex, Vertex)]) -> Self {
        let mut degree = vec![0usize; n];
        for &(u, v) in pairs {
            degree[u as usize] += 1;
            degree[v as usize] += 1;
        }
        let mut offsets = Vec::with_capacity(n + 1);
        offsets.push(0);
        for d in &degree {
            offsets.push(offsets.last().unwrap() + d);
        }
        let mut fill = offsets[..n].to_vec();
        let mut neighbors = vec![0 as Vertex; offsets[n]];
        // pairs are sorted by (u, v): every row receives its entries in
        // ascending order, lower neighbours (as v) before higher ones (as u).
        for &(u, v) in pairs {
            neighbors[fill[v as usize]] = u;
            fill[v as usize] += 1;
        }
        for &(u, v) in pairs {
            neighbors[fill[u as usize]] = v;
            fill[u as usize] += 1;
        }
        Graph {
            offsets,
            neighbors,
            edge_count: pairs.len() as u64,
            labels: None,
        }
    }

    pub fn empty(n: usize) -> Self {
        Self::from_sorted_unique(n, &[])
    }

    pub fn complete(n: usize) -> Self {
        let mut pairs = Vec::new();
        for u in 0..n as Vertex {
            for v in u + 1..n as Vertex {
                pairs.push((u, v));
            }
        }
        Self::from_sorted_unique(n, &pairs)
    }

    /// Path `0 - 1 - ... - (n-1)`.
    pub fn path(n: usize) -> Self {
        let pairs: Vec<_> = (1..n as Vertex).map(|v| (v - 1, v)).collect();
        Self::from_sorted_unique(n, &pairs)
    }

    pub fn cycle(n: usize) -> Self {
        let mut pairs: Vec<_> = (1..n as Vertex).map(|v| (v - 1, v)).collect();
        if n > 2 {
            pairs.push((0, n as Vertex - 1));
            pairs.sort_unstable();
        }
        Self::from_sorted_unique(n, &pairs)
    }

    /// Star with centre 0 and `leaves` leaves.
    pub fn star(leaves: usize) -> Self {
        let pairs: Vec<_> = (1..=leaves as Vertex).map(|v| (0, v)).collect();
        Self::from_sorted_unique(leaves + 1, &pairs)
    }

    #[inline]
    pub fn n(&self) -> usize {
        self.offsets.len() - 1
    }

    /// Number of undirected edges `L`.
    #[inline]
    pub fn edge_count(&self) -> u64 {
        self.edge_count
    }

    #[inline]
    pub fn neighbors(&self, v: Vertex) -> &[Vertex] {
        let v = v as usize;
        &self.neighbors[self.offsets[v]..self.offsets[v + 1]]
    }

    #[inline]
    pub fn degree(&self, v: Vertex) -> usize {
        let v = v as usize;
        self.offsets[v + 1] - self.offsets[v]
    }

    pub fn degrees(&self) -> Vec<u64> {
        (0..self.n() as Vertex).map(|v| self.degree(v) as u64).collect()
    }

    pub fn max_degree(&self) -> usize {
        (0..self.n() as Vertex).map(|v| self.degree(v)).max().unwrap_or(0)
    }

    #[inline]
    pub fn has_edge(&self, u: Vertex, v: Vertex) -> bool {
        let (a, b) = if self.degree(u) <= self.degree(v) { (u, v) } else { (v, u) };
        self.neighbors(a).binary_search(&b).is_ok()
    }

    /// Edges as `(u, v)` with `u < v`, in lexicographic order.
    pub fn edges(&self) -> impl Iterator<Item = (Vertex, Vertex)> + '_ {
        (0..self.n() as Vertex).flat_map(move |u| {
            self.neighbors(u)
                .iter()
                .copied()
                .filter(move |&v| v > u)
                .map(move |v| (u, v))
        })
    }

    /// Original identifiers for each vertex, when they were interned from a
    /// file.
    pub fn labels(&self) -> Option<&[String]> {
        self.labels.as_deref()
    }

    /// Average degree `2L / n`.
    pub fn average_degree(&self) -> f64 {
        if self.n() == 0 {
            return 0.0;
        }
        2.0 * self.edge_count as f64 / self.n() as f64
    }

    /// Estimated edge probability `2L / (n (n - 1))`.
    pub fn rho_hat(&self) -> Result<f64> {
        let n = self.n();
        if n < 2 {
            return Err(Error::Domain(format!("rho_hat needs at least 2 vertices, got {n}")));
        }
        Ok(2.0 * self.edge_count as f64 / (n as f64 * (n as f64 - 1.0)))
    }

    /// Estimated expected degree `(n - 1) rho_hat`, i.e. the average degree.
    pub fn lambda_hat(&self) -> f64 {
        self.average_degree()
    }

    /// Writes the graph with internal vertex ids, preceded by a
    /// `# nodes: N` directive. Reading the output back in integer mode
    /// reproduces the same graph.
    pub fn write_edge_list<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "# nodes: {}", self.n())?;
        for (u, v) in self.edges() {
            writeln!(w, "{u} {v}")?;
        }
        Ok(())
    }

    /// Writes the graph using the original labels (falls back to ids).
    pub fn write_labeled_edge_list<W: Write>(&self, mut w: W) -> Result<()> {
        let Some(labels) = &self.labels else {
            return self.write_edge_list(w);
        };
        let mut lines: Vec<(String, String)> = self
            .edges()
            .map(|(u, v)| {
                let (a, b) = (&labels[u as usize], &labels[v as usize]);
                if a <= b {
                    (a.clone(), b.clone())
                } else {
                    (b.clone(), a.clone())
                }
            })
            .collect();
        lines.sort();
        for (a, b) in lines {
            writeln!(w, "{a} {b}")?;
        }
        Ok(())
    }
}

fn parse_nodes_directive(comment: &str) -> Option<&str> {
    let rest = comment.trim_start_matches('#').trim();
    rest.strip_prefix("nodes:").map(str::trim)
}

/// Reads an edge list. Without a `# nodes:` directive, identifiers are
/// interned to `0..n` in first-seen order and the originals are kept as
/// labels.
pub fn load_edge_list<R: BufRead>(reader: R, mode: IdMode) -> Result<Graph> {
    let mut declared: Option<usize> = None;
    let mut raw: Vec<(usize, String, String)> = Vec::new();

    for (idx, line) in reader.lines().enumerate() {
        let line = line?;
        let lineno = idx + 1;
        let (content, comment) = match line.find('#') {
            Some(pos) => (&line[..pos], Some(&line[pos..])),
            None => (line.as_str(), None),
        };
        if let Some(c) = comment {
            if let Some(value) = parse_nodes_directive(c) {
                if mode == IdMode::Integer {
                    let n = value.parse::<usize>().map_err(|_| Error::Parse {
                        line: lineno,
                        msg: format!("bad node count {value:?}"),
                    })?;
                    declared = Some(n);
                }
            }
        }
        let mut tokens = content.split_whitespace();
        let (a, b) = match (tokens.next(), tokens.next(), tokens.next()) {
            (None, _, _) => continue,
            (Some(a), Some(b), None) => (a, b),
            _ => {
                return Err(Error::Parse {
                    line: lineno,
                    msg: "expected exactly two vertex identifiers".into(),
                })
            }
        };
        if mode == IdMode::Integer {
            for tok in [a, b] {
                if tok.parse::<u64>().is_err() {
                    return Err(Error::Parse {
                        line: lineno,
                        msg: format!("expected a non-negative integer vertex id, got {tok:?}"),
                    });
                }
            }
        }
        let same = match mode {
            IdMode::Integer => a.parse::<u64>().ok() == b.parse::<u64>().ok(),
            IdMode::Label => a == b,
        };
        if same {
            return Err(Error::SelfLoop { line: lineno, label: a.to_string() });
        }
        raw.push((lineno, a.to_string(), b.to_string()));
    }

    let mut pairs = Vec::with_capacity(raw.len());
    let (n, labels) = if let Some(n) = declared {
        for (lineno, a, b) in &raw {
            let mut ids = [0 as Vertex; 2];
            for (slot, tok) in ids.iter_mut().zip([a, b]) {
                let id: u64 = tok.parse().expect("validated above");
                if id as usize >= n {
                    return Err(Error::Parse {
                        line: *lineno,
                        msg: format!("vertex {id} out of range for declared {n} nodes"),
                    });
                }
                *slot = id as Vertex;
            }
            pairs.push((ids[0].min(ids[1]), ids[0].max(ids[1])));
        }
        (n, None)
    } else {
        let mut index: HashMap<String, Vertex> = HashMap::new();
        let mut labels: Vec<String> = Vec::new();
        let mut intern = |tok: &str| -> Vertex {
            let key = match mode {
                // "007" and "7" name the same vertex.
                IdMode::Integer => tok.parse::<u64>().unwrap().to_string(),
                IdMode::Label => tok.to_string(),
            };
            *index.entry(key.clone()).or_insert_with(|| {
                labels.push(key);
                (labels.len() - 1) as Vertex
            })
        };
        for (_, a, b) in &raw {
            let (u, v) = (intern(a), intern(b));
            pairs.push((u.min(v), u.max(v)));
        }
        (labels.len(), Some(labels))
    };

    pairs.sort_unstable();
    pairs.dedup();
    let mut g = Graph::from_sorted_unique(n, &pairs);
    g.labels = labels;
    Ok(g)
}

/// Average degree `2L / n`.
pub fn average_degree(g: &Graph) -> f64 {
    g.average_degree()
}

/// Estimated edge probability `2L / (n (n - 1))`.
pub fn rho_hat(g: &Graph) -> Result<f64> {
    g.rho_hat()
}
