//! Small query patterns: explicit edge lists and (generalized) wheels.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Largest pattern handled by automorphism enumeration and generic
/// embedding search.
pub const MAX_PATTERN_VERTICES: usize = 10;

/// A simple pattern graph on vertices `0..p`, every vertex incident to at
/// least one edge. A pattern may carry a distinguished root vertex (the hub
/// of a wheel); automorphisms of a rooted pattern must fix the root.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct PatternGraph {
    p: usize,
    edges: Vec<(usize, usize)>,
    adj: Vec<u16>,
    root: Option<usize>,
}

impl PatternGraph {
    pub fn new(p: usize, edges: &[(usize, usize)]) -> Result<Self> {
        if p > MAX_PATTERN_VERTICES {
            return Err(Error::Capability(format!(
                "pattern has {p} vertices, limit is {MAX_PATTERN_VERTICES}"
            )));
        }
        if edges.is_empty() {
            return Err(Error::Domain("pattern needs at least one edge".into()));
        }
        let mut norm: Vec<(usize, usize)> = Vec::with_capacity(edges.len());
        let mut adj = vec![0u16; p];
        for &(a, b) in edges {
            if a == b {
                return Err(Error::Domain(format!("pattern self-loop at {a}")));
            }
            if a >= p || b >= p {
                return Err(Error::Domain(format!("pattern edge ({a},{b}) out of range")));
            }
            let e = (a.min(b), a.max(b));
            if norm.contains(&e) {
                return Err(Error::Domain(format!("pattern edge ({a},{b}) repeated")));
            }
            norm.push(e);
            adj[a] |= 1 << b;
            adj[b] |= 1 << a;
        }
        if let Some(v) = adj.iter().position(|&m| m == 0) {
            return Err(Error::Domain(format!("pattern vertex {v} has no incident edge")));
        }
        norm.sort_unstable();
        Ok(PatternGraph { p, edges: norm, adj, root: None })
    }

    /// Marks `root` as a distinguished vertex.
    pub fn rooted(mut self, root: usize) -> Result<Self> {
        if root >= self.p {
            return Err(Error::Domain(format!("root {root} out of range")));
        }
        self.root = Some(root);
        Ok(self)
    }

    pub fn unrooted(mut self) -> Self {
        self.root = None;
        self
    }

    pub fn edge() -> Self {
        Self::new(2, &[(0, 1)]).unwrap()
    }

    pub fn two_star() -> Self {
        Self::new(3, &[(0, 1), (0, 2)]).unwrap()
    }

    pub fn triangle() -> Self {
        Self::new(3, &[(0, 1), (1, 2), (0, 2)]).unwrap()
    }

    /// `|V(R)|`.
    #[inline]
    pub fn p(&self) -> usize {
        self.p
    }

    /// `|R|`, the number of edges.
    #[inline]
    pub fn q(&self) -> usize {
        self.edges.len()
    }

    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    pub fn root(&self) -> Option<usize> {
        self.root
    }

    #[inline]
    pub fn has_edge(&self, a: usize, b: usize) -> bool {
        self.adj[a] >> b & 1 == 1
    }

    #[inline]
    pub fn adjacency_mask(&self, a: usize) -> u16 {
        self.adj[a]
    }

    pub fn degree(&self, a: usize) -> usize {
        self.adj[a].count_ones() as usize
    }

    pub fn is_acyclic(&self) -> bool {
        // a forest has p - c edges
        let mut parent: Vec<usize> = (0..self.p).collect();
        fn find(parent: &mut [usize], x: usize) -> usize {
            let mut r = x;
            while parent[r] != r {
                r = parent[r];
            }
            parent[x] = r;
            r
        }
        for &(a, b) in &self.edges {
            let (ra, rb) = (find(&mut parent, a), find(&mut parent, b));
            if ra == rb {
                return false;
            }
            parent[ra] = rb;
        }
        true
    }

    /// Number of automorphisms (root-fixing, if rooted), by backtracking
    /// over vertex images with degree pruning.
    pub fn automorphism_count(&self) -> u64 {
        let mut image = vec![usize::MAX; self.p];
        let mut used = 0u16;
        self.extend_automorphism(0, &mut image, &mut used)
    }

    fn extend_automorphism(&self, v: usize, image: &mut [usize], used: &mut u16) -> u64 {
        if v == self.p {
            return 1;
        }
        let mut total = 0;
        for t in 0..self.p {
            if *used >> t & 1 == 1 || self.degree(t) != self.degree(v) {
                continue;
            }
            if let Some(r) = self.root {
                if (v == r) != (t == r) {
                    continue;
                }
            }
            let consistent = (0..v).all(|u| self.has_edge(u, v) == self.has_edge(image[u], t));
            if !consistent {
                continue;
            }
            image[v] = t;
            *used |= 1 << t;
            total += self.extend_automorphism(v + 1, image, used);
            *used &= !(1 << t);
        }
        image[v] = usize::MAX;
        total
    }

    /// `N(R) = p! / |Aut(R)|`: the number of distinct copies of the pattern
    /// on `p` labeled vertices (copies with a designated root, if rooted).
    pub fn isomorphism_count(&self) -> u128 {
        factorial(self.p) / self.automorphism_count() as u128
    }

    /// Canonical textual name, e.g. `edges:0-1,0-2`.
    pub fn name(&self) -> String {
        let body: Vec<String> = self.edges.iter().map(|(a, b)| format!("{a}-{b}")).collect();
        format!("edges:{}", body.join(","))
    }

    /// All graphs on the same vertex set containing this pattern's edges.
    pub fn supergraphs(&self) -> Vec<PatternGraph> {
        let missing: Vec<(usize, usize)> = (0..self.p)
            .flat_map(|a| (a + 1..self.p).map(move |b| (a, b)))
            .filter(|&(a, b)| !self.has_edge(a, b))
            .collect();
        (0u32..1 << missing.len())
            .map(|mask| {
                let mut edges = self.edges.clone();
                edges.extend(
                    missing
                        .iter()
                        .enumerate()
                        .filter(|(i, _)| mask >> i & 1 == 1)
                        .map(|(_, e)| *e),
                );
                let mut g = PatternGraph::new(self.p, &edges).expect("supergraph of a valid pattern");
                g.root = self.root;
                g
            })
            .collect()
    }
}

pub fn factorial(p: usize) -> u128 {
    (1..=p as u128).product()
}

/// `N(R)` by explicit automorphism enumeration.
pub fn count_isomorphism_classes(r: &PatternGraph) -> u128 {
    r.isomorphism_count()
}

/// A generalized wheel: spokes of distinct lengths `ks[j]`, each length
/// used `ls[j]` times, all attached to a common hub and otherwise disjoint.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct WheelSpec {
    ks: Vec<usize>,
    ls: Vec<usize>,
}

impl WheelSpec {
    pub fn new(ks: Vec<usize>, ls: Vec<usize>) -> Result<Self> {
        if ks.is_empty() || ks.len() != ls.len() {
            return Err(Error::Domain("wheel needs matching, nonempty k and l vectors".into()));
        }
        if ks.iter().chain(&ls).any(|&x| x == 0) {
            return Err(Error::Domain("wheel spoke lengths and counts must be >= 1".into()));
        }
        let mut pairs: Vec<(usize, usize)> = ks.into_iter().zip(ls).collect();
        pairs.sort_unstable();
        if pairs.windows(2).any(|w| w[0].0 == w[1].0) {
            return Err(Error::Domain("wheel spoke lengths must be distinct".into()));
        }
        let (ks, ls) = pairs.into_iter().unzip();
        Ok(WheelSpec { ks, ls })
    }

    /// The `(k, l)`-wheel: `l` spokes of length `k`.
    pub fn simple(k: usize, l: usize) -> Result<Self> {
        Self::new(vec![k], vec![l])
    }

    pub fn ks(&self) -> &[usize] {
        &self.ks
    }

    pub fn ls(&self) -> &[usize] {
        &self.ls
    }

    /// `(k, l)` pairs, ascending in `k`.
    pub fn classes(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.ks.iter().copied().zip(self.ls.iter().copied())
    }

    pub fn is_simple(&self) -> bool {
        self.ks.len() == 1
    }

    /// Total number of spokes.
    pub fn spokes(&self) -> usize {
        self.ls.iter().sum()
    }

    /// Number of edges `sum_j k_j l_j`.
    pub fn q(&self) -> usize {
        self.classes().map(|(k, l)| k * l).sum()
    }

    /// Number of vertices `sum_j k_j l_j + 1`.
    pub fn p(&self) -> usize {
        self.q() + 1
    }

    pub fn max_k(&self) -> usize {
        *self.ks.last().unwrap()
    }

    /// Hub-rooted copies on `p` labeled vertices, `p! / prod_j l_j!`.
    pub fn isomorphism_count(&self) -> u128 {
        let denom: u128 = self.ls.iter().map(|&l| factorial(l)).product();
        factorial(self.p()) / denom
    }

    pub fn name(&self) -> String {
        let join = |v: &[usize]| v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join("/");
        format!("wheel:k={},l={}", join(&self.ks), join(&self.ls))
    }

    /// Realizes the wheel with hub `0` and spokes numbered consecutively.
    pub fn to_pattern(&self) -> Result<PatternGraph> {
        let p = self.p();
        if p > MAX_PATTERN_VERTICES {
            return Err(Error::Capability(format!(
                "{} has {p} vertices, limit is {MAX_PATTERN_VERTICES}",
                self.name()
            )));
        }
        let mut edges = Vec::with_capacity(self.q());
        let mut next = 1;
        for (k, l) in self.classes() {
            for _ in 0..l {
                let mut prev = 0;
                for _ in 0..k {
                    edges.push((prev, next));
                    prev = next;
                    next += 1;
                }
            }
        }
        PatternGraph::new(p, &edges)?.rooted(0)
    }
}

impl fmt::Display for WheelSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.name())
    }
}

/// Hub-rooted pattern realizing `spec`.
pub fn wheel_to_pattern(spec: &WheelSpec) -> Result<PatternGraph> {
    spec.to_pattern()
}

/// A pattern given either explicitly or as a wheel descriptor.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum PatternSpec {
    Graph(PatternGraph),
    Wheel(WheelSpec),
}

impl PatternSpec {
    pub fn name(&self) -> String {
        match self {
            PatternSpec::Graph(g) => g.name(),
            PatternSpec::Wheel(w) => w.name(),
        }
    }

    pub fn p(&self) -> usize {
        match self {
            PatternSpec::Graph(g) => g.p(),
            PatternSpec::Wheel(w) => w.p(),
        }
    }

    pub fn q(&self) -> usize {
        match self {
            PatternSpec::Graph(g) => g.q(),
            PatternSpec::Wheel(w) => w.q(),
        }
    }
}

fn parse_list(s: &str) -> Result<Vec<usize>> {
    s.split('/')
        .map(|t| {
            t.trim()
                .parse::<usize>()
                .map_err(|_| Error::Domain(format!("bad integer {t:?} in pattern")))
        })
        .collect()
}

impl FromStr for WheelSpec {
    type Err = Error;

    /// Parses `wheel:k=2,l=3` or `wheel:k=1/2/3,l=1/2/1` (the `wheel:`
    /// prefix is optional).
    fn from_str(s: &str) -> Result<Self> {
        let body = s.trim().strip_prefix("wheel:").unwrap_or(s.trim());
        let mut ks = None;
        let mut ls = None;
        for part in body.split(',') {
            let (key, value) = part
                .split_once('=')
                .ok_or_else(|| Error::Domain(format!("bad wheel descriptor {s:?}")))?;
            match key.trim() {
                "k" => ks = Some(parse_list(value)?),
                "l" => ls = Some(parse_list(value)?),
                other => return Err(Error::Domain(format!("unknown wheel field {other:?}"))),
            }
        }
        match (ks, ls) {
            (Some(ks), Some(ls)) => WheelSpec::new(ks, ls),
            _ => Err(Error::Domain(format!("wheel descriptor {s:?} needs k= and l="))),
        }
    }
}

impl FromStr for PatternSpec {
    type Err = Error;

    /// Accepts wheel descriptors, `edges:0-1,1-2` lists and the names
    /// `edge`, `2-star`, `triangle`.
    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        match s {
            "edge" => return Ok(PatternSpec::Graph(PatternGraph::edge())),
            "2-star" | "two-star" => return Ok(PatternSpec::Graph(PatternGraph::two_star())),
            "triangle" => return Ok(PatternSpec::Graph(PatternGraph::triangle())),
            _ => {}
        }
        if s.starts_with("wheel:") {
            return Ok(PatternSpec::Wheel(s.parse()?));
        }
        let body = s
            .strip_prefix("edges:")
            .ok_or_else(|| Error::Domain(format!("unrecognized pattern {s:?}")))?;
        let mut edges = Vec::new();
        for item in body.split(',') {
            let (a, b) = item
                .split_once('-')
                .ok_or_else(|| Error::Domain(format!("bad edge {item:?}")))?;
            let a: usize = a.trim().parse().map_err(|_| Error::Domain(format!("bad edge {item:?}")))?;
            let b: usize = b.trim().parse().map_err(|_| Error::Domain(format!("bad edge {item:?}")))?;
            edges.push((a, b));
        }
        let p = edges.iter().map(|&(a, b)| a.max(b) + 1).max().unwrap_or(0);
        Ok(PatternSpec::Graph(PatternGraph::new(p, &edges)?))
    }
}

impl Serialize for PatternSpec {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(&self.name())
    }
}

impl<'de> Deserialize<'de> for PatternSpec {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

impl Serialize for WheelSpec {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(&self.name())
    }
}

impl<'de> Deserialize<'de> for WheelSpec {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}
