//! Exact subgraph counting.
//!
//! Generic patterns are counted by injective backtracking over pattern
//! vertices against the CSR adjacency; the final result divides labeled
//! embeddings by `|Aut(R)|`. Wheels also have a per-hub counter that lists
//! the loopless spoke paths at each hub and counts selections of pairwise
//! vertex-disjoint paths.

use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::graph::{Graph, Vertex};
use crate::pattern::{PatternGraph, WheelSpec};

/// Work limits for exact counting.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CountLimits {
    /// Largest number of spoke paths enumerated at a single hub.
    pub paths_per_hub: usize,
    /// Total backtracking nodes allowed for one counting call.
    pub search_nodes: u64,
}

impl Default for CountLimits {
    fn default() -> Self {
        CountLimits { paths_per_hub: 1_000_000, search_nodes: 20_000_000_000 }
    }
}

const FLUSH_EVERY: u64 = 1 << 16;

/// Shared node counter; aborts every worker once the budget is spent.
struct NodeBudget {
    limit: u64,
    used: AtomicU64,
    blown: AtomicBool,
}

impl NodeBudget {
    fn new(limit: u64) -> Self {
        NodeBudget { limit, used: AtomicU64::new(0), blown: AtomicBool::new(false) }
    }

    /// Adds `local` nodes; returns false once the budget is exceeded.
    fn charge(&self, local: u64) -> bool {
        let total = self.used.fetch_add(local, Ordering::Relaxed) + local;
        if total > self.limit {
            self.blown.store(true, Ordering::Relaxed);
        }
        !self.blown.load(Ordering::Relaxed)
    }

    fn exceeded(&self) -> bool {
        self.blown.load(Ordering::Relaxed)
    }
}

fn checked_sum<I: Iterator<Item = u128>>(mut it: I) -> Result<u128> {
    it.try_fold(0u128, |a, b| a.checked_add(b)).ok_or(Error::Overflow)
}

/// Compiled matching plan for a pattern.
struct Plan {
    p: usize,
    /// `parent[t]`: position of an earlier-placed neighbor, if any.
    parent: Vec<Option<usize>>,
    /// Earlier positions that must be adjacent (besides the parent).
    adjacent: Vec<Vec<usize>>,
    /// Earlier positions that must not be adjacent (induced mode only).
    apart: Vec<Vec<usize>>,
}

impl Plan {
    fn new(r: &PatternGraph, induced: bool) -> Plan {
        let p = r.p();
        let start = r.root().unwrap_or_else(|| (0..p).max_by_key(|&v| (r.degree(v), usize::MAX - v)).unwrap());
        let mut order = Vec::with_capacity(p);
        let mut placed = vec![false; p];
        let mut seeds = std::iter::once(start).chain(0..p);
        while order.len() < p {
            let s = seeds.find(|&v| !placed[v]).unwrap();
            placed[s] = true;
            let mut head = order.len();
            order.push(s);
            while head < order.len() {
                let v = order[head];
                head += 1;
                let mut next: Vec<usize> = (0..p).filter(|&u| !placed[u] && r.has_edge(v, u)).collect();
                next.sort_by_key(|&u| std::cmp::Reverse(r.degree(u)));
                for u in next {
                    placed[u] = true;
                    order.push(u);
                }
            }
        }
        let mut parent = vec![None; p];
        let mut adjacent = vec![Vec::new(); p];
        let mut apart = vec![Vec::new(); p];
        for t in 0..p {
            for s in 0..t {
                if r.has_edge(order[s], order[t]) {
                    if parent[t].is_none() {
                        parent[t] = Some(s);
                    } else {
                        adjacent[t].push(s);
                    }
                } else if induced {
                    apart[t].push(s);
                }
            }
        }
        Plan { p, parent, adjacent, apart }
    }
}

struct Matcher<'a> {
    g: &'a Graph,
    plan: &'a Plan,
    image: Vec<Vertex>,
    local_nodes: u64,
    budget: &'a NodeBudget,
    aborted: bool,
}

impl Matcher<'_> {
    #[inline]
    fn fits(&self, t: usize, v: Vertex) -> bool {
        let img = &self.image[..t];
        if img.contains(&v) {
            return false;
        }
        self.plan.adjacent[t].iter().all(|&s| self.g.has_edge(img[s], v))
            && self.plan.apart[t].iter().all(|&s| !self.g.has_edge(img[s], v))
    }

    fn tick(&mut self) {
        self.local_nodes += 1;
        if self.local_nodes >= FLUSH_EVERY {
            if !self.budget.charge(self.local_nodes) {
                self.aborted = true;
            }
            self.local_nodes = 0;
        }
    }

    fn extend(&mut self, t: usize) -> u128 {
        if self.aborted {
            return 0;
        }
        self.tick();
        let last = t + 1 == self.plan.p;
        let mut total = 0u128;
        match self.plan.parent[t] {
            Some(s) => {
                let anchor = self.image[s];
                for &v in self.g.neighbors(anchor) {
                    if self.fits(t, v) {
                        if last {
                            total += 1;
                        } else {
                            self.image[t] = v;
                            total += self.extend(t + 1);
                        }
                    }
                }
            }
            None => {
                for v in 0..self.g.n() as Vertex {
                    if self.fits(t, v) {
                        if last {
                            total += 1;
                        } else {
                            self.image[t] = v;
                            total += self.extend(t + 1);
                        }
                    }
                }
            }
        }
        total
    }
}

/// Number of injective maps `V(R) -> V(G)` preserving edges (and, in induced
/// mode, non-edges).
fn labeled_embeddings(g: &Graph, r: &PatternGraph, induced: bool, limits: &CountLimits) -> Result<u128> {
    if r.p() > g.n() {
        return Ok(0);
    }
    let plan = Plan::new(r, induced);
    let budget = NodeBudget::new(limits.search_nodes);
    let per_start: Vec<u128> = (0..g.n() as Vertex)
        .into_par_iter()
        .map(|v0| {
            if budget.exceeded() {
                return 0;
            }
            let mut m = Matcher {
                g,
                plan: &plan,
                image: vec![0; plan.p],
                local_nodes: 0,
                budget: &budget,
                aborted: false,
            };
            m.image[0] = v0;
            let c = if plan.p == 1 { 1 } else { m.extend(1) };
            budget.charge(m.local_nodes + 1);
            c
        })
        .collect();
    if budget.exceeded() {
        return Err(Error::Budget(format!(
            "pattern search exceeded {} nodes; raise --budget or use the degree approximation",
            limits.search_nodes
        )));
    }
    checked_sum(per_start.into_iter())
}

/// Copies of `r` whose edges are all present in `g`: labeled embeddings
/// divided by `|Aut(R)|` (root-fixing automorphisms for rooted patterns).
pub fn count_noninduced(g: &Graph, r: &PatternGraph) -> Result<u128> {
    count_noninduced_with(g, r, &CountLimits::default())
}

pub fn count_noninduced_with(g: &Graph, r: &PatternGraph, limits: &CountLimits) -> Result<u128> {
    Ok(labeled_embeddings(g, r, false, limits)? / r.automorphism_count() as u128)
}

/// Copies of `r` whose vertex set induces exactly the copy's edges.
pub fn count_induced(g: &Graph, r: &PatternGraph) -> Result<u128> {
    count_induced_with(g, r, &CountLimits::default())
}

pub fn count_induced_with(g: &Graph, r: &PatternGraph, limits: &CountLimits) -> Result<u128> {
    Ok(labeled_embeddings(g, r, true, limits)? / r.automorphism_count() as u128)
}

/// Per-thread working memory for hub counting.
struct HubScratch {
    /// Vertex -> local id, `u32::MAX` when untouched.
    slot: Vec<u32>,
    touched: Vec<Vertex>,
    /// Internal (non-hub) vertices of each path, as local ids.
    path_off: Vec<u32>,
    path_verts: Vec<u32>,
    /// Path index ranges per wheel class.
    class_range: Vec<(usize, usize)>,
    occ_off: Vec<u32>,
    occ: Vec<u32>,
    mark: Vec<u32>,
    overlap: Vec<u32>,
    nbr_off: Vec<u32>,
    nbr: Vec<u32>,
    multi_off: Vec<u32>,
    multi: Vec<(u32, u32)>,
    active_count: Vec<u32>,
    active: Vec<bool>,
    blocked: Vec<u32>,
    dfs: Vec<Vertex>,
    local_nodes: u64,
}

impl HubScratch {
    fn new(n: usize) -> Self {
        HubScratch {
            slot: vec![u32::MAX; n],
            touched: Vec::new(),
            path_off: Vec::new(),
            path_verts: Vec::new(),
            class_range: Vec::new(),
            occ_off: Vec::new(),
            occ: Vec::new(),
            mark: Vec::new(),
            overlap: Vec::new(),
            nbr_off: Vec::new(),
            nbr: Vec::new(),
            multi_off: Vec::new(),
            multi: Vec::new(),
            active_count: Vec::new(),
            active: Vec::new(),
            blocked: Vec::new(),
            dfs: Vec::new(),
            local_nodes: 0,
        }
    }

    fn reset(&mut self) {
        for &v in &self.touched {
            self.slot[v as usize] = u32::MAX;
        }
        self.touched.clear();
        self.path_off.clear();
        self.path_off.push(0);
        self.path_verts.clear();
        self.class_range.clear();
    }

    fn paths(&self) -> usize {
        self.path_off.len() - 1
    }

    #[inline]
    fn path(&self, r: usize) -> &[u32] {
        &self.path_verts[self.path_off[r] as usize..self.path_off[r + 1] as usize]
    }

    fn local_id(&mut self, v: Vertex) -> u32 {
        let s = &mut self.slot[v as usize];
        if *s == u32::MAX {
            *s = self.touched.len() as u32;
            self.touched.push(v);
        }
        *s
    }

    /// Appends every loopless path of length `k` starting at `hub`.
    fn enumerate_paths(&mut self, g: &Graph, hub: Vertex, k: usize, cap: usize) -> Result<()> {
        let start = self.paths();
        self.dfs.clear();
        self.dfs.push(hub);
        self.walk(g, k, cap)?;
        self.class_range.push((start, self.paths()));
        Ok(())
    }

    fn walk(&mut self, g: &Graph, k: usize, cap: usize) -> Result<()> {
        let tip = *self.dfs.last().unwrap();
        for &v in g.neighbors(tip) {
            if self.dfs.contains(&v) {
                continue;
            }
            if self.dfs.len() == k {
                if self.paths() >= cap {
                    return Err(Error::Budget(format!(
                        "more than {cap} spoke paths at vertex {}; use the degree approximation",
                        self.dfs[0]
                    )));
                }
                for i in 1..self.dfs.len() {
                    let id = self.local_id(self.dfs[i]);
                    self.path_verts.push(id);
                }
                let id = self.local_id(v);
                self.path_verts.push(id);
                self.path_off.push(self.path_verts.len() as u32);
            } else {
                self.dfs.push(v);
                self.walk(g, k, cap)?;
                self.dfs.pop();
            }
        }
        Ok(())
    }

    /// Builds vertex -> path occurrence lists.
    fn build_occurrences(&mut self) {
        let locals = self.touched.len();
        self.occ_off.clear();
        self.occ_off.resize(locals + 1, 0);
        for &x in &self.path_verts {
            self.occ_off[x as usize + 1] += 1;
        }
        for i in 0..locals {
            self.occ_off[i + 1] += self.occ_off[i];
        }
        self.occ.clear();
        self.occ.resize(self.path_verts.len(), 0);
        let mut fill: Vec<u32> = self.occ_off[..locals].to_vec();
        for r in 0..self.paths() {
            for i in self.path_off[r]..self.path_off[r + 1] {
                let x = self.path_verts[i as usize] as usize;
                self.occ[fill[x] as usize] = r as u32;
                fill[x] += 1;
            }
        }
    }

    /// Conflict lists: paths sharing a vertex with each path (`nbr`), and
    /// those sharing at least two, with overlap minus one (`multi`).
    fn build_conflicts(&mut self, want_nbr: bool) {
        let p = self.paths();
        self.mark.clear();
        self.mark.resize(p, u32::MAX);
        self.overlap.clear();
        self.overlap.resize(p, 0);
        self.nbr_off.clear();
        self.nbr_off.push(0);
        self.nbr.clear();
        self.multi_off.clear();
        self.multi_off.push(0);
        self.multi.clear();
        let mut seen: Vec<u32> = Vec::new();
        for r in 0..p {
            seen.clear();
            for i in self.path_off[r]..self.path_off[r + 1] {
                let x = self.path_verts[i as usize] as usize;
                for j in self.occ_off[x]..self.occ_off[x + 1] {
                    let q = self.occ[j as usize];
                    if q as usize == r {
                        continue;
                    }
                    if self.mark[q as usize] != r as u32 {
                        self.mark[q as usize] = r as u32;
                        self.overlap[q as usize] = 1;
                        seen.push(q);
                    } else {
                        self.overlap[q as usize] += 1;
                    }
                }
            }
            for &q in &seen {
                let s = self.overlap[q as usize];
                if s >= 2 {
                    self.multi.push((q, s - 1));
                }
            }
            self.multi_off.push(self.multi.len() as u32);
            if want_nbr {
                seen.sort_unstable();
                self.nbr.extend_from_slice(&seen);
                self.nbr_off.push(self.nbr.len() as u32);
            }
        }
    }

    /// Active paths intersecting path `r`, with `r` itself inactive.
    #[inline]
    fn active_degree(&self, r: usize) -> u64 {
        let mut d: u64 = self.path(r).iter().map(|&x| self.active_count[x as usize] as u64).sum();
        for &(q, extra) in &self.multi[self.multi_off[r] as usize..self.multi_off[r + 1] as usize] {
            if self.active[q as usize] {
                d -= extra as u64;
            }
        }
        d
    }

    #[inline]
    fn set_active(&mut self, r: usize, on: bool) {
        self.active[r] = on;
        for i in self.path_off[r]..self.path_off[r + 1] {
            let x = self.path_verts[i as usize] as usize;
            if on {
                self.active_count[x] += 1;
            } else {
                self.active_count[x] -= 1;
            }
        }
    }

    /// Disjoint pairs of 2-paths at `hub`. A vertex `x` lies on
    /// `a(x) = [x ~ hub](deg x - 1) + |N(x) & N(hub)|` paths; pairs of paths
    /// sharing both vertices come from edges inside `N(hub)`.
    fn two_path_pairs(&mut self, g: &Graph, hub: Vertex) -> u128 {
        self.reset();
        self.active_count.clear();
        let mut paths = 0u64;
        for &a in g.neighbors(hub) {
            let id = self.local_id(a) as usize;
            if id >= self.active_count.len() {
                self.active_count.resize(id + 1, 0);
            }
            let d = g.degree(a) as u32 - 1;
            self.active_count[id] += d;
            paths += d as u64;
            for &b in g.neighbors(a) {
                if b == hub {
                    continue;
                }
                let id = self.local_id(b) as usize;
                if id >= self.active_count.len() {
                    self.active_count.resize(id + 1, 0);
                }
                self.active_count[id] += 1;
            }
        }
        let mut shared_pairs = 0u128;
        for &c in &self.active_count {
            let c = c as u128;
            shared_pairs += c * c.saturating_sub(1) / 2;
        }
        // each edge {a, b} inside N(hub) gives paths hub-a-b and hub-b-a
        let mut inner_edges = 0u128;
        for &a in g.neighbors(hub) {
            for &b in g.neighbors(a) {
                if b > a && g.has_edge(hub, b) {
                    inner_edges += 1;
                }
            }
        }
        self.local_nodes += paths;
        let p = paths as u128;
        p * p.saturating_sub(1) / 2 - (shared_pairs - inner_edges)
    }

    /// Disjoint pairs (`l = 2`) or triples (`l = 3`) among all paths.
    fn count_disjoint_small(&mut self, l: usize) -> u128 {
        let p = self.paths();
        self.build_occurrences();
        self.build_conflicts(l == 3);
        self.active_count.clear();
        self.active_count.resize(self.touched.len(), 0);
        self.active.clear();
        self.active.resize(p, false);
        let mut total = 0u128;
        let mut active_paths = 0u64;
        let mut z = 0u64; // intersecting pairs among active paths
        let mut removed: Vec<usize> = Vec::new();
        for q1 in (0..p).rev() {
            if l == 2 {
                total += (active_paths - self.active_degree(q1)) as u128;
            } else {
                removed.clear();
                for i in self.nbr_off[q1]..self.nbr_off[q1 + 1] {
                    let q = self.nbr[i as usize] as usize;
                    if self.active[q] {
                        self.set_active(q, false);
                        z -= self.active_degree(q);
                        active_paths -= 1;
                        removed.push(q);
                    }
                }
                let a = active_paths as u128;
                total += a * a.saturating_sub(1) / 2 - z as u128;
                for &q in removed.iter().rev() {
                    z += self.active_degree(q);
                    self.set_active(q, true);
                    active_paths += 1;
                }
            }
            if l == 3 {
                z += self.active_degree(q1);
            }
            self.set_active(q1, true);
            active_paths += 1;
        }
        self.local_nodes += p as u64;
        total
    }

    /// General selection count by backtracking over the conflict graph.
    fn count_disjoint_general(&mut self, spec: &WheelSpec, budget: &NodeBudget) -> Option<u128> {
        self.build_occurrences();
        self.build_conflicts(true);
        self.blocked.clear();
        self.blocked.resize(self.paths(), 0);
        let slots: Vec<usize> = spec
            .ls()
            .iter()
            .enumerate()
            .flat_map(|(c, &l)| std::iter::repeat(c).take(l))
            .collect();
        let first = self.class_range[slots[0]].0;
        let mut aborted = false;
        let total = self.select(&slots, 0, first, budget, &mut aborted);
        (!aborted).then_some(total)
    }

    fn select(&mut self, slots: &[usize], t: usize, from: usize, budget: &NodeBudget, aborted: &mut bool) -> u128 {
        if *aborted {
            return 0;
        }
        self.local_nodes += 1;
        if self.local_nodes >= FLUSH_EVERY {
            if !budget.charge(self.local_nodes) {
                *aborted = true;
            }
            self.local_nodes = 0;
        }
        let end = self.class_range[slots[t]].1;
        if t + 1 == slots.len() {
            return (from..end).filter(|&q| self.blocked[q] == 0).count() as u128;
        }
        let mut total = 0u128;
        for q in from..end {
            if self.blocked[q] != 0 {
                continue;
            }
            let next_from = if slots[t + 1] == slots[t] { q + 1 } else { self.class_range[slots[t + 1]].0 };
            for i in self.nbr_off[q]..self.nbr_off[q + 1] {
                let c = self.nbr[i as usize] as usize;
                self.blocked[c] += 1;
            }
            total += self.select(slots, t + 1, next_from, budget, aborted);
            for i in self.nbr_off[q]..self.nbr_off[q + 1] {
                let c = self.nbr[i as usize] as usize;
                self.blocked[c] -= 1;
            }
        }
        total
    }
}

fn binomial(n: u128, k: usize) -> u128 {
    if (k as u128) > n {
        return 0;
    }
    let mut acc = 1u128;
    for i in 0..k as u128 {
        acc = acc * (n - i) / (i + 1);
    }
    acc
}

fn hub_count(g: &Graph, hub: Vertex, spec: &WheelSpec, limits: &CountLimits, sc: &mut HubScratch, budget: &NodeBudget) -> Result<Option<u128>> {
    if spec.is_simple() {
        let (k, l) = (spec.ks()[0], spec.ls()[0]);
        if k == 1 {
            return Ok(Some(binomial(g.degree(hub) as u128, l)));
        }
        if k == 2 && l == 1 {
            let d: u64 = g.neighbors(hub).iter().map(|&v| g.degree(v) as u64 - 1).sum();
            return Ok(Some(d as u128));
        }
        if k == 2 && l == 2 {
            return Ok(Some(sc.two_path_pairs(g, hub)));
        }
    }
    sc.reset();
    for k in spec.ks() {
        sc.enumerate_paths(g, hub, *k, limits.paths_per_hub)?;
    }
    let count = if spec.is_simple() {
        let l = spec.ls()[0];
        match l {
            1 => Some(sc.paths() as u128),
            2 | 3 => Some(sc.count_disjoint_small(l)),
            _ => sc.count_disjoint_general(spec, budget),
        }
    } else {
        sc.count_disjoint_general(spec, budget)
    };
    Ok(count)
}

/// Number of wheel copies with hub `i`, for every vertex `i`: unordered
/// selections of pairwise vertex-disjoint spoke paths of the required
/// lengths starting at `i`. Their sum is the hub-rooted noninduced count.
pub fn wheel_counts_per_hub(g: &Graph, spec: &WheelSpec, limits: &CountLimits) -> Result<Vec<u128>> {
    let n = g.n();
    if spec.q() >= n {
        return Ok(vec![0; n]);
    }
    let budget = NodeBudget::new(limits.search_nodes);
    let per_hub: Vec<Result<Option<u128>>> = (0..n as Vertex)
        .into_par_iter()
        .map_init(
            || HubScratch::new(n),
            |sc, hub| {
                if budget.exceeded() {
                    return Ok(None);
                }
                let c = hub_count(g, hub, spec, limits, sc, &budget);
                let spent = std::mem::take(&mut sc.local_nodes);
                budget.charge(spent);
                c
            },
        )
        .collect();
    let mut out = Vec::with_capacity(n);
    for c in per_hub {
        match c? {
            Some(v) if !budget.exceeded() => out.push(v),
            _ => {
                return Err(Error::Budget(format!(
                    "wheel selection search exceeded {} nodes; use the degree approximation",
                    limits.search_nodes
                )))
            }
        }
    }
    Ok(out)
}

/// Total hub-rooted wheel count.
pub fn count_wheel(g: &Graph, spec: &WheelSpec, limits: &CountLimits) -> Result<u128> {
    checked_sum(wheel_counts_per_hub(g, spec, limits)?.into_iter())
}
