//! Directed capacitated graph over the lattice and its exact min s-t cut.
//!
//! Arc layout over the lattice nodes v(p,r,i):
//! - along each ray: v(p,r,i) -> v(p,r,i-1), infinite capacity, so the
//!   source side is downward-closed in i;
//! - between neighboring rays (ring-closed) and neighboring planes:
//!   v -> v(..., max(0, i-delta)), infinite capacity, bounding how fast the
//!   boundary index may change between adjacent rays/planes;
//! - terminal arcs carry the costs: the innermost sample connects from s
//!   with weight c(p,r,0), the outermost connects to t with weight
//!   c(p,r,I), and each interior sample takes the cost difference
//!   d = c(i) - c(i-1) as s->v when d > 0 or v->t when d < 0 (none for
//!   d = 0).

use std::io::Write;

use crate::cost::CostField;
use crate::{Error, Result};

/// Capacity marker for arcs that must never cross the cut.
pub const INF: f64 = f64::INFINITY;

/// One directed arc with a non-negative (possibly infinite) capacity.
#[derive(Debug, Clone, Copy)]
pub struct Arc {
    pub from: u32,
    pub to: u32,
    pub capacity: f64,
}

/// Boundary smoothness bounds: the boundary index may change by at most
/// `delta_x` between neighboring rays and `delta_z` between neighboring
/// planes.
#[derive(Debug, Clone, Copy, serde::Serialize, serde::Deserialize)]
pub struct SmoothnessParams {
    pub delta_x: usize,
    pub delta_z: usize,
}

/// Directed capacitated graph with terminals s and t.
///
/// Lattice node (p,r,i) has id (p*rays + r)*samples + i; s and t are the two
/// highest ids.
#[derive(Debug, Clone)]
pub struct FlowNetwork {
    pub num_nodes: usize,
    pub arcs: Vec<Arc>,
    pub source: u32,
    pub sink: u32,
    /// (planes, rays, samples) when the network was built over a lattice.
    pub lattice: Option<(usize, usize, usize)>,
}

impl FlowNetwork {
    /// Empty network with `n` plain nodes plus the two terminals.
    pub fn with_nodes(n: usize) -> Self {
        Self {
            num_nodes: n + 2,
            arcs: Vec::new(),
            source: n as u32,
            sink: n as u32 + 1,
            lattice: None,
        }
    }

    pub fn add_arc(&mut self, from: u32, to: u32, capacity: f64) {
        debug_assert!(capacity >= 0.0);
        debug_assert!(to != self.source, "no arc may enter the source");
        debug_assert!(from != self.sink, "no arc may leave the sink");
        self.arcs.push(Arc { from, to, capacity });
    }

    /// Dump the arc list as text, one `u v capacity` line per arc with the
    /// literal `INF` for infinite capacities.
    pub fn dump_edges<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        for a in &self.arcs {
            if a.capacity.is_infinite() {
                writeln!(w, "{} {} INF", a.from, a.to)?;
            } else {
                writeln!(w, "{} {} {}", a.from, a.to, a.capacity)?;
            }
        }
        Ok(())
    }
}

/// Min-cut partition: `in_source_side[v]` marks membership in V1 (the side
/// of s), `boundary_index[p*rays + r]` is the largest sample index on the
/// source side of ray (p,r), or -1 when the whole ray is on the sink side.
#[derive(Debug, Clone)]
pub struct CutResult {
    pub in_source_side: Vec<bool>,
    pub flow_value: f64,
    pub boundary_index: Vec<isize>,
}

/// Build the lattice graph for a cost field.
///
/// `force_inner` replaces the s -> v(p,r,0) weight with infinity so at least
/// the innermost sample of every ray stays inside the segmentation.
pub fn build_graph(cf: &CostField, sp: &SmoothnessParams, force_inner: bool) -> Result<FlowNetwork> {
    let lp = &cf.params;
    // Lighter checks than the pipeline-level LatticeParams validation so
    // degenerate lattices remain constructible for inspection.
    if lp.planes == 0 || lp.rays == 0 || lp.samples == 0 {
        return Err(Error::InvalidParams("empty lattice".into()));
    }
    let max_delta = lp.samples - 1;
    if sp.delta_x > max_delta || sp.delta_z > max_delta {
        return Err(Error::InvalidParams(format!(
            "smoothness deltas ({}, {}) must not exceed {}",
            sp.delta_x, sp.delta_z, max_delta
        )));
    }
    assert_eq!(cf.costs.len(), lp.node_count(), "cost field shape mismatch");

    let mut net = FlowNetwork::with_nodes(lp.node_count());
    net.lattice = Some((lp.planes, lp.rays, lp.samples));
    let id = |p: usize, r: usize, i: usize| lp.index(p, r, i) as u32;

    // Intra-ray arcs: downward-closure along each ray.
    for p in 0..lp.planes {
        for r in 0..lp.rays {
            for i in 1..lp.samples {
                net.add_arc(id(p, r, i), id(p, r, i - 1), INF);
            }
        }
    }

    // Inter-ray arcs, ring-closed over the last/first ray pair. With two
    // rays both directions target the same neighbor; the parallel arcs are
    // kept, mirroring the four ring-arc families of the construction.
    if lp.rays > 1 {
        for p in 0..lp.planes {
            for r in 0..lp.rays {
                let next = (r + 1) % lp.rays;
                let prev = (r + lp.rays - 1) % lp.rays;
                for i in 0..lp.samples {
                    let lo = i.saturating_sub(sp.delta_x);
                    net.add_arc(id(p, r, i), id(p, next, lo), INF);
                    net.add_arc(id(p, r, i), id(p, prev, lo), INF);
                }
            }
        }
    }

    // Inter-plane arcs (no wrap: the tube is open-ended).
    for p in 0..lp.planes {
        for r in 0..lp.rays {
            for i in 0..lp.samples {
                let lo = i.saturating_sub(sp.delta_z);
                if p + 1 < lp.planes {
                    net.add_arc(id(p, r, i), id(p + 1, r, lo), INF);
                }
                if p >= 1 {
                    net.add_arc(id(p, r, i), id(p - 1, r, lo), INF);
                }
            }
        }
    }

    // Terminal arcs from the costs.
    let s = net.source;
    let t = net.sink;
    let last = lp.samples - 1;
    for p in 0..lp.planes {
        for r in 0..lp.rays {
            let inner = if force_inner { INF } else { cf.cost(p, r, 0) };
            net.add_arc(s, id(p, r, 0), inner);
            net.add_arc(id(p, r, last), t, cf.cost(p, r, last));
            for i in 1..last {
                let d = cf.cost(p, r, i) - cf.cost(p, r, i - 1);
                if d > 0.0 {
                    net.add_arc(s, id(p, r, i), d);
                } else if d < 0.0 {
                    net.add_arc(id(p, r, i), t, -d);
                }
            }
        }
    }

    Ok(net)
}

/// Residual arc storage: arcs come in twin pairs, `a ^ 1` is the reverse.
struct Residual {
    to: Vec<u32>,
    cap: Vec<f64>,
    /// Out-incidence (including reverse twins) per node.
    adj: Vec<Vec<u32>>,
    eps: f64,
}

impl Residual {
    fn new(net: &FlowNetwork) -> Self {
        let n = net.num_nodes;
        let m = net.arcs.len();
        let mut to = Vec::with_capacity(2 * m);
        let mut cap = Vec::with_capacity(2 * m);
        let mut adj = vec![Vec::new(); n];
        let mut max_cap = 0.0f64;
        for a in &net.arcs {
            let fwd = to.len() as u32;
            to.push(a.to);
            cap.push(a.capacity);
            to.push(a.from);
            cap.push(0.0);
            adj[a.from as usize].push(fwd);
            adj[a.to as usize].push(fwd + 1);
            if a.capacity.is_finite() {
                max_cap = max_cap.max(a.capacity);
            }
        }
        // Residuals below eps count as saturated; keeps float dust from
        // stalling the augmentation loop. Exact on integer capacities.
        let eps = 1e-12 * max_cap.max(1.0);
        Self { to, cap, adj, eps }
    }

    #[inline]
    fn from_of(&self, arc: u32) -> u32 {
        self.to[(arc ^ 1) as usize]
    }

    #[inline]
    fn open(&self, arc: u32) -> bool {
        self.cap[arc as usize] > self.eps
    }
}

const FREE: u8 = 0;
const TREE_S: u8 = 1;
const TREE_T: u8 = 2;
const NO_ARC: u32 = u32::MAX;

/// Boykov-Kolmogorov max-flow: grows search trees from both terminals,
/// augments along bridges between them and re-adopts orphaned subtrees
/// instead of rebuilding, which suits the grid-like sparsity here.
struct Bk<'a> {
    net: &'a FlowNetwork,
    res: Residual,
    tree: Vec<u8>,
    parent: Vec<u32>,
    active: std::collections::VecDeque<u32>,
    orphans: std::collections::VecDeque<u32>,
    flow: f64,
}

impl<'a> Bk<'a> {
    fn new(net: &'a FlowNetwork) -> Self {
        let n = net.num_nodes;
        let mut bk = Self {
            net,
            res: Residual::new(net),
            tree: vec![FREE; n],
            parent: vec![NO_ARC; n],
            active: std::collections::VecDeque::new(),
            orphans: std::collections::VecDeque::new(),
            flow: 0.0,
        };
        bk.tree[net.source as usize] = TREE_S;
        bk.tree[net.sink as usize] = TREE_T;
        bk.active.push_back(net.source);
        bk.active.push_back(net.sink);
        bk
    }

    /// Arc usable for growing `u`'s tree towards neighbor via incidence
    /// entry `a`: out-residual for the S tree, in-residual for the T tree.
    #[inline]
    fn growth_arc(&self, u: u32, a: u32) -> u32 {
        if self.tree[u as usize] == TREE_S {
            a
        } else {
            a ^ 1
        }
    }

    fn grow(&mut self) -> Option<u32> {
        while let Some(&u) = self.active.front() {
            if self.tree[u as usize] == FREE {
                self.active.pop_front();
                continue;
            }
            let my_tree = self.tree[u as usize];
            for k in 0..self.res.adj[u as usize].len() {
                let a = self.res.adj[u as usize][k];
                let g = self.growth_arc(u, a);
                if !self.res.open(g) {
                    continue;
                }
                let v = self.res.to[a as usize];
                match self.tree[v as usize] {
                    FREE => {
                        self.tree[v as usize] = my_tree;
                        self.parent[v as usize] = g;
                        self.active.push_back(v);
                    }
                    other if other != my_tree => {
                        // Bridge between the trees; the growth arc is
                        // oriented S -> T for either tree.
                        return Some(g);
                    }
                    _ => {}
                }
            }
            self.active.pop_front();
        }
        None
    }

    /// Walk from a node to its tree root, returning false if the chain is
    /// broken (an orphaned ancestor).
    fn rooted(&self, mut v: u32, terminal: u32, s_side: bool) -> bool {
        loop {
            if v == terminal {
                return true;
            }
            let pa = self.parent[v as usize];
            if pa == NO_ARC {
                return false;
            }
            v = if s_side { self.res.from_of(pa) } else { self.res.to[pa as usize] };
        }
    }

    fn augment(&mut self, bridge: u32) {
        let s = self.net.source;
        let t = self.net.sink;

        // Bottleneck over bridge + both tree paths.
        let mut bottleneck = self.res.cap[bridge as usize];
        let mut v = self.res.from_of(bridge);
        while v != s {
            let pa = self.parent[v as usize];
            bottleneck = bottleneck.min(self.res.cap[pa as usize]);
            v = self.res.from_of(pa);
        }
        let mut v = self.res.to[bridge as usize];
        while v != t {
            let pa = self.parent[v as usize];
            bottleneck = bottleneck.min(self.res.cap[pa as usize]);
            v = self.res.to[pa as usize];
        }

        let push = |res: &mut Residual, arc: u32, amount: f64| {
            let c = &mut res.cap[arc as usize];
            *c -= amount;
            if *c <= res.eps {
                *c = 0.0;
            }
            res.cap[(arc ^ 1) as usize] += amount;
        };

        push(&mut self.res, bridge, bottleneck);
        let mut v = self.res.from_of(bridge);
        while v != s {
            let pa = self.parent[v as usize];
            push(&mut self.res, pa, bottleneck);
            let next = self.res.from_of(pa);
            if !self.res.open(pa) {
                self.parent[v as usize] = NO_ARC;
                self.orphans.push_back(v);
            }
            v = next;
        }
        let mut v = self.res.to[bridge as usize];
        while v != t {
            let pa = self.parent[v as usize];
            push(&mut self.res, pa, bottleneck);
            let next = self.res.to[pa as usize];
            if !self.res.open(pa) {
                self.parent[v as usize] = NO_ARC;
                self.orphans.push_back(v);
            }
            v = next;
        }

        self.flow += bottleneck;
    }

    fn adopt(&mut self) {
        let s = self.net.source;
        let t = self.net.sink;
        while let Some(o) = self.orphans.pop_front() {
            let my_tree = self.tree[o as usize];
            let s_side = my_tree == TREE_S;
            let terminal = if s_side { s } else { t };

            // Look for a new parent inside the same tree with a residual
            // arc in the right direction and an unbroken chain to the root.
            let mut found = false;
            for k in 0..self.res.adj[o as usize].len() {
                let a = self.res.adj[o as usize][k];
                let v = self.res.to[a as usize];
                if self.tree[v as usize] != my_tree {
                    continue;
                }
                // Parent arc: v -> o for the S tree, o -> v for the T tree.
                let pa = if s_side { a ^ 1 } else { a };
                if !self.res.open(pa) {
                    continue;
                }
                if !self.rooted(v, terminal, s_side) {
                    continue;
                }
                self.parent[o as usize] = pa;
                found = true;
                break;
            }
            if found {
                continue;
            }

            // No parent: the orphan leaves the tree; its children become
            // orphans and same-tree neighbors get another chance to grow.
            for k in 0..self.res.adj[o as usize].len() {
                let a = self.res.adj[o as usize][k];
                let v = self.res.to[a as usize];
                if self.tree[v as usize] != my_tree {
                    continue;
                }
                let child_arc = if s_side { a } else { a ^ 1 };
                if self.parent[v as usize] == child_arc {
                    self.parent[v as usize] = NO_ARC;
                    self.orphans.push_back(v);
                }
                self.active.push_back(v);
            }
            self.tree[o as usize] = FREE;
            self.parent[o as usize] = NO_ARC;
        }
    }

    fn run(mut self) -> (f64, Residual) {
        loop {
            match self.grow() {
                Some(bridge) => {
                    self.augment(bridge);
                    self.adopt();
                }
                None => break,
            }
        }
        (self.flow, self.res)
    }
}

/// Exact maximum flow / minimum cut.
///
/// The source side V1 is the set of nodes reachable from s in the final
/// residual network, so ties resolve to the smallest source side. For
/// lattice-built networks the per-ray boundary indices are extracted too.
pub fn max_flow(net: &FlowNetwork) -> CutResult {
    let (flow, res) = Bk::new(net).run();

    // Residual BFS from s defines the partition.
    let mut in_source_side = vec![false; net.num_nodes];
    in_source_side[net.source as usize] = true;
    let mut queue = std::collections::VecDeque::new();
    queue.push_back(net.source);
    while let Some(u) = queue.pop_front() {
        for &a in &res.adj[u as usize] {
            if !res.open(a) {
                continue;
            }
            let v = res.to[a as usize] as usize;
            if !in_source_side[v] {
                in_source_side[v] = true;
                queue.push_back(v as u32);
            }
        }
    }
    debug_assert!(!in_source_side[net.sink as usize], "sink reachable from source");

    let boundary_index = match net.lattice {
        None => Vec::new(),
        Some((planes, rays, samples)) => {
            let mut out = Vec::with_capacity(planes * rays);
            for p in 0..planes {
                for r in 0..rays {
                    let mut b: isize = -1;
                    for i in 0..samples {
                        if in_source_side[(p * rays + r) * samples + i] {
                            b = i as isize;
                        }
                    }
                    out.push(b);
                }
            }
            out
        }
    };

    CutResult { in_source_side, flow_value: flow, boundary_index }
}

/// Capacity of the cut induced by a partition (sum over arcs from V1 to V2).
pub fn cut_capacity(net: &FlowNetwork, in_source_side: &[bool]) -> f64 {
    net.arcs
        .iter()
        .filter(|a| in_source_side[a.from as usize] && !in_source_side[a.to as usize])
        .map(|a| a.capacity)
        .sum()
}

/// Exhaustive minimum cut over all partitions; test oracle for small
/// networks. Partitions crossed by an infinite arc are excluded; if none
/// remains the result is infinite.
pub fn brute_force_min_cut(net: &FlowNetwork) -> Result<f64> {
    let n = net.num_nodes - 2;
    if n > 20 {
        return Err(Error::NetworkTooLarge(n));
    }
    let mut best = INF;
    let mut side = vec![false; net.num_nodes];
    side[net.source as usize] = true;
    for mask in 0..(1u32 << n) {
        for v in 0..n {
            side[v] = mask & (1 << v) != 0;
        }
        let cap = cut_capacity(net, &side);
        if cap < best {
            best = cap;
        }
    }
    Ok(best)
}

/// Build the graph for a cost field, cut it, and extract boundary indices.
pub fn segment(cf: &CostField, sp: &SmoothnessParams, force_inner: bool) -> Result<CutResult> {
    let net = build_graph(cf, sp, force_inner)?;
    Ok(max_flow(&net))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cost::LatticeParams;
    use nalgebra::Vector3;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Synthetic cost field over a straight tube: zero inside `wall_radius`,
    /// `outside` beyond it (no FA volume involved).
    fn step_cost_field(
        params: LatticeParams,
        wall_radius: f64,
        outside: f64,
    ) -> crate::cost::CostField {
        let mut points = Vec::with_capacity(params.node_count());
        let mut costs = Vec::with_capacity(params.node_count());
        for p in 0..params.planes {
            for r in 0..params.rays {
                let theta = 2.0 * std::f64::consts::PI * r as f64 / params.rays as f64;
                for i in 0..params.samples {
                    let radius = (i + 1) as f64 * params.delta_mm;
                    points.push(Vector3::new(
                        radius * theta.cos(),
                        radius * theta.sin(),
                        p as f64,
                    ));
                    costs.push(if radius > wall_radius { outside } else { 0.0 });
                }
            }
        }
        crate::cost::CostField { params, points, costs, fa_mean: 0.5 }
    }

    fn uniform_cost_field(params: LatticeParams, value: f64) -> crate::cost::CostField {
        let mut cf = step_cost_field(params, f64::INFINITY, 0.0);
        cf.costs.iter_mut().for_each(|c| *c = value);
        cf
    }

    #[test]
    fn tiny_lattice_node_count() {
        let params = LatticeParams { planes: 2, rays: 2, samples: 2, delta_mm: 0.5 };
        let cf = step_cost_field(params, 0.7, 1.0);
        let net = build_graph(&cf, &SmoothnessParams { delta_x: 1, delta_z: 1 }, false).unwrap();
        assert_eq!(net.num_nodes, 8 + 2);
    }

    #[test]
    fn reference_lattice_counts() {
        // 50 planes x 30 rays x 30 samples.
        let params = LatticeParams { planes: 50, rays: 30, samples: 30, delta_mm: 0.5 };
        let cf = step_cost_field(params, 5.0, 0.8);
        let net = build_graph(&cf, &SmoothnessParams { delta_x: 1, delta_z: 1 }, false).unwrap();
        assert_eq!(net.num_nodes, 45_000 + 2);

        let s = net.source;
        let t = net.sink;
        let samples = 30usize;
        let same_ray_down = |a: &Arc| {
            let (u, v) = (a.from as usize, a.to as usize);
            u / samples == v / samples && v % samples + 1 == u % samples
        };
        let intra_ray =
            net.arcs.iter().filter(|a| a.from != s && a.to != t && same_ray_down(a)).count();
        assert_eq!(intra_ray, 50 * 30 * 29);
        // All structural (non-terminal) arcs are infinite.
        for a in &net.arcs {
            if a.from != s && a.to != t {
                assert!(a.capacity.is_infinite());
            }
        }
    }

    /// Hand-checked terminal arcs on a 2 planes x 2 rays x 3 samples lattice.
    #[test]
    fn terminal_arcs_follow_the_sign_rule() {
        let params = LatticeParams { planes: 2, rays: 2, samples: 3, delta_mm: 0.5 };
        let mut cf = step_cost_field(params, f64::INFINITY, 0.0);
        // Ray costs chosen to exercise d > 0, d < 0 and d = 0.
        // (p,r) = (0,0): (0.5, 0.8, 0.2)  d = +0.3
        // (0,1): (0.4, 0.4, 0.9)          d = 0
        // (1,0): (0.9, 0.1, 0.1)          d = -0.8
        // (1,1): (0.0, 0.7, 0.3)          d = +0.7
        let table = [
            ((0, 0), [0.5, 0.8, 0.2]),
            ((0, 1), [0.4, 0.4, 0.9]),
            ((1, 0), [0.9, 0.1, 0.1]),
            ((1, 1), [0.0, 0.7, 0.3]),
        ];
        for ((p, r), c) in table {
            for (i, v) in c.into_iter().enumerate() {
                cf.costs[params.index(p, r, i)] = v;
            }
        }
        let net = build_graph(&cf, &SmoothnessParams { delta_x: 1, delta_z: 1 }, false).unwrap();
        let s = net.source;
        let t = net.sink;
        let id = |p: usize, r: usize, i: usize| params.index(p, r, i) as u32;

        let find = |from: u32, to: u32| -> Vec<f64> {
            net.arcs
                .iter()
                .filter(|a| a.from == from && a.to == to)
                .map(|a| a.capacity)
                .collect()
        };

        // Innermost from s with c(p,r,0); outermost to t with c(p,r,2).
        assert_eq!(find(s, id(0, 0, 0)), vec![0.5]);
        assert_eq!(find(id(0, 0, 2), t), vec![0.2]);
        assert_eq!(find(s, id(0, 1, 0)), vec![0.4]);
        assert_eq!(find(id(0, 1, 2), t), vec![0.9]);
        assert_eq!(find(s, id(1, 0, 0)), vec![0.9]);
        assert_eq!(find(id(1, 0, 2), t), vec![0.1]);
        assert_eq!(find(s, id(1, 1, 0)), vec![0.0]);
        assert_eq!(find(id(1, 1, 2), t), vec![0.3]);

        // Interior i=1: sign of c(1)-c(0) decides the terminal.
        assert!((find(s, id(0, 0, 1))[0] - 0.3).abs() < 1e-12);
        assert!(find(id(0, 0, 1), t).is_empty());
        assert!(find(s, id(0, 1, 1)).is_empty());
        assert!(find(id(0, 1, 1), t).is_empty());
        assert!(find(s, id(1, 0, 1)).is_empty());
        assert!((find(id(1, 0, 1), t)[0] - 0.8).abs() < 1e-12);
        assert!((find(s, id(1, 1, 1))[0] - 0.7).abs() < 1e-12);
        assert!(find(id(1, 1, 1), t).is_empty());

        // Terminal arc count: 2 per ray + 1 per interior sample with d != 0.
        let terminal =
            net.arcs.iter().filter(|a| a.from == s || a.to == t).count();
        assert_eq!(terminal, 4 * 2 + 3);
    }

    #[test]
    fn delta_exceeding_sample_count_is_rejected() {
        let params = LatticeParams { planes: 3, rays: 4, samples: 5, delta_mm: 0.5 };
        let cf = step_cost_field(params, 1.2, 1.0);
        let sp = SmoothnessParams { delta_x: 5, delta_z: 1 };
        assert!(matches!(build_graph(&cf, &sp, false), Err(Error::InvalidParams(_))));
    }

    #[test]
    fn single_arc_flow() {
        let mut net = FlowNetwork::with_nodes(0);
        net.add_arc(net.source, net.sink, 5.0);
        let cut = max_flow(&net);
        assert_eq!(cut.flow_value, 5.0);
        assert!(cut.in_source_side[net.source as usize]);
        assert!(!cut.in_source_side[net.sink as usize]);
        assert_eq!(brute_force_min_cut(&net).unwrap(), 5.0);
    }

    #[test]
    fn two_disjoint_paths() {
        // s -> a -> t with caps (3,2) and s -> b -> t with caps (4,1).
        let mut net = FlowNetwork::with_nodes(2);
        let (s, t) = (net.source, net.sink);
        net.add_arc(s, 0, 3.0);
        net.add_arc(0, t, 2.0);
        net.add_arc(s, 1, 4.0);
        net.add_arc(1, t, 1.0);
        let cut = max_flow(&net);
        assert_eq!(cut.flow_value, 3.0);
        assert_eq!(brute_force_min_cut(&net).unwrap(), 3.0);
    }

    #[test]
    fn infeasible_brute_force_reports_infinity() {
        let mut net = FlowNetwork::with_nodes(1);
        net.add_arc(net.source, 0, INF);
        net.add_arc(0, net.sink, INF);
        assert_eq!(brute_force_min_cut(&net).unwrap(), INF);
    }

    #[test]
    fn oversized_brute_force_is_rejected() {
        let net = FlowNetwork::with_nodes(21);
        assert!(matches!(brute_force_min_cut(&net), Err(Error::NetworkTooLarge(21))));
    }

    fn random_network(rng: &mut impl Rng, max_nodes: usize) -> FlowNetwork {
        let n = rng.gen_range(2..=max_nodes);
        let mut net = FlowNetwork::with_nodes(n);
        let (s, t) = (net.source, net.sink);
        for v in 0..n as u32 {
            if rng.gen_bool(0.7) {
                net.add_arc(s, v, rng.gen_range(0..=10) as f64);
            }
            if rng.gen_bool(0.7) {
                net.add_arc(v, t, rng.gen_range(0..=10) as f64);
            }
        }
        for u in 0..n as u32 {
            for v in 0..n as u32 {
                if u != v && rng.gen_bool(0.3) {
                    net.add_arc(u, v, rng.gen_range(0..=10) as f64);
                }
            }
        }
        net
    }

    #[test]
    fn max_flow_matches_brute_force_on_200_random_networks() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        for case in 0..200 {
            let net = random_network(&mut rng, 8);
            let cut = max_flow(&net);
            let oracle = brute_force_min_cut(&net).unwrap();
            assert_eq!(cut.flow_value, oracle, "case {case}");
            // Duality: reported partition has exactly this capacity.
            let cap = cut_capacity(&net, &cut.in_source_side);
            assert_eq!(cap, cut.flow_value, "case {case} cut capacity");
        }
    }

    #[test]
    fn step_cost_boundary_lands_at_the_wall() {
        // Wall between samples: zero cost through 2.25 mm, high beyond.
        let params = LatticeParams { planes: 4, rays: 6, samples: 10, delta_mm: 0.5 };
        let cf = step_cost_field(params, 2.25, 0.8);
        let samples_max = params.samples - 1;
        let sp = SmoothnessParams { delta_x: samples_max, delta_z: samples_max };
        let cut = segment(&cf, &sp, false).unwrap();
        // First sample past the wall has index floor(2.25/0.5) = 4.
        for (k, &b) in cut.boundary_index.iter().enumerate() {
            assert!((b - 4).abs() <= 1, "ray {k}: boundary {b}");
        }
    }

    #[test]
    fn zero_delta_forces_constant_boundary_per_plane() {
        let params = LatticeParams { planes: 3, rays: 8, samples: 12, delta_mm: 0.5 };
        let mut cf = step_cost_field(params, 2.75, 0.8);
        // Jitter the costs a little per ray; the hard constraint must still
        // flatten the boundary within each plane.
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for c in cf.costs.iter_mut() {
            if *c > 0.0 {
                *c += rng.gen_range(-0.05..0.05);
            }
        }
        let cut = segment(&cf, &SmoothnessParams { delta_x: 0, delta_z: 11 }, false).unwrap();
        for p in 0..params.planes {
            let row = &cut.boundary_index[p * params.rays..(p + 1) * params.rays];
            assert!(row.iter().all(|&b| b == row[0]), "plane {p}: {row:?}");
        }
    }

    #[test]
    fn all_zero_costs_cut_trivially() {
        let params = LatticeParams { planes: 3, rays: 5, samples: 6, delta_mm: 0.5 };
        let cf = uniform_cost_field(params, 0.0);
        let cut = segment(&cf, &SmoothnessParams { delta_x: 2, delta_z: 2 }, false).unwrap();
        assert_eq!(cut.flow_value, 0.0);
        assert!(cut.boundary_index.iter().all(|&b| b == -1));
        let on_source_side =
            cut.in_source_side.iter().filter(|&&b| b).count();
        assert_eq!(on_source_side, 1); // just s
    }

    fn random_cost_field(rng: &mut impl Rng) -> (crate::cost::CostField, SmoothnessParams) {
        let params = LatticeParams {
            planes: rng.gen_range(2..5),
            rays: rng.gen_range(3..7),
            samples: rng.gen_range(3..9),
            delta_mm: 0.5,
        };
        let mut cf = step_cost_field(params, f64::INFINITY, 0.0);
        for c in cf.costs.iter_mut() {
            *c = (rng.gen_range(0..=20) as f64) / 10.0;
        }
        let sp = SmoothnessParams {
            delta_x: rng.gen_range(0..params.samples),
            delta_z: rng.gen_range(0..params.samples),
        };
        (cf, sp)
    }

    #[test]
    fn random_battery_monotone_rays_and_smoothness_bounds() {
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        for case in 0..60 {
            let (cf, sp) = random_cost_field(&mut rng);
            let lp = cf.params;
            let net = build_graph(&cf, &sp, false).unwrap();
            let cut = max_flow(&net);

            // Flow/cut duality on every run.
            let cap = cut_capacity(&net, &cut.in_source_side);
            assert!(
                (cap - cut.flow_value).abs() <= 1e-9 * (1.0 + cap.abs()),
                "case {case}: flow {} vs cut {}",
                cut.flow_value,
                cap
            );

            // Rays are downward-closed.
            for p in 0..lp.planes {
                for r in 0..lp.rays {
                    let b = cut.boundary_index[p * lp.rays + r];
                    for i in 0..lp.samples {
                        let inside = cut.in_source_side[lp.index(p, r, i)];
                        assert_eq!(inside, (i as isize) <= b, "case {case} p{p} r{r} i{i}");
                    }
                }
            }

            // Smoothness bounds, including the ring wrap. An empty ray
            // (b = -1) forces its neighbors empty too.
            let b = |p: usize, r: usize| cut.boundary_index[p * lp.rays + r];
            let check = |x: isize, y: isize, delta: usize, what: &str| {
                if x < 0 || y < 0 {
                    assert_eq!(x, y, "case {case}: empty ray beside non-empty ({what})");
                } else {
                    assert!(
                        (x - y).unsigned_abs() <= delta,
                        "case {case}: {what} smoothness |{x} - {y}| > {delta}"
                    );
                }
            };
            for p in 0..lp.planes {
                for r in 0..lp.rays {
                    check(b(p, r), b(p, (r + 1) % lp.rays), sp.delta_x, "ray");
                    if p + 1 < lp.planes {
                        check(b(p, r), b(p + 1, r), sp.delta_z, "plane");
                    }
                }
            }
        }
    }

    #[test]
    fn identical_inputs_give_identical_partitions() {
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        let (cf, sp) = random_cost_field(&mut rng);
        let a = segment(&cf, &sp, false).unwrap();
        let b = segment(&cf, &sp, false).unwrap();
        assert_eq!(a.in_source_side, b.in_source_side);
        assert_eq!(a.boundary_index, b.boundary_index);
        assert_eq!(a.flow_value, b.flow_value);
    }

    #[test]
    fn force_inner_keeps_every_ray_nonempty() {
        let params = LatticeParams { planes: 3, rays: 5, samples: 6, delta_mm: 0.5 };
        let cf = uniform_cost_field(params, 0.0);
        let cut = segment(&cf, &SmoothnessParams { delta_x: 2, delta_z: 2 }, true).unwrap();
        assert!(cut.boundary_index.iter().all(|&b| b >= 0));
    }

    #[test]
    fn edge_dump_uses_inf_literal() {
        let mut net = FlowNetwork::with_nodes(1);
        net.add_arc(net.source, 0, 2.5);
        net.add_arc(0, net.sink, INF);
        let mut buf = Vec::new();
        net.dump_edges(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text, "1 0 2.5\n0 2 INF\n");
    }
}
