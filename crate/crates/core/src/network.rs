//! Road network: locations, arcs, all-pairs shortest travel times.
//!
//! Locations are street intersections with planar coordinates in meters.
//! Travel times are integer seconds so that schedules computed at decision
//! time coincide exactly with the times vehicles realize when they drive the
//! plan arc by arc.
//!
//! Construction keeps only the largest strongly connected component of the
//! input graph, so every location can reach every other one.

use std::cmp::Reverse;
use std::collections::{BinaryHeap, HashMap};

use thiserror::Error;

/// Travel time / absolute simulation time, in whole seconds.
pub type Seconds = u64;

/// Dense index of a location inside a [`RoadNetwork`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Location(pub u32);

impl Location {
    #[inline]
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

/// A node line of the network file: external id plus coordinates in meters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NodeRecord {
    pub id: u64,
    pub x: f64,
    pub y: f64,
}

/// A directed arc with its travel time.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ArcRecord {
    pub from: u64,
    pub to: u64,
    pub seconds: i64,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum NetworkError {
    #[error("network has no nodes")]
    Empty,
    #[error("duplicate node id {0}")]
    DuplicateNode(u64),
    #[error("arc {from}->{to} references unknown node {missing}")]
    UnknownEndpoint { from: u64, to: u64, missing: u64 },
    #[error("arc {from}->{to} has non-positive travel time {seconds}")]
    NonPositiveTime { from: u64, to: u64, seconds: i64 },
    #[error("largest strongly connected component has {0} node(s), need at least 2")]
    TooSmall(usize),
    #[error("unknown location {0}")]
    UnknownLocation(u64),
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
}

#[derive(Debug, Clone, Copy)]
struct Arc {
    head: u32,
    seconds: Seconds,
    meters: f64,
}

/// Strongly connected road graph with precomputed shortest travel times.
#[derive(Debug, Clone)]
pub struct RoadNetwork {
    ids: Vec<u64>,
    coords: Vec<(f64, f64)>,
    index: HashMap<u64, Location>,
    adjacency: Vec<Vec<Arc>>,
    time: Vec<Seconds>,
    next_hop: Vec<u32>,
    meters: Vec<f64>,
}

/// Builds a network from node and arc records, restricted to the largest
/// strongly connected component.
pub fn load_network(nodes: &[NodeRecord], arcs: &[ArcRecord]) -> Result<RoadNetwork, NetworkError> {
    if nodes.is_empty() {
        return Err(NetworkError::Empty);
    }
    let mut raw_index = HashMap::with_capacity(nodes.len());
    for (i, n) in nodes.iter().enumerate() {
        if raw_index.insert(n.id, i).is_some() {
            return Err(NetworkError::DuplicateNode(n.id));
        }
    }
    let mut raw_adj: Vec<Vec<(usize, Seconds)>> = vec![Vec::new(); nodes.len()];
    for a in arcs {
        let from = *raw_index.get(&a.from).ok_or(NetworkError::UnknownEndpoint {
            from: a.from,
            to: a.to,
            missing: a.from,
        })?;
        let to = *raw_index.get(&a.to).ok_or(NetworkError::UnknownEndpoint {
            from: a.from,
            to: a.to,
            missing: a.to,
        })?;
        if a.seconds <= 0 {
            return Err(NetworkError::NonPositiveTime {
                from: a.from,
                to: a.to,
                seconds: a.seconds,
            });
        }
        if from != to {
            raw_adj[from].push((to, a.seconds as Seconds));
        }
    }

    let keep = largest_scc(&raw_adj);
    if keep.len() < 2 {
        return Err(NetworkError::TooSmall(keep.len()));
    }
    let mut remap = vec![u32::MAX; nodes.len()];
    for (new, &old) in keep.iter().enumerate() {
        remap[old] = new as u32;
    }

    let ids: Vec<u64> = keep.iter().map(|&i| nodes[i].id).collect();
    let coords: Vec<(f64, f64)> = keep.iter().map(|&i| (nodes[i].x, nodes[i].y)).collect();
    let index = ids
        .iter()
        .enumerate()
        .map(|(i, &id)| (id, Location(i as u32)))
        .collect();

    let mut adjacency: Vec<Vec<Arc>> = vec![Vec::new(); keep.len()];
    for &old in &keep {
        let tail = remap[old] as usize;
        for &(head_old, seconds) in &raw_adj[old] {
            let head = remap[head_old];
            if head == u32::MAX {
                continue;
            }
            let (x0, y0) = coords[tail];
            let (x1, y1) = coords[head as usize];
            let meters = ((x1 - x0).powi(2) + (y1 - y0).powi(2)).sqrt();
            // Parallel arcs: keep the fastest.
            match adjacency[tail].iter_mut().find(|a| a.head == head) {
                Some(existing) if existing.seconds <= seconds => {}
                Some(existing) => {
                    existing.seconds = seconds;
                    existing.meters = meters;
                }
                None => adjacency[tail].push(Arc { head, seconds, meters }),
            }
        }
        adjacency[tail].sort_by_key(|a| a.head);
    }

    let n = keep.len();
    let mut net = RoadNetwork {
        ids,
        coords,
        index,
        adjacency,
        time: vec![0; n * n],
        next_hop: vec![0; n * n],
        meters: vec![0.0; n * n],
    };
    for source in 0..n {
        net.shortest_paths_from(source);
    }
    Ok(net)
}

/// Kosaraju over the raw adjacency; returns the members of the largest
/// component in ascending index order. Ties go to the component holding the
/// smallest node index.
fn largest_scc(adj: &[Vec<(usize, Seconds)>]) -> Vec<usize> {
    let n = adj.len();
    let mut order = Vec::with_capacity(n);
    let mut seen = vec![false; n];
    for root in 0..n {
        if seen[root] {
            continue;
        }
        seen[root] = true;
        let mut stack = vec![(root, 0usize)];
        while let Some((node, edge)) = stack.last_mut() {
            if let Some(&(next, _)) = adj[*node].get(*edge) {
                *edge += 1;
                if !seen[next] {
                    seen[next] = true;
                    stack.push((next, 0));
                }
            } else {
                order.push(*node);
                stack.pop();
            }
        }
    }

    let mut rev: Vec<Vec<usize>> = vec![Vec::new(); n];
    for (u, arcs) in adj.iter().enumerate() {
        for &(v, _) in arcs {
            rev[v].push(u);
        }
    }
    let mut comp = vec![usize::MAX; n];
    let mut sizes = Vec::new();
    for &root in order.iter().rev() {
        if comp[root] != usize::MAX {
            continue;
        }
        let id = sizes.len();
        let mut size = 0;
        let mut stack = vec![root];
        comp[root] = id;
        while let Some(u) = stack.pop() {
            size += 1;
            for &v in &rev[u] {
                if comp[v] == usize::MAX {
                    comp[v] = id;
                    stack.push(v);
                }
            }
        }
        sizes.push(size);
    }

    let mut best = usize::MAX;
    for node in 0..n {
        let c = comp[node];
        if best == usize::MAX || sizes[c] > sizes[best] {
            best = c;
        }
    }
    (0..n).filter(|&i| comp[i] == best).collect()
}

impl RoadNetwork {
    /// Square-lattice network with bidirectional arcs between 4-neighbours.
    /// External ids are `row * cols + col`.
    pub fn grid(rows: usize, cols: usize, arc_seconds: Seconds, spacing_m: f64) -> Result<Self, NetworkError> {
        let mut nodes = Vec::with_capacity(rows * cols);
        let mut arcs = Vec::new();
        for r in 0..rows {
            for c in 0..cols {
                let id = (r * cols + c) as u64;
                nodes.push(NodeRecord {
                    id,
                    x: c as f64 * spacing_m,
                    y: r as f64 * spacing_m,
                });
                let mut link = |other: u64| {
                    arcs.push(ArcRecord { from: id, to: other, seconds: arc_seconds as i64 });
                    arcs.push(ArcRecord { from: other, to: id, seconds: arc_seconds as i64 });
                };
                if c + 1 < cols {
                    link(id + 1);
                }
                if r + 1 < rows {
                    link(id + cols as u64);
                }
            }
        }
        load_network(&nodes, &arcs)
    }

    /// Parses the plain-text network format: `N <id> <x_m> <y_m>` and
    /// `E <from> <to> <seconds>` lines, `#` starts a comment.
    pub fn parse(text: &str) -> Result<Self, NetworkError> {
        let mut nodes = Vec::new();
        let mut arcs = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            let content = raw.split('#').next().unwrap_or("").trim();
            if content.is_empty() {
                continue;
            }
            let fields: Vec<&str> = content.split_whitespace().collect();
            let err = |msg: String| NetworkError::Parse { line, msg };
            match fields.as_slice() {
                ["N", id, x, y] => nodes.push(NodeRecord {
                    id: id.parse().map_err(|e| err(format!("node id {id:?}: {e}")))?,
                    x: x.parse().map_err(|e| err(format!("x {x:?}: {e}")))?,
                    y: y.parse().map_err(|e| err(format!("y {y:?}: {e}")))?,
                }),
                ["E", from, to, secs] => arcs.push(ArcRecord {
                    from: from.parse().map_err(|e| err(format!("arc tail {from:?}: {e}")))?,
                    to: to.parse().map_err(|e| err(format!("arc head {to:?}: {e}")))?,
                    seconds: secs.parse().map_err(|e| err(format!("seconds {secs:?}: {e}")))?,
                }),
                _ => return Err(err(format!("unrecognised line {content:?}"))),
            }
        }
        load_network(&nodes, &arcs)
    }

    /// Serialises back into the text format accepted by [`RoadNetwork::parse`].
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for (i, id) in self.ids.iter().enumerate() {
            let (x, y) = self.coords[i];
            out.push_str(&format!("N {id} {x} {y}\n"));
        }
        for (tail, arcs) in self.adjacency.iter().enumerate() {
            for a in arcs {
                out.push_str(&format!("E {} {} {}\n", self.ids[tail], self.ids[a.head as usize], a.seconds));
            }
        }
        out
    }

    fn shortest_paths_from(&mut self, source: usize) {
        let n = self.len();
        let row = source * n;
        let mut dist = vec![Seconds::MAX; n];
        let mut meters = vec![0.0f64; n];
        let mut first = vec![u32::MAX; n];
        let mut done = vec![false; n];
        let mut heap = BinaryHeap::new();
        dist[source] = 0;
        first[source] = source as u32;
        heap.push(Reverse((0, source as u32)));
        while let Some(Reverse((d, u))) = heap.pop() {
            let u = u as usize;
            if done[u] {
                continue;
            }
            done[u] = true;
            for a in &self.adjacency[u] {
                let v = a.head as usize;
                let nd = d + a.seconds;
                if nd < dist[v] {
                    dist[v] = nd;
                    meters[v] = meters[u] + a.meters;
                    first[v] = if u == source { a.head } else { first[u] };
                    heap.push(Reverse((nd, a.head)));
                }
            }
        }
        self.time[row..row + n].copy_from_slice(&dist);
        self.next_hop[row..row + n].copy_from_slice(&first);
        self.meters[row..row + n].copy_from_slice(&meters);
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn locations(&self) -> impl ExactSizeIterator<Item = Location> + '_ {
        (0..self.ids.len() as u32).map(Location)
    }

    /// Resolves an external node id.
    pub fn location(&self, id: u64) -> Result<Location, NetworkError> {
        self.index.get(&id).copied().ok_or(NetworkError::UnknownLocation(id))
    }

    pub fn external_id(&self, loc: Location) -> u64 {
        self.ids[loc.index()]
    }

    pub fn coords(&self, loc: Location) -> (f64, f64) {
        self.coords[loc.index()]
    }

    pub fn contains(&self, loc: Location) -> bool {
        loc.index() < self.ids.len()
    }

    fn check(&self, loc: Location) -> Result<(), NetworkError> {
        if self.contains(loc) {
            Ok(())
        } else {
            Err(NetworkError::UnknownLocation(loc.0 as u64))
        }
    }

    /// Shortest travel time between two locations.
    pub fn travel_time(&self, from: Location, to: Location) -> Result<Seconds, NetworkError> {
        self.check(from)?;
        self.check(to)?;
        Ok(self.tt(from, to))
    }

    /// Unchecked variant of [`travel_time`](Self::travel_time); panics on an
    /// out-of-range location.
    #[inline]
    pub fn tt(&self, from: Location, to: Location) -> Seconds {
        self.time[from.index() * self.len() + to.index()]
    }

    /// First location after `from` on the shortest path to `to`
    /// (`from` itself when they coincide).
    #[inline]
    pub fn next_hop(&self, from: Location, to: Location) -> Location {
        Location(self.next_hop[from.index() * self.len() + to.index()])
    }

    /// Length in meters of the shortest-time path.
    #[inline]
    pub fn path_meters(&self, from: Location, to: Location) -> f64 {
        self.meters[from.index() * self.len() + to.index()]
    }

    /// Travel time and length of the direct arc `from -> to`, if present.
    pub fn arc(&self, from: Location, to: Location) -> Option<(Seconds, f64)> {
        self.adjacency[from.index()]
            .iter()
            .find(|a| a.head == to.0)
            .map(|a| (a.seconds, a.meters))
    }

    /// Outgoing arcs as `(head, seconds)`.
    pub fn out_arcs(&self, from: Location) -> impl Iterator<Item = (Location, Seconds)> + '_ {
        self.adjacency[from.index()].iter().map(|a| (Location(a.head), a.seconds))
    }

    /// Candidates whose location is reachable from `center_loc` within
    /// `radius` seconds, excluding the entity keyed `center`.
    pub fn neighbors_within<K: Copy + PartialEq>(
        &self,
        center: K,
        center_loc: Location,
        radius: Seconds,
        candidates: &[(K, Location)],
    ) -> Result<Vec<K>, NetworkError> {
        self.check(center_loc)?;
        let mut out = Vec::new();
        for &(key, loc) in candidates {
            self.check(loc)?;
            if key != center && self.tt(center_loc, loc) <= radius {
                out.push(key);
            }
        }
        Ok(out)
    }
}

/// Coarse spatial partition of locations into square cells.
#[derive(Debug, Clone)]
pub struct Zoning {
    zone: Vec<u32>,
    count: u32,
}

impl Zoning {
    pub fn new(net: &RoadNetwork, cell_m: f64) -> Self {
        let cell_m = if cell_m > 0.0 { cell_m } else { f64::INFINITY };
        let (min_x, min_y) = net
            .coords
            .iter()
            .fold((f64::INFINITY, f64::INFINITY), |(a, b), &(x, y)| (a.min(x), b.min(y)));
        let cells: Vec<(u32, u32)> = net
            .coords
            .iter()
            .map(|&(x, y)| {
                let cx = ((x - min_x) / cell_m).floor();
                let cy = ((y - min_y) / cell_m).floor();
                (if cx.is_finite() { cx as u32 } else { 0 }, if cy.is_finite() { cy as u32 } else { 0 })
            })
            .collect();
        let cols = cells.iter().map(|c| c.0).max().unwrap_or(0) + 1;
        let rows = cells.iter().map(|c| c.1).max().unwrap_or(0) + 1;
        Zoning {
            zone: cells.iter().map(|&(cx, cy)| cy * cols + cx).collect(),
            count: rows * cols,
        }
    }

    #[inline]
    pub fn zone_of(&self, loc: Location) -> u32 {
        self.zone[loc.index()]
    }

    pub fn count(&self) -> u32 {
        self.count
    }
}
