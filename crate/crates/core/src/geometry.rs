//! Discrete metric geometry of the regular part of the parameter window.
//!
//! Grid nodes too close to a singular curve are removed, the rest are joined
//! by 8-neighbour edges weighted by Euclidean length. On that graph we measure
//! `d_x`, the distance to the singular curves, and `m_x`, the length of the
//! shortest loop at `x` that winds an odd number of times around some hole.

use crate::grid::{dist, Grid, Point2, Window};
use crate::singular::{SingularPolyline, SingularSet};
use serde::{Deserialize, Serialize};
use std::cmp::Ordering;
use std::collections::{BinaryHeap, VecDeque};
use thiserror::Error;

/// Default removal distance around singular curves, in cell diagonals.
pub const DEFAULT_CLEARANCE_CELLS: f64 = 1.5;
/// Removal distance around isolated singular points, in cell diagonals.
pub const POINT_CLEARANCE_CELLS: f64 = 0.5;
/// Additive slack on the discrete loop length, in cell diagonals.
pub const LOOP_ERROR_CELLS: f64 = 4.0;
/// Edges passing this close to an isolated singular point are dropped.
const EDGE_POINT_TOL: f64 = 1e-9;

pub const NO_COMPONENT: u32 = u32::MAX;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeometryError {
    #[error("x-region empty: every grid node lies within clearance of the singular set")]
    RegionEmpty,
    #[error("clearance {clearance} is smaller than one cell diagonal ({diagonal})")]
    ClearanceTooSmall { clearance: f64, diagonal: f64 },
    #[error("point ({0}, {1}) lies outside the window")]
    OutsideWindow(f64, f64),
    #[error("x-region: grid node nearest to ({0}, {1}) lies within clearance of the singular set")]
    NodeRemoved(f64, f64),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Removal {
    Kept,
    Sigma1,
    Sigma2,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HoleKind {
    /// An isolated singular value.
    Point,
    /// A bounded blob of removed nodes away from the window boundary.
    Void,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Hole {
    pub anchor: Point2,
    pub kind: HoleKind,
    /// Components in which a loop can wind around this hole.
    pub components: Vec<u32>,
}

#[derive(Clone, Debug)]
pub struct RegionGraph {
    pub grid: Grid,
    pub clearance: f64,
    pub removal: Vec<Removal>,
    pub component: Vec<u32>,
    pub component_sizes: Vec<usize>,
    pub holes: Vec<Hole>,
    sigma1: Vec<SingularPolyline>,
    points: Vec<Point2>,
}

/// Min-heap entry for Dijkstra.
#[derive(Clone, Copy, PartialEq)]
struct Entry(f64, usize);

impl Eq for Entry {}

impl Ord for Entry {
    fn cmp(&self, other: &Self) -> Ordering {
        other.0.total_cmp(&self.0).then_with(|| other.1.cmp(&self.1))
    }
}

impl PartialOrd for Entry {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// Dijkstra over `n` states from weighted sources. `adj` pushes the
/// `(neighbour, weight)` pairs of a state into the buffer.
pub fn dijkstra<F>(n: usize, sources: &[(usize, f64)], mut adj: F) -> (Vec<f64>, Vec<usize>)
where
    F: FnMut(usize, &mut Vec<(usize, f64)>),
{
    let mut d = vec![f64::INFINITY; n];
    let mut parent = vec![usize::MAX; n];
    let mut heap = BinaryHeap::new();
    for &(s, d0) in sources {
        if d0 < d[s] {
            d[s] = d0;
            heap.push(Entry(d0, s));
        }
    }
    let mut buf = Vec::with_capacity(8);
    while let Some(Entry(du, u)) = heap.pop() {
        if du > d[u] {
            continue;
        }
        buf.clear();
        adj(u, &mut buf);
        for &(v, w) in &buf {
            let nd = du + w;
            if nd < d[v] {
                d[v] = nd;
                parent[v] = u;
                heap.push(Entry(nd, v));
            }
        }
    }
    (d, parent)
}

/// A horizontal ray from `origin` towards `+inf` (`dir = 1`) or `-inf`.
#[derive(Clone, Copy, Debug)]
pub struct Ray {
    pub origin: Point2,
    pub dir: f64,
}

impl Ray {
    /// Whether the segment `[a, b]` crosses the ray. Half-open in the
    /// vertical coordinate, so a path through a vertex on the ray's line is
    /// counted once.
    pub fn crosses(&self, a: Point2, b: Point2) -> bool {
        let h = self.origin;
        if (a[1] > h[1]) == (b[1] > h[1]) {
            return false;
        }
        let t = (h[1] - a[1]) / (b[1] - a[1]);
        let xi = a[0] + t * (b[0] - a[0]);
        self.dir * (xi - h[0]) > 0.0
    }
}

impl RegionGraph {
    pub fn window(&self) -> Window {
        self.grid.window
    }

    pub fn sigma1(&self) -> &[SingularPolyline] {
        &self.sigma1
    }

    #[inline]
    pub fn is_kept(&self, idx: usize) -> bool {
        self.removal[idx] == Removal::Kept
    }

    pub fn n_components(&self) -> usize {
        self.component_sizes.len()
    }

    pub fn component_of(&self, idx: usize) -> Option<u32> {
        let c = self.component[idx];
        (c != NO_COMPONENT).then_some(c)
    }

    pub fn kept_count(&self) -> usize {
        self.removal.iter().filter(|r| **r == Removal::Kept).count()
    }

    fn edge_ok(&self, a: Point2, b: Point2) -> bool {
        self.points
            .iter()
            .all(|&h| crate::grid::point_segment(h, a, b).0 > EDGE_POINT_TOL)
    }

    /// Pushes the graph neighbours of a kept node with their edge weights.
    pub fn edges_into(&self, idx: usize, out: &mut Vec<(usize, f64)>) {
        let a = self.grid.node_coord(idx);
        for n in self.grid.neighbors8(idx) {
            if !self.is_kept(n) {
                continue;
            }
            let b = self.grid.node_coord(n);
            if self.edge_ok(a, b) {
                out.push((n, dist(a, b)));
            }
        }
    }

    pub fn edges(&self, idx: usize) -> Vec<(usize, f64)> {
        let mut v = Vec::with_capacity(8);
        self.edges_into(idx, &mut v);
        v
    }

    /// Nearest grid node to `x`, which must be kept.
    pub fn snap(&self, x: Point2) -> Result<usize, GeometryError> {
        let w = self.grid.window;
        let tol = 1e-9 * w.diagonal();
        if !w.contains(x, tol) {
            return Err(GeometryError::OutsideWindow(x[0], x[1]));
        }
        let idx = self.grid.snap(x);
        if !self.is_kept(idx) {
            return Err(GeometryError::NodeRemoved(x[0], x[1]));
        }
        Ok(idx)
    }

    /// Holes that can be wound around inside component `c`.
    pub fn holes_in(&self, c: u32) -> Vec<usize> {
        (0..self.holes.len())
            .filter(|&k| self.holes[k].components.contains(&c))
            .collect()
    }

    /// Labels connected components of the doubled graph cut along `ray`.
    fn doubled_labels(&self, ray: &Ray) -> Vec<u32> {
        let n = self.grid.len();
        let mut label = vec![NO_COMPONENT; 2 * n];
        let mut next = 0;
        let mut queue = VecDeque::new();
        let mut buf = Vec::with_capacity(8);
        for start in 0..2 * n {
            if label[start] != NO_COMPONENT || !self.is_kept(start / 2) {
                continue;
            }
            label[start] = next;
            queue.push_back(start);
            while let Some(s) = queue.pop_front() {
                let (u, sheet) = (s / 2, s % 2);
                let a = self.grid.node_coord(u);
                buf.clear();
                self.edges_into(u, &mut buf);
                for &(v, _) in &buf {
                    let flip = ray.crosses(a, self.grid.node_coord(v)) as usize;
                    let t = 2 * v + (sheet ^ flip);
                    if label[t] == NO_COMPONENT {
                        label[t] = next;
                        queue.push_back(t);
                    }
                }
            }
            next += 1;
        }
        label
    }
}

fn mark_sigma1(grid: &Grid, pl: &SingularPolyline, clearance: f64, removal: &mut [Removal]) {
    let h = grid.spacing();
    let w = grid.window;
    let segs: Vec<(Point2, Point2)> = if pl.vertices.len() == 1 {
        vec![(pl.vertices[0], pl.vertices[0])]
    } else {
        pl.vertices.windows(2).map(|s| (s[0], s[1])).collect()
    };
    for (a, b) in segs {
        let lo = [a[0].min(b[0]) - clearance, a[1].min(b[1]) - clearance];
        let hi = [a[0].max(b[0]) + clearance, a[1].max(b[1]) + clearance];
        let range = |lo: f64, hi: f64, o: f64, h: f64, n: usize| {
            let i0 = ((lo - o) / h).floor().max(0.0) as usize;
            let i1 = (((hi - o) / h).ceil().max(0.0) as usize).min(n);
            i0..=i1
        };
        for j in range(lo[1], hi[1], w.q2.0, h[1], grid.cells[1]) {
            for i in range(lo[0], hi[0], w.q1.0, h[0], grid.cells[0]) {
                let idx = grid.index(i, j);
                if removal[idx] == Removal::Sigma1 {
                    continue;
                }
                if crate::grid::point_segment(grid.coord(i, j), a, b).0 <= clearance {
                    removal[idx] = Removal::Sigma1;
                }
            }
        }
    }
}

/// Builds the region graph: removes nodes within `clearance` of the
/// singular curves, labels components, and registers holes.
pub fn build_region_graph(
    window: Window,
    resolution: [usize; 2],
    singular: &SingularSet,
    clearance: f64,
) -> Result<RegionGraph, GeometryError> {
    let grid = Grid::new(window, resolution);
    let diag = grid.cell_diagonal();
    if clearance < diag * (1.0 - 1e-12) {
        return Err(GeometryError::ClearanceTooSmall { clearance, diagonal: diag });
    }
    let n = grid.len();
    let mut removal = vec![Removal::Kept; n];
    for pl in &singular.sigma1 {
        mark_sigma1(&grid, pl, clearance, &mut removal);
    }
    let point_radius = POINT_CLEARANCE_CELLS * diag;
    let mut point_nodes = Vec::new();
    for &h in &singular.sigma2 {
        let c = grid.snap(h);
        let (ci, cj) = grid.ij(c);
        let mut nodes = Vec::new();
        for j in cj.saturating_sub(1)..=(cj + 1).min(grid.cells[1]) {
            for i in ci.saturating_sub(1)..=(ci + 1).min(grid.cells[0]) {
                let idx = grid.index(i, j);
                if dist(grid.coord(i, j), h) <= point_radius {
                    if removal[idx] == Removal::Kept {
                        removal[idx] = Removal::Sigma2;
                    }
                    nodes.push(idx);
                }
            }
        }
        point_nodes.push(nodes);
    }

    let mut g = RegionGraph {
        grid,
        clearance,
        removal,
        component: vec![NO_COMPONENT; n],
        component_sizes: Vec::new(),
        holes: Vec::new(),
        sigma1: singular.sigma1.clone(),
        points: singular.sigma2.clone(),
    };
    if g.kept_count() == 0 {
        return Err(GeometryError::RegionEmpty);
    }

    // Components of the kept graph.
    let mut queue = VecDeque::new();
    let mut buf = Vec::with_capacity(8);
    for start in 0..n {
        if !g.is_kept(start) || g.component[start] != NO_COMPONENT {
            continue;
        }
        let id = g.component_sizes.len() as u32;
        g.component[start] = id;
        let mut size = 0;
        queue.push_back(start);
        while let Some(u) = queue.pop_front() {
            size += 1;
            buf.clear();
            g.edges_into(u, &mut buf);
            for &(v, _) in &buf {
                if g.component[v] == NO_COMPONENT {
                    g.component[v] = id;
                    queue.push_back(v);
                }
            }
        }
        g.component_sizes.push(size);
    }

    // Holes: isolated singular points, then enclosed voids of removed nodes.
    let mut anchors: Vec<(Point2, HoleKind)> =
        singular.sigma2.iter().map(|&h| (h, HoleKind::Point)).collect();
    let mut seen = vec![false; n];
    for nodes in &point_nodes {
        for &k in nodes {
            seen[k] = true;
        }
    }
    for start in 0..n {
        if g.is_kept(start) || seen[start] {
            continue;
        }
        let mut blob = Vec::new();
        let mut touches = false;
        let mut has_point = false;
        seen[start] = true;
        queue.push_back(start);
        while let Some(u) = queue.pop_front() {
            blob.push(u);
            touches |= g.grid.on_boundary(u);
            has_point |= g.removal[u] == Removal::Sigma2;
            for v in g.grid.neighbors4(u) {
                if !g.is_kept(v) && !seen[v] {
                    seen[v] = true;
                    queue.push_back(v);
                }
            }
        }
        if touches || has_point {
            continue;
        }
        let m = blob.len() as f64;
        let cx = blob.iter().map(|&k| g.grid.node_coord(k)[0]).sum::<f64>() / m;
        let cy = blob.iter().map(|&k| g.grid.node_coord(k)[1]).sum::<f64>() / m;
        let anchor = blob
            .iter()
            .map(|&k| g.grid.node_coord(k))
            .min_by(|a, b| dist(*a, [cx, cy]).total_cmp(&dist(*b, [cx, cy])))
            .unwrap();
        anchors.push((anchor, HoleKind::Void));
    }
    for (anchor, kind) in anchors {
        let labels = g.doubled_labels(&Ray { origin: anchor, dir: 1.0 });
        let mut reps = vec![usize::MAX; g.component_sizes.len()];
        for k in 0..n {
            if let Some(c) = g.component_of(k) {
                if reps[c as usize] == usize::MAX {
                    reps[c as usize] = k;
                }
            }
        }
        let components = reps
            .iter()
            .enumerate()
            .filter(|(_, &r)| r != usize::MAX && labels[2 * r] == labels[2 * r + 1])
            .map(|(c, _)| c as u32)
            .collect();
        g.holes.push(Hole { anchor, kind, components });
    }
    Ok(g)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DistanceReport {
    pub value: f64,
    /// No singular curve in the window: `value` is the distance to the
    /// window boundary, a lower bound for the true distance.
    pub truncated: bool,
    pub witness: Option<Point2>,
    pub node: usize,
    pub snapped: Point2,
}

/// Graph distance from every kept node to the singular curves, seeded with
/// exact Euclidean distances at nodes next to removed ones.
pub fn distance_field(g: &RegionGraph) -> Vec<f64> {
    let n = g.grid.len();
    let mut sources = Vec::new();
    for k in 0..n {
        if !g.is_kept(k) {
            continue;
        }
        if g.grid.neighbors8(k).any(|v| g.removal[v] == Removal::Sigma1) {
            let q = g.grid.node_coord(k);
            let d = g
                .sigma1
                .iter()
                .map(|pl| pl.distance(q).0)
                .fold(f64::INFINITY, f64::min);
            sources.push((k, d));
        }
    }
    dijkstra(n, &sources, |u, out| g.edges_into(u, out)).0
}

/// Distance from the grid node nearest `x` to the singular curves.
pub fn distance_to_sigma1(g: &RegionGraph, x: Point2) -> Result<DistanceReport, GeometryError> {
    let node = g.snap(x)?;
    let q = g.grid.node_coord(node);
    let nearest = g
        .sigma1
        .iter()
        .map(|pl| pl.distance(q))
        .fold(None, |best: Option<(f64, Point2)>, c| match best {
            Some(b) if b.0 <= c.0 => Some(b),
            _ => Some(c),
        });
    Ok(match nearest {
        Some((value, w)) => DistanceReport { value, truncated: false, witness: Some(w), node, snapped: q },
        None => DistanceReport {
            value: g.grid.window.boundary_distance(q),
            truncated: true,
            witness: None,
            node,
            snapped: q,
        },
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LoopReport {
    pub m_x: f64,
    pub error_bound: f64,
    /// `m_x - error_bound`, the value that enters the radius.
    pub m_x_lower: f64,
    /// Closed polyline from `x` back to `x`; empty when `m_x = 0`.
    pub witness: Vec<Point2>,
    pub hole: Option<usize>,
    /// Ray crossings of the witness loop (always odd).
    pub crossings: usize,
    pub unreachable_holes: Vec<usize>,
}

impl LoopReport {
    fn zero() -> Self {
        LoopReport {
            m_x: 0.0,
            error_bound: 0.0,
            m_x_lower: 0.0,
            witness: Vec::new(),
            hole: None,
            crossings: 0,
            unreachable_holes: Vec::new(),
        }
    }

    pub fn is_zero(&self) -> bool {
        self.hole.is_none()
    }
}

/// Shortest loop at `x` with odd winding around one of the holes of its
/// component, by Dijkstra on the doubled graph of each hole.
pub fn shortest_noncontractible_loop(g: &RegionGraph, x: Point2) -> Result<LoopReport, GeometryError> {
    let node = g.snap(x)?;
    let comp = g.component[node];
    let holes = g.holes_in(comp);
    if holes.is_empty() {
        return Ok(LoopReport::zero());
    }
    let xq = g.grid.node_coord(node);
    let n = g.grid.len();
    let mut best: Option<(f64, usize, Vec<usize>, Ray)> = None;
    let mut unreachable = Vec::new();
    for &h in &holes {
        let anchor = g.holes[h].anchor;
        let ray = Ray { origin: anchor, dir: if xq[0] <= anchor[0] { 1.0 } else { -1.0 } };
        let (d, parent) = dijkstra(2 * n, &[(2 * node, 0.0)], |s, out| {
            let (u, sheet) = (s / 2, s % 2);
            if g.component[u] != comp {
                return;
            }
            let a = g.grid.node_coord(u);
            let start = out.len();
            g.edges_into(u, out);
            for e in &mut out[start..] {
                let flip = ray.crosses(a, g.grid.node_coord(e.0)) as usize;
                e.0 = 2 * e.0 + (sheet ^ flip);
            }
        });
        let target = 2 * node + 1;
        if d[target].is_infinite() {
            unreachable.push(h);
            continue;
        }
        if best.as_ref().is_none_or(|b| d[target] < b.0) {
            let mut states = vec![target];
            let mut s = target;
            while parent[s] != usize::MAX {
                s = parent[s];
                states.push(s);
            }
            states.reverse();
            best = Some((d[target], h, states, ray));
        }
    }
    let Some((m_x, hole, states, ray)) = best else {
        let mut r = LoopReport::zero();
        r.unreachable_holes = unreachable;
        return Ok(r);
    };
    let witness: Vec<Point2> = states.iter().map(|&s| g.grid.node_coord(s / 2)).collect();
    let crossings = witness.windows(2).filter(|w| ray.crosses(w[0], w[1])).count();
    let error_bound = LOOP_ERROR_CELLS * g.grid.cell_diagonal();
    Ok(LoopReport {
        m_x,
        error_bound,
        m_x_lower: m_x - error_bound,
        witness,
        hole: Some(hole),
        crossings,
        unreachable_holes: unreachable,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GeoReport {
    pub x: Point2,
    pub component: u32,
    pub distance: DistanceReport,
    pub shortest_loop: LoopReport,
}

pub fn geo_report(g: &RegionGraph, x: Point2) -> Result<GeoReport, GeometryError> {
    let distance = distance_to_sigma1(g, x)?;
    let shortest_loop = shortest_noncontractible_loop(g, x)?;
    Ok(GeoReport { x, component: g.component[distance.node], distance, shortest_loop })
}

/// CSV rows `q1,q2,distance` for kept nodes.
pub fn distance_field_csv(g: &RegionGraph, field: &[f64]) -> String {
    let mut out = String::from("q1,q2,distance\n");
    for (k, d) in field.iter().enumerate() {
        if !g.is_kept(k) {
            continue;
        }
        let q = g.grid.node_coord(k);
        let d = if d.is_finite() { crate::fmt_num(*d) } else { "inf".to_string() };
        out.push_str(&format!("{},{},{}\n", crate::fmt_num(q[0]), crate::fmt_num(q[1]), d));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn point_set(w: Window, p: Point2) -> SingularSet {
        SingularSet { sigma2: vec![p], ..SingularSet::empty(w) }
    }

    #[test]
    fn empty_set_one_component_no_holes() {
        let w = Window::square(-1.0, 1.0);
        let g = build_region_graph(w, [16, 16], &SingularSet::empty(w), 0.2).unwrap();
        assert_eq!(g.n_components(), 1);
        assert!(g.holes.is_empty());
        let l = shortest_noncontractible_loop(&g, [0.5, 0.5]).unwrap();
        assert!(l.is_zero() && l.m_x == 0.0);
    }

    #[test]
    fn point_hole_gives_loop_near_twice_distance() {
        let w = Window::square(-2.0, 2.0);
        let g = build_region_graph(w, [64, 64], &point_set(w, [0.0, 0.0]), 0.1).unwrap();
        assert_eq!(g.n_components(), 1);
        assert_eq!(g.holes.len(), 1);
        assert_eq!(g.holes[0].components, vec![0]);
        let l = shortest_noncontractible_loop(&g, [1.0, 0.0]).unwrap();
        assert!(l.m_x >= 2.0 && l.m_x - l.error_bound <= 2.0, "{}", l.m_x);
        assert_eq!(l.crossings % 2, 1);
        assert_eq!(l.witness.first(), l.witness.last());
        let len: f64 = l.witness.windows(2).map(|s| dist(s[0], s[1])).sum();
        assert!((len - l.m_x).abs() < 1e-12);
        let d = distance_to_sigma1(&g, [1.0, 0.0]).unwrap();
        assert!(d.truncated);
        assert_eq!(d.value, 1.0);
    }

    #[test]
    fn vertical_curve_splits_window() {
        let w = Window::square(-1.0, 1.0);
        let set = SingularSet {
            sigma1: vec![SingularPolyline { vertices: vec![[0.0, -1.0], [0.0, 1.0]], max_segment: 2.0 }],
            ..SingularSet::empty(w)
        };
        let g = build_region_graph(w, [20, 20], &set, 0.15).unwrap();
        assert_eq!(g.n_components(), 2);
        assert!(g.holes.is_empty());
        let d = distance_to_sigma1(&g, [0.5, 0.3]).unwrap();
        assert!((d.value - 0.5).abs() < 1e-12);
        assert!(!d.truncated);
        for k in 0..g.grid.len() {
            if g.is_kept(k) {
                assert!(g.grid.node_coord(k)[0].abs() > 0.15);
            }
        }
    }

    #[test]
    fn enclosed_segment_is_a_void_hole() {
        let w = Window::square(-1.0, 1.0);
        let set = SingularSet {
            sigma1: vec![SingularPolyline { vertices: vec![[-0.2, 0.0], [0.2, 0.0]], max_segment: 0.4 }],
            ..SingularSet::empty(w)
        };
        let g = build_region_graph(w, [40, 40], &set, 0.1).unwrap();
        assert_eq!(g.holes.len(), 1);
        assert_eq!(g.holes[0].kind, HoleKind::Void);
        let l = shortest_noncontractible_loop(&g, [0.0, 0.6]).unwrap();
        assert!(!l.is_zero());
        assert_eq!(l.crossings % 2, 1);
    }

    #[test]
    fn clearance_below_cell_rejected() {
        let w = Window::square(-1.0, 1.0);
        let e = build_region_graph(w, [4, 4], &SingularSet::empty(w), 0.1).unwrap_err();
        assert!(matches!(e, GeometryError::ClearanceTooSmall { .. }));
    }

    #[test]
    fn ray_crossing_is_half_open() {
        let r = Ray { origin: [0.0, 0.0], dir: 1.0 };
        assert!(r.crosses([1.0, -1.0], [1.0, 1.0]));
        assert!(!r.crosses([-1.0, -1.0], [-1.0, 1.0]));
        // Through a vertex on the ray line: counted on exactly one side.
        let a = r.crosses([1.0, -1.0], [1.0, 0.0]);
        let b = r.crosses([1.0, 0.0], [1.0, 1.0]);
        assert!(a ^ b);
    }
}
