//! The uniqueness radius and its check on an explicit covering graph.
//!
//! The lifted graph has one node per (base node, sheet) over the component
//! `K_x`, built by continuing every equilibrium of the fiber at `x` along grid
//! edges. Lifted edges carry the base edge length (pullback metric), so
//! lifted shortest paths measure the distance used by the injectivity ball.

use crate::geometry::{self, dijkstra, GeoReport, RegionGraph, DEFAULT_CLEARANCE_CELLS};
use crate::grid::{dist, Grid, Point2, Window};
use crate::model::{EquilibriumSystem, ModelConfig};
use crate::singular::{self, DetectOptions, SingularSet};
use crate::solver::{lift_path, norm_inf, solve_fiber, FiberOptions, LiftOptions, SolverError, DEDUP_RADIUS};
use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use std::fmt;
use thiserror::Error;

const OFFSETS: [(isize, isize); 8] = [(1, 0), (1, 1), (0, 1), (-1, 1), (-1, 0), (-1, -1), (0, -1), (1, -1)];
const NO_SHEET: u8 = u8::MAX;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RadiusError {
    #[error("d_x must be positive, got {0}")]
    NonPositiveDistance(f64),
    #[error("m_x lower bound must be positive when m_x != 0, got {0}")]
    NonPositiveLoop(f64),
    #[error("sheet mismatch on edge ({from:?} -> {to:?}): {detail}")]
    SheetMismatch { from: Point2, to: Point2, detail: String },
    #[error("lift failed on edge ({from:?} -> {to:?}): {source}")]
    Lift { from: Point2, to: Point2, source: SolverError },
    #[error("fiber at the base point: {0}")]
    Fiber(SolverError),
    #[error("fiber at the base point is empty")]
    EmptyFiber,
    #[error("fiber has {0} points, more than the lifted graph supports")]
    TooManySheets(usize),
    #[error(transparent)]
    Geometry(#[from] crate::geometry::GeometryError),
    #[error("nodes {0} and {1} are not joined by an edge of the lifted graph")]
    NotAdjacent(usize, usize),
}

/// A permutation of sheet indices; `self.0[i]` is the image of sheet `i`.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Permutation(pub Vec<usize>);

impl Permutation {
    pub fn identity(n: usize) -> Self {
        Permutation((0..n).collect())
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn is_identity(&self) -> bool {
        self.0.iter().enumerate().all(|(i, &j)| i == j)
    }

    /// `self` followed by `next`.
    pub fn then(&self, next: &Permutation) -> Permutation {
        Permutation(self.0.iter().map(|&i| next.0[i]).collect())
    }

    pub fn inverse(&self) -> Permutation {
        let mut inv = vec![0; self.0.len()];
        for (i, &j) in self.0.iter().enumerate() {
            inv[j] = i;
        }
        Permutation(inv)
    }

    pub fn is_valid(&self) -> bool {
        let mut seen = vec![false; self.0.len()];
        self.0.iter().all(|&j| j < seen.len() && !std::mem::replace(&mut seen[j], true))
    }
}

impl fmt::Display for Permutation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self.0.iter().map(|j| j.to_string()).collect();
        write!(f, "[{}]", parts.join(" "))
    }
}

#[derive(Clone, Copy, Debug)]
pub struct LiftedGraphOptions {
    /// Continuation policy for a single grid edge.
    pub edge_lift: LiftOptions,
    pub fiber: FiberOptions,
    pub match_tol: f64,
}

impl Default for LiftedGraphOptions {
    fn default() -> Self {
        LiftedGraphOptions {
            edge_lift: LiftOptions {
                initial_fraction: 0.25,
                max_fraction: 0.5,
                ..LiftOptions::default()
            },
            fiber: FiberOptions::default(),
            match_tol: DEDUP_RADIUS,
        }
    }
}

/// The covering graph over the component of the base point.
#[derive(Clone, Debug)]
pub struct LiftedGraph {
    pub base: RegionGraph,
    pub component: u32,
    pub root: usize,
    pub n_sheets: usize,
    n_p: usize,
    /// Equilibrium of each (node, sheet); NaN off the component.
    points: Vec<f64>,
    /// Sheet permutation of each directed edge, indexed by node and slot.
    perms: Vec<u8>,
    tree_parent: Vec<usize>,
}

fn slot(grid: &Grid, u: usize, v: usize) -> Option<usize> {
    let (i, j) = grid.ij(u);
    let (a, b) = grid.ij(v);
    let d = (a as isize - i as isize, b as isize - j as isize);
    OFFSETS.iter().position(|&o| o == d)
}

fn lift_edge(
    sys: &dyn EquilibriumSystem,
    qa: Point2,
    qb: Point2,
    p: &[f64],
    opts: &LiftOptions,
) -> Result<Vec<f64>, RadiusError> {
    let path = [qa.to_vec(), qb.to_vec()];
    let out = match lift_path(sys, &path, p, opts) {
        Ok(r) => Ok(r),
        Err(e) if e.is_singular() => Err(e),
        Err(_) => lift_path(sys, &path, p, &LiftOptions::default()),
    };
    out.map(|r| r.p_end)
        .map_err(|source| RadiusError::Lift { from: qa, to: qb, source })
}

fn max_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

impl LiftedGraph {
    pub fn grid(&self) -> &Grid {
        &self.base.grid
    }

    pub fn in_component(&self, node: usize) -> bool {
        self.base.component[node] == self.component
    }

    /// Equilibrium on `sheet` over `node`.
    pub fn point(&self, node: usize, sheet: usize) -> &[f64] {
        let k = (node * self.n_sheets + sheet) * self.n_p;
        &self.points[k..k + self.n_p]
    }

    /// Sheet permutation of the base edge `u -> v`.
    pub fn edge_permutation(&self, u: usize, v: usize) -> Option<Permutation> {
        let s = slot(self.grid(), u, v)?;
        let base = (u * 8 + s) * self.n_sheets;
        let row = &self.perms[base..base + self.n_sheets];
        if row[0] == NO_SHEET {
            return None;
        }
        Some(Permutation(row.iter().map(|&j| j as usize).collect()))
    }

    pub fn is_tree_edge(&self, u: usize, v: usize) -> bool {
        self.tree_parent[v] == u || self.tree_parent[u] == v
    }

    /// Neighbours of a lifted state `node * n_sheets + sheet` with weights.
    pub fn lifted_edges_into(&self, state: usize, out: &mut Vec<(usize, f64)>) {
        let n = self.n_sheets;
        let (u, sheet) = (state / n, state % n);
        if !self.in_component(u) {
            return;
        }
        let start = out.len();
        self.base.edges_into(u, out);
        let grid = self.grid();
        for e in &mut out[start..] {
            let s = slot(grid, u, e.0).expect("grid neighbour");
            let j = self.perms[(u * 8 + s) * n + sheet] as usize;
            e.0 = e.0 * n + j;
        }
    }

    /// Weight of the lifted edge leaving `(u, sheet)` towards base node `v`.
    pub fn lifted_edge_weight(&self, u: usize, sheet: usize, v: usize) -> Option<f64> {
        let mut out = Vec::new();
        self.lifted_edges_into(u * self.n_sheets + sheet, &mut out);
        out.into_iter()
            .find(|&(t, _)| t / self.n_sheets == v)
            .map(|(_, w)| w)
    }

    pub fn n_states(&self) -> usize {
        self.grid().len() * self.n_sheets
    }

    /// Lifted shortest-path distances from `(node, sheet)`.
    pub fn distances_from(&self, node: usize, sheet: usize) -> Vec<f64> {
        let src = node * self.n_sheets + sheet;
        dijkstra(self.n_states(), &[(src, 0.0)], |s, out| self.lifted_edges_into(s, out)).0
    }

    /// Base graph distances within the component from `node`.
    pub fn base_distances_from(&self, node: usize) -> Vec<f64> {
        dijkstra(self.grid().len(), &[(node, 0.0)], |u, out| {
            if self.in_component(u) {
                self.base.edges_into(u, out)
            }
        })
        .0
    }
}

/// Lifts the fiber at `x` over its whole component.
pub fn build_lifted_graph(
    sys: &dyn EquilibriumSystem,
    g: &RegionGraph,
    x: Point2,
    opts: &LiftedGraphOptions,
) -> Result<LiftedGraph, RadiusError> {
    let root = g.snap(x).map_err(RadiusError::Geometry)?;
    lift_from_node(sys, g, root, opts)
}

/// Lifts the fiber over `root` across its component.
pub fn lift_from_node(
    sys: &dyn EquilibriumSystem,
    g: &RegionGraph,
    root: usize,
    opts: &LiftedGraphOptions,
) -> Result<LiftedGraph, RadiusError> {
    let grid = g.grid;
    let q0 = grid.node_coord(root);
    let fiber = solve_fiber(sys, &q0, &opts.fiber).map_err(RadiusError::Fiber)?;
    if fiber.is_empty() {
        return Err(RadiusError::EmptyFiber);
    }
    let n = fiber.len();
    if n >= NO_SHEET as usize {
        return Err(RadiusError::TooManySheets(n));
    }
    let np = sys.n_p();
    let nodes = grid.len();
    let comp = g.component[root];
    let mut lg = LiftedGraph {
        base: g.clone(),
        component: comp,
        root,
        n_sheets: n,
        n_p: np,
        points: vec![f64::NAN; nodes * n * np],
        perms: vec![NO_SHEET; nodes * 8 * n],
        tree_parent: vec![usize::MAX; nodes],
    };
    for (i, pt) in fiber.points.iter().enumerate() {
        let k = (root * n + i) * np;
        lg.points[k..k + np].copy_from_slice(&pt.p);
    }

    // Breadth-first sheet propagation along tree edges.
    let mut visited = vec![false; nodes];
    visited[root] = true;
    let mut level = vec![root];
    let mut buf = Vec::new();
    while !level.is_empty() {
        let mut next = Vec::new();
        for &u in &level {
            buf.clear();
            g.edges_into(u, &mut buf);
            for &(v, _) in &buf {
                if !visited[v] {
                    visited[v] = true;
                    lg.tree_parent[v] = u;
                    next.push((v, u));
                }
            }
        }
        let lifted: Vec<Vec<Vec<f64>>> = next
            .par_iter()
            .map(|&(v, u)| {
                let (qa, qb) = (grid.node_coord(u), grid.node_coord(v));
                (0..n)
                    .map(|i| lift_edge(sys, qa, qb, lg.point(u, i), &opts.edge_lift))
                    .collect::<Result<Vec<_>, _>>()
            })
            .collect::<Result<Vec<_>, _>>()?;
        for (&(v, u), ps) in next.iter().zip(&lifted) {
            for a in 0..n {
                for b in a + 1..n {
                    if max_diff(&ps[a], &ps[b]) <= opts.match_tol {
                        return Err(RadiusError::SheetMismatch {
                            from: grid.node_coord(u),
                            to: grid.node_coord(v),
                            detail: format!("sheets {a} and {b} collapse"),
                        });
                    }
                }
            }
            for (i, p) in ps.iter().enumerate() {
                let k = (v * n + i) * np;
                lg.points[k..k + np].copy_from_slice(p);
            }
            let id: Vec<u8> = (0..n as u8).collect();
            let s = slot(&grid, u, v).unwrap();
            lg.perms[(u * 8 + s) * n..(u * 8 + s + 1) * n].copy_from_slice(&id);
            let s = slot(&grid, v, u).unwrap();
            lg.perms[(v * 8 + s) * n..(v * 8 + s + 1) * n].copy_from_slice(&id);
        }
        level = next.into_iter().map(|(v, _)| v).collect();
    }

    // Remaining edges: lift every sheet and match against the sheets there.
    let members: Vec<usize> = (0..nodes).filter(|&k| visited[k]).collect();
    let found: Vec<(usize, usize, Vec<u8>)> = members
        .par_iter()
        .map(|&u| {
            let mut out = Vec::new();
            let qa = grid.node_coord(u);
            for (v, _) in g.edges(u) {
                if v < u || lg.is_tree_edge(u, v) {
                    continue;
                }
                let qb = grid.node_coord(v);
                let mut perm = Vec::with_capacity(n);
                for i in 0..n {
                    let p = lift_edge(sys, qa, qb, lg.point(u, i), &opts.edge_lift)?;
                    let (j, d) = (0..n)
                        .map(|j| (j, max_diff(&p, lg.point(v, j))))
                        .min_by(|a, b| a.1.total_cmp(&b.1))
                        .unwrap();
                    if d > opts.match_tol {
                        return Err(RadiusError::SheetMismatch {
                            from: qa,
                            to: qb,
                            detail: format!("lift of sheet {i} is {d:.3e} from the nearest sheet"),
                        });
                    }
                    perm.push(j as u8);
                }
                let p = Permutation(perm.iter().map(|&j| j as usize).collect());
                if !p.is_valid() {
                    return Err(RadiusError::SheetMismatch {
                        from: qa,
                        to: qb,
                        detail: format!("edge map {p} is not a permutation"),
                    });
                }
                out.push((u, v, perm));
            }
            Ok(out)
        })
        .collect::<Result<Vec<_>, RadiusError>>()?
        .into_iter()
        .flatten()
        .collect();
    for (u, v, perm) in found {
        let s = slot(&grid, u, v).unwrap();
        lg.perms[(u * 8 + s) * n..(u * 8 + s + 1) * n].copy_from_slice(&perm);
        let inv = Permutation(perm.iter().map(|&j| j as usize).collect()).inverse();
        let inv: Vec<u8> = inv.0.iter().map(|&j| j as u8).collect();
        let s = slot(&grid, v, u).unwrap();
        lg.perms[(v * 8 + s) * n..(v * 8 + s + 1) * n].copy_from_slice(&inv);
    }
    Ok(lg)
}

/// Composes edge permutations along a closed node cycle.
pub fn monodromy(lg: &LiftedGraph, cycle: &[usize]) -> Result<Permutation, RadiusError> {
    let mut acc = Permutation::identity(lg.n_sheets);
    for w in cycle.windows(2) {
        if w[0] == w[1] {
            continue;
        }
        let p = lg
            .edge_permutation(w[0], w[1])
            .filter(|_| lg.in_component(w[0]) && lg.in_component(w[1]))
            .ok_or(RadiusError::NotAdjacent(w[0], w[1]))?;
        acc = acc.then(&p);
    }
    Ok(acc)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Case {
    /// No hole in the component: `r_x = 3 d_x`.
    Zero,
    NonZero,
}

impl Case {
    pub fn as_str(self) -> &'static str {
        match self {
            Case::Zero => "zero",
            Case::NonZero => "nonzero",
        }
    }
}

pub fn compute_radius(d_x: f64, m_x_lower: f64, case: Case) -> Result<f64, RadiusError> {
    if !(d_x > 0.0) {
        return Err(RadiusError::NonPositiveDistance(d_x));
    }
    match case {
        Case::Zero => Ok(3.0 * d_x),
        Case::NonZero if !(m_x_lower > 0.0) => Err(RadiusError::NonPositiveLoop(m_x_lower)),
        Case::NonZero => Ok(m_x_lower.min(d_x)),
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Verified,
    Violated,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Violation {
    pub q: Point2,
    pub sheets: [usize; 2],
    pub distances: [f64; 2],
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Injectivity {
    pub verdict: Verdict,
    #[serde(with = "number_or_none")]
    pub empirical_failure_radius: Option<f64>,
    pub violation: Option<Violation>,
}

mod number_or_none {
    use super::*;

    pub fn serialize<S: Serializer>(v: &Option<f64>, s: S) -> Result<S::Ok, S::Error> {
        match v {
            Some(x) => s.serialize_f64(*x),
            None => s.serialize_str("none"),
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Option<f64>, D::Error> {
        match serde_json::Value::deserialize(d)? {
            serde_json::Value::Number(n) => Ok(n.as_f64()),
            serde_json::Value::String(s) if s == "none" => Ok(None),
            other => Err(serde::de::Error::custom(format!("expected number or \"none\", got {other}"))),
        }
    }
}

/// Searches the lifted ball around `(root, sheet)` for two lifts of the same
/// base node.
pub fn verify_injectivity(lg: &LiftedGraph, sheet: usize, ball_radius: f64) -> Injectivity {
    let d = lg.distances_from(lg.root, sheet);
    let n = lg.n_sheets;
    let mut best: Option<(f64, usize, [usize; 2], [f64; 2])> = None;
    for node in 0..lg.grid().len() {
        if !lg.in_component(node) {
            continue;
        }
        let mut sheets: Vec<(f64, usize)> = (0..n).map(|s| (d[node * n + s], s)).collect();
        sheets.sort_by(|a, b| a.0.total_cmp(&b.0));
        if sheets.len() < 2 || !sheets[1].0.is_finite() {
            continue;
        }
        if best.as_ref().is_none_or(|b| sheets[1].0 < b.0) {
            best = Some((
                sheets[1].0,
                node,
                [sheets[0].1, sheets[1].1],
                [sheets[0].0, sheets[1].0],
            ));
        }
    }
    match best {
        Some((r, node, sheets, distances)) if r < ball_radius => Injectivity {
            verdict: Verdict::Violated,
            empirical_failure_radius: Some(r),
            violation: Some(Violation { q: lg.grid().node_coord(node), sheets, distances }),
        },
        other => Injectivity {
            verdict: Verdict::Verified,
            empirical_failure_radius: other.map(|b| b.0),
            violation: None,
        },
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DistanceField {
    pub value: f64,
    pub truncated: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CertificateWitness {
    /// Shortest odd-winding loop at `x`, if any.
    pub loop_polyline: Vec<Point2>,
    pub loop_hole: Option<Point2>,
    pub nearest_sigma1: Option<Point2>,
    pub violation: Option<Violation>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RadiusCertificate {
    pub model: String,
    pub x: Point2,
    pub snapped_x: Point2,
    pub window: Window,
    pub resolution: [usize; 2],
    pub fiber: Vec<Vec<f64>>,
    pub lift: Vec<f64>,
    pub sheet_count: usize,
    pub d_x: DistanceField,
    pub m_x: f64,
    pub m_x_error_bound: f64,
    pub m_x_lower: f64,
    pub case: Case,
    pub r_x: f64,
    pub ball_radius: f64,
    pub verdict: Verdict,
    #[serde(with = "number_or_none")]
    pub empirical_failure_radius: Option<f64>,
    pub witness: CertificateWitness,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Singular,
    Geometry,
    Lift,
    Radius,
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Stage::Singular => "singular",
            Stage::Geometry => "geometry",
            Stage::Lift => "lift",
            Stage::Radius => "radius",
        })
    }
}

#[derive(Debug, Error)]
pub enum CertifyError {
    #[error("x = ({0}, {1}) lies outside the window")]
    OutsideWindow(f64, f64),
    #[error("{stage} stage: {message}")]
    Stage { stage: Stage, message: String },
}

impl CertifyError {
    fn at(stage: Stage) -> impl Fn(&dyn fmt::Display) -> CertifyError {
        move |e| CertifyError::Stage { stage, message: e.to_string() }
    }
}

#[derive(Clone, Copy, Debug, Default)]
pub struct CertifyOptions {
    pub detect: DetectOptions,
    pub lifted: LiftedGraphOptions,
    /// Removal distance around singular curves, in cell diagonals.
    pub clearance_cells: Option<f64>,
}

/// Every intermediate result of a certification run.
#[derive(Clone, Debug)]
pub struct Analysis {
    pub samples: Vec<singular::CriticalSample>,
    pub singular: SingularSet,
    pub graph: RegionGraph,
    pub geo: GeoReport,
    pub lifted: LiftedGraph,
    pub certificate: RadiusCertificate,
}

/// Singular set, geometry, lifted graph, radius and injectivity check at `x`.
pub fn analyze(
    sys: &dyn EquilibriumSystem,
    cfg: &ModelConfig,
    x: Point2,
    opts: &CertifyOptions,
) -> Result<Analysis, CertifyError> {
    let w = cfg.window;
    if !w.contains(x, 1e-9 * w.diagonal()) {
        return Err(CertifyError::OutsideWindow(x[0], x[1]));
    }
    let grid = Grid::new(w, cfg.resolution);
    let (samples, set) = singular::singular_set(sys, w, cfg.resolution, &opts.detect)
        .map_err(|e| CertifyError::at(Stage::Singular)(&e))?;
    let clearance = opts.clearance_cells.unwrap_or(DEFAULT_CLEARANCE_CELLS) * grid.cell_diagonal();
    let g = geometry::build_region_graph(w, cfg.resolution, &set, clearance)
        .map_err(|e| CertifyError::at(Stage::Geometry)(&e))?;
    let geo = geometry::geo_report(&g, x).map_err(|e| CertifyError::at(Stage::Geometry)(&e))?;
    let lifted = lift_from_node(sys, &g, geo.distance.node, &opts.lifted)
        .map_err(|e| CertifyError::at(Stage::Lift)(&e))?;
    let case = if geo.shortest_loop.is_zero() { Case::Zero } else { Case::NonZero };
    let r_x = compute_radius(geo.distance.value, geo.shortest_loop.m_x_lower, case)
        .map_err(|e| CertifyError::at(Stage::Radius)(&e))?;
    let ball_radius = r_x / 3.0;
    let check = verify_injectivity(&lifted, 0, ball_radius);
    let fiber: Vec<Vec<f64>> = (0..lifted.n_sheets).map(|s| lifted.point(lifted.root, s).to_vec()).collect();
    let lp = &geo.shortest_loop;
    let certificate = RadiusCertificate {
        model: sys.name().to_string(),
        x,
        snapped_x: geo.distance.snapped,
        window: w,
        resolution: cfg.resolution,
        lift: fiber[0].clone(),
        sheet_count: fiber.len(),
        fiber,
        d_x: DistanceField { value: geo.distance.value, truncated: geo.distance.truncated },
        m_x: lp.m_x,
        m_x_error_bound: lp.error_bound,
        m_x_lower: lp.m_x_lower,
        case,
        r_x,
        ball_radius,
        verdict: check.verdict,
        empirical_failure_radius: check.empirical_failure_radius,
        witness: CertificateWitness {
            loop_polyline: lp.witness.clone(),
            loop_hole: lp.hole.map(|h| g.holes[h].anchor),
            nearest_sigma1: geo.distance.witness,
            violation: check.violation,
        },
    };
    Ok(Analysis { samples, singular: set, graph: g, geo, lifted, certificate })
}

pub fn certify(
    sys: &dyn EquilibriumSystem,
    cfg: &ModelConfig,
    x: Point2,
) -> Result<RadiusCertificate, CertifyError> {
    analyze(sys, cfg, x, &CertifyOptions::default()).map(|a| a.certificate)
}

/// Independent consistency checks on a lifted graph.
pub mod checks {
    use super::*;

    #[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
    pub struct PairCheck {
        pub from: (usize, usize),
        pub to: (usize, usize),
        pub lifted: f64,
        pub base: f64,
    }

    /// Lifted vs. base distances for `sources * targets` random lifted pairs.
    pub fn distance_pairs(lg: &LiftedGraph, sources: usize, targets: usize, seed: u64) -> Vec<PairCheck> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let members: Vec<usize> = (0..lg.grid().len()).filter(|&k| lg.in_component(k)).collect();
        let n = lg.n_sheets;
        let mut out = Vec::new();
        for _ in 0..sources {
            let a = members[rng.gen_range(0..members.len())];
            let sa = rng.gen_range(0..n);
            let dl = lg.distances_from(a, sa);
            let db = lg.base_distances_from(a);
            for _ in 0..targets {
                let b = members[rng.gen_range(0..members.len())];
                let sb = rng.gen_range(0..n);
                out.push(PairCheck { from: (a, sa), to: (b, sb), lifted: dl[b * n + sb], base: db[b] });
            }
        }
        out
    }

    /// Re-lifts `samples` random edges backwards and compares with the
    /// stored inverse permutation. Returns the number of mismatches.
    pub fn inverse_permutations(
        sys: &dyn EquilibriumSystem,
        lg: &LiftedGraph,
        samples: usize,
        seed: u64,
    ) -> Result<usize, RadiusError> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let members: Vec<usize> = (0..lg.grid().len()).filter(|&k| lg.in_component(k)).collect();
        let opts = LiftedGraphOptions::default();
        let mut bad = 0;
        for _ in 0..samples {
            let u = members[rng.gen_range(0..members.len())];
            let edges = lg.base.edges(u);
            if edges.is_empty() {
                continue;
            }
            let v = edges[rng.gen_range(0..edges.len())].0;
            let fwd = lg.edge_permutation(u, v).ok_or(RadiusError::NotAdjacent(u, v))?;
            let (qa, qb) = (lg.grid().node_coord(v), lg.grid().node_coord(u));
            let mut back = Vec::new();
            for j in 0..lg.n_sheets {
                let p = lift_edge(sys, qa, qb, lg.point(v, j), &opts.edge_lift)?;
                let i = (0..lg.n_sheets)
                    .min_by(|&a, &b| max_diff(&p, lg.point(u, a)).total_cmp(&max_diff(&p, lg.point(u, b))))
                    .unwrap();
                back.push(i);
            }
            if Permutation(back) != fwd.inverse() {
                bad += 1;
            }
        }
        Ok(bad)
    }

    /// Largest residual of the stored sheet points over the component.
    pub fn max_sheet_residual(sys: &dyn EquilibriumSystem, lg: &LiftedGraph) -> f64 {
        let mut worst: f64 = 0.0;
        for node in 0..lg.grid().len() {
            if !lg.in_component(node) {
                continue;
            }
            let q = DVector::from_row_slice(&lg.grid().node_coord(node));
            for s in 0..lg.n_sheets {
                let p = DVector::from_row_slice(lg.point(node, s));
                worst = worst.max(norm_inf(&sys.eval(&p, &q)));
            }
        }
        worst
    }

    /// Rasterizes a circle into a closed 8-connected node cycle.
    pub fn circle_cycle(grid: &Grid, center: Point2, radius: f64) -> Vec<usize> {
        let steps = (2.0 * std::f64::consts::PI * radius / (0.25 * grid.spacing()[0].min(grid.spacing()[1]))).ceil() as usize;
        let mut cycle: Vec<usize> = Vec::new();
        for k in 0..=steps {
            let t = 2.0 * std::f64::consts::PI * k as f64 / steps as f64;
            let q = [center[0] + radius * t.cos(), center[1] + radius * t.sin()];
            let node = grid.snap(q);
            if cycle.last() != Some(&node) {
                cycle.push(node);
            }
        }
        if cycle.first() != cycle.last() {
            cycle.push(cycle[0]);
        }
        cycle
    }

    /// Boundary cycle of the node rectangle `[i0, i1] x [j0, j1]`.
    pub fn rectangle_cycle(grid: &Grid, i0: usize, j0: usize, i1: usize, j1: usize) -> Vec<usize> {
        let mut c = Vec::new();
        for i in i0..i1 {
            c.push(grid.index(i, j0));
        }
        for j in j0..j1 {
            c.push(grid.index(i1, j));
        }
        for i in (i0 + 1..=i1).rev() {
            c.push(grid.index(i, j1));
        }
        for j in (j0 + 1..=j1).rev() {
            c.push(grid.index(i0, j));
        }
        c.push(grid.index(i0, j0));
        c
    }

    /// Random rectangles in the component avoiding `avoid` by `margin`.
    pub fn random_rectangles(
        lg: &LiftedGraph,
        count: usize,
        avoid: Point2,
        seed: u64,
    ) -> Vec<Vec<usize>> {
        let grid = *lg.grid();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut out = Vec::new();
        let mut attempts = 0;
        while out.len() < count && attempts < 100 * count {
            attempts += 1;
            let i0 = rng.gen_range(0..grid.cells[0]);
            let j0 = rng.gen_range(0..grid.cells[1]);
            let i1 = rng.gen_range(i0 + 1..=grid.cells[0].min(i0 + grid.cells[0] / 4 + 1));
            let j1 = rng.gen_range(j0 + 1..=grid.cells[1].min(j0 + grid.cells[1] / 4 + 1));
            let lo = grid.coord(i0, j0);
            let hi = grid.coord(i1, j1);
            let encloses = lo[0] <= avoid[0] && avoid[0] <= hi[0] && lo[1] <= avoid[1] && avoid[1] <= hi[1];
            if encloses {
                continue;
            }
            let c = rectangle_cycle(&grid, i0, j0, i1, j1);
            let ok = c.windows(2).all(|w| {
                lg.in_component(w[0]) && lg.in_component(w[1]) && lg.edge_permutation(w[0], w[1]).is_some()
            });
            if ok {
                out.push(c);
            }
        }
        out
    }

    /// Total base length of a node cycle.
    pub fn cycle_length(grid: &Grid, cycle: &[usize]) -> f64 {
        cycle.windows(2).map(|w| dist(grid.node_coord(w[0]), grid.node_coord(w[1]))).sum()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn radius_cases() {
        assert_eq!(compute_radius(0.5, 0.0, Case::Zero).unwrap(), 1.5);
        assert_eq!(compute_radius(1.0, 2.0, Case::NonZero).unwrap(), 1.0);
        assert_eq!(compute_radius(2.0, 2.0, Case::NonZero).unwrap(), 2.0);
        assert!(compute_radius(0.0, 1.0, Case::Zero).is_err());
        assert!(compute_radius(1.0, -0.1, Case::NonZero).is_err());
    }

    #[test]
    fn permutation_algebra() {
        let t = Permutation(vec![1, 0, 2]);
        let c = Permutation(vec![1, 2, 0]);
        assert!(t.then(&t).is_identity());
        assert!(c.then(&c.inverse()).is_identity());
        assert_eq!(c.then(&c).then(&c), Permutation::identity(3));
        assert!(!Permutation(vec![0, 0]).is_valid());
    }

    #[test]
    fn failure_radius_serializes_as_none() {
        let i = Injectivity { verdict: Verdict::Verified, empirical_failure_radius: None, violation: None };
        let v = serde_json::to_value(&i).unwrap();
        assert_eq!(v["empirical_failure_radius"], "none");
        assert_eq!(v["verdict"], "verified");
        let back: Injectivity = serde_json::from_value(v).unwrap();
        assert_eq!(back, i);
    }
}
