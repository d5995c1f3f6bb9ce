//! Singular values of the projection inside a parameter window.
//!
//! A critical equilibrium is a solution of the augmented system
//! `{ f(p, q) = 0, det jac_p(p, q) = 0 }`. [`detect_critical`] samples that
//! set, [`classify`] groups the projected samples into curves (codimension 1)
//! and isolated points (codimension 2).

use crate::grid::{dist, point_segment, Grid, Point2, Window};
use crate::model::EquilibriumSystem;
use crate::solver::{self, det, enumerate_fiber, norm_inf, FiberOptions, NewtonSettings};
use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::collections::HashMap;
use thiserror::Error;

/// Residual bound on `(f, det jac_p)` for accepted critical samples.
pub const AUGMENTED_TOL: f64 = 1e-8;
/// Extent ratio at or above which a cluster is a curve.
pub const CURVE_RATIO: f64 = 10.0;
/// Extent ratios in `[AMBIGUOUS_RATIO, CURVE_RATIO)` are flagged.
pub const AMBIGUOUS_RATIO: f64 = 5.0;

#[derive(Debug, Error)]
pub enum SingularError {
    #[error("singular-set detection needs a 2-D parameter window, system has {0} parameters")]
    NotPlanar(usize),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CriticalSample {
    pub p: Vec<f64>,
    pub q: Point2,
    /// `max(|f|_inf, |det jac_p|)` at the sample.
    pub residual: f64,
    pub det: f64,
}

#[derive(Clone, Copy, Debug)]
pub struct DetectOptions {
    /// Total multi-start seeds per line solve; split evenly across axes.
    pub line_seed_budget: usize,
    /// Parameter sub-grid (per axis) seeding the free Gauss-Newton pass.
    pub free_subgrid: usize,
    /// Unknown-space seeds per axis for the free pass.
    pub free_p_seeds: usize,
    pub newton: NewtonSettings,
}

impl Default for DetectOptions {
    fn default() -> Self {
        DetectOptions {
            line_seed_budget: 400,
            free_subgrid: 16,
            free_p_seeds: 5,
            newton: NewtonSettings { max_iter: 40, ..NewtonSettings::default() },
        }
    }
}

fn assemble_q(free: usize, free_val: f64, fixed_val: f64) -> DVector<f64> {
    let mut q = DVector::zeros(2);
    q[free] = free_val;
    q[1 - free] = fixed_val;
    q
}

/// Central-difference gradient of `det jac_p` in `(p, q)`.
fn det_gradient(sys: &dyn EquilibriumSystem, p: &DVector<f64>, q: &DVector<f64>) -> (DVector<f64>, DVector<f64>) {
    let d = |p: &DVector<f64>, q: &DVector<f64>| det(&sys.jac_p(p, q));
    let mut gp = DVector::zeros(p.len());
    for k in 0..p.len() {
        let h = 1e-6 * (1.0 + p[k].abs());
        let (mut a, mut b) = (p.clone(), p.clone());
        a[k] += h;
        b[k] -= h;
        gp[k] = (d(&a, q) - d(&b, q)) / (2.0 * h);
    }
    let mut gq = DVector::zeros(q.len());
    for k in 0..q.len() {
        let h = 1e-6 * (1.0 + q[k].abs());
        let (mut a, mut b) = (q.clone(), q.clone());
        a[k] += h;
        b[k] -= h;
        gq[k] = (d(p, &a) - d(p, &b)) / (2.0 * h);
    }
    (gp, gq)
}

/// The augmented system restricted to one grid line: unknowns are `p` and the
/// free parameter coordinate, the fixed coordinate is passed as `q[0]`.
struct LineSystem<'a> {
    sys: &'a dyn EquilibriumSystem,
    free: usize,
    bbox: Vec<(f64, f64)>,
}

impl LineSystem<'_> {
    fn split(&self, u: &DVector<f64>, q: &DVector<f64>) -> (DVector<f64>, DVector<f64>) {
        let n = self.sys.n_p();
        let p = u.rows(0, n).into_owned();
        (p, assemble_q(self.free, u[n], q[0]))
    }
}

impl EquilibriumSystem for LineSystem<'_> {
    fn name(&self) -> &str {
        "augmented-line"
    }
    fn n_p(&self) -> usize {
        self.sys.n_p() + 1
    }
    fn n_q(&self) -> usize {
        1
    }
    fn eval(&self, u: &DVector<f64>, q: &DVector<f64>) -> DVector<f64> {
        let (p, full) = self.split(u, q);
        let f = self.sys.eval(&p, &full);
        let d = det(&self.sys.jac_p(&p, &full));
        let mut out = DVector::zeros(f.len() + 1);
        out.rows_mut(0, f.len()).copy_from(&f);
        out[f.len()] = d;
        out
    }
    fn jac_p(&self, u: &DVector<f64>, q: &DVector<f64>) -> DMatrix<f64> {
        let (p, full) = self.split(u, q);
        let n = p.len();
        let jp = self.sys.jac_p(&p, &full);
        let jq = self.sys.jac_q(&p, &full);
        let (gp, gq) = det_gradient(self.sys, &p, &full);
        let mut j = DMatrix::zeros(n + 1, n + 1);
        j.view_mut((0, 0), (n, n)).copy_from(&jp);
        j.view_mut((0, n), (n, 1)).copy_from(&jq.column(self.free));
        for k in 0..n {
            j[(n, k)] = gp[k];
        }
        j[(n, n)] = gq[self.free];
        j
    }
    fn jac_q(&self, u: &DVector<f64>, q: &DVector<f64>) -> DMatrix<f64> {
        let (p, full) = self.split(u, q);
        let n = p.len();
        let jq = self.sys.jac_q(&p, &full);
        let (_, gq) = det_gradient(self.sys, &p, &full);
        let mut j = DMatrix::zeros(n + 1, 1);
        j.view_mut((0, 0), (n, 1)).copy_from(&jq.column(1 - self.free));
        j[(n, 0)] = gq[1 - self.free];
        j
    }
    fn domain_box(&self) -> Option<Vec<(f64, f64)>> {
        Some(self.bbox.clone())
    }
}

fn augmented_residual(sys: &dyn EquilibriumSystem, p: &DVector<f64>, q: &DVector<f64>) -> (f64, f64) {
    let f = norm_inf(&sys.eval(p, q));
    let d = det(&sys.jac_p(p, q));
    (f.max(d.abs()), d)
}

/// Minimum-norm Gauss-Newton on the underdetermined augmented system in all
/// of `(p, q)`. Converges onto the nearest part of the critical set, which is
/// how isolated critical values that no grid line passes through get found.
pub fn polish_critical(
    sys: &dyn EquilibriumSystem,
    p0: &[f64],
    q0: &[f64],
    max_iter: usize,
) -> Option<(Vec<f64>, Vec<f64>)> {
    let n = sys.n_p();
    let m = sys.n_q();
    let bbox = solver::domain_or_default(sys);
    let mut p = DVector::from_row_slice(p0);
    let mut q = DVector::from_row_slice(q0);
    for _ in 0..max_iter {
        let f = sys.eval(&p, &q);
        let d = det(&sys.jac_p(&p, &q));
        let res = norm_inf(&f).max(d.abs());
        if !res.is_finite() {
            return None;
        }
        if res <= 1e-11 {
            break;
        }
        let mut rhs = DVector::zeros(n + 1);
        rhs.rows_mut(0, n).copy_from(&(-&f));
        rhs[n] = -d;
        let (gp, gq) = det_gradient(sys, &p, &q);
        let mut j = DMatrix::zeros(n + 1, n + m);
        j.view_mut((0, 0), (n, n)).copy_from(&sys.jac_p(&p, &q));
        j.view_mut((0, n), (n, m)).copy_from(&sys.jac_q(&p, &q));
        for k in 0..n {
            j[(n, k)] = gp[k];
        }
        for k in 0..m {
            j[(n, n + k)] = gq[k];
        }
        if !j.iter().all(|v| v.is_finite()) {
            return None;
        }
        let step = j.svd(true, true).solve(&rhs, 1e-14).ok()?;
        if !step.iter().all(|v| v.is_finite()) {
            return None;
        }
        p += step.rows(0, n);
        q += step.rows(n, m);
        if p.iter().zip(&bbox).any(|(&x, &(lo, hi))| x < lo || x > hi) {
            return None;
        }
        if norm_inf(&step) < 1e-15 {
            break;
        }
    }
    let (res, _) = augmented_residual(sys, &p, &q);
    (res <= AUGMENTED_TOL).then(|| (p.iter().copied().collect(), q.iter().copied().collect()))
}

/// Independent re-verification of a sample: Gauss-Newton from the sample
/// must stay put and satisfy the augmented residual bound.
pub fn verify_sample(sys: &dyn EquilibriumSystem, s: &CriticalSample) -> bool {
    match polish_critical(sys, &s.p, &s.q, 40) {
        Some((p, q)) => {
            let moved = p
                .iter()
                .zip(&s.p)
                .chain(q.iter().zip(&s.q))
                .map(|(a, b)| (a - b).abs())
                .fold(0.0, f64::max);
            moved <= 1e-6
        }
        None => false,
    }
}

fn sample_at(sys: &dyn EquilibriumSystem, p: &DVector<f64>, q: Point2) -> CriticalSample {
    let qv = DVector::from_row_slice(&q);
    let (residual, d) = augmented_residual(sys, p, &qv);
    CriticalSample { p: p.iter().copied().collect(), q, residual, det: d }
}

/// Samples the critical equilibria over `window` at grid resolution.
///
/// Each grid line is swept by solving the square augmented system in the
/// unknowns plus the free parameter coordinate. A second pass seeds
/// minimum-norm Gauss-Newton from a coarse parameter sub-grid.
pub fn detect_critical(
    sys: &dyn EquilibriumSystem,
    window: Window,
    resolution: [usize; 2],
    opts: &DetectOptions,
) -> Result<Vec<CriticalSample>, SingularError> {
    if sys.n_q() != 2 {
        return Err(SingularError::NotPlanar(sys.n_q()));
    }
    let grid = Grid::new(window, resolution);
    let pbox = solver::domain_or_default(sys);
    let dim = sys.n_p() + 1;
    let seeds = ((opts.line_seed_budget as f64).powf(1.0 / dim as f64).round() as usize).max(3);
    let fiber_opts = FiberOptions {
        seeds_per_axis: seeds,
        deflation_restarts: 4,
        newton: opts.newton,
        ..FiberOptions::default()
    };

    // (free axis, fixed value) for every grid line.
    let mut lines = Vec::new();
    for j in 0..grid.ny() {
        lines.push((0usize, grid.coord(0, j)[1]));
    }
    for i in 0..grid.nx() {
        lines.push((1usize, grid.coord(i, 0)[0]));
    }
    let mut samples: Vec<CriticalSample> = lines
        .par_iter()
        .flat_map_iter(|&(free, fixed)| {
            let mut bbox = pbox.clone();
            bbox.push(window.axis(free));
            let line = LineSystem { sys, free, bbox };
            let fiber = enumerate_fiber(&line, &[fixed], &fiber_opts);
            let n = sys.n_p();
            fiber
                .points
                .into_iter()
                .map(|pt| {
                    let p = DVector::from_row_slice(&pt.p[..n]);
                    let q = assemble_q(free, pt.p[n], fixed);
                    sample_at(sys, &p, [q[0], q[1]])
                })
                .collect::<Vec<_>>()
        })
        .collect();

    // Free pass.
    let sub = Grid::new(window, [opts.free_subgrid.max(1), opts.free_subgrid.max(1)]);
    let mut qseeds = Vec::new();
    for j in 0..sub.cells[1] {
        for i in 0..sub.cells[0] {
            let a = sub.coord(i, j);
            let b = sub.coord(i + 1, j + 1);
            qseeds.push([0.5 * (a[0] + b[0]), 0.5 * (a[1] + b[1])]);
        }
    }
    let pseeds = solver::seed_grid(&pbox, opts.free_p_seeds.max(1));
    let free: Vec<CriticalSample> = qseeds
        .par_iter()
        .flat_map_iter(|q| {
            pseeds
                .iter()
                .filter_map(|p| polish_critical(sys, p.as_slice(), q, 60))
                .map(|(p, q)| sample_at(sys, &DVector::from_vec(p), [q[0], q[1]]))
                .collect::<Vec<_>>()
        })
        .collect();
    samples.extend(free);

    samples.retain(|s| s.residual <= AUGMENTED_TOL && window.contains(s.q, 1e-12));
    // Thin to a bounded density; Gauss-Newton seeds pile up near degenerate
    // points and would otherwise dominate the cluster statistics.
    Ok(dedup_samples(samples, 0.25 * grid.cell_diagonal()))
}

fn dedup_samples(mut samples: Vec<CriticalSample>, radius: f64) -> Vec<CriticalSample> {
    let key = |s: &CriticalSample| {
        let mut k = s.q.to_vec();
        k.extend_from_slice(&s.p);
        k
    };
    samples.sort_by(|a, b| solver::lex_cmp(&key(a), &key(b)));
    let mut hash = SpatialHash::new(radius.max(1e-300));
    let mut kept: Vec<CriticalSample> = Vec::new();
    for s in samples {
        let dup = hash.near(s.q).any(|k| {
            let o: &CriticalSample = &kept[k];
            let dp = o.p.iter().zip(&s.p).map(|(a, b)| (a - b).powi(2)).sum::<f64>();
            (dist(o.q, s.q).powi(2) + dp).sqrt() < radius
        });
        if !dup {
            hash.insert(s.q, kept.len());
            kept.push(s);
        }
    }
    kept
}

// ---------------------------------------------------------------------------
// Classification

/// Bucketed point index; `near` yields candidates from the 3x3 bucket block.
struct SpatialHash {
    cell: f64,
    buckets: HashMap<(i64, i64), Vec<usize>>,
}

impl SpatialHash {
    fn new(cell: f64) -> Self {
        SpatialHash { cell, buckets: HashMap::new() }
    }
    fn key(&self, q: Point2) -> (i64, i64) {
        ((q[0] / self.cell).floor() as i64, (q[1] / self.cell).floor() as i64)
    }
    fn insert(&mut self, q: Point2, idx: usize) {
        let k = self.key(q);
        self.buckets.entry(k).or_default().push(idx);
    }
    fn near(&self, q: Point2) -> impl Iterator<Item = usize> + '_ {
        let (a, b) = self.key(q);
        (-1..=1).flat_map(move |di| {
            (-1..=1).flat_map(move |dj| {
                self.buckets
                    .get(&(a + di, b + dj))
                    .into_iter()
                    .flat_map(|v| v.iter().copied())
            })
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SingularPolyline {
    pub vertices: Vec<Point2>,
    pub max_segment: f64,
}

impl SingularPolyline {
    fn new(vertices: Vec<Point2>) -> Self {
        let max_segment = vertices
            .windows(2)
            .map(|w| dist(w[0], w[1]))
            .fold(0.0, f64::max);
        SingularPolyline { vertices, max_segment }
    }

    /// Distance from `q` to the polyline and the closest point.
    pub fn distance(&self, q: Point2) -> (f64, Point2) {
        if self.vertices.len() == 1 {
            return (dist(q, self.vertices[0]), self.vertices[0]);
        }
        self.vertices
            .windows(2)
            .map(|w| point_segment(q, w[0], w[1]))
            .fold((f64::INFINITY, [0.0, 0.0]), |a, b| if b.0 < a.0 { b } else { a })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AmbiguousCluster {
    pub centroid: Point2,
    pub extent_ratio: f64,
    pub classified_as: u8,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SingularSet {
    pub window: Window,
    pub sigma1: Vec<SingularPolyline>,
    pub sigma2: Vec<Point2>,
    pub cluster_radius: f64,
    /// Regularization of the extent ratio; clusters smaller than this are points.
    pub point_extent: f64,
    pub ambiguous: Vec<AmbiguousCluster>,
    /// Some singular curve reaches the window boundary and is cut off there.
    pub truncated: bool,
}

impl SingularSet {
    pub fn empty(window: Window) -> Self {
        SingularSet {
            window,
            sigma1: Vec::new(),
            sigma2: Vec::new(),
            cluster_radius: 0.0,
            point_extent: 0.0,
            ambiguous: Vec::new(),
            truncated: false,
        }
    }

    /// Nearest point of the codimension-1 part, if there is one.
    pub fn nearest_sigma1(&self, q: Point2) -> Option<(f64, Point2)> {
        self.sigma1
            .iter()
            .map(|pl| pl.distance(q))
            .fold(None, |best: Option<(f64, Point2)>, c| match best {
                Some(b) if b.0 <= c.0 => Some(b),
                _ => Some(c),
            })
    }

    /// Rows `component,codim,q1,q2` for plotting.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("component,codim,q1,q2\n");
        for (k, pl) in self.sigma1.iter().enumerate() {
            for v in &pl.vertices {
                out.push_str(&format!("{k},1,{},{}\n", crate::fmt_num(v[0]), crate::fmt_num(v[1])));
            }
        }
        for (k, v) in self.sigma2.iter().enumerate() {
            let id = self.sigma1.len() + k;
            out.push_str(&format!("{id},2,{},{}\n", crate::fmt_num(v[0]), crate::fmt_num(v[1])));
        }
        out
    }
}

struct UnionFind(Vec<usize>);

impl UnionFind {
    fn new(n: usize) -> Self {
        UnionFind((0..n).collect())
    }
    fn find(&mut self, mut a: usize) -> usize {
        while self.0[a] != a {
            self.0[a] = self.0[self.0[a]];
            a = self.0[a];
        }
        a
    }
    fn union(&mut self, a: usize, b: usize) {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra != rb {
            let (lo, hi) = if ra < rb { (ra, rb) } else { (rb, ra) };
            self.0[hi] = lo;
        }
    }
}

/// Principal axis lengths (square roots of covariance eigenvalues) and the
/// major axis direction.
fn principal_axes(pts: &[Point2]) -> (f64, f64, Point2) {
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p[0]).sum::<f64>() / n;
    let my = pts.iter().map(|p| p[1]).sum::<f64>() / n;
    let (mut sxx, mut syy, mut sxy) = (0.0, 0.0, 0.0);
    for p in pts {
        let (dx, dy) = (p[0] - mx, p[1] - my);
        sxx += dx * dx;
        syy += dy * dy;
        sxy += dx * dy;
    }
    sxx /= n;
    syy /= n;
    sxy /= n;
    let tr = sxx + syy;
    let disc = ((sxx - syy).powi(2) / 4.0 + sxy * sxy).sqrt();
    let l1 = (tr / 2.0 + disc).max(0.0);
    let l2 = (tr / 2.0 - disc).max(0.0);
    let dir = if sxy.abs() > 0.0 {
        let v = [l1 - syy, sxy];
        let nv = v[0].hypot(v[1]);
        [v[0] / nv, v[1] / nv]
    } else if sxx >= syy {
        [1.0, 0.0]
    } else {
        [0.0, 1.0]
    };
    (l1.sqrt(), l2.sqrt(), dir)
}

/// Median over the cluster of the local extent ratio in a `radius`
/// neighbourhood, regularized by `eps` so that tiny clouds read as points.
fn extent_ratio(pts: &[Point2], radius: f64, eps: f64) -> f64 {
    let mut hash = SpatialHash::new(radius);
    for (k, p) in pts.iter().enumerate() {
        hash.insert(*p, k);
    }
    let mut ratios: Vec<f64> = pts
        .iter()
        .map(|&p| {
            let local: Vec<Point2> = hash
                .near(p)
                .map(|k| pts[k])
                .filter(|&o| dist(o, p) <= radius)
                .collect();
            let (major, minor, _) = principal_axes(&local);
            (major + eps) / (minor + eps)
        })
        .collect();
    ratios.sort_by(f64::total_cmp);
    ratios[ratios.len() / 2]
}

/// Prim's minimum spanning tree on joint `(q, scale * p)` coordinates.
fn spanning_tree(coords: &[Vec<f64>]) -> Vec<Vec<(usize, f64)>> {
    let n = coords.len();
    let d = |a: usize, b: usize| {
        coords[a]
            .iter()
            .zip(&coords[b])
            .map(|(x, y)| (x - y).powi(2))
            .sum::<f64>()
            .sqrt()
    };
    let mut adj = vec![Vec::new(); n];
    let mut in_tree = vec![false; n];
    let mut best = vec![f64::INFINITY; n];
    let mut parent = vec![usize::MAX; n];
    best[0] = 0.0;
    for _ in 0..n {
        let mut u = usize::MAX;
        let mut bu = f64::INFINITY;
        for v in 0..n {
            if !in_tree[v] && best[v] < bu {
                bu = best[v];
                u = v;
            }
        }
        if u == usize::MAX {
            break;
        }
        in_tree[u] = true;
        if parent[u] != usize::MAX {
            adj[u].push((parent[u], bu));
            adj[parent[u]].push((u, bu));
        }
        for v in 0..n {
            if !in_tree[v] {
                let w = d(u, v);
                if w < best[v] {
                    best[v] = w;
                    parent[v] = u;
                }
            }
        }
    }
    adj
}

/// Tree distances from a set of roots; returns (distance, parent).
fn tree_distances(adj: &[Vec<(usize, f64)>], roots: &[usize]) -> (Vec<f64>, Vec<usize>) {
    let mut d = vec![f64::INFINITY; adj.len()];
    let mut parent = vec![usize::MAX; adj.len()];
    let mut stack: Vec<usize> = roots.to_vec();
    for &r in roots {
        d[r] = 0.0;
    }
    while let Some(u) = stack.pop() {
        for &(v, w) in &adj[u] {
            if d[v].is_infinite() {
                d[v] = d[u] + w;
                parent[v] = u;
                stack.push(v);
            }
        }
    }
    (d, parent)
}

fn walk_back(parent: &[usize], mut v: usize) -> Vec<usize> {
    let mut path = vec![v];
    while parent[v] != usize::MAX {
        v = parent[v];
        path.push(v);
    }
    path
}

/// Decomposes a tree into chains: the diameter first, then repeatedly the
/// longest remaining branch while it is longer than `min_branch`.
fn tree_chains(adj: &[Vec<(usize, f64)>], min_branch: f64) -> Vec<Vec<usize>> {
    let argmax = |d: &[f64]| {
        (0..d.len())
            .filter(|&k| d[k].is_finite())
            .fold(0, |b, k| if d[k] > d[b] { k } else { b })
    };
    let (d0, _) = tree_distances(adj, &[0]);
    let a = argmax(&d0);
    let (da, pa) = tree_distances(adj, &[a]);
    let b = argmax(&da);
    let diameter = walk_back(&pa, b);
    let mut covered = vec![false; adj.len()];
    for &v in &diameter {
        covered[v] = true;
    }
    let mut chains = vec![diameter];
    loop {
        let roots: Vec<usize> = (0..adj.len()).filter(|&k| covered[k]).collect();
        let (d, parent) = tree_distances(adj, &roots);
        let far = argmax(&d);
        if covered[far] || d[far] <= min_branch {
            break;
        }
        let branch = walk_back(&parent, far);
        for &v in &branch {
            covered[v] = true;
        }
        chains.push(branch);
    }
    chains
}

/// Splits a chain where its projection to the parameter plane reverses
/// direction (cusp tips), measuring directions over at least `scale`.
fn split_at_reversals(chain: &[Point2], scale: f64) -> Vec<Vec<Point2>> {
    let n = chain.len();
    if n < 3 {
        return vec![chain.to_vec()];
    }
    let dir = |from: Point2, to: Point2| {
        let v = [to[0] - from[0], to[1] - from[1]];
        let l = v[0].hypot(v[1]);
        [v[0] / l, v[1] / l]
    };
    let mut turn = vec![1.0f64; n];
    for i in 1..n - 1 {
        let back = (0..i).rev().find(|&j| dist(chain[j], chain[i]) >= scale);
        let fwd = (i + 1..n).find(|&j| dist(chain[j], chain[i]) >= scale);
        if let (Some(b), Some(f)) = (back, fwd) {
            let u = dir(chain[b], chain[i]);
            let v = dir(chain[i], chain[f]);
            turn[i] = u[0] * v[0] + u[1] * v[1];
        }
    }
    // One split per run of reversed vertices, at the sharpest turn.
    let mut cuts = Vec::new();
    let mut i = 1;
    while i + 1 < n {
        if turn[i] < -0.5 {
            let start = i;
            while i + 1 < n && turn[i] < -0.5 {
                i += 1;
            }
            let best = (start..i).min_by(|&a, &b| turn[a].total_cmp(&turn[b])).unwrap();
            cuts.push(best);
        }
        i += 1;
    }
    let mut pieces = Vec::new();
    let mut from = 0;
    for c in cuts {
        pieces.push(chain[from..=c].to_vec());
        from = c;
    }
    pieces.push(chain[from..].to_vec());
    pieces
}

/// Groups critical samples into codimension-1 polylines and codimension-2
/// points.
pub fn classify(samples: &[CriticalSample], window: Window, cluster_radius: f64) -> SingularSet {
    let eps = cluster_radius / 60.0;
    let mut set = SingularSet {
        cluster_radius,
        point_extent: eps,
        ..SingularSet::empty(window)
    };
    if samples.is_empty() {
        return set;
    }
    let n = samples.len();
    let mut hash = SpatialHash::new(cluster_radius);
    for (k, s) in samples.iter().enumerate() {
        hash.insert(s.q, k);
    }
    let mut uf = UnionFind::new(n);
    for (k, s) in samples.iter().enumerate() {
        let near: Vec<usize> = hash.near(s.q).filter(|&o| o > k).collect();
        for o in near {
            if dist(samples[o].q, s.q) <= cluster_radius {
                uf.union(k, o);
            }
        }
    }
    let mut clusters: Vec<Vec<usize>> = Vec::new();
    let mut slot: HashMap<usize, usize> = HashMap::new();
    for k in 0..n {
        let r = uf.find(k);
        let id = *slot.entry(r).or_insert_with(|| {
            clusters.push(Vec::new());
            clusters.len() - 1
        });
        clusters[id].push(k);
    }

    let mut points = Vec::new();
    for members in &clusters {
        let qs: Vec<Point2> = members.iter().map(|&k| samples[k].q).collect();
        let ratio = extent_ratio(&qs, cluster_radius, eps);
        let (mx, my) = (
            qs.iter().map(|q| q[0]).sum::<f64>() / qs.len() as f64,
            qs.iter().map(|q| q[1]).sum::<f64>() / qs.len() as f64,
        );
        let is_curve = ratio >= CURVE_RATIO;
        if (AMBIGUOUS_RATIO..CURVE_RATIO).contains(&ratio) {
            set.ambiguous.push(AmbiguousCluster {
                centroid: [mx, my],
                extent_ratio: ratio,
                classified_as: 2,
            });
        }
        if !is_curve {
            points.push([mx, my]);
            continue;
        }
        // Chain in joint (q, p) space so branches that touch in the plane
        // (cusp tips) stay apart.
        let (_, _, major) = principal_axes(&qs);
        let q_extent = bbox_diag(qs.iter().map(|q| q.to_vec()));
        let p_extent = bbox_diag(members.iter().map(|&k| samples[k].p.clone()));
        let scale = if p_extent > 1e-12 { q_extent / p_extent } else { 0.0 };
        let coords: Vec<Vec<f64>> = members
            .iter()
            .map(|&k| {
                let mut c = samples[k].q.to_vec();
                c.extend(samples[k].p.iter().map(|x| x * scale));
                c
            })
            .collect();
        let tree = spanning_tree(&coords);
        for chain in tree_chains(&tree, 2.0 * cluster_radius) {
            let pts: Vec<Point2> = chain.iter().map(|&k| qs[k]).collect();
            for piece in split_at_reversals(&pts, cluster_radius) {
                if piece.len() < 2 {
                    continue;
                }
                let mut piece = piece;
                let proj = |q: &Point2| q[0] * major[0] + q[1] * major[1];
                if proj(piece.last().unwrap()) < proj(&piece[0]) {
                    piece.reverse();
                }
                set.sigma1.push(SingularPolyline::new(piece));
            }
        }
    }
    // Points lying on a curve belong to the curve.
    for p in points {
        let on_curve = set
            .nearest_sigma1(p)
            .is_some_and(|(d, _)| d <= cluster_radius);
        if !on_curve {
            set.sigma2.push(p);
        }
    }
    let margin = 0.5 * cluster_radius;
    set.truncated = set.sigma1.iter().any(|pl| {
        pl.vertices
            .iter()
            .any(|&v| window.boundary_distance(v) <= margin)
    });
    set
}

fn bbox_diag(pts: impl Iterator<Item = Vec<f64>>) -> f64 {
    let mut lo: Vec<f64> = Vec::new();
    let mut hi: Vec<f64> = Vec::new();
    for p in pts {
        if lo.is_empty() {
            lo = p.clone();
            hi = p;
            continue;
        }
        for (k, x) in p.iter().enumerate() {
            lo[k] = lo[k].min(*x);
            hi[k] = hi[k].max(*x);
        }
    }
    lo.iter().zip(&hi).map(|(a, b)| (b - a).powi(2)).sum::<f64>().sqrt()
}

/// Detection followed by classification at the default cluster radius of
/// three cell diagonals.
pub fn singular_set(
    sys: &dyn EquilibriumSystem,
    window: Window,
    resolution: [usize; 2],
    opts: &DetectOptions,
) -> Result<(Vec<CriticalSample>, SingularSet), SingularError> {
    let samples = detect_critical(sys, window, resolution, opts)?;
    let radius = 3.0 * Grid::new(window, resolution).cell_diagonal();
    let set = classify(&samples, window, radius);
    Ok((samples, set))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{make_complex_square, make_cusp};

    fn sample(q: Point2) -> CriticalSample {
        CriticalSample { p: vec![0.0], q, residual: 0.0, det: 0.0 }
    }

    #[test]
    fn empty_samples_give_empty_set() {
        let set = classify(&[], Window::square(-1.0, 1.0), 0.1);
        assert!(set.sigma1.is_empty() && set.sigma2.is_empty());
    }

    #[test]
    fn straight_line_is_a_curve() {
        let samples: Vec<_> = (0..50).map(|k| sample([-1.0 + 0.04 * k as f64, 0.3])).collect();
        let set = classify(&samples, Window::square(-2.0, 2.0), 0.12);
        assert_eq!(set.sigma1.len(), 1);
        assert!(set.sigma2.is_empty());
        assert_eq!(set.sigma1[0].vertices.len(), 50);
        assert!(set.sigma1[0].vertices[0][0] < set.sigma1[0].vertices[49][0]);
    }

    #[test]
    fn tight_cloud_is_a_point() {
        let samples: Vec<_> = (0..10)
            .map(|k| sample([1e-7 * k as f64, -2e-7 * (k % 3) as f64]))
            .collect();
        let set = classify(&samples, Window::square(-2.0, 2.0), 0.05);
        assert!(set.sigma1.is_empty());
        assert_eq!(set.sigma2.len(), 1);
        assert!(set.sigma2[0][0].abs() < 1e-6);
    }

    #[test]
    fn reversal_splits_chain() {
        let mut pts: Vec<Point2> = (0..20).map(|k| [k as f64 * 0.1, 0.001 * k as f64]).collect();
        pts.extend((0..20).rev().map(|k| [k as f64 * 0.1, -0.001 * k as f64 - 0.05]));
        let pieces = split_at_reversals(&pts, 0.2);
        assert_eq!(pieces.len(), 2);
    }

    #[test]
    fn cusp_detection_hits_discriminant() {
        let s = make_cusp();
        let w = Window::new((-4.0, 1.0), (-3.0, 3.0));
        let samples = detect_critical(&s, w, [40, 40], &DetectOptions::default()).unwrap();
        assert!(samples.len() > 40);
        for smp in &samples {
            let disc = 4.0 * smp.q[0].powi(3) + 27.0 * smp.q[1].powi(2);
            assert!(disc.abs() < 1e-6, "{smp:?}");
        }
        // q = (-3, 2) lies on a grid line; its critical point is the double root p = 1.
        let hit = samples
            .iter()
            .find(|smp| (smp.q[0] + 3.0).abs() < 1e-9 && (smp.q[1] - 2.0).abs() < 1e-6)
            .expect("sample on the line q1 = -3");
        assert!((hit.p[0] - 1.0).abs() < 1e-6);
    }

    #[test]
    fn complex_square_detects_origin_only() {
        let s = make_complex_square();
        let w = Window::square(-2.0, 2.0);
        let samples = detect_critical(&s, w, [32, 32], &DetectOptions::default()).unwrap();
        assert!(!samples.is_empty());
        for smp in &samples {
            assert!(smp.q[0].hypot(smp.q[1]) <= 1e-4, "{smp:?}");
            assert!(verify_sample(&s, smp));
        }
        let set = classify(&samples, w, 3.0 * Grid::new(w, [32, 32]).cell_diagonal());
        assert!(set.sigma1.is_empty());
        assert_eq!(set.sigma2.len(), 1);
    }
}
