//! Fiber enumeration and path lifting.
//!
//! Over the regular part of the parameter space the projection of the
//! equilibrium set is a covering map, so every parameter path avoiding the
//! singular values lifts uniquely once a starting equilibrium is fixed.
//! [`lift_path`] realizes that lift with tangent-predictor / Newton-corrector
//! continuation; [`solve_fiber`] enumerates all equilibria over one `q`.

use crate::model::EquilibriumSystem;
use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::cmp::Ordering;
use thiserror::Error;

pub const TOL_RESIDUAL: f64 = 1e-10;
pub const DET_FLOOR: f64 = 1e-8;
pub const DEDUP_RADIUS: f64 = 1e-6;
const DEFAULT_BOX_HALF_WIDTH: f64 = 10.0;

#[derive(Debug, Clone, Error, PartialEq)]
pub enum SolverError {
    #[error("Newton reached the iteration cap ({iterations}) with residual {residual:e}")]
    IterationCap { iterations: usize, residual: f64 },
    #[error("Newton diverged")]
    Diverged,
    #[error("singular linear solve")]
    SingularJacobian,
    #[error("Newton stalled with residual {residual:e}")]
    Stalled { residual: f64 },
    #[error("corrector iterates did not contract")]
    NotContracting,
    #[error("near-singular fiber at q = {q:?}: |det jac_p| = {det:e}")]
    NearSingularFiber { q: Vec<f64>, det: f64 },
    #[error("singular encounter at q = {q:?} (arc length {s:.6}): |det jac_p| = {det:e}")]
    SingularEncounter { s: f64, q: Vec<f64>, det: f64 },
    #[error("corrector failure at q = {q:?} (arc length {s:.6}) after repeated step halving")]
    CorrectorFailure { s: f64, q: Vec<f64> },
    #[error("start point is not an equilibrium: residual {residual:e}")]
    InvalidStart { residual: f64 },
    #[error("dimension mismatch: {0}")]
    Dimension(String),
}

impl SolverError {
    /// Failures caused by touching the singular set rather than by numerics.
    pub fn is_singular(&self) -> bool {
        matches!(
            self,
            SolverError::NearSingularFiber { .. } | SolverError::SingularEncounter { .. }
        )
    }
}

#[inline]
pub(crate) fn norm_inf(v: &DVector<f64>) -> f64 {
    v.iter().fold(0.0f64, |m, x| if x.is_nan() { f64::NAN } else { m.max(x.abs()) })
}

/// Determinant with closed forms for the small sizes used here.
pub fn det(m: &DMatrix<f64>) -> f64 {
    match m.nrows() {
        0 => 1.0,
        1 => m[(0, 0)],
        2 => m[(0, 0)] * m[(1, 1)] - m[(0, 1)] * m[(1, 0)],
        _ => m.clone().lu().determinant(),
    }
}

/// Solves `m x = b`, `None` when the matrix is singular or the result is not finite.
pub fn solve_linear(m: &DMatrix<f64>, b: &DVector<f64>) -> Option<DVector<f64>> {
    let x = match m.nrows() {
        1 => {
            if m[(0, 0)] == 0.0 {
                return None;
            }
            DVector::from_element(1, b[0] / m[(0, 0)])
        }
        _ => m.clone().lu().solve(b)?,
    };
    if x.iter().all(|v| v.is_finite()) {
        Some(x)
    } else {
        None
    }
}

#[derive(Clone, Copy, Debug)]
pub struct NewtonSettings {
    pub tol_residual: f64,
    pub max_iter: usize,
    /// Quadratic-phase termination threshold on the step norm.
    pub step_tol: f64,
    /// Give up when the residual has not improved for this many iterations.
    pub stall_window: usize,
    /// Require `|step_{k+1}| <= contraction * |step_k|`.
    pub contraction: Option<f64>,
    /// Upper bound on the first Newton step.
    pub max_first_step: Option<f64>,
}

impl Default for NewtonSettings {
    fn default() -> Self {
        NewtonSettings {
            tol_residual: TOL_RESIDUAL,
            max_iter: 50,
            step_tol: 1e-13,
            stall_window: 10,
            contraction: None,
            max_first_step: None,
        }
    }
}

#[derive(Clone, Debug)]
pub struct NewtonOutcome {
    pub p: DVector<f64>,
    pub residual: f64,
    pub iterations: usize,
}

fn outside_divergence_box(p: &DVector<f64>, bbox: Option<&[(f64, f64)]>) -> bool {
    match bbox {
        Some(b) => p.iter().zip(b).any(|(&x, &(lo, hi))| {
            let c = 0.5 * (lo + hi);
            let half = 0.5 * (hi - lo);
            (x - c).abs() > 10.0 * half
        }),
        None => norm_inf(p) > 1e8,
    }
}

/// Plain Newton iteration in the unknowns at fixed `q`.
pub fn newton(
    sys: &dyn EquilibriumSystem,
    p0: &DVector<f64>,
    q: &DVector<f64>,
    settings: &NewtonSettings,
) -> Result<NewtonOutcome, SolverError> {
    let bbox = sys.domain_box();
    let bbox = bbox.as_deref();
    let mut p = p0.clone();
    let mut r = sys.eval(&p, q);
    let mut rn = norm_inf(&r);
    if !rn.is_finite() {
        return Err(SolverError::Diverged);
    }
    let mut prev_step = f64::INFINITY;
    let mut best = rn;
    let mut best_iter = 0;
    for it in 0..settings.max_iter {
        if rn == 0.0 {
            return Ok(NewtonOutcome { p, residual: rn, iterations: it });
        }
        let j = sys.jac_p(&p, q);
        let dp = solve_linear(&j, &(-&r)).ok_or(SolverError::SingularJacobian)?;
        let step = norm_inf(&dp);
        if it == 0 {
            if let Some(m) = settings.max_first_step {
                if step > m {
                    return Err(SolverError::NotContracting);
                }
            }
        }
        if let Some(c) = settings.contraction {
            let noise = 1e-12 * (1.0 + norm_inf(&p));
            if it > 0 && step > noise && step > c * prev_step {
                return Err(SolverError::NotContracting);
            }
        }
        let p_new = &p + &dp;
        let r_new = sys.eval(&p_new, q);
        let rn_new = norm_inf(&r_new);
        if !rn_new.is_finite() {
            return Err(SolverError::Diverged);
        }
        if rn <= settings.tol_residual && rn_new >= rn {
            // Round-off floor reached; the previous iterate is the answer.
            return Ok(NewtonOutcome { p, residual: rn, iterations: it });
        }
        p = p_new;
        r = r_new;
        rn = rn_new;
        prev_step = step;
        if outside_divergence_box(&p, bbox) {
            return Err(SolverError::Diverged);
        }
        if rn <= settings.tol_residual && step < settings.step_tol {
            return Ok(NewtonOutcome { p, residual: rn, iterations: it + 1 });
        }
        if rn < best {
            best = rn;
            best_iter = it;
        } else if it - best_iter >= settings.stall_window {
            return Err(SolverError::Stalled { residual: rn });
        }
    }
    if rn <= settings.tol_residual {
        Ok(NewtonOutcome { p, residual: rn, iterations: settings.max_iter })
    } else {
        Err(SolverError::IterationCap { iterations: settings.max_iter, residual: rn })
    }
}

/// Polishes `p0` to a root of `f(., q)` with the default tolerances.
pub fn newton_polish(
    sys: &dyn EquilibriumSystem,
    p0: &[f64],
    q: &[f64],
) -> Result<Vec<f64>, SolverError> {
    check_dims(sys, p0, q)?;
    let out = newton(
        sys,
        &DVector::from_row_slice(p0),
        &DVector::from_row_slice(q),
        &NewtonSettings::default(),
    )?;
    Ok(out.p.iter().copied().collect())
}

fn check_dims(sys: &dyn EquilibriumSystem, p: &[f64], q: &[f64]) -> Result<(), SolverError> {
    if p.len() != sys.n_p() || q.len() != sys.n_q() {
        return Err(SolverError::Dimension(format!(
            "{} expects |p| = {}, |q| = {}; got {} and {}",
            sys.name(),
            sys.n_p(),
            sys.n_q(),
            p.len(),
            q.len()
        )));
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// Fibers

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FiberPoint {
    pub p: Vec<f64>,
    pub residual: f64,
    pub det: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Fiber {
    pub q: Vec<f64>,
    pub points: Vec<FiberPoint>,
    pub dedup_radius: f64,
}

impl Fiber {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn min_abs_det(&self) -> f64 {
        self.points
            .iter()
            .map(|pt| pt.det.abs())
            .fold(f64::INFINITY, f64::min)
    }

    pub fn is_regular(&self, det_floor: f64) -> bool {
        self.min_abs_det() >= det_floor
    }
}

#[derive(Clone, Copy, Debug)]
pub struct FiberOptions {
    /// Multi-start seeds per axis of the domain box.
    pub seeds_per_axis: usize,
    /// Intervals of the sign-change sweep used when there is one unknown.
    pub sweep_intervals: usize,
    /// Deflated Newton restarts after the plain multi-start pass.
    pub deflation_restarts: usize,
    pub dedup_radius: f64,
    pub det_floor: f64,
    pub newton: NewtonSettings,
}

impl Default for FiberOptions {
    fn default() -> Self {
        FiberOptions {
            seeds_per_axis: 33,
            sweep_intervals: 4096,
            deflation_restarts: 16,
            dedup_radius: DEDUP_RADIUS,
            det_floor: DET_FLOOR,
            newton: NewtonSettings::default(),
        }
    }
}

impl FiberOptions {
    pub fn with_seeds(mut self, seeds_per_axis: usize) -> Self {
        self.seeds_per_axis = seeds_per_axis;
        self
    }
}

pub(crate) fn domain_or_default(sys: &dyn EquilibriumSystem) -> Vec<(f64, f64)> {
    sys.domain_box().unwrap_or_else(|| {
        vec![(-DEFAULT_BOX_HALF_WIDTH, DEFAULT_BOX_HALF_WIDTH); sys.n_p()]
    })
}

fn in_box(p: &DVector<f64>, bbox: &[(f64, f64)]) -> bool {
    p.iter().zip(bbox).all(|(&x, &(lo, hi))| x >= lo && x <= hi)
}

/// Cell-centred seeds, `k` per axis.
pub(crate) fn seed_grid(bbox: &[(f64, f64)], k: usize) -> Vec<DVector<f64>> {
    let n = bbox.len();
    let total = k.pow(n as u32);
    (0..total)
        .map(|mut idx| {
            DVector::from_iterator(
                n,
                bbox.iter().map(|&(lo, hi)| {
                    let c = idx % k;
                    idx /= k;
                    lo + (c as f64 + 0.5) / k as f64 * (hi - lo)
                }),
            )
        })
        .collect()
}

pub(crate) fn lex_cmp(a: &[f64], b: &[f64]) -> Ordering {
    for (x, y) in a.iter().zip(b) {
        match x.total_cmp(y) {
            Ordering::Equal => continue,
            o => return o,
        }
    }
    a.len().cmp(&b.len())
}

/// Sorts lexicographically and drops points within `radius` of an earlier one.
pub(crate) fn dedup_sorted(mut pts: Vec<DVector<f64>>, radius: f64) -> Vec<DVector<f64>> {
    pts.sort_by(|a, b| lex_cmp(a.as_slice(), b.as_slice()));
    let mut kept: Vec<DVector<f64>> = Vec::with_capacity(pts.len());
    for p in pts {
        if kept.iter().all(|k| (k - &p).norm() >= radius) {
            kept.push(p);
        }
    }
    kept
}

/// Sign-change sweep plus bisection for scalar systems.
fn sweep_scalar(
    sys: &dyn EquilibriumSystem,
    q: &DVector<f64>,
    (lo, hi): (f64, f64),
    intervals: usize,
    settings: &NewtonSettings,
) -> Vec<DVector<f64>> {
    let f = |x: f64| sys.eval(&DVector::from_element(1, x), q)[0];
    let xs: Vec<f64> = (0..=intervals)
        .map(|k| {
            if k == intervals {
                hi
            } else {
                lo + (hi - lo) * k as f64 / intervals as f64
            }
        })
        .collect();
    let vals: Vec<f64> = xs.iter().map(|&x| f(x)).collect();
    let mut roots = Vec::new();
    for k in 0..intervals {
        let (a, b) = (xs[k], xs[k + 1]);
        let (fa, fb) = (vals[k], vals[k + 1]);
        if !(fa.is_finite() && fb.is_finite()) {
            continue;
        }
        if fa == 0.0 {
            roots.push(a);
            continue;
        }
        if k + 1 == intervals && fb == 0.0 {
            roots.push(b);
            continue;
        }
        if (fa < 0.0) == (fb < 0.0) {
            continue;
        }
        let (mut a, mut b, mut fa) = (a, b, fa);
        for _ in 0..200 {
            let m = 0.5 * (a + b);
            if m <= a || m >= b {
                break;
            }
            let fm = f(m);
            if fm == 0.0 {
                a = m;
                b = m;
                break;
            }
            if (fm < 0.0) == (fa < 0.0) {
                a = m;
                fa = fm;
            } else {
                b = m;
            }
        }
        roots.push(0.5 * (a + b));
    }
    roots
        .into_iter()
        .filter_map(|x| {
            let p = DVector::from_element(1, x);
            match newton(sys, &p, q, settings) {
                Ok(o) => Some(o.p),
                // Bisection converged to machine precision but Newton could
                // not improve it (flat double root); keep it if it is a root.
                Err(_) if norm_inf(&sys.eval(&p, q)) <= settings.tol_residual => Some(p),
                Err(_) => None,
            }
        })
        .collect()
}

/// Newton on the deflated map `m(p) f(p)`, `m(p) = prod_i (1/|p - r_i|^2 + 1)`.
fn deflated_newton(
    sys: &dyn EquilibriumSystem,
    p0: &DVector<f64>,
    q: &DVector<f64>,
    known: &[DVector<f64>],
    bbox: &[(f64, f64)],
    max_iter: usize,
) -> Option<DVector<f64>> {
    let mut p = p0.clone();
    for _ in 0..max_iter {
        let f = sys.eval(&p, q);
        let fnorm = norm_inf(&f);
        if !fnorm.is_finite() {
            return None;
        }
        if fnorm <= 1e-8 {
            return Some(p);
        }
        // (J + f g^T) dp = -f with g = grad log m.
        let mut g = DVector::zeros(p.len());
        for r in known {
            let d = &p - r;
            let d2 = d.norm_squared();
            if d2 == 0.0 {
                return None;
            }
            g -= d * (2.0 / (d2 + d2 * d2));
        }
        let j = sys.jac_p(&p, q) + &f * g.transpose();
        let dp = solve_linear(&j, &(-&f))?;
        p += dp;
        if outside_divergence_box(&p, Some(bbox)) {
            return None;
        }
    }
    None
}

/// All equilibria found over `q`, without the regularity check.
pub fn enumerate_fiber(sys: &dyn EquilibriumSystem, q: &[f64], opts: &FiberOptions) -> Fiber {
    let qv = DVector::from_row_slice(q);
    let bbox = domain_or_default(sys);
    let n = sys.n_p();
    let mut found: Vec<DVector<f64>> = Vec::new();
    if n == 1 {
        found.extend(sweep_scalar(sys, &qv, bbox[0], opts.sweep_intervals, &opts.newton));
    }
    let seeds = seed_grid(&bbox, opts.seeds_per_axis.max(1));
    let mut failed = Vec::new();
    for (k, s) in seeds.iter().enumerate() {
        match newton(sys, s, &qv, &opts.newton) {
            Ok(o) if in_box(&o.p, &bbox) => found.push(o.p),
            _ => failed.push(k),
        }
    }
    let mut roots = dedup_sorted(found, opts.dedup_radius);

    // Deflation restarts from evenly spaced seeds, preferring seeds whose
    // plain Newton run failed.
    let pool: Vec<usize> = if failed.is_empty() {
        (0..seeds.len()).collect()
    } else {
        failed
    };
    let restarts = opts.deflation_restarts.min(pool.len());
    for r in 0..restarts {
        let seed = &seeds[pool[r * pool.len() / restarts]];
        if let Some(p) = deflated_newton(sys, seed, &qv, &roots, &bbox, 40) {
            if let Ok(o) = newton(sys, &p, &qv, &opts.newton) {
                if in_box(&o.p, &bbox)
                    && roots.iter().all(|k| (k - &o.p).norm() >= opts.dedup_radius)
                {
                    roots.push(o.p);
                    roots = dedup_sorted(roots, opts.dedup_radius);
                }
            }
        }
    }

    let points = roots
        .into_iter()
        .map(|p| {
            let residual = norm_inf(&sys.eval(&p, &qv));
            let d = det(&sys.jac_p(&p, &qv));
            FiberPoint { p: p.iter().copied().collect(), residual, det: d }
        })
        .filter(|pt| pt.residual <= opts.newton.tol_residual)
        .collect();
    Fiber { q: q.to_vec(), points, dedup_radius: opts.dedup_radius }
}

/// All equilibria over `q`; errors when `q` is numerically a singular value.
pub fn solve_fiber(
    sys: &dyn EquilibriumSystem,
    q: &[f64],
    opts: &FiberOptions,
) -> Result<Fiber, SolverError> {
    if q.len() != sys.n_q() {
        return Err(SolverError::Dimension(format!(
            "{} expects |q| = {}, got {}",
            sys.name(),
            sys.n_q(),
            q.len()
        )));
    }
    let fiber = enumerate_fiber(sys, q, opts);
    let min_det = fiber.min_abs_det();
    if min_det < opts.det_floor {
        return Err(SolverError::NearSingularFiber { q: q.to_vec(), det: min_det });
    }
    Ok(fiber)
}

/// Fibers over many parameter points, in parallel.
pub fn solve_fibers(
    sys: &dyn EquilibriumSystem,
    qs: &[Vec<f64>],
    opts: &FiberOptions,
) -> Vec<Fiber> {
    qs.par_iter().map(|q| enumerate_fiber(sys, q, opts)).collect()
}

// ---------------------------------------------------------------------------
// Path lifting

#[derive(Clone, Copy, Debug)]
pub struct LiftOptions {
    /// Initial step as a fraction of the path length.
    pub initial_fraction: f64,
    /// Step cap as a fraction of the path length.
    pub max_fraction: f64,
    /// Halvings of a single step before giving up.
    pub max_halvings: usize,
    /// Corrector runs using at most this many iterations count as easy.
    pub easy_iterations: usize,
    /// Consecutive easy steps before the step is doubled.
    pub easy_streak: usize,
    pub det_floor: f64,
    pub newton: NewtonSettings,
}

impl Default for LiftOptions {
    fn default() -> Self {
        LiftOptions {
            initial_fraction: 1.0 / 64.0,
            max_fraction: 1.0 / 16.0,
            max_halvings: 5,
            easy_iterations: 3,
            easy_streak: 4,
            det_floor: DET_FLOOR,
            newton: NewtonSettings { max_iter: 12, ..NewtonSettings::default() },
        }
    }
}

impl LiftOptions {
    /// Same policy with every step length halved.
    pub fn halved(mut self) -> Self {
        self.initial_fraction *= 0.5;
        self.max_fraction *= 0.5;
        self
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LiftResult {
    pub path: Vec<Vec<f64>>,
    pub p_start: Vec<f64>,
    pub p_end: Vec<f64>,
    pub min_abs_det: f64,
    pub steps: usize,
}

struct Polyline {
    vertices: Vec<DVector<f64>>,
    /// Cumulative arc length at each vertex.
    cum: Vec<f64>,
}

impl Polyline {
    fn new(path: &[Vec<f64>]) -> Self {
        let vertices: Vec<DVector<f64>> =
            path.iter().map(|v| DVector::from_row_slice(v)).collect();
        let mut cum = vec![0.0];
        for w in vertices.windows(2) {
            let l = (&w[1] - &w[0]).norm();
            cum.push(cum.last().unwrap() + l);
        }
        Polyline { vertices, cum }
    }

    fn length(&self) -> f64 {
        *self.cum.last().unwrap()
    }

    /// Point at arc length `s` on segment `k`.
    fn at(&self, k: usize, s: f64) -> DVector<f64> {
        let len = self.cum[k + 1] - self.cum[k];
        if s >= self.cum[k + 1] {
            return self.vertices[k + 1].clone();
        }
        let t = ((s - self.cum[k]) / len).clamp(0.0, 1.0);
        &self.vertices[k] + (&self.vertices[k + 1] - &self.vertices[k]) * t
    }

    fn direction(&self, k: usize) -> DVector<f64> {
        let d = &self.vertices[k + 1] - &self.vertices[k];
        let n = d.norm();
        d / n
    }
}

/// Lifts a parameter polyline starting from the equilibrium `p_start` over
/// its first vertex.
/// Relative arclength below which a leftover step is merged into the previous one.
const SNAP: f64 = 1e-9;

pub fn lift_path(
    sys: &dyn EquilibriumSystem,
    path: &[Vec<f64>],
    p_start: &[f64],
    opts: &LiftOptions,
) -> Result<LiftResult, SolverError> {
    if path.is_empty() {
        return Err(SolverError::Dimension("empty path".into()));
    }
    check_dims(sys, p_start, &path[0])?;
    if path.iter().any(|v| v.len() != sys.n_q()) {
        return Err(SolverError::Dimension("path vertex of wrong dimension".into()));
    }
    let poly = Polyline::new(path);
    let q0 = poly.vertices[0].clone();
    let mut p = DVector::from_row_slice(p_start);
    let r0 = norm_inf(&sys.eval(&p, &q0));
    if !(r0 <= 1e-6) {
        return Err(SolverError::InvalidStart { residual: r0 });
    }
    if r0 > opts.newton.tol_residual {
        p = newton(sys, &p, &q0, &opts.newton)?.p;
    }
    let det0 = det(&sys.jac_p(&p, &q0)).abs();
    if det0 < opts.det_floor {
        return Err(SolverError::SingularEncounter { s: 0.0, q: q0.iter().copied().collect(), det: det0 });
    }
    let total = poly.length();
    let mut result = LiftResult {
        path: path.to_vec(),
        p_start: p.iter().copied().collect(),
        p_end: p.iter().copied().collect(),
        min_abs_det: det0,
        steps: 0,
    };
    if total == 0.0 {
        return Ok(result);
    }

    let h_max = opts.max_fraction * total;
    let mut h = opts.initial_fraction * total;
    let mut s = 0.0;
    let mut seg = 0;
    let mut easy = 0;
    let mut q = q0;
    while seg + 1 < poly.vertices.len() {
        let seg_end = poly.cum[seg + 1];
        if s >= seg_end {
            seg += 1;
            continue;
        }
        let u = poly.direction(seg);
        let jp = sys.jac_p(&p, &q);
        let jq = sys.jac_q(&p, &q);
        let tangent = solve_linear(&jp, &(-(jq * &u))).ok_or_else(|| {
            SolverError::SingularEncounter { s, q: q.iter().copied().collect(), det: det(&jp).abs() }
        })?;
        let tnorm = norm_inf(&tangent);

        let mut halvings = 0;
        let (s_next, q_next, corrected) = loop {
            let s_next = if s + h >= seg_end - SNAP * total { seg_end } else { s + h };
            let ds = s_next - s;
            let q_next = poly.at(seg, s_next);
            let pred = &p + &tangent * ds;
            let settings = NewtonSettings {
                contraction: Some(0.5),
                max_first_step: Some(ds * (1.0 + tnorm)),
                ..opts.newton
            };
            match newton(sys, &pred, &q_next, &settings) {
                Ok(o) => break (s_next, q_next, o),
                Err(_) => {
                    halvings += 1;
                    if halvings > opts.max_halvings {
                        return Err(SolverError::CorrectorFailure {
                            s,
                            q: q.iter().copied().collect(),
                        });
                    }
                    h *= 0.5;
                    easy = 0;
                }
            }
        };
        let d = det(&sys.jac_p(&corrected.p, &q_next)).abs();
        if d < opts.det_floor {
            return Err(SolverError::SingularEncounter {
                s: s_next,
                q: q_next.iter().copied().collect(),
                det: d,
            });
        }
        result.min_abs_det = result.min_abs_det.min(d);
        result.steps += 1;
        p = corrected.p;
        q = q_next;
        s = s_next;
        if corrected.iterations <= opts.easy_iterations && halvings == 0 {
            easy += 1;
            if easy >= opts.easy_streak {
                h = (2.0 * h).min(h_max);
                easy = 0;
            }
        } else {
            easy = 0;
        }
    }
    result.p_end = p.iter().copied().collect();
    Ok(result)
}

/// Lifts along the path and then back along its reversal; returns both lifts
/// and the distance between the final point and `p_start`.
pub fn round_trip(
    sys: &dyn EquilibriumSystem,
    path: &[Vec<f64>],
    p_start: &[f64],
    opts: &LiftOptions,
) -> Result<(LiftResult, LiftResult, f64), SolverError> {
    let fwd = lift_path(sys, path, p_start, opts)?;
    let rev_path: Vec<Vec<f64>> = path.iter().rev().cloned().collect();
    let back = lift_path(sys, &rev_path, &fwd.p_end, opts)?;
    let dev = back
        .p_end
        .iter()
        .zip(&fwd.p_start)
        .map(|(a, b)| (a - b).powi(2))
        .sum::<f64>()
        .sqrt();
    Ok((fwd, back, dev))
}
