//! Local-uniqueness analysis for parametrized equilibrium systems `f(p, q) = 0`.
//!
//! The pipeline computes the singular values of the projection `(p, q) -> q`,
//! splits them into curves (which disconnect the parameter plane) and isolated
//! points (which punch holes into it), measures the distance `d_x` from a
//! regular parameter `x` to the curves and the length `m_x` of the shortest
//! non-contractible loop at `x`, and assembles the radius
//!
//! ```text
//! r_x = 3 d_x              if m_x = 0
//! r_x = min(m_x, d_x)      otherwise
//! ```
//!
//! inside which the projection restricted to the ball of radius `r_x / 3`
//! around a lift of `x` is injective. The claim is checked on an explicit
//! covering graph built by numerical path lifting.

pub mod atlas;
pub mod geometry;
pub mod grid;
pub mod model;
pub mod radius;
pub mod singular;
pub mod solver;

pub use grid::{Grid, Point2, Window};
pub use model::{build_system, EquilibriumSystem, ModelConfig, ModelError, ModelKind};
pub use solver::{Fiber, FiberPoint, LiftResult, SolverError};
pub use atlas::{Atlas, AtlasNode};
pub use geometry::{GeoReport, GeometryError, RegionGraph};
pub use radius::{certify, Case, CertifyError, LiftedGraph, Permutation, RadiusCertificate, RadiusError, Verdict};
pub use singular::{CriticalSample, SingularError, SingularPolyline, SingularSet};

/// Rounds to 12 significant digits so that text output is reproducible
/// across platforms.
pub fn round_sig(x: f64) -> f64 {
    if !x.is_finite() || x == 0.0 {
        return x;
    }
    format!("{x:.11e}").parse().unwrap_or(x)
}

pub fn fmt_num(x: f64) -> String {
    round_sig(x).to_string()
}
