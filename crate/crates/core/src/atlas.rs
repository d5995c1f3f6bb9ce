//! Fiber counts over the grid together with the singular set.

use crate::grid::{Grid, Point2, Window};
use crate::model::EquilibriumSystem;
use crate::singular::{self, DetectOptions, SingularError, SingularSet};
use crate::solver::{enumerate_fiber, FiberOptions};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AtlasNode {
    pub q: Point2,
    pub count: usize,
    pub min_abs_det: f64,
    /// Some equilibrium over this node has `|det jac_p|` below the floor.
    pub near_singular: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Atlas {
    pub model: String,
    pub window: Window,
    pub resolution: [usize; 2],
    pub nodes: Vec<AtlasNode>,
    pub singular: SingularSet,
}

/// Enumerates the fiber over every grid node.
pub fn fiber_counts(
    sys: &dyn EquilibriumSystem,
    window: Window,
    resolution: [usize; 2],
    opts: &FiberOptions,
) -> Vec<AtlasNode> {
    let grid = Grid::new(window, resolution);
    (0..grid.len())
        .into_par_iter()
        .map(|k| {
            let q = grid.node_coord(k);
            let fiber = enumerate_fiber(sys, &q, opts);
            let min_abs_det = fiber.min_abs_det();
            AtlasNode { q, count: fiber.len(), min_abs_det, near_singular: min_abs_det < opts.det_floor }
        })
        .collect()
}

pub fn build_atlas(
    sys: &dyn EquilibriumSystem,
    window: Window,
    resolution: [usize; 2],
    fiber: &FiberOptions,
    detect: &DetectOptions,
) -> Result<Atlas, SingularError> {
    let (_, singular) = singular::singular_set(sys, window, resolution, detect)?;
    let nodes = fiber_counts(sys, window, resolution, fiber);
    Ok(Atlas { model: sys.name().to_string(), window, resolution, nodes, singular })
}

impl Atlas {
    /// Number of regular nodes per fiber count.
    pub fn histogram(&self) -> BTreeMap<usize, usize> {
        let mut h = BTreeMap::new();
        for n in self.nodes.iter().filter(|n| !n.near_singular) {
            *h.entry(n.count).or_insert(0) += 1;
        }
        h
    }

    /// Rows `q1,q2,count,near_singular`.
    pub fn counts_csv(&self) -> String {
        let mut out = String::from("q1,q2,count,near_singular\n");
        for n in &self.nodes {
            out.push_str(&format!(
                "{},{},{},{}\n",
                crate::fmt_num(n.q[0]),
                crate::fmt_num(n.q[1]),
                n.count,
                n.near_singular as u8
            ));
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::make_cusp;

    #[test]
    fn cusp_counts_follow_discriminant() {
        let s = make_cusp();
        let w = Window::new((-4.0, 1.0), (-3.0, 3.0));
        let nodes = fiber_counts(&s, w, [20, 20], &FiberOptions::default());
        for n in nodes.iter().filter(|n| !n.near_singular) {
            let disc = 4.0 * n.q[0].powi(3) + 27.0 * n.q[1].powi(2);
            if disc.abs() > 1e-6 {
                assert_eq!(n.count, if disc < 0.0 { 3 } else { 1 }, "{:?}", n.q);
            }
        }
    }
}
