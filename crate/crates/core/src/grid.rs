//! Rectangular parameter windows and the uniform node grid laid over them.

use serde::{Deserialize, Serialize};
use std::fmt;

/// A point of the 2-D parameter plane.
pub type Point2 = [f64; 2];

/// Axis-aligned parameter rectangle, serialized as `[[q1min,q1max],[q2min,q2max]]`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(from = "[[f64; 2]; 2]", into = "[[f64; 2]; 2]")]
pub struct Window {
    pub q1: (f64, f64),
    pub q2: (f64, f64),
}

impl From<[[f64; 2]; 2]> for Window {
    fn from(a: [[f64; 2]; 2]) -> Self {
        Window {
            q1: (a[0][0], a[0][1]),
            q2: (a[1][0], a[1][1]),
        }
    }
}

impl From<Window> for [[f64; 2]; 2] {
    fn from(w: Window) -> Self {
        [[w.q1.0, w.q1.1], [w.q2.0, w.q2.1]]
    }
}

impl Window {
    pub fn new(q1: (f64, f64), q2: (f64, f64)) -> Self {
        Window { q1, q2 }
    }

    pub fn square(lo: f64, hi: f64) -> Self {
        Window::new((lo, hi), (lo, hi))
    }

    pub fn width(&self) -> f64 {
        self.q1.1 - self.q1.0
    }

    pub fn height(&self) -> f64 {
        self.q2.1 - self.q2.0
    }

    pub fn is_nondegenerate(&self) -> bool {
        let finite = [self.q1.0, self.q1.1, self.q2.0, self.q2.1]
            .iter()
            .all(|v| v.is_finite());
        finite && self.width() > 0.0 && self.height() > 0.0
    }

    pub fn axis(&self, k: usize) -> (f64, f64) {
        if k == 0 {
            self.q1
        } else {
            self.q2
        }
    }

    pub fn contains(&self, q: Point2, tol: f64) -> bool {
        q[0] >= self.q1.0 - tol
            && q[0] <= self.q1.1 + tol
            && q[1] >= self.q2.0 - tol
            && q[1] <= self.q2.1 + tol
    }

    /// Euclidean distance from an interior point to the window boundary.
    pub fn boundary_distance(&self, q: Point2) -> f64 {
        let dx = (q[0] - self.q1.0).min(self.q1.1 - q[0]);
        let dy = (q[1] - self.q2.0).min(self.q2.1 - q[1]);
        dx.min(dy).max(0.0)
    }

    pub fn diagonal(&self) -> f64 {
        self.width().hypot(self.height())
    }
}

impl fmt::Display for Window {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "[{}, {}] x [{}, {}]",
            self.q1.0, self.q1.1, self.q2.0, self.q2.1
        )
    }
}

/// Uniform grid over a window. `cells[k]` intervals along axis `k`, so the
/// grid has `(cells[0] + 1) * (cells[1] + 1)` nodes including the boundary.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Grid {
    pub window: Window,
    pub cells: [usize; 2],
}

impl Grid {
    pub fn new(window: Window, cells: [usize; 2]) -> Self {
        assert!(cells[0] >= 1 && cells[1] >= 1, "grid needs at least one cell per axis");
        Grid { window, cells }
    }

    pub fn nx(&self) -> usize {
        self.cells[0] + 1
    }

    pub fn ny(&self) -> usize {
        self.cells[1] + 1
    }

    pub fn len(&self) -> usize {
        self.nx() * self.ny()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn spacing(&self) -> [f64; 2] {
        [
            self.window.width() / self.cells[0] as f64,
            self.window.height() / self.cells[1] as f64,
        ]
    }

    pub fn cell_diagonal(&self) -> f64 {
        let h = self.spacing();
        h[0].hypot(h[1])
    }

    #[inline]
    pub fn index(&self, i: usize, j: usize) -> usize {
        i + j * self.nx()
    }

    #[inline]
    pub fn ij(&self, idx: usize) -> (usize, usize) {
        (idx % self.nx(), idx / self.nx())
    }

    /// Coordinates of node `(i, j)`. Every caller goes through here so that
    /// identical nodes always get bit-identical coordinates.
    #[inline]
    pub fn coord(&self, i: usize, j: usize) -> Point2 {
        let w = &self.window;
        let x = if i == self.cells[0] {
            w.q1.1
        } else {
            w.q1.0 + (i as f64) * (w.width() / self.cells[0] as f64)
        };
        let y = if j == self.cells[1] {
            w.q2.1
        } else {
            w.q2.0 + (j as f64) * (w.height() / self.cells[1] as f64)
        };
        [x, y]
    }

    #[inline]
    pub fn node_coord(&self, idx: usize) -> Point2 {
        let (i, j) = self.ij(idx);
        self.coord(i, j)
    }

    /// Nearest grid node to `q` (clamped into the window).
    pub fn snap(&self, q: Point2) -> usize {
        let h = self.spacing();
        let fi = ((q[0] - self.window.q1.0) / h[0]).round();
        let fj = ((q[1] - self.window.q2.0) / h[1]).round();
        let i = fi.clamp(0.0, self.cells[0] as f64) as usize;
        let j = fj.clamp(0.0, self.cells[1] as f64) as usize;
        self.index(i, j)
    }

    pub fn on_boundary(&self, idx: usize) -> bool {
        let (i, j) = self.ij(idx);
        i == 0 || j == 0 || i == self.cells[0] || j == self.cells[1]
    }

    /// The 8-neighbourhood of a node, clipped to the grid.
    pub fn neighbors8(&self, idx: usize) -> impl Iterator<Item = usize> + '_ {
        let (i, j) = self.ij(idx);
        const OFFSETS: [(isize, isize); 8] = [
            (1, 0),
            (1, 1),
            (0, 1),
            (-1, 1),
            (-1, 0),
            (-1, -1),
            (0, -1),
            (1, -1),
        ];
        OFFSETS.iter().filter_map(move |&(di, dj)| {
            let ni = i as isize + di;
            let nj = j as isize + dj;
            if ni < 0 || nj < 0 || ni > self.cells[0] as isize || nj > self.cells[1] as isize {
                None
            } else {
                Some(self.index(ni as usize, nj as usize))
            }
        })
    }

    pub fn neighbors4(&self, idx: usize) -> impl Iterator<Item = usize> + '_ {
        self.neighbors8(idx).filter(move |&n| {
            let (i, j) = self.ij(idx);
            let (a, b) = self.ij(n);
            i == a || j == b
        })
    }
}

#[inline]
pub fn dist(a: Point2, b: Point2) -> f64 {
    (a[0] - b[0]).hypot(a[1] - b[1])
}

/// Distance from `p` to the segment `[a, b]` and the closest point on it.
pub fn point_segment(p: Point2, a: Point2, b: Point2) -> (f64, Point2) {
    let d = [b[0] - a[0], b[1] - a[1]];
    let len2 = d[0] * d[0] + d[1] * d[1];
    let t = if len2 > 0.0 {
        (((p[0] - a[0]) * d[0] + (p[1] - a[1]) * d[1]) / len2).clamp(0.0, 1.0)
    } else {
        0.0
    };
    let c = [a[0] + t * d[0], a[1] + t * d[1]];
    (dist(p, c), c)
}
