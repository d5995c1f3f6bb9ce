use eqatlas::geometry::{build_region_graph, dijkstra, Ray};
use eqatlas::model::{
    finite_difference_jacobians, jacobian_mismatch, make_ces_economy, make_complex_square, make_cusp,
    EquilibriumSystem, ModelConfig, ModelKind,
};
use eqatlas::radius::Permutation;
use eqatlas::singular::SingularSet;
use eqatlas::solver::{enumerate_fiber, round_trip, FiberOptions, LiftOptions};
use eqatlas::{Grid, Window};
use nalgebra::DVector;
use proptest::prelude::*;

fn v(x: &[f64]) -> DVector<f64> {
    DVector::from_row_slice(x)
}

fn ces() -> impl EquilibriumSystem {
    let cfg = ModelConfig::new(ModelKind::CesEconomy, Window::square(0.8, 1.2), [32, 32]);
    make_ces_economy(&cfg).unwrap()
}

fn jacobians_agree(sys: &dyn EquilibriumSystem, p: &[f64], q: &[f64]) -> bool {
    let (p, q) = (v(p), v(q));
    let (fp, fq) = finite_difference_jacobians(sys, &p, &q);
    jacobian_mismatch(&sys.jac_p(&p, &q), &fp) < 1e-6 && jacobian_mismatch(&sys.jac_q(&p, &q), &fq) < 1e-6
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 100, failure_persistence: None, ..ProptestConfig::default() })]

    #[test]
    fn complex_square_jacobian(p1 in -3.0..3.0f64, p2 in -3.0..3.0f64, q1 in -2.0..2.0f64, q2 in -2.0..2.0f64) {
        prop_assert!(jacobians_agree(&make_complex_square(), &[p1, p2], &[q1, q2]));
    }

    #[test]
    fn cusp_jacobian(p in -6.0..6.0f64, q1 in -4.0..1.0f64, q2 in -3.0..3.0f64) {
        prop_assert!(jacobians_agree(&make_cusp(), &[p], &[q1, q2]));
    }

    #[test]
    fn ces_jacobian(p in 0.01..0.99f64, q1 in 0.8..1.2f64, q2 in 0.8..1.2f64) {
        prop_assert!(jacobians_agree(&ces(), &[p], &[q1, q2]));
    }

    #[test]
    fn complex_square_det_is_four_norm_squared(p1 in -3.0..3.0f64, p2 in -3.0..3.0f64) {
        let d = make_complex_square().jac_p(&v(&[p1, p2]), &v(&[0.0, 0.0])).determinant();
        let expect = 4.0 * (p1 * p1 + p2 * p2);
        prop_assert!((d - expect).abs() <= 1e-12 * (1.0 + expect));
        if p1 != 0.0 || p2 != 0.0 {
            prop_assert!(d > 0.0);
        }
    }

    #[test]
    fn cusp_is_odd(p in -5.0..5.0f64, q1 in -4.0..1.0f64, q2 in -3.0..3.0f64) {
        let s = make_cusp();
        let a = s.eval(&v(&[p]), &v(&[q1, q2]))[0];
        let b = s.eval(&v(&[-p]), &v(&[q1, -q2]))[0];
        prop_assert!((a + b).abs() <= 1e-12 * (1.0 + a.abs()));
    }

    #[test]
    fn cusp_fiber_count_matches_discriminant(q1 in -4.0..1.0f64, q2 in -3.0..3.0f64) {
        let disc = 4.0 * q1.powi(3) + 27.0 * q2 * q2;
        prop_assume!(disc.abs() > 1e-3);
        let n = enumerate_fiber(&make_cusp(), &[q1, q2], &FiberOptions::default()).len();
        prop_assert_eq!(n, if disc < 0.0 { 3 } else { 1 });
    }

    #[test]
    fn complex_square_round_trip(r0 in 0.4..1.8f64, t0 in 0.0..std::f64::consts::TAU, r1 in 0.4..1.8f64, dt in -1.2..1.2f64) {
        let s = make_complex_square();
        let path = vec![vec![r0 * t0.cos(), r0 * t0.sin()], vec![r1 * (t0 + dt).cos(), r1 * (t0 + dt).sin()]];
        let fiber = enumerate_fiber(&s, &path[0], &FiberOptions::default());
        prop_assert_eq!(fiber.len(), 2);
        let (_, _, dev) = round_trip(&s, &path, &fiber.points[1].p, &LiftOptions::default()).unwrap();
        prop_assert!(dev < 1e-8);
    }

    #[test]
    fn permutation_inverse_composes_to_identity(seed in proptest::collection::vec(0usize..1000, 1..8)) {
        let mut idx: Vec<usize> = (0..seed.len()).collect();
        idx.sort_by_key(|&i| (seed[i], i));
        let p = Permutation(idx);
        prop_assert!(p.is_valid());
        prop_assert!(p.then(&p.inverse()).is_identity());
        prop_assert!(p.inverse().then(&p).is_identity());
    }

    #[test]
    fn snap_is_within_half_cell(x in -2.0..2.0f64, y in -2.0..2.0f64) {
        let g = Grid::new(Window::square(-2.0, 2.0), [37, 23]);
        let c = g.node_coord(g.snap([x, y]));
        let h = g.spacing();
        prop_assert!((c[0] - x).abs() <= 0.5 * h[0] + 1e-12);
        prop_assert!((c[1] - y).abs() <= 0.5 * h[1] + 1e-12);
    }

    /// Crossing parity with a ray equals winding parity from the angle sum.
    #[test]
    fn ray_parity_matches_winding(pts in proptest::collection::vec((-1.0..1.0f64, -1.0..1.0f64), 3..12), right in any::<bool>()) {
        let poly: Vec<[f64; 2]> = pts.iter().map(|&(a, b)| [a, b]).chain(std::iter::once([pts[0].0, pts[0].1])).collect();
        let h = [0.0123, -0.0071];
        let near = poly.windows(2).any(|s| eqatlas::grid::point_segment(h, s[0], s[1]).0 < 1e-6);
        prop_assume!(!near);
        let ray = Ray { origin: h, dir: if right { 1.0 } else { -1.0 } };
        let crossings = poly.windows(2).filter(|s| ray.crosses(s[0], s[1])).count();
        let mut angle = 0.0;
        for s in poly.windows(2) {
            let a = (s[0][1] - h[1]).atan2(s[0][0] - h[0]);
            let b = (s[1][1] - h[1]).atan2(s[1][0] - h[0]);
            let mut d = b - a;
            while d > std::f64::consts::PI { d -= std::f64::consts::TAU; }
            while d < -std::f64::consts::PI { d += std::f64::consts::TAU; }
            angle += d;
        }
        let winding = (angle / std::f64::consts::TAU).round() as i64;
        prop_assert_eq!(crossings % 2, winding.rem_euclid(2) as usize);
    }
}

/// Graph distance is at least the Euclidean distance and at most the
/// 8-neighbour stretch factor above it on a hole-free window.
#[test]
fn graph_metric_bounds() {
    let w = Window::square(-1.0, 1.0);
    let g = build_region_graph(w, [40, 40], &SingularSet::empty(w), 0.1).unwrap();
    for src in [0, 17 * 41 + 5, 40 * 41 + 40] {
        let (d, _) = dijkstra(g.grid.len(), &[(src, 0.0)], |u, out| g.edges_into(u, out));
        let a = g.grid.node_coord(src);
        for (k, dk) in d.iter().enumerate() {
            let e = eqatlas::grid::dist(a, g.grid.node_coord(k));
            assert!(*dk >= e - 1e-12);
            assert!(*dk <= 1.09 * e + 1e-12, "{dk} vs {e}");
        }
    }
}
