use eqatlas::atlas::fiber_counts;
use eqatlas::geometry::{build_region_graph, distance_to_sigma1, shortest_noncontractible_loop, HoleKind, Removal};
use eqatlas::radius::{analyze, CertifyOptions};
use eqatlas::singular::{singular_set, DetectOptions, SingularSet};
use eqatlas::solver::FiberOptions;
use eqatlas::{build_system, Case, Grid, ModelConfig, ModelKind, Point2, Verdict, Window};

fn complex_square(res: usize) -> ModelConfig {
    ModelConfig::new(ModelKind::ComplexSquare, Window::square(-2.0, 2.0), [res, res])
}

fn cusp(res: usize) -> ModelConfig {
    ModelConfig::new(ModelKind::Cusp, Window::new((-4.0, 1.0), (-3.0, 3.0)), [res, res])
}

fn ces(res: usize) -> ModelConfig {
    let mut cfg = ModelConfig::new(ModelKind::CesEconomy, Window::square(0.8, 1.2), [res, res]);
    cfg.params = serde_json::json!({ "sigma": 0.2, "weights": [0.98, 0.02], "fixed_endowments": [0.02, 0.02] });
    cfg
}

fn singular(cfg: &ModelConfig) -> SingularSet {
    let sys = build_system(cfg).unwrap();
    singular_set(sys.as_ref(), cfg.window, cfg.resolution, &DetectOptions::default()).unwrap().1
}

fn clearance(cfg: &ModelConfig) -> f64 {
    1.5 * Grid::new(cfg.window, cfg.resolution).cell_diagonal()
}

fn vertices(s: &SingularSet) -> Vec<Point2> {
    s.sigma1.iter().flat_map(|p| p.vertices.iter().copied()).collect()
}

fn directed_hausdorff(a: &[Point2], b: &SingularSet) -> f64 {
    a.iter().map(|&q| b.sigma1.iter().map(|p| p.distance(q).0).fold(f64::INFINITY, f64::min)).fold(0.0, f64::max)
}

#[test]
fn complex_square_has_one_component_around_one_point_hole() {
    let cfg = complex_square(64);
    let s = singular(&cfg);
    assert!(s.sigma1.is_empty());
    assert_eq!(s.sigma2.len(), 1);
    let g = build_region_graph(cfg.window, cfg.resolution, &s, clearance(&cfg)).unwrap();
    assert_eq!(g.n_components(), 1);
    assert_eq!(g.holes.len(), 1);
    assert_eq!(g.holes[0].kind, HoleKind::Point);
    assert!(g.holes[0].anchor[0].abs() < 1e-6 && g.holes[0].anchor[1].abs() < 1e-6);
}

#[test]
fn cusp_splits_into_two_simply_connected_components() {
    let cfg = cusp(80);
    let s = singular(&cfg);
    assert!(!s.sigma1.is_empty());
    assert!(s.sigma2.is_empty());
    let g = build_region_graph(cfg.window, cfg.resolution, &s, clearance(&cfg)).unwrap();
    assert_eq!(g.n_components(), 2);
    assert!(g.holes.is_empty());
    let inside = g.snap([-2.0, 0.0]).unwrap();
    let outside = g.snap([0.5, 0.0]).unwrap();
    assert_ne!(g.component_of(inside), g.component_of(outside));
    assert!(shortest_noncontractible_loop(&g, [-2.0, 0.0]).unwrap().is_zero());
}

#[test]
fn empty_singular_set_gives_whole_window() {
    let w = Window::square(0.0, 1.0);
    let g = build_region_graph(w, [16, 16], &SingularSet::empty(w), 0.1).unwrap();
    assert_eq!(g.n_components(), 1);
    assert_eq!(g.kept_count(), 17 * 17);
    assert!(g.holes.is_empty());
    let d = distance_to_sigma1(&g, [0.3, 0.5]).unwrap();
    assert!(d.truncated);
    assert!((d.value - 0.3125).abs() < 1e-12);
}

#[test]
fn fold_curves_are_stable_under_refinement() {
    let coarse = cusp(60);
    let (a, b) = (singular(&coarse), singular(&cusp(120)));
    let h = Grid::new(coarse.window, coarse.resolution).cell_diagonal();
    assert!(directed_hausdorff(&vertices(&a), &b) < 2.0 * h);
    assert!(directed_hausdorff(&vertices(&b), &a) < 2.0 * h);
}

#[test]
fn distance_at_clearance_boundary_is_bounded() {
    let cfg = cusp(100);
    let s = singular(&cfg);
    let c = clearance(&cfg);
    let g = build_region_graph(cfg.window, cfg.resolution, &s, c).unwrap();
    let diag = g.grid.cell_diagonal();
    let mut seen = 0;
    for k in 0..g.grid.len() {
        if !g.is_kept(k) || !g.grid.neighbors8(k).any(|v| g.removal[v] == Removal::Sigma1) {
            continue;
        }
        let d = distance_to_sigma1(&g, g.grid.node_coord(k)).unwrap();
        assert!(d.value > 0.0 && d.value <= c + diag, "{} at {:?}", d.value, d.snapped);
        seen += 1;
    }
    assert!(seen > 0);
}

#[test]
fn loop_bounds_bracket_the_true_length() {
    // The shortest loop at (1, 0) around the origin has length 2.
    for res in [64, 128] {
        let cfg = complex_square(res);
        let s = singular(&cfg);
        let g = build_region_graph(cfg.window, cfg.resolution, &s, clearance(&cfg)).unwrap();
        let lp = shortest_noncontractible_loop(&g, [1.0, 0.0]).unwrap();
        assert!(!lp.is_zero());
        assert!(lp.m_x_lower <= 2.0 && 2.0 <= lp.m_x + 1e-9, "{lp:?}");
        assert_eq!(lp.crossings % 2, 1);
    }
}

#[test]
fn ces_certificate_in_three_equilibrium_region() {
    let cfg = ces(48);
    let sys = build_system(&cfg).unwrap();
    let nodes = fiber_counts(sys.as_ref(), cfg.window, cfg.resolution, &FiberOptions::default());
    let three: Vec<Point2> = nodes.iter().filter(|n| n.count == 3 && !n.near_singular).map(|n| n.q).collect();
    assert!(!three.is_empty());
    let n = three.len() as f64;
    let mean = [three.iter().map(|q| q[0]).sum::<f64>() / n, three.iter().map(|q| q[1]).sum::<f64>() / n];
    let x = *three
        .iter()
        .min_by(|a, b| eqatlas::grid::dist(**a, mean).total_cmp(&eqatlas::grid::dist(**b, mean)))
        .unwrap();
    let a = analyze(sys.as_ref(), &cfg, x, &CertifyOptions::default()).unwrap();
    let c = &a.certificate;
    assert_eq!(c.sheet_count, 3);
    assert_eq!(c.case, Case::Zero);
    assert!(!c.d_x.truncated);
    assert!((c.ball_radius - c.d_x.value).abs() <= 1e-12 * c.d_x.value);
    assert_eq!(c.verdict, Verdict::Verified);
}

#[test]
fn certificate_serializes_with_lowercase_tags() {
    let cfg = cusp(60);
    let sys = build_system(&cfg).unwrap();
    let a = analyze(sys.as_ref(), &cfg, [0.5, 1.0], &CertifyOptions::default()).unwrap();
    let v = serde_json::to_value(&a.certificate).unwrap();
    assert_eq!(v["case"], "zero");
    assert_eq!(v["verdict"], "verified");
    assert_eq!(v["sheet_count"], 1);
    assert_eq!(v["empirical_failure_radius"], "none");
}
