use cmanifold::current::AmbientManifold;
use cmanifold::grid::GridSpec;
use cmanifold::interp::{build_center_manifold, CenterManifold};
use cmanifold::normal::{normal_approximation, project};
use cmanifold::qvalued::{eta, sep_to_mean};
use cmanifold::scenario::{AmbientSpec, Generator, ScenarioSpec};
use cmanifold::whitney::{refine, Params};
use nalgebra::DVector;

fn parabola(eps: f64) -> CenterManifold {
    let h = 1.0 / 64.0;
    let counts = 8 * 64 + 1;
    let grid = GridSpec::new(vec![-4.0], h, vec![counts]);
    let phi: Vec<f64> = (0..counts).map(|i| {
        let y = -4.0 + i as f64 * h;
        eps * y * y
    }).collect();
    CenterManifold::from_graph(grid, 1, phi, AmbientManifold::flat(1), 0.0)
}

/// Dense scan of the exact curve followed by golden-section refinement.
fn oracle_foot(eps: f64, x: [f64; 2]) -> f64 {
    let f = |y: f64| (x[0] - y).powi(2) + (x[1] - eps * y * y).powi(2);
    let mut best = 0.0;
    let mut fb = f64::INFINITY;
    for i in 0..=8000 {
        let y = -4.0 + i as f64 * 1e-3;
        if f(y) < fb {
            fb = f(y);
            best = y;
        }
    }
    let (mut a, mut b) = (best - 1e-3, best + 1e-3);
    let g = (5f64.sqrt() - 1.0) / 2.0;
    for _ in 0..200 {
        let c = b - g * (b - a);
        let d = a + g * (b - a);
        if f(c) < f(d) { b = d } else { a = c }
    }
    0.5 * (a + b)
}

#[test]
fn projection_onto_parabola_matches_scan() {
    let eps = 0.1;
    let cm = parabola(eps);
    for x in [[0.3, 0.4], [-1.2, 0.05], [2.0, 0.1], [0.0, -0.5], [1.5, 0.6]] {
        let p = project(&cm, &DVector::from_column_slice(&x)).unwrap();
        let y = oracle_foot(eps, x);
        assert!((p.y[0] - y).abs() <= 1e-8, "{x:?}: {} vs {y}", p.y[0]);
        let tangent = DVector::from_column_slice(&[1.0, 2.0 * eps * y]);
        assert!(p.offset.dot(&tangent).abs() <= 1e-8);
    }
}

#[test]
fn projection_rejects_points_far_from_the_manifold() {
    let cm = parabola(0.1);
    assert!(project(&cm, &DVector::from_column_slice(&[0.0, 2.0])).is_err());
}

fn scenario(generator: Generator, q: usize) -> ScenarioSpec {
    ScenarioSpec { generator, m: 2, n_bar: 1, q, cells: 64, ambient: AmbientSpec::Flat }
}

#[test]
fn flat_sheets_have_zero_normal_part() {
    let t = scenario(Generator::FlatQ { c: 0.3 }, 2).build().unwrap();
    let dec = refine(&t, &Params::for_dim(2)).unwrap();
    let cm = build_center_manifold(&t, &dec).unwrap();
    let na = normal_approximation(&t, &cm, &dec).unwrap();
    assert_eq!(na.extended_nodes, 0);
    assert!(na.in_k.iter().all(|&b| b));
    assert!(na.offsets.iter().all(|v| v.abs() <= 1e-10));
    assert!(na.contact_max <= 1e-10);
    assert!(na.contact_nodes > 0);
}

#[test]
fn symmetric_pair_splits_evenly() {
    let d = 0.1;
    let t = scenario(Generator::ParallelSheets { d, amplitude: 0.0, frequency: 1.0 }, 2).build().unwrap();
    let mut params = Params::for_dim(2);
    params.c_e = 1e6;
    params.c_h = 1e6;
    let dec = refine(&t, &params).unwrap();
    let cm = build_center_manifold(&t, &dec).unwrap();
    let na = normal_approximation(&t, &cm, &dec).unwrap();
    assert!(na.in_k.iter().all(|&b| b));
    for k in (0..na.nodes.len()).step_by(97) {
        let p = na.offset(k);
        assert!(eta(&p).iter().all(|v| v.abs() <= 1e-9));
        assert!((sep_to_mean(&p) - 2f64.sqrt() * d / 2.0).abs() <= 1e-9, "{}", sep_to_mean(&p));
        let mut heights: Vec<f64> = (0..2).map(|i| p.point(i)[2]).collect();
        heights.sort_by(f64::total_cmp);
        assert!((heights[0] + d / 2.0).abs() <= 1e-9 && (heights[1] - d / 2.0).abs() <= 1e-9);
    }
    assert!(na.max_orthogonality <= 1e-9);
    assert!(na.max_reconstruction <= 1e-9);
}
