use cmanifold::current::{omega, RegionSpec};
use cmanifold::geom::{plane_distance, Plane};
use cmanifold::qvalued::g_dist;
use cmanifold::scenario::{AmbientSpec, Generator, ScenarioSpec};
use nalgebra::{DMatrix, DVector};

fn spec(generator: Generator, m: usize, q: usize, cells: usize) -> ScenarioSpec {
    ScenarioSpec { generator, m, n_bar: 1, q, cells, ambient: AmbientSpec::Flat }
}

fn base_cyl(d: usize, m: usize, r: f64) -> RegionSpec {
    RegionSpec::Cylinder { center: DVector::zeros(d), radius: r, axis: Plane::standard(d, m) }
}

#[test]
fn flat_mass_is_ball_volume() {
    let t = spec(Generator::FlatQ { c: 0.0 }, 2, 2, 128).build().unwrap();
    let r = 1.3;
    let mass = t.mass(&RegionSpec::ball(DVector::zeros(3), r)).unwrap();
    // boundary cells use 4^m subsampling, so agreement is to quadrature accuracy
    assert!((mass / (2.0 * omega(2) * r * r) - 1.0).abs() < 2e-3, "{mass}");
}

#[test]
fn linear_sheet_mass_and_excess_closed_form() {
    let eps = 0.1;
    let t = spec(Generator::LinearTilt { eps }, 1, 1, 256).build().unwrap();
    let r = 2.0;
    let cyl = base_cyl(2, 1, r);
    let mass = t.mass(&cyl).unwrap();
    assert!((mass - 2.0 * r * (1.0 + eps * eps).sqrt()).abs() < 1e-12);
    let e = t.excess(&cyl, &Plane::standard(2, 1)).unwrap();
    let oracle = (1.0 / (4.0 * r)) * 2.0 * r * (1.0 + eps * eps).sqrt() * (2.0 - 2.0 / (1.0 + eps * eps).sqrt());
    assert!((oracle - 0.0049876).abs() < 1e-7);
    assert!(((e - oracle) / oracle).abs() < 1e-10, "{e} vs {oracle}");
}

#[test]
fn heights_of_flat_and_parallel_sheets() {
    let d = 0.1;
    let t = spec(Generator::ParallelSheets { d, amplitude: 0.0, frequency: 1.0 }, 2, 2, 64).build().unwrap();
    let ball = RegionSpec::ball(DVector::zeros(3), 1.0);
    assert!((t.height(&ball, &Plane::standard(3, 2)).unwrap() - d).abs() < 1e-14);
    let t1 = spec(Generator::FlatQ { c: 0.3 }, 2, 1, 64).build().unwrap();
    assert_eq!(t1.height(&ball, &Plane::standard(3, 2)).unwrap(), 0.0);
}

#[test]
fn optimal_plane_of_linear_sheet_is_its_tangent() {
    let eps = 0.2;
    let t = spec(Generator::LinearTilt { eps }, 2, 1, 64).build().unwrap();
    let opt = t.optimal_plane(&RegionSpec::ball(DVector::zeros(3), 1.5), 1e-9).unwrap();
    let tangent = Plane::from_spanning(&DMatrix::from_column_slice(3, 2, &[1.0, 0.0, eps, 0.0, 1.0, 0.0])).unwrap();
    assert!(opt.excess <= 1e-10, "{}", opt.excess);
    assert!(plane_distance(&opt.plane, &tangent).unwrap() < 1e-7);
}

#[test]
fn symmetric_pair_optimum_is_base_plane() {
    let eps = 0.15;
    let t = spec(Generator::TiltedPair { eps }, 1, 2, 256).build().unwrap();
    let ball = RegionSpec::ball(DVector::zeros(2), 1.0);
    let opt = t.optimal_plane(&ball, 1e-9).unwrap();
    assert!(plane_distance(&opt.plane, &Plane::standard(2, 1)).unwrap() < 1e-6);
    // brute-force scan over line angles
    let mut best = (f64::INFINITY, 0.0);
    for k in -200..=200 {
        let th = k as f64 * 1e-3;
        let p = Plane::from_spanning(&DMatrix::from_column_slice(2, 1, &[th.cos(), th.sin()])).unwrap();
        let e = t.excess(&ball, &p).unwrap();
        if e < best.0 {
            best = (e, th);
        }
    }
    assert_eq!(best.1, 0.0);
    assert!(opt.excess <= best.0 + 1e-15);
}

#[test]
fn slice_of_flat_sheets_under_tilt() {
    let c = 0.25;
    let t = spec(Generator::FlatQ { c }, 2, 2, 64).build().unwrap();
    let th: f64 = 0.05;
    let pi = Plane::from_spanning(&DMatrix::from_column_slice(3, 2, &[th.cos(), 0.0, th.sin(), 0.0, 1.0, 0.0])).unwrap();
    let x = DVector::from_vec(vec![0.3, -0.2, 0.0]);
    let s = t.slice_fiber(&x, &pi).unwrap();
    // the line x + s·ν (ν = (−sinθ, 0, cosθ)) meets z = c at s = c / cosθ
    for k in 0..2 {
        assert!((s.coords.point(k)[0].abs() - c / th.cos()).abs() < 1e-12);
        assert!((s.points[k][2] - c).abs() < 1e-12);
    }
}

#[test]
fn branch_fiber_has_two_distinct_points() {
    let t = ScenarioSpec {
        generator: Generator::Branch32 { c: 1.0 },
        m: 2,
        n_bar: 2,
        q: 2,
        cells: 128,
        ambient: AmbientSpec::Flat,
    }
    .build()
    .unwrap();
    let x = DVector::from_vec(vec![1.0, 0.5, 0.0, 0.0]);
    let s = t.slice_fiber(&x, &Plane::standard(4, 2)).unwrap();
    let oracle = Generator::Branch32 { c: 1.0 }.heights(&[1.0, 0.5], 2, 2);
    let op = cmanifold::QPoint::new(2, 2, oracle).unwrap();
    assert!(g_dist(&s.coords, &op).unwrap() < 1e-4);
    let gap: f64 = (0..2).map(|i| (s.coords.point(0)[i] - s.coords.point(1)[i]).powi(2)).sum::<f64>().sqrt();
    assert!(gap > 1.0);
}

#[test]
fn rescale_flat_sheets_and_excess_scaling() {
    let d = 0.1;
    let t = spec(Generator::ParallelSheets { d, amplitude: 0.0, frequency: 1.0 }, 2, 2, 64).build().unwrap();
    let s = t.rescale(0.5).unwrap();
    let f = s.fiber(s.core_node(&[10, 20]));
    assert!((f[0].abs() - d).abs() < 1e-12 && (f[1].abs() - d).abs() < 1e-12);
    let same = t.rescale(1.0).unwrap();
    let diff = t.fibers.iter().zip(&same.fibers).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    assert!(diff <= 1e-10, "{diff}");

    let lin = spec(Generator::LinearTilt { eps: 0.1 }, 1, 1, 256).build().unwrap();
    let r = 0.5;
    let sc = lin.rescale(r).unwrap();
    let a = sc.excess(&base_cyl(2, 1, 2.0), &Plane::standard(2, 1)).unwrap();
    let b = lin.excess(&base_cyl(2, 1, 2.0 * r), &Plane::standard(2, 1)).unwrap();
    assert!((a - b).abs() < 1e-6 * b);
}

#[test]
fn excess_optimum_beats_random_planes() {
    use rand::{Rng, SeedableRng};
    let t = spec(Generator::Sinusoid { amplitude: 0.05, frequency: 1.3 }, 2, 1, 64).build().unwrap();
    let ball = RegionSpec::ball(DVector::zeros(3), 1.5);
    let opt = t.optimal_plane(&ball, 1e-9).unwrap();
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0);
    for _ in 0..100 {
        let cols = DMatrix::from_fn(3, 2, |i, j| if i == j { 1.0 } else { 0.0 } + rng.random_range(-0.2..0.2));
        let p = Plane::from_spanning(&cols).unwrap();
        assert!(opt.excess <= t.excess(&ball, &p).unwrap() + 1e-14);
    }
}
