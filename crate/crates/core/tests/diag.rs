use cmanifold::current::RegionSpec;
use cmanifold::diag::{
    decay_lambda, harmonic_decay_check, harmonic_decay_sides, interpolation_constant, quadratic_interpolation_constant,
    random_harmonic, s2_violations, splitting_check, stripes_with_sigma, tilting_check, CorpusFn, Poly,
};
use cmanifold::geom::Plane;
use cmanifold::interp::build_center_manifold;
use cmanifold::normal::normal_approximation;
use cmanifold::scenario::{AmbientSpec, Generator, ScenarioSpec};
use cmanifold::whitney::{refine, DyadicCube, Params, StopReason, WhitneyDecomposition};
use nalgebra::DVector;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::f64::consts::PI;

fn monomial(m: usize, e: &[u32]) -> Poly {
    let mut p = Poly::zero(m);
    p.add_term(e.to_vec(), 1.0);
    p
}

#[test]
fn ball_integrals_of_monomials() {
    // closed forms in polar coordinates
    assert!((monomial(2, &[0, 0]).ball_integral(1.5) - PI * 2.25).abs() < 1e-12);
    assert!((monomial(2, &[2, 0]).ball_integral(2.0) - PI * 16.0 / 4.0).abs() < 1e-12);
    assert!((monomial(3, &[2, 2, 0]).ball_integral(1.0) - 4.0 * PI / 105.0).abs() < 1e-12);
    assert_eq!(monomial(3, &[1, 2, 0]).ball_integral(1.0), 0.0);
}

#[test]
fn random_harmonic_polynomials_are_harmonic() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for m in [2, 3] {
        for _ in 0..20 {
            let u = random_harmonic(&mut rng, m, 5);
            assert!(u.laplacian().max_abs_coeff() <= 1e-12);
        }
    }
}

#[test]
fn affine_function_has_no_decay_defect() {
    let mut u = Poly::linear(&[0.3, -1.2]);
    u.add_term(vec![0, 0], 2.0);
    let (l, r) = harmonic_decay_sides(&u, decay_lambda(2, 1e-4));
    assert!(l.abs() < 1e-14 && r > 0.0);
}

#[test]
fn quadratic_mode_is_sharp() {
    let lambda = decay_lambda(2, 2.5e-5);
    let u = monomial(2, &[2, 0]).add(&monomial(2, &[0, 2]).scale(-1.0));
    let (l, r) = harmonic_decay_sides(&u, lambda);
    // Du is homogeneous of degree one: ∫_{B_ρ}|Du|² scales like ρ^{m+2}
    let dir2: f64 = 4.0 * PI * 16.0 / 4.0 * 2.0;
    assert!((r - 2f64.powi(-4) * (1.0 + lambda).powi(4) * dir2).abs() < 1e-10);
    assert!((l - r).abs() <= 1e-12 * r);
}

#[test]
fn decay_inequality_holds_on_random_samples() {
    let rep = harmonic_decay_check(&[2, 3], 5, 100, 2.5e-5, 0);
    assert!(rep.passes(), "{}", rep.to_text());
}

#[test]
fn interpolation_constants() {
    let cubic = CorpusFn::PolyGauss { p: monomial(2, &[3, 0]).add(&monomial(2, &[1, 1])), alpha: 0.0 };
    let c = interpolation_constant(&[cubic], 2, 1.0, 2.0, 1e-3);
    assert!(c.is_finite() && c > 0.0);
    let zero = CorpusFn::PolyGauss { p: Poly::zero(2), alpha: 0.0 };
    assert_eq!(interpolation_constant(&[zero], 2, 1.0, 2.0, 1e-3), 0.0);
    // ψ = |x|², ρ = 2, r = 1: A = max(8π/8, 2·4) = 8, lhs = 1/2 + 2
    let psi = monomial(2, &[2, 0]).add(&monomial(2, &[0, 2]));
    let c = quadratic_interpolation_constant(&psi, 2.0, 1.0);
    assert!((c - 2.5 / 8.0).abs() < 1e-12, "{c}");
}

fn sheets(d: f64, amplitude: f64, q: usize, cells: usize) -> ScenarioSpec {
    ScenarioSpec {
        generator: Generator::ParallelSheets { d, amplitude, frequency: 1.0 },
        m: 2,
        n_bar: 1,
        q,
        cells,
        ambient: AmbientSpec::Flat,
    }
}

fn unit_cylinder(height: f64) -> RegionSpec {
    RegionSpec::Cylinder { center: DVector::from_column_slice(&[0.0, 0.0, height]), radius: 1.0, axis: Plane::standard(3, 2) }
}

#[test]
fn two_flat_sheets_give_two_stripes() {
    let t = sheets(0.4, 0.0, 2, 64).build().unwrap();
    let sd = stripes_with_sigma(&t, &unit_cylinder(0.0), &Plane::standard(3, 2), 0.05, 0.025, 1e-3).unwrap();
    assert_eq!(sd.k(), 2);
    assert!(sd.stripes.iter().all(|s| s.multiplicity == 1));
    assert!((sd.stripes[0].center[0] + 0.2).abs() < 1e-12);
    assert!((sd.stripes[1].center[0] - 0.2).abs() < 1e-12);
    assert!(sd.disjoint && sd.multiplicity_consistent && !sd.hypothesis_failure);
}

#[test]
fn coincident_and_nearby_sheets_give_one_stripe() {
    let t = ScenarioSpec { generator: Generator::FlatQ { c: 0.1 }, ..sheets(0.0, 0.0, 3, 64) }.build().unwrap();
    let sd = stripes_with_sigma(&t, &unit_cylinder(0.0), &Plane::standard(3, 2), 0.0, 0.0, 0.0).unwrap();
    assert_eq!(sd.k(), 1);
    assert_eq!(sd.stripes[0].multiplicity, 3);
    let t = sheets(0.01, 0.002, 2, 64).build().unwrap();
    let sd = stripes_with_sigma(&t, &unit_cylinder(0.0), &Plane::standard(3, 2), 0.1, 0.05, 1e-3).unwrap();
    assert_eq!(sd.k(), 1);
    assert_eq!(sd.stripes[0].multiplicity, 2);
}

#[test]
fn stripe_count_is_monotone_in_sigma() {
    let t = sheets(0.3, 0.01, 2, 64).build().unwrap();
    let mut last = usize::MAX;
    for sigma in [0.01, 0.05, 0.1, 0.2, 0.4] {
        let sd = stripes_with_sigma(&t, &unit_cylinder(0.0), &Plane::standard(3, 2), sigma, sigma / 2.0, 1e-3).unwrap();
        assert!(sd.k() <= last && sd.k() <= 2);
        last = sd.k();
    }
    assert_eq!(last, 1);
}

#[test]
fn stripes_translate_with_the_sheets() {
    let t0 = sheets(0.4, 0.01, 2, 64).build().unwrap();
    let base = stripes_with_sigma(&t0, &unit_cylinder(0.0), &Plane::standard(3, 2), 0.05, 0.025, 1e-3).unwrap();
    let shift = 0.37;
    let mut t1 = t0.clone();
    for v in t1.fibers.iter_mut() {
        *v += shift;
    }
    let moved = stripes_with_sigma(&t1, &unit_cylinder(shift), &Plane::standard(3, 2), 0.05, 0.025, 1e-3).unwrap();
    assert_eq!(base.k(), moved.k());
    for (a, b) in base.stripes.iter().zip(&moved.stripes) {
        assert!((b.center[0] - a.center[0] - shift).abs() <= 1e-12);
    }
}

#[test]
fn quarter_size_neighbor_of_a_height_cube_is_flagged() {
    let p = Params::for_dim(2);
    let l = DyadicCube::new(2, vec![3, 3]);
    let right = DyadicCube::new(2, vec![4, 3]);
    let quarter = right.children()[0].children()[0].clone();
    assert!(quarter.touches(&l));
    let dec = WhitneyDecomposition::from_parts(2, p.clone(), 4, vec![(l.clone(), StopReason::Height), (quarter, StopReason::Neighbor)]);
    assert_eq!(s2_violations(&dec), 1);
    let far = DyadicCube::new(4, vec![0, 0]);
    let dec = WhitneyDecomposition::from_parts(2, p, 4, vec![(l, StopReason::Height), (far, StopReason::Neighbor)]);
    assert_eq!(s2_violations(&dec), 0);
}

#[test]
fn flat_scenario_has_no_tilting_and_no_splitting_rows() {
    let t = ScenarioSpec { generator: Generator::FlatQ { c: 0.2 }, ..sheets(0.0, 0.0, 2, 64) }.build().unwrap();
    let dec = refine(&t, &Params::for_dim(2)).unwrap();
    let rep = tilting_check(&t, &dec).unwrap();
    assert!(rep.passes(), "{}", rep.to_text());
    for key in ["tilting.fit.ancestor_planes", "tilting.fit.adjacent_planes", "tilting.fit.optimal_vs_reference"] {
        assert!(rep.row(key).unwrap().value <= 1e-12, "{key}");
    }
    let cm = build_center_manifold(&t, &dec).unwrap();
    let na = normal_approximation(&t, &cm, &dec).unwrap();
    let rep = splitting_check(&t, &dec, &cm, &na).unwrap();
    assert_eq!(rep.row("splitting.excess_cubes").unwrap().value, 0.0);
    assert!(rep.passes());
}
