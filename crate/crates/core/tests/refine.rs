use cmanifold::scenario::{AmbientSpec, Generator, ScenarioSpec};
use cmanifold::whitney::{refine, DyadicCube, Params, StopReason, WhitneyDecomposition};

fn spec(generator: Generator, m: usize, q: usize, cells: usize) -> ScenarioSpec {
    ScenarioSpec { generator, m, n_bar: 1, q, cells, ambient: AmbientSpec::Flat }
}

#[test]
fn flat_current_is_all_contact_set() {
    let t = spec(Generator::FlatQ { c: 0.2 }, 2, 2, 128).build().unwrap();
    let dec = refine(&t, &Params::for_dim(2)).unwrap();
    assert!(dec.w_is_empty());
    assert!(dec.truncated);
    let v = dec.validate();
    assert!(v.passes(), "{:?}", v.messages);
    let area: f64 = dec.gamma_boxes().iter().map(|b| (b.hi[0] - b.lo[0]) * (b.hi[1] - b.lo[1])).sum();
    assert_eq!(area, 64.0);
}

#[test]
fn linear_sheet_never_stops() {
    let t = spec(Generator::LinearTilt { eps: 0.1 }, 2, 1, 128).build().unwrap();
    let dec = refine(&t, &Params::for_dim(2)).unwrap();
    assert!(dec.w_is_empty());
}

#[test]
fn parallel_sheets_stop_by_height_at_predicted_level() {
    let d = 0.03;
    let t = spec(Generator::ParallelSheets { d, amplitude: 0.0, frequency: 1.0 }, 2, 2, 256).build().unwrap();
    let mut p = Params::for_dim(2);
    p.c_h = 1000.0;
    let dec = refine(&t, &p).unwrap();
    // first level with C_h m0^{1/2m} ℓ^{1+β₂} < d
    let m0 = t.m0;
    let mut predicted = p.n0;
    while p.c_h * m0.powf(0.25) * 2f64.powi(-(predicted as i32)).powf(1.0 + p.beta2) >= d {
        predicted += 1;
    }
    assert_eq!(predicted, 4);
    let ht: Vec<_> = dec.by_reason(StopReason::Height).collect();
    assert!(!ht.is_empty());
    assert!(ht.iter().all(|r| r.cube.level == predicted));
    assert_eq!(dec.by_reason(StopReason::Excess).count(), 0);
    let v = dec.validate();
    assert!(v.passes(), "{:?}", v.messages);
}

#[test]
fn refinement_is_deterministic() {
    let t = spec(Generator::Sinusoid { amplitude: 0.2, frequency: 2.0 }, 2, 1, 128).build().unwrap();
    let mut p = Params::for_dim(2);
    p.c_e = 1e-3;
    let a = serde_json::to_string(&refine(&t, &p).unwrap()).unwrap();
    let b = serde_json::to_string(&refine(&t, &p).unwrap()).unwrap();
    assert_eq!(a, b);
}

fn full_level(m: usize, j: u32, skip: &[DyadicCube]) -> Vec<(DyadicCube, StopReason)> {
    DyadicCube::level_cubes(m, j)
        .into_iter()
        .filter(|c| !skip.iter().any(|s| c.inside(s)))
        .map(|c| (c, StopReason::None))
        .collect()
}

#[test]
fn overlapping_cubes_are_reported() {
    let p = Params::for_dim(2);
    let big = DyadicCube::new(2, vec![3, 3]);
    let small = DyadicCube::new(2, vec![3, 3]).children()[0].clone();
    let mut cubes = full_level(2, 2, &[big.clone()]);
    cubes.push((big, StopReason::Excess));
    cubes.push((small, StopReason::Neighbor));
    let v = WhitneyDecomposition::from_parts(2, p, 3, cubes).validate();
    assert!(v.overlap_violations > 0);
}

#[test]
fn contact_set_touching_a_cube_breaks_separation() {
    let p = Params::for_dim(1);
    let w = DyadicCube::new(2, vec![7]);
    // refining cubes one level below, placed right against the stopped cube
    let mut cubes = full_level(1, 3, &[w.clone()]);
    cubes.push((w, StopReason::Excess));
    let v = WhitneyDecomposition::from_parts(1, p, 3, cubes).validate();
    assert_eq!(v.cover_violations, 0);
    assert!(v.separation_violations > 0);
}

#[test]
fn domains_of_influence_chain() {
    let p = Params::for_dim(2);
    let l0 = DyadicCube::new(2, vec![4, 4]);
    let h1 = DyadicCube::new(3, vec![10, 8]);
    let h2 = DyadicCube::new(4, vec![22, 16]);
    let cubes = vec![(l0.clone(), StopReason::Excess), (h1.clone(), StopReason::Neighbor), (h2.clone(), StopReason::Neighbor)];
    let dec = WhitneyDecomposition::from_parts(2, p, 4, cubes);
    let doi = dec.domains_of_influence();
    assert!(doi.orphans.is_empty());
    assert_eq!(doi.domains.len(), 1);
    assert_eq!(doi.domains[0].members, vec![h1, h2]);
    assert!(doi.domains[0].containment_ratio <= 1.0);
}
