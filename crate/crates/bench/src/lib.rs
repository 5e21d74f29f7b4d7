//! Fixtures shared by the benchmarks in `benches/`.

use cmanifold::{AmbientSpec, Generator, QPoint, ScenarioSpec, SheetCurrent};

/// Two-dimensional scenario with one normal direction.
pub fn current(generator: Generator, q: usize, cells: usize) -> SheetCurrent {
    ScenarioSpec { generator, m: 2, n_bar: 1, q, cells, ambient: AmbientSpec::Flat }
        .build()
        .expect("bench scenario builds")
}

/// Deterministic pair of `q`-point multisets in `R^k`.
pub fn qpoints(q: usize, k: usize) -> (QPoint, QPoint) {
    let a: Vec<f64> = (0..q * k).map(|i| ((i * 37 + 11) % 23) as f64 / 7.0).collect();
    let b: Vec<f64> = (0..q * k).map(|i| ((i * 53 + 5) % 29) as f64 / 9.0).collect();
    (QPoint::new(q, k, a).unwrap(), QPoint::new(q, k, b).unwrap())
}
