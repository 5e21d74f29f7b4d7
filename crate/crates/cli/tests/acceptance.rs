//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any criterion fails.
//!
//! Run a subset by passing criterion numbers:
//! `cargo test --release -p cmanifold-cli --test acceptance -- 4 12`.

use cmanifold::current::{omega, RegionSpec};
use cmanifold::diag::{corpus, harmonic_decay_check, stripes_with_sigma, CorpusFn, Status};
use cmanifold::geom::{plane_distance, regraph, rotation_chain, rotation_from_generator, RegraphOptions};
use cmanifold::interp::regression_slope;
use cmanifold::whitney::{DyadicCube, Params, StopReason};
use cmanifold::{
    AmbientSpec, FrameTriple, Generator, GraphPatch, GridSpec, Mollifier, Plane, QField, SampledMap, ScenarioSpec,
};
use cmanifold_cli::{run, Command, Config, Outcome, Overrides};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

const SCENARIOS: [&str; 9] = [
    "flat_q",
    "single_sheet",
    "parallel_sheets",
    "height_stop",
    "linear_tilt",
    "tilted_pair",
    "branch32",
    "sinusoid",
    "paper_curve",
];

struct Verdict {
    ok: bool,
    detail: String,
}

fn verdict(ok: bool, detail: impl Into<String>) -> Result<Verdict, String> {
    Ok(Verdict { ok, detail: detail.into() })
}

fn config_path(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("configs").join(format!("{name}.ini"))
}

fn scratch_dir(tag: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("cmanifold-acceptance-{}", std::process::id())).join(tag);
    let _ = std::fs::remove_dir_all(&dir);
    dir
}

/// Full verify pipeline on every bundled config, computed once.
struct Runs {
    outcomes: BTreeMap<&'static str, Result<Outcome, String>>,
}

impl Runs {
    fn compute() -> Runs {
        let mut outcomes = BTreeMap::new();
        for name in SCENARIOS {
            let t0 = Instant::now();
            let res = Config::load(&config_path(name), &Overrides::default())
                .and_then(|cfg| run(Command::Verify, &cfg, &scratch_dir(name)))
                .map_err(|e| e.to_string());
            eprintln!("  [{name}: verify pipeline {:.1}s]", t0.elapsed().as_secs_f64());
            outcomes.insert(name, res);
        }
        Runs { outcomes }
    }

    fn get(&self, name: &str) -> Result<&Outcome, String> {
        match self.outcomes.get(name) {
            Some(Ok(o)) => Ok(o),
            Some(Err(e)) => Err(format!("{name}: {e}")),
            None => Err(format!("{name}: not run")),
        }
    }

    fn all(&self) -> Result<Vec<(&'static str, &Outcome)>, String> {
        SCENARIOS.iter().map(|&n| self.get(n).map(|o| (n, o))).collect()
    }
}

fn row_status(o: &Outcome, key: &str) -> Option<(Status, f64)> {
    o.reports.iter().flat_map(|r| &r.rows).find(|r| r.key == key).map(|r| (r.status, r.value))
}

/// `sup |φ − reference average|` over the center-manifold lattice.
fn sup_to_reference(o: &Outcome) -> f64 {
    let cm = o.center_manifold.as_ref().expect("built");
    let gen = &o.manifest.scenario.generator;
    let n = cm.n;
    let mut x = vec![0.0; cm.m];
    let mut err: f64 = 0.0;
    for i in 0..cm.grid.len() {
        cm.grid.coord_into(i, &mut x);
        let r = gen.reference_average(&x, n);
        for c in 0..n {
            err = err.max((cm.phi[i * n + c] - r[c]).abs());
        }
    }
    err
}

fn c1_whitney(runs: &Runs) -> Result<Verdict, String> {
    let mut bad = Vec::new();
    for (name, o) in runs.all()? {
        let v = o.validation.as_ref().expect("validated");
        let total = v.cover_violations
            + v.overlap_violations
            + v.ratio_violations
            + v.separation_violations
            + v.father_violations
            + v.exclusivity_violations
            + v.ancestor_violations;
        if total > 0 || !v.passes() {
            bad.push(format!("{name}: {total} violations {:?}", v.messages));
        }
    }
    verdict(bad.is_empty(), if bad.is_empty() { "zero violations on 9 scenarios".into() } else { bad.join("; ") })
}

fn c2_trivial(runs: &Runs) -> Result<Verdict, String> {
    let mut parts = Vec::new();
    let mut ok = true;
    for (name, tol) in [("flat_q", 1e-10), ("single_sheet", 1e-6)] {
        let o = runs.get(name)?;
        let dec = o.decomposition.as_ref().expect("refined");
        let area: f64 = dec.gamma_boxes().iter().map(|b| b.lo.iter().zip(&b.hi).map(|(l, h)| h - l).product::<f64>()).sum();
        let full = 8f64.powi(dec.m as i32);
        let err = sup_to_reference(o);
        let this = dec.w_is_empty() && (area - full).abs() <= 1e-12 && err <= tol;
        ok &= this;
        parts.push(format!("{name}: W empty {}, |Γ| {area}/{full}, sup err {err:.3e} (≤ {tol:.0e})", dec.w_is_empty()));
    }
    verdict(ok, parts.join("; "))
}

fn c3_symmetric(runs: &Runs) -> Result<Verdict, String> {
    let o = runs.get("parallel_sheets")?;
    let Generator::ParallelSheets { d, amplitude, .. } = o.manifest.scenario.generator else {
        return Err("parallel_sheets config uses another generator".into());
    };
    let sup_g = 0.5 * d.abs() + amplitude.abs();
    let phi = o.center_manifold.as_ref().expect("built").norms.c0;
    let eta = o.normal.as_ref().expect("normal").max_eta;
    let bound = 0.05 * sup_g;
    verdict(phi <= bound && eta <= bound, format!("sup|φ| {phi:.3e}, sup|η∘N| {eta:.3e}, bound {bound:.3e}"))
}

fn c4_branch_decay(runs: &Runs) -> Result<Verdict, String> {
    let o = runs.get("paper_curve")?;
    let Generator::PaperCurve { zoom, saturate, .. } = o.manifest.scenario.generator else {
        return Err("paper_curve config uses another generator".into());
    };
    if o.current.cells < 512 {
        return Err(format!("paper_curve must run at grid 512, got {}", o.current.cells));
    }
    let cm = o.center_manifold.as_ref().expect("built");
    let gen = &o.manifest.scenario.generator;
    // Beyond |w| = zoom·saturate the sampled profile is frozen along rays, so
    // radii past that point are measured on the largest faithful disc.
    let faithful = zoom * saturate;
    let radii = [0.4, 0.2, 0.1, 0.05];
    let mut errs = Vec::new();
    let mut x = vec![0.0; 2];
    for &r in &radii {
        let rr = f64::min(r, faithful);
        let mut err: f64 = 0.0;
        for i in 0..cm.grid.len() {
            cm.grid.coord_into(i, &mut x);
            let w = zoom * x[0].hypot(x[1]);
            if w > rr {
                continue;
            }
            let reference = gen.reference_average(&x, 2);
            let dz = (cm.phi[2 * i] - reference[0]).hypot(cm.phi[2 * i + 1] - reference[1]);
            err = err.max(zoom * dz);
        }
        errs.push(err);
    }
    let pts: Vec<(f64, f64)> = radii.iter().zip(&errs).map(|(r, e)| (r.ln(), e.ln())).collect();
    let slope = regression_slope(&pts).ok_or("degenerate fit")?;
    let inner = regression_slope(&pts[1..]).ok_or("degenerate fit")?;
    let table: Vec<String> = radii.iter().zip(&errs).map(|(r, e)| format!("r={r}: {e:.3e}")).collect();
    verdict(
        slope >= 2.2,
        format!("slope {slope:.3} (≥ 2.2); r ≤ {faithful} only: {inner:.3}; {}", table.join(", ")),
    )
}

fn c5_stabilization(runs: &Runs) -> Result<Verdict, String> {
    let mut worst: f64 = 0.0;
    let mut cubes = 0;
    for (_, o) in runs.all()? {
        let st = &o.center_manifold.as_ref().expect("built").stabilization;
        worst = worst.max(st.max_defect);
        cubes += st.cubes_checked;
    }
    verdict(worst <= 1e-12, format!("max defect {worst:.3e} over {cubes} stopped cubes"))
}

fn c6_cauchy(runs: &Runs) -> Result<Verdict, String> {
    let mut parts = Vec::new();
    let mut ok = true;
    for (name, o) in runs.all()? {
        if o.decomposition.as_ref().expect("refined").w_is_empty() {
            continue;
        }
        let cm = o.center_manifold.as_ref().expect("built");
        // Slope in natural log per level; this is stricter than base 2.
        let floor = cm.cauchy_floor();
        let top = cm.cauchy.iter().map(|(_, v)| *v).fold(0.0, f64::max);
        let pts: Vec<(f64, f64)> =
            cm.cauchy.iter().filter(|(_, v)| *v > floor).map(|(j, v)| (*j as f64, v.ln())).collect();
        match regression_slope(&pts) {
            Some(s) => {
                ok &= s <= -0.9;
                parts.push(format!("{name} {s:.2}"));
            }
            None if cm.cauchy_settled() => parts.push(format!("{name} settled (max diff {top:.1e})")),
            None => {
                ok = false;
                parts.push(format!("{name} (no slope)"));
            }
        }
    }
    verdict(ok && !parts.is_empty(), parts.join(", "))
}

fn c7_mollifier() -> Result<Verdict, String> {
    let p = Params::for_dim(2);
    let (mut mass, mut second, mut affine) = (0.0f64, 0.0f64, 0.0f64);
    for m in 1..=3usize {
        let h = 8.0 / 256.0;
        for j in p.n0..=Params::grid_level_limit(256).min(p.j_max) {
            let ell = DyadicCube::new(j, vec![0; m]).ell();
            let k = Mollifier::build(m, h, ell).map_err(|e| e.to_string())?;
            // Independent moment sums straight from the lattice offsets.
            let s0: f64 = k.weights.iter().sum();
            let s2: f64 = k
                .weights
                .iter()
                .zip(&k.offsets)
                .map(|(w, o)| w * o.iter().map(|v| (*v as f64 * h / ell).powi(2)).sum::<f64>())
                .sum();
            mass = mass.max((s0 - 1.0).abs());
            second = second.max(s2.abs());
            if m <= 2 {
                let n = 2 * k.reach + 7;
                let g = GridSpec::new(vec![-1.3; m], h, vec![n; m]);
                let lin = |x: &[f64]| 0.7 - 1.9 * x[0] + if m > 1 { 0.45 * x[1] } else { 0.0 };
                let out = k.convolve(&SampledMap::from_fn(g, 1, |x| vec![lin(x)])).map_err(|e| e.to_string())?;
                let mut x = vec![0.0; m];
                for i in 0..out.grid.len() {
                    out.grid.coord_into(i, &mut x);
                    affine = affine.max((out.values[i] - lin(&x)).abs());
                }
            }
        }
    }
    verdict(
        mass <= 1e-10 && second <= 1e-10 && affine <= 1e-9,
        format!("|∫ρ−1| {mass:.2e}, |∫|x|²ρ| {second:.2e}, affine {affine:.2e}"),
    )
}

fn random_orthogonal(rng: &mut ChaCha8Rng, d: usize) -> DMatrix<f64> {
    let a = DMatrix::from_fn(d, d, |_, _| rng.random_range(-1.0..1.0));
    let q = a.qr().q();
    if q.determinant() < 0.0 {
        let mut q = q;
        q.column_mut(0).neg_mut();
        q
    } else {
        q
    }
}

fn frame(q: &DMatrix<f64>, m: usize, n: usize) -> FrameTriple {
    let d = q.nrows();
    let cols = |a: usize, b: usize| Plane::new(q.columns(a, b - a).into_owned()).expect("orthonormal");
    FrameTriple::new(cols(0, m), cols(m, m + n), cols(m + n, d)).expect("frame")
}

fn c8_rotation_chain() -> Result<Verdict, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let (mut comp, mut ratio, mut ortho) = (0.0f64, 0.0f64, 0.0f64);
    let mut len_fail = 0;
    let mut samples = 0;
    while samples < 1000 {
        let (m, n, l) = (rng.random_range(1..=3), rng.random_range(1..=3), rng.random_range(1..=3));
        let d = m + n + l;
        let q = random_orthogonal(&mut rng, d);
        let src = frame(&q, m, n);
        let scale = rng.random_range(0.001..0.05);
        let gen: Vec<f64> = (0..d * (d - 1) / 2).map(|_| scale * rng.random_range(-1.0..1.0)).collect();
        let dst = src.transformed(&rotation_from_generator(d, &gen));
        let an = plane_distance(&src.pi, &dst.pi).unwrap() + plane_distance(&src.kappa, &dst.kappa).unwrap();
        if an > 0.1 || an == 0.0 {
            continue;
        }
        samples += 1;
        let chain = rotation_chain(&src, &dst, 0.2).map_err(|e| format!("sample {samples}: {e}"))?;
        // Composition checked against the target projectors directly.
        let r = &chain.composed;
        let mut err: f64 = 0.0;
        for (a, b) in [(&src.pi, &dst.pi), (&src.kappa, &dst.kappa), (&src.varpi, &dst.varpi)] {
            err = err.max((r * a.projector() * r.transpose() - b.projector()).abs().max());
        }
        comp = comp.max(err);
        ortho = ortho.max((r.transpose() * r - DMatrix::identity(d, d)).abs().max());
        if chain.rotations.len() > 2 * (m + n) + 4 {
            len_fail += 1;
        }
        let th = chain.rotations.iter().map(|r| r.theta.abs()).fold(0.0, f64::max);
        ratio = ratio.max(th / an);
    }
    verdict(
        comp <= 1e-9 && ortho <= 1e-9 && len_fail == 0 && ratio <= 10.0,
        format!("composition {comp:.2e}, orthogonality {ortho:.2e}, over-long chains {len_fail}, max |θ|/An {ratio:.3}"),
    )
}

/// Graph of `scale·f` over the standard plane of R³ on a square lattice.
fn corpus_patch(f: &CorpusFn, scale: f64, half: usize, h: f64) -> GraphPatch {
    let grid = GridSpec::centered(&[0.0, 0.0], h, half);
    GraphPatch::new(
        DVector::zeros(3),
        Plane::standard(3, 2),
        Plane::coordinate(3, &[2]),
        SampledMap::from_fn(grid, 1, |x| vec![scale * f.eval(x)]),
    )
    .expect("patch")
}

/// Lipschitz constant of `f` on `[-1,1]²` from its exact gradient.
fn corpus_lip(f: &CorpusFn) -> f64 {
    let (fx, fy) = (f.derivative(0), f.derivative(1));
    let mut lip: f64 = 0.0;
    for i in 0..=40 {
        for j in 0..=40 {
            let x = [-1.0 + i as f64 / 20.0, -1.0 + j as f64 / 20.0];
            lip = lip.max(fx.eval(&x).hypot(fy.eval(&x)));
        }
    }
    lip
}

fn tilted_plane(rng: &mut ChaCha8Rng, size: f64) -> Plane {
    let gen: Vec<f64> = (0..3).map(|_| size * rng.random_range(-1.0..1.0)).collect();
    Plane::standard(3, 2).transformed(&rotation_from_generator(3, &gen))
}

fn l1(map: &SampledMap, other: &SampledMap, radius: f64) -> f64 {
    let mut x = vec![0.0; 2];
    let mut s = 0.0;
    for i in 0..map.grid.len() {
        map.grid.coord_into(i, &mut x);
        if x[0].hypot(x[1]) < radius {
            s += (map.values[i] - other.values[i]).abs();
        }
    }
    s * map.grid.h.powi(2)
}

fn c9_regraph() -> Result<Verdict, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let fs = corpus(2, 24, 0);
    let opts = RegraphOptions::default();
    let zero = DVector::zeros(3);
    let h = 1.0 / 128.0;
    let mut trip: f64 = 0.0;
    for f in &fs {
        let scale = 0.1 / corpus_lip(f).max(1e-12);
        let input = corpus_patch(f, scale, 160, h);
        let k0 = tilted_plane(&mut rng, 0.05);
        let there = regraph(&input, &k0, &zero, GridSpec::centered(&[0.0, 0.0], h, 140), &opts)
            .map_err(|e| e.to_string())?
            .0;
        let back = regraph(&there, &Plane::standard(3, 2), &zero, GridSpec::centered(&[0.0, 0.0], h, 100), &opts)
            .map_err(|e| e.to_string())?
            .0;
        let mut x = vec![0.0; 2];
        for i in 0..back.map.grid.len() {
            back.map.grid.coord_into(i, &mut x);
            trip = trip.max((back.map.values[i] - scale * f.eval(&x)).abs());
        }
    }

    let (rho, s) = (0.7, 0.5);
    let mut ratio: f64 = 0.0;
    let hc = 1.0 / 64.0;
    for pair in 0..100 {
        let f = &fs[pair % fs.len()];
        let g = &fs[(7 * pair + 3) % fs.len()];
        let (sf, sg) = (0.08 / corpus_lip(f).max(1e-12), 0.08 / corpus_lip(g).max(1e-12));
        let pf = corpus_patch(f, sf, 64, hc);
        let pg = corpus_patch(g, sg, 64, hc);
        let k0 = tilted_plane(&mut rng, 0.05);
        let out = GridSpec::centered(&[0.0, 0.0], hc, 40);
        let fp = regraph(&pf, &k0, &zero, out.clone(), &opts).map_err(|e| e.to_string())?.0;
        let gp = regraph(&pg, &k0, &zero, out, &opts).map_err(|e| e.to_string())?.0;
        let den = l1(&pf.map, &pg.map, rho);
        if den > 0.0 {
            ratio = ratio.max(l1(&fp.map, &gp.map, s) / den);
        }
    }
    verdict(trip <= 1e-8 && ratio <= 4.0, format!("round trip {trip:.2e} on {} maps, max L¹ ratio {ratio:.3}", fs.len()))
}

fn c10_energy() -> Result<Verdict, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut worst: f64 = 0.0;
    for i in 0..50 {
        let m = 1 + i % 2;
        let q = 2 + i % 3;
        let k = 1 + (i / 3) % 2;
        let n = if m == 1 { 257 } else { 41 };
        let h = 2.0 / (n - 1) as f64;
        let grid = GridSpec::new(vec![-1.0; m], h, vec![n; m]);
        let fs = corpus(m, q * k, rng.random());
        let mut values = Vec::with_capacity(grid.len() * q * k);
        let mut x = vec![0.0; m];
        for node in 0..grid.len() {
            grid.coord_into(node, &mut x);
            for (c, f) in fs.iter().enumerate() {
                values.push(f.eval(&x) + c as f64);
            }
        }
        let field = QField::new_labeled(grid, q, k, values).map_err(|e| e.to_string())?;
        let e = field.energy_decomposition(None).map_err(|e| e.to_string())?;
        let (a, b) = e.relative_defects();
        worst = worst.max(a).max(b);
    }
    verdict(worst <= 1e-10, format!("max relative defect {worst:.2e} on 50 fields"))
}

fn c11_harmonic() -> Result<Verdict, String> {
    let p = Params::for_dim(2);
    let rep = harmonic_decay_check(&[2, 3], 5, 100, p.delta2, 0);
    let margins: Vec<String> = rep
        .rows
        .iter()
        .filter(|r| r.key.ends_with("min_margin"))
        .map(|r| format!("{} {:.3e}", r.key, r.value))
        .collect();
    let ok = rep.rows.iter().filter(|r| r.key.ends_with("min_margin")).all(|r| r.value >= -1e-8) && margins.len() == 2;
    verdict(ok, margins.join(", "))
}

fn sheets(d: f64) -> ScenarioSpec {
    ScenarioSpec {
        generator: Generator::ParallelSheets { d, amplitude: 0.0, frequency: 1.0 },
        m: 2,
        n_bar: 1,
        q: 2,
        cells: 256,
        ambient: AmbientSpec::Flat,
    }
}

fn unit_cylinder(height: f64) -> RegionSpec {
    RegionSpec::Cylinder { center: DVector::from_column_slice(&[0.0, 0.0, height]), radius: 1.0, axis: Plane::standard(3, 2) }
}

fn c12_stripes(runs: &Runs) -> Result<Verdict, String> {
    let sigma = 0.05;
    let pi = Plane::standard(3, 2);
    let mut parts = Vec::new();
    let mut ok = true;
    for (ratio, want) in [(0.1, 1usize), (3.0, 2), (10.0, 2)] {
        let d = ratio * sigma;
        let t = sheets(d).build().map_err(|e| e.to_string())?;
        let sd = stripes_with_sigma(&t, &unit_cylinder(0.0), &pi, sigma, 0.5 * sigma, 1e-3).map_err(|e| e.to_string())?;
        let mults: Vec<usize> = sd.stripes.iter().map(|s| s.multiplicity).collect();
        let expect: Vec<usize> = if want == 1 { vec![2] } else { vec![1, 1] };
        ok &= sd.k() == want && mults == expect;
        parts.push(format!("d/σ={ratio}: k={} {mults:?}", sd.k()));
    }

    let t0 = sheets(0.4).build().map_err(|e| e.to_string())?;
    let base = stripes_with_sigma(&t0, &unit_cylinder(0.0), &pi, sigma, 0.5 * sigma, 1e-3).map_err(|e| e.to_string())?;
    let shift = 0.37;
    let mut t1 = t0.clone();
    for v in t1.fibers.iter_mut() {
        *v += shift;
    }
    let moved = stripes_with_sigma(&t1, &unit_cylinder(shift), &pi, sigma, 0.5 * sigma, 1e-3).map_err(|e| e.to_string())?;
    let mut drift: f64 = if base.k() == moved.k() { 0.0 } else { f64::INFINITY };
    for (a, b) in base.stripes.iter().zip(&moved.stripes) {
        drift = drift.max((b.center[0] - a.center[0] - shift).abs());
    }
    ok &= drift <= 1e-12;
    parts.push(format!("translation {drift:.1e}"));

    let mut over = 0;
    let mut cylinders = 0;
    for (_, o) in runs.all()? {
        for c in o.stripes.as_ref().expect("stripes") {
            cylinders += 1;
            let total: usize = c.decomposition.stripes.iter().map(|s| s.multiplicity).sum();
            if c.decomposition.k() > o.current.q || total != o.current.q {
                over += 1;
            }
        }
    }
    ok &= over == 0;
    parts.push(format!("k ≤ Q on {cylinders} cylinders of 9 scenarios ({over} violations)"));
    verdict(ok, parts.join("; "))
}

fn c13_excess() -> Result<Verdict, String> {
    let eps = 0.1;
    let mut spec = ScenarioSpec {
        generator: Generator::LinearTilt { eps },
        m: 2,
        n_bar: 1,
        q: 2,
        cells: 256,
        ambient: AmbientSpec::Flat,
    };
    let cyl = |r: f64| RegionSpec::Cylinder { center: DVector::from_column_slice(&[0.1, -0.2, 0.0]), radius: r, axis: Plane::standard(3, 2) };
    let t = spec.build().map_err(|e| e.to_string())?;
    let e = t.excess(&cyl(1.5), &Plane::standard(3, 2)).map_err(|e| e.to_string())?;
    // Q copies of the plane εx₁: tilt 2 − 2/√(1+ε²) against unit area element √(1+ε²).
    let exact = 2.0 * ((1.0 + eps * eps).sqrt() - 1.0);
    let rel = ((e - exact) / exact).abs();

    spec.generator = Generator::Sinusoid { amplitude: 0.2, frequency: 2.0 };
    spec.q = 1;
    let measure = |cells: usize| -> Result<(f64, f64), String> {
        let t = ScenarioSpec { cells, ..spec.clone() }.build().map_err(|e| e.to_string())?;
        let c = cyl(1.3);
        Ok((t.mass(&c).map_err(|e| e.to_string())?, t.excess(&c, &Plane::standard(3, 2)).map_err(|e| e.to_string())?))
    };
    let (m1, e1) = measure(128)?;
    let (m2, e2) = measure(256)?;
    let (mr, er) = measure(1024)?;
    let mass_order = ((m1 - mr).abs() / (m2 - mr).abs()).log2();
    let excess_order = ((e1 - er).abs() / (e2 - er).abs()).log2();
    let area = omega(2) * 1.3f64.powi(2);
    verdict(
        rel <= 1e-6 && mass_order >= 1.8 && excess_order >= 1.8,
        format!(
            "linear rel err {rel:.2e}; order mass {mass_order:.2}, excess {excess_order:.2} (128→256, reference 1024, disc area {area:.3})"
        ),
    )
}

fn c14_separation(runs: &Runs) -> Result<Verdict, String> {
    let o = runs.get("height_stop")?;
    let dec = o.decomposition.as_ref().expect("refined");
    let Generator::ParallelSheets { d, .. } = o.manifest.scenario.generator else {
        return Err("height_stop config uses another generator".into());
    };
    let p = &dec.params;
    let m = dec.m as f64;
    // First level where C_h m0^(1/2m) ℓ^(1+β₂) drops below the sheet gap.
    let mut predicted = p.n0;
    while p.c_h * dec.m0.powf(1.0 / (2.0 * m)) * 2f64.powi(-(predicted as i32)).powf(1.0 + p.beta2) >= d {
        predicted += 1;
    }
    let ht: Vec<u32> = dec.by_reason(StopReason::Height).map(|r| r.cube.level).collect();
    let at_level = !ht.is_empty() && ht.iter().all(|&j| j == predicted);
    let s2 = row_status(o, "separation.s2.small_neighbor_contacts");
    let s3 = row_status(o, "separation.s3.min_margin");
    let ok = at_level
        && matches!(s2, Some((Status::Pass, _)))
        && matches!(s3, Some((Status::Pass, v)) if v >= 0.0);
    verdict(
        ok,
        format!(
            "{} HT cubes, predicted level {predicted}, all at it: {at_level}; S2 {:?}; S3 margin {:?}",
            ht.len(),
            s2.map(|s| s.0),
            s3.map(|s| s.1)
        ),
    )
}

fn c15_determinism() -> Result<Verdict, String> {
    let bin = env!("CARGO_BIN_EXE_cmanifold");
    let cfg = config_path("parallel_sheets");
    let dirs = [scratch_dir("det_a"), scratch_dir("det_b")];
    for d in &dirs {
        let st = std::process::Command::new(bin)
            .args(["verify", "--config"])
            .arg(&cfg)
            .arg("--out")
            .arg(d)
            .output()
            .map_err(|e| e.to_string())?;
        if !st.status.success() {
            return Err(format!("verify exited with {:?}: {}", st.status.code(), String::from_utf8_lossy(&st.stderr)));
        }
    }
    let list = |d: &Path| -> Result<Vec<String>, String> {
        let mut v: Vec<String> = std::fs::read_dir(d)
            .map_err(|e| e.to_string())?
            .map(|e| e.unwrap().file_name().to_string_lossy().into_owned())
            .collect();
        v.sort();
        Ok(v)
    };
    let (a, b) = (list(&dirs[0])?, list(&dirs[1])?);
    if a != b {
        return verdict(false, format!("file sets differ: {a:?} vs {b:?}"));
    }
    let differing: Vec<&String> = a
        .iter()
        .filter(|n| std::fs::read(dirs[0].join(n)).ok() != std::fs::read(dirs[1].join(n)).ok())
        .collect();
    verdict(differing.is_empty(), format!("{} files compared, differing: {differing:?}", a.len()))
}

fn main() {
    let picked: Vec<usize> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let want = |i: usize| picked.is_empty() || picked.contains(&i);
    let needs_runs = [1, 2, 3, 4, 5, 6, 12, 14].iter().any(|&i| want(i));
    let t0 = Instant::now();
    let runs = if needs_runs { Some(Runs::compute()) } else { None };
    if needs_runs {
        eprintln!("  [shared scenario runs {:.1}s]", t0.elapsed().as_secs_f64());
    }
    let r = || runs.as_ref().expect("scenario runs");

    let criteria: Vec<(usize, &str, Box<dyn Fn() -> Result<Verdict, String> + '_>)> = vec![
        (1, "whitney axioms", Box::new(|| c1_whitney(r()))),
        (2, "trivial coincidence", Box::new(|| c2_trivial(r()))),
        (3, "symmetric average", Box::new(|| c3_symmetric(r()))),
        (4, "branch decay", Box::new(|| c4_branch_decay(r()))),
        (5, "stabilization", Box::new(|| c5_stabilization(r()))),
        (6, "cauchy decay", Box::new(|| c6_cauchy(r()))),
        (7, "mollifier", Box::new(c7_mollifier)),
        (8, "rotation chain", Box::new(c8_rotation_chain)),
        (9, "regraph", Box::new(c9_regraph)),
        (10, "energy decomposition", Box::new(c10_energy)),
        (11, "harmonic decay", Box::new(c11_harmonic)),
        (12, "stripes", Box::new(|| c12_stripes(r()))),
        (13, "closed-form excess", Box::new(c13_excess)),
        (14, "separation", Box::new(|| c14_separation(r()))),
        (15, "determinism", Box::new(c15_determinism)),
    ];
    let mut failed = 0;
    for (i, name, f) in criteria {
        if !want(i) {
            continue;
        }
        let t = Instant::now();
        let (ok, detail) = match f() {
            Ok(v) => (v.ok, v.detail),
            Err(e) => (false, format!("error: {e}")),
        };
        if !ok {
            failed += 1;
        }
        println!(
            "{} {i:>2} {name}: {detail} [{:.1}s]",
            if ok { "PASS" } else { "FAIL" },
            t.elapsed().as_secs_f64()
        );
    }
    let _ = std::fs::remove_dir_all(std::env::temp_dir().join(format!("cmanifold-acceptance-{}", std::process::id())));
    if failed > 0 {
        println!("{failed} criteria failed");
        std::process::exit(1);
    }
}
