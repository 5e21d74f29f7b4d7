//! Subcommands: each runs the stages it depends on and writes the artifacts
//! of every stage it ran, followed by `manifest.json`.

use crate::artifacts::{csv, write_atomic, ArtifactEntry, ArtifactWriter};
use crate::config::Config;
use crate::error::{CliError, CliResult};
use cmanifold::current::RegionSpec;
use cmanifold::diag::{
    harmonic_decay_check, interpolation_check, separation_check, splitting_check, stripes, tilting_check, Report,
    Status, StripeDecomposition,
};
use cmanifold::grid::{GridSpec, SampledMap};
use cmanifold::interp::{build_center_manifold, CenterManifold, Mollifier};
use cmanifold::normal::{normal_approximation, NormalApprox};
use cmanifold::whitney::{refine, DyadicCube, StopReason, WhitneyDecomposition, WhitneyValidation};
use cmanifold::{Plane, ScenarioSpec, SheetCurrent};
use nalgebra::DVector;
use serde::Serialize;
use std::path::Path;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Command {
    Generate,
    Refine,
    BuildCm,
    Normal,
    Stripes,
    Verify,
    Report,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::Generate => "generate",
            Command::Refine => "refine",
            Command::BuildCm => "build-cm",
            Command::Normal => "normal",
            Command::Stripes => "stripes",
            Command::Verify => "verify",
            Command::Report => "report",
        }
    }

    fn needs_refine(self) -> bool {
        self != Command::Generate
    }

    fn needs_cm(self) -> bool {
        matches!(self, Command::BuildCm | Command::Normal | Command::Verify | Command::Report)
    }

    fn needs_normal(self) -> bool {
        matches!(self, Command::Normal | Command::Verify | Command::Report)
    }

    fn needs_stripes(self) -> bool {
        matches!(self, Command::Stripes | Command::Verify | Command::Report)
    }
}

#[derive(Clone, Debug, Default, Serialize)]
pub struct Summary {
    pub cells: usize,
    pub m0: f64,
    pub j_max: Option<u32>,
    pub w_count: Option<usize>,
    pub w_empty: Option<bool>,
    pub w_excess: Option<usize>,
    pub w_height: Option<usize>,
    pub w_neighbor: Option<usize>,
    pub whitney_valid: Option<bool>,
    pub cauchy_slope: Option<f64>,
    pub stabilization_defect: Option<f64>,
    pub failed_rows: Option<usize>,
}

#[derive(Clone, Debug, Serialize)]
pub struct Manifest {
    pub command: String,
    pub config_sha256: String,
    pub scenario: ScenarioSpec,
    pub params: cmanifold::Params,
    pub seed: u64,
    pub artifacts: Vec<ArtifactEntry>,
    pub summary: Summary,
}

/// Everything a run computed, kept for callers that inspect results in
/// process.
pub struct Outcome {
    pub exit_code: i32,
    pub manifest: Manifest,
    pub current: SheetCurrent,
    pub decomposition: Option<WhitneyDecomposition>,
    pub validation: Option<WhitneyValidation>,
    pub center_manifold: Option<CenterManifold>,
    pub normal: Option<NormalApprox>,
    pub stripes: Option<Vec<CylinderStripes>>,
    pub reports: Vec<Report>,
}

#[derive(Clone, Debug, Serialize)]
pub struct CylinderStripes {
    pub label: String,
    pub center: Vec<f64>,
    pub radius: f64,
    pub decomposition: StripeDecomposition,
}

fn coord_header(prefix: &str, n: usize) -> Vec<String> {
    (0..n).map(|i| format!("{prefix}{}", i + 1)).collect()
}

fn core_rows<'a>(grid: &'a GridSpec, f: impl Fn(usize) -> Vec<f64> + 'a) -> impl Iterator<Item = Vec<f64>> + 'a {
    let m = grid.dim();
    (0..grid.len()).map(move |i| {
        let mut x = vec![0.0; m];
        grid.coord_into(i, &mut x);
        x.extend(f(i));
        x
    })
}

fn write_current(w: &mut ArtifactWriter, t: &SheetCurrent, spec: &ScenarioSpec) -> CliResult<()> {
    #[derive(Serialize)]
    struct Info<'a> {
        spec: &'a ScenarioSpec,
        d: usize,
        h: f64,
        pad: usize,
        m0: f64,
        branch_nodes: usize,
    }
    w.write_json(
        "scenario.json",
        &Info { spec, d: t.d(), h: t.h(), pad: t.pad, m0: t.m0, branch_nodes: t.branch_node_count() },
    )?;
    let grid = t.core_grid();
    let mut header = coord_header("x", t.m);
    for s in 0..t.q {
        header.extend((0..t.n).map(|c| format!("sheet{}_y{}", s + 1, c + 1)));
    }
    let text = csv(&header, core_rows(&grid, |i| t.fiber(t.core_node(&grid.multi(i))).to_vec()));
    w.write("fibers.csv", text.as_bytes())
}

fn write_refine(w: &mut ArtifactWriter, dec: &WhitneyDecomposition, v: &WhitneyValidation) -> CliResult<()> {
    w.write_json("whitney.json", dec)?;
    let m = dec.m;
    let mut header = vec!["level".to_string()];
    header.extend(coord_header("index", m));
    header.extend(coord_header("lo", m));
    header.extend(coord_header("hi", m));
    header.extend(["stop", "excess", "height", "ex_threshold", "ht_threshold"].map(String::from));
    let code = |s: StopReason| match s {
        StopReason::None => 0.0,
        StopReason::Excess => 1.0,
        StopReason::Height => 2.0,
        StopReason::Neighbor => 3.0,
    };
    let rows = dec.records.iter().map(|r| {
        let mut row = vec![r.cube.level as f64];
        row.extend(r.cube.index.iter().map(|&i| i as f64));
        row.extend(r.cube.lo());
        row.extend(r.cube.hi());
        row.extend([code(r.stop), r.excess, r.height, r.ex_threshold, r.ht_threshold]);
        row
    });
    let mut text = String::from("# stop: 0 refining, 1 excess, 2 height, 3 neighbor\n");
    text.push_str(&csv(&header, rows));
    w.write("cubes.csv", text.as_bytes())?;
    #[derive(Serialize)]
    struct Val<'a> {
        validation: &'a WhitneyValidation,
        passes: bool,
        gamma_boxes: Vec<cmanifold::whitney::Bbox>,
    }
    w.write_json("validation.json", &Val { validation: v, passes: v.passes(), gamma_boxes: dec.gamma_boxes() })
}

fn write_cm(w: &mut ArtifactWriter, cm: &CenterManifold) -> CliResult<()> {
    let (m, n) = (cm.m, cm.n);
    let mut header = coord_header("x", m);
    header.extend(coord_header("phi", n));
    w.write("phi.csv", csv(&header, core_rows(&cm.grid, |i| cm.phi[i * n..(i + 1) * n].to_vec())).as_bytes())?;
    // Slices along the first axis through the middle row of the lattice,
    // one column block per glued level.
    let mid: Vec<usize> = cm.grid.counts.iter().map(|c| c / 2).collect();
    let mut header = vec!["x1".to_string()];
    for (j, _) in &cm.snapshots {
        header.extend((0..n).map(|c| format!("phi_level{j}_{}", c + 1)));
    }
    let rows = (0..cm.grid.counts[0]).map(|i0| {
        let mut mi = mid.clone();
        mi[0] = i0;
        let node = cm.grid.flat(&mi);
        let mut row = vec![cm.grid.lo[0] + i0 as f64 * cm.grid.h];
        for (_, phi) in &cm.snapshots {
            row.extend(&phi[node * n..(node + 1) * n]);
        }
        row
    });
    w.write("phi_slices.csv", csv(&header, rows).as_bytes())?;
    #[derive(Serialize)]
    struct Info<'a> {
        m: usize,
        n: usize,
        levels: Vec<u32>,
        cauchy: &'a [(u32, f64)],
        cauchy_slope: Option<f64>,
        cauchy_settled: bool,
        stabilization: &'a cmanifold::interp::StabilizationReport,
        norms: &'a cmanifold::interp::DerivativeNorms,
        graph_mode_defect: f64,
        patches: usize,
        max_patch_tilt: f64,
        max_patch_lipschitz: f64,
        regraph_extended_nodes: usize,
    }
    let stats = &cm.patch_stats;
    w.write_json(
        "center_manifold.json",
        &Info {
            m,
            n,
            levels: cm.snapshots.iter().map(|s| s.0).collect(),
            cauchy: &cm.cauchy,
            cauchy_slope: cm.cauchy_slope(),
            cauchy_settled: cm.cauchy_settled(),
            stabilization: &cm.stabilization,
            norms: &cm.norms,
            graph_mode_defect: cm.graph_mode_defect,
            patches: stats.len(),
            max_patch_tilt: stats.iter().map(|s| s.1.tilt_to_base).fold(0.0, f64::max),
            max_patch_lipschitz: stats.iter().map(|s| s.1.lipschitz).fold(0.0, f64::max),
            regraph_extended_nodes: stats.iter().map(|s| s.1.regraph_filled).sum(),
        },
    )
}

fn write_normal(w: &mut ArtifactWriter, cm: &CenterManifold, na: &NormalApprox) -> CliResult<()> {
    let m = cm.m;
    let mut header = coord_header("x", m);
    header.push("in_k".into());
    for s in 0..na.q {
        header.extend((0..na.d).map(|c| format!("n{}_{}", s + 1, c + 1)));
    }
    let s = na.q * na.d;
    let rows = na.nodes.iter().enumerate().map(|(k, &node)| {
        let mut x = vec![0.0; m];
        cm.grid.coord_into(node, &mut x);
        x.push(if na.in_k[k] { 1.0 } else { 0.0 });
        x.extend(&na.offsets[k * s..(k + 1) * s]);
        x
    });
    w.write("normal.csv", csv(&header, rows).as_bytes())?;
    #[derive(Serialize)]
    struct Info<'a> {
        q: usize,
        d: usize,
        nodes: usize,
        nodes_in_k: usize,
        disc_radius: f64,
        disc_clip_flag: bool,
        extended_nodes: usize,
        max_orthogonality: f64,
        max_sigma_defect: f64,
        max_reconstruction: f64,
        contact_max: f64,
        contact_nodes: usize,
        max_eta: f64,
        min_sep_to_mean: f64,
        global: &'a cmanifold::normal::GlobalStats,
        regions: &'a [cmanifold::normal::RegionStats],
    }
    w.write_json(
        "normal.json",
        &Info {
            q: na.q,
            d: na.d,
            nodes: na.nodes.len(),
            nodes_in_k: na.in_k.iter().filter(|b| **b).count(),
            disc_radius: na.disc_radius,
            disc_clip_flag: na.disc_clip_flag,
            extended_nodes: na.extended_nodes,
            max_orthogonality: na.max_orthogonality,
            max_sigma_defect: na.max_sigma_defect,
            max_reconstruction: na.max_reconstruction,
            contact_max: na.contact_max,
            contact_nodes: na.contact_nodes,
            max_eta: na.max_eta,
            min_sep_to_mean: na.min_sep_to_mean,
            global: &na.global,
            regions: &na.regions,
        },
    )
}

/// Stripe decompositions over the unit cylinder about the base plane and over
/// the cylinder of every top-level cube.
pub fn stripe_cylinders(t: &SheetCurrent, dec: &WhitneyDecomposition) -> CliResult<Vec<CylinderStripes>> {
    let d = t.d();
    let base = Plane::standard(d, t.m);
    let mut jobs = vec![("base".to_string(), DVector::zeros(d), 1.0, base)];
    for r in dec.level(dec.params.n0) {
        let label = format!("cube_l{}_{:?}", r.cube.level, r.cube.index);
        jobs.push((label, DVector::from_column_slice(&r.p_l), r.ball_radius, r.pi_l.clone()));
    }
    jobs.into_iter()
        .map(|(label, center, radius, axis)| {
            let cyl = RegionSpec::Cylinder { center: center.clone(), radius, axis: axis.clone() };
            let decomposition = stripes(t, &cyl, &axis, &dec.params)?;
            Ok(CylinderStripes { label, center: center.iter().copied().collect(), radius, decomposition })
        })
        .collect()
}

fn write_stripes(w: &mut ArtifactWriter, st: &[CylinderStripes]) -> CliResult<()> {
    w.write_json("stripes.json", &st)?;
    let header: Vec<String> =
        ["cylinder", "stripe", "axis", "lo", "hi", "center", "multiplicity", "sigma"].map(String::from).to_vec();
    let mut rows = Vec::new();
    for (ci, c) in st.iter().enumerate() {
        for (si, s) in c.decomposition.stripes.iter().enumerate() {
            for a in 0..s.center.len() {
                rows.push(vec![
                    ci as f64,
                    si as f64,
                    a as f64,
                    s.lo[a],
                    s.hi[a],
                    s.center[a],
                    s.multiplicity as f64,
                    c.decomposition.sigma,
                ]);
            }
        }
    }
    let mut text = String::from("# cylinder index follows the order in stripes.json\n");
    text.push_str(&csv(&header, rows.into_iter()));
    w.write("stripe_bands.csv", text.as_bytes())
}

fn whitney_report(v: &WhitneyValidation) -> Report {
    let mut r = Report::new("whitney");
    let counts = [
        ("whitney.w1.cover", v.cover_violations),
        ("whitney.w1.overlap", v.overlap_violations),
        ("whitney.w2.side_ratio", v.ratio_violations),
        ("whitney.w3.separation", v.separation_violations),
        ("whitney.father_refining", v.father_violations),
        ("whitney.stop_exclusive", v.exclusivity_violations),
        ("whitney.refining_below_thresholds", v.ancestor_violations),
    ];
    for (key, c) in counts {
        r.assert(key, c == 0, c as f64, Some(0.0), "violations");
    }
    r.info("whitney.w_count", v.w_count as f64, "stopped cubes");
    r.info("whitney.min_separation_margin", v.min_separation_margin, "sep(Γ, L) − 2ℓ(L)");
    r.info("whitney.fit.excess_ratio", v.max_ex_ratio_w, "max E / (m0 ℓ^{2−2δ₂}) over W");
    r.info("whitney.fit.height_ratio", v.max_ht_ratio_w, "max h / (m0^{1/2m} ℓ^{1+β₂}) over W");
    r
}

/// Largest deviation of a convolved affine field from itself.
fn affine_reproduction(k: &Mollifier) -> CliResult<f64> {
    let m = k.m;
    let n = 2 * k.reach + 9;
    let g = GridSpec::new(vec![0.0; m], k.h, vec![n; m]);
    let f = SampledMap::from_fn(g, 1, |x| vec![0.3 + x.iter().enumerate().map(|(a, v)| (a as f64 + 1.7) * v).sum::<f64>()]);
    let out = k.convolve(&f)?;
    let mut x = vec![0.0; m];
    let mut err: f64 = 0.0;
    for i in 0..out.grid.len() {
        out.grid.coord_into(i, &mut x);
        let exact = 0.3 + x.iter().enumerate().map(|(a, v)| (a as f64 + 1.7) * v).sum::<f64>();
        err = err.max((out.values[i] - exact).abs());
    }
    Ok(err)
}

fn cm_report(t: &SheetCurrent, dec: &WhitneyDecomposition, cm: &CenterManifold) -> CliResult<Report> {
    let mut r = Report::new("center_manifold");
    let st = &cm.stabilization;
    if st.cubes_checked > 0 {
        r.assert("stabilization.max_defect", st.max_defect <= 1e-12, st.max_defect, Some(1e-12), "φ_j vs φ_k, j,k ≥ i+2");
    } else {
        r.info("stabilization.max_defect", st.max_defect, "no stopped cube with two later levels");
    }
    match cm.cauchy_slope() {
        Some(s) if !dec.w_is_empty() => r.assert("cauchy.slope", s <= -0.9, s, Some(-0.9), "log2 sup|φ_j − φ_{j+1}| per level"),
        Some(s) => r.info("cauchy.slope", s, "W is empty"),
        None if cm.cauchy_settled() => {
            let top = cm.cauchy.iter().map(|(_, v)| *v).fold(0.0, f64::max);
            r.assert("cauchy.settled", true, top, Some(cm.cauchy_floor()), "all level differences at rounding level")
        }
        None => r.info("cauchy.slope", f64::NAN, "fewer than two level differences above rounding level"),
    }
    let mut levels: Vec<u32> = dec.records.iter().map(|r| r.cube.level).collect();
    levels.dedup();
    let (mut mass, mut second, mut affine) = (0.0f64, 0.0f64, 0.0f64);
    for j in levels {
        let k = Mollifier::build(t.m, t.h(), DyadicCube::new(j, vec![0; t.m]).ell())?;
        mass = mass.max((k.mass - 1.0).abs());
        second = second.max(k.second_moment.abs());
        affine = affine.max(affine_reproduction(&k)?);
    }
    r.assert("mollifier.mass", mass <= 1e-10, mass, Some(1e-10), "|∫ρ − 1|");
    r.assert("mollifier.second_moment", second <= 1e-10, second, Some(1e-10), "|∫|x|²ρ|");
    r.assert("mollifier.affine_reproduction", affine <= 1e-9, affine, Some(1e-9), "sup error on an affine field");
    r.info("center_manifold.c0", cm.norms.c0, "sup|φ|");
    r.info("center_manifold.d1", cm.norms.d1, "sup|Dφ|");
    r.info("center_manifold.d2", cm.norms.d2, "sup|D²φ|");
    r.info("center_manifold.d3", cm.norms.d3, "sup|D³φ|");
    r.info("center_manifold.d3_holder", cm.norms.d3_holder, "Hölder quotient of D³φ");
    let ext: usize = cm.patch_stats.iter().map(|s| s.1.regraph_filled).sum();
    r.info("center_manifold.regraph_extended_nodes", ext as f64, "base nodes extended instead of inverted");
    Ok(r)
}

fn normal_report(na: &NormalApprox) -> Report {
    let mut r = Report::new("normal");
    r.assert("normal.orthogonality", na.max_orthogonality <= 1e-8, na.max_orthogonality, Some(1e-8), "max |P_T N|");
    r.assert(
        "normal.reconstruction",
        na.max_reconstruction <= 1e-8,
        na.max_reconstruction,
        Some(1e-8),
        "max distance of x + N_i to the current over K",
    );
    r.info("normal.sigma_defect", na.max_sigma_defect, "max distance of x + N_i to Σ");
    r.info("normal.contact_max", na.contact_max, "max G(N, Q⟦0⟧) over the contact set");
    r.info("normal.k_fraction", na.in_k.iter().filter(|b| **b).count() as f64 / na.nodes.len().max(1) as f64, "share of nodes in K");
    r.info("normal.extended_nodes", na.extended_nodes as f64, "nodes outside K");
    r.info("normal.fit.lipschitz", na.global.fit_lip, "");
    r.info("normal.fit.c0", na.global.fit_c0, "");
    r.info("normal.fit.dirichlet", na.global.fit_dir, "");
    r.info("normal.fit.non_contact", na.global.fit_err, "");
    let avg = na.regions.iter().map(|r| r.fit_avg).fold(0.0, f64::max);
    r.info("normal.fit.average", avg, "largest over Whitney regions");
    r
}

fn stripes_report(q: usize, st: &[CylinderStripes]) -> Report {
    let mut r = Report::new("stripes");
    let worst_k = st.iter().map(|c| c.decomposition.k()).max().unwrap_or(0);
    r.assert("stripes.count_at_most_q", worst_k <= q, worst_k as f64, Some(q as f64), "largest stripe count");
    let bad_mult = st
        .iter()
        .filter(|c| c.decomposition.stripes.iter().map(|s| s.multiplicity).sum::<usize>() != q && c.decomposition.k() > 0)
        .count();
    r.assert("stripes.multiplicities_sum_to_q", bad_mult == 0, bad_mult as f64, Some(0.0), "cylinders");
    let inconsistent = st.iter().filter(|c| !c.decomposition.multiplicity_consistent).count();
    r.info("stripes.inconsistent_multiplicity", inconsistent as f64, "cylinders whose fibers meet a stripe unevenly");
    let overlapping = st.iter().filter(|c| !c.decomposition.disjoint).count();
    r.info("stripes.not_disjoint", overlapping as f64, "cylinders with stripes closer than 2σ");
    let fail = st.iter().filter(|c| c.decomposition.hypothesis_failure).count();
    r.info("stripes.hypothesis_failures", fail as f64, "cylinders without an admissible split");
    let deep = st.iter().filter(|c| c.decomposition.depth > c.decomposition.depth_bound).count();
    r.info("stripes.depth_over_bound", deep as f64, "cylinders whose search exceeded the depth bound");
    let clipped = st.iter().filter(|c| c.decomposition.inner_clipped).count();
    r.info("stripes.inner_clipped", clipped as f64, "inner radius clipped to r/2");
    r
}

fn reports_text(reports: &[Report]) -> String {
    let mut s = String::new();
    for r in reports {
        s.push_str(&r.to_text());
        s.push('\n');
    }
    let fails = reports.iter().flat_map(|r| &r.rows).filter(|r| r.status == Status::Fail).count();
    s.push_str(&format!("{} failing rows\n", fails));
    s
}

fn fitted_tables(reports: &[Report]) -> (String, Vec<Report>) {
    let tables: Vec<Report> = reports
        .iter()
        .map(|r| Report {
            check: r.check.clone(),
            rows: r.rows.iter().filter(|row| row.status == Status::Info).cloned().collect(),
        })
        .filter(|r| !r.rows.is_empty())
        .collect();
    let mut s = String::from("Fitted and measured constants\n\n");
    for t in &tables {
        s.push_str(&t.to_text());
        s.push('\n');
    }
    (s, tables)
}

/// Run one subcommand and write its artifacts under `out`.
pub fn failing_rows(reports: &[Report]) -> usize {
    reports.iter().flat_map(|r| &r.rows).filter(|r| r.status == Status::Fail).count()
}

/// Exit status of a run that completed: 3 when `verify` has a failing row
/// or `refine` produced an invalid decomposition, 0 otherwise.
pub fn exit_status(cmd: Command, reports: &[Report], whitney_valid: Option<bool>) -> i32 {
    let failed = match cmd {
        Command::Verify => failing_rows(reports) > 0,
        Command::Refine => whitney_valid == Some(false),
        _ => false,
    };
    if failed {
        3
    } else {
        0
    }
}

pub fn run(cmd: Command, cfg: &Config, out: &Path) -> CliResult<Outcome> {
    let mut w = ArtifactWriter::new(out)?;
    let spec = &cfg.scenario;
    let t = spec.build()?;
    let mut summary = Summary { cells: t.cells, m0: t.m0, ..Default::default() };
    write_current(&mut w, &t, spec)?;

    let (mut dec, mut val, mut cm, mut na, mut st) = (None, None, None, None, None);
    if cmd.needs_refine() {
        let d = refine(&t, &cfg.params)?;
        let v = d.validate();
        write_refine(&mut w, &d, &v)?;
        summary.j_max = Some(d.j_max);
        summary.w_count = Some(v.w_count);
        summary.w_empty = Some(d.w_is_empty());
        summary.w_excess = Some(d.by_reason(StopReason::Excess).count());
        summary.w_height = Some(d.by_reason(StopReason::Height).count());
        summary.w_neighbor = Some(d.by_reason(StopReason::Neighbor).count());
        summary.whitney_valid = Some(v.passes());
        dec = Some(d);
        val = Some(v);
    }
    if cmd.needs_cm() {
        let d = dec.as_ref().expect("refined");
        let c = build_center_manifold(&t, d)?;
        write_cm(&mut w, &c)?;
        summary.cauchy_slope = c.cauchy_slope();
        summary.stabilization_defect = Some(c.stabilization.max_defect);
        cm = Some(c);
    }
    if cmd.needs_normal() {
        let (d, c) = (dec.as_ref().expect("refined"), cm.as_ref().expect("built"));
        let n = normal_approximation(&t, c, d)?;
        write_normal(&mut w, c, &n)?;
        na = Some(n);
    }
    if cmd.needs_stripes() {
        let s = stripe_cylinders(&t, dec.as_ref().expect("refined"))?;
        write_stripes(&mut w, &s)?;
        st = Some(s);
    }

    let mut reports = Vec::new();
    if matches!(cmd, Command::Verify | Command::Report) {
        let (d, v, c, n, s) = (
            dec.as_ref().expect("refined"),
            val.as_ref().expect("validated"),
            cm.as_ref().expect("built"),
            na.as_ref().expect("normal"),
            st.as_ref().expect("stripes"),
        );
        reports.push(whitney_report(v));
        reports.push(cm_report(&t, d, c)?);
        reports.push(normal_report(n));
        reports.push(separation_check(&t, d, c, n)?);
        reports.push(splitting_check(&t, d, c, n)?);
        reports.push(tilting_check(&t, d)?);
        reports.push(stripes_report(t.q, s));
        let dg = &cfg.diag;
        reports.push(harmonic_decay_check(&dg.harmonic_dims, dg.harmonic_degree, dg.harmonic_samples, d.params.delta2, dg.seed));
        reports.push(interpolation_check(&dg.interp_dims, dg.interp_samples, d.params.kappa, dg.seed));
        summary.failed_rows = Some(failing_rows(&reports));
        if cmd == Command::Verify {
            w.write_json("verify.json", &reports)?;
            w.write("verify.txt", reports_text(&reports).as_bytes())?;
        } else {
            let (text, tables) = fitted_tables(&reports);
            w.write_json("report.json", &tables)?;
            w.write("report.txt", text.as_bytes())?;
        }
    }
    let exit_code = exit_status(cmd, &reports, summary.whitney_valid);

    let manifest = Manifest {
        command: cmd.name().to_string(),
        config_sha256: cfg.sha256.clone(),
        scenario: spec.clone(),
        params: cfg.params.clone(),
        seed: cfg.diag.seed,
        artifacts: w.entries().to_vec(),
        summary,
    };
    let mut text = serde_json::to_string_pretty(&manifest).map_err(|e| CliError::Runtime(e.to_string()))?;
    text.push('\n');
    write_atomic(&w.dir().join("manifest.json"), text.as_bytes())?;
    Ok(Outcome {
        exit_code,
        manifest,
        current: t,
        decomposition: dec,
        validation: val,
        center_manifold: cm,
        normal: na,
        stripes: st,
        reports,
    })
}
