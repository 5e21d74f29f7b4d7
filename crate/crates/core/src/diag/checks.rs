//! Checks that read a Whitney decomposition, the center manifold and the
//! normal approximation.

use super::stripes::stripes;
use super::{fitted, Report};
use crate::current::{RegionSpec, SheetCurrent};
use crate::error::Result;
use crate::geom::plane_distance;
use crate::interp::{nodes_in_box, regression_slope, whitney_region, CenterManifold};
use crate::normal::NormalApprox;
use crate::qvalued::sep_to_mean;
use crate::whitney::{Bbox, CubeRecord, DyadicCube, StopReason, WhitneyDecomposition};
use nalgebra::DVector;
use std::collections::HashMap;

fn node_positions(na: &NormalApprox, len: usize) -> Vec<usize> {
    let mut pos = vec![usize::MAX; len];
    for (k, &n) in na.nodes.iter().enumerate() {
        pos[n] = k;
    }
    pos
}

/// Pairs `(L, H)` with `L` height-stopped, `H` neighbor-stopped,
/// `ℓ(H) ≤ ℓ(L)/2` and `L ∩ H ≠ ∅`.
pub fn s2_violations(dec: &WhitneyDecomposition) -> usize {
    let w_n: Vec<&CubeRecord> = dec.by_reason(StopReason::Neighbor).collect();
    dec.by_reason(StopReason::Height)
        .map(|l| w_n.iter().filter(|h| h.cube.ell() <= 0.5 * l.cube.ell() && h.cube.touches(&l.cube)).count())
        .sum()
}

/// Separation of height-stopped cubes: the combinatorial half-size rule,
/// the lower bound on `G(N, Q⟦η∘N⟧)` over the Whitney region, and a stripe
/// count proxy for the density statement.
pub fn separation_check(t: &SheetCurrent, dec: &WhitneyDecomposition, cm: &CenterManifold, na: &NormalApprox) -> Result<Report> {
    let mut rep = Report::new("separation");
    let p = &dec.params;
    let m = dec.m;
    let w_h: Vec<&CubeRecord> = dec.by_reason(StopReason::Height).collect();
    rep.info("separation.height_cubes", w_h.len() as f64, "cubes stopped by the height rule");
    if w_h.is_empty() {
        rep.assert("separation.vacuous", true, 0.0, None, "no height-stopped cubes");
        return Ok(rep);
    }
    let s2 = s2_violations(dec);
    rep.assert(
        "separation.s2.small_neighbor_contacts",
        s2 == 0,
        s2 as f64,
        Some(0.0),
        "neighbor-stopped cubes of at most half the side meeting a height-stopped cube",
    );
    let pos = node_positions(na, cm.grid.len());
    let mut min_margin = f64::INFINITY;
    let mut min_rel = f64::INFINITY;
    let mut s3_fail = 0;
    let mut sampled = 0;
    for l in &w_h {
        let thr = 0.25 * p.c_h * dec.m0.powf(1.0 / (2.0 * m as f64)) * l.cube.ell().powf(1.0 + p.beta2);
        let region = whitney_region(&l.cube, &cm.grid);
        let mut lo = f64::INFINITY;
        for n in region.nodes {
            if pos[n] == usize::MAX {
                continue;
            }
            lo = lo.min(sep_to_mean(&na.offset(pos[n])));
        }
        if lo.is_finite() {
            sampled += 1;
            min_margin = min_margin.min(lo - thr);
            min_rel = min_rel.min(lo / thr);
            if lo < thr {
                s3_fail += 1;
            }
        }
    }
    rep.assert(
        "separation.s3.min_margin",
        s3_fail == 0,
        if sampled > 0 { min_margin } else { 0.0 },
        Some(0.0),
        format!("min over regions of sep_to_mean(N) - C_h m0^(1/2m) l^(1+beta2)/4; {sampled} regions sampled"),
    );
    rep.info("separation.s3.min_ratio", if sampled > 0 { min_rel } else { 0.0 }, "sep_to_mean(N) over the threshold");
    let mut single = 0;
    for l in &w_h {
        let center = DVector::from_column_slice(&l.p_l);
        let cyl = RegionSpec::Cylinder { center, radius: l.ball_radius, axis: l.pi_l.clone() };
        match stripes(t, &cyl, &l.pi_l, p) {
            Ok(sd) if sd.k() >= 2 => {}
            _ => single += 1,
        }
    }
    rep.info(
        "separation.s1.single_stripe_cubes",
        single as f64,
        "proxy: height-stopped cubes whose ball shows fewer than two stripes (density is not computable on graphs)",
    );
    Ok(rep)
}

/// Splitting ratios of excess-stopped cubes. The left inequality is the
/// excess stopping rule itself and is asserted exactly; the two ratio
/// constants are fitted.
pub fn splitting_check(
    _t: &SheetCurrent,
    dec: &WhitneyDecomposition,
    cm: &CenterManifold,
    na: &NormalApprox,
) -> Result<Report> {
    let mut rep = Report::new("splitting");
    let p = &dec.params;
    let m = dec.m;
    let w_e: Vec<&CubeRecord> = dec.by_reason(StopReason::Excess).collect();
    rep.info("splitting.excess_cubes", w_e.len() as f64, "cubes stopped by the excess rule");
    if w_e.is_empty() {
        rep.assert("splitting.vacuous", true, 0.0, None, "no excess-stopped cubes");
        return Ok(rep);
    }
    let (dn2, n2) = na.energy_densities(cm)?;
    let pos = node_positions(na, cm.grid.len());
    let h = cm.grid.h;
    let vol = h.powi(m as i32);
    let sum_over = |nodes: &[usize], dens: &[f64]| -> f64 {
        nodes.iter().filter(|&&n| pos[n] != usize::MAX).map(|&n| dens[pos[n]] * vol).sum()
    };
    let mut left_fail = 0;
    let mut left_min = f64::INFINITY;
    let mut c_split: f64 = 0.0;
    let mut c3: f64 = 0.0;
    let mut rows = 0;
    for l in &w_e {
        let ell = l.cube.ell();
        let a = p.c_e * dec.m0 * ell.powf(m as f64 + 2.0 - 2.0 * p.delta2);
        let b = ell.powi(m as i32) * l.excess;
        left_min = left_min.min(fitted(b, a));
        if a > b {
            left_fail += 1;
        }
        let in_l = nodes_in_box(&cm.grid, &l.cube.bbox());
        let dir_l = sum_over(&in_l, &dn2);
        let rad = (0.25 * ell).max(1.5 * h);
        let reach = 4.0 * (m as f64).sqrt() * ell;
        let bb = l.cube.bbox();
        let steps = (reach / ell).ceil() as i64 + 1;
        let c = l.cube.center();
        let mut offs = vec![-steps; m];
        loop {
            let q: Vec<f64> = c.iter().zip(&offs).map(|(x, o)| x + *o as f64 * ell).collect();
            let qb = Bbox { lo: q.clone(), hi: q.clone() };
            let admissible = bb.dist(&qb) <= reach && q.iter().all(|x| x.abs() + rad <= 3.5);
            if admissible {
                let omega_box = Bbox { lo: q.iter().map(|x| x - rad).collect(), hi: q.iter().map(|x| x + rad).collect() };
                let nodes: Vec<usize> = nodes_in_box(&cm.grid, &omega_box)
                    .into_iter()
                    .filter(|&n| {
                        let y = cm.grid.coord(n);
                        y.iter().zip(&q).map(|(u, v)| (u - v).powi(2)).sum::<f64>() < rad * rad
                    })
                    .collect();
                let dir = sum_over(&nodes, &dn2);
                let l2 = sum_over(&nodes, &n2) / (ell * ell);
                c_split = c_split.max(fitted(b, dir));
                c3 = c3.max(fitted(dir_l, l2));
                rows += 1;
            }
            let mut a = 0;
            loop {
                if a == m {
                    break;
                }
                offs[a] += 1;
                if offs[a] <= steps {
                    break;
                }
                offs[a] = -steps;
                a += 1;
            }
            if a == m {
                break;
            }
        }
    }
    rep.assert(
        "splitting.left.stopping_rule",
        left_fail == 0,
        left_min,
        Some(1.0),
        "min over excess-stopped cubes of l^m E(T,B_L) / (C_e m0 l^(m+2-2 delta2))",
    );
    rep.info("splitting.points", rows as f64, "admissible (cube, q) pairs");
    rep.info("splitting.fit.excess_over_dirichlet", c_split, "max l^m E(T,B_L) / int_Omega |DN|^2");
    rep.info("splitting.fit.dirichlet_over_l2", c3, "max int_L |DN|^2 / (l^-2 int_Omega |N|^2)");
    Ok(rep)
}

/// Tilting of reference planes along ancestor chains and across adjacent
/// cubes, ball inclusions and height containment.
pub fn tilting_check(_t: &SheetCurrent, dec: &WhitneyDecomposition) -> Result<Report> {
    let mut rep = Report::new("tilting");
    let p = &dec.params;
    let m = dec.m;
    let sm = (m as f64).sqrt();
    let m0 = dec.m0;
    let by_cube: HashMap<&DyadicCube, &CubeRecord> = dec.records.iter().map(|r| (&r.cube, r)).collect();
    let scale = |ell: f64| m0.sqrt() * ell.powf(1.0 - p.delta2);
    let mut incl_fail = 0;
    let mut outer_fail = 0;
    let mut pairs = 0;
    let mut c_anc: f64 = 0.0;
    let mut c_adj: f64 = 0.0;
    let mut c_hat: f64 = 0.0;
    let mut c_height: f64 = 0.0;
    let dist = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    for h in &dec.records {
        let norm: f64 = h.p_l.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm + h.ball_radius > 5.0 * sm + 1e-12 {
            outer_fail += 1;
        }
        c_hat = c_hat.max(fitted(plane_distance(&h.pi_hat, &h.pi_l)?, scale(h.cube.ell())));
        c_height = c_height.max(fitted(
            h.height,
            m0.powf(1.0 / (2.0 * m as f64)) * h.cube.ell().powf(1.0 + p.beta2),
        ));
        let mut anc = h.cube.father();
        while let Some(a) = anc {
            if let Some(l) = by_cube.get(&a) {
                pairs += 1;
                if dist(&h.p_l, &l.p_l) + h.ball_radius > l.ball_radius + 1e-12 {
                    incl_fail += 1;
                }
                c_anc = c_anc.max(fitted(plane_distance(&h.pi_l, &l.pi_l)?, scale(l.cube.ell())));
            }
            anc = a.father();
        }
        for nb in adjacent(&h.cube) {
            if let Some(l) = by_cube.get(&nb) {
                let big = if l.cube.level <= h.cube.level { l } else { h };
                c_adj = c_adj.max(fitted(plane_distance(&h.pi_l, &l.pi_l)?, scale(big.cube.ell())));
            }
        }
    }
    rep.info("tilting.balls.nested", incl_fail as f64, format!("ancestor pairs with B_H not inside B_L, of {pairs}"));
    rep.assert("tilting.balls.outer", outer_fail == 0, outer_fail as f64, Some(0.0), "cubes with B_L not inside B_{5 sqrt m}");
    rep.info("tilting.fit.ancestor_planes", c_anc, "max |pi_H - pi_L| / (m0^(1/2) l(L)^(1-delta2))");
    rep.info("tilting.fit.adjacent_planes", c_adj, "max over same- and half-size neighbors");
    rep.info("tilting.fit.optimal_vs_reference", c_hat, "max |pi_hat_L - pi_L| / (m0^(1/2) l^(1-delta2))");
    rep.info("tilting.fit.height", c_height, "max h(T, B_L) / (m0^(1/2m) l^(1+beta2))");
    let pts: Vec<(f64, f64)> = dec
        .father_tilts()
        .into_iter()
        .filter(|&(_, d)| d > 1e-14)
        .map(|(ell, d)| (ell.ln(), d.ln()))
        .collect();
    let levels: std::collections::BTreeSet<i64> = pts.iter().map(|(l, _)| (l * 1e6).round() as i64).collect();
    match regression_slope(&pts).filter(|_| levels.len() >= 2) {
        Some(s) => {
            let bound = 1.0 - p.delta2 - 0.2;
            rep.assert("tilting.father_slope", s >= bound, s, Some(bound), "log-log slope of |pi_H - pi_father| against l");
        }
        None => rep.info("tilting.father_slope", 0.0, "fewer than two levels with nonzero father tilt"),
    }
    Ok(rep)
}

/// Same-size neighbors and touching half-size cubes.
fn adjacent(c: &DyadicCube) -> Vec<DyadicCube> {
    let m = c.m();
    let mut out = Vec::new();
    let n = 3usize.pow(m as u32);
    let per = DyadicCube::per_axis(c.level);
    for k in 0..n {
        let mut rem = k;
        let mut idx = c.index.clone();
        let mut zero = true;
        for a in 0..m {
            let o = (rem % 3) as i64 - 1;
            rem /= 3;
            idx[a] += o;
            zero &= o == 0;
        }
        if idx.iter().any(|&i| i < 0 || i >= per) {
            continue;
        }
        let nb = DyadicCube::new(c.level, idx);
        for ch in nb.children() {
            if ch.touches(c) {
                out.push(ch);
            }
        }
        if !zero {
            out.push(nb);
        }
    }
    out
}
