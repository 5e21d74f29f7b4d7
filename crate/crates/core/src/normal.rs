//! Projection onto the center manifold and the normal approximation.

use crate::current::SheetCurrent;
use crate::error::{Error, Result};
use crate::interp::{whitney_region, CenterManifold};
use crate::qvalued::{eta, g_dist, sep_to_mean, QPoint};
use crate::whitney::{Bbox, DyadicCube, WhitneyDecomposition};
use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::Serialize;

/// Foot point of a projection onto `M`.
#[derive(Clone, Debug)]
pub struct Projection {
    /// Base coordinates of the foot point.
    pub y: Vec<f64>,
    pub foot: DVector<f64>,
    pub offset: DVector<f64>,
    pub iterations: usize,
}

fn orth_residual(cm: &CenterManifold, map: &crate::grid::SampledMap, x: &DVector<f64>, y: &[f64]) -> Option<DVector<f64>> {
    let (m, n) = (cm.m, cm.n);
    let (v, j) = map.eval_jet(y)?;
    let mut r = DVector::zeros(m);
    for a in 0..m {
        let mut s = x[a] - y[a];
        for c in 0..n {
            s += j[c * m + a] * (x[m + c] - v[c]);
        }
        r[a] = s;
    }
    Some(r)
}

/// Newton solve of `(x − Φ(y)) ⊥ T_{Φ(y)}M`, starting below `x`.
pub fn project(cm: &CenterManifold, x: &DVector<f64>) -> Result<Projection> {
    let map = cm.map();
    project_with(cm, &map, x)
}

pub fn project_with(cm: &CenterManifold, map: &crate::grid::SampledMap, x: &DVector<f64>) -> Result<Projection> {
    let m = cm.m;
    let mut y: Vec<f64> = x.as_slice()[..m].to_vec();
    let outside = |msg: String| Error::OutsideTube(msg);
    let fd = 1e-6;
    for it in 0..60 {
        let r = orth_residual(cm, map, x, &y).ok_or_else(|| outside(format!("foot point {y:?} left the grid")))?;
        if r.norm() <= 1e-13 * (1.0 + x.norm()) {
            let (v, _) = map.eval_jet(&y).expect("checked above");
            let foot = DVector::from_iterator(x.len(), y.iter().cloned().chain(v));
            let offset = x - &foot;
            if offset.norm() >= 1.0 {
                return Err(outside(format!("offset {:.3e} is not below 1", offset.norm())));
            }
            return Ok(Projection { y, foot, offset, iterations: it });
        }
        let mut jac = DMatrix::zeros(m, m);
        for a in 0..m {
            let mut yp = y.clone();
            yp[a] += fd;
            let mut ym = y.clone();
            ym[a] -= fd;
            let (rp, rm) = match (orth_residual(cm, map, x, &yp), orth_residual(cm, map, x, &ym)) {
                (Some(p), Some(q)) => (p, q),
                _ => return Err(outside(format!("foot point {y:?} at the grid edge"))),
            };
            jac.set_column(a, &((rp - rm) / (2.0 * fd)));
        }
        let step = jac
            .lu()
            .solve(&(-&r))
            .ok_or_else(|| outside(format!("orthogonality system singular at {y:?}: ambiguous foot point")))?;
        let mut t = 1.0;
        let mut moved = false;
        for _ in 0..20 {
            let cand: Vec<f64> = y.iter().zip(step.iter()).map(|(a, s)| a + t * s).collect();
            if let Some(rc) = orth_residual(cm, map, x, &cand) {
                if rc.norm() < r.norm() {
                    y = cand;
                    moved = true;
                    break;
                }
            }
            t *= 0.5;
        }
        if !moved {
            break;
        }
    }
    Err(outside(format!("projection of {:?} did not converge", x.as_slice())))
}

/// Statistics of `N` on one Whitney region.
#[derive(Clone, Debug, Serialize)]
pub struct RegionStats {
    pub cube: DyadicCube,
    pub ell: f64,
    pub nodes: usize,
    pub lip: f64,
    pub c0: f64,
    pub non_contact_measure: f64,
    pub dirichlet: f64,
    pub eta_l1: f64,
    /// `Lip / (m0^{γ₂} ℓ^{γ₂})`.
    pub fit_lip: f64,
    /// `‖N‖_{C⁰} / (m0^{1/2m} ℓ^{1+β₂})`.
    pub fit_c0: f64,
    /// `|L∖K| / (m0^{1+γ₂} ℓ^{m+2+γ₂})`.
    pub fit_err: f64,
    /// `∫|DN|² / (m0 ℓ^{m+2−2δ₂})`.
    pub fit_dir: f64,
    /// Constant of the average estimate with `a = 1`.
    pub fit_avg: f64,
}

#[derive(Clone, Debug, Default, Serialize)]
pub struct GlobalStats {
    pub lip: f64,
    pub c0: f64,
    pub non_contact_measure: f64,
    pub dirichlet: f64,
    pub fit_lip: f64,
    pub fit_c0: f64,
    pub fit_err: f64,
    pub fit_dir: f64,
}

/// The multivalued normal field over `Φ([−7/2, 7/2]^m)`.
#[derive(Clone, Debug)]
pub struct NormalApprox {
    pub q: usize,
    pub d: usize,
    /// Core-lattice nodes inside `[−7/2, 7/2]^m`.
    pub nodes: Vec<usize>,
    /// Ambient offsets `N_i`, `q * d` per entry of `nodes`.
    pub offsets: Vec<f64>,
    pub in_k: Vec<bool>,
    pub disc_radius: f64,
    /// Half the smallest positive sheet gap is below the disc radius.
    pub disc_clip_flag: bool,
    pub extended_nodes: usize,
    pub max_orthogonality: f64,
    pub max_sigma_defect: f64,
    pub max_reconstruction: f64,
    /// `max G(N, Q⟦0⟧)` over nodes of the contact set.
    pub contact_max: f64,
    pub contact_nodes: usize,
    pub max_eta: f64,
    pub min_sep_to_mean: f64,
    pub regions: Vec<RegionStats>,
    pub global: GlobalStats,
}

impl NormalApprox {
    pub fn offset(&self, k: usize) -> QPoint {
        let s = self.q * self.d;
        QPoint { q: self.q, k: self.d, pts: self.offsets[k * s..(k + 1) * s].to_vec() }
    }
}

struct NodeResult {
    offsets: Vec<f64>,
    ok: bool,
    orth: f64,
    sigma: f64,
    recon: f64,
}

fn slice_node(t: &SheetCurrent, cm: &CenterManifold, node: usize, radius: f64) -> Result<NodeResult> {
    let d = t.d();
    let x = cm.point(node);
    let tan = cm.tangent(node)?;
    let comp = tan.complement();
    let q = t.q;
    match t.slice_fiber_with(&x, &tan, &comp) {
        Ok(s) => {
            let mut offsets = Vec::with_capacity(q * d);
            let mut ok = true;
            let mut orth: f64 = 0.0;
            let mut sigma: f64 = 0.0;
            let mut recon: f64 = 0.0;
            for i in 0..q {
                let v = comp.basis() * DVector::from_column_slice(s.coords.point(i));
                if v.norm() >= radius {
                    ok = false;
                }
                let ip = tan.basis().transpose() * &v;
                orth = orth.max(ip.amax() / (1.0 + v.norm()));
                let hit = &x + &v;
                sigma = sigma.max(t.ambient.defect(hit.as_slice()));
                recon = recon.max((&hit - &s.points[i]).norm());
                offsets.extend(v.iter());
            }
            Ok(NodeResult { offsets, ok, orth, sigma, recon })
        }
        Err(Error::FiberEscape(_)) | Err(Error::FiberTangency(_)) | Err(Error::UnmatchedFiber(_)) => {
            Ok(NodeResult { offsets: vec![0.0; q * d], ok: false, orth: 0.0, sigma: 0.0, recon: 0.0 })
        }
        Err(e) => Err(e),
    }
}

/// Slice the current along the normal spaces of `M` at every lattice node
/// of `[−7/2, 7/2]^m`; nodes where slicing fails copy a nearby success.
pub fn normal_approximation(t: &SheetCurrent, cm: &CenterManifold, dec: &WhitneyDecomposition) -> Result<NormalApprox> {
    let (m, q, d) = (t.m, t.q, t.d());
    let grid = &cm.grid;
    let clip = Bbox { lo: vec![-3.5; m], hi: vec![3.5; m] };
    let nodes = crate::interp::nodes_in_box(grid, &clip);
    let radius = 1.0;
    let results: Vec<NodeResult> =
        nodes.par_iter().map(|&node| slice_node(t, cm, node, radius)).collect::<Result<Vec<_>>>()?;
    let mut offsets = Vec::with_capacity(nodes.len() * q * d);
    let mut in_k = Vec::with_capacity(nodes.len());
    let (mut orth, mut sigma, mut recon): (f64, f64, f64) = (0.0, 0.0, 0.0);
    for r in &results {
        offsets.extend_from_slice(&r.offsets);
        in_k.push(r.ok);
        if r.ok {
            orth = orth.max(r.orth);
            sigma = sigma.max(r.sigma);
            recon = recon.max(r.recon);
        }
    }
    let ok_pos: Vec<usize> = (0..nodes.len()).filter(|&k| in_k[k]).collect();
    if ok_pos.is_empty() {
        return Err(Error::FiberEscape("no normal fiber meets the current".into()));
    }
    let coords: Vec<Vec<f64>> = nodes.iter().map(|&n| grid.coord(n)).collect();
    let s = q * d;
    // Breadth-first sweep from K over lattice neighbours: each node outside
    // K copies the value of the K node that reaches it first.
    let mut pos = std::collections::HashMap::with_capacity(nodes.len());
    for (k, &n) in nodes.iter().enumerate() {
        pos.insert(n, k);
    }
    let strides = grid.strides();
    let mut source: Vec<usize> = (0..nodes.len()).map(|k| if in_k[k] { k } else { usize::MAX }).collect();
    let mut queue: std::collections::VecDeque<usize> = ok_pos.iter().copied().collect();
    while let Some(k) = queue.pop_front() {
        let n = nodes[k];
        let mi = grid.multi(n);
        for a in 0..m {
            let mut nbrs = Vec::with_capacity(2);
            if mi[a] > 0 {
                nbrs.push(n - strides[a]);
            }
            if mi[a] + 1 < grid.counts[a] {
                nbrs.push(n + strides[a]);
            }
            for nb in nbrs {
                if let Some(&kb) = pos.get(&nb) {
                    if source[kb] == usize::MAX {
                        source[kb] = source[k];
                        queue.push_back(kb);
                    }
                }
            }
        }
    }
    let mut extended = 0;
    for k in 0..nodes.len() {
        if in_k[k] {
            continue;
        }
        extended += 1;
        let src = offsets[source[k] * s..(source[k] + 1) * s].to_vec();
        offsets[k * s..(k + 1) * s].copy_from_slice(&src);
    }
    let mut min_gap = f64::INFINITY;
    let mut max_eta: f64 = 0.0;
    let mut min_sep = f64::INFINITY;
    for k in 0..nodes.len() {
        let p = QPoint { q, k: d, pts: offsets[k * s..(k + 1) * s].to_vec() };
        for i in 0..q {
            for j in i + 1..q {
                let g: f64 = (0..d).map(|c| (p.point(i)[c] - p.point(j)[c]).powi(2)).sum::<f64>().sqrt();
                if g > 1e-12 {
                    min_gap = min_gap.min(g);
                }
            }
        }
        max_eta = max_eta.max(eta(&p).iter().map(|v| v * v).sum::<f64>().sqrt());
        min_sep = min_sep.min(sep_to_mean(&p));
    }
    let mut na = NormalApprox {
        q,
        d,
        nodes,
        offsets,
        in_k,
        disc_radius: radius,
        disc_clip_flag: 0.5 * min_gap < radius,
        extended_nodes: extended,
        max_orthogonality: orth,
        max_sigma_defect: sigma,
        max_reconstruction: recon,
        contact_max: 0.0,
        contact_nodes: 0,
        max_eta,
        min_sep_to_mean: min_sep,
        regions: Vec::new(),
        global: GlobalStats::default(),
    };
    let gamma = dec.gamma_boxes();
    let zero = QPoint::repeated(q, &vec![0.0; d]);
    for k in 0..na.nodes.len() {
        if gamma.iter().any(|b| b.contains(&coords[k])) {
            na.contact_nodes += 1;
            na.contact_max = na.contact_max.max(g_dist(&na.offset(k), &zero)?);
        }
    }
    na.compute_stats(t, cm, dec)?;
    Ok(na)
}

impl NormalApprox {
    fn stats_on(&self, cm: &CenterManifold, members: &[bool], sep_exp: f64) -> Result<(f64, f64, f64, f64, f64, f64)> {
        let grid = &cm.grid;
        let m = cm.m;
        let h = grid.h;
        let vol = h.powi(m as i32);
        let strides = grid.strides();
        let mut pos = vec![usize::MAX; grid.len()];
        for (k, &n) in self.nodes.iter().enumerate() {
            pos[n] = k;
        }
        let (mut lip, mut c0, mut bad, mut dir, mut eta_l1, mut sep_term): (f64, f64, f64, f64, f64, f64) =
            (0.0, 0.0, 0.0, 0.0, 0.0, 0.0);
        for (k, &n) in self.nodes.iter().enumerate() {
            if !members[k] {
                continue;
            }
            let p = self.offset(k);
            for i in 0..self.q {
                c0 = c0.max(p.point(i).iter().map(|v| v * v).sum::<f64>().sqrt());
            }
            if !self.in_k[k] {
                bad += vol;
            }
            eta_l1 += vol * eta(&p).iter().map(|v| v * v).sum::<f64>().sqrt();
            sep_term += vol * sep_to_mean(&p).powf(sep_exp);
            let mi = grid.multi(n);
            for a in 0..m {
                if mi[a] + 1 >= grid.counts[a] {
                    continue;
                }
                let nb = pos[n + strides[a]];
                if nb == usize::MAX || !members[nb] {
                    continue;
                }
                let gd = g_dist(&p, &self.offset(nb))?;
                let dist = (cm.point(n + strides[a]) - cm.point(n)).norm();
                lip = lip.max(gd / dist);
                dir += vol * (gd / h).powi(2);
            }
        }
        Ok((lip, c0, bad, dir, eta_l1, sep_term))
    }

    fn compute_stats(&mut self, t: &SheetCurrent, cm: &CenterManifold, dec: &WhitneyDecomposition) -> Result<()> {
        let m = t.m;
        let p = &dec.params;
        let m0 = dec.m0;
        let mut pos = vec![usize::MAX; cm.grid.len()];
        for (k, &n) in self.nodes.iter().enumerate() {
            pos[n] = k;
        }
        let mut regions = Vec::new();
        for r in dec.w_records() {
            let wr = whitney_region(&r.cube, &cm.grid);
            if wr.nodes.is_empty() {
                continue;
            }
            let mut members = vec![false; self.nodes.len()];
            for &n in &wr.nodes {
                if pos[n] != usize::MAX {
                    members[pos[n]] = true;
                }
            }
            let (lip, c0, bad, dir, eta_l1, sep_term) = self.stats_on(cm, &members, 2.0 + p.gamma2)?;
            let ell = r.cube.ell();
            let area = wr.nodes.len() as f64 * cm.grid.h.powi(m as i32);
            let mf = m as f64;
            let avg_bound = m0 * (ell.powf(3.0 + p.beta2 / 3.0) + ell.powf(2.0 + p.gamma2 / 2.0)) * area + sep_term;
            regions.push(RegionStats {
                cube: r.cube.clone(),
                ell,
                nodes: wr.nodes.len(),
                lip,
                c0,
                non_contact_measure: bad,
                dirichlet: dir,
                eta_l1,
                fit_lip: lip / (m0.powf(p.gamma2) * ell.powf(p.gamma2)),
                fit_c0: c0 / (m0.powf(1.0 / (2.0 * mf)) * ell.powf(1.0 + p.beta2)),
                fit_err: bad / (m0.powf(1.0 + p.gamma2) * ell.powf(mf + 2.0 + p.gamma2)),
                fit_dir: dir / (m0 * ell.powf(mf + 2.0 - 2.0 * p.delta2)),
                fit_avg: if avg_bound > 0.0 { eta_l1 / avg_bound } else { 0.0 },
            });
        }
        self.regions = regions;
        let all = vec![true; self.nodes.len()];
        let (lip, c0, bad, dir, _, _) = self.stats_on(cm, &all, 2.0 + p.gamma2)?;
        self.global = GlobalStats {
            lip,
            c0,
            non_contact_measure: bad,
            dirichlet: dir,
            fit_lip: lip / m0.powf(p.gamma2),
            fit_c0: c0 / m0.powf(1.0 / (2.0 * m as f64)),
            fit_err: bad / m0.powf(1.0 + p.gamma2),
            fit_dir: dir / m0,
        };
        Ok(())
    }
}

impl NormalApprox {
    /// Per-node `|DN|²` (forward G-differences) and `|N|²`, indexed like `nodes`.
    pub fn energy_densities(&self, cm: &CenterManifold) -> Result<(Vec<f64>, Vec<f64>)> {
        let grid = &cm.grid;
        let h = grid.h;
        let strides = grid.strides();
        let mut pos = vec![usize::MAX; grid.len()];
        for (k, &n) in self.nodes.iter().enumerate() {
            pos[n] = k;
        }
        let mut dn2 = vec![0.0; self.nodes.len()];
        let mut n2 = vec![0.0; self.nodes.len()];
        for (k, &n) in self.nodes.iter().enumerate() {
            let p = self.offset(k);
            n2[k] = p.pts.iter().map(|v| v * v).sum();
            let mi = grid.multi(n);
            for a in 0..cm.m {
                let nb = if mi[a] + 1 < grid.counts[a] { pos[n + strides[a]] } else { usize::MAX };
                let nb = if nb == usize::MAX && mi[a] > 0 { pos[n - strides[a]] } else { nb };
                if nb != usize::MAX {
                    dn2[k] += (g_dist(&p, &self.offset(nb))? / h).powi(2);
                }
            }
        }
        Ok((dn2, n2))
    }
}
