//! Smoothing, interpolation and gluing: from a Whitney decomposition to
//! the center manifold.

use crate::current::{AmbientManifold, SheetCurrent, DOMAIN};
use crate::error::{Error, Result};
use crate::geom::{plane_distance, regraph, GraphPatch, Plane, RegraphOptions, RegraphStats};
use crate::grid::{GridSpec, SampledMap};
use crate::qvalued::{sep_to_mean, QField};
use crate::whitney::{Bbox, CubeRecord, DyadicCube, WhitneyDecomposition};
use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::Serialize;
use std::collections::HashMap;

fn bump(t: f64) -> f64 {
    if t < 1.0 {
        (-1.0 / (1.0 - t * t)).exp()
    } else {
        0.0
    }
}

/// Radial kernel `ρ = a·β(|x|) + b·β(2|x|)` realised on a lattice at scale
/// `ℓ`, with unit mass and vanishing second moment on that lattice.
#[derive(Clone, Debug, Serialize)]
pub struct Mollifier {
    pub m: usize,
    pub h: f64,
    pub ell: f64,
    pub a: f64,
    pub b: f64,
    /// Lattice offsets (in nodes) with nonzero weight.
    pub offsets: Vec<Vec<i64>>,
    /// `h^m ρ_ℓ(k h)` per offset.
    pub weights: Vec<f64>,
    /// Discrete `∫ρ`.
    pub mass: f64,
    /// Discrete `∫|x|²ρ` at unit scale.
    pub second_moment: f64,
    /// Kernel reach in nodes.
    pub reach: usize,
}

impl Mollifier {
    pub fn build(m: usize, h: f64, ell: f64) -> Result<Mollifier> {
        if !(h > 0.0 && ell > 0.0) {
            return Err(Error::Singular("mollifier needs positive spacing and scale".into()));
        }
        let reach = (ell / h).ceil() as i64;
        let side = (2 * reach + 1) as usize;
        let vol = (h / ell).powi(m as i32);
        let mut offsets = Vec::new();
        let mut ys = Vec::new();
        for t in 0..side.pow(m as u32) {
            let mut rem = t;
            let mut k = vec![0i64; m];
            for a in (0..m).rev() {
                k[a] = (rem % side) as i64 - reach;
                rem /= side;
            }
            let y = (k.iter().map(|v| (v * v) as f64).sum::<f64>()).sqrt() * h / ell;
            if y < 1.0 {
                offsets.push(k);
                ys.push(y);
            }
        }
        let (mut a0, mut b0, mut a2, mut b2) = (0.0, 0.0, 0.0, 0.0);
        for &y in &ys {
            a0 += vol * bump(y);
            b0 += vol * bump(2.0 * y);
            a2 += vol * bump(y) * y * y;
            b2 += vol * bump(2.0 * y) * y * y;
        }
        let det = a0 * b2 - b0 * a2;
        if det.abs() <= 1e-14 * (a0 * b2).abs().max((b0 * a2).abs()) {
            return Err(Error::Singular(format!("mollifier moment system is singular at h = {h}, ℓ = {ell}")));
        }
        let a = b2 / det;
        let b = -a2 / det;
        let weights: Vec<f64> = ys.iter().map(|&y| vol * (a * bump(y) + b * bump(2.0 * y))).collect();
        let mass = weights.iter().sum();
        let second_moment = weights.iter().zip(&ys).map(|(w, y)| w * y * y).sum();
        Ok(Mollifier { m, h, ell, a, b, offsets, weights, mass, second_moment, reach: reach as usize })
    }

    /// Convolve a `k`-component field on `grid`; the result lives on the
    /// nodes whose kernel support stays inside the grid.
    pub fn convolve(&self, map: &SampledMap) -> Result<SampledMap> {
        let g = &map.grid;
        let m = g.dim();
        let r = self.reach;
        if g.counts.iter().any(|&c| c <= 2 * r) {
            return Err(Error::Precondition("convolution window smaller than the kernel".into()));
        }
        let out = GridSpec::new(
            g.lo.iter().map(|v| v + r as f64 * g.h).collect(),
            g.h,
            g.counts.iter().map(|c| c - 2 * r).collect(),
        );
        let strides = g.strides();
        let flat_offsets: Vec<isize> = self
            .offsets
            .iter()
            .map(|k| k.iter().zip(&strides).map(|(a, s)| *a as isize * *s as isize).sum())
            .collect();
        let k = map.k;
        let mut values = vec![0.0; out.len() * k];
        for i in 0..out.len() {
            let mi = out.multi(i);
            let src: usize = (0..m).map(|a| (mi[a] + r) * strides[a]).sum();
            for (w, off) in self.weights.iter().zip(&flat_offsets) {
                let node = (src as isize + off) as usize;
                for c in 0..k {
                    values[i * k + c] += w * map.values[node * k + c];
                }
            }
        }
        Ok(SampledMap::new(out, k, values))
    }
}

/// Tensor cutoff: one on `[-1,1]^m`, zero outside `[-17/16,17/16]^m`,
/// quintic smoothstep in between.
#[derive(Clone, Copy, Debug, Default)]
pub struct Cutoff;

impl Cutoff {
    pub const OUTER: f64 = 17.0 / 16.0;

    pub fn profile(t: f64) -> f64 {
        let t = t.abs();
        if t <= 1.0 {
            1.0
        } else if t >= Self::OUTER {
            0.0
        } else {
            let u = (t - 1.0) / (Self::OUTER - 1.0);
            1.0 - u * u * u * (10.0 - 15.0 * u + 6.0 * u * u)
        }
    }

    pub fn value(&self, u: &[f64]) -> f64 {
        u.iter().map(|&t| Self::profile(t)).product()
    }

    /// `ϑ_L(y) = ϑ((y − x_L)/ℓ(L))`.
    pub fn for_cube(&self, cube: &DyadicCube, y: &[f64]) -> f64 {
        let c = cube.center();
        let l = cube.ell();
        y.iter().zip(&c).map(|(a, b)| Self::profile((a - b) / l)).product()
    }
}

/// Tilted lattice centred at the origin of a plane, with nodes at half-integer
/// multiples of `h`, `2K+2` per axis.
pub fn tilted_grid(m: usize, h: f64, half_width: f64) -> GridSpec {
    let k = (half_width / h).ceil() as usize;
    GridSpec::new(vec![-(k as f64 + 0.5) * h; m], h, vec![2 * k + 2; m])
}

/// Slice the current along `origin + π·x + π^⊥` at every node of `grid`.
/// Nodes whose base point lies outside `[-4,4]^m` and whose fiber cannot be
/// sliced take the value of a nearby sliced node.
pub fn pi_approximation(
    t: &SheetCurrent,
    origin: &DVector<f64>,
    pi: &Plane,
    comp: &Plane,
    grid: GridSpec,
) -> Result<QField> {
    let (q, n, m) = (t.q, t.n, grid.dim());
    let s = q * n;
    let mut values = vec![0.0; grid.len() * s];
    let mut done = vec![false; grid.len()];
    let mut x = vec![0.0; m];
    for i in 0..grid.len() {
        grid.coord_into(i, &mut x);
        let p = origin + pi.basis() * DVector::from_column_slice(&x);
        match t.slice_fiber_with(&p, pi, comp) {
            Ok(sl) => {
                values[i * s..(i + 1) * s].copy_from_slice(&sl.coords.pts);
                done[i] = true;
            }
            Err(e) => {
                if p.iter().take(m).all(|v| v.abs() <= crate::current::DOMAIN) {
                    return Err(Error::TiltTooLarge(format!(
                        "fiber over node {x:?} of the plane through {:?} does not meet every sheet once: {e}",
                        origin.as_slice()
                    )));
                }
            }
        }
    }
    if done.iter().all(|d| !d) {
        return Err(Error::TiltTooLarge(format!("no fiber of the plane through {:?} can be sliced", origin.as_slice())));
    }
    crate::geom::fill_from_neighbors(&grid, s, &mut values, &mut done);
    QField::new(grid, q, n, values)
}

/// `ĥ = (η∘f) ∗ ρ_ℓ`.
pub fn smoothed_average(f: &QField, moll: &Mollifier) -> Result<SampledMap> {
    let avg = SampledMap::new(f.grid.clone(), f.k, f.eta_values());
    moll.convolve(&avg)
}

/// `h_L`: `ĥ` itself in flat ambient; otherwise its tangential part lifted
/// through the local graph of `Σ` at the origin.
pub fn tilted_interpolant(
    ambient: &AmbientManifold,
    origin: &DVector<f64>,
    pi: &Plane,
    comp: &Plane,
    hhat: SampledMap,
) -> Result<GraphPatch> {
    if ambient.is_flat() {
        return GraphPatch::new(origin.clone(), pi.clone(), comp.clone(), hhat);
    }
    let tan = ambient.tangent_plane(origin.as_slice());
    let varpi = tan.complement();
    let kappa_proj = tan.projector() - pi.projector();
    let grid = hhat.grid.clone();
    let k = hhat.k;
    let mut values = Vec::with_capacity(hhat.values.len());
    let mut x = vec![0.0; grid.dim()];
    for i in 0..grid.len() {
        grid.coord_into(i, &mut x);
        let bx = pi.basis() * DVector::from_column_slice(&x);
        let v = comp.basis() * DVector::from_column_slice(hhat.node(i));
        let xi = &bx + &kappa_proj * v;
        let p = ambient.local_graph(origin, &varpi, &xi)?;
        let out = comp.basis().transpose() * (p - origin - bx);
        values.extend(out.iter());
    }
    GraphPatch::new(origin.clone(), pi.clone(), comp.clone(), SampledMap::new(grid, k, values))
}

/// `g_L`: the graph of `h_L` written over `π₀` on `out_grid`.
pub fn base_interpolant(h: &GraphPatch, out_grid: GridSpec) -> Result<(GraphPatch, RegraphStats)> {
    let d = h.origin.len();
    let m = h.domain.dim();
    let opts = RegraphOptions { strict: false, ..Default::default() };
    regraph(h, &Plane::standard(d, m), &DVector::zeros(d), out_grid, &opts)
}

/// Measured quantities of one interpolating patch.
#[derive(Clone, Debug, Default, Serialize)]
pub struct PatchStats {
    pub tilt_to_base: f64,
    pub lipschitz: f64,
    pub regraph_iterations: usize,
    /// Base-lattice nodes where the regraph was extended instead of inverted.
    pub regraph_filled: usize,
    /// Largest `G(f, Q⟦η∘f⟧)` over the tilted window.
    pub max_sep_to_mean: f64,
    /// `‖η∘f − ĥ‖_∞` over the smoothed window.
    pub smoothing_change: f64,
}

/// `g_L` and `ϑ_L` on the base-lattice nodes of the cutoff support of `L`.
#[derive(Clone, Debug)]
pub struct Patch {
    pub cube: DyadicCube,
    /// First core-lattice multi-index of the node box.
    pub lo: Vec<usize>,
    pub counts: Vec<usize>,
    pub g: Vec<f64>,
    pub theta: Vec<f64>,
    pub stats: PatchStats,
}

/// Core-lattice index box strictly inside the `17/16` dilate of a cube.
fn cutoff_box(t: &SheetCurrent, cube: &DyadicCube) -> (Vec<usize>, Vec<usize>) {
    let h = t.h();
    let c = cube.center();
    let reach = Cutoff::OUTER * cube.ell();
    let mut lo = Vec::new();
    let mut counts = Vec::new();
    for &ca in c.iter() {
        // node i sits at -4 + (i + 1/2) h
        let first = (((ca - reach + DOMAIN) / h - 0.5).floor() as i64 + 1).max(0) as usize;
        let last = (((ca + reach + DOMAIN) / h - 0.5).ceil() as i64 - 1).min(t.cells as i64 - 1) as usize;
        lo.push(first);
        counts.push(last + 1 - first);
    }
    (lo, counts)
}

const MAX_WIDEN: f64 = 4.0;

struct Attempt {
    base: Result<(GraphPatch, RegraphStats)>,
    out_grid: GridSpec,
    lo: Vec<usize>,
    counts: Vec<usize>,
    max_sep: f64,
    change: f64,
}

fn patch_attempt(t: &SheetCurrent, rec: &CubeRecord, moll: &Mollifier, widen: f64) -> Result<Attempt> {
    let m = t.m;
    let h = t.h();
    let ell = rec.cube.ell();
    let pi = &rec.pi_l;
    let comp = pi.complement();
    let origin = DVector::from_column_slice(&rec.p_l);
    let w_smooth = widen * 1.1 * (m as f64).sqrt() * Cutoff::OUTER * ell + 3.0 * h;
    let w_f = w_smooth + moll.reach as f64 * h + h;
    let fgrid = tilted_grid(m, h, w_f);
    let f = pi_approximation(t, &origin, pi, &comp, fgrid)?;
    let mut max_sep: f64 = 0.0;
    for i in 0..f.grid.len() {
        max_sep = max_sep.max(sep_to_mean(&f.qpoint(i)));
    }
    let hhat = smoothed_average(&f, moll)?;
    let eta = f.eta_values();
    let mut change: f64 = 0.0;
    let r = moll.reach;
    for i in 0..hhat.grid.len() {
        let mi = hhat.grid.multi(i);
        let src = f.grid.flat(&mi.iter().map(|v| v + r).collect::<Vec<_>>());
        for c in 0..f.k {
            change = change.max((hhat.values[i * f.k + c] - eta[src * f.k + c]).abs());
        }
    }
    let tilted = tilted_interpolant(&t.ambient, &origin, pi, &comp, hhat)?;
    let (lo, counts) = cutoff_box(t, &rec.cube);
    let out_grid = GridSpec::new(
        lo.iter().map(|&i| -DOMAIN + (i as f64 + 0.5) * h).collect(),
        h,
        counts.clone(),
    );
    let base = base_interpolant(&tilted, out_grid.clone());
    Ok(Attempt { base, out_grid, lo, counts, max_sep, change })
}

/// Build `g_L` for one cube.
pub fn build_patch(t: &SheetCurrent, rec: &CubeRecord, molls: &HashMap<u32, Mollifier>) -> Result<Patch> {
    let m = t.m;
    let moll = &molls[&rec.cube.level];
    // The tilted window is widened when the base lattice reaches past it,
    // which happens for steep planes through tall points. The attempt with
    // the fewest extended nodes is kept.
    let mut widen = 1.0;
    let mut best: Option<(Attempt, GraphPatch, RegraphStats)> = None;
    let mut last_err = None;
    while widen <= MAX_WIDEN {
        match patch_attempt(t, rec, moll, widen) {
            Ok(mut a) => match std::mem::replace(&mut a.base, Err(Error::Singular(String::new()))) {
                Ok((base, rs)) => {
                    let done = rs.filled == 0;
                    if best.as_ref().map_or(true, |b| rs.filled < b.2.filled) {
                        best = Some((a, base, rs));
                    }
                    if done {
                        break;
                    }
                }
                Err(e) => last_err = Some(e),
            },
            Err(e) => last_err = Some(e),
        }
        widen *= 2.0;
    }
    let (a, base, rs) = match best {
        Some(b) => b,
        None => return Err(last_err.expect("at least one attempt")),
    };
    let Attempt { out_grid, lo, counts, max_sep, change, .. } = a;
    let mut theta = Vec::with_capacity(out_grid.len());
    let mut y = vec![0.0; m];
    for i in 0..out_grid.len() {
        out_grid.coord_into(i, &mut y);
        theta.push(Cutoff.for_cube(&rec.cube, &y));
    }
    Ok(Patch {
        cube: rec.cube.clone(),
        lo,
        counts,
        g: base.map.values,
        theta,
        stats: PatchStats {
            tilt_to_base: rs.plane_tilt,
            lipschitz: rs.lipschitz,
            regraph_iterations: rs.max_iterations,
            regraph_filled: rs.filled,
            max_sep_to_mean: max_sep,
            smoothing_change: change,
        },
    })
}

/// `φ_j = Σ ϑ_L g_L / Σ ϑ_L` on the core lattice, re-lifted onto `Σ`.
/// Patches are summed in the order given.
pub fn glue(t: &SheetCurrent, patches: &[&Patch]) -> Result<Vec<f64>> {
    let n = t.n;
    let grid = t.core_grid();
    let len = grid.len();
    let mut num = vec![0.0; len * n];
    let mut den = vec![0.0; len];
    let m = t.m;
    for p in patches {
        let local = GridSpec::new(vec![0.0; m], 1.0, p.counts.clone());
        for i in 0..local.len() {
            let w = p.theta[i];
            if w <= 0.0 {
                continue;
            }
            let mi = local.multi(i);
            let gi: Vec<usize> = mi.iter().zip(&p.lo).map(|(a, b)| a + b).collect();
            let node = grid.flat(&gi);
            den[node] += w;
            for c in 0..n {
                num[node * n + c] += w * p.g[i * n + c];
            }
        }
    }
    let mut phi = vec![0.0; len * n];
    let mut y = vec![0.0; m];
    for node in 0..len {
        if den[node] <= 0.0 {
            grid.coord_into(node, &mut y);
            return Err(Error::Decomposition(format!("no cutoff is positive at node {y:?}")));
        }
        for c in 0..n {
            phi[node * n + c] = num[node * n + c] / den[node];
        }
        if let Some(psi) = &t.ambient.psi {
            grid.coord_into(node, &mut y);
            let z: Vec<f64> = y.iter().chain(&phi[node * n..node * n + n - 1]).cloned().collect();
            phi[node * n + n - 1] = psi.eval(&z).0;
        }
    }
    Ok(phi)
}

#[derive(Clone, Debug, Default, Serialize)]
pub struct StabilizationReport {
    pub cubes_checked: usize,
    pub pairs_checked: usize,
    pub max_defect: f64,
}

#[derive(Clone, Debug, Default, Serialize)]
pub struct DerivativeNorms {
    pub c0: f64,
    pub d1: f64,
    pub d2: f64,
    pub d3: f64,
    /// Hölder quotient of third differences over separations `h, 2h, 4h, 8h`.
    pub d3_holder: f64,
    pub kappa: f64,
}

/// Relative size of a level difference that is treated as rounding noise.
pub const CAUCHY_NOISE: f64 = 1e-12;

/// The glued map `φ` with per-level snapshots and measured properties.
#[derive(Clone, Debug)]
pub struct CenterManifold {
    pub m: usize,
    pub n: usize,
    pub grid: GridSpec,
    pub phi: Vec<f64>,
    /// `(j, φ_j)`.
    pub snapshots: Vec<(u32, Vec<f64>)>,
    /// `(j, sup|φ_j − φ_{j+1}|)`.
    pub cauchy: Vec<(u32, f64)>,
    pub stabilization: StabilizationReport,
    /// Row-major `n x m` Jacobians per node.
    pub dphi: Vec<f64>,
    pub norms: DerivativeNorms,
    pub ambient: AmbientManifold,
    pub graph_mode_defect: f64,
    pub patch_stats: Vec<(DyadicCube, PatchStats)>,
}

/// Slope of the least-squares line through `(x, y)`.
pub fn regression_slope(pts: &[(f64, f64)]) -> Option<f64> {
    if pts.len() < 2 {
        return None;
    }
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    (sxx > 0.0).then(|| sxy / sxx)
}

fn central_diff(grid: &GridSpec, k: usize, vals: &[f64]) -> Vec<f64> {
    let m = grid.dim();
    let strides = grid.strides();
    let h = grid.h;
    let mut out = vec![0.0; grid.len() * k * m];
    for i in 0..grid.len() {
        let mi = grid.multi(i);
        for a in 0..m {
            let (lo, hi, span) = if mi[a] == 0 {
                (i, i + strides[a], h)
            } else if mi[a] + 1 == grid.counts[a] {
                (i - strides[a], i, h)
            } else {
                (i - strides[a], i + strides[a], 2.0 * h)
            };
            for c in 0..k {
                out[(i * k + c) * m + a] = (vals[hi * k + c] - vals[lo * k + c]) / span;
            }
        }
    }
    out
}

fn sup(v: &[f64]) -> f64 {
    v.iter().fold(0.0f64, |a, b| a.max(b.abs()))
}

impl CenterManifold {
    /// Wrap a sampled map on the core lattice (no construction history).
    pub fn from_graph(grid: GridSpec, n: usize, phi: Vec<f64>, ambient: AmbientManifold, kappa: f64) -> Self {
        let m = grid.dim();
        let dphi = central_diff(&grid, n, &phi);
        let mut cm = CenterManifold {
            m,
            n,
            grid,
            phi,
            snapshots: Vec::new(),
            cauchy: Vec::new(),
            stabilization: StabilizationReport::default(),
            dphi,
            norms: DerivativeNorms { kappa, ..Default::default() },
            ambient,
            graph_mode_defect: 0.0,
            patch_stats: Vec::new(),
        };
        cm.compute_norms();
        cm
    }

    pub fn map(&self) -> SampledMap {
        SampledMap::new(self.grid.clone(), self.n, self.phi.clone())
    }

    pub fn value(&self, node: usize) -> &[f64] {
        &self.phi[node * self.n..(node + 1) * self.n]
    }

    pub fn jac(&self, node: usize) -> &[f64] {
        let s = self.n * self.m;
        &self.dphi[node * s..(node + 1) * s]
    }

    /// `Φ(y) = (y, φ(y))` at a node.
    pub fn point(&self, node: usize) -> DVector<f64> {
        let y = self.grid.coord(node);
        DVector::from_iterator(self.m + self.n, y.into_iter().chain(self.value(node).iter().cloned()))
    }

    /// Tangent plane `T_{Φ(y)}M` at a node.
    pub fn tangent(&self, node: usize) -> Result<Plane> {
        let (m, n) = (self.m, self.n);
        let j = self.jac(node);
        let mut cols = DMatrix::zeros(m + n, m);
        for a in 0..m {
            cols[(a, a)] = 1.0;
            for c in 0..n {
                cols[(m + c, a)] = j[c * m + a];
            }
        }
        Plane::from_spanning(&cols)
    }

    /// Level differences at or below this bound are rounding noise.
    pub fn cauchy_floor(&self) -> f64 {
        CAUCHY_NOISE * self.phi.iter().fold(1.0f64, |a, v| a.max(v.abs()))
    }

    /// Slope of `log₂ sup|φ_j − φ_{j+1}|` against `j`, over differences
    /// above [`Self::cauchy_floor`].
    pub fn cauchy_slope(&self) -> Option<f64> {
        let floor = self.cauchy_floor();
        let pts: Vec<(f64, f64)> =
            self.cauchy.iter().filter(|(_, v)| *v > floor).map(|(j, v)| (*j as f64, v.log2())).collect();
        regression_slope(&pts)
    }

    /// True when every level difference is rounding noise, i.e. the level
    /// sequence is constant from the coarsest snapshot on.
    pub fn cauchy_settled(&self) -> bool {
        let floor = self.cauchy_floor();
        !self.cauchy.is_empty() && self.cauchy.iter().all(|(_, v)| *v <= floor)
    }

    fn compute_norms(&mut self) {
        let (m, n) = (self.m, self.n);
        let d2 = central_diff(&self.grid, n * m, &self.dphi);
        let d3 = central_diff(&self.grid, n * m * m, &d2);
        let k3 = n * m * m * m;
        let kappa = self.norms.kappa;
        let strides = self.grid.strides();
        let mut holder: f64 = 0.0;
        for i in 0..self.grid.len() {
            let mi = self.grid.multi(i);
            for a in 0..m {
                for s in [1usize, 2, 4, 8] {
                    if mi[a] + s >= self.grid.counts[a] {
                        continue;
                    }
                    let j = i + s * strides[a];
                    let dist = (s as f64 * self.grid.h).powf(kappa);
                    for c in 0..k3 {
                        holder = holder.max((d3[j * k3 + c] - d3[i * k3 + c]).abs() / dist);
                    }
                }
            }
        }
        self.norms.c0 = sup(&self.phi);
        self.norms.d1 = sup(&self.dphi);
        self.norms.d2 = sup(&d2);
        self.norms.d3 = sup(&d3);
        self.norms.d3_holder = holder;
    }
}

/// Build patches for every recorded cube, glue at every level and measure
/// the Cauchy and stabilisation properties.
pub fn build_center_manifold(t: &SheetCurrent, dec: &WhitneyDecomposition) -> Result<CenterManifold> {
    let m = t.m;
    let h = t.h();
    let mut molls = HashMap::new();
    for r in &dec.records {
        if let std::collections::hash_map::Entry::Vacant(e) = molls.entry(r.cube.level) {
            e.insert(Mollifier::build(m, h, r.cube.ell())?);
        }
    }
    let patches: Vec<Patch> =
        dec.records.par_iter().map(|r| build_patch(t, r, &molls)).collect::<Result<Vec<_>>>()?;
    let n0 = dec.params.n0;
    let mut snapshots: Vec<(u32, Vec<f64>)> = Vec::new();
    for j in n0..=dec.j_max {
        let active: Vec<&Patch> = patches
            .iter()
            .zip(&dec.records)
            .filter(|(_, r)| (r.cube.level == j && !r.stop.is_stopped()) || (r.cube.level <= j && r.stop.is_stopped()))
            .map(|(p, _)| p)
            .collect();
        snapshots.push((j, glue(t, &active)?));
    }
    let cauchy: Vec<(u32, f64)> = snapshots
        .windows(2)
        .map(|w| (w[0].0, w[0].1.iter().zip(&w[1].1).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max)))
        .collect();
    let grid = t.core_grid();
    let n = t.n;
    let mut stab = StabilizationReport::default();
    for r in dec.w_records() {
        let i = r.cube.level;
        let levels: Vec<&(u32, Vec<f64>)> = snapshots.iter().filter(|(j, _)| *j >= i + 2).collect();
        if levels.len() < 2 {
            continue;
        }
        stab.cubes_checked += 1;
        let region = r.cube.dilate(9.0 / 8.0);
        let nodes = nodes_in_box(&grid, &region);
        for a in 0..levels.len() {
            for b in a + 1..levels.len() {
                stab.pairs_checked += 1;
                for &node in &nodes {
                    for c in 0..n {
                        let dlt = (levels[a].1[node * n + c] - levels[b].1[node * n + c]).abs();
                        stab.max_defect = stab.max_defect.max(dlt);
                    }
                }
            }
        }
    }
    let phi = snapshots.last().expect("at least one level").1.clone();
    let mut graph_defect: f64 = 0.0;
    if let Some(psi) = &t.ambient.psi {
        let mut y = vec![0.0; m];
        for node in 0..grid.len() {
            grid.coord_into(node, &mut y);
            let z: Vec<f64> = y.iter().chain(&phi[node * n..node * n + n - 1]).cloned().collect();
            graph_defect = graph_defect.max((phi[node * n + n - 1] - psi.eval(&z).0).abs());
        }
    }
    let mut cm = CenterManifold::from_graph(grid, n, phi, t.ambient.clone(), dec.params.kappa);
    cm.snapshots = snapshots;
    cm.cauchy = cauchy;
    cm.stabilization = stab;
    cm.graph_mode_defect = graph_defect;
    cm.patch_stats = patches.into_iter().map(|p| (p.cube, p.stats)).collect();
    Ok(cm)
}

/// Core-lattice nodes inside a closed box.
pub fn nodes_in_box(grid: &GridSpec, b: &Bbox) -> Vec<usize> {
    let m = grid.dim();
    let mut lo = vec![0usize; m];
    let mut hi = vec![0usize; m];
    for a in 0..m {
        let f = ((b.lo[a] - grid.lo[a]) / grid.h).ceil().max(0.0) as usize;
        let l = ((b.hi[a] - grid.lo[a]) / grid.h).floor();
        if l < 0.0 {
            return Vec::new();
        }
        lo[a] = f;
        hi[a] = (l as usize + 1).min(grid.counts[a]);
        if lo[a] >= hi[a] {
            return Vec::new();
        }
    }
    let sub = GridSpec::new(vec![0.0; m], 1.0, (0..m).map(|a| hi[a] - lo[a]).collect());
    (0..sub.len())
        .map(|i| {
            let mi = sub.multi(i);
            grid.flat(&mi.iter().zip(&lo).map(|(a, b)| a + b).collect::<Vec<_>>())
        })
        .collect()
}

/// Footprint of a Whitney region on the base and the lattice nodes it covers.
#[derive(Clone, Debug, Serialize)]
pub struct WhitneyRegion {
    pub cube: DyadicCube,
    pub footprint: Option<Bbox>,
    #[serde(skip)]
    pub nodes: Vec<usize>,
}

/// `L ↦ Φ(H ∩ [−7/2, 7/2]^m)`, `H` the `17/16` dilate of `L`.
pub fn whitney_region(cube: &DyadicCube, grid: &GridSpec) -> WhitneyRegion {
    let m = cube.m();
    let clip = Bbox { lo: vec![-3.5; m], hi: vec![3.5; m] };
    let fp = cube.dilate(Cutoff::OUTER).intersect(&clip);
    let empty = fp.lo.iter().zip(&fp.hi).any(|(a, b)| b <= a);
    if empty {
        return WhitneyRegion { cube: cube.clone(), footprint: None, nodes: Vec::new() };
    }
    let nodes = nodes_in_box(grid, &fp);
    WhitneyRegion { cube: cube.clone(), footprint: Some(fp), nodes }
}

pub fn whitney_regions(dec: &WhitneyDecomposition, cm: &CenterManifold) -> Vec<WhitneyRegion> {
    dec.w_records().map(|r| whitney_region(&r.cube, &cm.grid)).collect()
}

/// Distance of the patch planes from `π₀`, largest over all patches.
pub fn max_patch_tilt(dec: &WhitneyDecomposition) -> f64 {
    let std = Plane::standard(dec.d, dec.m);
    dec.records.iter().filter_map(|r| plane_distance(&r.pi_l, &std).ok()).fold(0.0, f64::max)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mollifier_moments() {
        for m in 1..=3 {
            let k = Mollifier::build(m, 1.0 / 32.0, 1.0 / 4.0).unwrap();
            assert!((k.mass - 1.0).abs() <= 1e-10);
            assert!(k.second_moment.abs() <= 1e-10);
            assert!(k.weights.iter().any(|w| *w < 0.0));
        }
    }

    #[test]
    fn cutoff_profile() {
        assert_eq!(Cutoff::profile(0.99), 1.0);
        assert_eq!(Cutoff::profile(1.07), 0.0);
        let v = Cutoff::profile(1.03);
        assert!(v > 0.0 && v < 1.0);
    }

    #[test]
    fn affine_fields_are_fixed_by_convolution() {
        let k = Mollifier::build(2, 0.1, 0.5).unwrap();
        let g = GridSpec::new(vec![-2.0, -2.0], 0.1, vec![41, 41]);
        let f = SampledMap::from_fn(g, 1, |x| vec![0.3 + 1.7 * x[0] - 0.4 * x[1]]);
        let out = k.convolve(&f).unwrap();
        let mut x = vec![0.0; 2];
        for i in 0..out.grid.len() {
            out.grid.coord_into(i, &mut x);
            assert!((out.values[i] - (0.3 + 1.7 * x[0] - 0.4 * x[1])).abs() < 1e-12);
        }
    }
}
