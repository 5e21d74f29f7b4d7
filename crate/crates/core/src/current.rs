//! Sheet currents: Q-valued graphs over `[-4,4]^m ⊂ π₀` sampled on a
//! cell-centred lattice, with the quantities the construction is driven by
//! (mass, excess, height, optimal planes, slicing and rescaling).

use crate::error::{Error, Result};
use crate::geom::{tilt_defect, Plane};
use crate::grid::GridSpec;
use crate::qvalued::{matching, point_set_diameter, QPoint};
use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::Serialize;

/// Half-width of the sampled base domain.
pub const DOMAIN: f64 = 4.0;
/// Width of the ghost margin sampled beyond `[-4,4]^m`.
pub const PAD_WIDTH: f64 = 1.0;
/// Extra pad per unit of the largest sheet height.
pub const PAD_PER_HEIGHT: f64 = 1.25;
/// Floor applied to `m0` and to excess values used as scales.
pub const EXCESS_FLOOR: f64 = 1e-14;

/// Volume of the unit ball of `R^m`.
pub fn omega(m: usize) -> f64 {
    use std::f64::consts::PI;
    match m {
        0 => 1.0,
        1 => 2.0,
        2 => PI,
        3 => 4.0 * PI / 3.0,
        _ => PI.powf(m as f64 / 2.0) / gamma_half_int(m + 2),
    }
}

/// `Γ(k/2)` for positive integers `k`.
pub fn gamma_half_int(k: usize) -> f64 {
    if k == 1 {
        return std::f64::consts::PI.sqrt();
    }
    if k == 2 {
        return 1.0;
    }
    let x = k as f64 / 2.0 - 1.0;
    x * gamma_half_int(k - 2)
}

/// Scalar map `Ψ` whose graph is the ambient manifold `Σ`.
#[derive(Clone, Debug, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PsiMap {
    /// `Ψ(z) = a·z + c`.
    Linear { a: Vec<f64>, c: f64 },
    /// `Ψ(z) = (κ/2)|z|²` on `R^dim`.
    Quadratic { curvature: f64, dim: usize },
    /// `Ψ_r(z) = Ψ(r z) / r`.
    Scaled { inner: Box<PsiMap>, r: f64 },
}

impl PsiMap {
    /// Value and gradient at `z`.
    pub fn eval(&self, z: &[f64]) -> (f64, Vec<f64>) {
        match self {
            PsiMap::Linear { a, c } => (a.iter().zip(z).map(|(x, y)| x * y).sum::<f64>() + c, a.clone()),
            PsiMap::Quadratic { curvature, .. } => {
                let v = 0.5 * curvature * z.iter().map(|x| x * x).sum::<f64>();
                (v, z.iter().map(|x| curvature * x).collect())
            }
            PsiMap::Scaled { inner, r } => {
                let zz: Vec<f64> = z.iter().map(|x| x * r).collect();
                let (v, g) = inner.eval(&zz);
                (v / r, g)
            }
        }
    }

    /// Hessian at `z` (row-major).
    pub fn hessian(&self, z: &[f64]) -> Vec<f64> {
        let d = z.len();
        match self {
            PsiMap::Linear { .. } => vec![0.0; d * d],
            PsiMap::Quadratic { curvature, .. } => {
                let mut h = vec![0.0; d * d];
                for i in 0..d {
                    h[i * d + i] = *curvature;
                }
                h
            }
            PsiMap::Scaled { inner, r } => {
                let zz: Vec<f64> = z.iter().map(|x| x * r).collect();
                inner.hessian(&zz).into_iter().map(|v| v * r).collect()
            }
        }
    }
}

/// The ambient manifold: all of `R^{m+n}`, or the graph of `Ψ` over the
/// first `m + n̄` coordinates (then `l = 1`).
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct AmbientManifold {
    pub n_bar: usize,
    pub psi: Option<PsiMap>,
}

impl AmbientManifold {
    pub fn flat(n_bar: usize) -> Self {
        AmbientManifold { n_bar, psi: None }
    }

    pub fn graph(n_bar: usize, psi: PsiMap) -> Self {
        AmbientManifold { n_bar, psi: Some(psi) }
    }

    pub fn is_flat(&self) -> bool {
        self.psi.is_none()
    }

    pub fn l(&self) -> usize {
        usize::from(self.psi.is_some())
    }

    pub fn n(&self) -> usize {
        self.n_bar + self.l()
    }

    pub fn mode_name(&self) -> &'static str {
        if self.is_flat() {
            "flat"
        } else {
            "graph"
        }
    }

    /// Heights `(ū, Ψ(x, ū))` of the point of `Σ` over `(x, ū)`.
    pub fn lift(&self, x: &[f64], ubar: &[f64]) -> Vec<f64> {
        let mut out = ubar.to_vec();
        if let Some(psi) = &self.psi {
            let z: Vec<f64> = x.iter().chain(ubar).cloned().collect();
            out.push(psi.eval(&z).0);
        }
        out
    }

    /// `|z_last − Ψ(z_rest)|` for an ambient point.
    pub fn defect(&self, p: &[f64]) -> f64 {
        match &self.psi {
            None => 0.0,
            Some(psi) => {
                let d = p.len();
                (p[d - 1] - psi.eval(&p[..d - 1]).0).abs()
            }
        }
    }

    /// Tangent space `T_pΣ` (the whole space in flat mode).
    pub fn tangent_plane(&self, p: &[f64]) -> Plane {
        let d = p.len();
        match &self.psi {
            None => Plane::standard(d, d),
            Some(psi) => {
                let (_, g) = psi.eval(&p[..d - 1]);
                let mut cols = DMatrix::zeros(d, d - 1);
                for i in 0..d - 1 {
                    cols[(i, i)] = 1.0;
                    cols[(d - 1, i)] = g[i];
                }
                Plane::from_spanning(&cols).expect("graph tangent space has full rank")
            }
        }
    }

    /// Point `p + ξ + ζ` of `Σ` with `ζ` normal to `T_pΣ` (the local graph map `Ψ_p`).
    pub fn local_graph(&self, p: &DVector<f64>, normal: &Plane, xi: &DVector<f64>) -> Result<DVector<f64>> {
        let Some(psi) = &self.psi else {
            return Ok(p + xi);
        };
        let d = p.len();
        let nu = normal.basis().column(0).into_owned();
        let base = p + xi;
        let mut zeta = 0.0;
        for _ in 0..50 {
            let x = &base + &nu * zeta;
            let (v, g) = psi.eval(&x.as_slice()[..d - 1]);
            let r = x[d - 1] - v;
            if r.abs() < 1e-14 * (1.0 + x.norm()) {
                return Ok(x);
            }
            let dr = nu[d - 1] - (0..d - 1).map(|i| g[i] * nu[i]).sum::<f64>();
            if dr.abs() < 1e-12 {
                return Err(Error::Singular("local graph of Σ is degenerate".into()));
            }
            zeta -= r / dr;
        }
        Err(Error::Singular("local graph of Σ: Newton did not converge".into()))
    }

    /// Orthogonal projection of an `m`-plane onto `T_pΣ`, re-orthonormalised.
    pub fn project_plane(&self, p: &[f64], plane: &Plane) -> Result<Plane> {
        if self.is_flat() {
            return Ok(plane.clone());
        }
        let t = self.tangent_plane(p);
        Plane::from_spanning(&(t.projector() * plane.basis()))
    }
}

/// Region of integration.
#[derive(Clone, Debug)]
pub enum RegionSpec {
    /// `B_r(center)` in `R^{m+n}`.
    Ball { center: DVector<f64>, radius: f64 },
    /// `C_r(center, axis) = center + B_r(0, axis) + axis^⊥`.
    Cylinder { center: DVector<f64>, radius: f64, axis: Plane },
}

impl RegionSpec {
    pub fn ball(center: DVector<f64>, radius: f64) -> Self {
        RegionSpec::Ball { center, radius }
    }

    pub fn radius(&self) -> f64 {
        match self {
            RegionSpec::Ball { radius, .. } | RegionSpec::Cylinder { radius, .. } => *radius,
        }
    }

    pub fn center(&self) -> &DVector<f64> {
        match self {
            RegionSpec::Ball { center, .. } | RegionSpec::Cylinder { center, .. } => center,
        }
    }

    pub fn contains(&self, p: &DVector<f64>) -> bool {
        match self {
            RegionSpec::Ball { center, radius } => (p - center).norm() < *radius,
            RegionSpec::Cylinder { center, radius, axis } => axis.coords(&(p - center)).norm() < *radius,
        }
    }

    fn signed_depth(&self, p: &DVector<f64>) -> f64 {
        match self {
            RegionSpec::Ball { center, radius } => radius - (p - center).norm(),
            RegionSpec::Cylinder { center, radius, axis } => radius - axis.coords(&(p - center)).norm(),
        }
    }
}

/// One quadrature point: `(lattice node, sheet, weight)`; the weight
/// includes the cell volume and the fraction of the cell inside the region.
#[derive(Clone, Copy, Debug)]
pub struct QuadPt {
    pub node: usize,
    pub sheet: usize,
    pub w: f64,
}

#[derive(Clone, Debug)]
pub struct Quadrature {
    pub pts: Vec<QuadPt>,
    /// The region reaches outside the sampled domain `[-4,4]^m`.
    pub clipped: bool,
}

/// Excess-optimising plane with its excess and height.
#[derive(Clone, Debug)]
pub struct OptimalPlane {
    pub plane: Plane,
    pub excess: f64,
    pub height: f64,
    pub clipped: bool,
}

/// Intersection of a fiber line `X + π^⊥` with the current.
#[derive(Clone, Debug)]
pub struct Slice {
    /// Base point of the hit on each sheet.
    pub base: Vec<Vec<f64>>,
    /// Ambient hit points.
    pub points: Vec<DVector<f64>>,
    /// `π^⊥`-coordinates of `hit − X`, as a Q-point.
    pub coords: QPoint,
}

/// Interpolated sheets near a point: values `q*n` and Jacobians `q*n*m`.
#[derive(Clone, Debug)]
pub struct LocalFiber {
    pub values: Vec<f64>,
    pub jac: Vec<f64>,
}

/// Multivalued graph over `[-4,4]^m` standing in for an area-minimising current.
#[derive(Clone, Debug)]
pub struct SheetCurrent {
    pub m: usize,
    pub n: usize,
    pub q: usize,
    /// Cells per axis over the core domain.
    pub cells: usize,
    /// Ghost nodes on each side.
    pub pad: usize,
    pub lattice: GridSpec,
    /// Heights, `lattice.len() * q * n`, node-major.
    pub fibers: Vec<f64>,
    /// Matched-difference Jacobians, `lattice.len() * q * n * m`.
    pub jac: Vec<f64>,
    /// Nodes whose difference stencil shows a kink at grid scale.
    pub branch_flags: Vec<bool>,
    pub ambient: AmbientManifold,
    /// `E(T, B_{6√m})` at its optimal plane.
    pub m0_excess: f64,
    /// `sup‖DΨ‖` over the support.
    pub c_sigma: f64,
    /// `max{c(Σ)², E(T, B_{6√m}), 1e-14}`.
    pub m0: f64,
}

fn det_small(m: usize, a: &[f64]) -> f64 {
    match m {
        1 => a[0],
        2 => a[0] * a[3] - a[1] * a[2],
        3 => {
            a[0] * (a[4] * a[8] - a[5] * a[7]) - a[1] * (a[3] * a[8] - a[5] * a[6])
                + a[2] * (a[3] * a[7] - a[4] * a[6])
        }
        _ => DMatrix::from_row_slice(m, m, a).determinant(),
    }
}

fn adj_small(m: usize, a: &[f64]) -> Vec<f64> {
    match m {
        1 => vec![1.0],
        2 => vec![a[3], -a[1], -a[2], a[0]],
        3 => vec![
            a[4] * a[8] - a[5] * a[7],
            a[2] * a[7] - a[1] * a[8],
            a[1] * a[5] - a[2] * a[4],
            a[5] * a[6] - a[3] * a[8],
            a[0] * a[8] - a[2] * a[6],
            a[2] * a[3] - a[0] * a[5],
            a[3] * a[7] - a[4] * a[6],
            a[1] * a[6] - a[0] * a[7],
            a[0] * a[4] - a[1] * a[3],
        ],
        _ => {
            let mm = DMatrix::from_row_slice(m, m, a);
            let d = mm.determinant();
            let inv = mm.try_inverse().unwrap_or_else(|| DMatrix::zeros(m, m));
            (inv * d).transpose().as_slice().to_vec()
        }
    }
}

/// Exact area of `[x0,x1]×[y0,y1] ∩ {x²+y² < R²}`.
pub fn disk_rect_area(x0: f64, x1: f64, y0: f64, y1: f64, r: f64) -> f64 {
    let x0 = x0.max(-r);
    let x1 = x1.min(r);
    if x1 <= x0 || y1 <= y0 {
        return 0.0;
    }
    let prim = |x: f64| 0.5 * (x * (r * r - x * x).max(0.0).sqrt() + r * r * (x / r).clamp(-1.0, 1.0).asin());
    let mut bps = vec![x0, x1];
    for y in [y0, y1] {
        if y.abs() < r {
            let s = (r * r - y * y).sqrt();
            for b in [-s, s] {
                if b > x0 && b < x1 {
                    bps.push(b);
                }
            }
        }
    }
    bps.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let mut area = 0.0;
    for w in bps.windows(2) {
        let (a, b) = (w[0], w[1]);
        if b <= a {
            continue;
        }
        let mid = 0.5 * (a + b);
        let s = (r * r - mid * mid).max(0.0).sqrt();
        let upper_is_s = s < y1;
        let lower_is_s = -s > y0;
        let up = if upper_is_s { s } else { y1 };
        let lo = if lower_is_s { -s } else { y0 };
        if up <= lo {
            continue;
        }
        let int_s = prim(b) - prim(a);
        let len = b - a;
        let iu = if upper_is_s { int_s } else { y1 * len };
        let il = if lower_is_s { -int_s } else { y0 * len };
        area += iu - il;
    }
    area.max(0.0)
}

impl SheetCurrent {
    /// Sample a closed-form multivalued graph. `sampler(x)` returns the `q*n`
    /// heights of every sheet at `x` (sheet-major).
    pub fn from_sampler(
        m: usize,
        q: usize,
        cells: usize,
        ambient: AmbientManifold,
        sampler: impl Fn(&[f64]) -> Vec<f64>,
    ) -> Result<Self> {
        let n = ambient.n();
        let h = 2.0 * DOMAIN / cells as f64;
        // Tilted fibers through tall sheets leave the domain sideways, so the
        // pad grows with the largest height seen on a coarse probe.
        let probe = GridSpec::new(vec![-DOMAIN; m], DOMAIN / 8.0, vec![17; m]);
        let mut tallest: f64 = 0.0;
        let mut x = vec![0.0; m];
        for i in 0..probe.len() {
            probe.coord_into(i, &mut x);
            tallest = sampler(&x).iter().fold(tallest, |a, v| a.max(v.abs()));
        }
        let pad_width = PAD_WIDTH.max(PAD_PER_HEIGHT * tallest);
        let pad = (pad_width / h).ceil() as usize + 3;
        let lattice = GridSpec::new(vec![-DOMAIN - pad as f64 * h + 0.5 * h; m], h, vec![cells + 2 * pad; m]);
        let mut fibers = Vec::with_capacity(lattice.len() * q * n);
        let mut x = vec![0.0; m];
        for i in 0..lattice.len() {
            lattice.coord_into(i, &mut x);
            let v = sampler(&x);
            if v.len() != q * n {
                return Err(Error::Dimension(format!("sampler returned {} values, expected {}", v.len(), q * n)));
            }
            if v.iter().any(|z| !z.is_finite()) {
                return Err(Error::Scenario(format!("non-finite height at {x:?}")));
            }
            fibers.extend(v);
        }
        let mut cur = SheetCurrent {
            m,
            n,
            q,
            cells,
            pad,
            lattice,
            fibers,
            jac: Vec::new(),
            branch_flags: Vec::new(),
            ambient,
            m0_excess: 0.0,
            c_sigma: 0.0,
            m0: EXCESS_FLOOR,
        };
        cur.compute_jacobians();
        cur.compute_m0()?;
        Ok(cur)
    }

    pub fn d(&self) -> usize {
        self.m + self.n
    }

    pub fn h(&self) -> f64 {
        self.lattice.h
    }

    pub fn fiber(&self, node: usize) -> &[f64] {
        let s = self.q * self.n;
        &self.fibers[node * s..(node + 1) * s]
    }

    fn fiber_qp(&self, node: usize) -> QPoint {
        QPoint { q: self.q, k: self.n, pts: self.fiber(node).to_vec() }
    }

    pub fn node_jac(&self, node: usize) -> &[f64] {
        let s = self.q * self.n * self.m;
        &self.jac[node * s..(node + 1) * s]
    }

    pub fn is_core(&self, node: usize) -> bool {
        self.lattice.multi(node).iter().all(|&i| i >= self.pad && i < self.pad + self.cells)
    }

    /// Lattice index of the core node with core multi-index `c`.
    pub fn core_node(&self, c: &[usize]) -> usize {
        let full: Vec<usize> = c.iter().map(|i| i + self.pad).collect();
        self.lattice.flat(&full)
    }

    /// Lattice spec of the core nodes only.
    pub fn core_grid(&self) -> GridSpec {
        GridSpec::new(vec![-DOMAIN + 0.5 * self.h(); self.m], self.h(), vec![self.cells; self.m])
    }

    /// Ambient point of `sheet` at `node`.
    pub fn node_point(&self, node: usize, sheet: usize) -> DVector<f64> {
        let x = self.lattice.coord(node);
        let u = &self.fiber(node)[sheet * self.n..(sheet + 1) * self.n];
        DVector::from_iterator(self.d(), x.into_iter().chain(u.iter().cloned()))
    }

    /// `[I; Du]` for one sheet at a node.
    pub fn tangent_columns(&self, node: usize, sheet: usize) -> DMatrix<f64> {
        let (m, n) = (self.m, self.n);
        let j = &self.node_jac(node)[sheet * n * m..(sheet + 1) * n * m];
        let mut g = DMatrix::zeros(m + n, m);
        for a in 0..m {
            g[(a, a)] = 1.0;
        }
        for c in 0..n {
            for a in 0..m {
                g[(m + c, a)] = j[c * m + a];
            }
        }
        g
    }

    /// Area element `√det(I + DuᵀDu)`.
    pub fn area_element(&self, node: usize, sheet: usize) -> f64 {
        let g = self.tangent_columns(node, sheet);
        (g.transpose() * &g).determinant().max(0.0).sqrt()
    }

    fn compute_jacobians(&mut self) {
        let (m, n, q) = (self.m, self.n, self.q);
        let len = self.lattice.len();
        let strides = self.lattice.strides();
        let h = self.h();
        let mut jac = vec![0.0; len * q * n * m];
        let mut flags = vec![false; len];
        for i in 0..len {
            let mi = self.lattice.multi(i);
            let c = self.fiber_qp(i);
            for a in 0..m {
                let has_lo = mi[a] > 0;
                let has_hi = mi[a] + 1 < self.lattice.counts[a];
                let aligned = |other: usize, pred: &QPoint| -> Vec<f64> {
                    let o = self.fiber_qp(other);
                    let (_, perm) = matching(pred, &o).expect("fiber shapes agree");
                    let mut out = vec![0.0; q * n];
                    for s in 0..q {
                        out[s * n..(s + 1) * n].copy_from_slice(o.point(perm[s]));
                    }
                    out
                };
                let (lo, hi, span) = if has_lo && has_hi {
                    let r = aligned(i + strides[a], &c);
                    let pred: Vec<f64> = c.pts.iter().zip(&r).map(|(cv, rv)| 2.0 * cv - rv).collect();
                    let l = aligned(i - strides[a], &QPoint { q, k: n, pts: pred });
                    for s in 0..q * n {
                        let second = l[s] - 2.0 * c.pts[s] + r[s];
                        let first = (r[s] - c.pts[s]).abs().max((c.pts[s] - l[s]).abs());
                        if second.abs() > 0.5 * first + 1e-12 {
                            flags[i] = true;
                        }
                    }
                    (l, r, 2.0 * h)
                } else if has_hi {
                    (c.pts.clone(), aligned(i + strides[a], &c), h)
                } else {
                    (aligned(i - strides[a], &c), c.pts.clone(), h)
                };
                for s in 0..q {
                    for comp in 0..n {
                        let idx = s * n + comp;
                        jac[((i * q + s) * n + comp) * m + a] = (hi[idx] - lo[idx]) / span;
                    }
                }
            }
        }
        self.jac = jac;
        self.branch_flags = flags;
    }

    fn compute_m0(&mut self) -> Result<()> {
        let m = self.m;
        let ball = RegionSpec::ball(DVector::zeros(self.d()), 6.0 * (m as f64).sqrt());
        let opt = self.optimal_plane(&ball, 1e-9)?;
        self.m0_excess = opt.excess;
        if let Some(psi) = &self.ambient.psi {
            let mut best: f64 = 0.0;
            for node in 0..self.lattice.len() {
                if !self.is_core(node) {
                    continue;
                }
                for s in 0..self.q {
                    let p = self.node_point(node, s);
                    let (_, g) = psi.eval(&p.as_slice()[..self.d() - 1]);
                    best = best.max(g.iter().map(|v| v * v).sum::<f64>().sqrt());
                }
            }
            self.c_sigma = best;
        }
        self.m0 = (self.c_sigma * self.c_sigma).max(self.m0_excess).max(EXCESS_FLOOR);
        Ok(())
    }

    /// Count of core nodes flagged as lying near a branch locus.
    pub fn branch_node_count(&self) -> usize {
        (0..self.lattice.len()).filter(|&i| self.branch_flags[i] && self.is_core(i)).count()
    }

    /// Interpolate all sheets near `x`, matching every stencil node to the
    /// first-order prediction from the nearest node.
    pub fn local_fiber(&self, x: &[f64]) -> Result<LocalFiber> {
        let (m, n, q) = (self.m, self.n, self.q);
        if let Some(node) = self.lattice.nearest(x) {
            let h = self.h();
            let on_node = (0..m).all(|a| {
                let s = (x[a] - self.lattice.lo[a]) / h;
                (s - s.round()).abs() <= 1e-12
            });
            let mi = self.lattice.multi(node);
            let interior = (0..m).all(|a| mi[a] >= 1 && mi[a] + 2 < self.lattice.counts[a]);
            if on_node && interior {
                return Ok(LocalFiber { values: self.fiber(node).to_vec(), jac: self.node_jac(node).to_vec() });
            }
        }
        let st = self
            .lattice
            .stencil(x)
            .ok_or_else(|| Error::FiberEscape(format!("base point {x:?} outside the sampled lattice")))?;
        let refn = self.lattice.nearest(x).expect("stencil implies nearest");
        let xr = self.lattice.coord(refn);
        let rf = self.fiber(refn);
        let rj = self.node_jac(refn);
        let mut values = vec![0.0; q * n];
        let mut jac = vec![0.0; q * n * m];
        let mut pred = vec![0.0; q * n];
        for (k, &node) in st.nodes.iter().enumerate() {
            let f = self.fiber(node);
            let perm: Vec<usize> = if q == 1 {
                vec![0]
            } else {
                let xn = self.lattice.coord(node);
                for s in 0..q {
                    for c in 0..n {
                        let mut v = rf[s * n + c];
                        for a in 0..m {
                            v += rj[(s * n + c) * m + a] * (xn[a] - xr[a]);
                        }
                        pred[s * n + c] = v;
                    }
                }
                let (_, p) = matching(
                    &QPoint { q, k: n, pts: pred.clone() },
                    &QPoint { q, k: n, pts: f.to_vec() },
                )?;
                p
            };
            let w = st.w[k];
            for s in 0..q {
                let src = perm[s];
                for c in 0..n {
                    let v = f[src * n + c];
                    values[s * n + c] += w * v;
                    for a in 0..m {
                        jac[(s * n + c) * m + a] += st.dw[k * m + a] * v;
                    }
                }
            }
        }
        Ok(LocalFiber { values, jac })
    }

    /// Base-coordinate box `[lo, hi]` of core nodes possibly meeting `region`.
    fn node_range(&self, region: &RegionSpec) -> (Vec<usize>, Vec<usize>, bool) {
        let m = self.m;
        let h = self.h();
        let c = region.center();
        let r = region.radius();
        let axis_is_base = match region {
            RegionSpec::Ball { .. } => true,
            RegionSpec::Cylinder { axis, .. } => {
                crate::geom::plane_distance(axis, &Plane::standard(self.d(), m)).map(|d| d < 0.3).unwrap_or(false)
            }
        };
        let reach = if axis_is_base {
            match region {
                RegionSpec::Ball { .. } => r,
                RegionSpec::Cylinder { axis, .. } => {
                    let top = axis.basis().rows(0, m).into_owned();
                    let smin = top.singular_values().iter().cloned().fold(f64::INFINITY, f64::min);
                    if smin > 0.5 {
                        r / smin + self.max_height_spread() * (1.0 - smin * smin).max(0.0).sqrt() / smin
                    } else {
                        2.0 * DOMAIN
                    }
                }
            }
        } else {
            2.0 * DOMAIN
        };
        let mut lo = vec![0; m];
        let mut hi = vec![0; m];
        let mut clipped = false;
        for a in 0..m {
            let a0 = c[a] - reach;
            let a1 = c[a] + reach;
            if a0 < -DOMAIN || a1 > DOMAIN {
                clipped = true;
            }
            let i0 = (((a0 + DOMAIN) / h) - 1.0).floor().max(0.0) as usize;
            let i1 = ((((a1 + DOMAIN) / h) + 1.0).ceil().max(0.0) as usize).min(self.cells);
            lo[a] = i0.min(self.cells);
            hi[a] = i1;
        }
        (lo, hi, clipped)
    }

    fn max_height_spread(&self) -> f64 {
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for v in &self.fibers {
            lo = lo.min(*v);
            hi = hi.max(*v);
        }
        (hi - lo).abs() + 1.0
    }

    /// Quadrature points of `region`.
    pub fn quadrature(&self, region: &RegionSpec) -> Result<Quadrature> {
        let (m, q) = (self.m, self.q);
        let h = self.h();
        let cell = h.powi(m as i32);
        let (lo, hi, clipped) = self.node_range(region);
        let base_cyl = match region {
            RegionSpec::Cylinder { axis, .. } => {
                crate::geom::plane_distance(axis, &Plane::standard(self.d(), m)).map(|d| d < 1e-15).unwrap_or(false)
            }
            _ => false,
        };
        let c = region.center();
        let r = region.radius();
        let mut pts = Vec::new();
        let sub = 4usize;
        let nsub = sub.pow(m as u32);
        let mut idx = lo.clone();
        if lo.iter().zip(&hi).any(|(a, b)| a >= b) {
            return Err(Error::RegionOutsideGrid("region does not meet [-4,4]^m".into()));
        }
        loop {
            let node = self.core_node(&idx);
            let x = self.lattice.coord(node);
            if base_cyl {
                let frac = match m {
                    1 => {
                        let a = (x[0] - 0.5 * h).max(c[0] - r);
                        let b = (x[0] + 0.5 * h).min(c[0] + r);
                        (b - a).max(0.0) / h
                    }
                    2 => disk_rect_area(
                        x[0] - 0.5 * h - c[0],
                        x[0] + 0.5 * h - c[0],
                        x[1] - 0.5 * h - c[1],
                        x[1] + 0.5 * h - c[1],
                        r,
                    ) / cell,
                    _ => {
                        let mut inside = 0;
                        for s in 0..nsub {
                            let mut rem = s;
                            let mut d2 = 0.0;
                            for a in 0..m {
                                let k = rem % sub;
                                rem /= sub;
                                let xs = x[a] + h * ((k as f64 + 0.5) / sub as f64 - 0.5);
                                d2 += (xs - c[a]) * (xs - c[a]);
                            }
                            if d2 < r * r {
                                inside += 1;
                            }
                        }
                        inside as f64 / nsub as f64
                    }
                };
                if frac > 0.0 {
                    for s in 0..q {
                        pts.push(QuadPt { node, sheet: s, w: frac * cell });
                    }
                }
            } else {
                for s in 0..q {
                    let p = self.node_point(node, s);
                    let j = &self.node_jac(node)[s * self.n * m..(s + 1) * self.n * m];
                    let jn = j.iter().map(|v| v * v).sum::<f64>().sqrt();
                    let rho = 0.5 * h * (m as f64).sqrt() * (1.0 + jn);
                    let depth = region.signed_depth(&p);
                    let frac = if depth > rho {
                        1.0
                    } else if depth < -rho {
                        0.0
                    } else {
                        let mut inside = 0;
                        let mut ps = p.clone();
                        for t in 0..nsub {
                            let mut rem = t;
                            let mut dx = [0.0; 8];
                            for a in 0..m {
                                let k = rem % sub;
                                rem /= sub;
                                dx[a] = h * ((k as f64 + 0.5) / sub as f64 - 0.5);
                            }
                            for a in 0..m {
                                ps[a] = p[a] + dx[a];
                            }
                            for cc in 0..self.n {
                                let mut v = p[m + cc];
                                for a in 0..m {
                                    v += j[cc * m + a] * dx[a];
                                }
                                ps[m + cc] = v;
                            }
                            if region.contains(&ps) {
                                inside += 1;
                            }
                        }
                        inside as f64 / nsub as f64
                    };
                    if frac > 0.0 {
                        pts.push(QuadPt { node, sheet: s, w: frac * cell });
                    }
                }
            }
            // advance multi-index
            let mut a = m;
            loop {
                if a == 0 {
                    if pts.is_empty() {
                        return Err(Error::RegionOutsideGrid("region contains no support point".into()));
                    }
                    return Ok(Quadrature { pts, clipped });
                }
                a -= 1;
                idx[a] += 1;
                if idx[a] < hi[a] {
                    break;
                }
                idx[a] = lo[a];
            }
        }
    }

    /// `‖T‖(R)`.
    pub fn mass(&self, region: &RegionSpec) -> Result<f64> {
        let quad = self.quadrature(region)?;
        Ok(quad.pts.iter().map(|p| p.w * self.area_element(p.node, p.sheet)).sum())
    }

    /// `E(T, R, π) = (2ω_m r^m)^{-1} ∫_R |T⃗ − π⃗|² d‖T‖`.
    pub fn excess(&self, region: &RegionSpec, pi: &Plane) -> Result<f64> {
        let quad = self.quadrature(region)?;
        Ok(self.excess_on(&quad, region.radius(), pi))
    }

    fn excess_on(&self, quad: &Quadrature, radius: f64, pi: &Plane) -> f64 {
        let comp = pi.complement();
        let mut acc = 0.0;
        for p in &quad.pts {
            let g = self.tangent_columns(p.node, p.sheet);
            let area = (g.transpose() * &g).determinant().max(0.0).sqrt();
            acc += p.w * area * tilt_defect(&g, pi, &comp);
        }
        acc / (omega(self.m) * radius.powi(self.m as i32))
    }

    /// Support points of `region`: node points of every sheet lying inside.
    pub fn support_points(&self, region: &RegionSpec) -> Result<Vec<DVector<f64>>> {
        let quad = self.quadrature(region)?;
        Ok(quad
            .pts
            .iter()
            .map(|p| self.node_point(p.node, p.sheet))
            .filter(|x| region.contains(x))
            .collect())
    }

    /// `h(T, R, π)`: diameter of the support projected onto `π^⊥`.
    pub fn height(&self, region: &RegionSpec, pi: &Plane) -> Result<f64> {
        let pts = self.support_points(region)?;
        Ok(height_of(&pts, pi))
    }

    /// Excess-minimising plane over a ball, ties broken by minimal height.
    pub fn optimal_plane(&self, region: &RegionSpec, tie_tol: f64) -> Result<OptimalPlane> {
        let quad = self.quadrature(region)?;
        let samples: Vec<(f64, DMatrix<f64>)> = quad
            .pts
            .iter()
            .map(|p| {
                let g = self.tangent_columns(p.node, p.sheet);
                (p.w * (g.transpose() * &g).determinant().max(0.0).sqrt(), g)
            })
            .collect();
        if samples.iter().all(|s| s.0 == 0.0) {
            return Err(Error::EmptySupport("ball carries no mass".into()));
        }
        let (d, m) = (self.d(), self.m);
        let mut avg = DMatrix::zeros(d, d);
        for (c, g) in &samples {
            let gtg = g.transpose() * g;
            let inv = gtg.try_inverse().ok_or_else(|| Error::Singular("degenerate tangent".into()))?;
            avg += (g * inv * g.transpose()) * *c;
        }
        let eig = SymmetricEigen::new(avg);
        let mut order: Vec<usize> = (0..d).collect();
        order.sort_by(|&a, &b| eig.eigenvalues[b].partial_cmp(&eig.eigenvalues[a]).unwrap().then(a.cmp(&b)));
        let cols: Vec<DVector<f64>> = order[..m].iter().map(|&i| eig.eigenvectors.column(i).into_owned()).collect();
        let spectral = orient_like_base(Plane::from_spanning(&DMatrix::from_columns(&cols))?, m);
        let descended = descend_plane(&samples, &spectral)?;
        let pts = self.support_points(region)?;
        let base = Plane::standard(d, m);
        let mut cands: Vec<(Plane, f64)> = Vec::new();
        for p in [descended, spectral, base] {
            let e = self.excess_on(&quad, region.radius(), &p);
            cands.push((p, e));
        }
        let best_e = cands.iter().map(|c| c.1).fold(f64::INFINITY, f64::min);
        let tol = tie_tol * best_e.max(EXCESS_FLOOR * 1e-3);
        let mut chosen: Option<(Plane, f64, f64)> = None;
        for (p, e) in cands {
            if e <= best_e + tol {
                let hgt = height_of(&pts, &p);
                let better = match &chosen {
                    None => true,
                    Some((_, _, h0)) => hgt < *h0,
                };
                if better {
                    chosen = Some((p, e, hgt));
                }
            }
        }
        let (plane, excess, height) = chosen.expect("at least one candidate");
        let plane = align_with_base(plane, m);
        Ok(OptimalPlane { plane, excess, height, clipped: quad.clipped })
    }

    /// Intersect the line `X + π^⊥` with every sheet by Newton iteration on
    /// the sheet parametrisation.
    pub fn slice_fiber(&self, x: &DVector<f64>, pi: &Plane) -> Result<Slice> {
        let comp = pi.complement();
        self.slice_fiber_with(x, pi, &comp)
    }

    /// [`Self::slice_fiber`] with a precomputed complement of `π`.
    pub fn slice_fiber_with(&self, x: &DVector<f64>, pi: &Plane, comp: &Plane) -> Result<Slice> {
        let (m, n, q) = (self.m, self.n, self.q);
        let d = m + n;
        let bt = pi.basis().transpose();
        let y0: Vec<f64> = x.as_slice()[..m].to_vec();
        let start = self.local_fiber(&y0)?;
        let scale = 1.0 + x.norm();
        let mut base = Vec::with_capacity(q);
        let mut points = Vec::with_capacity(q);
        let mut coords = Vec::with_capacity(q * n);
        for s in 0..q {
            let mut y = y0.clone();
            let mut val = start.values[s * n..(s + 1) * n].to_vec();
            let mut jac = start.jac[s * n * m..(s + 1) * n * m].to_vec();
            let mut converged = false;
            for _ in 0..40 {
                let p = DVector::from_iterator(d, y.iter().chain(val.iter()).cloned());
                let r: DVector<f64> = &bt * (&p - x);
                if r.norm() <= 1e-13 * scale {
                    converged = true;
                    break;
                }
                let mut gm = DMatrix::zeros(d, m);
                for a in 0..m {
                    gm[(a, a)] = 1.0;
                }
                for c in 0..n {
                    for a in 0..m {
                        gm[(m + c, a)] = jac[c * m + a];
                    }
                }
                let jm = &bt * gm;
                let step = jm
                    .lu()
                    .solve(&(-&r))
                    .ok_or_else(|| Error::FiberTangency(format!("sheet {s} tangent to the fiber through {:?}", x.as_slice())))?;
                let prev_y = y.clone();
                for a in 0..m {
                    y[a] += step[a];
                }
                let lf = self.local_fiber(&y)?;
                let mut predicted = val.clone();
                for c in 0..n {
                    for a in 0..m {
                        predicted[c] += jac[c * m + a] * (y[a] - prev_y[a]);
                    }
                }
                let mut best = (f64::INFINITY, 0);
                for t in 0..q {
                    let dd: f64 = (0..n).map(|c| (lf.values[t * n + c] - predicted[c]).powi(2)).sum();
                    if dd < best.0 {
                        best = (dd, t);
                    }
                }
                let t = best.1;
                val = lf.values[t * n..(t + 1) * n].to_vec();
                jac = lf.jac[t * n * m..(t + 1) * n * m].to_vec();
            }
            if !converged {
                return Err(Error::FiberTangency(format!(
                    "Newton on sheet {s} did not converge for the fiber through {:?}",
                    x.as_slice()
                )));
            }
            let p = DVector::from_iterator(d, y.iter().chain(val.iter()).cloned());
            coords.extend(comp.coords(&(&p - x)).iter());
            base.push(y);
            points.push(p);
        }
        Ok(Slice { base, points, coords: QPoint { q, k: n, pts: coords } })
    }

    /// Push forward under `z ↦ z/r` and resample on the standard lattice.
    pub fn rescale(&self, r: f64) -> Result<SheetCurrent> {
        if !(r > 0.0) {
            return Err(Error::Precondition(format!("rescaling factor must be positive, got {r}")));
        }
        if r > 1.0 + 1e-12 {
            return Err(Error::RegionOutsideGrid(format!(
                "rescaling by {r} requires data beyond [-4,4]^m"
            )));
        }
        let ambient = match &self.ambient.psi {
            None => self.ambient.clone(),
            Some(p) => AmbientManifold::graph(self.ambient.n_bar, PsiMap::Scaled { inner: Box::new(p.clone()), r }),
        };
        let (q, n) = (self.q, self.n);
        let sampler = |x: &[f64]| -> Vec<f64> {
            let xs: Vec<f64> = x.iter().map(|v| v * r).collect();
            match self.local_fiber(&xs) {
                Ok(lf) => lf.values.iter().map(|v| v / r).collect(),
                Err(_) => {
                    let clamped: Vec<f64> = xs
                        .iter()
                        .map(|v| v.clamp(self.lattice.lo[0], self.lattice.bounds().1[0]))
                        .collect();
                    let node = self.lattice.nearest(&clamped).expect("clamped point inside lattice");
                    self.fiber(node).iter().map(|v| v / r).collect()
                }
            }
        };
        let out = SheetCurrent::from_sampler(self.m, q, self.cells, ambient, sampler)?;
        debug_assert_eq!(out.n, n);
        Ok(out)
    }

    /// Largest distance from the sheets to `Σ`.
    pub fn ambient_defect(&self) -> f64 {
        let mut worst: f64 = 0.0;
        for node in 0..self.lattice.len() {
            for s in 0..self.q {
                worst = worst.max(self.ambient.defect(self.node_point(node, s).as_slice()));
            }
        }
        worst
    }

    /// `(height over the core cylinder) / m0^{1/2m}`.
    pub fn fitted_height_constant(&self) -> Result<f64> {
        let cyl = RegionSpec::Cylinder {
            center: DVector::zeros(self.d()),
            radius: DOMAIN * (self.m as f64).sqrt() + self.h(),
            axis: Plane::standard(self.d(), self.m),
        };
        let h = self.height(&cyl, &Plane::standard(self.d(), self.m))?;
        Ok(h / self.m0.powf(1.0 / (2.0 * self.m as f64)))
    }
}

/// Diameter of `pts` projected onto `π^⊥`.
pub fn height_of(pts: &[DVector<f64>], pi: &Plane) -> f64 {
    let comp = pi.complement();
    let k = comp.dim();
    if k == 0 {
        return 0.0;
    }
    let proj: Vec<Vec<f64>> = pts.iter().map(|p| comp.coords(p).as_slice().to_vec()).collect();
    let refs: Vec<&[f64]> = proj.iter().map(|v| v.as_slice()).collect();
    point_set_diameter(&refs, k)
}

/// Rotate the basis within the plane so that its top `m x m` block (the
/// component along `π₀`) is symmetric positive definite. Plane coordinates
/// then line up with base coordinates as closely as possible.
pub fn align_with_base(p: Plane, m: usize) -> Plane {
    let p = orient_like_base(p, m);
    let top = p.basis().rows(0, m).into_owned();
    let svd = top.svd(true, true);
    let (Some(u), Some(vt)) = (svd.u, svd.v_t) else {
        return p;
    };
    let r = vt.transpose() * u.transpose();
    if r.determinant() < 0.0 {
        return p;
    }
    Plane::new(p.basis() * r).unwrap_or(p)
}

/// Flip the last basis vector if needed so that `det(Bᵀ B₀) ≥ 0`.
pub fn orient_like_base(p: Plane, m: usize) -> Plane {
    let top = p.basis().rows(0, m).into_owned();
    if top.determinant() < 0.0 {
        let mut b = p.basis().clone();
        b.column_mut(m - 1).neg_mut();
        Plane::new(b).expect("flipping keeps orthonormality")
    } else {
        p
    }
}

/// Newton descent on tilt matrices `A` (`n x m`) around `init`, minimising
/// `Σ c_i (1 − ⟨T⃗_i, π⃗(A)⟩)` where `π(A) = span(B + C A)`.
fn descend_plane(samples: &[(f64, DMatrix<f64>)], init: &Plane) -> Result<Plane> {
    let m = init.dim();
    let d = init.ambient();
    let n = d - m;
    if n == 0 {
        return Ok(init.clone());
    }
    let comp = init.complement();
    // Per-sample P = s·GᵀB (m x m) and R = s·GᵀC (m x n), row-major.
    let mut pr: Vec<(f64, Vec<f64>, Vec<f64>)> = Vec::with_capacity(samples.len());
    for (c, g) in samples {
        let gtg = g.transpose() * g;
        let s = 1.0 / gtg.determinant().max(1e-300).sqrt();
        let p = (g.transpose() * init.basis()) * s;
        let r = (g.transpose() * comp.basis()) * s;
        pr.push((*c, p.transpose().as_slice().to_vec(), r.transpose().as_slice().to_vec()));
    }
    let total: f64 = pr.iter().map(|x| x.0).sum();
    let eval = |a: &[f64]| -> (f64, Vec<f64>) {
        // a is n x m row-major
        let am = DMatrix::from_row_slice(n, m, a);
        let ata = DMatrix::identity(m, m) + am.transpose() * &am;
        let sdet = ata.determinant().sqrt();
        let z = &am * ata.try_inverse().unwrap_or_else(|| DMatrix::identity(m, m));
        let mut f = 0.0;
        let mut sum_d = 0.0;
        let mut g_acc = vec![0.0; n * m];
        let mut mm = vec![0.0; m * m];
        for (c, p, r) in &pr {
            for i in 0..m {
                for k in 0..m {
                    let mut v = p[i * m + k];
                    for j in 0..n {
                        v += r[i * n + j] * a[j * m + k];
                    }
                    mm[i * m + k] = v;
                }
            }
            let det = det_small(m, &mm);
            let adj = adj_small(m, &mm);
            f += c * (1.0 - det / sdet);
            sum_d += c * det;
            // (adj(M) R)_{kj}
            for k in 0..m {
                for j in 0..n {
                    let mut v = 0.0;
                    for i in 0..m {
                        v += adj[k * m + i] * r[i * n + j];
                    }
                    g_acc[j * m + k] += c * v;
                }
            }
        }
        let mut grad = vec![0.0; n * m];
        for j in 0..n {
            for k in 0..m {
                grad[j * m + k] = -g_acc[j * m + k] / sdet + sum_d / sdet * z[(j, k)];
            }
        }
        (f, grad)
    };
    let p = n * m;
    let mut a = vec![0.0; p];
    let (mut f, mut g) = eval(&a);
    for _ in 0..60 {
        let gn = g.iter().map(|v| v * v).sum::<f64>().sqrt();
        if gn <= 1e-15 * total.max(1e-300) {
            break;
        }
        let eps = 1e-6;
        let mut hess = DMatrix::zeros(p, p);
        for i in 0..p {
            let mut ap = a.clone();
            ap[i] += eps;
            let mut am = a.clone();
            am[i] -= eps;
            let (_, gp) = eval(&ap);
            let (_, gm) = eval(&am);
            for j in 0..p {
                hess[(j, i)] = (gp[j] - gm[j]) / (2.0 * eps);
            }
        }
        let hs = (&hess + hess.transpose()) * 0.5;
        let gv = DVector::from_column_slice(&g);
        let step = match hs.clone().cholesky() {
            Some(ch) => -ch.solve(&gv),
            None => {
                let scale = hs.diagonal().iter().cloned().fold(0.0, f64::max).max(total * 1e-3).max(1e-300);
                -gv / scale
            }
        };
        let mut t = 1.0;
        let mut moved = false;
        for _ in 0..40 {
            let cand: Vec<f64> = a.iter().zip(step.iter()).map(|(x, s)| x + t * s).collect();
            let (fc, gc) = eval(&cand);
            if fc <= f {
                let decrease = f - fc;
                a = cand;
                f = fc;
                g = gc;
                moved = true;
                if decrease <= 1e-16 * total && step.norm() * t < 1e-12 {
                    moved = false;
                }
                break;
            }
            t *= 0.5;
        }
        if !moved {
            break;
        }
        if a.iter().any(|v| !v.is_finite()) {
            return Err(Error::Divergence("optimal-plane descent produced non-finite tilt".into()));
        }
    }
    let am = DMatrix::from_row_slice(n, m, &a);
    let cols = init.basis() + comp.basis() * am;
    Plane::from_spanning(&cols)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn disk_rect_area_matches_simple_cases() {
        let r = 1.0;
        assert!((disk_rect_area(-2.0, 2.0, -2.0, 2.0, r) - std::f64::consts::PI).abs() < 1e-14);
        assert!((disk_rect_area(0.0, 2.0, 0.0, 2.0, r) - std::f64::consts::PI / 4.0).abs() < 1e-14);
        assert!((disk_rect_area(-0.1, 0.1, -0.1, 0.1, r) - 0.04).abs() < 1e-15);
        assert_eq!(disk_rect_area(1.5, 2.0, 0.0, 1.0, r), 0.0);
        // half-strip y in [0.5, 2]: segment area
        let seg = {
            let th = 2.0 * (0.5f64).acos();
            0.5 * (th - th.sin())
        };
        assert!((disk_rect_area(-2.0, 2.0, 0.5, 2.0, r) - seg).abs() < 1e-14);
    }

    #[test]
    fn omega_values() {
        assert_eq!(omega(1), 2.0);
        assert!((omega(3) - 4.0 * std::f64::consts::PI / 3.0).abs() < 1e-15);
        assert!((omega(4) - std::f64::consts::PI.powi(2) / 2.0).abs() < 1e-14);
    }
}
