//! Oriented planes, orthogonal frame triples, planar rotations and
//! reparametrisation of graphs between tilted planes.

use crate::error::{Error, Result};
use crate::grid::{GridSpec, SampledMap};
use nalgebra::{DMatrix, DVector};
use serde::Serialize;

/// Oriented `k`-plane through the origin of `R^d`, stored as an orthonormal
/// `d x k` basis; the orientation is the order of the columns.
#[derive(Clone, Debug, PartialEq)]
pub struct Plane {
    basis: DMatrix<f64>,
}

const ORTHO_TOL: f64 = 1e-12;

impl Serialize for Plane {
    /// Serialised as the list of basis columns.
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        let cols: Vec<Vec<f64>> = self.basis.column_iter().map(|c| c.iter().cloned().collect()).collect();
        cols.serialize(s)
    }
}

impl Plane {
    /// Wrap an orthonormal basis.
    pub fn new(basis: DMatrix<f64>) -> Result<Self> {
        let k = basis.ncols();
        let g = basis.transpose() * &basis;
        let defect = (g - DMatrix::identity(k, k)).abs().max();
        if defect > ORTHO_TOL {
            return Err(Error::Precondition(format!(
                "plane basis not orthonormal (defect {defect:.3e})"
            )));
        }
        Ok(Plane { basis })
    }

    /// Orthonormalise spanning columns by Gram–Schmidt, keeping the orientation.
    pub fn from_spanning(cols: &DMatrix<f64>) -> Result<Self> {
        let mut b = cols.clone();
        for j in 0..b.ncols() {
            for _ in 0..2 {
                for i in 0..j {
                    let proj = b.column(i).dot(&b.column(j));
                    let ci = b.column(i).clone_owned();
                    b.column_mut(j).axpy(-proj, &ci, 1.0);
                }
            }
            let nrm = b.column(j).norm();
            if nrm < 1e-14 {
                return Err(Error::Singular("spanning columns are linearly dependent".into()));
            }
            b.column_mut(j).scale_mut(1.0 / nrm);
        }
        Ok(Plane { basis: b })
    }

    /// `span(e_1, …, e_k)` in `R^d`, i.e. `π₀` when `k = m`.
    pub fn standard(d: usize, k: usize) -> Self {
        let mut b = DMatrix::zeros(d, k);
        for i in 0..k {
            b[(i, i)] = 1.0;
        }
        Plane { basis: b }
    }

    /// Span of the listed coordinate axes, in that order.
    pub fn coordinate(d: usize, axes: &[usize]) -> Self {
        let mut b = DMatrix::zeros(d, axes.len());
        for (j, &a) in axes.iter().enumerate() {
            b[(a, j)] = 1.0;
        }
        Plane { basis: b }
    }

    pub fn ambient(&self) -> usize {
        self.basis.nrows()
    }

    pub fn dim(&self) -> usize {
        self.basis.ncols()
    }

    pub fn basis(&self) -> &DMatrix<f64> {
        &self.basis
    }

    pub fn projector(&self) -> DMatrix<f64> {
        &self.basis * self.basis.transpose()
    }

    /// Coordinates of `v` along the basis.
    pub fn coords(&self, v: &DVector<f64>) -> DVector<f64> {
        self.basis.transpose() * v
    }

    /// Orthogonal complement, oriented so that `[self, complement]` is positive.
    pub fn complement(&self) -> Plane {
        let d = self.ambient();
        let k = self.dim();
        let mut cols: Vec<DVector<f64>> = self.basis.column_iter().map(|c| c.into_owned()).collect();
        let mut chosen: Vec<DVector<f64>> = Vec::new();
        let mut used = vec![false; d];
        while chosen.len() < d - k {
            let mut best: Option<(usize, DVector<f64>, f64)> = None;
            for i in 0..d {
                if used[i] {
                    continue;
                }
                let mut v = DVector::zeros(d);
                v[i] = 1.0;
                for _ in 0..2 {
                    for c in cols.iter() {
                        let p = c.dot(&v);
                        v.axpy(-p, c, 1.0);
                    }
                }
                let nv = v.norm();
                if best.as_ref().map(|b| nv > b.2 + 1e-12).unwrap_or(true) {
                    best = Some((i, v, nv));
                }
            }
            let (i, v, nv) = best.expect("complement search exhausted");
            used[i] = true;
            let u = v / nv;
            cols.push(u.clone());
            chosen.push(u);
        }
        let mut c = DMatrix::from_columns(&chosen);
        if !chosen.is_empty() {
            let full = DMatrix::from_columns(&cols);
            if full.determinant() < 0.0 {
                let last = c.ncols() - 1;
                c.column_mut(last).neg_mut();
            }
        }
        Plane { basis: if chosen.is_empty() { DMatrix::zeros(d, 0) } else { c } }
    }

    /// Image under a linear map (assumed orthogonal).
    pub fn transformed(&self, r: &DMatrix<f64>) -> Plane {
        Plane { basis: r * &self.basis }
    }

    pub fn orthonormality_defect(&self) -> f64 {
        let k = self.dim();
        (self.basis.transpose() * &self.basis - DMatrix::identity(k, k)).abs().max()
    }
}

/// `1 − Π cos θ_i` from the squared sines of the principal angles, stably.
fn one_minus_cos_product(sin2: impl Iterator<Item = f64>) -> f64 {
    let mut log_prod = 0.0;
    for s in sin2 {
        let s = s.clamp(0.0, 1.0);
        let a = s / (1.0 + (1.0 - s).sqrt());
        if a >= 1.0 {
            return 1.0;
        }
        log_prod += (-a).ln_1p();
    }
    -log_prod.exp_m1()
}

/// `|π⃗₁ − π⃗₂|`, the norm of the difference of the unit simple m-vectors.
///
/// `⟨π⃗₁, π⃗₂⟩ = det(B₁ᵀB₂) = ±Π cos θ_i` by Cauchy–Binet; the product is
/// rebuilt from the principal-angle sines so that nearby planes do not
/// lose precision to cancellation.
pub fn plane_distance(p1: &Plane, p2: &Plane) -> Result<f64> {
    if p1.ambient() != p2.ambient() || p1.dim() != p2.dim() {
        return Err(Error::Dimension(format!(
            "planes of dimension {} in R^{} and {} in R^{}",
            p1.dim(),
            p1.ambient(),
            p2.dim(),
            p2.ambient()
        )));
    }
    if p1.dim() == 0 {
        return Ok(0.0);
    }
    let cross = p1.basis.transpose() * &p2.basis;
    let sign = cross.determinant().signum();
    let resid = &p2.basis - &p1.basis * &cross;
    let sv = resid.singular_values();
    let t = one_minus_cos_product(sv.iter().map(|s| s * s));
    let d2 = if sign >= 0.0 { 2.0 * t } else { 2.0 * (2.0 - t) };
    Ok(d2.max(0.0).sqrt())
}

/// Frobenius distance of the orthogonal projectors divided by `√2`.
///
/// Orientation-blind; for nearby equally oriented planes it agrees with
/// [`plane_distance`] to first order.
pub fn projection_distance(p1: &Plane, p2: &Plane) -> Result<f64> {
    if p1.ambient() != p2.ambient() || p1.dim() != p2.dim() {
        return Err(Error::Dimension("projection distance of incompatible planes".into()));
    }
    Ok((p1.projector() - p2.projector()).norm() / 2f64.sqrt())
}

/// Stable `1 − ⟨T⃗, π⃗⟩` for the tangent plane spanned by the columns of
/// `g` (a `d x m` matrix, not necessarily orthonormal) against `π`, whose
/// complement basis is `c`. Opposite orientations give values above one.
pub fn tilt_defect(g: &DMatrix<f64>, pi: &Plane, c: &Plane) -> f64 {
    let m = g.ncols();
    let y = c.basis().transpose() * g;
    let mm = y.transpose() * &y;
    let nn = g.transpose() * g;
    let ninv = match nn.clone().try_inverse() {
        Some(i) => i,
        None => return 1.0,
    };
    let kmat = ninv * mm;
    let t = match m {
        1 => kmat[(0, 0)],
        2 => kmat.trace() - kmat.determinant(),
        3 => {
            let tr = kmat.trace();
            let tr2 = (&kmat * &kmat).trace();
            tr - 0.5 * (tr * tr - tr2) + kmat.determinant()
        }
        _ => 1.0 - (DMatrix::identity(m, m) - &kmat).determinant(),
    };
    let t = t.clamp(0.0, 1.0);
    let one_minus = t / (1.0 + (1.0 - t).sqrt());
    let sign = (pi.basis().transpose() * g).determinant();
    if sign >= 0.0 {
        one_minus
    } else {
        2.0 - one_minus
    }
}

/// Orthogonal triple `(π, ϰ, ϖ)` spanning the ambient space.
#[derive(Clone, Debug, PartialEq)]
pub struct FrameTriple {
    pub pi: Plane,
    pub kappa: Plane,
    pub varpi: Plane,
}

impl FrameTriple {
    pub fn new(pi: Plane, kappa: Plane, varpi: Plane) -> Result<Self> {
        let d = pi.ambient();
        if kappa.ambient() != d || varpi.ambient() != d || pi.dim() + kappa.dim() + varpi.dim() != d {
            return Err(Error::Dimension("frame triple does not span the ambient space".into()));
        }
        let all = DMatrix::from_columns(
            &pi.basis()
                .column_iter()
                .chain(kappa.basis().column_iter())
                .chain(varpi.basis().column_iter())
                .map(|c| c.into_owned())
                .collect::<Vec<_>>(),
        );
        let defect = (all.transpose() * &all - DMatrix::identity(d, d)).abs().max();
        if defect > 1e-10 {
            return Err(Error::Precondition(format!("frame triple not orthogonal (defect {defect:.3e})")));
        }
        Ok(FrameTriple { pi, kappa, varpi })
    }

    /// Columns of `π`, `ϰ`, `ϖ` in order, as one `d x d` matrix.
    pub fn matrix(&self) -> DMatrix<f64> {
        DMatrix::from_columns(
            &self
                .pi
                .basis()
                .column_iter()
                .chain(self.kappa.basis().column_iter())
                .chain(self.varpi.basis().column_iter())
                .map(|c| c.into_owned())
                .collect::<Vec<_>>(),
        )
    }

    pub fn transformed(&self, r: &DMatrix<f64>) -> FrameTriple {
        FrameTriple {
            pi: self.pi.transformed(r),
            kappa: self.kappa.transformed(r),
            varpi: self.varpi.transformed(r),
        }
    }
}

/// Which two members of the triple a planar rotation mixes.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum RotationType {
    /// `e1 ∈ ϰ`, `e2 ∈ ϖ`.
    A,
    /// `e1 ∈ π`, `e2 ∈ ϰ`.
    B,
    /// `e1 ∈ π`, `e2 ∈ ϖ`.
    C,
}

/// Rotation by `theta` in the plane `span(e1, e2)`, taking `e1` towards `e2`.
#[derive(Clone, Debug, PartialEq)]
pub struct Rotation2D {
    pub e1: DVector<f64>,
    pub e2: DVector<f64>,
    pub theta: f64,
    pub rot_type: RotationType,
}

impl Rotation2D {
    pub fn matrix(&self) -> DMatrix<f64> {
        let d = self.e1.len();
        let (s, c) = self.theta.sin_cos();
        let e11 = &self.e1 * self.e1.transpose();
        let e22 = &self.e2 * self.e2.transpose();
        let e21 = &self.e2 * self.e1.transpose();
        let e12 = &self.e1 * self.e2.transpose();
        DMatrix::identity(d, d) + (e11 + e22) * (c - 1.0) + (e21 - e12) * s
    }
}

/// Output of [`rotation_chain`].
#[derive(Clone, Debug)]
pub struct RotationChain {
    pub rotations: Vec<Rotation2D>,
    /// `|π − π̄| + |ϰ − ϰ̄|`.
    pub an: f64,
    /// Product `R_k ⋯ R_1`.
    pub composed: DMatrix<f64>,
    /// `max ‖R P Rᵀ − P̄‖` over the three projectors.
    pub composition_error: f64,
    /// `‖RᵀR − I‖_max`.
    pub orthogonality_defect: f64,
    /// `max |θ_j| / An` (zero for an empty chain).
    pub fitted_c0: f64,
}

/// Largest principal angle between `a` and `b` as `(p, w, cos, sin)`: `p ∈ a`
/// and the unit `w ⊥ a` with `cos·p + sin·w ∈ b`. Sines come from the part
/// of `b` orthogonal to `a`, so small angles keep full relative precision.
fn largest_principal(a: &Plane, b: &Plane) -> Option<(DVector<f64>, DVector<f64>, f64, f64)> {
    let off = b.basis() - a.basis() * (a.basis().transpose() * b.basis());
    let svd = off.clone().svd(false, true);
    let vt = svd.v_t?;
    let (i, _) = svd.singular_values.iter().enumerate().max_by(|x, y| x.1.total_cmp(y.1))?;
    let coef = vt.row(i).transpose();
    let q = b.basis() * &coef;
    let along = a.basis() * (a.basis().transpose() * &q);
    let perp = off * coef;
    let (cos, sin) = (along.norm(), perp.norm());
    if cos == 0.0 || sin == 0.0 {
        return None;
    }
    Some((along / cos, perp / sin, cos, sin))
}

// Principal angles below this are rounding residue of earlier steps.
const ANGLE_SKIP: f64 = 1e-12;

// Largest tolerated component of a rotation direction outside its target
// subspace before the configuration counts as degenerate.
const LEAK_TOL: f64 = 1e-6;

/// Decompose the rotation taking `src` to `dst` into planar rotations of
/// types A, B and C, first aligning `ϖ` and then `π` inside `ϖ^⊥`.
pub fn rotation_chain(src: &FrameTriple, dst: &FrameTriple, c0: f64) -> Result<RotationChain> {
    let d = src.pi.ambient();
    if dst.pi.ambient() != d
        || src.pi.dim() != dst.pi.dim()
        || src.kappa.dim() != dst.kappa.dim()
        || src.varpi.dim() != dst.varpi.dim()
    {
        return Err(Error::Dimension("frame triples of different shapes".into()));
    }
    let an = plane_distance(&src.pi, &dst.pi)? + plane_distance(&src.kappa, &dst.kappa)?;
    if an > c0 {
        return Err(Error::Precondition(format!("An = {an:.4e} exceeds c0 = {c0}")));
    }
    let mut cur = src.clone();
    let mut total = DMatrix::<f64>::identity(d, d);
    let mut rotations = Vec::new();
    let apply = |rot: Rotation2D, cur: &mut FrameTriple, total: &mut DMatrix<f64>, rotations: &mut Vec<Rotation2D>| {
        let r = rot.matrix();
        *cur = cur.transformed(&r);
        *total = &r * &*total;
        rotations.push(rot);
    };

    // Align ϖ with ϖ̄ one principal pair at a time.
    for _ in 0..=src.varpi.dim() {
        if cur.varpi.dim() == 0 {
            break;
        }
        let Some((p, w, cos, sin)) = largest_principal(&cur.varpi, &dst.varpi) else {
            break;
        };
        if sin < ANGLE_SKIP {
            break;
        }
        let wa = cur.pi.projector() * &w;
        let wb = cur.kappa.projector() * &w;
        let inside = (wa.norm_squared() + wb.norm_squared()).sqrt();
        if (inside - 1.0).abs() > LEAK_TOL {
            return Err(Error::Singular("principal direction leaves π ⊕ ϰ".into()));
        }
        // Renormalise away the rounding leak into ϖ.
        let (wa, wb) = (wa / inside, wb / inside);
        let (ca, cb) = (wa.norm(), wb.norm());
        let mut p_cur = p.clone();
        let alpha = (sin * ca).atan2(cos);
        if alpha.abs() > ANGLE_SKIP && ca > 0.0 {
            let a = wa / ca;
            let rot = Rotation2D { e1: a, e2: p_cur.clone(), theta: -alpha, rot_type: RotationType::C };
            p_cur = rot.matrix() * &p_cur;
            apply(rot, &mut cur, &mut total, &mut rotations);
        }
        let beta = (sin * cb).clamp(-1.0, 1.0).asin();
        if beta.abs() > ANGLE_SKIP && cb > 0.0 {
            let b = wb / cb;
            let rot = Rotation2D { e1: b, e2: p_cur, theta: -beta, rot_type: RotationType::A };
            apply(rot, &mut cur, &mut total, &mut rotations);
        }
    }

    // Align π with π̄ inside ϖ̄^⊥ by type-B rotations.
    for _ in 0..=src.pi.dim() {
        if cur.pi.dim() == 0 || cur.kappa.dim() == 0 {
            break;
        }
        let Some((u, w, cos, sin)) = largest_principal(&cur.pi, &dst.pi) else {
            break;
        };
        if sin < ANGLE_SKIP {
            break;
        }
        let w = cur.kappa.projector() * w;
        let inside = w.norm();
        if (inside - 1.0).abs() > LEAK_TOL {
            return Err(Error::Singular("π-alignment direction leaves ϰ".into()));
        }
        let w = w / inside;
        let theta = sin.atan2(cos);
        let rot = Rotation2D { e1: u, e2: w, theta, rot_type: RotationType::B };
        apply(rot, &mut cur, &mut total, &mut rotations);
    }

    for (a, b, name) in [
        (&cur.pi, &dst.pi, "π"),
        (&cur.kappa, &dst.kappa, "ϰ"),
        (&cur.varpi, &dst.varpi, "ϖ"),
    ] {
        if a.dim() > 0 && (a.basis().transpose() * b.basis()).determinant() < 0.0 {
            return Err(Error::Singular(format!("orientation of {name} cannot be matched by rotations")));
        }
    }
    let mut err: f64 = 0.0;
    for (s, t) in [(&src.pi, &dst.pi), (&src.kappa, &dst.kappa), (&src.varpi, &dst.varpi)] {
        if s.dim() > 0 {
            let moved = &total * s.projector() * total.transpose();
            err = err.max((moved - t.projector()).abs().max());
        }
    }
    let ortho = (total.transpose() * &total - DMatrix::identity(d, d)).abs().max();
    let max_theta = rotations.iter().map(|r| r.theta.abs()).fold(0.0, f64::max);
    Ok(RotationChain {
        fitted_c0: if rotations.is_empty() { 0.0 } else { max_theta / an.max(f64::MIN_POSITIVE) },
        rotations,
        an,
        composed: total,
        composition_error: err,
        orthogonality_defect: ortho,
    })
}

/// Graph of a sampled map `f` over a plane:
/// `x ↦ origin + domain·x + normal·f(x)`.
#[derive(Clone, Debug)]
pub struct GraphPatch {
    pub origin: DVector<f64>,
    pub domain: Plane,
    pub normal: Plane,
    pub map: SampledMap,
}

/// Options for [`regraph`].
#[derive(Clone, Copy, Debug)]
pub struct RegraphOptions {
    pub c0: f64,
    /// Enforce the smallness preconditions instead of merely measuring them.
    pub strict: bool,
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for RegraphOptions {
    fn default() -> Self {
        RegraphOptions { c0: 0.2, strict: true, tol: 1e-13, max_iter: 50 }
    }
}

/// Measured quantities of a regraph call.
#[derive(Clone, Debug, Default, Serialize)]
pub struct RegraphStats {
    pub plane_tilt: f64,
    pub lipschitz: f64,
    pub max_iterations: usize,
    /// Output nodes where inversion failed and the value was copied from the
    /// nearest inverted node (non-strict mode only).
    pub filled: usize,
}

impl GraphPatch {
    pub fn new(origin: DVector<f64>, domain: Plane, normal: Plane, map: SampledMap) -> Result<Self> {
        let d = origin.len();
        if domain.ambient() != d || normal.ambient() != d || domain.dim() + normal.dim() != d {
            return Err(Error::Dimension("graph patch frame does not match ambient".into()));
        }
        if map.grid.dim() != domain.dim() || map.k != normal.dim() {
            return Err(Error::Dimension("graph patch map shape does not match frame".into()));
        }
        Ok(GraphPatch { origin, domain, normal, map })
    }

    /// Ambient point over `x` and the ambient Jacobian `d x m` there.
    pub fn point_jet(&self, x: &[f64]) -> Option<(DVector<f64>, DMatrix<f64>)> {
        let m = self.domain.dim();
        let n = self.normal.dim();
        let (v, j) = self.map.eval_jet(x)?;
        let xv = DVector::from_column_slice(x);
        let vv = DVector::from_column_slice(&v);
        let p = &self.origin + self.domain.basis() * xv + self.normal.basis() * vv;
        let jm = DMatrix::from_row_slice(n, m, &j);
        let jac = self.domain.basis() + self.normal.basis() * jm;
        Some((p, jac))
    }

    pub fn point(&self, x: &[f64]) -> Option<DVector<f64>> {
        let v = self.map.eval(x)?;
        let xv = DVector::from_column_slice(x);
        let vv = DVector::from_column_slice(&v);
        Some(&self.origin + self.domain.basis() * xv + self.normal.basis() * vv)
    }

    /// Largest operator norm of the sampled Jacobian over the nodes whose
    /// stencil is complete.
    pub fn lipschitz(&self) -> f64 {
        let m = self.map.grid.dim();
        let n = self.map.k;
        let mut best: f64 = 0.0;
        let mut x = vec![0.0; m];
        for i in 0..self.map.grid.len() {
            self.map.grid.coord_into(i, &mut x);
            if let Some((_, j)) = self.map.eval_jet(&x) {
                let jm = DMatrix::from_row_slice(n, m, &j);
                let s = jm.singular_values();
                best = best.max(s.iter().cloned().fold(0.0, f64::max));
            }
        }
        best
    }

    /// Find the input parameter whose graph point projects onto `x_target`
    /// in the target frame; returns the parameter and the target height.
    pub fn invert_at(
        &self,
        target: &Plane,
        target_normal: &Plane,
        target_origin: &DVector<f64>,
        x_target: &[f64],
        opts: &RegraphOptions,
    ) -> Result<(Vec<f64>, Vec<f64>, usize)> {
        let m = self.domain.dim();
        let xt = DVector::from_column_slice(x_target);
        let world = target_origin + target.basis() * &xt;
        // Start from the preimage under the affine part of the patch; fall back
        // to orthogonal projection when the two planes are nearly orthogonal.
        let a = target.basis().transpose() * self.domain.basis();
        let rhs = &xt - target.basis().transpose() * (&self.origin - target_origin);
        let mut x: DVector<f64> = match a.lu().solve(&rhs) {
            Some(x0) if x0.iter().all(|v| v.is_finite()) && self.map.eval(x0.as_slice()).is_some() => x0,
            _ => self.domain.basis().transpose() * (&world - &self.origin),
        };
        let resid = |x: &DVector<f64>| -> Option<(DVector<f64>, DMatrix<f64>, DVector<f64>)> {
            let (p, jac) = self.point_jet(x.as_slice())?;
            let r = target.basis().transpose() * (&p - target_origin) - &xt;
            Some((r, target.basis().transpose() * jac, p))
        };
        let scale = 1.0 + xt.norm();
        let escape = || Error::FiberEscape(format!("regraph Newton left the sampled patch at {:?}", x_target));
        let (mut r, mut jac, mut p) = resid(&x).ok_or_else(escape)?;
        for it in 0..opts.max_iter {
            if r.norm() <= opts.tol * scale {
                let h = target_normal.basis().transpose() * (&p - target_origin);
                return Ok((x.as_slice().to_vec(), h.as_slice().to_vec(), it));
            }
            let step = jac
                .clone()
                .lu()
                .solve(&(-&r))
                .ok_or_else(|| Error::Singular("regraph Jacobian singular".into()))?;
            let mut t = 1.0;
            let mut accepted = false;
            for _ in 0..30 {
                let cand = &x + &step * t;
                if let Some((r2, j2, p2)) = resid(&cand) {
                    if r2.norm() < r.norm() || r2.norm() <= opts.tol * scale {
                        x = cand;
                        r = r2;
                        jac = j2;
                        p = p2;
                        accepted = true;
                        break;
                    }
                }
                t *= 0.5;
            }
            if !accepted {
                break;
            }
        }
        let _ = m;
        Err(Error::Singular(format!(
            "regraph Newton did not converge within {} iterations at {:?}",
            opts.max_iter, x_target
        )))
    }
}

/// Reparametrise the graph of `f` as a graph over `target` (through
/// `target_origin`) on the lattice `out_grid` of target coordinates.
pub fn regraph(
    f: &GraphPatch,
    target: &Plane,
    target_origin: &DVector<f64>,
    out_grid: GridSpec,
    opts: &RegraphOptions,
) -> Result<(GraphPatch, RegraphStats)> {
    let tilt = plane_distance(&f.domain, target)?;
    let lip = f.lipschitz();
    if opts.strict {
        if tilt > opts.c0 {
            return Err(Error::Precondition(format!("plane tilt {tilt:.3e} exceeds c0 = {}", opts.c0)));
        }
        if lip > opts.c0 {
            return Err(Error::Precondition(format!("Lip(f) = {lip:.3e} exceeds c0 = {}", opts.c0)));
        }
        let (lo, hi) = f.map.grid.bounds();
        let rho = lo.iter().zip(&hi).map(|(a, b)| 0.5 * (b - a)).fold(f64::INFINITY, f64::min);
        let mid: Vec<f64> = lo.iter().zip(&hi).map(|(a, b)| 0.5 * (a + b)).collect();
        if let Some(v) = f.map.eval(&mid) {
            let off = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            if off > opts.c0 * rho {
                return Err(Error::Precondition(format!(
                    "|f(q) − u| = {off:.3e} exceeds c0·ρ = {:.3e}",
                    opts.c0 * rho
                )));
            }
        }
    }
    let tnormal = target.complement();
    let n = tnormal.dim();
    let mut values = Vec::with_capacity(out_grid.len() * n);
    let mut x = vec![0.0; out_grid.dim()];
    let mut max_it = 0;
    let mut done = vec![true; out_grid.len()];
    for i in 0..out_grid.len() {
        out_grid.coord_into(i, &mut x);
        match f.invert_at(target, &tnormal, target_origin, &x, opts) {
            Ok((_, h, it)) => {
                max_it = max_it.max(it);
                values.extend(h);
            }
            Err(e) if opts.strict => return Err(e),
            Err(_) => {
                done[i] = false;
                values.extend(std::iter::repeat(0.0).take(n));
            }
        }
    }
    let filled = done.iter().filter(|d| !**d).count();
    if filled == out_grid.len() {
        return Err(Error::Singular("regraph failed at every output node".into()));
    }
    if filled > 0 {
        fill_from_neighbors(&out_grid, n, &mut values, &mut done);
    }
    let map = SampledMap::new(out_grid, n, values);
    Ok((
        GraphPatch::new(target_origin.clone(), target.clone(), tnormal, map)?,
        RegraphStats { plane_tilt: tilt, lipschitz: lip, max_iterations: max_it, filled },
    ))
}

/// Breadth-first constant extension of `values` (stride `k`) from the nodes
/// marked in `done` to the rest of the lattice.
pub(crate) fn fill_from_neighbors(grid: &GridSpec, k: usize, values: &mut [f64], done: &mut [bool]) {
    let m = grid.dim();
    let strides = grid.strides();
    let mut queue: std::collections::VecDeque<usize> = (0..grid.len()).filter(|&i| done[i]).collect();
    while let Some(i) = queue.pop_front() {
        let mi = grid.multi(i);
        for a in 0..m {
            for (ok, j) in [(mi[a] > 0, i.wrapping_sub(strides[a])), (mi[a] + 1 < grid.counts[a], i + strides[a])] {
                if ok && !done[j] {
                    values.copy_within(i * k..(i + 1) * k, j * k);
                    done[j] = true;
                    queue.push_back(j);
                }
            }
        }
    }
}

/// Rotation matrix `exp(S)` of a skew-symmetric generator built from `params`
/// (upper-triangular entries, row-major). Used to build test frames.
pub fn rotation_from_generator(d: usize, params: &[f64]) -> DMatrix<f64> {
    let mut s = DMatrix::zeros(d, d);
    let mut c = 0;
    for i in 0..d {
        for j in (i + 1)..d {
            s[(i, j)] = params[c];
            s[(j, i)] = -params[c];
            c += 1;
        }
    }
    // Scaling and squaring of the Taylor series.
    let nrm = s.norm();
    let k = if nrm > 0.5 { (nrm / 0.5).log2().ceil() as i32 } else { 0 };
    let sc = &s / 2f64.powi(k);
    let mut term = DMatrix::identity(d, d);
    let mut sum = DMatrix::identity(d, d);
    for i in 1..20 {
        term = &term * &sc / i as f64;
        sum += &term;
    }
    for _ in 0..k {
        sum = &sum * &sum;
    }
    sum
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn distance_examples() {
        let e1 = Plane::standard(2, 1);
        let e2 = Plane::coordinate(2, &[1]);
        assert_eq!(plane_distance(&e1, &e1).unwrap(), 0.0);
        assert!((plane_distance(&e1, &e2).unwrap() - 2f64.sqrt()).abs() < 1e-15);
        let th: f64 = 0.1;
        let t = Plane::new(DMatrix::from_column_slice(2, 1, &[th.cos(), th.sin()])).unwrap();
        let oracle = ((th.cos() - 1.0).powi(2) + th.sin().powi(2)).sqrt();
        assert!((plane_distance(&e1, &t).unwrap() - oracle).abs() < 1e-15);
        assert!((oracle - 2.0 * (0.05f64).sin()).abs() < 1e-15);
        assert!((oracle - 0.0999583).abs() < 1e-7);
        assert!(plane_distance(&e1, &Plane::standard(3, 1)).is_err());
    }

    #[test]
    fn complement_is_positively_oriented() {
        let r = rotation_from_generator(4, &[0.1, -0.2, 0.3, 0.05, 0.4, -0.1]);
        let p = Plane::standard(4, 2).transformed(&r);
        let c = p.complement();
        let full = DMatrix::from_columns(
            &p.basis().column_iter().chain(c.basis().column_iter()).map(|c| c.into_owned()).collect::<Vec<_>>(),
        );
        assert!((full.determinant() - 1.0).abs() < 1e-12);
        assert!(c.orthonormality_defect() < 1e-13);
        let pc = Plane::standard(4, 2).complement();
        assert_eq!(pc.basis(), Plane::coordinate(4, &[2, 3]).basis());
    }

    #[test]
    fn single_type_b_rotation_is_recovered() {
        let d = 3;
        let src = FrameTriple::new(
            Plane::standard(d, 1),
            Plane::coordinate(d, &[1]),
            Plane::coordinate(d, &[2]),
        )
        .unwrap();
        let rot = Rotation2D {
            e1: DVector::from_column_slice(&[1.0, 0.0, 0.0]),
            e2: DVector::from_column_slice(&[0.0, 1.0, 0.0]),
            theta: 0.01,
            rot_type: RotationType::B,
        };
        let dst = src.transformed(&rot.matrix());
        let chain = rotation_chain(&src, &dst, 0.2).unwrap();
        assert_eq!(chain.rotations.len(), 1);
        assert_eq!(chain.rotations[0].rot_type, RotationType::B);
        assert!((chain.rotations[0].theta - 0.01).abs() < 1e-12);
        assert!(chain.composition_error < 1e-12);
        let same = rotation_chain(&src, &src, 0.2).unwrap();
        assert!(same.rotations.is_empty());
    }

    #[test]
    fn linear_graph_regraph_matches_closed_form() {
        // Line y = s·x in R², regraphed over the axis rotated by φ.
        let s = 0.05;
        let phi: f64 = 0.03;
        let grid = GridSpec::centered(&[0.0], 0.05, 60);
        let f = GraphPatch::new(
            DVector::zeros(2),
            Plane::standard(2, 1),
            Plane::coordinate(2, &[1]),
            SampledMap::from_fn(grid, 1, |x| vec![s * x[0]]),
        )
        .unwrap();
        let target = Plane::new(DMatrix::from_column_slice(2, 1, &[phi.cos(), phi.sin()])).unwrap();
        let out = GridSpec::centered(&[0.0], 0.05, 40);
        let (g, _) = regraph(&f, &target, &DVector::zeros(2), out.clone(), &RegraphOptions::default()).unwrap();
        let slope = (s - phi.tan()) / (1.0 + s * phi.tan());
        for i in 0..out.len() {
            let x = out.coord(i)[0];
            assert!((g.map.node(i)[0] - slope * x).abs() < 1e-13);
        }
    }
}
