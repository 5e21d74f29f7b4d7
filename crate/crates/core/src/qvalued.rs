//! Unordered Q-tuples of vectors, the matching metric `G`, and fields of them.

use crate::error::{Error, Result};
use crate::grid::GridSpec;
use serde::Serialize;
use std::collections::VecDeque;

/// An unordered multiset of `q` vectors in `R^k`, stored flat.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct QPoint {
    pub q: usize,
    pub k: usize,
    pub pts: Vec<f64>,
}

impl QPoint {
    pub fn new(q: usize, k: usize, pts: Vec<f64>) -> Result<Self> {
        if q == 0 || pts.len() != q * k {
            return Err(Error::Dimension(format!(
                "QPoint expects {q} points of dimension {k}, got {} values",
                pts.len()
            )));
        }
        Ok(QPoint { q, k, pts })
    }

    /// `Q⟦v⟧`.
    pub fn repeated(q: usize, v: &[f64]) -> Self {
        let mut pts = Vec::with_capacity(q * v.len());
        for _ in 0..q {
            pts.extend_from_slice(v);
        }
        QPoint { q, k: v.len(), pts }
    }

    pub fn point(&self, i: usize) -> &[f64] {
        &self.pts[i * self.k..(i + 1) * self.k]
    }

    pub fn points(&self) -> impl Iterator<Item = &[f64]> {
        self.pts.chunks(self.k)
    }
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Visit every permutation of `0..n` (Heap's algorithm).
pub(crate) fn for_each_permutation(n: usize, mut f: impl FnMut(&[usize])) {
    let mut p: Vec<usize> = (0..n).collect();
    let mut c = vec![0usize; n];
    f(&p);
    let mut i = 0;
    while i < n {
        if c[i] < i {
            if i % 2 == 0 {
                p.swap(0, i);
            } else {
                p.swap(c[i], i);
            }
            f(&p);
            c[i] += 1;
            i = 0;
        } else {
            c[i] = 0;
            i += 1;
        }
    }
}

/// Minimum-cost perfect assignment for a dense square cost matrix
/// (row-major, `n x n`); returns `assign[row] = col`.
pub fn hungarian(n: usize, cost: &[f64]) -> Vec<usize> {
    let inf = f64::INFINITY;
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; n + 1];
    let mut p = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    for i in 1..=n {
        p[0] = i;
        let mut j0 = 0;
        let mut minv = vec![inf; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let mut delta = inf;
            let mut j1 = 0;
            for j in 1..=n {
                if !used[j] {
                    let cur = cost[(i0 - 1) * n + (j - 1)] - u[i0] - v[j];
                    if cur < minv[j] {
                        minv[j] = cur;
                        way[j] = j0;
                    }
                    if minv[j] < delta {
                        delta = minv[j];
                        j1 = j;
                    }
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if p[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut assign = vec![0; n];
    for j in 1..=n {
        if p[j] > 0 {
            assign[p[j] - 1] = j - 1;
        }
    }
    assign
}

fn check_compatible(a: &QPoint, b: &QPoint) -> Result<()> {
    if a.q != b.q || a.k != b.k {
        return Err(Error::Dimension(format!(
            "Q-points differ: (Q={}, k={}) vs (Q={}, k={})",
            a.q, a.k, b.q, b.k
        )));
    }
    Ok(())
}

/// Optimal matching: returns `(Σ|a_i − b_σ(i)|², σ)`.
pub fn matching(a: &QPoint, b: &QPoint) -> Result<(f64, Vec<usize>)> {
    check_compatible(a, b)?;
    let q = a.q;
    match q {
        1 => Ok((sq_dist(a.point(0), b.point(0)), vec![0])),
        2 => {
            let c0 = sq_dist(a.point(0), b.point(0)) + sq_dist(a.point(1), b.point(1));
            let c1 = sq_dist(a.point(0), b.point(1)) + sq_dist(a.point(1), b.point(0));
            Ok(if c1 < c0 { (c1, vec![1, 0]) } else { (c0, vec![0, 1]) })
        }
        _ => {
            let mut cost = vec![0.0; q * q];
            for i in 0..q {
                for j in 0..q {
                    cost[i * q + j] = sq_dist(a.point(i), b.point(j));
                }
            }
            if q <= 6 {
                let mut best = f64::INFINITY;
                let mut arg = Vec::new();
                for_each_permutation(q, |p| {
                    let c: f64 = (0..q).map(|i| cost[i * q + p[i]]).sum();
                    if c < best {
                        best = c;
                        arg = p.to_vec();
                    }
                });
                Ok((best, arg))
            } else {
                let arg = hungarian(q, &cost);
                let c = (0..q).map(|i| cost[i * q + arg[i]]).sum();
                Ok((c, arg))
            }
        }
    }
}

/// The metric `G(P1, P2)`.
pub fn g_dist(a: &QPoint, b: &QPoint) -> Result<f64> {
    Ok(matching(a, b)?.0.sqrt())
}

/// The average `η(P)`.
pub fn eta(p: &QPoint) -> Vec<f64> {
    let mut out = vec![0.0; p.k];
    for pt in p.points() {
        for (o, x) in out.iter_mut().zip(pt) {
            *o += x;
        }
    }
    for o in &mut out {
        *o /= p.q as f64;
    }
    out
}

/// `G(P, Q⟦η(P)⟧)`.
pub fn sep_to_mean(p: &QPoint) -> f64 {
    let e = eta(p);
    p.points().map(|pt| sq_dist(pt, &e)).sum::<f64>().sqrt()
}

/// A field of Q-points over a lattice.
#[derive(Clone, Debug)]
pub struct QField {
    pub grid: GridSpec,
    pub q: usize,
    pub k: usize,
    /// `grid.len() * q * k` values, node-major.
    pub values: Vec<f64>,
    /// True when the storage order is a continuous sheet selection.
    pub labeled: bool,
}

/// Outputs of [`QField::energy_decomposition`].
#[derive(Clone, Debug, Serialize)]
pub struct EnergyDecomposition {
    pub dir_total: f64,
    pub dir_centered: f64,
    pub dir_mean: f64,
    /// Mean of `D(η∘w)` over the region, row-major `k x m`.
    pub a: Vec<f64>,
    pub measure: f64,
    /// `∫|Dw|² − ∫|Dw̄|² − Q∫|D(η∘w)|²`.
    pub defect_centered: f64,
    /// `∫|Dw|² − ∫G(Dw, Q⟦A⟧)² − Q|A|²|Ω|`.
    pub defect_constant: f64,
}

impl EnergyDecomposition {
    pub fn relative_defects(&self) -> (f64, f64) {
        let s = self.dir_total.abs().max(f64::MIN_POSITIVE);
        (self.defect_centered.abs() / s, self.defect_constant.abs() / s)
    }
}

impl QField {
    pub fn new(grid: GridSpec, q: usize, k: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.len() * q * k {
            return Err(Error::Dimension(format!(
                "QField expects {} values, got {}",
                grid.len() * q * k,
                values.len()
            )));
        }
        Ok(QField { grid, q, k, values, labeled: false })
    }

    /// Field whose storage order is declared to be a continuous selection.
    pub fn new_labeled(grid: GridSpec, q: usize, k: usize, values: Vec<f64>) -> Result<Self> {
        let mut f = QField::new(grid, q, k, values)?;
        f.labeled = true;
        Ok(f)
    }

    pub fn node(&self, i: usize) -> &[f64] {
        let s = self.q * self.k;
        &self.values[i * s..(i + 1) * s]
    }

    pub fn qpoint(&self, i: usize) -> QPoint {
        QPoint { q: self.q, k: self.k, pts: self.node(i).to_vec() }
    }

    /// `η∘f` per node, `k` values each.
    pub fn eta_values(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.grid.len() * self.k);
        for i in 0..self.grid.len() {
            out.extend(eta(&self.qpoint(i)));
        }
        out
    }

    /// `sup |P − P′|` over all support points of all nodes.
    pub fn oscillation(&self) -> f64 {
        let pts: Vec<&[f64]> = self.values.chunks(self.k).collect();
        if self.k == 1 {
            let lo = pts.iter().map(|p| p[0]).fold(f64::INFINITY, f64::min);
            let hi = pts.iter().map(|p| p[0]).fold(f64::NEG_INFINITY, f64::max);
            return hi - lo;
        }
        point_set_diameter(&pts, self.k)
    }

    /// Largest `G(f(x), f(y)) / |x − y|` over lattice neighbours.
    pub fn lipschitz_estimate(&self) -> f64 {
        let strides = self.grid.strides();
        let mut best: f64 = 0.0;
        for i in 0..self.grid.len() {
            let mi = self.grid.multi(i);
            for a in 0..self.grid.dim() {
                if mi[a] + 1 < self.grid.counts[a] {
                    let j = i + strides[a];
                    let d = g_dist(&self.qpoint(i), &self.qpoint(j)).unwrap_or(0.0);
                    best = best.max(d / self.grid.h);
                }
            }
        }
        best
    }

    /// Reorder fibers into a continuous selection by flood fill from node 0.
    ///
    /// Fails when two inequivalent matchings are within `1e-9` in cost, or
    /// when the resulting labels are inconsistent along some lattice edge
    /// (monodromy around a branch point).
    pub fn label(&self) -> Result<QField> {
        let n = self.grid.len();
        let strides = self.grid.strides();
        let m = self.grid.dim();
        let mut out = self.values.clone();
        let mut done = vec![false; n];
        let s = self.q * self.k;
        let mut queue = VecDeque::new();
        done[0] = true;
        queue.push_back(0usize);
        while let Some(i) = queue.pop_front() {
            let mi = self.grid.multi(i);
            for a in 0..m {
                for dir in [-1i64, 1] {
                    let c = mi[a] as i64 + dir;
                    if c < 0 || c >= self.grid.counts[a] as i64 {
                        continue;
                    }
                    let j = if dir > 0 { i + strides[a] } else { i - strides[a] };
                    if done[j] {
                        continue;
                    }
                    let reference = QPoint { q: self.q, k: self.k, pts: out[i * s..(i + 1) * s].to_vec() };
                    let target = self.qpoint(j);
                    let perm = unambiguous_matching(&reference, &target, j)?;
                    for (r, &t) in perm.iter().enumerate() {
                        out[j * s + r * self.k..j * s + (r + 1) * self.k]
                            .copy_from_slice(target.point(t));
                    }
                    done[j] = true;
                    queue.push_back(j);
                }
            }
        }
        let f = QField { grid: self.grid.clone(), q: self.q, k: self.k, values: out, labeled: true };
        for i in 0..n {
            let mi = f.grid.multi(i);
            for a in 0..m {
                if mi[a] + 1 < f.grid.counts[a] {
                    let j = i + strides[a];
                    let (best, _) = matching(&f.qpoint(i), &f.qpoint(j))?;
                    let ident: f64 = (0..self.q)
                        .map(|r| sq_dist(&f.node(i)[r * self.k..(r + 1) * self.k], &f.node(j)[r * self.k..(r + 1) * self.k]))
                        .sum();
                    if ident > best + 1e-9 * (1.0 + best) {
                        return Err(Error::SelectionRequired(format!(
                            "labels inconsistent across edge {i}-{j}; no continuous selection"
                        )));
                    }
                }
            }
        }
        Ok(f)
    }

    /// Per-sheet finite-difference gradients, `[node][sheet][comp][axis]`.
    fn sheet_gradients(&self) -> Vec<f64> {
        let m = self.grid.dim();
        let strides = self.grid.strides();
        let s = self.q * self.k;
        let n = self.grid.len();
        let mut out = vec![0.0; n * s * m];
        for i in 0..n {
            let mi = self.grid.multi(i);
            for a in 0..m {
                let (lo, hi, span) = if self.grid.counts[a] < 2 {
                    (i, i, 1.0)
                } else if mi[a] == 0 {
                    (i, i + strides[a], self.grid.h)
                } else if mi[a] + 1 == self.grid.counts[a] {
                    (i - strides[a], i, self.grid.h)
                } else {
                    (i - strides[a], i + strides[a], 2.0 * self.grid.h)
                };
                for c in 0..s {
                    let d = (self.values[hi * s + c] - self.values[lo * s + c]) / span;
                    out[(i * s + c) * m + a] = d;
                }
            }
        }
        out
    }

    /// Both energy identities over the region with quadrature weights
    /// `weights` (one per node; `None` means `h^m` everywhere).
    pub fn energy_decomposition(&self, weights: Option<&[f64]>) -> Result<EnergyDecomposition> {
        if !self.labeled {
            return Err(Error::SelectionRequired(
                "energy decomposition needs a labeled field".into(),
            ));
        }
        let m = self.grid.dim();
        let n = self.grid.len();
        let (q, k) = (self.q, self.k);
        let s = q * k;
        let grads = self.sheet_gradients();
        let cell = self.grid.h.powi(m as i32);
        let w_at = |i: usize| weights.map(|w| w[i]).unwrap_or(cell);
        let km = k * m;
        let mut dir_total = 0.0;
        let mut dir_centered = 0.0;
        let mut dir_mean = 0.0;
        let mut measure = 0.0;
        let mut a_acc = vec![0.0; km];
        let mut dmean = vec![0.0; km];
        for i in 0..n {
            let w = w_at(i);
            if w == 0.0 {
                continue;
            }
            measure += w;
            let g = &grads[i * s * m..(i + 1) * s * m];
            dmean.iter_mut().for_each(|x| *x = 0.0);
            for r in 0..q {
                for c in 0..km {
                    dmean[c] += g[r * km + c];
                }
            }
            dmean.iter_mut().for_each(|x| *x /= q as f64);
            for r in 0..q {
                for c in 0..km {
                    let v = g[r * km + c];
                    dir_total += w * v * v;
                    let d = v - dmean[c];
                    dir_centered += w * d * d;
                }
            }
            for c in 0..km {
                dir_mean += w * dmean[c] * dmean[c];
                a_acc[c] += w * dmean[c];
            }
        }
        if measure == 0.0 {
            return Err(Error::EmptySupport("energy region has zero measure".into()));
        }
        let a: Vec<f64> = a_acc.iter().map(|x| x / measure).collect();
        let mut g2 = 0.0;
        for i in 0..n {
            let w = w_at(i);
            if w == 0.0 {
                continue;
            }
            let g = &grads[i * s * m..(i + 1) * s * m];
            for r in 0..q {
                for c in 0..km {
                    let d = g[r * km + c] - a[c];
                    g2 += w * d * d;
                }
            }
        }
        let a2: f64 = a.iter().map(|x| x * x).sum();
        Ok(EnergyDecomposition {
            dir_total,
            dir_centered,
            dir_mean,
            defect_centered: dir_total - dir_centered - q as f64 * dir_mean,
            defect_constant: dir_total - g2 - q as f64 * a2 * measure,
            a,
            measure,
        })
    }

    /// CSV with node coordinates followed by `Q*k` value columns.
    pub fn to_csv(&self) -> String {
        let m = self.grid.dim();
        let mut s = String::new();
        let head: Vec<String> = (0..m)
            .map(|a| format!("x{a}"))
            .chain((0..self.q).flat_map(|r| (0..self.k).map(move |c| format!("v{r}_{c}"))))
            .collect();
        s.push_str(&head.join(","));
        s.push('\n');
        for i in 0..self.grid.len() {
            let row: Vec<String> = self
                .grid
                .coord(i)
                .iter()
                .chain(self.node(i).iter())
                .map(|v| format!("{v:.12e}"))
                .collect();
            s.push_str(&row.join(","));
            s.push('\n');
        }
        s
    }
}

/// Diameter of a finite point set in `R^k`.
///
/// Exact in every dimension: min/max for `k = 1`, convex hull plus pairwise
/// search over hull vertices for `k = 2`, brute force otherwise.
pub fn point_set_diameter(pts: &[&[f64]], k: usize) -> f64 {
    if pts.len() < 2 {
        return 0.0;
    }
    match k {
        1 => {
            let lo = pts.iter().map(|p| p[0]).fold(f64::INFINITY, f64::min);
            let hi = pts.iter().map(|p| p[0]).fold(f64::NEG_INFINITY, f64::max);
            hi - lo
        }
        2 => {
            let mut v: Vec<(f64, f64)> = pts.iter().map(|p| (p[0], p[1])).collect();
            v.sort_by(|a, b| a.partial_cmp(b).unwrap());
            v.dedup();
            let cross = |o: (f64, f64), a: (f64, f64), b: (f64, f64)| {
                (a.0 - o.0) * (b.1 - o.1) - (a.1 - o.1) * (b.0 - o.0)
            };
            let mut hull: Vec<(f64, f64)> = Vec::new();
            for pass in 0..2 {
                let start = hull.len();
                let iter: Box<dyn Iterator<Item = &(f64, f64)>> =
                    if pass == 0 { Box::new(v.iter()) } else { Box::new(v.iter().rev()) };
                for &p in iter {
                    while hull.len() >= start + 2
                        && cross(hull[hull.len() - 2], hull[hull.len() - 1], p) <= 0.0
                    {
                        hull.pop();
                    }
                    hull.push(p);
                }
                hull.pop();
            }
            if hull.is_empty() {
                hull = v.clone();
            }
            let mut best: f64 = 0.0;
            for i in 0..hull.len() {
                for j in (i + 1)..hull.len() {
                    let dx = hull[i].0 - hull[j].0;
                    let dy = hull[i].1 - hull[j].1;
                    best = best.max(dx * dx + dy * dy);
                }
            }
            best.sqrt()
        }
        _ => {
            let mut best: f64 = 0.0;
            for i in 0..pts.len() {
                for j in (i + 1)..pts.len() {
                    best = best.max(sq_dist(pts[i], pts[j]));
                }
            }
            best.sqrt()
        }
    }
}

fn unambiguous_matching(reference: &QPoint, target: &QPoint, node: usize) -> Result<Vec<usize>> {
    let (best, perm) = matching(reference, target)?;
    if reference.q <= 6 {
        let q = reference.q;
        let mut clash = false;
        for_each_permutation(q, |p| {
            if clash || p == perm.as_slice() {
                return;
            }
            let c: f64 = (0..q).map(|i| sq_dist(reference.point(i), target.point(p[i]))).sum();
            if c - best <= 1e-9 {
                let same = (0..q).all(|i| sq_dist(target.point(p[i]), target.point(perm[i])) <= 1e-24);
                if !same {
                    clash = true;
                }
            }
        });
        if clash {
            return Err(Error::SelectionRequired(format!(
                "ambiguous matching at node {node}: two pairings within 1e-9"
            )));
        }
    }
    Ok(perm)
}
