//! Stripe decomposition of the support in a cylinder: at most `Q` disjoint
//! slabs of half-width `σ = C₀E^{1/2m}` that contain the support, found by
//! slab splitting one normal coordinate at a time.

use crate::current::{omega, RegionSpec, SheetCurrent, EXCESS_FLOOR};
use crate::error::{Error, Result};
use crate::geom::Plane;
use crate::whitney::Params;
use serde::Serialize;
use std::collections::BTreeMap;

#[derive(Clone, Debug, Serialize)]
pub struct Stripe {
    /// `y_i` in coordinates of `π^⊥`.
    pub center: Vec<f64>,
    pub multiplicity: usize,
    /// Coordinate hull of the support inside the stripe.
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
}

#[derive(Clone, Debug, Serialize)]
pub struct StripeDecomposition {
    pub excess: f64,
    pub sigma: f64,
    pub eta: f64,
    pub radius: f64,
    /// `1 − σ|log E|` before clipping.
    pub inner_factor: f64,
    pub inner_radius: f64,
    /// The inner factor fell below 1/2 and was clipped there.
    pub inner_clipped: bool,
    pub stripes: Vec<Stripe>,
    pub depth: usize,
    pub depth_bound: usize,
    /// Some slab search found no admissible split although the support is
    /// wider than `2σ`: the height-bound hypothesis fails on this cylinder.
    pub hypothesis_failure: bool,
    /// Every stripe meets every fiber in the same number of points.
    pub multiplicity_consistent: bool,
    pub disjoint: bool,
}

impl StripeDecomposition {
    pub fn k(&self) -> usize {
        self.stripes.len()
    }
}

struct Sample {
    node: usize,
    y: Vec<f64>,
    w: f64,
    inner: bool,
}

struct Search<'a> {
    samples: &'a [Sample],
    sigma: f64,
    eta: f64,
    slab_mass_unit: f64,
    tol: f64,
    depth: usize,
    failure: bool,
}

impl Search<'_> {
    fn fits(&self, lo: f64, hi: f64) -> bool {
        hi - lo < 2.0 * self.sigma || hi - lo <= self.tol
    }

    /// Per-node count of members strictly below `cut`; `None` if it varies.
    fn split_count(&self, set: &[usize], below: &[usize]) -> Option<usize> {
        let mut total: BTreeMap<usize, usize> = BTreeMap::new();
        let mut low: BTreeMap<usize, usize> = BTreeMap::new();
        for &i in set {
            *total.entry(self.samples[i].node).or_default() += 1;
        }
        for &i in below {
            *low.entry(self.samples[i].node).or_default() += 1;
        }
        let mut k = None;
        for node in total.keys() {
            let c = low.get(node).copied().unwrap_or(0);
            match k {
                None => k = Some(c),
                Some(v) if v != c => return None,
                _ => {}
            }
        }
        k
    }

    fn split(&mut self, axis: usize, set: Vec<usize>, q: usize, level: usize) -> Vec<(Vec<usize>, usize)> {
        self.depth = self.depth.max(level);
        let ys = |i: usize| self.samples[i].y[axis];
        let inner: Vec<usize> = set.iter().copied().filter(|&i| self.samples[i].inner).collect();
        if inner.is_empty() {
            return vec![(set, q)];
        }
        let lo = inner.iter().map(|&i| ys(i)).fold(f64::INFINITY, f64::min);
        let hi = inner.iter().map(|&i| ys(i)).fold(f64::NEG_INFINITY, f64::max);
        if self.fits(lo, hi) {
            return vec![(set, q)];
        }
        if q == 1 {
            self.failure = true;
            return vec![(set, q)];
        }
        let parts = q + 1;
        let width = (hi - lo) / parts as f64;
        let threshold = (1.0 - 1.0 / (2.0 * q as f64)) * self.slab_mass_unit;
        let mut order: Vec<(f64, usize)> = (0..parts)
            .map(|p| {
                let (a, b) = (lo + p as f64 * width, lo + (p + 1) as f64 * width);
                let mass: f64 = set.iter().filter(|&&i| ys(i) >= a && ys(i) < b).map(|&i| self.samples[i].w).sum();
                (mass, p)
            })
            .collect();
        order.sort_by(|x, y| x.0.total_cmp(&y.0).then(x.1.cmp(&y.1)));
        for (mass, p) in order {
            if mass > threshold || width <= 2.0 * self.eta {
                continue;
            }
            let (a, b) = (lo + p as f64 * width + self.eta, lo + (p + 1) as f64 * width - self.eta);
            if inner.iter().any(|&i| ys(i) > a && ys(i) < b) {
                continue;
            }
            let below: Vec<usize> = inner.iter().copied().filter(|&i| ys(i) <= a).collect();
            let above: Vec<usize> = inner.iter().copied().filter(|&i| ys(i) >= b).collect();
            let k1 = match self.split_count(&inner, &below) {
                Some(k) if k >= 1 && k < q => k,
                _ => continue,
            };
            let mut out = self.split(axis, below, k1, level + 1);
            out.extend(self.split(axis, above, q - k1, level + 1));
            return out;
        }
        self.failure = true;
        vec![(set, q)]
    }
}

/// Stripes with `σ = C₀E^{1/2m}` and `η = C♭E^{1/2m}`, `E` the excess of the
/// cylinder with respect to `π`.
pub fn stripes(t: &SheetCurrent, cylinder: &RegionSpec, pi: &Plane, params: &Params) -> Result<StripeDecomposition> {
    let e = t.excess(cylinder, pi)?;
    let s = if e > EXCESS_FLOOR { e.powf(1.0 / (2.0 * t.m as f64)) } else { 0.0 };
    stripes_with_sigma(t, cylinder, pi, params.c_stripe * s, params.c_flat * s, e)
}

/// Stripe search with explicit `σ` and `η`; `excess` only sets the inner
/// radius and the depth bound.
pub fn stripes_with_sigma(
    t: &SheetCurrent,
    cylinder: &RegionSpec,
    pi: &Plane,
    sigma: f64,
    eta: f64,
    excess: f64,
) -> Result<StripeDecomposition> {
    if !matches!(cylinder, RegionSpec::Cylinder { .. }) {
        return Err(Error::Precondition("stripes need a cylinder".into()));
    }
    let m = t.m;
    let r = cylinder.radius();
    let center = cylinder.center();
    let (inner_factor, log_e) =
        if excess > EXCESS_FLOOR { (1.0 - sigma * excess.ln().abs(), -excess.ln()) } else { (1.0, 0.0) };
    let inner_clipped = inner_factor < 0.5;
    let inner_radius = r * inner_factor.max(0.5);
    let comp = pi.complement();
    let bt = pi.basis().transpose();
    let quad = t.quadrature(cylinder)?;
    let samples: Vec<Sample> = quad
        .pts
        .iter()
        .map(|p| {
            let x = t.node_point(p.node, p.sheet);
            let g = t.tangent_columns(p.node, p.sheet);
            let proj = (&bt * &g).determinant().abs();
            let inner = pi.coords(&(&x - center)).norm() < inner_radius;
            Sample { node: p.node, y: comp.coords(&x).iter().copied().collect(), w: p.w * proj, inner }
        })
        .collect();
    let scale = samples.iter().flat_map(|s| s.y.iter()).fold(1.0f64, |a, v| a.max(v.abs()));
    let mut search = Search {
        samples: &samples,
        sigma,
        eta,
        slab_mass_unit: omega(m) * r.powi(m as i32),
        tol: 1e-12 * scale,
        depth: 0,
        failure: false,
    };
    let nc = comp.dim();
    let mut groups = vec![((0..samples.len()).collect::<Vec<_>>(), t.q)];
    for axis in 0..nc {
        let mut next = Vec::new();
        for (set, q) in groups {
            next.extend(search.split(axis, set, q, 0));
        }
        groups = next;
    }
    let mut consistent = true;
    let mut stripes = Vec::new();
    for (set, q) in groups {
        let inner: Vec<&Sample> = set.iter().map(|&i| &samples[i]).filter(|s| s.inner).collect();
        if inner.is_empty() {
            continue;
        }
        let mut counts: BTreeMap<usize, usize> = BTreeMap::new();
        for s in &inner {
            *counts.entry(s.node).or_default() += 1;
        }
        if counts.values().any(|&c| c != q) {
            consistent = false;
        }
        let lo: Vec<f64> = (0..nc).map(|a| inner.iter().map(|s| s.y[a]).fold(f64::INFINITY, f64::min)).collect();
        let hi: Vec<f64> = (0..nc).map(|a| inner.iter().map(|s| s.y[a]).fold(f64::NEG_INFINITY, f64::max)).collect();
        let center = lo.iter().zip(&hi).map(|(a, b)| 0.5 * (a + b)).collect();
        stripes.push(Stripe { center, multiplicity: q, lo, hi });
    }
    stripes.sort_by(|a, b| {
        a.center.iter().zip(&b.center).map(|(x, y)| x.total_cmp(y)).find(|o| o.is_ne()).unwrap_or(std::cmp::Ordering::Equal)
    });
    let mut disjoint = true;
    for i in 0..stripes.len() {
        for j in i + 1..stripes.len() {
            let apart = stripes[i].center.iter().zip(&stripes[j].center).any(|(a, b)| (a - b).abs() >= 2.0 * sigma);
            disjoint &= apart;
        }
    }
    let q = t.q as f64;
    let per_round = ((q + 2.0) / (q + 1.0)).ln();
    let depth_bound = (t.q as f64 * (1.0 + log_e.max(1.0) / per_round)).ceil() as usize;
    Ok(StripeDecomposition {
        excess,
        sigma,
        eta,
        radius: r,
        inner_factor,
        inner_radius,
        inner_clipped,
        stripes,
        depth: search.depth,
        depth_bound,
        hypothesis_failure: search.failure,
        multiplicity_consistent: consistent,
        disjoint,
    })
}
