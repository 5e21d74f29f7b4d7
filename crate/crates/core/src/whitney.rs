//! Dyadic cubes, the refining procedure with its three stopping rules,
//! the contact set and checks of the Whitney axioms.

use crate::current::{RegionSpec, SheetCurrent};
use crate::error::{Error, Result};
use crate::geom::{plane_distance, Plane};
use crate::qvalued::eta;
use nalgebra::DVector;
use rayon::prelude::*;
use serde::Serialize;
use std::collections::{HashMap, HashSet, VecDeque};

/// Construction parameters and the constants derived from them.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Params {
    pub gamma1: f64,
    pub beta2: f64,
    pub delta2: f64,
    /// `M₀`.
    pub m0_cube: f64,
    pub n0: u32,
    pub c_e: f64,
    pub c_h: f64,
    pub epsilon0: f64,
    pub kappa: f64,
    pub gamma2: f64,
    pub j_max: u32,
    pub tie_tol: f64,
    /// `B_L = B_{ball_factor · r_L}(p_L)`; the reference construction uses 64.
    pub ball_factor: f64,
    /// Smallness constant for rotations and regraphing.
    pub c0: f64,
    /// `C♭`, stripe shrink constant.
    pub c_flat: f64,
    /// `C₀`, stripe width constant.
    pub c_stripe: f64,
}

impl Params {
    /// Defaults for base dimension `m`, derived quantities filled in.
    pub fn for_dim(m: usize) -> Params {
        let n0 = 2;
        let m0_cube = 4.0;
        let bf = (100.0 / (m0_cube * (m as f64).sqrt() * 2f64.powi(1 - n0 as i32))).floor() / 100.0;
        let mut p = Params {
            gamma1: 0.01,
            beta2: 0.0,
            delta2: 0.0,
            m0_cube,
            n0,
            c_e: 1.0,
            c_h: 1.0,
            epsilon0: 0.5,
            kappa: 0.0,
            gamma2: 0.0,
            j_max: 9,
            tie_tol: 1e-9,
            ball_factor: bf,
            c0: 0.2,
            c_flat: 2.0,
            c_stripe: 4.0,
        };
        p.derive(m);
        p
    }

    /// Recompute `β₂, δ₂, κ, γ₂` from `γ₁, ε₀`.
    pub fn derive(&mut self, m: usize) {
        self.beta2 = (1.0 / (2.0 * m as f64)).min(self.gamma1 / 100.0);
        self.delta2 = self.beta2 / 4.0;
        self.kappa = (self.epsilon0 / 2.0).min(self.beta2 / 4.0);
        self.gamma2 = self.gamma1 / 4.0;
    }

    pub fn validate(&self, m: usize) -> Result<()> {
        let close = |a: f64, b: f64| (a - b).abs() <= 1e-12 * b.abs().max(1e-300);
        let target = (1.0 / (2.0 * m as f64)).min(self.gamma1 / 100.0);
        if !(self.gamma1 > 0.0) {
            return Err(Error::Config("gamma1 must be positive".into()));
        }
        if !close(self.beta2, target) || !close(4.0 * self.delta2, target) {
            return Err(Error::Config(format!(
                "violated: beta2 = 4*delta2 = min{{1/(2m), gamma1/100}} (beta2 = {}, 4*delta2 = {}, min = {target})",
                self.beta2,
                4.0 * self.delta2
            )));
        }
        if self.m0_cube < 4.0 {
            return Err(Error::Config(format!("violated: M0 >= 4 (M0 = {})", self.m0_cube)));
        }
        let lhs = (m as f64).sqrt() * self.m0_cube * self.ball_factor * 2f64.powi(1 - self.n0 as i32);
        if lhs > 1.0 + 1e-12 {
            return Err(Error::Config(format!(
                "violated: sqrt(m) * M0 * ball_factor * 2^(1-N0) <= 1 (with ball_factor = 64 this is sqrt(m) M0 2^(7-N0) <= 1); got {lhs}"
            )));
        }
        if !close(self.kappa, (self.epsilon0 / 2.0).min(self.beta2 / 4.0)) {
            return Err(Error::Config("violated: kappa = min{epsilon0/2, beta2/4}".into()));
        }
        if !close(self.gamma2, self.gamma1 / 4.0) {
            return Err(Error::Config("violated: gamma2 = gamma1/4".into()));
        }
        if !(self.c_e > 0.0 && self.c_h > 0.0) {
            return Err(Error::Config("C_e and C_h must be positive".into()));
        }
        if self.m0_cube * (m as f64).sqrt() < 1.0 {
            return Err(Error::Config("violated: M0 * sqrt(m) >= 1".into()));
        }
        if self.j_max < self.n0 {
            return Err(Error::Config(format!("max level {} is below N0 = {}", self.j_max, self.n0)));
        }
        if !(self.ball_factor > 0.0 && self.tie_tol >= 0.0 && self.c0 > 0.0) {
            return Err(Error::Config("ball_factor, c0 must be positive and tie tolerance non-negative".into()));
        }
        Ok(())
    }

    /// Finest level whose half-side `ℓ` still spans two lattice cells.
    pub fn grid_level_limit(cells: usize) -> u32 {
        let mut j = 0;
        while 2f64.powi(-(j as i32 + 1)) >= 2.0 * 8.0 / cells as f64 {
            j += 1;
        }
        j
    }

    pub fn ex_threshold(&self, m0: f64, ell: f64) -> f64 {
        self.c_e * m0 * ell.powf(2.0 - 2.0 * self.delta2)
    }

    pub fn ht_threshold(&self, m0: f64, m: usize, ell: f64) -> f64 {
        self.c_h * m0.powf(1.0 / (2.0 * m as f64)) * ell.powf(1.0 + self.beta2)
    }
}

/// Closed dyadic cube `a + [0, 2ℓ]^m`, `a_i = -4 + index_i · 2^{1-j}`.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
pub struct DyadicCube {
    pub level: u32,
    pub index: Vec<i64>,
}

impl DyadicCube {
    pub fn new(level: u32, index: Vec<i64>) -> Self {
        DyadicCube { level, index }
    }

    pub fn m(&self) -> usize {
        self.index.len()
    }

    /// Half side `ℓ = 2^{-j}`.
    pub fn ell(&self) -> f64 {
        2f64.powi(-(self.level as i32))
    }

    pub fn side(&self) -> f64 {
        2.0 * self.ell()
    }

    pub fn per_axis(level: u32) -> i64 {
        1i64 << (level + 2)
    }

    pub fn lo(&self) -> Vec<f64> {
        self.index.iter().map(|&i| -4.0 + i as f64 * self.side()).collect()
    }

    pub fn hi(&self) -> Vec<f64> {
        self.index.iter().map(|&i| -4.0 + (i + 1) as f64 * self.side()).collect()
    }

    pub fn center(&self) -> Vec<f64> {
        self.index.iter().map(|&i| -4.0 + (i as f64 + 0.5) * self.side()).collect()
    }

    pub fn father(&self) -> Option<DyadicCube> {
        (self.level > 0).then(|| DyadicCube::new(self.level - 1, self.index.iter().map(|i| i.div_euclid(2)).collect()))
    }

    pub fn children(&self) -> Vec<DyadicCube> {
        let m = self.m();
        (0..1usize << m)
            .map(|b| {
                DyadicCube::new(
                    self.level + 1,
                    self.index.iter().enumerate().map(|(a, &i)| 2 * i + ((b >> a) & 1) as i64).collect(),
                )
            })
            .collect()
    }

    /// All cubes of level `j` in `[-4,4]^m`.
    pub fn level_cubes(m: usize, level: u32) -> Vec<DyadicCube> {
        let k = Self::per_axis(level);
        let total = (k as usize).pow(m as u32);
        (0..total)
            .map(|mut t| {
                let mut idx = vec![0i64; m];
                for a in (0..m).rev() {
                    idx[a] = (t % k as usize) as i64;
                    t /= k as usize;
                }
                DyadicCube::new(level, idx)
            })
            .collect()
    }

    pub fn bbox(&self) -> Bbox {
        Bbox { lo: self.lo(), hi: self.hi() }
    }

    /// Closed cubes share at least one point.
    pub fn touches(&self, other: &DyadicCube) -> bool {
        self.bbox().linf_gap(&other.bbox()) <= 0.0
    }

    /// `true` when `self ⊆ other`.
    pub fn inside(&self, other: &DyadicCube) -> bool {
        if self.level < other.level {
            return false;
        }
        let s = self.level - other.level;
        self.index.iter().zip(&other.index).all(|(a, b)| a >> s == *b)
    }

    /// Concentric cube scaled by `factor`, as a box.
    pub fn dilate(&self, factor: f64) -> Bbox {
        let c = self.center();
        let r = self.ell() * factor;
        Bbox { lo: c.iter().map(|v| v - r).collect(), hi: c.iter().map(|v| v + r).collect() }
    }
}

/// Axis-aligned box.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Bbox {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
}

impl Bbox {
    /// Largest per-axis gap (non-positive when the closed boxes meet).
    pub fn linf_gap(&self, o: &Bbox) -> f64 {
        (0..self.lo.len())
            .map(|a| (o.lo[a] - self.hi[a]).max(self.lo[a] - o.hi[a]))
            .fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn dist(&self, o: &Bbox) -> f64 {
        (0..self.lo.len())
            .map(|a| (o.lo[a] - self.hi[a]).max(self.lo[a] - o.hi[a]).max(0.0).powi(2))
            .sum::<f64>()
            .sqrt()
    }

    pub fn is_degenerate(&self) -> bool {
        self.lo.iter().zip(&self.hi).any(|(a, b)| b < a)
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        x.iter().enumerate().all(|(a, v)| *v >= self.lo[a] && *v <= self.hi[a])
    }

    pub fn intersect(&self, o: &Bbox) -> Bbox {
        Bbox {
            lo: self.lo.iter().zip(&o.lo).map(|(a, b)| a.max(*b)).collect(),
            hi: self.hi.iter().zip(&o.hi).map(|(a, b)| a.min(*b)).collect(),
        }
    }

    /// `self` minus the open box `o`, as closed boxes.
    pub fn subtract_open(&self, o: &Bbox) -> Vec<Bbox> {
        let m = self.lo.len();
        if (0..m).any(|a| o.lo[a] >= self.hi[a] || o.hi[a] <= self.lo[a]) {
            return vec![self.clone()];
        }
        let mut out = Vec::new();
        let mut rest = self.clone();
        for a in 0..m {
            if o.lo[a] > rest.lo[a] {
                let mut piece = rest.clone();
                piece.hi[a] = o.lo[a];
                out.push(piece);
                rest.lo[a] = o.lo[a];
            }
            if o.hi[a] < rest.hi[a] {
                let mut piece = rest.clone();
                piece.lo[a] = o.hi[a];
                out.push(piece);
                rest.hi[a] = o.hi[a];
            }
        }
        out
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    /// Still refining (`S`).
    None,
    Excess,
    Height,
    Neighbor,
}

impl StopReason {
    pub fn is_stopped(self) -> bool {
        self != StopReason::None
    }

    pub fn code(self) -> &'static str {
        match self {
            StopReason::None => "S",
            StopReason::Excess => "EX",
            StopReason::Height => "HT",
            StopReason::Neighbor => "NN",
        }
    }
}

/// Everything measured for one cube.
#[derive(Clone, Debug, Serialize)]
pub struct CubeRecord {
    pub cube: DyadicCube,
    pub stop: StopReason,
    /// `p_L = (x_L, y_L)`.
    pub p_l: Vec<f64>,
    /// Radius of `B_L`.
    pub ball_radius: f64,
    pub excess: f64,
    pub height: f64,
    pub ex_threshold: f64,
    pub ht_threshold: f64,
    pub pi_hat: Plane,
    pub pi_l: Plane,
    /// `B_L` reaches beyond the sampled domain.
    pub clipped: bool,
}

#[derive(Clone, Debug, Serialize)]
pub struct WhitneyDecomposition {
    pub m: usize,
    pub d: usize,
    pub params: Params,
    pub m0: f64,
    /// Last level evaluated.
    pub j_max: u32,
    /// Records sorted by `(level, index)`.
    pub records: Vec<CubeRecord>,
    /// Some cube was still refining at `j_max`.
    pub truncated: bool,
}

/// Pick `y_L`: the fiber point over `x_L` closest to the fiber average,
/// ties resolved lexicographically.
pub fn center_point(t: &SheetCurrent, x: &[f64]) -> Result<Vec<f64>> {
    let mut p = DVector::zeros(t.d());
    for a in 0..t.m {
        p[a] = x[a];
    }
    let s = t.slice_fiber(&p, &Plane::standard(t.d(), t.m))?;
    let mean = eta(&s.coords);
    let mut best: Option<(f64, &[f64])> = None;
    for pt in s.coords.points() {
        let d2: f64 = pt.iter().zip(&mean).map(|(a, b)| (a - b).powi(2)).sum();
        best = match best {
            None => Some((d2, pt)),
            Some((bd, bp)) => {
                let tie = (d2 - bd).abs() <= 1e-12 * (1.0 + bd);
                if (tie && pt.partial_cmp(bp) == Some(std::cmp::Ordering::Less)) || (!tie && d2 < bd) {
                    Some((d2, pt))
                } else {
                    Some((bd, bp))
                }
            }
        };
    }
    let y = best.expect("fiber has Q ≥ 1 points").1;
    Ok(x.iter().chain(y.iter()).cloned().collect())
}

/// `(π̂_L, π_L)` for a ball: the optimal plane and its projection to `T_{p_L}Σ`.
pub fn reference_plane(
    t: &SheetCurrent,
    p_l: &[f64],
    radius: f64,
    tie_tol: f64,
) -> Result<(crate::current::OptimalPlane, Plane)> {
    let ball = RegionSpec::ball(DVector::from_column_slice(p_l), radius);
    let opt = t.optimal_plane(&ball, tie_tol)?;
    let pi_l = crate::current::align_with_base(t.ambient.project_plane(p_l, &opt.plane)?, t.m);
    Ok((opt, pi_l))
}

fn evaluate(t: &SheetCurrent, params: &Params, m0: f64, cube: &DyadicCube) -> Result<CubeRecord> {
    let m = t.m;
    let ell = cube.ell();
    let x = cube.center();
    let p_l = center_point(t, &x)?;
    let r_l = params.m0_cube * (m as f64).sqrt() * ell;
    let radius = params.ball_factor * r_l;
    let (opt, pi_l) = reference_plane(t, &p_l, radius, params.tie_tol)?;
    Ok(CubeRecord {
        cube: cube.clone(),
        stop: StopReason::None,
        p_l,
        ball_radius: radius,
        excess: opt.excess,
        height: opt.height,
        ex_threshold: params.ex_threshold(m0, ell),
        ht_threshold: params.ht_threshold(m0, m, ell),
        pi_hat: opt.plane,
        pi_l,
        clipped: opt.clipped,
    })
}

/// Run the level-synchronous refining procedure.
pub fn refine(t: &SheetCurrent, params: &Params) -> Result<WhitneyDecomposition> {
    let m = t.m;
    params.validate(m)?;
    let j_max = params.j_max.min(Params::grid_level_limit(t.cells));
    if j_max < params.n0 {
        return Err(Error::Config(format!(
            "grid of {} cells resolves levels up to {j_max}, below N0 = {}",
            t.cells, params.n0
        )));
    }
    let m0 = t.m0;
    let mut records: Vec<CubeRecord> = Vec::new();
    let mut current: Vec<DyadicCube> = DyadicCube::level_cubes(m, params.n0);
    let mut prev_w: Vec<DyadicCube> = Vec::new();
    let mut truncated = false;
    for j in params.n0..=j_max {
        let mut level: Vec<CubeRecord> =
            current.par_iter().map(|c| evaluate(t, params, m0, c)).collect::<Result<Vec<_>>>()?;
        for r in &mut level {
            r.stop = if r.excess > r.ex_threshold {
                StopReason::Excess
            } else if r.height > r.ht_threshold {
                StopReason::Height
            } else if prev_w.iter().any(|w| w.touches(&r.cube)) {
                StopReason::Neighbor
            } else {
                StopReason::None
            };
        }
        prev_w = level.iter().filter(|r| r.stop.is_stopped()).map(|r| r.cube.clone()).collect();
        current = level.iter().filter(|r| !r.stop.is_stopped()).flat_map(|r| r.cube.children()).collect();
        if j == j_max && !current.is_empty() {
            truncated = true;
        }
        records.extend(level);
    }
    records.sort_by(|a, b| a.cube.cmp(&b.cube));
    Ok(WhitneyDecomposition { m, d: t.d(), params: params.clone(), m0, j_max, records, truncated })
}

/// Validation outcome; every `*_violations` count must be zero for a
/// Whitney decomposition.
#[derive(Clone, Debug, Default, Serialize)]
pub struct WhitneyValidation {
    pub cover_violations: usize,
    pub overlap_violations: usize,
    pub ratio_violations: usize,
    pub separation_violations: usize,
    pub min_separation_margin: f64,
    pub father_violations: usize,
    pub exclusivity_violations: usize,
    pub ancestor_violations: usize,
    pub no_stops_below_n0_plus_6: bool,
    pub max_ex_ratio_w: f64,
    pub max_ht_ratio_w: f64,
    pub w_count: usize,
    pub gamma_boxes: usize,
    pub messages: Vec<String>,
}

impl WhitneyValidation {
    pub fn passes(&self) -> bool {
        self.cover_violations == 0
            && self.overlap_violations == 0
            && self.ratio_violations == 0
            && self.separation_violations == 0
            && self.father_violations == 0
            && self.exclusivity_violations == 0
            && self.ancestor_violations == 0
    }
}

impl WhitneyDecomposition {
    /// Hand-built decomposition from `(cube, stop)` pairs; measured fields are NaN.
    pub fn from_parts(m: usize, params: Params, j_max: u32, cubes: Vec<(DyadicCube, StopReason)>) -> Self {
        let d = m + 1;
        let mut records: Vec<CubeRecord> = cubes
            .into_iter()
            .map(|(cube, stop)| CubeRecord {
                p_l: cube.center().into_iter().chain(std::iter::once(0.0)).collect(),
                cube,
                stop,
                ball_radius: f64::NAN,
                excess: f64::NAN,
                height: f64::NAN,
                ex_threshold: f64::NAN,
                ht_threshold: f64::NAN,
                pi_hat: Plane::standard(d, m),
                pi_l: Plane::standard(d, m),
                clipped: false,
            })
            .collect();
        records.sort_by(|a, b| a.cube.cmp(&b.cube));
        let truncated = records.iter().any(|r| r.cube.level == j_max && !r.stop.is_stopped());
        WhitneyDecomposition { m, d, params, m0: f64::NAN, j_max, records, truncated }
    }

    pub fn w_records(&self) -> impl Iterator<Item = &CubeRecord> {
        self.records.iter().filter(|r| r.stop.is_stopped())
    }

    pub fn by_reason(&self, reason: StopReason) -> impl Iterator<Item = &CubeRecord> {
        self.records.iter().filter(move |r| r.stop == reason)
    }

    pub fn level(&self, j: u32) -> impl Iterator<Item = &CubeRecord> {
        self.records.iter().filter(move |r| r.cube.level == j)
    }

    pub fn record(&self, cube: &DyadicCube) -> Option<&CubeRecord> {
        self.records.binary_search_by(|r| r.cube.cmp(cube)).ok().map(|i| &self.records[i])
    }

    pub fn w_is_empty(&self) -> bool {
        self.w_records().next().is_none()
    }

    /// `P^j = S^j ∪ W^{N₀} ∪ … ∪ W^j`.
    pub fn active_at(&self, j: u32) -> Vec<&CubeRecord> {
        self.records
            .iter()
            .filter(|r| (r.cube.level == j && !r.stop.is_stopped()) || (r.cube.level <= j && r.stop.is_stopped()))
            .collect()
    }

    /// Closed boxes whose union is `Γ`: cubes still refining at the last
    /// level, minus the open bands of width `2ℓ(K)` around the stopped cubes
    /// `K` of that level, which further neighbour-only refinement would fill.
    pub fn gamma_boxes(&self) -> Vec<Bbox> {
        let last: Vec<&CubeRecord> = self.level(self.j_max).collect();
        let bands: Vec<Bbox> =
            last.iter().filter(|r| r.stop.is_stopped()).map(|r| r.cube.dilate(3.0)).collect();
        let mut out = Vec::new();
        for r in last.iter().filter(|r| !r.stop.is_stopped()) {
            let mut pieces = vec![r.cube.bbox()];
            for b in &bands {
                if b.linf_gap(&r.cube.bbox()) >= 0.0 {
                    continue;
                }
                pieces = pieces.into_iter().flat_map(|p| p.subtract_open(b)).collect();
            }
            out.extend(pieces.into_iter().filter(|p| !p.is_degenerate()));
        }
        out
    }

    /// Check (w1)-(w3), the separation estimate, the father rule and the
    /// stopping inequalities.
    pub fn validate(&self) -> WhitneyValidation {
        let mut v = WhitneyValidation { no_stops_below_n0_plus_6: true, min_separation_margin: f64::INFINITY, ..Default::default() };
        let m = self.m;
        let j = self.j_max;
        let k = DyadicCube::per_axis(j) as usize;
        let cells = k.pow(m as u32);
        let mut owners = vec![0u32; cells];
        let mut seen = HashSet::new();
        let w: Vec<&CubeRecord> = self.w_records().collect();
        v.w_count = w.len();
        let raster_index = |idx: &[i64]| idx.iter().fold(0usize, |acc, &i| acc * k + i as usize);
        for r in &self.records {
            if !seen.insert(r.cube.clone()) {
                v.exclusivity_violations += 1;
                v.messages.push(format!("cube {:?} recorded twice", r.cube));
            }
            if r.cube.level > j {
                continue;
            }
            let counts = r.stop.is_stopped() || r.cube.level == j;
            if !counts {
                continue;
            }
            let s = j - r.cube.level;
            let span = 1i64 << s;
            let sub = (span as usize).pow(m as u32);
            for t in 0..sub {
                let mut rem = t;
                let mut idx = vec![0i64; m];
                for a in 0..m {
                    idx[a] = (r.cube.index[a] << s) + (rem % span as usize) as i64;
                    rem /= span as usize;
                }
                if idx.iter().all(|&i| i >= 0 && (i as usize) < k) {
                    owners[raster_index(&idx)] += 1;
                }
            }
        }
        for (c, &o) in owners.iter().enumerate() {
            if o == 0 {
                v.cover_violations += 1;
                if v.messages.len() < 20 {
                    v.messages.push(format!("raster cell {c} at level {j} is covered neither by W nor by the contact set"));
                }
            } else if o > 1 {
                v.overlap_violations += 1;
                if v.messages.len() < 20 {
                    v.messages.push(format!("raster cell {c} at level {j} is claimed {o} times"));
                }
            }
        }
        for a in 0..w.len() {
            for b in a + 1..w.len() {
                let (ca, cb) = (&w[a].cube, &w[b].cube);
                if ca.touches(cb) {
                    let ratio = cb.ell() / ca.ell();
                    if !(0.5..=2.0).contains(&ratio) {
                        v.ratio_violations += 1;
                        v.messages.push(format!("touching cubes {ca:?} and {cb:?} have side ratio {ratio}"));
                    }
                }
            }
        }
        let gamma = self.gamma_boxes();
        v.gamma_boxes = gamma.len();
        for r in &w {
            let bb = r.cube.bbox();
            let sep = gamma.iter().map(|g| g.dist(&bb)).fold(f64::INFINITY, f64::min);
            let margin = sep - 2.0 * r.cube.ell();
            v.min_separation_margin = v.min_separation_margin.min(margin);
            if margin < -1e-12 {
                v.separation_violations += 1;
                v.messages.push(format!("sep(Γ, {:?}) = {sep} < 2ℓ", r.cube));
            }
        }
        let index: HashMap<&DyadicCube, StopReason> = self.records.iter().map(|r| (&r.cube, r.stop)).collect();
        let n0 = self.params.n0;
        for r in &self.records {
            if r.cube.level > n0 {
                let father = r.cube.father().expect("level > 0");
                if index.get(&father) != Some(&StopReason::None) {
                    v.father_violations += 1;
                    v.messages.push(format!("father of {:?} is not a refining cube", r.cube));
                }
            }
            if r.cube.level < n0 {
                v.father_violations += 1;
                v.messages.push(format!("cube {:?} lies above level N0", r.cube));
            }
            if r.stop.is_stopped() && r.cube.level <= n0 + 6 {
                v.no_stops_below_n0_plus_6 = false;
            }
            if r.excess.is_nan() {
                continue;
            }
            let ell = r.cube.ell();
            if r.stop == StopReason::None && (r.excess > r.ex_threshold || r.height > r.ht_threshold) {
                v.ancestor_violations += 1;
                v.messages.push(format!("refining cube {:?} exceeds a stopping threshold", r.cube));
            }
            if r.stop.is_stopped() {
                let p = &self.params;
                v.max_ex_ratio_w = v.max_ex_ratio_w.max(r.excess / (self.m0 * ell.powf(2.0 - 2.0 * p.delta2)));
                v.max_ht_ratio_w = v
                    .max_ht_ratio_w
                    .max(r.height / (self.m0.powf(1.0 / (2.0 * m as f64)) * ell.powf(1.0 + p.beta2)));
            }
        }
        if v.min_separation_margin == f64::INFINITY {
            v.min_separation_margin = f64::NAN;
        }
        v
    }

    /// Partition of the neighbour-stopped cubes into domains of influence.
    pub fn domains_of_influence(&self) -> DomainsOfInfluence {
        let mut owners: Vec<&CubeRecord> = self.by_reason(StopReason::Excess).collect();
        owners.sort_by(|a, b| a.cube.level.cmp(&b.cube.level).then(a.cube.cmp(&b.cube)));
        let wn: Vec<&CubeRecord> = self.by_reason(StopReason::Neighbor).collect();
        let mut assigned: HashMap<DyadicCube, usize> = HashMap::new();
        let mut domains = Vec::new();
        for (oi, o) in owners.iter().enumerate() {
            let mut members = Vec::new();
            let mut queue = VecDeque::from([o.cube.clone()]);
            let mut visited = HashSet::new();
            while let Some(cur) = queue.pop_front() {
                for h in &wn {
                    if h.cube.level == cur.level + 1 && h.cube.touches(&cur) && visited.insert(h.cube.clone()) {
                        queue.push_back(h.cube.clone());
                        if !assigned.contains_key(&h.cube) {
                            assigned.insert(h.cube.clone(), oi);
                            members.push(h.cube.clone());
                        }
                    }
                }
            }
            let x = o.cube.center();
            let bound = 3.0 * (self.m as f64).sqrt() * o.cube.ell();
            let mut worst: f64 = 0.0;
            for h in &members {
                let bb = h.bbox();
                let far: f64 = (0..self.m)
                    .map(|a| (bb.lo[a] - x[a]).abs().max((bb.hi[a] - x[a]).abs()).powi(2))
                    .sum::<f64>()
                    .sqrt();
                worst = worst.max(far / bound);
            }
            domains.push(Domain { owner: o.cube.clone(), members, containment_ratio: worst });
        }
        let orphans = wn.iter().filter(|h| !assigned.contains_key(&h.cube)).map(|h| h.cube.clone()).collect();
        DomainsOfInfluence { domains, orphans }
    }

    /// Largest `|π_H − π_L|` between each cube and its father, with `ℓ`.
    pub fn father_tilts(&self) -> Vec<(f64, f64)> {
        self.records
            .iter()
            .filter_map(|r| {
                let f = self.record(&r.cube.father()?)?;
                Some((r.cube.ell(), plane_distance(&r.pi_l, &f.pi_l).ok()?))
            })
            .collect()
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct Domain {
    pub owner: DyadicCube,
    pub members: Vec<DyadicCube>,
    /// `max |y − x_L| / (3√m ℓ(L))` over member cubes; at most one when the containment holds.
    pub containment_ratio: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct DomainsOfInfluence {
    pub domains: Vec<Domain>,
    pub orphans: Vec<DyadicCube>,
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cube_family_relations() {
        let c = DyadicCube::new(3, vec![5, 2]);
        assert_eq!(c.side(), 0.25);
        assert_eq!(c.lo(), vec![-2.75, -3.5]);
        for s in c.children() {
            assert_eq!(s.father().unwrap(), c);
            assert!(s.inside(&c));
            assert_eq!(c.side() / s.side(), 2.0);
        }
        assert_eq!(DyadicCube::level_cubes(2, 2).len(), 256);
    }

    #[test]
    fn default_params_are_valid() {
        for m in 1..=3 {
            Params::for_dim(m).validate(m).unwrap();
        }
        let mut p = Params::for_dim(2);
        p.delta2 *= 2.0;
        let err = p.validate(2).unwrap_err().to_string();
        assert!(err.contains("beta2 = 4*delta2 = min{1/(2m), gamma1/100}"), "{err}");
    }

    #[test]
    fn grid_limits() {
        assert_eq!(Params::grid_level_limit(256), 4);
        assert_eq!(Params::grid_level_limit(512), 5);
    }

    #[test]
    fn box_subtraction_preserves_area() {
        let a = Bbox { lo: vec![0.0, 0.0], hi: vec![2.0, 2.0] };
        let b = Bbox { lo: vec![0.5, -1.0], hi: vec![1.0, 1.0] };
        let area: f64 = a.subtract_open(&b).iter().map(|p| (p.hi[0] - p.lo[0]) * (p.hi[1] - p.lo[1])).sum();
        assert!((area - 3.5).abs() < 1e-15);
    }
}
