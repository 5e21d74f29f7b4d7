//! Checks on closed-form functions: the decay inequality for harmonic
//! polynomials and the two interpolation inequalities.

use super::{fitted, Report};
use crate::current::gamma_half_int;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::collections::BTreeMap;

/// Real polynomial in `m` variables, keyed by exponent vectors.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Poly {
    pub m: usize,
    pub terms: BTreeMap<Vec<u32>, f64>,
}

impl Poly {
    pub fn zero(m: usize) -> Self {
        Poly { m, terms: BTreeMap::new() }
    }

    pub fn constant(m: usize, c: f64) -> Self {
        let mut p = Poly::zero(m);
        p.add_term(vec![0; m], c);
        p
    }

    /// `Σ_a v_a x_a`.
    pub fn linear(v: &[f64]) -> Self {
        let m = v.len();
        let mut p = Poly::zero(m);
        for (a, &c) in v.iter().enumerate() {
            let mut e = vec![0; m];
            e[a] = 1;
            p.add_term(e, c);
        }
        p
    }

    pub fn add_term(&mut self, e: Vec<u32>, c: f64) {
        if c == 0.0 {
            return;
        }
        let v = self.terms.entry(e).or_insert(0.0);
        *v += c;
    }

    pub fn add(&self, o: &Poly) -> Poly {
        let mut p = self.clone();
        for (e, &c) in &o.terms {
            p.add_term(e.clone(), c);
        }
        p
    }

    pub fn scale(&self, s: f64) -> Poly {
        Poly { m: self.m, terms: self.terms.iter().map(|(e, c)| (e.clone(), c * s)).collect() }
    }

    pub fn mul(&self, o: &Poly) -> Poly {
        let mut p = Poly::zero(self.m);
        for (e1, c1) in &self.terms {
            for (e2, c2) in &o.terms {
                let e: Vec<u32> = e1.iter().zip(e2).map(|(a, b)| a + b).collect();
                p.add_term(e, c1 * c2);
            }
        }
        p
    }

    pub fn derivative(&self, axis: usize) -> Poly {
        let mut p = Poly::zero(self.m);
        for (e, &c) in &self.terms {
            if e[axis] > 0 {
                let mut f = e.clone();
                f[axis] -= 1;
                p.add_term(f, c * e[axis] as f64);
            }
        }
        p
    }

    pub fn laplacian(&self) -> Poly {
        (0..self.m).fold(Poly::zero(self.m), |acc, a| acc.add(&self.derivative(a).derivative(a)))
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        self.terms.iter().map(|(e, c)| c * e.iter().zip(x).map(|(&k, v)| v.powi(k as i32)).product::<f64>()).sum()
    }

    pub fn max_abs_coeff(&self) -> f64 {
        self.terms.values().fold(0.0, |a, c| a.max(c.abs()))
    }

    /// `∫_{B_R} p` over the centered ball, exact.
    pub fn ball_integral(&self, r: f64) -> f64 {
        let m = self.m;
        self.terms
            .iter()
            .filter(|(e, _)| e.iter().all(|k| k % 2 == 0))
            .map(|(e, c)| {
                let deg: usize = e.iter().map(|&k| k as usize).sum();
                let sphere = 2.0 * e.iter().map(|&k| gamma_half_int(k as usize + 1)).product::<f64>()
                    / gamma_half_int(deg + m);
                c * sphere * r.powi((deg + m) as i32) / (deg + m) as f64
            })
            .sum()
    }
}

/// `(Re, Im)` of `((u + iv)·x)^k`.
fn complex_power(u: &[f64], v: &[f64], k: u32) -> (Poly, Poly) {
    let m = u.len();
    let (lu, lv) = (Poly::linear(u), Poly::linear(v));
    let mut re = Poly::constant(m, 1.0);
    let mut im = Poly::zero(m);
    for _ in 0..k {
        let nr = re.mul(&lu).add(&im.mul(&lv).scale(-1.0));
        let ni = re.mul(&lv).add(&im.mul(&lu));
        re = nr;
        im = ni;
    }
    (re, im)
}

/// Random orthonormal pair in `R^m`, `m ≥ 2`.
fn orthonormal_pair(rng: &mut ChaCha8Rng, m: usize) -> (Vec<f64>, Vec<f64>) {
    loop {
        let a: Vec<f64> = (0..m).map(|_| rng.random_range(-1.0..1.0)).collect();
        let b: Vec<f64> = (0..m).map(|_| rng.random_range(-1.0..1.0)).collect();
        let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
        if na < 1e-3 {
            continue;
        }
        let u: Vec<f64> = a.iter().map(|x| x / na).collect();
        let d: f64 = u.iter().zip(&b).map(|(x, y)| x * y).sum();
        let w: Vec<f64> = b.iter().zip(&u).map(|(y, x)| y - d * x).collect();
        let nw = w.iter().map(|x| x * x).sum::<f64>().sqrt();
        if nw < 1e-3 {
            continue;
        }
        return (u, w.iter().map(|x| x / nw).collect());
    }
}

/// Random harmonic polynomial of degree at most `degree_max`: a
/// combination of real and imaginary parts of `(a·x)^k` with `a` isotropic.
pub fn random_harmonic(rng: &mut ChaCha8Rng, m: usize, degree_max: u32) -> Poly {
    let mut p = Poly::constant(m, rng.random_range(-1.0..1.0));
    for k in 1..=degree_max {
        let (u, v) = orthonormal_pair(rng, m);
        let (re, im) = complex_power(&u, &v, k);
        p = p.add(&re.scale(rng.random_range(-1.0..1.0))).add(&im.scale(rng.random_range(-1.0..1.0)));
    }
    p
}

/// `(∫_{B_{1+λ}} |Du − Du(0)|², 2^{−m−2}(1+λ)^{m+2} ∫_{B₂} |Du|²)`.
pub fn harmonic_decay_sides(u: &Poly, lambda: f64) -> (f64, f64) {
    let m = u.m;
    let zero = vec![0.0; m];
    let (mut lhs, mut dir) = (0.0, 0.0);
    for a in 0..m {
        let g = u.derivative(a);
        let g0 = g.add(&Poly::constant(m, -g.eval(&zero)));
        lhs += g0.mul(&g0).ball_integral(1.0 + lambda);
        dir += g.mul(&g).ball_integral(2.0);
    }
    let rhs = 2f64.powi(-(m as i32) - 2) * (1.0 + lambda).powi(m as i32 + 2) * dir;
    (lhs, rhs)
}

/// `λ` with `(1+λ)^{m+2} = 2^{δ₂/2}`, inside the admissible range.
pub fn decay_lambda(m: usize, delta2: f64) -> f64 {
    2f64.powf(0.5 * delta2 / (m as f64 + 2.0)) - 1.0
}

/// Decay inequality on `trials` random harmonic polynomials per dimension
/// in `dims`, with relative margin `(rhs − lhs)/rhs ≥ −1e−8`.
pub fn harmonic_decay_check(dims: &[usize], degree_max: u32, trials: usize, delta2: f64, seed: u64) -> Report {
    let mut rep = Report::new("harmonic_decay");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for &m in dims {
        let lambda = decay_lambda(m, delta2);
        let mut worst = f64::INFINITY;
        let mut max_lap: f64 = 0.0;
        for _ in 0..trials {
            let u = random_harmonic(&mut rng, m, degree_max);
            max_lap = max_lap.max(u.laplacian().max_abs_coeff());
            let (l, r) = harmonic_decay_sides(&u, lambda);
            worst = worst.min(if r > 0.0 { (r - l) / r } else { 0.0 });
        }
        rep.info(&format!("harmonic_decay.m{m}.laplacian"), max_lap, "largest Laplacian coefficient of the samples");
        rep.assert(
            &format!("harmonic_decay.m{m}.min_margin"),
            worst >= -1e-8,
            worst,
            Some(-1e-8),
            format!("{trials} polynomials, degree <= {degree_max}, lambda = {lambda:.3e}"),
        );
    }
    if dims.contains(&2) {
        let (re, _) = complex_power(&[1.0, 0.0], &[0.0, 1.0], 2);
        let lambda = decay_lambda(2, delta2);
        let (l, r) = harmonic_decay_sides(&re, lambda);
        rep.assert("harmonic_decay.m2.sharp_mode", (l - r).abs() <= 1e-12 * r, (r - l) / r, Some(0.0), "Re((x+iy)^2) attains equality");
    }
    rep
}

/// Closed-form test function for the interpolation inequalities.
#[derive(Clone, Debug)]
pub enum CorpusFn {
    /// `p(x)·exp(−α|x|²)`.
    PolyGauss { p: Poly, alpha: f64 },
    /// `a·cos(ω·x + φ)`.
    Wave { amp: f64, omega: Vec<f64>, phase: f64 },
}

impl CorpusFn {
    pub fn eval(&self, x: &[f64]) -> f64 {
        match self {
            CorpusFn::PolyGauss { p, alpha } => p.eval(x) * (-alpha * x.iter().map(|v| v * v).sum::<f64>()).exp(),
            CorpusFn::Wave { amp, omega, phase } => {
                amp * (omega.iter().zip(x).map(|(a, b)| a * b).sum::<f64>() + phase).cos()
            }
        }
    }

    pub fn derivative(&self, axis: usize) -> CorpusFn {
        match self {
            CorpusFn::PolyGauss { p, alpha } => {
                let mut e = vec![0; p.m];
                e[axis] = 1;
                let mut xa = Poly::zero(p.m);
                xa.add_term(e, 1.0);
                CorpusFn::PolyGauss { p: p.derivative(axis).add(&xa.mul(p).scale(-2.0 * alpha)), alpha: *alpha }
            }
            CorpusFn::Wave { amp, omega, phase } => CorpusFn::Wave {
                amp: amp * omega[axis],
                omega: omega.clone(),
                phase: phase + std::f64::consts::FRAC_PI_2,
            },
        }
    }
}

fn random_poly(rng: &mut ChaCha8Rng, m: usize, deg: u32) -> Poly {
    let mut p = Poly::zero(m);
    let n = (deg as usize + 1).pow(m as u32);
    for k in 0..n {
        let mut rem = k;
        let e: Vec<u32> = (0..m)
            .map(|_| {
                let v = (rem % (deg as usize + 1)) as u32;
                rem /= deg as usize + 1;
                v
            })
            .collect();
        if e.iter().sum::<u32>() <= deg {
            p.add_term(e, rng.random_range(-1.0..1.0));
        }
    }
    p
}

/// Deterministic corpus: polynomials, gaussian-weighted polynomials and waves.
pub fn corpus(m: usize, size: usize, seed: u64) -> Vec<CorpusFn> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..size)
        .map(|i| match i % 3 {
            0 => CorpusFn::PolyGauss { p: random_poly(&mut rng, m, 1 + (i as u32 / 3) % 4), alpha: 0.0 },
            1 => CorpusFn::PolyGauss { p: random_poly(&mut rng, m, (i as u32 / 3) % 3), alpha: rng.random_range(0.2..2.0) },
            _ => CorpusFn::Wave {
                amp: rng.random_range(0.5..1.5),
                omega: (0..m).map(|_| rng.random_range(-3.0..3.0)).collect(),
                phase: rng.random_range(0.0..std::f64::consts::TAU),
            },
        })
        .collect()
}

fn ball_lattice(m: usize, s: f64, per_axis: usize) -> (Vec<Vec<f64>>, f64) {
    let h = 2.0 * s / per_axis as f64;
    let mut pts = Vec::new();
    let n = per_axis.pow(m as u32);
    for k in 0..n {
        let mut rem = k;
        let x: Vec<f64> = (0..m)
            .map(|_| {
                let i = rem % per_axis;
                rem /= per_axis;
                -s + (i as f64 + 0.5) * h
            })
            .collect();
        if x.iter().map(|v| v * v).sum::<f64>() < s * s {
            pts.push(x);
        }
    }
    (pts, h.powi(m as i32))
}

/// All `j`-th partials of `f`, in lexicographic multi-index order.
fn partials(f: &CorpusFn, m: usize, j: usize) -> Vec<CorpusFn> {
    let mut cur = vec![f.clone()];
    for _ in 0..j {
        cur = cur.iter().flat_map(|g| (0..m).map(move |a| g.derivative(a))).collect();
    }
    cur
}

/// Largest constant over `fs` and `j ≤ 3` in
/// `‖D^j f‖_{C⁰(B_r)} ≤ C r^{−m−j}‖f‖_{L¹(B_s)} + C r^{3+κ−j}[D³f]_{κ,B_s}`.
pub fn interpolation_constant(fs: &[CorpusFn], m: usize, r: f64, s: f64, kappa: f64) -> f64 {
    let per_axis = if m == 1 { 400 } else { 48 };
    let (pts, vol) = ball_lattice(m, s, per_axis);
    let inner: Vec<usize> = (0..pts.len()).filter(|&i| pts[i].iter().map(|v| v * v).sum::<f64>() < r * r).collect();
    let mut worst: f64 = 0.0;
    for f in fs {
        let l1: f64 = pts.iter().map(|x| f.eval(x).abs()).sum::<f64>() * vol;
        let d3 = partials(f, m, 3);
        let d3v: Vec<Vec<f64>> = pts.iter().map(|x| d3.iter().map(|g| g.eval(x)).collect()).collect();
        let stride = (pts.len() / 150).max(1);
        let mut semi: f64 = 0.0;
        for i in (0..pts.len()).step_by(stride) {
            for k in 0..pts.len() {
                if k == i {
                    continue;
                }
                let dx = pts[i].iter().zip(&pts[k]).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
                let dv = d3v[i].iter().zip(&d3v[k]).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
                semi = semi.max(dv / dx.powf(kappa));
            }
        }
        for j in 0..=3usize {
            let dj = partials(f, m, j);
            let sup = inner
                .iter()
                .map(|&i| dj.iter().map(|g| g.eval(&pts[i]).powi(2)).sum::<f64>().sqrt())
                .fold(0.0, f64::max);
            let rhs = r.powi(-(m as i32) - j as i32) * l1 + r.powf(3.0 + kappa - j as f64) * semi;
            worst = worst.max(fitted(sup, rhs));
        }
    }
    worst
}

/// Interpolation inequalities: fitted constants per `(m, s/r)` for a corpus
/// of `samples` functions and for its doubling; the doubling may change the
/// constant by at most a factor 2. Also the quadratic case of the `L∞`
/// gradient bound.
pub fn interpolation_check(dims: &[usize], samples: usize, kappa: f64, seed: u64) -> Report {
    let mut rep = Report::new("interpolation");
    for &m in dims {
        for ratio in [1.5, 2.0] {
            let big = corpus(m, 2 * samples, seed);
            let c1 = interpolation_constant(&big[..samples], m, 1.0, ratio, kappa);
            let c2 = interpolation_constant(&big, m, 1.0, ratio, kappa);
            let key = format!("interpolation.m{m}.s_over_r_{ratio}");
            rep.info(&format!("{key}.constant"), c2, format!("fitted over {} functions", 2 * samples));
            let stable = c1.is_finite() && c2.is_finite() && c2 <= 2.0 * c1 && c1 > 0.0;
            rep.assert(&format!("{key}.stability"), stable, fitted(c2, c1), Some(2.0), "constant ratio after doubling the corpus");
        }
        let mut q = Poly::zero(m);
        for a in 0..m {
            let mut e = vec![0; m];
            e[a] = 2;
            q.add_term(e, 1.0);
        }
        let c = quadratic_interpolation_constant(&q, 2.0, 1.0);
        rep.info(&format!("interpolation.m{m}.quadratic_constant"), c, "rho^-1 |psi|_inf + |D psi|_inf over A for psi = |x|^2, rho = 2, r = 1");
    }
    rep
}

/// Smallest admissible `A` for a quadratic `ψ` on `B_ρ` and the resulting
/// constant `(ρ^{−1}‖ψ‖_{L∞(B_r)} + ‖Dψ‖_{L∞(B_r)}) / A`. The sup norms are
/// taken on a fine lattice of `B_r`.
pub fn quadratic_interpolation_constant(psi: &Poly, rho: f64, r: f64) -> f64 {
    let m = psi.m;
    let lap = psi.laplacian().eval(&vec![0.0; m]).abs();
    let (pts, vol) = ball_lattice(m, rho, if m == 1 { 4000 } else { 400 });
    let l1: f64 = pts.iter().map(|x| psi.eval(x).abs()).sum::<f64>() * vol;
    let a = (l1 / rho.powi(m as i32 + 1)).max(rho * lap);
    let grads: Vec<Poly> = (0..m).map(|k| psi.derivative(k)).collect();
    let mut sup: f64 = 0.0;
    let mut dsup: f64 = 0.0;
    let (inner, _) = ball_lattice(m, r, if m == 1 { 4000 } else { 400 });
    let mut probe = inner;
    for k in 0..m {
        let mut e = vec![0.0; m];
        e[k] = r;
        probe.push(e.clone());
        e[k] = -r;
        probe.push(e);
    }
    for x in &probe {
        sup = sup.max(psi.eval(x).abs());
        dsup = dsup.max(grads.iter().map(|g| g.eval(x).powi(2)).sum::<f64>().sqrt());
    }
    fitted(sup / rho + dsup, a)
}
