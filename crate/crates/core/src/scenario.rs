//! Closed-form multivalued graphs used as synthetic inputs.

use crate::current::{AmbientManifold, PsiMap, SheetCurrent};
use crate::error::{Error, Result};
use serde::Serialize;

/// Built-in sheet generators. Heights are returned sheet-major.
#[derive(Clone, Debug, PartialEq, Serialize)]
#[serde(tag = "name", rename_all = "snake_case")]
pub enum Generator {
    /// `Q` coincident flat sheets at height `c` (every normal component).
    FlatQ { c: f64 },
    /// Two sheets `±(d/2 + g)`, `g = a·sin(ω x₁)·cos(ω x₂)` (the cosine factor only for `m ≥ 2`).
    ParallelSheets { d: f64, amplitude: f64, frequency: f64 },
    /// `Q` copies of the affine sheet `ε·x₁` in the first normal direction.
    LinearTilt { eps: f64 },
    /// `Q` copies of `a·sin(ω x₁)·cos(ω x₂)`.
    Sinusoid { amplitude: f64, frequency: f64 },
    /// Two crossing affine sheets `±ε·x₁`.
    TiltedPair { eps: f64 },
    /// `m = 2, n = 2, Q = 2`: the two branches `±c·w^{3/2}`, `w = x₁ + i x₂`.
    Branch32 { c: f64 },
    /// `m = 2, n = 2, Q = 2`: `z = w² ± w^{5/2}` with the cut along `arg w = cut`,
    /// sampled through the dilation `(w, z) = zoom·(x, y)`, so base point `x`
    /// sees `w = zoom·x` and heights are divided by `zoom`. Outside
    /// `|x| ≤ saturate` the profile is constant along rays.
    PaperCurve { cut: f64, zoom: f64, saturate: f64 },
}

/// Ambient manifold: flat, or the graph of `Ψ` over the first `m + n̄` coordinates.
#[derive(Clone, Debug, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum AmbientSpec {
    Flat,
    /// `Ψ(z) = s·z₁` (an affine hyperplane, `l = 1`).
    Linear { slope: f64 },
    /// `Ψ(z) = (κ/2)|z|²` (`l = 1`).
    Quadratic { curvature: f64 },
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ScenarioSpec {
    pub generator: Generator,
    pub m: usize,
    /// Number of normal directions of the sheets before lifting to `Σ`.
    pub n_bar: usize,
    pub q: usize,
    /// Cells per axis over `[-4, 4]`.
    pub cells: usize,
    pub ambient: AmbientSpec,
}

/// Largest admissible height magnitude.
pub const HEIGHT_LIMIT: f64 = 1e4;

fn complex_pow(x: f64, y: f64, p: f64, cut: f64) -> (f64, f64) {
    let r = (x * x + y * y).sqrt();
    if r == 0.0 {
        return (0.0, 0.0);
    }
    // Argument taken in (cut − 2π, cut], so the branch cut is the ray at angle `cut`.
    let tau = 2.0 * std::f64::consts::PI;
    let mut a = y.atan2(x) - cut;
    while a <= -tau {
        a += tau;
    }
    while a > 0.0 {
        a -= tau;
    }
    let a = a + cut;
    let rp = r.powf(p);
    (rp * (p * a).cos(), rp * (p * a).sin())
}

impl Generator {
    pub fn name(&self) -> &'static str {
        match self {
            Generator::FlatQ { .. } => "flat_q",
            Generator::ParallelSheets { .. } => "parallel_sheets",
            Generator::LinearTilt { .. } => "linear_tilt",
            Generator::Sinusoid { .. } => "sinusoid",
            Generator::TiltedPair { .. } => "tilted_pair",
            Generator::Branch32 { .. } => "branch32",
            Generator::PaperCurve { .. } => "paper_curve",
        }
    }

    /// Heights of all `q` sheets at base point `x`, sheet-major (`q * n_bar`).
    pub fn heights(&self, x: &[f64], q: usize, n_bar: usize) -> Vec<f64> {
        let mut out = vec![0.0; q * n_bar];
        let wave = |a: f64, w: f64| {
            let mut g = a * (w * x[0]).sin();
            if x.len() >= 2 {
                g *= (w * x[1]).cos();
            }
            g
        };
        match *self {
            Generator::FlatQ { c } => out.iter_mut().for_each(|v| *v = c),
            Generator::ParallelSheets { d, amplitude, frequency } => {
                let g = 0.5 * d + wave(amplitude, frequency);
                out[0] = g;
                out[n_bar] = -g;
            }
            Generator::LinearTilt { eps } => {
                for s in 0..q {
                    out[s * n_bar] = eps * x[0];
                }
            }
            Generator::Sinusoid { amplitude, frequency } => {
                let g = wave(amplitude, frequency);
                for s in 0..q {
                    out[s * n_bar] = g;
                }
            }
            Generator::TiltedPair { eps } => {
                out[0] = eps * x[0];
                out[n_bar] = -eps * x[0];
            }
            Generator::Branch32 { c } => {
                let (re, im) = complex_pow(x[0], x[1], 1.5, std::f64::consts::PI);
                out[..4].copy_from_slice(&[c * re, c * im, -c * re, -c * im]);
            }
            Generator::PaperCurve { cut, zoom, saturate } => {
                let rad = (x[0] * x[0] + x[1] * x[1]).sqrt();
                let k = if rad > saturate { saturate / rad } else { 1.0 };
                let (u, v) = (zoom * k * x[0], zoom * k * x[1]);
                let (w2r, w2i) = (u * u - v * v, 2.0 * u * v);
                let (re, im) = complex_pow(u, v, 2.5, cut);
                let s = 1.0 / zoom;
                out[..4].copy_from_slice(&[s * (w2r + re), s * (w2i + im), s * (w2r - re), s * (w2i - im)]);
            }
        }
        out
    }

    /// Average of the sheets, when it has a closed form.
    pub fn reference_average(&self, x: &[f64], n_bar: usize) -> Vec<f64> {
        let mut out = vec![0.0; n_bar];
        match *self {
            Generator::PaperCurve { zoom, .. } => {
                out[0] = zoom * (x[0] * x[0] - x[1] * x[1]);
                out[1] = zoom * 2.0 * x[0] * x[1];
            }
            Generator::ParallelSheets { .. } | Generator::TiltedPair { .. } | Generator::Branch32 { .. } => {}
            _ => {
                let h = self.heights(x, 1, n_bar);
                out.copy_from_slice(&h[..n_bar]);
            }
        }
        out
    }
}

impl ScenarioSpec {
    pub fn validate(&self) -> Result<()> {
        let need = |cond: bool, msg: &str| if cond { Ok(()) } else { Err(Error::Scenario(msg.to_string())) };
        need(self.m >= 1 && self.m <= 3, "m must be 1, 2 or 3")?;
        need(self.n_bar >= 1, "n_bar must be at least 1")?;
        need(self.q >= 1, "Q must be at least 1")?;
        need(self.cells >= 8, "grid needs at least 8 cells per axis")?;
        match self.generator {
            Generator::Branch32 { .. } | Generator::PaperCurve { .. } => {
                need(self.m == 2 && self.n_bar == 2 && self.q == 2, "branched generators need m = 2, n = 2, Q = 2")
            }
            Generator::ParallelSheets { .. } | Generator::TiltedPair { .. } => {
                need(self.q == 2, "two-sheet generators need Q = 2")
            }
            _ => Ok(()),
        }
    }

    pub fn ambient_manifold(&self) -> AmbientManifold {
        let dim = self.m + self.n_bar;
        match self.ambient {
            AmbientSpec::Flat => AmbientManifold::flat(self.n_bar),
            AmbientSpec::Linear { slope } => {
                let mut a = vec![0.0; dim];
                a[0] = slope;
                AmbientManifold::graph(self.n_bar, PsiMap::Linear { a, c: 0.0 })
            }
            AmbientSpec::Quadratic { curvature } => {
                AmbientManifold::graph(self.n_bar, PsiMap::Quadratic { curvature, dim })
            }
        }
    }

    /// Total normal dimension `n = n̄ + l`.
    pub fn n(&self) -> usize {
        self.n_bar + self.ambient_manifold().l()
    }

    /// Sample the scenario on the padded lattice.
    pub fn build(&self) -> Result<SheetCurrent> {
        self.validate()?;
        let amb = self.ambient_manifold();
        let gen = self.generator.clone();
        let (q, nb, m) = (self.q, self.n_bar, self.m);
        let amb2 = amb.clone();
        let sampler = move |x: &[f64]| -> Vec<f64> {
            let h = gen.heights(x, q, nb);
            let mut out = Vec::with_capacity(q * amb2.n());
            for s in 0..q {
                out.extend(amb2.lift(x, &h[s * nb..(s + 1) * nb]));
            }
            out
        };
        let probe = sampler(&vec![4.0; m]);
        if probe.iter().any(|v| !v.is_finite() || v.abs() > HEIGHT_LIMIT) {
            return Err(Error::Scenario(format!(
                "{} produces heights outside the representable range |z| ≤ {HEIGHT_LIMIT}",
                self.generator.name()
            )));
        }
        SheetCurrent::from_sampler(m, q, self.cells, amb, sampler)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn paper_curve_closed_form() {
        let g = Generator::PaperCurve { cut: std::f64::consts::PI, zoom: 1.0, saturate: f64::INFINITY };
        let h = g.heights(&[0.04, 0.0], 2, 2);
        assert!((h[0] - (0.0016 + 0.00032)).abs() < 1e-15);
        assert!((h[2] - (0.0016 - 0.00032)).abs() < 1e-15);
        assert!(h[1].abs() < 1e-18 && h[3].abs() < 1e-18);
        let z = Generator::PaperCurve { cut: std::f64::consts::PI, zoom: 0.125, saturate: f64::INFINITY };
        let hz = z.heights(&[0.32, 0.0], 2, 2);
        assert!((0.125 * hz[0] - h[0]).abs() < 1e-15 && (0.125 * hz[2] - h[2]).abs() < 1e-15);
    }

    #[test]
    fn flat_and_parallel() {
        assert_eq!(Generator::FlatQ { c: 0.0 }.heights(&[0.3, 0.1], 2, 1), vec![0.0, 0.0]);
        let p = Generator::ParallelSheets { d: 0.1, amplitude: 0.0, frequency: 1.0 };
        assert_eq!(p.heights(&[1.0, 2.0], 2, 1), vec![0.05, -0.05]);
    }

    #[test]
    fn branches_are_continuous_as_sets_across_the_cut() {
        let g = Generator::Branch32 { c: 1.0 };
        let a = g.heights(&[-1.0, 1e-9], 2, 2);
        let b = g.heights(&[-1.0, -1e-9], 2, 2);
        let pa = crate::qvalued::QPoint::new(2, 2, a).unwrap();
        let pb = crate::qvalued::QPoint::new(2, 2, b).unwrap();
        assert!(crate::qvalued::g_dist(&pa, &pb).unwrap() < 1e-8);
    }
}
