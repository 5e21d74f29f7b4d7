//! Uniform tensor lattices and cubic-convolution interpolation.
//!
//! Interpolation uses the Keys kernel with `a = -1/2`, which is C¹ and
//! reproduces polynomials of degree two exactly on uniform lattices.

use serde::Serialize;

/// Uniform lattice in `R^m`: node `i` along axis `k` sits at `lo[k] + i*h`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct GridSpec {
    pub lo: Vec<f64>,
    pub h: f64,
    pub counts: Vec<usize>,
}

/// Cubic stencil around one evaluation point.
#[derive(Clone, Debug)]
pub struct Stencil {
    /// Flat node indices, `4^m` of them.
    pub nodes: Vec<usize>,
    /// Interpolation weights.
    pub w: Vec<f64>,
    /// Derivative weights, row-major `[node][axis]`.
    pub dw: Vec<f64>,
}

#[inline]
fn keys_weights(t: f64) -> ([f64; 4], [f64; 4]) {
    let t2 = t * t;
    let t3 = t2 * t;
    let w = [
        0.5 * (-t3 + 2.0 * t2 - t),
        0.5 * (3.0 * t3 - 5.0 * t2 + 2.0),
        0.5 * (-3.0 * t3 + 4.0 * t2 + t),
        0.5 * (t3 - t2),
    ];
    let d = [
        0.5 * (-3.0 * t2 + 4.0 * t - 1.0),
        0.5 * (9.0 * t2 - 10.0 * t),
        0.5 * (-9.0 * t2 + 8.0 * t + 1.0),
        0.5 * (3.0 * t2 - 2.0 * t),
    ];
    (w, d)
}

impl GridSpec {
    pub fn new(lo: Vec<f64>, h: f64, counts: Vec<usize>) -> Self {
        assert_eq!(lo.len(), counts.len());
        assert!(h > 0.0);
        GridSpec { lo, h, counts }
    }

    /// Square lattice centred at `center` with `half` nodes on each side of it.
    pub fn centered(center: &[f64], h: f64, half: usize) -> Self {
        let lo = center.iter().map(|c| c - half as f64 * h).collect();
        GridSpec::new(lo, h, vec![2 * half + 1; center.len()])
    }

    pub fn dim(&self) -> usize {
        self.counts.len()
    }

    pub fn len(&self) -> usize {
        self.counts.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Row-major strides (last axis fastest).
    pub fn strides(&self) -> Vec<usize> {
        let m = self.dim();
        let mut s = vec![1; m];
        for k in (0..m.saturating_sub(1)).rev() {
            s[k] = s[k + 1] * self.counts[k + 1];
        }
        s
    }

    pub fn multi(&self, mut idx: usize) -> Vec<usize> {
        let m = self.dim();
        let mut out = vec![0; m];
        for k in (0..m).rev() {
            out[k] = idx % self.counts[k];
            idx /= self.counts[k];
        }
        out
    }

    pub fn flat(&self, multi: &[usize]) -> usize {
        let mut idx = 0;
        for (k, &i) in multi.iter().enumerate() {
            idx = idx * self.counts[k] + i;
        }
        idx
    }

    pub fn coord(&self, idx: usize) -> Vec<f64> {
        self.multi(idx)
            .iter()
            .enumerate()
            .map(|(k, &i)| self.lo[k] + i as f64 * self.h)
            .collect()
    }

    pub fn coord_into(&self, mut idx: usize, out: &mut [f64]) {
        for k in (0..self.dim()).rev() {
            let i = idx % self.counts[k];
            idx /= self.counts[k];
            out[k] = self.lo[k] + i as f64 * self.h;
        }
    }

    /// Index of the node nearest to `x`, if inside the lattice.
    pub fn nearest(&self, x: &[f64]) -> Option<usize> {
        let mut idx = 0;
        for k in 0..self.dim() {
            let s = ((x[k] - self.lo[k]) / self.h).round();
            if s < 0.0 || s >= self.counts[k] as f64 {
                return None;
            }
            idx = idx * self.counts[k] + s as usize;
        }
        Some(idx)
    }

    /// Cubic stencil at `x`; `None` when any of the `4^m` nodes falls off the lattice.
    pub fn stencil(&self, x: &[f64]) -> Option<Stencil> {
        let m = self.dim();
        let mut base = vec![0usize; m];
        let mut ws = Vec::with_capacity(m);
        for k in 0..m {
            let s = (x[k] - self.lo[k]) / self.h;
            if !s.is_finite() {
                return None;
            }
            let fl = s.floor();
            let i0 = fl as i64 - 1;
            if i0 < 0 || i0 + 3 >= self.counts[k] as i64 {
                return None;
            }
            base[k] = i0 as usize;
            ws.push(keys_weights(s - fl));
        }
        let total = 4usize.pow(m as u32);
        let strides = self.strides();
        let mut nodes = Vec::with_capacity(total);
        let mut w = Vec::with_capacity(total);
        let mut dw = Vec::with_capacity(total * m);
        for c in 0..total {
            let mut rem = c;
            let mut idx = 0;
            let mut prod = 1.0;
            let mut offs = [0usize; 8];
            for k in (0..m).rev() {
                offs[k] = rem % 4;
                rem /= 4;
            }
            for k in 0..m {
                idx += (base[k] + offs[k]) * strides[k];
                prod *= ws[k].0[offs[k]];
            }
            nodes.push(idx);
            w.push(prod);
            for a in 0..m {
                let mut p = 1.0;
                for k in 0..m {
                    p *= if k == a { ws[k].1[offs[k]] / self.h } else { ws[k].0[offs[k]] };
                }
                dw.push(p);
            }
        }
        Some(Stencil { nodes, w, dw })
    }

    /// Axis-aligned box containing the lattice nodes.
    pub fn bounds(&self) -> (Vec<f64>, Vec<f64>) {
        let hi = (0..self.dim())
            .map(|k| self.lo[k] + (self.counts[k] - 1) as f64 * self.h)
            .collect();
        (self.lo.clone(), hi)
    }
}

/// A vector-valued map sampled on a lattice, `k` components per node.
#[derive(Clone, Debug)]
pub struct SampledMap {
    pub grid: GridSpec,
    pub k: usize,
    pub values: Vec<f64>,
}

impl SampledMap {
    pub fn new(grid: GridSpec, k: usize, values: Vec<f64>) -> Self {
        assert_eq!(values.len(), grid.len() * k);
        SampledMap { grid, k, values }
    }

    pub fn from_fn(grid: GridSpec, k: usize, f: impl Fn(&[f64]) -> Vec<f64>) -> Self {
        let mut values = Vec::with_capacity(grid.len() * k);
        let mut x = vec![0.0; grid.dim()];
        for i in 0..grid.len() {
            grid.coord_into(i, &mut x);
            let v = f(&x);
            assert_eq!(v.len(), k);
            values.extend_from_slice(&v);
        }
        SampledMap { grid, k, values }
    }

    pub fn node(&self, i: usize) -> &[f64] {
        &self.values[i * self.k..(i + 1) * self.k]
    }

    /// Value at `x`.
    pub fn eval(&self, x: &[f64]) -> Option<Vec<f64>> {
        let st = self.grid.stencil(x)?;
        let mut out = vec![0.0; self.k];
        for (j, &n) in st.nodes.iter().enumerate() {
            let v = self.node(n);
            for c in 0..self.k {
                out[c] += st.w[j] * v[c];
            }
        }
        Some(out)
    }

    /// Value and Jacobian (row-major `k x m`) at `x`.
    pub fn eval_jet(&self, x: &[f64]) -> Option<(Vec<f64>, Vec<f64>)> {
        let m = self.grid.dim();
        let st = self.grid.stencil(x)?;
        let mut val = vec![0.0; self.k];
        let mut jac = vec![0.0; self.k * m];
        for (j, &n) in st.nodes.iter().enumerate() {
            let v = self.node(n);
            for c in 0..self.k {
                val[c] += st.w[j] * v[c];
                for a in 0..m {
                    jac[c * m + a] += st.dw[j * m + a] * v[c];
                }
            }
        }
        Some((val, jac))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn index_roundtrip() {
        let g = GridSpec::new(vec![0.0, 1.0, -2.0], 0.5, vec![3, 4, 5]);
        for i in 0..g.len() {
            assert_eq!(g.flat(&g.multi(i)), i);
        }
        assert_eq!(g.coord(g.flat(&[1, 2, 3])), vec![0.5, 2.0, -0.5]);
    }

    #[test]
    fn cubic_reproduces_quadratics() {
        let g = GridSpec::new(vec![-1.0, -1.0], 0.1, vec![21, 21]);
        let f = SampledMap::from_fn(g, 1, |x| vec![1.0 + 2.0 * x[0] - x[1] + 3.0 * x[0] * x[1] - x[1] * x[1]]);
        let (v, d) = f.eval_jet(&[0.237, -0.311]).unwrap();
        let (x, y) = (0.237, -0.311);
        assert!((v[0] - (1.0 + 2.0 * x - y + 3.0 * x * y - y * y)).abs() < 1e-13);
        assert!((d[0] - (2.0 + 3.0 * y)).abs() < 1e-12);
        assert!((d[1] - (-1.0 + 3.0 * x - 2.0 * y)).abs() < 1e-12);
    }

    #[test]
    fn stencil_rejects_edges() {
        let g = GridSpec::new(vec![0.0], 1.0, vec![6]);
        assert!(g.stencil(&[0.5]).is_none());
        assert!(g.stencil(&[1.5]).is_some());
        assert!(g.stencil(&[3.99]).is_some());
        assert!(g.stencil(&[4.01]).is_none());
    }
}
