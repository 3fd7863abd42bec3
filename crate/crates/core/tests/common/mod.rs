//! Brute-force reference computations over every (v, h) pair. Deliberately
//! written with plain loops over `Vec<f64>` and never calls into the crate's
//! math, so it stays an independent check.
#![allow(dead_code)]

use adbn::RbmParameters;
use ndarray::{Array1, Array2};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

pub struct Plain {
    pub b: Vec<f64>,
    pub c: Vec<f64>,
    /// row-major I × J
    pub w: Vec<Vec<f64>>,
}

impl Plain {
    pub fn from(p: &RbmParameters) -> Self {
        Self {
            b: p.visible_bias.to_vec(),
            c: p.hidden_bias.to_vec(),
            w: p.weights.rows().into_iter().map(|r| r.to_vec()).collect(),
        }
    }

    pub fn i(&self) -> usize {
        self.b.len()
    }

    pub fn j(&self) -> usize {
        self.c.len()
    }

    pub fn energy(&self, v: &[f64], h: &[f64]) -> f64 {
        let mut e = 0.0;
        for i in 0..self.i() {
            e -= self.b[i] * v[i];
        }
        for j in 0..self.j() {
            e -= self.c[j] * h[j];
        }
        for i in 0..self.i() {
            for j in 0..self.j() {
                e -= v[i] * self.w[i][j] * h[j];
            }
        }
        e
    }

    pub fn z(&self) -> f64 {
        let mut z = 0.0;
        for vb in 0..1usize << self.i() {
            let v = bits(vb, self.i());
            for hb in 0..1usize << self.j() {
                z += (-self.energy(&v, &bits(hb, self.j()))).exp();
            }
        }
        z
    }

    pub fn joint(&self, v: &[f64], h: &[f64]) -> f64 {
        (-self.energy(v, h)).exp() / self.z()
    }

    /// Unnormalized marginal Σ_h exp(-E(v, h)).
    pub fn marginal(&self, v: &[f64]) -> f64 {
        (0..1usize << self.j())
            .map(|hb| (-self.energy(v, &bits(hb, self.j()))).exp())
            .sum()
    }

    /// p(h_j = 1 | v) = Σ_{h: h_j=1} p(v,h) / Σ_h p(v,h)
    pub fn hidden_conditional(&self, v: &[f64]) -> Vec<f64> {
        let mut num = vec![0.0; self.j()];
        let mut den = 0.0;
        for hb in 0..1usize << self.j() {
            let h = bits(hb, self.j());
            let p = (-self.energy(v, &h)).exp();
            den += p;
            for j in 0..self.j() {
                if h[j] == 1.0 {
                    num[j] += p;
                }
            }
        }
        num.into_iter().map(|x| x / den).collect()
    }

    /// p(v_i = 1 | h) by enumerating v.
    pub fn visible_conditional(&self, h: &[f64]) -> Vec<f64> {
        let mut num = vec![0.0; self.i()];
        let mut den = 0.0;
        for vb in 0..1usize << self.i() {
            let v = bits(vb, self.i());
            let p = (-self.energy(&v, h)).exp();
            den += p;
            for i in 0..self.i() {
                if v[i] == 1.0 {
                    num[i] += p;
                }
            }
        }
        num.into_iter().map(|x| x / den).collect()
    }

    /// Mean log p(v) over binary `data`.
    pub fn log_likelihood(&self, data: &[Vec<f64>]) -> f64 {
        let log_z = self.z().ln();
        data.iter().map(|v| self.marginal(v).ln() - log_z).sum::<f64>() / data.len() as f64
    }
}

pub fn bits(x: usize, n: usize) -> Vec<f64> {
    (0..n).map(|i| ((x >> i) & 1) as f64).collect()
}

pub fn seeded_rbm(i: usize, j: usize, seed: u64, scale: f64) -> RbmParameters {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = Normal::new(0.0, scale).unwrap();
    RbmParameters::new(
        Array1::from_shape_simple_fn(i, || n.sample(&mut rng)),
        Array1::from_shape_simple_fn(j, || n.sample(&mut rng)),
        Array2::from_shape_simple_fn((i, j), || n.sample(&mut rng)),
    )
    .unwrap()
}

/// Central difference of the brute-force mean log-likelihood with respect to
/// every parameter, ordered (b, c, W row-major).
pub fn finite_difference_gradient(p: &RbmParameters, data: &[Vec<f64>], eps: f64) -> Vec<f64> {
    let base = Plain::from(p);
    let mut out = Vec::new();
    let eval = |plain: &Plain| plain.log_likelihood(data);
    for i in 0..base.i() {
        let (mut up, mut dn) = (Plain::from(p), Plain::from(p));
        up.b[i] += eps;
        dn.b[i] -= eps;
        out.push((eval(&up) - eval(&dn)) / (2.0 * eps));
    }
    for j in 0..base.j() {
        let (mut up, mut dn) = (Plain::from(p), Plain::from(p));
        up.c[j] += eps;
        dn.c[j] -= eps;
        out.push((eval(&up) - eval(&dn)) / (2.0 * eps));
    }
    for i in 0..base.i() {
        for j in 0..base.j() {
            let (mut up, mut dn) = (Plain::from(p), Plain::from(p));
            up.w[i][j] += eps;
            dn.w[i][j] -= eps;
            out.push((eval(&up) - eval(&dn)) / (2.0 * eps));
        }
    }
    out
}

/// `n` orthogonal binary patterns over `n * width` pixels (block one-hot).
pub fn orthogonal_patterns(n: usize, width: usize) -> Array2<f64> {
    Array2::from_shape_fn((n, n * width), |(r, c)| if c / width == r { 1.0 } else { 0.0 })
}
