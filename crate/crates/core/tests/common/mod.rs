//! Reference computations written without the tape: a hand-rolled MLP
//! forward and Jacobian, dense Gauss-Newton assembly, a Jacobi eigenvalue
//! solver, golden-section line search and a brute-force bootstrap.

#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum Act {
    Relu,
    Tanh,
}

#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum Head {
    /// Mean over rows of the summed squared error.
    Mse,
    /// Mean softmax cross-entropy.
    Xent,
}

/// A plain MLP over a flat parameter vector, laid out layer by layer as a
/// row-major `fan_in × fan_out` weight block followed by `fan_out` biases.
pub struct RefMlp {
    pub widths: Vec<usize>,
    pub act: Act,
    pub bias: bool,
}

struct Trace {
    /// Activations entering each layer; `a[0]` is the input.
    a: Vec<Vec<f64>>,
    /// Pre-activations of each layer.
    z: Vec<Vec<f64>>,
}

impl RefMlp {
    pub fn n_params(&self) -> usize {
        self.widths.windows(2).map(|w| w[0] * w[1] + if self.bias { w[1] } else { 0 }).sum()
    }

    fn offsets(&self) -> Vec<(usize, usize)> {
        let mut out = Vec::new();
        let mut off = 0;
        for w in self.widths.windows(2) {
            let wo = off;
            off += w[0] * w[1];
            let bo = off;
            if self.bias {
                off += w[1];
            }
            out.push((wo, bo));
        }
        out
    }

    fn trace(&self, p: &[f64], x: &[f64]) -> Trace {
        let layers = self.widths.len() - 1;
        let offs = self.offsets();
        let mut a = vec![x.to_vec()];
        let mut z = Vec::new();
        for l in 0..layers {
            let (fi, fo) = (self.widths[l], self.widths[l + 1]);
            let (wo, bo) = offs[l];
            let mut zl = vec![0.0; fo];
            for (j, zj) in zl.iter_mut().enumerate() {
                let mut s = if self.bias { p[bo + j] } else { 0.0 };
                for i in 0..fi {
                    s += a[l][i] * p[wo + i * fo + j];
                }
                *zj = s;
            }
            if l + 1 < layers {
                a.push(zl.iter().map(|&v| self.act_f(v)).collect());
            }
            z.push(zl);
        }
        Trace { a, z }
    }

    fn act_f(&self, v: f64) -> f64 {
        match self.act {
            Act::Relu => v.max(0.0),
            Act::Tanh => v.tanh(),
        }
    }

    fn act_df(&self, v: f64) -> f64 {
        match self.act {
            Act::Relu => {
                if v > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Act::Tanh => 1.0 - v.tanh().powi(2),
        }
    }

    pub fn forward(&self, p: &[f64], x: &[f64]) -> Vec<f64> {
        self.trace(p, x).z.pop().unwrap()
    }

    /// Outputs and the row-major `n_out × n_params` Jacobian, by one
    /// backward sweep per output unit.
    pub fn jacobian(&self, p: &[f64], x: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let tr = self.trace(p, x);
        let layers = self.widths.len() - 1;
        let offs = self.offsets();
        let n_out = *self.widths.last().unwrap();
        let np = self.n_params();
        let mut jac = vec![0.0; n_out * np];
        for k in 0..n_out {
            let row = &mut jac[k * np..(k + 1) * np];
            let mut delta = vec![0.0; n_out];
            delta[k] = 1.0;
            for l in (0..layers).rev() {
                let (fi, fo) = (self.widths[l], self.widths[l + 1]);
                let (wo, bo) = offs[l];
                for i in 0..fi {
                    for j in 0..fo {
                        row[wo + i * fo + j] = tr.a[l][i] * delta[j];
                    }
                }
                if self.bias {
                    row[bo..bo + fo].copy_from_slice(&delta);
                }
                if l > 0 {
                    delta = (0..fi)
                        .map(|i| {
                            let s: f64 = (0..fo).map(|j| p[wo + i * fo + j] * delta[j]).sum();
                            s * self.act_df(tr.z[l - 1][i])
                        })
                        .collect();
                }
            }
        }
        (tr.z.last().unwrap().clone(), jac)
    }
}

pub fn softmax(z: &[f64]) -> Vec<f64> {
    let m = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = z.iter().map(|v| (v - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|v| v / s).collect()
}

/// Per-example loss Hessian with respect to the outputs, already divided by
/// the batch size `n`.
fn output_hessian(head: Head, z: &[f64], n: usize) -> Vec<f64> {
    let k = z.len();
    let mut h = vec![0.0; k * k];
    match head {
        Head::Mse => (0..k).for_each(|i| h[i * k + i] = 2.0 / n as f64),
        Head::Xent => {
            let p = softmax(z);
            for i in 0..k {
                for j in 0..k {
                    h[i * k + j] = ((if i == j { p[i] } else { 0.0 }) - p[i] * p[j]) / n as f64;
                }
            }
        }
    }
    h
}

/// Dense `Σₙ Jₙᵀ Hₙ Jₙ` over the rows of `x` (row-major, `rows × widths[0]`).
pub fn ggn_matrix(m: &RefMlp, head: Head, p: &[f64], x: &[f64], rows: usize) -> Vec<f64> {
    let np = m.n_params();
    let d = m.widths[0];
    let mut g = vec![0.0; np * np];
    for r in 0..rows {
        let (z, j) = m.jacobian(p, &x[r * d..(r + 1) * d]);
        let k = z.len();
        let h = output_hessian(head, &z, rows);
        // hj = H J, k × np
        let mut hj = vec![0.0; k * np];
        for a in 0..k {
            for b in 0..k {
                let w = h[a * k + b];
                if w != 0.0 {
                    for c in 0..np {
                        hj[a * np + c] += w * j[b * np + c];
                    }
                }
            }
        }
        for a in 0..k {
            for u in 0..np {
                let ju = j[a * np + u];
                if ju != 0.0 {
                    for v in 0..np {
                        g[u * np + v] += ju * hj[a * np + v];
                    }
                }
            }
        }
    }
    g
}

/// Per-example gradient of the (unreduced) loss of one example.
pub fn example_gradient(m: &RefMlp, head: Head, p: &[f64], x: &[f64], target: &[f64], label: usize) -> Vec<f64> {
    let (z, j) = m.jacobian(p, x);
    let np = m.n_params();
    let dz: Vec<f64> = match head {
        Head::Mse => z.iter().zip(target).map(|(a, b)| 2.0 * (a - b)).collect(),
        Head::Xent => {
            let mut q = softmax(&z);
            q[label] -= 1.0;
            q
        }
    };
    (0..np).map(|c| dz.iter().enumerate().map(|(a, w)| w * j[a * np + c]).sum()).collect()
}

/// All eigenvalues of a symmetric matrix by cyclic Jacobi rotations.
pub fn jacobi_eigenvalues(mut a: Vec<f64>, n: usize) -> Vec<f64> {
    for _sweep in 0..100 {
        let off: f64 = (0..n).flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j))).map(|(i, j)| a[i * n + j].powi(2)).sum();
        let scale: f64 = a.iter().map(|v| v * v).sum::<f64>().max(1e-300);
        if off <= 1e-30 * scale {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                let apq = a[p * n + q];
                if apq.abs() < 1e-300 {
                    continue;
                }
                let theta = (a[q * n + q] - a[p * n + p]) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let akp = a[k * n + p];
                    let akq = a[k * n + q];
                    a[k * n + p] = c * akp - s * akq;
                    a[k * n + q] = s * akp + c * akq;
                }
                for k in 0..n {
                    let apk = a[p * n + k];
                    let aqk = a[q * n + k];
                    a[p * n + k] = c * apk - s * aqk;
                    a[q * n + k] = s * apk + c * aqk;
                }
            }
        }
    }
    (0..n).map(|i| a[i * n + i]).collect()
}

/// Minimiser of a unimodal `f` on `[lo, hi]`.
pub fn golden_section(f: impl Fn(f64) -> f64, mut lo: f64, mut hi: f64, tol: f64) -> f64 {
    let r = (5f64.sqrt() - 1.0) / 2.0;
    let mut c = hi - r * (hi - lo);
    let mut d = lo + r * (hi - lo);
    while hi - lo > tol {
        if f(c) < f(d) {
            hi = d;
        } else {
            lo = c;
        }
        c = hi - r * (hi - lo);
        d = lo + r * (hi - lo);
    }
    0.5 * (lo + hi)
}

/// Mean and population std, across resamples, of pointwise medians: each
/// resample draws `rows.len()` run indices with replacement, one
/// `random_range` call per pick from a `ChaCha8Rng` seeded with `seed`.
pub fn brute_force_bootstrap(rows: &[Vec<f64>], n_boot: usize, seed: u64) -> (Vec<f64>, Vec<f64>) {
    let r = rows.len();
    let k = rows[0].len();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut meds = vec![vec![0.0; k]; n_boot];
    for med in meds.iter_mut() {
        let mut picks = Vec::new();
        for _ in 0..r {
            picks.push(rng.random_range(0..r));
        }
        for (j, m) in med.iter_mut().enumerate() {
            let mut col: Vec<f64> = picks.iter().map(|&i| rows[i][j]).collect();
            col.sort_by(|a, b| a.partial_cmp(b).unwrap());
            *m = if r % 2 == 1 { col[r / 2] } else { (col[r / 2 - 1] + col[r / 2]) / 2.0 };
        }
    }
    let nb = n_boot as f64;
    let mean: Vec<f64> = (0..k).map(|j| meds.iter().map(|m| m[j]).sum::<f64>() / nb).collect();
    let std = (0..k).map(|j| (meds.iter().map(|m| (m[j] - mean[j]).powi(2)).sum::<f64>() / nb).sqrt()).collect();
    (mean, std)
}

/// `max|a − b| / max(max|b|, floor)`.
pub fn rel_err(a: &[f64], b: &[f64], floor: f64) -> f64 {
    let scale = b.iter().fold(floor, |m, v| m.max(v.abs()));
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max) / scale
}
