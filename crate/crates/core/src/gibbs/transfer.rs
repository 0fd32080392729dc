//! Exact infinite-volume marginals of one-dimensional nearest-neighbor
//! Gibbs measures, represented as stationary Markov chains.

use crate::ctmc::ProbVector;
use crate::error::{Error, Result};
use crate::lattice::decode_into;

use super::potential::Potential;

pub const MAX_Q: usize = 8;
pub const MAX_WINDOW: usize = 20;

/// Stationary Markov chain on {0..q-1} indexed by integer positions.
#[derive(Clone, Debug, PartialEq)]
pub struct MarkovChain1d {
    q: usize,
    pi: Vec<f64>,
    /// row-major q x q transition matrix
    p: Vec<f64>,
}

fn matmul(a: &[f64], b: &[f64], q: usize) -> Vec<f64> {
    let mut c = vec![0.0; q * q];
    for i in 0..q {
        for k in 0..q {
            let aik = a[i * q + k];
            for j in 0..q {
                c[i * q + j] += aik * b[k * q + j];
            }
        }
    }
    c
}

impl MarkovChain1d {
    /// Chain with the given stochastic matrix started from its stationary law.
    pub fn from_transition(q: usize, p: Vec<f64>) -> Result<Self> {
        if p.len() != q * q || q < 2 {
            return Err(Error::Domain("transition matrix must be q x q with q >= 2".into()));
        }
        for i in 0..q {
            let row = &p[i * q..(i + 1) * q];
            if row.iter().any(|&v| !(v >= 0.0) || !v.is_finite()) {
                return Err(Error::Domain(format!("row {i} has invalid entries")));
            }
            if (row.iter().sum::<f64>() - 1.0).abs() > 1e-12 {
                return Err(Error::Domain(format!("row {i} does not sum to one")));
            }
        }
        // stationary law from a high power of P
        let mut m = p.clone();
        for _ in 0..64 {
            m = matmul(&m, &m, q);
            for row in m.chunks_mut(q) {
                let z: f64 = row.iter().sum();
                row.iter_mut().for_each(|v| *v /= z);
            }
        }
        let mut pi: Vec<f64> = (0..q).map(|j| (0..q).map(|i| m[i * q + j]).sum::<f64>() / q as f64).collect();
        for _ in 0..4 {
            let mut next = vec![0.0; q];
            for i in 0..q {
                for j in 0..q {
                    next[j] += pi[i] * p[i * q + j];
                }
            }
            let z: f64 = next.iter().sum();
            pi = next.into_iter().map(|v| v / z).collect();
        }
        if pi.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numeric("stationary law did not converge".into()));
        }
        Ok(Self { q, pi, p })
    }

    /// Infinite-volume Gibbs measure of a d=1 nearest-neighbor potential.
    pub fn from_potential(pot: &Potential) -> Result<Self> {
        pot.validate()?;
        if pot.dim != 1 {
            return Err(Error::Unsupported("transfer matrix needs d = 1".into()));
        }
        let q = pot.q;
        if q > MAX_Q {
            return Err(Error::Unsupported(format!("transfer matrix needs q <= {MAX_Q}")));
        }
        let mut u = vec![0.0; q];
        let mut v = vec![0.0; q * q];
        for t in &pot.terms {
            match t.shape.as_slice() {
                [o] if o[0] == 0 => {
                    for a in 0..q {
                        u[a] += t.table[a];
                    }
                }
                [o1, o2] if (o1[0] - o2[0]).abs() == 1 => {
                    let left_first = o2[0] == o1[0] + 1;
                    for a in 0..q {
                        for b in 0..q {
                            // a at the left site, b at the right site
                            let idx = if left_first { a + q * b } else { b + q * a };
                            v[a * q + b] += t.table[idx];
                        }
                    }
                }
                _ => {
                    return Err(Error::Unsupported("transfer matrix needs nearest-neighbor shapes".into()));
                }
            }
        }
        let beta = pot.beta;
        let mut logm = vec![0.0; q * q];
        for a in 0..q {
            for b in 0..q {
                logm[a * q + b] = -beta * (v[a * q + b] + u[b]);
            }
        }
        let mx = logm.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let m: Vec<f64> = logm.iter().map(|l| (l - mx).exp()).collect();
        // Perron vectors from a normalized high power
        let mut pw = m.clone();
        for _ in 0..80 {
            pw = matmul(&pw, &pw, q);
            let s = pw.iter().cloned().fold(0.0, f64::max);
            if !(s > 0.0) || !s.is_finite() {
                return Err(Error::Numeric("degenerate transfer matrix".into()));
            }
            pw.iter_mut().for_each(|x| *x /= s);
        }
        let mut r: Vec<f64> = (0..q).map(|i| (0..q).map(|j| pw[i * q + j]).sum()).collect();
        let mut l: Vec<f64> = (0..q).map(|j| (0..q).map(|i| pw[i * q + j]).sum()).collect();
        let mut lambda = 0.0;
        for _ in 0..8 {
            let mr: Vec<f64> = (0..q).map(|i| (0..q).map(|j| m[i * q + j] * r[j]).sum()).collect();
            let lm: Vec<f64> = (0..q).map(|j| (0..q).map(|i| l[i] * m[i * q + j]).sum()).collect();
            let nr: f64 = mr.iter().sum();
            let nl: f64 = lm.iter().sum();
            lambda = nr / r.iter().sum::<f64>();
            r = mr.into_iter().map(|x| x / nr).collect();
            l = lm.into_iter().map(|x| x / nl).collect();
        }
        if r.iter().chain(&l).any(|x| !(*x > 0.0)) || !(lambda > 0.0) {
            return Err(Error::Numeric("degenerate transfer matrix".into()));
        }
        let z: f64 = (0..q).map(|a| l[a] * r[a]).sum();
        let pi: Vec<f64> = (0..q).map(|a| l[a] * r[a] / z).collect();
        let mut p = vec![0.0; q * q];
        for a in 0..q {
            let mut row: Vec<f64> = (0..q).map(|b| m[a * q + b] * r[b] / (lambda * r[a])).collect();
            let s: f64 = row.iter().sum();
            row.iter_mut().for_each(|x| *x /= s);
            p[a * q..(a + 1) * q].copy_from_slice(&row);
        }
        Ok(Self { q, pi, p })
    }

    pub fn q(&self) -> usize {
        self.q
    }

    pub fn stationary(&self) -> &[f64] {
        &self.pi
    }

    pub fn transition(&self) -> &[f64] {
        &self.p
    }

    fn power(&self, k: usize) -> Vec<f64> {
        let q = self.q;
        let mut out: Vec<f64> = (0..q * q).map(|i| if i / q == i % q { 1.0 } else { 0.0 }).collect();
        let mut base = self.p.clone();
        let mut e = k;
        while e > 0 {
            if e & 1 == 1 {
                out = matmul(&out, &base, q);
            }
            base = matmul(&base, &base, q);
            e >>= 1;
        }
        out
    }

    /// Marginal table on distinct integer positions (any order), indexed
    /// little-endian over the given order.
    pub fn marginal(&self, positions: &[i64]) -> Result<Vec<f64>> {
        let k = positions.len();
        if k > MAX_WINDOW {
            return Err(Error::Capacity(format!("window of {k} sites exceeds {MAX_WINDOW}")));
        }
        let q = self.q;
        let mut order: Vec<usize> = (0..k).collect();
        order.sort_by_key(|&i| positions[i]);
        for w in order.windows(2) {
            if positions[w[0]] == positions[w[1]] {
                return Err(Error::Geometry("repeated position".into()));
            }
        }
        let gaps: Vec<Vec<f64>> = order
            .windows(2)
            .map(|w| self.power((positions[w[1]] - positions[w[0]]) as usize))
            .collect();
        let n = q.pow(k as u32);
        let mut out = vec![0.0; n];
        let mut vals = vec![0u8; k];
        for (idx, slot) in out.iter_mut().enumerate() {
            decode_into(idx as u64, q, &mut vals);
            if k == 0 {
                *slot = 1.0;
                continue;
            }
            let mut prev = vals[order[0]] as usize;
            let mut pr = self.pi[prev];
            for (g, &i) in order.iter().skip(1).enumerate() {
                let cur = vals[i] as usize;
                pr *= gaps[g][prev * q + cur];
                prev = cur;
            }
            *slot = pr;
        }
        Ok(out)
    }

    /// Smallest single-site conditional probability given both neighbors.
    pub fn single_site_delta(&self) -> f64 {
        let q = self.q;
        let p2 = self.power(2);
        let mut best = 1.0f64;
        for a in 0..q {
            for c in 0..q {
                let den = p2[a * q + c];
                if den <= 0.0 {
                    continue;
                }
                for b in 0..q {
                    best = best.min(self.p[a * q + b] * self.p[b * q + c] / den);
                }
            }
        }
        best
    }
}

/// Infinite-volume marginal of a d=1 nearest-neighbor Gibbs measure on
/// `len` contiguous sites.
pub fn transfer_marginal_1d(pot: &Potential, len: usize) -> Result<ProbVector> {
    let chain = MarkovChain1d::from_potential(pot)?;
    let pos: Vec<i64> = (0..len as i64).collect();
    ProbVector::new(chain.marginal(&pos)?)
}
