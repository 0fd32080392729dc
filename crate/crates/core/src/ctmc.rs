//! Finite-state continuous-time Markov chains: stationary laws, relative
//! entropy, the two forms of the entropy loss, and exact evolution.

use std::fmt;
use std::ops::Add;

use nalgebra::{DMatrix, DVector};

use crate::dynamics::SparseGenerator;
use crate::error::{Error, Result};

const NORM_TOL: f64 = 1e-12;
/// Largest generator solved by dense LU; larger ones use Gauss-Seidel.
const DENSE_LIMIT: usize = 1500;

/// Probability distribution over enumerated states.
#[derive(Clone, Debug, PartialEq)]
pub struct ProbVector(Vec<f64>);

impl ProbVector {
    pub fn new(p: Vec<f64>) -> Result<Self> {
        if p.is_empty() {
            return Err(Error::Domain("empty probability vector".into()));
        }
        if let Some(i) = p.iter().position(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::Domain(format!("entry {i} = {} is not a probability", p[i])));
        }
        let s: f64 = p.iter().sum();
        if (s - 1.0).abs() > NORM_TOL {
            return Err(Error::Domain(format!("probabilities sum to {s}")));
        }
        Ok(Self(p))
    }

    /// Normalizes nonnegative weights.
    pub fn from_weights(mut w: Vec<f64>) -> Result<Self> {
        if w.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::Domain("weights must be finite and nonnegative".into()));
        }
        let s: f64 = w.iter().sum();
        if !(s > 0.0) {
            return Err(Error::Degenerate("weights sum to zero".into()));
        }
        w.iter_mut().for_each(|v| *v /= s);
        Ok(Self(w))
    }

    pub fn uniform(n: usize) -> Self {
        Self(vec![1.0 / n as f64; n])
    }

    pub fn point(n: usize, i: usize) -> Self {
        let mut v = vec![0.0; n];
        v[i] = 1.0;
        Self(v)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }

    pub fn is_strictly_positive(&self) -> bool {
        self.0.iter().all(|&v| v > 0.0)
    }

    pub fn l1_distance(&self, other: &Self) -> f64 {
        self.0.iter().zip(&other.0).map(|(a, b)| (a - b).abs()).sum()
    }

    pub fn total_variation(&self, other: &Self) -> f64 {
        0.5 * self.l1_distance(other)
    }
}

/// Real number extended by both infinities.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum ExtReal {
    NegInf,
    Finite(f64),
    PosInf,
}

pub type EntropyValue = ExtReal;

impl ExtReal {
    pub const ZERO: ExtReal = ExtReal::Finite(0.0);

    pub fn finite(self) -> Option<f64> {
        match self {
            ExtReal::Finite(v) => Some(v),
            _ => None,
        }
    }

    /// Value as f64 with infinities mapped to IEEE infinities.
    pub fn to_f64(self) -> f64 {
        match self {
            ExtReal::NegInf => f64::NEG_INFINITY,
            ExtReal::Finite(v) => v,
            ExtReal::PosInf => f64::INFINITY,
        }
    }

    pub fn is_finite(self) -> bool {
        matches!(self, ExtReal::Finite(_))
    }

    /// Finite value, or a numeric error naming `what`.
    pub fn expect_finite(self, what: &str) -> Result<f64> {
        self.finite().ok_or_else(|| Error::Numeric(format!("{what} is {self}")))
    }
}

impl Add for ExtReal {
    type Output = ExtReal;
    fn add(self, rhs: ExtReal) -> ExtReal {
        use ExtReal::*;
        match (self, rhs) {
            (Finite(a), Finite(b)) => Finite(a + b),
            (NegInf, PosInf) | (PosInf, NegInf) => panic!("undefined sum of opposite infinities"),
            (NegInf, _) | (_, NegInf) => NegInf,
            (PosInf, _) | (_, PosInf) => PosInf,
        }
    }
}

impl fmt::Display for ExtReal {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ExtReal::NegInf => write!(f, "-inf"),
            ExtReal::PosInf => write!(f, "inf"),
            ExtReal::Finite(v) => write!(f, "{v:.16e}"),
        }
    }
}

/// Phi(u) = u - u log u - 1 for u > 0, and -1 otherwise.
pub fn phi(u: f64) -> f64 {
    if u > 0.0 {
        u - u * u.ln() - 1.0
    } else {
        -1.0
    }
}

/// Alias used by the windowed functionals.
pub use phi as f0;

/// Unique stationary law of an irreducible generator.
pub fn stationary(gen: &SparseGenerator) -> Result<ProbVector> {
    let n = gen.dim();
    if n == 0 {
        return Err(Error::Domain("empty generator".into()));
    }
    if !gen.is_irreducible() {
        return Err(Error::NonUnique("generator is reducible".into()));
    }
    if n == 1 {
        return Ok(ProbVector(vec![1.0]));
    }
    let mu = if n <= DENSE_LIMIT { stationary_dense(gen)? } else { stationary_iterative(gen)? };
    ProbVector::from_weights(mu.into_iter().map(|v| v.max(0.0)).collect())
}

fn stationary_dense(gen: &SparseGenerator) -> Result<Vec<f64>> {
    let n = gen.dim();
    // rows of A are the balance equations (columns of L), last one replaced
    // by the normalization
    let mut a = DMatrix::<f64>::zeros(n, n);
    for i in 0..n {
        for (j, r) in gen.row(i) {
            a[(j, i)] += r;
            a[(i, i)] -= r;
        }
    }
    for k in 0..n {
        a[(n - 1, k)] = 1.0;
    }
    let mut b = DVector::<f64>::zeros(n);
    b[n - 1] = 1.0;
    let lu = a.clone().lu();
    let mut x = lu.solve(&b).ok_or_else(|| Error::Numeric("singular balance system".into()))?;
    // one step of iterative refinement
    let r = &b - &a * &x;
    if let Some(dx) = lu.solve(&r) {
        x += dx;
    }
    Ok(x.iter().copied().collect())
}

fn stationary_iterative(gen: &SparseGenerator) -> Result<Vec<f64>> {
    let n = gen.dim();
    let inc = gen.transpose_rows();
    let exit: Vec<f64> = (0..n).map(|i| gen.exit_rate(i)).collect();
    let mut mu = vec![1.0 / n as f64; n];
    for sweep in 0..200_000 {
        for j in 0..n {
            let inflow: f64 = inc[j].iter().map(|&(i, r)| mu[i as usize] * r).sum();
            mu[j] = inflow / exit[j];
        }
        let s: f64 = mu.iter().sum();
        mu.iter_mut().for_each(|v| *v /= s);
        if sweep % 16 == 15 {
            let res = gen.left_apply(&mu).iter().fold(0.0f64, |m, v| m.max(v.abs()));
            if res < 1e-14 {
                return Ok(mu);
            }
        }
    }
    Err(Error::Numeric("Gauss-Seidel did not converge".into()))
}

/// ||mu^T L||_inf.
pub fn stationarity_residual(mu: &ProbVector, gen: &SparseGenerator) -> Result<f64> {
    if mu.len() != gen.dim() {
        return Err(Error::Domain("dimension mismatch".into()));
    }
    Ok(gen.left_apply(mu.as_slice()).iter().fold(0.0f64, |m, v| m.max(v.abs())))
}

/// Kullback-Leibler divergence h(nu | mu).
pub fn relative_entropy(nu: &ProbVector, mu: &ProbVector) -> Result<EntropyValue> {
    if nu.len() != mu.len() {
        return Err(Error::Domain("dimension mismatch".into()));
    }
    Ok(relative_entropy_slices(nu.as_slice(), mu.as_slice()))
}

pub(crate) fn relative_entropy_slices(nu: &[f64], mu: &[f64]) -> EntropyValue {
    let mut h = 0.0;
    for (&a, &b) in nu.iter().zip(mu) {
        if a > 0.0 {
            if b <= 0.0 {
                return ExtReal::PosInf;
            }
            h += a * (a / b).ln();
        }
    }
    ExtReal::Finite(h.max(0.0))
}

/// sum_x [inflow(x) - outflow(x)] log(nu(x)/mu(x)).
pub fn entropy_loss_generator_form(nu: &ProbVector, mu: &ProbVector, gen: &SparseGenerator) -> Result<EntropyValue> {
    let n = gen.dim();
    if nu.len() != n || mu.len() != n {
        return Err(Error::Domain("dimension mismatch".into()));
    }
    if !mu.is_strictly_positive() {
        return Err(Error::Contract("reference law must be strictly positive".into()));
    }
    let (v, m) = (nu.as_slice(), mu.as_slice());
    let mut flow = vec![0.0; n];
    for i in 0..n {
        if v[i] == 0.0 {
            continue;
        }
        for (j, r) in gen.row(i) {
            flow[j] += v[i] * r;
            flow[i] -= v[i] * r;
        }
    }
    let mut g = 0.0;
    for x in 0..n {
        if v[x] > 0.0 {
            g += flow[x] * (v[x] / m[x]).ln();
        } else if flow[x] > 0.0 {
            return Ok(ExtReal::NegInf);
        }
    }
    Ok(ExtReal::Finite(g))
}

/// sum_x sum_{y != x} nu(x) L_yx (mu(y)/mu(x)) Phi(mu(x) nu(y) / (nu(x) mu(y))).
/// Requires mu stationary for `gen`.
pub fn entropy_loss_phi_form(nu: &ProbVector, mu: &ProbVector, gen: &SparseGenerator) -> Result<EntropyValue> {
    let n = gen.dim();
    if nu.len() != n || mu.len() != n {
        return Err(Error::Domain("dimension mismatch".into()));
    }
    if !mu.is_strictly_positive() {
        return Err(Error::Contract("reference law must be strictly positive".into()));
    }
    let scale = gen.max_exit_rate().max(1.0);
    let res = stationarity_residual(mu, gen)?;
    if res > 1e-9 * scale {
        return Err(Error::Contract(format!("reference law is not stationary (residual {res:e})")));
    }
    let (v, m) = (nu.as_slice(), mu.as_slice());
    let mut g = 0.0;
    for y in 0..n {
        for (x, r) in gen.row(y) {
            if v[x] == 0.0 {
                if v[y] > 0.0 {
                    return Ok(ExtReal::NegInf);
                }
                continue;
            }
            let u = m[x] * v[y] / (v[x] * m[y]);
            g += v[x] * r * (m[y] / m[x]) * phi(u);
        }
    }
    Ok(ExtReal::Finite(g))
}

/// nu exp(t L) by uniformization.
pub fn evolve(nu: &ProbVector, gen: &SparseGenerator, t: f64) -> Result<ProbVector> {
    if !(t >= 0.0) || !t.is_finite() {
        return Err(Error::Domain(format!("time {t} must be finite and nonnegative")));
    }
    if nu.len() != gen.dim() {
        return Err(Error::Domain("dimension mismatch".into()));
    }
    let lambda = gen.max_exit_rate();
    if t == 0.0 || lambda == 0.0 {
        return Ok(nu.clone());
    }
    // keep each chunk's Poisson mean moderate so e^{-mean} stays representable
    let chunks = (lambda * t / 20.0).ceil().max(1.0) as usize;
    let dt = t / chunks as f64;
    let mut v = nu.as_slice().to_vec();
    for _ in 0..chunks {
        v = uniformization_step(&v, gen, lambda, dt);
    }
    let s: f64 = v.iter().sum();
    v.iter_mut().for_each(|x| *x = (*x / s).max(0.0));
    ProbVector::new(v)
}

fn uniformization_step(v0: &[f64], gen: &SparseGenerator, lambda: f64, dt: f64) -> Vec<f64> {
    let n = v0.len();
    let mean = lambda * dt;
    let mut w = (-mean).exp();
    let mut acc: Vec<f64> = v0.iter().map(|x| w * x).collect();
    let mut cum = w;
    let mut v = v0.to_vec();
    let exit: Vec<f64> = (0..n).map(|i| gen.exit_rate(i)).collect();
    let mut k = 0usize;
    while 1.0 - cum > 1e-15 && k < 10_000 {
        k += 1;
        let mut next: Vec<f64> = (0..n).map(|i| v[i] * (1.0 - exit[i] / lambda)).collect();
        for i in 0..n {
            if v[i] == 0.0 {
                continue;
            }
            for (j, r) in gen.row(i) {
                next[j] += v[i] * r / lambda;
            }
        }
        v = next;
        w *= mean / k as f64;
        cum += w;
        for (a, x) in acc.iter_mut().zip(&v) {
            *a += w * x;
        }
    }
    acc
}
