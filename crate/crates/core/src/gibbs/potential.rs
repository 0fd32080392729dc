use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lattice::{check_q, state_count, Offset, Torus};

/// One interaction term per translation class: a shape given as offsets
/// and a table of values indexed little-endian over the shape's order.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Term {
    pub shape: Vec<Offset>,
    pub table: Vec<f64>,
}

/// Translation-invariant finite-range potential with inverse temperature.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Potential {
    pub q: usize,
    pub dim: usize,
    pub beta: f64,
    pub terms: Vec<Term>,
}

impl Potential {
    pub fn new(q: usize, dim: usize, beta: f64, terms: Vec<Term>) -> Result<Self> {
        let p = Self { q, dim, beta, terms };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        check_q(self.q)?;
        if self.dim == 0 {
            return Err(Error::Domain("dimension must be positive".into()));
        }
        if !self.beta.is_finite() {
            return Err(Error::Domain("beta must be finite".into()));
        }
        for (k, t) in self.terms.iter().enumerate() {
            if t.shape.is_empty() {
                return Err(Error::Domain(format!("term {k}: empty shape")));
            }
            if t.shape.iter().any(|o| o.len() != self.dim) {
                return Err(Error::Domain(format!("term {k}: offset dimension mismatch")));
            }
            for i in 0..t.shape.len() {
                if t.shape[i + 1..].contains(&t.shape[i]) {
                    return Err(Error::Domain(format!("term {k}: repeated offset")));
                }
            }
            if !t.shape.iter().any(|o| o.iter().all(|&v| v == 0)) {
                return Err(Error::Domain(format!("term {k}: shape must contain the origin")));
            }
            let need = state_count(self.q, t.shape.len())?;
            if t.table.len() as u64 != need {
                return Err(Error::Domain(format!(
                    "term {k}: table has {} entries, expected {need}",
                    t.table.len()
                )));
            }
            if t.table.iter().any(|v| !v.is_finite()) {
                return Err(Error::Domain(format!("term {k}: non-finite table entry")));
            }
        }
        Ok(())
    }

    pub fn zero(q: usize, dim: usize) -> Self {
        Self { q, dim, beta: 1.0, terms: Vec::new() }
    }

    /// Ising model on spins sigma = 2*eta - 1 with Phi_{x,x+e} = -J sigma sigma
    /// for each unit vector e and Phi_x = -h sigma.
    pub fn ising(dim: usize, j: f64, h: f64, beta: f64) -> Self {
        let mut terms = Vec::new();
        for axis in 0..dim {
            let mut e = vec![0i64; dim];
            e[axis] = 1;
            let table = (0..4)
                .map(|idx| {
                    let s0 = 2.0 * (idx % 2) as f64 - 1.0;
                    let s1 = 2.0 * (idx / 2) as f64 - 1.0;
                    -j * s0 * s1
                })
                .collect();
            terms.push(Term { shape: vec![vec![0; dim], e], table });
        }
        if h != 0.0 {
            terms.push(Term { shape: vec![vec![0; dim]], table: vec![h, -h] });
        }
        Self { q: 2, dim, beta, terms }
    }

    /// Potts model: Phi_{x,x+e} = -J 1[eta_x = eta_{x+e}].
    pub fn potts(q: usize, dim: usize, j: f64, beta: f64) -> Self {
        let mut terms = Vec::new();
        for axis in 0..dim {
            let mut e = vec![0i64; dim];
            e[axis] = 1;
            let table = (0..q * q).map(|idx| if idx % q == idx / q { -j } else { 0.0 }).collect();
            terms.push(Term { shape: vec![vec![0; dim], e], table });
        }
        Self { q, dim, beta, terms }
    }

    /// Same interaction at a different inverse temperature.
    pub fn with_beta(&self, beta: f64) -> Self {
        Self { beta, ..self.clone() }
    }

    /// Largest sup-norm diameter over shapes.
    pub fn range(&self) -> usize {
        self.terms
            .iter()
            .flat_map(|t| {
                t.shape.iter().flat_map(move |a| {
                    t.shape
                        .iter()
                        .map(move |b| a.iter().zip(b).map(|(x, y)| x.abs_diff(*y)).max().unwrap_or(0))
                })
            })
            .max()
            .unwrap_or(0) as usize
    }

    /// All offsets of shapes touching `offs`, with `offs` listed first.
    pub fn neighborhood(&self, offs: &[Offset]) -> Vec<Offset> {
        let mut out: Vec<Offset> = offs.to_vec();
        for o in offs {
            for t in &self.terms {
                for s in &t.shape {
                    for b in &t.shape {
                        let p: Offset = (0..self.dim).map(|k| b[k] - s[k] + o[k]).collect();
                        if !out.contains(&p) {
                            out.push(p);
                        }
                    }
                }
            }
        }
        out
    }

    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self).map_err(|e| Error::Format(e.to_string()))
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let p: Self = serde_json::from_str(text).map_err(|e| Error::Format(e.to_string()))?;
        p.validate()?;
        Ok(p)
    }
}

/// A term placed on the torus.
#[derive(Clone, Debug)]
pub(crate) struct Instance {
    pub term: usize,
    pub sites: Vec<usize>,
}

pub(crate) fn instances(pot: &Potential, torus: &Torus) -> Result<Vec<Instance>> {
    if torus.dim() != pot.dim {
        return Err(Error::Geometry(format!(
            "potential dimension {} differs from torus dimension {}",
            pot.dim,
            torus.dim()
        )));
    }
    let mut out = Vec::with_capacity(pot.terms.len() * torus.n_sites());
    for (k, t) in pot.terms.iter().enumerate() {
        for x in 0..torus.n_sites() {
            out.push(Instance { term: k, sites: t.shape.iter().map(|o| torus.shift(x, o)).collect() });
        }
    }
    Ok(out)
}

#[inline]
pub(crate) fn instance_energy(pot: &Potential, inst: &Instance, spins: &[u8]) -> f64 {
    let mut idx = 0usize;
    let mut w = 1usize;
    for &s in &inst.sites {
        idx += w * spins[s] as usize;
        w *= pot.q;
    }
    pot.terms[inst.term].table[idx]
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ising_tables() {
        let p = Potential::ising(1, 1.0, 0.0, 0.5);
        assert_eq!(p.terms[0].table, vec![-1.0, 1.0, 1.0, -1.0]);
        assert_eq!(p.range(), 1);
        p.validate().unwrap();
    }

    #[test]
    fn validation_errors() {
        let mut p = Potential::ising(1, 1.0, 0.0, 0.5);
        p.terms[0].table.pop();
        assert!(p.validate().is_err());
        let bad = Potential::new(2, 1, 1.0, vec![Term { shape: vec![vec![1]], table: vec![0.0, 0.0] }]);
        assert!(bad.is_err());
        assert!(Potential::new(1, 1, 1.0, vec![]).is_err());
    }

    #[test]
    fn neighborhood_of_origin() {
        let p = Potential::ising(2, 1.0, 0.0, 0.5);
        let mut n = p.neighborhood(&[vec![0, 0]]);
        n.sort();
        assert_eq!(n, vec![vec![-1, 0], vec![0, -1], vec![0, 0], vec![0, 1], vec![1, 0]]);
    }

    #[test]
    fn json_roundtrip() {
        let p = Potential::potts(3, 1, 1.0, 0.7);
        assert_eq!(Potential::from_json(&p.to_json().unwrap()).unwrap(), p);
    }
}
