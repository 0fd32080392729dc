use crate::ctmc::ProbVector;
use crate::error::{Error, Result};
use crate::lattice::{decode_into, encode_fast, state_count, Torus, Window};

use super::potential::{instance_energy, instances, Potential};
use super::spec::Specification;

/// Largest state space enumerated for an exact torus measure.
pub const MAX_EXACT_STATES: u64 = 1 << 24;
/// Largest atom count for the mixing bound.
pub const MAX_MIXING_ATOMS: u64 = 1 << 20;

/// A probability vector over all configurations of a torus.
#[derive(Clone, Debug, PartialEq)]
pub struct TorusMeasure {
    torus: Torus,
    q: usize,
    probs: ProbVector,
}

impl TorusMeasure {
    pub fn new(torus: &Torus, q: usize, probs: ProbVector) -> Result<Self> {
        let n = state_count(q, torus.n_sites())?;
        if probs.len() as u64 != n {
            return Err(Error::Domain(format!("expected {n} probabilities, got {}", probs.len())));
        }
        Ok(Self { torus: torus.clone(), q, probs })
    }

    pub fn uniform(torus: &Torus, q: usize) -> Result<Self> {
        let n = state_count(q, torus.n_sites())?;
        Self::new(torus, q, ProbVector::uniform(n as usize))
    }

    /// Independent sites with the same one-site law.
    pub fn product(torus: &Torus, site_law: &[f64]) -> Result<Self> {
        let q = site_law.len();
        let n = torus.n_sites();
        let total = state_count(q, n)?;
        if total > MAX_EXACT_STATES {
            return Err(Error::Capacity(format!("{total} states")));
        }
        let mut spins = vec![0u8; n];
        let w: Vec<f64> = (0..total)
            .map(|i| {
                decode_into(i, q, &mut spins);
                spins.iter().map(|&s| site_law[s as usize]).product()
            })
            .collect();
        Self::new(torus, q, ProbVector::from_weights(w)?)
    }

    pub fn torus(&self) -> &Torus {
        &self.torus
    }

    pub fn q(&self) -> usize {
        self.q
    }

    pub fn probs(&self) -> &ProbVector {
        &self.probs
    }

    pub fn n_states(&self) -> usize {
        self.probs.len()
    }

    /// Marginal table on `sites`, indexed little-endian over their order.
    pub fn marginal(&self, sites: &[usize]) -> Vec<f64> {
        let n = self.torus.n_sites();
        let mut out = vec![0.0; self.q.pow(sites.len() as u32)];
        let mut spins = vec![0u8; n];
        for (i, &p) in self.probs.as_slice().iter().enumerate() {
            if p == 0.0 {
                continue;
            }
            decode_into(i as u64, self.q, &mut spins);
            out[encode_fast(sites.iter().map(|&s| spins[s]), self.q)] += p;
        }
        out
    }

    /// Smallest single-site conditional probability over all states.
    pub fn single_site_delta(&self) -> f64 {
        let n = self.torus.n_sites();
        let q = self.q;
        let p = self.probs.as_slice();
        let mut pow = vec![1usize; n];
        for k in 1..n {
            pow[k] = pow[k - 1] * q;
        }
        let mut best = 1.0f64;
        let mut spins = vec![0u8; n];
        for i in 0..p.len() {
            decode_into(i as u64, q, &mut spins);
            for x in 0..n {
                let base = i - spins[x] as usize * pow[x];
                let z: f64 = (0..q).map(|v| p[base + v * pow[x]]).sum();
                if z > 0.0 {
                    best = best.min(p[i] / z);
                }
            }
        }
        best
    }
}

/// Torus Boltzmann measure mu(eta) proportional to exp(-beta H(eta)).
pub fn exact_gibbs(pot: &Potential, torus: &Torus) -> Result<TorusMeasure> {
    pot.validate()?;
    let total = state_count(pot.q, torus.n_sites())?;
    if total > MAX_EXACT_STATES {
        return Err(Error::Capacity(format!("{total} states exceed the exact-enumeration guard")));
    }
    let insts = instances(pot, torus)?;
    let mut spins = vec![0u8; torus.n_sites()];
    let logw: Vec<f64> = (0..total)
        .map(|i| {
            decode_into(i, pot.q, &mut spins);
            -pot.beta * insts.iter().map(|k| instance_energy(pot, k, &spins)).sum::<f64>()
        })
        .collect();
    let m = logw.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let w: Vec<f64> = logw.iter().map(|l| (l - m).exp()).collect();
    TorusMeasure::new(torus, pot.q, ProbVector::from_weights(w)?)
}

/// Non-nullness constant of a specification.
pub fn nonnull_delta(spec: &Specification) -> f64 {
    spec.delta()
}

/// max over eta of |mu(eta_Delta | eta_{Delta^c}) - gamma_Delta(eta_Delta | eta_{Delta^c})|.
pub fn dlr_residual(mu: &TorusMeasure, spec: &Specification, delta_w: &Window) -> Result<f64> {
    if delta_w.is_empty() {
        return Ok(0.0);
    }
    let q = mu.q;
    let n = mu.torus.n_sites();
    let p = mu.probs.as_slice();
    let sites = delta_w.sites();
    let nd = q.pow(sites.len() as u32);
    let mut spins = vec![0u8; n];
    let mut local = vec![0u8; sites.len()];
    let mut worst = 0.0f64;
    for i in 0..p.len() {
        decode_into(i as u64, q, &mut spins);
        // visit each outside configuration once: only from eta_Delta = 0
        if sites.iter().any(|&s| spins[s] != 0) {
            continue;
        }
        let mut probs = Vec::with_capacity(nd);
        for d in 0..nd {
            decode_into(d as u64, q, &mut local);
            for (&s, &v) in sites.iter().zip(&local) {
                spins[s] = v;
            }
            probs.push(p[encode_fast(spins.iter().copied(), q)]);
        }
        let z: f64 = probs.iter().sum();
        if z <= 0.0 {
            for &s in sites {
                spins[s] = 0;
            }
            let outside: Vec<usize> = (0..n).filter(|s| !sites.contains(s)).collect();
            let values = outside.iter().map(|&s| spins[s]).collect();
            return Err(Error::Division { sites: outside, values });
        }
        let gamma = spec.cond_dist(sites, &spins);
        for d in 0..nd {
            worst = worst.max((probs[d] / z - gamma[d]).abs());
        }
        for &s in sites {
            spins[s] = 0;
        }
    }
    Ok(worst)
}

/// Outcome of the non-nullness log-ratio check.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LogRatioCheck {
    pub holds: bool,
    pub worst: f64,
    pub bound: f64,
    pub delta: f64,
}

/// Checks |log(mu(xi_Delta eta_{Lambda\Delta}) / mu(eta_Lambda))| <= |Delta| log(1/delta)
/// for every eta_Lambda and xi_Delta, with delta the measure's own
/// single-site non-nullness constant.
pub fn log_ratio_bound_check(mu: &TorusMeasure, delta_w: &Window, lam: &Window) -> Result<LogRatioCheck> {
    if !delta_w.is_subset_of(lam) {
        return Err(Error::Geometry("Delta must lie inside Lambda".into()));
    }
    let delta = mu.single_site_delta();
    let bound = delta_w.len() as f64 * (1.0 / delta).ln();
    let q = mu.q;
    let table = mu.marginal(lam.sites());
    let pos: Vec<usize> = delta_w.sites().iter().map(|&s| lam.position(s).unwrap()).collect();
    let mut lv = vec![0u8; lam.len()];
    let mut dv = vec![0u8; delta_w.len()];
    let nd = q.pow(delta_w.len() as u32);
    let mut worst = 0.0f64;
    for (i, &base) in table.iter().enumerate() {
        if base <= 0.0 {
            return Err(Error::Division { sites: lam.sites().to_vec(), values: {
                decode_into(i as u64, q, &mut lv);
                lv.clone()
            } });
        }
        decode_into(i as u64, q, &mut lv);
        for d in 0..nd {
            decode_into(d as u64, q, &mut dv);
            let mut other = lv.clone();
            for (k, &p) in pos.iter().enumerate() {
                other[p] = dv[k];
            }
            let r = (table[encode_fast(other.iter().copied(), q)] / base).ln().abs();
            worst = worst.max(r);
        }
    }
    Ok(LogRatioCheck { holds: worst <= bound * (1.0 + 1e-12) + 1e-12, worst, bound, delta })
}

/// max over full configurations of |(mu o G^{-1})(eta) - 1[eta_Delta = xi]
/// sum_zeta gamma(zeta|eta)/gamma(xi|eta) mu(eta)|, where G sets the spins
/// on Delta to xi. Atoms generate every cylinder, so this bounds the
/// discrepancy on all cylinders up to a factor of the atom count.
pub fn pushforward_density_residual(mu: &TorusMeasure, spec: &Specification, delta_w: &Window, xi: &[u8]) -> Result<f64> {
    if xi.len() != delta_w.len() {
        return Err(Error::Domain("xi must have one spin per window site".into()));
    }
    let q = mu.q;
    let n = mu.torus.n_sites();
    let p = mu.probs.as_slice();
    let sites = delta_w.sites();
    let nd = q.pow(sites.len() as u32);
    let mut spins = vec![0u8; n];
    let mut local = vec![0u8; sites.len()];
    let xi_idx = encode_fast(xi.iter().copied(), q);
    let mut worst = 0.0f64;
    for i in 0..p.len() {
        decode_into(i as u64, q, &mut spins);
        let on = sites.iter().zip(xi).all(|(&s, &v)| spins[s] == v);
        let (lhs, rhs) = if on {
            let mut pre = 0.0;
            for d in 0..nd {
                decode_into(d as u64, q, &mut local);
                let mut other = spins.clone();
                for (&s, &v) in sites.iter().zip(&local) {
                    other[s] = v;
                }
                pre += p[encode_fast(other.iter().copied(), q)];
            }
            let g = spec.cond_dist(sites, &spins);
            let dens: f64 = g.iter().sum::<f64>() / g[xi_idx];
            (pre, dens * p[i])
        } else {
            (0.0, 0.0)
        };
        worst = worst.max((lhs - rhs).abs());
    }
    Ok(worst)
}

/// (1/2) sum_{a,b} |mu(a and b) - mu(a) mu(b)| over atoms a of the field on
/// Lambda and b of the field outside the cube of radius n around the torus
/// center. Upper bound for the strong mixing coefficient.
pub fn beta_mixing_bound(mu: &TorusMeasure, lam: &Window, n: usize) -> Result<f64> {
    let torus = &mu.torus;
    let q = mu.q;
    let c = torus.center();
    let inner: Vec<usize> = if 2 * n + 1 >= torus.min_side() {
        (0..torus.n_sites()).collect()
    } else {
        torus.cube(c, n)?.sites().to_vec()
    };
    let outer: Vec<usize> = (0..torus.n_sites()).filter(|s| !inner.contains(s)).collect();
    if outer.is_empty() || lam.is_empty() {
        return Ok(0.0);
    }
    let atoms = state_count(q, lam.len() + outer.len())?;
    if atoms > MAX_MIXING_ATOMS {
        return Err(Error::Capacity(format!("{atoms} atom pairs")));
    }
    let a_sites = lam.sites();
    let mut union: Vec<usize> = a_sites.to_vec();
    for &s in &outer {
        if !union.contains(&s) {
            union.push(s);
        }
    }
    let joint = mu.marginal(&union);
    let ma = mu.marginal(a_sites);
    let mb = mu.marginal(&outer);
    let mut av = vec![0u8; a_sites.len()];
    let mut bv = vec![0u8; outer.len()];
    let mut uv = vec![0u8; union.len()];
    let mut total = 0.0;
    for (ai, &pa) in ma.iter().enumerate() {
        decode_into(ai as u64, q, &mut av);
        for (bi, &pb) in mb.iter().enumerate() {
            decode_into(bi as u64, q, &mut bv);
            let mut consistent = true;
            for (k, &s) in union.iter().enumerate() {
                let from_a = a_sites.iter().position(|&x| x == s).map(|p| av[p]);
                let from_b = outer.iter().position(|&x| x == s).map(|p| bv[p]);
                uv[k] = match (from_a, from_b) {
                    (Some(x), Some(y)) if x != y => {
                        consistent = false;
                        x
                    }
                    (Some(x), _) => x,
                    (None, Some(y)) => y,
                    (None, None) => unreachable!(),
                };
            }
            let pab = if consistent { joint[encode_fast(uv.iter().copied(), q)] } else { 0.0 };
            total += (pab - pa * pb).abs();
        }
    }
    Ok(0.5 * total)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn zero_potential_uniform() {
        let t = Torus::line(4).unwrap();
        let mu = exact_gibbs(&Potential::zero(3, 1), &t).unwrap();
        for &p in mu.probs().as_slice() {
            assert_abs_diff_eq!(p, 1.0 / 81.0, epsilon = 1e-16);
        }
    }

    #[test]
    fn two_site_ising() {
        let k: f64 = 0.5;
        let t = Torus::line(2).unwrap();
        let mu = exact_gibbs(&Potential::ising(1, 1.0, 0.0, k), &t).unwrap();
        let z = 2.0 * (2.0 * k).exp() + 2.0 * (-2.0 * k).exp();
        let p = mu.probs().as_slice();
        assert_abs_diff_eq!(p[0], (2.0 * k).exp() / z, epsilon = 1e-15);
        assert_abs_diff_eq!(p[3], (2.0 * k).exp() / z, epsilon = 1e-15);
        assert_abs_diff_eq!(p[1], (-2.0 * k).exp() / z, epsilon = 1e-15);
        assert_abs_diff_eq!(p[2], (-2.0 * k).exp() / z, epsilon = 1e-15);
        assert_abs_diff_eq!(p.iter().sum::<f64>(), 1.0, epsilon = 1e-14);
    }

    #[test]
    fn capacity_guard() {
        let t = Torus::line(25).unwrap();
        assert!(matches!(exact_gibbs(&Potential::zero(2, 1), &t), Err(Error::Capacity(_))));
    }

    #[test]
    fn dlr_examples() {
        let t = Torus::line(6).unwrap();
        let pot = Potential::ising(1, 1.0, 0.0, 0.5);
        let spec = Specification::new(&pot, &t).unwrap();
        let mu = exact_gibbs(&pot, &t).unwrap();
        for w in [vec![0], vec![2, 3], vec![1, 3, 5]] {
            let w = Window::new(&t, w).unwrap();
            assert!(dlr_residual(&mu, &spec, &w).unwrap() < 1e-12);
        }
        let uni = TorusMeasure::uniform(&t, 2).unwrap();
        assert!(dlr_residual(&uni, &spec, &Window::new(&t, vec![2]).unwrap()).unwrap() > 0.01);
        assert_eq!(dlr_residual(&uni, &spec, &Window::empty()).unwrap(), 0.0);
    }

    #[test]
    fn dlr_zero_marginal_is_reported() {
        let t = Torus::line(3).unwrap();
        let spec = Specification::new(&Potential::zero(2, 1), &t).unwrap();
        let mut w = vec![0.0; 8];
        w[0] = 1.0;
        let mu = TorusMeasure::new(&t, 2, ProbVector::new(w).unwrap()).unwrap();
        let r = dlr_residual(&mu, &spec, &Window::new(&t, vec![1]).unwrap());
        assert!(matches!(r, Err(Error::Division { .. })));
    }

    #[test]
    fn delta_agrees_with_measure() {
        let t = Torus::line(5).unwrap();
        let pot = Potential::potts(3, 1, 1.0, 0.6);
        let spec = Specification::new(&pot, &t).unwrap();
        let mu = exact_gibbs(&pot, &t).unwrap();
        assert_abs_diff_eq!(mu.single_site_delta(), spec.delta(), epsilon = 1e-14);
    }

    #[test]
    fn log_ratio_examples() {
        let t = Torus::line(6).unwrap();
        let lam = Window::new(&t, vec![1, 2, 3]).unwrap();
        let zero = exact_gibbs(&Potential::zero(2, 1), &t).unwrap();
        let c = log_ratio_bound_check(&zero, &Window::new(&t, vec![2]).unwrap(), &lam).unwrap();
        assert!(c.holds);
        assert_abs_diff_eq!(c.worst, 0.0, epsilon = 1e-15);
        let mu = exact_gibbs(&Potential::ising(1, 1.0, 0.0, 0.5), &t).unwrap();
        let c = log_ratio_bound_check(&mu, &Window::new(&t, vec![2]).unwrap(), &lam).unwrap();
        assert!(c.holds && c.worst > 0.0 && c.worst < c.bound);
        let c = log_ratio_bound_check(&mu, &Window::empty(), &lam).unwrap();
        assert_eq!((c.worst, c.bound), (0.0, 0.0));
    }

    #[test]
    fn pushforward_examples() {
        let t = Torus::line(5).unwrap();
        let pot = Potential::potts(3, 1, 1.0, 0.5);
        let spec = Specification::new(&pot, &t).unwrap();
        let mu = exact_gibbs(&pot, &t).unwrap();
        let w = Window::new(&t, vec![1, 2]).unwrap();
        assert!(pushforward_density_residual(&mu, &spec, &w, &[2, 0]).unwrap() < 1e-12);
        assert!(pushforward_density_residual(&mu, &spec, &Window::empty(), &[]).unwrap() < 1e-16);
        let uni = TorusMeasure::uniform(&t, 3).unwrap();
        assert!(pushforward_density_residual(&uni, &spec, &w, &[2, 0]).unwrap() > 1e-4);
    }

    #[test]
    fn mixing_bound_examples() {
        let t = Torus::line(8).unwrap();
        let lam = Window::new(&t, vec![t.center()]).unwrap();
        let prod = TorusMeasure::product(&t, &[0.3, 0.7]).unwrap();
        for n in 0..4 {
            assert!(beta_mixing_bound(&prod, &lam, n).unwrap() < 1e-15);
        }
        let mu = exact_gibbs(&Potential::ising(1, 1.0, 0.0, 0.5), &t).unwrap();
        let b: Vec<f64> = (0..5).map(|n| beta_mixing_bound(&mu, &lam, n).unwrap()).collect();
        assert!(b[1] > b[3] && b[3] > 0.0);
        for w in b.windows(2) {
            assert!(w[1] <= w[0] + 1e-15);
        }
    }
}
