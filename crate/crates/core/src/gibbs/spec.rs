use crate::error::{Error, Result};
use crate::lattice::{decode_into, encode_fast, state_count, Offset, Torus};

use super::potential::{instance_energy, instances, Instance, Potential};

/// Largest local enumeration performed when computing the non-nullness
/// constant.
const MAX_LOCAL: u64 = 1 << 24;

/// Finite-volume conditional laws gamma_Delta(. | eta_{Delta^c}) on a torus.
#[derive(Clone, Debug)]
pub struct Specification {
    pot: Potential,
    torus: Torus,
    instances: Vec<Instance>,
    site_instances: Vec<Vec<u32>>,
    delta: f64,
}

impl Specification {
    pub fn new(pot: &Potential, torus: &Torus) -> Result<Self> {
        pot.validate()?;
        let range = pot.range();
        if 2 * range >= torus.min_side() {
            return Err(Error::Geometry(format!(
                "interaction range {range} is not below half the torus side {}",
                torus.min_side()
            )));
        }
        let instances = instances(pot, torus)?;
        let mut site_instances = vec![Vec::new(); torus.n_sites()];
        for (k, inst) in instances.iter().enumerate() {
            for &s in &inst.sites {
                if !site_instances[s].contains(&(k as u32)) {
                    site_instances[s].push(k as u32);
                }
            }
        }
        let mut spec = Self { pot: pot.clone(), torus: torus.clone(), instances, site_instances, delta: 1.0 };
        spec.delta = spec.compute_delta()?;
        Ok(spec)
    }

    pub fn potential(&self) -> &Potential {
        &self.pot
    }

    pub fn torus(&self) -> &Torus {
        &self.torus
    }

    pub fn q(&self) -> usize {
        self.pot.q
    }

    pub fn beta(&self) -> f64 {
        self.pot.beta
    }

    /// Non-nullness constant: smallest single-site conditional probability.
    pub fn delta(&self) -> f64 {
        self.delta
    }

    /// Offsets on which gamma at the given offsets depends (including them).
    pub fn dependence(&self, offs: &[Offset]) -> Vec<Offset> {
        self.pot.neighborhood(offs)
    }

    fn touching(&self, window: &[usize]) -> Vec<u32> {
        let mut out: Vec<u32> = Vec::new();
        for &s in window {
            for &k in &self.site_instances[s] {
                if !out.contains(&k) {
                    out.push(k);
                }
            }
        }
        out
    }

    fn energy(&self, insts: &[u32], spins: &[u8]) -> f64 {
        insts.iter().map(|&k| instance_energy(&self.pot, &self.instances[k as usize], spins)).sum()
    }

    /// Sum of all terms meeting `window`, evaluated at `spins`.
    pub fn window_energy(&self, window: &[usize], spins: &[u8]) -> f64 {
        self.energy(&self.touching(window), spins)
    }

    /// gamma_Delta(xi | eta) for every xi on `window`, indexed little-endian
    /// over the window's order. Spins inside the window are ignored.
    pub fn cond_dist(&self, window: &[usize], spins: &[u8]) -> Vec<f64> {
        let insts = self.touching(window);
        let q = self.q();
        let n = q.pow(window.len() as u32);
        let mut buf = spins.to_vec();
        let mut local = vec![0u8; window.len()];
        let mut logw = Vec::with_capacity(n);
        for idx in 0..n {
            decode_into(idx as u64, q, &mut local);
            for (&s, &v) in window.iter().zip(&local) {
                buf[s] = v;
            }
            logw.push(-self.beta() * self.energy(&insts, &buf));
        }
        let m = logw.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut w: Vec<f64> = logw.iter().map(|l| (l - m).exp()).collect();
        let z: f64 = w.iter().sum();
        w.iter_mut().for_each(|v| *v /= z);
        w
    }

    /// gamma_Delta(eta_Delta | eta_{Delta^c}).
    pub fn cond_prob(&self, window: &[usize], spins: &[u8]) -> f64 {
        let idx = encode_fast(window.iter().map(|&s| spins[s]), self.q());
        self.cond_dist(window, spins)[idx]
    }

    /// log gamma(xi | eta) - log gamma(eta_Delta | eta), with `xi` listed in
    /// window order.
    pub fn log_ratio(&self, window: &[usize], spins: &[u8], xi: &[u8]) -> f64 {
        let insts = self.touching(window);
        let e0 = self.energy(&insts, spins);
        let mut buf = spins.to_vec();
        for (&s, &v) in window.iter().zip(xi) {
            buf[s] = v;
        }
        -self.beta() * (self.energy(&insts, &buf) - e0)
    }

    /// Torus configuration equal to `vals` at `anchor + offs` and 0 elsewhere.
    pub fn embed(&self, anchor: usize, offs: &[Offset], vals: &[u8]) -> Vec<u8> {
        let mut spins = vec![0u8; self.torus.n_sites()];
        for (o, &v) in offs.iter().zip(vals) {
            spins[self.torus.shift(anchor, o)] = v;
        }
        spins
    }

    fn compute_delta(&self) -> Result<f64> {
        let origin = vec![vec![0i64; self.pot.dim]];
        let nb = self.dependence(&origin);
        let count = state_count(self.q(), nb.len())?;
        if count > MAX_LOCAL {
            return Err(Error::Capacity(format!("{count} boundary configurations for delta")));
        }
        let mut vals = vec![0u8; nb.len()];
        let mut best = 1.0f64;
        let site = [0usize];
        for idx in 0..count {
            decode_into(idx, self.q(), &mut vals);
            let spins = self.embed(0, &nb, &vals);
            let d = self.cond_dist(&site, &spins);
            best = best.min(d.iter().cloned().fold(f64::INFINITY, f64::min));
        }
        Ok(best)
    }

    /// gamma_Lambda(A | eta) for the cylinder A = {spins at `event_sites`
    /// equal `event_vals`}; event sites may lie inside or outside Lambda.
    pub fn kernel_prob(&self, window: &[usize], spins: &[u8], event_sites: &[usize], event_vals: &[u8]) -> f64 {
        for (s, v) in event_sites.iter().zip(event_vals) {
            if !window.contains(s) && spins[*s] != *v {
                return 0.0;
            }
        }
        let dist = self.cond_dist(window, spins);
        let q = self.q();
        let mut local = vec![0u8; window.len()];
        let mut total = 0.0;
        'outer: for (idx, p) in dist.iter().enumerate() {
            decode_into(idx as u64, q, &mut local);
            for (s, v) in event_sites.iter().zip(event_vals) {
                if let Some(k) = window.iter().position(|w| w == s) {
                    if local[k] != *v {
                        continue 'outer;
                    }
                }
            }
            total += p;
        }
        total
    }

    /// |gamma_Lambda(gamma_Delta(eta_Delta|.) | eta) - gamma_Lambda(eta_Delta | eta)|
    /// maximized over eta_Delta, for Delta inside Lambda.
    pub fn consistency_residual(&self, lam: &[usize], delta: &[usize], spins: &[u8]) -> Result<f64> {
        if !delta.iter().all(|s| lam.contains(s)) {
            return Err(Error::Geometry("consistency needs Delta inside Lambda".into()));
        }
        let q = self.q();
        let outer = self.cond_dist(lam, spins);
        let mut buf = spins.to_vec();
        let mut lv = vec![0u8; lam.len()];
        let nd = q.pow(delta.len() as u32);
        let mut composed = vec![0.0; nd];
        let mut direct = vec![0.0; nd];
        for (idx, p) in outer.iter().enumerate() {
            decode_into(idx as u64, q, &mut lv);
            for (&s, &v) in lam.iter().zip(&lv) {
                buf[s] = v;
            }
            let inner = self.cond_dist(delta, &buf);
            for (d, g) in inner.iter().enumerate() {
                composed[d] += p * g;
            }
            direct[encode_fast(delta.iter().map(|&s| buf[s]), q)] += p;
        }
        Ok(composed.iter().zip(&direct).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max))
    }

    /// max over cylinders of |gamma_Lambda(eta_Lambda eta_Delta | .) -
    /// gamma_Lambda(eta_Lambda | .) 1[eta_Delta]| for Delta outside Lambda.
    pub fn properness_residual(&self, lam: &[usize], delta: &[usize], spins: &[u8]) -> f64 {
        let q = self.q();
        let nl = q.pow(lam.len() as u32);
        let nd = q.pow(delta.len() as u32);
        let mut lv = vec![0u8; lam.len()];
        let mut dv = vec![0u8; delta.len()];
        let mut worst = 0.0f64;
        let dist = self.cond_dist(lam, spins);
        for a in 0..nl {
            decode_into(a as u64, q, &mut lv);
            for b in 0..nd {
                decode_into(b as u64, q, &mut dv);
                let mut sites = lam.to_vec();
                sites.extend_from_slice(delta);
                let mut vals = lv.clone();
                vals.extend_from_slice(&dv);
                let lhs = self.kernel_prob(lam, spins, &sites, &vals);
                let ind = delta.iter().zip(&dv).all(|(s, v)| spins[*s] == *v);
                let rhs = if ind { dist[a] } else { 0.0 };
                worst = worst.max((lhs - rhs).abs());
            }
        }
        worst
    }

    /// Full torus energy H(eta).
    pub fn torus_energy(&self, spins: &[u8]) -> f64 {
        self.instances.iter().map(|i| instance_energy(&self.pot, i, spins)).sum()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn zero_potential_is_uniform() {
        let t = Torus::line(5).unwrap();
        let s = Specification::new(&Potential::zero(3, 1), &t).unwrap();
        let d = s.cond_dist(&[1, 2], &[0; 5]);
        assert_eq!(d.len(), 9);
        for v in d {
            assert_abs_diff_eq!(v, 1.0 / 9.0, epsilon = 1e-15);
        }
        assert_abs_diff_eq!(s.delta(), 1.0 / 3.0, epsilon = 1e-15);
    }

    #[test]
    fn ising_aligned_neighbors() {
        let k: f64 = 0.5;
        let t = Torus::line(6).unwrap();
        let s = Specification::new(&Potential::ising(1, 1.0, 0.0, k), &t).unwrap();
        let p = s.cond_prob(&[2], &[1, 1, 1, 1, 1, 1]);
        // e / (e + 1/e)
        assert_abs_diff_eq!(p, 0.880_797_077_977_882_3, epsilon = 1e-15);
        assert_abs_diff_eq!(s.delta(), 1.0 / (1.0 + (4.0 * k).exp()), epsilon = 1e-15);
        assert!(s.delta() <= 0.5);
    }

    #[test]
    fn range_guard() {
        let t = Torus::line(2).unwrap();
        assert!(matches!(
            Specification::new(&Potential::ising(1, 1.0, 0.0, 0.5), &t),
            Err(Error::Geometry(_))
        ));
    }

    #[test]
    fn consistency_and_properness() {
        let t = Torus::line(6).unwrap();
        let s = Specification::new(&Potential::potts(3, 1, 1.0, 0.8), &t).unwrap();
        let spins = [0, 2, 1, 1, 0, 2];
        let r = s.consistency_residual(&[1, 2, 3], &[2], &spins).unwrap();
        assert!(r < 1e-12);
        let r = s.consistency_residual(&[1, 2, 3], &[1, 3], &spins).unwrap();
        assert!(r < 1e-12);
        assert!(s.properness_residual(&[1, 2], &[4, 5], &spins) < 1e-15);
    }

    #[test]
    fn log_ratio_matches_cond_dist() {
        let t = Torus::new(&[3, 3]).unwrap();
        let s = Specification::new(&Potential::ising(2, 0.7, 0.2, 1.1), &t).unwrap();
        let spins = [0, 1, 1, 0, 1, 0, 0, 0, 1];
        let d = s.cond_dist(&[4], &spins);
        let lr = s.log_ratio(&[4], &spins, &[0]);
        assert_abs_diff_eq!(lr, (d[0] / d[1]).ln(), epsilon = 1e-12);
    }
}
