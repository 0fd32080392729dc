//! Finite tori, spin configurations, state indices and windows.
//!
//! Sites are numbered row-major (last axis fastest). A configuration is
//! encoded as a mixed-radix little-endian integer: site 0 is the least
//! significant digit.

use crate::error::{Error, Result};

/// Offset relative to a site, one component per axis.
pub type Offset = Vec<i64>;

/// d-dimensional periodic box.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Torus {
    sides: Vec<usize>,
    strides: Vec<usize>,
    n_sites: usize,
}

impl Torus {
    pub fn new(sides: &[usize]) -> Result<Self> {
        if sides.is_empty() {
            return Err(Error::Domain("torus needs at least one axis".into()));
        }
        if sides.iter().any(|&s| s == 0) {
            return Err(Error::Domain("torus side lengths must be positive".into()));
        }
        let mut strides = vec![1usize; sides.len()];
        for k in (0..sides.len() - 1).rev() {
            strides[k] = strides[k + 1]
                .checked_mul(sides[k + 1])
                .ok_or_else(|| Error::Capacity("torus too large".into()))?;
        }
        let n_sites = strides[0]
            .checked_mul(sides[0])
            .ok_or_else(|| Error::Capacity("torus too large".into()))?;
        Ok(Self { sides: sides.to_vec(), strides, n_sites })
    }

    pub fn line(n: usize) -> Result<Self> {
        Self::new(&[n])
    }

    pub fn dim(&self) -> usize {
        self.sides.len()
    }

    pub fn sides(&self) -> &[usize] {
        &self.sides
    }

    pub fn n_sites(&self) -> usize {
        self.n_sites
    }

    pub fn min_side(&self) -> usize {
        *self.sides.iter().min().unwrap()
    }

    pub fn coords(&self, site: usize) -> Vec<usize> {
        let mut rest = site;
        self.strides
            .iter()
            .map(|&st| {
                let c = rest / st;
                rest %= st;
                c
            })
            .collect()
    }

    pub fn site(&self, coords: &[usize]) -> usize {
        coords
            .iter()
            .zip(&self.strides)
            .zip(&self.sides)
            .map(|((&c, &st), &s)| (c % s) * st)
            .sum()
    }

    /// Site reached from `site` by adding `off`, wrapping on every axis.
    pub fn shift(&self, site: usize, off: &[i64]) -> usize {
        debug_assert_eq!(off.len(), self.dim());
        let mut out = 0;
        let mut rest = site;
        for k in 0..self.dim() {
            let c = (rest / self.strides[k]) as i64;
            rest %= self.strides[k];
            let s = self.sides[k] as i64;
            out += ((c + off[k]).rem_euclid(s) as usize) * self.strides[k];
        }
        out
    }

    /// Periodic sup-norm distance.
    pub fn distance(&self, a: usize, b: usize) -> usize {
        let ca = self.coords(a);
        let cb = self.coords(b);
        (0..self.dim())
            .map(|k| {
                let d = ca[k].abs_diff(cb[k]);
                d.min(self.sides[k] - d)
            })
            .max()
            .unwrap_or(0)
    }

    /// Site at coordinate floor(side/2) on every axis.
    pub fn center(&self) -> usize {
        let c: Vec<usize> = self.sides.iter().map(|s| s / 2).collect();
        self.site(&c)
    }

    /// Sites of the cube `center + [-r, r]^d`, row-major in the offset, with
    /// wrap. Fails if the cube would overlap itself.
    pub fn cube(&self, center: usize, r: usize) -> Result<Window> {
        let side = 2 * r + 1;
        if side > self.min_side() {
            return Err(Error::Geometry(format!(
                "cube of side {side} does not fit in torus with side {}",
                self.min_side()
            )));
        }
        let offs = cube_offsets(self.dim(), r as i64);
        Window::new(self, offs.iter().map(|o| self.shift(center, o)).collect())
    }
}

/// All offsets of `[-r, r]^d`, row-major.
pub fn cube_offsets(d: usize, r: i64) -> Vec<Offset> {
    let mut out = vec![Vec::with_capacity(d)];
    for _ in 0..d {
        let mut next = Vec::with_capacity(out.len() * (2 * r as usize + 1));
        for o in &out {
            for v in -r..=r {
                let mut o2 = o.clone();
                o2.push(v);
                next.push(o2);
            }
        }
        out = next;
    }
    out
}

/// Spins on every site of a torus.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct Configuration {
    pub spins: Vec<u8>,
    pub q: usize,
}

impl Configuration {
    pub fn new(spins: Vec<u8>, q: usize) -> Result<Self> {
        check_q(q)?;
        if let Some(&s) = spins.iter().find(|&&s| s as usize >= q) {
            return Err(Error::Domain(format!("spin {s} out of range for q={q}")));
        }
        Ok(Self { spins, q })
    }

    pub fn zeros(n: usize, q: usize) -> Self {
        Self { spins: vec![0; n], q }
    }

    pub fn len(&self) -> usize {
        self.spins.len()
    }

    pub fn is_empty(&self) -> bool {
        self.spins.is_empty()
    }

    pub fn encode(&self) -> Result<u64> {
        encode(&self.spins, self.q)
    }

    pub fn decode(index: u64, n: usize, q: usize) -> Result<Self> {
        check_q(q)?;
        let total = state_count(q, n)?;
        if index >= total {
            return Err(Error::Domain(format!("state index {index} out of range")));
        }
        let mut spins = vec![0u8; n];
        decode_into(index, q, &mut spins);
        Ok(Self { spins, q })
    }

    /// (tau_x eta)_y = eta_{y - x}.
    pub fn translate(&self, torus: &Torus, shift: &[i64]) -> Self {
        let neg: Vec<i64> = shift.iter().map(|v| -v).collect();
        let spins = (0..torus.n_sites()).map(|y| self.spins[torus.shift(y, &neg)]).collect();
        Self { spins, q: self.q }
    }

    pub fn project(&self, w: &Window) -> Vec<u8> {
        w.sites().iter().map(|&s| self.spins[s]).collect()
    }
}

pub(crate) fn check_q(q: usize) -> Result<()> {
    if !(2..=255).contains(&q) {
        return Err(Error::Domain(format!("local state count q={q} must lie in 2..=255")));
    }
    Ok(())
}

/// q^n, or a capacity error if it does not fit in 64 bits.
pub fn state_count(q: usize, n: usize) -> Result<u64> {
    let mut t: u64 = 1;
    for _ in 0..n {
        t = t
            .checked_mul(q as u64)
            .ok_or_else(|| Error::Capacity(format!("{q}^{n} states overflow")))?;
    }
    Ok(t)
}

pub fn encode(spins: &[u8], q: usize) -> Result<u64> {
    let mut idx: u64 = 0;
    let mut w: u64 = 1;
    for (k, &s) in spins.iter().enumerate() {
        if s as usize >= q {
            return Err(Error::Domain(format!("spin {s} at site {k} out of range for q={q}")));
        }
        idx = idx
            .checked_add(w * s as u64)
            .ok_or_else(|| Error::Capacity("state index overflow".into()))?;
        if k + 1 < spins.len() {
            w = w
                .checked_mul(q as u64)
                .ok_or_else(|| Error::Capacity("state index overflow".into()))?;
        }
    }
    Ok(idx)
}

/// Unchecked little-endian encode for hot loops.
#[inline]
pub fn encode_fast(spins: impl IntoIterator<Item = u8>, q: usize) -> usize {
    let mut idx = 0usize;
    let mut w = 1usize;
    for s in spins {
        idx += w * s as usize;
        w *= q;
    }
    idx
}

#[inline]
pub fn decode_into(mut index: u64, q: usize, out: &mut [u8]) {
    for s in out.iter_mut() {
        *s = (index % q as u64) as u8;
        index /= q as u64;
    }
}

/// Ordered set of distinct torus sites.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct Window {
    sites: Vec<usize>,
}

impl Window {
    pub fn new(torus: &Torus, sites: Vec<usize>) -> Result<Self> {
        let mut seen = vec![false; torus.n_sites()];
        for &s in &sites {
            if s >= torus.n_sites() {
                return Err(Error::Geometry(format!("site {s} outside torus")));
            }
            if seen[s] {
                return Err(Error::Geometry(format!("site {s} repeated in window")));
            }
            seen[s] = true;
        }
        Ok(Self { sites })
    }

    pub fn empty() -> Self {
        Self { sites: Vec::new() }
    }

    pub fn all(torus: &Torus) -> Self {
        Self { sites: (0..torus.n_sites()).collect() }
    }

    pub fn sites(&self) -> &[usize] {
        &self.sites
    }

    pub fn len(&self) -> usize {
        self.sites.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sites.is_empty()
    }

    pub fn contains(&self, site: usize) -> bool {
        self.sites.contains(&site)
    }

    pub fn position(&self, site: usize) -> Option<usize> {
        self.sites.iter().position(|&s| s == site)
    }

    pub fn is_subset_of(&self, other: &Window) -> bool {
        self.sites.iter().all(|s| other.contains(*s))
    }

    /// Sites of `self` followed by the sites of `other` not already present.
    pub fn union(&self, other: &Window) -> Window {
        let mut sites = self.sites.clone();
        for &s in &other.sites {
            if !sites.contains(&s) {
                sites.push(s);
            }
        }
        Window { sites }
    }

    /// Sites of `self` not in `other`, keeping order.
    pub fn minus(&self, other: &Window) -> Window {
        Window { sites: self.sites.iter().copied().filter(|s| !other.contains(*s)).collect() }
    }

    pub fn translate(&self, torus: &Torus, shift: &[i64]) -> Window {
        Window { sites: self.sites.iter().map(|&s| torus.shift(s, shift)).collect() }
    }

    /// Sites `anchor + off` for each offset; fails on self-overlap.
    pub fn from_offsets(torus: &Torus, anchor: usize, offs: &[Offset]) -> Result<Window> {
        Window::new(torus, offs.iter().map(|o| torus.shift(anchor, o)).collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn encode_examples() {
        assert_eq!(encode(&[0, 1, 0], 2).unwrap(), 2);
        assert_eq!(encode(&[2, 1], 3).unwrap(), 5);
        assert!(encode(&[3], 3).is_err());
    }

    #[test]
    fn translate_example() {
        let t = Torus::line(4).unwrap();
        let c = Configuration::new(vec![0, 1, 2, 0], 3).unwrap();
        assert_eq!(c.translate(&t, &[1]).spins, vec![0, 0, 1, 2]);
        assert_eq!(c.translate(&t, &[0]), c);
        assert_eq!(c.translate(&t, &[4]), c);
    }

    #[test]
    fn exhaustive_roundtrip_small() {
        let q = 3;
        let n = 6;
        for idx in 0..state_count(q, n).unwrap() {
            let c = Configuration::decode(idx, n, q).unwrap();
            assert_eq!(c.encode().unwrap(), idx);
        }
    }

    #[test]
    fn projections() {
        let t = Torus::new(&[2, 3]).unwrap();
        let c = Configuration::new(vec![0, 1, 0, 1, 1, 0], 2).unwrap();
        assert_eq!(c.project(&Window::all(&t)), c.spins);
        assert!(c.project(&Window::empty()).is_empty());
        let big = Window::new(&t, vec![5, 1, 3, 0]).unwrap();
        let small = Window::new(&t, vec![3, 5]).unwrap();
        let pb = c.project(&big);
        let via: Vec<u8> = small.sites().iter().map(|s| pb[big.position(*s).unwrap()]).collect();
        assert_eq!(via, c.project(&small));
    }

    #[test]
    fn row_major_and_center() {
        let t = Torus::new(&[3, 4]).unwrap();
        assert_eq!(t.site(&[1, 2]), 6);
        assert_eq!(t.coords(6), vec![1, 2]);
        assert_eq!(t.center(), t.site(&[1, 2]));
        assert_eq!(t.shift(0, &[-1, -1]), t.site(&[2, 3]));
        assert_eq!(t.distance(0, t.site(&[2, 3])), 1);
    }

    #[test]
    fn cube_rejects_overlap() {
        let t = Torus::line(5).unwrap();
        assert_eq!(t.cube(2, 2).unwrap().len(), 5);
        assert!(t.cube(2, 3).is_err());
        assert!(Window::new(&t, vec![1, 1]).is_err());
    }

    fn torus_and_config() -> impl Strategy<Value = (Vec<usize>, usize, Vec<u8>)> {
        (prop::collection::vec(1usize..5, 1..3), 2usize..4).prop_flat_map(|(sides, q)| {
            let n: usize = sides.iter().product();
            (Just(sides), Just(q), prop::collection::vec(0u8..q as u8, n))
        })
    }

    proptest! {
        #[test]
        fn roundtrip_random((sides, q, spins) in torus_and_config()) {
            let c = Configuration::new(spins, q).unwrap();
            let idx = c.encode().unwrap();
            prop_assert_eq!(Configuration::decode(idx, c.len(), q).unwrap(), c);
            let _ = sides;
        }

        #[test]
        fn full_cycle_is_identity((sides, q, spins) in torus_and_config(), axis in 0usize..2) {
            let t = Torus::new(&sides).unwrap();
            let axis = axis % t.dim();
            let c = Configuration::new(spins, q).unwrap();
            let mut unit = vec![0i64; t.dim()];
            unit[axis] = 1;
            let mut cur = c.clone();
            for _ in 0..sides[axis] {
                cur = cur.translate(&t, &unit);
            }
            prop_assert_eq!(cur, c);
        }

        #[test]
        fn projection_commutes_with_translation(
            (sides, q, spins) in torus_and_config(),
            shift in prop::collection::vec(-6i64..6, 2),
            pick in prop::collection::vec(any::<prop::sample::Index>(), 0..4),
        ) {
            let t = Torus::new(&sides).unwrap();
            let shift = &shift[..t.dim()];
            let c = Configuration::new(spins, q).unwrap();
            let mut sites: Vec<usize> = pick.iter().map(|i| i.index(t.n_sites())).collect();
            sites.sort_unstable();
            sites.dedup();
            let w = Window::new(&t, sites).unwrap();
            let neg: Vec<i64> = shift.iter().map(|v| -v).collect();
            let lhs = c.translate(&t, shift).project(&w);
            let rhs = c.project(&w.translate(&t, &neg));
            prop_assert_eq!(lhs, rhs);
        }

        #[test]
        fn distance_is_a_metric(sides in prop::collection::vec(1usize..6, 1..3), a in any::<prop::sample::Index>(), b in any::<prop::sample::Index>(), c in any::<prop::sample::Index>()) {
            let t = Torus::new(&sides).unwrap();
            let (a, b, c) = (a.index(t.n_sites()), b.index(t.n_sites()), c.index(t.n_sites()));
            prop_assert_eq!(t.distance(a, b), t.distance(b, a));
            prop_assert!(t.distance(a, c) <= t.distance(a, b) + t.distance(b, c));
        }
    }
}
