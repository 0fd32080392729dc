use crate::error::{Error, Result};
use crate::gibbs::{MarkovChain1d, TorusMeasure};
use crate::lattice::{decode_into, state_count, Torus};

/// Where window marginals come from.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SourceKind {
    TorusExact,
    Product,
    Markov,
    Empirical,
}

impl SourceKind {
    pub fn is_exact(self) -> bool {
        self != SourceKind::Empirical
    }
}

/// Evaluator of nu(eta_W) for windows W of torus sites.
pub trait MarginalSource: Sync {
    fn q(&self) -> usize;
    fn kind(&self) -> SourceKind;
    /// Marginal table on `sites`, little-endian over the given order.
    fn marginal(&self, sites: &[usize]) -> Result<Vec<f64>>;
    /// Lower bound on single-site conditional probabilities, if known.
    fn single_site_delta(&self) -> Option<f64>;
}

impl MarginalSource for TorusMeasure {
    fn q(&self) -> usize {
        TorusMeasure::q(self)
    }

    fn kind(&self) -> SourceKind {
        SourceKind::TorusExact
    }

    fn marginal(&self, sites: &[usize]) -> Result<Vec<f64>> {
        check_sites(sites, self.torus().n_sites())?;
        state_count(TorusMeasure::q(self), sites.len())?;
        Ok(TorusMeasure::marginal(self, sites))
    }

    fn single_site_delta(&self) -> Option<f64> {
        Some(TorusMeasure::single_site_delta(self))
    }
}

fn check_sites(sites: &[usize], n: usize) -> Result<()> {
    for (k, &s) in sites.iter().enumerate() {
        if s >= n {
            return Err(Error::Geometry(format!("site {s} outside torus of {n} sites")));
        }
        if sites[..k].contains(&s) {
            return Err(Error::Geometry(format!("site {s} repeated in window")));
        }
    }
    Ok(())
}

/// I.i.d. spins with a common one-site law.
#[derive(Clone, Debug, PartialEq)]
pub struct ProductSource {
    law: Vec<f64>,
}

/// Windows above this size are refused by the product source.
const MAX_PRODUCT_WINDOW: usize = 24;

impl ProductSource {
    pub fn new(law: Vec<f64>) -> Result<Self> {
        crate::lattice::check_q(law.len())?;
        let s: f64 = law.iter().sum();
        if law.iter().any(|p| !p.is_finite() || *p < 0.0) || (s - 1.0).abs() > 1e-12 {
            return Err(Error::Domain("one-site law must be a probability vector".into()));
        }
        Ok(Self { law })
    }

    pub fn law(&self) -> &[f64] {
        &self.law
    }
}

impl MarginalSource for ProductSource {
    fn q(&self) -> usize {
        self.law.len()
    }

    fn kind(&self) -> SourceKind {
        SourceKind::Product
    }

    fn marginal(&self, sites: &[usize]) -> Result<Vec<f64>> {
        if sites.len() > MAX_PRODUCT_WINDOW {
            return Err(Error::Capacity(format!("product window of {} sites", sites.len())));
        }
        for (k, s) in sites.iter().enumerate() {
            if sites[..k].contains(s) {
                return Err(Error::Geometry(format!("site {s} repeated in window")));
            }
        }
        let q = self.law.len();
        let mut vals = vec![0u8; sites.len()];
        Ok((0..q.pow(sites.len() as u32))
            .map(|i| {
                decode_into(i as u64, q, &mut vals);
                vals.iter().map(|&v| self.law[v as usize]).product()
            })
            .collect())
    }

    fn single_site_delta(&self) -> Option<f64> {
        Some(self.law.iter().cloned().fold(f64::INFINITY, f64::min))
    }
}

/// Stationary d=1 Markov chain read through a torus's coordinates. Sites
/// are placed at their signed displacement from the torus center, so
/// windows never wrap.
#[derive(Clone, Debug)]
pub struct MarkovSource {
    chain: MarkovChain1d,
    torus: Torus,
}

impl MarkovSource {
    pub fn new(chain: MarkovChain1d, torus: &Torus) -> Result<Self> {
        if torus.dim() != 1 {
            return Err(Error::Geometry("Markov sources need a one-dimensional torus".into()));
        }
        Ok(Self { chain, torus: torus.clone() })
    }

    pub fn chain(&self) -> &MarkovChain1d {
        &self.chain
    }

    fn position(&self, site: usize) -> i64 {
        let side = self.torus.sides()[0] as i64;
        let c = self.torus.center() as i64;
        let mut d = (site as i64 - c).rem_euclid(side);
        if d > side / 2 {
            d -= side;
        }
        c + d
    }
}

impl MarginalSource for MarkovSource {
    fn q(&self) -> usize {
        self.chain.q()
    }

    fn kind(&self) -> SourceKind {
        SourceKind::Markov
    }

    fn marginal(&self, sites: &[usize]) -> Result<Vec<f64>> {
        check_sites(sites, self.torus.n_sites())?;
        let pos: Vec<i64> = sites.iter().map(|&s| self.position(s)).collect();
        self.chain.marginal(&pos)
    }

    fn single_site_delta(&self) -> Option<f64> {
        Some(self.chain.single_site_delta())
    }
}

/// Window frequencies from samples; accepted only by the attractor
/// residual.
#[derive(Clone, Debug, PartialEq)]
pub struct EmpiricalSource {
    q: usize,
    window: Vec<usize>,
    freqs: Vec<f64>,
}

impl EmpiricalSource {
    pub fn new(q: usize, window: Vec<usize>, freqs: Vec<f64>) -> Result<Self> {
        if freqs.len() != q.pow(window.len() as u32) {
            return Err(Error::Domain("frequency table does not match window".into()));
        }
        Ok(Self { q, window, freqs })
    }
}

impl MarginalSource for EmpiricalSource {
    fn q(&self) -> usize {
        self.q
    }

    fn kind(&self) -> SourceKind {
        SourceKind::Empirical
    }

    fn marginal(&self, sites: &[usize]) -> Result<Vec<f64>> {
        let pos: Vec<usize> = sites
            .iter()
            .map(|s| self.window.iter().position(|w| w == s).ok_or_else(|| Error::Geometry(format!("site {s} outside sampled window"))))
            .collect::<Result<_>>()?;
        let mut out = vec![0.0; self.q.pow(sites.len() as u32)];
        let mut vals = vec![0u8; self.window.len()];
        for (i, &f) in self.freqs.iter().enumerate() {
            decode_into(i as u64, self.q, &mut vals);
            out[crate::lattice::encode_fast(pos.iter().map(|&p| vals[p]), self.q)] += f;
        }
        Ok(out)
    }

    fn single_site_delta(&self) -> Option<f64> {
        None
    }
}

/// Rejects sources the windowed functionals cannot use.
pub(crate) fn require_exact(src: &dyn MarginalSource, what: &str) -> Result<()> {
    if src.kind().is_exact() {
        Ok(())
    } else {
        Err(Error::Unsupported(format!("{what} needs an exact marginal source")))
    }
}
