use std::collections::BTreeSet;

use rayon::prelude::*;

use super::scheme::TruncationScheme;
use super::source::{require_exact, MarginalSource};
use crate::ctmc::{f0, EntropyValue, ExtReal};
use crate::dynamics::{RateFamily, Rule};
use crate::error::{Error, Result};
use crate::gibbs::{Specification, MAX_EXACT_STATES};
use crate::lattice::{decode_into, encode_fast, state_count, Offset, Torus, Window};

/// Orientation of the gamma ratio inside f.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum RatioOrientation {
    /// gamma(xi | w) / gamma(eta | w); consistent with F and zero at nu = mu.
    #[default]
    KeyEquality,
    /// gamma(eta | w) / gamma(xi | w), as printed in the definition of f.
    AsDisplayed,
}

/// Value of a windowed sum with its largest finite addend.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Functional {
    pub value: EntropyValue,
    pub max_term: f64,
    pub terms: usize,
}

/// s_n and S_n from one pass, with the key-equality residual
/// max |(1/nu(xi eta)) int 1_eta gamma(xi|w)/gamma(eta|w) dnu - 1|.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BulkReport {
    pub s: Functional,
    pub big_s: Functional,
    pub key_residual: f64,
}

struct Translate {
    rule: usize,
    dep_pos: Vec<usize>,
    shape_lam: Vec<Option<usize>>,
    nb_pos: Vec<usize>,
}

struct Layout {
    q: usize,
    n_lam: usize,
    sites: Vec<usize>,
    translates: Vec<Translate>,
    pow: Vec<usize>,
}

impl Layout {
    /// Window Lambda first, then the remaining dependence sites of the
    /// given translates (and of gamma at their shapes if `nb` is set).
    fn new(rates: &RateFamily, torus: &Torus, lam: &Window, pairs: &[(usize, usize)], nb: Option<&[Vec<Offset>]>) -> Result<Self> {
        let q = rates.q;
        let mut sites: Vec<usize> = lam.sites().to_vec();
        let mut pos = vec![usize::MAX; torus.n_sites()];
        for (k, &s) in sites.iter().enumerate() {
            pos[s] = k;
        }
        let mut place = |s: usize, sites: &mut Vec<usize>| {
            if pos[s] == usize::MAX {
                pos[s] = sites.len();
                sites.push(s);
            }
            pos[s]
        };
        let mut translates = Vec::with_capacity(pairs.len());
        for &(rule, anchor) in pairs {
            let r = &rates.rules[rule];
            let dep_pos: Vec<usize> = r.deps.iter().map(|o| place(torus.shift(anchor, o), &mut sites)).collect();
            let shape_lam = dep_pos[..r.shape.len()].iter().map(|&p| (p < lam.len()).then_some(p)).collect();
            let nb_pos = match nb {
                Some(nb) => nb[rule].iter().map(|o| place(torus.shift(anchor, o), &mut sites)).collect(),
                None => Vec::new(),
            };
            translates.push(Translate { rule, dep_pos, shape_lam, nb_pos });
        }
        let total = state_count(q, sites.len())?;
        if total > MAX_EXACT_STATES {
            return Err(Error::Capacity(format!("extended window of {} sites has {total} states", sites.len())));
        }
        let pow = (0..=sites.len()).map(|k| q.pow(k as u32)).collect();
        Ok(Self { q, n_lam: lam.len(), sites, translates, pow })
    }

    fn n_eta(&self) -> usize {
        self.pow[self.n_lam]
    }

    fn n_outer(&self) -> usize {
        self.pow[self.sites.len()] / self.pow[self.n_lam]
    }

    /// Calls `f(values on E, nu(w_E))` for every extension of eta with
    /// positive weight.
    fn for_each_extension(&self, eta: usize, nu_e: &[f64], vals: &mut [u8], mut f: impl FnMut(&[u8], f64)) {
        decode_into(eta as u64, self.q, &mut vals[..self.n_lam]);
        for outer in 0..self.n_outer() {
            let w = nu_e[eta + outer * self.n_eta()];
            if w == 0.0 {
                continue;
            }
            decode_into(outer as u64, self.q, &mut vals[self.n_lam..]);
            f(vals, w);
        }
    }

    /// Index in Omega_Lambda after setting the translate's shape to `xi`.
    fn target(&self, t: &Translate, eta: usize, vals: &[u8], xi: &[u8]) -> usize {
        let mut idx = eta as i64;
        for (k, p) in t.shape_lam.iter().enumerate() {
            if let Some(p) = *p {
                idx += (xi[k] as i64 - vals[p] as i64) * self.pow[p] as i64;
            }
        }
        idx as usize
    }
}

fn dep_index(t: &Translate, vals: &[u8], q: usize) -> usize {
    encode_fast(t.dep_pos.iter().map(|&p| vals[p]), q)
}

fn shape_values(rule: &Rule, q: usize) -> Vec<Vec<u8>> {
    let qs = rule.shape_states(q);
    (0..qs)
        .map(|x| {
            let mut v = vec![0u8; rule.shape.len()];
            decode_into(x as u64, q, &mut v);
            v
        })
        .collect()
}

fn check_table(p: &[f64], what: &str) -> Result<()> {
    let s: f64 = p.iter().sum();
    if p.iter().any(|v| !v.is_finite() || *v < 0.0) || (s - 1.0).abs() > 1e-9 {
        return Err(Error::Contract(format!("{what} marginal is not a probability table (sum {s})")));
    }
    Ok(())
}

fn check_sources(rates: &RateFamily, nu: &dyn MarginalSource, mu: Option<&dyn MarginalSource>, what: &str) -> Result<()> {
    require_exact(nu, what)?;
    if nu.q() != rates.q {
        return Err(Error::Contract("nu and the rates disagree on q".into()));
    }
    if let Some(mu) = mu {
        require_exact(mu, what)?;
        if mu.q() != rates.q {
            return Err(Error::Contract("mu and the rates disagree on q".into()));
        }
    }
    Ok(())
}

/// h_Lambda(nu | mu) = sum nu(eta) log(nu(eta) / mu(eta)).
pub fn h_window(nu: &dyn MarginalSource, mu: &dyn MarginalSource, lam: &Window) -> Result<EntropyValue> {
    require_exact(nu, "relative entropy")?;
    require_exact(mu, "relative entropy")?;
    if nu.q() != mu.q() {
        return Err(Error::Contract("sources disagree on q".into()));
    }
    let a = nu.marginal(lam.sites())?;
    let b = mu.marginal(lam.sites())?;
    check_table(&a, "nu")?;
    check_table(&b, "mu")?;
    Ok(crate::ctmc::relative_entropy_slices(&a, &b))
}

/// Rule translates whose shape meets `region` (all of it if `inside`).
fn translates(rates: &RateFamily, torus: &Torus, region: &Window, inside: bool) -> Vec<(usize, usize)> {
    let mut out = Vec::new();
    for (k, r) in rates.rules.iter().enumerate() {
        let mut anchors = BTreeSet::new();
        for &s in region.sites() {
            for o in &r.shape {
                let neg: Offset = o.iter().map(|v| -v).collect();
                anchors.insert(torus.shift(s, &neg));
            }
        }
        for a in anchors {
            if !inside || r.shape.iter().all(|o| region.contains(torus.shift(a, o))) {
                out.push((k, a));
            }
        }
    }
    out
}

/// Number of rule translates meeting Lambda_n and the bound sum |Delta| |Lambda_n|.
pub fn translation_count(rates: &RateFamily, scheme: &TruncationScheme, n: usize) -> Result<(usize, usize)> {
    let lam = scheme.lambda(n)?;
    let count = translates(rates, scheme.torus(), &lam, false).len();
    let bound = rates.rules.iter().map(|r| r.shape.len() * lam.len()).sum();
    Ok((count, bound))
}

fn loss_sum(rates: &RateFamily, nu: &dyn MarginalSource, mu: &dyn MarginalSource, scheme: &TruncationScheme, n: usize, inner: bool) -> Result<EntropyValue> {
    check_sources(rates, nu, Some(mu), "the entropy loss")?;
    let torus = scheme.torus();
    let lam = scheme.lambda(n)?;
    let pairs = if inner {
        translates(rates, torus, &scheme.lambda_tilde(n)?, true)
    } else {
        let pairs = translates(rates, torus, &lam, false);
        let bound: usize = rates.rules.iter().map(|r| r.shape.len() * lam.len()).sum();
        if pairs.len() > bound {
            return Err(Error::Contract(format!("{} translates meet the window, bound {bound}", pairs.len())));
        }
        pairs
    };
    let lay = Layout::new(rates, torus, &lam, &pairs, None)?;
    let q = lay.q;
    let nu_e = nu.marginal(&lay.sites)?;
    check_table(&nu_e, "nu")?;
    let nu_l: Vec<f64> = (0..lay.n_eta()).map(|e| (0..lay.n_outer()).map(|o| nu_e[e + o * lay.n_eta()]).sum()).collect();
    let mu_l = mu.marginal(lam.sites())?;
    check_table(&mu_l, "mu")?;
    let mut log_ratio = vec![f64::NEG_INFINITY; lay.n_eta()];
    for e in 0..lay.n_eta() {
        if nu_l[e] > 0.0 {
            if mu_l[e] <= 0.0 {
                return Err(Error::Contract("mu vanishes on a cylinder charged by nu".into()));
            }
            log_ratio[e] = (nu_l[e] / mu_l[e]).ln();
        }
    }
    let xs: Vec<Vec<Vec<u8>>> = rates.rules.iter().map(|r| shape_values(r, q)).collect();
    let parts: Vec<(f64, bool)> = (0..lay.n_eta())
        .into_par_iter()
        .map(|eta| {
            if nu_l[eta] == 0.0 {
                return (0.0, false);
            }
            let mut vals = vec![0u8; lay.sites.len()];
            let mut acc = 0.0;
            let mut neg_inf = false;
            let here = log_ratio[eta];
            lay.for_each_extension(eta, &nu_e, &mut vals, |vals, w| {
                for t in &lay.translates {
                    let r = &rates.rules[t.rule];
                    let qs = xs[t.rule].len();
                    let d = dep_index(t, vals, q);
                    for (x, xi) in xs[t.rule].iter().enumerate() {
                        let c = r.table[d * qs + x];
                        if c == 0.0 {
                            continue;
                        }
                        let tgt = lay.target(t, eta, vals, xi);
                        if tgt == eta {
                            continue;
                        }
                        let there = log_ratio[tgt];
                        if there == f64::NEG_INFINITY {
                            neg_inf = true;
                        } else {
                            acc += w * c * (there - here);
                        }
                    }
                }
            });
            (acc, neg_inf)
        })
        .collect();
    if parts.iter().any(|p| p.1) {
        return Ok(ExtReal::NegInf);
    }
    Ok(ExtReal::Finite(parts.iter().map(|p| p.0).sum()))
}

/// Relative entropy loss in Lambda_n: all rule translates meeting the window.
pub fn g_n(rates: &RateFamily, nu: &dyn MarginalSource, mu: &dyn MarginalSource, scheme: &TruncationScheme, n: usize) -> Result<EntropyValue> {
    loss_sum(rates, nu, mu, scheme, n, false)
}

/// Approximating loss: updates confined to Lambda~_n.
pub fn g_tilde_n(rates: &RateFamily, nu: &dyn MarginalSource, mu: &dyn MarginalSource, scheme: &TruncationScheme, n: usize) -> Result<EntropyValue> {
    loss_sum(rates, nu, mu, scheme, n, true)
}

/// inf over completions outside the ball of radius `radius` about the
/// anchor of c(eta, xi). `eta_deps` holds spins at the rule's dependence
/// offsets; entries outside the ball are ignored.
pub fn truncated_rate(rule: &Rule, q: usize, radius: usize, eta_deps: &[u8], xi: usize) -> f64 {
    let qs = rule.shape_states(q);
    let outside: Vec<usize> = (0..rule.deps.len())
        .filter(|&k| rule.deps[k].iter().any(|v| v.unsigned_abs() as usize > radius))
        .collect();
    let mut vals = eta_deps.to_vec();
    let mut fill = vec![0u8; outside.len()];
    let mut best = f64::INFINITY;
    for m in 0..q.pow(outside.len() as u32) {
        decode_into(m as u64, q, &mut fill);
        for (&k, &v) in outside.iter().zip(&fill) {
            vals[k] = v;
        }
        best = best.min(rule.table[encode_fast(vals.iter().copied(), q) * qs + xi]);
    }
    best
}

/// Smallest radius from which the positivity of every truncated rate no
/// longer changes, and whether truncation is monotone in the radius.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct DichotomyReport {
    pub radius: usize,
    pub monotone: bool,
}

pub fn dichotomy(rates: &RateFamily) -> DichotomyReport {
    let q = rates.q;
    let reach = rates.range();
    let mut radius = 0;
    let mut monotone = true;
    for r in &rates.rules {
        let qs = r.shape_states(q);
        let mut vals = vec![0u8; r.deps.len()];
        for d in 0..q.pow(r.deps.len() as u32) {
            decode_into(d as u64, q, &mut vals);
            for x in 0..qs {
                let seq: Vec<f64> = (0..=reach).map(|rad| truncated_rate(r, q, rad, &vals, x)).collect();
                monotone &= seq.windows(2).all(|w| w[0] <= w[1]);
                let last = seq[reach] > 0.0;
                let from = (0..=reach).rev().take_while(|&k| (seq[k] > 0.0) == last).last().unwrap_or(reach);
                radius = radius.max(from);
            }
        }
    }
    DichotomyReport { radius, monotone }
}

/// gamma(xi_Delta | w) / gamma(eta_Delta | w) over the dependence
/// neighborhood of each rule's shape, indexed [nb config * q^|Delta| + xi].
fn gamma_ratio_tables(rates: &RateFamily, spec: &Specification) -> Result<(Vec<Vec<Offset>>, Vec<Vec<f64>>)> {
    let q = rates.q;
    let anchor = spec.torus().center();
    let mut nbs = Vec::new();
    let mut tables = Vec::new();
    for r in &rates.rules {
        let nb = spec.dependence(&r.shape);
        let count = state_count(q, nb.len())?;
        if count > 1 << 20 {
            return Err(Error::Capacity(format!("{count} boundary configurations for a shape")));
        }
        let shape_sites: Vec<usize> = r.shape.iter().map(|o| spec.torus().shift(anchor, o)).collect();
        let xs = shape_values(r, q);
        let mut vals = vec![0u8; nb.len()];
        let mut table = Vec::with_capacity(count as usize * xs.len());
        for idx in 0..count {
            decode_into(idx, q, &mut vals);
            let spins = spec.embed(anchor, &nb, &vals);
            for xi in &xs {
                table.push(spec.log_ratio(&shape_sites, &spins, xi).exp());
            }
        }
        nbs.push(nb);
        tables.push(table);
    }
    Ok((nbs, tables))
}

/// F0(u) nu_x, or the -inf / 0 branches when nu_x vanishes.
fn weighted_f0(u: f64, nu_x: f64, nu_eta: f64) -> ExtReal {
    if nu_x > 0.0 {
        ExtReal::Finite(f0(u) * nu_x)
    } else if nu_eta > 0.0 {
        ExtReal::NegInf
    } else {
        ExtReal::ZERO
    }
}

#[derive(Clone, Copy)]
struct Acc {
    sum: f64,
    neg_inf: bool,
    max_term: f64,
    terms: usize,
}

impl Acc {
    fn new() -> Self {
        Self { sum: 0.0, neg_inf: false, max_term: f64::NEG_INFINITY, terms: 0 }
    }

    /// Adds weight * rate with 0 * (-inf) = 0.
    fn add(&mut self, weight: ExtReal, rate: f64) {
        if rate == 0.0 {
            return;
        }
        self.terms += 1;
        match weight {
            ExtReal::Finite(v) => {
                let t = v * rate;
                self.sum += t;
                self.max_term = self.max_term.max(t);
            }
            _ => self.neg_inf = true,
        }
    }

    fn merge(mut self, o: &Acc) -> Self {
        self.sum += o.sum;
        self.neg_inf |= o.neg_inf;
        self.max_term = self.max_term.max(o.max_term);
        self.terms += o.terms;
        self
    }

    fn finish(self) -> Functional {
        let value = if self.neg_inf { ExtReal::NegInf } else { ExtReal::Finite(self.sum) };
        Functional { value, max_term: self.max_term, terms: self.terms }
    }
}

/// s_n(nu|mu) and S_n(nu|mu) on the scheme's n-th window pair.
pub fn bulk_functionals(
    rates: &RateFamily,
    spec: &Specification,
    nu: &dyn MarginalSource,
    mu: &dyn MarginalSource,
    scheme: &TruncationScheme,
    n: usize,
    orientation: RatioOrientation,
) -> Result<BulkReport> {
    check_sources(rates, nu, Some(mu), "s_n and S_n")?;
    let torus = scheme.torus();
    if spec.torus() != torus || spec.q() != rates.q {
        return Err(Error::Contract("specification lives on a different torus or q".into()));
    }
    let lam = scheme.lambda(n)?;
    let pairs = translates(rates, torus, &scheme.lambda_tilde(n)?, true);
    let (nbs, ratios) = gamma_ratio_tables(rates, spec)?;
    let lay = Layout::new(rates, torus, &lam, &pairs, Some(&nbs))?;
    let q = lay.q;
    let nu_e = nu.marginal(&lay.sites)?;
    check_table(&nu_e, "nu")?;
    let nu_l: Vec<f64> = (0..lay.n_eta()).map(|e| (0..lay.n_outer()).map(|o| nu_e[e + o * lay.n_eta()]).sum()).collect();
    let mu_l = mu.marginal(lam.sites())?;
    check_table(&mu_l, "mu")?;
    if mu_l.iter().any(|&v| v <= 0.0) {
        return Err(Error::Contract("mu must charge every window cylinder".into()));
    }
    let xs: Vec<Vec<Vec<u8>>> = rates.rules.iter().map(|r| shape_values(r, q)).collect();
    let radius = n - 1;
    // Lambda-position of each dependence site inside the ball, per translate
    let ball_pos: Vec<Vec<Option<usize>>> = lay
        .translates
        .iter()
        .map(|t| {
            rates.rules[t.rule]
                .deps
                .iter()
                .zip(&t.dep_pos)
                .map(|(o, &p)| (o.iter().all(|v| v.unsigned_abs() as usize <= radius) && p < lay.n_lam).then_some(p))
                .collect()
        })
        .collect();

    let parts: Vec<(Acc, Acc, f64)> = (0..lay.n_eta())
        .into_par_iter()
        .map(|eta| {
            let mut vals = vec![0u8; lay.sites.len()];
            let mut s_acc = Acc::new();
            let mut big_acc = Acc::new();
            let mut key: f64 = 0.0;
            let nu_eta = nu_l[eta];
            // integrals of gamma ratios and of rates over the cylinder of eta
            let mut gam: Vec<Vec<f64>> = lay.translates.iter().map(|t| vec![0.0; xs[t.rule].len()]).collect();
            let mut rate: Vec<Vec<f64>> = gam.clone();
            lay.for_each_extension(eta, &nu_e, &mut vals, |vals, w| {
                for (k, t) in lay.translates.iter().enumerate() {
                    let r = &rates.rules[t.rule];
                    let qs = xs[t.rule].len();
                    let d = dep_index(t, vals, q);
                    let nbi = encode_fast(t.nb_pos.iter().map(|&p| vals[p]), q);
                    for x in 0..qs {
                        let g = ratios[t.rule][nbi * qs + x];
                        gam[k][x] += w * match orientation {
                            RatioOrientation::KeyEquality => g,
                            RatioOrientation::AsDisplayed => 1.0 / g,
                        };
                        rate[k][x] += w * r.table[d * qs + x];
                    }
                }
            });
            decode_into(eta as u64, q, &mut vals[..lay.n_lam]);
            vals[lay.n_lam..].iter_mut().for_each(|v| *v = 0);
            let mut deps = Vec::new();
            for (k, t) in lay.translates.iter().enumerate() {
                let r = &rates.rules[t.rule];
                let qs = xs[t.rule].len();
                let cur = encode_fast(t.dep_pos[..r.shape.len()].iter().map(|&p| vals[p]), q);
                // r_n eta: zeros outside Lambda, which is the all-zero extension
                let d_fill = dep_index(t, &vals, q);
                for (x, xi) in xs[t.rule].iter().enumerate() {
                    if x == cur {
                        continue;
                    }
                    let tgt = lay.target(t, eta, &vals, xi);
                    let nu_x = nu_l[tgt];
                    // s_n: f times the truncated reverse rate
                    let f = weighted_f0(if nu_x > 0.0 { gam[k][x] / nu_x } else { 0.0 }, nu_x, nu_eta);
                    if nu_x > 0.0 {
                        key = key.max((gam[k][x] / nu_x - 1.0).abs());
                    }
                    deps.clear();
                    deps.extend(ball_pos[k].iter().enumerate().map(|(j, p)| {
                        if j < xi.len() {
                            xi[j]
                        } else {
                            p.map_or(0, |p| vals[p])
                        }
                    }));
                    s_acc.add(f, truncated_rate(r, q, radius, &deps, cur));
                    // S_n: F times c^(n) times the mu ratio
                    let (mu_e, mu_x) = (mu_l[eta], mu_l[tgt]);
                    let big_f = weighted_f0(if nu_x > 0.0 { nu_eta / nu_x * mu_x / mu_e } else { 0.0 }, nu_x, nu_eta);
                    let cn = if nu_eta > 0.0 { rate[k][x] / nu_eta } else { r.table[d_fill * qs + x] };
                    big_acc.add(big_f, cn * mu_e / mu_x);
                }
            }
            (s_acc, big_acc, key)
        })
        .collect();
    let (s, big_s, key) = parts
        .iter()
        .fold((Acc::new(), Acc::new(), 0.0f64), |(a, b, k), (x, y, z)| (a.merge(x), b.merge(y), k.max(*z)));
    Ok(BulkReport { s: s.finish(), big_s: big_s.finish(), key_residual: key })
}

pub fn s_n(
    rates: &RateFamily,
    spec: &Specification,
    nu: &dyn MarginalSource,
    mu: &dyn MarginalSource,
    scheme: &TruncationScheme,
    n: usize,
) -> Result<Functional> {
    Ok(bulk_functionals(rates, spec, nu, mu, scheme, n, RatioOrientation::KeyEquality)?.s)
}

#[allow(non_snake_case)]
pub fn S_n(
    rates: &RateFamily,
    spec: &Specification,
    nu: &dyn MarginalSource,
    mu: &dyn MarginalSource,
    scheme: &TruncationScheme,
    n: usize,
) -> Result<Functional> {
    Ok(bulk_functionals(rates, spec, nu, mu, scheme, n, RatioOrientation::KeyEquality)?.big_s)
}

/// f(nu, Lambda_n, eta, xi_Delta) for the translate of `rule` at `anchor`;
/// `eta` lists spins on Lambda_n, `xi` spins on the shape.
#[allow(clippy::too_many_arguments)]
pub fn f_term(
    rates: &RateFamily,
    rule: usize,
    anchor: usize,
    spec: &Specification,
    nu: &dyn MarginalSource,
    scheme: &TruncationScheme,
    n: usize,
    eta: &[u8],
    xi: &[u8],
    orientation: RatioOrientation,
) -> Result<ExtReal> {
    check_sources(rates, nu, None, "f")?;
    let lam = scheme.lambda(n)?;
    let r = rates.rules.get(rule).ok_or_else(|| Error::Domain(format!("no rule {rule}")))?;
    if eta.len() != lam.len() || xi.len() != r.shape.len() {
        return Err(Error::Domain("configuration sizes do not match the window or shape".into()));
    }
    let (nbs, ratios) = gamma_ratio_tables(rates, spec)?;
    let lay = Layout::new(rates, scheme.torus(), &lam, &[(rule, anchor)], Some(&nbs))?;
    let t = &lay.translates[0];
    if t.shape_lam.iter().any(|p| p.is_none()) {
        return Err(Error::Geometry("shape must lie inside the window".into()));
    }
    let q = lay.q;
    let nu_e = nu.marginal(&lay.sites)?;
    let eta_idx = encode_fast(eta.iter().copied(), q);
    let mut vals = vec![0u8; lay.sites.len()];
    decode_into(eta_idx as u64, q, &mut vals[..lay.n_lam]);
    let tgt = lay.target(t, eta_idx, &vals, xi);
    let marg = |e: usize| (0..lay.n_outer()).map(|o| nu_e[e + o * lay.n_eta()]).sum::<f64>();
    let (nu_eta, nu_x) = (marg(eta_idx), marg(tgt));
    let x = encode_fast(xi.iter().copied(), q);
    let qs = r.shape_states(q);
    let mut integral = 0.0;
    lay.for_each_extension(eta_idx, &nu_e, &mut vals, |vals, w| {
        let g = ratios[rule][encode_fast(t.nb_pos.iter().map(|&p| vals[p]), q) * qs + x];
        integral += w * match orientation {
            RatioOrientation::KeyEquality => g,
            RatioOrientation::AsDisplayed => 1.0 / g,
        };
    });
    Ok(weighted_f0(if nu_x > 0.0 { integral / nu_x } else { 0.0 }, nu_x, nu_eta))
}

/// Explicit constant C in |g^n - g~^n| <= C |Lambda_n \ Lambda~_n| for
/// non-null nu and mu: M R q^R sup c R (log 1/delta_mu + log 1/delta_nu),
/// M rule classes, R the largest shape.
pub fn boundary_constant(rates: &RateFamily, delta_mu: f64, delta_nu: f64) -> f64 {
    let m = rates.rules.len() as f64;
    let r = rates.max_shape() as f64;
    let qr = (rates.q as f64).powf(r);
    m * r * qr * rates.sup_rate() * r * ((1.0 / delta_mu).ln() + (1.0 / delta_nu).ln())
}

/// sup c q^R max(log 1/delta_mu, 1/e): the mu-ratio estimate alone.
pub fn one_sided_boundary_constant(rates: &RateFamily, delta_mu: f64) -> f64 {
    let qr = (rates.q as f64).powi(rates.max_shape() as i32);
    rates.sup_rate() * qr * (1.0 / delta_mu).ln().max((-1.0f64).exp())
}
