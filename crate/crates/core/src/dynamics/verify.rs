use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::gibbs::{Specification, TorusMeasure};
use crate::lattice::{decode_into, state_count, Offset, Torus};

use super::generator::SparseGenerator;
use super::rates::{time_reversal, CompiledRates, RateFamily, Rule};

/// Largest state space assembled into an explicit generator.
pub const MAX_GENERATOR_STATES: u64 = 1 << 22;

fn pow_table(q: usize, n: usize) -> Vec<usize> {
    let mut p = vec![1usize; n];
    for k in 1..n {
        p[k] = p[k - 1] * q;
    }
    p
}

/// Explicit generator of the torus dynamics.
pub fn assemble_generator(rates: &RateFamily, torus: &Torus) -> Result<SparseGenerator> {
    let total = state_count(rates.q, torus.n_sites())?;
    if total > MAX_GENERATOR_STATES {
        return Err(Error::Capacity(format!("{total} states exceed the generator guard")));
    }
    if let Some((k, v)) = rates.rules.iter().enumerate().find_map(|(k, r)| r.table.iter().find(|v| **v < 0.0).map(|v| (k, *v))) {
        return Err(Error::Contract(format!("negative rate {v} in rule {k}")));
    }
    let c = rates.compile(torus)?;
    let q = rates.q;
    let n = torus.n_sites();
    let pw = pow_table(q, n);
    let rows: Vec<Vec<(u32, f64)>> = (0..total as usize)
        .into_par_iter()
        .map_init(
            || (vec![0u8; n], Vec::new()),
            |(spins, xi), i| {
                decode_into(i as u64, q, spins);
                let mut row = Vec::new();
                for r in &c.rules {
                    xi.resize(r.n_shape, 0u8);
                    for x in 0..n {
                        let rr = r.rates(x, spins, q);
                        let sites = r.shape_sites(x);
                        for (target, &rate) in rr.iter().enumerate() {
                            if rate == 0.0 {
                                continue;
                            }
                            decode_into(target as u64, q, xi);
                            let mut j = i as i64;
                            for (k, &s) in sites.iter().enumerate() {
                                j += (xi[k] as i64 - spins[s] as i64) * pw[s] as i64;
                            }
                            row.push((j as u32, rate));
                        }
                    }
                }
                row
            },
        )
        .collect();
    SparseGenerator::from_rows(rows)
}

/// max over state pairs of |mu(a) L(a,b) - mu(b) L(b,a)|.
pub fn detailed_balance_residual(gen: &SparseGenerator, mu: &TorusMeasure) -> Result<f64> {
    let p = mu.probs().as_slice();
    if p.len() != gen.dim() {
        return Err(Error::Domain("dimension mismatch".into()));
    }
    Ok((0..gen.dim())
        .into_par_iter()
        .map(|a| gen.row(a).map(|(b, r)| (p[a] * r - p[b] * gen.rate(b, a)).abs()).fold(0.0, f64::max))
        .reduce(|| 0.0, f64::max))
}

/// Detailed-balance residual of `rates` against an exact torus measure.
pub fn detailed_balance_residual_of(rates: &RateFamily, mu: &TorusMeasure) -> Result<f64> {
    detailed_balance_residual(&assemble_generator(rates, mu.torus())?, mu)
}

/// |sum_xi int c(w,xi) f(w) g(xi w) dmu - sum_xi int c-hat(w,xi) f(xi w) g(w) dmu|
/// for the rule translate (`rule`, `anchor`).
pub fn switching_residual(
    rates: &RateFamily,
    rhat: &RateFamily,
    mu: &TorusMeasure,
    f: &[f64],
    g: &[f64],
    rule: usize,
    anchor: usize,
) -> Result<f64> {
    let torus = mu.torus();
    let c = rates.compile(torus)?;
    let ch = rhat.compile(torus)?;
    let q = rates.q;
    let n = torus.n_sites();
    let p = mu.probs().as_slice();
    if f.len() != p.len() || g.len() != p.len() {
        return Err(Error::Domain("f and g must be tables over all states".into()));
    }
    if rule >= c.rules.len() || anchor >= n {
        return Err(Error::Domain("rule or anchor out of range".into()));
    }
    let pw = pow_table(q, n);
    let (r, rh) = (&c.rules[rule], &ch.rules[rule]);
    let sites = r.shape_sites(anchor).to_vec();
    let mut spins = vec![0u8; n];
    let mut xi = vec![0u8; r.n_shape];
    let (mut lhs, mut rhs) = (0.0, 0.0);
    for w in 0..p.len() {
        if p[w] == 0.0 {
            continue;
        }
        decode_into(w as u64, q, &mut spins);
        let rates_c = r.rates(anchor, &spins, q);
        let rates_h = rh.rates(anchor, &spins, q);
        for x in 0..r.qs {
            decode_into(x as u64, q, &mut xi);
            let mut j = w as i64;
            for (k, &s) in sites.iter().enumerate() {
                j += (xi[k] as i64 - spins[s] as i64) * pw[s] as i64;
            }
            let j = j as usize;
            lhs += p[w] * rates_c[x] * f[w] * g[j];
            rhs += p[w] * rates_h[x] * f[j] * g[w];
        }
    }
    Ok((lhs - rhs).abs())
}

/// sum over rule translates and targets of (c - c-hat)(eta, .).
fn net_exit(c: &CompiledRates, ch: &CompiledRates, spins: &[u8]) -> f64 {
    c.exit_rate(spins) - ch.exit_rate(spins)
}

/// Spin-flip oscillation residual |sum_Delta sum_xi grad^i_z (c - c-hat)(eta)|.
pub fn oscillation_residual(
    rates: &RateFamily,
    rhat: &RateFamily,
    torus: &Torus,
    z: usize,
    i: u8,
    eta: &[u8],
) -> Result<f64> {
    let c = rates.compile(torus)?;
    let ch = rhat.compile(torus)?;
    Ok(oscillation_residual_compiled(&c, &ch, z, i, eta))
}

pub fn oscillation_residual_compiled(c: &CompiledRates, ch: &CompiledRates, z: usize, i: u8, eta: &[u8]) -> f64 {
    let mut flipped = eta.to_vec();
    flipped[z] = i;
    (net_exit(c, ch, &flipped) - net_exit(c, ch, eta)).abs()
}

/// Window form: |sum_{xi_Lambda} [Psi(xi_Lambda eta) - Psi(eta)]| with
/// Psi = sum_Delta sum_xi (c - c-hat).
pub fn oscillation_window_residual(
    rates: &RateFamily,
    rhat: &RateFamily,
    torus: &Torus,
    lam: &[usize],
    eta: &[u8],
) -> Result<f64> {
    let c = rates.compile(torus)?;
    let ch = rhat.compile(torus)?;
    let q = rates.q;
    let base = net_exit(&c, &ch, eta);
    let mut buf = eta.to_vec();
    let mut vals = vec![0u8; lam.len()];
    let mut total = 0.0;
    for k in 0..q.pow(lam.len() as u32) {
        decode_into(k as u64, q, &mut vals);
        for (&s, &v) in lam.iter().zip(&vals) {
            buf[s] = v;
        }
        total += net_exit(&c, &ch, &buf) - base;
    }
    Ok(total.abs())
}

/// Largest oscillation residual over every site, spin and configuration.
pub fn max_oscillation_residual(rates: &RateFamily, rhat: &RateFamily, torus: &Torus) -> Result<f64> {
    let q = rates.q;
    let n = torus.n_sites();
    let total = state_count(q, n)?;
    if total > MAX_GENERATOR_STATES {
        return Err(Error::Capacity(format!("{total} states")));
    }
    let c = rates.compile(torus)?;
    let ch = rhat.compile(torus)?;
    let psi: Vec<f64> = (0..total as usize)
        .into_par_iter()
        .map_init(|| vec![0u8; n], |spins, k| {
            decode_into(k as u64, q, spins);
            net_exit(&c, &ch, spins)
        })
        .collect();
    let pw = pow_table(q, n);
    Ok((0..total as usize)
        .into_par_iter()
        .map_init(|| vec![0u8; n], |spins, k| {
            decode_into(k as u64, q, spins);
            let mut worst = 0.0f64;
            for z in 0..n {
                for i in 0..q {
                    let j = k + i * pw[z] - spins[z] as usize * pw[z];
                    worst = worst.max((psi[j] - psi[k]).abs());
                }
            }
            worst
        })
        .reduce(|| 0.0, f64::max))
}

/// sup over configurations of |grad^i at offset `z` of the rate to `xi`|.
fn rule_oscillation(rule: &Rule, q: usize, z: &Offset, i: u8, xi: usize) -> f64 {
    let Some(p) = rule.deps.iter().position(|o| o == z) else {
        return 0.0;
    };
    let qs = rule.shape_states(q);
    let nd = q.pow(rule.deps.len() as u32);
    let pw = q.pow(p as u32);
    let mut worst = 0.0f64;
    for d in 0..nd {
        let cur = (d / pw) % q;
        let e = d + (i as usize) * pw - cur * pw;
        worst = worst.max((rule.table[e * qs + xi] - rule.table[d * qs + xi]).abs());
    }
    worst
}

/// sum over translates Delta of `rules` avoiding the cube of radius n
/// around z, over xi, of ||grad^i_z c_Delta(., xi)||, maximized over i,
/// with z at the origin (translation invariance).
fn tail_sum(rates: &RateFamily, n: usize, i: u8) -> f64 {
    let q = rates.q;
    let mut total = 0.0;
    for r in &rates.rules {
        // translates t with the origin in deps + t: t = -d
        for d in &r.deps {
            let t: Offset = d.iter().map(|v| -v).collect();
            let disjoint = r.shape.iter().all(|s| s.iter().zip(&t).any(|(a, b)| (a + b).unsigned_abs() as usize > n));
            if !disjoint {
                continue;
            }
            // the origin sits at offset d of the translated rule
            for xi in 0..r.shape_states(q) {
                total += rule_oscillation(r, q, d, i, xi);
            }
        }
    }
    total
}

/// Tail of the oscillation sums beyond distance n (see module notes).
pub fn beta_tail(rates: &RateFamily, rhat: &RateFamily, n: usize) -> f64 {
    (0..rates.q as u8)
        .map(|i| tail_sum(rates, n, i).max(tail_sum(rhat, n, i)))
        .fold(0.0, f64::max)
}

/// Per-rule check of ||c-hat|| <= delta^{-1} e^{R} ||c|| (and the sharper
/// delta^{-|Delta|} ||c||, whichever is larger).
#[derive(Clone, Debug, PartialEq)]
pub struct RegularityCheck {
    pub rule: usize,
    pub chat_norm: f64,
    pub bound: f64,
    pub holds: bool,
}

pub fn reversal_regularity(rates: &RateFamily, rhat: &RateFamily, delta: f64) -> Vec<RegularityCheck> {
    let big_r = rates.max_shape() as f64;
    rates
        .rules
        .iter()
        .zip(&rhat.rules)
        .enumerate()
        .map(|(k, (r, rh))| {
            let paper = big_r.exp() / delta;
            let chain = delta.powi(-(r.shape.len() as i32));
            let bound = paper.max(chain) * r.sup();
            let chat_norm = rh.sup();
            RegularityCheck { rule: k, chat_norm, bound, holds: chat_norm <= bound * (1.0 + 1e-12) }
        })
        .collect()
}

/// Switching residuals for every rule translate on the torus.
pub fn max_switching_residual(
    rates: &RateFamily,
    spec: &Specification,
    mu: &TorusMeasure,
    f: &[f64],
    g: &[f64],
) -> Result<f64> {
    let rhat = time_reversal(rates, spec)?;
    let mut worst = 0.0f64;
    for rule in 0..rates.rules.len() {
        for anchor in 0..mu.torus().n_sites() {
            worst = worst.max(switching_residual(rates, &rhat, mu, f, g, rule, anchor)?);
        }
    }
    Ok(worst)
}
