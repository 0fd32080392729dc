use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gibbs::Specification;
use crate::lattice::{check_q, decode_into, encode_fast, state_count, Offset, Torus};

/// Largest local table a rule may carry.
const MAX_TABLE: u64 = 1 << 24;

/// Update rule for one translation class. `deps` lists the dependence
/// neighborhood and starts with the shape offsets in order. The rate for
/// moving the shape to `xi` given the local configuration with index `d`
/// over `deps` is `table[d * q^{|shape|} + xi]`; entries with `xi` equal to
/// the current shape configuration are zero.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Rule {
    pub shape: Vec<Offset>,
    pub deps: Vec<Offset>,
    pub table: Vec<f64>,
}

impl Rule {
    pub fn shape_states(&self, q: usize) -> usize {
        q.pow(self.shape.len() as u32)
    }

    #[inline]
    pub fn rate(&self, q: usize, dep_idx: usize, xi: usize) -> f64 {
        self.table[dep_idx * self.shape_states(q) + xi]
    }

    /// Evaluates the rate with deps values supplied by `val`.
    pub fn rate_with(&self, q: usize, val: impl Fn(&Offset) -> u8, xi: usize) -> f64 {
        let d = encode_fast(self.deps.iter().map(val), q);
        self.rate(q, d, xi)
    }

    /// sup over configurations of the rate to `xi`.
    pub fn sup_to(&self, q: usize, xi: usize) -> f64 {
        let qs = self.shape_states(q);
        self.table.iter().skip(xi).step_by(qs).cloned().fold(0.0, f64::max)
    }

    pub fn sup(&self) -> f64 {
        self.table.iter().cloned().fold(0.0, f64::max)
    }
}

/// Translation-invariant family of local rates.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RateFamily {
    pub name: String,
    pub q: usize,
    pub dim: usize,
    pub rules: Vec<Rule>,
}

impl RateFamily {
    /// Structural validation. Negative rates pass here; they are reported
    /// by the condition checker and rejected by generator assembly.
    pub fn validate(&self) -> Result<()> {
        check_q(self.q)?;
        let origin = vec![0i64; self.dim];
        for (k, r) in self.rules.iter().enumerate() {
            if r.shape.is_empty() || !r.shape.contains(&origin) {
                return Err(Error::Domain(format!("rule {k}: shape must contain the origin")));
            }
            if r.deps.len() < r.shape.len() || r.deps[..r.shape.len()] != r.shape[..] {
                return Err(Error::Domain(format!("rule {k}: deps must start with the shape")));
            }
            if r.deps.iter().any(|o| o.len() != self.dim) {
                return Err(Error::Domain(format!("rule {k}: offset dimension mismatch")));
            }
            for i in 0..r.deps.len() {
                if r.deps[i + 1..].contains(&r.deps[i]) {
                    return Err(Error::Domain(format!("rule {k}: repeated offset")));
                }
            }
            let nd = state_count(self.q, r.deps.len())?;
            let qs = state_count(self.q, r.shape.len())?;
            let need = nd.checked_mul(qs).ok_or_else(|| Error::Capacity("rule table".into()))?;
            if need > MAX_TABLE {
                return Err(Error::Capacity(format!("rule {k}: table of {need} entries")));
            }
            if r.table.len() as u64 != need {
                return Err(Error::Domain(format!("rule {k}: table has {} entries, expected {need}", r.table.len())));
            }
            if let Some(i) = r.table.iter().position(|v| !v.is_finite()) {
                return Err(Error::Domain(format!("rule {k}: non-finite rate at entry {i}")));
            }
            let qs = qs as usize;
            for d in 0..nd as usize {
                if r.table[d * qs + d % qs] != 0.0 {
                    return Err(Error::Domain(format!("rule {k}: nonzero rate to the current state at {d}")));
                }
            }
        }
        Ok(())
    }

    /// Maximal shape size R.
    pub fn max_shape(&self) -> usize {
        self.rules.iter().map(|r| r.shape.len()).max().unwrap_or(0)
    }

    /// Smallest strictly positive rate.
    pub fn kappa(&self) -> Option<f64> {
        self.rules.iter().flat_map(|r| r.table.iter()).filter(|&&v| v > 0.0).cloned().reduce(f64::min)
    }

    pub fn sup_rate(&self) -> f64 {
        self.rules.iter().map(Rule::sup).fold(0.0, f64::max)
    }

    /// Largest sup-norm offset among all dependence neighborhoods.
    pub fn range(&self) -> usize {
        self.rules
            .iter()
            .flat_map(|r| r.deps.iter())
            .map(|o| o.iter().map(|v| v.unsigned_abs()).max().unwrap_or(0))
            .max()
            .unwrap_or(0) as usize
    }

    pub fn compile(&self, torus: &Torus) -> Result<CompiledRates> {
        CompiledRates::new(self, torus)
    }

    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self).map_err(|e| Error::Format(e.to_string()))
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let r: Self = serde_json::from_str(text).map_err(|e| Error::Format(e.to_string()))?;
        r.validate()?;
        Ok(r)
    }
}

/// Single-site rule table from a map (current spin, gamma at the origin) -> rates.
fn single_site_family(
    spec: &Specification,
    name: &str,
    mut rates: impl FnMut(usize, &[f64]) -> Vec<f64>,
) -> Result<RateFamily> {
    let q = spec.q();
    let dim = spec.torus().dim();
    let origin = vec![0i64; dim];
    let deps = spec.dependence(&[origin.clone()]);
    check_embedding(spec.torus(), &deps)?;
    let nd = state_count(q, deps.len())? as usize;
    let mut vals = vec![0u8; deps.len()];
    let mut table = vec![0.0; nd * q];
    let anchor = 0usize;
    for d in 0..nd {
        decode_into(d as u64, q, &mut vals);
        let spins = spec.embed(anchor, &deps, &vals);
        let gamma = spec.cond_dist(&[anchor], &spins);
        let cur = vals[0] as usize;
        let row = rates(cur, &gamma);
        for j in 0..q {
            if j != cur {
                table[d * q + j] = row[j];
            }
        }
    }
    Ok(RateFamily { name: name.into(), q, dim, rules: vec![Rule { shape: vec![origin], deps, table }] })
}

fn check_embedding(torus: &Torus, offs: &[Offset]) -> Result<()> {
    let sites: Vec<usize> = offs.iter().map(|o| torus.shift(0, o)).collect();
    for i in 0..sites.len() {
        if sites[i + 1..].contains(&sites[i]) {
            return Err(Error::Geometry("dependence neighborhood wraps onto itself on this torus".into()));
        }
    }
    Ok(())
}

/// c_x(eta, j) = gamma_x(j | eta) for j != eta_x.
pub fn make_heat_bath(spec: &Specification) -> Result<RateFamily> {
    single_site_family(spec, "heat_bath", |_, g| g.to_vec())
}

/// c_x(eta, eta_x + 1 mod q) = kappa / gamma_x(eta_x | eta).
pub fn make_cyclic(spec: &Specification, kappa: f64) -> Result<RateFamily> {
    if !(kappa > 0.0) || !kappa.is_finite() {
        return Err(Error::Domain(format!("cyclic rate kappa={kappa} must be positive")));
    }
    let q = spec.q();
    single_site_family(spec, "cyclic", |cur, g| {
        let mut row = vec![0.0; q];
        row[(cur + 1) % q] = kappa / g[cur];
        row
    })
}

/// a r1 + b r2 as the union of the scaled rules.
pub fn mix(a: f64, r1: &RateFamily, b: f64, r2: &RateFamily) -> Result<RateFamily> {
    if !(a >= 0.0 && b >= 0.0) || !a.is_finite() || !b.is_finite() {
        return Err(Error::Domain("mixture weights must be finite and nonnegative".into()));
    }
    if a == 0.0 && b == 0.0 {
        return Err(Error::Degenerate("both mixture weights are zero".into()));
    }
    if r1.q != r2.q || r1.dim != r2.dim {
        return Err(Error::Domain("mixed families must share q and dimension".into()));
    }
    let scaled = |w: f64, r: &RateFamily| -> Vec<Rule> {
        if w == 0.0 {
            return Vec::new();
        }
        r.rules
            .iter()
            .map(|rule| Rule { table: rule.table.iter().map(|v| w * v).collect(), ..rule.clone() })
            .collect()
    };
    let mut rules = scaled(a, r1);
    rules.extend(scaled(b, r2));
    let name = match (a == 0.0, b == 0.0) {
        (false, true) => r1.name.clone(),
        (true, false) => r2.name.clone(),
        _ => format!("mix({a},{};{b},{})", r1.name, r2.name),
    };
    Ok(RateFamily { name, q: r1.q, dim: r1.dim, rules })
}

/// Multiplies every rate by a positive speed depending on the spins at
/// `offs` relative to the rule anchor. When `offs` avoids the shapes the
/// product keeps every stationary Gibbs law stationary.
pub fn modulate_speed(rates: &RateFamily, offs: &[Offset], speed: &[f64]) -> Result<RateFamily> {
    let q = rates.q;
    if speed.len() as u64 != state_count(q, offs.len())? {
        return Err(Error::Domain("speed table size must be q^{|offs|}".into()));
    }
    if speed.iter().any(|v| !(*v > 0.0) || !v.is_finite()) {
        return Err(Error::Domain("speeds must be positive".into()));
    }
    let mut rules = Vec::new();
    for r in &rates.rules {
        let mut deps = r.deps.clone();
        for o in offs {
            if !deps.contains(o) {
                deps.push(o.clone());
            }
        }
        let qs = r.shape_states(q);
        let nd = state_count(q, deps.len())? as usize;
        let old_nd = q.pow(r.deps.len() as u32);
        let pos: Vec<usize> = offs.iter().map(|o| deps.iter().position(|d| d == o).unwrap()).collect();
        let mut vals = vec![0u8; deps.len()];
        let mut table = vec![0.0; nd * qs];
        for d in 0..nd {
            decode_into(d as u64, q, &mut vals);
            let s = speed[encode_fast(pos.iter().map(|&p| vals[p]), q)];
            let od = d % old_nd;
            for xi in 0..qs {
                table[d * qs + xi] = s * r.table[od * qs + xi];
            }
        }
        rules.push(Rule { shape: r.shape.clone(), deps, table });
    }
    Ok(RateFamily { name: format!("{}*speed", rates.name), q, dim: rates.dim, rules })
}

/// c-hat_Delta(eta, xi) = c_Delta(xi eta, eta_Delta) gamma(xi|eta) / gamma(eta_Delta|eta).
pub fn time_reversal(rates: &RateFamily, spec: &Specification) -> Result<RateFamily> {
    rates.validate()?;
    let q = rates.q;
    if spec.q() != q || spec.torus().dim() != rates.dim {
        return Err(Error::Domain("specification and rates disagree on q or dimension".into()));
    }
    let mut rules = Vec::with_capacity(rates.rules.len());
    for r in &rates.rules {
        let mut deps = r.deps.clone();
        for o in spec.dependence(&r.shape) {
            if !deps.contains(&o) {
                deps.push(o);
            }
        }
        check_embedding(spec.torus(), &deps)?;
        let ns = r.shape.len();
        let qs = r.shape_states(q);
        let nd = state_count(q, deps.len())? as usize;
        let old_nd = q.pow(r.deps.len() as u32);
        let shape_sites: Vec<usize> = r.shape.iter().map(|o| spec.torus().shift(0, o)).collect();
        let mut vals = vec![0u8; deps.len()];
        let mut xi = vec![0u8; ns];
        let mut table = vec![0.0; nd * qs];
        for d in 0..nd {
            decode_into(d as u64, q, &mut vals);
            let spins = spec.embed(0, &deps, &vals);
            let cur = d % qs;
            for x in 0..qs {
                if x == cur {
                    continue;
                }
                decode_into(x as u64, q, &mut xi);
                // xi eta restricted to the old deps: replace the shape prefix
                let moved = ((d % old_nd) - cur) + x;
                let back = r.table[moved * qs + cur];
                if back == 0.0 {
                    continue;
                }
                let lr = spec.log_ratio(&shape_sites, &spins, &xi);
                table[d * qs + x] = back * lr.exp();
            }
        }
        rules.push(Rule { shape: r.shape.clone(), deps, table });
    }
    Ok(RateFamily { name: format!("reversed({})", rates.name), q, dim: rates.dim, rules })
}

/// max over rules, configurations and targets of |a - b|, comparing each
/// pair of rules on the union of their dependence neighborhoods.
pub fn max_rate_difference(a: &RateFamily, b: &RateFamily) -> Result<f64> {
    if a.q != b.q || a.rules.len() != b.rules.len() {
        return Err(Error::Domain("families are not comparable".into()));
    }
    let q = a.q;
    let mut worst = 0.0f64;
    for (ra, rb) in a.rules.iter().zip(&b.rules) {
        if ra.shape != rb.shape {
            return Err(Error::Domain("rule shapes differ".into()));
        }
        let mut union = ra.deps.clone();
        for o in &rb.deps {
            if !union.contains(o) {
                union.push(o.clone());
            }
        }
        let nu = state_count(q, union.len())? as usize;
        let pa: Vec<usize> = ra.deps.iter().map(|o| union.iter().position(|u| u == o).unwrap()).collect();
        let pb: Vec<usize> = rb.deps.iter().map(|o| union.iter().position(|u| u == o).unwrap()).collect();
        let qs = ra.shape_states(q);
        let mut vals = vec![0u8; union.len()];
        for d in 0..nu {
            decode_into(d as u64, q, &mut vals);
            let da = encode_fast(pa.iter().map(|&p| vals[p]), q);
            let db = encode_fast(pb.iter().map(|&p| vals[p]), q);
            for x in 0..qs {
                worst = worst.max((ra.rate(q, da, x) - rb.rate(q, db, x)).abs());
            }
        }
    }
    Ok(worst)
}

/// Rule placed at every anchor of a torus.
#[derive(Clone, Debug)]
pub struct CompiledRule {
    pub n_shape: usize,
    pub n_deps: usize,
    pub qs: usize,
    pub table: Vec<f64>,
    dep_sites: Vec<usize>,
}

impl CompiledRule {
    #[inline]
    pub fn deps(&self, anchor: usize) -> &[usize] {
        &self.dep_sites[anchor * self.n_deps..(anchor + 1) * self.n_deps]
    }

    #[inline]
    pub fn shape_sites(&self, anchor: usize) -> &[usize] {
        &self.deps(anchor)[..self.n_shape]
    }

    #[inline]
    pub fn dep_index(&self, anchor: usize, spins: &[u8], q: usize) -> usize {
        encode_fast(self.deps(anchor).iter().map(|&s| spins[s]), q)
    }

    /// Rates to every shape configuration at `anchor`.
    #[inline]
    pub fn rates(&self, anchor: usize, spins: &[u8], q: usize) -> &[f64] {
        let d = self.dep_index(anchor, spins, q);
        &self.table[d * self.qs..(d + 1) * self.qs]
    }
}

/// A rate family laid out on a specific torus.
#[derive(Clone, Debug)]
pub struct CompiledRates {
    pub q: usize,
    pub n_sites: usize,
    pub rules: Vec<CompiledRule>,
}

impl CompiledRates {
    pub fn new(rates: &RateFamily, torus: &Torus) -> Result<Self> {
        rates.validate()?;
        if torus.dim() != rates.dim {
            return Err(Error::Geometry("rate family and torus dimensions differ".into()));
        }
        let n = torus.n_sites();
        let mut rules = Vec::with_capacity(rates.rules.len());
        for r in &rates.rules {
            check_embedding(torus, &r.deps)?;
            let mut dep_sites = Vec::with_capacity(n * r.deps.len());
            for x in 0..n {
                dep_sites.extend(r.deps.iter().map(|o| torus.shift(x, o)));
            }
            rules.push(CompiledRule {
                n_shape: r.shape.len(),
                n_deps: r.deps.len(),
                qs: r.shape_states(rates.q),
                table: r.table.clone(),
                dep_sites,
            });
        }
        Ok(Self { q: rates.q, n_sites: n, rules })
    }

    /// Total exit rate of the configuration.
    pub fn exit_rate(&self, spins: &[u8]) -> f64 {
        let mut total = 0.0;
        for r in &self.rules {
            for x in 0..self.n_sites {
                total += r.rates(x, spins, self.q).iter().sum::<f64>();
            }
        }
        total
    }
}
