use crate::error::Result;
use crate::gibbs::Specification;
use crate::lattice::{decode_into, state_count, Offset, Torus};

use super::rates::{time_reversal, RateFamily};
use super::verify::beta_tail;

/// Exact strong-connectivity check is used up to this many states.
pub const MAX_CONNECTIVITY_STATES: u64 = 1 << 20;

/// A concrete rate entry exhibiting a violation.
#[derive(Clone, Debug, PartialEq)]
pub struct Witness {
    pub rule: usize,
    pub dep_index: usize,
    pub xi: usize,
    pub value: f64,
}

impl Witness {
    /// Re-reads the witnessed rate from the family.
    pub fn reevaluate(&self, rates: &RateFamily) -> f64 {
        rates.rules[self.rule].rate(rates.q, self.dep_index, self.xi)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ConditionResult {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
    pub witness: Option<Witness>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ConditionReport {
    pub conditions: Vec<ConditionResult>,
    /// sup_x sum_{Delta containing x} sum_xi ||c_Delta(., xi)||
    pub l1: f64,
    /// sum over Delta containing y, x != y, xi of the oscillation of c_Delta(., xi) in x
    pub l2: f64,
    /// sum over z != y, Delta containing y, xi, i of ||grad^i_z c_Delta(., xi)||
    pub r3: f64,
    pub kappa: Option<f64>,
    pub max_shape: usize,
    /// (n, beta(n)) for n = 0..=range+1
    pub beta_tail: Vec<(usize, f64)>,
}

impl ConditionReport {
    pub fn all_passed(&self) -> bool {
        self.conditions.iter().all(|c| c.passed)
    }

    pub fn get(&self, name: &str) -> Option<&ConditionResult> {
        self.conditions.iter().find(|c| c.name == name)
    }
}

fn first_negative(rates: &RateFamily) -> Option<Witness> {
    let q = rates.q;
    for (k, r) in rates.rules.iter().enumerate() {
        let qs = r.shape_states(q);
        if let Some(pos) = r.table.iter().position(|&v| v < 0.0) {
            return Some(Witness { rule: k, dep_index: pos / qs, xi: pos % qs, value: r.table[pos] });
        }
    }
    None
}

/// Oscillation of c(., xi) in the dependence position p: the largest span
/// over the spin at p, or with `per_target` the sum over i of
/// sup |c(eta^{p,i}) - c(eta)|.
fn influence(rates: &RateFamily, rule: usize, p: usize, xi: usize, per_target: bool) -> f64 {
    let q = rates.q;
    let r = &rates.rules[rule];
    let qs = r.shape_states(q);
    let nd = q.pow(r.deps.len() as u32);
    let pw = q.pow(p as u32);
    let at = |d: usize| r.table[d * qs + xi];
    if per_target {
        (0..q)
            .map(|i| {
                (0..nd)
                    .map(|d| {
                        let cur = (d / pw) % q;
                        (at(d + i * pw - cur * pw) - at(d)).abs()
                    })
                    .fold(0.0, f64::max)
            })
            .sum()
    } else {
        (0..nd)
            .filter(|d| (d / pw) % q == 0)
            .map(|d| {
                let vals = (0..q).map(|i| at(d + i * pw));
                let (lo, hi) = vals.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)));
                hi - lo
            })
            .fold(0.0, f64::max)
    }
}

fn is_origin(o: &Offset) -> bool {
    o.iter().all(|&v| v == 0)
}

fn shift_neg(o: &Offset, s: &Offset) -> Offset {
    o.iter().zip(s).map(|(a, b)| a - b).collect()
}

/// Per-condition report for a rate family on a torus.
pub fn check_rate_conditions(rates: &RateFamily, spec: &Specification, torus: &Torus) -> Result<ConditionReport> {
    rates.validate()?;
    let q = rates.q;
    let mut conditions = Vec::new();
    let negative = first_negative(rates);

    conditions.push(ConditionResult {
        name: "R1",
        passed: negative.is_none(),
        detail: if negative.is_none() {
            "finite dependence neighborhoods declared".into()
        } else {
            "negative rate entry".into()
        },
        witness: negative.clone(),
    });
    conditions.push(ConditionResult {
        name: "R2",
        passed: !rates.rules.is_empty(),
        detail: format!("{} rule classes, max shape size {}", rates.rules.len(), rates.max_shape()),
        witness: None,
    });

    // translates containing the origin: shape offset s maps to translate -s
    let mut l1 = 0.0;
    let mut l2 = 0.0;
    let mut r3 = 0.0;
    for (k, r) in rates.rules.iter().enumerate() {
        for s in &r.shape {
            let qs = r.shape_states(q);
            for xi in 0..qs {
                l1 += r.sup_to(q, xi);
            }
            for (p, d) in r.deps.iter().enumerate() {
                // site of the translate at relative offset d - s from the origin
                if is_origin(&shift_neg(d, s)) {
                    continue;
                }
                for xi in 0..qs {
                    l2 += influence(rates, k, p, xi, false);
                    r3 += influence(rates, k, p, xi, true);
                }
            }
        }
    }
    conditions.push(ConditionResult {
        name: "R3",
        passed: r3.is_finite(),
        detail: format!("oscillation sum {r3:.6e}"),
        witness: None,
    });
    conditions.push(ConditionResult {
        name: "R4",
        passed: true,
        detail: "rules stored per translation class".into(),
        witness: None,
    });
    let kappa = rates.kappa();
    conditions.push(ConditionResult {
        name: "R5",
        passed: negative.is_none() && kappa.is_some(),
        detail: match (&negative, kappa) {
            (Some(w), _) => format!("negative rate {}", w.value),
            (None, Some(k)) => format!("kappa = {k:.6e}"),
            (None, None) => "no positive rate".into(),
        },
        witness: negative,
    });
    let (r6, detail) = irreducible(rates, torus)?;
    conditions.push(ConditionResult { name: "R6", passed: r6, detail, witness: None });

    let rhat = time_reversal(rates, spec)?;
    let reach = rates.range().max(rhat.range());
    let beta_tail = (0..=reach + 1).map(|n| (n, beta_tail(rates, &rhat, n))).collect();
    Ok(ConditionReport { conditions, l1, l2, r3, kappa, max_shape: rates.max_shape(), beta_tail })
}

/// Strong connectivity of the transition graph, or the single-site
/// certificate on larger tori.
fn irreducible(rates: &RateFamily, torus: &Torus) -> Result<(bool, String)> {
    let q = rates.q;
    let n = torus.n_sites();
    let total = state_count(q, n)?;
    if total <= MAX_CONNECTIVITY_STATES {
        let c = rates.compile(torus)?;
        let total = total as usize;
        let mut pw = vec![1usize; n];
        for k in 1..n {
            pw[k] = pw[k - 1] * q;
        }
        // forward search along positive rates
        let forward = {
            let mut seen = vec![false; total];
            let mut stack = vec![0usize];
            seen[0] = true;
            let mut count = 1;
            let mut spins = vec![0u8; n];
            let mut xi = Vec::new();
            while let Some(i) = stack.pop() {
                decode_into(i as u64, q, &mut spins);
                for r in &c.rules {
                    xi.resize(r.n_shape, 0u8);
                    for x in 0..n {
                        for (t, &rate) in r.rates(x, &spins, q).iter().enumerate() {
                            if rate <= 0.0 {
                                continue;
                            }
                            decode_into(t as u64, q, &mut xi);
                            let j = r.shape_sites(x).iter().zip(xi.iter()).fold(i, |j, (&s, &v)| j + v as usize * pw[s] - spins[s] as usize * pw[s]);
                            if !seen[j] {
                                seen[j] = true;
                                count += 1;
                                stack.push(j);
                            }
                        }
                    }
                }
            }
            count == total
        };
        // backward search: predecessors are found by trying every shape
        // configuration and reading the rate back to the current one
        let backward = forward && {
            let mut seen = vec![false; total];
            let mut stack = vec![0usize];
            seen[0] = true;
            let mut count = 1;
            let mut spins = vec![0u8; n];
            let mut pred = vec![0u8; n];
            let mut zeta = Vec::new();
            while let Some(i) = stack.pop() {
                decode_into(i as u64, q, &mut spins);
                for r in &c.rules {
                    zeta.resize(r.n_shape, 0u8);
                    for x in 0..n {
                        let sites = r.shape_sites(x);
                        let cur = crate::lattice::encode_fast(sites.iter().map(|&s| spins[s]), q);
                        for z in 0..r.qs {
                            if z == cur {
                                continue;
                            }
                            decode_into(z as u64, q, &mut zeta);
                            pred.copy_from_slice(&spins);
                            for (&s, &v) in sites.iter().zip(zeta.iter()) {
                                pred[s] = v;
                            }
                            if r.rates(x, &pred, q)[cur] <= 0.0 {
                                continue;
                            }
                            let j = crate::lattice::encode_fast(pred.iter().copied(), q);
                            if !seen[j] {
                                seen[j] = true;
                                count += 1;
                                stack.push(j);
                            }
                        }
                    }
                }
            }
            count == total
        };
        Ok((forward && backward, format!("strong connectivity over {total} states")))
    } else {
        Ok((single_site_certificate(rates), "single-site cycle certificate".into()))
    }
}

/// Every single-site rule context lets the site cycle through all spins;
/// sufficient for irreducibility on any torus.
fn single_site_certificate(rates: &RateFamily) -> bool {
    let q = rates.q;
    let singles: Vec<_> = rates.rules.iter().filter(|r| r.shape.len() == 1).collect();
    if singles.is_empty() {
        return false;
    }
    // union over single-site rules of the graphs on spins, per context of
    // the other dependence sites; rules are compared on a common context
    let mut union: Vec<Offset> = Vec::new();
    for r in &singles {
        for o in &r.deps {
            if !union.contains(o) {
                union.push(o.clone());
            }
        }
    }
    // union[0] is the origin since every single-site rule starts with it
    let nctx = q.pow((union.len() - 1) as u32);
    let mut vals = vec![0u8; union.len()];
    for ctx in 0..nctx {
        let mut adj = vec![vec![false; q]; q];
        for a in 0..q {
            decode_into((a + q * ctx) as u64, q, &mut vals);
            for r in &singles {
                let d = crate::lattice::encode_fast(r.deps.iter().map(|o| vals[union.iter().position(|u| u == o).unwrap()]), q);
                for b in 0..q {
                    if b != a && r.rate(q, d, b) > 0.0 {
                        adj[a][b] = true;
                    }
                }
            }
        }
        // strong connectivity on q nodes via transitive closure
        for k in 0..q {
            for i in 0..q {
                for j in 0..q {
                    if adj[i][k] && adj[k][j] {
                        adj[i][j] = true;
                    }
                }
            }
        }
        if (0..q).any(|i| (0..q).any(|j| i != j && !adj[i][j])) {
            return false;
        }
    }
    true
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::{make_cyclic, make_heat_bath, mix};
    use crate::gibbs::Potential;

    fn spec(pot: &Potential, n: usize) -> (Torus, Specification) {
        let t = Torus::line(n).unwrap();
        let s = Specification::new(pot, &t).unwrap();
        (t, s)
    }

    #[test]
    fn heat_bath_passes() {
        let (t, s) = spec(&Potential::ising(1, 1.0, 0.0, 0.5), 4);
        let rep = check_rate_conditions(&make_heat_bath(&s).unwrap(), &s, &t).unwrap();
        assert!(rep.all_passed(), "{rep:?}");
        assert!(rep.l1 > 0.0 && rep.l2 > 0.0 && rep.r3 > 0.0);
        assert_eq!(rep.beta_tail.last().unwrap().1, 0.0);
    }

    #[test]
    fn cyclic_and_mixture_pass() {
        let (t, s) = spec(&Potential::potts(3, 1, 1.0, 0.5), 5);
        let cy = make_cyclic(&s, 1.0).unwrap();
        assert!(check_rate_conditions(&cy, &s, &t).unwrap().all_passed());
        let m = mix(1.0, &make_heat_bath(&s).unwrap(), 1.0, &cy).unwrap();
        assert!(check_rate_conditions(&m, &s, &t).unwrap().all_passed());
    }

    #[test]
    fn zero_rule_fails_r6() {
        let (t, s) = spec(&Potential::ising(1, 1.0, 0.0, 0.5), 4);
        let mut hb = make_heat_bath(&s).unwrap();
        hb.rules[0].table.iter_mut().for_each(|v| *v = 0.0);
        let rep = check_rate_conditions(&hb, &s, &t).unwrap();
        assert!(!rep.get("R6").unwrap().passed);
        assert!(!rep.get("R5").unwrap().passed);
    }

    #[test]
    fn negative_rate_has_witness() {
        let (t, s) = spec(&Potential::ising(1, 1.0, 0.0, 0.5), 4);
        let mut hb = make_heat_bath(&s).unwrap();
        hb.rules[0].table[5] = -0.25;
        let rep = check_rate_conditions(&hb, &s, &t).unwrap();
        let r1 = rep.get("R1").unwrap();
        assert!(!r1.passed && !rep.get("R5").unwrap().passed);
        let w = r1.witness.as_ref().unwrap();
        assert_eq!(w.reevaluate(&hb), -0.25);
    }

    #[test]
    fn certificate_matches_exact_check() {
        let (_, s) = spec(&Potential::potts(3, 1, 1.0, 0.5), 5);
        assert!(single_site_certificate(&make_cyclic(&s, 1.0).unwrap()));
        assert!(single_site_certificate(&make_heat_bath(&s).unwrap()));
        let big = Torus::line(40).unwrap();
        let (r6, detail) = irreducible(&make_cyclic(&s, 1.0).unwrap(), &big).unwrap();
        assert!(r6 && detail.contains("certificate"));
    }
}
