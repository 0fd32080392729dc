//! Continuous-time kinetic Monte Carlo on tori, ensemble window statistics
//! and the attractor residual.

use std::fmt::Write as _;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::ctmc::ProbVector;
use crate::dynamics::{CompiledRates, RateFamily};
use crate::entropy::EmpiricalSource;
use crate::error::{Error, Result};
use crate::gibbs::Specification;
use crate::lattice::{decode_into, encode_fast, state_count, Configuration, Offset, Torus, Window};

/// Smallest pattern count entering the attractor residual.
pub const PATTERN_FLOOR: u64 = 30;
/// Tree updates between full rebuilds of the rate index.
const REBUILD_EVERY: u64 = 1 << 16;

/// Binary-indexed tree of nonnegative slot rates.
#[derive(Clone, Debug)]
struct Fenwick {
    tree: Vec<f64>,
    vals: Vec<f64>,
    updates: u64,
}

impl Fenwick {
    fn new(vals: Vec<f64>) -> Self {
        let mut f = Self { tree: Vec::new(), vals, updates: 0 };
        f.rebuild();
        f
    }

    fn rebuild(&mut self) {
        let n = self.vals.len();
        self.tree = vec![0.0; n + 1];
        for i in 0..n {
            self.tree[i + 1] += self.vals[i];
            let j = (i + 1) + ((i + 1) & (i + 1).wrapping_neg());
            if j <= n {
                let v = self.tree[i + 1];
                self.tree[j] += v;
            }
        }
        self.updates = 0;
    }

    fn set(&mut self, i: usize, v: f64) {
        let d = v - self.vals[i];
        if d == 0.0 {
            return;
        }
        self.vals[i] = v;
        let mut k = i + 1;
        while k < self.tree.len() {
            self.tree[k] += d;
            k += k & k.wrapping_neg();
        }
        self.updates += 1;
        if self.updates >= REBUILD_EVERY {
            self.rebuild();
        }
    }

    fn total(&self) -> f64 {
        let mut k = self.vals.len();
        let mut s = 0.0;
        while k > 0 {
            s += self.tree[k];
            k &= k - 1;
        }
        s
    }

    /// Slot i with prefix(i) <= u < prefix(i + 1), skipping zero slots
    /// reached through rounding.
    fn find(&self, mut u: f64) -> usize {
        let n = self.vals.len();
        let mut pos = 0;
        let mut step = n.next_power_of_two();
        while step > 0 {
            let nxt = pos + step;
            if nxt <= n && self.tree[nxt] <= u {
                pos = nxt;
                u -= self.tree[nxt];
            }
            step >>= 1;
        }
        let mut i = pos.min(n - 1);
        if self.vals[i] == 0.0 {
            i = (i..n).chain((0..i).rev()).find(|&j| self.vals[j] > 0.0).unwrap_or(i);
        }
        i
    }
}

/// One applied update.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Event {
    pub t: f64,
    pub site: usize,
    pub spin: u8,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Trajectory {
    pub state: Configuration,
    pub events: Option<Vec<Event>>,
    pub n_events: u64,
    /// True if the process reached a state with zero total rate.
    pub absorbed: bool,
}

/// Gillespie sampler for a rate family on a torus.
#[derive(Clone, Debug)]
pub struct Simulator {
    rates: CompiledRates,
    torus: Torus,
    /// slots (rule, anchor) whose dependence set contains each site
    affected: Vec<Vec<u32>>,
    shape_vals: Vec<Vec<Vec<u8>>>,
}

impl Simulator {
    pub fn new(rates: &RateFamily, torus: &Torus) -> Result<Self> {
        if rates.sup_rate().is_nan() || rates.rules.iter().any(|r| r.table.iter().any(|&v| v < 0.0 || !v.is_finite())) {
            return Err(Error::Contract("rates must be finite and nonnegative".into()));
        }
        let compiled = rates.compile(torus)?;
        let n = torus.n_sites();
        let mut affected = vec![Vec::new(); n];
        for (k, r) in compiled.rules.iter().enumerate() {
            for a in 0..n {
                for &s in r.deps(a) {
                    let slot = (k * n + a) as u32;
                    if !affected[s].contains(&slot) {
                        affected[s].push(slot);
                    }
                }
            }
        }
        let shape_vals = compiled
            .rules
            .iter()
            .map(|r| {
                (0..r.qs)
                    .map(|x| {
                        let mut v = vec![0u8; r.n_shape];
                        decode_into(x as u64, rates.q, &mut v);
                        v
                    })
                    .collect()
            })
            .collect();
        Ok(Self { rates: compiled, torus: torus.clone(), affected, shape_vals })
    }

    pub fn torus(&self) -> &Torus {
        &self.torus
    }

    pub fn q(&self) -> usize {
        self.rates.q
    }

    fn slot_rate(&self, slot: usize, spins: &[u8]) -> f64 {
        let n = self.torus.n_sites();
        let r = &self.rates.rules[slot / n];
        r.rates(slot % n, spins, self.rates.q).iter().sum()
    }

    fn index(&self, spins: &[u8]) -> Fenwick {
        let n = self.torus.n_sites();
        Fenwick::new((0..self.rates.rules.len() * n).map(|s| self.slot_rate(s, spins)).collect())
    }

    /// Advances `spins` from time `t0` to `t1`, calling `observe(dt, spins)`
    /// before each jump and at the end with the holding time spent.
    fn advance(
        &self,
        spins: &mut [u8],
        tree: &mut Fenwick,
        t0: f64,
        t1: f64,
        rng: &mut ChaCha8Rng,
        log: &mut Option<Vec<Event>>,
        mut observe: impl FnMut(f64, &[u8]),
    ) -> (u64, bool) {
        let n = self.torus.n_sites();
        let q = self.rates.q;
        let mut t = t0;
        let mut count = 0u64;
        let mut touched: Vec<u32> = Vec::new();
        loop {
            let total = tree.total();
            if !(total > 0.0) {
                observe(t1 - t, spins);
                return (count, true);
            }
            let u: f64 = rng.gen();
            let wait = -(1.0 - u).ln() / total;
            if t + wait > t1 {
                observe(t1 - t, spins);
                return (count, false);
            }
            observe(wait, spins);
            t += wait;
            let slot = tree.find(rng.gen::<f64>() * total);
            let rule = &self.rates.rules[slot / n];
            let anchor = slot % n;
            let rs = rule.rates(anchor, spins, q);
            let mut v = rng.gen::<f64>() * tree.vals[slot];
            let mut pick = rs.iter().rposition(|&r| r > 0.0).unwrap_or(0);
            for (x, &r) in rs.iter().enumerate() {
                if r > 0.0 && v < r {
                    pick = x;
                    break;
                }
                v -= r;
            }
            touched.clear();
            for (&s, &val) in rule.shape_sites(anchor).iter().zip(&self.shape_vals[slot / n][pick]) {
                if spins[s] != val {
                    spins[s] = val;
                    if let Some(ev) = log.as_mut() {
                        ev.push(Event { t, site: s, spin: val });
                    }
                    for &a in &self.affected[s] {
                        if !touched.contains(&a) {
                            touched.push(a);
                        }
                    }
                }
            }
            for &a in &touched {
                tree.set(a as usize, self.slot_rate(a as usize, spins));
            }
            count += 1;
        }
    }

    /// Samples a trajectory on [0, horizon] from `eta0`.
    pub fn run(&self, eta0: &Configuration, horizon: f64, rng: &mut ChaCha8Rng, log_events: bool) -> Result<Trajectory> {
        self.check_start(eta0, horizon)?;
        let mut spins = eta0.spins.clone();
        let mut tree = self.index(&spins);
        let mut log = log_events.then(Vec::new);
        let (n_events, absorbed) = self.advance(&mut spins, &mut tree, 0.0, horizon, rng, &mut log, |_, _| {});
        Ok(Trajectory { state: Configuration { spins, q: self.q() }, events: log, n_events, absorbed })
    }

    /// Time-weighted occupation of every torus state over [0, horizon].
    pub fn occupation(&self, eta0: &Configuration, horizon: f64, rng: &mut ChaCha8Rng) -> Result<(ProbVector, u64)> {
        self.check_start(eta0, horizon)?;
        if !(horizon > 0.0) {
            return Err(Error::Domain("occupation needs a positive horizon".into()));
        }
        let total = state_count(self.q(), self.torus.n_sites())?;
        if total > 1 << 24 {
            return Err(Error::Capacity(format!("{total} states")));
        }
        let mut occ = vec![0.0; total as usize];
        let mut spins = eta0.spins.clone();
        let mut tree = self.index(&spins);
        let q = self.q();
        let (n_events, _) = self.advance(&mut spins, &mut tree, 0.0, horizon, rng, &mut None, |dt, s| {
            occ[encode_fast(s.iter().copied(), q)] += dt;
        });
        Ok((ProbVector::from_weights(occ)?, n_events))
    }

    fn check_start(&self, eta0: &Configuration, horizon: f64) -> Result<()> {
        if !(horizon >= 0.0) || !horizon.is_finite() {
            return Err(Error::Domain(format!("horizon {horizon} must be finite and nonnegative")));
        }
        if eta0.spins.len() != self.torus.n_sites() || eta0.q != self.q() {
            return Err(Error::Domain("initial configuration does not match the torus".into()));
        }
        Ok(())
    }
}

/// Law of the initial configuration of each replica.
#[derive(Clone, Debug, PartialEq)]
pub enum InitialLaw {
    Point(Configuration),
    /// I.i.d. spins with this one-site law.
    Product(Vec<f64>),
    /// Law over all torus states, sampled by inversion.
    Exact(ProbVector),
}

impl InitialLaw {
    pub fn sample(&self, torus: &Torus, q: usize, rng: &mut ChaCha8Rng) -> Result<Configuration> {
        let n = torus.n_sites();
        match self {
            InitialLaw::Point(c) => Ok(c.clone()),
            InitialLaw::Product(law) => {
                let cdf = cumulative(law);
                Ok(Configuration { spins: (0..n).map(|_| invert(&cdf, rng.gen()) as u8).collect(), q })
            }
            InitialLaw::Exact(p) => {
                let cdf = cumulative(p.as_slice());
                let mut spins = vec![0u8; n];
                decode_into(invert(&cdf, rng.gen()) as u64, q, &mut spins);
                Ok(Configuration { spins, q })
            }
        }
    }

    fn validate(&self, torus: &Torus, q: usize) -> Result<()> {
        match self {
            InitialLaw::Point(c) if c.spins.len() != torus.n_sites() || c.q != q => Err(Error::Domain("initial configuration does not match the torus".into())),
            InitialLaw::Product(law) if law.len() != q || ProbVector::new(law.clone()).is_err() => {
                Err(Error::Domain("one-site law must be a probability vector over q spins".into()))
            }
            InitialLaw::Exact(p) if p.len() as u64 != state_count(q, torus.n_sites())? => Err(Error::Domain("initial law must cover all torus states".into())),
            _ => Ok(()),
        }
    }
}

fn cumulative(p: &[f64]) -> Vec<f64> {
    let mut acc = 0.0;
    p.iter()
        .map(|&v| {
            acc += v;
            acc
        })
        .collect()
}

fn invert(cdf: &[f64], u: f64) -> usize {
    let u = u * cdf[cdf.len() - 1];
    cdf.partition_point(|&c| c <= u).min(cdf.len() - 1)
}

/// A batch of independent replicas.
#[derive(Clone, Debug)]
pub struct SimulationRun {
    pub rates: RateFamily,
    pub torus: Torus,
    pub initial: InitialLaw,
    pub horizon: f64,
    pub replicas: usize,
    pub seed: u64,
    pub log_events: bool,
}

impl SimulationRun {
    /// Generator for one replica: the root seed with the replica as stream.
    pub fn replica_rng(&self, replica: usize) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(replica as u64);
        rng
    }
}

/// One trajectory of replica 0 from `eta0` up to the run's horizon.
pub fn gillespie_run(run: &SimulationRun, eta0: &Configuration) -> Result<Trajectory> {
    let sim = Simulator::new(&run.rates, &run.torus)?;
    sim.run(eta0, run.horizon, &mut run.replica_rng(0), run.log_events)
}

/// Window configuration counts over replicas, optionally pooled over all
/// translates of the window.
#[derive(Clone, Debug, PartialEq)]
pub struct EmpiricalMarginal {
    pub t: f64,
    pub q: usize,
    pub window: Vec<Offset>,
    pub anchor: usize,
    pub counts: Vec<u64>,
    pub replicas: usize,
    pub pooled: bool,
}

impl EmpiricalMarginal {
    pub fn samples(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn frequencies(&self) -> Result<ProbVector> {
        ProbVector::from_weights(self.counts.iter().map(|&c| c as f64).collect())
    }

    /// Frequencies as a (non-exact) marginal source on the anchored window.
    pub fn to_source(&self, torus: &Torus) -> Result<EmpiricalSource> {
        let w = Window::from_offsets(torus, self.anchor, &self.window)?;
        EmpiricalSource::new(self.q, w.sites().to_vec(), self.frequencies()?.into_vec())
    }
}

/// Ensemble statistics of one run at several times.
#[derive(Clone, Debug, PartialEq)]
pub struct Ensemble {
    pub marginals: Vec<EmpiricalMarginal>,
    /// events per replica up to the last time
    pub events: Vec<u64>,
    pub absorbed: usize,
}

/// Evolves every replica through the sorted `times`, counting the window
/// `anchor + offs` (or every translate of it if `pool`).
pub fn ensemble_window_marginals(run: &SimulationRun, offs: &[Offset], anchor: usize, times: &[f64], pool: bool) -> Result<Ensemble> {
    if run.replicas == 0 {
        return Err(Error::Domain("at least one replica required".into()));
    }
    if times.windows(2).any(|w| w[1] < w[0]) || times.iter().any(|t| !(*t >= 0.0) || !t.is_finite()) {
        return Err(Error::Domain("times must be finite, nonnegative and sorted".into()));
    }
    let q = run.rates.q;
    run.initial.validate(&run.torus, q)?;
    let sim = Simulator::new(&run.rates, &run.torus)?;
    let torus = &run.torus;
    let cells = state_count(q, offs.len())? as usize;
    if cells > 1 << 24 {
        return Err(Error::Capacity(format!("window table of {cells} cells")));
    }
    let anchors: Vec<usize> = if pool { (0..torus.n_sites()).collect() } else { vec![anchor] };
    let sites: Vec<Vec<usize>> = anchors
        .iter()
        .map(|&a| Window::from_offsets(torus, a, offs).map(|w| w.sites().to_vec()))
        .collect::<Result<_>>()?;
    let per: Vec<Result<(Vec<Vec<u32>>, u64, bool)>> = (0..run.replicas)
        .into_par_iter()
        .map(|k| {
            let mut rng = run.replica_rng(k);
            let eta0 = run.initial.sample(torus, q, &mut rng)?;
            let mut spins = eta0.spins;
            let mut tree = sim.index(&spins);
            let mut now = 0.0;
            let mut events = 0;
            let mut absorbed = false;
            let mut seen = Vec::with_capacity(times.len());
            for &t in times {
                let (e, a) = sim.advance(&mut spins, &mut tree, now, t, &mut rng, &mut None, |_, _| {});
                events += e;
                absorbed |= a;
                now = t;
                seen.push(sites.iter().map(|w| encode_fast(w.iter().map(|&s| spins[s]), q) as u32).collect());
            }
            Ok((seen, events, absorbed))
        })
        .collect();
    let mut counts = vec![vec![0u64; cells]; times.len()];
    let mut events = Vec::with_capacity(run.replicas);
    let mut absorbed = 0;
    for r in per {
        let (seen, e, a) = r?;
        for (c, obs) in counts.iter_mut().zip(&seen) {
            for &i in obs {
                c[i as usize] += 1;
            }
        }
        events.push(e);
        absorbed += a as usize;
    }
    let marginals = times
        .iter()
        .zip(counts)
        .map(|(&t, counts)| EmpiricalMarginal { t, q, window: offs.to_vec(), anchor, counts, replicas: run.replicas, pooled: pool })
        .collect();
    Ok(Ensemble { marginals, events, absorbed })
}

/// Window counts at a single time `t`.
pub fn ensemble_window_marginal(run: &SimulationRun, w: &Window, t: f64) -> Result<EmpiricalMarginal> {
    let anchor = w.sites().first().copied().unwrap_or(0);
    let offs = offsets_from(&run.torus, anchor, w);
    let mut e = ensemble_window_marginals(run, &offs, anchor, &[t], false)?;
    Ok(e.marginals.remove(0))
}

fn offsets_from(torus: &Torus, anchor: usize, w: &Window) -> Vec<Offset> {
    let a = torus.coords(anchor);
    w.sites()
        .iter()
        .map(|&s| {
            torus
                .coords(s)
                .iter()
                .zip(&a)
                .zip(torus.sides())
                .map(|((&c, &o), &side)| {
                    let mut d = (c as i64 - o as i64).rem_euclid(side as i64);
                    if d > side as i64 / 2 {
                        d -= side as i64;
                    }
                    d
                })
                .collect()
        })
        .collect()
}

/// Largest cross-ratio defect
/// |nu(i|p) gamma_x(j|p) - nu(j|p) gamma_x(i|p)| over window sites x whose
/// dependence set lies in the window and boundary patterns p seen at least
/// `PATTERN_FLOOR` times.
pub fn attractor_residual(emp: &EmpiricalMarginal, spec: &Specification) -> Result<f64> {
    let q = emp.q;
    if spec.q() != q {
        return Err(Error::Contract("specification and samples disagree on q".into()));
    }
    let torus = spec.torus();
    let mut best: Option<f64> = None;
    let mut vals = vec![0u8; emp.window.len()];
    for (xi, x) in emp.window.iter().enumerate() {
        let nb = spec.dependence(std::slice::from_ref(x));
        let pos: Option<Vec<usize>> = nb.iter().map(|o| emp.window.iter().position(|w| w == o)).collect();
        let Some(pos) = pos else { continue };
        // counts[pattern][spin at x]
        let boundary = &pos[1..];
        let n_pat = q.pow(boundary.len() as u32);
        let mut table = vec![0u64; n_pat * q];
        for (idx, &c) in emp.counts.iter().enumerate() {
            if c == 0 {
                continue;
            }
            decode_into(idx as u64, q, &mut vals);
            let p = encode_fast(boundary.iter().map(|&k| vals[k]), q);
            table[p * q + vals[xi] as usize] += c;
        }
        let center = torus.center();
        let site = [center];
        let mut bvals = vec![0u8; nb.len()];
        for p in 0..n_pat {
            let row = &table[p * q..(p + 1) * q];
            let total: u64 = row.iter().sum();
            if total < PATTERN_FLOOR {
                continue;
            }
            decode_into((p * q) as u64, q, &mut bvals);
            let spins = spec.embed(center, &nb, &bvals);
            let gamma = spec.cond_dist(&site, &spins);
            let mut worst = 0.0f64;
            for i in 0..q {
                for j in 0..i {
                    let (ni, nj) = (row[i] as f64 / total as f64, row[j] as f64 / total as f64);
                    worst = worst.max((ni * gamma[j] - nj * gamma[i]).abs());
                }
            }
            best = Some(best.map_or(worst, |b: f64| b.max(worst)));
        }
    }
    best.ok_or_else(|| Error::InsufficientData(format!("no boundary pattern reaches {PATTERN_FLOOR} samples")))
}

/// Pearson statistic of the 2x2 table of consecutive replica pairs
/// classified by event count above or at/below the median; chi-square with
/// one degree of freedom under independence.
pub fn replica_independence_chi2(events: &[u64]) -> Result<f64> {
    if events.len() < 8 {
        return Err(Error::InsufficientData("need at least 8 replicas".into()));
    }
    let mut sorted = events.to_vec();
    sorted.sort_unstable();
    let med = sorted[sorted.len() / 2];
    let hi = |v: u64| (v > med) as usize;
    let mut table = [[0f64; 2]; 2];
    for pair in events.chunks_exact(2) {
        table[hi(pair[0])][hi(pair[1])] += 1.0;
    }
    let n: f64 = table.iter().flatten().sum();
    let rows = [table[0][0] + table[0][1], table[1][0] + table[1][1]];
    let cols = [table[0][0] + table[1][0], table[0][1] + table[1][1]];
    let mut chi = 0.0;
    for i in 0..2 {
        for j in 0..2 {
            let e = rows[i] * cols[j] / n;
            if e > 0.0 {
                chi += (table[i][j] - e).powi(2) / e;
            }
        }
    }
    Ok(chi)
}

/// Event log as CSV with header `time,site,spin`.
pub fn events_csv(events: &[Event]) -> String {
    let mut out = String::from("time,site,spin\n");
    for e in events {
        let _ = writeln!(out, "{:.16e},{},{}", e.t, e.site, e.spin);
    }
    out
}

/// Ensemble counts as CSV with header `t,window_config,count`.
pub fn ensemble_csv(marginals: &[EmpiricalMarginal]) -> String {
    let mut out = String::from("t,window_config,count\n");
    for m in marginals {
        for (i, &c) in m.counts.iter().enumerate() {
            let _ = writeln!(out, "{:.16e},{i},{c}", m.t);
        }
    }
    out
}
